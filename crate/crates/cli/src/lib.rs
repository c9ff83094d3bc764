//! Command-line orchestration for `neuron-explain`: run configuration,
//! run records, the per-command pipelines and the static HTML report.

pub mod commands;
pub mod config;
pub mod record;
pub mod report;

use std::fmt;

pub use config::{ConfigArgs, RunConfig};
pub use record::RunRecord;

/// Bad invocation or missing input; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// 2 for usage problems and missing inputs, 1 for everything else.
pub fn exit_code_for(err: &anyhow::Error) -> u8 {
    use neuron_explain::Error as E;
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::MissingFixture { .. }
                | E::MissingFile(_)
                | E::InvalidParameter(_)
                | E::SchemaVersion { .. }
                | E::UnsupportedArchitecture(_)
                | E::UnknownLayer(_)
                | E::InvalidNeuron { .. }
                | E::ClassOutOfRange { .. }
                | E::EmptyClassName
                | E::Unlabeled
                | E::NoLinearHead => 2,
                _ => 1,
            };
        }
    }
    1
}
