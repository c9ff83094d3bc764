//! Unit importance: category accuracy drops under ablation, layer-wide
//! drop rankings and head-weight unit selection.

mod accuracy;
mod plot;
mod report;

pub use accuracy::{category_accuracy, category_accuracy_on, CategoryAccuracy, EvalSet, EvalSubset};
pub use plot::{drop_panels_svg, sorted_drop_svg};
pub use report::{
    ablation_report, ablation_report_with_baseline, category_units, importance_explanation_join, layer_ablation,
    layer_drop_ranking, AblationReport, JoinedEntry, JoinedReport, LayerDropRanking, MaxDrop, RankEntry, UnitWeight,
};
