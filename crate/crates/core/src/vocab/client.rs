use std::path::PathBuf;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::concept::{merge_vocabulary, Concept, Provenance, Vocabulary};
use super::prompt::{build_prompt, parse_reply, PROMPT_TEMPLATE};
use crate::error::{Error, Result};

pub const ENV_ENDPOINT: &str = "NEURON_EXPLAIN_LLM_ENDPOINT";
pub const ENV_TOKEN: &str = "NEURON_EXPLAIN_LLM_TOKEN";
pub const ENV_MODEL: &str = "NEURON_EXPLAIN_LLM_MODEL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmMode {
    /// Query the endpoint.
    Live,
    /// Read recorded replies; never touches the network.
    Fixture,
    /// Query the endpoint and save each raw reply as a fixture.
    Record,
}

/// File-name slug of a class name: lowercase alphanumerics joined by `-`.
pub fn class_slug(class_name: &str) -> String {
    let mut out = String::new();
    for c in class_name.trim().chars() {
        if c.is_alphanumeric() {
            out.extend(c.to_lowercase());
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
    }
    out.trim_end_matches('-').to_string()
}

/// Chat-completion client with an offline fixture mode.
#[derive(Debug, Clone)]
pub struct LlmClient {
    pub mode: LlmMode,
    pub endpoint: Option<String>,
    pub token: Option<String>,
    pub model: String,
    pub fixture_dir: Option<PathBuf>,
    pub request_timeout: Duration,
    pub retry_budget: u32,
    pub max_descriptors: usize,
}

impl LlmClient {
    pub fn fixtures(dir: impl Into<PathBuf>) -> Self {
        LlmClient {
            mode: LlmMode::Fixture,
            endpoint: None,
            token: None,
            model: "fixture".into(),
            fixture_dir: Some(dir.into()),
            request_timeout: Duration::from_secs(60),
            retry_budget: 3,
            max_descriptors: 20,
        }
    }

    pub fn live(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        LlmClient {
            mode: LlmMode::Live,
            endpoint: Some(endpoint.into()),
            model: model.into(),
            fixture_dir: None,
            ..Self::fixtures("")
        }
    }

    /// Live client configured from the environment.
    pub fn from_env() -> Result<Self> {
        let endpoint = std::env::var(ENV_ENDPOINT)
            .map_err(|_| Error::InvalidParameter(format!("{ENV_ENDPOINT} is not set")))?;
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "gpt-3.5-turbo".into());
        let mut c = Self::live(endpoint, model);
        c.token = std::env::var(ENV_TOKEN).ok();
        Ok(c)
    }

    fn fixture_path(&self, class_name: &str) -> Result<PathBuf> {
        let dir = self
            .fixture_dir
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("no fixture directory configured".into()))?;
        Ok(dir.join(format!("{}.txt", class_slug(class_name))))
    }

    fn post(&self, prompt: &str) -> Result<String> {
        let endpoint = self
            .endpoint
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("no LLM endpoint configured".into()))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.request_timeout))
            .build()
            .into();
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": 0,
        });
        let attempts = self.retry_budget.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(200 << attempt.min(5)));
            }
            let mut req = agent.post(endpoint);
            if let Some(token) = &self.token {
                req = req.header("Authorization", format!("Bearer {token}"));
            }
            match req.send_json(&body) {
                Ok(mut resp) => match resp.body_mut().read_json::<serde_json::Value>() {
                    Ok(v) => {
                        if let Some(text) = v.pointer("/choices/0/message/content").and_then(|t| t.as_str()) {
                            return Ok(text.to_string());
                        }
                        last = format!("reply without choices[0].message.content: {v}");
                    }
                    Err(e) => last = e.to_string(),
                },
                Err(e) => last = e.to_string(),
            }
            log::warn!("LLM request attempt {} of {attempts} failed: {last}", attempt + 1);
        }
        Err(Error::LlmTimeout {
            attempts,
            message: last,
        })
    }

    /// Raw reply for one class.
    pub fn query_raw(&self, class_name: &str) -> Result<String> {
        let prompt = build_prompt(class_name)?;
        match self.mode {
            LlmMode::Fixture => {
                let path = self.fixture_path(class_name)?;
                std::fs::read_to_string(&path).map_err(|_| Error::MissingFixture {
                    class: class_name.trim().to_string(),
                    path,
                })
            }
            LlmMode::Live => self.post(&prompt),
            LlmMode::Record => {
                let reply = self.post(&prompt)?;
                crate::fsutil::write_atomic(&self.fixture_path(class_name)?, reply.as_bytes())?;
                Ok(reply)
            }
        }
    }

    /// Descriptors for one class, at most `max_descriptors`, first listed
    /// kept.
    pub fn query_descriptors(&self, class_name: &str) -> Result<Vec<Concept>> {
        let raw = self.query_raw(class_name)?;
        let items = parse_reply(&raw);
        if items.is_empty() {
            return Err(Error::UnparseableReply {
                class: class_name.trim().to_string(),
                raw,
            });
        }
        Ok(items
            .into_iter()
            .take(self.max_descriptors)
            .map(|text| Concept::new(text, class_name.trim()))
            .collect())
    }
}

/// Options for [`build_vocabulary`].
#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub dataset_tag: String,
    /// Also add each class name as a concept.
    pub include_class_names: bool,
    /// Upper bound on concurrent requests.
    pub max_concurrency: usize,
    /// Omit timestamps so repeated builds are byte-identical.
    pub canonical: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            dataset_tag: String::new(),
            include_class_names: false,
            max_concurrency: 4,
            canonical: false,
        }
    }
}

/// Queries every class and merges the replies in class order.
pub fn build_vocabulary(client: &LlmClient, class_names: &[String], options: &BuildOptions) -> Result<Vocabulary> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.max_concurrency.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let lists: Vec<Vec<Concept>> = pool.install(|| {
        class_names
            .par_iter()
            .map(|c| {
                let mut list = client.query_descriptors(c)?;
                if options.include_class_names {
                    list.insert(0, Concept::new(c.trim(), c.trim()));
                }
                Ok(list)
            })
            .collect::<Result<_>>()
    })?;
    let concepts = merge_vocabulary(&lists)?;
    let provenance = Provenance {
        llm_model_id: client.model.clone(),
        prompt_template: PROMPT_TEMPLATE.to_string(),
        created_at: (!options.canonical).then(now_rfc3339),
    };
    Vocabulary::new(options.dataset_tag.clone(), provenance, concepts)
}

/// Seconds since the epoch rendered as an RFC 3339 UTC timestamp.
pub fn now_rfc3339() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let days = secs / 86_400;
    let rem = secs % 86_400;
    // Civil-from-days (proleptic Gregorian).
    let z = days as i64 + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = doy - (153 * mp + 2) / 5 + 1;
    let m = if mp < 10 { mp + 3 } else { mp - 9 };
    let y = yoe + era * 400 + (m <= 2) as i64;
    format!(
        "{y:04}-{m:02}-{d:02}T{:02}:{:02}:{:02}Z",
        rem / 3600,
        (rem % 3600) / 60,
        rem % 60
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_dir(replies: &[(&str, &str)]) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for (class, reply) in replies {
            std::fs::write(dir.path().join(format!("{}.txt", class_slug(class))), reply).unwrap();
        }
        dir
    }

    #[test]
    fn slugs() {
        assert_eq!(class_slug("greenhouse"), "greenhouse");
        assert_eq!(class_slug(" Arctic fox "), "arctic-fox");
        assert_eq!(class_slug("ice/rink, outdoor"), "ice-rink-outdoor");
    }

    #[test]
    fn fixture_reply_gives_concepts_tagged_with_class() {
        let dir = fixture_dir(&[("greenhouse", "- glass walls\n- rows of plants")]);
        let client = LlmClient::fixtures(dir.path());
        let concepts = client.query_descriptors("greenhouse").unwrap();
        assert_eq!(concepts.len(), 2);
        assert!(concepts.iter().all(|c| c.source_classes == vec!["greenhouse"]));
    }

    #[test]
    fn greenhouse_descriptor_is_parsed_verbatim() {
        let dir = fixture_dir(&[("greenhouse", "1. a structure made of glass or transparent material")]);
        let concepts = LlmClient::fixtures(dir.path()).query_descriptors("greenhouse").unwrap();
        assert_eq!(concepts[0].text, "a structure made of glass or transparent material");
    }

    #[test]
    fn unparseable_reply_carries_raw_text() {
        let dir = fixture_dir(&[("x", "")]);
        let err = LlmClient::fixtures(dir.path()).query_descriptors("x").unwrap_err();
        assert!(matches!(err, Error::UnparseableReply { .. }));
    }

    #[test]
    fn missing_fixture_names_class() {
        let dir = fixture_dir(&[]);
        let err = LlmClient::fixtures(dir.path()).query_descriptors("tiger cat").unwrap_err();
        assert!(err.to_string().contains("tiger cat"));
    }

    #[test]
    fn descriptors_capped_first_listed_kept() {
        let reply: String = (0..30).map(|i| format!("- item {i}\n")).collect();
        let dir = fixture_dir(&[("c", &reply)]);
        let concepts = LlmClient::fixtures(dir.path()).query_descriptors("c").unwrap();
        assert_eq!(concepts.len(), 20);
        assert_eq!(concepts[0].text, "item 0");
        assert_eq!(concepts[19].text, "item 19");
    }

    #[test]
    fn live_mode_network_failure_exhausts_retries() {
        // Port 9 on localhost refuses connections.
        let mut client = LlmClient::live("http://127.0.0.1:9/v1/chat/completions", "m");
        client.retry_budget = 2;
        client.request_timeout = Duration::from_secs(2);
        let err = client.query_descriptors("greenhouse").unwrap_err();
        assert!(matches!(err, Error::LlmTimeout { attempts: 2, .. }), "{err}");
    }

    #[test]
    fn build_is_deterministic_in_class_order() {
        let dir = fixture_dir(&[("a", "- red\n- Blue"), ("b", "- blue.\n- green"), ("c", "1. red\n2. yellow")]);
        let client = LlmClient::fixtures(dir.path());
        let classes: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let opts = BuildOptions { canonical: true, ..Default::default() };
        let v = build_vocabulary(&client, &classes, &opts).unwrap();
        let texts: Vec<&str> = v.concepts.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts, vec!["red", "Blue", "green", "yellow"]);
        assert_eq!(v.concepts[1].source_classes, vec!["a", "b"]);
        assert_eq!(v.provenance.created_at, None);
        assert_eq!(v, build_vocabulary(&client, &classes, &opts).unwrap());
        let with_names = build_vocabulary(&client, &classes, &BuildOptions { include_class_names: true, ..opts }).unwrap();
        assert_eq!(with_names.concepts[0].text, "a");
    }

    #[test]
    fn timestamp_shape() {
        let t = now_rfc3339();
        assert_eq!(t.len(), 20);
        assert!(t.ends_with('Z'));
    }
}
