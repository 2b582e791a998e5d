//! Prediction collection from chat-completions HTTP endpoints.
//!
//! Responses are cached on disk keyed by a hash of (model id, prompt), so a
//! rerun over a warm cache makes no network calls and writes the same log.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::{Dataset, PredictionRecord, QuestionRecord};
use crate::jsonl;

/// Few-shot template shipped with the crate.
pub const DEFAULT_TEMPLATE: &str = include_str!("../data/prompt_mmlu_5shot.txt");
pub const DEFAULT_FEW_SHOT: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointSpec {
    pub model_id: String,
    /// Base URL; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    /// Model name sent in the request body. Defaults to `model_id`.
    #[serde(default)]
    pub api_model: Option<String>,
    /// Environment variable holding a bearer token.
    #[serde(default)]
    pub token_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_concurrency")]
    pub max_concurrent: usize,
    /// Path of a prompt template file; the built-in template when absent.
    #[serde(default)]
    pub template: Option<PathBuf>,
    #[serde(default = "default_few_shot")]
    pub few_shot: usize,
    #[serde(default = "default_backoff")]
    pub backoff_base_ms: u64,
}

fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    3
}
fn default_concurrency() -> usize {
    4
}
fn default_few_shot() -> usize {
    DEFAULT_FEW_SHOT
}
fn default_backoff() -> u64 {
    500
}

impl EndpointSpec {
    pub fn new(model_id: impl Into<String>, base_url: impl Into<String>) -> Self {
        EndpointSpec {
            model_id: model_id.into(),
            base_url: base_url.into(),
            api_model: None,
            token_env: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            max_concurrent: default_concurrency(),
            template: None,
            few_shot: DEFAULT_FEW_SHOT,
            backoff_base_ms: default_backoff(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("endpoint {}: {m}", self.model_id)));
        if self.model_id.is_empty() {
            return Err(Error::Config("endpoint with empty model_id".into()));
        }
        if !(self.timeout_secs > 0.0) || !self.timeout_secs.is_finite() {
            return bad("timeout_secs must be > 0".into());
        }
        if self.max_concurrent < 1 {
            return bad("max_concurrent must be >= 1".into());
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return bad(format!("base_url {:?} is not an http(s) URL", self.base_url));
        }
        Ok(())
    }

    fn template_text(&self) -> Result<String> {
        match &self.template {
            None => Ok(DEFAULT_TEMPLATE.to_string()),
            Some(p) => fs::read_to_string(p).map_err(|source| Error::Open {
                path: p.clone(),
                source,
            }),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EndpointFile {
    #[serde(default)]
    endpoint: Vec<EndpointSpec>,
}

/// Reads `[[endpoint]]` tables from a TOML file.
pub fn load_endpoints(path: &Path) -> Result<Vec<EndpointSpec>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Open {
        path: path.to_path_buf(),
        source,
    })?;
    let file: EndpointFile =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if file.endpoint.is_empty() {
        return Err(Error::Config(format!("{}: no [[endpoint]] entries", path.display())));
    }
    for e in &file.endpoint {
        e.validate()?;
    }
    Ok(file.endpoint)
}

fn format_question(q: &QuestionRecord) -> Result<(String, String)> {
    let text = q.question.as_deref().ok_or_else(|| {
        Error::Input(format!(
            "question {}/{} has no text to prompt with",
            q.subject_id, q.question_id
        ))
    })?;
    let mut choices = String::new();
    for (i, label) in q.choices.iter().enumerate() {
        let body = q.choice_texts.as_ref().map_or("", |t| t[i].as_str());
        choices.push_str(&format!("{label}. {body}\n"));
    }
    Ok((text.to_string(), choices.trim_end().to_string()))
}

/// Fills `{subject}`, `{examples}`, `{question}` and `{choices}`. Examples
/// are the first `k` other validation questions of the subject, with answers.
pub fn build_prompt(template: &str, dataset: &Dataset, q: &QuestionRecord, k: usize) -> Result<String> {
    let mut examples = String::new();
    if let Some(qs) = dataset.subject(&q.subject_id) {
        for ex in qs
            .validation
            .iter()
            .filter(|e| e.question_id != q.question_id)
            .take(k)
        {
            let (text, choices) = format_question(ex)?;
            examples.push_str(&format!("{text}\n{choices}\nAnswer: {}\n\n", ex.correct_choice));
        }
    }
    let (text, choices) = format_question(q)?;
    Ok(template
        .replace("{subject}", &q.subject_id.replace('_', " "))
        .replace("{examples}", &examples)
        .replace("{question}", &text)
        .replace("{choices}", &choices))
}

/// The first choice label standing alone in `response` (not inside a
/// longer word); otherwise the label whose choice text is the longest
/// exact substring of the response; otherwise `None`.
pub fn extract_choice(response: &str, q: &QuestionRecord) -> Option<String> {
    let is_word = |c: char| c.is_alphanumeric() || c == '_';
    let mut best: Option<(usize, &String)> = None;
    for label in &q.choices {
        for (pos, _) in response.match_indices(label.as_str()) {
            let before = response[..pos].chars().next_back();
            let after = response[pos + label.len()..].chars().next();
            if before.is_none_or(|c| !is_word(c)) && after.is_none_or(|c| !is_word(c)) {
                if best.is_none_or(|(p, _)| pos < p) {
                    best = Some((pos, label));
                }
                break;
            }
        }
    }
    if let Some((_, label)) = best {
        return Some(label.clone());
    }
    let texts = q.choice_texts.as_ref()?;
    texts
        .iter()
        .zip(&q.choices)
        .filter(|(t, _)| !t.is_empty() && response.contains(t.as_str()))
        .max_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| b.1.cmp(a.1)))
        .map(|(_, label)| label.clone())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportError {
    pub message: String,
    pub transient: bool,
    pub retry_after: Option<Duration>,
}

/// Something that can answer a prompt on behalf of an endpoint.
pub trait ChatTransport: Sync {
    fn complete(&self, endpoint: &EndpointSpec, prompt: &str) -> std::result::Result<String, TransportError>;
}

/// Chat-completions over HTTP: POST JSON with temperature 0, bearer auth.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new() -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| Error::Http {
                endpoint: "-".into(),
                message: e.to_string(),
            })?;
        Ok(HttpTransport { client })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

impl ChatTransport for HttpTransport {
    fn complete(&self, endpoint: &EndpointSpec, prompt: &str) -> std::result::Result<String, TransportError> {
        let url = format!("{}/chat/completions", endpoint.base_url.trim_end_matches('/'));
        let body = serde_json::json!({
            "model": endpoint.api_model.as_deref().unwrap_or(&endpoint.model_id),
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        });
        let mut req = self
            .client
            .post(&url)
            .timeout(Duration::from_secs_f64(endpoint.timeout_secs))
            .json(&body);
        if let Some(var) = &endpoint.token_env {
            if let Ok(token) = std::env::var(var) {
                req = req.bearer_auth(token);
            }
        }
        let resp = req.send().map_err(|e| TransportError {
            message: e.to_string(),
            transient: e.is_timeout() || e.is_connect(),
            retry_after: None,
        })?;
        let status = resp.status();
        if !status.is_success() {
            let retry_after = resp
                .headers()
                .get(reqwest::header::RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<f64>().ok())
                .map(Duration::from_secs_f64);
            return Err(TransportError {
                message: format!("HTTP {status}"),
                transient: status.as_u16() == 429 || status.is_server_error(),
                retry_after,
            });
        }
        let parsed: ChatResponse = resp.json().map_err(|e| TransportError {
            message: format!("bad response body: {e}"),
            transient: false,
            retry_after: None,
        })?;
        Ok(parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default())
    }
}

pub fn cache_key(model_id: &str, prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update(model_id.as_bytes());
    h.update([0u8]);
    h.update(prompt.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    model_id: String,
    response: String,
}

fn cache_read(dir: &Path, key: &str) -> Option<String> {
    let text = fs::read_to_string(dir.join(format!("{key}.json"))).ok()?;
    serde_json::from_str::<CacheEntry>(&text).ok().map(|e| e.response)
}

fn cache_write(dir: &Path, key: &str, entry: &CacheEntry) -> Result<()> {
    let target = dir.join(format!("{key}.json"));
    static SEQ: AtomicUsize = AtomicUsize::new(0);
    let seq = SEQ.fetch_add(1, Ordering::Relaxed);
    let tmp = dir.join(format!(".{key}.{}.{seq}.tmp", std::process::id()));
    let wrap = |source| Error::Write {
        path: target.clone(),
        source,
    };
    fs::write(&tmp, serde_json::to_vec(entry)?).map_err(wrap)?;
    fs::rename(&tmp, &target).map_err(wrap)
}

fn backoff_delay(endpoint: &EndpointSpec, attempt: u32, hint: Option<Duration>) -> Duration {
    let exp = Duration::from_millis(endpoint.backoff_base_ms.saturating_mul(1 << attempt.min(16)));
    hint.map_or(exp, |h| h.max(exp))
}

fn query_with_retries(
    transport: &dyn ChatTransport,
    endpoint: &EndpointSpec,
    prompt: &str,
) -> std::result::Result<String, TransportError> {
    let mut attempt = 0;
    loop {
        match transport.complete(endpoint, prompt) {
            Ok(r) => return Ok(r),
            Err(e) if e.transient && attempt < endpoint.max_retries => {
                let delay = backoff_delay(endpoint, attempt, e.retry_after);
                debug!(
                    "{}: {} (retry {} in {:?})",
                    endpoint.model_id,
                    e.message,
                    attempt + 1,
                    delay
                );
                thread::sleep(delay);
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CollectSummary {
    pub records: usize,
    pub network_calls: usize,
    pub cache_hits: usize,
    pub unanswered: usize,
    pub failed: usize,
}

/// Queries every endpoint on every question and writes a prediction log to
/// `out`. Failed or unanswerable questions are skipped with a warning.
pub fn collect_predictions(
    endpoints: &[EndpointSpec],
    dataset: &Dataset,
    cache_dir: &Path,
    out: &Path,
    transport: &dyn ChatTransport,
) -> Result<CollectSummary> {
    for e in endpoints {
        e.validate()?;
    }
    fs::create_dir_all(cache_dir).map_err(|source| Error::Write {
        path: cache_dir.to_path_buf(),
        source,
    })?;
    let questions: Vec<&QuestionRecord> = dataset.records().collect();
    let calls = AtomicUsize::new(0);
    let hits = AtomicUsize::new(0);
    let mut summary = CollectSummary::default();
    let mut records: BTreeMap<(String, String, String), PredictionRecord> = BTreeMap::new();

    for endpoint in endpoints {
        let template = endpoint.template_text()?;
        let prompts: Vec<String> = questions
            .iter()
            .map(|q| build_prompt(&template, dataset, q, endpoint.few_shot))
            .collect::<Result<_>>()?;
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<(usize, std::result::Result<String, String>)>> = Mutex::new(Vec::new());
        let workers = endpoint.max_concurrent.min(questions.len().max(1));
        thread::scope(|scope| -> Result<()> {
            let handles: Vec<_> = (0..workers)
                .map(|_| {
                    scope.spawn(|| -> Result<()> {
                        loop {
                            let i = next.fetch_add(1, Ordering::SeqCst);
                            let Some(prompt) = prompts.get(i) else { return Ok(()) };
                            let key = cache_key(&endpoint.model_id, prompt);
                            let outcome = if let Some(r) = cache_read(cache_dir, &key) {
                                hits.fetch_add(1, Ordering::SeqCst);
                                Ok(r)
                            } else {
                                calls.fetch_add(1, Ordering::SeqCst);
                                match query_with_retries(transport, endpoint, prompt) {
                                    Ok(r) => {
                                        cache_write(
                                            cache_dir,
                                            &key,
                                            &CacheEntry {
                                                model_id: endpoint.model_id.clone(),
                                                response: r.clone(),
                                            },
                                        )?;
                                        Ok(r)
                                    }
                                    Err(e) => Err(e.message),
                                }
                            };
                            results.lock().unwrap().push((i, outcome));
                        }
                    })
                })
                .collect();
            for h in handles {
                h.join().expect("collector worker panicked")?;
            }
            Ok(())
        })?;

        for (i, outcome) in results.into_inner().unwrap() {
            let q = questions[i];
            match outcome {
                Err(msg) => {
                    warn!(
                        "{}: giving up on {}/{}: {msg}",
                        endpoint.model_id, q.subject_id, q.question_id
                    );
                    summary.failed += 1;
                }
                Ok(response) => match extract_choice(&response, q) {
                    None => {
                        warn!(
                            "{}: no choice found in response to {}/{}",
                            endpoint.model_id, q.subject_id, q.question_id
                        );
                        summary.unanswered += 1;
                    }
                    Some(choice) => {
                        records.insert(
                            (endpoint.model_id.clone(), q.subject_id.clone(), q.question_id.clone()),
                            PredictionRecord {
                                model_id: endpoint.model_id.clone(),
                                subject_id: q.subject_id.clone(),
                                question_id: q.question_id.clone(),
                                predicted_choice: choice,
                                raw_response: Some(response),
                            },
                        );
                    }
                },
            }
        }
    }

    summary.records = records.len();
    summary.network_calls = calls.into_inner();
    summary.cache_hits = hits.into_inner();
    jsonl::write_records(out, records.values())?;
    Ok(summary)
}
