use std::collections::HashMap;
use std::time::Duration;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{Prf, TokenSeq};
use crate::llm::{map_ureq, LlmError, RetryPolicy};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding backend failed: {0}")]
    Backend(#[from] LlmError),
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("token {0:?} is outside the backend vocabulary")]
    UnknownToken(String),
    #[error("embedding backend misconfigured: {0}")]
    Config(String),
}

impl EmbedError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, EmbedError::Backend(e) if e.is_retriable())
    }
}

/// Produces one vector per token of a sequence. Backends may use the
/// whole sequence as context.
pub trait EmbeddingBackend: Send + Sync {
    fn backend_id(&self) -> String;
    fn dimension(&self) -> usize;
    fn embed(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>, EmbedError>;
}

/// One-hot vectors over a fixed vocabulary: distinct tokens are
/// orthogonal.
#[derive(Debug, Clone)]
pub struct OrthogonalEmbeddings {
    index: HashMap<String, usize>,
}

impl OrthogonalEmbeddings {
    pub fn new<I, S>(vocabulary: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut index = HashMap::new();
        for t in vocabulary {
            let next = index.len();
            index.entry(t.into()).or_insert(next);
        }
        OrthogonalEmbeddings { index }
    }
}

impl EmbeddingBackend for OrthogonalEmbeddings {
    fn backend_id(&self) -> String {
        format!("orthogonal-{}", self.index.len())
    }

    fn dimension(&self) -> usize {
        self.index.len()
    }

    fn embed(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        tokens
            .iter()
            .map(|t| {
                let k = *self.index.get(t).ok_or_else(|| EmbedError::UnknownToken(t.clone()))?;
                let mut v = vec![0.0; self.index.len()];
                v[k] = 1.0;
                Ok(v)
            })
            .collect()
    }
}

/// Deterministic vectors built from hashed character trigrams, so tokens
/// sharing spelling land close together. Identical tokens always get
/// identical vectors.
#[derive(Debug, Clone)]
pub struct HashedEmbeddings {
    dimension: usize,
    seed: u64,
}

impl HashedEmbeddings {
    pub fn new(dimension: usize, seed: u64) -> Self {
        HashedEmbeddings { dimension: dimension.max(1), seed }
    }

    fn feature(&self, gram: &str) -> Vec<f64> {
        let digest = crate::corpus::store::sha256_hex(gram.as_bytes());
        let h = u64::from_str_radix(&digest[..16], 16).expect("hex digest");
        let mut rng = ChaCha8Rng::seed_from_u64(h ^ self.seed);
        (0..self.dimension).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn token_vector(&self, token: &str) -> Vec<f64> {
        let padded: Vec<char> = format!("#{token}#").chars().collect();
        let mut v = self.feature(token);
        for w in padded.windows(3) {
            let g: String = w.iter().collect();
            for (a, b) in v.iter_mut().zip(self.feature(&g)) {
                *a += b;
            }
        }
        v
    }
}

impl EmbeddingBackend for HashedEmbeddings {
    fn backend_id(&self) -> String {
        format!("hashed-trigram-{}-{}", self.dimension, self.seed)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        Ok(tokens.iter().map(|t| self.token_vector(t)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    RemoteService,
    DeterministicTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub kind: EmbeddingKind,
    pub dimension: usize,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub seed: u64,
}

fn default_timeout() -> u64 {
    60
}

impl EmbeddingConfig {
    pub fn deterministic(dimension: usize) -> Self {
        EmbeddingConfig {
            kind: EmbeddingKind::DeterministicTest,
            dimension,
            endpoint: None,
            model: None,
            api_key_env: None,
            timeout_secs: default_timeout(),
            seed: 0,
        }
    }

    pub fn build(&self) -> Result<Box<dyn EmbeddingBackend>, EmbedError> {
        match self.kind {
            EmbeddingKind::DeterministicTest => Ok(Box::new(HashedEmbeddings::new(self.dimension, self.seed))),
            EmbeddingKind::RemoteService => Ok(Box::new(RemoteEmbeddings::new(self)?)),
        }
    }
}

/// OpenAI-compatible `/embeddings` endpoint. Tokens are embedded
/// independently, one batch per sequence.
pub struct RemoteEmbeddings {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    dimension: usize,
    retry: RetryPolicy,
}

impl RemoteEmbeddings {
    pub fn new(config: &EmbeddingConfig) -> Result<Self, EmbedError> {
        let endpoint = config.endpoint.clone().ok_or_else(|| EmbedError::Config("endpoint is required".into()))?;
        let model = config.model.clone().ok_or_else(|| EmbedError::Config("model is required".into()))?;
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| LlmError::MissingCredential(var.clone()))?),
            None => None,
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(RemoteEmbeddings {
            agent,
            endpoint,
            model,
            api_key,
            dimension: config.dimension,
            retry: RetryPolicy::default(),
        })
    }

    fn call(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(json!({ "model": self.model, "input": tokens })).map_err(map_ureq)?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(map_ureq)?;
        if status >= 400 {
            return Err(LlmError::Http { status, body });
        }
        let v: Value = serde_json::from_str(&body).map_err(|e| LlmError::BadResponse(e.to_string()))?;
        let data = v["data"].as_array().ok_or_else(|| LlmError::BadResponse("missing data array".into()))?;
        data.iter()
            .map(|d| {
                d["embedding"]
                    .as_array()
                    .and_then(|xs| xs.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
                    .ok_or_else(|| LlmError::BadResponse("embedding is not a number array".into()))
            })
            .collect()
    }
}

impl EmbeddingBackend for RemoteEmbeddings {
    fn backend_id(&self) -> String {
        format!("remote:{}", self.model)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        let out = self.retry.run(|| self.call(tokens))?;
        if out.len() != tokens.len() {
            return Err(LlmError::BadResponse(format!("{} embeddings for {} tokens", out.len(), tokens.len())).into());
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BertScoreOptions {
    /// Token weights; tokens absent from the map weigh 1.
    #[serde(default)]
    pub idf: Option<HashMap<String, f64>>,
    /// Rescale each score as `(x - b) / (1 - b)`.
    #[serde(default)]
    pub baseline: Option<f64>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn greedy(from: &[Vec<f64>], to: &[Vec<f64>], tokens: &[String], idf: Option<&HashMap<String, f64>>) -> f64 {
    let weight = |t: &String| idf.and_then(|m| m.get(t)).copied().unwrap_or(1.0);
    let mut num = 0.0;
    let mut den = 0.0;
    for (v, t) in from.iter().zip(tokens) {
        let best = to.iter().map(|u| cosine(v, u)).fold(f64::NEG_INFINITY, f64::max).clamp(0.0, 1.0);
        num += weight(t) * best;
        den += weight(t);
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Greedy soft alignment: recall averages, over reference tokens, the
/// best cosine similarity to any candidate token; precision is the
/// mirror image.
pub fn bertscore<T: Float>(
    candidate: &TokenSeq,
    reference: &TokenSeq,
    backend: &dyn EmbeddingBackend,
    options: &BertScoreOptions,
) -> Result<Prf<T>, EmbedError> {
    if candidate.is_empty() || reference.is_empty() {
        return Ok(Prf::degenerate());
    }
    let c = backend.embed(&candidate.tokens)?;
    let r = backend.embed(&reference.tokens)?;
    for v in c.iter().chain(&r) {
        if v.len() != backend.dimension() {
            return Err(EmbedError::DimensionMismatch(v.len(), backend.dimension()));
        }
    }
    let idf = options.idf.as_ref();
    let mut precision = greedy(&c, &r, &candidate.tokens, idf);
    let mut recall = greedy(&r, &c, &reference.tokens, idf);
    let rescale = |x: f64| match options.baseline {
        Some(b) if b < 1.0 => ((x - b) / (1.0 - b)).clamp(0.0, 1.0),
        _ => x,
    };
    precision = rescale(precision);
    recall = rescale(recall);
    let t = |x: f64| T::from(x).expect("finite score");
    Ok(Prf::new(t(precision), t(recall)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::normalize_tokenize;

    fn seq(s: &str) -> TokenSeq {
        normalize_tokenize(s)
    }

    #[test]
    fn orthogonal_fixture() {
        let backend = OrthogonalEmbeddings::new(["a", "b", "c"]);
        let p: Prf<f64> = bertscore(&seq("a c"), &seq("a b"), &backend, &BertScoreOptions::default()).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn identity_scores_one() {
        let backend = HashedEmbeddings::new(32, 7);
        let a = seq("small left pleural effusion");
        let p: Prf<f64> = bertscore(&a, &a, &backend, &BertScoreOptions::default()).unwrap();
        assert!((p.f1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_candidate_is_degenerate() {
        let backend = HashedEmbeddings::new(8, 0);
        let p: Prf<f64> = bertscore(&seq(""), &seq("a"), &backend, &BertScoreOptions::default()).unwrap();
        assert!(p.degenerate);
    }

    #[test]
    fn hashed_backend_is_deterministic_and_bounded() {
        let a = HashedEmbeddings::new(16, 3);
        let toks = seq("effusion effusions heart").tokens;
        assert_eq!(a.embed(&toks).unwrap(), HashedEmbeddings::new(16, 3).embed(&toks).unwrap());
        let p: Prf<f64> =
            bertscore(&seq("effusions noted"), &seq("no effusion"), &a, &BertScoreOptions::default()).unwrap();
        assert!((0.0..=1.0).contains(&p.f1));
    }

    #[test]
    fn idf_and_baseline() {
        let backend = OrthogonalEmbeddings::new(["a", "b", "c"]);
        let idf: HashMap<String, f64> = [("b".to_string(), 3.0)].into();
        let opts = BertScoreOptions { idf: Some(idf), baseline: None };
        let p: Prf<f64> = bertscore(&seq("a c"), &seq("a b"), &backend, &opts).unwrap();
        assert_eq!(p.recall, 0.25);
        let opts = BertScoreOptions { idf: None, baseline: Some(0.5) };
        let p: Prf<f64> = bertscore(&seq("a c"), &seq("a b"), &backend, &opts).unwrap();
        assert_eq!(p.recall, 0.0);
    }

    #[test]
    fn dimension_mismatch_is_fatal() {
        struct Ragged;
        impl EmbeddingBackend for Ragged {
            fn backend_id(&self) -> String {
                "ragged".into()
            }
            fn dimension(&self) -> usize {
                2
            }
            fn embed(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
                Ok(tokens.iter().map(|t| vec![1.0; t.len()]).collect())
            }
        }
        let err = bertscore::<f64>(&seq("abc"), &seq("ab"), &Ragged, &BertScoreOptions::default()).unwrap_err();
        assert!(matches!(err, EmbedError::DimensionMismatch(3, 2)));
        assert!(!err.is_retriable());
    }

    #[test]
    fn missing_endpoint_is_config_error() {
        let mut cfg = EmbeddingConfig::deterministic(8);
        cfg.kind = EmbeddingKind::RemoteService;
        assert!(matches!(cfg.build(), Err(EmbedError::Config(_))));
    }
}
