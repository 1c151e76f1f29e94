//! Run configuration. Flags win over environment variables, which win
//! over the config file. Secrets never appear here: remote backends name
//! the environment variable that holds their key.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use comt_core::chain::QuestionTemplates;
use comt_core::decompose::{Lexicon, RuleSegmenter};
use comt_core::inject::ConfusionTables;
use comt_core::llm::RemoteConfig;
use comt_core::metrics::EmbeddingConfig;
use comt_core::HallucinationLabel;
use serde::{Deserialize, Serialize};

pub const DEFAULT_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JudgeConfig {
    Remote {
        id: String,
        #[serde(flatten)]
        remote: RemoteConfig,
    },
    /// Answers from an injection ledger written by `comt inject`.
    Ledger { id: String, path: PathBuf },
    /// Always answers `label`. For dry runs and tests.
    Fixed { id: String, label: HallucinationLabel },
}

impl JudgeConfig {
    pub fn id(&self) -> &str {
        match self {
            JudgeConfig::Remote { id, .. } | JudgeConfig::Ledger { id, .. } | JudgeConfig::Fixed { id, .. } => id,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        !matches!(self, JudgeConfig::Remote { .. })
    }
}

/// Contents of the TOML config file. Every field is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub store: Option<PathBuf>,
    pub in_flight: Option<usize>,
    pub seed: Option<u64>,
    pub lexicon: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub confusion: Option<PathBuf>,
    pub include_sentinels: Option<bool>,
    pub segmentation: Option<RemoteConfig>,
    #[serde(default)]
    pub judges: Vec<JudgeConfig>,
    pub embedding: Option<EmbeddingConfig>,
    pub rephrase: Option<RemoteConfig>,
    #[serde(default)]
    pub reviewers: Vec<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Values that may come from a flag or its environment variable.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub in_flight: Option<usize>,
    pub seed: Option<u64>,
}

/// The configuration a run actually used, echoed into its outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub tool_version: String,
    pub config_file: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub in_flight: usize,
    pub seed: u64,
    pub lexicon_version: String,
    pub template_version: String,
    pub confusion_version: String,
    pub include_sentinels: bool,
    pub segmentation: Option<RemoteConfig>,
    pub judges: Vec<JudgeConfig>,
    pub embedding: Option<EmbeddingConfig>,
    pub rephrase: Option<RemoteConfig>,
    #[serde(skip)]
    pub reviewers: Vec<String>,
    #[serde(skip)]
    artifacts: Artifacts,
}

#[derive(Debug, Clone, PartialEq)]
struct Artifacts {
    lexicon: Option<PathBuf>,
    templates: Option<PathBuf>,
    confusion: Option<PathBuf>,
}

impl RunConfig {
    pub fn resolve(over: Overrides) -> Result<Self> {
        let file = match &over.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let in_flight = over.in_flight.or(file.in_flight).unwrap_or(DEFAULT_IN_FLIGHT);
        if in_flight == 0 {
            bail!("in_flight must be at least 1");
        }
        let artifacts = Artifacts { lexicon: file.lexicon, templates: file.templates, confusion: file.confusion };
        let mut cfg = RunConfig {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_file: over.config,
            store: over.store.or(file.store),
            in_flight,
            seed: over.seed.or(file.seed).unwrap_or(0),
            lexicon_version: String::new(),
            template_version: String::new(),
            confusion_version: String::new(),
            include_sentinels: file.include_sentinels.unwrap_or(true),
            segmentation: file.segmentation,
            judges: file.judges,
            embedding: file.embedding,
            rephrase: file.rephrase,
            reviewers: file.reviewers,
            artifacts,
        };
        cfg.lexicon_version = cfg.segmenter()?.lexicon().id().to_string();
        cfg.template_version = cfg.templates()?.version;
        cfg.confusion_version = cfg.tables()?.version;
        Ok(cfg)
    }

    pub fn store_path(&self) -> Result<&Path> {
        match &self.store {
            Some(p) => Ok(p),
            None => {
                Err(crate::UsageError("no store given (--store, COMT_STORE or `store` in the config file)".into())
                    .into())
            }
        }
    }

    pub fn segmenter(&self) -> Result<RuleSegmenter> {
        Ok(match &self.artifacts.lexicon {
            Some(p) => RuleSegmenter::new(Lexicon::load(p)?),
            None => RuleSegmenter::builtin(),
        })
    }

    pub fn templates(&self) -> Result<QuestionTemplates> {
        Ok(match &self.artifacts.templates {
            Some(p) => QuestionTemplates::load(p)?,
            None => QuestionTemplates::builtin(),
        })
    }

    pub fn tables(&self) -> Result<ConfusionTables> {
        Ok(match &self.artifacts.confusion {
            Some(p) => ConfusionTables::load(p)?,
            None => ConfusionTables::builtin(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("comt.toml");
        std::fs::write(
            &path,
            r#"
store = "from-file"
in_flight = 9
seed = 3

[[judges]]
kind = "fixed"
id = "mock"
label = "Correct"

[[judges]]
kind = "remote"
id = "gpt"
endpoint = "http://localhost:9/v1/chat/completions"
model = "m"
api_key_env = "JUDGE_KEY"
"#,
        )
        .unwrap();
        let cfg = RunConfig::resolve(Overrides {
            config: Some(path.clone()),
            store: Some("from-flag".into()),
            in_flight: None,
            seed: None,
        })
        .unwrap();
        assert_eq!(cfg.store.as_deref(), Some(Path::new("from-flag")));
        assert_eq!(cfg.in_flight, 9);
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.judges.len(), 2);
        assert!(!cfg.judges[1].is_deterministic());
        assert_eq!(cfg.template_version, QuestionTemplates::builtin().version);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("comt.toml");
        std::fs::write(&path, "api_key = \"secret\"\n").unwrap();
        assert!(RunConfig::resolve(Overrides { config: Some(path), ..Default::default() }).is_err());
    }
}
