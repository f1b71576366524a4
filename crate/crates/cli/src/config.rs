//! Run configuration. Values come from built-in defaults, then the TOML
//! file given with `--config`, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lewidi_core::icl::{PipelineConfig, PromptProfile};
use lewidi_core::metrics::{AnadNormalization, ModeScope};
use lewidi_core::trainer::TrainConfig;
use serde::Deserialize;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    A,
    B,
    #[default]
    Both,
}

impl Task {
    pub fn soft(self) -> bool {
        matches!(self, Task::A | Task::Both)
    }

    pub fn perspectivist(self) -> bool {
        matches!(self, Task::B | Task::Both)
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum ProfileChoice {
    Builtin(String),
    Custom(PromptProfile),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Mock: `{"prompt_hash", "completion"}` JSONL.
    pub script: Option<PathBuf>,
    /// Mock: answer for prompts missing from the script.
    pub default_completion: Option<String>,
    /// HTTP: chat-completions endpoint.
    pub endpoint: String,
    pub timeout_secs: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            script: None,
            default_completion: None,
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            timeout_secs: 60,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    #[default]
    Hashed,
    File,
    Http,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingsConfig {
    pub source: EmbeddingSource,
    pub path: Option<PathBuf>,
    /// Bucket count for the hashed bag-of-words embedder.
    pub dim: usize,
    pub endpoint: String,
    pub model: String,
}

impl Default for EmbeddingsConfig {
    fn default() -> Self {
        EmbeddingsConfig {
            source: EmbeddingSource::Hashed,
            path: None,
            dim: 512,
            endpoint: "https://api.openai.com/v1/embeddings".into(),
            model: "text-embedding-3-small".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    #[default]
    Random,
    MostFrequent,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub scope: ModeScope,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    /// Split that gets predicted and evaluated.
    pub split: String,
    pub task: Task,
    /// The only source of randomness for every stage.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub plot: bool,
    pub profile: Option<ProfileChoice>,
    pub anad_normalization: AnadNormalization,
    pub pipeline: PipelineConfig,
    pub backend: BackendConfig,
    pub embeddings: EmbeddingsConfig,
    pub trainer: TrainConfig,
    pub baseline: BaselineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            split: "test".into(),
            task: Task::Both,
            seed: 0,
            out_dir: PathBuf::from("out"),
            cache_dir: None,
            plot: false,
            profile: None,
            anad_normalization: AnadNormalization::default(),
            pipeline: PipelineConfig::default(),
            backend: BackendConfig::default(),
            embeddings: EmbeddingsConfig::default(),
            trainer: TrainConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, file: &Path) -> Result<Self> {
        toml::from_str(text).with_context(|| format!("invalid config file {}", file.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_toml(&text, path)
    }

    /// Copies the run seed into every seeded stage and checks ranges.
    pub fn finish(mut self) -> Result<Self> {
        self.pipeline.selection.seed = self.seed;
        self.trainer.seed = self.seed;
        self.pipeline.selection.validate()?;
        if !(1..=5).contains(&self.trainer.k_clusters) {
            bail!("k_clusters must be in 1..=5, got {}", self.trainer.k_clusters);
        }
        self.trainer.validate()?;
        if self.pipeline.concurrency == 0 {
            bail!("concurrency must be at least 1");
        }
        if let Some(path) = &self.dataset {
            if !path.exists() {
                bail!("dataset file {} does not exist", path.display());
            }
        }
        Ok(self)
    }

    pub fn dataset_path(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .context("no dataset given; pass --dataset or set `dataset` in the config file")
    }

    /// The configured prompt profile, else the built-in one matching the
    /// dataset name or its first `-`/`_`-separated word.
    pub fn prompt_profile(&self, dataset_name: &str) -> Result<PromptProfile> {
        let by_name = |name: &str| {
            PromptProfile::builtin(name).with_context(|| {
                format!("no built-in prompt profile `{name}` (known: csc, mp, par, varierrnli)")
            })
        };
        match &self.profile {
            Some(ProfileChoice::Builtin(name)) => by_name(name),
            Some(ProfileChoice::Custom(p)) => Ok(p.clone()),
            None => {
                let head = dataset_name.split(['-', '_']).next().unwrap_or(dataset_name);
                PromptProfile::builtin(dataset_name)
                    .or_else(|| PromptProfile::builtin(head))
                    .with_context(|| {
                        format!("dataset `{dataset_name}` has no built-in prompt profile; set `profile` in the config")
                    })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.pipeline.selection.k, 10);
        assert_eq!(cfg.pipeline.selection.lambda, 0.7);
        assert_eq!(cfg.trainer.alpha, 1.0);
        assert_eq!(cfg.trainer.k_clusters, 3);
        assert_eq!(lewidi_core::icl::TEMPERATURE, 0.0);
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg = RunConfig::from_toml(
            "seed = 9\n[pipeline.selection]\nk = 4\n[trainer]\nalpha = 0.0\n",
            Path::new("c.toml"),
        )
        .unwrap()
        .finish()
        .unwrap();
        assert_eq!(cfg.pipeline.selection.k, 4);
        assert_eq!(cfg.pipeline.selection.lambda, 0.7);
        assert_eq!(cfg.pipeline.selection.seed, 9);
        assert_eq!(cfg.trainer.seed, 9);
        assert_eq!(cfg.trainer.alpha, 0.0);
        assert_eq!(cfg.trainer.epochs, TrainConfig::default().epochs);
    }

    #[test]
    fn out_of_range_values_rejected() {
        let bad = |text: &str| RunConfig::from_toml(text, Path::new("c.toml")).and_then(RunConfig::finish);
        assert!(bad("[pipeline.selection]\nlambda = 1.5\n").is_err());
        assert!(bad("[pipeline.selection]\nk = 0\n").is_err());
        assert!(bad("[trainer]\nk_clusters = 6\n").is_err());
        assert!(bad("unknown_key = 1\n").is_err());
        assert!(bad("dataset = \"/no/such/file.jsonl\"\n").is_err());
    }

    #[test]
    fn profile_choice_by_name_or_table() {
        let cfg = RunConfig::from_toml("profile = \"par\"\n", Path::new("c.toml")).unwrap();
        assert_eq!(cfg.prompt_profile("x").unwrap(), PromptProfile::builtin("par").unwrap());
        let cfg = RunConfig::from_toml(
            "[profile]\ntask_name = \"t\"\ninput_format = \"i\"\nresponse_format = \"r\"\nlabel_explanation = \"l\"\n",
            Path::new("c.toml"),
        )
        .unwrap();
        assert_eq!(cfg.prompt_profile("x").unwrap().task_name, "t");
        let cfg = RunConfig::default();
        assert_eq!(cfg.prompt_profile("csc-fixture").unwrap(), PromptProfile::builtin("csc").unwrap());
        assert!(cfg.prompt_profile("mystery").is_err());
    }
}
