//! Engine configuration, read from TOML.
//!
//! Every key is optional:
//!
//! ```toml
//! data_root = "marginalia-data"
//! num_excerpts_default = 3
//! session_ids = "random"          # or "sequential"
//!
//! [anchor]
//! max_ratio = 0.2
//! ambiguity_band = 0.02
//! auto_pick = "none"              # or "earliest"
//!
//! [prompt]
//! manuscript_char_budget = 120000
//! template_dir = "my-templates"   # overrides <name>.txt files
//!
//! [llm]
//! backend = "mock"                # or "http"
//! endpoint = "https://api.openai.com/v1/chat/completions"
//! model_name = "gpt-4"
//! credential_env = "MARGINALIA_API_KEY"
//! fixture_dir = "fixtures"
//! temperature = 0.0
//! max_output_tokens = 1024
//! retries = 2
//! timeout_secs = 60
//! backoff_ms = 500
//! max_concurrency = 4
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchor::{AnchorParams, AutoPick, SearchMode};
use crate::gateway::LlmSettings;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionIdStrategy {
    #[default]
    Random,
    /// `s0001`, `s0002`, ... per engine instance; for reproducible runs.
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorSettings {
    pub max_ratio: f64,
    pub ambiguity_band: f64,
    pub auto_pick: AutoPick,
}

impl Default for AnchorSettings {
    fn default() -> Self {
        let p = AnchorParams::default();
        AnchorSettings {
            max_ratio: p.max_ratio,
            ambiguity_band: p.ambiguity_band,
            auto_pick: AutoPick::None,
        }
    }
}

impl AnchorSettings {
    pub fn params(&self) -> AnchorParams {
        AnchorParams {
            max_ratio: self.max_ratio,
            ambiguity_band: self.ambiguity_band,
            mode: SearchMode::Seeded,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSettings {
    /// Longest manuscript text sent in one prompt, in characters.
    pub manuscript_char_budget: usize,
    pub template_dir: Option<PathBuf>,
}

impl Default for PromptSettings {
    fn default() -> Self {
        PromptSettings {
            manuscript_char_budget: 120_000,
            template_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub data_root: PathBuf,
    pub num_excerpts_default: usize,
    pub session_ids: SessionIdStrategy,
    pub anchor: AnchorSettings,
    pub prompt: PromptSettings,
    pub llm: LlmSettings,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            data_root: PathBuf::from("marginalia-data"),
            num_excerpts_default: 3,
            session_ids: SessionIdStrategy::Random,
            anchor: AnchorSettings::default(),
            prompt: PromptSettings::default(),
            llm: LlmSettings::default(),
        }
    }
}

impl EngineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: EngineConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Load a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            let rebase = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            rebase(&mut config.data_root);
            if let Some(p) = config.prompt.template_dir.as_mut() {
                rebase(p);
            }
            if let Some(p) = config.llm.fixture_dir.as_mut() {
                rebase(p);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.num_excerpts_default < 1 {
            return fail("num_excerpts_default must be at least 1");
        }
        if !(0.0..1.0).contains(&self.anchor.max_ratio) {
            return fail("anchor.max_ratio must be in [0, 1)");
        }
        if !(0.0..=self.anchor.max_ratio.max(0.0)).contains(&self.anchor.ambiguity_band) {
            return fail("anchor.ambiguity_band must be in [0, max_ratio]");
        }
        if self.prompt.manuscript_char_budget < 100 {
            return fail("prompt.manuscript_char_budget must be at least 100");
        }
        if self.llm.temperature < 0.0 {
            return fail("llm.temperature must be >= 0");
        }
        if self.llm.max_output_tokens == 0 {
            return fail("llm.max_output_tokens must be positive");
        }
        if self.llm.timeout_secs <= 0.0 {
            return fail("llm.timeout_secs must be positive");
        }
        if self.llm.max_concurrency == 0 {
            return fail("llm.max_concurrency must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::BackendKind;

    #[test]
    fn defaults() {
        let c = EngineConfig::from_toml("").unwrap();
        assert_eq!(c, EngineConfig::default());
        assert_eq!(c.num_excerpts_default, 3);
        assert_eq!(c.llm.retries, 2);
        assert_eq!(c.llm.timeout_secs, 60.0);
        assert_eq!(c.llm.temperature, 0.0);
        assert_eq!(c.llm.max_concurrency, 4);
        assert_eq!(c.anchor.auto_pick, AutoPick::None);
    }

    #[test]
    fn parses_tables() {
        let c = EngineConfig::from_toml(
            "num_excerpts_default = 2\nsession_ids = \"sequential\"\n[anchor]\nauto_pick = \"earliest\"\n[llm]\nbackend = \"http\"\nendpoint = \"http://x\"\n",
        )
        .unwrap();
        assert_eq!(c.num_excerpts_default, 2);
        assert_eq!(c.session_ids, SessionIdStrategy::Sequential);
        assert_eq!(c.anchor.auto_pick, AutoPick::Earliest);
        assert_eq!(c.llm.backend, BackendKind::Http);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(EngineConfig::from_toml("num_excerpts_default = 0"), Err(ConfigError::Invalid(_))));
        assert!(matches!(EngineConfig::from_toml("[anchor]\nmax_ratio = 1.5"), Err(ConfigError::Invalid(_))));
        assert!(matches!(EngineConfig::from_toml("colour = 1"), Err(ConfigError::Syntax(_))));
        assert!(matches!(EngineConfig::from_toml("[llm]\napi_key = \"x\""), Err(ConfigError::Syntax(_))));
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("marginalia.toml");
        std::fs::write(&path, "data_root = \"data\"\n[llm]\nfixture_dir = \"fx\"\n").unwrap();
        let c = EngineConfig::load(&path).unwrap();
        assert_eq!(c.data_root, dir.path().join("data"));
        assert_eq!(c.llm.fixture_dir, Some(dir.path().join("fx")));
    }
}
