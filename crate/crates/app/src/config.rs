//! Declarative configuration: a TOML file, then `TYPOGEN_*` environment
//! overrides, then command-line flags.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use typogen_core::model::ModelConfig;
use typogen_core::sampling::SamplingConfig;

pub const ENV_PREFIX: &str = "TYPOGEN_";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub codebooks: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Directory of static UI assets served at `/`.
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: SocketAddr,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub paths: Paths,
    pub model: ModelConfig,
    pub sampling: SamplingConfig,
    pub server: ServerConfig,
    pub log_level: String,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            paths: Paths::default(),
            model: ModelConfig::desk(),
            sampling: SamplingConfig::default(),
            server: ServerConfig::default(),
            log_level: "info".into(),
        }
    }
}

impl AppConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<AppConfig> {
        let de = toml::Deserializer::parse(text).context("malformed config")?;
        serde_path_to_error::deserialize(de).map_err(|e| anyhow::anyhow!("config field `{}`: {}", e.path(), e.inner()))
    }

    /// Reads `path` if given (defaults otherwise) and applies environment
    /// overrides.
    pub fn load(path: Option<&Path>) -> anyhow::Result<AppConfig> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::from_toml(&text).with_context(|| format!("in {}", p.display()))?
            }
            None => AppConfig::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> anyhow::Result<()> {
        let var = |name: &str| get(&format!("{ENV_PREFIX}{name}")).filter(|v| !v.is_empty());
        let paths = [
            ("CORPUS", &mut self.paths.corpus),
            ("CODEBOOKS", &mut self.paths.codebooks),
            ("CHECKPOINT", &mut self.paths.checkpoint),
            ("OUTPUT", &mut self.paths.output),
            ("STATIC_DIR", &mut self.paths.static_dir),
        ];
        for (name, slot) in paths {
            if let Some(v) = var(name) {
                *slot = Some(PathBuf::from(v));
            }
        }
        if let Some(v) = var("BIND") {
            self.server.bind = v.parse().with_context(|| format!("{ENV_PREFIX}BIND=`{v}`"))?;
        }
        if let Some(v) = var("LOG") {
            self.log_level = v;
        }
        Ok(())
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.model.validate()?;
        self.sampling.validate()?;
        if let Some(dir) = &self.paths.static_dir {
            if !dir.is_dir() {
                bail!("static_dir {} is not a directory", dir.display());
            }
        }
        Ok(())
    }
}

/// Resolves a required path from a flag or the config.
pub fn require(flag: &Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> anyhow::Result<PathBuf> {
    flag.clone()
        .or_else(|| configured.clone())
        .with_context(|| format!("no {what} path: pass --{what} or set paths.{what} / {ENV_PREFIX}{}", what.to_uppercase()))
}
