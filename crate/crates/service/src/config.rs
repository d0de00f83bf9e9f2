use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::ServiceError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    /// Index file written by `posekit index build`.
    pub index: PathBuf,
    #[serde(default = "default_bind")]
    pub bind: SocketAddr,
    #[serde(default)]
    pub query: QueryLimits,
    /// Newline-separated ids left out of every result. Blank lines and
    /// lines starting with `#` are ignored.
    #[serde(default)]
    pub denylist: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryLimits {
    #[serde(default = "default_k")]
    pub default_k: usize,
    #[serde(default = "max_k")]
    pub max_k: usize,
    #[serde(default = "max_body_bytes")]
    pub max_body_bytes: usize,
}

impl Default for QueryLimits {
    fn default() -> Self {
        Self {
            default_k: default_k(),
            max_k: max_k(),
            max_body_bytes: max_body_bytes(),
        }
    }
}

fn default_bind() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

fn default_k() -> usize {
    10
}

fn max_k() -> usize {
    100
}

fn max_body_bytes() -> usize {
    64 * 1024
}

impl ServiceConfig {
    pub fn new(index: impl Into<PathBuf>) -> Self {
        Self {
            index: index.into(),
            bind: default_bind(),
            query: QueryLimits::default(),
            denylist: None,
        }
    }

    /// Parse a TOML config. Relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ServiceError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))?;
        cfg.index = base.join(&cfg.index);
        cfg.denylist = cfg.denylist.map(|p| base.join(p));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        let q = &self.query;
        if q.max_k == 0 || q.default_k == 0 || q.default_k > q.max_k {
            return Err(ServiceError::Config(format!(
                "need 1 <= default_k ({}) <= max_k ({})",
                q.default_k, q.max_k
            )));
        }
        Ok(())
    }
}
