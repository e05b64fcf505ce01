use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use pricing_core::token::{TokenKey, DEFAULT_TTL_SECONDS};
use pricing_core::usage::FsyncPolicy;
use serde::Deserialize;
use thiserror::Error;

/// Service configuration, read from a TOML file and then overridden by
/// `PRICING_*` environment variables.
///
/// ```toml
/// listen = "127.0.0.1:8080"
/// pricing = "petclinic.yaml"
///
/// [store]
/// kind = "file"          # or "memory"
/// path = "var/usage"
/// fsync = "always"       # or "never"
///
/// [token]
/// key_env = "PRICING_TOKEN_KEY"   # or key_file = "token.key"
/// ttl_seconds = 300
///
/// [admin]
/// token_env = "PRICING_ADMIN_TOKEN"
/// ```
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    pub pricing: PathBuf,
    #[serde(default)]
    pub store: StoreConfig,
    #[serde(default)]
    pub token: TokenConfig,
    #[serde(default)]
    pub admin: AdminConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreConfig {
    #[serde(default)]
    pub kind: StoreKind,
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub fsync: FsyncPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoreKind {
    #[default]
    Memory,
    File,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenConfig {
    #[serde(default = "default_key_env")]
    pub key_env: String,
    pub key_file: Option<PathBuf>,
    #[serde(default = "default_ttl")]
    pub ttl_seconds: u64,
}

impl Default for TokenConfig {
    fn default() -> Self {
        Self {
            key_env: default_key_env(),
            key_file: None,
            ttl_seconds: default_ttl(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdminConfig {
    /// Name of the env var holding the admin bearer token. Without one,
    /// pricing updates are refused.
    pub token_env: Option<String>,
}

fn default_listen() -> SocketAddr {
    ([127, 0, 0, 1], 8080).into()
}

fn default_key_env() -> String {
    "PRICING_TOKEN_KEY".into()
}

fn default_ttl() -> u64 {
    DEFAULT_TTL_SECONDS
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {}: {source}", path.display())]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid value for {var}: {message}")]
    Env { var: &'static str, message: String },
    #[error("token key: {0}")]
    Key(String),
    #[error("a file store needs store.path")]
    MissingStorePath,
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Loads `path`, resolves relative paths against its directory and
    /// applies environment overrides.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.pricing = base.join(&config.pricing);
        config.store.path = config.store.path.map(|p| base.join(p));
        config.token.key_file = config.token.key_file.map(|p| base.join(p));
        config.apply_env(&std::env::vars().collect())?;
        Ok(config)
    }

    /// Overrides: `PRICING_LISTEN`, `PRICING_FILE`, `PRICING_STORE`,
    /// `PRICING_STORE_PATH`, `PRICING_TOKEN_TTL`.
    pub fn apply_env(&mut self, env: &HashMap<String, String>) -> Result<(), ConfigError> {
        fn bad(var: &'static str, e: impl ToString) -> ConfigError {
            ConfigError::Env {
                var,
                message: e.to_string(),
            }
        }
        if let Some(v) = env.get("PRICING_LISTEN") {
            self.listen = v.parse().map_err(|e| bad("PRICING_LISTEN", e))?;
        }
        if let Some(v) = env.get("PRICING_FILE") {
            self.pricing = v.into();
        }
        if let Some(v) = env.get("PRICING_STORE") {
            self.store.kind = match v.as_str() {
                "memory" => StoreKind::Memory,
                "file" => StoreKind::File,
                other => return Err(bad("PRICING_STORE", format!("unknown store `{other}`"))),
            };
        }
        if let Some(v) = env.get("PRICING_STORE_PATH") {
            self.store.path = Some(v.into());
        }
        if let Some(v) = env.get("PRICING_TOKEN_TTL") {
            self.token.ttl_seconds = v.parse().map_err(|e| bad("PRICING_TOKEN_TTL", e))?;
        }
        if self.token.ttl_seconds == 0 {
            return Err(bad("PRICING_TOKEN_TTL", "ttl must be positive"));
        }
        if self.store.kind == StoreKind::File && self.store.path.is_none() {
            return Err(ConfigError::MissingStorePath);
        }
        Ok(())
    }

    /// Reads the signing key from the key file if set, else from the env var.
    pub fn token_key(&self) -> Result<TokenKey, ConfigError> {
        let bytes = match &self.token.key_file {
            Some(path) => std::fs::read(path).map_err(|e| ConfigError::Key(format!("{}: {e}", path.display())))?,
            None => std::env::var(&self.token.key_env)
                .map_err(|_| ConfigError::Key(format!("env var {} is not set", self.token.key_env)))?
                .into_bytes(),
        };
        TokenKey::new(bytes).map_err(|e| ConfigError::Key(e.to_string()))
    }

    pub fn admin_token(&self) -> Option<String> {
        self.admin
            .token_env
            .as_ref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|t| !t.is_empty())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ServiceConfig::from_toml("pricing = \"p.yaml\"").unwrap();
        assert_eq!(c.listen, default_listen());
        assert_eq!(c.store.kind, StoreKind::Memory);
        assert_eq!(c.token.ttl_seconds, 300);
        assert_eq!(c.admin.token_env, None);
    }

    #[test]
    fn env_overrides_win() {
        let mut c = ServiceConfig::from_toml("pricing = \"p.yaml\"\n[token]\nttl_seconds = 60").unwrap();
        let env: HashMap<String, String> = [
            ("PRICING_LISTEN", "0.0.0.0:9000"),
            ("PRICING_STORE", "file"),
            ("PRICING_STORE_PATH", "/tmp/x"),
            ("PRICING_TOKEN_TTL", "30"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        c.apply_env(&env).unwrap();
        assert_eq!(c.listen.port(), 9000);
        assert_eq!(c.store.kind, StoreKind::File);
        assert_eq!(c.token.ttl_seconds, 30);
    }

    #[test]
    fn invalid_settings_are_rejected() {
        assert!(ServiceConfig::from_toml("pricing = \"p\"\ncolour = 1").is_err());
        let mut c = ServiceConfig::from_toml("pricing = \"p\"\n[store]\nkind = \"file\"").unwrap();
        assert!(matches!(c.apply_env(&HashMap::new()), Err(ConfigError::MissingStorePath)));
        let mut c = ServiceConfig::from_toml("pricing = \"p\"").unwrap();
        let env = HashMap::from([("PRICING_TOKEN_TTL".to_string(), "0".to_string())]);
        assert!(c.apply_env(&env).is_err());
    }

    #[test]
    fn key_file_is_checked_for_length() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k");
        std::fs::write(&path, "short").unwrap();
        let mut c = ServiceConfig::from_toml("pricing = \"p\"").unwrap();
        c.token.key_file = Some(path.clone());
        assert!(matches!(c.token_key(), Err(ConfigError::Key(_))));
        std::fs::write(&path, [7u8; 32]).unwrap();
        assert!(c.token_key().is_ok());
    }
}
