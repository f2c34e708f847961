//! Layered run configuration: a TOML file, then `TOOLVERSE_*` environment
//! variables, then command-line flags. Later layers win field by field.
//! Credentials are read from the environment only.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toolverse_core::agent::AgentConfig;
use toolverse_core::gateway::GatewayMode;
use toolverse_core::request::{Endpoints, DEFAULT_FDA_BASE, DEFAULT_FDA_LIMIT, DEFAULT_MONARCH_BASE, DEFAULT_OPEN_TARGETS_BASE};

/// Looked up in the working directory when `--config` is not given.
pub const DEFAULT_CONFIG_FILE: &str = "toolverse.toml";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config file {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("`{key}` in {path} looks like a credential; set it through the environment instead")]
    SecretInFile { path: PathBuf, key: String },
    #[error("environment variable {var} has invalid value `{value}`")]
    BadEnv { var: String, value: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EndpointLayer {
    pub fda_base: Option<String>,
    pub ot_base: Option<String>,
    pub monarch_base: Option<String>,
    pub http_timeout_ms: Option<u64>,
    pub fda_limit: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceLayer {
    pub base: Option<String>,
    pub model: Option<String>,
    /// Scripted-service file; takes precedence over `base`.
    pub script: Option<PathBuf>,
    pub in_flight: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedLayer {
    pub base: Option<String>,
    pub model: Option<String>,
    /// Dimension of the offline hash embedder used when `base` is unset.
    pub dimension: Option<usize>,
    pub in_flight: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentLayer {
    pub max_steps: Option<usize>,
    pub summarize_threshold_chars: Option<usize>,
    pub toolrag_k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalLayer {
    pub item_timeout_secs: Option<u64>,
}

/// One configuration source. Every field is optional.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Layer {
    pub mode: Option<GatewayMode>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub specs_dir: Option<PathBuf>,
    pub cassette_dir: Option<PathBuf>,
    pub index_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub endpoints: EndpointLayer,
    pub chat: ServiceLayer,
    pub embed: EmbedLayer,
    pub agent: AgentLayer,
    pub eval: EvalLayer,
}

fn pick<T>(low: Option<T>, high: Option<T>) -> Option<T> {
    high.or(low)
}

impl Layer {
    /// `self` overridden by every field set in `high`.
    pub fn over(self, high: Layer) -> Layer {
        Layer {
            mode: pick(self.mode, high.mode),
            seed: pick(self.seed, high.seed),
            jobs: pick(self.jobs, high.jobs),
            specs_dir: pick(self.specs_dir, high.specs_dir),
            cassette_dir: pick(self.cassette_dir, high.cassette_dir),
            index_dir: pick(self.index_dir, high.index_dir),
            out_dir: pick(self.out_dir, high.out_dir),
            endpoints: EndpointLayer {
                fda_base: pick(self.endpoints.fda_base, high.endpoints.fda_base),
                ot_base: pick(self.endpoints.ot_base, high.endpoints.ot_base),
                monarch_base: pick(self.endpoints.monarch_base, high.endpoints.monarch_base),
                http_timeout_ms: pick(self.endpoints.http_timeout_ms, high.endpoints.http_timeout_ms),
                fda_limit: pick(self.endpoints.fda_limit, high.endpoints.fda_limit),
            },
            chat: ServiceLayer {
                base: pick(self.chat.base, high.chat.base),
                model: pick(self.chat.model, high.chat.model),
                script: pick(self.chat.script, high.chat.script),
                in_flight: pick(self.chat.in_flight, high.chat.in_flight),
            },
            embed: EmbedLayer {
                base: pick(self.embed.base, high.embed.base),
                model: pick(self.embed.model, high.embed.model),
                dimension: pick(self.embed.dimension, high.embed.dimension),
                in_flight: pick(self.embed.in_flight, high.embed.in_flight),
            },
            agent: AgentLayer {
                max_steps: pick(self.agent.max_steps, high.agent.max_steps),
                summarize_threshold_chars: pick(self.agent.summarize_threshold_chars, high.agent.summarize_threshold_chars),
                toolrag_k: pick(self.agent.toolrag_k, high.agent.toolrag_k),
            },
            eval: EvalLayer {
                item_timeout_secs: pick(self.eval.item_timeout_secs, high.eval.item_timeout_secs),
            },
        }
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Layer, ConfigError> {
        let value: toml::Table = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        if let Some(key) = secret_key(&value, "") {
            return Err(ConfigError::SecretInFile {
                path: path.to_path_buf(),
                key,
            });
        }
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads `path`. A missing default file is an empty layer; a missing
    /// explicit file is an error.
    pub fn from_file(path: &Path, explicit: bool) -> Result<Layer, ConfigError> {
        match std::fs::read_to_string(path) {
            Ok(text) => Layer::from_toml(&text, path),
            Err(e) if !explicit && e.kind() == std::io::ErrorKind::NotFound => Ok(Layer::default()),
            Err(source) => Err(ConfigError::Io {
                path: path.to_path_buf(),
                source,
            }),
        }
    }

    /// The non-secret `TOOLVERSE_*` variables.
    pub fn from_env<I, K, V>(vars: I) -> Result<Layer, ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        fn num<T: std::str::FromStr>(var: &str, value: &str) -> Result<T, ConfigError> {
            value.trim().parse().map_err(|_| ConfigError::BadEnv {
                var: var.into(),
                value: value.into(),
            })
        }
        let mut l = Layer::default();
        for (k, v) in vars {
            let (k, v) = (k.as_ref(), v.as_ref());
            match k {
                "TOOLVERSE_FDA_BASE" => l.endpoints.fda_base = Some(v.into()),
                "TOOLVERSE_OT_BASE" => l.endpoints.ot_base = Some(v.into()),
                "TOOLVERSE_MONARCH_BASE" => l.endpoints.monarch_base = Some(v.into()),
                "TOOLVERSE_HTTP_TIMEOUT_MS" => l.endpoints.http_timeout_ms = Some(num(k, v)?),
                "TOOLVERSE_CHAT_BASE" => l.chat.base = Some(v.into()),
                "TOOLVERSE_CHAT_MODEL" => l.chat.model = Some(v.into()),
                "TOOLVERSE_CHAT_SCRIPT" => l.chat.script = Some(v.into()),
                "TOOLVERSE_EMBED_BASE" => l.embed.base = Some(v.into()),
                "TOOLVERSE_EMBED_MODEL" => l.embed.model = Some(v.into()),
                "TOOLVERSE_MODE" => {
                    l.mode = Some(parse_mode(v).ok_or_else(|| ConfigError::BadEnv {
                        var: k.into(),
                        value: v.into(),
                    })?)
                }
                "TOOLVERSE_SEED" => l.seed = Some(num(k, v)?),
                "TOOLVERSE_JOBS" => l.jobs = Some(num(k, v)?),
                _ => {}
            }
        }
        Ok(l)
    }
}

fn secret_key(table: &toml::Table, prefix: &str) -> Option<String> {
    for (k, v) in table {
        let lower = k.to_ascii_lowercase();
        if lower == "key" || lower.ends_with("_key") || lower.contains("token") || lower.contains("secret") || lower.contains("password") {
            return Some(format!("{prefix}{k}"));
        }
        if let toml::Value::Table(inner) = v {
            if let Some(found) = secret_key(inner, &format!("{prefix}{k}.")) {
                return Some(found);
            }
        }
    }
    None
}

pub fn parse_mode(s: &str) -> Option<GatewayMode> {
    match s.trim().to_ascii_lowercase().as_str() {
        "live" => Some(GatewayMode::Live),
        "fixture" => Some(GatewayMode::Fixture),
        "simulated" => Some(GatewayMode::Simulated),
        _ => None,
    }
}

/// Credentials, taken from the environment and never serialized.
#[derive(Clone, Default, PartialEq, Eq)]
pub struct Secrets {
    pub chat_key: Option<String>,
    pub embed_key: Option<String>,
    pub fda_key: Option<String>,
}

impl std::fmt::Debug for Secrets {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mark = |s: &Option<String>| if s.is_some() { "<set>" } else { "<unset>" };
        f.debug_struct("Secrets")
            .field("chat_key", &mark(&self.chat_key))
            .field("embed_key", &mark(&self.embed_key))
            .field("fda_key", &mark(&self.fda_key))
            .finish()
    }
}

impl Secrets {
    pub fn from_env<I, K, V>(vars: I) -> Secrets
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut s = Secrets::default();
        for (k, v) in vars {
            let v = v.as_ref().to_string();
            match k.as_ref() {
                "TOOLVERSE_CHAT_KEY" => s.chat_key = Some(v),
                "TOOLVERSE_EMBED_KEY" => s.embed_key = Some(v),
                "TOOLVERSE_FDA_KEY" => s.fda_key = Some(v),
                _ => {}
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ServiceConfig {
    pub base: Option<String>,
    pub model: String,
    pub script: Option<PathBuf>,
    pub in_flight: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EmbedConfig {
    pub base: Option<String>,
    pub model: String,
    pub dimension: usize,
    pub in_flight: usize,
}

/// Fully resolved settings shared by every subcommand.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub mode: GatewayMode,
    pub seed: u64,
    pub jobs: usize,
    pub specs_dir: PathBuf,
    pub cassette_dir: PathBuf,
    pub index_dir: PathBuf,
    pub out_dir: PathBuf,
    pub endpoints: Endpoints,
    pub http_timeout: Duration,
    pub chat: ServiceConfig,
    pub embed: EmbedConfig,
    pub agent: AgentConfig,
    pub item_timeout: Duration,
    #[serde(skip)]
    pub secrets: Secrets,
}

pub const DEFAULT_IN_FLIGHT: usize = 8;
pub const DEFAULT_HTTP_TIMEOUT_MS: u64 = 30_000;
pub const DEFAULT_ITEM_TIMEOUT_SECS: u64 = 300;
pub const DEFAULT_HASH_DIMENSION: usize = 256;

fn logical_cpus() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

impl RunConfig {
    /// Merges file < env < flags and fills defaults.
    pub fn resolve(file: Layer, env: Layer, flags: Layer, secrets: Secrets) -> RunConfig {
        let l = file.over(env).over(flags);
        let chat_in_flight = l.chat.in_flight.unwrap_or(DEFAULT_IN_FLIGHT).max(1);
        let defaults = AgentConfig::default();
        let seed = l.seed.unwrap_or(0);
        RunConfig {
            mode: l.mode.unwrap_or_default(),
            seed,
            jobs: l.jobs.unwrap_or_else(logical_cpus).clamp(1, chat_in_flight),
            specs_dir: l.specs_dir.unwrap_or_else(|| "specs".into()),
            cassette_dir: l.cassette_dir.unwrap_or_else(|| "fixtures/cassettes".into()),
            index_dir: l.index_dir.unwrap_or_else(|| "index".into()),
            out_dir: l.out_dir.unwrap_or_else(|| "runs".into()),
            endpoints: Endpoints {
                fda_base: l.endpoints.fda_base.unwrap_or_else(|| DEFAULT_FDA_BASE.into()),
                open_targets_base: l.endpoints.ot_base.unwrap_or_else(|| DEFAULT_OPEN_TARGETS_BASE.into()),
                monarch_base: l.endpoints.monarch_base.unwrap_or_else(|| DEFAULT_MONARCH_BASE.into()),
                fda_limit: l.endpoints.fda_limit.unwrap_or(DEFAULT_FDA_LIMIT),
            },
            http_timeout: Duration::from_millis(l.endpoints.http_timeout_ms.unwrap_or(DEFAULT_HTTP_TIMEOUT_MS)),
            chat: ServiceConfig {
                base: l.chat.base,
                model: l.chat.model.unwrap_or_else(|| "default".into()),
                script: l.chat.script,
                in_flight: chat_in_flight,
            },
            embed: EmbedConfig {
                base: l.embed.base,
                model: l.embed.model.unwrap_or_else(|| "default".into()),
                dimension: l.embed.dimension.unwrap_or(DEFAULT_HASH_DIMENSION).max(1),
                in_flight: l.embed.in_flight.unwrap_or(DEFAULT_IN_FLIGHT).max(1),
            },
            agent: AgentConfig {
                max_steps: l.agent.max_steps.unwrap_or(defaults.max_steps).max(1),
                summarize_threshold_chars: l
                    .agent
                    .summarize_threshold_chars
                    .unwrap_or(defaults.summarize_threshold_chars)
                    .max(1),
                toolrag_k: l.agent.toolrag_k.unwrap_or(defaults.toolrag_k).max(1),
                seed,
                ..defaults
            },
            item_timeout: Duration::from_secs(l.eval.item_timeout_secs.unwrap_or(DEFAULT_ITEM_TIMEOUT_SECS)),
            secrets,
        }
    }

    /// Reads the file layer and the process environment.
    pub fn load(config_path: Option<&Path>, flags: Layer) -> Result<RunConfig, ConfigError> {
        let file = match config_path {
            Some(p) => Layer::from_file(p, true)?,
            None => Layer::from_file(Path::new(DEFAULT_CONFIG_FILE), false)?,
        };
        let vars: BTreeMap<String, String> = std::env::vars().collect();
        let env = Layer::from_env(&vars)?;
        Ok(RunConfig::resolve(file, env, flags, Secrets::from_env(&vars)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_keys_parse() {
        let text = "mode = \"fixture\"\nseed = 7\n[chat]\nmodel = \"m\"\n[agent]\nmax_steps = 4\n";
        let l = Layer::from_toml(text, Path::new("t.toml")).unwrap();
        assert_eq!(l.mode, Some(GatewayMode::Fixture));
        assert_eq!(l.chat.model.as_deref(), Some("m"));
        assert_eq!(l.agent.max_steps, Some(4));
    }

    #[test]
    fn credentials_rejected_in_file() {
        let err = Layer::from_toml("[chat]\nkey = \"sk-1\"\n", Path::new("t.toml")).unwrap_err();
        assert!(matches!(err, ConfigError::SecretInFile { ref key, .. } if key == "chat.key"));
        assert!(!err.to_string().contains("sk-1"));
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(Layer::from_toml("colour = 1\n", Path::new("t.toml")).is_err());
    }

    #[test]
    fn defaults() {
        let c = RunConfig::resolve(Layer::default(), Layer::default(), Layer::default(), Secrets::default());
        assert_eq!(c.mode, GatewayMode::Live);
        assert_eq!(c.agent.max_steps, 30);
        assert_eq!(c.item_timeout, Duration::from_secs(300));
        assert_eq!(c.chat.in_flight, 8);
        assert!(c.jobs >= 1 && c.jobs <= 8);
    }

    #[test]
    fn secrets_from_env_only_and_redacted() {
        let s = Secrets::from_env([("TOOLVERSE_CHAT_KEY", "sk-abc")]);
        assert_eq!(s.chat_key.as_deref(), Some("sk-abc"));
        assert!(!format!("{s:?}").contains("sk-abc"));
        let c = RunConfig::resolve(Layer::default(), Layer::default(), Layer::default(), s);
        assert!(!serde_json::to_string(&c).unwrap().contains("sk-abc"));
    }

    #[test]
    fn bad_env_number() {
        assert!(Layer::from_env([("TOOLVERSE_HTTP_TIMEOUT_MS", "soon")]).is_err());
    }
}
