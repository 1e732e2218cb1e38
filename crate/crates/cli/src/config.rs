use std::path::{Path, PathBuf};

use thiserror::Error;

use genq_core::generator::Quota;
use genq_core::templates::DEFAULT_INTERROGATIVES;
use genq_core::{ParaphraseConfig, SlotConfig, SlotLabel};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{path}: {reason}")]
    Unreadable { path: String, reason: String },
    #[error("unknown configuration keys: {}", .0.join(", "))]
    BadKey(Vec<String>),
    #[error("configuration key `{key}`: {reason}")]
    BadValue { key: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub glm_tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub slot_set: Vec<SlotLabel>,
    pub interrogative_whitelist: Vec<String>,
    pub top_k: usize,
    pub max_per_sentence: usize,
    pub quota: Option<Quota>,
    pub paraphrase: Option<ParaphraseConfig>,
    pub tolerances: Tolerances,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            slot_set: SlotLabel::ALL.to_vec(),
            interrogative_whitelist: DEFAULT_INTERROGATIVES.iter().map(|s| s.to_string()).collect(),
            top_k: 50,
            max_per_sentence: 3,
            quota: None,
            paraphrase: None,
            tolerances: Tolerances {
                glm_tol: 1e-8,
                max_iter: 100,
            },
        }
    }
}

impl Config {
    pub fn slot_config(&self) -> SlotConfig {
        SlotConfig {
            slots: self.slot_set.iter().copied().collect(),
            interrogatives: self.interrogative_whitelist.clone(),
        }
    }
}

const TOP: [&str; 7] = [
    "slot_set",
    "interrogative_whitelist",
    "top_k",
    "max_per_sentence",
    "quota",
    "paraphrase",
    "tolerances",
];
const QUOTA: [&str; 3] = ["concrete", "abstract", "relational"];
const PARAPHRASE: [&str; 4] = ["url", "timeout_ms", "retries", "max_in_flight"];
const TOLERANCES: [&str; 2] = ["glm_tol", "max_iter"];

fn unknown_keys(table: &toml::Table) -> Vec<String> {
    let mut bad = Vec::new();
    for (k, v) in table {
        let nested: Option<&[&str]> = match k.as_str() {
            "quota" => Some(&QUOTA),
            "paraphrase" => Some(&PARAPHRASE),
            "tolerances" => Some(&TOLERANCES),
            _ => None,
        };
        if !TOP.contains(&k.as_str()) {
            bad.push(k.clone());
        } else if let (Some(allowed), Some(inner)) = (nested, v.as_table()) {
            bad.extend(inner.keys().filter(|ik| !allowed.contains(&ik.as_str())).map(|ik| format!("{k}.{ik}")));
        }
    }
    bad
}

fn bad(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        reason: reason.into(),
    }
}

fn uint(v: &toml::Value, key: &str) -> Result<usize, ConfigError> {
    v.as_integer()
        .and_then(|i| usize::try_from(i).ok())
        .ok_or_else(|| bad(key, "expected a non-negative integer"))
}

fn float(v: &toml::Value, key: &str) -> Result<f64, ConfigError> {
    v.as_float()
        .or_else(|| v.as_integer().map(|i| i as f64))
        .ok_or_else(|| bad(key, "expected a number"))
}

fn strings(v: &toml::Value, key: &str) -> Result<Vec<String>, ConfigError> {
    v.as_array()
        .ok_or_else(|| bad(key, "expected a list of strings"))?
        .iter()
        .map(|s| s.as_str().map(str::to_string).ok_or_else(|| bad(key, "expected a list of strings")))
        .collect()
}

fn section<'a>(table: &'a toml::Table, key: &str) -> Result<Option<&'a toml::Table>, ConfigError> {
    table
        .get(key)
        .map(|v| v.as_table().ok_or_else(|| bad(key, "expected a table")))
        .transpose()
}

/// Parses TOML configuration text. Absent keys take defaults; any key
/// outside the schema is an error that lists every offender.
pub fn parse_config(text: &str) -> Result<Config, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Unreadable {
        path: "config".into(),
        reason: e.to_string(),
    })?;
    let unknown = unknown_keys(&table);
    if !unknown.is_empty() {
        return Err(ConfigError::BadKey(unknown));
    }
    let mut c = Config::default();
    if let Some(v) = table.get("slot_set") {
        c.slot_set = strings(v, "slot_set")?
            .iter()
            .map(|s| s.parse::<SlotLabel>().map_err(|e| bad("slot_set", e)))
            .collect::<Result<_, _>>()?;
        if c.slot_set.is_empty() {
            return Err(bad("slot_set", "must name at least one slot"));
        }
    }
    if let Some(v) = table.get("interrogative_whitelist") {
        c.interrogative_whitelist = strings(v, "interrogative_whitelist")?;
    }
    if let Some(v) = table.get("top_k") {
        c.top_k = uint(v, "top_k")?;
        if c.top_k == 0 {
            return Err(bad("top_k", "must be at least 1"));
        }
    }
    if let Some(v) = table.get("max_per_sentence") {
        c.max_per_sentence = uint(v, "max_per_sentence")?;
        if c.max_per_sentence == 0 {
            return Err(bad("max_per_sentence", "must be at least 1"));
        }
    }
    if let Some(q) = section(&table, "quota")? {
        let share = |k: &str| q.get(k).map_or(Ok(0.0), |v| float(v, &format!("quota.{k}")));
        let quota = Quota {
            concrete: share("concrete")?,
            abstract_: share("abstract")?,
            relational: share("relational")?,
        };
        quota.validate().map_err(|e| bad("quota", e))?;
        c.quota = Some(quota);
    }
    if let Some(p) = section(&table, "paraphrase")? {
        let url = p
            .get("url")
            .and_then(|v| v.as_str())
            .ok_or_else(|| bad("paraphrase.url", "required string"))?;
        let mut pc = ParaphraseConfig::new(url);
        if let Some(v) = p.get("timeout_ms") {
            pc.timeout_ms = uint(v, "paraphrase.timeout_ms")? as u64;
        }
        if let Some(v) = p.get("retries") {
            pc.retries = u32::try_from(uint(v, "paraphrase.retries")?).map_err(|_| bad("paraphrase.retries", "too large"))?;
        }
        if let Some(v) = p.get("max_in_flight") {
            pc.max_in_flight = uint(v, "paraphrase.max_in_flight")?.max(1);
        }
        c.paraphrase = Some(pc);
    }
    if let Some(t) = section(&table, "tolerances")? {
        if let Some(v) = t.get("glm_tol") {
            c.tolerances.glm_tol = float(v, "tolerances.glm_tol")?;
            if !c.tolerances.glm_tol.is_finite() || c.tolerances.glm_tol <= 0.0 {
                return Err(bad("tolerances.glm_tol", "must be positive"));
            }
        }
        if let Some(v) = t.get("max_iter") {
            c.tolerances.max_iter = uint(v, "tolerances.max_iter")?.max(1);
        }
    }
    Ok(c)
}

/// Loads configuration from `path`, else from `$GENQ_CONFIG`, else
/// defaults.
pub fn load_config(path: Option<&Path>) -> Result<Config, ConfigError> {
    let path: Option<PathBuf> = path
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os("GENQ_CONFIG").filter(|v| !v.is_empty()).map(PathBuf::from));
    let Some(path) = path else {
        return Ok(Config::default());
    };
    let text = std::fs::read_to_string(&path).map_err(|e| ConfigError::Unreadable {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    parse_config(&text)
}
