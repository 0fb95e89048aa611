use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::agents::TrainConfig;
use crate::baselines::BaselineConfig;
use crate::environment::WorldConfig;
use crate::error::{Error, Result};
use crate::evaluation::config_hash;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const PROFILE_ENV: &str = "ICSRL_PROFILE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    Full,
}

impl Profile {
    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Full => "full",
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            other => Err(Error::validation(format!("unknown profile {other:?} (expected desk or full)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
    pub seed_base: u64,
    /// Worker threads for Monte-Carlo runs; 0 uses every core.
    pub threads: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 50,
            seed_base: 1_000_000,
            threads: 0,
        }
    }
}

/// Fully resolved experiment settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub world: WorldConfig,
    pub train: TrainConfig,
    pub baselines: BaselineConfig,
    pub eval: EvalConfig,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    schema_version: u32,
    #[serde(default)]
    profile: Option<Profile>,
    #[serde(default)]
    overrides: Option<Value>,
}

impl ExperimentConfig {
    pub fn defaults(profile: Profile) -> Self {
        let (world, train) = match profile {
            Profile::Desk => (WorldConfig::desk_scale(), TrainConfig::desk_scale()),
            Profile::Full => (WorldConfig::full_scale(), TrainConfig::full_scale()),
        };
        Self {
            profile,
            world,
            train,
            baselines: BaselineConfig::default(),
            eval: EvalConfig::default(),
            seeds: vec![0, 1, 2, 3, 4],
        }
    }

    /// Resolves a config document. The profile is taken from `profile`
    /// when given, else from the document, else desk.
    pub fn from_document(doc: &Value, profile: Option<Profile>) -> Result<Self> {
        let parsed: Document = serde_json::from_value(doc.clone())
            .map_err(|e| Error::Validation(format!("config: {e}")))?;
        if parsed.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Validation(format!(
                "config.schema_version: expected {CONFIG_SCHEMA_VERSION}, got {}",
                parsed.schema_version
            )));
        }
        let profile = profile.or(parsed.profile).unwrap_or(Profile::Desk);
        let mut base = sections(&Self::defaults(profile))?;
        if let Some(over) = &parsed.overrides {
            merge(&mut base, over, "overrides")?;
        }
        let mut full = base;
        full.as_object_mut()
            .expect("sections form an object")
            .insert("profile".into(), json!(profile));
        let cfg: Self = serde_path_to_error::deserialize(full).map_err(|e| {
            let path = e.path().to_string();
            Error::Validation(format!("overrides.{path}: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or starts from an empty document) and resolves it.
    /// Profile precedence: `flag`, then `env`, then the document.
    pub fn load(path: Option<&Path>, flag: Option<Profile>, env: Option<&str>) -> Result<Self> {
        let doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Validation(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Validation(format!("config {} is not valid JSON: {e}", p.display())))?
            }
            None => json!({ "schema_version": CONFIG_SCHEMA_VERSION }),
        };
        let env_profile = match env {
            Some(s) if !s.is_empty() => Some(
                s.parse::<Profile>()
                    .map_err(|_| Error::Validation(format!("{PROFILE_ENV}={s:?}: expected desk or full")))?,
            ),
            _ => None,
        };
        Self::from_document(&doc, flag.or(env_profile))
    }

    /// Document form that resolves back to `self`.
    pub fn to_document(&self) -> Result<Value> {
        Ok(json!({
            "schema_version": CONFIG_SCHEMA_VERSION,
            "profile": self.profile,
            "overrides": sections(self)?,
        }))
    }

    pub fn hash(&self) -> Result<String> {
        config_hash(&self.to_document()?)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.train.validate()?;
        self.baselines.validate()?;
        if self.eval.episodes == 0 {
            return Err(Error::validation("eval.episodes: must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::validation("seeds: need at least one seed"));
        }
        Ok(())
    }
}

fn sections(cfg: &ExperimentConfig) -> Result<Value> {
    let mut v = serde_json::to_value(cfg)?;
    v.as_object_mut().expect("struct serializes to an object").remove("profile");
    Ok(v)
}

/// Recursively overlays `over` onto `base`. Every key must already exist.
fn merge(base: &mut Value, over: &Value, path: &str) -> Result<()> {
    let Value::Object(over) = over else {
        return Err(Error::Validation(format!("{path}: expected an object")));
    };
    let base = base
        .as_object_mut()
        .ok_or_else(|| Error::Validation(format!("{path}: not a section")))?;
    merge_map(base, over, path)
}

fn merge_map(base: &mut Map<String, Value>, over: &Map<String, Value>, path: &str) -> Result<()> {
    for (k, v) in over {
        let here = format!("{path}.{k}");
        match base.get_mut(k) {
            None => return Err(Error::Validation(format!("{here}: unknown setting"))),
            Some(Value::Object(b)) if v.is_object() => merge_map(b, v.as_object().expect("checked"), &here)?,
            Some(slot) => *slot = v.clone(),
        }
    }
    Ok(())
}
