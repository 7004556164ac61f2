//! Flat training configuration, key/value overrides and ablation wiring.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Modality;
use crate::error::{Error, Result};
use crate::esl::CollabMode;
use crate::objectives::NegativeScope;

/// Input space of the hyperedge dependency product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSpace {
    #[default]
    Raw,
    Projected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub d: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Item-level attention layers.
    pub l1: usize,
    /// Bundle-level attention layers.
    pub l2: usize,
    /// Graph attention contexts.
    pub n: usize,
    /// Hypergraph propagation depth.
    pub z: usize,
    /// Hyperedges per modality.
    pub h: usize,
    pub epsilon: i64,
    pub tau_gumbel: f64,
    pub tau_infonce: f64,
    pub mask_fraction: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub rng_seed: u64,
    pub no_crse: bool,
    pub no_cbse: bool,
    pub no_isl: bool,
    pub no_mad: bool,
    pub no_text: bool,
    pub no_visual: bool,
    pub collab_mode: CollabMode,
    pub negative_scope: NegativeScope,
    pub p_norm: f64,
    pub leaky_slope: f64,
    pub isl_feature_space: FeatureSpace,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d: 64,
            batch_size: 1024,
            learning_rate: 1e-3,
            lambda1: 0.01,
            lambda2: 1e-5,
            beta: 0.5,
            gamma: 0.5,
            l1: 1,
            l2: 1,
            n: 2,
            z: 1,
            h: 8,
            epsilon: 1,
            tau_gumbel: 0.2,
            tau_infonce: 0.2,
            mask_fraction: 0.5,
            max_epochs: 500,
            patience: 20,
            rng_seed: 42,
            no_crse: false,
            no_cbse: false,
            no_isl: false,
            no_mad: false,
            no_text: false,
            no_visual: false,
            collab_mode: CollabMode::Stacked,
            negative_scope: NegativeScope::Full,
            p_norm: 2.0,
            leaky_slope: 0.2,
            isl_feature_space: FeatureSpace::Raw,
        }
    }
}

fn canonical_key(key: &str) -> String {
    key.trim_start_matches("--").replace('-', "_").to_ascii_lowercase()
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn keys() -> Vec<String> {
        match toml::Value::try_from(TrainConfig::default()).expect("config serialises") {
            toml::Value::Table(t) => t.keys().cloned().collect(),
            _ => unreachable!(),
        }
    }

    /// Sets one key from its textual value, parsed according to the key's
    /// type. Unknown keys and unparsable values are configuration errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = canonical_key(key);
        let mut table = match toml::Value::try_from(&*self).expect("config serialises") {
            toml::Value::Table(t) => t,
            _ => unreachable!(),
        };
        let current = table
            .get(&key)
            .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
        let bad = || Error::Config(format!("invalid value `{value}` for `{key}`"));
        let parsed = match current {
            toml::Value::Integer(_) => toml::Value::Integer(value.parse().map_err(|_| bad())?),
            toml::Value::Float(_) => toml::Value::Float(value.parse().map_err(|_| bad())?),
            toml::Value::Boolean(_) => toml::Value::Boolean(value.parse().map_err(|_| bad())?),
            _ => toml::Value::String(value.to_string()),
        };
        table.insert(key, parsed);
        *self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let key = canonical_key(key);
        match toml::Value::try_from(self).ok()? {
            toml::Value::Table(t) => t.get(&key).map(|v| match v {
                toml::Value::String(s) => s.clone(),
                other => other.to_string(),
            }),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("d", self.d),
            ("batch_size", self.batch_size),
            ("l1", self.l1),
            ("l2", self.l2),
            ("n", self.n),
            ("z", self.z),
            ("h", self.h),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
        ] {
            if v == 0 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        if self.epsilon < 1 {
            return fail(format!("epsilon must be at least 1, got {}", self.epsilon));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("leaky_slope", self.leaky_slope)] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        for (name, v) in [("beta", self.beta), ("gamma", self.gamma)] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        for (name, v) in [("tau_gumbel", self.tau_gumbel), ("tau_infonce", self.tau_infonce)] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.mask_fraction > 0.0 && self.mask_fraction < 1.0) {
            return fail(format!("mask_fraction must lie in (0, 1), got {}", self.mask_fraction));
        }
        if !(self.p_norm >= 1.0 && self.p_norm.is_finite()) {
            return fail(format!("p_norm must be at least 1, got {}", self.p_norm));
        }
        if self.no_crse && self.no_cbse {
            return fail("no_crse and no_cbse together leave no explicit encoder".into());
        }
        if self.no_text && self.no_visual {
            return fail("no_text and no_visual together remove every modality".into());
        }
        Ok(())
    }

    pub fn ablate(&mut self, a: Ablation) {
        match a {
            Ablation::NoCrse => self.no_crse = true,
            Ablation::NoCbse => self.no_cbse = true,
            Ablation::NoIsl => self.no_isl = true,
            Ablation::NoMad => self.no_mad = true,
            Ablation::NoText => self.no_text = true,
            Ablation::NoVisual => self.no_visual = true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Ablation {
    NoCrse,
    NoCbse,
    NoIsl,
    NoMad,
    NoText,
    NoVisual,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::NoCrse,
        Ablation::NoCbse,
        Ablation::NoIsl,
        Ablation::NoMad,
        Ablation::NoText,
        Ablation::NoVisual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoCrse => "no_crse",
            Ablation::NoCbse => "no_cbse",
            Ablation::NoIsl => "no_isl",
            Ablation::NoMad => "no_mad",
            Ablation::NoText => "no_text",
            Ablation::NoVisual => "no_visual",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = canonical_key(s);
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown ablation `{s}`")))
    }
}

/// Which encoders and modalities a model instance uses.
#[derive(Debug, Clone, PartialEq)]
pub struct Wiring {
    pub modalities: Vec<Modality>,
    pub characteristic: bool,
    pub collaborative: bool,
    pub implicit: bool,
    pub gamma: f64,
    pub lambda1: f64,
}

/// Resolves ablation flags against the modalities the data provides.
pub fn apply_ablation(config: &TrainConfig, available: &[Modality]) -> Result<Wiring> {
    config.validate()?;
    let modalities: Vec<Modality> = available
        .iter()
        .copied()
        .filter(|m| match m {
            Modality::Text => !config.no_text,
            Modality::Visual => !config.no_visual,
        })
        .collect();
    if modalities.is_empty() {
        return Err(Error::Config("no modality left after ablation".into()));
    }
    let gamma = if config.no_crse {
        0.0
    } else if config.no_cbse {
        1.0
    } else {
        config.gamma
    };
    Ok(Wiring {
        modalities,
        characteristic: !config.no_crse,
        collaborative: !config.no_cbse,
        implicit: !config.no_isl,
        gamma,
        lambda1: if config.no_mad || config.no_isl { 0.0 } else { config.lambda1 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!((c.d, c.batch_size, c.learning_rate, c.lambda2), (64, 1024, 1e-3, 1e-5));
        assert_eq!((c.tau_gumbel, c.tau_infonce, c.mask_fraction), (0.2, 0.2, 0.5));
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(TrainConfig::from_toml("bogus = 1").is_err());
        assert!(TrainConfig::default().set("bogus", "1").is_err());
    }

    #[test]
    fn set_parses_by_type() {
        let mut c = TrainConfig::default();
        c.set("gamma", "0.3").unwrap();
        c.set("--H", "16").unwrap();
        c.set("no-mad", "true").unwrap();
        c.set("collab_mode", "parallel").unwrap();
        c.set("learning_rate", "0").unwrap();
        assert_eq!((c.gamma, c.h, c.no_mad, c.collab_mode), (0.3, 16, true, CollabMode::Parallel));
        assert_eq!(c.learning_rate, 0.0);
        assert!(c.set("h", "x").is_err());
        assert!(c.set("collab_mode", "diagonal").is_err());
        assert_eq!(c.get("gamma").as_deref(), Some("0.3"));
    }

    #[test]
    fn domains_enforced() {
        for (k, v) in [("gamma", "1.5"), ("beta", "-0.1"), ("tau_gumbel", "0"), ("h", "0"), ("epsilon", "0")] {
            let mut c = TrainConfig::default();
            c.set(k, v).unwrap();
            assert!(c.validate().is_err(), "{k}={v}");
        }
    }

    #[test]
    fn ablation_wiring() {
        let both = [Modality::Text, Modality::Visual];
        let mut c = TrainConfig::default();
        c.ablate(Ablation::NoCrse);
        let w = apply_ablation(&c, &both).unwrap();
        assert_eq!((w.gamma, w.characteristic, w.collaborative), (0.0, false, true));
        c.ablate(Ablation::NoCbse);
        assert!(apply_ablation(&c, &both).is_err());

        let mut c = TrainConfig::default();
        c.ablate("no_cbse".parse().unwrap());
        let w = apply_ablation(&c, &both).unwrap();
        assert_eq!((w.gamma, w.collaborative), (1.0, false));

        let mut c = TrainConfig::default();
        c.ablate(Ablation::NoMad);
        assert_eq!(apply_ablation(&c, &both).unwrap().lambda1, 0.0);

        let mut c = TrainConfig::default();
        c.ablate(Ablation::NoIsl);
        let w = apply_ablation(&c, &both).unwrap();
        assert!(!w.implicit && w.lambda1 == 0.0);

        let mut c = TrainConfig::default();
        c.ablate(Ablation::NoText);
        assert_eq!(apply_ablation(&c, &both).unwrap().modalities, vec![Modality::Visual]);
        assert!(apply_ablation(&c, &[Modality::Text]).is_err());
        assert!("no_everything".parse::<Ablation>().is_err());
    }
}
