//! Co-training hyper-parameters and their JSON run-configuration format.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::labels::Thresholds;
use crate::transform::ViewTransform;

/// A count that may be unbounded (`"inf"` in configuration files).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Limit {
    Finite(usize),
    Infinite,
}

impl Limit {
    pub fn min_with(self, len: usize) -> usize {
        match self {
            Limit::Finite(m) => m.min(len),
            Limit::Infinite => len,
        }
    }
}

impl fmt::Display for Limit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Limit::Finite(m) => write!(f, "{m}"),
            Limit::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Limit {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Limit::Finite(m) => s.serialize_u64(*m as u64),
            Limit::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Limit {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(m) => Ok(Limit::Finite(m as usize)),
            Raw::S(s) if s == "inf" || s == "infinity" => Ok(Limit::Infinite),
            Raw::S(s) => Err(serde::de::Error::custom(format!(
                "expected a count or \"inf\", got `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopConfig {
    pub k_min: u32,
    pub k_max: u32,
    pub delta_k: u32,
    /// Stability threshold on the change of the stop metric, in mAP points.
    pub t_delta_map: f64,
}

impl Default for StopConfig {
    fn default() -> Self {
        StopConfig {
            k_min: 20,
            k_max: 30,
            delta_k: 5,
            t_delta_map: 2.0,
        }
    }
}

/// Minimum frame distances for sequence data: within one cycle, and against earlier cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqConfig {
    pub delta_t1: i64,
    pub delta_t2: i64,
}

impl Default for SeqConfig {
    fn default() -> Self {
        SeqConfig {
            delta_t1: 5,
            delta_t2: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConfigFile", into = "ConfigFile")]
pub struct CoTrainConfig {
    pub thresholds: Thresholds,
    /// Images drawn at random from each fresh set (`N`).
    pub sample_size: usize,
    /// Images each receiver keeps per cycle (`n`).
    pub keep_least_confident: usize,
    /// Images each sender shares per cycle (`m`).
    pub share_most_confident: Limit,
    pub stop: StopConfig,
    pub seq: Option<SeqConfig>,
    pub view2_transform: ViewTransform,
    pub rng_seed: u64,
}

impl Default for CoTrainConfig {
    fn default() -> Self {
        CoTrainConfig {
            thresholds: Thresholds::default(),
            sample_size: 500,
            keep_least_confident: 100,
            share_most_confident: Limit::Infinite,
            stop: StopConfig::default(),
            seq: None,
            view2_transform: ViewTransform::IDENTITY,
            rng_seed: 0,
        }
    }
}

impl CoTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        self.view2_transform.validate()?;
        if self.sample_size == 0 || self.keep_least_confident == 0 {
            return Err(Error::Config("N and n must be positive".into()));
        }
        if self.keep_least_confident > self.sample_size {
            return Err(Error::Config(format!(
                "n ({}) must not exceed N ({})",
                self.keep_least_confident, self.sample_size
            )));
        }
        if self.share_most_confident == Limit::Finite(0) {
            return Err(Error::Config("m must be positive or \"inf\"".into()));
        }
        let s = &self.stop;
        if s.k_min > s.k_max {
            return Err(Error::Config(format!("K_min ({}) exceeds K_max ({})", s.k_min, s.k_max)));
        }
        if s.delta_k > s.k_min {
            return Err(Error::Config(format!(
                "delta_K ({}) exceeds K_min ({})",
                s.delta_k, s.k_min
            )));
        }
        if s.k_max == 0 {
            return Err(Error::Config("K_max must be at least 1".into()));
        }
        if !(0.0..=100.0).contains(&s.t_delta_map) {
            return Err(Error::Config("T_delta_map must lie in [0,100]".into()));
        }
        if let Some(seq) = self.seq {
            if seq.delta_t1 < 0 || seq.delta_t2 < 0 {
                return Err(Error::Config("frame distances must be non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut de = serde_json::Deserializer::from_str(&text);
        let cfg: CoTrainConfig =
            serde_path_to_error::deserialize(&mut de).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                message: format!("at `{}`: {}", e.path(), e.inner()),
            })?;
        Ok(cfg)
    }
}

#[derive(Serialize, Deserialize)]
#[allow(non_snake_case)]
struct ConfigFile {
    T: Thresholds,
    N: usize,
    n: usize,
    m: Limit,
    K_min: u32,
    K_max: u32,
    delta_K: u32,
    T_delta_map: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta_t1: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta_t2: Option<i64>,
    #[serde(default)]
    view2_transform: ViewTransform,
    #[serde(default)]
    rng_seed: u64,
}

impl TryFrom<ConfigFile> for CoTrainConfig {
    type Error = Error;

    fn try_from(f: ConfigFile) -> Result<Self> {
        let seq = match (f.delta_t1, f.delta_t2) {
            (None, None) => None,
            (a, b) => Some(SeqConfig {
                delta_t1: a.unwrap_or(0),
                delta_t2: b.unwrap_or(0),
            }),
        };
        let cfg = CoTrainConfig {
            thresholds: f.T,
            sample_size: f.N,
            keep_least_confident: f.n,
            share_most_confident: f.m,
            stop: StopConfig {
                k_min: f.K_min,
                k_max: f.K_max,
                delta_k: f.delta_K,
                t_delta_map: f.T_delta_map,
            },
            seq,
            view2_transform: f.view2_transform,
            rng_seed: f.rng_seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl From<CoTrainConfig> for ConfigFile {
    fn from(c: CoTrainConfig) -> Self {
        ConfigFile {
            T: c.thresholds,
            N: c.sample_size,
            n: c.keep_least_confident,
            m: c.share_most_confident,
            K_min: c.stop.k_min,
            K_max: c.stop.k_max,
            delta_K: c.stop.delta_k,
            T_delta_map: c.stop.t_delta_map,
            delta_t1: c.seq.map(|s| s.delta_t1),
            delta_t2: c.seq.map(|s| s.delta_t2),
            view2_transform: c.view2_transform,
            rng_seed: c.rng_seed,
        }
    }
}
