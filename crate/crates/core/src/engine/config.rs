//! Pruning configuration document.
//!
//! ```toml
//! order = "natural"            # or "by_nonzero_cost"
//!
//! [layers.conv2]
//! predictor = "statstest"      # "none" | "threshold" | "statstest"
//! alpha = 0.1                  # statstest level; 0 disables pruning
//! k = 32
//! schedule = "once_at_k"       # or "every_k"
//! disable_ratio = 0.3          # optional, in [0.1, 0.5]
//!
//! [layers.fc1]
//! predictor = "threshold"
//! t = -0.05                    # -inf disables pruning
//!
//! [head]
//! predictor = "statstest"
//! alpha = 0.1
//! ranks = [2, 3]
//! k = 160
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LayerKind, Model};
use crate::predict::Schedule;

pub const DEFAULT_RELU_K: usize = 32;
pub const DEFAULT_HEAD_K: usize = 160;
pub const DISABLE_RATIO_RANGE: (f64, f64) = (0.1, 0.5);

/// Order in which the terms of a reduction are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TermOrder {
    #[default]
    Natural,
    /// Cheapest terms first, by the number of nonzero weights feeding each input channel.
    ByNonzeroCost,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReluPredictorKind {
    None,
    Threshold { t: f64 },
    StatsTest { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReluPredictorCfg {
    pub kind: ReluPredictorKind,
    pub k: usize,
    pub schedule: Schedule,
}

impl ReluPredictorCfg {
    pub fn none() -> Self {
        Self {
            kind: ReluPredictorKind::None,
            k: DEFAULT_RELU_K,
            schedule: Schedule::OnceAtK,
        }
    }

    pub fn threshold(t: f64, k: usize) -> Self {
        Self {
            kind: ReluPredictorKind::Threshold { t },
            k,
            schedule: Schedule::OnceAtK,
        }
    }

    pub fn statstest(alpha: f64, k: usize) -> Self {
        Self {
            kind: ReluPredictorKind::StatsTest { alpha },
            k,
            schedule: Schedule::OnceAtK,
        }
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }

    fn validate(&self) -> Result<()> {
        match self.kind {
            ReluPredictorKind::None => {}
            ReluPredictorKind::Threshold { t } => {
                if t.is_nan() {
                    return Err(Error::Config("threshold T is NaN".into()));
                }
                if self.k == 0 {
                    return Err(Error::Config("check position k must be at least 1".into()));
                }
            }
            ReluPredictorKind::StatsTest { alpha } => {
                if !(0.0..=0.5).contains(&alpha) {
                    return Err(Error::Config(format!("alpha {alpha} outside [0, 0.5]")));
                }
                if self.k < 2 {
                    return Err(Error::Config(
                        "the statistical test needs k of at least 2".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for ReluPredictorCfg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ReluPredictorKind::None => write!(f, "none"),
            ReluPredictorKind::Threshold { t } => write!(f, "threshold:t={t}:k={}", self.k),
            ReluPredictorKind::StatsTest { alpha } => {
                write!(f, "statstest:alpha={alpha}:k={}", self.k)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPredictor", into = "RawPredictor")]
pub struct LayerPruneCfg {
    pub predictor: ReluPredictorCfg,
    pub disable_ratio: Option<f64>,
}

impl LayerPruneCfg {
    pub fn new(predictor: ReluPredictorCfg) -> Self {
        Self {
            predictor,
            disable_ratio: None,
        }
    }

    pub fn with_disable_ratio(mut self, r: f64) -> Self {
        self.disable_ratio = Some(r);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeadPredictorKind {
    None,
    /// `thresholds[j]` applies to rank `j + 2`.
    Threshold { thresholds: Vec<f64> },
    StatsTest { alpha: f64, ranks: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPredictor", into = "RawPredictor")]
pub struct HeadPredictorCfg {
    pub kind: HeadPredictorKind,
    pub k: usize,
    pub schedule: Schedule,
}

impl HeadPredictorCfg {
    pub fn statstest(alpha: f64, ranks: Vec<usize>, k: usize) -> Self {
        Self {
            kind: HeadPredictorKind::StatsTest { alpha, ranks },
            k,
            schedule: Schedule::OnceAtK,
        }
    }

    pub fn threshold(thresholds: Vec<f64>, k: usize) -> Self {
        Self {
            kind: HeadPredictorKind::Threshold { thresholds },
            k,
            schedule: Schedule::OnceAtK,
        }
    }

    fn validate(&self, classes: usize) -> Result<()> {
        match &self.kind {
            HeadPredictorKind::None => Ok(()),
            HeadPredictorKind::Threshold { thresholds } => {
                if self.k == 0 {
                    return Err(Error::Config("head check position must be at least 1".into()));
                }
                if thresholds.is_empty() || thresholds.len() + 1 > classes {
                    return Err(Error::Config(format!(
                        "{} head thresholds for {classes} classes",
                        thresholds.len()
                    )));
                }
                if thresholds.iter().any(|t| t.is_nan() || *t < 0.0) {
                    return Err(Error::Config("head thresholds must be non-negative".into()));
                }
                Ok(())
            }
            HeadPredictorKind::StatsTest { alpha, ranks } => {
                if self.k < 2 {
                    return Err(Error::Config(
                        "the statistical test needs k of at least 2".into(),
                    ));
                }
                if !(0.0..=0.5).contains(alpha) {
                    return Err(Error::Config(format!("alpha {alpha} outside [0, 0.5]")));
                }
                if ranks.is_empty() || ranks.iter().any(|&r| r < 2 || r > classes) {
                    return Err(Error::Config(format!(
                        "tested ranks {ranks:?} must lie in 2..={classes}"
                    )));
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for HeadPredictorCfg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            HeadPredictorKind::None => write!(f, "none"),
            HeadPredictorKind::Threshold { thresholds } => {
                write!(f, "threshold:t={thresholds:?}:k={}", self.k)
            }
            HeadPredictorKind::StatsTest { alpha, ranks } => {
                write!(f, "statstest:alpha={alpha}:ranks={ranks:?}:k={}", self.k)
            }
        }
    }
}

/// Flat on-disk form shared by layer and head entries.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPredictor {
    predictor: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    thresholds: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ranks: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(default)]
    schedule: Schedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    disable_ratio: Option<f64>,
}

impl RawPredictor {
    fn plain(predictor: &str, k: usize, schedule: Schedule) -> Self {
        Self {
            predictor: predictor.to_string(),
            t: None,
            thresholds: None,
            alpha: None,
            ranks: None,
            k: Some(k),
            schedule,
            disable_ratio: None,
        }
    }
}

fn required<T>(value: Option<T>, field: &str, predictor: &str) -> Result<T> {
    value.ok_or_else(|| Error::Config(format!("`{predictor}` predictor needs `{field}`")))
}

impl TryFrom<RawPredictor> for LayerPruneCfg {
    type Error = Error;

    fn try_from(raw: RawPredictor) -> Result<Self> {
        if raw.thresholds.is_some() || raw.ranks.is_some() {
            return Err(Error::Config(
                "`thresholds`/`ranks` only apply to the head".into(),
            ));
        }
        let kind = match raw.predictor.as_str() {
            "none" => ReluPredictorKind::None,
            "threshold" => ReluPredictorKind::Threshold {
                t: required(raw.t, "t", "threshold")?,
            },
            "statstest" => ReluPredictorKind::StatsTest {
                alpha: required(raw.alpha, "alpha", "statstest")?,
            },
            other => return Err(Error::Config(format!("unknown predictor `{other}`"))),
        };
        let cfg = LayerPruneCfg {
            predictor: ReluPredictorCfg {
                kind,
                k: raw.k.unwrap_or(DEFAULT_RELU_K),
                schedule: raw.schedule,
            },
            disable_ratio: raw.disable_ratio,
        };
        cfg.predictor.validate()?;
        Ok(cfg)
    }
}

impl From<LayerPruneCfg> for RawPredictor {
    fn from(cfg: LayerPruneCfg) -> Self {
        let p = cfg.predictor;
        let mut raw = match p.kind {
            ReluPredictorKind::None => RawPredictor::plain("none", p.k, p.schedule),
            ReluPredictorKind::Threshold { t } => RawPredictor {
                t: Some(t),
                ..RawPredictor::plain("threshold", p.k, p.schedule)
            },
            ReluPredictorKind::StatsTest { alpha } => RawPredictor {
                alpha: Some(alpha),
                ..RawPredictor::plain("statstest", p.k, p.schedule)
            },
        };
        raw.disable_ratio = cfg.disable_ratio;
        raw
    }
}

impl TryFrom<RawPredictor> for HeadPredictorCfg {
    type Error = Error;

    fn try_from(raw: RawPredictor) -> Result<Self> {
        if raw.t.is_some() || raw.disable_ratio.is_some() {
            return Err(Error::Config(
                "head predictors take `thresholds`/`alpha`+`ranks`".into(),
            ));
        }
        let kind = match raw.predictor.as_str() {
            "none" => HeadPredictorKind::None,
            "threshold" => HeadPredictorKind::Threshold {
                thresholds: required(raw.thresholds, "thresholds", "threshold")?,
            },
            "statstest" => HeadPredictorKind::StatsTest {
                alpha: required(raw.alpha, "alpha", "statstest")?,
                ranks: raw.ranks.unwrap_or_else(|| vec![2, 3]),
            },
            other => return Err(Error::Config(format!("unknown predictor `{other}`"))),
        };
        Ok(HeadPredictorCfg {
            kind,
            k: raw.k.unwrap_or(DEFAULT_HEAD_K),
            schedule: raw.schedule,
        })
    }
}

impl From<HeadPredictorCfg> for RawPredictor {
    fn from(cfg: HeadPredictorCfg) -> Self {
        match cfg.kind {
            HeadPredictorKind::None => RawPredictor::plain("none", cfg.k, cfg.schedule),
            HeadPredictorKind::Threshold { thresholds } => RawPredictor {
                thresholds: Some(thresholds),
                ..RawPredictor::plain("threshold", cfg.k, cfg.schedule)
            },
            HeadPredictorKind::StatsTest { alpha, ranks } => RawPredictor {
                alpha: Some(alpha),
                ranks: Some(ranks),
                ..RawPredictor::plain("statstest", cfg.k, cfg.schedule)
            },
        }
    }
}

/// Per-layer predictors, head predictor and term order for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PruneConfig {
    #[serde(default)]
    pub order: TermOrder,
    #[serde(default)]
    pub layers: BTreeMap<String, LayerPruneCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<HeadPredictorCfg>,
}

impl PruneConfig {
    /// No predictors anywhere: the unoptimized baseline.
    pub fn none() -> Self {
        Self::default()
    }

    pub fn with_layer(mut self, name: &str, cfg: LayerPruneCfg) -> Self {
        self.layers.insert(name.to_string(), cfg);
        self
    }

    pub fn with_head(mut self, head: HeadPredictorCfg) -> Self {
        self.head = Some(head);
        self
    }

    pub fn with_order(mut self, order: TermOrder) -> Self {
        self.order = order;
        self
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }

    /// Checks that every entry names a prunable layer of `model` and that
    /// all parameters lie in range.
    pub fn validate(&self, model: &Model) -> Result<()> {
        let prunable = prunable_layers(model);
        for (name, cfg) in &self.layers {
            if !prunable.iter().any(|p| p == name) {
                return Err(Error::Config(format!(
                    "`{name}` is not a dense/conv layer followed by a ReLU (prunable: {prunable:?})"
                )));
            }
            cfg.predictor.validate()?;
            if let Some(r) = cfg.disable_ratio {
                if !(DISABLE_RATIO_RANGE.0..=DISABLE_RATIO_RANGE.1).contains(&r) {
                    return Err(Error::Config(format!(
                        "disable ratio {r} outside [{}, {}]",
                        DISABLE_RATIO_RANGE.0, DISABLE_RATIO_RANGE.1
                    )));
                }
            }
        }
        if let Some(head) = &self.head {
            if !matches!(
                model.layers().last().map(|l| &l.kind),
                Some(LayerKind::PredictionHead { .. })
            ) {
                return Err(Error::Config("model has no prediction head".into()));
            }
            head.validate(model.classes())?;
        }
        Ok(())
    }
}

/// Names of dense/conv layers whose output reaches a ReLU, possibly through a batchnorm.
pub fn prunable_layers(model: &Model) -> Vec<String> {
    let layers = model.layers();
    let mut out = Vec::new();
    for (i, layer) in layers.iter().enumerate() {
        if !matches!(layer.kind, LayerKind::Dense { .. } | LayerKind::Conv2d { .. }) {
            continue;
        }
        let mut j = i + 1;
        if matches!(layers.get(j).map(|l| &l.kind), Some(LayerKind::Batchnorm { .. })) {
            j += 1;
        }
        if matches!(layers.get(j).map(|l| &l.kind), Some(LayerKind::Relu)) {
            out.push(layer.name.clone());
        }
    }
    out
}
