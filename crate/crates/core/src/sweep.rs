//! Seeded random search over per-layer predictor parameters, Pareto-slice
//! selection on (fidelity, FLOPs), and confirmation on held-out data.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{
    EvalOptions, Evaluator, HeadPredictorCfg, LayerPruneCfg, PruneConfig, ReluPredictorCfg,
    TermOrder, DEFAULT_HEAD_K, DEFAULT_RELU_K,
};
use crate::error::{Error, Result};
use crate::model::{Dataset, Model};
use crate::predict::Schedule;
use crate::rng::{stream_rng, streams};

pub const DEFAULT_T_MIN: f64 = -30.0;
pub const ALPHA_MAX: f64 = 0.5;
/// Lower end of the log-uniform α draw when the range starts at 0.
pub const ALPHA_FLOOR: f64 = 1e-4;
pub const DEFAULT_SLICES: usize = 5;

fn default_t_min() -> f64 {
    DEFAULT_T_MIN
}
fn default_alpha_max() -> f64 {
    ALPHA_MAX
}
fn default_relu_k() -> usize {
    DEFAULT_RELU_K
}
fn default_head_k() -> usize {
    DEFAULT_HEAD_K
}
fn default_ranks() -> Vec<usize> {
    vec![2]
}

/// Range of one ReLU layer's predictor parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "predictor", rename_all = "snake_case")]
pub enum ParamRange {
    Threshold {
        #[serde(default = "default_t_min")]
        t_min: f64,
        #[serde(default)]
        t_max: f64,
    },
    Statstest {
        #[serde(default)]
        alpha_min: f64,
        #[serde(default = "default_alpha_max")]
        alpha_max: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpace {
    #[serde(flatten)]
    pub range: ParamRange,
    #[serde(default = "default_relu_k")]
    pub k: usize,
    #[serde(default)]
    pub schedule: Schedule,
    /// Range of the disable ratio `r`, for statically pruned models.
    #[serde(default)]
    pub disable_ratio: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "predictor", rename_all = "snake_case")]
pub enum HeadRange {
    /// One margin per rank `2..=ranks+1`, each drawn from `[t_min, t_max]`.
    Threshold {
        #[serde(default)]
        t_min: f64,
        t_max: f64,
        #[serde(default = "one")]
        ranks: usize,
    },
    Statstest {
        #[serde(default)]
        alpha_min: f64,
        #[serde(default = "default_alpha_max")]
        alpha_max: f64,
        #[serde(default = "default_ranks")]
        ranks: Vec<usize>,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpace {
    #[serde(flatten)]
    pub range: HeadRange,
    #[serde(default = "default_head_k")]
    pub k: usize,
    #[serde(default)]
    pub schedule: Schedule,
}

/// Per-layer parameter ranges; layers not listed run unpruned.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SearchSpace {
    #[serde(default)]
    pub order: TermOrder,
    #[serde(default)]
    pub layers: BTreeMap<String, LayerSpace>,
    #[serde(default)]
    pub head: Option<HeadSpace>,
}

fn check_range(what: &str, lo: f64, hi: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::Config(format!("{what} range [{lo}, {hi}] is empty or not finite")));
    }
    Ok(())
}

fn check_alpha(what: &str, lo: f64, hi: f64) -> Result<()> {
    check_range(what, lo, hi)?;
    if lo < 0.0 || hi > ALPHA_MAX {
        return Err(Error::Config(format!(
            "{what} range [{lo}, {hi}] must lie within [0, {ALPHA_MAX}]"
        )));
    }
    Ok(())
}

/// Uniform on `[lo, hi]`, exact at degenerate ranges.
fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Log-uniform on `[max(lo, ALPHA_FLOOR), hi]`; `hi == 0` pins the
/// never-prune sentinel.
fn log_uniform_alpha(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi == 0.0 {
        return 0.0;
    }
    let lo = lo.max(ALPHA_FLOOR).min(hi);
    uniform(rng, lo.ln(), hi.ln()).exp().clamp(lo, hi)
}

impl SearchSpace {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let space: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        space.check()?;
        Ok(space)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Threshold search over every prunable layer with `T ∈ [t_min, 0]`.
    pub fn thresholds(layers: &[String], t_min: f64) -> Self {
        Self {
            layers: layers
                .iter()
                .map(|l| {
                    let s = LayerSpace {
                        range: ParamRange::Threshold { t_min, t_max: 0.0 },
                        k: DEFAULT_RELU_K,
                        schedule: Schedule::OnceAtK,
                        disable_ratio: None,
                    };
                    (l.clone(), s)
                })
                .collect(),
            ..Self::default()
        }
    }

    fn check(&self) -> Result<()> {
        for (name, l) in &self.layers {
            match l.range {
                ParamRange::Threshold { t_min, t_max } => check_range(&format!("{name} T"), t_min, t_max)?,
                ParamRange::Statstest { alpha_min, alpha_max } => {
                    check_alpha(&format!("{name} alpha"), alpha_min, alpha_max)?
                }
            }
            if let Some([lo, hi]) = l.disable_ratio {
                check_range(&format!("{name} r"), lo, hi)?;
                if lo < 0.1 || hi > 0.5 {
                    return Err(Error::Config(format!("{name} r range must lie within [0.1, 0.5]")));
                }
            }
        }
        if let Some(h) = &self.head {
            match &h.range {
                HeadRange::Threshold { t_min, t_max, ranks } => {
                    check_range("head T", *t_min, *t_max)?;
                    if *t_min < 0.0 || *ranks == 0 {
                        return Err(Error::Config("head margins must be non-negative with at least one rank".into()));
                    }
                }
                HeadRange::Statstest { alpha_min, alpha_max, .. } => {
                    check_alpha("head alpha", *alpha_min, *alpha_max)?
                }
            }
        }
        Ok(())
    }

    /// Checks ranges and that every sampled configuration fits `model`.
    pub fn validate(&self, model: &Model) -> Result<()> {
        self.check()?;
        let mut rng = stream_rng(0, streams::SEARCH);
        self.sample(&mut rng).0.validate(model)
    }

    /// CSV column names of the sampled parameters, in sampling order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (name, l) in &self.layers {
            names.push(match l.range {
                ParamRange::Threshold { .. } => format!("{name}.t"),
                ParamRange::Statstest { .. } => format!("{name}.alpha"),
            });
            if l.disable_ratio.is_some() {
                names.push(format!("{name}.r"));
            }
        }
        match self.head.as_ref().map(|h| &h.range) {
            Some(HeadRange::Threshold { ranks, .. }) => {
                names.extend((0..*ranks).map(|j| format!("head.t{}", j + 2)))
            }
            Some(HeadRange::Statstest { .. }) => names.push("head.alpha".into()),
            None => {}
        }
        names
    }

    /// Draws one configuration and the raw parameter values.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> (PruneConfig, Vec<f64>) {
        let mut cfg = PruneConfig::none().with_order(self.order);
        let mut params = Vec::new();
        for (name, l) in &self.layers {
            let pred = match l.range {
                ParamRange::Threshold { t_min, t_max } => {
                    let t = uniform(rng, t_min, t_max);
                    params.push(t);
                    ReluPredictorCfg::threshold(t, l.k)
                }
                ParamRange::Statstest { alpha_min, alpha_max } => {
                    let a = log_uniform_alpha(rng, alpha_min, alpha_max);
                    params.push(a);
                    ReluPredictorCfg::statstest(a, l.k)
                }
            };
            let mut layer = LayerPruneCfg::new(pred.with_schedule(l.schedule));
            if let Some([lo, hi]) = l.disable_ratio {
                let r = uniform(rng, lo, hi);
                params.push(r);
                layer = layer.with_disable_ratio(r);
            }
            cfg = cfg.with_layer(name, layer);
        }
        if let Some(h) = &self.head {
            let mut head = match &h.range {
                HeadRange::Threshold { t_min, t_max, ranks } => {
                    let ts: Vec<f64> = (0..*ranks).map(|_| uniform(rng, *t_min, *t_max)).collect();
                    params.extend(&ts);
                    HeadPredictorCfg::threshold(ts, h.k)
                }
                HeadRange::Statstest { alpha_min, alpha_max, ranks } => {
                    let a = log_uniform_alpha(rng, *alpha_min, *alpha_max);
                    params.push(a);
                    HeadPredictorCfg::statstest(a, ranks.clone(), h.k)
                }
            };
            head.schedule = h.schedule;
            cfg = cfg.with_head(head);
        }
        (cfg, params)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub config: PruneConfig,
    pub params: Vec<f64>,
    pub fidelity: f64,
    pub normalized_flops: f64,
}

/// Draws `n_trials` configurations from `space` with the seeded PRNG and
/// evaluates each on `valset`. Results are ordered by trial index.
pub fn random_search(
    space: &SearchSpace,
    n_trials: usize,
    model: &Model,
    valset: &Dataset,
    seed: u64,
) -> Result<Vec<TrialResult>> {
    let eval = Evaluator::new(model, valset, EvalOptions::default())?;
    random_search_with(space, n_trials, &eval, seed)
}

pub fn random_search_with(
    space: &SearchSpace,
    n_trials: usize,
    eval: &Evaluator<'_>,
    seed: u64,
) -> Result<Vec<TrialResult>> {
    if n_trials == 0 {
        return Err(Error::Config("a search needs at least one trial".into()));
    }
    space.validate(eval.model())?;
    let mut rng = stream_rng(seed, streams::SEARCH);
    let draws: Vec<_> = (0..n_trials).map(|_| space.sample(&mut rng)).collect();
    draws
        .into_par_iter()
        .enumerate()
        .map(|(trial, (config, params))| {
            let r = eval.run(&config)?;
            Ok(TrialResult {
                trial,
                config,
                params,
                fidelity: r.fidelity,
                normalized_flops: r.normalized_flops,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoSlice {
    /// 1-based.
    pub index: usize,
    pub members: Vec<TrialResult>,
}

/// `a` dominates `b` on (maximize fidelity, minimize FLOPs).
pub fn dominates(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 >= b.0 && a.1 <= b.1 && (a.0 > b.0 || a.1 < b.1)
}

/// Iterated non-dominated extraction over `(fidelity, flops)` points.
/// Returns up to `n_slices` slices of point indices, each ascending.
pub fn pareto_slice_indices(points: &[(f64, f64)], n_slices: usize) -> Vec<Vec<usize>> {
    let mut remaining: Vec<usize> = (0..points.len()).collect();
    // FLOPs ascending, fidelity descending within equal FLOPs.
    remaining.sort_by(|&a, &b| {
        points[a]
            .1
            .total_cmp(&points[b].1)
            .then(points[b].0.total_cmp(&points[a].0))
    });
    let mut slices = Vec::new();
    while !remaining.is_empty() && slices.len() < n_slices {
        let mut front = Vec::new();
        let mut rest = Vec::new();
        let mut best_before = f64::NEG_INFINITY;
        let mut i = 0;
        while i < remaining.len() {
            let flops = points[remaining[i]].1;
            let group_top = points[remaining[i]].0;
            let mut j = i;
            while j < remaining.len() && points[remaining[j]].1 == flops {
                let idx = remaining[j];
                if points[idx].0 == group_top && group_top > best_before {
                    front.push(idx);
                } else {
                    rest.push(idx);
                }
                j += 1;
            }
            best_before = best_before.max(group_top);
            i = j;
        }
        front.sort_unstable();
        slices.push(front);
        remaining = rest;
    }
    slices
}

pub fn pareto_slices(results: &[TrialResult], n_slices: usize) -> Vec<ParetoSlice> {
    let points: Vec<(f64, f64)> = results.iter().map(|r| (r.fidelity, r.normalized_flops)).collect();
    pareto_slice_indices(&points, n_slices)
        .into_iter()
        .enumerate()
        .map(|(s, idx)| ParetoSlice {
            index: s + 1,
            members: idx.into_iter().map(|i| results[i].clone()).collect(),
        })
        .collect()
}

/// Slice number of each trial, `None` past the last extracted slice.
pub fn slice_membership(n_trials: usize, slices: &[ParetoSlice]) -> Vec<Option<usize>> {
    let mut out = vec![None; n_trials];
    for s in slices {
        for m in &s.members {
            out[m.trial] = Some(s.index);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Confirmation {
    pub trial: usize,
    pub slice: Option<usize>,
    pub val_fidelity: f64,
    pub val_flops: f64,
    pub test_fidelity: f64,
    pub test_flops: f64,
    pub test_baseline_fidelity: f64,
}

impl Confirmation {
    /// Validation minus test fidelity.
    pub fn gap(&self) -> f64 {
        self.val_fidelity - self.test_fidelity
    }

    pub fn accuracy_drop(&self) -> f64 {
        self.test_baseline_fidelity - self.test_fidelity
    }
}

/// Evaluates the members of `slices` on `testset`, in slice order.
pub fn confirm_on_test(slices: &[ParetoSlice], model: &Model, testset: &Dataset) -> Result<Vec<Confirmation>> {
    let selected: Vec<(Option<usize>, &TrialResult)> = slices
        .iter()
        .flat_map(|s| s.members.iter().map(move |m| (Some(s.index), m)))
        .collect();
    if selected.is_empty() {
        return Err(Error::Config("no configurations selected for confirmation".into()));
    }
    let eval = Evaluator::new(model, testset, EvalOptions::default())?;
    let base = eval.baseline().fidelity;
    selected
        .into_par_iter()
        .map(|(slice, t)| {
            let r = eval.run(&t.config)?;
            Ok(Confirmation {
                trial: t.trial,
                slice,
                val_fidelity: t.fidelity,
                val_flops: t.normalized_flops,
                test_fidelity: r.fidelity,
                test_flops: r.normalized_flops,
                test_baseline_fidelity: base,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::gen_blobs;
    use crate::train::{train, Arch, TrainCfg};

    fn brute_force(points: &[(f64, f64)], n_slices: usize) -> Vec<Vec<usize>> {
        let mut left: Vec<usize> = (0..points.len()).collect();
        let mut out = Vec::new();
        while !left.is_empty() && out.len() < n_slices {
            let front: Vec<usize> = left
                .iter()
                .copied()
                .filter(|&i| !left.iter().any(|&j| dominates(points[j], points[i])))
                .collect();
            left.retain(|i| !front.contains(i));
            out.push(front);
        }
        out
    }

    #[test]
    fn slice_examples() {
        assert_eq!(pareto_slice_indices(&[(0.5, 1.0)], 5), vec![vec![0]]);
        let pts = [(0.9, 10.0), (0.8, 5.0), (0.85, 12.0), (0.7, 4.0)];
        assert_eq!(pareto_slice_indices(&pts, 5), vec![vec![0, 1, 3], vec![2]]);
        let dup = [(0.9, 10.0), (0.9, 10.0), (0.8, 10.0)];
        assert_eq!(pareto_slice_indices(&dup, 5), vec![vec![0, 1], vec![2]]);
        assert_eq!(pareto_slice_indices(&pts, 1).len(), 1);
    }

    #[test]
    fn matches_brute_force_with_ties() {
        let mut rng = stream_rng(5, 1);
        for _ in 0..50 {
            let n = rng.random_range(1..60);
            let pts: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.random_range(0..6) as f64, rng.random_range(0..6) as f64))
                .collect();
            assert_eq!(pareto_slice_indices(&pts, 5), brute_force(&pts, 5));
        }
    }

    #[test]
    fn space_round_trips_and_validates() {
        let text = r#"
order = "by_nonzero_cost"
[layers.fc1]
predictor = "threshold"
t_min = -5.0
[layers.fc2]
predictor = "statstest"
alpha_max = 0.2
disable_ratio = [0.1, 0.3]
[head]
predictor = "statstest"
ranks = [2, 3]
k = 4
"#;
        let s = SearchSpace::from_toml_str(text).unwrap();
        assert_eq!(s.param_names(), ["fc1.t", "fc2.alpha", "fc2.r", "head.alpha"]);
        assert_eq!(SearchSpace::from_toml_str(&s.to_toml_string().unwrap()).unwrap(), s);
        let mut rng = stream_rng(0, 0);
        for _ in 0..100 {
            let (cfg, p) = s.sample(&mut rng);
            assert!((-5.0..=0.0).contains(&p[0]));
            assert!((ALPHA_FLOOR..=0.2).contains(&p[1]));
            assert!((0.1..=0.3).contains(&p[2]));
            assert_eq!(cfg.layers.len(), 2);
        }
        assert!(SearchSpace::from_toml_str("[layers.a]\npredictor = \"statstest\"\nalpha_max = 0.6").is_err());
        assert!(SearchSpace::from_toml_str("[layers.a]\npredictor = \"threshold\"\nt_min = 1.0").is_err());
    }

    #[test]
    fn search_is_deterministic_and_sentinel_space_is_baseline() {
        let data = gen_blobs(2, 80, 6, 3, 1.0).unwrap();
        let arch: Arch = "mlp:6-40-3".parse().unwrap();
        let model = train(&arch, &data, &TrainCfg { epochs: 3, ..TrainCfg::default() }).unwrap();
        let space = SearchSpace::thresholds(&["fc1".into()], -2.0);
        let a = random_search(&space, 6, &model, &data, 9).unwrap();
        let b = random_search(&space, 6, &model, &data, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        assert!(a.iter().enumerate().all(|(i, t)| t.trial == i));

        let mut sentinel = SearchSpace::default();
        sentinel.layers.insert(
            "fc1".into(),
            LayerSpace {
                range: ParamRange::Statstest { alpha_min: 0.0, alpha_max: 0.0 },
                k: 8,
                schedule: Schedule::OnceAtK,
                disable_ratio: None,
            },
        );
        let base = crate::engine::evaluate(&model, &data, &PruneConfig::none()).unwrap();
        for t in random_search(&sentinel, 3, &model, &data, 1).unwrap() {
            assert_eq!(t.fidelity, base.fidelity);
        }

        let slices = pareto_slices(&a, 5);
        let conf = confirm_on_test(&slices, &model, &data).unwrap();
        assert_eq!(conf.len(), slices.iter().map(|s| s.members.len()).sum::<usize>());
        let mut none = a[0].clone();
        none.config = PruneConfig::none();
        let c = confirm_on_test(&[ParetoSlice { index: 1, members: vec![none] }], &model, &data).unwrap();
        assert_eq!(c[0].test_flops, 1.0);
    }
}
