//! `xlab` experiments.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use exprune_core::lab::{
    self, equivariance_check, gaussian_probes, random_permutation, symmetry_check, AttentionBlock,
    GroupSpec, IdReport, Observable, ResidualNet,
};
use exprune_core::report::{self, DeviationRow};
use exprune_core::rng::{stream_rng, streams};
use exprune_core::train::{init_model, Arch};
use exprune_core::{LayerKind, Model, Precision, Split};

use crate::data::DataSpec;
use crate::{create, write_text, TrainOpts};

#[derive(Debug, Subcommand)]
pub enum Experiment {
    /// Per-index identical-distribution tests over a trained ensemble.
    Ensemble(EnsembleArgs),
    /// Permutation equivariance of one gradient step.
    Equivariance(CheckArgs),
    /// Permutation invariance of the network function.
    Symmetry(CheckArgs),
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    #[arg(long)]
    arch: Arch,
    #[arg(long)]
    data: DataSpec,
    #[arg(long)]
    n_seeds: usize,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    /// Dense or conv layer whose outputs form the group (default: the first).
    #[arg(long)]
    layer: Option<String>,
    /// Test-split sample used as the fixed probe for the activation observable.
    #[arg(long, default_value_t = 0)]
    probe: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.99)]
    level: f64,
    #[arg(long)]
    report: PathBuf,
    /// Histogram overlays of the incoming-weight observable.
    #[arg(long)]
    svg: Option<PathBuf>,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long)]
    arch: Arch,
    /// Number of independently initialized models.
    #[arg(long, default_value_t = 10)]
    n_seeds: usize,
    #[arg(long, default_value_t = 50)]
    perms: usize,
    /// Probe inputs per symmetry check.
    #[arg(long, default_value_t = 20)]
    probes: usize,
    /// Batch size of the equivariance step.
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    report: PathBuf,
}

fn hidden_layers(model: &Model) -> Vec<String> {
    model
        .layers()
        .iter()
        .filter(|l| matches!(l.kind, LayerKind::Dense { .. } | LayerKind::Conv2d { .. }))
        .map(|l| l.name.clone())
        .collect()
}

pub fn run(e: Experiment) -> Result<()> {
    match e {
        Experiment::Ensemble(a) => ensemble(a),
        Experiment::Equivariance(a) => equivariance(a),
        Experiment::Symmetry(a) => symmetry(a),
    }
}

fn ensemble(a: EnsembleArgs) -> Result<()> {
    if a.n_seeds < lab::MIN_ENSEMBLE {
        bail!("--n-seeds must be at least {}", lab::MIN_ENSEMBLE);
    }
    let train = a.data.load_split(Split::Train)?;
    let test = a.data.load_split(Split::Test)?;
    let probe = test
        .inputs()
        .get(a.probe)
        .with_context(|| format!("probe {} beyond the {} test samples", a.probe, test.len()))?
        .clone();
    let cfg = a.opts.resolve(0, Some(a.epochs))?;
    let models = lab::train_ensemble(&a.arch, &train, &cfg, a.n_seeds)?;
    let layer = match &a.layer {
        Some(l) => l.clone(),
        None => hidden_layers(&models[0])
            .into_iter()
            .next()
            .context("architecture has no dense or conv layer")?,
    };
    let probes = [probe];
    let observables = [
        ("incoming_weight", Observable::IncomingWeight { input: 0 }),
        ("outgoing_weight", Observable::OutgoingWeight { output: 0 }),
        ("activation", Observable::Activation { probe: 0 }),
    ];
    let mut reports: Vec<(String, IdReport)> = Vec::new();
    let mut incoming = Vec::new();
    for (name, obs) in &observables {
        let samples = lab::ensemble_samples(&models, |m| GroupSpec::hidden(m, &layer), obs, &probes)?;
        reports.push((name.to_string(), lab::identical_distribution_test(&samples, a.alpha, a.level)?));
        if incoming.is_empty() {
            incoming = samples;
        }
    }
    let control = lab::with_index_bias(&incoming, 10.0);
    reports.push((
        "control_index_bias".into(),
        lab::identical_distribution_test(&control, a.alpha, a.level)?,
    ));
    report::write_lab(create(&a.report)?, &reports)?;
    if let Some(p) = &a.svg {
        let shown: Vec<usize> = (0..incoming[0].len().min(8)).collect();
        write_text(p, &report::svg_histograms(&incoming, &shown, 20))?;
    }
    for (name, r) in &reports {
        println!(
            "{name}: {}/{} rejected at {} (null interval {}..{}), {}",
            r.rejections,
            r.rows.len(),
            r.alpha,
            r.interval.0,
            r.interval.1,
            if r.within { "consistent" } else { "inconsistent" }
        );
    }
    Ok(())
}

fn models(a: &CheckArgs) -> Result<Vec<Model>> {
    (0..a.n_seeds as u64)
        .map(|s| Ok(init_model(&a.arch, a.seed.wrapping_add(s), Precision::F64)?))
        .collect()
}

fn equivariance(a: CheckArgs) -> Result<()> {
    let models = models(&a)?;
    let classes = a.arch.classes();
    let mut rng = stream_rng(a.seed, streams::LAB + 2);
    let mut rows = Vec::new();
    for (mi, m) in models.iter().enumerate() {
        // Inputs and labels are arbitrary: equivariance holds for any batch.
        let data = exprune_core::model::gen_blobs(
            a.seed.wrapping_add(mi as u64),
            a.batch,
            m.input_shape().iter().product(),
            classes.max(2),
            1.0,
        )?
        .reshaped(m.input_shape())?;
        let batch: Vec<usize> = (0..a.batch).collect();
        for layer in hidden_layers(m) {
            let g = GroupSpec::hidden(m, &layer)?;
            let control = g.clone().without_consumer();
            for t in 0..a.perms {
                let perm = random_permutation(&mut rng, g.size);
                let e = equivariance_check(m, &g, &data, &batch, &perm, a.lr)?;
                let c = equivariance_check(m, &control, &data, &batch, &perm, a.lr)?;
                for (check, dev) in [("equivariance", e.group.max(e.rest)), ("control", c.group)] {
                    rows.push(DeviationRow { check: check.into(), group: layer.clone(), model: mi, trial: t, deviation: dev });
                }
            }
        }
    }
    report::write_deviations(create(&a.report)?, &rows)?;
    summarize(&rows);
    Ok(())
}

fn symmetry(a: CheckArgs) -> Result<()> {
    let models = models(&a)?;
    let mut rng = stream_rng(a.seed, streams::LAB + 3);
    let mut rows = Vec::new();
    for (mi, m) in models.iter().enumerate() {
        let probes = gaussian_probes(a.seed.wrapping_add(mi as u64), m.input_shape(), a.probes);
        for layer in hidden_layers(m) {
            let g = GroupSpec::hidden(m, &layer)?;
            for t in 0..a.perms {
                let perm = random_permutation(&mut rng, g.size);
                let dev = symmetry_check(m, &g, &perm, &probes)?;
                rows.push(DeviationRow { check: "symmetry".into(), group: layer.clone(), model: mi, trial: t, deviation: dev });
            }
        }
        // Groupings the manifest format cannot express.
        let seed = a.seed.wrapping_add(mi as u64);
        let res = ResidualNet::random(seed, 3, 8, 6, 4);
        let res_probes = gaussian_probes(seed, &[3, 5, 5], a.probes);
        let attn = AttentionBlock::random(seed, 6, 5, 3);
        let attn_probes = gaussian_probes(seed, &[6, 7], a.probes);
        for t in 0..a.perms {
            for (name, g) in [("residual_stream", res.stream_group()), ("residual_branch", res.branch_group())] {
                let perm = random_permutation(&mut rng, g.size);
                let dev = res.symmetry_check(&g, &perm, &res_probes)?;
                rows.push(DeviationRow { check: "symmetry".into(), group: name.into(), model: mi, trial: t, deviation: dev });
            }
            let perm = random_permutation(&mut rng, attn.group_size());
            let dev = attn.symmetry_check(&perm, &attn_probes)?;
            rows.push(DeviationRow { check: "symmetry".into(), group: "attention_value".into(), model: mi, trial: t, deviation: dev });
        }
    }
    report::write_deviations(create(&a.report)?, &rows)?;
    summarize(&rows);
    Ok(())
}

fn summarize(rows: &[DeviationRow]) {
    let checks: std::collections::BTreeSet<&str> = rows.iter().map(|r| r.check.as_str()).collect();
    for check in checks {
        let devs = rows.iter().filter(|r| r.check == check).map(|r| r.deviation);
        let (lo, hi) = devs.fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
        println!("{check}: max deviation {hi:e}, min deviation {lo:e}");
    }
}
