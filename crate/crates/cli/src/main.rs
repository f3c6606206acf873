mod data;
mod lab;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use exprune_core::engine::{EvalOptions, Evaluator};
use exprune_core::report::{self, ScatterPoint};
use exprune_core::sweep::{self, SearchSpace, DEFAULT_SLICES};
use exprune_core::train::{self, accuracy, Arch, PruneScope, TrainCfg};
use exprune_core::{Model, Precision, PruneConfig, Split};

use data::DataSpec;

#[derive(Debug, Parser)]
#[command(name = "exprune", version, about = "Early-exit pruning of exchangeable partial sums")]
struct Cli {
    /// Worker threads for sample, trial and seed parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Debug, Subcommand)]
enum Verb {
    /// Initialize and train a model.
    Train(TrainArgs),
    /// Evaluate a model under a pruning configuration.
    Eval(EvalArgs),
    /// Random search over predictor parameters with Pareto-slice selection.
    Sweep(SweepArgs),
    /// Iterative magnitude pruning of convolution kernels with fine-tuning.
    PruneStatic(PruneStaticArgs),
    /// Exchangeability experiments.
    Xlab(XlabArgs),
    /// Per-sample predictions and FLOPs as CSV.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    All,
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::All => Split::All,
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScopeArg {
    Global,
    PerLayer,
}

/// Training hyperparameters shared by every verb that trains.
#[derive(Debug, Args)]
struct TrainOpts {
    /// TOML file with training settings; flags below override it.
    #[arg(long)]
    train_config: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
}

impl TrainOpts {
    fn resolve(&self, seed: u64, epochs: Option<usize>) -> Result<TrainCfg> {
        let mut cfg = match &self.train_config {
            Some(p) => TrainCfg::load(p)?,
            None => TrainCfg::default(),
        };
        cfg.seed = seed;
        if let Some(e) = epochs {
            cfg.epochs = e;
        }
        if let Some(lr) = self.lr {
            cfg.lr = lr;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        if let Some(wd) = self.weight_decay {
            cfg.weight_decay = wd;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// `mlp:IN-H..-CLASSES` or `cnn:CxHxW-c16-c32b-c64s2-CLASSES`.
    #[arg(long)]
    arch: Arch,
    #[arg(long)]
    data: DataSpec,
    #[arg(long, value_enum, default_value = "train")]
    split: SplitArg,
    /// Model directory to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: DataSpec,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Pruning configuration (TOML); without it every predictor is off.
    #[arg(long)]
    prune_config: Option<PathBuf>,
    /// Finish pruned reductions off the books to count mispredictions.
    #[arg(long)]
    shadow_oracle: bool,
    /// Per-layer CSV report.
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    model: PathBuf,
    /// Searched on its validation split, confirmed on its test split.
    #[arg(long)]
    data: DataSpec,
    /// Search space (TOML).
    #[arg(long)]
    space: PathBuf,
    #[arg(long)]
    trials: usize,
    #[arg(long, default_value_t = DEFAULT_SLICES)]
    slices: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-trial CSV.
    #[arg(long)]
    report: PathBuf,
    /// Test-set CSV of the Pareto-slice members.
    #[arg(long)]
    confirm: Option<PathBuf>,
    /// Scatter of the confirmed test points.
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Writes the confirmed config with the lowest test FLOPs whose accuracy
    /// drop is within `--max-drop`.
    #[arg(long)]
    best_config: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    max_drop: f64,
}

#[derive(Debug, Args)]
struct PruneStaticArgs {
    #[arg(long)]
    model: PathBuf,
    /// Fine-tuning data.
    #[arg(long)]
    data: DataSpec,
    #[arg(long, value_enum, default_value = "train")]
    split: SplitArg,
    #[arg(long, default_value_t = 0.05)]
    fraction: f64,
    #[arg(long)]
    iters: usize,
    #[arg(long, default_value_t = 1)]
    finetune_epochs: usize,
    #[arg(long, value_enum, default_value = "global")]
    scope: ScopeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model directory to write.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Debug, Args)]
struct XlabArgs {
    #[command(subcommand)]
    experiment: lab::Experiment,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: DataSpec,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long)]
    prune_config: Option<PathBuf>,
    /// CSV of `index,label,pred,flops`.
    #[arg(long)]
    out: PathBuf,
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn load_model(dir: &Path) -> Result<Model> {
    Model::load_dir(dir).with_context(|| format!("loading model from {}", dir.display()))
}

fn load_prune_config(path: Option<&Path>, model: &Model) -> Result<PruneConfig> {
    let cfg = match path {
        Some(p) => PruneConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => PruneConfig::none(),
    };
    cfg.validate(model)?;
    Ok(cfg)
}

fn run_train(a: TrainArgs) -> Result<()> {
    let data = a.data.load_split(a.split.into())?;
    let mut cfg = a.opts.resolve(a.seed, a.epochs)?;
    if let Some(p) = a.precision {
        cfg.precision = p.into();
    }
    let model = train::train(&a.arch, &data, &cfg)?;
    model.save_dir(&a.out)?;
    println!(
        "trained {} on {} samples: train accuracy {:.4}, saved to {}",
        a.arch,
        data.len(),
        accuracy(&model, &data)?,
        a.out.display()
    );
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let data = a.data.load_split(a.split.into())?;
    let cfg = load_prune_config(a.prune_config.as_deref(), &model)?;
    let opts = if a.shadow_oracle { EvalOptions::shadow() } else { EvalOptions::default() };
    let eval = Evaluator::new(&model, &data, opts)?;
    let r = eval.run(&cfg)?;
    report::write_run_report(create(&a.report)?, &r)?;
    if let Some(svg) = &a.svg {
        let points = [
            ScatterPoint { normalized_flops: 1.0, fidelity: eval.baseline().fidelity, label: "unpruned".into() },
            ScatterPoint { normalized_flops: r.normalized_flops, fidelity: r.fidelity, label: "config".into() },
        ];
        write_text(svg, &report::svg_scatter(&points, eval.baseline().fidelity))?;
    }
    print!(
        "fidelity {:.4} (unpruned {:.4}), normalized FLOPs {:.4}, prunes {}",
        r.fidelity,
        eval.baseline().fidelity,
        r.normalized_flops,
        r.prunes()
    );
    if a.shadow_oracle {
        print!(", mispredicts {} ({:.4} of prunes)", r.mispredicts(), r.mispredict_rate);
    }
    println!();
    Ok(())
}

fn run_sweep(a: SweepArgs) -> Result<()> {
    if a.trials == 0 {
        bail!("--trials must be at least 1");
    }
    let model = load_model(&a.model)?;
    let val = a.data.load_split(Split::Val)?;
    let space = SearchSpace::load(&a.space).with_context(|| format!("loading {}", a.space.display()))?;
    let eval = Evaluator::new(&model, &val, EvalOptions::default())?;
    let results = sweep::random_search_with(&space, a.trials, &eval, a.seed)?;
    let slices = sweep::pareto_slices(&results, a.slices);
    let membership = sweep::slice_membership(results.len(), &slices);
    report::write_sweep(create(&a.report)?, &space.param_names(), &results, &membership)?;
    let sizes: Vec<String> = slices.iter().map(|s| s.members.len().to_string()).collect();
    println!(
        "{} trials on {} validation samples; Pareto slice sizes [{}]",
        results.len(),
        val.len(),
        sizes.join(", ")
    );
    if a.confirm.is_none() && a.svg.is_none() && a.best_config.is_none() {
        return Ok(());
    }
    let test = a.data.load_split(Split::Test)?;
    let confirmed = sweep::confirm_on_test(&slices, &model, &test)?;
    if let Some(p) = &a.confirm {
        report::write_confirmations(create(p)?, &confirmed)?;
    }
    let base = confirmed[0].test_baseline_fidelity;
    if let Some(p) = &a.svg {
        let points: Vec<ScatterPoint> = confirmed
            .iter()
            .map(|c| ScatterPoint {
                normalized_flops: c.test_flops,
                fidelity: c.test_fidelity,
                label: format!("trial {} slice {}", c.trial, c.slice.unwrap_or(0)),
            })
            .collect();
        write_text(p, &report::svg_scatter(&points, base))?;
    }
    let best = confirmed
        .iter()
        .filter(|c| c.accuracy_drop() <= a.max_drop)
        .min_by(|x, y| x.test_flops.total_cmp(&y.test_flops).then(x.trial.cmp(&y.trial)));
    match best {
        Some(c) => {
            println!(
                "best within {:.4} drop: trial {} test fidelity {:.4} (unpruned {:.4}) normalized FLOPs {:.4}",
                a.max_drop, c.trial, c.test_fidelity, base, c.test_flops
            );
            if let Some(p) = &a.best_config {
                results[c.trial].config.save(p)?;
            }
        }
        None => {
            println!("no confirmed config within {:.4} accuracy drop", a.max_drop);
            if a.best_config.is_some() {
                bail!("no config qualifies for --best-config");
            }
        }
    }
    Ok(())
}

fn run_prune_static(a: PruneStaticArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let data = a.data.load_split(a.split.into())?;
    let cfg = a.opts.resolve(a.seed, Some(a.finetune_epochs))?;
    let scope = match a.scope {
        ScopeArg::Global => PruneScope::Global,
        ScopeArg::PerLayer => PruneScope::PerLayer,
    };
    let before = accuracy(&model, &data)?;
    let (pruned, mask) = train::iterative_magnitude_prune(&model, &data, a.fraction, a.iters, &cfg, scope)?;
    if !mask.holds_for(&pruned) {
        bail!("pruned weights drifted from zero");
    }
    pruned.save_dir(&a.out)?;
    println!(
        "conv density {:.4} after {} rounds; accuracy {:.4} -> {:.4}; saved to {}",
        mask.density(),
        a.iters,
        before,
        accuracy(&pruned, &data)?,
        a.out.display()
    );
    Ok(())
}

fn run_export(a: ExportArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let data = a.data.load_split(a.split.into())?;
    let cfg = load_prune_config(a.prune_config.as_deref(), &model)?;
    let r = exprune_core::evaluate(&model, &data, &cfg)?;
    report::write_records(create(&a.out)?, &r.records)?;
    println!("{} rows written to {}", r.records.len(), a.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.verb {
        Verb::Train(a) => run_train(a),
        Verb::Eval(a) => run_eval(a),
        Verb::Sweep(a) => run_sweep(a),
        Verb::PruneStatic(a) => run_prune_static(a),
        Verb::Xlab(a) => lab::run(a.experiment),
        Verb::Export(a) => run_export(a),
    }
}

/// The error chain on one line, skipping causes already spelled out by
/// the message that wraps them.
fn one_line(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out.replace('\n', " ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::from(1)
        }
    }
}
