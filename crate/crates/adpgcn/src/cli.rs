//! Command-line surface.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use adpgcn_core::data::{synthesize_coupled, Coupling, RawSeries};
use adpgcn_core::eval::{ablation_compare, evaluate, EvalOptions, EvalReport, Hooks, RunRecord};
use adpgcn_core::forecaster::Forecaster;
use adpgcn_core::train::{train, Checkpoint, EpochRecord};
use clap::{Args, Parser, Subcommand};

use crate::checkpoint;
use crate::config::{CouplingEntry, RunSpec};
use crate::csv_io;
use crate::error::{AppError, Result};
use crate::pipeline::{prepare, test_windows};
use crate::report;

#[derive(Debug, Parser)]
#[command(name = "adpgcn", version, about = "Multivariate forecaster with a learned cross-dimension graph")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a coupled autoregressive series and its coupling sidecar.
    Synth(SynthArgs),
    /// Train one model and write a checkpoint.
    Train(RunArgs),
    /// Score a checkpoint on the test segment of a dataset.
    Eval(EvalArgs),
    /// Train with and without the graph blocks over several seeds.
    Ablate(AblateArgs),
    /// Write the learned adjacency of a checkpoint as CSV.
    ExportAdjacency(ExportArgs),
}

/// Flags shared by commands that build a dataset and a model.
#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// TOML run file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Series CSV. Without it the `[synth]` section generates the data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub label_len: Option<usize>,
    #[arg(long)]
    pub pred_len: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Disable the graph blocks.
    #[arg(long)]
    pub no_gcn: bool,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long, env = "ADPGCN_SEED")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of dimensions.
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of rows.
    #[arg(long)]
    pub t: Option<usize>,
    /// `src:dst:lag:weight`; repeat for several couplings. Replaces the file's list.
    #[arg(long = "couple", value_parser = parse_coupling)]
    pub couple: Vec<CouplingEntry>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub ar: Option<f64>,
    /// Amplitude of the per-dimension sinusoidal forcing.
    #[arg(long)]
    pub drive: Option<f64>,
    #[arg(long, env = "ADPGCN_SEED")]
    pub seed: Option<u64>,
    /// Series CSV to write; the sidecar goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated horizons. Horizons beyond the trained `pred_len` are skipped.
    #[arg(long, value_delimiter = ',')]
    pub horizons: Vec<usize>,
    #[arg(long)]
    pub target_only: bool,
    /// Also report metrics in original units.
    #[arg(long)]
    pub denormalize: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated seeds, at least three.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Adjacency CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth sidecar; when given, coupling ranks are written next to `out`.
    #[arg(long)]
    pub couplings: Option<PathBuf>,
}

fn parse_coupling(s: &str) -> std::result::Result<CouplingEntry, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 4 {
        return Err(format!("expected src:dst:lag:weight, got `{s}`"));
    }
    let int = |i: usize, name: &str| parts[i].trim().parse::<usize>().map_err(|_| format!("{name} `{}` is not a non-negative integer", parts[i]));
    Ok(CouplingEntry {
        src: int(0, "src")?,
        dst: int(1, "dst")?,
        lag: int(2, "lag")?,
        weight: parts[3].trim().parse().map_err(|_| format!("weight `{}` is not a number", parts[3]))?,
    })
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Ablate(a) => cmd_ablate(&a).map(|_| ()),
        Command::ExportAdjacency(a) => cmd_export_adjacency(&a).map(|_| ()),
    }
}

fn load_spec(path: Option<&Path>) -> Result<RunSpec> {
    path.map_or_else(|| Ok(RunSpec::default()), RunSpec::load)
}

/// Applies flags on top of the file.
pub fn resolve(args: &RunArgs) -> Result<RunSpec> {
    let mut spec = load_spec(args.config.as_deref())?;
    macro_rules! set {
        ($flag:expr => $field:expr) => {
            if let Some(v) = $flag.clone() {
                $field = v;
            }
        };
    }
    if args.data.is_some() {
        spec.data.path = args.data.clone();
    }
    if args.target.is_some() {
        spec.data.target = args.target.clone();
    }
    if args.label_len.is_some() {
        spec.model.label_len = args.label_len;
    }
    set!(args.seq_len => spec.model.seq_len);
    set!(args.pred_len => spec.model.pred_len);
    set!(args.d_model => spec.model.d_model);
    set!(args.n_heads => spec.model.n_heads);
    set!(args.d_ff => spec.model.d_ff);
    set!(args.dropout => spec.model.dropout);
    if args.no_gcn {
        spec.model.use_gcn = false;
    }
    set!(args.lr => spec.train.lr0);
    set!(args.epochs => spec.train.epochs);
    set!(args.patience => spec.train.patience);
    set!(args.batch_size => spec.train.batch_size);
    set!(args.stride => spec.data.stride);
    set!(args.seed => spec.train.seed);
    set!(args.out => spec.output.dir);
    Ok(spec)
}

/// The series named by `[data]`, or the `[synth]` series when no path is set.
pub fn load_series(spec: &RunSpec) -> Result<(RawSeries, String, Vec<Coupling>)> {
    match &spec.data.path {
        Some(p) => {
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or("data").to_owned();
            Ok((csv_io::read_series(p, spec.data.target.as_deref())?, id, Vec::new()))
        }
        None => {
            let s = synthesize_coupled(&spec.synth.to_spec())?;
            Ok((s.series, "synthetic".into(), s.couplings))
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))
}

fn write_resolved(dir: &Path, spec: &RunSpec) -> Result<()> {
    let path = dir.join("config.resolved");
    fs::write(&path, spec.to_toml()?).map_err(|e| AppError::io(&path, e))
}

fn log_epoch(h: &EpochRecord) {
    eprintln!("epoch {} lr {:e} train {:.6} val {:.6}", h.epoch, h.lr, h.train_loss, h.val_loss);
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut s = load_spec(a.config.as_deref())?.synth;
    if let Some(v) = a.n {
        s.n_dims = v;
    }
    if let Some(v) = a.t {
        s.len = v;
    }
    if !a.couple.is_empty() {
        s.couplings = a.couple.clone();
    }
    if let Some(v) = a.noise {
        s.noise_std = v;
    }
    if let Some(v) = a.ar {
        s.ar_coef = v;
    }
    if let Some(v) = a.drive {
        s.drive_amp = v;
    }
    if let Some(v) = a.seed {
        s.seed = v;
    }
    let out = synthesize_coupled(&s.to_spec())?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    csv_io::write_series(&a.out, &out.series)?;
    csv_io::write_couplings(&csv_io::couplings_sidecar(&a.out), &out.couplings)
}

/// Trains one model; returns the checkpoint written to `<out>/checkpoint.bin`.
pub fn cmd_train(a: &RunArgs) -> Result<Checkpoint> {
    let spec = resolve(a)?;
    let train_cfg = spec.train.to_config()?;
    let (series, id, _) = load_series(&spec)?;
    let config = spec.model.to_config(series.n_dims())?;
    let data = prepare(&series, &id, config.window(), spec.data.fractions, spec.data.stride)?;
    let dir = &spec.output.dir;
    create_dir(dir)?;
    write_resolved(dir, &spec)?;

    let mut model = Forecaster::new(config.clone(), train_cfg.seed)?;
    let mut observer = log_epoch;
    let outcome = train(&mut model, &data.sets.train, &data.sets.val, &train_cfg, Some(&mut observer))?;
    let ckpt = Checkpoint {
        config,
        params: outcome.params,
        norm: data.norm,
        history: outcome.history,
        rng: outcome.rng,
        columns: data.columns,
    };
    checkpoint::save(&ckpt, &dir.join("checkpoint.bin"))?;
    report::write_history(&dir.join("history.csv"), &ckpt.history)?;
    Ok(ckpt)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<Vec<EvalReport>> {
    let ckpt = checkpoint::load(&a.checkpoint)?;
    let mut spec = load_spec(a.config.as_deref())?;
    if a.data.is_some() {
        spec.data.path = a.data.clone();
    }
    let (series, id, _) = load_series(&spec)?;
    if series.n_dims() != ckpt.config.n_dims {
        return Err(adpgcn_core::Error::ConfigMismatch(format!(
            "checkpoint models {} dimensions, dataset has {}",
            ckpt.config.n_dims,
            series.n_dims()
        ))
        .into());
    }
    let model = ckpt.model()?;
    let test = test_windows(&series, &ckpt.norm, ckpt.config.window(), spec.data.fractions, spec.data.stride)?.test;
    let horizons = if a.horizons.is_empty() { vec![ckpt.config.pred_len] } else { a.horizons.clone() };
    let mut reports = Vec::new();
    let mut raw_reports = Vec::new();
    for &h in &horizons {
        if h == 0 {
            return Err(AppError::config("horizons", "horizon 0 is not allowed"));
        }
        if h > ckpt.config.pred_len {
            eprintln!("skipping horizon {h}: checkpoint predicts {} steps", ckpt.config.pred_len);
            continue;
        }
        let opts = EvalOptions { horizon: Some(h), target_only: a.target_only, denormalize: None, batch_size: spec.train.batch_size };
        let start = Instant::now();
        let m = evaluate(&model, &test, &opts)?;
        let mut r = EvalReport::new(id.clone(), h);
        r.push(ckpt.rng.shuffle.seed, m, Some(start.elapsed().as_secs_f64()));
        reports.push(r);
        if a.denormalize {
            let m = evaluate(&model, &test, &EvalOptions { denormalize: Some(&ckpt.norm), ..opts })?;
            let mut r = EvalReport::new(format!("{id}:original_units"), h);
            r.push(ckpt.rng.shuffle.seed, m, None);
            raw_reports.push(r);
        }
    }
    if reports.is_empty() {
        return Err(AppError::config("horizons", format!("none of {horizons:?} is within pred_len {}", ckpt.config.pred_len)));
    }
    reports.extend(raw_reports);
    let dir = a.out.clone().unwrap_or_else(|| spec.output.dir.clone());
    create_dir(&dir)?;
    report::write_eval(&dir.join("eval.csv"), &reports)?;
    for r in &reports {
        println!("{} h={} mse={:.6} mae={:.6}", r.dataset, r.horizon, r.mean_mse(), r.mean_mae());
    }
    Ok(reports)
}

pub fn cmd_ablate(a: &AblateArgs) -> Result<adpgcn_core::eval::AblationReport> {
    let spec = resolve(&a.run)?;
    let seeds = if a.seeds.is_empty() { spec.eval.seeds.clone() } else { a.seeds.clone() };
    if seeds.len() < 3 {
        return Err(AppError::config("seeds", format!("need at least 3 seeds, got {}", seeds.len())));
    }
    let train_cfg = spec.train.to_config()?;
    let (series, id, _) = load_series(&spec)?;
    let config = spec.model.to_config(series.n_dims())?;
    let data = prepare(&series, &id, config.window(), spec.data.fractions, spec.data.stride)?;
    let dir = &spec.output.dir;
    create_dir(dir)?;
    let mut resolved = spec.clone();
    resolved.eval.seeds = seeds.clone();
    write_resolved(dir, &resolved)?;

    let t0 = Instant::now();
    let clock = move || t0.elapsed().as_secs_f64();
    let mut on_run = |r: &RunRecord| {
        eprintln!("{} seed {} mse {:.6} mae {:.6} best epoch {}", r.variant, r.seed, r.metrics.mse, r.metrics.mae, r.best_epoch);
    };
    let rep = ablation_compare(&data.sets, &config, &train_cfg, &seeds, Hooks { clock: Some(&clock), on_run: Some(&mut on_run) })?;
    report::write_ablation(&dir.join("ablation.csv"), &rep)?;
    println!(
        "mean mse treated {:.6} baseline {:.6} improvement {:.2}%",
        rep.treated.mean_mse(),
        rep.baseline.mean_mse(),
        rep.mse_improvement()
    );
    Ok(rep)
}

pub fn cmd_export_adjacency(a: &ExportArgs) -> Result<Option<Vec<report::CouplingRank>>> {
    let ckpt = checkpoint::load(&a.checkpoint)?;
    let model = ckpt.model()?;
    let adj = model
        .adjacency_matrix()
        .ok_or_else(|| AppError::config("model.use_gcn", "checkpoint was trained without graph blocks"))??;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    report::write_adjacency(&a.out, &adj, &ckpt.columns)?;
    let Some(sidecar) = &a.couplings else { return Ok(None) };
    let ranks = report::coupling_ranks(&adj, &csv_io::read_couplings(sidecar)?)?;
    let stem = a.out.file_stem().and_then(|s| s.to_str()).unwrap_or("adjacency");
    report::write_coupling_ranks(&a.out.with_file_name(format!("{stem}.ranks.csv")), &ranks)?;
    for r in &ranks {
        println!(
            "{}→{}: entry {:.6}, rank {} of {}",
            ckpt.columns[r.coupling.src], ckpt.columns[r.coupling.dst], r.entry, r.rank, r.row_size
        );
    }
    Ok(Some(ranks))
}
