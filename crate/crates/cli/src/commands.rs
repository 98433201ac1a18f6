use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use log::{info, warn};
use serde::Serialize;
use serde_json::{json, Value};

use angular_gap::calibration::{dataset_cosines, fit_calibration, CalibrationConfig};
use angular_gap::curriculum::{sort_by_difficulty, sweep, Measure, SweepGrid, PACING_A_GRID, PACING_B_GRID};
use angular_gap::data::dataset::Example;
use angular_gap::data::io::{
    load_checkpoint, load_embeddings, load_hsf, read_report, read_sweep_runs, save_checkpoint, save_embeddings, write_atomic,
    write_history, write_json, write_reliability_csv, write_report, write_sweep_heatmap, write_sweep_medians, write_sweep_runs,
    write_trajectory, Format,
};
use angular_gap::data::synthetic::{generate_synthetic, SyntheticSpec};
use angular_gap::domain::selftrain::{
    curricular_self_train, generate_domain_pair, DomainPair, DomainShiftSpec, ExampleWeighting, SelfTrainConfig, TargetLabels,
    UnlabeledSet,
};
use angular_gap::geometry::argmax;
use angular_gap::metrics::{average_ranks, ece, kendall, spearman, top_k_accuracy, DEFAULT_BINS};
use angular_gap::model::Activation;
use angular_gap::scoring::score_dataset;
use angular_gap::trainer::{accuracy, train, Annealing, HiddenSpec};
use angular_gap::{
    CalibrationKind, CalibrationParams, CurriculumSchedule, DifficultyReport, EmbeddingDataset, Exec, LearningDynamics, TrainConfig,
};

use crate::config::{ConfigFile, List, Resolver};
use crate::{Cli, Command, GlobalArgs, UsageError};

const OUT_DIR_ENV: &str = "ANGAP_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "angap-out";

/// Resolved global settings plus the manifest being assembled for this run.
struct Ctx {
    r: Resolver,
    command: &'static str,
    out: PathBuf,
    seed: u64,
    exec: Exec,
    extra: BTreeMap<String, Value>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    argv: Vec<String>,
    resolved: &'a BTreeMap<String, String>,
    config_file: Option<&'a ConfigFile>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    notes: &'a BTreeMap<String, Value>,
}

impl Ctx {
    fn new(g: &GlobalArgs, command: &'static str) -> Result<Self> {
        let mut r = Resolver::load(g.config.as_deref())?;
        let out = match r.optional_path("out_dir", g.out_dir.clone())? {
            Some(p) => p,
            None => {
                let p = std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT_DIR), PathBuf::from);
                r.note("out_dir", p.display());
                p
            }
        };
        let seed = r.get("seed", g.seed, 0u64)?;
        let exec = if r.switch("sequential", g.sequential)? { Exec::Sequential } else { Exec::Parallel };
        Ok(Self {
            r,
            command,
            out,
            seed,
            exec,
            extra: BTreeMap::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Writes `manifest.json`; called once all settings are resolved and
    /// before any real work, so failed runs leave a manifest too.
    fn start(&self) -> Result<()> {
        for key in self.r.unused() {
            warn!("config key `{key}` is not used by `{}`", self.command);
        }
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating output directory {}", self.out.display()))?;
        let manifest = Manifest {
            tool: "angap",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            seed: self.seed,
            argv: std::env::args().collect(),
            resolved: self.r.resolved(),
            config_file: self.r.source.as_ref(),
            notes: &self.extra,
        };
        write_json(&self.path("manifest.json"), &manifest)?;
        Ok(())
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Generate(a) => generate(Ctx::new(g, "generate")?, a),
        Command::Train(a) => train_cmd(Ctx::new(g, "train")?, a),
        Command::Calibrate(a) => calibrate(Ctx::new(g, "calibrate")?, a),
        Command::Score(a) => score(Ctx::new(g, "score")?, a),
        Command::Evaluate(a) => evaluate(Ctx::new(g, "evaluate")?, a),
        Command::Curriculum(a) => curriculum(Ctx::new(g, "curriculum")?, a),
        Command::Uda(a) => uda(Ctx::new(g, "uda")?, a),
        Command::Sweep(a) => sweep_cmd(Ctx::new(g, "sweep")?, a),
        Command::Report(a) => report(Ctx::new(g, "report")?, a),
    }
}

fn load_dataset(path: &Path, classes: Option<usize>) -> Result<EmbeddingDataset> {
    load_embeddings(path, Format::from_path(path), classes).with_context(|| format!("loading {}", path.display()))
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainArgs {
    /// Training epochs [default: 30].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Minibatch size [default: 128].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate [default: 0.1].
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// cosine | constant [default: cosine].
    #[arg(long)]
    pub annealing: Option<Annealing>,
    /// SGD momentum [default: 0.9].
    #[arg(long)]
    pub momentum: Option<f64>,
    /// L2 weight decay [default: 5e-4].
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Logit scale s of the normalized softmax [default: 30].
    #[arg(long)]
    pub scale: Option<f64>,
    /// Width of an optional hidden layer; omit for a linear head.
    #[arg(long)]
    pub hidden_width: Option<usize>,
    /// identity | tanh | relu, for the hidden layer [default: tanh].
    #[arg(long)]
    pub activation: Option<Activation>,
}

fn resolve_train(ctx: &mut Ctx, a: &TrainArgs) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let r = &mut ctx.r;
    let cfg = TrainConfig {
        epochs: r.get("epochs", a.epochs, d.epochs)?,
        batch_size: r.get("batch_size", a.batch_size, d.batch_size)?,
        learning_rate: r.get("learning_rate", a.learning_rate, d.learning_rate)?,
        annealing: r.get("annealing", a.annealing, d.annealing)?,
        momentum: r.get("momentum", a.momentum, d.momentum)?,
        weight_decay: r.get("weight_decay", a.weight_decay, d.weight_decay)?,
        scale: r.get("scale", a.scale, d.scale)?,
        hidden: match r.optional("hidden_width", a.hidden_width)? {
            None => None,
            Some(width) => Some(HiddenSpec {
                width,
                activation: r.get("activation", a.activation, Activation::Tanh)?,
            }),
        },
        seed: ctx.seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------- generate

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Number of classes [default: 10; 3 with --domain-shift].
    #[arg(long)]
    pub classes: Option<usize>,
    /// Embedding dimension [default: 16; 8 with --domain-shift].
    #[arg(long)]
    pub dim: Option<usize>,
    /// Points per class [default: 500; 150 with --domain-shift].
    #[arg(long)]
    pub points_per_class: Option<usize>,
    /// Angle between class centers in radians [default: pi/2].
    #[arg(long)]
    pub separation: Option<f64>,
    /// Within-class angular spread [default: 0.4].
    #[arg(long)]
    pub spread: Option<f64>,
    /// Fraction of labels flipped to a wrong class [default: 0].
    #[arg(long)]
    pub noise_rate: Option<f64>,
    /// Points per class in the clean test split [default: 200].
    #[arg(long)]
    pub clean_per_class: Option<usize>,
    /// jsonl | csv [default: jsonl].
    #[arg(long)]
    pub format: Option<Format>,
    /// Write a shifted source/target pair instead.
    #[arg(long)]
    pub domain_shift: bool,
    /// Target mean translation in units of the noise scale [default: 1.5].
    #[arg(long)]
    pub shift: Option<f64>,
    /// Distance of class means from the origin [default: 3].
    #[arg(long)]
    pub radius: Option<f64>,
    /// Target noise relative to source noise [default: 1].
    #[arg(long)]
    pub target_scale: Option<f64>,
}

fn generate(mut ctx: Ctx, a: GenerateArgs) -> Result<()> {
    let format = ctx.r.get("format", a.format, Format::Jsonl)?;
    let shifted = ctx.r.switch("domain_shift", a.domain_shift)?;
    let ext = format.to_string();
    if shifted {
        let d = DomainShiftSpec::default();
        let r = &mut ctx.r;
        let per_class = r.get("points_per_class", a.points_per_class, d.source_per_class)?;
        let spec = DomainShiftSpec {
            classes: r.get("classes", a.classes, d.classes)?,
            dim: r.get("dim", a.dim, d.dim)?,
            source_per_class: per_class,
            target_per_class: per_class,
            separation: r.get("separation", a.separation, d.separation)?,
            radius: r.get("radius", a.radius, d.radius)?,
            sigma: d.sigma,
            shift: r.get("shift", a.shift, d.shift)?,
            target_scale: r.get("target_scale", a.target_scale, d.target_scale)?,
            seed: ctx.seed,
        };
        ctx.start()?;
        let (pair, labels) = generate_domain_pair(&spec)?;
        let target = EmbeddingDataset::new(
            pair.target
                .ids()
                .iter()
                .zip(pair.target.features())
                .zip(labels.as_slice())
                .map(|((id, f), &label)| Example {
                    id: id.clone(),
                    label,
                    features: f.clone(),
                })
                .collect(),
            spec.classes,
        )?;
        save_embeddings(&pair.source, &ctx.path(&format!("source.{ext}")), format)?;
        save_embeddings(&target, &ctx.path(&format!("target.{ext}")), format)?;
        say!("wrote {} source and {} target points to {}", pair.source.len(), target.len(), ctx.out.display());
        return Ok(());
    }

    let r = &mut ctx.r;
    let spec = SyntheticSpec {
        classes: r.get("classes", a.classes, 10)?,
        dim: r.get("dim", a.dim, 16)?,
        points_per_class: r.get("points_per_class", a.points_per_class, 500)?,
        separation: r.get("separation", a.separation, std::f64::consts::FRAC_PI_2)?,
        spread: r.get("spread", a.spread, 0.4)?,
        noise_rate: r.get("noise_rate", a.noise_rate, 0.0)?,
        seed: ctx.seed,
    };
    let clean = r.get("clean_per_class", a.clean_per_class, 200)?;
    spec.validate()?;
    ctx.start()?;
    let data = generate_synthetic(&spec)?;
    save_embeddings(&data.dataset, &ctx.path(&format!("dataset.{ext}")), format)?;
    if clean > 0 {
        save_embeddings(&data.clean_sample(clean)?, &ctx.path(&format!("clean_test.{ext}")), format)?;
    }
    let ids: Vec<&str> = data.dataset.examples().iter().map(|e| e.id.as_str()).collect();
    write_atomic(&ctx.path("ground_truth.csv"), |w| {
        writeln!(w, "id,margin")?;
        for (id, g) in ids.iter().zip(&data.ground_truth) {
            writeln!(w, "{id},{g}")?;
        }
        Ok(())
    })?;
    // Stand-in for human selection frequency: the ground-truth margin's
    // normalized rank, so easy points sit near 1.
    let ranks = average_ranks(&data.ground_truth);
    let span = (ids.len().max(2) - 1) as f64;
    write_atomic(&ctx.path("hsf.csv"), |w| {
        writeln!(w, "id,hsf")?;
        for (id, r) in ids.iter().zip(&ranks) {
            writeln!(w, "{id},{}", ((r - 1.0) / span).clamp(0.0, 1.0))?;
        }
        Ok(())
    })?;
    say!(
        "wrote {} points ({} classes, d={}) to {}; bayes accuracy {:.4}",
        data.dataset.len(),
        spec.classes,
        spec.dim,
        ctx.out.display(),
        data.bayes_accuracy()
    );
    Ok(())
}

// ------------------------------------------------------------------- train

#[derive(Args, Debug)]
pub struct TrainCmdArgs {
    /// Embedding dataset (.jsonl or .csv).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Seeded fraction held out for calibration; both splits are written
    /// next to the checkpoint. 0 trains on everything [default: 0.1].
    #[arg(long)]
    pub holdout_fraction: Option<f64>,
    #[command(flatten)]
    pub train: TrainArgs,
}

fn train_cmd(mut ctx: Ctx, a: TrainCmdArgs) -> Result<()> {
    let data_path = ctx.r.path("data", a.data)?;
    let holdout = ctx.r.get("holdout_fraction", a.holdout_fraction, 0.1)?;
    let cfg = resolve_train(&mut ctx, &a.train)?;
    let data = load_dataset(&data_path, None)?;
    ctx.start()?;
    let data = match holdout {
        f if f == 0.0 => data,
        f => {
            let (tr, hold) = data.split_holdout(f, ctx.seed)?;
            let ext = Format::from_path(&data_path);
            save_embeddings(&tr, &ctx.path(&format!("train_split.{ext}")), ext)?;
            save_embeddings(&hold, &ctx.path(&format!("holdout.{ext}")), ext)?;
            info!("split {} train / {} holdout", tr.len(), hold.len());
            tr
        }
    };
    let out = train(&data, &cfg, None, ctx.exec)?;
    save_checkpoint(&out.model, None, &ctx.path("checkpoint.json"))?;
    write_history(&out.history, &ctx.path("history.csv"))?;
    write_json(&ctx.path("dynamics.json"), &out.dynamics)?;
    let last = out.history.last().context("empty training history")?;
    say!("epochs {} final loss {:.6} train accuracy {:.4}", out.history.len(), last.loss, last.train_accuracy);
    Ok(())
}

// --------------------------------------------------------------- calibrate

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Holdout split used for the fit.
    #[arg(long)]
    pub holdout: Option<PathBuf>,
    /// Training split; when given, the holdout must not share ids with it.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// global | classwise | temperature [default: global].
    #[arg(long)]
    pub kind: Option<CalibrationKind>,
}

fn calibrate(mut ctx: Ctx, a: CalibrateArgs) -> Result<()> {
    let ckpt = ctx.r.path("checkpoint", a.checkpoint)?;
    let hold_path = ctx.r.path("holdout", a.holdout)?;
    let train_path = ctx.r.optional_path("train", a.train)?;
    let kind = ctx.r.get("kind", a.kind, CalibrationKind::Global)?;
    let (model, _) = load_checkpoint(&ckpt)?;
    let holdout = load_dataset(&hold_path, Some(model.classes()))?;
    let train_set = train_path.map(|p| load_dataset(&p, Some(model.classes()))).transpose()?;
    ctx.start()?;
    let cfg = CalibrationConfig {
        exec: ctx.exec,
        ..CalibrationConfig::default()
    };
    let (params, fit) = fit_calibration(&model, &holdout, kind, &cfg, train_set.as_ref())?;
    save_checkpoint(&model, Some(&params), &ctx.path("checkpoint.json"))?;
    write_json(&ctx.path("calibration_report.json"), &json!({ "params": params, "fit": fit }))?;
    say!(
        "{kind} calibration {:?}: nll {:.6} -> {:.6}, ece {:.4} -> {:.4}",
        params.to_vec(),
        fit.initial_nll,
        fit.final_nll,
        fit.initial_ece,
        fit.final_ece
    );
    Ok(())
}

// ------------------------------------------------------- score / evaluate

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Checkpoint, optionally carrying a calibration.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset to score.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `dynamics.json` from `train` on the same dataset, for forgetting counts.
    #[arg(long)]
    pub dynamics: Option<PathBuf>,
}

struct Scored {
    model: angular_gap::HypersphereModel,
    calibration: Option<CalibrationParams>,
    data: EmbeddingDataset,
    report: DifficultyReport,
}

fn resolve_score(ctx: &mut Ctx, a: ScoreArgs) -> Result<(PathBuf, PathBuf, Option<PathBuf>)> {
    Ok((
        ctx.r.path("checkpoint", a.checkpoint)?,
        ctx.r.path("data", a.data)?,
        ctx.r.optional_path("dynamics", a.dynamics)?,
    ))
}

fn run_score(ctx: &Ctx, ckpt: &Path, data: &Path, dynamics: Option<&Path>) -> Result<Scored> {
    let (model, calibration) = load_checkpoint(ckpt)?;
    let data = load_dataset(data, Some(model.classes()))?;
    let dynamics: Option<LearningDynamics> = dynamics
        .map(|p| -> Result<LearningDynamics> {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        })
        .transpose()?;
    let report = score_dataset(&model, &data, dynamics.as_ref(), calibration.as_ref(), ctx.exec)?;
    write_report(&report, &ctx.path("scores.csv"))?;
    Ok(Scored {
        model,
        calibration,
        data,
        report,
    })
}

fn score(mut ctx: Ctx, a: ScoreArgs) -> Result<()> {
    let (ckpt, data, dynamics) = resolve_score(&mut ctx, a)?;
    ctx.start()?;
    let s = run_score(&ctx, &ckpt, &data, dynamics.as_deref())?;
    say!("scored {} examples -> {}", s.report.len(), ctx.path("scores.csv").display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub score: ScoreArgs,
    /// `id,hsf` CSV of human selection frequencies (higher = easier).
    #[arg(long)]
    pub hsf: Option<PathBuf>,
    /// Reliability bins [default: 15].
    #[arg(long)]
    pub bins: Option<usize>,
    /// Comma-separated k values for top-k accuracy [default: 1,5].
    #[arg(long)]
    pub topk: Option<List<usize>>,
}

#[derive(Serialize)]
struct Correlation {
    spearman: f64,
    spearman_p: f64,
    kendall: f64,
    kendall_p: f64,
    n: usize,
}

/// Rank correlation of each available measure, oriented so higher means
/// easier, against HSF.
fn correlations(report: &DifficultyReport, hsf: &BTreeMap<String, f64>) -> Result<BTreeMap<&'static str, Correlation>> {
    let mut out = BTreeMap::new();
    let matched: Vec<_> = report.records.iter().filter(|r| hsf.contains_key(&r.id)).collect();
    if matched.len() < 2 {
        bail!("fewer than 2 scored examples have an hsf value");
    }
    let h: Vec<f64> = matched.iter().map(|r| hsf[&r.id]).collect();
    for m in Measure::ALL {
        let Some(v) = matched.iter().map(|r| m.easiness(r)).collect::<Option<Vec<f64>>>() else {
            continue;
        };
        let s = spearman(&v, &h).with_context(|| format!("spearman({m}, hsf)"))?;
        let k = kendall(&v, &h).with_context(|| format!("kendall({m}, hsf)"))?;
        out.insert(
            m.name(),
            Correlation {
                spearman: s.coefficient,
                spearman_p: s.p_value,
                kendall: k.coefficient,
                kendall_p: k.p_value,
                n: s.n,
            },
        );
    }
    Ok(out)
}

fn evaluate(mut ctx: Ctx, a: EvaluateArgs) -> Result<()> {
    let (ckpt, data, dynamics) = resolve_score(&mut ctx, a.score)?;
    let hsf_path = ctx.r.optional_path("hsf", a.hsf)?;
    let bins = ctx.r.get("bins", a.bins, DEFAULT_BINS)?;
    let topk = ctx.r.get("topk", a.topk, List(vec![1, 5]))?;
    if bins == 0 {
        return Err(UsageError("--bins must be >= 1".into()).into());
    }
    ctx.start()?;
    let mut s = run_score(&ctx, &ckpt, &data, dynamics.as_deref())?;
    let identity = CalibrationParams::identity(CalibrationKind::Global, s.model.classes())?;
    let params = s.calibration.as_ref().unwrap_or(&identity);
    let (rows, labels) = dataset_cosines(&s.model, &s.data, ctx.exec)?;
    let logits = rows.iter().map(|c| params.logits(s.model.scale, c)).collect::<angular_gap::Result<Vec<_>>>()?;
    let (conf, correct): (Vec<f64>, Vec<bool>) = logits
        .iter()
        .zip(&labels)
        .map(|(z, &y)| {
            let p = angular_gap::geometry::softmax(z);
            let k = argmax(&p);
            (p[k], k == y)
        })
        .unzip();
    let (ece_value, reliability) = ece(&conf, &correct, bins)?;
    write_reliability_csv(&reliability, &ctx.path("reliability.csv"))?;
    write_json(&ctx.path("reliability.json"), &reliability)?;
    let mut top = BTreeMap::new();
    for &k in &topk.0 {
        top.insert(k.to_string(), top_k_accuracy(&logits, &labels, k.min(s.model.classes()))?);
    }
    let mut metrics = json!({
        "n": s.data.len(),
        "calibration": s.calibration.as_ref().map(CalibrationParams::kind),
        "ece": ece_value,
        "ece_percent": 100.0 * ece_value,
        "bins": bins,
        "topk": top,
    });
    if let Some(p) = hsf_path {
        let hsf = load_hsf(&p)?;
        let unmatched = s.data.attach_hsf(&hsf);
        if !unmatched.is_empty() {
            warn!("{} hsf ids do not match any example (e.g. `{}`)", unmatched.len(), unmatched[0]);
        }
        let corr = correlations(&s.report, s.data.hsf())?;
        metrics["correlations"] = serde_json::to_value(corr)?;
    }
    write_json(&ctx.path("metrics.json"), &metrics)?;
    say!("{}", serde_json::to_string_pretty(&metrics)?);
    Ok(())
}

// -------------------------------------------------------------- curriculum

#[derive(Args, Debug)]
pub struct CurriculumArgs {
    /// Training dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Difficulty report (`scores.csv`) that fixes the easy-to-hard order.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Ordering measure [default: calibrated_gap].
    #[arg(long)]
    pub measure: Option<Measure>,
    /// Fraction of training after which all data is visible [default: 0.4].
    #[arg(long)]
    pub a: Option<f64>,
    /// Fraction of data visible at the start [default: 0.4].
    #[arg(long)]
    pub b: Option<f64>,
    /// Reverse the order (hard to easy).
    #[arg(long)]
    pub anti: bool,
    /// Optional test set for final accuracy.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainArgs,
}

fn ordering(ctx: &mut Ctx, scores: Option<PathBuf>, measure: Option<Measure>, anti: bool) -> Result<(PathBuf, Measure, bool)> {
    Ok((
        ctx.r.path("scores", scores)?,
        ctx.r.get("measure", measure, Measure::CalibratedGap)?,
        ctx.r.switch("anti", anti)?,
    ))
}

fn load_order(path: &Path, measure: Measure, anti: bool) -> Result<Vec<String>> {
    let report = read_report(path).with_context(|| format!("reading {}", path.display()))?;
    let mut order = sort_by_difficulty(&report, measure)?;
    if anti {
        order.reverse();
    }
    Ok(order)
}

fn curriculum(mut ctx: Ctx, a: CurriculumArgs) -> Result<()> {
    let data_path = ctx.r.path("data", a.data)?;
    let (scores, measure, anti) = ordering(&mut ctx, a.scores, a.measure, a.anti)?;
    let pa = ctx.r.get("a", a.a, 0.4)?;
    let pb = ctx.r.get("b", a.b, 0.4)?;
    let test_path = ctx.r.optional_path("test", a.test)?;
    let cfg = resolve_train(&mut ctx, &a.train)?;
    let data = load_dataset(&data_path, None)?;
    let test = test_path.map(|p| load_dataset(&p, Some(data.classes()))).transpose()?;
    ctx.start()?;
    let schedule = CurriculumSchedule {
        a: pa,
        b: pb,
        order: load_order(&scores, measure, anti)?,
    };
    let out = train(&data, &cfg, Some(&schedule), ctx.exec)?;
    save_checkpoint(&out.model, None, &ctx.path("checkpoint.json"))?;
    write_history(&out.history, &ctx.path("history.csv"))?;
    let test_accuracy = test.map(|t| accuracy(&out.model, &t, ctx.exec)).transpose()?;
    let last = out.history.last().context("empty training history")?;
    let summary = json!({
        "a": pa,
        "b": pb,
        "measure": measure,
        "anti": anti,
        "final_train_accuracy": last.train_accuracy,
        "test_accuracy": test_accuracy,
    });
    write_json(&ctx.path("summary.json"), &summary)?;
    say!("{summary}");
    Ok(())
}

// --------------------------------------------------------------------- uda

#[derive(Args, Debug)]
pub struct UdaArgs {
    /// Labeled source dataset.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Target dataset; its labels are ignored unless --eval-target-labels.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Use target labels to report target accuracy (never for training).
    #[arg(long)]
    pub eval_target_labels: bool,
    /// Epochs [default: 30].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Minibatch size per domain [default: 64].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Learning rate [default: 0.05].
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// SGD momentum [default: 0.9].
    #[arg(long)]
    pub momentum: Option<f64>,
    /// L2 weight decay [default: 5e-4].
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Logit scale [default: 30].
    #[arg(long)]
    pub scale: Option<f64>,
    /// Source fraction held out for per-epoch calibration [default: 0.2].
    #[arg(long)]
    pub holdout_fraction: Option<f64>,
    /// Source-only epochs before the transfer terms start [default: 5].
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    /// Weight of the reverse loss [default: 1].
    #[arg(long)]
    pub reverse_weight: Option<f64>,
    /// Weight of the local MMD term [default: 1].
    #[arg(long)]
    pub mmd_weight: Option<f64>,
    /// sigmoid | uniform source weighting [default: sigmoid].
    #[arg(long)]
    pub weighting: Option<String>,
    /// Initial lambda of the sigmoid weighting [default: 4].
    #[arg(long, allow_hyphen_values = true)]
    pub lambda_start: Option<f64>,
    /// Final lambda of the sigmoid weighting [default: -2].
    #[arg(long, allow_hyphen_values = true)]
    pub lambda_end: Option<f64>,
    /// Train on the weighted source loss only.
    #[arg(long)]
    pub no_transfer: bool,
    /// Points per domain used for the MMD trajectory [default: 256].
    #[arg(long)]
    pub mmd_eval_cap: Option<usize>,
}

fn uda(mut ctx: Ctx, a: UdaArgs) -> Result<()> {
    let d = SelfTrainConfig::default();
    let source_path = ctx.r.path("source", a.source)?;
    let target_path = ctx.r.path("target", a.target)?;
    let eval_labels = ctx.r.switch("eval_target_labels", a.eval_target_labels)?;
    let r = &mut ctx.r;
    let weighting = match r.get("weighting", a.weighting, "sigmoid".to_string())?.as_str() {
        "uniform" => ExampleWeighting::Uniform,
        "sigmoid" => ExampleWeighting::Sigmoid {
            start: r.get("lambda_start", a.lambda_start, 4.0)?,
            end: r.get("lambda_end", a.lambda_end, -2.0)?,
        },
        other => return Err(UsageError(format!("unknown weighting `{other}` (sigmoid|uniform)")).into()),
    };
    let cfg = SelfTrainConfig {
        epochs: r.get("epochs", a.epochs, d.epochs)?,
        batch_size: r.get("batch_size", a.batch_size, d.batch_size)?,
        learning_rate: r.get("learning_rate", a.learning_rate, d.learning_rate)?,
        momentum: r.get("momentum", a.momentum, d.momentum)?,
        weight_decay: r.get("weight_decay", a.weight_decay, d.weight_decay)?,
        scale: r.get("scale", a.scale, d.scale)?,
        holdout_fraction: r.get("holdout_fraction", a.holdout_fraction, d.holdout_fraction)?,
        warmup_epochs: r.get("warmup_epochs", a.warmup_epochs, d.warmup_epochs)?,
        reverse_weight: r.get("reverse_weight", a.reverse_weight, d.reverse_weight)?,
        mmd_weight: r.get("mmd_weight", a.mmd_weight, d.mmd_weight)?,
        class_weighting: d.class_weighting.clone(),
        weighting,
        transfer: !r.switch("no_transfer", a.no_transfer)?,
        mmd_eval_cap: r.get("mmd_eval_cap", a.mmd_eval_cap, d.mmd_eval_cap)?,
        seed: ctx.seed,
    };
    cfg.validate()?;
    let schedule = match cfg.weighting {
        ExampleWeighting::Uniform => "uniform (lambda = 0)".to_string(),
        ExampleWeighting::Sigmoid { start, end } => format!("lambda {start} -> {end} linearly over {} epochs", cfg.epochs),
    };
    ctx.extra.insert("lambda_schedule".into(), json!(schedule));

    let source = load_dataset(&source_path, None)?;
    let target = load_dataset(&target_path, Some(source.classes()))?;
    let labels = eval_labels.then(|| TargetLabels::from_dataset(&target));
    let pair = DomainPair::new(source, UnlabeledSet::from_dataset(&target))?;
    drop(target);
    ctx.start()?;
    info!("{schedule}");
    let out = curricular_self_train(&pair, &cfg, labels.as_ref(), ctx.exec)?;
    for p in out.trajectory.iter().filter(|p| p.warning.is_some()) {
        warn!("epoch {}: {}", p.epoch, p.warning.as_deref().unwrap_or_default());
    }
    save_checkpoint(&out.model, Some(&out.calibration), &ctx.path("checkpoint.json"))?;
    write_trajectory(&out.trajectory, &ctx.path("trajectory.csv"))?;
    let last = out.trajectory.last().context("empty trajectory")?;
    match last.target_accuracy {
        Some(t) => say!("{schedule}; source accuracy {:.4}, target accuracy {t:.4}, mmd {:.5}", last.source_accuracy, last.mmd),
        None => say!("{schedule}; source accuracy {:.4}, mmd {:.5}", last.source_accuracy, last.mmd),
    }
    Ok(())
}

// ------------------------------------------------------------------- sweep

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Training dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Difficulty report that fixes the order.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Ordering measure [default: calibrated_gap].
    #[arg(long)]
    pub measure: Option<Measure>,
    /// Reverse the order (hard to easy).
    #[arg(long)]
    pub anti: bool,
    /// Test set the final accuracy is measured on.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Seeds per cell [default: 0,1,2].
    #[arg(long)]
    pub seeds: Option<List<u64>>,
    /// Pacing a values [default: 0.01,0.2,0.4,0.6,0.8,1].
    #[arg(long)]
    pub a_grid: Option<List<f64>>,
    /// Pacing b values [default: 0,0.2,0.4,0.6,0.8].
    #[arg(long)]
    pub b_grid: Option<List<f64>>,
    /// Run only this many randomly chosen cells.
    #[arg(long)]
    pub sample_cells: Option<usize>,
    #[command(flatten)]
    pub train: TrainArgs,
}

fn sweep_cmd(mut ctx: Ctx, a: SweepArgs) -> Result<()> {
    let data_path = ctx.r.path("data", a.data)?;
    let (scores, measure, anti) = ordering(&mut ctx, a.scores, a.measure, a.anti)?;
    let test_path = ctx.r.path("test", a.test)?;
    let seeds = ctx.r.get("seeds", a.seeds, List(vec![0, 1, 2]))?;
    let a_grid = ctx.r.get("a_grid", a.a_grid, List(PACING_A_GRID.to_vec()))?;
    let b_grid = ctx.r.get("b_grid", a.b_grid, List(PACING_B_GRID.to_vec()))?;
    let sample = ctx.r.optional("sample_cells", a.sample_cells)?;
    let base = resolve_train(&mut ctx, &a.train)?;
    let data = load_dataset(&data_path, None)?;
    let test = load_dataset(&test_path, Some(data.classes()))?;
    let grid = SweepGrid { a_values: a_grid.0, b_values: b_grid.0 };
    let cells = match sample {
        Some(n) => grid.sample_cells(n, ctx.seed),
        None => grid.cells(),
    };
    ctx.start()?;
    let order = load_order(&scores, measure, anti)?;
    info!("{} cells x {} seeds", cells.len(), seeds.0.len());
    let runner = |pa: f64, pb: f64, seed: u64| -> Result<f64> {
        let cfg = TrainConfig { seed, ..base.clone() };
        let schedule = CurriculumSchedule {
            a: pa,
            b: pb,
            order: order.clone(),
        };
        // Cells already run in parallel; each run stays on its worker.
        let out = train(&data, &cfg, Some(&schedule), Exec::Sequential)?;
        Ok(accuracy(&out.model, &test, Exec::Sequential)?)
    };
    let table = sweep(&cells, &seeds.0, runner, ctx.exec)?;
    for r in table.runs.iter().filter(|r| r.error.is_some()) {
        warn!("cell a={} b={} seed={} failed: {}", r.a, r.b, r.seed, r.error.as_deref().unwrap_or_default());
    }
    write_sweep_runs(&table, &ctx.path("sweep_runs.csv"))?;
    write_sweep_medians(&table, &ctx.path("sweep_medians.csv"))?;
    write_sweep_heatmap(&table, &ctx.path("sweep_heatmap.csv"))?;
    match table.best() {
        Some(c) => say!("best cell a={} b={} median accuracy {:.4}", c.a, c.b, c.median_accuracy.unwrap_or(f64::NAN)),
        None => bail!("every sweep run failed"),
    }
    Ok(())
}

// ------------------------------------------------------------------ report

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// `sweep_runs.csv` to re-aggregate into medians and a heat map.
    #[arg(long)]
    pub sweep_runs: Option<PathBuf>,
    /// `scores.csv` to correlate against --hsf.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// `id,hsf` CSV.
    #[arg(long)]
    pub hsf: Option<PathBuf>,
}

fn report(mut ctx: Ctx, a: ReportArgs) -> Result<()> {
    let runs = ctx.r.optional_path("sweep_runs", a.sweep_runs)?;
    let scores = ctx.r.optional_path("scores", a.scores)?;
    let hsf = ctx.r.optional_path("hsf", a.hsf)?;
    if runs.is_none() && scores.is_none() {
        return Err(UsageError("report needs --sweep-runs and/or --scores".into()).into());
    }
    if scores.is_some() != hsf.is_some() {
        return Err(UsageError("--scores and --hsf go together".into()).into());
    }
    ctx.start()?;
    if let Some(p) = runs {
        let table = read_sweep_runs(&p)?;
        write_sweep_medians(&table, &ctx.path("sweep_medians.csv"))?;
        write_sweep_heatmap(&table, &ctx.path("sweep_heatmap.csv"))?;
        say!("{} runs in {} cells", table.runs.len(), table.cells.len());
    }
    if let (Some(s), Some(h)) = (scores, hsf) {
        let report = read_report(&s)?;
        let corr = correlations(&report, &load_hsf(&h)?)?;
        write_json(&ctx.path("correlations.json"), &corr)?;
        say!("{}", serde_json::to_string_pretty(&corr)?);
    }
    Ok(())
}
