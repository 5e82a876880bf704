//! Command-line front end.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::Settings;
use crate::error::{Error, Result};
use crate::evalio::{
    evaluate, read_dataset, read_embeddings, read_mot, synthesize, write_dataset, write_mot, Dataset,
};
use crate::geometry::ImageSize;
use crate::gradsuite::{run_suite, SuiteConfig, TOLERANCE};
use crate::refsearch::{load_checkpoint, save_checkpoint, RsConfig};
use crate::session::{track_dataset, Association};
use crate::train::{build_pairs, center_error, init_classifier, train, Model};

/// Online multi-object tracking with reference-search association.
#[derive(Debug, Parser)]
#[command(name = "refmot", version)]
pub struct Cli {
    /// Settings file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for data generation and training (overrides the settings file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Extra `key=value` setting, applied after the file. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic sequence into the output directory.
    Synth,
    /// Train the reference-search module on one or more sequences.
    Train(TrainArgs),
    /// Track a sequence and write MOT results.
    Track(TrackArgs),
    /// Score results against ground truth.
    Eval(EvalArgs),
    /// Compare every backward pass with finite differences.
    Gradcheck(GradcheckArgs),
    /// Print every setting with its current value.
    Settings,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Sequence directory with rasters and ground truth. Repeatable.
    #[arg(long = "dataset", required = true)]
    pub datasets: Vec<PathBuf>,
    /// Print the running loss every this many steps (0 to disable).
    #[arg(long, default_value_t = 100)]
    pub log_every: usize,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Sequence directory (detections, embeddings and, for a model, rasters).
    #[arg(long, conflicts_with_all = ["det", "emb"])]
    pub dataset: Option<PathBuf>,
    /// Detection file, used with --emb and --image instead of --dataset.
    #[arg(long, requires_all = ["emb", "image"])]
    pub det: Option<PathBuf>,
    #[arg(long)]
    pub emb: Option<PathBuf>,
    /// Image size as WIDTHxHEIGHT.
    #[arg(long)]
    pub image: Option<String>,
    /// Trained checkpoint for the reference-search stage.
    #[arg(long, conflicts_with = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Replace predictions with ground-truth next centers.
    #[arg(long)]
    pub oracle: bool,
    /// Skip the reference-search stage (same as `--set tracker.use_rs=false`).
    #[arg(long)]
    pub no_rs: bool,
    /// Skip the IoU stage.
    #[arg(long)]
    pub no_iou: bool,
    /// Report tracks from their first frame instead of after confirmation.
    #[arg(long)]
    pub no_confirm: bool,
    /// Results file name inside the output directory.
    #[arg(long, default_value = "results.txt")]
    pub results: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub results: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Random draws per op.
    #[arg(long, default_value_t = 100)]
    pub draws: usize,
    /// Scale analytic gradients by 1.05; every op must then fail.
    #[arg(long)]
    pub corrupt: bool,
    /// Feature width of the composed check.
    #[arg(long, default_value_t = 8)]
    pub d_model: usize,
    /// Layer count of the composed check.
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
}

/// Evaluation count above which `gradcheck` warns about runtime.
const GRADCHECK_WARN: usize = 50_000_000;

/// Process exit status for a command outcome.
pub enum Outcome {
    Success,
    CheckFailed,
}

/// Parses arguments, runs the command, and returns the process exit code:
/// 0 on success, 1 when a check fails, 2 on usage, configuration or data
/// errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(Outcome::Success) => 0,
        Ok(Outcome::CheckFailed) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

/// Fails with the path in the message when an input is missing.
fn input(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::Config(format!("{}: no such file or directory", path.display())))
    }
}

fn settings(cli: &Cli) -> Result<Settings> {
    let mut s = match &cli.config {
        Some(p) => Settings::load(input(p)?)?,
        None => Settings::default(),
    };
    for o in &cli.overrides {
        s.set_assignment(o)?;
    }
    if let Some(seed) = cli.seed {
        s.synth.seed = seed;
        s.train.seed = seed;
    }
    s.validate()?;
    Ok(s)
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    let s = settings(cli)?;
    match &cli.command {
        Command::Synth => cmd_synth(&s, &cli.out),
        Command::Train(a) => cmd_train(&s, a, &cli.out),
        Command::Track(a) => cmd_track(&s, a, &cli.out),
        Command::Eval(a) => cmd_eval(&s, a, &cli.out),
        Command::Gradcheck(a) => cmd_gradcheck(a, cli.seed.unwrap_or(0)),
        Command::Settings => {
            print!("{}", s.to_text());
            Ok(Outcome::Success)
        }
    }
}

fn cmd_synth(s: &Settings, out: &Path) -> Result<Outcome> {
    let ds = synthesize(&s.synth)?;
    write_dataset(out, &ds)?;
    let ids: std::collections::BTreeSet<i64> = ds.gt.iter().map(|r| r.id).collect();
    println!(
        "wrote {}: {} frames, {} objects, {} gt boxes, {} detections",
        out.display(),
        ds.frames,
        ids.len(),
        ds.gt.len(),
        ds.detections.len()
    );
    Ok(Outcome::Success)
}

/// Checks that every raster splits evenly into every patch size.
fn check_rasters(ds: &Dataset, dir: &Path, patch_sizes: &[usize]) -> Result<usize> {
    let first = ds
        .rasters
        .first()
        .ok_or_else(|| Error::Data(format!("{}: no rasters", dir.display())))?;
    let [h, w, c] = *first.shape() else {
        return Err(Error::Data(format!("{}: raster is not [H, W, C]", dir.display())));
    };
    for &p in patch_sizes {
        if h % p != 0 || w % p != 0 {
            return Err(Error::Config(format!(
                "{}: raster {h}x{w} is not divisible by patch size {p}",
                dir.display()
            )));
        }
    }
    Ok(c)
}

fn cmd_train(s: &Settings, a: &TrainArgs, out: &Path) -> Result<Outcome> {
    let mut datasets = Vec::new();
    let mut channels = None;
    for dir in &a.datasets {
        let ds = read_dataset(input(dir)?, true)?;
        if ds.gt.is_empty() {
            return Err(Error::Data(format!("{}: no ground truth", dir.display())));
        }
        let c = check_rasters(&ds, dir, &s.patch_sizes)?;
        if *channels.get_or_insert(c) != c {
            return Err(Error::Data("sequences have different raster channels".into()));
        }
        if let Some(e) = ds.embeddings.first() {
            if e.len() != s.rs.emb_dim {
                return Err(Error::Config(format!(
                    "rs.emb_dim = {} but {} has {}-dimensional embeddings",
                    s.rs.emb_dim,
                    dir.display(),
                    e.len()
                )));
            }
        }
        datasets.push(ds);
    }
    let pairs = build_pairs(&datasets, s.rs.emb_dim, &s.train)?;
    let config = RsConfig {
        num_identities: pairs.prototypes.len(),
        ..s.rs.clone()
    };
    let mut model = Model::init(config, channels.unwrap_or(0), &s.patch_sizes, s.train.seed)?;
    init_classifier(&mut model.module, &pairs.prototypes, s.train.prototype_scale)?;
    let eval_set = if pairs.holdout.is_empty() { &pairs.train } else { &pairs.holdout };
    let before = center_error(&model, &datasets, eval_set)?;

    let mut log = String::new();
    let mut window = 0.0;
    train(&mut model, &datasets, &pairs.train, &s.train, |l| {
        let _ = writeln!(log, "{} {:.8}", l.step, l.loss);
        window += l.loss;
        if a.log_every > 0 && l.step % a.log_every == 0 {
            println!("step {:>6}  loss {:.6}", l.step, window / a.log_every as f64);
            window = 0.0;
        }
    })?;
    let after = center_error(&model, &datasets, eval_set)?;

    fs::create_dir_all(out)?;
    let ckpt = out.join("model.ckpt");
    save_checkpoint(&ckpt, &model.module, &model.embedder)?;
    fs::write(out.join("train_log.txt"), log)?;
    fs::write(out.join("settings.txt"), s.to_text())?;
    let which = if pairs.holdout.is_empty() { "training" } else { "held-out" };
    println!(
        "{} pairs ({} held out); {which} center L1: stationary {:.6}, initial {:.6}, trained {:.6}",
        pairs.train.len(),
        pairs.holdout.len(),
        after.stationary,
        before.model,
        after.model
    );
    println!("wrote {}", ckpt.display());
    Ok(Outcome::Success)
}

fn parse_image(text: &str) -> Result<ImageSize> {
    let (w, h) = text
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::Config(format!("image size {text:?} is not WIDTHxHEIGHT")))?;
    let num = |v: &str| {
        v.trim()
            .parse::<u32>()
            .map_err(|_| Error::Config(format!("image size {text:?} is not WIDTHxHEIGHT")))
    };
    ImageSize::new(num(w)?, num(h)?)
}

fn cmd_track(s: &Settings, a: &TrackArgs, out: &Path) -> Result<Outcome> {
    let mut tracker = s.tracker.clone();
    tracker.use_rs &= !a.no_rs;
    tracker.use_iou &= !a.no_iou;
    tracker.confirm &= !a.no_confirm;
    let model = match &a.checkpoint {
        Some(p) => {
            let (module, embedder) = load_checkpoint(input(p)?)?;
            Some(Model { module, embedder })
        }
        None => None,
    };
    let ds = match (&a.dataset, &a.det) {
        (Some(dir), _) => read_dataset(input(dir)?, model.is_some())?,
        (None, Some(det)) => {
            if model.is_some() || a.oracle {
                return Err(Error::Config(
                    "--checkpoint and --oracle need --dataset (rasters or ground truth)".into(),
                ));
            }
            let emb = a.emb.as_ref().expect("clap requires --emb with --det");
            let detections = read_mot(input(det)?)?;
            let embeddings = read_embeddings(input(emb)?, &detections)?;
            let image = parse_image(a.image.as_deref().expect("clap requires --image"))?;
            Dataset {
                image,
                frames: detections.iter().map(|r| r.frame).max().unwrap_or(0),
                raster_scale: 1,
                gt: Vec::new(),
                detections,
                embeddings,
                rasters: Vec::new(),
            }
        }
        (None, None) => return Err(Error::Config("give --dataset or --det/--emb/--image".into())),
    };
    if a.oracle && ds.gt.is_empty() {
        return Err(Error::Config("--oracle needs ground truth in the dataset".into()));
    }
    if let Some(m) = &model {
        let c = check_rasters(&ds, a.dataset.as_deref().unwrap_or(Path::new(".")), &m.embedder.patch_sizes)?;
        if c != m.embedder.channels {
            return Err(Error::Data(format!(
                "rasters have {c} channels, checkpoint expects {}",
                m.embedder.channels
            )));
        }
    }
    let association = match (&model, a.oracle) {
        (Some(m), _) => Association::Model(m),
        (None, true) => Association::Oracle,
        (None, false) => {
            if tracker.use_rs {
                println!("no checkpoint given; the reference-search stage is skipped");
            }
            Association::None
        }
    };
    let (records, summary) = track_dataset(&tracker, &ds, association)?;
    fs::create_dir_all(out)?;
    let path = out.join(&a.results);
    write_mot(&path, &records, Some(ds.image))?;
    println!(
        "{} frames: {} births, {} removals, {} reference-search matches, {} IoU matches, {} boxes",
        summary.frames,
        summary.births,
        summary.removals,
        summary.rs_matches,
        summary.iou_matches,
        summary.outputs
    );
    println!("wrote {}", path.display());
    Ok(Outcome::Success)
}

fn cmd_eval(s: &Settings, a: &EvalArgs, out: &Path) -> Result<Outcome> {
    let gt = read_mot(input(&a.gt)?)?;
    let results = read_mot(input(&a.results)?)?;
    let r = evaluate(&gt, &results, s.eval_iou_gate)?;
    println!("MOTA  {:.4}", r.mota);
    println!("MOTP  {:.4}", r.motp);
    println!("IDF1  {:.4}  (IDP {:.4}, IDR {:.4})", r.idf1, r.idp, r.idr);
    println!("IDS   {}", r.ids);
    println!("MT    {:.4}  of {} trajectories", r.mt, r.gt_tracks);
    println!("ML    {:.4}", r.ml);
    println!("FP    {}", r.fp);
    println!("FN    {}", r.fn_);
    fs::create_dir_all(out)?;
    let path = out.join("report.json");
    let json = serde_json::to_string_pretty(&r)
        .map_err(|e| Error::Data(format!("report serialization: {e}")))?;
    fs::write(&path, json + "\n")?;
    println!("wrote {}", path.display());
    Ok(Outcome::Success)
}

fn cmd_gradcheck(a: &GradcheckArgs, seed: u64) -> Result<Outcome> {
    let mut cfg = SuiteConfig {
        draws: a.draws,
        seed,
        corrupt: a.corrupt,
        ..SuiteConfig::default()
    };
    cfg.rs.d_model = a.d_model;
    cfg.rs.head_hidden = a.d_model;
    cfg.rs.layers = a.layers;
    if cfg.cost_estimate() > GRADCHECK_WARN {
        eprintln!(
            "warning: about {} objective evaluations; this may take a long time",
            cfg.cost_estimate()
        );
    }
    let checks = run_suite(&cfg)?;
    let mut ok = true;
    for c in &checks {
        let status = if c.passed() { "pass" } else { "FAIL" };
        println!(
            "{status}  {:<26} max rel error {:.3e} over {} draws",
            c.name, c.max_rel_error, c.draws
        );
        ok &= c.passed();
    }
    println!("tolerance {TOLERANCE:e}");
    Ok(if ok { Outcome::Success } else { Outcome::CheckFailed })
}
