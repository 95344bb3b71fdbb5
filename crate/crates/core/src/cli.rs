//! Command-line surface: `gen`, `train`, `eval`, `ablate` and `rerun`.
//!
//! Every command first writes a [`RunManifest`] holding the fully resolved
//! configuration and the digests of its inputs; `rerun` replays a manifest.
//! Configuration precedence is built-in defaults, then `--config` (TOML), then
//! flags. Relative `--out` paths resolve under `$CTACL_OUTPUT_ROOT` when set.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::{Checkpoint, Encoder};
use crate::eval::{self, EvalReport};
use crate::rng::Stream;
use crate::synthdata::{self, Dataset, GenConfig};
use crate::trainer::{self, Experiment, Grid, TrainConfig, Variant};
use crate::{Error, Result};

pub const OUTPUT_ROOT_ENV: &str = "CTACL_OUTPUT_ROOT";
pub const MANIFEST_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ctacl", version, about = "Camera-tracklet-aware contrastive learning on synthetic multi-camera data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-camera tracklet dataset.
    Gen(GenArgs),
    /// Train an encoder and write reports and checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the held-out split of a dataset.
    Eval(EvalArgs),
    /// Train once per grid value and tabulate the final metrics.
    Ablate(AblateArgs),
    /// Replay the command recorded in a manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Dataset file to write; a `.json` sidecar and a `.manifest.json` go next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with generator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub cameras: Option<u32>,
    #[arg(long)]
    pub vehicles: Option<u32>,
    #[arg(long)]
    pub d_in: Option<usize>,
    /// Domain gap strength; 0 makes every camera the identity map.
    #[arg(long)]
    pub gap: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub drift: Option<f64>,
    #[arg(long)]
    pub frame_variation: Option<f64>,
    /// Omit the vehicle ids.
    #[arg(long)]
    pub no_labels: bool,
}

/// Training settings shared by `train` and `ablate`.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    /// TOML file with training settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub warmup: Option<u32>,
    #[arg(long)]
    pub overhaul_every: Option<u32>,
    #[arg(long)]
    pub eval_every: Option<u32>,
    /// Drop the anchor's own camera from the mining pool.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub exclude_own_camera: Option<bool>,
    /// sscl, ctacl or ctacl-da.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub eval_fraction: Option<f64>,
    #[arg(long)]
    pub k_max: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "train")]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
    /// Seed of the training run; it fixes the held-out split.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub eval_fraction: f64,
    #[arg(long, default_value_t = eval::DEFAULT_K_MAX)]
    pub k_max: usize,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// `param=v1,v2,...` with param one of k, gamma, lambda, variant.
    #[arg(long)]
    pub grid: Grid,
    /// Output directory.
    #[arg(long, default_value = "ablate")]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output location, replacing the recorded one.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub root: u64,
    pub streams: Vec<(String, u64)>,
}

impl SeedRecord {
    fn new(root: u64) -> Self {
        SeedRecord { root, streams: Stream::ALL.iter().map(|s| (s.name().to_string(), *s as u64)).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub artifact_version: String,
    /// `gen`, `train`, `eval` or `ablate`.
    pub command: String,
    pub seeds: SeedRecord,
    /// The fully resolved configuration of the command.
    pub config: serde_json::Value,
    pub grid: Option<String>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        RunManifest {
            manifest_version: MANIFEST_VERSION,
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seeds: SeedRecord::new(seed),
            config,
            grid: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: RunManifest = serde_json::from_slice(&fs::read(path)?)?;
        if m.manifest_version != MANIFEST_VERSION {
            return Err(Error::Format(format!("unsupported manifest version {}", m.manifest_version)));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    fn input(&self, role: &str) -> Result<&InputDigest> {
        self.inputs
            .iter()
            .find(|i| i.role == role)
            .ok_or_else(|| Error::Format(format!("manifest has no {role:?} input")))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Reads an input file and records its digest.
fn read_input(path: &Path, role: &str) -> Result<(Vec<u8>, InputDigest)> {
    let bytes = fs::read(path).map_err(|e| Error::Integrity(format!("cannot read {}: {e}", path.display())))?;
    let digest = InputDigest { role: role.to_string(), path: path.to_path_buf(), sha256: sha256_hex(&bytes) };
    Ok((bytes, digest))
}

/// Reads an input recorded in a manifest and checks it is unchanged.
fn read_recorded(d: &InputDigest) -> Result<Vec<u8>> {
    let (bytes, now) = read_input(&d.path, &d.role)?;
    if now.sha256 != d.sha256 {
        return Err(Error::Integrity(format!("{} changed since the manifest was written", d.path.display())));
    }
    Ok(bytes)
}

pub fn resolve_out(out: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if out.is_relative() && !root.is_empty() => PathBuf::from(root).join(out),
        _ => out.to_path_buf(),
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::InvalidParam(format!("{}: {e}", path.display())))
}

pub fn resolve_gen_config(args: &GenArgs) -> Result<GenConfig> {
    let mut cfg = match &args.config {
        Some(p) => read_toml(p)?,
        None => GenConfig::default(),
    };
    macro_rules! set {
        ($flag:ident => $field:ident) => {
            if let Some(v) = args.$flag {
                cfg.$field = v;
            }
        };
    }
    set!(seed => seed);
    set!(cameras => n_cameras);
    set!(vehicles => n_vehicles);
    set!(d_in => d_in);
    set!(gap => domain_gap_strength);
    set!(noise => intra_tracklet_noise);
    set!(drift => tracklet_drift);
    set!(frame_variation => frame_variation);
    cfg.validate()?;
    Ok(cfg)
}

pub fn resolve_train_config(flags: &TrainFlags) -> Result<TrainConfig> {
    let mut cfg = match &flags.config {
        Some(p) => read_toml(p)?,
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($flag:ident => $($field:ident).+) => {
            if let Some(v) = flags.$flag.clone() {
                cfg.$($field).+ = v;
            }
        };
    }
    set!(seed => seed);
    set!(epochs => optim.epochs);
    set!(batch => optim.batch_size);
    set!(lr => optim.base_lr);
    set!(momentum => optim.momentum);
    set!(tau => hyper.tau);
    set!(lambda => hyper.lambda);
    set!(gamma => hyper.mining.gamma);
    set!(k => hyper.mining.k);
    set!(warmup => warmup_epochs);
    set!(overhaul_every => overhaul_every);
    set!(eval_every => eval_every);
    set!(exclude_own_camera => hyper.mining.exclude_own_camera);
    set!(variant => variant);
    set!(hidden => hidden);
    set!(embed_dim => embed_dim);
    set!(eval_fraction => eval_fraction);
    set!(k_max => k_max);
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Integrity(format!("cannot create {}: {e}", dir.display())))
}

fn gen_manifest(cfg: &GenConfig, no_labels: bool, out: &Path) -> Result<RunManifest> {
    let mut m = RunManifest::new("gen", cfg.seed, serde_json::to_value(cfg)?);
    if no_labels {
        m.config["no_labels"] = serde_json::Value::Bool(true);
    }
    m.outputs = vec![out.to_path_buf(), sidecar_path(out)];
    Ok(m)
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

fn manifest_beside(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".manifest.json");
    PathBuf::from(p)
}

fn run_gen(cfg: &GenConfig, no_labels: bool, out: &Path) -> Result<()> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    gen_manifest(cfg, no_labels, out)?.save(&manifest_beside(out))?;
    let mut ds = synthdata::generate(cfg)?;
    if no_labels {
        ds.labels = None;
    }
    ds.save(out)?;
    println!("wrote {} ({} samples, {} tracklets, d_in {})", out.display(), ds.data.len(), ds.data.n_tracklets(), ds.data.d_in);
    for (c, n) in ds.data.camera_counts().iter().enumerate() {
        println!("  camera {c}: {n} samples");
    }
    Ok(())
}

pub fn cmd_gen(args: &GenArgs) -> Result<()> {
    let cfg = resolve_gen_config(args)?;
    run_gen(&cfg, args.no_labels, &resolve_out(&args.out))
}

fn load_dataset(path: &Path) -> Result<(Dataset, InputDigest)> {
    let (bytes, digest) = read_input(path, "data")?;
    Ok((Dataset::read_from(&mut bytes.as_slice())?, digest))
}

fn run_train(cfg: &TrainConfig, ds: &Dataset, data: InputDigest, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let ck_dir = dir.join("checkpoints");
    create_dir(&ck_dir)?;
    let mut m = RunManifest::new("train", cfg.seed, serde_json::to_value(cfg)?);
    m.inputs.push(data);
    let labeled = ds.labels.is_some();
    m.outputs = vec![dir.join("reports.jsonl"), dir.join("timing.jsonl"), dir.join("checkpoint.bin"), ck_dir.clone()];
    if labeled {
        m.outputs.extend([dir.join("eval.json"), dir.join("cmc.csv")]);
    }
    m.save(&dir.join("manifest.json"))?;

    let mut reports = BufWriter::new(fs::File::create(dir.join("reports.jsonl"))?);
    let mut timing = BufWriter::new(fs::File::create(dir.join("timing.jsonl"))?);
    let mut clock = Instant::now();
    let last = cfg.optim.epochs;
    let mut on_epoch = |r: &trainer::EpochReport, t: &trainer::Trainer| -> Result<()> {
        writeln!(reports, "{}", r.to_json_line()?)?;
        reports.flush()?;
        writeln!(timing, "{}", serde_json::json!({ "epoch": r.epoch, "seconds": clock.elapsed().as_secs_f64() }))?;
        timing.flush()?;
        clock = Instant::now();
        if r.eval.is_some() || r.overhauled || r.epoch == last {
            t.checkpoint().save(&ck_dir.join(format!("epoch-{:04}.bin", r.epoch)))?;
        }
        let eval = r.eval.as_ref().map(|e| format!(" rank1 {:.4} mAP {:.4}", e.rank1(), e.map)).unwrap_or_default();
        eprintln!("epoch {:>3} {:?} loss {:.5}{eval}", r.epoch, r.phase, r.mean_loss);
        Ok(())
    };

    let checkpoint = if labeled {
        let exp = Experiment::prepare(ds, cfg.seed, cfg.eval_fraction)?;
        let out = trainer::run_experiment(&exp, cfg, &mut on_epoch)?;
        write_eval(&out.final_eval, dir)?;
        println!("untrained rank1 {:.4}, final rank1 {:.4} mAP {:.4}", out.untrained.rank1(), out.final_eval.rank1(), out.final_eval.map);
        out.checkpoint
    } else {
        trainer::fit(cfg, &ds.data, None, &mut on_epoch)?.checkpoint
    };
    checkpoint.save(&dir.join("checkpoint.bin"))?;
    println!("wrote {}", dir.display());
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = resolve_train_config(&args.flags)?;
    let (ds, digest) = load_dataset(&args.data)?;
    run_train(&cfg, &ds, digest, &resolve_out(&args.out))
}

fn write_eval(report: &EvalReport, dir: &Path) -> Result<()> {
    report.write_json(&dir.join("eval.json"))?;
    report.write_cmc_csv(fs::File::create(dir.join("cmc.csv"))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EvalConfig {
    seed: u64,
    eval_fraction: f64,
    k_max: usize,
}

fn run_eval(cfg: &EvalConfig, data: &InputDigest, bytes: &[u8], ck: InputDigest, ck_bytes: &[u8], dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let mut m = RunManifest::new("eval", cfg.seed, serde_json::to_value(cfg)?);
    m.inputs = vec![data.clone(), ck];
    m.outputs = vec![dir.join("eval.json"), dir.join("cmc.csv")];
    m.save(&dir.join("manifest.json"))?;
    let ds = Dataset::read_from(&mut &bytes[..])?;
    let encoder = Checkpoint::read_from(&mut &ck_bytes[..])?.encoder;
    let report = evaluate_checkpoint(&ds, &encoder, cfg.seed, cfg.eval_fraction, cfg.k_max)?;
    write_eval(&report, dir)?;
    println!(
        "rank1 {:.4} rank5 {:.4} mAP {:.4} camera probe {:.4} ({} queries, {} excluded)",
        report.rank(1),
        report.rank(5),
        report.map,
        report.camera_probe_accuracy,
        report.n_queries,
        report.n_excluded_queries
    );
    Ok(())
}

/// The evaluation `eval` performs: the held-out split a training run with
/// `seed` and `eval_fraction` would have used.
pub fn evaluate_checkpoint(ds: &Dataset, encoder: &Encoder, seed: u64, eval_fraction: f64, k_max: usize) -> Result<EvalReport> {
    if ds.labels.is_none() {
        return Err(Error::Integrity("dataset has no vehicle ids to evaluate against".into()));
    }
    let exp = Experiment::prepare(ds, seed, eval_fraction)?;
    eval::evaluate(encoder, &exp.eval, &exp.split, k_max)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let cfg = EvalConfig { seed: args.seed, eval_fraction: args.eval_fraction, k_max: args.k_max };
    let (bytes, data) = read_input(&args.data, "data")?;
    let (ck_bytes, ck) = read_input(&args.checkpoint, "checkpoint")?;
    run_eval(&cfg, &data, &bytes, ck, &ck_bytes, &resolve_out(&args.out))
}

fn run_ablate(cfg: &TrainConfig, grid_spec: &str, ds: &Dataset, data: InputDigest, dir: &Path) -> Result<()> {
    let grid: Grid = grid_spec.parse()?;
    create_dir(dir)?;
    let mut m = RunManifest::new("ablate", cfg.seed, serde_json::to_value(cfg)?);
    m.grid = Some(grid_spec.to_string());
    m.inputs.push(data);
    m.outputs = vec![dir.join("ablation.csv"), dir.join("ablation.json")];
    m.save(&dir.join("manifest.json"))?;
    if ds.labels.is_none() {
        return Err(Error::Integrity("dataset has no vehicle ids to evaluate against".into()));
    }
    let exp = Experiment::prepare(ds, cfg.seed, cfg.eval_fraction)?;
    let rows = trainer::run_ablation(&exp, cfg, &grid)?;
    trainer::write_ablation_csv(&rows, fs::File::create(dir.join("ablation.csv"))?)?;
    fs::write(dir.join("ablation.json"), serde_json::to_string_pretty(&rows)? + "\n")?;
    for r in &rows {
        match (&r.error, r.rank1, r.map) {
            (Some(e), _, _) => println!("{}={}: failed: {e}", r.param, r.value),
            (None, Some(r1), Some(map)) => println!("{}={}: rank1 {r1:.4} mAP {map:.4}", r.param, r.value),
            _ => println!("{}={}: no result", r.param, r.value),
        }
    }
    Ok(())
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let cfg = resolve_train_config(&args.flags)?;
    let spec = format!("{}={}", args.grid.param.as_str(), args.grid.values.join(","));
    let (ds, digest) = load_dataset(&args.data)?;
    run_ablate(&cfg, &spec, &ds, digest, &resolve_out(&args.out))
}

pub fn cmd_rerun(args: &RerunArgs) -> Result<()> {
    let m = RunManifest::load(&args.manifest)?;
    let out = resolve_out(&args.out);
    let config = m.config.clone();
    match m.command.as_str() {
        "gen" => {
            let no_labels = config.get("no_labels").and_then(|v| v.as_bool()).unwrap_or(false);
            let cfg: GenConfig = serde_json::from_value(config)?;
            cfg.validate()?;
            run_gen(&cfg, no_labels, &out)
        }
        "train" | "ablate" => {
            let cfg: TrainConfig = serde_json::from_value(config)?;
            cfg.validate()?;
            let data = m.input("data")?;
            let ds = Dataset::read_from(&mut read_recorded(data)?.as_slice())?;
            if m.command == "train" {
                run_train(&cfg, &ds, data.clone(), &out)
            } else {
                let grid = m.grid.as_deref().ok_or_else(|| Error::Format("ablate manifest has no grid".into()))?;
                run_ablate(&cfg, grid, &ds, data.clone(), &out)
            }
        }
        "eval" => {
            let cfg: EvalConfig = serde_json::from_value(config)?;
            let data = m.input("data")?;
            let ck = m.input("checkpoint")?;
            run_eval(&cfg, data, &read_recorded(data)?, ck.clone(), &read_recorded(ck)?, &out)
        }
        other => Err(Error::Format(format!("unknown manifest command {other:?}"))),
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidParam(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Rerun(a) => cmd_rerun(a),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> std::result::Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("ctacl").chain(args.iter().copied()))
    }

    fn train_flags(args: &[&str]) -> TrainFlags {
        match parse(&[&["train", "--data", "d.bin"], args].concat()).unwrap().command {
            Command::Train(t) => t.flags,
            _ => unreachable!(),
        }
    }

    #[test]
    fn missing_required_flag_is_a_usage_error() {
        let e = parse(&["gen", "--seed", "7"]).unwrap_err();
        assert_eq!(e.exit_code(), EXIT_USAGE);
        assert_eq!(parse(&["ablate", "--data", "d.bin", "--grid", "lambda="]).unwrap_err().exit_code(), EXIT_USAGE);
        assert_eq!(parse(&["train", "--data", "d.bin", "--variant", "nope"]).unwrap_err().exit_code(), EXIT_USAGE);
    }

    #[test]
    fn flags_override_defaults() {
        let cfg = resolve_train_config(&train_flags(&[
            "--epochs", "3", "--warmup", "1", "--lambda", "0", "--gamma", "0.05", "--k", "7", "--variant", "sscl", "--hidden", "8,4",
            "--exclude-own-camera",
        ]))
        .unwrap();
        assert_eq!(cfg.optim.epochs, 3);
        assert_eq!(cfg.hyper.lambda, 0.0);
        assert_eq!(cfg.hyper.mining.gamma, 0.05);
        assert_eq!(cfg.hyper.mining.k, 7);
        assert_eq!(cfg.variant, Variant::Sscl);
        assert_eq!(cfg.hidden, vec![8, 4]);
        assert!(cfg.hyper.mining.exclude_own_camera);
        assert_eq!(cfg.optim.batch_size, TrainConfig::default().optim.batch_size);
    }

    #[test]
    fn file_sits_between_defaults_and_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "seed = 9\nwarmup_epochs = 2\n[optim]\nepochs = 4\n[hyper.mining]\nexclude_own_camera = true\n")
            .unwrap();
        let p = path.to_str().unwrap();
        let cfg = resolve_train_config(&train_flags(&["--config", p, "--epochs", "6"])).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.warmup_epochs, 2);
        assert_eq!(cfg.optim.epochs, 6);
        assert!(cfg.hyper.mining.exclude_own_camera);
        assert_eq!(cfg.hyper.tau, 0.07);
        let cfg = resolve_train_config(&train_flags(&["--config", p, "--exclude-own-camera", "false"])).unwrap();
        assert!(!cfg.hyper.mining.exclude_own_camera);
    }

    #[test]
    fn invalid_values_map_to_usage_exit() {
        let e = resolve_train_config(&train_flags(&["--gamma", "1.5"])).unwrap_err();
        assert_eq!(exit_code(&e), EXIT_USAGE);
        let e = resolve_train_config(&train_flags(&["--epochs", "2", "--warmup", "3"])).unwrap_err();
        assert_eq!(exit_code(&e), EXIT_USAGE);
        assert_eq!(exit_code(&Error::Integrity("x".into())), EXIT_RUNTIME);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("train", 3, serde_json::to_value(TrainConfig::default()).unwrap());
        m.inputs.push(InputDigest { role: "data".into(), path: "d.bin".into(), sha256: sha256_hex(b"abc") });
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        assert_eq!(RunManifest::load(&p).unwrap(), m);
        assert_eq!(m.inputs[0].sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(m.seeds.streams.len(), Stream::ALL.len());
    }
}
