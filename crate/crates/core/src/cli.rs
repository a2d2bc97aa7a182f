//! Command-line surface: `arch`, `gen-toy`, `train`, `eval`, `predict` and
//! `explain`.
//!
//! Settings come from defaults, then an optional `key = value` file given with
//! `--config`, then explicit flags. A training run directory holds the
//! resolved `run.conf`, the split manifests, `train_log.csv` and one
//! `snapshot_<i>.ecov` per cycle; the other subcommands read it back.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::arch::{scale_arch, ArchSpec, ScalingCoefficients};
use crate::data::Dataset;
use crate::ensemble::{hard_ensemble, soft_ensemble, PredictionSet};
use crate::error::{Error, Result};
use crate::gradcam::{compute_cam_for_image, render_overlay};
use crate::io::config::ConfigFile;
use crate::io::{
    generate_toy_dataset, load_dataset, load_manifest, load_snapshot, read_gray, save_snapshot, split_dataset,
    write_png_rgb, DatasetManifest, ManifestEntry,
};
use crate::metrics::EvaluationReport;
use crate::model::{build_model, param_count, Feature, ModelParams};
use crate::train::{predict_probs, train_with_snapshots, ClassWeighting, EpochLog, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

const RUN_CONF: &str = "run.conf";
const LOG_FILE: &str = "train_log.csv";
const EVAL_BATCH: usize = 16;

const CONFIG_KEYS: &[&str] = &[
    "arch",
    "phi",
    "classes",
    "epochs",
    "batch_size",
    "lr",
    "cycles",
    "seed",
    "val_fraction",
    "class_weights",
    "augment",
    "rotation_deg",
    "shear_deg",
    "zoom_min",
    "zoom_max",
    "flip_prob",
    "l1",
    "l2",
];

#[derive(Parser, Debug)]
#[command(name = "ecovnet", version, about = "Snapshot-ensemble image classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the scaled stage table.
    Arch {
        /// b0..b5 or micro.
        #[arg(long, default_value = "b0")]
        preset: String,
        /// Compound coefficient applied to b0 (overrides --preset).
        #[arg(long)]
        phi: Option<f64>,
        #[arg(long, default_value_t = 3)]
        classes: usize,
    },
    /// Write the synthetic three-class dataset.
    GenToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 48)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a snapshot ensemble.
    Train(TrainArgs),
    /// Evaluate a run on a labelled manifest and print the report CSV.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = EnsembleMode::Soft)]
        ensemble: EnsembleMode,
        /// Number of final snapshots to combine (default: all).
        #[arg(long)]
        m: Option<usize>,
        /// Snapshot used with `--ensemble none` (1-based, default: last).
        #[arg(long)]
        snapshot: Option<usize>,
        /// Directory for per-class ROC point CSVs.
        #[arg(long)]
        roc_dir: Option<PathBuf>,
    },
    /// Print per-image predictions as CSV.
    Predict {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value_t = EnsembleMode::Soft)]
        ensemble: EnsembleMode,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        snapshot: Option<usize>,
        /// Manifest whose images are classified (labels are ignored).
        #[arg(long)]
        manifest: Option<PathBuf>,
        images: Vec<PathBuf>,
    },
    /// Write Grad-CAM overlays, one PNG per image and snapshot.
    Explain {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Target class index or name (default: each snapshot's prediction).
        #[arg(long)]
        class: Option<String>,
        /// 1-based snapshot index (default: all).
        #[arg(long)]
        snapshot: Option<usize>,
        /// `top`, `stem` or `block<i>`.
        #[arg(long, default_value = "top")]
        layer: String,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    phi: Option<f64>,
    /// Comma-separated class names, in label order.
    #[arg(long)]
    classes: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    cycles: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    class_weights: Option<String>,
    #[arg(long)]
    augment: Option<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum EnsembleMode {
    None,
    Hard,
    Soft,
}

impl EnsembleMode {
    fn name(self) -> &'static str {
        match self {
            EnsembleMode::None => "none",
            EnsembleMode::Hard => "hard",
            EnsembleMode::Soft => "soft",
        }
    }
}

/// Errors in how the tool was invoked, as opposed to bad data.
#[derive(Debug)]
enum CliError {
    Usage(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => CliError::Usage(format!("config: {msg}")),
            other => CliError::Lib(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Runs the tool on `argv` (including the program name) and returns the exit
/// code. Reports go to standard output, diagnostics to standard error.
pub fn run_cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let mut stdout = std::io::stdout().lock();
    match dispatch(cli.command, &mut stdout) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Lib(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Numeric(_) => EXIT_NUMERIC,
                _ => EXIT_DATA,
            }
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> CliResult<()> {
    match cmd {
        Command::Arch { preset, phi, classes } => {
            let spec = match phi {
                Some(phi) => ScalingCoefficients::with_phi(phi).and_then(|c| scale_arch(&ArchSpec::b0(classes), c)),
                None => ArchSpec::preset(&preset, classes),
            }
            .and_then(|s| s.validate().map(|_| s))
            .map_err(|e| usage(e.to_string()))?;
            let model = build_model::<f32>(&spec, 0)?;
            write_out(out, &format!("{}: {}x{} input\n", spec.name, spec.resolution, spec.resolution))?;
            write_out(out, &spec.to_string())?;
            write_out(out, &format!("trainable parameters: {}\n", param_count(&model)))
        }
        Command::GenToy { out: dir, n, size, seed } => {
            if n < 10 || size < 8 {
                return Err(usage("gen-toy needs --n >= 10 and --size >= 8"));
            }
            let m = generate_toy_dataset(&dir, n, size, seed)?;
            eprintln!("wrote {} images to {}", m.len(), dir.display());
            Ok(())
        }
        Command::Train(args) => train(args),
        Command::Eval {
            run,
            manifest,
            ensemble,
            m,
            snapshot,
            roc_dir,
        } => {
            let run = Run::open(&run)?;
            let man = load_manifest(&manifest, &run.class_refs())?;
            let data = load_dataset(&man, run.spec.resolution)?;
            let (pred, scores) = run.classify(&data, ensemble, m, snapshot)?;
            let report = EvaluationReport::new(&data.labels, &pred, &scores, &run.classes)?;
            write_out(out, &report.to_csv())?;
            if let Some(dir) = roc_dir {
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                for (k, name) in run.classes.iter().enumerate() {
                    if let Some(csv) = report.roc_csv(k) {
                        write_file(&dir.join(format!("roc_{name}.csv")), &csv)?;
                    }
                }
                if let Some(csv) = report.micro_roc_csv() {
                    write_file(&dir.join("roc_micro.csv"), &csv)?;
                }
                if let Some(csv) = report.macro_roc_csv() {
                    write_file(&dir.join("roc_macro.csv"), &csv)?;
                }
            }
            Ok(())
        }
        Command::Predict {
            run,
            ensemble,
            m,
            snapshot,
            manifest,
            images,
        } => {
            let run = Run::open(&run)?;
            let mut entries: Vec<ManifestEntry> = match manifest {
                Some(p) => load_manifest(&p, &run.class_refs())?.entries,
                None => Vec::new(),
            };
            entries.extend(images.into_iter().map(|path| ManifestEntry { path, label: 0 }));
            if entries.is_empty() {
                return Err(usage("predict needs image paths or --manifest"));
            }
            let man = DatasetManifest {
                classes: run.classes.clone(),
                entries,
            };
            let data = load_dataset(&man, run.spec.resolution)?;
            let (pred, scores) = run.classify(&data, ensemble, m, snapshot)?;
            let c = run.classes.len();
            let mut csv = String::from("path,pred_label");
            (0..c).for_each(|k| csv.push_str(&format!(",p{k}")));
            csv.push_str(",mode\n");
            for (i, e) in man.entries.iter().enumerate() {
                csv.push_str(&format!("{},{}", e.path.display(), run.classes[pred[i]]));
                for p in &scores[i * c..(i + 1) * c] {
                    csv.push_str(&format!(",{p:.6}"));
                }
                csv.push_str(&format!(",{}\n", ensemble.name()));
            }
            write_out(out, &csv)
        }
        Command::Explain {
            run,
            out: dir,
            class,
            snapshot,
            layer,
            images,
        } => {
            let run = Run::open(&run)?;
            let layer = Feature::parse(&layer).map_err(|e| usage(e.to_string()))?;
            let target = class.map(|c| run.class_index(&c)).transpose()?;
            let which: Vec<usize> = match snapshot {
                Some(s) => vec![run.check_snapshot(s)?],
                None => (1..=run.snapshots.len()).collect(),
            };
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for path in &images {
                let img = read_gray(path)?;
                let stem = path.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
                let r = run.spec.resolution;
                let input = img.resize(r, r);
                for &s in &which {
                    let model = &run.snapshots[s - 1];
                    let k = match target {
                        Some(k) => k,
                        None => {
                            let probs = model.predict(&input.to_tensor::<f32>())?;
                            crate::train::argmax(probs.data())
                        }
                    };
                    let heat = compute_cam_for_image(model, &input, k, layer, s)?;
                    let overlay = render_overlay(&heat, &input)?;
                    write_png_rgb(&dir.join(format!("{stem}_s{s}_c{k}.png")), &overlay)?;
                }
            }
            eprintln!("wrote {} overlays to {}", images.len() * which.len(), dir.display());
            Ok(())
        }
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Lib(Error::io("<stdout>", e)))
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Lib(Error::io(path, e)))
}

/// Fully resolved training settings.
#[derive(Clone, Debug, PartialEq)]
struct Settings {
    arch: String,
    phi: Option<f64>,
    classes: Vec<String>,
    val_fraction: f64,
    train: TrainConfig,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            arch: "micro".into(),
            phi: None,
            classes: crate::io::DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect(),
            val_fraction: 0.1,
            train: TrainConfig::default(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| usage(format!("{key} = {v:?}: {e}")))
}

fn parse_range(key: &str, v: &str) -> CliResult<(f64, f64)> {
    let (lo, hi) = v
        .split_once(',')
        .ok_or_else(|| usage(format!("{key} expects lo,hi")))?;
    Ok((parse_value(key, lo.trim())?, parse_value(key, hi.trim())?))
}

impl Settings {
    fn apply(&mut self, key: &str, v: &str) -> CliResult<()> {
        let t = &mut self.train;
        match key {
            "arch" => self.arch = v.to_string(),
            "phi" => self.phi = Some(parse_value(key, v)?),
            "classes" => self.classes = v.split(',').map(|s| s.trim().to_string()).collect(),
            "epochs" => t.total_epochs = parse_value(key, v)?,
            "batch_size" => t.batch_size = parse_value(key, v)?,
            "lr" => t.initial_lr = parse_value(key, v)?,
            "cycles" => t.cycles = parse_value(key, v)?,
            "seed" => t.seed = parse_value(key, v)?,
            "val_fraction" => self.val_fraction = parse_value(key, v)?,
            "class_weights" => t.class_weights = parse_value::<ClassWeighting>(key, v)?,
            "augment" => t.augment = parse_value(key, v)?,
            "rotation_deg" => t.augment_ranges.rotation_deg = parse_range(key, v)?,
            "shear_deg" => t.augment_ranges.shear_deg = parse_range(key, v)?,
            "zoom_min" => t.augment_ranges.zoom.0 = parse_value(key, v)?,
            "zoom_max" => t.augment_ranges.zoom.1 = parse_value(key, v)?,
            "flip_prob" => t.augment_ranges.flip_prob = parse_value(key, v)?,
            "l1" => t.l1 = parse_value(key, v)?,
            "l2" => t.l2 = parse_value(key, v)?,
            _ => return Err(usage(format!("unknown setting {key:?}"))),
        }
        Ok(())
    }

    fn apply_config(&mut self, cfg: &ConfigFile) -> CliResult<()> {
        cfg.check_known(CONFIG_KEYS)?;
        for key in cfg.keys() {
            self.apply(key, cfg.raw(key).unwrap())?;
        }
        Ok(())
    }

    fn spec(&self) -> CliResult<ArchSpec> {
        let n = self.classes.len();
        let spec = match self.phi {
            Some(phi) => ScalingCoefficients::with_phi(phi).and_then(|c| scale_arch(&ArchSpec::b0(n), c)),
            None => ArchSpec::preset(&self.arch, n),
        }
        .and_then(|s| s.validate().map(|_| s))
        .map_err(|e| usage(e.to_string()))?;
        Ok(spec)
    }

    fn validate(&self) -> CliResult<()> {
        if self.classes.len() < 2 || self.classes.iter().any(|c| c.is_empty()) {
            return Err(usage("need at least two non-empty class names"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(usage("val_fraction must lie in (0, 1)"));
        }
        self.train.validate().map_err(|e| usage(e.to_string()))
    }

    fn to_config(&self) -> ConfigFile {
        let t = &self.train;
        let r = &t.augment_ranges;
        let mut c = ConfigFile::default();
        c.set("arch", self.arch.clone());
        if let Some(phi) = self.phi {
            c.set("phi", phi.to_string());
        }
        c.set("classes", self.classes.join(","));
        c.set("epochs", t.total_epochs.to_string());
        c.set("batch_size", t.batch_size.to_string());
        c.set("lr", t.initial_lr.to_string());
        c.set("cycles", t.cycles.to_string());
        c.set("seed", t.seed.to_string());
        c.set("val_fraction", self.val_fraction.to_string());
        c.set("class_weights", t.class_weights.to_string());
        c.set("augment", t.augment.to_string());
        c.set("rotation_deg", format!("{},{}", r.rotation_deg.0, r.rotation_deg.1));
        c.set("shear_deg", format!("{},{}", r.shear_deg.0, r.shear_deg.1));
        c.set("zoom_min", r.zoom.0.to_string());
        c.set("zoom_max", r.zoom.1.to_string());
        c.set("flip_prob", r.flip_prob.to_string());
        c.set("l1", t.l1.to_string());
        c.set("l2", t.l2.to_string());
        c
    }
}

fn config_text(c: &ConfigFile) -> String {
    c.keys()
        .map(|k| format!("{k} = {}\n", c.raw(k).unwrap()))
        .collect()
}

fn resolve_settings(args: &TrainArgs) -> CliResult<Settings> {
    let mut s = Settings::default();
    if let Some(path) = &args.config {
        s.apply_config(&ConfigFile::load(path)?)?;
    }
    let flags: [(&str, Option<String>); 11] = [
        ("arch", args.arch.clone()),
        ("phi", args.phi.map(|v| v.to_string())),
        ("classes", args.classes.clone()),
        ("epochs", args.epochs.map(|v| v.to_string())),
        ("batch_size", args.batch_size.map(|v| v.to_string())),
        ("lr", args.lr.map(|v| v.to_string())),
        ("cycles", args.cycles.map(|v| v.to_string())),
        ("seed", args.seed.map(|v| v.to_string())),
        ("val_fraction", args.val_fraction.map(|v| v.to_string())),
        ("class_weights", args.class_weights.clone()),
        ("augment", args.augment.map(|v| v.to_string())),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            s.apply(key, &v)?;
        }
    }
    s.validate()?;
    Ok(s)
}

fn train(args: TrainArgs) -> CliResult<()> {
    let settings = resolve_settings(&args)?;
    let spec = settings.spec()?;
    let classes: Vec<&str> = settings.classes.iter().map(String::as_str).collect();
    let manifest = load_manifest(&args.manifest, &classes)?;
    let (train_m, val_m) = split_dataset(&manifest, settings.val_fraction, settings.train.seed)?;
    let train_d = load_dataset(&train_m, spec.resolution)?;
    let val_d = load_dataset(&val_m, spec.resolution)?;

    let dir = &args.out;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join(RUN_CONF), &config_text(&settings.to_config()))?;
    write_file(&dir.join("train.csv"), &train_m.to_csv())?;
    write_file(&dir.join("val.csv"), &val_m.to_csv())?;

    let mut model = build_model::<f32>(&spec, settings.train.seed)?;
    log::info!(
        "{}: {} parameters, {} train / {} val images",
        spec.name,
        param_count(&model),
        train_d.len(),
        val_d.len()
    );
    let mut log_csv = format!("{}\n", EpochLog::CSV_HEADER);
    let bundle = train_with_snapshots(&mut model, &train_d, &val_d, &settings.train, |e| {
        eprintln!(
            "epoch {:>3}  lr {:.3e}  train_loss {:.4}  val_loss {:.4}  val_acc {:.4}",
            e.epoch, e.lr, e.train_loss, e.val_loss, e.val_acc
        );
        log_csv.push_str(&e.csv_row());
        log_csv.push('\n');
    });
    // Keep the log of a run that aborted on a non-finite value.
    write_file(&dir.join(LOG_FILE), &log_csv)?;
    let bundle = bundle?;
    for s in &bundle.snapshots {
        save_snapshot(&s.params, &snapshot_path(dir, s.cycle))?;
    }
    eprintln!("saved {} snapshots to {}", bundle.len(), dir.display());
    Ok(())
}

fn snapshot_path(dir: &Path, cycle: usize) -> PathBuf {
    dir.join(format!("snapshot_{cycle}.ecov"))
}

/// A trained run loaded back from disk.
struct Run {
    spec: ArchSpec,
    classes: Vec<String>,
    snapshots: Vec<ModelParams<f32>>,
}

impl Run {
    fn open(dir: &Path) -> CliResult<Run> {
        let mut settings = Settings::default();
        settings.apply_config(&ConfigFile::load(&dir.join(RUN_CONF))?)?;
        let spec = settings.spec()?;
        let mut snapshots = Vec::new();
        for cycle in 1.. {
            let path = snapshot_path(dir, cycle);
            if !path.exists() {
                break;
            }
            snapshots.push(load_snapshot(&path, &spec)?);
        }
        if snapshots.is_empty() {
            return Err(CliError::Lib(Error::Manifest {
                path: dir.to_path_buf(),
                reason: "run directory holds no snapshots".into(),
            }));
        }
        Ok(Run {
            spec,
            classes: settings.classes,
            snapshots,
        })
    }

    fn class_refs(&self) -> Vec<&str> {
        self.classes.iter().map(String::as_str).collect()
    }

    fn class_index(&self, name: &str) -> CliResult<usize> {
        self.classes
            .iter()
            .position(|c| c == name)
            .or_else(|| name.parse().ok().filter(|&k| k < self.classes.len()))
            .ok_or_else(|| usage(format!("unknown class {name:?}")))
    }

    fn check_snapshot(&self, s: usize) -> CliResult<usize> {
        if s == 0 || s > self.snapshots.len() {
            return Err(usage(format!("snapshot {s} outside 1..={}", self.snapshots.len())));
        }
        Ok(s)
    }

    /// Predicted labels and the `N×C` scores behind them.
    fn classify(
        &self,
        data: &Dataset,
        mode: EnsembleMode,
        m: Option<usize>,
        snapshot: Option<usize>,
    ) -> CliResult<(Vec<usize>, Vec<f64>)> {
        let total = self.snapshots.len();
        let used: Vec<usize> = match mode {
            EnsembleMode::None => vec![self.check_snapshot(snapshot.unwrap_or(total))? - 1],
            _ => {
                let m = m.unwrap_or(total);
                if m == 0 || m > total {
                    return Err(usage(format!("--m {m} outside 1..={total}")));
                }
                (total - m..total).collect()
            }
        };
        let probs = used
            .iter()
            .map(|&i| predict_probs(&self.snapshots[i], data, EVAL_BATCH))
            .collect::<Result<Vec<_>>>()?;
        let pset = PredictionSet::from_tensors(&probs)?;
        let soft = soft_ensemble(&pset);
        let scores: Vec<f64> = soft.iter().flat_map(|(_, p)| p.iter().copied()).collect();
        let pred = match mode {
            EnsembleMode::Hard => hard_ensemble(&pset),
            _ => soft.iter().map(|(k, _)| *k).collect(),
        };
        Ok((pred, scores))
    }
}
