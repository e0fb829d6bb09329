use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tritrans::data::{self, Sample};
use tritrans::metrics::{self, MetricAccumulator, MetricReport};
use tritrans::tensor::{Scalar, Tensor};
use tritrans::trainer::{self, Trainer, Variant};
use tritrans::{DecoderMode, Error, FusionMode, Precision, Result, TrainConfig, TriTransNet};

/// RGB-D salient object detection: training, evaluation, inference and ablations.
#[derive(Parser)]
#[command(name = "tritrans", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Configuration sources, lowest precedence first: preset, `--config` file,
/// `--set` overrides, then the dedicated flags.
#[derive(Args, Clone, Debug)]
struct ConfigArgs {
    /// Base hyperparameter set: `desk` or `paper`.
    #[arg(long, default_value = "desk")]
    preset: String,
    /// File of `key = value` lines (`#` starts a comment).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key (repeatable), e.g. `--set levels=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_steps: Option<usize>,
}

impl ConfigArgs {
    fn flags(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if let Some(v) = self.lr {
            out.push(("lr", v.to_string()));
        }
        if let Some(v) = self.batch {
            out.push(("batch", v.to_string()));
        }
        if let Some(v) = self.epochs {
            out.push(("epochs", v.to_string()));
        }
        if let Some(v) = self.seed {
            out.push(("seed", v.to_string()));
        }
        if let Some(v) = self.max_steps {
            out.push(("max_steps", v.to_string()));
        }
        out
    }

    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::preset(&self.preset)?;
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            cfg.apply_text(&text)?;
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config {
                key: kv.clone(),
                reason: "expected KEY=VALUE".into(),
            })?;
            cfg.set(k.trim(), v)?;
        }
        for (k, v) in self.flags() {
            cfg.set(k, &v)?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train on a manifest; writes a checkpoint and a `step epoch loss lr` log.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset manifest (`rgb<TAB>depth<TAB>gt` per line).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "checkpoint.trit")]
        out: PathBuf,
        /// Also write the loss log here.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Continue from a checkpoint (its stored configuration is used).
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Print the configuration and parameter census, then stop.
        #[arg(long)]
        dry_run: bool,
    },
    /// Evaluate a checkpoint on a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Dataset name in the report (default: manifest directory name).
        #[arg(long)]
        name: Option<String>,
        /// Write the PR curve as CSV.
        #[arg(long)]
        pr_csv: Option<PathBuf>,
    },
    /// Write saliency maps for a manifest (ground truth column optional).
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and compare configuration variants from a shared seed.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Variant as `key=value[,key=value]` over ttem, levels, decoder, fusion (repeatable).
        #[arg(long = "variant")]
        variants: Vec<String>,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Score a directory of predicted maps against a directory of ground truth.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value = "dataset")]
        name: String,
        #[arg(long)]
        pr_csv: Option<PathBuf>,
    },
    /// Generate a synthetic dataset with a manifest.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn describe(cfg: &TrainConfig) -> String {
    let m = &cfg.model;
    let ch: Vec<String> = m.channels.iter().map(|c| c.to_string()).collect();
    format!(
        "model: input {s}x{s}, channels {ch}, C_t={ct}, D={d}, L={l}, heads={h}, k={k}, N={n}, ttem {ttem}, decoder {dec}, fusion {fus}\n\
         optim: lr {lr:e}, batch {b}, epochs {e}, lr /{f} every {every} epochs, seed {seed}, precision {p}\n",
        s = m.input_size,
        ch = ch.join(","),
        ct = m.transition_channels,
        d = m.embed_dim,
        l = m.layers,
        h = m.heads,
        k = m.levels,
        n = m.tokens(),
        ttem = if m.ttem { "on" } else { "off" },
        dec = match m.decoder {
            DecoderMode::ThreeStream => "three",
            DecoderMode::SingleStream => "single",
        },
        fus = match m.fusion {
            FusionMode::Dpm => "dpm",
            FusionMode::Add => "add",
        },
        lr = cfg.lr,
        b = cfg.batch,
        e = cfg.epochs,
        f = cfg.lr_decay_factor,
        every = cfg.lr_decay_every,
        seed = cfg.seed,
        p = match cfg.precision {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        },
    )
}

fn census(model: &TriTransNet) -> String {
    let mut out = String::from("parameters:\n");
    for (name, count) in model.registry().census(2) {
        out.push_str(&format!("  {name:<24} {count}\n"));
    }
    out.push_str(&format!("  {:<24} {}\n", "total", model.registry().count()));
    out
}

fn required(path: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    path.clone().ok_or_else(|| Error::Config { key: flag.into(), reason: "required".into() })
}

fn train_with<T: Scalar>(
    mut trainer: Trainer<T>,
    samples: &[Sample],
    out: &Path,
    log: Option<&Path>,
) -> Result<()> {
    let mut file = match log {
        Some(p) => Some(fs::File::create(p).map_err(|e| Error::Io { path: p.into(), source: e })?),
        None => None,
    };
    let mut io_err = None;
    trainer.run(samples, Some(out), |entry| {
        println!("{entry}");
        if let Some(f) = file.as_mut() {
            if let Err(e) = writeln!(f, "{entry}") {
                io_err.get_or_insert(e);
            }
        }
    })?;
    if let (Some(e), Some(p)) = (io_err, log) {
        return Err(Error::Io { path: p.into(), source: e });
    }
    println!("checkpoint written to {}", out.display());
    Ok(())
}

fn train(
    config: &ConfigArgs,
    data_path: &Option<PathBuf>,
    out: &Path,
    log: Option<&Path>,
    resume: &Option<PathBuf>,
    dry_run: bool,
) -> Result<()> {
    let cfg = match resume {
        Some(p) => {
            let mut cfg = trainer::load_model::<f32>(p)?.0;
            for (k, v) in config.flags() {
                cfg.set(k, &v)?;
            }
            cfg
        }
        None => config.resolve()?,
    };
    for warning in cfg.validate()? {
        eprintln!("warning: {warning}");
    }
    print!("{}", describe(&cfg));
    let model = TriTransNet::new(&cfg.model)?;
    print!("{}", census(&model));
    if dry_run {
        return Ok(());
    }
    let samples = data::load_manifest(&required(data_path, "data")?, cfg.model.input_size)?;
    println!("training on {} samples", samples.len());
    match cfg.precision {
        Precision::F32 => {
            let t = match resume {
                Some(p) => with_config(Trainer::<f32>::resume(p)?, &cfg),
                None => Trainer::<f32>::new(cfg)?,
            };
            train_with(t, &samples, out, log)
        }
        Precision::F64 => {
            let t = match resume {
                Some(p) => with_config(Trainer::<f64>::resume(p)?, &cfg),
                None => Trainer::<f64>::new(cfg)?,
            };
            train_with(t, &samples, out, log)
        }
    }
}

fn with_config<T: Scalar>(mut t: Trainer<T>, cfg: &TrainConfig) -> Trainer<T> {
    t.config = cfg.clone();
    t
}

fn print_report(reports: &[(String, MetricReport)]) {
    print!("{}", metrics::table(reports));
    for (_, r) in reports {
        print!("{}", r.lines());
    }
}

fn write_pr(path: &Option<PathBuf>, report: &MetricReport) -> Result<()> {
    if let Some(p) = path {
        fs::write(p, report.pr_csv()).map_err(|e| Error::Io { path: p.clone(), source: e })?;
    }
    Ok(())
}

fn dataset_name(manifest: &Path) -> String {
    manifest
        .parent()
        .and_then(|p| p.file_name())
        .map_or_else(|| "dataset".to_string(), |n| n.to_string_lossy().into_owned())
}

fn eval(checkpoint: &Path, data_path: &Path, name: &Option<String>, pr_csv: &Option<PathBuf>) -> Result<()> {
    let (cfg, model, params) = trainer::load_model::<f32>(checkpoint)?;
    let samples = data::load_manifest(data_path, cfg.model.input_size)?;
    let name = name.clone().unwrap_or_else(|| dataset_name(data_path));
    let report = trainer::evaluate(&model, &params, &samples, &name)?;
    print_report(&[(name, report.clone())]);
    write_pr(pr_csv, &report)
}

fn infer(checkpoint: &Path, data_path: &Path, out: &Path) -> Result<()> {
    let (cfg, model, params) = trainer::load_model::<f32>(checkpoint)?;
    let size = cfg.model.input_size;
    let entries = data::read_manifest(data_path)?;
    fs::create_dir_all(out).map_err(|e| Error::Io { path: out.into(), source: e })?;
    let mut acc = MetricAccumulator::default();
    let mut scored = 0;
    for entry in &entries {
        let (rgb, depth) = data::load_inputs(entry, size)?;
        let rgb = rgb.reshape(&[1, 3, size, size])?;
        let depth = depth.reshape(&[1, 1, size, size])?;
        let map = model.predict(&params, &rgb, &depth)?;
        let stem = entry.rgb.file_stem().map_or_else(|| "map".into(), |s| s.to_string_lossy().into_owned());
        let path = out.join(format!("{stem}.pgm"));
        data::write_map(&path, &map, false)?;
        println!("{}", path.display());
        if let Some(gt) = &entry.gt {
            let sample = Sample::load(&entry.rgb, &entry.depth, gt, size)?;
            let pred = Tensor::new(vec![size, size], map.data().iter().map(|&v| v as f64).collect())?;
            let g = Tensor::new(vec![size, size], sample.gt.data().iter().map(|&v| v as f64).collect())?;
            acc.add(&pred, &g)?;
            scored += 1;
        }
    }
    if scored == entries.len() && scored > 0 {
        print_report(&[(dataset_name(data_path), acc.finish(&dataset_name(data_path))?)]);
    }
    Ok(())
}

fn ablate(config: &ConfigArgs, variants: &[String], train: &Option<PathBuf>, test: &Option<PathBuf>) -> Result<()> {
    let base = config.resolve()?;
    let grid: Vec<Variant> = variants.iter().map(|v| Variant::parse(v)).collect::<Result<_>>()?;
    if grid.is_empty() {
        println!("empty ablation grid: nothing to compare");
        return Ok(());
    }
    let size = base.model.input_size;
    let train = data::load_manifest(&required(train, "train")?, size)?;
    let test = data::load_manifest(&required(test, "test")?, size)?;
    let reports = trainer::ablate(&grid, &base, &train, &test, |name, e| println!("{name} {e}"))?;
    print_report(&reports);
    Ok(())
}

fn sorted_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Io { path: dir.into(), source: e })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    Ok(files)
}

fn metrics_dirs(pred: &Path, gt: &Path, name: &str, pr_csv: &Option<PathBuf>) -> Result<()> {
    let mut acc = MetricAccumulator::default();
    let files = sorted_files(gt)?;
    if files.is_empty() {
        return Err(Error::Invalid(format!("{}: no ground truth maps", gt.display())));
    }
    for g_path in files {
        let file = g_path.file_name().expect("listed files have names");
        let p_path = pred.join(file);
        let g = data::load_gray(&g_path)?.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
        let mut p = data::load_gray(&p_path)?;
        if p.shape() != g.shape() {
            let s = p.shape().to_vec();
            let resized = data::resize_bilinear(&p.reshape(&[1, s[0], s[1]])?, g.shape()[0], g.shape()[1]);
            p = resized.reshape(g.shape())?;
        }
        acc.add(&p, &g)?;
    }
    let report = acc.finish(name)?;
    print_report(&[(name.to_string(), report.clone())]);
    write_pr(pr_csv, &report)
}

fn synth(seed: u64, n: usize, size: usize, out: &Path) -> Result<()> {
    let samples = data::synth_generate(seed, n, size)?;
    let manifest = data::write_dataset(&samples, out)?;
    println!("wrote {n} samples; manifest {}", manifest.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Train { config, data, out, log, resume, dry_run } => {
            train(config, data, out, log.as_deref(), resume, *dry_run)
        }
        Command::Eval { checkpoint, data, name, pr_csv } => eval(checkpoint, data, name, pr_csv),
        Command::Infer { checkpoint, data, out } => infer(checkpoint, data, out),
        Command::Ablate { config, variants, train, test } => ablate(config, variants, train, test),
        Command::Metrics { pred, gt, name, pr_csv } => metrics_dirs(pred, gt, name, pr_csv),
        Command::Synth { seed, n, size, out } => synth(*seed, *n, *size, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
