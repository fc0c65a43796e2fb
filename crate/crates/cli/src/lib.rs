//! `dabc` command-line interface.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dabc::data::{
    densify_depth, generate, load_folder_dataset, pfm, read_rgb_png, write_folder_sample, Domain, GeneratorConfig,
    Geometry, SceneSample, ValidMask,
};
use dabc::metrics::MetricReport;
use dabc::model::{Checkpoint, HeadKind, ModelConfig, Precision};
use dabc::pipeline::{
    gates_from_csv, infer_depth, load_confusion_csv, plot_gates, render, run_experiment, ExperimentConfig,
    ExperimentKind, Variant,
};
use dabc::train::{evaluate_checkpoint, score_predictions, train_with_progress, TrainConfig, TrainSchedule};
use dabc::QuantizationSpec;

#[derive(Parser, Debug)]
#[command(name = "dabc", version, about = "Depth prediction as attention-gated classification over log-depth bins")]
struct Cli {
    /// JSON config for the subcommand (generator, training or experiment config).
    #[arg(long, global = true, value_name = "JSON")]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log progress at info level.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic RGB-D samples in the folder layout.
    Generate(GenerateArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint, or a folder of predicted depth maps, on a dataset.
    Eval(EvalArgs),
    /// Predict depth for one RGB image.
    Infer(InferArgs),
    /// Run one of the toy-scale analyses.
    Experiment(ExperimentArgs),
    /// Re-render figures from saved tables or depth maps.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    domain: Option<DomainArg>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    /// Keep only a few percent of depth pixels (outdoor only).
    #[arg(long)]
    sparse: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset root with `indoor/` and/or `outdoor/` folders.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Train on this many generated samples per domain instead of a folder.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Validation root with the same layout as `--data`.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Fill missing depth with guided densification before training.
    #[arg(long)]
    densify: bool,
    #[arg(long, value_enum, default_value = "classification")]
    head: HeadArg,
    #[arg(long, value_enum, default_value = "toy")]
    preset: Preset,
    /// Checkpoint path to write.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch training log (CSV).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Dataset root with `indoor/` and/or `outdoor/` folders.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, required_unless_present = "predictions")]
    checkpoint: Option<PathBuf>,
    /// Folder of `<id>.depth.pfm` predictions to score instead of running a model.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Output directory for metric CSV/JSON files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// 8-bit RGB PNG.
    #[arg(long)]
    input: PathBuf,
    /// Output PFM depth map at the input resolution.
    #[arg(long)]
    out: PathBuf,
    /// Also write a colour-mapped PNG.
    #[arg(long)]
    png: Option<PathBuf>,
    /// Colour map to use for `--png`.
    #[arg(long, value_enum, default_value = "outdoor")]
    domain: DomainArg,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(value_enum)]
    kind: ExperimentArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "toy")]
    preset: Preset,
    /// Load variant checkpoints from this directory instead of training.
    #[arg(long)]
    checkpoints: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    #[arg(value_enum)]
    kind: PlotKind,
    #[arg(long)]
    input: PathBuf,
    /// PNG path (confusion, depth) or output directory (gates).
    #[arg(long)]
    out: PathBuf,
    /// Colour map for depth plots.
    #[arg(long, value_enum, default_value = "outdoor")]
    domain: DomainArg,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum DomainArg {
    Indoor,
    Outdoor,
}

impl From<DomainArg> for Domain {
    fn from(d: DomainArg) -> Self {
        match d {
            DomainArg::Indoor => Domain::Indoor,
            DomainArg::Outdoor => Domain::Outdoor,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum HeadArg {
    Classification,
    Regression,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
enum Preset {
    /// Scaled-down geometry, widths and schedule.
    Toy,
    /// Tiny run for smoke tests.
    Smoke,
    /// Full-scale geometry, widths and schedule.
    Full,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
#[value(rename_all = "snake_case")]
enum ExperimentArg {
    ClsVsReg,
    AttentionAblation,
    Confusion,
    AttentionDump,
}

impl From<ExperimentArg> for ExperimentKind {
    fn from(k: ExperimentArg) -> Self {
        match k {
            ExperimentArg::ClsVsReg => ExperimentKind::ClsVsReg,
            ExperimentArg::AttentionAblation => ExperimentKind::AttentionAblation,
            ExperimentArg::Confusion => ExperimentKind::Confusion,
            ExperimentArg::AttentionDump => ExperimentKind::AttentionDump,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum PlotKind {
    /// Heat map of a confusion counts CSV.
    Confusion,
    /// Line plots of an attention gate CSV.
    Gates,
    /// Colour-mapped PFM depth map.
    Depth,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code: 0 on success, 2 on usage errors and 1 on
/// any other failure.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(cli, a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Eval(a) => cmd_eval(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Experiment(a) => cmd_experiment(cli, a),
        Command::Plot(a) => cmd_plot(a),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn cmd_generate(cli: &Cli, a: &GenerateArgs) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => read_json::<GeneratorConfig>(p)?,
        None => {
            let domain = a.domain.map_or(Domain::Indoor, Domain::from);
            let (height, width) = Geometry::toy().raw_size(domain);
            GeneratorConfig {
                count: 10,
                height,
                width,
                seed: 0,
                domain,
                sparse: false,
            }
        }
    };
    if let Some(d) = a.domain {
        cfg.domain = d.into();
    }
    cfg.count = a.count.unwrap_or(cfg.count);
    cfg.height = a.height.unwrap_or(cfg.height);
    cfg.width = a.width.unwrap_or(cfg.width);
    cfg.sparse |= a.sparse;
    cfg.seed = cli.seed.unwrap_or(cfg.seed);
    let samples = generate(&cfg)?;
    for s in &samples {
        write_folder_sample(&a.out, s)?;
    }
    println!("wrote {} {} samples to {}", samples.len(), cfg.domain, a.out.display());
    Ok(())
}

/// Loads `<root>/indoor` and `<root>/outdoor`, whichever exist.
fn load_dataset(root: &Path) -> Result<Vec<SceneSample>> {
    let mut out = Vec::new();
    let mut found = false;
    for d in Domain::ALL {
        let dir = root.join(d.name());
        if dir.is_dir() {
            found = true;
            out.extend(load_folder_dataset(&dir, d)?);
        }
    }
    if !found {
        bail!(
            "{} has neither an indoor/ nor an outdoor/ subfolder",
            root.display()
        );
    }
    if out.is_empty() {
        bail!("no samples found under {}", root.display());
    }
    Ok(out)
}

fn densify_all(samples: Vec<SceneSample>) -> Result<Vec<SceneSample>> {
    samples
        .into_iter()
        .map(|s| {
            if s.valid.count() == s.valid.data().len() {
                return Ok(s);
            }
            let depth = densify_depth(&s.depth, &s.valid, &s.rgb)?;
            let (h, w) = depth.dims();
            Ok(SceneSample::new(s.id, s.domain, s.rgb, depth, ValidMask::all(h, w))?)
        })
        .collect()
}

fn train_config(cli: &Cli, a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &cli.config {
        Some(p) => read_json::<TrainConfig>(p)?,
        None => match a.preset {
            Preset::Full => {
                let spec = QuantizationSpec::default();
                let model = match a.head {
                    HeadArg::Classification => ModelConfig::full_scale(&spec),
                    HeadArg::Regression => ModelConfig {
                        num_classes: 1,
                        attention_enabled: false,
                        head: HeadKind::Regression,
                        ..ModelConfig::full_scale(&spec)
                    },
                };
                TrainConfig {
                    model,
                    spec,
                    schedule: TrainSchedule::default(),
                    geometry: Geometry::full(),
                    validate_every: 1,
                }
            }
            Preset::Toy | Preset::Smoke => {
                let e = if a.preset == Preset::Toy { ExperimentConfig::toy() } else { ExperimentConfig::smoke() };
                let variant = match a.head {
                    HeadArg::Classification => Variant::classification(None),
                    HeadArg::Regression => Variant::regression(None),
                };
                TrainConfig {
                    validate_every: 1,
                    ..e.train_config(variant)
                }
            }
        },
    };
    if let Some(seed) = cli.seed {
        cfg.schedule.seed = seed;
    }
    Ok(cfg)
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let cfg = train_config(cli, a)?;
    let mut data = match (&a.data, a.synthetic) {
        (Some(root), _) => load_dataset(root)?,
        (None, Some(n)) => {
            let mut out = Vec::new();
            for domain in Domain::ALL {
                let (height, width) = cfg.geometry.raw_size(domain);
                out.extend(generate(&GeneratorConfig {
                    count: n,
                    height,
                    width,
                    seed: cfg.schedule.seed,
                    domain,
                    sparse: false,
                })?);
            }
            out
        }
        (None, None) => bail!("pass --data <dir> or --synthetic <count>"),
    };
    let mut val = match &a.val {
        Some(root) => load_dataset(root)?,
        None => Vec::new(),
    };
    if a.densify {
        data = densify_all(data)?;
        val = densify_all(val)?;
    }
    let run = train_with_progress(&cfg, &data, &val, |e| {
        log::info!("epoch {} loss {:.4}", e.epoch, e.train_loss);
    })?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    run.checkpoint.save(&a.out, Precision::F64)?;
    if let Some(path) = &a.log {
        fs::write(path, run.log.to_csv())?;
    }
    let last = run.log.epochs.last().map_or(f64::NAN, |e| e.train_loss);
    println!("trained {} epochs, final loss {last:.4}; checkpoint {}", run.log.epochs.len(), a.out.display());
    Ok(())
}

fn write_reports(out: &Path, report: &dabc::train::EvaluationReport) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("metrics.csv"), MetricReport::to_csv(std::slice::from_ref(&report.combined)))?;
    for (d, r) in &report.per_domain {
        fs::write(out.join(format!("metrics_{d}.csv")), MetricReport::to_csv(std::slice::from_ref(r)))?;
    }
    let json = serde_json::json!({
        "combined": report.combined,
        "per_domain": report.per_domain.iter().map(|(d, r)| (d.name(), r)).collect::<std::collections::BTreeMap<_, _>>(),
    });
    fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&json)?)?;
    fs::write(out.join("confusion.csv"), report.confusion.to_csv(false))?;
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let report = match (&a.predictions, &a.checkpoint) {
        (Some(dir), _) => {
            let preds = data
                .iter()
                .map(|s| {
                    let path = dir.join(format!("{}.depth.pfm", s.id));
                    pfm::read(&path).with_context(|| format!("prediction for sample {}", s.id))
                })
                .collect::<Result<Vec<_>>>()?;
            score_predictions(&preds, &data, &QuantizationSpec::default())?
        }
        (None, Some(ckpt)) => {
            let ckpt = Checkpoint::load(ckpt)?;
            let geometry = ckpt.geometry.unwrap_or_else(Geometry::toy);
            evaluate_checkpoint(&ckpt, &data, &geometry)?
        }
        (None, None) => unreachable!("clap requires one of --checkpoint/--predictions"),
    };
    write_reports(&a.out, &report)?;
    println!("{}", MetricReport::to_csv(std::slice::from_ref(&report.combined)).trim_end());
    Ok(())
}

fn cmd_infer(a: &InferArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let geometry = ckpt.geometry.unwrap_or_else(Geometry::toy);
    let model = ckpt.to_model()?;
    let rgb = read_rgb_png(&a.input)?;
    let depth = infer_depth(&model, &ckpt.spec, &rgb, (geometry.net_height, geometry.net_width))?;
    pfm::write(&a.out, &depth)?;
    if let Some(png) = &a.png {
        render::save_depth_png(png, &depth, None, a.domain.into())?;
    }
    println!("wrote {}x{} depth map to {}", depth.height(), depth.width(), a.out.display());
    Ok(())
}

fn cmd_experiment(cli: &Cli, a: &ExperimentArgs) -> Result<()> {
    let mut cfg = match (&cli.config, a.preset) {
        (Some(p), _) => read_json::<ExperimentConfig>(p)?,
        (None, Preset::Smoke) => ExperimentConfig::smoke(),
        (None, Preset::Toy) => ExperimentConfig::toy(),
        (None, Preset::Full) => bail!("full-scale experiments are out of reach on a CPU; use --preset toy"),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(dir) = &a.checkpoints {
        cfg.checkpoint_dir = Some(dir.clone());
    }
    let report = run_experiment(a.kind.into(), &cfg, &a.out)?;
    println!("{} finished; {} files under {}", report.kind, report.files.len(), report.dir.display());
    Ok(())
}

fn cmd_plot(a: &PlotArgs) -> Result<()> {
    match a.kind {
        PlotKind::Confusion => render::save_confusion_png(&a.out, &load_confusion_csv(&a.input)?)?,
        PlotKind::Gates => {
            let dumps = gates_from_csv(&fs::read_to_string(&a.input)?)?;
            fs::create_dir_all(&a.out)?;
            plot_gates(&a.out, &dumps)?;
        }
        PlotKind::Depth => render::save_depth_png(&a.out, &pfm::read(&a.input)?, None, a.domain.into())?,
    }
    println!("wrote {}", a.out.display());
    Ok(())
}
