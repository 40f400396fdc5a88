//! `peatcube`: command-line front end for the hyperspectral peat pipeline.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use peatcube_core::hypercube::load_cube;
use peatcube_core::masking::{load_mask, save_mask, IntensityMode, MaskSidecar};
use peatcube_core::pipeline::{
    self, evaluate_model, mask_reflectance, train_model, write_reflectance, Evaluation, MaskConfig, ScanConfig,
    TaskConfig,
};
use peatcube_core::sampling::{SampleOrigin, TargetKind, Targets};
use peatcube_core::svm::{load_model, save_model, KernelChoice};
use peatcube_core::synth::write_synthetic;
use peatcube_core::{
    calibrate_reflectance, draw_spectral_samples, generate_cube, Error, Result, RunConfig, SampleSet, SyntheticSpec,
};

#[derive(Parser)]
#[command(
    name = "peatcube",
    version,
    about = "Hyperspectral peat grading and chemistry prediction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a raw scan to reflectance using its dark and white references.
    Calibrate(CalibrateArgs),
    /// Crop to the ROI and mask shadows with Otsu's threshold.
    Mask(MaskArgs),
    /// Average disjoint groups of masked pixels into spectral samples.
    Sample(SampleArgs),
    /// Grid-search and train a classifier or regressor on sample files.
    Train(TrainArgs),
    /// Score a trained model on sample files.
    Evaluate(EvaluateArgs),
    /// Run the full pipeline from a config file.
    Run(RunArgs),
    /// Write synthetic scans plus a matching run config.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ScanArgs {
    /// Run config to take the scan from.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Index into the config's `scans`.
    #[arg(long, default_value_t = 0)]
    scan: usize,
    #[arg(long)]
    cube: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    dark: Option<PathBuf>,
    #[arg(long)]
    white: Option<PathBuf>,
}

impl ScanArgs {
    fn resolve(&self) -> Result<ScanConfig> {
        let mut scan = match &self.config {
            Some(path) => RunConfig::load(path)?
                .scans
                .get(self.scan)
                .cloned()
                .ok_or_else(|| Error::Config(format!("{} has no scans[{}]", path.display(), self.scan)))?,
            None => ScanConfig::default(),
        };
        for (field, value) in [
            (&mut scan.cube, &self.cube),
            (&mut scan.data, &self.data),
            (&mut scan.dark, &self.dark),
            (&mut scan.white, &self.white),
        ] {
            if value.is_some() {
                field.clone_from(value);
            }
        }
        Ok(scan)
    }
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    scan: ScanArgs,
    /// Output ENVI header for the reflectance cube.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MaskArgs {
    /// Reflectance cube header.
    #[arg(long)]
    cube: PathBuf,
    /// Output mask sidecar (`.mask.json`).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    roi: f64,
    #[arg(long, default_value_t = 256)]
    bins: usize,
    /// Threshold a single band instead of the mean over bands.
    #[arg(long)]
    band: Option<usize>,
}

#[derive(Args)]
struct SampleArgs {
    /// Reflectance cube header.
    #[arg(long)]
    cube: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long, default_value_t = 50)]
    group_size: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Scan id; defaults to the cube's file stem.
    #[arg(long)]
    id: Option<String>,
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    phenol: Option<f64>,
    #[arg(long)]
    moisture: Option<f64>,
    #[arg(long)]
    om: Option<f64>,
    /// Output CSV (a `.json` sidecar is written next to it).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Grade,
    Phenol,
    Moisture,
    Om,
}

impl From<TaskArg> for TaskConfig {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Grade => TaskConfig::Grade,
            TaskArg::Phenol => TaskConfig::Predict(TargetKind::Phenol),
            TaskArg::Moisture => TaskConfig::Predict(TargetKind::Moisture),
            TaskArg::Om => TaskConfig::Predict(TargetKind::OrganicMatter),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Rbf,
    Linear,
}

#[derive(Args)]
struct TrainArgs {
    /// Sample CSV files; merged in the order given.
    #[arg(long = "samples", required = true, num_args = 1..)]
    samples: Vec<PathBuf>,
    /// Run config supplying grid, solver, task and kernel defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    #[arg(long, value_enum)]
    kernel: Option<KernelArg>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output model JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "samples", required = true, num_args = 1..)]
    samples: Vec<PathBuf>,
    /// Write the report as JSON here as well as printing it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    /// Synthetic spec JSON; unspecified fields take their defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for cubes, references, truth sidecars and `run.json`.
    #[arg(long)]
    out: PathBuf,
}

fn load_samples(paths: &[PathBuf]) -> Result<SampleSet> {
    let sets = paths.iter().map(|p| SampleSet::load(p)).collect::<Result<Vec<_>>>()?;
    Ok(SampleSet::merge(sets))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json("<stdout>", e))?;
    println!("{text}");
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    let scan = args.scan.resolve()?;
    let (raw, refs) = scan.load(args.scan.scan)?;
    let (reflectance, diagnostics) = calibrate_reflectance(&raw, &refs)?;
    let data = write_reflectance(&reflectance, &args.out)?;
    println!("wrote {} ({})", args.out.display(), data.display());
    println!("invalid pixels: {}", diagnostics.invalid_pixels);
    print_json(&diagnostics)
}

fn mask(args: MaskArgs) -> Result<()> {
    let (_, cube) = load_cube(&args.cube, None)?;
    let config = MaskConfig {
        mode: args
            .band
            .map_or(IntensityMode::MeanOverBands, IntensityMode::SingleBand),
        bins: args.bins,
    };
    let (roi, threshold, mask) = mask_reflectance(&cube, args.roi, &config)?;
    let (lines, samples) = mask.dim();
    save_mask(
        &mask,
        &args.out,
        MaskSidecar {
            lines,
            samples,
            threshold,
            bins: config.bins,
            mode: config.mode,
            valid_count: mask.valid_count(),
            raster: String::new(),
            roi: Some(roi),
        },
    )?;
    println!("threshold {threshold:.6}, valid pixels {}", mask.valid_count());
    Ok(())
}

fn sample(args: SampleArgs) -> Result<()> {
    let (_, cube) = load_cube(&args.cube, None)?;
    let (mask, _) = load_mask(&args.mask)?;
    let id = args.id.unwrap_or_else(|| {
        args.cube
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    let origin = SampleOrigin {
        cube_id: id,
        label: args.label,
        targets: Targets {
            phenol: args.phenol,
            moisture: args.moisture,
            organic_matter: args.om,
        },
    };
    let set = draw_spectral_samples(&cube, &mask, args.group_size, args.seed, &origin)?;
    set.save(&args.out)?;
    println!("{} samples from {} valid pixels", set.len(), mask.valid_count());
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(task) = args.task {
        config.task = task.into();
    }
    if let Some(kernel) = args.kernel {
        config.kernel = match kernel {
            KernelArg::Rbf => KernelChoice::Rbf,
            KernelArg::Linear => KernelChoice::Linear,
        };
    }
    if let Some(folds) = args.folds {
        config.grid.folds = folds;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.grid.validate(config.task.svm_task(), config.kernel)?;
    let set = load_samples(&args.samples)?;
    let (doc, grid) = train_model(
        &set,
        config.task,
        config.kernel,
        &config.grid,
        &config.solver,
        config.seed,
    )?;
    save_model(&doc, &args.out)?;
    println!(
        "best C = {}, gamma = {:?}, epsilon = {:?}, cv score {:.6} over {} folds",
        grid.best.c, grid.best.gamma, grid.best.epsilon, grid.best_score, grid.folds
    );
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let doc = load_model(&args.model)?;
    let set = load_samples(&args.samples)?;
    let evaluation = evaluate_model(&doc, &set)?;
    match &evaluation {
        Evaluation::Grade(g) => {
            println!(
                "OA {:.4}  AA {:.4}  Kappa {:.4}",
                g.oa.fraction, g.aa.fraction, g.kappa.fraction
            )
        }
        Evaluation::Regress(r) => println!("MAE {:.6}  RMSE {:.6}  R^2 {:.6}", r.mae, r.rmse, r.r2),
    }
    if let Some(out) = &args.out {
        write_json(out, &evaluation)?;
    }
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(s) = args.group_size {
        config.group_size = s;
        config.group_sizes.clear();
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = args.out {
        config.out_dir = out;
    } else if config.out_dir.is_relative() {
        let base = args.config.parent().unwrap_or(Path::new("."));
        config.out_dir = base.join(&config.out_dir);
    }
    if args.threads.is_some() {
        config.threads = args.threads;
    }
    let outcome = pipeline::run(&config)?;
    print!("{}", outcome.report.render());
    println!("artifacts in {}", outcome.out_dir.display());
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<SyntheticSpec>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(n) = args.classes {
        spec.n_classes = n;
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    let name = |p: &Path| p.file_name().map(PathBuf::from);
    let mut scans = Vec::with_capacity(spec.n_classes);
    for class in 0..spec.n_classes {
        let cube = generate_cube(&spec, class)?;
        let files = write_synthetic(&cube, &spec, &args.out)?;
        scans.push(ScanConfig {
            id: Some(cube.label.clone()),
            cube: name(&files.scan_header),
            data: None,
            dark: name(&files.dark_header),
            white: name(&files.white_header),
            label: Some(cube.label.clone()),
            targets: cube.targets,
        });
    }
    let config = RunConfig {
        scans,
        seed: spec.seed,
        ..RunConfig::default()
    };
    let path = args.out.join("run.json");
    write_json(&path, &config)?;
    println!("wrote {} scans and {}", spec.n_classes, path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Calibrate(a) => calibrate(a),
        Command::Mask(a) => mask(a),
        Command::Sample(a) => sample(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Run(a) => run(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                let part = s.to_string();
                if !msg.contains(&part) {
                    msg.push_str(&format!(": {part}"));
                }
                source = s.source();
            }
            eprintln!("error: {msg}");
            ExitCode::from(e.family().exit_code() as u8)
        }
    }
}
