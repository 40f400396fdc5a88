//! End-to-end runs driven by a [`RunConfig`].
//!
//! Each scan is calibrated, cropped, Otsu-masked and sampled at every
//! requested group size (scans in parallel, each with its own derived seed).
//! Per group size the merged samples are split, the grid is cross-validated,
//! the winning model is trained on the whole training split and scored on
//! the test split.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::StageContext;
use crate::hypercube::{
    calibrate_reflectance, crop_roi, load_cube, save_cube, ByteOrder, CalibrationDiagnostics, DataType, EnviHeader,
    Hypercube, Interleave, ReferenceFrames, RoiWindow,
};
use crate::masking::{build_mask, intensity_image, otsu_threshold, save_mask, IntensityMode, MaskSidecar, PixelMask};
use crate::metrics::{
    confusion_matrix, grade_report, percent, regress_report, render_table, GradeReport, RegressReport,
};
use crate::rng::derive_seed;
use crate::sampling::{
    draw_spectral_samples, split_train_test, train_count, SampleOrigin, SampleSet, TargetKind, Targets,
};
use crate::svm::{
    grid_search_cv, save_model, train_svc, train_svr, GridResult, GridSpec, Hyperparameters, KernelChoice,
    ModelDocument, ModelPayload, SolverParams, Task,
};
use crate::synth::{generate_cube, SyntheticSpec};
use crate::{Error, Result};

const STREAM_SAMPLE: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_CV: u64 = 3;

/// One scan on disk: ENVI headers for the scan and its dark/white references.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    /// Defaults to the scan header's file stem.
    pub id: Option<String>,
    pub cube: Option<PathBuf>,
    /// Binary payload; defaults to the header path with a `.raw` extension.
    pub data: Option<PathBuf>,
    pub dark: Option<PathBuf>,
    pub white: Option<PathBuf>,
    /// Class id for grading; defaults to the scan id.
    pub label: Option<String>,
    pub targets: Targets,
}

impl ScanConfig {
    fn require<'a>(&'a self, index: usize, field: &str, value: &'a Option<PathBuf>) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| Error::MissingConfigField(format!("scans[{index}].{field}")))
    }

    pub fn scan_id(&self, index: usize) -> Result<String> {
        if let Some(id) = &self.id {
            return Ok(id.clone());
        }
        let cube = self.require(index, "cube", &self.cube)?;
        Ok(cube
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("scan{index:02}")))
    }

    /// Loads the raw scan and its line-averaged references.
    pub fn load(&self, index: usize) -> Result<(Hypercube, ReferenceFrames)> {
        let cube = self.require(index, "cube", &self.cube)?;
        let dark = self.require(index, "dark", &self.dark)?;
        let white = self.require(index, "white", &self.white)?;
        let (_, raw) = load_cube(cube, self.data.as_deref())?;
        let (_, dark) = load_cube(dark, None)?;
        let (_, white) = load_cube(white, None)?;
        let refs = ReferenceFrames::from_cubes(&dark, &white)?;
        Ok((raw, refs))
    }

    fn resolve(&mut self, base: &Path) {
        for path in [&mut self.cube, &mut self.data, &mut self.dark, &mut self.white]
            .into_iter()
            .flatten()
        {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskConfig {
    #[default]
    Grade,
    Predict(TargetKind),
}

impl TaskConfig {
    pub fn svm_task(self) -> Task {
        match self {
            TaskConfig::Grade => Task::Classify,
            TaskConfig::Predict(target) => Task::Regress(target),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    pub mode: IntensityMode,
    pub bins: usize,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            mode: IntensityMode::MeanOverBands,
            bins: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scans: Vec<ScanConfig>,
    pub synthetic: Option<SyntheticSpec>,
    pub roi_fraction: f64,
    pub mask: MaskConfig,
    pub group_size: usize,
    /// Sweep of group sizes; overrides `group_size` when non-empty.
    pub group_sizes: Vec<usize>,
    pub train_fraction: f64,
    pub task: TaskConfig,
    pub kernel: KernelChoice,
    pub grid: GridSpec,
    pub solver: SolverParams,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scans: Vec::new(),
            synthetic: None,
            roi_fraction: 0.8,
            mask: MaskConfig::default(),
            group_size: 50,
            group_sizes: Vec::new(),
            train_fraction: 0.05,
            task: TaskConfig::Grade,
            kernel: KernelChoice::Rbf,
            grid: GridSpec::default(),
            solver: SolverParams::default(),
            seed: 42,
            out_dir: PathBuf::from("out"),
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", origin.display())))
    }

    /// Reads a config file; relative scan paths are taken relative to it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_json(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for scan in &mut config.scans {
            scan.resolve(base);
        }
        Ok(config)
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        if self.group_sizes.is_empty() {
            vec![self.group_size]
        } else {
            self.group_sizes.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.scans.is_empty(), &self.synthetic) {
            (true, None) => return Err(Error::Config("no input: give `scans` or `synthetic`".into())),
            (false, Some(_)) => return Err(Error::Config("give either `scans` or `synthetic`, not both".into())),
            (_, Some(spec)) => spec.validate()?,
            (false, None) => {
                let mut ids = BTreeMap::new();
                for (i, scan) in self.scans.iter().enumerate() {
                    scan.require(i, "cube", &scan.cube)?;
                    scan.require(i, "dark", &scan.dark)?;
                    scan.require(i, "white", &scan.white)?;
                    if let Some(j) = ids.insert(scan.scan_id(i)?, i) {
                        return Err(Error::Config(format!("scans[{j}] and scans[{i}] share an id")));
                    }
                }
            }
        }
        if self.group_sizes().contains(&0) {
            return Err(Error::Config("group_size must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction {} not in (0, 1)",
                self.train_fraction
            )));
        }
        if !(self.roi_fraction > 0.0 && self.roi_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "roi_fraction {} not in (0, 1]",
                self.roi_fraction
            )));
        }
        if self.mask.bins < 2 {
            return Err(Error::Config("mask.bins must be at least 2".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        self.grid.validate(self.task.svm_task(), self.kernel)?;
        Ok(())
    }
}

/// Per-scan record in the run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSummary {
    pub id: String,
    pub label: Option<String>,
    pub lines: usize,
    pub samples: usize,
    pub bands: usize,
    pub roi: RoiWindow,
    pub threshold: f64,
    pub valid_pixels: usize,
    pub calibration: CalibrationDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evaluation {
    Grade(GradeReport),
    Regress(RegressReport),
}

/// Results for one group size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRun {
    pub group_size: usize,
    pub samples: usize,
    pub train: usize,
    pub test: usize,
    pub folds: usize,
    pub best: Hyperparameters,
    pub cv_score: f64,
    pub converged: bool,
    pub evaluation: Evaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub task: TaskConfig,
    pub seed: u64,
    pub roi_fraction: f64,
    pub train_fraction: f64,
    pub kernel: KernelChoice,
    pub scans: Vec<ScanSummary>,
    pub runs: Vec<GroupRun>,
}

impl RunReport {
    /// Plain-text table with one column per group size.
    pub fn render(&self) -> String {
        let columns: Vec<String> = self.runs.iter().map(|r| format!("s = {}", r.group_size)).collect();
        let row = |name: &str, f: &dyn Fn(&GroupRun) -> String| (name.to_string(), self.runs.iter().map(f).collect());
        let mut rows = vec![
            row("Samples", &|r| r.samples.to_string()),
            row("Train", &|r| r.train.to_string()),
            row("Test", &|r| r.test.to_string()),
        ];
        let title = match self.task {
            TaskConfig::Grade => {
                let grade = |r: &GroupRun| match &r.evaluation {
                    Evaluation::Grade(g) => g.clone(),
                    Evaluation::Regress(_) => unreachable!("grading run"),
                };
                rows.push(row("OA (%)", &|r| percent(grade(r).oa.fraction)));
                rows.push(row("AA (%)", &|r| percent(grade(r).aa.fraction)));
                rows.push(row("Kappa (%)", &|r| percent(grade(r).kappa.fraction)));
                "Grading accuracy for different selections of s".to_string()
            }
            TaskConfig::Predict(target) => {
                let reg = |r: &GroupRun| match &r.evaluation {
                    Evaluation::Regress(g) => *g,
                    Evaluation::Grade(_) => unreachable!("regression run"),
                };
                rows.push(row(&format!("MAE ({})", target.unit()), &|r| {
                    format!("{:.4}", reg(r).mae)
                }));
                rows.push(row(&format!("RMSE ({})", target.unit()), &|r| {
                    format!("{:.4}", reg(r).rmse)
                }));
                rows.push(row("R^2 (%)", &|r| {
                    let rep = reg(r);
                    if rep.r2_defined() {
                        percent(rep.r2)
                    } else {
                        "undefined".into()
                    }
                }));
                format!("Prediction of {} for different selections of s", target.name())
            }
        };
        render_table(&title, "", &columns, &rows)
    }
}

/// Calibrated, cropped and masked scan with its samples per group size.
struct ScanOutcome {
    summary: ScanSummary,
    mask: PixelMask,
    sidecar: MaskSidecar,
    samples: Vec<SampleSet>,
}

/// Reflectance cube plus the full-frame mask (ROI and Otsu combined).
pub struct MaskedScan {
    pub reflectance: Hypercube,
    pub diagnostics: CalibrationDiagnostics,
    pub roi: RoiWindow,
    pub threshold: f64,
    pub mask: PixelMask,
}

/// ROI crop followed by Otsu on the cropped intensity image; the mask is
/// embedded back into the full frame.
pub fn mask_reflectance(
    reflectance: &Hypercube,
    roi_fraction: f64,
    mask: &MaskConfig,
) -> Result<(RoiWindow, f64, PixelMask)> {
    let (cropped, roi) = crop_roi(reflectance, roi_fraction).stage("crop")?;
    let image = intensity_image(&cropped, mask.mode).stage("mask")?;
    let threshold = otsu_threshold(&image, mask.bins).stage("mask")?;
    let local = build_mask(&image, threshold);
    Ok((
        roi,
        threshold,
        local.embed(&roi, reflectance.lines(), reflectance.samples()),
    ))
}

pub fn prepare_scan(raw: &Hypercube, refs: &ReferenceFrames, config: &RunConfig) -> Result<MaskedScan> {
    let (reflectance, diagnostics) = calibrate_reflectance(raw, refs).stage("calibrate")?;
    if diagnostics.degenerate_entries > 0 {
        log::warn!(
            "{} degenerate reference entries set to zero",
            diagnostics.degenerate_entries
        );
    }
    let (roi, threshold, mask) = mask_reflectance(&reflectance, config.roi_fraction, &config.mask)?;
    Ok(MaskedScan {
        reflectance,
        diagnostics,
        roi,
        threshold,
        mask,
    })
}

fn process_scan(
    index: usize,
    id: String,
    raw: &Hypercube,
    refs: &ReferenceFrames,
    origin: SampleOrigin,
    config: &RunConfig,
) -> Result<ScanOutcome> {
    let scan = prepare_scan(raw, refs, config)?;
    let seed = derive_seed(derive_seed(config.seed, STREAM_SAMPLE), index as u64);
    let samples = config
        .group_sizes()
        .into_iter()
        .map(|s| draw_spectral_samples(&scan.reflectance, &scan.mask, s, seed, &origin).stage("sample"))
        .collect::<Result<Vec<_>>>()?;
    let (lines, samples_per_line, bands) = scan.reflectance.dim();
    log::info!("{id}: threshold {:.6}, M = {}", scan.threshold, scan.mask.valid_count());
    Ok(ScanOutcome {
        sidecar: MaskSidecar {
            lines,
            samples: samples_per_line,
            threshold: scan.threshold,
            bins: config.mask.bins,
            mode: config.mask.mode,
            valid_count: scan.mask.valid_count(),
            raster: String::new(),
            roi: Some(scan.roi),
        },
        summary: ScanSummary {
            id,
            label: origin.label.clone(),
            lines,
            samples: samples_per_line,
            bands,
            roi: scan.roi,
            threshold: scan.threshold,
            valid_pixels: scan.mask.valid_count(),
            calibration: scan.diagnostics,
        },
        mask: scan.mask,
        samples,
    })
}

fn process_inputs(config: &RunConfig) -> Result<Vec<ScanOutcome>> {
    if let Some(spec) = &config.synthetic {
        (0..spec.n_classes)
            .into_par_iter()
            .map(|class| {
                let cube = generate_cube(spec, class).stage("synth")?;
                let origin = cube.origin();
                process_scan(class, cube.label.clone(), &cube.raw, &cube.refs, origin, config)
            })
            .collect()
    } else {
        config
            .scans
            .par_iter()
            .enumerate()
            .map(|(i, scan)| {
                let id = scan.scan_id(i)?;
                let (raw, refs) = scan.load(i).stage("load")?;
                let origin = SampleOrigin {
                    cube_id: id.clone(),
                    label: Some(scan.label.clone().unwrap_or_else(|| id.clone())),
                    targets: scan.targets,
                };
                process_scan(i, id, &raw, &refs, origin, config)
            })
            .collect()
    }
}

/// Folds usable with this training split: the configured count, capped by
/// the smallest class (grading) or the sample count (prediction).
pub fn effective_folds(train: &SampleSet, task: TaskConfig, requested: usize) -> Result<usize> {
    let limit = match task {
        TaskConfig::Grade => train.class_counts().values().copied().min().unwrap_or(0),
        TaskConfig::Predict(_) => train.len(),
    };
    if limit < 2 {
        return Err(Error::Config(format!(
            "cross-validation needs at least 2 training samples per fold group, found {limit}"
        )));
    }
    if limit < requested {
        log::warn!("using {limit} folds instead of {requested}: too few training samples");
    }
    Ok(requested.min(limit))
}

/// Grid search on `train`, then fits the winning hyperparameters on all of it.
pub fn train_model(
    train: &SampleSet,
    task: TaskConfig,
    kernel: KernelChoice,
    grid: &GridSpec,
    solver: &SolverParams,
    seed: u64,
) -> Result<(ModelDocument, GridResult)> {
    let grid = GridSpec {
        folds: effective_folds(train, task, grid.folds)?,
        ..grid.clone()
    };
    let result = grid_search_cv(
        train,
        &grid,
        task.svm_task(),
        kernel,
        derive_seed(seed, STREAM_CV),
        solver,
    )
    .stage("grid search")?;
    let hp = result.best;
    let payload = match task {
        TaskConfig::Grade => ModelPayload::Svc(train_svc(train, &hp.kernel(), hp.c, solver).stage("train")?),
        TaskConfig::Predict(target) => ModelPayload::Svr {
            target,
            model: train_svr(train, target, &hp.kernel(), hp.c, hp.epsilon.unwrap_or(0.0), solver).stage("train")?,
        },
    };
    Ok((ModelDocument::new(seed, hp, payload), result))
}

pub fn model_converged(doc: &ModelDocument) -> bool {
    match &doc.model {
        ModelPayload::Svc(m) => m.converged(),
        ModelPayload::Svr { model, .. } => model.converged,
    }
}

/// Scores a model on a labeled (grading) or target-bearing (prediction) set.
pub fn evaluate_model(doc: &ModelDocument, test: &SampleSet) -> Result<Evaluation> {
    let x = test.spectra();
    match &doc.model {
        ModelPayload::Svc(model) => {
            let pred = model.predict_rows(x.view()).stage("evaluate")?;
            let truth = test
                .labels()
                .into_iter()
                .enumerate()
                .map(|(i, l)| l.ok_or(crate::svm::SvmError::MissingLabel(i)))
                .collect::<std::result::Result<Vec<_>, _>>()
                .stage("evaluate")?;
            let matrix = confusion_matrix(&truth, &pred, &model.classes).stage("evaluate")?;
            Ok(Evaluation::Grade(grade_report(&matrix).stage("evaluate")?))
        }
        ModelPayload::Svr { target, model } => {
            let truth = test
                .target_values(*target)
                .ok_or_else(|| Error::Config(format!("evaluation samples lack the `{}` target", target.name())))?;
            let pred = model.predict_rows(x.view()).stage("evaluate")?;
            Ok(Evaluation::Regress(regress_report(&truth, &pred).stage("evaluate")?))
        }
    }
}

fn log_split(train: &SampleSet, test: &SampleSet, fraction: f64) {
    for (class, &n_train) in train.class_counts() {
        let n_test = test.class_counts().get(class).copied().unwrap_or(0);
        log::info!(
            "class {class}: {n_train} train / {n_test} test (expected {})",
            train_count(n_train + n_test, fraction)
        );
    }
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

/// Hashes every file under `dir` (except `manifest.json`), sorted by path.
pub fn build_manifest(dir: &Path) -> Result<Manifest> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<ManifestEntry>) -> Result<()> {
        let mut entries: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
            .collect::<Result<_>>()?;
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(&path, root, out)?;
                continue;
            }
            let rel = path.strip_prefix(root).expect("under root");
            let rel = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            if rel == "manifest.json" {
                continue;
            }
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            out.push(ManifestEntry {
                path: rel,
                bytes: bytes.len() as u64,
                sha256: hex::encode(Sha256::digest(&bytes)),
            });
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir, dir, &mut files)?;
    files.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(Manifest { files })
}

/// Runs the whole pipeline and writes all artifacts under `config.out_dir`.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| run_in_current_pool(config)),
        None => run_in_current_pool(config),
    }
}

fn run_in_current_pool(config: &RunConfig) -> Result<RunOutcome> {
    let out = config.out_dir.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut files = Vec::new();

    let outcomes = process_inputs(config)?;
    for o in &outcomes {
        let path = out.join("masks").join(format!("{}.mask.json", o.summary.id));
        fs::create_dir_all(path.parent().expect("has parent")).map_err(|e| Error::io(&out, e))?;
        save_mask(&o.mask, &path, o.sidecar.clone())?;
        files.push(path);
    }

    let group_sizes = config.group_sizes();
    let mut runs = Vec::with_capacity(group_sizes.len());
    for (g, &group_size) in group_sizes.iter().enumerate() {
        let merged = SampleSet::merge(outcomes.iter().map(|o| o.samples[g].clone()));
        let samples_path = out.join("samples").join(format!("s{group_size}.csv"));
        fs::create_dir_all(samples_path.parent().expect("has parent")).map_err(|e| Error::io(&out, e))?;
        merged.save(&samples_path)?;
        files.push(samples_path);

        let (train, test) =
            split_train_test(&merged, config.train_fraction, derive_seed(config.seed, STREAM_SPLIT)).stage("split")?;
        log::info!(
            "s = {group_size}: {} samples, {} train, {} test",
            merged.len(),
            train.len(),
            test.len()
        );
        log_split(&train, &test, config.train_fraction);

        let (doc, grid) = train_model(
            &train,
            config.task,
            config.kernel,
            &config.grid,
            &config.solver,
            config.seed,
        )?;
        let converged = model_converged(&doc);
        if !converged {
            log::warn!("s = {group_size}: solver hit its iteration budget");
        }
        let model_path = out.join("models").join(format!("s{group_size}.json"));
        fs::create_dir_all(model_path.parent().expect("has parent")).map_err(|e| Error::io(&out, e))?;
        save_model(&doc, &model_path)?;
        files.push(model_path);

        let evaluation = if test.is_empty() {
            return Err(Error::Config(format!("s = {group_size}: test split is empty")));
        } else {
            evaluate_model(&doc, &test)?
        };
        runs.push(GroupRun {
            group_size,
            samples: merged.len(),
            train: train.len(),
            test: test.len(),
            folds: grid.folds,
            best: grid.best,
            cv_score: grid.best_score,
            converged,
            evaluation,
        });
    }

    let report = RunReport {
        task: config.task,
        seed: config.seed,
        roi_fraction: config.roi_fraction,
        train_fraction: config.train_fraction,
        kernel: config.kernel,
        scans: outcomes.into_iter().map(|o| o.summary).collect(),
        runs,
    };
    let report_json = out.join("report.json");
    write_json(&report_json, &report)?;
    let report_txt = out.join("report.txt");
    write_file(&report_txt, report.render().as_bytes())?;
    files.push(report_json);
    files.push(report_txt);

    let manifest_path = out.join("manifest.json");
    write_json(&manifest_path, &build_manifest(&out)?)?;
    files.push(manifest_path);
    Ok(RunOutcome {
        report,
        out_dir: out,
        files,
    })
}

/// Writes a reflectance cube as 32-bit float BIL.
pub fn write_reflectance(cube: &Hypercube, header_path: &Path) -> Result<PathBuf> {
    if let Some(parent) = header_path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let header = EnviHeader::for_cube(cube, Interleave::Bil, DataType::F32, ByteOrder::LittleEndian);
    save_cube(cube, header_path, &header)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_synthetic(out: &Path) -> RunConfig {
        RunConfig {
            synthetic: Some(SyntheticSpec {
                n_classes: 3,
                lines: 24,
                samples: 24,
                bands: 8,
                seed: 5,
                ..SyntheticSpec::default()
            }),
            group_sizes: vec![5, 10],
            train_fraction: 0.2,
            grid: GridSpec {
                c_values: vec![1.0, 10.0],
                gamma_values: vec![0.1],
                epsilon_values: vec![0.1],
                folds: 3,
            },
            out_dir: out.to_path_buf(),
            ..RunConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        let mut c = RunConfig::default();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.scans.push(ScanConfig {
            cube: Some("a.hdr".into()),
            dark: Some("d.hdr".into()),
            ..ScanConfig::default()
        });
        match c.validate() {
            Err(Error::MissingConfigField(f)) => assert_eq!(f, "scans[0].white"),
            other => panic!("{other:?}"),
        }
        c.scans[0].white = Some("w.hdr".into());
        c.validate().unwrap();
        c.synthetic = Some(SyntheticSpec::default());
        assert!(c.validate().is_err());
        c.synthetic = None;
        c.train_fraction = 1.0;
        assert!(c.validate().is_err());
        c.train_fraction = 0.05;
        c.group_sizes = vec![10, 0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_defaults_and_task_forms() {
        let c = RunConfig::from_json(
            r#"{"synthetic": {"n_classes": 2}, "task": {"predict": "phenol"}}"#,
            Path::new("x"),
        )
        .unwrap();
        assert_eq!(c.task, TaskConfig::Predict(TargetKind::Phenol));
        assert_eq!(c.roi_fraction, 0.8);
        assert_eq!(c.synthetic.unwrap().bands, 60);
        let c = RunConfig::from_json(r#"{"task": "grade"}"#, Path::new("x")).unwrap();
        assert_eq!(c.task, TaskConfig::Grade);
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#, Path::new("x")).is_err());
    }

    #[test]
    fn synthetic_run_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let outcome = run(&tiny_synthetic(dir.path())).unwrap();
        let report = &outcome.report;
        assert_eq!(report.runs.len(), 2);
        for r in &report.runs {
            match &r.evaluation {
                Evaluation::Grade(g) => assert!(g.oa.fraction > 0.9),
                Evaluation::Regress(_) => panic!("grading run"),
            }
        }
        let text = fs::read_to_string(dir.path().join("report.txt")).unwrap();
        assert!(text.contains("s = 5") && text.contains("s = 10") && text.contains("OA (%)"));
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        let paths: Vec<&str> = manifest.files.iter().map(|f| f.path.as_str()).collect();
        for expected in [
            "report.json",
            "report.txt",
            "models/s5.json",
            "samples/s10.csv",
            "masks/class_00.mask",
        ] {
            assert!(paths.contains(&expected), "{expected} missing from {paths:?}");
        }
    }

    #[test]
    fn prediction_run() {
        let dir = tempfile::tempdir().unwrap();
        let config = RunConfig {
            task: TaskConfig::Predict(TargetKind::Moisture),
            group_sizes: vec![10],
            ..tiny_synthetic(dir.path())
        };
        let outcome = run(&config).unwrap();
        match &outcome.report.runs[0].evaluation {
            Evaluation::Regress(r) => assert!(r.rmse >= r.mae),
            Evaluation::Grade(_) => panic!("prediction run"),
        }
        assert!(outcome.report.render().contains("RMSE (%)"));
    }

    #[test]
    fn reruns_are_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run(&tiny_synthetic(a.path())).unwrap();
        run(&RunConfig {
            threads: Some(2),
            ..tiny_synthetic(b.path())
        })
        .unwrap();
        for name in ["report.json", "report.txt", "manifest.json"] {
            assert_eq!(
                fs::read(a.path().join(name)).unwrap(),
                fs::read(b.path().join(name)).unwrap(),
                "{name}"
            );
        }
    }
}
