//! Synthetic scans with known class structure, shadows and targets.
//!
//! All classes share a smooth base reflectance curve and a smooth,
//! non-negative unit direction `u`. Class `c` of `n` has mean
//! `base + (c - (n-1)/2) · separation · σ · u`, so neighbouring class means are
//! `separation · σ` apart. Each pixel adds N(0, σ²) per band, a contiguous
//! run of pixels is darkened by [`SHADOW_FACTOR`], and raw counts are produced
//! from per-(sample, band) dark and white levels as `d + r (w - d)`.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::hypercube::{
    save_cube, ByteOrder, CubeKind, DataType, EnviHeader, Hypercube, Interleave, ReferenceFrames, WavelengthAxis,
    REFLECTANCE_MAX,
};
use crate::masking::{save_mask, IntensityMode, MaskSidecar, PixelMask};
use crate::rng::{derive_seed, seeded};
use crate::sampling::{SampleOrigin, Targets};
use crate::{Error, Result};

pub const SHADOW_FACTOR: f64 = 0.2;
const DARK_LEVEL: f64 = 100.0;
const WHITE_LEVEL: f64 = 3000.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

/// `intercept + slope · z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub intercept: f64,
    pub slope: f64,
}

impl Affine {
    pub fn apply(&self, z: f64) -> f64 {
        self.intercept + self.slope * z
    }
}

/// Targets as affine functions of the class coordinate
/// `z = ⟨mean - base, u⟩ / (separation · σ)`, which runs over
/// `-(n-1)/2 ..= (n-1)/2` in unit steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetRule {
    pub phenol: Affine,
    pub moisture: Affine,
    pub organic_matter: Affine,
}

impl Default for TargetRule {
    fn default() -> Self {
        Self {
            phenol: Affine {
                intercept: 35.0,
                slope: 0.7,
            },
            moisture: Affine {
                intercept: 40.0,
                slope: 0.3,
            },
            organic_matter: Affine {
                intercept: 90.0,
                slope: -0.15,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub lines: usize,
    pub samples: usize,
    pub bands: usize,
    /// Wavelength range in nm; `None` labels bands 0, 1, 2, ...
    pub wavelength_range: Option<(f64, f64)>,
    /// Distance between neighbouring class means, in units of `noise_sigma`.
    pub class_separation: f64,
    pub noise_sigma: f64,
    pub shadow_fraction: f64,
    pub target_rule: TargetRule,
    /// Relative Gaussian error applied to each cube's targets.
    pub target_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_classes: 35,
            lines: 64,
            samples: 64,
            bands: 60,
            wavelength_range: None,
            class_separation: 8.0,
            noise_sigma: 0.01,
            shadow_fraction: 0.15,
            target_rule: TargetRule::default(),
            target_noise: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// SWIR camera geometry: 270 bands over 900–2500 nm, 640 samples per line.
    pub fn swir() -> Self {
        Self {
            samples: 640,
            bands: 270,
            wavelength_range: Some((900.0, 2500.0)),
            ..Self::default()
        }
    }

    /// VNIR camera geometry: 371 bands over 400–1000 nm, 1600 samples per line.
    pub fn vnir() -> Self {
        Self {
            samples: 1600,
            bands: 371,
            wavelength_range: Some((400.0, 1000.0)),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.n_classes == 0 || self.lines == 0 || self.samples == 0 || self.bands == 0 {
            return bad("n_classes, lines, samples and bands must be positive".into());
        }
        if !(self.class_separation >= 0.0 && self.class_separation.is_finite()) {
            return bad(format!("class_separation = {}", self.class_separation));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma = {}", self.noise_sigma));
        }
        if !(0.0..1.0).contains(&self.shadow_fraction) {
            return bad(format!("shadow_fraction = {}", self.shadow_fraction));
        }
        if !(self.target_noise >= 0.0 && self.target_noise.is_finite()) {
            return bad(format!("target_noise = {}", self.target_noise));
        }
        if let Some((lo, hi)) = self.wavelength_range {
            if self.bands > 1 && !matches!(lo.partial_cmp(&hi), Some(std::cmp::Ordering::Less)) {
                return bad(format!("wavelength range {lo}..{hi}"));
            }
        }
        Ok(())
    }

    pub fn axis(&self) -> WavelengthAxis {
        match self.wavelength_range {
            Some((lo, hi)) => WavelengthAxis::linspace(lo, hi, self.bands),
            None => WavelengthAxis::band_indices(self.bands),
        }
    }

    pub fn class_label(&self, class_id: usize) -> String {
        format!("class_{class_id:02}")
    }

    fn class_coordinate(&self, class_id: usize) -> f64 {
        class_id as f64 - (self.n_classes as f64 - 1.0) / 2.0
    }

    fn shadow_len(&self) -> usize {
        (self.shadow_fraction * (self.lines * self.samples) as f64).floor() as usize
    }
}

/// Shared base curve and separation direction.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassGeometry {
    pub base: Vec<f64>,
    pub direction: Vec<f64>,
}

impl ClassGeometry {
    pub fn new(spec: &SyntheticSpec) -> Self {
        let mut rng = seeded(derive_seed(spec.seed, 0));
        let b = spec.bands;
        let t = |i: usize| if b > 1 { i as f64 / (b - 1) as f64 } else { 0.5 };

        let slope = rng.random_range(-0.1..0.1);
        let bumps: Vec<(f64, f64, f64)> = (0..4)
            .map(|_| {
                (
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.08..0.25),
                    rng.random_range(-0.08..0.08),
                )
            })
            .collect();
        let base = (0..b)
            .map(|i| {
                let x = t(i);
                let bump: f64 = bumps
                    .iter()
                    .map(|(centre, width, height)| height * (-((x - centre) / width).powi(2)).exp())
                    .sum();
                0.5 + slope * (x - 0.5) + bump
            })
            .collect();

        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let freq = rng.random_range(1.0..3.0);
        let raw: Vec<f64> = (0..b)
            .map(|i| 1.0 + 0.5 * (std::f64::consts::TAU * freq * t(i) + phase).sin())
            .collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        Self {
            base,
            direction: raw.into_iter().map(|v| v / norm).collect(),
        }
    }

    pub fn class_mean(&self, spec: &SyntheticSpec, class_id: usize) -> Vec<f64> {
        let offset = spec.class_coordinate(class_id) * spec.class_separation * spec.noise_sigma;
        self.base
            .iter()
            .zip(&self.direction)
            .map(|(b, u)| b + offset * u)
            .collect()
    }

    /// Class coordinate recovered from a mean spectrum.
    pub fn coordinate(&self, spec: &SyntheticSpec, mean: &[f64]) -> f64 {
        let step = spec.class_separation * spec.noise_sigma;
        let proj: f64 = mean
            .iter()
            .zip(&self.base)
            .zip(&self.direction)
            .map(|((m, b), u)| (m - b) * u)
            .sum();
        if step > 0.0 {
            proj / step
        } else {
            0.0
        }
    }

    pub fn targets(&self, spec: &SyntheticSpec, mean: &[f64]) -> Targets {
        let z = self.coordinate(spec, mean);
        let rule = &spec.target_rule;
        Targets::new(
            rule.phenol.apply(z),
            rule.moisture.apply(z),
            rule.organic_matter.apply(z),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCube {
    pub class_id: usize,
    pub label: String,
    pub raw: Hypercube,
    pub refs: ReferenceFrames,
    /// Reflectance the raw counts were built from.
    pub reflectance: Hypercube,
    /// Ground truth: `true` for lit pixels.
    pub lit_mask: PixelMask,
    pub class_mean: Vec<f64>,
    pub targets: Targets,
}

impl SyntheticCube {
    pub fn origin(&self) -> SampleOrigin {
        SampleOrigin {
            cube_id: self.label.clone(),
            label: Some(self.label.clone()),
            targets: self.targets,
        }
    }
}

/// Generates the raw scan, references and ground truth for one class.
pub fn generate_cube(spec: &SyntheticSpec, class_id: usize) -> Result<SyntheticCube, SynthError> {
    spec.validate()?;
    if class_id >= spec.n_classes {
        return Err(SynthError::InvalidSpec(format!(
            "class_id {class_id} >= n_classes {}",
            spec.n_classes
        )));
    }
    let geometry = ClassGeometry::new(spec);
    let class_mean = geometry.class_mean(spec, class_id);
    let mut targets = geometry.targets(spec, &class_mean);

    let mut rng = seeded(derive_seed(spec.seed, class_id as u64 + 1));
    let (lines, samples, bands) = (spec.lines, spec.samples, spec.bands);
    let pixels = lines * samples;

    let shadow_len = spec.shadow_len();
    let slack = pixels - shadow_len;
    // start within the middle half of admissible positions
    let shadow_start = if shadow_len == 0 {
        0
    } else {
        rng.random_range(slack / 4..=slack - slack / 4)
    };
    let lit = Array2::from_shape_fn((lines, samples), |(l, s)| {
        let p = l * samples + s;
        !(shadow_start..shadow_start + shadow_len).contains(&p)
    });

    let noise = Normal::new(0.0, spec.noise_sigma).expect("sigma validated");
    let mut reflectance = Array3::zeros((lines, samples, bands));
    for ((l, s, b), r) in reflectance.indexed_iter_mut() {
        let v = class_mean[b] + noise.sample(&mut rng);
        let v = if lit[[l, s]] { v } else { v * SHADOW_FACTOR };
        *r = v.clamp(0.0, REFLECTANCE_MAX);
    }

    let dark_noise = Normal::new(0.0, 3.0).expect("valid");
    let white_noise = Normal::new(0.0, 20.0).expect("valid");
    let dark = Array2::from_shape_fn((samples, bands), |_| DARK_LEVEL + dark_noise.sample(&mut rng));
    let white = Array2::from_shape_fn((samples, bands), |(s, b)| {
        let vignette = 1.0 - 0.15 * ((s as f64 + 0.5) / samples as f64 - 0.5).powi(2);
        let response = 0.8 + 0.2 * (b as f64 / bands.max(1) as f64);
        WHITE_LEVEL * vignette * response + white_noise.sample(&mut rng)
    });
    let raw = Array3::from_shape_fn((lines, samples, bands), |(l, s, b)| {
        let (d, w) = (dark[[s, b]], white[[s, b]]);
        d + reflectance[[l, s, b]] * (w - d)
    });

    if spec.target_noise > 0.0 {
        let rel = Normal::new(0.0, spec.target_noise).expect("validated");
        let mut jitter = |v: Option<f64>| v.map(|v| v * (1.0 + rel.sample(&mut rng)));
        targets = Targets {
            phenol: jitter(targets.phenol),
            moisture: jitter(targets.moisture),
            organic_matter: jitter(targets.organic_matter),
        };
    }

    let axis = spec.axis();
    let invalid = |e: crate::hypercube::CubeError| SynthError::InvalidSpec(e.to_string());
    Ok(SyntheticCube {
        class_id,
        label: spec.class_label(class_id),
        raw: Hypercube::new(raw, axis.clone(), CubeKind::RawCounts).map_err(invalid)?,
        refs: ReferenceFrames::new(dark, white).map_err(invalid)?,
        reflectance: Hypercube::new(reflectance, axis, CubeKind::Reflectance).map_err(invalid)?,
        lit_mask: PixelMask::from_grid(lit),
        class_mean,
        targets,
    })
}

/// Ground-truth sidecar written next to a synthetic scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub class_id: usize,
    pub label: String,
    pub targets: Targets,
    pub scan: String,
    pub dark: String,
    pub white: String,
    pub shadow_mask: String,
    pub spec: SyntheticSpec,
}

/// Paths of one written synthetic scan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthFiles {
    pub scan_header: PathBuf,
    pub dark_header: PathBuf,
    pub white_header: PathBuf,
    pub truth: PathBuf,
}

/// Writes `<label>.hdr/.raw`, `<label>_dark.*`, `<label>_white.*`, the lit
/// mask as `<label>_truth.mask` and `<label>.truth.json`.
pub fn write_synthetic(cube: &SyntheticCube, spec: &SyntheticSpec, dir: &Path) -> Result<SynthFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = &cube.label;
    let header = |c: &Hypercube| EnviHeader::for_cube(c, Interleave::Bil, DataType::F32, ByteOrder::LittleEndian);

    let scan_header = dir.join(format!("{stem}.hdr"));
    save_cube(&cube.raw, &scan_header, &header(&cube.raw))?;
    let (dark, white) = cube.refs.to_cubes(cube.raw.axis())?;
    let dark_header = dir.join(format!("{stem}_dark.hdr"));
    save_cube(&dark, &dark_header, &header(&dark))?;
    let white_header = dir.join(format!("{stem}_white.hdr"));
    save_cube(&white, &white_header, &header(&white))?;

    let mask_json = dir.join(format!("{stem}_truth.mask.json"));
    save_mask(
        &cube.lit_mask,
        &mask_json,
        MaskSidecar {
            lines: 0,
            samples: 0,
            threshold: 0.0,
            bins: 0,
            mode: IntensityMode::default(),
            valid_count: 0,
            raster: String::new(),
            roi: None,
        },
    )?;

    let name = |p: &Path| {
        p.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    let truth = SynthTruth {
        class_id: cube.class_id,
        label: cube.label.clone(),
        targets: cube.targets,
        scan: name(&scan_header),
        dark: name(&dark_header),
        white: name(&white_header),
        shadow_mask: name(&mask_json),
        spec: spec.clone(),
    };
    let truth_path = dir.join(format!("{stem}.truth.json"));
    let text = serde_json::to_string_pretty(&truth).map_err(|e| Error::json(&truth_path, e))?;
    std::fs::write(&truth_path, text).map_err(|e| Error::io(&truth_path, e))?;
    Ok(SynthFiles {
        scan_header,
        dark_header,
        white_header,
        truth: truth_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypercube::{calibrate_reflectance, load_cube};
    use crate::masking::{build_mask, intensity_image, otsu_threshold};
    use crate::svm::{smo_train_svr, KernelSpec, SolverParams};

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_classes: 4,
            lines: 24,
            samples: 20,
            bands: 12,
            seed: 17,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn no_shadow_means_all_lit() {
        let spec = SyntheticSpec {
            shadow_fraction: 0.0,
            ..small()
        };
        let cube = generate_cube(&spec, 1).unwrap();
        assert_eq!(cube.lit_mask.valid_count(), 24 * 20);
    }

    #[test]
    fn shadow_is_contiguous_run() {
        let spec = small();
        let cube = generate_cube(&spec, 2).unwrap();
        let dark: Vec<usize> = (0..24 * 20)
            .filter(|&p| !cube.lit_mask.grid().as_slice().unwrap()[p])
            .collect();
        assert_eq!(dark.len(), (0.15 * 480.0) as usize);
        assert!(dark.windows(2).all(|w| w[1] == w[0] + 1));
    }

    #[test]
    fn zero_noise_pixels_equal_class_means() {
        let spec = SyntheticSpec {
            n_classes: 2,
            noise_sigma: 1e-12,
            shadow_fraction: 0.0,
            ..small()
        };
        for class in 0..2 {
            let cube = generate_cube(&spec, class).unwrap();
            let (refl, _) = calibrate_reflectance(&cube.raw, &cube.refs).unwrap();
            for p in 0..24 * 20 {
                for (v, m) in refl.pixel_at(p).iter().zip(&cube.class_mean) {
                    assert!((v - m).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let spec = small();
        assert_eq!(generate_cube(&spec, 3).unwrap(), generate_cube(&spec, 3).unwrap());
        let other = SyntheticSpec { seed: 18, ..small() };
        assert_ne!(
            generate_cube(&spec, 3).unwrap().raw,
            generate_cube(&other, 3).unwrap().raw
        );
    }

    #[test]
    fn calibration_inverts_synthesis() {
        let cube = generate_cube(&small(), 0).unwrap();
        let (refl, diag) = calibrate_reflectance(&cube.raw, &cube.refs).unwrap();
        assert_eq!(diag.degenerate_entries, 0);
        for (a, b) in refl.as_slice().iter().zip(cube.reflectance.as_slice()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn otsu_recovers_shadow() {
        for sigma in [0.01, 0.05] {
            let spec = SyntheticSpec {
                noise_sigma: sigma,
                class_separation: 2.0,
                lines: 48,
                samples: 40,
                bands: 30,
                ..small()
            };
            for class in 0..spec.n_classes {
                let cube = generate_cube(&spec, class).unwrap();
                let (refl, _) = calibrate_reflectance(&cube.raw, &cube.refs).unwrap();
                let image = intensity_image(&refl, IntensityMode::MeanOverBands).unwrap();
                let t = otsu_threshold(&image, 256).unwrap();
                assert!(build_mask(&image, t).iou(&cube.lit_mask) >= 0.95);
            }
        }
    }

    #[test]
    fn targets_are_affine_in_class_mean() {
        let spec = SyntheticSpec {
            n_classes: 12,
            noise_sigma: 1e-9,
            class_separation: 1e7,
            ..small()
        };
        let geometry = ClassGeometry::new(&spec);
        let means: Vec<Vec<f64>> = (0..12).map(|c| geometry.class_mean(&spec, c)).collect();
        let x = Array2::from_shape_fn((12, spec.bands), |(i, b)| means[i][b]);
        let t: Vec<f64> = means
            .iter()
            .map(|m| geometry.targets(&spec, m).phenol.unwrap())
            .collect();
        let model = smo_train_svr(x.view(), &t, &KernelSpec::Linear, 1e4, 0.001, &SolverParams::default()).unwrap();
        let pred = model.predict_rows(x.view()).unwrap();
        let mean = t.iter().sum::<f64>() / 12.0;
        let ss_res: f64 = t.iter().zip(&pred).map(|(a, b)| (a - b).powi(2)).sum();
        let ss_tot: f64 = t.iter().map(|a| (a - mean).powi(2)).sum();
        assert!(1.0 - ss_res / ss_tot >= 0.999);
    }

    #[test]
    fn invalid_specs() {
        assert!(generate_cube(&small(), 4).is_err());
        for spec in [
            SyntheticSpec {
                shadow_fraction: 1.0,
                ..small()
            },
            SyntheticSpec {
                noise_sigma: 0.0,
                ..small()
            },
            SyntheticSpec { bands: 0, ..small() },
        ] {
            assert!(matches!(generate_cube(&spec, 0), Err(SynthError::InvalidSpec(_))));
        }
    }

    #[test]
    fn presets_follow_camera_geometry() {
        let swir = SyntheticSpec::swir();
        assert_eq!((swir.bands, swir.samples), (270, 640));
        assert_eq!(swir.axis().values()[0], 900.0);
        assert_eq!(*swir.axis().values().last().unwrap(), 2500.0);
        let vnir = SyntheticSpec::vnir();
        assert_eq!((vnir.bands, vnir.samples), (371, 1600));
    }

    #[test]
    fn written_scan_reloads() {
        let spec = small();
        let cube = generate_cube(&spec, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_synthetic(&cube, &spec, dir.path()).unwrap();
        let (_, raw) = load_cube(&files.scan_header, None).unwrap();
        let (_, dark) = load_cube(&files.dark_header, None).unwrap();
        let (_, white) = load_cube(&files.white_header, None).unwrap();
        let refs = ReferenceFrames::from_cubes(&dark, &white).unwrap();
        let (refl, _) = calibrate_reflectance(&raw, &refs).unwrap();
        for (a, b) in refl.as_slice().iter().zip(cube.reflectance.as_slice()) {
            assert!((a - b).abs() < 1e-6);
        }
        let truth: SynthTruth = serde_json::from_str(&std::fs::read_to_string(&files.truth).unwrap()).unwrap();
        assert_eq!(truth.label, "class_01");
    }
}
