use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::{CubeError, CubeKind, Hypercube, ReferenceFrames};

/// Reference entries with `white - dark` at or below this (count units) are unusable.
pub const DENOMINATOR_EPSILON: f64 = 1e-6;
/// Reflectance ceiling; specular glints legitimately exceed 1.
pub const REFLECTANCE_MAX: f64 = 2.0;
/// Calibration aborts when more than this fraction of reference entries is degenerate.
pub const DEGENERATE_LIMIT: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationDiagnostics {
    /// (sample, band) reference entries with a non-positive denominator.
    pub degenerate_entries: usize,
    /// Cube elements forced to zero because their reference entry is degenerate.
    pub invalid_pixels: usize,
    pub clamped_low: usize,
    pub clamped_high: usize,
}

/// Converts raw counts to reflectance, `r = (s - d) / (w - d)`, clamped to `[0, 2]`.
///
/// References with a single spatial column are treated as one spectrum
/// shared by every column of the scan.
pub fn calibrate_reflectance(
    raw: &Hypercube,
    refs: &ReferenceFrames,
) -> Result<(Hypercube, CalibrationDiagnostics), CubeError> {
    if raw.kind() != CubeKind::RawCounts {
        return Err(CubeError::KindMismatch {
            expected: CubeKind::RawCounts,
            found: raw.kind(),
        });
    }
    let (lines, samples, bands) = raw.dim();
    let broadcast;
    let refs = if refs.samples() == 1 && samples > 1 && refs.bands() == bands {
        broadcast = refs.broadcast_to(samples);
        &broadcast
    } else {
        refs
    };
    if (refs.samples(), refs.bands()) != (samples, bands) {
        return Err(CubeError::ShapeMismatch(format!(
            "references are {}x{} (sample x band), cube is {}x{}",
            refs.samples(),
            refs.bands(),
            samples,
            bands
        )));
    }

    let degenerate_entries = refs.degenerate_entries();
    let total = samples * bands;
    if degenerate_entries as f64 > DEGENERATE_LIMIT * total as f64 {
        return Err(CubeError::AllReferencesDegenerate {
            degenerate: degenerate_entries,
            total,
        });
    }

    let dark = refs.dark().as_slice().expect("standard layout");
    let white = refs.white().as_slice().expect("standard layout");
    let mut diagnostics = CalibrationDiagnostics {
        degenerate_entries,
        invalid_pixels: degenerate_entries * lines,
        ..Default::default()
    };
    let mut out = Vec::with_capacity(raw.as_slice().len());
    for line in raw.as_slice().chunks_exact(total) {
        for ((&s, &d), &w) in line.iter().zip(dark).zip(white) {
            let denominator = w - d;
            let r = if denominator <= DENOMINATOR_EPSILON {
                0.0
            } else {
                let r = (s - d) / denominator;
                if r < 0.0 {
                    diagnostics.clamped_low += 1;
                    0.0
                } else if r > REFLECTANCE_MAX {
                    diagnostics.clamped_high += 1;
                    REFLECTANCE_MAX
                } else {
                    r
                }
            };
            out.push(r);
        }
    }
    let data = Array3::from_shape_vec((lines, samples, bands), out).expect("shape preserved");
    let cube = Hypercube::new(data, raw.axis().clone(), CubeKind::Reflectance)?;
    Ok((cube, diagnostics))
}
