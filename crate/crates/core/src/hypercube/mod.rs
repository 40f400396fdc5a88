//! Hyperspectral cubes, reference frames, radiometric calibration and ROI
//! cropping.
//!
//! A [`Hypercube`] is always held in band-interleaved-by-pixel order
//! (`line`, `sample`, `band`) so that each pixel's spectrum is a contiguous
//! slice, whatever interleave it was stored with on disk.

mod calibrate;
mod envi;

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::ErrorFamily;

pub use calibrate::{
    calibrate_reflectance, CalibrationDiagnostics, DEGENERATE_LIMIT, DENOMINATOR_EPSILON, REFLECTANCE_MAX,
};
pub use envi::{
    data_path_for, encode_cube, load_cube, parse_envi_header, read_cube, save_cube, ByteOrder, DataType, EnviHeader,
    Interleave,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CubeError {
    #[error("header is missing required field `{0}`")]
    MissingField(String),
    #[error("malformed value for header key `{0}`")]
    MalformedValue(String),
    #[error("header declares {bands} bands but lists {wavelengths} wavelengths")]
    WavelengthCountMismatch { bands: usize, wavelengths: usize },
    #[error("payload is {found} bytes, header implies {expected}")]
    PayloadSizeMismatch { expected: usize, found: usize },
    #[error("non-finite value at element {0}")]
    NonFiniteInput(usize),
    #[error("value {value} at element {index} cannot be stored as {data_type}")]
    Unrepresentable {
        index: usize,
        value: f64,
        data_type: &'static str,
    },
    #[error("wavelength axis must be strictly increasing")]
    AxisNotIncreasing,
    #[error("wavelength axis has {axis} entries for {bands} bands")]
    AxisLength { axis: usize, bands: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("expected a {expected:?} cube, got {found:?}")]
    KindMismatch { expected: CubeKind, found: CubeKind },
    #[error("reflectance value {value} at element {index} outside [0, {REFLECTANCE_MAX}]")]
    ReflectanceOutOfRange { index: usize, value: f64 },
    #[error("{degenerate} of {total} reference entries have white - dark <= {DENOMINATOR_EPSILON}")]
    AllReferencesDegenerate { degenerate: usize, total: usize },
    #[error("region of interest is empty")]
    EmptyRoi,
    #[error("ROI fraction {0} outside (0, 1]")]
    InvalidRoiFraction(f64),
}

impl CubeError {
    pub fn family(&self) -> ErrorFamily {
        match self {
            CubeError::MissingField(_)
            | CubeError::MalformedValue(_)
            | CubeError::WavelengthCountMismatch { .. }
            | CubeError::PayloadSizeMismatch { .. } => ErrorFamily::Io,
            CubeError::NonFiniteInput(_)
            | CubeError::Unrepresentable { .. }
            | CubeError::ReflectanceOutOfRange { .. }
            | CubeError::AllReferencesDegenerate { .. } => ErrorFamily::Numeric,
            CubeError::AxisNotIncreasing
            | CubeError::AxisLength { .. }
            | CubeError::ShapeMismatch(_)
            | CubeError::KindMismatch { .. }
            | CubeError::EmptyRoi
            | CubeError::InvalidRoiFraction(_) => ErrorFamily::Config,
        }
    }
}

/// Band centre wavelengths in nanometres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WavelengthAxis(Vec<f64>);

impl WavelengthAxis {
    pub fn new(values: Vec<f64>) -> Result<Self, CubeError> {
        if values.iter().any(|v| !v.is_finite()) || values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CubeError::AxisNotIncreasing);
        }
        Ok(Self(values))
    }

    /// `bands` evenly spaced centres from `start` to `end` inclusive.
    pub fn linspace(start: f64, end: f64, bands: usize) -> Self {
        let values = match bands {
            0 => Vec::new(),
            1 => vec![start],
            n => {
                let step = (end - start) / (n - 1) as f64;
                (0..n).map(|i| start + step * i as f64).collect()
            }
        };
        Self(values)
    }

    /// Placeholder axis (0, 1, 2, ...) for headers without wavelengths.
    pub fn band_indices(bands: usize) -> Self {
        Self((0..bands).map(|i| i as f64).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for WavelengthAxis {
    type Error = CubeError;

    fn try_from(values: Vec<f64>) -> Result<Self, CubeError> {
        Self::new(values)
    }
}

impl From<WavelengthAxis> for Vec<f64> {
    fn from(axis: WavelengthAxis) -> Self {
        axis.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CubeKind {
    RawCounts,
    Reflectance,
}

/// A (line, sample, band) volume with its wavelength axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypercube {
    data: Array3<f64>,
    axis: WavelengthAxis,
    kind: CubeKind,
}

impl Hypercube {
    pub fn new(data: Array3<f64>, axis: WavelengthAxis, kind: CubeKind) -> Result<Self, CubeError> {
        let bands = data.dim().2;
        if axis.len() != bands {
            return Err(CubeError::AxisLength {
                axis: axis.len(),
                bands,
            });
        }
        let data = if data.is_standard_layout() {
            data
        } else {
            data.as_standard_layout().into_owned()
        };
        let flat = data.as_slice().expect("standard layout");
        if let Some(index) = flat.iter().position(|v| !v.is_finite()) {
            return Err(CubeError::NonFiniteInput(index));
        }
        if kind == CubeKind::Reflectance {
            if let Some(index) = flat.iter().position(|&v| !(0.0..=REFLECTANCE_MAX).contains(&v)) {
                return Err(CubeError::ReflectanceOutOfRange {
                    index,
                    value: flat[index],
                });
            }
        }
        Ok(Self { data, axis, kind })
    }

    pub fn lines(&self) -> usize {
        self.data.dim().0
    }

    pub fn samples(&self) -> usize {
        self.data.dim().1
    }

    pub fn bands(&self) -> usize {
        self.data.dim().2
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn axis(&self) -> &WavelengthAxis {
        &self.axis
    }

    pub fn kind(&self) -> CubeKind {
        self.kind
    }

    /// Flat BIP view of all values.
    pub fn as_slice(&self) -> &[f64] {
        self.data.as_slice().expect("standard layout")
    }

    /// Spectrum of one pixel.
    pub fn pixel(&self, line: usize, sample: usize) -> &[f64] {
        let bands = self.bands();
        let start = (line * self.samples() + sample) * bands;
        &self.as_slice()[start..start + bands]
    }

    /// Spectrum of a pixel addressed by its row-major spatial index.
    pub fn pixel_at(&self, index: usize) -> &[f64] {
        let bands = self.bands();
        &self.as_slice()[index * bands..(index + 1) * bands]
    }
}

/// Per-(sample, band) dark and white reference levels.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFrames {
    dark: Array2<f64>,
    white: Array2<f64>,
}

impl ReferenceFrames {
    pub fn new(dark: Array2<f64>, white: Array2<f64>) -> Result<Self, CubeError> {
        if dark.dim() != white.dim() {
            return Err(CubeError::ShapeMismatch(format!(
                "dark frame {:?} vs white frame {:?}",
                dark.dim(),
                white.dim()
            )));
        }
        if let Some(index) = dark.iter().chain(white.iter()).position(|v| !v.is_finite()) {
            return Err(CubeError::NonFiniteInput(index));
        }
        Ok(Self { dark, white })
    }

    /// Scalar-spectrum references repeated across `samples` spatial columns.
    pub fn from_spectra(dark: &[f64], white: &[f64], samples: usize) -> Result<Self, CubeError> {
        if dark.len() != white.len() {
            return Err(CubeError::ShapeMismatch(format!(
                "dark spectrum has {} bands, white has {}",
                dark.len(),
                white.len()
            )));
        }
        let bands = dark.len();
        let dark = Array2::from_shape_fn((samples, bands), |(_, b)| dark[b]);
        let white = Array2::from_shape_fn((samples, bands), |(_, b)| white[b]);
        Self::new(dark, white)
    }

    /// Line-averaged references from dark and white scans of the same geometry.
    pub fn from_cubes(dark: &Hypercube, white: &Hypercube) -> Result<Self, CubeError> {
        if (dark.samples(), dark.bands()) != (white.samples(), white.bands()) {
            return Err(CubeError::ShapeMismatch(format!(
                "dark scan {:?} vs white scan {:?}",
                dark.dim(),
                white.dim()
            )));
        }
        let mean = |cube: &Hypercube| {
            cube.data()
                .mean_axis(ndarray::Axis(0))
                .ok_or_else(|| CubeError::ShapeMismatch("reference scan has no lines".into()))
        };
        Self::new(mean(dark)?, mean(white)?)
    }

    pub fn dark(&self) -> &Array2<f64> {
        &self.dark
    }

    pub fn white(&self) -> &Array2<f64> {
        &self.white
    }

    pub fn samples(&self) -> usize {
        self.dark.dim().0
    }

    pub fn bands(&self) -> usize {
        self.dark.dim().1
    }

    /// Number of (sample, band) entries with `white - dark <= ε`.
    pub fn degenerate_entries(&self) -> usize {
        self.dark
            .iter()
            .zip(self.white.iter())
            .filter(|(d, w)| *w - *d <= DENOMINATOR_EPSILON)
            .count()
    }

    /// Dark and white levels rendered as single-line cubes, for persistence.
    pub fn to_cubes(&self, axis: &WavelengthAxis) -> Result<(Hypercube, Hypercube), CubeError> {
        let as_cube = |frame: &Array2<f64>| {
            let data = frame.clone().insert_axis(ndarray::Axis(0));
            Hypercube::new(data, axis.clone(), CubeKind::RawCounts)
        };
        Ok((as_cube(&self.dark)?, as_cube(&self.white)?))
    }

    fn broadcast_to(&self, samples: usize) -> Self {
        let dark = self.dark.row(0);
        let white = self.white.row(0);
        Self {
            dark: Array2::from_shape_fn((samples, dark.len()), |(_, b)| dark[b]),
            white: Array2::from_shape_fn((samples, white.len()), |(_, b)| white[b]),
        }
    }
}

/// Spatial window selected by [`crop_roi`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiWindow {
    pub line_offset: usize,
    pub sample_offset: usize,
    pub lines: usize,
    pub samples: usize,
}

impl RoiWindow {
    /// Centered window covering `fraction` of each spatial axis.
    ///
    /// Extents are rounded down; when the margin is odd the extra pixel is
    /// trimmed from the leading side.
    pub fn centered(lines: usize, samples: usize, fraction: f64) -> Result<Self, CubeError> {
        if !(fraction.is_finite() && fraction <= 1.0) {
            return Err(CubeError::InvalidRoiFraction(fraction));
        }
        if fraction <= 0.0 {
            return Err(CubeError::EmptyRoi);
        }
        let extent = |n: usize| (n as f64 * fraction + 1e-9).floor() as usize;
        let (roi_lines, roi_samples) = (extent(lines).min(lines), extent(samples).min(samples));
        if roi_lines == 0 || roi_samples == 0 {
            return Err(CubeError::EmptyRoi);
        }
        Ok(Self {
            line_offset: (lines - roi_lines).div_ceil(2),
            sample_offset: (samples - roi_samples).div_ceil(2),
            lines: roi_lines,
            samples: roi_samples,
        })
    }

    pub fn contains(&self, line: usize, sample: usize) -> bool {
        (self.line_offset..self.line_offset + self.lines).contains(&line)
            && (self.sample_offset..self.sample_offset + self.samples).contains(&sample)
    }
}

/// Centered spatial sub-cube; bands are untouched.
pub fn crop_roi(cube: &Hypercube, fraction: f64) -> Result<(Hypercube, RoiWindow), CubeError> {
    let window = RoiWindow::centered(cube.lines(), cube.samples(), fraction)?;
    let view = cube.data().slice(s![
        window.line_offset..window.line_offset + window.lines,
        window.sample_offset..window.sample_offset + window.samples,
        ..
    ]);
    let cropped = Hypercube {
        data: view.to_owned(),
        axis: cube.axis().clone(),
        kind: cube.kind(),
    };
    Ok((cropped, window))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp_cube(lines: usize, samples: usize, bands: usize) -> Hypercube {
        let data = Array3::from_shape_fn((lines, samples, bands), |(l, s, b)| (l * 10_000 + s * 100 + b) as f64);
        Hypercube::new(data, WavelengthAxis::band_indices(bands), CubeKind::RawCounts).unwrap()
    }

    #[test]
    fn axis_must_increase() {
        assert!(WavelengthAxis::new(vec![1.0, 2.0, 3.0]).is_ok());
        assert_eq!(WavelengthAxis::new(vec![1.0, 1.0]), Err(CubeError::AxisNotIncreasing));
        assert_eq!(WavelengthAxis::new(vec![2.0, 1.0]), Err(CubeError::AxisNotIncreasing));
    }

    #[test]
    fn linspace_endpoints() {
        let axis = WavelengthAxis::linspace(900.0, 2500.0, 270);
        assert_eq!(axis.len(), 270);
        assert_eq!(axis.values()[0], 900.0);
        assert!((axis.values()[269] - 2500.0).abs() < 1e-9);
    }

    #[test]
    fn cube_rejects_non_finite_and_axis_mismatch() {
        let mut data = Array3::zeros((2, 2, 2));
        data[[1, 0, 1]] = f64::NAN;
        assert!(matches!(
            Hypercube::new(data, WavelengthAxis::band_indices(2), CubeKind::RawCounts),
            Err(CubeError::NonFiniteInput(5))
        ));
        assert!(matches!(
            Hypercube::new(
                Array3::zeros((2, 2, 2)),
                WavelengthAxis::band_indices(3),
                CubeKind::RawCounts
            ),
            Err(CubeError::AxisLength { axis: 3, bands: 2 })
        ));
    }

    #[test]
    fn reflectance_cube_range_checked() {
        let data = Array3::from_elem((1, 1, 1), 2.5);
        assert!(matches!(
            Hypercube::new(data, WavelengthAxis::band_indices(1), CubeKind::Reflectance),
            Err(CubeError::ReflectanceOutOfRange { .. })
        ));
    }

    #[test]
    fn pixel_is_contiguous_spectrum() {
        let cube = ramp_cube(3, 4, 5);
        assert_eq!(cube.pixel(2, 3), &[20_300.0, 20_301.0, 20_302.0, 20_303.0, 20_304.0]);
        assert_eq!(cube.pixel_at(2 * 4 + 3), cube.pixel(2, 3));
    }

    #[test]
    fn crop_full_fraction_is_identity() {
        let cube = ramp_cube(100, 100, 2);
        let (cropped, window) = crop_roi(&cube, 1.0).unwrap();
        assert_eq!(cropped, cube);
        assert_eq!((window.line_offset, window.sample_offset), (0, 0));
    }

    #[test]
    fn crop_eighty_percent_centered() {
        let cube = ramp_cube(100, 100, 2);
        let (cropped, window) = crop_roi(&cube, 0.8).unwrap();
        assert_eq!(cropped.dim(), (80, 80, 2));
        assert_eq!((window.line_offset, window.sample_offset), (10, 10));
        assert_eq!(cropped.pixel(0, 0), cube.pixel(10, 10));
        assert_eq!(cropped.pixel(79, 79), cube.pixel(89, 89));
    }

    #[test]
    fn crop_odd_margin_goes_to_leading_side() {
        let window = RoiWindow::centered(10, 7, 0.5).unwrap();
        // 10 -> 5 (margin 5: 3 leading, 2 trailing); 7 -> 3 (margin 4: 2/2)
        assert_eq!(
            window,
            RoiWindow {
                line_offset: 3,
                sample_offset: 2,
                lines: 5,
                samples: 3
            }
        );
    }

    #[test]
    fn crop_tiny_cube_is_empty() {
        let cube = ramp_cube(1, 1, 3);
        assert_eq!(crop_roi(&cube, 0.1).unwrap_err(), CubeError::EmptyRoi);
        assert_eq!(crop_roi(&cube, 0.0).unwrap_err(), CubeError::EmptyRoi);
        assert_eq!(crop_roi(&cube, 1.5).unwrap_err(), CubeError::InvalidRoiFraction(1.5));
    }

    #[test]
    fn reference_frames_from_spectra_broadcast() {
        let refs = ReferenceFrames::from_spectra(&[1.0, 2.0], &[10.0, 20.0], 3).unwrap();
        assert_eq!(refs.dark().dim(), (3, 2));
        assert_eq!(refs.white()[[2, 1]], 20.0);
        assert_eq!(refs.degenerate_entries(), 0);
    }

    #[test]
    fn reference_frames_from_cubes_average_lines() {
        let dark = Hypercube::new(
            Array3::from_shape_vec((2, 1, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            WavelengthAxis::band_indices(2),
            CubeKind::RawCounts,
        )
        .unwrap();
        let white = Hypercube::new(
            Array3::from_elem((3, 1, 2), 100.0),
            WavelengthAxis::band_indices(2),
            CubeKind::RawCounts,
        )
        .unwrap();
        let refs = ReferenceFrames::from_cubes(&dark, &white).unwrap();
        assert_eq!(refs.dark().as_slice().unwrap(), &[2.0, 3.0]);
        assert_eq!(refs.white().as_slice().unwrap(), &[100.0, 100.0]);
    }

    proptest! {
        #[test]
        fn nested_crop_extent_close_to_product(
            lines in 1usize..300, samples in 1usize..300,
            f1 in 0.05f64..=1.0, f2 in 0.05f64..=1.0,
        ) {
            let Ok(outer) = RoiWindow::centered(lines, samples, f1) else { return Ok(()); };
            let Ok(inner) = RoiWindow::centered(outer.lines, outer.samples, f2) else { return Ok(()); };
            let Ok(direct) = RoiWindow::centered(lines, samples, f1 * f2) else { return Ok(()); };
            prop_assert!(inner.lines.abs_diff(direct.lines) <= 1);
            prop_assert!(inner.samples.abs_diff(direct.samples) <= 1);
        }
    }
}
