//! Benchmark fixtures shared by the criterion benches.

use ndarray::Array2;
use peatcube_core::masking::{intensity_image, IntensityImage, IntensityMode};
use peatcube_core::sampling::SampleSet;
use peatcube_core::synth::generate_cube;
use peatcube_core::{draw_spectral_samples, SyntheticCube, SyntheticSpec};

/// One synthetic scan at desk-scale geometry.
pub fn scan(lines: usize, samples: usize, bands: usize) -> SyntheticCube {
    let spec = SyntheticSpec {
        n_classes: 1,
        lines,
        samples,
        bands,
        seed: 1,
        ..SyntheticSpec::default()
    };
    generate_cube(&spec, 0).expect("valid spec")
}

pub fn intensity(cube: &SyntheticCube) -> IntensityImage {
    intensity_image(&cube.reflectance, IntensityMode::MeanOverBands).expect("non-empty cube")
}

/// Labeled samples from `classes` synthetic scans.
pub fn samples(classes: usize, group_size: usize) -> SampleSet {
    let spec = SyntheticSpec {
        n_classes: classes,
        lines: 48,
        samples: 48,
        bands: 60,
        seed: 2,
        ..SyntheticSpec::default()
    };
    SampleSet::merge((0..classes).map(|c| {
        let cube = generate_cube(&spec, c).expect("valid spec");
        draw_spectral_samples(&cube.reflectance, &cube.lit_mask, group_size, 3, &cube.origin()).expect("mask fits")
    }))
}

/// Two interleaved noisy blobs with ±1 labels.
pub fn blobs(n: usize, dims: usize) -> (Array2<f64>, Vec<f64>) {
    let x = Array2::from_shape_fn((n, dims), |(i, j)| {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        sign * 0.8 + (((i * 7919 + j * 104_729) % 1000) as f64 / 1000.0 - 0.5)
    });
    let y = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    (x, y)
}
