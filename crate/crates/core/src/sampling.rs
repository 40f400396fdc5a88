//! Spectral samples: per-band means of random disjoint pixel groups.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, ErrorFamily, Result};
use crate::hypercube::Hypercube;
use crate::masking::PixelMask;
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SamplingError {
    #[error("mask has {available} valid pixels, fewer than group size {group_size}")]
    InsufficientPixels { available: usize, group_size: usize },
    #[error("group size must be at least 1")]
    InvalidGroupSize,
    #[error("class `{0}` has no samples")]
    EmptyClass(String),
    #[error("train fraction {0} outside (0, 1)")]
    InvalidFraction(f64),
    #[error("mask is {mask:?} but cube is {cube:?}")]
    MaskShapeMismatch { mask: (usize, usize), cube: (usize, usize) },
    #[error("spectra have {found} bands, expected {expected}")]
    BandMismatch { expected: usize, found: usize },
    #[error("sample table: {0}")]
    Table(String),
}

impl SamplingError {
    pub fn family(&self) -> ErrorFamily {
        match self {
            SamplingError::Table(_) => ErrorFamily::Io,
            _ => ErrorFamily::Config,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Phenol,
    Moisture,
    #[serde(alias = "om")]
    OrganicMatter,
}

impl TargetKind {
    pub const ALL: [TargetKind; 3] = [TargetKind::Phenol, TargetKind::Moisture, TargetKind::OrganicMatter];

    pub fn name(self) -> &'static str {
        match self {
            TargetKind::Phenol => "phenol",
            TargetKind::Moisture => "moisture",
            TargetKind::OrganicMatter => "om",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            TargetKind::Phenol => "ppm",
            TargetKind::Moisture | TargetKind::OrganicMatter => "%",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "phenol" | "total_phenol" => Some(TargetKind::Phenol),
            "moisture" => Some(TargetKind::Moisture),
            "om" | "organic_matter" => Some(TargetKind::OrganicMatter),
            _ => None,
        }
    }
}

/// Reference chemistry of one scanned sample (phenol in ppm, the rest in percent).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    pub phenol: Option<f64>,
    pub moisture: Option<f64>,
    pub organic_matter: Option<f64>,
}

impl Targets {
    pub fn new(phenol: f64, moisture: f64, organic_matter: f64) -> Self {
        Self {
            phenol: Some(phenol),
            moisture: Some(moisture),
            organic_matter: Some(organic_matter),
        }
    }

    pub fn get(&self, kind: TargetKind) -> Option<f64> {
        match kind {
            TargetKind::Phenol => self.phenol,
            TargetKind::Moisture => self.moisture,
            TargetKind::OrganicMatter => self.organic_matter,
        }
    }
}

/// Label and targets shared by every sample drawn from one cube.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleOrigin {
    pub cube_id: String,
    pub label: Option<String>,
    pub targets: Targets,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub cube_id: String,
    /// Row-major spatial indices of the averaged pixels.
    pub pixels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSample {
    pub spectrum: Vec<f64>,
    pub label: Option<String>,
    pub targets: Targets,
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSummary {
    pub cube_id: String,
    /// M, the valid-pixel count of the source mask.
    pub valid_pixels: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub seed: u64,
    pub group_size: usize,
    pub sources: Vec<SourceSummary>,
}

/// Samples plus their per-class counts; unlabeled samples count under `""`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    samples: Vec<SpectralSample>,
    class_counts: BTreeMap<String, usize>,
    meta: SampleMeta,
}

impl SampleSet {
    pub fn new(samples: Vec<SpectralSample>, meta: SampleMeta) -> Self {
        let mut class_counts = BTreeMap::new();
        for s in &samples {
            *class_counts.entry(s.label.clone().unwrap_or_default()).or_insert(0) += 1;
        }
        Self {
            samples,
            class_counts,
            meta,
        }
    }

    /// Concatenates sets in order; metadata sources are appended.
    pub fn merge(sets: impl IntoIterator<Item = SampleSet>) -> Self {
        let mut samples = Vec::new();
        let mut meta = SampleMeta::default();
        for (i, set) in sets.into_iter().enumerate() {
            if i == 0 {
                meta.seed = set.meta.seed;
                meta.group_size = set.meta.group_size;
            }
            meta.sources.extend(set.meta.sources);
            samples.extend(set.samples);
        }
        Self::new(samples, meta)
    }

    pub fn samples(&self) -> &[SpectralSample] {
        &self.samples
    }

    pub fn class_counts(&self) -> &BTreeMap<String, usize> {
        &self.class_counts
    }

    pub fn meta(&self) -> &SampleMeta {
        &self.meta
    }

    pub fn seed(&self) -> u64 {
        self.meta.seed
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn bands(&self) -> Option<usize> {
        self.samples.first().map(|s| s.spectrum.len())
    }

    /// Spectra stacked as rows.
    pub fn spectra(&self) -> Array2<f64> {
        let bands = self.bands().unwrap_or(0);
        Array2::from_shape_fn((self.len(), bands), |(i, b)| self.samples[i].spectrum[b])
    }

    pub fn labels(&self) -> Vec<Option<&str>> {
        self.samples.iter().map(|s| s.label.as_deref()).collect()
    }

    /// Values of one target, `None` if any sample lacks it.
    pub fn target_values(&self, kind: TargetKind) -> Option<Vec<f64>> {
        self.samples.iter().map(|s| s.targets.get(kind)).collect()
    }

    /// Subset by position, keeping metadata.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self::new(
            indices.iter().map(|&i| self.samples[i].clone()).collect(),
            self.meta.clone(),
        )
    }

    /// CSV with header `label,target_phenol,target_moisture,target_om,b0,...`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<(), SamplingError> {
        let table = |e: csv::Error| SamplingError::Table(e.to_string());
        let bands = self.bands().unwrap_or(0);
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec![
            "label".to_string(),
            "target_phenol".into(),
            "target_moisture".into(),
            "target_om".into(),
        ];
        header.extend((0..bands).map(|b| format!("b{b}")));
        out.write_record(&header).map_err(table)?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for s in &self.samples {
            let mut record = vec![
                s.label.clone().unwrap_or_default(),
                opt(s.targets.phenol),
                opt(s.targets.moisture),
                opt(s.targets.organic_matter),
            ];
            record.extend(s.spectrum.iter().map(|v| v.to_string()));
            out.write_record(&record).map_err(table)?;
        }
        out.flush().map_err(|e| SamplingError::Table(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R, meta: SampleMeta) -> Result<Self, SamplingError> {
        let table = |e: csv::Error| SamplingError::Table(e.to_string());
        let mut input = csv::Reader::from_reader(reader);
        let header = input.headers().map_err(table)?.clone();
        let expected = ["label", "target_phenol", "target_moisture", "target_om"];
        if header.len() < 4 || header.iter().take(4).ne(expected) {
            return Err(SamplingError::Table(format!("unexpected header {:?}", header)));
        }
        let parse = |field: &str| -> Result<Option<f64>, SamplingError> {
            if field.is_empty() {
                Ok(None)
            } else {
                field
                    .parse::<f64>()
                    .map(Some)
                    .map_err(|_| SamplingError::Table(format!("bad number `{field}`")))
            }
        };
        let mut samples = Vec::new();
        for record in input.records() {
            let record = record.map_err(table)?;
            let spectrum = record
                .iter()
                .skip(4)
                .map(|f| parse(f)?.ok_or_else(|| SamplingError::Table("empty band value".into())))
                .collect::<Result<Vec<_>, _>>()?;
            let label = Some(&record[0]).filter(|l| !l.is_empty()).map(String::from);
            samples.push(SpectralSample {
                spectrum,
                label,
                targets: Targets {
                    phenol: parse(&record[1])?,
                    moisture: parse(&record[2])?,
                    organic_matter: parse(&record[3])?,
                },
                provenance: None,
            });
        }
        Ok(Self::new(samples, meta))
    }

    /// Writes the CSV table and a `.json` sidecar with the sampling metadata.
    pub fn save(&self, csv_path: &Path) -> Result<()> {
        let mut buffer = Vec::new();
        self.write_csv(&mut buffer)?;
        fs::write(csv_path, buffer).map_err(|e| Error::io(csv_path, e))?;
        let sidecar = csv_path.with_extension("json");
        let json = serde_json::to_string_pretty(&self.meta).map_err(|e| Error::json(&sidecar, e))?;
        fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))?;
        Ok(())
    }

    /// Reads a CSV table; the sidecar is optional.
    pub fn load(csv_path: &Path) -> Result<Self> {
        let sidecar = csv_path.with_extension("json");
        let meta = match fs::read_to_string(&sidecar) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| Error::json(&sidecar, e))?,
            Err(_) => SampleMeta::default(),
        };
        let file = fs::File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
        Ok(Self::read_csv(file, meta)?)
    }
}

/// Shuffles the mask's valid pixels, cuts them into ⌊M / group_size⌋
/// disjoint groups (leftovers dropped) and averages each group per band.
pub fn draw_spectral_samples(
    cube: &Hypercube,
    mask: &PixelMask,
    group_size: usize,
    seed: u64,
    origin: &SampleOrigin,
) -> Result<SampleSet, SamplingError> {
    if group_size == 0 {
        return Err(SamplingError::InvalidGroupSize);
    }
    if mask.dim() != (cube.lines(), cube.samples()) {
        return Err(SamplingError::MaskShapeMismatch {
            mask: mask.dim(),
            cube: (cube.lines(), cube.samples()),
        });
    }
    let available = mask.valid_count();
    if available < group_size {
        return Err(SamplingError::InsufficientPixels { available, group_size });
    }
    let mut pixels = mask.valid_indices();
    pixels.shuffle(&mut seeded(seed));

    let bands = cube.bands();
    let samples: Vec<SpectralSample> = pixels
        .chunks_exact(group_size)
        .map(|group| {
            let mut sum = vec![0.0; bands];
            let mut lo = vec![f64::INFINITY; bands];
            let mut hi = vec![f64::NEG_INFINITY; bands];
            for &p in group {
                for (b, &v) in cube.pixel_at(p).iter().enumerate() {
                    sum[b] += v;
                    lo[b] = lo[b].min(v);
                    hi[b] = hi[b].max(v);
                }
            }
            // rounding can push the mean a ulp outside the members' range
            let spectrum = (0..bands)
                .map(|b| (sum[b] / group_size as f64).clamp(lo[b], hi[b]))
                .collect();
            SpectralSample {
                spectrum,
                label: origin.label.clone(),
                targets: origin.targets,
                provenance: Some(Provenance {
                    cube_id: origin.cube_id.clone(),
                    pixels: group.to_vec(),
                }),
            }
        })
        .collect();
    let meta = SampleMeta {
        seed,
        group_size,
        sources: vec![SourceSummary {
            cube_id: origin.cube_id.clone(),
            valid_pixels: available,
            samples: samples.len(),
        }],
    };
    Ok(SampleSet::new(samples, meta))
}

/// Number of training samples for a class of `count` under `fraction`.
pub fn train_count(count: usize, fraction: f64) -> usize {
    let n = (fraction * count as f64 - 1e-9).ceil() as usize;
    n.clamp(1, count)
}

/// Stratified split: per class, ⌈fraction · count⌉ (at least one) shuffled
/// samples go to the training set.
pub fn split_train_test(
    set: &SampleSet,
    train_fraction: f64,
    seed: u64,
) -> Result<(SampleSet, SampleSet), SamplingError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(SamplingError::InvalidFraction(train_fraction));
    }
    if set.is_empty() {
        return Err(SamplingError::EmptyClass(String::new()));
    }
    if let Some((class, _)) = set.class_counts().iter().find(|(_, &n)| n == 0) {
        return Err(SamplingError::EmptyClass(class.clone()));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in set.samples().iter().enumerate() {
        by_class.entry(s.label.as_deref().unwrap_or("")).or_default().push(i);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (class_index, indices) in by_class.values_mut().enumerate() {
        indices.shuffle(&mut seeded(derive_seed(seed, class_index as u64)));
        let n_train = train_count(indices.len(), train_fraction);
        train.extend_from_slice(&indices[..n_train]);
        test.extend_from_slice(&indices[n_train..]);
    }
    Ok((set.subset(&train), set.subset(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypercube::{CubeKind, WavelengthAxis};
    use ndarray::Array3;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn cube(lines: usize, samples: usize, bands: usize) -> Hypercube {
        let data = Array3::from_shape_fn((lines, samples, bands), |(l, s, b)| {
            ((l * 31 + s * 17 + b * 7) % 97) as f64 / 97.0
        });
        Hypercube::new(data, WavelengthAxis::band_indices(bands), CubeKind::Reflectance).unwrap()
    }

    fn labeled(label: &str, n: usize) -> Vec<SpectralSample> {
        (0..n)
            .map(|i| SpectralSample {
                spectrum: vec![i as f64, 1.0],
                label: Some(label.to_string()),
                targets: Targets::default(),
                provenance: None,
            })
            .collect()
    }

    fn origin() -> SampleOrigin {
        SampleOrigin {
            cube_id: "c00".into(),
            label: Some("c00".into()),
            targets: Targets::new(30.0, 40.0, 90.0),
        }
    }

    #[test]
    fn group_size_one_reproduces_pixels() {
        let cube = cube(2, 5, 3);
        let mask = PixelMask::all_valid(2, 5);
        let set = draw_spectral_samples(&cube, &mask, 1, 9, &origin()).unwrap();
        assert_eq!(set.len(), 10);
        for s in set.samples() {
            let p = s.provenance.as_ref().unwrap().pixels[0];
            assert_eq!(s.spectrum, cube.pixel_at(p));
        }
    }

    #[test]
    fn too_few_pixels() {
        let cube = cube(7, 7, 2);
        let mut grid = ndarray::Array2::from_elem((7, 7), true);
        grid[[0, 0]] = false;
        let mask = PixelMask::from_grid(grid);
        assert_eq!(mask.valid_count(), 48);
        assert_eq!(
            draw_spectral_samples(&cube, &mask, 50, 0, &origin()).unwrap_err(),
            SamplingError::InsufficientPixels {
                available: 48,
                group_size: 50
            }
        );
    }

    #[test]
    fn samples_inherit_origin() {
        let set = draw_spectral_samples(&cube(10, 10, 4), &PixelMask::all_valid(10, 10), 7, 3, &origin()).unwrap();
        assert_eq!(set.len(), 14);
        assert_eq!(set.class_counts().get("c00"), Some(&14));
        assert!(set.samples().iter().all(|s| s.targets.phenol == Some(30.0)));
        assert_eq!(set.meta().sources[0].valid_pixels, 100);
    }

    #[test]
    fn split_counts() {
        let set = SampleSet::new(labeled("a", 2080), SampleMeta::default());
        let (train, test) = split_train_test(&set, 0.05, 1).unwrap();
        assert_eq!((train.len(), test.len()), (104, 1976));

        let single = SampleSet::new(labeled("x", 1), SampleMeta::default());
        let (train, test) = split_train_test(&single, 0.05, 1).unwrap();
        assert_eq!((train.len(), test.len()), (1, 0));

        let mut three = labeled("a", 10);
        three.extend(labeled("b", 10));
        three.extend(labeled("c", 10));
        let (train, test) = split_train_test(&SampleSet::new(three, SampleMeta::default()), 0.5, 1).unwrap();
        assert!(train.class_counts().values().all(|&n| n == 5));
        assert!(test.class_counts().values().all(|&n| n == 5));
    }

    #[test]
    fn split_rejects_bad_input() {
        let set = SampleSet::new(labeled("a", 3), SampleMeta::default());
        assert_eq!(
            split_train_test(&set, 1.0, 0).unwrap_err(),
            SamplingError::InvalidFraction(1.0)
        );
        let empty = SampleSet::new(vec![], SampleMeta::default());
        assert!(matches!(
            split_train_test(&empty, 0.5, 0),
            Err(SamplingError::EmptyClass(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let mut samples = labeled("a", 2);
        samples[0].targets = Targets::new(12.5, 0.1, 99.0);
        samples[1].targets.moisture = Some(3.0);
        samples[1].spectrum = vec![0.1 + 0.2, 1e-17];
        let set = SampleSet::new(samples, SampleMeta::default());
        let mut buffer = Vec::new();
        set.write_csv(&mut buffer).unwrap();
        let text = String::from_utf8(buffer.clone()).unwrap();
        assert!(text.starts_with("label,target_phenol,target_moisture,target_om,b0,b1\n"));
        assert!(text.contains("a,,3,,"));
        assert_eq!(SampleSet::read_csv(&buffer[..], SampleMeta::default()).unwrap(), set);
    }

    proptest! {
        #[test]
        fn grouping_invariants(
            lines in 1usize..12, samples in 1usize..12, group_size in 1usize..20,
            seed in any::<u64>(), keep in prop::collection::vec(any::<bool>(), 144),
        ) {
            let cube = cube(lines, samples, 3);
            let grid = ndarray::Array2::from_shape_fn((lines, samples), |(l, s)| keep[l * samples + s]);
            let mask = PixelMask::from_grid(grid);
            let m = mask.valid_count();
            let result = draw_spectral_samples(&cube, &mask, group_size, seed, &origin());
            if m < group_size {
                prop_assert!(result.is_err());
                return Ok(());
            }
            let set = result.unwrap();
            prop_assert_eq!(set.len(), m / group_size);
            let mut seen = HashSet::new();
            for s in set.samples() {
                let members = &s.provenance.as_ref().unwrap().pixels;
                prop_assert_eq!(members.len(), group_size);
                for &p in members {
                    prop_assert!(mask.grid().as_slice().unwrap()[p]);
                    prop_assert!(seen.insert(p));
                }
                for b in 0..3 {
                    let vals = members.iter().map(|&p| cube.pixel_at(p)[b]);
                    let lo = vals.clone().fold(f64::INFINITY, f64::min);
                    let hi = vals.fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(lo <= s.spectrum[b] && s.spectrum[b] <= hi);
                }
            }
            let again = draw_spectral_samples(&cube, &mask, group_size, seed, &origin()).unwrap();
            prop_assert_eq!(again, set);
        }

        #[test]
        fn split_is_a_partition(
            counts in prop::collection::vec(1usize..40, 1..6), fraction in 0.01f64..0.99, seed in any::<u64>(),
        ) {
            let mut samples = Vec::new();
            for (c, &n) in counts.iter().enumerate() {
                let mut class = labeled(&format!("k{c}"), n);
                for (i, s) in class.iter_mut().enumerate() {
                    s.spectrum[1] = (c * 1000 + i) as f64;
                }
                samples.extend(class);
            }
            let set = SampleSet::new(samples, SampleMeta::default());
            let (train, test) = split_train_test(&set, fraction, seed).unwrap();
            let key = |s: &SpectralSample| s.spectrum[1] as usize;
            let tr: HashSet<usize> = train.samples().iter().map(key).collect();
            let te: HashSet<usize> = test.samples().iter().map(key).collect();
            prop_assert!(tr.is_disjoint(&te));
            prop_assert_eq!(tr.len() + te.len(), set.len());
            for (class, &n) in set.class_counts() {
                prop_assert_eq!(train.class_counts()[class], train_count(n, fraction));
            }
        }
    }
}
