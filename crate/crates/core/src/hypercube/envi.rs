//! ENVI-style `key = value` headers and raw binary payloads.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;

use super::{CubeError, CubeKind, Hypercube, WavelengthAxis};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interleave {
    Bsq,
    Bil,
    Bip,
}

impl Interleave {
    fn parse(value: &str) -> Option<Self> {
        match value.to_ascii_lowercase().as_str() {
            "bsq" => Some(Interleave::Bsq),
            "bil" => Some(Interleave::Bil),
            "bip" => Some(Interleave::Bip),
            _ => None,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Interleave::Bsq => "bsq",
            Interleave::Bil => "bil",
            Interleave::Bip => "bip",
        }
    }

    /// Storage position of element (line, sample, band).
    fn offset(self, (lines, samples, bands): (usize, usize, usize), (l, s, b): (usize, usize, usize)) -> usize {
        match self {
            Interleave::Bsq => (b * lines + l) * samples + s,
            Interleave::Bil => (l * bands + b) * samples + s,
            Interleave::Bip => (l * samples + s) * bands + b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataType {
    U16,
    F32,
}

impl DataType {
    fn from_code(code: &str) -> Option<Self> {
        match code {
            "12" => Some(DataType::U16),
            "4" => Some(DataType::F32),
            _ => None,
        }
    }

    fn code(self) -> u8 {
        match self {
            DataType::U16 => 12,
            DataType::F32 => 4,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DataType::U16 => 2,
            DataType::F32 => 4,
        }
    }

    fn name(self) -> &'static str {
        match self {
            DataType::U16 => "u16",
            DataType::F32 => "f32",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteOrder {
    LittleEndian,
    BigEndian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnviHeader {
    pub lines: usize,
    pub samples: usize,
    pub bands: usize,
    pub interleave: Interleave,
    pub data_type: DataType,
    pub byte_order: ByteOrder,
    pub wavelengths: WavelengthAxis,
    /// Recorded in a `; kind = ...` comment; absent means raw counts.
    pub kind: CubeKind,
    pub description: Option<String>,
}

impl EnviHeader {
    /// Header describing `cube` with the given storage layout.
    pub fn for_cube(cube: &Hypercube, interleave: Interleave, data_type: DataType, byte_order: ByteOrder) -> Self {
        Self {
            lines: cube.lines(),
            samples: cube.samples(),
            bands: cube.bands(),
            interleave,
            data_type,
            byte_order,
            wavelengths: cube.axis().clone(),
            kind: cube.kind(),
            description: None,
        }
    }

    pub fn element_count(&self) -> usize {
        self.lines * self.samples * self.bands
    }

    pub fn payload_len(&self) -> usize {
        self.element_count() * self.data_type.size()
    }

    pub fn render(&self) -> String {
        let mut out = String::from("ENVI\n");
        if let Some(description) = &self.description {
            let _ = writeln!(out, "description = {{{description}}}");
        }
        let _ = writeln!(out, "samples = {}", self.samples);
        let _ = writeln!(out, "lines = {}", self.lines);
        let _ = writeln!(out, "bands = {}", self.bands);
        let _ = writeln!(out, "header offset = 0");
        let _ = writeln!(out, "file type = ENVI Standard");
        let _ = writeln!(out, "data type = {}", self.data_type.code());
        let _ = writeln!(out, "interleave = {}", self.interleave.as_str());
        let byte_order = match self.byte_order {
            ByteOrder::LittleEndian => 0,
            ByteOrder::BigEndian => 1,
        };
        let _ = writeln!(out, "byte order = {byte_order}");
        let _ = writeln!(out, "wavelength units = Nanometers");
        let wavelengths: Vec<String> = self.wavelengths.values().iter().map(|w| w.to_string()).collect();
        let _ = writeln!(out, "wavelength = {{{}}}", wavelengths.join(", "));
        if self.kind == CubeKind::Reflectance {
            let _ = writeln!(out, "; kind = reflectance");
        }
        out
    }
}

/// Splits header text into `(key, value)` pairs, joining brace-delimited
/// values that span several lines. Comment lines are returned with key `;`.
fn tokenize(text: &str) -> Result<Vec<(String, String)>, CubeError> {
    let mut pairs = Vec::new();
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        let line = line.trim();
        if line.is_empty() || line.eq_ignore_ascii_case("ENVI") {
            continue;
        }
        if let Some(comment) = line.strip_prefix(';') {
            pairs.push((";".to_string(), comment.trim().to_string()));
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CubeError::MalformedValue(line.to_string()));
        };
        let key = key.trim().to_ascii_lowercase();
        let mut value = value.trim().to_string();
        if value.starts_with('{') {
            while !value.contains('}') {
                match lines.next() {
                    Some(more) => {
                        value.push(' ');
                        value.push_str(more.trim());
                    }
                    None => return Err(CubeError::MalformedValue(key)),
                }
            }
        }
        pairs.push((key, value));
    }
    Ok(pairs)
}

fn brace_list(key: &str, value: &str) -> Result<Vec<String>, CubeError> {
    let inner = value
        .trim()
        .strip_prefix('{')
        .and_then(|v| v.strip_suffix('}'))
        .ok_or_else(|| CubeError::MalformedValue(key.to_string()))?;
    Ok(inner
        .split(',')
        .map(str::trim)
        .filter(|item| !item.is_empty())
        .map(String::from)
        .collect())
}

pub fn parse_envi_header(text: &str) -> Result<EnviHeader, CubeError> {
    let pairs = tokenize(text)?;
    let get = |key: &str| pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
    let require = |key: &str| get(key).ok_or_else(|| CubeError::MissingField(key.to_string()));
    let positive = |key: &str| -> Result<usize, CubeError> {
        match require(key)?.parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CubeError::MalformedValue(key.to_string())),
        }
    };

    let lines = positive("lines")?;
    let samples = positive("samples")?;
    let bands = positive("bands")?;
    let interleave =
        Interleave::parse(require("interleave")?).ok_or_else(|| CubeError::MalformedValue("interleave".into()))?;
    let data_type =
        DataType::from_code(require("data type")?).ok_or_else(|| CubeError::MalformedValue("data type".into()))?;
    let byte_order = match get("byte order").unwrap_or("0") {
        "0" => ByteOrder::LittleEndian,
        "1" => ByteOrder::BigEndian,
        _ => return Err(CubeError::MalformedValue("byte order".into())),
    };
    if get("header offset").is_some_and(|v| v != "0") {
        return Err(CubeError::MalformedValue("header offset".into()));
    }
    let wavelengths = match get("wavelength") {
        None => WavelengthAxis::band_indices(bands),
        Some(value) => {
            let values = brace_list("wavelength", value)?
                .iter()
                .map(|w| w.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| CubeError::MalformedValue("wavelength".into()))?;
            if values.len() != bands {
                return Err(CubeError::WavelengthCountMismatch {
                    bands,
                    wavelengths: values.len(),
                });
            }
            WavelengthAxis::new(values).map_err(|_| CubeError::MalformedValue("wavelength".into()))?
        }
    };
    let kind = pairs
        .iter()
        .filter(|(k, _)| k == ";")
        .filter_map(|(_, comment)| comment.split_once('='))
        .find(|(k, _)| k.trim().eq_ignore_ascii_case("kind"))
        .map(|(_, v)| match v.trim().to_ascii_lowercase().as_str() {
            "reflectance" => Ok(CubeKind::Reflectance),
            "raw_counts" | "raw" => Ok(CubeKind::RawCounts),
            _ => Err(CubeError::MalformedValue("kind".into())),
        })
        .transpose()?
        .unwrap_or(CubeKind::RawCounts);
    let description = get("description").map(|d| d.trim_start_matches('{').trim_end_matches('}').trim().to_string());

    Ok(EnviHeader {
        lines,
        samples,
        bands,
        interleave,
        data_type,
        byte_order,
        wavelengths,
        kind,
        description,
    })
}

/// Decodes a payload into a BIP-ordered cube, whatever the storage interleave.
pub fn read_cube(header: &EnviHeader, payload: &[u8]) -> Result<Hypercube, CubeError> {
    let expected = header.payload_len();
    if payload.len() != expected {
        return Err(CubeError::PayloadSizeMismatch {
            expected,
            found: payload.len(),
        });
    }
    let size = header.data_type.size();
    let decode = |i: usize| -> f64 {
        let bytes = &payload[i * size..(i + 1) * size];
        match (header.data_type, header.byte_order) {
            (DataType::U16, ByteOrder::LittleEndian) => u16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            (DataType::U16, ByteOrder::BigEndian) => u16::from_be_bytes([bytes[0], bytes[1]]) as f64,
            (DataType::F32, ByteOrder::LittleEndian) => f32::from_le_bytes(bytes.try_into().expect("4 bytes")) as f64,
            (DataType::F32, ByteOrder::BigEndian) => f32::from_be_bytes(bytes.try_into().expect("4 bytes")) as f64,
        }
    };
    let dim = (header.lines, header.samples, header.bands);
    let mut values = Vec::with_capacity(header.element_count());
    for l in 0..dim.0 {
        for s in 0..dim.1 {
            for b in 0..dim.2 {
                let offset = header.interleave.offset(dim, (l, s, b));
                let v = decode(offset);
                if !v.is_finite() {
                    return Err(CubeError::NonFiniteInput(offset));
                }
                values.push(v);
            }
        }
    }
    let data = Array3::from_shape_vec(dim, values).expect("element count checked");
    Hypercube::new(data, header.wavelengths.clone(), header.kind)
}

/// Encodes `cube` into the layout described by `header`.
pub fn encode_cube(cube: &Hypercube, header: &EnviHeader) -> Result<Vec<u8>, CubeError> {
    let dim = cube.dim();
    if dim != (header.lines, header.samples, header.bands) {
        return Err(CubeError::ShapeMismatch(format!(
            "cube is {dim:?}, header declares {:?}",
            (header.lines, header.samples, header.bands)
        )));
    }
    let size = header.data_type.size();
    let mut payload = vec![0u8; header.payload_len()];
    for l in 0..dim.0 {
        for s in 0..dim.1 {
            for (b, &v) in cube.pixel(l, s).iter().enumerate() {
                let offset = header.interleave.offset(dim, (l, s, b));
                let slot = &mut payload[offset * size..(offset + 1) * size];
                match header.data_type {
                    DataType::U16 => {
                        if v.fract() != 0.0 || !(0.0..=u16::MAX as f64).contains(&v) {
                            return Err(CubeError::Unrepresentable {
                                index: offset,
                                value: v,
                                data_type: header.data_type.name(),
                            });
                        }
                        let bytes = match header.byte_order {
                            ByteOrder::LittleEndian => (v as u16).to_le_bytes(),
                            ByteOrder::BigEndian => (v as u16).to_be_bytes(),
                        };
                        slot.copy_from_slice(&bytes);
                    }
                    DataType::F32 => {
                        let bytes = match header.byte_order {
                            ByteOrder::LittleEndian => (v as f32).to_le_bytes(),
                            ByteOrder::BigEndian => (v as f32).to_be_bytes(),
                        };
                        slot.copy_from_slice(&bytes);
                    }
                }
            }
        }
    }
    Ok(payload)
}

/// Conventional binary path next to a header: `scan.hdr` → `scan.raw`.
pub fn data_path_for(header_path: &Path) -> PathBuf {
    header_path.with_extension("raw")
}

/// Reads a header file and its binary payload (`data_path` defaults to [`data_path_for`]).
pub fn load_cube(header_path: &Path, data_path: Option<&Path>) -> Result<(EnviHeader, Hypercube)> {
    let text = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let header = parse_envi_header(&text)?;
    let data_path = data_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| data_path_for(header_path));
    let payload = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    let cube = read_cube(&header, &payload)?;
    Ok((header, cube))
}

/// Writes `cube` as `header_path` + its sibling `.raw` file; returns the data path.
pub fn save_cube(cube: &Hypercube, header_path: &Path, header: &EnviHeader) -> Result<PathBuf> {
    let payload = encode_cube(cube, header)?;
    let data_path = data_path_for(header_path);
    fs::write(header_path, header.render()).map_err(|e| Error::io(header_path, e))?;
    fs::write(&data_path, payload).map_err(|e| Error::io(&data_path, e))?;
    Ok(data_path)
}
