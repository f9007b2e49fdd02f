//! ENVI header + flat binary raster reading and writing.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::hsi::{HsiCube, PixelMask, WavelengthGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interleave {
    Bsq,
    Bil,
    Bip,
}

impl Interleave {
    fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bsq" => Ok(Interleave::Bsq),
            "bil" => Ok(Interleave::Bil),
            "bip" => Ok(Interleave::Bip),
            other => Err(Error::parse("interleave", format!("unsupported value `{other}`"))),
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Interleave::Bsq => "bsq",
            Interleave::Bil => "bil",
            Interleave::Bip => "bip",
        }
    }

    /// Linear element offset of `(line, sample, band)`.
    fn offset(self, line: usize, sample: usize, band: usize, dims: (usize, usize, usize)) -> usize {
        let (lines, samples, bands) = dims;
        match self {
            Interleave::Bsq => (band * lines + line) * samples + sample,
            Interleave::Bil => (line * bands + band) * samples + sample,
            Interleave::Bip => (line * samples + sample) * bands + band,
        }
    }
}

/// ENVI `data type` codes supported here.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataType {
    U8,
    I16,
    U16,
    F32,
    F64,
}

impl DataType {
    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            1 => Ok(DataType::U8),
            2 => Ok(DataType::I16),
            12 => Ok(DataType::U16),
            4 => Ok(DataType::F32),
            5 => Ok(DataType::F64),
            other => Err(Error::parse(
                "data type",
                format!("unsupported code {other} (expected 1, 2, 4, 5 or 12)"),
            )),
        }
    }

    pub fn code(self) -> u32 {
        match self {
            DataType::U8 => 1,
            DataType::I16 => 2,
            DataType::U16 => 12,
            DataType::F32 => 4,
            DataType::F64 => 5,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DataType::U8 => 1,
            DataType::I16 | DataType::U16 => 2,
            DataType::F32 => 4,
            DataType::F64 => 8,
        }
    }

    fn decode(self, bytes: &[u8], big_endian: bool) -> f64 {
        macro_rules! read {
            ($t:ty) => {{
                let arr = bytes.try_into().expect("element width");
                if big_endian {
                    <$t>::from_be_bytes(arr) as f64
                } else {
                    <$t>::from_le_bytes(arr) as f64
                }
            }};
        }
        match self {
            DataType::U8 => bytes[0] as f64,
            DataType::I16 => read!(i16),
            DataType::U16 => read!(u16),
            DataType::F32 => read!(f32),
            DataType::F64 => read!(f64),
        }
    }

    fn encode(self, v: f64, out: &mut Vec<u8>) {
        match self {
            DataType::U8 => out.push(v as u8),
            DataType::I16 => out.extend_from_slice(&(v as i16).to_le_bytes()),
            DataType::U16 => out.extend_from_slice(&(v as u16).to_le_bytes()),
            DataType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            DataType::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnviHeader {
    pub samples: usize,
    pub lines: usize,
    pub bands: usize,
    pub interleave: Interleave,
    pub data_type: DataType,
    pub big_endian: bool,
    pub header_offset: usize,
    /// Band centers in nanometers.
    pub wavelength: Option<Vec<f64>>,
    pub data_ignore_value: Option<f64>,
}

impl EnviHeader {
    pub fn new(samples: usize, lines: usize, bands: usize, data_type: DataType) -> Self {
        Self {
            samples,
            lines,
            bands,
            interleave: Interleave::Bsq,
            data_type,
            big_endian: false,
            header_offset: 0,
            wavelength: None,
            data_ignore_value: None,
        }
    }

    pub fn payload_len(&self) -> usize {
        self.samples * self.lines * self.bands * self.data_type.size()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let fields = parse_fields(text)?;
        let get = |key: &str| -> Result<&String> {
            fields
                .get(key)
                .ok_or_else(|| Error::parse(key, "required field missing"))
        };
        let count = |key: &str| -> Result<usize> {
            let raw = get(key)?;
            raw.trim()
                .parse::<usize>()
                .map_err(|_| Error::parse(key, format!("`{raw}` is not a count")))
        };

        let samples = count("samples")?;
        let lines = count("lines")?;
        let bands = count("bands")?;
        let interleave = Interleave::parse(get("interleave")?)?;
        let code = get("data type")?;
        let code = code
            .trim()
            .parse::<u32>()
            .map_err(|_| Error::parse("data type", format!("`{code}` is not an integer")))?;
        let data_type = DataType::from_code(code)?;
        let big_endian = match fields.get("byte order").map(|s| s.trim()) {
            None | Some("0") => false,
            Some("1") => true,
            Some(other) => {
                return Err(Error::parse("byte order", format!("`{other}` is not 0 or 1")))
            }
        };
        let header_offset = match fields.get("header offset") {
            Some(_) => count("header offset")?,
            None => 0,
        };

        let wavelength = match fields.get("wavelength") {
            Some(raw) => {
                let mut values = parse_list(raw)
                    .iter()
                    .map(|v| {
                        v.parse::<f64>()
                            .map_err(|_| Error::parse("wavelength", format!("`{v}` is not a number")))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                if values.len() != bands {
                    return Err(Error::parse(
                        "wavelength",
                        format!("{} values for {bands} bands", values.len()),
                    ));
                }
                let units = fields
                    .get("wavelength units")
                    .map(|u| u.trim().to_ascii_lowercase());
                let micrometers = matches!(
                    units.as_deref(),
                    Some("micrometers" | "microns" | "um" | "µm")
                );
                if micrometers {
                    values.iter_mut().for_each(|v| *v *= 1000.0);
                }
                Some(values)
            }
            None => None,
        };
        let data_ignore_value = match fields.get("data ignore value") {
            Some(raw) => Some(raw.trim().parse::<f64>().map_err(|_| {
                Error::parse("data ignore value", format!("`{raw}` is not a number"))
            })?),
            None => None,
        };

        Ok(Self {
            samples,
            lines,
            bands,
            interleave,
            data_type,
            big_endian,
            header_offset,
            wavelength,
            data_ignore_value,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("ENVI\n");
        let _ = writeln!(s, "samples = {}", self.samples);
        let _ = writeln!(s, "lines = {}", self.lines);
        let _ = writeln!(s, "bands = {}", self.bands);
        let _ = writeln!(s, "header offset = {}", self.header_offset);
        let _ = writeln!(s, "file type = ENVI Standard");
        let _ = writeln!(s, "data type = {}", self.data_type.code());
        let _ = writeln!(s, "interleave = {}", self.interleave.as_str());
        let _ = writeln!(s, "byte order = {}", u8::from(self.big_endian));
        if let Some(v) = self.data_ignore_value {
            let _ = writeln!(s, "data ignore value = {v}");
        }
        if let Some(wl) = &self.wavelength {
            let _ = writeln!(s, "wavelength units = Nanometers");
            let list: Vec<String> = wl.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(s, "wavelength = {{{}}}", list.join(", "));
        }
        s
    }
}

/// Splits a header into lowercase `key -> raw value`; brace values may span
/// lines. Unknown keys are kept but ignored by the caller.
fn parse_fields(text: &str) -> Result<HashMap<String, String>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(first) if first.trim().eq_ignore_ascii_case("envi") => {}
        _ => return Err(Error::parse("magic", "header must start with `ENVI`")),
    }
    let mut fields = HashMap::new();
    let mut pending: Option<(String, String)> = None;
    for line in lines {
        if let Some((key, mut value)) = pending.take() {
            value.push(' ');
            value.push_str(line.trim());
            if value.contains('}') {
                fields.insert(key, value);
            } else {
                pending = Some((key, value));
            }
            continue;
        }
        let line = line.trim();
        if line.is_empty() || line.starts_with(';') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim().to_string();
        if value.starts_with('{') && !value.contains('}') {
            pending = Some((key, value));
        } else {
            fields.insert(key, value);
        }
    }
    if let Some((key, _)) = pending {
        return Err(Error::parse(key, "unterminated `{` list"));
    }
    Ok(fields)
}

fn parse_list(raw: &str) -> Vec<String> {
    raw.trim()
        .trim_start_matches('{')
        .trim_end_matches('}')
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_header(path: impl AsRef<Path>) -> Result<EnviHeader> {
    EnviHeader::parse(&read_text(path.as_ref())?)
}

/// Reads any supported raster as `(lines, samples, bands)` values widened to `f64`.
pub fn read_raster(
    header_path: impl AsRef<Path>,
    data_path: impl AsRef<Path>,
) -> Result<(EnviHeader, Array3<f64>)> {
    let header = read_header(header_path)?;
    let bytes = read_bytes(data_path.as_ref())?;
    let needed = header.payload_len() + header.header_offset;
    if needed > bytes.len() {
        return Err(Error::parse(
            "bands",
            format!(
                "header declares {} x {} x {} elements ({needed} bytes with offset) but payload has {} bytes",
                header.lines,
                header.samples,
                header.bands,
                bytes.len()
            ),
        ));
    }
    let payload = &bytes[header.header_offset..];
    let dims = (header.lines, header.samples, header.bands);
    let size = header.data_type.size();
    let data = Array3::from_shape_fn(dims, |(l, s, b)| {
        let at = header.interleave.offset(l, s, b, dims) * size;
        header.data_type.decode(&payload[at..at + size], header.big_endian)
    });
    Ok((header, data))
}

/// Reads a reflectance cube. `wavelengths` overrides or supplies the grid
/// when the header carries none; absent both, bands are numbered `1..=bands`.
pub fn read_envi_with_grid(
    header_path: impl AsRef<Path>,
    data_path: impl AsRef<Path>,
    wavelengths: Option<WavelengthGrid>,
) -> Result<HsiCube> {
    let (header, data) = read_raster(header_path, data_path)?;
    let grid = match (wavelengths, header.wavelength) {
        (Some(g), _) => g,
        (None, Some(wl)) => WavelengthGrid::new(wl)
            .map_err(|e| Error::parse("wavelength", e.to_string()))?,
        (None, None) => WavelengthGrid::band_index(header.bands),
    };
    HsiCube::new(data, grid)
}

pub fn read_envi(header_path: impl AsRef<Path>, data_path: impl AsRef<Path>) -> Result<HsiCube> {
    read_envi_with_grid(header_path, data_path, None)
}

/// Reads a one-column-per-line wavelength sidecar (nm).
pub fn read_wavelength_sidecar(path: impl AsRef<Path>) -> Result<WavelengthGrid> {
    let path = path.as_ref();
    let values = read_text(path)?
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::parse("wavelength", format!("`{s}` in {}", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    WavelengthGrid::new(values)
}

fn single_band(header: &EnviHeader, what: &str) -> Result<()> {
    if header.bands != 1 {
        return Err(Error::parse(
            "bands",
            format!("{what} raster must have 1 band, found {}", header.bands),
        ));
    }
    Ok(())
}

/// 8-bit mask raster; nonzero keeps the pixel.
pub fn read_mask(header_path: impl AsRef<Path>, data_path: impl AsRef<Path>) -> Result<PixelMask> {
    let (header, data) = read_raster(header_path, data_path)?;
    single_band(&header, "mask")?;
    let keep = data.iter().map(|v| *v != 0.0).collect();
    PixelMask::from_vec(header.lines, header.samples, keep)
}

pub fn write_mask(
    mask: &PixelMask,
    header_path: impl AsRef<Path>,
    data_path: impl AsRef<Path>,
) -> Result<()> {
    let mut values = Vec::with_capacity(mask.rows() * mask.cols());
    for r in 0..mask.rows() {
        for c in 0..mask.cols() {
            values.push(if mask.keeps(r, c) { 1.0 } else { 0.0 });
        }
    }
    let data = Array3::from_shape_vec((mask.rows(), mask.cols(), 1), values).expect("mask shape");
    let header = EnviHeader::new(mask.cols(), mask.rows(), 1, DataType::U8);
    write_raster(&header, &data, header_path, data_path)
}

/// Ground-truth classes, `0` = unlabeled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRaster {
    pub rows: usize,
    pub cols: usize,
    pub labels: Vec<u16>,
    pub class_names: Option<Vec<String>>,
}

impl LabelRaster {
    pub fn new(rows: usize, cols: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != rows * cols {
            return Err(Error::shape("label raster length", rows * cols, labels.len()));
        }
        Ok(Self {
            rows,
            cols,
            labels,
            class_names: None,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.cols + col]
    }
}

pub fn read_labels(
    header_path: impl AsRef<Path>,
    data_path: impl AsRef<Path>,
) -> Result<LabelRaster> {
    let header_path = header_path.as_ref();
    let (header, data) = read_raster(header_path, data_path)?;
    single_band(&header, "label")?;
    let labels = data
        .iter()
        .map(|v| {
            if *v < 0.0 || *v > u16::MAX as f64 || v.fract() != 0.0 {
                Err(Error::parse("labels", format!("value {v} is not a class id")))
            } else {
                Ok(*v as u16)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut raster = LabelRaster::new(header.lines, header.samples, labels)?;
    let fields = parse_fields(&read_text(header_path)?)?;
    raster.class_names = fields.get("class names").map(|raw| parse_list(raw));
    Ok(raster)
}

pub fn write_labels(
    labels: &LabelRaster,
    header_path: impl AsRef<Path>,
    data_path: impl AsRef<Path>,
) -> Result<()> {
    let data = Array3::from_shape_vec(
        (labels.rows, labels.cols, 1),
        labels.labels.iter().map(|v| *v as f64).collect(),
    )
    .expect("label shape");
    let header = EnviHeader::new(labels.cols, labels.rows, 1, DataType::U16);
    let mut text = header.to_text();
    if let Some(names) = &labels.class_names {
        let _ = writeln!(text, "class names = {{{}}}", names.join(", "));
    }
    write_payload(&header, &data, data_path)?;
    fs::write(header_path.as_ref(), text).map_err(|e| Error::io(header_path.as_ref(), e))
}

pub fn write_envi(
    cube: &HsiCube,
    data_type: DataType,
    interleave: Interleave,
    header_path: impl AsRef<Path>,
    data_path: impl AsRef<Path>,
) -> Result<()> {
    let mut header = EnviHeader::new(cube.cols(), cube.rows(), cube.bands(), data_type);
    header.interleave = interleave;
    header.wavelength = Some(cube.grid().centers().to_vec());
    write_raster(&header, cube.data(), header_path, data_path)
}

/// Writes `(lines, samples, bands)` data using the header's interleave and
/// data type. Output is always little-endian with zero header offset.
pub fn write_raster(
    header: &EnviHeader,
    data: &Array3<f64>,
    header_path: impl AsRef<Path>,
    data_path: impl AsRef<Path>,
) -> Result<()> {
    let mut header = header.clone();
    header.big_endian = false;
    header.header_offset = 0;
    write_payload(&header, data, data_path)?;
    let header_path = header_path.as_ref();
    fs::write(header_path, header.to_text()).map_err(|e| Error::io(header_path, e))
}

fn write_payload(header: &EnviHeader, data: &Array3<f64>, data_path: impl AsRef<Path>) -> Result<()> {
    let dims = data.dim();
    if dims != (header.lines, header.samples, header.bands) {
        return Err(Error::shape(
            "raster dimensions",
            format!("{}x{}x{}", header.lines, header.samples, header.bands),
            format!("{}x{}x{}", dims.0, dims.1, dims.2),
        ));
    }
    let (lines, samples, bands) = dims;
    let mut out = Vec::with_capacity(header.payload_len());
    let mut emit = |l, s, b| header.data_type.encode(data[[l, s, b]], &mut out);
    match header.interleave {
        Interleave::Bsq => {
            for b in 0..bands {
                for l in 0..lines {
                    for s in 0..samples {
                        emit(l, s, b);
                    }
                }
            }
        }
        Interleave::Bil => {
            for l in 0..lines {
                for b in 0..bands {
                    for s in 0..samples {
                        emit(l, s, b);
                    }
                }
            }
        }
        Interleave::Bip => {
            for l in 0..lines {
                for s in 0..samples {
                    for b in 0..bands {
                        emit(l, s, b);
                    }
                }
            }
        }
    }
    let data_path = data_path.as_ref();
    fs::write(data_path, out).map_err(|e| Error::io(data_path, e))
}
