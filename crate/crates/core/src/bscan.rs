//! B-scan images, scan volumes and the on-disk formats that carry them.
//!
//! Images are binary greyscale PGM (`P5`), 8 or 16 bit. A dataset is a
//! line-oriented manifest, one scan volume per line:
//!
//! ```text
//! # scan_id <TAB> label <TAB> split <TAB> comma-separated B-scan paths
//! bona-000	bonafide	model	bona-000/000.pgm,bona-000/001.pgm
//! ```
//!
//! Relative paths are resolved against the manifest's directory. Volumes used
//! for training (`model`) or calibration (`score`) must be bonafide.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// One greyscale cross-section image, intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BScan {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
    pub scan_id: String,
    /// Position within the owning volume.
    pub index: usize,
}

impl BScan {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Argument(format!(
                "B-scan dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::Argument(format!(
                "pixel count {} does not match {width}x{height}",
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Argument(format!(
                "intensity {p} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
            scan_id: String::new(),
            index: 0,
        })
    }

    /// Constant image, mostly for tests.
    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn with_id(mut self, scan_id: impl Into<String>, index: usize) -> Self {
        self.scan_id = scan_id.into();
        self.index = index;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.pixels[row * self.width..(row + 1) * self.width]
    }

    pub fn same_dims(&self, other: &BScan) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Ground truth for a scan volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Bonafide,
    PresentationAttack,
    Unknown,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Bonafide => "bonafide",
            Label::PresentationAttack => "pa",
            Label::Unknown => "unknown",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bonafide" | "bona" => Ok(Label::Bonafide),
            "pa" | "pai" | "attack" => Ok(Label::PresentationAttack),
            "unknown" => Ok(Label::Unknown),
            other => Err(Error::Manifest(format!("unknown label {other:?}"))),
        }
    }
}

/// All B-scans captured in one scan of a fingertip or attack instrument.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanVolume {
    pub scan_id: String,
    pub label: Label,
    bscans: Vec<BScan>,
}

impl ScanVolume {
    /// Builds a volume, re-stamping every member with the volume id and its
    /// position so indices are always `0..n`.
    pub fn new(scan_id: impl Into<String>, label: Label, bscans: Vec<BScan>) -> Result<Self> {
        let scan_id = scan_id.into();
        let first = bscans.first().ok_or_else(|| {
            Error::Argument(format!("scan volume {scan_id:?} has no B-scans"))
        })?;
        let (w, h) = (first.width(), first.height());
        if let Some(b) = bscans.iter().find(|b| b.width() != w || b.height() != h) {
            return Err(Error::Argument(format!(
                "scan volume {scan_id:?} mixes dimensions {w}x{h} and {}x{}",
                b.width(),
                b.height()
            )));
        }
        let bscans = bscans
            .into_iter()
            .enumerate()
            .map(|(i, b)| b.with_id(scan_id.clone(), i))
            .collect();
        Ok(Self {
            scan_id,
            label,
            bscans,
        })
    }

    pub fn bscans(&self) -> &[BScan] {
        &self.bscans
    }

    pub fn len(&self) -> usize {
        self.bscans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bscans.is_empty()
    }

    /// `(height, width)` shared by every member.
    pub fn dims(&self) -> (usize, usize) {
        (self.bscans[0].height(), self.bscans[0].width())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Model,
    Score,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Model => "model",
            Split::Score => "score",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "model" => Ok(Split::Model),
            "score" => Ok(Split::Score),
            "test" => Ok(Split::Test),
            other => Err(Error::Manifest(format!("unknown split tag {other:?}"))),
        }
    }
}

/// Zero-PA partition: bonafide-only model and score sets, disjoint from each
/// other and from the test set.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetSplit {
    pub model_set: Vec<String>,
    pub score_set: Vec<String>,
    pub test_set: Vec<String>,
}

impl DatasetSplit {
    /// Checks disjointness and that every model/score id names a bonafide
    /// volume in `volumes`.
    pub fn validate(&self, volumes: &[ScanVolume]) -> Result<()> {
        let by_id: BTreeMap<&str, &ScanVolume> =
            volumes.iter().map(|v| (v.scan_id.as_str(), v)).collect();
        let mut seen = BTreeSet::new();
        for (split, ids) in [
            (Split::Model, &self.model_set),
            (Split::Score, &self.score_set),
            (Split::Test, &self.test_set),
        ] {
            for id in ids {
                if !seen.insert(id.as_str()) {
                    return Err(Error::Manifest(format!(
                        "scan {id:?} appears in more than one split"
                    )));
                }
                let vol = by_id
                    .get(id.as_str())
                    .ok_or_else(|| Error::Manifest(format!("split names unknown scan {id:?}")))?;
                if split != Split::Test && vol.label != Label::Bonafide {
                    return Err(Error::ZeroPaViolation(format!(
                        "scan {id:?} labelled {} is tagged {split}",
                        vol.label
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Model => &self.model_set,
            Split::Score => &self.score_set,
            Split::Test => &self.test_set,
        }
    }

    /// Volumes of one split, in split order.
    pub fn select<'a>(&self, split: Split, volumes: &'a [ScanVolume]) -> Vec<&'a ScanVolume> {
        self.ids(split)
            .iter()
            .filter_map(|id| volumes.iter().find(|v| &v.scan_id == id))
            .collect()
    }
}

/// One manifest line before any image is read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub scan_id: String,
    pub label: Label,
    pub split: Split,
    pub paths: Vec<PathBuf>,
}

fn parse_pgm_header(bytes: &[u8]) -> Result<(usize, usize, u32, usize)> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(Error::Format(format!(
            "expected binary PGM magic \"P5\", found {magic:?}"
        )));
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::Format("PGM header ends early".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format(format!(
                "expected a number in PGM header at byte {start}"
            )));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("PGM header number out of range".into()))?;
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Format("missing whitespace after PGM maxval".into())),
    }
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 {
        return Err(Error::Format(format!("PGM dimensions {w}x{h} are empty")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("PGM maxval {maxval} not in 1..=65535")));
    }
    Ok((w as usize, h as usize, maxval as u32, pos))
}

/// Decodes an in-memory `P5` image.
pub fn decode_pgm(bytes: &[u8]) -> Result<BScan> {
    let (width, height, maxval, offset) = parse_pgm_header(bytes)?;
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::Format("PGM dimensions overflow".into()))?;
    let sample_bytes = if maxval > 255 { 2 } else { 1 };
    let payload = &bytes[offset..];
    if payload.len() < n * sample_bytes {
        return Err(Error::Corrupt(format!(
            "PGM payload has {} bytes, expected {}",
            payload.len(),
            n * sample_bytes
        )));
    }
    let scale = f64::from(maxval);
    let pixels = if sample_bytes == 1 {
        payload[..n].iter().map(|&b| f64::from(b) / scale).collect::<Vec<_>>()
    } else {
        payload[..2 * n]
            .chunks_exact(2)
            .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])) / scale)
            .collect()
    };
    if pixels.iter().any(|&p| p > 1.0) {
        return Err(Error::Corrupt(format!("sample exceeds maxval {maxval}")));
    }
    BScan::new(width, height, pixels)
}

pub fn load_bscan(path: impl AsRef<Path>) -> Result<BScan> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Corrupt(m) => Error::Corrupt(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Encodes as `P5` with maxval `2^bit_depth - 1`, rounding to nearest.
pub fn encode_pgm(b: &BScan, bit_depth: u8) -> Result<Vec<u8>> {
    let maxval: u32 = match bit_depth {
        8 => 255,
        16 => 65535,
        other => {
            return Err(Error::Argument(format!(
                "bit depth must be 8 or 16, got {other}"
            )))
        }
    };
    let mut out = format!("P5\n{} {}\n{}\n", b.width(), b.height(), maxval).into_bytes();
    let scale = f64::from(maxval);
    for &p in b.pixels() {
        let q = (p * scale).round().clamp(0.0, scale) as u32;
        if bit_depth == 8 {
            out.push(q as u8);
        } else {
            out.extend_from_slice(&(q as u16).to_be_bytes());
        }
    }
    Ok(out)
}

pub fn save_bscan(b: &BScan, path: impl AsRef<Path>, bit_depth: u8) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pgm(b, bit_depth)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parses manifest text. Relative paths are joined onto `base_dir`.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    let mut ids = BTreeSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Manifest(format!(
                "line {}: expected 4 tab-separated fields, found {}",
                lineno + 1,
                fields.len()
            )));
        }
        let scan_id = fields[0].trim().to_string();
        if scan_id.is_empty() {
            return Err(Error::Manifest(format!("line {}: empty scan id", lineno + 1)));
        }
        if !ids.insert(scan_id.clone()) {
            return Err(Error::Manifest(format!("duplicate scan id {scan_id:?}")));
        }
        let label: Label = fields[1].parse()?;
        let split: Split = fields[2].parse()?;
        if split != Split::Test && label != Label::Bonafide {
            return Err(Error::ZeroPaViolation(format!(
                "scan {scan_id:?} labelled {label} is tagged {split}"
            )));
        }
        let paths: Vec<PathBuf> = fields[3]
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| base_dir.join(p))
            .collect();
        if paths.is_empty() {
            return Err(Error::Manifest(format!("scan {scan_id:?} lists no B-scans")));
        }
        entries.push(ManifestEntry {
            scan_id,
            label,
            split,
            paths,
        });
    }
    Ok(entries)
}

/// Loads every volume named by a manifest. Volumes and split lists come back
/// sorted by scan id, so row order in the file does not matter.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<(Vec<ScanVolume>, DatasetSplit)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = parse_manifest(&text, base)?;
    entries.sort_by(|a, b| a.scan_id.cmp(&b.scan_id));

    let mut volumes = Vec::with_capacity(entries.len());
    let mut split = DatasetSplit::default();
    for e in entries {
        let bscans = e
            .paths
            .iter()
            .map(load_bscan)
            .collect::<Result<Vec<_>>>()?;
        let vol = ScanVolume::new(e.scan_id.clone(), e.label, bscans)?;
        match e.split {
            Split::Model => split.model_set.push(e.scan_id),
            Split::Score => split.score_set.push(e.scan_id),
            Split::Test => split.test_set.push(e.scan_id),
        }
        volumes.push(vol);
    }
    split.validate(&volumes)?;
    Ok((volumes, split))
}

/// Writes manifest lines. Paths are written as given.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    writeln!(out, "# scan_id\tlabel\tsplit\tpaths").expect("write to Vec");
    for e in entries {
        let paths: Vec<String> = e
            .paths
            .iter()
            .map(|p| p.to_string_lossy().into_owned())
            .collect();
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            e.scan_id,
            e.label,
            e.split,
            paths.join(",")
        )
        .expect("write to Vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
