//! File formats: the HMAP heatmap container, annotation / manifest / report
//! JSON, grayscale image ingest and overlay rendering.
//!
//! HMAP layout (all integers little-endian):
//!
//! ```text
//! "HMAP" | u32 version = 1 | u32 channels | u32 height | u32 width
//! channels * height * width f32 (channel-major, row-major within a channel)
//! per channel: u16 name length | UTF-8 name
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat, ImageReader, Rgb, RgbImage};
use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::heatmap::{Heatmap, HeatmapStack};
use crate::model::{
    AnnotationSet, LandmarkKind, LandmarkSchema, NamedPoints, Point2, Side, SliceImage, Spacing,
};
use crate::report::SliceReport;

pub const HMAP_MAGIC: [u8; 4] = *b"HMAP";
pub const HMAP_VERSION: u32 = 1;
const HMAP_HEADER_LEN: usize = 20;

pub const ANNOTATION_SCHEMA_VERSION: u32 = 1;

/// Serializes a float with exactly six decimals.
#[derive(Debug, Clone, Copy)]
pub struct Fixed6(pub f64);

impl Serialize for Fixed6 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::Error as _;
        if !self.0.is_finite() {
            return Err(S::Error::custom(format!("non-finite coordinate {}", self.0)));
        }
        // avoid "-0.000000"
        let v = if self.0 == 0.0 { 0.0 } else { self.0 };
        let text = format!("{v:.6}");
        let text = if text == "-0.000000" { "0.000000".to_string() } else { text };
        let raw = serde_json::value::RawValue::from_string(text).map_err(S::Error::custom)?;
        raw.serialize(serializer)
    }
}

// ---------------------------------------------------------------- HMAP

pub fn encode_hmap(maps: &[Heatmap], names: &[String]) -> Result<Vec<u8>> {
    if maps.len() != names.len() {
        return Err(Error::FormatMismatch(format!(
            "{} channels but {} names",
            maps.len(),
            names.len()
        )));
    }
    if !crate::model::unique_names(names.iter().map(String::as_str)) {
        return Err(Error::FormatMismatch("channel names must be unique".into()));
    }
    let (height, width) = maps
        .first()
        .map(|m| (m.height(), m.width()))
        .unwrap_or((0, 0));
    if maps.iter().any(|m| m.height() != height || m.width() != width) {
        return Err(Error::FormatMismatch("channels differ in size".into()));
    }
    let mut out = Vec::with_capacity(HMAP_HEADER_LEN + maps.len() * height * width * 4);
    out.extend_from_slice(&HMAP_MAGIC);
    for v in [HMAP_VERSION, maps.len() as u32, height as u32, width as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for m in maps {
        for &v in m.values().iter() {
            let f = v as f32;
            if !f.is_finite() {
                return Err(Error::FormatMismatch(format!("value {v} does not fit f32")));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    for name in names {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::FormatMismatch(format!("channel name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

pub fn decode_hmap(bytes: &[u8]) -> Result<HeatmapStack> {
    if bytes.len() < HMAP_HEADER_LEN {
        return Err(Error::CorruptFile(format!("{} byte header", bytes.len())));
    }
    if bytes[..4] != HMAP_MAGIC {
        return Err(Error::CorruptFile("bad magic".into()));
    }
    let version = u32_at(bytes, 4);
    if version != HMAP_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let channels = u32_at(bytes, 8) as usize;
    let height = u32_at(bytes, 12) as usize;
    let width = u32_at(bytes, 16) as usize;
    let payload = channels
        .checked_mul(height)
        .and_then(|n| n.checked_mul(width))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::CorruptFile("header sizes overflow".into()))?;
    let mut at = HMAP_HEADER_LEN;
    if bytes.len() < at + payload {
        return Err(Error::CorruptFile(format!(
            "payload truncated: {} of {payload} bytes",
            bytes.len() - at
        )));
    }
    let mut maps = Vec::with_capacity(channels);
    for _ in 0..channels {
        let n = height * width;
        let values: Vec<f64> = bytes[at..at + n * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        at += n * 4;
        let arr = Array2::from_shape_vec((height, width), values)
            .map_err(|e| Error::CorruptFile(e.to_string()))?;
        maps.push(Heatmap::from_array(arr).map_err(|_| Error::CorruptFile("non-finite value".into()))?);
    }
    let mut stack = HeatmapStack::empty(height, width);
    for map in maps {
        if bytes.len() < at + 2 {
            return Err(Error::CorruptFile("name table truncated".into()));
        }
        let len = u16::from_le_bytes([bytes[at], bytes[at + 1]]) as usize;
        at += 2;
        if bytes.len() < at + len {
            return Err(Error::CorruptFile("name table truncated".into()));
        }
        let name = std::str::from_utf8(&bytes[at..at + len])
            .map_err(|_| Error::CorruptFile("channel name is not UTF-8".into()))?
            .to_string();
        at += len;
        stack
            .push(name, map)
            .map_err(|e| Error::CorruptFile(e.to_string()))?;
    }
    if at != bytes.len() {
        return Err(Error::CorruptFile(format!(
            "{} trailing bytes",
            bytes.len() - at
        )));
    }
    Ok(stack)
}

/// Writes an explicit channel list; fails when names and maps disagree.
pub fn write_hmap_channels(maps: &[Heatmap], names: &[String], path: &Path) -> Result<()> {
    let bytes = encode_hmap(maps, names)?;
    write_bytes(path, &bytes)
}

pub fn write_hmap(stack: &HeatmapStack, path: &Path) -> Result<()> {
    write_hmap_channels(stack.maps(), stack.names(), path)
}

pub fn read_hmap(path: &Path) -> Result<HeatmapStack> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_hmap(&bytes).map_err(|e| match e {
        Error::CorruptFile(msg) => Error::CorruptFile(format!("{}: {msg}", path.display())),
        other => other,
    })
}

// ---------------------------------------------------------------- JSON

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| Error::Internal(format!("serialization failed: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_bytes(path, &to_json_bytes(value)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub schema_version: u32,
    pub sample_id: String,
    pub patient_id: String,
    /// Image path relative to the annotation file's directory.
    pub image: String,
    pub spacing: Spacing,
    pub landmarks: NamedPoints,
}

impl AnnotationFile {
    pub fn validate(&self, schema: &LandmarkSchema) -> Result<()> {
        if self.schema_version != ANNOTATION_SCHEMA_VERSION {
            return Err(Error::UnsupportedVersion(self.schema_version));
        }
        self.spacing.validate()?;
        if let Some(extra) = self.landmarks.keys().find(|k| !schema.contains(k)) {
            return Err(Error::UnknownLandmark(extra.clone()));
        }
        for name in schema.names() {
            let p = self
                .landmarks
                .get(name)
                .ok_or_else(|| Error::MissingLandmark(name.to_string()))?;
            if !p.is_finite() {
                return Err(Error::NonFinitePoint(name.to_string()));
            }
        }
        Ok(())
    }

    pub fn to_annotation_set(
        &self,
        schema: std::sync::Arc<LandmarkSchema>,
        width: usize,
        height: usize,
    ) -> Result<AnnotationSet> {
        self.validate(&schema)?;
        AnnotationSet::new(schema, &self.landmarks, width, height)
    }
}

pub fn write_annotation_file(path: &Path, file: &AnnotationFile) -> Result<()> {
    write_json(path, file)
}

pub fn read_annotation_file(path: &Path, schema: &LandmarkSchema) -> Result<AnnotationFile> {
    let file: AnnotationFile = read_json(path)?;
    file.validate(schema)?;
    Ok(file)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub patient_id: String,
    /// Relative to the manifest's directory.
    pub image: String,
    /// Relative to the manifest's directory.
    pub annotations: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub base_dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let entries: Vec<ManifestEntry> = read_json(path)?;
        let base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Self { base_dir, entries })
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.base_dir.join(relative)
    }
}

pub fn write_report(path: &Path, report: &SliceReport) -> Result<()> {
    write_json(path, report)
}

pub fn read_report(path: &Path) -> Result<SliceReport> {
    read_json(path)
}

// ---------------------------------------------------------------- images

/// 8- or 16-bit single-channel PNG / PGM, scaled into `[0, 1]`.
pub fn load_pixels(path: &Path) -> Result<Array2<f32>> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: {other:?}",
                path.display()
            )))
        }
    }
    let img = reader.decode().map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values: Vec<f32> = match img {
        DynamicImage::ImageLuma8(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| v as f32 / u8::MAX as f32)
            .collect(),
        DynamicImage::ImageLuma16(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| v as f32 / u16::MAX as f32)
            .collect(),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: {:?} is not single-channel",
                path.display(),
                other.color()
            )))
        }
    };
    Array2::from_shape_vec((h, w), values).map_err(|e| Error::Internal(e.to_string()))
}

pub fn load_image(
    path: &Path,
    spacing: Spacing,
    patient_id: &str,
    scan_id: &str,
) -> Result<SliceImage> {
    SliceImage::new(load_pixels(path)?, spacing, patient_id, scan_id)
}

pub fn save_gray8(pixels: &Array2<f32>, path: &Path) -> Result<()> {
    let (h, w) = pixels.dim();
    let raw: Vec<u8> = pixels
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::GrayImage::from_raw(w as u32, h as u32, raw)
        .ok_or_else(|| Error::Internal("gray buffer size".into()))?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })
}

// ---------------------------------------------------------------- overlay

const RED: Rgb<u8> = Rgb([230, 40, 40]);
const GREEN: Rgb<u8> = Rgb([40, 210, 60]);
const YELLOW: Rgb<u8> = Rgb([240, 220, 40]);
const CYAN: Rgb<u8> = Rgb([40, 200, 230]);
const WHITE: Rgb<u8> = Rgb([255, 255, 255]);

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn line(img: &mut RgbImage, a: Point2, b: Point2, c: Rgb<u8>) {
    let steps = (b.x - a.x).abs().max((b.y - a.y).abs()).ceil().max(1.0) as i64;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = a.x + (b.x - a.x) * t;
        let y = a.y + (b.y - a.y) * t;
        put(img, x.round() as i64, y.round() as i64, c);
    }
}

fn dot(img: &mut RgbImage, p: Point2, c: Rgb<u8>) {
    let (cx, cy) = (p.x.round() as i64, p.y.round() as i64);
    for dy in -2..=2i64 {
        for dx in -2..=2i64 {
            if dx * dx + dy * dy <= 5 {
                put(img, cx + dx, cy + dy, c);
            }
        }
    }
}

/// 3x5 glyphs, one row per entry, most significant bit on the left.
fn glyph(ch: char) -> [u8; 5] {
    match ch {
        'K' => [0b101, 0b101, 0b110, 0b101, 0b101],
        'G' => [0b011, 0b100, 0b101, 0b101, 0b011],
        'T' => [0b111, 0b010, 0b010, 0b010, 0b010],
        'I' => [0b111, 0b010, 0b010, 0b010, 0b111],
        ':' => [0b000, 0b010, 0b000, 0b010, 0b000],
        '-' => [0b000, 0b000, 0b111, 0b000, 0b000],
        _ => [0; 5],
    }
}

fn text(img: &mut RgbImage, x: i64, y: i64, s: &str, c: Rgb<u8>) {
    const SCALE: i64 = 2;
    for (i, ch) in s.chars().enumerate() {
        let ox = x + i as i64 * 4 * SCALE;
        for (row, bits) in glyph(ch).iter().enumerate() {
            for col in 0..3 {
                if bits & (0b100 >> col) != 0 {
                    for sy in 0..SCALE {
                        for sx in 0..SCALE {
                            put(img, ox + col * SCALE + sx, y + row as i64 * SCALE + sy, c);
                        }
                    }
                }
            }
        }
    }
}

fn text_width(s: &str) -> i64 {
    s.chars().count() as i64 * 8
}

/// Draws landmarks and the three measurement constructions on the slice.
pub fn overlay_image(pixels: &Array2<f32>, report: &SliceReport) -> Result<RgbImage> {
    if report.landmarks_px.is_empty() {
        return Err(Error::MissingLandmark("report has no landmarks".into()));
    }
    let (h, w) = pixels.dim();
    let mut img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let v = (pixels[[y as usize, x as usize]].clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([v, v, v])
    });
    let lm = &report.landmarks_px;
    for side in Side::BOTH {
        let get = |k: LandmarkKind| lm.get(&k.name(side)).copied();
        let (fe, cp, er, of) = (
            get(LandmarkKind::FoveaEthmoidalis),
            get(LandmarkKind::CribriformPlate),
            get(LandmarkKind::EthmoidRoof),
            get(LandmarkKind::OrbitalFloor),
        );
        if let (Some(fe), Some(cp)) = (fe, cp) {
            line(&mut img, fe, Point2::new(fe.x, cp.y), GREEN);
            line(&mut img, cp, fe, YELLOW);
            let reach = (fe.x - cp.x).abs().max(6.0) + 6.0;
            line(&mut img, cp, cp.offset(side.outward() * reach, 0.0), YELLOW);
        }
        if let Some(of) = of {
            let toward = [cp, er].into_iter().flatten().map(|p| p.x);
            let (lo, hi) = toward.fold((of.x, of.x), |(lo, hi), x| (lo.min(x), hi.max(x)));
            line(&mut img, Point2::new(lo, of.y), Point2::new(hi, of.y), CYAN);
        }
        let label = match report.sides.get(side).classes {
            Some(c) => format!("K:{} G:{} T:{}", c.keros, c.gera, c.tms),
            None => "K:- G:- T:-".to_string(),
        };
        let x = match side {
            Side::Left => 4,
            Side::Right => w as i64 - 4 - text_width(&label),
        };
        text(&mut img, x, 4, &label, WHITE);
    }
    for p in lm.values() {
        dot(&mut img, *p, RED);
    }
    Ok(img)
}

pub fn render_overlay(slice: &SliceImage, report: &SliceReport, path: &Path) -> Result<()> {
    let img = overlay_image(slice.pixels(), report)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })
}
