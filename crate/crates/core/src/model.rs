//! Domain types shared by every stage: points, images, the landmark schema,
//! annotations, per-side measurements and risk classes.
//!
//! Coordinates follow one convention throughout the crate: pixel centers sit
//! at integer coordinates, the origin is the top-left pixel, `x` is the
//! column and `y` grows downward.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::sync::{Arc, OnceLock};

use ndarray::Array2;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn offset(&self, dx: f64, dy: f64) -> Point2 {
        Point2::new(self.x + dx, self.y + dy)
    }
}

/// Serialized as `[x, y]` with six decimals, so files are byte-stable.
impl Serialize for Point2 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeTuple;
        let mut t = serializer.serialize_tuple(2)?;
        t.serialize_element(&crate::io::Fixed6(self.x))?;
        t.serialize_element(&crate::io::Fixed6(self.y))?;
        t.end()
    }
}

impl<'de> Deserialize<'de> for Point2 {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [x, y] = <[f64; 2]>::deserialize(deserializer)?;
        Ok(Point2::new(x, y))
    }
}

/// Landmarks keyed by name. Ordered so that serialization is stable.
pub type NamedPoints = BTreeMap<String, Point2>;

/// Physical pixel size in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 2]", from = "[f64; 2]")]
pub struct Spacing {
    pub x: f64,
    pub y: f64,
}

impl Spacing {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        let s = Spacing { x, y };
        s.validate()?;
        Ok(s)
    }

    pub fn isotropic(mm: f64) -> Result<Self> {
        Self::new(mm, mm)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x > 0.0 && self.y > 0.0 && self.x.is_finite() && self.y.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidSpacing {
                x: self.x,
                y: self.y,
            })
        }
    }
}

impl From<Spacing> for [f64; 2] {
    fn from(s: Spacing) -> Self {
        [s.x, s.y]
    }
}

impl From<[f64; 2]> for Spacing {
    fn from([x, y]: [f64; 2]) -> Self {
        Spacing { x, y }
    }
}

/// A single coronal slice, intensities in `[0, 1]`, rows = height.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceImage {
    pixels: Array2<f32>,
    spacing: Spacing,
    patient_id: String,
    scan_id: String,
}

impl SliceImage {
    pub fn new(
        pixels: Array2<f32>,
        spacing: Spacing,
        patient_id: impl Into<String>,
        scan_id: impl Into<String>,
    ) -> Result<Self> {
        let (height, width) = pixels.dim();
        if height == 0 || width == 0 {
            return Err(Error::EmptyImage);
        }
        if height > width {
            return Err(Error::NotLandscape { height, width });
        }
        spacing.validate()?;
        for ((y, x), &value) in pixels.indexed_iter() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::IntensityOutOfRange { x, y, value });
            }
        }
        Ok(Self {
            pixels,
            spacing,
            patient_id: patient_id.into(),
            scan_id: scan_id.into(),
        })
    }

    pub fn pixels(&self) -> &Array2<f32> {
        &self.pixels
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn scan_id(&self) -> &str {
        &self.scan_id
    }

    /// Same metadata, new pixel grid. Used by augmentations.
    pub(crate) fn with_pixels(&self, pixels: Array2<f32>) -> Result<Self> {
        SliceImage::new(
            pixels,
            self.spacing,
            self.patient_id.clone(),
            self.scan_id.clone(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];

    pub fn as_str(&self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }

    pub fn opposite(&self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    /// Direction away from the midline in image x. Left is the smaller-x half.
    pub fn outward(&self) -> f64 {
        match self {
            Side::Left => -1.0,
            Side::Right => 1.0,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SideTag {
    Left,
    Right,
    Midline,
}

/// The per-side landmarks every scoring rule draws on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LandmarkKind {
    /// Fovea ethmoidalis, superior end of the lateral lamella.
    FoveaEthmoidalis,
    /// Cribriform plate, inferior end of the lateral lamella.
    CribriformPlate,
    /// Highest point of the ethmoid roof.
    EthmoidRoof,
    /// Orbital floor reference.
    OrbitalFloor,
}

impl LandmarkKind {
    pub const ALL: [LandmarkKind; 4] = [
        LandmarkKind::FoveaEthmoidalis,
        LandmarkKind::CribriformPlate,
        LandmarkKind::EthmoidRoof,
        LandmarkKind::OrbitalFloor,
    ];

    pub fn prefix(&self) -> &'static str {
        match self {
            LandmarkKind::FoveaEthmoidalis => "FE",
            LandmarkKind::CribriformPlate => "CP",
            LandmarkKind::EthmoidRoof => "ER",
            LandmarkKind::OrbitalFloor => "OF",
        }
    }

    pub fn name(&self, side: Side) -> String {
        format!("{}_{}", self.prefix(), side.as_str())
    }
}

/// Crista galli apex.
pub const CRISTA_GALLI: &str = "CG";
/// Septum / cribriform plate junction.
pub const SEPTUM: &str = "SEPT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkDef {
    pub name: String,
    pub side: SideTag,
    pub mirror: String,
}

/// Ordered set of landmark names with a left/right mirror pairing.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSchema {
    defs: Vec<LandmarkDef>,
    index: HashMap<String, usize>,
}

impl LandmarkSchema {
    pub const SIZE: usize = 10;

    pub fn new(defs: Vec<LandmarkDef>) -> Result<Self> {
        if defs.len() != Self::SIZE {
            return Err(Error::InvalidSchema(format!(
                "expected {} landmarks, got {}",
                Self::SIZE,
                defs.len()
            )));
        }
        let mut index = HashMap::with_capacity(defs.len());
        for (i, d) in defs.iter().enumerate() {
            if index.insert(d.name.clone(), i).is_some() {
                return Err(Error::InvalidSchema(format!("duplicate name {}", d.name)));
            }
        }
        for d in &defs {
            let Some(&j) = index.get(&d.mirror) else {
                return Err(Error::InvalidSchema(format!(
                    "{} mirrors unknown landmark {}",
                    d.name, d.mirror
                )));
            };
            let partner = &defs[j];
            if partner.mirror != d.name {
                return Err(Error::InvalidSchema(format!(
                    "mirror pairing of {} is not an involution",
                    d.name
                )));
            }
            let consistent = match d.side {
                SideTag::Midline => partner.name == d.name,
                SideTag::Left => partner.side == SideTag::Right,
                SideTag::Right => partner.side == SideTag::Left,
            };
            if !consistent {
                return Err(Error::InvalidSchema(format!(
                    "{} ({:?}) cannot mirror {} ({:?})",
                    d.name, d.side, partner.name, partner.side
                )));
            }
        }
        Ok(Self { defs, index })
    }

    pub fn len(&self) -> usize {
        self.defs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }

    pub fn defs(&self) -> &[LandmarkDef] {
        &self.defs
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.defs.iter().map(|d| d.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn mirror(&self, name: &str) -> Option<&str> {
        self.index_of(name).map(|i| self.defs[i].mirror.as_str())
    }
}

fn build_default_schema() -> LandmarkSchema {
    let mut defs = Vec::with_capacity(LandmarkSchema::SIZE);
    for side in Side::BOTH {
        let tag = match side {
            Side::Left => SideTag::Left,
            Side::Right => SideTag::Right,
        };
        for kind in LandmarkKind::ALL {
            defs.push(LandmarkDef {
                name: kind.name(side),
                side: tag,
                mirror: kind.name(side.opposite()),
            });
        }
    }
    for name in [CRISTA_GALLI, SEPTUM] {
        defs.push(LandmarkDef {
            name: name.to_string(),
            side: SideTag::Midline,
            mirror: name.to_string(),
        });
    }
    LandmarkSchema::new(defs).expect("default schema is well-formed")
}

/// FE/CP/ER/OF on each side, then the midline CG and SEPT.
pub fn default_schema() -> Arc<LandmarkSchema> {
    static SCHEMA: OnceLock<Arc<LandmarkSchema>> = OnceLock::new();
    SCHEMA
        .get_or_init(|| Arc::new(build_default_schema()))
        .clone()
}

/// A complete, in-bounds set of landmarks for one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    schema: Arc<LandmarkSchema>,
    points: Vec<Point2>,
}

impl AnnotationSet {
    /// Validates name coverage against `schema` and `0 <= x < width`,
    /// `0 <= y < height` for every point.
    pub fn new(
        schema: Arc<LandmarkSchema>,
        landmarks: &NamedPoints,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if let Some(extra) = landmarks.keys().find(|k| !schema.contains(k)) {
            return Err(Error::UnknownLandmark(extra.clone()));
        }
        let mut points = Vec::with_capacity(schema.len());
        for name in schema.names() {
            let p = *landmarks
                .get(name)
                .ok_or_else(|| Error::MissingLandmark(name.to_string()))?;
            if !p.is_finite() {
                return Err(Error::NonFinitePoint(name.to_string()));
            }
            if !(p.x >= 0.0 && p.x < width as f64 && p.y >= 0.0 && p.y < height as f64) {
                return Err(Error::LandmarkOutOfBounds {
                    name: name.to_string(),
                    x: p.x,
                    y: p.y,
                    width,
                    height,
                });
            }
            points.push(p);
        }
        Ok(Self { schema, points })
    }

    pub fn schema(&self) -> &Arc<LandmarkSchema> {
        &self.schema
    }

    pub fn get(&self, name: &str) -> Option<Point2> {
        self.schema.index_of(name).map(|i| self.points[i])
    }

    pub fn require(&self, name: &str) -> Result<Point2> {
        self.get(name)
            .ok_or_else(|| Error::MissingLandmark(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Point2)> {
        self.schema.names().zip(self.points.iter().copied())
    }

    pub fn to_named(&self) -> NamedPoints {
        self.iter().map(|(n, p)| (n.to_string(), p)).collect()
    }
}

/// Lookup of landmarks by name, implemented by both validated annotations
/// and loose predicted point maps.
pub trait LandmarkSource {
    fn landmark(&self, name: &str) -> Option<Point2>;

    fn require_landmark(&self, name: &str) -> Result<Point2> {
        self.landmark(name)
            .ok_or_else(|| Error::MissingLandmark(name.to_string()))
    }
}

impl LandmarkSource for AnnotationSet {
    fn landmark(&self, name: &str) -> Option<Point2> {
        self.get(name)
    }
}

impl LandmarkSource for NamedPoints {
    fn landmark(&self, name: &str) -> Option<Point2> {
        self.get(name).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideMeasurements {
    pub keros_depth_mm: f64,
    pub gera_angle_deg: f64,
    /// Orbital floor to cribriform plate.
    pub tms1_mm: f64,
    /// Orbital floor to ethmoid roof.
    pub tms2_mm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    I,
    II,
    III,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [ClassLabel::I, ClassLabel::II, ClassLabel::III];

    pub fn index(&self) -> usize {
        match self {
            ClassLabel::I => 0,
            ClassLabel::II => 1,
            ClassLabel::III => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ClassLabel::I => "I",
            ClassLabel::II => "II",
            ClassLabel::III => "III",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskClasses {
    pub keros: ClassLabel,
    pub gera: ClassLabel,
    pub tms: ClassLabel,
}

/// Names of the landmarks needed to score one side.
pub fn side_landmark_names(side: Side) -> [String; 4] {
    LandmarkKind::ALL.map(|k| k.name(side))
}

pub(crate) fn unique_names<'a>(names: impl IntoIterator<Item = &'a str>) -> bool {
    let mut seen = HashSet::new();
    names.into_iter().all(|n| seen.insert(n))
}
