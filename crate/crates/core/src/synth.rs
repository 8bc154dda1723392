//! Synthetic coronal skull-base phantoms with exact landmark ground truth.
//!
//! The generative variables are the clinical measurements themselves: for
//! every side a class is drawn per score, then a value inside that class's
//! interval, and the landmarks are placed so that measuring them returns the
//! drawn values. The image is a dark noisy background with bright
//! anti-aliased bone curves through the landmarks.

use std::path::Path;

use ndarray::Array2;
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::square_crop_rect;
use crate::io::{save_gray8, write_annotation_file, write_json, AnnotationFile, ManifestEntry};
use crate::measure::classify;
use crate::model::{
    default_schema, AnnotationSet, ClassLabel, LandmarkKind, NamedPoints, Point2, RiskClasses,
    Side, SideMeasurements, SliceImage, Spacing, CRISTA_GALLI, SEPTUM,
};
use crate::rng::{derive_seed, derived_rng};

/// Minimum distance of every landmark from the image border.
pub const BORDER_MARGIN: f64 = 60.0;
/// Every FE/CP/ER landmark lies within this Chebyshev distance of the
/// Keros/Gera reference point.
pub const KG_RADIUS: f64 = 24.0;
/// Landmarks stay this far inside the square global crop.
const CROP_MARGIN: f64 = 8.0;

const KEROS_I: (f64, f64) = (1.0, 4.0);
const KEROS_II: (f64, f64) = (4.0, 8.0);
const KEROS_III: (f64, f64) = (8.0, 12.0);
const GERA_I: (f64, f64) = (80.0, 90.0);
const GERA_II: (f64, f64) = (45.0, 80.0);
const GERA_III: (f64, f64) = (15.0, 45.0);
const TMS_LOW: (f64, f64) = (5.0, 10.0);
const TMS_HIGH: (f64, f64) = (10.0, 16.0);

const MAX_SIDE_ATTEMPTS: usize = 200_000;
const MAX_JOINT_ATTEMPTS: usize = 10_000;

/// Probabilities of classes I, II, III per score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMix {
    pub keros: [f64; 3],
    pub gera: [f64; 3],
    pub tms: [f64; 3],
}

impl Default for ClassMix {
    /// Clinical frequencies over 1382 scored sides.
    fn default() -> Self {
        let n = 1382.0;
        Self {
            keros: [269.0 / n, 970.0 / n, 143.0 / n],
            gera: [43.0 / n, 1276.0 / n, 63.0 / n],
            tms: [1193.0 / n, 181.0 / n, 8.0 / n],
        }
    }
}

impl ClassMix {
    pub fn uniform() -> Self {
        let u = [1.0 / 3.0; 3];
        Self {
            keros: u,
            gera: u,
            tms: u,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("keros", self.keros), ("gera", self.gera), ("tms", self.tms)] {
            if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidMix(format!("{name}: {p:?}")));
            }
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidMix(format!("{name} sums to {sum}")));
            }
        }
        Ok(())
    }
}

/// Image-level knobs of the generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub spacing: Spacing,
    pub height_range: (usize, usize),
    /// Extra width on top of the height, sampled uniformly.
    pub extra_width: usize,
    pub noise_level: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            spacing: Spacing { x: 0.45, y: 0.45 },
            height_range: (224, 288),
            extra_width: 120,
            noise_level: 0.03,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideAnatomy {
    pub classes: RiskClasses,
    pub keros_mm: f64,
    pub gera_deg: f64,
    pub tms1_mm: f64,
    pub tms2_mm: f64,
    /// Lateral offset of the cribriform plate point from the midline.
    pub plate_offset_px: f64,
    /// Lateral offset of the ethmoid roof point from the fovea ethmoidalis.
    pub roof_offset_px: f64,
    /// Lateral offset of the orbital floor point from the midline.
    pub orbit_offset_px: f64,
}

impl SideAnatomy {
    pub fn measurements(&self) -> SideMeasurements {
        SideMeasurements {
            keros_depth_mm: self.keros_mm,
            gera_angle_deg: self.gera_deg,
            tms1_mm: self.tms1_mm,
            tms2_mm: self.tms2_mm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnatomyParams {
    pub left: SideAnatomy,
    pub right: SideAnatomy,
    pub midline_x: f64,
    /// Row of the cribriform plate.
    pub base_y: f64,
    pub crista_height_px: f64,
    pub height: usize,
    pub width: usize,
    pub spacing: Spacing,
    pub noise_level: f64,
    pub seed: u64,
}

impl AnatomyParams {
    pub fn side(&self, side: Side) -> &SideAnatomy {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    /// Analytic landmark positions.
    pub fn landmarks(&self) -> NamedPoints {
        let mut out = NamedPoints::new();
        let sp = self.spacing;
        for side in Side::BOTH {
            let a = self.side(side);
            let s = side.outward();
            let cp = Point2::new(self.midline_x + s * a.plate_offset_px, self.base_y);
            let theta = a.gera_deg.to_radians();
            let rise = a.keros_mm / sp.y;
            let run = a.keros_mm * theta.cos() / (theta.sin() * sp.x);
            let fe = Point2::new(cp.x + s * run, cp.y - rise);
            let of = Point2::new(
                self.midline_x + s * a.orbit_offset_px,
                self.base_y + a.tms1_mm / sp.y,
            );
            let er = Point2::new(fe.x + s * a.roof_offset_px, of.y - a.tms2_mm / sp.y);
            out.insert(LandmarkKind::FoveaEthmoidalis.name(side), fe);
            out.insert(LandmarkKind::CribriformPlate.name(side), cp);
            out.insert(LandmarkKind::EthmoidRoof.name(side), er);
            out.insert(LandmarkKind::OrbitalFloor.name(side), of);
        }
        out.insert(
            CRISTA_GALLI.to_string(),
            Point2::new(self.midline_x, self.base_y - self.crista_height_px),
        );
        out.insert(SEPTUM.to_string(), Point2::new(self.midline_x, self.base_y));
        out
    }

    /// Checks margins, crop containment and the Keros/Gera patch radius.
    pub fn check_geometry(&self) -> Result<()> {
        let lm = self.landmarks();
        let (w, h) = (self.width as f64, self.height as f64);
        for (name, p) in &lm {
            if p.x < BORDER_MARGIN
                || p.y < BORDER_MARGIN
                || p.x > w - 1.0 - BORDER_MARGIN
                || p.y > h - 1.0 - BORDER_MARGIN
            {
                return Err(Error::GeometryOverflow(format!(
                    "{name} at ({:.2}, {:.2}) within {BORDER_MARGIN} px of the border",
                    p.x, p.y
                )));
            }
        }
        let crop = square_crop_rect(self.height, self.width)?;
        for (name, p) in &lm {
            if p.x < crop.x0 as f64 + CROP_MARGIN || p.x > (crop.x0 + crop.width) as f64 - 1.0 - CROP_MARGIN {
                return Err(Error::GeometryOverflow(format!("{name} leaves the square crop")));
            }
        }
        let center = keros_gera_center(&lm);
        for side in Side::BOTH {
            for kind in [
                LandmarkKind::FoveaEthmoidalis,
                LandmarkKind::CribriformPlate,
                LandmarkKind::EthmoidRoof,
            ] {
                let name = kind.name(side);
                let p = lm[&name];
                let d = (p.x - center.x).abs().max((p.y - center.y).abs());
                if d > KG_RADIUS {
                    return Err(Error::GeometryOverflow(format!(
                        "{name} is {d:.1} px from the Keros/Gera center"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn keros_gera_center(lm: &NamedPoints) -> Point2 {
    let mut sx = 0.0;
    let mut sy = 0.0;
    for side in Side::BOTH {
        for kind in [LandmarkKind::FoveaEthmoidalis, LandmarkKind::CribriformPlate] {
            let p = lm[&kind.name(side)];
            sx += p.x;
            sy += p.y;
        }
    }
    Point2::new(sx / 4.0, sy / 4.0)
}

fn draw_class<R: Rng + ?Sized>(rng: &mut R, probs: &[f64; 3]) -> Result<ClassLabel> {
    let dist = WeightedIndex::new(probs).map_err(|e| Error::InvalidMix(e.to_string()))?;
    Ok(ClassLabel::ALL[dist.sample(rng)])
}

/// `[lo, hi)`
fn closed_open<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    rng.random_range(lo..hi)
}

/// `(lo, hi]`
fn open_closed<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    hi - rng.random_range(0.0..(hi - lo))
}

fn draw_side<R: Rng + ?Sized>(
    rng: &mut R,
    classes: RiskClasses,
    spacing: Spacing,
) -> Result<SideAnatomy> {
    for _ in 0..MAX_SIDE_ATTEMPTS {
        let keros_mm = match classes.keros {
            ClassLabel::I => closed_open(rng, KEROS_I),
            ClassLabel::II => closed_open(rng, KEROS_II),
            ClassLabel::III => open_closed(rng, KEROS_III),
        };
        let gera_deg = match classes.gera {
            ClassLabel::I => open_closed(rng, GERA_I),
            ClassLabel::II => closed_open(rng, GERA_II),
            ClassLabel::III => closed_open(rng, GERA_III),
        };
        let low_first = rng.random_bool(0.5);
        let (low1, low2) = match classes.tms {
            ClassLabel::I => (false, false),
            ClassLabel::II => (low_first, !low_first),
            ClassLabel::III => (true, true),
        };
        let mut tms = |low: bool| {
            if low {
                closed_open(rng, TMS_LOW)
            } else {
                open_closed(rng, TMS_HIGH)
            }
        };
        let tms1_mm = tms(low1);
        let tms2_mm = tms(low2);
        let side = SideAnatomy {
            classes,
            keros_mm,
            gera_deg,
            tms1_mm,
            tms2_mm,
            plate_offset_px: rng.random_range(3.0..5.0),
            roof_offset_px: rng.random_range(0.0..5.0),
            orbit_offset_px: rng.random_range(55.0..70.0),
        };
        // necessary for the joint patch-radius check
        let theta = gera_deg.to_radians();
        let run = keros_mm * theta.cos() / (theta.sin() * spacing.x);
        let lateral = side.plate_offset_px + run + side.roof_offset_px;
        let roof_rise = (tms1_mm - tms2_mm) / spacing.y;
        let depth = keros_mm / spacing.y;
        if lateral <= KG_RADIUS && roof_rise.abs() <= KG_RADIUS && depth <= 2.0 * KG_RADIUS {
            return Ok(side);
        }
    }
    Err(Error::GeometryOverflow(format!(
        "no phantom side fits classes {classes:?}"
    )))
}

/// Draws one phantom's parameters. Deterministic per seed.
pub fn sample_params(seed: u64, mix: &ClassMix) -> Result<AnatomyParams> {
    sample_params_with(seed, mix, &SynthConfig::default())
}

pub fn sample_params_with(seed: u64, mix: &ClassMix, config: &SynthConfig) -> Result<AnatomyParams> {
    mix.validate()?;
    config.spacing.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hmin, hmax) = config.height_range;
    let height = rng.random_range(hmin..=hmax.max(hmin));
    let wmin = height.max(280);
    let width = rng.random_range(wmin..=wmin.max(height + config.extra_width));
    let midline_x = (width as f64 - 1.0) / 2.0 + rng.random_range(-8.0..8.0);
    let base_y = rng.random_range(88.0..(height as f64 - 97.0).max(89.0));
    let crista_height_px = rng.random_range(14.0..22.0);

    let draw_classes = |rng: &mut ChaCha8Rng| -> Result<RiskClasses> {
        Ok(RiskClasses {
            keros: draw_class(rng, &mix.keros)?,
            gera: draw_class(rng, &mix.gera)?,
            tms: draw_class(rng, &mix.tms)?,
        })
    };
    let left_classes = draw_classes(&mut rng)?;
    let right_classes = draw_classes(&mut rng)?;

    let mut last = None;
    for _ in 0..MAX_JOINT_ATTEMPTS {
        let params = AnatomyParams {
            left: draw_side(&mut rng, left_classes, config.spacing)?,
            right: draw_side(&mut rng, right_classes, config.spacing)?,
            midline_x,
            base_y,
            crista_height_px,
            height,
            width,
            spacing: config.spacing,
            noise_level: config.noise_level,
            seed,
        };
        match params.check_geometry() {
            Ok(()) => return Ok(params),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::GeometryOverflow("no attempts".into())))
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: Point2,
    b: Point2,
}

impl Segment {
    fn distance(&self, p: Point2) -> f64 {
        let (dx, dy) = (self.b.x - self.a.x, self.b.y - self.a.y);
        let len2 = dx * dx + dy * dy;
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((p.x - self.a.x) * dx + (p.y - self.a.y) * dy) / len2).clamp(0.0, 1.0)
        };
        p.distance(&Point2::new(self.a.x + t * dx, self.a.y + t * dy))
    }
}

fn polyline(points: &[Point2], out: &mut Vec<Segment>) {
    out.extend(points.windows(2).map(|w| Segment { a: w[0], b: w[1] }));
}

fn bone_segments(params: &AnatomyParams, lm: &NamedPoints) -> Vec<Segment> {
    let mut segs = Vec::new();
    let sept = lm[SEPTUM];
    let cg = lm[CRISTA_GALLI];
    let cp = |s: Side| lm[&LandmarkKind::CribriformPlate.name(s)];
    polyline(&[cp(Side::Left), sept, cp(Side::Right)], &mut segs);
    polyline(&[cg, sept, sept.offset(0.0, 70.0)], &mut segs);
    for side in Side::BOTH {
        let s = side.outward();
        let fe = lm[&LandmarkKind::FoveaEthmoidalis.name(side)];
        let er = lm[&LandmarkKind::EthmoidRoof.name(side)];
        let of = lm[&LandmarkKind::OrbitalFloor.name(side)];
        polyline(&[cp(side), fe, er, er.offset(s * 18.0, 10.0)], &mut segs);
        polyline(
            &[
                of.offset(-22.0, -14.0),
                of.offset(-12.0, -3.0),
                of,
                of.offset(12.0, -3.0),
                of.offset(22.0, -14.0),
            ],
            &mut segs,
        );
    }
    let _ = params;
    segs
}

const BACKGROUND: f64 = 0.12;
const BONE: f64 = 0.85;

/// Renders the phantom. Bit-identical for identical parameters regardless of
/// thread count: each row draws noise from its own derived stream.
pub fn render_phantom(params: &AnatomyParams) -> Result<(SliceImage, AnnotationSet)> {
    params.check_geometry()?;
    let lm = params.landmarks();
    let segs = bone_segments(params, &lm);
    let (h, w) = (params.height, params.width);
    let noise = Normal::new(0.0, params.noise_level.max(0.0))
        .map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let rows: Vec<f32> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let mut rng = derived_rng(params.seed, &[b"noise", &(y as u64).to_le_bytes()]);
            let segs = &segs;
            (0..w)
                .map(|x| {
                    let p = Point2::new(x as f64, y as f64);
                    let d = segs
                        .iter()
                        .map(|s| s.distance(p))
                        .fold(f64::INFINITY, f64::min);
                    let coverage = (1.5 - d).clamp(0.0, 1.0);
                    let v = BACKGROUND + (BONE - BACKGROUND) * coverage;
                    let n = if params.noise_level > 0.0 {
                        noise.sample(&mut rng)
                    } else {
                        0.0
                    };
                    (v + n).clamp(0.0, 1.0) as f32
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let pixels =
        Array2::from_shape_vec((h, w), rows).map_err(|e| Error::Internal(e.to_string()))?;
    let image = SliceImage::new(pixels, params.spacing, "", "")?;
    let ann = AnnotationSet::new(default_schema(), &lm, w, h)?;
    Ok((image, ann))
}

/// Classes implied by the sampled measurements.
pub fn generator_classes(params: &AnatomyParams, side: Side) -> RiskClasses {
    classify(&params.side(side).measurements())
}

/// One generated slice.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub sample_id: String,
    pub patient_id: String,
    pub params: AnatomyParams,
    pub image: SliceImage,
    pub annotations: AnnotationSet,
}

/// Fraction of patients that own two slices.
pub const REPEAT_PATIENT_RATE: f64 = 0.08;

/// Sample ids `S00000..` and patient ids `P0000..`, where about 8% of the
/// patients own two consecutive slices.
pub fn assign_patients(n: usize, seed: u64) -> Vec<(String, String)> {
    let mut rng = derived_rng(seed, &[b"patients"]);
    let mut out = Vec::with_capacity(n);
    let mut patient = 0usize;
    while out.len() < n {
        let pid = format!("P{patient:04}");
        let slices = if out.len() + 1 < n && rng.random_bool(REPEAT_PATIENT_RATE) {
            2
        } else {
            1
        };
        for _ in 0..slices {
            out.push((format!("S{:05}", out.len()), pid.clone()));
        }
        patient += 1;
    }
    out
}

/// Seed of sample `index` under a master seed.
pub fn sample_seed(master: u64, index: usize) -> u64 {
    derive_seed(master, &[b"sample", &(index as u64).to_le_bytes()])
}

pub fn generate_sample(
    master_seed: u64,
    index: usize,
    sample_id: &str,
    patient_id: &str,
    mix: &ClassMix,
    config: &SynthConfig,
) -> Result<SyntheticSample> {
    let params = sample_params_with(sample_seed(master_seed, index), mix, config)?;
    let (image, annotations) = render_phantom(&params)?;
    let image = SliceImage::new(
        image.pixels().clone(),
        image.spacing(),
        patient_id,
        sample_id,
    )?;
    Ok(SyntheticSample {
        sample_id: sample_id.to_string(),
        patient_id: patient_id.to_string(),
        params,
        image,
        annotations,
    })
}

/// In-memory dataset, used by tests and benchmarks.
pub fn generate_samples(
    n: usize,
    seed: u64,
    mix: &ClassMix,
    config: &SynthConfig,
) -> Result<Vec<SyntheticSample>> {
    assign_patients(n, seed)
        .par_iter()
        .enumerate()
        .map(|(i, (sid, pid))| generate_sample(seed, i, sid, pid, mix, config))
        .collect()
}

/// Writes `images/<id>.png`, `annotations/<id>.json` and `manifest.json`
/// under `out_dir`.
pub fn generate_dataset(
    n: usize,
    seed: u64,
    mix: &ClassMix,
    config: &SynthConfig,
    out_dir: &Path,
) -> Result<Vec<ManifestEntry>> {
    if n == 0 {
        return Err(Error::EmptyInput("dataset size must be at least 1".into()));
    }
    mix.validate()?;
    let ids = assign_patients(n, seed);
    let entries: Vec<ManifestEntry> = ids
        .par_iter()
        .enumerate()
        .map(|(i, (sid, pid))| -> Result<ManifestEntry> {
            let s = generate_sample(seed, i, sid, pid, mix, config)?;
            let image_rel = format!("images/{sid}.png");
            let ann_rel = format!("annotations/{sid}.json");
            save_gray8(s.image.pixels(), &out_dir.join(&image_rel))?;
            let file = AnnotationFile {
                schema_version: crate::io::ANNOTATION_SCHEMA_VERSION,
                sample_id: sid.clone(),
                patient_id: pid.clone(),
                image: format!("../{image_rel}"),
                spacing: s.image.spacing(),
                landmarks: s.annotations.to_named(),
            };
            write_annotation_file(&out_dir.join(&ann_rel), &file)?;
            Ok(ManifestEntry {
                sample_id: sid.clone(),
                patient_id: pid.clone(),
                image: image_rel,
                annotations: ann_rel,
            })
        })
        .collect::<Result<_>>()?;
    write_json(&out_dir.join("manifest.json"), &entries)?;
    Ok(entries)
}
