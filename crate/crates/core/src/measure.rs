//! Keros depth, Gera angle and TMS distances, and their three-class grading.
//!
//! Class boundaries: Keros `< 4 | [4, 8] | > 8` mm, Gera `> 80 | [45, 80] | < 45`
//! degrees, TMS counts how many of the two distances fall below 10 mm (a
//! distance of exactly 10 mm is not low).

use crate::error::{Error, Result};
use crate::model::{
    ClassLabel, LandmarkKind, LandmarkSource, Point2, RiskClasses, Side, SideMeasurements,
    Spacing,
};

pub const KEROS_SHALLOW_MM: f64 = 4.0;
pub const KEROS_DEEP_MM: f64 = 8.0;
pub const GERA_STEEP_DEG: f64 = 80.0;
pub const GERA_FLAT_DEG: f64 = 45.0;
pub const TMS_LOW_MM: f64 = 10.0;

/// Vertical distance between fovea ethmoidalis and cribriform plate.
pub fn keros_depth(fe: Point2, cp: Point2, spacing_y: f64) -> f64 {
    (fe.y - cp.y).abs() * spacing_y
}

/// Angle of the lateral lamella against the horizontal through the
/// cribriform plate, in degrees within `[0, 90]`.
pub fn gera_angle(fe: Point2, cp: Point2, spacing: Spacing) -> Result<f64> {
    if fe == cp {
        return Err(Error::DegenerateLandmarks);
    }
    let dx = (fe.x - cp.x).abs() * spacing.x;
    let dy = (fe.y - cp.y).abs() * spacing.y;
    if dx == 0.0 {
        return Ok(90.0);
    }
    Ok(dy.atan2(dx).to_degrees())
}

/// Vertical offsets of the cribriform plate and the ethmoid roof from the
/// horizontal through the orbital floor.
pub fn tms_distances(of: Point2, cp: Point2, er: Point2, spacing_y: f64) -> (f64, f64) {
    (
        (of.y - cp.y).abs() * spacing_y,
        (of.y - er.y).abs() * spacing_y,
    )
}

pub fn classify_keros(depth_mm: f64) -> ClassLabel {
    if depth_mm < KEROS_SHALLOW_MM {
        ClassLabel::I
    } else if depth_mm <= KEROS_DEEP_MM {
        ClassLabel::II
    } else {
        ClassLabel::III
    }
}

pub fn classify_gera(angle_deg: f64) -> ClassLabel {
    if angle_deg > GERA_STEEP_DEG {
        ClassLabel::I
    } else if angle_deg >= GERA_FLAT_DEG {
        ClassLabel::II
    } else {
        ClassLabel::III
    }
}

pub fn classify_tms(d1_mm: f64, d2_mm: f64) -> ClassLabel {
    let low = [d1_mm, d2_mm].iter().filter(|&&d| d < TMS_LOW_MM).count();
    match low {
        0 => ClassLabel::I,
        1 => ClassLabel::II,
        _ => ClassLabel::III,
    }
}

pub fn classify(m: &SideMeasurements) -> RiskClasses {
    RiskClasses {
        keros: classify_keros(m.keros_depth_mm),
        gera: classify_gera(m.gera_angle_deg),
        tms: classify_tms(m.tms1_mm, m.tms2_mm),
    }
}

pub fn measure_side<L: LandmarkSource + ?Sized>(
    landmarks: &L,
    side: Side,
    spacing: Spacing,
) -> Result<SideMeasurements> {
    let [fe, cp, er, of] =
        LandmarkKind::ALL.map(|k| landmarks.require_landmark(&k.name(side)));
    let (fe, cp, er, of) = (fe?, cp?, er?, of?);
    let (tms1_mm, tms2_mm) = tms_distances(of, cp, er, spacing.y);
    Ok(SideMeasurements {
        keros_depth_mm: keros_depth(fe, cp, spacing.y),
        gera_angle_deg: gera_angle(fe, cp, spacing)?,
        tms1_mm,
        tms2_mm,
    })
}

/// Measurements and classes for one side of a slice.
pub fn score_side<L: LandmarkSource + ?Sized>(
    landmarks: &L,
    side: Side,
    spacing: Spacing,
) -> Result<(SideMeasurements, RiskClasses)> {
    let m = measure_side(landmarks, side, spacing)?;
    Ok((m, classify(&m)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{default_schema, AnnotationSet, LandmarkDef, LandmarkSchema, NamedPoints};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn sp(x: f64, y: f64) -> Spacing {
        Spacing::new(x, y).unwrap()
    }

    #[test]
    fn keros_examples() {
        let d = keros_depth(Point2::new(120.0, 50.0), Point2::new(118.0, 62.0), 0.45);
        assert!((d - 5.4).abs() < 1e-12);
        assert_eq!(keros_depth(Point2::new(1.0, 7.0), Point2::new(9.0, 7.0), 0.45), 0.0);
        let d = keros_depth(Point2::new(0.0, 10.0), Point2::new(0.0, 40.0), 0.3);
        assert!((d - 9.0).abs() < 1e-12);
    }

    #[test]
    fn gera_examples() {
        let fe = Point2::new(100.0, 50.0);
        let cp = Point2::new(110.0, 80.0);
        let a = gera_angle(fe, cp, sp(0.45, 0.45)).unwrap();
        assert!((a - 71.56505117707799).abs() < 1e-9);
        let a = gera_angle(fe, cp, sp(0.3, 0.45)).unwrap();
        assert!((a - 77.47119229084849).abs() < 1e-9);
        let a = gera_angle(Point2::new(5.0, 1.0), Point2::new(5.0, 9.0), sp(0.45, 0.45)).unwrap();
        assert_eq!(a, 90.0);
        assert!(matches!(
            gera_angle(fe, fe, sp(0.45, 0.45)),
            Err(Error::DegenerateLandmarks)
        ));
    }

    #[test]
    fn tms_examples() {
        let (d1, d2) = tms_distances(
            Point2::new(80.0, 120.0),
            Point2::new(150.0, 100.0),
            Point2::new(110.0, 95.0),
            0.45,
        );
        assert!((d1 - 9.0).abs() < 1e-12 && (d2 - 11.25).abs() < 1e-12);
        let flat = Point2::new(3.0, 4.0);
        assert_eq!(tms_distances(flat, flat, flat, 0.45), (0.0, 0.0));
        let (d1, d2) = tms_distances(
            Point2::new(0.0, 100.0),
            Point2::new(0.0, 75.0),
            Point2::new(0.0, 78.0),
            0.45,
        );
        assert!((d1 - 11.25).abs() < 1e-12 && (d2 - 9.9).abs() < 1e-12);
    }

    #[test]
    fn table_cells() {
        use ClassLabel::*;
        assert_eq!(classify_keros(3.99), I);
        assert_eq!(classify_keros(5.4), II);
        assert_eq!(classify_keros(8.5), III);
        assert_eq!(classify_keros(4.0), II);
        assert_eq!(classify_keros(8.0), II);
        assert_eq!(classify_gera(85.0), I);
        assert_eq!(classify_gera(60.0), II);
        assert_eq!(classify_gera(30.0), III);
        assert_eq!(classify_gera(80.0), II);
        assert_eq!(classify_gera(45.0), II);
        assert_eq!(classify_tms(12.0, 11.0), I);
        assert_eq!(classify_tms(9.0, 11.25), II);
        assert_eq!(classify_tms(9.0, 9.5), III);
        assert_eq!(classify_tms(10.0, 10.0), I);
    }

    /// Left side: the three derived examples combined. Right side: a vertical
    /// lamella 20 px deep.
    fn example_points() -> NamedPoints {
        let pts = [
            ("FE_left", (100.0, 50.0)),
            ("CP_left", (104.0, 62.0)),
            ("ER_left", (90.0, 57.0)),
            ("OF_left", (70.0, 82.0)),
            ("FE_right", (150.0, 42.0)),
            ("CP_right", (150.0, 62.0)),
            ("ER_right", (160.0, 40.0)),
            ("OF_right", (190.0, 95.0)),
            ("CG", (130.0, 40.0)),
            ("SEPT", (130.0, 62.0)),
        ];
        pts.iter()
            .map(|(n, (x, y))| (n.to_string(), Point2::new(*x, *y)))
            .collect()
    }

    #[test]
    fn score_side_composition() {
        let ann = AnnotationSet::new(default_schema(), &example_points(), 256, 200).unwrap();
        let (m, c) = score_side(&ann, Side::Left, sp(0.45, 0.45)).unwrap();
        assert!((m.keros_depth_mm - 5.4).abs() < 1e-12);
        // atan(12/4) = atan(3)
        assert!((m.gera_angle_deg - 71.56505117707799).abs() < 1e-9);
        assert!((m.tms1_mm - 9.0).abs() < 1e-12);
        assert!((m.tms2_mm - 11.25).abs() < 1e-12);
        assert_eq!(
            c,
            RiskClasses {
                keros: ClassLabel::II,
                gera: ClassLabel::II,
                tms: ClassLabel::II
            }
        );
        let (m, c) = score_side(&ann, Side::Right, sp(0.45, 0.45)).unwrap();
        assert!((m.keros_depth_mm - 9.0).abs() < 1e-12);
        assert_eq!(m.gera_angle_deg, 90.0);
        assert_eq!(c.keros, ClassLabel::III);
        assert_eq!(c.gera, ClassLabel::I);
    }

    #[test]
    fn score_side_reports_missing_landmark() {
        // a schema that renames the ethmoid roof points
        let defs: Vec<LandmarkDef> = default_schema()
            .defs()
            .iter()
            .map(|d| {
                let mut d = d.clone();
                d.name = d.name.replace("ER_", "XR_");
                d.mirror = d.mirror.replace("ER_", "XR_");
                d
            })
            .collect();
        let schema = Arc::new(LandmarkSchema::new(defs).unwrap());
        let pts: NamedPoints = example_points()
            .into_iter()
            .map(|(n, p)| (n.replace("ER_", "XR_"), p))
            .collect();
        let ann = AnnotationSet::new(schema, &pts, 256, 200).unwrap();
        assert!(matches!(
            score_side(&ann, Side::Left, sp(0.45, 0.45)),
            Err(Error::MissingLandmark(n)) if n == "ER_left"
        ));
    }

    #[test]
    fn boundary_sweep_has_two_breakpoints() {
        let mut prev = classify_keros(0.0);
        let mut changes = vec![];
        for i in 0..=12_000 {
            let d = i as f64 * 0.001;
            let c = classify_keros(d);
            if c != prev {
                changes.push((i, c));
                prev = c;
            }
        }
        assert_eq!(changes, vec![(4000, ClassLabel::II), (8001, ClassLabel::III)]);

        let mut prev = classify_gera(0.0);
        let mut changes = vec![];
        for i in 0..=90_000 {
            let a = i as f64 * 0.001;
            let c = classify_gera(a);
            if c != prev {
                changes.push((i, c));
                prev = c;
            }
        }
        assert_eq!(changes, vec![(45000, ClassLabel::II), (80001, ClassLabel::I)]);
    }

    proptest! {
        #[test]
        fn horizontal_translation_invariance(dx in -50.0f64..50.0) {
            let pts = example_points();
            let moved: NamedPoints = pts.iter().map(|(n, p)| (n.clone(), p.offset(dx, 0.0))).collect();
            let s = sp(0.45, 0.45);
            for side in Side::BOTH {
                let a = measure_side(&pts, side, s).unwrap();
                let b = measure_side(&moved, side, s).unwrap();
                prop_assert!((a.keros_depth_mm - b.keros_depth_mm).abs() < 1e-9);
                prop_assert!((a.tms1_mm - b.tms1_mm).abs() < 1e-9);
                prop_assert!((a.tms2_mm - b.tms2_mm).abs() < 1e-9);
            }
        }

        #[test]
        fn gera_invariant_under_uniform_spacing_scale(k in 0.1f64..10.0, sx in 0.2f64..0.6, sy in 0.2f64..0.6) {
            let fe = Point2::new(100.0, 50.0);
            let cp = Point2::new(113.0, 71.0);
            let a = gera_angle(fe, cp, sp(sx, sy)).unwrap();
            let b = gera_angle(fe, cp, sp(sx * k, sy * k)).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!((0.0..=90.0).contains(&a));
        }

        #[test]
        fn tms_class_counts_low_distances(d1 in 0.0f64..20.0, d2 in 0.0f64..20.0) {
            let low = (d1 < 10.0) as usize + (d2 < 10.0) as usize;
            prop_assert_eq!(classify_tms(d1, d2).index(), low);
            prop_assert_eq!(classify_tms(d1, d2), classify_tms(d2, d1));
        }
    }
}
