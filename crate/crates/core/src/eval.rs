//! Landmark and measurement errors, confusion matrices, and the
//! patient-grouped split.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClassLabel, NamedPoints, Side, Spacing};
use crate::pipeline::global_targets_named;
use crate::report::SliceReport;
use crate::rng::derived_rng;

pub const SPLIT_GROUPS: usize = 6;

fn distance_mm(a: crate::model::Point2, b: crate::model::Point2, spacing: Spacing) -> f64 {
    ((a.x - b.x) * spacing.x).hypot((a.y - b.y) * spacing.y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStat {
    pub mae_mm: f64,
    pub maxe_mm: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkErrors {
    pub mae_mm: f64,
    /// Maximum over every landmark of every sample.
    pub maxe_mm: f64,
    pub count: usize,
    pub per_landmark: BTreeMap<String, ErrorStat>,
    pub per_sample_max_mm: Vec<f64>,
}

/// Euclidean errors in mm over every landmark present in `gt`.
pub fn landmark_errors(
    pred: &[NamedPoints],
    gt: &[NamedPoints],
    spacings: &[Spacing],
) -> Result<LandmarkErrors> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: gt.len(),
        });
    }
    if spacings.len() != gt.len() {
        return Err(Error::LengthMismatch {
            left: spacings.len(),
            right: gt.len(),
        });
    }
    if gt.is_empty() {
        return Err(Error::EmptyInput("no samples to compare".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut maxe: f64 = 0.0;
    let mut per: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
    let mut per_sample = Vec::with_capacity(gt.len());
    for ((p, g), &sp) in pred.iter().zip(gt).zip(spacings) {
        let mut sample_max: f64 = 0.0;
        for (name, &gp) in g {
            let pp = *p
                .get(name)
                .ok_or_else(|| Error::MissingLandmark(name.clone()))?;
            let d = distance_mm(pp, gp, sp);
            sum += d;
            count += 1;
            maxe = maxe.max(d);
            sample_max = sample_max.max(d);
            let e = per.entry(name.clone()).or_insert((0.0, 0.0, 0));
            e.0 += d;
            e.1 = e.1.max(d);
            e.2 += 1;
        }
        per_sample.push(sample_max);
    }
    if count == 0 {
        return Err(Error::EmptyInput("ground truth has no landmarks".into()));
    }
    Ok(LandmarkErrors {
        mae_mm: sum / count as f64,
        maxe_mm: maxe,
        count,
        per_landmark: per
            .into_iter()
            .map(|(k, (s, m, n))| {
                (
                    k,
                    ErrorStat {
                        mae_mm: s / n as f64,
                        maxe_mm: m,
                        count: n,
                    },
                )
            })
            .collect(),
        per_sample_max_mm: per_sample,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementErrors {
    pub keros_mm: f64,
    pub gera_deg: f64,
    pub tms1_mm: f64,
    pub tms2_mm: f64,
    /// Sides scored in both reports.
    pub sides: usize,
    /// Sides skipped because either report could not score them.
    pub unscorable: usize,
}

fn check_pairs(pred: &[SliceReport], gt: &[SliceReport]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: gt.len(),
        });
    }
    for (p, g) in pred.iter().zip(gt) {
        if p.sample_id != g.sample_id {
            return Err(Error::FormatMismatch(format!(
                "report for {} paired with {}",
                p.sample_id, g.sample_id
            )));
        }
    }
    Ok(())
}

/// Mean absolute differences over every side scored in both reports.
pub fn measurement_errors(pred: &[SliceReport], gt: &[SliceReport]) -> Result<MeasurementErrors> {
    check_pairs(pred, gt)?;
    let mut acc = [0.0f64; 4];
    let mut sides = 0usize;
    let mut unscorable = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        for side in Side::BOTH {
            match (p.sides.get(side).get(), g.sides.get(side).get()) {
                (Some((pm, _)), Some((gm, _))) => {
                    acc[0] += (pm.keros_depth_mm - gm.keros_depth_mm).abs();
                    acc[1] += (pm.gera_angle_deg - gm.gera_angle_deg).abs();
                    acc[2] += (pm.tms1_mm - gm.tms1_mm).abs();
                    acc[3] += (pm.tms2_mm - gm.tms2_mm).abs();
                    sides += 1;
                }
                _ => unscorable += 1,
            }
        }
    }
    if sides == 0 {
        return Err(Error::EmptyInput("no side scored in both reports".into()));
    }
    let n = sides as f64;
    Ok(MeasurementErrors {
        keros_mm: acc[0] / n,
        gera_deg: acc[1] / n,
        tms1_mm: acc[2] / n,
        tms2_mm: acc[3] / n,
        sides,
        unscorable,
    })
}

/// Rows are ground truth, columns are predictions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix3 {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix3 {
    pub fn add(&mut self, gt: ClassLabel, pred: ClassLabel) {
        self.counts[gt.index()][pred.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    pub fn merge(&self, other: &ConfusionMatrix3) -> ConfusionMatrix3 {
        let mut out = *self;
        for i in 0..3 {
            for j in 0..3 {
                out.counts[i][j] += other.counts[i][j];
            }
        }
        out
    }
}

pub fn confusion(pred: &[ClassLabel], gt: &[ClassLabel]) -> Result<ConfusionMatrix3> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: gt.len(),
        });
    }
    let mut m = ConfusionMatrix3::default();
    for (&p, &g) in pred.iter().zip(gt) {
        m.add(g, p);
    }
    Ok(m)
}

/// Precision and recall per class. An empty column or row gives 0 and sets
/// the matching `undefined` flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: [f64; 3],
    pub recall: [f64; 3],
    pub accuracy: f64,
    pub precision_undefined: [bool; 3],
    pub recall_undefined: [bool; 3],
}

pub fn class_metrics(m: &ConfusionMatrix3) -> Result<ClassMetrics> {
    let total = m.total();
    if total == 0 {
        return Err(Error::EmptyInput("empty confusion matrix".into()));
    }
    let mut out = ClassMetrics {
        precision: [0.0; 3],
        recall: [0.0; 3],
        accuracy: m.trace() as f64 / total as f64,
        precision_undefined: [false; 3],
        recall_undefined: [false; 3],
    };
    for c in 0..3 {
        let col: u64 = (0..3).map(|r| m.counts[r][c]).sum();
        let row: u64 = m.counts[c].iter().sum();
        if col == 0 {
            out.precision_undefined[c] = true;
        } else {
            out.precision[c] = m.counts[c][c] as f64 / col as f64;
        }
        if row == 0 {
            out.recall_undefined[c] = true;
        } else {
            out.recall[c] = m.counts[c][c] as f64 / row as f64;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub validation: usize,
    pub train: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    /// Patient ids per group, each sorted.
    pub groups: Vec<Vec<String>>,
    pub test_group: usize,
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    pub fn group_of(&self, patient_id: &str) -> Option<usize> {
        self.groups
            .iter()
            .position(|g| g.binary_search_by(|p| p.as_str().cmp(patient_id)).is_ok())
    }
}

/// Shuffles the distinct patients with a seeded stream and deals them
/// round-robin into `groups` groups. Group 0 is the test group and fold `k`
/// validates on group `k`.
pub fn grouped_folds<S: AsRef<str>>(patient_ids: &[S], groups: usize, seed: u64) -> Result<FoldPlan> {
    if groups < 2 {
        return Err(Error::InvalidSpec(format!("need at least 2 groups, got {groups}")));
    }
    let unique: BTreeSet<&str> = patient_ids.iter().map(|p| p.as_ref()).collect();
    if unique.len() < groups {
        return Err(Error::TooFewPatients {
            needed: groups,
            got: unique.len(),
        });
    }
    let mut ids: Vec<&str> = unique.into_iter().collect();
    ids.shuffle(&mut derived_rng(seed, &[b"split"]));
    let mut out = vec![Vec::new(); groups];
    for (i, id) in ids.into_iter().enumerate() {
        out[i % groups].push(id.to_string());
    }
    for g in &mut out {
        g.sort();
    }
    let folds = (1..groups)
        .map(|k| Fold {
            validation: k,
            train: (1..groups).filter(|&j| j != k).collect(),
        })
        .collect();
    Ok(FoldPlan {
        seed,
        groups: out,
        test_group: 0,
        folds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub confusion: ConfusionMatrix3,
    #[serde(flatten)]
    pub metrics: ClassMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReports {
    pub keros: ClassReport,
    pub gera: ClassReport,
    pub tms: ClassReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    /// Landmarks of the predicted set that a report failed to decode.
    pub missing_landmarks: usize,
    pub landmark: LandmarkErrors,
    /// Errors of the global-stage reference points (g2l runs only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub global: Option<LandmarkErrors>,
    pub measurements: MeasurementErrors,
    pub classes: ClassReports,
}

/// Full comparison of predicted reports against ground-truth reports.
pub fn evaluate(
    pred: &[SliceReport],
    gt: &[SliceReport],
    spacings: &[Spacing],
) -> Result<MetricsReport> {
    check_pairs(pred, gt)?;
    // compare the landmarks the mode predicts; decode failures are counted
    let predicted: BTreeSet<&String> = pred.iter().flat_map(|r| r.landmarks_px.keys()).collect();
    let mut missing_landmarks = 0usize;
    let pl: Vec<NamedPoints> = pred.iter().map(|r| r.landmarks_px.clone()).collect();
    let gl: Vec<NamedPoints> = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            g.landmarks_px
                .iter()
                .filter(|(k, _)| predicted.contains(k))
                .filter(|(k, _)| {
                    let present = p.landmarks_px.contains_key(*k);
                    missing_landmarks += !present as usize;
                    present
                })
                .map(|(k, v)| (k.clone(), *v))
                .collect()
        })
        .collect();
    let landmark = landmark_errors(&pl, &gl, spacings)?;

    let global = if pred.iter().all(|r| r.global_px.is_some()) && !pred.is_empty() {
        let pg: Vec<NamedPoints> = pred.iter().map(|r| r.global_px.clone().unwrap_or_default()).collect();
        let gg = gt
            .iter()
            .map(|r| global_targets_named(&r.landmarks_px))
            .collect::<Result<Vec<_>>>()?;
        Some(landmark_errors(&pg, &gg, spacings)?)
    } else {
        None
    };

    let measurements = measurement_errors(pred, gt)?;

    let mut mats = [ConfusionMatrix3::default(); 3];
    for (p, g) in pred.iter().zip(gt) {
        for side in Side::BOTH {
            if let (Some((_, pc)), Some((_, gc))) = (p.sides.get(side).get(), g.sides.get(side).get()) {
                mats[0].add(gc.keros, pc.keros);
                mats[1].add(gc.gera, pc.gera);
                mats[2].add(gc.tms, pc.tms);
            }
        }
    }
    let report = |m: ConfusionMatrix3| -> Result<ClassReport> {
        Ok(ClassReport {
            confusion: m,
            metrics: class_metrics(&m)?,
        })
    };
    Ok(MetricsReport {
        samples: pred.len(),
        missing_landmarks,
        landmark,
        global,
        measurements,
        classes: ClassReports {
            keros: report(mats[0])?,
            gera: report(mats[1])?,
            tms: report(mats[2])?,
        },
    })
}
