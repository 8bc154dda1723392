use serde::{Deserialize, Serialize};

use crate::frames::FrameTransform;
use crate::model::{NamedPoints, RiskClasses, Side, SideMeasurements};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Direct,
    G2l,
    Groundtruth,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Direct => "direct",
            Mode::G2l => "g2l",
            Mode::Groundtruth => "groundtruth",
        }
    }
}

/// Scored side, or the reason it could not be scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideOutcome {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub measurements: Option<SideMeasurements>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub classes: Option<RiskClasses>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

impl SideOutcome {
    pub fn scored(measurements: SideMeasurements, classes: RiskClasses) -> Self {
        Self {
            measurements: Some(measurements),
            classes: Some(classes),
            error: None,
        }
    }

    pub fn unscorable(reason: impl Into<String>) -> Self {
        Self {
            measurements: None,
            classes: None,
            error: Some(reason.into()),
        }
    }

    pub fn get(&self) -> Option<(&SideMeasurements, &RiskClasses)> {
        self.measurements.as_ref().zip(self.classes.as_ref())
    }

    pub fn is_scored(&self) -> bool {
        self.get().is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sides {
    pub left: SideOutcome,
    pub right: SideOutcome,
}

impl Sides {
    pub fn get(&self, side: Side) -> &SideOutcome {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportStatus {
    Ok,
    Partial,
    Unscorable,
}

/// One frame a stage ran in, with the channel positions decoded there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub stage: String,
    pub transform: FrameTransform,
    pub decoded: NamedPoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub sample_id: String,
    pub mode: Mode,
    pub predictor: String,
    /// Final landmark positions in original-image pixels.
    pub landmarks_px: NamedPoints,
    /// Global-stage reference estimates in original-image pixels (g2l only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub global_px: Option<NamedPoints>,
    pub frames: Vec<FrameRecord>,
    pub sides: Sides,
    pub status: ReportStatus,
}

impl SliceReport {
    pub fn status_of(sides: &Sides) -> ReportStatus {
        match (sides.left.is_scored(), sides.right.is_scored()) {
            (true, true) => ReportStatus::Ok,
            (false, false) => ReportStatus::Unscorable,
            _ => ReportStatus::Partial,
        }
    }
}
