//! Keros, Gera and TMS skull-base risk scoring from landmark heatmaps.
//!
//! Landmarks are localized either directly in a 256-pixel global frame or
//! with a global-to-local cascade of 96-pixel patches, decoded from Gaussian
//! heatmaps by windowed center of mass, and turned into measurements and
//! risk classes.

pub mod error;
pub mod eval;
pub mod frames;
pub mod heatmap;
pub mod io;
pub mod measure;
pub mod model;
pub mod pipeline;
pub mod predictor;
pub mod report;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use eval::{ConfusionMatrix3, FoldPlan, MetricsReport};
pub use frames::{CropRect, FrameTransform};
pub use heatmap::{Heatmap, HeatmapStack};
pub use model::{
    default_schema, AnnotationSet, ClassLabel, LandmarkKind, LandmarkSchema, NamedPoints, Point2,
    RiskClasses, Side, SideMeasurements, SliceImage, Spacing,
};
pub use pipeline::{PipelineConfig, Sample, StageBindings};
pub use predictor::{
    FilePredictor, NoisyOraclePredictor, OraclePredictor, PredictRequest, Predictor,
    PredictorOutput, StageKey, StageSpec,
};
pub use report::{Mode, ReportStatus, SliceReport};
