//! Direct and global-to-local inference on one slice.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{patch_rect, square_crop_rect, FrameTransform, GLOBAL_FRAME, PATCH_SIZE};
use crate::heatmap::{decode, DEFAULT_WINDOW};
use crate::measure::score_side;
use crate::model::{
    AnnotationSet, LandmarkKind, LandmarkSource, NamedPoints, Point2, Side, SliceImage, Spacing,
};
use crate::predictor::{
    PredictRequest, Predictor, StageKey, StageSpec, KG_CENTER, ORBITAL_FLOOR, SIGMA_GLOBAL,
    SIGMA_LOCAL,
};
use crate::report::{FrameRecord, Mode, SideOutcome, Sides, SliceReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub global_frame: usize,
    pub patch_size: usize,
    pub window: usize,
    pub sigma_global: f64,
    pub sigma_local: f64,
}

impl PipelineConfig {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            global_frame: GLOBAL_FRAME,
            patch_size: PATCH_SIZE,
            window: DEFAULT_WINDOW,
            sigma_global: SIGMA_GLOBAL,
            sigma_local: SIGMA_LOCAL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == Mode::Groundtruth {
            return Err(Error::InvalidSpec("groundtruth is not an inference mode".into()));
        }
        if self.global_frame == 0 || self.patch_size == 0 {
            return Err(Error::InvalidSpec("frame sizes must be positive".into()));
        }
        if self.window.is_multiple_of(2) {
            return Err(Error::InvalidWindow(self.window));
        }
        for s in [self.sigma_global, self.sigma_local] {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidSigma(s));
            }
        }
        Ok(())
    }

    /// The stage spec with this config's sizes and sigmas.
    pub fn spec(&self, key: StageKey, schema: &crate::model::LandmarkSchema) -> StageSpec {
        let mut spec = StageSpec::for_key(key, schema);
        match key {
            StageKey::Direct => {
                spec.frame_size = self.global_frame;
                spec.sigma = self.sigma_local;
            }
            StageKey::Global => {
                spec.frame_size = self.global_frame;
                spec.sigma = self.sigma_global;
            }
            StageKey::LocalKerosGera | StageKey::LocalOrbital(_) => {
                spec.frame_size = self.patch_size;
                spec.sigma = self.sigma_local;
            }
        }
        spec
    }
}

/// Which producer answers each stage.
#[derive(Clone)]
pub struct StageBindings {
    pub global: Arc<dyn Predictor>,
    pub local: Arc<dyn Predictor>,
}

impl StageBindings {
    pub fn uniform(p: Arc<dyn Predictor>) -> Self {
        Self {
            global: p.clone(),
            local: p,
        }
    }

    /// Direct mode and the global stage use `global`; both local stages use
    /// `local`.
    pub fn for_key(&self, key: StageKey) -> &dyn Predictor {
        match key {
            StageKey::Direct | StageKey::Global => self.global.as_ref(),
            StageKey::LocalKerosGera | StageKey::LocalOrbital(_) => self.local.as_ref(),
        }
    }

    pub fn tag(&self, mode: Mode) -> String {
        let (g, l) = (self.global.tag(), self.local.tag());
        if mode == Mode::Direct || g == l {
            g
        } else {
            format!("global={g};local={l}")
        }
    }
}

/// One slice to process, with ground truth when it is available.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub image: SliceImage,
    pub truth: Option<AnnotationSet>,
}

/// Reference points of the global stage: the centroid of the four
/// Keros/Gera landmarks and both orbital floors.
pub fn global_targets<L: LandmarkSource + ?Sized>(ann: &L) -> Result<[Point2; 3]> {
    let mut c = Point2::new(0.0, 0.0);
    for side in Side::BOTH {
        for kind in [LandmarkKind::FoveaEthmoidalis, LandmarkKind::CribriformPlate] {
            let p = ann.require_landmark(&kind.name(side))?;
            c.x += p.x / 4.0;
            c.y += p.y / 4.0;
        }
    }
    Ok([
        c,
        ann.require_landmark(&LandmarkKind::OrbitalFloor.name(Side::Left))?,
        ann.require_landmark(&LandmarkKind::OrbitalFloor.name(Side::Right))?,
    ])
}

/// [`global_targets`] keyed by the global-stage channel names.
pub fn global_targets_named<L: LandmarkSource + ?Sized>(ann: &L) -> Result<NamedPoints> {
    let [kg, ofl, ofr] = global_targets(ann)?;
    Ok(NamedPoints::from([
        (KG_CENTER.to_string(), kg),
        (LandmarkKind::OrbitalFloor.name(Side::Left), ofl),
        (LandmarkKind::OrbitalFloor.name(Side::Right), ofr),
    ]))
}

fn map_truth(truth: &NamedPoints, t: &FrameTransform) -> NamedPoints {
    truth.iter().map(|(k, p)| (k.clone(), t.to_frame(*p))).collect()
}

/// Result of one stage: decoded points in frame and original coordinates,
/// and the names of channels with no usable peak.
struct StageResult {
    record: FrameRecord,
    original: NamedPoints,
    failed: Vec<String>,
}

fn run_stage(
    predictor: &dyn Predictor,
    sample: &Sample,
    key: StageKey,
    spec: &StageSpec,
    transform: FrameTransform,
    truth: Option<&NamedPoints>,
    window: usize,
) -> Result<StageResult> {
    let image = transform.extract(sample.image.pixels());
    let truth_frame = truth.map(|t| map_truth(t, &transform));
    let out = predictor.predict(&PredictRequest {
        sample_id: &sample.id,
        stage: key,
        spec,
        image: &image,
        truth: truth_frame.as_ref(),
    })?;
    let mut decoded = NamedPoints::new();
    let mut original = NamedPoints::new();
    let mut failed = Vec::new();
    for (name, hm) in out.stack().iter() {
        match decode(hm, window) {
            Ok(p) => {
                decoded.insert(name.to_string(), p);
                original.insert(name.to_string(), transform.from_frame(p));
            }
            Err(Error::EmptyHeatmap) => failed.push(name.to_string()),
            Err(e) => return Err(e),
        }
    }
    Ok(StageResult {
        record: FrameRecord {
            stage: key.tag().to_string(),
            transform,
            decoded,
        },
        original,
        failed,
    })
}

fn score_sides(points: &NamedPoints, spacing: Spacing, failed: &[String]) -> Sides {
    let outcome = |side: Side| -> SideOutcome {
        let needed: Vec<String> = LandmarkKind::ALL.iter().map(|k| k.name(side)).collect();
        if let Some(missing) = needed.iter().find(|n| !points.contains_key(*n)) {
            let why = if failed.iter().any(|f| f == missing) {
                format!("no decodable peak for {missing}")
            } else {
                format!("{missing} unavailable: {}", failed.join(", "))
            };
            return SideOutcome::unscorable(why);
        }
        match score_side(points, side, spacing) {
            Ok((m, c)) => SideOutcome::scored(m, c),
            Err(e) => SideOutcome::unscorable(e.to_string()),
        }
    };
    Sides {
        left: outcome(Side::Left),
        right: outcome(Side::Right),
    }
}

fn truth_points(sample: &Sample) -> Option<NamedPoints> {
    sample.truth.as_ref().map(AnnotationSet::to_named)
}

/// All landmarks predicted in the global frame.
pub fn run_direct(sample: &Sample, bindings: &StageBindings, config: &PipelineConfig) -> Result<SliceReport> {
    config.validate()?;
    let img = &sample.image;
    let schema = crate::model::default_schema();
    let rect = square_crop_rect(img.height(), img.width())?;
    let transform = FrameTransform::Global {
        rect,
        out: config.global_frame,
    };
    let spec = config.spec(StageKey::Direct, &schema);
    let truth = truth_points(sample);
    let stage = run_stage(
        bindings.for_key(StageKey::Direct),
        sample,
        StageKey::Direct,
        &spec,
        transform,
        truth.as_ref(),
        config.window,
    )?;
    let sides = score_sides(&stage.original, img.spacing(), &stage.failed);
    Ok(SliceReport {
        sample_id: sample.id.clone(),
        mode: Mode::Direct,
        predictor: bindings.tag(Mode::Direct),
        landmarks_px: stage.original,
        global_px: None,
        frames: vec![stage.record],
        status: SliceReport::status_of(&sides),
        sides,
    })
}

/// One orbital-floor refinement. Each side is an independent sample: the
/// result depends only on the patch and the side's stage key.
pub fn refine_orbital(
    predictor: &dyn Predictor,
    sample: &Sample,
    side: Side,
    rect: crate::frames::CropRect,
    config: &PipelineConfig,
) -> Result<(FrameRecord, Option<Point2>)> {
    let key = StageKey::LocalOrbital(side);
    let spec = config.spec(key, &crate::model::default_schema());
    let name = LandmarkKind::OrbitalFloor.name(side);
    let truth = sample
        .truth
        .as_ref()
        .and_then(|t| t.get(&name))
        .map(|p| NamedPoints::from([(ORBITAL_FLOOR.to_string(), p)]));
    let stage = run_stage(
        predictor,
        sample,
        key,
        &spec,
        FrameTransform::Local { rect },
        truth.as_ref(),
        config.window,
    )?;
    let p = stage.original.get(ORBITAL_FLOOR).copied();
    Ok((stage.record, p))
}

/// Global estimates of the reference points, then 96-pixel patches around
/// them for the Keros/Gera landmarks and for each orbital floor.
pub fn run_g2l(sample: &Sample, bindings: &StageBindings, config: &PipelineConfig) -> Result<SliceReport> {
    config.validate()?;
    let img = &sample.image;
    let (h, w) = (img.height(), img.width());
    let schema = crate::model::default_schema();
    let truth = truth_points(sample);

    let global_truth = truth.as_ref().map(global_targets_named).transpose()?;
    let g_transform = FrameTransform::Global {
        rect: square_crop_rect(h, w)?,
        out: config.global_frame,
    };
    let global = run_stage(
        bindings.for_key(StageKey::Global),
        sample,
        StageKey::Global,
        &config.spec(StageKey::Global, &schema),
        g_transform,
        global_truth.as_ref(),
        config.window,
    )?;
    let mut frames = vec![global.record];
    let mut failed = global.failed;
    let mut landmarks = NamedPoints::new();

    if let Some(&kg) = global.original.get(KG_CENTER) {
        let key = StageKey::LocalKerosGera;
        let rect = patch_rect(kg, config.patch_size, h, w)?;
        let local = run_stage(
            bindings.for_key(key),
            sample,
            key,
            &config.spec(key, &schema),
            FrameTransform::Local { rect },
            truth.as_ref(),
            config.window,
        )?;
        frames.push(local.record);
        landmarks.extend(local.original);
        failed.extend(local.failed);
    }

    for side in Side::BOTH {
        let name = LandmarkKind::OrbitalFloor.name(side);
        let Some(&estimate) = global.original.get(&name) else {
            continue;
        };
        let rect = patch_rect(estimate, config.patch_size, h, w)?;
        let predictor = bindings.for_key(StageKey::LocalOrbital(side));
        let (record, p) = refine_orbital(predictor, sample, side, rect, config)?;
        frames.push(record);
        match p {
            Some(p) => {
                landmarks.insert(name, p);
            }
            None => failed.push(name),
        }
    }

    let sides = score_sides(&landmarks, img.spacing(), &failed);
    Ok(SliceReport {
        sample_id: sample.id.clone(),
        mode: Mode::G2l,
        predictor: bindings.tag(Mode::G2l),
        landmarks_px: landmarks,
        global_px: Some(global.original),
        frames,
        status: SliceReport::status_of(&sides),
        sides,
    })
}

pub fn run(sample: &Sample, bindings: &StageBindings, config: &PipelineConfig) -> Result<SliceReport> {
    match config.mode {
        Mode::Direct => run_direct(sample, bindings, config),
        Mode::G2l => run_g2l(sample, bindings, config),
        Mode::Groundtruth => match &sample.truth {
            Some(t) => score_groundtruth(&sample.id, &sample.image, t),
            None => Err(Error::InvalidSpec(format!("{} has no annotations", sample.id))),
        },
    }
}

/// Report for externally supplied points. Missing landmarks make their side
/// unscorable.
pub fn score_points(
    sample_id: &str,
    points: &NamedPoints,
    spacing: Spacing,
    mode: Mode,
    predictor: &str,
) -> SliceReport {
    let sides = score_sides(points, spacing, &[]);
    SliceReport {
        sample_id: sample_id.to_string(),
        mode,
        predictor: predictor.to_string(),
        landmarks_px: points.clone(),
        global_px: None,
        frames: Vec::new(),
        status: SliceReport::status_of(&sides),
        sides,
    }
}

/// Reference report scored directly from annotations.
pub fn score_groundtruth(sample_id: &str, slice: &SliceImage, ann: &AnnotationSet) -> Result<SliceReport> {
    for side in Side::BOTH {
        for kind in LandmarkKind::ALL {
            ann.require(&kind.name(side))?;
        }
    }
    Ok(score_points(
        sample_id,
        &ann.to_named(),
        slice.spacing(),
        Mode::Groundtruth,
        "groundtruth",
    ))
}
