//! The heatmap-producer contract and the built-in producers: a ground-truth
//! oracle, a noisy oracle and a reader for externally computed HMAP files.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{GLOBAL_FRAME, PATCH_SIZE};
use crate::heatmap::{encode_stack, HeatmapStack};
use crate::io::read_hmap;
use crate::model::{LandmarkKind, LandmarkSchema, NamedPoints, Point2, Side};
use crate::rng::derived_rng;

/// Channel name of the Keros/Gera reference point in the global stage.
pub const KG_CENTER: &str = "KG_center";
/// Single channel of the orbital-floor refinement stage.
pub const ORBITAL_FLOOR: &str = "OF";

pub const SIGMA_GLOBAL: f64 = 4.0;
pub const SIGMA_LOCAL: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Direct,
    Global,
    LocalKerosGera,
    LocalOrbital,
}

/// A stage invocation. The orbital stage runs once per side, each run being
/// an independent sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StageKey {
    Direct,
    Global,
    LocalKerosGera,
    LocalOrbital(Side),
}

impl StageKey {
    pub fn kind(&self) -> StageKind {
        match self {
            StageKey::Direct => StageKind::Direct,
            StageKey::Global => StageKind::Global,
            StageKey::LocalKerosGera => StageKind::LocalKerosGera,
            StageKey::LocalOrbital(_) => StageKind::LocalOrbital,
        }
    }

    /// File-name tag: `<sample_id>.<tag>.hmap`.
    pub fn tag(&self) -> &'static str {
        match self {
            StageKey::Direct => "direct",
            StageKey::Global => "global",
            StageKey::LocalKerosGera => "local_kg",
            StageKey::LocalOrbital(Side::Left) => "local_of_left",
            StageKey::LocalOrbital(Side::Right) => "local_of_right",
        }
    }

    pub fn parse(tag: &str) -> Option<StageKey> {
        Some(match tag {
            "direct" => StageKey::Direct,
            "global" => StageKey::Global,
            "local_kg" => StageKey::LocalKerosGera,
            "local_of_left" => StageKey::LocalOrbital(Side::Left),
            "local_of_right" => StageKey::LocalOrbital(Side::Right),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub kind: StageKind,
    pub frame_size: usize,
    pub channels: Vec<String>,
    pub sigma: f64,
}

impl StageSpec {
    /// Every schema landmark at the global frame size.
    pub fn direct(schema: &LandmarkSchema) -> Self {
        Self {
            kind: StageKind::Direct,
            frame_size: GLOBAL_FRAME,
            channels: schema.names().map(str::to_string).collect(),
            sigma: SIGMA_LOCAL,
        }
    }

    pub fn global() -> Self {
        Self {
            kind: StageKind::Global,
            frame_size: GLOBAL_FRAME,
            channels: vec![
                KG_CENTER.to_string(),
                LandmarkKind::OrbitalFloor.name(Side::Left),
                LandmarkKind::OrbitalFloor.name(Side::Right),
            ],
            sigma: SIGMA_GLOBAL,
        }
    }

    /// FE, CP, ER per side. The ethmoid roof rides along with the Keros/Gera
    /// points since it lies inside the same patch.
    pub fn local_keros_gera() -> Self {
        let mut channels = Vec::with_capacity(6);
        for side in Side::BOTH {
            for kind in [
                LandmarkKind::FoveaEthmoidalis,
                LandmarkKind::CribriformPlate,
                LandmarkKind::EthmoidRoof,
            ] {
                channels.push(kind.name(side));
            }
        }
        Self {
            kind: StageKind::LocalKerosGera,
            frame_size: PATCH_SIZE,
            channels,
            sigma: SIGMA_LOCAL,
        }
    }

    pub fn local_orbital() -> Self {
        Self {
            kind: StageKind::LocalOrbital,
            frame_size: PATCH_SIZE,
            channels: vec![ORBITAL_FLOOR.to_string()],
            sigma: SIGMA_LOCAL,
        }
    }

    pub fn for_key(key: StageKey, schema: &LandmarkSchema) -> Self {
        match key {
            StageKey::Direct => Self::direct(schema),
            StageKey::Global => Self::global(),
            StageKey::LocalKerosGera => Self::local_keros_gera(),
            StageKey::LocalOrbital(_) => Self::local_orbital(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::InvalidSpec("no channels".into()));
        }
        if !crate::model::unique_names(self.channels.iter().map(String::as_str)) {
            return Err(Error::InvalidSpec("duplicate channel names".into()));
        }
        if self.frame_size == 0 {
            return Err(Error::InvalidSpec("frame size must be positive".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidSpec(format!("sigma {}", self.sigma)));
        }
        Ok(())
    }
}

/// A heatmap stack known to match its stage spec.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorOutput {
    stack: HeatmapStack,
}

impl PredictorOutput {
    pub fn new(stack: HeatmapStack, spec: &StageSpec) -> Result<Self> {
        if stack.height() != spec.frame_size || stack.width() != spec.frame_size {
            return Err(Error::FormatMismatch(format!(
                "{:?} expects {size}x{size} maps, got {}x{}",
                spec.kind,
                stack.height(),
                stack.width(),
                size = spec.frame_size
            )));
        }
        if stack.names() != spec.channels.as_slice() {
            return Err(Error::FormatMismatch(format!(
                "{:?} expects channels {:?}, got {:?}",
                spec.kind,
                spec.channels,
                stack.names()
            )));
        }
        if stack
            .maps()
            .iter()
            .any(|m| m.values().iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFiniteHeatmap);
        }
        Ok(Self { stack })
    }

    pub fn stack(&self) -> &HeatmapStack {
        &self.stack
    }

    pub fn into_stack(self) -> HeatmapStack {
        self.stack
    }
}

/// Everything a producer may look at for one stage of one sample.
#[derive(Debug, Clone, Copy)]
pub struct PredictRequest<'a> {
    pub sample_id: &'a str,
    pub stage: StageKey,
    pub spec: &'a StageSpec,
    /// Frame-sized input image.
    pub image: &'a Array2<f32>,
    /// Ground-truth targets in frame coordinates, when known.
    pub truth: Option<&'a NamedPoints>,
}

pub trait Predictor: Send + Sync {
    /// Short label recorded in reports, e.g. `oracle` or `noisy:2`.
    fn tag(&self) -> String;

    fn predict(&self, request: &PredictRequest<'_>) -> Result<PredictorOutput>;
}

/// Renders the ground truth; the image is ignored.
pub fn oracle_predict(truth: &NamedPoints, spec: &StageSpec) -> Result<PredictorOutput> {
    spec.validate()?;
    let stack = encode_stack(truth, &spec.channels, spec.frame_size, spec.frame_size, spec.sigma)?;
    PredictorOutput::new(stack, spec)
}

/// Ground truth displaced by isotropic Gaussian noise before rendering.
/// Draws are keyed by `(seed, sample, stage, channel)`.
pub fn noisy_oracle_predict(
    truth: &NamedPoints,
    spec: &StageSpec,
    noise_std: f64,
    seed: u64,
    sample_id: &str,
    stage: StageKey,
) -> Result<PredictorOutput> {
    spec.validate()?;
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::InvalidSpec(format!("noise std {noise_std}")));
    }
    if noise_std == 0.0 {
        return oracle_predict(truth, spec);
    }
    let normal = Normal::new(0.0, noise_std).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let mut displaced = NamedPoints::new();
    for name in &spec.channels {
        let p = *truth
            .get(name)
            .ok_or_else(|| Error::MissingLandmark(name.clone()))?;
        let mut rng = derived_rng(
            seed,
            &[sample_id.as_bytes(), stage.tag().as_bytes(), name.as_bytes()],
        );
        let dx = normal.sample(&mut rng);
        let dy = normal.sample(&mut rng);
        displaced.insert(name.clone(), Point2::new(p.x + dx, p.y + dy));
    }
    oracle_predict(&displaced, spec)
}

pub fn hmap_path(dir: &Path, sample_id: &str, stage: StageKey) -> PathBuf {
    dir.join(format!("{sample_id}.{}.hmap", stage.tag()))
}

/// Loads `<dir>/<sample_id>.<stage>.hmap` and checks it against `spec`.
pub fn file_predict(
    dir: &Path,
    sample_id: &str,
    stage: StageKey,
    spec: &StageSpec,
) -> Result<PredictorOutput> {
    let path = hmap_path(dir, sample_id, stage);
    if !path.is_file() {
        return Err(Error::MissingPrediction(path));
    }
    let stack = read_hmap(&path)?;
    if stack.len() != spec.channels.len() {
        return Err(Error::FormatMismatch(format!(
            "{}: {} channels, stage {} expects {}",
            path.display(),
            stack.len(),
            stage.tag(),
            spec.channels.len()
        )));
    }
    PredictorOutput::new(stack, spec)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn tag(&self) -> String {
        "oracle".into()
    }

    fn predict(&self, request: &PredictRequest<'_>) -> Result<PredictorOutput> {
        let truth = request
            .truth
            .ok_or_else(|| Error::InvalidSpec("oracle needs ground truth".into()))?;
        oracle_predict(truth, request.spec)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NoisyOraclePredictor {
    pub noise_std: f64,
    pub seed: u64,
}

impl Predictor for NoisyOraclePredictor {
    fn tag(&self) -> String {
        format!("noisy:{}", self.noise_std)
    }

    fn predict(&self, request: &PredictRequest<'_>) -> Result<PredictorOutput> {
        let truth = request
            .truth
            .ok_or_else(|| Error::InvalidSpec("noisy oracle needs ground truth".into()))?;
        noisy_oracle_predict(
            truth,
            request.spec,
            self.noise_std,
            self.seed,
            request.sample_id,
            request.stage,
        )
    }
}

#[derive(Debug, Clone)]
pub struct FilePredictor {
    pub dir: PathBuf,
}

impl Predictor for FilePredictor {
    fn tag(&self) -> String {
        format!("files:{}", self.dir.display())
    }

    fn predict(&self, request: &PredictRequest<'_>) -> Result<PredictorOutput> {
        file_predict(&self.dir, request.sample_id, request.stage, request.spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatmap::decode;
    use crate::io::write_hmap;
    use crate::model::default_schema;

    fn truth_for(spec: &StageSpec) -> NamedPoints {
        spec.channels
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), Point2::new(20.3 + 7.0 * i as f64, 30.6 + 5.0 * i as f64)))
            .collect()
    }

    #[test]
    fn stage_specs_are_consistent() {
        let schema = default_schema();
        for (spec, size, sigma, n) in [
            (StageSpec::direct(&schema), 256, 2.0, 10),
            (StageSpec::global(), 256, 4.0, 3),
            (StageSpec::local_keros_gera(), 96, 2.0, 6),
            (StageSpec::local_orbital(), 96, 2.0, 1),
        ] {
            spec.validate().unwrap();
            assert_eq!((spec.frame_size, spec.sigma, spec.channels.len()), (size, sigma, n));
        }
        for key in [
            StageKey::Direct,
            StageKey::Global,
            StageKey::LocalKerosGera,
            StageKey::LocalOrbital(Side::Left),
            StageKey::LocalOrbital(Side::Right),
        ] {
            assert_eq!(StageKey::parse(key.tag()), Some(key));
        }
    }

    #[test]
    fn oracle_decodes_to_truth() {
        let spec = StageSpec::local_keros_gera();
        let truth = truth_for(&spec);
        let out = oracle_predict(&truth, &spec).unwrap();
        for (name, hm) in out.stack().iter() {
            assert!(decode(hm, 13).unwrap().distance(&truth[name]) < 0.25);
        }
        let mut empty = spec.clone();
        empty.channels.clear();
        assert!(matches!(oracle_predict(&truth, &empty), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn oracle_ignores_image() {
        let spec = StageSpec::local_orbital();
        let truth = truth_for(&spec);
        let a = Array2::zeros((96, 96));
        let b = Array2::from_elem((96, 96), 0.7f32);
        let req = |img| PredictRequest {
            sample_id: "s",
            stage: StageKey::LocalOrbital(Side::Left),
            spec: &spec,
            image: img,
            truth: Some(&truth),
        };
        assert_eq!(
            OraclePredictor.predict(&req(&a)).unwrap(),
            OraclePredictor.predict(&req(&b)).unwrap()
        );
    }

    #[test]
    fn noisy_oracle_zero_std_and_determinism() {
        let spec = StageSpec::global();
        let truth = truth_for(&spec);
        assert_eq!(
            noisy_oracle_predict(&truth, &spec, 0.0, 1, "s", StageKey::Global).unwrap(),
            oracle_predict(&truth, &spec).unwrap()
        );
        let a = noisy_oracle_predict(&truth, &spec, 1.0, 1, "s", StageKey::Global).unwrap();
        let b = noisy_oracle_predict(&truth, &spec, 1.0, 1, "s", StageKey::Global).unwrap();
        assert_eq!(a, b);
        let c = noisy_oracle_predict(&truth, &spec, 1.0, 1, "t", StageKey::Global).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn file_predictor_contract() {
        let dir = tempfile::tempdir().unwrap();
        let spec = StageSpec::local_keros_gera();
        let stack = oracle_predict(&truth_for(&spec), &spec).unwrap().into_stack();
        let path = hmap_path(dir.path(), "S1", StageKey::LocalKerosGera);
        write_hmap(&stack, &path).unwrap();
        let got = file_predict(dir.path(), "S1", StageKey::LocalKerosGera, &spec).unwrap();
        // stored as f32
        for (a, b) in got.stack().maps().iter().zip(stack.maps()) {
            for (x, y) in a.values().iter().zip(b.values()) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }

        assert!(matches!(
            file_predict(dir.path(), "S2", StageKey::LocalKerosGera, &spec),
            Err(Error::MissingPrediction(_))
        ));

        let orbital = StageSpec::local_orbital();
        write_hmap(&stack, &hmap_path(dir.path(), "S1", StageKey::LocalOrbital(Side::Left))).unwrap();
        assert!(matches!(
            file_predict(dir.path(), "S1", StageKey::LocalOrbital(Side::Left), &orbital),
            Err(Error::FormatMismatch(_))
        ));
    }
}
