use std::sync::{Arc, Mutex};

use ndarray::Array2;
use rayon::prelude::*;

use skullbase::eval::landmark_errors;
use skullbase::frames::{hflip, patch_rect, CropRect};
use skullbase::heatmap::{encode, HeatmapStack};
use skullbase::io::write_hmap;
use skullbase::pipeline::{
    refine_orbital, run_direct, run_g2l, score_groundtruth, PipelineConfig, Sample, StageBindings,
};
use skullbase::predictor::{hmap_path, oracle_predict, StageKey};
use skullbase::synth::{generate_samples, ClassMix, SynthConfig};
use skullbase::{
    Error, FilePredictor, Mode, NoisyOraclePredictor, OraclePredictor, Point2, PredictRequest,
    Predictor, PredictorOutput, ReportStatus, Result, Side, SliceReport,
};

fn samples(n: usize, seed: u64) -> Vec<Sample> {
    generate_samples(n, seed, &ClassMix::default(), &SynthConfig::default())
        .unwrap()
        .into_iter()
        .map(|s| Sample {
            id: s.sample_id,
            image: s.image,
            truth: Some(s.annotations),
        })
        .collect()
}

fn g2l() -> PipelineConfig {
    PipelineConfig::new(Mode::G2l)
}

#[test]
fn reported_landmarks_reproject_into_frames() {
    let oracle = StageBindings::uniform(Arc::new(OraclePredictor));
    for s in samples(5, 1) {
        for report in [
            run_g2l(&s, &oracle, &g2l()).unwrap(),
            run_direct(&s, &oracle, &PipelineConfig::new(Mode::Direct)).unwrap(),
        ] {
            for frame in &report.frames {
                for (name, decoded) in &frame.decoded {
                    let original = match (frame.stage.as_str(), name.as_str()) {
                        ("global", _) => report.global_px.as_ref().unwrap()[name],
                        ("local_of_left", "OF") => report.landmarks_px["OF_left"],
                        ("local_of_right", "OF") => report.landmarks_px["OF_right"],
                        _ => report.landmarks_px[name],
                    };
                    let back = frame.transform.to_frame(original);
                    assert!(back.distance(decoded) < 1e-6, "{} {name}", frame.stage);
                }
            }
        }
    }
}

#[test]
fn g2l_oracle_agrees_with_groundtruth_scoring() {
    let oracle = StageBindings::uniform(Arc::new(OraclePredictor));
    for s in samples(10, 2) {
        let gt = score_groundtruth(&s.id, &s.image, s.truth.as_ref().unwrap()).unwrap();
        let r = run_g2l(&s, &oracle, &g2l()).unwrap();
        for side in Side::BOTH {
            let (m, c) = r.sides.get(side).get().unwrap();
            let (gm, gc) = gt.sides.get(side).get().unwrap();
            assert!((m.keros_depth_mm - gm.keros_depth_mm).abs() < 0.05);
            assert!((m.gera_angle_deg - gm.gera_angle_deg).abs() < 0.5);
            assert!((m.tms1_mm - gm.tms1_mm).abs() < 0.05);
            assert!((m.tms2_mm - gm.tms2_mm).abs() < 0.05);
            assert_eq!(c, gc);
        }
    }
}

#[test]
fn landmark_error_grows_with_noise() {
    let data = samples(200, 3);
    let truth: Vec<_> = data.iter().map(|s| s.truth.as_ref().unwrap().to_named()).collect();
    let spacings: Vec<_> = data.iter().map(|s| s.image.spacing()).collect();
    let mut last = -1.0;
    for std in [0.25, 0.5, 1.0, 2.0] {
        let b = StageBindings::uniform(Arc::new(NoisyOraclePredictor {
            noise_std: std,
            seed: 4,
        }));
        let pred: Vec<_> = data
            .par_iter()
            .map(|s| run_g2l(s, &b, &g2l()).unwrap().landmarks_px)
            .collect();
        let gt: Vec<_> = truth
            .iter()
            .map(|t| t.iter().filter(|(k, _)| pred[0].contains_key(*k)).map(|(k, v)| (k.clone(), *v)).collect())
            .collect();
        let e = landmark_errors(&pred, &gt, &spacings).unwrap();
        assert!(e.mae_mm > last, "std {std}: {} <= {last}", e.mae_mm);
        assert!(e.maxe_mm >= e.mae_mm);
        last = e.mae_mm;
    }
}

#[test]
fn flipped_slice_swaps_sides() {
    let oracle = StageBindings::uniform(Arc::new(OraclePredictor));
    for s in samples(5, 4) {
        let ann = s.truth.as_ref().unwrap();
        let (img, fann) = hflip(&s.image, ann).unwrap();
        let a = score_groundtruth(&s.id, &s.image, ann).unwrap();
        let b = score_groundtruth(&s.id, &img, &fann).unwrap();
        for side in Side::BOTH {
            let (ma, ca) = a.sides.get(side).get().unwrap();
            let (mb, cb) = b.sides.get(side.opposite()).get().unwrap();
            assert!((ma.keros_depth_mm - mb.keros_depth_mm).abs() < 1e-9);
            assert!((ma.gera_angle_deg - mb.gera_angle_deg).abs() < 1e-9);
            assert!((ma.tms1_mm - mb.tms1_mm).abs() < 1e-9);
            assert!((ma.tms2_mm - mb.tms2_mm).abs() < 1e-9);
            assert_eq!(ca, cb);
        }
        let flipped = Sample {
            id: s.id.clone(),
            image: img,
            truth: Some(fann),
        };
        let r = run_g2l(&flipped, &oracle, &g2l()).unwrap();
        let (m, _) = r.sides.get(Side::Right).get().unwrap();
        let (gm, _) = a.sides.get(Side::Left).get().unwrap();
        assert!((m.keros_depth_mm - gm.keros_depth_mm).abs() < 0.05);
    }
}

/// Puts the peak on the brightest pixel of the patch it is given.
struct Brightest;

impl Predictor for Brightest {
    fn tag(&self) -> String {
        "brightest".into()
    }

    fn predict(&self, req: &PredictRequest<'_>) -> Result<PredictorOutput> {
        let (mut best, mut at) = (f32::MIN, (0, 0));
        for ((y, x), &v) in req.image.indexed_iter() {
            if v > best {
                best = v;
                at = (x, y);
            }
        }
        let n = req.spec.frame_size;
        let p = Point2::new(at.0 as f64, at.1 as f64);
        let maps = req
            .spec
            .channels
            .iter()
            .map(|c| Ok((c.clone(), encode(p, n, n, req.spec.sigma, req.spec.sigma)?)))
            .collect::<Result<Vec<_>>>()?;
        PredictorOutput::new(HeatmapStack::new(n, n, maps)?, req.spec)
    }
}

#[test]
fn orbital_sides_are_independent_samples() {
    let mut pixels = Array2::<f32>::zeros((200, 300));
    pixels[[60, 70]] = 1.0;
    pixels[[130, 220]] = 0.9;
    let image = skullbase::SliceImage::new(pixels, skullbase::Spacing::isotropic(0.45).unwrap(), "", "")
        .unwrap();
    let sample = Sample {
        id: "swap".into(),
        image,
        truth: None,
    };
    let a = patch_rect(Point2::new(75.0, 65.0), 96, 200, 300).unwrap();
    let b = patch_rect(Point2::new(210.0, 120.0), 96, 200, 300).unwrap();
    let run = |side, rect: CropRect| refine_orbital(&Brightest, &sample, side, rect, &g2l()).unwrap().1.unwrap();
    let (l1, r1) = (run(Side::Left, a), run(Side::Right, b));
    let (l2, r2) = (run(Side::Left, b), run(Side::Right, a));
    assert_eq!(l1, r2);
    assert_eq!(r1, l2);
    assert!(l1.distance(&Point2::new(70.0, 60.0)) < 1e-9);
    assert!(r1.distance(&Point2::new(220.0, 130.0)) < 1e-9);
}

/// Global stage pinned to the frame corner; locals are exact.
struct CornerGlobal;

impl Predictor for CornerGlobal {
    fn tag(&self) -> String {
        "corner".into()
    }

    fn predict(&self, req: &PredictRequest<'_>) -> Result<PredictorOutput> {
        let pts = req
            .spec
            .channels
            .iter()
            .map(|c| (c.clone(), Point2::new(0.0, 0.0)))
            .collect();
        oracle_predict(&pts, req.spec)
    }
}

#[test]
fn corner_estimates_shift_patches_to_fit() {
    let s = &samples(1, 5)[0];
    let b = StageBindings {
        global: Arc::new(CornerGlobal),
        local: Arc::new(OraclePredictor),
    };
    let r = run_g2l(s, &b, &g2l()).unwrap();
    for f in &r.frames[1..] {
        let rect = f.transform.rect();
        assert_eq!((rect.x0, rect.y0), (0, 0));
    }
    assert_eq!(r.frames.len(), 4);
    assert_eq!(r.predictor, "global=corner;local=oracle");
}

/// Oracle that also stores every output as an HMAP file.
struct Recorder {
    dir: std::path::PathBuf,
    calls: Mutex<Vec<String>>,
}

impl Predictor for Recorder {
    fn tag(&self) -> String {
        "oracle".into()
    }

    fn predict(&self, req: &PredictRequest<'_>) -> Result<PredictorOutput> {
        let out = OraclePredictor.predict(req)?;
        write_hmap(out.stack(), &hmap_path(&self.dir, req.sample_id, req.stage))?;
        self.calls.lock().unwrap().push(req.stage.tag().to_string());
        Ok(out)
    }
}

fn assert_close(a: &SliceReport, b: &SliceReport) {
    assert_eq!(a.landmarks_px.len(), b.landmarks_px.len());
    for (k, p) in &a.landmarks_px {
        assert!(p.distance(&b.landmarks_px[k]) < 1e-4, "{k}");
    }
    for side in Side::BOTH {
        assert_eq!(a.sides.get(side).classes, b.sides.get(side).classes);
    }
}

#[test]
fn file_predictor_replays_recorded_stages() {
    let dir = tempfile::tempdir().unwrap();
    let s = &samples(1, 6)[0];
    for mode in [Mode::G2l, Mode::Direct] {
        let rec = Arc::new(Recorder {
            dir: dir.path().to_path_buf(),
            calls: Mutex::new(Vec::new()),
        });
        let config = PipelineConfig::new(mode);
        let a = skullbase::pipeline::run(s, &StageBindings::uniform(rec.clone()), &config).unwrap();
        let files = StageBindings::uniform(Arc::new(FilePredictor {
            dir: dir.path().to_path_buf(),
        }));
        let no_truth = Sample {
            truth: None,
            ..s.clone()
        };
        let b = skullbase::pipeline::run(&no_truth, &files, &config).unwrap();
        assert_close(&a, &b);
        assert_eq!(b.status, ReportStatus::Ok);
        let calls = rec.calls.lock().unwrap().clone();
        match mode {
            Mode::G2l => assert_eq!(calls, ["global", "local_kg", "local_of_left", "local_of_right"]),
            _ => assert_eq!(calls, ["direct"]),
        }
    }
    for key in [StageKey::Global, StageKey::LocalKerosGera, StageKey::Direct] {
        assert!(hmap_path(dir.path(), &s.id, key).is_file());
    }
}

#[test]
fn missing_hmap_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let s = &samples(1, 7)[0];
    let files = StageBindings::uniform(Arc::new(FilePredictor {
        dir: dir.path().to_path_buf(),
    }));
    match run_g2l(s, &files, &g2l()) {
        Err(Error::MissingPrediction(p)) => {
            assert!(p.ends_with(format!("{}.global.hmap", s.id)))
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn parallel_runs_match_serial_runs() {
    let data = samples(12, 8);
    let b = StageBindings::uniform(Arc::new(NoisyOraclePredictor {
        noise_std: 1.5,
        seed: 2,
    }));
    let par: Vec<_> = data.par_iter().map(|s| run_g2l(s, &b, &g2l()).unwrap()).collect();
    let ser: Vec<_> = data.iter().map(|s| run_g2l(s, &b, &g2l()).unwrap()).collect();
    assert_eq!(par, ser);
}
