use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use skullbase::eval::{evaluate, grouped_folds, FoldPlan, SPLIT_GROUPS};
use skullbase::heatmap::{decode, encode_stack};
use skullbase::io::{
    load_image, read_annotation_file, read_hmap, read_json, read_report, render_overlay,
    to_json_bytes, write_hmap, write_json, write_report, AnnotationFile, Manifest, ManifestEntry,
};
use skullbase::pipeline::{self, score_groundtruth, PipelineConfig, Sample, StageBindings};
use skullbase::synth::{generate_dataset, ClassMix, SynthConfig};
use skullbase::{
    default_schema, Error, FilePredictor, Mode, NamedPoints, NoisyOraclePredictor,
    OraclePredictor, Predictor, ReportStatus, SliceImage, SliceReport, Spacing,
};

/// Failure of a command, mapped onto the process exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_internal() {
            CliError::Internal(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

fn context(what: &str) -> impl Fn(Error) -> CliError + '_ {
    move |e| match CliError::from(e) {
        CliError::Data(m) => CliError::Data(format!("{what}: {m}")),
        CliError::Internal(m) => CliError::Internal(format!("{what}: {m}")),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictorArg {
    Oracle,
    Noisy(f64),
    Files(PathBuf),
}

pub fn parse_predictor(s: &str) -> Result<PredictorArg, String> {
    if s == "oracle" {
        return Ok(PredictorArg::Oracle);
    }
    if let Some(std) = s.strip_prefix("noisy:") {
        let v: f64 = std.parse().map_err(|_| format!("bad noise std `{std}`"))?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(format!("noise std must be finite and non-negative, got {v}"));
        }
        return Ok(PredictorArg::Noisy(v));
    }
    if let Some(dir) = s.strip_prefix("files:") {
        if dir.is_empty() {
            return Err("files: needs a directory".into());
        }
        return Ok(PredictorArg::Files(PathBuf::from(dir)));
    }
    Err(format!("expected oracle, noisy:STD or files:DIR, got `{s}`"))
}

impl PredictorArg {
    fn build(&self, seed: u64) -> Arc<dyn Predictor> {
        match self {
            PredictorArg::Oracle => Arc::new(OraclePredictor),
            PredictorArg::Noisy(std) => Arc::new(NoisyOraclePredictor {
                noise_std: *std,
                seed,
            }),
            PredictorArg::Files(dir) => Arc::new(FilePredictor { dir: dir.clone() }),
        }
    }
}

fn parse_mix(s: &str) -> Result<[f64; 3], CliError> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(CliError::Usage(format!("mix `{s}` needs three comma-separated values")));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p
            .parse()
            .map_err(|_| CliError::Usage(format!("mix value `{p}` is not a number")))?;
    }
    Ok(out)
}

fn emit(bytes: &[u8], out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| CliError::Data(format!("{}: {e}", parent.display())))?;
            }
            std::fs::write(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
        }
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| CliError::Internal(format!("stdout: {e}"))),
    }
}

pub fn synth(n: usize, seed: u64, out: &Path, mix: [Option<String>; 3]) -> Result<(), CliError> {
    let mut m = ClassMix::default();
    let [k, g, t] = mix;
    if let Some(k) = k {
        m.keros = parse_mix(&k)?;
    }
    if let Some(g) = g {
        m.gera = parse_mix(&g)?;
    }
    if let Some(t) = t {
        m.tms = parse_mix(&t)?;
    }
    let entries = generate_dataset(n, seed, &m, &SynthConfig::default(), out)?;
    println!("wrote {} samples to {}", entries.len(), out.display());
    Ok(())
}

/// An annotation file with its image, validated against the default schema.
struct Loaded {
    file: AnnotationFile,
    image: SliceImage,
    truth: skullbase::AnnotationSet,
}

fn load_annotated(ann_path: &Path, patient_hint: Option<&ManifestEntry>) -> Result<Loaded, CliError> {
    let schema = default_schema();
    let file = read_annotation_file(ann_path, &schema)?;
    let base = ann_path.parent().unwrap_or(Path::new("."));
    let image_path = base.join(&file.image);
    let patient = patient_hint.map_or(file.patient_id.as_str(), |e| e.patient_id.as_str());
    let image = load_image(&image_path, file.spacing, patient, &file.sample_id)?;
    let truth = file.to_annotation_set(schema, image.width(), image.height())?;
    Ok(Loaded { file, image, truth })
}

pub fn score(annotations: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let l = load_annotated(annotations, None)?;
    let report = score_groundtruth(&l.file.sample_id, &l.image, &l.truth)?;
    emit(&to_json_bytes(&report)?, out)
}

pub struct RunOptions {
    pub mode: Mode,
    pub global: PredictorArg,
    pub local: PredictorArg,
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub resume: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    sample_id: String,
    report: String,
    status: ReportStatus,
}

fn report_name(sample_id: &str) -> String {
    format!("{sample_id}.report.json")
}

fn run_one(
    entry: &ManifestEntry,
    manifest: &Manifest,
    opts: &RunOptions,
    bindings: &StageBindings,
    config: &PipelineConfig,
) -> Result<SliceReport, CliError> {
    let path = opts.out.join(report_name(&entry.sample_id));
    if opts.resume && path.is_file() {
        if let Ok(r) = read_report(&path) {
            if r.mode == opts.mode && r.predictor == bindings.tag(opts.mode) && r.sample_id == entry.sample_id {
                return Ok(r);
            }
        }
    }
    let l = load_annotated(&manifest.resolve(&entry.annotations), Some(entry))?;
    if l.file.sample_id != entry.sample_id {
        return Err(CliError::Data(format!(
            "manifest sample {} points at annotations for {}",
            entry.sample_id, l.file.sample_id
        )));
    }
    let sample = Sample {
        id: l.file.sample_id,
        image: l.image,
        truth: Some(l.truth),
    };
    let report = pipeline::run(&sample, bindings, config)?;
    write_report(&path, &report)?;
    Ok(report)
}

pub fn run(opts: RunOptions) -> Result<(), CliError> {
    let manifest = Manifest::read(&opts.manifest)?;
    if manifest.entries.is_empty() {
        return Err(CliError::Data(format!("{}: empty manifest", opts.manifest.display())));
    }
    let bindings = StageBindings {
        global: opts.global.build(opts.seed),
        local: opts.local.build(opts.seed),
    };
    let config = PipelineConfig::new(opts.mode);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let results: Vec<Result<SliceReport, CliError>> = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|e| {
                run_one(e, &manifest, &opts, &bindings, &config)
                    .map_err(|err| match err {
                        CliError::Data(m) => CliError::Data(format!("{}: {m}", e.sample_id)),
                        CliError::Internal(m) => CliError::Internal(format!("{}: {m}", e.sample_id)),
                        other => other,
                    })
            })
            .collect()
    });

    let mut index = Vec::new();
    let mut first_error = None;
    let mut unscorable = Vec::new();
    for r in results {
        match r {
            Ok(report) => {
                if report.status == ReportStatus::Unscorable {
                    unscorable.push(report.sample_id.clone());
                }
                index.push(IndexEntry {
                    report: report_name(&report.sample_id),
                    sample_id: report.sample_id,
                    status: report.status,
                });
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    write_json(&opts.out.join("index.json"), &index)?;
    if let Some(e) = first_error {
        return Err(e);
    }
    if !unscorable.is_empty() {
        return Err(CliError::Data(format!(
            "{} unscorable sample(s): {}",
            unscorable.len(),
            unscorable.join(", ")
        )));
    }
    println!("wrote {} reports to {}", index.len(), opts.out.display());
    Ok(())
}

pub fn eval(pred_dir: &Path, manifest_path: &Path, out: &Path) -> Result<(), CliError> {
    let manifest = Manifest::read(manifest_path)?;
    let loaded: Vec<(SliceReport, SliceReport, Spacing)> = manifest
        .entries
        .par_iter()
        .map(|e| -> Result<_, CliError> {
            let pred_path = pred_dir.join(report_name(&e.sample_id));
            if !pred_path.is_file() {
                return Err(CliError::Data(format!(
                    "{}: no report at {}",
                    e.sample_id,
                    pred_path.display()
                )));
            }
            let pred = read_report(&pred_path)?;
            let l = load_annotated(&manifest.resolve(&e.annotations), Some(e))?;
            let gt = score_groundtruth(&e.sample_id, &l.image, &l.truth)?;
            Ok((pred, gt, l.image.spacing()))
        })
        .collect::<Result<_, _>>()?;
    let mut pred = Vec::with_capacity(loaded.len());
    let mut gt = Vec::with_capacity(loaded.len());
    let mut spacings = Vec::with_capacity(loaded.len());
    for (p, g, s) in loaded {
        pred.push(p);
        gt.push(g);
        spacings.push(s);
    }
    let metrics = evaluate(&pred, &gt, &spacings)?;
    write_json(out, &metrics)?;
    let m = &metrics.measurements;
    println!(
        "landmark MAE {:.3} mm, MAXE {:.3} mm; keros {:.3} mm, gera {:.3} deg, tms1 {:.3} mm, tms2 {:.3} mm",
        metrics.landmark.mae_mm, metrics.landmark.maxe_mm, m.keros_mm, m.gera_deg, m.tms1_mm, m.tms2_mm
    );
    Ok(())
}

#[derive(Serialize)]
struct SplitFile {
    #[serde(flatten)]
    plan: FoldPlan,
    /// Sample ids per group.
    samples: Vec<Vec<String>>,
}

pub fn split(manifest_path: &Path, seed: u64, out: &Path) -> Result<(), CliError> {
    let manifest = Manifest::read(manifest_path)?;
    let patients: Vec<&str> = manifest.entries.iter().map(|e| e.patient_id.as_str()).collect();
    let plan = grouped_folds(&patients, SPLIT_GROUPS, seed)?;
    let mut samples = vec![Vec::new(); plan.groups.len()];
    for e in &manifest.entries {
        let g = plan
            .group_of(&e.patient_id)
            .ok_or_else(|| CliError::Internal(format!("patient {} left unassigned", e.patient_id)))?;
        samples[g].push(e.sample_id.clone());
    }
    write_json(out, &SplitFile { plan, samples })?;
    Ok(())
}

pub fn overlay(annotations: &Path, image: &Path, out: &Path) -> Result<(), CliError> {
    let value: serde_json::Value = read_json(annotations)?;
    let (report, spacing) = if value.get("sides").is_some() {
        let report: SliceReport = serde_json::from_value(value)
            .map_err(|e| CliError::Data(format!("{}: {e}", annotations.display())))?;
        (report, Spacing { x: 1.0, y: 1.0 })
    } else {
        let file = read_annotation_file(annotations, &default_schema())?;
        let pixels = skullbase::io::load_pixels(image)?;
        let (h, w) = pixels.dim();
        let ann = file.to_annotation_set(default_schema(), w, h)?;
        let slice = SliceImage::new(pixels, file.spacing, &file.patient_id, &file.sample_id)?;
        (score_groundtruth(&file.sample_id, &slice, &ann)?, file.spacing)
    };
    let slice = load_image(image, spacing, "", &report.sample_id)?;
    render_overlay(&slice, &report, out)?;
    Ok(())
}

fn read_points(path: &Path) -> Result<NamedPoints, CliError> {
    let value: serde_json::Value = read_json(path)?;
    let points = value.get("landmarks").cloned().unwrap_or(value);
    serde_json::from_value(points).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn hmap_encode(
    points: &Path,
    height: usize,
    width: usize,
    sigma: f64,
    channels: &[String],
    out: &Path,
) -> Result<(), CliError> {
    let pts = read_points(points)?;
    let names: Vec<String> = if channels.is_empty() {
        pts.keys().cloned().collect()
    } else {
        channels.to_vec()
    };
    let stack = encode_stack(&pts, &names, height, width, sigma).map_err(context("encode"))?;
    write_hmap(&stack, out)?;
    Ok(())
}

pub fn hmap_decode(input: &Path, window: usize, out: Option<&Path>) -> Result<(), CliError> {
    let stack = read_hmap(input)?;
    let mut decoded = NamedPoints::new();
    for (name, hm) in stack.iter() {
        let p = decode(hm, window).map_err(context(name))?;
        decoded.insert(name.to_string(), p);
    }
    emit(&to_json_bytes(&decoded)?, out)
}

#[derive(Serialize)]
struct ChannelSummary {
    max: f64,
    argmax: [usize; 2],
    sum: f64,
}

#[derive(Serialize)]
struct HmapSummary {
    channels: usize,
    height: usize,
    width: usize,
    maps: BTreeMap<String, ChannelSummary>,
}

pub fn hmap_inspect(input: &Path) -> Result<(), CliError> {
    let stack = read_hmap(input)?;
    let maps = stack
        .iter()
        .map(|(name, hm)| {
            let (mut max, mut argmax) = (f64::NEG_INFINITY, [0, 0]);
            for ((y, x), &v) in hm.values().indexed_iter() {
                if v > max {
                    max = v;
                    argmax = [x, y];
                }
            }
            (
                name.to_string(),
                ChannelSummary {
                    max,
                    argmax,
                    sum: hm.values().sum(),
                },
            )
        })
        .collect();
    let summary = HmapSummary {
        channels: stack.len(),
        height: stack.height(),
        width: stack.width(),
        maps,
    };
    emit(&to_json_bytes(&summary)?, None)
}
