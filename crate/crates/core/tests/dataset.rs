use skullbase::io::{load_image, read_annotation_file, Manifest};
use skullbase::measure::measure_side;
use skullbase::synth::{generate_dataset, ClassMix, SynthConfig};
use skullbase::{default_schema, Side};

fn tree(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["", "images", "annotations"] {
        let d = dir.join(sub);
        let mut names: Vec<_> = std::fs::read_dir(&d)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.is_file())
            .collect();
        names.sort();
        for p in names {
            let rel = p.strip_prefix(dir).unwrap().display().to_string();
            out.push((rel, std::fs::read(&p).unwrap()));
        }
    }
    out
}

#[test]
fn dataset_is_reproducible_and_loadable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = SynthConfig::default();
    let entries = generate_dataset(6, 1, &ClassMix::default(), &cfg, a.path()).unwrap();
    generate_dataset(6, 1, &ClassMix::default(), &cfg, b.path()).unwrap();
    assert_eq!(tree(a.path()), tree(b.path()));
    assert_eq!(tree(a.path()).len(), 13);

    let manifest = Manifest::read(&a.path().join("manifest.json")).unwrap();
    assert_eq!(manifest.entries, entries);
    let schema = default_schema();
    for e in &manifest.entries {
        let ann_path = manifest.resolve(&e.annotations);
        let ann = read_annotation_file(&ann_path, &schema).unwrap();
        assert_eq!(ann.sample_id, e.sample_id);
        let image_path = ann_path.parent().unwrap().join(&ann.image);
        assert_eq!(image_path.canonicalize().unwrap(), manifest.resolve(&e.image).canonicalize().unwrap());
        let img = load_image(&image_path, ann.spacing, &e.patient_id, &e.sample_id).unwrap();
        let set = ann.to_annotation_set(schema.clone(), img.width(), img.height()).unwrap();
        for side in Side::BOTH {
            measure_side(&set, side, img.spacing()).unwrap();
        }
    }
}

#[test]
fn different_seeds_differ() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = SynthConfig::default();
    generate_dataset(2, 1, &ClassMix::default(), &cfg, a.path()).unwrap();
    generate_dataset(2, 2, &ClassMix::default(), &cfg, b.path()).unwrap();
    assert_ne!(tree(a.path()), tree(b.path()));
}
