use textbin::image::RgbImage;
use textbin::textrender::corpus::MANIFEST_FILE;
use textbin::textrender::{generate_corpus, ocr_oracle, render, CorpusConfig, CorpusManifest};

#[test]
fn manifest_round_trips_and_images_match_specs() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_corpus(12, 5, &CorpusConfig::default(), dir.path()).unwrap();
    let loaded = CorpusManifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(loaded.records, m.records);
    assert!(loaded.verify().unwrap().is_empty());
    for (i, r) in loaded.records.iter().enumerate() {
        let img = loaded.load_image(i).unwrap();
        assert_eq!(img.as_bytes(), render(&r.spec).unwrap().as_bytes());
        assert_eq!(ocr_oracle(&img, &r.spec.geometry).unwrap(), r.spec.text);
        assert!(r.prompt.ends_with(&r.spec.text));
    }
    let t = loaded.load_tensor().unwrap();
    assert_eq!(t.shape(), &[12, 3, 64, 64]);
}

#[test]
fn same_seed_gives_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = generate_corpus(6, 9, &CorpusConfig::default(), a.path()).unwrap();
    generate_corpus(6, 9, &CorpusConfig::default(), b.path()).unwrap();
    let read = |d: &std::path::Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(a.path(), MANIFEST_FILE), read(b.path(), MANIFEST_FILE));
    for r in &ma.records {
        assert_eq!(read(a.path(), &r.image), read(b.path(), &r.image));
    }
    let other = tempfile::tempdir().unwrap();
    generate_corpus(6, 10, &CorpusConfig::default(), other.path()).unwrap();
    assert_ne!(
        read(a.path(), MANIFEST_FILE),
        read(other.path(), MANIFEST_FILE)
    );
}

#[test]
fn tampered_image_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_corpus(3, 1, &CorpusConfig::default(), dir.path()).unwrap();
    let path = m.image_path(&m.records[1]);
    let mut img = RgbImage::load_ppm(&path).unwrap();
    let [r, g, b] = img.get(0, 0);
    img.set(0, 0, [r ^ 0xff, g, b]);
    img.save_ppm(&path).unwrap();
    assert_eq!(m.verify().unwrap(), vec![1]);
}
