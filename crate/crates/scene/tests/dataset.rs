use std::fs;

use prior3d_scene::{
    build_record, generate_dataset, read_dataset, read_scene, scene_id, write_dataset, GenerationConfig, Splits,
    DATASET_FILE, SCENE_MANIFEST,
};

fn small_config() -> GenerationConfig {
    let mut cfg = GenerationConfig::default();
    cfg.scene.rig.width = 48;
    cfg.scene.rig.height = 32;
    cfg
}

#[test]
fn write_read_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let records: Vec<_> = (0..4).map(|i| build_record(&scene_id(i), &cfg, 100 + i as u64).unwrap()).collect();
    let splits = Splits {
        train: vec![scene_id(0), scene_id(1)],
        val: vec![scene_id(2)],
        test: vec![scene_id(3)],
    };
    write_dataset(dir.path(), &records, &splits, &cfg, 100).unwrap();
    let ds = read_dataset(dir.path()).unwrap();
    assert_eq!(ds.splits, splits);
    assert_eq!(ds.meta.scene_count, 4);
    assert_eq!(ds.meta.generation, cfg);
    for r in &records {
        let back = ds.load(&r.id).unwrap();
        assert_eq!(&back, r);
        for (a, b) in back.views.iter().zip(&r.views) {
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.image), bits(&b.image));
            assert_eq!(bits(&a.semantic), bits(&b.semantic));
            assert_eq!(bits(&a.depth), bits(&b.depth));
        }
    }
    assert_eq!(ds.load_split("train").unwrap().len(), 2);
}

#[test]
fn manifest_count_matches_directories() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_dataset(dir.path(), &small_config(), [3, 1, 1], 7, 2).unwrap();
    let dirs = fs::read_dir(dir.path()).unwrap().filter(|e| e.as_ref().unwrap().path().join(SCENE_MANIFEST).is_file()).count();
    assert_eq!(dirs, ds.meta.scene_count);
    assert_eq!(ds.splits.len(), 5);

    fs::remove_dir_all(dir.path().join(scene_id(4))).unwrap();
    assert!(read_dataset(dir.path()).is_err());
}

#[test]
fn generation_is_independent_of_job_count() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate_dataset(a.path(), &small_config(), [3, 1, 1], 11, 1).unwrap();
    generate_dataset(b.path(), &small_config(), [3, 1, 1], 11, 3).unwrap();
    for i in 0..5 {
        for f in ["manifest.json", "image.bin", "semantic.bin", "depth.bin", "lidar.bin"] {
            let pa = a.path().join(scene_id(i)).join(f);
            assert_eq!(fs::read(&pa).unwrap(), fs::read(b.path().join(scene_id(i)).join(f)).unwrap(), "{f}");
        }
    }
    assert_eq!(fs::read(a.path().join(DATASET_FILE)).unwrap(), fs::read(b.path().join(DATASET_FILE)).unwrap());
}

#[test]
fn truncated_or_corrupt_files_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(dir.path(), &small_config(), [1, 0, 0], 3, 1).unwrap();
    let scene = dir.path().join(scene_id(0));
    assert!(read_scene(&scene).is_ok());

    let blob = scene.join("depth.bin");
    let bytes = fs::read(&blob).unwrap();
    fs::write(&blob, &bytes[..bytes.len() - 6]).unwrap();
    let err = read_scene(&scene).unwrap_err().to_string();
    assert!(err.contains("depth.bin"), "{err}");
    fs::write(&blob, &bytes).unwrap();

    let manifest = scene.join(SCENE_MANIFEST);
    let text = fs::read_to_string(&manifest).unwrap();
    fs::write(&manifest, &text[..text.len() / 2]).unwrap();
    assert!(read_scene(&scene).is_err());
    fs::remove_file(&manifest).unwrap();
    assert!(read_scene(&scene).is_err());
}
