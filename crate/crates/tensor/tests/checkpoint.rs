use prior3d_tensor::checkpoint::{self, CheckpointError, BLOB_FILE, MANIFEST_FILE};
use prior3d_tensor::{ParamStore, Tensor};

fn store() -> ParamStore {
    let mut s = ParamStore::new();
    s.insert("a.weight", Tensor::new([2, 3], vec![1.0, -2.5, 0.125, 3.0, 4.0, -0.0]).unwrap());
    s.insert("a.bias", Tensor::vector(vec![0.5, 0.25, -8.0]));
    s
}

#[test]
fn round_trip_preserves_f32_values_and_layout() {
    let dir = tempfile::tempdir().unwrap();
    let src = store();
    checkpoint::save(dir.path(), &src, serde_json::json!({"d": 8})).unwrap();

    let manifest = checkpoint::read_manifest(dir.path()).unwrap();
    assert_eq!(manifest.tensors[0].offset, 0);
    assert_eq!(manifest.tensors[1].offset, 6 * 4);
    assert_eq!(manifest.blob_bytes, 9 * 4);
    assert_eq!(manifest.meta["d"], 8);

    let mut dst = store();
    for id in dst.ids() {
        dst.value_mut(id).data_mut().fill(0.0);
    }
    checkpoint::load_into(dir.path(), &mut dst).unwrap();
    for id in src.ids() {
        assert_eq!(src.value(id), dst.value(id));
    }
    let blob = std::fs::read(dir.path().join(BLOB_FILE)).unwrap();
    assert_eq!(&blob[4..8], &(-2.5f32).to_le_bytes());
}

#[test]
fn truncated_blob_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    checkpoint::save(dir.path(), &store(), serde_json::Value::Null).unwrap();
    let path = dir.path().join(BLOB_FILE);
    let blob = std::fs::read(&path).unwrap();
    std::fs::write(&path, &blob[..blob.len() - 3]).unwrap();
    let err = checkpoint::load_into(dir.path(), &mut store()).unwrap_err();
    assert!(matches!(err, CheckpointError::Corrupt(_)), "{err}");
}

#[test]
fn shape_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    checkpoint::save(dir.path(), &store(), serde_json::Value::Null).unwrap();
    let mut other = ParamStore::new();
    other.insert("a.weight", Tensor::zeros([3, 2]));
    other.insert("a.bias", Tensor::zeros([3]));
    let err = checkpoint::load_into(dir.path(), &mut other).unwrap_err();
    assert!(matches!(err, CheckpointError::Mismatch(_)));
    std::fs::write(dir.path().join(MANIFEST_FILE), b"{not json").unwrap();
    assert!(matches!(
        checkpoint::load_into(dir.path(), &mut store()),
        Err(CheckpointError::Manifest(_))
    ));
}
