use std::fs;

use dive_core::data::{read_dataset, sample_dataset, write_dataset, DatasetConfig};
use dive_core::engine::FisherEstimate;
use dive_core::models::{Classifier, ModelCheckpoint, Oracle, ReconMode, Vae};
use dive_core::tensor::SeededRng;
use dive_core::Error;

fn bump_version(bytes: &mut [u8]) {
    bytes[4] = bytes[4].wrapping_add(1);
}

fn assert_version_error(err: Error) {
    let msg = err.to_string();
    assert!(matches!(err, Error::Version { .. }), "{msg}");
    assert!(msg.contains("file has 2") && msg.contains("reads 1"), "{msg}");
}

#[test]
fn checkpoints_round_trip_byte_identical() {
    let mut rng = SeededRng::new(1);
    let cps = [
        ModelCheckpoint::Vae(Vae::new(4, ReconMode::Perceptual, &mut rng)),
        ModelCheckpoint::Classifier(Classifier::new(&mut rng)),
        ModelCheckpoint::Oracle(Oracle::new(&mut rng)),
    ];
    for cp in cps {
        let bytes = cp.to_bytes();
        let back = ModelCheckpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes, "{}", cp.kind());

        let mut bad = bytes.clone();
        bump_version(&mut bad);
        assert_version_error(ModelCheckpoint::from_bytes(&bad).unwrap_err());
        bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(ModelCheckpoint::from_bytes(&bad), Err(Error::BadMagic { .. })));
        assert!(ModelCheckpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}

#[test]
fn fisher_cache_round_trips_and_rejects_versions() {
    let f = FisherEstimate::from_matrix(2, vec![1.0, 0.25, 0.25, 3.0]).unwrap();
    let bytes = f.to_bytes();
    assert_eq!(&bytes[..4], b"DIVF");
    assert_eq!(FisherEstimate::from_bytes(&bytes).unwrap().to_bytes(), bytes);
    let mut bad = bytes.clone();
    bump_version(&mut bad);
    assert_version_error(FisherEstimate::from_bytes(&bad).unwrap_err());
}

#[test]
fn dataset_files_round_trip_byte_identical() {
    let cfg = DatasetConfig {
        n_samples: 40,
        bias_strength: 0.5,
        ood_shape_ids: vec![3, 9],
        ..DatasetConfig::default()
    };
    let ds = sample_dataset(&cfg, &mut SeededRng::new(8)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.divd");
    let b = dir.path().join("b.divd");
    write_dataset(&a, &ds).unwrap();
    let back = read_dataset(&a).unwrap();
    write_dataset(&b, &back).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read(a.with_extension("toml")).unwrap(), fs::read(b.with_extension("toml")).unwrap());
    assert_eq!(back.generative_train, ds.generative_train);

    let mut bytes = fs::read(&a).unwrap();
    bump_version(&mut bytes);
    fs::write(&a, &bytes).unwrap();
    assert_version_error(read_dataset(&a).unwrap_err());
}
