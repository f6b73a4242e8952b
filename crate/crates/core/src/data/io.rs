use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::render::IMAGE_PIXELS;
use super::{Dataset, DatasetConfig, FactorVector, SampleRecord};
use crate::{Error, Result};

pub const DATASET_MAGIC: [u8; 4] = *b"DIVD";
pub const DATASET_VERSION: u16 = 1;

const RECORD_BYTES: usize = IMAGE_PIXELS * 4 + 6 * 4 + 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    magic: String,
    version: u16,
    seed: u64,
    records: usize,
    config: DatasetConfig,
    splits: Splits,
}

#[derive(Debug, Serialize, Deserialize)]
struct Splits {
    train: Vec<usize>,
    val: Vec<usize>,
    generative_train: Vec<usize>,
}

/// Sidecar manifest path for a dataset file (`.toml` next to it).
pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("toml")
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(&DATASET_MAGIC)?;
    put(&DATASET_VERSION.to_le_bytes())?;
    put(&(ds.records.len() as u32).to_le_bytes())?;
    for r in &ds.records {
        let mut buf = Vec::with_capacity(RECORD_BYTES);
        for &v in &r.image {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for v in r.factors.as_array() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        buf.push(r.label);
        put(&buf)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;

    let manifest = Manifest {
        magic: "DIVD".into(),
        version: DATASET_VERSION,
        seed: ds.seed,
        records: ds.records.len(),
        config: ds.config.clone(),
        splits: Splits {
            train: ds.train.clone(),
            val: ds.val.clone(),
            generative_train: ds.generative_train.clone(),
        },
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Format {
        what: "dataset manifest",
        message: e.to_string(),
    })?;
    let mpath = manifest_path(path);
    fs::write(&mpath, text).map_err(|e| Error::io(mpath, e))
}

fn f32_at(bytes: &[u8], at: usize) -> f64 {
    f64::from(f32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
        });
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |message: String| Error::Format {
        what: "dataset",
        message,
    };
    if bytes.len() < 10 {
        return Err(bad("file shorter than its header".into()));
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != DATASET_MAGIC {
        return Err(Error::BadMagic {
            what: "dataset",
            expected: DATASET_MAGIC,
            found: magic,
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != DATASET_VERSION {
        return Err(Error::Version {
            what: "dataset",
            expected: DATASET_VERSION,
            found: version,
        });
    }
    let count = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    if bytes.len() != 10 + count * RECORD_BYTES {
        return Err(bad(format!(
            "expected {} bytes for {count} records, found {}",
            10 + count * RECORD_BYTES,
            bytes.len()
        )));
    }
    let mut records = Vec::with_capacity(count);
    for k in 0..count {
        let base = 10 + k * RECORD_BYTES;
        let image = (0..IMAGE_PIXELS).map(|i| f32_at(&bytes, base + 4 * i)).collect();
        let f = |j: usize| f32_at(&bytes, base + 4 * (IMAGE_PIXELS + j));
        let factors = FactorVector {
            shape_id: f(0) as u8,
            style_id: f(1) as u8,
            rotation: f(2),
            scale: f(3),
            dx: f(4),
            dy: f(5),
        };
        records.push(SampleRecord {
            image,
            factors,
            label: bytes[base + RECORD_BYTES - 1],
        });
    }

    let mpath = manifest_path(path);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Format {
        what: "dataset manifest",
        message: e.to_string(),
    })?;
    if manifest.version != DATASET_VERSION {
        return Err(Error::Version {
            what: "dataset manifest",
            expected: DATASET_VERSION,
            found: manifest.version,
        });
    }
    if manifest.records != count {
        return Err(bad(format!(
            "manifest lists {} records, binary holds {count}",
            manifest.records
        )));
    }
    let in_range = |v: &[usize]| v.iter().all(|&i| i < count);
    let s = &manifest.splits;
    if !(in_range(&s.train) && in_range(&s.val) && in_range(&s.generative_train)) {
        return Err(bad("split index out of range".into()));
    }
    Ok(Dataset {
        config: manifest.config,
        seed: manifest.seed,
        records,
        train: manifest.splits.train,
        val: manifest.splits.val,
        generative_train: manifest.splits.generative_train,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sample_dataset;
    use crate::tensor::SeededRng;

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.divd");
        let cfg = DatasetConfig {
            n_samples: 40,
            bias_strength: 0.7,
            ood_shape_ids: vec![3, 9],
            ..DatasetConfig::default()
        };
        let ds = sample_dataset(&cfg, &mut SeededRng::new(8)).unwrap();
        write_dataset(&path, &ds).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back, ds);

        // re-writing yields identical bytes
        let again = dir.path().join("e.divd");
        write_dataset(&again, &back).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
    }

    #[test]
    fn wrong_version_named_in_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.divd");
        let ds = sample_dataset(
            &DatasetConfig {
                n_samples: 3,
                ..DatasetConfig::default()
            },
            &mut SeededRng::new(1),
        )
        .unwrap();
        write_dataset(&path, &ds).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[4] = 9;
        fs::write(&path, &bytes).unwrap();
        let msg = read_dataset(&path).unwrap_err().to_string();
        assert!(msg.contains('9') && msg.contains('1'), "{msg}");
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn missing_file_is_missing_artifact() {
        let err = read_dataset(Path::new("/nonexistent/x.divd")).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
