//! Procedural glyph dataset with known factors, a bias dial and OOD splits.

pub mod glyphs;
pub mod io;
mod render;

use serde::{Deserialize, Serialize};

pub use glyphs::{style_group, N_SHAPES, N_STYLES};
pub use io::{read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use render::{render, FactorVector, IMAGE_PIXELS, IMAGE_SIDE};

use crate::tensor::SeededRng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub image: Vec<f64>,
    pub factors: FactorVector,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub n_samples: usize,
    /// Probability that a record's style is drawn from its label's
    /// preferred subset rather than uniformly.
    pub bias_strength: f64,
    pub preferred_styles_label0: Vec<u8>,
    pub preferred_styles_label1: Vec<u8>,
    pub split_seed: u64,
    /// Shapes withheld from the generative-model training split.
    pub ood_shape_ids: Vec<u8>,
    pub val_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            bias_strength: 0.0,
            preferred_styles_label0: vec![4, 5, 6, 7],
            preferred_styles_label1: vec![0, 1, 2, 3],
            split_seed: 17,
            ood_shape_ids: Vec::new(),
            val_fraction: 0.1,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::config("data.n_samples", "need at least 2 samples"));
        }
        if !(0.0..=1.0).contains(&self.bias_strength) {
            return Err(Error::config(
                "data.bias_strength",
                format!("{} is outside [0, 1]", self.bias_strength),
            ));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::config("data.val_fraction", "must lie in (0, 1)"));
        }
        for (field, set) in [
            ("data.preferred_styles_label0", &self.preferred_styles_label0),
            ("data.preferred_styles_label1", &self.preferred_styles_label1),
        ] {
            if set.is_empty() {
                return Err(Error::config(field, "empty style subset"));
            }
            if set.iter().any(|&s| usize::from(s) >= N_STYLES) {
                return Err(Error::config(field, format!("style ids must be < {N_STYLES}")));
            }
        }
        let mut ood = self.ood_shape_ids.clone();
        ood.sort_unstable();
        ood.dedup();
        if ood.len() != self.ood_shape_ids.len() {
            return Err(Error::config("data.ood_shape_ids", "duplicate shape ids"));
        }
        if ood.iter().any(|&s| usize::from(s) >= N_SHAPES) {
            return Err(Error::config("data.ood_shape_ids", format!("shape ids must be < {N_SHAPES}")));
        }
        if ood.len() == N_SHAPES {
            return Err(Error::config("data.ood_shape_ids", "cannot hold out every shape"));
        }
        Ok(())
    }

    pub fn preferred(&self, label: u8) -> &[u8] {
        if label == 1 {
            &self.preferred_styles_label1
        } else {
            &self.preferred_styles_label0
        }
    }

    pub fn is_ood(&self, shape_id: u8) -> bool {
        self.ood_shape_ids.contains(&shape_id)
    }
}

/// Records plus their splits. `generative_train` is `train` minus
/// held-out shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub seed: u64,
    pub records: Vec<SampleRecord>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub generative_train: Vec<usize>,
}

/// Draw factor vectors only (no rendering).
pub fn sample_factors(config: &DatasetConfig, rng: &mut SeededRng) -> Result<Vec<FactorVector>> {
    config.validate()?;
    let round = |v: f64| f64::from(v as f32);
    let mut out = Vec::with_capacity(config.n_samples);
    for _ in 0..config.n_samples {
        let shape_id = rng.below(N_SHAPES) as u8;
        let label = u8::from(usize::from(shape_id) < N_SHAPES / 2);
        // both draws are always consumed so rho only changes the style
        let biased = rng.uniform() < config.bias_strength;
        let preferred = config.preferred(label);
        let from_preferred = preferred[rng.below(preferred.len())];
        let uniform = rng.below(N_STYLES) as u8;
        let style_id = if biased { from_preferred } else { uniform };
        let rotation = round(rng.uniform_range(-25.0, 25.0));
        let scale = round(rng.uniform_range(0.6, 1.0));
        let dx = rng.below(7) as f64 - 3.0;
        let dy = rng.below(7) as f64 - 3.0;
        out.push(FactorVector {
            shape_id,
            style_id,
            rotation,
            scale,
            dx,
            dy,
        });
    }
    Ok(out)
}

/// Splits for a factor list: shuffled 90/10 train/val from `split_seed`,
/// and the generative split excluding held-out shapes.
pub fn split_indices(config: &DatasetConfig, factors: &[FactorVector]) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..factors.len()).collect();
    SeededRng::new(config.split_seed).shuffle(&mut idx);
    let n_val = ((factors.len() as f64 * config.val_fraction).round() as usize).clamp(1, factors.len() - 1);
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    let generative = train
        .iter()
        .copied()
        .filter(|&i| !config.is_ood(factors[i].shape_id))
        .collect();
    (train, val, generative)
}

pub fn sample_dataset(config: &DatasetConfig, rng: &mut SeededRng) -> Result<Dataset> {
    let seed = rng.seed();
    let factors = sample_factors(config, rng)?;
    let records = factors
        .iter()
        .map(|f| {
            Ok(SampleRecord {
                image: render(f)?,
                factors: *f,
                label: f.label(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (train, val, generative_train) = split_indices(config, &factors);
    Ok(Dataset {
        config: config.clone(),
        seed,
        records,
        train,
        val,
        generative_train,
    })
}

impl Dataset {
    pub fn subset(&self, idx: &[usize]) -> Vec<&SampleRecord> {
        idx.iter().map(|&i| &self.records[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(n: usize, rho: f64) -> DatasetConfig {
        DatasetConfig {
            n_samples: n,
            bias_strength: rho,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn full_bias_forces_preferred_styles() {
        let cfg = config(5000, 1.0);
        let f = sample_factors(&cfg, &mut SeededRng::new(3)).unwrap();
        for v in &f {
            assert!(cfg.preferred(v.label()).contains(&v.style_id));
        }
    }

    #[test]
    fn no_bias_means_no_label_style_correlation() {
        let cfg = config(20_000, 0.0);
        let f = sample_factors(&cfg, &mut SeededRng::new(5)).unwrap();
        let xs: Vec<f64> = f.iter().map(|v| f64::from(v.label())).collect();
        let ys: Vec<f64> = f
            .iter()
            .map(|v| f64::from(u8::from(cfg.preferred_styles_label1.contains(&v.style_id))))
            .collect();
        let corr = pearson(&xs, &ys);
        assert!(corr.abs() < 0.05, "corr = {corr}");
    }

    #[test]
    fn labels_balanced() {
        let f = sample_factors(&config(10_000, 0.5), &mut SeededRng::new(9)).unwrap();
        let p = f.iter().filter(|v| v.label() == 1).count() as f64 / f.len() as f64;
        assert!((p - 0.5).abs() < 0.02, "p = {p}");
    }

    #[test]
    fn mutual_information_grows_with_bias() {
        let mi: Vec<f64> = [0.0, 0.5, 1.0]
            .iter()
            .map(|&rho| {
                let f = sample_factors(&config(20_000, rho), &mut SeededRng::new(11)).unwrap();
                label_style_mi(&f)
            })
            .collect();
        assert!(mi[0] <= mi[1] && mi[1] <= mi[2], "{mi:?}");
    }

    #[test]
    fn generative_split_drops_ood_shapes() {
        let cfg = DatasetConfig {
            ood_shape_ids: (8..16).collect(),
            ..config(3000, 0.0)
        };
        let f = sample_factors(&cfg, &mut SeededRng::new(1)).unwrap();
        let (train, val, gen) = split_indices(&cfg, &f);
        assert_eq!(train.len() + val.len(), 3000);
        assert_eq!(val.len(), 300);
        assert!(gen.iter().all(|&i| f[i].shape_id < 8));
        assert!(!gen.is_empty());
    }

    #[test]
    fn splits_reproducible() {
        let cfg = config(200, 0.3);
        let a = sample_dataset(&cfg, &mut SeededRng::new(4)).unwrap();
        let b = sample_dataset(&cfg, &mut SeededRng::new(4)).unwrap();
        assert_eq!(a, b);
        for r in &a.records {
            assert_eq!(r.image, render(&r.factors).unwrap());
            assert_eq!(r.label, u8::from(r.factors.shape_id < 8));
        }
    }

    #[test]
    fn invalid_configs_name_the_field() {
        let err = config(10, 1.5).validate().unwrap_err();
        assert!(err.to_string().contains("bias_strength"));
        assert_eq!(err.exit_code(), 2);
        let all = DatasetConfig {
            ood_shape_ids: (0..16).collect(),
            ..config(10, 0.0)
        };
        assert!(all.validate().is_err());
    }

    fn pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }

    fn label_style_mi(f: &[FactorVector]) -> f64 {
        let n = f.len() as f64;
        let mut joint = [[0.0; N_STYLES]; 2];
        for v in f {
            joint[usize::from(v.label())][usize::from(v.style_id)] += 1.0 / n;
        }
        let pl: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
        let ps: Vec<f64> = (0..N_STYLES).map(|s| joint[0][s] + joint[1][s]).collect();
        let mut mi = 0.0;
        for l in 0..2 {
            for s in 0..N_STYLES {
                let p = joint[l][s];
                if p > 0.0 {
                    mi += p * (p / (pl[l] * ps[s])).ln();
                }
            }
        }
        mi
    }
}
