use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::models::{sigmoid, LatentDecoder, LatentEncoder, LogitModel};
use crate::tensor::{Graph, SeededRng, Tensor};
use crate::{Error, Result};

pub const FISHER_MAGIC: [u8; 4] = *b"DIVF";
pub const FISHER_VERSION: u16 = 1;

/// Rows pushed through the decoder per graph.
const ROWS_PER_PASS: usize = 512;

/// Monte Carlo budget for the Fisher estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FisherBudget {
    pub n_images: usize,
    pub n_z_per_image: usize,
    /// 0 takes the exact expectation over both labels.
    pub n_y_samples: usize,
}

impl Default for FisherBudget {
    fn default() -> Self {
        Self {
            n_images: 256,
            n_z_per_image: 16,
            n_y_samples: 0,
        }
    }
}

impl FisherBudget {
    pub fn validate(&self) -> Result<()> {
        if self.n_images == 0 {
            return Err(Error::config("fisher.n_images", "must be at least 1"));
        }
        if self.n_z_per_image == 0 {
            return Err(Error::config("fisher.n_z_per_image", "must be at least 1"));
        }
        Ok(())
    }
}

/// Average Fisher information of the classifier with respect to the latent code.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherEstimate {
    pub d: usize,
    /// Row-major `d × d`.
    pub matrix: Vec<f64>,
    pub n_images: usize,
    pub n_z: usize,
}

impl FisherEstimate {
    pub fn from_matrix(d: usize, matrix: Vec<f64>) -> Result<Self> {
        if d == 0 || matrix.len() != d * d {
            return Err(Error::Invalid(format!("fisher matrix needs {} values, got {}", d * d, matrix.len())));
        }
        Ok(Self {
            d,
            matrix,
            n_images: 0,
            n_z: 0,
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.d + j]
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.d).map(|i| self.get(i, i)).collect()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.d {
            for j in 0..i {
                m = m.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        m
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let m = DMatrix::from_row_slice(self.d, self.d, &self.matrix);
        let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Symmetric within 1e-9 and min eigenvalue above `-1e-8 · max eigenvalue`.
    pub fn is_valid(&self) -> bool {
        if self.max_asymmetry() > 1e-9 || self.matrix.iter().any(|v| !v.is_finite()) {
            return false;
        }
        let ev = self.eigenvalues();
        let max = ev.last().copied().unwrap_or(0.0).max(0.0);
        ev[0] >= -1e-8 * max
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + 8 * self.matrix.len());
        out.extend_from_slice(&FISHER_MAGIC);
        out.extend_from_slice(&FISHER_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.d as u32).to_le_bytes());
        for v in &self.matrix {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: &str| Error::Format {
            what: "fisher cache",
            message: m.to_string(),
        };
        if bytes.len() < 10 {
            return Err(fmt("truncated header"));
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("four bytes");
        if magic != FISHER_MAGIC {
            return Err(Error::BadMagic {
                what: "fisher cache",
                expected: FISHER_MAGIC,
                found: magic,
            });
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FISHER_VERSION {
            return Err(Error::Version {
                what: "fisher cache",
                expected: FISHER_VERSION,
                found: version,
            });
        }
        let d = u32::from_le_bytes(bytes[6..10].try_into().expect("four bytes")) as usize;
        let body = &bytes[10..];
        if d == 0 || body.len() != 8 * d * d {
            return Err(fmt(&format!("expected {} matrix bytes for d={d}, found {}", 8 * d * d, body.len())));
        }
        let matrix = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect();
        Self::from_matrix(d, matrix)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact { path: path.into() });
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Monte Carlo estimate of `E_x E_{z~q(z|x)} E_{y~p(y|z)} [∇ ln p(y|z) ∇ ln p(y|z)ᵀ]`.
///
/// `images` is `[m, p]`. When `m` exceeds the budget a random subset is used.
/// With `n_y_samples = 0` the label expectation is exact: `p(1-p) g gᵀ` where
/// `g` is the gradient of the logit.
pub fn estimate_fisher<E, D, C>(
    encoder: &E,
    decoder: &D,
    classifier: &C,
    images: &Tensor,
    budget: &FisherBudget,
    rng: &mut SeededRng,
) -> Result<FisherEstimate>
where
    E: LatentEncoder + ?Sized,
    D: LatentDecoder + ?Sized,
    C: LogitModel + ?Sized,
{
    budget.validate()?;
    if images.shape().len() != 2 || images.shape()[0] == 0 {
        return Err(Error::Invalid("fisher estimate needs a non-empty image batch".into()));
    }
    let m = images.shape()[0];
    let p = images.shape()[1];
    let mut chosen: Vec<usize> = (0..m).collect();
    if m > budget.n_images {
        rng.shuffle(&mut chosen);
        chosen.truncate(budget.n_images);
        chosen.sort_unstable();
    }
    let d = encoder.latent_dim();
    let per = budget.n_z_per_image;

    // All latent samples, image by image.
    let mut z_all = Vec::with_capacity(chosen.len() * per * d);
    for block in chosen.chunks(ROWS_PER_PASS) {
        let data: Vec<f64> = block.iter().flat_map(|&i| images.row(i).iter().copied()).collect();
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![block.len(), p], data)?);
        let (mu, lv) = encoder.encode(&mut g, x)?;
        let (mu, lv) = (g.data(mu).to_vec(), g.data(lv).to_vec());
        for r in 0..block.len() {
            for _ in 0..per {
                for k in 0..d {
                    let s = (0.5 * lv[r * d + k]).exp();
                    z_all.push(mu[r * d + k] + s * rng.normal());
                }
            }
        }
    }

    let rows = z_all.len() / d;
    let mut f = vec![0.0; d * d];
    for start in (0..rows).step_by(ROWS_PER_PASS) {
        let len = ROWS_PER_PASS.min(rows - start);
        let mut g = Graph::new();
        let z = g.variable(vec![len, d], z_all[start * d..(start + len) * d].to_vec())?;
        let x = decoder.decode(&mut g, z)?;
        let l = classifier.logit(&mut g, x)?;
        let logits = g.data(l).to_vec();
        let s = g.sum(l)?;
        g.backward(s)?;
        let grad = match g.grad(z) {
            Some(gr) => gr.to_vec(),
            None => vec![0.0; len * d],
        };
        for r in 0..len {
            let prob = sigmoid(logits[r]);
            let w = if budget.n_y_samples == 0 {
                prob * (1.0 - prob)
            } else {
                let mut acc = 0.0;
                for _ in 0..budget.n_y_samples {
                    let y = if rng.uniform() < prob { 1.0 } else { 0.0 };
                    acc += (y - prob) * (y - prob);
                }
                acc / budget.n_y_samples as f64
            };
            let gr = &grad[r * d..(r + 1) * d];
            for i in 0..d {
                let wi = w * gr[i];
                for j in 0..=i {
                    f[i * d + j] += wi * gr[j];
                }
            }
        }
    }
    let inv = 1.0 / rows as f64;
    for i in 0..d {
        for j in 0..=i {
            let v = f[i * d + j] * inv;
            f[i * d + j] = v;
            f[j * d + i] = v;
        }
    }
    Ok(FisherEstimate {
        d,
        matrix: f,
        n_images: chosen.len(),
        n_z: rows,
    })
}
