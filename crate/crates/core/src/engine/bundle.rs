use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::explain::Explanation;
use crate::data::IMAGE_SIDE;
use crate::{Error, Result};

/// Binary PGM (P5) of a square image with values in `[-1, 1]`.
pub fn pgm_bytes(pixels: &[f64]) -> Vec<u8> {
    let side = (pixels.len() as f64).sqrt().round() as usize;
    let side = if side * side == pixels.len() { side } else { IMAGE_SIDE };
    let rows = pixels.len() / side;
    let mut out = format!("P5\n{side} {rows}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|&v| ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8));
    out
}

pub fn write_pgm(path: &Path, pixels: &[f64]) -> Result<()> {
    fs::write(path, pgm_bytes(pixels)).map_err(|e| Error::io(path, e))
}

/// Where a bundle came from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BundleMeta {
    pub method: String,
    /// Name of the generative model checkpoint.
    pub generator: String,
    /// Index of the input in its dataset.
    pub input_index: Option<usize>,
}

/// A perturbation read off the trajectory at a requested classifier output.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolated {
    pub query: f64,
    pub eps: Vec<f64>,
    /// Classifier output on the decoded interpolated perturbation.
    pub f: f64,
    pub image: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleSummary {
    pub method: String,
    pub generator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_index: Option<usize>,
    pub target: f64,
    pub original_prob: f64,
    pub converged: bool,
    pub steps: usize,
    pub valid: Vec<bool>,
    pub final_prob: Vec<f64>,
    pub final_cf: Vec<f64>,
    pub final_prox: Vec<f64>,
    pub final_div: f64,
    pub final_total: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interpolation_query: Option<f64>,
    /// Posterior mean of the input.
    pub z: Vec<f64>,
    /// Final perturbations, one row per explanation.
    pub eps: Vec<Vec<f64>>,
}

impl BundleSummary {
    pub fn new(meta: &BundleMeta, ex: &Explanation, query: Option<f64>) -> Self {
        let s = &ex.set;
        let last = s.final_step();
        Self {
            method: meta.method.clone(),
            generator: meta.generator.clone(),
            input_index: meta.input_index,
            target: s.target,
            original_prob: s.original_prob,
            converged: s.converged,
            steps: last.step,
            valid: s.valid.clone(),
            final_prob: last.f.clone(),
            final_cf: last.cf.clone(),
            final_prox: last.prox.clone(),
            final_div: last.div,
            final_total: last.total,
            interpolation_query: query,
            z: s.z.clone(),
            eps: (0..s.n).map(|i| s.eps_row(i).to_vec()).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact { path: path.into() });
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Format {
            what: "bundle summary",
            message: e.to_string(),
        })
    }
}

/// Write `original.pgm`, `reconstruction.pgm`, `cf_<i>.pgm`, `trajectory.csv`
/// and `summary.toml` into `dir`. Interpolated perturbations add
/// `interp_<i>.pgm` and `interp` rows to the trajectory.
pub fn write_bundle(dir: &Path, x: &[f64], meta: &BundleMeta, ex: &Explanation, interpolated: &[Interpolated]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_pgm(&dir.join("original.pgm"), x)?;
    write_pgm(&dir.join("reconstruction.pgm"), &ex.reconstruction)?;
    for i in 0..ex.set.n {
        write_pgm(&dir.join(format!("cf_{i}.pgm")), ex.counterfactuals.row(i))?;
    }
    for (i, it) in interpolated.iter().enumerate() {
        write_pgm(&dir.join(format!("interp_{i}.pgm")), &it.image)?;
    }

    let path = dir.join("trajectory.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["step", "explanation_id", "f_value", "loss_cf", "loss_prox", "loss_div", "loss_total"])?;
    for s in &ex.set.trajectory {
        for i in 0..ex.set.n {
            w.write_record([
                s.step.to_string(),
                i.to_string(),
                format!("{:e}", s.f[i]),
                format!("{:e}", s.cf[i]),
                format!("{:e}", s.prox[i]),
                format!("{:e}", s.div),
                format!("{:e}", s.total),
            ])?;
        }
    }
    for (i, it) in interpolated.iter().enumerate() {
        w.write_record([
            "interp".to_string(),
            i.to_string(),
            format!("{:e}", it.f),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let query = interpolated.first().map(|i| i.query);
    let summary = BundleSummary::new(meta, ex, query);
    let text = toml::to_string(&summary).map_err(|e| Error::Invalid(format!("summary serialisation: {e}")))?;
    let path = dir.join("summary.toml");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_maps_range() {
        let b = pgm_bytes(&[-1.0, 0.0, 1.0, 2.0]);
        assert!(b.starts_with(b"P5\n2 2\n255\n"));
        assert_eq!(&b[b.len() - 4..], &[0, 128, 255, 255]);
    }
}
