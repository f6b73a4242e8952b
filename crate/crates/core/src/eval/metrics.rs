use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::{style_group, SampleRecord};
use crate::models::{Classifier, Oracle, OracleOutput};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Verdict on one counterfactual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplanationJudgment {
    /// Classifier decision differs from its decision on the input.
    pub valid: bool,
    pub oracle_label_on_cf: u8,
    pub classifier_label_on_cf: u8,
    /// Valid and the oracle disagrees with the classifier on the counterfactual.
    pub success: bool,
    /// Cosine distance between oracle embeddings, in `[0, 2]`.
    pub proximity: f64,
    /// Oracle factor heads whose argmax changed.
    pub attribute_changes: usize,
}

pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na * nb < 1e-300 {
        return 1.0;
    }
    (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
}

/// Judgment from precomputed classifier probabilities and oracle outputs.
pub fn judge_outputs(prob_x: f64, prob_cf: f64, oracle_x: &OracleOutput, oracle_cf: &OracleOutput) -> ExplanationJudgment {
    let clf_x = u8::from(prob_x >= 0.5);
    let clf_cf = u8::from(prob_cf >= 0.5);
    let valid = clf_x != clf_cf;
    let oracle_label = oracle_cf.label();
    let (ax, acf) = (oracle_x.attributes(), oracle_cf.attributes());
    ExplanationJudgment {
        valid,
        oracle_label_on_cf: oracle_label,
        classifier_label_on_cf: clf_cf,
        success: valid && oracle_label != clf_cf,
        proximity: cosine_distance(&oracle_x.embedding, &oracle_cf.embedding),
        attribute_changes: ax.iter().zip(&acf).filter(|(a, b)| a != b).count(),
    }
}

/// Judge every row of `cfs` (`[n, 1024]`) against the input `x`.
pub fn judge_batch(x: &[f64], cfs: &Tensor, classifier: &Classifier, oracle: &Oracle) -> Result<Vec<ExplanationJudgment>> {
    let n = cfs.shape()[0];
    let mut data = x.to_vec();
    data.extend_from_slice(cfs.data());
    let all = Tensor::new(vec![n + 1, x.len()], data)?;
    let probs = classifier.predict(&all)?;
    let outs = oracle.run(&all)?;
    Ok((0..n).map(|i| judge_outputs(probs[0], probs[i + 1], &outs[0], &outs[i + 1])).collect())
}

pub fn judge(x: &[f64], x_cf: &[f64], classifier: &Classifier, oracle: &Oracle) -> Result<ExplanationJudgment> {
    let cf = Tensor::new(vec![1, x_cf.len()], x_cf.to_vec())?;
    Ok(judge_batch(x, &cf, classifier, oracle)?[0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuccessSummary {
    pub rate: f64,
    pub validity: f64,
    pub mean_similarity: f64,
    pub mean_attribute_changes: f64,
    /// `(success, 1 - proximity)` per judgment.
    pub points: Vec<(bool, f64)>,
}

pub fn success_rate(judgments: &[ExplanationJudgment]) -> Result<SuccessSummary> {
    if judgments.is_empty() {
        return Err(Error::Invalid("success rate of an empty judgment set".into()));
    }
    let n = judgments.len() as f64;
    let frac = |f: &dyn Fn(&ExplanationJudgment) -> bool| judgments.iter().filter(|j| f(j)).count() as f64 / n;
    Ok(SuccessSummary {
        rate: frac(&|j| j.success),
        validity: frac(&|j| j.valid),
        mean_similarity: judgments.iter().map(|j| 1.0 - j.proximity).sum::<f64>() / n,
        mean_attribute_changes: judgments.iter().map(|j| j.attribute_changes as f64).sum::<f64>() / n,
        points: judgments.iter().map(|j| (j.success, 1.0 - j.proximity)).collect(),
    })
}

/// A valid counterfactual's nuisance group before and after.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NuisanceFlip {
    /// Classifier decision on the counterfactual.
    pub target_class: u8,
    pub original_group: usize,
    pub cf_group: usize,
}

impl NuisanceFlip {
    pub fn from_outputs(prob_cf: f64, oracle_x: &OracleOutput, oracle_cf: &OracleOutput) -> Self {
        Self {
            target_class: u8::from(prob_cf >= 0.5),
            original_group: style_group(oracle_x.style),
            cf_group: style_group(oracle_cf.style),
        }
    }
}

/// Fraction of valid counterfactuals whose nuisance group changed.
pub fn confounding_metric(flips: &[NuisanceFlip]) -> Result<f64> {
    if flips.is_empty() {
        return Err(Error::Invalid("confounding metric needs at least one valid explanation".into()));
    }
    Ok(flips.iter().filter(|f| f.original_group != f.cf_group).count() as f64 / flips.len() as f64)
}

/// Nuisance distribution of the counterfactuals pushed towards one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub target_class: u8,
    pub n_valid: usize,
    pub confounding: f64,
    /// Fraction of counterfactuals the oracle puts in nuisance group 0 and 1.
    pub group_fractions: [f64; 2],
}

pub fn bias_rows(flips: &[NuisanceFlip]) -> Vec<BiasRow> {
    (0..2u8)
        .filter_map(|c| {
            let sel: Vec<NuisanceFlip> = flips.iter().copied().filter(|f| f.target_class == c).collect();
            let conf = confounding_metric(&sel).ok()?;
            let g1 = sel.iter().filter(|f| f.cf_group == 1).count() as f64 / sel.len() as f64;
            Some(BiasRow {
                target_class: c,
                n_valid: sel.len(),
                confounding: conf,
                group_fractions: [1.0 - g1, g1],
            })
        })
        .collect()
}

/// Label, nuisance group and classifier decision of one validation record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupedPrediction {
    pub label: u8,
    pub group: usize,
    pub predicted: u8,
}

/// Per-class accuracy gap between the two nuisance groups, averaged over classes.
pub fn ground_truth_bias(preds: &[GroupedPrediction]) -> Result<f64> {
    let mut total = 0.0;
    for label in 0..2u8 {
        let mut acc = [0.0; 2];
        for (group, a) in acc.iter_mut().enumerate() {
            let cell: Vec<&GroupedPrediction> = preds.iter().filter(|p| p.label == label && p.group == group).collect();
            if cell.is_empty() {
                return Err(Error::Invalid(format!("no records with label {label} in nuisance group {group}")));
            }
            *a = cell.iter().filter(|p| p.predicted == p.label).count() as f64 / cell.len() as f64;
        }
        total += (acc[0] - acc[1]).abs();
    }
    Ok(total / 2.0)
}

/// Ground-truth bias of a classifier on records, using their true style group.
pub fn classifier_ground_truth_bias(classifier: &Classifier, records: &[&SampleRecord]) -> Result<f64> {
    let x = crate::models::mlp::stack_rows(records.iter().map(|r| r.image.as_slice()));
    let probs = classifier.predict(&x)?;
    let preds: Vec<GroupedPrediction> = records
        .iter()
        .zip(&probs)
        .map(|(r, &p)| GroupedPrediction {
            label: r.label,
            group: style_group(usize::from(r.factors.style_id)),
            predicted: u8::from(p >= 0.5),
        })
        .collect();
    ground_truth_bias(&preds)
}

fn moments(set: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if set.len() < 2 {
        return Err(Error::Invalid(format!("Fréchet distance needs at least 2 samples per set, got {}", set.len())));
    }
    let k = set[0].len();
    if set.len() <= k {
        log::warn!("Fréchet distance on {} samples of dimension {k}: covariance is rank deficient", set.len());
    }
    let n = set.len() as f64;
    let mut mu = DVector::zeros(k);
    for v in set {
        mu += DVector::from_column_slice(v);
    }
    mu /= n;
    let mut cov = DMatrix::zeros(k, k);
    for v in set {
        let c = DVector::from_column_slice(v) - &mu;
        cov += &c * c.transpose();
    }
    cov /= n - 1.0;
    Ok((mu, cov))
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let e = SymmetricEigen::new(sym);
    let vals = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&vals) * e.eigenvectors.transpose()
}

/// `‖μ_a - μ_b‖² + Tr(Σ_a + Σ_b - 2 (Σ_a Σ_b)^{1/2})`.
pub fn frechet_from_moments(mu_a: &DVector<f64>, cov_a: &DMatrix<f64>, mu_b: &DVector<f64>, cov_b: &DMatrix<f64>) -> f64 {
    let sa = psd_sqrt(cov_a);
    // (Σ_a Σ_b)^{1/2} has the trace of (Σ_a^{1/2} Σ_b Σ_a^{1/2})^{1/2}
    let inner = &sa * cov_b * &sa;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let diff = mu_a - mu_b;
    (diff.dot(&diff) + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt).max(0.0)
}

/// Fréchet distance between Gaussian fits of two embedding sets.
pub fn embedding_frechet(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (ma, ca) = moments(a)?;
    let (mb, cb) = moments(b)?;
    if ma.len() != mb.len() {
        return Err(Error::Invalid("embedding sets differ in dimension".into()));
    }
    Ok(frechet_from_moments(&ma, &ca, &mb, &cb))
}

/// `(latent_closeness, verification_accuracy)` for paired original and
/// counterfactual embeddings.
pub fn identity_metrics(originals: &[Vec<f64>], cfs: &[Vec<f64>]) -> Result<(f64, f64)> {
    if originals.len() < 2 || originals.len() != cfs.len() {
        return Err(Error::Invalid("identity metrics need at least 2 matched pairs".into()));
    }
    let n = originals.len();
    let mut closest = 0;
    let mut verified = 0;
    for (i, cf) in cfs.iter().enumerate() {
        let own = cosine_distance(&originals[i], cf);
        if (0..n).filter(|&j| j != i).all(|j| own <= cosine_distance(&originals[j], cf)) {
            closest += 1;
        }
        if own < 0.5 {
            verified += 1;
        }
    }
    Ok((closest as f64 / n as f64, verified as f64 / n as f64))
}
