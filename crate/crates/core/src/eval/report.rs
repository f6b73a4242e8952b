use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::metrics::{
    bias_rows, confounding_metric, embedding_frechet, identity_metrics, judge_outputs, success_rate,
    ExplanationJudgment, NuisanceFlip,
};
use crate::models::{Classifier, Oracle, OracleOutput};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// One explained input with model outputs on it and on its counterfactuals.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub prob_x: f64,
    pub oracle_x: OracleOutput,
    pub cf_probs: Vec<f64>,
    pub cf_oracle: Vec<OracleOutput>,
}

impl EvalItem {
    /// Run both models on `x` and the rows of `cfs` (`[n, p]`).
    pub fn build(x: &[f64], cfs: &Tensor, classifier: &Classifier, oracle: &Oracle) -> Result<Self> {
        let n = cfs.shape()[0];
        let mut data = x.to_vec();
        data.extend_from_slice(cfs.data());
        let all = Tensor::new(vec![n + 1, x.len()], data)?;
        let probs = classifier.predict(&all)?;
        let mut outs = oracle.run(&all)?;
        let cf_oracle = outs.split_off(1);
        Ok(Self {
            prob_x: probs[0],
            oracle_x: outs.pop().expect("input row"),
            cf_probs: probs[1..].to_vec(),
            cf_oracle,
        })
    }

    pub fn judgments(&self) -> Vec<ExplanationJudgment> {
        self.cf_probs
            .iter()
            .zip(&self.cf_oracle)
            .map(|(&p, o)| judge_outputs(self.prob_x, p, &self.oracle_x, o))
            .collect()
    }
}

/// Every metric the suite computes over a set of explained inputs. Metrics
/// whose inputs are empty (no valid counterfactual, too few samples for a
/// Fréchet fit) are left out.
pub fn evaluate_items(items: &[EvalItem]) -> Result<Vec<(String, f64)>> {
    if items.is_empty() {
        return Err(Error::Invalid("no explanations to evaluate".into()));
    }
    let mut judgments = Vec::new();
    let mut flips = Vec::new();
    let mut any_valid = 0usize;
    let mut orig_emb = Vec::new();
    let (mut pairs_x, mut pairs_cf) = (Vec::new(), Vec::new());
    let (mut present, mut absent, mut overall) = (Vec::new(), Vec::new(), Vec::new());
    for item in items {
        let js = item.judgments();
        orig_emb.push(item.oracle_x.embedding.clone());
        if js.iter().any(|j| j.valid) {
            any_valid += 1;
        }
        for ((j, &p), o) in js.iter().zip(&item.cf_probs).zip(&item.cf_oracle) {
            if j.valid {
                flips.push(NuisanceFlip::from_outputs(p, &item.oracle_x, o));
                overall.push(o.embedding.clone());
                pairs_x.push(item.oracle_x.embedding.clone());
                pairs_cf.push(o.embedding.clone());
            }
            if p > 0.9 {
                present.push(o.embedding.clone());
            } else if p < 0.1 {
                absent.push(o.embedding.clone());
            }
        }
        judgments.extend(js);
    }
    let s = success_rate(&judgments)?;
    let mut out = vec![
        ("success_rate".to_string(), s.rate),
        ("validity".to_string(), s.validity),
        ("any_valid_rate".to_string(), any_valid as f64 / items.len() as f64),
        ("mean_similarity".to_string(), s.mean_similarity),
    ];
    let valid: Vec<&ExplanationJudgment> = judgments.iter().filter(|j| j.valid).collect();
    if !valid.is_empty() {
        let changes = valid.iter().map(|j| j.attribute_changes as f64).sum::<f64>() / valid.len() as f64;
        out.push(("attribute_changes".into(), changes));
        out.push(("confounding".into(), confounding_metric(&flips)?));
        for row in bias_rows(&flips) {
            out.push((format!("class{}_nuisance_group1", row.target_class), row.group_fractions[1]));
        }
    }
    for (name, set) in [("present", &present), ("absent", &absent), ("overall", &overall)] {
        if set.len() >= 2 && orig_emb.len() >= 2 {
            out.push((format!("frechet_{name}"), embedding_frechet(&orig_emb, set)?));
        }
    }
    if pairs_x.len() >= 2 {
        let (closeness, verification) = identity_metrics(&pairs_x, &pairs_cf)?;
        out.push(("latent_closeness".into(), closeness));
        out.push(("verification_accuracy".into(), verification));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub method: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

/// Metric table, one row per (method, seed, metric).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
}

impl MetricsReport {
    pub fn push_all(&mut self, method: &str, seed: u64, metrics: &[(String, f64)]) {
        for (m, v) in metrics {
            self.rows.push(MetricRow {
                method: method.to_string(),
                seed,
                metric: m.clone(),
                value: *v,
            });
        }
    }

    pub fn value(&self, method: &str, seed: u64, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.seed == seed && r.metric == metric)
            .map(|r| r.value)
    }

    /// Seed-averaged value per (method, metric).
    pub fn means(&self) -> BTreeMap<String, BTreeMap<String, f64>> {
        let mut acc: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
        for r in &self.rows {
            let e = acc.entry((r.method.clone(), r.metric.clone())).or_default();
            e.0 += r.value;
            e.1 += 1;
        }
        let mut out: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for ((method, metric), (s, n)) in acc {
            out.entry(method).or_default().insert(metric, s / n as f64);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut rows = self.rows.clone();
        rows.sort_by(|a, b| (&a.method, a.seed, &a.metric).cmp(&(&b.method, b.seed, &b.metric)));
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["method", "seed", "metric", "value"])?;
        for r in &rows {
            w.write_record([r.method.clone(), r.seed.to_string(), r.metric.clone(), format!("{:e}", r.value)])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact { path: path.into() });
        }
        let mut r = csv::Reader::from_path(path)?;
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse = |i: usize| rec.get(i).unwrap_or_default().to_string();
            rows.push(MetricRow {
                method: parse(0),
                seed: parse(1).parse().map_err(|_| Error::Format {
                    what: "metrics csv",
                    message: format!("bad seed {:?}", parse(1)),
                })?,
                metric: parse(2),
                value: parse(3).parse().map_err(|_| Error::Format {
                    what: "metrics csv",
                    message: format!("bad value {:?}", parse(3)),
                })?,
            });
        }
        Ok(Self { rows })
    }

    /// Structured-text summary: one table per method holding seed means.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for (method, metrics) in self.means() {
            s.push_str(&format!("[{method}]\n"));
            for (m, v) in metrics {
                s.push_str(&format!("{m} = {v:.6}\n"));
            }
            s.push('\n');
        }
        s
    }

    pub fn write_summary(&self, path: &Path) -> Result<()> {
        fs::write(path, self.summary()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn out(label_prob: f64, style: usize, emb: Vec<f64>) -> OracleOutput {
        OracleOutput {
            embedding: emb,
            label_prob,
            shape: 0,
            style,
            rotation_bin: 0,
            scale_bin: 0,
        }
    }

    #[test]
    fn unchanged_counterfactuals_score_zero() {
        let o = out(0.9, 0, vec![1.0, 0.0]);
        let items = vec![
            EvalItem {
                prob_x: 0.8,
                oracle_x: o.clone(),
                cf_probs: vec![0.8, 0.8],
                cf_oracle: vec![o.clone(), o.clone()],
            };
            3
        ];
        let m: BTreeMap<String, f64> = evaluate_items(&items).unwrap().into_iter().collect();
        assert_eq!(m["success_rate"], 0.0);
        assert_eq!(m["validity"], 0.0);
        assert!(!m.contains_key("confounding"));
    }

    #[test]
    fn report_csv_round_trip_and_means() {
        let mut r = MetricsReport::default();
        r.push_all("dive", 1, &[("success_rate".into(), 0.5)]);
        r.push_all("dive", 2, &[("success_rate".into(), 0.25)]);
        assert_eq!(r.means()["dive"]["success_rate"], 0.375);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        r.write_csv(&p).unwrap();
        assert_eq!(MetricsReport::read_csv(&p).unwrap(), r);
        assert!(r.summary().contains("[dive]\nsuccess_rate = 0.375000"));
    }
}
