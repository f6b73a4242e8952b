use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{collect_grads, stack_rows, ParamVars};
use super::nets::{
    rotation_bin, scale_bin, Classifier, LatentEncoder, Oracle, ReconMode, Vae, HEAD_LABEL,
    HEAD_ROTATION, HEAD_SCALE, HEAD_SHAPE, HEAD_STYLE, ORACLE_OUTPUTS,
};
use super::tcvae::{cyclical_beta_schedule, tcvae_loss, TcvaeParams, TcvaeTerms};
use crate::data::{Dataset, SampleRecord, IMAGE_PIXELS};
use crate::tensor::{Adam, AdamConfig, Graph, SeededRng, Tensor, TensorError, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub vae_epochs: usize,
    /// Epochs for the classifiers and the oracle.
    pub classifier_epochs: usize,
    pub batch_size: usize,
    pub vae_lr: f64,
    pub classifier_lr: f64,
    /// Total-correlation weight.
    pub beta: f64,
    pub cycles: usize,
    pub recon: ReconMode,
    pub latent_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            vae_epochs: 60,
            classifier_epochs: 20,
            batch_size: 256,
            vae_lr: 4e-4,
            classifier_lr: 1e-3,
            beta: 2.0,
            cycles: 4,
            recon: ReconMode::Perceptual,
            latent_dim: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive_int = [
            ("train.vae_epochs", self.vae_epochs),
            ("train.classifier_epochs", self.classifier_epochs),
            ("train.cycles", self.cycles),
            ("train.latent_dim", self.latent_dim),
        ];
        for (field, v) in positive_int {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::config("train.batch_size", "must be at least 2"));
        }
        for (field, v) in [
            ("train.vae_lr", self.vae_lr),
            ("train.classifier_lr", self.classifier_lr),
            ("train.beta", self.beta),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(field, format!("{v} must be positive")));
            }
        }
        Ok(())
    }
}

/// One `(epoch, term, value)` row per logged quantity.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub rows: Vec<(usize, String, f64)>,
}

impl TrainLog {
    pub fn push(&mut self, epoch: usize, term: &str, value: f64) {
        self.rows.push((epoch, term.to_string(), value));
    }

    /// Values of `term` in epoch order.
    pub fn series(&self, term: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.1 == term).map(|r| r.2).collect()
    }

    pub fn last(&self, term: &str) -> Option<f64> {
        self.series(term).last().copied()
    }

    pub fn epochs(&self) -> usize {
        self.rows.iter().map(|r| r.0).max().unwrap_or(0)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "term", "value"])?;
        for (e, t, v) in &self.rows {
            w.write_record([e.to_string(), t.clone(), format!("{v:e}")])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn images(records: &[&SampleRecord]) -> Tensor {
    stack_rows(records.iter().map(|r| r.image.as_slice()))
}

fn batches(idx: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    idx.chunks(size)
}

fn diverged(epoch: usize, term: &str) -> Error {
    Error::Diverged {
        epoch,
        term: term.to_string(),
    }
}

fn lift(epoch: usize, term: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Tensor(TensorError::NonFinite { op }) => Error::Diverged {
            epoch,
            term: format!("{term} ({op})"),
        },
        other => other,
    }
}

/// Train the β-TCVAE on `ds.records[idx]`. Perceptual mode needs the oracle
/// as its feature network.
pub fn train_vae(
    ds: &Dataset,
    idx: &[usize],
    cfg: &TrainConfig,
    rng: &mut SeededRng,
    oracle: Option<&Oracle>,
) -> Result<(Vae, TrainLog)> {
    cfg.validate()?;
    if idx.len() < 2 {
        return Err(Error::Invalid("vae training split has fewer than 2 records".into()));
    }
    if cfg.recon == ReconMode::Perceptual && oracle.is_none() {
        return Err(Error::Invalid("perceptual reconstruction needs a trained oracle".into()));
    }
    let mut vae = Vae::new(cfg.latent_dim, cfg.recon, rng);
    let mut adam = {
        let mut ps = vae.encoder.params();
        ps.extend(vae.decoder.params());
        Adam::new(AdamConfig::with_lr(cfg.vae_lr), &ps)
    };
    let per_epoch = idx.len().div_ceil(cfg.batch_size);
    let total_steps = per_epoch * cfg.vae_epochs;
    let mut order = idx.to_vec();
    let mut log = TrainLog::default();
    let mut step = 0;
    for epoch in 1..=cfg.vae_epochs {
        rng.shuffle(&mut order);
        let mut sums = TcvaeTerms::default();
        let mut seen = 0usize;
        for batch in batches(&order, cfg.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let x = images(&ds.subset(batch));
            let noise = Tensor::new(
                vec![batch.len(), cfg.latent_dim],
                rng.normals(batch.len() * cfg.latent_dim, 1.0),
            )?;
            let params = TcvaeParams {
                beta: cfg.beta,
                kl_weight: cyclical_beta_schedule(step, total_steps, cfg.cycles),
                recon_weight: 1.0,
                dataset_size: idx.len(),
                recon: cfg.recon,
            };
            let mut g = Graph::new();
            let xv = g.constant(x);
            let mut pv = ParamVars::default();
            let (loss, terms) =
                tcvae_loss(&mut g, &vae, xv, &noise, &params, oracle, Some(&mut pv)).map_err(lift(epoch, "total"))?;
            if !terms.total.is_finite() {
                return Err(diverged(epoch, "total"));
            }
            g.backward(loss)?;
            collect_grads(&g, &mut [&mut vae.encoder, &mut vae.decoder], &pv);
            let mut ps = vae.encoder.params_mut();
            ps.extend(vae.decoder.params_mut());
            adam.step(&mut ps)?;
            step += 1;

            let w = batch.len() as f64;
            sums.recon += w * terms.recon;
            sums.mi += w * terms.mi;
            sums.tc += w * terms.tc;
            sums.dim_kl += w * terms.dim_kl;
            sums.total += w * terms.total;
            seen += batch.len();
        }
        let n = seen as f64;
        for (name, v) in sums.named() {
            log.push(epoch, name, v / n);
        }
        if !(vae.encoder.all_finite() && vae.decoder.all_finite()) {
            return Err(diverged(epoch, "parameters"));
        }
        log::debug!("vae epoch {epoch}: total {:.4}", sums.total / n);
    }
    vae.quantize();
    Ok((vae, log))
}

/// Mean absolute pixel error of `decode(encode_mean(x))`.
pub fn reconstruction_l1(vae: &Vae, records: &[&SampleRecord]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in records.chunks(512) {
        let x = images(chunk);
        let r = vae.reconstruct(&x)?;
        total += x.data().iter().zip(r.data()).map(|(a, b)| (a - b).abs()).sum::<f64>();
    }
    Ok(total / (records.len() * IMAGE_PIXELS) as f64)
}

/// Posterior means and log-variances for `records`, stacked `[n, d]`.
pub fn posteriors(vae: &Vae, records: &[&SampleRecord]) -> Result<(Tensor, Tensor)> {
    let mut mu = Vec::new();
    let mut lv = Vec::new();
    for chunk in records.chunks(512) {
        let mut g = Graph::new();
        let x = g.constant(images(chunk));
        let (m, l) = vae.encode(&mut g, x)?;
        mu.extend_from_slice(g.data(m));
        lv.extend_from_slice(g.data(l));
    }
    let d = vae.latent_dim;
    Ok((
        Tensor::new(vec![records.len(), d], mu)?,
        Tensor::new(vec![records.len(), d], lv)?,
    ))
}

/// Mean binary cross-entropy of logits `[b, 1]` against 0/1 targets.
fn bce_logits(g: &mut Graph, logits: Var, targets: &[f64]) -> Result<Var, TensorError> {
    let y = g.constant(Tensor::new(vec![targets.len(), 1], targets.to_vec())?);
    let sp = g.softplus(logits)?;
    let yl = g.mul(y, logits)?;
    let l = g.sub(sp, yl)?;
    g.mean(l)
}

/// Mean softmax cross-entropy of `logits` `[b, k]` against class indices.
fn cross_entropy(g: &mut Graph, logits: Var, classes: &[usize]) -> Result<Var, TensorError> {
    let k = g.shape(logits)[1];
    let mut onehot = vec![0.0; classes.len() * k];
    for (i, &c) in classes.iter().enumerate() {
        onehot[i * k + c] = 1.0;
    }
    let oh = g.constant(Tensor::new(vec![classes.len(), k], onehot)?);
    let lse = g.logsumexp_axis(logits, 1)?;
    let picked = g.mul(logits, oh)?;
    let picked = g.sum_axis(picked, 1)?;
    let l = g.sub(lse, picked)?;
    g.mean(l)
}

/// Fraction of `records` whose thresholded `f(x)` equals the label.
pub fn classifier_accuracy(c: &Classifier, records: &[&SampleRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Invalid("accuracy over an empty set".into()));
    }
    let mut correct = 0usize;
    for chunk in records.chunks(512) {
        let p = c.predict(&images(chunk))?;
        correct += chunk
            .iter()
            .zip(&p)
            .filter(|(r, &p)| u8::from(p >= 0.5) == r.label)
            .count();
    }
    Ok(correct as f64 / records.len() as f64)
}

/// Train the label classifier. Logs per-epoch loss and the final
/// validation accuracy (`val_accuracy`).
pub fn train_classifier(
    ds: &Dataset,
    train: &[usize],
    val: &[usize],
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<(Classifier, TrainLog, f64)> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Invalid("classifier training needs non-empty train and val splits".into()));
    }
    let mut c = Classifier::new(rng);
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.classifier_lr), &c.net.params());
    let mut order = train.to_vec();
    let mut log = TrainLog::default();
    for epoch in 1..=cfg.classifier_epochs {
        rng.shuffle(&mut order);
        let (mut sum, mut seen) = (0.0, 0usize);
        for batch in batches(&order, cfg.batch_size) {
            let recs = ds.subset(batch);
            let targets: Vec<f64> = recs.iter().map(|r| f64::from(r.label)).collect();
            let mut g = Graph::new();
            let x = g.constant(images(&recs));
            let mut pv = ParamVars::default();
            let l = c.net.forward(&mut g, x, Some(&mut pv)).map_err(Error::from).map_err(lift(epoch, "bce"))?;
            let loss = bce_logits(&mut g, l, &targets)?;
            let v = g.item(loss);
            if !v.is_finite() {
                return Err(diverged(epoch, "bce"));
            }
            g.backward(loss)?;
            collect_grads(&g, &mut [&mut c.net], &pv);
            adam.step(&mut c.net.params_mut())?;
            sum += v * batch.len() as f64;
            seen += batch.len();
        }
        log.push(epoch, "bce", sum / seen as f64);
    }
    c.quantize();
    let acc = classifier_accuracy(&c, &ds.subset(val))?;
    log.push(cfg.classifier_epochs, "val_accuracy", acc);
    Ok((c, log, acc))
}

/// Validation accuracies of each oracle head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleAccuracy {
    pub label: f64,
    pub shape: f64,
    pub style: f64,
    pub rotation_bin: f64,
    pub scale_bin: f64,
}

pub fn oracle_accuracy(o: &Oracle, records: &[&SampleRecord]) -> Result<OracleAccuracy> {
    if records.is_empty() {
        return Err(Error::Invalid("accuracy over an empty set".into()));
    }
    let mut hits = [0usize; 5];
    for chunk in records.chunks(512) {
        let out = o.run(&images(chunk))?;
        for (r, p) in chunk.iter().zip(&out) {
            let f = &r.factors;
            let ok = [
                p.label() == r.label,
                p.shape == usize::from(f.shape_id),
                p.style == usize::from(f.style_id),
                p.rotation_bin == rotation_bin(f.rotation),
                p.scale_bin == scale_bin(f.scale),
            ];
            for (h, k) in hits.iter_mut().zip(ok) {
                *h += usize::from(k);
            }
        }
    }
    let n = records.len() as f64;
    Ok(OracleAccuracy {
        label: hits[0] as f64 / n,
        shape: hits[1] as f64 / n,
        style: hits[2] as f64 / n,
        rotation_bin: hits[3] as f64 / n,
        scale_bin: hits[4] as f64 / n,
    })
}

/// Train the oracle on every head at once (summed losses).
pub fn train_oracle(
    ds: &Dataset,
    train: &[usize],
    val: &[usize],
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<(Oracle, TrainLog, OracleAccuracy)> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Invalid("oracle training needs non-empty train and val splits".into()));
    }
    let mut o = Oracle::new(rng);
    let mut adam = {
        let mut ps = o.trunk.params();
        ps.extend(o.heads.params());
        Adam::new(AdamConfig::with_lr(cfg.classifier_lr), &ps)
    };
    let mut order = train.to_vec();
    let mut log = TrainLog::default();
    for epoch in 1..=cfg.classifier_epochs {
        rng.shuffle(&mut order);
        let (mut sum, mut seen) = (0.0, 0usize);
        for batch in batches(&order, cfg.batch_size) {
            let recs = ds.subset(batch);
            let mut g = Graph::new();
            let x = g.constant(images(&recs));
            let mut pv = ParamVars::default();
            let loss = (|| -> Result<Var, TensorError> {
                let e = o.trunk.forward(&mut g, x, Some(&mut pv))?;
                let h = o.heads.forward(&mut g, e, Some(&mut pv))?;
                debug_assert_eq!(g.shape(h)[1], ORACLE_OUTPUTS);
                let head = |g: &mut Graph, (s, n): (usize, usize)| g.slice(h, 1, s, n);
                let labels: Vec<f64> = recs.iter().map(|r| f64::from(r.label)).collect();
                let lh = head(&mut g, HEAD_LABEL)?;
                let mut total = bce_logits(&mut g, lh, &labels)?;
                let targets: [(_, Vec<usize>); 4] = [
                    (HEAD_SHAPE, recs.iter().map(|r| usize::from(r.factors.shape_id)).collect()),
                    (HEAD_STYLE, recs.iter().map(|r| usize::from(r.factors.style_id)).collect()),
                    (HEAD_ROTATION, recs.iter().map(|r| rotation_bin(r.factors.rotation)).collect()),
                    (HEAD_SCALE, recs.iter().map(|r| scale_bin(r.factors.scale)).collect()),
                ];
                for (slot, classes) in targets {
                    let logits = head(&mut g, slot)?;
                    let ce = cross_entropy(&mut g, logits, &classes)?;
                    total = g.add(total, ce)?;
                }
                Ok(total)
            })()
            .map_err(Error::from)
            .map_err(lift(epoch, "loss"))?;
            let v = g.item(loss);
            if !v.is_finite() {
                return Err(diverged(epoch, "loss"));
            }
            g.backward(loss)?;
            collect_grads(&g, &mut [&mut o.trunk, &mut o.heads], &pv);
            let mut ps = o.trunk.params_mut();
            ps.extend(o.heads.params_mut());
            adam.step(&mut ps)?;
            sum += v * batch.len() as f64;
            seen += batch.len();
        }
        log.push(epoch, "loss", sum / seen as f64);
    }
    o.quantize();
    let acc = oracle_accuracy(&o, &ds.subset(val))?;
    let e = cfg.classifier_epochs;
    log.push(e, "val_accuracy", acc.label);
    log.push(e, "val_shape_accuracy", acc.shape);
    log.push(e, "val_style_accuracy", acc.style);
    Ok((o, log, acc))
}
