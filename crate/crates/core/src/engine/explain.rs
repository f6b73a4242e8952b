use serde::{Deserialize, Serialize};

use super::fisher::{FisherBudget, FisherEstimate};
use super::interpolate::interpolate_target;
use super::losses::{cf_terms, diversity, prox_terms};
use super::masks::{fisher_chunk_masks, random_masks, spectral_masks, ChunkMode, MaskSet};
use crate::models::{sigmoid, LatentDecoder, LatentEncoder, LogitModel, ReconMode};
use crate::tensor::{Adam, AdamConfig, Graph, SeededRng, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dive,
    DiveMinus,
    XgemPlus,
    RandomMasks,
    FisherChunks,
    FisherSpectral,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Dive,
        Method::DiveMinus,
        Method::XgemPlus,
        Method::RandomMasks,
        Method::FisherChunks,
        Method::FisherSpectral,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dive => "dive",
            Method::DiveMinus => "dive_minus",
            Method::XgemPlus => "xgem_plus",
            Method::RandomMasks => "random_masks",
            Method::FisherChunks => "fisher_chunks",
            Method::FisherSpectral => "fisher_spectral",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    /// Methods that bind each perturbation to a mask and drop the diversity term.
    pub fn uses_masks(self) -> bool {
        matches!(self, Method::RandomMasks | Method::FisherChunks | Method::FisherSpectral)
    }

    pub fn needs_fisher(self) -> bool {
        matches!(self, Method::FisherChunks | Method::FisherSpectral)
    }

    /// Reconstruction mode of the generative model this method runs on.
    pub fn recon(self) -> ReconMode {
        match self {
            Method::DiveMinus => ReconMode::Pixel,
            _ => ReconMode::Perceptual,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub n: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub lr: f64,
    pub tau: usize,
    pub delta: f64,
    pub method: Method,
    /// Defaults to flipping the classifier decision on the input.
    pub target: Option<f64>,
    pub chunk_mode: ChunkMode,
    /// Standard deviation of the initial perturbations.
    pub init_std: f64,
    pub fisher: FisherBudget,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            n: 4,
            lambda: 0.001,
            alpha: 0.1,
            gamma: 0.1,
            lr: 0.1,
            tau: 20,
            delta: 0.05,
            method: Method::Dive,
            target: None,
            chunk_mode: ChunkMode::FreezeChunk,
            init_std: 0.01,
            fisher: FisherBudget::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("engine.{name}"), format!("must be a finite non-negative number, got {v}")))
            }
        };
        if self.n == 0 {
            return Err(Error::config("engine.n", "must be at least 1"));
        }
        nonneg("lambda", self.lambda)?;
        nonneg("alpha", self.alpha)?;
        nonneg("gamma", self.gamma)?;
        nonneg("init_std", self.init_std)?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config("engine.lr", format!("must be positive, got {}", self.lr)));
        }
        if self.tau == 0 {
            return Err(Error::config("engine.tau", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::config("engine.delta", format!("must lie in [0, 1), got {}", self.delta)));
        }
        if let Some(t) = self.target {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::config("engine.target", format!("must lie in [0, 1], got {t}")));
            }
        }
        self.fisher.validate()
    }

    /// The configuration actually optimised: xgem_plus has no γ or α.
    pub fn effective(&self) -> Self {
        let mut c = self.clone();
        if c.method == Method::XgemPlus {
            c.alpha = 0.0;
            c.gamma = 0.0;
        }
        c
    }

    /// Weight on the diversity term after the method's overrides.
    pub fn diversity_weight(&self) -> f64 {
        let c = self.effective();
        if c.method.uses_masks() {
            0.0
        } else {
            c.alpha
        }
    }
}

/// Loss values of one optimisation step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// `[n · d]`, row per explanation.
    pub eps: Vec<f64>,
    pub f: Vec<f64>,
    pub cf: Vec<f64>,
    pub prox: Vec<f64>,
    pub div: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSet {
    pub n: usize,
    pub d: usize,
    /// Final perturbations, `[n · d]`.
    pub eps: Vec<f64>,
    pub masks: MaskSet,
    pub trajectory: Vec<StepRecord>,
    pub valid: Vec<bool>,
    pub target: f64,
    /// Classifier output on the input image.
    pub original_prob: f64,
    /// Posterior mean of the input.
    pub z: Vec<f64>,
    /// All explanations reached the target margin.
    pub converged: bool,
}

impl PerturbationSet {
    pub fn eps_row(&self, i: usize) -> &[f64] {
        &self.eps[i * self.d..(i + 1) * self.d]
    }

    pub fn final_step(&self) -> &StepRecord {
        self.trajectory.last().expect("trajectory is never empty")
    }

    /// Perturbation for explanation `i` at classifier output `query`.
    pub fn interpolate(&self, i: usize, query: f64) -> Vec<f64> {
        let knots: Vec<(f64, Vec<f64>)> = self
            .trajectory
            .iter()
            .map(|s| (s.f[i], s.eps[i * self.d..(i + 1) * self.d].to_vec()))
            .collect();
        interpolate_target(&knots, query)
    }
}

/// Explanation search output.
#[derive(Debug, Clone)]
pub struct Explanation {
    pub set: PerturbationSet,
    /// `decode(μ)`, `[p]`.
    pub reconstruction: Vec<f64>,
    /// `decode(μ + ε_i)`, `[n, p]`.
    pub counterfactuals: Tensor,
}

/// Masks for a method. Fisher methods need an estimate.
pub fn masks_for(
    cfg: &EngineConfig,
    d: usize,
    fisher: Option<&FisherEstimate>,
    rng: &mut SeededRng,
) -> Result<MaskSet> {
    match cfg.method {
        Method::Dive | Method::DiveMinus | Method::XgemPlus => Ok(MaskSet::all_ones(cfg.n, d)),
        Method::RandomMasks => random_masks(cfg.n, d, rng),
        Method::FisherChunks | Method::FisherSpectral => {
            let f = fisher.ok_or_else(|| Error::Invalid(format!("{} needs a Fisher estimate", cfg.method)))?;
            if f.d != d {
                return Err(Error::Invalid(format!("Fisher estimate has d={}, model has d={d}", f.d)));
            }
            if cfg.method == Method::FisherChunks {
                fisher_chunk_masks(f, cfg.n, cfg.chunk_mode)
            } else {
                spectral_masks(f, cfg.n, rng.next_u64())
            }
        }
    }
}

/// Objective terms of the search at perturbation `eps` (`[n, d]`).
pub struct Objective {
    pub total: Var,
    pub eps: Var,
    pub logits: Vec<f64>,
    pub cf: Vec<f64>,
    pub prox: Vec<f64>,
    pub div: f64,
}

/// Build `Σ ℓ_cf + λ Σ ℓ_prox + α ℓ_div` on `g`, the last term dropped for masked methods.
pub fn build_objective<D, C>(
    g: &mut Graph,
    x: &[f64],
    z: &[f64],
    eps: &Tensor,
    target: f64,
    cfg: &EngineConfig,
    decoder: &D,
    classifier: &C,
) -> Result<Objective>
where
    D: LatentDecoder + ?Sized,
    C: LogitModel + ?Sized,
{
    let c = cfg.effective();
    let (n, d) = (eps.shape()[0], eps.shape()[1]);
    let e = g.leaf(&eps.clone().with_grad());
    let zc = g.constant(Tensor::new(vec![n, d], z.iter().copied().cycle().take(n * d).collect())?);
    let zz = g.add(zc, e)?;
    let xh = decoder.decode(g, zz)?;
    let xv = g.constant(Tensor::new(vec![1, x.len()], x.to_vec())?);
    let l = classifier.logit(g, xh)?;
    let logits = g.data(l).to_vec();
    let cf = cf_terms(g, l, target)?;
    let cf_vals = g.data(cf).to_vec();
    let prox = prox_terms(g, xv, xh, e, c.gamma)?;
    let prox_vals = g.data(prox).to_vec();
    let cf_sum = g.sum(cf)?;
    let prox_sum = g.sum(prox)?;
    let prox_w = g.mul_scalar(prox_sum, c.lambda)?;
    let mut total = g.add(cf_sum, prox_w)?;
    let div = diversity(g, e)?;
    let div_val = g.item(div);
    let w = c.diversity_weight();
    if w > 0.0 {
        let dw = g.mul_scalar(div, w)?;
        total = g.add(total, dw)?;
    }
    Ok(Objective {
        total,
        eps: e,
        logits,
        cf: cf_vals,
        prox: prox_vals,
        div: div_val,
    })
}

/// Value and `ε`-gradient of the search objective.
pub fn objective_and_grad<D, C>(
    x: &[f64],
    z: &[f64],
    eps: &Tensor,
    target: f64,
    cfg: &EngineConfig,
    decoder: &D,
    classifier: &C,
) -> Result<(f64, Vec<f64>)>
where
    D: LatentDecoder + ?Sized,
    C: LogitModel + ?Sized,
{
    let mut g = Graph::new();
    let o = build_objective(&mut g, x, z, eps, target, cfg, decoder, classifier)?;
    let v = g.item(o.total);
    g.backward(o.total)?;
    let grad = g.grad(o.eps).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; eps.len()]);
    Ok((v, grad))
}

fn forward_rows<D, C>(decoder: &D, classifier: &C, z: Tensor) -> Result<(Tensor, Vec<f64>)>
where
    D: LatentDecoder + ?Sized,
    C: LogitModel + ?Sized,
{
    let mut g = Graph::new();
    let zv = g.constant(z);
    let xh = decoder.decode(&mut g, zv)?;
    let l = classifier.logit(&mut g, xh)?;
    let probs = g.data(l).iter().map(|&v| sigmoid(v)).collect();
    Ok((g.value(xh).clone(), probs))
}

/// Optimise `n` masked latent perturbations of `x` towards the target output.
///
/// `x` is a single flattened image. The latent code is fixed at the posterior
/// mean; only the perturbations move.
#[allow(clippy::too_many_arguments)]
pub fn generate_explanations<E, D, C>(
    x: &[f64],
    encoder: &E,
    decoder: &D,
    classifier: &C,
    fisher: Option<&FisherEstimate>,
    cfg: &EngineConfig,
    rng: &mut SeededRng,
) -> Result<Explanation>
where
    E: LatentEncoder + ?Sized,
    D: LatentDecoder + ?Sized,
    C: LogitModel + ?Sized,
{
    cfg.validate()?;
    let d = encoder.latent_dim();
    let n = cfg.n;
    let z = {
        let mut g = Graph::new();
        let xv = g.constant(Tensor::new(vec![1, x.len()], x.to_vec())?);
        let (mu, _) = encoder.encode(&mut g, xv)?;
        g.data(mu).to_vec()
    };
    let original_prob = {
        let mut g = Graph::new();
        let xv = g.constant(Tensor::new(vec![1, x.len()], x.to_vec())?);
        let l = classifier.logit(&mut g, xv)?;
        sigmoid(g.item(l))
    };
    let target = cfg.target.unwrap_or(1.0 - original_prob.round());
    let masks = masks_for(cfg, d, fisher, rng)?;
    let mask = masks.to_tensor();
    let mut eps = Tensor::new(
        vec![n, d],
        rng.normals(n * d, cfg.init_std)
            .into_iter()
            .zip(mask.data())
            .map(|(e, m)| e * m)
            .collect(),
    )?
    .with_grad();
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), &[&eps]);
    let mut trajectory = Vec::with_capacity(cfg.tau + 1);
    let mut converged = false;

    for step in 0..=cfg.tau {
        let mut g = Graph::new();
        let o = build_objective(&mut g, x, &z, &eps, target, cfg, decoder, classifier)?;
        let f: Vec<f64> = o.logits.iter().map(|&l| sigmoid(l)).collect();
        trajectory.push(StepRecord {
            step,
            eps: eps.data().to_vec(),
            f: f.clone(),
            cf: o.cf.clone(),
            prox: o.prox.clone(),
            div: o.div,
            total: g.item(o.total),
        });
        if f.iter().all(|&p| (p - target).abs() <= cfg.delta) {
            converged = true;
            break;
        }
        if step == cfg.tau {
            break;
        }
        g.backward(o.total)?;
        let grad = g.grad(o.eps).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n * d]);
        eps.grad = Some(grad.iter().zip(mask.data()).map(|(a, m)| a * m).collect());
        adam.step(&mut [&mut eps])?;
        if !eps.all_finite() {
            return Err(Error::Diverged {
                epoch: step,
                term: "perturbation".into(),
            });
        }
    }

    let zs: Vec<f64> = (0..n).flat_map(|i| (0..d).map(move |k| (i, k))).map(|(i, k)| z[k] + eps.data()[i * d + k]).collect();
    let (counterfactuals, probs) = forward_rows(decoder, classifier, Tensor::new(vec![n, d], zs)?)?;
    let (recon, _) = forward_rows(decoder, classifier, Tensor::new(vec![1, d], z.clone())?)?;
    let decision = original_prob >= 0.5;
    let valid = probs.iter().map(|&p| (p >= 0.5) != decision).collect();
    Ok(Explanation {
        set: PerturbationSet {
            n,
            d,
            eps: eps.data().to_vec(),
            masks,
            trajectory,
            valid,
            target,
            original_prob,
            z,
            converged,
        },
        reconstruction: recon.into_vec(),
        counterfactuals,
    })
}
