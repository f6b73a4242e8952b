use super::mlp::ParamVars;
use super::nets::{reparameterize, LatentDecoder, Oracle, ReconMode, Vae};
use crate::tensor::{Graph, Tensor, TensorError, Var};
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TcvaeParams {
    pub beta: f64,
    /// Annealing multiplier on every KL-side term.
    pub kl_weight: f64,
    pub recon_weight: f64,
    /// Size of the training set the batch is drawn from.
    pub dataset_size: usize,
    pub recon: ReconMode,
}

/// Batch-mean values of each loss term.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TcvaeTerms {
    pub recon: f64,
    pub mi: f64,
    pub tc: f64,
    pub dim_kl: f64,
    pub total: f64,
}

impl TcvaeTerms {
    pub fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("recon", self.recon),
            ("mi", self.mi),
            ("tc", self.tc),
            ("dim_kl", self.dim_kl),
            ("total", self.total),
        ]
    }
}

/// Index-code MI, total correlation and dimension-wise KL for samples `z`
/// drawn from the diagonal posteriors `(mu, logvar)`, each `[b, d]`.
/// The aggregate posterior is estimated by minibatch-weighted sampling.
pub fn mws_kl_terms(
    g: &mut Graph,
    z: Var,
    mu: Var,
    logvar: Var,
    dataset_size: usize,
) -> Result<(Var, Var, Var), TensorError> {
    let shape = g.shape(z).to_vec();
    let b = shape[0];
    if b < 2 {
        return Err(TensorError::BadArgument {
            op: "mws_kl_terms",
            message: format!("batch size {b} < 2"),
        });
    }
    let log_nm = ((dataset_size.max(1) * b) as f64).ln();

    // log q(z_i | x_i)
    let diff = g.sub(z, mu)?;
    let sq = g.square(diff)?;
    let neg_lv = g.neg(logvar)?;
    let prec = g.exp(neg_lv)?;
    let maha = g.mul(sq, prec)?;
    let inner = g.add(maha, logvar)?;
    let inner = g.add_scalar(inner, LN_2PI)?;
    let inner = g.mul_scalar(inner, -0.5)?;
    let log_qzx = g.sum_axis(inner, 1)?;

    // log p(z_i)
    let z2 = g.square(z)?;
    let pz = g.add_scalar(z2, LN_2PI)?;
    let pz = g.mul_scalar(pz, -0.5)?;
    let log_pz = g.sum_axis(pz, 1)?;

    let mat = g.pairwise_gaussian_log_density(z, mu, logvar)?;
    let joint = g.sum_axis(mat, 2)?;
    let log_qz = g.logsumexp_axis(joint, 1)?;
    let log_qz = g.add_scalar(log_qz, -log_nm)?;
    let marg = g.logsumexp_axis(mat, 1)?;
    let marg = g.add_scalar(marg, -log_nm)?;
    let log_prod = g.sum_axis(marg, 1)?;

    let mi = g.sub(log_qzx, log_qz)?;
    let mi = g.mean(mi)?;
    let tc = g.sub(log_qz, log_prod)?;
    let tc = g.mean(tc)?;
    let dk = g.sub(log_prod, log_pz)?;
    let dk = g.mean(dk)?;
    Ok((mi, tc, dk))
}

/// Reconstruction negative log-likelihood (unit-variance Gaussian, constants
/// dropped), averaged over the batch.
fn recon_term(
    g: &mut Graph,
    x: Var,
    x_hat: Var,
    mode: ReconMode,
    oracle: Option<&Oracle>,
) -> Result<Var> {
    let (a, b) = match mode {
        ReconMode::Pixel => (x, x_hat),
        ReconMode::Perceptual => {
            let oracle = oracle.ok_or_else(|| {
                Error::Invalid("perceptual reconstruction needs an oracle network".into())
            })?;
            // the input itself is the lowest layer of the feature stack
            let fx = oracle.features(g, x)?;
            let fr = oracle.features(g, x_hat)?;
            (g.concat(&[x, fx], 1)?, g.concat(&[x_hat, fr], 1)?)
        }
    };
    let batch = g.shape(x)[0] as f64;
    let d = g.sub(b, a)?;
    let sq = g.square(d)?;
    let s = g.sum(sq)?;
    Ok(g.mul_scalar(s, 0.5 / batch)?)
}

/// β-TCVAE objective on a batch `x` (`[b, 1024]`) with external standard
/// normal `noise` (`[b, d]`).
pub fn tcvae_loss(
    g: &mut Graph,
    vae: &Vae,
    x: Var,
    noise: &Tensor,
    params: &TcvaeParams,
    oracle: Option<&Oracle>,
    mut track: Option<&mut ParamVars>,
) -> Result<(Var, TcvaeTerms)> {
    let b = g.shape(x)[0];
    if b < 2 {
        return Err(Error::Invalid(format!(
            "tcvae loss needs a batch of at least 2, got {b}"
        )));
    }
    let (mu, logvar) = vae.encode_tracked(g, x, track.as_deref_mut())?;
    let eps = g.constant(noise.clone());
    let z = reparameterize(g, mu, logvar, eps)?;
    let x_hat = match track {
        Some(pv) => vae.decoder.forward(g, z, Some(pv))?,
        None => vae.decode(g, z)?,
    };
    let recon = recon_term(g, x, x_hat, params.recon, oracle)?;
    let (mi, tc, dk) = mws_kl_terms(g, z, mu, logvar, params.dataset_size)?;

    let btc = g.mul_scalar(tc, params.beta)?;
    let kl = g.add(mi, btc)?;
    let kl = g.add(kl, dk)?;
    let kl = g.mul_scalar(kl, params.kl_weight)?;
    let rw = g.mul_scalar(recon, params.recon_weight)?;
    let total = g.add(rw, kl)?;
    let terms = TcvaeTerms {
        recon: g.item(recon),
        mi: g.item(mi),
        tc: g.item(tc),
        dim_kl: g.item(dk),
        total: g.item(total),
    };
    Ok((total, terms))
}

/// `KL(N(mu, exp(logvar)) || N(0, I))` summed over dimensions.
pub fn gaussian_kl(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(&m, &lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum()
}

/// Average per-dimension KL to the prior over a set of posteriors (rows of
/// `mu`/`logvar`, each `[n, d]`).
pub fn per_dim_kl(mu: &Tensor, logvar: &Tensor) -> Vec<f64> {
    let (n, d) = (mu.shape()[0], mu.shape()[1]);
    let mut out = vec![0.0; d];
    for i in 0..n {
        for k in 0..d {
            let (m, lv) = (mu.row(i)[k], logvar.row(i)[k]);
            out[k] += 0.5 * (m * m + lv.exp() - 1.0 - lv) / n as f64;
        }
    }
    out
}

/// Cyclical annealing: within each of `cycles` equal cycles the multiplier
/// rises linearly from 0 to 1 over the first half, then holds at 1.
pub fn cyclical_beta_schedule(step: usize, total_steps: usize, cycles: usize) -> f64 {
    let total = total_steps.max(1) as f64;
    let period = total / cycles.max(1) as f64;
    let pos = (step as f64 % period) / period;
    (2.0 * pos).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::SeededRng;

    fn kl_side(mu: Vec<f64>, lv: Vec<f64>, noise: Vec<f64>, b: usize, d: usize, n: usize) -> (f64, f64, f64) {
        let mut g = Graph::new();
        let m = g.constant(Tensor::new(vec![b, d], mu).unwrap());
        let l = g.constant(Tensor::new(vec![b, d], lv).unwrap());
        let e = g.constant(Tensor::new(vec![b, d], noise).unwrap());
        let z = reparameterize(&mut g, m, l, e).unwrap();
        let (mi, tc, dk) = mws_kl_terms(&mut g, z, m, l, n).unwrap();
        (g.item(mi), g.item(tc), g.item(dk))
    }

    #[test]
    fn posterior_equal_to_prior_gives_zero_kl() {
        let b = 256;
        let mut rng = SeededRng::new(7);
        let (mi, tc, dk) = kl_side(vec![0.0; b], vec![0.0; b], rng.normals(b, 1.0), b, 1, b);
        let total = mi + tc + dk;
        assert!(total.abs() < 0.05, "{mi} {tc} {dk}");
    }

    #[test]
    fn single_factor_closed_form() {
        assert_eq!(gaussian_kl(&[1.0], &[0.0]), 0.5);
        assert_eq!(gaussian_kl(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn batch_of_one_rejected() {
        let mut g = Graph::new();
        let m = g.constant(Tensor::zeros(&[1, 2]));
        assert!(mws_kl_terms(&mut g, m, m, m, 10).is_err());
    }

    #[test]
    fn schedule_shape() {
        let total = 400;
        let cycles = 4;
        assert_eq!(cyclical_beta_schedule(0, total, cycles), 0.0);
        assert_eq!(cyclical_beta_schedule(100, total, cycles), 0.0);
        assert_eq!(cyclical_beta_schedule(50, total, cycles), 1.0);
        assert_eq!(cyclical_beta_schedule(25, total, cycles), 0.5);
        assert_eq!(cyclical_beta_schedule(90, total, cycles), 1.0);
        assert_eq!(cyclical_beta_schedule(325, total, cycles), 0.5);
        for s in 0..total {
            let v = cyclical_beta_schedule(s, total, cycles);
            assert!((0.0..=1.0).contains(&v));
        }
    }
}
