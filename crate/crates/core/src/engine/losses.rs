use crate::tensor::{Graph, Tensor, TensorError, Var};

/// Logits are clamped to this magnitude before any log-likelihood.
pub const LOGIT_CLAMP: f64 = 30.0;

/// Binary cross-entropy `-[t ln p + (1-t) ln(1-p)]` for a probability.
pub fn bce(target: f64, prob: f64) -> f64 {
    let p = prob.clamp(f64::MIN_POSITIVE, 1.0);
    let q = (1.0 - prob).clamp(f64::MIN_POSITIVE, 1.0);
    let mut v = 0.0;
    if target != 0.0 {
        v -= target * p.ln();
    }
    if target != 1.0 {
        v -= (1.0 - target) * q.ln();
    }
    v
}

/// Binary cross-entropy of a clamped logit, `softplus(l) - t l`.
pub fn bce_logit(target: f64, logit: f64) -> f64 {
    let l = logit.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    let softplus = if l > 0.0 { l + (-l).exp().ln_1p() } else { l.exp().ln_1p() };
    softplus - target * l
}

/// Counterfactual loss per row of `logits` (`[n, 1]`), shaped `[n, 1]`.
pub fn cf_terms(g: &mut Graph, logits: Var, target: f64) -> Result<Var, TensorError> {
    let l = g.clamp(logits, -LOGIT_CLAMP, LOGIT_CLAMP)?;
    let sp = g.softplus(l)?;
    let tl = g.mul_scalar(l, target)?;
    g.sub(sp, tl)
}

/// Proximity loss per explanation: `‖x - x̃_i‖₁ + γ‖ε_i‖₁`, shaped `[n]`.
/// `x` is `[1, p]` or `[n, p]`; `x_hat` is `[n, p]`; `eps` is `[n, d]`.
pub fn prox_terms(g: &mut Graph, x: Var, x_hat: Var, eps: Var, gamma: f64) -> Result<Var, TensorError> {
    let n = g.shape(x_hat)[0];
    let x = if g.shape(x)[0] != n {
        let parts = vec![x; n];
        g.concat(&parts, 0)?
    } else {
        x
    };
    let diff = g.sub(x, x_hat)?;
    let ad = g.abs(diff)?;
    let img = g.sum_axis(ad, 1)?;
    let ae = g.abs(eps)?;
    let lat = g.sum_axis(ae, 1)?;
    let lat = g.mul_scalar(lat, gamma)?;
    g.add(img, lat)
}

/// Diversity loss `sqrt(Σ_{i≠j} cos²(ε_i, ε_j))` over ordered pairs.
pub fn diversity(g: &mut Graph, eps: Var) -> Result<Var, TensorError> {
    let n = g.shape(eps)[0];
    let sq = g.square(eps)?;
    let ss = g.sum_axis(sq, 1)?;
    let norm = g.sqrt(ss)?;
    let norm = g.add_scalar(norm, 1e-12)?;
    let ones = g.constant(Tensor::vector(vec![1.0; n]));
    let inv = g.div(ones, norm)?;
    let unit = g.scale_rows(eps, inv)?;
    let ut = g.transpose(unit)?;
    let gram = g.matmul(unit, ut)?;
    let mut off = vec![1.0; n * n];
    for i in 0..n {
        off[i * n + i] = 0.0;
    }
    let off = g.constant(Tensor::new(vec![n, n], off)?);
    let cos = g.mul(gram, off)?;
    let c2 = g.square(cos)?;
    let s = g.sum(c2)?;
    g.sqrt(s)
}

/// Proximity loss for plain vectors.
pub fn loss_prox(x: &[f64], x_hat: &[f64], eps: &[f64], gamma: f64) -> f64 {
    let img: f64 = x.iter().zip(x_hat).map(|(a, b)| (a - b).abs()).sum();
    img + gamma * eps.iter().map(|e| e.abs()).sum::<f64>()
}

/// Diversity loss for a set of perturbations.
pub fn loss_div(eps: &[Vec<f64>]) -> f64 {
    if eps.is_empty() {
        return 0.0;
    }
    let d = eps[0].len();
    let mut g = Graph::unchecked();
    let data: Vec<f64> = eps.iter().flatten().copied().collect();
    let v = g.constant(Tensor::new(vec![eps.len(), d], data).expect("rows of equal length"));
    let out = diversity(&mut g, v).expect("well-formed input");
    g.item(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cf_examples() {
        assert!(bce(1.0, 1.0 - 1e-12) < 1e-11);
        assert!((bce(1.0, 0.5) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bce(0.5, 0.5) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bce_logit(1.0, 0.0) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce_logit(1.0, 1e6).abs() < 1e-12);
        assert!((bce_logit(0.0, 1e6) - 30.0).abs() < 1e-9);
    }

    #[test]
    fn cf_graph_matches_scalar() {
        let logits = [-3.0, -0.2, 0.0, 1.7, 45.0];
        for t in [0.0, 0.3, 1.0] {
            let mut g = Graph::new();
            let l = g.constant(Tensor::new(vec![5, 1], logits.to_vec()).unwrap());
            let c = cf_terms(&mut g, l, t).unwrap();
            for (v, &l) in g.data(c).iter().zip(&logits) {
                assert!((v - bce_logit(t, l)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn prox_examples() {
        assert_eq!(loss_prox(&[0.2, 0.3], &[0.2, 0.3], &[0.0, 0.0], 0.7), 0.0);
        let x = [0.0; 6];
        let xh = [0.5, -0.5, 0.5, -0.5, 0.0, 0.0];
        let v = loss_prox(&x, &xh, &[0.1, -0.2], 0.1);
        assert!((v - 2.03).abs() < 1e-12);
        assert_eq!(loss_prox(&x, &xh, &[0.1, -0.2], 0.0), 2.0);
    }

    #[test]
    fn prox_graph_matches_scalar() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 3], vec![0.0, 1.0, -1.0]).unwrap());
        let xh = g.constant(Tensor::new(vec![2, 3], vec![0.5, 1.0, -1.0, 0.0, 0.0, 0.0]).unwrap());
        let e = g.constant(Tensor::new(vec![2, 2], vec![0.1, -0.2, 0.0, 0.3]).unwrap());
        let p = prox_terms(&mut g, x, xh, e, 0.5).unwrap();
        let got = g.data(p).to_vec();
        assert!((got[0] - loss_prox(&[0.0, 1.0, -1.0], &[0.5, 1.0, -1.0], &[0.1, -0.2], 0.5)).abs() < 1e-12);
        assert!((got[1] - loss_prox(&[0.0, 1.0, -1.0], &[0.0, 0.0, 0.0], &[0.0, 0.3], 0.5)).abs() < 1e-12);
    }

    #[test]
    fn div_examples() {
        assert!(loss_div(&[vec![1.0, 0.0], vec![0.0, 3.0]]).abs() < 1e-9);
        let v = loss_div(&[vec![0.6, 0.8], vec![0.6, 0.8]]);
        assert!((v - std::f64::consts::SQRT_2).abs() < 1e-9);
        assert_eq!(loss_div(&[vec![0.3, 0.1]]), 0.0);
        let a = [vec![0.3, -1.0, 0.2], vec![0.5, 0.5, 0.1]];
        let b = [vec![0.6, -2.0, 0.4], vec![0.5, 0.5, 0.1]];
        assert!((loss_div(&a) - loss_div(&b)).abs() < 1e-9);
    }
}
