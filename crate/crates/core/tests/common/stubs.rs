//! Closed-form stand-ins for the networks.

use dive_core::models::{LatentDecoder, LatentEncoder, LogitModel};
use dive_core::tensor::{Graph, Tensor, TensorError, Var};

/// Posterior `N(0, I)` for every input.
pub struct StdNormalEncoder(pub usize);

impl LatentEncoder for StdNormalEncoder {
    fn latent_dim(&self) -> usize {
        self.0
    }
    fn encode(&self, g: &mut Graph, x: Var) -> Result<(Var, Var), TensorError> {
        let b = g.shape(x)[0];
        let z = g.constant(Tensor::zeros(&[b, self.0]));
        Ok((z, z))
    }
}

/// `μ = x`, unit variance: the image is its own latent code.
pub struct IdentityEncoder(pub usize);

impl LatentEncoder for IdentityEncoder {
    fn latent_dim(&self) -> usize {
        self.0
    }
    fn encode(&self, g: &mut Graph, x: Var) -> Result<(Var, Var), TensorError> {
        let b = g.shape(x)[0];
        let lv = g.constant(Tensor::zeros(&[b, self.0]));
        Ok((x, lv))
    }
}

pub struct IdentityDecoder;

impl LatentDecoder for IdentityDecoder {
    fn decode(&self, _g: &mut Graph, z: Var) -> Result<Var, TensorError> {
        Ok(z)
    }
}

/// `logit = w · x + b`.
pub struct LinearLogit {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LogitModel for LinearLogit {
    fn logit(&self, g: &mut Graph, x: Var) -> Result<Var, TensorError> {
        let w = g.constant(Tensor::new(vec![self.w.len(), 1], self.w.clone())?);
        let b = g.constant(Tensor::vector(vec![self.b]));
        g.affine(x, w, b)
    }
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Composite Simpson rule for `∫ 4 σ(2z)(1-σ(2z)) φ(z) dz`.
pub fn logistic_fisher_quadrature() -> f64 {
    let (a, b, m) = (-12.0, 12.0, 20_000);
    let h = (b - a) / m as f64;
    let f = |z: f64| {
        let p = sigmoid(2.0 * z);
        4.0 * p * (1.0 - p) * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
    };
    let mut s = f(a) + f(b);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}
