use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp, ParamVars};
use crate::data::{IMAGE_PIXELS, N_SHAPES, N_STYLES};
use crate::tensor::{Graph, SeededRng, Tensor, TensorError, Var};

pub const EMBEDDING_DIM: usize = 64;
pub const ROTATION_BINS: usize = 3;
pub const SCALE_BINS: usize = 3;
/// label + shape + style + rotation bin + scale bin
pub const ORACLE_OUTPUTS: usize = 1 + N_SHAPES + N_STYLES + ROTATION_BINS + SCALE_BINS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconMode {
    Pixel,
    Perceptual,
}

impl ReconMode {
    pub fn id(self) -> u8 {
        match self {
            Self::Pixel => 0,
            Self::Perceptual => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Self::Pixel),
            1 => Some(Self::Perceptual),
            _ => None,
        }
    }
}

/// Latent encoder: image batch `[b, 1024]` to `(mu, logvar)`, each `[b, d]`.
pub trait LatentEncoder {
    fn latent_dim(&self) -> usize;
    fn encode(&self, g: &mut Graph, x: Var) -> Result<(Var, Var), TensorError>;
}

/// Latent decoder: `[b, d]` to images `[b, 1024]`.
pub trait LatentDecoder {
    fn decode(&self, g: &mut Graph, z: Var) -> Result<Var, TensorError>;
}

/// Binary classifier producing one logit per row, shaped `[b, 1]`.
pub trait LogitModel {
    fn logit(&self, g: &mut Graph, x: Var) -> Result<Var, TensorError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vae {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub latent_dim: usize,
    /// Reconstruction mode the model was trained with.
    pub recon: ReconMode,
}

impl Vae {
    pub fn new(latent_dim: usize, recon: ReconMode, rng: &mut SeededRng) -> Self {
        let encoder = Mlp::new(
            &[IMAGE_PIXELS, 512, 256, 2 * latent_dim],
            Activation::Swish,
            Activation::Identity,
            rng,
        );
        let decoder = Mlp::new(
            &[latent_dim, 256, 512, IMAGE_PIXELS],
            Activation::Swish,
            Activation::Tanh,
            rng,
        );
        Self {
            encoder,
            decoder,
            latent_dim,
            recon,
        }
    }

    pub fn encode_tracked(
        &self,
        g: &mut Graph,
        x: Var,
        track: Option<&mut ParamVars>,
    ) -> Result<(Var, Var), TensorError> {
        let h = self.encoder.forward(g, x, track)?;
        let mu = g.slice(h, 1, 0, self.latent_dim)?;
        let logvar = g.slice(h, 1, self.latent_dim, self.latent_dim)?;
        Ok((mu, logvar))
    }

    /// Posterior means for a batch of images, no graph bookkeeping left behind.
    pub fn encode_mean(&self, images: &Tensor) -> Result<Tensor, TensorError> {
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let (mu, _) = self.encode(&mut g, x)?;
        Ok(g.value(mu).clone())
    }

    pub fn decode_tensor(&self, z: &Tensor) -> Result<Tensor, TensorError> {
        let mut g = Graph::new();
        let z = g.constant(z.clone());
        let x = self.decode(&mut g, z)?;
        Ok(g.value(x).clone())
    }

    /// `decode(encode_mean(x))` for a batch.
    pub fn reconstruct(&self, images: &Tensor) -> Result<Tensor, TensorError> {
        self.decode_tensor(&self.encode_mean(images)?)
    }

    pub fn quantize(&mut self) {
        self.encoder.quantize();
        self.decoder.quantize();
    }
}

impl LatentEncoder for Vae {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn encode(&self, g: &mut Graph, x: Var) -> Result<(Var, Var), TensorError> {
        self.encode_tracked(g, x, None)
    }
}

impl LatentDecoder for Vae {
    fn decode(&self, g: &mut Graph, z: Var) -> Result<Var, TensorError> {
        self.decoder.forward(g, z, None)
    }
}

/// `z = mu + exp(logvar / 2) * noise`.
pub fn reparameterize(g: &mut Graph, mu: Var, logvar: Var, noise: Var) -> Result<Var, TensorError> {
    let half = g.mul_scalar(logvar, 0.5)?;
    let std = g.exp(half)?;
    let scaled = g.mul(std, noise)?;
    g.add(mu, scaled)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub net: Mlp,
}

impl Classifier {
    pub fn new(rng: &mut SeededRng) -> Self {
        Self {
            net: Mlp::new(&[IMAGE_PIXELS, 256, 64, 1], Activation::Swish, Activation::Identity, rng),
        }
    }

    /// `f(x) = sigmoid(logit)` for every row of `images`.
    pub fn predict(&self, images: &Tensor) -> Result<Vec<f64>, TensorError> {
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let l = self.logit(&mut g, x)?;
        Ok(g.data(l).iter().map(|&v| sigmoid(v)).collect())
    }

    pub fn quantize(&mut self) {
        self.net.quantize();
    }
}

impl LogitModel for Classifier {
    fn logit(&self, g: &mut Graph, x: Var) -> Result<Var, TensorError> {
        self.net.forward(g, x, None)
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Oracle: a trunk ending in the 64-d embedding, and one linear layer
/// producing the concatenated head logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Oracle {
    pub trunk: Mlp,
    pub heads: Mlp,
}

/// Oracle outputs for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutput {
    pub embedding: Vec<f64>,
    pub label_prob: f64,
    pub shape: usize,
    pub style: usize,
    pub rotation_bin: usize,
    pub scale_bin: usize,
}

impl OracleOutput {
    pub fn label(&self) -> u8 {
        u8::from(self.label_prob >= 0.5)
    }

    /// Discrete attributes compared when counting attribute changes.
    pub fn attributes(&self) -> [usize; 4] {
        [self.shape, self.style, self.rotation_bin, self.scale_bin]
    }
}

/// Head slices within the oracle's output row: (start, len).
pub const HEAD_LABEL: (usize, usize) = (0, 1);
pub const HEAD_SHAPE: (usize, usize) = (1, N_SHAPES);
pub const HEAD_STYLE: (usize, usize) = (1 + N_SHAPES, N_STYLES);
pub const HEAD_ROTATION: (usize, usize) = (1 + N_SHAPES + N_STYLES, ROTATION_BINS);
pub const HEAD_SCALE: (usize, usize) = (1 + N_SHAPES + N_STYLES + ROTATION_BINS, SCALE_BINS);

impl Oracle {
    pub fn new(rng: &mut SeededRng) -> Self {
        Self {
            trunk: Mlp::new(&[IMAGE_PIXELS, 256, EMBEDDING_DIM], Activation::Swish, Activation::Swish, rng),
            heads: Mlp::new(&[EMBEDDING_DIM, ORACLE_OUTPUTS], Activation::Identity, Activation::Identity, rng),
        }
    }

    /// Hidden trunk activations, concatenated: the perceptual feature space.
    pub fn features(&self, g: &mut Graph, x: Var) -> Result<Var, TensorError> {
        let layers = self.trunk.forward_layers(g, x, None)?;
        g.concat(&layers, 1)
    }

    pub fn embed(&self, g: &mut Graph, x: Var) -> Result<Var, TensorError> {
        self.trunk.forward(g, x, None)
    }

    pub fn run(&self, images: &Tensor) -> Result<Vec<OracleOutput>, TensorError> {
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let e = self.embed(&mut g, x)?;
        let h = self.heads.forward(&mut g, e, None)?;
        let emb = g.value(e);
        let logits = g.value(h);
        Ok((0..images.shape()[0])
            .map(|i| {
                let row = logits.row(i);
                let argmax = |(start, len): (usize, usize)| argmax(&row[start..start + len]);
                OracleOutput {
                    embedding: emb.row(i).to_vec(),
                    label_prob: sigmoid(row[HEAD_LABEL.0]),
                    shape: argmax(HEAD_SHAPE),
                    style: argmax(HEAD_STYLE),
                    rotation_bin: argmax(HEAD_ROTATION),
                    scale_bin: argmax(HEAD_SCALE),
                }
            })
            .collect())
    }

    pub fn quantize(&mut self) {
        self.trunk.quantize();
        self.heads.quantize();
    }
}

/// First index of the maximum (ties resolve to the lowest index).
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn rotation_bin(rotation: f64) -> usize {
    bin(rotation, -25.0, 25.0, ROTATION_BINS)
}

pub fn scale_bin(scale: f64) -> usize {
    bin(scale, 0.6, 1.0, SCALE_BINS)
}

fn bin(v: f64, lo: f64, hi: f64, n: usize) -> usize {
    (((v - lo) / (hi - lo) * n as f64).floor().max(0.0) as usize).min(n - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_batch(n: usize, rng: &mut SeededRng) -> Tensor {
        Tensor::new(vec![n, IMAGE_PIXELS], (0..n * IMAGE_PIXELS).map(|_| rng.uniform_range(-1.0, 1.0)).collect())
            .unwrap()
    }

    #[test]
    fn encode_shapes_and_determinism() {
        let mut rng = SeededRng::new(1);
        let vae = Vae::new(16, ReconMode::Perceptual, &mut rng);
        let x = image_batch(3, &mut rng);
        let run = || {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let (mu, lv) = vae.encode(&mut g, xv).unwrap();
            (g.value(mu).clone(), g.value(lv).clone())
        };
        let (mu, lv) = run();
        assert_eq!(mu.shape(), &[3, 16]);
        assert_eq!(lv.shape(), &[3, 16]);
        assert_eq!(run(), (mu, lv));
    }

    #[test]
    fn zero_weight_encoder_returns_bias() {
        let mut rng = SeededRng::new(2);
        let mut vae = Vae::new(4, ReconMode::Pixel, &mut rng);
        for l in &mut vae.encoder.layers {
            l.w.data_mut().fill(0.0);
        }
        let last = vae.encoder.layers.last_mut().unwrap();
        for (i, b) in last.b.data_mut().iter_mut().enumerate() {
            *b = i as f64 * 0.25 - 0.5;
        }
        let mu = vae.encode_mean(&image_batch(2, &mut rng)).unwrap();
        for r in 0..2 {
            assert_eq!(mu.row(r), &[-0.5, -0.25, 0.0, 0.25]);
        }
    }

    #[test]
    fn reparameterize_cases() {
        let mut g = Graph::new();
        let mu = g.constant(Tensor::vector(vec![1.0, -2.0]));
        let lv = g.constant(Tensor::vector(vec![0.0, 0.0]));
        let zero = g.constant(Tensor::vector(vec![0.0, 0.0]));
        let n = g.constant(Tensor::vector(vec![0.3, 0.7]));
        let z0 = reparameterize(&mut g, mu, lv, zero).unwrap();
        assert_eq!(g.data(z0), &[1.0, -2.0]);
        let z1 = reparameterize(&mut g, mu, lv, n).unwrap();
        assert_eq!(g.data(z1), &[1.3, -1.3]);
    }

    #[test]
    fn reparameterize_grad_wrt_mu_is_identity() {
        let mu0 = [0.4, -1.1, 2.0];
        let lv: [f64; 3] = [0.3, -0.2, 0.1];
        let noise = [0.5, -0.7, 1.2];
        for k in 0..3 {
            for j in 0..3 {
                // numeric d z_k / d mu_j
                let h = 1e-5;
                let z = |delta: f64| {
                    let m = mu0[j] + delta;
                    let mut mu = mu0;
                    mu[j] = m;
                    mu[k] + (0.5 * lv[k]).exp() * noise[k]
                };
                let num = (z(h) - z(-h)) / (2.0 * h);
                let mut g = Graph::new();
                let m = g.leaf(&Tensor::vector(mu0.to_vec()).with_grad());
                let l = g.constant(Tensor::vector(lv.to_vec()));
                let n = g.constant(Tensor::vector(noise.to_vec()));
                let zv = reparameterize(&mut g, m, l, n).unwrap();
                let pick = g.slice(zv, 0, k, 1).unwrap();
                let s = g.sum(pick).unwrap();
                g.backward(s).unwrap();
                let an = g.grad(m).unwrap()[j];
                assert!((an - num).abs() < 1e-8);
                assert_eq!(an, if j == k { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn classifier_output_in_unit_interval() {
        let mut rng = SeededRng::new(3);
        let c = Classifier::new(&mut rng);
        let p = c.predict(&image_batch(5, &mut rng)).unwrap();
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn oracle_embedding_is_64d() {
        let mut rng = SeededRng::new(4);
        let o = Oracle::new(&mut rng);
        let out = o.run(&image_batch(2, &mut rng)).unwrap();
        assert_eq!(out[0].embedding.len(), EMBEDDING_DIM);
        assert!(out[1].shape < N_SHAPES && out[1].style < N_STYLES);
    }

    #[test]
    fn bins_cover_ranges() {
        assert_eq!(rotation_bin(-25.0), 0);
        assert_eq!(rotation_bin(0.0), 1);
        assert_eq!(rotation_bin(25.0), 2);
        assert_eq!(scale_bin(0.6), 0);
        assert_eq!(scale_bin(1.0), 2);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}
