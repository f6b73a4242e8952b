use crate::tensor::{Graph, SeededRng, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Activation {
    Identity = 0,
    Swish = 1,
    Tanh = 2,
    Sigmoid = 3,
}

impl Activation {
    pub fn from_id(id: u8) -> Option<Self> {
        Some(match id {
            0 => Self::Identity,
            1 => Self::Swish,
            2 => Self::Tanh,
            3 => Self::Sigmoid,
            _ => return None,
        })
    }

    pub fn apply(self, g: &mut Graph, x: Var) -> Result<Var, TensorError> {
        match self {
            Self::Identity => Ok(x),
            Self::Swish => g.swish(x),
            Self::Tanh => g.tanh(x),
            Self::Sigmoid => g.sigmoid(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `[in, out]`
    pub w: Tensor,
    /// `[out]`
    pub b: Tensor,
}

impl Linear {
    /// LeCun-normal weights, zero bias.
    pub fn new(input: usize, output: usize, rng: &mut SeededRng) -> Self {
        let std = (1.0 / input as f64).sqrt();
        Self {
            w: Tensor::new(vec![input, output], rng.normals(input * output, std)).expect("shape"),
            b: Tensor::zeros(&[output]),
        }
    }

    pub fn input(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn output(&self) -> usize {
        self.w.shape()[1]
    }
}

/// Fully connected stack: `hidden` activation between layers, `output`
/// activation after the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden: Activation,
    pub output: Activation,
}

/// Param leaves recorded during a forward pass, in `Mlp::params` order.
#[derive(Debug, Default)]
pub struct ParamVars(pub Vec<Var>);

impl Mlp {
    pub fn new(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut SeededRng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least one layer");
        Self {
            layers: sizes.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect(),
            hidden,
            output,
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].input()];
        s.extend(self.layers.iter().map(Linear::output));
        s
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b]).collect()
    }

    /// Forward pass returning the output of every layer (post-activation).
    pub fn forward_layers(
        &self,
        g: &mut Graph,
        x: Var,
        mut track: Option<&mut ParamVars>,
    ) -> Result<Vec<Var>, TensorError> {
        let mut h = x;
        let mut outs = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let tracked = track.is_some();
            let w = g.param(&layer.w, tracked);
            let b = g.param(&layer.b, tracked);
            if let Some(pv) = track.as_deref_mut() {
                pv.0.push(w);
                pv.0.push(b);
            }
            h = g.affine(h, w, b)?;
            let act = if i == last { self.output } else { self.hidden };
            h = act.apply(g, h)?;
            outs.push(h);
        }
        Ok(outs)
    }

    pub fn forward(&self, g: &mut Graph, x: Var, track: Option<&mut ParamVars>) -> Result<Var, TensorError> {
        Ok(*self.forward_layers(g, x, track)?.last().expect("non-empty"))
    }

    /// Round every parameter through f32 so the in-memory model equals its
    /// stored form.
    pub fn quantize(&mut self) {
        for p in self.params_mut() {
            for v in p.data_mut() {
                *v = f64::from(*v as f32);
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.all_finite())
    }
}

/// Move gradients recorded on `g` into the parameters of `nets`, in order.
pub fn collect_grads(g: &Graph, nets: &mut [&mut Mlp], vars: &ParamVars) {
    let mut it = vars.0.iter();
    for net in nets.iter_mut() {
        for p in net.params_mut() {
            let v = *it.next().expect("one var per parameter");
            p.grad = Some(
                g.grad(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; p.len()]),
            );
        }
    }
}

/// Stack equally sized rows into a `[rows, width]` tensor.
pub fn stack_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Tensor {
    let mut data = Vec::new();
    let mut n = 0;
    let mut width = 0;
    for r in rows {
        width = r.len();
        data.extend_from_slice(r);
        n += 1;
    }
    Tensor::new(vec![n, width], data).expect("non-empty equal rows")
}
