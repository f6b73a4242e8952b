//! Random composite programs checked against central finite differences.

use dive_core::tensor::{Graph, SeededRng, Tensor, Var};

pub const H: f64 = 1e-4;

/// Relative error with an absolute floor of 1 in the denominator, so tiny
/// gradients are compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Random composite program over a fixed set of input shapes.
#[derive(Debug, Clone)]
pub struct Program {
    pub acts: [u8; 3],
    pub head: u8,
    pub reduce: u8,
}

const SHAPES: [&[usize]; 7] = [&[3, 4], &[4, 5], &[5], &[5, 3], &[3], &[3, 2], &[3, 2]];

pub fn act(g: &mut Graph, x: Var, which: u8) -> Var {
    match which % 6 {
        0 => g.sigmoid(x).unwrap(),
        1 => g.tanh(x).unwrap(),
        2 => g.swish(x).unwrap(),
        3 => g.softplus(x).unwrap(),
        4 => {
            let s = g.mul_scalar(x, 0.3).unwrap();
            g.exp(s).unwrap()
        }
        _ => {
            // squashed first so stacked squares stay well conditioned
            let t = g.tanh(x).unwrap();
            g.square(t).unwrap()
        }
    }
}

pub fn run(p: &Program, g: &mut Graph, inputs: &[Var]) -> Var {
    let [x, w1, b1, w2, b2, w3, m] = inputs.try_into().unwrap();
    let h = g.affine(x, w1, b1).unwrap();
    let h = act(g, h, p.acts[0]);
    let h = g.affine(h, w2, b2).unwrap();
    let h = act(g, h, p.acts[1]);
    let h = g.matmul(h, w3).unwrap(); // [3, 2]
    let h = match p.head % 6 {
        0 => g.mul(h, m).unwrap(),
        1 => {
            let d = g.softplus(m).unwrap();
            let d = g.add_scalar(d, 0.5).unwrap();
            g.div(h, d).unwrap()
        }
        2 => {
            let t = g.transpose(h).unwrap(); // [2, 3]
            let c = g.concat(&[t, t], 1).unwrap(); // [2, 6]
            let s = g.slice(c, 1, 1, 3).unwrap();
            g.transpose(s).unwrap()
        }
        3 => {
            let r = g.sum_axis(m, 1).unwrap(); // [3]
            g.scale_rows(h, r).unwrap()
        }
        4 => {
            let lv = g.tanh(m).unwrap();
            let pg = g.pairwise_gaussian_log_density(h, m, lv).unwrap(); // [3,3,2]
            let s = g.sum_axis(pg, 2).unwrap();
            let s = g.mul_scalar(s, 0.1).unwrap();
            g.reshape(s, vec![3, 3]).unwrap()
        }
        _ => {
            let e = g.sub(h, m).unwrap();
            let sp = g.softplus(e).unwrap();
            let sp = g.add_scalar(sp, 1e-3).unwrap();
            g.log(sp).unwrap()
        }
    };
    let h = act(g, h, p.acts[2]);
    match p.reduce % 5 {
        0 => g.sum(h).unwrap(),
        1 => g.mean(h).unwrap(),
        2 => g.l2_norm(h).unwrap(),
        3 => {
            let l = g.logsumexp_axis(h, 0).unwrap();
            g.sum(l).unwrap()
        }
        _ => {
            let s = g.sum_axis(h, 1).unwrap();
            let s = g.square(s).unwrap();
            g.mean(s).unwrap()
        }
    }
}

pub fn eval(p: &Program, values: &[Vec<f64>]) -> f64 {
    let mut g = Graph::new();
    let inputs: Vec<Var> = values
        .iter()
        .zip(SHAPES)
        .map(|(v, s)| g.constant(Tensor::new(s.to_vec(), v.clone()).unwrap()))
        .collect();
    let out = run(p, &mut g, &inputs);
    g.item(out)
}

pub fn check_program(p: &Program, rng: &mut SeededRng) -> f64 {
    let values: Vec<Vec<f64>> = SHAPES
        .iter()
        .map(|s| {
            (0..s.iter().product::<usize>())
                .map(|_| rng.uniform_range(-2.0, 2.0))
                .collect()
        })
        .collect();
    let mut g = Graph::new();
    let inputs: Vec<Var> = values
        .iter()
        .zip(SHAPES)
        .map(|(v, s)| g.variable(s.to_vec(), v.clone()).unwrap())
        .collect();
    let out = run(p, &mut g, &inputs);
    g.backward(out).unwrap();

    let mut worst: f64 = 0.0;
    for (k, &v) in inputs.iter().enumerate() {
        let analytic = g
            .grad(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; values[k].len()]);
        for (j, &a) in analytic.iter().enumerate() {
            let mut plus = values.clone();
            plus[k][j] += H;
            let mut minus = values.clone();
            minus[k][j] -= H;
            let numeric = (eval(p, &plus) - eval(p, &minus)) / (2.0 * H);
            worst = worst.max(rel_err(a, numeric));
        }
    }
    worst
}

impl Program {
    pub fn random(rng: &mut SeededRng) -> Self {
        Self {
            acts: [rng.below(6) as u8, rng.below(6) as u8, rng.below(6) as u8],
            head: rng.below(6) as u8,
            reduce: rng.below(5) as u8,
        }
    }
}
