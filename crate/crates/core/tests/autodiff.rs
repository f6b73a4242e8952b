//! Analytic gradients against central finite differences.

mod common;

use common::programs::{check_program, rel_err, Program, H};
use dive_core::tensor::{Graph, SeededRng, Tensor, Var};

#[test]
fn random_composite_graphs_match_finite_differences() {
    let mut rng = SeededRng::new(2024);
    for trial in 0..50 {
        let p = Program::random(&mut rng);
        let err = check_program(&p, &mut rng);
        assert!(err < 1e-4, "trial {trial} {p:?}: max relative error {err:e}");
    }
}

#[test]
fn kinked_ops_away_from_kinks() {
    // abs, clamp and l1_norm checked at points well away from their kinks.
    let x0 = vec![-1.5, -0.7, 0.4, 1.2, 1.9];
    let f = |g: &mut Graph, x: Var| {
        let a = g.abs(x).unwrap();
        let c = g.clamp(x, -1.0, 1.0).unwrap();
        let p = g.mul(a, c).unwrap();
        let l = g.l1_norm(p).unwrap();
        let s = g.sum(c).unwrap();
        g.add(l, s).unwrap()
    };
    let mut g = Graph::new();
    let x = g.variable(vec![5], x0.clone()).unwrap();
    let out = f(&mut g, x);
    g.backward(out).unwrap();
    let analytic = g.grad(x).unwrap().to_vec();
    for j in 0..5 {
        let mut values = [x0.clone(), x0.clone()];
        values[0][j] += H;
        values[1][j] -= H;
        let [fp, fm] = values.map(|v| {
            let mut g = Graph::new();
            let x = g.constant(Tensor::vector(v));
            let o = f(&mut g, x);
            g.item(o)
        });
        let numeric = (fp - fm) / (2.0 * H);
        assert!(rel_err(analytic[j], numeric) < 1e-6, "coord {j}");
    }
}

#[test]
fn determinism_of_seeded_tensors() {
    let make = || {
        let mut r = SeededRng::new(99);
        Tensor::new(vec![4, 4], r.normals(16, 1.0)).unwrap()
    };
    assert_eq!(make(), make());
}
