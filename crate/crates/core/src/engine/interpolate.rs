/// Perturbation at classifier output `query`, read off a trajectory of
/// `(f value, ε)` knots by piecewise quadratic interpolation over `f`.
///
/// Knots are sorted by `f`; repeated `f` values keep their first occurrence.
/// Queries outside the spanned range clamp to the nearest end knot.
pub fn interpolate_target(knots: &[(f64, Vec<f64>)], query: f64) -> Vec<f64> {
    assert!(!knots.is_empty(), "trajectory has no steps");
    let mut order: Vec<usize> = (0..knots.len()).collect();
    order.sort_by(|&a, &b| knots[a].0.total_cmp(&knots[b].0).then(a.cmp(&b)));
    order.dedup_by(|b, a| knots[*a].0 == knots[*b].0);
    let pts: Vec<&(f64, Vec<f64>)> = order.iter().map(|&i| &knots[i]).collect();
    let m = pts.len();
    if m == 1 || query <= pts[0].0 {
        return pts[0].1.clone();
    }
    if query >= pts[m - 1].0 {
        return pts[m - 1].1.clone();
    }
    if let Some(p) = pts.iter().find(|p| p.0 == query) {
        return p.1.clone();
    }
    // segment k holds query in (f_k, f_{k+1})
    let k = pts.windows(2).position(|w| w[0].0 < query && query < w[1].0).expect("query inside range");
    if m == 2 {
        let t = (query - pts[0].0) / (pts[1].0 - pts[0].0);
        return pts[0].1.iter().zip(&pts[1].1).map(|(a, b)| a + t * (b - a)).collect();
    }
    let s = if k + 2 < m { k } else { k - 1 };
    let (f0, f1, f2) = (pts[s].0, pts[s + 1].0, pts[s + 2].0);
    let l0 = (query - f1) * (query - f2) / ((f0 - f1) * (f0 - f2));
    let l1 = (query - f0) * (query - f2) / ((f1 - f0) * (f1 - f2));
    let l2 = (query - f0) * (query - f1) / ((f2 - f0) * (f2 - f1));
    (0..pts[s].1.len())
        .map(|j| l0 * pts[s].1[j] + l1 * pts[s + 1].1[j] + l2 * pts[s + 2].1[j])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knots_are_reproduced() {
        let k = vec![(0.2, vec![1.0, 2.0]), (0.5, vec![3.0, -1.0]), (0.9, vec![0.0, 0.0])];
        assert_eq!(interpolate_target(&k, 0.5), vec![3.0, -1.0]);
        assert_eq!(interpolate_target(&k, 0.0), vec![1.0, 2.0]);
        assert_eq!(interpolate_target(&k, 1.0), vec![0.0, 0.0]);
    }

    #[test]
    fn single_knot_and_duplicates() {
        assert_eq!(interpolate_target(&[(0.3, vec![7.0])], 0.9), vec![7.0]);
        let k = vec![(0.3, vec![1.0]), (0.3, vec![5.0]), (0.6, vec![2.0])];
        assert_eq!(interpolate_target(&k, 0.3), vec![1.0]);
        assert!((interpolate_target(&k, 0.45)[0] - 1.5).abs() < 1e-12);
    }
}
