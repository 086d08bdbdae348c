use nalgebra::{DMatrix, SymmetricEigen};

/// Gauss–Hermite rule for `E[f(Z)]`, `Z ~ N(0, 1)`: nodes and weights with
/// weights summing to one. Computed from the eigen-decomposition of the
/// Jacobi matrix.
pub fn normal_rule(order: usize) -> Vec<(f64, f64)> {
    assert!(order >= 1, "quadrature order must be >= 1");
    // physicists' Hermite recurrence: off-diagonal sqrt(k / 2)
    let jacobi =
        DMatrix::from_fn(order, order, |i, j| if i.abs_diff(j) == 1 { ((i.max(j)) as f64 / 2.0).sqrt() } else { 0.0 });
    let eig = SymmetricEigen::new(jacobi);
    let mut rule: Vec<(f64, f64)> = (0..order)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k] * std::f64::consts::SQRT_2, v0 * v0)
        })
        .collect();
    rule.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = rule.iter().map(|r| r.1).sum();
    for r in &mut rule {
        r.1 /= total;
    }
    rule
}

/// Tensor-product rule in `dim` standard normal dimensions.
pub fn normal_grid(order: usize, dim: usize) -> Vec<(Vec<f64>, f64)> {
    let rule = normal_rule(order);
    let mut grid = vec![(Vec::new(), 1.0)];
    for _ in 0..dim {
        grid = grid
            .into_iter()
            .flat_map(|(node, w)| {
                rule.iter().map(move |&(z, wz)| {
                    let mut next = node.clone();
                    next.push(z);
                    (next, w * wz)
                })
            })
            .collect();
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moment(rule: &[(f64, f64)], k: i32) -> f64 {
        rule.iter().map(|(z, w)| w * z.powi(k)).sum()
    }

    #[test]
    fn normal_moments() {
        let rule = normal_rule(20);
        assert!((moment(&rule, 0) - 1.0).abs() < 1e-13);
        assert!(moment(&rule, 1).abs() < 1e-12);
        assert!((moment(&rule, 2) - 1.0).abs() < 1e-12);
        assert!((moment(&rule, 4) - 3.0).abs() < 1e-11);
        assert!((moment(&rule, 6) - 15.0).abs() < 1e-10);
    }

    #[test]
    fn three_point_rule() {
        // nodes 0, +-sqrt(3); weights 2/3, 1/6
        let rule = normal_rule(3);
        assert!((rule[0].0 + 3f64.sqrt()).abs() < 1e-12);
        assert!(rule[1].0.abs() < 1e-12);
        assert!((rule[1].1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((rule[2].1 - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn grid_expectation() {
        // E[exp(a Z1 + b Z2)] = exp((a^2 + b^2) / 2)
        let grid = normal_grid(20, 2);
        assert_eq!(grid.len(), 400);
        let e: f64 = grid.iter().map(|(z, w)| w * (0.3 * z[0] - 0.5 * z[1]).exp()).sum();
        assert!((e - (0.17f64).exp()).abs() < 1e-12);
        assert_eq!(normal_grid(5, 0), vec![(vec![], 1.0)]);
    }
}
