//! Rank-1 down/up-dating of an inverse covariance matrix when a single
//! observation leaves or joins the design.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-12;

/// Inverse covariance of the selection with the observation at `pos` removed.
///
/// The target is treated as if permuted to the last position and
/// `G = C - d d^T / e` is applied. Rows are laid out with swap-remove
/// semantics: the old last row moves into slot `pos`, so a caller keeping
/// `obs.swap_remove(pos)` stays aligned without reordering any matrix.
pub fn remove_obs_downdate(sigma_inv: &DMatrix<f64>, pos: usize) -> Result<DMatrix<f64>> {
    let n = sigma_inv.nrows();
    assert!(pos < n, "position {pos} out of range for {n} observations");
    if n < 2 {
        return Err(Error::InvalidParameter("cannot downdate a single-observation selection".into()));
    }
    let e = sigma_inv[(pos, pos)];
    if e.abs() < PIVOT_TOL {
        return Err(Error::SingularUpdate { op: "downdate", pivot: e });
    }
    let last = n - 1;
    let idx = |i: usize| if i == pos { last } else { i };
    let d: Vec<f64> = (0..last).map(|i| sigma_inv[(idx(i), pos)]).collect();
    Ok(DMatrix::from_fn(last, last, |i, j| sigma_inv[(idx(i), idx(j))] - d[i] * d[j] / e))
}

/// Inverse covariance after appending one observation with covariance `f`
/// against the current selection and variance `h`.
///
/// Two successive Sherman-Morrison updates take the block-diagonal inverse
/// `diag(Sigma^{-1}, 1/h)` through `H** = H* + u v^T` to `H = H** + v u^T`,
/// with `u = (f^T, 0)^T` and `v = e_{n+1}`; only matrix-vector work is done.
pub fn add_obs_update(sigma_inv: &DMatrix<f64>, f: &DVector<f64>, h: f64) -> Result<DMatrix<f64>> {
    let n = sigma_inv.nrows();
    assert_eq!(f.len(), n, "cross-covariance length");
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidParameter(format!("self variance must be positive, got {h}")));
    }
    let np = n + 1;

    // H*^{-1}
    let mut inv = DMatrix::zeros(np, np);
    inv.view_mut((0, 0), (n, n)).copy_from(sigma_inv);
    inv[(n, n)] = 1.0 / h;

    // First update: H** = H* + u v^T.
    // H*^{-1} u = (Sigma^{-1} f, 0); v^T H*^{-1} = (0, ..., 0, 1/h).
    let mut a = DVector::zeros(np);
    a.rows_mut(0, n).copy_from(&(sigma_inv * f));
    let denom1 = 1.0 + a[n];
    if denom1.abs() < PIVOT_TOL {
        return Err(Error::SingularUpdate { op: "update", pivot: denom1 });
    }
    let b_last = 1.0 / h;
    for i in 0..np {
        inv[(i, n)] -= a[i] * b_last / denom1;
    }

    // Second update: H = H** + v u^T.
    // p = H**^{-1} v (last column), q = u^T H**^{-1} (f against the first n rows).
    let p: DVector<f64> = inv.column(n).into_owned();
    let mut q = DVector::zeros(np);
    for j in 0..np {
        let mut s = 0.0;
        for i in 0..n {
            s += f[i] * inv[(i, j)];
        }
        q[j] = s;
    }
    let denom2 = 1.0 + q[n];
    if denom2.abs() < PIVOT_TOL {
        return Err(Error::SingularUpdate { op: "update", pivot: denom2 });
    }
    for j in 0..np {
        let qj = q[j] / denom2;
        for i in 0..np {
            inv[(i, j)] -= p[i] * qj;
        }
    }
    // Restore exact symmetry lost to rounding.
    for j in 0..np {
        for i in (j + 1)..np {
            let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            inv[(i, j)] = v;
            inv[(j, i)] = v;
        }
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * (n as f64 * 0.1)
    }

    fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn identity_downdate() {
        let g = remove_obs_downdate(&DMatrix::identity(2, 2), 0).unwrap();
        assert_eq!(g, DMatrix::identity(1, 1));
        let g = remove_obs_downdate(&DMatrix::identity(2, 2), 1).unwrap();
        assert_eq!(g, DMatrix::identity(1, 1));
    }

    #[test]
    fn downdate_matches_principal_submatrix_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sigma = random_spd(5, &mut rng);
        let inv = sigma.clone().try_inverse().unwrap();
        let g = remove_obs_downdate(&inv, 2).unwrap();
        // swap-remove order: [0, 1, 4, 3]
        let keep = [0usize, 1, 4, 3];
        let sub = sigma.select_rows(&keep).select_columns(&keep);
        let direct = sub.try_inverse().unwrap();
        assert!(rel_err(&g, &direct) < 1e-10);
    }

    #[test]
    fn uncorrelated_add_is_block_diagonal() {
        let inv = DMatrix::from_row_slice(2, 2, &[2.0, -0.5, -0.5, 1.0]);
        let out = add_obs_update(&inv, &DVector::zeros(2), 4.0).unwrap();
        assert_eq!(out.view((0, 0), (2, 2)), inv.view((0, 0), (2, 2)));
        assert_eq!(out[(2, 2)], 0.25);
        assert_eq!(out[(0, 2)], 0.0);
        assert_eq!(out[(2, 1)], 0.0);
    }

    #[test]
    fn one_by_one_add() {
        let out = add_obs_update(&DMatrix::identity(1, 1), &DVector::from_vec(vec![0.5]), 1.0).unwrap();
        let direct = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]).try_inverse().unwrap();
        assert!((&out - &direct).amax() < 1e-12);
    }

    #[test]
    fn add_from_empty() {
        let out = add_obs_update(&DMatrix::zeros(0, 0), &DVector::zeros(0), 2.0).unwrap();
        assert_eq!(out, DMatrix::from_element(1, 1, 0.5));
    }

    #[test]
    fn random_adds_match_direct_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.random_range(1..20);
            let full = random_spd(n + 1, &mut rng);
            let head = full.view((0, 0), (n, n)).into_owned();
            let inv = head.try_inverse().unwrap();
            let f = full.view((0, n), (n, 1)).column(0).into_owned();
            let out = add_obs_update(&inv, &f, full[(n, n)]).unwrap();
            let direct = full.try_inverse().unwrap();
            assert!(rel_err(&out, &direct) < 1e-8);
        }
    }

    #[test]
    fn round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sigma = random_spd(6, &mut rng);
        let inv = sigma.clone().try_inverse().unwrap();
        // remove the last observation, then add it back
        let g = remove_obs_downdate(&inv, 5).unwrap();
        let f = sigma.view((0, 5), (5, 1)).column(0).into_owned();
        let back = add_obs_update(&g, &f, sigma[(5, 5)]).unwrap();
        assert!(rel_err(&back, &inv) < 1e-8);
    }

    #[test]
    fn singular_cases() {
        // Sigma = [[1, 1], [1, 1]] is singular: Schur complement zero.
        let err = add_obs_update(&DMatrix::identity(1, 1), &DVector::from_vec(vec![1.0]), 1.0).unwrap_err();
        assert!(matches!(err, Error::SingularUpdate { .. }));
        let mut m = DMatrix::identity(2, 2);
        m[(1, 1)] = 0.0;
        assert!(matches!(remove_obs_downdate(&m, 1), Err(Error::SingularUpdate { .. })));
        assert!(remove_obs_downdate(&DMatrix::identity(1, 1), 0).is_err());
        assert!(add_obs_update(&DMatrix::identity(1, 1), &DVector::zeros(1), 0.0).is_err());
    }
}
