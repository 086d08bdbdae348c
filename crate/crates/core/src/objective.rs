//! The c-optimal objective `g(d) = c^T M_d^{-1} c` and its infinity sentinel.

use std::cmp::Ordering;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// Relative pivot threshold below which an information matrix is treated as singular.
pub const RANK_TOL: f64 = 1e-10;

/// Value of the objective: a finite variance or the sentinel for a design
/// that carries no information about `c^T beta`.
///
/// There are deliberately no arithmetic impls; combine values through
/// [`Objective::weighted_sum`].
#[derive(Debug, Clone, Copy)]
pub enum Objective {
    Finite(f64),
    Infinite,
}

impl Objective {
    pub fn is_finite(&self) -> bool {
        matches!(self, Objective::Finite(_))
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Objective::Finite(v) => Some(*v),
            Objective::Infinite => None,
        }
    }

    /// `sum_u w_u g_u`, infinite if any term is.
    pub fn weighted_sum(terms: impl IntoIterator<Item = (f64, Objective)>) -> Objective {
        let mut acc = 0.0;
        for (w, g) in terms {
            match g {
                Objective::Finite(v) => acc += w * v,
                Objective::Infinite => return Objective::Infinite,
            }
        }
        Objective::Finite(acc)
    }

    /// True when `self` is smaller than `other` by more than a relative `tol`.
    pub fn improves_on(&self, other: &Objective, tol: f64) -> bool {
        match (self, other) {
            (Objective::Finite(a), Objective::Finite(b)) => *a < *b - tol * b.abs(),
            (Objective::Finite(_), Objective::Infinite) => true,
            (Objective::Infinite, _) => false,
        }
    }
}

impl PartialEq for Objective {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Objective {}

impl PartialOrd for Objective {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Objective {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Objective::Finite(a), Objective::Finite(b)) => a.total_cmp(b),
            (Objective::Finite(_), Objective::Infinite) => Ordering::Less,
            (Objective::Infinite, Objective::Finite(_)) => Ordering::Greater,
            (Objective::Infinite, Objective::Infinite) => Ordering::Equal,
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::Finite(v) => write!(f, "{v}"),
            Objective::Infinite => write!(f, "inf"),
        }
    }
}

impl Serialize for Objective {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Objective::Finite(v) => s.serialize_f64(*v),
            Objective::Infinite => s.serialize_none(),
        }
    }
}

/// Non-zero vector selecting the linear combination `c^T beta` of interest.
#[derive(Debug, Clone, PartialEq)]
pub struct CVector(DVector<f64>);

impl Serialize for CVector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.0.iter())
    }
}

impl CVector {
    pub fn new(c: Vec<f64>) -> Result<Self> {
        if c.is_empty() || c.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("c must be a non-empty finite vector".into()));
        }
        if c.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidParameter("c must not be the zero vector".into()));
        }
        Ok(CVector(DVector::from_vec(c)))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    /// Checks `c` lies in the range of `info`, using eigenvalues above
    /// `RANK_TOL * ||info||` as the numerical range.
    pub fn check_estimable(&self, info: &DMatrix<f64>) -> Result<()> {
        if info.nrows() != self.len() {
            return Err(Error::NotEstimable(format!(
                "c has length {} but the model has {} parameters",
                self.len(),
                info.nrows()
            )));
        }
        let eig = nalgebra::SymmetricEigen::new(info.clone());
        let norm = eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
        if norm == 0.0 {
            return Err(Error::NotEstimable("information matrix of the full space is zero".into()));
        }
        let mut projected = DVector::zeros(self.len());
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam > RANK_TOL * norm {
                let v = eig.eigenvectors.column(k);
                projected += v * v.dot(&self.0);
            }
        }
        let resid = (&self.0 - projected).norm();
        if resid > 1e-8 * self.0.norm() {
            return Err(Error::NotEstimable(format!("component of c outside range(M) has norm {resid:e}")));
        }
        Ok(())
    }
}

/// Cholesky factorisation with a relative pivot threshold; `None` when the
/// matrix is not numerically positive definite.
pub(crate) fn cholesky_strict(m: &DMatrix<f64>, rel_tol: f64) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let scale = (0..n).fold(0.0_f64, |a, i| a.max(m[(i, i)].abs()));
    if scale.is_nan() || scale <= 0.0 || !scale.is_finite() {
        return None;
    }
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d.is_nan() || d <= rel_tol * scale {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// `c^T M^{-1} c`, or the sentinel when `M` is singular or indefinite.
pub fn c_objective(info: &DMatrix<f64>, c: &CVector) -> Objective {
    assert_eq!(info.nrows(), c.len(), "information matrix and c dimensions");
    match cholesky_strict(info, RANK_TOL) {
        Some(l) => {
            // c^T M^{-1} c = |L^{-1} c|^2
            let mut y = c.0.clone();
            let n = y.len();
            for i in 0..n {
                let mut s = y[i];
                for k in 0..i {
                    s -= l[(i, k)] * y[k];
                }
                y[i] = s / l[(i, i)];
            }
            let v = y.norm_squared();
            if v.is_finite() {
                Objective::Finite(v)
            } else {
                Objective::Infinite
            }
        }
        None => Objective::Infinite,
    }
}
