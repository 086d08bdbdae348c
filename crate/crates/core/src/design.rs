//! Designs with incrementally maintained inverse covariance and information
//! matrices.
//!
//! For each model a design caches `Sigma_d^{-1}`, `A = Sigma_d^{-1} X_d` and
//! `M_d = X_d^T A`. Units join and leave through rank-1 updates of
//! `Sigma_d^{-1}`. Candidate evaluation never mutates the design:
//!
//! * adding unit `e` uses the Schur complement `S = Sigma_2 - Sigma_12^T Sigma_1^{-1} Sigma_12`
//!   and `delta M = R^T S^{-1} R` with `R = X_2 - Sigma_12^T A`, touching only
//!   the rows of `Sigma_1^{-1}` where `Sigma_12` is non-zero;
//! * removing unit `e` uses the blocks of the cached inverse: with
//!   `E = (Sigma_d^{-1})_{ee}` and `A_e` the rows of `A`, the information lost is
//!   `A_e^T E^{-1} A_e`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::objective::{c_objective, cholesky_strict, Objective};
use crate::problem::{robust_objective, Problem};
use crate::rank1::{add_obs_update, remove_obs_downdate};
use crate::space::UnitId;

/// Applied updates between full recomputations of the cached inverse.
pub const REFRESH_EVERY: usize = 64;

#[derive(Debug, Clone)]
pub struct ModelState {
    pub sigma_inv: DMatrix<f64>,
    /// `Sigma_d^{-1} X_d`
    pub ax: DMatrix<f64>,
    pub info: DMatrix<f64>,
    pub objective: Objective,
}

#[derive(Debug, Clone)]
pub struct Design<'p> {
    problem: &'p Problem,
    units: Vec<UnitId>,
    selected: Vec<bool>,
    class_counts: Vec<usize>,
    obs: Vec<usize>,
    row_of_obs: Vec<Option<usize>>,
    states: Vec<ModelState>,
    objective: Objective,
    pending_updates: usize,
}

impl<'p> Design<'p> {
    pub fn new(problem: &'p Problem, units: &[UnitId]) -> Result<Self> {
        let j = problem.space().n_units();
        let mut selected = vec![false; j];
        let mut class_counts = vec![0; problem.classes().len()];
        for &u in units {
            if u >= j {
                return Err(Error::InvalidParameter(format!("unit {u} is not in the design space")));
            }
            if selected[u] {
                return Err(Error::InvalidParameter(format!("unit {u} selected twice")));
            }
            selected[u] = true;
            class_counts[problem.class_of(u)] += 1;
        }
        let mut design = Design {
            problem,
            units: units.to_vec(),
            selected,
            class_counts,
            obs: problem.observations_of(units),
            row_of_obs: vec![None; problem.space().n_obs()],
            states: Vec::new(),
            objective: Objective::Infinite,
            pending_updates: 0,
        };
        design.refresh()?;
        Ok(design)
    }

    pub fn empty(problem: &'p Problem) -> Self {
        Design::new(problem, &[]).expect("empty design")
    }

    pub fn problem(&self) -> &'p Problem {
        self.problem
    }

    /// Selected units in selection order.
    pub fn units(&self) -> &[UnitId] {
        &self.units
    }

    pub fn sorted_units(&self) -> Vec<UnitId> {
        let mut v = self.units.clone();
        v.sort_unstable();
        v
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn contains(&self, unit: UnitId) -> bool {
        self.selected[unit]
    }

    /// Number of selected units from each duplicate class.
    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    /// Observation index for each row of the cached matrices.
    pub fn observations(&self) -> &[usize] {
        &self.obs
    }

    pub fn state(&self, model: usize) -> &ModelState {
        &self.states[model]
    }

    pub fn sigma_inv(&self, model: usize) -> &DMatrix<f64> {
        &self.states[model].sigma_inv
    }

    pub fn info(&self, model: usize) -> &DMatrix<f64> {
        &self.states[model].info
    }

    /// Objective of the design, weighted over the model class.
    pub fn objective(&self) -> Objective {
        self.objective
    }

    /// Rebuilds every cached matrix from scratch.
    pub fn refresh(&mut self) -> Result<()> {
        self.row_of_obs.iter_mut().for_each(|r| *r = None);
        for (k, &o) in self.obs.iter().enumerate() {
            self.row_of_obs[o] = Some(k);
        }
        let n = self.obs.len();
        let mut states = Vec::with_capacity(self.problem.models().len());
        for m in self.problem.models() {
            let sigma_inv = if n == 0 {
                DMatrix::zeros(0, 0)
            } else {
                let sigma = m.sigma.select_rows(&self.obs).select_columns(&self.obs);
                let chol = sigma.cholesky().ok_or_else(|| Error::SingularCovariance { units: self.sorted_units() })?;
                let inv = chol.inverse();
                (&inv + inv.transpose()) * 0.5
            };
            states.push(ModelState {
                sigma_inv,
                ax: DMatrix::zeros(0, 0),
                info: DMatrix::zeros(0, 0),
                objective: Objective::Infinite,
            });
        }
        self.states = states;
        self.pending_updates = 0;
        self.recompute_derived();
        Ok(())
    }

    fn recompute_derived(&mut self) {
        let problem = self.problem;
        for (state, m) in self.states.iter_mut().zip(problem.models()) {
            let x = m.x.select_rows(&self.obs);
            let p = m.n_params();
            if self.obs.is_empty() {
                state.ax = DMatrix::zeros(0, p);
                state.info = DMatrix::zeros(p, p);
                state.objective = Objective::Infinite;
                continue;
            }
            state.ax = &state.sigma_inv * &x;
            let info = x.transpose() * &state.ax;
            state.info = (&info + info.transpose()) * 0.5;
            state.objective = c_objective(&state.info, problem.c());
        }
        let per_model: Vec<Objective> = self.states.iter().map(|s| s.objective).collect();
        self.objective = robust_objective(problem.weights(), &per_model);
    }

    fn after_update(&mut self) -> Result<()> {
        self.pending_updates += 1;
        if self.pending_updates >= REFRESH_EVERY {
            self.refresh()
        } else {
            self.recompute_derived();
            Ok(())
        }
    }

    /// Adds a unit through successive rank-1 updates of the inverse covariance.
    pub fn add_unit(&mut self, unit: UnitId) -> Result<()> {
        if self.selected[unit] {
            return Err(Error::InvalidParameter(format!("unit {unit} is already in the design")));
        }
        let problem = self.problem;
        for &o in &problem.space().unit(unit).obs {
            for (state, m) in self.states.iter_mut().zip(problem.models()) {
                let f = DVector::from_iterator(self.obs.len(), self.obs.iter().map(|&i| m.sigma[(i, o)]));
                state.sigma_inv = add_obs_update(&state.sigma_inv, &f, m.sigma[(o, o)]).map_err(|e| match e {
                    Error::SingularUpdate { .. } => {
                        let mut units = self.units.clone();
                        units.push(unit);
                        units.sort_unstable();
                        Error::SingularCovariance { units }
                    }
                    other => other,
                })?;
            }
            self.row_of_obs[o] = Some(self.obs.len());
            self.obs.push(o);
        }
        self.units.push(unit);
        self.selected[unit] = true;
        self.class_counts[problem.class_of(unit)] += 1;
        self.after_update()
    }

    /// Removes a unit through successive rank-1 downdates of the inverse covariance.
    pub fn remove_unit(&mut self, unit: UnitId) -> Result<()> {
        if !self.selected[unit] {
            return Err(Error::InvalidParameter(format!("unit {unit} is not in the design")));
        }
        let problem = self.problem;
        let unit_obs = &problem.space().unit(unit).obs;
        if unit_obs.len() == self.obs.len() {
            self.obs.clear();
            self.units.clear();
            self.selected[unit] = false;
            self.class_counts[problem.class_of(unit)] -= 1;
            return self.refresh();
        }
        let sorted = self.sorted_units();
        for &o in unit_obs {
            let pos = self.row_of_obs[o].expect("selected observation has a row");
            for state in self.states.iter_mut() {
                state.sigma_inv = remove_obs_downdate(&state.sigma_inv, pos).map_err(|e| match e {
                    Error::SingularUpdate { .. } => Error::SingularCovariance { units: sorted.clone() },
                    other => other,
                })?;
            }
            self.row_of_obs[o] = None;
            let last = self.obs.len() - 1;
            self.obs.swap_remove(pos);
            if pos != last {
                self.row_of_obs[self.obs[pos]] = Some(pos);
            }
        }
        let at = self.units.iter().position(|&u| u == unit).expect("selected unit listed");
        self.units.swap_remove(at);
        self.selected[unit] = false;
        self.class_counts[problem.class_of(unit)] -= 1;
        self.after_update()
    }

    pub fn swap(&mut self, out: UnitId, into: UnitId) -> Result<()> {
        self.remove_unit(out)?;
        self.add_unit(into)
    }

    /// Copy of the design with `unit` removed.
    pub fn without(&self, unit: UnitId) -> Result<Design<'p>> {
        let mut d = self.clone();
        d.remove_unit(unit)?;
        Ok(d)
    }

    /// Change in the information matrix of `model` if `unit` were added.
    pub fn marginal_info_delta(&self, model: usize, unit: UnitId) -> Result<DMatrix<f64>> {
        let m = &self.problem.models()[model];
        let state = &self.states[model];
        let unit_obs = &self.problem.space().unit(unit).obs;
        let r = unit_obs.len();
        let x2 = m.x.select_rows(unit_obs);
        let mut s = m.sigma.select_rows(unit_obs).select_columns(unit_obs);

        // rows of the current selection correlated with the unit
        let nz: Vec<usize> =
            (0..self.obs.len()).filter(|&k| unit_obs.iter().any(|&o| m.sigma[(self.obs[k], o)] != 0.0)).collect();
        let resid = if nz.is_empty() {
            x2
        } else {
            let s12 = DMatrix::from_fn(nz.len(), r, |a, b| m.sigma[(self.obs[nz[a]], unit_obs[b])]);
            let inv_nz = state.sigma_inv.select_rows(&nz).select_columns(&nz);
            s -= s12.transpose() * (&inv_nz * &s12);
            let ax_nz = state.ax.select_rows(&nz);
            x2 - s12.transpose() * ax_nz
        };
        let s = (&s + s.transpose()) * 0.5;
        let chol = s.cholesky().ok_or_else(|| Error::SingularCovariance {
            units: {
                let mut u = self.sorted_units();
                u.push(unit);
                u
            },
        })?;
        let sr = chol.solve(&resid);
        let delta = resid.transpose() * sr;
        Ok((&delta + delta.transpose()) * 0.5)
    }

    /// Objective of the design with `unit` added.
    pub fn eval_add(&self, unit: UnitId) -> Result<Objective> {
        let mut per_model = Vec::with_capacity(self.states.len());
        for (k, state) in self.states.iter().enumerate() {
            let delta = self.marginal_info_delta(k, unit)?;
            per_model.push(c_objective(&(&state.info + delta), self.problem.c()));
        }
        Ok(robust_objective(self.problem.weights(), &per_model))
    }

    /// Objective of the design with `unit` removed.
    pub fn eval_remove(&self, unit: UnitId) -> Result<Objective> {
        if !self.selected[unit] {
            return Err(Error::InvalidParameter(format!("unit {unit} is not in the design")));
        }
        let rows: Vec<usize> =
            self.problem.space().unit(unit).obs.iter().map(|&o| self.row_of_obs[o].unwrap()).collect();
        if rows.len() == self.obs.len() {
            return Ok(Objective::Infinite);
        }
        let mut per_model = Vec::with_capacity(self.states.len());
        for state in &self.states {
            let e = state.sigma_inv.select_rows(&rows).select_columns(&rows);
            let a = state.ax.select_rows(&rows);
            let l =
                cholesky_strict(&e, 1e-14).ok_or_else(|| Error::SingularCovariance { units: self.sorted_units() })?;
            // A_e^T E^{-1} A_e = (L^{-1} A_e)^T (L^{-1} A_e)
            let la =
                l.solve_lower_triangular(&a).ok_or_else(|| Error::SingularCovariance { units: self.sorted_units() })?;
            let lost = la.transpose() * la;
            per_model.push(c_objective(&(&state.info - lost), self.problem.c()));
        }
        Ok(robust_objective(self.problem.weights(), &per_model))
    }
}
