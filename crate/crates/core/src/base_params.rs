//! Numerical reduction of the full standard-parameter regressor to its base
//! (identifiable) columns.
//!
//! The torque regressor Y(q, q̇, q̈) is rank-deficient in general: some
//! standard parameters never appear (a pendulum's total mass) and some only
//! appear in fixed linear combinations (the classic l₁-coupling between the
//! two links of an arm). Sampling Y at random states and orthogonalizing the
//! columns left to right splits them into an independent (base) set and a
//! dependent remainder with its exact combination matrix. Scanning in the
//! original order keeps the canonical parameters — Io1 rather than m2 — in
//! the base set, which makes the folded lumps directly comparable to the
//! textbook ones.

use rand::Rng;

use crate::error::{Error, Result};
use crate::plant::PlantModel;
use crate::util::stream_rng;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BaseReduction {
    /// numerical rank of the sampled regressor
    pub rank: usize,
    /// original column indices of the independent (base) columns, ascending
    pub independent: Vec<usize>,
    /// original column indices of the dependent columns
    pub dependent: Vec<usize>,
    /// rank × n_dep matrix K with Y[:, dep] = Y[:, ind] · K
    pub combination: Vec<f64>,
    /// column labels of the sampled regressor
    pub col_names: Vec<String>,
}

impl BaseReduction {
    /// Fold a full parameter vector into the base parameterization:
    /// θ_base[i] = θ[ind[i]] + Σ_j K[i][j] θ[dep[j]].
    pub fn fold_theta(&self, theta_full: &[f64]) -> Vec<f64> {
        let nd = self.dependent.len();
        self.independent
            .iter()
            .enumerate()
            .map(|(i, &ci)| {
                let mut v = theta_full[ci];
                for (j, &cj) in self.dependent.iter().enumerate() {
                    v += self.combination[i * nd + j] * theta_full[cj];
                }
                v
            })
            .collect()
    }

    pub fn base_names(&self) -> Vec<String> {
        self.independent.iter().map(|&c| self.col_names[c].clone()).collect()
    }

    /// Select the independent columns out of a full regressor row.
    pub fn select_row(&self, full_row: &[f64], out: &mut [f64]) {
        for (o, &c) in out.iter_mut().zip(&self.independent) {
            *o = full_row[c];
        }
    }
}

/// Sample the regressor at `n_states` random states and reduce it.
pub fn reduce_regressor(
    model: &PlantModel,
    friction: bool,
    n_states: usize,
    seed: u64,
    rel_tol: f64,
) -> Result<BaseReduction> {
    let nq = model.n_q();
    let ncols = model.regressor_cols(friction);
    let mut rng = stream_rng(seed, 900);
    let mut rows = vec![0.0; n_states * nq * ncols];
    let mut q = [0.0; crate::plant::MAX_NQ];
    let mut qd = [0.0; crate::plant::MAX_NQ];
    let mut qdd = [0.0; crate::plant::MAX_NQ];
    for s in 0..n_states {
        for j in 0..nq {
            q[j] = rng.random_range(-3.0..3.0);
            qd[j] = rng.random_range(-5.0..5.0);
            qdd[j] = rng.random_range(-10.0..10.0);
        }
        model.regressor(
            &q[..nq],
            &qd[..nq],
            &qdd[..nq],
            friction,
            &mut rows[s * nq * ncols..(s + 1) * nq * ncols],
        );
    }
    reduce_matrix(&rows, n_states * nq, ncols, rel_tol, model.regressor_col_names(friction))
}

fn reduce_matrix(
    rows: &[f64],
    m: usize,
    n: usize,
    rel_tol: f64,
    col_names: Vec<String>,
) -> Result<BaseReduction> {
    let col = |j: usize| (0..m).map(move |i| rows[i * n + j]);
    let scale = (0..n)
        .map(|j| col(j).map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0f64, f64::max);
    if !(scale > 0.0) {
        return Err(Error::Numerical("regressor has zero numerical rank".into()));
    }

    // modified Gram-Schmidt with one reorthogonalization pass, scanning the
    // columns in their original order
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut independent = Vec::new();
    let mut dependent = Vec::new();
    // coefficients of every column on the basis at scan time
    let mut ind_coeffs: Vec<Vec<f64>> = Vec::new();
    let mut dep_coeffs: Vec<Vec<f64>> = Vec::new();
    for j in 0..n {
        let mut v: Vec<f64> = col(j).collect();
        let mut coeffs = vec![0.0; basis.len()];
        for _pass in 0..2 {
            for (k, qk) in basis.iter().enumerate() {
                let c: f64 = qk.iter().zip(&v).map(|(a, b)| a * b).sum();
                coeffs[k] += c;
                for (vi, qi) in v.iter_mut().zip(qk) {
                    *vi -= c * qi;
                }
            }
        }
        let resid: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if resid > rel_tol * scale {
            coeffs.push(resid);
            ind_coeffs.push(coeffs);
            for vi in v.iter_mut() {
                *vi /= resid;
            }
            basis.push(v);
            independent.push(j);
        } else {
            dep_coeffs.push(coeffs);
            dependent.push(j);
        }
    }
    let rank = independent.len();
    if rank == 0 {
        return Err(Error::Numerical("regressor has zero numerical rank".into()));
    }

    // R11 x = c by back substitution, one dependent column at a time.
    // R11[k][i] = coefficient of basis k in independent column i (zero for
    // k > i); a dependent column's coefficients past its scan-time basis
    // size are zero, so the zero-padding is exact.
    let nd = dependent.len();
    let mut combination = vec![0.0; rank * nd];
    for (j, cj) in dep_coeffs.iter().enumerate() {
        let mut x = vec![0.0; rank];
        for i in (0..rank).rev() {
            let mut v = if i < cj.len() { cj[i] } else { 0.0 };
            for (k, xk) in x.iter().enumerate().skip(i + 1) {
                let r_ik = ind_coeffs[k].get(i).copied().unwrap_or(0.0);
                v -= r_ik * xk;
            }
            x[i] = v / ind_coeffs[i][i];
        }
        for i in 0..rank {
            combination[i * nd + j] = x[i];
        }
    }
    Ok(BaseReduction { rank, independent, dependent, combination, col_names })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{LinkParams, MAX_NQ, Plant, PlantKind, PlantModel};
    use rand::Rng;

    fn twolink() -> Plant {
        Plant::new(
            PlantKind::TwoLink,
            vec![
                LinkParams {
                    mass: 1.3,
                    com: [0.22, 0.03, 0.0],
                    inertia: [0.01, 0.01, 0.011, 0.0, 0.0, 0.0],
                    length: 0.5,
                },
                LinkParams {
                    mass: 0.9,
                    com: [0.16, -0.02, 0.0],
                    inertia: [0.005, 0.005, 0.0063, 0.0, 0.0, 0.0],
                    length: 0.4,
                },
            ],
            9.81,
        )
        .unwrap()
    }

    fn pendulum(gravity: f64) -> Plant {
        Plant::new(
            PlantKind::Pendulum,
            vec![LinkParams {
                mass: 1.1,
                com: [0.25, -0.04, 0.0],
                inertia: [0.008, 0.008, 0.009, 0.0, 0.0, 0.0],
                length: 0.3,
            }],
            gravity,
        )
        .unwrap()
    }

    #[test]
    fn ranks_match_structure() {
        let two = twolink().model();
        assert_eq!(reduce_regressor(&two, false, 400, 3, 1e-9).unwrap().rank, 6);
        assert_eq!(reduce_regressor(&two, true, 400, 3, 1e-9).unwrap().rank, 10);
        let pen = pendulum(9.81).model();
        assert_eq!(reduce_regressor(&pen, false, 400, 3, 1e-9).unwrap().rank, 3);
        assert_eq!(reduce_regressor(&pen, true, 400, 3, 1e-9).unwrap().rank, 5);
        // without gravity only the joint inertia is visible from torque alone,
        // plus the two friction columns when present
        let pen0 = pendulum(0.0).model();
        assert_eq!(reduce_regressor(&pen0, false, 400, 3, 1e-9).unwrap().rank, 1);
        assert_eq!(reduce_regressor(&pen0, true, 400, 3, 1e-9).unwrap().rank, 3);
    }

    #[test]
    fn pendulum_base_is_joint_inertia_and_first_moments() {
        let p = pendulum(9.81);
        let red = reduce_regressor(&p.model(), false, 400, 5, 1e-9).unwrap();
        assert_eq!(red.base_names(), vec!["Io", "m.cx", "m.cy"]);
        // the folded full vector reproduces the plant's own base lumps
        let folded = red.fold_theta(&PlantModel::full_theta(&p));
        let lumps = p.base_lumps();
        for i in 0..3 {
            assert!((folded[i] - lumps[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn folded_theta_reproduces_torques() {
        // Y_base(x)·θ_base = Y_full(x)·θ_full at fresh states, for both plants
        for (plant, friction) in [(twolink(), false), (twolink(), true), (pendulum(9.81), true)] {
            let model = plant.model();
            let red = reduce_regressor(&model, friction, 300, 7, 1e-9).unwrap();
            let mut theta_full = PlantModel::full_theta(&plant);
            if friction {
                for _ in 0..model.n_q() {
                    theta_full.push(0.35); // Coulomb level
                    theta_full.push(0.12); // viscous coefficient
                }
            }
            let theta_base = red.fold_theta(&theta_full);
            assert_eq!(theta_base.len(), red.rank);
            let nq = model.n_q();
            let ncols = model.regressor_cols(friction);
            let mut rng = stream_rng(99, 1);
            let mut y = vec![0.0; nq * ncols];
            let mut ybase = vec![0.0; red.rank];
            for _ in 0..200 {
                let mut q = [0.0; MAX_NQ];
                let mut qd = [0.0; MAX_NQ];
                let mut qdd = [0.0; MAX_NQ];
                for j in 0..nq {
                    q[j] = rng.random_range(-3.0..3.0);
                    qd[j] = rng.random_range(-5.0..5.0);
                    qdd[j] = rng.random_range(-10.0..10.0);
                }
                model.regressor(&q[..nq], &qd[..nq], &qdd[..nq], friction, &mut y);
                for i in 0..nq {
                    let row = &y[i * ncols..(i + 1) * ncols];
                    let full: f64 = row.iter().zip(&theta_full).map(|(a, b)| a * b).sum();
                    red.select_row(row, &mut ybase);
                    let base: f64 = ybase.iter().zip(&theta_base).map(|(a, b)| a * b).sum();
                    assert!(
                        (full - base).abs() < 1e-9 * (1.0 + full.abs()),
                        "torque mismatch: {full} vs {base}"
                    );
                }
            }
        }
    }

    #[test]
    fn twolink_mass_coupling_recovered() {
        // the dependent columns are the two link masses; folding must add
        // l₁²·m₂ into the Io1 lump and l₁·m₂ into the m1·cx1 lump
        let p = twolink();
        let red = reduce_regressor(&p.model(), false, 400, 11, 1e-9).unwrap();
        assert_eq!(red.rank, 6);
        let dep_names: Vec<String> = red.dependent.iter().map(|&c| red.col_names[c].clone()).collect();
        assert_eq!(dep_names, vec!["m1", "m2"]);
        assert_eq!(red.base_names(), vec!["Io1", "m1.cx1", "m1.cy1", "Io2", "m2.cx2", "m2.cy2"]);
        // m1 contributes nothing, m2 folds with weights l1² and l1
        let l1 = 0.5;
        let nd = 2;
        for i in 0..6 {
            assert!(red.combination[i * nd].abs() < 1e-9, "m1 weight row {i}");
        }
        assert!((red.combination[nd - 1] - l1 * l1).abs() < 1e-9);
        assert!((red.combination[nd + 1] - l1).abs() < 1e-9);
        for i in 2..6 {
            assert!(red.combination[i * nd + 1].abs() < 1e-9, "m2 weight row {i}");
        }
        let folded = red.fold_theta(&PlantModel::full_theta(&p));
        let lumps = p.base_lumps();
        for i in 0..6 {
            assert!((folded[i] - lumps[i]).abs() < 1e-12, "lump {i}: {} vs {}", folded[i], lumps[i]);
        }
    }
}
