//! Local slope of the energy in the dissipation geometry, computed through
//! the dual velocity problem: minimize
//!     J(w) = sum_cells vol R(grad y, grad w) - <grad phi(y), w>
//! over interior-supported velocity fields. At the minimizer wbar the slope
//! is (pt sum vol R(grad y, grad wbar))^{1 - 1/pt}, and the first-order
//! condition for J is the discrete Euler-Lagrange system pairing the
//! viscous stress against the elastic one. Also provides the backward
//! metric-derivative quotient along trajectories.

use crate::field::{
    dissipation_integral, energy_gradient, field_dot, viscous_stress_scatter, AdmissibleSet,
    DeformationField, LoadField,
};
use crate::mms::{inner_minimize, DofMap, MmsConfig, MmsError, Trajectory};
use crate::num::Real;

/// Dual velocity field and the slope value it represents.
#[derive(Clone, Debug)]
pub struct SlopeResult<R: Real> {
    /// Minimizer of the dual problem; zero on the boundary layer.
    pub wbar: DeformationField<R>,
    /// |d phi|_D(y) = (pt * integral R(grad y, grad wbar))^{1 - 1/pt}.
    pub slope: R,
    /// Gradient norm of the dual functional at wbar.
    pub residual: R,
    /// Accepted inner iterations of the dual solve.
    pub iters: usize,
    /// True when the dual solve exited before reaching its tolerance.
    pub flagged: bool,
}

/// Solve the dual velocity problem at the state y and assemble the slope.
pub fn local_slope<R: Real>(
    adm: &AdmissibleSet<R>,
    load: &LoadField<R>,
    cfg: &MmsConfig<R>,
    y: &DeformationField<R>,
) -> Result<SlopeResult<R>, MmsError> {
    let g = energy_gradient(adm, load, y)?;
    let grid = y.grid;
    let dofs = DofMap::new(grid);
    let zero = DeformationField::zeros(grid);
    let x0 = vec![R::zero(); dofs.len()];
    let result = inner_minimize(
        cfg,
        x0,
        |x| {
            let w = dofs.unpack(x, &zero);
            dissipation_integral(&adm.params, y, &w).unwrap() - field_dot(&g, &w)
        },
        |x| {
            let w = dofs.unpack(x, &zero);
            let mut grad = viscous_stress_scatter(&adm.params, y, &w).unwrap();
            for node in 0..grid.num_nodes() {
                if grid.is_boundary(node) {
                    *grad.node_mut(node) = [R::zero(); crate::tensor::MAX_DIM];
                }
            }
            grad.axpy(-R::one(), &g);
            dofs.pack(&grad)
        },
    )?;
    let wbar = dofs.unpack(&result.x, &zero);
    let slope = slope_from_velocity(adm, y, &wbar)?;
    Ok(SlopeResult {
        wbar,
        slope,
        residual: result.grad_norm,
        iters: result.iters,
        flagged: result.flagged,
    })
}

/// Recompute the slope value from a given dual velocity field.
pub fn slope_from_velocity<R: Real>(
    adm: &AdmissibleSet<R>,
    y: &DeformationField<R>,
    w: &DeformationField<R>,
) -> Result<R, MmsError> {
    let pt = adm.params.p_tilde;
    let r_total = dissipation_integral(&adm.params, y, w)?;
    Ok((pt * r_total).powf(R::one() - R::one() / pt))
}

/// Backward difference quotient D(Y^n, Y^{n-1}) / tau of the interpolant.
pub fn metric_derivative<R: Real>(traj: &Trajectory<R>, n: usize) -> R {
    assert!(n >= 1 && n <= traj.len(), "step index out of range");
    traj.records[n - 1].metric_increment / traj.tau
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::MaterialParams;
    use crate::field::{energy, metric, Grid};
    use crate::mms;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type F = DeformationField<f64>;

    fn setup(grid: Grid, delta: f64) -> (AdmissibleSet<f64>, F) {
        let adm = AdmissibleSet {
            params: MaterialParams::reference(grid.d),
            yhat: F::identity(grid),
            ceiling_m: 1e6,
        };
        let load = F::from_fn(grid, |x| {
            [
                delta * (x[0] * (1.0 - x[0])) * (x[1] * (1.0 - x[1])),
                -delta * x[0] * x[1],
            ]
        });
        (adm, load)
    }

    fn perturbed(grid: Grid, seed: u64, amp: f64) -> F {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = F::identity(grid);
        for i in 0..grid.num_nodes() {
            if !grid.is_boundary(i) {
                for k in 0..grid.d {
                    y.node_mut(i)[k] += amp * rng.gen_range(-1.0..1.0);
                }
            }
        }
        y
    }

    #[test]
    fn slope_zero_at_unloaded_minimizer() {
        let grid = Grid::new(2, 7);
        let (adm, _) = setup(grid, 0.0);
        let load = F::zeros(grid);
        let cfg = MmsConfig::new(0.01_f64, 0.01);
        let res = local_slope(&adm, &load, &cfg, &F::identity(grid)).unwrap();
        assert!(!res.flagged);
        assert!(res.slope < 1e-12, "slope {}", res.slope);
        assert!(res.wbar.max_abs() < 1e-12);
    }

    #[test]
    fn slope_self_consistent_and_stationary() {
        let grid = Grid::new(2, 7);
        let (adm, load) = setup(grid, 0.3);
        let cfg = MmsConfig::new(0.01_f64, 0.01);
        let y = perturbed(grid, 21, 0.01);
        let res = local_slope(&adm, &load, &cfg, &y).unwrap();
        assert!(!res.flagged);
        assert!(res.residual <= cfg.inner_tol);
        assert!(res.slope > 0.0);
        let recomputed = slope_from_velocity(&adm, &y, &res.wbar).unwrap();
        let rel = (recomputed - res.slope).abs() / res.slope;
        assert!(rel <= 1e-12, "rel {rel}");
    }

    #[test]
    fn dual_gradient_matches_finite_differences() {
        let grid = Grid::new(2, 7);
        let (adm, load) = setup(grid, 0.2);
        let y = perturbed(grid, 3, 0.01);
        let g = energy_gradient(&adm, &load, &y).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dofs = DofMap::new(grid);
        let zero = F::zeros(grid);
        let j = |x: &[f64]| {
            let w = dofs.unpack(x, &zero);
            dissipation_integral(&adm.params, &y, &w).unwrap() - field_dot(&g, &w)
        };
        let x: Vec<f64> = (0..dofs.len()).map(|_| 0.05 * rng.gen_range(-1.0..1.0)).collect();
        let w = dofs.unpack(&x, &zero);
        let mut grad = viscous_stress_scatter(&adm.params, &y, &w).unwrap();
        for node in 0..grid.num_nodes() {
            if grid.is_boundary(node) {
                *grad.node_mut(node) = [0.0, 0.0];
            }
        }
        grad.axpy(-1.0, &g);
        let gx = dofs.pack(&grad);
        let eps = 1e-6;
        for slot in [0, 7, 19, gx.len() - 1] {
            let mut xp = x.clone();
            xp[slot] += eps;
            let mut xm = x.clone();
            xm[slot] -= eps;
            let fd = (j(&xp) - j(&xm)) / (2.0 * eps);
            let rel = (fd - gx[slot]).abs() / gx[slot].abs().max(1e-8);
            assert!(rel <= 1e-5, "slot {slot} rel {rel}");
        }
    }

    #[test]
    fn sampled_descent_bounded_by_slope() {
        let grid = Grid::new(2, 7);
        let (adm, load) = setup(grid, 0.3);
        let mut cfg = MmsConfig::new(0.01_f64, 0.01);
        cfg.inner_tol = 1e-11;
        let y = perturbed(grid, 17, 0.005);
        let res = local_slope(&adm, &load, &cfg, &y).unwrap();
        let phi_y = energy(&adm, &load, &y).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let mut w = y.clone();
            for i in 0..grid.num_nodes() {
                if !grid.is_boundary(i) {
                    for k in 0..grid.d {
                        w.node_mut(i)[k] += 1e-4 * rng.gen_range(-1.0..1.0);
                    }
                }
            }
            let dist = metric(&adm.params, &y, &w).unwrap();
            if dist == 0.0 {
                continue;
            }
            let drop = (phi_y - energy(&adm, &load, &w).unwrap()).max(0.0);
            assert!(drop / dist <= res.slope + 1e-6, "ratio {} slope {}", drop / dist, res.slope);
        }
    }

    #[test]
    fn metric_derivative_quotients() {
        let grid = Grid::new(2, 7);
        let (adm, _) = setup(grid, 0.0);
        let load = F::zeros(grid);
        let cfg = MmsConfig::new(0.01_f64, 0.03);
        let stationary = mms::run(&adm, &load, &cfg, F::identity(grid)).unwrap();
        for n in 1..=stationary.len() {
            assert!(metric_derivative(&stationary, n) < 1e-7);
        }
        let moving = mms::run(&adm, &load, &cfg, perturbed(grid, 4, 0.02)).unwrap();
        let q1 = metric_derivative(&moving, 1);
        assert!(q1 > 0.0);
        // successive quotients change smoothly (no blow-up between steps)
        let q2 = metric_derivative(&moving, 2);
        assert!(q2 <= q1, "speed should not increase on a descent path");
    }
}
