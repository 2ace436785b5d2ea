//! Trajectory-level verification: the discrete energy-dissipation balance,
//! the dissipation identity, and the residual of the weak form paired
//! against a deterministic basis of bump test fields.
//!
//! The balance residual measures how far the trajectory is from saturating
//!     (1/pt) int |y'|^pt + (1/p') int slope^{p'} + phi(T) - phi(0) = 0,
//! with both time integrals replaced by right-endpoint Riemann sums over
//! the steps. The scheme guarantees inequality step by step; equality is a
//! limit statement, so the residual is reported and tracked under
//! tau-refinement rather than asserted to vanish.

use crate::densities::{p_eval, r_eval, w_eval};
use crate::field::{
    cell_gradient, cell_hessian, dissipation_integral, energy, grad_stencil, hess_stencil,
    AdmissibleSet, DeformationField, FieldError, Grid, LoadField,
};
use crate::mms::{MmsConfig, MmsError, Trajectory};
use crate::num::Real;
use crate::slope::{local_slope, metric_derivative};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("trajectory has flagged steps; diagnostics require clean solves")]
    FlaggedTrajectory,
    #[error(transparent)]
    Mms(#[from] MmsError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// One row of the balance report, at time t = n tau.
#[derive(Clone, Copy, Debug)]
pub struct EdbRow<R: Real> {
    pub n: usize,
    pub t: R,
    pub phi: R,
    /// (1/pt) sum_{m<=n} |y'|_D^pt tau
    pub cum_speed: R,
    /// (1/p') sum_{m<=n} slope(Y^m)^{p'} tau
    pub cum_slope: R,
    /// cum_speed + cum_slope + phi(Y^n) - phi(Y^0)
    pub residual: R,
}

#[derive(Clone, Debug)]
pub struct EdbReport<R: Real> {
    pub p_tilde: R,
    pub rows: Vec<EdbRow<R>>,
    /// Residual at the final time.
    pub final_residual: R,
    /// pt * sum_n tau * int R(F(Y^n), (F(Y^n)-F(Y^{n-1}))/tau) - (phi0 - phiN)
    pub dissipation_identity_residual: R,
}

impl<R: Real> EdbReport<R> {
    pub fn write_csv(&self, w: &mut impl Write) -> Result<(), DiagnosticsError> {
        writeln!(w, "n,t,phi,cum_speed,cum_slope,residual")?;
        for row in &self.rows {
            writeln!(
                w,
                "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                row.n,
                row.t.to_f64().unwrap(),
                row.phi.to_f64().unwrap(),
                row.cum_speed.to_f64().unwrap(),
                row.cum_slope.to_f64().unwrap(),
                row.residual.to_f64().unwrap()
            )?;
        }
        Ok(())
    }

    pub fn summary_json(&self) -> String {
        format!(
            "{{\"p_tilde\":{:.17e},\"steps\":{},\"final_residual\":{:.17e},\"dissipation_identity_residual\":{:.17e}}}",
            self.p_tilde.to_f64().unwrap(),
            self.rows.len(),
            self.final_residual.to_f64().unwrap(),
            self.dissipation_identity_residual.to_f64().unwrap()
        )
    }
}

/// Assemble the balance report for a completed, unflagged trajectory. The
/// slope at each step is computed at the right endpoint Y^n, matching the
/// implicit character of the scheme.
pub fn edb_report<R: Real>(
    adm: &AdmissibleSet<R>,
    load: &LoadField<R>,
    cfg: &MmsConfig<R>,
    traj: &Trajectory<R>,
) -> Result<EdbReport<R>, DiagnosticsError> {
    if traj.has_flagged_steps() {
        return Err(DiagnosticsError::FlaggedTrajectory);
    }
    let pt = adm.params.p_tilde;
    let p_prime = pt / (pt - R::one());
    let tau = traj.tau;
    let mut rows = Vec::with_capacity(traj.len());
    let mut cum_speed = R::zero();
    let mut cum_slope = R::zero();
    for n in 1..=traj.len() {
        let speed = metric_derivative(traj, n);
        cum_speed += speed.powf(pt) * tau / pt;
        let sl = local_slope(adm, load, cfg, &traj.fields[n])?;
        cum_slope += sl.slope.powf(p_prime) * tau / p_prime;
        let phi = traj.phi(n);
        rows.push(EdbRow {
            n,
            t: tau * R::of(n as f64),
            phi,
            cum_speed,
            cum_slope,
            residual: cum_speed + cum_slope + phi - traj.phi0,
        });
    }
    let final_residual = rows.last().map(|r| r.residual).unwrap_or(R::zero());
    let diss = dissipation_identity_residual(adm, load, traj)?;
    Ok(EdbReport { p_tilde: pt, rows, final_residual, dissipation_identity_residual: diss })
}

/// Residual of the dissipation identity with the discrete rate
/// (Y^n - Y^{n-1}) / tau evaluated at the right endpoint state.
pub fn dissipation_identity_residual<R: Real>(
    adm: &AdmissibleSet<R>,
    load: &LoadField<R>,
    traj: &Trajectory<R>,
) -> Result<R, DiagnosticsError> {
    let pt = adm.params.p_tilde;
    let tau = traj.tau;
    let mut accum = R::zero();
    for n in 1..=traj.len() {
        let mut rate = traj.fields[n].clone();
        rate.axpy(-R::one(), &traj.fields[n - 1]);
        rate.scale_in_place(R::one() / tau);
        accum += tau * dissipation_integral(&adm.params, &traj.fields[n], &rate)?;
    }
    let phi0 = energy(adm, load, &traj.fields[0])?;
    let phi_n = energy(adm, load, traj.fields.last().unwrap())?;
    Ok(pt * accum - (phi0 - phi_n))
}

/// Deterministic tensor-product bump test field centered at a deep interior
/// node: per-axis hat of half-width 2 nodes, product across axes, acting on
/// one vector component. Vanishes on the boundary and the first interior
/// layer whenever the center is at depth >= 3.
fn bump_field<R: Real>(grid: Grid, center: [usize; 2], component: usize) -> DeformationField<R> {
    let mut field = DeformationField::zeros(grid);
    for node in 0..grid.num_nodes() {
        let m = grid.node_multi(node);
        let mut v = R::one();
        for k in 0..grid.d {
            let dist = m[k].abs_diff(center[k]);
            if dist >= 2 {
                v = R::zero();
                break;
            }
            v *= R::one() - R::of(dist as f64) * R::of(0.5);
        }
        if v != R::zero() {
            field.node_mut(node)[component] = v;
        }
    }
    field
}

/// Centers of the weak-residual test basis: a coarse deterministic set of
/// nodes at depth >= 3 (at most four per axis).
fn bump_centers(grid: Grid) -> Vec<[usize; 2]> {
    let lo = 3usize;
    let hi = grid.n - 4;
    if hi < lo {
        return Vec::new();
    }
    let span = hi - lo;
    let stride = (span / 3).max(1);
    let axis: Vec<usize> = (lo..=hi).step_by(stride).collect();
    let mut centers = Vec::new();
    match grid.d {
        1 => {
            for &i in &axis {
                centers.push([i, 0]);
            }
        }
        _ => {
            for &i in &axis {
                for &j in &axis {
                    centers.push([i, j]);
                }
            }
        }
    }
    centers
}

/// Discrete W^{2,p}-type norm used to normalize test fields.
fn test_norm<R: Real>(params_p: R, phi: &DeformationField<R>) -> R {
    let grid = phi.grid;
    let vol = grid.cell_volume::<R>();
    let mut total = R::zero();
    for node in 0..grid.num_nodes() {
        let w: R = grid.node_weight(node);
        let mut s = R::zero();
        for k in 0..grid.d {
            s += phi.node(node)[k] * phi.node(node)[k];
        }
        total += w * s.sqrt().powf(params_p);
    }
    for cell in 0..grid.num_cells() {
        total += vol * cell_gradient(phi, cell).frobenius().powf(params_p);
        total += vol * cell_hessian(phi, cell).frobenius().powf(params_p);
    }
    total.powf(R::one() / params_p)
}

/// Pair the weak-form integrand at (y, ydot) against one test field.
fn weak_pairing<R: Real>(
    adm: &AdmissibleSet<R>,
    load: &LoadField<R>,
    y: &DeformationField<R>,
    ydot: &DeformationField<R>,
    phi: &DeformationField<R>,
) -> Result<R, FieldError> {
    let grid = y.grid;
    let d = grid.d;
    let vol = grid.cell_volume::<R>();
    let mut total = R::zero();
    for cell in 0..grid.num_cells() {
        let f = cell_gradient(y, cell);
        let fdot = cell_gradient(ydot, cell);
        let w = w_eval(&adm.params, &f);
        let stress = w.d_f.ok_or(FieldError::Infeasible)? + r_eval(&adm.params, &f, &fdot).d_fdot;
        for k in 0..d {
            let st = grad_stencil::<R>(&grid, cell, k);
            for a in 0..d {
                total += vol * stress[(a, k)] * st.apply(phi, a);
            }
        }
        let d_g = p_eval(&adm.params, &cell_hessian(y, cell)).d_g;
        for j in 0..d {
            for k in 0..d {
                let st = hess_stencil::<R>(&grid, cell, j, k);
                for a in 0..d {
                    total += vol * d_g[(a, j, k)] * st.apply(phi, a);
                }
            }
        }
    }
    for node in 0..grid.num_nodes() {
        let w: R = grid.node_weight(node);
        for k in 0..d {
            total -= w * load.node(node)[k] * phi.node(node)[k];
        }
    }
    Ok(total)
}

/// Max weak-form pairing over the normalized deterministic test basis.
pub fn weak_residual<R: Real>(
    adm: &AdmissibleSet<R>,
    load: &LoadField<R>,
    y: &DeformationField<R>,
    ydot: &DeformationField<R>,
) -> Result<R, FieldError> {
    let grid = y.grid;
    let p = adm.params.p;
    let mut worst = R::zero();
    for center in bump_centers(grid) {
        for component in 0..grid.d {
            let mut phi = bump_field::<R>(grid, center, component);
            let norm = test_norm(p, &phi);
            if norm == R::zero() {
                continue;
            }
            phi.scale_in_place(R::one() / norm);
            worst = worst.max(weak_pairing(adm, load, y, ydot, &phi)?.abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::MaterialParams;
    use crate::mms;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type F = DeformationField<f64>;

    fn setup(grid: Grid) -> (AdmissibleSet<f64>, F) {
        let adm = AdmissibleSet {
            params: MaterialParams::reference(grid.d),
            yhat: F::identity(grid),
            ceiling_m: 1e6,
        };
        let load = F::zeros(grid);
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
    fn stationary_trajectory_zero_residuals() {
        let grid = Grid::new(2, 7);
        let (adm, load) = setup(grid);
        let cfg = MmsConfig::new(0.01_f64, 0.03);
        let traj = mms::run(&adm, &load, &cfg, F::identity(grid)).unwrap();
        let report = edb_report(&adm, &load, &cfg, &traj).unwrap();
        assert!(report.final_residual.abs() < 1e-10, "{}", report.final_residual);
        assert!(report.dissipation_identity_residual.abs() < 1e-10);
        for pair in report.rows.windows(2) {
            assert!(pair[1].cum_speed >= pair[0].cum_speed);
            assert!(pair[1].cum_slope >= pair[0].cum_slope);
            assert!(pair[1].phi <= pair[0].phi + 1e-12);
        }
    }

    #[test]
    fn residual_shrinks_under_tau_refinement() {
        let grid = Grid::new(2, 7);
        let (adm, load) = setup(grid);
        let y0 = perturbed(grid, 11, 0.01);
        let horizon = 0.04;
        let mut edb = Vec::new();
        let mut diss = Vec::new();
        for tau in [0.02, 0.01] {
            let cfg = MmsConfig::new(tau, horizon);
            let traj = mms::run(&adm, &load, &cfg, y0.clone()).unwrap();
            let report = edb_report(&adm, &load, &cfg, &traj).unwrap();
            edb.push(report.final_residual.abs());
            diss.push(report.dissipation_identity_residual.abs());
        }
        assert!(edb[1] < edb[0], "edb residuals {edb:?}");
        assert!(diss[1] < diss[0], "dissipation residuals {diss:?}");
    }

    #[test]
    fn weak_residual_small_at_minimizer() {
        let grid = Grid::new(2, 9);
        let (adm, load) = setup(grid);
        // identity is the unloaded minimizer; zero rate
        let zero = F::zeros(grid);
        let r = weak_residual(&adm, &load, &F::identity(grid), &zero).unwrap();
        assert!(r < 1e-12, "{r}");
        // off equilibrium the residual is visibly nonzero
        let y = perturbed(grid, 2, 0.02);
        let r_off = weak_residual(&adm, &load, &y, &zero).unwrap();
        assert!(r_off > 1e-4, "{r_off}");
    }

    #[test]
    fn weak_residual_decreases_along_converged_flow() {
        let grid = Grid::new(2, 9);
        let (adm, load) = setup(grid);
        let y0 = perturbed(grid, 5, 0.01);
        let cfg = MmsConfig::new(0.01_f64, 0.2);
        let traj = mms::run(&adm, &load, &cfg, y0).unwrap();
        let zero = F::zeros(grid);
        let early = weak_residual(&adm, &load, &traj.fields[1], &zero).unwrap();
        let late = weak_residual(&adm, &load, traj.fields.last().unwrap(), &zero).unwrap();
        assert!(late < early, "early {early} late {late}");
    }

    #[test]
    fn bump_basis_respects_support_rules() {
        for n in [7, 9, 17] {
            let grid = Grid::new(2, n);
            for center in bump_centers(grid) {
                let phi = bump_field::<f64>(grid, center, 0);
                for node in 0..grid.num_nodes() {
                    if !grid.is_interior_deep(node, 2) {
                        assert_eq!(phi.node(node), [0.0, 0.0], "n={n} center={center:?}");
                    }
                }
                assert!(phi.max_abs() == 1.0);
            }
        }
    }

    #[test]
    fn flagged_trajectory_rejected() {
        let grid = Grid::new(2, 7);
        let (adm, load) = setup(grid);
        let cfg = MmsConfig::new(0.01_f64, 0.02);
        let mut traj = mms::run(&adm, &load, &cfg, F::identity(grid)).unwrap();
        traj.records[0].flagged = true;
        assert!(matches!(
            edb_report(&adm, &load, &cfg, &traj),
            Err(DiagnosticsError::FlaggedTrajectory)
        ));
    }

    #[test]
    fn csv_and_json_shapes() {
        let grid = Grid::new(2, 7);
        let (adm, load) = setup(grid);
        let cfg = MmsConfig::new(0.01_f64, 0.02);
        let traj = mms::run(&adm, &load, &cfg, perturbed(grid, 1, 0.005)).unwrap();
        let report = edb_report(&adm, &load, &cfg, &traj).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), traj.len() + 1);
        assert!(text.starts_with("n,t,phi,"));
        let json = report.summary_json();
        assert!(json.contains("\"final_residual\""));
    }
}
