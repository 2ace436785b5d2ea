//! Randomized verification of the static inequalities: geometric rigidity,
//! the linearized Korn inequality, a-priori admissibility bounds, and the
//! slope representation inequality. Samples are smooth random interior
//! perturbations of the identity; infeasible draws (det F <= 0) are
//! rejected and re-drawn with the rejection count reported. Empirical
//! constants are calibrated once on the frozen seed set and committed;
//! property tests assert against those values times a 1.5 safety factor.

use crate::densities::MaterialParams;
use crate::field::{
    cell_gradient, cell_hessian, energy, gradient_cells, metric, AdmissibleSet, DeformationField,
    FieldError, Grid, LoadField,
};
use crate::mms::{MmsConfig, MmsError};
use crate::num::Real;
use crate::slope::local_slope;
use crate::tensor::{cauchy_green, Mat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PropcheckError {
    #[error("sampler rejected too many draws ({rejections}); lower the amplitude")]
    TooManyRejections { rejections: usize },
    #[error("a-priori bound violated: min cell determinant {min_det}")]
    AprioriViolation { min_det: f64 },
    #[error(transparent)]
    Mms(#[from] MmsError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Sampling plan for random admissible fields.
#[derive(Clone, Copy, Debug)]
pub struct SampleSpec {
    pub seed: u64,
    pub count: usize,
    /// Displacement amplitude of the perturbation.
    pub amplitude: f64,
    /// Polynomial degree of the smooth perturbation modes.
    pub degree: usize,
    /// Admissibility ceiling on the energy.
    pub ceiling_m: f64,
}

impl SampleSpec {
    pub fn reference(seed: u64, count: usize) -> Self {
        SampleSpec { seed, count, amplitude: 0.05, degree: 3, ceiling_m: 1e6 }
    }
}

/// Smooth random displacement: bubble-weighted random polynomial, so the
/// field vanishes on the boundary and is as smooth as the grid resolves.
fn random_displacement<R: Real>(
    grid: Grid,
    rng: &mut ChaCha8Rng,
    amplitude: f64,
    degree: usize,
) -> DeformationField<R> {
    let modes = degree + 1;
    let mut coeffs = vec![[0.0f64; 2]; modes * modes];
    for c in coeffs.iter_mut() {
        for slot in c.iter_mut().take(grid.d) {
            *slot = rng.gen_range(-1.0..1.0);
        }
    }
    DeformationField::from_fn(grid, |x: [R; crate::tensor::MAX_DIM]| {
        let x0 = x[0].to_f64().unwrap();
        let x1 = if grid.d == 2 { x[1].to_f64().unwrap() } else { 0.0 };
        let bubble = |t: f64| 4.0 * t * (1.0 - t);
        let weight = if grid.d == 2 { bubble(x0) * bubble(x1) } else { bubble(x0) };
        let mut v = [0.0f64; 2];
        for i in 0..modes {
            for j in 0..modes {
                let basis = x0.powi(i as i32) * x1.powi(j as i32);
                for k in 0..grid.d {
                    v[k] += coeffs[i * modes + j][k] * basis;
                }
            }
        }
        let mut out = [R::zero(); crate::tensor::MAX_DIM];
        for k in 0..grid.d {
            out[k] = R::of(amplitude * weight * v[k] / modes.pow(2) as f64);
        }
        out
    })
}

/// Draw one admissible field (identity + smooth displacement) with
/// rejection on det F <= 0 or energy above the ceiling.
pub fn sample_admissible<R: Real>(
    adm: &AdmissibleSet<R>,
    load: &LoadField<R>,
    spec: &SampleSpec,
    rng: &mut ChaCha8Rng,
    rejections: &mut usize,
) -> Result<DeformationField<R>, PropcheckError> {
    let grid = adm.yhat.grid;
    for _ in 0..1000 {
        let mut y = DeformationField::identity(grid);
        y.axpy(R::one(), &random_displacement(grid, rng, spec.amplitude, spec.degree));
        adm.clamp(&mut y);
        let phi = energy(adm, load, &y)?;
        if phi.is_finite() && phi <= R::of(spec.ceiling_m) {
            return Ok(y);
        }
        *rejections += 1;
    }
    Err(PropcheckError::TooManyRejections { rejections: *rejections })
}

/// L^pt norm over cells of a per-cell matrix quantity.
fn cell_lp_norm<R: Real>(grid: Grid, mats: &[Mat<R>], pt: R) -> R {
    let vol = grid.cell_volume::<R>();
    mats.iter()
        .map(|m| vol * m.frobenius().powf(pt))
        .sum::<R>()
        .powf(R::one() / pt)
}

/// Rigidity quotient ||grad y1 - grad y0|| / ||C1 - C0|| in L^pt.
/// Infinite when the Cauchy-Green fields coincide but the gradients do not.
pub fn rigidity_ratio<R: Real>(y0: &DeformationField<R>, y1: &DeformationField<R>, pt: R) -> R {
    let grid = y0.grid;
    let f0 = gradient_cells(y0);
    let f1 = gradient_cells(y1);
    let grad_diff: Vec<Mat<R>> = f0.iter().zip(&f1).map(|(a, b)| *b - *a).collect();
    let c_diff: Vec<Mat<R>> =
        f0.iter().zip(&f1).map(|(a, b)| cauchy_green(b) - cauchy_green(a)).collect();
    let num = cell_lp_norm(grid, &grad_diff, pt);
    let den = cell_lp_norm(grid, &c_diff, pt);
    if den == R::zero() {
        if num == R::zero() {
            R::zero()
        } else {
            R::infinity()
        }
    } else {
        num / den
    }
}

/// Korn quotient ||grad u|| / ||(grad u)^T grad y + (grad y)^T grad u||
/// in L^pt. With y = id this is the classical quotient
/// ||grad u|| / 2 ||sym grad u||.
pub fn korn_ratio<R: Real>(y: &DeformationField<R>, u: &DeformationField<R>, pt: R) -> R {
    let grid = y.grid;
    let fy = gradient_cells(y);
    let fu = gradient_cells(u);
    let paired: Vec<Mat<R>> = fy
        .iter()
        .zip(&fu)
        .map(|(gy, gu)| gu.transpose().matmul(gy) + gy.transpose().matmul(gu))
        .collect();
    let num = cell_lp_norm(grid, &fu, pt);
    let den = cell_lp_norm(grid, &paired, pt);
    if den == R::zero() {
        R::infinity()
    } else {
        num / den
    }
}

/// A-priori bound record for one admissible field.
#[derive(Clone, Copy, Debug)]
pub struct AprioriRecord<R: Real> {
    pub phi: R,
    /// Discrete W^{2,p}-type seminorm surrogate.
    pub w2p_norm: R,
    pub grad_max: R,
    pub min_det: R,
}

/// Check the a-priori admissibility bounds on a field with phi <= M.
pub fn apriori_check<R: Real>(
    adm: &AdmissibleSet<R>,
    load: &LoadField<R>,
    y: &DeformationField<R>,
) -> Result<AprioriRecord<R>, PropcheckError> {
    let grid = y.grid;
    let vol = grid.cell_volume::<R>();
    let p = adm.params.p;
    let phi = energy(adm, load, y)?;
    let mut w2p = R::zero();
    let mut grad_max = R::zero();
    let mut min_det = R::infinity();
    for cell in 0..grid.num_cells() {
        let f = cell_gradient(y, cell);
        let g = cell_hessian(y, cell);
        w2p += vol * (f.frobenius().powf(p) + g.frobenius().powf(p));
        grad_max = grad_max.max(f.frobenius());
        min_det = min_det.min(f.det());
    }
    let record = AprioriRecord { phi, w2p_norm: w2p.powf(R::one() / p), grad_max, min_det };
    if !(record.min_det > R::zero()) || !record.w2p_norm.is_finite() {
        return Err(PropcheckError::AprioriViolation {
            min_det: record.min_det.to_f64().unwrap(),
        });
    }
    Ok(record)
}

/// Outcome of the slope representation sampling at a single state.
#[derive(Clone, Copy, Debug)]
pub struct SlopeRepRecord<R: Real> {
    pub slope: R,
    pub max_ratio: R,
    pub samples: usize,
}

/// Sampled-descent check of the slope representation: for admissible w
/// near y, the penalized descent quotient must stay below the local slope.
/// `lambda_hat` and `c_hat` are the calibrated constants; penalty is the
/// small-strain quadratic form.
#[allow(clippy::too_many_arguments)]
pub fn slope_representation_check<R: Real>(
    adm: &AdmissibleSet<R>,
    load: &LoadField<R>,
    cfg: &MmsConfig<R>,
    y: &DeformationField<R>,
    spec: &SampleSpec,
    lambda_hat: R,
    c_hat: R,
    step_amplitude: f64,
) -> Result<SlopeRepRecord<R>, PropcheckError> {
    let grid = y.grid;
    let pt = adm.params.p_tilde;
    let slope = local_slope(adm, load, cfg, y)?.slope;
    let phi_y = energy(adm, load, y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut max_ratio = R::zero();
    let mut samples = 0;
    while samples < spec.count {
        let mut w = y.clone();
        w.axpy(R::one(), &random_displacement(grid, &mut rng, step_amplitude, spec.degree));
        let phi_w = energy(adm, load, &w)?;
        if !phi_w.is_finite() {
            continue;
        }
        let dist = metric(&adm.params, y, &w)?;
        if dist == R::zero() {
            continue;
        }
        let grad_l2 = crate::field::grad_diff_lp_norm(y, &w, R::of(2.0));
        let grad_linf = crate::field::grad_diff_linf_norm(y, &w);
        let penalty = R::of(0.5) * lambda_hat * grad_l2 * grad_l2;
        let numer = (phi_y - phi_w + penalty).max(R::zero());
        let denom = dist
            * (R::one() + c_hat * grad_linf.powf(pt - R::one()) + c_hat * grad_linf)
                .powf(R::one() / pt);
        max_ratio = max_ratio.max(numer / denom);
        samples += 1;
    }
    Ok(SlopeRepRecord { slope, max_ratio, samples })
}

/// JSON-ready summary of one sampled property.
#[derive(Clone, Debug)]
pub struct PropertySummary {
    pub name: String,
    pub count: usize,
    pub rejections: usize,
    pub max_ratio: f64,
    pub argmax_sample: usize,
}

impl PropertySummary {
    pub fn json(&self) -> String {
        format!(
            "{{\"name\":\"{}\",\"count\":{},\"rejections\":{},\"max_ratio\":{:.17e},\"argmax_sample\":{}}}",
            self.name, self.count, self.rejections, self.max_ratio, self.argmax_sample
        )
    }
}

/// Run the rigidity and Korn sampling studies on one grid.
pub fn rigidity_korn_study(
    grid: Grid,
    params: &MaterialParams<f64>,
    spec: &SampleSpec,
) -> Result<(PropertySummary, PropertySummary), PropcheckError> {
    let adm = AdmissibleSet {
        params: params.clone(),
        yhat: DeformationField::identity(grid),
        ceiling_m: spec.ceiling_m,
    };
    let load = DeformationField::zeros(grid);
    let pt = params.p_tilde;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rejections = 0;
    let mut rig = PropertySummary {
        name: "rigidity".into(),
        count: spec.count,
        rejections: 0,
        max_ratio: 0.0,
        argmax_sample: 0,
    };
    let mut korn = PropertySummary {
        name: "korn".into(),
        count: spec.count,
        rejections: 0,
        max_ratio: 0.0,
        argmax_sample: 0,
    };
    for sample in 0..spec.count {
        let y0 = sample_admissible(&adm, &load, spec, &mut rng, &mut rejections)?;
        let y1 = sample_admissible(&adm, &load, spec, &mut rng, &mut rejections)?;
        let r = rigidity_ratio(&y0, &y1, pt);
        if r > rig.max_ratio {
            rig.max_ratio = r;
            rig.argmax_sample = sample;
        }
        let u = random_displacement::<f64>(grid, &mut rng, spec.amplitude, spec.degree);
        let k = korn_ratio(&y0, &u, pt);
        if k > korn.max_ratio {
            korn.max_ratio = k;
            korn.argmax_sample = sample;
        }
        apriori_check(&adm, &load, &y0)?;
        apriori_check(&adm, &load, &y1)?;
    }
    rig.rejections = rejections;
    korn.rejections = rejections;
    Ok((rig, korn))
}

/// Dump a counterexample field plus a JSON note, for replay.
pub fn dump_counterexample<R: Real>(
    dir: &std::path::Path,
    name: &str,
    field: &DeformationField<R>,
    p_tilde: R,
    note: &str,
) -> Result<(), PropcheckError> {
    std::fs::create_dir_all(dir)?;
    let mut bin = std::fs::File::create(dir.join(format!("{name}.bin")))?;
    crate::field::write_checkpoint(&mut bin, field, p_tilde)?;
    let mut json = std::fs::File::create(dir.join(format!("{name}.json")))?;
    writeln!(json, "{{\"name\":\"{name}\",\"note\":\"{note}\"}}")?;
    Ok(())
}

/// Calibrated maxima of the sampled quotients on the frozen seed set
/// (seed 2024, 500 samples, amplitude 0.05, degree 3, grids 17x17 and
/// 33x33). Property tests assert observed maxima <= 1.5x these values.
pub const RIGIDITY_C_HAT: f64 = 0.636;
pub const KORN_C_HAT: f64 = 0.661;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::MAX_DIM;

    type F = DeformationField<f64>;

    #[test]
    fn korn_ratio_exact_for_symmetric_gradient() {
        // affine u with constant symmetric gradient: the cell stencil is
        // exact, so the quotient is exactly 1/2 at y = id
        let grid = Grid::new(2, 9);
        let y = F::identity(grid);
        let u = F::from_fn(grid, |x| [2.0 * x[0] + 0.5 * x[1], 0.5 * x[0] - 1.0 * x[1]]);
        let ratio = korn_ratio(&y, &u, 2.0);
        assert_eq!(ratio, 0.5);
        // generic u reduces to the classical Korn quotient
        let u2 = F::from_fn(grid, |x| [x[1], 0.0]);
        let g: Mat<f64> = Mat::from_rows_2([[0.0, 1.0], [0.0, 0.0]]);
        let expected = g.frobenius() / (2.0 * g.sym().frobenius());
        assert!((korn_ratio::<f64>(&y, &u2, 2.0) - expected).abs() < 1e-13);
    }

    #[test]
    fn rigidity_ratio_limits() {
        let grid = Grid::new(2, 9);
        let y0 = F::identity(grid);
        assert_eq!(rigidity_ratio(&y0, &y0, 2.0), 0.0);
        // small perturbation: ratio approaches the Korn quotient of u
        let u = F::from_fn(grid, |x| {
            let b = 16.0 * x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]);
            [b, -0.3 * b]
        });
        let mut ratios = Vec::new();
        for eps in [1e-3, 1e-5] {
            let mut y1 = y0.clone();
            y1.axpy(eps, &u);
            ratios.push(rigidity_ratio(&y0, &y1, 2.0));
        }
        let korn = korn_ratio(&y0, &u, 2.0);
        assert!((ratios[1] - korn).abs() < 1e-3, "{} vs {korn}", ratios[1]);
        assert!((ratios[1] - korn).abs() < (ratios[0] - korn).abs());
    }

    #[test]
    fn apriori_check_accepts_identity_rejects_collapse() {
        let grid = Grid::new(2, 9);
        let params = MaterialParams::reference(2);
        let adm =
            AdmissibleSet { params, yhat: F::identity(grid), ceiling_m: 1e6 };
        let load = F::zeros(grid);
        let rec = apriori_check(&adm, &load, &F::identity(grid)).unwrap();
        assert!((rec.min_det - 1.0).abs() < 1e-13);
        assert!((rec.grad_max - 2.0f64.sqrt()).abs() < 1e-13);
        let mut bad = F::identity(grid);
        let node = grid.node_flat([4, 4]);
        bad.node_mut(node)[0] -= 0.9;
        bad.node_mut(node)[1] -= 0.9;
        assert!(matches!(
            apriori_check(&adm, &load, &bad),
            Err(PropcheckError::AprioriViolation { .. }) | Err(PropcheckError::Field(_))
        ));
    }

    #[test]
    fn sampler_emits_admissible_fields() {
        let grid = Grid::new(2, 9);
        let params = MaterialParams::reference(2);
        let adm = AdmissibleSet {
            params,
            yhat: F::identity(grid),
            ceiling_m: 1e6,
        };
        let load = F::zeros(grid);
        let spec = SampleSpec::reference(7, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut rejections = 0;
        for _ in 0..10 {
            let y = sample_admissible(&adm, &load, &spec, &mut rng, &mut rejections).unwrap();
            assert_eq!(adm.dirichlet_mismatch(&y), 0.0);
            apriori_check(&adm, &load, &y).unwrap();
        }
        assert_eq!(rejections, 0, "reference amplitude should never reject");
    }

    #[test]
    fn displacement_vanishes_on_boundary() {
        let grid = Grid::new(2, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_displacement::<f64>(grid, &mut rng, 0.1, 3);
        for node in 0..grid.num_nodes() {
            if grid.is_boundary(node) {
                assert_eq!(u.node(node), [0.0; MAX_DIM]);
            }
        }
        assert!(u.max_abs() > 0.0);
    }

    #[test]
    fn small_study_within_calibrated_constants() {
        let grid = Grid::new(2, 9);
        let params = MaterialParams::reference(2);
        let spec = SampleSpec::reference(2024, 40);
        let (rig, korn) = rigidity_korn_study(grid, &params, &spec).unwrap();
        assert!(rig.max_ratio.is_finite() && rig.max_ratio > 0.0);
        assert!(korn.max_ratio.is_finite() && korn.max_ratio > 0.0);
        assert!(rig.max_ratio <= 1.5 * RIGIDITY_C_HAT, "rigidity {}", rig.max_ratio);
        assert!(korn.max_ratio <= 1.5 * KORN_C_HAT, "korn {}", korn.max_ratio);
        assert!(rig.json().contains("\"max_ratio\""));
    }

    #[test]
    fn counterexample_dump_roundtrip() {
        let grid = Grid::new(2, 9);
        let dir = std::env::temp_dir().join("viscoflow-propcheck-test");
        let y = F::identity(grid);
        dump_counterexample(&dir, "unit", &y, 2.0, "test dump").unwrap();
        let mut file = std::fs::File::open(dir.join("unit.bin")).unwrap();
        let (back, pt): (F, f64) = crate::field::read_checkpoint(&mut file).unwrap();
        assert_eq!(pt, 2.0);
        assert_eq!(back, y);
        std::fs::remove_dir_all(&dir).ok();
    }
}
