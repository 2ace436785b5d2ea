//! Discrete deformation fields on a uniform grid over the unit box (0,1)^d:
//! difference stencils for the gradient and Hessian, quadrature, Dirichlet
//! handling, and the assembled energy, metric, and their discrete gradients.
//!
//! Discretization: nodal values, cell-centered F (forward differences of
//! cell-corner averages, exact for affine fields) and cell-centered G
//! (second central differences, one-sided next to the boundary, exact for
//! quadratic fields). Quadrature is midpoint per cell for the densities and
//! trapezoidal nodal weights for the load term.

use crate::densities::{d_pointwise, p_eval, r_eval, w_eval, MaterialParams};
use crate::num::Real;
use crate::tensor::{Mat, Tens3, MAX_DIM};
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub d: usize,
    /// Nodes per axis (boundary included).
    pub n: usize,
}

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("state is infeasible (det F <= 0 on some cell)")]
    Infeasible,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint: {0}")]
    BadCheckpoint(String),
}

impl Grid {
    pub fn new(d: usize, n: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&d), "dimension must be 1 or 2");
        assert!(n >= 5, "stencil needs at least 5 nodes per axis");
        Grid { d, n }
    }

    pub fn spacing<R: Real>(&self) -> R {
        R::one() / R::of((self.n - 1) as f64)
    }

    pub fn num_nodes(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn num_cells(&self) -> usize {
        (self.n - 1).pow(self.d as u32)
    }

    pub fn cell_volume<R: Real>(&self) -> R {
        self.spacing::<R>().powi(self.d as i32)
    }

    pub fn node_flat(&self, idx: [usize; MAX_DIM]) -> usize {
        match self.d {
            1 => idx[0],
            _ => idx[0] * self.n + idx[1],
        }
    }

    pub fn node_multi(&self, flat: usize) -> [usize; MAX_DIM] {
        match self.d {
            1 => [flat, 0],
            _ => [flat / self.n, flat % self.n],
        }
    }

    pub fn cell_flat(&self, idx: [usize; MAX_DIM]) -> usize {
        match self.d {
            1 => idx[0],
            _ => idx[0] * (self.n - 1) + idx[1],
        }
    }

    pub fn cell_multi(&self, flat: usize) -> [usize; MAX_DIM] {
        match self.d {
            1 => [flat, 0],
            _ => [flat / (self.n - 1), flat % (self.n - 1)],
        }
    }

    pub fn node_coord<R: Real>(&self, flat: usize) -> [R; MAX_DIM] {
        let h = self.spacing::<R>();
        let m = self.node_multi(flat);
        let mut x = [R::zero(); MAX_DIM];
        for k in 0..self.d {
            x[k] = h * R::of(m[k] as f64);
        }
        x
    }

    pub fn is_boundary(&self, flat: usize) -> bool {
        let m = self.node_multi(flat);
        (0..self.d).any(|k| m[k] == 0 || m[k] == self.n - 1)
    }

    /// Nodes at distance >= `layers` from the boundary.
    pub fn is_interior_deep(&self, flat: usize, layers: usize) -> bool {
        let m = self.node_multi(flat);
        (0..self.d).all(|k| m[k] >= layers && m[k] + layers <= self.n - 1)
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&i| !self.is_boundary(i)).collect()
    }

    /// Trapezoidal quadrature weight of a node.
    pub fn node_weight<R: Real>(&self, flat: usize) -> R {
        let m = self.node_multi(flat);
        let mut w = self.cell_volume::<R>();
        for k in 0..self.d {
            if m[k] == 0 || m[k] == self.n - 1 {
                w = w * R::of(0.5);
            }
        }
        w
    }
}

/// Nodal vector field on a grid. Used for deformations, loads, velocities,
/// and test fields alike.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationField<R: Real> {
    pub grid: Grid,
    y: Vec<[R; MAX_DIM]>,
}

pub type LoadField<R> = DeformationField<R>;

impl<R: Real> DeformationField<R> {
    pub fn zeros(grid: Grid) -> Self {
        DeformationField { grid, y: vec![[R::zero(); MAX_DIM]; grid.num_nodes()] }
    }

    /// The identity deformation y(x) = x.
    pub fn identity(grid: Grid) -> Self {
        Self::from_fn(grid, |x| {
            let mut v = [R::zero(); MAX_DIM];
            v[..grid.d].copy_from_slice(&x[..grid.d]);
            v
        })
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut([R; MAX_DIM]) -> [R; MAX_DIM]) -> Self {
        let mut field = Self::zeros(grid);
        for i in 0..grid.num_nodes() {
            field.y[i] = f(grid.node_coord(i));
        }
        field
    }

    pub fn node(&self, flat: usize) -> [R; MAX_DIM] {
        self.y[flat]
    }

    pub fn node_mut(&mut self, flat: usize) -> &mut [R; MAX_DIM] {
        &mut self.y[flat]
    }

    pub fn axpy(&mut self, alpha: R, other: &Self) {
        assert_eq!(self.grid, other.grid);
        for (a, b) in self.y.iter_mut().zip(other.y.iter()) {
            for k in 0..MAX_DIM {
                a[k] += alpha * b[k];
            }
        }
    }

    pub fn scale_in_place(&mut self, s: R) {
        for a in self.y.iter_mut() {
            for k in 0..MAX_DIM {
                a[k] *= s;
            }
        }
    }

    /// Apply a matrix on the left at every node: y -> Q y.
    pub fn rotate_left(&self, q: &Mat<R>) -> Self {
        let d = self.grid.d;
        let mut out = self.clone();
        for v in out.y.iter_mut() {
            let mut r = [R::zero(); MAX_DIM];
            for i in 0..d {
                for j in 0..d {
                    r[i] += (*q)[(i, j)] * v[j];
                }
            }
            *v = r;
        }
        out
    }

    pub fn max_abs(&self) -> R {
        let mut m = R::zero();
        for v in &self.y {
            for k in 0..self.grid.d {
                m = m.max(v[k].abs());
            }
        }
        m
    }
}

/// Up to 8 (node, coefficient) pairs: a linear functional of nodal values.
#[derive(Clone, Copy, Debug)]
pub struct Stencil<R: Real> {
    len: usize,
    entries: [(usize, R); 8],
}

impl<R: Real> Stencil<R> {
    fn new() -> Self {
        Stencil { len: 0, entries: [(0, R::zero()); 8] }
    }

    fn push(&mut self, node: usize, coeff: R) {
        self.entries[self.len] = (node, coeff);
        self.len += 1;
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, R)> + '_ {
        self.entries[..self.len].iter().copied()
    }

    pub fn apply(&self, field: &DeformationField<R>, component: usize) -> R {
        self.iter().map(|(node, c)| field.node(node)[component] * c).sum()
    }
}

/// Stencil of the k-th column of the cell gradient: forward difference of
/// the two cell-corner averages along axis k.
pub fn grad_stencil<R: Real>(grid: &Grid, cell: usize, axis: usize) -> Stencil<R> {
    let h: R = grid.spacing();
    let c = grid.cell_multi(cell);
    let mut st = Stencil::new();
    match grid.d {
        1 => {
            st.push(grid.node_flat([c[0] + 1, 0]), R::one() / h);
            st.push(grid.node_flat([c[0], 0]), -R::one() / h);
        }
        _ => {
            let half = R::of(0.5) / h;
            let (i, j) = (c[0], c[1]);
            if axis == 0 {
                st.push(grid.node_flat([i + 1, j]), half);
                st.push(grid.node_flat([i + 1, j + 1]), half);
                st.push(grid.node_flat([i, j]), -half);
                st.push(grid.node_flat([i, j + 1]), -half);
            } else {
                st.push(grid.node_flat([i, j + 1]), half);
                st.push(grid.node_flat([i + 1, j + 1]), half);
                st.push(grid.node_flat([i, j]), -half);
                st.push(grid.node_flat([i + 1, j]), -half);
            }
        }
    }
    st
}

/// Second difference along one axis at the cell center, averaged over the
/// transverse corner pair; one-sided on boundary-adjacent cells. Exact for
/// quadratics.
fn second_diff_1d<R: Real>(n: usize, i: usize, h: R) -> ([usize; 4], [R; 4], usize) {
    let h2 = h * h;
    if i == 0 {
        ([0, 1, 2, 0], [R::one() / h2, -R::of(2.0) / h2, R::one() / h2, R::zero()], 3)
    } else if i == n - 2 {
        (
            [n - 3, n - 2, n - 1, 0],
            [R::one() / h2, -R::of(2.0) / h2, R::one() / h2, R::zero()],
            3,
        )
    } else {
        let c = R::of(0.5) / h2;
        ([i - 1, i, i + 1, i + 2], [c, -c, -c, c], 4)
    }
}

/// Stencil of the (j, k) slot of the cell Hessian.
pub fn hess_stencil<R: Real>(grid: &Grid, cell: usize, j: usize, k: usize) -> Stencil<R> {
    let h: R = grid.spacing();
    let c = grid.cell_multi(cell);
    let mut st = Stencil::new();
    if grid.d == 1 {
        let (nodes, coeffs, len) = second_diff_1d::<R>(grid.n, c[0], h);
        for t in 0..len {
            st.push(grid.node_flat([nodes[t], 0]), coeffs[t]);
        }
        return st;
    }
    let (ci, cj) = (c[0], c[1]);
    if j == k {
        // pure second difference along axis j, averaged transversely
        let along = if j == 0 { ci } else { cj };
        let (nodes, coeffs, len) = second_diff_1d::<R>(grid.n, along, h);
        let half = R::of(0.5);
        for t in 0..len {
            for off in 0..2 {
                let idx = if j == 0 { [nodes[t], cj + off] } else { [ci + off, nodes[t]] };
                st.push(grid.node_flat(idx), coeffs[t] * half);
            }
        }
    } else {
        // mixed partial from the four cell corners
        let h2 = h * h;
        st.push(grid.node_flat([ci, cj]), R::one() / h2);
        st.push(grid.node_flat([ci + 1, cj + 1]), R::one() / h2);
        st.push(grid.node_flat([ci + 1, cj]), -R::one() / h2);
        st.push(grid.node_flat([ci, cj + 1]), -R::one() / h2);
    }
    st
}

/// Cell deformation gradient F for a single cell.
pub fn cell_gradient<R: Real>(y: &DeformationField<R>, cell: usize) -> Mat<R> {
    let d = y.grid.d;
    Mat::from_fn(d, |a, k| grad_stencil(&y.grid, cell, k).apply(y, a))
}

/// Cell Hessian G for a single cell.
pub fn cell_hessian<R: Real>(y: &DeformationField<R>, cell: usize) -> Tens3<R> {
    let d = y.grid.d;
    Tens3::from_fn(d, |a, j, k| hess_stencil(&y.grid, cell, j, k).apply(y, a))
}

pub fn gradient_cells<R: Real>(y: &DeformationField<R>) -> Vec<Mat<R>> {
    (0..y.grid.num_cells()).map(|c| cell_gradient(y, c)).collect()
}

pub fn hessian_cells<R: Real>(y: &DeformationField<R>) -> Vec<Tens3<R>> {
    (0..y.grid.num_cells()).map(|c| cell_hessian(y, c)).collect()
}

/// Admissible set: material, Dirichlet datum, and the monitored ceiling M.
#[derive(Clone, Debug)]
pub struct AdmissibleSet<R: Real> {
    pub params: MaterialParams<R>,
    pub yhat: DeformationField<R>,
    pub ceiling_m: R,
}

impl<R: Real> AdmissibleSet<R> {
    /// Overwrite the outermost node layer with the Dirichlet datum.
    pub fn clamp(&self, y: &mut DeformationField<R>) {
        for i in 0..y.grid.num_nodes() {
            if y.grid.is_boundary(i) {
                *y.node_mut(i) = self.yhat.node(i);
            }
        }
    }

    pub fn dirichlet_mismatch(&self, y: &DeformationField<R>) -> R {
        let mut m = R::zero();
        for i in 0..y.grid.num_nodes() {
            if y.grid.is_boundary(i) {
                for k in 0..y.grid.d {
                    m = m.max((y.node(i)[k] - self.yhat.node(i)[k]).abs());
                }
            }
        }
        m
    }
}

/// Total elastic energy phi(y); +infinity when some cell has det F <= 0.
pub fn energy<R: Real>(
    adm: &AdmissibleSet<R>,
    load: &LoadField<R>,
    y: &DeformationField<R>,
) -> Result<R, FieldError> {
    if y.grid != adm.yhat.grid || y.grid != load.grid {
        return Err(FieldError::GridMismatch);
    }
    let vol = y.grid.cell_volume::<R>();
    let mut total = R::zero();
    for cell in 0..y.grid.num_cells() {
        let f = cell_gradient(y, cell);
        let w = w_eval(&adm.params, &f);
        if w.value.is_infinite() {
            return Ok(R::infinity());
        }
        let g = cell_hessian(y, cell);
        total += vol * (w.value + p_eval(&adm.params, &g).value);
    }
    for node in 0..y.grid.num_nodes() {
        let w: R = y.grid.node_weight(node);
        for k in 0..y.grid.d {
            total -= w * load.node(node)[k] * y.node(node)[k];
        }
    }
    Ok(total)
}

/// Exact gradient of the discrete energy with respect to interior nodal
/// values; zero on Dirichlet nodes.
pub fn energy_gradient<R: Real>(
    adm: &AdmissibleSet<R>,
    load: &LoadField<R>,
    y: &DeformationField<R>,
) -> Result<DeformationField<R>, FieldError> {
    if y.grid != adm.yhat.grid || y.grid != load.grid {
        return Err(FieldError::GridMismatch);
    }
    let grid = y.grid;
    let d = grid.d;
    let vol = grid.cell_volume::<R>();
    let mut grad = DeformationField::zeros(grid);
    for cell in 0..grid.num_cells() {
        let f = cell_gradient(y, cell);
        let w = w_eval(&adm.params, &f);
        let d_f = w.d_f.ok_or(FieldError::Infeasible)?;
        for k in 0..d {
            let st = grad_stencil::<R>(&grid, cell, k);
            for (node, c) in st.iter() {
                for a in 0..d {
                    grad.node_mut(node)[a] += vol * d_f[(a, k)] * c;
                }
            }
        }
        let g = cell_hessian(y, cell);
        let d_g = p_eval(&adm.params, &g).d_g;
        for j in 0..d {
            for k in 0..d {
                let st = hess_stencil::<R>(&grid, cell, j, k);
                for (node, c) in st.iter() {
                    for a in 0..d {
                        grad.node_mut(node)[a] += vol * d_g[(a, j, k)] * c;
                    }
                }
            }
        }
    }
    for node in 0..grid.num_nodes() {
        let w: R = grid.node_weight(node);
        for k in 0..d {
            grad.node_mut(node)[k] -= w * load.node(node)[k];
        }
    }
    for node in 0..grid.num_nodes() {
        if grid.is_boundary(node) {
            *grad.node_mut(node) = [R::zero(); MAX_DIM];
        }
    }
    Ok(grad)
}

/// Integral form of the dissipation distance raised to the pt-th power.
pub fn metric_pow<R: Real>(
    params: &MaterialParams<R>,
    y1: &DeformationField<R>,
    y2: &DeformationField<R>,
) -> Result<R, FieldError> {
    if y1.grid != y2.grid {
        return Err(FieldError::GridMismatch);
    }
    let vol = y1.grid.cell_volume::<R>();
    let mut total = R::zero();
    for cell in 0..y1.grid.num_cells() {
        let f1 = cell_gradient(y1, cell);
        let f2 = cell_gradient(y2, cell);
        total += vol * d_pointwise(params, &f1, &f2).powf(params.p_tilde);
    }
    Ok(total)
}

/// Dissipation metric between two deformations on the same grid.
pub fn metric<R: Real>(
    params: &MaterialParams<R>,
    y1: &DeformationField<R>,
    y2: &DeformationField<R>,
) -> Result<R, FieldError> {
    Ok(metric_pow(params, y1, y2)?.powf(R::one() / params.p_tilde))
}

/// Gradient of v -> metric(y1, v)^pt at v = y2, supported on interior nodes.
pub fn metric_gradient_second_arg<R: Real>(
    params: &MaterialParams<R>,
    y1: &DeformationField<R>,
    y2: &DeformationField<R>,
) -> Result<DeformationField<R>, FieldError> {
    if y1.grid != y2.grid {
        return Err(FieldError::GridMismatch);
    }
    let grid = y2.grid;
    let d = grid.d;
    let vol = grid.cell_volume::<R>();
    let pt = params.p_tilde;
    let mut grad = DeformationField::zeros(grid);
    for cell in 0..grid.num_cells() {
        let f1 = cell_gradient(y1, cell);
        let f2 = cell_gradient(y2, cell);
        let delta = params
            .a
            .matmul(&(crate::tensor::cauchy_green(&f2) - crate::tensor::cauchy_green(&f1)));
        let norm = delta.frobenius();
        if norm == R::zero() {
            continue;
        }
        // d/dC |A (C - C1)|^pt = pt |delta|^{pt-2} A^T delta, then chain
        // through C = F^T F: d/dF (S : C) = F (S + S^T).
        let s = params.a.transpose().matmul(&delta).scale(pt * norm.powf(pt - R::of(2.0)));
        let d_f2 = f2.matmul(&(s + s.transpose()));
        for k in 0..d {
            let st = grad_stencil::<R>(&grid, cell, k);
            for (node, c) in st.iter() {
                for a in 0..d {
                    grad.node_mut(node)[a] += vol * d_f2[(a, k)] * c;
                }
            }
        }
    }
    for node in 0..grid.num_nodes() {
        if grid.is_boundary(node) {
            *grad.node_mut(node) = [R::zero(); MAX_DIM];
        }
    }
    Ok(grad)
}

/// Pointwise viscous dissipation integrated over cells for a state/rate pair.
pub fn dissipation_integral<R: Real>(
    params: &MaterialParams<R>,
    y: &DeformationField<R>,
    rate: &DeformationField<R>,
) -> Result<R, FieldError> {
    if y.grid != rate.grid {
        return Err(FieldError::GridMismatch);
    }
    let vol = y.grid.cell_volume::<R>();
    let mut total = R::zero();
    for cell in 0..y.grid.num_cells() {
        let f = cell_gradient(y, cell);
        let fdot = cell_gradient(rate, cell);
        total += vol * r_eval(params, &f, &fdot).value;
    }
    Ok(total)
}

/// Scatter of the viscous stress paired against test-field gradients:
/// returns the nodal field g with <g, phi> = sum_cells vol * dR/dFdot : grad phi.
pub fn viscous_stress_scatter<R: Real>(
    params: &MaterialParams<R>,
    y: &DeformationField<R>,
    rate: &DeformationField<R>,
) -> Result<DeformationField<R>, FieldError> {
    if y.grid != rate.grid {
        return Err(FieldError::GridMismatch);
    }
    let grid = y.grid;
    let d = grid.d;
    let vol = grid.cell_volume::<R>();
    let mut out = DeformationField::zeros(grid);
    for cell in 0..grid.num_cells() {
        let f = cell_gradient(y, cell);
        let fdot = cell_gradient(rate, cell);
        let stress = r_eval(params, &f, &fdot).d_fdot;
        for k in 0..d {
            let st = grad_stencil::<R>(&grid, cell, k);
            for (node, c) in st.iter() {
                for a in 0..d {
                    out.node_mut(node)[a] += vol * stress[(a, k)] * c;
                }
            }
        }
    }
    Ok(out)
}

/// L^pt norm of per-cell gradients of the difference y - ytilde.
pub fn grad_diff_lp_norm<R: Real>(
    y: &DeformationField<R>,
    ytilde: &DeformationField<R>,
    pt: R,
) -> R {
    let vol = y.grid.cell_volume::<R>();
    let mut total = R::zero();
    for cell in 0..y.grid.num_cells() {
        let diff = cell_gradient(y, cell) - cell_gradient(ytilde, cell);
        total += vol * diff.frobenius().powf(pt);
    }
    total.powf(R::one() / pt)
}

/// Max per-cell Frobenius norm of the gradient difference.
pub fn grad_diff_linf_norm<R: Real>(
    y: &DeformationField<R>,
    ytilde: &DeformationField<R>,
) -> R {
    let mut m = R::zero();
    for cell in 0..y.grid.num_cells() {
        m = m.max((cell_gradient(y, cell) - cell_gradient(ytilde, cell)).frobenius());
    }
    m
}

/// Euclidean inner product of two nodal fields over active components.
pub fn field_dot<R: Real>(a: &DeformationField<R>, b: &DeformationField<R>) -> R {
    let d = a.grid.d;
    let mut s = R::zero();
    for i in 0..a.grid.num_nodes() {
        for k in 0..d {
            s += a.node(i)[k] * b.node(i)[k];
        }
    }
    s
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"VFLD";

/// Write a compact binary checkpoint (little-endian f64 payload).
pub fn write_checkpoint<R: Real>(
    w: &mut impl Write,
    field: &DeformationField<R>,
    p_tilde: R,
) -> Result<(), FieldError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&1u32.to_le_bytes())?;
    w.write_all(&(field.grid.d as u32).to_le_bytes())?;
    w.write_all(&(field.grid.n as u32).to_le_bytes())?;
    w.write_all(&p_tilde.to_f64().unwrap().to_le_bytes())?;
    for i in 0..field.grid.num_nodes() {
        for k in 0..field.grid.d {
            w.write_all(&field.node(i)[k].to_f64().unwrap().to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read a checkpoint written by [`write_checkpoint`]. Returns the field and
/// the recorded pt.
pub fn read_checkpoint<R: Real>(
    r: &mut impl Read,
) -> Result<(DeformationField<R>, R), FieldError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(FieldError::BadCheckpoint("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != 1 {
        return Err(FieldError::BadCheckpoint("unknown version".into()));
    }
    r.read_exact(&mut b4)?;
    let d = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let n = u32::from_le_bytes(b4) as usize;
    if !(1..=MAX_DIM).contains(&d) || n < 5 {
        return Err(FieldError::BadCheckpoint("bad grid header".into()));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let p_tilde = R::of(f64::from_le_bytes(b8));
    let grid = Grid::new(d, n);
    let mut field = DeformationField::zeros(grid);
    for i in 0..grid.num_nodes() {
        for k in 0..d {
            r.read_exact(&mut b8)?;
            field.node_mut(i)[k] = R::of(f64::from_le_bytes(b8));
        }
    }
    Ok((field, p_tilde))
}

/// Write a field as flat CSV: node index, coordinates, components.
pub fn write_csv<R: Real>(
    w: &mut impl Write,
    field: &DeformationField<R>,
) -> Result<(), FieldError> {
    let d = field.grid.d;
    let mut header = String::from("node");
    for k in 0..d {
        header.push_str(&format!(",x{k}"));
    }
    for k in 0..d {
        header.push_str(&format!(",y{k}"));
    }
    writeln!(w, "{header}")?;
    for i in 0..field.grid.num_nodes() {
        let x = field.grid.node_coord::<R>(i);
        let mut line = format!("{i}");
        for k in 0..d {
            line.push_str(&format!(",{:.17e}", x[k].to_f64().unwrap()));
        }
        for k in 0..d {
            line.push_str(&format!(",{:.17e}", field.node(i)[k].to_f64().unwrap()));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type F = DeformationField<f64>;

    fn grid9() -> Grid {
        Grid::new(2, 9)
    }

    fn admissible_identity(grid: Grid) -> AdmissibleSet<f64> {
        AdmissibleSet {
            params: MaterialParams::reference(grid.d),
            yhat: F::identity(grid),
            ceiling_m: 1e6,
        }
    }

    /// y = identity plus a random interior perturbation with det F > 0.
    fn random_admissible(grid: Grid, rng: &mut ChaCha8Rng, amp: f64) -> F {
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
    fn gradient_exact_for_affine() {
        let grid = grid9();
        let b = Mat::from_rows_2([[1.2, 0.3], [-0.1, 0.8]]);
        let y = F::from_fn(grid, |x| {
            [b[(0, 0)] * x[0] + b[(0, 1)] * x[1] + 0.5, b[(1, 0)] * x[0] + b[(1, 1)] * x[1] - 0.2]
        });
        for f in gradient_cells(&y) {
            assert!((f - b).frobenius() < 1e-13);
        }
        let id = F::identity(grid);
        for f in gradient_cells(&id) {
            assert!((f - Mat::identity(2)).frobenius() < 1e-14);
        }
    }

    #[test]
    fn gradient_converges_for_quadratic() {
        // y = (x1^2, x2): F11 at the cell center equals 2 xbar1 exactly for
        // this stencil (cell-corner averages are exact for quadratics in 1d)
        let grid = grid9();
        let y = F::from_fn(grid, |x| [x[0] * x[0], x[1]]);
        let h = grid.spacing::<f64>();
        for cell in 0..grid.num_cells() {
            let c = grid.cell_multi(cell);
            let xbar = (c[0] as f64 + 0.5) * h;
            let f = cell_gradient(&y, cell);
            assert!((f[(0, 0)] - 2.0 * xbar).abs() < 1e-13);
        }
    }

    #[test]
    fn hessian_exact_for_quadratic() {
        let grid = grid9();
        let y = F::from_fn(grid, |x| [0.5 * x[0] * x[0] + x[0] * x[1], 2.0 * x[1] * x[1]]);
        for g in hessian_cells(&y) {
            assert!((g[(0, 0, 0)] - 1.0).abs() < 1e-12);
            assert!((g[(0, 0, 1)] - 1.0).abs() < 1e-12);
            assert!((g[(0, 1, 0)] - 1.0).abs() < 1e-12);
            assert!((g[(1, 1, 1)] - 4.0).abs() < 1e-12);
            assert!(g[(1, 0, 0)].abs() < 1e-12);
        }
        let affine = F::from_fn(grid, |x| [x[0] + x[1], x[1]]);
        for g in hessian_cells(&affine) {
            assert!(g.frobenius() < 1e-12);
        }
    }

    #[test]
    fn hessian_refinement_orders() {
        // cubic field: O(h^2) interior, O(h) on boundary-adjacent cells
        let exact = |x: [f64; 2]| 6.0 * x[0]; // d^2/dx1^2 of x1^3
        let mut errs_int = Vec::new();
        let mut errs_bnd = Vec::new();
        for n in [9, 17] {
            let grid = Grid::new(2, n);
            let y = F::from_fn(grid, |x| [x[0] * x[0] * x[0], 0.0]);
            let h = grid.spacing::<f64>();
            let mut e_int: f64 = 0.0;
            let mut e_bnd: f64 = 0.0;
            for cell in 0..grid.num_cells() {
                let c = grid.cell_multi(cell);
                let xbar = (c[0] as f64 + 0.5) * h;
                let err = (cell_hessian(&y, cell)[(0, 0, 0)] - exact([xbar, 0.0])).abs();
                if c[0] == 0 || c[0] == n - 2 {
                    e_bnd = e_bnd.max(err);
                } else {
                    e_int = e_int.max(err);
                }
            }
            errs_int.push(e_int);
            errs_bnd.push(e_bnd);
        }
        assert!(errs_int[1] <= errs_int[0] / 3.0, "interior not O(h^2): {errs_int:?}");
        assert!(errs_bnd[1] <= errs_bnd[0] / 1.8, "boundary not O(h): {errs_bnd:?}");
    }

    #[test]
    fn energy_of_identity_is_zero() {
        let grid = grid9();
        let adm = admissible_identity(grid);
        let load = F::zeros(grid);
        let y = F::identity(grid);
        assert!(energy(&adm, &load, &y).unwrap().abs() < 1e-14);
    }

    #[test]
    fn energy_of_uniform_stretch_closed_form() {
        let grid = grid9();
        let adm = admissible_identity(grid);
        let load = F::zeros(grid);
        let y = F::from_fn(grid, |x| [1.1 * x[0], 1.1 * x[1]]);
        let c_minus_id = 1.1f64 * 1.1 - 1.0;
        let det = 1.1f64 * 1.1;
        let h4 = det.powf(-4.0) + 4.0 * det - 5.0;
        let expected = 2.0 * c_minus_id * c_minus_id + h4;
        let e = energy(&adm, &load, &y).unwrap();
        assert!((e - expected).abs() < 1e-12, "{e} vs {expected}");
    }

    #[test]
    fn energy_infinite_on_inverted_cell() {
        let grid = grid9();
        let adm = admissible_identity(grid);
        let load = F::zeros(grid);
        let mut y = F::identity(grid);
        // collapse one interior node hard enough to invert a cell
        let node = grid.node_flat([4, 4]);
        y.node_mut(node)[0] -= 0.9;
        y.node_mut(node)[1] -= 0.9;
        assert!(energy(&adm, &load, &y).unwrap().is_infinite());
        assert!(matches!(energy_gradient(&adm, &load, &y), Err(FieldError::Infeasible)));
    }

    #[test]
    fn load_term_exact_for_trapezoid() {
        // f constant, y = identity: integral f . x = f . (1/2, 1/2)
        let grid = grid9();
        let mut adm = admissible_identity(grid);
        adm.params.alpha_w = 0.0;
        adm.params.beta_w = 0.0;
        adm.params.kappa_p = 1e-30;
        let load = F::from_fn(grid, |_| [2.0, -3.0]);
        let y = F::identity(grid);
        let e = energy(&adm, &load, &y).unwrap();
        assert!((e - (-(2.0 * 0.5) - (-3.0 * 0.5))).abs() < 1e-12);
    }

    #[test]
    fn energy_gradient_matches_directional_differences() {
        let grid = grid9();
        let adm = admissible_identity(grid);
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let load = F::from_fn(grid, |x| [0.3 * x[1], -0.2 * x[0]]);
        for _ in 0..5 {
            let y = random_admissible(grid, &mut rng, 0.02);
            let grad = energy_gradient(&adm, &load, &y).unwrap();
            for i in 0..grid.num_nodes() {
                if grid.is_boundary(i) {
                    assert_eq!(grad.node(i), [0.0, 0.0]);
                }
            }
            let mut v = F::zeros(grid);
            for i in 0..grid.num_nodes() {
                if !grid.is_boundary(i) {
                    for k in 0..2 {
                        v.node_mut(i)[k] = rng.gen_range(-1.0..1.0);
                    }
                }
            }
            let eps = 1e-6;
            let mut yp = y.clone();
            yp.axpy(eps, &v);
            let mut ym = y.clone();
            ym.axpy(-eps, &v);
            let fd = (energy(&adm, &load, &yp).unwrap() - energy(&adm, &load, &ym).unwrap())
                / (2.0 * eps);
            let exact = field_dot(&grad, &v);
            let rel = (fd - exact).abs() / exact.abs().max(1.0);
            assert!(rel <= 1e-6, "rel {rel}");
        }
    }

    #[test]
    fn metric_axioms_and_rotation_degeneracy() {
        let grid = grid9();
        let params = MaterialParams::reference(2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let y1 = random_admissible(grid, &mut rng, 0.05);
        let y2 = random_admissible(grid, &mut rng, 0.05);
        let y3 = random_admissible(grid, &mut rng, 0.05);
        assert_eq!(metric(&params, &y1, &y1).unwrap(), 0.0);
        let d12 = metric(&params, &y1, &y2).unwrap();
        let d13 = metric(&params, &y1, &y3).unwrap();
        let d23 = metric(&params, &y2, &y3).unwrap();
        assert!(d13 <= d12 + d23 + 1e-12);
        // left rotation of the deformed state is invisible to the metric
        let q = crate::tensor::rotation_2d(0.9);
        assert!(metric(&params, &y1, &y1.rotate_left(&q)).unwrap() < 1e-13);
    }

    #[test]
    fn metric_gradient_matches_finite_differences() {
        let grid = grid9();
        for pt in [1.5, 2.0, 3.0] {
            let mut params = MaterialParams::reference(2);
            params.p_tilde = pt;
            params.a = Mat::from_rows_2([[1.0, 0.2], [-0.1, 0.9]]);
            let mut rng = ChaCha8Rng::seed_from_u64(13);
            let y1 = random_admissible(grid, &mut rng, 0.04);
            let y2 = random_admissible(grid, &mut rng, 0.04);
            let grad = metric_gradient_second_arg(&params, &y1, &y2).unwrap();
            let mut v = F::zeros(grid);
            for i in 0..grid.num_nodes() {
                if !grid.is_boundary(i) {
                    for k in 0..2 {
                        v.node_mut(i)[k] = rng.gen_range(-1.0..1.0);
                    }
                }
            }
            let eps = 1e-6;
            let mut yp = y2.clone();
            yp.axpy(eps, &v);
            let mut ym = y2.clone();
            ym.axpy(-eps, &v);
            let fd = (metric_pow(&params, &y1, &yp).unwrap()
                - metric_pow(&params, &y1, &ym).unwrap())
                / (2.0 * eps);
            let exact = field_dot(&grad, &v);
            let rel = (fd - exact).abs() / exact.abs().max(1e-6);
            assert!(rel <= 1e-5, "pt={pt} rel {rel}");
            // vanishes at the diagonal
            let at_self = metric_gradient_second_arg(&params, &y2, &y2).unwrap();
            assert!(at_self.max_abs() < 1e-14);
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let grid = grid9();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = random_admissible(grid, &mut rng, 0.1);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &y, 2.0).unwrap();
        let (back, pt): (F, f64) = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(pt, 2.0);
        assert_eq!(back, y);
        assert!(read_checkpoint::<f64>(&mut &b"nope"[..]).is_err());
    }
}
