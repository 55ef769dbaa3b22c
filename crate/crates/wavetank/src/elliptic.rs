//! Variational Laplace solver on the straightened strip and the
//! Dirichlet-Neumann operator built on top of it.
//!
//! The transformed Dirichlet energy
//!
//! ```text
//! E(u, v) = ∬ [ (1+Rx²)/J  dz_u dz_v
//!             - Rx (dx_u dz_v + dz_u dx_v)
//!             + J dx_u dx_v ] dx dz,      J = dz_rho,  Rx = dx_rho,
//! ```
//!
//! is discretized at z-midpoints: z-derivatives as two-point differences,
//! x-derivatives spectrally at the levels and averaged to the midpoints,
//! coefficients evaluated at the midpoints from their closed forms. The
//! pointwise coefficient matrix has determinant one, so the discrete form
//! is symmetric positive semi-definite with only constants in its kernel;
//! the Dirichlet row at the surface removes those.
//!
//! The operator is applied matrix-free and solved by preconditioned
//! conjugate gradients. The preconditioner is the flat-surface operator,
//! inverted exactly per Fourier mode by tridiagonal factorization; the
//! homogeneous Neumann condition at the bottom is natural to the
//! variational form, so no explicit bottom flux term appears anywhere.

use ndarray::Array2;
use rustfft::num_complex::Complex;

use crate::geometry::{z_level, BulkField, DomainMap};
use crate::spectral::{Grid, RealField};
use crate::WaveError;

/// Iterative-solver settings.
#[derive(Clone, Copy, Debug)]
pub struct SolverConfig {
    /// Relative (preconditioned) residual tolerance.
    pub cg_tol: f64,
    /// Iteration cap; `None` resolves to `10 * n_x * n_z`.
    pub max_iter: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            cg_tol: 1e-10,
            max_iter: None,
        }
    }
}

impl SolverConfig {
    pub fn resolved_max_iter(&self, n_x: usize, n_z: usize) -> usize {
        self.max_iter.unwrap_or(10 * n_x * n_z)
    }
}

/// Outcome of one elliptic solve.
#[derive(Clone, Debug)]
pub struct SolveResult {
    /// The solved field, Dirichlet trace pinned at the surface row.
    pub field: BulkField,
    /// Homogeneous part (zero surface trace); reusable as a warm start.
    pub homogeneous: Array2<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// The discrete transformed Dirichlet energy of a [`DomainMap`].
pub struct EnergyOp<'a> {
    map: &'a DomainMap,
}

impl<'a> EnergyOp<'a> {
    pub fn new(map: &'a DomainMap) -> Self {
        EnergyOp { map }
    }

    /// Apply the full-grid energy operator `A` (no Dirichlet handling):
    /// `⟨A u, v⟩ = E(u, v)` in the plain Euclidean pairing.
    pub fn apply(&self, u: &Array2<f64>) -> Array2<f64> {
        let mut scratch = ApplyScratch::new(self.map.grid(), self.map.n_z());
        let mut out = Array2::zeros(u.dim());
        self.apply_with(u, &mut out, &mut scratch);
        out
    }

    /// Allocation-free apply into a caller-provided output and scratch.
    pub fn apply_with(&self, u: &Array2<f64>, out: &mut Array2<f64>, s: &mut ApplyScratch) {
        let map = self.map;
        let n_z = map.n_z();
        let n_x = map.grid().n_x();
        let inv_dz = 1.0 / map.dz();
        debug_assert_eq!(u.dim(), (n_z, n_x));
        debug_assert_eq!(out.dim(), (n_z, n_x));

        s.x_deriv.assign(u);
        self.dx_rows_in_place_with(&mut s.x_deriv, &mut s.work);
        let us = u.as_slice().expect("standard layout");
        let xs = s.x_deriv.as_slice().expect("standard layout");
        let aws = map.aw.as_slice().expect("standard layout");
        let bws = map.bw.as_slice().expect("standard layout");
        let gws = map.gw.as_slice().expect("standard layout");

        // Midpoint fluxes: f1 pairs with the z-difference of the test
        // function, f2 with its averaged x-derivative.
        let f1 = &mut s.f1;
        let f2 = &mut s.f2;
        for m in 0..n_z - 1 {
            let base = m * n_x;
            let u0 = &us[base..base + n_x];
            let u1 = &us[base + n_x..base + 2 * n_x];
            let x0 = &xs[base..base + n_x];
            let x1 = &xs[base + n_x..base + 2 * n_x];
            let a = &aws[base..base + n_x];
            let b = &bws[base..base + n_x];
            let g = &gws[base..base + n_x];
            let fa = &mut f1[base..base + n_x];
            let fb = &mut f2[base..base + n_x];
            for j in 0..n_x {
                let p = (u1[j] - u0[j]) * inv_dz;
                let q = 0.5 * (x0[j] + x1[j]);
                fa[j] = a[j] * p - b[j] * q;
                fb[j] = -b[j] * p + g[j] * q;
            }
        }

        // Adjoint difference and adjoint average back to the levels.
        {
            let os = out.as_slice_mut().expect("standard layout");
            let avs = s.avg.as_slice_mut().expect("standard layout");
            for m in 0..n_z {
                let base = m * n_x;
                let orow = &mut os[base..base + n_x];
                let arow = &mut avs[base..base + n_x];
                if m == 0 {
                    let hi1 = &f1[0..n_x];
                    let hi2 = &f2[0..n_x];
                    for j in 0..n_x {
                        orow[j] = -hi1[j] * inv_dz;
                        arow[j] = 0.5 * hi2[j];
                    }
                } else if m == n_z - 1 {
                    let lo1 = &f1[(m - 1) * n_x..m * n_x];
                    let lo2 = &f2[(m - 1) * n_x..m * n_x];
                    for j in 0..n_x {
                        orow[j] = lo1[j] * inv_dz;
                        arow[j] = 0.5 * lo2[j];
                    }
                } else {
                    let lo1 = &f1[(m - 1) * n_x..m * n_x];
                    let hi1 = &f1[m * n_x..(m + 1) * n_x];
                    let lo2 = &f2[(m - 1) * n_x..m * n_x];
                    let hi2 = &f2[m * n_x..(m + 1) * n_x];
                    for j in 0..n_x {
                        orow[j] = (lo1[j] - hi1[j]) * inv_dz;
                        arow[j] = 0.5 * (lo2[j] + hi2[j]);
                    }
                }
            }
        }
        self.dx_rows_in_place_with(&mut s.avg, &mut s.work);
        {
            let os = out.as_slice_mut().expect("standard layout");
            let ds = s.avg.as_slice().expect("standard layout");
            for (o, d) in os.iter_mut().zip(ds.iter()) {
                *o -= d;
            }
        }
    }

    /// Apply `A` restricted to the unknown space (surface row pinned to zero).
    pub fn apply_dirichlet(&self, u: &Array2<f64>) -> Array2<f64> {
        let mut scratch = ApplyScratch::new(self.map.grid(), self.map.n_z());
        let mut out = Array2::zeros(u.dim());
        self.apply_dirichlet_with(u, &mut out, &mut scratch);
        out
    }

    /// Allocation-free Dirichlet-restricted apply.
    pub fn apply_dirichlet_with(&self, u: &Array2<f64>, out: &mut Array2<f64>, s: &mut ApplyScratch) {
        let n_z = self.map.n_z();
        debug_assert!(u.row(n_z - 1).iter().all(|&v| v == 0.0));
        self.apply_with(u, out, s);
        out.row_mut(n_z - 1).fill(0.0);
    }

    /// Evaluate the bilinear form `E(u, v)` directly from the midpoint sums.
    pub fn energy(&self, u: &Array2<f64>, v: &Array2<f64>) -> f64 {
        let map = self.map;
        let n_z = map.n_z();
        let n_x = map.grid().n_x();
        let inv_dz = 1.0 / map.dz();
        let xu = self.dx_rows(u);
        let xv = self.dx_rows(v);
        let us = u.as_slice().expect("standard layout");
        let vs = v.as_slice().expect("standard layout");
        let xus = xu.as_slice().expect("standard layout");
        let xvs = xv.as_slice().expect("standard layout");
        let aws = map.aw.as_slice().expect("standard layout");
        let bws = map.bw.as_slice().expect("standard layout");
        let gws = map.gw.as_slice().expect("standard layout");
        let mut total = 0.0;
        for m in 0..n_z - 1 {
            let base = m * n_x;
            for j in 0..n_x {
                let pu = (us[base + n_x + j] - us[base + j]) * inv_dz;
                let qu = 0.5 * (xus[base + n_x + j] + xus[base + j]);
                let pv = (vs[base + n_x + j] - vs[base + j]) * inv_dz;
                let qv = 0.5 * (xvs[base + n_x + j] + xvs[base + j]);
                total += aws[base + j] * pu * pv - bws[base + j] * (pu * qv + qu * pv)
                    + gws[base + j] * qu * qv;
            }
        }
        total
    }

    fn dx_rows(&self, u: &Array2<f64>) -> Array2<f64> {
        let mut out = u.clone();
        self.dx_rows_in_place(&mut out);
        out
    }

    fn dx_rows_in_place(&self, out: &mut Array2<f64>) {
        let mut work = self.map.grid().make_work();
        self.dx_rows_in_place_with(out, &mut work);
    }

    fn dx_rows_in_place_with(&self, out: &mut Array2<f64>, work: &mut crate::spectral::FftWork) {
        for mut row in out.rows_mut() {
            let slice = row.as_slice_mut().expect("contiguous row");
            self.map.grid().derivative_row(slice, 1, work);
        }
    }
}

/// Reusable buffers for [`EnergyOp::apply_with`].
pub struct ApplyScratch {
    x_deriv: Array2<f64>,
    avg: Array2<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    work: crate::spectral::FftWork,
}

impl ApplyScratch {
    pub fn new(grid: &Grid, n_z: usize) -> Self {
        let n_x = grid.n_x();
        ApplyScratch {
            x_deriv: Array2::zeros((n_z, n_x)),
            avg: Array2::zeros((n_z, n_x)),
            f1: vec![0.0; (n_z - 1) * n_x],
            f2: vec![0.0; (n_z - 1) * n_x],
            work: grid.make_work(),
        }
    }
}

/// Flat-surface operator inverted exactly per Fourier mode.
///
/// Depends only on the grid, the z-resolution and the depth, so one
/// factorization serves a whole simulation.
pub struct FlatPreconditioner {
    grid: Grid,
    n_z: usize,
    // LDL^T factors per Fourier bin over the unknown z-levels.
    diag: Vec<Vec<f64>>,
    sub: Vec<Vec<f64>>,
}

impl FlatPreconditioner {
    pub fn build(grid: &Grid, n_z: usize, h_b: f64) -> Self {
        let n_x = grid.n_x();
        let n_u = n_z - 1;
        let dz = 1.0 / (n_z - 1) as f64;
        let w = grid.dx() * dz;
        let nyquist = n_x / 2;
        let mut diag = Vec::with_capacity(n_x);
        let mut sub = Vec::with_capacity(n_x);
        for (bin, &k) in grid.wavenumbers().iter().enumerate() {
            // The operator's x-derivative zeroes the Nyquist bin, so its
            // flat-map block is the k = 0 one.
            let k_used = if bin == nyquist { 0.0 } else { k };
            let s = w / (h_b * dz * dz);
            let q = w * h_b * k_used * k_used / 4.0;
            let mut a = vec![0.0; n_u];
            let mut e = vec![0.0; n_u.saturating_sub(1)];
            for m in 0..n_z - 1 {
                if m < n_u {
                    a[m] += s + q;
                }
                if m + 1 < n_u {
                    a[m + 1] += s + q;
                    e[m] += q - s;
                }
            }
            // LDL^T factorization of the symmetric tridiagonal block.
            let mut d = vec![0.0; n_u];
            let mut l = vec![0.0; n_u.saturating_sub(1)];
            d[0] = a[0];
            for i in 0..n_u - 1 {
                l[i] = e[i] / d[i];
                d[i + 1] = a[i + 1] - l[i] * e[i];
            }
            diag.push(d);
            sub.push(l);
        }
        FlatPreconditioner {
            grid: grid.clone(),
            n_z,
            diag,
            sub,
        }
    }

    /// Apply the inverse of the flat operator to a residual (surface row zero).
    pub fn solve(&self, r: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_z, self.grid.n_x()));
        let mut scratch = PrecondScratch::new(&self.grid, self.n_z);
        self.solve_with(r, &mut out, &mut scratch);
        out
    }

    /// Allocation-free preconditioner application.
    pub fn solve_with(&self, r: &Array2<f64>, out: &mut Array2<f64>, s: &mut PrecondScratch) {
        let n_x = self.grid.n_x();
        let n_z = self.n_z;
        let n_u = n_z - 1;
        // Transform level rows, transpose to bin-major columns so the
        // tridiagonal sweeps run on contiguous memory.
        let cols = &mut s.cols;
        let work = &mut s.work;
        for m in 0..n_u {
            let row = r.row(m);
            self.grid.forward_into_with(
                row.as_slice().expect("contiguous"),
                &mut work.spec,
                &mut work.scratch,
            );
            for (j, &c) in work.spec.iter().enumerate() {
                cols[j * n_u + m] = c;
            }
        }
        for bin in 0..n_x {
            let d = &self.diag[bin];
            let l = &self.sub[bin];
            let col = &mut cols[bin * n_u..(bin + 1) * n_u];
            for m in 1..n_u {
                let prev = col[m - 1];
                col[m] -= prev * l[m - 1];
            }
            for (c, &dm) in col.iter_mut().zip(d.iter()) {
                *c /= dm;
            }
            for m in (0..n_u - 1).rev() {
                let next = col[m + 1];
                col[m] -= next * l[m];
            }
        }
        for m in 0..n_u {
            work.spec.clear();
            work.spec.extend((0..n_x).map(|j| cols[j * n_u + m]));
            let mut spec = std::mem::take(&mut work.spec);
            let mut row = out.row_mut(m);
            self.grid.inverse_real_into_with(
                &mut spec,
                row.as_slice_mut().expect("contiguous"),
                &mut work.scratch,
            );
            work.spec = spec;
        }
        out.row_mut(n_z - 1).fill(0.0);
    }
}

/// Reusable buffers for [`FlatPreconditioner::solve_with`].
pub struct PrecondScratch {
    cols: Vec<Complex<f64>>,
    work: crate::spectral::FftWork,
}

impl PrecondScratch {
    pub fn new(grid: &Grid, n_z: usize) -> Self {
        PrecondScratch {
            cols: vec![Complex::new(0.0, 0.0); (n_z - 1) * grid.n_x()],
            work: grid.make_work(),
        }
    }
}

fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let xs = a.as_slice().expect("standard layout");
    let ys = b.as_slice().expect("standard layout");
    xs.iter().zip(ys.iter()).map(|(x, y)| x * y).sum()
}

/// Preconditioned conjugate gradients on the unknown space.
fn pcg(
    op: &EnergyOp,
    pre: &FlatPreconditioner,
    b: &Array2<f64>,
    x0: Option<&Array2<f64>>,
    tol: f64,
    max_iter: usize,
    es: &mut EllipticScratch,
) -> Result<(Array2<f64>, usize, f64), WaveError> {
    let apply_scratch = &mut es.apply;
    let pre_scratch = &mut es.pre;
    let mut z = Array2::zeros(b.dim());
    pre.solve_with(b, &mut z, pre_scratch);
    let b_norm2 = dot(b, &z);
    if b_norm2 <= 0.0 {
        return Ok((Array2::zeros(b.dim()), 0, 0.0));
    }
    let mut x = match x0 {
        Some(x0) if x0.dim() == b.dim() => x0.clone(),
        _ => Array2::zeros(b.dim()),
    };
    let last = x.nrows() - 1;
    x.row_mut(last).fill(0.0);
    let mut ap = Array2::zeros(b.dim());
    op.apply_dirichlet_with(&x, &mut ap, apply_scratch);
    let mut r = b - &ap;
    pre.solve_with(&r, &mut z, pre_scratch);
    let mut rz = dot(&r, &z);
    let mut rel = (rz.max(0.0) / b_norm2).sqrt();
    if rel <= tol {
        return Ok((x, 0, rel));
    }
    let mut p = z.clone();
    for iter in 1..=max_iter {
        op.apply_dirichlet_with(&p, &mut ap, apply_scratch);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(WaveError::NoConvergence {
                iterations: iter,
                residual: rel,
            });
        }
        let alpha = rz / pap;
        axpy(&mut x, alpha, &p);
        axpy(&mut r, -alpha, &ap);
        pre.solve_with(&r, &mut z, pre_scratch);
        let rz_new = dot(&r, &z);
        rel = (rz_new.max(0.0) / b_norm2).sqrt();
        if rel <= tol {
            return Ok((x, iter, rel));
        }
        let beta = rz_new / rz;
        rz = rz_new;
        xpby(&mut p, &z, beta);
    }
    Err(WaveError::NoConvergence {
        iterations: max_iter,
        residual: rel,
    })
}

/// `y += a x` over the flat buffers.
fn axpy(y: &mut Array2<f64>, a: f64, x: &Array2<f64>) {
    let ys = y.as_slice_mut().expect("standard layout");
    let xs = x.as_slice().expect("standard layout");
    for (yi, &xi) in ys.iter_mut().zip(xs.iter()) {
        *yi += a * xi;
    }
}

/// `p = z + b p` over the flat buffers.
fn xpby(p: &mut Array2<f64>, z: &Array2<f64>, b: f64) {
    let ps = p.as_slice_mut().expect("standard layout");
    let zs = z.as_slice().expect("standard layout");
    for (pi, &zi) in ps.iter_mut().zip(zs.iter()) {
        *pi = zi + b * *pi;
    }
}

/// Smooth cutoff: 0 below z = -1, 1 above z = -1/2 (quintic smoothstep).
pub fn chi(z: f64) -> f64 {
    let t = ((z + 1.0) / 0.5).clamp(0.0, 1.0);
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

/// Lift a surface trace into the strip: `chi(z) e^{z <D>} psi`.
///
/// The surface row equals `psi` exactly and the bottom row vanishes
/// identically, so the lift is admissible boundary data for the
/// variational solve.
pub fn lift_trace(psi: &RealField, map: &DomainMap) -> BulkField {
    let grid = map.grid();
    let n_z = map.n_z();
    let n_x = grid.n_x();
    let mut psi_hat = Vec::new();
    grid.forward_into(psi.as_slice(), &mut psi_hat);
    let mut out = BulkField::zeros(grid, n_z);
    let mut buf: Vec<Complex<f64>> = Vec::with_capacity(n_x);
    let mut row = vec![0.0; n_x];
    for m in 0..n_z - 1 {
        let z = z_level(n_z, m);
        let c = chi(z);
        if c == 0.0 {
            continue;
        }
        buf.clear();
        buf.extend(
            psi_hat
                .iter()
                .zip(grid.wavenumbers().iter())
                .map(|(&p, &k)| p * (z * (1.0 + k * k).sqrt()).exp()),
        );
        grid.inverse_real_into(&mut buf, &mut row);
        for j in 0..n_x {
            out.values_mut()[[m, j]] = c * row[j];
        }
    }
    for j in 0..n_x {
        out.values_mut()[[n_z - 1, j]] = psi.values()[j];
    }
    out
}

/// Solve the Dirichlet problem `ΔΦ = 0, Φ|surface = boundary` with a
/// natural Neumann bottom, on the straightened strip.
pub fn solve_dirichlet(
    boundary: &RealField,
    map: &DomainMap,
    pre: &FlatPreconditioner,
    cfg: &SolverConfig,
    warm: Option<&Array2<f64>>,
) -> Result<SolveResult, WaveError> {
    let lift = lift_trace(boundary, map);
    let op = EnergyOp::new(map);
    let mut b = op.apply(lift.values());
    b.mapv_inplace(|v| -v);
    b.row_mut(map.n_z() - 1).fill(0.0);
    let max_iter = cfg.resolved_max_iter(map.grid().n_x(), map.n_z());
    let (u, iterations, residual) = pcg(&op, pre, &b, warm, cfg.cg_tol, max_iter)?;
    let mut field = lift;
    field.values_mut().zip_mut_with(&u, |f, &ui| *f += ui);
    Ok(SolveResult {
        field,
        homogeneous: u,
        iterations,
        residual,
    })
}

/// Vertical and horizontal physical derivatives of a solved field,
/// evaluated at the free surface by one-sided second-order stencils.
pub fn surface_gradients(phi: &BulkField, map: &DomainMap) -> (RealField, RealField) {
    let dzs = map.surface_dz(phi);
    let jz = map.surface_d_z_rho();
    let b = dzs.zip(&jz, |d, j| d / j);
    let surf = phi.surface_row();
    let dx_surf = surf.derivative(1).expect("finite trace");
    let rx = map.grad_x_rho.surface_row();
    let v = RealField::from_values(
        map.grid(),
        (0..map.grid().n_x())
            .map(|j| dx_surf.values()[j] - rx.values()[j] / jz.values()[j] * dzs.values()[j])
            .collect(),
    )
    .expect("length");
    (b, v)
}

/// Dirichlet-Neumann trace of an already-solved potential.
///
/// The trace is recovered as the variational surface flux: testing the
/// energy form against the surface nodal values gives
/// `⟨φ, G ψ⟩ = E(Φ, any lift of φ)`, i.e. `G ψ = (A Φ)|surface / dx`.
/// Self-adjointness and nonnegativity of `G` are then inherited from the
/// symmetric energy form up to the solve residual, and the flux is a
/// second-order-accurate reading of `(d_y Φ - d_x eta · d_x Φ)` at the
/// surface. The x-mean is projected out: total flux through the closed
/// surface-plus-bottom boundary vanishes in the continuum, and the
/// projection enforces the discrete counterpart on the mean mode.
pub fn dno_from_solution(phi: &BulkField, map: &DomainMap) -> RealField {
    let op = EnergyOp::new(map);
    let flux = op.apply(phi.values());
    let inv_dx = 1.0 / map.grid().dx();
    let raw = RealField::from_values(
        map.grid(),
        flux.row(map.n_z() - 1).iter().map(|&f| f * inv_dx).collect(),
    )
    .expect("length");
    raw.remove_mean()
}

/// Apply the Dirichlet-Neumann operator `G(eta)` to `psi`.
///
/// `map` must have been built from this `eta`.
pub fn dno_apply(
    eta: &RealField,
    psi: &RealField,
    map: &DomainMap,
    pre: &FlatPreconditioner,
    cfg: &SolverConfig,
    warm: Option<&Array2<f64>>,
) -> Result<(RealField, SolveResult), WaveError> {
    assert!(
        eta.values()
            .iter()
            .zip(map.eta().values().iter())
            .all(|(a, b)| a == b),
        "map was not built from this surface"
    );
    let solve = solve_dirichlet(psi, map, pre, cfg, warm)?;
    let g = dno_from_solution(&solve.field, map);
    Ok((g, solve))
}

/// Depth model for the flat-surface oracle symbol.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Depth {
    Finite,
    Infinite,
}

/// Flat-surface Dirichlet-Neumann symbol: `|k| tanh(h_b |k|)` at finite
/// depth, `|k|` at infinite depth, zero on the mean mode.
///
/// Independent of the elliptic solver; serves as its oracle.
pub fn dno_flat_symbol(psi: &RealField, h_b: f64, depth: Depth) -> RealField {
    let m = move |k: f64| match depth {
        Depth::Finite => k.abs() * (h_b * k.abs()).tanh(),
        Depth::Infinite => k.abs(),
    };
    psi.apply_multiplier(m).expect("finite field")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::MapParams;
    use crate::spectral::smooth_random_field;

    fn flat_setup(n_x: usize, n_z: usize, h_b: f64) -> (Grid, DomainMap, FlatPreconditioner) {
        let grid = Grid::with_default_length(n_x).unwrap();
        let eta = RealField::zeros(&grid);
        let params = MapParams::new(h_b, 0.05, n_z);
        let map = DomainMap::build(&eta, &params).unwrap();
        let pre = FlatPreconditioner::build(&grid, n_z, h_b);
        (grid, map, pre)
    }

    fn wave_setup(n_x: usize, n_z: usize) -> (Grid, DomainMap, FlatPreconditioner) {
        let grid = Grid::with_default_length(n_x).unwrap();
        let eta = RealField::from_fn(&grid, |x| 0.1 * x.cos());
        let params = MapParams::new(1.0, MapParams::default_delta(&eta), n_z);
        let map = DomainMap::build(&eta, &params).unwrap();
        let pre = FlatPreconditioner::build(&grid, n_z, 1.0);
        (grid, map, pre)
    }

    #[test]
    fn lift_of_zero_is_zero() {
        let (grid, map, _) = flat_setup(64, 17, 1.0);
        let psi = RealField::zeros(&grid);
        let lift = lift_trace(&psi, &map);
        assert!(lift.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lift_surface_row_is_exact() {
        let (grid, map, _) = wave_setup(64, 17);
        let psi = RealField::from_fn(&grid, |x| (2.0 * x).cos() + 0.3 * (5.0 * x).sin());
        let lift = lift_trace(&psi, &map);
        let n_z = map.n_z();
        for j in 0..grid.n_x() {
            assert_eq!(lift.values()[[n_z - 1, j]], psi.values()[j]);
            assert_eq!(lift.values()[[0, j]], 0.0);
        }
    }

    #[test]
    fn lift_interior_row_matches_multiplier_oracle() {
        // At z = -1/4 the cutoff is already 1, so the row is e^{-<k>/4} cos(kx).
        let n_z = 33; // z = -1/4 is level 24
        let (grid, map, _) = flat_setup(64, n_z, 1.0);
        let k = 3.0;
        let psi = RealField::from_fn(&grid, |x| (k * x).cos());
        let lift = lift_trace(&psi, &map);
        let m = 24;
        let z = z_level(n_z, m);
        assert!((z + 0.25).abs() < 1e-14);
        let factor = chi(z) * (z * (1.0 + k * k).sqrt()).exp();
        for j in 0..grid.n_x() {
            let expect = factor * (k * grid.x(j)).cos();
            assert!(
                (lift.values()[[m, j]] - expect).abs() <= 1e-12,
                "lift row mismatch"
            );
        }
    }

    #[test]
    fn energy_of_constant_vanishes() {
        let (_, map, _) = wave_setup(64, 33);
        let op = EnergyOp::new(&map);
        let u = Array2::from_elem((33, 64), 4.2);
        let e = op.energy(&u, &u);
        assert!(e.abs() <= 1e-18, "energy of constant: {e}");
        let au = op.apply(&u);
        let sup = au.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        assert!(sup <= 1e-12, "A(constant) sup: {sup}");
    }

    #[test]
    fn energy_matches_analytic_dirichlet_integral() {
        // Flat map, u = cos(kx) cosh(k h_b (z+1)): the physical Dirichlet
        // energy over one period is (k L / 4) sinh(2 k h_b).
        let k = 2.0;
        let h_b = 1.0;
        let exact = k * 2.0 * std::f64::consts::PI / 4.0 * (2.0 * k * h_b).sinh();
        let err_at = |n_z: usize| {
            let (grid, map, _) = flat_setup(64, n_z, h_b);
            let op = EnergyOp::new(&map);
            let u = BulkField::from_fn(&grid, n_z, |x, z| {
                (k * x).cos() * (k * h_b * (z + 1.0)).cosh()
            });
            (op.energy(u.values(), u.values()) - exact).abs() / exact
        };
        let coarse = err_at(17);
        let fine = err_at(33);
        assert!(fine <= 2e-3, "relative energy error {fine}");
        let order = (coarse / fine).log2();
        assert!((1.7..=2.3).contains(&order), "energy order {order}");
    }

    #[test]
    fn energy_operator_is_symmetric() {
        let (_, map, _) = wave_setup(64, 33);
        let op = EnergyOp::new(&map);
        for seed in 0..10 {
            let u = random_bulk(33, 64, seed);
            let v = random_bulk(33, 64, seed + 100);
            let au = op.apply(&u);
            let av = op.apply(&v);
            let uu = dot(&au, &v);
            let vv = dot(&u, &av);
            let scale = norm(&u) * norm(&v);
            assert!(
                (uu - vv).abs() <= 1e-12 * scale.max(1.0),
                "symmetry defect {}",
                (uu - vv).abs()
            );
        }
    }

    fn random_bulk(n_z: usize, n_x: usize, seed: u64) -> Array2<f64> {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut a = Array2::zeros((n_z, n_x));
        for v in a.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        a
    }

    fn norm(a: &Array2<f64>) -> f64 {
        dot(a, a).sqrt()
    }

    #[test]
    fn solve_constant_boundary_gives_constant_field() {
        let (grid, map, pre) = wave_setup(64, 33);
        let c = 2.5;
        let boundary = RealField::from_fn(&grid, |_| c);
        let cfg = SolverConfig::default();
        let res = solve_dirichlet(&boundary, &map, &pre, &cfg, None).unwrap();
        for v in res.field.values().iter() {
            assert!((v - c).abs() <= 1e-7, "constant solve: {v}");
        }
    }

    #[test]
    fn solve_zero_boundary_gives_zero_field() {
        let (grid, map, pre) = wave_setup(64, 33);
        let boundary = RealField::zeros(&grid);
        let cfg = SolverConfig::default();
        let res = solve_dirichlet(&boundary, &map, &pre, &cfg, None).unwrap();
        assert_eq!(res.iterations, 0);
        assert!(res.field.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn solve_flat_matches_separation_of_variables() {
        let k = 3.0;
        let h_b = 1.0;
        let cfg = SolverConfig::default();
        let err_at = |n_z: usize| {
            let (grid, map, pre) = flat_setup(64, n_z, h_b);
            let boundary = RealField::from_fn(&grid, |x| (k * x).cos());
            let res = solve_dirichlet(&boundary, &map, &pre, &cfg, None).unwrap();
            let exact = BulkField::from_fn(&grid, n_z, |x, z| {
                (k * x).cos() * (k * h_b * (z + 1.0)).cosh() / (k * h_b).cosh()
            });
            (&res.field - &exact)
                .values()
                .iter()
                .fold(0.0_f64, |a, v| a.max(v.abs()))
        };
        let coarse = err_at(33);
        let fine = err_at(65);
        assert!(fine <= 5e-4, "flat solve error {fine}");
        let order = (coarse / fine).log2();
        assert!((1.7..=2.3).contains(&order), "solve order {order}");
    }

    #[test]
    fn dno_flat_symbol_examples() {
        let grid = Grid::with_default_length(64).unwrap();
        let k = 3.0;
        let psi = RealField::from_fn(&grid, |x| (k * x).cos());
        let fin = dno_flat_symbol(&psi, 1.0, Depth::Finite);
        let expect = psi.scale(k * (1.0 * k).tanh());
        assert!((&fin - &expect).norm_sup() <= 1e-12 * expect.norm_sup());
        let inf = dno_flat_symbol(&psi, 1.0, Depth::Infinite);
        let expect_inf = psi.scale(k);
        assert!((&inf - &expect_inf).norm_sup() <= 1e-12 * expect_inf.norm_sup());
        let constant = RealField::from_fn(&grid, |_| 7.0);
        assert!(dno_flat_symbol(&constant, 1.0, Depth::Finite).norm_sup() <= 1e-12);
    }

    #[test]
    fn dno_flat_agrees_with_symbol() {
        let k = 3.0;
        let h_b = 1.0;
        let cfg = SolverConfig::default();
        let (grid, map, pre) = flat_setup(128, 65, h_b);
        let psi = RealField::from_fn(&grid, |x| (k * x).cos());
        let eta = RealField::zeros(&grid);
        let (g, _) = dno_apply(&eta, &psi, &map, &pre, &cfg, None).unwrap();
        let oracle = dno_flat_symbol(&psi, h_b, Depth::Finite);
        let rel = (&g - &oracle).norm_sup() / oracle.norm_sup();
        assert!(rel <= 5e-3, "flat DNO relative error {rel}");
    }

    #[test]
    fn dno_of_constant_vanishes() {
        let (grid, map, pre) = wave_setup(64, 33);
        let cfg = SolverConfig::default();
        let psi = RealField::from_fn(&grid, |_| 3.0);
        let eta = map.eta().clone();
        let (g, _) = dno_apply(&eta, &psi, &map, &pre, &cfg, None).unwrap();
        assert!(g.norm_sup() <= 1e-7, "G(const) = {}", g.norm_sup());
    }

    #[test]
    fn dno_is_linear() {
        let (grid, map, pre) = wave_setup(64, 33);
        let cfg = SolverConfig::default();
        let eta = map.eta().clone();
        let p1 = smooth_random_field(&grid, 5, 10);
        let p2 = smooth_random_field(&grid, 6, 10);
        let (g1, _) = dno_apply(&eta, &p1, &map, &pre, &cfg, None).unwrap();
        let (g2, _) = dno_apply(&eta, &p2, &map, &pre, &cfg, None).unwrap();
        let combo = &p1.scale(1.3) + &p2.scale(-0.7);
        let (gc, _) = dno_apply(&eta, &combo, &map, &pre, &cfg, None).unwrap();
        let expect = &g1.scale(1.3) + &g2.scale(-0.7);
        let defect = (&gc - &expect).norm_l2() / expect.norm_l2().max(1e-12);
        assert!(defect <= 10.0 * cfg.cg_tol, "linearity defect {defect}");
    }

    #[test]
    fn surface_gradients_of_constant_and_height_field() {
        let (grid, map, _) = wave_setup(64, 33);
        let c = BulkField::from_fn(&grid, 33, |_, _| 1.5);
        let (b, v) = surface_gradients(&c, &map);
        assert!(b.norm_sup() <= 1e-12);
        assert!(v.norm_sup() <= 1e-12);
        let (b, v) = surface_gradients(&map.rho.clone(), &map);
        for j in 0..grid.n_x() {
            assert!((b.values()[j] - 1.0).abs() <= 1e-6, "B on rho");
            assert!(v.values()[j].abs() <= 1e-6, "V on rho");
        }
    }

    #[test]
    fn dno_self_adjoint_and_nonnegative_on_wavy_surface() {
        let (grid, map, pre) = wave_setup(64, 33);
        let cfg = SolverConfig::default();
        let eta = map.eta().clone();
        let fields: Vec<RealField> = (0..6).map(|s| smooth_random_field(&grid, s, 8)).collect();
        let gs: Vec<RealField> = fields
            .iter()
            .map(|p| dno_apply(&eta, p, &map, &pre, &cfg, None).unwrap().0)
            .collect();
        for i in 0..5 {
            let lhs = fields[i + 1].inner(&gs[i]);
            let rhs = fields[i].inner(&gs[i + 1]);
            let scale = fields[i].norm_l2() * fields[i + 1].norm_l2();
            assert!(
                (lhs - rhs).abs() <= 10.0 * cfg.cg_tol * scale.max(1.0),
                "self-adjointness defect {}",
                (lhs - rhs).abs()
            );
            let quad = fields[i].inner(&gs[i]);
            assert!(quad >= -10.0 * cfg.cg_tol * fields[i].norm_l2().powi(2));
            let mean = gs[i].mean().abs();
            assert!(mean <= 1e-8 * fields[i].norm_l2(), "mean flux {mean}");
        }
    }
}
