//! Boundary-straightening geometry.
//!
//! The moving fluid domain `{ -h_b < y < eta(x) }` is flattened onto the
//! fixed strip `z ∈ [-1, 0]` by the smoothed map
//!
//! ```text
//! rho(x, z) = (1 + z) e^{delta z <D>} eta(x) + z h_b,      <k> = sqrt(1 + k^2)
//! ```
//!
//! so `rho(x, 0) = eta(x)` and `rho(x, -1) = -h_b` hold exactly. The map is a
//! diffeomorphism as long as `dz_rho` stays above `min(h/3, 1)`, where `h`
//! is the gap between the surface and the bottom; [`DomainMap::build`]
//! enforces this pointwise and fails with a typed error otherwise.
//!
//! Physical derivatives of a field on the straightened grid are realized by
//!
//! ```text
//! d/dy  -> (1 / dz_rho) d/dz
//! d/dx  -> d/dx - (dx_rho / dz_rho) d/dz
//! ```
//!
//! with the x-derivative spectral and the z-derivative a second-order
//! stencil (one-sided at both walls).

use ndarray::Array2;
use rustfft::num_complex::Complex;

use crate::spectral::{Grid, RealField};
use crate::WaveError;

/// Parameters of the straightening map.
#[derive(Clone, Debug)]
pub struct MapParams {
    /// Bottom depth (the bottom sits at `y = -h_b`).
    pub h_b: f64,
    /// Smoothing parameter `delta >= 0` of the lifted surface.
    pub delta: f64,
    /// Number of z collocation points on `[-1, 0]`, endpoints included.
    pub n_z: usize,
    /// Minimal admissible surface-bottom gap (strip margin).
    pub strip_margin: f64,
}

impl MapParams {
    pub fn new(h_b: f64, delta: f64, n_z: usize) -> Self {
        MapParams {
            h_b,
            delta,
            n_z,
            strip_margin: h_b / 10.0,
        }
    }

    /// Default smoothing: `min(0.05 / max(1, |eta|_W1inf), 0.5)`, fixed over a run.
    pub fn default_delta(eta: &RealField) -> f64 {
        let w = w1_inf(eta);
        (0.05 / w.max(1.0)).min(0.5)
    }
}

/// `max(sup |eta|, sup |eta_x|)`.
pub fn w1_inf(eta: &RealField) -> f64 {
    let eta_x = eta.derivative(1).expect("finite field");
    eta.norm_sup().max(eta_x.norm_sup())
}

/// Height of the strip separating the surface from the bottom,
/// `h = min_x eta(x) + h_b`. Fails if the surface touches the bottom.
pub fn strip_height(eta: &RealField, h_b: f64) -> Result<f64, WaveError> {
    let min_eta = eta.values().iter().cloned().fold(f64::INFINITY, f64::min);
    let h = min_eta + h_b;
    if h <= 0.0 || !h.is_finite() {
        return Err(WaveError::StripViolation {
            min_eta,
            h_b,
            gap: h,
            margin: 0.0,
        });
    }
    Ok(h)
}

/// z coordinate of level `m` on a grid with `n_z` levels.
pub fn z_level(n_z: usize, m: usize) -> f64 {
    -1.0 + m as f64 / (n_z - 1) as f64
}

/// A scalar field on the straightened collocation grid.
///
/// Row `m` holds the x-samples at `z_m = -1 + m dz`; row 0 is the bottom,
/// the last row the free surface.
#[derive(Clone, Debug)]
pub struct BulkField {
    grid: Grid,
    values: Array2<f64>,
}

impl BulkField {
    pub fn zeros(grid: &Grid, n_z: usize) -> Self {
        BulkField {
            grid: grid.clone(),
            values: Array2::zeros((n_z, grid.n_x())),
        }
    }

    /// Sample `f(x, z)` on the straightened grid.
    pub fn from_fn(grid: &Grid, n_z: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = Self::zeros(grid, n_z);
        for m in 0..n_z {
            let z = z_level(n_z, m);
            for j in 0..grid.n_x() {
                out.values[[m, j]] = f(grid.x(j), z);
            }
        }
        out
    }

    pub fn from_values(grid: &Grid, values: Array2<f64>) -> Self {
        assert_eq!(values.ncols(), grid.n_x());
        BulkField {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n_z(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    /// Surface row (z = 0) as a [`RealField`].
    pub fn surface_row(&self) -> RealField {
        let row = self.values.row(self.n_z() - 1).to_vec();
        RealField::from_values(&self.grid, row).expect("row length")
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> BulkField {
        BulkField {
            grid: self.grid.clone(),
            values: self.values.mapv(&f),
        }
    }

    pub fn zip(&self, other: &BulkField, f: impl Fn(f64, f64) -> f64) -> BulkField {
        assert_eq!(self.values.dim(), other.values.dim());
        let mut out = self.clone();
        out.values.zip_mut_with(&other.values, |a, &b| *a = f(*a, b));
        out
    }

    pub fn scale(&self, s: f64) -> BulkField {
        self.map(|v| v * s)
    }
}

impl std::ops::Add for &BulkField {
    type Output = BulkField;
    fn add(self, rhs: &BulkField) -> BulkField {
        self.zip(rhs, |a, b| a + b)
    }
}

impl std::ops::Sub for &BulkField {
    type Output = BulkField;
    fn sub(self, rhs: &BulkField) -> BulkField {
        self.zip(rhs, |a, b| a - b)
    }
}

impl std::ops::Mul for &BulkField {
    type Output = BulkField;
    fn mul(self, rhs: &BulkField) -> BulkField {
        self.zip(rhs, |a, b| a * b)
    }
}

/// The straightening diffeomorphism sampled on the collocation grid,
/// with its first derivatives and the quadrature-weighted coefficients
/// of the transformed Dirichlet energy.
#[derive(Clone, Debug)]
pub struct DomainMap {
    grid: Grid,
    params: MapParams,
    dz: f64,
    /// rho at the z-levels.
    pub rho: BulkField,
    /// dz_rho at the z-levels (closed form, exact in z).
    pub d_z_rho: BulkField,
    /// dx_rho at the z-levels.
    pub grad_x_rho: BulkField,
    /// Realized lower bound of dz_rho over levels and midpoints.
    pub separation: f64,
    /// Surface-bottom gap `h` of the state the map was built from.
    pub strip_height: f64,
    eta: RealField,
    eta_x: RealField,
    // Energy coefficients at the z-midpoints, quadrature weight folded in:
    // aw = w (1 + Rx^2)/J,  bw = w Rx,  gw = w J  with  w = dx dz.
    pub(crate) aw: Array2<f64>,
    pub(crate) bw: Array2<f64>,
    pub(crate) gw: Array2<f64>,
}

impl DomainMap {
    /// Build the map for the surface `eta`.
    ///
    /// Fails with [`WaveError::StripViolation`] when the surface comes closer
    /// to the bottom than the configured margin, with
    /// [`WaveError::SmoothingBound`] when `delta |eta|_W1inf > 0.1`, and with
    /// [`WaveError::SeparationViolation`] when the realized `dz_rho` drops
    /// under `min(h/3, 1)` anywhere on the grid.
    pub fn build(eta: &RealField, params: &MapParams) -> Result<Self, WaveError> {
        if !eta.is_finite() {
            return Err(WaveError::NonFinite {
                context: "surface elevation",
            });
        }
        assert!(params.h_b > 0.0, "bottom depth must be positive");
        assert!(params.n_z >= 8, "need at least 8 z-levels");
        let grid = eta.grid().clone();
        let n_x = grid.n_x();
        let n_z = params.n_z;
        let dz = 1.0 / (n_z - 1) as f64;

        let w1 = w1_inf(eta);
        if params.delta * w1 > 0.1 {
            return Err(WaveError::SmoothingBound {
                product: params.delta * w1,
                limit: 0.1,
            });
        }

        let h = strip_height(eta, params.h_b)?;
        let min_eta = eta.values().iter().cloned().fold(f64::INFINITY, f64::min);
        if h <= params.strip_margin {
            return Err(WaveError::StripViolation {
                min_eta,
                h_b: params.h_b,
                gap: h,
                margin: params.strip_margin,
            });
        }

        let eta_x = eta.derivative(1)?;

        // One forward transform of eta; every z-profile below is a
        // multiplier applied to these bins. The exponential profiles are
        // walked multiplicatively in half-steps of dz, covering levels
        // (even sub-steps) and midpoints (odd sub-steps) in one sweep.
        let mut eta_hat = Vec::new();
        grid.forward_into(eta.as_slice(), &mut eta_hat);
        let nyquist = n_x / 2;
        let brackets: Vec<f64> = grid
            .wavenumbers()
            .iter()
            .map(|&k| (1.0 + k * k).sqrt())
            .collect();
        let mut cur: Vec<f64> = brackets
            .iter()
            .map(|&b| (-params.delta * b).exp())
            .collect();
        let half_step: Vec<f64> = brackets
            .iter()
            .map(|&b| (params.delta * 0.5 * dz * b).exp())
            .collect();

        let mut rho = BulkField::zeros(&grid, n_z);
        let mut d_z_rho = BulkField::zeros(&grid, n_z);
        let mut grad_x_rho = BulkField::zeros(&grid, n_z);
        let w = grid.dx() * dz;
        let mut aw = Array2::zeros((n_z - 1, n_x));
        let mut bw = Array2::zeros((n_z - 1, n_x));
        let mut gw = Array2::zeros((n_z - 1, n_x));
        let mut separation = f64::INFINITY;

        let mut buf_s: Vec<Complex<f64>> = Vec::with_capacity(n_x);
        let mut buf_d: Vec<Complex<f64>> = Vec::with_capacity(n_x);
        let mut buf_x: Vec<Complex<f64>> = Vec::with_capacity(n_x);
        let mut smooth = vec![0.0; n_x];
        let mut dsmooth = vec![0.0; n_x];
        let mut xsmooth = vec![0.0; n_x];

        for i in 0..(2 * n_z - 1) {
            let z = -1.0 + i as f64 * 0.5 * dz;
            let one_plus_z = 1.0 + z;
            buf_s.clear();
            buf_d.clear();
            buf_x.clear();
            for j in 0..n_x {
                let c = eta_hat[j] * cur[j];
                buf_s.push(c);
                buf_d.push(c * (params.delta * brackets[j]));
                let ik = if j == nyquist {
                    Complex::new(0.0, 0.0)
                } else {
                    Complex::new(0.0, grid.wavenumbers()[j])
                };
                buf_x.push(c * ik);
            }
            grid.inverse_real_into(&mut buf_s, &mut smooth);
            grid.inverse_real_into(&mut buf_d, &mut dsmooth);
            grid.inverse_real_into(&mut buf_x, &mut xsmooth);
            if i % 2 == 0 {
                let m = i / 2;
                let base = m * n_x;
                let rr = &mut rho.values_mut().as_slice_mut().expect("layout")[base..base + n_x];
                for (j, r) in rr.iter_mut().enumerate() {
                    *r = one_plus_z * smooth[j] + z * params.h_b;
                }
                let dd =
                    &mut d_z_rho.values_mut().as_slice_mut().expect("layout")[base..base + n_x];
                for (j, d) in dd.iter_mut().enumerate() {
                    let jac = smooth[j] + one_plus_z * dsmooth[j] + params.h_b;
                    *d = jac;
                    separation = separation.min(jac);
                }
                let gg =
                    &mut grad_x_rho.values_mut().as_slice_mut().expect("layout")[base..base + n_x];
                for (j, g) in gg.iter_mut().enumerate() {
                    *g = one_plus_z * xsmooth[j];
                }
            } else {
                let m = (i - 1) / 2;
                let base = m * n_x;
                let ar = &mut aw.as_slice_mut().expect("layout")[base..base + n_x];
                let br = &mut bw.as_slice_mut().expect("layout")[base..base + n_x];
                let gr = &mut gw.as_slice_mut().expect("layout")[base..base + n_x];
                for j in 0..n_x {
                    let jac = smooth[j] + one_plus_z * dsmooth[j] + params.h_b;
                    let rx = one_plus_z * xsmooth[j];
                    separation = separation.min(jac);
                    ar[j] = w * (1.0 + rx * rx) / jac;
                    br[j] = w * rx;
                    gr[j] = w * jac;
                }
            }
            for (c, s) in cur.iter_mut().zip(half_step.iter()) {
                *c *= s;
            }
        }
        // Pin the boundary rows: rho(.,0) = eta and rho(.,-1) = -h_b exactly.
        for j in 0..n_x {
            rho.values_mut()[[n_z - 1, j]] = eta.values()[j];
            rho.values_mut()[[0, j]] = -params.h_b;
        }

        let required = (h / 3.0).min(1.0);
        if separation < required {
            return Err(WaveError::SeparationViolation {
                min_dz_rho: separation,
                required,
            });
        }

        Ok(DomainMap {
            grid,
            params: params.clone(),
            dz,
            rho,
            d_z_rho,
            grad_x_rho,
            separation,
            strip_height: h,
            eta: eta.clone(),
            eta_x,
            aw,
            bw,
            gw,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n_z(&self) -> usize {
        self.params.n_z
    }

    pub fn dz(&self) -> f64 {
        self.dz
    }

    pub fn params(&self) -> &MapParams {
        &self.params
    }

    pub fn eta(&self) -> &RealField {
        &self.eta
    }

    pub fn eta_x(&self) -> &RealField {
        &self.eta_x
    }

    /// Collocation z-derivative: centered interior, one-sided second-order
    /// three-point stencils at both walls.
    pub fn dz_stencil(&self, f: &BulkField) -> BulkField {
        self.check_dims(f);
        let n_z = f.n_z();
        let n_x = self.grid.n_x();
        let inv2dz = 1.0 / (2.0 * self.dz);
        let v = f.values().as_slice().expect("layout");
        let mut out = BulkField::zeros(&self.grid, n_z);
        let o = out.values_mut().as_slice_mut().expect("layout");
        let top = (n_z - 1) * n_x;
        for j in 0..n_x {
            o[j] = (-3.0 * v[j] + 4.0 * v[n_x + j] - v[2 * n_x + j]) * inv2dz;
            o[top + j] =
                (3.0 * v[top + j] - 4.0 * v[top - n_x + j] + v[top - 2 * n_x + j]) * inv2dz;
        }
        for m in 1..n_z - 1 {
            let lo = &v[(m - 1) * n_x..m * n_x];
            let hi = &v[(m + 1) * n_x..(m + 2) * n_x];
            let orow = &mut o[m * n_x..(m + 1) * n_x];
            for j in 0..n_x {
                orow[j] = (hi[j] - lo[j]) * inv2dz;
            }
        }
        out
    }

    /// Spectral x-derivative row by row.
    pub fn dx_rows(&self, f: &BulkField) -> BulkField {
        self.check_dims(f);
        let mut out = f.clone();
        let mut work = self.grid.make_work();
        for mut row in out.values_mut().rows_mut() {
            let slice = row.as_slice_mut().expect("contiguous row");
            self.grid.derivative_row(slice, 1, &mut work);
        }
        out
    }

    /// Transformed vertical derivative: realizes `d/dy` on the straightened grid.
    pub fn deriv_y(&self, f: &BulkField) -> BulkField {
        let mut dzf = self.dz_stencil(f);
        let o = dzf.values_mut().as_slice_mut().expect("layout");
        let jac = self.d_z_rho.values().as_slice().expect("layout");
        for (a, &b) in o.iter_mut().zip(jac.iter()) {
            *a /= b;
        }
        dzf
    }

    /// Transformed horizontal derivative: realizes `d/dx` on the straightened grid.
    pub fn deriv_x(&self, f: &BulkField) -> BulkField {
        let dzf = self.dz_stencil(f);
        let mut out = self.dx_rows(f);
        let o = out.values_mut().as_slice_mut().expect("layout");
        let dz = dzf.values().as_slice().expect("layout");
        let rx = self.grad_x_rho.values().as_slice().expect("layout");
        let jac = self.d_z_rho.values().as_slice().expect("layout");
        for j in 0..o.len() {
            o[j] -= rx[j] / jac[j] * dz[j];
        }
        out
    }

    /// Apply the transformed derivative selected by `which`:
    /// 1 = vertical (`d/dy`), 2 = horizontal (`d/dx`).
    pub fn lambda_apply(&self, f: &BulkField, which: u8) -> BulkField {
        match which {
            1 => self.deriv_y(f),
            2 => self.deriv_x(f),
            _ => panic!("which must be 1 or 2"),
        }
    }

    /// One-sided second-order z-derivative at the surface row only.
    pub fn surface_dz(&self, f: &BulkField) -> RealField {
        self.check_dims(f);
        let n_z = f.n_z();
        let inv2dz = 1.0 / (2.0 * self.dz);
        let v = f.values();
        let vals: Vec<f64> = (0..self.grid.n_x())
            .map(|j| (3.0 * v[[n_z - 1, j]] - 4.0 * v[[n_z - 2, j]] + v[[n_z - 3, j]]) * inv2dz)
            .collect();
        RealField::from_values(&self.grid, vals).expect("length")
    }

    /// dz_rho restricted to the surface row.
    pub fn surface_d_z_rho(&self) -> RealField {
        self.d_z_rho.surface_row()
    }

    fn check_dims(&self, f: &BulkField) {
        assert_eq!(f.grid(), &self.grid, "bulk field grid mismatch");
        assert_eq!(f.n_z(), self.params.n_z, "bulk field n_z mismatch");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid {
        Grid::with_default_length(128).unwrap()
    }

    #[test]
    fn flat_surface_gives_linear_map() {
        let g = grid();
        let eta = RealField::zeros(&g);
        let params = MapParams::new(1.0, 0.05, 33);
        let map = DomainMap::build(&eta, &params).unwrap();
        for m in 0..33 {
            let z = z_level(33, m);
            for j in 0..g.n_x() {
                assert!((map.rho.values()[[m, j]] - z).abs() <= 1e-13);
                assert!((map.d_z_rho.values()[[m, j]] - 1.0).abs() <= 1e-13);
                assert!(map.grad_x_rho.values()[[m, j]].abs() <= 1e-13);
            }
        }
    }

    #[test]
    fn constant_surface_shifts_map() {
        let g = grid();
        let c = 0.05;
        let eta = RealField::from_fn(&g, |_| c);
        let params = MapParams::new(1.0, 0.1, 17);
        let map = DomainMap::build(&eta, &params).unwrap();
        // Multipliers act as e^{delta z} ... on constants only through the
        // k = 0 bin where <0> = 1, so the smoothed constant is c e^{delta z}.
        for m in 0..17 {
            let z = z_level(17, m);
            let smooth_c = c * (params.delta * z).exp();
            let expect = (1.0 + z) * smooth_c + z * params.h_b;
            for j in 0..g.n_x() {
                assert!(
                    (map.rho.values()[[m, j]] - expect).abs() <= 1e-12,
                    "rho at z={z}"
                );
            }
        }
    }

    #[test]
    fn boundary_rows_are_exact() {
        let g = grid();
        let eta = RealField::from_fn(&g, |x| 0.1 * x.cos());
        let params = MapParams::new(1.0, 0.05, 64);
        let map = DomainMap::build(&eta, &params).unwrap();
        for j in 0..g.n_x() {
            assert_eq!(map.rho.values()[[63, j]], eta.values()[j]);
            assert_eq!(map.rho.values()[[0, j]], -1.0);
        }
    }

    #[test]
    fn separation_bound_holds_for_moderate_wave() {
        let g = grid();
        let eta = RealField::from_fn(&g, |x| 0.1 * x.cos());
        let params = MapParams::new(1.0, 0.05, 64);
        let map = DomainMap::build(&eta, &params).unwrap();
        let required = (map.strip_height / 3.0).min(1.0);
        assert!(map.separation >= required);
        assert!((map.strip_height - 0.9).abs() <= 1e-12);
    }

    #[test]
    fn strip_height_examples() {
        let g = grid();
        let eta = RealField::zeros(&g);
        assert!((strip_height(&eta, 1.0).unwrap() - 1.0).abs() <= 1e-15);

        let eta = RealField::from_fn(&g, |x| -0.99 + 0.005 * x.cos());
        let h = strip_height(&eta, 1.0).unwrap();
        assert!((h - 0.005).abs() <= 1e-12);

        let eta = RealField::from_fn(&g, |_| -1.0);
        assert!(matches!(
            strip_height(&eta, 1.0),
            Err(WaveError::StripViolation { .. })
        ));
    }

    #[test]
    fn build_rejects_surface_touching_bottom() {
        let g = grid();
        let eta = RealField::from_fn(&g, |x| -1.0 + 0.001 * (1.0 + x.cos()));
        let params = MapParams::new(1.0, 0.0, 16);
        assert!(matches!(
            DomainMap::build(&eta, &params),
            Err(WaveError::StripViolation { .. })
        ));
    }

    #[test]
    fn build_rejects_oversized_smoothing() {
        let g = grid();
        let eta = RealField::from_fn(&g, |x| 0.5 * x.cos());
        let params = MapParams::new(1.0, 0.5, 16);
        assert!(matches!(
            DomainMap::build(&eta, &params),
            Err(WaveError::SmoothingBound { .. })
        ));
    }

    #[test]
    fn flat_map_vertical_derivative_of_z() {
        let g = grid();
        let eta = RealField::zeros(&g);
        let h_b = 0.8;
        let params = MapParams::new(h_b, 0.05, 33);
        let map = DomainMap::build(&eta, &params).unwrap();
        let f = BulkField::from_fn(&g, 33, |_, z| z);
        let dy = map.deriv_y(&f);
        for v in dy.values().iter() {
            assert!((v - 1.0 / h_b).abs() <= 1e-12);
        }
    }

    #[test]
    fn flat_map_horizontal_derivative_of_x_independent_field() {
        let g = grid();
        let eta = RealField::zeros(&g);
        let params = MapParams::new(1.0, 0.05, 33);
        let map = DomainMap::build(&eta, &params).unwrap();
        let f = BulkField::from_fn(&g, 33, |_, z| (2.0 * z).exp());
        let dx = map.deriv_x(&f);
        for v in dx.values().iter() {
            assert!(v.abs() <= 1e-12);
        }
    }

    #[test]
    fn map_derivatives_encode_identity_on_rho() {
        // deriv_y(rho) = 1 and deriv_x(rho) = 0: the height field is y itself.
        let g = grid();
        let eta = RealField::from_fn(&g, |x| 0.1 * x.cos());
        let params = MapParams::new(1.0, 0.05, 64);
        let map = DomainMap::build(&eta, &params).unwrap();
        let dy = map.deriv_y(&map.rho.clone());
        let dx = map.deriv_x(&map.rho.clone());
        for v in dy.values().iter() {
            assert!((v - 1.0).abs() <= 1e-6, "deriv_y(rho) = {v}");
        }
        for v in dx.values().iter() {
            assert!(v.abs() <= 1e-6, "deriv_x(rho) = {v}");
        }
    }

    #[test]
    fn flat_map_reproduces_analytic_derivatives() {
        // On the flat map the operators reduce to (1/h_b) d/dz and d/dx;
        // check them against cos(kx) cosh(k h_b (z+1)) at two resolutions to
        // confirm the second-order z error.
        let g = Grid::with_default_length(64).unwrap();
        let eta = RealField::zeros(&g);
        let k = 2.0;
        let h_b = 1.0;
        let err_at = |n_z: usize| -> f64 {
            let params = MapParams::new(h_b, 0.05, n_z);
            let map = DomainMap::build(&eta, &params).unwrap();
            let f = BulkField::from_fn(&g, n_z, |x, z| (k * x).cos() * (k * h_b * (z + 1.0)).cosh());
            let dy = map.deriv_y(&f);
            let exact = BulkField::from_fn(&g, n_z, |x, z| {
                (k * x).cos() * k * (k * h_b * (z + 1.0)).sinh()
            });
            let dxf = map.deriv_x(&f);
            let exact_x = BulkField::from_fn(&g, n_z, |x, z| {
                -k * (k * x).sin() * (k * h_b * (z + 1.0)).cosh()
            });
            let e1 = (&dy - &exact)
                .values()
                .iter()
                .fold(0.0_f64, |a, v| a.max(v.abs()));
            let e2 = (&dxf - &exact_x)
                .values()
                .iter()
                .fold(0.0_f64, |a, v| a.max(v.abs()));
            // x-derivative is spectral: exact; z-derivative carries the scheme order.
            assert!(e2 <= 1e-10, "horizontal derivative should be spectral, got {e2}");
            e1
        };
        let coarse = err_at(17);
        let fine = err_at(33);
        let order = (coarse / fine).log2();
        assert!(
            (1.8..=2.4).contains(&order),
            "z-stencil order {order} (errors {coarse} -> {fine})"
        );
    }

    #[test]
    fn gradient_bound_from_surface_slope() {
        let g = grid();
        let eta = RealField::from_fn(&g, |x| 0.1 * x.cos() + 0.02 * (3.0 * x).sin());
        let params = MapParams::new(1.0, MapParams::default_delta(&eta), 64);
        let map = DomainMap::build(&eta, &params).unwrap();
        let slope = eta.derivative(1).unwrap().norm_sup();
        let grad_sup = map
            .grad_x_rho
            .values()
            .iter()
            .fold(0.0_f64, |a, v| a.max(v.abs()));
        assert!(
            grad_sup <= 2.0 * slope + params.delta,
            "grad_x rho sup {grad_sup} vs bound {}",
            2.0 * slope + params.delta
        );
    }
}
