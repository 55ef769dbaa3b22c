//! Time evolution of the surface system
//!
//! ```text
//! d_t eta = G(eta) psi
//! d_t psi = -g eta - 1/2 |psi_x|^2 + 1/2 (eta_x psi_x + G(eta) psi)^2 / (1 + eta_x^2)
//! ```
//!
//! with classical RK4 in time. The domain map (and with it the
//! Dirichlet-Neumann solve) is rebuilt at every internal stage from the
//! stage surface, and quadratic products are dealiased by the 2/3 rule
//! before the division by `1 + eta_x^2`.

use ndarray::Array2;

use crate::elliptic::{dno_apply, FlatPreconditioner, SolverConfig};
use crate::geometry::{DomainMap, MapParams};
use crate::spectral::{Grid, RealField};
use crate::WaveError;

/// The surface unknowns at one instant.
#[derive(Clone, Debug)]
pub struct SurfaceState {
    pub t: f64,
    pub eta: RealField,
    pub psi: RealField,
}

impl SurfaceState {
    pub fn rest(grid: &Grid) -> Self {
        SurfaceState {
            t: 0.0,
            eta: RealField::zeros(grid),
            psi: RealField::zeros(grid),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.eta.is_finite() && self.psi.is_finite()
    }
}

/// Everything a time step needs to know.
#[derive(Clone, Debug)]
pub struct EvolutionParams {
    pub grid: Grid,
    pub map: MapParams,
    pub solver: SolverConfig,
    /// Gravitational acceleration (g > 0).
    pub g: f64,
    pub dt: f64,
    pub t_end: f64,
    pub dealias_on: bool,
}

impl EvolutionParams {
    /// Linear-stability-motivated default step:
    /// `0.25 / sqrt(g k_max tanh(k_max h_b))`.
    pub fn default_dt(grid: &Grid, g: f64, h_b: f64) -> f64 {
        let k_max = grid.k_max();
        0.25 / (g * k_max * (k_max * h_b).tanh()).sqrt()
    }
}

/// Mutable solver scratch shared across steps: the flat-map
/// preconditioner (depth-dependent only) and warm starts for the two
/// recurring elliptic solves.
pub struct Workspace {
    pub pre: FlatPreconditioner,
    pub phi_warm: Option<Array2<f64>>,
    pub q_warm: Option<Array2<f64>>,
}

impl Workspace {
    pub fn new(p: &EvolutionParams) -> Self {
        Workspace {
            pre: FlatPreconditioner::build(&p.grid, p.map.n_z, p.map.h_b),
            phi_warm: None,
            q_warm: None,
        }
    }
}

/// Surface velocity components from the surface unknowns:
/// `B = (eta_x psi_x + G psi) / (1 + eta_x^2)`, `V = psi_x - B eta_x`.
///
/// The identity `G psi = B - eta_x V` is exact algebra on the inputs.
pub fn compute_bv(
    eta: &RealField,
    psi: &RealField,
    g_psi: &RealField,
) -> Result<(RealField, RealField), WaveError> {
    let eta_x = eta.derivative(1)?;
    let psi_x = psi.derivative(1)?;
    let b = RealField::from_values(
        eta.grid(),
        (0..eta.grid().n_x())
            .map(|j| {
                let ex = eta_x.values()[j];
                (ex * psi_x.values()[j] + g_psi.values()[j]) / (1.0 + ex * ex)
            })
            .collect(),
    )
    .expect("length");
    let v = psi_x.zip(&b.zip(&eta_x, |bi, ei| bi * ei), |px, be| px - be);
    Ok((b, v))
}

/// Right-hand side of the surface system at one state.
pub fn zakharov_rhs(
    state: &SurfaceState,
    p: &EvolutionParams,
    ws: &mut Workspace,
) -> Result<(RealField, RealField), WaveError> {
    if !state.is_finite() {
        return Err(WaveError::NonFinite {
            context: "surface state",
        });
    }
    let map = DomainMap::build(&state.eta, &p.map)?;
    let (g_psi, solve) = dno_apply(
        &state.eta,
        &state.psi,
        &map,
        &ws.pre,
        &p.solver,
        ws.phi_warm.as_ref(),
    )?;
    ws.phi_warm = Some(solve.homogeneous);

    let eta_x = state.eta.derivative(1)?;
    let psi_x = state.psi.derivative(1)?;
    let dealias = |f: RealField| if p.dealias_on { f.dealias() } else { f };

    let psi_x_sq = dealias(&psi_x * &psi_x);
    let cross = dealias(&eta_x * &psi_x);
    let flux = &cross + &g_psi;
    let flux_sq = dealias(&flux * &flux);

    let n_x = p.grid.n_x();
    let d_psi = RealField::from_values(
        &p.grid,
        (0..n_x)
            .map(|j| {
                let ex = eta_x.values()[j];
                -p.g * state.eta.values()[j] - 0.5 * psi_x_sq.values()[j]
                    + 0.5 * flux_sq.values()[j] / (1.0 + ex * ex)
            })
            .collect(),
    )
    .expect("length");
    Ok((g_psi, d_psi))
}

/// One classical fourth-order Runge-Kutta step.
///
/// The strip condition is enforced at every internal stage because each
/// stage rebuilds the domain map from its own surface.
pub fn rk4_step(
    state: &SurfaceState,
    p: &EvolutionParams,
    ws: &mut Workspace,
) -> Result<SurfaceState, WaveError> {
    let dt = p.dt;
    let stage = |s: &SurfaceState, d_eta: &RealField, d_psi: &RealField, frac: f64| SurfaceState {
        t: s.t + frac * dt,
        eta: s.eta.zip(&d_eta.scale(frac * dt), |a, b| a + b),
        psi: s.psi.zip(&d_psi.scale(frac * dt), |a, b| a + b),
    };
    let (k1_eta, k1_psi) = zakharov_rhs(state, p, ws)?;
    let s2 = stage(state, &k1_eta, &k1_psi, 0.5);
    let (k2_eta, k2_psi) = zakharov_rhs(&s2, p, ws)?;
    let s3 = stage(state, &k2_eta, &k2_psi, 0.5);
    let (k3_eta, k3_psi) = zakharov_rhs(&s3, p, ws)?;
    let s4 = stage(state, &k3_eta, &k3_psi, 1.0);
    let (k4_eta, k4_psi) = zakharov_rhs(&s4, p, ws)?;

    let combine = |f: &RealField, k1: &RealField, k2: &RealField, k3: &RealField, k4: &RealField| {
        RealField::from_values(
            &p.grid,
            (0..p.grid.n_x())
                .map(|j| {
                    f.values()[j]
                        + dt / 6.0
                            * (k1.values()[j]
                                + 2.0 * k2.values()[j]
                                + 2.0 * k3.values()[j]
                                + k4.values()[j])
                })
                .collect(),
        )
        .expect("length")
    };
    Ok(SurfaceState {
        t: state.t + dt,
        eta: combine(&state.eta, &k1_eta, &k2_eta, &k3_eta, &k4_eta),
        psi: combine(&state.psi, &k1_psi, &k2_psi, &k3_psi, &k4_psi),
    })
}

/// Surface energy `H = 1/2 ∫ (psi G(eta) psi + g eta^2) dx`.
pub fn hamiltonian(
    state: &SurfaceState,
    p: &EvolutionParams,
    ws: &mut Workspace,
) -> Result<f64, WaveError> {
    let map = DomainMap::build(&state.eta, &p.map)?;
    let (g_psi, solve) = dno_apply(
        &state.eta,
        &state.psi,
        &map,
        &ws.pre,
        &p.solver,
        ws.phi_warm.as_ref(),
    )?;
    ws.phi_warm = Some(solve.homogeneous);
    Ok(0.5 * (state.psi.inner(&g_psi) + p.g * state.eta.inner(&state.eta)))
}

/// Trapezoid mass `∫ eta dx`.
pub fn conserved_mass(state: &SurfaceState) -> f64 {
    state.eta.integral()
}

/// Linear standing wave `eta = a cos(kx)`, `psi = 0`.
pub fn standing_wave(grid: &Grid, amplitude: f64, wavenumber: f64) -> SurfaceState {
    SurfaceState {
        t: 0.0,
        eta: RealField::from_fn(grid, |x| amplitude * (wavenumber * x).cos()),
        psi: RealField::zeros(grid),
    }
}

/// Linear rightward traveling wave at t = 0:
/// `eta = a cos(kx)`, `psi = (a g / omega) sin(kx)` with
/// `omega = sqrt(g k tanh(k h_b))`.
pub fn traveling_wave_linear(grid: &Grid, amplitude: f64, wavenumber: f64, g: f64, h_b: f64) -> SurfaceState {
    let omega = (g * wavenumber * (wavenumber * h_b).tanh()).sqrt();
    SurfaceState {
        t: 0.0,
        eta: RealField::from_fn(grid, |x| amplitude * (wavenumber * x).cos()),
        psi: RealField::from_fn(grid, |x| amplitude * g / omega * (wavenumber * x).sin()),
    }
}

/// Angular frequency of the linear mode `k`: `sqrt(g k tanh(k h_b))`.
pub fn linear_frequency(g: f64, k: f64, h_b: f64) -> f64 {
    (g * k * (k * h_b).tanh()).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::{dno_flat_symbol, Depth};
    use crate::spectral::smooth_random_field;

    fn params(n_x: usize, n_z: usize) -> EvolutionParams {
        let grid = Grid::with_default_length(n_x).unwrap();
        let g = 1.0;
        let h_b = 1.0;
        EvolutionParams {
            grid: grid.clone(),
            map: MapParams::new(h_b, 0.05, n_z),
            solver: SolverConfig::default(),
            g,
            dt: EvolutionParams::default_dt(&grid, g, h_b),
            t_end: 1.0,
            dealias_on: true,
        }
    }

    #[test]
    fn bv_reduce_on_flat_surface() {
        let p = params(64, 17);
        let eta = RealField::zeros(&p.grid);
        let psi = smooth_random_field(&p.grid, 3, 10);
        let g_psi = dno_flat_symbol(&psi, 1.0, Depth::Finite);
        let (b, v) = compute_bv(&eta, &psi, &g_psi).unwrap();
        assert!((&b - &g_psi).norm_sup() <= 1e-13 * g_psi.norm_sup().max(1.0));
        let psi_x = psi.derivative(1).unwrap();
        assert!((&v - &psi_x).norm_sup() <= 1e-13 * psi_x.norm_sup().max(1.0));
    }

    #[test]
    fn bv_zero_for_zero_potential() {
        let p = params(64, 17);
        let eta = smooth_random_field(&p.grid, 9, 5).scale(0.01);
        let psi = RealField::zeros(&p.grid);
        let g_psi = RealField::zeros(&p.grid);
        let (b, v) = compute_bv(&eta, &psi, &g_psi).unwrap();
        assert!(b.norm_sup() == 0.0 && v.norm_sup() == 0.0);
    }

    #[test]
    fn bv_identity_is_exact_algebra() {
        // G psi = B - eta_x V pointwise, for any g_psi input.
        let p = params(128, 17);
        let eta = RealField::from_fn(&p.grid, |x| 0.1 * x.cos());
        let psi = RealField::from_fn(&p.grid, |x| x.sin());
        let mut ws = Workspace::new(&p);
        let map = DomainMap::build(&eta, &p.map).unwrap();
        let (g_psi, _) = dno_apply(&eta, &psi, &map, &ws.pre, &p.solver, None).unwrap();
        ws.phi_warm = None;
        let (b, v) = compute_bv(&eta, &psi, &g_psi).unwrap();
        let eta_x = eta.derivative(1).unwrap();
        let recon = b.zip(&eta_x.zip(&v, |e, vi| e * vi), |bi, ev| bi - ev);
        let err = (&recon - &g_psi).norm_sup();
        assert!(err <= 1e-12 * g_psi.norm_sup().max(1.0), "identity defect {err}");
    }

    #[test]
    fn rest_state_is_equilibrium() {
        let p = params(64, 17);
        let mut ws = Workspace::new(&p);
        let rest = SurfaceState::rest(&p.grid);
        let (d_eta, d_psi) = zakharov_rhs(&rest, &p, &mut ws).unwrap();
        assert_eq!(d_eta.norm_sup(), 0.0);
        assert_eq!(d_psi.norm_sup(), 0.0);
        let next = rk4_step(&rest, &p, &mut ws).unwrap();
        assert_eq!((&next.eta - &rest.eta).norm_sup(), 0.0);
        assert_eq!((&next.psi - &rest.psi).norm_sup(), 0.0);
    }

    #[test]
    fn constant_elevation_forces_psi_linearly() {
        let p = params(64, 17);
        let mut ws = Workspace::new(&p);
        let c = 0.05;
        let state = SurfaceState {
            t: 0.0,
            eta: RealField::from_fn(&p.grid, |_| c),
            psi: RealField::zeros(&p.grid),
        };
        let (d_eta, d_psi) = zakharov_rhs(&state, &p, &mut ws).unwrap();
        assert!(d_eta.norm_sup() <= 1e-8, "d_eta {}", d_eta.norm_sup());
        let expect = -p.g * c;
        for v in d_psi.values().iter() {
            assert!((v - expect).abs() <= 1e-8, "d_psi {v} vs {expect}");
        }
    }

    #[test]
    fn rhs_linearizes_to_flat_symbol() {
        let p = params(128, 65);
        let mut ws = Workspace::new(&p);
        let eps = 1e-4;
        let k = 3.0;
        let state = SurfaceState {
            t: 0.0,
            eta: RealField::zeros(&p.grid),
            psi: RealField::from_fn(&p.grid, |x| eps * (k * x).cos()),
        };
        let (d_eta, d_psi) = zakharov_rhs(&state, &p, &mut ws).unwrap();
        let lin = state.psi.scale(k * (k * p.map.h_b).tanh());
        // Discretization error in z dominates the O(eps^2) nonlinearity.
        let rel = (&d_eta - &lin).norm_sup() / lin.norm_sup();
        assert!(rel <= 5e-3, "linearization error {rel}");
        assert!(d_psi.norm_sup() <= 10.0 * eps * eps, "d_psi {}", d_psi.norm_sup());
    }

    #[test]
    fn zero_step_is_identity() {
        let mut p = params(64, 17);
        p.dt = 0.0;
        let mut ws = Workspace::new(&p);
        let state = SurfaceState {
            t: 0.0,
            eta: RealField::from_fn(&p.grid, |x| 1e-3 * x.cos()),
            psi: RealField::from_fn(&p.grid, |x| 1e-3 * x.sin()),
        };
        let next = rk4_step(&state, &p, &mut ws).unwrap();
        assert_eq!((&next.eta - &state.eta).norm_sup(), 0.0);
        assert_eq!((&next.psi - &state.psi).norm_sup(), 0.0);
    }

    #[test]
    fn standing_wave_returns_after_one_period() {
        // Linear standing wave of tiny amplitude: after one analytic period
        // the state repeats up to O(a^2) nonlinearity, the z-discretization
        // floor and O(dt^4) time error; confirm the dt^4 part by halving.
        let n_x = 64;
        let n_z = 129;
        let a = 1e-4;
        let k = 1.0;
        let g = 1.0;
        let h_b = 1.0;
        let period = 2.0 * std::f64::consts::PI / linear_frequency(g, k, h_b);
        let err_with_steps = |steps: usize| -> f64 {
            let grid = Grid::with_default_length(n_x).unwrap();
            let p = EvolutionParams {
                grid: grid.clone(),
                map: MapParams::new(h_b, 0.05, n_z),
                solver: SolverConfig::default(),
                g,
                dt: period / steps as f64,
                t_end: period,
                dealias_on: true,
            };
            let mut ws = Workspace::new(&p);
            let mut state = standing_wave(&grid, a, k);
            let initial = state.clone();
            for _ in 0..steps {
                state = rk4_step(&state, &p, &mut ws).unwrap();
            }
            ((&state.eta - &initial.eta).norm_sup() / a)
                .max((&state.psi - &initial.psi).norm_sup() / a)
        };
        let coarse = err_with_steps(8);
        let fine = err_with_steps(16);
        let order = (coarse / fine).log2();
        assert!(coarse < 0.1, "coarse error {coarse}");
        assert!(
            order >= 3.5,
            "rk4 order {order} (errors {coarse} -> {fine})"
        );
    }

    #[test]
    fn hamiltonian_of_rest_and_cosine() {
        let p = params(64, 33);
        let mut ws = Workspace::new(&p);
        let rest = SurfaceState::rest(&p.grid);
        assert_eq!(hamiltonian(&rest, &p, &mut ws).unwrap(), 0.0);

        let a = 0.01;
        let k = 2.0;
        let state = standing_wave(&p.grid, a, k);
        let h = hamiltonian(&state, &p, &mut ws).unwrap();
        let exact = p.g * a * a * std::f64::consts::PI / 2.0;
        assert!(
            (h - exact).abs() <= 1e-12 + 1e-9 * exact,
            "H = {h}, expected {exact}"
        );
    }

    #[test]
    fn hamiltonian_nonnegative_for_flat_surface() {
        let p = params(64, 33);
        let mut ws = Workspace::new(&p);
        let state = SurfaceState {
            t: 0.0,
            eta: RealField::zeros(&p.grid),
            psi: smooth_random_field(&p.grid, 21, 10),
        };
        let h = hamiltonian(&state, &p, &mut ws).unwrap();
        assert!(h >= -1e-9, "H = {h}");
    }

    #[test]
    fn mass_examples() {
        let grid = Grid::with_default_length(64).unwrap();
        let rest = SurfaceState::rest(&grid);
        assert_eq!(conserved_mass(&rest), 0.0);
        let wave = standing_wave(&grid, 0.3, 2.0);
        assert!(conserved_mass(&wave).abs() <= 1e-13);
        let c = 0.25;
        let lifted = SurfaceState {
            t: 0.0,
            eta: RealField::from_fn(&grid, |_| c),
            psi: RealField::zeros(&grid),
        };
        let expect = c * grid.length();
        assert!((conserved_mass(&lifted) - expect).abs() <= 1e-12);
    }
}
