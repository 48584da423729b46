//! Time stepping for the coupled temperature / reaction / phase system.
//!
//! Each step updates `c`, then `phi`, then `theta`; the latent coupling terms
//! `alpha L_c dc/dt + alpha L_phi dphi/dt` enter the heat balance as the exact
//! discrete increments of the first two updates, so
//! `Q = rho c_p int theta - alpha L_c int c - alpha L_phi int phi` changes only
//! through the external source.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use crate::equilibrium::EquilibriumState;
use crate::error::{Error, Result};
use crate::grid::{div_k_grad, div_k_grad_diagonal, laplacian_neumann, Field, Grid, State};
use crate::model::{potential_prime, ModelParams, SourceSpec, POTENTIAL_CURVATURE_SUP};
use crate::stability;

/// Safety factor applied to every stability limit.
pub const CFL_SAFETY: f64 = 0.9;

/// Relative residual target of the implicit diffusion solves.
pub const CG_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    /// Forward Euler under the monotonicity restriction; bounds hold exactly.
    #[default]
    ExplicitMonotone,
    /// Backward Euler diffusion, explicit reactions and couplings.
    Imex,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::ExplicitMonotone => "explicit-monotone",
            Scheme::Imex => "imex",
        }
    }

    pub fn from_name(s: &str) -> Option<Scheme> {
        match s {
            "explicit-monotone" | "explicit" => Some(Scheme::ExplicitMonotone),
            "imex" => Some(Scheme::Imex),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepControls {
    pub dt: f64,
    pub scheme: Scheme,
    pub t_end: f64,
    /// Keep a snapshot every this many steps (0: first and last only).
    pub snapshot_every: usize,
}

impl StepControls {
    pub fn explicit(dt: f64, t_end: f64) -> Self {
        StepControls {
            dt,
            scheme: Scheme::ExplicitMonotone,
            t_end,
            snapshot_every: 0,
        }
    }

    pub fn imex(dt: f64, t_end: f64) -> Self {
        StepControls {
            scheme: Scheme::Imex,
            ..StepControls::explicit(dt, t_end)
        }
    }

    /// Number of steps needed to reach `t_end`; the last one may be shortened.
    pub fn step_count(&self) -> usize {
        if self.t_end <= 0.0 {
            0
        } else {
            (self.t_end / self.dt * (1.0 - 1e-12)).ceil() as usize
        }
    }
}

/// Largest monotone time step of the explicit scheme.
///
/// Each equation contributes the bound that makes its forward-Euler update a
/// nondecreasing function of every cell value it reads, with the reaction
/// rates evaluated at `theta_max_est` (they increase with temperature).
pub fn cfl_limits(p: &ModelParams, g: &Grid, theta_max_est: f64) -> Result<f64> {
    let stencil = 2.0 * g.inverse_h2_sum();
    let rates = p.reaction_rate_sum(theta_max_est)?;
    let heat = p.heat_capacity() / (p.k_hi * stencil);
    let chem = 1.0 / (p.d_c * stencil + rates);
    let phase =
        p.tau_phi / (p.eps_interface.powi(2) * stencil + p.lambda_cpl + POTENTIAL_CURVATURE_SUP);
    Ok(CFL_SAFETY * heat.min(chem).min(phase))
}

/// Step bound for the IMEX scheme: only the explicit reaction and phase
/// forcing are restricted.
pub fn imex_limits(p: &ModelParams, theta_max_est: f64) -> Result<f64> {
    let rates = p.reaction_rate_sum(theta_max_est)?;
    let chem = if rates > 0.0 {
        1.0 / rates
    } else {
        f64::INFINITY
    };
    let phase = p.tau_phi / (p.lambda_cpl + POTENTIAL_CURVATURE_SUP);
    Ok(CFL_SAFETY * chem.min(phase))
}

/// `Q = rho c_p int theta - alpha L_c int c - alpha L_phi int phi`.
pub fn conserved_quantity(state: &State, p: &ModelParams) -> f64 {
    p.heat_capacity() * state.theta.integrate()
        - p.alpha * p.l_c * state.c.integrate()
        - p.alpha * p.l_phi * state.phi.integrate()
}

/// Result of a single step, including the realized total source
/// `S = H_ext + alpha L_c dc/dt + alpha L_phi dphi/dt`.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub state: State,
    pub source_min: f64,
    pub source_min_cell: usize,
    pub source_abs_max: f64,
    /// `dt * int H_ext`, the exact change of `Q` in this step.
    pub external_heat: f64,
}

/// Advance one step of length `controls.dt`.
pub fn step(
    state: &State,
    p: &ModelParams,
    src: &SourceSpec,
    controls: &StepControls,
) -> Result<State> {
    step_with_report(state, p, src, controls.dt, controls.scheme).map(|r| r.state)
}

pub fn step_with_report(
    state: &State,
    p: &ModelParams,
    src: &SourceSpec,
    dt: f64,
    scheme: Scheme,
) -> Result<StepReport> {
    if !(dt > 0.0) {
        return Err(Error::domain(format!("dt must be > 0, got {dt}")));
    }
    let g = *state.grid();
    let n = g.len();
    let th = state.theta.values();
    let c = state.c.values();
    let ph = state.phi.values();

    let mut reaction = Vec::with_capacity(n);
    for i in 0..n {
        reaction.push(p.reaction(th[i], c[i]).map_err(|_| Error::PositivityLoss {
            cell: i,
            t: state.t,
            value: th[i],
        })?);
    }
    let phase_force: Vec<f64> = (0..n)
        .map(|i| -potential_prime(ph[i]) + p.lambda_cpl * (c[i] - ph[i]))
        .collect();
    let h_ext: Vec<f64> = (0..n)
        .map(|i| src.h_ext.eval(&g.center(i), state.t))
        .collect();
    let kappa = state.phi.map(|v| p.conductivity(v));
    let eps2 = p.eps_interface * p.eps_interface;
    let rc = p.heat_capacity();

    let (c_new, phi_new, theta_new) = match scheme {
        Scheme::ExplicitMonotone => {
            let lap_c = laplacian_neumann(&state.c);
            let lap_phi = laplacian_neumann(&state.phi);
            let flux = div_k_grad(&kappa, &state.theta)?;
            let c_new: Vec<f64> = (0..n)
                .map(|i| c[i] + dt * (p.d_c * lap_c.values()[i] + reaction[i]))
                .collect();
            let phi_new: Vec<f64> = (0..n)
                .map(|i| ph[i] + dt / p.tau_phi * (eps2 * lap_phi.values()[i] + phase_force[i]))
                .collect();
            let theta_new: Vec<f64> = (0..n)
                .map(|i| {
                    let latent =
                        p.alpha * (p.l_c * (c_new[i] - c[i]) + p.l_phi * (phi_new[i] - ph[i]));
                    th[i] + (dt * (flux.values()[i] + h_ext[i]) + latent) / rc
                })
                .collect();
            (c_new, phi_new, theta_new)
        }
        Scheme::Imex => {
            let unit = Field::constant(g, 1.0);
            let rhs_c: Vec<f64> = (0..n).map(|i| c[i] + dt * reaction[i]).collect();
            let c_new = implicit_diffusion(&unit, 1.0, dt * p.d_c, &rhs_c, c)?;
            let rhs_phi: Vec<f64> = (0..n)
                .map(|i| ph[i] + dt / p.tau_phi * phase_force[i])
                .collect();
            let phi_new = implicit_diffusion(&unit, 1.0, dt * eps2 / p.tau_phi, &rhs_phi, ph)?;
            let rhs_theta: Vec<f64> = (0..n)
                .map(|i| {
                    let latent =
                        p.alpha * (p.l_c * (c_new[i] - c[i]) + p.l_phi * (phi_new[i] - ph[i]));
                    rc * th[i] + dt * h_ext[i] + latent
                })
                .collect();
            let theta_new = implicit_diffusion(&kappa, rc, dt, &rhs_theta, th)?;
            (c_new, phi_new, theta_new)
        }
    };

    let mut source_min = f64::INFINITY;
    let mut source_min_cell = 0;
    let mut source_abs_max: f64 = 0.0;
    for i in 0..n {
        let s =
            h_ext[i] + p.alpha * (p.l_c * (c_new[i] - c[i]) + p.l_phi * (phi_new[i] - ph[i])) / dt;
        if s < source_min {
            source_min = s;
            source_min_cell = i;
        }
        source_abs_max = source_abs_max.max(s.abs());
    }

    let t_new = state.t + dt;
    if let Some((cell, &value)) = theta_new.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(Error::PositivityLoss {
            cell,
            t: t_new,
            value,
        });
    }
    let external_heat = dt * Field::from_raw(g, h_ext).integrate();
    Ok(StepReport {
        state: State {
            t: t_new,
            theta: Field::from_raw(g, theta_new),
            c: Field::from_raw(g, c_new),
            phi: Field::from_raw(g, phi_new),
        },
        source_min,
        source_min_cell,
        source_abs_max,
        external_heat,
    })
}

/// Solve `(shift I - scale div(kappa grad .)) x = rhs` by Jacobi-preconditioned
/// conjugate gradients.
fn implicit_diffusion(
    kappa: &Field,
    shift: f64,
    scale: f64,
    rhs: &[f64],
    guess: &[f64],
) -> Result<Vec<f64>> {
    let g = *kappa.grid();
    let diag: Vec<f64> = div_k_grad_diagonal(kappa)
        .into_iter()
        .map(|d| shift - scale * d)
        .collect();
    let apply = |x: &[f64]| -> Result<Vec<f64>> {
        let f = Field::from_raw(g, x.to_vec());
        let op = div_k_grad(kappa, &f)?;
        Ok(x.iter()
            .zip(op.values())
            .map(|(xi, oi)| shift * xi - scale * oi)
            .collect())
    };
    conjugate_gradient(apply, &diag, rhs, guess, CG_TOLERANCE, 10 * rhs.len() + 100)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let prod: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    crate::grid::pairwise_sum(&prod)
}

pub(crate) fn conjugate_gradient(
    apply: impl Fn(&[f64]) -> Result<Vec<f64>>,
    diag: &[f64],
    rhs: &[f64],
    guess: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let rhs_norm = dot(rhs, rhs).sqrt();
    let mut x = guess.to_vec();
    if rhs_norm == 0.0 {
        return Ok(vec![0.0; rhs.len()]);
    }
    let ax = apply(&x)?;
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(ri, di)| ri / di).collect();
    let mut d = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..max_iter {
        let res = dot(&r, &r).sqrt() / rhs_norm;
        if res <= tol {
            return Ok(x);
        }
        let ad = apply(&d)?;
        let step = rz / dot(&d, &ad);
        for i in 0..x.len() {
            x[i] += step * d[i];
            r[i] -= step * ad[i];
        }
        z = r.iter().zip(diag).map(|(ri, di)| ri / di).collect();
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..d.len() {
            d[i] = z[i] + beta * d[i];
        }
    }
    let res = dot(&r, &r).sqrt() / rhs_norm;
    if res <= tol {
        Ok(x)
    } else {
        Err(Error::LinearSolver {
            iterations: max_iter,
            residual: res,
        })
    }
}

/// Per-step scalar record.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub step: usize,
    pub t: f64,
    pub theta_min: f64,
    pub theta_min_cell: usize,
    pub theta_max: f64,
    pub theta_max_cell: usize,
    pub c_min: f64,
    pub c_min_cell: usize,
    pub c_max: f64,
    pub c_max_cell: usize,
    pub phi_min: f64,
    pub phi_min_cell: usize,
    pub phi_max: f64,
    pub phi_max_cell: usize,
    pub q: f64,
    /// Cumulative `int_0^t int H_ext`.
    pub external_heat: f64,
    /// Realized total source of the step that produced this record
    /// (`None` for the initial state).
    pub source_min: Option<(f64, usize)>,
    pub source_abs_max: Option<f64>,
    pub energy: Option<f64>,
    /// `int (theta - theta_bar)` when an equilibrium is attached.
    pub thermal_offset: Option<f64>,
}

impl Diagnostics {
    fn of(
        step: usize,
        state: &State,
        p: &ModelParams,
        eq: Option<&EquilibriumState>,
    ) -> Diagnostics {
        let (theta_min, theta_min_cell) = state.theta.argmin();
        let (theta_max, theta_max_cell) = state.theta.argmax();
        let (c_min, c_min_cell) = state.c.argmin();
        let (c_max, c_max_cell) = state.c.argmax();
        let (phi_min, phi_min_cell) = state.phi.argmin();
        let (phi_max, phi_max_cell) = state.phi.argmax();
        let energy = eq.map(|e| stability::state_energy(state, p, e).energy);
        let thermal_offset =
            eq.map(|e| state.theta.integrate() - e.theta_bar * state.grid().volume());
        Diagnostics {
            step,
            t: state.t,
            theta_min,
            theta_min_cell,
            theta_max,
            theta_max_cell,
            c_min,
            c_min_cell,
            c_max,
            c_max_cell,
            phi_min,
            phi_min_cell,
            phi_max,
            phi_max_cell,
            q: conserved_quantity(state, p),
            external_heat: 0.0,
            source_min: None,
            source_abs_max: None,
            energy,
            thermal_offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub state: State,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub scheme: Scheme,
    pub dt: f64,
    pub snapshots: Vec<Snapshot>,
    pub diagnostics: Vec<Diagnostics>,
    /// Steps where the realized source fell below `-C0`: `(step, cell, S)`.
    pub source_violations: Vec<(usize, usize, f64)>,
    pub equilibrium: Option<EquilibriumState>,
}

impl Trajectory {
    pub fn initial(&self) -> &State {
        &self.snapshots[0].state
    }

    pub fn last(&self) -> &State {
        &self
            .snapshots
            .last()
            .expect("trajectory has an initial snapshot")
            .state
    }

    pub fn t_end(&self) -> f64 {
        self.diagnostics.last().map_or(0.0, |d| d.t)
    }

    /// `(t, E)` pairs, when an equilibrium was attached.
    pub fn energy_series(&self) -> Option<Vec<(f64, f64)>> {
        self.diagnostics
            .iter()
            .map(|d| d.energy.map(|e| (d.t, e)))
            .collect()
    }

    pub fn diagnostics_csv(&self) -> String {
        let mut out = String::from("t,theta_min,theta_max,c_min,c_max,phi_min,phi_max,Q,E\n");
        for d in &self.diagnostics {
            let e = d.energy.map(|e| e.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                d.t, d.theta_min, d.theta_max, d.c_min, d.c_max, d.phi_min, d.phi_max, d.q, e
            );
        }
        out
    }

    pub fn write_diagnostics(&self, path: impl AsRef<Path>) -> io::Result<()> {
        fs::write(path, self.diagnostics_csv())
    }

    /// Writes `snap_<step>_{theta,c,phi}.csv` for every snapshot.
    pub fn write_snapshots(&self, dir: impl AsRef<Path>) -> io::Result<Vec<std::path::PathBuf>> {
        let mut written = vec![];
        for snap in &self.snapshots {
            for (name, f) in [
                ("theta", &snap.state.theta),
                ("c", &snap.state.c),
                ("phi", &snap.state.phi),
            ] {
                let path = dir.as_ref().join(format!("snap_{}_{name}.csv", snap.step));
                f.write_snapshot(&path)?;
                written.push(path);
            }
        }
        Ok(written)
    }
}

/// Upper estimate of the temperature over the run, from the affine
/// super-solution with the larger of the declared and the external source bound.
pub fn theta_ceiling(initial: &State, p: &ModelParams, src: &SourceSpec, t_end: f64) -> f64 {
    let s = src.s_sup.max(src.h_ext.sup_abs());
    initial.theta.max() + t_end.max(0.0) * s / p.heat_capacity()
}

/// Integrate from `initial` to `controls.t_end`, recording diagnostics at every
/// step and snapshots per `controls.snapshot_every`.
pub fn run(
    initial: &State,
    p: &ModelParams,
    src: &SourceSpec,
    controls: &StepControls,
    equilibrium: Option<&EquilibriumState>,
) -> Result<Trajectory> {
    if !(controls.dt > 0.0) {
        return Err(Error::domain(format!(
            "dt must be > 0, got {}",
            controls.dt
        )));
    }
    if !(controls.t_end >= 0.0) {
        return Err(Error::domain(format!(
            "t_end must be >= 0, got {}",
            controls.t_end
        )));
    }
    let (theta_min, cell) = initial.theta.argmin();
    if !(theta_min > 0.0) {
        return Err(Error::PositivityLoss {
            cell,
            t: initial.t,
            value: theta_min,
        });
    }
    if controls.scheme == Scheme::ExplicitMonotone {
        let limit = cfl_limits(
            p,
            initial.grid(),
            theta_ceiling(initial, p, src, controls.t_end),
        )?;
        if controls.dt > limit {
            return Err(Error::CflViolation {
                dt: controls.dt,
                limit,
            });
        }
    }

    let steps = controls.step_count();
    let mut traj = Trajectory {
        scheme: controls.scheme,
        dt: controls.dt,
        snapshots: vec![Snapshot {
            step: 0,
            state: initial.clone(),
        }],
        diagnostics: vec![Diagnostics::of(0, initial, p, equilibrium)],
        source_violations: vec![],
        equilibrium: equilibrium.cloned(),
    };
    let t0 = initial.t;
    let mut current = initial.clone();
    let mut heat = 0.0;
    for k in 1..=steps {
        let t_next = if k == steps {
            t0 + controls.t_end
        } else {
            t0 + k as f64 * controls.dt
        };
        let dt = t_next - current.t;
        let report =
            step_with_report(&current, p, src, dt, controls.scheme).map_err(|e| Error::AtStep {
                step: k,
                source: Box::new(e),
            })?;
        let mut state = report.state;
        state.t = t_next;
        heat += report.external_heat;

        let mut diag = Diagnostics::of(k, &state, p, equilibrium);
        diag.external_heat = heat;
        diag.source_min = Some((report.source_min, report.source_min_cell));
        diag.source_abs_max = Some(report.source_abs_max);
        if report.source_min < -src.c0 {
            traj.source_violations
                .push((k, report.source_min_cell, report.source_min));
        }
        traj.diagnostics.push(diag);

        let keep = k == steps || (controls.snapshot_every > 0 && k % controls.snapshot_every == 0);
        if keep {
            traj.snapshots.push(Snapshot {
                step: k,
                state: state.clone(),
            });
        }
        current = state;
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::build_equilibrium;
    use crate::model::HeatSource;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(g: Grid, seed: u64) -> State {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = |lo: f64, hi: f64| {
            Field::new(g, (0..g.len()).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
        };
        let theta = f(0.8, 1.5);
        let c = f(0.0, 1.0);
        let phi = f(0.0, 1.0);
        State::new(0.0, theta, c, phi).unwrap()
    }

    /// Straight left-to-right summation of Q, independent of the pairwise tree.
    fn q_naive(s: &State, p: &ModelParams) -> f64 {
        let vol = s.grid().cell_volume();
        let sum = |f: &Field| f.values().iter().fold(0.0, |a, b| a + b) * vol;
        p.heat_capacity() * sum(&s.theta)
            - p.alpha * p.l_c * sum(&s.c)
            - p.alpha * p.l_phi * sum(&s.phi)
    }

    #[test]
    fn cfl_reduces_to_diffusion_limit() {
        let p = ModelParams {
            a_d: 1e-14,
            a_r: 1e-14,
            lambda_cpl: 1e-14,
            eps_interface: 1e-3,
            d_c: 1.0,
            k_hi: 1e-3,
            k_lo: 1e-3,
            tau_phi: 10.0,
            ..ModelParams::default()
        };
        let g = Grid::line(10, 1.0).unwrap();
        let dt = cfl_limits(&p, &g, 1.0).unwrap();
        assert!((dt - 0.0045).abs() < 1e-9, "{dt}");

        let fine = Grid::line(20, 1.0).unwrap();
        let dt_fine = cfl_limits(&p, &fine, 1.0).unwrap();
        assert!((dt / dt_fine - 4.0).abs() < 1e-6);
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let p = ModelParams {
            alpha: 0.1,
            ..ModelParams::default()
        };
        let eq = build_equilibrium(1.0, &p).unwrap();
        let g = Grid::rect(6, 5, 1.0, 1.0).unwrap();
        let s = State::homogeneous(g, eq.theta_bar, eq.c_bar, eq.phi_bar);
        let dt = cfl_limits(&p, &g, 1.0).unwrap();
        for scheme in [Scheme::ExplicitMonotone, Scheme::Imex] {
            let out = step_with_report(&s, &p, &SourceSpec::free(), dt, scheme)
                .unwrap()
                .state;
            for (a, b) in [(&out.theta, &s.theta), (&out.c, &s.c), (&out.phi, &s.phi)] {
                for (x, y) in a.values().iter().zip(b.values()) {
                    assert!(
                        (x - y).abs() <= 1e-14 * y.abs().max(1.0),
                        "{scheme:?}: {x} vs {y}"
                    );
                }
            }
        }
    }

    #[test]
    fn homogeneous_data_stays_homogeneous() {
        let p = ModelParams {
            alpha: 0.3,
            ..ModelParams::default()
        };
        let g = Grid::line(17, 1.0).unwrap();
        let mut s = State::homogeneous(g, 1.2, 0.1, 0.8);
        let dt = cfl_limits(&p, &g, 2.0).unwrap();
        for _ in 0..50 {
            s = step(
                &s,
                &p,
                &SourceSpec::free(),
                &StepControls::explicit(dt, 1.0),
            )
            .unwrap();
        }
        for f in [&s.theta, &s.c, &s.phi] {
            assert_eq!(f.min(), f.max());
        }
    }

    #[test]
    fn conserved_quantity_examples() {
        let p = ModelParams {
            alpha: 0.0,
            ..ModelParams::default()
        };
        let g = Grid::line(8, 2.0).unwrap();
        let s = random_state(g, 4);
        assert_eq!(
            conserved_quantity(&s, &p),
            p.heat_capacity() * s.theta.integrate()
        );

        let p = ModelParams {
            alpha: 0.4,
            ..ModelParams::default()
        };
        let eq = build_equilibrium(1.1, &p).unwrap();
        let h = State::homogeneous(g, eq.theta_bar, eq.c_bar, eq.phi_bar);
        let expected = 2.0
            * (p.heat_capacity() * eq.theta_bar
                - p.alpha * p.l_c * eq.c_bar
                - p.alpha * p.l_phi * eq.phi_bar);
        assert!((conserved_quantity(&h, &p) - expected).abs() < 1e-14);
    }

    #[test]
    fn q_conserved_each_step_in_free_regime() {
        let p = ModelParams {
            alpha: 0.4,
            l_c: 2.0,
            l_phi: 3.0,
            ..ModelParams::default()
        };
        for g in [
            Grid::line(32, 1.0).unwrap(),
            Grid::rect(8, 9, 1.0, 1.0).unwrap(),
        ] {
            let s = random_state(g, 9);
            let dt = cfl_limits(&p, &g, 2.0).unwrap();
            let next = step(
                &s,
                &p,
                &SourceSpec::free(),
                &StepControls::explicit(dt, 1.0),
            )
            .unwrap();
            let (q0, q1) = (q_naive(&s, &p), q_naive(&next, &p));
            assert!(
                (q1 - q0).abs() <= 10.0 * f64::EPSILON * q0.abs() * 4.0,
                "{q0} {q1}"
            );
            let (a, b) = (conserved_quantity(&s, &p), conserved_quantity(&next, &p));
            assert!((a - b).abs() <= 10.0 * f64::EPSILON * a.abs());
        }
    }

    #[test]
    fn q_changes_by_external_heat() {
        let p = ModelParams {
            alpha: 0.2,
            ..ModelParams::default()
        };
        let g = Grid::line(20, 1.0).unwrap();
        let s = random_state(g, 11);
        let src = SourceSpec {
            h_ext: HeatSource::Constant(3.0),
            c0: 0.0,
            s_sup: 10.0,
        };
        let dt = cfl_limits(&p, &g, 2.0).unwrap();
        let rep = step_with_report(&s, &p, &src, dt, Scheme::ExplicitMonotone).unwrap();
        let dq = conserved_quantity(&rep.state, &p) - conserved_quantity(&s, &p);
        assert!((dq - dt * 3.0).abs() < 1e-13, "{dq}");
        assert!((rep.external_heat - dt * 3.0).abs() < 1e-15);
    }

    #[test]
    fn imex_solves_are_consistent() {
        let p = ModelParams::default();
        let g = Grid::rect(10, 10, 1.0, 1.0).unwrap();
        let s = random_state(g, 5);
        let dt = 10.0 * cfl_limits(&p, &g, 2.0).unwrap();
        assert!(dt <= imex_limits(&p, 2.0).unwrap());
        let rep = step_with_report(&s, &p, &SourceSpec::free(), dt, Scheme::Imex).unwrap();
        // backward-Euler residual of the chemistry equation
        let lap = laplacian_neumann(&rep.state.c);
        for i in 0..g.len() {
            let r = p.reaction(s.theta.values()[i], s.c.values()[i]).unwrap();
            let resid =
                rep.state.c.values()[i] - s.c.values()[i] - dt * (p.d_c * lap.values()[i] + r);
            assert!(resid.abs() < 1e-8);
        }
        for f in [&rep.state.c, &rep.state.phi] {
            assert!(f.min() >= -1e-8 && f.max() <= 1.0 + 1e-8);
        }
    }

    #[test]
    fn run_zero_time_and_determinism() {
        let p = ModelParams::default();
        let g = Grid::line(16, 1.0).unwrap();
        let s = random_state(g, 21);
        let traj = run(
            &s,
            &p,
            &SourceSpec::free(),
            &StepControls::explicit(1e-4, 0.0),
            None,
        )
        .unwrap();
        assert_eq!(traj.snapshots.len(), 1);
        assert_eq!(traj.diagnostics.len(), 1);

        let dt = cfl_limits(&p, &g, 2.0).unwrap();
        let controls = StepControls {
            snapshot_every: 7,
            ..StepControls::explicit(dt, 50.5 * dt)
        };
        let a = run(&s, &p, &SourceSpec::free(), &controls, None).unwrap();
        let b = run(&s, &p, &SourceSpec::free(), &controls, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.diagnostics.len(), 52);
        assert_eq!(a.t_end(), 50.5 * dt);
        assert!(a.diagnostics.windows(2).all(|w| w[1].t > w[0].t));
        let steps: Vec<usize> = a.snapshots.iter().map(|s| s.step).collect();
        assert_eq!(steps, vec![0, 7, 14, 21, 28, 35, 42, 49, 51]);
    }

    #[test]
    fn run_rejects_oversized_explicit_step() {
        let p = ModelParams::default();
        let g = Grid::line(64, 1.0).unwrap();
        let s = random_state(g, 2);
        let err = run(
            &s,
            &p,
            &SourceSpec::free(),
            &StepControls::explicit(1.0, 1.0),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::CflViolation { .. }));
    }

    #[test]
    fn positivity_loss_is_reported_with_cell_and_step() {
        let p = ModelParams::default();
        let g = Grid::line(8, 1.0).unwrap();
        let s = State::homogeneous(g, 0.01, 0.5, 0.5);
        let src = SourceSpec {
            h_ext: HeatSource::Constant(-5.0),
            c0: 5.0,
            s_sup: 5.0,
        };
        let dt = cfl_limits(&p, &g, 1.0).unwrap();
        let err = run(&s, &p, &src, &StepControls::explicit(dt, 1.0), None).unwrap_err();
        assert!(err.step().is_some());
        assert!(
            matches!(err, Error::AtStep { ref source, .. } if matches!(**source, Error::PositivityLoss { .. }))
        );
    }

    #[test]
    fn diagnostics_csv_layout() {
        let p = ModelParams::default();
        let g = Grid::line(8, 1.0).unwrap();
        let s = random_state(g, 3);
        let traj = run(
            &s,
            &p,
            &SourceSpec::free(),
            &StepControls::explicit(1e-3, 2e-3),
            None,
        )
        .unwrap();
        let csv = traj.diagnostics_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,theta_min,theta_max,c_min,c_max,phi_min,phi_max,Q,E"
        );
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 9);
        assert_eq!(row[8], "");
    }
}
