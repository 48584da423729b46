//! Perturbations around a homogeneous equilibrium, the relative energy
//! functional, two-sided coercivity bounds, a Lipschitz bound for the
//! reaction term and exponential-decay fitting of energy series.

use std::fmt;

use crate::equilibrium::EquilibriumState;
use crate::error::{Error, Result};
use crate::grid::{check_same_grid, Field, State};
use crate::model::{
    potential, potential_inflections, potential_prime, potential_second, ModelParams,
};
use crate::solver::Trajectory;

/// Per-step relative slack when counting non-increasing energy steps.
pub const MONOTONE_SLACK: f64 = 1e-12;

/// Deviations `(theta - theta_bar, c - c_bar, phi - phi_bar)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationState {
    pub u: Field,
    pub v: Field,
    pub w: Field,
}

impl PerturbationState {
    pub fn new(u: Field, v: Field, w: Field) -> Result<Self> {
        check_same_grid(&u, &v)?;
        check_same_grid(&u, &w)?;
        Ok(PerturbationState { u, v, w })
    }

    pub fn from_state(state: &State, eq: &EquilibriumState) -> Self {
        PerturbationState {
            u: state.theta.map(|x| x - eq.theta_bar),
            v: state.c.map(|x| x - eq.c_bar),
            w: state.phi.map(|x| x - eq.phi_bar),
        }
    }

    /// `||u||^2 + ||v||^2 + ||w||_{H1}^2`.
    pub fn norm_sq(&self) -> f64 {
        self.u.norm_sq() + self.v.norm_sq() + self.w.norm_sq() + self.w.grad_norm_sq()
    }
}

/// Residual potential `G(z) = F(phi_bar + z) - F(phi_bar) - F'(phi_bar) z`.
pub fn eval_g(z: f64, phi_bar: f64) -> f64 {
    potential(phi_bar + z) - potential(phi_bar) - potential_prime(phi_bar) * z
}

/// The seven summands of the relative energy.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyParts {
    /// `rho c_p / 2 ||u||^2`
    pub thermal: f64,
    /// `1/2 ||v||^2`
    pub chemical: f64,
    /// `tau_phi / 2 ||w||^2`
    pub phase: f64,
    /// `eps^2 / 2 ||grad w||^2`
    pub gradient: f64,
    /// `int G(w)`
    pub potential: f64,
    /// `-alpha L_c int u v`
    pub cross_chemical: f64,
    /// `-alpha L_phi int u w`
    pub cross_phase: f64,
}

impl EnergyParts {
    pub fn total(&self) -> f64 {
        self.thermal
            + self.chemical
            + self.phase
            + self.gradient
            + self.potential
            + self.cross_chemical
            + self.cross_phase
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub energy: f64,
    pub parts: EnergyParts,
    pub coercive: Option<bool>,
    pub kappa_fit: Option<f64>,
    pub fit_window: Option<(f64, f64)>,
}

/// Relative energy of a perturbation.
pub fn eval_energy(
    pert: &PerturbationState,
    p: &ModelParams,
    eq: &EquilibriumState,
) -> Result<EnergyReport> {
    check_same_grid(&pert.u, &pert.v)?;
    check_same_grid(&pert.u, &pert.w)?;
    let g_field = pert.w.map(|z| eval_g(z, eq.phi_bar));
    let parts = EnergyParts {
        thermal: 0.5 * p.heat_capacity() * pert.u.norm_sq(),
        chemical: 0.5 * pert.v.norm_sq(),
        phase: 0.5 * p.tau_phi * pert.w.norm_sq(),
        gradient: 0.5 * p.eps_interface * p.eps_interface * pert.w.grad_norm_sq(),
        potential: g_field.integrate(),
        cross_chemical: -p.alpha * p.l_c * pert.u.dot(&pert.v)?,
        cross_phase: -p.alpha * p.l_phi * pert.u.dot(&pert.w)?,
    };
    Ok(EnergyReport {
        energy: parts.total(),
        parts,
        coercive: None,
        kappa_fit: None,
        fit_window: None,
    })
}

pub(crate) fn state_energy(state: &State, p: &ModelParams, eq: &EquilibriumState) -> EnergyReport {
    eval_energy(&PerturbationState::from_state(state, eq), p, eq)
        .expect("state fields share one grid")
}

/// Distance from `phi_bar` to the nearest inflection of `F`; inside this
/// radius the residual potential is locally convex.
pub fn convexity_radius(phi_bar: f64) -> f64 {
    let (a, b) = potential_inflections();
    (phi_bar - a).abs().min((phi_bar - b).abs())
}

/// Range of `F''/2` over `[lo, hi]` (quadratic in phi, so endpoints and the
/// vertex suffice).
fn half_curvature_range(lo: f64, hi: f64) -> (f64, f64) {
    let mut pts = vec![lo, hi];
    if lo < 0.5 && 0.5 < hi {
        pts.push(0.5);
    }
    let vals: Vec<f64> = pts.iter().map(|&x| 0.5 * potential_second(x)).collect();
    (
        vals.iter().copied().fold(f64::INFINITY, f64::min),
        vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    )
}

/// Outcome of the two-sided bound `C1 N <= E <= C2 N`,
/// `N = ||u||^2 + ||v||^2 + ||w||_{H1}^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoercivityCheck {
    pub c1: f64,
    pub c2: f64,
    pub energy: f64,
    pub norm_sq: f64,
    pub lower_holds: bool,
    pub upper_holds: bool,
    /// `min(E - C1 N, C2 N - E)`; nonnegative when both bounds hold.
    pub margin: f64,
    /// `alpha >= alpha0`: the lemma's hypotheses are not met.
    pub alpha_warning: bool,
    /// Young weight splitting `rho c_p / 2` between the two cross terms.
    pub young_weight: f64,
    /// Bounds used for `G(z) / z^2` on the observed range.
    pub g_bounds: (f64, f64),
}

impl CoercivityCheck {
    pub fn holds(&self) -> bool {
        self.c1 > 0.0 && self.lower_holds && self.upper_holds
    }
}

/// Evaluate both sides of the coercivity estimate.
///
/// Each cross term is split by Young's inequality,
/// `|a u v| <= (s rho c_p / 4) u^2 + a^2 / (s rho c_p) v^2`, with one weight
/// `s in (s_min, 1)` shared by both; `G` is bracketed by `F''/2` over the
/// observed phase range (capped below by `m_f`).
pub fn check_coercivity(
    pert: &PerturbationState,
    p: &ModelParams,
    eq: &EquilibriumState,
    m_f: f64,
) -> Result<CoercivityCheck> {
    if !(m_f > 0.0) {
        return Err(Error::domain(format!("m_F must be > 0, got {m_f}")));
    }
    let report = eval_energy(pert, p, eq)?;
    let energy = report.energy;
    let norm_sq = pert.norm_sq();

    let lo = eq.phi_bar + pert.w.min().min(0.0);
    let hi = eq.phi_bar + pert.w.max().max(0.0);
    let (curv_lo, curv_hi) = half_curvature_range(lo, hi);
    let g_lo = m_f.min(curv_lo);
    let g_hi = curv_hi;

    let rc = p.heat_capacity();
    let a_c = p.alpha * p.l_c;
    let a_phi = p.alpha * p.l_phi;
    let eps2 = p.eps_interface * p.eps_interface;
    let w_room = p.tau_phi + 2.0 * g_lo;

    let (weight, c1, c2) = if a_c == 0.0 && a_phi == 0.0 {
        let c1 = (0.5 * rc).min(0.5).min(0.5 * w_room).min(0.5 * eps2);
        let c2 = (0.5 * rc)
            .max(0.5)
            .max(0.5 * p.tau_phi + g_hi)
            .max(0.5 * eps2);
        (0.0, c1, c2)
    } else {
        let s_min = (2.0 * a_c * a_c / rc).max(if w_room > 0.0 {
            2.0 * a_phi * a_phi / (rc * w_room)
        } else {
            f64::INFINITY
        });
        if s_min >= 1.0 {
            // cross terms cannot be absorbed
            let s = 1.0;
            let c2 = (rc)
                .max(0.5 + a_c * a_c / (s * rc))
                .max(0.5 * p.tau_phi + g_hi + a_phi * a_phi / (s * rc))
                .max(0.5 * eps2);
            (s, 0.0, c2)
        } else {
            let s = 0.5 * (1.0 + s_min);
            let young = |a: f64| a * a / (s * rc);
            let c1 = (0.5 * rc * (1.0 - s))
                .min(0.5 - young(a_c))
                .min(0.5 * p.tau_phi + g_lo - young(a_phi))
                .min(0.5 * eps2);
            let c2 = (0.5 * rc * (1.0 + s))
                .max(0.5 + young(a_c))
                .max(0.5 * p.tau_phi + g_hi + young(a_phi))
                .max(0.5 * eps2);
            (s, c1, c2)
        }
    };

    let alpha0 = crate::model::coupling_threshold(p, m_f)?;
    // roundoff slack for the sums of squares
    let slack = 1e-12 * (energy.abs() + c2 * norm_sq);
    let lower_gap = energy - c1 * norm_sq;
    let upper_gap = c2 * norm_sq - energy;
    Ok(CoercivityCheck {
        c1,
        c2,
        energy,
        norm_sq,
        lower_holds: lower_gap >= -slack,
        upper_holds: upper_gap >= -slack,
        margin: lower_gap.min(upper_gap),
        alpha_warning: !alpha0.exceeds(p.alpha),
        young_weight: weight,
        g_bounds: (g_lo, g_hi),
    })
}

fn reaction_partials(theta: f64, c: f64, p: &ModelParams) -> Result<(f64, f64)> {
    let kd = p.k_d(theta)?;
    let kr = p.k_r(theta)?;
    let dkd = kd * p.e_d / (p.r_gas * theta * theta);
    let dkr = kr * p.e_r / (p.r_gas * theta * theta);
    let d_theta = -p.beta * dkd * c + p.gamma * dkr * (1.0 - c);
    let d_c = -(p.beta * kd + p.gamma * kr);
    Ok((d_theta, d_c))
}

const LIPSCHITZ_SCAN: usize = 512;

/// Lipschitz constant of the reaction term on `[theta_lo, theta_hi] x [0, 1]`
/// in the sense `|R(x1) - R(x2)| <= L (|dtheta| + |dc|)`, from the closed-form
/// partials on a tensor scan refined once around the argmax.
pub fn estimate_lipschitz_r(theta_lo: f64, theta_hi: f64, p: &ModelParams) -> Result<f64> {
    if !(theta_lo > 0.0) {
        return Err(Error::domain(format!(
            "theta_lo must be > 0, got {theta_lo}"
        )));
    }
    if !(theta_hi >= theta_lo) {
        return Err(Error::domain(format!(
            "theta_hi={theta_hi} < theta_lo={theta_lo}"
        )));
    }
    let n = LIPSCHITZ_SCAN;
    let scan = |lo: f64, hi: f64| -> Result<(f64, usize)> {
        let mut best = (0.0f64, 0usize);
        for i in 0..n {
            let theta = if n == 1 {
                lo
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            };
            for j in 0..n {
                let c = j as f64 / (n - 1) as f64;
                let (dt, dc) = reaction_partials(theta, c, p)?;
                let v = dt.abs().max(dc.abs());
                if v > best.0 {
                    best = (v, i);
                }
            }
        }
        Ok(best)
    };
    let (coarse, idx) = scan(theta_lo, theta_hi)?;
    let step = (theta_hi - theta_lo) / (n - 1) as f64;
    let lo = (theta_lo + step * idx.saturating_sub(1) as f64).max(theta_lo);
    let hi = (theta_lo + step * (idx + 1) as f64).min(theta_hi);
    let (fine, _) = scan(lo, hi)?;
    Ok(coarse.max(fine))
}

/// Least-squares exponential fit of an energy series.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    pub kappa: f64,
    pub r2: f64,
    pub monotone_fraction: f64,
    pub window: (f64, f64),
    pub points: usize,
}

impl fmt::Display for DecayFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "kappa_fit={} r2={} monotone_frac={}",
            self.kappa, self.r2, self.monotone_fraction
        )
    }
}

/// Share of consecutive steps with `E(n+1) <= E(n) (1 + MONOTONE_SLACK)`.
pub fn monotone_fraction(series: &[(f64, f64)]) -> f64 {
    if series.len() < 2 {
        return 1.0;
    }
    let ok = series
        .windows(2)
        .filter(|w| w[1].1 <= w[0].1 * (1.0 + MONOTONE_SLACK))
        .count();
    ok as f64 / (series.len() - 1) as f64
}

/// Fit `log E = a - kappa t` over the middle 80% of the time span.
pub fn fit_decay_series(series: &[(f64, f64)]) -> Result<DecayFit> {
    let (t_first, t_last) = match (series.first(), series.last()) {
        (Some(a), Some(b)) if b.0 > a.0 => (a.0, b.0),
        _ => return Err(Error::Fit("energy series spans no time".into())),
    };
    let span = t_last - t_first;
    let window = (t_first + 0.1 * span, t_first + 0.9 * span);
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(t, _)| *t >= window.0 && *t <= window.1)
        .copied()
        .collect();
    if pts.len() < 2 {
        return Err(Error::Fit(format!(
            "only {} points in the fit window",
            pts.len()
        )));
    }
    if let Some(&(t, e)) = pts.iter().find(|(_, e)| !(*e > 0.0)) {
        return Err(Error::Fit(format!("nonpositive energy {e} at t={t}")));
    }
    let n = pts.len() as f64;
    let ys: Vec<f64> = pts.iter().map(|(_, e)| e.ln()).collect();
    let t_mean = pts.iter().map(|(t, _)| t).sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let mut stt = 0.0;
    let mut sty = 0.0;
    let mut syy = 0.0;
    for ((t, _), y) in pts.iter().zip(&ys) {
        let dt = t - t_mean;
        let dy = y - y_mean;
        stt += dt * dt;
        sty += dt * dy;
        syy += dy * dy;
    }
    let slope = sty / stt;
    let intercept = y_mean - slope * t_mean;
    let ss_res: f64 = pts
        .iter()
        .zip(&ys)
        .map(|((t, _), y)| (y - intercept - slope * t).powi(2))
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(DecayFit {
        kappa: -slope,
        r2,
        monotone_fraction: monotone_fraction(series),
        window,
        points: pts.len(),
    })
}

/// Fit the decay rate of a trajectory's attached energy series.
pub fn fit_decay_rate(traj: &Trajectory) -> Result<DecayFit> {
    let series = traj.energy_series().ok_or_else(|| {
        Error::Fit("trajectory carries no energy series (no equilibrium attached)".into())
    })?;
    fit_decay_series(&series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::build_equilibrium;
    use crate::grid::Grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn eq_at_zero() -> (ModelParams, EquilibriumState) {
        let p = ModelParams {
            gamma: 0.0,
            ..ModelParams::default()
        };
        let eq = build_equilibrium(1.0, &p).unwrap();
        assert_eq!((eq.c_bar, eq.phi_bar), (0.0, 0.0));
        (p, eq)
    }

    fn zero_pert(g: Grid) -> PerturbationState {
        let z = Field::constant(g, 0.0);
        PerturbationState::new(z.clone(), z.clone(), z).unwrap()
    }

    #[test]
    fn residual_potential_properties() {
        for phi_bar in [0.0, 0.1, 0.9, 1.0] {
            assert_eq!(eval_g(0.0, phi_bar), 0.0);
            let h = 1e-5;
            let d = (eval_g(h, phi_bar) - eval_g(-h, phi_bar)) / (2.0 * h);
            assert!(d.abs() < 1e-9);
        }
        let z = 1e-4;
        assert!((eval_g(z, 0.0) / (z * z) - 0.25).abs() < 1e-3);
    }

    #[test]
    fn energy_of_zero_perturbation() {
        let (p, eq) = eq_at_zero();
        let g = Grid::line(12, 1.0).unwrap();
        let r = eval_energy(&zero_pert(g), &p, &eq).unwrap();
        assert_eq!(r.energy, 0.0);
        assert_eq!(r.parts, EnergyParts::default());
    }

    #[test]
    fn energy_single_thermal_term() {
        let (p, eq) = eq_at_zero();
        let g = Grid::line(12, 1.0).unwrap();
        let mut pert = zero_pert(g);
        pert.u = Field::from_fn(g, |x| (3.0 * x[0]).sin());
        let r = eval_energy(&pert, &p, &eq).unwrap();
        assert_eq!(r.energy, 0.5 * p.heat_capacity() * pert.u.norm_sq());
    }

    #[test]
    fn energy_homogeneous_phase_offset() {
        let (p, eq) = eq_at_zero();
        let g = Grid::line(10, 2.5).unwrap();
        let delta = 0.03;
        let mut pert = zero_pert(g);
        pert.w = Field::constant(g, delta);
        let r = eval_energy(&pert, &p, &eq).unwrap();
        let vol = 2.5;
        let g_delta = potential(delta) - potential(0.0);
        assert_eq!(g_delta, eval_g(delta, 0.0));
        let expected = 0.5 * p.tau_phi * delta * delta * vol + g_delta * vol;
        assert!((r.energy - expected).abs() < 1e-15);
        assert_eq!(r.parts.gradient, 0.0);
    }

    #[test]
    fn energy_parts_sum_and_continuity() {
        let p = ModelParams {
            alpha: 0.2,
            ..ModelParams::default()
        };
        let eq = build_equilibrium(1.0, &p).unwrap();
        let g = Grid::rect(6, 5, 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut rnd = || {
            Field::new(
                g,
                (0..g.len()).map(|_| rng.gen_range(-0.01..0.01)).collect(),
            )
            .unwrap()
        };
        let pert = PerturbationState::new(rnd(), rnd(), rnd()).unwrap();
        let r = eval_energy(&pert, &p, &eq).unwrap();
        assert!((r.energy - r.parts.total()).abs() <= 1e-18);

        let mut bumped = pert.clone();
        let delta = 1e-7;
        bumped.u.values_mut()[3] += delta;
        let r2 = eval_energy(&bumped, &p, &eq).unwrap();
        assert!((r2.energy - r.energy).abs() < 1e-7);
    }

    #[test]
    fn young_cross_term_bound() {
        let p = ModelParams {
            alpha: 0.7,
            l_c: 2.0,
            ..ModelParams::default()
        };
        let g = Grid::line(30, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let u = Field::new(g, (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let v = Field::new(g, (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let lhs = (p.alpha * p.l_c * u.dot(&v).unwrap()).abs();
            let rc = p.heat_capacity();
            let rhs = rc / 4.0 * u.norm_sq() + (p.alpha * p.l_c).powi(2) / rc * v.norm_sq();
            assert!(lhs <= rhs * (1.0 + 1e-14));
        }
    }

    #[test]
    fn coercivity_zero_perturbation_and_uncoupled() {
        let p = ModelParams::default();
        let eq = build_equilibrium(1.0, &p).unwrap();
        assert!(eq.stable);
        let g = Grid::line(16, 1.0).unwrap();
        let chk = check_coercivity(&zero_pert(g), &p, &eq, eq.default_m_f()).unwrap();
        assert!(chk.holds());
        assert_eq!(chk.energy, 0.0);

        // alpha = 0: diagonal comparison
        let delta0 = convexity_radius(eq.phi_bar);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let mut f =
                |a: f64| Field::new(g, (0..16).map(|_| rng.gen_range(-a..a)).collect()).unwrap();
            let pert = PerturbationState::new(f(1.0), f(1.0), f(0.5 * delta0)).unwrap();
            let chk = check_coercivity(&pert, &p, &eq, eq.default_m_f()).unwrap();
            assert!(chk.holds(), "{chk:?}");
            assert_eq!(chk.young_weight, 0.0);
            assert!(!chk.alpha_warning);
        }
    }

    /// Smallest eigenvalue of a symmetric 3x3 matrix (trigonometric formula).
    fn min_eig3(m: [[f64; 3]; 3]) -> f64 {
        let p1 = m[0][1].powi(2) + m[0][2].powi(2) + m[1][2].powi(2);
        let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
        let p2 = (0..3).map(|i| (m[i][i] - q).powi(2)).sum::<f64>() + 2.0 * p1;
        let pp = (p2 / 6.0).sqrt();
        let mut b = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                b[i][j] = (m[i][j] - if i == j { q } else { 0.0 }) / pp;
            }
        }
        let det = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
            - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
            + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
        let r = (det / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        q + 2.0 * pp * (phi + 2.0 * std::f64::consts::PI / 3.0).cos()
    }

    #[test]
    fn coercivity_loses_positivity_with_strong_coupling() {
        // strong diffusion so the two Young terms of alpha0 bind
        let base = ModelParams {
            d_c: 100.0,
            eps_interface: 3.0,
            k_lo: 1.0,
            k_hi: 1.0,
            ..ModelParams::default()
        };
        let eq = build_equilibrium(1.0, &base).unwrap();
        let m_f = eq.default_m_f();
        let alpha0 = crate::model::coupling_threshold(&base, m_f)
            .unwrap()
            .finite()
            .unwrap();
        let g = Grid::line(8, 1.0).unwrap();

        let quad = |alpha: f64| {
            let rc = base.heat_capacity();
            [
                [0.5 * rc, -0.5 * alpha * base.l_c, -0.5 * alpha * base.l_phi],
                [-0.5 * alpha * base.l_c, 0.5, 0.0],
                [-0.5 * alpha * base.l_phi, 0.0, 0.5 * base.tau_phi + m_f],
            ]
        };
        // below alpha0 the homogeneous quadratic form is positive definite
        for k in 0..50 {
            let alpha = alpha0 * k as f64 / 50.0;
            assert!(min_eig3(quad(alpha)) > 0.0);
        }
        let mut lost = None;
        for k in 1..=400 {
            let alpha = alpha0 * 10.0 * k as f64 / 400.0;
            if min_eig3(quad(alpha)) < 0.0 {
                lost = Some(alpha);
                break;
            }
        }
        let alpha_lost = lost.expect("form loses positivity below 10 alpha0");
        assert!(alpha_lost > alpha0);

        let p = ModelParams {
            alpha: 10.0 * alpha0,
            ..base.clone()
        };
        let u = Field::constant(g, 0.01);
        let pert = PerturbationState::new(u.clone(), u, Field::constant(g, 0.0)).unwrap();
        let chk = check_coercivity(&pert, &p, &eq, m_f).unwrap();
        assert!(chk.alpha_warning);
        assert!(!chk.holds());
        assert!(chk.energy < 0.0);

        let p = ModelParams {
            alpha: 0.99 * alpha0,
            ..base
        };
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut f = |a: f64| Field::new(g, (0..8).map(|_| rng.gen_range(-a..a)).collect()).unwrap();
        let pert = PerturbationState::new(f(0.01), f(0.01), f(0.01)).unwrap();
        let chk = check_coercivity(&pert, &p, &eq, m_f).unwrap();
        assert!(!chk.alpha_warning);
        assert!(chk.holds(), "{chk:?}");
    }

    #[test]
    fn lipschitz_special_cases() {
        let p = ModelParams {
            a_d: 0.0,
            a_r: 0.0,
            ..ModelParams::default()
        };
        assert_eq!(estimate_lipschitz_r(0.5, 2.0, &p).unwrap(), 0.0);

        let p = ModelParams {
            e_d: 0.0,
            e_r: 0.0,
            beta: 0.3,
            gamma: 0.9,
            a_d: 2.0,
            a_r: 5.0,
            ..ModelParams::default()
        };
        let l = estimate_lipschitz_r(0.5, 2.0, &p).unwrap();
        assert!((l - (0.3 * 2.0 + 0.9 * 5.0)).abs() < 1e-14);

        let p = ModelParams::default();
        let wide = estimate_lipschitz_r(0.2, 3.0, &p).unwrap();
        let narrow = estimate_lipschitz_r(1.0, 1.0, &p).unwrap();
        assert!(narrow <= wide);
        assert!(estimate_lipschitz_r(0.0, 1.0, &p).is_err());
    }

    #[test]
    fn fit_synthetic_series() {
        let series: Vec<(f64, f64)> = (0..=200)
            .map(|k| {
                let t = k as f64 * 0.01;
                (t, 2.0 * (-3.0 * t).exp())
            })
            .collect();
        let fit = fit_decay_series(&series).unwrap();
        assert!((fit.kappa - 3.0).abs() < 1e-10);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        assert_eq!(fit.monotone_fraction, 1.0);
        assert!(fit.to_string().starts_with("kappa_fit=3"));

        let flat: Vec<(f64, f64)> = (0..50).map(|k| (k as f64, 4.0)).collect();
        let fit = fit_decay_series(&flat).unwrap();
        assert_eq!(fit.kappa, 0.0);

        let bad: Vec<(f64, f64)> = (0..50).map(|k| (k as f64, 1.0 - k as f64 * 0.05)).collect();
        assert!(matches!(fit_decay_series(&bad), Err(Error::Fit(_))));
    }
}
