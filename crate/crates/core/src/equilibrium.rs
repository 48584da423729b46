//! Homogeneous stationary states `(theta_bar, c_bar, phi_bar)`.
//!
//! `c_bar` is the root of the affine reaction balance; `phi_bar` is a root in
//! `[0, 1]` of the cubic `F'(phi) + lambda (phi - c_bar)`. Roots are bracketed
//! on a fine partition, bisected, then Newton-polished.

use crate::error::{Error, Result};
use crate::model::{potential_prime, potential_second, ModelParams};

/// Residual tolerance for the stationary relations.
pub const EQUILIBRIUM_TOL: f64 = 1e-10;

const SCAN_INTERVALS: usize = 2048;
const BISECTION_WIDTH: f64 = 1e-3;
const NEWTON_RESIDUAL: f64 = 1e-12;

/// A root of the phase balance together with the potential curvature there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseRoot {
    pub phi: f64,
    pub curvature: f64,
}

impl PhaseRoot {
    pub fn is_stable(&self) -> bool {
        self.curvature > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumState {
    pub theta_bar: f64,
    pub c_bar: f64,
    pub phi_bar: f64,
    pub residual_c: f64,
    pub residual_phi: f64,
    pub f_second_at_phibar: f64,
    pub stable: bool,
    /// Every root found in `[0, 1]`, ascending, including the selected one.
    pub roots: Vec<PhaseRoot>,
}

impl EquilibriumState {
    /// Roots other than the selected one.
    pub fn alternates(&self) -> impl Iterator<Item = &PhaseRoot> {
        self.roots.iter().filter(move |r| r.phi != self.phi_bar)
    }

    /// Default lower curvature constant for the residual potential near
    /// `phi_bar`: `G(z) ~ F''(phi_bar) z^2 / 2`.
    pub fn default_m_f(&self) -> f64 {
        0.5 * self.f_second_at_phibar
    }
}

/// `c_bar = gamma K_r / (beta K_d + gamma K_r)` at `theta_bar`.
pub fn solve_cbar(theta_bar: f64, p: &ModelParams) -> Result<f64> {
    let decol = p.beta * p.k_d(theta_bar)?;
    let recol = p.gamma * p.k_r(theta_bar)?;
    let den = decol + recol;
    if !(den > 0.0) {
        return Err(Error::DegenerateEquilibrium { theta_bar });
    }
    Ok((recol / den).clamp(0.0, 1.0))
}

/// Phase balance `F'(phi) + lambda (phi - c_bar)`; equal to the monic cubic
/// `phi^3 - 3/2 phi^2 + (1/2 + lambda) phi - lambda c_bar` but exact at the
/// trivial roots `0`, `1/2`, `1`.
pub fn phase_balance(phi: f64, c_bar: f64, lambda: f64) -> f64 {
    potential_prime(phi) + lambda * (phi - c_bar)
}

fn phase_balance_slope(phi: f64, lambda: f64) -> f64 {
    potential_second(phi) + lambda
}

/// All real roots of the monic cubic `x^3 + a x^2 + b x + c`, ascending.
pub fn real_cubic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    // depressed cubic t^3 + p t + q with x = t - a/3
    let shift = a / 3.0;
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    let mut roots = if disc > 0.0 {
        let s = disc.sqrt();
        vec![(-q / 2.0 + s).cbrt() + (-q / 2.0 - s).cbrt() - shift]
    } else if p == 0.0 {
        vec![-shift]
    } else {
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
        let theta = arg.acos() / 3.0;
        (0..3)
            .map(|k| m * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() - shift)
            .collect()
    };
    roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
    roots
}

fn polish(mut x: f64, lo: f64, hi: f64, c_bar: f64, lambda: f64) -> f64 {
    for _ in 0..50 {
        let g = phase_balance(x, c_bar, lambda);
        if g.abs() <= NEWTON_RESIDUAL * 1e-3 {
            break;
        }
        let dg = phase_balance_slope(x, lambda);
        if dg == 0.0 {
            break;
        }
        let next = x - g / dg;
        // safeguard: stay inside the bracket
        let next = if next < lo || next > hi {
            0.5 * (x + next.clamp(lo, hi))
        } else {
            next
        };
        if next == x {
            break;
        }
        x = next;
    }
    x
}

fn bisect(mut lo: f64, mut hi: f64, c_bar: f64, lambda: f64) -> (f64, f64) {
    let mut g_lo = phase_balance(lo, c_bar, lambda);
    while hi - lo > BISECTION_WIDTH {
        let mid = 0.5 * (lo + hi);
        let g_mid = phase_balance(mid, c_bar, lambda);
        if g_mid == 0.0 {
            return (mid, mid);
        }
        if (g_mid < 0.0) == (g_lo < 0.0) {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
        }
    }
    (lo, hi)
}

/// All roots of the phase balance in `[0, 1]`, ascending.
pub fn solve_phibar(c_bar: f64, lambda: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&c_bar) {
        return Err(Error::domain(format!(
            "c_bar must lie in [0,1], got {c_bar}"
        )));
    }
    if !(lambda > 0.0) {
        return Err(Error::domain(format!("lambda must be > 0, got {lambda}")));
    }
    let node = |i: usize| i as f64 / SCAN_INTERVALS as f64;
    let mut found: Vec<f64> = Vec::new();
    let push = |r: f64, found: &mut Vec<f64>| {
        if !found.iter().any(|&f| (f - r).abs() < 1e-9) {
            found.push(r);
        }
    };

    for i in 0..SCAN_INTERVALS {
        let (a, b) = (node(i), node(i + 1));
        let (ga, gb) = (
            phase_balance(a, c_bar, lambda),
            phase_balance(b, c_bar, lambda),
        );
        if ga == 0.0 {
            push(a, &mut found);
        }
        if gb == 0.0 {
            push(b, &mut found);
        }
        if ga != 0.0 && gb != 0.0 && (ga < 0.0) != (gb < 0.0) {
            let (lo, hi) = bisect(a, b, c_bar, lambda);
            push(polish(0.5 * (lo + hi), a, b, c_bar, lambda), &mut found);
        }
    }

    // tangential (double) roots do not change sign; test the cubic's critical points
    let disc = 9.0 - 12.0 * (0.5 + lambda);
    if disc >= 0.0 {
        for crit in [(3.0 - disc.sqrt()) / 6.0, (3.0 + disc.sqrt()) / 6.0] {
            if (0.0..=1.0).contains(&crit)
                && phase_balance(crit, c_bar, lambda).abs() <= NEWTON_RESIDUAL
            {
                push(crit, &mut found);
            }
        }
    }

    if found.is_empty() {
        return Err(Error::RootNotFound {
            real_roots: real_cubic_roots(-1.5, 0.5 + lambda, -lambda * c_bar),
        });
    }
    found.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(found)
}

/// Compose `c_bar` and `phi_bar` at `theta_bar` and select the preferred root:
/// stable roots first, then largest `F''`, then nearest to `c_bar`.
pub fn build_equilibrium(theta_bar: f64, p: &ModelParams) -> Result<EquilibriumState> {
    if !(theta_bar > 0.0) {
        return Err(Error::domain(format!(
            "theta_bar must be > 0, got {theta_bar}"
        )));
    }
    let c_bar = solve_cbar(theta_bar, p)?;
    let roots: Vec<PhaseRoot> = solve_phibar(c_bar, p.lambda_cpl)?
        .into_iter()
        .map(|phi| PhaseRoot {
            phi,
            curvature: potential_second(phi),
        })
        .collect();

    let chosen = *roots
        .iter()
        .max_by(|a, b| {
            a.is_stable()
                .cmp(&b.is_stable())
                .then_with(|| {
                    if (a.curvature - b.curvature).abs() <= 1e-12 {
                        std::cmp::Ordering::Equal
                    } else {
                        a.curvature.partial_cmp(&b.curvature).unwrap()
                    }
                })
                .then_with(|| {
                    (b.phi - c_bar)
                        .abs()
                        .partial_cmp(&(a.phi - c_bar).abs())
                        .unwrap()
                })
        })
        .expect("solve_phibar returns at least one root");

    let residual_c = p.reaction(theta_bar, c_bar)?;
    let residual_phi = potential_prime(chosen.phi) - p.lambda_cpl * (c_bar - chosen.phi);
    Ok(EquilibriumState {
        theta_bar,
        c_bar,
        phi_bar: chosen.phi,
        residual_c,
        residual_phi,
        f_second_at_phibar: chosen.curvature,
        stable: chosen.is_stable(),
        roots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> ModelParams {
        ModelParams::default()
    }

    #[test]
    fn cbar_special_cases() {
        // beta K_d = gamma K_r when the rates coincide
        let p = ModelParams {
            e_d: 2.0,
            e_r: 2.0,
            a_d: 1.0,
            a_r: 1.0,
            beta: 0.3,
            gamma: 0.3,
            ..params()
        };
        assert_eq!(solve_cbar(1.0, &p).unwrap(), 0.5);

        let only_recol = ModelParams {
            beta: 0.0,
            ..params()
        };
        assert_eq!(solve_cbar(1.0, &only_recol).unwrap(), 1.0);
        let only_decol = ModelParams {
            gamma: 0.0,
            ..params()
        };
        assert_eq!(solve_cbar(1.0, &only_decol).unwrap(), 0.0);

        let degenerate = ModelParams {
            beta: 0.0,
            gamma: 0.0,
            ..params()
        };
        assert!(matches!(
            solve_cbar(1.0, &degenerate),
            Err(Error::DegenerateEquilibrium { .. })
        ));
    }

    #[test]
    fn phibar_trivial_roots() {
        for lambda in [0.05, 0.2, 1.0, 5.0] {
            assert!(solve_phibar(0.0, lambda).unwrap().contains(&0.0));
            assert!(solve_phibar(1.0, lambda).unwrap().contains(&1.0));
            let half = solve_phibar(0.5, lambda).unwrap();
            assert!(half.iter().any(|&r| (r - 0.5).abs() < 1e-12));
        }
        assert_eq!(potential_second(0.5), -0.25);
    }

    #[test]
    fn phibar_input_errors() {
        assert!(solve_phibar(1.2, 1.0).is_err());
        assert!(solve_phibar(0.5, 0.0).is_err());
    }

    #[test]
    fn cubic_closed_form_matches_balance() {
        for &(c_bar, lambda) in &[(0.3, 0.05), (0.5, 0.01), (0.9, 2.0)] {
            let roots = real_cubic_roots(-1.5, 0.5 + lambda, -lambda * c_bar);
            for r in roots {
                assert!(phase_balance(r, c_bar, lambda).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn equilibrium_pure_phases() {
        let p = ModelParams {
            beta: 0.0,
            ..params()
        };
        let eq = build_equilibrium(1.3, &p).unwrap();
        assert_eq!((eq.c_bar, eq.phi_bar), (1.0, 1.0));
        assert_eq!(eq.residual_c, 0.0);
        assert_eq!(eq.residual_phi, 0.0);
        assert!(eq.stable);
        assert_eq!(eq.f_second_at_phibar, 0.5);

        let p = ModelParams {
            gamma: 0.0,
            ..params()
        };
        let eq = build_equilibrium(1.3, &p).unwrap();
        assert_eq!((eq.c_bar, eq.phi_bar), (0.0, 0.0));
        assert!(eq.stable);

        let p = ModelParams {
            beta: 0.0,
            gamma: 0.0,
            ..params()
        };
        assert!(matches!(
            build_equilibrium(1.3, &p),
            Err(Error::DegenerateEquilibrium { .. })
        ));
    }

    #[test]
    fn multiple_roots_prefer_stable_largest_curvature() {
        // weak relaxation: three roots near 0, 1/2, 1 for c_bar = 1/2
        let p = ModelParams {
            lambda_cpl: 0.01,
            e_d: 1.0,
            e_r: 1.0,
            ..params()
        };
        let eq = build_equilibrium(1.0, &p).unwrap();
        assert_eq!(eq.roots.len(), 3);
        assert!(eq.stable);
        assert_eq!(eq.alternates().count(), 2);
        // symmetric outer roots share the curvature; the tie goes to the root nearest c_bar
        let outer: Vec<_> = eq.roots.iter().filter(|r| r.is_stable()).collect();
        assert_eq!(outer.len(), 2);
    }

    fn sign_changes(c_bar: f64, lambda: f64) -> usize {
        let n = 100_000;
        let mut count = 0;
        let mut prev = phase_balance(0.0, c_bar, lambda);
        if prev == 0.0 {
            count += 1;
        }
        for i in 1..=n {
            let g = phase_balance(i as f64 / n as f64, c_bar, lambda);
            if g == 0.0 || (prev != 0.0 && (g < 0.0) != (prev < 0.0)) {
                count += 1;
            }
            prev = g;
        }
        count
    }

    proptest! {
        #[test]
        fn phibar_roots_are_roots(c_bar in 0.0f64..=1.0, lambda in 0.001f64..3.0) {
            let roots = solve_phibar(c_bar, lambda).unwrap();
            for &r in &roots {
                prop_assert!((0.0..=1.0).contains(&r));
                prop_assert!(phase_balance(r, c_bar, lambda).abs() <= EQUILIBRIUM_TOL);
            }
            prop_assert_eq!(roots.len(), sign_changes(c_bar, lambda));
        }

        #[test]
        fn cbar_invariant_under_joint_rescaling(s in 0.01f64..100.0, theta in 0.2f64..5.0) {
            let p = params();
            let q = ModelParams { beta: s * p.beta, gamma: s * p.gamma, ..p.clone() };
            let a = solve_cbar(theta, &p).unwrap();
            let b = solve_cbar(theta, &q).unwrap();
            prop_assert!((a - b).abs() <= 1e-14);
        }

        #[test]
        fn equilibrium_residuals_small(theta in 0.2f64..5.0, lambda in 0.01f64..3.0) {
            let p = ModelParams { lambda_cpl: lambda, ..params() };
            let eq = build_equilibrium(theta, &p).unwrap();
            prop_assert!(eq.residual_c.abs() <= EQUILIBRIUM_TOL);
            prop_assert!(eq.residual_phi.abs() <= EQUILIBRIUM_TOL);
            prop_assert_eq!(eq.stable, eq.f_second_at_phibar > 0.0);
        }
    }
}
