//! Closed-form pieces of the thermo-reaction-phase model: Arrhenius kinetics,
//! the double-well potential, the conductivity law, the reaction term, the
//! affine sub/super-solutions for the temperature and the weak-coupling
//! threshold.

use std::cmp::Ordering;
use std::fmt;

use crate::error::{Error, Result};

/// A nonnegative quantity that may be unbounded (`T0` with `C0 = 0`, `alpha0`
/// without latent coupling). Comparisons against `Unbounded` are exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Extent {
    Finite(f64),
    Unbounded,
}

impl Extent {
    pub fn is_unbounded(&self) -> bool {
        matches!(self, Extent::Unbounded)
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            Extent::Finite(v) => Some(v),
            Extent::Unbounded => None,
        }
    }

    /// `true` when `x` lies strictly below this extent.
    pub fn exceeds(&self, x: f64) -> bool {
        match *self {
            Extent::Finite(v) => x < v,
            Extent::Unbounded => x.is_finite() || x == f64::NEG_INFINITY,
        }
    }

    /// Scale a finite extent; `Unbounded` is absorbing for positive factors.
    pub fn scale(&self, factor: f64) -> Extent {
        match *self {
            Extent::Finite(v) => Extent::Finite(v * factor),
            Extent::Unbounded => Extent::Unbounded,
        }
    }

    fn min(self, other: Extent) -> Extent {
        match (self, other) {
            (Extent::Unbounded, e) | (e, Extent::Unbounded) => e,
            (Extent::Finite(a), Extent::Finite(b)) => Extent::Finite(a.min(b)),
        }
    }
}

impl PartialOrd for Extent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (Extent::Unbounded, Extent::Unbounded) => Some(Ordering::Equal),
            (Extent::Unbounded, Extent::Finite(_)) => Some(Ordering::Greater),
            (Extent::Finite(_), Extent::Unbounded) => Some(Ordering::Less),
            (Extent::Finite(a), Extent::Finite(b)) => a.partial_cmp(b),
        }
    }
}

impl fmt::Display for Extent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Extent::Finite(v) => write!(f, "{v}"),
            Extent::Unbounded => write!(f, "inf"),
        }
    }
}

/// Phase dependence of the thermal conductivity, always confined to
/// `[k_lo, k_hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConductivityLaw {
    /// `k = k_lo` everywhere.
    Constant,
    /// Linear interpolation on the clamped phase (continuous, not C1 at 0 and 1).
    LinearClamped,
    /// Cubic smoothstep `3t^2 - 2t^3` on the clamped phase (C1 on all of R).
    #[default]
    Smoothstep,
}

impl ConductivityLaw {
    pub fn name(&self) -> &'static str {
        match self {
            ConductivityLaw::Constant => "constant",
            ConductivityLaw::LinearClamped => "linear",
            ConductivityLaw::Smoothstep => "smoothstep",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "constant" => Some(ConductivityLaw::Constant),
            "linear" | "linear-clamped" => Some(ConductivityLaw::LinearClamped),
            "smoothstep" => Some(ConductivityLaw::Smoothstep),
            _ => None,
        }
    }
}

/// Physical and kinetic constants of the model (SI units).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub rho: f64,
    pub c_p: f64,
    pub d_c: f64,
    pub tau_phi: f64,
    pub eps_interface: f64,
    pub lambda_cpl: f64,
    pub beta: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub l_c: f64,
    pub l_phi: f64,
    pub a_d: f64,
    pub a_r: f64,
    pub e_d: f64,
    pub e_r: f64,
    pub r_gas: f64,
    pub k_lo: f64,
    pub k_hi: f64,
    pub conductivity: ConductivityLaw,
}

impl Default for ModelParams {
    /// A nondimensional reference set (order-one coefficients, `theta ~ 1`).
    fn default() -> Self {
        ModelParams {
            rho: 1.0,
            c_p: 1.0,
            d_c: 1.0,
            tau_phi: 1.0,
            eps_interface: 0.1,
            lambda_cpl: 1.0,
            beta: 1.0,
            gamma: 1.0,
            alpha: 0.0,
            l_c: 1.0,
            l_phi: 1.0,
            a_d: 1.0,
            a_r: 1.0,
            e_d: 1.0,
            e_r: 3.0,
            r_gas: 1.0,
            k_lo: 1.0,
            k_hi: 2.0,
            conductivity: ConductivityLaw::Smoothstep,
        }
    }
}

fn require(
    ok: bool,
    name: &'static str,
    hypothesis: &'static str,
    value: f64,
    rule: &str,
) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            hypothesis,
            reason: format!("{name} = {value}, expected {rule}"),
        })
    }
}

impl ModelParams {
    /// Sign and ordering checks for every constant; the first violation wins.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rho", self.rho),
            ("c_p", self.c_p),
            ("d_c", self.d_c),
            ("tau_phi", self.tau_phi),
            ("eps_interface", self.eps_interface),
            ("lambda", self.lambda_cpl),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ];
        for (name, v) in positive {
            require(v.is_finite() && v > 0.0, name, "H4", v, "> 0")?;
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("L_c", self.l_c),
            ("L_phi", self.l_phi),
        ] {
            require(v.is_finite() && v >= 0.0, name, "H4", v, ">= 0")?;
        }
        require(
            self.k_lo.is_finite() && self.k_lo > 0.0,
            "k_lo",
            "H1",
            self.k_lo,
            "> 0",
        )?;
        require(
            self.k_hi.is_finite() && self.k_hi >= self.k_lo,
            "k_hi",
            "H1",
            self.k_hi,
            ">= k_lo",
        )?;
        for (name, v) in [
            ("A_d", self.a_d),
            ("A_r", self.a_r),
            ("E_d", self.e_d),
            ("E_r", self.e_r),
            ("R_gas", self.r_gas),
        ] {
            require(v.is_finite() && v > 0.0, name, "H2", v, "> 0")?;
        }
        Ok(())
    }

    /// Volumetric heat capacity `rho * c_p`.
    pub fn heat_capacity(&self) -> f64 {
        self.rho * self.c_p
    }

    /// Decolouration rate `A_d exp(-E_d / (R theta))`.
    pub fn k_d(&self, theta: f64) -> Result<f64> {
        arrhenius(self.a_d, self.e_d, self.r_gas, theta)
    }

    /// Recolouration rate `A_r exp(-E_r / (R theta))`.
    pub fn k_r(&self, theta: f64) -> Result<f64> {
        arrhenius(self.a_r, self.e_r, self.r_gas, theta)
    }

    /// Reaction term `-beta K_d(theta) c + gamma K_r(theta) (1 - c)`.
    pub fn reaction(&self, theta: f64, c: f64) -> Result<f64> {
        let kd = self.k_d(theta)?;
        let kr = self.k_r(theta)?;
        Ok(-self.beta * kd * c + self.gamma * kr * (1.0 - c))
    }

    /// Total relaxation rate `beta K_d + gamma K_r` of the reaction at `theta`.
    pub fn reaction_rate_sum(&self, theta: f64) -> Result<f64> {
        Ok(self.beta * self.k_d(theta)? + self.gamma * self.k_r(theta)?)
    }

    pub fn conductivity(&self, phi: f64) -> f64 {
        let t = phi.clamp(0.0, 1.0);
        let s = match self.conductivity {
            ConductivityLaw::Constant => 0.0,
            ConductivityLaw::LinearClamped => t,
            ConductivityLaw::Smoothstep => t * t * (3.0 - 2.0 * t),
        };
        // convex combination keeps the result inside [k_lo, k_hi] under rounding
        ((1.0 - s) * self.k_lo + s * self.k_hi).clamp(self.k_lo, self.k_hi)
    }
}

fn arrhenius(prefactor: f64, activation: f64, r_gas: f64, theta: f64) -> Result<f64> {
    if !(theta > 0.0) {
        return Err(Error::domain(format!(
            "Arrhenius rate requested at nonpositive temperature theta={theta}"
        )));
    }
    Ok(prefactor * (-activation / (r_gas * theta)).exp())
}

/// Double-well potential `F(phi) = phi^2 (1 - phi)^2 / 4`.
pub fn potential(phi: f64) -> f64 {
    let q = phi * (1.0 - phi);
    0.25 * q * q
}

/// `F'(phi) = phi (1 - phi) (1 - 2 phi) / 2`.
pub fn potential_prime(phi: f64) -> f64 {
    0.5 * phi * (1.0 - phi) * (1.0 - 2.0 * phi)
}

/// `F''(phi) = 1/2 - 3 phi + 3 phi^2`, the exact second derivative of
/// [`potential`].
pub fn potential_second(phi: f64) -> f64 {
    0.5 - 3.0 * phi + 3.0 * phi * phi
}

/// Roots of `F''`, bounding the concave window `((3 - sqrt 3)/6, (3 + sqrt 3)/6)`.
pub fn potential_inflections() -> (f64, f64) {
    let r = 3.0_f64.sqrt();
    ((3.0 - r) / 6.0, (3.0 + r) / 6.0)
}

/// Supremum of `|F''|` over `[0, 1]`.
pub const POTENTIAL_CURVATURE_SUP: f64 = 0.5;

/// External heat input `H_ext(x, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum HeatSource {
    #[default]
    Zero,
    Constant(f64),
    /// Spatially uniform pulse `amp * exp(-(t - t0)^2 / (2 sigma^2))`.
    GaussianPulse {
        amp: f64,
        t0: f64,
        sigma: f64,
    },
}

impl HeatSource {
    pub fn eval(&self, _x: &[f64], t: f64) -> f64 {
        match *self {
            HeatSource::Zero => 0.0,
            HeatSource::Constant(v) => v,
            HeatSource::GaussianPulse { amp, t0, sigma } => {
                let z = (t - t0) / sigma;
                amp * (-0.5 * z * z).exp()
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            HeatSource::Zero => true,
            HeatSource::Constant(v) => v == 0.0,
            HeatSource::GaussianPulse { amp, .. } => amp == 0.0,
        }
    }

    /// Upper bound of `|H_ext|` over all space and time.
    pub fn sup_abs(&self) -> f64 {
        match *self {
            HeatSource::Zero => 0.0,
            HeatSource::Constant(v) => v.abs(),
            HeatSource::GaussianPulse { amp, .. } => amp.abs(),
        }
    }
}

/// Heat source together with the declared bounds on the total source
/// `S = H_ext + alpha L_c dc/dt + alpha L_phi dphi/dt`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SourceSpec {
    pub h_ext: HeatSource,
    /// Lower-bound constant: `S >= -C0`.
    pub c0: f64,
    /// Declared upper bound on `|S|`.
    pub s_sup: f64,
}

impl SourceSpec {
    pub fn free() -> Self {
        SourceSpec::default()
    }

    pub fn validate(&self) -> Result<()> {
        require(
            self.c0.is_finite() && self.c0 >= 0.0,
            "C0",
            "H5",
            self.c0,
            ">= 0",
        )?;
        require(
            self.s_sup.is_finite() && self.s_sup >= 0.0,
            "s_sup",
            "H5",
            self.s_sup,
            "finite and >= 0",
        )?;
        Ok(())
    }
}

/// Positivity horizon `T0 = rho c_p theta_star / C0` (unbounded when `C0 = 0`).
pub fn positivity_horizon(p: &ModelParams, src: &SourceSpec, theta_star: f64) -> Result<Extent> {
    if !(theta_star > 0.0) {
        return Err(Error::domain(format!(
            "theta_star must be > 0, got {theta_star}"
        )));
    }
    if src.c0 == 0.0 {
        Ok(Extent::Unbounded)
    } else {
        Ok(Extent::Finite(p.heat_capacity() * theta_star / src.c0))
    }
}

/// Affine lower barrier `theta_star - C0 t / (rho c_p)`, valid for `t < T0`.
pub fn sub_solution(t: f64, p: &ModelParams, src: &SourceSpec, theta_star: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::domain(format!("time must be >= 0, got {t}")));
    }
    let horizon = positivity_horizon(p, src, theta_star)?;
    if !horizon.exceeds(t) {
        return Err(Error::domain(format!(
            "t={t} is beyond the positivity horizon T0={horizon}"
        )));
    }
    Ok(theta_star - src.c0 / p.heat_capacity() * t)
}

/// Affine upper barrier `theta0_sup + t s_sup / (rho c_p)`.
pub fn super_solution(t: f64, p: &ModelParams, theta0_sup: f64, s_sup: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::domain(format!("time must be >= 0, got {t}")));
    }
    Ok(theta0_sup + t / p.heat_capacity() * s_sup)
}

fn ratio_or_unbounded(num: f64, den: f64) -> Extent {
    if den == 0.0 {
        Extent::Unbounded
    } else {
        Extent::Finite(num / den)
    }
}

/// The four terms whose minimum is the weak-coupling threshold `alpha0`.
pub fn coupling_threshold_terms(p: &ModelParams, m_f: f64) -> Result<[Extent; 4]> {
    if !(m_f > 0.0) {
        return Err(Error::domain(format!(
            "curvature bound m_F must be > 0 (stable potential well), got {m_f}"
        )));
    }
    let rc = p.heat_capacity();
    let sqrt2 = std::f64::consts::SQRT_2;
    Ok([
        ratio_or_unbounded(rc.sqrt(), sqrt2 * p.l_c),
        ratio_or_unbounded((rc * (2.0 * m_f + p.tau_phi)).sqrt(), sqrt2 * p.l_phi),
        ratio_or_unbounded(rc * (p.d_c * p.k_lo).sqrt(), 2.0 * p.k_hi * p.l_c),
        ratio_or_unbounded(rc * p.eps_interface * p.k_lo.sqrt(), 2.0 * p.k_hi * p.l_phi),
    ])
}

/// Weak-coupling threshold `alpha0` for a given lower curvature bound `m_F`.
pub fn coupling_threshold(p: &ModelParams, m_f: f64) -> Result<Extent> {
    Ok(coupling_threshold_terms(p, m_f)?
        .into_iter()
        .fold(Extent::Unbounded, Extent::min))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arrhenius_limits() {
        let mut p = ModelParams {
            e_d: 0.0,
            a_d: 1.0,
            ..ModelParams::default()
        };
        assert_eq!(p.k_d(3.7).unwrap(), 1.0);

        p.a_d = 2.0;
        p.e_d = 5.0;
        p.r_gas = 2.0;
        // E/(R theta) = 1
        let theta = 2.5;
        let expected = 2.0 * (-1.0f64).exp();
        assert!((p.k_d(theta).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.735_758_882_342_885).abs() < 1e-12);

        let mut prev = 0.0;
        for i in 1..200 {
            let v = p.k_d(i as f64 * 10.0).unwrap();
            assert!(v >= prev && v <= p.a_d);
            prev = v;
        }
    }

    #[test]
    fn arrhenius_rejects_nonpositive_temperature() {
        let p = ModelParams::default();
        assert!(matches!(p.k_d(0.0), Err(Error::Domain(_))));
        assert!(matches!(p.k_r(-1.0), Err(Error::Domain(_))));
        assert!(p.reaction(f64::NAN, 0.5).is_err());
    }

    #[test]
    fn potential_values() {
        assert_eq!(potential(0.0), 0.0);
        assert_eq!(potential(1.0), 0.0);
        assert_eq!(potential_prime(0.0), 0.0);
        assert_eq!(potential_prime(1.0), 0.0);
        assert_eq!(potential_prime(0.5), 0.0);
        assert_eq!(potential(0.5), 1.0 / 64.0);
        let (a, b) = potential_inflections();
        assert!((a - 0.211_324_865_405_187).abs() < 1e-12);
        assert!((b - 0.788_675_134_594_813).abs() < 1e-12);
        assert!(potential_second(a).abs() < 1e-15);
        assert!(potential_second(b).abs() < 1e-15);
    }

    #[test]
    fn conductivity_endpoints() {
        let p = ModelParams {
            k_lo: 0.5,
            k_hi: 3.0,
            ..ModelParams::default()
        };
        assert_eq!(p.conductivity(0.0), 0.5);
        assert_eq!(p.conductivity(1.0), 3.0);
        assert_eq!(p.conductivity(-5.0), 0.5);
        assert_eq!(p.conductivity(7.0), 3.0);
        assert!((p.conductivity(0.5) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn conductivity_laws_stay_in_bounds() {
        for law in [
            ConductivityLaw::Constant,
            ConductivityLaw::LinearClamped,
            ConductivityLaw::Smoothstep,
        ] {
            let p = ModelParams {
                conductivity: law,
                ..ModelParams::default()
            };
            for i in -100..=200 {
                let k = p.conductivity(i as f64 * 0.01);
                assert!(k >= p.k_lo && k <= p.k_hi);
            }
            assert_eq!(ConductivityLaw::from_name(law.name()), Some(law));
        }
    }

    #[test]
    fn reaction_special_cases() {
        let p = ModelParams {
            beta: 0.7,
            gamma: 1.3,
            ..ModelParams::default()
        };
        let theta = 1.4;
        let kd = p.k_d(theta).unwrap();
        let kr = p.k_r(theta).unwrap();
        assert_eq!(p.reaction(theta, 1.0).unwrap(), -p.beta * kd);
        assert_eq!(p.reaction(theta, 0.0).unwrap(), p.gamma * kr);
        let root = p.gamma * kr / (p.beta * kd + p.gamma * kr);
        assert!(p.reaction(theta, root).unwrap().abs() < 1e-15);
    }

    #[test]
    fn horizon_and_barriers() {
        let p = ModelParams {
            rho: 2.0,
            c_p: 1.0,
            ..ModelParams::default()
        };
        let free = SourceSpec::free();
        assert_eq!(
            positivity_horizon(&p, &free, 300.0).unwrap(),
            Extent::Unbounded
        );

        let src = SourceSpec {
            c0: 3.0,
            ..SourceSpec::default()
        };
        assert_eq!(
            positivity_horizon(&p, &src, 300.0).unwrap(),
            Extent::Finite(200.0)
        );
        let doubled = SourceSpec {
            c0: 6.0,
            ..src.clone()
        };
        assert_eq!(
            positivity_horizon(&p, &doubled, 300.0).unwrap(),
            Extent::Finite(100.0)
        );

        assert_eq!(sub_solution(0.0, &p, &src, 300.0).unwrap(), 300.0);
        assert_eq!(sub_solution(100.0, &p, &src, 300.0).unwrap(), 150.0);
        assert!(sub_solution(200.0, &p, &src, 300.0).is_err());
        assert!(positivity_horizon(&p, &src, 0.0).is_err());

        assert_eq!(super_solution(0.0, &p, 410.0, 9.0).unwrap(), 410.0);
        assert_eq!(super_solution(4.0, &p, 410.0, 9.0).unwrap(), 428.0);
    }

    #[test]
    fn extent_ordering() {
        assert!(Extent::Unbounded > Extent::Finite(1e308));
        assert!(Extent::Finite(1.0) < Extent::Finite(2.0));
        assert!(Extent::Unbounded.exceeds(f64::MAX));
        assert!(!Extent::Finite(2.0).exceeds(2.0));
    }

    #[test]
    fn alpha0_closed_forms() {
        let p = ModelParams {
            rho: 1.0,
            c_p: 1.0,
            l_c: 1.0,
            l_phi: 1.0,
            tau_phi: 0.5,
            d_c: 1.0,
            k_lo: 1.0,
            k_hi: 1.0,
            eps_interface: 1.0,
            ..ModelParams::default()
        };
        let terms = coupling_threshold_terms(&p, 0.25).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((terms[0].finite().unwrap() - h).abs() < 1e-15);
        assert!((terms[1].finite().unwrap() - h).abs() < 1e-15);
        assert_eq!(terms[2], Extent::Finite(0.5));
        assert_eq!(terms[3], Extent::Finite(0.5));
        assert_eq!(coupling_threshold(&p, 0.25).unwrap(), Extent::Finite(0.5));

        let uncoupled = ModelParams {
            l_c: 0.0,
            l_phi: 0.0,
            ..p.clone()
        };
        assert_eq!(
            coupling_threshold(&uncoupled, 0.25).unwrap(),
            Extent::Unbounded
        );
        assert!(coupling_threshold(&p, 0.0).is_err());
    }

    #[test]
    fn alpha0_first_term_scaling() {
        let p = ModelParams::default();
        let q = ModelParams {
            rho: 4.0 * p.rho,
            ..p.clone()
        };
        let a = coupling_threshold_terms(&p, 0.25).unwrap()[0]
            .finite()
            .unwrap();
        let b = coupling_threshold_terms(&q, 0.25).unwrap()[0]
            .finite()
            .unwrap();
        assert!((b / a - 2.0).abs() < 1e-14);
    }

    #[test]
    fn validation_names_hypothesis() {
        let p = ModelParams {
            tau_phi: -1.0,
            ..ModelParams::default()
        };
        match p.validate() {
            Err(Error::InvalidParameter {
                name, hypothesis, ..
            }) => {
                assert_eq!(name, "tau_phi");
                assert_eq!(hypothesis, "H4");
            }
            other => panic!("unexpected {other:?}"),
        }
        let p = ModelParams {
            k_lo: 2.0,
            k_hi: 1.0,
            ..ModelParams::default()
        };
        assert!(matches!(
            p.validate(),
            Err(Error::InvalidParameter {
                hypothesis: "H1",
                ..
            })
        ));
        assert!(ModelParams::default().validate().is_ok());
    }
}
