//! Python bindings: model parameters, closed-form model functions,
//! equilibria, the coupling threshold and full simulations.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use thermophase_core::equilibrium::build_equilibrium;
use thermophase_core::grid::{Field, Grid, State};
use thermophase_core::model::{self, ConductivityLaw, HeatSource, SourceSpec};
use thermophase_core::solver::{
    self, cfl_limits, imex_limits, theta_ceiling, Scheme, StepControls,
};
use thermophase_core::stability::fit_decay_rate;
use thermophase_core::verification::theorem_suite;
use thermophase_core::{EquilibriumState, Error, ModelParams, Trajectory};

fn value_err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Mirror of `ModelParams` with plain attributes.
#[pyclass(name = "ModelParams", module = "thermophase", skip_from_py_object)]
#[derive(Clone)]
struct PyParams {
    #[pyo3(get, set)]
    rho: f64,
    #[pyo3(get, set)]
    c_p: f64,
    #[pyo3(get, set)]
    d_c: f64,
    #[pyo3(get, set)]
    tau_phi: f64,
    #[pyo3(get, set)]
    eps_interface: f64,
    #[pyo3(get, set)]
    lambda_cpl: f64,
    #[pyo3(get, set)]
    beta: f64,
    #[pyo3(get, set)]
    gamma: f64,
    #[pyo3(get, set)]
    alpha: f64,
    #[pyo3(get, set)]
    l_c: f64,
    #[pyo3(get, set)]
    l_phi: f64,
    #[pyo3(get, set)]
    a_d: f64,
    #[pyo3(get, set)]
    a_r: f64,
    #[pyo3(get, set)]
    e_d: f64,
    #[pyo3(get, set)]
    e_r: f64,
    #[pyo3(get, set)]
    r_gas: f64,
    #[pyo3(get, set)]
    k_lo: f64,
    #[pyo3(get, set)]
    k_hi: f64,
    conductivity: ConductivityLaw,
}

impl PyParams {
    fn inner(&self) -> ModelParams {
        ModelParams {
            rho: self.rho,
            c_p: self.c_p,
            d_c: self.d_c,
            tau_phi: self.tau_phi,
            eps_interface: self.eps_interface,
            lambda_cpl: self.lambda_cpl,
            beta: self.beta,
            gamma: self.gamma,
            alpha: self.alpha,
            l_c: self.l_c,
            l_phi: self.l_phi,
            a_d: self.a_d,
            a_r: self.a_r,
            e_d: self.e_d,
            e_r: self.e_r,
            r_gas: self.r_gas,
            k_lo: self.k_lo,
            k_hi: self.k_hi,
            conductivity: self.conductivity,
        }
    }

    fn from_inner(p: &ModelParams) -> Self {
        PyParams {
            rho: p.rho,
            c_p: p.c_p,
            d_c: p.d_c,
            tau_phi: p.tau_phi,
            eps_interface: p.eps_interface,
            lambda_cpl: p.lambda_cpl,
            beta: p.beta,
            gamma: p.gamma,
            alpha: p.alpha,
            l_c: p.l_c,
            l_phi: p.l_phi,
            a_d: p.a_d,
            a_r: p.a_r,
            e_d: p.e_d,
            e_r: p.e_r,
            r_gas: p.r_gas,
            k_lo: p.k_lo,
            k_hi: p.k_hi,
            conductivity: p.conductivity,
        }
    }
}

#[pymethods]
impl PyParams {
    /// Keyword arguments override the nondimensional defaults.
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(py: Python<'_>, kwargs: Option<&Bound<'_, pyo3::types::PyDict>>) -> PyResult<Py<Self>> {
        let obj = Py::new(py, PyParams::from_inner(&ModelParams::default()))?;
        if let Some(kw) = kwargs {
            let bound = obj.bind(py);
            for (k, v) in kw.iter() {
                let key: String = k.extract()?;
                if key != "conductivity"
                    && !matches!(
                        key.as_str(),
                        "rho"
                            | "c_p"
                            | "d_c"
                            | "tau_phi"
                            | "eps_interface"
                            | "lambda_cpl"
                            | "beta"
                            | "gamma"
                            | "alpha"
                            | "l_c"
                            | "l_phi"
                            | "a_d"
                            | "a_r"
                            | "e_d"
                            | "e_r"
                            | "r_gas"
                            | "k_lo"
                            | "k_hi"
                    )
                {
                    return Err(PyValueError::new_err(format!("unknown parameter `{key}`")));
                }
                bound.setattr(key.as_str(), v)?;
            }
        }
        Ok(obj)
    }

    #[getter]
    fn get_conductivity(&self) -> &'static str {
        self.conductivity.name()
    }

    #[setter]
    fn set_conductivity(&mut self, name: &str) -> PyResult<()> {
        self.conductivity = ConductivityLaw::from_name(name)
            .ok_or_else(|| PyValueError::new_err(format!("unknown conductivity law `{name}`")))?;
        Ok(())
    }

    fn validate(&self) -> PyResult<()> {
        self.inner().validate().map_err(value_err)
    }

    fn k_d(&self, theta: f64) -> PyResult<f64> {
        self.inner().k_d(theta).map_err(value_err)
    }

    fn k_r(&self, theta: f64) -> PyResult<f64> {
        self.inner().k_r(theta).map_err(value_err)
    }

    fn reaction(&self, theta: f64, c: f64) -> PyResult<f64> {
        self.inner().reaction(theta, c).map_err(value_err)
    }

    fn conductivity_at(&self, phi: f64) -> f64 {
        self.inner().conductivity(phi)
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner())
    }
}

#[pyclass(name = "Equilibrium", module = "thermophase", frozen)]
struct PyEquilibrium {
    inner: EquilibriumState,
}

#[pymethods]
impl PyEquilibrium {
    #[getter]
    fn theta_bar(&self) -> f64 {
        self.inner.theta_bar
    }

    #[getter]
    fn c_bar(&self) -> f64 {
        self.inner.c_bar
    }

    #[getter]
    fn phi_bar(&self) -> f64 {
        self.inner.phi_bar
    }

    #[getter]
    fn stable(&self) -> bool {
        self.inner.stable
    }

    #[getter]
    fn f_second(&self) -> f64 {
        self.inner.f_second_at_phibar
    }

    /// `(phi, F'')` for every root in `[0, 1]`.
    #[getter]
    fn roots(&self) -> Vec<(f64, f64)> {
        self.inner
            .roots
            .iter()
            .map(|r| (r.phi, r.curvature))
            .collect()
    }

    #[getter]
    fn residuals(&self) -> (f64, f64) {
        (self.inner.residual_c, self.inner.residual_phi)
    }

    fn default_m_f(&self) -> f64 {
        self.inner.default_m_f()
    }

    fn __repr__(&self) -> String {
        format!(
            "Equilibrium(theta_bar={}, c_bar={}, phi_bar={}, stable={})",
            self.inner.theta_bar, self.inner.c_bar, self.inner.phi_bar, self.inner.stable
        )
    }
}

#[pyclass(name = "Trajectory", module = "thermophase", frozen)]
struct PyTrajectory {
    inner: Trajectory,
    params: ModelParams,
    source: SourceSpec,
}

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.diagnostics.iter().map(|d| d.t).collect()
    }

    #[getter]
    fn theta_min(&self) -> Vec<f64> {
        self.inner.diagnostics.iter().map(|d| d.theta_min).collect()
    }

    #[getter]
    fn theta_max(&self) -> Vec<f64> {
        self.inner.diagnostics.iter().map(|d| d.theta_max).collect()
    }

    #[getter]
    fn conserved(&self) -> Vec<f64> {
        self.inner.diagnostics.iter().map(|d| d.q).collect()
    }

    /// Perturbation energy per step, when run around an equilibrium.
    #[getter]
    fn energy(&self) -> Option<Vec<f64>> {
        self.inner
            .energy_series()
            .map(|s| s.into_iter().map(|(_, e)| e).collect())
    }

    /// Final `(theta, c, phi)` values, row-major.
    fn final_state(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let s = self.inner.last();
        (
            s.theta.values().to_vec(),
            s.c.values().to_vec(),
            s.phi.values().to_vec(),
        )
    }

    /// `(kappa, r2, monotone_fraction)` of the energy decay fit.
    fn fit_decay(&self) -> PyResult<(f64, f64, f64)> {
        let f = fit_decay_rate(&self.inner).map_err(value_err)?;
        Ok((f.kappa, f.r2, f.monotone_fraction))
    }

    /// `(name, passed, worst_margin)` for every trajectory check.
    #[pyo3(signature = (theta_star=None))]
    fn verify(&self, theta_star: Option<f64>) -> Vec<(String, bool, f64)> {
        let ts = theta_star.unwrap_or_else(|| self.inner.initial().theta.min());
        theorem_suite(
            &self.inner,
            &self.params,
            &self.source,
            ts,
            self.inner.equilibrium.as_ref(),
        )
        .into_iter()
        .map(|r| (r.name, r.passed || !r.applicable, r.worst_margin))
        .collect()
    }
}

#[pyfunction]
fn potential(phi: f64) -> f64 {
    model::potential(phi)
}

#[pyfunction]
fn potential_prime(phi: f64) -> f64 {
    model::potential_prime(phi)
}

#[pyfunction]
fn potential_second(phi: f64) -> f64 {
    model::potential_second(phi)
}

#[pyfunction]
fn equilibrium(theta_bar: f64, params: PyRef<'_, PyParams>) -> PyResult<PyEquilibrium> {
    build_equilibrium(theta_bar, &params.inner())
        .map(|inner| PyEquilibrium { inner })
        .map_err(value_err)
}

/// Coupling threshold; `inf` when unbounded.
#[pyfunction]
fn alpha0(params: PyRef<'_, PyParams>, m_f: f64) -> PyResult<f64> {
    let a = model::coupling_threshold(&params.inner(), m_f).map_err(value_err)?;
    Ok(a.finite().unwrap_or(f64::INFINITY))
}

/// Simulate on a 1D grid from cell values.
///
/// `eq` turns on energy tracking. `dt=None` picks the largest admissible step.
#[pyfunction]
#[pyo3(signature = (params, theta, c, phi, t_end, length=1.0, dt=None, scheme="explicit-monotone", h_ext=0.0, c0=0.0, eq=None))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    params: PyRef<'_, PyParams>,
    theta: Vec<f64>,
    c: Vec<f64>,
    phi: Vec<f64>,
    t_end: f64,
    length: f64,
    dt: Option<f64>,
    scheme: &str,
    h_ext: f64,
    c0: f64,
    eq: Option<PyRef<'_, PyEquilibrium>>,
) -> PyResult<PyTrajectory> {
    let p = params.inner();
    p.validate().map_err(value_err)?;
    let scheme = Scheme::from_name(scheme)
        .ok_or_else(|| PyValueError::new_err(format!("unknown scheme `{scheme}`")))?;
    let g = Grid::line(theta.len(), length).map_err(value_err)?;
    let state = State::new(
        0.0,
        Field::new(g, theta).map_err(value_err)?,
        Field::new(g, c).map_err(value_err)?,
        Field::new(g, phi).map_err(value_err)?,
    )
    .map_err(value_err)?;
    let source = SourceSpec {
        h_ext: if h_ext == 0.0 {
            HeatSource::Zero
        } else {
            HeatSource::Constant(h_ext)
        },
        c0,
        s_sup: h_ext.abs(),
    };
    let dt = match dt {
        Some(dt) => dt,
        None => {
            let ceiling = theta_ceiling(&state, &p, &source, t_end);
            match scheme {
                Scheme::ExplicitMonotone => cfl_limits(&p, &g, ceiling),
                Scheme::Imex => imex_limits(&p, ceiling),
            }
            .map_err(value_err)?
        }
    };
    let controls = StepControls {
        dt,
        scheme,
        t_end,
        snapshot_every: 0,
    };
    let eq_state = eq.map(|e| e.inner.clone());
    let inner = py
        .detach(|| solver::run(&state, &p, &source, &controls, eq_state.as_ref()))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(PyTrajectory {
        inner,
        params: p,
        source,
    })
}

#[pymodule]
fn thermophase(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyParams>()?;
    m.add_class::<PyEquilibrium>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_function(wrap_pyfunction!(potential, m)?)?;
    m.add_function(wrap_pyfunction!(potential_prime, m)?)?;
    m.add_function(wrap_pyfunction!(potential_second, m)?)?;
    m.add_function(wrap_pyfunction!(equilibrium, m)?)?;
    m.add_function(wrap_pyfunction!(alpha0, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
