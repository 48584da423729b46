//! Configuration files and the command implementations behind the binary.
//!
//! Configs are line-oriented `section.key = value` text. Blank lines and
//! `#` comments are ignored, unknown or repeated keys are rejected, and every
//! error names the offending line.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::equilibrium::{build_equilibrium, EquilibriumState};
use crate::error::Error;
use crate::grid::{Field, Grid, State};
use crate::model::{
    coupling_threshold, coupling_threshold_terms, ConductivityLaw, HeatSource, ModelParams,
    SourceSpec,
};
use crate::solver::{
    cfl_limits, imex_limits, run, theta_ceiling, Scheme, StepControls, Trajectory,
};
use crate::stability::fit_decay_rate;
use crate::verification::{
    convergence_study, reports_csv, spatial_convergence, temporal_convergence, theorem_suite,
    validate_hypotheses, CheckReport, SmoothPreset, StabilitySetup,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_EQUILIBRIUM: i32 = 4;
pub const EXIT_VERIFICATION: i32 = 5;

/// Environment variable capping the sweep worker count.
pub const THREADS_ENV: &str = "THERMOPHASE_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(line: usize, msg: impl fmt::Display) -> Self {
        let message = if line > 0 {
            format!("config line {line}: {msg}")
        } else {
            format!("config: {msg}")
        };
        CliError {
            code: EXIT_CONFIG,
            message,
        }
    }

    fn equilibrium(e: impl fmt::Display) -> Self {
        CliError {
            code: EXIT_EQUILIBRIUM,
            message: format!("equilibrium: {e}"),
        }
    }

    fn solver(e: &Error) -> Self {
        let message = match e.step() {
            Some(_) => format!("solver failed at {e}"),
            None => format!("solver failed: {e}"),
        };
        CliError {
            code: EXIT_SOLVER,
            message,
        }
    }

    fn io(path: &Path, e: impl fmt::Display) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: format!("cannot write {}: {e}", path.display()),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbationMode {
    /// `cos(j pi x / L_x)`.
    Cosine(u32),
    /// Independent uniform noise per cell, seeded.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialPreset {
    EquilibriumPerturbed {
        amplitude: f64,
        mode: PerturbationMode,
    },
    Homogeneous {
        theta0: f64,
        c0: f64,
        phi0: f64,
    },
    File {
        theta: PathBuf,
        c: PathBuf,
        phi: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceConfig {
    pub cells: Vec<usize>,
    /// Empty: derive three levels from the CFL bound of the middle grid.
    pub dts: Vec<f64>,
    pub t_end: f64,
    pub theta_ref: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            cells: vec![16, 32, 64, 128],
            dts: vec![],
            t_end: 0.05,
            theta_ref: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelParams,
    pub source: SourceSpec,
    pub grid: Grid,
    pub scheme: Scheme,
    /// `None`: the largest admissible step for the scheme.
    pub dt: Option<f64>,
    pub t_end: f64,
    pub initial: InitialPreset,
    pub theta_star: Option<f64>,
    pub theta_bar: Option<f64>,
    pub m_f: Option<f64>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub snapshot_every: usize,
    pub sweep_alphas: Vec<f64>,
    pub convergence: ConvergenceConfig,
    /// Line of each key in the source file, for anchoring late errors.
    lines: BTreeMap<String, usize>,
}

const KNOWN_KEYS: &[&str] = &[
    "model.rho",
    "model.c_p",
    "model.d_c",
    "model.tau_phi",
    "model.eps_interface",
    "model.lambda",
    "model.beta",
    "model.gamma",
    "model.alpha",
    "model.L_c",
    "model.L_phi",
    "model.A_d",
    "model.A_r",
    "model.E_d",
    "model.E_r",
    "model.R_gas",
    "model.k_lo",
    "model.k_hi",
    "model.conductivity",
    "source.h_ext",
    "source.C0",
    "source.s_sup",
    "grid.dim",
    "grid.n",
    "grid.length",
    "controls.dt",
    "controls.scheme",
    "controls.t_end",
    "initial.preset",
    "initial.amplitude",
    "initial.mode",
    "initial.theta0",
    "initial.c0",
    "initial.phi0",
    "initial.theta_file",
    "initial.c_file",
    "initial.phi_file",
    "initial.theta_star",
    "equilibrium.theta_bar",
    "equilibrium.m_F",
    "seed",
    "outputs.dir",
    "outputs.snapshot_every",
    "sweep.alphas",
    "convergence.cells",
    "convergence.dts",
    "convergence.t_end",
    "convergence.theta_ref",
];

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn parse(text: &str) -> Result<Entries, CliError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| {
                CliError::config(line, format!("expected `key = value`, got `{content}`"))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !KNOWN_KEYS.contains(&key) {
                return Err(CliError::config(line, format!("unknown key `{key}`")));
            }
            if value.is_empty() {
                return Err(CliError::config(line, format!("empty value for `{key}`")));
            }
            if let Some((prev, _)) = map.insert(key.to_string(), (line, value.to_string())) {
                return Err(CliError::config(
                    line,
                    format!("duplicate key `{key}` (first on line {prev})"),
                ));
            }
        }
        Ok(Entries { map })
    }

    fn raw(&self, key: &str) -> Option<(usize, &str)> {
        self.map.get(key).map(|(l, v)| (*l, v.as_str()))
    }

    fn f64(&self, key: &str) -> Result<Option<f64>, CliError> {
        self.raw(key).map(|(l, v)| parse_f64(l, key, v)).transpose()
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64, CliError> {
        Ok(self.f64(key)?.unwrap_or(default))
    }

    fn list<T>(
        &self,
        key: &str,
        parse: impl Fn(usize, &str, &str) -> Result<T, CliError>,
    ) -> Result<Option<Vec<T>>, CliError> {
        self.raw(key)
            .map(|(l, v)| v.split(',').map(|s| parse(l, key, s.trim())).collect())
            .transpose()
    }
}

fn parse_f64(line: usize, key: &str, v: &str) -> Result<f64, CliError> {
    let x: f64 = v
        .parse()
        .map_err(|_| CliError::config(line, format!("`{key}`: `{v}` is not a number")))?;
    if !x.is_finite() {
        return Err(CliError::config(line, format!("`{key}` must be finite")));
    }
    Ok(x)
}

fn parse_usize(line: usize, key: &str, v: &str) -> Result<usize, CliError> {
    v.parse()
        .map_err(|_| CliError::config(line, format!("`{key}`: `{v}` is not a nonnegative integer")))
}

fn parse_heat_source(line: usize, v: &str) -> Result<HeatSource, CliError> {
    let (name, args) = v.split_once(char::is_whitespace).unwrap_or((v, ""));
    let nums: Vec<f64> = args
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_f64(line, "source.h_ext", s))
        .collect::<Result<_, _>>()?;
    match (name, nums.as_slice()) {
        ("zero", []) => Ok(HeatSource::Zero),
        ("constant", [v]) => Ok(HeatSource::Constant(*v)),
        ("gaussian-pulse", [amp, t0, sigma]) if *sigma > 0.0 => Ok(HeatSource::GaussianPulse {
            amp: *amp,
            t0: *t0,
            sigma: *sigma,
        }),
        _ => Err(CliError::config(
            line,
            format!("`source.h_ext`: expected `zero`, `constant <v>` or `gaussian-pulse <amp>,<t0>,<sigma>` (sigma > 0), got `{v}`"),
        )),
    }
}

fn fmt_heat_source(h: &HeatSource) -> String {
    match *h {
        HeatSource::Zero => "zero".into(),
        HeatSource::Constant(v) => format!("constant {v:?}"),
        HeatSource::GaussianPulse { amp, t0, sigma } => {
            format!("gaussian-pulse {amp:?},{t0:?},{sigma:?}")
        }
    }
}

fn join<T: fmt::Debug>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| format!("{x:?}"))
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig, CliError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(0, format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::parse_with_base(&text, base)
    }

    pub fn parse(text: &str) -> Result<RunConfig, CliError> {
        RunConfig::parse_with_base(text, Path::new("."))
    }

    /// Relative `initial.*_file` paths resolve against `base`.
    pub fn parse_with_base(text: &str, base: &Path) -> Result<RunConfig, CliError> {
        let e = Entries::parse(text)?;
        let d = ModelParams::default();
        let conductivity = match e.raw("model.conductivity") {
            None => d.conductivity,
            Some((l, v)) => ConductivityLaw::from_name(v)
                .ok_or_else(|| CliError::config(l, format!("unknown conductivity law `{v}`")))?,
        };
        let model = ModelParams {
            rho: e.f64_or("model.rho", d.rho)?,
            c_p: e.f64_or("model.c_p", d.c_p)?,
            d_c: e.f64_or("model.d_c", d.d_c)?,
            tau_phi: e.f64_or("model.tau_phi", d.tau_phi)?,
            eps_interface: e.f64_or("model.eps_interface", d.eps_interface)?,
            lambda_cpl: e.f64_or("model.lambda", d.lambda_cpl)?,
            beta: e.f64_or("model.beta", d.beta)?,
            gamma: e.f64_or("model.gamma", d.gamma)?,
            alpha: e.f64_or("model.alpha", d.alpha)?,
            l_c: e.f64_or("model.L_c", d.l_c)?,
            l_phi: e.f64_or("model.L_phi", d.l_phi)?,
            a_d: e.f64_or("model.A_d", d.a_d)?,
            a_r: e.f64_or("model.A_r", d.a_r)?,
            e_d: e.f64_or("model.E_d", d.e_d)?,
            e_r: e.f64_or("model.E_r", d.e_r)?,
            r_gas: e.f64_or("model.R_gas", d.r_gas)?,
            k_lo: e.f64_or("model.k_lo", d.k_lo)?,
            k_hi: e.f64_or("model.k_hi", d.k_hi)?,
            conductivity,
        };

        let source = SourceSpec {
            h_ext: match e.raw("source.h_ext") {
                None => HeatSource::Zero,
                Some((l, v)) => parse_heat_source(l, v)?,
            },
            c0: e.f64_or("source.C0", 0.0)?,
            s_sup: e.f64_or("source.s_sup", 0.0)?,
        };

        let dim = match e.raw("grid.dim") {
            None => 1,
            Some((l, v)) => parse_usize(l, "grid.dim", v)?,
        };
        let n = e
            .list("grid.n", parse_usize)?
            .unwrap_or_else(|| vec![64; dim]);
        let length = e
            .list("grid.length", parse_f64)?
            .unwrap_or_else(|| vec![1.0; dim]);
        let grid_line = e.raw("grid.n").or(e.raw("grid.dim")).map_or(0, |(l, _)| l);
        let grid = match (dim, n.as_slice(), length.as_slice()) {
            (1, [n], [l]) => Grid::line(*n, *l),
            (2, [nx, ny], [lx, ly]) => Grid::rect(*nx, *ny, *lx, *ly),
            (2, [n], [l]) => Grid::rect(*n, *n, *l, *l),
            (1 | 2, _, _) => {
                return Err(CliError::config(
                    grid_line,
                    "grid.n and grid.length need one entry per axis",
                ))
            }
            _ => {
                return Err(CliError::config(
                    grid_line,
                    format!("grid.dim must be 1 or 2, got {dim}"),
                ))
            }
        }
        .map_err(|err| CliError::config(grid_line, err))?;

        let scheme = match e.raw("controls.scheme") {
            None => Scheme::ExplicitMonotone,
            Some((l, v)) => Scheme::from_name(v)
                .ok_or_else(|| CliError::config(l, format!("unknown scheme `{v}`")))?,
        };
        let dt = match e.raw("controls.dt") {
            None | Some((_, "auto")) => None,
            Some((l, v)) => {
                let dt = parse_f64(l, "controls.dt", v)?;
                if dt <= 0.0 {
                    return Err(CliError::config(l, "controls.dt must be > 0"));
                }
                Some(dt)
            }
        };
        let t_end = e.f64_or("controls.t_end", 0.0)?;
        if t_end < 0.0 {
            return Err(CliError::config(
                e.raw("controls.t_end").map_or(0, |r| r.0),
                "controls.t_end must be >= 0",
            ));
        }

        let initial = match e.raw("initial.preset") {
            None | Some((_, "homogeneous")) => InitialPreset::Homogeneous {
                theta0: e.f64_or("initial.theta0", 1.0)?,
                c0: e.f64_or("initial.c0", 0.5)?,
                phi0: e.f64_or("initial.phi0", 0.5)?,
            },
            Some((_, "equilibrium-perturbed")) => InitialPreset::EquilibriumPerturbed {
                amplitude: e.f64_or("initial.amplitude", 1e-2)?,
                mode: match e.raw("initial.mode") {
                    None => PerturbationMode::Cosine(1),
                    Some((_, "random")) => PerturbationMode::Random,
                    Some((l, v)) => PerturbationMode::Cosine(v.parse().map_err(|_| {
                        CliError::config(
                            l,
                            format!("initial.mode must be `random` or a mode number, got `{v}`"),
                        )
                    })?),
                },
            },
            Some((l, "file")) => {
                let mut paths = vec![];
                for key in ["initial.theta_file", "initial.c_file", "initial.phi_file"] {
                    let (fl, v) = e.raw(key).ok_or_else(|| {
                        CliError::config(l, format!("preset `file` requires `{key}`"))
                    })?;
                    let p = base.join(v);
                    if !p.is_file() {
                        return Err(CliError::config(
                            fl,
                            format!("`{key}`: no such file {}", p.display()),
                        ));
                    }
                    paths.push(p);
                }
                let phi = paths.pop().unwrap();
                let c = paths.pop().unwrap();
                let theta = paths.pop().unwrap();
                InitialPreset::File { theta, c, phi }
            }
            Some((l, v)) => {
                return Err(CliError::config(l, format!("unknown initial preset `{v}`")))
            }
        };

        let seed = match e.raw("seed") {
            None => 0,
            Some((l, v)) => v.parse().map_err(|_| {
                CliError::config(l, format!("seed must be a nonnegative integer, got `{v}`"))
            })?,
        };
        let snapshot_every = match e.raw("outputs.snapshot_every") {
            None => 0,
            Some((l, v)) => parse_usize(l, "outputs.snapshot_every", v)?,
        };

        let dc = ConvergenceConfig::default();
        let convergence = ConvergenceConfig {
            cells: e
                .list("convergence.cells", parse_usize)?
                .unwrap_or(dc.cells),
            dts: e.list("convergence.dts", parse_f64)?.unwrap_or(dc.dts),
            t_end: e.f64_or("convergence.t_end", dc.t_end)?,
            theta_ref: e.f64_or("convergence.theta_ref", dc.theta_ref)?,
        };

        let cfg = RunConfig {
            model,
            source,
            grid,
            scheme,
            dt,
            t_end,
            initial,
            theta_star: e.f64("initial.theta_star")?,
            theta_bar: e.f64("equilibrium.theta_bar")?,
            m_f: e.f64("equilibrium.m_F")?,
            seed,
            out_dir: e
                .raw("outputs.dir")
                .map_or_else(|| PathBuf::from("out"), |(_, v)| PathBuf::from(v)),
            snapshot_every,
            sweep_alphas: e.list("sweep.alphas", parse_f64)?.unwrap_or_default(),
            convergence,
            lines: e.map.iter().map(|(k, (l, _))| (k.clone(), *l)).collect(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn line_of(&self, key: &str) -> usize {
        self.lines.get(key).copied().unwrap_or(0)
    }

    fn validate(&self) -> Result<(), CliError> {
        self.model.validate().map_err(|err| {
            let line = match &err {
                Error::InvalidParameter { name, .. } => self.line_of(&format!("model.{name}")),
                _ => 0,
            };
            CliError::config(line, err)
        })?;
        self.source.validate().map_err(|err| {
            let line = match &err {
                Error::InvalidParameter { name, .. } => self.line_of(&format!("source.{name}")),
                _ => 0,
            };
            CliError::config(line, err)
        })?;
        if matches!(self.initial, InitialPreset::EquilibriumPerturbed { .. })
            && self.theta_bar.is_none()
        {
            return Err(CliError::config(
                self.line_of("initial.preset"),
                "preset `equilibrium-perturbed` requires `equilibrium.theta_bar`",
            ));
        }
        if let Some(ts) = self.theta_star {
            if !(ts > 0.0) {
                return Err(CliError::config(
                    self.line_of("initial.theta_star"),
                    "initial.theta_star must be > 0",
                ));
            }
        }
        Ok(())
    }

    /// Every setting, explicit defaults included; parses back to an equal config.
    pub fn to_config_string(&self) -> String {
        let m = &self.model;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        for (k, v) in [
            ("rho", m.rho),
            ("c_p", m.c_p),
            ("d_c", m.d_c),
            ("tau_phi", m.tau_phi),
            ("eps_interface", m.eps_interface),
            ("lambda", m.lambda_cpl),
            ("beta", m.beta),
            ("gamma", m.gamma),
            ("alpha", m.alpha),
            ("L_c", m.l_c),
            ("L_phi", m.l_phi),
            ("A_d", m.a_d),
            ("A_r", m.a_r),
            ("E_d", m.e_d),
            ("E_r", m.e_r),
            ("R_gas", m.r_gas),
            ("k_lo", m.k_lo),
            ("k_hi", m.k_hi),
        ] {
            kv(&format!("model.{k}"), format!("{v:?}"));
        }
        kv("model.conductivity", m.conductivity.name().into());
        kv("source.h_ext", fmt_heat_source(&self.source.h_ext));
        kv("source.C0", format!("{:?}", self.source.c0));
        kv("source.s_sup", format!("{:?}", self.source.s_sup));
        let g = &self.grid;
        let axes: Vec<usize> = (0..g.dim()).collect();
        kv("grid.dim", g.dim().to_string());
        kv(
            "grid.n",
            axes.iter()
                .map(|&a| g.cells(a).to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv(
            "grid.length",
            join(&axes.iter().map(|&a| g.length(a)).collect::<Vec<_>>()),
        );
        kv(
            "controls.dt",
            self.dt.map_or("auto".into(), |d| format!("{d:?}")),
        );
        kv("controls.scheme", self.scheme.name().into());
        kv("controls.t_end", format!("{:?}", self.t_end));
        match &self.initial {
            InitialPreset::EquilibriumPerturbed { amplitude, mode } => {
                kv("initial.preset", "equilibrium-perturbed".into());
                kv("initial.amplitude", format!("{amplitude:?}"));
                kv(
                    "initial.mode",
                    match mode {
                        PerturbationMode::Cosine(j) => j.to_string(),
                        PerturbationMode::Random => "random".into(),
                    },
                );
            }
            InitialPreset::Homogeneous { theta0, c0, phi0 } => {
                kv("initial.preset", "homogeneous".into());
                kv("initial.theta0", format!("{theta0:?}"));
                kv("initial.c0", format!("{c0:?}"));
                kv("initial.phi0", format!("{phi0:?}"));
            }
            InitialPreset::File { theta, c, phi } => {
                kv("initial.preset", "file".into());
                kv("initial.theta_file", theta.display().to_string());
                kv("initial.c_file", c.display().to_string());
                kv("initial.phi_file", phi.display().to_string());
            }
        }
        if let Some(v) = self.theta_star {
            kv("initial.theta_star", format!("{v:?}"));
        }
        if let Some(v) = self.theta_bar {
            kv("equilibrium.theta_bar", format!("{v:?}"));
        }
        if let Some(v) = self.m_f {
            kv("equilibrium.m_F", format!("{v:?}"));
        }
        kv("seed", self.seed.to_string());
        kv("outputs.dir", self.out_dir.display().to_string());
        kv("outputs.snapshot_every", self.snapshot_every.to_string());
        if !self.sweep_alphas.is_empty() {
            kv("sweep.alphas", join(&self.sweep_alphas));
        }
        let c = &self.convergence;
        kv(
            "convergence.cells",
            c.cells
                .iter()
                .map(|n| n.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        if !c.dts.is_empty() {
            kv("convergence.dts", join(&c.dts));
        }
        kv("convergence.t_end", format!("{:?}", c.t_end));
        kv("convergence.theta_ref", format!("{:?}", c.theta_ref));
        s
    }

    fn equilibrium_state(&self) -> Result<Option<EquilibriumState>, CliError> {
        self.theta_bar
            .map(|tb| build_equilibrium(tb, &self.model).map_err(CliError::equilibrium))
            .transpose()
    }

    fn m_f_for(&self, eq: &EquilibriumState) -> f64 {
        self.m_f.unwrap_or_else(|| eq.default_m_f())
    }

    /// Initial state for the configured preset.
    pub fn initial_state(&self, eq: Option<&EquilibriumState>) -> Result<State, CliError> {
        let g = self.grid;
        let state = match &self.initial {
            InitialPreset::Homogeneous { theta0, c0, phi0 } => {
                State::homogeneous(g, *theta0, *c0, *phi0)
            }
            InitialPreset::File { theta, c, phi } => {
                let read = |p: &PathBuf, key: &str| {
                    let f = Field::read_snapshot(p).map_err(|e| {
                        CliError::config(self.line_of(key), format!("{}: {e}", p.display()))
                    })?;
                    if *f.grid() != g {
                        return Err(CliError::config(
                            self.line_of(key),
                            format!("{}: grid differs from `grid.*`", p.display()),
                        ));
                    }
                    Ok(f)
                };
                State::new(
                    0.0,
                    read(theta, "initial.theta_file")?,
                    read(c, "initial.c_file")?,
                    read(phi, "initial.phi_file")?,
                )
                .map_err(|e| CliError::config(0, e))?
            }
            InitialPreset::EquilibriumPerturbed { amplitude, mode } => {
                let eq = eq.expect("validated: theta_bar present");
                let a = *amplitude;
                let shape: Vec<f64> = match mode {
                    PerturbationMode::Cosine(j) => {
                        let lx = g.length(0);
                        (0..g.len())
                            .map(|i| (*j as f64 * std::f64::consts::PI * g.center(i)[0] / lx).cos())
                            .collect()
                    }
                    PerturbationMode::Random => {
                        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                        let mut v: Vec<f64> =
                            (0..g.len()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
                        let mean = v.iter().sum::<f64>() / v.len() as f64;
                        v.iter_mut().for_each(|x| *x -= mean);
                        v
                    }
                };
                let field = |center: f64, clamp: bool| {
                    let vals = shape
                        .iter()
                        .map(|s| {
                            let x = center + a * s;
                            if clamp {
                                x.clamp(0.0, 1.0)
                            } else {
                                x
                            }
                        })
                        .collect();
                    Field::new(g, vals)
                        .map_err(|e| CliError::config(self.line_of("initial.amplitude"), e))
                };
                State::new(
                    0.0,
                    field(eq.theta_bar, false)?,
                    field(eq.c_bar, true)?,
                    field(eq.phi_bar, true)?,
                )
                .map_err(|e| CliError::config(0, e))?
            }
        };
        if !(state.theta.min() > 0.0) {
            return Err(CliError::config(
                self.line_of("initial.preset"),
                "initial temperature must be > 0 (H6)",
            ));
        }
        Ok(state)
    }

    pub fn theta_star_for(&self, initial: &State) -> f64 {
        self.theta_star.unwrap_or_else(|| initial.theta.min())
    }

    /// Configured step, or the largest admissible one for the scheme.
    pub fn step_controls(&self, initial: &State) -> Result<StepControls, CliError> {
        let dt = match self.dt {
            Some(dt) => dt,
            None => {
                let ceiling = theta_ceiling(initial, &self.model, &self.source, self.t_end);
                let limit = match self.scheme {
                    Scheme::ExplicitMonotone => cfl_limits(&self.model, &self.grid, ceiling),
                    Scheme::Imex => imex_limits(&self.model, ceiling),
                }
                .map_err(|e| CliError::config(0, e))?;
                if self.t_end > 0.0 {
                    limit.min(self.t_end)
                } else {
                    limit
                }
            }
        };
        Ok(StepControls {
            dt,
            scheme: self.scheme,
            t_end: self.t_end,
            snapshot_every: self.snapshot_every,
        })
    }
}

/// Command-line overrides shared by every subcommand.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

fn load_with(path: &Path, ov: &Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(out) = &ov.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = ov.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn plot_script(has_energy: bool) -> String {
    let mut s = String::from(
        "set datafile separator ','\n\
         set key autotitle columnhead\n\
         set xlabel 't'\n\
         set multiplot layout 2,2\n\
         plot 'diagnostics.csv' using 1:2 with lines, '' using 1:3 with lines\n\
         plot 'diagnostics.csv' using 1:4 with lines, '' using 1:5 with lines, '' using 1:6 with lines, '' using 1:7 with lines\n\
         plot 'diagnostics.csv' using 1:8 with lines\n",
    );
    if has_energy {
        s.push_str(
            "set logscale y\nplot 'diagnostics.csv' using 1:9 with lines\nunset logscale y\n",
        );
    }
    s.push_str("unset multiplot\n");
    s
}

/// Outcome of a simulation with everything downstream commands need.
pub struct RunOutcome {
    pub config: RunConfig,
    pub equilibrium: Option<EquilibriumState>,
    pub hypotheses: Vec<CheckReport>,
    pub theta_star: f64,
    pub trajectory: Trajectory,
}

/// Shared body of `run` and `verify`: hypotheses, simulation and artifacts.
pub fn simulate(cfg: RunConfig) -> Result<RunOutcome, CliError> {
    let eq = cfg.equilibrium_state()?;
    let initial = cfg.initial_state(eq.as_ref())?;
    let theta_star = cfg.theta_star_for(&initial);
    let stability = eq.as_ref().map(|e| StabilitySetup {
        equilibrium: e,
        m_f: cfg.m_f_for(e),
    });
    let hypotheses = validate_hypotheses(&cfg.model, &cfg.source, &initial, theta_star, stability);
    let controls = cfg.step_controls(&initial)?;
    let trajectory = run(&initial, &cfg.model, &cfg.source, &controls, eq.as_ref())
        .map_err(|e| CliError::solver(&e))?;

    let out = &cfg.out_dir;
    prepare_out(out)?;
    write(&out.join("effective.cfg"), &cfg.to_config_string())?;
    write(&out.join("hypotheses.csv"), &reports_csv(&hypotheses))?;
    write(&out.join("diagnostics.csv"), &trajectory.diagnostics_csv())?;
    let snaps = out.join("snapshots");
    prepare_out(&snaps)?;
    trajectory
        .write_snapshots(&snaps)
        .map_err(|e| CliError::io(&snaps, e))?;
    write(&out.join("plot.gp"), &plot_script(eq.is_some()))?;

    Ok(RunOutcome {
        config: cfg,
        equilibrium: eq,
        hypotheses,
        theta_star,
        trajectory,
    })
}

fn print_reports(reports: &[CheckReport]) {
    for r in reports {
        println!("{r}");
    }
}

pub fn cmd_run(config: &Path, ov: &Overrides) -> Result<i32, CliError> {
    let outcome = simulate(load_with(config, ov)?)?;
    for r in outcome.hypotheses.iter().filter(|r| !r.passed) {
        eprintln!(
            "warning: hypothesis {} not satisfied: {}",
            r.name, r.details
        );
    }
    let traj = &outcome.trajectory;
    let mut report = format!(
        "scheme={} dt={} steps={} t_end={} snapshots={}\n",
        traj.scheme.name(),
        traj.dt,
        traj.diagnostics.len() - 1,
        traj.t_end(),
        traj.snapshots.len()
    );
    if outcome.equilibrium.is_some() && traj.diagnostics.len() > 2 {
        match fit_decay_rate(traj) {
            Ok(fit) => report.push_str(&format!("{fit}\n")),
            Err(e) => report.push_str(&format!("kappa_fit unavailable: {e}\n")),
        }
    }
    print!("{report}");
    write(&outcome.config.out_dir.join("report.txt"), &report)?;
    Ok(EXIT_OK)
}

pub fn cmd_equilibrium(config: &Path, ov: &Overrides) -> Result<i32, CliError> {
    let cfg = load_with(config, ov)?;
    let theta_bar = cfg
        .theta_bar
        .ok_or_else(|| CliError::config(0, "`equilibrium.theta_bar` is required"))?;
    let eq = build_equilibrium(theta_bar, &cfg.model).map_err(CliError::equilibrium)?;
    println!("theta_bar = {}", eq.theta_bar);
    println!("c_bar = {}", eq.c_bar);
    for r in &eq.roots {
        let tag = if r.phi == eq.phi_bar {
            " (selected)"
        } else {
            ""
        };
        println!(
            "phi_root = {} F'' = {} {}{tag}",
            r.phi,
            r.curvature,
            if r.is_stable() { "stable" } else { "unstable" }
        );
    }
    println!("residuals = {:e}, {:e}", eq.residual_c, eq.residual_phi);
    let m_f = cfg.m_f_for(&eq);
    let terms = coupling_threshold_terms(&cfg.model, m_f).map_err(CliError::equilibrium)?;
    let alpha0 = coupling_threshold(&cfg.model, m_f).map_err(CliError::equilibrium)?;
    println!("m_F = {m_f}");
    println!(
        "alpha0 = {alpha0} (terms {} {} {} {})",
        terms[0], terms[1], terms[2], terms[3]
    );
    if !eq.stable {
        return Err(CliError::equilibrium(format!(
            "selected root phi_bar = {} has F'' = {} <= 0",
            eq.phi_bar, eq.f_second_at_phibar
        )));
    }
    Ok(EXIT_OK)
}

pub fn cmd_verify(config: &Path, ov: &Overrides) -> Result<i32, CliError> {
    let outcome = simulate(load_with(config, ov)?)?;
    let cfg = &outcome.config;
    let checks = theorem_suite(
        &outcome.trajectory,
        &cfg.model,
        &cfg.source,
        outcome.theta_star,
        outcome.equilibrium.as_ref(),
    );
    print_reports(&outcome.hypotheses);
    print_reports(&checks);
    let mut all = outcome.hypotheses.clone();
    all.extend(checks.iter().cloned());
    write(&cfg.out_dir.join("checks.csv"), &reports_csv(&all))?;
    let failed: Vec<&str> = checks
        .iter()
        .filter(|r| r.applicable && !r.passed)
        .map(|r| r.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(EXIT_OK)
    } else {
        Err(CliError {
            code: EXIT_VERIFICATION,
            message: format!("verification failed: {}", failed.join(", ")),
        })
    }
}

/// Worker count from `THERMOPHASE_THREADS`, capped at the machine's parallelism.
pub fn worker_count() -> usize {
    let avail = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
    {
        Some(n) if n > 0 => n.min(avail),
        _ => avail,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub kappa_fit: f64,
    pub monotone_frac: f64,
    pub passed: bool,
}

/// One run per `alpha`; rows come back in input order. Failed runs yield NaN
/// rows rather than aborting the sweep.
pub fn sweep_alpha(cfg: &RunConfig, alphas: &[f64]) -> Result<(Vec<SweepRow>, f64), CliError> {
    let eq = cfg
        .equilibrium_state()?
        .ok_or_else(|| CliError::config(0, "sweep requires `equilibrium.theta_bar`"))?;
    let m_f = cfg.m_f_for(&eq);
    let alpha0 = coupling_threshold(&cfg.model, m_f).map_err(CliError::equilibrium)?;
    let initial = cfg.initial_state(Some(&eq))?;

    let one = |alpha: f64| -> SweepRow {
        let model = ModelParams { alpha, ..cfg.model };
        let point = RunConfig {
            model: model.clone(),
            ..cfg.clone()
        };
        let fit = point
            .step_controls(&initial)
            .ok()
            .and_then(|c| run(&initial, &model, &cfg.source, &c, Some(&eq)).ok())
            .and_then(|t| fit_decay_rate(&t).ok());
        match fit {
            Some(f) => SweepRow {
                alpha,
                kappa_fit: f.kappa,
                monotone_frac: f.monotone_fraction,
                passed: alpha0.exceeds(alpha)
                    && f.kappa > 0.0
                    && f.monotone_fraction == 1.0
                    && f.r2 >= 0.99,
            },
            None => SweepRow {
                alpha,
                kappa_fit: f64::NAN,
                monotone_frac: f64::NAN,
                passed: false,
            },
        }
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| CliError {
            code: EXIT_SOLVER,
            message: format!("thread pool: {e}"),
        })?;
    let rows = pool.install(|| alphas.par_iter().map(|&a| one(a)).collect());
    Ok((rows, alpha0.finite().unwrap_or(f64::INFINITY)))
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("alpha,kappa_fit,monotone_frac,passed\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.alpha, r.kappa_fit, r.monotone_frac, r.passed
        );
    }
    s
}

pub fn cmd_sweep_alpha(
    config: &Path,
    ov: &Overrides,
    alphas: Option<&[f64]>,
) -> Result<i32, CliError> {
    let cfg = load_with(config, ov)?;
    let alphas = alphas
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| cfg.sweep_alphas.clone());
    if alphas.is_empty() {
        return Err(CliError::config(0, "no alphas given (set `sweep.alphas`)"));
    }
    let (rows, alpha0) = sweep_alpha(&cfg, &alphas)?;
    let csv = sweep_csv(&rows);
    prepare_out(&cfg.out_dir)?;
    write(&cfg.out_dir.join("sweep.csv"), &csv)?;
    write(&cfg.out_dir.join("effective.cfg"), &cfg.to_config_string())?;
    write(
        &cfg.out_dir.join("sweep.gp"),
        &format!(
            "set datafile separator ','\nset xlabel 'alpha'\nset ylabel 'kappa_fit'\nset arrow from {a},graph 0 to {a},graph 1 nohead\nplot 'sweep.csv' using 1:2 with linespoints title 'kappa_fit'\n",
            a = if alpha0.is_finite() { alpha0 } else { 0.0 }
        ),
    )?;
    println!("alpha0 = {alpha0}");
    print!("{csv}");
    Ok(EXIT_OK)
}

fn default_dts(cfg: &RunConfig, preset: &SmoothPreset) -> Result<Vec<f64>, CliError> {
    if !cfg.convergence.dts.is_empty() {
        return Ok(cfg.convergence.dts.clone());
    }
    let cells = &cfg.convergence.cells;
    let g =
        Grid::line(cells[cells.len() / 2], preset.length).map_err(|e| CliError::config(0, e))?;
    let theta_hat = preset.state(g).theta.max();
    let dt0 = cfl_limits(&preset.params, &g, theta_hat).map_err(|e| CliError::config(0, e))?;
    // steps must divide t_end evenly so no level takes a shortened last step
    let steps = (preset.t_end / dt0).ceil();
    let dt0 = preset.t_end / steps;
    Ok(vec![dt0, dt0 / 2.0, dt0 / 4.0])
}

pub fn cmd_convergence(config: &Path, ov: &Overrides) -> Result<i32, CliError> {
    let cfg = load_with(config, ov)?;
    let preset = SmoothPreset {
        params: cfg.model.clone(),
        length: cfg.grid.length(0),
        theta_ref: cfg.convergence.theta_ref,
        t_end: cfg.convergence.t_end,
    };
    let dts = default_dts(&cfg, &preset)?;
    let cells = &cfg.convergence.cells;
    let space = spatial_convergence(&preset, cells).map_err(|e| CliError::solver(&e))?;
    let time = temporal_convergence(&preset, cells[cells.len() / 2], &dts)
        .map_err(|e| CliError::solver(&e))?;
    let reports = convergence_study(&preset, cells, &dts).map_err(|e| CliError::solver(&e))?;

    let mut csv = String::from("kind,level,difference,order\n");
    for (kind, res) in [("space", &space), ("time", &time)] {
        for (i, d) in res.differences.iter().enumerate() {
            let order = if i == 0 {
                String::new()
            } else {
                res.orders
                    .get(i - 1)
                    .map_or(String::new(), |o| o.to_string())
            };
            let _ = writeln!(csv, "{kind},{i},{d},{order}");
        }
    }
    prepare_out(&cfg.out_dir)?;
    write(&cfg.out_dir.join("convergence.csv"), &csv)?;
    write(&cfg.out_dir.join("effective.cfg"), &cfg.to_config_string())?;
    print!("{csv}");
    print_reports(&reports);
    if reports.iter().all(|r| r.passed) {
        Ok(EXIT_OK)
    } else {
        Err(CliError {
            code: EXIT_VERIFICATION,
            message: "observed orders outside the expected brackets".into(),
        })
    }
}
