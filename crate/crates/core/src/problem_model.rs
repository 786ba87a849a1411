//! Problem description, config-file parsing and validation.
//!
//! Config grammar (line oriented):
//!
//! ```text
//! # comment
//! [section]
//! key = value            # arrays are comma separated
//! ```
//!
//! Sections and keys:
//!
//! * `[problem]` `alpha`, `chi` (`0`/`dirichlet` or `1`/`neumann`), `T`
//! * `[domain]` `kind = interval` with `a`, `b`; or `kind = rectangle` with `lx`, `ly`
//! * `[coefficients]` `rho`, `a`, `q` as expressions in `x` (and `y`)
//! * `[data]`
//!   * `f` one expression in `t` per boundary component (interval: left, right;
//!     rectangle: bottom, right, top, left), or per component `f<c>_samples`,
//!     `f<c>_interp` (0 or 1), `f<c>_smooth` (derivative order allowed)
//!   * `F` an expression in `t`, `x`, `y`; or separable `F_time` (signal, or
//!     `F_time_samples` ...) times `F_shape` (expression in `x`, `y`)
//!   * `u0`, `u1` expressions in `x`, `y`; or `u0_nodal` / `u0_modes` (same for `u1`)
//! * `[solver]` `modes`, `mesh`, `steps`, `reconstruction` (`truncated`/`lifted`)
//! * `[compat]` `tol`
//! * `[oracle]` `steps`, `mesh`, `nodes`
//! * `[laplace]` `p`
//! * `[regularity]` `order`
//! * `[monitor]` `kind` (`t1a`/`c1a`), `draws`, `seed`, `theta`, `r`, `epsilon`
//! * `[ml]` `alpha`, `beta`, `z`

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::expr::{Expr, Point, Var};
use crate::spectral_basis::{BoundaryKind, Coefficients, Domain, Mesh};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("{key}: {msg}")]
    Field { key: String, msg: String },
    #[error("derivative of order {order} unavailable (signal supports up to {available})")]
    DerivativeUnavailable { order: u8, available: u8 },
}

fn field_err(key: &str, msg: impl Into<String>) -> ProblemError {
    ProblemError::Field {
        key: key.to_string(),
        msg: msg.into(),
    }
}

/// Scalar signal of time.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeSignal {
    Closed(Expr),
    /// Uniform samples on `[0, horizon]`, piecewise constant (`interp = 0`)
    /// or linear (`interp = 1`); `smooth` is the highest derivative order the
    /// user vouches for.
    Samples {
        values: Vec<f64>,
        horizon: f64,
        interp: u8,
        smooth: u8,
    },
}

impl TimeSignal {
    pub fn zero() -> Self {
        TimeSignal::Closed(Expr::constant(0.0))
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeSignal::Closed(e) => e.eval(Point::t(t)),
            TimeSignal::Samples {
                values,
                horizon,
                interp,
                ..
            } => interpolate(values, *horizon, *interp, t),
        }
    }

    pub fn max_derivative(&self) -> u8 {
        match self {
            TimeSignal::Closed(_) => 3,
            TimeSignal::Samples { smooth, .. } => *smooth,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            TimeSignal::Closed(Expr::Num(v)) => *v == 0.0,
            TimeSignal::Samples { values, .. } => values.iter().all(|v| *v == 0.0),
            _ => false,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        match self {
            TimeSignal::Closed(e) => TimeSignal::Closed(e.scaled(c)),
            TimeSignal::Samples {
                values,
                horizon,
                interp,
                smooth,
            } => TimeSignal::Samples {
                values: values.iter().map(|v| c * v).collect(),
                horizon: *horizon,
                interp: *interp,
                smooth: *smooth,
            },
        }
    }

    /// Closed-form `order`-th derivative, when one exists.
    pub fn derivative_expr(&self, order: u8) -> Option<Expr> {
        match self {
            TimeSignal::Closed(e) => Some(e.nth_derivative(Var::T, order as usize)),
            TimeSignal::Samples { .. } => None,
        }
    }
}

fn interpolate(values: &[f64], horizon: f64, interp: u8, t: f64) -> f64 {
    let n = values.len();
    if n == 1 {
        return values[0];
    }
    let h = horizon / (n - 1) as f64;
    let s = (t / h).clamp(0.0, (n - 1) as f64);
    let i = (s.floor() as usize).min(n - 2);
    if interp == 0 {
        return if s >= (n - 1) as f64 { values[n - 1] } else { values[s.floor() as usize] };
    }
    let w = s - i as f64;
    values[i] * (1.0 - w) + values[i + 1] * w
}

/// Second-order differences at the nodes of a uniform sample sequence.
fn node_derivative(v: &[f64], h: f64) -> Vec<f64> {
    let n = v.len();
    if n < 3 {
        let d = if n == 2 { (v[1] - v[0]) / h } else { 0.0 };
        return vec![d; n];
    }
    let mut d = vec![0.0; n];
    d[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
    d[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h);
    for i in 1..n - 1 {
        d[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
    }
    d
}

/// Time derivative of order 1..=3 of a signal.
pub fn signal_derivative(sig: &TimeSignal, order: u8, t: f64) -> Result<f64, ProblemError> {
    if order == 0 {
        return Ok(sig.eval(t));
    }
    if order > sig.max_derivative() {
        return Err(ProblemError::DerivativeUnavailable {
            order,
            available: sig.max_derivative(),
        });
    }
    match sig {
        TimeSignal::Closed(e) => Ok(e.nth_derivative(Var::T, order as usize).eval(Point::t(t))),
        TimeSignal::Samples { values, horizon, .. } => {
            let h = horizon / (values.len().max(2) - 1) as f64;
            let mut d = values.clone();
            for _ in 0..order {
                d = node_derivative(&d, h);
            }
            Ok(interpolate(&d, *horizon, 1, t))
        }
    }
}

/// Spatial field.
#[derive(Debug, Clone, PartialEq)]
pub enum SpatialData {
    Closed(Expr),
    /// Nodal samples on a uniform grid over the domain (x fastest).
    Nodal(Vec<f64>),
    /// Coefficients against the eigenbasis (rough data).
    Modes(Vec<f64>),
}

impl SpatialData {
    pub fn scaled(&self, c: f64) -> Self {
        match self {
            SpatialData::Closed(e) => SpatialData::Closed(e.scaled(c)),
            SpatialData::Nodal(v) => SpatialData::Nodal(v.iter().map(|x| c * x).collect()),
            SpatialData::Modes(v) => SpatialData::Modes(v.iter().map(|x| c * x).collect()),
        }
    }

    pub fn zero() -> Self {
        SpatialData::Closed(Expr::constant(0.0))
    }

    /// Nodal values on `mesh`; `None` for modal data. Nodal samples of a
    /// different 1-D resolution are linearly interpolated with a warning.
    pub fn nodal_on(&self, mesh: &Mesh) -> Result<Option<Vec<f64>>, ProblemError> {
        match self {
            SpatialData::Closed(e) => Ok(Some(mesh.sample(e))),
            SpatialData::Modes(_) => Ok(None),
            SpatialData::Nodal(v) => {
                let nn = mesh.node_count();
                if v.len() == nn {
                    return Ok(Some(v.clone()));
                }
                if mesh.ny != 0 || v.len() < 2 {
                    return Err(field_err(
                        "nodal",
                        format!("{} samples do not match the {nn}-node mesh", v.len()),
                    ));
                }
                log::warn!(
                    "nodal data with {} samples interpolated onto a {}-node mesh",
                    v.len(),
                    nn
                );
                Ok(Some(
                    (0..nn)
                        .map(|j| interpolate(v, 1.0, 1, j as f64 / (nn - 1) as f64))
                        .collect(),
                ))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Field(Expr),
    Separable { time: TimeSignal, shape: SpatialData },
}

impl Source {
    pub fn scaled(&self, c: f64) -> Self {
        match self {
            Source::Field(e) => Source::Field(e.scaled(c)),
            Source::Separable { time, shape } => Source::Separable {
                time: time.scaled(c),
                shape: shape.clone(),
            },
        }
    }

    pub fn zero() -> Self {
        Source::Field(Expr::constant(0.0))
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Source::Field(Expr::Num(v)) => *v == 0.0,
            Source::Separable { time, .. } => time.is_zero(),
            _ => false,
        }
    }

    pub fn max_derivative(&self) -> u8 {
        match self {
            Source::Field(_) => 3,
            Source::Separable { time, .. } => time.max_derivative(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub alpha: f64,
    pub chi: BoundaryKind,
    pub horizon: f64,
    pub domain: Domain,
    pub coeffs: Coefficients,
    /// One signal per boundary component.
    pub boundary: Vec<TimeSignal>,
    pub source: Source,
    pub u0: SpatialData,
    pub u1: Option<SpatialData>,
}

impl Problem {
    /// Dirichlet problem on (0,1) with unit coefficients and zero data.
    pub fn unit_interval(alpha: f64, chi: BoundaryKind, horizon: f64) -> Self {
        Problem {
            alpha,
            chi,
            horizon,
            domain: Domain::Interval { a: 0.0, b: 1.0 },
            coeffs: Coefficients::constant(1.0, 1.0, 1.0),
            boundary: vec![TimeSignal::zero(), TimeSignal::zero()],
            source: Source::zero(),
            u0: SpatialData::zero(),
            u1: if alpha > 1.0 { Some(SpatialData::zero()) } else { None },
        }
    }

    /// Same problem with every datum multiplied by `c`.
    pub fn scaled_data(&self, c: f64) -> Self {
        Problem {
            boundary: self.boundary.iter().map(|f| f.scaled(c)).collect(),
            source: self.source.scaled(c),
            u0: self.u0.scaled(c),
            u1: self.u1.as_ref().map(|u| u.scaled(c)),
            ..self.clone()
        }
    }

    /// Full invariant check; every load goes through this.
    pub fn validate(&self) -> Result<(), ProblemError> {
        let a = self.alpha;
        if !a.is_finite() || a <= 0.0 || a >= 2.0 {
            return Err(field_err("problem.alpha", format!("alpha={a} outside (0,1) or (1,2)")));
        }
        if a == 1.0 {
            return Err(field_err("problem.alpha", "alpha=1 excluded"));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(field_err("problem.T", format!("horizon T={} must be positive", self.horizon)));
        }
        match (a > 1.0, &self.u1) {
            (true, None) => return Err(field_err("data.u1", "u1 required for alpha>1")),
            (false, Some(_)) => return Err(field_err("data.u1", "u1 must be absent for alpha<1")),
            _ => {}
        }
        let comps = self.domain.components();
        if self.boundary.len() != comps {
            return Err(field_err(
                "data.f",
                format!("expected {comps} boundary signals, got {}", self.boundary.len()),
            ));
        }
        for (c, sig) in self.boundary.iter().enumerate() {
            validate_signal(&format!("data.f{c}"), sig)?;
        }
        match &self.domain {
            Domain::Interval { a, b } => {
                if !(a.is_finite() && b.is_finite() && b > a) {
                    return Err(field_err("domain", format!("interval ({a}, {b}) is empty")));
                }
            }
            Domain::Rectangle { lx, ly } => {
                if !(lx.is_finite() && ly.is_finite() && *lx > 0.0 && *ly > 0.0) {
                    return Err(field_err("domain", "rectangle sides must be positive"));
                }
                if !self.coeffs.is_constant() {
                    return Err(field_err("coefficients", "rectangles support constant coefficients only"));
                }
            }
        }
        self.validate_coefficients()?;
        match &self.source {
            Source::Field(e) => {
                let v = e.eval(Point::txy(0.0, 0.0, 0.0));
                if !v.is_finite() {
                    return Err(field_err("data.F", "not finite at t=0"));
                }
            }
            Source::Separable { time, shape } => {
                validate_signal("data.F_time", time)?;
                validate_spatial("data.F_shape", shape)?;
            }
        }
        validate_spatial("data.u0", &self.u0)?;
        if let Some(u1) = &self.u1 {
            validate_spatial("data.u1", u1)?;
        }
        Ok(())
    }

    fn validate_coefficients(&self) -> Result<(), ProblemError> {
        let pts: Vec<(f64, f64)> = match self.domain {
            Domain::Interval { a, b } => (0..=400).map(|i| (a + (b - a) * i as f64 / 400.0, 0.0)).collect(),
            Domain::Rectangle { lx, ly } => {
                let mut v = Vec::new();
                for j in 0..=40 {
                    for i in 0..=40 {
                        v.push((lx * i as f64 / 40.0, ly * j as f64 / 40.0));
                    }
                }
                v
            }
        };
        let checks: [(&str, &Expr, &str); 3] = [
            ("coefficients.rho", &self.coeffs.rho, "density must satisfy rho >= rho0 > 0"),
            ("coefficients.a", &self.coeffs.a, "ellipticity requires a >= c > 0"),
            ("coefficients.q", &self.coeffs.q, "positivity requires q >= q0 > 0"),
        ];
        for (key, e, rule) in checks {
            if e.depends_on(Var::T) {
                return Err(field_err(key, "coefficients must not depend on t"));
            }
            let min = pts
                .iter()
                .map(|&(x, y)| e.eval(Point::xy(x, y)))
                .fold(f64::INFINITY, |m, v| if v.is_nan() { f64::NAN } else { m.min(v) });
            if !min.is_finite() || min <= 0.0 {
                return Err(field_err(key, format!("{rule}; found minimum {min}")));
            }
        }
        Ok(())
    }

    /// Problem with `u0` replaced.
    pub fn with_u0(&self, u0: SpatialData) -> Problem {
        Problem { u0, ..self.clone() }
    }
}

fn validate_signal(key: &str, sig: &TimeSignal) -> Result<(), ProblemError> {
    match sig {
        TimeSignal::Closed(e) => {
            if e.depends_on(Var::X) || e.depends_on(Var::Y) {
                return Err(field_err(key, "boundary/time signal may only depend on t"));
            }
            if !e.eval(Point::t(0.0)).is_finite() {
                return Err(field_err(key, "not finite at t=0"));
            }
        }
        TimeSignal::Samples {
            values, interp, smooth, ..
        } => {
            if values.is_empty() {
                return Err(field_err(key, "no samples"));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(field_err(key, "samples must be finite"));
            }
            if *interp > 1 {
                return Err(field_err(key, "interpolation order must be 0 or 1"));
            }
            if *smooth > 3 {
                return Err(field_err(key, "smoothness order must be at most 3"));
            }
        }
    }
    Ok(())
}

fn validate_spatial(key: &str, d: &SpatialData) -> Result<(), ProblemError> {
    match d {
        SpatialData::Closed(e) => {
            if e.depends_on(Var::T) {
                return Err(field_err(key, "spatial field must not depend on t"));
            }
        }
        SpatialData::Nodal(v) | SpatialData::Modes(v) => {
            if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
                return Err(field_err(key, "values must be finite and non-empty"));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reconstruction {
    /// `sum_{n<=N} u_n phi_n`.
    Truncated,
    /// Elliptic lift of the current data plus the truncated remainder series.
    Lifted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MonitorKind {
    T1a,
    C1a,
}

/// Solver and diagnostic settings read alongside the problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub modes: usize,
    pub mesh: usize,
    pub steps: usize,
    pub reconstruction: Reconstruction,
    pub compat_tol: f64,
    pub oracle_steps: usize,
    pub oracle_mesh: usize,
    pub talbot_nodes: usize,
    pub laplace_p: Vec<f64>,
    pub regularity_order: u8,
    pub monitor_kind: MonitorKind,
    pub draws: usize,
    pub seed: u64,
    pub theta: f64,
    pub r: f64,
    pub epsilon: f64,
    pub ml_alpha: f64,
    pub ml_beta: f64,
    pub ml_z: Vec<f64>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            modes: 64,
            mesh: 800,
            steps: 2000,
            reconstruction: Reconstruction::Truncated,
            compat_tol: 1e-6,
            oracle_steps: 2000,
            oracle_mesh: 400,
            talbot_nodes: 32,
            laplace_p: vec![1.0, 2.0, 5.0],
            regularity_order: 1,
            monitor_kind: MonitorKind::T1a,
            draws: 20,
            seed: 42,
            theta: 0.5,
            r: 2.0,
            epsilon: 0.1,
            ml_alpha: 0.5,
            ml_beta: 1.0,
            ml_z: vec![-10.0, -1.0, 0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: Problem,
    pub settings: Settings,
}

/// Raw `section.key -> (value, line)` map.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, (String, usize)>,
}

const KNOWN_SECTIONS: [&str; 11] = [
    "problem",
    "domain",
    "coefficients",
    "data",
    "solver",
    "compat",
    "oracle",
    "laplace",
    "regularity",
    "monitor",
    "ml",
];

impl RawConfig {
    pub fn parse(text: &str) -> Result<RawConfig, ProblemError> {
        let mut entries = BTreeMap::new();
        let mut section: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ProblemError::Syntax {
                        line: line_no,
                        msg: "unterminated section header".into(),
                    })?
                    .trim()
                    .to_string();
                if !KNOWN_SECTIONS.contains(&name.as_str()) {
                    return Err(ProblemError::Syntax {
                        line: line_no,
                        msg: format!("unknown section [{name}]"),
                    });
                }
                section = Some(name);
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ProblemError::Syntax {
                line: line_no,
                msg: format!("expected 'key = value', found '{line}'"),
            })?;
            let sec = section.as_ref().ok_or_else(|| ProblemError::Syntax {
                line: line_no,
                msg: "key outside of any section".into(),
            })?;
            let key = format!("{sec}.{}", k.trim());
            if entries.insert(key.clone(), (v.trim().to_string(), line_no)).is_some() {
                return Err(ProblemError::Syntax {
                    line: line_no,
                    msg: format!("duplicate key {key}"),
                });
            }
        }
        Ok(RawConfig { entries })
    }

    /// Apply a `section.key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<(), ProblemError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| field_err(assignment, "override must look like section.key=value"))?;
        let k = k.trim();
        let sec = k.split('.').next().unwrap_or("");
        if !k.contains('.') || !KNOWN_SECTIONS.contains(&sec) {
            return Err(field_err(k, "override key must be section.key with a known section"));
        }
        self.entries.insert(k.to_string(), (v.trim().to_string(), 0));
        Ok(())
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(v, _)| v)
    }

    fn take_f64(&mut self, key: &str) -> Result<Option<f64>, ProblemError> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => parse_number(key, &v).map(Some),
        }
    }

    fn take_usize(&mut self, key: &str) -> Result<Option<usize>, ProblemError> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<usize>()
                .map(Some)
                .map_err(|_| field_err(key, format!("expected a non-negative integer, found '{v}'"))),
        }
    }

    fn take_list(&mut self, key: &str) -> Result<Option<Vec<f64>>, ProblemError> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v.split(',').map(|s| parse_number(key, s.trim())).collect::<Result<Vec<_>, _>>().map(Some),
        }
    }

    fn take_expr(&mut self, key: &str) -> Result<Option<Expr>, ProblemError> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => Expr::parse(&v).map(Some).map_err(|e| field_err(key, e.to_string())),
        }
    }

    fn finish(self) -> Result<(), ProblemError> {
        if let Some((k, (_, line))) = self.entries.into_iter().next() {
            let msg = format!("unknown key {k}");
            return Err(if line > 0 {
                ProblemError::Syntax { line, msg }
            } else {
                field_err(&k, msg)
            });
        }
        Ok(())
    }
}

fn parse_number(key: &str, s: &str) -> Result<f64, ProblemError> {
    // plain numbers first, then constant expressions such as `pi/2`
    if let Ok(v) = s.parse::<f64>() {
        return Ok(v);
    }
    let e = Expr::parse(s).map_err(|e| field_err(key, e.to_string()))?;
    if !e.is_constant() {
        return Err(field_err(key, format!("expected a number, found '{s}'")));
    }
    Ok(e.eval(Point::default()))
}

fn take_signal(raw: &mut RawConfig, key: &str, expr: Option<String>, horizon: f64) -> Result<Option<TimeSignal>, ProblemError> {
    let samples = raw.take_list(&format!("{key}_samples"))?;
    let interp = raw.take_usize(&format!("{key}_interp"))?;
    let smooth = raw.take_usize(&format!("{key}_smooth"))?;
    match (expr, samples) {
        (Some(_), Some(_)) => Err(field_err(key, "give either an expression or samples, not both")),
        (Some(e), None) => {
            if interp.is_some() || smooth.is_some() {
                return Err(field_err(key, "interp/smooth apply to sampled signals only"));
            }
            Ok(Some(TimeSignal::Closed(Expr::parse(&e).map_err(|err| field_err(key, err.to_string()))?)))
        }
        (None, Some(values)) => Ok(Some(TimeSignal::Samples {
            values,
            horizon,
            interp: interp.unwrap_or(1).min(255) as u8,
            smooth: smooth.unwrap_or(0).min(255) as u8,
        })),
        (None, None) => {
            if interp.is_some() || smooth.is_some() {
                return Err(field_err(key, "interp/smooth given without samples"));
            }
            Ok(None)
        }
    }
}

fn take_spatial(raw: &mut RawConfig, key: &str) -> Result<Option<SpatialData>, ProblemError> {
    let closed = raw.take_expr(key)?;
    let nodal = raw.take_list(&format!("{key}_nodal"))?;
    let modes = raw.take_list(&format!("{key}_modes"))?;
    let given = closed.is_some() as u8 + nodal.is_some() as u8 + modes.is_some() as u8;
    if given > 1 {
        return Err(field_err(key, "give exactly one of the expression, _nodal or _modes forms"));
    }
    Ok(closed
        .map(SpatialData::Closed)
        .or(nodal.map(SpatialData::Nodal))
        .or(modes.map(SpatialData::Modes)))
}

fn parse_problem(raw: &mut RawConfig) -> Result<Problem, ProblemError> {
    let alpha = raw.take_f64("problem.alpha")?.ok_or_else(|| field_err("problem.alpha", "missing"))?;
    let chi = match raw.take("problem.chi").as_deref() {
        Some("0") | Some("dirichlet") => BoundaryKind::Dirichlet,
        Some("1") | Some("neumann") => BoundaryKind::Neumann,
        Some(other) => return Err(field_err("problem.chi", format!("expected 0/dirichlet or 1/neumann, found '{other}'"))),
        None => return Err(field_err("problem.chi", "missing")),
    };
    let horizon = raw.take_f64("problem.T")?.ok_or_else(|| field_err("problem.T", "missing"))?;
    let kind = raw.take("domain.kind").unwrap_or_else(|| "interval".to_string());
    let domain = match kind.as_str() {
        "interval" => Domain::Interval {
            a: raw.take_f64("domain.a")?.unwrap_or(0.0),
            b: raw.take_f64("domain.b")?.unwrap_or(1.0),
        },
        "rectangle" => Domain::Rectangle {
            lx: raw.take_f64("domain.lx")?.unwrap_or(1.0),
            ly: raw.take_f64("domain.ly")?.unwrap_or(1.0),
        },
        other => return Err(field_err("domain.kind", format!("unknown kind '{other}'"))),
    };
    let one = || Expr::constant(1.0);
    let coeffs = Coefficients {
        rho: raw.take_expr("coefficients.rho")?.unwrap_or_else(one),
        a: raw.take_expr("coefficients.a")?.unwrap_or_else(one),
        q: raw.take_expr("coefficients.q")?.unwrap_or_else(one),
    };
    let comps = domain.components();
    let listed: Option<Vec<String>> = raw
        .take("data.f")
        .map(|v| v.split(',').map(|s| s.trim().to_string()).collect());
    if let Some(l) = &listed {
        if l.len() != comps {
            return Err(field_err("data.f", format!("expected {comps} comma-separated signals, got {}", l.len())));
        }
    }
    let mut boundary = Vec::with_capacity(comps);
    for c in 0..comps {
        let key = format!("data.f{c}");
        let expr = raw.take(&key);
        let from_list = listed.as_ref().map(|l| l[c].clone());
        if expr.is_some() && from_list.is_some() {
            return Err(field_err(&key, "component given both in data.f and individually"));
        }
        let sig = take_signal(raw, &key, expr.or(from_list), horizon)?;
        boundary.push(sig.unwrap_or_else(TimeSignal::zero));
    }
    let field = raw.take_expr("data.F")?;
    let time_expr = raw.take("data.F_time");
    let time = take_signal(raw, "data.F_time", time_expr, horizon)?;
    let shape = take_spatial(raw, "data.F_shape")?;
    let source = match (field, time, shape) {
        (Some(e), None, None) => Source::Field(e),
        (None, Some(time), Some(shape)) => Source::Separable { time, shape },
        (None, None, None) => Source::zero(),
        (Some(_), _, _) => return Err(field_err("data.F", "give either F or F_time with F_shape")),
        _ => return Err(field_err("data.F_time", "separable source needs both F_time and F_shape")),
    };
    let u0 = take_spatial(raw, "data.u0")?.unwrap_or_else(SpatialData::zero);
    let u1 = take_spatial(raw, "data.u1")?;
    let p = Problem {
        alpha,
        chi,
        horizon,
        domain,
        coeffs,
        boundary,
        source,
        u0,
        u1,
    };
    p.validate()?;
    Ok(p)
}

fn parse_settings(raw: &mut RawConfig) -> Result<Settings, ProblemError> {
    let mut s = Settings::default();
    if let Some(v) = raw.take_usize("solver.modes")? {
        s.modes = v;
    }
    if let Some(v) = raw.take_usize("solver.mesh")? {
        s.mesh = v;
        s.oracle_mesh = v;
    }
    if let Some(v) = raw.take_usize("solver.steps")? {
        s.steps = v;
    }
    match raw.take("solver.reconstruction").as_deref() {
        None => {}
        Some("truncated") => s.reconstruction = Reconstruction::Truncated,
        Some("lifted") => s.reconstruction = Reconstruction::Lifted,
        Some(o) => return Err(field_err("solver.reconstruction", format!("expected truncated or lifted, found '{o}'"))),
    }
    if let Some(v) = raw.take_f64("compat.tol")? {
        s.compat_tol = v;
    }
    if let Some(v) = raw.take_usize("oracle.steps")? {
        s.oracle_steps = v;
    }
    if let Some(v) = raw.take_usize("oracle.mesh")? {
        s.oracle_mesh = v;
    }
    if let Some(v) = raw.take_usize("oracle.nodes")? {
        s.talbot_nodes = v;
    }
    if let Some(v) = raw.take_list("laplace.p")? {
        s.laplace_p = v;
    }
    if let Some(v) = raw.take_usize("regularity.order")? {
        s.regularity_order = v.min(255) as u8;
    }
    match raw.take("monitor.kind").as_deref() {
        None => {}
        Some("t1a") => s.monitor_kind = MonitorKind::T1a,
        Some("c1a") => s.monitor_kind = MonitorKind::C1a,
        Some(o) => return Err(field_err("monitor.kind", format!("expected t1a or c1a, found '{o}'"))),
    }
    if let Some(v) = raw.take_usize("monitor.draws")? {
        s.draws = v;
    }
    if let Some(v) = raw.take_usize("monitor.seed")? {
        s.seed = v as u64;
    }
    if let Some(v) = raw.take_f64("monitor.theta")? {
        s.theta = v;
    }
    if let Some(v) = raw.take_f64("monitor.r")? {
        s.r = v;
    }
    if let Some(v) = raw.take_f64("monitor.epsilon")? {
        s.epsilon = v;
    }
    if let Some(v) = raw.take_f64("ml.alpha")? {
        s.ml_alpha = v;
    }
    if let Some(v) = raw.take_f64("ml.beta")? {
        s.ml_beta = v;
    }
    if let Some(v) = raw.take_list("ml.z")? {
        s.ml_z = v;
    }
    if s.modes == 0 || s.mesh == 0 || s.steps == 0 || s.oracle_steps == 0 || s.talbot_nodes == 0 {
        return Err(field_err("solver", "modes, mesh, steps and node counts must be positive"));
    }
    if !(s.compat_tol > 0.0) {
        return Err(field_err("compat.tol", "tolerance must be positive"));
    }
    if s.laplace_p.iter().any(|p| !(*p > 0.0)) {
        return Err(field_err("laplace.p", "Laplace variables must be positive"));
    }
    if !(1..=3).contains(&s.regularity_order) {
        return Err(field_err("regularity.order", "order must be 1, 2 or 3"));
    }
    if s.theta < 0.5 {
        return Err(field_err("monitor.theta", "theta must be at least 1/2"));
    }
    if !(s.r >= 1.0) || !(s.epsilon > 0.0) {
        return Err(field_err("monitor", "r >= 1 and epsilon > 0 required"));
    }
    Ok(s)
}

/// Parse and validate a problem; settings sections are accepted and ignored.
pub fn load_problem(text: &str) -> Result<Problem, ProblemError> {
    load_config(text, &[]).map(|c| c.problem)
}

/// Parse a full run configuration with `section.key=value` overrides.
pub fn load_config(text: &str, overrides: &[String]) -> Result<RunConfig, ProblemError> {
    let mut raw = RawConfig::parse(text)?;
    for o in overrides {
        raw.set(o)?;
    }
    let problem = parse_problem(&mut raw)?;
    let settings = parse_settings(&mut raw)?;
    raw.finish()?;
    Ok(RunConfig { problem, settings })
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ")
}

fn write_signal(out: &mut String, key: &str, sig: &TimeSignal) {
    match sig {
        TimeSignal::Closed(e) => {
            let _ = writeln!(out, "{key} = {e}");
        }
        TimeSignal::Samples {
            values, interp, smooth, ..
        } => {
            let _ = writeln!(out, "{key}_samples = {}", join(values));
            let _ = writeln!(out, "{key}_interp = {interp}");
            let _ = writeln!(out, "{key}_smooth = {smooth}");
        }
    }
}

fn write_spatial(out: &mut String, key: &str, d: &SpatialData) {
    match d {
        SpatialData::Closed(e) => {
            let _ = writeln!(out, "{key} = {e}");
        }
        SpatialData::Nodal(v) => {
            let _ = writeln!(out, "{key}_nodal = {}", join(v));
        }
        SpatialData::Modes(v) => {
            let _ = writeln!(out, "{key}_modes = {}", join(v));
        }
    }
}

/// Config text for `p` (problem sections only).
pub fn serialize(p: &Problem) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "[problem]");
    let _ = writeln!(s, "alpha = {:?}", p.alpha);
    let _ = writeln!(s, "chi = {}", p.chi.chi());
    let _ = writeln!(s, "T = {:?}", p.horizon);
    let _ = writeln!(s, "\n[domain]");
    match p.domain {
        Domain::Interval { a, b } => {
            let _ = writeln!(s, "kind = interval\na = {a:?}\nb = {b:?}");
        }
        Domain::Rectangle { lx, ly } => {
            let _ = writeln!(s, "kind = rectangle\nlx = {lx:?}\nly = {ly:?}");
        }
    }
    let _ = writeln!(s, "\n[coefficients]");
    let _ = writeln!(s, "rho = {}\na = {}\nq = {}", p.coeffs.rho, p.coeffs.a, p.coeffs.q);
    let _ = writeln!(s, "\n[data]");
    for (c, sig) in p.boundary.iter().enumerate() {
        write_signal(&mut s, &format!("f{c}"), sig);
    }
    match &p.source {
        Source::Field(e) => {
            let _ = writeln!(s, "F = {e}");
        }
        Source::Separable { time, shape } => {
            write_signal(&mut s, "F_time", time);
            write_spatial(&mut s, "F_shape", shape);
        }
    }
    write_spatial(&mut s, "u0", &p.u0);
    if let Some(u1) = &p.u1 {
        write_spatial(&mut s, "u1", u1);
    }
    s
}
