//! Modal series solution and its time derivatives.
//!
//! Mode `n` solves `d_t^alpha u_n + lambda_n u_n = g_n(t)` with
//! `g_n = -(-1)^chi <f, tau* phi_n> + <rho^{-1} F, phi_n>`, so
//!
//! ```text
//! u_n(t) = E_{a,1}(-l t^a) u0_n [+ t E_{a,2}(-l t^a) u1_n] + (k_n * g_n)(t),
//! k_n(t) = t^{a-1} E_{a,a}(-l t^a).
//! ```
//!
//! The convolution uses product integration: `g_n` is interpolated linearly
//! between grid nodes and the kernel is integrated exactly through its first
//! two moments. Data vanish beyond the problem horizon.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::elliptic_compat::fe_elliptic_field;
use crate::expr::{Expr, Point, Var};
use crate::mittag_leffler::{MlError, ModalFunctions};
use crate::problem_model::{signal_derivative, Problem, ProblemError, Reconstruction, Source, SpatialData, TimeSignal};
use crate::quadrature::adaptive_gk;
use crate::spectral_basis::{BasisError, BoundaryKind, SpectralBasis};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Ml(#[from] MlError),
    #[error("time grid: {0}")]
    Grid(String),
    #[error("basis/problem mismatch: {0}")]
    Mismatch(String),
    #[error("{0}")]
    Unsupported(String),
    #[error("Laplace variable p={0} must be positive")]
    NonPositiveP(f64),
}

/// Ratio of the geometric refinement near `t = 0`.
pub const GEOMETRIC_RATIO: f64 = 1.15;
/// Smallest positive grid time relative to the horizon.
pub const SMALLEST_STEP: f64 = 1e-8;

/// Output times: `0`, a geometric head `t_min * 1.15^i` below the uniform
/// step, then the lattice `k * step` for `k = 1..=steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    pub times: Vec<f64>,
    pub step: f64,
    pub steps: usize,
}

fn geometric_points(start: f64, stop: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut t = start;
    while t < stop * (1.0 - 1e-9) {
        out.push(t);
        t *= GEOMETRIC_RATIO;
    }
    out
}

impl TimeGrid {
    /// Geometric head from `1e-8 * horizon`, then `steps` uniform steps.
    pub fn new(horizon: f64, steps: usize) -> Result<Self, SolverError> {
        Self::from_parts(horizon / steps.max(1) as f64, steps, Some(SMALLEST_STEP * horizon))
    }

    /// Uniform lattice only.
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self, SolverError> {
        Self::from_parts(horizon / steps.max(1) as f64, steps, None)
    }

    pub fn from_parts(step: f64, steps: usize, head_start: Option<f64>) -> Result<Self, SolverError> {
        if steps == 0 || !(step.is_finite() && step > 0.0) {
            return Err(SolverError::Grid(format!("invalid step {step} x {steps}")));
        }
        let mut times = vec![0.0];
        if let Some(s) = head_start {
            if !(s > 0.0 && s < step) {
                return Err(SolverError::Grid(format!("head start {s} must lie in (0, {step})")));
            }
            times.extend(geometric_points(s, step));
        }
        times.extend((1..=steps).map(|k| k as f64 * step));
        Ok(TimeGrid { times, step, steps })
    }

    /// Insert a geometric cluster `t0 + start * 1.15^i` inside `(t0, t0 + step)`.
    pub fn refine_after(&mut self, t0: f64, start: f64) {
        let extra: Vec<f64> = geometric_points(start, self.step).into_iter().map(|d| t0 + d).collect();
        self.times.extend(extra);
        self.times.sort_by(f64::total_cmp);
        self.times.dedup();
    }

    /// Like `refine_after`, but keeps the geometric cluster going until its
    /// own spacing reaches `step`, so it overlaps the lattice.
    pub fn grade_after(&mut self, t0: f64, start: f64) {
        let mut d = start;
        while (GEOMETRIC_RATIO - 1.0) * d < self.step {
            let t = t0 + d;
            if t > self.end() {
                break;
            }
            self.times.push(t);
            d *= GEOMETRIC_RATIO;
        }
        self.times.sort_by(f64::total_cmp);
        self.times.dedup();
    }

    pub fn end(&self) -> f64 {
        self.steps as f64 * self.step
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Lattice index `k` when `t == k * step` exactly.
    pub fn lattice_index(&self, t: f64) -> Option<usize> {
        let k = (t / self.step).round();
        if k >= 1.0 && k as f64 * self.step == t {
            Some(k as usize)
        } else {
            None
        }
    }

    /// Indices of times in `[lo, hi]`.
    pub fn window(&self, lo: f64, hi: f64) -> Vec<usize> {
        (0..self.times.len())
            .filter(|&i| self.times[i] >= lo && self.times[i] <= hi)
            .collect()
    }

    pub fn describe(&self) -> String {
        let head = self
            .times
            .iter()
            .filter(|&&t| t > 0.0 && self.lattice_index(t).is_none())
            .count();
        format!("geometric-uniform(step={:?};steps={};extra_points={head})", self.step, self.steps)
    }
}

/// Per-mode signals on a time grid. `order` is the time-derivative order
/// (0 for the solution itself).
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSeries {
    pub alpha: f64,
    pub chi: BoundaryKind,
    pub order: u8,
    pub grid: TimeGrid,
    /// `values[n][k]`; derivative rows at `t = 0` may hold signed infinities.
    pub values: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// Data terms that contributed (for reports).
    pub contributions: Vec<String>,
    pub data_horizon: f64,
}

impl ModeSeries {
    pub fn modes(&self) -> usize {
        self.values.len()
    }

    /// Modal coefficient vector at time index `k`.
    pub fn at(&self, k: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[k]).collect()
    }

    /// CSV: a `#` header with alpha, chi, N and the grid, a column row,
    /// then `t, u_1(t), ..., u_N(t)`.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# alpha={:?} chi={} N={} order={} grid={} data_horizon={:?}",
            self.alpha,
            self.chi.chi(),
            self.modes(),
            self.order,
            self.grid.describe(),
            self.data_horizon
        );
        s.push('t');
        for n in 1..=self.modes() {
            let _ = write!(s, ",u_{n}");
        }
        s.push('\n');
        for (k, t) in self.grid.times.iter().enumerate() {
            let _ = write!(s, "{t:?}");
            for row in &self.values {
                let _ = write!(s, ",{}", fmt_num(row[k]));
            }
            s.push('\n');
        }
        s
    }
}

/// Shortest round-trip decimal; infinities as `inf` / `-inf`.
pub fn fmt_num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:?}")
    }
}

/// Coefficients of spatial data against the basis.
pub fn spatial_coefficients(d: &SpatialData, basis: &SpectralBasis) -> Result<Vec<f64>, SolverError> {
    let n = basis.len();
    match d.nodal_on(&basis.mesh)? {
        Some(v) => Ok(basis.project(&v)?),
        None => {
            let SpatialData::Modes(c) = d else { unreachable!() };
            if c.len() > n {
                log::warn!("{} modal coefficients truncated to {n}", c.len());
            }
            let mut out = vec![0.0; n];
            for (o, v) in out.iter_mut().zip(c) {
                *o = *v;
            }
            Ok(out)
        }
    }
}

/// `(<u0, phi_n>, <u1, phi_n>)`.
pub fn initial_coefficients(problem: &Problem, basis: &SpectralBasis) -> Result<(Vec<f64>, Option<Vec<f64>>), SolverError> {
    let u0 = spatial_coefficients(&problem.u0, basis)?;
    let u1 = match &problem.u1 {
        Some(d) => Some(spatial_coefficients(d, basis)?),
        None => None,
    };
    Ok((u0, u1))
}

/// Evaluates the modal forcing `g_n^{(m)}(t)` for all modes at once.
pub struct ModalForcing<'a> {
    problem: &'a Problem,
    basis: &'a SpectralBasis,
    field: Vec<Expr>,
    shape: Option<Vec<f64>>,
    nodes: Vec<(f64, f64)>,
}

impl<'a> ModalForcing<'a> {
    pub fn new(problem: &'a Problem, basis: &'a SpectralBasis) -> Result<Self, SolverError> {
        check_match(problem, basis)?;
        let nodes = basis.mesh.nodes();
        let (field, shape) = match &problem.source {
            Source::Field(e) => {
                let mut v = vec![e.clone()];
                for _ in 0..3 {
                    let next = v.last().map(|x: &Expr| x.derivative(Var::T)).unwrap_or_else(|| Expr::constant(0.0));
                    v.push(next);
                }
                (v, None)
            }
            Source::Separable { shape, .. } => {
                let nodal = shape
                    .nodal_on(&basis.mesh)?
                    .ok_or_else(|| SolverError::Unsupported("modal source shapes are not supported".into()))?;
                (Vec::new(), Some(basis.project_source(&nodal)?))
            }
        };
        Ok(ModalForcing {
            problem,
            basis,
            field,
            shape,
            nodes,
        })
    }

    /// Highest derivative order every data term supports.
    pub fn max_order(&self) -> u8 {
        let b = self.problem.boundary.iter().map(TimeSignal::max_derivative).min().unwrap_or(3);
        b.min(self.problem.source.max_derivative())
    }

    /// Boundary signal values (or derivatives) at `t`.
    pub fn boundary_values(&self, order: u8, t: f64) -> Result<Vec<f64>, SolverError> {
        self.problem
            .boundary
            .iter()
            .map(|s| signal_derivative(s, order, t).map_err(SolverError::from))
            .collect()
    }

    /// Nodal source values (or time derivatives) at `t`; `None` for a zero source.
    pub fn source_nodal(&self, order: u8, t: f64) -> Result<Option<Vec<f64>>, SolverError> {
        if self.problem.source.is_zero() {
            return Ok(None);
        }
        match &self.problem.source {
            Source::Field(_) => {
                let e = &self.field[order as usize];
                if let Expr::Num(v) = e {
                    if *v == 0.0 {
                        return Ok(None);
                    }
                }
                Ok(Some(self.nodes.iter().map(|&(x, y)| e.eval(Point::txy(t, x, y))).collect()))
            }
            Source::Separable { time, shape } => {
                let c = signal_derivative(time, order, t)?;
                let nodal = shape.nodal_on(&self.basis.mesh)?.unwrap_or_default();
                Ok(Some(nodal.into_iter().map(|v| c * v).collect()))
            }
        }
    }

    /// `g_n^{(order)}(t)` for every mode (no horizon cutoff).
    pub fn at(&self, order: u8, t: f64) -> Result<Vec<f64>, SolverError> {
        let sign = self.problem.chi.forcing_sign();
        let bvals = self.boundary_values(order, t)?;
        let mut g: Vec<f64> = self.basis.trace_pairings(&bvals).into_iter().map(|v| sign * v).collect();
        match &self.problem.source {
            Source::Separable { time, .. } => {
                let c = signal_derivative(time, order, t)?;
                if c != 0.0 {
                    let shape = self.shape.as_ref().expect("separable shape projection");
                    g.iter_mut().zip(shape).for_each(|(a, s)| *a += c * s);
                }
            }
            Source::Field(_) => {
                if let Some(nodal) = self.source_nodal(order, t)? {
                    let proj = self.basis.project_source(&nodal)?;
                    g.iter_mut().zip(proj).for_each(|(a, s)| *a += s);
                }
            }
        }
        Ok(g)
    }
}

fn check_match(problem: &Problem, basis: &SpectralBasis) -> Result<(), SolverError> {
    if problem.chi != basis.chi {
        return Err(SolverError::Mismatch(format!(
            "problem chi={} but basis chi={}",
            problem.chi.chi(),
            basis.chi.chi()
        )));
    }
    if problem.domain != basis.mesh.domain {
        return Err(SolverError::Mismatch("problem and basis domains differ".into()));
    }
    Ok(())
}

/// Kernel moments of one mode on the uniform lattice.
struct ModeKernel<'a> {
    mf: &'a ModalFunctions,
    lambda: f64,
    h: f64,
    p1: Vec<f64>,
    p2: Vec<f64>,
}

impl<'a> ModeKernel<'a> {
    fn new(mf: &'a ModalFunctions, lambda: f64, h: f64, kmax: usize) -> Self {
        let mut p1 = Vec::with_capacity(kmax + 1);
        let mut p2 = Vec::with_capacity(kmax + 1);
        for m in 0..=kmax {
            let t = m as f64 * h;
            p1.push(mf.moment1(lambda, t));
            p2.push(mf.moment2(lambda, t));
        }
        ModeKernel { mf, lambda, h, p1, p2 }
    }

    /// Weights of `g(jh)` and `g((j+1)h)` for output `kh`, `m = k - j >= 1`.
    fn lattice(&self, m: usize) -> (f64, f64) {
        let i0 = self.p1[m] - self.p1[m - 1];
        let wr = (self.p2[m] - self.p2[m - 1] - self.h * self.p1[m - 1]) / self.h;
        (i0 - wr, wr)
    }

    /// `(P1(r), P2(r))` for a lag `r >= 0`.
    fn moments(&self, r: f64) -> (f64, f64) {
        let r = r.max(0.0);
        (self.mf.moment1(self.lambda, r), self.mf.moment2(self.lambda, r))
    }

    /// Weights of the two ends of an interval of length `len` from the
    /// moments at the lags of its left (`a`) and right (`b`) ends.
    fn weights(&self, a: (f64, f64), b: (f64, f64), len: f64) -> (f64, f64) {
        let wr = (a.1 - b.1 - len * b.0) / len;
        (a.0 - b.0 - wr, wr)
    }

    /// Weights of `g(a)` and `g(b)` for the interval `[a, b]` and output `t >= b`.
    fn interval(&self, t: f64, a: f64, b: f64) -> (f64, f64) {
        self.weights(self.moments(t - a), self.moments(t - b), b - a)
    }
}

/// Where each output time sits relative to the data lattice.
#[derive(Debug, Clone, Copy)]
enum Slot {
    Origin,
    Lattice(usize),
    /// Off-lattice output; `Some(i)` indexes the extra data value at this time
    /// (only needed while the time is inside the data horizon).
    Off(Option<usize>),
}

/// Data layout shared by all modes: lattice nodes `0..=J` and the extra
/// off-lattice times inside the data horizon.
struct Layout {
    slots: Vec<Slot>,
    lattice_data: usize,
    extra_times: Vec<f64>,
}

fn layout(grid: &TimeGrid, data_horizon: f64) -> Result<Layout, SolverError> {
    let h = grid.step;
    let jr = data_horizon / h;
    let data_intervals = if grid.end() <= data_horizon * (1.0 + 1e-12) {
        grid.steps
    } else {
        if (jr - jr.round()).abs() > 1e-9 * jr.max(1.0) {
            return Err(SolverError::Grid(format!(
                "data horizon {data_horizon} is not a multiple of the step {h}"
            )));
        }
        jr.round() as usize
    };
    let mut slots = Vec::with_capacity(grid.len());
    let mut extra = Vec::new();
    for &t in &grid.times {
        if t == 0.0 {
            slots.push(Slot::Origin);
        } else if let Some(k) = grid.lattice_index(t) {
            slots.push(Slot::Lattice(k));
        } else if t < data_intervals as f64 * h {
            slots.push(Slot::Off(Some(extra.len())));
            extra.push(t);
        } else {
            slots.push(Slot::Off(None));
        }
    }
    Ok(Layout {
        slots,
        lattice_data: data_intervals,
        extra_times: extra,
    })
}

/// Forcing derivative of a given order on the layout, per mode:
/// `(lattice[n][j], extra[n][i])`.
type ModeData = (Vec<Vec<f64>>, Vec<Vec<f64>>);

fn sample_forcing(forcing: &ModalForcing<'_>, order: u8, grid: &TimeGrid, lay: &Layout, nmodes: usize) -> Result<ModeData, SolverError> {
    let lat_times: Vec<f64> = (0..=lay.lattice_data).map(|j| j as f64 * grid.step).collect();
    let eval = |ts: &[f64]| -> Result<Vec<Vec<f64>>, SolverError> {
        let cols: Vec<Vec<f64>> = ts
            .par_iter()
            .map(|&t| forcing.at(order, t))
            .collect::<Result<Vec<_>, _>>()?;
        let mut rows = vec![vec![0.0; ts.len()]; nmodes];
        for (j, col) in cols.iter().enumerate() {
            for n in 0..nmodes {
                rows[n][j] = col[n];
            }
        }
        Ok(rows)
    };
    Ok((eval(&lat_times)?, eval(&lay.extra_times)?))
}

/// Product-integration convolution of one mode's data on every output time.
fn convolve(kern: &ModeKernel<'_>, grid: &TimeGrid, lay: &Layout, lat: &[f64], extra: &[f64]) -> Vec<f64> {
    let h = grid.step;
    let jmax = lay.lattice_data;
    if lat.iter().all(|v| *v == 0.0) && extra.iter().all(|v| *v == 0.0) {
        return vec![0.0; grid.len()];
    }
    let wts: Vec<(f64, f64)> = (1..=grid.steps).map(|m| kern.lattice(m)).collect();
    grid.times
        .iter()
        .zip(&lay.slots)
        .map(|(&t, slot)| match *slot {
            Slot::Origin => 0.0,
            Slot::Lattice(k) => {
                let mut acc = 0.0;
                for j in 0..k.min(jmax) {
                    let (wl, wr) = wts[k - j - 1];
                    acc += wl * lat[j] + wr * lat[j + 1];
                }
                acc
            }
            Slot::Off(extra_idx) => {
                let full = ((t / h).floor() as usize).min(jmax);
                let mut acc = 0.0;
                // moments at t - jh are shared by neighbouring intervals
                let mut prev = kern.moments(t);
                for j in 0..full {
                    let next = kern.moments(t - (j + 1) as f64 * h);
                    let (wl, wr) = kern.weights(prev, next, h);
                    acc += wl * lat[j] + wr * lat[j + 1];
                    prev = next;
                }
                if let Some(i) = extra_idx {
                    let a = full as f64 * h;
                    let (wl, wr) = kern.interval(t, a, t);
                    acc += wl * lat[full] + wr * extra[i];
                }
                acc
            }
        })
        .collect()
}

/// Relative size below which a defect coefficient counts as exactly zero.
pub const DEFECT_ZERO: f64 = 1e-10;

fn clean(value: f64, scale: f64) -> f64 {
    if value.abs() <= DEFECT_ZERO * scale {
        0.0
    } else {
        value
    }
}

/// Series for the requested derivative orders (0 = solution). Data vanish
/// beyond `problem.horizon`; when `allow_extension` is false the grid must
/// stay inside `[0, T]`.
pub fn solve_orders(
    problem: &Problem,
    basis: &SpectralBasis,
    grid: &TimeGrid,
    orders: &[u8],
    allow_extension: bool,
) -> Result<Vec<ModeSeries>, SolverError> {
    problem.validate()?;
    let forcing = ModalForcing::new(problem, basis)?;
    if !allow_extension && grid.end() > problem.horizon * (1.0 + 1e-12) {
        return Err(SolverError::Grid(format!(
            "grid end {} lies outside [0, T={}]",
            grid.end(),
            problem.horizon
        )));
    }
    let alpha = problem.alpha;
    let top = orders.iter().copied().max().unwrap_or(0);
    if top > 3 {
        return Err(SolverError::Unsupported("time derivatives above third order".into()));
    }
    if top > forcing.max_order() {
        return Err(ProblemError::DerivativeUnavailable {
            order: top,
            available: forcing.max_order(),
        }
        .into());
    }
    let mf = ModalFunctions::new(alpha)?;
    let lay = layout(grid, problem.horizon)?;
    let nmodes = basis.len();
    let (u0, u1) = initial_coefficients(problem, basis)?;
    let u1v = u1.clone().unwrap_or_else(|| vec![0.0; nmodes]);
    // g^{(i)}(0) for the singular-term coefficients
    let mut at_zero = Vec::new();
    for i in 0..top {
        at_zero.push(forcing.at(i, 0.0)?);
    }
    let mut data = Vec::new();
    for &m in orders {
        data.push(sample_forcing(&forcing, m, grid, &lay, nmodes)?);
    }
    let lambdas = &basis.eigenvalues;
    let per_mode: Vec<Vec<Vec<f64>>> = (0..nmodes)
        .into_par_iter()
        .map(|n| {
            let lambda = lambdas[n];
            let kern = ModeKernel::new(&mf, lambda, grid.step, grid.steps);
            orders
                .iter()
                .zip(&data)
                .map(|(&m, (lat, extra))| {
                    let mut out = convolve(&kern, grid, &lay, &lat[n], &extra[n]);
                    if m == 0 {
                        for (v, &t) in out.iter_mut().zip(&grid.times) {
                            *v += mf.relax(lambda, t) * u0[n];
                            if alpha > 1.0 {
                                *v += mf.relax_t(lambda, t) * u1v[n];
                            }
                        }
                        return out;
                    }
                    // coefficients c_i of the terms t^{a-1-(m-1-i)} E_{a,a-(m-1-i)}
                    let mut coef = Vec::with_capacity(m as usize);
                    for i in 0..m as usize {
                        let gi = at_zero[i][n];
                        let c = match i {
                            0 => clean(gi - lambda * u0[n], gi.abs().max((lambda * u0[n]).abs())),
                            1 if alpha > 1.0 => clean(gi - lambda * u1v[n], gi.abs().max((lambda * u1v[n]).abs())),
                            _ => gi,
                        };
                        coef.push(c);
                    }
                    for (v, &t) in out.iter_mut().zip(&grid.times) {
                        if t == 0.0 {
                            *v = origin_value(alpha, m, &coef, u1v[n]);
                            continue;
                        }
                        for (i, c) in coef.iter().enumerate() {
                            if *c != 0.0 {
                                *v += c * mf.kernel_deriv(m as usize - 1 - i, lambda, t);
                            }
                        }
                        if m == 1 && alpha > 1.0 {
                            *v += mf.relax(lambda, t) * u1v[n];
                        }
                    }
                    out
                })
                .collect()
        })
        .collect();
    let mut contributions = Vec::new();
    if problem.boundary.iter().any(|s| !s.is_zero()) {
        contributions.push("boundary".to_string());
    }
    if !problem.source.is_zero() {
        contributions.push("source".to_string());
    }
    if u0.iter().any(|v| *v != 0.0) {
        contributions.push("u0".to_string());
    }
    if u1.as_ref().is_some_and(|v| v.iter().any(|x| *x != 0.0)) {
        contributions.push("u1".to_string());
    }
    Ok(orders
        .iter()
        .enumerate()
        .map(|(oi, &m)| ModeSeries {
            alpha,
            chi: problem.chi,
            order: m,
            grid: grid.clone(),
            values: per_mode.iter().map(|v| v[oi].clone()).collect(),
            eigenvalues: lambdas.clone(),
            contributions: contributions.clone(),
            data_horizon: problem.horizon,
        })
        .collect())
}

/// Value of the `m`-th derivative at `t = 0`: a signed infinity when a
/// singular term is present, else its finite limit.
fn origin_value(alpha: f64, m: u8, coef: &[f64], u1: f64) -> f64 {
    // term i carries the power a-1-(m-1-i) = a - m + i; the most singular
    // non-zero term decides the sign
    for (i, c) in coef.iter().enumerate() {
        let p = alpha - m as f64 + i as f64;
        if *c != 0.0 && p < 0.0 {
            return c.signum() * f64::INFINITY;
        }
    }
    if m == 1 && alpha > 1.0 {
        u1
    } else {
        0.0
    }
}

/// Solution series on a grid inside `[0, T]`.
pub fn solve_modes(problem: &Problem, basis: &SpectralBasis, grid: &TimeGrid) -> Result<ModeSeries, SolverError> {
    Ok(solve_orders(problem, basis, grid, &[0], false)?.remove(0))
}

pub fn first_derivative_modes(problem: &Problem, basis: &SpectralBasis, grid: &TimeGrid) -> Result<ModeSeries, SolverError> {
    Ok(solve_orders(problem, basis, grid, &[1], false)?.remove(0))
}

pub fn second_derivative_modes(problem: &Problem, basis: &SpectralBasis, grid: &TimeGrid) -> Result<ModeSeries, SolverError> {
    Ok(solve_orders(problem, basis, grid, &[2], false)?.remove(0))
}

pub fn third_derivative_modes(problem: &Problem, basis: &SpectralBasis, grid: &TimeGrid) -> Result<ModeSeries, SolverError> {
    Ok(solve_orders(problem, basis, grid, &[3], false)?.remove(0))
}

/// Closed-form modal Laplace transform with its pieces, so the algebraic
/// identity `denom * value = rhs` can be checked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceMode {
    pub value: f64,
    pub rhs: f64,
    pub denom: f64,
}

const LAPLACE_REL: f64 = 1e-12;

/// `int_0^T e^{-pt} s(t) dt`.
fn laplace_signal(sig: &TimeSignal, p: f64, horizon: f64) -> f64 {
    match sig {
        TimeSignal::Closed(e) => {
            if let Expr::Num(v) = e {
                return v * (-(-p * horizon).exp_m1()) / p;
            }
            adaptive_gk(|t| (-p * t).exp() * e.eval(Point::t(t)), 0.0, horizon, 1e-16, LAPLACE_REL)
        }
        TimeSignal::Samples { values, .. } => {
            // integrate piece by piece so kinks sit on interval ends
            let n = values.len().max(2) - 1;
            let h = horizon / n as f64;
            (0..n)
                .map(|i| {
                    let (a, b) = (i as f64 * h, (i + 1) as f64 * h);
                    adaptive_gk(|t| (-p * t).exp() * sig.eval(t), a, b, 1e-18, LAPLACE_REL)
                })
                .sum()
        }
    }
}

/// Modal Laplace transforms `L u_n(p)` for every mode.
pub fn mode_laplace_all(problem: &Problem, basis: &SpectralBasis, p: f64) -> Result<Vec<LaplaceMode>, SolverError> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(SolverError::NonPositiveP(p));
    }
    problem.validate()?;
    check_match(problem, basis)?;
    let t_end = problem.horizon;
    let (u0, u1) = initial_coefficients(problem, basis)?;
    let a = problem.alpha;
    let lf: Vec<f64> = problem.boundary.iter().map(|s| laplace_signal(s, p, t_end)).collect();
    let sign = problem.chi.forcing_sign();
    let mut rhs: Vec<f64> = basis.trace_pairings(&lf).into_iter().map(|v| sign * v).collect();
    if !problem.source.is_zero() {
        let src = match &problem.source {
            Source::Field(e) => {
                let nodal: Vec<f64> = basis
                    .mesh
                    .nodes()
                    .par_iter()
                    .map(|&(x, y)| adaptive_gk(|t| (-p * t).exp() * e.eval(Point::txy(t, x, y)), 0.0, t_end, 1e-16, LAPLACE_REL))
                    .collect();
                basis.project_source(&nodal)?
            }
            Source::Separable { time, shape } => {
                let c = laplace_signal(time, p, t_end);
                let nodal = shape
                    .nodal_on(&basis.mesh)?
                    .ok_or_else(|| SolverError::Unsupported("modal source shapes are not supported".into()))?;
                basis.project_source(&nodal)?.into_iter().map(|v| c * v).collect()
            }
        };
        rhs.iter_mut().zip(src).for_each(|(r, s)| *r += s);
    }
    Ok((0..basis.len())
        .map(|n| {
            let mut r = rhs[n] + p.powf(a - 1.0) * u0[n];
            if let Some(u1) = &u1 {
                r += p.powf(a - 2.0) * u1[n];
            }
            let denom = p.powf(a) + basis.eigenvalues[n];
            LaplaceMode {
                value: r / denom,
                rhs: r,
                denom,
            }
        })
        .collect())
}

/// Modal Laplace transform of mode `n` (1-based).
pub fn mode_laplace(problem: &Problem, basis: &SpectralBasis, n: usize, p: f64) -> Result<LaplaceMode, SolverError> {
    if n == 0 || n > basis.len() {
        return Err(BasisError::IndexOutOfRange { index: n, count: basis.len() }.into());
    }
    Ok(mode_laplace_all(problem, basis, p)?[n - 1])
}

/// Field values `u(t_k, x_j)` on the mesh nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldValues {
    pub times: Vec<f64>,
    pub nodes: Vec<(f64, f64)>,
    /// `values[k][j]`
    pub values: Vec<Vec<f64>>,
    /// Largest fraction of coefficient energy in the last 10% of modes.
    pub tail_fraction: f64,
}

/// Tail indicator threshold above which a warning is logged.
pub const TAIL_WARN: f64 = 1e-6;

impl FieldValues {
    /// CSV triples `t,x,value` (plus `y` on rectangles).
    pub fn to_csv(&self) -> String {
        let two_d = self.nodes.iter().any(|n| n.1 != 0.0);
        let mut s = String::from(if two_d { "t,x,y,value\n" } else { "t,x,value\n" });
        for (k, t) in self.times.iter().enumerate() {
            for (j, (x, y)) in self.nodes.iter().enumerate() {
                let v = fmt_num(self.values[k][j]);
                if two_d {
                    let _ = writeln!(s, "{t:?},{x:?},{y:?},{v}");
                } else {
                    let _ = writeln!(s, "{t:?},{x:?},{v}");
                }
            }
        }
        s
    }
}

fn tail_fraction(series: &ModeSeries) -> f64 {
    let n = series.modes();
    let start = n - (n / 10).max(1).min(n);
    let mut worst: f64 = 0.0;
    for k in 0..series.grid.len() {
        let (mut tail, mut total) = (0.0, 0.0);
        for (i, row) in series.values.iter().enumerate() {
            let v = row[k] * row[k];
            if !v.is_finite() {
                continue;
            }
            total += v;
            if i >= start {
                tail += v;
            }
        }
        if total > 0.0 {
            worst = worst.max(tail / total);
        }
    }
    worst
}

/// Reconstruct `u(t, x)` from a solution series.
///
/// `Truncated` sums `u_n phi_n`. `Lifted` (intervals) adds the part of the
/// discrete steady field `Y(t)` of the current data `(f(t), F(t))` lying
/// outside the first N modes: `u = P_N u + (I - P_N) Y`. The lift carries the
/// boundary values exactly and removes the slow `1/n` coefficient decay that
/// boundary data cause in the plain truncation.
pub fn evaluate_solution(
    series: &ModeSeries,
    basis: &SpectralBasis,
    problem: Option<&Problem>,
    mode: Reconstruction,
) -> Result<FieldValues, SolverError> {
    if series.order != 0 {
        return Err(SolverError::Unsupported("field reconstruction needs the order-0 series".into()));
    }
    if series.modes() != basis.len() {
        return Err(BasisError::Shape {
            expected: basis.len(),
            got: series.modes(),
        }
        .into());
    }
    let tail = tail_fraction(series);
    if tail > TAIL_WARN {
        log::warn!("truncation tail indicator {tail:e} exceeds {TAIL_WARN:e}");
    }
    let lifted = match (mode, problem) {
        (Reconstruction::Lifted, Some(p)) if basis.stiffness.is_some() => Some(p),
        (Reconstruction::Lifted, Some(_)) => {
            log::warn!("lifted reconstruction needs an interval basis; using truncation");
            None
        }
        (Reconstruction::Lifted, None) => {
            return Err(SolverError::Unsupported("lifted reconstruction needs the problem data".into()))
        }
        _ => None,
    };
    let forcing = match lifted {
        Some(p) => Some(ModalForcing::new(p, basis)?),
        None => None,
    };
    let values = series
        .grid
        .times
        .par_iter()
        .enumerate()
        .map(|(k, &t)| -> Result<Vec<f64>, SolverError> {
            let coeffs = series.at(k);
            let mut u = basis.reconstruct(&coeffs);
            if let (Some(fc), Some(p)) = (&forcing, lifted) {
                let (bv, src) = if t <= p.horizon {
                    (fc.boundary_values(0, t)?, fc.source_nodal(0, t)?)
                } else {
                    (vec![0.0; basis.components()], None)
                };
                let y = fe_elliptic_field(basis, &bv, src.as_deref())?;
                let yc = basis.project(&y)?;
                let py = basis.reconstruct(&yc);
                u.iter_mut().zip(y.iter().zip(&py)).for_each(|(a, (yv, pv))| *a += yv - pv);
            }
            Ok(u)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FieldValues {
        times: series.grid.times.clone(),
        nodes: basis.mesh.nodes(),
        values,
        tail_fraction: tail,
    })
}
