//! Regularity exponent fits, Laplace-characterization residuals, estimate
//! monitors, the trace-coefficient tail check and the spectral-vs-oracle
//! comparison.

use std::fmt::Write as _;

use rayon::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::elliptic_compat::compat_defect;
use crate::expr::Expr;
use crate::fd_oracle::{caputo_apply, fd_solve_l1, fd_solve_talbot, relative_l2_q, FdError, FdScheme};
use crate::problem_model::{MonitorKind, Problem, Reconstruction, Source, SpatialData, TimeSignal};
use crate::spectral_basis::{fractional_norm, lemma_l1_diagnostic, BasisError, SpectralBasis};
use crate::weak_solver::{evaluate_solution, fmt_num, mode_laplace_all, solve_orders, ModalForcing, ModeSeries, SolverError, TimeGrid, SMALLEST_STEP};

/// Fit window relative to the horizon.
pub const WINDOW: (f64, f64) = (1e-6, 1e-2);
/// Minimum number of grid points inside the window.
pub const MIN_FIT_POINTS: usize = 12;
/// Slopes at or above this count as bounded.
pub const BOUNDED_SLOPE: f64 = -0.05;
/// Allowed distance between a fitted and a predicted exponent.
pub const EXPONENT_TOL: f64 = 0.05;

/// Least-squares slope of `log v` against `log t` and the RMS residual.
pub fn fit_exponent(times: &[f64], values: &[f64]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, v)| **t > 0.0 && **v > 0.0 && v.is_finite())
        .map(|(t, v)| (t.ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let resid = (pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum::<f64>() / n).sqrt();
    Some((slope, resid))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Verdict {
    Bounded,
    Singular,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularityReport {
    pub order: u8,
    /// Fitted exponent; `None` for an all-zero signal.
    pub sigma: Option<f64>,
    pub residual: f64,
    pub points: usize,
    pub window: (f64, f64),
    /// Exponent implied by the data at `t = 0`; `None` means bounded.
    pub predicted: Option<f64>,
    pub verdict: Verdict,
}

impl RegularityReport {
    /// Fit and prediction tell the same story.
    pub fn consistent(&self) -> bool {
        match (self.predicted, self.verdict, self.sigma) {
            (None, Verdict::Bounded, _) => true,
            (Some(p), Verdict::Singular, Some(s)) => (s - p).abs() <= EXPONENT_TOL,
            _ => false,
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "derivative order: {}", self.order);
        let _ = writeln!(s, "norm: D(A^(-1/2)) modal norm");
        let _ = writeln!(s, "window: [{:e}, {:e}] ({} points)", self.window.0, self.window.1, self.points);
        match self.sigma {
            Some(v) => {
                let _ = writeln!(s, "fitted exponent: {v:.6} (rms residual {:.3e})", self.residual);
            }
            None => {
                let _ = writeln!(s, "fitted exponent: undefined (zero signal)");
            }
        }
        match self.predicted {
            Some(p) => {
                let _ = writeln!(s, "predicted exponent: {p:.6}");
            }
            None => {
                let _ = writeln!(s, "predicted: bounded");
            }
        }
        let v = match self.verdict {
            Verdict::Bounded => "bounded",
            Verdict::Singular => "singular",
        };
        let _ = writeln!(s, "verdict: {v}");
        let _ = writeln!(s, "consistent with prediction: {}", if self.consistent() { "yes" } else { "NO" });
        s
    }

    pub fn to_csv(&self) -> String {
        format!(
            "order,sigma,residual,points,window_lo,window_hi,predicted,verdict\n{},{},{},{},{},{},{},{}\n",
            self.order,
            self.sigma.map(fmt_num).unwrap_or_else(|| "nan".into()),
            fmt_num(self.residual),
            self.points,
            fmt_num(self.window.0),
            fmt_num(self.window.1),
            self.predicted.map(fmt_num).unwrap_or_else(|| "bounded".into()),
            match self.verdict {
                Verdict::Bounded => "bounded",
                Verdict::Singular => "singular",
            }
        )
    }
}

/// Norm signal `||d^m u(t)||_{D(A^{-1/2})}` on the series grid.
pub fn norm_signal(series: &ModeSeries) -> Result<Vec<f64>, BasisError> {
    (0..series.grid.len())
        .map(|k| fractional_norm(&series.at(k), &series.eigenvalues, -0.5))
        .collect()
}

/// Exponent of the `m`-th derivative near `t = 0` fitted on
/// `[1e-6 T, 1e-2 T]`; `predicted` comes from [`predicted_exponent`].
pub fn regularity_exponent(series: &ModeSeries, horizon: f64, predicted: Option<f64>) -> Result<RegularityReport, SolverError> {
    let window = (WINDOW.0 * horizon, WINDOW.1 * horizon);
    let idx = series.grid.window(window.0, window.1);
    if idx.len() < MIN_FIT_POINTS {
        return Err(SolverError::Grid(format!(
            "{} grid points in the fit window, at least {MIN_FIT_POINTS} required",
            idx.len()
        )));
    }
    let signal = norm_signal(series)?;
    let t: Vec<f64> = idx.iter().map(|&i| series.grid.times[i]).collect();
    let v: Vec<f64> = idx.iter().map(|&i| signal[i]).collect();
    let scale = v.iter().cloned().fold(0.0, f64::max);
    let degenerate = scale == 0.0 || v.iter().any(|x| !(*x > 1e-300 * scale));
    let (sigma, residual) = if degenerate {
        (None, 0.0)
    } else {
        match fit_exponent(&t, &v) {
            Some((s, r)) => (Some(s), r),
            None => (None, 0.0),
        }
    };
    let verdict = match sigma {
        Some(s) if s < BOUNDED_SLOPE => Verdict::Singular,
        _ => Verdict::Bounded,
    };
    Ok(RegularityReport {
        order: series.order,
        sigma,
        residual,
        points: idx.len(),
        window,
        predicted,
        verdict,
    })
}

/// Most singular exponent `alpha - m + i` among the terms of the `m`-th
/// derivative whose coefficients are non-zero at tolerance `tol`
/// (normalized by `1/lambda_n`); `None` when all such terms are bounded.
pub fn predicted_exponent(problem: &Problem, basis: &SpectralBasis, m: u8, tol: f64) -> Result<Option<f64>, SolverError> {
    if m == 0 {
        return Ok(None);
    }
    let alpha = problem.alpha;
    let report = compat_defect(problem, basis, tol)?;
    let forcing = ModalForcing::new(problem, basis)?;
    let norm_max = |v: &[f64]| v.iter().zip(&basis.eigenvalues).map(|(a, l)| a.abs() / l).fold(0.0, f64::max);
    for i in 0..m as usize {
        let power = alpha - m as f64 + i as f64;
        if power >= 0.0 {
            break;
        }
        let size = match i {
            0 => report.max_b,
            1 if alpha > 1.0 => report.max_e.unwrap_or(0.0),
            _ => norm_max(&forcing.at(i as u8, 0.0)?),
        };
        if size > tol {
            return Ok(Some(power));
        }
    }
    Ok(None)
}

/// Geometric grid for regularity fits: the head reaches below the window.
pub fn regularity_grid(horizon: f64, steps: usize) -> Result<TimeGrid, SolverError> {
    TimeGrid::new(horizon, steps)
}

/// One row of the Laplace-characterization check.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceRow {
    pub p: f64,
    /// `max_n |(p^a + lambda_n) L u_n - RHS_n| / max(|RHS_n|)`.
    pub algebraic: f64,
    /// `max_n |quadrature_n - L u_n| / max_n |L u_n|`.
    pub quadrature: f64,
    /// Tail bound added to the budget, same normalization.
    pub tail: f64,
    pub t_big: f64,
    pub pass: bool,
}

pub const ALGEBRAIC_TOL: f64 = 1e-13;
pub const QUADRATURE_TOL: f64 = 1e-4;
/// Uniform steps per horizon on the quadrature grid.
pub const LAPLACE_STEPS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceReport {
    pub rows: Vec<LaplaceRow>,
}

impl LaplaceReport {
    pub fn passes(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("p,algebraic,quadrature,tail_bound,t_big,pass\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                fmt_num(r.p),
                fmt_num(r.algebraic),
                fmt_num(r.quadrature),
                fmt_num(r.tail),
                fmt_num(r.t_big),
                r.pass
            );
        }
        s
    }

    pub fn render(&self) -> String {
        let mut s = String::from("Laplace characterization check\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "p={}: algebraic {:.3e} (tol {:e}), quadrature {:.3e} + tail {:.3e} (tol {:e}, T_big={}) -> {}",
                r.p,
                r.algebraic,
                ALGEBRAIC_TOL,
                r.quadrature,
                r.tail,
                QUADRATURE_TOL,
                r.t_big,
                if r.pass { "PASS" } else { "FAIL" }
            );
        }
        s
    }
}

/// Integral over `[times[0], times[last]]` of samples at arbitrary nodes:
/// quadratic interpolation on consecutive pairs of intervals.
pub fn integrate_samples(times: &[f64], values: &[f64]) -> f64 {
    let n = times.len();
    if n < 2 {
        return 0.0;
    }
    if n == 2 {
        return 0.5 * (times[1] - times[0]) * (values[0] + values[1]);
    }
    let panel = |i: usize| -> f64 {
        // integral over [t_i, t_{i+2}] of the quadratic through three points
        let (h0, h1) = (times[i + 1] - times[i], times[i + 2] - times[i + 1]);
        let (f0, f1, f2) = (values[i], values[i + 1], values[i + 2]);
        (h0 + h1) / 6.0 * ((2.0 - h1 / h0) * f0 + (h0 + h1).powi(2) / (h0 * h1) * f1 + (2.0 - h0 / h1) * f2)
    };
    let mut acc = 0.0;
    let mut i = 0;
    while i + 2 < n {
        acc += panel(i);
        i += 2;
    }
    if i + 1 < n {
        // last single interval: quadratic through the last three points
        let (a, b, c) = (n - 3, n - 2, n - 1);
        let (ta, tb, tc) = (times[a], times[b], times[c]);
        let (fa, fb, fc) = (values[a], values[b], values[c]);
        // integrate the Lagrange basis over [tb, tc]
        let la = |x0: f64, x1: f64, x2: f64| -> f64 {
            // int_{tb}^{tc} (x - x1)(x - x2) / ((x0 - x1)(x0 - x2)) dx
            let prim = |x: f64| x * x * x / 3.0 - (x1 + x2) * x * x / 2.0 + x1 * x2 * x;
            (prim(tc) - prim(tb)) / ((x0 - x1) * (x0 - x2))
        };
        acc += fa * la(ta, tb, tc) + fb * la(tb, ta, tc) + fc * la(tc, ta, tb);
    }
    acc
}

/// Algebraic and quadrature checks of the modal Laplace transforms.
pub fn laplace_residual(problem: &Problem, basis: &SpectralBasis, ps: &[f64]) -> Result<LaplaceReport, SolverError> {
    if let Some(&p) = ps.iter().find(|p| !(**p > 0.0)) {
        return Err(SolverError::NonPositiveP(p));
    }
    if ps.is_empty() {
        return Ok(LaplaceReport { rows: Vec::new() });
    }
    let t_end = problem.horizon;
    let h = t_end / LAPLACE_STEPS as f64;
    let t_big_of = |p: f64| ((t_end.max(20.0 / p)) / h - 1e-9).ceil() * h;
    let t_max = ps.iter().map(|&p| t_big_of(p)).fold(t_end, f64::max);
    let steps = (t_max / h).round() as usize;
    // graded clusters resolve the t^alpha layer at 0 and the data cut at T
    let mut grid = TimeGrid::from_parts(h, steps, Some(SMALLEST_STEP * t_end))?;
    grid.grade_after(0.0, SMALLEST_STEP * t_end);
    if steps > LAPLACE_STEPS {
        grid.grade_after(t_end, SMALLEST_STEP * t_end);
    }
    let series = solve_orders(problem, basis, &grid, &[0], true)?.remove(0);
    let mut rows = Vec::with_capacity(ps.len());
    for &p in ps {
        let modes = mode_laplace_all(problem, basis, p)?;
        let rhs_scale = modes.iter().map(|m| m.rhs.abs()).fold(0.0, f64::max);
        let algebraic = if rhs_scale == 0.0 {
            0.0
        } else {
            modes.iter().map(|m| (m.denom * m.value - m.rhs).abs()).fold(0.0, f64::max) / rhs_scale
        };
        let t_big = t_big_of(p);
        let last = series.grid.times.iter().rposition(|&t| t <= t_big * (1.0 + 1e-12)).unwrap_or(0);
        let times = &series.grid.times[..=last];
        let tail_from = times.iter().position(|&t| t >= 0.9 * t_big).unwrap_or(last);
        let mut worst: f64 = 0.0;
        let mut tail: f64 = 0.0;
        for (n, row) in series.values.iter().enumerate() {
            let f: Vec<f64> = times.iter().zip(row).map(|(t, u)| (-p * t).exp() * u).collect();
            let q = integrate_samples(times, &f);
            worst = worst.max((q - modes[n].value).abs());
            let umax = row[tail_from..=last].iter().fold(0.0f64, |a, v| a.max(v.abs()));
            tail = tail.max(umax * (-p * t_big).exp() / p);
        }
        let scale = modes.iter().map(|m| m.value.abs()).fold(0.0, f64::max);
        let (quadrature, tail) = if scale == 0.0 { (worst, tail) } else { (worst / scale, tail / scale) };
        rows.push(LaplaceRow {
            p,
            algebraic,
            quadrature,
            tail,
            t_big,
            pass: algebraic <= ALGEBRAIC_TOL && quadrature <= QUADRATURE_TOL + tail,
        });
    }
    Ok(LaplaceReport { rows })
}

/// Parameters of the estimate monitors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorParams {
    pub kind: MonitorKind,
    pub theta: f64,
    pub r: f64,
    pub epsilon: f64,
    pub steps: usize,
}

/// `(int_0^T g(t)^r dt)^{1/r}` from samples (trapezoid).
fn lr_norm(times: &[f64], g: &[f64], r: f64) -> f64 {
    let v: Vec<f64> = g.iter().map(|x| x.abs().powf(r)).collect();
    let s: f64 = times.windows(2).enumerate().map(|(k, w)| 0.5 * (w[1] - w[0]) * (v[k] + v[k + 1])).sum();
    s.powf(1.0 / r)
}

/// The `beta` exponent of the initial-value norm for `alpha < 1`.
pub fn beta_exponent(alpha: f64, r: f64) -> f64 {
    if r < 1.0 / alpha {
        1.0
    } else {
        1.0 / (alpha * r)
    }
}

/// `(LHS, RHS)` of the chosen estimate for one problem.
pub fn monitor_sides(problem: &Problem, basis: &SpectralBasis, params: &MonitorParams) -> Result<(f64, f64), SolverError> {
    let alpha = problem.alpha;
    let theta = params.theta;
    let kappa = theta / 2.0 - 0.25;
    let grid = match params.kind {
        MonitorKind::T1a => TimeGrid::new(problem.horizon, params.steps)?,
        MonitorKind::C1a => TimeGrid::uniform(problem.horizon, params.steps)?,
    };
    let forcing = ModalForcing::new(problem, basis)?;
    let times = grid.times.clone();
    let lam = &basis.eigenvalues;
    // data sides
    let mut fnorm = Vec::with_capacity(times.len());
    let mut src_coeffs = Vec::with_capacity(times.len());
    for &t in &times {
        let f = forcing.boundary_values(0, t)?;
        fnorm.push(f.iter().map(|v| v * v).sum::<f64>().sqrt());
        src_coeffs.push(match forcing.source_nodal(0, t)? {
            Some(v) => basis.project_source(&v)?,
            None => vec![0.0; basis.len()],
        });
    }
    let src_norm = |s: f64| -> Result<Vec<f64>, BasisError> { src_coeffs.iter().map(|c| fractional_norm(c, lam, s)).collect() };
    match params.kind {
        MonitorKind::T1a => {
            let r = params.r;
            let series = solve_orders(problem, basis, &grid, &[0], false)?.remove(0);
            let s_u = -params.epsilon + 0.25 - theta / 2.0;
            let un: Vec<f64> = (0..times.len())
                .map(|k| fractional_norm(&series.at(k), lam, s_u))
                .collect::<Result<_, _>>()?;
            let lhs = lr_norm(&times, &un, r);
            let (u0, u1) = crate::weak_solver::initial_coefficients(problem, basis)?;
            let mut rhs = lr_norm(&times, &fnorm, r);
            if alpha < 1.0 {
                rhs += lr_norm(&times, &src_norm(-theta / 2.0 - 0.75)?, r);
                rhs += fractional_norm(&u0, lam, -beta_exponent(alpha, r) + 0.25 - theta / 2.0)?;
            } else {
                rhs += lr_norm(&times, &src_norm(-1.0 - kappa)?, r);
                rhs += fractional_norm(&u0, lam, -1.0 / (alpha * r) - kappa)?;
                if let Some(u1) = u1 {
                    rhs += fractional_norm(&u1, lam, -(1.0 + 1.0 / r) / alpha - kappa)?;
                }
            }
            Ok((lhs, rhs))
        }
        MonitorKind::C1a => {
            if !problem.coeffs.rho.is_constant() || problem.coeffs.rho.eval(crate::expr::Point::xy(0.0, 0.0)) != 1.0 {
                return Err(SolverError::Unsupported("the c1a monitor needs rho = 1".into()));
            }
            let (u0, u1) = crate::weak_solver::initial_coefficients(problem, basis)?;
            if u0.iter().any(|v| *v != 0.0) || u1.is_some_and(|v| v.iter().any(|x| *x != 0.0)) {
                return Err(SolverError::Unsupported("the c1a monitor needs zero initial values".into()));
            }
            if theta < 0.5 {
                return Err(SolverError::Unsupported("the c1a monitor needs theta >= 1/2".into()));
            }
            let dt = grid.step;
            let orders: &[u8] = if alpha < 1.0 { &[0] } else { &[0, 1] };
            let series = solve_orders(problem, basis, &grid, orders, false)?;
            // Caputo derivative per mode: order alpha of u, or order alpha-1 of u'
            let (base, order) = if alpha < 1.0 { (&series[0], alpha) } else { (&series[1], alpha - 1.0) };
            let mut cap = vec![vec![0.0; basis.len()]; times.len()];
            for n in 0..basis.len() {
                let mut row = base.values[n].clone();
                if !row[0].is_finite() {
                    // the derivative's value at 0 does not enter the L1 sums beyond the first step
                    row[0] = row[1];
                }
                let d = caputo_apply(order, &row, dt).map_err(|e| SolverError::Unsupported(e.to_string()))?;
                for k in 0..times.len() {
                    cap[k][n] = d[k];
                }
            }
            let un: Vec<f64> = (0..times.len())
                .map(|k| fractional_norm(&series[0].at(k), lam, 0.25 - theta / 2.0))
                .collect::<Result<_, _>>()?;
            let cn: Vec<f64> = cap.iter().map(|c| fractional_norm(c, lam, -0.75 - theta / 2.0)).collect::<Result<_, _>>()?;
            let lhs = lr_norm(&times, &un, 2.0) + lr_norm(&times, &cn, 2.0);
            let rhs = lr_norm(&times, &fnorm, 2.0) + lr_norm(&times, &src_norm(-0.75 - theta / 2.0)?, 2.0);
            Ok((lhs, rhs))
        }
    }
}

/// Ratio statistics over a set of draws.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorStats {
    pub kind: MonitorKind,
    pub modes: usize,
    /// `None` for draws where both sides vanish.
    pub ratios: Vec<Option<f64>>,
    pub max: f64,
    pub median: f64,
    pub used: usize,
}

impl MonitorStats {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("draw,modes,ratio\n");
        for (i, r) in self.ratios.iter().enumerate() {
            let _ = writeln!(s, "{},{},{}", i, self.modes, r.map(fmt_num).unwrap_or_else(|| "excluded".into()));
        }
        s
    }
}

/// LHS/RHS ratios of the chosen estimate over the given problems.
pub fn estimate_monitor(problems: &[Problem], basis: &SpectralBasis, params: &MonitorParams) -> Result<MonitorStats, SolverError> {
    let sides: Vec<(f64, f64)> = problems.par_iter().map(|p| monitor_sides(p, basis, params)).collect::<Result<_, _>>()?;
    let ratios: Vec<Option<f64>> = sides
        .into_iter()
        .map(|(lhs, rhs)| {
            if lhs == 0.0 && rhs == 0.0 {
                None
            } else if rhs == 0.0 {
                Some(f64::INFINITY)
            } else {
                Some(lhs / rhs)
            }
        })
        .collect();
    let mut used: Vec<f64> = ratios.iter().flatten().copied().collect();
    used.sort_by(f64::total_cmp);
    let max = used.last().copied().unwrap_or(0.0);
    let median = if used.is_empty() {
        0.0
    } else if used.len() % 2 == 1 {
        used[used.len() / 2]
    } else {
        0.5 * (used[used.len() / 2 - 1] + used[used.len() / 2])
    };
    Ok(MonitorStats {
        kind: params.kind,
        modes: basis.len(),
        used: used.len(),
        ratios,
        max,
        median,
    })
}

/// Growth factor of the maximum ratio between two truncations, and whether
/// the monitor passes (finite maxima, growth below `limit`).
pub fn monitor_growth(coarse: &MonitorStats, fine: &MonitorStats, limit: f64) -> (f64, bool) {
    let g = if coarse.max > 0.0 { fine.max / coarse.max } else { f64::INFINITY };
    let finite = coarse.max.is_finite() && fine.max.is_finite();
    (g, finite && g < limit && g > 1.0 / limit)
}

fn rand_coef(rng: &mut ChaCha8Rng) -> f64 {
    (rng.gen_range(-1.0..1.0) * 1000.0f64).round() / 1000.0
}

/// Seeded smooth random data on the base problem's domain and boundary kind:
/// boundary signals `c0 + c1 sin(w t + s)`, source `d1 sin(k pi x) cos(w t)
/// + d2 x (1 - x)` (interval), and for `T1a` a random smooth `u0`
/// (and `u1` when `alpha > 1`). `C1a` draws keep zero initial values.
pub fn random_draws(base: &Problem, count: usize, seed: u64, kind: MonitorKind) -> Vec<Problem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x0, x1) = match base.domain {
        crate::spectral_basis::Domain::Interval { a, b } => (a, b),
        crate::spectral_basis::Domain::Rectangle { lx, .. } => (0.0, lx),
    };
    let len = x1 - x0;
    let xs = format!("((x - ({x0:?})) / {len:?})");
    (0..count)
        .map(|_| {
            let mut p = base.clone();
            p.boundary = (0..base.domain.components())
                .map(|_| {
                    let (c0, c1) = (rand_coef(&mut rng), rand_coef(&mut rng));
                    let w = (rng.gen_range(0.5..5.0) * 100.0f64).round() / 100.0;
                    let s = rand_coef(&mut rng);
                    TimeSignal::Closed(Expr::parse(&format!("{c0:?} + {c1:?}*sin({w:?}*t + {s:?})")).expect("generated signal"))
                })
                .collect();
            let (d1, d2) = (rand_coef(&mut rng), rand_coef(&mut rng));
            let k = rng.gen_range(1..4);
            let w = (rng.gen_range(0.5..5.0) * 100.0f64).round() / 100.0;
            p.source = Source::Field(
                Expr::parse(&format!("{d1:?}*sin({k}*pi*{xs})*cos({w:?}*t) + {d2:?}*{xs}*(1 - {xs})")).expect("generated source"),
            );
            match kind {
                MonitorKind::T1a => {
                    let (e1, e2) = (rand_coef(&mut rng), rand_coef(&mut rng));
                    p.u0 = SpatialData::Closed(Expr::parse(&format!("{e1:?}*sin(pi*{xs}) + {e2:?}*cos(2*pi*{xs})")).expect("generated u0"));
                    p.u1 = (p.alpha > 1.0).then(|| {
                        let e3 = rand_coef(&mut rng);
                        SpatialData::Closed(Expr::parse(&format!("{e3:?}*{xs}*{xs}")).expect("generated u1"))
                    });
                }
                MonitorKind::C1a => {
                    p.u0 = SpatialData::zero();
                    p.u1 = (p.alpha > 1.0).then(SpatialData::zero);
                }
            }
            p
        })
        .collect()
}

/// Result of the trace-coefficient tail check for one boundary datum.
#[derive(Debug, Clone, PartialEq)]
pub struct LemmaRow {
    pub datum: Vec<f64>,
    pub s_half: f64,
    pub s_full: f64,
    /// Slope of log term_n against log n over the upper half of the modes.
    pub tail_slope: Option<f64>,
    /// Extrapolated sum divided by the squared Euclidean norm of the datum.
    pub ratio: Option<f64>,
    pub cauchy: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaReport {
    pub theta: f64,
    pub rows: Vec<LemmaRow>,
    pub pass: bool,
}

impl LemmaReport {
    pub fn render(&self) -> String {
        let mut s = format!("trace-coefficient tail check (theta={})\n", self.theta);
        for r in &self.rows {
            let _ = writeln!(
                s,
                "h={:?}: S_N={:.6e} S_2N={:.6e} tail slope {} ratio {} -> {}",
                r.datum,
                r.s_half,
                r.s_full,
                r.tail_slope.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into()),
                r.ratio.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "n/a".into()),
                if r.cauchy { "PASS" } else { "FAIL" }
            );
        }
        let _ = writeln!(s, "verdict: {}", if self.pass { "PASS" } else { "FAIL" });
        s
    }
}

/// Tail check of `sum_n |lambda_n^{-1-kappa} <h, tau* phi_n>|^2` for each
/// datum: with `N` half the basis size, `S_2N - S_N <= 0.1 S_N`.
pub fn lemma_l1_check(basis: &SpectralBasis, data: &[Vec<f64>], theta: f64) -> Result<LemmaReport, SolverError> {
    let nmodes = basis.len();
    if nmodes < 4 {
        return Err(SolverError::Unsupported("the tail check needs at least 4 modes".into()));
    }
    let half = nmodes / 2;
    let mut rows = Vec::with_capacity(data.len());
    for h in data {
        let sums = lemma_l1_diagnostic(basis, h, theta)?;
        let s_half = sums[half - 1];
        let s_full = sums[nmodes - 1];
        let hn2: f64 = h.iter().map(|v| v * v).sum();
        if s_full == 0.0 {
            rows.push(LemmaRow {
                datum: h.clone(),
                s_half,
                s_full,
                tail_slope: None,
                ratio: None,
                cauchy: true,
            });
            continue;
        }
        let terms: Vec<f64> = (0..nmodes).map(|i| sums[i] - if i == 0 { 0.0 } else { sums[i - 1] }).collect();
        let ns: Vec<f64> = (half..nmodes).map(|i| (i + 1) as f64).collect();
        let slope = fit_exponent(&ns, &terms[half..]).map(|(s, _)| s);
        // tail beyond N modes ~ term_N N / (|slope| - 1)
        let extra = match slope {
            Some(s) if s < -1.0 => terms[nmodes - 1] * nmodes as f64 / (-s - 1.0),
            _ => 0.0,
        };
        rows.push(LemmaRow {
            datum: h.clone(),
            s_half,
            s_full,
            tail_slope: slope,
            ratio: (hn2 > 0.0).then(|| (s_full + extra) / hn2),
            cauchy: s_full - s_half <= 0.1 * s_half,
        });
    }
    let pass = rows.iter().all(|r| r.cauchy);
    Ok(LemmaReport { theta, rows, pass })
}

/// Default data for the tail check: unit datum on each boundary component
/// and their sum.
pub fn unit_data(basis: &SpectralBasis) -> Vec<Vec<f64>> {
    let c = basis.components();
    let mut out: Vec<Vec<f64>> = (0..c)
        .map(|i| {
            let mut v = vec![0.0; c];
            v[i] = 1.0;
            v
        })
        .collect();
    out.push(vec![1.0; c]);
    out
}

/// Spectral solution against the L1 oracle.
pub const SPECTRAL_L1_TOL: f64 = 1e-3;
/// Talbot against either of the other two.
pub const TALBOT_TOL: f64 = 5e-3;
/// Talbot is evaluated on every `TALBOT_STRIDE`-th L1 time.
pub const TALBOT_STRIDE: usize = 20;

#[derive(Debug, Error)]
pub enum CompareError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Oracle(#[from] FdError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub pair: &'static str,
    pub error: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleComparison {
    pub rows: Vec<CompareRow>,
    pub cells: usize,
    pub steps: usize,
    pub talbot_times: usize,
}

impl OracleComparison {
    pub fn passes(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn error(&self, pair: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.pair == pair).map(|r| r.error)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("pair,relative_l2q,tol,pass\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.pair, fmt_num(r.error), fmt_num(r.tol), r.pass);
        }
        s
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "oracle comparison ({} cells, {} L1 steps, Talbot at {} times)\n",
            self.cells, self.steps, self.talbot_times
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<18} relative L2(Q) error {:.3e} (tol {:e}) -> {}",
                r.pair,
                r.error,
                r.tol,
                if r.pass { "PASS" } else { "FAIL" }
            );
        }
        let _ = writeln!(s, "verdict: {}", if self.passes() { "PASS" } else { "FAIL" });
        s
    }
}

/// Piecewise-linear resampling of nodal rows from `from` to `to`.
fn resample(rows: &[Vec<f64>], from: &[f64], to: &[f64]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|row| {
            to.iter()
                .map(|&x| {
                    let i = from.partition_point(|&v| v <= x).clamp(1, from.len() - 1);
                    let (x0, x1) = (from[i - 1], from[i]);
                    let w = if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.0 };
                    (1.0 - w) * row[i - 1] + w * row[i]
                })
                .collect()
        })
        .collect()
}

/// Relative `L2(Q)` distances between the lifted spectral field, the L1
/// oracle and (on a thinned set of times) the Talbot oracle. The spectral
/// series uses the L1 time lattice; fields meet on the oracle nodes.
pub fn oracle_compare(problem: &Problem, basis: &SpectralBasis, scheme: &FdScheme) -> Result<OracleComparison, CompareError> {
    let l1 = fd_solve_l1(problem, scheme)?;
    let grid = TimeGrid::uniform(problem.horizon, scheme.steps)?;
    let series = solve_orders(problem, basis, &grid, &[0], false)?.remove(0);
    let field = evaluate_solution(&series, basis, Some(problem), Reconstruction::Lifted)?;
    let xs: Vec<f64> = field.nodes.iter().map(|n| n.0).collect();
    let spectral = resample(&field.values, &xs, &l1.nodes);
    let picks: Vec<usize> = (0..l1.times.len()).step_by(TALBOT_STRIDE.max(1)).collect();
    let times: Vec<f64> = picks.iter().map(|&k| l1.times[k]).collect();
    let talbot = fd_solve_talbot(problem, scheme, &times)?;
    let thin = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> { picks.iter().map(|&k| rows[k].clone()).collect() };
    let (spec_thin, l1_thin) = (thin(&spectral), thin(&l1.values));
    let row = |pair, error, tol| CompareRow {
        pair,
        error,
        tol,
        pass: error <= tol,
    };
    let rows = vec![
        row("spectral_vs_l1", relative_l2_q(&spectral, &l1.values, &l1.times, &l1.nodes), SPECTRAL_L1_TOL),
        row("talbot_vs_spectral", relative_l2_q(&spec_thin, &talbot.values, &times, &l1.nodes), TALBOT_TOL),
        row("talbot_vs_l1", relative_l2_q(&l1_thin, &talbot.values, &times, &l1.nodes), TALBOT_TOL),
    ];
    Ok(OracleComparison {
        rows,
        cells: scheme.cells,
        steps: scheme.steps,
        talbot_times: times.len(),
    })
}
