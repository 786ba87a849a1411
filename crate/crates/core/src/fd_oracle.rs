//! Independent oracles on a vertex-centred finite-difference mesh (intervals):
//! implicit L1 time stepping for `alpha < 1` and fixed-Talbot inversion of the
//! discrete resolvent for either alpha range.
//!
//! Space: `(A u)_i = [a_{i-1/2}(u_i - u_{i-1}) - a_{i+1/2}(u_{i+1} - u_i)] / h^2
//! + q_i u_i`. Dirichlet rows are pinned to `f`; Neumann rows use the
//! half-cell balance, which adds `2 f / h` to the end rows.

use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::expr::{Expr, Func, Point, Var};
use crate::linalg::Tridiagonal;
use crate::problem_model::{Problem, ProblemError, Source, SpatialData, TimeSignal};
use crate::special::gamma;
use crate::spectral_basis::{BoundaryKind, Domain, Mesh};
use crate::weak_solver::fmt_num;

#[derive(Debug, Error)]
pub enum FdError {
    #[error("alpha={0} outside the range of this scheme")]
    AlphaRange(f64),
    #[error("at least {needed} samples are required, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("Talbot inversion failed at t={t} with {nodes} nodes: {detail}")]
    Talbot { t: f64, nodes: usize, detail: String },
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// `b_j = (j+1)^{1-alpha} - j^{1-alpha}`, `j = 0..k`.
pub fn caputo_l1_weights(alpha: f64, k: usize) -> Result<Vec<f64>, FdError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(FdError::AlphaRange(alpha));
    }
    if k == 0 {
        return Err(FdError::TooFewSamples { needed: 1, got: 0 });
    }
    let e = 1.0 - alpha;
    Ok((0..k).map(|j| ((j + 1) as f64).powf(e) - (j as f64).powf(e)).collect())
}

/// L1 approximation of the Caputo derivative at every sample of a uniform
/// signal (zero at the first sample).
pub fn caputo_apply(alpha: f64, samples: &[f64], dt: f64) -> Result<Vec<f64>, FdError> {
    if samples.len() < 2 {
        return Err(FdError::TooFewSamples { needed: 2, got: samples.len() });
    }
    let b = caputo_l1_weights(alpha, samples.len() - 1)?;
    let c = dt.powf(-alpha) / gamma(2.0 - alpha);
    let d: Vec<f64> = samples.windows(2).map(|w| w[1] - w[0]).collect();
    let mut out = vec![0.0; samples.len()];
    for k in 1..samples.len() {
        out[k] = c * (0..k).map(|j| b[j] * d[k - 1 - j]).sum::<f64>();
    }
    Ok(out)
}

/// Discretization parameters of the oracles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdScheme {
    /// Cells of the uniform spatial mesh.
    pub cells: usize,
    /// L1 time steps over `[0, T]`.
    pub steps: usize,
    /// Talbot contour nodes (doubled once on failure).
    pub talbot_nodes: usize,
}

impl FdScheme {
    pub fn new(cells: usize, steps: usize) -> Self {
        FdScheme {
            cells,
            steps,
            talbot_nodes: 32,
        }
    }
}

/// Field samples `values[k][i]` at times `times[k]` and nodes `nodes[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FdField {
    pub times: Vec<f64>,
    pub nodes: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl FdField {
    /// CSV triples `t,x,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,x,value\n");
        for (t, row) in self.times.iter().zip(&self.values) {
            for (x, v) in self.nodes.iter().zip(row) {
                let _ = writeln!(s, "{t:?},{x:?},{}", fmt_num(*v));
            }
        }
        s
    }
}

/// Trapezoid-in-time, trapezoid-in-space `L2(Q)` norm of `a - b` relative to
/// the norm of `a`.
pub fn relative_l2_q(a: &[Vec<f64>], b: &[Vec<f64>], times: &[f64], nodes: &[f64]) -> f64 {
    let space = |row: &dyn Fn(usize) -> f64| -> f64 {
        nodes
            .windows(2)
            .enumerate()
            .map(|(i, w)| 0.5 * (w[1] - w[0]) * (row(i) + row(i + 1)))
            .sum()
    };
    let mut num = vec![0.0; times.len()];
    let mut den = vec![0.0; times.len()];
    for k in 0..times.len() {
        num[k] = space(&|i| (a[k][i] - b[k][i]).powi(2));
        den[k] = space(&|i| a[k][i].powi(2));
    }
    let time = |v: &[f64]| -> f64 { times.windows(2).enumerate().map(|(k, w)| 0.5 * (w[1] - w[0]) * (v[k] + v[k + 1])).sum() };
    (time(&num) / time(&den)).sqrt()
}

struct Grid {
    chi: BoundaryKind,
    h: f64,
    x: Vec<f64>,
    rho: Vec<f64>,
    op: Tridiagonal<f64>,
    mesh: Mesh,
}

impl Grid {
    fn new(problem: &Problem, cells: usize) -> Result<Self, FdError> {
        let Domain::Interval { a: x0, b: x1 } = problem.domain else {
            return Err(FdError::Unsupported("the finite-difference oracles support intervals only".into()));
        };
        if cells < 4 {
            return Err(FdError::TooFewSamples { needed: 4, got: cells });
        }
        let h = (x1 - x0) / cells as f64;
        let x: Vec<f64> = (0..=cells).map(|i| x0 + i as f64 * h).collect();
        let c = &problem.coeffs;
        let rho: Vec<f64> = x.iter().map(|&v| c.rho.eval(Point::xy(v, 0.0))).collect();
        let q: Vec<f64> = x.iter().map(|&v| c.q.eval(Point::xy(v, 0.0))).collect();
        let ah: Vec<f64> = (0..cells).map(|i| c.a.eval(Point::xy(x0 + (i as f64 + 0.5) * h, 0.0))).collect();
        let n = cells + 1;
        let mut op = Tridiagonal::zeros(n);
        let h2 = h * h;
        for i in 0..n {
            op.diag[i] = q[i];
            if i > 0 {
                op.diag[i] += ah[i - 1] / h2;
                op.sub[i - 1] = -ah[i - 1] / h2;
            }
            if i + 1 < n {
                op.diag[i] += ah[i] / h2;
                op.sup[i] = -ah[i] / h2;
            }
        }
        // half-cell rows: the single flux is divided by h/2
        op.diag[0] = q[0] + 2.0 * ah[0] / h2;
        op.sup[0] = -2.0 * ah[0] / h2;
        op.diag[n - 1] = q[n - 1] + 2.0 * ah[n - 2] / h2;
        op.sub[n - 2] = -2.0 * ah[n - 2] / h2;
        let mesh = Mesh {
            domain: problem.domain.clone(),
            nx: cells,
            ny: 0,
        };
        Ok(Grid {
            chi: problem.chi,
            h,
            x,
            rho,
            op,
            mesh,
        })
    }

    fn len(&self) -> usize {
        self.x.len()
    }

    fn nodal(&self, d: &SpatialData) -> Result<Vec<f64>, FdError> {
        d.nodal_on(&self.mesh)?.ok_or_else(|| {
            FdError::Unsupported("modal initial data cannot be sampled on the oracle mesh; give nodal or closed-form data".into())
        })
    }

    fn source(&self, problem: &Problem, t: f64) -> Result<Vec<f64>, FdError> {
        match &problem.source {
            Source::Field(e) => Ok(self.x.iter().map(|&x| e.eval(Point::txy(t, x, 0.0))).collect()),
            Source::Separable { time, shape } => {
                let c = time.eval(t);
                Ok(self.nodal(shape)?.into_iter().map(|v| c * v).collect())
            }
        }
    }

    /// Generic system `diag(rho * shift) + A` with boundary handling for `T`.
    fn system<T: crate::linalg::Scalar>(&self, shift: T) -> Tridiagonal<T> {
        let n = self.len();
        let mut s = Tridiagonal {
            sub: self.op.sub.iter().map(|v| T::from_f64(*v)).collect(),
            diag: (0..n).map(|i| T::from_f64(self.op.diag[i]) + T::from_f64(self.rho[i]) * shift).collect(),
            sup: self.op.sup.iter().map(|v| T::from_f64(*v)).collect(),
        };
        if self.chi == BoundaryKind::Dirichlet {
            s.diag[0] = T::from_f64(1.0);
            s.sup[0] = T::zero();
            s.diag[n - 1] = T::from_f64(1.0);
            s.sub[n - 2] = T::zero();
        }
        s
    }

    /// Apply boundary data to a right-hand side.
    fn boundary<T: crate::linalg::Scalar>(&self, rhs: &mut [T], f: [T; 2]) {
        let n = rhs.len();
        match self.chi {
            BoundaryKind::Dirichlet => {
                rhs[0] = f[0];
                rhs[n - 1] = f[1];
            }
            BoundaryKind::Neumann => {
                let s = T::from_f64(2.0 / self.h);
                rhs[0] = rhs[0] + s * f[0];
                rhs[n - 1] = rhs[n - 1] + s * f[1];
            }
        }
    }
}

fn check_interval_data(problem: &Problem) -> Result<(), FdError> {
    problem.validate()?;
    if problem.boundary.len() != 2 {
        return Err(FdError::Unsupported("interval problems carry two boundary signals".into()));
    }
    Ok(())
}

/// Implicit L1 stepping on `[0, T]` with `scheme.steps` uniform steps.
pub fn fd_solve_l1(problem: &Problem, scheme: &FdScheme) -> Result<FdField, FdError> {
    check_interval_data(problem)?;
    let alpha = problem.alpha;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(FdError::AlphaRange(alpha));
    }
    let grid = Grid::new(problem, scheme.cells)?;
    let kmax = scheme.steps;
    let dt = problem.horizon / kmax as f64;
    let b = caputo_l1_weights(alpha, kmax)?;
    let c = dt.powf(-alpha) / gamma(2.0 - alpha);
    let sys = grid.system(c * b[0]);
    let n = grid.len();
    let u0 = grid.nodal(&problem.u0)?;
    let times: Vec<f64> = (0..=kmax).map(|k| k as f64 * dt).collect();
    let mut values = Vec::with_capacity(kmax + 1);
    let mut diffs: Vec<Vec<f64>> = Vec::with_capacity(kmax);
    values.push(u0);
    for k in 1..=kmax {
        let t = times[k];
        let prev = &values[k - 1];
        let mut hist = vec![0.0; n];
        for j in 1..k {
            let d = &diffs[k - 1 - j];
            let w = b[j];
            hist.iter_mut().zip(d).for_each(|(h, v)| *h += w * v);
        }
        let src = grid.source(problem, t)?;
        let mut rhs: Vec<f64> = (0..n)
            .map(|i| grid.rho[i] * c * (b[0] * prev[i] - hist[i]) + src[i])
            .collect();
        let f = [problem.boundary[0].eval(t), problem.boundary[1].eval(t)];
        grid.boundary(&mut rhs, f);
        let next = sys.solve(&rhs);
        diffs.push(next.iter().zip(prev).map(|(a, b)| a - b).collect());
        values.push(next);
    }
    Ok(FdField {
        times,
        nodes: grid.x.clone(),
        values,
    })
}

/// `c t^n e^{a t}` with complex `c`, `a`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Term {
    c: Complex64,
    n: u32,
    a: Complex64,
}

impl Term {
    fn constant(v: Complex64) -> Self {
        Term {
            c: v,
            n: 0,
            a: Complex64::new(0.0, 0.0),
        }
    }

    /// Laplace transform over `(0, inf)`, continued analytically.
    fn transform(&self, p: Complex64) -> Complex64 {
        let fact: f64 = (1..=self.n).map(f64::from).product();
        self.c * fact / (p - self.a).powu(self.n + 1)
    }
}

const MAX_POWER: f64 = 12.0;

fn scale(terms: Vec<Term>, s: Complex64) -> Vec<Term> {
    terms.into_iter().map(|t| Term { c: t.c * s, ..t }).collect()
}

fn product(a: &[Term], b: &[Term]) -> Vec<Term> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            out.push(Term {
                c: x.c * y.c,
                n: x.n + y.n,
                a: x.a + y.a,
            });
        }
    }
    out
}

/// `c0 + c1 t` when the argument is affine in `t`.
fn affine(e: &Expr, x: f64, y: f64) -> Option<(f64, f64)> {
    let mut c0 = 0.0;
    let mut c1 = 0.0;
    for t in decompose(e, x, y)? {
        if t.a != Complex64::new(0.0, 0.0) || t.c.im != 0.0 {
            return None;
        }
        match t.n {
            0 => c0 += t.c.re,
            1 => c1 += t.c.re,
            _ => return None,
        }
    }
    Some((c0, c1))
}

/// Split an expression in `t` (with `x`, `y` fixed) into exponential
/// polynomial terms; `None` when it has no such form.
fn decompose(e: &Expr, x: f64, y: f64) -> Option<Vec<Term>> {
    if !e.depends_on(Var::T) {
        let v = e.eval(Point::txy(0.0, x, y));
        return v.is_finite().then(|| vec![Term::constant(Complex64::new(v, 0.0))]);
    }
    let one = Complex64::new(1.0, 0.0);
    let i = Complex64::new(0.0, 1.0);
    match e {
        Expr::Var(Var::T) => Some(vec![Term {
            c: one,
            n: 1,
            a: Complex64::new(0.0, 0.0),
        }]),
        Expr::Neg(a) => Some(scale(decompose(a, x, y)?, -one)),
        Expr::Add(a, b) => {
            let mut v = decompose(a, x, y)?;
            v.extend(decompose(b, x, y)?);
            Some(v)
        }
        Expr::Sub(a, b) => {
            let mut v = decompose(a, x, y)?;
            v.extend(scale(decompose(b, x, y)?, -one));
            Some(v)
        }
        Expr::Mul(a, b) => Some(product(&decompose(a, x, y)?, &decompose(b, x, y)?)),
        Expr::Div(a, b) if !b.depends_on(Var::T) => {
            let d = b.eval(Point::txy(0.0, x, y));
            (d != 0.0 && d.is_finite()).then_some(())?;
            Some(scale(decompose(a, x, y)?, one / d))
        }
        Expr::Pow(b, k) if !k.depends_on(Var::T) => {
            let k = k.eval(Point::txy(0.0, x, y));
            if !(k >= 0.0 && k <= MAX_POWER && k.fract() == 0.0) {
                return None;
            }
            let base = decompose(b, x, y)?;
            let mut acc = vec![Term::constant(one)];
            for _ in 0..k as u32 {
                acc = product(&acc, &base);
            }
            Some(acc)
        }
        Expr::Call(f, arg) => {
            let (c0, c1) = affine(arg, x, y)?;
            let exp_term = |sign: f64, rot: Complex64| Term {
                c: (rot * sign * c0).exp(),
                n: 0,
                a: rot * sign * c1,
            };
            let half = Complex64::new(0.5, 0.0);
            match f {
                Func::Exp => Some(vec![exp_term(1.0, one)]),
                Func::Sin => Some(vec![
                    Term { c: exp_term(1.0, i).c / (2.0 * i), ..exp_term(1.0, i) },
                    Term { c: -exp_term(-1.0, i).c / (2.0 * i), ..exp_term(-1.0, i) },
                ]),
                Func::Cos => Some(vec![
                    Term { c: exp_term(1.0, i).c * half, ..exp_term(1.0, i) },
                    Term { c: exp_term(-1.0, i).c * half, ..exp_term(-1.0, i) },
                ]),
                Func::Sinh => Some(vec![
                    Term { c: exp_term(1.0, one).c * half, ..exp_term(1.0, one) },
                    Term { c: -exp_term(-1.0, one).c * half, ..exp_term(-1.0, one) },
                ]),
                Func::Cosh => Some(vec![
                    Term { c: exp_term(1.0, one).c * half, ..exp_term(1.0, one) },
                    Term { c: exp_term(-1.0, one).c * half, ..exp_term(-1.0, one) },
                ]),
                _ => None,
            }
        }
        _ => None,
    }
}

fn transform_of(terms: &[Term], p: Complex64) -> Complex64 {
    terms.iter().map(|t| t.transform(p)).sum()
}

fn signal_terms(sig: &TimeSignal, what: &str) -> Result<Vec<Term>, FdError> {
    match sig {
        TimeSignal::Closed(e) => decompose(e, 0.0, 0.0).ok_or_else(|| {
            FdError::Unsupported(format!("{what} `{e}` is not an exponential polynomial in t; the Talbot oracle needs its Laplace transform"))
        }),
        TimeSignal::Samples { .. } => Err(FdError::Unsupported(format!(
            "{what} is sampled; the Talbot oracle needs closed-form time signals"
        ))),
    }
}

/// Laplace-transformable data of a problem on the oracle mesh.
struct TransformedData {
    boundary: [Vec<Term>; 2],
    /// Per node, or a separable (time terms, shape) pair.
    source: SourceTerms,
    u0: Vec<f64>,
    u1: Option<Vec<f64>>,
}

enum SourceTerms {
    Zero,
    Nodes(Vec<Vec<Term>>),
    Separable(Vec<Term>, Vec<f64>),
}

impl TransformedData {
    fn new(problem: &Problem, grid: &Grid) -> Result<Self, FdError> {
        let boundary = [
            signal_terms(&problem.boundary[0], "boundary signal f1")?,
            signal_terms(&problem.boundary[1], "boundary signal f2")?,
        ];
        let source = if problem.source.is_zero() {
            SourceTerms::Zero
        } else {
            match &problem.source {
                Source::Field(e) => SourceTerms::Nodes(
                    grid.x
                        .iter()
                        .map(|&x| {
                            decompose(e, x, 0.0).ok_or_else(|| {
                                FdError::Unsupported(format!("source `{e}` is not an exponential polynomial in t"))
                            })
                        })
                        .collect::<Result<_, _>>()?,
                ),
                Source::Separable { time, shape } => SourceTerms::Separable(signal_terms(time, "source time factor")?, grid.nodal(shape)?),
            }
        };
        let u0 = grid.nodal(&problem.u0)?;
        let u1 = match &problem.u1 {
            Some(d) => Some(grid.nodal(d)?),
            None => None,
        };
        Ok(TransformedData { boundary, source, u0, u1 })
    }
}

fn resolvent(grid: &Grid, data: &TransformedData, alpha: f64, p: Complex64) -> Vec<Complex64> {
    let pa = p.powf(alpha);
    let sys = grid.system(pa);
    let p1 = p.powf(alpha - 1.0);
    let p2 = p.powf(alpha - 2.0);
    let n = grid.len();
    let mut rhs: Vec<Complex64> = (0..n)
        .map(|i| {
            let mut r = p1 * data.u0[i];
            if let Some(u1) = &data.u1 {
                r += p2 * u1[i];
            }
            r * grid.rho[i]
        })
        .collect();
    match &data.source {
        SourceTerms::Zero => {}
        SourceTerms::Nodes(terms) => rhs.iter_mut().zip(terms).for_each(|(r, t)| *r += transform_of(t, p)),
        SourceTerms::Separable(time, shape) => {
            let c = transform_of(time, p);
            rhs.iter_mut().zip(shape).for_each(|(r, s)| *r += c * s);
        }
    }
    let f = [transform_of(&data.boundary[0], p), transform_of(&data.boundary[1], p)];
    grid.boundary(&mut rhs, f);
    sys.solve(&rhs)
}

/// Fixed-Talbot inversion at one time with `m` nodes.
fn talbot_at(grid: &Grid, data: &TransformedData, alpha: f64, t: f64, m: usize) -> Vec<f64> {
    let r = 2.0 * m as f64 / (5.0 * t);
    let n = grid.len();
    let mut acc = vec![0.0; n];
    let first = resolvent(grid, data, alpha, Complex64::new(r, 0.0));
    let w0 = 0.5 * (r * t).exp();
    acc.iter_mut().zip(&first).for_each(|(a, v)| *a += w0 * v.re);
    for k in 1..m {
        let th = k as f64 * std::f64::consts::PI / m as f64;
        let cot = th.cos() / th.sin();
        let s = Complex64::new(r * th * cot, r * th);
        let sigma = th + (th * cot - 1.0) * cot;
        let w = (s * t).exp() * Complex64::new(1.0, sigma);
        let u = resolvent(grid, data, alpha, s);
        acc.iter_mut().zip(&u).for_each(|(a, v)| *a += (w * v).re);
    }
    acc.iter().map(|v| v * r / m as f64).collect()
}

/// Talbot inversion at the given times inside `[0, T]`. Data are
/// transformed over the whole half-line; by causality the solution on
/// `[0, T]` is the same as with data cut off at `T`.
pub fn fd_solve_talbot(problem: &Problem, scheme: &FdScheme, times: &[f64]) -> Result<FdField, FdError> {
    check_interval_data(problem)?;
    let alpha = problem.alpha;
    if !(alpha > 0.0 && alpha < 2.0) || alpha == 1.0 {
        return Err(FdError::AlphaRange(alpha));
    }
    if let Some(&t) = times.iter().find(|&&t| !(t >= 0.0 && t <= problem.horizon * (1.0 + 1e-12))) {
        return Err(FdError::Unsupported(format!("time {t} outside [0, T={}]", problem.horizon)));
    }
    let grid = Grid::new(problem, scheme.cells)?;
    let data = TransformedData::new(problem, &grid)?;
    let m = scheme.talbot_nodes.max(2);
    let values = times
        .par_iter()
        .map(|&t| -> Result<Vec<f64>, FdError> {
            if t == 0.0 {
                return Ok(data.u0.clone());
            }
            let v = talbot_at(&grid, &data, alpha, t, m);
            if v.iter().all(|x| x.is_finite()) {
                return Ok(v);
            }
            log::warn!("Talbot inversion at t={t} not finite with {m} nodes; retrying with {}", 2 * m);
            let v = talbot_at(&grid, &data, alpha, t, 2 * m);
            let bad = v.iter().filter(|x| !x.is_finite()).count();
            if bad == 0 {
                Ok(v)
            } else {
                Err(FdError::Talbot {
                    t,
                    nodes: 2 * m,
                    detail: format!(
                        "{bad} of {} nodal values not finite (contour scale r={:e})",
                        v.len(),
                        4.0 * m as f64 / (5.0 * t)
                    ),
                })
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FdField {
        times: times.to_vec(),
        nodes: grid.x.clone(),
        values,
    })
}

/// Eigenpairs of the oracle's own discrete operator (smallest `count`),
/// normalized in the lumped `rho`-weighted norm; used to build single-mode
/// initial data for the oracle.
pub fn fd_eigenpairs(problem: &Problem, cells: usize, count: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>), FdError> {
    let grid = Grid::new(problem, cells)?;
    let n = grid.len();
    let (lo, hi) = match grid.chi {
        BoundaryKind::Dirichlet => (1, n - 1),
        BoundaryKind::Neumann => (0, n),
    };
    // symmetrize: D^{1/2} op D^{-1/2} with D the lumped weights h_i rho_i
    let w: Vec<f64> = (0..n)
        .map(|i| {
            let hi_ = if i == 0 || i == n - 1 { 0.5 * grid.h } else { grid.h };
            hi_ * grid.rho[i]
        })
        .collect();
    let m = hi - lo;
    let mut k = Tridiagonal::zeros(m);
    let mut mass = Tridiagonal::zeros(m);
    for r in 0..m {
        let i = lo + r;
        let lump = if i == 0 || i == n - 1 { 0.5 * grid.h } else { grid.h };
        k.diag[r] = grid.op.diag[i] * lump;
        mass.diag[r] = w[i];
        if r + 1 < m {
            k.sup[r] = grid.op.sup[i] * lump;
            k.sub[r] = k.sup[r];
        }
    }
    let (vals, vecs) = crate::spectral_basis::tridiagonal_eigenpairs(&k, &mass, count)
        .map_err(|e| FdError::Unsupported(e.to_string()))?;
    let full = vecs
        .into_iter()
        .map(|v| {
            let mut u = vec![0.0; n];
            u[lo..hi].copy_from_slice(&v);
            u
        })
        .collect();
    Ok((vals, full))
}
