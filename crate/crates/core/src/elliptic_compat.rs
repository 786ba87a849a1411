//! Steady elliptic solves and the compatibility checks for the initial data.
//!
//! The modal steady solution of `A y = F`, `tau y = f` is
//! `w_n = [-(-1)^chi <f, tau* phi_n> + <rho^{-1} F, phi_n>] / lambda_n`.
//! The initial value `u0` is compatible when it equals this solution for the
//! data at `t = 0`; the modal defects `b_n = lambda_n (w_n - u0_n)` measure
//! the failure, and for `alpha > 1` the same test with first time derivatives
//! and `u1` gives `e_n`.

use std::fmt::Write as _;

use crate::linalg::Tridiagonal;
use crate::problem_model::{Problem, SpatialData};
use crate::spectral_basis::{BasisError, BoundaryKind, MassMatrix, SpectralBasis};
use crate::weak_solver::{fmt_num, initial_coefficients, ModalForcing, SolverError};

/// Default tolerance on `max_n |b_n| / lambda_n`.
pub const DEFAULT_TOL: f64 = 1e-6;

/// Modal steady coefficients `w_n` for boundary values `f_bdry` (one per
/// component) and nodal source values (zero when `None`).
pub fn steady_solve(basis: &SpectralBasis, f_bdry: &[f64], source: Option<&[f64]>) -> Result<Vec<f64>, BasisError> {
    if f_bdry.len() != basis.components() {
        return Err(BasisError::Shape {
            expected: basis.components(),
            got: f_bdry.len(),
        });
    }
    let sign = basis.chi.forcing_sign();
    let mut g: Vec<f64> = basis.trace_pairings(f_bdry).into_iter().map(|v| sign * v).collect();
    if let Some(src) = source {
        let p = basis.project_source(src)?;
        g.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    Ok(g.iter().zip(&basis.eigenvalues).map(|(v, l)| v / l).collect())
}

/// Nodal values of the truncated steady solution.
pub fn steady_field(basis: &SpectralBasis, f_bdry: &[f64], source: Option<&[f64]>) -> Result<Vec<f64>, BasisError> {
    Ok(basis.reconstruct(&steady_solve(basis, f_bdry, source)?))
}

/// Truncated steady modes plus the finite-element remainder outside them:
/// `P_N w + (I - P_N) Y_h` (intervals only). Boundary values are carried
/// exactly instead of through the slowly converging modal tail.
pub fn lifted_steady_field(basis: &SpectralBasis, f_bdry: &[f64], source: Option<&[f64]>) -> Result<Vec<f64>, BasisError> {
    let w = steady_solve(basis, f_bdry, source)?;
    let y = fe_elliptic_field(basis, f_bdry, source)?;
    let py = basis.reconstruct(&basis.project(&y)?);
    let pw = basis.reconstruct(&w);
    Ok(pw.iter().zip(y.iter().zip(&py)).map(|(a, (b, c))| a + b - c).collect())
}

/// Direct P1 finite-element solve of the steady problem on the basis mesh
/// (intervals only). Dirichlet rows are pinned to the boundary values;
/// Neumann data enter as conormal fluxes at the end rows.
pub fn fe_elliptic_field(basis: &SpectralBasis, f_bdry: &[f64], source: Option<&[f64]>) -> Result<Vec<f64>, BasisError> {
    let k = basis
        .stiffness
        .as_ref()
        .ok_or_else(|| BasisError::Domain("finite-element steady solve needs an interval basis".into()))?;
    let MassMatrix::Tridiagonal(m) = &basis.mass else {
        return Err(BasisError::Domain("finite-element steady solve needs a consistent mass matrix".into()));
    };
    if f_bdry.len() != 2 {
        return Err(BasisError::Shape { expected: 2, got: f_bdry.len() });
    }
    let n = k.len();
    let mut rhs = match source {
        Some(s) => {
            if s.len() != n {
                return Err(BasisError::Shape { expected: n, got: s.len() });
            }
            let g: Vec<f64> = s.iter().zip(&basis.density).map(|(v, r)| v / r).collect();
            m.mul_vec(&g)
        }
        None => vec![0.0; n],
    };
    let mut a: Tridiagonal<f64> = k.clone();
    match basis.chi {
        BoundaryKind::Dirichlet => {
            for (row, val) in [(0, f_bdry[0]), (n - 1, f_bdry[1])] {
                // keep the pinned row on the scale of the stiffness rows
                let scale = k.diag[row].abs().max(1.0);
                a.diag[row] = scale;
                if row > 0 {
                    a.sub[row - 1] = 0.0;
                }
                if row + 1 < n {
                    a.sup[row] = 0.0;
                }
                rhs[row] = scale * val;
            }
        }
        BoundaryKind::Neumann => {
            rhs[0] += f_bdry[0];
            rhs[n - 1] += f_bdry[1];
        }
    }
    Ok(a.solve(&rhs))
}

/// Modal compatibility defects with their verdicts.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatReport {
    pub eigenvalues: Vec<f64>,
    /// `b_n`: steady residual of `u0` against the data at `t = 0`.
    pub defects_b: Vec<f64>,
    /// `e_n`: same with first time derivatives and `u1` (`alpha > 1` only).
    pub defects_e: Option<Vec<f64>>,
    pub max_b: f64,
    pub max_e: Option<f64>,
    pub pass_b: bool,
    pub pass_e: Option<bool>,
    pub tol: f64,
}

fn normalized_max(d: &[f64], lambdas: &[f64]) -> f64 {
    d.iter().zip(lambdas).map(|(b, l)| b.abs() / l).fold(0.0, f64::max)
}

impl CompatReport {
    pub fn passes(&self) -> bool {
        self.pass_b && self.pass_e.unwrap_or(true)
    }

    /// Human-readable summary listing the largest normalized defects.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let verdict = |p: bool| if p { "PASS" } else { "FAIL" };
        let _ = writeln!(s, "compatibility check (tol {:e}, defects normalized by 1/lambda_n)", self.tol);
        let _ = writeln!(s, "order 1: max |b_n|/lambda_n = {:e} -> {}", self.max_b, verdict(self.pass_b));
        if let (Some(m), Some(p)) = (self.max_e, self.pass_e) {
            let _ = writeln!(s, "order 2: max |e_n|/lambda_n = {:e} -> {}", m, verdict(p));
        }
        let listed: Vec<String> = self
            .defects_b
            .iter()
            .enumerate()
            .filter(|(n, b)| b.abs() / self.eigenvalues[*n] > self.tol)
            .take(8)
            .map(|(n, b)| format!("b_{}={:e}", n + 1, b))
            .collect();
        if !listed.is_empty() {
            let _ = writeln!(s, "nonzero defects: {}", listed.join(" "));
        }
        let _ = writeln!(s, "verdict: {}", verdict(self.passes()));
        s
    }

    /// CSV columns `n,lambda,b,b_over_lambda[,e,e_over_lambda]`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,lambda,b,b_over_lambda");
        if self.defects_e.is_some() {
            s.push_str(",e,e_over_lambda");
        }
        s.push('\n');
        for (n, (b, l)) in self.defects_b.iter().zip(&self.eigenvalues).enumerate() {
            let _ = write!(s, "{},{},{},{}", n + 1, fmt_num(*l), fmt_num(*b), fmt_num(b.abs() / l));
            if let Some(e) = &self.defects_e {
                let _ = write!(s, ",{},{}", fmt_num(e[n]), fmt_num(e[n].abs() / l));
            }
            s.push('\n');
        }
        s
    }
}

/// Modal defects `b_n` (and `e_n` when `alpha > 1`) at tolerance `tol`.
pub fn compat_defect(problem: &Problem, basis: &SpectralBasis, tol: f64) -> Result<CompatReport, SolverError> {
    problem.validate()?;
    let forcing = ModalForcing::new(problem, basis)?;
    let (u0, u1) = initial_coefficients(problem, basis)?;
    let lambdas = &basis.eigenvalues;
    let g0 = forcing.at(0, 0.0)?;
    let defects_b: Vec<f64> = g0.iter().zip(&u0).zip(lambdas).map(|((g, u), l)| g - l * u).collect();
    let defects_e = if problem.alpha > 1.0 {
        let u1 = u1.ok_or_else(|| SolverError::Unsupported("u1 is required for the order-2 check".into()))?;
        let g1 = forcing.at(1, 0.0)?;
        Some(g1.iter().zip(&u1).zip(lambdas).map(|((g, u), l)| g - l * u).collect::<Vec<f64>>())
    } else {
        None
    };
    let max_b = normalized_max(&defects_b, lambdas);
    let max_e = defects_e.as_ref().map(|e| normalized_max(e, lambdas));
    Ok(CompatReport {
        eigenvalues: lambdas.clone(),
        pass_b: max_b <= tol,
        pass_e: max_e.map(|m| m <= tol),
        defects_b,
        defects_e,
        max_b,
        max_e,
        tol,
    })
}

/// Steady solution of the data at `t = 0`: its modal coefficients and nodal
/// values. On intervals the nodal field is the lifted one, so it carries the
/// boundary values exactly and its projection is still `modes`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatibleField {
    pub modes: Vec<f64>,
    pub nodal: Vec<f64>,
}

/// The initial value satisfying the order-1 condition for the problem's data.
pub fn make_compatible(problem: &Problem, basis: &SpectralBasis) -> Result<CompatibleField, SolverError> {
    let forcing = ModalForcing::new(problem, basis)?;
    let bv = forcing.boundary_values(0, 0.0)?;
    let src = forcing.source_nodal(0, 0.0)?;
    let modes = steady_solve(basis, &bv, src.as_deref())?;
    let nodal = if basis.stiffness.is_some() {
        lifted_steady_field(basis, &bv, src.as_deref())?
    } else {
        basis.reconstruct(&modes)
    };
    Ok(CompatibleField { modes, nodal })
}

/// Copy of the problem with `u0` replaced by the compatible initial value
/// (nodal on intervals, modal on rectangles).
pub fn repaired(problem: &Problem, basis: &SpectralBasis) -> Result<Problem, SolverError> {
    let c = make_compatible(problem, basis)?;
    let u0 = if basis.stiffness.is_some() {
        SpatialData::Nodal(c.nodal)
    } else {
        SpatialData::Modes(c.modes)
    };
    Ok(problem.with_u0(u0))
}
