//! Eigenpairs of the weighted elliptic operator `rho^{-1}(-div(a grad) + q)`
//! with Dirichlet or Neumann conditions.
//!
//! Intervals use piecewise-linear finite elements (variable coefficients) and
//! a bisection plus inverse-iteration eigensolver on the tridiagonal pencil.
//! Rectangles use constant coefficients and closed-form tensor modes.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::expr::{Expr, Point};
use crate::linalg::Tridiagonal;
use crate::quadrature::gauss_legendre;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
}

impl BoundaryKind {
    pub fn chi(self) -> u8 {
        match self {
            BoundaryKind::Dirichlet => 0,
            BoundaryKind::Neumann => 1,
        }
    }

    pub fn from_chi(chi: u8) -> Option<Self> {
        match chi {
            0 => Some(BoundaryKind::Dirichlet),
            1 => Some(BoundaryKind::Neumann),
            _ => None,
        }
    }

    /// The factor `-(-1)^chi` multiplying boundary pairings in the modal forcing.
    pub fn forcing_sign(self) -> f64 {
        match self {
            BoundaryKind::Dirichlet => -1.0,
            BoundaryKind::Neumann => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Interval { a: f64, b: f64 },
    Rectangle { lx: f64, ly: f64 },
}

impl Domain {
    /// Number of boundary components: the two endpoints of an interval, or
    /// the four edges of a rectangle ordered bottom, right, top, left.
    pub fn components(&self) -> usize {
        match self {
            Domain::Interval { .. } => 2,
            Domain::Rectangle { .. } => 4,
        }
    }

    pub fn measure(&self) -> f64 {
        match self {
            Domain::Interval { a, b } => b - a,
            Domain::Rectangle { lx, ly } => lx * ly,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub rho: Expr,
    pub a: Expr,
    pub q: Expr,
}

impl Coefficients {
    pub fn constant(rho: f64, a: f64, q: f64) -> Self {
        Coefficients {
            rho: Expr::constant(rho),
            a: Expr::constant(a),
            q: Expr::constant(q),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.rho.is_constant() && self.a.is_constant() && self.q.is_constant()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BasisError {
    #[error("mesh too coarse: {mesh} elements cannot resolve {modes} modes (need at least {needed})")]
    MeshTooCoarse { mesh: usize, modes: usize, needed: usize },
    #[error("coefficient {name} violates its lower bound: {msg}")]
    Coefficient { name: &'static str, msg: String },
    #[error("invalid domain: {0}")]
    Domain(String),
    #[error("mode index {index} out of range 1..={count}")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("shape mismatch: expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("basis file: {0}")]
    Format(String),
    #[error("eigensolver failed: {0}")]
    Eigen(String),
}

/// Uniform tensor mesh; `ny == 0` marks a 1-D mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub domain: Domain,
    pub nx: usize,
    pub ny: usize,
}

impl Mesh {
    pub fn node_count(&self) -> usize {
        if self.ny == 0 {
            self.nx + 1
        } else {
            (self.nx + 1) * (self.ny + 1)
        }
    }

    /// Node coordinates, x fastest.
    pub fn nodes(&self) -> Vec<(f64, f64)> {
        match self.domain {
            Domain::Interval { a, b } => {
                let h = (b - a) / self.nx as f64;
                (0..=self.nx)
                    .map(|i| (if i == self.nx { b } else { a + i as f64 * h }, 0.0))
                    .collect()
            }
            Domain::Rectangle { lx, ly } => {
                let hx = lx / self.nx as f64;
                let hy = ly / self.ny as f64;
                let mut out = Vec::with_capacity(self.node_count());
                for j in 0..=self.ny {
                    for i in 0..=self.nx {
                        out.push((i as f64 * hx, j as f64 * hy));
                    }
                }
                out
            }
        }
    }

    pub fn sample(&self, e: &Expr) -> Vec<f64> {
        self.nodes().into_iter().map(|(x, y)| e.eval(Point::xy(x, y))).collect()
    }

    pub fn spacing(&self) -> f64 {
        match self.domain {
            Domain::Interval { a, b } => (b - a) / self.nx as f64,
            Domain::Rectangle { lx, .. } => lx / self.nx as f64,
        }
    }
}

/// Quadrature structure used for `rho`-weighted inner products on the mesh.
#[derive(Debug, Clone, PartialEq)]
pub enum MassMatrix {
    /// Consistent P1 mass matrix over all nodes (1-D).
    Tridiagonal(Tridiagonal<f64>),
    /// Diagonal (trapezoidal) weights, already multiplied by `rho`.
    Diagonal(Vec<f64>),
}

impl MassMatrix {
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        match self {
            MassMatrix::Tridiagonal(m) => m.mul_vec(v),
            MassMatrix::Diagonal(w) => w.iter().zip(v).map(|(a, b)| a * b).collect(),
        }
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.apply(v).iter().zip(u).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    pub chi: BoundaryKind,
    pub mesh: Mesh,
    pub eigenvalues: Vec<f64>,
    /// Nodal values of each eigenfunction over all mesh nodes.
    pub eigenfunctions: Vec<Vec<f64>>,
    /// `traces[n][c]`: integral of the adjoint trace of mode n over boundary
    /// component c (the point value itself in 1-D).
    pub traces: Vec<Vec<f64>>,
    /// Rectangles only: Gauss samples of the adjoint trace on each edge.
    pub trace_samples: Vec<Vec<Vec<f64>>>,
    /// Tensor indices (m, n) for rectangles; (n, 0) on intervals.
    pub labels: Vec<(usize, usize)>,
    pub mass: MassMatrix,
    /// P1 stiffness matrix (a and q terms) over all nodes; intervals only.
    pub stiffness: Option<Tridiagonal<f64>>,
    /// Nodal values of `rho`.
    pub density: Vec<f64>,
}

fn check_lower_bound(name: &'static str, values: &[f64], strict: bool) -> Result<f64, BasisError> {
    let mut min = f64::INFINITY;
    for &v in values {
        if !v.is_finite() {
            return Err(BasisError::Coefficient {
                name,
                msg: "non-finite value on the mesh".into(),
            });
        }
        min = min.min(v);
    }
    if strict && min <= 0.0 {
        let msg = match name {
            "q" => format!("found min q = {min}; the potential must satisfy q >= q0 > 0"),
            "rho" => format!("found min rho = {min}; the density must satisfy rho >= rho0 > 0"),
            _ => format!("found min a = {min}; ellipticity needs a >= c > 0"),
        };
        return Err(BasisError::Coefficient { name, msg });
    }
    Ok(min)
}

/// Build the first `n_modes` eigenpairs on a mesh with `mesh_size` elements
/// per direction.
pub fn build_basis(
    domain: &Domain,
    coeffs: &Coefficients,
    chi: BoundaryKind,
    n_modes: usize,
    mesh_size: usize,
) -> Result<SpectralBasis, BasisError> {
    if n_modes == 0 {
        return Err(BasisError::Eigen("at least one mode is required".into()));
    }
    match *domain {
        Domain::Interval { a, b } => {
            if !(a.is_finite() && b.is_finite() && b > a) {
                return Err(BasisError::Domain(format!("interval ({a}, {b}) is empty")));
            }
            if mesh_size < 10 * n_modes {
                return Err(BasisError::MeshTooCoarse {
                    mesh: mesh_size,
                    modes: n_modes,
                    needed: 10 * n_modes,
                });
            }
            build_interval(a, b, coeffs, chi, n_modes, mesh_size)
        }
        Domain::Rectangle { lx, ly } => {
            if !(lx.is_finite() && ly.is_finite() && lx > 0.0 && ly > 0.0) {
                return Err(BasisError::Domain(format!("rectangle {lx} x {ly} is empty")));
            }
            if !coeffs.is_constant() {
                return Err(BasisError::Domain(
                    "rectangles support constant coefficients only".into(),
                ));
            }
            build_rectangle(lx, ly, coeffs, chi, n_modes, mesh_size)
        }
    }
}

/// Stiffness and mass matrices of the P1 discretization over all nodes,
/// with two-point Gauss quadrature per element.
pub fn assemble_interval(
    a0: f64,
    b0: f64,
    coeffs: &Coefficients,
    nx: usize,
) -> Result<(Tridiagonal<f64>, Tridiagonal<f64>), BasisError> {
    let h = (b0 - a0) / nx as f64;
    let n = nx + 1;
    let mut k = Tridiagonal::zeros(n);
    let mut m = Tridiagonal::zeros(n);
    let g = 0.5 / 3f64.sqrt();
    let mut rho_s = Vec::with_capacity(2 * nx);
    let mut a_s = Vec::with_capacity(2 * nx);
    let mut q_s = Vec::with_capacity(2 * nx);
    for e in 0..nx {
        let xl = a0 + e as f64 * h;
        let (mut kd0, mut kd1, mut ko) = (0.0, 0.0, 0.0);
        let (mut md0, mut md1, mut mo) = (0.0, 0.0, 0.0);
        for s in [0.5 - g, 0.5 + g] {
            let p = Point::xy(xl + s * h, 0.0);
            let (rho, a, q) = (coeffs.rho.eval(p), coeffs.a.eval(p), coeffs.q.eval(p));
            rho_s.push(rho);
            a_s.push(a);
            q_s.push(q);
            let w = 0.5 * h;
            let (n0, n1) = (1.0 - s, s);
            let grad = a / (h * h);
            kd0 += w * (grad + q * n0 * n0);
            kd1 += w * (grad + q * n1 * n1);
            ko += w * (-grad + q * n0 * n1);
            md0 += w * rho * n0 * n0;
            md1 += w * rho * n1 * n1;
            mo += w * rho * n0 * n1;
        }
        k.diag[e] += kd0;
        k.diag[e + 1] += kd1;
        k.sup[e] += ko;
        k.sub[e] += ko;
        m.diag[e] += md0;
        m.diag[e + 1] += md1;
        m.sup[e] += mo;
        m.sub[e] += mo;
    }
    // nodal samples catch coefficients that dip between Gauss points
    let nodes: Vec<f64> = (0..=nx).map(|i| a0 + i as f64 * h).collect();
    for &x in &nodes {
        let p = Point::xy(x, 0.0);
        rho_s.push(coeffs.rho.eval(p));
        a_s.push(coeffs.a.eval(p));
        q_s.push(coeffs.q.eval(p));
    }
    check_lower_bound("rho", &rho_s, true)?;
    check_lower_bound("a", &a_s, true)?;
    check_lower_bound("q", &q_s, true)?;
    Ok((k, m))
}

fn restrict(t: &Tridiagonal<f64>, lo: usize, hi: usize) -> Tridiagonal<f64> {
    Tridiagonal {
        sub: t.sub[lo..hi - 1].to_vec(),
        diag: t.diag[lo..hi].to_vec(),
        sup: t.sup[lo..hi - 1].to_vec(),
    }
}

/// Smallest `count` eigenpairs of the symmetric-definite tridiagonal pencil
/// `(k, m)`: bisection on Sturm counts, then inverse iteration with
/// `m`-orthogonalization against the previous vectors.
pub fn tridiagonal_eigenpairs(
    k: &Tridiagonal<f64>,
    m: &Tridiagonal<f64>,
    count: usize,
) -> Result<(Vec<f64>, Vec<Vec<f64>>), BasisError> {
    let n = k.len();
    if count > n {
        return Err(BasisError::Eigen(format!("{count} eigenpairs requested from a system of size {n}")));
    }
    let mut hi = 1.0f64;
    while k.count_below(m, hi) < count {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(BasisError::Eigen("no upper bound for the spectrum".into()));
        }
    }
    let mut lo = 0.0f64;
    while k.count_below(m, lo) > 0 {
        lo = if lo == 0.0 { -1.0 } else { lo * 2.0 };
    }
    let mut values = Vec::with_capacity(count);
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(count);
    for j in 0..count {
        let (mut a, mut b) = (values.last().copied().unwrap_or(lo), hi);
        // invariant: count_below(a) <= j, count_below(b) > j
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if k.count_below(m, mid) > j {
                b = mid;
            } else {
                a = mid;
            }
        }
        let lambda = 0.5 * (a + b);
        values.push(lambda);

        let shifted = Tridiagonal {
            sub: k.sub.iter().zip(&m.sub).map(|(x, y)| x - lambda * y).collect(),
            diag: k.diag.iter().zip(&m.diag).map(|(x, y)| x - lambda * y).collect(),
            sup: k.sup.iter().zip(&m.sup).map(|(x, y)| x - lambda * y).collect(),
        };
        // deterministic start vector with components along every mode
        let mut v: Vec<f64> = (0..n)
            .map(|i| 1.0 + 0.5 * ((i as f64 + 1.0) * 0.618_033_988_749_895).fract())
            .collect();
        for _ in 0..3 {
            let rhs = m.mul_vec(&v);
            v = shifted.solve(&rhs);
            let norm = m.inner(&v, &v).sqrt();
            if !norm.is_finite() || norm == 0.0 {
                return Err(BasisError::Eigen(format!("inverse iteration broke down at mode {}", j + 1)));
            }
            v.iter_mut().for_each(|x| *x /= norm);
        }
        for prev in &vectors {
            let c = m.inner(prev, &v);
            v.iter_mut().zip(prev).for_each(|(x, p)| *x -= c * p);
        }
        let norm = m.inner(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        vectors.push(v);
    }
    Ok((values, vectors))
}

fn build_interval(
    a0: f64,
    b0: f64,
    coeffs: &Coefficients,
    chi: BoundaryKind,
    n_modes: usize,
    nx: usize,
) -> Result<SpectralBasis, BasisError> {
    let (k, m) = assemble_interval(a0, b0, coeffs, nx)?;
    let n = nx + 1;
    let h = (b0 - a0) / nx as f64;
    let density: Vec<f64> = (0..n).map(|i| coeffs.rho.eval(Point::xy(a0 + i as f64 * h, 0.0))).collect();
    let (lo, hi) = match chi {
        BoundaryKind::Dirichlet => (1, n - 1),
        BoundaryKind::Neumann => (0, n),
    };
    let (values, vectors) = tridiagonal_eigenpairs(&restrict(&k, lo, hi), &restrict(&m, lo, hi), n_modes)?;
    let mut eigenfunctions = Vec::with_capacity(n_modes);
    let mut traces = Vec::with_capacity(n_modes);
    for (v, &lambda) in vectors.into_iter().zip(&values) {
        let mut phi = vec![0.0; n];
        phi[lo..hi].copy_from_slice(&v);
        // sign convention: positive just inside the left endpoint
        if phi[lo] < 0.0 {
            phi.iter_mut().for_each(|x| *x = -*x);
        }
        let tr = match chi {
            BoundaryKind::Dirichlet => {
                // boundary residual of the discrete eigen-equation: the one-sided
                // flux difference corrected by the equation itself, second order
                // and consistent with the discrete Green identity
                let kphi = k.mul_vec(&phi);
                let mphi = m.mul_vec(&phi);
                vec![kphi[0] - lambda * mphi[0], kphi[n - 1] - lambda * mphi[n - 1]]
            }
            BoundaryKind::Neumann => vec![phi[0], phi[n - 1]],
        };
        eigenfunctions.push(phi);
        traces.push(tr);
    }
    Ok(SpectralBasis {
        chi,
        mesh: Mesh {
            domain: Domain::Interval { a: a0, b: b0 },
            nx,
            ny: 0,
        },
        eigenvalues: values,
        eigenfunctions,
        traces,
        trace_samples: Vec::new(),
        labels: (1..=n_modes).map(|i| (i, 0)).collect(),
        mass: MassMatrix::Tridiagonal(m),
        stiffness: Some(k),
        density,
    })
}

/// Normalized 1-D closed-form mode on `[0, l]` and its derivative.
fn mode_1d(chi: BoundaryKind, idx: usize, l: f64, x: f64) -> (f64, f64) {
    let w = idx as f64 * std::f64::consts::PI / l;
    match chi {
        BoundaryKind::Dirichlet => {
            let c = (2.0 / l).sqrt();
            (c * (w * x).sin(), c * w * (w * x).cos())
        }
        BoundaryKind::Neumann => {
            if idx == 0 {
                ((1.0 / l).sqrt(), 0.0)
            } else {
                let c = (2.0 / l).sqrt();
                (c * (w * x).cos(), -c * w * (w * x).sin())
            }
        }
    }
}

fn build_rectangle(
    lx: f64,
    ly: f64,
    coeffs: &Coefficients,
    chi: BoundaryKind,
    n_modes: usize,
    mesh_size: usize,
) -> Result<SpectralBasis, BasisError> {
    let p = Point::default();
    let (rho, a, q) = (coeffs.rho.eval(p), coeffs.a.eval(p), coeffs.q.eval(p));
    check_lower_bound("rho", &[rho], true)?;
    check_lower_bound("a", &[a], true)?;
    check_lower_bound("q", &[q], true)?;
    let first = match chi {
        BoundaryKind::Dirichlet => 1,
        BoundaryKind::Neumann => 0,
    };
    let lambda = |m: usize, n: usize| {
        let kx = m as f64 * std::f64::consts::PI / lx;
        let ky = n as f64 * std::f64::consts::PI / ly;
        (a * (kx * kx + ky * ky) + q) / rho
    };
    let bound = first + n_modes;
    let mut cands = Vec::new();
    for m in first..bound {
        for n in first..bound {
            cands.push((lambda(m, n), m, n));
        }
    }
    cands.sort_by(|x, y| {
        let tie = (x.0 - y.0).abs() <= 1e-12 * x.0.abs().max(y.0.abs());
        if tie {
            (x.1, x.2).cmp(&(y.1, y.2))
        } else {
            x.0.total_cmp(&y.0)
        }
    });
    cands.truncate(n_modes);
    let max_index = cands.iter().map(|c| c.1.max(c.2)).max().unwrap_or(1).max(1);
    if mesh_size < 10 * max_index {
        return Err(BasisError::MeshTooCoarse {
            mesh: mesh_size,
            modes: n_modes,
            needed: 10 * max_index,
        });
    }
    let mesh = Mesh {
        domain: Domain::Rectangle { lx, ly },
        nx: mesh_size,
        ny: mesh_size,
    };
    let nodes = mesh.nodes();
    let hx = lx / mesh_size as f64;
    let hy = ly / mesh_size as f64;
    let trap = |i: usize, nseg: usize, h: f64| if i == 0 || i == nseg { 0.5 * h } else { h };
    let mut weights = Vec::with_capacity(nodes.len());
    for j in 0..=mesh_size {
        for i in 0..=mesh_size {
            weights.push(rho * trap(i, mesh_size, hx) * trap(j, mesh_size, hy));
        }
    }
    let scale = 1.0 / rho.sqrt();
    let mut eigenvalues = Vec::new();
    let mut eigenfunctions = Vec::new();
    let mut traces = Vec::new();
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for &(lam, m, n) in &cands {
        let phi: Vec<f64> = nodes
            .iter()
            .map(|&(x, y)| scale * mode_1d(chi, m, lx, x).0 * mode_1d(chi, n, ly, y).0)
            .collect();
        // at least 20 points: four per index alone leaves ~1e-5 error on low modes
        let npts = (4 * m.max(n)).max(20);
        let (gx, gw) = gauss_legendre(npts);
        let mut edge_samples = Vec::with_capacity(4);
        let mut edge_integrals = Vec::with_capacity(4);
        // bottom, right, top, left
        for edge in 0..4 {
            let len = if edge % 2 == 0 { lx } else { ly };
            let mut vals = Vec::with_capacity(npts);
            let mut integral = 0.0;
            for (xi, wi) in gx.iter().zip(&gw) {
                let s = 0.5 * len * (xi + 1.0);
                let v = match (chi, edge) {
                    (BoundaryKind::Dirichlet, 0) => -a * mode_1d(chi, m, lx, s).0 * mode_1d(chi, n, ly, 0.0).1,
                    (BoundaryKind::Dirichlet, 1) => a * mode_1d(chi, m, lx, lx).1 * mode_1d(chi, n, ly, s).0,
                    (BoundaryKind::Dirichlet, 2) => a * mode_1d(chi, m, lx, s).0 * mode_1d(chi, n, ly, ly).1,
                    (BoundaryKind::Dirichlet, _) => -a * mode_1d(chi, m, lx, 0.0).1 * mode_1d(chi, n, ly, s).0,
                    (BoundaryKind::Neumann, 0) => mode_1d(chi, m, lx, s).0 * mode_1d(chi, n, ly, 0.0).0,
                    (BoundaryKind::Neumann, 1) => mode_1d(chi, m, lx, lx).0 * mode_1d(chi, n, ly, s).0,
                    (BoundaryKind::Neumann, 2) => mode_1d(chi, m, lx, s).0 * mode_1d(chi, n, ly, ly).0,
                    (BoundaryKind::Neumann, _) => mode_1d(chi, m, lx, 0.0).0 * mode_1d(chi, n, ly, s).0,
                } * scale;
                integral += 0.5 * len * wi * v;
                vals.push(v);
            }
            edge_samples.push(vals);
            edge_integrals.push(integral);
        }
        eigenvalues.push(lam);
        eigenfunctions.push(phi);
        traces.push(edge_integrals);
        samples.push(edge_samples);
        labels.push((m, n));
    }
    Ok(SpectralBasis {
        chi,
        mesh,
        eigenvalues,
        eigenfunctions,
        traces,
        trace_samples: samples,
        labels,
        density: vec![rho; weights.len()],
        mass: MassMatrix::Diagonal(weights),
        stiffness: None,
    })
}

impl SpectralBasis {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn components(&self) -> usize {
        self.mesh.domain.components()
    }

    /// Sum over boundary components of `h_c` times the adjoint trace of mode `n`
    /// (1-based index).
    pub fn trace_pairing(&self, n: usize, h: &[f64]) -> Result<f64, BasisError> {
        if n == 0 || n > self.len() {
            return Err(BasisError::IndexOutOfRange {
                index: n,
                count: self.len(),
            });
        }
        if h.len() != self.components() {
            return Err(BasisError::Shape {
                expected: self.components(),
                got: h.len(),
            });
        }
        Ok(self.traces[n - 1].iter().zip(h).map(|(t, v)| t * v).sum())
    }

    /// Pairings of a boundary datum with every mode.
    pub fn trace_pairings(&self, h: &[f64]) -> Vec<f64> {
        self.traces
            .iter()
            .map(|tr| tr.iter().zip(h).map(|(t, v)| t * v).sum())
            .collect()
    }

    /// `rho`-weighted inner products `<g, phi_n>` of nodal values `g`.
    pub fn project(&self, g: &[f64]) -> Result<Vec<f64>, BasisError> {
        let nn = self.mesh.node_count();
        if g.len() != nn {
            return Err(BasisError::Shape { expected: nn, got: g.len() });
        }
        let mg = self.mass.apply(g);
        Ok(self
            .eigenfunctions
            .iter()
            .map(|phi| phi.iter().zip(&mg).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `<rho^{-1} F, phi_n>` for nodal source values `F`, i.e. the unweighted
    /// integrals of `F phi_n`.
    pub fn project_source(&self, f: &[f64]) -> Result<Vec<f64>, BasisError> {
        if f.len() != self.density.len() {
            return Err(BasisError::Shape {
                expected: self.density.len(),
                got: f.len(),
            });
        }
        let g: Vec<f64> = f.iter().zip(&self.density).map(|(v, r)| v / r).collect();
        self.project(&g)
    }

    /// Nodal values of `sum_n c_n phi_n`.
    pub fn reconstruct(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.mesh.node_count()];
        for (c, phi) in coeffs.iter().zip(&self.eigenfunctions) {
            if *c != 0.0 {
                out.iter_mut().zip(phi).for_each(|(o, p)| *o += c * p);
            }
        }
        out
    }

    /// Serialize as the columnar text format read by [`SpectralBasis::import`].
    pub fn export(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# fracspec spectral basis v1");
        let _ = writeln!(s, "chi {}", self.chi.chi());
        let _ = writeln!(s, "modes {}", self.len());
        match self.mesh.domain {
            Domain::Interval { a, b } => {
                let _ = writeln!(s, "domain interval {a:?} {b:?}");
            }
            Domain::Rectangle { lx, ly } => {
                let _ = writeln!(s, "domain rectangle {lx:?} {ly:?}");
            }
        }
        let _ = writeln!(s, "mesh {} {}", self.mesh.nx, self.mesh.ny);
        let _ = writeln!(s, "components {}", self.components());
        let _ = writeln!(s, "# modes: index label_m label_n lambda trace_1..trace_C");
        for (i, lam) in self.eigenvalues.iter().enumerate() {
            let (lm, ln) = self.labels[i];
            let _ = write!(s, "{} {lm} {ln} {lam:?}", i + 1);
            for t in &self.traces[i] {
                let _ = write!(s, " {t:?}");
            }
            s.push('\n');
        }
        let _ = writeln!(s, "# nodes: x y rho mass_diag mass_sup stiff_diag stiff_sup phi_1..phi_N");
        let nodes = self.mesh.nodes();
        for (j, (x, y)) in nodes.iter().enumerate() {
            let (md, ms) = match &self.mass {
                MassMatrix::Tridiagonal(m) => (m.diag[j], m.sup.get(j).copied().unwrap_or(0.0)),
                MassMatrix::Diagonal(w) => (w[j], 0.0),
            };
            let (kd, ks) = match &self.stiffness {
                Some(k) => (k.diag[j], k.sup.get(j).copied().unwrap_or(0.0)),
                None => (0.0, 0.0),
            };
            let _ = write!(s, "{x:?} {y:?} {:?} {md:?} {ms:?} {kd:?} {ks:?}", self.density[j]);
            for phi in &self.eigenfunctions {
                let _ = write!(s, " {:?}", phi[j]);
            }
            s.push('\n');
        }
        s
    }

    pub fn export_to(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.export())
    }

    /// Parse the format written by [`SpectralBasis::export`]. Rectangle edge
    /// samples are not stored; pairings use the integrated traces.
    pub fn import(text: &str) -> Result<SpectralBasis, BasisError> {
        let bad = |m: &str| BasisError::Format(m.to_string());
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let mut header = |key: &str| -> Result<Vec<String>, BasisError> {
            let line = lines.next().ok_or_else(|| bad(&format!("missing '{key}' line")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(bad(&format!("expected '{key}' line, found '{line}'")));
            }
            Ok(parts.map(str::to_string).collect())
        };
        let num = |s: &str| -> Result<f64, BasisError> { s.parse::<f64>().map_err(|_| bad(&format!("bad number '{s}'"))) };
        let int = |s: &str| -> Result<usize, BasisError> { s.parse::<usize>().map_err(|_| bad(&format!("bad integer '{s}'"))) };
        let chi_v = header("chi")?;
        let chi = chi_v
            .first()
            .and_then(|c| c.parse::<u8>().ok())
            .and_then(BoundaryKind::from_chi)
            .ok_or_else(|| bad("chi must be 0 or 1"))?;
        let modes = int(header("modes")?.first().ok_or_else(|| bad("modes"))?)?;
        let dom = header("domain")?;
        if dom.len() != 3 {
            return Err(bad("domain line needs a kind and two numbers"));
        }
        let domain = match dom[0].as_str() {
            "interval" => Domain::Interval { a: num(&dom[1])?, b: num(&dom[2])? },
            "rectangle" => Domain::Rectangle { lx: num(&dom[1])?, ly: num(&dom[2])? },
            other => return Err(bad(&format!("unknown domain kind '{other}'"))),
        };
        let mesh_v = header("mesh")?;
        if mesh_v.len() != 2 {
            return Err(bad("mesh line needs nx and ny"));
        }
        let mesh = Mesh {
            domain,
            nx: int(&mesh_v[0])?,
            ny: int(&mesh_v[1])?,
        };
        let comps = int(header("components")?.first().ok_or_else(|| bad("components"))?)?;
        if comps != mesh.domain.components() {
            return Err(bad("component count does not match the domain"));
        }
        let mut eigenvalues = Vec::with_capacity(modes);
        let mut traces = Vec::with_capacity(modes);
        let mut labels = Vec::with_capacity(modes);
        for _ in 0..modes {
            let line = lines.next().ok_or_else(|| bad("truncated mode block"))?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 + comps {
                return Err(bad(&format!("mode row has {} fields, expected {}", f.len(), 4 + comps)));
            }
            labels.push((int(f[1])?, int(f[2])?));
            eigenvalues.push(num(f[3])?);
            traces.push(f[4..].iter().map(|v| num(v)).collect::<Result<Vec<_>, _>>()?);
        }
        let nn = mesh.node_count();
        let mut eigenfunctions = vec![vec![0.0; nn]; modes];
        let mut density = vec![0.0; nn];
        let mut md = vec![0.0; nn];
        let mut ms = vec![0.0; nn];
        let mut kd = vec![0.0; nn];
        let mut ks = vec![0.0; nn];
        for j in 0..nn {
            let line = lines.next().ok_or_else(|| bad("truncated node block"))?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 7 + modes {
                return Err(bad(&format!("node row has {} fields, expected {}", f.len(), 7 + modes)));
            }
            density[j] = num(f[2])?;
            md[j] = num(f[3])?;
            ms[j] = num(f[4])?;
            kd[j] = num(f[5])?;
            ks[j] = num(f[6])?;
            for (n, phi) in eigenfunctions.iter_mut().enumerate() {
                phi[j] = num(f[7 + n])?;
            }
        }
        if lines.next().is_some() {
            return Err(bad("trailing data after node block"));
        }
        let (mass, stiffness) = if mesh.ny == 0 {
            let off = nn - 1;
            let m = Tridiagonal {
                sub: ms[..off].to_vec(),
                diag: md,
                sup: ms[..off].to_vec(),
            };
            let k = Tridiagonal {
                sub: ks[..off].to_vec(),
                diag: kd,
                sup: ks[..off].to_vec(),
            };
            (MassMatrix::Tridiagonal(m), Some(k))
        } else {
            (MassMatrix::Diagonal(md), None)
        };
        Ok(SpectralBasis {
            chi,
            mesh,
            eigenvalues,
            eigenfunctions,
            traces,
            trace_samples: Vec::new(),
            labels,
            mass,
            stiffness,
            density,
        })
    }
}

/// `(sum c_n^2 lambda_n^{2s})^{1/2}`; negative `s` gives the dual norm.
pub fn fractional_norm(coeffs: &[f64], eigenvalues: &[f64], s: f64) -> Result<f64, BasisError> {
    if coeffs.len() != eigenvalues.len() {
        return Err(BasisError::Shape {
            expected: eigenvalues.len(),
            got: coeffs.len(),
        });
    }
    Ok(coeffs
        .iter()
        .zip(eigenvalues)
        .map(|(c, l)| c * c * l.powf(2.0 * s))
        .sum::<f64>()
        .sqrt())
}

/// Partial sums `S_N = sum_{n<=N} lambda_n^{-2(1+kappa)} |<h, tau* phi_n>|^2`
/// with `kappa = (2 theta - 1)/4`.
pub fn lemma_l1_diagnostic(basis: &SpectralBasis, h: &[f64], theta: f64) -> Result<Vec<f64>, BasisError> {
    if h.len() != basis.components() {
        return Err(BasisError::Shape {
            expected: basis.components(),
            got: h.len(),
        });
    }
    let kappa = (2.0 * theta - 1.0) / 4.0;
    let mut acc = 0.0;
    Ok(basis
        .trace_pairings(h)
        .iter()
        .zip(&basis.eigenvalues)
        .map(|(p, l)| {
            acc += l.powf(-2.0 * (1.0 + kappa)) * p * p;
            acc
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn unit() -> Domain {
        Domain::Interval { a: 0.0, b: 1.0 }
    }

    #[test]
    fn dirichlet_closed_form() {
        let b = build_basis(&unit(), &Coefficients::constant(1.0, 1.0, 1.0), BoundaryKind::Dirichlet, 8, 800).unwrap();
        for n in 1..=8 {
            let exact = (n as f64 * PI).powi(2) + 1.0;
            assert!((b.eigenvalues[n - 1] - exact).abs() < 2e-4 * exact * (n * n) as f64);
            let want = -(2f64).sqrt() * n as f64 * PI;
            let got = b.traces[n - 1][0];
            assert!((got - want).abs() < 1e-3 * want.abs(), "n={n} {got} {want}");
        }
        assert!((b.eigenvalues[0] - 10.869_604_4).abs() < 1e-3);
    }

    #[test]
    fn neumann_constant_mode() {
        let b = build_basis(&unit(), &Coefficients::constant(1.0, 1.0, 1.0), BoundaryKind::Neumann, 4, 400).unwrap();
        assert!((b.eigenvalues[0] - 1.0).abs() < 1e-12);
        for v in &b.eigenfunctions[0] {
            assert!((v - 1.0).abs() < 1e-10);
        }
        let p = b.trace_pairing(1, &[1.0, 1.0]).unwrap();
        assert!((p - 2.0).abs() < 1e-10);
    }

    #[test]
    fn orthonormal_and_projection() {
        let coeffs = Coefficients {
            rho: Expr::parse("1 + 0.5*x").unwrap(),
            a: Expr::parse("2 - x^2").unwrap(),
            q: Expr::parse("1 + sin(3*x)^2").unwrap(),
        };
        let b = build_basis(&unit(), &coeffs, BoundaryKind::Dirichlet, 12, 240).unwrap();
        for i in 0..12 {
            for j in 0..12 {
                let v = b.mass.inner(&b.eigenfunctions[i], &b.eigenfunctions[j]);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-10, "{i} {j} {v}");
            }
        }
        let c = b.project(&b.eigenfunctions[2]).unwrap();
        for (k, v) in c.iter().enumerate() {
            assert!((v - if k == 2 { 1.0 } else { 0.0 }).abs() < 1e-10);
        }
        assert!(b.project(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn coefficient_violations() {
        let err = build_basis(&unit(), &Coefficients::constant(1.0, 1.0, 0.0), BoundaryKind::Dirichlet, 4, 40).unwrap_err();
        assert!(matches!(err, BasisError::Coefficient { name: "q", .. }));
        let err = build_basis(&unit(), &Coefficients::constant(1.0, 1.0, 1.0), BoundaryKind::Dirichlet, 8, 40).unwrap_err();
        assert!(matches!(err, BasisError::MeshTooCoarse { .. }));
    }

    #[test]
    fn rectangle_modes() {
        let d = Domain::Rectangle { lx: 1.0, ly: 1.0 };
        let b = build_basis(&d, &Coefficients::constant(1.0, 1.0, 1.0), BoundaryKind::Dirichlet, 6, 80).unwrap();
        assert_eq!(b.labels[0], (1, 1));
        assert_eq!(b.labels[1], (1, 2));
        assert_eq!(b.labels[2], (2, 1));
        assert!((b.eigenvalues[0] - (2.0 * PI * PI + 1.0)).abs() < 1e-12);
        for i in 0..6 {
            for j in 0..6 {
                let v = b.mass.inner(&b.eigenfunctions[i], &b.eigenfunctions[j]);
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
        // bottom-edge conormal integral of 2 sin(pi x) sin(pi y): -2 pi * (2/pi)
        assert!((b.traces[0][0] + 4.0).abs() < 1e-12);
        let n = build_basis(&d, &Coefficients::constant(2.0, 1.0, 1.0), BoundaryKind::Neumann, 3, 40).unwrap();
        assert!((n.eigenvalues[0] - 0.5).abs() < 1e-14);
        assert!((n.traces[0][0] - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn export_import_round_trip() {
        let b = build_basis(&unit(), &Coefficients::constant(1.0, 1.0, 1.0), BoundaryKind::Neumann, 3, 30).unwrap();
        let back = SpectralBasis::import(&b.export()).unwrap();
        assert_eq!(back, b);
        assert!(SpectralBasis::import("chi 3\n").is_err());
    }

    #[test]
    fn fractional_norm_cases() {
        let l = [10.0, 20.0];
        assert_eq!(fractional_norm(&[3.0, 4.0], &l, 0.0).unwrap(), 5.0);
        assert_eq!(fractional_norm(&[1.0, 0.0], &l, 1.0).unwrap(), 10.0);
        assert!(fractional_norm(&[1.0], &l, 1.0).is_err());
    }
}
