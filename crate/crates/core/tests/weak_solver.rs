use fracspec::elliptic_compat::steady_solve;
use fracspec::expr::Expr;
use fracspec::mittag_leffler::MittagLeffler;
use fracspec::problem_model::*;
use fracspec::spectral_basis::*;
use fracspec::weak_solver::*;
use libm::tgamma;
use proptest::prelude::*;

fn basis(chi: BoundaryKind, n: usize) -> SpectralBasis {
    build_basis(&Domain::Interval { a: 0.0, b: 1.0 }, &Coefficients::constant(1.0, 1.0, 1.0), chi, n, 10 * n).unwrap()
}

fn signal(s: &str) -> TimeSignal {
    TimeSignal::Closed(Expr::parse(s).unwrap())
}

fn field(s: &str) -> SpatialData {
    SpatialData::Closed(Expr::parse(s).unwrap())
}

fn max_abs(rows: &[Vec<f64>]) -> f64 {
    rows.iter().flatten().filter(|v| v.is_finite()).fold(0.0, |m, v| m.max(v.abs()))
}

#[test]
fn zero_data_gives_zero_series() {
    for (alpha, chi) in [(0.5, BoundaryKind::Dirichlet), (1.5, BoundaryKind::Neumann)] {
        let b = basis(chi, 6);
        let p = Problem::unit_interval(alpha, chi, 1.0);
        let g = TimeGrid::new(1.0, 40).unwrap();
        for s in solve_orders(&p, &b, &g, &[0, 1, 2, 3], false).unwrap() {
            assert!(s.values.iter().flatten().all(|v| *v == 0.0), "order {}", s.order);
        }
    }
}

#[test]
fn initial_row_is_the_projection() {
    let b = basis(BoundaryKind::Dirichlet, 8);
    let mut p = Problem::unit_interval(0.7, BoundaryKind::Dirichlet, 1.0);
    p.u0 = field("x*(1 - x)*exp(x)");
    p.boundary[1] = signal("t^2");
    let s = solve_modes(&p, &b, &TimeGrid::new(1.0, 20).unwrap()).unwrap();
    let (u0, _) = initial_coefficients(&p, &b).unwrap();
    assert_eq!(s.at(0), u0);
}

#[test]
fn restriction_to_a_shorter_horizon() {
    let b = basis(BoundaryKind::Dirichlet, 16);
    let mut p1 = Problem::unit_interval(0.5, BoundaryKind::Dirichlet, 1.0);
    p1.boundary[0] = signal("sin(3*t)");
    p1.source = Source::Field(Expr::parse("x*cos(t)").unwrap());
    p1.u0 = field("sin(pi*x)");
    let mut p2 = p1.clone();
    p2.horizon = 2.0;
    let h = 0.01;
    let g1 = TimeGrid::from_parts(h, 100, Some(1e-8)).unwrap();
    let g2 = TimeGrid::from_parts(h, 200, Some(1e-8)).unwrap();
    let s1 = solve_modes(&p1, &b, &g1).unwrap();
    let s2 = solve_modes(&p2, &b, &g2).unwrap();
    for (k, t) in g1.times.iter().enumerate() {
        assert_eq!(g2.times[k], *t);
        for n in 0..b.len() {
            let (a, c) = (s1.values[n][k], s2.values[n][k]);
            assert!((a - c).abs() <= 1e-12 * a.abs().max(1e-300) || a == c, "mode {n} t={t}: {a} vs {c}");
        }
    }
}

#[test]
fn steady_limit_of_constant_data() {
    // u_n(t) - w_n = -w_n E_{a,1}(-lambda_n t^a) for u0 = 0 and time-constant data
    let alpha = 0.5;
    let b = basis(BoundaryKind::Dirichlet, 16);
    let lam1 = b.eigenvalues[0];
    let t_big = 50.0 * lam1.powf(-1.0 / alpha);
    let mut p = Problem::unit_interval(alpha, BoundaryKind::Dirichlet, t_big);
    p.boundary[0] = signal("1");
    p.source = Source::Field(Expr::parse("2*x").unwrap());
    let src: Vec<f64> = b.mesh.nodes().iter().map(|n| 2.0 * n.0).collect();
    let w = steady_solve(&b, &[1.0, 0.0], Some(&src)).unwrap();
    let g = TimeGrid::new(t_big, 400).unwrap();
    let s = solve_modes(&p, &b, &g).unwrap();
    let e = MittagLeffler::new(alpha, 1.0).unwrap();
    for n in 0..b.len() {
        let row = &s.values[n];
        let mut prev = f64::INFINITY;
        for (k, &t) in g.times.iter().enumerate() {
            let gap = (row[k] - w[n]).abs();
            let want = w[n].abs() * e.eval(-b.eigenvalues[n] * t.powf(alpha));
            assert!((gap - want).abs() <= 1e-9 * w[n].abs().max(1e-12), "mode {n} t={t}: {gap} vs {want}");
            assert!(gap <= prev * (1.0 + 1e-12) + 1e-15);
            prev = gap;
        }
        // algebraic approach: the remaining gap is at most |w_n| / (Gamma(1-a) lambda_n t^a)
        let bound = w[n].abs() / (tgamma(1.0 - alpha) * b.eigenvalues[n] * t_big.powf(alpha));
        assert!((row[row.len() - 1] - w[n]).abs() <= bound * (1.0 + 1e-9));
    }
}

#[test]
fn derivative_onset_at_unit_boundary_step() {
    // u0 = 0, f(0) = (1, 0): u_n'(t) ~ b_n t^{a-1} E_{a,a}(-lambda_n t^a) ~ b_n t^{a-1} / Gamma(a)
    let alpha = 0.4;
    let b = basis(BoundaryKind::Dirichlet, 8);
    let mut p = Problem::unit_interval(alpha, BoundaryKind::Dirichlet, 1.0);
    p.boundary[0] = signal("cos(t)");
    let g = TimeGrid::new(1.0, 100).unwrap();
    let d = first_derivative_modes(&p, &b, &g).unwrap();
    let k = g.times.iter().position(|&t| t >= 1e-7).unwrap();
    let t = g.times[k];
    let e = MittagLeffler::new(alpha, alpha).unwrap();
    for n in 0..b.len() {
        let bn = -b.traces[n][0];
        let lead = bn * t.powf(alpha - 1.0) * e.eval(-b.eigenvalues[n] * t.powf(alpha));
        assert!((d.values[n][k] / lead - 1.0).abs() < 1e-3, "mode {n}: {} vs {lead}", d.values[n][k]);
        let crude = bn * t.powf(alpha - 1.0) / tgamma(alpha);
        if n == 0 {
            assert!((d.values[n][k] / crude - 1.0).abs() < 0.05);
        }
        assert_eq!(d.values[n][0], bn.signum() * f64::INFINITY);
    }
}

#[test]
fn stationary_start_has_zero_derivative() {
    let b = basis(BoundaryKind::Neumann, 8);
    let mut p = Problem::unit_interval(0.6, BoundaryKind::Neumann, 1.0);
    p.boundary = vec![signal("2"), signal("-1")];
    let w = steady_solve(&b, &[2.0, -1.0], None).unwrap();
    p.u0 = SpatialData::Modes(w.clone());
    let g = TimeGrid::new(1.0, 50).unwrap();
    let s = solve_orders(&p, &b, &g, &[0, 1], false).unwrap();
    let scale = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(max_abs(&s[1].values) <= 1e-10 * scale * b.eigenvalues[7]);
    for n in 0..8 {
        assert!(s[0].values[n].iter().all(|v| (v - w[n]).abs() <= 1e-12 * scale));
    }
}

/// Largest deviation of `d` from central differences of `u` on interior
/// lattice points of a uniform grid, relative to max |d|.
fn central_gap(u: &ModeSeries, d: &ModeSeries, second: bool) -> f64 {
    let h = u.grid.step;
    let scale = max_abs(&d.values);
    let mut worst: f64 = 0.0;
    for n in 0..u.modes() {
        let r = &u.values[n];
        for k in 2..r.len() - 1 {
            let fd = if second {
                (r[k + 1] - 2.0 * r[k] + r[k - 1]) / (h * h)
            } else {
                (r[k + 1] - r[k - 1]) / (2.0 * h)
            };
            worst = worst.max((d.values[n][k] - fd).abs());
        }
    }
    worst / scale
}

#[test]
fn first_derivative_matches_differences() {
    // compatible: f(0) = 0, F(0) = 0, u0 = 0
    let b = basis(BoundaryKind::Dirichlet, 8);
    let mut p = Problem::unit_interval(0.5, BoundaryKind::Dirichlet, 1.0);
    p.boundary[0] = signal("t^2*exp(-t)");
    p.source = Source::Field(Expr::parse("t^2*x*(1 - x)").unwrap());
    let g = TimeGrid::uniform(1.0, 2000).unwrap();
    let s = solve_orders(&p, &b, &g, &[0, 1], false).unwrap();
    let gap = central_gap(&s[0], &s[1], false);
    assert!(gap <= 1e-4, "relative gap {gap:e}");
}

#[test]
fn second_derivative_matches_differences() {
    // alpha = 1.5 with both defects zero: f(0) = f'(0) = 0, u0 = u1 = 0
    let b = basis(BoundaryKind::Dirichlet, 8);
    let mut p = Problem::unit_interval(1.5, BoundaryKind::Dirichlet, 1.0);
    p.boundary[0] = signal("1 - cos(t)");
    let g = TimeGrid::uniform(1.0, 2000).unwrap();
    let s = solve_orders(&p, &b, &g, &[0, 2], false).unwrap();
    let gap = central_gap(&s[0], &s[1], true);
    assert!(gap <= 1e-3, "relative gap {gap:e}");
}

#[test]
fn second_derivative_blows_up_with_first_defect() {
    // alpha = 1.5, constant source: d_n = <F, phi_n> != 0 and |u_n''| >= c |d_n| t^{a-2} - C
    let alpha = 1.5;
    let b = basis(BoundaryKind::Dirichlet, 4);
    let mut p = Problem::unit_interval(alpha, BoundaryKind::Dirichlet, 1.0);
    p.source = Source::Field(Expr::constant(1.0));
    let g = TimeGrid::new(1.0, 100).unwrap();
    let d = second_derivative_modes(&p, &b, &g).unwrap();
    let ones = vec![1.0; b.mesh.node_count()];
    let dn = b.project_source(&ones).unwrap();
    for n in [0, 2] {
        for (k, &t) in g.times.iter().enumerate().skip(1) {
            if t > 1e-4 {
                break;
            }
            let envelope = 0.5 * dn[n].abs() * t.powf(alpha - 2.0) / tgamma(alpha - 1.0) - 1.0;
            assert!(d.values[n][k].abs() >= envelope, "mode {n} t={t}");
        }
    }
}

#[test]
fn laplace_closed_forms() {
    let alpha = 0.5;
    let b = basis(BoundaryKind::Dirichlet, 6);
    let mut p = Problem::unit_interval(alpha, BoundaryKind::Dirichlet, 1.0);
    p.u0 = field("x*(1 - x)");
    let (u0, _) = initial_coefficients(&p, &b).unwrap();
    for pp in [0.5, 1.0, 3.0] {
        for n in 1..=6 {
            let m = mode_laplace(&p, &b, n, pp).unwrap();
            let want = pp.powf(alpha - 1.0) * u0[n - 1] / (pp.powf(alpha) + b.eigenvalues[n - 1]);
            assert!((m.value - want).abs() <= 1e-15 * want.abs().max(1e-300));
            assert!((m.denom * m.value - m.rhs).abs() <= 1e-15 * m.rhs.abs());
        }
    }
    let z = Problem::unit_interval(alpha, BoundaryKind::Dirichlet, 1.0);
    assert_eq!(mode_laplace(&z, &b, 1, 1.0).unwrap().value, 0.0);
    assert!(matches!(mode_laplace(&z, &b, 1, 0.0), Err(SolverError::NonPositiveP(_))));
}

#[test]
fn single_mode_field_profile() {
    let b = basis(BoundaryKind::Dirichlet, 8);
    let mut p = Problem::unit_interval(0.5, BoundaryKind::Dirichlet, 1.0);
    p.u0 = SpatialData::Modes(vec![0.0, 0.0, 1.5]);
    let g = TimeGrid::new(1.0, 10).unwrap();
    let s = solve_modes(&p, &b, &g).unwrap();
    let f = evaluate_solution(&s, &b, Some(&p), Reconstruction::Truncated).unwrap();
    for (k, row) in f.values.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            assert!((v - s.values[2][k] * b.eigenfunctions[2][j]).abs() <= 1e-14);
        }
    }
    assert_eq!(f.tail_fraction, 0.0);
}

#[test]
fn csv_header_and_rows() {
    let b = basis(BoundaryKind::Neumann, 2);
    let mut p = Problem::unit_interval(0.5, BoundaryKind::Neumann, 1.0);
    p.boundary[0] = signal("1");
    let g = TimeGrid::new(1.0, 4).unwrap();
    let d = first_derivative_modes(&p, &b, &g).unwrap();
    let csv = d.to_csv();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# alpha=0.5 chi=1 N=2 order=1 grid="));
    assert_eq!(lines.next().unwrap(), "t,u_1,u_2");
    let first = lines.next().unwrap();
    assert!(first.starts_with("0.0,inf,") || first.starts_with("0.0,-inf,"), "{first}");
    assert_eq!(csv.lines().count(), 2 + g.len());
}

fn data_set(c: [f64; 5]) -> Problem {
    let mut p = Problem::unit_interval(0.6, BoundaryKind::Dirichlet, 1.0);
    p.boundary = vec![signal(&format!("{:?}*sin(2*t) + {:?}", c[0], c[1])), signal(&format!("{:?}*t", c[2]))];
    p.source = Source::Field(Expr::parse(&format!("{:?}*x*cos(t)", c[3])).unwrap());
    p.u0 = field(&format!("{:?}*sin(pi*x)*x", c[4]));
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn modal_solution_is_linear(
        a in prop::array::uniform5(-2.0f64..2.0),
        b in prop::array::uniform5(-2.0f64..2.0),
        c1 in -3.0f64..3.0,
        c2 in -3.0f64..3.0,
    ) {
        let basis = basis(BoundaryKind::Dirichlet, 8);
        let g = TimeGrid::new(1.0, 30).unwrap();
        let mut mix = [0.0; 5];
        for i in 0..5 {
            mix[i] = c1 * a[i] + c2 * b[i];
        }
        let sa = solve_orders(&data_set(a), &basis, &g, &[0, 1], false).unwrap();
        let sb = solve_orders(&data_set(b), &basis, &g, &[0, 1], false).unwrap();
        let sm = solve_orders(&data_set(mix), &basis, &g, &[0, 1], false).unwrap();
        for o in 0..2 {
            let scale = max_abs(&sa[o].values).max(max_abs(&sb[o].values)) * (c1.abs() + c2.abs()).max(1.0);
            for n in 0..8 {
                for k in 1..g.len() {
                    let want = c1 * sa[o].values[n][k] + c2 * sb[o].values[n][k];
                    prop_assert!((sm[o].values[n][k] - want).abs() <= 1e-12 * scale, "order {} mode {} k {}", o, n, k);
                }
            }
        }
    }
}
