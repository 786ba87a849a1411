use std::f64::consts::PI;

use fracspec::expr::Expr;
use fracspec::spectral_basis::*;
use proptest::prelude::*;

fn unit() -> Domain {
    Domain::Interval { a: 0.0, b: 1.0 }
}

fn unit_basis(chi: BoundaryKind, n: usize, mesh: usize) -> SpectralBasis {
    build_basis(&unit(), &Coefficients::constant(1.0, 1.0, 1.0), chi, n, mesh).unwrap()
}

fn xs(b: &SpectralBasis) -> Vec<f64> {
    b.mesh.nodes().iter().map(|n| n.0).collect()
}

#[test]
fn parabola_sine_coefficients() {
    // <x(1-x), sqrt2 sin(n pi x)> = 2 sqrt2 (1 - (-1)^n) / (n pi)^3
    let b = unit_basis(BoundaryKind::Dirichlet, 8, 6400);
    let g: Vec<f64> = xs(&b).iter().map(|x| x * (1.0 - x)).collect();
    let c = b.project(&g).unwrap();
    for (i, got) in c.iter().enumerate() {
        let n = (i + 1) as f64;
        let sign = if (i + 1) % 2 == 0 { 1.0 } else { -1.0 };
        let want = 2.0 * 2f64.sqrt() * (1.0 - sign) / (n * PI).powi(3);
        assert!((got - want).abs() <= 1e-8, "n={n}: {got} vs {want}");
    }
    assert!(b.project(&vec![0.0; g.len()]).unwrap().iter().all(|v| *v == 0.0));
}

#[test]
fn trace_pairing_examples() {
    let b = unit_basis(BoundaryKind::Dirichlet, 6, 1200);
    for n in 1..=6 {
        let want = -(2f64).sqrt() * n as f64 * PI;
        let got = b.trace_pairing(n, &[1.0, 0.0]).unwrap();
        assert!((got - want).abs() <= 1e-4 * want.abs(), "n={n}: {got} vs {want}");
        assert_eq!(b.trace_pairing(n, &[0.0, 0.0]).unwrap(), 0.0);
    }
    assert!(matches!(b.trace_pairing(7, &[1.0, 0.0]), Err(BasisError::IndexOutOfRange { .. })));
    let nb = unit_basis(BoundaryKind::Neumann, 3, 300);
    let phi = nb.eigenfunctions[0][0];
    assert!((nb.trace_pairing(1, &[1.0, 1.0]).unwrap() - 2.0 * phi).abs() < 1e-12);
}

#[test]
fn fractional_norm_of_first_mode() {
    let b = unit_basis(BoundaryKind::Dirichlet, 4, 4000);
    let lam1 = PI * PI + 1.0;
    let v = fractional_norm(&[1.0, 0.0, 0.0, 0.0], &b.eigenvalues, -0.5).unwrap();
    assert!((v - 1.0 / lam1.sqrt()).abs() < 1e-7);
    // the quoted four-digit value 0.30326 is within 6e-5 of 1/sqrt(lambda_1) = 0.303316
    assert!((v - 0.30326).abs() < 1e-4);
    let v = fractional_norm(&[1.0, 0.0, 0.0, 0.0], &b.eigenvalues, 1.0).unwrap();
    assert_eq!(v, b.eigenvalues[0]);
}

#[test]
fn lemma_partial_sums_match_scalar_series() {
    let b = unit_basis(BoundaryKind::Dirichlet, 32, 6400);
    let s = lemma_l1_diagnostic(&b, &[1.0, 0.0], 0.5).unwrap();
    let mut direct = 0.0;
    for (i, got) in s.iter().enumerate() {
        let n = (i + 1) as f64;
        let l = (n * PI).powi(2) + 1.0;
        direct += 2.0 * (n * PI).powi(2) / (l * l);
        assert!((got - direct).abs() <= 1e-4 * direct, "N={n}: {got} vs {direct}");
    }
    assert!(s.windows(2).all(|w| w[1] >= w[0]));
    assert!(*s.last().unwrap() < 1.0 / 3.0);
    assert!(lemma_l1_diagnostic(&b, &[0.0, 0.0], 0.5).unwrap().iter().all(|v| *v == 0.0));
}

#[test]
fn lemma_partial_sums_are_cauchy() {
    for h in [[1.0, 0.0], [0.3, -2.0]] {
        let mut gaps = Vec::new();
        for n in [16usize, 32, 64] {
            let b = unit_basis(BoundaryKind::Dirichlet, 2 * n, 20 * n);
            let s = lemma_l1_diagnostic(&b, &h, 0.5).unwrap();
            gaps.push(s[2 * n - 1] - s[n - 1]);
        }
        assert!(gaps[1] < 0.6 * gaps[0] && gaps[2] < 0.6 * gaps[1], "{gaps:?}");
    }
}

#[test]
fn eigenvalue_error_ratio_under_mesh_halving() {
    let n_modes = 16;
    let err = |mesh| -> Vec<f64> {
        let b = unit_basis(BoundaryKind::Dirichlet, n_modes, mesh);
        (0..n_modes).map(|i| (b.eigenvalues[i] - (((i + 1) as f64 * PI).powi(2) + 1.0)).abs()).collect()
    };
    let (coarse, fine) = (err(320), err(640));
    for n in 0..n_modes / 4 {
        let r = coarse[n] / fine[n];
        assert!((3.5..=4.5).contains(&r), "n={} ratio {r}", n + 1);
    }
}

#[test]
fn build_is_deterministic() {
    let coeffs = Coefficients {
        rho: Expr::parse("1 + x").unwrap(),
        a: Expr::parse("1 + x^2").unwrap(),
        q: Expr::parse("2").unwrap(),
    };
    let a = build_basis(&unit(), &coeffs, BoundaryKind::Dirichlet, 10, 200).unwrap();
    let b = build_basis(&unit(), &coeffs, BoundaryKind::Dirichlet, 10, 200).unwrap();
    for (x, y) in a.traces.iter().flatten().zip(b.traces.iter().flatten()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn variable_coefficient_invariants(r1 in 0.0f64..2.0, a1 in 0.0f64..2.0, q0 in 0.1f64..5.0, q1 in 0.0f64..3.0, neumann in any::<bool>()) {
        let coeffs = Coefficients {
            rho: Expr::parse(&format!("1 + {r1:?}*x")).unwrap(),
            a: Expr::parse(&format!("1 + {a1:?}*x^2")).unwrap(),
            q: Expr::parse(&format!("{q0:?} + {q1:?}*x*(1 - x)")).unwrap(),
        };
        let chi = if neumann { BoundaryKind::Neumann } else { BoundaryKind::Dirichlet };
        let b = build_basis(&unit(), &coeffs, chi, 8, 160).unwrap();
        // positive, ascending
        prop_assert!(b.eigenvalues[0] > 0.0);
        prop_assert!(b.eigenvalues.windows(2).all(|w| w[1] >= w[0]));
        // Rayleigh bound lambda_1 >= q0 / rho_max
        prop_assert!(b.eigenvalues[0] >= q0 / (1.0 + r1) * (1.0 - 1e-12));
        for i in 0..8 {
            for j in 0..8 {
                let v = b.mass.inner(&b.eigenfunctions[i], &b.eigenfunctions[j]);
                let delta = if i == j { 1.0 } else { 0.0 };
                prop_assert!((v - delta).abs() <= 1e-10, "<phi_{}, phi_{}> = {}", i, j, v);
            }
        }
    }
}
