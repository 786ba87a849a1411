#![allow(clippy::excessive_precision, clippy::approx_constant)]

use fracspec::mittag_leffler::*;
use proptest::prelude::*;
use libm::{erfc, tgamma as gamma};

/// `(alpha, beta, z, E_{alpha,beta}(z))`, summed from the power series with
/// enough working digits to absorb the cancellation (mpmath).
const REFERENCE: &[(f64, f64, f64, f64)] = &[
    (0.3, 1.0, -7.5, 0.094995693498016271053),
    (0.3, 1.0, -3.0, 0.21180263319643578039),
    (0.3, 1.0, -1.0, 0.45659440832969066901),
    (0.3, 1.0, -0.25, 0.77807454640151807142),
    (0.3, 1.0, 0.0, 1.0),
    (0.3, 1.0, 0.5, 2.0620157899559994849),
    (0.3, 1.0, 2.0, 79485.907625183497177),
    (0.3, 1.0, 5.0, 2.2491502775547118727e+93),
    (0.3, 0.3, -7.5, 0.0035039929745997480631),
    (0.3, 0.3, -3.0, 0.017243316421744134765),
    (0.3, 0.3, -1.0, 0.077316799030089675954),
    (0.3, 0.3, -0.25, 0.21141676594025953036),
    (0.3, 0.3, 0.0, 0.33427275256419055398),
    (0.3, 0.3, 0.5, 1.1694769581219357911),
    (0.3, 0.3, 2.0, 400586.4336688223654),
    (0.3, 0.3, 5.0, 9.6149821876994355567e+94),
    (0.3, 2.0, -7.5, 0.1289456451815872955),
    (0.3, 2.0, -3.0, 0.271957297803449303),
    (0.3, 2.0, -1.0, 0.53236426762590700077),
    (0.3, 2.0, -0.25, 0.8222517626338489212),
    (0.3, 2.0, 0.0, 1.0),
    (0.3, 2.0, 0.5, 1.7120646346483250311),
    (0.3, 2.0, 2.0, 7885.0134504584137592),
    (0.3, 2.0, 5.0, 1.0522488491962189682e+91),
    (0.5, 1.0, -50.0, 0.0112815362653237725),
    (0.5, 1.0, -20.0, 0.028174348741051319319),
    (0.5, 1.0, -7.5, 0.074573693062876683005),
    (0.5, 1.0, -3.0, 0.17900115118138995042),
    (0.5, 1.0, -1.0, 0.42758357615580700441),
    (0.5, 1.0, -0.25, 0.77034654773099674392),
    (0.5, 1.0, 0.0, 1.0),
    (0.5, 1.0, 0.5, 1.9523604891825570933),
    (0.5, 1.0, 2.0, 108.94090438997797241),
    (0.5, 1.0, 5.0, 144009798674.66104041),
    (0.5, 0.5, -50.0, 0.00011277028156766193889),
    (0.5, 0.5, -20.0, 0.0007026087267299005751),
    (0.5, 0.5, -7.5, 0.0048868855761811644096),
    (0.5, 0.5, -3.0, 0.02718613000358643569),
    (0.5, 0.5, -1.0, 0.13660600739194928254),
    (0.5, 0.5, -0.25, 0.37160294661500710097),
    (0.5, 0.5, 0.0, 0.56418958354775628695),
    (0.5, 0.5, 0.5, 1.5403698281390348336),
    (0.5, 0.5, 2.0, 218.44599836350370111),
    (0.5, 0.5, 5.0, 720048993373.86939164),
    (0.5, 2.0, -50.0, 0.022172095956416380987),
    (0.5, 2.0, -20.0, 0.053989394226628256993),
    (0.5, 2.0, -7.5, 0.133998532378297262),
    (0.5, 2.0, -3.0, 0.28490429471865863023),
    (0.5, 2.0, -1.0, 0.55596274325131957831),
    (0.5, 2.0, -0.25, 0.83906143207799819825),
    (0.5, 2.0, 0.0, 1.0),
    (0.5, 2.0, 0.5, 1.5526836225392032253),
    (0.5, 2.0, 2.0, 26.421036513946736816),
    (0.5, 2.0, 5.0, 5760391946.720765783),
    (0.8, 1.0, -50.0, 0.0044677761579029932956),
    (0.8, 1.0, -20.0, 0.011617250451432780556),
    (0.8, 1.0, -7.5, 0.034847237775122032146),
    (0.8, 1.0, -3.0, 0.11292019868221739872),
    (0.8, 1.0, -1.0, 0.38694857861897685146),
    (0.8, 1.0, -0.25, 0.77052437758847089746),
    (0.8, 1.0, 0.0, 1.0),
    (0.8, 1.0, 0.5, 1.7632036743667130526),
    (0.8, 1.0, 2.0, 13.415748887819016952),
    (0.8, 1.0, 5.0, 2208.064357586446868),
    (0.8, 0.8, -50.0, 0.000073315313829055350737),
    (0.8, 0.8, -20.0, 0.00049582520959208676604),
    (0.8, 0.8, -7.5, 0.0044426548119865990148),
    (0.8, 0.8, -3.0, 0.03991566425159708441),
    (0.8, 0.8, -1.0, 0.25574384475824187052),
    (0.8, 0.8, -0.25, 0.62361245433367826397),
    (0.8, 0.8, 0.0, 0.85893701922466746235),
    (0.8, 0.8, 0.5, 1.6838126780364375679),
    (0.8, 0.8, 2.0, 16.054157362005891669),
    (0.8, 0.8, 5.0, 3301.8834166355046836),
    (0.8, 2.0, -50.0, 0.021599977004151781364),
    (0.8, 2.0, -20.0, 0.053294314373069421234),
    (0.8, 2.0, -7.5, 0.13650945728585232719),
    (0.8, 2.0, -3.0, 0.30316525650469493137),
    (0.8, 2.0, -1.0, 0.59790131634080447916),
    (0.8, 2.0, -0.25, 0.86626422987192501168),
    (0.8, 2.0, 0.0, 1.0),
    (0.8, 2.0, 0.5, 1.3800464459265469068),
    (0.8, 2.0, 2.0, 5.0360873910199122686),
    (0.8, 2.0, 5.0, 295.09501048633654409),
    (1.5, 1.0, -50.0, -0.0045783851058392779913),
    (1.5, 1.0, -20.0, 0.019595747930187505735),
    (1.5, 1.0, -7.5, -0.22677465777284576473),
    (1.5, 1.0, -3.0, -0.17556537379997824292),
    (1.5, 1.0, -1.0, 0.39662936531808808449),
    (1.5, 1.0, -0.25, 0.82206031557503899862),
    (1.5, 1.0, 0.0, 1.0),
    (1.5, 1.0, 0.5, 1.4202702357049505227),
    (1.5, 1.0, 2.0, 3.3487008963183954036),
    (1.5, 1.0, 5.0, 12.457289126443951234),
    (1.5, 1.5, -50.0, -0.0002833110656227309145),
    (1.5, 1.5, -20.0, 0.0061985012468613419281),
    (1.5, 1.5, -7.5, -0.070314478580693457787),
    (1.5, 1.5, -3.0, 0.21497666776826928474),
    (1.5, 1.5, -1.0, 0.70652803706417579426),
    (1.5, 1.5, -0.25, 1.0086242563883604821),
    (1.5, 1.5, 0.0, 1.1283791670955125739),
    (1.5, 1.5, 0.5, 1.4009479593700924487),
    (1.5, 1.5, 2.0, 2.5483367190728557478),
    (1.5, 1.5, 5.0, 7.2468424375621484878),
    (1.5, 2.0, -50.0, 0.011167669745851065095),
    (1.5, 2.0, -20.0, 0.026216809203766463972),
    (1.5, 2.0, -7.5, 0.09112696524529213551),
    (1.5, 2.0, -3.0, 0.39272963367217053569),
    (1.5, 2.0, -1.0, 0.73748224790189471418),
    (1.5, 2.0, -0.25, 0.92732538069823656024),
    (1.5, 2.0, 0.0, 1.0),
    (1.5, 2.0, 0.5, 1.1613140901355360777),
    (1.5, 2.0, 2.0, 1.7997192025547325557),
    (1.5, 2.0, 5.0, 4.1355228243967262093),
    (1.9, 1.0, -50.0, 0.022022145114234578287),
    (1.9, 1.0, -20.0, 0.07401941880366101699),
    (1.9, 1.0, -7.5, -0.80773946387133255008),
    (1.9, 1.0, -3.0, -0.19800617221635832014),
    (1.9, 1.0, -1.0, 0.50645955436859065363),
    (1.9, 1.0, -0.25, 0.86665645804366782742),
    (1.9, 1.0, 0.0, 1.0),
    (1.9, 1.0, 0.5, 1.2879406491477730077),
    (1.9, 1.0, 2.0, 2.3390257451271878382),
    (1.9, 1.0, 5.0, 5.4791306999793585506),
    (1.9, 1.9, -50.0, 0.086256241005030163924),
    (1.9, 1.9, -20.0, -0.16788649701951835931),
    (1.9, 1.9, -7.5, 0.056313483495483054882),
    (1.9, 1.9, -3.0, 0.51354051677803679116),
    (1.9, 1.9, -1.0, 0.84008069049165268627),
    (1.9, 1.9, -0.25, 0.98735153578296018128),
    (1.9, 1.9, 0.0, 1.0397541343476364146),
    (1.9, 1.9, 0.5, 1.1497715752294131871),
    (1.9, 1.9, 2.0, 1.5246195925781628246),
    (1.9, 1.9, 5.0, 2.5101333122059836753),
    (1.9, 2.0, -50.0, 0.071750290804921769448),
    (1.9, 2.0, -20.0, -0.14109816403056841169),
    (1.9, 2.0, -7.5, 0.10878754711727440074),
    (1.9, 2.0, -3.0, 0.52978112912036332058),
    (1.9, 2.0, -1.0, 0.82262177633551446638),
    (1.9, 2.0, -0.25, 0.95354856244801597948),
    (1.9, 2.0, 0.0, 1.0),
    (1.9, 2.0, 0.5, 1.0973169261970855654),
    (1.9, 2.0, 2.0, 1.4271219315660412336),
    (1.9, 2.0, 5.0, 2.2851046269389909617),
];

#[test]
fn matches_high_precision_series() {
    let mut worst: f64 = 0.0;
    for &(a, b, z, want) in REFERENCE {
        let got = ml_eval(MlParams::new(a, b), z).unwrap();
        let rel = (got - want).abs() / want.abs();
        worst = worst.max(rel);
        assert!(rel <= 1e-12, "E_{{{a},{b}}}({z}) = {got:e}, reference {want:e}, rel {rel:e}");
    }
    assert!(worst > 0.0);
}

#[test]
fn half_order_erfc_identity() {
    // E_{1/2,1}(-x) = exp(x^2) erfc(x)
    let e = MittagLeffler::new(0.5, 1.0).unwrap();
    for i in 0..=60 {
        let x = 0.1 * i as f64;
        let want = (x * x).exp() * erfc(x);
        let got = e.eval(-x);
        assert!((got - want).abs() <= 1e-12 * want, "x={x}: {got:e} vs {want:e}");
    }
    let v = ml_eval(MlParams::new(0.5, 1.0), -1.0).unwrap();
    assert!((v - 0.427_583_576_155_807).abs() < 1e-14);
}

#[test]
fn exponential_and_cosine() {
    let e1 = MittagLeffler::new(1.0, 1.0).unwrap();
    for i in 0..200 {
        let z = -30.0 + 35.0 * i as f64 / 199.0;
        assert!((e1.eval(z) - z.exp()).abs() <= 1e-12 * z.exp().max(1.0), "z={z}");
    }
    let e2 = MittagLeffler::new(2.0, 1.0).unwrap();
    for i in 0..=400 {
        let x = 20.0 * i as f64 / 400.0;
        assert!((e2.eval(-x * x) - x.cos()).abs() <= 1e-10, "x={x}");
    }
    assert!(ml_eval(MlParams::new(2.0, 1.0), -(std::f64::consts::FRAC_PI_2).powi(2)).unwrap().abs() < 1e-15);
    assert_eq!(ml_eval(MlParams::new(1.0, 1.0), 0.0).unwrap(), 1.0);
}

#[test]
fn origin_values() {
    for a in [0.3, 0.5, 0.8, 1.5] {
        let v = ml_eval(MlParams::new(a, a), 0.0).unwrap();
        assert!((v - 1.0 / gamma(a)).abs() <= 1e-14 / gamma(a), "alpha={a}");
    }
    assert!((ml_eval(MlParams::new(0.5, 0.5), 0.0).unwrap() - 0.564_189_583_547_756_3).abs() < 1e-15);
}

#[test]
fn decay_bound_is_stable() {
    // sup over [1, 1e6] of x |E(-x)| on a grid and on the doubled grid
    for a in [0.3, 0.5, 0.8, 1.2, 1.5, 1.8] {
        for b in [1.0, a, a - 1.0, 2.0] {
            if b <= 0.0 {
                continue;
            }
            let e = MittagLeffler::new(a, b).unwrap();
            let sup = |n: usize| -> f64 {
                (0..=n)
                    .map(|i| {
                        let x = 10f64.powf(6.0 * i as f64 / n as f64);
                        x * e.eval(-x).abs()
                    })
                    .fold(0.0, f64::max)
            };
            let (s1, s2) = (sup(300), sup(600));
            assert!(s1.is_finite() && s2.is_finite());
            assert!((s2 - s1).abs() <= 0.05 * s2, "alpha={a} beta={b}: {s1} vs {s2}");
        }
    }
}

#[test]
fn kernel_examples() {
    let v = ml_kernel(0.5, 0.0, 4.0).unwrap().value().unwrap();
    assert!((v - 0.282_094_791_773_878_1).abs() < 1e-15);
    let v = ml_kernel(0.5, 1.0, 1.0).unwrap().value().unwrap();
    assert!(v > 0.0 && v < 1.0 / gamma(0.5));
    // t^{1/2} E_{1.5,1.5}(-2 t^{1.5}) at t = 0.5 against the series table oracle
    let t: f64 = 0.5;
    let z = -2.0 * t.powf(1.5);
    let v = ml_kernel(1.5, 2.0, t).unwrap().value().unwrap();
    let series: f64 = (0..60).map(|k| z.powi(k) / gamma(1.5 * k as f64 + 1.5)).sum();
    assert!((v - t.sqrt() * series).abs() <= 1e-12 * v.abs());
    assert_eq!(ml_kernel(0.5, 1.0, 0.0).unwrap(), KernelValue::Singular);
    assert_eq!(ml_kernel(1.5, 1.0, 0.0).unwrap(), KernelValue::Finite(0.0));
}

#[test]
fn primitive_examples() {
    for &(lam, t) in &[(0.5, 0.3), (2.0, 1.0), (30.0, 2.5)] {
        let want = (1.0 - MittagLeffler::new(0.5, 1.0).unwrap().eval(-lam * f64::sqrt(t))) / lam;
        let got = ml_primitive(0.5, 0.5, lam, t).unwrap();
        assert!((got - want).abs() <= 1e-12 * want.abs(), "lambda={lam} t={t}");
    }
    let got = ml_primitive(0.7, 1.3, 0.0, 2.0).unwrap();
    assert!((got - 2f64.powf(1.3) / gamma(2.3)).abs() < 1e-14);
    assert_eq!(ml_primitive(0.7, 0.7, 3.0, 0.0).unwrap(), 0.0);
    assert!(ml_primitive(0.7, 0.0, 3.0, 1.0).is_err());
}

#[test]
fn derivative_examples() {
    for t in [0.1, 1.0, 7.0] {
        assert_eq!(ml_time_derivative(0.6, 0.0, t, DerivativeKind::E1).unwrap(), 0.0);
        assert!((ml_time_derivative(0.6, 0.0, t, DerivativeKind::TE2).unwrap() - 1.0).abs() < 1e-15);
    }
    let k = |t: f64| ml_kernel(1.5, 2.0, t).unwrap().value().unwrap();
    let (t, h) = (0.3, 1e-5 * 0.3);
    let fd = (k(t + h) - k(t - h)) / (2.0 * h);
    let d = ml_time_derivative(1.5, 2.0, t, DerivativeKind::Kernel).unwrap();
    assert!((d - fd).abs() <= 1e-6 * d.abs());
    assert!(ml_time_derivative(0.5, 1.0, 0.0, DerivativeKind::E1).is_err());
}

/// Adaptive Simpson on `[a, b]`.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 40)
}

fn admissible_alpha() -> impl Strategy<Value = f64> {
    prop_oneof![0.1f64..0.95, 1.05f64..1.95]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn completely_monotone_below_one(alpha in 0.05f64..1.0, x0 in 0.0f64..50.0) {
        let e = MittagLeffler::new(alpha, 1.0).unwrap();
        let mut prev = e.eval(-x0);
        prop_assert!(prev > 0.0 && prev <= 1.0);
        for i in 1..20 {
            let v = e.eval(-(x0 + 0.5 * i as f64));
            prop_assert!(v > 0.0 && v <= prev * (1.0 + 1e-13), "alpha={} x={}", alpha, x0 + 0.5 * i as f64);
            prev = v;
        }
    }

    #[test]
    fn time_derivatives_match_differences(alpha in admissible_alpha(), lambda in 0.0f64..50.0, t in 0.01f64..3.0) {
        let h = 1e-5 * t;
        let e1 = MittagLeffler::new(alpha, 1.0).unwrap();
        let e2 = MittagLeffler::new(alpha, 2.0).unwrap();
        let z = |s: f64| -lambda * s.powf(alpha);
        let fns: [(DerivativeKind, Box<dyn Fn(f64) -> f64>); 3] = [
            (DerivativeKind::E1, Box::new(|s| e1.eval(z(s)))),
            (DerivativeKind::TE2, Box::new(|s| s * e2.eval(z(s)))),
            (DerivativeKind::Kernel, Box::new(|s| ml_kernel(alpha, lambda, s).unwrap().value().unwrap())),
        ];
        for (kind, f) in fns.iter() {
            let fd = (f(t + h) - f(t - h)) / (2.0 * h);
            let d = ml_time_derivative(alpha, lambda, t, *kind).unwrap();
            let scale = d.abs().max(1e-3 * f(t).abs() / t);
            prop_assert!((d - fd).abs() <= 1e-6 * scale, "{:?}: {} vs {}", kind, d, fd);
        }
    }

    #[test]
    fn three_term_recurrence(alpha in admissible_alpha(), beta in 0.2f64..3.0, x in 0.0f64..50.0) {
        // E_{a,b}(z) = 1/Gamma(b) + z E_{a,a+b}(z)
        let z = -x;
        let lhs = MittagLeffler::new(alpha, beta).unwrap().eval(z);
        let rhs = 1.0 / gamma(beta) + z * MittagLeffler::new(alpha, alpha + beta).unwrap().eval(z);
        let scale = lhs.abs().max(1.0 / gamma(beta).abs()).max(1e-3);
        prop_assert!((lhs - rhs).abs() <= 1e-11 * scale, "{} vs {}", lhs, rhs);
    }

    #[test]
    fn primitive_matches_quadrature(alpha in admissible_alpha(), beta in 0.3f64..2.0, lambda in 0.0f64..20.0, t in 0.05f64..2.0) {
        // s = v^{1/beta} removes the endpoint singularity of s^{beta-1}
        let e = MittagLeffler::new(alpha, beta).unwrap();
        let f = |v: f64| e.eval(-lambda * v.powf(alpha / beta)) / beta;
        let q = simpson(&f, 0.0, t.powf(beta), 1e-13);
        let p = ml_primitive(alpha, beta, lambda, t).unwrap();
        prop_assert!((p - q).abs() <= 1e-9 * p.abs().max(1e-3), "{} vs {}", p, q);
    }
}
