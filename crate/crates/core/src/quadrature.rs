//! Numerical integration: double-exponential rules for endpoint singularities
//! and adaptive Gauss-Kronrod for smooth integrands.

use std::f64::consts::FRAC_PI_2;

const MAX_LEVEL: usize = 10;

/// Tanh-sinh quadrature on `[a, b]`. Robust against integrable endpoint
/// singularities; accuracy near `a` is best when `a == 0`.
pub fn tanh_sinh<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let len = b - a;
    let tmax = 4.5f64;
    // x(t) = a + len * s(u), s(u) = 1 / (1 + exp(-u)), u = pi sinh t
    let node = |t: f64| -> (f64, f64) {
        let u = std::f64::consts::PI * t.sinh();
        let e = (-u.abs()).exp();
        let s_small = e / (1.0 + e);
        let x = if u >= 0.0 { b - len * s_small } else { a + len * s_small };
        let w = len * std::f64::consts::PI * t.cosh() * s_small * (1.0 - s_small);
        (x, w)
    };
    let level_sum = |h: f64, odd_only: bool| -> f64 {
        let n = (tmax / h).ceil() as i64;
        let mut acc = 0.0;
        for k in -n..=n {
            if odd_only && k % 2 == 0 {
                continue;
            }
            let (x, w) = node(k as f64 * h);
            if w > 0.0 && x > a && x < b {
                acc += w * f(x);
            }
        }
        acc
    };
    let mut h = 0.5;
    let mut total = level_sum(h, false);
    let mut estimate = total * h;
    for _ in 0..MAX_LEVEL {
        h *= 0.5;
        total += level_sum(h, true);
        let next = total * h;
        let diff = (next - estimate).abs();
        estimate = next;
        // quadratic convergence: the current error is about diff^2 / |I|
        if diff <= 0.1 * rel_tol.sqrt() * next.abs() || diff < 1e-300 {
            break;
        }
    }
    estimate
}

/// Exp-sinh quadrature on `[c, inf)`; the integrand must decay at infinity.
/// An integrable singularity at `c` is handled through the node clustering.
pub fn exp_sinh<F: Fn(f64) -> f64>(f: F, c: f64, rel_tol: f64) -> f64 {
    let node = |t: f64| -> (f64, f64) {
        let e = (FRAC_PI_2 * t.sinh()).exp();
        (e, FRAC_PI_2 * t.cosh() * e)
    };
    let eval_level = |h: f64, odd_only: bool| -> f64 {
        let step = if odd_only { 2 } else { 1 };
        let mut acc = 0.0;
        // positive direction
        let mut k: i64 = if odd_only { 1 } else { 0 };
        let mut small = 0;
        loop {
            let t = k as f64 * h;
            let (r, w) = node(t);
            if !r.is_finite() || t > 6.0 {
                break;
            }
            let v = w * f(c + r);
            if v.is_finite() {
                acc += v;
            }
            if v.abs() < 1e-300 || (acc != 0.0 && v.abs() < 1e-20 * acc.abs()) {
                small += 1;
                if small > 2 {
                    break;
                }
            } else {
                small = 0;
            }
            k += step;
        }
        let mut k: i64 = -1;
        let mut small = 0;
        loop {
            let t = k as f64 * h;
            let (r, w) = node(t);
            if t < -6.5 || r == 0.0 {
                break;
            }
            let v = w * f(c + r);
            if v.is_finite() {
                acc += v;
            }
            if v.abs() < 1e-300 || (acc != 0.0 && v.abs() < 1e-20 * acc.abs()) {
                small += 1;
                if small > 2 {
                    break;
                }
            } else {
                small = 0;
            }
            k -= step;
        }
        acc
    };
    let mut h = 0.5;
    let mut total = eval_level(h, false);
    let mut estimate = total * h;
    for _ in 0..MAX_LEVEL {
        h *= 0.5;
        total += eval_level(h, true);
        let next = total * h;
        let diff = (next - estimate).abs();
        estimate = next;
        // quadratic convergence: the current error is about diff^2 / |I|
        if diff <= 0.1 * rel_tol.sqrt() * next.abs() || diff < 1e-300 {
            break;
        }
    }
    estimate
}

const GK_X: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_8,
];
const GK_WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let hw = 0.5 * (b - a);
    let fc = f(c);
    let mut k = GK_WK[7] * fc;
    let mut g = GK_WG[3] * fc;
    for i in 0..7 {
        let dx = hw * GK_X[i];
        let s = f(c - dx) + f(c + dx);
        k += GK_WK[i] * s;
        if i % 2 == 1 {
            g += GK_WG[i / 2] * s;
        }
    }
    (k * hw, ((k - g) * hw).abs())
}

/// Adaptive 15-point Gauss-Kronrod integration on `[a, b]`.
pub fn adaptive_gk<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let mut intervals = vec![(a, b, gk15(&f, a, b))];
    for _ in 0..2000 {
        let total: f64 = intervals.iter().map(|iv| iv.2 .0).sum();
        let err: f64 = intervals.iter().map(|iv| iv.2 .1).sum();
        if err <= abs_tol.max(rel_tol * total.abs()) {
            return total;
        }
        let (idx, _) = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .2 .1.total_cmp(&y.1 .2 .1))
            .expect("non-empty interval list");
        let (lo, hi, _) = intervals.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        intervals.push((lo, mid, gk15(&f, lo, mid)));
        intervals.push((mid, hi, gk15(&f, mid, hi)));
    }
    intervals.iter().map(|iv| iv.2 .0).sum()
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` (Newton iteration on P_n).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}
