//! Two-parameter Mittag-Leffler function on the real axis,
//! `E_{a,b}(z) = sum_k z^k / Gamma(a k + b)`, and the time kernels built from it.
//!
//! Evaluation strategy:
//! * `-1 <= z <= 0`: Taylor series with compensated summation;
//! * `z > 0`: Taylor series in log form (all terms positive);
//! * `z < -1`: asymptotic expansion (plus the exponentially small pole
//!   contributions when `a > 1`) if its truncation estimate is below 1e-14,
//!   otherwise a Hankel-contour integral evaluated by double-exponential
//!   quadrature.

use std::f64::consts::PI;

use thiserror::Error;

use crate::quadrature::{exp_sinh, tanh_sinh};
use crate::special::{cos_pi, ln_gamma, rgamma, sin_pi};

/// Parameters `(alpha1, alpha2)` of `E_{alpha1, alpha2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlParams {
    pub alpha1: f64,
    pub alpha2: f64,
}

impl MlParams {
    pub fn new(alpha1: f64, alpha2: f64) -> Self {
        Self { alpha1, alpha2 }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MlError {
    #[error("non-finite input {0}")]
    NonFinite(f64),
    #[error("first Mittag-Leffler parameter must be positive, got {0}")]
    NonPositiveAlpha1(f64),
    #[error("second Mittag-Leffler parameter must be positive, got {0}")]
    NonPositiveAlpha2(f64),
    #[error("fractional order {0} is not in (0,1) or (1,2)")]
    InadmissibleOrder(f64),
    #[error("time must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("time must be non-negative, got {0}")]
    NegativeTime(f64),
}

const TAYLOR_RADIUS: f64 = 1.0;
const ASYM_TERMS: usize = 80;
const ASYM_TOL: f64 = 1e-14;
const QUAD_TOL: f64 = 1e-17;

/// Cached evaluator for a fixed parameter pair. Accepts any finite second
/// parameter (non-positive values are used internally for kernel derivatives).
#[derive(Debug, Clone)]
pub struct MittagLeffler {
    alpha: f64,
    beta: f64,
    taylor: Vec<f64>,
    asym: Vec<f64>,
    asym_env: Vec<f64>,
    /// `beta - j*alpha` lowered until below `alpha + 3/4` (Hankel representation range)
    reduced_beta: f64,
    reductions: usize,
}

impl MittagLeffler {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, MlError> {
        if !alpha.is_finite() {
            return Err(MlError::NonFinite(alpha));
        }
        if !beta.is_finite() {
            return Err(MlError::NonFinite(beta));
        }
        if alpha <= 0.0 {
            return Err(MlError::NonPositiveAlpha1(alpha));
        }
        let mut taylor = Vec::with_capacity(64);
        let mut largest: f64 = 0.0;
        let mut k = 0usize;
        loop {
            let arg = alpha * k as f64 + beta;
            let c = rgamma(arg);
            largest = largest.max(c.abs());
            taylor.push(c);
            if (arg > 3.0 && c.abs() < 1e-19 * largest) || k > 20_000 {
                break;
            }
            k += 1;
        }
        let mut asym = Vec::with_capacity(ASYM_TERMS);
        let mut asym_env = Vec::with_capacity(ASYM_TERMS);
        for k in 1..=ASYM_TERMS {
            let arg = beta - alpha * k as f64;
            let near = arg.round();
            let c = if near <= 0.0 && (arg - near).abs() < 1e-12 * (1.0 + near.abs()) {
                0.0
            } else {
                rgamma(arg)
            };
            // magnitude without the oscillating sin(pi arg) factor
            let env = if 1.0 - arg > 0.5 {
                (ln_gamma(1.0 - arg) - PI.ln()).exp()
            } else {
                c.abs()
            };
            asym.push(c);
            asym_env.push(env.max(c.abs()));
        }
        let mut reduced_beta = beta;
        let mut reductions = 0;
        // keep the r^{alpha-beta} endpoint singularity of the Hankel integrand
        // well inside the integrable range
        while reduced_beta >= alpha + 0.75 {
            reduced_beta -= alpha;
            reductions += 1;
        }
        Ok(Self {
            alpha,
            beta,
            taylor,
            asym,
            asym_env,
            reduced_beta,
            reductions,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn eval(&self, z: f64) -> f64 {
        if z.is_nan() {
            return f64::NAN;
        }
        if z == 0.0 {
            return self.taylor[0];
        }
        if z == f64::NEG_INFINITY {
            return 0.0;
        }
        if self.alpha == 1.0 {
            return self.eval_alpha_one(z);
        }
        if z > 0.0 {
            return self.series_positive(z);
        }
        if z >= -TAYLOR_RADIUS {
            return self.series_negative(z).0;
        }
        if self.alpha > 2.0 {
            // mild growth of the terms for large orders: try the plain series first
            let (v, max_term) = self.series_negative(z);
            if max_term < 1e2 * v.abs() {
                return v;
            }
        }
        if let Some(v) = self.asymptotic(z) {
            return v;
        }
        self.hankel_total(z)
    }

    fn series_negative(&self, z: f64) -> (f64, f64) {
        // Neumaier summation
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        let mut zk = 1.0f64;
        let mut max_term: f64 = 0.0;
        for &c in &self.taylor {
            let t = c * zk;
            max_term = max_term.max(t.abs());
            let s = sum + t;
            if sum.abs() >= t.abs() {
                comp += (sum - s) + t;
            } else {
                comp += (t - s) + sum;
            }
            sum = s;
            zk *= z;
            if zk == 0.0 {
                break;
            }
        }
        (sum + comp, max_term)
    }

    fn series_positive(&self, z: f64) -> f64 {
        let lz = z.ln();
        let mut sum = 0.0f64;
        let mut prev = 0.0f64;
        let mut k = 0usize;
        loop {
            let arg = self.alpha * k as f64 + self.beta;
            let t = if arg > 1.0 {
                (k as f64 * lz - ln_gamma(arg)).exp()
            } else {
                z.powi(k as i32) * rgamma(arg)
            };
            sum += t;
            if k > 2 && t < prev && t.abs() <= 1e-17 * sum.abs() {
                break;
            }
            if !sum.is_finite() || k > 200_000 {
                break;
            }
            prev = t;
            k += 1;
        }
        sum
    }

    /// Residue contributions of the poles of `s^{a-b}/(s^a - z)` that lie off
    /// the negative real axis, evaluated for `z = -x < 0`.
    fn pole_sum(&self, beta: f64, x: f64) -> f64 {
        let a = self.alpha;
        if a <= 1.0 {
            return 0.0;
        }
        let rho = x.powf(1.0 / a);
        let amp = x.powf((1.0 - beta) / a) / a;
        let mut total = 0.0;
        let kmax = (a / 2.0).ceil() as i64 + 1;
        for k in -kmax..=kmax {
            let m = (2 * k + 1) as f64;
            if m.abs() >= a {
                continue;
            }
            let theta = m * PI / a;
            let re = rho * theta.cos();
            let phase = rho * theta.sin() + theta * (1.0 - beta);
            total += amp * re.exp() * phase.cos();
        }
        total
    }

    fn asymptotic(&self, z: f64) -> Option<f64> {
        let x = -z;
        let poles = self.pole_sum(self.beta, x);
        let lx = x.ln();
        let inv = 1.0 / z;
        let mut zp = 1.0f64;
        let mut sum = 0.0f64;
        let mut last_env = f64::INFINITY;
        let mut err = f64::INFINITY;
        for (k, (&c, &env)) in self.asym.iter().zip(&self.asym_env).enumerate() {
            zp *= inv;
            let e = (env.ln() - (k + 1) as f64 * lx).exp();
            if e >= last_env {
                // terms started to grow: the remainder is of the size of the smallest term
                err = last_env;
                break;
            }
            last_env = e;
            sum -= c * zp;
            err = e;
            if e <= 1e-17 * (sum + poles).abs() || e == 0.0 {
                break;
            }
        }
        let total = sum + poles;
        if err <= ASYM_TOL * total.abs() {
            Some(total)
        } else {
            None
        }
    }

    fn hankel_integral(&self, beta: f64, x: f64) -> f64 {
        let a = self.alpha;
        let sb = sin_pi(beta);
        let sba = sin_pi(beta - a);
        let ca = cos_pi(a);
        let f = |r: f64| -> f64 {
            if r <= 0.0 {
                return 0.0;
            }
            let ra = r.powf(a);
            let num = ra * sb + x * sba;
            if num == 0.0 {
                return 0.0;
            }
            let den = ra * ra + 2.0 * x * ra * ca + x * x;
            ((a - beta) * r.ln() - r).exp() * num / den
        };
        let v = if ca < 0.0 {
            let rp = (x * -ca).powf(1.0 / a);
            tanh_sinh(f, 0.0, rp, QUAD_TOL) + exp_sinh(f, rp, QUAD_TOL)
        } else {
            exp_sinh(f, 0.0, QUAD_TOL)
        };
        v / PI
    }

    fn hankel_total(&self, z: f64) -> f64 {
        let x = -z;
        let mut b = self.reduced_beta;
        let mut v = self.hankel_integral(b, x) + self.pole_sum(b, x);
        for _ in 0..self.reductions {
            v = (v - rgamma(b)) / z;
            b += self.alpha;
        }
        v
    }

    fn eval_alpha_one(&self, z: f64) -> f64 {
        let beta = self.beta;
        if beta == 1.0 {
            return z.exp();
        }
        if beta == 2.0 {
            return z.exp_m1() / z;
        }
        if z >= -TAYLOR_RADIUS {
            if z > 0.0 {
                return self.series_positive(z);
            }
            return self.series_negative(z).0;
        }
        // base parameter in [1, 2)
        let shift = (beta - 1.0).floor();
        let b0 = beta - shift;
        let mut v = if b0 == 1.0 {
            z.exp()
        } else {
            // E_{1,b}(z) = 1/Gamma(b-1) int_0^1 e^{z(1-v)} v^{b-2} dv
            let p = b0 - 2.0;
            rgamma(b0 - 1.0) * tanh_sinh(|v| (z * (1.0 - v)).exp() * v.powf(p), 0.0, 1.0, QUAD_TOL)
        };
        let mut b = b0;
        if shift > 0.0 {
            for _ in 0..shift as usize {
                v = (v - rgamma(b)) / z;
                b += 1.0;
            }
        } else if shift < 0.0 {
            for _ in 0..(-shift) as usize {
                b -= 1.0;
                v = rgamma(b) + z * v;
            }
        }
        v
    }
}

/// `E_{alpha1, alpha2}(z)` for a single argument.
pub fn ml_eval(params: MlParams, z: f64) -> Result<f64, MlError> {
    if !z.is_finite() {
        return Err(MlError::NonFinite(z));
    }
    if params.alpha2 <= 0.0 {
        return Err(MlError::NonPositiveAlpha2(params.alpha2));
    }
    Ok(MittagLeffler::new(params.alpha1, params.alpha2)?.eval(z))
}

pub(crate) fn check_order(alpha: f64) -> Result<(), MlError> {
    if !alpha.is_finite() {
        return Err(MlError::NonFinite(alpha));
    }
    if alpha <= 0.0 || alpha >= 2.0 || alpha == 1.0 {
        return Err(MlError::InadmissibleOrder(alpha));
    }
    Ok(())
}

/// Value of the modal kernel `t^{a-1} E_{a,a}(-lambda t^a)`; singular at the origin for `a < 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelValue {
    Finite(f64),
    Singular,
}

impl KernelValue {
    pub fn value(self) -> Option<f64> {
        match self {
            KernelValue::Finite(v) => Some(v),
            KernelValue::Singular => None,
        }
    }
}

pub fn ml_kernel(alpha: f64, lambda: f64, t: f64) -> Result<KernelValue, MlError> {
    check_order(alpha)?;
    if !t.is_finite() || !lambda.is_finite() {
        return Err(MlError::NonFinite(if t.is_finite() { lambda } else { t }));
    }
    if t < 0.0 {
        return Err(MlError::NegativeTime(t));
    }
    if t == 0.0 {
        return Ok(if alpha < 1.0 {
            KernelValue::Singular
        } else {
            KernelValue::Finite(0.0)
        });
    }
    let ml = MittagLeffler::new(alpha, alpha)?;
    Ok(KernelValue::Finite(t.powf(alpha - 1.0) * ml.eval(-lambda * t.powf(alpha))))
}

/// `int_0^t s^{beta-1} E_{alpha,beta}(-lambda s^alpha) ds = t^beta E_{alpha,beta+1}(-lambda t^alpha)`.
pub fn ml_primitive(alpha: f64, beta: f64, lambda: f64, t: f64) -> Result<f64, MlError> {
    if !alpha.is_finite() || !beta.is_finite() || !lambda.is_finite() || !t.is_finite() {
        return Err(MlError::NonFinite(t));
    }
    if beta <= 0.0 {
        return Err(MlError::NonPositiveAlpha2(beta));
    }
    if t < 0.0 {
        return Err(MlError::NegativeTime(t));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let ml = MittagLeffler::new(alpha, beta + 1.0)?;
    Ok(t.powf(beta) * ml.eval(-lambda * t.powf(alpha)))
}

/// Which function is differentiated by [`ml_time_derivative`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeKind {
    /// `E_{a,1}(-lambda t^a)`
    E1,
    /// `t E_{a,2}(-lambda t^a)`
    TE2,
    /// `t^{a-1} E_{a,a}(-lambda t^a)`
    Kernel,
}

/// Closed-form time derivative of the three basic modal functions.
pub fn ml_time_derivative(
    alpha: f64,
    lambda: f64,
    t: f64,
    kind: DerivativeKind,
) -> Result<f64, MlError> {
    check_order(alpha)?;
    if !t.is_finite() || !lambda.is_finite() {
        return Err(MlError::NonFinite(t));
    }
    if t <= 0.0 {
        return Err(MlError::NonPositiveTime(t));
    }
    let z = -lambda * t.powf(alpha);
    Ok(match kind {
        DerivativeKind::E1 => {
            if lambda == 0.0 {
                0.0
            } else {
                -lambda * t.powf(alpha - 1.0) * MittagLeffler::new(alpha, alpha)?.eval(z)
            }
        }
        DerivativeKind::TE2 => MittagLeffler::new(alpha, 1.0)?.eval(z),
        DerivativeKind::Kernel => t.powf(alpha - 2.0) * MittagLeffler::new(alpha, alpha - 1.0)?.eval(z),
    })
}

/// Evaluators shared by the modal formulas for a fixed order `alpha`.
#[derive(Debug, Clone)]
pub struct ModalFunctions {
    pub alpha: f64,
    /// `E_{a,1}`
    pub e1: MittagLeffler,
    /// `E_{a,2}`
    pub e2: MittagLeffler,
    /// `E_{a,a}`
    pub ea: MittagLeffler,
    /// `E_{a,a-1}`
    pub ea1: MittagLeffler,
    /// `E_{a,a-2}`
    pub ea2: MittagLeffler,
    /// `E_{a,a+1}` (first kernel moment)
    pub eap1: MittagLeffler,
    /// `E_{a,a+2}` (second kernel moment)
    pub eap2: MittagLeffler,
}

impl ModalFunctions {
    pub fn new(alpha: f64) -> Result<Self, MlError> {
        check_order(alpha)?;
        Ok(Self {
            alpha,
            e1: MittagLeffler::new(alpha, 1.0)?,
            e2: MittagLeffler::new(alpha, 2.0)?,
            ea: MittagLeffler::new(alpha, alpha)?,
            ea1: MittagLeffler::new(alpha, alpha - 1.0)?,
            ea2: MittagLeffler::new(alpha, alpha - 2.0)?,
            eap1: MittagLeffler::new(alpha, alpha + 1.0)?,
            eap2: MittagLeffler::new(alpha, alpha + 2.0)?,
        })
    }

    /// `E_{a,1}(-lambda t^a)`
    pub fn relax(&self, lambda: f64, t: f64) -> f64 {
        self.e1.eval(-lambda * t.powf(self.alpha))
    }

    /// `t E_{a,2}(-lambda t^a)`
    pub fn relax_t(&self, lambda: f64, t: f64) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        t * self.e2.eval(-lambda * t.powf(self.alpha))
    }

    /// `t^{a-1} E_{a,a}(-lambda t^a)`, infinite at `t = 0` when `a < 1`.
    pub fn kernel(&self, lambda: f64, t: f64) -> f64 {
        if t == 0.0 {
            return if self.alpha < 1.0 { f64::INFINITY } else { 0.0 };
        }
        t.powf(self.alpha - 1.0) * self.ea.eval(-lambda * t.powf(self.alpha))
    }

    /// `t^{a-2} E_{a,a-1}(-lambda t^a)`, the derivative of [`Self::kernel`].
    pub fn kernel_dt(&self, lambda: f64, t: f64) -> f64 {
        if t == 0.0 {
            return f64::INFINITY;
        }
        t.powf(self.alpha - 2.0) * self.ea1.eval(-lambda * t.powf(self.alpha))
    }

    /// `j`-th time derivative of the kernel, `t^{a-1-j} E_{a,a-j}(-lambda t^a)`
    /// for `j <= 2`. At `t = 0` the value is `0` or `+inf` by the sign of the power.
    pub fn kernel_deriv(&self, j: usize, lambda: f64, t: f64) -> f64 {
        let p = self.alpha - 1.0 - j as f64;
        if t == 0.0 {
            return if p < 0.0 { f64::INFINITY } else { 0.0 };
        }
        let z = -lambda * t.powf(self.alpha);
        let e = match j {
            0 => self.ea.eval(z),
            1 => self.ea1.eval(z),
            2 => self.ea2.eval(z),
            _ => panic!("kernel derivative of order {j} not supported"),
        };
        t.powf(p) * e
    }

    /// `int_0^t kernel = t^a E_{a,a+1}(-lambda t^a)`
    pub fn moment1(&self, lambda: f64, t: f64) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        let ta = t.powf(self.alpha);
        ta * self.eap1.eval(-lambda * ta)
    }

    /// `int_0^t moment1 = t^{a+1} E_{a,a+2}(-lambda t^a)`
    pub fn moment2(&self, lambda: f64, t: f64) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        let ta = t.powf(self.alpha);
        t * ta * self.eap2.eval(-lambda * ta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::gamma;

    #[test]
    fn exp_and_cos_special_cases() {
        assert_eq!(ml_eval(MlParams::new(1.0, 1.0), 0.0).unwrap(), 1.0);
        let v = ml_eval(MlParams::new(2.0, 1.0), -(PI / 2.0).powi(2)).unwrap();
        assert!(v.abs() < 1e-14, "{v}");
    }

    #[test]
    fn value_at_origin_is_reciprocal_gamma() {
        for &a in &[0.3, 0.5, 0.8, 1.5] {
            let v = ml_eval(MlParams::new(a, a), 0.0).unwrap();
            assert!((v - 1.0 / gamma(a)).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(ml_eval(MlParams::new(0.0, 1.0), 1.0).is_err());
        assert!(ml_eval(MlParams::new(0.5, 0.0), 1.0).is_err());
        assert!(ml_eval(MlParams::new(0.5, 1.0), f64::NAN).is_err());
        assert!(ml_primitive(0.5, 0.0, 1.0, 1.0).is_err());
        assert!(ml_time_derivative(0.5, 1.0, 0.0, DerivativeKind::E1).is_err());
        assert!(ml_kernel(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn kernel_flags() {
        assert_eq!(ml_kernel(0.5, 1.0, 0.0).unwrap(), KernelValue::Singular);
        assert_eq!(ml_kernel(1.5, 1.0, 0.0).unwrap(), KernelValue::Finite(0.0));
        let v = ml_kernel(0.5, 0.0, 4.0).unwrap().value().unwrap();
        assert!((v - 0.5 / gamma(0.5)).abs() < 1e-15);
    }

    #[test]
    fn primitive_trivial_cases() {
        assert_eq!(ml_primitive(0.7, 0.7, 3.0, 0.0).unwrap(), 0.0);
        let v = ml_primitive(0.6, 1.3, 0.0, 2.0).unwrap();
        assert!((v - 2f64.powf(1.3) / gamma(2.3)).abs() < 1e-14);
    }

    #[test]
    fn derivative_trivial_cases() {
        assert_eq!(ml_time_derivative(0.4, 0.0, 0.7, DerivativeKind::E1).unwrap(), 0.0);
        let v = ml_time_derivative(1.3, 0.0, 0.7, DerivativeKind::TE2).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }
}
