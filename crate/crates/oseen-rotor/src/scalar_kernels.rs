//! Scalar building blocks of the fundamental solution.
//!
//! The velocity kernel is assembled from the heat kernel
//!
//! ```text
//!     K(x,t) = (4πt)^{-3/2} exp(-|x|²/4t),
//! ```
//!
//! the Kummer function ₁F₁(1, 5/2, u) at u = |x|²/(4t), the projector
//! N_jk = x_j x_k / |x|², and the tensor
//!
//! ```text
//!     Λ_jk(x,t) = K(x,t)[δ_jk − N_jk] − (4πt)^{-3/2} e^{-u} ₁F₁(1,5/2,u) [δ_jk/3 − N_jk].
//! ```
//!
//! Everything is routed through the family
//!
//! ```text
//!     φ_ν(u) = ∫₀¹ s^{ν-1} e^{-us} ds = u^{-ν} γ(ν,u),        ν > 0,
//! ```
//!
//! because `e^{-u} ₁F₁(1,5/2,u) = (3/2) φ_{3/2}(u)` exactly. Each φ_ν is
//! evaluated by a positive-term series for small `u` and by the continued
//! fraction for the upper incomplete gamma function otherwise, so there is
//! no cancellation and no overflow anywhere on `u ∈ [0,∞)`. The same family
//! supplies the u-derivatives (φ_ν' = −φ_{ν+1}) needed for ∇Λ and ∇²Λ.
//!
//! The pressure part of the fundamental solution is the gradient kernel
//! E₄(x) with components (4π)^{-1} x_j |x|^{-3}.

use crate::error::{Error, Result};
use crate::linalg::{norm_sq, vec_finite, Mat3, Vec3, ZERO_MAT};

use std::f64::consts::PI;

/// Exponents below this value make `exp` underflow; the kernels return an
/// exact 0.0 there instead of subnormal noise.
const EXP_UNDERFLOW: f64 = -745.0;

/// Series terms are added until below this relative threshold.
const SERIES_EPS: f64 = 1e-16;
const MAX_SERIES_TERMS: usize = 500;

/// Γ(5/2) = (3/4)√π.
pub const GAMMA_5_2: f64 = 1.329_340_388_179_137_02;

/// Validated argument of the Kummer function ₁F₁(1, c, u).
///
/// The kernel only ever needs `c = 5/2`; the parameter is carried so the
/// value is self-describing in reports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KummerArg {
    pub u: f64,
    pub c: f64,
}

impl KummerArg {
    /// Argument for the kernel's fixed second parameter `c = 5/2`.
    pub fn new(u: f64) -> Result<Self> {
        if !u.is_finite() || u < 0.0 {
            return Err(Error::domain(format!(
                "Kummer argument must satisfy u >= 0, got {u}"
            )));
        }
        Ok(KummerArg { u, c: 2.5 })
    }
}

/// Heat kernel `K(x,t) = (4πt)^{-3/2} exp(-|x|²/4t)`.
///
/// Returns exactly 0.0 (never NaN) when the exponent underflows, so the far
/// downstream tail vanishes gracefully even for extreme `|x|²/t`.
pub fn heat_kernel(x: Vec3, t: f64) -> Result<f64> {
    check_time(t)?;
    check_point(x)?;
    let u = norm_sq(x) / (4.0 * t);
    // Order matters: bail out before forming (4πt)^{-3/2}, which can be
    // huge for tiny t and would turn 0·inf into NaN.
    if -u < EXP_UNDERFLOW {
        return Ok(0.0);
    }
    Ok((4.0 * PI * t).powf(-1.5) * (-u).exp())
}

/// Kummer function ₁F₁(1, 5/2, u) for `u ≥ 0`.
///
/// Power series with the term recursion `term·u/(n+5/2)` for `u ≤ 30`
/// (the gamma ratios Γ(5/2)/Γ(n+5/2) are built by that recursion, never
/// from two lgamma calls); for `u > 30` the asymptotic form
///
/// ```text
///     ₁F₁(1,5/2,u) = Γ(5/2) e^u u^{-3/2} − (3/2) u^{-1} Σ_{k=0}^{7} c_k u^{-k},
///     c_k = Π_{i=1..k} (3/2 − i),
/// ```
///
/// whose truncation error is far below double precision on that range.
/// The value grows like `e^u`, so it overflows to `inf` near u ≈ 709; use
/// [`damped_kummer`] whenever the product with `e^{-u}` is wanted.
pub fn kummer_1(u: f64) -> Result<f64> {
    let arg = KummerArg::new(u)?;
    let u = arg.u;
    if u <= 30.0 {
        let mut term = 1.0;
        let mut sum = 1.0;
        for n in 0..MAX_SERIES_TERMS {
            term *= u / (n as f64 + 2.5);
            sum += term;
            if term < SERIES_EPS * sum {
                break;
            }
        }
        Ok(sum)
    } else {
        let mut alg = 0.0;
        let mut coeff = 1.0;
        let mut upow = 1.0;
        for k in 0..8 {
            if k > 0 {
                coeff *= 1.5 - k as f64;
                upow *= u;
            }
            alg += coeff / upow;
        }
        Ok(GAMMA_5_2 * u.exp() * u.powf(-1.5) - 1.5 / u * alg)
    }
}

/// The damped product `e^{-u} ₁F₁(1,5/2,u)`, finite for every `u ≥ 0`.
///
/// Computed as `(3/2) φ_{3/2}(u)`, which is exact (both sides solve the same
/// first-order recurrence in ν and agree at u = 0), uniformly accurate, and
/// decays like `Γ(5/2) u^{-3/2}` as u → ∞.
pub fn damped_kummer(u: f64) -> Result<f64> {
    let arg = KummerArg::new(u)?;
    Ok(1.5 * phi(1.5, arg.u))
}

/// Projector `N_jk(x) = x_j x_k |x|^{-2}` onto the direction of `x`.
pub fn projector(x: Vec3) -> Result<Mat3> {
    check_point(x)?;
    let r2 = norm_sq(x);
    if r2 == 0.0 {
        return Err(Error::domain("projector is undefined at x = 0"));
    }
    let mut n = ZERO_MAT;
    for j in 0..3 {
        for k in 0..3 {
            n[j][k] = x[j] * x[k] / r2;
        }
    }
    Ok(n)
}

/// The tensor `Λ(x,t)`, continuous across `x = 0` where it equals
/// `(2/3) K(0,t) I`.
///
/// Internally written as `c_t [E(u) δ_jk + q(u) P_jk]` with
/// `c_t = (4πt)^{-3/2}`, `P_jk = x_j x_k/(4t)`,
/// `E = e^{-u} − φ_{3/2}/2` and `q = φ_{5/2}`; the φ-recurrence
/// `(3/2)φ_{3/2} = e^{-u} + u φ_{5/2}` makes this identical to the defining
/// regrouping `K(δ−N) − (4πt)^{-3/2} e^{-u}₁F₁ (δ/3−N)` while keeping the
/// N-coefficient free of cancellation for every `u`, removable singularity
/// included.
pub fn lambda_tensor(x: Vec3, t: f64) -> Result<Mat3> {
    check_time(t)?;
    check_point(x)?;
    let jet = lambda_jet(norm_sq(x), t, 0);
    let quarter_t = 1.0 / (4.0 * t);
    let mut out = ZERO_MAT;
    for j in 0..3 {
        for k in 0..3 {
            let p = x[j] * x[k] * quarter_t;
            let delta = if j == k { 1.0 } else { 0.0 };
            out[j][k] = jet.ct * (jet.e[0] * delta + jet.q[0] * p);
        }
    }
    Ok(out)
}

/// All first derivatives of Λ: `out[m][j][k] = ∂Λ_jk/∂x_m`.
///
/// ```text
///     ∂_mΛ_jk = c_t [E'(u) u_m δ_jk + q'(u) u_m P_jk + q(u) ∂_mP_jk],
///     u_m = x_m/(2t),   ∂_mP_jk = (δ_jm x_k + δ_km x_j)/(4t),
/// ```
///
/// uniformly valid in `x` (no singular branch; every factor is polynomial
/// in `x` times a smooth function of `u`).
pub fn lambda_gradient(x: Vec3, t: f64) -> Result<[Mat3; 3]> {
    check_time(t)?;
    check_point(x)?;
    let jet = lambda_jet(norm_sq(x), t, 1);
    let half_t = 1.0 / (2.0 * t);
    let quarter_t = 1.0 / (4.0 * t);
    let mut out = [ZERO_MAT; 3];
    for m in 0..3 {
        let um = x[m] * half_t;
        for j in 0..3 {
            for k in 0..3 {
                let delta = if j == k { 1.0 } else { 0.0 };
                let p = x[j] * x[k] * quarter_t;
                let dp = (delta_f(j, m) * x[k] + delta_f(k, m) * x[j]) * quarter_t;
                out[m][j][k] =
                    jet.ct * (jet.e[1] * um * delta + jet.q[1] * um * p + jet.q[0] * dp);
            }
        }
    }
    Ok(out)
}

/// All second derivatives of Λ: `out[m][p][j][k] = ∂²Λ_jk/∂x_m∂x_p`,
/// symmetric in `(m,p)`.
pub fn lambda_hessian(x: Vec3, t: f64) -> Result<[[Mat3; 3]; 3]> {
    check_time(t)?;
    check_point(x)?;
    let jet = lambda_jet(norm_sq(x), t, 2);
    let half_t = 1.0 / (2.0 * t);
    let quarter_t = 1.0 / (4.0 * t);
    let mut out = [[ZERO_MAT; 3]; 3];
    for m in 0..3 {
        let um = x[m] * half_t;
        for p in 0..3 {
            let up = x[p] * half_t;
            let upm = delta_f(p, m) * half_t;
            for j in 0..3 {
                for k in 0..3 {
                    let delta = if j == k { 1.0 } else { 0.0 };
                    let pp = x[j] * x[k] * quarter_t;
                    let dp_m = (delta_f(j, m) * x[k] + delta_f(k, m) * x[j]) * quarter_t;
                    let dp_p = (delta_f(j, p) * x[k] + delta_f(k, p) * x[j]) * quarter_t;
                    let ddp = (delta_f(j, m) * delta_f(k, p) + delta_f(k, m) * delta_f(j, p))
                        * quarter_t;
                    // Grouping keeps the expression symmetric under m <-> p
                    // at the bit level, not just in exact arithmetic.
                    let upum = up * um;
                    let cross = um * dp_p + up * dp_m;
                    out[m][p][j][k] = jet.ct
                        * (jet.e[2] * upum * delta
                            + jet.e[1] * upm * delta
                            + jet.q[2] * upum * pp
                            + jet.q[1] * (upm * pp + cross)
                            + jet.q[0] * ddp);
                }
            }
        }
    }
    Ok(out)
}

/// Λ together with its derivatives up to `order`, assembled from a single
/// scalar jet. Entries beyond `order` stay zero.
///
/// The assembly expressions are copied verbatim from [`lambda_tensor`],
/// [`lambda_gradient`] and [`lambda_hessian`], so the shared pieces agree
/// with the individual calls bit for bit; batch consumers (one kernel per
/// quadrature source per time node) save the repeated jet computation,
/// which dominates the cost of the individual calls.
pub(crate) struct LambdaFamily {
    pub value: Mat3,
    pub gradient: [Mat3; 3],
    pub hessian: [[Mat3; 3]; 3],
}

pub(crate) fn lambda_family(x: Vec3, t: f64, order: usize) -> Result<LambdaFamily> {
    check_time(t)?;
    check_point(x)?;
    let jet = lambda_jet(norm_sq(x), t, order);
    let half_t = 1.0 / (2.0 * t);
    let quarter_t = 1.0 / (4.0 * t);
    let mut out = LambdaFamily {
        value: ZERO_MAT,
        gradient: [ZERO_MAT; 3],
        hessian: [[ZERO_MAT; 3]; 3],
    };
    for j in 0..3 {
        for k in 0..3 {
            let p = x[j] * x[k] * quarter_t;
            let delta = if j == k { 1.0 } else { 0.0 };
            out.value[j][k] = jet.ct * (jet.e[0] * delta + jet.q[0] * p);
        }
    }
    if order >= 1 {
        for m in 0..3 {
            let um = x[m] * half_t;
            for j in 0..3 {
                for k in 0..3 {
                    let delta = if j == k { 1.0 } else { 0.0 };
                    let p = x[j] * x[k] * quarter_t;
                    let dp = (delta_f(j, m) * x[k] + delta_f(k, m) * x[j]) * quarter_t;
                    out.gradient[m][j][k] =
                        jet.ct * (jet.e[1] * um * delta + jet.q[1] * um * p + jet.q[0] * dp);
                }
            }
        }
    }
    if order >= 2 {
        for m in 0..3 {
            let um = x[m] * half_t;
            for p in 0..3 {
                let up = x[p] * half_t;
                let upm = delta_f(p, m) * half_t;
                for j in 0..3 {
                    for k in 0..3 {
                        let delta = if j == k { 1.0 } else { 0.0 };
                        let pp = x[j] * x[k] * quarter_t;
                        let dp_m = (delta_f(j, m) * x[k] + delta_f(k, m) * x[j]) * quarter_t;
                        let dp_p = (delta_f(j, p) * x[k] + delta_f(k, p) * x[j]) * quarter_t;
                        let ddp = (delta_f(j, m) * delta_f(k, p)
                            + delta_f(k, m) * delta_f(j, p))
                            * quarter_t;
                        let upum = up * um;
                        let cross = um * dp_p + up * dp_m;
                        out.hessian[m][p][j][k] = jet.ct
                            * (jet.e[2] * upum * delta
                                + jet.e[1] * upm * delta
                                + jet.q[2] * upum * pp
                                + jet.q[1] * (upm * pp + cross)
                                + jet.q[0] * ddp);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Pressure kernel `E₄(x)` with components `(4π)^{-1} x_j |x|^{-3}`;
/// homogeneous of degree −2.
pub fn pressure_kernel(x: Vec3) -> Result<Vec3> {
    check_point(x)?;
    let r2 = norm_sq(x);
    if r2 == 0.0 {
        return Err(Error::domain("pressure kernel is singular at x = 0"));
    }
    let c = 1.0 / (4.0 * PI * r2 * r2.sqrt());
    Ok([x[0] * c, x[1] * c, x[2] * c])
}

/// Gradient of the pressure kernel: `out[j][m] = ∂E_{4j}/∂x_m =
/// (4π)^{-1} (δ_jm |x|^{-3} − 3 x_j x_m |x|^{-5})`.
pub fn pressure_kernel_gradient(x: Vec3) -> Result<Mat3> {
    check_point(x)?;
    let r2 = norm_sq(x);
    if r2 == 0.0 {
        return Err(Error::domain("pressure kernel is singular at x = 0"));
    }
    let r3 = r2 * r2.sqrt();
    let r5 = r3 * r2;
    let mut out = ZERO_MAT;
    for j in 0..3 {
        for m in 0..3 {
            out[j][m] = (delta_f(j, m) / r3 - 3.0 * x[j] * x[m] / r5) / (4.0 * PI);
        }
    }
    Ok(out)
}

/// Shared scalar data for Λ and its derivatives at one `(|x|², t)`.
///
/// `e[i]` and `q[i]` hold the i-th u-derivatives of the diagonal coefficient
/// `E(u) = e^{-u} − φ_{3/2}(u)/2` and of the projector coefficient
/// `q(u) = φ_{5/2}(u)`; entries beyond `order` are left at zero.
pub(crate) struct LambdaJet {
    pub ct: f64,
    pub e: [f64; 3],
    pub q: [f64; 3],
}

pub(crate) fn lambda_jet(r2: f64, t: f64, order: usize) -> LambdaJet {
    let u = r2 / (4.0 * t);
    let exp_mu = if -u < EXP_UNDERFLOW { 0.0 } else { (-u).exp() };
    let phi15 = phi(1.5, u);
    let phi25 = phi(2.5, u);
    let mut e = [0.0; 3];
    let mut q = [0.0; 3];
    e[0] = exp_mu - 0.5 * phi15;
    q[0] = phi25;
    if order >= 1 {
        let phi35 = phi(3.5, u);
        e[1] = -exp_mu + 0.5 * phi25;
        q[1] = -phi35;
        if order >= 2 {
            let phi45 = phi(4.5, u);
            e[2] = exp_mu - 0.5 * phi35;
            q[2] = phi45;
        }
    }
    LambdaJet {
        ct: (4.0 * PI * t).powf(-1.5),
        e,
        q,
    }
}

/// `φ_ν(u) = ∫₀¹ s^{ν-1} e^{-us} ds`, positive and decreasing in `u`,
/// with `φ_ν(0) = 1/ν` and `φ_ν(u) → Γ(ν) u^{-ν}` as `u → ∞`.
pub(crate) fn phi(nu: f64, u: f64) -> f64 {
    debug_assert!(nu > 0.0 && u >= 0.0);
    if u == 0.0 {
        return 1.0 / nu;
    }
    if u > 1e280 {
        // Γ(ν,u) has fully underflowed; u^{-ν} may round to zero, which is
        // the correct limit, and this branch keeps u = inf NaN-free.
        return gamma(nu) * u.powf(-nu);
    }
    if u < nu + 1.0 {
        // φ_ν(u) = e^{-u} Σ_{n≥0} uⁿ / (ν(ν+1)···(ν+n)): positive terms only.
        let mut term = 1.0 / nu;
        let mut sum = term;
        for n in 1..MAX_SERIES_TERMS {
            term *= u / (nu + n as f64);
            sum += term;
            if term < SERIES_EPS * sum {
                break;
            }
        }
        (-u).exp() * sum
    } else {
        // φ_ν(u) = u^{-ν} [Γ(ν) − Γ(ν,u)].
        (gamma(nu) - upper_gamma_cf(nu, u)) * u.powf(-nu)
    }
}

/// Upper incomplete gamma `Γ(a,x)` by the modified Lentz continued fraction;
/// requires `x ≥ a + 1` (the range where the fraction converges fast).
fn upper_gamma_cf(a: f64, x: f64) -> f64 {
    const FPMIN: f64 = f64::MIN_POSITIVE / f64::EPSILON;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / FPMIN;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..200 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = b + an / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < f64::EPSILON {
            break;
        }
    }
    let log_prefactor = -x + a * x.ln();
    if log_prefactor < EXP_UNDERFLOW {
        return 0.0;
    }
    log_prefactor.exp() * h
}

/// Γ(x) for x > 0 by the Lanczos approximation (g = 7, 9 coefficients),
/// accurate to ~15 significant digits.
pub(crate) fn gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    debug_assert!(x > 0.0);
    if x < 0.5 {
        return PI / ((PI * x).sin() * gamma(1.0 - x));
    }
    let z = x - 1.0;
    let mut acc = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + G + 0.5;
    (2.0 * PI).sqrt() * t.powf(z + 0.5) * (-t).exp() * acc
}

#[inline]
fn delta_f(a: usize, b: usize) -> f64 {
    if a == b {
        1.0
    } else {
        0.0
    }
}

fn check_time(t: f64) -> Result<()> {
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::domain(format!("time must satisfy t > 0, got {t}")));
    }
    Ok(())
}

fn check_point(x: Vec3) -> Result<()> {
    if !vec_finite(x) {
        return Err(Error::domain(format!("point has non-finite component: {x:?}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frob_norm, mat_mul, mat_vec, norm, transpose};
    use proptest::prelude::*;

    /// Reference values computed with 50-digit arithmetic (mpmath).
    const KUMMER_ORACLE: [(f64, f64); 7] = [
        (1.0, 1.545_117_703_918_057_46),
        (10.0, 925.778_934_161_761_028),
        (25.0, 765_752_166.626_504_461),
        (29.9, 78_620_251_029.122_168_3),
        (30.1, 95_071_503_403.498_773_7),
        (100.0, 3.573_422_684_772_853_82e40),
        (700.0, 7.279_917_739_955_932_84e299),
    ];

    const DAMPED_ORACLE: [(f64, f64); 9] = [
        (1e-10, 0.999_999_999_94),
        (0.001, 0.999_400_214_230_170_092),
        (1.0, 0.568_417_037_461_477_056),
        (5.0, 0.116_692_308_783_428_422),
        (10.0, 0.042_030_298_586_532_038_4),
        (30.0, 0.008_090_107_968_977_324_67),
        (1_000.0, 4.203_743_412_298_446_52e-5),
        (10_000.0, 1.329_340_388_179_137_02e-6),
        (1e8, 1.329_340_388_179_137_02e-12),
    ];

    const PHI_ORACLE: [(f64, f64, f64); 16] = [
        (1.5, 0.5, 0.498_187_464_359_030_759),
        (1.5, 2.0, 0.231_404_361_712_345_705),
        (1.5, 10.0, 0.028_020_199_057_688_025_6),
        (1.5, 1e4, 8.862_269_254_527_580_14e-7),
        (2.5, 0.5, 0.281_501_073_651_825_43),
        (2.5, 2.0, 0.105_885_629_665_952_933),
        (2.5, 10.0, 0.004_198_489_865_676_955_35),
        (2.5, 1e4, 1.329_340_388_179_137_02e-10),
        (3.5, 0.5, 0.194_444_048_833_860_304),
        (3.5, 2.0, 0.064_689_395_464_134_819_9),
        (3.5, 10.0, 0.001_045_082_473_442_990_35),
        (3.5, 1e4, 3.323_350_970_447_842_55e-14),
        (4.5, 0.5, 0.148_047_022_411_755_28),
        (4.5, 2.0, 0.045_538_800_443_929_588_8),
        (4.5, 10.0, 3.612_388_727_287_981_38e-4),
        (4.5, 1e4, 1.163_172_839_656_744_89e-17),
    ];

    const K0: f64 = 0.022_448_390_265_645_820_2; // (4π)^{-3/2}
    const TWO_THIRDS_K0: f64 = 0.014_965_593_510_430_546_8;
    const K0_EM1: f64 = 0.008_258_301_266_124_229_99; // (4π)^{-3/2} e^{-1}

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn kummer_matches_high_precision_values() {
        for &(u, want) in &KUMMER_ORACLE {
            let got = kummer_1(u).unwrap();
            assert!(
                rel_close(got, want, 1e-12),
                "kummer_1({u}) = {got:e}, want {want:e}"
            );
        }
        assert_eq!(kummer_1(0.0).unwrap(), 1.0);
    }

    #[test]
    fn kummer_rejects_negative_argument() {
        assert!(matches!(kummer_1(-1.0), Err(Error::Domain(_))));
        assert!(matches!(kummer_1(f64::NAN), Err(Error::Domain(_))));
    }

    #[test]
    fn damped_kummer_matches_high_precision_values() {
        for &(u, want) in &DAMPED_ORACLE {
            let got = damped_kummer(u).unwrap();
            assert!(
                rel_close(got, want, 1e-13),
                "damped_kummer({u}) = {got:e}, want {want:e}"
            );
        }
        assert_eq!(damped_kummer(0.0).unwrap(), 1.0);
    }

    #[test]
    fn damped_product_agrees_with_direct_product_below_30() {
        // e^u·damped_kummer(u) = kummer_1(u) to 1e-10 relative on the series range.
        let mut u = 0.0;
        while u <= 30.0 {
            let direct = kummer_1(u).unwrap() * (-u).exp();
            let damped = damped_kummer(u).unwrap();
            assert!(
                rel_close(damped, direct, 1e-10),
                "u={u}: damped {damped:e} vs direct {direct:e}"
            );
            u += 0.5;
        }
    }

    #[test]
    fn phi_matches_high_precision_values() {
        for &(nu, u, want) in &PHI_ORACLE {
            let got = phi(nu, u);
            assert!(
                rel_close(got, want, 1e-14),
                "phi({nu},{u}) = {got:e}, want {want:e}"
            );
        }
    }

    #[test]
    fn phi_recurrence_connects_orders() {
        // ν φ_ν(u) = e^{-u} + u φ_{ν+1}(u), exact for the integral definition.
        for &u in &[1e-6, 0.3, 2.0, 4.0, 17.0, 300.0] {
            for &nu in &[1.5, 2.5, 3.5] {
                let lhs = nu * phi(nu, u);
                let rhs = (-u).exp() + u * phi(nu + 1.0, u);
                assert!(rel_close(lhs, rhs, 1e-13), "nu={nu} u={u}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn heat_kernel_reference_points() {
        assert!(rel_close(heat_kernel([0.0; 3], 1.0).unwrap(), K0, 1e-15));
        assert!(rel_close(
            heat_kernel([2.0, 0.0, 0.0], 1.0).unwrap(),
            K0_EM1,
            1e-15
        ));
        // Deep underflow must give an exact zero, not NaN.
        assert_eq!(heat_kernel([100.0, 0.0, 0.0], 1e-3).unwrap(), 0.0);
        assert!(matches!(heat_kernel([1.0; 3], 0.0), Err(Error::Domain(_))));
        assert!(matches!(heat_kernel([1.0; 3], -2.0), Err(Error::Domain(_))));
    }

    #[test]
    fn projector_axis_and_diagonal_cases() {
        let n = projector([1.0, 0.0, 0.0]).unwrap();
        assert_eq!(n[0][0], 1.0);
        assert_eq!(n[1][1], 0.0);
        assert_eq!(n[0][1], 0.0);

        let n = projector([1.0, 1.0, 0.0]).unwrap();
        for (j, k, want) in [(0, 0, 0.5), (0, 1, 0.5), (1, 0, 0.5), (1, 1, 0.5), (2, 2, 0.0)] {
            assert!((n[j][k] - want).abs() < 1e-15);
        }
        assert!(matches!(projector([0.0; 3]), Err(Error::Domain(_))));
    }

    #[test]
    fn lambda_matches_high_precision_values() {
        // x=(1,2,-1), t=0.7 and x=(0.3,-0.1,0.05), t=2.5; mpmath oracles.
        let want_a: Mat3 = [
            [
                0.001_668_765_684_132_269_71,
                0.002_658_250_823_739_909,
                -0.001_329_125_411_869_954_5,
            ],
            [
                0.002_658_250_823_739_909,
                0.005_656_141_919_742_133_21,
                -0.002_658_250_823_739_909,
            ],
            [
                -0.001_329_125_411_869_954_5,
                -0.002_658_250_823_739_909,
                0.001_668_765_684_132_269_71,
            ],
        ];
        let got_a = lambda_tensor([1.0, 2.0, -1.0], 0.7).unwrap();
        let want_b: Mat3 = [
            [
                0.003_760_011_079_537_193_29,
                -6.765_156_009_157_132_52e-6,
                3.382_578_004_578_566_26e-6,
            ],
            [
                -6.765_156_009_157_132_52e-6,
                0.003_741_970_663_512_774_27,
                -1.127_526_001_526_188_75e-6,
            ],
            [
                3.382_578_004_578_566_26e-6,
                -1.127_526_001_526_188_75e-6,
                0.003_740_279_374_510_484_99,
            ],
        ];
        let got_b = lambda_tensor([0.3, -0.1, 0.05], 2.5).unwrap();
        for (got, want) in [(got_a, want_a), (got_b, want_b)] {
            for j in 0..3 {
                for k in 0..3 {
                    assert!(
                        (got[j][k] - want[j][k]).abs() <= 1e-14 * frob_norm(&want),
                        "entry ({j},{k}): {} vs {}",
                        got[j][k],
                        want[j][k]
                    );
                }
            }
        }
    }

    #[test]
    fn lambda_is_continuous_at_the_origin() {
        let at_zero = lambda_tensor([0.0; 3], 1.0).unwrap();
        for j in 0..3 {
            for k in 0..3 {
                let want = if j == k { TWO_THIRDS_K0 } else { 0.0 };
                assert!((at_zero[j][k] - want).abs() < 1e-16);
            }
        }
        // Deviation from the extension shrinks as |x| -> 0.
        let dir = [0.6, -0.48, 0.64]; // |dir| = 1
        let mut prev = f64::INFINITY;
        for eps in [1e-2, 1e-3, 1e-4] {
            let lam = lambda_tensor(scale_dir(dir, eps), 1.0).unwrap();
            let dev = frob_norm(&mat_sub(&lam, &at_zero));
            assert!(dev < prev, "deviation must shrink: eps={eps} dev={dev}");
            prev = dev;
        }
        assert!(prev <= 1e-6, "|x|=1e-4 deviation {prev} above 1e-6");
    }

    #[test]
    fn lambda_far_field_matches_kummer_asymptotics() {
        // For u = |x|²/4t large, Λ → (3/(4π)) |x|^{-3} (N − δ/3).
        let x = [1e3, 0.0, 0.0];
        let lam = lambda_tensor(x, 1.0).unwrap();
        let n = projector(x).unwrap();
        let c = 3.0 / (4.0 * PI) * 1e-9;
        for j in 0..3 {
            for k in 0..3 {
                let delta = if j == k { 1.0 } else { 0.0 };
                let want = c * (n[j][k] - delta / 3.0);
                assert!(
                    (lam[j][k] - want).abs() <= 1e-4 * c,
                    "entry ({j},{k}): {} vs {want}",
                    lam[j][k]
                );
            }
        }
    }

    #[test]
    fn lambda_has_no_nan_over_the_invariant_box() {
        // u ∈ [0, 1e8] (via |x| up to 1e6), t ∈ [1e-8, 1e8].
        for &t in &[1e-8, 1e-3, 1.0, 1e3, 1e8] {
            for &r in &[0.0, 1e-6, 1e-2, 1.0, 1e2, 1e4, 1e6] {
                let x = [r * 0.36, -r * 0.8, r * 0.48];
                let lam = lambda_tensor(x, t).unwrap();
                for row in &lam {
                    for v in row {
                        assert!(v.is_finite(), "non-finite Λ entry at r={r}, t={t}");
                    }
                }
            }
        }
    }

    #[test]
    fn pressure_kernel_reference_points() {
        let e = pressure_kernel([1.0, 0.0, 0.0]).unwrap();
        assert!(rel_close(e[0], 1.0 / (4.0 * PI), 1e-15));
        assert_eq!(e[1], 0.0);

        // Homogeneity of degree -2.
        let e2 = pressure_kernel([2.0, 0.0, 0.0]).unwrap();
        assert!(rel_close(e2[0], 1.0 / (16.0 * PI), 1e-15));

        // |x| = 5: components x_j/(4π·125).
        let e3 = pressure_kernel([0.0, 3.0, 4.0]).unwrap();
        assert!(rel_close(e3[1], 3.0 / (500.0 * PI), 1e-15));
        assert!(rel_close(e3[2], 4.0 / (500.0 * PI), 1e-15));
        assert!(matches!(pressure_kernel([0.0; 3]), Err(Error::Domain(_))));
    }

    #[test]
    fn pressure_gradient_agrees_with_finite_differences() {
        let x = [0.8, -1.3, 0.4];
        let grad = pressure_kernel_gradient(x).unwrap();
        let h = 1e-6;
        for m in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[m] += h;
            xm[m] -= h;
            let ep = pressure_kernel(xp).unwrap();
            let em = pressure_kernel(xm).unwrap();
            for j in 0..3 {
                let fd = (ep[j] - em[j]) / (2.0 * h);
                assert!(
                    (grad[j][m] - fd).abs() <= 1e-6 * frob_norm(&grad),
                    "(j,m)=({j},{m}): {} vs FD {fd}",
                    grad[j][m]
                );
            }
        }
    }

    #[test]
    fn lambda_gradient_agrees_with_finite_differences() {
        for (x, t) in [([0.7, -0.2, 1.1], 0.8), ([2.0, 1.0, -0.5], 2.3), ([0.01, 0.02, -0.01], 1.0)]
        {
            let grad = lambda_gradient(x, t).unwrap();
            let scale_ref = frob_norm(&lambda_tensor(x, t).unwrap()).max(1e-12);
            let h = 1e-5;
            for m in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[m] += h;
                xm[m] -= h;
                let lp = lambda_tensor(xp, t).unwrap();
                let lm = lambda_tensor(xm, t).unwrap();
                for j in 0..3 {
                    for k in 0..3 {
                        let fd = (lp[j][k] - lm[j][k]) / (2.0 * h);
                        assert!(
                            (grad[m][j][k] - fd).abs() <= 1e-5 * scale_ref,
                            "x={x:?} (m,j,k)=({m},{j},{k}): {} vs FD {fd}",
                            grad[m][j][k]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn lambda_hessian_agrees_with_gradient_differences_and_is_symmetric() {
        let x = [0.9, 0.4, -0.7];
        let t = 1.2;
        let hess = lambda_hessian(x, t).unwrap();
        let h = 1e-5;
        let scale_ref = frob_norm(&lambda_tensor(x, t).unwrap()).max(1e-12);
        for p in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[p] += h;
            xm[p] -= h;
            let gp = lambda_gradient(xp, t).unwrap();
            let gm = lambda_gradient(xm, t).unwrap();
            for m in 0..3 {
                for j in 0..3 {
                    for k in 0..3 {
                        let fd = (gp[m][j][k] - gm[m][j][k]) / (2.0 * h);
                        assert!(
                            (hess[m][p][j][k] - fd).abs() <= 2e-4 * scale_ref,
                            "(m,p,j,k)=({m},{p},{j},{k}): {} vs FD {fd}",
                            hess[m][p][j][k]
                        );
                        assert_eq!(hess[m][p][j][k], hess[p][m][j][k]);
                    }
                }
            }
        }
    }

    fn scale_dir(d: Vec3, s: f64) -> Vec3 {
        [d[0] * s, d[1] * s, d[2] * s]
    }

    fn mat_sub(a: &Mat3, b: &Mat3) -> Mat3 {
        let mut out = ZERO_MAT;
        for j in 0..3 {
            for k in 0..3 {
                out[j][k] = a[j][k] - b[j][k];
            }
        }
        out
    }

    /// Rotation by `angle` about unit `axis` (Rodrigues formula); test helper.
    fn rodrigues(axis: Vec3, angle: f64) -> Mat3 {
        let (s, c) = angle.sin_cos();
        let mut r = ZERO_MAT;
        for j in 0..3 {
            for k in 0..3 {
                let delta = if j == k { 1.0 } else { 0.0 };
                r[j][k] = c * delta + (1.0 - c) * axis[j] * axis[k];
            }
        }
        r[0][1] -= s * axis[2];
        r[0][2] += s * axis[1];
        r[1][0] += s * axis[2];
        r[1][2] -= s * axis[0];
        r[2][0] -= s * axis[1];
        r[2][1] += s * axis[0];
        r
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn projector_is_symmetric_idempotent_trace_one(
            x in prop::array::uniform3(-50.0f64..50.0).prop_filter("x != 0", |v| norm_sq(*v) > 1e-12)
        ) {
            let n = projector(x).unwrap();
            let nn = mat_mul(&n, &n);
            for j in 0..3 {
                for k in 0..3 {
                    prop_assert!((n[j][k] - n[k][j]).abs() < 1e-14);
                    prop_assert!((nn[j][k] - n[j][k]).abs() < 1e-14);
                }
            }
            prop_assert!((n[0][0] + n[1][1] + n[2][2] - 1.0).abs() < 1e-14);
        }

        #[test]
        fn lambda_is_symmetric(
            x in prop::array::uniform3(-20.0f64..20.0),
            t in 1e-3f64..1e3,
        ) {
            let lam = lambda_tensor(x, t).unwrap();
            for j in 0..3 {
                for k in 0..3 {
                    prop_assert!((lam[j][k] - lam[k][j]).abs() <= 1e-15 * frob_norm(&lam).max(1e-300));
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn lambda_is_rotation_equivariant(
            x in prop::array::uniform3(-5.0f64..5.0),
            axis_raw in prop::array::uniform3(-1.0f64..1.0).prop_filter("axis != 0", |v| norm_sq(*v) > 1e-3),
            angle in 0.0f64..std::f64::consts::TAU,
            t in 0.05f64..20.0,
        ) {
            // Λ(Rx, t) = R Λ(x,t) Rᵀ for every rotation R.
            let axis = scale_dir(axis_raw, 1.0 / norm(axis_raw));
            let r = rodrigues(axis, angle);
            let lhs = lambda_tensor(mat_vec(&r, x), t).unwrap();
            let rhs = mat_mul(&mat_mul(&r, &lambda_tensor(x, t).unwrap()), &transpose(&r));
            let tol = 1e-12 * frob_norm(&lhs).max(1e-300);
            for j in 0..3 {
                for k in 0..3 {
                    prop_assert!((lhs[j][k] - rhs[j][k]).abs() <= tol);
                }
            }
        }

        #[test]
        fn heat_kernel_is_bounded_by_its_center_value(
            x in prop::array::uniform3(-100.0f64..100.0),
            t in 1e-4f64..1e4,
        ) {
            let k = heat_kernel(x, t).unwrap();
            let k0 = heat_kernel([0.0; 3], t).unwrap();
            prop_assert!(k.is_finite());
            prop_assert!(k >= 0.0);
            prop_assert!(k <= k0 * (1.0 + 1e-15));
        }
    }

}
