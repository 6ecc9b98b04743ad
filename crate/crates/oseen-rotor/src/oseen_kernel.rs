//! Time-dependent kernel of the rotating Oseen system.
//!
//! With translation speed `τ > 0` along `e₁` and angular velocity
//! `ω = ϱ e₁`, the fundamental solution is the time integral of
//!
//! ```text
//!     Γ(y,z,t) = Λ(y − τt e₁ − e^{−tΩ} z, t) · e^{−tΩ},
//! ```
//!
//! where `e^{±tΩ}` is the rotation about `e₁` by the angle `±ϱt` and `Λ`
//! comes from [`crate::scalar_kernels`]. This module owns the flow
//! parameters, the rotation matrices, the shifted argument
//! `w = y − τt e₁ − e^{−tΩ} z`, derivatives of `Γ` in `y` and `z` up to
//! first order each, and the pointwise majorant `(|w|² + t)^{-3/2-k/2}`
//! that controls them.

use crate::error::{Error, Result};
use crate::linalg::{mat_mul, mat_vec, norm, norm_sq, sub, vec_finite, Mat3, Vec3};
use crate::scalar_kernels::{lambda_gradient, lambda_hessian, lambda_tensor};

use serde::{Deserialize, Serialize};

/// Translation and rotation parameters of the flow.
///
/// Invariants `τ > 0` and `ϱ ≠ 0` are established at construction, so
/// holders of a value never need to re-validate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFlowParams")]
pub struct FlowParams {
    tau: f64,
    rho: f64,
}

#[derive(Deserialize)]
struct RawFlowParams {
    tau: f64,
    rho: f64,
}

impl TryFrom<RawFlowParams> for FlowParams {
    type Error = String;

    fn try_from(raw: RawFlowParams) -> std::result::Result<Self, String> {
        FlowParams::new(raw.tau, raw.rho).map_err(|e| e.to_string())
    }
}

impl FlowParams {
    /// Translation speed `tau` (must be positive) and rotation speed `rho`
    /// (must be nonzero; its sign fixes the sense of rotation).
    pub fn new(tau: f64, rho: f64) -> Result<Self> {
        if !tau.is_finite() || tau <= 0.0 {
            return Err(Error::domain(format!(
                "translation speed must satisfy tau > 0, got {tau}"
            )));
        }
        if !rho.is_finite() || rho == 0.0 {
            return Err(Error::domain(format!(
                "rotation speed must be nonzero and finite, got {rho}"
            )));
        }
        Ok(FlowParams { tau, rho })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }
}

/// Sense of the rotation `e^{±tΩ}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spin {
    /// `e^{+tΩ}`: rotation about `e₁` by `+ϱt`.
    Plus,
    /// `e^{-tΩ}`: rotation about `e₁` by `-ϱt`.
    Minus,
}

/// Derivative order in one variable, as a multi-index `(a1,a2,a3)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MultiIndex {
    pub a1: u8,
    pub a2: u8,
    pub a3: u8,
}

impl MultiIndex {
    pub const ZERO: MultiIndex = MultiIndex { a1: 0, a2: 0, a3: 0 };

    pub fn new(a1: u8, a2: u8, a3: u8) -> Self {
        MultiIndex { a1, a2, a3 }
    }

    /// The unit index `e_m` for coordinate `m ∈ {0,1,2}`.
    pub fn unit(m: usize) -> Self {
        let mut idx = MultiIndex::ZERO;
        match m {
            0 => idx.a1 = 1,
            1 => idx.a2 = 1,
            2 => idx.a3 = 1,
            _ => panic!("coordinate index out of range: {m}"),
        }
        idx
    }

    /// Total order `|α| = a1 + a2 + a3`.
    pub fn order(&self) -> u32 {
        self.a1 as u32 + self.a2 as u32 + self.a3 as u32
    }

    /// For `|α| = 1`, the differentiated coordinate.
    pub(crate) fn axis(&self) -> Option<usize> {
        match (self.a1, self.a2, self.a3) {
            (1, 0, 0) => Some(0),
            (0, 1, 0) => Some(1),
            (0, 0, 1) => Some(2),
            _ => None,
        }
    }
}

impl std::fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{})", self.a1, self.a2, self.a3)
    }
}

impl std::str::FromStr for MultiIndex {
    type Err = String;

    /// Parses `"a1,a2,a3"`, e.g. `"1,0,0"`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(format!("expected three comma-separated entries, got {s:?}"));
        }
        let mut vals = [0u8; 3];
        for (slot, part) in vals.iter_mut().zip(&parts) {
            *slot = part
                .parse()
                .map_err(|e| format!("bad multi-index entry {part:?}: {e}"))?;
        }
        Ok(MultiIndex::new(vals[0], vals[1], vals[2]))
    }
}

/// One evaluation point of the kernel, with the shifted argument cached.
#[derive(Debug, Clone, Copy)]
pub struct KernelPoint {
    pub y: Vec3,
    pub z: Vec3,
    pub t: f64,
    /// `w = y − τt e₁ − e^{−tΩ} z`.
    pub shifted: Vec3,
}

impl KernelPoint {
    pub fn new(y: Vec3, z: Vec3, t: f64, params: &FlowParams) -> Result<Self> {
        if !t.is_finite() || t <= 0.0 {
            return Err(Error::domain(format!("time must satisfy t > 0, got {t}")));
        }
        if !vec_finite(y) || !vec_finite(z) {
            return Err(Error::domain("kernel point has non-finite coordinates"));
        }
        let m = rotation(t, params, Spin::Minus);
        let rz = mat_vec(&m, z);
        let shifted = [
            y[0] - params.tau() * t - rz[0],
            y[1] - rz[1],
            y[2] - rz[2],
        ];
        Ok(KernelPoint { y, z, t, shifted })
    }
}

/// The rotation `e^{±tΩ}` about `e₁` by the angle `±ϱt`.
pub fn rotation(t: f64, params: &FlowParams, spin: Spin) -> Mat3 {
    let theta = match spin {
        Spin::Plus => params.rho() * t,
        Spin::Minus => -params.rho() * t,
    };
    let (s, c) = theta.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

/// Distance `|y − z|` controlling the `t → 0` singularity of the time
/// integral: the shifted argument satisfies `w → y − z` as `t → 0`.
pub fn separation(y: Vec3, z: Vec3) -> f64 {
    norm(sub(y, z))
}

/// The kernel `Γ(y,z,t) = Λ(w,t) · e^{−tΩ}`.
pub fn gamma_kernel(y: Vec3, z: Vec3, t: f64, params: &FlowParams) -> Result<Mat3> {
    let point = KernelPoint::new(y, z, t, params)?;
    let m = rotation(t, params, Spin::Minus);
    Ok(mat_mul(&lambda_tensor(point.shifted, t)?, &m))
}

/// Derivative `∂_y^α ∂_z^β Γ(y,z,t)` for `|α| ≤ 1` and `|β| ≤ 1`.
///
/// The chain rule reduces everything to derivatives of `Λ` at the shifted
/// argument: `∂w/∂y_m = e_m` and `∂w_s/∂z_l = −(e^{−tΩ})_{sl}`, so
///
/// ```text
///     ∂y_m Γ        =  (∂_mΛ)(w,t) · e^{−tΩ},
///     ∂z_l Γ        = −Σ_s (e^{−tΩ})_{sl} (∂_sΛ)(w,t) · e^{−tΩ},
///     ∂y_m ∂z_l Γ   = −Σ_s (e^{−tΩ})_{sl} (∂_m∂_sΛ)(w,t) · e^{−tΩ}.
/// ```
///
/// Higher orders in either variable are rejected with
/// [`Error::UnsupportedOrder`].
pub fn gamma_derivative(
    y: Vec3,
    z: Vec3,
    t: f64,
    params: &FlowParams,
    alpha: MultiIndex,
    beta: MultiIndex,
) -> Result<Mat3> {
    if alpha.order() > 1 || beta.order() > 1 {
        return Err(Error::UnsupportedOrder(format!(
            "kernel derivatives are implemented for |alpha| <= 1 and |beta| <= 1, \
             got alpha = {alpha}, beta = {beta}"
        )));
    }
    let point = KernelPoint::new(y, z, t, params)?;
    let m = rotation(t, params, Spin::Minus);
    let w = point.shifted;
    match (alpha.axis(), beta.axis()) {
        (None, None) => Ok(mat_mul(&lambda_tensor(w, t)?, &m)),
        (Some(am), None) => {
            let grad = lambda_gradient(w, t)?;
            Ok(mat_mul(&grad[am], &m))
        }
        (None, Some(bl)) => {
            let grad = lambda_gradient(w, t)?;
            let mut acc = [[0.0; 3]; 3];
            for s in 0..3 {
                let weight = -m[s][bl];
                if weight == 0.0 {
                    continue;
                }
                let ds = mat_mul(&grad[s], &m);
                for j in 0..3 {
                    for k in 0..3 {
                        acc[j][k] += weight * ds[j][k];
                    }
                }
            }
            Ok(acc)
        }
        (Some(am), Some(bl)) => {
            let hess = lambda_hessian(w, t)?;
            let mut acc = [[0.0; 3]; 3];
            for s in 0..3 {
                let weight = -m[s][bl];
                if weight == 0.0 {
                    continue;
                }
                let hms = mat_mul(&hess[am][s], &m);
                for j in 0..3 {
                    for k in 0..3 {
                        acc[j][k] += weight * hms[j][k];
                    }
                }
            }
            Ok(acc)
        }
    }
}

/// Pointwise majorant `(|w|² + t)^{-3/2 - order/2}` of `|∂^αΓ|` for total
/// derivative order 0, 1 or 2.
pub fn majorant(y: Vec3, z: Vec3, t: f64, params: &FlowParams, order: u32) -> Result<f64> {
    if order > 2 {
        return Err(Error::UnsupportedOrder(format!(
            "majorant exponent is tabulated for order <= 2, got {order}"
        )));
    }
    let point = KernelPoint::new(y, z, t, params)?;
    let g = norm_sq(point.shifted) + t;
    Ok(g.powf(-1.5 - 0.5 * order as f64))
}
