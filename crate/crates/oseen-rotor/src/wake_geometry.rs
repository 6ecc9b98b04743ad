//! Wake weights, sphere quadrature and decay-slope measurement.
//!
//! The translation direction `e₁` breaks isotropy: velocity fields decay
//! like `(|x| s_τ(x))^{-1}` with the wake weight
//!
//! ```text
//!     s_τ(x) = 1 + τ(|x| − x₁),
//! ```
//!
//! which is `1` on the downstream axis and grows like `2τ|x|` upstream.
//! This module provides the weights themselves, Gauss–Legendre × uniform
//! sphere rules aligned with the wake axis, weighted sphere integrals, the
//! ratio of shifted weights, and least-squares slope fits of sampled decay
//! curves — the measuring instruments used by every verification suite.

use crate::error::{Error, Result};
use crate::linalg::{norm, normalize, sub, Vec3};

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// The anisotropic wake weight `s_τ(x) = 1 + τ(|x| − x₁)`.
///
/// For `τ ≥ 0` this is `≥ 1` everywhere and `≤ 1 + 2τ|x|`.
pub fn s_tau(x: Vec3, tau: f64) -> f64 {
    1.0 + tau * (norm(x) - x[0])
}

/// The reference weight `s(x) = s₁(x)` used by the `η` family.
pub fn s_1(x: Vec3) -> f64 {
    s_tau(x, 1.0)
}

/// The wake weight with its parameter validated once.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WakeWeight {
    tau: f64,
}

impl WakeWeight {
    pub fn new(tau: f64) -> Result<Self> {
        if !tau.is_finite() || tau < 0.0 {
            return Err(Error::domain(format!(
                "wake weight requires tau >= 0, got {tau}"
            )));
        }
        Ok(WakeWeight { tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn eval(&self, x: Vec3) -> f64 {
        s_tau(x, self.tau)
    }
}

/// The two-parameter weight `η^α_β(x) = (1 + |x|)^α s(x)^β` with `s = s₁`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaWeight {
    pub alpha_exp: f64,
    pub beta_exp: f64,
}

impl EtaWeight {
    pub fn new(alpha_exp: f64, beta_exp: f64) -> Self {
        EtaWeight { alpha_exp, beta_exp }
    }

    pub fn eval(&self, x: Vec3) -> f64 {
        (1.0 + norm(x)).powf(self.alpha_exp) * s_1(x).powf(self.beta_exp)
    }
}

/// A sampled decay curve along one ray, with its fitted log–log slope.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayReport {
    /// Unit direction of the scan.
    pub ray: Vec3,
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    /// Least-squares slope of `log value` against `log radius`.
    pub fitted_slope: f64,
    /// Largest `value / majorant` over the samples.
    pub envelope_ratio_max: f64,
    /// Human-readable description of the majorant used for the ratio.
    pub envelope: String,
}

/// Ratio `s_τ(x) / (s_τ(z) (1 + |x−z|))`.
///
/// The shifted weight is controlled by the unshifted one at the cost of one
/// factor of the shift distance; the supremum of this ratio over all pairs
/// is `max(1, 2τ)`.
pub fn shift_weight_bound(x: Vec3, z: Vec3, tau: f64) -> f64 {
    s_tau(x, tau) / (s_tau(z, tau) * (1.0 + norm(sub(x, z))))
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, by Newton iteration on
/// the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be positive");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 1..=n {
                let jf = j as f64;
                let p3 = p2;
                p2 = p1;
                p1 = ((2.0 * jf - 1.0) * x * p2 - (jf - 1.0) * p3) / jf;
            }
            dp = nf * (x * p1 - p2) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Quadrature rule on the sphere `∂B_r(0)`: Gauss–Legendre in the polar
/// cosine (pole at `e₁`, so `s_τ` varies only along the Gauss direction)
/// times a uniform azimuth grid. Weights include the `r²` surface factor
/// and sum to `4πr²`.
pub fn sphere_rule(r: f64, n_polar: usize, n_azimuth: usize) -> Vec<(Vec3, f64)> {
    assert!(r > 0.0 && n_polar >= 1 && n_azimuth >= 1);
    let (mu, wmu) = gauss_legendre(n_polar);
    let dphi = 2.0 * PI / n_azimuth as f64;
    let mut rule = Vec::with_capacity(n_polar * n_azimuth);
    for i in 0..n_polar {
        let x1 = r * mu[i];
        let rt = r * (1.0 - mu[i] * mu[i]).max(0.0).sqrt();
        let w = r * r * wmu[i] * dphi;
        for j in 0..n_azimuth {
            let phi = dphi * j as f64;
            rule.push(([x1, rt * phi.cos(), rt * phi.sin()], w));
        }
    }
    rule
}

/// The weighted sphere integral `∫_{∂B_r} s_τ(x)^{-β} do(x)` for `β > 1`,
/// with convergence certified by doubling the polar order; grows at most
/// linearly in `r` (this is the content of the sphere-weight lemma).
pub fn sphere_integral_weight(r: f64, beta: f64, tau: f64, n_quad: usize) -> Result<f64> {
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::domain(format!("sphere radius must be positive, got {r}")));
    }
    if !(beta.is_finite() && beta > 1.0) {
        return Err(Error::domain(format!(
            "sphere weight integral requires beta > 1, got {beta}"
        )));
    }
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::domain(format!("tau must be >= 0, got {tau}")));
    }
    let n = n_quad.max(8);
    let coarse = sphere_weight_by_polar_quadrature(r, beta, tau, n);
    let fine = sphere_weight_by_polar_quadrature(r, beta, tau, 2 * n);
    let rel = (coarse - fine).abs() / fine.abs().max(f64::MIN_POSITIVE);
    if rel > 1e-6 {
        return Err(Error::Accuracy {
            context: format!(
                "sphere weight integral did not converge at polar order {n} (r={r}, beta={beta}, tau={tau})"
            ),
            estimate: vec![fine],
            error: vec![(coarse - fine).abs()],
            worst_error: (coarse - fine).abs(),
        });
    }
    Ok(fine)
}

/// The integrand depends only on the polar cosine, so the azimuth integral
/// is exact: `2πr² ∫_{-1}^{1} (1 + τr(1−μ))^{-β} dμ` by Gauss–Legendre.
fn sphere_weight_by_polar_quadrature(r: f64, beta: f64, tau: f64, n: usize) -> f64 {
    let (mu, w) = gauss_legendre(n);
    let mut acc = 0.0;
    for i in 0..n {
        acc += w[i] * (1.0 + tau * r * (1.0 - mu[i])).powf(-beta);
    }
    2.0 * PI * r * r * acc
}

/// Least-squares log–log slope of a sampled decay curve; the envelope
/// ratio is taken against the fitted power law itself.
pub fn fit_decay(ray: Vec3, radii: &[f64], values: &[f64]) -> Result<DecayReport> {
    fit_decay_against(ray, radii, values, None)
}

/// Like [`fit_decay`], but also reports `max value/majorant` for a caller-
/// supplied majorant (the lemma envelope being tested).
pub fn fit_decay_with_envelope(
    ray: Vec3,
    radii: &[f64],
    values: &[f64],
    majorant: impl Fn(f64) -> f64,
    description: &str,
) -> Result<DecayReport> {
    fit_decay_against(ray, radii, values, Some((&majorant, description)))
}

fn fit_decay_against(
    ray: Vec3,
    radii: &[f64],
    values: &[f64],
    majorant: Option<(&dyn Fn(f64) -> f64, &str)>,
) -> Result<DecayReport> {
    let ray = normalize(ray)
        .ok_or_else(|| Error::domain("decay scan needs a nonzero ray direction"))?;
    if radii.len() < 4 {
        return Err(Error::data(format!(
            "slope fitting needs at least 4 radii, got {}",
            radii.len()
        )));
    }
    if radii.len() != values.len() {
        return Err(Error::data(format!(
            "{} radii but {} values",
            radii.len(),
            values.len()
        )));
    }
    if !radii.windows(2).all(|p| p[1] > p[0]) || radii[0] <= 0.0 {
        return Err(Error::data("radii must be positive and strictly increasing"));
    }
    if let Some(bad) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::data(format!(
            "slope fitting needs positive finite values, got {bad}"
        )));
    }

    let n = radii.len() as f64;
    let lx: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let ly: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..lx.len() {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;

    let (ratio_max, envelope) = match majorant {
        Some((f, desc)) => {
            let mut m: f64 = 0.0;
            for (r, v) in radii.iter().zip(values) {
                m = m.max(v / f(*r));
            }
            (m, desc.to_string())
        }
        None => {
            let mut m: f64 = 0.0;
            for (lr, lv) in lx.iter().zip(&ly) {
                m = m.max((lv - (intercept + slope * lr)).exp());
            }
            (
                m,
                format!("fitted power law exp({intercept:.6})*r^({slope:.6})"),
            )
        }
    };

    Ok(DecayReport {
        ray,
        radii: radii.to_vec(),
        values: values.to_vec(),
        fitted_slope: slope,
        envelope_ratio_max: ratio_max,
        envelope,
    })
}
