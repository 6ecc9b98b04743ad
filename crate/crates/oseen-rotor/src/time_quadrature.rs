//! Adaptive evaluation of the time integral `𝔷(y,z) = ∫₀^∞ Γ(y,z,t) dt`.
//!
//! The half line is covered by two mapped segments joined at `t = split`:
//! a head `t = split·s²` (clusters nodes at the `t → 0` boundary layer,
//! where the integrand switches on like `e^{-|y-z|²/4t}`) and a tail,
//! either `t = split/s` or `t = split·e^{1/s−1}` (both turn the algebraic
//! far-field decay into a smooth integrand on `s ∈ (0,1]`). Each panel is
//! scored by a Gauss–Kronrod 7–15 pair with the standard error rescaling,
//! and one global loop bisects whichever panel currently dominates the
//! error, until every component of the running total meets
//! `max(abs_tol, rel_tol·|total|)` or the subdivision budget is spent —
//! in which case the best estimate is returned inside
//! [`Error::Accuracy`](crate::Error::Accuracy) instead of being passed off
//! as converged.
//!
//! Downstream targets can make `|w(t)|² + t` dip sharply at interior times
//! (the wake crossing), so before integrating, candidate minima of that
//! gauge are located on a log grid, refined by golden section, and forced
//! as panel boundaries.

use crate::error::{Error, Result};
use crate::linalg::{norm_sq, Mat3, Vec3, ZERO_MAT};
use crate::oseen_kernel::{
    gamma_derivative, rotation, separation, FlowParams, MultiIndex, Spin,
};

use serde::{Deserialize, Serialize};

/// Gauss–Kronrod 7–15 abscissae (positive half, descending; last is 0).
const XGK: [f64; 8] = [
    0.991_455_371_120_813,
    0.949_107_912_342_759,
    0.864_864_423_359_769,
    0.741_531_185_599_394,
    0.586_087_235_467_691,
    0.405_845_151_377_397,
    0.207_784_955_007_898,
    0.0,
];

/// Kronrod weights matching [`XGK`].
const WGK: [f64; 8] = [
    0.022_935_322_010_529,
    0.063_092_092_629_979,
    0.104_790_010_322_250,
    0.140_653_259_715_525,
    0.169_004_726_639_267,
    0.190_350_578_064_785,
    0.204_432_940_075_298,
    0.209_482_141_084_728,
];

/// Embedded 7-point Gauss weights (nodes `XGK[1], XGK[3], XGK[5], XGK[7]`).
const WG: [f64; 4] = [
    0.129_484_966_168_870,
    0.279_705_391_489_277,
    0.381_830_050_505_119,
    0.417_959_183_673_469,
];

/// Change of variables for the unbounded part `t ∈ [split, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailMap {
    /// `t = split/s`; right choice for algebraic tails (the default).
    Reciprocal,
    /// `t = split·e^{1/s−1}`; compresses even slower tails harder.
    Exponential,
}

/// Accuracy and layout controls for the time quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadSpec {
    /// Per-component relative tolerance on the accumulated integral.
    pub rel_tol: f64,
    /// Absolute floor for components that are structurally zero.
    pub abs_tol: f64,
    /// Junction between the head and tail maps.
    pub split: f64,
    /// Bisection depth per initial panel before giving up.
    pub max_subdivisions: u32,
    pub tail_map: TailMap,
}

impl Default for QuadSpec {
    fn default() -> Self {
        QuadSpec {
            rel_tol: 1e-6,
            abs_tol: 1e-10,
            split: 1.0,
            max_subdivisions: 60,
            tail_map: TailMap::Reciprocal,
        }
    }
}

impl QuadSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol.is_finite() && self.rel_tol >= 1e-14) {
            return Err(Error::domain(format!(
                "rel_tol must be >= 1e-14 (got {}); tighter requests cannot be \
                 distinguished from rounding noise of the kernel evaluation",
                self.rel_tol
            )));
        }
        if !(self.abs_tol.is_finite() && self.abs_tol >= 0.0) {
            return Err(Error::domain("abs_tol must be finite and nonnegative"));
        }
        if !(self.split.is_finite() && self.split > 0.0) {
            return Err(Error::domain(format!(
                "split must be positive, got {}",
                self.split
            )));
        }
        if self.max_subdivisions == 0 || self.max_subdivisions > 200 {
            return Err(Error::domain("max_subdivisions must lie in 1..=200"));
        }
        Ok(())
    }
}

/// Result of a matrix-valued time integral.
#[derive(Debug, Clone, Copy)]
pub struct ZValue {
    pub value: Mat3,
    /// Largest per-entry error estimate (conservative, QUADPACK-style).
    pub error_estimate: f64,
    /// Number of kernel evaluations spent.
    pub evaluations: u64,
}

/// Result of a scalar time integral.
#[derive(Debug, Clone, Copy)]
pub struct ScalarValue {
    pub value: f64,
    pub error_estimate: f64,
    pub evaluations: u64,
}

/// The kernel `𝔷(y,z) = ∫₀^∞ Γ(y,z,t) dt`; singular exactly at `y = z`.
pub fn z_tensor(y: Vec3, z: Vec3, params: &FlowParams, spec: &QuadSpec) -> Result<ZValue> {
    z_derivative(y, z, params, MultiIndex::ZERO, MultiIndex::ZERO, spec)
}

/// Derivatives `∂_y^α ∂_z^β 𝔷(y,z)` for `|α| ≤ 1`, `|β| ≤ 1`.
pub fn z_derivative(
    y: Vec3,
    z: Vec3,
    params: &FlowParams,
    alpha: MultiIndex,
    beta: MultiIndex,
    spec: &QuadSpec,
) -> Result<ZValue> {
    spec.validate()?;
    if alpha.order() > 1 || beta.order() > 1 {
        return Err(Error::UnsupportedOrder(format!(
            "kernel time integrals support |alpha| <= 1 and |beta| <= 1, \
             got alpha = {alpha}, beta = {beta}"
        )));
    }
    if separation(y, z) == 0.0 {
        return Err(Error::Singular(format!(
            "the kernel integral diverges on the diagonal y = z = {y:?}"
        )));
    }
    let peaks = locate_gauge_minima(y, z, params);
    let f = |t: f64| -> [f64; 9] {
        flatten(gamma_derivative(y, z, t, params, alpha, beta).unwrap_or(NAN_MAT))
    };
    let (value, err, calls) = integrate(&f, &peaks, spec, "kernel time integral")?;
    Ok(ZValue {
        value: unflatten(value),
        error_estimate: max_abs(&err),
        evaluations: calls,
    })
}

/// The differenced kernel `∂_x^α[𝔷(x,y) − 𝔷(x,0)]`, evaluated as a single
/// time integral so the far-field cancellation between the two terms is
/// performed pointwise in `t`, before any quadrature error enters.
///
/// `x` is the observation point, `y` the source point; `y = 0` returns an
/// exact zero without spending evaluations.
pub fn z_difference(
    x: Vec3,
    y: Vec3,
    params: &FlowParams,
    alpha: MultiIndex,
    spec: &QuadSpec,
) -> Result<ZValue> {
    spec.validate()?;
    if alpha.order() > 1 {
        return Err(Error::UnsupportedOrder(format!(
            "kernel time integrals support |alpha| <= 1, got alpha = {alpha}"
        )));
    }
    if norm_sq(y) == 0.0 {
        return Ok(ZValue {
            value: ZERO_MAT,
            error_estimate: 0.0,
            evaluations: 0,
        });
    }
    if separation(x, y) == 0.0 || norm_sq(x) == 0.0 {
        return Err(Error::Singular(
            "the differenced kernel needs x distinct from both y and 0".into(),
        ));
    }
    let mut peaks = locate_gauge_minima(x, y, params);
    peaks.extend(locate_gauge_minima(x, [0.0; 3], params));
    peaks.sort_by(f64::total_cmp);
    peaks.dedup_by(|a, b| (*a - *b).abs() <= 0.05 * b.abs());
    let f = |t: f64| -> [f64; 9] {
        let at_y = gamma_derivative(x, y, t, params, alpha, MultiIndex::ZERO).unwrap_or(NAN_MAT);
        let at_0 =
            gamma_derivative(x, [0.0; 3], t, params, alpha, MultiIndex::ZERO).unwrap_or(NAN_MAT);
        let mut out = [0.0; 9];
        for j in 0..3 {
            for k in 0..3 {
                out[3 * j + k] = at_y[j][k] - at_0[j][k];
            }
        }
        out
    };
    let (value, err, calls) = integrate(&f, &peaks, spec, "differenced kernel time integral")?;
    Ok(ZValue {
        value: unflatten(value),
        error_estimate: max_abs(&err),
        // Each node evaluates the kernel at both source points.
        evaluations: calls * 2,
    })
}

/// The scalar majorant integral `∫₀^∞ (|w(t)|² + t)^{-ν} dt` with
/// `w(t) = y − τt e₁ − e^{−tΩ} z`; this is the quantity the decay lemmas
/// bound. Requires `ν > 1` (the `t`-term alone makes the tail diverge
/// otherwise) and `y ≠ z` (the gauge vanishes at `t = 0` there).
pub fn majorant_integral(
    y: Vec3,
    z: Vec3,
    params: &FlowParams,
    nu: f64,
    spec: &QuadSpec,
) -> Result<ScalarValue> {
    spec.validate()?;
    if !nu.is_finite() || nu <= 1.0 {
        return Err(Error::domain(format!(
            "majorant integral requires nu > 1, got {nu}"
        )));
    }
    if separation(y, z) == 0.0 {
        return Err(Error::Singular(
            "majorant integral diverges on the diagonal y = z".into(),
        ));
    }
    let peaks = locate_gauge_minima(y, z, params);
    let f = |t: f64| -> [f64; 1] { [gauge(y, z, params, t).powf(-nu)] };
    let (value, err, calls) = integrate(&f, &peaks, spec, "majorant time integral")?;
    Ok(ScalarValue {
        value: value[0],
        error_estimate: err[0],
        evaluations: calls,
    })
}

const NAN_MAT: Mat3 = [[f64::NAN; 3]; 3];

fn flatten(m: Mat3) -> [f64; 9] {
    let mut out = [0.0; 9];
    for j in 0..3 {
        for k in 0..3 {
            out[3 * j + k] = m[j][k];
        }
    }
    out
}

fn unflatten(v: [f64; 9]) -> Mat3 {
    let mut out = ZERO_MAT;
    for j in 0..3 {
        for k in 0..3 {
            out[j][k] = v[3 * j + k];
        }
    }
    out
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, &x| acc.max(x.abs()))
}

/// The gauge `g(t) = |y − τt e₁ − e^{−tΩ} z|² + t` whose interior minima
/// mark wake crossings.
fn gauge(y: Vec3, z: Vec3, params: &FlowParams, t: f64) -> f64 {
    let m = rotation(t, params, Spin::Minus);
    let w = [
        y[0] - params.tau() * t - (m[0][0] * z[0] + m[0][1] * z[1] + m[0][2] * z[2]),
        y[1] - (m[1][0] * z[0] + m[1][1] * z[1] + m[1][2] * z[2]),
        y[2] - (m[2][0] * z[0] + m[2][1] * z[1] + m[2][2] * z[2]),
    ];
    norm_sq(w) + t
}

/// Interior minima of the gauge on `t ∈ [1e-8, 1e8]`, located on a 160-point
/// log grid and sharpened by golden section in `ln t`; at most the eight
/// deepest are kept.
pub(crate) fn locate_gauge_minima(y: Vec3, z: Vec3, params: &FlowParams) -> Vec<f64> {
    const N: usize = 160;
    let lo = (1e-8f64).ln();
    let hi = (1e8f64).ln();
    let step = (hi - lo) / (N - 1) as f64;
    let mut vals = [0.0f64; N];
    for (i, v) in vals.iter_mut().enumerate() {
        *v = gauge(y, z, params, (lo + step * i as f64).exp());
    }
    let mut minima: Vec<(f64, f64)> = Vec::new(); // (gauge value, t)
    for i in 1..N - 1 {
        if vals[i] <= vals[i - 1] && vals[i] <= vals[i + 1] {
            let t = golden_min(
                |lam: f64| gauge(y, z, params, lam.exp()),
                lo + step * (i - 1) as f64,
                lo + step * (i + 1) as f64,
            )
            .exp();
            minima.push((gauge(y, z, params, t), t));
        }
    }
    minima.sort_by(|a, b| a.0.total_cmp(&b.0));
    minima.truncate(8);
    let mut peaks: Vec<f64> = minima.into_iter().map(|(_, t)| t).collect();
    peaks.sort_by(f64::total_cmp);
    peaks.dedup_by(|a, b| (*a - *b).abs() <= 0.05 * b.abs());
    peaks
}

/// Golden-section minimizer on `[a,b]`; returns the abscissa to absolute
/// tolerance 1e-3 (enough to place a panel boundary, not more).
fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > 1e-3 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

#[derive(Clone, Copy)]
enum SegmentMap {
    /// `t = split·s²` on `s ∈ [0,1]`.
    Square { split: f64 },
    /// `t = split/s` on `s ∈ (0,1]`.
    Reciprocal { split: f64 },
    /// `t = split·e^{1/s−1}` on `s ∈ (0,1]`.
    ExpTail { split: f64 },
}

impl SegmentMap {
    /// Physical time and absolute jacobian at map coordinate `s ∈ (0,1)`.
    fn point(&self, s: f64) -> (f64, f64) {
        match *self {
            SegmentMap::Square { split } => (split * s * s, 2.0 * split * s),
            SegmentMap::Reciprocal { split } => (split / s, split / (s * s)),
            SegmentMap::ExpTail { split } => {
                let t = split * (1.0 / s - 1.0).exp();
                (t, t / (s * s))
            }
        }
    }

    /// Map coordinate of a physical time, if it lies in this segment.
    fn locate(&self, t: f64) -> Option<f64> {
        let s = match *self {
            SegmentMap::Square { split } => {
                if t >= split {
                    return None;
                }
                (t / split).sqrt()
            }
            SegmentMap::Reciprocal { split } => {
                if t < split {
                    return None;
                }
                split / t
            }
            SegmentMap::ExpTail { split } => {
                if t < split {
                    return None;
                }
                1.0 / (1.0 + (t / split).ln())
            }
        };
        (1e-6..=1.0 - 1e-6).contains(&s).then_some(s)
    }
}

/// Global cap on live panels per integral; generously above what any
/// converging case needs (typical runs use well under 200).
const MAX_PANELS: usize = 10_000;

struct Panel<const D: usize> {
    seg: usize,
    lo: f64,
    hi: f64,
    depth: u32,
    est: [f64; D],
    err: [f64; D],
    max_err: f64,
}

/// Core adaptive loop shared by every time integral in the crate.
///
/// `f` is the physical integrand; returns (value, per-component error,
/// number of `f` calls). Errors with [`Error::Accuracy`] when the panel
/// budget is exhausted before the tolerance is met, carrying the best
/// estimate so callers can still inspect it.
pub(crate) fn integrate<const D: usize>(
    f: &dyn Fn(f64) -> [f64; D],
    peaks: &[f64],
    spec: &QuadSpec,
    context: &str,
) -> Result<([f64; D], [f64; D], u64)> {
    let tail = match spec.tail_map {
        TailMap::Reciprocal => SegmentMap::Reciprocal { split: spec.split },
        TailMap::Exponential => SegmentMap::ExpTail { split: spec.split },
    };
    let segments = [SegmentMap::Square { split: spec.split }, tail];

    let calls = std::cell::Cell::new(0u64);
    let sample = |seg: &SegmentMap, s: f64| -> [f64; D] {
        calls.set(calls.get() + 1);
        let (t, jac) = seg.point(s);
        if !t.is_finite() || t > 1e140 {
            // |Γ| ≤ t^{-3/2} there, so the remaining tail is below 1e-209;
            // returning zero also keeps |w(t)|² from overflowing.
            return [0.0; D];
        }
        let mut v = f(t);
        for c in v.iter_mut() {
            *c *= jac;
        }
        v
    };

    let mut panels: Vec<Panel<D>> = Vec::new();
    for (idx, seg) in segments.iter().enumerate() {
        let mut cuts = vec![0.0, 1.0];
        for &t in peaks {
            if let Some(s) = seg.locate(t) {
                cuts.push(s);
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-4);
        for pair in cuts.windows(2) {
            let (est, err) = eval_panel(&|s| sample(seg, s), pair[0], pair[1]);
            let max_err = max_abs(&err);
            panels.push(Panel {
                seg: idx,
                lo: pair[0],
                hi: pair[1],
                depth: 0,
                est,
                err,
                max_err,
            });
        }
    }

    loop {
        let mut total = [0.0; D];
        let mut total_err = [0.0; D];
        for p in &panels {
            for c in 0..D {
                total[c] += p.est[c];
                total_err[c] += p.err[c];
            }
        }
        let converged = (0..D).all(|c| {
            total_err[c] <= spec.abs_tol.max(spec.rel_tol * total[c].abs())
        });
        if converged {
            return Ok((total, total_err, calls.get()));
        }

        // Bisect the refinable panel with the worst error; ties break
        // toward the smaller left endpoint, then the earlier segment, so
        // the refinement path is deterministic. A hard panel budget keeps
        // hopeless integrands (NaN regions, tolerance below rounding)
        // from refining without end.
        let refinable = panels.len() < MAX_PANELS;
        let mut worst: Option<usize> = None;
        for (i, p) in panels.iter().enumerate() {
            if !refinable || p.depth >= spec.max_subdivisions {
                continue;
            }
            let better = match worst {
                None => true,
                Some(w) => {
                    let q = &panels[w];
                    match p.max_err.total_cmp(&q.max_err) {
                        std::cmp::Ordering::Greater => true,
                        std::cmp::Ordering::Less => false,
                        std::cmp::Ordering::Equal => {
                            (p.lo, p.seg) < (q.lo, q.seg)
                        }
                    }
                }
            };
            if better {
                worst = Some(i);
            }
        }
        let Some(w) = worst else {
            let worst_error = max_abs(&total_err);
            return Err(Error::Accuracy {
                context: context.to_string(),
                estimate: total.to_vec(),
                error: total_err.to_vec(),
                worst_error,
            });
        };

        let Panel {
            seg, lo, hi, depth, ..
        } = panels[w];
        let seg_map = &segments[seg];
        let mid = 0.5 * (lo + hi);
        let (est_l, err_l) = eval_panel(&|s| sample(seg_map, s), lo, mid);
        let (est_r, err_r) = eval_panel(&|s| sample(seg_map, s), mid, hi);
        panels[w] = Panel {
            seg,
            lo,
            hi: mid,
            depth: depth + 1,
            est: est_l,
            max_err: max_abs(&err_l),
            err: err_l,
        };
        panels.push(Panel {
            seg,
            lo: mid,
            hi,
            depth: depth + 1,
            est: est_r,
            max_err: max_abs(&err_r),
            err: err_r,
        });
    }
}

/// One Gauss–Kronrod 7–15 pass over `[lo,hi]` with per-component QUADPACK
/// error rescaling.
fn eval_panel<const D: usize>(
    g: &dyn Fn(f64) -> [f64; D],
    lo: f64,
    hi: f64,
) -> ([f64; D], [f64; D]) {
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);

    let fc = g(mid);
    let mut resk = [0.0; D];
    let mut resg = [0.0; D];
    let mut resabs = [0.0; D];
    for c in 0..D {
        resk[c] = WGK[7] * fc[c];
        resg[c] = WG[3] * fc[c];
        resabs[c] = WGK[7] * fc[c].abs();
    }
    let mut fv = [[[0.0; D]; 2]; 7];
    for i in 0..7 {
        let fp = g(mid + half * XGK[i]);
        let fm = g(mid - half * XGK[i]);
        for c in 0..D {
            resk[c] += WGK[i] * (fp[c] + fm[c]);
            resabs[c] += WGK[i] * (fp[c].abs() + fm[c].abs());
        }
        if i % 2 == 1 {
            let wg = WG[(i - 1) / 2];
            for c in 0..D {
                resg[c] += wg * (fp[c] + fm[c]);
            }
        }
        fv[i] = [fp, fm];
    }

    let mut est = [0.0; D];
    let mut err = [0.0; D];
    for c in 0..D {
        let reskh = 0.5 * resk[c];
        let mut resasc = WGK[7] * (fc[c] - reskh).abs();
        for (i, pair) in fv.iter().enumerate() {
            resasc += WGK[i] * ((pair[0][c] - reskh).abs() + (pair[1][c] - reskh).abs());
        }
        est[c] = resk[c] * half;
        err[c] = rescale_error(
            ((resk[c] - resg[c]) * half).abs(),
            resabs[c] * half,
            resasc * half,
        );
    }
    (est, err)
}

/// QUADPACK's empirical sharpening of the raw Kronrod−Gauss difference.
fn rescale_error(raw: f64, resabs: f64, resasc: f64) -> f64 {
    let mut e = raw;
    if resasc != 0.0 && e != 0.0 {
        let scale = (200.0 * e / resasc).powf(1.5);
        e = if scale < 1.0 { resasc * scale } else { resasc };
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        e = e.max(50.0 * f64::EPSILON * resabs);
    }
    e
}
