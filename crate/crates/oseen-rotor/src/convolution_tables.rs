//! Weighted-convolution calculus for wake weights in three dimensions.
//!
//! Convolutions `η^{−a}_{−b} ∗ η^{−c}_{−d}` of the anisotropic weights
//! `η^{−α}_{−β}(v) = (1+|v|)^{−α} s(v)^{−β}` (with `s = s₁` the wake
//! weight) are again bounded by a weight `η^{−e}_{−f}` times a possible
//! logarithm. The optimal `(e, f)` arise as minima over sixteen regional
//! candidates; after collapsing duplicates there remain ten candidate
//! expressions for `e` and four for `e + f`, all built from `a, b, c, d`
//! and the clipped exponents `b* = min(1, b)`, `d* = min(1, d)`.
//!
//! [`predict_exponents`] evaluates those candidate lists verbatim;
//! [`gamma_case`] specializes the resulting decay to the one-parameter
//! family used by the velocity estimates; [`convolve_numeric`] measures
//! the convolution by stratified importance-sampled Monte Carlo so the
//! predicted envelopes can be checked against actual integrals.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{add, norm, scale, sub, Vec3};
use crate::wake_geometry::EtaWeight;

/// Equality tolerance for the boundary predicates; exponents arrive as
/// exact rationals in practice, so ties are sharp.
const EXP_TOL: f64 = 1e-12;

/// Exponent pair for each factor of the convolution `η^{−a}_{−b} ∗ η^{−c}_{−d}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConvInput")]
pub struct ConvInput {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    /// Space dimension; the candidate tables are stated for `n = 3` only.
    pub n: u8,
}

#[derive(Deserialize)]
struct RawConvInput {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    #[serde(default = "default_dim")]
    n: u8,
}

fn default_dim() -> u8 {
    3
}

impl TryFrom<RawConvInput> for ConvInput {
    type Error = Error;
    fn try_from(raw: RawConvInput) -> Result<Self> {
        if raw.n != 3 {
            return Err(Error::domain(format!(
                "convolution tables are stated for dimension 3, got {}",
                raw.n
            )));
        }
        for (name, v) in [("a", raw.a), ("b", raw.b), ("c", raw.c), ("d", raw.d)] {
            if !v.is_finite() {
                return Err(Error::domain(format!("exponent {name} must be finite, got {v}")));
            }
        }
        Ok(ConvInput {
            a: raw.a,
            b: raw.b,
            c: raw.c,
            d: raw.d,
            n: 3,
        })
    }
}

impl ConvInput {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        RawConvInput { a, b, c, d, n: 3 }.try_into()
    }

    /// The convolution is a bounded function iff both clipped sums beat the
    /// dimension: `a + b* + c + d > 3` and `a + b + c + d* > 3`.
    pub fn is_integrable(&self) -> bool {
        let bs = self.b.min(1.0);
        let ds = self.d.min(1.0);
        self.a + bs + self.c + self.d > 3.0 && self.a + self.b + self.c + ds > 3.0
    }
}

/// Predicted envelope `η^{−e}_{−f} ln^{log_power}` for a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvExponents {
    pub e: f64,
    pub f: f64,
    /// Power of the `ln(2+|x|)` factor: 0, 1, or 2.
    pub log_power: u8,
    /// Index of the region whose candidate attains the minimum for `e`
    /// (first winner on ties).
    pub contributing_region: u8,
}

/// Region index each `e`-candidate originates from. Regions 4, 9, 10 and
/// 13–15 defer to the listed ones in the source tables and contribute no
/// new expressions.
const CANDIDATE_REGION: [u8; 10] = [0, 1, 2, 3, 5, 6, 7, 8, 11, 12];

fn e_candidates(a: f64, b: f64, c: f64, d: f64) -> [f64; 10] {
    let bs = b.min(1.0);
    let ds = d.min(1.0);
    let min2 = |p: f64, q: f64| p.min(q);
    let min3 = |p: f64, q: f64, r: f64| p.min(q).min(r);
    [
        c + 0.5 * min2(0.0, a + bs - 3.0),
        a + 0.5 * min2(0.0, c + ds - 3.0),
        a + c - 2.0 + 0.5 * min3(0.0, 1.0 + bs - a, 1.0 + d - c),
        a + c - 2.0 + 0.5 * min3(0.0, 1.0 + b - a, 1.0 + ds - c),
        a + c + d - 2.0 + 0.5 * min2(0.0, 1.0 - c - d),
        a + c + b - 2.0 + 0.5 * min2(0.0, 1.0 - a - b),
        a + b + c + d - 3.0 + 0.5 * min2(0.0, 3.0 - 2.0 * b - c - d),
        a + b + c + d - 3.0 + 0.5 * min2(0.0, 3.0 - a - b - 2.0 * d),
        a + bs + c + d - 3.0,
        a + b + c + ds - 3.0,
    ]
}

fn ef_candidates(a: f64, b: f64, c: f64, d: f64) -> [f64; 4] {
    let bs = b.min(1.0);
    let ds = d.min(1.0);
    [
        c + d + 0.0f64.min(a + bs - 3.0),
        a + b + 0.0f64.min(c + ds - 3.0),
        a + bs + c + d - 3.0,
        a + b + c + ds - 3.0,
    ]
}

/// Logarithm power from the tables' boundary cases. The two-log cases are
/// transcribed exactly as printed (they are not symmetric under the factor
/// swap, unlike the `e` and `e+f` candidate lists).
fn log_power(a: f64, b: f64, c: f64, d: f64) -> u8 {
    let eq = |x: f64, y: f64| (x - y).abs() <= EXP_TOL;
    let bs = b.min(1.0);
    let ds = d.min(1.0);
    let b_one = eq(b, 1.0);
    let d_one = eq(d, 1.0);
    if (b_one && eq(a, 2.0))
        || (d_one && eq(c, 2.0))
        || (b_one && eq(d, -1.0))
        || (d_one && eq(1.0 + b - a, 0.0))
    {
        return 2;
    }
    if b_one || d_one {
        return 1;
    }
    if eq(a + bs, 3.0) || eq(c + ds, 3.0) {
        return 1;
    }
    if eq((1.0 + bs - a).min(1.0 + d - c), 0.0) || eq((1.0 + b - a).min(1.0 + ds - c), 0.0) {
        return 1;
    }
    0
}

/// Optimal envelope exponents for `η^{−a}_{−b} ∗ η^{−c}_{−d}` in ℝ³:
/// `e` is the minimum of the ten regional candidates, `e + f` the minimum
/// of its four candidates, and the log power comes from the tables'
/// boundary equalities.
pub fn predict_exponents(input: &ConvInput) -> ConvExponents {
    let ConvInput { a, b, c, d, .. } = *input;
    let es = e_candidates(a, b, c, d);
    let mut e = es[0];
    let mut winner = 0;
    for (i, cand) in es.iter().enumerate().skip(1) {
        if *cand < e {
            e = *cand;
            winner = i;
        }
    }
    let ef = ef_candidates(a, b, c, d)
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    ConvExponents {
        e,
        f: ef - e,
        log_power: log_power(a, b, c, d),
        contributing_region: CANDIDATE_REGION[winner],
    }
}

/// Decay case `(1+|x|)^{−c} s(x)^{−d} ln^k(2+|x|)` as a function of the
/// force-decay parameter `γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaCase {
    pub gamma: f64,
    pub c_out: f64,
    pub d_out: f64,
    pub k_out: u8,
}

/// Case table: `c = γ − 1/2` for `γ ∈ (1/4, 2]`, else `3/2`;
/// `d = γ` for `γ ∈ (1/4, 3/2]`, else `3/2`; `k = 1` iff `γ = 2`.
pub fn gamma_case(gamma: f64) -> Result<GammaCase> {
    if !(gamma.is_finite() && gamma > 0.25) {
        return Err(Error::domain(format!(
            "decay case table requires gamma > 1/4, got {gamma}"
        )));
    }
    let c_out = if gamma <= 2.0 { gamma - 0.5 } else { 1.5 };
    let d_out = if gamma <= 1.5 { gamma } else { 1.5 };
    let k_out = u8::from((gamma - 2.0).abs() <= EXP_TOL);
    Ok(GammaCase {
        gamma,
        c_out,
        d_out,
        k_out,
    })
}

/// Monte-Carlo estimate of a weighted convolution at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvEstimate {
    pub value: f64,
    pub std_error: f64,
    pub evaluations: u64,
}

/// Stratum mixture weights: ball at the origin, ball at `x`, wake behind
/// the origin, wake behind `x`, reciprocal-mapped far field.
const STRATUM_WEIGHTS: [f64; 5] = [0.2, 0.2, 0.175, 0.175, 0.25];
const BALL_RADIUS: f64 = 2.0;
const WAKE_XI_MIN: f64 = 2.0;
/// Transverse variance per unit downstream distance; covers the wake
/// region `s(y) ≲ 10` where the weights lose their decay.
const WAKE_SIGMA2_RATE: f64 = 4.5;
const CHUNK: u64 = 1024;

/// `∫ η^{−a}_{−b}(x−y) η^{−c}_{−d}(y) dy` by stratified importance
/// sampling over the five regions where the integrand concentrates.
///
/// Streams are counter-based per (stratum, chunk), so the result depends
/// only on `(input, x, budget, seed)` — never on thread count.
pub fn convolve_numeric(
    input: &ConvInput,
    x: Vec3,
    budget: u64,
    seed: u64,
) -> Result<ConvEstimate> {
    if !input.is_integrable() {
        return Err(Error::DivergentIntegral(format!(
            "convolution with (a,b,c,d)=({},{},{},{}) fails a+b*+c+d>3 and a+b+c+d*>3",
            input.a, input.b, input.c, input.d
        )));
    }
    if budget < 100 {
        return Err(Error::domain(format!(
            "sample budget {budget} is too small for a variance estimate"
        )));
    }

    let far_radius = 2.0 * BALL_RADIUS.max(norm(x)) + 1.0;
    let first = EtaWeight::new(-input.a, -input.b);
    let second = EtaWeight::new(-input.c, -input.d);
    let integrand = move |y: Vec3| first.eval(sub(x, y)) * second.eval(y);

    // Mixture density over all five strata; every sampled point carries
    // positive density for its own stratum.
    let mix_density = move |y: Vec3| -> f64 {
        let mut p = STRATUM_WEIGHTS[0] * ball_density(y, [0.0; 3])
            + STRATUM_WEIGHTS[1] * ball_density(y, x)
            + STRATUM_WEIGHTS[2] * wake_density(y)
            + STRATUM_WEIGHTS[3] * wake_density(sub(x, y));
        let r = norm(y);
        if r >= far_radius {
            p += STRATUM_WEIGHTS[4] * far_radius / (4.0 * PI * r.powi(4));
        }
        p
    };

    // Deterministic per-stratum sample counts that exhaust the budget.
    let mut counts = [0u64; 5];
    let mut assigned = 0u64;
    for i in 0..4 {
        counts[i] = (STRATUM_WEIGHTS[i] * budget as f64).round() as u64;
        assigned += counts[i];
    }
    counts[4] = budget - assigned;

    // (stratum, chunk index, chunk length) work items in a fixed order.
    let mut jobs = Vec::new();
    for (stratum, &n) in counts.iter().enumerate() {
        let mut done = 0;
        let mut chunk = 0u64;
        while done < n {
            let len = CHUNK.min(n - done);
            jobs.push((stratum, chunk, len));
            done += len;
            chunk += 1;
        }
    }

    let partials: Vec<(usize, f64, f64, u64)> = jobs
        .par_iter()
        .map(|&(stratum, chunk, len)| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, stratum as u64, chunk));
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..len {
                let y = match stratum {
                    0 => sample_ball_point(&mut rng, [0.0; 3]),
                    1 => sample_ball_point(&mut rng, x),
                    2 => sample_wake_point(&mut rng),
                    3 => sub(x, sample_wake_point(&mut rng)),
                    _ => sample_far_point(&mut rng, far_radius),
                };
                let g = integrand(y) / mix_density(y);
                sum += g;
                sum_sq += g * g;
            }
            (stratum, sum, sum_sq, len)
        })
        .collect();

    // Sequential reduction in job order keeps the estimate bit-stable.
    let mut sums = [0.0f64; 5];
    let mut sq = [0.0f64; 5];
    for (stratum, s, s2, _) in &partials {
        sums[*stratum] += s;
        sq[*stratum] += s2;
    }

    let mut value = 0.0;
    let mut variance = 0.0;
    for i in 0..5 {
        let n = counts[i] as f64;
        let mean = sums[i] / n;
        let var = ((sq[i] - n * mean * mean) / (n - 1.0)).max(0.0);
        value += STRATUM_WEIGHTS[i] * mean;
        variance += STRATUM_WEIGHTS[i] * STRATUM_WEIGHTS[i] * var / n;
    }
    Ok(ConvEstimate {
        value,
        std_error: variance.sqrt(),
        evaluations: budget,
    })
}

/// SplitMix64-derived stream seed for one (stratum, chunk) pair.
fn stream_seed(seed: u64, stratum: u64, chunk: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stratum.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(chunk.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn ball_density(y: Vec3, center: Vec3) -> f64 {
    if norm(sub(y, center)) <= BALL_RADIUS {
        3.0 / (4.0 * PI * BALL_RADIUS.powi(3))
    } else {
        0.0
    }
}

/// Density of the wake stratum in the frame of its source point: downstream
/// coordinate with tail `ξ_min/ξ₁²`, Gaussian transverse profile whose
/// variance grows linearly with the downstream distance.
fn wake_density(w: Vec3) -> f64 {
    if w[0] < WAKE_XI_MIN {
        return 0.0;
    }
    let sigma2 = WAKE_SIGMA2_RATE * w[0];
    let q = (w[1] * w[1] + w[2] * w[2]) / (2.0 * sigma2);
    WAKE_XI_MIN / (w[0] * w[0]) * (-q).exp() / (2.0 * PI * sigma2)
}

fn sample_ball_point(rng: &mut ChaCha8Rng, center: Vec3) -> Vec3 {
    loop {
        let p = [
            rng.gen_range(-BALL_RADIUS..BALL_RADIUS),
            rng.gen_range(-BALL_RADIUS..BALL_RADIUS),
            rng.gen_range(-BALL_RADIUS..BALL_RADIUS),
        ];
        if norm(p) <= BALL_RADIUS {
            return add(center, p);
        }
    }
}

fn sample_wake_point(rng: &mut ChaCha8Rng) -> Vec3 {
    let v = 1.0 - rng.gen_range(0.0..1.0); // (0, 1]
    let xi = WAKE_XI_MIN / v;
    let sigma = (WAKE_SIGMA2_RATE * xi).sqrt();
    let (g1, g2) = gaussian_pair(rng);
    [xi, sigma * g1, sigma * g2]
}

fn sample_far_point(rng: &mut ChaCha8Rng, r0: f64) -> Vec3 {
    let v = 1.0 - rng.gen_range(0.0..1.0); // (0, 1]
    let r = r0 / v;
    loop {
        let p = [
            rng.gen_range(-1.0f64..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let n = norm(p);
        if n > 1e-3 && n <= 1.0 {
            return scale(p, r / n);
        }
    }
}

fn gaussian_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u1: f64 = 1.0 - rng.gen_range(0.0..1.0); // (0, 1], keeps ln finite
    let u2: f64 = rng.gen_range(0.0..1.0);
    let radius = (-2.0 * u1.ln()).sqrt();
    let angle = 2.0 * PI * u2;
    (radius * angle.cos(), radius * angle.sin())
}
