//! Point-wise evaluation commands: `eval` (kernel tables at given points),
//! `scan-decay` (ray scans with slope fits), and the convolution utilities
//! `conv-exponents` / `conv-verify`.

use std::path::PathBuf;

use serde::Serialize;

use oseen_rotor::convolution_tables::{predict_exponents, ConvExponents, ConvInput};
use oseen_rotor::expansion::{leading_term, ExpansionCoeffs};
use oseen_rotor::linalg::{frob_norm, norm, scale, Mat3, Vec3};
use oseen_rotor::oseen_kernel::{gamma_kernel, MultiIndex};
use oseen_rotor::time_quadrature::z_derivative;
use oseen_rotor::wake_geometry::{fit_decay_with_envelope, s_tau, DecayReport};

use crate::config::{with_pool, CommonOpts, RunConfig};
use crate::failure::{Failure, EXIT_OK};
use crate::output::{emit, fmt_f64, CsvTable};
use crate::suites::{conv_task, report_verdicts};

// ---------------------------------------------------------------------------
// Shared flag parsing

/// Parse `"a,b,c"` into a vector.
pub fn parse_vec3(s: &str) -> Result<Vec3, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated numbers, got {s:?}"));
    }
    let mut out = [0.0; 3];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse::<f64>()
            .map_err(|e| format!("bad coordinate {part:?}: {e}"))?;
        if !slot.is_finite() {
            return Err(format!("coordinates must be finite, got {part:?}"));
        }
    }
    Ok(out)
}

/// Parse `"a1,a2,a3"` (small nonnegative integers) into a derivative
/// multi-index.
pub fn parse_multi_index(s: &str) -> Result<MultiIndex, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated orders, got {s:?}"));
    }
    let mut out = [0u8; 3];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse::<u8>()
            .map_err(|e| format!("bad derivative order {part:?}: {e}"))?;
    }
    Ok(MultiIndex::new(out[0], out[1], out[2]))
}

/// Parse `"r0:r1:n"` into `n` log-spaced radii from `r0` to `r1`.
pub fn parse_radii(s: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("expected r0:r1:n, got {s:?}"));
    }
    let r0: f64 = parts[0].trim().parse().map_err(|e| format!("bad r0: {e}"))?;
    let r1: f64 = parts[1].trim().parse().map_err(|e| format!("bad r1: {e}"))?;
    let n: usize = parts[2].trim().parse().map_err(|e| format!("bad n: {e}"))?;
    if !(r0.is_finite() && r1.is_finite() && 0.0 < r0 && r0 < r1) {
        return Err(format!("radii must satisfy 0 < r0 < r1, got {r0}:{r1}"));
    }
    if n < 2 {
        return Err("at least two radii are needed".to_string());
    }
    Ok((0..n)
        .map(|i| r0 * (r1 / r0).powf(i as f64 / (n - 1) as f64))
        .collect())
}

/// A scan direction: one of the named rays or an explicit vector.
pub fn parse_ray(s: &str) -> Result<(String, Vec3), String> {
    match s.trim() {
        "downstream" => Ok(("downstream".into(), [1.0, 0.0, 0.0])),
        "transverse" => Ok(("transverse".into(), [0.0, 1.0, 0.0])),
        "upstream" => Ok(("upstream".into(), [-1.0, 0.0, 0.0])),
        other => {
            let v = parse_vec3(other)?;
            if norm(v) == 0.0 {
                return Err("ray direction must be nonzero".to_string());
            }
            Ok((other.to_string(), v))
        }
    }
}

/// Parse a comma-separated list of named rays (`downstream,transverse,...`).
pub fn parse_ray_list(s: &str) -> Result<Vec<(String, Vec3)>, String> {
    s.split(',')
        .filter(|part| !part.trim().is_empty())
        .map(parse_ray)
        .collect()
}

// ---------------------------------------------------------------------------
// eval

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalKind {
    /// The rotating kernel Γ(y, z, t) at a fixed time (closed form).
    Kernel,
    /// The time-integrated kernel 𝔷(y, z).
    Z,
    /// Derivatives ∂_y^α ∂_z^β 𝔷(y, z).
    ZDeriv,
    /// The leading far-field velocity profile for given coefficients.
    Leading,
}

impl EvalKind {
    fn name(self) -> &'static str {
        match self {
            EvalKind::Kernel => "kernel",
            EvalKind::Z => "z",
            EvalKind::ZDeriv => "z-deriv",
            EvalKind::Leading => "leading",
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    /// What to evaluate.
    #[arg(value_enum)]
    pub kind: EvalKind,

    /// Observation point `x1,x2,x3`; repeatable.
    #[arg(long = "point", value_parser = parse_vec3, allow_hyphen_values = true)]
    pub points: Vec<Vec3>,

    /// Source point `y1,y2,y3`; repeatable (one entry applies to every
    /// observation point). Defaults to the origin.
    #[arg(long = "source", value_parser = parse_vec3, allow_hyphen_values = true)]
    pub sources: Vec<Vec3>,

    /// CSV file with columns x1,x2,x3 and optionally y1,y2,y3.
    #[arg(long, value_name = "FILE")]
    pub points_file: Option<PathBuf>,

    /// Evaluation time for `kernel` (must be positive).
    #[arg(long)]
    pub t: Option<f64>,

    /// Observation-derivative multi-index `a1,a2,a3` for `z-deriv` /
    /// `leading`.
    #[arg(long, value_parser = parse_multi_index)]
    pub alpha: Option<MultiIndex>,

    /// Source-derivative multi-index `b1,b2,b3` for `z-deriv`.
    #[arg(long, value_parser = parse_multi_index)]
    pub beta: Option<MultiIndex>,

    /// Leading-term vector coefficients `β1,β2,β3` (for `leading`).
    #[arg(long = "beta-coeffs", value_parser = parse_vec3, allow_hyphen_values = true)]
    pub beta_coeffs: Option<Vec3>,

    /// Leading-term flux coefficient (for `leading`).
    #[arg(long)]
    pub flux: Option<f64>,
}

/// One evaluated record. `matrix` is used by the tensor-valued kinds and
/// `vector` by `leading`; exactly one of them is set.
#[derive(Serialize)]
struct EvalRecord {
    x: Vec3,
    #[serde(skip_serializing_if = "Option::is_none")]
    y: Option<Vec3>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<[u8; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<[u8; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    matrix: Option<Mat3>,
    #[serde(skip_serializing_if = "Option::is_none")]
    vector: Option<Vec3>,
    error_estimate: f64,
    evaluations: u64,
}

#[derive(Serialize)]
struct EvalReport<'a> {
    config: &'a RunConfig,
    version: &'static str,
    command: String,
    records: Vec<EvalRecord>,
}

fn multi_index_array(m: MultiIndex) -> [u8; 3] {
    [m.a1, m.a2, m.a3]
}

/// Load evaluation inputs from flags and the optional CSV file.
fn gather_inputs(args: &EvalArgs) -> Result<Vec<(Vec3, Vec3)>, Failure> {
    let mut inputs: Vec<(Vec3, Vec3)> = Vec::new();
    if !args.points.is_empty() {
        if args.sources.len() > 1 && args.sources.len() != args.points.len() {
            return Err(Failure::usage(format!(
                "{} sources for {} points; give one source, one per point, or none",
                args.sources.len(),
                args.points.len()
            )));
        }
        for (i, &x) in args.points.iter().enumerate() {
            let y = match args.sources.len() {
                0 => [0.0; 3],
                1 => args.sources[0],
                _ => args.sources[i],
            };
            inputs.push((x, y));
        }
    }
    if let Some(path) = &args.points_file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::eval(format!("cannot read {}: {e}", path.display())))?;
        inputs.extend(parse_points_csv(&text).map_err(|msg| {
            Failure::eval(format!("malformed points file {}: {msg}", path.display()))
        })?);
    }
    if inputs.is_empty() {
        return Err(Failure::usage(
            "no points given; use --point x1,x2,x3 or --points-file FILE",
        ));
    }
    Ok(inputs)
}

/// Parse a points CSV: header row naming x1,x2,x3 (and optionally
/// y1,y2,y3), then one row per point. Lines starting with `#` are
/// comments.
fn parse_points_csv(text: &str) -> Result<Vec<(Vec3, Vec3)>, String> {
    let mut rows = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = rows.next().ok_or("empty file")?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let col = |name: &str| names.iter().position(|n| *n == name);
    let xs = [col("x1"), col("x2"), col("x3")];
    if xs.iter().any(Option::is_none) {
        return Err("header must name columns x1,x2,x3".to_string());
    }
    let ys = [col("y1"), col("y2"), col("y3")];
    let has_y = ys.iter().all(Option::is_some);

    let mut out = Vec::new();
    for (line_no, line) in rows.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let grab = |idx: Option<usize>| -> Result<f64, String> {
            let idx = idx.expect("presence checked above");
            cells
                .get(idx)
                .ok_or(format!("row {} is short", line_no + 2))?
                .parse::<f64>()
                .map_err(|e| format!("row {}: {e}", line_no + 2))
        };
        let x = [grab(xs[0])?, grab(xs[1])?, grab(xs[2])?];
        let y = if has_y {
            [grab(ys[0])?, grab(ys[1])?, grab(ys[2])?]
        } else {
            [0.0; 3]
        };
        out.push((x, y));
    }
    Ok(out)
}

pub fn cmd_eval(common: &CommonOpts, args: &EvalArgs) -> Result<i32, Failure> {
    let cfg = common.resolve()?;
    let inputs = gather_inputs(args)?;
    let alpha = args.alpha.unwrap_or(MultiIndex::ZERO);
    let beta = args.beta.unwrap_or(MultiIndex::ZERO);

    // Kind-specific argument checks, before any work.
    if args.kind == EvalKind::Kernel && args.t.is_none() {
        return Err(Failure::usage("`eval kernel` requires --t TIME"));
    }
    let coeffs = ExpansionCoeffs {
        beta1: args.beta_coeffs.map_or(1.0, |b| b[0]),
        beta2: args.beta_coeffs.map_or(0.0, |b| b[1]),
        beta3: args.beta_coeffs.map_or(0.0, |b| b[2]),
        flux: args.flux.unwrap_or(0.0),
    };

    let kind = args.kind;
    let evaluate = |(index, &(x, y)): (usize, &(Vec3, Vec3))| -> Result<EvalRecord, Failure> {
        let label = format!("x={x:?}, y={y:?}");
        match kind {
            EvalKind::Kernel => {
                let t = args.t.expect("checked above");
                let m = gamma_kernel(x, y, t, &cfg.params)
                    .map_err(|e| Failure::for_record(e, index, &label))?;
                Ok(EvalRecord {
                    x,
                    y: Some(y),
                    t: Some(t),
                    alpha: None,
                    beta: None,
                    matrix: Some(m),
                    vector: None,
                    error_estimate: 0.0,
                    evaluations: 1,
                })
            }
            EvalKind::Z | EvalKind::ZDeriv => {
                let (a, b) = if kind == EvalKind::Z {
                    (MultiIndex::ZERO, MultiIndex::ZERO)
                } else {
                    (alpha, beta)
                };
                let zv = z_derivative(x, y, &cfg.params, a, b, &cfg.spec)
                    .map_err(|e| Failure::for_record(e, index, &label))?;
                Ok(EvalRecord {
                    x,
                    y: Some(y),
                    t: None,
                    alpha: (kind == EvalKind::ZDeriv).then(|| multi_index_array(a)),
                    beta: (kind == EvalKind::ZDeriv).then(|| multi_index_array(b)),
                    matrix: Some(zv.value),
                    vector: None,
                    error_estimate: zv.error_estimate,
                    evaluations: zv.evaluations,
                })
            }
            EvalKind::Leading => {
                let v = leading_term(x, alpha, &coeffs, &cfg.params, &cfg.spec)
                    .map_err(|e| Failure::for_record(e, index, &label))?;
                Ok(EvalRecord {
                    x,
                    y: None,
                    t: None,
                    alpha: Some(multi_index_array(alpha)),
                    beta: None,
                    matrix: None,
                    vector: Some(v.value),
                    error_estimate: v.error_estimate,
                    evaluations: v.evaluations,
                })
            }
        }
    };

    let results: Vec<Result<EvalRecord, Failure>> = with_pool(cfg.jobs, || {
        use rayon::prelude::*;
        inputs.par_iter().enumerate().map(evaluate).collect()
    });
    let mut records = Vec::with_capacity(results.len());
    for r in results {
        records.push(r?);
    }

    let command = format!("eval {}", kind.name());
    let report = EvalReport {
        config: &cfg,
        version: oseen_rotor::VERSION,
        command: command.clone(),
        records,
    };
    emit(&cfg, &report, || {
        let mut header: Vec<&str> = vec!["x1", "x2", "x3"];
        match kind {
            EvalKind::Kernel => header.extend(["y1", "y2", "y3", "t"]),
            EvalKind::Z => header.extend(["y1", "y2", "y3"]),
            EvalKind::ZDeriv => {
                header.extend(["y1", "y2", "y3", "a1", "a2", "a3", "b1", "b2", "b3"])
            }
            EvalKind::Leading => header.extend(["a1", "a2", "a3"]),
        }
        if kind == EvalKind::Leading {
            header.extend(["v1", "v2", "v3"]);
        } else {
            header.extend(["m11", "m12", "m13", "m21", "m22", "m23", "m31", "m32", "m33"]);
        }
        header.extend(["error_estimate", "evaluations"]);
        let mut table = CsvTable::new(&cfg, &command, &header)?;
        for rec in &report.records {
            let mut row: Vec<String> = rec.x.iter().map(|v| fmt_f64(*v)).collect();
            if let Some(y) = rec.y {
                row.extend(y.iter().map(|v| fmt_f64(*v)));
            }
            if let Some(t) = rec.t {
                row.push(fmt_f64(t));
            }
            if let Some(a) = rec.alpha {
                row.extend(a.iter().map(u8::to_string));
            }
            if let Some(b) = rec.beta {
                row.extend(b.iter().map(u8::to_string));
            }
            if let Some(m) = &rec.matrix {
                row.extend(m.iter().flatten().map(|v| fmt_f64(*v)));
            }
            if let Some(v) = rec.vector {
                row.extend(v.iter().map(|c| fmt_f64(*c)));
            }
            row.push(fmt_f64(rec.error_estimate));
            row.push(rec.evaluations.to_string());
            table.push_row(row);
        }
        Ok(table)
    })?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// scan-decay

#[derive(Debug, clap::Args)]
pub struct ScanArgs {
    /// Observation-derivative multi-index `a1,a2,a3`.
    #[arg(long, value_parser = parse_multi_index)]
    pub alpha: Option<MultiIndex>,

    /// Source-derivative multi-index `b1,b2,b3`.
    #[arg(long, value_parser = parse_multi_index)]
    pub beta: Option<MultiIndex>,

    /// Fixed source point.
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,0", allow_hyphen_values = true)]
    pub source: Vec3,

    /// Comma-separated ray names: `downstream`, `transverse`, `upstream`.
    #[arg(long, default_value = "downstream", allow_hyphen_values = true)]
    pub rays: String,

    /// Radii as `r0:r1:n` (log-spaced).
    #[arg(long, default_value = "5:100:8")]
    pub radii: String,
}

#[derive(Serialize)]
struct ScanReport<'a> {
    config: &'a RunConfig,
    version: &'static str,
    command: &'static str,
    alpha: [u8; 3],
    beta: [u8; 3],
    source: Vec3,
    reports: Vec<NamedReport>,
}

#[derive(Serialize)]
struct NamedReport {
    ray_name: String,
    #[serde(flatten)]
    report: DecayReport,
}

pub fn cmd_scan_decay(common: &CommonOpts, args: &ScanArgs) -> Result<i32, Failure> {
    let cfg = common.resolve()?;
    let rays = parse_ray_list(&args.rays).map_err(Failure::usage)?;
    let radii = parse_radii(&args.radii).map_err(Failure::usage)?;
    if rays.is_empty() {
        return Err(Failure::usage("--rays names no ray"));
    }
    let alpha = args.alpha.unwrap_or(MultiIndex::ZERO);
    let beta = args.beta.unwrap_or(MultiIndex::ZERO);
    let order = (alpha.order() + beta.order()) as f64;
    let decay_exp = -1.0 - order / 2.0;
    let tau = cfg.params.tau();
    let z = args.source;

    // All (ray, radius) cells evaluated into pre-allocated slots.
    let cells: Vec<(usize, f64)> = rays
        .iter()
        .enumerate()
        .flat_map(|(i, _)| radii.iter().map(move |&r| (i, r)))
        .collect();
    let results: Vec<Result<f64, Failure>> = with_pool(cfg.jobs, || {
        use rayon::prelude::*;
        cells
            .par_iter()
            .map(|&(ray_idx, r)| {
                let dir = rays[ray_idx].1;
                let x = scale(dir, r / norm(dir));
                let zv = z_derivative(x, z, &cfg.params, alpha, beta, &cfg.spec)
                    .map_err(|e| Failure::for_record(e, ray_idx, &format!("x={x:?}")))?;
                Ok(frob_norm(&zv.value))
            })
            .collect()
    });
    let mut flat = Vec::with_capacity(results.len());
    for r in results {
        flat.push(r?);
    }

    let mut reports = Vec::new();
    for (i, (name, dir)) in rays.iter().enumerate() {
        let ray_values = &flat[i * radii.len()..(i + 1) * radii.len()];
        let dir_unit = scale(*dir, 1.0 / norm(*dir));
        let report = fit_decay_with_envelope(
            *dir,
            &radii,
            ray_values,
            |r| (r * s_tau(scale(dir_unit, r), tau)).powf(decay_exp),
            &format!("(|y| s_tau(y))^({decay_exp})"),
        )
        .map_err(Failure::from)?;
        reports.push(NamedReport {
            ray_name: name.clone(),
            report,
        });
    }

    let report = ScanReport {
        config: &cfg,
        version: oseen_rotor::VERSION,
        command: "scan-decay",
        alpha: multi_index_array(alpha),
        beta: multi_index_array(beta),
        source: z,
        reports,
    };
    emit(&cfg, &report, || {
        let mut table = CsvTable::new(
            &cfg,
            "scan-decay",
            &["ray", "radius", "value", "fitted_slope", "envelope_ratio_max"],
        )?;
        for named in &report.reports {
            for (r, v) in named.report.radii.iter().zip(&named.report.values) {
                table.push_row(vec![
                    named.ray_name.clone(),
                    fmt_f64(*r),
                    fmt_f64(*v),
                    fmt_f64(named.report.fitted_slope),
                    fmt_f64(named.report.envelope_ratio_max),
                ]);
            }
        }
        Ok(table)
    })?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// conv-exponents / conv-verify

#[derive(Debug, clap::Args)]
pub struct ConvArgs {
    /// Decay exponent of the first factor in `(1+|x|)`.
    #[arg(long)]
    pub a: f64,
    /// Wake exponent of the first factor.
    #[arg(long)]
    pub b: f64,
    /// Decay exponent of the second factor in `(1+|x|)`.
    #[arg(long)]
    pub c: f64,
    /// Wake exponent of the second factor.
    #[arg(long)]
    pub d: f64,
}

#[derive(Debug, clap::Args)]
pub struct ConvVerifyArgs {
    #[command(flatten)]
    pub input: ConvArgs,

    /// Monte-Carlo sample budget per point (the refinement doubles it).
    #[arg(long, default_value_t = 120_000)]
    pub budget: u64,
}

#[derive(Serialize)]
struct ConvReport<'a> {
    config: &'a RunConfig,
    version: &'static str,
    command: &'static str,
    input: ConvInput,
    exponents: ConvExponents,
}

impl ConvArgs {
    fn to_input(&self) -> Result<ConvInput, Failure> {
        ConvInput::new(self.a, self.b, self.c, self.d).map_err(Failure::from)
    }
}

pub fn cmd_conv_exponents(common: &CommonOpts, args: &ConvArgs) -> Result<i32, Failure> {
    let cfg = common.resolve()?;
    let input = args.to_input()?;
    let exponents = predict_exponents(&input);
    let report = ConvReport {
        config: &cfg,
        version: oseen_rotor::VERSION,
        command: "conv-exponents",
        input,
        exponents,
    };
    emit(&cfg, &report, || {
        let mut table = CsvTable::new(
            &cfg,
            "conv-exponents",
            &["a", "b", "c", "d", "e", "f", "log_power", "contributing_region"],
        )?;
        table.push_row(vec![
            fmt_f64(input.a),
            fmt_f64(input.b),
            fmt_f64(input.c),
            fmt_f64(input.d),
            fmt_f64(exponents.e),
            fmt_f64(exponents.f),
            exponents.log_power.to_string(),
            exponents.contributing_region.to_string(),
        ]);
        Ok(table)
    })?;
    Ok(EXIT_OK)
}

pub fn cmd_conv_verify(common: &CommonOpts, args: &ConvVerifyArgs) -> Result<i32, Failure> {
    let cfg = common.resolve()?;
    let input = args.input.to_input()?;
    if args.budget < 100 {
        return Err(Failure::usage("--budget must be at least 100"));
    }
    let verdict = conv_task(input, args.budget, &cfg, 40).map_err(Failure::from)?;
    report_verdicts(&cfg, "conv", vec![verdict])
}
