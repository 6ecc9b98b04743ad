//! The `expand` subcommand: load (or synthesize) a boundary mesh, surface
//! data, a force grid and optionally a certified exterior field, compute
//! the leading far-field coefficients, and scan the leading term and the
//! remainder functionals along rays.

use std::path::{Path, PathBuf};

use serde::Serialize;

use oseen_rotor::expansion::{
    beta_coefficients, leading_term, remainder_i, remainder_ii, synthetic_dataset,
    synthetic_wake_field, synthetic_wake_field_with_certificate, BoundaryMesh, DecayCertificate,
    ExpansionCoeffs, ExteriorField, ForceGrid, MeshNode, SurfaceData,
};
use oseen_rotor::linalg::{norm, scale, Mat3, Vec3, ZERO_VEC};
use oseen_rotor::oseen_kernel::{FlowParams, MultiIndex};
use oseen_rotor::wake_geometry::{fit_decay_with_envelope, s_tau, DecayReport};

use crate::config::{with_pool, CommonOpts, RunConfig};
use crate::evalcmd::{parse_radii, parse_ray_list, parse_vec3};
use crate::failure::{Failure, EXIT_OK};
use crate::output::{emit, fmt_f64, CsvTable};

#[derive(Debug, clap::Args)]
pub struct ExpandArgs {
    /// Boundary mesh CSV (columns x1,x2,x3,n1,n2,n3,w). Without it a
    /// generated sphere of `--mesh-size` is used.
    #[arg(long, value_name = "FILE")]
    pub mesh: Option<PathBuf>,

    /// Radius of the ball the mesh encloses (file meshes only).
    #[arg(long, default_value_t = 1.0)]
    pub body_radius: f64,

    /// Polar × azimuth node counts of the generated sphere mesh.
    #[arg(long, default_value = "8,16")]
    pub mesh_size: String,

    /// Surface data CSV (columns u1,u2,u3,g11..g33,p; one row per mesh
    /// node). Defaults to zero data.
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,

    /// Force grid JSON. Defaults to a zero force.
    #[arg(long, value_name = "FILE")]
    pub force: Option<PathBuf>,

    /// Use the shipped synthetic dataset (rigid-rotation trace, unit-mass
    /// force bump, certified wake field) for anything not given as a file.
    #[arg(long)]
    pub synthetic: bool,

    /// Exterior-field JSON file: `{"amplitude": A, "direction": [d1,d2,d3]}`
    /// with an optional `"certificate": {"amplitude", "base_exponent"}`
    /// override, which is spot-checked against the actual field.
    #[arg(long, value_name = "FILE")]
    pub field: Option<PathBuf>,

    /// Amplitude of a custom certified wake field (activates the
    /// far-field remainder scan without --synthetic).
    #[arg(long)]
    pub field_amplitude: Option<f64>,

    /// Direction of the custom wake field.
    #[arg(long, value_parser = parse_vec3, default_value = "0,1,0")]
    pub field_direction: Vec3,

    /// Comma-separated ray names: downstream, transverse, upstream.
    #[arg(long, default_value = "downstream,transverse,upstream", allow_hyphen_values = true)]
    pub rays: String,

    /// Radii as r0:r1:n (log-spaced).
    #[arg(long, default_value = "5:60:6")]
    pub radii: String,
}

#[derive(Serialize)]
struct ExpandReport<'a> {
    config: &'a RunConfig,
    version: &'static str,
    command: &'static str,
    beta: Vec3,
    flux: f64,
    decay: Vec<FunctionalReport>,
}

#[derive(Serialize)]
struct FunctionalReport {
    functional: &'static str,
    ray_name: String,
    #[serde(flatten)]
    report: DecayReport,
}

/// Parse "P,A" into polar/azimuth node counts.
fn parse_mesh_size(s: &str) -> Result<(usize, usize), Failure> {
    let parts: Vec<&str> = s.split(',').collect();
    let err = || Failure::usage(format!("--mesh-size must be P,A with both at least 2, got {s:?}"));
    if parts.len() != 2 {
        return Err(err());
    }
    let p: usize = parts[0].trim().parse().map_err(|_| err())?;
    let a: usize = parts[1].trim().parse().map_err(|_| err())?;
    if p < 2 || a < 2 {
        return Err(err());
    }
    Ok((p, a))
}

/// Read a whole numeric CSV: header names to column indices, then rows.
fn read_csv(path: &Path, required: &[&str]) -> Result<Vec<Vec<f64>>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::eval(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines
        .next()
        .ok_or_else(|| Failure::eval(format!("{} is empty", path.display())))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let mut order = Vec::with_capacity(required.len());
    for want in required {
        let idx = names.iter().position(|n| n == want).ok_or_else(|| {
            Failure::eval(format!("{} misses column {want}", path.display()))
        })?;
        order.push(idx);
    }
    let mut rows = Vec::new();
    for (line_no, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let mut row = Vec::with_capacity(order.len());
        for &idx in &order {
            let cell = cells.get(idx).ok_or_else(|| {
                Failure::eval(format!("{} row {} is short", path.display(), line_no + 2))
            })?;
            row.push(cell.parse::<f64>().map_err(|e| {
                Failure::eval(format!("{} row {}: {e}", path.display(), line_no + 2))
            })?);
        }
        rows.push(row);
    }
    Ok(rows)
}

fn load_mesh(path: &Path, body_radius: f64) -> Result<BoundaryMesh, Failure> {
    let rows = read_csv(path, &["x1", "x2", "x3", "n1", "n2", "n3", "w"])?;
    let nodes = rows
        .into_iter()
        .map(|r| MeshNode {
            point: [r[0], r[1], r[2]],
            normal: [r[3], r[4], r[5]],
            weight: r[6],
        })
        .collect();
    let mesh = BoundaryMesh { nodes, body_radius };
    mesh.validate().map_err(Failure::from)?;
    Ok(mesh)
}

fn load_data(path: &Path, mesh: &BoundaryMesh) -> Result<SurfaceData, Failure> {
    let cols = [
        "u1", "u2", "u3", "g11", "g12", "g13", "g21", "g22", "g23", "g31", "g32", "g33", "p",
    ];
    let rows = read_csv(path, &cols)?;
    let mut data = SurfaceData::zeros(rows.len());
    for (i, r) in rows.iter().enumerate() {
        data.u_b[i] = [r[0], r[1], r[2]];
        let mut g: Mat3 = [[0.0; 3]; 3];
        for l in 0..3 {
            for k in 0..3 {
                g[l][k] = r[3 + 3 * l + k];
            }
        }
        data.gradu_b[i] = g;
        data.pi_b[i] = r[12];
    }
    data.validate_for(mesh).map_err(Failure::from)?;
    Ok(data)
}

fn load_force(path: &Path) -> Result<ForceGrid, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::eval(format!("cannot read {}: {e}", path.display())))?;
    let force: ForceGrid = serde_json::from_str(&text)
        .map_err(|e| Failure::eval(format!("malformed force grid {}: {e}", path.display())))?;
    force.validate().map_err(Failure::from)?;
    Ok(force)
}

#[derive(serde::Deserialize)]
struct FieldFile {
    amplitude: f64,
    direction: Vec3,
    #[serde(default)]
    certificate: Option<CertificateFile>,
}

#[derive(serde::Deserialize)]
struct CertificateFile {
    amplitude: f64,
    base_exponent: f64,
}

/// Build the wake field described by a JSON file. Everything that goes
/// wrong here — unreadable file, bad JSON, parameters the field rejects, a
/// certificate the field cannot honor — is a defect of the file contents,
/// so it is reported as an evaluation failure rather than CLI misuse.
fn load_field(path: &Path, params: &FlowParams) -> Result<ExteriorField, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::eval(format!("cannot read {}: {e}", path.display())))?;
    let spec: FieldFile = serde_json::from_str(&text)
        .map_err(|e| Failure::eval(format!("malformed field file {}: {e}", path.display())))?;
    let certificate = spec.certificate.map(|c| DecayCertificate {
        amplitude: c.amplitude,
        base_exponent: c.base_exponent,
    });
    synthetic_wake_field_with_certificate(spec.amplitude, spec.direction, params, certificate)
        .map_err(|e| Failure::eval(format!("field file {}: {e}", path.display())))
}

fn is_zero_data(data: &SurfaceData) -> bool {
    data.u_b.iter().all(|u| *u == ZERO_VEC)
        && data.pi_b.iter().all(|p| *p == 0.0)
        && data
            .gradu_b
            .iter()
            .all(|g| g.iter().all(|row| *row == [0.0; 3]))
}

fn is_zero_force(force: &ForceGrid) -> bool {
    force.values.iter().all(|v| *v == ZERO_VEC)
}

pub fn cmd_expand(common: &CommonOpts, args: &ExpandArgs) -> Result<i32, Failure> {
    let cfg = common.resolve()?;
    let rays = parse_ray_list(&args.rays).map_err(Failure::usage)?;
    let radii = parse_radii(&args.radii).map_err(Failure::usage)?;
    if rays.is_empty() {
        return Err(Failure::usage("--rays names no ray"));
    }
    let (n_polar, n_azimuth) = parse_mesh_size(&args.mesh_size)?;

    // Assemble the dataset: files beat the synthetic components, which
    // beat the zero defaults.
    let reference = if args.synthetic {
        Some(synthetic_dataset(n_polar, n_azimuth, &cfg.params).map_err(Failure::from)?)
    } else {
        None
    };
    let mesh = match (&args.mesh, &reference) {
        (Some(path), _) => load_mesh(path, args.body_radius)?,
        (None, Some((mesh, ..))) => mesh.clone(),
        (None, None) => BoundaryMesh::unit_sphere(n_polar, n_azimuth),
    };
    let data = match (&args.data, &reference) {
        (Some(path), _) => load_data(path, &mesh)?,
        (None, Some((_, data, ..))) => data.clone(),
        (None, None) => SurfaceData::zeros(mesh.nodes.len()),
    };
    data.validate_for(&mesh).map_err(Failure::from)?;
    let force = match (&args.force, &reference) {
        (Some(path), _) => load_force(path)?,
        (None, Some((.., force, _))) => force.clone(),
        (None, None) => ForceGrid::zeros([-0.5; 3], [1.0; 3], [1, 1, 1]),
    };
    let field: Option<ExteriorField> = match (&args.field, args.field_amplitude, reference) {
        (Some(path), _, _) => Some(load_field(path, &cfg.params)?),
        (None, Some(a), _) => Some(
            synthetic_wake_field(a, args.field_direction, &cfg.params).map_err(Failure::from)?,
        ),
        (None, None, Some((.., field))) => Some(field),
        (None, None, None) => None,
    };

    let coeffs = beta_coefficients(&mesh, &data, &force, &cfg.params).map_err(Failure::from)?;

    // Which functionals have anything to scan?
    let zero_sources = is_zero_data(&data) && is_zero_force(&force);
    let zero_coeffs = coeffs.beta() == ZERO_VEC && coeffs.flux == 0.0;
    let mut functionals: Vec<&'static str> = Vec::new();
    if !zero_coeffs {
        functionals.push("leading");
    }
    if !zero_sources {
        functionals.push("remainder-i");
    }
    if field.is_some() {
        functionals.push("remainder-ii");
    }

    let decay = scan_functionals(&cfg, &mesh, &data, &force, &field, &coeffs, &functionals, &rays, &radii)?;

    let report = ExpandReport {
        config: &cfg,
        version: oseen_rotor::VERSION,
        command: "expand",
        beta: coeffs.beta(),
        flux: coeffs.flux,
        decay,
    };
    emit(&cfg, &report, || {
        let mut table = CsvTable::new(
            &cfg,
            "expand",
            &["functional", "ray", "radius", "value", "fitted_slope", "envelope_ratio_max"],
        )?;
        for fr in &report.decay {
            for (r, v) in fr.report.radii.iter().zip(&fr.report.values) {
                table.push_row(vec![
                    fr.functional.to_string(),
                    fr.ray_name.clone(),
                    fmt_f64(*r),
                    fmt_f64(*v),
                    fmt_f64(fr.report.fitted_slope),
                    fmt_f64(fr.report.envelope_ratio_max),
                ]);
            }
        }
        let beta = report.beta;
        table.push_row(vec![
            "beta".to_string(),
            "-".to_string(),
            fmt_f64(beta[0]),
            fmt_f64(beta[1]),
            fmt_f64(beta[2]),
            fmt_f64(report.flux),
        ]);
        Ok(table)
    })?;
    Ok(EXIT_OK)
}

/// Evaluate every (functional, ray, radius) cell in parallel slots, then
/// fit one decay report per (functional, ray), skipping all-zero scans.
#[allow(clippy::too_many_arguments)]
fn scan_functionals(
    cfg: &RunConfig,
    mesh: &BoundaryMesh,
    data: &SurfaceData,
    force: &ForceGrid,
    field: &Option<ExteriorField>,
    coeffs: &ExpansionCoeffs,
    functionals: &[&'static str],
    rays: &[(String, Vec3)],
    radii: &[f64],
) -> Result<Vec<FunctionalReport>, Failure> {
    let tau = cfg.params.tau();
    let cells: Vec<(usize, usize, f64)> = functionals
        .iter()
        .enumerate()
        .flat_map(|(f, _)| {
            rays.iter()
                .enumerate()
                .flat_map(move |(d, _)| radii.iter().map(move |&r| (f, d, r)))
        })
        .collect();

    let eval_cell = |&(f, d, r): &(usize, usize, f64)| -> Result<f64, Failure> {
        let dir = rays[d].1;
        let x = scale(dir, r / norm(dir));
        let label = format!("{} at x={x:?}", functionals[f]);
        let value = match functionals[f] {
            "leading" => {
                leading_term(x, MultiIndex::ZERO, coeffs, &cfg.params, &cfg.spec)
                    .map_err(|e| Failure::for_record(e, d, &label))?
                    .value
            }
            "remainder-i" => {
                remainder_i(x, MultiIndex::ZERO, mesh, data, force, &cfg.params, &cfg.spec)
                    .map_err(|e| Failure::for_record(e, d, &label))?
                    .value
            }
            "remainder-ii" => {
                let field = field.as_ref().expect("scan only scheduled with a field");
                let t_cut = (4.0 * r).max(40.0);
                remainder_ii(x, MultiIndex::ZERO, field, mesh, &cfg.params, &cfg.spec, t_cut)
                    .map_err(|e| Failure::for_record(e, d, &label))?
                    .value
            }
            other => unreachable!("unknown functional {other}"),
        };
        Ok(norm(value))
    };

    let results: Vec<Result<f64, Failure>> = with_pool(cfg.jobs, || {
        use rayon::prelude::*;
        cells.par_iter().map(eval_cell).collect()
    });
    let mut flat = Vec::with_capacity(results.len());
    for r in results {
        flat.push(r?);
    }

    let mut out = Vec::new();
    for (f, functional) in functionals.iter().enumerate() {
        for (d, (ray_name, dir)) in rays.iter().enumerate() {
            let start = (f * rays.len() + d) * radii.len();
            let values = &flat[start..start + radii.len()];
            if values.iter().all(|v| *v == 0.0) {
                continue;
            }
            let dir_unit = scale(*dir, 1.0 / norm(*dir));
            // Leading term decays like the plain kernel; both remainders
            // carry the extra half power and the logarithm.
            let (exp, log_corrected) = if *functional == "leading" {
                (-1.0, false)
            } else {
                (-1.5, true)
            };
            let envelope = |r: f64| {
                let g = (r * s_tau(scale(dir_unit, r), tau)).powf(exp);
                if log_corrected {
                    g * (2.0 + r).ln()
                } else {
                    g
                }
            };
            let description = if log_corrected {
                format!("(|x| s_tau(x))^({exp}) ln(2+|x|)")
            } else {
                format!("(|x| s_tau(x))^({exp})")
            };
            let report =
                fit_decay_with_envelope(*dir, radii, values, envelope, &description)
                    .map_err(Failure::from)?;
            out.push(FunctionalReport {
                functional,
                ray_name: ray_name.clone(),
                report,
            });
        }
    }
    Ok(out)
}
