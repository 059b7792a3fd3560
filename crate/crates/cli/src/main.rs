use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use srball::export::{geodesic_csv, jacobian_csv, sphere_csv, sphere_svg, to_json, SlicePlane};
use srball::flow::endpoint_jacobian;
use srball::geodesic::{classify, corank, goh_report, hamiltonian, hamiltonian_flow, recover_control};
use srball::metric::{covector_grid, distance_shooting, distance_transcription, sphere_sample, MembershipOptions, ShootingOptions, TranscriptionOptions};
use srball::structure::{StructureFile, DEFAULT_RANK_TOL};
use srball::tangent::{
    candidate_hyperplane, multiplicity_certificate, probe_test, CandidateOptions, CertificateOptions, HyperplaneCandidate, ProbeOptions,
    TangentVerdict,
};
use srball::{ControlGrid, Covector, Error, FlowOptions, Structure};

/// Numerical experiments on balls and spheres of free sub-Riemannian structures.
#[derive(Parser)]
#[command(name = "srball", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Built-in `flat:n` / `example:p`, or a JSON structure file.
    #[arg(long, global = true, default_value = "example:1")]
    structure: String,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Control / geodesic grid intervals.
    #[arg(long, global = true)]
    m: Option<usize>,
    /// RK4 substeps per control interval.
    #[arg(long, global = true, default_value_t = 4)]
    substeps: usize,
    /// Relative singular-value tolerance for numerical rank.
    #[arg(long, global = true, default_value_t = DEFAULT_RANK_TOL, value_parser = positive)]
    tol: f64,
    /// Endpoint tolerance of the distance solvers.
    #[arg(long, global = true, default_value_t = 1e-6, value_parser = positive)]
    endpoint_tol: f64,
    /// Covectors closer than this count as one minimizer.
    #[arg(long, global = true, default_value_t = 1e-3, value_parser = positive)]
    cluster_tol: f64,
    /// Output directory.
    #[arg(long, global = true, default_value = "srball-out")]
    out: PathBuf,
    /// Print the summary JSON to standard output.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Args)]
struct ControlSpec {
    /// Constant control value, e.g. `0,1`.
    #[arg(long, value_parser = coords, allow_hyphen_values = true, conflicts_with = "control_file")]
    const_u: Option<Coords>,
    /// Control file: one line per interval with k comma-separated values.
    #[arg(long)]
    control_file: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    t: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Normal geodesic from an initial covector.
    Shoot {
        #[arg(long, value_parser = coords, allow_hyphen_values = true)]
        xi: Coords,
        #[arg(long, default_value_t = 1.0, value_parser = positive)]
        t: f64,
    },
    /// Corank of the endpoint map at a control.
    Corank {
        #[command(flatten)]
        control: ControlSpec,
    },
    /// Distance from the base point by shooting and by transcription.
    Distance {
        #[arg(long, value_parser = coords, allow_hyphen_values = true)]
        to: Coords,
    },
    /// Sampled sphere of radius t with a 2D slice rendering.
    Sphere {
        #[arg(long, value_parser = positive)]
        t: f64,
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Coordinate fixed by the slice (1-based; defaults to the last).
        #[arg(long)]
        slice_axis: Option<usize>,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        slice_value: f64,
        #[arg(long, default_value_t = 0.1, value_parser = positive)]
        slice_width: f64,
    },
    /// Tangent hyperplane test at a sphere point.
    Tangent {
        #[arg(long, value_parser = coords, allow_hyphen_values = true)]
        point: Coords,
        /// Sphere radius; defaults to the computed distance of the point.
        #[arg(long, value_parser = positive)]
        t: Option<f64>,
    },
    /// Goh-condition residual of a control.
    Goh {
        #[command(flatten)]
        control: ControlSpec,
    },
}

/// Comma-separated coordinates, e.g. `1,0,-0.5`.
#[derive(Debug, Clone)]
struct Coords(Vec<f64>);

fn coords(s: &str) -> Result<Coords, String> {
    vector(s).map(Coords)
}

fn vector(s: &str) -> Result<Vec<f64>, String> {
    let v = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err("values must be finite".into())
    }
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be positive, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

enum Failure {
    Usage(String),
    Numeric(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Numeric(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Numeric(Error::Io(e))
    }
}

type Outcome = Result<Value, Failure>;

struct Ctx {
    common: Common,
    s: Structure,
}

impl Ctx {
    fn flow(&self) -> FlowOptions {
        FlowOptions {
            substeps: self.common.substeps,
            ..Default::default()
        }
    }

    fn shooting(&self) -> ShootingOptions {
        let d = ShootingOptions::default();
        ShootingOptions {
            seed: self.common.seed,
            tol: self.common.endpoint_tol,
            cluster_tol: self.common.cluster_tol,
            control_m: self.common.m.unwrap_or(d.control_m),
            escape_bound: self.flow().escape_bound,
            ..d
        }
    }

    fn transcription(&self) -> TranscriptionOptions {
        let d = TranscriptionOptions::default();
        TranscriptionOptions {
            seed: self.common.seed,
            tol: self.common.endpoint_tol,
            m: self.common.m.unwrap_or(d.m),
            flow: self.flow(),
            ..d
        }
    }

    fn membership(&self, starts: usize) -> MembershipOptions {
        MembershipOptions {
            shooting: ShootingOptions { starts, ..self.shooting() },
            transcription: self.transcription(),
            ..Default::default()
        }
    }

    fn point(&self, name: &str, x: &[f64]) -> Result<DVector<f64>, Failure> {
        if x.len() != self.s.dim() {
            return Err(Failure::Usage(format!("--{name} needs {} coordinates, got {}", self.s.dim(), x.len())));
        }
        Ok(DVector::from_row_slice(x))
    }

    fn control(&self, spec: &ControlSpec) -> Result<ControlGrid, Failure> {
        let k = self.s.rank();
        let rows: Vec<Vec<f64>> = match (&spec.const_u, &spec.control_file) {
            (Some(u), None) => vec![u.0.clone(); self.common.m.unwrap_or(100)],
            (None, Some(path)) => fs::read_to_string(path)?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(|l| vector(l).map_err(|e| Failure::Usage(format!("{}: {e}", path.display()))))
                .collect::<Result<_, _>>()?,
            _ => return Err(Failure::Usage("give exactly one of --const-u or --control-file".into())),
        };
        if rows.is_empty() || rows.iter().any(|r| r.len() != k) {
            return Err(Failure::Usage(format!("every control value needs {k} components")));
        }
        let values = DMatrix::from_fn(k, rows.len(), |i, j| rows[j][i]);
        Ok(ControlGrid::new(spec.t, values)?)
    }

    fn write(&self, name: &str, text: &str) -> Result<String, Failure> {
        fs::create_dir_all(&self.common.out)?;
        let path = self.common.out.join(name);
        fs::write(&path, text)?;
        Ok(name.to_string())
    }
}

fn load_structure(spec: &str) -> Result<Structure, Failure> {
    if Path::new(spec).is_file() {
        return Ok(StructureFile::read(spec)?.into_structure()?);
    }
    Structure::builtin(spec).map_err(|e| Failure::Usage(format!("{e} (expected flat:n, example:p or a structure file)")))
}

fn to_value<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("summaries serialize")
}

fn shoot(ctx: &Ctx, xi: &[f64], t: f64) -> Outcome {
    let s = &ctx.s;
    let lambda0 = Covector::new(s.q0().clone(), ctx.point("xi", xi)?)?;
    let steps = ctx.common.m.unwrap_or(200);
    let geo = hamiltonian_flow(s, &lambda0, t, steps)?;
    let u = recover_control(s, &geo)?;
    let h = hamiltonian(s, &lambda0);
    let energy_drift = geo.path.iter().map(|c| (hamiltonian(s, c) - h).abs()).fold(0.0, f64::max);
    let files = vec![ctx.write("geodesic.csv", &geodesic_csv(s, &geo)?)?];
    Ok(json!({
        "command": "shoot",
        "structure": s.name(),
        "lambda0": lambda0,
        "t": t,
        "steps": steps,
        "hamiltonian": h,
        "length": t * (2.0 * h).sqrt(),
        "control_norm_sq": u.l2_norm_sq(),
        "energy_drift": energy_drift,
        "endpoint": geo.endpoint().as_slice(),
        "files": files,
    }))
}

fn corank_cmd(ctx: &Ctx, spec: &ControlSpec) -> Outcome {
    let s = &ctx.s;
    let u = ctx.control(spec)?;
    let report = corank(s, s.q0(), &u, ctx.common.tol, &ctx.flow())?;
    let classification = match classify(s, s.q0(), &u, ctx.common.tol, &ctx.flow()) {
        Ok(c) => to_value(&c),
        Err(Error::InvalidParameter(_)) => Value::Null,
        Err(e) => return Err(e.into()),
    };
    let jac = endpoint_jacobian(s, s.q0(), &u, &ctx.flow())?;
    let files = vec![ctx.write("jacobian.csv", &jacobian_csv(&jac)?)?];
    Ok(json!({
        "command": "corank",
        "structure": s.name(),
        "t": u.t_final(),
        "m": u.m(),
        "corank": report.corank,
        "report": report,
        "classification": classification,
        "endpoint": jac.endpoint.as_slice(),
        "files": files,
    }))
}

fn distance_cmd(ctx: &Ctx, to: &[f64]) -> Outcome {
    let s = &ctx.s;
    let q1 = ctx.point("to", to)?;
    let shooting = distance_shooting(s, s.q0(), &q1, &ctx.shooting());
    let mut transcription_opts = ctx.transcription();
    if let Ok(d) = &shooting {
        transcription_opts.warm_starts = d.minimizers.iter().map(|m| m.control.clone()).collect();
    }
    let transcription = distance_transcription(s, s.q0(), &q1, &transcription_opts);
    let report = |r: &srball::Result<srball::metric::DistanceResult>| match r {
        Ok(d) => to_value(d),
        Err(e) => json!({"error": e.kind(), "message": e.to_string()}),
    };
    let value = match (&shooting, &transcription) {
        (Ok(a), _) => a.value,
        (Err(_), Ok(b)) => b.value,
        (Err(e), Err(_)) => return Err(Failure::Numeric(Error::NoConvergence(format!("both distance methods failed: {e}")))),
    };
    Ok(json!({
        "command": "distance",
        "structure": s.name(),
        "to": q1.as_slice(),
        "value": value,
        "agreement": match (&shooting, &transcription) {
            (Ok(a), Ok(b)) => json!((a.value - b.value).abs()),
            _ => Value::Null,
        },
        "shooting": report(&shooting),
        "transcription": report(&transcription),
    }))
}

fn sphere_cmd(ctx: &Ctx, t: f64, count: usize, axis: Option<usize>, value: f64, width: f64) -> Outcome {
    let s = &ctx.s;
    let n = s.dim();
    let axis = axis.unwrap_or(n);
    if axis == 0 || axis > n {
        return Err(Failure::Usage(format!("--slice-axis must be in 1..={n}")));
    }
    let slice = SlicePlane::new(n, axis - 1, value, width)?;
    let lambdas = covector_grid(s, s.q0(), count);
    let sample = sphere_sample(s, s.q0(), t, &lambdas, ctx.common.endpoint_tol.max(1e-4), &ctx.shooting())?;
    let minimal = sample.points.iter().filter(|p| p.minimal).count();
    let in_slice = sample
        .points
        .iter()
        .filter(|p| n == 2 || (p.endpoint[slice.axis] - value).abs() <= width)
        .count();
    let files = vec![
        ctx.write("sphere.csv", &sphere_csv(&sample)?)?,
        ctx.write("sphere.svg", &sphere_svg(&sample, &slice))?,
    ];
    Ok(json!({
        "command": "sphere",
        "structure": s.name(),
        "t": t,
        "points": sample.points.len(),
        "minimal": minimal,
        "in_slice": in_slice,
        "slice": {"axis": axis, "value": value, "half_width": width},
        "files": files,
    }))
}

fn tangent_cmd(ctx: &Ctx, point: &[f64], t: Option<f64>) -> Outcome {
    let s = &ctx.s;
    let q = ctx.point("point", point)?;
    let d = distance_shooting(s, s.q0(), &q, &ctx.shooting())?;
    let t = t.unwrap_or(d.value);
    if (d.value - t).abs() > 1e-4 * t.max(1.0) {
        return Err(Failure::Numeric(Error::InvalidParameter(format!(
            "point is at distance {} from the base point, not on the sphere of radius {t}",
            d.value
        ))));
    }
    let mut summary = json!({
        "command": "tangent",
        "structure": s.name(),
        "point": q.as_slice(),
        "t": t,
        "distance": d.value,
        "multiplicity": d.multiplicity,
        "certificate": null,
        "candidate": null,
        "report": null,
        "corank_signal": null,
    });
    let full = ctx.membership(ShootingOptions::default().starts);
    if d.multiplicity >= 2 {
        let opts = CertificateOptions {
            rank_tol: ctx.common.tol,
            seed: ctx.common.seed,
            flow: ctx.flow(),
            probe: ProbeOptions {
                membership: full.clone(),
                ..Default::default()
            },
            try_probe_certificate: false,
            ..Default::default()
        };
        if let Some(cert) = multiplicity_certificate(s, s.q0(), &q, &opts)? {
            summary["verdict"] = to_value(&TangentVerdict::TangentRefuted);
            summary["certificate"] = to_value(&cert);
            return Ok(summary);
        }
    }
    let minimizer = d.minimizers.first().expect("a positive distance has a minimizer");
    let cand_opts = CandidateOptions {
        rank_tol: ctx.common.tol,
        membership: full,
        flow: ctx.flow(),
        ..Default::default()
    };
    let cand = candidate_hyperplane(s, s.q0(), &minimizer.control, t, &cand_opts)?;
    summary["candidate"] = to_value(&cand);
    match cand {
        HyperplaneCandidate::CorankSignal { codimension, .. } => {
            summary["verdict"] = to_value(&TangentVerdict::Inconclusive);
            summary["corank_signal"] = json!({
                "codimension": codimension,
                "message": format!("corank >= 2: E^t has codimension {codimension}, no hyperplane is singled out"),
            });
        }
        HyperplaneCandidate::Hyperplane { plane, .. } => {
            let opts = ProbeOptions {
                membership: ctx.membership(ProbeOptions::default().membership.shooting.starts),
                ..Default::default()
            };
            let report = probe_test(s, s.q0(), t, &q, &plane, &opts)?;
            summary["verdict"] = to_value(&report.verdict);
            summary["report"] = to_value(&report);
        }
    }
    Ok(summary)
}

fn goh_cmd(ctx: &Ctx, spec: &ControlSpec) -> Outcome {
    let s = &ctx.s;
    let u = ctx.control(spec)?;
    let report = goh_report(s, s.q0(), &u, ctx.common.tol, &ctx.flow())?;
    Ok(json!({
        "command": "goh",
        "structure": s.name(),
        "t": u.t_final(),
        "m": u.m(),
        "residual": report.residual,
        "report": report,
    }))
}

fn headline(v: &Value) -> String {
    let keys = ["endpoint", "corank", "value", "points", "minimal", "verdict", "residual"];
    let parts: Vec<String> = keys.iter().filter_map(|k| v.get(k).filter(|x| !x.is_null()).map(|x| format!("{k} {x}"))).collect();
    format!("{}: {}", v["command"].as_str().unwrap_or(""), parts.join(", "))
}

fn run(cli: Cli) -> Outcome {
    let s = load_structure(&cli.common.structure)?;
    let ctx = Ctx { common: cli.common, s };
    let (name, summary) = match &cli.command {
        Command::Shoot { xi, t } => ("shoot", shoot(&ctx, &xi.0, *t)?),
        Command::Corank { control } => ("corank", corank_cmd(&ctx, control)?),
        Command::Distance { to } => ("distance", distance_cmd(&ctx, &to.0)?),
        Command::Sphere {
            t,
            count,
            slice_axis,
            slice_value,
            slice_width,
        } => ("sphere", sphere_cmd(&ctx, *t, *count, *slice_axis, *slice_value, *slice_width)?),
        Command::Tangent { point, t } => ("tangent", tangent_cmd(&ctx, &point.0, *t)?),
        Command::Goh { control } => ("goh", goh_cmd(&ctx, control)?),
    };
    let text = to_json(&summary)?;
    ctx.write(&format!("{name}.json"), &format!("{text}\n"))?;
    let line = if ctx.common.json { text } else { headline(&summary) };
    let _ = writeln!(std::io::stdout(), "{line}");
    Ok(summary)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(_) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("{}", json!({"error": "usage", "message": msg}));
            ExitCode::from(2)
        }
        Err(Failure::Numeric(e)) => {
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string()}));
            ExitCode::from(1)
        }
    }
}
