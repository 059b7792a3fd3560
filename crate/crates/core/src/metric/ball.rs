use nalgebra::DVector;
use serde::Serialize;

use super::sampling::covector_grid;
use super::shooting::{distance_shooting, shooting_candidates, ShootingOptions};
use super::transcription::{distance_transcription, TranscriptionOptions};
use super::{Method, Minimizer};
use crate::error::{Error, Result};
use crate::geodesic::{exp_map, hamiltonian, normalize_energy, Covector};
use crate::structure::Structure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Inside,
    Boundary,
    Outside,
}

impl Verdict {
    /// Member of the closed ball.
    pub fn in_closed_ball(self) -> bool {
        matches!(self, Verdict::Inside | Verdict::Boundary)
    }
}

/// When the transcription solver is consulted by [`ball_membership`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FallbackMode {
    Never,
    /// Only when shooting does not converge.
    Fallback,
    /// Always; the smaller of the two values is used.
    Always,
}

#[derive(Debug, Clone)]
pub struct MembershipOptions {
    pub shooting: ShootingOptions,
    pub transcription: TranscriptionOptions,
    pub mode: FallbackMode,
}

impl Default for MembershipOptions {
    fn default() -> Self {
        Self {
            shooting: ShootingOptions::default(),
            transcription: TranscriptionOptions::default(),
            mode: FallbackMode::Fallback,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Membership {
    pub verdict: Verdict,
    pub distance: Option<f64>,
    pub method: Option<Method>,
    pub caveats: Vec<String>,
}

impl Membership {
    pub fn has_caveat(&self) -> bool {
        !self.caveats.is_empty()
    }
}

/// Compares the distance from `q0` to `q` with `t` using the band `±tol`.
///
/// Without a converged solver the point is reported outside with a caveat.
pub fn ball_membership(
    s: &Structure,
    q0: &DVector<f64>,
    t: f64,
    q: &DVector<f64>,
    tol: f64,
    opts: &MembershipOptions,
) -> Result<Membership> {
    if !(t >= 0.0) || !(tol > 0.0) {
        return Err(Error::InvalidParameter("membership needs t ≥ 0 and tol > 0".into()));
    }
    let mut caveats = Vec::new();
    let mut best: Option<(f64, Method)> = None;
    let mut upper_only = false;
    match distance_shooting(s, q0, q, &opts.shooting) {
        Ok(d) => best = Some((d.value, Method::Shooting)),
        Err(Error::NoConvergence(msg)) => caveats.push(format!("shooting: {msg}")),
        Err(e) => return Err(e),
    }
    let consult = match opts.mode {
        FallbackMode::Never => false,
        FallbackMode::Fallback => best.is_none(),
        FallbackMode::Always => true,
    };
    if consult {
        match distance_transcription(s, q0, q, &opts.transcription) {
            Ok(d) => {
                if best.is_none_or(|(v, _)| d.value < v) {
                    upper_only = best.is_none() || d.upper_bound_only;
                    best = Some((d.value, Method::Transcription));
                }
            }
            Err(Error::NoConvergence(msg)) => caveats.push(format!("transcription: {msg}")),
            Err(e) => return Err(e),
        }
    }
    let verdict = match best {
        None => {
            caveats.push("undetermined: no solver converged".into());
            Verdict::Outside
        }
        Some((d, _)) if d < t - tol => Verdict::Inside,
        Some((d, _)) if d <= t + tol => Verdict::Boundary,
        Some(_) => Verdict::Outside,
    };
    if upper_only && verdict == Verdict::Outside {
        caveats.push("only an upper bound on the distance is available".into());
    }
    Ok(Membership {
        verdict,
        distance: best.map(|b| b.0),
        method: best.map(|b| b.1),
        caveats,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SpherePoint {
    pub lambda0: Covector,
    #[serde(serialize_with = "crate::serde_util::vector")]
    pub endpoint: DVector<f64>,
    pub distance: Option<f64>,
    pub minimal: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SphereSample {
    #[serde(serialize_with = "crate::serde_util::vector")]
    pub center: DVector<f64>,
    pub radius: f64,
    pub points: Vec<SpherePoint>,
}

/// Endpoints `exp(λ0, t)` over the given covectors (rescaled to `H = ½`),
/// each flagged minimal iff the shooting distance is at least `t − tol`.
pub fn sphere_sample(
    s: &Structure,
    q0: &DVector<f64>,
    t: f64,
    lambdas: &[Covector],
    tol: f64,
    opts: &ShootingOptions,
) -> Result<SphereSample> {
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("sphere radius must be positive, got {t}")));
    }
    let mut points = Vec::with_capacity(lambdas.len());
    for lam in lambdas {
        let lam = normalize_energy(s, &Covector { x: q0.clone(), xi: lam.xi.clone() })?;
        let end = exp_map(s, &lam, t, opts.flow_steps)?;
        let local = opts.clone().with_hint(&lam.xi * t);
        let distance = match distance_shooting(s, q0, &end, &local) {
            Ok(d) => Some(d.value),
            Err(Error::NoConvergence(_)) => None,
            Err(e) => return Err(e),
        };
        points.push(SpherePoint {
            minimal: distance.is_some_and(|d| d >= t - tol),
            lambda0: lam,
            endpoint: end,
            distance,
        });
    }
    Ok(SphereSample {
        center: q0.clone(),
        radius: t,
        points,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Multiplicity {
    pub count: usize,
    pub distance: f64,
    pub minimizers: Vec<Minimizer>,
}

/// Number of distinct minimizing covectors (clustered at `cluster_tol`).
pub fn minimizer_multiplicity(
    s: &Structure,
    q0: &DVector<f64>,
    q: &DVector<f64>,
    cluster_tol: f64,
    opts: &ShootingOptions,
) -> Result<Multiplicity> {
    let opts = ShootingOptions {
        cluster_tol,
        ..opts.clone()
    };
    let d = distance_shooting(s, q0, q, &opts)?;
    Ok(Multiplicity {
        count: d.multiplicity,
        distance: d.value,
        minimizers: d.minimizers,
    })
}

/// Scan grid for [`cut_time_scan`]: `points` equally spaced times in
/// `[t_min, t_max]`, then `refine` bisection steps.
#[derive(Debug, Clone, Copy)]
pub struct CutScan {
    pub t_min: f64,
    pub t_max: f64,
    pub points: usize,
    pub refine: usize,
}

impl Default for CutScan {
    fn default() -> Self {
        Self {
            t_min: 0.25,
            t_max: 5.0,
            points: 20,
            refine: 12,
        }
    }
}

fn reached_by_another(s: &Structure, q0: &DVector<f64>, lambda0: &Covector, t: f64, opts: &ShootingOptions) -> Result<bool> {
    let target = exp_map(s, lambda0, t, opts.flow_steps)?;
    let local = opts.clone().with_hint(&lambda0.xi * t);
    let window = t + opts.length_tol * t.max(1.0);
    Ok(shooting_candidates(s, q0, &target, &local)?
        .iter()
        .take_while(|c| c.length <= window)
        .any(|c| (c.lambda0(q0).xi - &lambda0.xi).norm() > opts.cluster_tol))
}

/// First time in the scan at which a covector distinct from `λ0` reaches
/// `exp(λ0, t)` with length at most `t`, refined by bisection.
pub fn cut_time_scan(s: &Structure, q0: &DVector<f64>, lambda0: &Covector, scan: &CutScan, opts: &ShootingOptions) -> Result<Option<f64>> {
    if !(scan.t_min > 0.0 && scan.t_max > scan.t_min) || scan.points < 2 {
        return Err(Error::InvalidParameter("cut scan needs 0 < t_min < t_max and at least 2 points".into()));
    }
    let lambda0 = normalize_energy(s, &Covector { x: q0.clone(), xi: lambda0.xi.clone() })?;
    let mut prev = 0.0;
    for i in 0..scan.points {
        let t = scan.t_min + (scan.t_max - scan.t_min) * i as f64 / (scan.points - 1) as f64;
        if reached_by_another(s, q0, &lambda0, t, opts)? {
            let (mut lo, mut hi) = (prev, t);
            for _ in 0..scan.refine {
                let mid = 0.5 * (lo + hi);
                if reached_by_another(s, q0, &lambda0, mid, opts)? {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(Some(0.5 * (lo + hi)));
        }
        prev = t;
    }
    Ok(None)
}

#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub lambda0: Covector,
    pub t: f64,
    #[serde(serialize_with = "crate::serde_util::vector")]
    pub endpoint: DVector<f64>,
    pub distance: f64,
}

/// Searches a covector grid of size `budget` for a normal geodesic that
/// stops minimising before `t`: `distance(q0, exp(λ0, t)) < t − margin`.
pub fn non_minimizing_witness(
    s: &Structure,
    q0: &DVector<f64>,
    t: f64,
    budget: usize,
    margin: f64,
    opts: &ShootingOptions,
) -> Result<Option<Witness>> {
    for lam in covector_grid(s, q0, budget) {
        debug_assert!((hamiltonian(s, &lam) - 0.5).abs() < 1e-9);
        let end = match exp_map(s, &lam, t, opts.flow_steps) {
            Ok(x) => x,
            Err(Error::Escaped { .. }) => continue,
            Err(e) => return Err(e),
        };
        let d = match distance_shooting(s, q0, &end, opts) {
            Ok(d) => d.value,
            Err(Error::NoConvergence(_)) => continue,
            Err(e) => return Err(e),
        };
        if d < t - margin {
            return Ok(Some(Witness {
                lambda0: lam,
                t,
                endpoint: end,
                distance: d,
            }));
        }
    }
    Ok(None)
}
