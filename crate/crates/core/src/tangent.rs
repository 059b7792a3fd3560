//! Tangent hyperplanes of sub-Riemannian balls: the candidate `E^t` of a
//! minimizer, a probe-curve test of the tangency condition, and
//! certificates that no tangent hyperplane exists.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{jacobian_from_linearization, linearize, orthocomplement_image, ControlGrid, FlowOptions, ImageSubspace};
use crate::geodesic::Covector;
use crate::linalg::{complement_basis, max_principal_angle};
use crate::metric::{ball_membership, distance_shooting, fibonacci_sphere, CovectorSampler, MembershipOptions, Verdict};
use crate::structure::{Structure, DEFAULT_RANK_TOL};

/// A hyperplane `E₀ = ν^⊥` at `point`, co-oriented by the unit normal `ν`:
/// `E₊ = {⟨ν, v⟩ > 0}` is the side expected to leave the ball.
#[derive(Debug, Clone, Serialize)]
pub struct CoorientedHyperplane {
    #[serde(serialize_with = "crate::serde_util::vector")]
    pub point: DVector<f64>,
    #[serde(serialize_with = "crate::serde_util::vector")]
    pub normal: DVector<f64>,
    /// Orthonormal basis of `E₀`.
    #[serde(serialize_with = "crate::serde_util::columns")]
    pub basis: DMatrix<f64>,
}

impl CoorientedHyperplane {
    pub fn new(point: DVector<f64>, normal: &DVector<f64>) -> Result<Self> {
        if point.len() != normal.len() {
            return Err(Error::Dimension { expected: point.len(), got: normal.len() });
        }
        let norm = normal.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidParameter("hyperplane normal must be a nonzero finite vector".into()));
        }
        let normal = normal / norm;
        let basis = complement_basis(&normal);
        Ok(Self { point, normal, basis })
    }

    pub fn flipped(&self) -> Self {
        Self {
            point: self.point.clone(),
            normal: -&self.normal,
            basis: self.basis.clone(),
        }
    }

    /// Angle between the unit normals.
    pub fn angle_to(&self, other: &CoorientedHyperplane) -> f64 {
        self.normal.dot(&other.normal).clamp(-1.0, 1.0).acos()
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HyperplaneCandidate {
    Hyperplane {
        plane: CoorientedHyperplane,
        singular_values: Vec<f64>,
    },
    /// `E^t` has codimension at least two: no hyperplane is singled out.
    CorankSignal { codimension: usize, singular_values: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct CandidateOptions {
    pub rank_tol: f64,
    /// Allowed shortfall of the shooting distance below `t`.
    pub minimality_tol: f64,
    /// Step of the single orientation query along `ν`.
    pub orientation_step: f64,
    pub membership_tol: f64,
    pub membership: MembershipOptions,
    pub flow: FlowOptions,
}

impl Default for CandidateOptions {
    fn default() -> Self {
        Self {
            rank_tol: DEFAULT_RANK_TOL,
            minimality_tol: 1e-4,
            orientation_step: 0.05,
            membership_tol: 1e-6,
            membership: MembershipOptions::default(),
            flow: FlowOptions::default(),
        }
    }
}

fn e_t(s: &Structure, q0: &DVector<f64>, u: &ControlGrid, rank_tol: f64, flow: &FlowOptions) -> Result<(DVector<f64>, ImageSubspace)> {
    let lin = linearize(s, q0, u, flow)?;
    let jac = jacobian_from_linearization(&lin, u);
    let e = orthocomplement_image(&jac, u, rank_tol)?;
    Ok((lin.trajectory.endpoint().clone(), e))
}

/// Candidate tangent hyperplane `E^t = D_uF^t(u^⊥)` at the endpoint of a
/// minimizing control `u` of length `t`.
///
/// A numerically full-rank `E^t` (a discretised normal geodesic is only
/// approximately critical) is cut down to its weakest singular direction.
/// The normal is oriented by one membership query at `q + step·ν`.
pub fn candidate_hyperplane(s: &Structure, q0: &DVector<f64>, u: &ControlGrid, t: f64, opts: &CandidateOptions) -> Result<HyperplaneCandidate> {
    let (q, e) = e_t(s, q0, u, opts.rank_tol, &opts.flow)?;
    let d = distance_shooting(s, q0, &q, &opts.membership.shooting)?;
    if d.value < t - opts.minimality_tol {
        return Err(Error::NotMinimizing { distance: d.value, length: t });
    }
    if e.codimension >= 2 {
        return Ok(HyperplaneCandidate::CorankSignal {
            codimension: e.codimension,
            singular_values: e.singular_values,
        });
    }
    let e = e.with_min_codimension(1);
    let plane = CoorientedHyperplane::new(q.clone(), &e.weakest_direction())?;
    let probe = &q + &plane.normal * opts.orientation_step;
    let m = ball_membership(s, q0, t, &probe, opts.membership_tol, &opts.membership)?;
    let plane = if m.verdict == Verdict::Outside { plane } else { plane.flipped() };
    Ok(HyperplaneCandidate::Hyperplane {
        plane,
        singular_values: e.singular_values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TangentVerdict {
    TangentConfirmed,
    TangentRefuted,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeSide {
    /// Expected to leave the ball.
    Positive,
    /// Expected to stay inside.
    Negative,
    /// In `E₀`: recorded only.
    InPlane,
}

#[derive(Debug, Clone, Serialize)]
pub struct Probe {
    #[serde(serialize_with = "crate::serde_util::vector")]
    pub dir: DVector<f64>,
    pub side: ProbeSide,
    pub steps: Vec<f64>,
    pub pattern: Vec<Verdict>,
    pub violation: bool,
    pub caveat: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TangentReport {
    pub verdict: TangentVerdict,
    #[serde(serialize_with = "crate::serde_util::opt_vector")]
    pub normal: Option<DVector<f64>>,
    pub probes: Vec<Probe>,
    pub violations: usize,
    pub caveats: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ProbeOptions {
    pub epsilon: f64,
    /// Step fractions of `epsilon`.
    pub ladder: Vec<f64>,
    /// Angles (degrees) between mixed probes and `±ν`; their steps are
    /// scaled by the cosine of the angle.
    pub mixture_angles: Vec<f64>,
    /// In-plane directions used for mixtures and recorded `E₀` probes.
    pub probe_count: usize,
    pub membership_tol: f64,
    pub stop_on_violation: bool,
    pub membership: MembershipOptions,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        let mut membership = MembershipOptions::default();
        membership.shooting.starts = 8;
        Self {
            epsilon: 0.01,
            ladder: vec![1.0, 0.5, 0.25, 0.125],
            mixture_angles: vec![80.0, 60.0, 30.0],
            probe_count: 4,
            membership_tol: 1e-6,
            stop_on_violation: true,
            membership,
        }
    }
}

fn in_plane_directions(basis: &DMatrix<f64>, count: usize) -> Vec<DVector<f64>> {
    if basis.ncols() == 2 {
        return (0..count)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
                basis.column(0) * a.cos() + basis.column(1) * a.sin()
            })
            .collect();
    }
    (0..count)
        .map(|i| {
            let c = basis.column((i / 2) % basis.ncols().max(1)).into_owned();
            if i % 2 == 0 {
                c
            } else {
                -c
            }
        })
        .collect()
}

/// Straight probe lines `q + s·d` evaluated by ball membership on a step
/// ladder. `E₊` probes must leave the ball and `E₋` probes must stay inside
/// at every step; `E₀` probes are only recorded.
pub fn probe_test(s: &Structure, q0: &DVector<f64>, t: f64, q: &DVector<f64>, plane: &CoorientedHyperplane, opts: &ProbeOptions) -> Result<TangentReport> {
    s.check_point(q)?;
    if (q - &plane.point).norm() > 1e-6 * (1.0 + q.norm()) {
        return Err(Error::InvalidParameter("probe point differs from the hyperplane's base point".into()));
    }
    if opts.ladder.is_empty() || !(opts.epsilon > 0.0) {
        return Err(Error::InvalidParameter("probe ladder must be non-empty with epsilon > 0".into()));
    }
    let mut membership = opts.membership.clone();
    if let Ok(d) = distance_shooting(s, q0, q, &membership.shooting) {
        for m in &d.minimizers {
            if let Some(l) = &m.lambda0 {
                membership.shooting.hints.push(&l.xi * m.length);
            }
        }
    }

    let nu = &plane.normal;
    let planar = in_plane_directions(&plane.basis, opts.probe_count.max(1));
    let mut plan: Vec<(DVector<f64>, ProbeSide, f64)> = Vec::new();
    for &deg in &opts.mixture_angles {
        let a = deg.to_radians();
        for e in &planar {
            plan.push((nu * a.cos() + e * a.sin(), ProbeSide::Positive, a.cos()));
            plan.push((-nu * a.cos() + e * a.sin(), ProbeSide::Negative, a.cos()));
        }
    }
    plan.push((nu.clone(), ProbeSide::Positive, 1.0));
    plan.push((-nu, ProbeSide::Negative, 1.0));
    for e in &planar {
        plan.push((e.clone(), ProbeSide::InPlane, 1.0));
    }
    // Decisive probes in the order most likely to expose a violation; E₀ last.
    plan.sort_by_key(|p| p.1 == ProbeSide::InPlane);

    let mut probes = Vec::with_capacity(plan.len());
    let mut caveats = Vec::new();
    let mut violations = 0;
    let mut undecided = false;
    for (dir, side, scale) in plan {
        let steps: Vec<f64> = opts.ladder.iter().map(|f| f * opts.epsilon * scale).collect();
        let mut pattern = Vec::with_capacity(steps.len());
        let (mut violation, mut caveat) = (false, false);
        for &h in &steps {
            let m = ball_membership(s, q0, t, &(q + &dir * h), opts.membership_tol, &membership)?;
            if m.has_caveat() {
                caveat = true;
                for c in &m.caveats {
                    if !caveats.contains(c) {
                        caveats.push(c.clone());
                    }
                }
            }
            match (side, m.verdict) {
                (ProbeSide::Positive, Verdict::Inside) | (ProbeSide::Negative, Verdict::Outside) if !m.has_caveat() => violation = true,
                (ProbeSide::Positive, Verdict::Outside) | (ProbeSide::Negative, Verdict::Inside) if !m.has_caveat() => {}
                (ProbeSide::InPlane, _) => {}
                _ => undecided = true,
            }
            pattern.push(m.verdict);
            if violation && opts.stop_on_violation {
                break;
            }
        }
        if violation {
            violations += 1;
        }
        let stop = violation && opts.stop_on_violation;
        probes.push(Probe {
            dir,
            side,
            steps: steps[..pattern.len()].to_vec(),
            pattern,
            violation,
            caveat,
        });
        if stop {
            break;
        }
    }
    let verdict = if violations > 0 {
        TangentVerdict::TangentRefuted
    } else if undecided {
        TangentVerdict::Inconclusive
    } else {
        TangentVerdict::TangentConfirmed
    };
    Ok(TangentReport {
        verdict,
        normal: Some(plane.normal.clone()),
        probes,
        violations,
        caveats,
    })
}

/// Largest principal angle between the `E^t` subspaces of two controls
/// reaching the same endpoint (each cut to codimension ≥ 1).
pub fn subspace_consistency(
    s: &Structure,
    q0: &DVector<f64>,
    u: &ControlGrid,
    u_hat: &ControlGrid,
    endpoint_tol: f64,
    rank_tol: f64,
    flow: &FlowOptions,
) -> Result<f64> {
    let (qa, ea) = e_t(s, q0, u, rank_tol, flow)?;
    let (qb, eb) = e_t(s, q0, u_hat, rank_tol, flow)?;
    if (&qa - &qb).norm() > endpoint_tol {
        return Err(Error::InvalidParameter(format!("controls end at different points (gap {:.3e})", (&qa - &qb).norm())));
    }
    Ok(max_principal_angle(&ea.with_min_codimension(1).basis, &eb.with_min_codimension(1).basis))
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Certificate {
    /// Several minimizers whose `E^t` subspaces are far apart.
    Multiplicity {
        count: usize,
        max_angle: f64,
        pair: (Covector, Covector),
    },
    /// Every scanned co-oriented hyperplane fails the probe test.
    ProbeContradiction { normals_tested: usize, witnesses: Vec<ProbeWitness> },
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeWitness {
    #[serde(serialize_with = "crate::serde_util::vector")]
    pub normal: DVector<f64>,
    #[serde(serialize_with = "crate::serde_util::vector")]
    pub dir: DVector<f64>,
    pub side: ProbeSide,
    pub step: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone)]
pub struct CertificateOptions {
    pub rank_tol: f64,
    pub angle_threshold: f64,
    /// Scanned unit normals for the probe certificate.
    pub normals: usize,
    pub probe: ProbeOptions,
    pub seed: u64,
    pub flow: FlowOptions,
    pub try_probe_certificate: bool,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        Self {
            rank_tol: DEFAULT_RANK_TOL,
            angle_threshold: 0.1,
            normals: 64,
            probe: ProbeOptions::default(),
            seed: 0,
            flow: FlowOptions::default(),
            try_probe_certificate: true,
        }
    }
}

fn scan_normals(n: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    match n {
        2 => (0..count)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
                DVector::from_row_slice(&[a.cos(), a.sin()])
            })
            .collect(),
        3 => fibonacci_sphere(count),
        _ => {
            let mut rng = CovectorSampler::new(seed);
            (0..count).map(|_| rng.gaussian(n).normalize()).collect()
        }
    }
}

/// Multiplicity-based certificate only (no probe scan).
pub fn multiplicity_certificate(s: &Structure, q0: &DVector<f64>, q: &DVector<f64>, opts: &CertificateOptions) -> Result<Option<Certificate>> {
    let d = match distance_shooting(s, q0, q, &opts.probe.membership.shooting) {
        Ok(d) => d,
        Err(Error::NoConvergence(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    if d.multiplicity < 2 {
        return Ok(None);
    }
    let spaces = d
        .minimizers
        .iter()
        .map(|m| Ok(e_t(s, q0, &m.control, opts.rank_tol, &opts.flow)?.1.with_min_codimension(1).basis))
        .collect::<Result<Vec<_>>>()?;
    let mut best = (0.0, 0, 0);
    for i in 0..spaces.len() {
        for j in i + 1..spaces.len() {
            let a = max_principal_angle(&spaces[i], &spaces[j]);
            if a > best.0 {
                best = (a, i, j);
            }
        }
    }
    if best.0 <= opts.angle_threshold {
        return Ok(None);
    }
    let cov = |i: usize| d.minimizers[i].lambda0.clone().expect("shooting minimizers carry covectors");
    Ok(Some(Certificate::Multiplicity {
        count: d.multiplicity,
        max_angle: best.0,
        pair: (cov(best.1), cov(best.2)),
    }))
}

/// Looks for evidence that the sphere of radius `t` has no tangent
/// hyperplane at `q`: first by multiplicity, then by scanning normals.
/// `None` means no certificate was found, not that a tangent exists.
pub fn no_tangent_certificate(s: &Structure, q0: &DVector<f64>, q: &DVector<f64>, t: f64, opts: &CertificateOptions) -> Result<Option<Certificate>> {
    if let Some(c) = multiplicity_certificate(s, q0, q, opts)? {
        return Ok(Some(c));
    }
    if !opts.try_probe_certificate {
        return Ok(None);
    }
    let probe = ProbeOptions {
        stop_on_violation: true,
        ..opts.probe.clone()
    };
    let normals = scan_normals(s.dim(), opts.normals, opts.seed);
    let mut witnesses = Vec::with_capacity(normals.len());
    for nu in &normals {
        let plane = CoorientedHyperplane::new(q.clone(), nu)?;
        let report = probe_test(s, q0, t, q, &plane, &probe)?;
        if report.verdict != TangentVerdict::TangentRefuted {
            return Ok(None);
        }
        let p = report.probes.iter().find(|p| p.violation).expect("refuted reports carry a violating probe");
        witnesses.push(ProbeWitness {
            normal: plane.normal.clone(),
            dir: p.dir.clone(),
            side: p.side,
            step: *p.steps.last().expect("violating probe has a step"),
            verdict: *p.pattern.last().expect("violating probe has a verdict"),
        });
    }
    Ok(Some(Certificate::ProbeContradiction {
        normals_tested: normals.len(),
        witnesses,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn flat_circle_is_tangent() {
        let f = Structure::flat(2).unwrap();
        let u = ControlGrid::constant(&[1.0, 0.0], 1.0, 20).unwrap();
        let HyperplaneCandidate::Hyperplane { plane, .. } = candidate_hyperplane(&f, f.q0(), &u, 1.0, &CandidateOptions::default()).unwrap() else {
            panic!("expected a hyperplane");
        };
        assert!((&plane.normal - v(&[1.0, 0.0])).norm() < 1e-9);
        let r = probe_test(&f, f.q0(), 1.0, &v(&[1.0, 0.0]), &plane, &ProbeOptions::default()).unwrap();
        assert_eq!(r.verdict, TangentVerdict::TangentConfirmed);
        let bad = probe_test(&f, f.q0(), 1.0, &v(&[1.0, 0.0]), &plane.flipped(), &ProbeOptions::default()).unwrap();
        assert_eq!(bad.verdict, TangentVerdict::TangentRefuted);
    }

    #[test]
    fn abnormal_line_gives_corank_signal() {
        let e2 = Structure::example(2).unwrap();
        let u = ControlGrid::constant(&[0.0, 1.0], 1.0, 100).unwrap();
        let c = candidate_hyperplane(&e2, e2.q0(), &u, 1.0, &CandidateOptions::default()).unwrap();
        assert!(matches!(c, HyperplaneCandidate::CorankSignal { codimension: 2, .. }));
    }

    #[test]
    fn non_minimizing_control_is_rejected() {
        let f = Structure::flat(2).unwrap();
        let u = ControlGrid::from_fn(2, 20, 2.0, |t| if t < 1.0 { vec![1.0, 0.0] } else { vec![-1.0, 0.0] }).unwrap();
        let err = candidate_hyperplane(&f, f.q0(), &u, 2.0, &CandidateOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NotMinimizing { .. }));
    }

    #[test]
    fn consistency_of_two_discretisations() {
        let f = Structure::flat(2).unwrap();
        let a = ControlGrid::constant(&[0.6, 0.8], 1.0, 10).unwrap();
        let b = ControlGrid::constant(&[0.6, 0.8], 1.0, 37).unwrap();
        let o = FlowOptions::default();
        assert!(subspace_consistency(&f, f.q0(), &a, &b, 1e-9, 1e-9, &o).unwrap() < 1e-6);
        assert!(subspace_consistency(&f, f.q0(), &a, &a, 1e-9, 1e-9, &o).unwrap() < 1e-7);
    }

    #[test]
    fn smooth_circle_has_no_certificate() {
        let f = Structure::flat(2).unwrap();
        let opts = CertificateOptions { normals: 8, ..Default::default() };
        assert!(no_tangent_certificate(&f, f.q0(), &v(&[1.0, 0.0]), 1.0, &opts).unwrap().is_none());
    }
}
