use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::sampling::CovectorSampler;
use super::{DistanceResult, Method, Minimizer};
use crate::error::{Error, Result};
use crate::flow::{ControlGrid, FlowOptions};
use crate::geodesic::{hamiltonian, hamiltonian_flow, integrate_hamiltonian, recover_control, Covector, DEFAULT_FLOW_STEPS};
use crate::structure::Structure;

/// Settings for multi-start shooting.
///
/// Shooting solves `π e^{H}(q0, ξ) = q1` for `ξ` at unit time; by the
/// homogeneity of `H` the geodesic has constant speed `√(2H(ξ))`, which is
/// then its length.
#[derive(Debug, Clone)]
pub struct ShootingOptions {
    pub starts: usize,
    pub max_iterations: usize,
    /// Endpoint tolerance.
    pub tol: f64,
    /// Covectors (normalised to `H = ½`) closer than this are one minimizer.
    pub cluster_tol: f64,
    /// Relative length window above the best length for co-minimizers.
    pub length_tol: f64,
    pub flow_steps: usize,
    /// Intervals of the recovered minimizer controls.
    pub control_m: usize,
    pub seed: u64,
    /// Extra initial `ξ` (unit time) tried before the random starts.
    pub hints: Vec<DVector<f64>>,
    pub escape_bound: f64,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        Self {
            starts: 32,
            max_iterations: 80,
            tol: 1e-6,
            cluster_tol: 1e-3,
            length_tol: 1e-5,
            flow_steps: DEFAULT_FLOW_STEPS,
            control_m: 200,
            seed: 0,
            hints: Vec::new(),
            escape_bound: FlowOptions::default().escape_bound,
        }
    }
}

impl ShootingOptions {
    pub fn with_hint(mut self, xi: DVector<f64>) -> Self {
        self.hints.push(xi);
        self
    }
}

/// A converged shooting solution.
#[derive(Debug, Clone, Serialize)]
pub struct Candidate {
    /// Covector at unit time.
    #[serde(serialize_with = "crate::serde_util::vector")]
    pub xi: DVector<f64>,
    pub length: f64,
    pub residual: f64,
}

impl Candidate {
    /// Initial covector normalised to `H = ½`.
    pub fn lambda0(&self, q0: &DVector<f64>) -> Covector {
        Covector {
            x: q0.clone(),
            xi: &self.xi / self.length,
        }
    }
}

struct Shooter<'a> {
    s: &'a Structure,
    q0: &'a DVector<f64>,
    q1: &'a DVector<f64>,
    bound: f64,
}

impl Shooter<'_> {
    fn residual(&self, xi: &DVector<f64>, steps: usize) -> Option<DVector<f64>> {
        let n = self.s.dim();
        let y0: Vec<f64> = self.q0.iter().chain(xi.iter()).cloned().collect();
        let y = integrate_hamiltonian(self.s, &y0, 1.0, steps, self.bound, |_, _| {}).ok()?;
        let r = DVector::from_column_slice(&y[..n]) - self.q1;
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    /// Levenberg–Marquardt on `ξ ↦ exp(ξ, 1) − q1` with a forward-difference Jacobian.
    fn solve(&self, mut xi: DVector<f64>, steps: usize, tol: f64, max_iterations: usize) -> Option<(DVector<f64>, f64)> {
        let n = self.s.dim();
        let mut r = self.residual(&xi, steps)?;
        let mut mu = 1e-3;
        for _ in 0..max_iterations {
            if r.norm() < tol {
                break;
            }
            let mut jac = DMatrix::zeros(n, n);
            for c in 0..n {
                let step = 1e-7 * xi[c].abs().max(1.0);
                let mut xp = xi.clone();
                xp[c] += step;
                let rp = self.residual(&xp, steps)?;
                jac.column_mut(c).copy_from(&((rp - &r) / step));
            }
            let a = jac.transpose() * &jac;
            let g = jac.transpose() * &r;
            let scale = a.diagonal().max().max(1e-300);
            let mut accepted = false;
            for _ in 0..12 {
                let mut damped = a.clone();
                for d in 0..n {
                    damped[(d, d)] += mu * a[(d, d)].max(1e-9 * scale);
                }
                let Some(chol) = damped.cholesky() else {
                    mu *= 4.0;
                    continue;
                };
                let trial = &xi - chol.solve(&g);
                match self.residual(&trial, steps) {
                    Some(rt) if rt.norm() < r.norm() => {
                        xi = trial;
                        r = rt;
                        mu = (mu / 3.0).max(1e-12);
                        accepted = true;
                        break;
                    }
                    _ => mu *= 4.0,
                }
            }
            if !accepted {
                break;
            }
        }
        let res = r.norm();
        Some((xi, res))
    }
}

/// All converged shooting solutions, sorted by length.
pub fn shooting_candidates(s: &Structure, q0: &DVector<f64>, q1: &DVector<f64>, opts: &ShootingOptions) -> Result<Vec<Candidate>> {
    s.check_point(q0)?;
    s.check_point(q1)?;
    if opts.flow_steps == 0 || opts.tol <= 0.0 {
        return Err(Error::InvalidParameter("shooting needs flow_steps ≥ 1 and tol > 0".into()));
    }
    let shooter = Shooter {
        s,
        q0,
        q1,
        bound: opts.escape_bound,
    };
    let gap = (q1 - q0).norm();
    let guess = gap.max(gap.sqrt());
    let mut sampler = CovectorSampler::new(opts.seed);
    let mut starts = opts.hints.clone();
    for i in 0..opts.starts {
        let lam = sampler.sample(s, q0)?;
        starts.push(lam.xi * guess * [1.0, 2.0, 0.5, 3.0][i % 4]);
    }
    let coarse = (opts.flow_steps / 4).max(16);
    let mut rough: Vec<DVector<f64>> = Vec::new();
    for start in starts {
        let Some((xi, res)) = shooter.solve(start, coarse, opts.tol, opts.max_iterations) else {
            continue;
        };
        if res > 1e-3 * (1.0 + q1.norm()) {
            continue;
        }
        // Starts that land on the same solution are polished once.
        let dup = 1e-2 * opts.cluster_tol * (1.0 + xi.norm());
        if rough.iter().all(|r| (r - &xi).norm() > dup) {
            rough.push(xi);
        }
    }
    let mut found = Vec::new();
    for xi in rough {
        let Some((xi, res)) = shooter.solve(xi, opts.flow_steps, opts.tol * 1e-4, 20) else {
            continue;
        };
        if res < opts.tol {
            let length = (2.0 * hamiltonian(s, &Covector { x: q0.clone(), xi: xi.clone() })).sqrt();
            if length > 0.0 {
                found.push(Candidate { xi, length, residual: res });
            }
        }
    }
    found.sort_by(|a, b| {
        a.length
            .total_cmp(&b.length)
            .then_with(|| a.xi.as_slice().iter().zip(b.xi.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal))
    });
    Ok(found)
}

/// Groups candidates whose normalised covectors lie within `cluster_tol`.
pub(crate) fn cluster<'a>(q0: &DVector<f64>, cands: impl IntoIterator<Item = &'a Candidate>, cluster_tol: f64) -> Vec<&'a Candidate> {
    let mut reps: Vec<&Candidate> = Vec::new();
    for c in cands {
        let lc = c.lambda0(q0).xi;
        if reps.iter().all(|r| (r.lambda0(q0).xi - &lc).norm() > cluster_tol) {
            reps.push(c);
        }
    }
    reps
}

/// L₂ distance between two controls on grids with the same number of intervals.
fn control_gap(a: &ControlGrid, b: &ControlGrid) -> f64 {
    if a.m() != b.m() {
        return f64::INFINITY;
    }
    ((a.values() - b.values()).norm_squared() * a.step()).sqrt()
}

/// Distance by multi-start shooting: the shortest converged normal geodesic.
/// Co-minimizers within the length window are clustered by covector.
pub fn distance_shooting(s: &Structure, q0: &DVector<f64>, q1: &DVector<f64>, opts: &ShootingOptions) -> Result<DistanceResult> {
    s.check_point(q0)?;
    s.check_point(q1)?;
    let gap = (q1 - q0).norm();
    if gap < opts.tol {
        return Ok(DistanceResult::zero(Method::Shooting, gap));
    }
    let cands = shooting_candidates(s, q0, q1, opts)?;
    let Some(best) = cands.first() else {
        return Err(Error::NoConvergence(format!("no shooting start reached the target within {:e}", opts.tol)));
    };
    let window = best.length + opts.length_tol * best.length.max(1.0);
    let reps = cluster(q0, cands.iter().take_while(|c| c.length <= window), opts.cluster_tol);
    let minimizers = reps
        .iter()
        .map(|c| {
            let lambda0 = c.lambda0(q0);
            let geo = hamiltonian_flow(s, &lambda0, c.length, opts.control_m.max(1))?;
            Ok(Minimizer {
                length: c.length,
                residual: c.residual,
                control: recover_control(s, &geo)?,
                lambda0: Some(lambda0),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    // Distinct covectors may give the same curve (abnormal geodesics); keep one per curve.
    let mut distinct: Vec<Minimizer> = Vec::with_capacity(minimizers.len());
    for m in minimizers {
        if distinct.iter().all(|d| control_gap(&d.control, &m.control) > opts.cluster_tol * m.length.max(1.0)) {
            distinct.push(m);
        }
    }
    let minimizers = distinct;
    Ok(DistanceResult {
        value: best.length,
        method: Method::Shooting,
        endpoint_residual: minimizers.iter().map(|m| m.residual).fold(0.0, f64::max),
        multiplicity: minimizers.len(),
        minimizers,
        upper_bound_only: false,
        caveats: Vec::new(),
    })
}
