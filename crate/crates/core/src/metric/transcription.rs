use nalgebra::{DMatrix, DVector};

use super::sampling::CovectorSampler;
use super::{DistanceResult, Method, Minimizer};
use crate::error::{Error, Result};
use crate::flow::{endpoint, jacobian_from_linearization, linearize, ControlGrid, FlowOptions};
use crate::structure::Structure;

/// Settings for the direct-transcription solver.
#[derive(Debug, Clone)]
pub struct TranscriptionOptions {
    pub m: usize,
    /// Cold starts: one least-squares constant control plus random
    /// low-frequency controls.
    pub starts: usize,
    /// Penalty rounds; the weight grows by `penalty_growth` each round.
    pub rounds: usize,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_inner: usize,
    /// Endpoint tolerance.
    pub tol: f64,
    pub seed: u64,
    /// Additional initial controls (any grid and horizon).
    pub warm_starts: Vec<ControlGrid>,
    pub flow: FlowOptions,
}

impl Default for TranscriptionOptions {
    fn default() -> Self {
        Self {
            m: 100,
            starts: 6,
            rounds: 8,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            max_inner: 400,
            tol: 1e-6,
            seed: 0,
            warm_starts: Vec::new(),
            flow: FlowOptions::default(),
        }
    }
}

/// Augmented Lagrangian `½|w|² + yᵀr + ½ρ|r|²` in L₂ coordinates on `[0, 1]`,
/// where `r = F(w) − q1`.
struct Problem<'a> {
    s: &'a Structure,
    q0: &'a DVector<f64>,
    q1: &'a DVector<f64>,
    m: usize,
    flow: FlowOptions,
}

struct Eval {
    f: f64,
    grad: DVector<f64>,
    r: DVector<f64>,
}

impl Problem<'_> {
    fn control(&self, w: &DVector<f64>) -> Result<ControlGrid> {
        ControlGrid::from_l2_coordinates(self.s.rank(), self.m, 1.0, w.as_slice())
    }

    fn eval(&self, w: &DVector<f64>, y: &DVector<f64>, rho: f64) -> Option<Eval> {
        let u = self.control(w).ok()?;
        let lin = linearize(self.s, self.q0, &u, &self.flow).ok()?;
        let jac = jacobian_from_linearization(&lin, &u);
        let r = lin.trajectory.endpoint() - self.q1;
        let f = 0.5 * w.norm_squared() + y.dot(&r) + 0.5 * rho * r.norm_squared();
        let grad = w + jac.matrix.transpose() * (y + &r * rho);
        f.is_finite().then_some(Eval { f, grad, r })
    }

    /// BFGS with Armijo backtracking; returns whether the gradient test passed.
    fn minimize(&self, w: &mut DVector<f64>, y: &DVector<f64>, rho: f64, max_inner: usize) -> Option<bool> {
        let dim = w.len();
        let mut h = DMatrix::<f64>::identity(dim, dim);
        let mut fresh = true;
        let mut cur = self.eval(w, y, rho)?;
        for _ in 0..max_inner {
            if cur.grad.norm() <= 1e-9 * (1.0 + w.norm()) * rho.max(1.0) {
                return Some(true);
            }
            let mut d = -(&h * &cur.grad);
            let mut slope = cur.grad.dot(&d);
            if slope >= 0.0 {
                h.fill_with_identity();
                d = -cur.grad.clone();
                slope = -cur.grad.norm_squared();
            }
            let mut alpha = 1.0;
            let mut next = None;
            for _ in 0..40 {
                let trial = &*w + &d * alpha;
                if let Some(e) = self.eval(&trial, y, rho) {
                    if e.f <= cur.f + 1e-4 * alpha * slope {
                        next = Some((trial, e));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            let Some((trial, e)) = next else {
                if fresh {
                    return Some(false);
                }
                h.fill_with_identity();
                fresh = true;
                continue;
            };
            let step = &trial - &*w;
            let dg = &e.grad - &cur.grad;
            let sy = step.dot(&dg);
            if sy > 1e-12 * step.norm() * dg.norm() {
                let hy = &h * &dg;
                let coef = (sy + dg.dot(&hy)) / (sy * sy);
                h += &step * step.transpose() * coef - (&hy * step.transpose() + &step * hy.transpose()) / sy;
                fresh = false;
            }
            *w = trial;
            cur = e;
        }
        Some(false)
    }

    /// Runs the penalty schedule from `w`; returns (w, residual, capped).
    fn solve(&self, mut w: DVector<f64>, opts: &TranscriptionOptions) -> Option<(DVector<f64>, f64, bool)> {
        let n = self.s.dim();
        let mut y = DVector::zeros(n);
        let mut rho = opts.initial_penalty;
        let mut converged = false;
        let mut residual = f64::INFINITY;
        for _ in 0..opts.rounds {
            converged = self.minimize(&mut w, &y, rho, opts.max_inner)?;
            let r = self.eval(&w, &y, rho)?.r;
            residual = r.norm();
            if residual < opts.tol && converged {
                break;
            }
            y += &r * rho;
            rho *= opts.penalty_growth;
        }
        Some((w, residual, !converged))
    }
}

/// Re-samples a control onto `m` intervals of `[0, 1]` (same curve) in L₂ coordinates.
fn to_unit_coordinates(u: &ControlGrid, m: usize) -> DVector<f64> {
    let k = u.k();
    let speedup = u.t_final();
    let mut w = DVector::zeros(k * m);
    for j in 0..m {
        let tau = (j as f64 + 0.5) / m as f64;
        let src = ((tau * u.m() as f64) as usize).min(u.m() - 1);
        for i in 0..k {
            w[j * k + i] = u.value(src)[i] * speedup / (m as f64).sqrt();
        }
    }
    w
}

fn initial_guesses(s: &Structure, q0: &DVector<f64>, q1: &DVector<f64>, opts: &TranscriptionOptions) -> Vec<DVector<f64>> {
    let (k, m) = (s.rank(), opts.m);
    let mut out: Vec<DVector<f64>> = opts.warm_starts.iter().map(|u| to_unit_coordinates(u, m)).collect();
    let gap = q1 - q0;
    let scale = gap.norm().max(gap.norm().sqrt());
    let mut cold = opts.starts;
    if cold > 0 {
        let frame = s.frame(q0);
        if let Ok(c) = frame.clone().svd(true, true).solve(&gap, 1e-12) {
            if c.norm() > 1e-12 {
                out.push(DVector::from_fn(k * m, |idx, _| c[idx % k] / (m as f64).sqrt()));
                cold -= 1;
            }
        }
    }
    let mut rng = CovectorSampler::new(opts.seed);
    for _ in 0..cold {
        let modes = 3;
        let coef = rng.gaussian(2 * modes * k) * (scale / (modes as f64).sqrt());
        let w = DVector::from_fn(k * m, |idx, _| {
            let (j, i) = (idx / k, idx % k);
            let tau = (j as f64 + 0.5) / m as f64;
            let val: f64 = (0..modes)
                .map(|f| {
                    let a = 2.0 * std::f64::consts::PI * f as f64 * tau;
                    coef[(i * modes + f) * 2] * a.cos() + coef[(i * modes + f) * 2 + 1] * a.sin()
                })
                .sum();
            val / (m as f64).sqrt()
        });
        out.push(w);
    }
    out
}

/// Distance by direct transcription: minimises the energy of piecewise-constant
/// controls subject to the endpoint constraint. Any feasible control gives
/// an upper bound; `upper_bound_only` is set when iteration caps were hit.
pub fn distance_transcription(s: &Structure, q0: &DVector<f64>, q1: &DVector<f64>, opts: &TranscriptionOptions) -> Result<DistanceResult> {
    s.check_point(q0)?;
    s.check_point(q1)?;
    if opts.m < 10 {
        return Err(Error::InvalidParameter(format!("transcription needs m ≥ 10, got {}", opts.m)));
    }
    let gap = (q1 - q0).norm();
    if gap < opts.tol {
        let mut res = DistanceResult::zero(Method::Transcription, gap);
        res.minimizers.push(Minimizer {
            length: 0.0,
            residual: gap,
            lambda0: None,
            control: ControlGrid::new(1.0, DMatrix::zeros(s.rank(), opts.m))?,
        });
        return Ok(res);
    }
    let problem = Problem {
        s,
        q0,
        q1,
        m: opts.m,
        flow: opts.flow,
    };
    let mut best: Option<(DVector<f64>, f64, bool)> = None;
    for w0 in initial_guesses(s, q0, q1, opts) {
        let Some((w, res, capped)) = problem.solve(w0, opts) else {
            continue;
        };
        if res >= opts.tol {
            continue;
        }
        if best.as_ref().is_none_or(|b| w.norm() < b.0.norm()) {
            best = Some((w, res, capped));
        }
    }
    let Some((w, _, capped)) = best else {
        return Err(Error::NoConvergence(format!("no transcription start met the endpoint tolerance {:e}", opts.tol)));
    };
    let value = w.norm();
    let u = problem.control(&w)?;
    let residual = (endpoint(s, q0, &u, &opts.flow)? - q1).norm();
    let control = u.reparameterized(1.0 / value)?;
    let mut caveats = Vec::new();
    if capped {
        caveats.push("iteration cap reached: value is an upper bound only".to_string());
    }
    Ok(DistanceResult {
        value,
        method: Method::Transcription,
        minimizers: vec![Minimizer {
            length: value,
            residual,
            lambda0: None,
            control,
        }],
        endpoint_residual: residual,
        multiplicity: 1,
        upper_bound_only: capped,
        caveats,
    })
}
