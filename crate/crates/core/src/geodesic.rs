//! Normal geodesics as projections of the Hamiltonian flow of
//! `H(ξ, x) = ½ Σ ⟨ξ, X_i(x)⟩²`, plus the first-order tests that
//! separate normal from abnormal behaviour: corank, the velocity test
//! against `E^t`, the Goh residual, and conjugate times.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{check_escape, jacobian_from_linearization, linearize, orthocomplement_image, image, ControlGrid, FlowOptions, Rk4};
use crate::linalg::{complement_basis, distance_to_span};
use crate::structure::Structure;

/// Default number of RK4 steps for Hamiltonian flows.
pub const DEFAULT_FLOW_STEPS: usize = 1000;

/// A point `λ = (ξ, x)` of the cotangent bundle in coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Covector {
    #[serde(serialize_with = "crate::serde_util::vector")]
    pub x: DVector<f64>,
    #[serde(serialize_with = "crate::serde_util::vector")]
    pub xi: DVector<f64>,
}

impl Covector {
    pub fn new(x: DVector<f64>, xi: DVector<f64>) -> Result<Self> {
        if x.len() != xi.len() {
            return Err(Error::Dimension { expected: x.len(), got: xi.len() });
        }
        if x.iter().chain(xi.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("covector entries must be finite".into()));
        }
        Ok(Self { x, xi })
    }

    fn to_state(&self) -> Vec<f64> {
        self.x.iter().chain(self.xi.iter()).cloned().collect()
    }

    fn from_state(y: &[f64]) -> Self {
        let n = y.len() / 2;
        Self {
            x: DVector::from_column_slice(&y[..n]),
            xi: DVector::from_column_slice(&y[n..]),
        }
    }
}

/// `⟨ξ, X_i(x)⟩` for every field.
pub fn pairings(s: &Structure, lambda: &Covector) -> DVector<f64> {
    s.frame(&lambda.x).transpose() * &lambda.xi
}

pub fn hamiltonian(s: &Structure, lambda: &Covector) -> f64 {
    0.5 * pairings(s, lambda).norm_squared()
}

/// Rescales `ξ` so that `H = ½`. Fails on directions with `H = 0`.
pub fn normalize_energy(s: &Structure, lambda: &Covector) -> Result<Covector> {
    let h = hamiltonian(s, lambda);
    if h <= 1e-24 {
        return Err(Error::InvalidParameter("covector annihilates the distribution (H = 0)".into()));
    }
    Ok(Covector {
        x: lambda.x.clone(),
        xi: &lambda.xi / (2.0 * h).sqrt(),
    })
}

/// Canonical equations `x' = ∂H/∂ξ`, `ξ' = −∂H/∂x` with exact polynomial derivatives.
pub(crate) struct HamiltonianRhs<'a> {
    s: &'a Structure,
    frame: Vec<f64>,
    jac: Vec<f64>,
    h: Vec<f64>,
}

impl<'a> HamiltonianRhs<'a> {
    pub(crate) fn new(s: &'a Structure) -> Self {
        let (n, k) = (s.dim(), s.rank());
        Self {
            s,
            frame: vec![0.0; n * k],
            jac: vec![0.0; k * n * n],
            h: vec![0.0; k],
        }
    }

    pub(crate) fn eval(&mut self, y: &[f64], dy: &mut [f64]) {
        let (n, k) = (self.s.dim(), self.s.rank());
        let (x, xi) = y.split_at(n);
        self.s.frame_into(x, &mut self.frame);
        for i in 0..k {
            self.h[i] = (0..n).map(|r| xi[r] * self.frame[i * n + r]).sum();
        }
        for r in 0..n {
            dy[r] = (0..k).map(|i| self.h[i] * self.frame[i * n + r]).sum();
        }
        dy[n..].iter_mut().for_each(|v| *v = 0.0);
        if self.s.has_constant_frame() {
            return;
        }
        self.s.frame_jacobian_into(x, &mut self.jac);
        for i in 0..k {
            let hi = self.h[i];
            if hi == 0.0 {
                continue;
            }
            for r in 0..n {
                let w = hi * xi[r];
                if w == 0.0 {
                    continue;
                }
                let row = &self.jac[(i * n + r) * n..(i * n + r + 1) * n];
                for c in 0..n {
                    dy[n + c] -= w * row[c];
                }
            }
        }
    }
}

/// Integrates the Hamiltonian system from a flat `(x, ξ)` state in `steps`
/// RK4 steps over `[0, t]`, calling `visit(step_index, state)` after each step.
pub(crate) fn integrate_hamiltonian(
    s: &Structure,
    y0: &[f64],
    t: f64,
    steps: usize,
    escape_bound: f64,
    mut visit: impl FnMut(usize, &[f64]),
) -> Result<Vec<f64>> {
    let n = s.dim();
    let mut rhs = HamiltonianRhs::new(s);
    let mut rk = Rk4::new(2 * n);
    let mut y = y0.to_vec();
    let h = t / steps as f64;
    for step in 1..=steps {
        rk.step(&mut y, h, &mut |z: &[f64], dz: &mut [f64]| rhs.eval(z, dz));
        check_escape(&y[..n], escape_bound, step as f64 * h)?;
        visit(step, &y);
    }
    Ok(y)
}

/// Sampled solution of the Hamiltonian system.
#[derive(Debug, Clone, Serialize)]
pub struct NormalGeodesic {
    pub lambda0: Covector,
    pub t_final: f64,
    pub steps: usize,
    pub path: Vec<Covector>,
    pub energy: f64,
}

impl NormalGeodesic {
    pub fn times(&self) -> Vec<f64> {
        let h = self.t_final / self.steps as f64;
        (0..=self.steps).map(|j| j as f64 * h).collect()
    }

    pub fn endpoint(&self) -> &DVector<f64> {
        &self.path.last().expect("path is never empty").x
    }
}

pub fn hamiltonian_flow(s: &Structure, lambda0: &Covector, t: f64, steps: usize) -> Result<NormalGeodesic> {
    hamiltonian_flow_bounded(s, lambda0, t, steps, FlowOptions::default().escape_bound)
}

pub fn hamiltonian_flow_bounded(
    s: &Structure,
    lambda0: &Covector,
    t: f64,
    steps: usize,
    escape_bound: f64,
) -> Result<NormalGeodesic> {
    check_flow_args(s, lambda0, t, steps)?;
    let mut path = Vec::with_capacity(steps + 1);
    path.push(lambda0.clone());
    integrate_hamiltonian(s, &lambda0.to_state(), t, steps, escape_bound, |_, y| {
        path.push(Covector::from_state(y))
    })?;
    Ok(NormalGeodesic {
        lambda0: lambda0.clone(),
        t_final: t,
        steps,
        path,
        energy: hamiltonian(s, lambda0),
    })
}

fn check_flow_args(s: &Structure, lambda0: &Covector, t: f64, steps: usize) -> Result<()> {
    s.check_point(&lambda0.x)?;
    s.check_point(&lambda0.xi)?;
    if steps == 0 {
        return Err(Error::InvalidParameter("steps must be at least 1".into()));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("flow time must be non-negative, got {t}")));
    }
    Ok(())
}

/// Final covector of the flow without storing the path.
pub fn flow_final(s: &Structure, lambda0: &Covector, t: f64, steps: usize, escape_bound: f64) -> Result<Covector> {
    check_flow_args(s, lambda0, t, steps)?;
    let y = integrate_hamiltonian(s, &lambda0.to_state(), t, steps, escape_bound, |_, _| {})?;
    Ok(Covector::from_state(&y))
}

/// `π ∘ e^{tH}(λ0)`.
pub fn exp_map(s: &Structure, lambda0: &Covector, t: f64, steps: usize) -> Result<DVector<f64>> {
    Ok(flow_final(s, lambda0, t, steps, FlowOptions::default().escape_bound)?.x)
}

/// Piecewise-constant control `u_i = ⟨λ, X_i(x)⟩` of a sampled geodesic,
/// one interval per flow step, evaluated at the interval midpoints.
/// Midpoint covectors come from a half RK4 step off each sample.
pub fn recover_control(s: &Structure, geodesic: &NormalGeodesic) -> Result<ControlGrid> {
    let (n, k, m) = (s.dim(), s.rank(), geodesic.steps);
    if geodesic.path.len() != m + 1 {
        return Err(Error::InvalidParameter("geodesic path is not sampled on its grid".into()));
    }
    let half = 0.5 * geodesic.t_final / m as f64;
    let mut rhs = HamiltonianRhs::new(s);
    let mut rk = Rk4::new(2 * n);
    let mut values = DMatrix::zeros(k, m);
    for j in 0..m {
        let mut y = geodesic.path[j].to_state();
        rk.step(&mut y, half, &mut |z: &[f64], dz: &mut [f64]| rhs.eval(z, dz));
        let p = pairings(s, &Covector::from_state(&y));
        values.column_mut(j).copy_from(&p);
    }
    ControlGrid::new(geodesic.t_final, values)
}

/// Ranks of the discretised endpoint differential on all controls and on `u^⊥`.
#[derive(Debug, Clone, Serialize)]
pub struct CorankReport {
    pub corank: usize,
    pub rank_full: usize,
    pub rank_perp: usize,
    pub singular_values: Vec<f64>,
    pub singular_values_full: Vec<f64>,
    /// `false` when `D_uF(u^⊥)` is the whole tangent space (corank 0).
    pub is_geodesic: bool,
}

pub fn corank(s: &Structure, q0: &DVector<f64>, u: &ControlGrid, tol: f64, opts: &FlowOptions) -> Result<CorankReport> {
    if u.l2_norm_sq() == 0.0 {
        return Err(Error::InvalidParameter("corank needs a nonzero control".into()));
    }
    let lin = linearize(s, q0, u, opts)?;
    let jac = jacobian_from_linearization(&lin, u);
    let full = image(&jac, tol);
    let perp = orthocomplement_image(&jac, u, tol)?;
    Ok(CorankReport {
        corank: perp.codimension,
        rank_full: full.rank,
        rank_perp: perp.rank,
        singular_values: perp.singular_values,
        singular_values_full: full.singular_values,
        is_geodesic: perp.codimension > 0,
    })
}

/// Normal/abnormal flags for a geodesic candidate.
#[derive(Debug, Clone, Serialize)]
pub struct Classification {
    /// `γ'(t) ∉ E^t`.
    pub normal_candidate: bool,
    /// `γ'(t) ∈ E^t` within tolerance.
    pub abnormal_candidate: bool,
    /// Full differential not onto (`rank_full < n`): the control is a
    /// critical point of the endpoint map.
    pub critical: bool,
    /// Relative distance of `γ'(t)` from `E^t`.
    pub velocity_distance: f64,
    pub corank: usize,
}

pub fn classify(s: &Structure, q0: &DVector<f64>, u: &ControlGrid, tol: f64, opts: &FlowOptions) -> Result<Classification> {
    let lin = linearize(s, q0, u, opts)?;
    let jac = jacobian_from_linearization(&lin, u);
    let full = image(&jac, tol);
    let perp = orthocomplement_image(&jac, u, tol)?;
    if perp.codimension == 0 {
        return Err(Error::InvalidParameter("control is not a geodesic (corank 0)".into()));
    }
    let end = lin.trajectory.endpoint();
    let velocity = s.frame(end) * DVector::from_column_slice(u.value(u.m() - 1));
    let speed = velocity.norm();
    let velocity_distance = if speed > 0.0 {
        distance_to_span(&velocity, &perp.basis) / speed
    } else {
        0.0
    };
    let abnormal = velocity_distance <= tol.max(1e-12).sqrt();
    Ok(Classification {
        normal_candidate: !abnormal,
        abnormal_candidate: abnormal,
        critical: full.rank < s.dim(),
        velocity_distance,
        corank: perp.codimension,
    })
}

/// Pulls `λ_t` back along the flow of `u` and returns
/// `max_τ max_g |⟨λ_τ, g(γ(τ))⟩| / |λ_τ|` over the Δ² generators `g`
/// (frame fields and their pairwise brackets) at every grid instant.
pub fn goh_residual(
    s: &Structure,
    q0: &DVector<f64>,
    u: &ControlGrid,
    lambda_t: &DVector<f64>,
    rank_tol: f64,
    annihilation_tol: f64,
    opts: &FlowOptions,
) -> Result<f64> {
    s.check_point(lambda_t)?;
    let norm = lambda_t.norm();
    if norm == 0.0 {
        return Err(Error::InvalidParameter("covector must be nonzero".into()));
    }
    let lin = linearize(s, q0, u, opts)?;
    let jac = jacobian_from_linearization(&lin, u);
    let e = orthocomplement_image(&jac, u, rank_tol)?;
    let pairing = (e.basis.transpose() * lambda_t).norm() / norm;
    if pairing > annihilation_tol {
        return Err(Error::NotAnnihilating(pairing));
    }
    Ok(pullback_residual(s, &lin.trajectory.states, &lin.transitions, lambda_t))
}

fn pullback_residual(s: &Structure, states: &[DVector<f64>], transitions: &[DMatrix<f64>], lambda_t: &DVector<f64>) -> f64 {
    let m = transitions.len();
    let mut lambda = lambda_t.clone();
    let mut worst = 0.0_f64;
    for j in (0..=m).rev() {
        if j < m {
            lambda = transitions[j].transpose() * &lambda;
        }
        let ln = lambda.norm();
        if ln == 0.0 {
            continue;
        }
        for g in s.second_layer_generators(&states[j]) {
            worst = worst.max(g.dot(&lambda).abs() / ln);
        }
    }
    worst
}

/// Goh residuals for an orthonormal basis of the annihilator of `E^t`.
#[derive(Debug, Clone, Serialize)]
pub struct GohReport {
    /// Smallest residual over the basis.
    pub residual: f64,
    #[serde(serialize_with = "crate::serde_util::vector")]
    pub covector: DVector<f64>,
    #[serde(serialize_with = "crate::serde_util::weighted_vectors")]
    pub per_basis: Vec<(DVector<f64>, f64)>,
    pub codimension: usize,
}

pub fn goh_report(s: &Structure, q0: &DVector<f64>, u: &ControlGrid, rank_tol: f64, opts: &FlowOptions) -> Result<GohReport> {
    let lin = linearize(s, q0, u, opts)?;
    let jac = jacobian_from_linearization(&lin, u);
    let e = orthocomplement_image(&jac, u, rank_tol)?;
    if e.codimension == 0 {
        return Err(Error::InvalidParameter("E^t is the whole tangent space; no annihilating covector".into()));
    }
    let per_basis: Vec<(DVector<f64>, f64)> = e
        .annihilator
        .column_iter()
        .map(|c| {
            let c = c.into_owned();
            let r = pullback_residual(s, &lin.trajectory.states, &lin.transitions, &c);
            (c, r)
        })
        .collect();
    let (covector, residual) = per_basis
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .expect("codimension >= 1");
    Ok(GohReport {
        residual,
        covector,
        per_basis,
        codimension: e.codimension,
    })
}

/// Settings for [`conjugate_times`].
#[derive(Debug, Clone, Copy)]
pub struct ConjugateScan {
    pub scan_points: usize,
    pub fd_step: f64,
    /// Threshold on the normalised determinant for near-zero detection.
    pub tol: f64,
    /// Bisection stops once the bracket is shorter than this.
    pub resolution: f64,
    /// Largest RK4 step used for the flows.
    pub max_step: f64,
    pub escape_bound: f64,
}

impl Default for ConjugateScan {
    fn default() -> Self {
        Self {
            scan_points: 400,
            fd_step: 1e-5,
            tol: 1e-6,
            resolution: 1e-8,
            max_step: 2e-3,
            escape_bound: FlowOptions::default().escape_bound,
        }
    }
}

/// Evaluates the normalised determinant of `[∂exp/∂λ · B | x'(t)]` at the
/// requested (increasing) times, where `B` spans the tangent of `{H = ½}`.
struct ConjugateProbe<'a> {
    s: &'a Structure,
    starts: Vec<Vec<f64>>,
    tangent_dim: usize,
    fd_step: f64,
    max_step: f64,
    escape_bound: f64,
}

impl<'a> ConjugateProbe<'a> {
    fn new(s: &'a Structure, lambda0: &Covector, cfg: &ConjugateScan) -> Result<Self> {
        let n = s.dim();
        let grad = s.frame(&lambda0.x) * pairings(s, lambda0);
        let basis = complement_basis(&grad);
        let base = lambda0.to_state();
        let mut starts = vec![base.clone()];
        for b in basis.column_iter() {
            for sign in [1.0, -1.0] {
                let mut y = base.clone();
                for r in 0..n {
                    y[n + r] += sign * cfg.fd_step * b[r];
                }
                starts.push(y);
            }
        }
        Ok(Self {
            s,
            starts,
            tangent_dim: n - 1,
            fd_step: cfg.fd_step,
            max_step: cfg.max_step,
            escape_bound: cfg.escape_bound,
        })
    }

    fn determinant(&self, states: &[Vec<f64>]) -> f64 {
        let n = self.s.dim();
        let mut m = DMatrix::zeros(n, n);
        for a in 0..self.tangent_dim {
            let (p, q) = (&states[1 + 2 * a], &states[2 + 2 * a]);
            for r in 0..n {
                m[(r, a)] = (p[r] - q[r]) / (2.0 * self.fd_step);
            }
        }
        let base = Covector::from_state(&states[0]);
        let vel = self.s.frame(&base.x) * pairings(self.s, &base);
        m.column_mut(n - 1).copy_from(&vel);
        let scale: f64 = m.column_iter().map(|c| c.norm()).product();
        if scale == 0.0 {
            return 0.0;
        }
        m.determinant() / scale
    }

    /// Determinant at each multiple of `t_max / points`.
    fn scan(&self, t_max: f64, points: usize) -> Result<Vec<(f64, f64)>> {
        let sub = ((t_max / points as f64) / self.max_step).ceil().max(1.0) as usize;
        let total = sub * points;
        let mut samples: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(self.starts.len()); points];
        for y0 in &self.starts {
            integrate_hamiltonian(self.s, y0, t_max, total, self.escape_bound, |step, y| {
                if step % sub == 0 {
                    samples[step / sub - 1].push(y.to_vec());
                }
            })?;
        }
        Ok(samples
            .iter()
            .enumerate()
            .map(|(i, st)| ((i + 1) as f64 * t_max / points as f64, self.determinant(st)))
            .collect())
    }

    fn at(&self, t: f64) -> Result<f64> {
        let steps = (t / self.max_step).ceil().max(1.0) as usize;
        let states = self
            .starts
            .iter()
            .map(|y0| integrate_hamiltonian(self.s, y0, t, steps, self.escape_bound, |_, _| {}))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.determinant(&states))
    }
}

/// Conjugate times of the normal geodesic from `λ0` (with `H(λ0) = ½`) in
/// `(0, t_max]`: sign changes of the normalised exponential-map determinant,
/// refined by bisection, plus isolated near-zeros below `tol`. A zero only
/// counts once the determinant has exceeded `10·tol` earlier in the scan.
pub fn conjugate_times(s: &Structure, lambda0: &Covector, t_max: f64, cfg: &ConjugateScan) -> Result<Vec<f64>> {
    let h = hamiltonian(s, lambda0);
    if (h - 0.5).abs() > 1e-6 {
        return Err(Error::InvalidParameter(format!("conjugate scan needs H(λ0) = 1/2, got {h}")));
    }
    if cfg.scan_points < 2 || !(t_max > 0.0) {
        return Err(Error::InvalidParameter("conjugate scan needs t_max > 0 and at least 2 points".into()));
    }
    if s.dim() < 2 {
        return Ok(Vec::new());
    }
    let probe = ConjugateProbe::new(s, lambda0, cfg)?;
    let samples = probe.scan(t_max, cfg.scan_points)?;
    let mut found = Vec::new();
    let mut armed = false;
    for w in 0..samples.len() {
        let (t, d) = samples[w];
        if w > 0 && armed {
            let (tp, dp) = samples[w - 1];
            if dp != 0.0 && d != 0.0 && dp.signum() != d.signum() {
                found.push(bisect(&probe, tp, dp, t, cfg.resolution)?);
            } else if w + 1 < samples.len() {
                let dn = samples[w + 1].1;
                let is_min = d.abs() < dp.abs() && d.abs() <= dn.abs() && d.signum() == dn.signum();
                if is_min && d.abs() < cfg.tol {
                    found.push(t);
                }
            }
        }
        if d.abs() > 10.0 * cfg.tol {
            armed = true;
        }
    }
    Ok(found)
}

fn bisect(probe: &ConjugateProbe, mut a: f64, da: f64, mut b: f64, resolution: f64) -> Result<f64> {
    let sa = da.signum();
    while b - a > resolution {
        let mid = 0.5 * (a + b);
        let dm = probe.at(mid)?;
        if dm == 0.0 {
            return Ok(mid);
        }
        if dm.signum() == sa {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::endpoint;
    use approx::assert_relative_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    fn cov(x: &[f64], xi: &[f64]) -> Covector {
        Covector::new(v(x), v(xi)).unwrap()
    }

    #[test]
    fn hamiltonian_examples() {
        let f = Structure::flat(3).unwrap();
        assert_relative_eq!(hamiltonian(&f, &cov(&[1.0, 2.0, 3.0], &[1.0, -2.0, 2.0])), 4.5);
        let e = Structure::example(1).unwrap();
        assert_relative_eq!(hamiltonian(&e, &cov(&[0.0; 3], &[0.0, 1.0, 5.0])), 0.5);
        assert_eq!(hamiltonian(&e, &cov(&[1.0, 1.0, 1.0], &[0.0; 3])), 0.0);
    }

    #[test]
    fn flat_flow_is_free_motion() {
        let f = Structure::flat(2).unwrap();
        let g = hamiltonian_flow(&f, &cov(&[0.0, 0.0], &[0.6, 0.8]), 1.5, 100).unwrap();
        let end = g.path.last().unwrap();
        assert!((&end.x - v(&[0.9, 1.2])).norm() < 1e-13);
        assert!((&end.xi - v(&[0.6, 0.8])).norm() < 1e-15);
    }

    #[test]
    fn decoupled_and_vertical_flows() {
        let e1 = Structure::example(1).unwrap();
        let g = hamiltonian_flow(&e1, &cov(&[0.0; 3], &[1.0, 0.0, 0.0]), 2.0, 200).unwrap();
        let end = g.path.last().unwrap();
        assert!((&end.x - v(&[2.0, 0.0, 0.0])).norm() < 1e-13);
        assert!((&end.xi - v(&[1.0, 0.0, 0.0])).norm() < 1e-13);
        for p in 1..4 {
            let e = Structure::example(p).unwrap();
            let x = exp_map(&e, &cov(&[0.0; 3], &[0.0, 1.0, 0.0]), 1.3, 100).unwrap();
            assert!((x - v(&[0.0, 1.3, 0.0])).norm() < 1e-13);
        }
    }

    #[test]
    fn energy_is_conserved() {
        let e1 = Structure::example(1).unwrap();
        let lam = normalize_energy(&e1, &cov(&[0.0; 3], &[0.3, -0.9, 2.5])).unwrap();
        let g = hamiltonian_flow(&e1, &lam, 2.0, DEFAULT_FLOW_STEPS).unwrap();
        for c in &g.path {
            assert!((hamiltonian(&e1, c) - 0.5).abs() < 1e-8);
        }
    }

    #[test]
    fn recovered_control_examples() {
        let f = Structure::flat(2).unwrap();
        let g = hamiltonian_flow(&f, &cov(&[0.0, 0.0], &[0.3, -0.4]), 1.0, 20).unwrap();
        let u = recover_control(&f, &g).unwrap();
        for j in 0..u.m() {
            assert_relative_eq!(u.value(j)[0], 0.3, epsilon = 1e-15);
            assert_relative_eq!(u.value(j)[1], -0.4, epsilon = 1e-15);
        }
        let e1 = Structure::example(1).unwrap();
        let g = hamiltonian_flow(&e1, &cov(&[0.0; 3], &[0.0, 1.0, 0.0]), 1.0, 50).unwrap();
        let u = recover_control(&e1, &g).unwrap();
        assert!(u.values().column_iter().all(|c| (c - v(&[0.0, 1.0])).norm() < 1e-14));

        let lam = normalize_energy(&e1, &cov(&[0.0; 3], &[0.8, 0.6, 1.7])).unwrap();
        let g = hamiltonian_flow(&e1, &lam, 1.5, 600).unwrap();
        let u = recover_control(&e1, &g).unwrap();
        for c in u.values().column_iter() {
            assert!((c.norm() - 1.0).abs() < 1e-6);
        }
        // endpoint of the recovered control agrees with the exponential map
        let q = endpoint(&e1, &lam.x, &u, &FlowOptions::default()).unwrap();
        assert!((q - g.endpoint()).norm() < 1e-5);
    }

    #[test]
    fn corank_examples() {
        let u = ControlGrid::constant(&[0.0, 1.0], 1.0, 100).unwrap();
        let o = FlowOptions::default();
        let r1 = corank(&Structure::example(1).unwrap(), &v(&[0.0; 3]), &u, 1e-9, &o).unwrap();
        assert_eq!((r1.corank, r1.rank_full, r1.rank_perp), (1, 3, 2));
        let r2 = corank(&Structure::example(2).unwrap(), &v(&[0.0; 3]), &u, 1e-9, &o).unwrap();
        assert_eq!((r2.corank, r2.rank_full), (2, 2));
        let f = Structure::flat(2).unwrap();
        let r = corank(&f, f.q0(), &ControlGrid::constant(&[1.0, 0.0], 1.0, 10).unwrap(), 1e-9, &o).unwrap();
        assert_eq!(r.corank, 1);
        assert!(r.is_geodesic);
        // A control with two independent directions on flat(2) is not a geodesic.
        let bent = ControlGrid::from_fn(2, 10, 1.0, |t| if t < 0.5 { vec![1.0, 0.0] } else { vec![0.0, 1.0] }).unwrap();
        let r = corank(&f, f.q0(), &bent, 1e-9, &o).unwrap();
        assert!(!r.is_geodesic);
        assert!(corank(&f, f.q0(), &ControlGrid::constant(&[0.0, 0.0], 1.0, 4).unwrap(), 1e-9, &o).is_err());
    }

    #[test]
    fn corank_invariants() {
        let o = FlowOptions::default();
        for (p, expected) in [(1, 1), (2, 2)] {
            let s = Structure::example(p).unwrap();
            for m in [25, 50, 100] {
                let u = ControlGrid::constant(&[0.0, 1.0], 1.0, m).unwrap();
                assert_eq!(corank(&s, s.q0(), &u, 1e-9, &o).unwrap().corank, expected);
                // same curve, faster parameterisation
                let fast = u.reparameterized(2.0).unwrap();
                assert_eq!(corank(&s, s.q0(), &fast, 1e-9, &o).unwrap().corank, expected);
            }
        }
    }

    #[test]
    fn classification_examples() {
        let o = FlowOptions::default();
        let f = Structure::flat(2).unwrap();
        let c = classify(&f, f.q0(), &ControlGrid::constant(&[1.0, 0.0], 1.0, 10).unwrap(), 1e-9, &o).unwrap();
        assert!(c.normal_candidate && !c.abnormal_candidate && !c.critical);
        let u = ControlGrid::constant(&[0.0, 1.0], 1.0, 100).unwrap();
        let e2 = Structure::example(2).unwrap();
        let c = classify(&e2, e2.q0(), &u, 1e-9, &o).unwrap();
        assert!(c.critical);
        assert_eq!(c.corank, 2);
        let e1 = Structure::example(1).unwrap();
        let c = classify(&e1, e1.q0(), &u, 1e-9, &o).unwrap();
        assert!(c.normal_candidate && !c.critical);
    }

    #[test]
    fn goh_residual_examples() {
        let o = FlowOptions::default();
        let u = ControlGrid::constant(&[0.0, 1.0], 1.0, 100).unwrap();
        let e2 = Structure::example(2).unwrap();
        let r = goh_residual(&e2, e2.q0(), &u, &v(&[0.0, 0.0, 1.0]), 1e-9, 1e-9, &o).unwrap();
        assert!(r < 1e-8);
        let rep = goh_report(&e2, e2.q0(), &u, 1e-9, &o).unwrap();
        assert!(rep.residual < 1e-8 && rep.codimension == 2);

        let e1 = Structure::example(1).unwrap();
        // E^t = span{e1, e3}; (0,0,1) does not annihilate it.
        assert!(matches!(
            goh_residual(&e1, e1.q0(), &u, &v(&[0.0, 0.0, 1.0]), 1e-9, 1e-9, &o),
            Err(Error::NotAnnihilating(_))
        ));
        let r = goh_residual(&e1, e1.q0(), &u, &v(&[0.0, 1.0, 0.0]), 1e-9, 1e-9, &o).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flat_has_no_conjugate_times() {
        let f = Structure::flat(3).unwrap();
        let lam = cov(&[0.0; 3], &[0.6, 0.0, 0.8]);
        let cfg = ConjugateScan { scan_points: 50, ..Default::default() };
        assert!(conjugate_times(&f, &lam, 5.0, &cfg).unwrap().is_empty());
        let e1 = Structure::example(1).unwrap();
        let straight = cov(&[0.0; 3], &[1.0, 0.0, 0.0]);
        assert!(conjugate_times(&e1, &straight, 10.0, &cfg).unwrap().is_empty());
        assert!(conjugate_times(&e1, &cov(&[0.0; 3], &[2.0, 0.0, 0.0]), 1.0, &cfg).is_err());
    }

    #[test]
    fn heisenberg_first_conjugate_time() {
        let e1 = Structure::example(1).unwrap();
        for c in [2.0, 3.0] {
            let lam = cov(&[0.0; 3], &[1.0, 0.0, c]);
            let times = conjugate_times(&e1, &lam, 1.2 * 2.0 * std::f64::consts::PI / c, &ConjugateScan::default()).unwrap();
            assert!(!times.is_empty());
            assert!((times[0] - 2.0 * std::f64::consts::PI / c).abs() < 1e-5, "{times:?}");
        }
    }
}
