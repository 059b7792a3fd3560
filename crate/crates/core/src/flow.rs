//! Control-driven flows: the Cauchy problem `q' = Σ u_i(τ) X_i(q)` for
//! piecewise-constant controls, its endpoint map, and the endpoint map's
//! differential on the discretised control space.
//!
//! Each control interval is integrated with fixed-step RK4. The differential
//! is obtained by integrating the variational system alongside the state with
//! the same RK4 steps, which yields the exact derivative of the discrete flow.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{left_svd, LeftSvd};
use crate::structure::Structure;

/// Piecewise-constant control on a uniform grid of `m` intervals over
/// `[0, t_final]`. Column `j` of `values` is the control on interval `j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlGrid {
    t_final: f64,
    #[serde(serialize_with = "crate::serde_util::columns")]
    values: DMatrix<f64>,
}

impl ControlGrid {
    pub fn new(t_final: f64, values: DMatrix<f64>) -> Result<Self> {
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::InvalidParameter(format!("t_final must be positive, got {t_final}")));
        }
        if values.ncols() == 0 || values.nrows() == 0 {
            return Err(Error::InvalidParameter("control grid needs k >= 1 and m >= 1".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("control values must be finite".into()));
        }
        Ok(Self { t_final, values })
    }

    /// Constant control `value` on `m` intervals.
    pub fn constant(value: &[f64], t_final: f64, m: usize) -> Result<Self> {
        let k = value.len();
        Self::new(t_final, DMatrix::from_fn(k, m, |i, _| value[i]))
    }

    /// Samples `f` at interval midpoints.
    pub fn from_fn(k: usize, m: usize, t_final: f64, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let h = t_final / m as f64;
        let mut values = DMatrix::zeros(k, m);
        for j in 0..m {
            let v = f((j as f64 + 0.5) * h);
            if v.len() != k {
                return Err(Error::Dimension { expected: k, got: v.len() });
            }
            values.column_mut(j).copy_from_slice(&v);
        }
        Self::new(t_final, values)
    }

    /// Inverse of [`ControlGrid::to_l2_coordinates`].
    pub fn from_l2_coordinates(k: usize, m: usize, t_final: f64, w: &[f64]) -> Result<Self> {
        if w.len() != k * m {
            return Err(Error::Dimension { expected: k * m, got: w.len() });
        }
        let scale = 1.0 / (t_final / m as f64).sqrt();
        Self::new(t_final, DMatrix::from_iterator(k, m, w.iter().map(|x| x * scale)))
    }

    pub fn k(&self) -> usize {
        self.values.nrows()
    }

    pub fn m(&self) -> usize {
        self.values.ncols()
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    /// Interval length `t_final / m`.
    pub fn step(&self) -> f64 {
        self.t_final / self.m() as f64
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn value(&self, j: usize) -> &[f64] {
        let k = self.k();
        &self.values.as_slice()[j * k..(j + 1) * k]
    }

    /// `‖u‖² = h Σ_j |u_j|²`.
    pub fn l2_norm_sq(&self) -> f64 {
        self.step() * self.values.norm_squared()
    }

    pub fn l2_inner(&self, other: &ControlGrid) -> f64 {
        self.step() * self.values.dot(&other.values)
    }

    /// Length of the horizontal curve, `Σ_j h |u_j|`.
    pub fn discrete_length(&self) -> f64 {
        let h = self.step();
        self.values.column_iter().map(|c| h * c.norm()).sum()
    }

    /// Coordinates `√h · u_{ij}` (index `j·k + i`) in which the L₂ inner
    /// product becomes the Euclidean one.
    pub fn to_l2_coordinates(&self) -> DVector<f64> {
        DVector::from_column_slice(self.values.as_slice()) * self.step().sqrt()
    }

    pub fn scaled(&self, c: f64) -> ControlGrid {
        Self {
            t_final: self.t_final,
            values: &self.values * c,
        }
    }

    fn check_compatible(&self, other: &ControlGrid) -> Result<()> {
        if self.k() != other.k() || self.m() != other.m() || (self.t_final - other.t_final).abs() > 1e-12 * self.t_final {
            return Err(Error::InvalidParameter("control grids do not share (k, m, t_final)".into()));
        }
        Ok(())
    }

    /// `self + c · other` on a shared grid.
    pub fn add_scaled(&self, c: f64, other: &ControlGrid) -> Result<ControlGrid> {
        self.check_compatible(other)?;
        Ok(Self {
            t_final: self.t_final,
            values: &self.values + &other.values * c,
        })
    }

    /// Intervals `[from, to)` as a control on `[0, (to-from)·h]`.
    pub fn slice(&self, from: usize, to: usize) -> Result<ControlGrid> {
        if from >= to || to > self.m() {
            return Err(Error::InvalidParameter(format!("bad interval range {from}..{to}")));
        }
        Self::new(
            self.step() * (to - from) as f64,
            self.values.columns(from, to - from).into_owned(),
        )
    }

    /// Same curve on a grid refined by an integer factor.
    pub fn refine(&self, factor: usize) -> ControlGrid {
        let (k, m) = (self.k(), self.m());
        Self {
            t_final: self.t_final,
            values: DMatrix::from_fn(k, m * factor, |i, j| self.values[(i, j / factor)]),
        }
    }

    /// Same curve traversed `c` times faster: time scaled by `1/c`, speed by `c`.
    pub fn reparameterized(&self, c: f64) -> Result<ControlGrid> {
        Self::new(self.t_final / c, &self.values * c)
    }

    fn grid_index(&self, tau: f64) -> Result<usize> {
        let x = tau / self.step();
        let j = x.round();
        if !(0.0..=self.m() as f64).contains(&j) || (x - j).abs() > 1e-9 * self.m().max(1) as f64 {
            return Err(Error::OffGrid(tau));
        }
        Ok(j as usize)
    }
}

/// Fixed-step integration settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    /// RK4 substeps per control interval.
    pub substeps: usize,
    /// Any state coordinate beyond this magnitude aborts the integration.
    pub escape_bound: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            substeps: 4,
            escape_bound: 1e6,
        }
    }
}

impl FlowOptions {
    pub fn with_substeps(substeps: usize) -> Self {
        Self {
            substeps,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.substeps == 0 {
            return Err(Error::InvalidParameter("substeps must be at least 1".into()));
        }
        Ok(())
    }
}

/// States of the controlled flow at the grid instants.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    #[serde(serialize_with = "crate::serde_util::vectors")]
    pub states: Vec<DVector<f64>>,
    pub substeps: usize,
}

impl Trajectory {
    pub fn endpoint(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has at least the initial state")
    }
}

/// Classical RK4 on a flat state vector with reusable stage buffers.
pub(crate) struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub(crate) fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    pub(crate) fn step<F: FnMut(&[f64], &mut [f64])>(&mut self, y: &mut [f64], h: f64, f: &mut F) {
        let d = y.len();
        f(y, &mut self.k1);
        for i in 0..d {
            self.tmp[i] = y[i] + 0.5 * h * self.k1[i];
        }
        f(&self.tmp, &mut self.k2);
        for i in 0..d {
            self.tmp[i] = y[i] + 0.5 * h * self.k2[i];
        }
        f(&self.tmp, &mut self.k3);
        for i in 0..d {
            self.tmp[i] = y[i] + h * self.k3[i];
        }
        f(&self.tmp, &mut self.k4);
        for i in 0..d {
            y[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

pub(crate) fn check_escape(state: &[f64], bound: f64, time: f64) -> Result<()> {
    if state.iter().any(|v| !v.is_finite() || v.abs() > bound) {
        return Err(Error::Escaped { time, bound });
    }
    Ok(())
}

/// Evaluates `Σ u_i X_i(q)` into `out`.
struct ControlledField<'a> {
    s: &'a Structure,
    frame: Vec<f64>,
}

impl<'a> ControlledField<'a> {
    fn new(s: &'a Structure) -> Self {
        Self {
            s,
            frame: vec![0.0; s.dim() * s.rank()],
        }
    }

    fn eval(&mut self, u: &[f64], q: &[f64], out: &mut [f64]) {
        let n = self.s.dim();
        self.s.frame_into(q, &mut self.frame);
        out[..n].iter_mut().for_each(|v| *v = 0.0);
        for (i, ui) in u.iter().enumerate() {
            if *ui == 0.0 {
                continue;
            }
            for r in 0..n {
                out[r] += ui * self.frame[i * n + r];
            }
        }
    }
}

fn check_inputs(s: &Structure, q0: &DVector<f64>, u: &ControlGrid, opts: &FlowOptions) -> Result<()> {
    opts.validate()?;
    s.check_point(q0)?;
    if u.k() != s.rank() {
        return Err(Error::Dimension { expected: s.rank(), got: u.k() });
    }
    Ok(())
}

/// Integrates the control system from `q0`, recording the state at every
/// grid instant.
pub fn integrate(s: &Structure, q0: &DVector<f64>, u: &ControlGrid, opts: &FlowOptions) -> Result<Trajectory> {
    check_inputs(s, q0, u, opts)?;
    let n = s.dim();
    let h = u.step() / opts.substeps as f64;
    let mut field = ControlledField::new(s);
    let mut rk = Rk4::new(n);
    let mut q: Vec<f64> = q0.iter().cloned().collect();
    let mut times = Vec::with_capacity(u.m() + 1);
    let mut states = Vec::with_capacity(u.m() + 1);
    times.push(0.0);
    states.push(q0.clone());
    for j in 0..u.m() {
        let uj = u.value(j);
        for _ in 0..opts.substeps {
            rk.step(&mut q, h, &mut |y: &[f64], dy: &mut [f64]| field.eval(uj, y, dy));
        }
        let tj = (j + 1) as f64 * u.step();
        check_escape(&q, opts.escape_bound, tj)?;
        times.push(tj);
        states.push(DVector::from_column_slice(&q));
    }
    Ok(Trajectory {
        times,
        states,
        substeps: opts.substeps,
    })
}

/// `F^t_{q0}(u)`: the state at `t_final`.
pub fn endpoint(s: &Structure, q0: &DVector<f64>, u: &ControlGrid, opts: &FlowOptions) -> Result<DVector<f64>> {
    endpoint_at(s, q0, u, u.t_final(), opts)
}

/// `F^τ_{q0}(u)` for any `τ ∈ [0, t_final]`; a trailing partial interval is
/// integrated with the same number of substeps.
pub fn endpoint_at(s: &Structure, q0: &DVector<f64>, u: &ControlGrid, tau: f64, opts: &FlowOptions) -> Result<DVector<f64>> {
    check_inputs(s, q0, u, opts)?;
    if !(0.0..=u.t_final() * (1.0 + 1e-12)).contains(&tau) {
        return Err(Error::InvalidParameter(format!("time {tau} outside [0, {}]", u.t_final())));
    }
    let n = s.dim();
    let mut field = ControlledField::new(s);
    let mut rk = Rk4::new(n);
    let mut q: Vec<f64> = q0.iter().cloned().collect();
    let mut t = 0.0;
    for j in 0..u.m() {
        let len = (tau - t).min(u.step());
        if len <= 1e-15 * u.t_final() {
            break;
        }
        let h = len / opts.substeps as f64;
        let uj = u.value(j);
        for _ in 0..opts.substeps {
            rk.step(&mut q, h, &mut |y: &[f64], dy: &mut [f64]| field.eval(uj, y, dy));
        }
        t = (j + 1) as f64 * u.step();
        check_escape(&q, opts.escape_bound, t.min(tau))?;
    }
    Ok(DVector::from_vec(q))
}

/// Per-interval linearisation of the discrete flow.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub trajectory: Trajectory,
    /// `Φ_j`: derivative of the interval-`j` flow map with respect to the state.
    pub transitions: Vec<DMatrix<f64>>,
    /// `S_j`: derivative of the interval-`j` flow map with respect to `u_j`.
    pub local: Vec<DMatrix<f64>>,
}

/// Integrates state, state-transition matrix and control sensitivity over
/// each interval: `Φ' = AΦ`, `S' = AS + X(q)` with `A = Σ u_i DX_i(q)`.
pub fn linearize(s: &Structure, q0: &DVector<f64>, u: &ControlGrid, opts: &FlowOptions) -> Result<Linearization> {
    check_inputs(s, q0, u, opts)?;
    let (n, k) = (s.dim(), s.rank());
    let dim = n + n * n + n * k;
    let h = u.step() / opts.substeps as f64;
    let mut frame = vec![0.0; n * k];
    let mut jac = vec![0.0; k * n * n];
    let mut a = vec![0.0; n * n];
    let mut rk = Rk4::new(dim);
    let mut y = vec![0.0; dim];
    y[..n].copy_from_slice(q0.as_slice());

    let mut times = vec![0.0];
    let mut states = vec![q0.clone()];
    let mut transitions = Vec::with_capacity(u.m());
    let mut local = Vec::with_capacity(u.m());

    for j in 0..u.m() {
        let uj = u.value(j);
        // Φ(start) = I, S(start) = 0; layout: [q | Φ col-major | S col-major].
        y[n..].iter_mut().for_each(|v| *v = 0.0);
        for d in 0..n {
            y[n + d * n + d] = 1.0;
        }
        let mut rhs = |z: &[f64], dz: &mut [f64]| {
            s.frame_into(&z[..n], &mut frame);
            s.frame_jacobian_into(&z[..n], &mut jac);
            a.iter_mut().for_each(|v| *v = 0.0);
            for (i, ui) in uj.iter().enumerate() {
                if *ui == 0.0 {
                    continue;
                }
                for idx in 0..n * n {
                    // jac is (i, r, c) with c fastest; a is row-major (r, c)
                    a[idx] += ui * jac[i * n * n + idx];
                }
            }
            for r in 0..n {
                let mut acc = 0.0;
                for (i, ui) in uj.iter().enumerate() {
                    acc += ui * frame[i * n + r];
                }
                dz[r] = acc;
            }
            // Columns of Φ and S: dz_col = A z_col (+ X_i for S).
            let ncols = n + k;
            for col in 0..ncols {
                let base = n + col * n;
                for r in 0..n {
                    let mut acc = 0.0;
                    for c in 0..n {
                        acc += a[r * n + c] * z[base + c];
                    }
                    if col >= n {
                        acc += frame[(col - n) * n + r];
                    }
                    dz[base + r] = acc;
                }
            }
        };
        for _ in 0..opts.substeps {
            rk.step(&mut y, h, &mut rhs);
        }
        let tj = (j + 1) as f64 * u.step();
        check_escape(&y[..n], opts.escape_bound, tj)?;
        times.push(tj);
        states.push(DVector::from_column_slice(&y[..n]));
        transitions.push(DMatrix::from_column_slice(n, n, &y[n..n + n * n]));
        local.push(DMatrix::from_column_slice(n, k, &y[n + n * n..]));
    }
    Ok(Linearization {
        trajectory: Trajectory {
            times,
            states,
            substeps: opts.substeps,
        },
        transitions,
        local,
    })
}

/// Discretised differential `D_uF^t_{q0}` in L₂-orthonormal coordinates:
/// column `j·k + i` is `∂F/∂u_{ij} / √h`, so that `matrix · w` with
/// `w = √h·u` is the pairing with control perturbations.
#[derive(Debug, Clone, Serialize)]
pub struct EndpointJacobian {
    #[serde(serialize_with = "crate::serde_util::columns")]
    pub matrix: DMatrix<f64>,
    /// L₂ weight `h = t_final / m` of each column block.
    pub weight: f64,
    pub k: usize,
    pub m: usize,
    pub t_final: f64,
    #[serde(serialize_with = "crate::serde_util::vector")]
    pub endpoint: DVector<f64>,
}

impl EndpointJacobian {
    /// Plain derivative `∂F/∂u_{ij}` of the endpoint.
    pub fn raw_column(&self, j: usize, i: usize) -> DVector<f64> {
        self.matrix.column(j * self.k + i) * self.weight.sqrt()
    }

    pub fn raw_matrix(&self) -> DMatrix<f64> {
        &self.matrix * self.weight.sqrt()
    }

    pub fn svd(&self) -> LeftSvd {
        left_svd(&self.matrix)
    }
}

pub fn endpoint_jacobian(s: &Structure, q0: &DVector<f64>, u: &ControlGrid, opts: &FlowOptions) -> Result<EndpointJacobian> {
    let lin = linearize(s, q0, u, opts)?;
    Ok(jacobian_from_linearization(&lin, u))
}

pub(crate) fn jacobian_from_linearization(lin: &Linearization, u: &ControlGrid) -> EndpointJacobian {
    let n = lin.trajectory.states[0].len();
    let (k, m) = (u.k(), u.m());
    let scale = 1.0 / u.step().sqrt();
    let mut matrix = DMatrix::zeros(n, k * m);
    // P = Φ_{m-1} ⋯ Φ_{j+1}, accumulated backwards.
    let mut p = DMatrix::<f64>::identity(n, n);
    for j in (0..m).rev() {
        let cols = &p * &lin.local[j] * scale;
        matrix.columns_mut(j * k, k).copy_from(&cols);
        p = &p * &lin.transitions[j];
    }
    EndpointJacobian {
        matrix,
        weight: u.step(),
        k,
        m,
        t_final: u.t_final(),
        endpoint: lin.trajectory.endpoint().clone(),
    }
}

/// A subspace of the tangent space at the endpoint, obtained as the image of
/// a (restricted) endpoint differential.
#[derive(Debug, Clone, Serialize)]
pub struct ImageSubspace {
    /// Orthonormal basis of the image (numerical rank columns).
    #[serde(serialize_with = "crate::serde_util::columns")]
    pub basis: DMatrix<f64>,
    /// Orthonormal basis of the orthogonal complement, i.e. of the covectors
    /// annihilating the image.
    #[serde(serialize_with = "crate::serde_util::columns")]
    pub annihilator: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub rank: usize,
    pub codimension: usize,
    #[serde(skip)]
    left: DMatrix<f64>,
}

impl ImageSubspace {
    fn from_svd(svd: LeftSvd, tol: f64) -> Self {
        let n = svd.u.nrows();
        let rank = svd.rank(tol);
        Self {
            basis: svd.leading(rank),
            annihilator: svd.trailing(rank),
            singular_values: svd.singular_values.clone(),
            rank,
            codimension: n - rank,
            left: svd.u,
        }
    }

    /// The same decomposition with at least `codim` directions assigned to the
    /// annihilator (the weakest singular directions are reassigned first).
    pub fn with_min_codimension(&self, codim: usize) -> ImageSubspace {
        let n = self.left.nrows();
        let codimension = self.codimension.max(codim).min(n);
        let rank = n - codimension;
        Self {
            basis: self.left.columns(0, rank).into_owned(),
            annihilator: self.left.columns(rank, codimension).into_owned(),
            singular_values: self.singular_values.clone(),
            rank,
            codimension,
            left: self.left.clone(),
        }
    }

    /// Direction of the weakest singular value: the best single annihilating
    /// covector.
    pub fn weakest_direction(&self) -> DVector<f64> {
        self.left.column(self.left.ncols() - 1).into_owned()
    }
}

/// Image of the full differential.
pub fn image(jac: &EndpointJacobian, tol: f64) -> ImageSubspace {
    ImageSubspace::from_svd(jac.svd(), tol)
}

/// `E^t = D_uF^t(u^⊥)`: image of the differential restricted to the
/// L₂-orthogonal complement of `u`.
pub fn orthocomplement_image(jac: &EndpointJacobian, u: &ControlGrid, tol: f64) -> Result<ImageSubspace> {
    if jac.k != u.k() || jac.m != u.m() || (jac.t_final - u.t_final()).abs() > 1e-12 * u.t_final() {
        return Err(Error::InvalidParameter("Jacobian and control do not share (k, m, t_final)".into()));
    }
    let w = u.to_l2_coordinates();
    let nw = w.norm_squared();
    let restricted = if nw > 0.0 {
        let jw = &jac.matrix * &w;
        &jac.matrix - jw * w.transpose() / nw
    } else {
        jac.matrix.clone()
    };
    Ok(ImageSubspace::from_svd(left_svd(&restricted), tol))
}

/// Differential of the flow diffeomorphism `P^{to}_{from}` applied to `v`.
/// Both times must be grid instants of `u`.
pub fn flow_pushforward(
    s: &Structure,
    q0: &DVector<f64>,
    u: &ControlGrid,
    tau_from: f64,
    tau_to: f64,
    v: &DVector<f64>,
    opts: &FlowOptions,
) -> Result<DVector<f64>> {
    let (a, b) = (u.grid_index(tau_from)?, u.grid_index(tau_to)?);
    if a > b {
        return Err(Error::InvalidParameter("pushforward requires tau_from <= tau_to".into()));
    }
    s.check_point(v)?;
    if a == b {
        return Ok(v.clone());
    }
    let lin = linearize(s, q0, u, opts)?;
    Ok(lin.transitions[a..b].iter().fold(v.clone(), |acc, phi| phi * acc))
}

/// Rescaled perturbed endpoint
/// `F^{s}( √t/√(t+ε²‖v‖²) · (u + εv) )`, whose control has `‖·‖² = t`.
pub fn perturbation_map(
    s: &Structure,
    q0: &DVector<f64>,
    u: &ControlGrid,
    v: &ControlGrid,
    eps: f64,
    s_eval: f64,
    opts: &FlowOptions,
) -> Result<DVector<f64>> {
    let t = u.t_final();
    let nu = u.l2_norm_sq();
    if (nu - t).abs() > 1e-8 * t {
        return Err(Error::InvalidParameter(format!("control is not unit speed: ‖u‖² = {nu}, t = {t}")));
    }
    let nv = v.l2_norm_sq();
    if nv > 1.0 + 1e-12 {
        return Err(Error::InvalidParameter(format!("perturbation norm {} exceeds 1", nv.sqrt())));
    }
    let inner = u.l2_inner(v);
    if inner.abs() > 1e-9 * (nu * nv).sqrt().max(1e-300) {
        return Err(Error::InvalidParameter(format!("perturbation not orthogonal to u (⟨u,v⟩ = {inner:.3e})")));
    }
    let w = u.add_scaled(eps, v)?.scaled((t / (t + eps * eps * nv)).sqrt());
    endpoint_at(s, q0, &w, s_eval, opts)
}
