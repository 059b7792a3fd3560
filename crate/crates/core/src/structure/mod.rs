//! Free sub-Riemannian structures with polynomial frames.
//!
//! A [`Structure`] is an orthonormal frame `X_1..X_k` of polynomial vector
//! fields on R^n together with a base point. Jacobians and pairwise brackets
//! of the frame are derived symbolically once, at construction.

mod file;
mod poly;

pub use file::StructureFile;
pub use poly::{Monomial, PolyField, Polynomial};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::left_svd;

/// Default relative rank threshold for distribution spans.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// A free sub-Riemannian structure on R^n.
#[derive(Debug, Clone)]
pub struct Structure {
    name: String,
    n: usize,
    fields: Vec<PolyField>,
    q0: DVector<f64>,
    // Nonzero entries only: (field, row, polynomial) and (field, row, col, ∂X_row/∂x_col).
    field_terms: Vec<(usize, usize, Polynomial)>,
    jacobian_terms: Vec<(usize, usize, usize, Polynomial)>,
    // Upper-triangular pairs i < j.
    brackets: Vec<(usize, usize, PolyField)>,
}

impl Structure {
    pub fn new(name: impl Into<String>, fields: Vec<PolyField>, q0: DVector<f64>) -> Result<Self> {
        let n = q0.len();
        if n == 0 {
            return Err(Error::InvalidParameter("state dimension must be at least 1".into()));
        }
        if fields.is_empty() {
            return Err(Error::InvalidParameter("rank must be at least 1".into()));
        }
        for f in &fields {
            if f.dim() != n || f.components().iter().any(|p| p.nvars() != n) {
                return Err(Error::Dimension {
                    expected: n,
                    got: f.dim(),
                });
            }
        }
        if q0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("base point must be finite".into()));
        }

        let mut field_terms = Vec::new();
        let mut jacobian_terms = Vec::new();
        for (i, f) in fields.iter().enumerate() {
            for (r, p) in f.components().iter().enumerate() {
                if !p.is_zero() {
                    field_terms.push((i, r, p.clone()));
                }
            }
            for (r, row) in f.jacobian().into_iter().enumerate() {
                for (c, p) in row.into_iter().enumerate() {
                    if !p.is_zero() {
                        jacobian_terms.push((i, r, c, p));
                    }
                }
            }
        }
        let mut brackets = Vec::new();
        for i in 0..fields.len() {
            for j in (i + 1)..fields.len() {
                brackets.push((i, j, fields[i].bracket(&fields[j])));
            }
        }

        Ok(Self {
            name: name.into(),
            n,
            fields,
            q0,
            field_terms,
            jacobian_terms,
            brackets,
        })
    }

    /// Euclidean frame `∂/∂x_1, ..., ∂/∂x_n` based at the origin.
    pub fn flat(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("flat(n) needs n >= 1".into()));
        }
        let fields = (0..n).map(|i| PolyField::coordinate(i, n)).collect();
        Self::new(format!("flat:{n}"), fields, DVector::zeros(n))
    }

    /// The three-dimensional family `X_1 = ∂_1`, `X_2 = ∂_2 + x_1^p ∂_3`,
    /// based at the origin. `p = 1` is the Heisenberg group.
    pub fn example(power: u32) -> Result<Self> {
        if power < 1 {
            return Err(Error::InvalidParameter("example(p) needs p >= 1".into()));
        }
        let n = 3;
        let x1 = PolyField::coordinate(0, n);
        let mut e = vec![0; n];
        e[0] = power;
        let x2 = PolyField::new(vec![
            Polynomial::zero(n),
            Polynomial::constant(1.0, n),
            Polynomial::from_terms(n, vec![Monomial::new(1.0, e)]),
        ]);
        Self::new(format!("example:{power}"), vec![x1, x2], DVector::zeros(n))
    }

    /// Looks up a built-in by `name:param`, e.g. `flat:2` or `example:1`.
    pub fn builtin(spec: &str) -> Result<Self> {
        let (name, param) = spec
            .split_once(':')
            .ok_or_else(|| Error::UnknownStructure(spec.to_string()))?;
        let param: u32 = param
            .trim()
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("bad parameter in {spec:?}")))?;
        match name.trim() {
            "flat" => Self::flat(param as usize),
            "example" => Self::example(param),
            _ => Err(Error::UnknownStructure(spec.to_string())),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// State dimension n.
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Rank k (number of frame fields).
    pub fn rank(&self) -> usize {
        self.fields.len()
    }

    pub fn fields(&self) -> &[PolyField] {
        &self.fields
    }

    pub fn q0(&self) -> &DVector<f64> {
        &self.q0
    }

    /// Same frame, different base point.
    pub fn with_base_point(&self, q0: DVector<f64>) -> Result<Self> {
        if q0.len() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                got: q0.len(),
            });
        }
        let mut s = self.clone();
        s.q0 = q0;
        Ok(s)
    }

    fn check_field(&self, i: usize) -> Result<()> {
        if i >= self.rank() {
            return Err(Error::FieldIndex {
                index: i,
                rank: self.rank(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_point(&self, q: &DVector<f64>) -> Result<()> {
        if q.len() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                got: q.len(),
            });
        }
        Ok(())
    }

    /// `X_i(q)` for a zero-based field index.
    pub fn eval_field(&self, i: usize, q: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_field(i)?;
        self.check_point(q)?;
        Ok(DVector::from_vec(self.fields[i].eval(q.as_slice())))
    }

    /// `n × k` matrix whose columns are the frame fields at `q`.
    pub fn frame(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let mut out = vec![0.0; self.n * self.rank()];
        self.frame_into(q.as_slice(), &mut out);
        DMatrix::from_column_slice(self.n, self.rank(), &out)
    }

    /// Writes the frame at `q` into `out`, field-major: `out[i*n + r] = X_i^r(q)`.
    #[inline]
    pub(crate) fn frame_into(&self, q: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, r, p) in &self.field_terms {
            out[i * self.n + r] = p.eval(q);
        }
    }

    /// Writes all frame Jacobians at `q` into `out`:
    /// `out[(i*n + r)*n + c] = ∂X_i^r/∂x_c (q)`.
    #[inline]
    pub(crate) fn frame_jacobian_into(&self, q: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let n = self.n;
        for (i, r, c, p) in &self.jacobian_terms {
            out[(i * n + r) * n + c] = p.eval(q);
        }
    }

    pub(crate) fn has_constant_frame(&self) -> bool {
        self.jacobian_terms.is_empty()
    }

    /// Symbolic bracket `[X_i, X_j]`.
    pub fn bracket_field(&self, i: usize, j: usize) -> Result<PolyField> {
        self.check_field(i)?;
        self.check_field(j)?;
        Ok(match i.cmp(&j) {
            std::cmp::Ordering::Equal => PolyField::zero(self.n),
            std::cmp::Ordering::Less => self.stored_bracket(i, j).clone(),
            std::cmp::Ordering::Greater => self.stored_bracket(j, i).scale(-1.0),
        })
    }

    fn stored_bracket(&self, i: usize, j: usize) -> &PolyField {
        &self
            .brackets
            .iter()
            .find(|(a, b, _)| *a == i && *b == j)
            .expect("all ordered pairs are precomputed")
            .2
    }

    /// `[X_i, X_j](q) = DX_j(q)·X_i(q) − DX_i(q)·X_j(q)`.
    pub fn lie_bracket(&self, i: usize, j: usize, q: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point(q)?;
        let b = self.bracket_field(i, j)?;
        Ok(DVector::from_vec(b.eval(q.as_slice())))
    }

    /// Pairwise brackets `[X_i, X_j](q)` for `i < j`.
    pub fn brackets_at(&self, q: &DVector<f64>) -> Vec<DVector<f64>> {
        self.brackets
            .iter()
            .map(|(_, _, b)| DVector::from_vec(b.eval(q.as_slice())))
            .collect()
    }

    /// Generators of Δ² at `q`: the frame fields followed by their pairwise brackets.
    pub fn second_layer_generators(&self, q: &DVector<f64>) -> Vec<DVector<f64>> {
        let mut out: Vec<DVector<f64>> = (0..self.rank())
            .map(|i| DVector::from_vec(self.fields[i].eval(q.as_slice())))
            .collect();
        out.extend(self.brackets_at(q));
        out
    }

    /// Orthonormal bases and ranks of Δ¹_q and Δ²_q.
    pub fn distribution_spans(&self, q: &DVector<f64>, tol: f64) -> Result<DistributionEval> {
        self.check_point(q)?;
        let gens1 = self.frame(q);
        let gens2 = columns_to_matrix(self.n, &self.second_layer_generators(q));
        let s1 = left_svd(&gens1);
        let s2 = left_svd(&gens2);
        let rank1 = s1.rank(tol);
        let rank2 = s2.rank(tol);
        Ok(DistributionEval {
            q: q.clone(),
            basis1: s1.leading(rank1),
            basis2: s2.leading(rank2),
            rank1,
            rank2,
        })
    }

    /// Pointwise, depth-bounded Hörmander check: do the iterated brackets of
    /// length at most `depth` span R^n at `q`?
    pub fn bracket_generating_check(
        &self,
        q: &DVector<f64>,
        depth: usize,
        tol: f64,
    ) -> Result<BracketGenerating> {
        self.check_point(q)?;
        if depth == 0 {
            return Err(Error::InvalidParameter("depth must be at least 1".into()));
        }
        let mut generators: Vec<DVector<f64>> = Vec::new();
        let mut layer: Vec<PolyField> = self.fields.clone();
        let mut ranks = Vec::with_capacity(depth);
        for d in 1..=depth {
            generators.extend(layer.iter().map(|f| DVector::from_vec(f.eval(q.as_slice()))));
            let rank = left_svd(&columns_to_matrix(self.n, &generators)).rank(tol);
            ranks.push(rank);
            if rank == self.n {
                return Ok(BracketGenerating {
                    generating: true,
                    step: Some(d),
                    ranks,
                });
            }
            if d < depth {
                layer = next_bracket_layer(&self.fields, &layer);
                if layer.is_empty() {
                    break;
                }
            }
        }
        Ok(BracketGenerating {
            generating: false,
            step: None,
            ranks,
        })
    }
}

/// Left-normed brackets `[X_i, Y]` of the frame with the previous layer,
/// with identically zero and duplicate fields dropped.
fn next_bracket_layer(frame: &[PolyField], layer: &[PolyField]) -> Vec<PolyField> {
    let mut next: Vec<PolyField> = Vec::new();
    for x in frame {
        for y in layer {
            let b = x.bracket(y);
            if !b.is_zero() && !next.iter().any(|f| *f == b || f.scale(-1.0) == b) {
                next.push(b);
            }
        }
    }
    next
}

fn columns_to_matrix(n: usize, cols: &[DVector<f64>]) -> DMatrix<f64> {
    if cols.is_empty() {
        return DMatrix::zeros(n, 1);
    }
    DMatrix::from_columns(cols)
}

/// Pointwise distribution data Δ¹_q ⊆ Δ²_q.
#[derive(Debug, Clone, Serialize)]
pub struct DistributionEval {
    #[serde(serialize_with = "crate::serde_util::vector")]
    pub q: DVector<f64>,
    #[serde(serialize_with = "crate::serde_util::columns")]
    pub basis1: DMatrix<f64>,
    #[serde(serialize_with = "crate::serde_util::columns")]
    pub basis2: DMatrix<f64>,
    pub rank1: usize,
    pub rank2: usize,
}

/// Result of [`Structure::bracket_generating_check`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BracketGenerating {
    pub generating: bool,
    /// Smallest bracket length achieving full rank.
    pub step: Option<usize>,
    /// Rank of the span of brackets up to each length tried.
    pub ranks: Vec<usize>,
}
