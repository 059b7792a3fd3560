//! Sparse multivariate polynomials and polynomial vector fields.
//!
//! Everything here is exact up to floating-point coefficient arithmetic:
//! differentiation and products act on monomials symbolically, so Lie brackets
//! of polynomial fields are again polynomial fields with no truncation error.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// A single term `coeff * x_1^e_1 * ... * x_n^e_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    #[serde(rename = "c")]
    pub coeff: f64,
    #[serde(rename = "e")]
    pub exponents: Vec<u32>,
}

impl Monomial {
    pub fn new(coeff: f64, exponents: Vec<u32>) -> Self {
        Self { coeff, exponents }
    }

    pub fn constant(coeff: f64, nvars: usize) -> Self {
        Self::new(coeff, vec![0; nvars])
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let mut acc = self.coeff;
        for (&xi, &e) in x.iter().zip(&self.exponents) {
            match e {
                0 => {}
                1 => acc *= xi,
                2 => acc *= xi * xi,
                _ => acc *= xi.powi(e as i32),
            }
        }
        acc
    }
}

/// A polynomial in a fixed number of variables, kept in canonical form
/// (like terms merged, zero coefficients dropped, terms sorted by exponent).
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Self {
            nvars,
            terms: Vec::new(),
        }
    }

    pub fn constant(value: f64, nvars: usize) -> Self {
        Self::from_terms(nvars, vec![Monomial::constant(value, nvars)])
    }

    /// The coordinate function `x_var`.
    pub fn variable(var: usize, nvars: usize) -> Self {
        let mut e = vec![0; nvars];
        e[var] = 1;
        Self::from_terms(nvars, vec![Monomial::new(1.0, e)])
    }

    /// Builds a canonical polynomial. Panics if a term has the wrong number of
    /// exponents; callers validating untrusted input check lengths first.
    pub fn from_terms(nvars: usize, terms: Vec<Monomial>) -> Self {
        let mut merged: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for t in terms {
            assert_eq!(t.exponents.len(), nvars, "monomial arity mismatch");
            *merged.entry(t.exponents).or_insert(0.0) += t.coeff;
        }
        let terms = merged
            .into_iter()
            .filter(|(_, c)| *c != 0.0)
            .map(|(e, c)| Monomial::new(c, e))
            .collect();
        Self { nvars, terms }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.eval(x)).sum()
    }

    pub fn derivative(&self, var: usize) -> Self {
        let terms = self
            .terms
            .iter()
            .filter(|t| t.exponents[var] > 0)
            .map(|t| {
                let mut e = t.exponents.clone();
                let p = e[var];
                e[var] -= 1;
                Monomial::new(t.coeff * p as f64, e)
            })
            .collect();
        Self::from_terms(self.nvars, terms)
    }

    pub fn add(&self, other: &Self) -> Self {
        let terms = self.terms.iter().chain(&other.terms).cloned().collect();
        Self::from_terms(self.nvars, terms)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, c: f64) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| Monomial::new(t.coeff * c, t.exponents.clone()))
            .collect();
        Self::from_terms(self.nvars, terms)
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                let e = a
                    .exponents
                    .iter()
                    .zip(&b.exponents)
                    .map(|(x, y)| x + y)
                    .collect();
                terms.push(Monomial::new(a.coeff * b.coeff, e));
            }
        }
        Self::from_terms(self.nvars, terms)
    }
}

/// A vector field on R^n with polynomial components.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyField {
    components: Vec<Polynomial>,
}

impl PolyField {
    pub fn new(components: Vec<Polynomial>) -> Self {
        let n = components.len();
        debug_assert!(components.iter().all(|p| p.nvars() == n));
        Self { components }
    }

    pub fn zero(n: usize) -> Self {
        Self::new((0..n).map(|_| Polynomial::zero(n)).collect())
    }

    /// The constant coordinate field `∂/∂x_i`.
    pub fn coordinate(i: usize, n: usize) -> Self {
        Self::new(
            (0..n)
                .map(|r| {
                    if r == i {
                        Polynomial::constant(1.0, n)
                    } else {
                        Polynomial::zero(n)
                    }
                })
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Polynomial] {
        &self.components
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(Polynomial::is_zero)
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.components.iter().map(|p| p.eval(x)).collect()
    }

    /// Symbolic Jacobian: entry `[r][c]` is `∂X_r/∂x_c`.
    pub fn jacobian(&self) -> Vec<Vec<Polynomial>> {
        let n = self.dim();
        self.components
            .iter()
            .map(|p| (0..n).map(|c| p.derivative(c)).collect())
            .collect()
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::new(
            self.components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a.add(b))
                .collect(),
        )
    }

    pub fn scale(&self, c: f64) -> Self {
        Self::new(self.components.iter().map(|p| p.scale(c)).collect())
    }

    /// Lie bracket `[self, other] = D(other)·self − D(self)·other`.
    pub fn bracket(&self, other: &Self) -> Self {
        let n = self.dim();
        let dx = self.jacobian();
        let dy = other.jacobian();
        let components = (0..n)
            .map(|r| {
                let mut acc = Polynomial::zero(n);
                for c in 0..n {
                    acc = acc
                        .add(&dy[r][c].mul(&self.components[c]))
                        .sub(&dx[r][c].mul(&other.components[c]));
                }
                acc
            })
            .collect();
        Self::new(components)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(i: usize) -> Polynomial {
        Polynomial::variable(i, 3)
    }

    #[test]
    fn canonical_form_merges_and_drops() {
        let p = Polynomial::from_terms(
            2,
            vec![
                Monomial::new(2.0, vec![1, 0]),
                Monomial::new(-2.0, vec![1, 0]),
                Monomial::new(3.0, vec![0, 2]),
            ],
        );
        assert_eq!(p.terms().len(), 1);
        assert_eq!(p.eval(&[7.0, 2.0]), 12.0);
    }

    #[test]
    fn derivative_of_power() {
        let p = x(0).mul(&x(0)).mul(&x(1)); // x0^2 x1
        let d = p.derivative(0);
        assert_eq!(d.eval(&[3.0, 5.0, 0.0]), 30.0);
        assert!(p.derivative(2).is_zero());
    }

    #[test]
    fn bracket_of_heisenberg_frame() {
        let n = 3;
        let x1 = PolyField::coordinate(0, n);
        let x2 = PolyField::new(vec![
            Polynomial::zero(n),
            Polynomial::constant(1.0, n),
            x(0),
        ]);
        let b = x1.bracket(&x2);
        assert_eq!(b, PolyField::coordinate(2, n));
        assert_eq!(x2.bracket(&x1), PolyField::coordinate(2, n).scale(-1.0));
    }

    #[test]
    fn zero_field_evaluates_to_zero() {
        let z = PolyField::zero(4);
        assert!(z.is_zero());
        assert_eq!(z.eval(&[1.0, 2.0, 3.0, 4.0]), vec![0.0; 4]);
    }
}
