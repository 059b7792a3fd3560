//! JSON shapes for nalgebra types: vectors as plain arrays, matrices as
//! arrays of columns.

use nalgebra::{DMatrix, DVector};
use serde::ser::{SerializeSeq, Serializer};

pub(crate) fn vector<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter())
}

pub(crate) fn opt_vector<S: Serializer>(v: &Option<DVector<f64>>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => vector(v, s),
        None => s.serialize_none(),
    }
}

pub(crate) fn vectors<S: Serializer>(vs: &[DVector<f64>], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(vs.iter().map(|v| v.as_slice()))
}

pub(crate) fn columns<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(m.ncols()))?;
    for c in m.column_iter() {
        seq.serialize_element(&c.iter().collect::<Vec<_>>())?;
    }
    seq.end()
}

pub(crate) fn weighted_vectors<S: Serializer>(vs: &[(DVector<f64>, f64)], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(vs.iter().map(|(v, w)| (v.as_slice(), w)))
}
