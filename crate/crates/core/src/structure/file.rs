use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{Monomial, PolyField, Polynomial, Structure};
use crate::error::{Error, Result};

/// On-disk JSON form of a structure:
/// `{ "n", "k", "q0": [..n], "fields": [[[{"c", "e": [..n]}, ..] ×n] ×k] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub n: usize,
    pub k: usize,
    pub q0: Vec<f64>,
    pub fields: Vec<Vec<Vec<Monomial>>>,
}

impl StructureFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn into_structure(self) -> Result<Structure> {
        let n = self.n;
        if self.q0.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: self.q0.len(),
            });
        }
        if self.fields.len() != self.k {
            return Err(Error::Dimension {
                expected: self.k,
                got: self.fields.len(),
            });
        }
        let mut fields = Vec::with_capacity(self.k);
        for comps in self.fields {
            if comps.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: comps.len(),
                });
            }
            let mut polys = Vec::with_capacity(n);
            for terms in comps {
                for t in &terms {
                    if t.exponents.len() != n {
                        return Err(Error::Dimension {
                            expected: n,
                            got: t.exponents.len(),
                        });
                    }
                    if !t.coeff.is_finite() {
                        return Err(Error::InvalidParameter("non-finite coefficient".into()));
                    }
                }
                polys.push(Polynomial::from_terms(n, terms));
            }
            fields.push(PolyField::new(polys));
        }
        let name = self.name.unwrap_or_else(|| "file".to_string());
        Structure::new(name, fields, DVector::from_vec(self.q0))
    }
}

impl From<&Structure> for StructureFile {
    fn from(s: &Structure) -> Self {
        Self {
            name: Some(s.name().to_string()),
            n: s.dim(),
            k: s.rank(),
            q0: s.q0().iter().cloned().collect(),
            fields: s
                .fields()
                .iter()
                .map(|f| f.components().iter().map(|p| p.terms().to_vec()).collect())
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_heisenberg_file() {
        let text = r#"{
            "n": 3, "k": 2, "q0": [0, 0, 0],
            "fields": [
                [[{"c": 1, "e": [0,0,0]}], [], []],
                [[], [{"c": 1, "e": [0,0,0]}], [{"c": 1, "e": [1,0,0]}]]
            ]
        }"#;
        let s = StructureFile::from_json(text).unwrap().into_structure().unwrap();
        let reference = Structure::example(1).unwrap();
        assert_eq!(s.fields(), reference.fields());
        assert_eq!(s.name(), "file");
    }

    #[test]
    fn rejects_wrong_arity() {
        let text = r#"{"n": 2, "k": 1, "q0": [0, 0], "fields": [[[{"c": 1, "e": [0]}], []]]}"#;
        let err = StructureFile::from_json(text).unwrap().into_structure().unwrap_err();
        assert!(matches!(err, Error::Dimension { expected: 2, got: 1 }));
        let text = r#"{"n": 2, "k": 2, "q0": [0, 0], "fields": [[[], []]]}"#;
        assert!(StructureFile::from_json(text).unwrap().into_structure().is_err());
    }

    #[test]
    fn export_round_trips() {
        let s = Structure::example(3).unwrap();
        let back = StructureFile::from_json(&StructureFile::from(&s).to_json().unwrap())
            .unwrap()
            .into_structure()
            .unwrap();
        assert_eq!(back.fields(), s.fields());
        assert_eq!(back.name(), "example:3");
    }
}
