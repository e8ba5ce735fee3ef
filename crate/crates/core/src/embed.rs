//! Class embedding tables and the cosine geometry on top of them.
//!
//! Vectors are stored exactly as ingested. Normalization only happens inside
//! [`cosine_similarity`] and [`class_prototype`].

use std::collections::HashMap;
use std::io::Read;

use crate::error::{Error, Result};

/// Named class vectors sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dimension: usize,
    names: Vec<String>,
    vectors: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    /// Builds a table from `(name, vector)` pairs, preserving their order.
    pub fn new<I>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut dimension = None;
        let mut names = Vec::new();
        let mut vectors = Vec::new();
        let mut index = HashMap::new();
        for (name, vector) in entries {
            let expected = *dimension.get_or_insert(vector.len());
            if vector.len() != expected {
                return Err(Error::DimensionMismatch {
                    expected,
                    found: vector.len(),
                    context: Some(format!("class `{name}`")),
                });
            }
            if vector.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(name));
            }
            if norm(&vector) == 0.0 {
                return Err(Error::ZeroVector(Some(format!("class `{name}`"))));
            }
            if index.insert(name.clone(), names.len()).is_some() {
                return Err(Error::DuplicateName(name));
            }
            names.push(name);
            vectors.push(vector);
        }
        let dimension = match dimension {
            Some(0) => {
                return Err(Error::Parse {
                    line: 1,
                    message: "vectors have no components".into(),
                })
            }
            Some(d) => d,
            None => {
                return Err(Error::Parse {
                    line: 0,
                    message: "no embedding rows".into(),
                })
            }
        };
        Ok(Self {
            dimension,
            names,
            vectors,
            index,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.index.get(name).map(|&i| self.vectors[i].as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.names
            .iter()
            .zip(&self.vectors)
            .map(|(n, v)| (n.as_str(), v.as_slice()))
    }

    /// Restricts the table to `names`, in the order given.
    pub fn select<S: AsRef<str>>(&self, names: &[S]) -> Result<Self> {
        let entries = names
            .iter()
            .map(|name| {
                let name = name.as_ref();
                self.get(name)
                    .map(|v| (name.to_string(), v.to_vec()))
                    .ok_or_else(|| Error::UnknownClass(name.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries)
    }

    /// Writes the table in the `name,v1,...,vd` format read by [`load_embeddings`].
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (name, vector) in self.iter() {
            out.push_str(name);
            for x in vector {
                out.push(',');
                out.push_str(&format!("{x:?}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Parses headerless `class_name,v1,...,vd` rows.
pub fn load_embeddings<R: Read>(source: R) -> Result<EmbeddingTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);

    let mut entries: Vec<(String, Vec<f64>)> = Vec::new();
    let mut expected: Option<usize> = None;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let mut fields = record.iter();
        let name = match fields.next() {
            Some(n) if !n.is_empty() => n.to_string(),
            _ => {
                return Err(Error::Parse {
                    line,
                    message: "missing class name".into(),
                })
            }
        };
        let vector = fields
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line,
                        message: format!("`{f}` is not a finite decimal number"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        if vector.is_empty() {
            return Err(Error::Parse {
                line,
                message: format!("class `{name}` has no vector components"),
            });
        }
        let expected = *expected.get_or_insert(vector.len());
        if vector.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: vector.len(),
                context: Some(format!("line {line}")),
            });
        }
        entries.push((name, vector));
    }
    EmbeddingTable::new(entries)
}

pub(crate) fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub(crate) fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// Cosine of the angle between `u` and `v`, clamped to `[-1, 1]`.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
            context: None,
        });
    }
    let (nu2, nv2) = (dot(u, u), dot(v, v));
    if nu2 == 0.0 || nv2 == 0.0 {
        return Err(Error::ZeroVector(None));
    }
    Ok((dot(u, v) / (nu2 * nv2).sqrt()).clamp(-1.0, 1.0))
}

/// Returns `u / ‖u‖`.
pub fn normalized(u: &[f64]) -> Result<Vec<f64>> {
    let n = norm(u);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroVector(None));
    }
    Ok(u.iter().map(|x| x / n).collect())
}

/// Aggregates several member vectors into one unit-norm class prototype
/// (arithmetic mean, then normalized).
pub fn class_prototype<V: AsRef<[f64]>>(members: &[V]) -> Result<Vec<f64>> {
    let first = members.first().ok_or(Error::EmptyList)?.as_ref();
    let d = first.len();
    let mut mean = vec![0.0; d];
    for member in members {
        let member = member.as_ref();
        if member.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: member.len(),
                context: None,
            });
        }
        for (m, x) in mean.iter_mut().zip(member) {
            *m += x;
        }
    }
    let count = members.len() as f64;
    mean.iter_mut().for_each(|m| *m /= count);
    normalized(&mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn load(s: &str) -> Result<EmbeddingTable> {
        load_embeddings(s.as_bytes())
    }

    #[test]
    fn loads_simple_table() {
        let table = load("cat,1.0,0.0\ndog,0.0,1.0").unwrap();
        assert_eq!(table.dimension(), 2);
        assert_eq!(table.len(), 2);
        assert_eq!(table.names(), ["cat", "dog"]);
        assert_eq!(table.get("dog"), Some(&[0.0, 1.0][..]));
    }

    #[test]
    fn rejects_ragged_rows() {
        assert!(matches!(
            load("cat,1.0,0.0\ndog,0.0"),
            Err(Error::DimensionMismatch {
                expected: 2,
                found: 1,
                ..
            })
        ));
    }

    #[test]
    fn rejects_zero_vector() {
        assert!(matches!(load("cat,0.0,0.0"), Err(Error::ZeroVector(_))));
    }

    #[test]
    fn rejects_duplicates_and_garbage() {
        assert!(matches!(
            load("cat,1,0\ncat,0,1"),
            Err(Error::DuplicateName(n)) if n == "cat"
        ));
        assert!(matches!(load("cat,1,x"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(load("cat"), Err(Error::Parse { .. })));
        assert!(matches!(load("cat,nan,1"), Err(Error::Parse { .. })));
        assert!(matches!(load(""), Err(Error::Parse { .. })));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let table = load("giant panda,0.1,-2.5e-3,7\nseal,1,2,3\n").unwrap();
        let again = load(&table.to_csv()).unwrap();
        assert_eq!(table, again);
    }

    #[test]
    fn select_reorders_and_reports_missing() {
        let table = load("a,1,0\nb,0,1\nc,1,1").unwrap();
        let sub = table.select(&["c", "a"]).unwrap();
        assert_eq!(sub.names(), ["c", "a"]);
        assert!(matches!(table.select(&["z"]), Err(Error::UnknownClass(_))));
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroVector(_))
        ));
    }

    #[test]
    fn prototype_examples() {
        assert_eq!(class_prototype(&[vec![2.0, 0.0]]).unwrap(), vec![1.0, 0.0]);
        let p = class_prototype(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((p[0] - h).abs() < 1e-15 && (p[1] - h).abs() < 1e-15);
        assert!(matches!(
            class_prototype(&[vec![1.0, 0.0], vec![-1.0, 0.0]]),
            Err(Error::ZeroVector(_))
        ));
        assert!(matches!(
            class_prototype::<Vec<f64>>(&[]),
            Err(Error::EmptyList)
        ));
    }

    fn nonzero_vec(d: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, d).prop_filter("nonzero", |v| norm(v) > 1e-3)
    }

    proptest! {
        #[test]
        fn cosine_is_symmetric_and_bounded(
            (u, v) in (1usize..12).prop_flat_map(|d| (nonzero_vec(d), nonzero_vec(d)))
        ) {
            let a = cosine_similarity(&u, &v).unwrap();
            let b = cosine_similarity(&v, &u).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&a));
        }

        #[test]
        fn cosine_is_scale_invariant(u in nonzero_vec(7), c in 1e-3f64..1e3) {
            let scaled: Vec<f64> = u.iter().map(|x| x * c).collect();
            prop_assert!((cosine_similarity(&u, &scaled).unwrap() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn singleton_prototype_is_normalized_member(u in nonzero_vec(5)) {
            let p = class_prototype(std::slice::from_ref(&u)).unwrap();
            let n = norm(&u);
            for (a, b) in p.iter().zip(&u) {
                prop_assert!((a - b / n).abs() <= 1e-12);
            }
        }
    }
}
