//! The concept space being debiased: embedded tokens, the protected and
//! occupational groupings, and bilinear attention-style association strengths.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, softmax, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptEmbedding {
    pub token: String,
    pub vector: Vec<f64>,
}

impl ConceptEmbedding {
    pub fn new(token: impl Into<String>, vector: Vec<f64>) -> Self {
        Self {
            token: token.into(),
            vector,
        }
    }
}

fn default_protected_label() -> String {
    "Person".to_string()
}

fn default_occupational_label() -> String {
    "Profession".to_string()
}

/// Protected (demographic) and occupational token sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub protected: Vec<String>,
    pub occupational: Vec<String>,
    #[serde(default = "default_protected_label")]
    pub canonical_protected_label: String,
    #[serde(default = "default_occupational_label")]
    pub canonical_occupational_label: String,
}

impl GroupSpec {
    pub fn new(protected: Vec<String>, occupational: Vec<String>) -> Self {
        Self {
            protected,
            occupational,
            canonical_protected_label: default_protected_label(),
            canonical_occupational_label: default_occupational_label(),
        }
    }

    pub fn is_protected(&self, token: &str) -> bool {
        self.protected.iter().any(|t| t == token)
    }

    pub fn is_occupational(&self, token: &str) -> bool {
        self.occupational.iter().any(|t| t == token)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for t in self.protected.iter().chain(&self.occupational) {
            if !seen.insert(t.as_str()) {
                return Err(Error::invalid(format!(
                    "token `{t}` listed twice across protected/occupational groups"
                )));
            }
        }
        Ok(())
    }
}

/// Query/key projections defining association scores `v_xᵀ W_Q W_Kᵀ v_y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationModel {
    pub w_q: Matrix,
    pub w_k: Matrix,
}

impl AssociationModel {
    pub fn new(w_q: Matrix, w_k: Matrix) -> Result<Self> {
        if w_q.shape() != w_k.shape() {
            return Err(Error::invalid(format!(
                "W_Q is {}x{} but W_K is {}x{}",
                w_q.rows(),
                w_q.cols(),
                w_k.rows(),
                w_k.cols()
            )));
        }
        if !w_q.is_finite() || !w_k.is_finite() {
            return Err(Error::invalid(
                "association matrices contain non-finite entries",
            ));
        }
        Ok(Self { w_q, w_k })
    }

    /// `W_Q = W_K = I`: plain dot-product associations.
    pub fn identity(dim: usize) -> Self {
        Self {
            w_q: Matrix::identity(dim),
            w_k: Matrix::identity(dim),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_q.rows()
    }

    pub fn key_dim(&self) -> usize {
        self.w_q.cols()
    }

    /// The `d_c × d_c` association operator `W_Q W_Kᵀ`.
    pub fn morphism_matrix(&self) -> Matrix {
        self.w_q
            .matmul(&self.w_k.transpose())
            .expect("W_Q and W_K share a key dimension")
    }

    pub fn raw_score(&self, source: &[f64], target: &[f64]) -> f64 {
        let q = self
            .w_q
            .transpose()
            .matvec(source)
            .expect("checked dimension");
        let k = self
            .w_k
            .transpose()
            .matvec(target)
            .expect("checked dimension");
        dot(&q, &k)
    }
}

/// Concept objects plus their association model and grouping.
#[derive(Debug, Clone)]
pub struct SemanticCategory {
    objects: Vec<ConceptEmbedding>,
    index: HashMap<String, usize>,
    association: AssociationModel,
    groups: GroupSpec,
    dim: usize,
}

impl SemanticCategory {
    pub fn new(
        objects: Vec<ConceptEmbedding>,
        association: Option<AssociationModel>,
        groups: GroupSpec,
    ) -> Result<Self> {
        let dim = objects
            .first()
            .map(|o| o.vector.len())
            .ok_or_else(|| Error::invalid("a category needs at least one object"))?;
        if dim == 0 {
            return Err(Error::invalid("embeddings must have positive dimension"));
        }
        let mut index = HashMap::with_capacity(objects.len());
        for (i, obj) in objects.iter().enumerate() {
            if obj.token.is_empty() {
                return Err(Error::invalid("empty token"));
            }
            if obj.vector.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    found: obj.vector.len(),
                });
            }
            if obj.vector.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!(
                    "non-finite entry in `{}`",
                    obj.token
                )));
            }
            if index.insert(obj.token.clone(), i).is_some() {
                return Err(Error::DuplicateToken(obj.token.clone()));
            }
        }
        let association = association.unwrap_or_else(|| AssociationModel::identity(dim));
        if association.input_dim() != dim {
            return Err(Error::Dimension {
                expected: dim,
                found: association.input_dim(),
            });
        }
        groups.validate()?;
        for t in groups.protected.iter().chain(&groups.occupational) {
            if !index.contains_key(t) {
                return Err(Error::UnknownToken(t.clone()));
            }
        }
        Ok(Self {
            objects,
            index,
            association,
            groups,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn objects(&self) -> &[ConceptEmbedding] {
        &self.objects
    }

    pub fn groups(&self) -> &GroupSpec {
        &self.groups
    }

    pub fn association(&self) -> &AssociationModel {
        &self.association
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn vector(&self, token: &str) -> Result<&[f64]> {
        self.index
            .get(token)
            .map(|&i| self.objects[i].vector.as_slice())
            .ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    /// Every object token except `source`, in load order.
    pub fn default_targets(&self, source: &str) -> Vec<String> {
        self.objects
            .iter()
            .filter(|o| o.token != source)
            .map(|o| o.token.clone())
            .collect()
    }

    /// Raw bilinear scores `v_sᵀ W_Q W_Kᵀ v_t` for each target.
    pub fn raw_scores(&self, source: &str, targets: &[String]) -> Result<Vec<f64>> {
        let vs = self.vector(source)?;
        targets
            .iter()
            .map(|t| Ok(self.association.raw_score(vs, self.vector(t)?)))
            .collect()
    }

    /// Softmax of the association scores from `source` over `targets`.
    pub fn morphism_strength(&self, source: &str, targets: &[String]) -> Result<Vec<f64>> {
        if targets.is_empty() {
            return Err(Error::invalid(
                "morphism strength needs at least one target",
            ));
        }
        softmax(&self.raw_scores(source, targets)?)
    }

    /// All unordered pairs `(i < j)` of the group's vectors, in listing order.
    pub fn group_pairs(&self, group: &[String]) -> Result<Vec<(&[f64], &[f64])>> {
        let vectors = group
            .iter()
            .map(|t| self.vector(t))
            .collect::<Result<Vec<_>>>()?;
        let mut pairs = Vec::with_capacity(vectors.len() * vectors.len().saturating_sub(1) / 2);
        for i in 0..vectors.len() {
            for j in (i + 1)..vectors.len() {
                pairs.push((vectors[i], vectors[j]));
            }
        }
        Ok(pairs)
    }

    /// Mean embedding of the tokens that exist in this category.
    pub fn mean_embedding<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.dim];
        let mut count = 0usize;
        for t in tokens {
            if let Ok(v) = self.vector(t.as_ref()) {
                acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::invalid("none of the query tokens has an embedding"));
        }
        acc.iter_mut().for_each(|a| *a /= count as f64);
        Ok(acc)
    }
}

/// Parses the text embedding format: a `<count> <dimension>` header followed
/// by `<token> <x1> ... <xd>` lines.
pub fn load_embeddings<R: BufRead>(reader: R) -> Result<Vec<ConceptEmbedding>> {
    let mut lines = reader.lines().enumerate();
    let (count, dim) = loop {
        match lines.next() {
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: "missing header".into(),
                })
            }
            Some((i, line)) => {
                let line = line.map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                break parse_header(&line, i + 1)?;
            }
        }
    };

    let mut out = Vec::with_capacity(count);
    let mut seen = HashSet::with_capacity(count);
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else {
            continue;
        };
        let coords = fields
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("invalid number `{f}`"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if coords.len() != dim {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {dim} coordinates, found {}", coords.len()),
            });
        }
        if coords.iter().any(|x| !x.is_finite()) {
            return Err(Error::Parse {
                line: lineno,
                message: "non-finite coordinate".into(),
            });
        }
        if !seen.insert(token.to_string()) {
            return Err(Error::DuplicateToken(token.to_string()));
        }
        out.push(ConceptEmbedding::new(token, coords));
    }
    if out.len() != count {
        return Err(Error::invalid(format!(
            "header declares {count} embeddings, file has {}",
            out.len()
        )));
    }
    Ok(out)
}

fn parse_header(line: &str, lineno: usize) -> Result<(usize, usize)> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    let bad = || Error::Parse {
        line: lineno,
        message: format!("malformed header `{line}`, expected `<count> <dimension>`"),
    };
    if fields.len() != 2 {
        return Err(bad());
    }
    let count = fields[0].parse().map_err(|_| bad())?;
    let dim: usize = fields[1].parse().map_err(|_| bad())?;
    if dim == 0 {
        return Err(bad());
    }
    Ok((count, dim))
}

pub fn load_embeddings_file(path: &Path) -> Result<Vec<ConceptEmbedding>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_embeddings(std::io::BufReader::new(file))
}

/// Writes embeddings in the format read by [`load_embeddings`].
pub fn format_embeddings(objects: &[ConceptEmbedding]) -> String {
    let dim = objects.first().map_or(0, |o| o.vector.len());
    let mut out = format!("{} {}\n", objects.len(), dim);
    for o in objects {
        out.push_str(&o.token);
        for x in &o.vector {
            out.push(' ');
            out.push_str(&format!("{x:.16e}"));
        }
        out.push('\n');
    }
    out
}
