//! Exhaustive cosine retrieval with fairness re-ranking and distribution fusion.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cosine, softmax};
use crate::metrics::check_distribution;
use crate::spectral::DebiasProjection;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub id: String,
    pub text: Vec<String>,
    pub embedding: Vec<f64>,
    #[serde(default)]
    pub attribute_tags: BTreeSet<String>,
    #[serde(default)]
    pub counter_stereotype: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gate_threshold: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: 5,
            alpha: 0.5,
            beta: 0.25,
            gate_threshold: 0.5,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::OutOfRange {
                name: "alpha",
                value: self.alpha,
                expected: "[0, 1]",
            });
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::OutOfRange {
                name: "beta",
                value: self.beta,
                expected: ">= 0",
            });
        }
        if !(0.0..=1.0).contains(&self.gate_threshold) {
            return Err(Error::OutOfRange {
                name: "gate_threshold",
                value: self.gate_threshold,
                expected: "[0, 1]",
            });
        }
        Ok(())
    }
}

/// A retrieved document with its score breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDocument {
    pub id: String,
    pub embedding: Vec<f64>,
    pub counter_stereotype: bool,
    pub base: f64,
    pub boost: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub id: String,
    pub base_score: f64,
    pub boost: f64,
    pub final_score: f64,
}

impl From<&ScoredDocument> for AuditEntry {
    fn from(d: &ScoredDocument) -> Self {
        Self {
            id: d.id.clone(),
            base_score: d.base,
            boost: d.boost,
            final_score: d.score,
        }
    }
}

/// Immutable exhaustive index, documents held in id order.
#[derive(Debug, Clone)]
pub struct Index {
    docs: Vec<DocumentRecord>,
    dim: Option<usize>,
}

impl Index {
    pub fn new(docs: Vec<DocumentRecord>) -> Result<Self> {
        let mut by_id = BTreeMap::new();
        let mut dim = None;
        for doc in docs {
            if doc.embedding.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!(
                    "document `{}` has a non-finite embedding",
                    doc.id
                )));
            }
            match dim {
                None => dim = Some(doc.embedding.len()),
                Some(d) if d != doc.embedding.len() => {
                    return Err(Error::invalid(format!(
                        "document `{}` has dimension {}, expected {d}",
                        doc.id,
                        doc.embedding.len()
                    )));
                }
                _ => {}
            }
            if by_id.contains_key(&doc.id) {
                return Err(Error::invalid(format!(
                    "duplicate document id `{}`",
                    doc.id
                )));
            }
            by_id.insert(doc.id.clone(), doc);
        }
        Ok(Self {
            docs: by_id.into_values().collect(),
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn documents(&self) -> &[DocumentRecord] {
        &self.docs
    }

    /// Errors on the first tag outside `labels`.
    pub fn check_tags(&self, labels: &BTreeSet<String>) -> Result<()> {
        for doc in &self.docs {
            if let Some(tag) = doc.attribute_tags.iter().find(|t| !labels.contains(*t)) {
                return Err(Error::invalid(format!(
                    "document `{}` has undeclared tag `{tag}`",
                    doc.id
                )));
            }
        }
        Ok(())
    }

    /// Same corpus with every embedding mapped through `proj`.
    pub fn projected(&self, proj: &DebiasProjection) -> Result<Self> {
        let docs = self
            .docs
            .iter()
            .map(|d| {
                Ok(DocumentRecord {
                    embedding: proj.project(&d.embedding)?,
                    ..d.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            docs,
            dim: self.dim.map(|_| proj.d_u()),
        })
    }
}

pub fn load_corpus(path: &Path) -> Result<Vec<DocumentRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieved {
    pub hits: Vec<ScoredDocument>,
    pub warnings: Vec<String>,
}

fn sort_scored(docs: &mut [ScoredDocument]) {
    docs.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
}

/// Top-`cfg.k` documents by cosine to `query`, ties broken by id.
pub fn retrieve(index: &Index, query: &[f64], cfg: &RetrievalConfig) -> Result<Retrieved> {
    let Some(dim) = index.dim else {
        return Ok(Retrieved {
            hits: Vec::new(),
            warnings: vec!["retrieval index is empty".to_string()],
        });
    };
    if query.len() != dim {
        return Err(Error::Dimension {
            expected: dim,
            found: query.len(),
        });
    }
    let mut hits: Vec<ScoredDocument> = index
        .docs
        .iter()
        .map(|d| {
            let base = cosine(query, &d.embedding);
            ScoredDocument {
                id: d.id.clone(),
                embedding: d.embedding.clone(),
                counter_stereotype: d.counter_stereotype,
                base,
                boost: 0.0,
                score: base,
            }
        })
        .collect();
    sort_scored(&mut hits);
    hits.truncate(cfg.k);
    Ok(Retrieved {
        hits,
        warnings: Vec::new(),
    })
}

/// Adds `cfg.beta` to counter-stereotype documents and re-sorts.
pub fn fairness_rerank(
    mut docs: Vec<ScoredDocument>,
    cfg: &RetrievalConfig,
) -> Vec<ScoredDocument> {
    for d in &mut docs {
        d.boost = if d.counter_stereotype { cfg.beta } else { 0.0 };
        d.score = d.base + d.boost;
    }
    sort_scored(&mut docs);
    docs
}

/// `H(p) / ln n`; `None` for a single-outcome distribution.
pub fn normalized_entropy(p: &[f64]) -> Result<Option<f64>> {
    check_distribution(p, "parametric distribution")?;
    if p.len() == 1 {
        return Ok(None);
    }
    let h: f64 = p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum();
    Ok(Some(h / (p.len() as f64).ln()))
}

/// Whether the parametric distribution is uncertain enough to retrieve.
pub fn adaptive_gate(p_param: &[f64], cfg: &RetrievalConfig) -> Result<bool> {
    Ok(normalized_entropy(p_param)?.is_some_and(|h| h > cfg.gate_threshold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedDistribution {
    pub candidates: Vec<String>,
    pub parametric: Vec<f64>,
    /// Equals `parametric` when nothing was retrieved.
    pub retrieved: Vec<f64>,
    pub fused: Vec<f64>,
    pub retrieved_ids: Vec<String>,
    pub audit: Vec<AuditEntry>,
}

impl FusedDistribution {
    fn passthrough(candidates: &[String], p_param: &[f64]) -> Self {
        Self {
            candidates: candidates.to_vec(),
            parametric: p_param.to_vec(),
            retrieved: p_param.to_vec(),
            fused: p_param.to_vec(),
            retrieved_ids: Vec::new(),
            audit: Vec::new(),
        }
    }
}

/// Mixes `p_param` with a softmax over each candidate's mean cosine to the
/// retrieved documents.
pub fn fuse<F>(
    p_param: &[f64],
    retrieved: &[ScoredDocument],
    candidates: &[String],
    embed: F,
    cfg: &RetrievalConfig,
) -> Result<FusedDistribution>
where
    F: Fn(&str) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    if candidates.is_empty() {
        return Err(Error::invalid("candidate set is empty"));
    }
    if p_param.len() != candidates.len() {
        return Err(Error::Dimension {
            expected: candidates.len(),
            found: p_param.len(),
        });
    }
    check_distribution(p_param, "parametric distribution")?;
    let vectors = candidates
        .iter()
        .map(|c| embed(c))
        .collect::<Result<Vec<_>>>()?;
    if retrieved.is_empty() {
        return Ok(FusedDistribution::passthrough(candidates, p_param));
    }
    let logits: Vec<f64> = vectors
        .iter()
        .map(|v| {
            retrieved
                .iter()
                .map(|d| cosine(v, &d.embedding))
                .sum::<f64>()
                / retrieved.len() as f64
        })
        .collect();
    let p_retrieved = softmax(&logits)?;
    let fused = p_param
        .iter()
        .zip(&p_retrieved)
        .map(|(p, r)| (1.0 - cfg.alpha) * p + cfg.alpha * r)
        .collect();
    Ok(FusedDistribution {
        candidates: candidates.to_vec(),
        parametric: p_param.to_vec(),
        retrieved: p_retrieved,
        fused,
        retrieved_ids: retrieved.iter().map(|d| d.id.clone()).collect(),
        audit: retrieved.iter().map(AuditEntry::from).collect(),
    })
}

/// One line of the retrieval audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub query: Vec<String>,
    pub gate_open: bool,
    pub normalized_entropy: Option<f64>,
    pub config: RetrievalConfig,
    pub entries: Vec<AuditEntry>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grounding {
    pub fused: FusedDistribution,
    pub audit: AuditRecord,
}

/// Gate, then rank the whole corpus, re-rank, keep the top `cfg.k`, and fuse.
///
/// Re-ranking happens before truncation so that boosted documents can enter
/// the retrieved set.
pub fn ground<F>(
    index: &Index,
    query_tokens: &[String],
    query: &[f64],
    p_param: &[f64],
    candidates: &[String],
    embed: F,
    cfg: &RetrievalConfig,
) -> Result<Grounding>
where
    F: Fn(&str) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    let entropy = normalized_entropy(p_param)?;
    let gate_open = adaptive_gate(p_param, cfg)?;
    let mut warnings = Vec::new();
    let hits = if gate_open {
        let pool_cfg = RetrievalConfig {
            k: index.len(),
            ..*cfg
        };
        let pool = retrieve(index, query, &pool_cfg)?;
        warnings.extend(pool.warnings);
        let mut ranked = fairness_rerank(pool.hits, cfg);
        ranked.truncate(cfg.k);
        ranked
    } else {
        Vec::new()
    };
    let fused = fuse(p_param, &hits, candidates, embed, cfg)?;
    let audit = AuditRecord {
        query: query_tokens.to_vec(),
        gate_open,
        normalized_entropy: entropy,
        config: *cfg,
        entries: fused.audit.clone(),
        warnings,
    };
    Ok(Grounding { fused, audit })
}
