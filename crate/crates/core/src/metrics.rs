//! Fairness and utility metrics.
//!
//! | metric | meaning | better |
//! |--------|---------|--------|
//! | DPD | mean projected distance between protected tokens | lower |
//! | OPS | Pearson correlation of occupational pair cosines before/after | higher |
//! | SAR | share of occupations nearest their stereotyped anchor | lower |
//! | CRE | KL divergence from parametric to retrieval-fused distribution | context |
//! | URI | mean ROUGE-L F1 between baseline and debiased outputs | higher |

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::category::SemanticCategory;
use crate::error::{Error, Result};
use crate::linalg::{cosine, distance, Matrix};
use crate::spectral::{bound_sweep_seeded, DebiasProjection};

/// Probability mass below this is raised to it before computing KL.
pub const KL_FLOOR: f64 = 1e-12;
/// Tolerance on `Σ p = 1` for inputs treated as distributions.
pub const DISTRIBUTION_TOL: f64 = 1e-9;
/// Cosines closer than this count as a tie in [`sar`].
pub const SAR_TIE_TOL: f64 = 1e-9;

/// Occupation → stereotyped protected anchor.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StereotypeLexicon {
    pub entries: BTreeMap<String, String>,
}

impl StereotypeLexicon {
    pub fn new<I, K, V>(entries: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        Self {
            entries: entries
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct anchors in lexicographic order (this order breaks SAR ties).
    pub fn anchors(&self) -> Vec<&str> {
        self.entries
            .values()
            .map(String::as_str)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn validate(&self, category: &SemanticCategory) -> Result<()> {
        for (occ, anchor) in &self.entries {
            category.vector(occ)?;
            category.vector(anchor)?;
            if !category.groups().is_protected(anchor) {
                return Err(Error::invalid(format!(
                    "stereotype anchor `{anchor}` is not a protected token"
                )));
            }
        }
        Ok(())
    }
}

/// Which space SAR is evaluated in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Original,
    Projected,
}

/// Mean projected distance over unordered pairs of `group`; `None` for < 2 tokens.
pub fn mean_pairwise_distance(
    proj: &DebiasProjection,
    category: &SemanticCategory,
    group: &[String],
) -> Result<Option<f64>> {
    let projected = group
        .iter()
        .map(|t| proj.project(category.vector(t)?))
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..projected.len() {
        for j in (i + 1)..projected.len() {
            total += distance(&projected[i], &projected[j]);
            count += 1;
        }
    }
    Ok((count > 0).then(|| total / count as f64))
}

/// Demographic parity deviation.
pub fn dpd(proj: &DebiasProjection, category: &SemanticCategory) -> Result<f64> {
    let protected = &category.groups().protected;
    if protected.len() < 2 {
        return Err(Error::invalid(format!(
            "DPD needs at least 2 protected tokens, have {}",
            protected.len()
        )));
    }
    Ok(mean_pairwise_distance(proj, category, protected)?.expect("at least one pair"))
}

/// Occupational preservation score.
///
/// Returns [`Error::Undefined`] when either similarity vector has zero variance.
pub fn ops_score(proj: &DebiasProjection, category: &SemanticCategory) -> Result<f64> {
    let occupational = &category.groups().occupational;
    if occupational.len() < 3 {
        return Err(Error::invalid(format!(
            "OPS needs at least 3 occupational tokens, have {}",
            occupational.len()
        )));
    }
    let original = occupational
        .iter()
        .map(|t| category.vector(t))
        .collect::<Result<Vec<_>>>()?;
    let projected = original
        .iter()
        .map(|v| proj.project(v))
        .collect::<Result<Vec<_>>>()?;
    let mut before = Vec::new();
    let mut after = Vec::new();
    for i in 0..original.len() {
        for j in (i + 1)..original.len() {
            before.push(cosine(original[i], original[j]));
            after.push(cosine(&projected[i], &projected[j]));
        }
    }
    pearson(&before, &after)
        .ok_or_else(|| Error::Undefined("occupational similarities have zero variance".to_string()))
}

/// Pearson correlation; `None` if either side has (numerically) zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x[..n].iter().zip(&y[..n]) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    let scale_x = x[..n].iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    let scale_y = y[..n].iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    let floor = 1e-24 * n as f64;
    if sxx <= floor * scale_x * scale_x || syy <= floor * scale_y * scale_y {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Stereotype alignment rate.
///
/// Each lexicon occupation is assigned the anchor with the highest cosine in
/// the chosen space. Cosines within [`SAR_TIE_TOL`] of the best are tied and
/// resolved to the lexicographically first anchor.
pub fn sar(
    proj: &DebiasProjection,
    category: &SemanticCategory,
    lexicon: &StereotypeLexicon,
    space: Space,
) -> Result<f64> {
    if lexicon.is_empty() {
        return Err(Error::invalid("SAR needs a non-empty stereotype lexicon"));
    }
    lexicon.validate(category)?;
    let embed = |token: &str| -> Result<Vec<f64>> {
        let v = category.vector(token)?;
        match space {
            Space::Original => Ok(v.to_vec()),
            Space::Projected => proj.project(v),
        }
    };
    let anchors = lexicon
        .anchors()
        .into_iter()
        .map(|a| Ok((a, embed(a)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut aligned = 0usize;
    for (occupation, stereotyped) in &lexicon.entries {
        let v = embed(occupation)?;
        let scores: Vec<f64> = anchors.iter().map(|(_, a)| cosine(&v, a)).collect();
        let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let winner = scores
            .iter()
            .position(|&s| s >= best - SAR_TIE_TOL)
            .expect("non-empty anchors");
        if anchors[winner].0 == stereotyped {
            aligned += 1;
        }
    }
    Ok(aligned as f64 / lexicon.entries.len() as f64)
}

pub(crate) fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::invalid(format!("{what} is empty")));
    }
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::invalid(format!(
            "{what} has negative or non-finite mass"
        )));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > DISTRIBUTION_TOL {
        return Err(Error::invalid(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

/// `KL(p ‖ q)` in nats.
///
/// Entries of `q` below [`KL_FLOOR`] are raised to it and `q` renormalized;
/// terms with `p_i = 0` contribute nothing.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension {
            expected: p.len(),
            found: q.len(),
        });
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    let smoothed: Vec<f64>;
    let q = if q.iter().any(|&x| x < KL_FLOOR) {
        let floored: Vec<f64> = q.iter().map(|&x| x.max(KL_FLOOR)).collect();
        let total: f64 = floored.iter().sum();
        smoothed = floored.into_iter().map(|x| x / total).collect();
        &smoothed
    } else {
        q
    };
    let kl: f64 = p
        .iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum();
    Ok(kl.max(0.0))
}

/// Contextual regrounding efficacy: `KL(p_param ‖ p_fused)`.
pub fn cre(p_param: &[f64], p_fused: &[f64]) -> Result<f64> {
    kl_divergence(p_param, p_fused)
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 (β = 1).
pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> f64 {
    let lcs = lcs_len(candidate, reference);
    if lcs == 0 {
        return 0.0;
    }
    let precision = lcs as f64 / candidate.len() as f64;
    let recall = lcs as f64 / reference.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Utility retention index: mean ROUGE-L over aligned output pairs.
pub fn uri<T: PartialEq>(baseline: &[Vec<T>], debiased: &[Vec<T>]) -> Result<f64> {
    if baseline.len() != debiased.len() {
        return Err(Error::Dimension {
            expected: baseline.len(),
            found: debiased.len(),
        });
    }
    if baseline.is_empty() {
        return Err(Error::invalid("URI needs at least one output pair"));
    }
    let total: f64 = debiased
        .iter()
        .zip(baseline)
        .map(|(cand, reference)| rouge_l(cand, reference))
        .sum();
    Ok(total / baseline.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `λ_{i+1} − λ_i` over the ascending spectrum.
    pub eigengaps: Vec<f64>,
    pub bound_check_pass_rate: Option<f64>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dpd: f64,
    /// `None` when the similarity vectors have no variance.
    pub ops: Option<f64>,
    pub sar: f64,
    pub cre: f64,
    pub uri: f64,
    pub diagnostics: Diagnostics,
}

impl MetricReport {
    pub const CSV_HEADER: [&'static str; 7] = [
        "phase",
        "dpd",
        "ops",
        "sar",
        "cre",
        "uri",
        "bound_check_pass_rate",
    ];

    pub fn csv_record(&self, phase: &str) -> Vec<String> {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        vec![
            phase.to_string(),
            self.dpd.to_string(),
            opt(self.ops),
            self.sar.to_string(),
            self.cre.to_string(),
            self.uri.to_string(),
            opt(self.diagnostics.bound_check_pass_rate),
        ]
    }
}

/// Inputs for [`metric_report`]; every `None` is a missing prerequisite
/// except `combined`, which only enables the bound-check diagnostic.
#[derive(Debug, Default)]
pub struct MetricInputs<'a> {
    pub projection: Option<&'a DebiasProjection>,
    pub category: Option<&'a SemanticCategory>,
    pub lexicon: Option<&'a StereotypeLexicon>,
    /// `(p_param, p_fused)` pairs; CRE is their mean.
    pub fusions: Option<&'a [(Vec<f64>, Vec<f64>)]>,
    pub baseline_outputs: Option<&'a [Vec<String>]>,
    pub debiased_outputs: Option<&'a [Vec<String>]>,
    pub sar_space: Option<Space>,
    pub combined: Option<&'a Matrix>,
    pub bound_samples: usize,
    pub seed: u64,
}

fn need<T>(x: Option<T>, what: &str) -> Result<T> {
    x.ok_or_else(|| Error::Missing(what.to_string()))
}

pub fn metric_report(inputs: &MetricInputs<'_>) -> Result<MetricReport> {
    let proj = need(inputs.projection, "fitted projection")?;
    let category = need(inputs.category, "semantic category")?;
    let lexicon = need(inputs.lexicon, "stereotype lexicon")?;
    let fusions = need(inputs.fusions, "fusion distributions")?;
    let baseline = need(inputs.baseline_outputs, "baseline outputs")?;
    let debiased = need(inputs.debiased_outputs, "debiased outputs")?;

    let mut warnings = Vec::new();
    let dpd = dpd(proj, category)?;
    let ops = match ops_score(proj, category) {
        Ok(v) => Some(v),
        Err(Error::Undefined(msg)) => {
            warnings.push(format!("OPS undefined: {msg}"));
            None
        }
        Err(e) => return Err(e),
    };
    let sar = sar(
        proj,
        category,
        lexicon,
        inputs.sar_space.unwrap_or(Space::Projected),
    )?;
    if fusions.is_empty() {
        return Err(Error::Missing("fusion distributions".into()));
    }
    let mut cre_total = 0.0;
    for (p_param, p_fused) in fusions {
        cre_total += cre(p_param, p_fused)?;
    }
    let cre = cre_total / fusions.len() as f64;
    let uri = uri(baseline, debiased)?;

    let eigengaps = proj.eigenvalues.windows(2).map(|w| w[1] - w[0]).collect();
    let bound_check_pass_rate = match inputs.combined {
        Some(r) if !proj.eigenvalues.is_empty() && inputs.bound_samples > 0 => {
            bound_sweep_seeded(proj, r, inputs.bound_samples, inputs.seed)?.pass_rate()
        }
        _ => None,
    };
    Ok(MetricReport {
        dpd,
        ops,
        sar,
        cre,
        uri,
        diagnostics: Diagnostics {
            eigengaps,
            bound_check_pass_rate,
            warnings,
            notes: vec![
                "URI is mean ROUGE-L F1 only; factual-QA accuracy is not measured".to_string(),
                format!(
                    "SAR chance level is 1/{} (nearest-anchor classification)",
                    lexicon.anchors().len()
                ),
            ],
        },
    })
}
