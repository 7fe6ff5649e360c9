//! Counterfactual validation and bundled synthetic scenarios.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::category::{ConceptEmbedding, GroupSpec, SemanticCategory};
use crate::error::{Error, Result};
use crate::linalg::{orthonormalize_rows, Matrix};
use crate::metrics::{metric_report, MetricInputs, MetricReport, Space, StereotypeLexicon};
use crate::retrieval::{DocumentRecord, RetrievalConfig};
use crate::spectral::{fit, DebiasConfig, DebiasProjection, Mode};
use crate::workspace::{tokenize, SubspaceDim, Workspace, SLOT};

/// Random unit vectors drawn per fitted instance for the bound diagnostic.
pub const BOUND_SAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualPair {
    pub template: Vec<String>,
    pub value_a: String,
    pub value_b: String,
    pub filled_a: Vec<String>,
    pub filled_b: Vec<String>,
}

fn fill(template: &[String], value: &str) -> Vec<String> {
    template
        .iter()
        .map(|t| {
            if t == SLOT {
                value.to_string()
            } else {
                t.clone()
            }
        })
        .collect()
}

/// Every unordered pair of distinct `values` in every template, in an order
/// shuffled by `seed`.
pub fn generate_pairs(
    templates: &[Vec<String>],
    values: &[String],
    seed: u64,
) -> Result<Vec<CounterfactualPair>> {
    let distinct: BTreeSet<&String> = values.iter().collect();
    if distinct.len() < 2 {
        return Err(Error::invalid(
            "counterfactual pairs need at least 2 distinct values",
        ));
    }
    let mut pairs = Vec::new();
    for template in templates {
        let slots = template.iter().filter(|t| *t == SLOT).count();
        if slots != 1 {
            return Err(Error::invalid(format!(
                "template `{}` has {slots} slots, expected exactly one {SLOT}",
                template.join(" ")
            )));
        }
        let vals: Vec<&String> = distinct.iter().copied().collect();
        for i in 0..vals.len() {
            for j in (i + 1)..vals.len() {
                pairs.push(CounterfactualPair {
                    template: template.clone(),
                    value_a: vals[i].clone(),
                    value_b: vals[j].clone(),
                    filled_a: fill(template, vals[i]),
                    filled_b: fill(template, vals[j]),
                });
            }
        }
    }
    pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(pairs)
}

pub fn total_variation(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension {
            expected: p.len(),
            found: q.len(),
        });
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualVariance {
    pub mean: f64,
    pub per_pair: Vec<f64>,
}

/// Mean total-variation distance between the scored halves of each pair.
pub fn counterfactual_variance<F>(
    pairs: &[CounterfactualPair],
    mut scorer: F,
) -> Result<CounterfactualVariance>
where
    F: FnMut(&[String]) -> Result<Vec<f64>>,
{
    if pairs.is_empty() {
        return Err(Error::invalid("no counterfactual pairs"));
    }
    let per_pair = pairs
        .iter()
        .enumerate()
        .map(|(index, pair)| {
            let wrap = |e: Error| Error::Pair {
                index,
                source: Box::new(e),
            };
            let a = scorer(&pair.filled_a).map_err(wrap)?;
            let b = scorer(&pair.filled_b).map_err(wrap)?;
            total_variation(&a, &b).map_err(wrap)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = per_pair.iter().sum::<f64>() / per_pair.len() as f64;
    Ok(CounterfactualVariance { mean, per_pair })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtectedAxis {
    pub privileged: Vec<String>,
    pub marginalized: Vec<String>,
    /// Offset of each protected token along the bias direction.
    pub bias_magnitude: f64,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleAxis {
    pub favoured: Vec<String>,
    pub disfavoured: Vec<String>,
    pub skill: f64,
    /// How far occupations lean along the protected bias direction.
    pub bias_leak: f64,
    pub noise: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenBlock {
    pub tokens: Vec<String>,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StereotypeAnchors {
    pub favoured: String,
    pub disfavoured: String,
}

fn one() -> f64 {
    1.0
}

fn default_top_n() -> usize {
    3
}

/// A synthetic scenario: generator parameters plus the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub seed: u64,
    pub protected: ProtectedAxis,
    pub occupational: RoleAxis,
    #[serde(default)]
    pub extra_roles: TokenBlock,
    #[serde(default)]
    pub context: TokenBlock,
    pub stereotype_anchors: StereotypeAnchors,
    pub templates: Vec<String>,
    #[serde(default)]
    pub neutral_prompts: Vec<String>,
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default)]
    pub du: SubspaceDim,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default = "one")]
    pub temperature: f64,
    #[serde(default = "default_top_n")]
    pub top_n: usize,
}

const BUNDLED: [(&str, &str); 2] = [
    ("care_roles", include_str!("../scenarios/care_roles.json")),
    ("job_roles", include_str!("../scenarios/job_roles.json")),
];

/// Names of the bundled scenarios, sorted.
pub fn bundled_names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}

/// Raw JSON of a bundled scenario.
pub fn bundled_source(name: &str) -> Result<&'static str> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, src)| *src)
        .ok_or_else(|| Error::UnknownScenario {
            name: name.to_string(),
            available: bundled_names().join(", "),
        })
}

impl ScenarioSpec {
    pub fn bundled(name: &str) -> Result<Self> {
        Self::from_json(bundled_source(name)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn protected_tokens(&self) -> Vec<String> {
        let mut v = self.protected.privileged.clone();
        v.extend(self.protected.marginalized.iter().cloned());
        v
    }

    pub fn occupational_tokens(&self) -> Vec<String> {
        let mut v = self.occupational.favoured.clone();
        v.extend(self.occupational.disfavoured.iter().cloned());
        v
    }

    pub fn lexicon(&self) -> StereotypeLexicon {
        let a = &self.stereotype_anchors;
        StereotypeLexicon::new(
            self.occupational
                .favoured
                .iter()
                .map(|t| (t.clone(), a.favoured.clone()))
                .chain(
                    self.occupational
                        .disfavoured
                        .iter()
                        .map(|t| (t.clone(), a.disfavoured.clone())),
                ),
        )
    }

    pub fn dim(&self) -> usize {
        AXES + self.protected_tokens().len()
            + self.occupational_tokens().len()
            + self.extra_roles.tokens.len()
    }

    /// Builds the concept space and corpus for `seed`.
    pub fn generate(&self, seed: u64) -> Result<Workspace> {
        let dim = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut basis = Matrix::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..dim {
                basis.set(i, j, rng.sample(StandardNormal));
            }
        }
        orthonormalize_rows(&mut basis)?;
        let axis = |i: usize| basis.row(i).to_vec();
        let (person, bias, skill, role, context) = (axis(0), axis(1), axis(2), axis(3), axis(4));

        let mut objects = Vec::new();
        let mut block = AXES;
        let noisy =
            |base: Vec<f64>, start: usize, width: usize, scale: f64, rng: &mut ChaCha8Rng| {
                let mut v = base;
                for j in 0..width {
                    let z: f64 = rng.sample(StandardNormal);
                    axpy(&mut v, scale * z, basis.row(start + j));
                }
                v
            };

        let protected = self.protected_tokens();
        for t in &protected {
            let sign = if self.protected.privileged.contains(t) {
                1.0
            } else {
                -1.0
            };
            let mut v = person.clone();
            axpy(&mut v, sign * self.protected.bias_magnitude, &bias);
            let v = noisy(v, block, protected.len(), self.protected.noise, &mut rng);
            objects.push(ConceptEmbedding::new(t.clone(), v));
        }
        block += protected.len();

        let occupational = self.occupational_tokens();
        for t in &occupational {
            let sign = if self.occupational.favoured.contains(t) {
                1.0
            } else {
                -1.0
            };
            let mut v = role.clone();
            axpy(&mut v, sign * self.occupational.skill, &skill);
            axpy(&mut v, sign * self.occupational.bias_leak, &bias);
            let v = noisy(
                v,
                block,
                occupational.len(),
                self.occupational.noise,
                &mut rng,
            );
            objects.push(ConceptEmbedding::new(t.clone(), v));
        }
        block += occupational.len();

        for t in &self.extra_roles.tokens {
            let v = noisy(
                role.clone(),
                block,
                self.extra_roles.tokens.len(),
                self.extra_roles.noise,
                &mut rng,
            );
            objects.push(ConceptEmbedding::new(t.clone(), v));
        }

        for t in &self.context.tokens {
            let mut v = context.clone();
            axpy(&mut v, 0.5, &role);
            for axis in [&person, &role, &context] {
                let z: f64 = rng.sample(StandardNormal);
                axpy(&mut v, self.context.noise * z, axis);
            }
            objects.push(ConceptEmbedding::new(t.clone(), v));
        }

        let category = SemanticCategory::new(
            objects,
            None,
            GroupSpec::new(protected.clone(), occupational.clone()),
        )?;
        let corpus = self.corpus(&category)?;
        let mut candidates = occupational;
        candidates.extend(self.extra_roles.tokens.iter().cloned());
        Workspace::assemble(
            category,
            self.lexicon(),
            corpus,
            Some(candidates),
            &self.templates,
            &self.neutral_prompts,
            DebiasConfig {
                lambda_weight: self.lambda,
                mode: self.mode,
                d_u: self.du.as_option(),
                ..Default::default()
            },
            self.retrieval,
            self.temperature,
            self.top_n,
            seed,
        )
    }

    /// One stereotyped and one counter-stereotyped document per occupation,
    /// one untagged document per extra role.
    fn corpus(&self, category: &SemanticCategory) -> Result<Vec<DocumentRecord>> {
        let anchors = &self.stereotype_anchors;
        let midpoint = |a: &str, b: &str| -> Result<Vec<f64>> {
            let (x, y) = (category.vector(a)?, category.vector(b)?);
            Ok(x.iter().zip(y).map(|(p, q)| 0.5 * (p + q)).collect())
        };
        let mut docs = Vec::new();
        let mut push_pair = |role: &String, stereo: &str, counter: &str| -> Result<()> {
            for (anchor, flag) in [(stereo, false), (counter, true)] {
                docs.push(DocumentRecord {
                    id: format!("{role}-{anchor}"),
                    text: vec![role.clone(), anchor.to_string()],
                    embedding: midpoint(role, anchor)?,
                    attribute_tags: BTreeSet::from([anchor.to_string()]),
                    counter_stereotype: flag,
                });
            }
            Ok(())
        };
        for role in &self.occupational.favoured {
            push_pair(role, &anchors.favoured, &anchors.disfavoured)?;
        }
        for role in &self.occupational.disfavoured {
            push_pair(role, &anchors.disfavoured, &anchors.favoured)?;
        }
        for role in &self.extra_roles.tokens {
            docs.push(DocumentRecord {
                id: role.clone(),
                text: vec![role.clone()],
                embedding: category.vector(role)?.to_vec(),
                attribute_tags: BTreeSet::new(),
                counter_stereotype: false,
            });
        }
        Ok(docs)
    }
}

/// Shared directions ahead of the per-token noise blocks: person, bias,
/// skill, role, context.
const AXES: usize = 5;

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDelta {
    pub template: String,
    pub value_a: String,
    pub value_b: String,
    pub tv_pre: f64,
    pub tv_post: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrePost {
    pub pre: f64,
    pub post: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub scenario: String,
    pub seed: u64,
    pub lambda: f64,
    pub mode: Mode,
    pub d_u: usize,
    pub d_c: usize,
    pub eigenvalues: Vec<f64>,
    /// Mean counterfactual TV of the retrieval-fused outputs.
    pub output_variance: PrePost,
    /// Same, scoring the parametric distribution alone.
    pub parametric_variance: PrePost,
    pub sar: PrePost,
    pub sar_chance: f64,
    pub dpd: PrePost,
    pub metrics_pre: MetricReport,
    pub metrics_post: MetricReport,
    pub pairs: Vec<PairDelta>,
    pub warnings: Vec<String>,
    pub checks: Vec<InvariantCheck>,
    pub passed: bool,
}

struct Phase {
    fused: Vec<Vec<f64>>,
    parametric: Vec<Vec<f64>>,
    fusions: Vec<(Vec<f64>, Vec<f64>)>,
    outputs: Vec<Vec<String>>,
}

/// Scores every probe sequence in one space.
fn run_phase(
    ws: &Workspace,
    probes: &[Vec<String>],
    neutral: usize,
    proj: Option<&DebiasProjection>,
) -> Result<Phase> {
    let index = ws.index_for(proj)?;
    let mut phase = Phase {
        fused: Vec::new(),
        parametric: Vec::new(),
        fusions: Vec::new(),
        outputs: Vec::new(),
    };
    for (i, tokens) in probes.iter().enumerate() {
        let g = ws.ground(tokens, proj, &index)?;
        if i < neutral {
            phase.outputs.push(ws.top_candidates(&g.fused.fused));
        }
        phase.parametric.push(g.fused.parametric.clone());
        phase.fused.push(g.fused.fused.clone());
        phase.fusions.push((g.fused.parametric, g.fused.fused));
    }
    Ok(phase)
}

/// Pre/post metric reports plus counterfactual variance for one projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub metrics_pre: MetricReport,
    pub metrics_post: MetricReport,
    pub pairs: Vec<CounterfactualPair>,
    /// `None` when the workspace has no templates.
    pub fused_variance: Option<(CounterfactualVariance, CounterfactualVariance)>,
    pub parametric_variance: Option<(CounterfactualVariance, CounterfactualVariance)>,
}

/// Scores the workspace in the original space and under `proj`.
///
/// Neutral prompts drive the utility comparison (templates with the slot
/// removed when none are given); every filled template contributes to CRE.
pub fn compare(
    ws: &Workspace,
    proj: &DebiasProjection,
    combined: Option<&Matrix>,
) -> Result<Comparison> {
    let identity = DebiasProjection::identity(ws.category.dim());
    let pairs = if ws.templates.is_empty() {
        Vec::new()
    } else {
        generate_pairs(&ws.templates, &ws.category.groups().protected, ws.seed)?
    };
    let mut probes: Vec<Vec<String>> = ws.neutral_prompts.clone();
    if probes.is_empty() {
        probes.extend(
            ws.templates
                .iter()
                .map(|t| t.iter().filter(|x| *x != SLOT).cloned().collect::<Vec<_>>()),
        );
    }
    if probes.is_empty() {
        return Err(Error::Missing("neutral prompts or templates".into()));
    }
    let neutral = probes.len();
    let mut position = BTreeMap::new();
    for pair in &pairs {
        for seq in [&pair.filled_a, &pair.filled_b] {
            if !position.contains_key(seq) {
                position.insert(seq.clone(), probes.len());
                probes.push(seq.clone());
            }
        }
    }

    let pre = run_phase(ws, &probes, neutral, None)?;
    let post = run_phase(ws, &probes, neutral, Some(proj))?;

    let variance = |table: &[Vec<f64>]| {
        counterfactual_variance(&pairs, |seq| {
            Ok(table[*position.get(seq).expect("every filled sequence is a probe")].clone())
        })
    };
    let (fused_variance, parametric_variance) = if pairs.is_empty() {
        (None, None)
    } else {
        (
            Some((variance(&pre.fused)?, variance(&post.fused)?)),
            Some((variance(&pre.parametric)?, variance(&post.parametric)?)),
        )
    };

    let metrics_pre = metric_report(&MetricInputs {
        projection: Some(&identity),
        category: Some(&ws.category),
        lexicon: Some(&ws.lexicon),
        fusions: Some(&pre.fusions),
        baseline_outputs: Some(&pre.outputs),
        debiased_outputs: Some(&pre.outputs),
        sar_space: Some(Space::Original),
        combined: None,
        bound_samples: 0,
        seed: ws.seed,
    })?;
    let metrics_post = metric_report(&MetricInputs {
        projection: Some(proj),
        category: Some(&ws.category),
        lexicon: Some(&ws.lexicon),
        fusions: Some(&post.fusions),
        baseline_outputs: Some(&pre.outputs),
        debiased_outputs: Some(&post.outputs),
        sar_space: Some(Space::Projected),
        combined,
        bound_samples: BOUND_SAMPLES,
        seed: ws.seed,
    })?;
    Ok(Comparison {
        metrics_pre,
        metrics_post,
        pairs,
        fused_variance,
        parametric_variance,
    })
}

/// Fits, scores, grounds, and compares counterfactual variance before and
/// after debiasing.
pub fn validate_workspace(name: &str, ws: &Workspace) -> Result<ValidationReport> {
    if ws.templates.is_empty() {
        return Err(Error::Missing("counterfactual templates".into()));
    }
    let outcome = fit(&ws.category, &ws.debias)?;
    let proj = &outcome.projection;
    let cmp = compare(ws, proj, Some(&outcome.combined))?;
    let (tv_pre, tv_post) = cmp.fused_variance.expect("templates present");
    let (ptv_pre, ptv_post) = cmp.parametric_variance.expect("templates present");

    let sar_chance = 1.0 / ws.lexicon.anchors().len() as f64;
    let sar = PrePost {
        pre: cmp.metrics_pre.sar,
        post: cmp.metrics_post.sar,
    };
    let dpd = PrePost {
        pre: cmp.metrics_pre.dpd,
        post: cmp.metrics_post.dpd,
    };
    let output_variance = PrePost {
        pre: tv_pre.mean,
        post: tv_post.mean,
    };
    let check = |name: &str, passed: bool, detail: String| InvariantCheck {
        name: name.to_string(),
        passed,
        detail,
    };
    let checks = vec![
        check(
            "pre_sar_at_least_0.9",
            sar.pre >= 0.9,
            format!("pre SAR {}", sar.pre),
        ),
        check(
            "post_sar_within_chance_plus_0.1",
            sar.post <= sar_chance + 0.1,
            format!("post SAR {} vs chance {sar_chance}", sar.post),
        ),
        check(
            "post_dpd_at_most_tenth_of_pre",
            dpd.post <= 0.1 * dpd.pre,
            format!("DPD {} -> {}", dpd.pre, dpd.post),
        ),
        check(
            "counterfactual_variance_decreases",
            output_variance.post < output_variance.pre,
            format!("TV {} -> {}", output_variance.pre, output_variance.post),
        ),
    ];
    let passed = checks.iter().all(|c| c.passed);

    let pairs = cmp
        .pairs
        .iter()
        .zip(tv_pre.per_pair.iter().zip(&tv_post.per_pair))
        .map(|(p, (&a, &b))| PairDelta {
            template: p.template.join(" "),
            value_a: p.value_a.clone(),
            value_b: p.value_b.clone(),
            tv_pre: a,
            tv_post: b,
            delta: b - a,
        })
        .collect();

    Ok(ValidationReport {
        scenario: name.to_string(),
        seed: ws.seed,
        lambda: ws.debias.lambda_weight,
        mode: ws.debias.mode,
        d_u: proj.d_u(),
        d_c: proj.d_c(),
        eigenvalues: outcome.eigen.eigenvalues.clone(),
        output_variance,
        parametric_variance: PrePost {
            pre: ptv_pre.mean,
            post: ptv_post.mean,
        },
        sar,
        sar_chance,
        dpd,
        metrics_pre: cmp.metrics_pre,
        metrics_post: cmp.metrics_post,
        pairs,
        warnings: outcome.warnings,
        checks,
        passed,
    })
}

/// Generates `spec` under `seed` (the scenario's own seed when `None`) and
/// validates it.
pub fn run_scenario(
    spec: &ScenarioSpec,
    seed: Option<u64>,
) -> Result<(Workspace, ValidationReport)> {
    let ws = spec.generate(seed.unwrap_or(spec.seed))?;
    let report = validate_workspace(&spec.name, &ws)?;
    Ok((ws, report))
}

/// Splits template strings into token lists.
pub fn parse_templates(templates: &[String]) -> Vec<Vec<String>> {
    templates.iter().map(|t| tokenize(t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn pair_counts() {
        let t1 = parse_templates(&s(&["hello [SLOT]"]));
        assert_eq!(generate_pairs(&t1, &s(&["a", "b"]), 0).unwrap().len(), 1);
        let t2 = parse_templates(&s(&["hello [SLOT]", "[SLOT] works"]));
        let pairs = generate_pairs(&t2, &s(&["a", "b", "c"]), 0).unwrap();
        assert_eq!(pairs.len(), 6);
        for p in &pairs {
            let diffs = p
                .filled_a
                .iter()
                .zip(&p.filled_b)
                .filter(|(x, y)| x != y)
                .count();
            assert_eq!(diffs, 1);
        }
        assert!(generate_pairs(&parse_templates(&s(&["no slot"])), &s(&["a", "b"]), 0).is_err());
        assert!(
            generate_pairs(&parse_templates(&s(&["[SLOT] [SLOT]"])), &s(&["a", "b"]), 0).is_err()
        );
        assert!(generate_pairs(&t1, &s(&["a"]), 0).is_err());
        assert_eq!(
            generate_pairs(&t2, &s(&["a", "b", "c"]), 5).unwrap(),
            generate_pairs(&t2, &s(&["a", "b", "c"]), 5).unwrap()
        );
    }

    #[test]
    fn variance_examples() {
        let t = parse_templates(&s(&["x [SLOT]"]));
        let pairs = generate_pairs(&t, &s(&["a", "b"]), 0).unwrap();
        let flat = counterfactual_variance(&pairs, |_| Ok(vec![0.5, 0.5])).unwrap();
        assert_eq!(flat.mean, 0.0);
        let flip = counterfactual_variance(&pairs, |seq| {
            Ok(if seq.contains(&"a".to_string()) {
                vec![1.0, 0.0]
            } else {
                vec![0.0, 1.0]
            })
        })
        .unwrap();
        assert_eq!(flip.mean, 1.0);
        // (0.7, 0.3) vs (0.4, 0.6): TV = 0.3
        let hand = counterfactual_variance(&pairs, |seq| {
            Ok(if seq.contains(&"a".to_string()) {
                vec![0.7, 0.3]
            } else {
                vec![0.4, 0.6]
            })
        })
        .unwrap();
        assert!((hand.mean - 0.3).abs() < 1e-15);
        let err = counterfactual_variance(&pairs, |_| Err(Error::invalid("boom"))).unwrap_err();
        assert!(matches!(err, Error::Pair { index: 0, .. }));
    }

    #[test]
    fn unknown_scenario_lists_names() {
        let err = ScenarioSpec::bundled("nope").unwrap_err().to_string();
        assert!(err.contains("job_roles") && err.contains("care_roles"));
    }

    #[test]
    fn bundled_scenarios_parse() {
        for name in bundled_names() {
            let spec = ScenarioSpec::bundled(name).unwrap();
            assert_eq!(spec.name, name);
        }
    }
}
