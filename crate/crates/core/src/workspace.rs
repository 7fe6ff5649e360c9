//! Workspace configuration and the scoring helpers shared by the CLI and
//! the validation harness.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::category::{
    format_embeddings, load_embeddings_file, AssociationModel, GroupSpec, SemanticCategory,
};
use crate::error::{Error, Result};
use crate::linalg::{cosine, softmax, Matrix};
use crate::metrics::StereotypeLexicon;
use crate::retrieval::{ground, load_corpus, DocumentRecord, Grounding, Index, RetrievalConfig};
use crate::spectral::{DebiasConfig, DebiasProjection, Mode};

/// Placeholder for the protected token in a counterfactual template.
pub const SLOT: &str = "[SLOT]";

/// Subspace dimension setting: fixed or chosen from the eigengap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "DimRepr", into = "DimRepr")]
pub enum SubspaceDim {
    #[default]
    Auto,
    Fixed(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum DimRepr {
    Fixed(usize),
    Word(Option<String>),
}

impl TryFrom<DimRepr> for SubspaceDim {
    type Error = String;

    fn try_from(r: DimRepr) -> std::result::Result<Self, String> {
        match r {
            DimRepr::Fixed(n) => Ok(SubspaceDim::Fixed(n)),
            DimRepr::Word(None) => Ok(SubspaceDim::Auto),
            DimRepr::Word(Some(w)) => w.parse(),
        }
    }
}

impl From<SubspaceDim> for DimRepr {
    fn from(d: SubspaceDim) -> Self {
        match d {
            SubspaceDim::Auto => DimRepr::Word(Some("auto".into())),
            SubspaceDim::Fixed(n) => DimRepr::Fixed(n),
        }
    }
}

impl FromStr for SubspaceDim {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(SubspaceDim::Auto);
        }
        s.parse::<usize>()
            .map(SubspaceDim::Fixed)
            .map_err(|_| format!("expected a positive integer or `auto`, got `{s}`"))
    }
}

impl fmt::Display for SubspaceDim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SubspaceDim::Auto => f.write_str("auto"),
            SubspaceDim::Fixed(n) => write!(f, "{n}"),
        }
    }
}

impl SubspaceDim {
    pub fn as_option(self) -> Option<usize> {
        match self {
            SubspaceDim::Auto => None,
            SubspaceDim::Fixed(n) => Some(n),
        }
    }
}

fn one() -> f64 {
    1.0
}

fn default_top_n() -> usize {
    3
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// On-disk workspace description. Relative paths resolve against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkspaceConfig {
    pub embeddings: PathBuf,
    pub groups: GroupSpec,
    /// JSON file `{"w_q": [[..]], "w_k": [[..]]}`; identity when absent.
    #[serde(default)]
    pub association: Option<PathBuf>,
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default)]
    pub du: SubspaceDim,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub lexicon: StereotypeLexicon,
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    /// Defaults to the occupational group.
    #[serde(default)]
    pub candidates: Option<Vec<String>>,
    #[serde(default)]
    pub templates: Vec<String>,
    #[serde(default)]
    pub neutral_prompts: Vec<String>,
    #[serde(default = "one")]
    pub temperature: f64,
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

impl WorkspaceConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: WorkspaceConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.embeddings);
        fix(&mut self.out);
        if let Some(p) = self.association.as_mut() {
            fix(p);
        }
        if let Some(p) = self.corpus.as_mut() {
            fix(p);
        }
    }

    pub fn debias_config(&self) -> DebiasConfig {
        DebiasConfig {
            lambda_weight: self.lambda,
            mode: self.mode,
            d_u: self.du.as_option(),
            ..Default::default()
        }
    }
}

#[derive(Deserialize)]
struct AssociationFile {
    w_q: Vec<Vec<f64>>,
    w_k: Vec<Vec<f64>>,
}

fn load_association(path: &Path) -> Result<AssociationModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: AssociationFile = serde_json::from_str(&text)?;
    AssociationModel::new(Matrix::from_rows(&file.w_q)?, Matrix::from_rows(&file.w_k)?)
}

/// Splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(String::from).collect()
}

/// A loaded, validated workspace.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub category: SemanticCategory,
    pub lexicon: StereotypeLexicon,
    pub index: Index,
    pub candidates: Vec<String>,
    pub templates: Vec<Vec<String>>,
    pub neutral_prompts: Vec<Vec<String>>,
    pub debias: DebiasConfig,
    pub retrieval: RetrievalConfig,
    pub temperature: f64,
    pub top_n: usize,
    pub seed: u64,
}

impl Workspace {
    pub fn from_config(cfg: &WorkspaceConfig) -> Result<Self> {
        let objects = load_embeddings_file(&cfg.embeddings)?;
        let association = cfg
            .association
            .as_deref()
            .map(load_association)
            .transpose()?;
        let category = SemanticCategory::new(objects, association, cfg.groups.clone())?;
        let corpus = match &cfg.corpus {
            Some(p) => load_corpus(p)?,
            None => Vec::new(),
        };
        Self::assemble(
            category,
            cfg.lexicon.clone(),
            corpus,
            cfg.candidates.clone(),
            &cfg.templates,
            &cfg.neutral_prompts,
            cfg.debias_config(),
            cfg.retrieval,
            cfg.temperature,
            cfg.top_n,
            cfg.seed,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        category: SemanticCategory,
        lexicon: StereotypeLexicon,
        corpus: Vec<DocumentRecord>,
        candidates: Option<Vec<String>>,
        templates: &[String],
        neutral_prompts: &[String],
        debias: DebiasConfig,
        retrieval: RetrievalConfig,
        temperature: f64,
        top_n: usize,
        seed: u64,
    ) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::OutOfRange {
                name: "temperature",
                value: temperature,
                expected: "> 0",
            });
        }
        if !(debias.lambda_weight >= 0.0 && debias.lambda_weight.is_finite()) {
            return Err(Error::OutOfRange {
                name: "lambda",
                value: debias.lambda_weight,
                expected: ">= 0",
            });
        }
        retrieval.validate()?;
        if !lexicon.is_empty() {
            lexicon.validate(&category)?;
        }
        let index = Index::new(corpus)?;
        if let Some(dim) = index.dim() {
            if dim != category.dim() {
                return Err(Error::invalid(format!(
                    "corpus embeddings have dimension {dim}, concept space has {}",
                    category.dim()
                )));
            }
        }
        let mut labels: std::collections::BTreeSet<String> =
            category.groups().protected.iter().cloned().collect();
        labels.insert(category.groups().canonical_protected_label.clone());
        index.check_tags(&labels)?;
        let candidates = candidates.unwrap_or_else(|| category.groups().occupational.clone());
        for c in &candidates {
            category.vector(c)?;
        }
        let templates = templates.iter().map(|t| tokenize(t)).collect();
        let neutral_prompts = neutral_prompts.iter().map(|t| tokenize(t)).collect();
        Ok(Self {
            category,
            lexicon,
            index,
            candidates,
            templates,
            neutral_prompts,
            debias,
            retrieval,
            temperature,
            top_n,
            seed,
        })
    }

    fn embed(&self, token: &str, proj: Option<&DebiasProjection>) -> Result<Vec<f64>> {
        let v = self.category.vector(token)?;
        match proj {
            Some(p) => p.project(v),
            None => Ok(v.to_vec()),
        }
    }

    /// Mean embedding of the known tokens in `tokens`, optionally projected.
    pub fn query_vector<S: AsRef<str>>(
        &self,
        tokens: &[S],
        proj: Option<&DebiasProjection>,
    ) -> Result<Vec<f64>> {
        let mean = self.category.mean_embedding(tokens)?;
        match proj {
            Some(p) => p.project(&mean),
            None => Ok(mean),
        }
    }

    /// Softmax over candidates of `cosine(query, candidate) / temperature`.
    pub fn parametric<S: AsRef<str>>(
        &self,
        tokens: &[S],
        proj: Option<&DebiasProjection>,
    ) -> Result<Vec<f64>> {
        if self.candidates.is_empty() {
            return Err(Error::invalid("candidate set is empty"));
        }
        let q = self.query_vector(tokens, proj)?;
        let logits = self
            .candidates
            .iter()
            .map(|c| Ok(cosine(&q, &self.embed(c, proj)?) / self.temperature))
            .collect::<Result<Vec<_>>>()?;
        softmax(&logits)
    }

    /// Full gate → retrieve → re-rank → fuse pass for one query.
    pub fn ground(
        &self,
        tokens: &[String],
        proj: Option<&DebiasProjection>,
        index: &Index,
    ) -> Result<Grounding> {
        let q = self.query_vector(tokens, proj)?;
        let p = self.parametric(tokens, proj)?;
        ground(
            index,
            tokens,
            &q,
            &p,
            &self.candidates,
            |c| self.embed(c, proj),
            &self.retrieval,
        )
    }

    /// The retrieval index in the space selected by `proj`.
    pub fn index_for(&self, proj: Option<&DebiasProjection>) -> Result<Index> {
        match proj {
            Some(p) => self.index.projected(p),
            None => Ok(self.index.clone()),
        }
    }

    /// The `top_n` candidates of `dist`, highest first, ties by candidate order.
    pub fn top_candidates(&self, dist: &[f64]) -> Vec<String> {
        let mut order: Vec<usize> = (0..dist.len()).collect();
        order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
        order
            .into_iter()
            .take(self.top_n)
            .map(|i| self.candidates[i].clone())
            .collect()
    }

    /// Writes embeddings, corpus, and a config referencing them into `dir`.
    pub fn export(&self, dir: &Path) -> Result<WorkspaceConfig> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, contents: String| -> Result<()> {
            let path = dir.join(name);
            std::fs::write(&path, contents).map_err(|e| Error::io(path, e))
        };
        write("embeddings.txt", format_embeddings(self.category.objects()))?;
        write(
            "corpus.json",
            serde_json::to_string_pretty(self.index.documents())? + "\n",
        )?;
        let cfg = WorkspaceConfig {
            embeddings: "embeddings.txt".into(),
            groups: self.category.groups().clone(),
            association: None,
            lambda: self.debias.lambda_weight,
            du: match self.debias.d_u {
                Some(n) => SubspaceDim::Fixed(n),
                None => SubspaceDim::Auto,
            },
            mode: self.debias.mode,
            retrieval: self.retrieval,
            lexicon: self.lexicon.clone(),
            corpus: Some("corpus.json".into()),
            candidates: Some(self.candidates.clone()),
            templates: self.templates.iter().map(|t| t.join(" ")).collect(),
            neutral_prompts: self.neutral_prompts.iter().map(|t| t.join(" ")).collect(),
            temperature: self.temperature,
            top_n: self.top_n,
            seed: self.seed,
            out: "out".into(),
        };
        write("config.json", serde_json::to_string_pretty(&cfg)? + "\n")?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subspace_dim_parsing() {
        assert_eq!("auto".parse::<SubspaceDim>().unwrap(), SubspaceDim::Auto);
        assert_eq!("3".parse::<SubspaceDim>().unwrap(), SubspaceDim::Fixed(3));
        assert!("x".parse::<SubspaceDim>().is_err());
        let v: Vec<SubspaceDim> = serde_json::from_str(r#"[null, "auto", 4]"#).unwrap();
        assert_eq!(
            v,
            [SubspaceDim::Auto, SubspaceDim::Auto, SubspaceDim::Fixed(4)]
        );
        assert_eq!(serde_json::to_string(&SubspaceDim::Fixed(2)).unwrap(), "2");
    }

    #[test]
    fn config_defaults_and_unknown_fields() {
        let cfg: WorkspaceConfig = serde_json::from_str(
            r#"{"embeddings": "e.txt", "groups": {"protected": ["a"], "occupational": ["b"]}}"#,
        )
        .unwrap();
        assert_eq!(cfg.lambda, 1.0);
        assert_eq!(cfg.du, SubspaceDim::Auto);
        assert_eq!(cfg.retrieval, RetrievalConfig::default());
        assert!(serde_json::from_str::<WorkspaceConfig>(
            r#"{"embeddings": "e.txt", "groups": {"protected": [], "occupational": []}, "lamda": 2}"#
        )
        .is_err());
    }
}
