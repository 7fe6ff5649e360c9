//! Fitting the debiasing projection.
//!
//! Pairwise difference scatter of the protected group (`S_D`) and of the
//! occupational group (`S_O`) are combined into a symmetric matrix `R`; the
//! projection keeps the eigenvectors of the `d_u` smallest eigenvalues of `R`,
//! which minimizes `Tr(P R Pᵀ)` over row-orthonormal `P`.
//!
//! Two combinations are supported:
//!
//! * [`Mode::AsWritten`]: `R = S_D + λ S_O`. Both groups are pulled together,
//!   and `λ` controls how strongly occupational spread is also suppressed.
//! * [`Mode::Contrastive`]: `R = S_D − λ S_O`. Directions carrying occupational
//!   spread get negative weight and are kept, demographic spread is dropped.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::category::{AssociationModel, ConceptEmbedding, GroupSpec, SemanticCategory};
use crate::error::{Error, Result};
use crate::linalg::{
    dot, frobenius_norm, norm, outer_diff_accumulate, sym_eigen_with, EigenConfig,
    EigenDecomposition, Matrix,
};

/// Eigenvalues at or below this are treated as zero by the bound check.
pub const BOUND_EIGEN_FLOOR: f64 = 1e-12;
/// Slack added to the projection error bound.
pub const BOUND_SLACK: f64 = 1e-12;
/// Regularizer in the relative eigengap denominator.
pub const GAP_EPSILON: f64 = 1e-12;
/// Spectra whose consecutive gaps all fall below this are flat.
pub const FLAT_GAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    AsWritten,
    Contrastive,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::AsWritten => "as_written",
            Mode::Contrastive => "contrastive",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as_written" => Ok(Mode::AsWritten),
            "contrastive" => Ok(Mode::Contrastive),
            other => Err(Error::invalid(format!(
                "unknown mode `{other}` (expected as_written or contrastive)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterMatrices {
    pub s_d: Matrix,
    pub s_o: Matrix,
}

/// Scatter of pairwise differences within the protected and occupational groups.
///
/// Returns warnings for groups too small to contribute.
pub fn scatter(category: &SemanticCategory) -> Result<(ScatterMatrices, Vec<String>)> {
    let groups = category.groups();
    if groups.protected.is_empty() && groups.occupational.is_empty() {
        return Err(Error::invalid(
            "both the protected and the occupational group are empty",
        ));
    }
    let dim = category.dim();
    let mut warnings = Vec::new();
    for (name, group) in [
        ("protected", &groups.protected),
        ("occupational", &groups.occupational),
    ] {
        if group.len() < 2 {
            warnings.push(format!(
                "{name} group has {} token(s); its scatter matrix is zero",
                group.len()
            ));
        }
    }
    let s_d = outer_diff_accumulate(&category.group_pairs(&groups.protected)?, dim)?;
    let s_o = outer_diff_accumulate(&category.group_pairs(&groups.occupational)?, dim)?;
    Ok((ScatterMatrices { s_d, s_o }, warnings))
}

/// `S_D + λ S_O` or `S_D − λ S_O`, depending on `mode`.
pub fn combined_matrix(s: &ScatterMatrices, lambda_weight: f64, mode: Mode) -> Result<Matrix> {
    if lambda_weight.is_nan() || lambda_weight < 0.0 || lambda_weight.is_infinite() {
        return Err(Error::OutOfRange {
            name: "lambda",
            value: lambda_weight,
            expected: "finite and >= 0",
        });
    }
    let sign = match mode {
        Mode::AsWritten => 1.0,
        Mode::Contrastive => -1.0,
    };
    s.s_d.add_scaled(&s.s_o, sign * lambda_weight)
}

/// Eigen-solution of the trace minimization for a fixed `d_u`.
#[derive(Debug, Clone)]
pub struct SpectralFit {
    pub eigen: EigenDecomposition,
    /// `d_u × d_c`, rows are the selected eigenvectors.
    pub p: Matrix,
    /// `Tr(P R Pᵀ)`.
    pub objective: f64,
}

pub fn fit_projection(r: &Matrix, d_u: usize) -> Result<SpectralFit> {
    fit_projection_with(r, d_u, &EigenConfig::default())
}

pub fn fit_projection_with(r: &Matrix, d_u: usize, cfg: &EigenConfig) -> Result<SpectralFit> {
    let eigen = sym_eigen_with(r, cfg)?;
    select_subspace(eigen, r, d_u)
}

fn select_subspace(eigen: EigenDecomposition, r: &Matrix, d_u: usize) -> Result<SpectralFit> {
    let d_c = eigen.dim();
    if d_u == 0 || d_u > d_c {
        return Err(Error::OutOfRange {
            name: "d_u",
            value: d_u as f64,
            expected: "1 <= d_u <= d_c",
        });
    }
    let rows: Vec<Vec<f64>> = (0..d_u).map(|i| eigen.eigenvector(i)).collect();
    let p = Matrix::from_rows(&rows)?;
    let objective = trace_objective(&p, r)?;
    Ok(SpectralFit {
        eigen,
        p,
        objective,
    })
}

/// `Tr(P R Pᵀ)`.
pub fn trace_objective(p: &Matrix, r: &Matrix) -> Result<f64> {
    Ok(p.matmul(r)?.matmul(&p.transpose())?.trace())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceChoice {
    pub d_u: usize,
    /// True when the spectrum has no usable gap and `d_u` fell back to 1.
    pub flat: bool,
    /// `(λ_{d+1} − λ_d) / (|λ_d| + ε)` for `d = 1..d_c−1`.
    pub relative_gaps: Vec<f64>,
}

/// Picks the dimension at the largest relative eigengap.
///
/// Ties go to the smaller dimension.
pub fn choose_subspace_dim(eigenvalues: &[f64]) -> SubspaceChoice {
    let relative_gaps: Vec<f64> = eigenvalues
        .windows(2)
        .map(|w| (w[1] - w[0]) / (w[0].abs() + GAP_EPSILON))
        .collect();
    let flat = eigenvalues.windows(2).all(|w| (w[1] - w[0]) < FLAT_GAP);
    if flat {
        return SubspaceChoice {
            d_u: 1,
            flat: true,
            relative_gaps,
        };
    }
    let mut best = 0;
    for (i, g) in relative_gaps.iter().enumerate() {
        if *g > relative_gaps[best] {
            best = i;
        }
    }
    SubspaceChoice {
        d_u: best + 1,
        flat: false,
        relative_gaps,
    }
}

/// The fitted debiasing functor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasProjection {
    /// `d_u × d_c`, row-orthonormal.
    pub p: Matrix,
    pub lambda_weight: f64,
    pub mode: Mode,
    /// Full ascending spectrum of the combined matrix (empty for the identity).
    pub eigenvalues: Vec<f64>,
    /// Canonical object images keyed by label; filled by [`DebiasProjection::attach_canonical`].
    pub canonical_embeddings: BTreeMap<String, Vec<f64>>,
}

impl DebiasProjection {
    pub fn from_fit(fit: &SpectralFit, lambda_weight: f64, mode: Mode) -> Self {
        Self {
            p: fit.p.clone(),
            lambda_weight,
            mode,
            eigenvalues: fit.eigen.eigenvalues.clone(),
            canonical_embeddings: BTreeMap::new(),
        }
    }

    /// The no-op projection `P = I`, used as the "before debiasing" baseline.
    pub fn identity(d_c: usize) -> Self {
        Self {
            p: Matrix::identity(d_c),
            lambda_weight: 0.0,
            mode: Mode::AsWritten,
            eigenvalues: Vec::new(),
            canonical_embeddings: BTreeMap::new(),
        }
    }

    pub fn d_u(&self) -> usize {
        self.p.rows()
    }

    pub fn d_c(&self) -> usize {
        self.p.cols()
    }

    /// `P v`.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.p.matvec(v)
    }

    /// `Pᵀ P v`: the projection expressed back in the original coordinates.
    pub fn reconstruct(&self, v: &[f64]) -> Result<Vec<f64>> {
        let z = self.project(v)?;
        self.p.transpose().matvec(&z)
    }

    /// `P f Pᵀ` for a `d_c × d_c` morphism matrix.
    pub fn transform_morphism(&self, f: &Matrix) -> Result<Matrix> {
        if f.shape() != (self.d_c(), self.d_c()) {
            return Err(Error::Dimension {
                expected: self.d_c(),
                found: if f.rows() != self.d_c() {
                    f.rows()
                } else {
                    f.cols()
                },
            });
        }
        self.p.matmul(f)?.matmul(&self.p.transpose())
    }

    /// ‖P Pᵀ − I‖_F.
    pub fn orthonormality_residual(&self) -> f64 {
        let g = self.p.matmul(&self.p.transpose()).expect("conforming");
        frobenius_norm(
            &g.add_scaled(&Matrix::identity(self.d_u()), -1.0)
                .expect("square"),
        )
    }

    /// Records the centroid of the projected protected group under the
    /// canonical protected label.
    pub fn attach_canonical(&mut self, category: &SemanticCategory) -> Result<()> {
        let groups = category.groups();
        self.canonical_embeddings.clear();
        if groups.protected.is_empty() {
            return Ok(());
        }
        let mut centroid = vec![0.0; self.d_u()];
        for t in &groups.protected {
            let z = self.project(category.vector(t)?)?;
            centroid.iter_mut().zip(&z).for_each(|(c, x)| *c += x);
        }
        let n = groups.protected.len() as f64;
        centroid.iter_mut().for_each(|c| *c /= n);
        self.canonical_embeddings
            .insert(groups.canonical_protected_label.clone(), centroid);
        Ok(())
    }

    /// Object part of the functor: protected tokens collapse onto the
    /// canonical protected image, occupational tokens keep their own
    /// projection under the occupational label.
    pub fn apply_functor_object(
        &self,
        category: &SemanticCategory,
        token: &str,
    ) -> Result<(String, Vec<f64>)> {
        let groups: &GroupSpec = category.groups();
        if groups.is_protected(token) {
            let label = &groups.canonical_protected_label;
            let image = self
                .canonical_embeddings
                .get(label)
                .ok_or_else(|| Error::Missing(format!("canonical embedding for `{label}`")))?;
            Ok((label.clone(), image.clone()))
        } else if groups.is_occupational(token) {
            let v = self.project(category.vector(token)?)?;
            Ok((groups.canonical_occupational_label.clone(), v))
        } else {
            Err(Error::OutsideDomain(token.to_string()))
        }
    }

    /// The image category: every object projected, associations conjugated
    /// (`P W_Q`, `P W_K`, so that `W_Q' W_K'ᵀ = P W_Q W_Kᵀ Pᵀ`).
    pub fn project_category(&self, category: &SemanticCategory) -> Result<SemanticCategory> {
        if category.dim() != self.d_c() {
            return Err(Error::Dimension {
                expected: self.d_c(),
                found: category.dim(),
            });
        }
        let objects = category
            .objects()
            .iter()
            .map(|o| {
                Ok(ConceptEmbedding::new(
                    o.token.clone(),
                    self.project(&o.vector)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let assoc = category.association();
        let projected =
            AssociationModel::new(self.p.matmul(&assoc.w_q)?, self.p.matmul(&assoc.w_k)?)?;
        SemanticCategory::new(objects, Some(projected), category.groups().clone())
    }

    /// Serializes to the projection text format (17 significant digits).
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} {} {:.16e} {}\n",
            self.d_u(),
            self.d_c(),
            self.lambda_weight,
            self.mode
        );
        for i in 0..self.d_u() {
            out.push_str(&join_reals(self.p.row(i)));
            out.push('\n');
        }
        out.push_str(&join_reals(&self.eigenvalues));
        out.push('\n');
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: 1,
                message: "expected header `du dc lambda mode`".into(),
            });
        }
        let parse_count = |s: &str| {
            s.parse::<usize>().map_err(|_| Error::Parse {
                line: 1,
                message: format!("invalid count `{s}`"),
            })
        };
        let d_u = parse_count(fields[0])?;
        let d_c = parse_count(fields[1])?;
        let lambda_weight = fields[2].parse::<f64>().map_err(|_| Error::Parse {
            line: 1,
            message: format!("invalid lambda `{}`", fields[2]),
        })?;
        let mode: Mode = fields[3].parse()?;

        let mut rows = Vec::with_capacity(d_u);
        for _ in 0..d_u {
            let (i, line) = lines.next().ok_or_else(|| Error::Parse {
                line: rows.len() + 2,
                message: "missing projection row".into(),
            })?;
            rows.push(parse_reals(line, i + 1, Some(d_c))?);
        }
        let eigenvalues = match lines.next() {
            Some((i, line)) => parse_reals(line, i + 1, None)?,
            None => Vec::new(),
        };
        if !eigenvalues.is_empty() && eigenvalues.len() != d_c {
            return Err(Error::Dimension {
                expected: d_c,
                found: eigenvalues.len(),
            });
        }
        let p = if d_u == 0 {
            Matrix::zeros(0, d_c)
        } else {
            Matrix::from_rows(&rows)?
        };
        Ok(Self {
            p,
            lambda_weight,
            mode,
            eigenvalues,
            canonical_embeddings: BTreeMap::new(),
        })
    }
}

fn join_reals(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| format!("{x:.16e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_reals(line: &str, lineno: usize, expect: Option<usize>) -> Result<Vec<f64>> {
    let xs = line
        .split_whitespace()
        .map(|f| {
            f.parse::<f64>().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("invalid number `{f}`"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(n) = expect {
        if xs.len() != n {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {n} values, found {}", xs.len()),
            });
        }
    }
    Ok(xs)
}

/// Coefficients of `v` in the eigenbasis, `α_i = vᵀ φ_i`.
pub fn spectral_alignment(eigen: &EigenDecomposition, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != eigen.dim() {
        return Err(Error::Dimension {
            expected: eigen.dim(),
            found: v.len(),
        });
    }
    Ok((0..eigen.dim())
        .map(|i| dot(&eigen.eigenvector(i), v))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    /// `‖v − PᵀP v‖²`.
    pub residual_sq: f64,
    /// `vᵀRv / λ_{d_u+1}`; `None` when the bound does not apply.
    pub bound: Option<f64>,
    pub holds: Option<bool>,
}

/// Checks `‖v − PᵀPv‖² ≤ vᵀRv / λ_{d_u+1}` for a unit vector `v`.
///
/// The bound is reported as inapplicable when no eigenvalue is excluded or the
/// first excluded one is not above [`BOUND_EIGEN_FLOOR`].
pub fn projection_error_bound_check(
    proj: &DebiasProjection,
    r: &Matrix,
    v: &[f64],
) -> Result<BoundCheck> {
    if v.len() != proj.d_c() {
        return Err(Error::Dimension {
            expected: proj.d_c(),
            found: v.len(),
        });
    }
    let n = norm(v);
    if (n - 1.0).abs() > 1e-10 {
        return Err(Error::invalid(format!(
            "bound check needs a unit vector, got norm {n}"
        )));
    }
    let back = proj.reconstruct(v)?;
    let residual_sq: f64 = v.iter().zip(&back).map(|(a, b)| (a - b) * (a - b)).sum();
    let excluded = proj.eigenvalues.get(proj.d_u()).copied();
    match excluded {
        Some(lam) if lam > BOUND_EIGEN_FLOOR => {
            let quad = dot(v, &r.matvec(v)?);
            let bound = quad / lam;
            Ok(BoundCheck {
                residual_sq,
                bound: Some(bound),
                holds: Some(residual_sq <= bound + BOUND_SLACK),
            })
        }
        _ => Ok(BoundCheck {
            residual_sq,
            bound: None,
            holds: None,
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSweep {
    pub samples: usize,
    pub applicable: usize,
    pub violations: usize,
}

impl BoundSweep {
    /// Fraction of applicable samples satisfying the bound; `None` if none applied.
    pub fn pass_rate(&self) -> Option<f64> {
        (self.applicable > 0)
            .then(|| (self.applicable - self.violations) as f64 / self.applicable as f64)
    }
}

/// Runs the bound check on `samples` random unit vectors.
pub fn bound_sweep<G: Rng>(
    proj: &DebiasProjection,
    r: &Matrix,
    samples: usize,
    rng: &mut G,
) -> Result<BoundSweep> {
    let mut sweep = BoundSweep {
        samples,
        applicable: 0,
        violations: 0,
    };
    for _ in 0..samples {
        let v = random_unit_vector(proj.d_c(), rng);
        let check = projection_error_bound_check(proj, r, &v)?;
        if let Some(holds) = check.holds {
            sweep.applicable += 1;
            if !holds {
                sweep.violations += 1;
            }
        }
    }
    Ok(sweep)
}

/// [`bound_sweep`] driven by a ChaCha8 generator seeded with `seed`.
pub fn bound_sweep_seeded(
    proj: &DebiasProjection,
    r: &Matrix,
    samples: usize,
    seed: u64,
) -> Result<BoundSweep> {
    bound_sweep(proj, r, samples, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn random_unit_vector<G: Rng>(dim: usize, rng: &mut G) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-8 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DebiasConfig {
    pub lambda_weight: f64,
    pub mode: Mode,
    /// `None` selects the dimension from the eigengap.
    pub d_u: Option<usize>,
    pub eigen: EigenConfig,
}

impl Default for DebiasConfig {
    fn default() -> Self {
        Self {
            lambda_weight: 1.0,
            mode: Mode::AsWritten,
            d_u: None,
            eigen: EigenConfig::default(),
        }
    }
}

/// Everything produced by [`fit`].
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub projection: DebiasProjection,
    pub scatter: ScatterMatrices,
    pub combined: Matrix,
    pub eigen: EigenDecomposition,
    pub objective: f64,
    pub subspace: SubspaceChoice,
    pub warnings: Vec<String>,
}

/// Scatter → combined matrix → eigendecomposition → projection, with the
/// canonical protected image attached.
pub fn fit(category: &SemanticCategory, cfg: &DebiasConfig) -> Result<FitOutcome> {
    let (scatter, mut warnings) = scatter(category)?;
    if scatter.s_d.max_abs() == 0.0 {
        warnings.push("S_D is zero; the fit uses the occupational term alone".to_string());
    }
    let combined = combined_matrix(&scatter, cfg.lambda_weight, cfg.mode)?;
    let eigen = sym_eigen_with(&combined, &cfg.eigen)?;
    let subspace = choose_subspace_dim(&eigen.eigenvalues);
    let d_u = match cfg.d_u {
        Some(d) => d,
        None => {
            if subspace.flat {
                warnings.push("flat eigenvalue spectrum; d_u defaults to 1".to_string());
            }
            subspace.d_u
        }
    };
    let fit = select_subspace(eigen, &combined, d_u)?;
    let mut projection = DebiasProjection::from_fit(&fit, cfg.lambda_weight, cfg.mode);
    projection.attach_canonical(category)?;
    Ok(FitOutcome {
        projection,
        scatter,
        combined,
        eigen: fit.eigen,
        objective: fit.objective,
        subspace,
        warnings,
    })
}
