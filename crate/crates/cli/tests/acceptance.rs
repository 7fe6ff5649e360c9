//! Acceptance suite: one PASS/FAIL line per criterion, run with
//! `cargo test --test acceptance -- --nocapture`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use fairfunctor::category::{ConceptEmbedding, GroupSpec, SemanticCategory};
use fairfunctor::linalg::{sym_eigen, Matrix};
use fairfunctor::metrics::{cre, kl_divergence, rouge_l};
use fairfunctor::retrieval::{fuse, RetrievalConfig, ScoredDocument};
use fairfunctor::spectral::{
    bound_sweep, fit, fit_projection, scatter, trace_objective, DebiasConfig, DebiasProjection,
    Mode,
};
use fairfunctor::validation::ScenarioSpec;
use fairfunctor::workspace::Workspace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn random_psd(d: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let b = random_matrix(d, d, rng);
    b.matmul(&b.transpose()).unwrap()
}

fn random_symmetric(d: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let a = random_matrix(d, d, rng);
    a.add_scaled(&a.transpose(), 1.0).unwrap().scale(0.5)
}

/// Classical Gram-Schmidt with reorthogonalization, kept separate from the
/// library's routine so the comparison does not share code.
fn oracle_orthonormal_rows(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < rows {
        let mut v: Vec<f64> = (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        for _ in 0..2 {
            for b in &basis {
                let c: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= c * y;
                }
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    Matrix::from_rows(&basis).unwrap()
}

fn category(objs: &[(String, Vec<f64>)], d: &[String], o: &[String]) -> SemanticCategory {
    let objects = objs
        .iter()
        .map(|(t, v)| ConceptEmbedding::new(t.clone(), v.clone()))
        .collect();
    SemanticCategory::new(objects, None, GroupSpec::new(d.to_vec(), o.to_vec())).unwrap()
}

fn job_roles() -> Workspace {
    let spec = ScenarioSpec::bundled("job_roles").unwrap();
    spec.generate(spec.seed).unwrap()
}

fn mean_pairwise(proj: &DebiasProjection, ws: &Workspace, group: &[String]) -> f64 {
    fairfunctor::metrics::mean_pairwise_distance(proj, &ws.category, group)
        .unwrap()
        .unwrap()
}

fn eigensolver_correctness() -> Outcome {
    let mut r = rng(1);
    let mut worst_rec: f64 = 0.0;
    let mut worst_orth: f64 = 0.0;
    let mut slowest = Duration::ZERO;
    for i in 0..100 {
        let d = match i {
            0 => 2,
            1 => 64,
            _ => r.random_range(2..=64),
        };
        let c = random_psd(d, &mut r);
        let start = Instant::now();
        let e = sym_eigen(&c).unwrap();
        slowest = slowest.max(start.elapsed());
        worst_rec = worst_rec.max(e.reconstruction_residual(&c));
        worst_orth = worst_orth.max(e.orthonormality_residual());
    }
    outcome(
        worst_rec < 1e-10 && worst_orth < 1e-10 && slowest < Duration::from_secs(1),
        format!(
            "max reconstruction {worst_rec:.2e}, max orthonormality {worst_orth:.2e}, slowest solve {slowest:?}"
        ),
    )
}

fn optimality() -> Outcome {
    let mut r = rng(2);
    let mut worst_gap: f64 = 0.0;
    let mut beaten = 0usize;
    for i in 0..50 {
        let d = r.random_range(2..=12);
        let d_u = r.random_range(1..d);
        let m = if i % 2 == 0 {
            random_psd(d, &mut r)
        } else {
            random_symmetric(d, &mut r)
        };
        let f = fit_projection(&m, d_u).unwrap();
        let eig_sum: f64 = f.eigen.eigenvalues[..d_u].iter().sum();
        let objective = trace_objective(&f.p, &m).unwrap();
        worst_gap = worst_gap.max((objective - eig_sum).abs());
        for _ in 0..1000 {
            let q = oracle_orthonormal_rows(d_u, d, &mut r);
            if trace_objective(&q, &m).unwrap() < objective - 1e-9 {
                beaten += 1;
            }
        }
    }
    outcome(
        worst_gap < 1e-9 && beaten == 0,
        format!("max |Tr(PRPᵀ) − Σλ| {worst_gap:.2e}, random projections below optimum: {beaten}"),
    )
}

fn demographic_convergence() -> Outcome {
    let mut r = rng(3);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let d_c = r.random_range(2..=16);
        let p: Vec<f64> = (0..d_c).map(|_| r.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..d_c).map(|_| r.random_range(-1.0..1.0)).collect();
        let plus: Vec<f64> = p.iter().zip(&g).map(|(a, b)| a + b).collect();
        let minus: Vec<f64> = p.iter().zip(&g).map(|(a, b)| a - b).collect();
        let names = vec!["v1".to_string(), "v2".to_string()];
        let cat = category(
            &[
                (names[0].clone(), plus.clone()),
                (names[1].clone(), minus.clone()),
            ],
            &names,
            &[],
        );
        let cfg = DebiasConfig {
            lambda_weight: 0.0,
            d_u: Some(d_c - 1),
            ..Default::default()
        };
        let proj = fit(&cat, &cfg).unwrap().projection;
        let diff: Vec<f64> = plus.iter().zip(&minus).map(|(a, b)| a - b).collect();
        let img = proj.project(&diff).unwrap();
        worst = worst.max(img.iter().map(|x| x * x).sum::<f64>().sqrt());
    }
    outcome(worst < 1e-8, format!("max ‖P(v₁−v₂)‖ {worst:.2e}"))
}

fn lambda_control() -> Outcome {
    let ws = job_roles();
    let groups = ws.category.groups().clone();
    let (s, _) = scatter(&ws.category).unwrap();
    let rank_d = sym_eigen(&s.s_d)
        .unwrap()
        .eigenvalues
        .iter()
        .filter(|&&x| x > 1e-9 * s.s_d.max_abs())
        .count();
    let d_u = ws.category.dim() - rank_d;
    let sweep: Vec<f64> = [0.0, 1.0, 1e2, 1e4]
        .iter()
        .map(|&l| {
            let cfg = DebiasConfig {
                lambda_weight: l,
                d_u: Some(d_u),
                ..Default::default()
            };
            mean_pairwise(
                &fit(&ws.category, &cfg).unwrap().projection,
                &ws,
                &groups.occupational,
            )
        })
        .collect();
    let monotone = sweep.windows(2).all(|w| w[1] <= w[0] + 1e-12);

    let identity = DebiasProjection::identity(ws.category.dim());
    let contrastive = fit(
        &ws.category,
        &DebiasConfig {
            lambda_weight: 1.0,
            mode: Mode::Contrastive,
            d_u: Some(d_u),
            ..Default::default()
        },
    )
    .unwrap()
    .projection;
    let ratio = mean_pairwise(&contrastive, &ws, &groups.occupational)
        / mean_pairwise(&identity, &ws, &groups.occupational);
    let drop = 1.0
        - mean_pairwise(&contrastive, &ws, &groups.protected)
            / mean_pairwise(&identity, &ws, &groups.protected);
    outcome(
        monotone && ratio >= 0.9 && drop >= 0.9,
        format!(
            "d_u {d_u}; occupational distance over λ {:?}; contrastive ratio {ratio:.4}, DPD drop {:.2}%",
            sweep.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>(),
            100.0 * drop
        ),
    )
}

fn projection_bound() -> Outcome {
    let mut r = rng(5);
    let ws = job_roles();
    let mut instances = Vec::new();
    for (lambda, d_u) in [
        (1.0, None),
        (0.0, Some(18)),
        (1.0, Some(18)),
        (100.0, Some(5)),
        (1.0, Some(1)),
    ] {
        instances.push(
            fit(
                &ws.category,
                &DebiasConfig {
                    lambda_weight: lambda,
                    d_u,
                    ..Default::default()
                },
            )
            .unwrap(),
        );
    }
    for i in 0..20 {
        let d_c = r.random_range(3..=10);
        let n = r.random_range(2..=6);
        let objs: Vec<(String, Vec<f64>)> = (0..2 * n)
            .map(|k| {
                (
                    format!("t{k}"),
                    (0..d_c).map(|_| r.random_range(-1.0..1.0)).collect(),
                )
            })
            .collect();
        let names: Vec<String> = objs.iter().map(|(t, _)| t.clone()).collect();
        let cat = category(&objs, &names[..n], &names[n..]);
        let cfg = DebiasConfig {
            lambda_weight: [0.5, 1.0, 10.0][i % 3],
            d_u: Some(r.random_range(1..d_c)),
            ..Default::default()
        };
        instances.push(fit(&cat, &cfg).unwrap());
    }
    let mut applicable = 0;
    let mut violations = 0;
    for inst in &instances {
        let sweep = bound_sweep(&inst.projection, &inst.combined, 1000, &mut r).unwrap();
        applicable += sweep.applicable;
        violations += sweep.violations;
    }
    outcome(
        violations == 0 && applicable > 0,
        format!(
            "{} instances, {applicable} applicable samples, {violations} violations",
            instances.len()
        ),
    )
}

fn random_distribution(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// Textbook O(nm) LCS table, then F1.
fn oracle_rouge(a: &[u8], b: &[u8]) -> f64 {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    let l = t[a.len()][b.len()] as f64;
    if l == 0.0 {
        return 0.0;
    }
    let (p, r) = (l / a.len() as f64, l / b.len() as f64);
    2.0 * p * r / (p + r)
}

fn metric_kernels() -> Outcome {
    let mut r = rng(6);
    let mut self_max: f64 = 0.0;
    let mut negative = 0;
    for _ in 0..1000 {
        let n = r.random_range(2..=10);
        let p = random_distribution(n, &mut r);
        let q = random_distribution(n, &mut r);
        self_max = self_max.max(kl_divergence(&p, &p).unwrap().abs());
        if kl_divergence(&p, &q).unwrap() < 0.0 {
            negative += 1;
        }
    }
    let mut rouge_mismatch = 0;
    for _ in 0..20 {
        let la = r.random_range(0..=12);
        let lb = r.random_range(0..=12);
        let a: Vec<u8> = (0..la).map(|_| r.random_range(0..4)).collect();
        let b: Vec<u8> = (0..lb).map(|_| r.random_range(0..4)).collect();
        if rouge_l(&a, &b) != oracle_rouge(&a, &b) {
            rouge_mismatch += 1;
        }
    }
    let ln2 = kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
    let ln2_err = (ln2 - std::f64::consts::LN_2).abs();
    outcome(
        self_max == 0.0 && negative == 0 && rouge_mismatch == 0 && ln2_err <= 1e-9,
        format!(
            "max KL(p,p) {self_max:.1e}, negative KL {negative}, ROUGE-L mismatches {rouge_mismatch}, |KL − ln 2| {ln2_err:.1e}"
        ),
    )
}

fn fusion_contract() -> Outcome {
    let alphas = [0.0, 0.25, 0.5, 0.75, 1.0];
    let ws = job_roles();
    let index = ws.index_for(None).unwrap();
    let mut instances: Vec<(Vec<f64>, Vec<ScoredDocument>, Vec<String>)> = Vec::new();
    for prompt in [
        "recommend a suitable job for my friend from nepal",
        "friend from germany",
        "job",
    ] {
        let tokens: Vec<String> = prompt.split_whitespace().map(String::from).collect();
        let g = ws.ground(&tokens, None, &index).unwrap();
        let q = ws.query_vector(&tokens, None).unwrap();
        let hits = fairfunctor::retrieval::retrieve(&index, &q, &RetrievalConfig::default())
            .unwrap()
            .hits;
        instances.push((g.fused.parametric, hits, ws.candidates.clone()));
    }
    let mut alpha0_max: f64 = 0.0;
    let mut non_monotone = 0;
    let mut checked = 0;
    for (p, hits, cands) in &instances {
        let embed = |c: &str| Ok(ws.category.vector(c)?.to_vec());
        let mut values = Vec::new();
        for &alpha in &alphas {
            let cfg = RetrievalConfig {
                alpha,
                ..Default::default()
            };
            let f = fuse(p, hits, cands, embed, &cfg).unwrap();
            values.push(cre(p, &f.fused).unwrap());
        }
        let differs = {
            let cfg = RetrievalConfig {
                alpha: 1.0,
                ..Default::default()
            };
            let f = fuse(p, hits, cands, embed, &cfg).unwrap();
            f.retrieved
                .iter()
                .zip(p)
                .any(|(a, b)| (a - b).abs() > 1e-12)
        };
        alpha0_max = alpha0_max.max(values[0].abs());
        if differs {
            checked += 1;
            if values.windows(2).any(|w| w[1] < w[0]) {
                non_monotone += 1;
            }
        }
    }
    outcome(
        alpha0_max <= 1e-12 && non_monotone == 0 && checked > 0,
        format!(
            "max CRE at α=0 {alpha0_max:.1e}; {checked} instances, {non_monotone} non-monotone"
        ),
    )
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_fairfunctor")
}

fn run(args: &[&str]) -> (i32, Duration) {
    let start = Instant::now();
    let out = Command::new(bin()).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), start.elapsed())
}

fn end_to_end(dir: &Path) -> Outcome {
    let out = dir.join("e2e");
    let (code, elapsed) = run(&[
        "validate",
        "job_roles",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    let Ok(text) = fs::read_to_string(out.join("validation_report.json")) else {
        return outcome(false, format!("no report written (exit {code})"));
    };
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let f = |path: &[&str]| {
        path.iter()
            .fold(&v, |acc, k| &acc[*k])
            .as_f64()
            .unwrap_or(f64::NAN)
    };
    let (sar_pre, sar_post, chance) = (f(&["sar", "pre"]), f(&["sar", "post"]), f(&["sar_chance"]));
    let (dpd_pre, dpd_post) = (f(&["dpd", "pre"]), f(&["dpd", "post"]));
    let (tv_pre, tv_post) = (
        f(&["output_variance", "pre"]),
        f(&["output_variance", "post"]),
    );
    let ok = code == 0
        && sar_pre >= 0.9
        && sar_post <= chance + 0.1
        && dpd_post <= 0.1 * dpd_pre
        && tv_post < tv_pre
        && elapsed < Duration::from_secs(30);
    outcome(
        ok,
        format!(
            "exit {code}, {elapsed:.2?}; SAR {sar_pre} → {sar_post} (chance {chance}); DPD {dpd_pre:.3} → {dpd_post:.1e}; TV {tv_pre:.4} → {tv_post:.1e}"
        ),
    )
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(
                    path.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    files
}

fn determinism(dir: &Path) -> Outcome {
    let ws_dir = dir.join("det-source");
    run(&["validate", "job_roles", "--out", ws_dir.to_str().unwrap()]);
    let config = ws_dir.join("workspace/config.json");
    let config = config.to_str().unwrap();
    let mut differing = Vec::new();
    let mut compared = 0;
    let commands: Vec<(&str, Vec<&str>)> = vec![
        (
            "validate",
            vec!["validate", "job_roles", "--seed", "11", "--csv"],
        ),
        (
            "debias",
            vec!["debias", "--config", config, "--seed", "11", "--csv"],
        ),
        (
            "eval",
            vec!["eval", "--config", config, "--seed", "11", "--csv"],
        ),
        (
            "retrieve",
            vec![
                "retrieve",
                "--config",
                config,
                "--seed",
                "11",
                "--csv",
                "friend from nepal",
                "job",
            ],
        ),
    ];
    for (name, args) in &commands {
        let mut snaps = Vec::new();
        for attempt in 0..2 {
            let out = dir.join(format!("det-{name}-{attempt}"));
            let mut full = args.clone();
            let out_str = out.to_str().unwrap().to_string();
            full.push("--out");
            full.push(&out_str);
            if *name == "eval" {
                // eval reads the projection that debias wrote into the same directory
                run(&[
                    "debias", "--config", config, "--seed", "11", "--out", &out_str,
                ]);
            }
            let (code, _) = run(&full);
            if code != 0 {
                differing.push(format!("{name} exit {code}"));
            }
            snaps.push(snapshot(&out));
        }
        compared += snaps[0].len();
        if snaps[0].is_empty() || snaps[0] != snaps[1] {
            differing.push(name.to_string());
        }
    }
    outcome(
        differing.is_empty(),
        format!("{compared} files compared across 4 commands; differing: {differing:?}"),
    )
}

#[test]
fn acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let criteria: Vec<(&str, Outcome)> = vec![
        ("1 eigensolver correctness", eigensolver_correctness()),
        ("2 optimality of the trace objective", optimality()),
        ("3 demographic convergence", demographic_convergence()),
        ("4 lambda control", lambda_control()),
        ("5 projection error bound", projection_bound()),
        ("6 metric kernels", metric_kernels()),
        ("7 fusion contract", fusion_contract()),
        ("8 end-to-end validate job_roles", end_to_end(tmp.path())),
        ("9 determinism", determinism(tmp.path())),
    ];
    for (name, o) in &criteria {
        println!(
            "{} criterion {name}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    let failed: Vec<&str> = criteria
        .iter()
        .filter(|(_, o)| !o.passed)
        .map(|(n, _)| *n)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
