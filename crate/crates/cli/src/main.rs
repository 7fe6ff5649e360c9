use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairfunctor::metrics::MetricReport;
use fairfunctor::retrieval::{AuditRecord, FusedDistribution};
use fairfunctor::spectral::{
    bound_sweep_seeded, combined_matrix, fit, scatter, BoundSweep, DebiasProjection, Mode,
};
use fairfunctor::validation::{
    bundled_names, compare, run_scenario, validate_workspace, ScenarioSpec, ValidationReport,
    BOUND_SAMPLES,
};
use fairfunctor::workspace::{tokenize, SubspaceDim, Workspace, WorkspaceConfig};
use fairfunctor::Error;
use serde::Serialize;

const EXIT_CONFIG: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

/// Spectral debiasing of concept embeddings with fairness-aware retrieval.
#[derive(Parser, Debug)]
#[command(name = "fairfunctor", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the debiasing projection and write it with its eigen-spectrum.
    Debias(Common),
    /// Compute fairness and utility metrics before and after a projection.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Projection file written by `debias` [default: <out>/projection.txt].
        #[arg(long)]
        projection: Option<PathBuf>,
    },
    /// Ground one or more queries: gate, retrieve, re-rank, fuse.
    Retrieve {
        #[command(flatten)]
        common: Common,
        /// Project queries, candidates, and corpus with this projection file.
        #[arg(long)]
        projection: Option<PathBuf>,
        /// Whitespace-separated query tokens; each argument is one query.
        #[arg(required = true)]
        queries: Vec<String>,
    },
    /// Run a synthetic scenario (or the --config workspace) end to end and
    /// check its invariants.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Bundled scenario name.
        #[arg(default_value = "job_roles")]
        scenario: String,
        /// Scenario definition to use instead of a bundled one.
        #[arg(long, conflicts_with = "config")]
        scenario_file: Option<PathBuf>,
        /// Print the bundled scenario names and exit.
        #[arg(long)]
        list: bool,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Workspace configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every random draw.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Weight of the occupational scatter term.
    #[arg(long)]
    lambda: Option<f64>,
    /// Subspace dimension, or `auto` to pick it from the eigengap.
    #[arg(long)]
    du: Option<SubspaceDim>,
    /// Sign of the occupational term.
    #[arg(long)]
    mode: Option<Mode>,
    /// Also write CSV output.
    #[arg(long)]
    csv: bool,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Numerical(String),
    Invariant(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

impl Common {
    fn load(&self) -> Result<(Workspace, PathBuf), Failure> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| Failure::Config("--config is required".into()))?;
        let mut cfg = WorkspaceConfig::load(path)?;
        if let Some(l) = self.lambda {
            cfg.lambda = l;
        }
        if let Some(d) = self.du {
            cfg.du = d;
        }
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        let out = self.out.clone().unwrap_or_else(|| cfg.out.clone());
        Ok((Workspace::from_config(&cfg)?, out))
    }

    fn apply(&self, spec: &mut ScenarioSpec) {
        if let Some(l) = self.lambda {
            spec.lambda = l;
        }
        if let Some(d) = self.du {
            spec.du = d;
        }
        if let Some(m) = self.mode {
            spec.mode = m;
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Config(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    write_file(path, text + "\n")
}

#[derive(Serialize)]
struct Spectrum<'a> {
    d_c: usize,
    d_u: usize,
    lambda: f64,
    mode: Mode,
    auto_d_u: usize,
    flat_spectrum: bool,
    eigenvalues: &'a [f64],
    relative_gaps: &'a [f64],
    objective: f64,
    orthonormality_residual: f64,
    bound_check: BoundSweep,
    warnings: &'a [String],
}

fn cmd_debias(common: &Common) -> CmdResult {
    let (ws, out) = common.load()?;
    let outcome = fit(&ws.category, &ws.debias)?;
    for w in &outcome.warnings {
        eprintln!("note: {w}");
    }
    let sweep = bound_sweep_seeded(
        &outcome.projection,
        &outcome.combined,
        BOUND_SAMPLES,
        ws.seed,
    )?;
    ensure_dir(&out)?;
    write_file(&out.join("projection.txt"), outcome.projection.to_text())?;
    let spectrum = Spectrum {
        d_c: outcome.projection.d_c(),
        d_u: outcome.projection.d_u(),
        lambda: ws.debias.lambda_weight,
        mode: ws.debias.mode,
        auto_d_u: outcome.subspace.d_u,
        flat_spectrum: outcome.subspace.flat,
        eigenvalues: &outcome.eigen.eigenvalues,
        relative_gaps: &outcome.subspace.relative_gaps,
        objective: outcome.objective,
        orthonormality_residual: outcome.projection.orthonormality_residual(),
        bound_check: sweep,
        warnings: &outcome.warnings,
    };
    write_json(&out.join("spectrum.json"), &spectrum)?;
    if common.csv {
        let mut w = csv_writer(&out.join("spectrum.csv"))?;
        w.write_record(["index", "eigenvalue", "selected"])?;
        for (i, v) in outcome.eigen.eigenvalues.iter().enumerate() {
            let selected = i < outcome.projection.d_u();
            w.write_record([i.to_string(), v.to_string(), selected.to_string()])?;
        }
        flush(w)?;
    }
    println!(
        "d_c = {}, d_u = {}, objective = {:.6e}; wrote {}",
        spectrum.d_c,
        spectrum.d_u,
        spectrum.objective,
        out.display()
    );
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, Failure> {
    csv::Writer::from_path(path).map_err(Failure::from)
}

fn flush(mut w: csv::Writer<fs::File>) -> CmdResult {
    w.flush()
        .map_err(|e| Failure::Config(format!("writing csv: {e}")))
}

fn load_projection(path: &Path, ws: &Workspace) -> Result<DebiasProjection, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let proj = DebiasProjection::from_text(&text)?;
    if proj.d_c() != ws.category.dim() {
        return Err(Failure::Config(format!(
            "projection expects {}-dimensional embeddings, workspace has {}",
            proj.d_c(),
            ws.category.dim()
        )));
    }
    Ok(proj)
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    pre: &'a MetricReport,
    post: &'a MetricReport,
    counterfactual_tv_pre: Option<f64>,
    counterfactual_tv_post: Option<f64>,
}

fn cmd_eval(common: &Common, projection: Option<&Path>) -> CmdResult {
    let (ws, out) = common.load()?;
    let path = projection.map_or_else(|| out.join("projection.txt"), Path::to_path_buf);
    let proj = load_projection(&path, &ws)?;
    let (s, _) = scatter(&ws.category)?;
    let r = combined_matrix(&s, proj.lambda_weight, proj.mode)?;
    let cmp = compare(&ws, &proj, Some(&r))?;
    for w in &cmp.metrics_post.diagnostics.warnings {
        eprintln!("note: {w}");
    }
    ensure_dir(&out)?;
    let file = MetricsFile {
        pre: &cmp.metrics_pre,
        post: &cmp.metrics_post,
        counterfactual_tv_pre: cmp.fused_variance.as_ref().map(|v| v.0.mean),
        counterfactual_tv_post: cmp.fused_variance.as_ref().map(|v| v.1.mean),
    };
    write_json(&out.join("metrics.json"), &file)?;
    if common.csv {
        let mut w = csv_writer(&out.join("metrics.csv"))?;
        w.write_record(MetricReport::CSV_HEADER)?;
        w.write_record(cmp.metrics_pre.csv_record("pre"))?;
        w.write_record(cmp.metrics_post.csv_record("post"))?;
        flush(w)?;
    }
    let show = |name: &str, pre: String, post: String| println!("{name:<4} {pre:>12} {post:>12}");
    let opt = |x: Option<f64>| x.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6}"));
    show("", "pre".into(), "post".into());
    show(
        "DPD",
        format!("{:.6}", cmp.metrics_pre.dpd),
        format!("{:.6}", cmp.metrics_post.dpd),
    );
    show("OPS", opt(cmp.metrics_pre.ops), opt(cmp.metrics_post.ops));
    show(
        "SAR",
        format!("{:.6}", cmp.metrics_pre.sar),
        format!("{:.6}", cmp.metrics_post.sar),
    );
    show(
        "CRE",
        format!("{:.6}", cmp.metrics_pre.cre),
        format!("{:.6}", cmp.metrics_post.cre),
    );
    show(
        "URI",
        format!("{:.6}", cmp.metrics_pre.uri),
        format!("{:.6}", cmp.metrics_post.uri),
    );
    Ok(())
}

#[derive(Serialize)]
struct RetrievalResult {
    query: Vec<String>,
    gate_open: bool,
    distribution: FusedDistribution,
}

fn cmd_retrieve(common: &Common, projection: Option<&Path>, queries: &[String]) -> CmdResult {
    let (ws, out) = common.load()?;
    let proj = projection.map(|p| load_projection(p, &ws)).transpose()?;
    let index = ws.index_for(proj.as_ref())?;
    let mut results = Vec::new();
    let mut audit: Vec<AuditRecord> = Vec::new();
    for query in queries {
        let tokens = tokenize(query);
        let g = ws.ground(&tokens, proj.as_ref(), &index)?;
        for w in &g.audit.warnings {
            eprintln!("note: {w}");
        }
        println!("query: {query}");
        println!(
            "gate: {}",
            if g.audit.gate_open { "open" } else { "closed" }
        );
        if !g.fused.audit.is_empty() {
            println!(
                "{:>4}  {:<24} {:>10} {:>8} {:>10}",
                "rank", "id", "base", "boost", "final"
            );
            for (rank, e) in g.fused.audit.iter().enumerate() {
                println!(
                    "{:>4}  {:<24} {:>10.6} {:>8.4} {:>10.6}",
                    rank + 1,
                    e.id,
                    e.base_score,
                    e.boost,
                    e.final_score
                );
            }
        }
        println!(
            "{:<16} {:>10} {:>10} {:>10}",
            "candidate", "param", "retrieved", "fused"
        );
        let d = &g.fused;
        for i in 0..d.candidates.len() {
            println!(
                "{:<16} {:>10.6} {:>10.6} {:>10.6}",
                d.candidates[i], d.parametric[i], d.retrieved[i], d.fused[i]
            );
        }
        println!();
        results.push(RetrievalResult {
            query: tokens,
            gate_open: g.audit.gate_open,
            distribution: g.fused,
        });
        audit.push(g.audit);
    }
    ensure_dir(&out)?;
    write_json(&out.join("fused.json"), &results)?;
    let mut lines = String::new();
    for record in &audit {
        lines.push_str(&serde_json::to_string(record).map_err(Error::from)?);
        lines.push('\n');
    }
    write_file(&out.join("audit.jsonl"), lines)?;
    if common.csv {
        let mut w = csv_writer(&out.join("fused.csv"))?;
        w.write_record(["query", "candidate", "parametric", "retrieved", "fused"])?;
        for r in &results {
            let q = r.query.join(" ");
            let d = &r.distribution;
            for i in 0..d.candidates.len() {
                w.write_record([
                    q.clone(),
                    d.candidates[i].clone(),
                    d.parametric[i].to_string(),
                    d.retrieved[i].to_string(),
                    d.fused[i].to_string(),
                ])?;
            }
        }
        flush(w)?;
    }
    Ok(())
}

fn cmd_validate(
    common: &Common,
    scenario: &str,
    scenario_file: Option<&Path>,
    list: bool,
) -> CmdResult {
    if list {
        for name in bundled_names() {
            println!("{name}");
        }
        return Ok(());
    }
    let (report, out) = if common.config.is_some() {
        let (ws, out) = common.load()?;
        (validate_workspace("workspace", &ws)?, out)
    } else {
        let mut spec = match scenario_file {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
                ScenarioSpec::from_json(&text)?
            }
            None => ScenarioSpec::bundled(scenario)?,
        };
        common.apply(&mut spec);
        let (ws, report) = run_scenario(&spec, common.seed)?;
        let out = common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        ensure_dir(&out)?;
        ws.export(&out.join("workspace"))?;
        (report, out)
    };
    ensure_dir(&out)?;
    write_json(&out.join("validation_report.json"), &report)?;
    if common.csv {
        write_pairs_csv(&out.join("validation_pairs.csv"), &report)?;
    }
    print_report(&report);
    if report.passed {
        Ok(())
    } else {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect();
        Err(Failure::Invariant(failed.join(", ")))
    }
}

fn write_pairs_csv(path: &Path, report: &ValidationReport) -> CmdResult {
    let mut w = csv_writer(path)?;
    w.write_record([
        "template", "value_a", "value_b", "tv_pre", "tv_post", "delta",
    ])?;
    for p in &report.pairs {
        w.write_record([
            p.template.clone(),
            p.value_a.clone(),
            p.value_b.clone(),
            p.tv_pre.to_string(),
            p.tv_post.to_string(),
            p.delta.to_string(),
        ])?;
    }
    flush(w)
}

fn print_report(report: &ValidationReport) {
    println!(
        "scenario {} (seed {}, d_c {}, d_u {})",
        report.scenario, report.seed, report.d_c, report.d_u
    );
    println!(
        "SAR {:.4} -> {:.4} (chance {:.4})",
        report.sar.pre, report.sar.post, report.sar_chance
    );
    println!("DPD {:.4e} -> {:.4e}", report.dpd.pre, report.dpd.post);
    println!(
        "counterfactual TV {:.4e} -> {:.4e}",
        report.output_variance.pre, report.output_variance.post
    );
    for c in &report.checks {
        println!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Debias(common) => cmd_debias(common),
        Command::Eval { common, projection } => cmd_eval(common, projection.as_deref()),
        Command::Retrieve {
            common,
            projection,
            queries,
        } => cmd_retrieve(common, projection.as_deref(), queries),
        Command::Validate {
            common,
            scenario,
            scenario_file,
            list,
        } => cmd_validate(common, scenario, scenario_file.as_deref(), *list),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(EXIT_NUMERICAL)
        }
        Err(Failure::Invariant(msg)) => {
            eprintln!("invariant check failed: {msg}");
            ExitCode::from(EXIT_INVARIANT)
        }
    }
}
