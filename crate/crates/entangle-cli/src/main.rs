//! Command-line front end for the entangle engine.
//!
//! Three verbs: `list` the shipped scenarios, `run` a scenario (shipped id or
//! JSON config file) end to end with reproducible artifacts, and `decompose`
//! a scenario's downstream excess risk before and after its update.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 a declared expected
//! effect did not hold, 3 engine failure while running.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use entangle::config::ScenarioConfig;
use entangle::decomp::{
    apply_update, decompose_upstream_pair, decompose_with_upstreams, upstream_stages,
    RiskDecomposition, UpstreamDecomposition, IDENTITY_TOLERANCE,
};
use entangle::graph::{forward, ModelSet, NodeId, Registry, ValidatedGraph};
use entangle::oracle::{GroundTruthDistribution, UpstreamStage};
use entangle::scenario::{
    bundle_by_id, bundles, run_scenario, DecompositionSpec, ScenarioBundle, ScenarioReport,
    UpstreamPairSpec,
};

// ============================================================================
// Arguments
// ============================================================================

#[derive(Parser)]
#[command(
    name = "entangle",
    version,
    about = "Simulate update/retrain protocols on DAGs of separately trained models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the shipped scenarios.
    List {
        /// Emit machine-readable JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Run one scenario end to end and write artifacts.
    Run {
        /// Shipped scenario id or path to a JSON config file.
        scenario: String,
        /// Master seed for the Monte-Carlo trials.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Number of Monte-Carlo trials (ignored without a Monte-Carlo block).
        #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
        trials: u64,
        /// Output directory (default: $ENTANGLE_OUT/<run-id> or runs/<run-id>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Require the updated node to strictly improve, not merely hold level.
        #[arg(long)]
        strict_improvement: bool,
        /// S5 only: retrain the detector on the far-range slice it is tested on.
        #[arg(long)]
        filter_train_range: bool,
    },
    /// Print exact risk decompositions before and after a scenario's update.
    Decompose {
        /// Shipped scenario id or path to a JSON config file.
        scenario: String,
        /// Which decomposition to print.
        #[arg(long, value_enum, default_value_t = PairKind::TwoModel)]
        pair: PairKind,
        /// S5 only: retrain the detector on the far-range slice it is tested on.
        #[arg(long)]
        filter_train_range: bool,
        /// Also write decompose.json into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PairKind {
    /// Upstream / approximation / estimation split of the total excess risk.
    TwoModel,
    /// Compatibility / excess split of the upstream error for a fixed pair.
    TwoUpstream,
}

// ============================================================================
// Error plumbing
// ============================================================================

enum CliError {
    /// Bad arguments or an unloadable/invalid config: exit 1.
    Usage(String),
    /// The engine failed while running a valid scenario: exit 3.
    Run(String),
}

fn usage_err(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn run_err(e: entangle::Error) -> CliError {
    CliError::Run(e.to_string())
}

fn main() -> ExitCode {
    // Die quietly when a downstream pager closes the pipe, like other
    // line-oriented Unix tools.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::List { json } => cmd_list(json),
        Command::Run {
            scenario,
            seed,
            trials,
            out,
            strict_improvement,
            filter_train_range,
        } => cmd_run(
            &scenario,
            seed,
            trials as usize,
            out,
            strict_improvement,
            filter_train_range,
        ),
        Command::Decompose {
            scenario,
            pair,
            filter_train_range,
            out,
        } => cmd_decompose(&scenario, pair, filter_train_range, out),
    };
    match result {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

// ============================================================================
// Scenario loading
// ============================================================================

/// Resolve a shipped id or a config-file path into a runnable bundle plus a
/// provenance label for the manifest.
fn load_bundle(
    scenario: &str,
    filter_train_range: bool,
) -> Result<(ScenarioBundle, String), CliError> {
    if filter_train_range && scenario != "S5-loss-mismatch" {
        return Err(usage_err(
            "--filter-train-range only applies to the shipped S5-loss-mismatch scenario",
        ));
    }
    if let Some(bundle) = bundle_by_id(scenario, filter_train_range) {
        return Ok((bundle, format!("builtin:{scenario}")));
    }
    let path = Path::new(scenario);
    if !path.is_file() {
        return Err(usage_err(format!(
            "'{scenario}' is neither a shipped scenario id nor a config file (see `entangle list`)"
        )));
    }
    let text = fs::read_to_string(path)
        .map_err(|e| usage_err(format!("cannot read '{}': {e}", path.display())))?;
    let config = ScenarioConfig::from_json(&text)
        .map_err(|e| usage_err(format!("invalid config '{}': {e}", path.display())))?;
    let bundle = config
        .to_bundle()
        .map_err(|e| usage_err(format!("invalid config '{}': {e}", path.display())))?;
    Ok((bundle, format!("file:{}", path.display())))
}

// ============================================================================
// list
// ============================================================================

fn cmd_list(json: bool) -> Result<ExitCode, CliError> {
    let shipped = bundles();
    if json {
        #[derive(Serialize)]
        struct Row<'a> {
            id: &'a str,
            description: &'a str,
            update_target: &'a str,
            monte_carlo: bool,
            decomposition: bool,
        }
        let rows: Vec<Row> = shipped
            .iter()
            .map(|b| Row {
                id: &b.id,
                description: &b.description,
                update_target: b.update.target.as_str(),
                monte_carlo: b.monte_carlo.is_some(),
                decomposition: b.decomposition.is_some(),
            })
            .collect();
        let text = serde_json::to_string_pretty(&rows)
            .map_err(|e| CliError::Run(format!("cannot serialize listing: {e}")))?;
        println!("{text}");
    } else {
        for b in &shipped {
            println!("{:<18} {}", b.id, b.description);
        }
    }
    Ok(ExitCode::SUCCESS)
}

// ============================================================================
// run
// ============================================================================

#[derive(Serialize)]
struct Manifest<'a> {
    run_id: &'a str,
    scenario: &'a str,
    source: &'a str,
    seed: u64,
    trials: usize,
    strict_improvement: bool,
    filter_train_range: bool,
    tool_version: &'a str,
    created_unix: u64,
}

fn cmd_run(
    scenario: &str,
    seed: u64,
    trials: usize,
    out: Option<PathBuf>,
    strict_improvement: bool,
    filter_train_range: bool,
) -> Result<ExitCode, CliError> {
    let (bundle, source) = load_bundle(scenario, filter_train_range)?;
    let config_json = bundle.to_config().to_json();
    let id = run_id(&config_json, seed, trials, strict_improvement);

    let report = run_scenario(&bundle, seed, trials, strict_improvement).map_err(run_err)?;
    check_finite(&report)?;

    // Reproduce the model sets the runner used; `apply_update` is
    // deterministic, so this matches the report exactly.
    let vg = bundle.validate().map_err(run_err)?;
    let (new_vg, new_models, _) = apply_update(
        &vg,
        &bundle.registry,
        &bundle.baseline_models,
        &bundle.update,
        strict_improvement,
    )
    .map_err(run_err)?;
    let csv = points_csv(
        &bundle.dist,
        &vg,
        &bundle.baseline_models,
        &new_vg,
        &new_models,
    )
    .map_err(run_err)?;

    let dir = resolve_out_dir(out, &id);
    fs::create_dir_all(&dir)
        .map_err(|e| CliError::Run(format!("cannot create '{}': {e}", dir.display())))?;
    let report_json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Run(format!("cannot serialize report: {e}")))?;
    let manifest = Manifest {
        run_id: &id,
        scenario: &report.scenario,
        source: &source,
        seed,
        trials,
        strict_improvement,
        filter_train_range,
        tool_version: env!("CARGO_PKG_VERSION"),
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Run(format!("cannot serialize manifest: {e}")))?;
    write_artifact(&dir, "report.json", &(report_json + "\n"))?;
    write_artifact(&dir, "points.csv", &csv)?;
    write_artifact(&dir, "config.json", &(config_json + "\n"))?;
    write_artifact(&dir, "manifest.json", &(manifest_json + "\n"))?;

    print_summary(&report, &id, &dir, vg.order());
    if let Some(violation) = report.violation() {
        eprintln!("error: {violation}");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

/// Deterministic run id: first eight bytes of a digest over the canonical
/// config JSON and the run parameters.
fn run_id(config_json: &str, seed: u64, trials: usize, strict_improvement: bool) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config_json.as_bytes());
    hasher.update(seed.to_le_bytes());
    hasher.update((trials as u64).to_le_bytes());
    hasher.update([strict_improvement as u8]);
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn resolve_out_dir(explicit: Option<PathBuf>, run_id: &str) -> PathBuf {
    if let Some(dir) = explicit {
        return dir;
    }
    let root = std::env::var_os("ENTANGLE_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    root.join(run_id)
}

fn write_artifact(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, text)
        .map_err(|e| CliError::Run(format!("cannot write '{}': {e}", path.display())))
}

fn check_finite(report: &ScenarioReport) -> Result<(), CliError> {
    for stats in [&report.monte_carlo_before, &report.monte_carlo_after]
        .into_iter()
        .flatten()
    {
        if !stats.mean.is_finite() || !stats.std_error.is_finite() {
            return Err(CliError::Run(format!(
                "monte-carlo statistics are non-finite (mean {}, se {})",
                stats.mean, stats.std_error
            )));
        }
    }
    Ok(())
}

/// One CSV row per support point: raw input, per-node targets, and per-node
/// outputs under the baseline and updated model sets.
fn points_csv(
    dist: &GroundTruthDistribution,
    vg: &ValidatedGraph,
    before: &ModelSet,
    new_vg: &ValidatedGraph,
    after: &ModelSet,
) -> entangle::Result<String> {
    let support = dist.support();
    let (first, _) = &support[0];
    let first_out = forward(vg, before, &first.x)?;

    let mut header: Vec<String> = vec!["index".into(), "mass".into()];
    for i in 0..first.x.len() {
        header.push(format!("x{i}"));
    }
    for id in vg.order() {
        for j in 0..first.targets[id].len() {
            header.push(format!("target_{}_{j}", id.as_str()));
        }
    }
    for prefix in ["before", "after"] {
        for id in vg.order() {
            for j in 0..first_out[id].len() {
                header.push(format!("{prefix}_{}_{j}", id.as_str()));
            }
        }
    }

    let mut lines = vec![header.join(",")];
    for (index, (example, mass)) in support.iter().enumerate() {
        let out_before = forward(vg, before, &example.x)?;
        let out_after = forward(new_vg, after, &example.x)?;
        let mut row: Vec<String> = vec![index.to_string(), mass.to_string()];
        row.extend(example.x.iter().map(f64::to_string));
        for id in vg.order() {
            row.extend(example.targets[id].iter().map(f64::to_string));
        }
        for outputs in [&out_before, &out_after] {
            for id in vg.order() {
                row.extend(outputs[id].iter().map(f64::to_string));
            }
        }
        lines.push(row.join(","));
    }
    lines.push(String::new());
    Ok(lines.join("\n"))
}

fn print_summary(report: &ScenarioReport, run_id: &str, dir: &Path, order: &[NodeId]) {
    println!(
        "scenario {} (seed {}, trials {}, strict {})",
        report.scenario, report.seed, report.trials, report.strict_improvement
    );
    println!("  {}", report.description);
    println!("run id {run_id}, artifacts in {}", dir.display());
    let outcome = &report.outcome;
    for id in order {
        let before = outcome.before[id].value();
        let after = outcome.after[id].value();
        let tag = if *id == outcome.target {
            " (updated)"
        } else if outcome.retrained.contains(id) {
            " (retrained)"
        } else {
            ""
        };
        println!("  {}: test loss {before} -> {after}{tag}", id.as_str());
    }
    println!(
        "self-defeating: {}",
        if report.self_defeating { "yes" } else { "no" }
    );
    if let Some(d) = &report.decomposition_after {
        println!(
            "excess risk after update: upstream {} + approximation {} + estimation {} = {}",
            d.upstream_error.value(),
            d.approximation_error.value(),
            d.estimation_error.value(),
            d.total_excess.value()
        );
    }
    if let (Some(b), Some(a)) = (&report.monte_carlo_before, &report.monte_carlo_after) {
        println!(
            "monte-carlo mean downstream risk: {} (se {}) -> {} (se {})",
            b.mean, b.std_error, a.mean, a.std_error
        );
    }
    for effect in &report.effects {
        let mark = if effect.passed { "ok  " } else { "FAIL" };
        println!("  [{mark}] {} — {}", effect.description, effect.observed);
    }
    let held = report.effects.iter().filter(|e| e.passed).count();
    println!("effects: {held}/{} hold", report.effects.len());
}

// ============================================================================
// decompose
// ============================================================================

fn cmd_decompose(
    scenario: &str,
    pair: PairKind,
    filter_train_range: bool,
    out: Option<PathBuf>,
) -> Result<ExitCode, CliError> {
    let (bundle, _) = load_bundle(scenario, filter_train_range)?;
    let spec = bundle.decomposition.as_ref().ok_or_else(|| {
        usage_err(format!(
            "scenario '{}' does not configure a decomposition target",
            bundle.id
        ))
    })?;
    let vg = bundle.validate().map_err(run_err)?;
    let (new_vg, new_models, _) = apply_update(
        &vg,
        &bundle.registry,
        &bundle.baseline_models,
        &bundle.update,
        false,
    )
    .map_err(run_err)?;

    let artifact = match pair {
        PairKind::TwoModel => {
            let before = total_split(&vg, &bundle.registry, &bundle.baseline_models, &bundle.dist, spec)
                .map_err(run_err)?;
            let after =
                total_split(&new_vg, &bundle.registry, &new_models, &bundle.dist, spec)
                    .map_err(run_err)?;
            print_total_split(&bundle.id, &spec.downstream, &before, &after);
            serde_json::json!({
                "scenario": bundle.id,
                "downstream": spec.downstream,
                "pair": "two-model",
                "before": before,
                "after": after,
            })
        }
        PairKind::TwoUpstream => {
            let pair_spec = spec.upstream_pair.as_ref().ok_or_else(|| {
                usage_err(format!(
                    "scenario '{}' does not configure an upstream pair; use --pair two-model",
                    bundle.id
                ))
            })?;
            let before = upstream_split(
                &vg,
                &bundle.registry,
                &bundle.baseline_models,
                &bundle.dist,
                spec,
                pair_spec,
            )
            .map_err(run_err)?;
            let after = upstream_split(
                &new_vg,
                &bundle.registry,
                &new_models,
                &bundle.dist,
                spec,
                pair_spec,
            )
            .map_err(run_err)?;
            // Independent check: the two split terms must merge into the
            // upstream error of the three-term decomposition.
            let eq2_before =
                total_split(&vg, &bundle.registry, &bundle.baseline_models, &bundle.dist, spec)
                    .map_err(run_err)?;
            let eq2_after =
                total_split(&new_vg, &bundle.registry, &new_models, &bundle.dist, spec)
                    .map_err(run_err)?;
            let merge_residual = |split: &UpstreamDecomposition, total: &RiskDecomposition| {
                let merged = split.compatibility_error.value() + split.excess_upstream_error.value();
                (merged - total.upstream_error.value()).abs()
            };
            let residual =
                merge_residual(&before, &eq2_before).max(merge_residual(&after, &eq2_after));
            print_upstream_split(&bundle.id, spec, pair_spec, &before, &after, residual);
            serde_json::json!({
                "scenario": bundle.id,
                "downstream": spec.downstream,
                "pair": "two-upstream",
                "fixed": pair_spec.fixed,
                "actual": pair_spec.actual,
                "before": before,
                "after": after,
            })
        }
    };

    if let Some(dir) = out {
        fs::create_dir_all(&dir)
            .map_err(|e| CliError::Run(format!("cannot create '{}': {e}", dir.display())))?;
        let text = serde_json::to_string_pretty(&artifact)
            .map_err(|e| CliError::Run(format!("cannot serialize decomposition: {e}")))?;
        write_artifact(&dir, "decompose.json", &(text + "\n"))?;
        println!("wrote {}", dir.join("decompose.json").display());
    }
    Ok(ExitCode::SUCCESS)
}

/// Total-excess decomposition of the configured downstream node.
fn total_split(
    vg: &ValidatedGraph,
    registry: &Registry,
    models: &ModelSet,
    dist: &GroundTruthDistribution,
    spec: &DecompositionSpec,
) -> entangle::Result<RiskDecomposition> {
    let node_spec = vg.node(&spec.downstream)?;
    let family = registry.family(&node_spec.family)?;
    let stages = upstream_stages(vg, models, &spec.downstream)?;
    decompose_with_upstreams(
        dist,
        &node_spec.input_slice,
        &stages,
        models.get(&spec.downstream)?,
        family,
        &spec.downstream,
        &node_spec.test_loss,
    )
}

/// Compatibility/excess split of the upstream error for the configured pair.
fn upstream_split(
    vg: &ValidatedGraph,
    registry: &Registry,
    models: &ModelSet,
    dist: &GroundTruthDistribution,
    spec: &DecompositionSpec,
    pair: &UpstreamPairSpec,
) -> entangle::Result<UpstreamDecomposition> {
    let node_spec = vg.node(&spec.downstream)?;
    let fixed = UpstreamStage::new(
        vg.node(&pair.fixed)?.input_slice.clone(),
        models.get(&pair.fixed)?.clone(),
    );
    let actual = UpstreamStage::new(
        vg.node(&pair.actual)?.input_slice.clone(),
        models.get(&pair.actual)?.clone(),
    );
    decompose_upstream_pair(
        dist,
        &node_spec.input_slice,
        &fixed,
        &actual,
        registry.family(&pair.candidate_family)?,
        &pair.actual,
        &spec.downstream,
        &node_spec.test_loss,
    )
}

fn print_row(label: &str, before: f64, after: f64) {
    println!("  {label:<24} {before:<22} {after}");
}

fn print_total_split(
    scenario: &str,
    downstream: &NodeId,
    before: &RiskDecomposition,
    after: &RiskDecomposition,
) {
    println!(
        "excess-risk decomposition for '{}' in scenario {scenario}",
        downstream.as_str()
    );
    println!("  {:<24} {:<22} after update", "", "before update");
    print_row("bayes risk", before.bayes_risk.value(), after.bayes_risk.value());
    print_row(
        "conditioned optimum",
        before.conditioned_risk.value(),
        after.conditioned_risk.value(),
    );
    print_row(
        "restricted optimum",
        before.restricted_risk.value(),
        after.restricted_risk.value(),
    );
    print_row(
        "trained model",
        before.trained_risk.value(),
        after.trained_risk.value(),
    );
    print_row(
        "upstream error",
        before.upstream_error.value(),
        after.upstream_error.value(),
    );
    print_row(
        "approximation error",
        before.approximation_error.value(),
        after.approximation_error.value(),
    );
    print_row(
        "estimation error",
        before.estimation_error.value(),
        after.estimation_error.value(),
    );
    print_row(
        "total excess",
        before.total_excess.value(),
        after.total_excess.value(),
    );
    let residual = |d: &RiskDecomposition| {
        (d.total_excess.value() - d.terms().iter().sum::<f64>()).abs()
    };
    println!(
        "  telescoping residual {:e} (bound {IDENTITY_TOLERANCE:e})",
        residual(before).max(residual(after))
    );
}

fn print_upstream_split(
    scenario: &str,
    spec: &DecompositionSpec,
    pair: &UpstreamPairSpec,
    before: &UpstreamDecomposition,
    after: &UpstreamDecomposition,
    merge_residual: f64,
) {
    println!(
        "upstream-error split for '{}' in scenario {scenario} (fixed '{}', actual '{}')",
        spec.downstream.as_str(),
        pair.fixed.as_str(),
        pair.actual.as_str()
    );
    println!("  {:<24} {:<22} after update", "", "before update");
    print_row("bayes risk", before.bayes_risk.value(), after.bayes_risk.value());
    print_row(
        "actual-pair optimum",
        before.actual_conditioned_risk.value(),
        after.actual_conditioned_risk.value(),
    );
    print_row(
        "companion-pair optimum",
        before.companion_conditioned_risk.value(),
        after.companion_conditioned_risk.value(),
    );
    print_row(
        "compatibility error",
        before.compatibility_error.value(),
        after.compatibility_error.value(),
    );
    print_row(
        "excess upstream error",
        before.excess_upstream_error.value(),
        after.excess_upstream_error.value(),
    );
    println!("  companion params before: {:?}", before.companion_params);
    println!("  companion params after:  {:?}", after.companion_params);
    println!(
        "  merge residual vs upstream error {merge_residual:e} (bound {IDENTITY_TOLERANCE:e})"
    );
}
