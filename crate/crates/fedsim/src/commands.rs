use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fedsim_core::data::{generate_synthetic, LabeledDataset};
use fedsim_core::orchestrator::{run_experiment, DataSource, ExperimentConfig, ExperimentReport};

use crate::config::Settings;
use crate::error::{CliError, CliResult};
use crate::output::{self, mean_std};
use crate::svg::{self, Curve};
use crate::table;

#[derive(Debug, Clone, Default)]
pub struct RunArgs {
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub out: Option<PathBuf>,
    pub extra_rounds: Option<usize>,
    pub seed: Option<u64>,
}

/// Applies the config file, overrides and flags, in that order.
pub fn resolve_config(args: &RunArgs) -> CliResult<ExperimentConfig> {
    let mut settings = match &args.config {
        Some(path) => Settings::from_file(path)?,
        None => Settings::default(),
    };
    for o in &args.overrides {
        settings.apply_override(o)?;
    }
    if let Some(n) = args.extra_rounds {
        settings.set("extra_rounds", &n.to_string())?;
    }
    if let Some(seed) = args.seed {
        settings.set("fed.seed", &seed.to_string())?;
    }
    if let Some(out) = &args.out {
        settings.set("output_dir", &out.to_string_lossy())?;
    }
    settings.build()
}

pub fn load_data(cfg: &ExperimentConfig) -> CliResult<LabeledDataset> {
    match &cfg.data {
        DataSource::Synthetic(spec) => Ok(generate_synthetic(spec)?),
        DataSource::Csv {
            path,
            label_column,
            feature_columns,
        } => table::load_csv(Path::new(path), label_column, feature_columns).map_err(|e| match e {
            table::CsvError::Schema(_) => CliError::Config(format!("{path}: {e}")),
            other => CliError::Runtime(format!("{path}: {other}")),
        }),
    }
}

/// Runs one experiment and writes its outputs. Returns the report and the
/// summary line printed to stdout.
pub fn run(args: &RunArgs) -> CliResult<(ExperimentReport, String)> {
    let cfg = resolve_config(args)?;
    let data = load_data(&cfg)?;
    let started = Instant::now();
    let mut report = run_experiment(&cfg, &data)?;
    report.wall_time_seconds = started.elapsed().as_secs_f64();
    output::write_all(Path::new(&cfg.output_dir), &report)?;
    let line = format!(
        "{}: {} (final mean ± std accuracy over {} clients, {} steps)",
        cfg.method.label(),
        mean_std(&report),
        report.num_clients,
        fedsim_core::orchestrator::account_budget(&report)
    );
    Ok((report, line))
}

/// Writes `compare.svg` and `compare.txt` into `out` and returns the table.
pub fn compare(reports: &[PathBuf], out: &Path) -> CliResult<String> {
    if reports.is_empty() {
        return Err(CliError::Config("compare needs at least one report".into()));
    }
    let loaded: Vec<ExperimentReport> = reports
        .iter()
        .map(|p| output::read_report(p))
        .collect::<CliResult<_>>()?;
    let labels: Vec<String> = loaded
        .iter()
        .zip(reports)
        .map(|(r, p)| {
            let label = r.config.method.label();
            let repeated = loaded.iter().filter(|o| o.config.method == r.config.method).count() > 1;
            if repeated {
                let parent = p.parent().and_then(|d| d.file_name()).map(|s| s.to_string_lossy());
                let stem = p.file_stem().map(|s| s.to_string_lossy()).unwrap_or_default();
                format!("{label} ({})", parent.unwrap_or(stem))
            } else {
                label.to_string()
            }
        })
        .collect();

    let width = labels.iter().map(|l| l.chars().count()).max().unwrap_or(0).max(6);
    let mut text = String::new();
    let _ = writeln!(text, "{:<width$}  final accuracy (%)", "method");
    for (label, r) in labels.iter().zip(&loaded) {
        let _ = writeln!(text, "{label:<width$}  {}", mean_std(r));
    }

    let curves: Vec<Curve<'_>> = labels
        .into_iter()
        .zip(&loaded)
        .map(|(label, report)| Curve { label, report })
        .collect();
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("compare.svg"), svg::render(&curves))?;
    std::fs::write(out.join("compare.txt"), &text)?;
    Ok(text)
}

/// Membership, sizes and merge heights of a clustered run.
pub fn cluster_report(path: &Path) -> CliResult<String> {
    let report = output::read_report(path)?;
    let (Some(assignment), Some(dendrogram)) = (&report.cluster_assignment, &report.dendrogram) else {
        return Err(CliError::Config(format!(
            "{} comes from method {}, which does not cluster clients; use fedavg_hc or fedap_hc",
            path.display(),
            report.config.method.name()
        )));
    };
    let mut text = String::new();
    let _ = writeln!(
        text,
        "{} clusters over {} clients (max_distance {})",
        assignment.num_clusters,
        assignment.labels.len(),
        assignment.threshold_used
    );
    for (c, members) in assignment.members().iter().enumerate() {
        let ids: Vec<String> = members.iter().map(|m| m.to_string()).collect();
        let flag = if members.len() == 1 { ", local-only" } else { "" };
        let classes: Vec<String> = members
            .iter()
            .filter_map(|&m| report.client_classes.get(m))
            .map(|cl| format!("{cl:?}"))
            .collect();
        let _ = writeln!(
            text,
            "cluster {c} (size {}{flag}): clients {} | classes {}",
            members.len(),
            ids.join(", "),
            classes.join(" ")
        );
    }
    let heights: Vec<String> = dendrogram.heights().iter().map(|h| format!("{h:.6}")).collect();
    let _ = writeln!(text, "merge heights: {}", heights.join(" "));
    Ok(text)
}

/// Caps the rayon pool when `FEDSIM_THREADS` is set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("FEDSIM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| CliError::Config(format!("FEDSIM_THREADS must be an integer >= 1, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}
