use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fedsim_core::orchestrator::ExperimentReport;

fn fedsim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedsim"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Runs `method` for `rounds` rounds into `dir/name` and returns the report path.
fn run(dir: &Path, name: &str, method: &str, rounds: usize, extra: &[&str]) -> PathBuf {
    let mut args = vec![
        "run".to_string(),
        "--override".into(),
        format!("method={method}"),
        "--override".into(),
        format!("fed.total_rounds={rounds}"),
        "--override".into(),
        "cluster_init_rounds=5".into(),
        "--out".into(),
        name.into(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = fedsim(dir, &refs);
    assert!(out.status.success(), "{}", stderr(&out));
    dir.join(name).join("report.json")
}

fn report(path: &Path) -> ExperimentReport {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.cfg"), "# FedAP on the desk benchmark\nmethod = fedap\nfed.total_rounds = 8\n").unwrap();
    let out = fedsim(dir.path(), &["run", "--config", "exp.cfg", "--out", "res"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("FedAP: "));
    assert!(stdout(&out).contains(" ± "));
    let res = dir.path().join("res");
    let r = report(&res.join("report.json"));
    assert_eq!(r.rounds.len(), 8);
    let csv = std::fs::read_to_string(res.join("rounds.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("round,mean_acc,std_acc,cumulative_steps"));
    assert_eq!(lines.count(), 8);
    // not clustered
    assert!(!res.join("clusters.json").exists());
}

#[test]
fn clustered_run_writes_clusters_json() {
    let dir = tempfile::tempdir().unwrap();
    let path = run(dir.path(), "hc", "fedavg_hc", 10, &[]);
    let clusters: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(path.with_file_name("clusters.json")).unwrap()).unwrap();
    let r = report(&path);
    assert_eq!(clusters["assignment"]["labels"].as_array().unwrap().len(), r.num_clients);
    assert_eq!(clusters["dendrogram"]["merges"].as_array().unwrap().len(), r.num_clients - 1);
}

#[test]
fn unknown_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.cfg"), "metalr = 0.3\n").unwrap();
    let out = fedsim(dir.path(), &["run", "--config", "bad.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("`metalr`"));

    let out = fedsim(dir.path(), &["run", "--override", "fed.batch_size=zero"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("fed.batch_size"));

    let out = fedsim(dir.path(), &["run", "--config", "missing.cfg"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("rows.csv"), "x,label\n1,a\noops,b\n").unwrap();
    std::fs::write(dir.path().join("exp.cfg"), "data.kind = csv\ndata.path = rows.csv\n").unwrap();
    let out = fedsim(dir.path(), &["run", "--config", "exp.cfg"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("row 2"));
}

#[test]
fn total_rounds_override_bounds_the_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedsim(
        dir.path(),
        &["run", "--override", "fed.total_rounds=5", "--override", "method=fedavg", "--out", "o"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(report(&dir.path().join("o/report.json")).rounds.len() == 5);
}

#[test]
fn seed_and_extra_rounds_flags() {
    let dir = tempfile::tempdir().unwrap();
    let a = report(&run(dir.path(), "a", "fedap", 6, &["--seed", "3", "--extra-rounds", "2"]));
    assert_eq!(a.config.fed.seed, 3);
    assert_eq!(a.config.extra_rounds, 2);
    assert_eq!(a.rounds.len(), 8);
    let b = report(&run(dir.path(), "b", "fedap", 6, &["--seed", "4"]));
    assert_ne!(a.rounds[0].global_params_hash, b.rounds[0].global_params_hash);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for threads in ["1", "4"] {
        let out = Command::new(env!("CARGO_BIN_EXE_fedsim"))
            .current_dir(dir.path())
            .env("FEDSIM_THREADS", threads)
            .args(["run", "--override", "fed.total_rounds=12", "--override", "cluster_init_rounds=4", "--out", "t"])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        bytes.push(std::fs::read(dir.path().join("t/report.json")).unwrap());
        bytes.push(std::fs::read(dir.path().join("t/rounds.csv")).unwrap());
    }
    assert_eq!(bytes[0], bytes[2]);
    assert_eq!(bytes[1], bytes[3]);

    let out = Command::new(env!("CARGO_BIN_EXE_fedsim"))
        .current_dir(dir.path())
        .env("FEDSIM_THREADS", "none")
        .args(["run"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn compare_single_report_is_valid_svg() {
    let dir = tempfile::tempdir().unwrap();
    let path = run(dir.path(), "one", "fedavg", 6, &[]);
    let out = fedsim(dir.path(), &["compare", path.to_str().unwrap(), "--out", "cmp"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let svg = std::fs::read_to_string(dir.path().join("cmp/compare.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let curves = doc
        .descendants()
        .filter(|n| n.attribute("class") == Some("curve"))
        .count();
    assert_eq!(curves, 1);
    assert!(svg.contains("FedAvg"));
}

#[test]
fn compare_table_matches_reports_and_marks_clustering() {
    let dir = tempfile::tempdir().unwrap();
    let a = run(dir.path(), "avg", "fedavg", 10, &[]);
    let b = run(dir.path(), "hc", "fedavg_hc", 10, &[]);
    let out = fedsim(dir.path(), &["compare", a.to_str().unwrap(), b.to_str().unwrap(), "--out", "cmp"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = stdout(&out);
    for (label, path) in [("FedAvg ", &a), ("FedAvg + HC", &b)] {
        let r = report(path);
        let expected = format!("{:.1} ± {:.2}", 100.0 * r.final_mean, 100.0 * r.final_std);
        let line = table.lines().find(|l| l.starts_with(label)).unwrap();
        assert!(line.ends_with(&expected), "{line} vs {expected}");
    }
    assert_eq!(table, std::fs::read_to_string(dir.path().join("cmp/compare.txt")).unwrap());

    let svg = std::fs::read_to_string(dir.path().join("cmp/compare.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let markers: Vec<_> = doc
        .descendants()
        .filter(|n| n.attribute("class") == Some("cluster-marker"))
        .collect();
    assert_eq!(markers.len(), 1);
    // marker sits at the clustering step on the shared x axis
    let hc = report(&b);
    let step = hc.clustering_step.unwrap() as f64;
    let max = report(&a).rounds.last().unwrap().cumulative_steps.max(hc.rounds.last().unwrap().cumulative_steps) as f64;
    let x: f64 = markers[0].attribute("x1").unwrap().parse().unwrap();
    assert!((x - (70.0 + 600.0 * step / max)).abs() < 0.01, "{x}");
}

#[test]
fn compare_rejects_non_reports() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("x.json"), "{\"rounds\": 3}").unwrap();
    let out = fedsim(dir.path(), &["compare", "x.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cluster_report_lists_members_and_heights() {
    let dir = tempfile::tempdir().unwrap();
    let path = run(dir.path(), "hc", "fedap_hc", 8, &[]);
    let out = fedsim(dir.path(), &["cluster-report", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let r = report(&path);
    let k = r.cluster_assignment.as_ref().unwrap().num_clusters;
    let lines: Vec<&str> = text.lines().filter(|l| l.starts_with("cluster ")).collect();
    assert_eq!(lines.len(), k);
    for (line, size) in lines.iter().zip(r.cluster_assignment.as_ref().unwrap().sizes()) {
        assert!(line.contains(&format!("size {size}")));
        assert_eq!(line.contains("local-only"), size == 1);
    }
    let heights: Vec<f64> = text
        .lines()
        .find_map(|l| l.strip_prefix("merge heights: "))
        .unwrap()
        .split_whitespace()
        .map(|h| h.parse().unwrap())
        .collect();
    assert_eq!(heights.len(), r.num_clients - 1);
    assert!(heights.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn cluster_report_two_clusters_and_singletons() {
    let dir = tempfile::tempdir().unwrap();
    // a threshold just below the root merge leaves exactly two clusters
    let probe = report(&run(dir.path(), "p", "fedavg_hc", 8, &[]));
    let h = probe.dendrogram.as_ref().unwrap().heights();
    let cut = (h[h.len() - 1] + h[h.len() - 2]) / 2.0;
    let two = run(dir.path(), "two", "fedavg_hc", 8, &["--override", &format!("max_distance={cut}")]);
    let out = fedsim(dir.path(), &["cluster-report", two.to_str().unwrap()]);
    assert_eq!(stdout(&out).lines().filter(|l| l.starts_with("cluster ")).count(), 2);

    let tiny = run(dir.path(), "tiny", "fedavg_hc", 8, &["--override", "max_distance=1e-9"]);
    let text = stdout(&fedsim(dir.path(), &["cluster-report", tiny.to_str().unwrap()]));
    let lines: Vec<&str> = text.lines().filter(|l| l.starts_with("cluster ")).collect();
    assert_eq!(lines.len(), probe.num_clients);
    assert!(lines.iter().all(|l| l.contains("local-only")));
}

#[test]
fn cluster_report_rejects_unclustered_runs() {
    let dir = tempfile::tempdir().unwrap();
    let path = run(dir.path(), "avg", "fedavg", 4, &[]);
    let out = fedsim(dir.path(), &["cluster-report", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("does not cluster"));
}

#[test]
fn csv_data_source_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let spec = fedsim_core::orchestrator::desk_benchmark(1);
    let data = fedsim_core::data::generate_synthetic(&spec).unwrap();
    fedsim::table::save_csv(&dir.path().join("rows.csv"), &data).unwrap();
    std::fs::write(
        dir.path().join("exp.cfg"),
        "data.kind = csv\ndata.path = rows.csv\nmethod = fedavg\nfed.total_rounds = 3\n",
    )
    .unwrap();
    let out = fedsim(dir.path(), &["run", "--config", "exp.cfg", "--out", "o"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(report(&dir.path().join("o/report.json")).num_clients, 49);
}
