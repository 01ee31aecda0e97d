use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fairest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairest"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// One system retrieving `n` documents, half of them protected.
fn write_single_run(dir: &Path, n: usize) {
    let mut runs = String::new();
    let mut labels = String::new();
    for i in 0..n {
        runs.push_str(&format!("q1 Q0 d{i} {} {} sys\n", i + 1, n - i));
        labels.push_str(&format!("d{i} {}\n", if i % 2 == 0 { "A" } else { "B" }));
    }
    fs::write(dir.join("runs.txt"), runs).unwrap();
    fs::write(dir.join("labels.txt"), labels).unwrap();
}

#[test]
fn tiny_simulation_writes_one_line_per_retrieved_document() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let o = fairest(&[
        "simulate", "--out", p(&out), "--seed", "5", "--num-queries", "1", "--num-systems", "1",
        "--corpus-size", "10", "--retrieved-per-query", "5",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let runs = fs::read_to_string(out.join("runs.txt")).unwrap();
    assert_eq!(runs.lines().count(), 5);
    assert_eq!(fs::read_to_string(out.join("annotations.txt")).unwrap().lines().count(), 10);
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 5"));
}

#[test]
fn simulation_is_reproducible_from_seed() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sim.toml");
    fs::write(
        &config,
        "num_queries = 2\ncorpus_size = 60\nnum_systems = 4\nretrieved_per_query = 8\ngroup_bias = 0.3\nseed = 11\n",
    )
    .unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = fairest(&["simulate", "--config", p(&config), "--out", p(out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["runs.txt", "qrels.txt", "annotations.txt", "manifest.toml"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn missing_seed_is_generated_and_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let o = fairest(&[
        "simulate", "--out", p(&out), "--num-queries", "1", "--num-systems", "2", "--corpus-size", "20",
        "--retrieved-per-query", "4",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest: toml::Table = fs::read_to_string(out.join("manifest.toml")).unwrap().parse().unwrap();
    assert!(manifest["config"]["seed"].is_integer());
}

#[test]
fn unwritable_output_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let o = fairest(&["simulate", "--out", p(&blocker.join("sub")), "--seed", "1", "--num-systems", "2"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sim.toml");
    fs::write(&config, "num_querys = 3\n").unwrap();
    let o = fairest(&["simulate", "--config", p(&config), "--out", p(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn rate_sample_size_and_uniform_inclusion_probability() {
    let dir = tempfile::tempdir().unwrap();
    write_single_run(dir.path(), 1000);
    let runs = dir.path().join("runs.txt");
    let labels = dir.path().join("labels.txt");
    for design in ["weighted", "uniform"] {
        let out = dir.path().join(format!("{design}.txt"));
        let o = fairest(&[
            "sample", "--runs", p(&runs), "--annotations", p(&labels), "--rate", "0.1", "--design", design,
            "--seed", "9", "--out", p(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(String::from_utf8_lossy(&o.stdout).contains("m = 100"));
        let text = fs::read_to_string(&out).unwrap();
        assert_eq!(text.lines().count(), 100);
        if design == "uniform" {
            for line in text.lines() {
                let theta: f64 = line.split_whitespace().nth(2).unwrap().parse().unwrap();
                assert!((theta - 0.1).abs() < 1e-12, "{line}");
            }
        }
    }
}

#[test]
fn sample_rejects_rate_outside_unit_interval() {
    let dir = tempfile::tempdir().unwrap();
    write_single_run(dir.path(), 10);
    for rate in ["0", "1.5", "-0.2"] {
        let o = fairest(&[
            "sample", "--runs", p(&dir.path().join("runs.txt")), "--annotations",
            p(&dir.path().join("labels.txt")), "--rate", rate, "--seed", "1", "--out",
            p(&dir.path().join("s.txt")),
        ]);
        assert_eq!(code(&o), 2, "rate {rate}: {}", stderr(&o));
    }
}

#[test]
fn sample_needs_rate_or_budget() {
    let dir = tempfile::tempdir().unwrap();
    write_single_run(dir.path(), 10);
    let o = fairest(&[
        "sample", "--runs", p(&dir.path().join("runs.txt")), "--annotations", p(&dir.path().join("labels.txt")),
        "--seed", "1", "--out", p(&dir.path().join("s.txt")),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn full_sample_estimates_match_actual_values() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let o = fairest(&[
        "simulate", "--out", p(&sim), "--seed", "3", "--num-queries", "2", "--num-systems", "4",
        "--corpus-size", "80", "--retrieved-per-query", "12", "--group-bias", "0.5",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let full = dir.path().join("full.txt");
    let o = fairest(&[
        "sample", "--runs", p(&sim.join("runs.txt")), "--annotations", p(&sim.join("annotations.txt")),
        "--rate", "1", "--seed", "1", "--out", p(&full),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = fairest(&[
        "estimate", "--runs", p(&sim.join("runs.txt")), "--annotations", p(&full), "--truth",
        p(&sim.join("annotations.txt")), "--cutoff", "10",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = String::from_utf8(o.stdout).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("system_id,metric,estimator,estimated,actual"));
    let mut rows = 0;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let (e, a): (f64, f64) = (f[3].parse().unwrap(), f[4].parse().unwrap());
        assert!((e - a).abs() <= 1e-9 * (1.0 + a.abs()), "{line}");
        rows += 1;
    }
    assert_eq!(rows, 4 * 5);
}

#[test]
fn complete_annotations_add_actual_column_without_truth() {
    let dir = tempfile::tempdir().unwrap();
    write_single_run(dir.path(), 6);
    let o = fairest(&[
        "estimate", "--runs", p(&dir.path().join("runs.txt")), "--annotations",
        p(&dir.path().join("labels.txt")), "--estimator", "induced", "--metric", "abs", "--cutoff", "4",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        String::from_utf8(o.stdout).unwrap(),
        "system_id,metric,estimator,estimated,actual\nsys,abs@k4,induced,0,0\n"
    );
}

#[test]
fn ht_on_two_column_file_names_the_missing_column() {
    let dir = tempfile::tempdir().unwrap();
    write_single_run(dir.path(), 6);
    let o = fairest(&[
        "estimate", "--runs", p(&dir.path().join("runs.txt")), "--annotations",
        p(&dir.path().join("labels.txt")), "--estimator", "ht",
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("third column"), "{}", stderr(&o));
}

#[test]
fn missing_runs_file_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    write_single_run(dir.path(), 4);
    let o = fairest(&[
        "estimate", "--runs", p(&dir.path().join("absent.txt")), "--annotations",
        p(&dir.path().join("labels.txt")),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn malformed_runs_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    write_single_run(dir.path(), 4);
    fs::write(dir.path().join("bad.txt"), "q1 Q0 d1 one 1.0 sys\n").unwrap();
    let o = fairest(&[
        "estimate", "--runs", p(&dir.path().join("bad.txt")), "--annotations", p(&dir.path().join("labels.txt")),
    ]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn sweep_is_deterministic_and_report_rerenders_plots() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = fairest(&[
        "simulate", "--out", p(&data), "--seed", "21", "--num-queries", "3", "--num-systems", "10",
        "--corpus-size", "150", "--retrieved-per-query", "20", "--group-bias", "0.5",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let config = dir.path().join("sweep.toml");
    fs::write(
        &config,
        "seed = 4\nrates = [0.3, 0.6]\nrepetitions = 2\nestimators = [\"ht\", \"induced\"]\n\
         metrics = [{ kind = \"abs\", cutoff = 10 }, { kind = \"exposure\", cutoff = 10 }]\n\
         [data.files]\nruns = \"data/runs.txt\"\nannotations = \"data/annotations.txt\"\n",
    )
    .unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = fairest(&["sweep", "--config", p(&config), "--out", p(out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["report.csv", "details.csv", "summary.csv", "manifest.toml"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let report = fs::read_to_string(a.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 2 * 2 * 2 * 2);

    let plots = dir.path().join("replot");
    let o = fairest(&[
        "report", "--report", p(&a.join("report.csv")), "--details", p(&a.join("details.csv")), "--out",
        p(&plots),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut names: Vec<_> = fs::read_dir(a.join("plots")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 2 * 2 * 2);
    for name in names {
        assert_eq!(fs::read(a.join("plots").join(&name)).unwrap(), fs::read(plots.join(&name)).unwrap());
    }
}

#[test]
fn sweep_overrides_replace_config_values() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sweep.toml");
    fs::write(
        &config,
        "[data.simulated]\nnum_queries = 2\ncorpus_size = 80\nnum_systems = 6\nretrieved_per_query = 10\n",
    )
    .unwrap();
    let out = dir.path().join("o");
    let o = fairest(&[
        "sweep", "--config", p(&config), "--out", p(&out), "--seed", "8", "--rates", "0.5", "--repetitions", "1",
        "--estimators", "uniform,uniform_normalized",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 4 * 2);
    assert!(summary.contains(",uniform_normalized,0.5,"));
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 8"));
}

#[test]
fn seeds_beyond_config_range_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = fairest(&["simulate", "--out", p(&dir.path().join("o")), "--seed", &u64::MAX.to_string()]);
    assert_eq!(code(&o), 2);
}
