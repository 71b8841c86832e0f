use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use tempfile::TempDir;

struct Output {
    code: i32,
    stdout: String,
    stderr: String,
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn holdgraph(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_holdgraph"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// A temporary directory holding `small.toml`.
fn project() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::copy(fixture("small.toml"), dir.path().join("small.toml")).unwrap();
    dir
}

fn run_ok(dir: &Path, args: &[&str]) -> Output {
    let out = holdgraph(dir, args);
    assert_eq!(out.code, 0, "holdgraph {args:?} failed\nstdout:\n{}\nstderr:\n{}", out.stdout, out.stderr);
    out
}

const SMALL: [&str; 4] = ["--config", "small.toml", "--workspace", "ws"];

fn small(extra: &[&str]) -> Vec<String> {
    SMALL.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn run_small(dir: &Path, extra: &[&str]) -> Output {
    let args = small(extra);
    run_ok(dir, &args.iter().map(String::as_str).collect::<Vec<_>>())
}

/// `stage -> status` from the tab-separated stage lines of a run.
fn stage_lines(stdout: &str) -> Vec<(String, String)> {
    stdout
        .lines()
        .filter_map(|l| l.split_once('\t'))
        .map(|(s, rest)| (s.to_string(), rest.to_string()))
        .collect()
}

fn ran_stages(stdout: &str) -> Vec<String> {
    stage_lines(stdout)
        .into_iter()
        .filter(|(_, r)| r.starts_with("ran"))
        .map(|(s, _)| s)
        .collect()
}

#[test]
fn ingest_valid_fixture_has_no_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture("valid.csv");
    let out = run_ok(dir.path(), &["--workspace", "ws", "ingest", "--input", input.to_str().unwrap()]);
    assert!(out.stdout.contains("3 funds, 5 assets, 8 edges"), "{}", out.stdout);
    assert!(out.stdout.contains(", 0 diagnostics"), "{}", out.stdout);
    let ws = dir.path().join("ws");
    assert_eq!(fs::read_to_string(ws.join("diagnostics.tsv")).unwrap(), "");
    let edges = fs::read_to_string(ws.join("clean_edges.csv")).unwrap();
    assert_eq!(edges.lines().count(), 9);
    assert!(ws.join("manifests/edges.json").exists());
}

#[test]
fn ingest_bad_isin_is_one_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture("bad_isin.csv");
    let out = run_ok(dir.path(), &["--workspace", "ws", "ingest", "--input", input.to_str().unwrap()]);
    let diag = fs::read_to_string(dir.path().join("ws/diagnostics.tsv")).unwrap();
    assert_eq!(diag.lines().count(), 1, "{diag}");
    assert!(diag.contains("invalid ISIN") && diag.contains("US00000000XA"), "{diag}");
    assert!(out.stdout.contains(", 1 diagnostics"), "{}", out.stdout);
}

#[test]
fn ingest_missing_input_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = holdgraph(dir.path(), &["--workspace", "ws", "ingest", "--input", "no/such/holdings.csv"]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("no/such/holdings.csv"), "{}", out.stderr);
}

#[test]
fn ingest_without_any_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(holdgraph(dir.path(), &["--workspace", "ws", "ingest"]).code, 2);
}

#[test]
fn ingest_nport_filing() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture("nport.xml");
    let out = run_ok(
        dir.path(),
        &["--workspace", "ws", "ingest", "--format", "nport", "--input", input.to_str().unwrap()],
    );
    assert!(out.stdout.contains("1 funds, 2 assets, 2 edges"), "{}", out.stdout);
    let diag = fs::read_to_string(dir.path().join("ws/diagnostics.tsv")).unwrap();
    assert_eq!(diag.lines().count(), 1);
    assert!(diag.contains("missing isin"));
}

#[test]
fn config_errors_exit_2() {
    let dir = project();
    fs::write(dir.path().join("bad.toml"), "[walk]\nlength = 3\n").unwrap();
    assert_eq!(holdgraph(dir.path(), &["--config", "bad.toml", "pipeline"]).code, 2);
    fs::write(dir.path().join("bad.toml"), "[walk]\np = 0.0\n").unwrap();
    assert_eq!(holdgraph(dir.path(), &["--config", "bad.toml", "pipeline"]).code, 2);
    assert_eq!(holdgraph(dir.path(), &["--config", "missing.toml", "pipeline"]).code, 2);
    let out = holdgraph(dir.path(), &["--workspace", "ws", "train"]);
    assert_eq!(out.code, 2, "train without a corpus: {}", out.stderr);
}

#[test]
fn pipeline_rerun_and_dependency_tracking() {
    let dir = project();
    let first = run_small(dir.path(), &["pipeline"]);
    assert_eq!(
        ran_stages(&first.stdout),
        ["edges", "graph", "walks", "train", "eval", "compare", "cohesion", "project"]
    );
    let ws = dir.path().join("ws");
    for report in [
        "sweep.csv",
        "composition.csv",
        "misclassified.csv",
        "overlap_stats.csv",
        "overlap_per_fund.csv",
        "scatter.csv",
        "similarity_summary.csv",
        "cohesion.csv",
        "projection.csv",
        "graph_stats.csv",
        "train_loss.csv",
    ] {
        assert!(ws.join(report).is_file(), "{report} missing");
    }

    // Unchanged configuration: nothing runs.
    let again = run_small(dir.path(), &["pipeline"]);
    let lines = stage_lines(&again.stdout);
    assert_eq!(lines.len(), 8);
    assert!(lines.iter().all(|(_, r)| r == "skipped (fresh)"), "{}", again.stdout);

    // Only the similarity lists change: only compare reruns.
    let cfg = fs::read_to_string(dir.path().join("small.toml")).unwrap();
    fs::write(dir.path().join("small.toml"), cfg.replace("m_values = [3, 5]", "m_values = [3]")).unwrap();
    let dry = run_small(dir.path(), &["pipeline", "--dry-run"]);
    let stale: Vec<_> = stage_lines(&dry.stdout)
        .into_iter()
        .filter(|(s, r)| s != "stage" && r != "fresh")
        .map(|(s, _)| s)
        .collect();
    assert_eq!(stale, ["compare"]);
    let third = run_small(dir.path(), &["pipeline"]);
    assert_eq!(ran_stages(&third.stdout), ["compare"]);
    let stats = fs::read_to_string(ws.join("overlap_stats.csv")).unwrap();
    assert_eq!(stats.lines().count(), 2);

    // Editing the graph artifact invalidates everything downstream of it.
    let edges_path = ws.join("graph_edges.csv");
    let edges = fs::read_to_string(&edges_path).unwrap();
    let mut lines: Vec<&str> = edges.lines().collect();
    let last = lines.pop().unwrap();
    let edited = format!("{}\n{}\n", lines.join("\n"), last.rsplit_once(',').unwrap().0.to_string() + ",0.5");
    fs::write(&edges_path, edited).unwrap();
    let dry = run_small(dir.path(), &["pipeline", "--dry-run"]);
    let status: Vec<(String, String)> = stage_lines(&dry.stdout).into_iter().skip(1).collect();
    for (stage, s) in &status {
        if stage == "edges" {
            assert_eq!(s, "fresh");
        } else {
            assert!(s.starts_with("stale"), "{stage} should be stale, got {s}");
        }
    }
    // A stage run directly on the edited graph consumes it, and its new
    // corpus makes training stale.
    let walks = run_small(dir.path(), &["walks"]);
    assert_eq!(ran_stages(&walks.stdout), ["walks"]);
    let dry = run_small(dir.path(), &["pipeline", "--dry-run"]);
    assert!(dry.stdout.contains("train\tstale (input corpus.txt changed)"), "{}", dry.stdout);
    // The pipeline rebuilds the original graph and corpus. Artifacts are
    // content-addressed, so stages that consumed the restored bytes stay fresh.
    let repaired = run_small(dir.path(), &["pipeline"]);
    assert_eq!(ran_stages(&repaired.stdout), ["graph", "walks"]);
    let last = run_small(dir.path(), &["pipeline"]);
    assert!(ran_stages(&last.stdout).is_empty());
}

#[test]
fn single_stage_commands_are_idempotent() {
    let dir = project();
    run_small(dir.path(), &["synth"]);
    run_small(dir.path(), &["graph"]);
    run_small(dir.path(), &["walks"]);
    let out = run_small(dir.path(), &["walks"]);
    assert_eq!(stage_lines(&out.stdout), [("walks".to_string(), "skipped (fresh)".to_string())]);
    // A flag override is a configuration change.
    let out = run_small(dir.path(), &["walks", "-l", "12"]);
    assert_eq!(ran_stages(&out.stdout), ["walks"]);
    let corpus = fs::read_to_string(dir.path().join("ws/corpus.txt")).unwrap();
    assert!(corpus.lines().nth(1).unwrap().split(' ').count() == 13);
    let out = run_small(dir.path(), &["walks", "--force", "-l", "12"]);
    assert_eq!(ran_stages(&out.stdout), ["walks"]);
}

#[test]
fn cohesion_uses_benchmark_file() {
    let dir = project();
    run_small(dir.path(), &["pipeline"]);
    let bench = fixture("benchmarks.csv");
    let out = run_small(dir.path(), &["cohesion", "--benchmarks", bench.to_str().unwrap()]);
    assert_eq!(ran_stages(&out.stdout), ["cohesion"]);
    let csv = fs::read_to_string(dir.path().join("ws/cohesion.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("first_half,4,"));
    assert!(rows[1].starts_with("mixed,2,"));
}

fn parse_ranking(csv: &str) -> Vec<(String, f64)> {
    csv.lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("rank"))
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1].to_string(), f[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn similar_queries() {
    let dir = project();
    run_small(dir.path(), &["pipeline"]);

    let out = run_small(dir.path(), &["similar", "F07", "-m", "5"]);
    let lines: Vec<&str> = out.stdout.lines().collect();
    assert_eq!(lines[0], "rank,fund_id,cosine");
    assert_eq!(lines.len(), 6);
    let embedded = parse_ranking(&out.stdout);
    assert!(embedded.windows(2).all(|w| w[0].1 >= w[1].1));
    assert!(embedded.iter().all(|(f, _)| f != "F07"));

    let original = parse_ranking(&run_small(dir.path(), &["similar", "F07", "-m", "5", "--rep", "original"]).stdout);
    assert_eq!(original.len(), 5);

    let both = run_small(dir.path(), &["similar", "F07", "-m", "5", "--rep", "both"]).stdout;
    let sections: Vec<&str> = both.split("# ").filter(|s| !s.is_empty()).collect();
    assert_eq!(sections.len(), 3);
    assert!(sections[0].starts_with("original\n") && sections[1].starts_with("embedded\n"));
    let a = parse_ranking(sections[0].split_once('\n').unwrap().1);
    let b = parse_ranking(sections[1].split_once('\n').unwrap().1);
    assert_eq!(a, original);
    assert_eq!(b, embedded);
    let sa: HashSet<_> = a.iter().map(|x| &x.0).collect();
    let sb: HashSet<_> = b.iter().map(|x| &x.0).collect();
    let expected = sa.intersection(&sb).count() as f64 / sa.union(&sb).count() as f64;
    let reported: f64 = sections[2].lines().nth(1).unwrap().parse().unwrap();
    assert!((reported - expected).abs() < 1e-12);

    let unknown = holdgraph(dir.path(), &small(&["similar", "F7"]).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(unknown.code, 3);
    assert!(unknown.stderr.contains("did you mean") && unknown.stderr.contains("F07"), "{}", unknown.stderr);
}

#[test]
fn similar_needs_a_workspace() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(holdgraph(dir.path(), &["--workspace", "nowhere", "similar", "F01"]).code, 2);
}

#[test]
fn degenerate_embedding_is_an_internal_failure() {
    let dir = project();
    run_small(dir.path(), &["pipeline"]);
    let path = dir.path().join("ws/embedding.txt");
    let text = fs::read_to_string(&path).unwrap();
    let zeroed: Vec<String> = text
        .lines()
        .map(|l| {
            if l.starts_with("F07 ") {
                let dim = l.split(' ').count() - 1;
                format!("F07{}", " 0".repeat(dim))
            } else {
                l.to_string()
            }
        })
        .collect();
    fs::write(&path, zeroed.join("\n") + "\n").unwrap();
    let out = holdgraph(dir.path(), &small(&["similar", "F07"]).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(out.code, 1, "{}", out.stderr);
}

#[test]
fn live_lock_blocks_writers_but_not_queries() {
    let dir = project();
    run_small(dir.path(), &["pipeline"]);
    let lock = dir.path().join("ws/.lock");
    fs::write(&lock, format!("{}\n", std::process::id())).unwrap();
    let out = holdgraph(dir.path(), &small(&["pipeline"]).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("locked"), "{}", out.stderr);
    run_small(dir.path(), &["similar", "F01"]);
    assert!(lock.exists());
    fs::remove_file(&lock).unwrap();
    run_small(dir.path(), &["pipeline"]);
    assert!(!lock.exists());
}

fn row_records(ws: &Path) -> Vec<PathBuf> {
    let rows = ws.join("grid/rows");
    let Ok(entries) = fs::read_dir(rows) else { return Vec::new() };
    let mut found: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path().join("row.json"))
        .filter(|p| p.exists())
        .collect();
    found.sort();
    found
}

#[test]
fn two_point_grid() {
    let dir = project();
    run_small(dir.path(), &["synth"]);
    run_small(dir.path(), &["graph"]);
    let out = run_small(dir.path(), &["grid"]);
    assert!(out.stdout.contains(" *"), "best row not flagged: {}", out.stdout);
    let ws = dir.path().join("ws");
    let csv = fs::read_to_string(ws.join("grid.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "d,l,r,p,q,optimal_k,v_measure");
    assert_eq!(lines.len(), 3);
    let v: Vec<f64> = lines[1..].iter().map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    let best: serde_json::Value = serde_json::from_slice(&fs::read(ws.join("grid_best.json")).unwrap()).unwrap();
    let row = best["row"].as_u64().unwrap() as usize;
    assert!(v.iter().all(|&x| x <= v[row - 1]));
    assert_eq!(best["point"]["d"].as_u64().unwrap(), [4, 8][row - 1]);
    for f in ["corpus.txt", "embedding.txt", "sweep.csv"] {
        assert!(ws.join("grid/best").join(f).is_file());
    }
    let again = run_small(dir.path(), &["grid"]);
    assert_eq!(stage_lines(&again.stdout), [("grid".to_string(), "skipped (fresh)".to_string())]);
}

#[test]
fn grid_resumes_after_stop_and_matches_uninterrupted_run() {
    let dir = project();
    run_small(dir.path(), &["synth"]);
    run_small(dir.path(), &["graph"]);
    let ws = dir.path().join("ws");

    let out = run_small(dir.path(), &["grid", "--stop-after", "1"]);
    assert!(out.stdout.contains("stopped after 1 new rows"), "{}", out.stdout);
    assert!(!ws.join("grid.csv").exists());
    let done = row_records(&ws);
    assert_eq!(done.len(), 1);
    let before = fs::read(&done[0]).unwrap();
    let mtime = fs::metadata(&done[0]).unwrap().modified().unwrap();

    let out = run_small(dir.path(), &["grid"]);
    assert!(out.stderr.contains("1 of 2 rows reused"), "{}", out.stderr);
    assert_eq!(fs::read(&done[0]).unwrap(), before);
    assert_eq!(fs::metadata(&done[0]).unwrap().modified().unwrap(), mtime);
    let resumed = fs::read(ws.join("grid.csv")).unwrap();

    let fresh = project();
    run_small(fresh.path(), &["synth"]);
    run_small(fresh.path(), &["graph"]);
    run_small(fresh.path(), &["grid", "--parallel-rows"]);
    assert_eq!(fs::read(fresh.path().join("ws/grid.csv")).unwrap(), resumed);
}

#[test]
fn grid_survives_being_killed() {
    let dir = project();
    let cfg = "[synth]\nfunds = 60\nassets = 300\n\n[walk]\nwalks_per_node = 6\nwalk_length = 30\n\n\
               [train]\nwindow = 5\nepochs = 3\n\n[eval]\nk_max = 4\nrestarts = 2\n\n\
               [grid]\ndims = [4, 6, 8, 10, 12, 16]\nlengths = [[30, 6]]\npq = [[1.0, 1.0]]\n";
    fs::write(dir.path().join("slow.toml"), cfg).unwrap();
    let base = ["--config", "slow.toml", "--workspace", "ws"];
    fn with<'a>(base: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
        base.iter().chain(extra).copied().collect()
    }
    run_ok(dir.path(), &with(&base, &["synth"]));
    run_ok(dir.path(), &with(&base, &["graph"]));
    let ws = dir.path().join("ws");

    let mut child = Command::new(env!("CARGO_BIN_EXE_holdgraph"))
        .current_dir(dir.path())
        .args(with(&base, &["grid"]))
        .env("RUST_LOG", "warn")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(120);
    while row_records(&ws).is_empty() {
        assert!(Instant::now() < deadline, "no grid row finished in time");
        assert!(child.try_wait().unwrap().is_none(), "grid finished before it could be interrupted");
        std::thread::sleep(Duration::from_millis(10));
    }
    child.kill().unwrap();
    child.wait().unwrap();

    let finished = row_records(&ws);
    assert!(!finished.is_empty() && finished.len() < 6, "{} rows finished", finished.len());
    assert!(ws.join(".lock").exists(), "a killed process leaves its lock behind");
    let snapshot: Vec<Vec<u8>> = finished.iter().map(|p| fs::read(p).unwrap()).collect();

    let out = run_ok(dir.path(), &with(&base, &["grid"]));
    assert!(
        out.stderr.contains(&format!("{} of 6 rows reused", finished.len())),
        "{}",
        out.stderr
    );
    for (p, bytes) in finished.iter().zip(&snapshot) {
        assert_eq!(&fs::read(p).unwrap(), bytes);
    }
    assert_eq!(row_records(&ws).len(), 6);
    assert_eq!(fs::read_to_string(ws.join("grid.csv")).unwrap().lines().count(), 7);
    assert!(!ws.join(".lock").exists());
}
