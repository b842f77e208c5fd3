use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::sync::mpsc;
use std::time::{Duration, Instant};

fn fedvis() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fedvis"));
    c.env_remove("RUST_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    fedvis().args(args).output().expect("spawn fedvis")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_chart_kind_is_a_usage_error() {
    let o = run(&["query", "--chart", "spiral", "--sim", "--records", "500"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("spiral"));
    let o = run(&[
        "query",
        "--chart",
        "histogram",
        "--scheme",
        "magic",
        "--sim",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_manifest_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let o = run(&[
        "up",
        "--data",
        missing.to_str().unwrap(),
        "--listen",
        "127.0.0.1:0",
        "--http",
        "off",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    // Same for an unreadable config file.
    let o = run(&["up", "--config", missing.to_str().unwrap(), "--sim"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn port_clash_is_a_bind_error() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let o = run(&[
        "up",
        "--sim",
        "--records",
        "400",
        "--listen",
        &addr,
        "--http",
        "off",
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let o = run(&[
        "up",
        "--sim",
        "--records",
        "400",
        "--listen",
        "127.0.0.1:0",
        "--http",
        &addr,
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn simulated_fleet_of_eight_is_ready_quickly() {
    let start = Instant::now();
    let mut child = fedvis()
        .args([
            "up",
            "--sim",
            "--clients",
            "8",
            "--listen",
            "127.0.0.1:0",
            "--http",
            "127.0.0.1:0",
        ])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let stdout = child.stdout.take().unwrap();
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        for line in BufReader::new(stdout).lines().map_while(Result::ok) {
            if line.starts_with("ready") {
                let _ = tx.send(line);
                break;
            }
        }
    });
    let line = rx.recv_timeout(Duration::from_secs(5));
    let elapsed = start.elapsed();
    child.kill().unwrap();
    child.wait().unwrap();
    let line = line.expect("no ready line within 5 s");
    assert!(line.contains("clients=8"), "{line}");
    assert!(elapsed < Duration::from_secs(5), "{elapsed:?}");
}

fn oracle_re(err: &str) -> f64 {
    let line = err
        .lines()
        .find(|l| l.starts_with("oracle re="))
        .expect("oracle line");
    line["oracle re=".len()..]
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn heatmap_prediction_at_high_preset_is_accurate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("q");
    let o = run(&[
        "query",
        "--chart",
        "heatmap",
        "--scheme",
        "prediction",
        "--preset",
        "high",
        "--sim",
        "--oracle",
        "--out",
        out.to_str().unwrap(),
    ]);
    let err = stderr(&o);
    assert!(o.status.success(), "{err}");
    assert!(err.contains("WARNING: --oracle"), "oracle must warn loudly");
    let re = oracle_re(&err);
    assert!(re < 0.05, "RE {re}");
    let chart: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("chart.json")).unwrap()).unwrap();
    assert_eq!(chart["kind"], "heatmap");
    assert_eq!(chart["shape"], serde_json::json!([16, 16]));
    assert!(std::fs::read_to_string(out.join("rounds.csv"))
        .unwrap()
        .starts_with("round,global_loss"));
}

#[test]
fn query_scheme_oracle_is_exact() {
    let o = run(&[
        "query",
        "--chart",
        "stacked-week",
        "--sim",
        "--records",
        "3000",
        "--oracle",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(oracle_re(&stderr(&o)), 0.0);
    let chart: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(chart["kind"], "stacked_histogram");
}

/// CSV with the wall-clock columns removed.
fn stable_columns(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let keep: Vec<usize> = (0..header.len())
        .filter(|&i| !header[i].ends_with("_ms"))
        .collect();
    std::iter::once(header.iter().map(|s| s.to_string()).collect::<Vec<_>>())
        .chain(lines.map(|l| l.split(',').map(str::to_string).collect()))
        .map(|row: Vec<String>| keep.iter().map(|&i| row[i].clone()).collect())
        .collect()
}

fn png_dims(path: &Path) -> (u32, u32) {
    let bytes = std::fs::read(path).unwrap();
    assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n");
    let w = u32::from_be_bytes(bytes[16..20].try_into().unwrap());
    let h = u32::from_be_bytes(bytes[20..24].try_into().unwrap());
    (w, h)
}

#[test]
fn sweep_csv_is_deterministic_and_diff_maps_match_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec![
            "--seed",
            "7",
            "sweep",
            "--records",
            "2000",
            "--seeds",
            "2",
            "--out",
            out.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        let o = run(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let rounds = [
        "--axis", "rounds", "--grid", "2,4,8", "--preset", "low", "--epochs", "1",
    ];
    let a = sweep("a", &rounds);
    let b = sweep("b", &rounds);
    let rows = stable_columns(&a.join("sweep.csv"));
    assert_eq!(rows.len(), 1 + 3, "header plus one row per grid point");
    assert_eq!(rows, stable_columns(&b.join("sweep.csv")));
    for f in ["trend_re.png", "trend_jsd.png"] {
        assert_eq!(png_dims(&a.join(f)), (640, 400));
    }

    let g = sweep(
        "g",
        &[
            "--axis",
            "granularity",
            "--grid",
            "4,12",
            "--chart",
            "heatmap",
            "--preset",
            "low",
            "--rounds",
            "3",
        ],
    );
    assert_eq!(stable_columns(&g.join("sweep.csv")).len(), 3);
    assert_eq!(png_dims(&g.join("diff_granularity_4.png")), (4, 4));
    assert_eq!(png_dims(&g.join("diff_granularity_12.png")), (12, 12));
}

#[test]
fn gen_writes_a_loadable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("shards");
    let o = run(&[
        "--clients",
        "6",
        "gen",
        "--out",
        out.to_str().unwrap(),
        "--records",
        "1200",
        "--alpha",
        "0.5",
        "--affinity",
        "weekdays",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    let clients = manifest["clients"].as_array().unwrap();
    assert_eq!(clients.len(), 6);
    assert_eq!(
        clients
            .iter()
            .map(|c| c["records"].as_u64().unwrap())
            .sum::<u64>(),
        1200
    );
    // Same seed, same shards.
    let again = dir.path().join("again");
    run(&[
        "--clients",
        "6",
        "gen",
        "--out",
        again.to_str().unwrap(),
        "--records",
        "1200",
        "--alpha",
        "0.5",
        "--affinity",
        "weekdays",
    ]);
    for i in 1..=6 {
        let f = format!("client_{i}.csv");
        assert_eq!(
            std::fs::read(out.join(&f)).unwrap(),
            std::fs::read(again.join(&f)).unwrap()
        );
    }
}

#[test]
fn too_few_clients_has_its_own_exit_code() {
    let o = run(&[
        "--clients",
        "3",
        "query",
        "--chart",
        "histogram",
        "--sim",
        "--records",
        "600",
    ]);
    assert_eq!(o.status.code(), Some(6), "{}", stderr(&o));
}
