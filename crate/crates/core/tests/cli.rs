use std::path::Path;
use std::process::{Command, Output};

fn pcap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcap")).args(args).output().unwrap()
}

fn json_lines(out: &Output) -> Vec<serde_json::Value> {
    String::from_utf8_lossy(&out.stdout).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn path_files(dir: &Path, n: usize) -> (String, String) {
    let g = dir.join("path.txt");
    let d = dir.join("omega.txt");
    let out = pcap(&["gen", "path", &n.to_string(), "-o", g.to_str().unwrap()]);
    assert!(out.status.success());
    let omega: String = (1..n).map(|i| format!("{i}\n")).collect();
    std::fs::write(&d, omega).unwrap();
    (g.to_str().unwrap().to_string(), d.to_str().unwrap().to_string())
}

#[test]
fn gen_writes_graph_text() {
    let out = pcap(&["gen", "cycle", "4"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("pgraph v1\n"));
    assert_eq!(text.lines().filter(|l| l.starts_with("e ")).count(), 4);
}

#[test]
fn cap_on_a_path() {
    let dir = tempfile::tempdir().unwrap();
    let (g, _) = path_files(dir.path(), 4);
    let out = pcap(&["cap", "-g", &g, "-p", "3", "-A", "0", "-B", "4"]);
    assert!(out.status.success());
    let v = &json_lines(&out)[0];
    assert!((v["capacity"].as_f64().unwrap() - 4f64.powi(-2)).abs() < 1e-10);
    assert!((v["potential"]["1"].as_f64().unwrap() - 0.75).abs() < 1e-8);
}

#[test]
fn isocap_and_eig_on_a_domain() {
    let dir = tempfile::tempdir().unwrap();
    let (g, d) = path_files(dir.path(), 4);
    let out = pcap(&["isocap", "S", "-g", &g, "-d", &d, "-p", "2"]);
    assert!(out.status.success());
    let lines = json_lines(&out);
    assert_eq!(lines.len(), 2);
    assert!((lines[0]["value"].as_f64().unwrap() - 0.25).abs() < 1e-10);
    let out = pcap(&["eig", "steklov", "-g", &g, "-d", &d, "-p", "2"]);
    assert!(out.status.success());
    assert!((json_lines(&out)[0]["value"].as_f64().unwrap() - 0.5).abs() < 1e-10);
}

#[test]
fn coarea_reports_holding_checks() {
    let dir = tempfile::tempdir().unwrap();
    let (g, d) = path_files(dir.path(), 3);
    let out = pcap(&["coarea", "-g", &g, "-d", &d, "-p", "1.5", "-a", "2", "--random-f", "5"]);
    assert!(out.status.success());
    let lines = json_lines(&out);
    assert_eq!(lines.len(), 5);
    assert!(lines.iter().all(|l| l["holds"] == true));
}

#[test]
fn verify_small_config_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "p_grid = [1.5, 3.0]\ngraphs = [\"path(3)\", \"cycle(4)\"]\n[[infinite]]\nfamily = \"half-line\"\nradii = [2, 3]\n").unwrap();
    let report = dir.path().join("r.jsonl");
    let out = pcap(&["verify", "all", "-c", cfg.to_str().unwrap(), "-o", report.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&report).unwrap();
    let mut lines = text.lines().map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap());
    let header = lines.next().unwrap();
    assert_eq!(header["seed"], 42);
    let reports: Vec<_> = lines.collect();
    assert!(!reports.is_empty());
    assert!(reports.iter().all(|r| r["pass"] == true));
}

#[test]
fn errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "pgraph v1\nv a nope\n").unwrap();
    let out = pcap(&["cap", "-g", bad.to_str().unwrap(), "-p", "2", "-A", "a", "-B", "a"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let (g, _) = path_files(dir.path(), 2);
    assert_eq!(pcap(&["cap", "-g", &g, "-p", "0.5", "-A", "0", "-B", "2"]).status.code(), Some(2));
    assert_eq!(pcap(&["cap", "-g", &g, "-p", "2", "-A", "0", "-B", "9"]).status.code(), Some(2));
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "bogus = 1\n").unwrap();
    assert_eq!(pcap(&["verify", "all", "-c", cfg.to_str().unwrap()]).status.code(), Some(2));
}
