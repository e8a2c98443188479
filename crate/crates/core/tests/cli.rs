use std::path::Path;
use std::process::{Command, Output};

fn dgm_audit(args: &[&str], cache: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dgm-audit"))
        .args(args)
        .env("DGM_CACHE_DIR", cache)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "status {:?}\n{}", out.status, String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn fixtures_retrieve_diagnose_cascade() {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p).to_str().unwrap().to_string();
    let cache = dir.path().join("cache");
    ok(&dgm_audit(&["fixtures", "--out", &d("data"), "--classes", "2", "--per-class", "3", "--resolution", "1"], &cache));
    let manifest = d("data/synthetic.jsonl");

    let config = format!(
        r#"
name = "cli"
manifest = "{manifest}"
output = "{out}"
families = ["dgm", "hks"]

[aggregation]
kind = "pooled"

[cascade]
runs = [
  {{ name = "dgm", table = "out/retrieval_cli.csv", family = "dgm", aggregation = "pooled" }},
  {{ name = "hks", table = "out/retrieval_cli.csv", family = "hks", aggregation = "pooled" }},
]
deltas = [{{ name = "dgm_minus_hks", minuend = "dgm", subtrahend = "hks" }}]
"#,
        out = d("out")
    );
    std::fs::write(dir.path().join("run.toml"), config).unwrap();
    let run = d("run.toml");

    let stdout = ok(&dgm_audit(&["retrieve", "--config", &run], &cache));
    assert!(stdout.contains("| config"), "{stdout}");
    let csv = std::fs::read_to_string(dir.path().join("out/retrieval_cli.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("config,family,aggregation,policy,map"));
    assert_eq!(lines.len(), 3);
    assert!(std::fs::read_dir(cache.join("dgm")).unwrap().count() == 6);

    // A second run is served from the cache and writes the same bytes.
    ok(&dgm_audit(&["retrieve", "--config", &run], &cache));
    assert_eq!(csv, std::fs::read_to_string(dir.path().join("out/retrieval_cli.csv")).unwrap());

    ok(&dgm_audit(&["diagnose", "persistence", "--config", &run], &cache));
    assert!(dir.path().join("out/ph_diagnostic.csv").exists());
    assert!(dir.path().join("out/ph_diagnostic.md").exists());

    let cascade = ok(&dgm_audit(&["audit-cascade", "--config", &run], &cache));
    assert!(cascade.contains("dgm_minus_hks"), "{cascade}");
}

#[test]
fn unknown_diagnostic_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dgm_audit(&["diagnose", "nonsense", "--output", dir.path().to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("soft_voronoi") && err.contains("csas"), "{err}");
}

#[test]
fn bad_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "name = \"x\"\nfamilys = [\"dgm\"]\n").unwrap();
    let out = dgm_audit(&["extract", "--config", p.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("familys"));
}
