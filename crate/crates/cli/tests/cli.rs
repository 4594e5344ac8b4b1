use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_glycontrol"));
    c.env_remove("GLYCONTROL_OUT");
    c
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn synthesize_sat6(out: &Path) -> PathBuf {
    let o = run(&["synthesize", "--model", "bergman", "--preset", "sat6"], out);
    assert!(o.status.success(), "{}", text(&o));
    out.join("gains_bergman_sat6.json")
}

#[test]
fn synthesize_writes_two_finite_gammas() {
    let dir = tempfile::tempdir().unwrap();
    let path = synthesize_sat6(dir.path());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let rules = v["rules"].as_array().unwrap();
    assert_eq!(rules.len(), 2);
    for r in rules {
        assert!(r["gamma"].as_f64().unwrap().is_finite());
        assert_eq!(r["k"]["rows"], 1);
        assert_eq!(r["k"]["cols"], 3);
    }
    assert_eq!(v["mu"], 0.095);
    let report: toml::Table = std::fs::read_to_string(dir.path().join("synthesize_bergman_sat6.toml"))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(report["rule"].as_array().unwrap().len(), 2);
}

#[test]
fn simulate_trace_follows_the_csv_contract() {
    let dir = tempfile::tempdir().unwrap();
    let gains = synthesize_sat6(dir.path());
    let o = run(&["simulate", "--model", "bergman", "--alpha", "1", "--gains", gains.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", text(&o));
    let csv = std::fs::read_to_string(dir.path().join("trace_bergman_sat6_alpha1.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,x1,x2,x3,h1,h2,u_cmd,u_pump,u_applied,v,y,V");
    let mut rows = 0;
    for line in lines {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cols.len(), 12);
        assert!((0.0..=6.0).contains(&cols[7]), "u_pump {}", cols[7]);
        rows += 1;
    }
    assert_eq!(rows, 5001);
}

#[test]
fn verify_accepts_its_own_gains_and_rejects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let gains = synthesize_sat6(dir.path());
    let o = run(&["verify", "--gains", gains.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", text(&o));

    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&gains).unwrap()).unwrap();
    v["rules"][0]["k"]["data"][0] = serde_json::json!(-50.0);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, serde_json::to_string(&v).unwrap()).unwrap();
    let o = run(&["verify", "--gains", bad.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(5), "{}", text(&o));
}

#[test]
fn sweep_has_nine_rows_with_ordered_peaks() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["sweep", "--model", "bergman"], dir.path());
    assert!(o.status.success(), "{}", text(&o));
    let csv = std::fs::read_to_string(dir.path().join("sweep_bergman.csv")).unwrap();
    let rows: Vec<Vec<String>> = csv.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 9);
    for alpha in ["1", "2", "3"] {
        let peaks: Vec<f64> = rows.iter().filter(|r| r[3] == alpha).map(|r| r[5].parse().unwrap()).collect();
        assert_eq!(peaks.len(), 3);
        assert!(peaks[0] >= peaks[1] && peaks[1] >= peaks[2], "{peaks:?}");
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let gains = synthesize_sat6(dir.path());
    let g = gains.to_str().unwrap();
    let outputs = [
        "gains_bergman_sat6.json",
        "synthesize_bergman_sat6.toml",
        "trace_bergman_sat6_alpha2.csv",
        "simulate_bergman_sat6_alpha2.toml",
        "verify_gains_bergman_sat6.toml",
    ];
    let snapshot = || {
        outputs
            .iter()
            .map(|f| std::fs::read(dir.path().join(f)).unwrap())
            .collect::<Vec<_>>()
    };
    let steps = |first: bool| {
        if !first {
            synthesize_sat6(dir.path());
        }
        assert!(run(&["simulate", "--gains", g, "--alpha", "2"], dir.path()).status.success());
        assert!(run(&["verify", "--gains", g], dir.path()).status.success());
    };
    steps(true);
    let a = snapshot();
    steps(false);
    assert_eq!(a, snapshot());
}

#[test]
fn config_file_and_environment_are_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "model = \"bergman\"\npreset = \"sat10\"\n[simulation]\nalpha = 2.0\nt_end = 100.0\n",
    )
    .unwrap();
    let env_out = dir.path().join("from-env");
    let o = bin()
        .args(["--config", cfg.to_str().unwrap(), "simulate"])
        .env("GLYCONTROL_OUT", &env_out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", text(&o));
    let csv = std::fs::read_to_string(env_out.join("trace_bergman_sat10_alpha2.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1002);
}

#[test]
fn failures_map_to_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();

    let o = run(&["synthesize", "--model", "bergman", "--no-such-flag"], out);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    let o = run(&["synthesize", "--model", "glucose"], out);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));

    let o = run(&["synthesize", "--model", "tolic", "--preset", "sat25"], out);
    assert_eq!(o.status.code(), Some(3), "{}", text(&o));
    let bad_cfg = out.join("bad.toml");
    std::fs::write(&bad_cfg, "model = \"bergman\"\nmu_typo = 1.0\n").unwrap();
    let o = run(&["--config", bad_cfg.to_str().unwrap(), "synthesize", "--mu", "0.1"], out);
    assert_eq!(o.status.code(), Some(3), "{}", text(&o));
    let o = run(&["synthesize", "--model", "bergman"], out);
    assert_eq!(o.status.code(), Some(3), "{}", text(&o));

    // A γ cap far below the achievable level leaves nothing feasible.
    let cap_cfg = out.join("cap.toml");
    std::fs::write(&cap_cfg, "model = \"bergman\"\npreset = \"sat6\"\n[synthesis]\ngamma_max = 1.0\n").unwrap();
    let o = run(&["--config", cap_cfg.to_str().unwrap(), "synthesize"], out);
    assert_eq!(o.status.code(), Some(4), "{}", text(&o));
    assert!(text(&o).contains("infeasible"));

    let o = run(&["verify", "--gains", out.join("missing.json").to_str().unwrap()], out);
    assert_eq!(o.status.code(), Some(3), "{}", text(&o));
}
