use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn predcache(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_predcache"));
    cmd.args(args).env_remove("PREDCACHE_SEED");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

const ABCAC: &str = "a\nb\nc\na\nc\n";

fn abcac_config(dir: &Path, policies: &str) -> String {
    write(dir, "abcac.txt", ABCAC);
    write(
        dir,
        "exp.toml",
        &format!(
            "master_seed = 1\nseeds = 1\ncache_sizes = [2]\npolicies = [{policies}]\n\
             verify = true\n[[workloads]]\nspec = \"file(abcac.txt)\"\n\
             [output]\ncsv = \"out.csv\"\nsummary = \"summary.json\"\n"
        ),
    )
}

#[test]
fn simulate_writes_expected_rows() {
    let dir = TempDir::new().unwrap();
    let cfg = abcac_config(dir.path(), "\"lru\", \"belady\"");
    let o = predcache(&["simulate", "--config", &cfg], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("out.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("trace_id,policy,k,noise,seed,misses,opt,eta,ratio"));
    let lru = rows.iter().find(|r| r.contains(",lru,")).unwrap();
    assert!(lru.contains(",4,3,") && lru.contains("1.333333"), "{lru}");
    let belady = rows.iter().find(|r| r.contains(",belady,")).unwrap();
    assert!(
        belady.contains(",3,3,") && belady.contains("1.000000"),
        "{belady}"
    );
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["bound_failures"], 0);
}

#[test]
fn simulate_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "exp.toml",
        "master_seed = 9\nseeds = 3\ncache_sizes = [4, 8]\n\
         policies = [\"blind-oracle\", \"marker\", \"combine-stoch(lru,blind-oracle,0.1)\"]\n\
         noise = [\"additive(5)\"]\n[[workloads]]\nspec = \"zipf(40,0.9)\"\nlength = 300\n",
    );
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let o = predcache(
            &["simulate", "-c", &cfg, "--csv", out.to_str().unwrap()],
            &[],
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn empty_policy_list_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = abcac_config(dir.path(), "");
    let o = predcache(&["simulate", "--config", &cfg], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("policies"), "{}", stderr(&o));
    assert!(!dir.path().join("out.csv").exists());
}

#[test]
fn bad_field_reports_its_path() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "exp.toml",
        "cache_sizes = [2]\npolicies = [\"lru\"]\n[[workloads]]\nspec = \"zipf(10)\"\nlength = 5\n",
    );
    let o = predcache(&["simulate", "--config", &cfg], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("workloads[0].spec"), "{}", stderr(&o));
}

#[test]
fn env_seed_overrides_config_and_flag_overrides_env() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "exp.toml",
        "master_seed = 1\nseeds = 1\ncache_sizes = [3]\npolicies = [\"random\"]\n\
         [[workloads]]\nspec = \"uniform(20)\"\nlength = 200\n",
    );
    let run = |args: &[&str], envs: &[(&str, &str)]| {
        let path = dir.path().join("o.csv");
        let mut full = vec!["simulate", "-c", &cfg, "--csv", path.to_str().unwrap()];
        full.extend_from_slice(args);
        let o = predcache(&full, envs);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read_to_string(path).unwrap()
    };
    let base = run(&[], &[]);
    let via_env = run(&[], &[("PREDCACHE_SEED", "77")]);
    let via_flag = run(&["--seed", "77"], &[]);
    let both = run(&["--seed", "1"], &[("PREDCACHE_SEED", "77")]);
    assert_ne!(base, via_env);
    assert_eq!(via_env, via_flag);
    assert_eq!(base, both);

    let o = predcache(&["simulate", "-c", &cfg], &[("PREDCACHE_SEED", "x")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("PREDCACHE_SEED"));
}

#[test]
fn verify_reports_bounds_and_passes() {
    let dir = TempDir::new().unwrap();
    let trace = write(dir.path(), "t.txt", ABCAC);
    let log = dir.path().join("log.txt");
    for policy in ["lru", "belady"] {
        let o = predcache(
            &[
                "verify",
                "--trace",
                &trace,
                "-k",
                "2",
                "-p",
                policy,
                "--log",
                log.to_str().unwrap(),
            ],
            &[],
        );
        assert!(o.status.success(), "{}", stderr(&o));
        let out = stdout(&o);
        assert!(out.contains("obj_le_opt_plus_edges"), "{out}");
        let expected = if policy == "lru" {
            "OBJ=4 OPT=3"
        } else {
            "OBJ=3 OPT=3 |E|=0"
        };
        assert!(out.contains(expected), "{out}");
        assert!(!out.contains("FAIL"));
    }
    assert!(log.exists());
}

#[test]
fn verify_prediction_policy_needs_predictions() {
    let o = predcache(
        &[
            "verify",
            "--workload",
            "zipf(30,1.0)",
            "--length",
            "200",
            "-k",
            "4",
            "-p",
            "blind-oracle",
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
    let o = predcache(
        &[
            "verify",
            "--workload",
            "zipf(30,1.0)",
            "--length",
            "200",
            "-k",
            "4",
            "-p",
            "alternating-oracle",
            "--noise",
            "additive(20)",
            "--json",
        ],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let names: Vec<&str> = report["entries"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["name"].as_str().unwrap())
        .collect();
    assert!(
        names.contains(&"three_opt_three_eta") && names.contains(&"inversions"),
        "{names:?}"
    );
}

#[test]
fn oracle_matches_belady_and_guards_length() {
    let dir = TempDir::new().unwrap();
    let small = write(dir.path(), "s.txt", ABCAC);
    let o = predcache(&["oracle", "--trace", &small, "-k", "2"], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "exhaustive belady\n3 3\n");

    let long: String = (0..20).map(|i| format!("{}\n", i % 7)).collect();
    let big = write(dir.path(), "b.txt", &long);
    let o = predcache(&["oracle", "--trace", &big, "-k", "3"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(o.stdout.is_empty());
}

#[test]
fn gen_trace_round_trips_through_verify() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("g.txt");
    let o = predcache(
        &[
            "gen-trace",
            "--workload",
            "cyclic(6)",
            "--length",
            "60",
            "--seed",
            "4",
            "--noise",
            "swaps(3)",
            "-o",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 60);
    assert!(text.lines().all(|l| l.contains(',')));

    let o = predcache(
        &[
            "verify",
            "--trace",
            out.to_str().unwrap(),
            "-k",
            "5",
            "-p",
            "blind-oracle",
        ],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn sweep_eta_writes_curve_and_fit() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "exp.toml",
        "seeds = 2\ncache_sizes = [5]\npolicies = [\"alternating-oracle\"]\n\
         noise = [\"exact\", \"additive(4)\", \"additive(64)\", \"additive(1024)\"]\n\
         [[workloads]]\nspec = \"zipf(60,0.9)\"\nlength = 400\n\
         [output]\ncurve = \"curve.csv\"\nsummary = \"fit.json\"\n",
    );
    let o = predcache(&["sweep-eta", "-c", &cfg], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("fit alternating-oracle"));
    let curve = fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 5);
    let fit: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fit.json")).unwrap()).unwrap();
    assert!(fit["fits"].is_object() || fit["fits"].is_array());
}
