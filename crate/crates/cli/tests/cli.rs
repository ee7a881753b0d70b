use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use udkf::mle::{likelihood, Engine};
use udkf::trajectory::import;

fn udkf(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_udkf")).args(args).arg("--out").arg(out).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn verify_lemma_passes_and_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let (oa, ob) = (udkf(&["verify-lemma"], &a), udkf(&["verify-lemma"], &b));
    assert_eq!(code(&oa), 0, "{}", String::from_utf8_lossy(&oa.stderr));
    assert_eq!(oa.stdout, ob.stdout);
    assert!(String::from_utf8_lossy(&oa.stdout).contains("261.7778"));
    let ja = fs::read_to_string(a.join("verify_lemma.json")).unwrap();
    let jb = fs::read_to_string(b.join("verify_lemma.json")).unwrap();
    assert_eq!(ja, jb.replace(b.to_str().unwrap(), a.to_str().unwrap()));
    let doc: serde_json::Value = serde_json::from_str(&ja).unwrap();
    assert_eq!(doc["provenance"]["experiment"], "verify-lemma");
    assert_eq!(doc["provenance"]["config"]["seed"], 1);
}

#[test]
fn usage_and_validation_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&udkf(&["monte-carlo", "--delta", "1e-2,x"], &out)), 2);
    assert_eq!(code(&udkf(&["monte-carlo", "--replications", "0"], &out)), 2);
    assert_eq!(code(&udkf(&["scan", "--engine", "fast"], &out)), 2);
    assert_eq!(code(&udkf(&["no-such-command"], &out)), 2);
    let cfg = write_config(dir.path(), "seeed = 3\n");
    let o = udkf(&["verify-lemma", "--config", &cfg], &out);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("seeed"));
    assert_eq!(code(&udkf(&["filter-run"], &out)), 2);
}

#[test]
fn simulate_then_filter_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(
        dir.path(),
        "[simulate]\nmodel = { kind = \"ill_conditioned\", delta = 1e-3 }\ntheta = [7.0]\nsteps = 300\n",
    );
    assert_eq!(code(&udkf(&["simulate", "--config", &cfg, "--seed", "12"], &out)), 0);
    let traj_csv = out.join("trajectory.csv");
    let o = udkf(&["filter-run", "--input", traj_csv.to_str().unwrap()], &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let traj = import(&traj_csv).unwrap();
    assert_eq!(traj.seed, 12);
    let model = traj.model.build().unwrap();
    let expected = likelihood(model.as_ref(), &traj.measurements, Engine::Ud, &[7.0]).unwrap().loglik;

    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("filter_run.json")).unwrap()).unwrap();
    let reported = doc["results"]["loglik"].as_f64().unwrap();
    assert!((reported - expected).abs() <= 1e-12 * (1.0 + expected.abs()));

    let rows = csv_rows(&out.join("filter_run.csv"));
    assert_eq!(rows.len(), 300);
    let summed: f64 = rows.iter().map(|r| r.last().unwrap().parse::<f64>().unwrap()).sum();
    assert!((summed - expected).abs() <= 1e-12 * (1.0 + expected.abs()), "{summed} vs {expected}");
}

#[test]
fn empty_record_gives_a_header_only_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(dir.path(), "[simulate]\nsteps = 0\n");
    assert_eq!(code(&udkf(&["simulate", "--config", &cfg], &out)), 0);
    let input = out.join("trajectory.csv");
    assert_eq!(code(&udkf(&["filter-run", "--input", input.to_str().unwrap()], &out)), 0);
    let text = fs::read_to_string(out.join("filter_run.csv")).unwrap();
    assert_eq!(text, "k,x1,x2,x3,dx1_dtheta1,dx2_dtheta1,dx3_dtheta1,loglik_term\n");
}

#[test]
fn parameter_free_model_has_zero_sensitivity_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(
        dir.path(),
        "[simulate]\nmodel = { kind = \"random_affine\", seed = 4, n = 3, m = 2, q = 2, p = 2, slope = 0.0 }\ntheta = [0.1, 0.2]\nsteps = 40\n",
    );
    assert_eq!(code(&udkf(&["simulate", "--config", &cfg], &out)), 0);
    let input = out.join("trajectory.csv");
    assert_eq!(code(&udkf(&["filter-run", "--input", input.to_str().unwrap()], &out)), 0);
    let mut r = csv::Reader::from_path(out.join("filter_run.csv")).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    let sens: Vec<usize> = (0..header.len()).filter(|&i| header[i].starts_with("dx")).collect();
    assert_eq!(sens.len(), 6);
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 40);
    for row in rows {
        for &i in &sens {
            assert_eq!(row[i].parse::<f64>().unwrap(), 0.0);
        }
    }
}

#[test]
fn malformed_measurements_name_the_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(dir.path(), "[simulate]\nsteps = 3\n");
    assert_eq!(code(&udkf(&["simulate", "--config", &cfg], &out)), 0);
    let input = out.join("trajectory.csv");
    let text = fs::read_to_string(&input).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<&str> = lines[2].split(',').collect();
    cells[2] = "abc";
    lines[2] = cells.join(",");
    fs::write(&input, lines.join("\n") + "\n").unwrap();
    let o = udkf(&["filter-run", "--input", input.to_str().unwrap()], &out);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("row 2, column z2"), "{err}");
}

#[test]
fn single_replication_report_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[monte_carlo]\nsteps = 200\n");
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = udkf(&["monte-carlo", "--config", &cfg, "--replications", "1", "--delta", "1e-2,1e-6"], &out);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["monte_carlo_replications.csv", "monte_carlo_summary.csv", "monte_carlo_mape.csv", "monte_carlo.gp"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let summary = csv_rows(&a.join("monte_carlo_summary.csv"));
    assert_eq!(summary.len(), 4);
    assert_eq!(summary[0][..2], ["1e-2".to_string(), "ud".to_string()]);
}

#[test]
fn scan_table_has_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scan");
    let cfg = write_config(dir.path(), "[scan]\nsteps = 1000\n");
    let o = udkf(&["scan", "--config", &cfg], &out);
    assert_ne!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("scan.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 41);
    assert_eq!(lines[0], "gamma1,ud_neg_loglik,ud_neg_grad,ud_status,conv_neg_loglik,conv_neg_grad,conv_status");
    assert!(lines[1].starts_with("1e-5,"));
    assert!(out.join("scan.gp").exists() && out.join("scan.json").exists());
}
