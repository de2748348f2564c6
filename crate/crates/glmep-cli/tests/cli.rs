use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::json;

fn glmep(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glmep")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, value: serde_json::Value) -> String {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn header(csv_text: &str) -> &str {
    csv_text.lines().next().unwrap_or("")
}

fn small_se_accuracy(out: &str) -> serde_json::Value {
    json!({
        "experiment": "se_accuracy",
        "seed": 5,
        "output_dir": out,
        "parameters": { "n": 512, "trials": 4, "t_max": 5, "tracking": "flag", "min_success": 0.0 }
    })
}

#[test]
fn unknown_parameter_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", json!({"experiment": "lorenz", "parameters": {"gird": 10}}));
    let o = glmep(&["experiment", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("'gird'"), "{}", stderr(&o));
}

#[test]
fn unknown_top_level_key_and_experiment_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "a.json", json!({"experiment": "lorenz", "sede": 3}));
    let o = glmep(&["experiment", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sede"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), "b.json", json!({"experiment": "fig9"}));
    let o = glmep(&["experiment", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("fig9"));
}

#[test]
fn rerun_reuses_every_cell_and_reproduces_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), "c.json", small_se_accuracy(out.to_str().unwrap()));
    let first = glmep(&["experiment", "--config", &cfg], dir.path());
    assert_eq!(first.status.code(), Some(0), "{}{}", stdout(&first), stderr(&first));
    assert!(stdout(&first).contains("cells computed: 1, reused: 0"));
    let results = fs::read(out.join("results.csv")).unwrap();
    let trials = fs::read(out.join("trials.csv")).unwrap();

    let second = glmep(&["compare", "--config", &cfg], dir.path());
    assert_eq!(second.status.code(), Some(0));
    assert!(stdout(&second).contains("cells computed: 0, reused: 1"), "{}", stdout(&second));
    assert_eq!(fs::read(out.join("results.csv")).unwrap(), results);
    assert_eq!(fs::read(out.join("trials.csv")).unwrap(), trials);
}

#[test]
fn foreign_run_needs_fresh() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), "c.json", small_se_accuracy(out.to_str().unwrap()));
    assert_eq!(glmep(&["experiment", "--config", &cfg], dir.path()).status.code(), Some(0));

    let mut other = small_se_accuracy(out.to_str().unwrap());
    other["seed"] = json!(6);
    let cfg2 = write_config(dir.path(), "d.json", other);
    let refused = glmep(&["experiment", "--config", &cfg2], dir.path());
    assert_eq!(refused.status.code(), Some(2));
    assert!(stderr(&refused).contains("--fresh"));
    let fresh = glmep(&["experiment", "--config", &cfg2, "--fresh"], dir.path());
    assert_eq!(fresh.status.code(), Some(0));
    assert!(stdout(&fresh).contains("cells computed: 1, reused: 0"));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], json!(6));
    assert_eq!(manifest["parameters"]["n"], json!(512));
    assert!(manifest["version"].is_string());
}

#[test]
fn experiment_csv_headers_are_fixed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), "c.json", small_se_accuracy(out.to_str().unwrap()));
    let o = glmep(&["experiment", "--config", &cfg, "--emit-plot-data"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let read = |name: &str| fs::read_to_string(out.join(name)).unwrap();
    assert_eq!(header(&read("results.csv")), "t,mse_se,mse_mc_median,mse_mc_q25,mse_mc_q75,mse_mc_iqr,within_tol");
    assert_eq!(header(&read("trials.csv")), "trial,iter,mse_m,mse_n,v_l,v_r,status");
    assert_eq!(header(&read("plot_data.csv")), "series,x,y");
    assert_eq!(read("results.csv").lines().count(), 6);
    assert!(read("summary.txt").contains("overall: PASS"));
    for line in read("trials.csv").lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 7, "{line}");
        cols[0].parse::<usize>().unwrap();
        cols[1].parse::<usize>().unwrap();
        for c in &cols[2..6] {
            c.parse::<f64>().unwrap();
        }
    }
}

#[test]
fn exit_code_reflects_checks() {
    let dir = tempfile::tempdir().unwrap();
    let pass = write_config(
        dir.path(),
        "p.json",
        json!({"experiment": "lorenz", "output_dir": "p", "parameters": {"grid": 50}}),
    );
    let o = glmep(&["experiment", "--config", &pass], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS order"));
    assert_eq!(header(&fs::read_to_string(dir.path().join("p/lorenz.csv")).unwrap()), "u,L1,L2");

    let fail = write_config(
        dir.path(),
        "f.json",
        json!({"experiment": "lorenz", "output_dir": "f", "parameters": {"grid": 50, "expect": "less_spiky"}}),
    );
    let o = glmep(&["experiment", "--config", &fail], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL order"));
    assert!(stdout(&o).contains("overall: FAIL"));
}

#[test]
fn compare_requires_se_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", json!({"experiment": "lorenz"}));
    let o = glmep(&["compare", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("se_accuracy"));
}

#[test]
fn run_emits_trial_csv() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["run", "--f", "sign", "--delta", "2", "--n", "256", "--iters", "3", "--trials", "2", "--seed", "3"];
    let o = glmep(&args, dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(header(&text), "trial,iter,mse_m,mse_n,v_l,v_r,status");
    assert_eq!(text.lines().count(), 7);
    assert_eq!(stdout(&glmep(&args, dir.path())), text);

    let mut signed = args.to_vec();
    signed.push("--sign-resolved");
    let o = glmep(&signed, dir.path());
    assert_eq!(header(&stdout(&o)), "trial,iter,mse_m,mse_n,v_l,v_r,status,mse_sign_resolved");

    let o = glmep(&["run", "--n", "256", "--snr-db", "40", "--sigma-w2", "1e-4"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn se_classify_threshold_noise_emit_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = glmep(&["se", "--f", "sign", "--delta", "2", "--iters", "4"], dir.path());
    assert_eq!(header(&stdout(&o)), "t,V_l,V_r,mse_pred");
    assert_eq!(stdout(&o).lines().count(), 5);

    let curve = dir.path().join("g.csv");
    let o = glmep(&["classify", "--f", "abs", "--curve", curve.to_str().unwrap()], dir.path());
    assert_eq!(stdout(&o), "f,delta,verdict\nabs,1.1,increasing\n");
    assert_eq!(header(&fs::read_to_string(&curve).unwrap()), "v_r,g");

    let o = glmep(&["threshold", "--f", "abs", "--spectrum", "geometric:beta=20", "--tol", "1e-3"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(header(&stdout(&o)), "family,threshold,bracket_lo,bracket_hi,delta_opt");

    let o = glmep(&["noise", "--spectrum", "geometric:beta=10", "--sigma-w2", "1e-6,1e-7"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(header(&stdout(&o)), "spectrum,sigma_w2,mse,slope");
    assert!(stderr(&o).contains("C = "));
}
