use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_noether-lab");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn report(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const KERNEL_SCENARIO: &str = r#"
schema = 1
name = "translate"

[families.shift]
q = ["q1 + 3/4"]

[[checks]]
kind = "fundam"
name = "shifted gravity"
primed = { closed_form = "linear", m = 1.0, g = 1.0 }
unprimed = { closed_form = "linear", m = 1.0, g = 1.0 }
family = "shift"
gauge = "-m*g*3/4*t"
constants = { m = 1.0, g = 1.0 }
samples = { lo = -2.0, hi = 2.0, n = 9, dts = [0.5] }
"#;

#[test]
fn bundled_scenarios_set_exit_codes() {
    let ok = run(&["run", "rotation_gravity_2d"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    let text = String::from_utf8_lossy(&ok.stdout);
    assert!(text.contains("PASS  angular-momentum/charge"));

    let detuned = run(&["run", "oscillator_magnetic_detuned"]);
    assert_eq!(detuned.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&detuned.stdout).contains("FAIL  larmor-frame"));
}

#[test]
fn galilean_gravity_passes() {
    let out = run(&["run", "galilean_gravity"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn malformed_file_exits_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "bad.toml", "schema = 1\n[systems.a\nn_dof = 1\n");
    let out = run(&["run", &path]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2"), "{err}");

    let path = write(dir.path(), "expr.toml", "schema = 1\n[systems.a]\nn_dof = 1\nlagrangian = \"v1^2 + * q1\"\n");
    let out = run(&["run", &path]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("systems.a.lagrangian"));

    assert_eq!(run(&["run", "/nonexistent/scenario.toml"]).status.code(), Some(2));
}

#[test]
fn execution_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
schema = 1
[systems.gravity]
n_dof = 1
lagrangian = "m/2*v1^2 - m*g*q1"
constants = { m = 1.0, g = 1.0 }

[[checks]]
kind = "symmetry-op"
system = "gravity"
phase = "m*V*q1"
velocity_cells = 1
grid = { xmin = -5.0, xmax = 5.0, n = 64 }
t0 = 0.5
t1 = 1.0
steps = 10
"#;
    let out = run(&["run", &write(dir.path(), "shift.toml", text)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).contains("ERROR"));
}

#[test]
fn reports_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for p in [&a, &b] {
        let out = run(&["run", "rotation_gravity_2d", "--json", p.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
    }
    let strip = |mut v: serde_json::Value| {
        v.as_object_mut().unwrap().remove("wall_time_s");
        serde_json::to_string(&v).unwrap()
    };
    assert_eq!(strip(report(&a)), strip(report(&b)));

    let out = run(&["run", "rotation_gravity_2d", "--seed", "7", "--json", a.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&a);
    assert_eq!(r["seed"], 7);
    for check in r["checks"].as_array().unwrap() {
        assert_eq!(check["status"], "pass");
        assert!(check["measured"].as_f64().unwrap() <= check["threshold"].as_f64().unwrap());
    }
}

#[test]
fn dump_writes_documented_files() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&["run", "rotation_gravity_2d", "--dump", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let traj = std::fs::read_to_string(out_dir.join("rotation-charge_trajectory.csv")).unwrap();
    assert_eq!(traj.lines().next(), Some("t,q1,q2,v1,v2"));
    assert_eq!(traj.lines().count(), 1002);
    assert!(out_dir.join("report.json").exists());

    let path = write(dir.path(), "kernel.toml", KERNEL_SCENARIO);
    let kdir = dir.path().join("kernel");
    let out = run(&["run", &path, "--dump", kdir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let kernel = std::fs::read_to_string(kdir.join("shifted_gravity_kernel.csv")).unwrap();
    assert_eq!(kernel.lines().next(), Some("x1,x0,re,im"));
    assert_eq!(kernel.lines().count(), 1 + 81);
}

#[test]
fn empty_check_list_gives_report_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "empty.toml", "schema = 1\nname = \"empty\"\n");
    let out_dir = dir.path().join("out");
    let out = run(&["run", &path, "--dump", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let files: Vec<_> = std::fs::read_dir(&out_dir).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(files, vec![std::ffi::OsString::from("report.json")]);
    assert_eq!(report(&out_dir.join("report.json"))["checks"].as_array().unwrap().len(), 0);
}

#[test]
fn listing_and_schema() {
    let out = run(&["list-examples"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for name in [
        "galilean_gravity",
        "rotation_gravity_2d",
        "free_to_gravity",
        "oscillator_magnetic",
        "conserved_operator_gravity",
    ] {
        assert!(text.contains(name), "{name}");
    }
    let out = run(&["print-schema"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("schema = 1"));
}
