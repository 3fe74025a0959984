use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dmn_core::io;

const RVE1: &str = "0.5861,0.3521,0.0618,0.05447,-0.0172,-0.0159";

fn dmn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = dmn(args);
    assert!(
        out.status.success(),
        "dmn {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_path(p: &Path, steps: usize, d11: f64) {
    let mut text = String::from("step,d11,d22,d33,d12,d23,d31\n");
    for i in 0..steps {
        text += &format!("{},{d11},0,0,0,0,0\n", i + 1);
    }
    fs::write(p, text).unwrap();
}

#[test]
fn usage_errors_exit_with_status_one() {
    assert_eq!(dmn(&["point-sim", "--bogus"]).status.code(), Some(1));
    assert_eq!(dmn(&["frobnicate"]).status.code(), Some(1));
    let out = dmn(&[
        "point-sim",
        "--bundle",
        "/nonexistent/b.json",
        "--orientation",
        RVE1,
        "--vf",
        "0.2",
        "--path",
        "/nonexistent/p.csv",
        "--out",
        "/tmp/x.csv",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(dmn(&["--help"]).status.success());
}

#[test]
fn anchors_bundle_point_sim_and_surface() {
    let dir = tempfile::tempdir().unwrap();
    let anchors = dir.path().join("anchors");
    ok(&["gen-anchors", "--teacher-seed", "3", "--out", s(&anchors), "--layers", "4", "--samples", "20"]);
    for i in 1..=4 {
        assert!(anchors.join(format!("teacher_{i}.json")).exists());
        let (data, desc) = io::load_dataset(&anchors.join(format!("anchor_{i}.csv"))).unwrap();
        assert_eq!((data.train.len(), data.test.len()), (16, 4));
        assert!(desc.is_some());
    }
    assert!(anchors.join("manifest.json").exists());

    let bundle = dir.path().join("bundle.json");
    // no trained networks yet
    assert_eq!(dmn(&["transfer-fit", "--anchors", s(&anchors), "--out", s(&bundle)]).status.code(), Some(1));
    ok(&["transfer-fit", "--anchors", s(&anchors), "--out", s(&bundle), "--use-teachers"]);
    assert!(io::load_bundle(&bundle).is_ok());

    let path = dir.path().join("path.csv");
    write_path(&path, 10, 5e-4);
    let out = dir.path().join("rve1.csv");
    ok(&[
        "point-sim",
        "--bundle",
        s(&bundle),
        "--orientation",
        RVE1,
        "--vf",
        "0.194",
        "--path",
        s(&path),
        "--out",
        s(&out),
        "--control",
        "uniaxial-x",
    ]);
    let text = fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 11);
    let last: Vec<f64> = rows[10].split(',').map(|x| x.parse().unwrap()).collect();
    assert!((last[1] - 5e-3).abs() < 1e-15);
    assert!(last[7] > 0.0);
    // lateral stresses vanish under uniaxial control
    assert!(last[8].abs() < 1e-8 * last[7]);

    let phases = dir.path().join("phases.json");
    fs::write(
        &phases,
        r#"{"fiber": {"law": "elastic", "e": 72000.0, "nu": 0.2}, "matrix": {"law": "elastic", "e": 1616.0, "nu": 0.3545}}"#,
    )
    .unwrap();
    let surf = dir.path().join("surface.csv");
    ok(&[
        "modulus-surface",
        "--net",
        s(&anchors.join("teacher_3.json")),
        "--phases",
        s(&phases),
        "--out",
        s(&surf),
        "--n-theta",
        "5",
        "--n-phi",
        "4",
    ]);
    let text = fs::read_to_string(&surf).unwrap();
    assert_eq!(text.lines().count(), 1 + 20);
    assert!(manifest_exists(&surf));
}

fn manifest_exists(p: &Path) -> bool {
    let mut name = p.file_name().unwrap().to_os_string();
    name.push(".manifest.json");
    p.with_file_name(name).exists()
}

#[test]
fn train_with_zero_epochs_returns_init() {
    let dir = tempfile::tempdir().unwrap();
    let anchors = dir.path().join("a");
    ok(&["gen-anchors", "--teacher-seed", "1", "--out", s(&anchors), "--layers", "3", "--samples", "10"]);
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"epochs": 0}"#).unwrap();
    let init = anchors.join("teacher_1.json");
    let out = dir.path().join("net.json");
    ok(&[
        "train",
        "--data",
        s(&anchors.join("anchor_1.csv")),
        "--init",
        s(&init),
        "--config",
        s(&cfg),
        "--out",
        s(&out),
    ]);
    let (a, _) = io::load_network(&init).unwrap();
    let (b, prov) = io::load_network(&out).unwrap();
    assert_eq!(a, b);
    assert!(prov.train_config_hash.is_some());
    assert!(prov.anchor_descriptor.is_some());
    assert!(dir.path().join("net_history.csv").exists());
}

#[test]
fn full_pipeline_with_transfer_chain() {
    let dir = tempfile::tempdir().unwrap();
    let anchors = dir.path().join("anchors");
    ok(&["gen-anchors", "--teacher-seed", "7", "--out", s(&anchors), "--layers", "4", "--samples", "50"]);
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"epochs": 20, "lr0": 0.5, "seed": 2}"#).unwrap();
    let mut init = "random".to_string();
    for i in 1..=4 {
        let out = anchors.join(format!("trained_{i}.json"));
        ok(&[
            "train",
            "--data",
            s(&anchors.join(format!("anchor_{i}.csv"))),
            "--init",
            &init,
            "--config",
            s(&cfg),
            "--out",
            s(&out),
            "--layers",
            "4",
        ]);
        init = s(&out).to_string();
    }
    let bundle = dir.path().join("bundle.json");
    ok(&["transfer-fit", "--anchors", s(&anchors), "--out", s(&bundle)]);
    let path = dir.path().join("path.csv");
    write_path(&path, 5, 1e-3);
    let out = dir.path().join("sim.csv");
    ok(&[
        "--threads", "2", "point-sim", "--bundle", s(&bundle), "--orientation", RVE1, "--vf", "0.2", "--path", s(&path), "--out",
        s(&out),
    ]);
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 6);
}

#[test]
fn fe_sim_writes_outputs_and_restarts_identically() {
    let dir = tempfile::tempdir().unwrap();
    let anchors = dir.path().join("anchors");
    ok(&["gen-anchors", "--teacher-seed", "5", "--out", s(&anchors), "--layers", "3", "--samples", "10"]);
    let bundle = dir.path().join("bundle.json");
    ok(&["transfer-fit", "--anchors", s(&anchors), "--out", s(&bundle), "--use-teachers"]);
    let mesh = dir.path().join("mesh.txt");
    ok(&["box-mesh", "--divisions", "2,1,1", "--lengths", "2,1,1", "--out", s(&mesh)]);
    let micro = dir.path().join("micro.csv");
    fs::write(
        &micro,
        format!("elem,axx,ayy,azz,axy,ayz,azx,vf\n1,{RVE1},0.194\n2,0.1353,0.8036,0.0611,0.1504,-0.009521,-0.005788,0.24\n"),
    )
    .unwrap();
    let scenario = |t_end: f64| {
        format!(
            r#"{{"dt": 1e-8, "t_end": {t_end:e}, "output_every": 5,
                "boundary": [{{"set": "xmin", "type": "velocity", "components": [0, 1, 2], "value": 0.0}},
                             {{"set": "xmax", "type": "velocity", "components": [0], "value": 100.0}}],
                "reaction_sets": ["xmin", "xmax"]}}"#
        )
    };
    let full = dir.path().join("full.json");
    let half = dir.path().join("half.json");
    fs::write(&full, scenario(2e-7)).unwrap();
    fs::write(&half, scenario(1e-7)).unwrap();

    let run = |scen: &Path, out: &Path, restart: Option<&Path>| {
        let mut args = vec![
            "fe-sim", "--bundle", s(&bundle), "--mesh", s(&mesh), "--micro", s(&micro), "--scenario", s(scen), "--out", s(out),
        ];
        if let Some(r) = restart {
            args.extend(["--restart", s(r)]);
        }
        ok(&args);
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    run(&full, &a, None);
    run(&half, &b, None);
    run(&full, &c, Some(&b.join("snapshot.json")));
    assert_eq!(
        fs::read_to_string(a.join("snapshot.json")).unwrap(),
        fs::read_to_string(c.join("snapshot.json")).unwrap()
    );
    let hist = fs::read_to_string(a.join("history.csv")).unwrap();
    assert!(hist.lines().next().unwrap().contains("xmax_rx"));
    assert_eq!(hist.lines().count(), 1 + 5);
    assert!(a.join("stress_000020.csv").exists());
    assert!(a.join("displacement_000020.csv").exists());
    assert!(a.join("manifest.json").exists());

    // corrupt microstructure: bad trace on line 3
    fs::write(&micro, format!("elem,axx,ayy,azz,axy,ayz,azx,vf\n1,{RVE1},0.194\n2,0.5,0.5,0.5,0,0,0,0.24\n")).unwrap();
    let out = dmn(&[
        "fe-sim", "--bundle", s(&bundle), "--mesh", s(&mesh), "--micro", s(&micro), "--scenario", s(&full), "--out",
        s(&dir.path().join("d")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":3:"));
}
