use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use partial_varifold::geometry::{DiscreteShape, TriMesh, Vec3};
use partial_varifold::io::{read_shape, write_shape};

fn pvreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pvreg")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(pvreg(&["synth", "--output", s(&a), "--seed", "4"]).status.success());
    assert!(pvreg(&["synth", "--output", s(&b), "--seed", "4"]).status.success());
    for name in ["full.vtk", "trimmed.vtk", "deformed.vtk", "ground_truth.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let c = dir.path().join("c");
    assert!(pvreg(&["synth", "--output", s(&c), "--seed", "5"]).status.success());
    assert_ne!(fs::read(a.join("deformed.vtk")).unwrap(), fs::read(c.join("deformed.vtk")).unwrap());
}

#[test]
fn distance_on_synthetic_case() {
    let dir = tempfile::tempdir().unwrap();
    let case = dir.path().join("case");
    assert!(pvreg(&["synth", "--output", s(&case)]).status.success());
    let out = pvreg(&[
        "distance",
        "--source",
        s(&case.join("trimmed.vtk")),
        "--target",
        s(&case.join("full.vtk")),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let names: Vec<&str> = text.lines().map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(names, ["varifold_distance", "naive_half", "partial", "partial_normalized"]);
    let partial: f64 = text.lines().nth(2).unwrap().split_whitespace().nth(1).unwrap().parse().unwrap();
    assert_eq!(partial, 0.0);

    let out = pvreg(&[
        "distance",
        "--source",
        s(&case.join("full.vtk")),
        "--target",
        s(&case.join("trimmed.vtk")),
        "--variant",
        "partial",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 1);
    let value: f64 = text.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(value > 0.0);
}

#[test]
fn bad_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"epsilon": -1.0}"#).unwrap();
    let out = pvreg(&["check", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(5), "{}", stderr(&out));

    fs::write(&cfg, r#"{"sigma_w": 1.0, "unknown": 2}"#).unwrap();
    assert_eq!(pvreg(&["check", "--config", s(&cfg)]).status.code(), Some(5));

    let missing = dir.path().join("absent.json");
    assert_eq!(pvreg(&["check", "--config", s(&missing)]).status.code(), Some(3));
    assert_eq!(pvreg(&["check", "--variant", "full"]).status.code(), Some(2));
}

#[test]
fn obj_face_out_of_range_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.obj");
    fs::write(&bad, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\nf 1 2 9\n").unwrap();
    let out = pvreg(&["distance", "--source", s(&bad), "--target", s(&bad)]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("bad.obj:5:"), "{}", stderr(&out));
}

#[test]
fn vtk_without_points_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.vtk");
    fs::write(&bad, "# vtk DataFile Version 3.0\nx\nASCII\nDATASET POLYDATA\n").unwrap();
    let out = pvreg(&["distance", "--source", s(&bad), "--target", s(&bad)]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("POINTS"), "{}", stderr(&out));
}

#[test]
fn mixed_kinds_and_unknown_extension_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let case = dir.path().join("case");
    assert!(pvreg(&["synth", "--output", s(&case)]).status.success());
    let mesh = dir.path().join("m.obj");
    fs::write(&mesh, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
    let out = pvreg(&["distance", "--source", s(&mesh), "--target", s(&case.join("full.vtk"))]);
    assert_eq!(out.status.code(), Some(5));
    let txt = dir.path().join("m.txt");
    fs::write(&txt, "").unwrap();
    assert_eq!(pvreg(&["distance", "--source", s(&txt), "--target", s(&txt)]).status.code(), Some(4));
}

fn tetrahedron(scale: f64) -> DiscreteShape {
    let v = vec![
        Vec3::new(0.0, 0.0, 0.0),
        Vec3::new(scale, 0.0, 0.0),
        Vec3::new(0.0, scale, 0.0),
        Vec3::new(0.0, 0.0, scale),
    ];
    DiscreteShape::from_mesh(TriMesh::new(v, vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]]).unwrap()).unwrap()
}

#[test]
fn mesh_round_trip_and_register() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src.obj");
    let tgt = dir.path().join("tgt.obj");
    let shape = tetrahedron(1.0 / 3.0);
    write_shape(&shape, &src).unwrap();
    write_shape(&tetrahedron(1.2), &tgt).unwrap();
    let back = read_shape(&src).unwrap();
    for (a, b) in back.vertices().iter().zip(shape.vertices()) {
        assert!((a - b).norm() < 1e-9);
    }

    let out_dir = dir.path().join("out");
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"optimizer": {"max_iters": 20}}"#).unwrap();
    let out = pvreg(&[
        "register",
        "--source",
        s(&src),
        "--target",
        s(&tgt),
        "--output",
        s(&out_dir),
        "--config",
        s(&cfg),
        "--variant",
        "partial_normalized",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let deformed = read_shape(&out_dir.join("deformed.obj")).unwrap();
    assert_eq!(deformed.vertices().len(), 4);
    assert!(out_dir.join("frames/frame_010.obj").is_file());
    let log = fs::read_to_string(out_dir.join("register.log")).unwrap();
    assert!(log.contains("variant partial_normalized"));
}
