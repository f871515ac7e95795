//! End-to-end tests of the `voxcell` binary: exit codes, file formats,
//! report schema and manifest reproducibility.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_voxcell")
}

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("voxcell_cli_{}_{}", name, std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Write a tiny all-solid u8 mask grid (2x2x2).
fn write_solid_grid(dir: &Path, name: &str) -> PathBuf {
    let sidecar = dir.join(format!("{name}.raw.json"));
    std::fs::write(
        &sidecar,
        r#"{"dims":[8,8,8],"spacing_mm":[0.5,0.5,0.5],"dtype":"u8","endianness":"little"}"#,
    )
    .unwrap();
    std::fs::write(dir.join(format!("{name}.raw")), vec![1u8; 512]).unwrap();
    sidecar
}

#[test]
fn porosity_of_solid_grid_prints_zero() {
    let dir = workdir("porosity");
    write_solid_grid(&dir, "solid");
    let out = run(&["porosity", "--input", "solid.raw.json"], &dir);
    assert_ok(&out);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "0.0");
}

#[test]
fn unknown_subcommand_exits_2() {
    let dir = workdir("badcmd");
    let out = run(&["frobnicate"], &dir);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_is_json_error_exit_1() {
    let dir = workdir("missing");
    let out = run(&["porosity", "--input", "nope.raw.json"], &dir);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let v: serde_json::Value = serde_json::from_str(stderr.trim()).expect("stderr is JSON");
    assert!(v.get("error").is_some());
}

#[test]
fn segment_thresholds_grayscale_volume() {
    let dir = workdir("segment");
    // 2x2x2 u16 volume, half the voxels above the threshold.
    std::fs::write(
        dir.join("vol.raw.json"),
        r#"{"dims":[2,2,2],"spacing_mm":[1.0,1.0,1.0],"dtype":"u16","endianness":"little"}"#,
    )
    .unwrap();
    let mut bytes = Vec::new();
    for v in [20_000u16, 0, 20_000, 0, 14_500, 0, 20_000, 0] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(dir.join("vol.raw"), bytes).unwrap();
    let out = run(
        &[
            "segment",
            "--input",
            "vol.raw.json",
            "--threshold",
            "14500",
            "--output",
            "mask.raw.json",
        ],
        &dir,
    );
    assert_ok(&out);
    let por = run(&["porosity", "--input", "mask.raw.json"], &dir);
    assert_ok(&por);
    assert_eq!(String::from_utf8_lossy(&por.stdout).trim(), "0.5");
}

#[test]
fn homogenize_solid_grid_reports_isotropic_tensor() {
    let dir = workdir("homog");
    write_solid_grid(&dir, "solid");
    let out = run(
        &[
            "homogenize",
            "--input",
            "solid.raw.json",
            "--bc",
            "pbc",
            "--E-MPa",
            "190000",
            "--nu",
            "0.3",
            "--p",
            "1",
            "--voxels-per-cell",
            "4",
        ],
        &dir,
    );
    assert_ok(&out);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["bc"], "pbc");
    let c11 = v["C_star"][0][0].as_f64().unwrap();
    let c12 = v["C_star"][0][1].as_f64().unwrap();
    let c44 = v["C_star"][3][3].as_f64().unwrap();
    // Isotropic lambda = 109615.38, mu = 73076.92 for E=190000, nu=0.3.
    let lambda = 190_000.0 * 0.3 / (1.3 * 0.4);
    let mu = 190_000.0 / 2.6;
    assert!((c11 - (lambda + 2.0 * mu)).abs() / (lambda + 2.0 * mu) < 1e-6);
    assert!((c12 - lambda).abs() / lambda < 1e-6);
    assert!((c44 - mu).abs() / mu < 1e-6);
    for d in 0..3 {
        let e = v["E_dir"][d].as_f64().unwrap();
        assert!((e - 190_000.0).abs() / 190_000.0 < 1e-6);
    }
    assert!(v["hill_mandel_residual"].as_f64().unwrap() < 1e-6);
}

/// Validate a report against the shipped JSON schema with a minimal
/// schema walker (type/required/properties/items/enum/bounds).
fn validate(schema: &serde_json::Value, value: &serde_json::Value, path: &str) -> Vec<String> {
    let mut errors = Vec::new();
    if let Some(types) = schema.get("type") {
        let allowed: Vec<String> = match types {
            serde_json::Value::String(s) => vec![s.clone()],
            serde_json::Value::Array(a) => a
                .iter()
                .map(|t| t.as_str().unwrap_or_default().to_string())
                .collect(),
            _ => vec![],
        };
        let actual = match value {
            serde_json::Value::Null => "null",
            serde_json::Value::Bool(_) => "boolean",
            serde_json::Value::Number(n) => {
                if n.is_i64() || n.is_u64() {
                    "integer"
                } else {
                    "number"
                }
            }
            serde_json::Value::String(_) => "string",
            serde_json::Value::Array(_) => "array",
            serde_json::Value::Object(_) => "object",
        };
        let matches = allowed
            .iter()
            .any(|t| t == actual || (t == "number" && actual == "integer"));
        if !matches {
            errors.push(format!("{path}: expected {allowed:?}, got {actual}"));
        }
    }
    if let Some(en) = schema.get("enum").and_then(|e| e.as_array()) {
        if !en.contains(value) {
            errors.push(format!("{path}: {value} not in enum"));
        }
    }
    if let Some(obj) = value.as_object() {
        if let Some(req) = schema.get("required").and_then(|r| r.as_array()) {
            for key in req {
                let key = key.as_str().unwrap();
                if !obj.contains_key(key) {
                    errors.push(format!("{path}: missing required key {key}"));
                }
            }
        }
        if let Some(props) = schema.get("properties").and_then(|p| p.as_object()) {
            for (key, sub) in props {
                if let Some(v) = obj.get(key) {
                    errors.extend(validate(sub, v, &format!("{path}/{key}")));
                }
            }
        }
    }
    if let Some(arr) = value.as_array() {
        if let Some(min) = schema.get("minItems").and_then(|m| m.as_u64()) {
            if (arr.len() as u64) < min {
                errors.push(format!("{path}: fewer than {min} items"));
            }
        }
        if let Some(max) = schema.get("maxItems").and_then(|m| m.as_u64()) {
            if (arr.len() as u64) > max {
                errors.push(format!("{path}: more than {max} items"));
            }
        }
        if let Some(items) = schema.get("items") {
            for (i, v) in arr.iter().enumerate() {
                errors.extend(validate(items, v, &format!("{path}/{i}")));
            }
        }
    }
    errors
}

#[test]
fn report_validates_against_shipped_schema() {
    let dir = workdir("schema");
    write_solid_grid(&dir, "solid");
    let out = run(
        &[
            "homogenize",
            "--input",
            "solid.raw.json",
            "--p",
            "1",
            "--voxels-per-cell",
            "4",
            "--output",
            "report.json",
        ],
        &dir,
    );
    assert_ok(&out);
    let schema: serde_json::Value =
        serde_json::from_str(include_str!("../schemas/homogenize_report.schema.json")).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    let errors = validate(&schema, &report, "");
    assert!(errors.is_empty(), "{errors:?}");
}

fn normalize_volatile(text: &str) -> String {
    text.lines()
        .filter(|l| !l.contains("\"timestamp_unix\"") && !l.contains("\"wall_ms\""))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn reports_are_deterministic_apart_from_run_stamp() {
    let dir = workdir("determinism");
    write_solid_grid(&dir, "solid");
    for name in ["a.json", "b.json"] {
        let out = run(
            &[
                "homogenize",
                "--input",
                "solid.raw.json",
                "--p",
                "2",
                "--voxels-per-cell",
                "2",
                "--output",
                name,
            ],
            &dir,
        );
        assert_ok(&out);
    }
    let a = std::fs::read_to_string(dir.join("a.json")).unwrap();
    let b = std::fs::read_to_string(dir.join("b.json")).unwrap();
    assert_eq!(normalize_volatile(&a), normalize_volatile(&b));
}

#[test]
fn rerun_from_manifest_reproduces_results() {
    let dir = workdir("manifest");
    write_solid_grid(&dir, "solid");
    let out = run(
        &[
            "homogenize",
            "--input",
            "solid.raw.json",
            "--p",
            "1",
            "--voxels-per-cell",
            "2",
            "--bc",
            "kubc",
            "--output",
            "first.json",
        ],
        &dir,
    );
    assert_ok(&out);
    // The report embeds the manifest; rerunning from it must reproduce the
    // numbers bit for bit.
    let out = run(
        &[
            "homogenize",
            "--config",
            "first.json",
            "--output",
            "second.json",
        ],
        &dir,
    );
    assert_ok(&out);
    let a = std::fs::read_to_string(dir.join("first.json")).unwrap();
    let b = std::fs::read_to_string(dir.join("second.json")).unwrap();
    assert_eq!(normalize_volatile(&a), normalize_volatile(&b));
}

#[test]
fn vtk_export_parses_with_external_reader() {
    let dir = workdir("vtk");
    let gen = run(
        &[
            "generate",
            "octet",
            "--spacing-um",
            "250",
            "--reps",
            "1,1,1",
            "--output",
            "cell.raw.json",
        ],
        &dir,
    );
    assert_ok(&gen);
    let out = run(
        &[
            "export-vtk",
            "--input",
            "cell.raw.json",
            "--with-tensile",
            "--p",
            "1",
            "--voxels-per-cell",
            "4",
            "--output",
            "cell.vtk",
        ],
        &dir,
    );
    assert_ok(&out);
    // Third-party reader oracle.
    let vtk = vtkio::Vtk::import(dir.join("cell.vtk")).expect("vtkio parses the export");
    match vtk.data {
        vtkio::model::DataSet::ImageData { extent, pieces, .. } => {
            let dims = extent.into_dims();
            assert_eq!(dims, [17, 17, 17]);
            assert_eq!(pieces.len(), 1);
        }
        other => panic!("unexpected dataset {other:?}"),
    }
    // Header fields round-trip the grid metadata.
    let text = std::fs::read_to_string(dir.join("cell.vtk")).unwrap();
    assert!(text.starts_with("# vtk DataFile Version 3.0"));
    assert!(text.contains("DIMENSIONS 17 17 17"));
    assert!(text.contains("SPACING 0.25 0.25 0.25"));
    assert!(text.contains("CELL_DATA 4096"));
    assert!(text.contains("SCALARS alpha double"));
    assert!(text.contains("VECTORS displacement double"));
    assert!(text.contains("SCALARS von_mises double"));
}

#[test]
fn vtk_export_of_unit_grid() {
    let dir = workdir("vtk1");
    std::fs::write(
        dir.join("one.raw.json"),
        r#"{"dims":[1,1,1],"spacing_mm":[1.0,1.0,1.0],"dtype":"u8","endianness":"little"}"#,
    )
    .unwrap();
    std::fs::write(dir.join("one.raw"), vec![1u8]).unwrap();
    let out = run(
        &[
            "export-vtk",
            "--input",
            "one.raw.json",
            "--output",
            "one.vtk",
        ],
        &dir,
    );
    assert_ok(&out);
    let vtk = vtkio::Vtk::import(dir.join("one.vtk")).expect("parses");
    match vtk.data {
        vtkio::model::DataSet::ImageData { pieces, .. } => {
            assert_eq!(pieces.len(), 1);
        }
        other => panic!("unexpected dataset {other:?}"),
    }
    let text = std::fs::read_to_string(dir.join("one.vtk")).unwrap();
    // One cell datum per array.
    assert!(text.contains("CELL_DATA 1"));
}

#[test]
fn empty_ensemble_writes_valid_report() {
    let dir = workdir("ensemble0");
    write_solid_grid(&dir, "solid");
    let out = run(
        &[
            "homogenize",
            "--input",
            "solid.raw.json",
            "--extract-cells",
            "4,4,4",
            "--max-cells",
            "0",
            "--p",
            "1",
            "--voxels-per-cell",
            "2",
            "--output",
            "ens.json",
        ],
        &dir,
    );
    assert_ok(&out);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("ens.json")).unwrap()).unwrap();
    assert_eq!(v["n"], 0);
    assert_eq!(v["moduli"].as_array().unwrap().len(), 0);
    assert_eq!(v["cells"].as_array().unwrap().len(), 0);
}

#[test]
fn generate_is_seed_deterministic() {
    let dir = workdir("gen_seed");
    let defects = r#"{"powder_blob_density":5.0,"blob_radius_mm":[0.1,0.2],"strut_oversize_mm":0.05,"build_axis":"z","rng_seed":0}"#;
    for (name, seed) in [
        ("a.raw.json", "7"),
        ("b.raw.json", "7"),
        ("c.raw.json", "8"),
    ] {
        let out = run(
            &[
                "generate",
                "octet",
                "--spacing-um",
                "250",
                "--reps",
                "1,1,1",
                "--defects",
                defects,
                "--seed",
                seed,
                "--output",
                name,
            ],
            &dir,
        );
        assert_ok(&out);
    }
    let a = std::fs::read(dir.join("a.raw")).unwrap();
    let b = std::fs::read(dir.join("b.raw")).unwrap();
    let c = std::fs::read(dir.join("c.raw")).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}
