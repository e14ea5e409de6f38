use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};
use std::thread;

use serde_json::Value;
use tempfile::TempDir;
use vlmshape_core::disentangle::import_encoders;
use vlmshape_core::io::{read_dataset, write_dataset};
use vlmshape_core::{EmbeddingDataset, Kind};

fn vlmshape(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vlmshape"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Values of one numeric CSV column.
fn column(csv_text: &str, name: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].parse().unwrap()).collect()
}

#[test]
fn noise_free_projected_column_never_decreases() {
    let dir = TempDir::new().unwrap();
    let out = vlmshape(dir.path(), &["shape", "--steps", "200"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let proj = column(&stdout(&out), "projected_reward");
    assert_eq!(proj.len(), 200);
    assert!(proj.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn zero_alpha_leaves_reward_unprojected() {
    let dir = TempDir::new().unwrap();
    let out = vlmshape(dir.path(), &["--alpha", "0", "shape", "--steps", "50", "--noise", "0.01"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let raw = column(&text, "raw_reward");
    let proj = column(&text, "projected_reward");
    for (a, b) in raw.iter().zip(&proj) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn fixed_theta_gates_immediately() {
    let dir = TempDir::new().unwrap();
    let out = vlmshape(dir.path(), &["shape", "--steps", "20", "--theta", "0.0"]);
    assert!(out.status.success());
    assert!(column(&stdout(&out), "gated_reward").iter().all(|&g| g > 0.99));
}

fn write_fixture(dir: &Path) {
    let mut ds = EmbeddingDataset::new(3).unwrap();
    ds.push("robot", Kind::Text, vec![0.0, 0.0, 1.0]).unwrap();
    ds.push("reach", Kind::Text, vec![1.0, 0.0, 1.0]).unwrap();
    ds.push("s0", Kind::Image, vec![0.0, 1.0, 0.0]).unwrap();
    ds.push("f1", Kind::Image, vec![0.5, 1.0, 0.0]).unwrap();
    ds.push("g0", Kind::Image, vec![1.0, 0.0, 0.0]).unwrap();
    write_dataset(&ds, &dir.join("emb.mrvl")).unwrap();
    fs::write(
        dir.join("manifest.json"),
        r#"{"baseline": "robot", "stages": [
            {"instruction": "reach", "start_image": "s0", "goal_image": "g0"}]}"#,
    )
    .unwrap();
}

#[test]
fn shapes_a_dataset_trajectory() {
    let dir = TempDir::new().unwrap();
    write_fixture(dir.path());
    fs::write(dir.path().join("traj.txt"), "s0\n# midpoint\nf1\ng0\ng0\ng0\ng0\n").unwrap();
    let args = [
        "shape",
        "--dataset",
        "emb.mrvl",
        "--manifest",
        "manifest.json",
        "--trajectory",
        "traj.txt",
        "--output",
        "rows.csv",
    ];
    let out = vlmshape(dir.path(), &args);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("rows.csv")).unwrap();
    let proj = column(&text, "projected_reward");
    assert_eq!(proj.len(), 6);
    assert!(proj[0] < proj[1] && proj[1] < proj[2]);
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let transitions: Vec<String> = r.records().map(|rec| rec.unwrap()[7].to_string()).collect();
    assert_eq!(transitions, ["false", "false", "false", "false", "false", "true"]);
}

#[test]
fn missing_manifest_exits_2() {
    let dir = TempDir::new().unwrap();
    write_fixture(dir.path());
    let out = vlmshape(dir.path(), &["shape", "--dataset", "emb.mrvl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("manifest"));

    let out = vlmshape(dir.path(), &["shape", "--dataset", "emb.mrvl", "--manifest", "nope.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nope.json"));
}

#[test]
fn bad_configs_exit_2() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("typo.json"), r#"{"alpah": 0.5}"#).unwrap();
    let out = vlmshape(dir.path(), &["--config", "typo.json", "train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("alpah"));

    let out = vlmshape(dir.path(), &["--alpha", "1.5", "verify"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn calibrate_reports_threshold() {
    let dir = TempDir::new().unwrap();
    let out = vlmshape(dir.path(), &["calibrate", "--noise", "0.005"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["samples"], 10_000);
    assert_eq!(v["quantile"], 0.97);
    assert!(v["theta"].as_f64().unwrap().is_finite());
}

const SMALL_GRID: &str = r#"{"seeds": [0, 1], "calibration_steps": 200,
    "grid": {"size": 5, "max_steps": 40, "episodes": 60}}"#;

#[test]
fn train_is_deterministic() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("cfg.json"), SMALL_GRID).unwrap();
    let a = vlmshape(dir.path(), &["--config", "cfg.json", "--out", "a", "train"]);
    let b = vlmshape(dir.path(), &["--config", "cfg.json", "--out", "b", "train"]);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b));
    for f in ["curve_shaped.csv", "curve_sparse.csv", "train_summary.json"] {
        let fa = fs::read(dir.path().join("a").join(f)).unwrap();
        assert_eq!(fa, fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
    let text = stdout(&a);
    assert!(text.contains("shaped: median episodes to 90% success"));
    assert!(text.contains("sparse: median episodes to 90% success"));
    let curve = fs::read_to_string(dir.path().join("a/curve_shaped.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 2 * 60);
}

#[test]
fn zero_episodes_gives_empty_curves() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("cfg.json"), r#"{"grid": {"episodes": 0}}"#).unwrap();
    let out = vlmshape(dir.path(), &["--config", "cfg.json", "train"]);
    assert!(out.status.success(), "{}", stderr(&out));
    for arm in ["shaped", "sparse"] {
        let curve = fs::read_to_string(dir.path().join(format!("out/curve_{arm}.csv"))).unwrap();
        assert_eq!(curve, "seed,episode,success,steps,return\n");
    }
}

#[test]
fn disentangle_writes_history_and_encoders() {
    let dir = TempDir::new().unwrap();
    fs::write(
        dir.path().join("cfg.json"),
        r#"{"disentangle": {"train": {"epochs_per_stage": 20}}}"#,
    )
    .unwrap();
    let out = vlmshape(dir.path(), &["--config", "cfg.json", "disentangle"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let history = fs::read_to_string(dir.path().join("out/disentangle_history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1 + 3 * 20);
    let enc = import_encoders(&read_dataset(&dir.path().join("out/encoders.mrvl")).unwrap()).unwrap();
    assert_eq!(enc.ws.dim(), (32, 8));
    let summary: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(summary["stages"].as_array().unwrap().len(), 3);
}

/// Checks `value` against the subset of JSON Schema used by the report
/// schema: type, enum, required, properties, additionalProperties, items.
fn conforms(schema: &Value, value: &Value) -> Result<(), String> {
    if let Some(t) = schema.get("type") {
        let types: Vec<&str> = match t {
            Value::String(s) => vec![s.as_str()],
            Value::Array(a) => a.iter().map(|x| x.as_str().unwrap()).collect(),
            _ => unreachable!(),
        };
        let ok = types.iter().any(|t| match *t {
            "object" => value.is_object(),
            "array" => value.is_array(),
            "string" => value.is_string(),
            "boolean" => value.is_boolean(),
            "integer" => value.is_u64() || value.is_i64(),
            "number" => value.is_number(),
            "null" => value.is_null(),
            other => panic!("unsupported type {other}"),
        });
        if !ok {
            return Err(format!("{value} is not {types:?}"));
        }
    }
    if let Some(allowed) = schema.get("enum").and_then(Value::as_array) {
        if !allowed.contains(value) {
            return Err(format!("{value} not in {allowed:?}"));
        }
    }
    if let Some(obj) = value.as_object() {
        let props = schema.get("properties").and_then(Value::as_object);
        for key in schema.get("required").and_then(Value::as_array).into_iter().flatten() {
            if !obj.contains_key(key.as_str().unwrap()) {
                return Err(format!("missing {key}"));
            }
        }
        for (k, v) in obj {
            match props.and_then(|p| p.get(k)) {
                Some(sub) => conforms(sub, v).map_err(|e| format!("{k}: {e}"))?,
                None if schema.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    return Err(format!("unexpected key {k}"))
                }
                None => {}
            }
        }
    }
    if let (Some(items), Some(arr)) = (schema.get("items"), value.as_array()) {
        for (i, v) in arr.iter().enumerate() {
            conforms(items, v).map_err(|e| format!("[{i}]: {e}"))?;
        }
    }
    Ok(())
}

fn report_schema() -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/verify-report.schema.json");
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn verify_passes_and_matches_schema() {
    let dir = TempDir::new().unwrap();
    let out = vlmshape(dir.path(), &["verify", "--report", "report.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report: Value = serde_json::from_str(&stdout(&out)).unwrap();
    conforms(&report_schema(), &report).unwrap();
    assert_eq!(report["passed"], true);
    let names: Vec<&str> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    for n in ["snr", "monotonicity", "gate", "quantile", "round_trip", "grad_check"] {
        assert!(names.contains(&n), "{n}");
    }
    let saved: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(saved, report);
}

#[test]
fn injected_fault_fails_snr() {
    let dir = TempDir::new().unwrap();
    let out = vlmshape(dir.path(), &["verify", "--inject-fault", "alpha-off-by-one"]);
    assert_eq!(out.status.code(), Some(1));
    let report: Value = serde_json::from_str(&stdout(&out)).unwrap();
    conforms(&report_schema(), &report).unwrap();
    assert_eq!(report["fault"], "alpha-off-by-one");
    for c in report["checks"].as_array().unwrap() {
        assert_eq!(c["passed"], c["name"] != "snr", "{}", c["name"]);
    }
    assert!(conforms(&report_schema(), &serde_json::json!({"version": 1})).is_err());
}

/// Serves one canned embedding response and returns the request body.
fn serve_once(body: &'static str) -> (String, thread::JoinHandle<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("http://{}", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream);
        let mut len = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if line == "\r\n" {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                len = v.trim().parse().unwrap();
            }
        }
        let mut req = vec![0; len];
        reader.read_exact(&mut req).unwrap();
        let mut stream = reader.into_inner();
        write!(
            stream,
            "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
            body.len()
        )
        .unwrap();
        String::from_utf8(req).unwrap()
    });
    (addr, handle)
}

#[test]
fn fetch_writes_embedding_file() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("texts.txt"), "open the drawer\n").unwrap();
    fs::write(dir.path().join("frame.png"), [1u8, 2, 3]).unwrap();
    let (addr, server) = serve_once(
        r#"{"dim":2,"vectors":[{"id":"frame.png","values":[0,1]},{"id":"open the drawer","values":[1,0]}]}"#,
    );
    let out = vlmshape(
        dir.path(),
        &["fetch", "--endpoint", &addr, "--texts", "texts.txt", "--images", "frame.png", "--output", "e.mrvl"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let req: Value = serde_json::from_str(&server.join().unwrap()).unwrap();
    assert_eq!(req["items"][1]["image_b64"], "AQID");
    let ds = read_dataset(&dir.path().join("e.mrvl")).unwrap();
    assert_eq!(ds.dim(), 2);
    assert_eq!(ds.entries()[0].kind, Kind::Text);
    assert_eq!(ds.entries()[1].values, vec![0.0, 1.0]);
    assert_eq!(ds.metadata["endpoint"], addr);
}
