//! Helpers shared by the integration and acceptance suites.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Deterministic two-blob dataset: features 1 and 3 carry the signal.
pub fn write_dataset(dir: &Path) -> (PathBuf, PathBuf) {
    let mut state = 0x2545F4914F6CDD1Du64;
    let mut uniform = move || {
        // xorshift64* — plenty for a fixture.
        state ^= state >> 12;
        state ^= state << 25;
        state ^= state >> 27;
        let bits = state.wrapping_mul(0x2545F4914F6CDD1D);
        (bits >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let mut features = String::from("id,f0,f1,f2,f3,f4\n");
    let mut targets = String::from("id,group\n");
    for i in 0..90 {
        let blob = i % 2;
        let mut row = [0.0f64; 5];
        for v in &mut row {
            *v = uniform();
        }
        if blob == 1 {
            row[1] += 2.5;
            row[3] -= 2.5;
        }
        features.push_str(&format!(
            "s{i:02},{},{},{},{},{}\n",
            row[0], row[1], row[2], row[3], row[4]
        ));
        targets.push_str(&format!("s{i:02},{}\n", if blob == 1 { "dense" } else { "sparse" }));
    }
    let features_path = dir.join("features.csv");
    let targets_path = dir.join("targets.csv");
    std::fs::write(&features_path, features).unwrap();
    std::fs::write(&targets_path, targets).unwrap();
    (features_path, targets_path)
}

pub fn write_config(dir: &Path, out: &str, body: &str) -> PathBuf {
    let path = dir.join(format!("{out}.json"));
    std::fs::write(&path, body.replace("OUT", out)).unwrap();
    path
}

pub const BASE_CONFIG: &str = r#"{
  "seed": 23,
  "output_dir": "OUT",
  "data": {
    "dataset": {
      "features": "features.csv",
      "targets": "targets.csv",
      "target_column": "group",
      "target_kind": "categorical"
    },
    "split": { "embedding_fraction": 0.6 }
  },
  "embedder": { "k": 10, "epochs": 60 },
  "predictor": { "n_perms": 4, "k": 3, "n_trees": 15 }
}"#;

/// Relative path -> file bytes for everything under `root`, with the
/// run-dependent parts (stage timings, report timing field) stripped.
pub fn tree_snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                if rel.starts_with("timings/") {
                    continue;
                }
                let bytes = if rel == "report.json" {
                    let mut v: serde_json::Value =
                        serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
                    v.as_object_mut().unwrap().remove("timings_ms");
                    serde_json::to_vec(&v).unwrap()
                } else {
                    std::fs::read(&path).unwrap()
                };
                out.insert(rel, bytes);
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

pub fn assert_trees_equal(a: &Path, b: &Path) {
    let ta = tree_snapshot(a);
    let tb = tree_snapshot(b);
    let keys_a: Vec<&String> = ta.keys().collect();
    let keys_b: Vec<&String> = tb.keys().collect();
    assert_eq!(keys_a, keys_b, "artifact sets differ");
    for (rel, bytes) in &ta {
        assert_eq!(bytes, &tb[rel], "artifact `{rel}` differs between runs");
    }
}
