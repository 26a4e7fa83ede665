//! Persistent file formats: instances, weights, traces, manifests.
//!
//! Every format is self-describing JSON (or JSON lines for streams) with an
//! explicit `schema_version`; loaders refuse mismatched schemas. Output
//! files carry the digest of the run manifest that produced them.

use crate::bound::Bound;
use crate::engine::{GbdTrace, TraceFinal, TraceRow};
use crate::graph::EDGE_ORDER_TAG;
use crate::nn::{ArchDescriptor, NetParams};
use crate::problem::{
    build_case_study1_with_cap, CaseStudyCoefficients, InstanceKind, ProblemInstance,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const INSTANCE_SCHEMA: &str = "gbd.instance/1";
pub const WEIGHTS_SCHEMA: &str = "gbd.weights/1";
pub const DATASET_SCHEMA: &str = "gbd.dataset/1";
pub const TRACE_SCHEMA: &str = "gbd.trace/1";
pub const MANIFEST_SCHEMA: &str = "gbd.manifest/1";
pub const CUTS_SCHEMA: &str = "gbd.cuts/1";

#[derive(Debug, thiserror::Error)]
pub enum SchemaError {
    #[error("schema mismatch in {path}: found {found}, expected {expected}")]
    Version {
        path: String,
        found: String,
        expected: &'static str,
    },
    #[error("unknown instance kind {0:?}")]
    UnknownKind(String),
    #[error("weights incompatible: {0}")]
    WeightsMismatch(String),
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },
    #[error("i/o on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Problem(#[from] crate::problem::ProblemError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SchemaError + '_ {
    move |source| SchemaError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

pub fn file_digest(path: &Path) -> Result<String, SchemaError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(sha256_hex(&bytes))
}

// ---------------------------------------------------------------------------
// Instance files
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct InstanceFile {
    pub schema_version: String,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest_digest: Option<String>,
    pub c: [u32; 5],
    pub box_cap: f64,
    pub m: usize,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub s: usize,
    pub k_mat: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
}

pub fn save_instance(
    inst: &ProblemInstance,
    path: &Path,
    manifest_digest: Option<&str>,
) -> Result<(), SchemaError> {
    let (c, box_cap) = match &inst.kind {
        InstanceKind::CaseStudy1 { c, box_cap } => (c.as_array(), *box_cap),
        InstanceKind::Synthetic => {
            return Err(SchemaError::Malformed {
                what: "instance",
                detail: "synthetic instances have no file representation".to_string(),
            })
        }
    };
    let file = InstanceFile {
        schema_version: INSTANCE_SCHEMA.to_string(),
        kind: "case_study1".to_string(),
        manifest_digest: manifest_digest.map(str::to_string),
        c,
        box_cap,
        m: inst.m,
        n: inst.n,
        p: inst.p,
        q: inst.q,
        s: inst.s,
        k_mat: (0..inst.s)
            .map(|t| (0..inst.m).map(|j| inst.k_mat[(t, j)]).collect())
            .collect(),
        b: inst.b.iter().copied().collect(),
        x_lo: inst.x_lo.iter().copied().collect(),
        x_hi: inst.x_hi.iter().copied().collect(),
    };
    let json = serde_json::to_string_pretty(&file).expect("instance serializes");
    fs::write(path, json).map_err(io_err(path))
}

pub fn load_instance(path: &Path) -> Result<ProblemInstance, SchemaError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let file: InstanceFile = serde_json::from_str(&text).map_err(|e| SchemaError::Malformed {
        what: "instance",
        detail: e.to_string(),
    })?;
    if file.schema_version != INSTANCE_SCHEMA {
        return Err(SchemaError::Version {
            path: path.display().to_string(),
            found: file.schema_version,
            expected: INSTANCE_SCHEMA,
        });
    }
    if file.kind != "case_study1" {
        return Err(SchemaError::UnknownKind(file.kind));
    }
    let c = CaseStudyCoefficients::new(file.c)?;
    let inst = build_case_study1_with_cap(c, file.box_cap)?;
    // the stored redundant data must agree with the rebuilt instance
    let same_dims = (file.m, file.n, file.p, file.q, file.s)
        == (inst.m, inst.n, inst.p, inst.q, inst.s);
    let same_k = file.k_mat.len() == inst.s
        && file
            .k_mat
            .iter()
            .enumerate()
            .all(|(t, row)| row.iter().enumerate().all(|(j, &v)| v == inst.k_mat[(t, j)]));
    let same_rest = file.b == inst.b.as_slice()
        && file.x_lo == inst.x_lo.as_slice()
        && file.x_hi == inst.x_hi.as_slice();
    if !(same_dims && same_k && same_rest) {
        return Err(SchemaError::Malformed {
            what: "instance",
            detail: "stored data disagrees with the declared kind".to_string(),
        });
    }
    Ok(inst)
}

// ---------------------------------------------------------------------------
// Weights files
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct WeightsFile {
    pub schema_version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest_digest: Option<String>,
    pub arch: ArchDescriptor,
    pub edge_order: String,
    pub params: Vec<f64>,
}

pub fn save_weights(
    params: &NetParams,
    path: &Path,
    manifest_digest: Option<&str>,
) -> Result<(), SchemaError> {
    let file = WeightsFile {
        schema_version: WEIGHTS_SCHEMA.to_string(),
        manifest_digest: manifest_digest.map(str::to_string),
        arch: params.descriptor(),
        edge_order: EDGE_ORDER_TAG.to_string(),
        params: params.to_flat(),
    };
    let json = serde_json::to_string(&file).expect("weights serialize");
    fs::write(path, json).map_err(io_err(path))
}

pub fn load_weights(path: &Path) -> Result<NetParams, SchemaError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let file: WeightsFile = serde_json::from_str(&text).map_err(|e| SchemaError::Malformed {
        what: "weights",
        detail: e.to_string(),
    })?;
    if file.schema_version != WEIGHTS_SCHEMA {
        return Err(SchemaError::Version {
            path: path.display().to_string(),
            found: file.schema_version,
            expected: WEIGHTS_SCHEMA,
        });
    }
    if file.edge_order != EDGE_ORDER_TAG {
        return Err(SchemaError::WeightsMismatch(format!(
            "edge enumeration convention {:?} does not match {:?}",
            file.edge_order, EDGE_ORDER_TAG
        )));
    }
    NetParams::from_flat(&file.arch, &file.params)
        .map_err(|e| SchemaError::WeightsMismatch(e.to_string()))
}

// ---------------------------------------------------------------------------
// Trace files (JSON lines)
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TraceLine {
    Header {
        schema_version: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        manifest_digest: Option<String>,
    },
    Iter(TraceRow),
    Final(TraceFinal),
}

pub fn write_trace(
    trace: &GbdTrace,
    path: &Path,
    manifest_digest: Option<&str>,
) -> Result<(), SchemaError> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    let mut emit = |line: &TraceLine| -> Result<(), SchemaError> {
        writeln!(w, "{}", serde_json::to_string(line).expect("trace serializes"))
            .map_err(io_err(path))
    };
    emit(&TraceLine::Header {
        schema_version: TRACE_SCHEMA.to_string(),
        manifest_digest: manifest_digest.map(str::to_string),
    })?;
    for row in &trace.rows {
        emit(&TraceLine::Iter(row.clone()))?;
    }
    emit(&TraceLine::Final(trace.terminal.clone()))?;
    w.flush().map_err(io_err(path))
}

pub fn read_trace(path: &Path) -> Result<GbdTrace, SchemaError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(f);
    let mut rows = Vec::new();
    let mut terminal = None;
    let mut saw_header = false;
    for line in reader.lines() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TraceLine = serde_json::from_str(&line).map_err(|e| SchemaError::Malformed {
            what: "trace",
            detail: e.to_string(),
        })?;
        match parsed {
            TraceLine::Header { schema_version, .. } => {
                if schema_version != TRACE_SCHEMA {
                    return Err(SchemaError::Version {
                        path: path.display().to_string(),
                        found: schema_version,
                        expected: TRACE_SCHEMA,
                    });
                }
                saw_header = true;
            }
            TraceLine::Iter(row) => rows.push(row),
            TraceLine::Final(f) => terminal = Some(f),
        }
    }
    if !saw_header {
        return Err(SchemaError::Malformed {
            what: "trace",
            detail: "missing header line".to_string(),
        });
    }
    let terminal = terminal.ok_or(SchemaError::Malformed {
        what: "trace",
        detail: "missing final line".to_string(),
    })?;
    Ok(GbdTrace { rows, terminal })
}

// ---------------------------------------------------------------------------
// Cut dumps (JSON lines) for trace replay
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum CutLine {
    Header { schema_version: String },
    Optimality { w: Vec<f64>, beta: f64 },
    Feasibility { v: Vec<f64>, gamma: f64 },
}

pub fn write_cuts(state: &crate::master::MasterState, path: &Path) -> Result<(), SchemaError> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    let mut emit = |line: &CutLine| -> Result<(), SchemaError> {
        writeln!(w, "{}", serde_json::to_string(line).expect("cut serializes"))
            .map_err(io_err(path))
    };
    emit(&CutLine::Header { schema_version: CUTS_SCHEMA.to_string() })?;
    for cut in &state.opt_cuts {
        emit(&CutLine::Optimality { w: cut.w.clone(), beta: cut.beta })?;
    }
    for cut in &state.feas_cuts {
        emit(&CutLine::Feasibility { v: cut.v.clone(), gamma: cut.gamma })?;
    }
    w.flush().map_err(io_err(path))
}

// ---------------------------------------------------------------------------
// Run manifests
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: String,
    pub tool_version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub params: serde_json::Value,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>, params: serde_json::Value) -> RunManifest {
        RunManifest {
            schema_version: MANIFEST_SCHEMA.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            params,
            outputs: Vec::new(),
        }
    }

    /// Digest over the canonical JSON encoding; outputs reference this.
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("manifest serializes").as_bytes())
    }

    pub fn write(&self, path: &Path) -> Result<String, SchemaError> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, json).map_err(io_err(path))?;
        Ok(self.digest())
    }
}

/// Convergence gap helper shared by reporting: treats missing objectives as
/// an open gap.
pub fn relative_gap(value: Option<f64>, reference: Option<f64>) -> f64 {
    match (value, reference) {
        (Some(v), Some(r)) => (v - r).abs() / r.abs().max(1.0),
        _ => f64::INFINITY,
    }
}

/// Serialized bound, re-exported for downstream table writers.
pub fn bound_to_string(b: Bound) -> String {
    b.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::build_case_study1;
    use tempfile::tempdir;

    #[test]
    fn instance_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("instance.json");
        let inst = build_case_study1(CaseStudyCoefficients::NOMINAL).unwrap();
        save_instance(&inst, &path, Some("abc")).unwrap();
        let back = load_instance(&path).unwrap();
        assert_eq!(back.kind, inst.kind);
        assert_eq!(back.e, inst.e);
    }

    #[test]
    fn instance_schema_mismatch_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("instance.json");
        let inst = build_case_study1(CaseStudyCoefficients::NOMINAL).unwrap();
        save_instance(&inst, &path, None).unwrap();
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace(INSTANCE_SCHEMA, "gbd.instance/9");
        fs::write(&path, text).unwrap();
        assert!(matches!(load_instance(&path), Err(SchemaError::Version { .. })));
    }

    #[test]
    fn weights_round_trip_and_mismatch() {
        use rand::SeedableRng;
        let dir = tempdir().unwrap();
        let path = dir.path().join("weights.json");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let params = NetParams::actor(5, &mut rng);
        save_weights(&params, &path, None).unwrap();
        let back = load_weights(&path).unwrap();
        assert_eq!(back, params);

        let text = fs::read_to_string(&path)
            .unwrap()
            .replace(EDGE_ORDER_TAG, "row-major/legacy");
        fs::write(&path, text).unwrap();
        assert!(matches!(
            load_weights(&path),
            Err(SchemaError::WeightsMismatch(_))
        ));
    }

    #[test]
    fn manifest_digest_stable() {
        let m = RunManifest::new("solve", Some(7), serde_json::json!({"mode": "classical"}));
        assert_eq!(m.digest(), m.digest());
        let m2 = RunManifest::new("solve", Some(8), serde_json::json!({"mode": "classical"}));
        assert_ne!(m.digest(), m2.digest());
    }
}
