//! Workload files: the on-disk JSON form of a program.
//!
//! Loading is strict in three layers, each with its own failure class:
//! JSON syntax/shape errors name the offending field path; unknown cost
//! model keys are schema errors too; structural invariant violations
//! (dangling tensors, cycles, …) are reported separately so callers can
//! distinguish malformed files (exit 1) from well-formed but inconsistent
//! programs (exit 2).

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::costsim::CostModel;
use crate::ir::{validate, Program};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: schema error at `{path}`: {message}")]
    Schema {
        file: String,
        path: String,
        message: String,
    },
    #[error("{file}: invariant violations: {detail}")]
    Invalid { file: String, detail: String },
}

impl WorkloadError {
    pub fn exit_code(&self) -> i32 {
        match self {
            WorkloadError::Io { .. } | WorkloadError::Schema { .. } => 1,
            WorkloadError::Invalid { .. } => 2,
        }
    }
}

/// Parse and fully check a workload. `file` is used in error messages only.
pub fn from_str(s: &str, file: &str) -> Result<Program, WorkloadError> {
    let de = &mut serde_json::Deserializer::from_str(s);
    let program: Program =
        serde_path_to_error::deserialize(de).map_err(|e| WorkloadError::Schema {
            file: file.to_string(),
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
    if let Err(e) = CostModel::with_overrides(&program.cost_model) {
        return Err(WorkloadError::Schema {
            file: file.to_string(),
            path: format!("cost_model.{}", e.0),
            message: "unknown cost model field".to_string(),
        });
    }
    let report = validate(&program);
    if !report.ok() {
        return Err(WorkloadError::Invalid {
            file: file.to_string(),
            detail: serde_json::to_string(&report.violations).expect("violations serialize"),
        });
    }
    Ok(program)
}

pub fn load(path: &Path) -> Result<Program, WorkloadError> {
    let s = fs::read_to_string(path).map_err(|e| WorkloadError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    from_str(&s, &path.display().to_string())
}

/// Stable, human-reviewable serialization (pretty, trailing newline).
pub fn to_json(program: &Program) -> String {
    let mut s = serde_json::to_string_pretty(program).expect("programs serialize");
    s.push('\n');
    s
}

pub fn save(program: &Program, path: &Path) -> Result<(), WorkloadError> {
    fs::write(path, to_json(program)).map_err(|e| WorkloadError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::*;

    fn tiny_program() -> Program {
        Program {
            tensors: vec![
                TensorDesc {
                    id: 1,
                    device: Device::Device,
                    elem_size: 8,
                    num_elems: 4,
                    is_scalar: false,
                },
                TensorDesc {
                    id: 2,
                    device: Device::Device,
                    elem_size: 8,
                    num_elems: 4,
                    is_scalar: false,
                },
            ],
            blocks: vec![Block {
                id: 1,
                inputs: vec![ParamBinding::new(0, ParamKind::DevicePtr(1))],
                nodes: vec![
                    Node {
                        id: 1,
                        op: NodeOp::Alloc { tensor: 2 },
                    },
                    Node::kernel(
                        2,
                        2,
                        Opcode::Copy,
                        vec![
                            ParamBinding::new(0, ParamKind::DevicePtr(1)),
                            ParamBinding::new(1, ParamKind::DevicePtr(2)),
                        ],
                        1.0,
                    ),
                ],
                outputs: vec![2],
                scalar_refreshes: vec![],
                post_replay_copies: vec![],
            }],
            iterations: 2,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn roundtrip_preserves_program() {
        let p = tiny_program();
        let s = to_json(&p);
        let q = from_str(&s, "mem").unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn schema_error_names_the_field_path() {
        let bad = r#"{"tensors": [{"id": 1, "device": "warp", "elem_size": 8, "num_elems": 4, "is_scalar": false}], "blocks": [], "iterations": 1, "seed": 0}"#;
        let err = from_str(bad, "bad.json").unwrap_err();
        let WorkloadError::Schema { path, .. } = &err else {
            panic!("want schema error, got {err:?}");
        };
        assert!(path.contains("tensors[0].device"), "path was `{path}`");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn unknown_cost_field_is_a_schema_error() {
        let mut p = tiny_program();
        p.cost_model.insert("flux_capacitor_us".into(), 1.21);
        let err = from_str(&to_json(&p), "m.json").unwrap_err();
        let WorkloadError::Schema { path, .. } = &err else {
            panic!("want schema error, got {err:?}");
        };
        assert_eq!(path, "cost_model.flux_capacitor_us");
    }

    #[test]
    fn invariant_violations_exit_two() {
        let mut p = tiny_program();
        p.blocks[0].outputs.push(999); // undeclared tensor
        let err = from_str(&to_json(&p), "m.json").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("dangling_tensor"), "{err}");
    }
}
