//! JSON system definitions and CSV output.

use std::io::Write;
use std::path::Path;

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::expr::{Expression, ParseError};
use crate::integrate::Trajectory;
use crate::linalg::Matrix;
use crate::systems::{
    state_env, Backing, LinearSystem, MatrixFunction, NonlinearSystem, System, SystemError,
};

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("{path}: {source}")]
    Expression { path: String, source: ParseError },
    #[error("{path}: {source}")]
    System { path: String, source: SystemError },
}

impl LoadError {
    /// JSON path of the offending value, when there is one.
    pub fn json_path(&self) -> Option<&str> {
        match self {
            LoadError::Schema { path, .. }
            | LoadError::Expression { path, .. }
            | LoadError::System { path, .. } => Some(path),
            _ => None,
        }
    }
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> LoadError {
    LoadError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value, LoadError> {
    obj.get(key)
        .ok_or_else(|| schema(format!("$.{key}"), "missing field"))
}

fn array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>, LoadError> {
    v.as_array()
        .ok_or_else(|| schema(path, "expected an array"))
}

fn number(v: &Value, path: &str) -> Result<f64, LoadError> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| schema(path, "expected a finite number"))
}

fn expression(v: &Value, path: &str, env: &[String]) -> Result<Expression, LoadError> {
    let text = v
        .as_str()
        .ok_or_else(|| schema(path, "expected an expression string"))?;
    Expression::parse(text, env).map_err(|source| LoadError::Expression {
        path: path.into(),
        source,
    })
}

/// `dim x dim` grid of expressions at `path`.
fn expression_rows(
    v: &Value,
    path: &str,
    dim: usize,
    env: &[String],
) -> Result<Vec<Expression>, LoadError> {
    let rows = array(v, path)?;
    if rows.len() != dim {
        return Err(schema(
            path,
            format!("expected {dim} rows, found {}", rows.len()),
        ));
    }
    let mut out = Vec::with_capacity(dim * dim);
    for (i, row) in rows.iter().enumerate() {
        let rp = format!("{path}[{i}]");
        let cells = array(row, &rp)?;
        if cells.len() != dim {
            return Err(schema(
                &rp,
                format!("expected {dim} entries, found {}", cells.len()),
            ));
        }
        for (j, cell) in cells.iter().enumerate() {
            out.push(expression(cell, &format!("{rp}[{j}]"), env)?);
        }
    }
    Ok(out)
}

fn matrix(v: &Value, path: &str, dim: usize) -> Result<Matrix, LoadError> {
    let rows = array(v, path)?;
    if rows.len() != dim {
        return Err(schema(
            path,
            format!("expected {dim} rows, found {}", rows.len()),
        ));
    }
    let mut m = Matrix::zeros(dim, dim);
    for (i, row) in rows.iter().enumerate() {
        let rp = format!("{path}[{i}]");
        let cells = array(row, &rp)?;
        if cells.len() != dim {
            return Err(schema(
                &rp,
                format!("expected {dim} entries, found {}", cells.len()),
            ));
        }
        for (j, cell) in cells.iter().enumerate() {
            m[(i, j)] = number(cell, &format!("{rp}[{j}]"))?;
        }
    }
    Ok(m)
}

fn system_error(path: &str) -> impl FnOnce(SystemError) -> LoadError + '_ {
    move |source| LoadError::System {
        path: path.into(),
        source,
    }
}

/// Parses a system definition:
/// `{"type": "linear" | "nonlinear", "dim": n, "label": ..., "entries" | "samples" | "rhs", "jacobian"?}`.
pub fn parse_system(text: &str) -> Result<System, LoadError> {
    let root: Value = serde_json::from_str(text)?;
    let obj = root
        .as_object()
        .ok_or_else(|| schema("$", "expected an object"))?;
    let kind = field(obj, "type")?
        .as_str()
        .ok_or_else(|| schema("$.type", "expected a string"))?;
    let dim = field(obj, "dim")?
        .as_u64()
        .filter(|d| *d >= 1)
        .ok_or_else(|| schema("$.dim", "expected a positive integer"))? as usize;
    let label = match obj.get("label") {
        None => kind.to_string(),
        Some(v) => v
            .as_str()
            .ok_or_else(|| schema("$.label", "expected a string"))?
            .to_string(),
    };
    match kind {
        "linear" => {
            let a = match (obj.get("entries"), obj.get("samples")) {
                (Some(_), Some(_)) => {
                    return Err(schema("$", "give either `entries` or `samples`, not both"))
                }
                (Some(entries), None) => {
                    let env = vec!["t".to_string()];
                    let exprs = expression_rows(entries, "$.entries", dim, &env)?;
                    MatrixFunction::from_expressions(dim, exprs)
                        .map_err(system_error("$.entries"))?
                }
                (None, Some(samples)) => {
                    let s = samples
                        .as_object()
                        .ok_or_else(|| schema("$.samples", "expected an object"))?;
                    let times_v = s
                        .get("times")
                        .ok_or_else(|| schema("$.samples.times", "missing field"))?;
                    let times = array(times_v, "$.samples.times")?
                        .iter()
                        .enumerate()
                        .map(|(k, v)| number(v, &format!("$.samples.times[{k}]")))
                        .collect::<Result<Vec<_>, _>>()?;
                    let mats_v = s
                        .get("matrices")
                        .ok_or_else(|| schema("$.samples.matrices", "missing field"))?;
                    let mats = array(mats_v, "$.samples.matrices")?;
                    if mats.len() != times.len() {
                        return Err(schema(
                            "$.samples.matrices",
                            format!(
                                "expected {} matrices (one per time), found {}",
                                times.len(),
                                mats.len()
                            ),
                        ));
                    }
                    let matrices = mats
                        .iter()
                        .enumerate()
                        .map(|(k, m)| matrix(m, &format!("$.samples.matrices[{k}]"), dim))
                        .collect::<Result<Vec<_>, _>>()?;
                    MatrixFunction::sampled(times, matrices).map_err(system_error("$.samples"))?
                }
                (None, None) => {
                    return Err(schema("$", "linear systems need `entries` or `samples`"))
                }
            };
            if obj.contains_key("rhs") {
                return Err(schema("$.rhs", "not allowed for linear systems"));
            }
            Ok(System::Linear(LinearSystem::new(label, a)))
        }
        "nonlinear" => {
            let env = state_env(dim);
            let rhs_v = field(obj, "rhs")?;
            let rhs_items = array(rhs_v, "$.rhs")?;
            if rhs_items.len() != dim {
                return Err(schema(
                    "$.rhs",
                    format!("expected {dim} components, found {}", rhs_items.len()),
                ));
            }
            let rhs = rhs_items
                .iter()
                .enumerate()
                .map(|(i, v)| expression(v, &format!("$.rhs[{i}]"), &env))
                .collect::<Result<Vec<_>, _>>()?;
            let mut sys = NonlinearSystem::new(label, rhs).map_err(system_error("$.rhs"))?;
            if let Some(jac) = obj.get("jacobian") {
                let entries = expression_rows(jac, "$.jacobian", dim, &env)?;
                sys = sys
                    .with_jacobian(entries)
                    .map_err(system_error("$.jacobian"))?;
            }
            Ok(System::Nonlinear(sys))
        }
        other => Err(schema(
            "$.type",
            format!("expected \"linear\" or \"nonlinear\", found \"{other}\""),
        )),
    }
}

/// Reads and parses a system definition file.
pub fn load_system(path: impl AsRef<Path>) -> Result<System, LoadError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_system(&text)
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// JSON definition accepted by [`parse_system`], when the system has one.
pub fn system_to_json(sys: &System) -> Option<Value> {
    match sys {
        System::Linear(lin) => {
            let mut v = json!({"type": "linear", "dim": lin.dim(), "label": lin.label});
            if let Backing::Sampled { times, matrices } = lin.a.backing() {
                v["samples"] = json!({"times": times, "matrices": matrices.iter().map(rows).collect::<Vec<_>>()});
            } else {
                v["entries"] = json!(lin.a.entry_strings()?);
            }
            Some(v)
        }
        System::Nonlinear(nl) => {
            let n = nl.dim();
            let jac: Vec<Vec<String>> = nl
                .jacobian()
                .chunks(n)
                .map(|row| row.iter().map(ToString::to_string).collect())
                .collect();
            Some(json!({
                "type": "nonlinear",
                "dim": n,
                "label": nl.label,
                "rhs": nl.rhs().iter().map(ToString::to_string).collect::<Vec<_>>(),
                "jacobian": jac,
            }))
        }
        System::Fundamental { .. } => None,
    }
}

/// `t,x1,...,xn` rows.
pub fn write_trajectory_csv<W: Write>(tr: &Trajectory, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let n = tr.x0.len();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for (t, x) in tr.times.iter().zip(&tr.states) {
        let mut rec = vec![format!("{t}")];
        rec.extend(x.iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{builtin, Params};

    #[test]
    fn classical_my1960_matches_builtin() {
        let text = r#"{"type": "linear", "dim": 2, "label": "file",
            "entries": [["-1+1.5*cos(t)^2", "1-1.5*cos(t)*sin(t)"], ["-1-1.5*cos(t)*sin(t)", "-1+1.5*sin(t)^2"]]}"#;
        let loaded = parse_system(text).unwrap();
        let my = builtin("my1960", &Params::new()).unwrap();
        for k in 0..50 {
            let t = 0.37 * k as f64;
            let a = loaded.as_linear().unwrap().a.eval(t).unwrap();
            let b = my.as_linear().unwrap().a.eval(t).unwrap();
            assert!((a - b).abs().max() < 1e-15);
        }
    }

    #[test]
    fn row_count_mismatch_cites_path() {
        let text = r#"{"type": "linear", "dim": 2, "entries": [["1","0"],["0","1"],["0","0"]]}"#;
        let err = parse_system(text).unwrap_err();
        assert_eq!(err.json_path(), Some("$.entries"));
        let text = r#"{"type": "linear", "dim": 2, "entries": [["1","0"],["0"]]}"#;
        assert_eq!(
            parse_system(text).unwrap_err().json_path(),
            Some("$.entries[1]")
        );
    }

    #[test]
    fn expression_errors_carry_offsets() {
        let text = r#"{"type": "nonlinear", "dim": 1, "rhs": ["-x1 + y"]}"#;
        match parse_system(text).unwrap_err() {
            LoadError::Expression { path, source } => {
                assert_eq!(path, "$.rhs[0]");
                assert!(matches!(
                    source,
                    ParseError::UnknownIdentifier { offset: 6, .. }
                ));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn sampled_two_knots() {
        let text = r#"{"type": "linear", "dim": 1, "samples": {"times": [0, 2], "matrices": [[[-1]], [[-3]]]}}"#;
        let sys = parse_system(text).unwrap();
        let a = sys.as_linear().unwrap().a.eval(1.0).unwrap();
        assert!((a[(0, 0)] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn schema_errors() {
        for (text, path) in [
            (r#"{"dim": 1}"#, "$.type"),
            (r#"{"type": "linear"}"#, "$.dim"),
            (r#"{"type": "affine", "dim": 1}"#, "$.type"),
            (r#"{"type": "linear", "dim": 1}"#, "$"),
            (r#"{"type": "nonlinear", "dim": 2, "rhs": ["x1"]}"#, "$.rhs"),
            (
                r#"{"type": "linear", "dim": 1, "samples": {"times": [0, 1], "matrices": [[[1]]]}}"#,
                "$.samples.matrices",
            ),
            (
                r#"{"type": "linear", "dim": 1, "samples": {"times": [0, "a"], "matrices": [[[1]], [[1]]]}}"#,
                "$.samples.times[1]",
            ),
        ] {
            assert_eq!(
                parse_system(text).unwrap_err().json_path(),
                Some(path),
                "{text}"
            );
        }
        assert!(matches!(parse_system("{"), Err(LoadError::Json(_))));
    }

    #[test]
    fn round_trip() {
        let params = Params::new();
        for name in ["my1960", "triangular_demo", "scalar_decay"] {
            let sys = builtin(name, &params).unwrap();
            let v = system_to_json(&sys).unwrap();
            let back = parse_system(&v.to_string()).unwrap();
            assert_eq!(system_to_json(&back).unwrap(), v);
        }
        let text = r#"{"type": "linear", "dim": 1, "label": "s", "samples": {"times": [0.0, 2.0], "matrices": [[[-1.0]], [[-3.0]]]}}"#;
        let v = system_to_json(&parse_system(text).unwrap()).unwrap();
        assert_eq!(v, serde_json::from_str::<Value>(text).unwrap());
    }

    #[test]
    fn trajectory_csv_header() {
        let sys = NonlinearSystem::parse("d", &["-x1", "-2*x2"]).unwrap();
        let tr = crate::integrate::solve(&sys, &[1.0, 1.0], &[0.0, 0.5, 1.0], &Default::default())
            .unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&tr, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x1,x2\n0,1,1\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
