//! Registry of named example systems.

use super::cg::{cg_field, check_lambda, reduce_cg, Polynomial};
use super::{num, LinearSystem, MatrixFunction, NonlinearSystem, Params, System, SystemError};

/// Registry names with a one-line description each.
pub const BUILTINS: &[(&str, &str)] = &[
    (
        "my1960",
        "planar periodic A(t) with Hurwitz eigenvalues and an unbounded solution",
    ),
    (
        "my1960_exact_fundamental",
        "closed-form fundamental matrix of my1960",
    ),
    ("scalar_decay", "x' = lambda x (param lambda, default -1)"),
    (
        "triangular_demo",
        "planar upper-triangular nonlinear field with negative diagonal Jacobian",
    ),
    (
        "cg_field",
        "3D field lambda I + H (params lambda, a*, b*, g* polynomial coefficients)",
    ),
    (
        "cg_reduced",
        "planar reduction C(t) of cg_field along z(t) = z0 e^{lambda t} (adds param z0)",
    ),
];

pub fn builtin_names() -> Vec<&'static str> {
    BUILTINS.iter().map(|(n, _)| *n).collect()
}

pub const MY1960_ENTRIES: [[&str; 2]; 2] = [
    ["-1 + 1.5*cos(t)^2", "1 - 1.5*cos(t)*sin(t)"],
    ["-1 - 1.5*cos(t)*sin(t)", "-1 + 1.5*sin(t)^2"],
];

const MY1960_FUNDAMENTAL: [[&str; 2]; 2] = [
    ["exp(0.5*t)*cos(t)", "exp(-t)*sin(t)"],
    ["-exp(0.5*t)*sin(t)", "exp(-t)*cos(t)"],
];

const TRIANGULAR_DEMO: [&str; 2] = [
    "-(1 + 0.25*sin(t))*x1 - 0.5*x1^3 + cos(t)*x2",
    "-(2 + cos(t))*x2 - x2^3",
];

fn param(params: &Params, name: &str, default: f64) -> Result<f64, SystemError> {
    let v = params.get(name).copied().unwrap_or(default);
    if !v.is_finite() {
        return Err(SystemError::InvalidParameter {
            name: name.into(),
            reason: "must be finite".into(),
        });
    }
    Ok(v)
}

/// Polynomial from `prefix0, prefix1, ...` (or `prefix` alone for the
/// constant term).
pub(crate) fn polynomial_param(
    params: &Params,
    prefix: &str,
    default: &[f64],
) -> Result<Polynomial, SystemError> {
    let mut coeffs: Vec<(usize, f64)> = Vec::new();
    for (key, value) in params {
        let Some(rest) = key.strip_prefix(prefix) else {
            continue;
        };
        let degree = if rest.is_empty() {
            0
        } else if let Ok(d) = rest.parse::<usize>() {
            d
        } else {
            continue;
        };
        if !value.is_finite() {
            return Err(SystemError::InvalidParameter {
                name: key.clone(),
                reason: "must be finite".into(),
            });
        }
        coeffs.push((degree, *value));
    }
    if coeffs.is_empty() {
        return Ok(Polynomial(default.to_vec()));
    }
    let deg = coeffs.iter().map(|c| c.0).max().unwrap_or(0);
    let mut out = vec![0.0; deg + 1];
    for (d, v) in coeffs {
        out[d] = v;
    }
    Ok(Polynomial(out))
}

fn check_known(
    name: &str,
    params: &Params,
    allowed: &[&str],
    poly: &[&str],
) -> Result<(), SystemError> {
    for key in params.keys() {
        let is_poly = poly.iter().any(|p| {
            key.strip_prefix(p)
                .is_some_and(|rest| rest.is_empty() || rest.parse::<usize>().is_ok())
        });
        if !allowed.contains(&key.as_str()) && !is_poly {
            return Err(SystemError::InvalidParameter {
                name: key.clone(),
                reason: format!("not a parameter of `{name}`"),
            });
        }
    }
    Ok(())
}

/// Instantiates a registry system.
pub fn builtin(name: &str, params: &Params) -> Result<System, SystemError> {
    let sys = match name {
        "my1960" => {
            check_known(name, params, &[], &[])?;
            let rows: Vec<Vec<&str>> = MY1960_ENTRIES.iter().map(|r| r.to_vec()).collect();
            System::Linear(LinearSystem::new(name, MatrixFunction::parse_rows(&rows)?))
        }
        "my1960_exact_fundamental" => {
            check_known(name, params, &[], &[])?;
            let rows: Vec<Vec<&str>> = MY1960_FUNDAMENTAL.iter().map(|r| r.to_vec()).collect();
            System::Fundamental {
                label: name.into(),
                phi: MatrixFunction::parse_rows(&rows)?,
            }
        }
        "scalar_decay" => {
            check_known(name, params, &["lambda"], &[])?;
            let lambda = param(params, "lambda", -1.0)?;
            System::Linear(LinearSystem::new(
                name,
                MatrixFunction::parse_rows(&[vec![num(lambda)]])?,
            ))
        }
        "triangular_demo" => {
            check_known(name, params, &[], &[])?;
            System::Nonlinear(NonlinearSystem::parse(name, &TRIANGULAR_DEMO)?)
        }
        "cg_field" | "cg_reduced" => {
            let extra: &[&str] = if name == "cg_field" {
                &["lambda"]
            } else {
                &["lambda", "z0"]
            };
            check_known(name, params, extra, &["a", "b", "g"])?;
            let lambda = param(params, "lambda", -1.0)?;
            check_lambda(lambda)?;
            let a = polynomial_param(params, "a", &[1.0])?;
            let b = polynomial_param(params, "b", &[1.0])?;
            let g = polynomial_param(params, "g", &[0.0, 1.0])?;
            if name == "cg_field" {
                let mut f = cg_field(lambda, &a, &b, &g)?;
                f.label = name.into();
                System::Nonlinear(f)
            } else {
                let z0 = param(params, "z0", 1.0)?;
                let mut r = reduce_cg(lambda, &a, &b, &g, z0)?;
                r.system.label = name.into();
                System::Linear(r.system)
            }
        }
        other => return Err(SystemError::UnknownBuiltin(other.into())),
    };
    Ok(sys)
}
