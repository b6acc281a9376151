use super::{num, LinearSystem, MatrixFunction, NonlinearSystem, SystemError};
use crate::linalg::spectral_norm;

/// Real polynomial with coefficients in ascending degree.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial(pub Vec<f64>);

impl Polynomial {
    pub fn eval(&self, z: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * z + c)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|c| *c == 0.0)
    }

    /// Expression text in terms of `var` (already parenthesised by caller).
    pub fn text(&self, var: &str) -> String {
        if self.0.is_empty() {
            return "0.0".into();
        }
        let terms: Vec<String> = self
            .0
            .iter()
            .enumerate()
            .map(|(k, c)| match k {
                0 => num(*c),
                1 => format!("{}*{var}", num(*c)),
                _ => format!("{}*{var}^{k}", num(*c)),
            })
            .collect();
        format!("({})", terms.join(" + "))
    }
}

/// The planar reduction `u' = C(t) u` together with `C = lambda I + C0`.
#[derive(Debug, Clone)]
pub struct ReducedCg {
    pub system: LinearSystem,
    /// `C0(t) = C(t) - lambda I`.
    pub perturbation: LinearSystem,
    pub lambda: f64,
    /// `(t, ||C0(t)||)` on the logarithmic probe grid.
    pub decay_profile: Vec<(f64, f64)>,
}

pub(super) fn check_lambda(lambda: f64) -> Result<(), SystemError> {
    if !(lambda < 0.0) {
        return Err(SystemError::InvalidParameter {
            name: "lambda".into(),
            reason: format!("must be negative, got {lambda}"),
        });
    }
    Ok(())
}

/// Three-dimensional field `F = lambda I + H` with
/// `H = g(z) (a(z) x + b(z) y) (-b(z), a(z), 0)`.
pub(super) fn cg_field(
    lambda: f64,
    a: &Polynomial,
    b: &Polynomial,
    g: &Polynomial,
) -> Result<NonlinearSystem, SystemError> {
    check_lambda(lambda)?;
    let (pa, pb, pg) = (a.text("x3"), b.text("x3"), g.text("x3"));
    let l = num(lambda);
    let coupling = format!("{pg}*({pa}*x1 + {pb}*x2)");
    let f1 = format!("{l}*x1 - {coupling}*{pb}");
    let f2 = format!("{l}*x2 + {coupling}*{pa}");
    let f3 = format!("{l}*x3");
    NonlinearSystem::parse("cg_field", &[&f1, &f2, &f3])
}

/// Builds the planar system satisfied by `(x, y)` once `z(t) = z0 e^{lambda t}`
/// is substituted into the third equation of the field.
pub fn reduce_cg(
    lambda: f64,
    a: &Polynomial,
    b: &Polynomial,
    g: &Polynomial,
    z0: f64,
) -> Result<ReducedCg, SystemError> {
    check_lambda(lambda)?;
    if z0 == 0.0 || !z0.is_finite() {
        return Err(SystemError::InvalidParameter {
            name: "z0".into(),
            reason: "must be non-zero (z0 = 0 leaves x' = lambda x directly)".into(),
        });
    }
    let z = format!("({}*exp({}*t))", num(z0), num(lambda));
    let (ta, tb, tg) = (a.text(&z), b.text(&z), g.text(&z));
    let l = num(lambda);
    let abg = format!("{ta}*{tb}*{tg}");
    let bbg = format!("{tb}^2*{tg}");
    let aag = format!("{ta}^2*{tg}");
    let full = MatrixFunction::parse_rows(&[
        vec![format!("{l} - {abg}"), format!("-{bbg}")],
        vec![aag.clone(), format!("{l} + {abg}")],
    ])?;
    let c0 = MatrixFunction::parse_rows(&[
        vec![format!("-{abg}"), format!("-{bbg}")],
        vec![aag, abg.clone()],
    ])?;

    let t_end = 200.0 / lambda.abs();
    let mut profile = Vec::new();
    let mut t = 0.5;
    while t <= t_end {
        profile.push((t, spectral_norm(&c0.eval(t)?)));
        t *= std::f64::consts::SQRT_2;
    }
    let peak = profile.iter().map(|p| p.1).fold(1.0f64, f64::max);
    let tail = &profile[profile.len() / 2..];
    let monotone = tail
        .windows(2)
        .all(|w| w[1].1 <= w[0].1 * (1.0 + 1e-12) + 1e-300);
    let last = profile.last().map_or(0.0, |p| p.1);
    if !monotone || last > 1e-6 * peak {
        return Err(SystemError::NonVanishing(format!(
            "||C0(t)|| = {last:e} at t = {t_end} (peak {peak:e}); needs g(0) = 0 or a(0) = b(0) = 0"
        )));
    }

    let label = format!("cg_reduced(lambda={lambda}, z0={z0})");
    Ok(ReducedCg {
        system: LinearSystem::new(label.clone(), full),
        perturbation: LinearSystem::new(format!("{label} C0"), c0),
        lambda,
        decay_profile: profile,
    })
}
