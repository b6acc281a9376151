//! Linear and nonlinear nonautonomous systems, the built-in registry and the
//! transformations used by the spectral machinery.

mod builtin;
mod cg;
mod paths;

use std::collections::HashMap;
use std::sync::Arc;

use crate::expr::{EvalError, Expression, ParseError};
use crate::linalg::Matrix;

pub(crate) use builtin::polynomial_param;
pub use builtin::{builtin, builtin_names, BUILTINS};
pub use cg::{reduce_cg, Polynomial, ReducedCg};
pub(crate) use paths::initial_conditions;
pub use paths::{
    linearize_along, sample_paths, PathData, PathKind, PathSample, PathSamplingOptions,
};

#[derive(Debug, Clone, thiserror::Error)]
pub enum SystemError {
    #[error("unknown builtin system `{0}`")]
    UnknownBuiltin(String),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },
    #[error("evaluation failed at t = {t}: {source}")]
    Eval { t: f64, source: EvalError },
    #[error("cannot parse `{text}`: {source}")]
    Parse { text: String, source: ParseError },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid samples: {0}")]
    InvalidSamples(String),
    #[error("perturbation does not vanish: {0}")]
    NonVanishing(String),
}

/// Variable environment `["t", "x1", ..., "xn"]` for state-dependent
/// expressions.
pub fn state_env(n: usize) -> Vec<String> {
    std::iter::once("t".to_string())
        .chain((1..=n).map(|i| format!("x{i}")))
        .collect()
}

pub fn time_env() -> Vec<String> {
    vec!["t".to_string()]
}

/// Formats a number so that it re-parses exactly, wrapping negatives.
pub(crate) fn num(x: f64) -> String {
    if x < 0.0 {
        format!("(-{:?})", -x)
    } else {
        format!("{x:?}")
    }
}

#[derive(Debug, Clone)]
pub enum Backing {
    /// Row-major `n*n` expressions in the single variable `t`.
    Expressions(Vec<Expression>),
    Constant(Matrix),
    /// Strictly increasing knots, linear interpolation, constant beyond the ends.
    Sampled {
        times: Vec<f64>,
        matrices: Vec<Matrix>,
    },
    /// `t -> J(t, y(t))` for a state Jacobian evaluated along a path.
    PathJacobian {
        jacobian: Arc<Vec<Expression>>,
        path: Arc<PathSample>,
    },
    Shifted {
        base: Arc<MatrixFunction>,
        gamma: f64,
    },
    /// Square diagonal block of a larger matrix starting at row/column `lo`.
    Block {
        parent: Arc<MatrixFunction>,
        lo: usize,
    },
    Sum(Arc<MatrixFunction>, Arc<MatrixFunction>),
}

/// A square matrix depending on time, `t >= t_min`.
#[derive(Debug, Clone)]
pub struct MatrixFunction {
    dim: usize,
    backing: Backing,
    t_min: f64,
}

impl MatrixFunction {
    pub fn from_expressions(dim: usize, entries: Vec<Expression>) -> Result<Self, SystemError> {
        if dim == 0 || entries.len() != dim * dim {
            return Err(SystemError::Dimension(format!(
                "expected {} entries for dimension {dim}, got {}",
                dim * dim,
                entries.len()
            )));
        }
        let env = time_env();
        let entries = entries
            .into_iter()
            .map(|e| {
                e.rebind(&env)
                    .map_err(|name| SystemError::InvalidParameter {
                        name,
                        reason: "coefficient entries may only depend on t".into(),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(MatrixFunction {
            dim,
            backing: Backing::Expressions(entries),
            t_min: 0.0,
        })
    }

    /// Parses row-major entry strings in the variable `t`.
    pub fn parse_rows<S: AsRef<str>>(rows: &[Vec<S>]) -> Result<Self, SystemError> {
        let dim = rows.len();
        let mut entries = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(SystemError::Dimension(format!(
                    "row has {} entries, expected {dim}",
                    row.len()
                )));
            }
            for text in row {
                let text = text.as_ref();
                entries.push(Expression::parse(text, &time_env()).map_err(|source| {
                    SystemError::Parse {
                        text: text.to_string(),
                        source,
                    }
                })?);
            }
        }
        Self::from_expressions(dim, entries)
    }

    pub fn constant(m: Matrix) -> Self {
        assert!(
            m.is_square() && m.nrows() > 0,
            "constant matrix must be square"
        );
        MatrixFunction {
            dim: m.nrows(),
            backing: Backing::Constant(m),
            t_min: 0.0,
        }
    }

    pub fn sampled(times: Vec<f64>, matrices: Vec<Matrix>) -> Result<Self, SystemError> {
        if times.len() < 2 {
            return Err(SystemError::InvalidSamples("need at least 2 knots".into()));
        }
        if times.len() != matrices.len() {
            return Err(SystemError::InvalidSamples(format!(
                "{} knots but {} matrices",
                times.len(),
                matrices.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SystemError::InvalidSamples(
                "knot times must be strictly increasing".into(),
            ));
        }
        let dim = matrices[0].nrows();
        if matrices
            .iter()
            .any(|m| m.nrows() != dim || m.ncols() != dim)
            || dim == 0
        {
            return Err(SystemError::Dimension(
                "sampled matrices must share one square shape".into(),
            ));
        }
        if matrices.iter().any(|m| m.iter().any(|x| !x.is_finite())) {
            return Err(SystemError::InvalidSamples(
                "non-finite matrix entry".into(),
            ));
        }
        let t_min = times[0];
        Ok(MatrixFunction {
            dim,
            backing: Backing::Sampled { times, matrices },
            t_min,
        })
    }

    pub(crate) fn path_jacobian(
        dim: usize,
        jacobian: Arc<Vec<Expression>>,
        path: Arc<PathSample>,
    ) -> Self {
        MatrixFunction {
            dim,
            backing: Backing::PathJacobian { jacobian, path },
            t_min: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    pub fn backing(&self) -> &Backing {
        &self.backing
    }

    pub fn eval(&self, t: f64) -> Result<Matrix, SystemError> {
        let mut out = Matrix::zeros(self.dim, self.dim);
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    pub fn eval_into(&self, t: f64, out: &mut Matrix) -> Result<(), SystemError> {
        let n = self.dim;
        match &self.backing {
            Backing::Expressions(entries) => {
                let vals = [t];
                for (k, e) in entries.iter().enumerate() {
                    out[(k / n, k % n)] = e
                        .eval(&vals)
                        .map_err(|source| SystemError::Eval { t, source })?;
                }
            }
            Backing::Constant(m) => out.copy_from(m),
            Backing::Sampled { times, matrices } => {
                let last = times.len() - 1;
                if t <= times[0] {
                    out.copy_from(&matrices[0]);
                } else if t >= times[last] {
                    out.copy_from(&matrices[last]);
                } else {
                    let k = times.partition_point(|&x| x <= t) - 1;
                    let w = (t - times[k]) / (times[k + 1] - times[k]);
                    out.zip_zip_apply(&matrices[k], &matrices[k + 1], |o, a, b| {
                        *o = a + w * (b - a)
                    });
                }
            }
            Backing::PathJacobian { jacobian, path } => {
                let mut vals = Vec::with_capacity(n + 1);
                vals.push(t);
                vals.extend(path.eval(t));
                for (k, e) in jacobian.iter().enumerate() {
                    out[(k / n, k % n)] = e
                        .eval(&vals)
                        .map_err(|source| SystemError::Eval { t, source })?;
                }
            }
            Backing::Shifted { base, gamma } => {
                base.eval_into(t, out)?;
                for i in 0..n {
                    out[(i, i)] -= gamma;
                }
            }
            Backing::Block { parent, lo } => {
                let full = parent.eval(t)?;
                out.copy_from(&full.view((*lo, *lo), (n, n)));
            }
            Backing::Sum(a, b) => {
                a.eval_into(t, out)?;
                let mut tmp = Matrix::zeros(n, n);
                b.eval_into(t, &mut tmp)?;
                *out += tmp;
            }
        }
        Ok(())
    }

    /// `t -> A(t) - gamma I`; nested shifts collapse into one.
    pub fn shifted(&self, gamma: f64) -> Self {
        let backing = match &self.backing {
            Backing::Shifted { base, gamma: g0 } => Backing::Shifted {
                base: base.clone(),
                gamma: g0 + gamma,
            },
            _ => Backing::Shifted {
                base: Arc::new(self.clone()),
                gamma,
            },
        };
        MatrixFunction {
            dim: self.dim,
            backing,
            t_min: self.t_min,
        }
    }

    pub fn plus(&self, other: &MatrixFunction) -> Result<Self, SystemError> {
        if other.dim != self.dim {
            return Err(SystemError::Dimension(format!(
                "cannot add {}x{} and {}x{}",
                self.dim, self.dim, other.dim, other.dim
            )));
        }
        Ok(MatrixFunction {
            dim: self.dim,
            backing: Backing::Sum(Arc::new(self.clone()), Arc::new(other.clone())),
            t_min: self.t_min.max(other.t_min),
        })
    }

    /// Whether the matrix is known not to depend on time.
    pub fn is_autonomous(&self) -> bool {
        match &self.backing {
            Backing::Constant(_) => true,
            Backing::Expressions(e) => e.iter().all(Expression::is_constant),
            Backing::Shifted { base, .. } | Backing::Block { parent: base, .. } => {
                base.is_autonomous()
            }
            Backing::Sum(a, b) => a.is_autonomous() && b.is_autonomous(),
            Backing::Sampled { .. } | Backing::PathJacobian { .. } => false,
        }
    }

    /// Row-major entry strings, when the backing is expression-based.
    pub fn entry_strings(&self) -> Option<Vec<Vec<String>>> {
        let n = self.dim;
        match &self.backing {
            Backing::Expressions(e) => Some(
                (0..n)
                    .map(|i| (0..n).map(|j| e[i * n + j].to_string()).collect())
                    .collect(),
            ),
            Backing::Constant(m) => Some(
                (0..n)
                    .map(|i| (0..n).map(|j| num(m[(i, j)])).collect())
                    .collect(),
            ),
            Backing::Shifted { base, gamma } => {
                let mut rows = base.entry_strings()?;
                for (i, row) in rows.iter_mut().enumerate() {
                    row[i] = format!("({} - {})", row[i], num(*gamma));
                }
                Some(rows)
            }
            Backing::Sum(a, b) => {
                let (ra, rb) = (a.entry_strings()?, b.entry_strings()?);
                Some(
                    ra.into_iter()
                        .zip(rb)
                        .map(|(x, y)| {
                            x.into_iter()
                                .zip(y)
                                .map(|(p, q)| format!("({p} + {q})"))
                                .collect()
                        })
                        .collect(),
                )
            }
            _ => None,
        }
    }
}

/// `x' = A(t) x`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub a: MatrixFunction,
    pub label: String,
}

impl LinearSystem {
    pub fn new(label: impl Into<String>, a: MatrixFunction) -> Self {
        LinearSystem {
            a,
            label: label.into(),
        }
    }

    pub fn constant(label: impl Into<String>, m: Matrix) -> Self {
        Self::new(label, MatrixFunction::constant(m))
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    /// Jacobian entries below the diagonal are zero at every probe time.
    pub fn is_upper_triangular(&self, probes: &[f64]) -> Result<bool, SystemError> {
        for &t in probes {
            let m = self.a.eval(t)?;
            for i in 0..m.nrows() {
                for j in 0..i {
                    if m[(i, j)] != 0.0 {
                        return Ok(false);
                    }
                }
            }
        }
        Ok(true)
    }

    /// Diagonal block `[lo, hi)` as its own system.
    pub fn diagonal_block(&self, lo: usize, hi: usize) -> LinearSystem {
        let parent = Arc::new(self.a.clone());
        let label = format!("{}[{lo}..{hi}]", self.label);
        let block = BlockOf { parent, lo, hi };
        LinearSystem::new(label, block.into_matrix_function())
    }
}

struct BlockOf {
    parent: Arc<MatrixFunction>,
    lo: usize,
    hi: usize,
}

impl BlockOf {
    fn into_matrix_function(self) -> MatrixFunction {
        let size = self.hi - self.lo;
        match &self.parent.backing {
            Backing::Expressions(e) => {
                let n = self.parent.dim;
                let entries = (self.lo..self.hi)
                    .flat_map(|i| (self.lo..self.hi).map(move |j| (i, j)))
                    .map(|(i, j)| e[i * n + j].clone())
                    .collect();
                MatrixFunction::from_expressions(size, entries).expect("block of valid system")
            }
            Backing::Constant(m) => {
                MatrixFunction::constant(m.view((self.lo, self.lo), (size, size)).into_owned())
            }
            _ => MatrixFunction {
                dim: size,
                backing: Backing::Block {
                    parent: self.parent,
                    lo: self.lo,
                },
                t_min: 0.0,
            },
        }
    }
}

/// `x' = g(t, x)` with a symbolic Jacobian.
#[derive(Debug, Clone)]
pub struct NonlinearSystem {
    dim: usize,
    rhs: Vec<Expression>,
    jacobian: Arc<Vec<Expression>>,
    pub label: String,
}

impl NonlinearSystem {
    /// Builds the system and derives the Jacobian symbolically. Expressions
    /// must use the environment `["t", "x1", ..., "xn"]`.
    pub fn new(label: impl Into<String>, rhs: Vec<Expression>) -> Result<Self, SystemError> {
        let dim = rhs.len();
        if dim == 0 {
            return Err(SystemError::Dimension(
                "nonlinear system needs dim >= 1".into(),
            ));
        }
        let env = state_env(dim);
        let rhs = rebind_all(rhs, &env)?;
        let mut jac = Vec::with_capacity(dim * dim);
        for g in &rhs {
            for var in &env[1..] {
                jac.push(g.differentiate(var).expect("state variable in env"));
            }
        }
        Ok(NonlinearSystem {
            dim,
            rhs,
            jacobian: Arc::new(jac),
            label: label.into(),
        })
    }

    pub fn with_jacobian(mut self, jacobian: Vec<Expression>) -> Result<Self, SystemError> {
        if jacobian.len() != self.dim * self.dim {
            return Err(SystemError::Dimension(format!(
                "jacobian needs {} entries, got {}",
                self.dim * self.dim,
                jacobian.len()
            )));
        }
        self.jacobian = Arc::new(rebind_all(jacobian, &state_env(self.dim))?);
        Ok(self)
    }

    /// Parses right-hand side strings in `t, x1..xn`.
    pub fn parse(label: impl Into<String>, rhs: &[&str]) -> Result<Self, SystemError> {
        let env = state_env(rhs.len());
        let exprs = rhs
            .iter()
            .map(|text| {
                Expression::parse(text, &env).map_err(|source| SystemError::Parse {
                    text: text.to_string(),
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(label, exprs)
    }

    /// `g(t, x) = A(t) x` for an expression-backed linear system.
    pub fn from_linear(sys: &LinearSystem) -> Result<Self, SystemError> {
        let rows = sys
            .a
            .entry_strings()
            .ok_or_else(|| SystemError::InvalidParameter {
                name: sys.label.clone(),
                reason: "only expression-backed linear systems convert to nonlinear form".into(),
            })?;
        let texts: Vec<String> = rows
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(j, a)| format!("({a})*x{}", j + 1))
                    .collect::<Vec<_>>()
                    .join(" + ")
            })
            .collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        Self::parse(sys.label.clone(), &refs)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rhs(&self) -> &[Expression] {
        &self.rhs
    }

    pub fn jacobian(&self) -> &Arc<Vec<Expression>> {
        &self.jacobian
    }

    pub fn eval_rhs(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), SystemError> {
        let vals = self.values(t, x);
        for (o, g) in out.iter_mut().zip(&self.rhs) {
            *o = g
                .eval(&vals)
                .map_err(|source| SystemError::Eval { t, source })?;
        }
        Ok(())
    }

    pub fn eval_jacobian(&self, t: f64, x: &[f64]) -> Result<Matrix, SystemError> {
        let n = self.dim;
        let vals = self.values(t, x);
        let mut m = Matrix::zeros(n, n);
        for (k, e) in self.jacobian.iter().enumerate() {
            m[(k / n, k % n)] = e
                .eval(&vals)
                .map_err(|source| SystemError::Eval { t, source })?;
        }
        Ok(m)
    }

    fn values(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut vals = Vec::with_capacity(self.dim + 1);
        vals.push(t);
        vals.extend_from_slice(&x[..self.dim]);
        vals
    }
}

fn rebind_all(exprs: Vec<Expression>, env: &[String]) -> Result<Vec<Expression>, SystemError> {
    exprs
        .into_iter()
        .map(|e| {
            e.rebind(env).map_err(|name| SystemError::InvalidParameter {
                name,
                reason: format!("variable not in environment {env:?}"),
            })
        })
        .collect()
}

/// Anything the registry or the loader can produce.
#[derive(Debug, Clone)]
pub enum System {
    Linear(LinearSystem),
    Nonlinear(NonlinearSystem),
    /// A closed-form fundamental matrix `Phi(t)` with `Phi(0) = I`.
    Fundamental {
        label: String,
        phi: MatrixFunction,
    },
}

impl System {
    pub fn label(&self) -> &str {
        match self {
            System::Linear(s) => &s.label,
            System::Nonlinear(s) => &s.label,
            System::Fundamental { label, .. } => label,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            System::Linear(s) => s.dim(),
            System::Nonlinear(s) => s.dim(),
            System::Fundamental { phi, .. } => phi.dim(),
        }
    }

    pub fn as_linear(&self) -> Option<&LinearSystem> {
        match self {
            System::Linear(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_nonlinear(&self) -> Option<&NonlinearSystem> {
        match self {
            System::Nonlinear(s) => Some(s),
            _ => None,
        }
    }
}

/// `x' = [A(t) - gamma I] x`.
pub fn shift(sys: &LinearSystem, gamma: f64) -> LinearSystem {
    let base = sys.label.split(" shifted by ").next().unwrap_or(&sys.label);
    let total = match sys.a.backing() {
        Backing::Shifted { gamma: g0, .. } => g0 + gamma,
        _ => gamma,
    };
    LinearSystem::new(format!("{base} shifted by {total}"), sys.a.shifted(gamma))
}

pub type Params = HashMap<String, f64>;

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(v: &[f64]) -> LinearSystem {
        LinearSystem::constant(
            "diag",
            Matrix::from_diagonal(&nalgebra::DVector::from_row_slice(v)),
        )
    }

    #[test]
    fn shift_examples() {
        let s = shift(
            &builtin("scalar_decay", &[("lambda".into(), -1.0)].into())
                .unwrap()
                .as_linear()
                .unwrap()
                .clone(),
            -1.0,
        );
        assert_eq!(s.a.eval(3.0).unwrap()[(0, 0)], 0.0);

        let my = builtin("my1960", &Params::new())
            .unwrap()
            .as_linear()
            .unwrap()
            .clone();
        let s0 = shift(&my, 0.0);
        for t in [0.0, 0.7, 2.5] {
            assert_eq!(s0.a.eval(t).unwrap(), my.a.eval(t).unwrap());
        }

        let d = shift(&diag(&[-1.0, -2.0]), 0.5);
        assert_eq!(
            d.a.eval(1.0).unwrap(),
            Matrix::from_row_slice(2, 2, &[-1.5, 0.0, 0.0, -2.5])
        );
    }

    #[test]
    fn nested_shifts_compose() {
        let my = builtin("my1960", &Params::new())
            .unwrap()
            .as_linear()
            .unwrap()
            .clone();
        let twice = shift(&shift(&my, 0.3), -1.1);
        let once = shift(&my, 0.3 - 1.1);
        for t in [0.0, 1.0, 5.5, 17.0] {
            assert!((twice.a.eval(t).unwrap() - once.a.eval(t).unwrap()).amax() <= 1e-12);
        }
        assert!(twice.label.starts_with("my1960 shifted by -0.8"));
        assert_eq!(twice.label.matches("shifted").count(), 1);
    }

    #[test]
    fn sampled_interpolates_linearly() {
        let m = MatrixFunction::sampled(
            vec![0.0, 2.0],
            vec![
                Matrix::from_element(1, 1, 0.0),
                Matrix::from_element(1, 1, 4.0),
            ],
        )
        .unwrap();
        assert_eq!(m.eval(0.5).unwrap()[(0, 0)], 1.0);
        assert_eq!(m.eval(5.0).unwrap()[(0, 0)], 4.0);
        assert!(MatrixFunction::sampled(vec![0.0], vec![Matrix::zeros(1, 1)]).is_err());
        assert!(MatrixFunction::sampled(
            vec![0.0, 0.0],
            vec![Matrix::zeros(1, 1), Matrix::zeros(1, 1)]
        )
        .is_err());
    }

    #[test]
    fn nonlinear_from_linear_recovers_matrix() {
        let my = builtin("my1960", &Params::new())
            .unwrap()
            .as_linear()
            .unwrap()
            .clone();
        let nl = NonlinearSystem::from_linear(&my).unwrap();
        for t in [0.0, 0.4, 3.3] {
            let j = nl.eval_jacobian(t, &[0.3, -2.0]).unwrap();
            assert!((j - my.a.eval(t).unwrap()).amax() <= 1e-12);
        }
    }

    #[test]
    fn triangularity_probe() {
        let up = LinearSystem::constant("u", Matrix::from_row_slice(2, 2, &[-1.0, 5.0, 0.0, -3.0]));
        assert!(up.is_upper_triangular(&[0.0, 1.0]).unwrap());
        let my = builtin("my1960", &Params::new())
            .unwrap()
            .as_linear()
            .unwrap()
            .clone();
        assert!(!my.is_upper_triangular(&[0.0]).unwrap());
        let b = up.diagonal_block(1, 2);
        assert_eq!(b.a.eval(0.0).unwrap()[(0, 0)], -3.0);
    }
}
