//! A small infix expression language for time- and state-dependent
//! coefficients.
//!
//! Expressions are parsed against an explicit variable environment (for
//! example `["t", "x1", "x2"]`), evaluated in IEEE double precision and can be
//! differentiated symbolically. Domain violations (division by zero, `ln` of a
//! non-positive number, `sqrt` of a negative number) are reported as errors
//! instead of leaking `inf`/`NaN` into downstream computations.

mod diff;
mod parse;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

pub use parse::ParseError;

/// Built-in single-argument functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Function {
    Sin,
    Cos,
    Exp,
    Ln,
    Abs,
    Sqrt,
}

impl Function {
    pub fn name(self) -> &'static str {
        match self {
            Function::Sin => "sin",
            Function::Cos => "cos",
            Function::Exp => "exp",
            Function::Ln => "ln",
            Function::Abs => "abs",
            Function::Sqrt => "sqrt",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Function::Sin,
            "cos" => Function::Cos,
            "exp" => Function::Exp,
            "ln" => Function::Ln,
            "abs" => Function::Abs,
            "sqrt" => Function::Sqrt,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
            BinaryOp::Pow => '^',
        }
    }
}

/// Abstract syntax tree node. Variables are indices into the owning
/// expression's environment.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var(usize),
    Neg(Box<Node>),
    Call(Function, Box<Node>),
    Binary(BinaryOp, Box<Node>, Box<Node>),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("division by zero in `{node}`")]
    DivisionByZero { node: String },
    #[error("logarithm of non-positive value {value} in `{node}`")]
    LogDomain { node: String, value: f64 },
    #[error("square root of negative value {value} in `{node}`")]
    SqrtDomain { node: String, value: f64 },
    #[error("non-finite result in `{node}`")]
    NonFinite { node: String },
    #[error("missing binding for variable `{0}`")]
    MissingBinding(String),
    #[error("expected {expected} variable values, got {found}")]
    BindingCount { expected: usize, found: usize },
}

/// An immutable parsed expression together with its variable environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: Node,
    env: Arc<[String]>,
}

impl Expression {
    /// Parses `text` with the given variable environment.
    ///
    /// The identifier `pi` is a constant unless the environment declares it.
    pub fn parse<S: AsRef<str>>(text: &str, env: &[S]) -> Result<Self, ParseError> {
        let env: Arc<[String]> = env.iter().map(|s| s.as_ref().to_string()).collect();
        let root = parse::parse(text, &env)?;
        Ok(Expression { root, env })
    }

    pub fn constant(value: f64, env: &[String]) -> Self {
        Expression {
            root: Node::Const(value),
            env: env.iter().cloned().collect(),
        }
    }

    pub fn from_node(root: Node, env: Arc<[String]>) -> Self {
        Expression { root, env }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn env(&self) -> &[String] {
        &self.env
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.env.iter().position(|v| v == name)
    }

    /// Names of the environment variables that actually occur in the tree.
    pub fn free_variables(&self) -> Vec<&str> {
        let mut used = vec![false; self.env.len()];
        mark_vars(&self.root, &mut used);
        self.env
            .iter()
            .zip(used)
            .filter(|(_, u)| *u)
            .map(|(n, _)| n.as_str())
            .collect()
    }

    pub fn is_constant(&self) -> bool {
        self.free_variables().is_empty()
    }

    /// Evaluates with positional values matching the environment order.
    pub fn eval(&self, values: &[f64]) -> Result<f64, EvalError> {
        if values.len() < self.env.len() {
            return Err(EvalError::BindingCount {
                expected: self.env.len(),
                found: values.len(),
            });
        }
        eval_node(&self.root, values, &self.env)
    }

    /// Evaluates with named bindings; every free variable must be bound.
    pub fn eval_with(&self, bindings: &HashMap<String, f64>) -> Result<f64, EvalError> {
        let mut values = vec![f64::NAN; self.env.len()];
        for name in self.free_variables() {
            let idx = self.var_index(name).expect("free variable in env");
            values[idx] = *bindings
                .get(name)
                .ok_or_else(|| EvalError::MissingBinding(name.to_string()))?;
        }
        eval_node(&self.root, &values, &self.env)
    }

    /// Symbolic partial derivative with respect to the named variable.
    pub fn differentiate(&self, var: &str) -> Option<Expression> {
        let idx = self.var_index(var)?;
        Some(Expression {
            root: diff::derivative(&self.root, idx),
            env: self.env.clone(),
        })
    }

    /// Replaces the named variables by constants; other variables are kept.
    pub fn substitute_constants(&self, values: &HashMap<String, f64>) -> Expression {
        let consts: Vec<Option<f64>> = self.env.iter().map(|n| values.get(n).copied()).collect();
        Expression {
            root: substitute(&self.root, &consts),
            env: self.env.clone(),
        }
    }

    /// Re-targets the expression to a different environment, mapping
    /// variables by name. Fails with the first variable missing from `env`.
    pub fn rebind(&self, env: &[String]) -> Result<Expression, String> {
        let map: Vec<Option<usize>> = self
            .env
            .iter()
            .map(|name| env.iter().position(|e| e == name))
            .collect();
        let root = remap(&self.root, &map).map_err(|i| self.env[i].clone())?;
        Ok(Expression {
            root,
            env: env.iter().cloned().collect(),
        })
    }
}

fn remap(node: &Node, map: &[Option<usize>]) -> Result<Node, usize> {
    Ok(match node {
        Node::Const(c) => Node::Const(*c),
        Node::Var(i) => Node::Var(map[*i].ok_or(*i)?),
        Node::Neg(a) => Node::Neg(Box::new(remap(a, map)?)),
        Node::Call(f, a) => Node::Call(*f, Box::new(remap(a, map)?)),
        Node::Binary(op, a, b) => {
            Node::Binary(*op, Box::new(remap(a, map)?), Box::new(remap(b, map)?))
        }
    })
}

fn substitute(node: &Node, consts: &[Option<f64>]) -> Node {
    match node {
        Node::Var(i) => consts[*i].map_or(Node::Var(*i), Node::Const),
        Node::Const(c) => Node::Const(*c),
        Node::Neg(a) => Node::Neg(Box::new(substitute(a, consts))),
        Node::Call(f, a) => Node::Call(*f, Box::new(substitute(a, consts))),
        Node::Binary(op, a, b) => Node::Binary(
            *op,
            Box::new(substitute(a, consts)),
            Box::new(substitute(b, consts)),
        ),
    }
}

fn mark_vars(node: &Node, used: &mut [bool]) {
    match node {
        Node::Const(_) => {}
        Node::Var(i) => used[*i] = true,
        Node::Neg(a) | Node::Call(_, a) => mark_vars(a, used),
        Node::Binary(_, a, b) => {
            mark_vars(a, used);
            mark_vars(b, used);
        }
    }
}

fn eval_node(node: &Node, values: &[f64], env: &[String]) -> Result<f64, EvalError> {
    let describe = || NodeDisplay { node, env }.to_string();
    let v = match node {
        Node::Const(c) => *c,
        Node::Var(i) => values[*i],
        Node::Neg(a) => -eval_node(a, values, env)?,
        Node::Call(f, a) => {
            let x = eval_node(a, values, env)?;
            match f {
                Function::Sin => x.sin(),
                Function::Cos => x.cos(),
                Function::Exp => x.exp(),
                Function::Abs => x.abs(),
                Function::Ln => {
                    if x <= 0.0 {
                        return Err(EvalError::LogDomain {
                            node: describe(),
                            value: x,
                        });
                    }
                    x.ln()
                }
                Function::Sqrt => {
                    if x < 0.0 {
                        return Err(EvalError::SqrtDomain {
                            node: describe(),
                            value: x,
                        });
                    }
                    x.sqrt()
                }
            }
        }
        Node::Binary(op, a, b) => {
            let x = eval_node(a, values, env)?;
            let y = eval_node(b, values, env)?;
            match op {
                BinaryOp::Add => x + y,
                BinaryOp::Sub => x - y,
                BinaryOp::Mul => x * y,
                BinaryOp::Div => {
                    if y == 0.0 {
                        return Err(EvalError::DivisionByZero { node: describe() });
                    }
                    x / y
                }
                BinaryOp::Pow => pow(x, y),
            }
        }
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite { node: describe() })
    }
}

fn pow(x: f64, y: f64) -> f64 {
    if y == y.trunc() && y.abs() <= i32::MAX as f64 {
        x.powi(y as i32)
    } else {
        x.powf(y)
    }
}

struct NodeDisplay<'a> {
    node: &'a Node,
    env: &'a [String],
}

impl fmt::Display for NodeDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sub = |node| NodeDisplay {
            node,
            env: self.env,
        };
        match self.node {
            Node::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => {
                write!(f, "(-{:?})", -c)
            }
            Node::Const(c) => write!(f, "{c:?}"),
            Node::Var(i) => f.write_str(&self.env[*i]),
            Node::Neg(a) => write!(f, "(-{})", sub(a)),
            Node::Call(func, a) => write!(f, "{}({})", func.name(), sub(a)),
            Node::Binary(op, a, b) => write!(f, "({} {} {})", sub(a), op.symbol(), sub(b)),
        }
    }
}

/// Fully parenthesised text that re-parses to an equivalent tree.
impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        NodeDisplay {
            node: &self.root,
            env: &self.env,
        }
        .fmt(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn p(text: &str, env: &[&str]) -> Expression {
        Expression::parse(text, env).unwrap()
    }

    #[test]
    fn markus_yamabe_entry_at_zero() {
        let e = p("-1 + 1.5*cos(t)^2", &["t"]);
        assert_eq!(e.eval(&[0.0]).unwrap(), 0.5);
    }

    #[test]
    fn constant_expression() {
        let e = p("0", &[]);
        assert!(e.is_constant());
        assert_eq!(e.eval(&[]).unwrap(), 0.0);
    }

    #[test]
    fn trailing_operator_reports_offset() {
        match Expression::parse("t*", &["t"]) {
            Err(ParseError::Syntax { offset, .. }) => assert_eq!(offset, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn eval_examples() {
        assert_eq!(p("-1+1.5*cos(t)^2", &["t"]).eval(&[0.0]).unwrap(), 0.5);
        assert_eq!(p("exp(-t)", &["t"]).eval(&[0.0]).unwrap(), 1.0);
        let v = p("1.5*cos(t)*sin(t)", &["t"]).eval(&[PI / 4.0]).unwrap();
        assert!((v - 0.75).abs() < 1e-15);
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(p("-2^2", &[]).eval(&[]).unwrap(), -4.0);
        assert_eq!(p("2^3^2", &[]).eval(&[]).unwrap(), 512.0);
        assert_eq!(p("8/4/2", &[]).eval(&[]).unwrap(), 1.0);
        assert_eq!(p("1-2-3", &[]).eval(&[]).unwrap(), -4.0);
        assert_eq!(p("2^-1", &[]).eval(&[]).unwrap(), 0.5);
        assert_eq!(p("2*3+4*5", &[]).eval(&[]).unwrap(), 26.0);
        assert_eq!(p("1.5e2 + .5", &[]).eval(&[]).unwrap(), 150.5);
        assert!((p("pi", &[]).eval(&[]).unwrap() - PI).abs() < 1e-15);
    }

    #[test]
    fn domain_errors_name_the_node() {
        let e = p("1/(t-1)", &["t"]);
        match e.eval(&[1.0]) {
            Err(EvalError::DivisionByZero { node }) => assert!(node.contains('/')),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            p("ln(t)", &["t"]).eval(&[0.0]),
            Err(EvalError::LogDomain { .. })
        ));
        assert!(matches!(
            p("sqrt(t)", &["t"]).eval(&[-1.0]),
            Err(EvalError::SqrtDomain { .. })
        ));
        assert!(matches!(
            p("exp(t)", &["t"]).eval(&[1000.0]),
            Err(EvalError::NonFinite { .. })
        ));
    }

    #[test]
    fn identifier_errors() {
        assert!(matches!(
            Expression::parse("x1 + y", &["x1"]),
            Err(ParseError::UnknownIdentifier { .. })
        ));
        assert!(matches!(
            Expression::parse("tan(t)", &["t"]),
            Err(ParseError::UnknownFunction { .. })
        ));
        assert!(matches!(
            Expression::parse("sin(t, t)", &["t"]),
            Err(ParseError::Arity { .. })
        ));
        assert!(matches!(
            Expression::parse("sin()", &["t"]),
            Err(ParseError::Arity { .. })
        ));
    }

    #[test]
    fn named_bindings() {
        let e = p("a*x1 + t", &["t", "x1", "a"]);
        let b: HashMap<String, f64> =
            [("t".into(), 1.0), ("x1".into(), 2.0), ("a".into(), 3.0)].into();
        assert_eq!(e.eval_with(&b).unwrap(), 7.0);
        let partial: HashMap<String, f64> = [("t".into(), 1.0)].into();
        assert!(matches!(
            e.eval_with(&partial),
            Err(EvalError::MissingBinding(_))
        ));
    }

    #[test]
    fn derivative_examples() {
        let env = ["t", "x1", "x2"];
        let d = p("x1^2 + t*x1", &env).differentiate("x1").unwrap();
        let expected = p("2*x1 + t", &env);
        for &(t, x) in &[(0.0, 1.0), (1.3, -0.7), (-2.0, 4.0)] {
            let vals = [t, x, 0.0];
            assert!((d.eval(&vals).unwrap() - expected.eval(&vals).unwrap()).abs() < 1e-12);
        }
        let d = p("cos(t)", &env).differentiate("t").unwrap();
        assert!((d.eval(&[0.3, 0.0, 0.0]).unwrap() + 0.3f64.sin()).abs() < 1e-15);
        let d = p("x1", &env).differentiate("x2").unwrap();
        assert_eq!(d.root(), &Node::Const(0.0));
    }

    #[test]
    fn display_reparses() {
        let e = p("-1 + 1.5*cos(t)^2 - 2^-t / (1 + abs(t))", &["t"]);
        let again = Expression::parse(&e.to_string(), &["t"]).unwrap();
        for t in [0.0, 0.5, 1.7, -3.2] {
            assert_eq!(e.eval(&[t]).unwrap(), again.eval(&[t]).unwrap());
        }
    }

    #[test]
    fn rebind_maps_by_name() {
        let e = p("x1 * t", &["t", "x1"]);
        let r = e.rebind(&["x1".into(), "y".into(), "t".into()]).unwrap();
        assert_eq!(r.eval(&[2.0, 0.0, 3.0]).unwrap(), 6.0);
        assert!(e.rebind(&["t".into()]).is_err());
    }
}
