use super::{BinaryOp, Function, Node};

fn constant(node: &Node) -> Option<f64> {
    match node {
        Node::Const(c) => Some(*c),
        _ => None,
    }
}

fn fold(value: f64, fallback: Node) -> Node {
    if value.is_finite() {
        Node::Const(value)
    } else {
        fallback
    }
}

fn add(a: Node, b: Node) -> Node {
    match (constant(&a), constant(&b)) {
        (Some(x), Some(y)) => fold(x + y, Node::Binary(BinaryOp::Add, a.into(), b.into())),
        (Some(0.0), _) => b,
        (_, Some(0.0)) => a,
        _ => Node::Binary(BinaryOp::Add, a.into(), b.into()),
    }
}

fn sub(a: Node, b: Node) -> Node {
    match (constant(&a), constant(&b)) {
        (Some(x), Some(y)) => fold(x - y, Node::Binary(BinaryOp::Sub, a.into(), b.into())),
        (Some(0.0), _) => neg(b),
        (_, Some(0.0)) => a,
        _ => Node::Binary(BinaryOp::Sub, a.into(), b.into()),
    }
}

fn neg(a: Node) -> Node {
    match a {
        Node::Const(c) => Node::Const(-c),
        Node::Neg(inner) => *inner,
        other => Node::Neg(other.into()),
    }
}

fn mul(a: Node, b: Node) -> Node {
    match (constant(&a), constant(&b)) {
        (Some(x), Some(y)) => fold(x * y, Node::Binary(BinaryOp::Mul, a.into(), b.into())),
        (Some(0.0), _) | (_, Some(0.0)) => Node::Const(0.0),
        (Some(1.0), _) => b,
        (_, Some(1.0)) => a,
        (Some(-1.0), _) => neg(b),
        (_, Some(-1.0)) => neg(a),
        _ => Node::Binary(BinaryOp::Mul, a.into(), b.into()),
    }
}

fn div(a: Node, b: Node) -> Node {
    match (constant(&a), constant(&b)) {
        (Some(0.0), _) => Node::Const(0.0),
        (_, Some(1.0)) => a,
        _ => Node::Binary(BinaryOp::Div, a.into(), b.into()),
    }
}

fn pow(a: Node, b: Node) -> Node {
    match constant(&b) {
        Some(1.0) => a,
        Some(0.0) => Node::Const(1.0),
        _ => Node::Binary(BinaryOp::Pow, a.into(), b.into()),
    }
}

fn call(f: Function, a: Node) -> Node {
    Node::Call(f, a.into())
}

fn depends_on(node: &Node, var: usize) -> bool {
    match node {
        Node::Const(_) => false,
        Node::Var(i) => *i == var,
        Node::Neg(a) | Node::Call(_, a) => depends_on(a, var),
        Node::Binary(_, a, b) => depends_on(a, var) || depends_on(b, var),
    }
}

/// d(node)/d(var) with light constant folding.
pub(super) fn derivative(node: &Node, var: usize) -> Node {
    if !depends_on(node, var) {
        return Node::Const(0.0);
    }
    match node {
        Node::Const(_) => Node::Const(0.0),
        Node::Var(i) => Node::Const(if *i == var { 1.0 } else { 0.0 }),
        Node::Neg(a) => neg(derivative(a, var)),
        Node::Call(f, a) => {
            let u = (**a).clone();
            let du = derivative(a, var);
            let outer = match f {
                Function::Sin => call(Function::Cos, u),
                Function::Cos => neg(call(Function::Sin, u)),
                Function::Exp => call(Function::Exp, u),
                Function::Ln => return div(du, u),
                // sign(u) written as u/|u|; undefined at u = 0 like the function itself
                Function::Abs => div(u.clone(), call(Function::Abs, u)),
                Function::Sqrt => {
                    return div(du, mul(Node::Const(2.0), call(Function::Sqrt, u)));
                }
            };
            mul(du, outer)
        }
        Node::Binary(op, a, b) => {
            let (u, v) = ((**a).clone(), (**b).clone());
            let (du, dv) = (derivative(a, var), derivative(b, var));
            match op {
                BinaryOp::Add => add(du, dv),
                BinaryOp::Sub => sub(du, dv),
                BinaryOp::Mul => add(mul(du, v), mul(u, dv)),
                BinaryOp::Div => div(
                    sub(mul(du, v.clone()), mul(u, dv)),
                    pow(v, Node::Const(2.0)),
                ),
                BinaryOp::Pow => {
                    if !depends_on(b, var) {
                        // v * u^(v-1) * u'
                        let reduced = match constant(&v) {
                            Some(c) => Node::Const(c - 1.0),
                            None => sub(v.clone(), Node::Const(1.0)),
                        };
                        mul(mul(v, pow(u, reduced)), du)
                    } else {
                        // u^v * (v' ln u + v u'/u)
                        let inner = add(
                            mul(dv, call(Function::Ln, u.clone())),
                            div(mul(v.clone(), du), u.clone()),
                        );
                        mul(pow(u, v), inner)
                    }
                }
            }
        }
    }
}
