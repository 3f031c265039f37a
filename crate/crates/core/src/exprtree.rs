//! Expression trees for composite features: operator registry with protected
//! semantics, column-wise evaluation, prefix serialization, and size metrics.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use crate::data::Matrix;
use crate::error::{Error, Result};

/// Guard below which protected division/log/inv treat an argument as zero.
pub const PROTECT_EPS: f64 = 1e-9;
/// Clamp bound for unbounded operator outputs and sanitized infinities.
pub const VALUE_CLAMP: f64 = 1e12;
/// Argument clamp for exp-based operators.
const EXP_ARG_CLAMP: f64 = 50.0;

/// Operator category, informational only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Arithmetic,
    Protected,
    Trig,
    Hyperbolic,
    MinMax,
    Activation,
    Conditional,
}

/// The full operator registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Inv,
    Neg,
    Abs,
    Log,
    Sqrt,
    Pow,
    Sin,
    Cos,
    Tan,
    Sinh,
    Cosh,
    Tanh,
    Min,
    Max,
    Sigmoid,
    Relu,
    Lrelu,
    Swish,
    IfThen,
}

impl Op {
    pub const ALL: [Op; 23] = [
        Op::Add,
        Op::Sub,
        Op::Mul,
        Op::Div,
        Op::Inv,
        Op::Neg,
        Op::Abs,
        Op::Log,
        Op::Sqrt,
        Op::Pow,
        Op::Sin,
        Op::Cos,
        Op::Tan,
        Op::Sinh,
        Op::Cosh,
        Op::Tanh,
        Op::Min,
        Op::Max,
        Op::Sigmoid,
        Op::Relu,
        Op::Lrelu,
        Op::Swish,
        Op::IfThen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Inv => "inv",
            Op::Neg => "neg",
            Op::Abs => "abs",
            Op::Log => "log",
            Op::Sqrt => "sqrt",
            Op::Pow => "pow",
            Op::Sin => "sin",
            Op::Cos => "cos",
            Op::Tan => "tan",
            Op::Sinh => "sinh",
            Op::Cosh => "cosh",
            Op::Tanh => "tanh",
            Op::Min => "min",
            Op::Max => "max",
            Op::Sigmoid => "sigmoid",
            Op::Relu => "relu",
            Op::Lrelu => "lrelu",
            Op::Swish => "swish",
            Op::IfThen => "if_then",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Op::Add
            | Op::Sub
            | Op::Mul
            | Op::Div
            | Op::Pow
            | Op::Min
            | Op::Max => 2,
            Op::IfThen => 3,
            _ => 1,
        }
    }

    pub fn kind(self) -> OpKind {
        match self {
            Op::Add | Op::Sub | Op::Mul | Op::Neg | Op::Abs => OpKind::Arithmetic,
            Op::Div | Op::Inv | Op::Log | Op::Sqrt | Op::Pow => OpKind::Protected,
            Op::Sin | Op::Cos | Op::Tan => OpKind::Trig,
            Op::Sinh | Op::Cosh | Op::Tanh => OpKind::Hyperbolic,
            Op::Min | Op::Max => OpKind::MinMax,
            Op::Sigmoid | Op::Relu | Op::Lrelu | Op::Swish => OpKind::Activation,
            Op::IfThen => OpKind::Conditional,
        }
    }

    pub fn by_name(name: &str) -> Option<Op> {
        Op::ALL.iter().copied().find(|op| op.name() == name)
    }

    /// Applies the operator to an argument slice, checking arity.
    pub fn apply(self, args: &[f64]) -> Result<f64> {
        if args.len() != self.arity() {
            return Err(Error::Arity {
                op: self.name(),
                expected: self.arity(),
                got: args.len(),
            });
        }
        Ok(match self.arity() {
            1 => self.apply1(args[0]),
            2 => self.apply2(args[0], args[1]),
            _ => self.apply3(args[0], args[1], args[2]),
        })
    }

    pub(crate) fn apply1(self, a: f64) -> f64 {
        match self {
            Op::Inv => {
                if a.abs() > PROTECT_EPS {
                    1.0 / a
                } else {
                    1.0
                }
            }
            Op::Neg => -a,
            Op::Abs => a.abs(),
            Op::Log => {
                if a.abs() > PROTECT_EPS {
                    a.abs().ln()
                } else {
                    0.0
                }
            }
            Op::Sqrt => a.abs().sqrt(),
            Op::Sin => a.sin(),
            Op::Cos => a.cos(),
            Op::Tan => a.tan().clamp(-VALUE_CLAMP, VALUE_CLAMP),
            Op::Sinh => a.clamp(-EXP_ARG_CLAMP, EXP_ARG_CLAMP).sinh(),
            Op::Cosh => a.clamp(-EXP_ARG_CLAMP, EXP_ARG_CLAMP).cosh(),
            Op::Tanh => a.clamp(-EXP_ARG_CLAMP, EXP_ARG_CLAMP).tanh(),
            Op::Sigmoid => sigmoid(a),
            Op::Relu => a.max(0.0),
            Op::Lrelu => {
                if a > 0.0 {
                    a
                } else {
                    0.01 * a
                }
            }
            Op::Swish => {
                let x = a.clamp(-EXP_ARG_CLAMP, EXP_ARG_CLAMP);
                x * sigmoid(x)
            }
            _ => unreachable!("unary apply on {}", self.name()),
        }
    }

    pub(crate) fn apply2(self, a: f64, b: f64) -> f64 {
        match self {
            Op::Add => a + b,
            Op::Sub => a - b,
            Op::Mul => a * b,
            Op::Div => {
                if b.abs() > PROTECT_EPS {
                    a / b
                } else {
                    1.0
                }
            }
            Op::Pow => {
                let m = a.abs().powf(b);
                let r = if m.is_finite() {
                    a.signum() * m
                } else if a == 0.0 {
                    // 0^negative
                    0.0
                } else {
                    a.signum() * VALUE_CLAMP
                };
                r.clamp(-VALUE_CLAMP, VALUE_CLAMP)
            }
            Op::Min => a.min(b),
            Op::Max => a.max(b),
            _ => unreachable!("binary apply on {}", self.name()),
        }
    }

    pub(crate) fn apply3(self, a: f64, b: f64, c: f64) -> f64 {
        match self {
            Op::IfThen => {
                if a > 0.0 {
                    b
                } else {
                    c
                }
            }
            _ => unreachable!("ternary apply on {}", self.name()),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    let x = x.clamp(-EXP_ARG_CLAMP, EXP_ARG_CLAMP);
    1.0 / (1.0 + (-x).exp())
}

/// One node of an expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Op { op: Op, children: Vec<Node> },
    Feature { index: usize, name: Arc<str> },
    Const(f64),
}

impl Node {
    pub fn node_count(&self) -> usize {
        match self {
            Node::Op { children, .. } => {
                1 + children.iter().map(Node::node_count).sum::<usize>()
            }
            _ => 1,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Op { children, .. } => {
                1 + children.iter().map(Node::depth).max().unwrap_or(0)
            }
            _ => 0,
        }
    }
}

/// A rooted composite-feature expression. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionTree {
    root: Node,
}

impl ExpressionTree {
    pub fn new(root: Node) -> Self {
        ExpressionTree { root }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn node_count(&self) -> usize {
        self.root.node_count()
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    /// Column-wise evaluation over all rows of `features`. Output is
    /// sanitized; the flag reports whether any raw entry was non-finite.
    pub fn evaluate(&self, features: &Matrix) -> Result<(Vec<f64>, bool)> {
        let raw = eval_node(&self.root, features)?;
        let had_non_finite = raw.iter().any(|v| !v.is_finite());
        Ok((sanitize(raw), had_non_finite))
    }

    /// Canonical parenthesized prefix form.
    pub fn serialize(&self) -> String {
        self.to_string()
    }

    /// Human-readable infix rendering for reports.
    pub fn infix(&self) -> String {
        let mut s = String::new();
        write_infix(&self.root, &mut s);
        s
    }
}

fn eval_node(node: &Node, features: &Matrix) -> Result<Vec<f64>> {
    let n = features.n_rows();
    match node {
        Node::Const(c) => Ok(vec![*c; n]),
        Node::Feature { index, .. } => {
            if *index >= features.n_cols() {
                return Err(Error::ColumnIndex {
                    index: *index,
                    n_features: features.n_cols(),
                });
            }
            Ok(features.col(*index).to_vec())
        }
        Node::Op { op, children } => {
            let mut cols = Vec::with_capacity(children.len());
            for child in children {
                cols.push(eval_node(child, features)?);
            }
            let mut out = Vec::with_capacity(n);
            match op.arity() {
                1 => {
                    for i in 0..n {
                        out.push(op.apply1(cols[0][i]));
                    }
                }
                2 => {
                    for i in 0..n {
                        out.push(op.apply2(cols[0][i], cols[1][i]));
                    }
                }
                _ => {
                    for i in 0..n {
                        out.push(op.apply3(cols[0][i], cols[1][i], cols[2][i]));
                    }
                }
            }
            Ok(out)
        }
    }
}

/// NaN -> 0, +inf -> +1e12, -inf -> -1e12; finite values pass through.
pub fn sanitize(mut values: Vec<f64>) -> Vec<f64> {
    for v in values.iter_mut() {
        if v.is_nan() {
            *v = 0.0;
        } else if *v == f64::INFINITY {
            *v = VALUE_CLAMP;
        } else if *v == f64::NEG_INFINITY {
            *v = -VALUE_CLAMP;
        }
    }
    values
}

/// Rounds an ephemeral constant to 6 significant digits so canonical text
/// round-trips exactly.
pub fn quantize_constant(x: f64) -> f64 {
    format!("{x:.5e}").parse().expect("finite constant")
}

impl fmt::Display for ExpressionTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_prefix(&self.root, f)
    }
}

fn write_prefix(node: &Node, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match node {
        Node::Const(c) => write!(f, "{c}"),
        Node::Feature { name, .. } => write!(f, "{name}"),
        Node::Op { op, children } => {
            write!(f, "({}", op.name())?;
            for child in children {
                write!(f, " ")?;
                write_prefix(child, f)?;
            }
            write!(f, ")")
        }
    }
}

fn write_infix(node: &Node, out: &mut String) {
    match node {
        Node::Const(c) => out.push_str(&c.to_string()),
        Node::Feature { name, .. } => out.push_str(name),
        Node::Op { op, children } => match op {
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Pow => {
                let sym = match op {
                    Op::Add => " + ",
                    Op::Sub => " - ",
                    Op::Mul => " * ",
                    Op::Div => " / ",
                    _ => " ^ ",
                };
                out.push('(');
                write_infix(&children[0], out);
                out.push_str(sym);
                write_infix(&children[1], out);
                out.push(')');
            }
            Op::Neg => {
                out.push_str("(-");
                write_infix(&children[0], out);
                out.push(')');
            }
            Op::Inv => {
                out.push_str("(1 / ");
                write_infix(&children[0], out);
                out.push(')');
            }
            Op::IfThen => {
                out.push_str("if(");
                write_infix(&children[0], out);
                out.push_str(" > 0, ");
                write_infix(&children[1], out);
                out.push_str(", ");
                write_infix(&children[2], out);
                out.push(')');
            }
            _ => {
                out.push_str(op.name());
                out.push('(');
                for (i, child) in children.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    write_infix(child, out);
                }
                out.push(')');
            }
        },
    }
}

/// Maps dataset column headers to leaf nodes.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    names: Vec<Arc<str>>,
    index: HashMap<String, usize>,
}

impl FeatureTable {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Config("feature table must be nonempty".into()));
        }
        let mut index = HashMap::new();
        let mut arcs = Vec::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            let name = name.as_ref();
            if index.insert(name.to_string(), i).is_some() {
                return Err(Error::Config(format!("duplicate feature name `{name}`")));
            }
            arcs.push(Arc::from(name));
        }
        Ok(FeatureTable {
            names: arcs,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, i: usize) -> &Arc<str> {
        &self.names[i]
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(|n| n.as_ref())
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn leaf(&self, i: usize) -> Node {
        Node::Feature {
            index: i,
            name: self.names[i].clone(),
        }
    }
}

#[derive(Debug, Clone)]
enum Token<'a> {
    Open(usize),
    Close(usize),
    Atom(usize, &'a str),
}

fn tokenize(text: &str) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'(' => {
                tokens.push(Token::Open(i));
                i += 1;
            }
            b')' => {
                tokens.push(Token::Close(i));
                i += 1;
            }
            c if c.is_ascii_whitespace() => i += 1,
            _ => {
                let start = i;
                while i < bytes.len()
                    && !bytes[i].is_ascii_whitespace()
                    && bytes[i] != b'('
                    && bytes[i] != b')'
                {
                    i += 1;
                }
                tokens.push(Token::Atom(start, &text[start..i]));
            }
        }
    }
    tokens
}

fn looks_numeric(atom: &str) -> bool {
    atom.starts_with(|c: char| c.is_ascii_digit() || c == '-' || c == '+' || c == '.')
}

/// Parses canonical prefix form against a feature table.
pub fn parse(text: &str, features: &FeatureTable) -> Result<ExpressionTree> {
    let tokens = tokenize(text);
    let mut pos = 0;
    let root = parse_expr(&tokens, &mut pos, features, text.len())?;
    if pos != tokens.len() {
        let at = match tokens[pos] {
            Token::Open(p) | Token::Close(p) | Token::Atom(p, _) => p,
        };
        return Err(Error::Parse {
            position: at,
            message: "trailing input after expression".into(),
        });
    }
    Ok(ExpressionTree::new(root))
}

fn parse_expr(
    tokens: &[Token<'_>],
    pos: &mut usize,
    features: &FeatureTable,
    end: usize,
) -> Result<Node> {
    let token = tokens.get(*pos).ok_or(Error::Parse {
        position: end,
        message: "unexpected end of input".into(),
    })?;
    match token {
        Token::Close(p) => Err(Error::Parse {
            position: *p,
            message: "unexpected `)`".into(),
        }),
        Token::Atom(p, atom) => {
            *pos += 1;
            parse_atom(*p, atom, features)
        }
        Token::Open(p) => {
            let open = *p;
            *pos += 1;
            let (op_pos, op_name) = match tokens.get(*pos) {
                Some(Token::Atom(p, a)) => (*p, *a),
                _ => {
                    return Err(Error::Parse {
                        position: open,
                        message: "expected operator name after `(`".into(),
                    })
                }
            };
            let op = Op::by_name(op_name).ok_or_else(|| Error::Parse {
                position: op_pos,
                message: format!("unknown operator `{op_name}`"),
            })?;
            *pos += 1;
            let mut children = Vec::with_capacity(op.arity());
            for _ in 0..op.arity() {
                children.push(parse_expr(tokens, pos, features, end)?);
            }
            match tokens.get(*pos) {
                Some(Token::Close(_)) => {
                    *pos += 1;
                    Ok(Node::Op { op, children })
                }
                Some(Token::Open(p)) | Some(Token::Atom(p, _)) => Err(Error::Parse {
                    position: *p,
                    message: format!(
                        "operator `{}` takes {} arguments",
                        op.name(),
                        op.arity()
                    ),
                }),
                None => Err(Error::Parse {
                    position: end,
                    message: "missing `)`".into(),
                }),
            }
        }
    }
}

fn parse_atom(pos: usize, atom: &str, features: &FeatureTable) -> Result<Node> {
    if let Some(i) = features.get(atom) {
        return Ok(features.leaf(i));
    }
    if looks_numeric(atom) {
        if let Ok(v) = atom.parse::<f64>() {
            if v.is_finite() {
                return Ok(Node::Const(v));
            }
        }
        return Err(Error::Parse {
            position: pos,
            message: format!("invalid numeric literal `{atom}`"),
        });
    }
    Err(Error::UnknownFeature(atom.to_string()))
}

/// Extracts the sets of operator names and feature names mentioned in a
/// serialized expression, without needing a feature table. Used by analyses
/// that work from run logs alone.
pub fn scan_items(text: &str) -> Result<(BTreeSet<String>, BTreeSet<String>)> {
    let mut ops = BTreeSet::new();
    let mut feats = BTreeSet::new();
    let tokens = tokenize(text);
    let mut expect_op = false;
    for token in &tokens {
        match token {
            Token::Open(_) => expect_op = true,
            Token::Close(_) => expect_op = false,
            Token::Atom(p, atom) => {
                if expect_op {
                    if Op::by_name(atom).is_none() {
                        return Err(Error::Parse {
                            position: *p,
                            message: format!("unknown operator `{atom}`"),
                        });
                    }
                    ops.insert(atom.to_string());
                    expect_op = false;
                } else if !(looks_numeric(atom) && atom.parse::<f64>().is_ok()) {
                    feats.insert(atom.to_string());
                }
            }
        }
    }
    Ok((ops, feats))
}
