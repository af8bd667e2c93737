//! Reverse-mode automatic differentiation over a dynamically recorded scalar tape.
//!
//! A [`Tape`] records every scalar operation applied to [`Var`]s as an append-only list of
//! nodes. Each node caches the local partial derivatives with respect to its operands, so a
//! single reverse sweep over the tape yields the gradient of any recorded output with respect
//! to the recorded inputs.
//!
//! Simulation code is written once against the [`Real`] trait and runs either on plain `f64`
//! (fast, no recording) or on `Var` (recorded, differentiable).
//!
//! Kinks follow one fixed subgradient convention: `max(a, b)` and `min(a, b)` send the whole
//! derivative to the first operand on ties, `abs'(0) = 0`, and `clamp` has derivative one
//! strictly inside its bounds and zero on or outside them.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum AdError {
    #[error("log of non-positive value {0}")]
    LogDomain(f64),
    #[error("sqrt of negative value {0}")]
    SqrtDomain(f64),
    #[error("division by zero")]
    DivisionByZero,
    #[error("pow of base {base} with exponent {exponent} is undefined")]
    PowDomain { base: f64, exponent: f64 },
    #[error("variable recorded on a different tape")]
    ForeignVar,
    #[error("node {0} is not an input of the tape")]
    NotAnInput(usize),
}

/// Primitive operations that can be recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Input,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Ln,
    Sqrt,
    Sin,
    Cos,
    Tanh,
    Pow,
    Min,
    Max,
    Abs,
    Clamp {
        lo: f64,
        hi: f64,
    },
    /// `acc + sum(a_i * b_i)` over the product terms `start..start + len` of the tape.
    Dot {
        start: u32,
        len: u32,
    },
    /// `bias + sum(w_i * x_i)` with constant weights, over the affine terms of the tape.
    Affine {
        start: u32,
        len: u32,
    },
}

impl Op {
    pub fn arity(self) -> usize {
        match self {
            Op::Input => 0,
            Op::Dot { .. } | Op::Affine { .. } => 1,
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Pow | Op::Min | Op::Max => 2,
            _ => 1,
        }
    }
}

/// Value and local partials `(value, d/da, d/db)` of one primitive.
///
/// Shared by recording and replay so both paths produce bitwise-identical values.
fn apply(op: Op, a: f64, b: f64) -> Result<(f64, f64, f64), AdError> {
    Ok(match op {
        Op::Input => (a, 0.0, 0.0),
        Op::Add => (a + b, 1.0, 1.0),
        Op::Sub => (a - b, 1.0, -1.0),
        Op::Mul => (a * b, b, a),
        Op::Div => {
            if b == 0.0 {
                return Err(AdError::DivisionByZero);
            }
            (a / b, 1.0 / b, -a / (b * b))
        }
        Op::Neg => (-a, -1.0, 0.0),
        Op::Exp => {
            let e = a.exp();
            (e, e, 0.0)
        }
        Op::Ln => {
            if a <= 0.0 {
                return Err(AdError::LogDomain(a));
            }
            (a.ln(), 1.0 / a, 0.0)
        }
        Op::Sqrt => {
            if a < 0.0 {
                return Err(AdError::SqrtDomain(a));
            }
            let s = a.sqrt();
            (s, 0.5 / s, 0.0)
        }
        Op::Sin => (a.sin(), a.cos(), 0.0),
        Op::Cos => (a.cos(), -a.sin(), 0.0),
        Op::Tanh => {
            let t = a.tanh();
            (t, 1.0 - t * t, 0.0)
        }
        Op::Pow => {
            if (a < 0.0 && b.fract() != 0.0) || (a == 0.0 && b < 0.0) {
                return Err(AdError::PowDomain {
                    base: a,
                    exponent: b,
                });
            }
            let v = a.powf(b);
            let da = if b == 0.0 { 0.0 } else { b * a.powf(b - 1.0) };
            let db = if a > 0.0 { v * a.ln() } else { 0.0 };
            (v, da, db)
        }
        Op::Min => {
            if a <= b {
                (a, 1.0, 0.0)
            } else {
                (b, 0.0, 1.0)
            }
        }
        Op::Max => {
            if a >= b {
                (a, 1.0, 0.0)
            } else {
                (b, 0.0, 1.0)
            }
        }
        Op::Abs => {
            let d = if a > 0.0 {
                1.0
            } else if a < 0.0 {
                -1.0
            } else {
                0.0
            };
            (a.abs(), d, 0.0)
        }
        Op::Dot { .. } | Op::Affine { .. } => unreachable!("fused nodes are evaluated by the tape"),
        Op::Clamp { lo, hi } => {
            if a < lo {
                (lo, 0.0, 0.0)
            } else if a > hi {
                (hi, 0.0, 0.0)
            } else if a == lo || a == hi {
                (a, 0.0, 0.0)
            } else {
                (a, 1.0, 0.0)
            }
        }
    })
}

/// Marks an affine term whose input was a constant.
const CONST_TERM: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Operand {
    Node(u32),
    Const(f64),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    args: [Operand; 2],
    partials: [f64; 2],
    value: f64,
}

/// Counters from one reverse sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SweepStats {
    /// Forward cost: recorded nodes plus fused product terms.
    pub forward_nodes: usize,
    /// Nodes visited by the reverse sweep.
    pub nodes_visited: usize,
    /// Adjoint accumulations (one per tracked operand of each visited node).
    pub accumulations: usize,
}

/// Partial derivatives of a recorded output, one per requested input.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub partials: Vec<f64>,
}

impl GradientVector {
    pub fn len(&self) -> usize {
        self.partials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partials.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.partials.iter().all(|g| g.is_finite())
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.partials
    }
}

impl std::ops::Index<usize> for GradientVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.partials[i]
    }
}

/// Append-only record of a scalar computation.
///
/// A tape is single-threaded: it uses interior mutability so that `Var`s can be combined
/// with ordinary operators. Build a fresh tape for every evaluation; buffers of dropped
/// tapes are recycled per thread, so repeated evaluations do not regrow them.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    /// Operand pairs of fused dot-product nodes.
    terms: RefCell<Vec<(Operand, Operand)>>,
    /// `(node, weight)` terms of affine nodes; untracked inputs are stored as
    /// `(CONST_TERM, weight * value)`.
    affine_terms: RefCell<Vec<(u32, f64)>>,
    inputs: RefCell<Vec<u32>>,
    error: Cell<Option<AdError>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("len", &self.len())
            .field("inputs", &self.inputs.borrow().len())
            .field("error", &self.error.get())
            .finish()
    }
}

type Buffers = (
    Vec<Node>,
    Vec<(Operand, Operand)>,
    Vec<(u32, f64)>,
    Vec<u32>,
);

thread_local! {
    static SPARE: RefCell<Option<Buffers>> = const { RefCell::new(None) };
}

impl Default for Tape {
    fn default() -> Self {
        let (nodes, terms, affine_terms, inputs) =
            SPARE.with(|s| s.borrow_mut().take()).unwrap_or_default();
        Self {
            nodes: RefCell::new(nodes),
            terms: RefCell::new(terms),
            affine_terms: RefCell::new(affine_terms),
            inputs: RefCell::new(inputs),
            error: Cell::new(None),
        }
    }
}

impl Drop for Tape {
    fn drop(&mut self) {
        let mut bufs = (
            std::mem::take(self.nodes.get_mut()),
            std::mem::take(self.terms.get_mut()),
            std::mem::take(self.affine_terms.get_mut()),
            std::mem::take(self.inputs.get_mut()),
        );
        bufs.0.clear();
        bufs.1.clear();
        bufs.2.clear();
        bufs.3.clear();
        // Keep the largest set seen; ignore failures during thread teardown.
        let _ = SPARE.try_with(|s| {
            let mut s = s.borrow_mut();
            if !matches!(s.as_ref(), Some(o) if o.0.capacity() > bufs.0.capacity()) {
                *s = Some(bufs);
            }
        });
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        let tape = Self::default();
        tape.nodes.borrow_mut().reserve(nodes);
        tape
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// First domain error hit while recording through operator overloads, if any.
    pub fn error(&self) -> Option<AdError> {
        self.error.get()
    }

    /// Records a new leaf.
    pub fn input(&self, value: f64) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len() as u32;
        nodes.push(Node {
            op: Op::Input,
            args: [Operand::Const(value), Operand::Const(0.0)],
            partials: [0.0, 0.0],
            value,
        });
        self.inputs.borrow_mut().push(index);
        Var {
            tape: Some(self),
            index,
            value,
        }
    }

    /// Records one leaf per value.
    pub fn inputs(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.input(v)).collect()
    }

    fn operand<'t>(&'t self, v: Var<'t>) -> Result<Operand, AdError> {
        match v.tape {
            None => Ok(Operand::Const(v.value)),
            Some(t) if std::ptr::eq(t, self) => Ok(Operand::Node(v.index)),
            Some(_) => Err(AdError::ForeignVar),
        }
    }

    /// Records `op` applied to `operands`.
    ///
    /// If every operand is a constant the result is folded and nothing is recorded.
    pub fn record<'t>(&'t self, op: Op, operands: &[Var<'t>]) -> Result<Var<'t>, AdError> {
        assert_eq!(
            operands.len(),
            op.arity(),
            "{op:?} takes {} operands",
            op.arity()
        );
        let a = operands.first().copied().unwrap_or(Var::constant(0.0));
        let b = operands.get(1).copied().unwrap_or(Var::constant(0.0));
        let (value, da, db) = apply(op, a.value, b.value)?;
        let args = [self.operand(a)?, self.operand(b)?];
        if operands.iter().all(|v| v.tape.is_none()) {
            return Ok(Var::constant(value));
        }
        Ok(self.push(op, args, [da, db], value))
    }

    /// Records `acc + sum(a_i * b_i)` as one node. The value is accumulated left to right,
    /// exactly like the equivalent chain of `+` and `*`.
    pub fn dot<'t>(
        &'t self,
        acc: Var<'t>,
        a: &[Var<'t>],
        b: &[Var<'t>],
    ) -> Result<Var<'t>, AdError> {
        assert_eq!(a.len(), b.len(), "dot operands differ in length");
        let mut value = acc.value;
        for (x, y) in a.iter().zip(b) {
            value += x.value * y.value;
        }
        let tracked = acc.tape.is_some() || a.iter().chain(b).any(|v| v.tape.is_some());
        if !tracked {
            return Ok(Var::constant(value));
        }
        let acc_op = self.operand(acc)?;
        let mut terms = self.terms.borrow_mut();
        let start = terms.len();
        for (&x, &y) in a.iter().zip(b) {
            let (ox, oy) = (self.operand(x)?, self.operand(y)?);
            // A constant zero factor adds nothing to the value or the gradient.
            if ox == Operand::Const(0.0) || oy == Operand::Const(0.0) {
                continue;
            }
            terms.push((ox, oy));
        }
        let len = terms.len() - start;
        drop(terms);
        let op = Op::Dot {
            start: start as u32,
            len: len as u32,
        };
        Ok(self.push(op, [acc_op, Operand::Const(0.0)], [1.0, 0.0], value))
    }

    /// Records `bias + sum(w_i * x_i)` with constant weights as one node.
    ///
    /// The value is accumulated left to right like the equivalent chain of `+` and `*`.
    pub fn affine<'t>(&'t self, bias: f64, w: &[f64], x: &[Var<'t>]) -> Result<Var<'t>, AdError> {
        assert_eq!(w.len(), x.len(), "affine operands differ in length");
        let mut terms = self.affine_terms.borrow_mut();
        let start = terms.len();
        terms.reserve(x.len());
        let mut value = bias;
        let mut tracked = false;
        for (&wi, xi) in w.iter().zip(x) {
            value += wi * xi.value;
            match xi.tape {
                None => terms.push((CONST_TERM, wi * xi.value)),
                Some(t) if std::ptr::eq(t, self) => {
                    tracked = true;
                    terms.push((xi.index, wi));
                }
                Some(_) => {
                    terms.truncate(start);
                    return Err(AdError::ForeignVar);
                }
            }
        }
        if !tracked {
            terms.truncate(start);
            return Ok(Var::constant(value));
        }
        drop(terms);
        let op = Op::Affine {
            start: start as u32,
            len: x.len() as u32,
        };
        Ok(self.push(
            op,
            [Operand::Const(bias), Operand::Const(0.0)],
            [1.0, 0.0],
            value,
        ))
    }

    /// Marks the tape as failed and returns a NaN placeholder node.
    fn poison<'t>(&'t self, e: AdError) -> Var<'t> {
        if self.error.get().is_none() {
            self.error.set(Some(e));
        }
        self.push(
            Op::Neg,
            [Operand::Const(f64::NAN), Operand::Const(0.0)],
            [f64::NAN, 0.0],
            f64::NAN,
        )
    }

    fn push(&self, op: Op, args: [Operand; 2], partials: [f64; 2], value: f64) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len() as u32;
        nodes.push(Node {
            op,
            args,
            partials,
            value,
        });
        Var {
            tape: Some(self),
            index,
            value,
        }
    }

    /// Operator-overload path: domain errors poison the tape and yield NaN.
    fn record_or_poison<'t>(&'t self, op: Op, operands: &[Var<'t>]) -> Var<'t> {
        match self.record(op, operands) {
            Ok(v) => v,
            Err(e) => {
                if self.error.get().is_none() {
                    self.error.set(Some(e));
                }
                let args = [
                    operands.first().map_or(Operand::Const(0.0), |v| {
                        self.operand(*v).unwrap_or(Operand::Const(v.value))
                    }),
                    operands.get(1).map_or(Operand::Const(0.0), |v| {
                        self.operand(*v).unwrap_or(Operand::Const(v.value))
                    }),
                ];
                self.push(op, args, [f64::NAN, f64::NAN], f64::NAN)
            }
        }
    }

    /// Gradient of `output` with respect to each of `inputs` via one reverse sweep.
    pub fn gradient(&self, output: Var<'_>, inputs: &[Var<'_>]) -> Result<GradientVector, AdError> {
        self.gradient_with_stats(output, inputs).map(|(g, _)| g)
    }

    pub fn gradient_with_stats(
        &self,
        output: Var<'_>,
        inputs: &[Var<'_>],
    ) -> Result<(GradientVector, SweepStats), AdError> {
        if let Some(e) = self.error.get() {
            return Err(e);
        }
        let nodes = self.nodes.borrow();
        let terms = self.terms.borrow();
        let affine_terms = self.affine_terms.borrow();
        let mut stats = SweepStats {
            forward_nodes: nodes.len() + terms.len() + affine_terms.len(),
            ..SweepStats::default()
        };
        for v in inputs {
            match v.tape {
                Some(t) if std::ptr::eq(t, self) => {
                    if nodes[v.index as usize].op != Op::Input {
                        return Err(AdError::NotAnInput(v.index as usize));
                    }
                }
                _ => return Err(AdError::ForeignVar),
            }
        }
        let out = match output.tape {
            None => {
                return Ok((
                    GradientVector {
                        partials: vec![0.0; inputs.len()],
                    },
                    stats,
                ))
            }
            Some(t) if std::ptr::eq(t, self) => output.index as usize,
            Some(_) => return Err(AdError::ForeignVar),
        };

        let mut adjoint = vec![0.0; out + 1];
        adjoint[out] = 1.0;
        for i in (0..=out).rev() {
            stats.nodes_visited += 1;
            let a = adjoint[i];
            if a == 0.0 {
                continue;
            }
            let node = &nodes[i];
            for (arg, partial) in node.args.iter().zip(node.partials).take(node.op.arity()) {
                if let Operand::Node(j) = *arg {
                    adjoint[j as usize] += a * partial;
                    stats.accumulations += 1;
                }
            }
            if let Op::Affine { start, len } = node.op {
                for &(j, w) in &affine_terms[start as usize..(start + len) as usize] {
                    if j != CONST_TERM {
                        adjoint[j as usize] += a * w;
                        stats.accumulations += 1;
                    }
                }
            }
            if let Op::Dot { start, len } = node.op {
                let value = |o: Operand| match o {
                    Operand::Node(j) => nodes[j as usize].value,
                    Operand::Const(c) => c,
                };
                for &(x, y) in &terms[start as usize..(start + len) as usize] {
                    if let Operand::Node(j) = x {
                        adjoint[j as usize] += a * value(y);
                        stats.accumulations += 1;
                    }
                    if let Operand::Node(k) = y {
                        adjoint[k as usize] += a * value(x);
                        stats.accumulations += 1;
                    }
                }
            }
        }
        let partials = inputs
            .iter()
            .map(|v| adjoint.get(v.index as usize).copied().unwrap_or(0.0))
            .collect();
        Ok((GradientVector { partials }, stats))
    }

    /// Recomputes every node value from the recorded inputs.
    pub fn replay(&self) -> Result<Vec<f64>, AdError> {
        let inputs: Vec<f64> = {
            let nodes = self.nodes.borrow();
            self.inputs
                .borrow()
                .iter()
                .map(|&i| nodes[i as usize].value)
                .collect()
        };
        self.replay_with(&inputs)
    }

    /// Recomputes every node value with new input values, in input creation order.
    ///
    /// Control flow is frozen at record time, so the result is only meaningful for inputs
    /// that would have taken the same branches.
    pub fn replay_with(&self, inputs: &[f64]) -> Result<Vec<f64>, AdError> {
        let nodes = self.nodes.borrow();
        let terms = self.terms.borrow();
        let affine_terms = self.affine_terms.borrow();
        assert_eq!(
            inputs.len(),
            self.inputs.borrow().len(),
            "input count mismatch"
        );
        let mut values = Vec::with_capacity(nodes.len());
        let mut next_input = 0;
        for node in nodes.iter() {
            let value = if node.op == Op::Input {
                next_input += 1;
                inputs[next_input - 1]
            } else {
                let fetch = |o: Operand| match o {
                    Operand::Node(j) => values[j as usize],
                    Operand::Const(c) => c,
                };
                if let Op::Dot { start, len } = node.op {
                    terms[start as usize..(start + len) as usize]
                        .iter()
                        .fold(fetch(node.args[0]), |acc, &(x, y)| {
                            acc + fetch(x) * fetch(y)
                        })
                } else if let Op::Affine { start, len } = node.op {
                    affine_terms[start as usize..(start + len) as usize]
                        .iter()
                        .fold(fetch(node.args[0]), |acc, &(j, w)| {
                            if j == CONST_TERM {
                                acc + w
                            } else {
                                acc + w * values[j as usize]
                            }
                        })
                } else {
                    apply(node.op, fetch(node.args[0]), fetch(node.args[1]))?.0
                }
            };
            values.push(value);
        }
        Ok(values)
    }

    /// Values as recorded, in node order.
    pub fn values(&self) -> Vec<f64> {
        self.nodes.borrow().iter().map(|n| n.value).collect()
    }
}

/// Handle to a scalar on a tape, or a constant that is not tracked.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    index: u32,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tape {
            Some(_) => write!(f, "Var(#{} = {})", self.index, self.value),
            None => write!(f, "Const({})", self.value),
        }
    }
}

impl<'t> Var<'t> {
    /// An untracked constant; combining it with tracked vars records only the tracked side.
    pub fn constant(value: f64) -> Self {
        Var {
            tape: None,
            index: u32::MAX,
            value,
        }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn is_constant(&self) -> bool {
        self.tape.is_none()
    }

    /// Node index on the owning tape, `None` for constants.
    pub fn index(&self) -> Option<usize> {
        self.tape.map(|_| self.index as usize)
    }

    fn unary(self, op: Op) -> Self {
        match self.tape {
            Some(t) => t.record_or_poison(op, &[self]),
            None => Var::constant(apply(op, self.value, 0.0).map_or(f64::NAN, |r| r.0)),
        }
    }

    fn binary(self, op: Op, rhs: Self) -> Self {
        match self.tape.or(rhs.tape) {
            Some(t) => t.record_or_poison(op, &[self, rhs]),
            None => Var::constant(apply(op, self.value, rhs.value).map_or(f64::NAN, |r| r.0)),
        }
    }
}

macro_rules! var_binop {
    ($trait:ident, $method:ident, $op:expr) => {
        impl<'t> $trait for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                self.binary($op, rhs)
            }
        }
        impl<'t> $trait<f64> for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: f64) -> Var<'t> {
                self.binary($op, Var::constant(rhs))
            }
        }
        impl<'t> $trait<Var<'t>> for f64 {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                Var::constant(self).binary($op, rhs)
            }
        }
    };
}

var_binop!(Add, add, Op::Add);
var_binop!(Sub, sub, Op::Sub);
var_binop!(Mul, mul, Op::Mul);
var_binop!(Div, div, Op::Div);

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(Op::Neg)
    }
}

/// Scalar arithmetic shared by plain `f64` evaluation and recorded `Var` evaluation.
pub trait Real:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn constant(c: f64) -> Self;
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tanh(self) -> Self;
    fn powf(self, exponent: f64) -> Self;
    fn abs(self) -> Self;
    fn min(self, other: Self) -> Self;
    fn max(self, other: Self) -> Self;
    fn clamp(self, lo: f64, hi: f64) -> Self;
    /// `true` when the value carries no derivative information.
    fn is_constant(self) -> bool;

    /// `acc + sum(a_i * b_i)`, accumulated left to right.
    fn dot(acc: Self, a: &[Self], b: &[Self]) -> Self {
        assert_eq!(a.len(), b.len(), "dot operands differ in length");
        a.iter().zip(b).fold(acc, |s, (&x, &y)| s + x * y)
    }

    /// `bias + sum(w_i * x_i)` with constant weights, accumulated left to right.
    fn affine(bias: f64, w: &[f64], x: &[Self]) -> Self {
        assert_eq!(w.len(), x.len(), "affine operands differ in length");
        w.iter()
            .zip(x)
            .fold(Self::constant(bias), |s, (&wi, &xi)| s + xi * wi)
    }

    fn square(self) -> Self {
        self * self
    }
}

impl Real for f64 {
    fn constant(c: f64) -> Self {
        c
    }
    fn value(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn powf(self, exponent: f64) -> Self {
        f64::powf(self, exponent)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn min(self, other: Self) -> Self {
        if self <= other {
            self
        } else {
            other
        }
    }
    fn max(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }
    fn is_constant(self) -> bool {
        true
    }
    fn clamp(self, lo: f64, hi: f64) -> Self {
        if self < lo {
            lo
        } else if self > hi {
            hi
        } else {
            self
        }
    }
}

impl Real for Var<'_> {
    fn constant(c: f64) -> Self {
        Var::constant(c)
    }
    fn value(self) -> f64 {
        self.value
    }
    fn exp(self) -> Self {
        self.unary(Op::Exp)
    }
    fn ln(self) -> Self {
        self.unary(Op::Ln)
    }
    fn sqrt(self) -> Self {
        self.unary(Op::Sqrt)
    }
    fn sin(self) -> Self {
        self.unary(Op::Sin)
    }
    fn cos(self) -> Self {
        self.unary(Op::Cos)
    }
    fn tanh(self) -> Self {
        self.unary(Op::Tanh)
    }
    fn powf(self, exponent: f64) -> Self {
        self.binary(Op::Pow, Var::constant(exponent))
    }
    fn abs(self) -> Self {
        self.unary(Op::Abs)
    }
    fn min(self, other: Self) -> Self {
        self.binary(Op::Min, other)
    }
    fn max(self, other: Self) -> Self {
        self.binary(Op::Max, other)
    }
    fn clamp(self, lo: f64, hi: f64) -> Self {
        self.unary(Op::Clamp { lo, hi })
    }
    fn is_constant(self) -> bool {
        Var::is_constant(&self)
    }
    fn dot(acc: Self, a: &[Self], b: &[Self]) -> Self {
        let tape = acc.tape.or_else(|| a.iter().chain(b).find_map(|v| v.tape));
        match tape {
            Some(t) => t.dot(acc, a, b).unwrap_or_else(|e| t.poison(e)),
            None => {
                let v = a
                    .iter()
                    .zip(b)
                    .fold(acc.value, |s, (x, y)| s + x.value * y.value);
                Var::constant(v)
            }
        }
    }
    fn affine(bias: f64, w: &[f64], x: &[Self]) -> Self {
        match x.iter().find_map(|v| v.tape) {
            Some(t) => t.affine(bias, w, x).unwrap_or_else(|e| t.poison(e)),
            None => {
                let v = w.iter().zip(x).fold(bias, |s, (wi, xi)| s + wi * xi.value);
                Var::constant(v)
            }
        }
    }
}

/// Left fold of binary `min`, so the subgradient lands on exactly one element.
pub fn fold_min<R: Real>(items: impl IntoIterator<Item = R>) -> Option<R> {
    items.into_iter().reduce(|acc, x| acc.min(x))
}

pub fn sum<R: Real>(items: impl IntoIterator<Item = R>) -> R {
    items
        .into_iter()
        .reduce(|acc, x| acc + x)
        .unwrap_or(R::constant(0.0))
}
