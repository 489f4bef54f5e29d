//! Tape-based reverse-mode automatic differentiation over `f64` scalars.
//!
//! Every operation on a [`Var`] appends a node holding the local partial
//! derivatives with respect to its (at most two) parents. A single reverse
//! sweep over the tape then yields the gradient of one output with respect
//! to every input. Constants never touch the tape.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Scalar;

#[derive(Clone, Copy, Debug)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
    arity: u8,
}

/// Recording of one evaluation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    branches: RefCell<Vec<bool>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers an independent input.
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.push(Node {
            parents: [0; 2],
            partials: [0.0; 2],
            arity: 0,
        });
        Var {
            tape: Some(self),
            idx,
            val: value,
        }
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sequence of discrete decisions (max/min selections, threshold tests)
    /// taken while recording. Two evaluations with equal signatures lie on
    /// the same smooth piece of the objective.
    pub fn branch_signature(&self) -> Vec<bool> {
        self.branches.borrow().clone()
    }

    fn push(&self, node: Node) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = u32::try_from(nodes.len()).expect("tape exceeds u32 nodes");
        nodes.push(node);
        idx
    }

    fn record_branch(&self, taken: bool) {
        self.branches.borrow_mut().push(taken);
    }

    /// Adjoints of every node with respect to `output`.
    fn adjoints(&self, output: u32) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; nodes.len()];
        adj[output as usize] = 1.0;
        for i in (0..=output as usize).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = nodes[i];
            for p in 0..node.arity as usize {
                adj[node.parents[p] as usize] += a * node.partials[p];
            }
        }
        adj
    }
}

/// A value that is either a constant or a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    idx: u32,
    val: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tape {
            Some(_) => write!(f, "Var(#{} = {})", self.idx, self.val),
            None => write!(f, "Const({})", self.val),
        }
    }
}

impl<'t> Var<'t> {
    pub fn is_constant(&self) -> bool {
        self.tape.is_none()
    }

    /// Gradient of this value with respect to `inputs`. Inputs that do not
    /// influence the value get exactly `0.0`.
    pub fn gradient(&self, inputs: &[Var<'t>]) -> Vec<f64> {
        let Some(tape) = self.tape else {
            return vec![0.0; inputs.len()];
        };
        let adj = tape.adjoints(self.idx);
        inputs
            .iter()
            .map(|x| match x.tape {
                Some(t) if std::ptr::eq(t, tape) && x.idx <= self.idx => adj[x.idx as usize],
                _ => 0.0,
            })
            .collect()
    }

    fn unary(self, val: f64, partial: f64) -> Self {
        match self.tape {
            None => Var::constant(val),
            Some(tape) => {
                let idx = tape.push(Node {
                    parents: [self.idx, 0],
                    partials: [partial, 0.0],
                    arity: 1,
                });
                Var {
                    tape: Some(tape),
                    idx,
                    val,
                }
            }
        }
    }

    fn binary(self, other: Self, val: f64, da: f64, db: f64) -> Self {
        match (self.tape, other.tape) {
            (None, None) => Var::constant(val),
            (Some(_), None) => self.unary(val, da),
            (None, Some(_)) => other.unary(val, db),
            (Some(tape), Some(_)) => {
                let idx = tape.push(Node {
                    parents: [self.idx, other.idx],
                    partials: [da, db],
                    arity: 2,
                });
                Var {
                    tape: Some(tape),
                    idx,
                    val,
                }
            }
        }
    }

    fn tape(&self, other: &Self) -> Option<&'t Tape> {
        self.tape.or(other.tape)
    }

    fn select(self, other: Self, keep_self: bool) -> Self {
        if let Some(t) = self.tape(&other) {
            t.record_branch(keep_self);
        }
        let chosen = if keep_self { self } else { other };
        // Pass-through node keeps the chosen branch's adjoint path.
        chosen.unary(chosen.val, 1.0)
    }
}

impl Scalar for Var<'_> {
    fn constant(value: f64) -> Self {
        Var {
            tape: None,
            idx: 0,
            val: value,
        }
    }
    fn value(&self) -> f64 {
        self.val
    }
    fn max(self, other: Self) -> Self {
        let keep = self.val >= other.val;
        self.select(other, keep)
    }
    fn min(self, other: Self) -> Self {
        let keep = self.val <= other.val;
        self.select(other, keep)
    }
    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, e)
    }
    fn ln(self) -> Self {
        self.unary(self.val.ln(), 1.0 / self.val)
    }
    fn powf(self, exponent: f64) -> Self {
        let v = self.val.powf(exponent);
        self.unary(v, exponent * self.val.powf(exponent - 1.0))
    }
    fn exceeds(&self, threshold: f64) -> bool {
        let taken = self.val > threshold;
        if let Some(t) = self.tape {
            t.record_branch(taken);
        }
        taken
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.val + rhs.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.val - rhs.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        let q = self.val / rhs.val;
        self.binary(rhs, q, 1.0 / rhs.val, -q / rhs.val)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.unary(-self.val, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Self {
        self.unary(self.val + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Self {
        self.unary(self.val - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Self {
        self.unary(self.val * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Self {
        self.unary(self.val / rhs, 1.0 / rhs)
    }
}
