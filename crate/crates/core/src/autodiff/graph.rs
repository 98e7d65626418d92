//! Scalar computational graph with reverse accumulation.
//!
//! A [`GraphBuilder`] records operations eagerly through [`Var`] handles
//! (value and local partials are computed as each node is pushed). Finishing
//! the builder yields a [`Graph`], which can be re-evaluated for new leaf
//! values and differentiated with respect to every leaf.
//!
//! ```
//! use atpinn::autodiff::GraphBuilder;
//!
//! let b = GraphBuilder::new();
//! let x = b.leaf(3.0);
//! let y = b.leaf(5.0);
//! let out = (x * y + y).index();
//! let graph = b.finish(out).unwrap();
//! assert_eq!(graph.value(), 20.0);
//! assert_eq!(graph.gradient(), vec![5.0, 4.0]);
//! ```

use std::cell::{Cell, RefCell};
use std::ops::{Add, Mul, Neg, Sub};

use super::Scalar;
use crate::error::{Error, Result};

/// Operation tag of a graph node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Op {
    /// Independent input; the payload is its position among the leaves.
    Leaf(usize),
    Const,
    Add,
    Sub,
    Mul,
    Neg,
    Tanh,
    Exp,
    Ln,
    PowI(i32),
}

impl Op {
    pub fn arity(self) -> usize {
        match self {
            Op::Leaf(_) | Op::Const => 0,
            Op::Neg | Op::Tanh | Op::Exp | Op::Ln | Op::PowI(_) => 1,
            Op::Add | Op::Sub | Op::Mul => 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub op: Op,
    /// Parent indices; only the first `op.arity()` entries are meaningful.
    pub parents: [usize; 2],
    pub value: f64,
    /// `d value / d parent` for each parent.
    pub partials: [f64; 2],
}

/// Value and local partials of `op` applied to parent values `a`, `b`.
fn apply(op: Op, a: f64, b: f64) -> std::result::Result<(f64, [f64; 2]), String> {
    Ok(match op {
        Op::Leaf(_) | Op::Const => unreachable!("leaves carry their own value"),
        Op::Add => (a + b, [1.0, 1.0]),
        Op::Sub => (a - b, [1.0, -1.0]),
        Op::Mul => (a * b, [b, a]),
        Op::Neg => (-a, [-1.0, 0.0]),
        Op::Tanh => {
            let y = a.tanh();
            (y, [1.0 - y * y, 0.0])
        }
        Op::Exp => {
            let y = a.exp();
            (y, [y, 0.0])
        }
        Op::Ln => {
            if !(a > 0.0) {
                return Err(format!("ln of non-positive value {a}"));
            }
            (a.ln(), [1.0 / a, 0.0])
        }
        Op::PowI(n) => {
            if n < 0 && a == 0.0 {
                return Err(format!("negative power {n} of zero"));
            }
            let d = if n == 0 { 0.0 } else { f64::from(n) * a.powi(n - 1) };
            (a.powi(n), [d, 0.0])
        }
    })
}

/// Records a graph through operator overloading on [`Var`].
#[derive(Default)]
pub struct GraphBuilder {
    nodes: RefCell<Vec<Node>>,
    leaves: Cell<usize>,
    domain_error: RefCell<Option<String>>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(n)),
            ..Self::default()
        }
    }

    /// Adds an independent input. Leaves are numbered in creation order.
    pub fn leaf(&self, value: f64) -> Var<'_> {
        let k = self.leaves.get();
        self.leaves.set(k + 1);
        self.push(Node {
            op: Op::Leaf(k),
            parents: [0, 0],
            value,
            partials: [0.0, 0.0],
        })
    }

    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push(Node {
            op: Op::Const,
            parents: [0, 0],
            value,
            partials: [0.0, 0.0],
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Freezes the recording with `output` as the differentiated node.
    ///
    /// Fails if any recorded operation left its domain.
    pub fn finish(self, output: usize) -> Result<Graph> {
        if let Some(msg) = self.domain_error.into_inner() {
            return Err(Error::Domain(msg));
        }
        let nodes = self.nodes.into_inner();
        if output >= nodes.len() {
            return Err(Error::Shape(format!(
                "output node {output} out of range for graph of {} nodes",
                nodes.len()
            )));
        }
        Ok(Graph {
            nodes,
            n_leaves: self.leaves.get(),
            output,
        })
    }

    fn push(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            builder: self,
            idx: nodes.len() - 1,
        }
    }

    fn record(&self, op: Op, a: usize, b: usize) -> Var<'_> {
        let (va, vb) = {
            let nodes = self.nodes.borrow();
            (nodes[a].value, if op.arity() == 2 { nodes[b].value } else { 0.0 })
        };
        let (value, partials) = match apply(op, va, vb) {
            Ok(r) => r,
            Err(msg) => {
                self.domain_error.borrow_mut().get_or_insert(msg);
                (f64::NAN, [f64::NAN, f64::NAN])
            }
        };
        self.push(Node {
            op,
            parents: [a, b],
            value,
            partials,
        })
    }
}

/// Handle to a node under construction.
#[derive(Clone, Copy)]
pub struct Var<'g> {
    builder: &'g GraphBuilder,
    idx: usize,
}

impl<'g> Var<'g> {
    pub fn index(&self) -> usize {
        self.idx
    }

    pub fn value(&self) -> f64 {
        self.builder.nodes.borrow()[self.idx].value
    }

    fn unary(self, op: Op) -> Self {
        self.builder.record(op, self.idx, self.idx)
    }
}

impl<'g> Add for Var<'g> {
    type Output = Var<'g>;
    fn add(self, rhs: Self) -> Self::Output {
        self.builder.record(Op::Add, self.idx, rhs.idx)
    }
}

impl<'g> Sub for Var<'g> {
    type Output = Var<'g>;
    fn sub(self, rhs: Self) -> Self::Output {
        self.builder.record(Op::Sub, self.idx, rhs.idx)
    }
}

impl<'g> Mul for Var<'g> {
    type Output = Var<'g>;
    fn mul(self, rhs: Self) -> Self::Output {
        self.builder.record(Op::Mul, self.idx, rhs.idx)
    }
}

impl<'g> Neg for Var<'g> {
    type Output = Var<'g>;
    fn neg(self) -> Self::Output {
        self.unary(Op::Neg)
    }
}

impl<'g> Scalar for Var<'g> {
    fn lift(&self, c: f64) -> Self {
        self.builder.constant(c)
    }

    fn primal(&self) -> f64 {
        self.value()
    }

    fn tanh(self) -> Self {
        self.unary(Op::Tanh)
    }

    fn exp(self) -> Self {
        self.unary(Op::Exp)
    }

    fn ln(self) -> Self {
        self.unary(Op::Ln)
    }

    fn powi(self, n: i32) -> Self {
        self.unary(Op::PowI(n))
    }
}

/// A frozen, re-evaluable graph.
#[derive(Clone, Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    n_leaves: usize,
    output: usize,
}

impl Graph {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    /// Current value of the output node.
    pub fn value(&self) -> f64 {
        self.nodes[self.output].value
    }

    /// Rebinds the leaves to `inputs` and re-runs the forward sweep.
    pub fn evaluate(&mut self, inputs: &[f64]) -> Result<f64> {
        if inputs.len() != self.n_leaves {
            return Err(Error::Shape(format!(
                "graph has {} leaves, got {} inputs",
                self.n_leaves,
                inputs.len()
            )));
        }
        for i in 0..self.nodes.len() {
            let op = self.nodes[i].op;
            match op {
                Op::Leaf(k) => self.nodes[i].value = inputs[k],
                Op::Const => {}
                _ => {
                    let [a, b] = self.nodes[i].parents;
                    let va = self.nodes[a].value;
                    let vb = if op.arity() == 2 { self.nodes[b].value } else { 0.0 };
                    let (value, partials) = apply(op, va, vb).map_err(Error::Domain)?;
                    self.nodes[i].value = value;
                    self.nodes[i].partials = partials;
                }
            }
        }
        Ok(self.value())
    }

    /// `d output / d leaf` for every leaf, in leaf order.
    pub fn gradient(&self) -> Vec<f64> {
        self.gradient_of(self.output)
    }

    /// Reverse sweep from an arbitrary node.
    pub fn gradient_of(&self, node: usize) -> Vec<f64> {
        let mut adjoint = vec![0.0; node + 1];
        adjoint[node] = 1.0;
        let mut grad = vec![0.0; self.n_leaves];
        for i in (0..=node).rev() {
            let a = adjoint[i];
            if a == 0.0 {
                continue;
            }
            let n = &self.nodes[i];
            match n.op {
                Op::Leaf(k) => grad[k] += a,
                Op::Const => {}
                op => {
                    for j in 0..op.arity() {
                        adjoint[n.parents[j]] += a * n.partials[j];
                    }
                }
            }
        }
        grad
    }
}

/// Forward value of `graph` at `inputs`.
pub fn evaluate(graph: &mut Graph, inputs: &[f64]) -> Result<f64> {
    graph.evaluate(inputs)
}

/// Gradient of the graph's output with respect to its parameter leaves.
pub fn grad_params(graph: &Graph) -> Vec<f64> {
    graph.gradient()
}
