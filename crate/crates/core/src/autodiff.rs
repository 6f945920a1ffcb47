//! Reverse-mode automatic differentiation on a growable tape.
//!
//! Gradients come in two forms:
//!
//! * [`Tape::grad_vars`] replays the chain rule by appending new nodes to
//!   the tape, so the returned gradients are themselves differentiable
//!   expressions. Applying it to a graph that already contains first-order
//!   gradient nodes yields second-order expressions; anything deeper is
//!   refused (depth > 2 is unsupported).
//! * [`Tape::grad`] computes plain `f64` adjoints without growing the tape.
//!   It is the cheap choice for the outermost derivative of a computation,
//!   e.g. a loss that already contains force expressions.
//!
//! All arithmetic is f64. Graph construction is single-threaded per tape;
//! independent tapes may be built and evaluated concurrently (the tape is
//! `Send`). Gradient evaluation is deterministic: the same graph always
//! produces bitwise-identical adjoints.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::special;

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Const,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Neg(u32),
    AddC(u32, #[allow(dead_code)] f64),
    MulC(u32, f64),
    Powi(u32, i32),
    Sin(u32),
    Cos(u32),
    Exp(u32),
    Ln(u32),
    Sqrt(u32),
    Tanh(u32),
    Softplus(u32),
    Sigmoid(u32),
    LnGamma(u32),
    Digamma(u32),
    Trigamma(u32),
    /// a * b + c
    Fma(u32, u32, u32),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Const => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::AddC(..) => "add_const",
            Op::MulC(..) => "mul_const",
            Op::Powi(..) => "powi",
            Op::Sin(..) => "sin",
            Op::Cos(..) => "cos",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::Sqrt(..) => "sqrt",
            Op::Tanh(..) => "tanh",
            Op::Softplus(..) => "softplus",
            Op::Sigmoid(..) => "sigmoid",
            Op::LnGamma(..) => "ln_gamma",
            Op::Digamma(..) => "digamma",
            Op::Trigamma(..) => "trigamma",
            Op::Fma(..) => "fma",
        }
    }

    fn parents(&self, out: &mut [u32; 3]) -> usize {
        match *self {
            Op::Leaf | Op::Const => 0,
            Op::Neg(a)
            | Op::AddC(a, _)
            | Op::MulC(a, _)
            | Op::Powi(a, _)
            | Op::Sin(a)
            | Op::Cos(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Sqrt(a)
            | Op::Tanh(a)
            | Op::Softplus(a)
            | Op::Sigmoid(a)
            | Op::LnGamma(a)
            | Op::Digamma(a)
            | Op::Trigamma(a) => {
                out[0] = a;
                1
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                out[0] = a;
                out[1] = b;
                2
            }
            Op::Fma(a, b, c) => {
                out[0] = a;
                out[1] = b;
                out[2] = c;
                3
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    value: f64,
    gdepth: u8,
}

#[derive(Default)]
struct Scratch {
    stamp: Vec<u64>,
    adj_val: Vec<f64>,
    adj_var: Vec<u32>,
    reach: Vec<u32>,
    current: u64,
}

/// A growable computation graph. See module docs for the threading model.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    scratch: RefCell<Scratch>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            scratch: RefCell::new(Scratch::default()),
        }
    }

    pub fn with_capacity(cap: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(cap)),
            scratch: RefCell::new(Scratch::default()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops all nodes but keeps allocations for reuse.
    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
        self.scratch.borrow_mut().current += 1;
    }

    fn push(&self, op: Op, value: f64, gdepth: u8) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        debug_assert!(idx < NONE as usize);
        nodes.push(Node { op, value, gdepth });
        Var {
            tape: self,
            idx: idx as u32,
        }
    }

    /// A differentiable input.
    pub fn leaf(&self, value: f64) -> Var<'_> {
        self.push(Op::Leaf, value, 0)
    }

    /// Differentiable inputs, one per element.
    pub fn leaves(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.leaf(v)).collect()
    }

    /// A value gradients never flow into.
    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push(Op::Const, value, 0)
    }

    fn value_of(&self, idx: u32) -> f64 {
        self.nodes.borrow()[idx as usize].value
    }

    fn unary(&self, a: Var<'_>, op: Op, value: f64) -> Var<'_> {
        let gdepth = self.nodes.borrow()[a.idx as usize].gdepth;
        self.push(op, value, gdepth)
    }

    fn binary(&self, a: Var<'_>, b: Var<'_>, op: Op, value: f64) -> Var<'_> {
        let nodes = self.nodes.borrow();
        let gdepth = nodes[a.idx as usize].gdepth.max(nodes[b.idx as usize].gdepth);
        drop(nodes);
        self.push(op, value, gdepth)
    }

    /// Collects the subgraph reachable from `output` (indices descending)
    /// into scratch, rejecting non-finite intermediates. Returns the
    /// maximum gradient depth seen.
    fn collect_reachable(&self, output: u32) -> Result<u8> {
        let nodes = self.nodes.borrow();
        let mut scratch = self.scratch.borrow_mut();
        let s = &mut *scratch;
        s.current += 1;
        let cur = s.current;
        s.stamp.resize(nodes.len(), 0);
        s.reach.clear();

        let mut stack = vec![output];
        s.stamp[output as usize] = cur;
        let mut max_depth = 0u8;
        let mut parents = [0u32; 3];
        while let Some(i) = stack.pop() {
            let node = &nodes[i as usize];
            if !node.value.is_finite() {
                return Err(Error::numeric(
                    format!("node {} ({})", i, node.op.name()),
                    format!("non-finite intermediate value {}", node.value),
                ));
            }
            max_depth = max_depth.max(node.gdepth);
            s.reach.push(i);
            let n = node.op.parents(&mut parents);
            for &p in &parents[..n] {
                if s.stamp[p as usize] != cur {
                    s.stamp[p as usize] = cur;
                    stack.push(p);
                }
            }
        }
        // Parents always precede children, so descending index order is a
        // valid reverse topological order.
        s.reach.sort_unstable_by(|a, b| b.cmp(a));
        Ok(max_depth)
    }

    /// ∂output/∂wrt as plain values. Inputs not on any path to `output`
    /// get gradient zero. Does not grow the tape.
    pub fn grad(&self, output: Var<'_>, wrt: &[Var<'_>]) -> Result<Vec<f64>> {
        let max_depth = self.collect_reachable(output.idx)?;
        if max_depth >= 2 {
            return Err(Error::DepthExceeded {
                requested: max_depth + 1,
            });
        }

        let nodes = self.nodes.borrow();
        let mut scratch = self.scratch.borrow_mut();
        let s = &mut *scratch;
        s.current += 1;
        let cur = s.current;
        s.stamp.resize(nodes.len(), 0);
        s.adj_val.resize(nodes.len(), 0.0);

        let set = |s: &mut Scratch, i: u32, v: f64| {
            if s.stamp[i as usize] == cur {
                s.adj_val[i as usize] += v;
            } else {
                s.stamp[i as usize] = cur;
                s.adj_val[i as usize] = v;
            }
        };
        set(s, output.idx, 1.0);

        // Reachable set was sorted descending; a node's adjoint is final
        // by the time we visit it.
        let reach = std::mem::take(&mut s.reach);
        for &i in &reach {
            if s.stamp[i as usize] != cur {
                continue;
            }
            let w = s.adj_val[i as usize];
            if !w.is_finite() {
                let node = &nodes[i as usize];
                return Err(Error::numeric(
                    format!("node {} ({})", i, node.op.name()),
                    format!("non-finite adjoint {w}"),
                ));
            }
            if w == 0.0 {
                continue;
            }
            let node = nodes[i as usize];
            let v = node.value;
            match node.op {
                Op::Leaf | Op::Const => {}
                Op::Add(a, b) => {
                    set(s, a, w);
                    set(s, b, w);
                }
                Op::Sub(a, b) => {
                    set(s, a, w);
                    set(s, b, -w);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (nodes[a as usize].value, nodes[b as usize].value);
                    set(s, a, w * vb);
                    set(s, b, w * va);
                }
                Op::Div(a, b) => {
                    let vb = nodes[b as usize].value;
                    set(s, a, w / vb);
                    set(s, b, -w * v / vb);
                }
                Op::Neg(a) => set(s, a, -w),
                Op::AddC(a, _) => set(s, a, w),
                Op::MulC(a, c) => set(s, a, w * c),
                Op::Powi(a, k) => {
                    let va = nodes[a as usize].value;
                    set(s, a, w * k as f64 * va.powi(k - 1));
                }
                Op::Sin(a) => {
                    let va = nodes[a as usize].value;
                    set(s, a, w * va.cos());
                }
                Op::Cos(a) => {
                    let va = nodes[a as usize].value;
                    set(s, a, -w * va.sin());
                }
                Op::Exp(a) => set(s, a, w * v),
                Op::Ln(a) => set(s, a, w / nodes[a as usize].value),
                Op::Sqrt(a) => set(s, a, w * 0.5 / v),
                Op::Tanh(a) => set(s, a, w * (1.0 - v * v)),
                Op::Softplus(a) => {
                    let va = nodes[a as usize].value;
                    set(s, a, w * special::sigmoid(va));
                }
                Op::Sigmoid(a) => set(s, a, w * v * (1.0 - v)),
                Op::LnGamma(a) => {
                    let va = nodes[a as usize].value;
                    set(s, a, w * special::digamma(va));
                }
                Op::Digamma(a) => {
                    let va = nodes[a as usize].value;
                    set(s, a, w * special::trigamma(va));
                }
                Op::Trigamma(_) => {
                    return Err(Error::DepthExceeded { requested: 3 });
                }
                Op::Fma(a, b, c) => {
                    let (va, vb) = (nodes[a as usize].value, nodes[b as usize].value);
                    set(s, a, w * vb);
                    set(s, b, w * va);
                    set(s, c, w);
                }
            }
        }

        let out = wrt
            .iter()
            .map(|x| {
                if s.stamp[x.idx as usize] == cur {
                    s.adj_val[x.idx as usize]
                } else {
                    0.0
                }
            })
            .collect();
        s.reach = reach;
        Ok(out)
    }

    /// ∂output/∂wrt as differentiable tape expressions. Grows the tape;
    /// the returned vars can be combined further and differentiated once
    /// more (and no deeper).
    pub fn grad_vars<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        let max_depth = self.collect_reachable(output.idx)?;
        let order = max_depth + 1;
        if order > 2 {
            return Err(Error::DepthExceeded { requested: order });
        }

        let reach = {
            let mut scratch = self.scratch.borrow_mut();
            std::mem::take(&mut scratch.reach)
        };
        let cur = {
            let mut scratch = self.scratch.borrow_mut();
            scratch.current += 1;
            scratch.current
        };
        {
            let mut scratch = self.scratch.borrow_mut();
            let n = self.nodes.borrow().len();
            scratch.stamp.resize(n, 0);
            scratch.adj_var.resize(n, NONE);
        }

        let seed = self.push(Op::Const, 1.0, order);
        self.set_adj_var(output.idx, seed.idx, cur, false);

        for &i in &reach {
            let (adj_idx, node) = {
                let scratch = self.scratch.borrow();
                if scratch.stamp[i as usize] != cur {
                    continue;
                }
                (scratch.adj_var[i as usize], self.nodes.borrow()[i as usize])
            };
            if adj_idx == NONE {
                continue;
            }
            let w = Var {
                tape: self,
                idx: adj_idx,
            };
            let vout = Var { tape: self, idx: i };
            match node.op {
                Op::Leaf | Op::Const => {}
                Op::Add(a, b) => {
                    self.set_adj_var(a, w.idx, cur, false);
                    self.set_adj_var(b, w.idx, cur, false);
                }
                Op::Sub(a, b) => {
                    self.set_adj_var(a, w.idx, cur, false);
                    self.set_adj_var(b, w.idx, cur, true);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.var(a), self.var(b));
                    self.set_adj_var(a, (w * vb).idx, cur, false);
                    self.set_adj_var(b, (w * va).idx, cur, false);
                }
                Op::Div(a, b) => {
                    let vb = self.var(b);
                    self.set_adj_var(a, (w / vb).idx, cur, false);
                    self.set_adj_var(b, (w * vout / vb).idx, cur, true);
                }
                Op::Neg(a) => self.set_adj_var(a, w.idx, cur, true),
                Op::AddC(a, _) => self.set_adj_var(a, w.idx, cur, false),
                Op::MulC(a, c) => self.set_adj_var(a, w.mul_const(c).idx, cur, false),
                Op::Powi(a, k) => {
                    let va = self.var(a);
                    let contrib = w * va.powi(k - 1).mul_const(k as f64);
                    self.set_adj_var(a, contrib.idx, cur, false);
                }
                Op::Sin(a) => {
                    let va = self.var(a);
                    self.set_adj_var(a, (w * va.cos()).idx, cur, false);
                }
                Op::Cos(a) => {
                    let va = self.var(a);
                    self.set_adj_var(a, (w * va.sin()).idx, cur, true);
                }
                Op::Exp(a) => self.set_adj_var(a, (w * vout).idx, cur, false),
                Op::Ln(a) => {
                    let va = self.var(a);
                    self.set_adj_var(a, (w / va).idx, cur, false);
                }
                Op::Sqrt(a) => {
                    let contrib = w.mul_const(0.5) / vout;
                    self.set_adj_var(a, contrib.idx, cur, false);
                }
                Op::Tanh(a) => {
                    let contrib = w * (-(vout * vout)).add_const(1.0);
                    self.set_adj_var(a, contrib.idx, cur, false);
                }
                Op::Softplus(a) => {
                    let va = self.var(a);
                    self.set_adj_var(a, (w * va.sigmoid()).idx, cur, false);
                }
                Op::Sigmoid(a) => {
                    let contrib = w * vout * (-vout).add_const(1.0);
                    self.set_adj_var(a, contrib.idx, cur, false);
                }
                Op::LnGamma(a) => {
                    let va = self.var(a);
                    let dg = self.unary(va, Op::Digamma(va.idx), special::digamma(va.value()));
                    self.set_adj_var(a, (w * dg).idx, cur, false);
                }
                Op::Digamma(a) => {
                    let va = self.var(a);
                    let tg = self.unary(va, Op::Trigamma(va.idx), special::trigamma(va.value()));
                    self.set_adj_var(a, (w * tg).idx, cur, false);
                }
                Op::Trigamma(_) => {
                    return Err(Error::DepthExceeded { requested: 3 });
                }
                Op::Fma(a, b, c) => {
                    let (va, vb) = (self.var(a), self.var(b));
                    self.set_adj_var(a, (w * vb).idx, cur, false);
                    self.set_adj_var(b, (w * va).idx, cur, false);
                    self.set_adj_var(c, w.idx, cur, false);
                }
            }
        }

        // Bump freshly created adjoint nodes to the new depth so a further
        // grad over them is recognized as one order deeper.
        {
            let mut nodes = self.nodes.borrow_mut();
            for node in nodes.iter_mut().skip(seed.idx as usize) {
                if node.gdepth < order {
                    node.gdepth = order;
                }
            }
        }

        let zero = self.push(Op::Const, 0.0, 0);
        let out = {
            let scratch = self.scratch.borrow();
            wrt.iter()
                .map(|x| {
                    let idx = if scratch.stamp[x.idx as usize] == cur {
                        scratch.adj_var[x.idx as usize]
                    } else {
                        NONE
                    };
                    Var {
                        tape: self,
                        idx: if idx == NONE { zero.idx } else { idx },
                    }
                })
                .collect()
        };
        {
            let mut scratch = self.scratch.borrow_mut();
            scratch.reach = reach;
        }
        Ok(out)
    }

    fn var(&self, idx: u32) -> Var<'_> {
        Var { tape: self, idx }
    }

    fn set_adj_var(&self, target: u32, contrib: u32, cur: u64, negate: bool) {
        let existing = {
            let scratch = self.scratch.borrow();
            if scratch.stamp[target as usize] == cur {
                scratch.adj_var[target as usize]
            } else {
                NONE
            }
        };
        let contrib_var = self.var(contrib);
        let new = match (existing, negate) {
            (NONE, false) => contrib,
            (NONE, true) => (-contrib_var).idx,
            (e, false) => (self.var(e) + contrib_var).idx,
            (e, true) => (self.var(e) - contrib_var).idx,
        };
        let mut scratch = self.scratch.borrow_mut();
        scratch.stamp[target as usize] = cur;
        scratch.adj_var[target as usize] = new;
    }
}

// Tape moves freely between threads; shared access is not allowed
// (RefCell), matching the one-builder-per-graph model.
#[allow(dead_code)]
fn assert_send<T: Send>() {}
#[allow(dead_code)]
fn tape_is_send() {
    assert_send::<Tape>();
}

/// Handle to one tape node. Copyable; all arithmetic goes through the tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{} = {})", self.idx, self.value())
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.tape.value_of(self.idx)
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn sin(self) -> Var<'t> {
        self.tape.unary(self, Op::Sin(self.idx), self.value().sin())
    }

    pub fn cos(self) -> Var<'t> {
        self.tape.unary(self, Op::Cos(self.idx), self.value().cos())
    }

    pub fn exp(self) -> Var<'t> {
        self.tape.unary(self, Op::Exp(self.idx), self.value().exp())
    }

    pub fn ln(self) -> Var<'t> {
        self.tape.unary(self, Op::Ln(self.idx), self.value().ln())
    }

    pub fn sqrt(self) -> Var<'t> {
        self.tape.unary(self, Op::Sqrt(self.idx), self.value().sqrt())
    }

    pub fn tanh(self) -> Var<'t> {
        self.tape.unary(self, Op::Tanh(self.idx), self.value().tanh())
    }

    pub fn softplus(self) -> Var<'t> {
        self.tape
            .unary(self, Op::Softplus(self.idx), special::softplus(self.value()))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.tape
            .unary(self, Op::Sigmoid(self.idx), special::sigmoid(self.value()))
    }

    pub fn ln_gamma(self) -> Var<'t> {
        self.tape
            .unary(self, Op::LnGamma(self.idx), special::ln_gamma(self.value()))
    }

    pub fn powi(self, k: i32) -> Var<'t> {
        self.tape
            .unary(self, Op::Powi(self.idx, k), self.value().powi(k))
    }

    pub fn square(self) -> Var<'t> {
        self.powi(2)
    }

    pub fn add_const(self, c: f64) -> Var<'t> {
        self.tape
            .unary(self, Op::AddC(self.idx, c), self.value() + c)
    }

    pub fn mul_const(self, c: f64) -> Var<'t> {
        self.tape
            .unary(self, Op::MulC(self.idx, c), self.value() * c)
    }

    /// self * b + c in a single node.
    pub fn fma(self, b: Var<'t>, c: Var<'t>) -> Var<'t> {
        let value = self.value().mul_add(b.value(), c.value());
        let nodes = self.tape.nodes.borrow();
        let gdepth = nodes[self.idx as usize]
            .gdepth
            .max(nodes[b.idx as usize].gdepth)
            .max(nodes[c.idx as usize].gdepth);
        drop(nodes);
        self.tape.push(Op::Fma(self.idx, b.idx, c.idx), value, gdepth)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.tape
            .binary(self, rhs, Op::Add(self.idx, rhs.idx), self.value() + rhs.value())
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.tape
            .binary(self, rhs, Op::Sub(self.idx, rhs.idx), self.value() - rhs.value())
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.tape
            .binary(self, rhs, Op::Mul(self.idx, rhs.idx), self.value() * rhs.value())
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        self.tape
            .binary(self, rhs, Op::Div(self.idx, rhs.idx), self.value() / rhs.value())
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.tape.unary(self, Op::Neg(self.idx), -self.value())
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.add_const(rhs)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.add_const(-rhs)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.mul_const(rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        self.mul_const(1.0 / rhs)
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        (-rhs).add_const(self)
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs.mul_const(self)
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        rhs.add_const(self)
    }
}

impl<'t> Div<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let c = rhs.tape.constant(self);
        c / rhs
    }
}

/// Sum of a slice of vars, zero constant if empty.
pub fn sum<'t>(tape: &'t Tape, vars: &[Var<'t>]) -> Var<'t> {
    match vars.split_first() {
        None => tape.constant(0.0),
        Some((&first, rest)) => rest.iter().fold(first, |acc, &v| acc + v),
    }
}

/// Numerically stable log-sum-exp over tape expressions.
pub fn log_sum_exp<'t>(tape: &'t Tape, xs: &[Var<'t>]) -> Var<'t> {
    assert!(!xs.is_empty());
    let m = xs
        .iter()
        .map(|v| v.value())
        .fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<Var<'t>> = xs.iter().map(|&x| (x - m).exp()).collect();
    sum(tape, &shifted).ln() + m
}
