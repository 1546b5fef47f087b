//! A small reverse-mode automatic differentiation tape over dense matrices.
//!
//! Every node holds a 2-D array; column vectors are `n × 1` and scalars are
//! `1 × 1`. Nodes are appended in evaluation order, so a single reverse sweep
//! over the node list is a valid topological order for backpropagation.
//! Shape mismatches between operands are programmer errors and panic.

use std::ops::Range;

use ndarray::{Array2, Axis, Zip};

use crate::geometry::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMulT(Var, Var),
    AddRow(Var, Var),
    Tanh(Var),
    SegmentSum {
        input: Var,
        segments: Vec<Range<usize>>,
        gamma: f64,
    },
    RowDot {
        input: Var,
        coeffs: Array2<f64>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MulConst(Var, Array2<f64>),
    Scale(Var, f64),
    Offset(Var),
    Abs(Var),
    Relu(Var),
    Square(Var),
    NegLogSigmoid { input: Var, floor: f64 },
    Mean(Var),
    Sum(Var),
    Element(Var, usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Adjoints of every node with respect to one output.
#[derive(Debug)]
pub struct Adjoints {
    adj: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Adjoints {
    /// Gradient of the output with respect to `v`; zeros if `v` did not
    /// influence the output.
    pub fn wrt(&self, v: Var) -> Array2<f64> {
        match &self.adj[v.0] {
            Some(a) => a.clone(),
            None => Array2::zeros(self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Array2<f64> {
        self.adj[v.0]
            .take()
            .unwrap_or_else(|| Array2::zeros(self.shapes[v.0]))
    }
}

fn same_shape(a: &Array2<f64>, b: &Array2<f64>, op: &str) {
    assert_eq!(a.dim(), b.dim(), "{op}: operand shapes differ");
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let a = self.value(v);
        assert_eq!(a.dim(), (1, 1), "scalar(): node is not 1x1");
        a[[0, 0]]
    }

    /// A parameter or constant input.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Input that receives no adjoint.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn constant_scalar(&mut self, x: f64) -> Var {
        self.leaf(Array2::from_elem((1, 1), x))
    }

    /// Column vector leaf.
    pub fn column(&mut self, values: &[f64]) -> Var {
        let a = Array2::from_shape_vec((values.len(), 1), values.to_vec()).expect("column shape");
        self.leaf(a)
    }

    /// `x · wᵀ` for `x: n × k`, `w: m × k`.
    pub fn matmul_t(&mut self, x: Var, w: Var) -> Var {
        let out = self.value(x).dot(&self.value(w).t());
        self.push(out, Op::MatMulT(x, w))
    }

    /// Adds the `1 × m` row `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let bv = self.value(b);
        assert_eq!(bv.nrows(), 1, "add_row: bias must be a single row");
        let out = self.value(x) + bv;
        self.push(out, Op::AddRow(x, b))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(f64::tanh);
        self.push(out, Op::Tanh(x))
    }

    /// Output row `s` is `Σ_t gamma^t · x[segments[s].start + t]`.
    pub fn segment_sum(&mut self, x: Var, segments: Vec<Range<usize>>, gamma: f64) -> Var {
        let xv = self.value(x);
        let mut out = Array2::zeros((segments.len(), xv.ncols()));
        for (s, range) in segments.iter().enumerate() {
            let mut row = out.row_mut(s);
            let mut w = 1.0;
            for r in range.clone() {
                row.scaled_add(w, &xv.row(r));
                w *= gamma;
            }
        }
        self.push(
            out,
            Op::SegmentSum {
                input: x,
                segments,
                gamma,
            },
        )
    }

    /// Row-wise inner products with a constant matrix: `out[i] = x[i]·c[i]`.
    pub fn row_dot(&mut self, x: Var, coeffs: Array2<f64>) -> Var {
        let xv = self.value(x);
        same_shape(xv, &coeffs, "row_dot");
        let mut out = Array2::zeros((xv.nrows(), 1));
        Zip::from(out.rows_mut())
            .and(xv.rows())
            .and(coeffs.rows())
            .for_each(|mut o, a, c| o[0] = a.dot(&c));
        self.push(out, Op::RowDot { input: x, coeffs })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        same_shape(self.value(a), self.value(b), "add");
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        same_shape(self.value(a), self.value(b), "sub");
        let out = self.value(a) - self.value(b);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        same_shape(self.value(a), self.value(b), "mul");
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        same_shape(self.value(a), self.value(b), "div");
        let out = self.value(a) / self.value(b);
        self.push(out, Op::Div(a, b))
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, a: Var, c: Array2<f64>) -> Var {
        same_shape(self.value(a), &c, "mul_const");
        let out = self.value(a) * &c;
        self.push(out, Op::MulConst(a, c))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        self.push(out, Op::Scale(a, c))
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) + c;
        self.push(out, Op::Offset(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::abs);
        self.push(out, Op::Abs(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x * x);
        self.push(out, Op::Square(a))
    }

    /// `-max(ln σ(x), ln floor)` elementwise: the negative log-probability of
    /// a logistic outcome with the probability clamped below at `floor`.
    pub fn neg_log_sigmoid(&mut self, a: Var, floor: f64) -> Var {
        let lf = floor.ln();
        let out = self
            .value(a)
            .mapv(|x| -crate::geometry::log_sigmoid(x).max(lf));
        self.push(out, Op::NegLogSigmoid { input: a, floor })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        assert!(!v.is_empty(), "mean of empty node");
        let m = v.sum() / v.len() as f64;
        self.push(Array2::from_elem((1, 1), m), Op::Mean(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Array2::from_elem((1, 1), s), Op::Sum(a))
    }

    pub fn element(&mut self, a: Var, i: usize, j: usize) -> Var {
        let x = self.value(a)[[i, j]];
        self.push(Array2::from_elem((1, 1), x), Op::Element(a, i, j))
    }

    /// Reverse sweep from the `1 × 1` node `out`.
    pub fn backward(&self, out: Var) -> Adjoints {
        assert_eq!(self.value(out).dim(), (1, 1), "backward(): output must be a scalar");
        let shapes: Vec<_> = self.nodes.iter().map(|n| n.value.dim()).collect();
        let mut adj: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[out.0] = Some(Array2::ones((1, 1)));

        for i in (0..=out.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    adj[i] = Some(g);
                    continue;
                }
                Op::Constant => continue,
                Op::MatMulT(x, w) => {
                    if !matches!(self.nodes[x.0].op, Op::Constant) {
                        let dx = g.dot(self.value(*w));
                        accumulate(&mut adj, *x, dx);
                    }
                    let dw = g.t().dot(self.value(*x));
                    accumulate(&mut adj, *w, dw);
                }
                Op::AddRow(x, b) => {
                    let db = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut adj, *b, db);
                    accumulate(&mut adj, *x, g);
                }
                Op::Tanh(x) => {
                    let mut dx = g;
                    Zip::from(&mut dx).and(&node.value).for_each(|d, y| *d *= 1.0 - y * y);
                    accumulate(&mut adj, *x, dx);
                }
                Op::SegmentSum {
                    input,
                    segments,
                    gamma,
                } => {
                    let mut dx = Array2::zeros(shapes[input.0]);
                    for (s, range) in segments.iter().enumerate() {
                        let mut w = 1.0;
                        for r in range.clone() {
                            dx.row_mut(r).scaled_add(w, &g.row(s));
                            w *= gamma;
                        }
                    }
                    accumulate(&mut adj, *input, dx);
                }
                Op::RowDot { input, coeffs } => {
                    let mut dx = coeffs.clone();
                    Zip::from(dx.rows_mut())
                        .and(g.rows())
                        .for_each(|mut row, gi| row *= gi[0]);
                    accumulate(&mut adj, *input, dx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *b, g.clone());
                    accumulate(&mut adj, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, -&g);
                    accumulate(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = &g * self.value(*b);
                    let db = &g * self.value(*a);
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Div(a, b) => {
                    let bv = self.value(*b);
                    let da = &g / bv;
                    let db = -(&g * &node.value) / bv;
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::MulConst(a, c) => accumulate(&mut adj, *a, g * c),
                Op::Scale(a, c) => accumulate(&mut adj, *a, g * *c),
                Op::Offset(a) => accumulate(&mut adj, *a, g),
                Op::Abs(a) => {
                    let mut da = g;
                    Zip::from(&mut da)
                        .and(self.value(*a))
                        .for_each(|d, x| *d *= if *x > 0.0 { 1.0 } else if *x < 0.0 { -1.0 } else { 0.0 });
                    accumulate(&mut adj, *a, da);
                }
                Op::Relu(a) => {
                    let mut da = g;
                    Zip::from(&mut da)
                        .and(self.value(*a))
                        .for_each(|d, x| if *x <= 0.0 { *d = 0.0 });
                    accumulate(&mut adj, *a, da);
                }
                Op::Square(a) => {
                    let mut da = g;
                    Zip::from(&mut da).and(self.value(*a)).for_each(|d, x| *d *= 2.0 * x);
                    accumulate(&mut adj, *a, da);
                }
                Op::NegLogSigmoid { input, floor } => {
                    let lf = floor.ln();
                    let mut da = g;
                    Zip::from(&mut da).and(self.value(*input)).for_each(|d, x| {
                        if crate::geometry::log_sigmoid(*x) > lf {
                            *d *= -sigmoid(-*x);
                        } else {
                            *d = 0.0;
                        }
                    });
                    accumulate(&mut adj, *input, da);
                }
                Op::Mean(a) => {
                    let n = shapes[a.0].0 * shapes[a.0].1;
                    let da = Array2::from_elem(shapes[a.0], g[[0, 0]] / n as f64);
                    accumulate(&mut adj, *a, da);
                }
                Op::Sum(a) => {
                    let da = Array2::from_elem(shapes[a.0], g[[0, 0]]);
                    accumulate(&mut adj, *a, da);
                }
                Op::Element(a, r, c) => {
                    let mut da = Array2::zeros(shapes[a.0]);
                    da[[*r, *c]] = g[[0, 0]];
                    accumulate(&mut adj, *a, da);
                }
            }
        }
        Adjoints { adj, shapes }
    }
}

fn accumulate(adj: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>) {
    match &mut adj[v.0] {
        Some(existing) => *existing += &delta,
        slot @ None => *slot = Some(delta),
    }
}
