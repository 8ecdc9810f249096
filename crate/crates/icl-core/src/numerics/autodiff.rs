//! Minimal reverse-mode differentiation over a closed primitive set.
//!
//! [`DiffRecord`] is an append-only tape: every operation pushes one node
//! holding the primitive's kind, its operand indices, and the eagerly
//! computed forward value. Because nodes can only reference earlier nodes,
//! the tape order *is* a topological order — the backward pass simply walks
//! it once in reverse, accumulating adjoints.
//!
//! The primitive set is deliberately small and hand-auditable: matrix
//! multiply, transpose, add, scalar ops, Hadamard product, the elementwise
//! nonlinearities used by the models (exp, elu, gelu, relu), column
//! softmax, column concatenation, rectangular slicing, elementwise
//! reciprocal, and a squared-error reduction. Every model in this
//! repository is a composition of these, which keeps the analytic gradients
//! small enough to cross-check against [`finite_difference_oracle`].
//!
//! GELU uses the exact erf-based definition `x·Φ(x)` (not the tanh
//! approximation), so forward values are reproducible across
//! implementations that make the same choice.

use crate::error::{CoreError, Result};
use crate::numerics::matrix::DenseMatrix;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Leaf holding a parameter (marked trainable) or constant data.
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId, f64),
    Hadamard(NodeId, NodeId),
    Exp(NodeId),
    Elu(NodeId),
    Gelu(NodeId),
    Relu(NodeId),
    ColumnSoftmax(NodeId),
    ConcatCols(Vec<NodeId>),
    Slice {
        src: NodeId,
        row0: usize,
        nrows: usize,
        col0: usize,
        ncols: usize,
    },
    Recip(NodeId),
    SquaredError(NodeId, NodeId),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: DenseMatrix,
    trainable: bool,
}

/// Gradients of one scalar loss with respect to every tape node that
/// influences it. Unreached parameters get a zero gradient.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to the given node (zeros if the node does not
    /// influence the loss).
    pub fn wrt(&self, id: NodeId) -> DenseMatrix {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[id.0];
                DenseMatrix::zeros(r, c)
            }
        }
    }
}

/// Exact error function, double-precision accurate.
///
/// Rational minimax approximations in the style of W. J. Cody's FORTRAN
/// `ERF` (the algorithm behind most libm implementations), with the three
/// classic ranges |x| ≤ 0.5, 0.5 < |x| ≤ 4, |x| > 4. Relative error is
/// below 1.5e-16 across the range, which keeps erf out of the error budget
/// of the 1e-5 gradient cross-checks and the 1e-14 neutrality checks.
pub fn erf(x: f64) -> f64 {
    // Coefficients from Cody (1969), "Rational Chebyshev approximation
    // for the error function".
    const A: [f64; 5] = [
        3.16112374387056560e0,
        1.13864154151050156e2,
        3.77485237685302021e2,
        3.20937758913846947e3,
        1.85777706184603153e-1,
    ];
    const B: [f64; 4] = [
        2.36012909523441209e1,
        2.44024637934444173e2,
        1.28261652607737228e3,
        2.84423683343917062e3,
    ];
    const C: [f64; 9] = [
        5.64188496988670089e-1,
        8.88314979438837594e0,
        6.61191906371416295e1,
        2.98635138197400131e2,
        8.81952221241769090e2,
        1.71204761263407058e3,
        2.05107837782607147e3,
        1.23033935479799725e3,
        2.15311535474403846e-8,
    ];
    const D: [f64; 8] = [
        1.57449261107098347e1,
        1.17693950891312499e2,
        5.37181101862009858e2,
        1.62138957456669019e3,
        3.29079923573345963e3,
        4.36261909014324716e3,
        3.43936767414372164e3,
        1.23033935480374942e3,
    ];
    const P: [f64; 6] = [
        3.05326634961232344e-1,
        3.60344899949804439e-1,
        1.25781726111229246e-1,
        1.60837851487422766e-2,
        6.58749161529837803e-4,
        1.63153871373020978e-2,
    ];
    const Q: [f64; 5] = [
        2.56852019228982242e0,
        1.87295284992346047e0,
        5.27905102951428412e-1,
        6.05183413124413191e-2,
        2.33520497626869185e-3,
    ];
    const SQRPI: f64 = 5.64189583547756287e-1; // 1/√π

    let y = x.abs();
    if y <= 0.5 {
        let z = y * y;
        let mut num = A[4] * z;
        let mut den = z;
        for i in 0..3 {
            num = (num + A[i]) * z;
            den = (den + B[i]) * z;
        }
        return x * (num + A[3]) / (den + B[3]);
    }
    let erfc = if y <= 4.0 {
        let mut num = C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + C[i]) * y;
            den = (den + D[i]) * y;
        }
        let r = (num + C[7]) / (den + D[7]);
        let ysq = (y * 16.0).floor() / 16.0;
        let del = (y - ysq) * (y + ysq);
        (-ysq * ysq).exp() * (-del).exp() * r
    } else if y < 26.5 {
        let ysq = (y * 16.0).floor() / 16.0;
        let del = (y - ysq) * (y + ysq);
        let z = 1.0 / (y * y);
        let mut num = P[5] * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + P[i]) * z;
            den = (den + Q[i]) * z;
        }
        let r = z * (num + P[4]) / (den + Q[4]);
        (-ysq * ysq).exp() * (-del).exp() * (SQRPI - r) / y
    } else {
        0.0
    };
    if x < 0.0 {
        erfc - 1.0
    } else {
        1.0 - erfc
    }
}

/// Standard normal CDF `Φ(x)` via erf.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Standard normal density.
fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Exact (erf-based) GELU: `x · Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

/// Exponential linear unit (α = 1).
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

/// Append-only tape of primitive operations with eager forward values.
#[derive(Debug, Default)]
pub struct DiffRecord {
    nodes: Vec<Node>,
}

impl DiffRecord {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: DenseMatrix, trainable: bool) -> NodeId {
        self.nodes.push(Node { op, value, trainable });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: DenseMatrix) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// Non-trainable data leaf.
    pub fn constant(&mut self, value: DenseMatrix) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    /// Forward value of a node.
    pub fn value(&self, id: NodeId) -> &DenseMatrix {
        &self.nodes[id.0].value
    }

    /// Forward value of a 1×1 node as a plain scalar.
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        let v = self.value(id);
        if v.shape() != (1, 1) {
            return Err(CoreError::LossNotScalar {
                rows: v.rows(),
                cols: v.cols(),
            });
        }
        Ok(v.get(0, 0))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v, false))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        self.push(Op::Transpose(a), v, false)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), v, false))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let v = self.value(a).scale(c)?;
        Ok(self.push(Op::Scale(a, c), v, false))
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let v = self.value(a).map("add_const", |x| x + c)?;
        Ok(self.push(Op::AddConst(a, c), v, false))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(Op::Hadamard(a, b), v, false))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map("exp", f64::exp)?;
        Ok(self.push(Op::Exp(a), v, false))
    }

    pub fn elu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map("elu", elu)?;
        Ok(self.push(Op::Elu(a), v, false))
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map("gelu", gelu)?;
        Ok(self.push(Op::Gelu(a), v, false))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map("relu", |x| if x >= 0.0 { x } else { 0.0 })?;
        Ok(self.push(Op::Relu(a), v, false))
    }

    pub fn column_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let v = crate::numerics::matrix::column_softmax(self.value(a))?;
        Ok(self.push(Op::ColumnSoftmax(a), v, false))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let values: Vec<&DenseMatrix> = parts.iter().map(|id| &self.nodes[id.0].value).collect();
        let v = DenseMatrix::concat_cols(&values)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), v, false))
    }

    /// Rectangular window copy.
    pub fn slice(&mut self, src: NodeId, row0: usize, nrows: usize, col0: usize, ncols: usize) -> Result<NodeId> {
        let v = self.value(src).slice_rows(row0, nrows)?.slice_cols(col0, ncols)?;
        Ok(self.push(
            Op::Slice {
                src,
                row0,
                nrows,
                col0,
                ncols,
            },
            v,
            false,
        ))
    }

    /// Elementwise reciprocal (used to divide by the attention normalizer).
    pub fn recip(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map("recip", |x| 1.0 / x)?;
        Ok(self.push(Op::Recip(a), v, false))
    }

    /// Scalar reduction `Σ (a − b)²` as a 1×1 node.
    pub fn squared_error(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let diff = self.value(a).sub(self.value(b))?;
        let s = diff.as_slice().iter().map(|v| v * v).sum::<f64>();
        let v = DenseMatrix::from_vec(1, 1, vec![s])?;
        Ok(self.push(Op::SquaredError(a, b), v, false))
    }

    fn parents(&self, id: usize) -> Vec<usize> {
        match &self.nodes[id].op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Hadamard(a, b) | Op::SquaredError(a, b) => {
                vec![a.0, b.0]
            }
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::AddConst(a, _)
            | Op::Exp(a)
            | Op::Elu(a)
            | Op::Gelu(a)
            | Op::Relu(a)
            | Op::ColumnSoftmax(a)
            | Op::Recip(a) => vec![a.0],
            Op::ConcatCols(parts) => parts.iter().map(|p| p.0).collect(),
            Op::Slice { src, .. } => vec![src.0],
        }
    }

    /// Recomputes every non-leaf forward value from its operands and checks
    /// bit-for-bit agreement with the stored values.
    pub fn verify_replay(&self) -> Result<()> {
        let mut replayed: Vec<DenseMatrix> = Vec::with_capacity(self.nodes.len());
        for (idx, node) in self.nodes.iter().enumerate() {
            let get = |id: &NodeId| &replayed[id.0];
            let value = match &node.op {
                Op::Leaf => node.value.clone(),
                Op::MatMul(a, b) => get(a).matmul(get(b))?,
                Op::Transpose(a) => get(a).transpose(),
                Op::Add(a, b) => get(a).add(get(b))?,
                Op::Scale(a, c) => get(a).scale(*c)?,
                Op::AddConst(a, c) => get(a).map("add_const", |x| x + c)?,
                Op::Hadamard(a, b) => get(a).hadamard(get(b))?,
                Op::Exp(a) => get(a).map("exp", f64::exp)?,
                Op::Elu(a) => get(a).map("elu", elu)?,
                Op::Gelu(a) => get(a).map("gelu", gelu)?,
                Op::Relu(a) => get(a).map("relu", |x| if x >= 0.0 { x } else { 0.0 })?,
                Op::ColumnSoftmax(a) => crate::numerics::matrix::column_softmax(get(a))?,
                Op::ConcatCols(parts) => {
                    let vals: Vec<&DenseMatrix> = parts.iter().map(|p| &replayed[p.0]).collect();
                    DenseMatrix::concat_cols(&vals)?
                }
                Op::Slice {
                    src,
                    row0,
                    nrows,
                    col0,
                    ncols,
                } => get(src).slice_rows(*row0, *nrows)?.slice_cols(*col0, *ncols)?,
                Op::Recip(a) => get(a).map("recip", |x| 1.0 / x)?,
                Op::SquaredError(a, b) => {
                    let diff = get(a).sub(get(b))?;
                    let s = diff.as_slice().iter().map(|v| v * v).sum::<f64>();
                    DenseMatrix::from_vec(1, 1, vec![s])?
                }
            };
            if value != node.value {
                return Err(CoreError::NonFinite {
                    op: "verify_replay: stored value differs from replay",
                });
            }
            replayed.push(self.nodes[idx].value.clone());
        }
        Ok(())
    }

    /// Reverse-mode gradients of the scalar `loss` node. Each node
    /// reachable from the loss is visited exactly once, in reverse tape
    /// (= reverse topological) order.
    pub fn backward_gradients(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(CoreError::LossNotScalar {
                rows: lv.rows(),
                cols: lv.cols(),
            });
        }

        // Reachability from the loss, so unrelated tape entries are skipped.
        let mut reachable = vec![false; self.nodes.len()];
        let mut stack = vec![loss.0];
        while let Some(id) = stack.pop() {
            if reachable[id] {
                continue;
            }
            reachable[id] = true;
            stack.extend(self.parents(id));
        }

        let mut grads: Vec<Option<DenseMatrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(DenseMatrix::from_vec(1, 1, vec![1.0])?);

        let accumulate = |slot: &mut Option<DenseMatrix>, delta: DenseMatrix| -> Result<()> {
            *slot = Some(match slot.take() {
                Some(g) => g.add(&delta)?,
                None => delta,
            });
            Ok(())
        };

        for id in (0..=loss.0).rev() {
            if !reachable[id] {
                continue;
            }
            let g = match grads[id].clone() {
                Some(g) => g,
                None => continue, // reachable but no adjoint: does not feed the loss
            };
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul(&self.value(*b).transpose())?;
                    let db = self.value(*a).transpose().matmul(&g)?;
                    accumulate(&mut grads[a.0], da)?;
                    accumulate(&mut grads[b.0], db)?;
                }
                Op::Transpose(a) => accumulate(&mut grads[a.0], g.transpose())?,
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone())?;
                    accumulate(&mut grads[b.0], g)?;
                }
                Op::Scale(a, c) => accumulate(&mut grads[a.0], g.scale(*c)?)?,
                Op::AddConst(a, _) => accumulate(&mut grads[a.0], g)?,
                Op::Hadamard(a, b) => {
                    let da = g.hadamard(self.value(*b))?;
                    let db = g.hadamard(self.value(*a))?;
                    accumulate(&mut grads[a.0], da)?;
                    accumulate(&mut grads[b.0], db)?;
                }
                Op::Exp(a) => {
                    // d/dx e^x = e^x, which is the stored forward value.
                    accumulate(&mut grads[a.0], g.hadamard(&self.nodes[id].value)?)?;
                }
                Op::Elu(a) => {
                    let deriv = self.value(*a).map("elu'", |x| if x > 0.0 { 1.0 } else { x.exp() })?;
                    accumulate(&mut grads[a.0], g.hadamard(&deriv)?)?;
                }
                Op::Gelu(a) => {
                    let deriv = self
                        .value(*a)
                        .map("gelu'", |x| normal_cdf(x) + x * normal_pdf(x))?;
                    accumulate(&mut grads[a.0], g.hadamard(&deriv)?)?;
                }
                Op::Relu(a) => {
                    let deriv = self.value(*a).map("relu'", |x| if x >= 0.0 { 1.0 } else { 0.0 })?;
                    accumulate(&mut grads[a.0], g.hadamard(&deriv)?)?;
                }
                Op::ColumnSoftmax(a) => {
                    // Per column: dz = s ⊙ (g − ⟨g, s⟩·1).
                    let s = &self.nodes[id].value;
                    let (rows, cols) = s.shape();
                    let mut dz = vec![0.0; rows * cols];
                    for j in 0..cols {
                        let sc = s.col(j);
                        let gc = g.col(j);
                        let inner: f64 = sc.iter().zip(gc).map(|(x, y)| x * y).sum();
                        for i in 0..rows {
                            dz[i + j * rows] = sc[i] * (gc[i] - inner);
                        }
                    }
                    accumulate(&mut grads[a.0], DenseMatrix::from_vec(rows, cols, dz)?)?;
                }
                Op::ConcatCols(parts) => {
                    let mut col0 = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        let block = g.slice_cols(col0, w)?;
                        accumulate(&mut grads[p.0], block)?;
                        col0 += w;
                    }
                }
                Op::Slice {
                    src,
                    row0,
                    nrows,
                    col0,
                    ncols,
                } => {
                    let (pr, pc) = self.value(*src).shape();
                    let mut scat = DenseMatrix::zeros(pr, pc);
                    for j in 0..*ncols {
                        for i in 0..*nrows {
                            scat.set(row0 + i, col0 + j, g.get(i, j))?;
                        }
                    }
                    accumulate(&mut grads[src.0], scat)?;
                }
                Op::Recip(a) => {
                    // d/dx (1/x) = −1/x², with 1/x the stored value.
                    let v = &self.nodes[id].value;
                    let deriv = v.hadamard(v)?.scale(-1.0)?;
                    accumulate(&mut grads[a.0], g.hadamard(&deriv)?)?;
                }
                Op::SquaredError(a, b) => {
                    let gs = g.get(0, 0);
                    let diff = self.value(*a).sub(self.value(*b))?;
                    accumulate(&mut grads[a.0], diff.scale(2.0 * gs)?)?;
                    accumulate(&mut grads[b.0], diff.scale(-2.0 * gs)?)?;
                }
            }
        }

        // Trainable leaves must come out finite — a NaN here means the
        // training step diverged and must not be applied silently.
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.trainable {
                if let Some(g) = &grads[idx] {
                    if g.as_slice().iter().any(|v| !v.is_finite()) {
                        return Err(CoreError::NonFinite {
                            op: "backward_gradients",
                        });
                    }
                }
            }
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Central finite differences `(f(θ + h·e) − f(θ − h·e)) / 2h`, coordinate
/// by coordinate, over a list of parameter matrices.
///
/// The probe function receives the full perturbed parameter list each call.
/// Fails if `h ≤ 0` or if any probe evaluation is non-finite.
pub fn finite_difference_oracle<F>(f: &mut F, params: &[DenseMatrix], h: f64) -> Result<Vec<DenseMatrix>>
where
    F: FnMut(&[DenseMatrix]) -> Result<f64>,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(CoreError::InvalidParameter {
            name: "h",
            reason: format!("step must be positive and finite, got {h}"),
        });
    }
    let mut work: Vec<DenseMatrix> = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let (rows, cols) = params[p].shape();
        let mut g = DenseMatrix::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                let orig = params[p].get(i, j);
                work[p].set(i, j, orig + h)?;
                let up = f(&work)?;
                work[p].set(i, j, orig - h)?;
                let down = f(&work)?;
                work[p].set(i, j, orig)?;
                if !up.is_finite() || !down.is_finite() {
                    return Err(CoreError::NonFinite {
                        op: "finite_difference_oracle",
                    });
                }
                g.set(i, j, (up - down) / (2.0 * h))?;
            }
        }
        grads.push(g);
    }
    Ok(grads)
}
