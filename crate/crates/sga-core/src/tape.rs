//! Wengert-list autodiff. Every differentiable value lives in an arena owned
//! by the tape; ops append nodes that remember their inputs and enough local
//! state to run the chain rule in reverse. Backward is one sweep from the
//! loss node to the leaves, then parameter gradients are copied out to their
//! owning [`crate::tensor::Tensor`]s by registry id.
//!
//! Solvers and encoders build their whole unrolled computation on one tape,
//! so "backprop through the solver" is the ordinary backward sweep over the
//! recorded steps. A tape that has run backward refuses further recording
//! until `reset`.

use crate::error::{SgaError, SgaResult};
use crate::scalar::{s, Scalar};
use crate::tensor::Tensor;

/// Handle to a tape node. Valid until the owning tape is reset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Index of a parameter tensor in the caller's registry; the tape uses it
/// only to route gradients back after the sweep.
pub type ParamId = usize;

#[derive(Debug)]
enum Op<S: Scalar> {
    Leaf,
    Matmul { a: Var, b: Var },
    Transpose { a: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    AddRow { a: Var, bias: Var },
    Scale { a: Var, c: S },
    Concat { parts: Vec<Var>, axis: usize },
    SliceRows { a: Var, start: usize },
    GatherRows { a: Var, indices: Vec<usize> },
    Relu { a: Var },
    Tanh { a: Var },
    Softmax { a: Var },
    Ln { a: Var },
    ReduceSum { a: Var },
    ReduceMean { a: Var },
    SmoothL1 { a: Var, b: Var },
    MarginLoss { scores: Var, positives: Vec<usize> },
}

#[derive(Debug)]
struct Node<S: Scalar> {
    shape: Vec<usize>,
    data: Vec<S>,
    op: Op<S>,
    param: Option<ParamId>,
}

#[derive(Debug, PartialEq, Eq)]
enum TapeState {
    Recording,
    Swept,
}

#[derive(Debug)]
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    grads: Vec<Vec<S>>,
    state: TapeState,
    ln_clamps: u64,
}

/// Probabilities below this are clamped before `ln`; each clamp bumps the
/// tape's warning counter.
pub const LN_CLAMP: f64 = 1e-12;

fn dims2(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        _ => (shape[0], shape[shape.len() - 1]),
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            state: TapeState::Recording,
            ln_clamps: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Clears all nodes and gradients; handles from before the reset are dead.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.state = TapeState::Recording;
    }

    /// Cumulative count of `ln` inputs clamped at [`LN_CLAMP`].
    pub fn ln_clamp_count(&self) -> u64 {
        self.ln_clamps
    }

    pub fn value(&self, v: Var) -> &[S] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Scalar value of a single-element node.
    pub fn scalar_value(&self, v: Var) -> SgaResult<S> {
        let d = self.value(v);
        if d.len() != 1 {
            return Err(SgaError::contract(
                "scalar_value",
                format!("node has {} elements", d.len()),
            ));
        }
        Ok(d[0])
    }

    /// Gradient of the swept loss w.r.t. node `v`.
    pub fn grad(&self, v: Var) -> SgaResult<&[S]> {
        if self.state != TapeState::Swept {
            return Err(SgaError::contract("grad", "backward has not run"));
        }
        Ok(&self.grads[v.0])
    }

    fn guard_recording(&self, op: &'static str) -> SgaResult<()> {
        if self.state != TapeState::Recording {
            return Err(SgaError::contract(
                op,
                "tape already swept; reset before recording new ops",
            ));
        }
        Ok(())
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<S>, op: Op<S>, param: Option<ParamId>) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node { shape, data, op, param });
        Var(self.nodes.len() - 1)
    }

    // ── Leaves ──────────────────────────────────────────────────────────

    /// Records a parameter leaf; after backward its gradient is routed to
    /// registry slot `pid`.
    pub fn param(&mut self, pid: ParamId, t: &Tensor<S>) -> SgaResult<Var> {
        self.guard_recording("param")?;
        Ok(self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, Some(pid)))
    }

    /// Records a non-parameter leaf (inputs, masks, noise increments).
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<S>) -> SgaResult<Var> {
        self.guard_recording("constant")?;
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(SgaError::contract(
                "constant",
                format!("shape {:?} implies {}, data has {}", shape, n, data.len()),
            ));
        }
        Ok(self.push(shape, data, Op::Leaf, None))
    }

    pub fn constant_tensor(&mut self, t: &Tensor<S>) -> SgaResult<Var> {
        self.constant(t.shape().to_vec(), t.data().to_vec())
    }

    pub fn constant_scalar(&mut self, v: S) -> SgaResult<Var> {
        self.constant(vec![1], vec![v])
    }

    // ── Ops ─────────────────────────────────────────────────────────────

    /// `[m,k] x [k,n] -> [m,n]`; rank-1 operands are read as single rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> SgaResult<Var> {
        self.guard_recording("matmul")?;
        let (m, ka) = dims2(self.shape(a));
        let (kb, n) = dims2(self.shape(b));
        if ka != kb {
            return Err(SgaError::contract(
                "matmul",
                format!("inner dims differ: {:?} x {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let mut out = vec![S::zero(); m * n];
        {
            let ad = self.value(a);
            let bd = self.value(b);
            for i in 0..m {
                let arow = &ad[i * ka..(i + 1) * ka];
                let crow = &mut out[i * n..(i + 1) * n];
                for (kk, &aik) in arow.iter().enumerate() {
                    let brow = &bd[kk * n..(kk + 1) * n];
                    for (cj, &bj) in crow.iter_mut().zip(brow) {
                        *cj += aik * bj;
                    }
                }
            }
        }
        Ok(self.push(vec![m, n], out, Op::Matmul { a, b }, None))
    }

    pub fn transpose(&mut self, a: Var) -> SgaResult<Var> {
        self.guard_recording("transpose")?;
        let (r, c) = dims2(self.shape(a));
        let ad = self.value(a);
        let mut out = vec![S::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = ad[i * c + j];
            }
        }
        Ok(self.push(vec![c, r], out, Op::Transpose { a }, None))
    }

    fn binary_same_shape(&self, op: &'static str, a: Var, b: Var) -> SgaResult<()> {
        if dims2(self.shape(a)) != dims2(self.shape(b)) {
            return Err(SgaError::contract(
                op,
                format!("shape mismatch: {:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> SgaResult<Var> {
        self.guard_recording("add")?;
        self.binary_same_shape("add", a, b)?;
        let data: Vec<S> = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, data, Op::Add { a, b }, None))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> SgaResult<Var> {
        self.guard_recording("sub")?;
        self.binary_same_shape("sub", a, b)?;
        let data: Vec<S> = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x - y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, data, Op::Sub { a, b }, None))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> SgaResult<Var> {
        self.guard_recording("mul")?;
        self.binary_same_shape("mul", a, b)?;
        let data: Vec<S> = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, data, Op::Mul { a, b }, None))
    }

    /// `[n,d] + [d]`, bias broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> SgaResult<Var> {
        self.guard_recording("add_row")?;
        let (n, d) = dims2(self.shape(a));
        let (br, bd) = dims2(self.shape(bias));
        if br != 1 || bd != d {
            return Err(SgaError::contract(
                "add_row",
                format!("bias {:?} does not broadcast over {:?}", self.shape(bias), self.shape(a)),
            ));
        }
        let mut data = self.value(a).to_vec();
        let bv = self.value(bias).to_vec();
        for i in 0..n {
            for j in 0..d {
                data[i * d + j] += bv[j];
            }
        }
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, data, Op::AddRow { a, bias }, None))
    }

    pub fn scale(&mut self, a: Var, c: S) -> SgaResult<Var> {
        self.guard_recording("scale")?;
        let data: Vec<S> = self.value(a).iter().map(|&x| x * c).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, data, Op::Scale { a, c }, None))
    }

    pub fn neg(&mut self, a: Var) -> SgaResult<Var> {
        self.scale(a, -S::one())
    }

    /// Concatenation along `axis` (0: stack rows, 1: widen rows).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> SgaResult<Var> {
        self.guard_recording("concat")?;
        if parts.is_empty() {
            return Err(SgaError::contract("concat", "empty part list"));
        }
        if axis > 1 {
            return Err(SgaError::contract("concat", format!("axis {axis} out of range")));
        }
        let dims: Vec<(usize, usize)> = parts.iter().map(|&p| dims2(self.shape(p))).collect();
        let (r0, c0) = dims[0];
        let (rows, cols) = if axis == 0 {
            if dims.iter().any(|&(_, c)| c != c0) {
                return Err(SgaError::contract("concat", "axis 0 requires equal column counts"));
            }
            (dims.iter().map(|&(r, _)| r).sum(), c0)
        } else {
            if dims.iter().any(|&(r, _)| r != r0) {
                return Err(SgaError::contract("concat", "axis 1 requires equal row counts"));
            }
            (r0, dims.iter().map(|&(_, c)| c).sum())
        };
        let mut data = vec![S::zero(); rows * cols];
        if axis == 0 {
            let mut off = 0;
            for &p in parts {
                let v = self.value(p);
                data[off..off + v.len()].copy_from_slice(v);
                off += v.len();
            }
        } else {
            let mut coff = 0;
            for (&p, &(_, pc)) in parts.iter().zip(&dims) {
                let v = self.value(p);
                for i in 0..rows {
                    data[i * cols + coff..i * cols + coff + pc]
                        .copy_from_slice(&v[i * pc..(i + 1) * pc]);
                }
                coff += pc;
            }
        }
        Ok(self.push(vec![rows, cols], data, Op::Concat { parts: parts.to_vec(), axis }, None))
    }

    /// Contiguous row slice `[start, end)`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> SgaResult<Var> {
        self.guard_recording("slice_rows")?;
        let (r, c) = dims2(self.shape(a));
        if start >= end || end > r {
            return Err(SgaError::contract(
                "slice_rows",
                format!("range {start}..{end} invalid for {r} rows"),
            ));
        }
        let data = self.value(a)[start * c..end * c].to_vec();
        Ok(self.push(vec![end - start, c], data, Op::SliceRows { a, start }, None))
    }

    /// Splits into consecutive row blocks; inverse of `concat(axis 0)`.
    pub fn split_rows(&mut self, a: Var, sizes: &[usize]) -> SgaResult<Vec<Var>> {
        let (r, _) = dims2(self.shape(a));
        if sizes.iter().sum::<usize>() != r {
            return Err(SgaError::contract(
                "split_rows",
                format!("sizes {:?} do not sum to {r} rows", sizes),
            ));
        }
        let mut out = Vec::with_capacity(sizes.len());
        let mut at = 0;
        for &sz in sizes {
            out.push(self.slice_rows(a, at, at + sz)?);
            at += sz;
        }
        Ok(out)
    }

    /// Row gather by arbitrary indices (embedding/position lookup).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> SgaResult<Var> {
        self.guard_recording("gather_rows")?;
        let (r, c) = dims2(self.shape(a));
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(SgaError::contract(
                "gather_rows",
                format!("index {bad} out of range for {r} rows"),
            ));
        }
        let ad = self.value(a);
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(&ad[i * c..(i + 1) * c]);
        }
        Ok(self.push(
            vec![indices.len(), c],
            data,
            Op::GatherRows { a, indices: indices.to_vec() },
            None,
        ))
    }

    pub fn relu(&mut self, a: Var) -> SgaResult<Var> {
        self.guard_recording("relu")?;
        let data: Vec<S> = self.value(a).iter().map(|&x| x.max(S::zero())).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, data, Op::Relu { a }, None))
    }

    pub fn tanh(&mut self, a: Var) -> SgaResult<Var> {
        self.guard_recording("tanh")?;
        let data: Vec<S> = self.value(a).iter().map(|&x| x.tanh()).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, data, Op::Tanh { a }, None))
    }

    /// Row-wise softmax with max subtraction; rows sum to 1.
    pub fn softmax(&mut self, a: Var) -> SgaResult<Var> {
        self.guard_recording("softmax")?;
        let (r, c) = dims2(self.shape(a));
        if c == 0 {
            return Err(SgaError::contract("softmax", "empty rows"));
        }
        let ad = self.value(a);
        let mut data = vec![S::zero(); r * c];
        for i in 0..r {
            let row = &ad[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(S::neg_infinity(), S::max);
            let mut denom = S::zero();
            for j in 0..c {
                let e = (row[j] - m).exp();
                data[i * c + j] = e;
                denom += e;
            }
            for j in 0..c {
                data[i * c + j] = data[i * c + j] / denom;
            }
        }
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, data, Op::Softmax { a }, None))
    }

    /// Natural log with inputs clamped at [`LN_CLAMP`]; clamped entries get
    /// zero gradient and bump the warning counter.
    pub fn ln(&mut self, a: Var) -> SgaResult<Var> {
        self.guard_recording("ln")?;
        let clamp = s::<S>(LN_CLAMP);
        let mut clamped = 0u64;
        let data: Vec<S> = self
            .value(a)
            .iter()
            .map(|&x| {
                if x < clamp {
                    clamped += 1;
                    clamp.ln()
                } else {
                    x.ln()
                }
            })
            .collect();
        self.ln_clamps += clamped;
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, data, Op::Ln { a }, None))
    }

    pub fn reduce_sum(&mut self, a: Var) -> SgaResult<Var> {
        self.guard_recording("reduce_sum")?;
        let t: S = self.value(a).iter().cloned().sum();
        Ok(self.push(vec![1], vec![t], Op::ReduceSum { a }, None))
    }

    pub fn reduce_mean(&mut self, a: Var) -> SgaResult<Var> {
        self.guard_recording("reduce_mean")?;
        let n = self.value(a).len();
        if n == 0 {
            return Err(SgaError::contract("reduce_mean", "empty tensor"));
        }
        let t: S = self.value(a).iter().cloned().sum();
        let m = t / s::<S>(n as f64);
        Ok(self.push(vec![1], vec![m], Op::ReduceMean { a }, None))
    }

    /// Elementwise smooth-L1 (beta = 1) of `a - b`, summed to a scalar.
    /// Symmetric in its arguments; both sides receive gradients.
    pub fn smooth_l1(&mut self, a: Var, b: Var) -> SgaResult<Var> {
        self.guard_recording("smooth_l1")?;
        self.binary_same_shape("smooth_l1", a, b)?;
        let half = s::<S>(0.5);
        let one = S::one();
        let mut total = S::zero();
        for (&x, &y) in self.value(a).iter().zip(self.value(b)) {
            let d = x - y;
            let ad = d.abs();
            total += if ad < one { half * d * d } else { ad - half };
        }
        Ok(self.push(vec![1], vec![total], Op::SmoothL1 { a, b }, None))
    }

    /// Multi-label margin loss on raw scores:
    /// `sum_{u in P+} sum_{v not in P+} max(0, 1 - s[u] + s[v])`.
    /// Empty positive set (or no negatives) gives zero loss.
    pub fn margin_loss(&mut self, scores: Var, positives: &[usize]) -> SgaResult<Var> {
        self.guard_recording("margin_loss")?;
        let (r, p) = dims2(self.shape(scores));
        if r != 1 {
            return Err(SgaError::contract("margin_loss", "scores must be a single row"));
        }
        if let Some(&bad) = positives.iter().find(|&&u| u >= p) {
            return Err(SgaError::contract(
                "margin_loss",
                format!("positive index {bad} out of range for {p} classes"),
            ));
        }
        let mut pos = positives.to_vec();
        pos.sort_unstable();
        pos.dedup();
        let is_pos: Vec<bool> = (0..p).map(|i| pos.binary_search(&i).is_ok()).collect();
        let sv = self.value(scores);
        let one = S::one();
        let mut total = S::zero();
        for u in 0..p {
            if !is_pos[u] {
                continue;
            }
            for v in 0..p {
                if is_pos[v] {
                    continue;
                }
                let term = one - sv[u] + sv[v];
                if term > S::zero() {
                    total += term;
                }
            }
        }
        Ok(self.push(vec![1], vec![total], Op::MarginLoss { scores, positives: pos }, None))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse sweep from scalar node `loss`. Seeds d(loss)/d(loss) = 1 and
    /// fills every node's gradient buffer; afterwards the tape only answers
    /// `value`/`grad` queries until `reset`.
    pub fn backward(&mut self, loss: Var) -> SgaResult<()> {
        self.guard_recording("backward")?;
        if self.nodes[loss.0].data.len() != 1 {
            return Err(SgaError::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.nodes[loss.0].shape),
            ));
        }
        self.grads = self.nodes.iter().map(|n| vec![S::zero(); n.data.len()]).collect();
        self.grads[loss.0][0] = S::one();

        for idx in (0..self.nodes.len()).rev() {
            let g_out = std::mem::take(&mut self.grads[idx]);
            if g_out.iter().all(|&g| g == S::zero()) {
                self.grads[idx] = g_out;
                continue;
            }
            // Split borrows: clone op metadata is avoided by indexing grads
            // through raw pair access below.
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    let (m, k) = dims2(&self.nodes[a.0].shape);
                    let (_, n) = dims2(&self.nodes[b.0].shape);
                    let (ai, bi) = (a.0, b.0);
                    // dA[i,kk] += dot(dC[i,:], B[kk,:])
                    {
                        let bd = &self.nodes[bi].data;
                        let ga = &mut self.grads[ai];
                        for i in 0..m {
                            let grow = &g_out[i * n..(i + 1) * n];
                            for kk in 0..k {
                                let brow = &bd[kk * n..(kk + 1) * n];
                                let mut acc = S::zero();
                                for j in 0..n {
                                    acc += grow[j] * brow[j];
                                }
                                ga[i * k + kk] += acc;
                            }
                        }
                    }
                    // dB[kk,:] += A[i,kk] * dC[i,:]
                    {
                        let ad = &self.nodes[ai].data;
                        let gb = &mut self.grads[bi];
                        for i in 0..m {
                            let grow = &g_out[i * n..(i + 1) * n];
                            for kk in 0..k {
                                let aik = ad[i * k + kk];
                                let brow = &mut gb[kk * n..(kk + 1) * n];
                                for j in 0..n {
                                    brow[j] += aik * grow[j];
                                }
                            }
                        }
                    }
                }
                Op::Transpose { a } => {
                    let (r, c) = dims2(&self.nodes[a.0].shape);
                    let ga = &mut self.grads[a.0];
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g_out[j * r + i];
                        }
                    }
                }
                Op::Add { a, b } => {
                    let (ai, bi) = (a.0, b.0);
                    for (g, &d) in self.grads[ai].iter_mut().zip(&g_out) {
                        *g += d;
                    }
                    for (g, &d) in self.grads[bi].iter_mut().zip(&g_out) {
                        *g += d;
                    }
                }
                Op::Sub { a, b } => {
                    let (ai, bi) = (a.0, b.0);
                    for (g, &d) in self.grads[ai].iter_mut().zip(&g_out) {
                        *g += d;
                    }
                    for (g, &d) in self.grads[bi].iter_mut().zip(&g_out) {
                        *g -= d;
                    }
                }
                Op::Mul { a, b } => {
                    let (ai, bi) = (a.0, b.0);
                    // Defensive: a == b would alias; route through two passes.
                    let bd: Vec<S> = self.nodes[bi].data.clone();
                    let ad: Vec<S> = self.nodes[ai].data.clone();
                    for ((g, &d), &bv) in self.grads[ai].iter_mut().zip(&g_out).zip(&bd) {
                        *g += d * bv;
                    }
                    for ((g, &d), &av) in self.grads[bi].iter_mut().zip(&g_out).zip(&ad) {
                        *g += d * av;
                    }
                }
                Op::AddRow { a, bias } => {
                    let (n, d) = dims2(&self.nodes[a.0].shape);
                    let (ai, bi) = (a.0, bias.0);
                    for (g, &go) in self.grads[ai].iter_mut().zip(&g_out) {
                        *g += go;
                    }
                    let gb = &mut self.grads[bi];
                    for i in 0..n {
                        for j in 0..d {
                            gb[j] += g_out[i * d + j];
                        }
                    }
                }
                Op::Scale { a, c } => {
                    let c = *c;
                    for (g, &d) in self.grads[a.0].iter_mut().zip(&g_out) {
                        *g += d * c;
                    }
                }
                Op::Concat { parts, axis } => {
                    let parts = parts.clone();
                    let axis = *axis;
                    let (rows, cols) = dims2(&self.nodes[idx].shape);
                    if axis == 0 {
                        let mut off = 0;
                        for p in parts {
                            let len = self.nodes[p.0].data.len();
                            for (g, &d) in
                                self.grads[p.0].iter_mut().zip(&g_out[off..off + len])
                            {
                                *g += d;
                            }
                            off += len;
                        }
                    } else {
                        let mut coff = 0;
                        for p in parts {
                            let (_, pc) = dims2(&self.nodes[p.0].shape);
                            let gp = &mut self.grads[p.0];
                            for i in 0..rows {
                                for j in 0..pc {
                                    gp[i * pc + j] += g_out[i * cols + coff + j];
                                }
                            }
                            coff += pc;
                        }
                    }
                }
                Op::SliceRows { a, start } => {
                    let (_, c) = dims2(&self.nodes[a.0].shape);
                    let off = start * c;
                    for (g, &d) in self.grads[a.0][off..off + g_out.len()].iter_mut().zip(&g_out)
                    {
                        *g += d;
                    }
                }
                Op::GatherRows { a, indices } => {
                    let indices = indices.clone();
                    let (_, c) = dims2(&self.nodes[a.0].shape);
                    let ga = &mut self.grads[a.0];
                    for (row, &src) in indices.iter().enumerate() {
                        for j in 0..c {
                            ga[src * c + j] += g_out[row * c + j];
                        }
                    }
                }
                Op::Relu { a } => {
                    let ai = a.0;
                    let xd: Vec<S> = self.nodes[ai].data.clone();
                    for ((g, &d), &x) in self.grads[ai].iter_mut().zip(&g_out).zip(&xd) {
                        if x > S::zero() {
                            *g += d;
                        }
                    }
                }
                Op::Tanh { a } => {
                    let ai = a.0;
                    let yd: Vec<S> = self.nodes[idx].data.clone();
                    for ((g, &d), &y) in self.grads[ai].iter_mut().zip(&g_out).zip(&yd) {
                        *g += d * (S::one() - y * y);
                    }
                }
                Op::Softmax { a } => {
                    let ai = a.0;
                    let (r, c) = dims2(&self.nodes[idx].shape);
                    let yd: Vec<S> = self.nodes[idx].data.clone();
                    let ga = &mut self.grads[ai];
                    for i in 0..r {
                        let y = &yd[i * c..(i + 1) * c];
                        let go = &g_out[i * c..(i + 1) * c];
                        let mut dot = S::zero();
                        for j in 0..c {
                            dot += go[j] * y[j];
                        }
                        for j in 0..c {
                            ga[i * c + j] += y[j] * (go[j] - dot);
                        }
                    }
                }
                Op::Ln { a } => {
                    let ai = a.0;
                    let clamp = s::<S>(LN_CLAMP);
                    let xd: Vec<S> = self.nodes[ai].data.clone();
                    for ((g, &d), &x) in self.grads[ai].iter_mut().zip(&g_out).zip(&xd) {
                        if x >= clamp {
                            *g += d / x;
                        }
                        // Clamped inputs are flat: no gradient.
                    }
                }
                Op::ReduceSum { a } => {
                    let d = g_out[0];
                    for g in self.grads[a.0].iter_mut() {
                        *g += d;
                    }
                }
                Op::ReduceMean { a } => {
                    let n = self.nodes[a.0].data.len();
                    let d = g_out[0] / s::<S>(n as f64);
                    for g in self.grads[a.0].iter_mut() {
                        *g += d;
                    }
                }
                Op::SmoothL1 { a, b } => {
                    let (ai, bi) = (a.0, b.0);
                    let d_up = g_out[0];
                    let one = S::one();
                    let diffs: Vec<S> = self.nodes[ai]
                        .data
                        .iter()
                        .zip(&self.nodes[bi].data)
                        .map(|(&x, &y)| {
                            let d = x - y;
                            if d > one {
                                one
                            } else if d < -one {
                                -one
                            } else {
                                d
                            }
                        })
                        .collect();
                    for (g, &d) in self.grads[ai].iter_mut().zip(&diffs) {
                        *g += d_up * d;
                    }
                    for (g, &d) in self.grads[bi].iter_mut().zip(&diffs) {
                        *g -= d_up * d;
                    }
                }
                Op::MarginLoss { scores, positives } => {
                    let si = scores.0;
                    let positives = positives.clone();
                    let p = self.nodes[si].data.len();
                    let is_pos: Vec<bool> =
                        (0..p).map(|i| positives.binary_search(&i).is_ok()).collect();
                    let sv: Vec<S> = self.nodes[si].data.clone();
                    let d_up = g_out[0];
                    let one = S::one();
                    let gs = &mut self.grads[si];
                    for u in 0..p {
                        if !is_pos[u] {
                            continue;
                        }
                        for v in 0..p {
                            if is_pos[v] {
                                continue;
                            }
                            if one - sv[u] + sv[v] > S::zero() {
                                gs[u] -= d_up;
                                gs[v] += d_up;
                            }
                        }
                    }
                }
            }
            self.grads[idx] = g_out;
        }
        self.state = TapeState::Swept;
        Ok(())
    }

    /// Adds each registered parameter's gradient into its registry tensor.
    pub fn write_param_grads(&self, params: &mut [Tensor<S>]) -> SgaResult<()> {
        if self.state != TapeState::Swept {
            return Err(SgaError::contract("write_param_grads", "backward has not run"));
        }
        for (node, grad) in self.nodes.iter().zip(&self.grads) {
            if let Some(pid) = node.param {
                if pid >= params.len() {
                    return Err(SgaError::contract(
                        "write_param_grads",
                        format!("param id {pid} out of range"),
                    ));
                }
                params[pid].accumulate_grad(grad)?;
            }
        }
        Ok(())
    }
}
