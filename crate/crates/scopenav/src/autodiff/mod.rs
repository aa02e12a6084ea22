//! Minimal reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Graph`] is a define-by-run tape: each op evaluates eagerly and
//! records what it needs for the backward sweep. Parameters live outside
//! the tape in a [`ParamSet`]; their gradients accumulate into a matching
//! [`ParamGrads`], so per-sample tapes stay small and a batch can reuse
//! one accumulator.
//!
//! The op set is exactly what the sequence autoencoder needs, including a
//! composite op for the rotation-only homography on box centers whose
//! backward pass uses the analytic Jacobian from [`crate::geometry`].

mod tensor;

pub use tensor::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Tensor};

use crate::error::Result;
use crate::geometry::{self, Angle};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Index of a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Named trainable tensors, indexed densely.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet {
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.entries.push((name.into(), t));
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.entries[idx].0
    }

    pub fn tensor(&self, idx: usize) -> &Tensor {
        &self.entries[idx].1
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.entries[idx].1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Flat read access across all tensors, in push order.
    pub fn get_flat(&self, mut i: usize) -> f64 {
        for (_, t) in &self.entries {
            if i < t.len() {
                return t.data()[i];
            }
            i -= t.len();
        }
        panic!("flat index out of range");
    }

    pub fn set_flat(&mut self, mut i: usize, v: f64) {
        for (_, t) in &mut self.entries {
            if i < t.len() {
                t.data_mut()[i] = v;
                return;
            }
            i -= t.len();
        }
        panic!("flat index out of range");
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.all_finite())
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        ParamSet::new()
    }
}

/// Gradient accumulator shaped like a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct ParamGrads {
    grads: Vec<Tensor>,
}

impl ParamGrads {
    pub fn zeros_like(params: &ParamSet) -> ParamGrads {
        ParamGrads {
            grads: params
                .iter()
                .map(|(_, t)| Tensor::zeros(t.rows(), t.cols()))
                .collect(),
        }
    }

    pub fn reset(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn tensor(&self, idx: usize) -> &Tensor {
        &self.grads[idx]
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.grads[idx]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn scale(&mut self, k: f64) {
        for g in &mut self.grads {
            g.scale_assign(k);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .map(|g| g.squared_norm())
            .sum::<f64>()
            .sqrt()
    }

    pub fn get_flat(&self, mut i: usize) -> f64 {
        for t in &self.grads {
            if i < t.len() {
                return t.data()[i];
            }
            i -= t.len();
        }
        panic!("flat index out of range");
    }
}

enum Op {
    Const,
    Param { idx: usize },
    MatMul { a: NodeId, b: NodeId },
    MatMulNT { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    AddRow { a: NodeId, bias: NodeId },
    Sub { a: NodeId, b: NodeId },
    MulElem { a: NodeId, b: NodeId },
    Scale { a: NodeId, k: f64 },
    Relu { a: NodeId },
    Tanh { a: NodeId },
    Sigmoid { a: NodeId },
    Log { a: NodeId },
    Abs { a: NodeId },
    Clamp { a: NodeId, lo: f64, hi: f64 },
    SoftmaxRows { a: NodeId },
    LayerNorm { a: NodeId, gamma: NodeId, beta: NodeId },
    SliceCols { a: NodeId, start: usize, len: usize },
    ConcatCols { parts: Vec<NodeId> },
    Reshape { a: NodeId },
    TileRows { a: NodeId, reps: usize },
    Sum { a: NodeId },
    FrameConcat { presence: NodeId, boxes: NodeId },
    RotateCenters { boxes: NodeId, angles: NodeId },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Define-by-run tape over a borrowed parameter set.
pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Graph<'p> {
        Graph {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match node.op {
            Op::Param { idx } => self.params.tensor(idx),
            _ => &node.value,
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Const, t)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    pub fn param(&mut self, idx: usize) -> NodeId {
        assert!(idx < self.params.len(), "param index out of range");
        self.push(Op::Param { idx }, Tensor::zeros(0, 0))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Tensor::zeros(va.rows(), vb.cols());
        matmul_acc(va, vb, &mut out);
        self.push(Op::MatMul { a, b }, out)
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Tensor::zeros(va.rows(), vb.rows());
        matmul_nt_acc(va, vb, &mut out);
        self.push(Op::MatMulNT { a, b }, out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!((va.rows(), va.cols()), (vb.rows(), vb.cols()));
        let mut out = va.clone();
        out.add_assign(vb);
        self.push(Op::Add { a, b }, out)
    }

    /// Broadcast-add a 1xN bias to every row of a MxN matrix.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(bias));
        assert_eq!(vb.rows(), 1);
        assert_eq!(va.cols(), vb.cols());
        let mut out = va.clone();
        for r in 0..out.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(vb.row(0).iter()) {
                *o += bv;
            }
        }
        self.push(Op::AddRow { a, bias }, out)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!((va.rows(), va.cols()), (vb.rows(), vb.cols()));
        let mut out = va.clone();
        for (o, &bv) in out.data_mut().iter_mut().zip(vb.data().iter()) {
            *o -= bv;
        }
        self.push(Op::Sub { a, b }, out)
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!((va.rows(), va.cols()), (vb.rows(), vb.cols()));
        let mut out = va.clone();
        for (o, &bv) in out.data_mut().iter_mut().zip(vb.data().iter()) {
            *o *= bv;
        }
        self.push(Op::MulElem { a, b }, out)
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let mut out = self.value(a).clone();
        out.scale_assign(k);
        self.push(Op::Scale { a, k }, out)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.push(Op::Relu { a }, out)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        for v in out.data_mut() {
            *v = v.tanh();
        }
        self.push(Op::Tanh { a }, out)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        for v in out.data_mut() {
            *v = 1.0 / (1.0 + (-*v).exp());
        }
        self.push(Op::Sigmoid { a }, out)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        for v in out.data_mut() {
            *v = v.ln();
        }
        self.push(Op::Log { a }, out)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        for v in out.data_mut() {
            *v = v.abs();
        }
        self.push(Op::Abs { a }, out)
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let mut out = self.value(a).clone();
        for v in out.data_mut() {
            *v = v.clamp(lo, hi);
        }
        self.push(Op::Clamp { a, lo, hi }, out)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        self.push(Op::SoftmaxRows { a }, out)
    }

    /// Row-wise layer normalization with learned gain and shift (both 1xN).
    pub fn layer_norm(&mut self, a: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let (va, vg, vb) = (self.value(a), self.value(gamma), self.value(beta));
        assert_eq!(vg.rows(), 1);
        assert_eq!(vb.rows(), 1);
        assert_eq!(va.cols(), vg.cols());
        assert_eq!(va.cols(), vb.cols());
        let mut out = va.clone();
        let d = out.cols() as f64;
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = vg.at(0, j) * (*v - mean) * inv + vb.at(0, j);
            }
        }
        self.push(Op::LayerNorm { a, gamma, beta }, out)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let va = self.value(a);
        assert!(start + len <= va.cols());
        let mut out = Tensor::zeros(va.rows(), len);
        for r in 0..va.rows() {
            out.row_mut(r).copy_from_slice(&va.row(r)[start..start + len]);
        }
        self.push(Op::SliceCols { a, start, len }, out)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Tensor::zeros(rows, total);
        let mut at = 0;
        for &p in parts {
            let vp = self.value(p);
            assert_eq!(vp.rows(), rows);
            for r in 0..rows {
                out.row_mut(r)[at..at + vp.cols()].copy_from_slice(vp.row(r));
            }
            at += vp.cols();
        }
        self.push(
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            out,
        )
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let va = self.value(a);
        assert_eq!(va.len(), rows * cols);
        let out = Tensor::from_vec(rows, cols, va.data().to_vec());
        self.push(Op::Reshape { a }, out)
    }

    /// Stack a 1xN row `reps` times into a reps x N matrix.
    pub fn tile_rows(&mut self, a: NodeId, reps: usize) -> NodeId {
        let va = self.value(a);
        assert_eq!(va.rows(), 1);
        let mut out = Tensor::zeros(reps, va.cols());
        for r in 0..reps {
            out.row_mut(r).copy_from_slice(va.row(0));
        }
        self.push(Op::TileRows { a, reps }, out)
    }

    /// Sum of all entries, as a 1x1 node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total = self.value(a).data().iter().sum();
        self.push(Op::Sum { a }, Tensor::scalar(total))
    }

    /// Interleave per-class presence (1xN) and boxes (Nx4) into the frame
    /// feature layout `[y_0, cx_0, cy_0, w_0, h_0, y_1, ...]` (1x5N).
    pub fn frame_concat(&mut self, presence: NodeId, boxes: NodeId) -> NodeId {
        let (vp, vb) = (self.value(presence), self.value(boxes));
        assert_eq!(vp.rows(), 1);
        assert_eq!(vb.cols(), 4);
        assert_eq!(vp.cols(), vb.rows());
        let n = vp.cols();
        let mut out = Tensor::zeros(1, 5 * n);
        for i in 0..n {
            out.row_mut(0)[5 * i] = vp.at(0, i);
            out.row_mut(0)[5 * i + 1..5 * i + 5].copy_from_slice(vb.row(i));
        }
        self.push(Op::FrameConcat { presence, boxes }, out)
    }

    /// Rotation-only homography on box centers. `boxes` is Nx4
    /// `(cx, cy, w, h)`, `angles` is 1x2 `(pitch, yaw)` in radians.
    /// Widths and heights pass through bit-exactly.
    pub fn rotate_centers(&mut self, boxes: NodeId, angles: NodeId) -> Result<NodeId> {
        let (vb, va) = (self.value(boxes), self.value(angles));
        assert_eq!(vb.cols(), 4);
        assert_eq!((va.rows(), va.cols()), (1, 2));
        let pitch = Angle::from_radians(va.at(0, 0))?;
        let yaw = Angle::from_radians(va.at(0, 1))?;
        let r = geometry::rotation_matrix(pitch, yaw);
        let mut out = vb.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let (cx, cy) = geometry::rotate_center(row[0], row[1], &r)?;
            row[0] = cx;
            row[1] = cy;
        }
        Ok(self.push(Op::RotateCenters { boxes, angles }, out))
    }

    /// Reverse sweep from a 1x1 root; parameter gradients accumulate into
    /// `pgrads` (which must match the graph's `ParamSet`).
    pub fn backward(&self, root: NodeId, pgrads: &mut ParamGrads) {
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        let n = root.0 + 1;
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(n);
        grads.resize_with(n, || None);
        grads[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Const | Op::Param { .. } => {
                    // Param grads were routed directly; consts sink grads.
                    if let Op::Param { idx } = self.nodes[i].op {
                        pgrads.grads[idx].add_assign(&g);
                    }
                }
                Op::MatMul { a, b } => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    matmul_nt_acc(&g, vb, self.sink(&mut grads, pgrads, *a));
                    matmul_tn_acc(va, &g, self.sink(&mut grads, pgrads, *b));
                }
                Op::MatMulNT { a, b } => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    matmul_acc(&g, vb, self.sink(&mut grads, pgrads, *a));
                    matmul_tn_acc(&g, va, self.sink(&mut grads, pgrads, *b));
                }
                Op::Add { a, b } => {
                    self.sink(&mut grads, pgrads, *a).add_assign(&g);
                    self.sink(&mut grads, pgrads, *b).add_assign(&g);
                }
                Op::AddRow { a, bias } => {
                    self.sink(&mut grads, pgrads, *a).add_assign(&g);
                    let gb = self.sink(&mut grads, pgrads, *bias);
                    for r in 0..g.rows() {
                        for (o, &gv) in gb.row_mut(0).iter_mut().zip(g.row(r).iter()) {
                            *o += gv;
                        }
                    }
                }
                Op::Sub { a, b } => {
                    self.sink(&mut grads, pgrads, *a).add_assign(&g);
                    let gb = self.sink(&mut grads, pgrads, *b);
                    for (o, &gv) in gb.data_mut().iter_mut().zip(g.data().iter()) {
                        *o -= gv;
                    }
                }
                Op::MulElem { a, b } => {
                    let vb = self.value(*b).clone();
                    let ga = self.sink(&mut grads, pgrads, *a);
                    for ((o, &gv), &bv) in
                        ga.data_mut().iter_mut().zip(g.data().iter()).zip(vb.data())
                    {
                        *o += gv * bv;
                    }
                    let va = self.value(*a).clone();
                    let gb = self.sink(&mut grads, pgrads, *b);
                    for ((o, &gv), &av) in
                        gb.data_mut().iter_mut().zip(g.data().iter()).zip(va.data())
                    {
                        *o += gv * av;
                    }
                }
                Op::Scale { a, k } => {
                    let k = *k;
                    let ga = self.sink(&mut grads, pgrads, *a);
                    for (o, &gv) in ga.data_mut().iter_mut().zip(g.data().iter()) {
                        *o += gv * k;
                    }
                }
                Op::Relu { a } => {
                    let va = self.value(*a).clone();
                    let ga = self.sink(&mut grads, pgrads, *a);
                    for ((o, &gv), &xv) in
                        ga.data_mut().iter_mut().zip(g.data().iter()).zip(va.data())
                    {
                        if xv > 0.0 {
                            *o += gv;
                        }
                    }
                }
                Op::Tanh { a } => {
                    let y = self.nodes[i].value.clone();
                    let ga = self.sink(&mut grads, pgrads, *a);
                    for ((o, &gv), &yv) in
                        ga.data_mut().iter_mut().zip(g.data().iter()).zip(y.data())
                    {
                        *o += gv * (1.0 - yv * yv);
                    }
                }
                Op::Sigmoid { a } => {
                    let y = self.nodes[i].value.clone();
                    let ga = self.sink(&mut grads, pgrads, *a);
                    for ((o, &gv), &yv) in
                        ga.data_mut().iter_mut().zip(g.data().iter()).zip(y.data())
                    {
                        *o += gv * yv * (1.0 - yv);
                    }
                }
                Op::Log { a } => {
                    let va = self.value(*a).clone();
                    let ga = self.sink(&mut grads, pgrads, *a);
                    for ((o, &gv), &xv) in
                        ga.data_mut().iter_mut().zip(g.data().iter()).zip(va.data())
                    {
                        *o += gv / xv;
                    }
                }
                Op::Abs { a } => {
                    let va = self.value(*a).clone();
                    let ga = self.sink(&mut grads, pgrads, *a);
                    for ((o, &gv), &xv) in
                        ga.data_mut().iter_mut().zip(g.data().iter()).zip(va.data())
                    {
                        *o += gv * if xv > 0.0 {
                            1.0
                        } else if xv < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                    }
                }
                Op::Clamp { a, lo, hi } => {
                    let (lo, hi) = (*lo, *hi);
                    let va = self.value(*a).clone();
                    let ga = self.sink(&mut grads, pgrads, *a);
                    for ((o, &gv), &xv) in
                        ga.data_mut().iter_mut().zip(g.data().iter()).zip(va.data())
                    {
                        if xv > lo && xv < hi {
                            *o += gv;
                        }
                    }
                }
                Op::SoftmaxRows { a } => {
                    let y = self.nodes[i].value.clone();
                    let ga = self.sink(&mut grads, pgrads, *a);
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr.iter()).map(|(&a, &b)| a * b).sum();
                        for ((o, &gv), &yv) in
                            ga.row_mut(r).iter_mut().zip(gr.iter()).zip(yr.iter())
                        {
                            *o += yv * (gv - dot);
                        }
                    }
                }
                Op::LayerNorm { a, gamma, beta } => {
                    let va = self.value(*a).clone();
                    let vg = self.value(*gamma).clone();
                    let d = va.cols() as f64;
                    // Recompute per-row statistics; cheaper than storing them.
                    let mut xhat = va.clone();
                    let mut inv_sigma = vec![0.0; va.rows()];
                    for r in 0..va.rows() {
                        let row = xhat.row_mut(r);
                        let mean = row.iter().sum::<f64>() / d;
                        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
                        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                        inv_sigma[r] = inv;
                        for v in row.iter_mut() {
                            *v = (*v - mean) * inv;
                        }
                    }
                    {
                        let ga = self.sink(&mut grads, pgrads, *a);
                        for r in 0..va.rows() {
                            let xr = xhat.row(r);
                            let gr = g.row(r);
                            let mut mean_h = 0.0;
                            let mut mean_hx = 0.0;
                            for j in 0..xr.len() {
                                let h = gr[j] * vg.at(0, j);
                                mean_h += h;
                                mean_hx += h * xr[j];
                            }
                            mean_h /= d;
                            mean_hx /= d;
                            for (j, o) in ga.row_mut(r).iter_mut().enumerate() {
                                let h = gr[j] * vg.at(0, j);
                                *o += inv_sigma[r] * (h - mean_h - xr[j] * mean_hx);
                            }
                        }
                    }
                    {
                        let gg = self.sink(&mut grads, pgrads, *gamma);
                        for r in 0..va.rows() {
                            for (j, o) in gg.row_mut(0).iter_mut().enumerate() {
                                *o += g.at(r, j) * xhat.at(r, j);
                            }
                        }
                    }
                    {
                        let gb = self.sink(&mut grads, pgrads, *beta);
                        for r in 0..va.rows() {
                            for (o, &gv) in gb.row_mut(0).iter_mut().zip(g.row(r).iter()) {
                                *o += gv;
                            }
                        }
                    }
                }
                Op::SliceCols { a, start, len } => {
                    let (start, len) = (*start, *len);
                    let ga = self.sink(&mut grads, pgrads, *a);
                    for r in 0..g.rows() {
                        for (o, &gv) in ga.row_mut(r)[start..start + len]
                            .iter_mut()
                            .zip(g.row(r).iter())
                        {
                            *o += gv;
                        }
                    }
                }
                Op::ConcatCols { parts } => {
                    let parts = parts.clone();
                    let mut at = 0;
                    for p in parts {
                        let w = self.value(p).cols();
                        let gp = self.sink(&mut grads, pgrads, p);
                        for r in 0..g.rows() {
                            for (o, &gv) in
                                gp.row_mut(r).iter_mut().zip(g.row(r)[at..at + w].iter())
                            {
                                *o += gv;
                            }
                        }
                        at += w;
                    }
                }
                Op::Reshape { a } => {
                    let ga = self.sink(&mut grads, pgrads, *a);
                    for (o, &gv) in ga.data_mut().iter_mut().zip(g.data().iter()) {
                        *o += gv;
                    }
                }
                Op::TileRows { a, reps } => {
                    let reps = *reps;
                    let ga = self.sink(&mut grads, pgrads, *a);
                    for r in 0..reps {
                        for (o, &gv) in ga.row_mut(0).iter_mut().zip(g.row(r).iter()) {
                            *o += gv;
                        }
                    }
                }
                Op::Sum { a } => {
                    let gv = g.item();
                    let ga = self.sink(&mut grads, pgrads, *a);
                    for o in ga.data_mut() {
                        *o += gv;
                    }
                }
                Op::FrameConcat { presence, boxes } => {
                    let n = self.value(*presence).cols();
                    {
                        let gp = self.sink(&mut grads, pgrads, *presence);
                        for i in 0..n {
                            gp.row_mut(0)[i] += g.row(0)[5 * i];
                        }
                    }
                    {
                        let gb = self.sink(&mut grads, pgrads, *boxes);
                        for i in 0..n {
                            for (o, &gv) in gb
                                .row_mut(i)
                                .iter_mut()
                                .zip(g.row(0)[5 * i + 1..5 * i + 5].iter())
                            {
                                *o += gv;
                            }
                        }
                    }
                }
                Op::RotateCenters { boxes, angles } => {
                    let vb = self.value(*boxes).clone();
                    let va = self.value(*angles).clone();
                    let pitch = Angle::from_radians(va.at(0, 0)).expect("checked at forward");
                    let yaw = Angle::from_radians(va.at(0, 1)).expect("checked at forward");
                    let mut d_phi = 0.0;
                    let mut d_psi = 0.0;
                    {
                        let gb = self.sink(&mut grads, pgrads, *boxes);
                        for r in 0..vb.rows() {
                            let jac = geometry::rotate_center_jacobian(
                                vb.at(r, 0),
                                vb.at(r, 1),
                                pitch,
                                yaw,
                            )
                            .expect("forward pass succeeded");
                            let g0 = g.at(r, 0);
                            let g1 = g.at(r, 1);
                            let row = gb.row_mut(r);
                            row[0] += g0 * jac.d[0][0] + g1 * jac.d[1][0];
                            row[1] += g0 * jac.d[0][1] + g1 * jac.d[1][1];
                            row[2] += g.at(r, 2);
                            row[3] += g.at(r, 3);
                            d_phi += g0 * jac.d[0][2] + g1 * jac.d[1][2];
                            d_psi += g0 * jac.d[0][3] + g1 * jac.d[1][3];
                        }
                    }
                    let ga = self.sink(&mut grads, pgrads, *angles);
                    ga.row_mut(0)[0] += d_phi;
                    ga.row_mut(0)[1] += d_psi;
                }
            }
        }
    }

    /// Gradient sink for a parent node: params go straight to the shared
    /// accumulator, everything else to the tape-local buffer.
    fn sink<'g>(
        &self,
        grads: &'g mut [Option<Tensor>],
        pgrads: &'g mut ParamGrads,
        id: NodeId,
    ) -> &'g mut Tensor {
        if let Op::Param { idx } = self.nodes[id.0].op {
            return &mut pgrads.grads[idx];
        }
        if grads[id.0].is_none() {
            let v = self.value(id);
            grads[id.0] = Some(Tensor::zeros(v.rows(), v.cols()));
        }
        grads[id.0].as_mut().unwrap()
    }
}
