//! Define-by-run reverse-mode autodiff.
//!
//! Every op appends a node to the [`Tape`]; node inputs always precede the
//! node itself, so a single reverse sweep over creation order is a valid
//! topological order for backpropagation.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.idx
    }
}

/// Which side of the attention pair a relative-bias term projects.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RelSide {
    /// `bias[h,i,j] = vec[h,i] . table[off(j-i)]`
    Query,
    /// `bias[h,i,j] = vec[h,j] . table[off(j-i)]`
    Key,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, c: f64 },
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize, pairs: Vec<(usize, usize)> },
    Permute { a: usize, src_of: Vec<usize> },
    Reshape { a: usize },
    Concat { parts: Vec<usize>, outer: usize, widths: Vec<usize> },
    Slice { a: usize, outer: usize, inner: usize, axis_len: usize, start: usize, len: usize },
    Gather { table: usize, ids: Vec<usize> },
    Relu { a: usize },
    Gelu { a: usize },
    Sigmoid { a: usize },
    LayerNorm { x: usize, gain: usize, bias: usize, xhat: Vec<f64>, rstd: Vec<f64> },
    Conv2d { x: usize, w: usize, b: usize, geom: ConvGeom },
    ConvTranspose2d { x: usize, w: usize, b: usize, geom: ConvGeom },
    Mean { a: usize },
    Sum { a: usize },
    Softmax { a: usize },
    CrossEntropy { logits: usize, targets: Vec<usize>, probs: Vec<f64> },
    SmoothL1 { pred: usize, target: Vec<f64> },
    BceLogit { logit: usize, label: f64 },
    Dropout { a: usize, mask: Vec<f64> },
    RelBias { vecs: usize, table: usize, span: usize, side: RelSide, heads: usize, seq: usize, dim: usize },
}

/// Geometry of a 2-D convolution over a single `[C, H, W]` sample.
#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Append-only computation record plus a matmul/conv flop counter.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    flops: u64,
    grads: Option<Vec<Option<Vec<f64>>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            flops: 0,
            grads: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-add flops recorded by matmul, convolution and relative-bias ops.
    pub fn flops(&self) -> u64 {
        self.flops
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::Backward(format!(
                "variable {} does not belong to this tape",
                v.idx
            )));
        }
        Ok(v.idx)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        debug_assert!(inputs.iter().all(|&i| i < self.nodes.len()));
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    /// Record a leaf. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let idx = self.check(v).expect("foreign variable");
        &self.nodes[idx].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[self.check(v).expect("foreign variable")].requires_grad
    }

    // ----- elementwise ------------------------------------------------------

    /// `b` must have the same shape as `a` or a trailing suffix of it.
    fn broadcast_check(&self, op: &'static str, a: usize, b: usize) -> Result<()> {
        let sa = self.nodes[a].value.shape();
        let sb = self.nodes[b].value.shape();
        if sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == *sb {
            Ok(())
        } else {
            Err(Error::shape(op, sa, sb))
        }
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: fn(f64, f64) -> f64) -> Result<(Tensor, usize, usize)> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        self.broadcast_check(op, ia, ib)?;
        let va = &self.nodes[ia].value;
        let vb = self.nodes[ib].value.data();
        let nb = vb.len();
        let data = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, vb[i % nb]))
            .collect();
        Ok((Tensor::from_parts(va.shape().to_vec(), data), ia, ib))
    }

    /// Elementwise sum; `b` broadcasts over leading axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, ia, ib) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add { a: ia, b: ib }, &[ia, ib]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, ia, ib) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub { a: ia, b: ib }, &[ia, ib]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, ia, ib) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul { a: ia, b: ib }, &[ia, ib]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let ia = self.check(a)?;
        let v = &self.nodes[ia].value;
        let t = Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|x| x * c).collect());
        Ok(self.push(t, Op::Scale { a: ia, c }, &[ia]))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Result<(Tensor, usize)> {
        let ia = self.check(a)?;
        let v = &self.nodes[ia].value;
        Ok((
            Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|&x| f(x)).collect()),
            ia,
        ))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let (t, ia) = self.unary(a, |x| x.max(0.0))?;
        Ok(self.push(t, Op::Relu { a: ia }, &[ia]))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let (t, ia) = self.unary(a, gelu)?;
        Ok(self.push(t, Op::Gelu { a: ia }, &[ia]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let (t, ia) = self.unary(a, sigmoid)?;
        Ok(self.push(t, Op::Sigmoid { a: ia }, &[ia]))
    }

    /// Inverted dropout. Identity when `rate == 0`.
    pub fn dropout(&mut self, a: Var, rate: f64, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0,1)")));
        }
        let ia = self.check(a)?;
        if rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - rate;
        let n = self.nodes[ia].value.numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.bernoulli(keep) { 1.0 / keep } else { 0.0 })
            .collect();
        let v = &self.nodes[ia].value;
        let data = v.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::from_parts(v.shape().to_vec(), data);
        Ok(self.push(t, Op::Dropout { a: ia, mask }, &[ia]))
    }

    // ----- shape ------------------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.check(a)?;
        let t = self.nodes[ia].value.clone().reshaped(shape)?;
        Ok(self.push(t, Op::Reshape { a: ia }, &[ia]))
    }

    /// Swap two axes.
    pub fn transpose(&mut self, a: Var, d0: usize, d1: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let v = &self.nodes[ia].value;
        let rank = v.rank();
        if d0 >= rank || d1 >= rank {
            return Err(Error::InvalidArgument(format!(
                "transpose axes ({d0},{d1}) out of range for rank {rank}"
            )));
        }
        let in_shape = v.shape().to_vec();
        let mut out_shape = in_shape.clone();
        out_shape.swap(d0, d1);
        let in_strides = strides(&in_shape);
        let mut perm_strides = in_strides.clone();
        perm_strides.swap(d0, d1);
        let numel = v.numel();
        let mut src_of = Vec::with_capacity(numel);
        let mut idx = vec![0usize; rank];
        for _ in 0..numel {
            src_of.push(idx.iter().zip(&perm_strides).map(|(i, s)| i * s).sum());
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                if idx[ax] < out_shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        let src = v.data();
        let data = src_of.iter().map(|&s| src[s]).collect();
        let t = Tensor::from_parts(out_shape, data);
        Ok(self.push(t, Op::Permute { a: ia, src_of }, &[ia]))
    }

    /// Last-two-axes transpose.
    pub fn t(&mut self, a: Var) -> Result<Var> {
        let rank = self.shape(a).len();
        if rank < 2 {
            return Err(Error::InvalidArgument("t() needs rank >= 2".into()));
        }
        self.transpose(a, rank - 2, rank - 1)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let idxs = parts.iter().map(|&p| self.check(p)).collect::<Result<Vec<_>>>()?;
        let first = self.nodes[idxs[0]].value.shape().to_vec();
        if axis >= first.len() {
            return Err(Error::InvalidArgument(format!("concat axis {axis} out of range")));
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut widths = Vec::with_capacity(idxs.len());
        for &i in &idxs {
            let s = self.nodes[i].value.shape();
            if s.len() != first.len()
                || s[..axis] != first[..axis]
                || s[axis + 1..] != first[axis + 1..]
            {
                return Err(Error::shape("concat", &first, s));
            }
            widths.push(s[axis] * inner);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (&i, &w) in idxs.iter().zip(&widths) {
                data.extend_from_slice(&self.nodes[i].value.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first;
        shape[axis] = total / inner;
        let t = Tensor::from_parts(shape, data);
        Ok(self.push(t, Op::Concat { parts: idxs.clone(), outer, widths }, &idxs))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let v = &self.nodes[ia].value;
        let shape = v.shape().to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::InvalidArgument(format!(
                "slice [{start}, {}) of axis {axis} out of range for {shape:?}",
                start + len
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let axis_len = shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * axis_len + start) * inner;
            data.extend_from_slice(&v.data()[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let t = Tensor::from_parts(out_shape, data);
        Ok(self.push(t, Op::Slice { a: ia, outer, inner, axis_len, start, len }, &[ia]))
    }

    /// Gather rows of `table` (`[V, ...]`) by index; backward scatter-adds.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let it = self.check(table)?;
        let v = &self.nodes[it].value;
        let rows = v.shape()[0];
        if ids.is_empty() {
            return Err(Error::InvalidArgument("embedding lookup with no ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= rows) {
            return Err(Error::InvalidArgument(format!(
                "id {bad} out of range for table with {rows} rows"
            )));
        }
        let width: usize = v.shape()[1..].iter().product();
        let mut data = Vec::with_capacity(ids.len() * width);
        for &id in ids {
            data.extend_from_slice(&v.data()[id * width..(id + 1) * width]);
        }
        let mut shape = v.shape().to_vec();
        shape[0] = ids.len();
        let t = Tensor::from_parts(shape, data);
        Ok(self.push(t, Op::Gather { table: it, ids: ids.to_vec() }, &[it]))
    }

    // ----- linear algebra ---------------------------------------------------

    /// Batched matrix product `[.., m, k] x [.., k, n]` with broadcast batch axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let sa = self.nodes[ia].value.shape().to_vec();
        let sb = self.nodes[ib].value.shape().to_vec();
        if sa.len() < 2 || sb.len() < 2 || sa[sa.len() - 1] != sb[sb.len() - 2] {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let n = sb[sb.len() - 1];
        let ba = &sa[..sa.len() - 2];
        let bb = &sb[..sb.len() - 2];
        let batch = broadcast_shape(ba, bb).ok_or_else(|| Error::shape("matmul", &sa, &sb))?;
        let pairs = batch_pairs(&batch, ba, bb);
        let va = self.nodes[ia].value.data();
        let vb = self.nodes[ib].value.data();
        let mut out = vec![0.0; pairs.len() * m * n];
        for (bi, &(pa, pb)) in pairs.iter().enumerate() {
            matmul_acc(
                &va[pa * m * k..(pa + 1) * m * k],
                &vb[pb * k * n..(pb + 1) * k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        self.flops += 2 * (m * k * n * pairs.len()) as u64;
        let mut shape = batch;
        shape.extend([m, n]);
        let t = Tensor::from_parts(shape, out);
        Ok(self.push(t, Op::MatMul { a: ia, b: ib, m, k, n, pairs }, &[ia, ib]))
    }

    /// `x W + b` for `x: [.., in]`, `W: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    /// Layer normalization over the last axis with learnable gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (ix, ig, ib) = (self.check(x)?, self.check(gain)?, self.check(bias)?);
        let v = &self.nodes[ix].value;
        let d = *v.shape().last().expect("rank >= 1");
        let g = self.nodes[ig].value.data();
        let bb = self.nodes[ib].value.data();
        if g.len() != d || bb.len() != d {
            return Err(Error::shape("layer_norm", v.shape(), self.nodes[ig].value.shape()));
        }
        let rows = v.numel() / d;
        let mut xhat = vec![0.0; v.numel()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; v.numel()];
        for r in 0..rows {
            let row = &v.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..d {
                let xh = (row[c] - mean) * rs;
                xhat[r * d + c] = xh;
                out[r * d + c] = xh * g[c] + bb[c];
            }
        }
        let t = Tensor::from_parts(v.shape().to_vec(), out);
        Ok(self.push(t, Op::LayerNorm { x: ix, gain: ig, bias: ib, xhat, rstd }, &[ix, ig, ib]))
    }

    fn conv_geom(
        &self,
        op: &'static str,
        x: usize,
        w: usize,
        b: usize,
        stride: usize,
        pad: usize,
        transposed: bool,
    ) -> Result<ConvGeom> {
        let sx = self.nodes[x].value.shape();
        let sw = self.nodes[w].value.shape();
        let sb = self.nodes[b].value.shape();
        if sx.len() != 3 || sw.len() != 4 || sw[2] != sw[3] || stride == 0 {
            return Err(Error::shape(op, sx, sw));
        }
        let (cin, h, wd) = (sx[0], sx[1], sx[2]);
        let (wcin, cout) = if transposed { (sw[0], sw[1]) } else { (sw[1], sw[0]) };
        let kernel = sw[2];
        if wcin != cin || sb != [cout] {
            return Err(Error::shape(op, sx, sw));
        }
        let (ho, wo) = if transposed {
            let ho = ((h - 1) * stride + kernel).checked_sub(2 * pad);
            let wo = ((wd - 1) * stride + kernel).checked_sub(2 * pad);
            match (ho, wo) {
                (Some(ho), Some(wo)) if ho > 0 && wo > 0 => (ho, wo),
                _ => return Err(Error::shape(op, sx, sw)),
            }
        } else {
            if h + 2 * pad < kernel || wd + 2 * pad < kernel {
                return Err(Error::shape(op, sx, sw));
            }
            ((h + 2 * pad - kernel) / stride + 1, (wd + 2 * pad - kernel) / stride + 1)
        };
        Ok(ConvGeom { cin, cout, h, w: wd, kernel, stride, pad, ho, wo })
    }

    /// Cross-correlation of `x: [Cin, H, W]` with `w: [Cout, Cin, K, K]` plus bias `[Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (ix, iw, ib) = (self.check(x)?, self.check(w)?, self.check(b)?);
        let g = self.conv_geom("conv2d", ix, iw, ib, stride, pad, false)?;
        let xv = self.nodes[ix].value.data();
        let wv = self.nodes[iw].value.data();
        let bv = self.nodes[ib].value.data();
        let mut out = vec![0.0; g.cout * g.ho * g.wo];
        for co in 0..g.cout {
            let plane = &mut out[co * g.ho * g.wo..(co + 1) * g.ho * g.wo];
            plane.iter_mut().for_each(|o| *o = bv[co]);
            for ci in 0..g.cin {
                for kh in 0..g.kernel {
                    for kw in 0..g.kernel {
                        let wt = wv[((co * g.cin + ci) * g.kernel + kh) * g.kernel + kw];
                        for oh in 0..g.ho {
                            let Some(ih) = (oh * g.stride + kh).checked_sub(g.pad).filter(|&v| v < g.h) else {
                                continue;
                            };
                            let xrow = &xv[(ci * g.h + ih) * g.w..(ci * g.h + ih + 1) * g.w];
                            let orow = &mut plane[oh * g.wo..(oh + 1) * g.wo];
                            for (ow, o) in orow.iter_mut().enumerate() {
                                if let Some(iw) = (ow * g.stride + kw).checked_sub(g.pad).filter(|&v| v < g.w) {
                                    *o += wt * xrow[iw];
                                }
                            }
                        }
                    }
                }
            }
        }
        self.flops += 2 * (g.cout * g.ho * g.wo * g.cin * g.kernel * g.kernel) as u64;
        let t = Tensor::from_parts(vec![g.cout, g.ho, g.wo], out);
        Ok(self.push(t, Op::Conv2d { x: ix, w: iw, b: ib, geom: g }, &[ix, iw, ib]))
    }

    /// Transposed convolution of `x: [Cin, H, W]` with `w: [Cin, Cout, K, K]`;
    /// output extent `(H-1)*stride - 2*pad + K`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (ix, iw, ib) = (self.check(x)?, self.check(w)?, self.check(b)?);
        let g = self.conv_geom("conv_transpose2d", ix, iw, ib, stride, pad, true)?;
        let xv = self.nodes[ix].value.data();
        let wv = self.nodes[iw].value.data();
        let bv = self.nodes[ib].value.data();
        let mut out = vec![0.0; g.cout * g.ho * g.wo];
        for co in 0..g.cout {
            out[co * g.ho * g.wo..(co + 1) * g.ho * g.wo]
                .iter_mut()
                .for_each(|o| *o = bv[co]);
        }
        for ci in 0..g.cin {
            for co in 0..g.cout {
                for kh in 0..g.kernel {
                    for kw in 0..g.kernel {
                        let wt = wv[((ci * g.cout + co) * g.kernel + kh) * g.kernel + kw];
                        for ih in 0..g.h {
                            let Some(oh) = (ih * g.stride + kh).checked_sub(g.pad).filter(|&v| v < g.ho) else {
                                continue;
                            };
                            for iwx in 0..g.w {
                                if let Some(ow) = (iwx * g.stride + kw).checked_sub(g.pad).filter(|&v| v < g.wo) {
                                    out[(co * g.ho + oh) * g.wo + ow] += wt * xv[(ci * g.h + ih) * g.w + iwx];
                                }
                            }
                        }
                    }
                }
            }
        }
        self.flops += 2 * (g.cin * g.h * g.w * g.cout * g.kernel * g.kernel) as u64;
        let t = Tensor::from_parts(vec![g.cout, g.ho, g.wo], out);
        Ok(self.push(t, Op::ConvTranspose2d { x: ix, w: iw, b: ib, geom: g }, &[ix, iw, ib]))
    }

    /// Relative-position bias over clamped offsets.
    ///
    /// `vecs: [H, N, D]`, `table: [2*span+1, D]`; the result `[H, N, N]` holds
    /// `vecs[h, i or j] . table[clamp(j - i, -span, span) + span]`.
    pub fn relative_bias(&mut self, vecs: Var, table: Var, span: usize, side: RelSide) -> Result<Var> {
        let (iv, it) = (self.check(vecs)?, self.check(table)?);
        let sv = self.nodes[iv].value.shape().to_vec();
        let st = self.nodes[it].value.shape().to_vec();
        if sv.len() != 3 || st.len() != 2 || st[0] != 2 * span + 1 || st[1] != sv[2] {
            return Err(Error::shape("relative_bias", &sv, &st));
        }
        let (heads, seq, dim) = (sv[0], sv[1], sv[2]);
        let v = self.nodes[iv].value.data();
        let tb = self.nodes[it].value.data();
        let mut out = vec![0.0; heads * seq * seq];
        for h in 0..heads {
            for i in 0..seq {
                for j in 0..seq {
                    let row = rel_offset(i, j, span);
                    let src = match side {
                        RelSide::Query => i,
                        RelSide::Key => j,
                    };
                    let vec = &v[(h * seq + src) * dim..(h * seq + src + 1) * dim];
                    out[(h * seq + i) * seq + j] = dot(vec, &tb[row * dim..(row + 1) * dim]);
                }
            }
        }
        self.flops += 2 * (heads * seq * seq * dim) as u64;
        let t = Tensor::from_parts(vec![heads, seq, seq], out);
        Ok(self.push(
            t,
            Op::RelBias { vecs: iv, table: it, span, side, heads, seq, dim },
            &[iv, it],
        ))
    }

    // ----- reductions and losses -------------------------------------------

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let s = self.nodes[ia].value.data().iter().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum { a: ia }, &[ia]))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let v = self.nodes[ia].value.data();
        let s = v.iter().sum::<f64>() / v.len() as f64;
        Ok(self.push(Tensor::scalar(s), Op::Mean { a: ia }, &[ia]))
    }

    /// Max-stabilized softmax over the last axis.
    ///
    /// `mask` (true = keep) has either one entry per column, shared by every
    /// row, or one entry per element. Masked entries come out exactly zero.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let ix = self.check(x)?;
        let v = &self.nodes[ix].value;
        let n = *v.shape().last().expect("rank >= 1");
        if let Some(m) = mask {
            if m.len() != n && m.len() != v.numel() {
                return Err(Error::shape("softmax_rows", v.shape(), &[m.len()]));
            }
        }
        let keep = |r: usize, c: usize| match mask {
            None => true,
            Some(m) if m.len() == n => m[c],
            Some(m) => m[r * n + c],
        };
        let rows = v.numel() / n;
        let mut out = vec![0.0; v.numel()];
        for r in 0..rows {
            let row = &v.data()[r * n..(r + 1) * n];
            let max = (0..n)
                .filter(|&c| keep(r, c))
                .map(|c| row[c])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::FullyMasked { row: r });
            }
            let mut total = 0.0;
            for c in 0..n {
                if keep(r, c) {
                    let e = (row[c] - max).exp();
                    out[r * n + c] = e;
                    total += e;
                }
            }
            out[r * n..(r + 1) * n].iter_mut().for_each(|e| *e /= total);
        }
        let t = Tensor::from_parts(v.shape().to_vec(), out);
        Ok(self.push(t, Op::Softmax { a: ix }, &[ix]))
    }

    /// Mean cross-entropy of `logits: [M, C]` against class `targets` (length M).
    pub fn cross_entropy_from_logits(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let il = self.check(logits)?;
        let v = &self.nodes[il].value;
        if v.rank() != 2 || v.shape()[0] != targets.len() {
            return Err(Error::shape("cross_entropy", v.shape(), &[targets.len()]));
        }
        let c = v.shape()[1];
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::InvalidArgument(format!("target {bad} out of range for {c} classes")));
        }
        let mut probs = vec![0.0; v.numel()];
        let mut loss = 0.0;
        for (r, &tgt) in targets.iter().enumerate() {
            let row = &v.data()[r * c..(r + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let lse = max + total.ln();
            loss += lse - row[tgt];
            for k in 0..c {
                probs[r * c + k] = (row[k] - lse).exp();
            }
        }
        let m = targets.len() as f64;
        Ok(self.push(
            Tensor::scalar(loss / m),
            Op::CrossEntropy { logits: il, targets: targets.to_vec(), probs },
            &[il],
        ))
    }

    /// Mean smooth-L1 (transition at 1): `0.5 x^2` if `|x| < 1`, else `|x| - 0.5`.
    pub fn smooth_l1(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let ip = self.check(pred)?;
        let v = &self.nodes[ip].value;
        if v.shape() != target.shape() {
            return Err(Error::shape("smooth_l1", v.shape(), target.shape()));
        }
        let total: f64 = v
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| smooth_l1(p - t))
            .sum();
        let loss = total / v.numel() as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SmoothL1 { pred: ip, target: target.data().to_vec() },
            &[ip],
        ))
    }

    /// Binary cross-entropy of a single logit against `label` in {0, 1}.
    pub fn binary_cross_entropy_from_logit(&mut self, logit: Var, label: f64) -> Result<Var> {
        let il = self.check(logit)?;
        let v = &self.nodes[il].value;
        if v.numel() != 1 {
            return Err(Error::shape("binary_cross_entropy", v.shape(), &[1]));
        }
        let z = v.item();
        let loss = z.max(0.0) - z * label + (-z.abs()).exp().ln_1p();
        Ok(self.push(Tensor::scalar(loss), Op::BceLogit { logit: il, label }, &[il]))
    }

    // ----- backward ---------------------------------------------------------

    /// Populate gradients of `loss` with respect to every node.
    ///
    /// Callable once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let il = self.check(loss)?;
        if self.grads.is_some() {
            return Err(Error::Backward("backward already ran on this tape".into()));
        }
        if self.nodes[il].value.numel() != 1 {
            return Err(Error::Backward(format!(
                "loss must be scalar, got shape {:?}",
                self.nodes[il].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[il] = Some(vec![1.0]);
        for idx in (0..=il).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = Some(grads);
        Ok(())
    }

    /// Gradient accumulated into `v`; zeros when no path reached it.
    pub fn grad(&self, v: Var) -> Result<Tensor> {
        let idx = self.check(v)?;
        let grads = self
            .grads
            .as_ref()
            .ok_or_else(|| Error::Backward("backward has not run".into()))?;
        let shape = self.nodes[idx].value.shape().to_vec();
        Ok(match &grads[idx] {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(&shape),
        })
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |target: usize, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[target].requires_grad {
                return;
            }
            let slot = grads[target].get_or_insert_with(|| vec![0.0; nodes[target].value.numel()]);
            f(slot);
        };
        let val = |i: usize| nodes[i].value.data();
        let out = val(idx);
        match &nodes[idx].op {
            Op::Leaf => {}
            Op::Add { a, b } | Op::Sub { a, b } => {
                let sign = if matches!(nodes[idx].op, Op::Sub { .. }) { -1.0 } else { 1.0 };
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |gb| {
                    let nb = gb.len();
                    for (i, y) in g.iter().enumerate() {
                        gb[i % nb] += sign * y;
                    }
                });
            }
            Op::Mul { a, b } => {
                let (va, vb) = (val(*a), val(*b));
                let nb = vb.len();
                acc(*a, &mut |ga| {
                    for (i, y) in g.iter().enumerate() {
                        ga[i] += y * vb[i % nb];
                    }
                });
                acc(*b, &mut |gb| {
                    for (i, y) in g.iter().enumerate() {
                        gb[i % nb] += y * va[i];
                    }
                });
            }
            Op::Scale { a, c } => acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += c * y)),
            Op::MatMul { a, b, m, k, n, pairs } => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k, n) = (*m, *k, *n);
                acc(*a, &mut |ga| {
                    for (bi, &(pa, pb)) in pairs.iter().enumerate() {
                        let gc = &g[bi * m * n..(bi + 1) * m * n];
                        let bm = &vb[pb * k * n..(pb + 1) * k * n];
                        let da = &mut ga[pa * m * k..(pa + 1) * m * k];
                        for i in 0..m {
                            let grow = &gc[i * n..(i + 1) * n];
                            for p in 0..k {
                                da[i * k + p] += dot(grow, &bm[p * n..(p + 1) * n]);
                            }
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for (bi, &(pa, pb)) in pairs.iter().enumerate() {
                        let gc = &g[bi * m * n..(bi + 1) * m * n];
                        let am = &va[pa * m * k..(pa + 1) * m * k];
                        let db = &mut gb[pb * k * n..(pb + 1) * k * n];
                        for i in 0..m {
                            let grow = &gc[i * n..(i + 1) * n];
                            for p in 0..k {
                                let coef = am[i * k + p];
                                if coef != 0.0 {
                                    axpy(coef, grow, &mut db[p * n..(p + 1) * n]);
                                }
                            }
                        }
                    }
                });
            }
            Op::Permute { a, src_of } => acc(*a, &mut |ga| {
                for (o, &s) in src_of.iter().enumerate() {
                    ga[s] += g[o];
                }
            }),
            Op::Reshape { a } => acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y)),
            Op::Concat { parts, outer, widths, .. } => {
                let total: usize = widths.iter().sum();
                let mut offset = 0;
                for (&p, &w) in parts.iter().zip(widths) {
                    acc(p, &mut |gp| {
                        for o in 0..*outer {
                            let src = &g[o * total + offset..o * total + offset + w];
                            gp[o * w..(o + 1) * w].iter_mut().zip(src).for_each(|(x, y)| *x += y);
                        }
                    });
                    offset += w;
                }
            }
            Op::Slice { a, outer, inner, axis_len, start, len } => acc(*a, &mut |ga| {
                for o in 0..*outer {
                    let dst = (o * axis_len + start) * inner;
                    let src = o * len * inner;
                    ga[dst..dst + len * inner]
                        .iter_mut()
                        .zip(&g[src..src + len * inner])
                        .for_each(|(x, y)| *x += y);
                }
            }),
            Op::Gather { table, ids } => acc(*table, &mut |gt| {
                let w = g.len() / ids.len();
                for (r, &id) in ids.iter().enumerate() {
                    axpy(1.0, &g[r * w..(r + 1) * w], &mut gt[id * w..(id + 1) * w]);
                }
            }),
            Op::Relu { a } => {
                let va = val(*a);
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        if va[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                });
            }
            Op::Gelu { a } => {
                let va = val(*a);
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * gelu_grad(va[i]);
                    }
                });
            }
            Op::Sigmoid { a } => acc(*a, &mut |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * out[i] * (1.0 - out[i]);
                }
            }),
            Op::Dropout { a, mask } => acc(*a, &mut |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * mask[i];
                }
            }),
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let gv = val(*gain);
                let d = gv.len();
                let rows = rstd.len();
                acc(*gain, &mut |gg| {
                    for r in 0..rows {
                        for c in 0..d {
                            gg[c] += g[r * d + c] * xhat[r * d + c];
                        }
                    }
                });
                acc(*bias, &mut |gb| {
                    for r in 0..rows {
                        axpy(1.0, &g[r * d..(r + 1) * d], gb);
                    }
                });
                acc(*x, &mut |gx| {
                    for r in 0..rows {
                        let dxhat: Vec<f64> = (0..d).map(|c| g[r * d + c] * gv[c]).collect();
                        let xh = &xhat[r * d..(r + 1) * d];
                        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dx = dot(&dxhat, xh) / d as f64;
                        for c in 0..d {
                            gx[r * d + c] += rstd[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
                        }
                    }
                });
            }
            Op::Conv2d { x, w, b, geom } => conv2d_backward(*geom, val(*x), val(*w), g, *x, *w, *b, &mut acc),
            Op::ConvTranspose2d { x, w, b, geom } => {
                conv_transpose2d_backward(*geom, val(*x), val(*w), g, *x, *w, *b, &mut acc)
            }
            Op::RelBias { vecs, table, span, side, heads, seq, dim } => {
                let (vv, tv) = (val(*vecs), val(*table));
                let (heads, seq, dim, span) = (*heads, *seq, *dim, *span);
                let src_of = |i: usize, j: usize| match side {
                    RelSide::Query => i,
                    RelSide::Key => j,
                };
                acc(*vecs, &mut |gv| {
                    for h in 0..heads {
                        for i in 0..seq {
                            for j in 0..seq {
                                let gij = g[(h * seq + i) * seq + j];
                                let row = rel_offset(i, j, span);
                                let s = src_of(i, j);
                                axpy(gij, &tv[row * dim..(row + 1) * dim], &mut gv[(h * seq + s) * dim..(h * seq + s + 1) * dim]);
                            }
                        }
                    }
                });
                acc(*table, &mut |gt| {
                    for h in 0..heads {
                        for i in 0..seq {
                            for j in 0..seq {
                                let gij = g[(h * seq + i) * seq + j];
                                let row = rel_offset(i, j, span);
                                let s = src_of(i, j);
                                axpy(gij, &vv[(h * seq + s) * dim..(h * seq + s + 1) * dim], &mut gt[row * dim..(row + 1) * dim]);
                            }
                        }
                    }
                });
            }
            Op::Sum { a } => acc(*a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean { a } => acc(*a, &mut |ga| {
                let s = g[0] / ga.len() as f64;
                ga.iter_mut().for_each(|x| *x += s);
            }),
            Op::Softmax { a } => {
                let n = *nodes[idx].value.shape().last().unwrap();
                acc(*a, &mut |ga| {
                    for r in 0..g.len() / n {
                        let y = &out[r * n..(r + 1) * n];
                        let gy = &g[r * n..(r + 1) * n];
                        let s = dot(y, gy);
                        for c in 0..n {
                            ga[r * n + c] += y[c] * (gy[c] - s);
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, targets, probs } => acc(*logits, &mut |gl| {
                let c = probs.len() / targets.len();
                let scale = g[0] / targets.len() as f64;
                for (r, &t) in targets.iter().enumerate() {
                    for k in 0..c {
                        let onehot = if k == t { 1.0 } else { 0.0 };
                        gl[r * c + k] += scale * (probs[r * c + k] - onehot);
                    }
                }
            }),
            Op::SmoothL1 { pred, target } => {
                let vp = val(*pred);
                acc(*pred, &mut |gp| {
                    let scale = g[0] / vp.len() as f64;
                    for i in 0..vp.len() {
                        let d = vp[i] - target[i];
                        gp[i] += scale * if d.abs() < 1.0 { d } else { d.signum() };
                    }
                });
            }
            Op::BceLogit { logit, label } => {
                let z = val(*logit)[0];
                acc(*logit, &mut |gz| gz[0] += g[0] * (sigmoid(z) - label));
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward(
    g_: ConvGeom,
    xv: &[f64],
    wv: &[f64],
    gout: &[f64],
    x: usize,
    w: usize,
    b: usize,
    acc: &mut dyn FnMut(usize, &mut dyn FnMut(&mut [f64])),
) {
    let g = g_;
    let in_of = |o: usize, k: usize, lim: usize| (o * g.stride + k).checked_sub(g.pad).filter(|&v| v < lim);
    acc(b, &mut |gb| {
        for co in 0..g.cout {
            gb[co] += gout[co * g.ho * g.wo..(co + 1) * g.ho * g.wo].iter().sum::<f64>();
        }
    });
    acc(w, &mut |gw| {
        for co in 0..g.cout {
            for ci in 0..g.cin {
                for kh in 0..g.kernel {
                    for kw in 0..g.kernel {
                        let mut s = 0.0;
                        for oh in 0..g.ho {
                            let Some(ih) = in_of(oh, kh, g.h) else { continue };
                            for ow in 0..g.wo {
                                if let Some(iw) = in_of(ow, kw, g.w) {
                                    s += gout[(co * g.ho + oh) * g.wo + ow] * xv[(ci * g.h + ih) * g.w + iw];
                                }
                            }
                        }
                        gw[((co * g.cin + ci) * g.kernel + kh) * g.kernel + kw] += s;
                    }
                }
            }
        }
    });
    acc(x, &mut |gx| {
        for co in 0..g.cout {
            for ci in 0..g.cin {
                for kh in 0..g.kernel {
                    for kw in 0..g.kernel {
                        let wt = wv[((co * g.cin + ci) * g.kernel + kh) * g.kernel + kw];
                        for oh in 0..g.ho {
                            let Some(ih) = in_of(oh, kh, g.h) else { continue };
                            for ow in 0..g.wo {
                                if let Some(iw) = in_of(ow, kw, g.w) {
                                    gx[(ci * g.h + ih) * g.w + iw] += wt * gout[(co * g.ho + oh) * g.wo + ow];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
}

#[allow(clippy::too_many_arguments)]
fn conv_transpose2d_backward(
    g: ConvGeom,
    xv: &[f64],
    wv: &[f64],
    gout: &[f64],
    x: usize,
    w: usize,
    b: usize,
    acc: &mut dyn FnMut(usize, &mut dyn FnMut(&mut [f64])),
) {
    let out_of = |i: usize, k: usize, lim: usize| (i * g.stride + k).checked_sub(g.pad).filter(|&v| v < lim);
    acc(b, &mut |gb| {
        for co in 0..g.cout {
            gb[co] += gout[co * g.ho * g.wo..(co + 1) * g.ho * g.wo].iter().sum::<f64>();
        }
    });
    acc(w, &mut |gw| {
        for ci in 0..g.cin {
            for co in 0..g.cout {
                for kh in 0..g.kernel {
                    for kw in 0..g.kernel {
                        let mut s = 0.0;
                        for ih in 0..g.h {
                            let Some(oh) = out_of(ih, kh, g.ho) else { continue };
                            for iw in 0..g.w {
                                if let Some(ow) = out_of(iw, kw, g.wo) {
                                    s += gout[(co * g.ho + oh) * g.wo + ow] * xv[(ci * g.h + ih) * g.w + iw];
                                }
                            }
                        }
                        gw[((ci * g.cout + co) * g.kernel + kh) * g.kernel + kw] += s;
                    }
                }
            }
        }
    });
    acc(x, &mut |gx| {
        for ci in 0..g.cin {
            for co in 0..g.cout {
                for kh in 0..g.kernel {
                    for kw in 0..g.kernel {
                        let wt = wv[((ci * g.cout + co) * g.kernel + kh) * g.kernel + kw];
                        for ih in 0..g.h {
                            let Some(oh) = out_of(ih, kh, g.ho) else { continue };
                            for iw in 0..g.w {
                                if let Some(ow) = out_of(iw, kw, g.wo) {
                                    gx[(ci * g.h + ih) * g.w + iw] += wt * gout[(co * g.ho + oh) * g.wo + ow];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
}

/// Table row for offset `j - i` clamped to `[-span, span]`.
pub fn rel_offset(i: usize, j: usize, span: usize) -> usize {
    let off = (j as i64 - i as i64).clamp(-(span as i64), span as i64);
    (off + span as i64) as usize
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let get = |s: &[usize], i: usize| {
        let pad = rank - s.len();
        if i < pad { 1 } else { s[i - pad] }
    };
    (0..rank)
        .map(|i| match (get(a, i), get(b, i)) {
            (x, y) if x == y => Some(x),
            (1, y) => Some(y),
            (x, 1) => Some(x),
            _ => None,
        })
        .collect()
}

/// For every batch index of the broadcast shape, the flat batch offsets into `a` and `b`.
fn batch_pairs(batch: &[usize], a: &[usize], b: &[usize]) -> Vec<(usize, usize)> {
    let total: usize = batch.iter().product();
    let rank = batch.len();
    let offset = |s: &[usize], idx: &[usize]| {
        let pad = rank - s.len();
        let st = strides(s);
        s.iter()
            .enumerate()
            .map(|(d, &e)| if e == 1 { 0 } else { idx[d + pad] * st[d] })
            .sum::<usize>()
    };
    let mut idx = vec![0usize; rank];
    let mut out = Vec::with_capacity(total);
    for _ in 0..total {
        out.push((offset(a, &idx), offset(b, &idx)));
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < batch[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let coef = a[i * k + p];
            if coef != 0.0 {
                axpy(coef, &b[p * n..(p + 1) * n], crow);
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn smooth_l1(d: f64) -> f64 {
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}
