use crate::error::{Error, Result};
use crate::tensor::kernels::{col2im_acc, im2col, mm_abt_acc, mm_acc, mm_atb_acc, ConvGeom};
use crate::tensor::Tensor;

/// Floor applied to `log` arguments so one-hot-like distributions stay finite.
pub const LOG_FLOOR: f64 = 1e-12;

/// Handle to a node in a [`Graph`]. Only valid for the graph that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    ScalarMul(NodeId, f64),
    Relu(NodeId),
    Exp(NodeId),
    Log(NodeId),
    ClampMin(NodeId, f64),
    MatMul(NodeId, NodeId),
    SumAll(NodeId),
    MeanAxis(NodeId, usize),
    MaxAxis {
        x: NodeId,
        argmax: Vec<usize>,
    },
    L2NormAxis(NodeId, usize),
    SoftmaxLast(NodeId),
    Reshape(NodeId),
    SliceCols {
        x: NodeId,
        start: usize,
        end: usize,
    },
    PickPerRow {
        x: NodeId,
        indices: Vec<usize>,
    },
    AddRowBroadcast(NodeId, NodeId),
    DivLastAxis(NodeId, NodeId),
    GramLast(NodeId),
    BlockMean {
        x: NodeId,
        bounds: Vec<usize>,
    },
    DiagPart(NodeId),
    Conv2d {
        x: NodeId,
        weight: NodeId,
        bias: NodeId,
        geom: ConvGeom,
    },
    MaxPool2d {
        x: NodeId,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(NodeId),
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
    trainable: bool,
}

/// Append-only computation graph. Parents always precede children, so a
/// single reverse sweep visits nodes in reverse topological order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn outer_axis_inner(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(shape: &[usize], axis: usize, context: &'static str) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::InvalidOperand(format!(
            "{context}: axis {axis} out of range for shape {shape:?}"
        )));
    }
    Ok(())
}

fn removed_axis_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut out: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != axis)
        .map(|(_, &d)| d)
        .collect();
    if out.is_empty() {
        out.push(1);
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, trainable: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            trainable,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Inserts a constant input.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Inserts a trainable input; backward will populate its gradient.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Copies a node's value into a fresh constant leaf, cutting the
    /// gradient path through it.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x.0].value.clone();
        self.leaf(value)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient, present after a backward pass reached this node.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn data(&self, id: NodeId) -> &[f64] {
        self.nodes[id.0].value.data()
    }

    fn same_shape(&self, a: NodeId, b: NodeId, context: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                context,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    // ── elementwise ─────────────────────────────────────────────────────

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b), false))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "sub")?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x - y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Sub(a, b), false))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a, b), false))
    }

    pub fn scalar_mul(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        let data = self.data(a).iter().map(|&x| x * factor).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::ScalarMul(a, factor), false))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self.data(a).iter().map(|&x| x.max(0.0)).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Relu(a), false))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self.data(a).iter().map(|&x| x.exp()).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Exp(a), false))
    }

    /// Natural log with the argument floored at [`LOG_FLOOR`].
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self.data(a).iter().map(|&x| x.max(LOG_FLOOR).ln()).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Log(a), false))
    }

    pub fn clamp_min(&mut self, a: NodeId, floor: f64) -> Result<NodeId> {
        let data = self.data(a).iter().map(|&x| x.max(floor)).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::ClampMin(a, floor), false))
    }

    // ── linear algebra ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                context: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        mm_acc(self.data(a), self.data(b), m, k, n, &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b), false))
    }

    /// Per-sample Gram matrix over the last axis: `[N,C,L] -> [N,C,C]` with
    /// `out[n,i,j] = Σ_l x[n,i,l]·x[n,j,l]`.
    pub fn gram_last(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x);
        if s.len() != 3 {
            return Err(Error::InvalidOperand(format!(
                "gram_last expects rank 3, got {s:?}"
            )));
        }
        let (n, c, l) = (s[0], s[1], s[2]);
        let xd = self.data(x);
        let mut out = vec![0.0; n * c * c];
        for i in 0..n {
            mm_abt_acc(
                &xd[i * c * l..(i + 1) * c * l],
                &xd[i * c * l..(i + 1) * c * l],
                c,
                l,
                c,
                &mut out[i * c * c..(i + 1) * c * c],
            );
        }
        let value = Tensor::new(vec![n, c, c], out)?;
        Ok(self.push(value, Op::GramLast(x), false))
    }

    // ── reductions ──────────────────────────────────────────────────────

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        let total: f64 = self.data(a).iter().sum();
        Ok(self.push(Tensor::scalar(total), Op::SumAll(a), false))
    }

    pub fn mean_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        check_axis(self.shape(a), axis, "mean_axis")?;
        let (outer, len, inner) = outer_axis_inner(self.shape(a), axis);
        let xd = self.data(a);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a_i in 0..len {
                let base = (o * len + a_i) * inner;
                for i in 0..inner {
                    out[o * inner + i] += xd[base + i];
                }
            }
        }
        let scale = 1.0 / len as f64;
        for v in &mut out {
            *v *= scale;
        }
        let value = Tensor::new(removed_axis_shape(self.shape(a), axis), out)?;
        Ok(self.push(value, Op::MeanAxis(a, axis), false))
    }

    pub fn max_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        check_axis(self.shape(a), axis, "max_axis")?;
        let (outer, len, inner) = outer_axis_inner(self.shape(a), axis);
        let xd = self.data(a);
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for a_i in 0..len {
                let base = (o * len + a_i) * inner;
                for i in 0..inner {
                    let v = xd[base + i];
                    let slot = o * inner + i;
                    if v > out[slot] {
                        out[slot] = v;
                        argmax[slot] = base + i;
                    }
                }
            }
        }
        let value = Tensor::new(removed_axis_shape(self.shape(a), axis), out)?;
        Ok(self.push(value, Op::MaxAxis { x: a, argmax }, false))
    }

    pub fn l2_norm_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        check_axis(self.shape(a), axis, "l2_norm_axis")?;
        let (outer, len, inner) = outer_axis_inner(self.shape(a), axis);
        let xd = self.data(a);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a_i in 0..len {
                let base = (o * len + a_i) * inner;
                for i in 0..inner {
                    out[o * inner + i] += xd[base + i] * xd[base + i];
                }
            }
        }
        for v in &mut out {
            *v = v.sqrt();
        }
        let value = Tensor::new(removed_axis_shape(self.shape(a), axis), out)?;
        Ok(self.push(value, Op::L2NormAxis(a, axis), false))
    }

    /// Row-wise softmax over the last axis, computed with max subtraction.
    pub fn softmax_last(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a);
        if s.is_empty() {
            return Err(Error::InvalidOperand("softmax on empty shape".into()));
        }
        let cols = s[s.len() - 1];
        let xd = self.data(a);
        let mut out = vec![0.0; xd.len()];
        for (row_in, row_out) in xd.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
            let max = row_in.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &v) in row_out.iter_mut().zip(row_in) {
                *o = (v - max).exp();
                sum += *o;
            }
            for o in row_out.iter_mut() {
                *o /= sum;
            }
        }
        let value = Tensor::new(s.to_vec(), out)?;
        Ok(self.push(value, Op::SoftmaxLast(a), false))
    }

    // ── shape and indexing ──────────────────────────────────────────────

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != self.data(a).len() {
            return Err(Error::ShapeMismatch {
                context: "reshape",
                left: self.shape(a).to_vec(),
                right: shape,
            });
        }
        let value = Tensor::new(shape, self.data(a).to_vec())?;
        Ok(self.push(value, Op::Reshape(a), false))
    }

    /// Column range of a rank-2 tensor: `[N,M] -> [N, end-start]`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let s = self.shape(a);
        if s.len() != 2 || start >= end || end > s[1] {
            return Err(Error::InvalidOperand(format!(
                "slice_cols {start}..{end} invalid for shape {s:?}"
            )));
        }
        let (rows, cols) = (s[0], s[1]);
        let xd = self.data(a);
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&xd[r * cols + start..r * cols + end]);
        }
        let value = Tensor::new(vec![rows, end - start], out)?;
        Ok(self.push(value, Op::SliceCols { x: a, start, end }, false))
    }

    /// One element per row: `out[n] = x[n, indices[n]]`.
    pub fn pick_per_row(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        let s = self.shape(a);
        if s.len() != 2 || indices.len() != s[0] {
            return Err(Error::InvalidOperand(format!(
                "pick_per_row needs [N,M] input and N indices, got {s:?} and {}",
                indices.len()
            )));
        }
        let cols = s[1];
        for (row, &ix) in indices.iter().enumerate() {
            if ix >= cols {
                return Err(Error::InvalidLabel {
                    index: row,
                    label: ix,
                    classes: cols,
                });
            }
        }
        let xd = self.data(a);
        let out: Vec<f64> = indices
            .iter()
            .enumerate()
            .map(|(r, &ix)| xd[r * cols + ix])
            .collect();
        let value = Tensor::new(vec![s[0]], out)?;
        Ok(self.push(
            value,
            Op::PickPerRow {
                x: a,
                indices: indices.to_vec(),
            },
            false,
        ))
    }

    /// `[N,K] + [K]`: adds a bias row to every row.
    pub fn add_row_broadcast(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sa.len() != 2 || sb.len() != 1 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                context: "add_row_broadcast",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let cols = sa[1];
        let bd = self.data(bias).to_vec();
        let data = self
            .data(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bd[i % cols])
            .collect();
        let value = Tensor::new(sa.to_vec(), data)?;
        Ok(self.push(value, Op::AddRowBroadcast(a, bias), false))
    }

    /// Divides along the last axis: `x[.., l] / d[..]` where `d` has the
    /// shape of `x` without its last axis.
    pub fn div_last_axis(&mut self, x: NodeId, d: NodeId) -> Result<NodeId> {
        let (sx, sd) = (self.shape(x), self.shape(d));
        if sx.is_empty() || sd != &sx[..sx.len() - 1] {
            return Err(Error::ShapeMismatch {
                context: "div_last_axis",
                left: sx.to_vec(),
                right: sd.to_vec(),
            });
        }
        let l = sx[sx.len() - 1];
        let dd = self.data(d);
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v / dd[i / l])
            .collect();
        let value = Tensor::new(sx.to_vec(), data)?;
        Ok(self.push(value, Op::DivLastAxis(x, d), false))
    }

    /// Mean over index blocks of a batch of square matrices. `bounds` has a
    /// leading 0 and trailing C; block `m` covers `bounds[m]..bounds[m+1]`.
    pub fn block_mean(&mut self, x: NodeId, bounds: &[usize]) -> Result<NodeId> {
        let s = self.shape(x);
        if s.len() != 3 || s[1] != s[2] {
            return Err(Error::InvalidOperand(format!(
                "block_mean expects [N,C,C], got {s:?}"
            )));
        }
        let c = s[1];
        let valid = bounds.len() >= 2
            && bounds[0] == 0
            && *bounds.last().unwrap() == c
            && bounds.windows(2).all(|w| w[0] < w[1]);
        if !valid {
            return Err(Error::Config(format!(
                "block bounds {bounds:?} do not partition {c} channels"
            )));
        }
        let n = s[0];
        let g = bounds.len() - 1;
        let xd = self.data(x);
        let mut out = vec![0.0; n * g * g];
        for i in 0..n {
            let mat = &xd[i * c * c..(i + 1) * c * c];
            for m in 0..g {
                for k in 0..g {
                    let mut sum = 0.0;
                    for row in bounds[m]..bounds[m + 1] {
                        for col in bounds[k]..bounds[k + 1] {
                            sum += mat[row * c + col];
                        }
                    }
                    let count = (bounds[m + 1] - bounds[m]) * (bounds[k + 1] - bounds[k]);
                    out[i * g * g + m * g + k] = sum / count as f64;
                }
            }
        }
        let value = Tensor::new(vec![n, g, g], out)?;
        Ok(self.push(
            value,
            Op::BlockMean {
                x,
                bounds: bounds.to_vec(),
            },
            false,
        ))
    }

    /// Main diagonal of each matrix in a batch: `[N,G,G] -> [N,G]`.
    pub fn diag_part(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x);
        if s.len() != 3 || s[1] != s[2] {
            return Err(Error::InvalidOperand(format!(
                "diag_part expects [N,G,G], got {s:?}"
            )));
        }
        let (n, g) = (s[0], s[1]);
        let xd = self.data(x);
        let mut out = vec![0.0; n * g];
        for i in 0..n {
            for m in 0..g {
                out[i * g + m] = xd[i * g * g + m * g + m];
            }
        }
        let value = Tensor::new(vec![n, g], out)?;
        Ok(self.push(value, Op::DiagPart(x), false))
    }

    // ── convolution and pooling ─────────────────────────────────────────

    /// Cross-correlation with bias. `x` is `[N,Cin,H,W]`, `weight` is
    /// `[Cout,Cin,kh,kw]`, `bias` is `[Cout]`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let (sx, sw, sb) = (self.shape(x), self.shape(weight), self.shape(bias));
        if sx.len() != 4 || sw.len() != 4 || sb.len() != 1 {
            return Err(Error::InvalidOperand(format!(
                "conv2d expects x [N,C,H,W], weight [O,C,kh,kw], bias [O]; got {sx:?}, {sw:?}, {sb:?}"
            )));
        }
        if sx[1] != sw[1] {
            return Err(Error::ShapeMismatch {
                context: "conv2d input channels",
                left: sx.to_vec(),
                right: sw.to_vec(),
            });
        }
        if sb[0] != sw[0] {
            return Err(Error::ShapeMismatch {
                context: "conv2d bias",
                left: sw.to_vec(),
                right: sb.to_vec(),
            });
        }
        if stride == 0 {
            return Err(Error::InvalidOperand("conv2d stride must be ≥ 1".into()));
        }
        let (n, cin, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let (cout, kh, kw) = (sw[0], sw[2], sw[3]);
        let h_eff = h + 2 * padding;
        let w_eff = w + 2 * padding;
        if h_eff < kh || w_eff < kw {
            return Err(Error::InvalidOperand(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {h_eff}x{w_eff}"
            )));
        }
        let geom = ConvGeom {
            in_channels: cin,
            in_h: h,
            in_w: w,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
            out_h: (h_eff - kh) / stride + 1,
            out_w: (w_eff - kw) / stride + 1,
        };
        let patch = geom.patch_len();
        let positions = geom.out_positions();
        let xd = self.data(x);
        let wd = self.data(weight);
        let bd = self.data(bias);
        let mut cols = vec![0.0; patch * positions];
        let mut out = vec![0.0; n * cout * positions];
        for i in 0..n {
            im2col(&xd[i * cin * h * w..(i + 1) * cin * h * w], &geom, &mut cols);
            let dst = &mut out[i * cout * positions..(i + 1) * cout * positions];
            mm_acc(wd, &cols, cout, patch, positions, dst);
            for (c, &b) in bd.iter().enumerate() {
                for v in &mut dst[c * positions..(c + 1) * positions] {
                    *v += b;
                }
            }
        }
        let value = Tensor::new(vec![n, cout, geom.out_h, geom.out_w], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                weight,
                bias,
                geom,
            },
            false,
        ))
    }

    /// Non-overlapping max pooling with window and stride `size`; trailing
    /// rows/columns that do not fill a window are dropped.
    pub fn max_pool2d(&mut self, x: NodeId, size: usize) -> Result<NodeId> {
        let s = self.shape(x);
        if s.len() != 4 {
            return Err(Error::InvalidOperand(format!(
                "max_pool2d expects [N,C,H,W], got {s:?}"
            )));
        }
        if size == 0 || s[2] < size || s[3] < size {
            return Err(Error::InvalidOperand(format!(
                "max_pool2d window {size} invalid for spatial {}x{}",
                s[2], s[3]
            )));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h / size, w / size);
        let xd = self.data(x);
        let mut out = vec![0.0; n * c * oh * ow];
        let mut argmax = vec![0usize; out.len()];
        for img in 0..n {
            for ch in 0..c {
                let base = (img * c + ch) * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_at = 0;
                        for dy in 0..size {
                            for dx in 0..size {
                                let at = base + (oy * size + dy) * w + (ox * size + dx);
                                if xd[at] > best {
                                    best = xd[at];
                                    best_at = at;
                                }
                            }
                        }
                        let slot = ((img * c + ch) * oh + oy) * ow + ox;
                        out[slot] = best;
                        argmax[slot] = best_at;
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        Ok(self.push(value, Op::MaxPool2d { x, argmax }, false))
    }

    /// Spatial mean per channel: `[N,C,H,W] -> [N,C]`.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x);
        if s.len() != 4 {
            return Err(Error::InvalidOperand(format!(
                "global_avg_pool expects [N,C,H,W], got {s:?}"
            )));
        }
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let xd = self.data(x);
        let mut out = vec![0.0; n * c];
        for (i, slot) in out.iter_mut().enumerate() {
            let base = i * hw;
            *slot = xd[base..base + hw].iter().sum::<f64>() / hw as f64;
        }
        let value = Tensor::new(vec![n, c], out)?;
        Ok(self.push(value, Op::GlobalAvgPool(x), false))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse-mode sweep from a scalar. Gradients accumulate into each
    /// touched node (repeated calls without [`Graph::zero_grads`] add up).
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::InvalidOperand(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut adjoint: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adjoint[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = adjoint[i].take() else {
                continue;
            };
            self.propagate(i, &g, &mut adjoint);
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(buf) => {
                    for (slot, &v) in buf.iter_mut().zip(&g) {
                        *slot += v;
                    }
                }
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    /// Adds node `i`'s contribution to each parent's adjoint buffer.
    fn propagate(&self, i: usize, g: &[f64], adjoint: &mut [Option<Vec<f64>>]) {
        fn buf<'a>(
            adjoint: &'a mut [Option<Vec<f64>>],
            id: NodeId,
            len: usize,
        ) -> &'a mut Vec<f64> {
            adjoint[id.0].get_or_insert_with(|| vec![0.0; len])
        }

        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let ga = buf(adjoint, *a, g.len());
                for (slot, &v) in ga.iter_mut().zip(g) {
                    *slot += v;
                }
                let gb = buf(adjoint, *b, g.len());
                for (slot, &v) in gb.iter_mut().zip(g) {
                    *slot += v;
                }
            }
            Op::Sub(a, b) => {
                let ga = buf(adjoint, *a, g.len());
                for (slot, &v) in ga.iter_mut().zip(g) {
                    *slot += v;
                }
                let gb = buf(adjoint, *b, g.len());
                for (slot, &v) in gb.iter_mut().zip(g) {
                    *slot -= v;
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.data(*a).to_vec(), self.data(*b).to_vec());
                let ga = buf(adjoint, *a, g.len());
                for ((slot, &v), &y) in ga.iter_mut().zip(g).zip(&bv) {
                    *slot += v * y;
                }
                let gb = buf(adjoint, *b, g.len());
                for ((slot, &v), &x) in gb.iter_mut().zip(g).zip(&av) {
                    *slot += v * x;
                }
            }
            Op::ScalarMul(a, factor) => {
                let f = *factor;
                let ga = buf(adjoint, *a, g.len());
                for (slot, &v) in ga.iter_mut().zip(g) {
                    *slot += v * f;
                }
            }
            Op::Relu(a) => {
                let xv = self.data(*a).to_vec();
                let ga = buf(adjoint, *a, g.len());
                for ((slot, &v), &x) in ga.iter_mut().zip(g).zip(&xv) {
                    if x > 0.0 {
                        *slot += v;
                    }
                }
            }
            Op::Exp(a) => {
                let yv = self.nodes[i].value.data().to_vec();
                let ga = buf(adjoint, *a, g.len());
                for ((slot, &v), &y) in ga.iter_mut().zip(g).zip(&yv) {
                    *slot += v * y;
                }
            }
            Op::Log(a) => {
                let xv = self.data(*a).to_vec();
                let ga = buf(adjoint, *a, g.len());
                for ((slot, &v), &x) in ga.iter_mut().zip(g).zip(&xv) {
                    if x > LOG_FLOOR {
                        *slot += v / x;
                    }
                }
            }
            Op::ClampMin(a, floor) => {
                let f = *floor;
                let xv = self.data(*a).to_vec();
                let ga = buf(adjoint, *a, g.len());
                for ((slot, &v), &x) in ga.iter_mut().zip(g).zip(&xv) {
                    if x > f {
                        *slot += v;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let bv = self.data(*b).to_vec();
                let av = self.data(*a).to_vec();
                // gA += g · Bᵀ
                mm_abt_acc(g, &bv, m, n, k, buf(adjoint, *a, m * k));
                // gB += Aᵀ · g
                mm_atb_acc(&av, g, k, m, n, buf(adjoint, *b, k * n));
            }
            Op::SumAll(a) => {
                let len = self.data(*a).len();
                let ga = buf(adjoint, *a, len);
                for slot in ga.iter_mut() {
                    *slot += g[0];
                }
            }
            Op::MeanAxis(a, axis) => {
                let (outer, len, inner) = outer_axis_inner(self.shape(*a), *axis);
                let scale = 1.0 / len as f64;
                let ga = buf(adjoint, *a, outer * len * inner);
                for o in 0..outer {
                    for a_i in 0..len {
                        let base = (o * len + a_i) * inner;
                        for x in 0..inner {
                            ga[base + x] += g[o * inner + x] * scale;
                        }
                    }
                }
            }
            Op::MaxAxis { x, argmax, .. } => {
                let len = self.data(*x).len();
                let ga = buf(adjoint, *x, len);
                for (slot, &v) in argmax.iter().zip(g) {
                    ga[*slot] += v;
                }
            }
            Op::L2NormAxis(a, axis) => {
                let (outer, len, inner) = outer_axis_inner(self.shape(*a), *axis);
                let xv = self.data(*a).to_vec();
                let yv = self.nodes[i].value.data().to_vec();
                let ga = buf(adjoint, *a, outer * len * inner);
                for o in 0..outer {
                    for a_i in 0..len {
                        let base = (o * len + a_i) * inner;
                        for x in 0..inner {
                            let norm = yv[o * inner + x];
                            if norm > 0.0 {
                                ga[base + x] += g[o * inner + x] * xv[base + x] / norm;
                            }
                        }
                    }
                }
            }
            Op::SoftmaxLast(a) => {
                let s = self.shape(*a);
                let cols = s[s.len() - 1];
                let yv = self.nodes[i].value.data().to_vec();
                let ga = buf(adjoint, *a, yv.len());
                for ((grow, yrow), garow) in g
                    .chunks_exact(cols)
                    .zip(yv.chunks_exact(cols))
                    .zip(ga.chunks_exact_mut(cols))
                {
                    let dot: f64 = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    for ((slot, &gv), &yv) in garow.iter_mut().zip(grow).zip(yrow) {
                        *slot += yv * (gv - dot);
                    }
                }
            }
            Op::Reshape(a) => {
                let ga = buf(adjoint, *a, g.len());
                for (slot, &v) in ga.iter_mut().zip(g) {
                    *slot += v;
                }
            }
            Op::SliceCols { x, start, end } => {
                let s = self.shape(*x);
                let (rows, cols) = (s[0], s[1]);
                let width = end - start;
                let ga = buf(adjoint, *x, rows * cols);
                for r in 0..rows {
                    for c in 0..width {
                        ga[r * cols + start + c] += g[r * width + c];
                    }
                }
            }
            Op::PickPerRow { x, indices } => {
                let cols = self.shape(*x)[1];
                let ga = buf(adjoint, *x, self.data(*x).len());
                for (r, &ix) in indices.iter().enumerate() {
                    ga[r * cols + ix] += g[r];
                }
            }
            Op::AddRowBroadcast(a, bias) => {
                let cols = self.shape(*bias)[0];
                let ga = buf(adjoint, *a, g.len());
                for (slot, &v) in ga.iter_mut().zip(g) {
                    *slot += v;
                }
                let gb = buf(adjoint, *bias, cols);
                for (j, &v) in g.iter().enumerate() {
                    gb[j % cols] += v;
                }
            }
            Op::DivLastAxis(x, d) => {
                let sx = self.shape(*x);
                let l = sx[sx.len() - 1];
                let xd = self.data(*x).to_vec();
                let dd = self.data(*d).to_vec();
                let gx = buf(adjoint, *x, xd.len());
                for (j, (slot, &v)) in gx.iter_mut().zip(g).enumerate() {
                    *slot += v / dd[j / l];
                }
                let gd = buf(adjoint, *d, dd.len());
                for (j, &v) in g.iter().enumerate() {
                    let o = j / l;
                    gd[o] -= v * xd[j] / (dd[o] * dd[o]);
                }
            }
            Op::GramLast(x) => {
                let s = self.shape(*x);
                let (n, c, l) = (s[0], s[1], s[2]);
                let xd = self.data(*x).to_vec();
                let gx = buf(adjoint, *x, xd.len());
                let mut sym = vec![0.0; c * c];
                for img in 0..n {
                    let gm = &g[img * c * c..(img + 1) * c * c];
                    for r in 0..c {
                        for k in 0..c {
                            sym[r * c + k] = gm[r * c + k] + gm[k * c + r];
                        }
                    }
                    mm_acc(
                        &sym,
                        &xd[img * c * l..(img + 1) * c * l],
                        c,
                        c,
                        l,
                        &mut gx[img * c * l..(img + 1) * c * l],
                    );
                }
            }
            Op::BlockMean { x, bounds } => {
                let c = self.shape(*x)[1];
                let n = self.shape(*x)[0];
                let gcount = bounds.len() - 1;
                let gx = buf(adjoint, *x, n * c * c);
                for img in 0..n {
                    for m in 0..gcount {
                        for k in 0..gcount {
                            let count =
                                ((bounds[m + 1] - bounds[m]) * (bounds[k + 1] - bounds[k])) as f64;
                            let v = g[img * gcount * gcount + m * gcount + k] / count;
                            for row in bounds[m]..bounds[m + 1] {
                                for col in bounds[k]..bounds[k + 1] {
                                    gx[img * c * c + row * c + col] += v;
                                }
                            }
                        }
                    }
                }
            }
            Op::DiagPart(x) => {
                let s = self.shape(*x);
                let (n, dim) = (s[0], s[1]);
                let gx = buf(adjoint, *x, n * dim * dim);
                for img in 0..n {
                    for m in 0..dim {
                        gx[img * dim * dim + m * dim + m] += g[img * dim + m];
                    }
                }
            }
            Op::Conv2d {
                x,
                weight,
                bias,
                geom,
            } => {
                let geom = *geom;
                let n = self.shape(*x)[0];
                let cout = self.shape(*weight)[0];
                let patch = geom.patch_len();
                let positions = geom.out_positions();
                let img_len = geom.in_channels * geom.in_h * geom.in_w;
                let xd = self.data(*x).to_vec();
                let wd = self.data(*weight).to_vec();
                let mut cols = vec![0.0; patch * positions];
                let mut gcols = vec![0.0; patch * positions];
                {
                    let gw = buf(adjoint, *weight, cout * patch);
                    for img in 0..n {
                        im2col(&xd[img * img_len..(img + 1) * img_len], &geom, &mut cols);
                        let gi = &g[img * cout * positions..(img + 1) * cout * positions];
                        mm_abt_acc(gi, &cols, cout, positions, patch, gw);
                    }
                }
                {
                    let gx = buf(adjoint, *x, xd.len());
                    for img in 0..n {
                        gcols.fill(0.0);
                        let gi = &g[img * cout * positions..(img + 1) * cout * positions];
                        mm_atb_acc(&wd, gi, patch, cout, positions, &mut gcols);
                        col2im_acc(&gcols, &geom, &mut gx[img * img_len..(img + 1) * img_len]);
                    }
                }
                {
                    let gb = buf(adjoint, *bias, cout);
                    for img in 0..n {
                        let gi = &g[img * cout * positions..(img + 1) * cout * positions];
                        for (c, slot) in gb.iter_mut().enumerate() {
                            *slot += gi[c * positions..(c + 1) * positions].iter().sum::<f64>();
                        }
                    }
                }
            }
            Op::MaxPool2d { x, argmax, .. } => {
                let len = self.data(*x).len();
                let gx = buf(adjoint, *x, len);
                for (slot, &v) in argmax.iter().zip(g) {
                    gx[*slot] += v;
                }
            }
            Op::GlobalAvgPool(x) => {
                let s = self.shape(*x);
                let hw = s[2] * s[3];
                let scale = 1.0 / hw as f64;
                let gx = buf(adjoint, *x, self.data(*x).len());
                for (j, slot) in gx.iter_mut().enumerate() {
                    *slot += g[j / hw] * scale;
                }
            }
        }
    }

    /// Trainable leaves that received a gradient but should not have, or
    /// vice versa, indicate a wiring bug; this lists every trainable id.
    pub fn trainable_ids(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.trainable)
            .map(|(i, _)| NodeId(i))
            .collect()
    }
}
