//! Tensor operators.
//!
//! Every function validates shapes, computes the forward value, and records a
//! node when any input is tracked. The operator set is deliberately small:
//! what MLP/conv models and the losses need, plus the handful of structural
//! ops (transpose, row/column reductions, im2col) that the backward rules are
//! written in terms of. Because each backward rule is itself expressed with
//! these operators, gradients recorded with `create_graph` are differentiable
//! again.
//!
//! Broadcasting is intentionally absent; `expand_rows`/`expand_cols` make the
//! two bias-style broadcasts explicit.

use std::sync::Arc;

use crate::autodiff::graph::{Graph, Node, NodeId};
use crate::autodiff::tensor::{numel_of, Tensor};
use crate::error::{Error, Result};

/// Identifies the operation that produced a node, with any static attributes
/// the backward rule needs.
#[derive(Debug, Clone)]
pub(crate) enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale { factor: f64 },
    ScaleByScalar,
    Matmul,
    Transpose,
    Relu,
    Exp,
    Sqrt,
    LogSoftmax,
    Sum,
    Dot,
    RowSum,
    ColSum,
    RowDot,
    ExpandCols,
    ExpandRows,
    Reshape,
    Unfold { b: usize, c: usize, h: usize, w: usize },
    Fold,
    MeanPool2 { h: usize, w: usize },
    MeanUnpool2,
    ChwFromHwc,
    HwcFromChw { b: usize, c: usize, h: usize, w: usize },
}

/// Records `data` as the output of `op` over `inputs`. The output is tracked
/// iff any input is tracked; untracked inputs of a tracked op are promoted to
/// leaves so the backward sweep can reconstruct them.
fn finish(op: OpKind, inputs: &[&Tensor], shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
    let mut graph: Option<&Graph> = None;
    for t in inputs {
        if let Some(tr) = t.tracked_ref() {
            tr.check_fresh()?;
            match graph {
                None => graph = Some(&tr.graph),
                Some(g) => {
                    if !g.same_graph(&tr.graph) {
                        return Err(Error::Contract(
                            "tracked inputs belong to different graphs".into(),
                        ));
                    }
                }
            }
        }
    }
    match graph {
        None => Ok(Tensor::untracked(shape, data)),
        Some(g) => {
            let parents: Vec<NodeId> = inputs
                .iter()
                .map(|t| match t.tracked_ref() {
                    Some(tr) => tr.id,
                    None => g.push(Node {
                        op: OpKind::Leaf,
                        parents: Vec::new(),
                        value: t.data_arc(),
                        shape: t.shape().to_vec(),
                    }),
                })
                .collect();
            let value = Arc::new(data);
            let id = g.push(Node {
                op,
                parents,
                value: value.clone(),
                shape: shape.clone(),
            });
            Ok(Tensor::tracked(shape, value, g.clone(), id, g.generation()))
        }
    }
}

fn require_same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::invalid_shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn require_matrix(op: &str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(Error::invalid_shape(op, other, &[0, 0])),
    }
}

fn require_scalar(op: &str, t: &Tensor) -> Result<()> {
    if !t.is_scalar_shaped() {
        return Err(Error::invalid_shape(op, t.shape(), &[]));
    }
    Ok(())
}

// ── Elementwise ──────────────────────────────────────────────────────

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    require_same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    finish(OpKind::Add, &[a, b], a.shape().to_vec(), data)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    require_same_shape("sub", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    finish(OpKind::Sub, &[a, b], a.shape().to_vec(), data)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    require_same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    finish(OpKind::Mul, &[a, b], a.shape().to_vec(), data)
}

pub fn div(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    require_same_shape("div", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x / y).collect();
    finish(OpKind::Div, &[a, b], a.shape().to_vec(), data)
}

pub fn neg(a: &Tensor) -> Result<Tensor> {
    let data = a.data().iter().map(|x| -x).collect();
    finish(OpKind::Neg, &[a], a.shape().to_vec(), data)
}

pub fn scale(a: &Tensor, factor: f64) -> Result<Tensor> {
    let data = a.data().iter().map(|x| x * factor).collect();
    finish(OpKind::Scale { factor }, &[a], a.shape().to_vec(), data)
}

/// Multiplies every element of `a` by the scalar tensor `s`.
pub fn scale_by(a: &Tensor, s: &Tensor) -> Result<Tensor> {
    require_scalar("scale_by", s)?;
    let f = s.data()[0];
    let data = a.data().iter().map(|x| x * f).collect();
    finish(OpKind::ScaleByScalar, &[a, s], a.shape().to_vec(), data)
}

pub fn relu(a: &Tensor) -> Result<Tensor> {
    let data = a.data().iter().map(|x| x.max(0.0)).collect();
    finish(OpKind::Relu, &[a], a.shape().to_vec(), data)
}

pub fn exp(a: &Tensor) -> Result<Tensor> {
    let data = a.data().iter().map(|x| x.exp()).collect();
    finish(OpKind::Exp, &[a], a.shape().to_vec(), data)
}

/// Elementwise square root. The gradient is `g / (2 sqrt x)`, so callers must
/// keep inputs away from exact zero when differentiating.
pub fn sqrt(a: &Tensor) -> Result<Tensor> {
    let data = a.data().iter().map(|x| x.sqrt()).collect();
    finish(OpKind::Sqrt, &[a], a.shape().to_vec(), data)
}

// ── Linear algebra ───────────────────────────────────────────────────

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = require_matrix("matmul", a)?;
    let (k2, n) = require_matrix("matmul", b)?;
    if k != k2 {
        return Err(Error::invalid_shape("matmul", a.shape(), b.shape()));
    }
    let data = matmul_kernel(a.data(), b.data(), m, k, n);
    finish(OpKind::Matmul, &[a, b], vec![m, n], data)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (r, c) = require_matrix("transpose", a)?;
    let src = a.data();
    let mut data = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            data[j * r + i] = src[i * c + j];
        }
    }
    finish(OpKind::Transpose, &[a], vec![c, r], data)
}

/// Row-wise log-softmax of a `[rows, cols]` matrix.
pub fn log_softmax(a: &Tensor) -> Result<Tensor> {
    let (r, c) = require_matrix("log_softmax", a)?;
    if c == 0 {
        return Err(Error::invalid_shape("log_softmax", a.shape(), &[r, 1]));
    }
    let src = a.data();
    let mut data = vec![0.0; r * c];
    for i in 0..r {
        let row = &src[i * c..(i + 1) * c];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
        for j in 0..c {
            data[i * c + j] = row[j] - lse;
        }
    }
    finish(OpKind::LogSoftmax, &[a], vec![r, c], data)
}

// ── Reductions ───────────────────────────────────────────────────────

pub fn sum(a: &Tensor) -> Result<Tensor> {
    let total: f64 = a.data().iter().sum();
    finish(OpKind::Sum, &[a], Vec::new(), vec![total])
}

/// Mean over all elements, computed as `sum / numel` with an exact divide so
/// that e.g. the mean of n equal values of one is exactly one.
pub fn mean(a: &Tensor) -> Result<Tensor> {
    if a.numel() == 0 {
        return Err(Error::invalid_shape("mean", a.shape(), &[1]));
    }
    let n = Tensor::scalar(a.numel() as f64);
    div(&sum(a)?, &n)
}

/// Flattened dot product of two same-shaped tensors.
pub fn dot(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    require_same_shape("dot", a, b)?;
    let total: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
    finish(OpKind::Dot, &[a, b], Vec::new(), vec![total])
}

/// Euclidean norm, `sqrt(dot(a, a))`. Differentiable away from zero.
pub fn l2_norm(a: &Tensor) -> Result<Tensor> {
    sqrt(&dot(a, a)?)
}

pub fn row_sum(a: &Tensor) -> Result<Tensor> {
    let (r, c) = require_matrix("row_sum", a)?;
    let src = a.data();
    let data = (0..r).map(|i| src[i * c..(i + 1) * c].iter().sum()).collect();
    finish(OpKind::RowSum, &[a], vec![r], data)
}

pub fn col_sum(a: &Tensor) -> Result<Tensor> {
    let (r, c) = require_matrix("col_sum", a)?;
    let src = a.data();
    let mut data = vec![0.0; c];
    for i in 0..r {
        for j in 0..c {
            data[j] += src[i * c + j];
        }
    }
    finish(OpKind::ColSum, &[a], vec![c], data)
}

/// Row-wise dot product of two `[rows, cols]` matrices, yielding `[rows]`.
pub fn row_dot(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    require_same_shape("row_dot", a, b)?;
    let (r, c) = require_matrix("row_dot", a)?;
    let (x, y) = (a.data(), b.data());
    let data = (0..r)
        .map(|i| (0..c).map(|j| x[i * c + j] * y[i * c + j]).sum())
        .collect();
    finish(OpKind::RowDot, &[a, b], vec![r], data)
}

// ── Structure ────────────────────────────────────────────────────────

/// Replicates a `[rows]` vector across `cols` columns: out[i, j] = v[i].
pub fn expand_cols(v: &Tensor, cols: usize) -> Result<Tensor> {
    let rows = match v.shape() {
        [r] => *r,
        other => return Err(Error::invalid_shape("expand_cols", other, &[0])),
    };
    let src = v.data();
    let mut data = vec![0.0; rows * cols];
    for i in 0..rows {
        data[i * cols..(i + 1) * cols].fill(src[i]);
    }
    finish(OpKind::ExpandCols, &[v], vec![rows, cols], data)
}

/// Replicates a `[cols]` vector across `rows` rows: out[i, j] = v[j].
/// This is the bias-add broadcast.
pub fn expand_rows(v: &Tensor, rows: usize) -> Result<Tensor> {
    let cols = match v.shape() {
        [c] => *c,
        other => return Err(Error::invalid_shape("expand_rows", other, &[0])),
    };
    let src = v.data();
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        data.extend_from_slice(src);
    }
    finish(OpKind::ExpandRows, &[v], vec![rows, cols], data)
}

pub fn reshape(a: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if numel_of(shape) != a.numel() {
        return Err(Error::invalid_shape("reshape", a.shape(), shape));
    }
    let data = a.data().to_vec();
    finish(OpKind::Reshape, &[a], shape.to_vec(), data)
}

// ── Convolution building blocks ──────────────────────────────────────
//
// conv2d with a 3x3 kernel, stride 1 and zero padding 1 is expressed as
// im2col (`unfold`) followed by a matmul and a layout permutation. `fold` is
// the adjoint scatter-add of `unfold`, and the two layout permutations are
// adjoints of each other, so second-order gradients come for free.

fn require_bchw(op: &str, t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match t.shape() {
        [b, c, h, w] => Ok((*b, *c, *h, *w)),
        other => Err(Error::invalid_shape(op, other, &[0, 0, 0, 0])),
    }
}

/// im2col for 3x3/stride-1/pad-1: `[b,c,h,w]` → `[(b·h·w), (c·9)]`.
pub(crate) fn unfold(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = require_bchw("unfold", x)?;
    let src = x.data();
    let mut data = vec![0.0; b * h * w * c * 9];
    let row_w = c * 9;
    for bi in 0..b {
        for y in 0..h {
            for xx in 0..w {
                let row = ((bi * h) + y) * w + xx;
                for ci in 0..c {
                    for ky in 0..3 {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let sx = xx as isize + kx as isize - 1;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let col = ci * 9 + ky * 3 + kx;
                            data[row * row_w + col] =
                                src[((bi * c + ci) * h + sy as usize) * w + sx as usize];
                        }
                    }
                }
            }
        }
    }
    finish(
        OpKind::Unfold { b, c, h, w },
        &[x],
        vec![b * h * w, c * 9],
        data,
    )
}

/// Adjoint of [`unfold`]: scatter-adds columns back into `[b,c,h,w]`.
pub(crate) fn fold(cols: &Tensor, b: usize, c: usize, h: usize, w: usize) -> Result<Tensor> {
    let expect = [b * h * w, c * 9];
    if cols.shape() != expect {
        return Err(Error::invalid_shape("fold", cols.shape(), &expect));
    }
    let src = cols.data();
    let mut data = vec![0.0; b * c * h * w];
    let row_w = c * 9;
    for bi in 0..b {
        for y in 0..h {
            for xx in 0..w {
                let row = ((bi * h) + y) * w + xx;
                for ci in 0..c {
                    for ky in 0..3 {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let sx = xx as isize + kx as isize - 1;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let col = ci * 9 + ky * 3 + kx;
                            data[((bi * c + ci) * h + sy as usize) * w + sx as usize] +=
                                src[row * row_w + col];
                        }
                    }
                }
            }
        }
    }
    finish(OpKind::Fold, &[cols], vec![b, c, h, w], data)
}

/// `[(b·h·w), c]` rows in (b, y, x) order → `[b, c, h, w]`.
pub(crate) fn chw_from_hwc(t: &Tensor, b: usize, c: usize, h: usize, w: usize) -> Result<Tensor> {
    let expect = [b * h * w, c];
    if t.shape() != expect {
        return Err(Error::invalid_shape("chw_from_hwc", t.shape(), &expect));
    }
    let src = t.data();
    let mut data = vec![0.0; b * c * h * w];
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let row = ((bi * h) + y) * w + x;
                for ci in 0..c {
                    data[((bi * c + ci) * h + y) * w + x] = src[row * c + ci];
                }
            }
        }
    }
    finish(OpKind::ChwFromHwc, &[t], vec![b, c, h, w], data)
}

/// Inverse (and adjoint) of [`chw_from_hwc`].
pub(crate) fn hwc_from_chw(t: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = require_bchw("hwc_from_chw", t)?;
    let src = t.data();
    let mut data = vec![0.0; b * c * h * w];
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let row = ((bi * h) + y) * w + x;
                for ci in 0..c {
                    data[row * c + ci] = src[((bi * c + ci) * h + y) * w + x];
                }
            }
        }
    }
    finish(
        OpKind::HwcFromChw { b, c, h, w },
        &[t],
        vec![b * h * w, c],
        data,
    )
}

/// 3x3 convolution, stride 1, zero padding 1 (same spatial extents), with an
/// optional per-output-channel bias.
pub fn conv2d_3x3(x: &Tensor, kernel: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (b, c, h, w) = require_bchw("conv2d_3x3", x)?;
    let (o, kc, kh, kw) = require_bchw("conv2d_3x3", kernel)?;
    if kc != c || kh != 3 || kw != 3 {
        return Err(Error::invalid_shape("conv2d_3x3", x.shape(), kernel.shape()));
    }
    let cols = unfold(x)?;
    let kmat = transpose(&reshape(kernel, &[o, c * 9])?)?;
    let mut y = matmul(&cols, &kmat)?;
    if let Some(bias) = bias {
        if bias.shape() != [o] {
            return Err(Error::invalid_shape("conv2d_3x3 bias", bias.shape(), &[o]));
        }
        y = add(&y, &expand_rows(bias, b * h * w)?)?;
    }
    chw_from_hwc(&y, b, o, h, w)
}

/// 2x2 mean pooling with stride 2. Spatial extents must be even.
pub fn mean_pool2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = require_bchw("mean_pool2", x)?;
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(Error::invalid_shape("mean_pool2", x.shape(), &[b, c, h / 2 * 2, w / 2 * 2]));
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = x.data();
    let mut data = vec![0.0; b * c * oh * ow];
    for bc in 0..b * c {
        for y in 0..oh {
            for xx in 0..ow {
                let base = bc * h * w + 2 * y * w + 2 * xx;
                data[bc * oh * ow + y * ow + xx] =
                    (src[base] + src[base + 1] + src[base + w] + src[base + w + 1]) * 0.25;
            }
        }
    }
    finish(OpKind::MeanPool2 { h, w }, &[x], vec![b, c, oh, ow], data)
}

/// Adjoint of [`mean_pool2`]: spreads each value over its 2x2 block with
/// weight 1/4. `h` and `w` are the full-resolution extents of the output.
pub(crate) fn mean_unpool2(g: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (b, c, gh, gw) = require_bchw("mean_unpool2", g)?;
    if gh * 2 != h || gw * 2 != w {
        return Err(Error::invalid_shape("mean_unpool2", g.shape(), &[b, c, h / 2, w / 2]));
    }
    let src = g.data();
    let mut data = vec![0.0; b * c * h * w];
    for bc in 0..b * c {
        for y in 0..gh {
            for xx in 0..gw {
                let v = src[bc * gh * gw + y * gw + xx] * 0.25;
                let base = bc * h * w + 2 * y * w + 2 * xx;
                data[base] = v;
                data[base + 1] = v;
                data[base + w] = v;
                data[base + w + 1] = v;
            }
        }
    }
    finish(OpKind::MeanUnpool2, &[g], vec![b, c, h, w], data)
}

fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += aip * brow[j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn relu_clamps_negatives() {
        let out = relu(&t(&[3], &[-1.0, 0.0, 2.0])).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn log_softmax_uniform_is_minus_ln_n() {
        let out = log_softmax(&t(&[1, 5], &[0.3; 5])).unwrap();
        for v in out.data() {
            assert!((v + 5.0_f64.ln()).abs() < 1e-12, "got {v}");
        }
    }

    #[test]
    fn conv_identity_kernel_preserves_image() {
        let mut kernel = vec![0.0; 9];
        kernel[4] = 1.0; // center tap
        let img = t(&[1, 1, 4, 4], &(0..16).map(|v| v as f64 * 0.1).collect::<Vec<_>>());
        let out = conv2d_3x3(&img, &t(&[1, 1, 3, 3], &kernel), None).unwrap();
        assert!(out.bitwise_eq(&img.detach()));
    }

    #[test]
    fn shape_mismatch_names_operator_and_shapes() {
        let err = add(&t(&[2], &[1.0, 2.0]), &t(&[3], &[1.0, 2.0, 3.0])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("add"), "{msg}");
        assert!(msg.contains("[2]") && msg.contains("[3]"), "{msg}");
    }

    #[test]
    fn matmul_small_case() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]);
        let out = matmul(&a, &b).unwrap();
        assert_eq!(out.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn transpose_round_trip() {
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let back = transpose(&transpose(&a).unwrap()).unwrap();
        assert!(back.bitwise_eq(&a));
    }

    #[test]
    fn expand_and_reduce_are_adjoint_shapes() {
        let v = t(&[2], &[1.0, 2.0]);
        let e = expand_cols(&v, 3).unwrap();
        assert_eq!(e.shape(), &[2, 3]);
        assert_eq!(e.data(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        let r = row_sum(&e).unwrap();
        assert_eq!(r.data(), &[3.0, 6.0]);

        let b = t(&[3], &[1.0, 2.0, 3.0]);
        let eb = expand_rows(&b, 2).unwrap();
        assert_eq!(eb.data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let cb = col_sum(&eb).unwrap();
        assert_eq!(cb.data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn fold_is_adjoint_of_unfold() {
        // <unfold(x), y> == <x, fold(y)> for random-ish x, y.
        let x = t(&[1, 2, 4, 4], &(0..32).map(|v| (v as f64).sin()).collect::<Vec<_>>());
        let cols = unfold(&x).unwrap();
        let y = t(cols.shape(), &(0..cols.numel()).map(|v| (v as f64 * 0.7).cos()).collect::<Vec<_>>());
        let lhs = dot(&cols, &y).unwrap().item().unwrap();
        let folded = fold(&y, 1, 2, 4, 4).unwrap();
        let rhs = dot(&x, &folded).unwrap().item().unwrap();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn mean_pool_and_unpool_are_adjoint() {
        let x = t(&[1, 1, 4, 4], &(0..16).map(|v| v as f64 + 1.0).collect::<Vec<_>>());
        let p = mean_pool2(&x).unwrap();
        assert_eq!(p.shape(), &[1, 1, 2, 2]);
        assert_eq!(p.data()[0], (1.0 + 2.0 + 5.0 + 6.0) / 4.0);
        let y = t(&[1, 1, 2, 2], &[1.0, -2.0, 0.5, 3.0]);
        let lhs = dot(&p, &y).unwrap().item().unwrap();
        let up = mean_unpool2(&y, 4, 4).unwrap();
        let rhs = dot(&x, &up).unwrap().item().unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn mean_pool_rejects_odd_extents() {
        let x = Tensor::zeros(&[1, 1, 3, 4]);
        assert!(matches!(mean_pool2(&x), Err(Error::InvalidShape { .. })));
    }

    #[test]
    fn tracking_propagates_through_ops() {
        let g = Graph::new();
        let a = g.leaf(&t(&[2], &[1.0, 2.0]));
        let b = t(&[2], &[3.0, 4.0]);
        let out = add(&a, &b).unwrap();
        assert!(out.is_tracked());
        let plain = add(&b, &b).unwrap();
        assert!(!plain.is_tracked());
    }

    #[test]
    fn mixing_graphs_is_a_contract_error() {
        let g1 = Graph::new();
        let g2 = Graph::new();
        let a = g1.leaf(&Tensor::scalar(1.0));
        let b = g2.leaf(&Tensor::scalar(2.0));
        assert!(matches!(add(&a, &b), Err(Error::Contract(_))));
    }

    #[test]
    fn stale_generation_is_rejected() {
        let g = Graph::new();
        let a = g.leaf(&Tensor::scalar(1.0));
        g.clear();
        assert!(matches!(scale(&a, 2.0), Err(Error::Contract(_))));
    }
}
