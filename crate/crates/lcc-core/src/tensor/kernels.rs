//! Forward and backward kernels for the op catalog.
//!
//! Every kernel is a pure, single-threaded loop over row-major storage.
//! `forward` returns `(shape, values)`; `backward` returns one optional
//! gradient buffer per input slot (`None` where `needs[i]` is false).

use std::sync::Arc;

use super::{strides_of, Op, Tensor, TensorError};

const BCE_EPS: f64 = 1e-7;

fn mismatch(op: &'static str, detail: String) -> TensorError {
    TensorError::ShapeMismatch { op, detail }
}

fn attr(op: &'static str, detail: String) -> TensorError {
    TensorError::InvalidAttr { op, detail }
}

fn want_inputs(op: &Op, inputs: &[&Tensor], n: usize) -> Result<(), TensorError> {
    if inputs.len() != n {
        return Err(mismatch(
            op.name(),
            format!("expected {n} inputs, got {}", inputs.len()),
        ));
    }
    Ok(())
}

/// (outer, dim, axis stride-block) decomposition used by axis reductions:
/// flat index = (o * dim + j) * inner + i.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let dim = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, dim, inner)
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut out = shape.to_vec();
    out.remove(axis);
    out
}

/// How the second operand of add/sub/div lines up with the first.
enum Broadcast {
    Same,
    Scalar,
    /// rhs is a `[last_dim]` vector repeated over leading axes.
    Row(usize),
}

fn broadcast_of(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Broadcast, TensorError> {
    if a.shape() == b.shape() {
        return Ok(Broadcast::Same);
    }
    if b.numel() == 1 {
        return Ok(Broadcast::Scalar);
    }
    if b.shape().len() == 1 && a.shape().last() == Some(&b.shape()[0]) {
        return Ok(Broadcast::Row(b.shape()[0]));
    }
    Err(mismatch(
        op,
        format!(
            "lhs {:?} vs rhs {:?} (rhs must match, be scalar, or match the last dim)",
            a.shape(),
            b.shape()
        ),
    ))
}

pub(crate) fn forward(op: &Op, inputs: &[&Tensor]) -> Result<(Vec<usize>, Vec<f64>), TensorError> {
    match op {
        Op::Matmul => {
            want_inputs(op, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            let (ash, bsh) = (a.shape(), b.shape());
            if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[0] {
                return Err(mismatch(
                    "matmul",
                    format!("incompatible shapes {ash:?} x {bsh:?}"),
                ));
            }
            let (m, k, n) = (ash[0], ash[1], bsh[1]);
            let (av, bv) = (a.values(), b.values());
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                let arow = &av[i * k..(i + 1) * k];
                let orow = &mut out[i * n..(i + 1) * n];
                for (l, &ail) in arow.iter().enumerate() {
                    let brow = &bv[l * n..(l + 1) * n];
                    for (o, &blj) in orow.iter_mut().zip(brow.iter()) {
                        *o += ail * blj;
                    }
                }
            }
            Ok((vec![m, n], out))
        }
        Op::Add | Op::Sub | Op::Div => {
            want_inputs(op, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            let (av, bv) = (a.values(), b.values());
            let combine: fn(f64, f64) -> f64 = match op {
                Op::Add => |x, y| x + y,
                Op::Sub => |x, y| x - y,
                _ => |x, y| x / y,
            };
            let out = match broadcast_of(op.name(), a, b)? {
                Broadcast::Same => av
                    .iter()
                    .zip(bv.iter())
                    .map(|(&x, &y)| combine(x, y))
                    .collect(),
                Broadcast::Scalar => {
                    let y = bv[0];
                    av.iter().map(|&x| combine(x, y)).collect()
                }
                Broadcast::Row(n) => av
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| combine(x, bv[i % n]))
                    .collect(),
            };
            Ok((a.shape().to_vec(), out))
        }
        Op::MulElem => {
            want_inputs(op, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() != b.shape() {
                return Err(mismatch(
                    "mul_elementwise",
                    format!("{:?} vs {:?}", a.shape(), b.shape()),
                ));
            }
            let out = a
                .values()
                .iter()
                .zip(b.values().iter())
                .map(|(&x, &y)| x * y)
                .collect();
            Ok((a.shape().to_vec(), out))
        }
        Op::Scale { factor } => {
            want_inputs(op, inputs, 1)?;
            let a = inputs[0];
            Ok((
                a.shape().to_vec(),
                a.values().iter().map(|&x| x * factor).collect(),
            ))
        }
        Op::Concat { axis } => {
            if inputs.is_empty() {
                return Err(mismatch("concat", "no inputs".into()));
            }
            let rank = inputs[0].shape().len();
            if *axis >= rank {
                return Err(attr("concat", format!("axis {axis} out of rank {rank}")));
            }
            let mut cat_dim = 0usize;
            for t in inputs {
                if t.shape().len() != rank {
                    return Err(mismatch("concat", "rank mismatch across inputs".into()));
                }
                for (ax, (&d, &d0)) in t.shape().iter().zip(inputs[0].shape()).enumerate() {
                    if ax != *axis && d != d0 {
                        return Err(mismatch(
                            "concat",
                            format!("axis {ax} differs: {d} vs {d0}"),
                        ));
                    }
                }
                cat_dim += t.shape()[*axis];
            }
            let mut shape = inputs[0].shape().to_vec();
            shape[*axis] = cat_dim;
            let (outer, _, inner) = axis_split(&shape, *axis);
            let mut out = Vec::with_capacity(outer * cat_dim * inner);
            for o in 0..outer {
                for t in inputs {
                    let d = t.shape()[*axis];
                    let block = d * inner;
                    out.extend_from_slice(&t.values()[o * block..(o + 1) * block]);
                }
            }
            Ok((shape, out))
        }
        Op::Mean { axis } | Op::Sum { axis } => {
            want_inputs(op, inputs, 1)?;
            let a = inputs[0];
            if *axis >= a.shape().len() {
                return Err(attr(op.name(), format!("axis {axis} out of rank")));
            }
            let (outer, dim, inner) = axis_split(a.shape(), *axis);
            let av = a.values();
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for j in 0..dim {
                    let base = (o * dim + j) * inner;
                    let dst = &mut out[o * inner..(o + 1) * inner];
                    for (d, &v) in dst.iter_mut().zip(&av[base..base + inner]) {
                        *d += v;
                    }
                }
            }
            if matches!(op, Op::Mean { .. }) {
                let inv = 1.0 / dim as f64;
                for v in &mut out {
                    *v *= inv;
                }
            }
            Ok((reduced_shape(a.shape(), *axis), out))
        }
        Op::Max { axis } => {
            want_inputs(op, inputs, 1)?;
            let a = inputs[0];
            if *axis >= a.shape().len() {
                return Err(attr("max", format!("axis {axis} out of rank")));
            }
            let (outer, dim, inner) = axis_split(a.shape(), *axis);
            let av = a.values();
            let mut out = vec![f64::NEG_INFINITY; outer * inner];
            for o in 0..outer {
                for j in 0..dim {
                    let base = (o * dim + j) * inner;
                    for i in 0..inner {
                        let v = av[base + i];
                        let dst = &mut out[o * inner + i];
                        if v > *dst {
                            *dst = v;
                        }
                    }
                }
            }
            Ok((reduced_shape(a.shape(), *axis), out))
        }
        Op::Relu => {
            want_inputs(op, inputs, 1)?;
            let a = inputs[0];
            Ok((
                a.shape().to_vec(),
                a.values().iter().map(|&x| x.max(0.0)).collect(),
            ))
        }
        Op::Log => {
            want_inputs(op, inputs, 1)?;
            let a = inputs[0];
            Ok((
                a.shape().to_vec(),
                a.values().iter().map(|&x| x.ln()).collect(),
            ))
        }
        Op::Conv1dTemporal {
            stride,
            dilation,
            window,
        } => conv1d_forward(inputs, *stride, *dilation, *window),
        Op::Softmax { axis, temperature } => {
            want_inputs(op, inputs, 1)?;
            if *temperature <= 0.0 {
                return Err(attr(
                    "softmax",
                    format!("temperature must be positive, got {temperature}"),
                ));
            }
            let a = inputs[0];
            if *axis >= a.shape().len() {
                return Err(attr("softmax", format!("axis {axis} out of rank")));
            }
            let (outer, dim, inner) = axis_split(a.shape(), *axis);
            let av = a.values();
            let mut out = vec![0.0; av.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |j: usize| (o * dim + j) * inner + i;
                    let mut hi = f64::NEG_INFINITY;
                    for j in 0..dim {
                        hi = hi.max(av[idx(j)] / temperature);
                    }
                    let mut total = 0.0;
                    for j in 0..dim {
                        let e = (av[idx(j)] / temperature - hi).exp();
                        out[idx(j)] = e;
                        total += e;
                    }
                    for j in 0..dim {
                        out[idx(j)] /= total;
                    }
                }
            }
            Ok((a.shape().to_vec(), out))
        }
        Op::CosineSimilarity { axis } => cosine_forward(inputs, *axis),
        Op::BceMean => {
            want_inputs(op, inputs, 2)?;
            let (p, y) = (inputs[0], inputs[1]);
            if p.shape() != y.shape() {
                return Err(mismatch(
                    "bce_mean",
                    format!("{:?} vs {:?}", p.shape(), y.shape()),
                ));
            }
            let n = p.numel() as f64;
            let mut total = 0.0;
            for (&pi, &yi) in p.values().iter().zip(y.values().iter()) {
                let pc = pi.clamp(BCE_EPS, 1.0 - BCE_EPS);
                total += -(yi * pc.ln() + (1.0 - yi) * (1.0 - pc).ln());
            }
            Ok((vec![], vec![total / n]))
        }
        Op::MseMean => {
            want_inputs(op, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() != b.shape() {
                return Err(mismatch(
                    "mse_mean",
                    format!("{:?} vs {:?}", a.shape(), b.shape()),
                ));
            }
            let n = a.numel() as f64;
            let total: f64 = a
                .values()
                .iter()
                .zip(b.values().iter())
                .map(|(&x, &y)| (x - y) * (x - y))
                .sum();
            Ok((vec![], vec![total / n]))
        }
        Op::Clamp { lo, hi } => {
            want_inputs(op, inputs, 1)?;
            if lo > hi {
                return Err(attr("clamp", format!("lo {lo} > hi {hi}")));
            }
            let a = inputs[0];
            Ok((
                a.shape().to_vec(),
                a.values().iter().map(|&x| x.clamp(*lo, *hi)).collect(),
            ))
        }
        Op::MaskZero { axis, indices } => {
            want_inputs(op, inputs, 1)?;
            let a = inputs[0];
            if *axis >= a.shape().len() {
                return Err(attr("mask_zero", format!("axis {axis} out of rank")));
            }
            let dim = a.shape()[*axis];
            if let Some(&bad) = indices.iter().find(|&&i| i >= dim) {
                return Err(attr(
                    "mask_zero",
                    format!("index {bad} out of bounds for axis {axis} (dim {dim})"),
                ));
            }
            let mut hit = vec![false; dim];
            for &i in indices {
                hit[i] = true;
            }
            let (outer, _, inner) = axis_split(a.shape(), *axis);
            let mut out = a.values().to_vec();
            for o in 0..outer {
                for (j, &h) in hit.iter().enumerate() {
                    if h {
                        let base = (o * dim + j) * inner;
                        out[base..base + inner].fill(0.0);
                    }
                }
            }
            Ok((a.shape().to_vec(), out))
        }
        Op::Reshape { shape } => {
            want_inputs(op, inputs, 1)?;
            let a = inputs[0];
            let numel: usize = shape.iter().product();
            if numel != a.numel() {
                return Err(mismatch(
                    "reshape",
                    format!("{:?} ({} values) -> {:?} ({})", a.shape(), a.numel(), shape, numel),
                ));
            }
            Ok((shape.clone(), a.values().to_vec()))
        }
        Op::Transpose { perm } => {
            want_inputs(op, inputs, 1)?;
            let a = inputs[0];
            let rank = a.shape().len();
            let mut seen = vec![false; rank];
            if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
                return Err(attr(
                    "transpose",
                    format!("perm {perm:?} is not a permutation of 0..{rank}"),
                ));
            }
            let out_shape: Vec<usize> = perm.iter().map(|&p| a.shape()[p]).collect();
            Ok((out_shape.clone(), permute(a.values(), a.shape(), perm, &out_shape)))
        }
    }
}

/// Gather `src` (shape `in_shape`) into the layout given by `perm`.
fn permute(src: &[f64], in_shape: &[usize], perm: &[usize], out_shape: &[usize]) -> Vec<f64> {
    let rank = in_shape.len();
    if rank == 0 {
        return src.to_vec();
    }
    let in_strides = strides_of(in_shape);
    // stride in src for a unit step along each output axis
    let step: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(src.len());
    let mut counter = vec![0usize; rank];
    let mut src_off = 0usize;
    loop {
        out.push(src[src_off]);
        let mut ax = rank;
        loop {
            if ax == 0 {
                return out;
            }
            ax -= 1;
            counter[ax] += 1;
            src_off += step[ax];
            if counter[ax] < out_shape[ax] {
                break;
            }
            src_off -= step[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
}

fn conv1d_shapes(
    inputs: &[&Tensor],
    window: usize,
) -> Result<(usize, usize, usize, usize), TensorError> {
    if inputs.len() != 2 && inputs.len() != 3 {
        return Err(mismatch(
            "conv1d_temporal",
            format!("expected (x, weight[, bias]), got {} inputs", inputs.len()),
        ));
    }
    let x = inputs[0];
    let w = inputs[1];
    let (batch, t_len, c_in) = match *x.shape() {
        [t, c] => (1, t, c),
        [b, t, c] => (b, t, c),
        _ => {
            return Err(mismatch(
                "conv1d_temporal",
                format!("input must be [T,C] or [B,T,C], got {:?}", x.shape()),
            ))
        }
    };
    match *w.shape() {
        [k, ci, co] if k == window && ci == c_in => {
            if let Some(b) = inputs.get(2) {
                if b.shape() != [co] {
                    return Err(mismatch(
                        "conv1d_temporal",
                        format!("bias {:?} vs output channels {co}", b.shape()),
                    ));
                }
            }
            Ok((batch, t_len, c_in, co))
        }
        _ => Err(mismatch(
            "conv1d_temporal",
            format!(
                "weight must be [window={window}, C_in={c_in}, C_out], got {:?}",
                w.shape()
            ),
        )),
    }
}

fn conv1d_forward(
    inputs: &[&Tensor],
    stride: usize,
    dilation: usize,
    window: usize,
) -> Result<(Vec<usize>, Vec<f64>), TensorError> {
    if stride == 0 || dilation == 0 || window == 0 {
        return Err(attr(
            "conv1d_temporal",
            format!("stride/dilation/window must be positive, got {stride}/{dilation}/{window}"),
        ));
    }
    let (batch, t_len, c_in, c_out) = conv1d_shapes(inputs, window)?;
    let x = inputs[0].values();
    let w = inputs[1].values();
    let t_out = t_len.div_ceil(stride);
    let pad_left = ((window - 1) * dilation / 2) as isize;
    let mut out = vec![0.0; batch * t_out * c_out];
    if let Some(b) = inputs.get(2) {
        for chunk in out.chunks_mut(c_out) {
            chunk.copy_from_slice(b.values());
        }
    }
    for bi in 0..batch {
        for to in 0..t_out {
            let dst = &mut out[(bi * t_out + to) * c_out..(bi * t_out + to + 1) * c_out];
            for k in 0..window {
                let ti = (to * stride + k * dilation) as isize - pad_left;
                if ti < 0 || ti >= t_len as isize {
                    continue;
                }
                let xrow = &x[(bi * t_len + ti as usize) * c_in..(bi * t_len + ti as usize + 1) * c_in];
                let wk = &w[k * c_in * c_out..(k + 1) * c_in * c_out];
                for (i, &xv) in xrow.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let wrow = &wk[i * c_out..(i + 1) * c_out];
                    for (d, &wv) in dst.iter_mut().zip(wrow.iter()) {
                        *d += xv * wv;
                    }
                }
            }
        }
    }
    let shape = if inputs[0].shape().len() == 2 {
        vec![t_out, c_out]
    } else {
        vec![batch, t_out, c_out]
    };
    Ok((shape, out))
}

/// Normalise cosine inputs to `[rows, C]` views; `scalar_out` marks the
/// rank-1 pair whose output is a scalar.
fn cosine_views(
    inputs: &[&Tensor],
    axis: usize,
) -> Result<(usize, usize, usize, bool), TensorError> {
    want_inputs(&Op::CosineSimilarity { axis }, inputs, 2)?;
    let (a, b) = (inputs[0], inputs[1]);
    match (a.shape(), b.shape()) {
        ([c1], [c2]) if axis == 0 => {
            if c1 != c2 {
                return Err(mismatch(
                    "cosine_similarity",
                    format!("vector lengths differ: {c1} vs {c2}"),
                ));
            }
            Ok((1, 1, *c1, true))
        }
        ([p, c1], [q, c2]) if axis == 1 => {
            if c1 != c2 {
                return Err(mismatch(
                    "cosine_similarity",
                    format!("feature dims differ: {c1} vs {c2}"),
                ));
            }
            Ok((*p, *q, *c1, false))
        }
        _ => Err(mismatch(
            "cosine_similarity",
            format!(
                "expected two [C] inputs (axis 0) or two [*, C] inputs (axis 1), got {:?} / {:?} axis {axis}",
                a.shape(),
                b.shape()
            ),
        )),
    }
}

fn row_norms(values: &[f64], rows: usize, c: usize) -> Vec<f64> {
    (0..rows)
        .map(|r| {
            values[r * c..(r + 1) * c]
                .iter()
                .map(|&v| v * v)
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// True when both inputs are the same registered node (or share storage):
/// then cos(row, same row) is identically 1 with zero derivative.
fn cosine_self(inputs: &[&Tensor]) -> bool {
    match (inputs[0].node(), inputs[1].node()) {
        (Some(a), Some(b)) if a == b => true,
        _ => Arc::ptr_eq(&inputs[0].storage(), &inputs[1].storage()),
    }
}

fn cosine_forward(inputs: &[&Tensor], axis: usize) -> Result<(Vec<usize>, Vec<f64>), TensorError> {
    let (p, q, c, scalar_out) = cosine_views(inputs, axis)?;
    let (av, bv) = (inputs[0].values(), inputs[1].values());
    let na = row_norms(av, p, c);
    let nb = row_norms(bv, q, c);
    let self_pair = cosine_self(inputs);
    let mut out = vec![0.0; p * q];
    for i in 0..p {
        for j in 0..q {
            out[i * q + j] = if self_pair && i == j {
                1.0
            } else if na[i] == 0.0 || nb[j] == 0.0 {
                0.0
            } else {
                let dot: f64 = av[i * c..(i + 1) * c]
                    .iter()
                    .zip(&bv[j * c..(j + 1) * c])
                    .map(|(&x, &y)| x * y)
                    .sum();
                dot / (na[i] * nb[j])
            };
        }
    }
    let shape = if scalar_out { vec![] } else { vec![p, q] };
    Ok((shape, out))
}

fn cosine_backward(
    inputs: &[&Tensor],
    output: &Tensor,
    grad: &[f64],
    needs: &[bool],
    axis: usize,
) -> Result<Vec<Option<Vec<f64>>>, TensorError> {
    let (p, q, c, _) = cosine_views(inputs, axis)?;
    let (av, bv) = (inputs[0].values(), inputs[1].values());
    let na = row_norms(av, p, c);
    let nb = row_norms(bv, q, c);
    let self_pair = cosine_self(inputs);
    let mut da = needs[0].then(|| vec![0.0; av.len()]);
    let mut db = needs[1].then(|| vec![0.0; bv.len()]);
    for i in 0..p {
        for j in 0..q {
            let g = grad[i * q + j];
            if g == 0.0 || (self_pair && i == j) || na[i] == 0.0 || nb[j] == 0.0 {
                continue;
            }
            let cos = output.values()[i * q + j];
            let arow = &av[i * c..(i + 1) * c];
            let brow = &bv[j * c..(j + 1) * c];
            let denom = na[i] * nb[j];
            if let Some(da) = da.as_mut() {
                let dst = &mut da[i * c..(i + 1) * c];
                let na2 = na[i] * na[i];
                for k in 0..c {
                    dst[k] += g * (brow[k] / denom - cos * arow[k] / na2);
                }
            }
            if let Some(db) = db.as_mut() {
                let dst = &mut db[j * c..(j + 1) * c];
                let nb2 = nb[j] * nb[j];
                for k in 0..c {
                    dst[k] += g * (arow[k] / denom - cos * brow[k] / nb2);
                }
            }
        }
    }
    Ok(vec![da, db])
}

pub(crate) fn backward(
    op: &Op,
    inputs: &[&Tensor],
    output: &Tensor,
    grad: &[f64],
    needs: &[bool],
) -> Result<Vec<Option<Vec<f64>>>, TensorError> {
    match op {
        Op::Matmul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let (av, bv) = (a.values(), b.values());
            let da = needs[0].then(|| {
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    let grow = &grad[i * n..(i + 1) * n];
                    let drow = &mut da[i * k..(i + 1) * k];
                    for (l, d) in drow.iter_mut().enumerate() {
                        let brow = &bv[l * n..(l + 1) * n];
                        *d = grow.iter().zip(brow.iter()).map(|(&g, &bb)| g * bb).sum();
                    }
                }
                da
            });
            let db = needs[1].then(|| {
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    let grow = &grad[i * n..(i + 1) * n];
                    let arow = &av[i * k..(i + 1) * k];
                    for (l, &ail) in arow.iter().enumerate() {
                        if ail == 0.0 {
                            continue;
                        }
                        let drow = &mut db[l * n..(l + 1) * n];
                        for (d, &g) in drow.iter_mut().zip(grow.iter()) {
                            *d += ail * g;
                        }
                    }
                }
                db
            });
            Ok(vec![da, db])
        }
        Op::Add | Op::Sub => {
            let (a, b) = (inputs[0], inputs[1]);
            let sign = if matches!(op, Op::Sub) { -1.0 } else { 1.0 };
            let da = needs[0].then(|| grad.to_vec());
            let db = needs[1].then(|| match broadcast_of(op.name(), a, b).unwrap() {
                Broadcast::Same => grad.iter().map(|&g| sign * g).collect(),
                Broadcast::Scalar => vec![sign * grad.iter().sum::<f64>()],
                Broadcast::Row(n) => {
                    let mut db = vec![0.0; n];
                    for (i, &g) in grad.iter().enumerate() {
                        db[i % n] += sign * g;
                    }
                    db
                }
            });
            Ok(vec![da, db])
        }
        Op::Div => {
            let (a, b) = (inputs[0], inputs[1]);
            let (av, bv) = (a.values(), b.values());
            let form = broadcast_of("div", a, b)?;
            let da = needs[0].then(|| match &form {
                Broadcast::Same => grad
                    .iter()
                    .zip(bv.iter())
                    .map(|(&g, &y)| g / y)
                    .collect(),
                Broadcast::Scalar => grad.iter().map(|&g| g / bv[0]).collect(),
                Broadcast::Row(n) => grad
                    .iter()
                    .enumerate()
                    .map(|(i, &g)| g / bv[i % n])
                    .collect(),
            });
            let db = needs[1].then(|| match &form {
                Broadcast::Same => grad
                    .iter()
                    .zip(av.iter())
                    .zip(bv.iter())
                    .map(|((&g, &x), &y)| -g * x / (y * y))
                    .collect(),
                Broadcast::Scalar => {
                    let y = bv[0];
                    vec![grad
                        .iter()
                        .zip(av.iter())
                        .map(|(&g, &x)| -g * x / (y * y))
                        .sum()]
                }
                Broadcast::Row(n) => {
                    let mut db = vec![0.0; *n];
                    for (i, (&g, &x)) in grad.iter().zip(av.iter()).enumerate() {
                        let y = bv[i % n];
                        db[i % n] += -g * x / (y * y);
                    }
                    db
                }
            });
            Ok(vec![da, db])
        }
        Op::MulElem => {
            let (av, bv) = (inputs[0].values(), inputs[1].values());
            let da = needs[0].then(|| grad.iter().zip(bv.iter()).map(|(&g, &y)| g * y).collect());
            let db = needs[1].then(|| grad.iter().zip(av.iter()).map(|(&g, &x)| g * x).collect());
            Ok(vec![da, db])
        }
        Op::Scale { factor } => Ok(vec![needs[0].then(|| {
            grad.iter().map(|&g| g * factor).collect()
        })]),
        Op::Concat { axis } => {
            let shape = output.shape();
            let (outer, _, inner) = axis_split(shape, *axis);
            let cat_dim = shape[*axis];
            let mut grads: Vec<Option<Vec<f64>>> = inputs
                .iter()
                .zip(needs)
                .map(|(t, &need)| need.then(|| vec![0.0; t.numel()]))
                .collect();
            for o in 0..outer {
                let mut offset = 0usize;
                for (slot, t) in inputs.iter().enumerate() {
                    let d = t.shape()[*axis];
                    let block = d * inner;
                    if let Some(dst) = grads[slot].as_mut() {
                        let src = &grad[(o * cat_dim + offset) * inner..][..block];
                        dst[o * block..(o + 1) * block].copy_from_slice(src);
                    }
                    offset += d;
                }
            }
            Ok(grads)
        }
        Op::Mean { axis } | Op::Sum { axis } => {
            let a = inputs[0];
            let (outer, dim, inner) = axis_split(a.shape(), *axis);
            let scale = if matches!(op, Op::Mean { .. }) {
                1.0 / dim as f64
            } else {
                1.0
            };
            Ok(vec![needs[0].then(|| {
                let mut da = vec![0.0; a.numel()];
                for o in 0..outer {
                    for j in 0..dim {
                        let base = (o * dim + j) * inner;
                        for i in 0..inner {
                            da[base + i] = grad[o * inner + i] * scale;
                        }
                    }
                }
                da
            })])
        }
        Op::Max { axis } => {
            let a = inputs[0];
            let (outer, dim, inner) = axis_split(a.shape(), *axis);
            let av = a.values();
            Ok(vec![needs[0].then(|| {
                let mut da = vec![0.0; a.numel()];
                for o in 0..outer {
                    for i in 0..inner {
                        let mut best = 0usize;
                        let mut best_v = av[(o * dim) * inner + i];
                        for j in 1..dim {
                            let v = av[(o * dim + j) * inner + i];
                            if v > best_v {
                                best_v = v;
                                best = j;
                            }
                        }
                        da[(o * dim + best) * inner + i] = grad[o * inner + i];
                    }
                }
                da
            })])
        }
        Op::Relu => {
            let av = inputs[0].values();
            Ok(vec![needs[0].then(|| {
                grad.iter()
                    .zip(av.iter())
                    .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                    .collect()
            })])
        }
        Op::Log => {
            let av = inputs[0].values();
            Ok(vec![needs[0].then(|| {
                grad.iter().zip(av.iter()).map(|(&g, &x)| g / x).collect()
            })])
        }
        Op::Conv1dTemporal {
            stride,
            dilation,
            window,
        } => conv1d_backward(inputs, grad, needs, *stride, *dilation, *window),
        Op::Softmax { axis, temperature } => {
            let (outer, dim, inner) = axis_split(output.shape(), *axis);
            let s = output.values();
            Ok(vec![needs[0].then(|| {
                let mut da = vec![0.0; s.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * dim + j) * inner + i;
                        let mut dot = 0.0;
                        for j in 0..dim {
                            dot += grad[idx(j)] * s[idx(j)];
                        }
                        for j in 0..dim {
                            da[idx(j)] = s[idx(j)] * (grad[idx(j)] - dot) / temperature;
                        }
                    }
                }
                da
            })])
        }
        Op::CosineSimilarity { axis } => cosine_backward(inputs, output, grad, needs, *axis),
        Op::BceMean => {
            let (p, y) = (inputs[0], inputs[1]);
            let n = p.numel() as f64;
            let g = grad[0];
            let dp = needs[0].then(|| {
                p.values()
                    .iter()
                    .zip(y.values().iter())
                    .map(|(&pi, &yi)| {
                        if pi <= BCE_EPS || pi >= 1.0 - BCE_EPS {
                            0.0
                        } else {
                            g * (-yi / pi + (1.0 - yi) / (1.0 - pi)) / n
                        }
                    })
                    .collect()
            });
            let dy = needs[1].then(|| {
                p.values()
                    .iter()
                    .map(|&pi| {
                        let pc = pi.clamp(BCE_EPS, 1.0 - BCE_EPS);
                        g * (-pc.ln() + (1.0 - pc).ln()) / n
                    })
                    .collect()
            });
            Ok(vec![dp, dy])
        }
        Op::MseMean => {
            let (a, b) = (inputs[0], inputs[1]);
            let n = a.numel() as f64;
            let g = grad[0];
            let diff = |x: f64, y: f64| 2.0 * g * (x - y) / n;
            let da = needs[0].then(|| {
                a.values()
                    .iter()
                    .zip(b.values().iter())
                    .map(|(&x, &y)| diff(x, y))
                    .collect()
            });
            let db = needs[1].then(|| {
                a.values()
                    .iter()
                    .zip(b.values().iter())
                    .map(|(&x, &y)| -diff(x, y))
                    .collect()
            });
            Ok(vec![da, db])
        }
        Op::Clamp { lo, hi } => {
            let av = inputs[0].values();
            Ok(vec![needs[0].then(|| {
                grad.iter()
                    .zip(av.iter())
                    .map(|(&g, &x)| if x > *lo && x < *hi { g } else { 0.0 })
                    .collect()
            })])
        }
        Op::MaskZero { axis, indices } => {
            let a = inputs[0];
            let dim = a.shape()[*axis];
            let mut hit = vec![false; dim];
            for &i in indices {
                hit[i] = true;
            }
            let (outer, _, inner) = axis_split(a.shape(), *axis);
            Ok(vec![needs[0].then(|| {
                let mut da = grad.to_vec();
                for o in 0..outer {
                    for (j, &h) in hit.iter().enumerate() {
                        if h {
                            let base = (o * dim + j) * inner;
                            da[base..base + inner].fill(0.0);
                        }
                    }
                }
                da
            })])
        }
        Op::Reshape { .. } => Ok(vec![needs[0].then(|| grad.to_vec())]),
        Op::Transpose { perm } => {
            let a = inputs[0];
            // inverse permutation scatters the gradient back
            let mut inv = vec![0usize; perm.len()];
            for (i, &p) in perm.iter().enumerate() {
                inv[p] = i;
            }
            let out_shape: Vec<usize> = perm.iter().map(|&p| a.shape()[p]).collect();
            Ok(vec![needs[0].then(|| {
                permute(grad, &out_shape, &inv, a.shape())
            })])
        }
    }
}

fn conv1d_backward(
    inputs: &[&Tensor],
    grad: &[f64],
    needs: &[bool],
    stride: usize,
    dilation: usize,
    window: usize,
) -> Result<Vec<Option<Vec<f64>>>, TensorError> {
    let (batch, t_len, c_in, c_out) = conv1d_shapes(inputs, window)?;
    let x = inputs[0].values();
    let w = inputs[1].values();
    let t_out = t_len.div_ceil(stride);
    let pad_left = ((window - 1) * dilation / 2) as isize;
    let mut dx = needs[0].then(|| vec![0.0; x.len()]);
    let mut dw = needs[1].then(|| vec![0.0; w.len()]);
    let mut db = if inputs.len() == 3 && needs[2] {
        Some(vec![0.0; c_out])
    } else {
        None
    };
    if let Some(db) = db.as_mut() {
        for chunk in grad.chunks(c_out) {
            for (d, &g) in db.iter_mut().zip(chunk.iter()) {
                *d += g;
            }
        }
    }
    for bi in 0..batch {
        for to in 0..t_out {
            let grow = &grad[(bi * t_out + to) * c_out..(bi * t_out + to + 1) * c_out];
            for k in 0..window {
                let ti = (to * stride + k * dilation) as isize - pad_left;
                if ti < 0 || ti >= t_len as isize {
                    continue;
                }
                let xbase = (bi * t_len + ti as usize) * c_in;
                let wk = k * c_in * c_out;
                for i in 0..c_in {
                    let wrow = &w[wk + i * c_out..wk + (i + 1) * c_out];
                    if let Some(dx) = dx.as_mut() {
                        dx[xbase + i] += grow
                            .iter()
                            .zip(wrow.iter())
                            .map(|(&g, &wv)| g * wv)
                            .sum::<f64>();
                    }
                    if let Some(dw) = dw.as_mut() {
                        let xv = x[xbase + i];
                        if xv != 0.0 {
                            let drow = &mut dw[wk + i * c_out..wk + (i + 1) * c_out];
                            for (d, &g) in drow.iter_mut().zip(grow.iter()) {
                                *d += xv * g;
                            }
                        }
                    }
                }
            }
        }
    }
    let mut out = vec![dx, dw];
    if inputs.len() == 3 {
        out.push(db);
    }
    Ok(out)
}
