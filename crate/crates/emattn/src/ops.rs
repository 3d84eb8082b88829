//! Forward tensor operations. Everything here is pure: inputs are borrowed,
//! outputs are freshly allocated, and no routine mutates shared state. The
//! autodiff tape wraps these same routines, so their numeric behaviour is the
//! single source of truth for both inference and training paths.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Reinterpret the buffer under a new shape with the same element count.
pub fn reshape(x: &Tensor, dims: &[usize]) -> Result<Tensor> {
    let shape = Shape::new(dims)?;
    if shape.numel() != x.numel() {
        return Err(Error::Shape(format!(
            "cannot reshape {} ({} elements) to {} ({} elements)",
            x.shape(),
            x.numel(),
            shape,
            shape.numel()
        )));
    }
    Tensor::new(shape, x.data().to_vec())
}

/// Materialized axis permutation: output axis i takes input axis axes[i].
pub fn permute(x: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let rank = x.rank();
    if axes.len() != rank {
        return Err(Error::Shape(format!(
            "permutation {axes:?} has {} axes, tensor has rank {rank}",
            axes.len()
        )));
    }
    let mut seen = vec![false; rank];
    for &a in axes {
        if a >= rank || seen[a] {
            return Err(Error::Shape(format!(
                "{axes:?} is not a permutation of 0..{rank}"
            )));
        }
        seen[a] = true;
    }
    let in_dims = x.dims();
    let in_strides = x.shape().strides();
    let out_dims: Vec<usize> = axes.iter().map(|&a| in_dims[a]).collect();
    // Walking the output row-major, each output axis advances the input
    // buffer by the stride of the axis it was drawn from.
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = x.numel();
    let mut data = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..n {
        data.push(x.data()[src]);
        for axis in (0..rank).rev() {
            idx[axis] += 1;
            src += src_strides[axis];
            if idx[axis] < out_dims[axis] {
                break;
            }
            src -= out_dims[axis] * src_strides[axis];
            idx[axis] = 0;
        }
    }
    Tensor::from_vec(&out_dims, data)
}

/// Concatenate along `axis`. All parts must agree on every other extent.
pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::Shape("concat of zero parts".into()));
    }
    let rank = parts[0].rank();
    if axis >= rank {
        return Err(Error::Shape(format!("concat axis {axis} out of range for rank {rank}")));
    }
    let mut axis_total = 0usize;
    for p in parts {
        if p.rank() != rank {
            return Err(Error::Shape("concat parts differ in rank".into()));
        }
        for (a, (&dp, &d0)) in p.dims().iter().zip(parts[0].dims()).enumerate() {
            if a != axis && dp != d0 {
                return Err(Error::Shape(format!(
                    "concat parts disagree on axis {a}: {dp} vs {d0}"
                )));
            }
        }
        axis_total += p.dims()[axis];
    }
    let mut out_dims = parts[0].dims().to_vec();
    out_dims[axis] = axis_total;
    let outer: usize = out_dims[..axis].iter().product();
    let inner: usize = out_dims[axis + 1..].iter().product();
    let mut data = Vec::with_capacity(outer * axis_total * inner);
    for o in 0..outer {
        for p in parts {
            let pa = p.dims()[axis];
            let start = o * pa * inner;
            data.extend_from_slice(&p.data()[start..start + pa * inner]);
        }
    }
    Tensor::from_vec(&out_dims, data)
}

/// Contiguous sub-range `[start, start+len)` of one axis.
pub fn slice(x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    let rank = x.rank();
    if axis >= rank {
        return Err(Error::Shape(format!("slice axis {axis} out of range for rank {rank}")));
    }
    let extent = x.dims()[axis];
    if len == 0 || start + len > extent {
        return Err(Error::Shape(format!(
            "slice [{start}, {}) out of range for extent {extent}",
            start + len
        )));
    }
    let outer: usize = x.dims()[..axis].iter().product();
    let inner: usize = x.dims()[axis + 1..].iter().product();
    let mut out_dims = x.dims().to_vec();
    out_dims[axis] = len;
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * extent + start) * inner;
        data.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    Tensor::from_vec(&out_dims, data)
}

/// Split an axis into consecutive chunks of the given sizes. The sizes must
/// sum to the axis extent, so `concat(split(x)) == x`.
pub fn split(x: &Tensor, axis: usize, sizes: &[usize]) -> Result<Vec<Tensor>> {
    if axis >= x.rank() {
        return Err(Error::Shape(format!(
            "split axis {axis} out of range for rank {}",
            x.rank()
        )));
    }
    let total: usize = sizes.iter().sum();
    if total != x.dims()[axis] || sizes.iter().any(|&s| s == 0) {
        return Err(Error::Shape(format!(
            "split sizes {sizes:?} do not partition extent {}",
            x.dims()[axis]
        )));
    }
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &s in sizes {
        out.push(slice(x, axis, start, s)?);
        start += s;
    }
    Ok(out)
}

/// Shape both operands broadcast to: trailing axes aligned, each pair of
/// extents equal or one of them 1 (missing leading axes count as 1).
pub fn broadcast_shape(a: &Shape, b: &Shape) -> Result<Shape> {
    let rank = a.rank().max(b.rank());
    let mut dims = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.rank() { 1 } else { a.dims()[i - (rank - a.rank())] };
        let db = if i < rank - b.rank() { 1 } else { b.dims()[i - (rank - b.rank())] };
        if da != db && da != 1 && db != 1 {
            return Err(Error::Shape(format!(
                "cannot broadcast {a} with {b}: axis extents {da} and {db}"
            )));
        }
        dims[i] = da.max(db);
    }
    Shape::new(dims)
}

fn broadcast_strides(operand: &Shape, out: &Shape) -> Vec<usize> {
    // Stride 0 on axes the operand repeats over.
    let rank = out.rank();
    let lead = rank - operand.rank();
    let op_strides = operand.strides();
    let mut strides = vec![0usize; rank];
    for i in lead..rank {
        let d = operand.dims()[i - lead];
        strides[i] = if d == 1 { 0 } else { op_strides[i - lead] };
    }
    strides
}

fn broadcast_zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let out_shape = broadcast_shape(a.shape(), b.shape())?;
    let out_dims = out_shape.dims().to_vec();
    let rank = out_shape.rank();
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let n = out_shape.numel();
    let mut data = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for _ in 0..n {
        data.push(f(a.data()[oa], b.data()[ob]));
        for axis in (0..rank).rev() {
            idx[axis] += 1;
            oa += sa[axis];
            ob += sb[axis];
            if idx[axis] < out_dims[axis] {
                break;
            }
            oa -= out_dims[axis] * sa[axis];
            ob -= out_dims[axis] * sb[axis];
            idx[axis] = 0;
        }
    }
    Tensor::new(out_shape, data)
}

pub fn broadcast_add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    broadcast_zip(a, b, |x, y| x + y)
}

pub fn broadcast_mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    broadcast_zip(a, b, |x, y| x * y)
}

/// Sum `g` down to `target`, undoing a broadcast: leading extra axes and axes
/// the target holds at extent 1 are reduced. This is the adjoint of
/// broadcasting and is deterministic (row-major accumulation order).
pub fn reduce_to_shape(g: &Tensor, target: &Shape) -> Result<Tensor> {
    let rank = g.rank();
    let lead = rank
        .checked_sub(target.rank())
        .ok_or_else(|| Error::Shape(format!("cannot reduce {} to higher rank {}", g.shape(), target)))?;
    for (i, &td) in target.dims().iter().enumerate() {
        let gd = g.dims()[lead + i];
        if td != gd && td != 1 {
            return Err(Error::Shape(format!(
                "cannot reduce {} to {}: axis {} extents {gd} vs {td}",
                g.shape(),
                target,
                lead + i
            )));
        }
    }
    let tstrides = {
        let s = target.strides();
        let mut full = vec![0usize; rank];
        for i in 0..target.rank() {
            full[lead + i] = if target.dims()[i] == 1 { 0 } else { s[i] };
        }
        full
    };
    let mut data = vec![0.0; target.numel()];
    let g_dims = g.dims().to_vec();
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for &v in g.data() {
        data[off] += v;
        for axis in (0..rank).rev() {
            idx[axis] += 1;
            off += tstrides[axis];
            if idx[axis] < g_dims[axis] {
                break;
            }
            off -= g_dims[axis] * tstrides[axis];
            idx[axis] = 0;
        }
    }
    Tensor::new(target.clone(), data)
}

/// Batched matrix product: `a` is (B, m, k), `b` is (B, k, n), output (B, m, n).
/// Leading batch extents must match exactly.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 3 || b.rank() != 3 {
        return Err(Error::Shape(format!(
            "matmul expects rank-3 operands, got {} and {}",
            a.shape(),
            b.shape()
        )));
    }
    let (ba, m, ka) = (a.dims()[0], a.dims()[1], a.dims()[2]);
    let (bb, kb, n) = (b.dims()[0], b.dims()[1], b.dims()[2]);
    if ba != bb {
        return Err(Error::Shape(format!("matmul batch extents differ: {ba} vs {bb}")));
    }
    if ka != kb {
        return Err(Error::Shape(format!("matmul inner extents differ: {ka} vs {kb}")));
    }
    let mut data = vec![0.0; ba * m * n];
    let (ad, bd) = (a.data(), b.data());
    for t in 0..ba {
        let a0 = t * m * ka;
        let b0 = t * ka * n;
        let o0 = t * m * n;
        for i in 0..m {
            for p in 0..ka {
                let av = ad[a0 + i * ka + p];
                let brow = b0 + p * n;
                let orow = o0 + i * n;
                for j in 0..n {
                    data[orow + j] += av * bd[brow + j];
                }
            }
        }
    }
    Tensor::from_vec(&[ba, m, n], data)
}

/// 2-D cross-correlation with zero padding and square kernel.
/// x: (B, Cin, H, W); w: (Cout, Cin, k, k); bias: (Cout).
/// Output extent (H + 2p - k)/stride + 1 must divide exactly.
pub fn conv2d(x: &Tensor, w: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    if x.rank() != 4 || w.rank() != 4 {
        return Err(Error::Shape(format!(
            "conv2d expects rank-4 input and weight, got {} and {}",
            x.shape(),
            w.shape()
        )));
    }
    let (b, cin, h, wd) = (x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]);
    let (cout, wcin, kh, kw) = (w.dims()[0], w.dims()[1], w.dims()[2], w.dims()[3]);
    if kh != kw {
        return Err(Error::Shape(format!("conv2d kernel must be square, got {kh}x{kw}")));
    }
    if wcin != cin {
        return Err(Error::Shape(format!(
            "conv2d weight expects {wcin} input channels, input has {cin}"
        )));
    }
    if bias.rank() != 1 || bias.dims()[0] != cout {
        return Err(Error::Shape(format!(
            "conv2d bias shape {} does not match {cout} output channels",
            bias.shape()
        )));
    }
    if stride == 0 {
        return Err(Error::Shape("conv2d stride must be >= 1".into()));
    }
    let k = kh;
    let out_extent = |n: usize| -> Result<usize> {
        let span = n + 2 * padding;
        if span < k {
            return Err(Error::Shape(format!(
                "conv2d kernel {k} exceeds padded extent {span}"
            )));
        }
        if (span - k) % stride != 0 {
            return Err(Error::Shape(format!(
                "conv2d output extent ({n} + 2*{padding} - {k})/{stride} + 1 is not an integer"
            )));
        }
        Ok((span - k) / stride + 1)
    };
    let oh = out_extent(h)?;
    let ow = out_extent(wd)?;

    let (xd, wdat, bd) = (x.data(), w.data(), bias.data());
    let mut data = vec![0.0; b * cout * oh * ow];
    for bi in 0..b {
        for co in 0..cout {
            let obase = (bi * cout + co) * oh * ow;
            let bval = bd[co];
            for i in 0..oh * ow {
                data[obase + i] = bval;
            }
            for ci in 0..cin {
                let xbase = (bi * cin + ci) * h * wd;
                let wbase = (co * cin + ci) * k * k;
                for p in 0..oh {
                    for q in 0..ow {
                        let mut acc = 0.0;
                        for r in 0..k {
                            let ih = (p * stride + r) as isize - padding as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            let xrow = xbase + ih as usize * wd;
                            let wrow = wbase + r * k;
                            for s in 0..k {
                                let iw = (q * stride + s) as isize - padding as isize;
                                if iw < 0 || iw >= wd as isize {
                                    continue;
                                }
                                acc += xd[xrow + iw as usize] * wdat[wrow + s];
                            }
                        }
                        data[obase + p * ow + q] += acc;
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[b, cout, oh, ow], data)
}

fn expect_rank4(x: &Tensor, what: &str) -> Result<(usize, usize, usize, usize)> {
    if x.rank() != 4 {
        return Err(Error::Shape(format!("{what} expects a rank-4 tensor, got {}", x.shape())));
    }
    Ok((x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]))
}

/// Mean across the width axis: (B, C, H, W) -> (B, C, H, 1).
pub fn avgpool_width(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = expect_rank4(x, "avgpool_width")?;
    let mut data = Vec::with_capacity(b * c * h);
    for row in x.data().chunks_exact(w) {
        data.push(row.iter().sum::<f64>() / w as f64);
    }
    Tensor::from_vec(&[b, c, h, 1], data)
}

/// Mean across the height axis: (B, C, H, W) -> (B, C, 1, W).
pub fn avgpool_height(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = expect_rank4(x, "avgpool_height")?;
    let xd = x.data();
    let mut data = vec![0.0; b * c * w];
    for bc in 0..b * c {
        let xbase = bc * h * w;
        let obase = bc * w;
        for i in 0..h {
            let row = xbase + i * w;
            for j in 0..w {
                data[obase + j] += xd[row + j];
            }
        }
        for j in 0..w {
            data[obase + j] /= h as f64;
        }
    }
    Tensor::from_vec(&[b, c, 1, w], data)
}

/// Global average pool: (B, C, H, W) -> (B, C, 1, 1).
pub fn gap2d(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = expect_rank4(x, "gap2d")?;
    let hw = (h * w) as f64;
    let mut data = Vec::with_capacity(b * c);
    for plane in x.data().chunks_exact(h * w) {
        data.push(plane.iter().sum::<f64>() / hw);
    }
    Tensor::from_vec(&[b, c, 1, 1], data)
}

/// Numerically stable logistic function. The sign split keeps the exponent
/// argument non-positive, so extreme inputs underflow gracefully instead of
/// overflowing: sigmoid(-745) is a positive subnormal, never NaN.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn scale(x: &Tensor, c: f64) -> Tensor {
    x.map(|v| v * c)
}

pub fn sum_all(x: &Tensor) -> Tensor {
    Tensor::scalar(x.data().iter().sum())
}

/// Softmax along one axis with max subtraction, so inputs of any magnitude
/// stay in exp's safe range. Each slice sums to 1.
pub fn softmax_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(Error::Shape(format!(
            "softmax axis {axis} out of range for rank {}",
            x.rank()
        )));
    }
    let n = x.dims()[axis];
    let outer: usize = x.dims()[..axis].iter().product();
    let inner: usize = x.dims()[axis + 1..].iter().product();
    let xd = x.data();
    let mut data = vec![0.0; xd.len()];
    for o in 0..outer {
        for j in 0..inner {
            let at = |i: usize| (o * n + i) * inner + j;
            let mut m = f64::NEG_INFINITY;
            for i in 0..n {
                m = m.max(xd[at(i)]);
            }
            let mut denom = 0.0;
            for i in 0..n {
                let e = (xd[at(i)] - m).exp();
                data[at(i)] = e;
                denom += e;
            }
            for i in 0..n {
                data[at(i)] /= denom;
            }
        }
    }
    Tensor::new(x.shape().clone(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // ---- independent loop oracles -------------------------------------

    fn oracle_matmul(a: &Tensor, b: &Tensor) -> Tensor {
        let (bt, m, k) = (a.dims()[0], a.dims()[1], a.dims()[2]);
        let n = b.dims()[2];
        Tensor::from_fn(&[bt, m, n], |idx| {
            let (t, i, j) = (idx[0], idx[1], idx[2]);
            (0..k).map(|p| a.at(&[t, i, p]) * b.at(&[t, p, j])).sum()
        })
    }

    fn oracle_conv2d(x: &Tensor, w: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Tensor {
        let (b, cin, h, wd) = (x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]);
        let (cout, k) = (w.dims()[0], w.dims()[2]);
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        Tensor::from_fn(&[b, cout, oh, ow], |idx| {
            let (bi, co, p, q) = (idx[0], idx[1], idx[2], idx[3]);
            let mut acc = bias.at(&[co]);
            for ci in 0..cin {
                for r in 0..k {
                    for s in 0..k {
                        let ih = (p * stride + r) as isize - pad as isize;
                        let iw = (q * stride + s) as isize - pad as isize;
                        if ih >= 0 && (ih as usize) < h && iw >= 0 && (iw as usize) < wd {
                            acc += x.at(&[bi, ci, ih as usize, iw as usize]) * w.at(&[co, ci, r, s]);
                        }
                    }
                }
            }
            acc
        })
    }

    fn oracle_broadcast(a: &Tensor, b: &Tensor, f: fn(f64, f64) -> f64) -> Tensor {
        // Tile both operands to the full output shape, then zip elementwise.
        let out = broadcast_shape(a.shape(), b.shape()).unwrap();
        let tile = |t: &Tensor| -> Tensor {
            Tensor::from_fn(out.dims(), |idx| {
                let lead = out.rank() - t.rank();
                let src: Vec<usize> = idx[lead..]
                    .iter()
                    .zip(t.dims())
                    .map(|(&i, &d)| if d == 1 { 0 } else { i })
                    .collect();
                t.at(&src)
            })
        };
        let ta = tile(a);
        let tb = tile(b);
        Tensor::new(
            out,
            ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect(),
        )
        .unwrap()
    }

    fn seeded(dims: &[usize], seed: u64) -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(dims, |_| rng.gen_range(-2.0..2.0))
    }

    fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
        assert_eq!(a.dims(), b.dims());
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    // ---- reshape / permute / concat / split ----------------------------

    #[test]
    fn reshape_reorders_nothing() {
        let x = Tensor::from_vec(&[2, 3], (1..=6).map(|v| v as f64).collect()).unwrap();
        let y = reshape(&x, &[3, 2]).unwrap();
        assert_eq!(y.data(), x.data());
        assert_eq!(y.dims(), &[3, 2]);
    }

    #[test]
    fn reshape_rejects_count_mismatch() {
        let x = Tensor::zeros(&[2, 3]);
        assert!(reshape(&x, &[4, 2]).is_err());
    }

    #[test]
    fn permute_transposes() {
        let x = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = permute(&x, &[1, 0]).unwrap();
        assert_eq!(y.data(), &[1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn permute_identity_is_noop() {
        let x = seeded(&[2, 3, 4], 1);
        let y = permute(&x, &[0, 1, 2]).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn permute_rejects_non_permutation() {
        let x = Tensor::zeros(&[2, 3, 4]);
        assert!(permute(&x, &[0, 0, 1]).is_err());
        assert!(permute(&x, &[0, 1]).is_err());
        assert!(permute(&x, &[0, 1, 3]).is_err());
    }

    #[test]
    fn permute_matches_index_map() {
        let x = seeded(&[2, 3, 4, 5], 2);
        let y = permute(&x, &[2, 0, 3, 1]).unwrap();
        assert_eq!(y.dims(), &[4, 2, 5, 3]);
        for a in 0..4 {
            for b in 0..2 {
                for c in 0..5 {
                    for d in 0..3 {
                        assert_eq!(y.at(&[a, b, c, d]), x.at(&[b, d, a, c]));
                    }
                }
            }
        }
    }

    #[test]
    fn concat_single_part_is_identity() {
        let x = seeded(&[2, 3], 3);
        assert_eq!(concat(&[&x], 1).unwrap(), x);
    }

    #[test]
    fn concat_rejects_mismatched_parts() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[3, 3]);
        assert!(concat(&[&a, &b], 1).is_err());
    }

    #[test]
    fn split_rejects_bad_partition() {
        let x = Tensor::zeros(&[2, 5]);
        assert!(split(&x, 1, &[2, 2]).is_err());
        assert!(split(&x, 1, &[5, 0]).is_err());
        assert!(split(&x, 2, &[5]).is_err());
    }

    #[test]
    fn concat_then_split_roundtrips_midaxis() {
        let a = seeded(&[2, 3, 2], 4);
        let b = seeded(&[2, 1, 2], 5);
        let cat = concat(&[&a, &b], 1).unwrap();
        let parts = split(&cat, 1, &[3, 1]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    // ---- broadcast ------------------------------------------------------

    #[test]
    fn broadcast_add_channel_bias() {
        let x = Tensor::from_fn(&[1, 2, 2, 2], |i| (i[1] * 4 + i[2] * 2 + i[3]) as f64);
        let bias = Tensor::from_vec(&[1, 2, 1, 1], vec![10.0, 20.0]).unwrap();
        let y = broadcast_add(&x, &bias).unwrap();
        assert_eq!(y.at(&[0, 0, 1, 1]), 3.0 + 10.0);
        assert_eq!(y.at(&[0, 1, 0, 1]), 5.0 + 20.0);
    }

    #[test]
    fn broadcast_mul_with_ones_is_identity() {
        let x = seeded(&[2, 3, 4], 6);
        let ones = Tensor::ones(&[3, 4]);
        assert_eq!(broadcast_mul(&x, &ones).unwrap(), x);
    }

    #[test]
    fn broadcast_rejects_incompatible() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 4]);
        assert!(broadcast_add(&a, &b).is_err());
    }

    #[test]
    fn reduce_to_shape_inverts_broadcast_of_sum() {
        let g = Tensor::from_fn(&[2, 3, 2], |i| (i[0] * 6 + i[1] * 2 + i[2]) as f64);
        let r = reduce_to_shape(&g, &Shape::of(&[3, 1])).unwrap();
        // Axis 0 (lead) and axis 2 (target extent 1) are summed.
        for j in 0..3 {
            let expect: f64 = (0..2)
                .flat_map(|b| (0..2).map(move |k| (b * 6 + j * 2 + k) as f64))
                .sum();
            assert_eq!(r.at(&[j, 0]), expect);
        }
    }

    // ---- matmul ---------------------------------------------------------

    #[test]
    fn matmul_identity_left_and_right() {
        let eye = Tensor::from_fn(&[1, 3, 3], |i| if i[1] == i[2] { 1.0 } else { 0.0 });
        let x = seeded(&[1, 3, 3], 7);
        assert_eq!(matmul(&eye, &x).unwrap(), x);
        assert_eq!(matmul(&x, &eye).unwrap(), x);
    }

    #[test]
    fn matmul_rejects_mismatches() {
        let a = Tensor::zeros(&[1, 2, 3]);
        let b = Tensor::zeros(&[1, 4, 2]);
        assert!(matmul(&a, &b).is_err());
        let c = Tensor::zeros(&[2, 3, 2]);
        assert!(matmul(&a, &c).is_err());
        let d = Tensor::zeros(&[2, 3]);
        assert!(matmul(&a, &d).is_err());
    }

    // ---- conv2d ---------------------------------------------------------

    #[test]
    fn conv2d_identity_1x1_kernel() {
        let x = seeded(&[2, 3, 4, 5], 8);
        let w = Tensor::from_fn(&[3, 3, 1, 1], |i| if i[0] == i[1] { 1.0 } else { 0.0 });
        let b = Tensor::zeros(&[3]);
        let y = conv2d(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv2d_ones_kernel_counts_padded_neighbourhood() {
        // Constant input 1, 3x3 all-ones kernel, pad 1: interior sees 9 cells,
        // edges 6, corners 4. Bias 0.5 shifts everything.
        let x = Tensor::ones(&[1, 1, 4, 4]);
        let w = Tensor::ones(&[1, 1, 3, 3]);
        let b = Tensor::from_vec(&[1], vec![0.5]).unwrap();
        let y = conv2d(&x, &w, &b, 1, 1).unwrap();
        assert_eq!(y.at(&[0, 0, 1, 1]), 9.5);
        assert_eq!(y.at(&[0, 0, 0, 1]), 6.5);
        assert_eq!(y.at(&[0, 0, 0, 0]), 4.5);
        assert_eq!(y.at(&[0, 0, 3, 3]), 4.5);
    }

    #[test]
    fn conv2d_rejects_inexact_output_extent() {
        let x = Tensor::zeros(&[1, 1, 5, 5]);
        let w = Tensor::zeros(&[1, 1, 2, 2]);
        let b = Tensor::zeros(&[1]);
        // (5 - 2) / 2 is not an integer.
        assert!(conv2d(&x, &w, &b, 2, 0).is_err());
        // Kernel larger than padded extent.
        let wbig = Tensor::zeros(&[1, 1, 7, 7]);
        assert!(conv2d(&x, &wbig, &b, 1, 0).is_err());
    }

    #[test]
    fn conv2d_matches_loop_oracle_over_seeded_cases() {
        let cases = [
            (1, 1, 1, 3, 3, 1, 1, 0),
            (2, 3, 4, 5, 5, 3, 1, 1),
            (1, 2, 2, 4, 6, 3, 1, 1),
            (2, 2, 3, 7, 7, 3, 2, 1),
            (1, 4, 1, 6, 4, 1, 1, 0),
            (1, 1, 2, 8, 8, 5, 1, 2),
        ];
        for (t, &(b, cin, cout, h, wd, k, stride, pad)) in cases.iter().enumerate() {
            let x = seeded(&[b, cin, h, wd], 100 + t as u64);
            let w = seeded(&[cout, cin, k, k], 200 + t as u64);
            let bias = seeded(&[cout], 300 + t as u64);
            let got = conv2d(&x, &w, &bias, stride, pad).unwrap();
            let want = oracle_conv2d(&x, &w, &bias, stride, pad);
            assert!(
                max_abs_diff(&got, &want) <= 1e-12,
                "conv2d diverges from loop oracle on case {t}"
            );
        }
    }

    // ---- pooling ---------------------------------------------------------

    #[test]
    fn pools_average_the_right_axis() {
        let x = Tensor::from_vec(&[1, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let pw = avgpool_width(&x).unwrap();
        assert_eq!(pw.dims(), &[1, 1, 2, 1]);
        assert_eq!(pw.data(), &[2.0, 5.0]);
        let ph = avgpool_height(&x).unwrap();
        assert_eq!(ph.dims(), &[1, 1, 1, 3]);
        assert_eq!(ph.data(), &[2.5, 3.5, 4.5]);
        let g = gap2d(&x).unwrap();
        assert_eq!(g.dims(), &[1, 1, 1, 1]);
        assert_eq!(g.item(), 3.5);
    }

    #[test]
    fn gap_equals_pool_composition() {
        let x = seeded(&[2, 3, 4, 5], 9);
        let direct = gap2d(&x).unwrap();
        let composed = avgpool_height(&avgpool_width(&x).unwrap()).unwrap();
        assert!(max_abs_diff(&direct, &composed) <= 1e-12);
    }

    #[test]
    fn avgpool_width_is_invariant_to_column_reversal() {
        let x = seeded(&[1, 2, 3, 4], 10);
        let flipped = Tensor::from_fn(x.dims(), |i| x.at(&[i[0], i[1], i[2], 3 - i[3]]));
        assert!(max_abs_diff(&avgpool_width(&x).unwrap(), &avgpool_width(&flipped).unwrap()) <= 1e-12);
    }

    // ---- sigmoid / softmax -----------------------------------------------

    #[test]
    fn sigmoid_midpoint_and_symmetry() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        for &x in &[0.1, 1.0, 3.5, 17.0, 30.0] {
            let s = sigmoid_scalar(x) + sigmoid_scalar(-x);
            assert!((s - 1.0).abs() <= 1e-15, "sigma(x)+sigma(-x) = {s} at x={x}");
        }
    }

    #[test]
    fn sigmoid_survives_extreme_negative_input() {
        let v = sigmoid_scalar(-745.0);
        assert!(v > 0.0 && v <= 1e-300, "sigmoid(-745) = {v}");
        assert!(sigmoid_scalar(745.0).is_finite());
    }

    #[test]
    fn sigmoid_stays_inside_open_interval_on_working_range() {
        for i in -300..=300 {
            let v = sigmoid_scalar(i as f64 * 0.1);
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn softmax_uniform_and_known_ratio() {
        let x = Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap();
        let s = softmax_axis(&x, 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let x = Tensor::from_vec(&[2], vec![0.0, 3f64.ln()]).unwrap();
        let s = softmax_axis(&x, 0).unwrap();
        assert!((s.data()[0] - 0.25).abs() <= 1e-15);
        assert!((s.data()[1] - 0.75).abs() <= 1e-15);
    }

    #[test]
    fn softmax_shift_invariance_and_large_inputs() {
        let x = Tensor::from_vec(&[3], vec![700.0, 701.0, 699.0]).unwrap();
        let s = softmax_axis(&x, 0).unwrap();
        assert!(s.is_finite());
        let shifted = softmax_axis(&x.map(|v| v - 700.0), 0).unwrap();
        assert!(max_abs_diff(&s, &shifted) <= 1e-12);
        let total: f64 = s.data().iter().sum();
        assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn softmax_along_inner_axis_of_matrix() {
        let x = Tensor::from_vec(&[2, 2], vec![1.0, 1.0, 0.0, 3f64.ln()]).unwrap();
        let s = softmax_axis(&x, 1).unwrap();
        assert_eq!(s.at(&[0, 0]), 0.5);
        assert!((s.at(&[1, 1]) - 0.75).abs() <= 1e-15);
    }

    // ---- misc -------------------------------------------------------------

    #[test]
    fn relu_scale_sum_basics() {
        let x = Tensor::from_vec(&[4], vec![-1.0, 0.0, 2.0, -0.5]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0, 0.0]);
        assert_eq!(scale(&x, -2.0).data(), &[2.0, 0.0, -4.0, 1.0]);
        assert_eq!(sum_all(&x).item(), 0.5);
    }

    // ---- property suites ---------------------------------------------------

    fn shape_strategy(max_rank: usize) -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(1usize..=4, 1..=max_rank)
    }

    fn tensor_strategy(max_rank: usize) -> impl Strategy<Value = Tensor> {
        shape_strategy(max_rank).prop_flat_map(|dims| {
            let n: usize = dims.iter().product();
            prop::collection::vec(-5.0f64..5.0, n)
                .prop_map(move |data| Tensor::from_vec(&dims, data).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn prop_reshape_roundtrip(t in tensor_strategy(4)) {
            let flat = reshape(&t, &[t.numel()]).unwrap();
            let back = reshape(&flat, t.dims()).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn prop_permute_inverse_roundtrip(t in tensor_strategy(4), perm_seed in 0usize..24) {
            let rank = t.rank();
            let mut axes: Vec<usize> = (0..rank).collect();
            // Fisher-Yates driven by the integer seed.
            let mut s = perm_seed;
            for i in (1..rank).rev() {
                let j = s % (i + 1);
                axes.swap(i, j);
                s /= i + 1;
            }
            let fwd = permute(&t, &axes).unwrap();
            let mut inv = vec![0usize; rank];
            for (i, &a) in axes.iter().enumerate() { inv[a] = i; }
            let back = permute(&fwd, &inv).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn prop_concat_split_roundtrip(t in tensor_strategy(4), axis_pick in 0usize..4, cut in 0usize..3) {
            let axis = axis_pick % t.rank();
            let extent = t.dims()[axis];
            if extent >= 2 {
                let first = 1 + cut % (extent - 1);
                let parts = split(&t, axis, &[first, extent - first]).unwrap();
                let refs: Vec<&Tensor> = parts.iter().collect();
                let back = concat(&refs, axis).unwrap();
                prop_assert_eq!(back, t);
            }
        }

        #[test]
        fn prop_broadcast_matches_tiling_oracle(
            dims in prop::collection::vec(1usize..=4, 1..=4),
            mask_a in prop::collection::vec(prop::bool::ANY, 4),
            mask_b in prop::collection::vec(prop::bool::ANY, 4),
            seed in 0u64..1000,
        ) {
            // Each operand keeps an axis extent or squashes it to 1.
            let da: Vec<usize> = dims.iter().zip(&mask_a).map(|(&d, &m)| if m { d } else { 1 }).collect();
            let db: Vec<usize> = dims.iter().zip(&mask_b).map(|(&d, &m)| if m { d } else { 1 }).collect();
            let a = seeded(&da, seed);
            let b = seeded(&db, seed + 7919);
            let got = broadcast_mul(&a, &b).unwrap();
            let want = oracle_broadcast(&a, &b, |x, y| x * y);
            prop_assert!(max_abs_diff(&got, &want) <= 1e-12);
            let got = broadcast_add(&a, &b).unwrap();
            let want = oracle_broadcast(&a, &b, |x, y| x + y);
            prop_assert!(max_abs_diff(&got, &want) <= 1e-12);
        }

        #[test]
        fn prop_matmul_matches_loop_oracle(
            bt in 1usize..=3, m in 1usize..=5, k in 1usize..=5, n in 1usize..=5, seed in 0u64..1000
        ) {
            let a = seeded(&[bt, m, k], seed);
            let b = seeded(&[bt, k, n], seed + 13);
            let got = matmul(&a, &b).unwrap();
            let want = oracle_matmul(&a, &b);
            prop_assert!(max_abs_diff(&got, &want) <= 1e-12);
        }

        #[test]
        fn prop_pools_match_mean_oracle(t in tensor_strategy(4).prop_filter("rank 4", |t| t.rank() == 4)) {
            let (b, c, h, w) = (t.dims()[0], t.dims()[1], t.dims()[2], t.dims()[3]);
            let pw = avgpool_width(&t).unwrap();
            let ph = avgpool_height(&t).unwrap();
            for bi in 0..b {
                for ci in 0..c {
                    for i in 0..h {
                        let mean: f64 = (0..w).map(|j| t.at(&[bi, ci, i, j])).sum::<f64>() / w as f64;
                        prop_assert!((pw.at(&[bi, ci, i, 0]) - mean).abs() <= 1e-12);
                    }
                    for j in 0..w {
                        let mean: f64 = (0..h).map(|i| t.at(&[bi, ci, i, j])).sum::<f64>() / h as f64;
                        prop_assert!((ph.at(&[bi, ci, 0, j]) - mean).abs() <= 1e-12);
                    }
                }
            }
        }

        #[test]
        fn prop_softmax_slices_sum_to_one(t in tensor_strategy(3), axis_pick in 0usize..3) {
            let axis = axis_pick % t.rank();
            let s = softmax_axis(&t, axis).unwrap();
            prop_assert!(s.data().iter().all(|&v| v > 0.0 && v <= 1.0));
            let summed = reduce_to_shape(&s, &{
                let mut dims = t.dims().to_vec();
                dims[axis] = 1;
                Shape::of(&dims)
            }).unwrap();
            for &v in summed.data() {
                prop_assert!((v - 1.0).abs() <= 1e-12);
            }
        }
    }
}
