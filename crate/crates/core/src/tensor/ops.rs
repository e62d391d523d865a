//! Elementwise, reduction and shape operations with their adjoints.

use super::{check_finite, lit, numel, strides, Element, Tensor};

use rand::Rng;

/// Broadcast result shape, numpy alignment rules (right-aligned, extent 1
/// stretches). Panics on incompatible extents.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let ea = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let eb = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (ea, eb) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => panic!("cannot broadcast shapes {a:?} and {b:?}"),
        };
    }
    out
}

/// Flat-index map from every output position into a (possibly broadcast)
/// input of shape `inp` inside output shape `out`.
fn broadcast_map(out: &[usize], inp: &[usize]) -> Vec<usize> {
    let n = numel(out);
    let rank = out.len();
    let offset = rank - inp.len();
    let in_strides = strides(inp);
    // Stride 0 on broadcast axes.
    let mut eff = vec![0usize; rank];
    for i in 0..rank {
        if i >= offset && inp[i - offset] != 1 {
            eff[i] = in_strides[i - offset];
        }
    }
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut cur = 0usize;
    for _ in 0..n {
        map.push(cur);
        // Odometer increment.
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            cur += eff[ax];
            if idx[ax] < out[ax] {
                break;
            }
            cur -= eff[ax] * out[ax];
            idx[ax] = 0;
        }
    }
    map
}

enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl<T: Element> Tensor<T> {
    fn binary(&self, other: &Tensor<T>, kind: BinKind, op: &str) -> Tensor<T> {
        let same = self.shape() == other.shape();
        let out_shape = if same {
            self.shape().to_vec()
        } else {
            broadcast_shape(self.shape(), other.shape())
        };
        let (map_a, map_b) = if same {
            (None, None)
        } else {
            (
                Some(broadcast_map(&out_shape, self.shape())),
                Some(broadcast_map(&out_shape, other.shape())),
            )
        };
        let av = self.values();
        let bv = other.values();
        let n = numel(&out_shape);
        let mut data = Vec::with_capacity(n);
        let f = |x: T, y: T| match kind {
            BinKind::Add => x + y,
            BinKind::Sub => x - y,
            BinKind::Mul => x * y,
            BinKind::Div => x / y,
        };
        match (&map_a, &map_b) {
            (None, None) => data.extend(av.iter().zip(bv.iter()).map(|(&x, &y)| f(x, y))),
            (Some(ma), Some(mb)) => data.extend((0..n).map(|i| f(av[ma[i]], bv[mb[i]]))),
            _ => unreachable!(),
        }
        drop(av);
        drop(bv);

        let a = self.clone();
        let b = other.clone();
        let kind_flag = match kind {
            BinKind::Add => 0u8,
            BinKind::Sub => 1,
            BinKind::Mul => 2,
            BinKind::Div => 3,
        };
        Tensor::from_op(op, out_shape, data, vec![a.clone(), b.clone()], move |g| {
            let idx_a = |i: usize| map_a.as_ref().map_or(i, |m| m[i]);
            let idx_b = |i: usize| map_b.as_ref().map_or(i, |m| m[i]);
            match kind_flag {
                0 => {
                    a.with_grad_mut(|da| for i in 0..g.len() { da[idx_a(i)] = da[idx_a(i)] + g[i]; });
                    b.with_grad_mut(|db| for i in 0..g.len() { db[idx_b(i)] = db[idx_b(i)] + g[i]; });
                }
                1 => {
                    a.with_grad_mut(|da| for i in 0..g.len() { da[idx_a(i)] = da[idx_a(i)] + g[i]; });
                    b.with_grad_mut(|db| for i in 0..g.len() { db[idx_b(i)] = db[idx_b(i)] - g[i]; });
                }
                2 => {
                    let bv = b.values();
                    a.with_grad_mut(|da| for i in 0..g.len() { da[idx_a(i)] = da[idx_a(i)] + g[i] * bv[idx_b(i)]; });
                    drop(bv);
                    let av = a.values();
                    b.with_grad_mut(|db| for i in 0..g.len() { db[idx_b(i)] = db[idx_b(i)] + g[i] * av[idx_a(i)]; });
                }
                _ => {
                    let av = a.values();
                    let bv = b.values();
                    a.with_grad_mut(|da| for i in 0..g.len() { da[idx_a(i)] = da[idx_a(i)] + g[i] / bv[idx_b(i)]; });
                    b.with_grad_mut(|db| {
                        for i in 0..g.len() {
                            let bb = bv[idx_b(i)];
                            db[idx_b(i)] = db[idx_b(i)] - g[i] * av[idx_a(i)] / (bb * bb);
                        }
                    });
                }
            }
        })
    }

    pub fn add(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary(other, BinKind::Add, "add")
    }

    pub fn sub(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary(other, BinKind::Sub, "sub")
    }

    pub fn mul(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary(other, BinKind::Mul, "mul")
    }

    pub fn div(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary(other, BinKind::Div, "div")
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        let data = self.values().iter().map(|&x| x + c).collect();
        let a = self.clone();
        Tensor::from_op("add_scalar", self.shape().to_vec(), data, vec![a.clone()], move |g| {
            a.with_grad_mut(|da| for i in 0..g.len() { da[i] = da[i] + g[i]; });
        })
    }

    pub fn mul_scalar(&self, c: T) -> Tensor<T> {
        let data = self.values().iter().map(|&x| x * c).collect();
        let a = self.clone();
        Tensor::from_op("mul_scalar", self.shape().to_vec(), data, vec![a.clone()], move |g| {
            a.with_grad_mut(|da| for i in 0..g.len() { da[i] = da[i] + g[i] * c; });
        })
    }

    pub fn neg(&self) -> Tensor<T> {
        self.mul_scalar(-T::one())
    }

    pub fn exp(&self) -> Tensor<T> {
        let data: Vec<T> = self.values().iter().map(|x| x.exp()).collect();
        let a = self.clone();
        let y = data.clone();
        Tensor::from_op("exp", self.shape().to_vec(), data, vec![a.clone()], move |g| {
            a.with_grad_mut(|da| for i in 0..g.len() { da[i] = da[i] + g[i] * y[i]; });
        })
    }

    pub fn ln(&self) -> Tensor<T> {
        let data: Vec<T> = self.values().iter().map(|x| x.ln()).collect();
        let a = self.clone();
        Tensor::from_op("ln", self.shape().to_vec(), data, vec![a.clone()], move |g| {
            let xv = a.values();
            a.with_grad_mut(|da| for i in 0..g.len() { da[i] = da[i] + g[i] / xv[i]; });
        })
    }

    pub fn sqrt(&self) -> Tensor<T> {
        let data: Vec<T> = self.values().iter().map(|x| x.sqrt()).collect();
        let a = self.clone();
        let y = data.clone();
        let half = lit::<T>(0.5);
        Tensor::from_op("sqrt", self.shape().to_vec(), data, vec![a.clone()], move |g| {
            a.with_grad_mut(|da| for i in 0..g.len() { da[i] = da[i] + g[i] * half / y[i]; });
        })
    }

    /// Elementwise power with a constant exponent.
    pub fn powf_const(&self, p: T) -> Tensor<T> {
        let data: Vec<T> = self.values().iter().map(|x| x.powf(p)).collect();
        let a = self.clone();
        Tensor::from_op("powf_const", self.shape().to_vec(), data, vec![a.clone()], move |g| {
            let xv = a.values();
            a.with_grad_mut(|da| {
                for i in 0..g.len() {
                    da[i] = da[i] + g[i] * p * xv[i].powf(p - T::one());
                }
            });
        })
    }

    pub fn relu(&self) -> Tensor<T> {
        let data: Vec<T> = self.values().iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect();
        let a = self.clone();
        Tensor::from_op("relu", self.shape().to_vec(), data, vec![a.clone()], move |g| {
            let xv = a.values();
            a.with_grad_mut(|da| {
                for i in 0..g.len() {
                    if xv[i] > T::zero() {
                        da[i] = da[i] + g[i];
                    }
                }
            });
        })
    }

    /// Numerically stable logistic; outputs lie strictly in (0, 1).
    pub fn sigmoid(&self) -> Tensor<T> {
        let data: Vec<T> = self
            .values()
            .iter()
            .map(|&x| {
                if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                }
            })
            .collect();
        let a = self.clone();
        let y = data.clone();
        Tensor::from_op("sigmoid", self.shape().to_vec(), data, vec![a.clone()], move |g| {
            a.with_grad_mut(|da| {
                for i in 0..g.len() {
                    da[i] = da[i] + g[i] * y[i] * (T::one() - y[i]);
                }
            });
        })
    }

    pub fn sum_all(&self) -> Tensor<T> {
        let s = self.values().iter().fold(T::zero(), |acc, &x| acc + x);
        let a = self.clone();
        Tensor::from_op("sum_all", vec![], vec![s], vec![a.clone()], move |g| {
            let go = g[0];
            a.with_grad_mut(|da| for v in da.iter_mut() { *v = *v + go; });
        })
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = lit::<T>(self.len() as f64);
        self.sum_all().mul_scalar(T::one() / n)
    }

    /// Arithmetic mean along `axis`; gradient scatters 1/extent back.
    pub fn reduce_mean_axis(&self, axis: usize, keep: bool) -> Tensor<T> {
        let shape = self.shape();
        assert!(axis < shape.len(), "axis {axis} out of range for shape {shape:?}");
        let ext = shape[axis];
        let pre: usize = shape[..axis].iter().product();
        let post: usize = shape[axis + 1..].iter().product();
        let inv = T::one() / lit::<T>(ext as f64);
        let xv = self.values();
        let mut data = vec![T::zero(); pre * post];
        for p in 0..pre {
            for i in 0..ext {
                let base = (p * ext + i) * post;
                for q in 0..post {
                    data[p * post + q] = data[p * post + q] + xv[base + q];
                }
            }
        }
        for v in data.iter_mut() {
            *v = *v * inv;
        }
        drop(xv);
        let out_shape = reduced_shape(shape, axis, keep);
        let a = self.clone();
        Tensor::from_op("reduce_mean_axis", out_shape, data, vec![a.clone()], move |g| {
            a.with_grad_mut(|da| {
                for p in 0..pre {
                    for i in 0..ext {
                        let base = (p * ext + i) * post;
                        for q in 0..post {
                            da[base + q] = da[base + q] + g[p * post + q] * inv;
                        }
                    }
                }
            });
        })
    }

    /// Maximum along `axis`; the gradient routes entirely to the first
    /// maximal element (lowest flat index on ties).
    pub fn reduce_max_axis(&self, axis: usize, keep: bool) -> Tensor<T> {
        let shape = self.shape();
        assert!(axis < shape.len(), "axis {axis} out of range for shape {shape:?}");
        let ext = shape[axis];
        let pre: usize = shape[..axis].iter().product();
        let post: usize = shape[axis + 1..].iter().product();
        let xv = self.values();
        let mut data = Vec::with_capacity(pre * post);
        let mut arg = Vec::with_capacity(pre * post);
        for p in 0..pre {
            for q in 0..post {
                let mut best = xv[(p * ext) * post + q];
                let mut best_i = (p * ext) * post + q;
                for i in 1..ext {
                    let fi = (p * ext + i) * post + q;
                    if xv[fi] > best {
                        best = xv[fi];
                        best_i = fi;
                    }
                }
                data.push(best);
                arg.push(best_i);
            }
        }
        drop(xv);
        let out_shape = reduced_shape(shape, axis, keep);
        let a = self.clone();
        Tensor::from_op("reduce_max_axis", out_shape, data, vec![a.clone()], move |g| {
            a.with_grad_mut(|da| {
                for (o, &fi) in arg.iter().enumerate() {
                    da[fi] = da[fi] + g[o];
                }
            });
        })
    }

    /// Axis permutation; output value at the permuted index equals the input
    /// value, and the gradient applies the inverse permutation.
    pub fn permute(&self, order: &[usize]) -> Tensor<T> {
        let shape = self.shape();
        assert_eq!(order.len(), shape.len(), "permutation length mismatch: {order:?} for rank {}", shape.len());
        let mut seen = vec![false; order.len()];
        for &ax in order {
            assert!(ax < order.len() && !seen[ax], "invalid permutation {order:?}");
            seen[ax] = true;
        }
        let out_shape: Vec<usize> = order.iter().map(|&ax| shape[ax]).collect();
        let in_strides = strides(shape);
        let out_strides = strides(&out_shape);
        let n = self.len();
        // map[in_flat] = out_flat
        let mut map = vec![0usize; n];
        let mut idx = vec![0usize; shape.len()];
        for (ii, m) in map.iter_mut().enumerate() {
            let mut oi = 0;
            for (k, &ax) in order.iter().enumerate() {
                oi += idx[ax] * out_strides[k];
            }
            *m = oi;
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
            let _ = ii;
        }
        let _ = in_strides;
        let xv = self.values();
        let mut data = vec![T::zero(); n];
        for (ii, &oi) in map.iter().enumerate() {
            data[oi] = xv[ii];
        }
        drop(xv);
        let a = self.clone();
        Tensor::from_op("permute", out_shape, data, vec![a.clone()], move |g| {
            a.with_grad_mut(|da| {
                for (ii, &oi) in map.iter().enumerate() {
                    da[ii] = da[ii] + g[oi];
                }
            });
        })
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Tensor<T> {
        assert_eq!(
            numel(new_shape),
            self.len(),
            "reshape {:?} -> {new_shape:?} changes element count",
            self.shape()
        );
        let data = self.to_vec();
        let a = self.clone();
        Tensor::from_op("reshape", new_shape.to_vec(), data, vec![a.clone()], move |g| {
            a.with_grad_mut(|da| for i in 0..g.len() { da[i] = da[i] + g[i]; });
        })
    }

    /// Contiguous slice of `len` extents along `axis` starting at `start`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor<T> {
        let shape = self.shape();
        assert!(axis < shape.len(), "axis {axis} out of range");
        assert!(start + len <= shape[axis], "narrow [{start}, {start}+{len}) exceeds extent {}", shape[axis]);
        let pre: usize = shape[..axis].iter().product();
        let ext = shape[axis];
        let post: usize = shape[axis + 1..].iter().product();
        let xv = self.values();
        let mut data = Vec::with_capacity(pre * len * post);
        for p in 0..pre {
            let base = (p * ext + start) * post;
            data.extend_from_slice(&xv[base..base + len * post]);
        }
        drop(xv);
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let a = self.clone();
        Tensor::from_op("narrow", out_shape, data, vec![a.clone()], move |g| {
            a.with_grad_mut(|da| {
                for p in 0..pre {
                    let base = (p * ext + start) * post;
                    let gbase = p * len * post;
                    for k in 0..len * post {
                        da[base + k] = da[base + k] + g[gbase + k];
                    }
                }
            });
        })
    }

    /// Stable softmax over the last axis; each slice sums to one.
    pub fn softmax_lastdim(&self) -> Tensor<T> {
        let shape = self.shape();
        assert!(!shape.is_empty() && shape[shape.len() - 1] >= 1, "softmax needs a last axis");
        let ext = shape[shape.len() - 1];
        let rows = self.len() / ext;
        let xv = self.values();
        let mut data = Vec::with_capacity(self.len());
        for r in 0..rows {
            let row = &xv[r * ext..(r + 1) * ext];
            let m = row.iter().fold(row[0], |acc, &v| if v > acc { v } else { acc });
            let exps: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
            let s = exps.iter().fold(T::zero(), |acc, &v| acc + v);
            data.extend(exps.into_iter().map(|e| e / s));
        }
        drop(xv);
        let a = self.clone();
        let y = data.clone();
        Tensor::from_op("softmax_lastdim", shape.to_vec(), data, vec![a.clone()], move |g| {
            a.with_grad_mut(|da| {
                for r in 0..rows {
                    let o = r * ext;
                    let mut dot = T::zero();
                    for k in 0..ext {
                        dot = dot + g[o + k] * y[o + k];
                    }
                    for k in 0..ext {
                        da[o + k] = da[o + k] + y[o + k] * (g[o + k] - dot);
                    }
                }
            });
        })
    }

    /// Two-dimensional matrix product: (m, k) x (k, n) -> (m, n).
    pub fn matmul2d(&self, other: &Tensor<T>) -> Tensor<T> {
        let (sa, sb) = (self.shape(), other.shape());
        assert!(sa.len() == 2 && sb.len() == 2, "matmul2d expects rank-2 tensors, got {sa:?} x {sb:?}");
        assert_eq!(sa[1], sb[0], "matmul2d inner extent mismatch: {sa:?} x {sb:?}");
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let av = self.values();
        let bv = other.values();
        let mut data = vec![T::zero(); m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = av[i * k + p];
                if aip == T::zero() {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                let orow = &mut data[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] = orow[j] + aip * brow[j];
                }
            }
        }
        drop(av);
        drop(bv);
        let a = self.clone();
        let b = other.clone();
        Tensor::from_op("matmul2d", vec![m, n], data, vec![a.clone(), b.clone()], move |g| {
            let bv = b.values();
            a.with_grad_mut(|da| {
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = T::zero();
                        for j in 0..n {
                            acc = acc + g[i * n + j] * bv[p * n + j];
                        }
                        da[i * k + p] = da[i * k + p] + acc;
                    }
                }
            });
            drop(bv);
            let av = a.values();
            b.with_grad_mut(|db| {
                for p in 0..k {
                    for i in 0..m {
                        let aip = av[i * k + p];
                        if aip == T::zero() {
                            continue;
                        }
                        for j in 0..n {
                            db[p * n + j] = db[p * n + j] + aip * g[i * n + j];
                        }
                    }
                }
            });
        })
    }

    /// Inverted dropout: surviving elements scale by 1/(1-p). Identity when
    /// p == 0. The mask comes from the caller's RNG stream.
    pub fn dropout(&self, p: f64, rng: &mut impl Rng) -> Tensor<T> {
        assert!((0.0..1.0).contains(&p), "dropout rate must be in [0, 1)");
        if p == 0.0 {
            return self.reshape(self.shape());
        }
        let scale = lit::<T>(1.0 / (1.0 - p));
        let mask: Vec<bool> = (0..self.len()).map(|_| rng.gen::<f64>() >= p).collect();
        let data: Vec<T> = self
            .values()
            .iter()
            .zip(&mask)
            .map(|(&x, &keep)| if keep { x * scale } else { T::zero() })
            .collect();
        let a = self.clone();
        Tensor::from_op("dropout", self.shape().to_vec(), data, vec![a.clone()], move |g| {
            a.with_grad_mut(|da| {
                for i in 0..g.len() {
                    if mask[i] {
                        da[i] = da[i] + g[i] * scale;
                    }
                }
            });
        })
    }
}

fn reduced_shape(shape: &[usize], axis: usize, keep: bool) -> Vec<usize> {
    let mut out = shape.to_vec();
    if keep {
        out[axis] = 1;
    } else {
        out.remove(axis);
    }
    out
}

/// Concatenation along `axis`; all other extents must agree.
pub fn concat_axis<T: Element>(xs: &[Tensor<T>], axis: usize) -> Tensor<T> {
    assert!(!xs.is_empty(), "concat_axis of zero tensors");
    let rank = xs[0].rank();
    assert!(axis < rank, "axis {axis} out of range for rank {rank}");
    for x in xs {
        assert_eq!(x.rank(), rank, "concat_axis rank mismatch");
        for ax in 0..rank {
            if ax != axis {
                assert_eq!(
                    x.shape()[ax],
                    xs[0].shape()[ax],
                    "concat_axis extent mismatch on axis {ax}"
                );
            }
        }
    }
    let pre: usize = xs[0].shape()[..axis].iter().product();
    let post: usize = xs[0].shape()[axis + 1..].iter().product();
    let exts: Vec<usize> = xs.iter().map(|x| x.shape()[axis]).collect();
    let total: usize = exts.iter().sum();
    let mut out_shape = xs[0].shape().to_vec();
    out_shape[axis] = total;

    let mut data = vec![T::zero(); pre * total * post];
    let mut offset = 0usize;
    for (x, &ext) in xs.iter().zip(&exts) {
        let xv = x.values();
        for p in 0..pre {
            let src = p * ext * post;
            let dst = (p * total + offset) * post;
            data[dst..dst + ext * post].copy_from_slice(&xv[src..src + ext * post]);
        }
        offset += ext;
    }

    let parents: Vec<Tensor<T>> = xs.to_vec();
    let xs_cap: Vec<Tensor<T>> = xs.to_vec();
    check_finite(&data, "concat_axis");
    Tensor::from_op("concat_axis", out_shape, data, parents, move |g| {
        let mut offset = 0usize;
        for (x, &ext) in xs_cap.iter().zip(&exts) {
            x.with_grad_mut(|dx| {
                for p in 0..pre {
                    let dst = p * ext * post;
                    let src = (p * total + offset) * post;
                    for k in 0..ext * post {
                        dx[dst + k] = dx[dst + k] + g[src + k];
                    }
                }
            });
            offset += ext;
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new_tracked(shape, data.to_vec())
    }

    #[test]
    fn permute_shape_and_values() {
        let x = Tensor::new(&[2, 3, 4], (0..24).map(|v| v as f64).collect());
        let y = x.permute(&[1, 0, 2]);
        assert_eq!(y.shape(), &[3, 2, 4]);
        // x[0,1,2] == y[1,0,2]
        let xv = x.values();
        let yv = y.values();
        assert_eq!(xv[0 * 12 + 1 * 4 + 2], yv[1 * 8 + 0 * 4 + 2]);
    }

    #[test]
    fn permute_identity_is_bitwise_equal() {
        let x = Tensor::new(&[2, 3, 4], (0..24).map(|v| v as f64 * 0.37).collect());
        let y = x.permute(&[0, 1, 2]);
        assert_eq!(x.to_vec(), y.to_vec());
    }

    #[test]
    fn permute_reverse_relabels_indices() {
        let mut data = vec![0.0f64; 24];
        data[0 * 12 + 1 * 4 + 2] = 7.0; // x[0,1,2]
        let x = Tensor::new(&[2, 3, 4], data);
        let y = x.permute(&[2, 1, 0]);
        assert_eq!(y.shape(), &[4, 3, 2]);
        let yv = y.values();
        assert_eq!(yv[2 * 6 + 1 * 2 + 0], 7.0); // y[2,1,0]
    }

    #[test]
    #[should_panic(expected = "invalid permutation")]
    fn permute_duplicate_axis_rejected() {
        let x = Tensor::new(&[2, 2], vec![0.0f64; 4]);
        let _ = x.permute(&[0, 0]);
    }

    #[test]
    #[should_panic(expected = "permutation length mismatch")]
    fn permute_length_mismatch_rejected() {
        let x = Tensor::new(&[2, 2], vec![0.0f64; 4]);
        let _ = x.permute(&[0, 1, 2]);
    }

    #[test]
    fn mean_axis_values() {
        let x = Tensor::new(&[2, 2], vec![1.0f64, 3.0, 5.0, 7.0]);
        let y = x.reduce_mean_axis(0, false);
        assert_eq!(y.to_vec(), vec![3.0, 5.0]);
    }

    #[test]
    fn mean_axis_constant_stays_constant() {
        let x = Tensor::full(&[3, 4], 2.5f64);
        let y = x.reduce_mean_axis(1, true);
        assert_eq!(y.shape(), &[3, 1]);
        assert!(y.to_vec().iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn mean_axis_out_of_range() {
        let x = Tensor::new(&[2], vec![1.0f64, 2.0]);
        let _ = x.reduce_mean_axis(1, false);
    }

    #[test]
    fn max_axis_values_and_tie_break() {
        let x = Tensor::new(&[2, 2], vec![1.0f64, 3.0, 5.0, 2.0]);
        let y = x.reduce_max_axis(0, false);
        assert_eq!(y.to_vec(), vec![5.0, 3.0]);

        // All-equal slice: gradient goes to the lowest flat index only.
        let x = t64(&[3], &[4.0, 4.0, 4.0]);
        let y = x.reduce_max_axis(0, false);
        assert_eq!(y.item(), 4.0);
        y.backward();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn concat_and_narrow_are_inverse() {
        let a = Tensor::new(&[1, 3, 2], vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::new(&[1, 3, 2], vec![7.0f64, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = concat_axis(&[a.clone(), b.clone()], 0);
        assert_eq!(c.shape(), &[2, 3, 2]);
        assert_eq!(c.narrow(0, 0, 1).to_vec(), a.to_vec());
        assert_eq!(c.narrow(0, 1, 1).to_vec(), b.to_vec());
    }

    #[test]
    fn concat_single_input_is_identity() {
        let a = Tensor::new(&[2, 2], vec![1.0f64, 2.0, 3.0, 4.0]);
        let c = concat_axis(&[a.clone()], 1);
        assert_eq!(c.to_vec(), a.to_vec());
        assert_eq!(c.shape(), a.shape());
    }

    #[test]
    #[should_panic(expected = "extent mismatch")]
    fn concat_extent_mismatch_rejected() {
        let a = Tensor::new(&[2, 2], vec![0.0f64; 4]);
        let b = Tensor::new(&[3, 3], vec![0.0f64; 9]);
        let _ = concat_axis(&[a, b], 0);
    }

    #[test]
    fn sigmoid_fixtures() {
        let x = Tensor::new(&[3], vec![0.0f64, 50.0, -50.0]);
        let y = x.sigmoid();
        let v = y.to_vec();
        assert_eq!(v[0], 0.5);
        assert!((v[1] - 1.0).abs() < 1e-12);
        assert!(v[2] > 0.0 && v[2] < 1e-12_f64.max(1e-9));
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let x = t64(&[1], &[0.0]);
        let y = x.sigmoid().sum_all();
        y.backward();
        assert!((x.grad().unwrap()[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn softmax_fixtures() {
        let y = Tensor::new(&[3], vec![0.0f64, 0.0, 0.0]).softmax_lastdim();
        for v in y.to_vec() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        // Shift invariance.
        let a = Tensor::new(&[3], vec![0.3f64, -1.2, 2.0]).softmax_lastdim();
        let b = Tensor::new(&[3], vec![100.3f64, 98.8, 102.0]).softmax_lastdim();
        for (x, y) in a.to_vec().iter().zip(b.to_vec()) {
            assert!((x - y).abs() < 1e-7);
        }
        // Stability.
        let c = Tensor::new(&[2], vec![1000.0f64, 0.0]).softmax_lastdim();
        let v = c.to_vec();
        assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12);
    }

    #[test]
    fn matmul2d_known_product() {
        let a = Tensor::new(&[2, 2], vec![1.0f64, 2.0, 3.0, 4.0]);
        let b = Tensor::new(&[2, 2], vec![5.0f64, 6.0, 7.0, 8.0]);
        let c = a.matmul2d(&b);
        assert_eq!(c.to_vec(), vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn broadcast_mul_gate_pattern() {
        // (1, 2, 2) gate against (3, 2, 2) features, the SF-Head idiom.
        let gate = Tensor::new(&[1, 2, 2], vec![0.5f64, 1.0, 2.0, 0.0]);
        let x = Tensor::new(&[3, 2, 2], (1..=12).map(|v| v as f64).collect());
        let y = gate.mul(&x);
        assert_eq!(y.shape(), &[3, 2, 2]);
        let v = y.to_vec();
        assert_eq!(&v[..4], &[0.5, 2.0, 6.0, 0.0]);
        assert_eq!(&v[4..8], &[2.5, 6.0, 14.0, 0.0]);
    }

    #[test]
    fn broadcast_backward_reduces_correctly() {
        let gate = t64(&[1, 2], &[2.0, 3.0]);
        let x = t64(&[3, 2], &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let y = gate.mul(&x).sum_all();
        y.backward();
        // d/dgate = sum over broadcast rows of x = 3 each.
        assert_eq!(gate.grad().unwrap(), vec![3.0, 3.0]);
        assert_eq!(x.grad().unwrap(), vec![2.0, 3.0, 2.0, 3.0, 2.0, 3.0]);
    }

    #[test]
    fn dropout_zero_rate_is_identity() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::new(&[4], vec![1.0f64, 2.0, 3.0, 4.0]);
        assert_eq!(x.dropout(0.0, &mut rng).to_vec(), x.to_vec());
    }
}
