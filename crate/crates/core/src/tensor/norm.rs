//! Group and batch normalization.

use std::cell::RefCell;

use super::{lit, Element, Tensor};

impl<T: Element> Tensor<T> {
    /// Group normalization over a (C, ...) tensor: per group of C/num_groups
    /// channels, subtract the mean and divide by sqrt(var + eps) computed
    /// over that group's channels and all trailing axes, then apply the
    /// per-channel affine map.
    pub fn group_norm(
        &self,
        num_groups: usize,
        gain: &Tensor<T>,
        bias: &Tensor<T>,
        eps: T,
    ) -> Tensor<T> {
        let shape = self.shape();
        assert!(!shape.is_empty(), "group_norm needs a channel axis");
        let c = shape[0];
        assert!(
            num_groups >= 1 && c % num_groups == 0,
            "channel count {c} not divisible by {num_groups} groups"
        );
        assert_eq!(gain.shape(), &[c], "group_norm gain shape mismatch");
        assert_eq!(bias.shape(), &[c], "group_norm bias shape mismatch");
        let rest: usize = shape[1..].iter().product();
        let cpg = c / num_groups;
        let n = cpg * rest; // elements per group

        let xv = self.values();
        let gv = gain.values();
        let bv = bias.values();
        let nt = lit::<T>(n as f64);
        let mut xhat = vec![T::zero(); self.len()];
        let mut istd = vec![T::zero(); num_groups];
        for grp in 0..num_groups {
            let base = grp * cpg * rest;
            let sl = &xv[base..base + n];
            let mean = sl.iter().fold(T::zero(), |a, &v| a + v) / nt;
            let var = sl.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / nt;
            let is = T::one() / (var + eps).sqrt();
            istd[grp] = is;
            for (k, &v) in sl.iter().enumerate() {
                xhat[base + k] = (v - mean) * is;
            }
        }
        let mut out = vec![T::zero(); self.len()];
        for ch in 0..c {
            for q in 0..rest {
                let i = ch * rest + q;
                out[i] = gv[ch] * xhat[i] + bv[ch];
            }
        }
        drop(xv);
        drop(gv);
        drop(bv);

        let x = self.clone();
        let gt = gain.clone();
        let bt = bias.clone();
        Tensor::from_op(
            "group_norm",
            shape.to_vec(),
            out,
            vec![x.clone(), gt.clone(), bt.clone()],
            move |g| {
                let gv = gt.values();
                x.with_grad_mut(|dx| {
                    for grp in 0..num_groups {
                        let base = grp * cpg * rest;
                        // dxhat, then the two mean corrections of the
                        // normalization backward.
                        let mut sum_d = T::zero();
                        let mut sum_dx = T::zero();
                        for k in 0..n {
                            let i = base + k;
                            let ch = i / rest;
                            let d = g[i] * gv[ch];
                            sum_d = sum_d + d;
                            sum_dx = sum_dx + d * xhat[i];
                        }
                        let m1 = sum_d / nt;
                        let m2 = sum_dx / nt;
                        for k in 0..n {
                            let i = base + k;
                            let ch = i / rest;
                            let d = g[i] * gv[ch];
                            dx[i] = dx[i] + istd[grp] * (d - m1 - xhat[i] * m2);
                        }
                    }
                });
                drop(gv);
                gt.with_grad_mut(|dg| {
                    for ch in 0..c {
                        let mut acc = T::zero();
                        for q in 0..rest {
                            let i = ch * rest + q;
                            acc = acc + g[i] * xhat[i];
                        }
                        dg[ch] = dg[ch] + acc;
                    }
                });
                bt.with_grad_mut(|db| {
                    for ch in 0..c {
                        let mut acc = T::zero();
                        for q in 0..rest {
                            acc = acc + g[ch * rest + q];
                        }
                        db[ch] = db[ch] + acc;
                    }
                });
            },
        )
    }
}

/// Batch normalization state: trainable affine plus running statistics.
///
/// Statistics are taken per channel (axis 0) over all trailing axes. This
/// implementation always normalizes one sample at a time, so the sample's
/// own statistics are used in both modes — switching to running averages at
/// eval would evaluate the network under a distribution it never trained
/// under (the running variance systematically misses the between-sample
/// spread). Train mode additionally updates the running buffers, which are
/// serialized with checkpoints as a drift diagnostic.
pub struct BatchNorm<T: Element> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
    pub running_mean: RefCell<Vec<T>>,
    pub running_var: RefCell<Vec<T>>,
    pub momentum: T,
    pub eps: T,
}

impl<T: Element> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gain: Tensor::new_tracked(&[channels], vec![T::one(); channels]),
            bias: Tensor::new_tracked(&[channels], vec![T::zero(); channels]),
            running_mean: RefCell::new(vec![T::zero(); channels]),
            running_var: RefCell::new(vec![T::one(); channels]),
            momentum: lit(0.1),
            eps: lit(1e-5),
        }
    }

    pub fn channels(&self) -> usize {
        self.gain.len()
    }

    pub fn forward(&self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let shape = x.shape();
        let c = self.channels();
        assert!(!shape.is_empty() && shape[0] == c, "batch_norm expects {c} channels, got {shape:?}");
        let rest: usize = shape[1..].iter().product();
        assert!(rest >= 1, "batch_norm needs at least one element per channel");

        self.forward_normalized(x, c, rest, train)
    }

    fn forward_normalized(&self, x: &Tensor<T>, c: usize, rest: usize, train: bool) -> Tensor<T> {
        let nt = lit::<T>(rest as f64);
        let xv = x.values();
        let gv = self.gain.values();
        let bv = self.bias.values();
        let mut xhat = vec![T::zero(); x.len()];
        let mut istd = vec![T::zero(); c];
        let mut batch_mean = vec![T::zero(); c];
        let mut batch_var = vec![T::zero(); c];
        for ch in 0..c {
            let sl = &xv[ch * rest..(ch + 1) * rest];
            let mean = sl.iter().fold(T::zero(), |a, &v| a + v) / nt;
            let var = sl.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / nt;
            batch_mean[ch] = mean;
            batch_var[ch] = var;
            let is = T::one() / (var + self.eps).sqrt();
            istd[ch] = is;
            for (k, &v) in sl.iter().enumerate() {
                xhat[ch * rest + k] = (v - mean) * is;
            }
        }
        let mut out = vec![T::zero(); x.len()];
        for ch in 0..c {
            for q in 0..rest {
                let i = ch * rest + q;
                out[i] = gv[ch] * xhat[i] + bv[ch];
            }
        }
        drop(xv);
        drop(gv);
        drop(bv);

        // Running statistics update; outside the gradient path and skipped at
        // eval so inference has no side effects.
        if train {
            let mut rm = self.running_mean.borrow_mut();
            let mut rv = self.running_var.borrow_mut();
            let m = self.momentum;
            for ch in 0..c {
                rm[ch] = (T::one() - m) * rm[ch] + m * batch_mean[ch];
                rv[ch] = (T::one() - m) * rv[ch] + m * batch_var[ch];
            }
        }

        let xt = x.clone();
        let gt = self.gain.clone();
        let bt = self.bias.clone();
        Tensor::from_op(
            "batch_norm",
            x.shape().to_vec(),
            out,
            vec![xt.clone(), gt.clone(), bt.clone()],
            move |g| {
                let gv = gt.values();
                xt.with_grad_mut(|dx| {
                    for ch in 0..c {
                        let base = ch * rest;
                        let mut sum_d = T::zero();
                        let mut sum_dx = T::zero();
                        for q in 0..rest {
                            let d = g[base + q] * gv[ch];
                            sum_d = sum_d + d;
                            sum_dx = sum_dx + d * xhat[base + q];
                        }
                        let nt = lit::<T>(rest as f64);
                        let m1 = sum_d / nt;
                        let m2 = sum_dx / nt;
                        for q in 0..rest {
                            let d = g[base + q] * gv[ch];
                            dx[base + q] = dx[base + q] + istd[ch] * (d - m1 - xhat[base + q] * m2);
                        }
                    }
                });
                drop(gv);
                gt.with_grad_mut(|dg| {
                    for ch in 0..c {
                        let mut acc = T::zero();
                        for q in 0..rest {
                            acc = acc + g[ch * rest + q] * xhat[ch * rest + q];
                        }
                        dg[ch] = dg[ch] + acc;
                    }
                });
                bt.with_grad_mut(|db| {
                    for ch in 0..c {
                        let mut acc = T::zero();
                        for q in 0..rest {
                            acc = acc + g[ch * rest + q];
                        }
                        db[ch] = db[ch] + acc;
                    }
                });
            },
        )
    }

}
