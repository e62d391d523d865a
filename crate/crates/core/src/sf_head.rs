//! Auxiliary feature head attached at backbone tap points during training.
//!
//! Each tapped feature map (C, T, V) is divided into `g` channel groups and
//! each group into four branches. Two branches pass through gated
//! spatial/temporal extraction; the four are then recombined per axis-wise
//! attention gates into an aggregated feature. All outputs feed auxiliary
//! losses only — the backbone's main pathway never sees them.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{lit, BatchNorm, concat_axis, Element, Tensor};

pub const GN_EPS: f64 = 1e-5;

/// Which head stages are active. Everything defaults to on; the trainer's
/// ablation switchboard turns stages off.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadFlags {
    /// Gated spatial/temporal extraction on branches 1 and 3.
    pub sste: bool,
    /// Adaptive aggregation; when off, `f_a` is the unweighted mean of the
    /// four branch features and no attention gate runs.
    pub acfa: bool,
    /// Channel-axis attention gate (branch 2 contribution to `f_a`).
    pub acda: bool,
    /// Temporal-axis attention gate (branch 1 contribution).
    pub atda: bool,
    /// Spatial-axis attention gate (branch 3 contribution).
    pub asda: bool,
}

impl Default for HeadFlags {
    fn default() -> Self {
        HeadFlags { sste: true, acfa: true, acda: true, atda: true, asda: true }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct SfHeadConfig {
    /// Channel group count. Every attach point's channel count must be
    /// divisible by `4 * groups`.
    pub groups: usize,
    /// Aggregation weights for the (channel, temporal, spatial, original)
    /// branch contributions.
    pub eta: [f64; 4],
    /// Square kernel size of the attention-gate convolutions (odd).
    pub psi_kernel: usize,
    /// Group count for the normalization in the spatial extraction branch.
    /// `None` picks the largest divisor of the branch width that is ≤ 4.
    pub gn_groups: Option<usize>,
    /// Backbone block indices whose tap points host the head.
    pub attach_blocks: Vec<usize>,
}

impl Default for SfHeadConfig {
    fn default() -> Self {
        SfHeadConfig {
            groups: 2,
            eta: [0.25; 4],
            psi_kernel: 7,
            gn_groups: None,
            attach_blocks: vec![4, 6, 8],
        }
    }
}

impl SfHeadConfig {
    pub fn validate(&self) {
        assert!(self.groups >= 1, "group count must be positive");
        assert!(
            self.eta.iter().all(|e| e.is_finite() && *e >= 0.0),
            "eta weights must be finite and non-negative"
        );
        assert!(self.psi_kernel % 2 == 1, "attention kernel must be odd for symmetric padding");
        if let Some(gn) = self.gn_groups {
            assert!(gn >= 1, "gn_groups must be positive");
        }
    }

    /// Branch width C' = C / (4g); panics if the division is not exact.
    pub fn branch_width(&self, channels: usize) -> usize {
        assert!(
            channels % (4 * self.groups) == 0,
            "channel count {channels} not divisible by 4*groups = {}",
            4 * self.groups
        );
        channels / (4 * self.groups)
    }

    fn gn_groups_for(&self, c_prime: usize) -> usize {
        match self.gn_groups {
            Some(g) => {
                assert!(c_prime % g == 0, "branch width {c_prime} not divisible by gn_groups {g}");
                g
            }
            None => (1..=c_prime.min(4)).rev().find(|g| c_prime % g == 0).unwrap(),
        }
    }
}

/// One attention gate: a 2→1 channel k×k convolution, batch norm, sigmoid.
pub struct GateParams<T: Element> {
    pub weight: Tensor<T>, // (1, 2, k, k)
    pub bias: Tensor<T>,   // (1)
    pub bn: BatchNorm<T>,
    kernel: usize,
}

impl<T: Element> GateParams<T> {
    fn new(kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / ((2 * kernel * kernel) as f64).sqrt();
        let n = 2 * kernel * kernel;
        let data: Vec<T> = (0..n).map(|_| lit::<T>(rng.gen_range(-bound..bound))).collect();
        GateParams {
            weight: Tensor::new_tracked(&[1, 2, kernel, kernel], data),
            bias: Tensor::new_tracked(&[1], vec![T::zero()]),
            bn: BatchNorm::new(1),
            kernel,
        }
    }

    /// Pool the leading axis of `x` (mean and max), convolve, normalize,
    /// squash. Output shape (1, x.shape[1], x.shape[2]).
    fn gate(&self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let pooled = concat_axis(
            &[x.reduce_mean_axis(0, true), x.reduce_max_axis(0, true)],
            0,
        );
        let pad = (self.kernel - 1) / 2;
        let pre = pooled.conv2d(&self.weight, Some(&self.bias), (1, 1), (pad, pad));
        self.bn.forward(&pre, train).sigmoid()
    }
}

/// Parameters for one attach point, shared across its channel groups.
pub struct AttachParams<T: Element> {
    pub block: usize,
    pub c_prime: usize,
    pub gn_groups: usize,
    pub phi_t_weight: Tensor<T>, // (C', C', 1, 1)
    pub phi_t_bias: Tensor<T>,   // (C')
    pub phi_s_weight: Tensor<T>,
    pub phi_s_bias: Tensor<T>,
    pub gn_gain: Tensor<T>, // (C')
    pub gn_bias: Tensor<T>,
    pub psi_c: GateParams<T>,
    pub psi_t: GateParams<T>,
    pub psi_s: GateParams<T>,
}

impl<T: Element> AttachParams<T> {
    fn new(block: usize, c_prime: usize, cfg: &SfHeadConfig, rng: &mut ChaCha8Rng) -> Self {
        let head = |rng: &mut ChaCha8Rng| {
            let bound = 1.0 / (c_prime as f64).sqrt();
            let data: Vec<T> = (0..c_prime * c_prime)
                .map(|_| lit::<T>(rng.gen_range(-bound..bound)))
                .collect();
            (
                Tensor::new_tracked(&[c_prime, c_prime, 1, 1], data),
                Tensor::new_tracked(&[c_prime], vec![T::zero(); c_prime]),
            )
        };
        let (phi_t_weight, phi_t_bias) = head(rng);
        let (phi_s_weight, phi_s_bias) = head(rng);
        AttachParams {
            block,
            c_prime,
            gn_groups: cfg.gn_groups_for(c_prime),
            phi_t_weight,
            phi_t_bias,
            phi_s_weight,
            phi_s_bias,
            gn_gain: Tensor::new_tracked(&[c_prime], vec![T::one(); c_prime]),
            gn_bias: Tensor::new_tracked(&[c_prime], vec![T::zero(); c_prime]),
            psi_c: GateParams::new(cfg.psi_kernel, rng),
            psi_t: GateParams::new(cfg.psi_kernel, rng),
            psi_s: GateParams::new(cfg.psi_kernel, rng),
        }
    }
}

/// Per-group feature bundle consumed by the auxiliary losses. All five
/// tensors share the branch shape (C', T, V).
pub struct SfFeatures<T: Element> {
    pub f_c: Tensor<T>,
    pub f_t: Tensor<T>,
    pub f_s: Tensor<T>,
    pub f_o: Tensor<T>,
    pub f_a: Tensor<T>,
}

pub struct SfHead<T: Element> {
    pub config: SfHeadConfig,
    pub attach: Vec<AttachParams<T>>,
}

impl<T: Element> SfHead<T> {
    /// `block_channels[b]` gives the tap channel count at block `b`; every
    /// configured attach point must exist and divide evenly into branches.
    pub fn new(config: SfHeadConfig, block_channels: &[usize], rng: &mut ChaCha8Rng) -> Self {
        config.validate();
        let mut attach = Vec::new();
        for &b in &config.attach_blocks {
            assert!(
                b < block_channels.len(),
                "attach block {b} out of range for {} blocks",
                block_channels.len()
            );
            let c_prime = config.branch_width(block_channels[b]);
            attach.push(AttachParams::new(b, c_prime, &config, rng));
        }
        SfHead { config, attach }
    }

    pub fn attach_for_block(&self, block: usize) -> &AttachParams<T> {
        self.attach
            .iter()
            .find(|a| a.block == block)
            .unwrap_or_else(|| panic!("no attach params for block {block}"))
    }

    /// Run the head over one tapped feature map. Returns one bundle per
    /// channel group; never mutates the tap.
    pub fn forward(
        &self,
        block: usize,
        tap: &Tensor<T>,
        flags: HeadFlags,
        train: bool,
    ) -> Vec<SfFeatures<T>> {
        let params = self.attach_for_block(block);
        let shape = tap.shape();
        assert_eq!(shape.len(), 3, "tap must be (C, T, V), got {shape:?}");
        let c_prime = self.config.branch_width(shape[0]);
        assert_eq!(c_prime, params.c_prime, "tap channel count changed since construction");

        let mut bundles = Vec::with_capacity(self.config.groups);
        for k in 0..self.config.groups {
            let base = k * 4 * c_prime;
            let x_t = tap.narrow(0, base, c_prime);
            let f_c = tap.narrow(0, base + c_prime, c_prime);
            let x_s = tap.narrow(0, base + 2 * c_prime, c_prime);
            let f_o = tap.narrow(0, base + 3 * c_prime, c_prime);

            let (f_t, f_s) = if flags.sste {
                sste_forward(&x_t, &x_s, params, train)
            } else {
                (x_t.clone(), x_s.clone())
            };

            let f_a = self.aggregate(&f_c, &f_t, &f_s, &f_o, params, flags, train);
            bundles.push(SfFeatures { f_c, f_t, f_s, f_o, f_a });
        }
        bundles
    }

    fn aggregate(
        &self,
        f_c: &Tensor<T>,
        f_t: &Tensor<T>,
        f_s: &Tensor<T>,
        f_o: &Tensor<T>,
        params: &AttachParams<T>,
        flags: HeadFlags,
        train: bool,
    ) -> Tensor<T> {
        if !flags.acfa {
            return f_c.add(f_t).add(f_s).add(f_o).mul_scalar(lit::<T>(0.25));
        }
        let [eta_c, eta_t, eta_s, eta_o] = self.config.eta;
        let mut terms: Vec<Tensor<T>> = Vec::new();
        if flags.acda && eta_c > 0.0 {
            terms.push(acda_forward(f_c, &params.psi_c, train).0.mul_scalar(lit::<T>(eta_c)));
        }
        if flags.atda && eta_t > 0.0 {
            terms.push(atda_forward(f_t, &params.psi_t, train).0.mul_scalar(lit::<T>(eta_t)));
        }
        if flags.asda && eta_s > 0.0 {
            terms.push(asda_forward(f_s, &params.psi_s, train).0.mul_scalar(lit::<T>(eta_s)));
        }
        if eta_o > 0.0 {
            terms.push(f_o.mul_scalar(lit::<T>(eta_o)));
        }
        match terms.split_first() {
            Some((first, rest)) => rest.iter().fold(first.clone(), |acc, t| acc.add(t)),
            None => Tensor::zeros(f_o.shape()),
        }
    }

    /// Trainable parameters, stable order and names (prefixed by the
    /// serializer, not here).
    pub fn params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for a in &self.attach {
            let p = format!("attach{}", a.block);
            out.push((format!("{p}.phi_t.weight"), a.phi_t_weight.clone()));
            out.push((format!("{p}.phi_t.bias"), a.phi_t_bias.clone()));
            out.push((format!("{p}.phi_s.weight"), a.phi_s_weight.clone()));
            out.push((format!("{p}.phi_s.bias"), a.phi_s_bias.clone()));
            out.push((format!("{p}.gn.gain"), a.gn_gain.clone()));
            out.push((format!("{p}.gn.bias"), a.gn_bias.clone()));
            for (name, g) in [("psi_c", &a.psi_c), ("psi_t", &a.psi_t), ("psi_s", &a.psi_s)] {
                out.push((format!("{p}.{name}.weight"), g.weight.clone()));
                out.push((format!("{p}.{name}.bias"), g.bias.clone()));
                out.push((format!("{p}.{name}.bn.gain"), g.bn.gain.clone()));
                out.push((format!("{p}.{name}.bn.bias"), g.bn.bias.clone()));
            }
        }
        out
    }

    /// Non-trainable state (gate batch-norm running statistics).
    pub fn running_stats(&self) -> Vec<(String, &BatchNorm<T>)> {
        let mut out = Vec::new();
        for a in &self.attach {
            let p = format!("attach{}", a.block);
            out.push((format!("{p}.psi_c.bn"), &a.psi_c.bn));
            out.push((format!("{p}.psi_t.bn"), &a.psi_t.bn));
            out.push((format!("{p}.psi_s.bn"), &a.psi_s.bn));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Gated spatial/temporal extraction. Temporal branch: mean over T
/// (keepdim), 1×1 head, sigmoid, broadcast gate on `x_t`. Spatial branch:
/// group-normalize, 1×1 head, sigmoid, elementwise gate on `x_s`.
pub fn sste_forward<T: Element>(
    x_t: &Tensor<T>,
    x_s: &Tensor<T>,
    params: &AttachParams<T>,
    _train: bool,
) -> (Tensor<T>, Tensor<T>) {
    assert_eq!(x_t.shape(), x_s.shape(), "sste branch shape mismatch");
    assert_eq!(x_t.shape()[0], params.c_prime, "sste channel mismatch");
    let pooled = x_t.reduce_mean_axis(1, true); // (C', 1, V)
    let gate_t = pooled
        .conv2d(&params.phi_t_weight, Some(&params.phi_t_bias), (1, 1), (0, 0))
        .sigmoid();
    let f_t = gate_t.mul(x_t);

    let normed = x_s.group_norm(params.gn_groups, &params.gn_gain, &params.gn_bias, lit::<T>(GN_EPS));
    let gate_s = normed
        .conv2d(&params.phi_s_weight, Some(&params.phi_s_bias), (1, 1), (0, 0))
        .sigmoid();
    let f_s = gate_s.mul(x_s);
    (f_t, f_s)
}

/// Channel-axis gate: pool over channels to (2,T,V), convolve to a (1,T,V)
/// gate, broadcast-multiply over channels.
pub fn acda_forward<T: Element>(
    f_c: &Tensor<T>,
    psi: &GateParams<T>,
    train: bool,
) -> (Tensor<T>, Tensor<T>) {
    let omega = psi.gate(f_c, train);
    (omega.mul(f_c), omega)
}

/// Temporal-axis gate: rotate to (T,C',V), pool the leading axis, gate with
/// (1,C',V) broadcast over T, rotate back.
pub fn atda_forward<T: Element>(
    f_t: &Tensor<T>,
    psi: &GateParams<T>,
    train: bool,
) -> (Tensor<T>, Tensor<T>) {
    let rotated = f_t.permute(&[1, 0, 2]);
    let omega = psi.gate(&rotated, train);
    (omega.mul(&rotated).permute(&[1, 0, 2]), omega)
}

/// Spatial-axis gate: rotate to (V,T,C'), pool the leading axis, gate with
/// (1,T,C') broadcast over V, rotate back.
pub fn asda_forward<T: Element>(
    f_s: &Tensor<T>,
    psi: &GateParams<T>,
    train: bool,
) -> (Tensor<T>, Tensor<T>) {
    let rotated = f_s.permute(&[2, 1, 0]);
    let omega = psi.gate(&rotated, train);
    (omega.mul(&rotated).permute(&[2, 1, 0]), omega)
}

/// Explicit weighted recombination, exposed for direct testing. `y_o` passes
/// through ungated.
pub fn cfa_aggregate<T: Element>(
    y_c: &Tensor<T>,
    y_t: &Tensor<T>,
    y_s: &Tensor<T>,
    f_o: &Tensor<T>,
    eta: [f64; 4],
) -> Tensor<T> {
    assert_eq!(y_c.shape(), y_t.shape());
    assert_eq!(y_c.shape(), y_s.shape());
    assert_eq!(y_c.shape(), f_o.shape());
    y_c.mul_scalar(lit::<T>(eta[0]))
        .add(&y_t.mul_scalar(lit::<T>(eta[1])))
        .add(&y_s.mul_scalar(lit::<T>(eta[2])))
        .add(&f_o.mul_scalar(lit::<T>(eta[3])))
}
