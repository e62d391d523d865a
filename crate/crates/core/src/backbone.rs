//! Reduced GCN+TCN classification backbone with read-only tap points
//! between each block's graph convolution and temporal convolution.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::SkeletonGraph;
use crate::tensor::{BatchNorm, Element, Tensor};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct BackboneConfig {
    pub block_channels: Vec<usize>,
    pub temporal_strides: Vec<usize>,
    pub tcn_kernel: usize,
    pub num_classes: usize,
    pub joints: usize,
    pub dropout: f64,
}

impl BackboneConfig {
    /// Two narrow blocks; the desk-scale profile.
    pub fn tiny(num_classes: usize, joints: usize) -> Self {
        BackboneConfig {
            block_channels: vec![16, 16],
            temporal_strides: vec![1, 1],
            tcn_kernel: 9,
            num_classes,
            joints,
            dropout: 0.25,
        }
    }

    /// Ten blocks sized so the full-width temporal convolutions land at a
    /// CTR-GCN-comparable parameter count (~1.46M at Z=120, V=25).
    pub fn paper_scale(num_classes: usize, joints: usize) -> Self {
        BackboneConfig {
            block_channels: vec![48, 48, 48, 48, 96, 96, 96, 192, 192, 192],
            temporal_strides: vec![1, 1, 1, 1, 2, 1, 1, 2, 1, 1],
            tcn_kernel: 9,
            num_classes,
            joints,
            dropout: 0.25,
        }
    }

    pub fn validate(&self) {
        assert!(!self.block_channels.is_empty(), "backbone needs at least one block");
        assert_eq!(
            self.block_channels.len(),
            self.temporal_strides.len(),
            "block_channels and temporal_strides lengths differ"
        );
        assert!(self.block_channels.iter().all(|&c| c > 0), "channel counts must be positive");
        assert!(
            self.temporal_strides.iter().all(|&s| s == 1 || s == 2),
            "temporal strides must be 1 or 2"
        );
        assert!(self.tcn_kernel % 2 == 1, "tcn kernel must be odd for symmetric padding");
        assert!(self.num_classes >= 2 && self.joints >= 2);
    }
}

fn uniform_init<T: Element>(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n)
        .map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::new_tracked(shape, data)
}

/// One GCN+TCN block. The learnable residual adjacency `res_adj` stands in
/// for CTR-GCN's channel-wise topology refinement.
pub struct BasicBlock<T: Element> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub gcn_weight: Tensor<T>,
    pub res_adj: Tensor<T>,
    pub gcn_bn: BatchNorm<T>,
    pub tcn_weight: Tensor<T>,
    pub tcn_bn: BatchNorm<T>,
    pub res_proj: Option<Tensor<T>>,
    pub tcn_kernel: usize,
}

impl<T: Element> BasicBlock<T> {
    fn new(cin: usize, cout: usize, stride: usize, kernel: usize, joints: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(kernel % 2 == 1, "even tcn kernel rejected; symmetric padding requires odd k");
        let gcn_weight = uniform_init(rng, &[cout, cin], 1.0 / (cin as f64).sqrt());
        let res_adj = uniform_init(rng, &[joints, joints], 1e-6);
        let tcn_weight = uniform_init(
            rng,
            &[cout, cout, kernel, 1],
            1.0 / ((cout * kernel) as f64).sqrt(),
        );
        let res_proj = if stride != 1 || cin != cout {
            Some(uniform_init(rng, &[cout, cout, 1, 1], 1.0 / (cout as f64).sqrt()))
        } else {
            None
        };
        BasicBlock {
            in_channels: cin,
            out_channels: cout,
            stride,
            gcn_weight,
            res_adj,
            gcn_bn: BatchNorm::new(cout),
            tcn_weight,
            tcn_bn: BatchNorm::new(cout),
            res_proj,
            tcn_kernel: kernel,
        }
    }

    /// y = ReLU(BN((A_norm + B) · x · W)): W mixes channels, the adjacency
    /// mixes joints.
    pub fn gcn_forward(&self, x: &Tensor<T>, a_norm: &Tensor<T>, train: bool) -> Tensor<T> {
        let (c, t, v) = shape3(x);
        assert_eq!(c, self.in_channels, "gcn_forward channel mismatch");
        assert_eq!(a_norm.shape(), &[v, v], "adjacency joint count mismatch");
        let h = self
            .gcn_weight
            .matmul2d(&x.reshape(&[c, t * v]))
            .reshape(&[self.out_channels, t, v]);
        let mixed = h
            .reshape(&[self.out_channels * t, v])
            .matmul2d(&a_norm.add(&self.res_adj).permute(&[1, 0]))
            .reshape(&[self.out_channels, t, v]);
        self.gcn_bn.forward(&mixed, train).relu()
    }

    /// k×1 temporal convolution, BN, residual add (1×1 projection when the
    /// temporal stride shrinks T), ReLU.
    pub fn tcn_forward(&self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let k = self.tcn_kernel;
        let pad = (k - 1) / 2;
        let main = x.conv2d(&self.tcn_weight, None, (self.stride, 1), (pad, 0));
        let main = self.tcn_bn.forward(&main, train);
        let res = match &self.res_proj {
            Some(w) => x.conv2d(w, None, (self.stride, 1), (0, 0)),
            None => x.reshape(x.shape()),
        };
        main.add(&res).relu()
    }
}

fn shape3<T: Element>(x: &Tensor<T>) -> (usize, usize, usize) {
    let s = x.shape();
    assert_eq!(s.len(), 3, "expected a (C, T, V) tensor, got {s:?}");
    (s[0], s[1], s[2])
}

/// Read-only snapshot of a block's post-GCN feature map.
pub struct TapRecord<T: Element> {
    pub block: usize,
    pub feature: Tensor<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub struct Backbone<T: Element> {
    pub config: BackboneConfig,
    pub a_norm: Tensor<T>,
    pub data_bn: BatchNorm<T>,
    pub blocks: Vec<BasicBlock<T>>,
    pub fc_weight: Tensor<T>,
    pub fc_bias: Tensor<T>,
}

impl<T: Element> Backbone<T> {
    pub fn new(config: BackboneConfig, graph: &SkeletonGraph, rng: &mut ChaCha8Rng) -> Self {
        config.validate();
        assert_eq!(graph.joints, config.joints, "graph joint count mismatch");
        let mut blocks = Vec::with_capacity(config.block_channels.len());
        let mut cin = 3;
        for (i, (&cout, &stride)) in config
            .block_channels
            .iter()
            .zip(&config.temporal_strides)
            .enumerate()
        {
            let _ = i;
            blocks.push(BasicBlock::new(cin, cout, stride, config.tcn_kernel, config.joints, rng));
            cin = cout;
        }
        let c_last = *config.block_channels.last().unwrap();
        let fc_weight = uniform_init(rng, &[config.num_classes, c_last], 1.0 / (c_last as f64).sqrt());
        let fc_bias = Tensor::new_tracked(&[config.num_classes], vec![T::zero(); config.num_classes]);
        Backbone {
            a_norm: graph.a_norm_tensor(),
            data_bn: BatchNorm::new(3),
            config,
            blocks,
            fc_weight,
            fc_bias,
        }
    }

    /// Full forward pass. Taps are snapshots of post-GCN features; requesting
    /// them never perturbs the main pathway.
    pub fn forward(
        &self,
        x: &Tensor<T>,
        mode: Mode,
        taps_requested: &[usize],
        dropout_rng: &mut ChaCha8Rng,
    ) -> (Tensor<T>, Vec<TapRecord<T>>) {
        let (c, _, v) = shape3(x);
        assert_eq!(c, 3, "backbone input must be (3, T, V)");
        assert_eq!(v, self.config.joints, "backbone input joint count mismatch");
        for &b in taps_requested {
            assert!(b < self.blocks.len(), "tap index {b} out of range for {} blocks", self.blocks.len());
        }
        let train = mode == Mode::Train;
        let mut h = self.data_bn.forward(x, train);
        let mut taps = Vec::new();
        for (i, block) in self.blocks.iter().enumerate() {
            let post_gcn = block.gcn_forward(&h, &self.a_norm, train);
            if taps_requested.contains(&i) {
                taps.push(TapRecord { block: i, feature: post_gcn.clone() });
            }
            h = block.tcn_forward(&post_gcn, train);
        }
        // Global average pool over (T, V), dropout (train only), classifier.
        let pooled = h.reduce_mean_axis(2, false).reduce_mean_axis(1, false);
        let pooled = if train && self.config.dropout > 0.0 {
            pooled.dropout(self.config.dropout, dropout_rng)
        } else {
            pooled
        };
        let c_last = pooled.len();
        let logits = self
            .fc_weight
            .matmul2d(&pooled.reshape(&[c_last, 1]))
            .reshape(&[self.config.num_classes])
            .add(&self.fc_bias);
        (logits, taps)
    }

    /// Trainable parameters, stable order and names.
    pub fn params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        out.push(("data_bn.gain".to_string(), self.data_bn.gain.clone()));
        out.push(("data_bn.bias".to_string(), self.data_bn.bias.clone()));
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("block{i}");
            out.push((format!("{p}.gcn_weight"), b.gcn_weight.clone()));
            out.push((format!("{p}.res_adj"), b.res_adj.clone()));
            out.push((format!("{p}.gcn_bn.gain"), b.gcn_bn.gain.clone()));
            out.push((format!("{p}.gcn_bn.bias"), b.gcn_bn.bias.clone()));
            out.push((format!("{p}.tcn_weight"), b.tcn_weight.clone()));
            out.push((format!("{p}.tcn_bn.gain"), b.tcn_bn.gain.clone()));
            out.push((format!("{p}.tcn_bn.bias"), b.tcn_bn.bias.clone()));
            if let Some(w) = &b.res_proj {
                out.push((format!("{p}.res_proj"), w.clone()));
            }
        }
        out.push(("fc.weight".to_string(), self.fc_weight.clone()));
        out.push(("fc.bias".to_string(), self.fc_bias.clone()));
        out
    }

    /// Non-trainable state (batch-norm running statistics), stable order.
    pub fn running_stats(&self) -> Vec<(String, &BatchNorm<T>)> {
        let mut out: Vec<(String, &BatchNorm<T>)> = vec![("data_bn".to_string(), &self.data_bn)];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.gcn_bn"), &b.gcn_bn));
            out.push((format!("block{i}.tcn_bn"), &b.tcn_bn));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn channels_at_block(&self, block: usize) -> usize {
        self.config.block_channels[block]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::rig_edges;
    use rand::SeedableRng;

    fn tiny_backbone() -> Backbone<f64> {
        let graph = SkeletonGraph::new(&rig_edges(), 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        Backbone::new(BackboneConfig::tiny(4, 11), &graph, &mut rng)
    }

    #[test]
    fn forward_shape_and_determinism() {
        let bb = tiny_backbone();
        let x = Tensor::new(&[3, 16, 11], (0..3 * 16 * 11).map(|v| (v as f64 * 0.11).sin()).collect());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (l1, taps) = bb.forward(&x, Mode::Eval, &[], &mut rng);
        assert_eq!(l1.shape(), &[4]);
        assert!(taps.is_empty());
        let (l2, _) = bb.forward(&x, Mode::Eval, &[], &mut rng);
        for (a, b) in l1.to_vec().iter().zip(l2.to_vec()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn taps_do_not_perturb_logits() {
        let bb = tiny_backbone();
        let x = Tensor::new(&[3, 12, 11], (0..3 * 12 * 11).map(|v| (v as f64 * 0.07).cos()).collect());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (l_no, _) = bb.forward(&x, Mode::Eval, &[], &mut rng);
        let (l_all, taps) = bb.forward(&x, Mode::Eval, &[0, 1], &mut rng);
        assert_eq!(taps.len(), 2);
        assert_eq!(taps[1].feature.shape(), &[16, 12, 11]);
        for (a, b) in l_no.to_vec().iter().zip(l_all.to_vec()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    #[should_panic(expected = "tap index")]
    fn tap_out_of_range_rejected() {
        let bb = tiny_backbone();
        let x = Tensor::zeros(&[3, 8, 11]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let _ = bb.forward(&x, Mode::Eval, &[5], &mut rng);
    }

    #[test]
    fn tiny_param_count_under_60k() {
        let bb = tiny_backbone();
        let n = bb.param_count();
        assert!(n <= 60_000, "tiny backbone has {n} params");
    }

    #[test]
    fn paper_scale_param_count_near_ctr_gcn() {
        let edges: Vec<(usize, usize)> = (0..24).map(|i| (i, i + 1)).collect();
        let graph = SkeletonGraph::new(&edges, 25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bb: Backbone<f32> = Backbone::new(BackboneConfig::paper_scale(120, 25), &graph, &mut rng);
        let n = bb.param_count() as f64;
        let reference = 1.46e6;
        assert!(
            (n - reference).abs() / reference <= 0.10,
            "paper-scale backbone has {n} params, expected within 10% of {reference}"
        );
    }

    /// Per-channel normalization with the default BN eps, for expectations.
    fn normalize_channels(x: &[f64], channels: usize) -> Vec<f64> {
        let rest = x.len() / channels;
        let mut out = vec![0.0; x.len()];
        for ch in 0..channels {
            let sl = &x[ch * rest..(ch + 1) * rest];
            let mean = sl.iter().sum::<f64>() / rest as f64;
            let var = sl.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rest as f64;
            for (k, v) in sl.iter().enumerate() {
                out[ch * rest + k] = (v - mean) / (var + 1e-5).sqrt();
            }
        }
        out
    }

    #[test]
    fn gcn_identity_composition() {
        // Single-joint edgeless graph: A_norm = I, B = 0, W = I, so the block
        // reduces to ReLU(norm(x)) with the freshly initialized affine.
        let graph = SkeletonGraph::new(&[], 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut block = BasicBlock::<f64>::new(2, 2, 1, 1, 1, &mut rng);
        block.gcn_weight = Tensor::new_tracked(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        block.res_adj = Tensor::new_tracked(&[1, 1], vec![0.0]);
        let xv = vec![1.0, -2.0, 3.0, -4.0, 5.0, -6.0];
        let x = Tensor::new(&[2, 3, 1], xv.clone());
        let y = block.gcn_forward(&x, &graph.a_norm_tensor(), false);
        for (ni, yi) in normalize_channels(&xv, 2).iter().zip(y.to_vec()) {
            let expect = ni.max(0.0);
            assert!((yi - expect).abs() < 1e-6, "{yi} vs {expect}");
        }
        // All-zero input stays zero through the bias-free path.
        let z = block.gcn_forward(&Tensor::zeros(&[2, 3, 1]), &graph.a_norm_tensor(), false);
        assert!(z.to_vec().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn tcn_identity_kernel_adds_normalized_residual() {
        // 1x1 unit kernel: conv(x) = x, so the block computes
        // ReLU(norm(x) + x) through the identity residual.
        let graph_joints = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut block = BasicBlock::<f64>::new(1, 1, 1, 1, graph_joints, &mut rng);
        block.tcn_weight = Tensor::new_tracked(&[1, 1, 1, 1], vec![1.0]);
        let xv = vec![1.0, -1.0, 2.0, -2.0, 0.5, -0.5];
        let x = Tensor::new(&[1, 3, 2], xv.clone());
        let y = block.tcn_forward(&x, false);
        for ((ni, xi), yi) in normalize_channels(&xv, 1).iter().zip(&xv).zip(y.to_vec()) {
            let expect = (ni + xi).max(0.0);
            assert!((yi - expect).abs() < 1e-6, "{yi} vs {expect}");
        }
    }

    #[test]
    fn tcn_stride_halves_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let block = BasicBlock::<f64>::new(2, 2, 2, 9, 5, &mut rng);
        let x = Tensor::new(&[2, 20, 5], (0..200).map(|v| (v as f64 * 0.01).sin()).collect());
        let y = block.tcn_forward(&x, false);
        assert_eq!(y.shape(), &[2, 10, 5]);
    }

    #[test]
    #[should_panic(expected = "even tcn kernel rejected")]
    fn even_tcn_kernel_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let _ = BasicBlock::<f64>::new(2, 2, 1, 8, 5, &mut rng);
    }
}
