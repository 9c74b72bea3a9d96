//! One branch CNN: four conv blocks, two fully connected layers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::layers::*;
use crate::real::Real;
use crate::NetConfig;

pub const INPUT_SHAPE: Shape = Shape::new(1, playstyle_core::heatmap::ROWS, playstyle_core::heatmap::COLS);

pub const CONV_NAMES: [&str; 8] = ["conv1a", "conv1b", "conv2a", "conv2b", "conv3a", "conv3b", "conv4a", "conv4b"];

/// Conv layer geometry for channel widths `[c1, c2, c3, c4]`.
pub fn conv_specs(ch: [usize; 4]) -> [ConvSpec; 8] {
    let sq = |cin, cout| ConvSpec { cin, cout, kh: 3, kw: 3, ph: 1, pw: 1 };
    [
        ConvSpec { cin: 1, cout: ch[0], kh: 2, kw: 3, ph: 1, pw: 0 },
        sq(ch[0], ch[0]),
        sq(ch[0], ch[1]),
        sq(ch[1], ch[1]),
        ConvSpec { cin: ch[1], cout: ch[2], kh: 2, kw: 3, ph: 1, pw: 1 },
        sq(ch[2], ch[2]),
        sq(ch[2], ch[3]),
        sq(ch[3], ch[3]),
    ]
}

/// Layer name and output shape (channels, height, width) in forward order.
pub type ShapeTrace = Vec<(String, Shape)>;

#[derive(Debug, Clone, PartialEq)]
pub struct Branch<T> {
    pub convs: Vec<Conv<T>>,
    /// One per conv layer, then one for FC1.
    pub bns: Vec<BatchNorm<T>>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BranchCache<T> {
    n: usize,
    input: Vec<T>,
    conv: Vec<BnCache<T>>,
    /// Post-dropout input of conv blocks 2..4 and the flattened FC1 input.
    stage_out: Vec<Vec<T>>,
    pool_arg: Vec<Vec<u8>>,
    masks: Vec<Vec<T>>,
    fc1: BnCache<T>,
    pub stats: Vec<BnStats<T>>,
    pub trace: ShapeTrace,
}

impl<T: Real> Branch<T> {
    pub fn init<R: Rng>(cfg: &NetConfig, rng: &mut R) -> Self {
        let specs = conv_specs(cfg.channels);
        let convs = specs.iter().map(|s| Conv::init(*s, rng)).collect();
        let mut bns: Vec<BatchNorm<T>> = specs.iter().map(|s| BatchNorm::new(s.cout)).collect();
        bns.push(BatchNorm::new(cfg.fc_hidden));
        let flat = cfg.flat_len();
        Self {
            convs,
            bns,
            fc1: Linear::init(flat, cfg.fc_hidden, rng),
            fc2: Linear::init(cfg.fc_hidden, cfg.embed_dim, rng),
        }
    }

    /// Same shapes as [`Branch::init`], all zeros (gradient accumulator).
    pub fn zeros(cfg: &NetConfig) -> Self {
        let specs = conv_specs(cfg.channels);
        let mut bns: Vec<BatchNorm<T>> = specs.iter().map(|s| BatchNorm::zeros(s.cout)).collect();
        bns.push(BatchNorm::zeros(cfg.fc_hidden));
        Self {
            convs: specs.iter().map(|s| Conv::zeros(*s)).collect(),
            bns,
            fc1: Linear::zeros(cfg.flat_len(), cfg.fc_hidden),
            fc2: Linear::zeros(cfg.fc_hidden, cfg.embed_dim),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.fc2.fan_out
    }

    /// Trainable tensors with stable names, in checkpoint order.
    pub fn params(&self) -> Vec<(String, &[T])> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("{}.weight", CONV_NAMES[i]), c.weight.as_slice()));
            out.push((format!("{}.bias", CONV_NAMES[i]), c.bias.as_slice()));
            out.push((format!("{}.bn.gamma", CONV_NAMES[i]), self.bns[i].gamma.as_slice()));
            out.push((format!("{}.bn.beta", CONV_NAMES[i]), self.bns[i].beta.as_slice()));
        }
        out.push(("fc1.weight".into(), self.fc1.weight.as_slice()));
        out.push(("fc1.bias".into(), self.fc1.bias.as_slice()));
        out.push(("fc1.bn.gamma".into(), self.bns[8].gamma.as_slice()));
        out.push(("fc1.bn.beta".into(), self.bns[8].beta.as_slice()));
        out.push(("fc2.weight".into(), self.fc2.weight.as_slice()));
        out.push(("fc2.bias".into(), self.fc2.bias.as_slice()));
        out
    }

    /// Mutable view of the tensors of [`Branch::params`], same order.
    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = Vec::new();
        let (conv_bns, fc_bn) = self.bns.split_at_mut(8);
        for (c, bn) in self.convs.iter_mut().zip(conv_bns.iter_mut()) {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
            out.push(&mut bn.gamma);
            out.push(&mut bn.beta);
        }
        let fc_bn = &mut fc_bn[0];
        out.push(&mut self.fc1.weight);
        out.push(&mut self.fc1.bias);
        out.push(&mut fc_bn.gamma);
        out.push(&mut fc_bn.beta);
        out.push(&mut self.fc2.weight);
        out.push(&mut self.fc2.bias);
        out
    }

    /// Running statistics with names, in checkpoint order.
    pub fn buffers(&self) -> Vec<(String, &[T])> {
        let mut out = Vec::new();
        for (i, bn) in self.bns.iter().enumerate() {
            let name = CONV_NAMES.get(i).copied().unwrap_or("fc1");
            out.push((format!("{name}.bn.running_mean"), bn.running_mean.as_slice()));
            out.push((format!("{name}.bn.running_var"), bn.running_var.as_slice()));
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = Vec::new();
        for bn in &mut self.bns {
            out.push(&mut bn.running_mean);
            out.push(&mut bn.running_var);
        }
        out
    }

    /// Training-mode forward over `n` inputs of 35×50 with batch statistics
    /// and dropout drawn from `rng`.
    pub fn forward_train(&self, x: &[T], n: usize, cfg: &NetConfig, rng: &mut ChaCha8Rng) -> (Vec<T>, BranchCache<T>) {
        assert_eq!(x.len(), n * INPUT_SHAPE.len(), "branch input length");
        let mut trace = ShapeTrace::new();
        let mut conv_caches: Vec<BnCache<T>> = Vec::with_capacity(8);
        let mut stats = Vec::with_capacity(9);
        let mut stage_out: Vec<Vec<T>> = Vec::with_capacity(4);
        let mut pool_arg = Vec::with_capacity(3);
        let mut masks = Vec::with_capacity(4);
        let mut s = INPUT_SHAPE;
        for stage in 0..4 {
            for j in 0..2 {
                let li = 2 * stage + j;
                let input: &[T] = match (stage, j) {
                    (0, 0) => x,
                    (_, 0) => &stage_out[stage - 1],
                    _ => &conv_caches[li - 1].out,
                };
                let z = conv_forward(&self.convs[li], input, n, s);
                s = self.convs[li].spec.out_shape(s);
                let (cache, st) = bn_relu_train(&self.bns[li], z, n, s.c, s.plane(), cfg.bn_eps);
                trace.push((CONV_NAMES[li].to_string(), s));
                conv_caches.push(cache);
                stats.push(st);
            }
            let last = &conv_caches[2 * stage + 1].out;
            let mut next = if stage < 3 {
                let (p, arg) = maxpool_forward(last, n, s);
                pool_arg.push(arg);
                s = Shape::new(s.c, s.h / 2, s.w / 2);
                trace.push((format!("pool{}", stage + 1), s));
                p
            } else {
                last.clone()
            };
            masks.push(dropout_forward(&mut next, cfg.dropout, rng));
            stage_out.push(next);
        }
        let flat = &stage_out[3];
        trace.push(("flatten".into(), Shape::new(s.len(), 1, 1)));
        let h = linear_forward(&self.fc1, flat, n);
        let (fc1, st) = bn_relu_train(&self.bns[8], h, n, self.fc1.fan_out, 1, cfg.bn_eps);
        stats.push(st);
        trace.push(("fc1".into(), Shape::new(self.fc1.fan_out, 1, 1)));
        let out = linear_forward(&self.fc2, &fc1.out, n);
        trace.push(("fc2".into(), Shape::new(self.fc2.fan_out, 1, 1)));
        let cache = BranchCache {
            n,
            input: x.to_vec(),
            conv: conv_caches,
            stage_out,
            pool_arg,
            masks,
            fc1,
            stats,
            trace,
        };
        (out, cache)
    }

    /// Inference-mode forward: running statistics, no dropout.
    pub fn forward_infer(&self, x: &[T], n: usize, cfg: &NetConfig) -> Vec<T> {
        assert_eq!(x.len(), n * INPUT_SHAPE.len(), "branch input length");
        let mut s = INPUT_SHAPE;
        let mut cur = x.to_vec();
        for stage in 0..4 {
            for j in 0..2 {
                let li = 2 * stage + j;
                let mut z = conv_forward(&self.convs[li], &cur, n, s);
                s = self.convs[li].spec.out_shape(s);
                bn_relu_infer(&self.bns[li], &mut z, s.c, s.plane(), cfg.bn_eps);
                cur = z;
            }
            if stage < 3 {
                cur = maxpool_forward(&cur, n, s).0;
                s = Shape::new(s.c, s.h / 2, s.w / 2);
            }
        }
        let mut h = linear_forward(&self.fc1, &cur, n);
        bn_relu_infer(&self.bns[8], &mut h, self.fc1.fan_out, 1, cfg.bn_eps);
        linear_forward(&self.fc2, &h, n)
    }

    /// Gradients of every trainable tensor given the output gradient
    /// (`n × out_dim`). Running statistics of the result are zero.
    pub fn backward(&self, cache: &BranchCache<T>, dout: &[T], cfg: &NetConfig) -> Branch<T> {
        let n = cache.n;
        let mut g = Branch::zeros(cfg);
        let (dw, db, mut d) = linear_backward(&self.fc2, &cache.fc1.out, n, dout);
        g.fc2.weight = dw;
        g.fc2.bias = db;
        let (dg, dbeta) = bn_relu_backward(&self.bns[8], &cache.fc1, &mut d, n, 1);
        g.bns[8].gamma = dg;
        g.bns[8].beta = dbeta;
        let flat = &cache.stage_out[3];
        let (dw, db, mut d) = linear_backward(&self.fc1, flat, n, &d);
        g.fc1.weight = dw;
        g.fc1.bias = db;
        let shapes = self.conv_shapes();
        for stage in (0..4).rev() {
            for (v, m) in d.iter_mut().zip(&cache.masks[stage]) {
                *v = *v * *m;
            }
            if stage < 3 {
                d = maxpool_backward(&d, &cache.pool_arg[stage], n, shapes[2 * stage + 1].1);
            }
            for j in (0..2).rev() {
                let li = 2 * stage + j;
                let (dg, dbeta) = bn_relu_backward(&self.bns[li], &cache.conv[li], &mut d, n, shapes[li].1.plane());
                g.bns[li].gamma = dg;
                g.bns[li].beta = dbeta;
                let (in_shape, _) = shapes[li];
                let input: &[T] = match (stage, j) {
                    (0, 0) => &cache.input,
                    (_, 0) => &cache.stage_out[stage - 1],
                    _ => &cache.conv[li - 1].out,
                };
                let (dw, db, dx) = conv_backward(&self.convs[li], input, n, in_shape, &d, li > 0);
                g.convs[li].weight = dw;
                g.convs[li].bias = db;
                if let Some(dx) = dx {
                    d = dx;
                }
            }
        }
        g
    }

    /// (input shape, output shape) of each conv layer.
    fn conv_shapes(&self) -> Vec<(Shape, Shape)> {
        let mut s = INPUT_SHAPE;
        let mut out = Vec::with_capacity(8);
        for (li, c) in self.convs.iter().enumerate() {
            let o = c.spec.out_shape(s);
            out.push((s, o));
            s = if li % 2 == 1 && li < 7 { Shape::new(o.c, o.h / 2, o.w / 2) } else { o };
        }
        out
    }

    /// Smallest distance of any ReLU input in `cache` from zero.
    pub fn relu_margin(&self, cache: &BranchCache<T>) -> f64 {
        let mut m = f64::INFINITY;
        for (bn, c) in self.bns.iter().zip(cache.conv.iter().chain(std::iter::once(&cache.fc1))) {
            let hw = c.x_hat.len() / (cache.n * bn.channels());
            for (blk, xs) in c.x_hat.chunks(hw).enumerate() {
                let ch = blk % bn.channels();
                for x in xs {
                    m = m.min((bn.gamma[ch] * *x + bn.beta[ch]).to_f64c().abs());
                }
            }
        }
        m
    }

    pub fn apply_stats(&mut self, stats: &[BnStats<T>], momentum: f64) {
        let m = T::from_f64c(momentum);
        for (bn, st) in self.bns.iter_mut().zip(stats) {
            bn.update_running(st, m);
        }
    }
}

/// Signature of every data-dependent branch point (ReLU signs, pooling
/// argmaxes). Two forwards with equal signatures lie on the same linear
/// piece of the network.
pub fn kink_signature<T: Real>(cache: &BranchCache<T>) -> Vec<u8> {
    let mut sig = Vec::new();
    for c in cache.conv.iter().chain(std::iter::once(&cache.fc1)) {
        sig.extend(c.out.iter().map(|v| u8::from(*v > T::zero())));
    }
    for a in &cache.pool_arg {
        sig.extend_from_slice(a);
    }
    sig
}
