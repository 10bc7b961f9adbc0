//! Parameter layout, initialization, forward and backward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{self, BnCache, ConvShape};
use super::{HeadKind, ModelConfig, DEMO_FEATURES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseSlot {
    pub nin: usize,
    pub nout: usize,
    pub w: usize,
    pub b: usize,
}

impl DenseSlot {
    fn alloc(nin: usize, nout: usize, next: &mut usize) -> Self {
        let w = *next;
        let b = w + nin * nout;
        *next = b + nout;
        Self { nin, nout, w, b }
    }
}

/// γ/β offsets into the parameters, mean/var offsets into the statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BnSlot {
    pub channels: usize,
    pub gamma: usize,
    pub beta: usize,
    pub mean: usize,
    pub var: usize,
}

impl BnSlot {
    fn alloc(channels: usize, next: &mut usize, next_stat: &mut usize) -> Self {
        let s = Self {
            channels,
            gamma: *next,
            beta: *next + channels,
            mean: *next_stat,
            var: *next_stat + channels,
        };
        *next += 2 * channels;
        *next_stat += 2 * channels;
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSlot {
    pub shape: ConvShape,
    pub w: usize,
    pub b: usize,
    pub bn: BnSlot,
}

/// Where every tensor lives in the flat parameter and statistics vectors,
/// in declaration order: conv blocks (kernel, bias, γ, β), CNN dense 1,
/// its batchnorm, CNN dense 2, MLP dense 1 and 2, head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub blocks: Vec<ConvSlot>,
    pub d1: DenseSlot,
    pub bn1: BnSlot,
    pub d2: DenseSlot,
    pub m1: DenseSlot,
    pub m2: DenseSlot,
    pub head: DenseSlot,
    pub n_params: usize,
    pub n_stats: usize,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (mut next, mut next_stat) = (0, 0);
        let (mut h, mut w) = (cfg.image_h, cfg.image_w);
        let mut cin = 1;
        let mut blocks = Vec::new();
        for &cout in &cfg.filters {
            let shape = ConvShape { cin, cout, h, w };
            let wo = next;
            let bo = wo + shape.n_weights();
            next = bo + cout;
            let bn = BnSlot::alloc(cout, &mut next, &mut next_stat);
            blocks.push(ConvSlot { shape, w: wo, b: bo, bn });
            cin = cout;
            h = layers::pooled_len(h);
            w = layers::pooled_len(w);
        }
        let d1 = DenseSlot::alloc(cfg.flatten_len(), cfg.cnn_dense1, &mut next);
        let bn1 = BnSlot::alloc(cfg.cnn_dense1, &mut next, &mut next_stat);
        let d2 = DenseSlot::alloc(cfg.cnn_dense1, cfg.cnn_dense2, &mut next);
        let m1 = DenseSlot::alloc(DEMO_FEATURES, cfg.mlp_widths[0], &mut next);
        let m2 = DenseSlot::alloc(cfg.mlp_widths[0], cfg.mlp_widths[1], &mut next);
        let head = DenseSlot::alloc(cfg.cnn_dense2 + cfg.mlp_widths[1], cfg.head.n_outputs(), &mut next);
        Self {
            blocks,
            d1,
            bn1,
            d2,
            m1,
            m2,
            head,
            n_params: next,
            n_stats: next_stat,
        }
    }

    fn bn_slots(&self) -> impl Iterator<Item = &BnSlot> {
        self.blocks.iter().map(|b| &b.bn).chain(std::iter::once(&self.bn1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics and dropout with masks drawn from `dropout_seed`.
    Train { dropout_seed: u64 },
    /// Running statistics, no dropout.
    Eval,
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Vec<f64>,
    relu_out: Vec<f64>,
    bn: Option<BnCache>,
    bn_out_len: usize,
    argmax: Vec<usize>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub batch: usize,
    blocks: Vec<BlockCache>,
    flat: Vec<f64>,
    d1_relu: Vec<f64>,
    bn1: Option<BnCache>,
    dropout_mask: Option<Vec<f64>>,
    d2_in: Vec<f64>,
    cnn_out: Vec<f64>,
    demos: Vec<f64>,
    m1_out: Vec<f64>,
    mlp_out: Vec<f64>,
    head_in: Vec<f64>,
    pub logits: Vec<f64>,
    /// Linear outputs (regression) or softmax probabilities.
    pub outputs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    /// Trainable tensors in layout order.
    pub params: Vec<f64>,
    /// Batchnorm running means and variances.
    pub stats: Vec<f64>,
    /// Regression outputs are `output_scale · logit`, so the network works
    /// near unit targets whatever the velocity range.
    pub output_scale: f64,
}

impl ForwardCache {
    /// Concatenated branch outputs feeding the head, row-major by sample.
    pub fn head_inputs(&self) -> &[f64] {
        &self.head_in
    }

    /// Hash of every ReLU on/off state and max-pool selection. Two passes
    /// with equal patterns lie in the same piecewise-smooth region.
    pub fn activation_pattern(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        let relus = self
            .blocks
            .iter()
            .map(|b| &b.relu_out)
            .chain([&self.d1_relu, &self.cnn_out, &self.m1_out, &self.mlp_out]);
        for r in relus {
            r.iter().for_each(|v| mix(u64::from(*v > 0.0)));
        }
        for b in &self.blocks {
            b.argmax.iter().for_each(|&i| mix(i as u64));
        }
        h
    }
}

pub fn dropout_mask(len: usize, rate: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 - rate;
    (0..len)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

impl FusionModel {
    /// He-uniform kernels for ReLU-fed layers, Glorot-uniform for the head,
    /// zero biases, γ = 1, β = 0, running mean 0 and variance 1.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let mut params = vec![0.0; layout.n_params];
        let mut stats = vec![0.0; layout.n_stats];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut fill = |off: usize, len: usize, limit: f64, params: &mut [f64]| {
            for p in &mut params[off..off + len] {
                *p = rng.gen_range(-limit..=limit);
            }
        };
        for b in &layout.blocks {
            let fan_in = (b.shape.cin * 9) as f64;
            fill(b.w, b.shape.n_weights(), (6.0 / fan_in).sqrt(), &mut params);
        }
        for d in [&layout.d1, &layout.d2, &layout.m1, &layout.m2] {
            fill(d.w, d.nin * d.nout, (6.0 / d.nin as f64).sqrt(), &mut params);
        }
        let h = &layout.head;
        fill(h.w, h.nin * h.nout, (6.0 / (h.nin + h.nout) as f64).sqrt(), &mut params);
        for bn in layout.bn_slots() {
            params[bn.gamma..bn.gamma + bn.channels].fill(1.0);
            stats[bn.var..bn.var + bn.channels].fill(1.0);
        }
        Ok(Self {
            config,
            layout,
            params,
            stats,
            output_scale: 1.0,
        })
    }

    pub fn n_params(&self) -> usize {
        self.layout.n_params
    }

    fn p(&self, off: usize, len: usize) -> &[f64] {
        &self.params[off..off + len]
    }

    pub fn image_len(&self) -> usize {
        self.config.image_h * self.config.image_w
    }

    /// `images`: batch × H × W; `demos`: batch × 4.
    pub fn forward(&self, images: &[f64], demos: &[f64], mode: Mode) -> Result<ForwardCache> {
        let cfg = &self.config;
        let eps = cfg.bn_eps;
        let batch = demos.len() / DEMO_FEATURES;
        if batch == 0 || demos.len() != batch * DEMO_FEATURES || images.len() != batch * self.image_len() {
            return Err(Error::invalid(format!(
                "batch shape mismatch: {} image values and {} demographic values for {}x{} images",
                images.len(),
                demos.len(),
                cfg.image_h,
                cfg.image_w
            )));
        }
        let train = matches!(mode, Mode::Train { .. });

        let bn = |x: &[f64], slot: &BnSlot, spatial: usize| -> (Vec<f64>, Option<BnCache>) {
            let g = self.p(slot.gamma, slot.channels);
            let b = self.p(slot.beta, slot.channels);
            if train {
                let (y, c) = layers::bn_forward_train(x, batch, slot.channels, spatial, g, b, eps);
                (y, Some(c))
            } else {
                let m = &self.stats[slot.mean..slot.mean + slot.channels];
                let v = &self.stats[slot.var..slot.var + slot.channels];
                (layers::bn_forward_eval(x, batch, slot.channels, spatial, g, b, m, v, eps), None)
            }
        };

        let mut a = images.to_vec();
        let mut blocks = Vec::with_capacity(self.layout.blocks.len());
        for (i, slot) in self.layout.blocks.iter().enumerate() {
            let s = slot.shape;
            let mut z = layers::conv_forward(
                s,
                &a,
                self.p(slot.w, s.n_weights()),
                self.p(slot.b, s.cout),
                batch,
            );
            layers::relu(&mut z);
            let (y, bn_cache) = bn(&z, &slot.bn, s.h * s.w);
            let (pooled, argmax) = layers::maxpool_forward(&y, batch * s.cout, s.h, s.w);
            layers::check_finite(&pooled, &format!("conv block {}", i + 1))?;
            blocks.push(BlockCache {
                input: std::mem::replace(&mut a, pooled),
                relu_out: z,
                bn: bn_cache,
                bn_out_len: y.len(),
                argmax,
            });
        }
        let flat = a;

        let l = &self.layout;
        let dense = |x: &[f64], d: &DenseSlot| {
            layers::dense_forward(x, batch, d.nin, d.nout, self.p(d.w, d.nin * d.nout), self.p(d.b, d.nout))
        };
        let mut d1_relu = dense(&flat, &l.d1);
        layers::relu(&mut d1_relu);
        let (mut d2_in, bn1) = bn(&d1_relu, &l.bn1, 1);
        let dropout_mask = match mode {
            Mode::Train { dropout_seed } if cfg.dropout > 0.0 => {
                let m = dropout_mask(d2_in.len(), cfg.dropout, dropout_seed);
                d2_in.iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
                Some(m)
            }
            _ => None,
        };
        let mut cnn_out = dense(&d2_in, &l.d2);
        layers::relu(&mut cnn_out);
        layers::check_finite(&cnn_out, "cnn dense")?;

        let mut m1_out = dense(demos, &l.m1);
        layers::relu(&mut m1_out);
        let mut mlp_out = dense(&m1_out, &l.m2);
        layers::relu(&mut mlp_out);
        layers::check_finite(&mlp_out, "mlp")?;

        let (nc, nm) = (l.d2.nout, l.m2.nout);
        let mut head_in = Vec::with_capacity(batch * (nc + nm));
        for b in 0..batch {
            head_in.extend_from_slice(&cnn_out[b * nc..(b + 1) * nc]);
            head_in.extend_from_slice(&mlp_out[b * nm..(b + 1) * nm]);
        }
        let logits = dense(&head_in, &l.head);
        layers::check_finite(&logits, "head")?;
        let outputs = match cfg.head {
            HeadKind::Regression => logits.iter().map(|v| v * self.output_scale).collect(),
            HeadKind::Classification => layers::softmax(&logits, batch, l.head.nout),
        };
        Ok(ForwardCache {
            batch,
            blocks,
            flat,
            d1_relu,
            bn1,
            dropout_mask,
            d2_in,
            cnn_out,
            demos: demos.to_vec(),
            m1_out,
            mlp_out,
            head_in,
            logits,
            outputs,
        })
    }

    /// Gradients of the loss for every trainable parameter. `grad` is the
    /// loss gradient at the outputs for a regression head and at the logits
    /// for a softmax head, whose Jacobian is folded into the cross-entropy
    /// gradient. Requires a train-mode cache.
    pub fn backward(&self, cache: &ForwardCache, grad: &[f64]) -> Result<Vec<f64>> {
        let grad_logits: Vec<f64> = match self.config.head {
            HeadKind::Regression => grad.iter().map(|g| g * self.output_scale).collect(),
            HeadKind::Classification => grad.to_vec(),
        };
        if grad_logits.len() != cache.logits.len() {
            return Err(Error::invalid("backward: gradient does not match the batch outputs"));
        }
        let bn1_cache = cache
            .bn1
            .as_ref()
            .ok_or_else(|| Error::invalid("backward needs a train-mode forward cache"))?;
        let batch = cache.batch;
        let l = &self.layout;
        let mut grad = vec![0.0; l.n_params];
        let grad_logits = &grad_logits[..];

        let dense_back = |x: &[f64], g: &[f64], d: &DenseSlot, grad: &mut Vec<f64>| {
            let (gw, rest) = grad[d.w..].split_at_mut(d.nin * d.nout);
            layers::dense_backward(x, g, batch, d.nin, d.nout, self.p(d.w, d.nin * d.nout), gw, &mut rest[..d.nout])
        };
        let bn_back = |c: &BnCache, g: &[f64], slot: &BnSlot, spatial: usize, grad: &mut Vec<f64>| {
            let (gg, rest) = grad[slot.gamma..].split_at_mut(slot.channels);
            layers::bn_backward(
                c,
                g,
                batch,
                slot.channels,
                spatial,
                self.p(slot.gamma, slot.channels),
                gg,
                &mut rest[..slot.channels],
            )
        };

        let d_head_in = dense_back(&cache.head_in, grad_logits, &l.head, &mut grad);
        let (nc, nm) = (l.d2.nout, l.m2.nout);
        let mut d_cnn = Vec::with_capacity(batch * nc);
        let mut d_mlp = Vec::with_capacity(batch * nm);
        for b in 0..batch {
            let row = &d_head_in[b * (nc + nm)..(b + 1) * (nc + nm)];
            d_cnn.extend_from_slice(&row[..nc]);
            d_mlp.extend_from_slice(&row[nc..]);
        }

        layers::relu_backward(&cache.mlp_out, &mut d_mlp);
        let mut d_m1 = dense_back(&cache.m1_out, &d_mlp, &l.m2, &mut grad);
        layers::relu_backward(&cache.m1_out, &mut d_m1);
        dense_back(&cache.demos, &d_m1, &l.m1, &mut grad);

        layers::relu_backward(&cache.cnn_out, &mut d_cnn);
        let mut d_d2_in = dense_back(&cache.d2_in, &d_cnn, &l.d2, &mut grad);
        if let Some(mask) = &cache.dropout_mask {
            d_d2_in.iter_mut().zip(mask).for_each(|(g, k)| *g *= k);
        }
        let mut d_d1 = bn_back(bn1_cache, &d_d2_in, &l.bn1, 1, &mut grad);
        layers::relu_backward(&cache.d1_relu, &mut d_d1);
        let mut d_a = dense_back(&cache.flat, &d_d1, &l.d1, &mut grad);

        for (i, (slot, bc)) in l.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let s = slot.shape;
            let d_y = layers::maxpool_backward(&d_a, &bc.argmax, bc.bn_out_len);
            let bnc = bc.bn.as_ref().expect("train-mode cache");
            let mut d_z = bn_back(bnc, &d_y, &slot.bn, s.h * s.w, &mut grad);
            layers::relu_backward(&bc.relu_out, &mut d_z);
            let (gw, rest) = grad[slot.w..].split_at_mut(s.n_weights());
            let d_in = layers::conv_backward(
                s,
                &bc.input,
                self.p(slot.w, s.n_weights()),
                &d_z,
                batch,
                gw,
                &mut rest[..s.cout],
                i > 0,
            );
            if let Some(d) = d_in {
                d_a = d;
            }
        }
        layers::check_finite(&grad, "gradient")?;
        Ok(grad)
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// estimates: running ← m·running + (1 − m)·batch.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        let m = self.config.bn_momentum;
        let pairs = self
            .layout
            .blocks
            .iter()
            .map(|b| b.bn)
            .zip(cache.blocks.iter().map(|b| b.bn.as_ref()))
            .chain(std::iter::once((self.layout.bn1, cache.bn1.as_ref())));
        let updates: Vec<(BnSlot, &BnCache)> = pairs.filter_map(|(s, c)| c.map(|c| (s, c))).collect();
        for (slot, c) in updates {
            for ch in 0..slot.channels {
                let rm = &mut self.stats[slot.mean + ch];
                *rm = m * *rm + (1.0 - m) * c.mean[ch];
                let rv = &mut self.stats[slot.var + ch];
                *rv = m * *rv + (1.0 - m) * c.var[ch];
            }
        }
    }
}
