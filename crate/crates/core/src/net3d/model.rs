use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::head::SoftmaxHead;
use super::layers::{
    apply_batchnorm, batchnorm3d_backward, batchnorm_eval_stats, batchnorm_train_stats, conv3d,
    conv3d_backward, conv3d_reusing, fc_affine, fc_backward, l2normalize, l2normalize_backward, relu,
    relu_backward, BnCache,
};
use super::params::{ConvBlock, NetParams};
use super::tensor::{Matrix, Tensor5};
use super::{NetError, FEATURE_DIM, FLAT_WIDTH, PATCH};
use crate::sampler::PatchSet;

/// Patches per forward chunk during feature extraction.
const EVAL_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.01, momentum: 0.9, weight_decay: 5e-5, batch_size: 128, epochs: 1, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(NetError::BadConfig(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(NetError::BadConfig(format!("momentum {} must be in [0, 1)", self.momentum)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(NetError::BadConfig(format!("weight decay {} must be >= 0", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(NetError::BadConfig("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Gradients of the trainable tensors, in [`NetParams::trainable_mut`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub tensors: Vec<Vec<f32>>,
}

impl NetGrads {
    pub fn zeros_like(params: &NetParams) -> Self {
        Self { tensors: params.trainable_lens().into_iter().map(|n| vec![0.0; n]).collect() }
    }
}

/// Momentum SGD with L2 weight decay:
/// `v <- momentum * v - lr * (g + decay * theta)`, then `theta <- theta + v`.
pub fn sgd_step(theta: &mut [f32], grad: &[f32], velocity: &mut [f32], cfg: &TrainConfig) -> Result<(), NetError> {
    if theta.len() != grad.len() || theta.len() != velocity.len() {
        return Err(NetError::ShapeMismatch(format!(
            "sgd: {} params, {} grads, {} velocities",
            theta.len(),
            grad.len(),
            velocity.len()
        )));
    }
    let (lr, mom, wd) = (cfg.learning_rate as f32, cfg.momentum as f32, cfg.weight_decay as f32);
    for ((t, &g), v) in theta.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = mom * *v - lr * (g + wd * *t);
        *t += *v;
    }
    Ok(())
}

fn check_patch_size(patches: &PatchSet) -> Result<(), NetError> {
    if patches.patch_size() != PATCH {
        return Err(NetError::WrongPatchSize { expected: PATCH, found: patches.patch_size() });
    }
    Ok(())
}

fn check_poolable(t: &Tensor5<f32>) -> Result<(), NetError> {
    if t.spatial().iter().any(|&n| n < 2) {
        return Err(NetError::ShapeMismatch(format!("cannot pool spatial dims {:?}", t.spatial())));
    }
    Ok(())
}

fn gather(patches: &PatchSet, idx: &[usize]) -> Tensor5<f32> {
    let mut data = Vec::with_capacity(idx.len() * patches.patch_len());
    for &i in idx {
        data.extend_from_slice(patches.patch(i));
    }
    Tensor5::from_vec([idx.len(), 1, PATCH, PATCH, PATCH], data).unwrap()
}

fn relu_in_place(t: &mut Tensor5<f32>) {
    for v in t.data_mut() {
        *v = v.max(0.0);
    }
}

/// Folds batch-norm statistics into per-channel `(scale, shift)`.
fn bn_affine(cache: &BnCache<f32>, block: &ConvBlock) -> (Vec<f32>, Vec<f32>) {
    let scale: Vec<f32> = block.gamma.iter().zip(&cache.inv_std).map(|(g, s)| g * s).collect();
    let shift = block.beta.iter().zip(&scale).zip(&cache.mean).map(|((b, s), m)| b - s * m).collect();
    (scale, shift)
}

/// Batch norm (as `scale * y + shift`), ReLU and 2x2x2 max pooling in one pass.
/// `arg` holds the in-plane index of each window's first maximum.
fn bn_relu_pool(y: &Tensor5<f32>, scale: &[f32], shift: &[f32]) -> (Tensor5<f32>, Vec<u32>) {
    let d = y.spatial();
    let o = [d[0] / 2, d[1] / 2, d[2] / 2];
    let (in_len, out_len) = (y.spatial_len(), o[0] * o[1] * o[2]);
    let mut out = Tensor5::zeros([y.batch(), y.channels(), o[0], o[1], o[2]]);
    let mut arg = vec![0u32; y.batch() * y.channels() * out_len];
    let planes = y.data().chunks_exact(in_len).zip(out.data_mut().chunks_exact_mut(out_len));
    for (p, ((src, dst), am)) in planes.zip(arg.chunks_exact_mut(out_len)).enumerate() {
        let (sc, sh) = (scale[p % y.channels()], shift[p % y.channels()]);
        let mut t = 0;
        for oz in 0..o[2] {
            for oy in 0..o[1] {
                let row = |dz: usize, dy: usize| ((2 * oz + dz) * d[1] + 2 * oy + dy) * d[0];
                let rows = [row(0, 0), row(0, 1), row(1, 0), row(1, 1)];
                for ox in 0..o[0] {
                    let mut best = rows[0] + 2 * ox;
                    let mut bz = src[best] * sc + sh;
                    for (r, &base) in rows.iter().enumerate() {
                        for dx in usize::from(r == 0)..2 {
                            let i = base + 2 * ox + dx;
                            let z = src[i] * sc + sh;
                            let better = z > bz;
                            bz = if better { z } else { bz };
                            best = if better { i } else { best };
                        }
                    }
                    dst[t] = bz.max(0.0);
                    am[t] = best as u32;
                    t += 1;
                }
            }
        }
    }
    (out, arg)
}

/// Training-mode gradient of [`bn_relu_pool`] with respect to `y`, plus the
/// gamma and beta gradients.
fn bn_relu_pool_backward(
    y: &Tensor5<f32>,
    cache: &BnCache<f32>,
    gamma: &[f32],
    pooled: &Tensor5<f32>,
    arg: &[u32],
    dpool: &[f32],
    mut buf: Vec<f32>,
) -> (Tensor5<f32>, Vec<f32>, Vec<f32>) {
    let ch = y.channels();
    let (in_len, out_len) = (y.spatial_len(), pooled.spatial_len());
    let count = (y.batch() * in_len) as f32;
    let mut sum_dy = vec![0.0f32; ch];
    let mut sum_dy_xhat = vec![0.0f32; ch];
    let live = pooled.data().chunks_exact(out_len).zip(dpool.chunks_exact(out_len)).zip(arg.chunks_exact(out_len));
    for (p, ((pv, gv), av)) in live.enumerate() {
        let c = p % ch;
        let src = &y.data()[p * in_len..(p + 1) * in_len];
        let (mut a, mut q) = (0.0f32, 0.0f32);
        for ((&v, &g), &i) in pv.iter().zip(gv).zip(av) {
            if v > 0.0 {
                a += g;
                q += g * (src[i as usize] - cache.mean[c]);
            }
        }
        sum_dy[c] += a;
        sum_dy_xhat[c] += q * cache.inv_std[c];
    }
    buf.resize(y.data().len(), 0.0);
    let mut dy = Tensor5::from_vec(y.shape(), buf).unwrap();
    let planes = y.data().chunks_exact(in_len).zip(dy.data_mut().chunks_exact_mut(in_len));
    for (p, (src, dst)) in planes.enumerate() {
        let c = p % ch;
        let (m, is) = (cache.mean[c], cache.inv_std[c]);
        let k = gamma[c] * is / count;
        // k * (count * g - a - xhat * q) split into a dense affine part and sparse winners
        let slope = -k * sum_dy_xhat[c] * is;
        let offset = -k * sum_dy[c] - slope * m;
        for (d, &x) in dst.iter_mut().zip(src) {
            *d = offset + slope * x;
        }
        let pv = &pooled.data()[p * out_len..(p + 1) * out_len];
        let gv = &dpool[p * out_len..(p + 1) * out_len];
        let av = &arg[p * out_len..(p + 1) * out_len];
        for ((&v, &g), &i) in pv.iter().zip(gv).zip(av) {
            if v > 0.0 {
                dst[i as usize] += k * count * g;
            }
        }
    }
    (dy, sum_dy_xhat, sum_dy)
}

fn eval_conv_stage(x: &Tensor5<f32>, block: &ConvBlock) -> Result<Tensor5<f32>, NetError> {
    let mut y = conv3d(x, &block.kernels, &block.bias)?;
    let cache = batchnorm_eval_stats(&block.running_mean, &block.running_var);
    apply_batchnorm(&mut y, &cache, &block.gamma, &block.beta);
    relu_in_place(&mut y);
    Ok(y)
}

/// Inference forward pass with frozen batch-norm statistics. When `shapes`
/// is given, the output shape of every stage is appended to it.
fn forward_eval(
    params: &NetParams,
    input: &Tensor5<f32>,
    mut shapes: Option<&mut Vec<Vec<usize>>>,
    scratch: &mut Vec<f32>,
) -> Result<Matrix<f32>, NetError> {
    let mut record = |s: &[usize]| {
        if let Some(v) = shapes.as_deref_mut() {
            v.push(s.to_vec());
        }
    };
    let n = input.batch();
    let c1 = &params.conv[0];
    let y1 = conv3d_reusing(input, &c1.kernels, &c1.bias, std::mem::take(scratch))?;
    record(&y1.shape()[1..]);
    check_poolable(&y1)?;
    let (scale, shift) = bn_affine(&batchnorm_eval_stats(&c1.running_mean, &c1.running_var), c1);
    let (p1, _) = bn_relu_pool(&y1, &scale, &shift);
    *scratch = y1.into_vec();
    record(&p1.shape()[1..]);
    let a2 = eval_conv_stage(&p1, &params.conv[1])?;
    record(&a2.shape()[1..]);
    let a3 = eval_conv_stage(&a2, &params.conv[2])?;
    record(&a3.shape()[1..]);
    let flat = Matrix::from_vec(n, a3.channels() * a3.spatial_len(), a3.into_vec())?;
    record(&[flat.cols()]);
    let mut h1 = fc_affine(&flat, &params.fc1.weights, &params.fc1.bias)?;
    for v in h1.data_mut() {
        *v = v.max(0.0);
    }
    record(&[h1.cols()]);
    let h2 = fc_affine(&h1, &params.fc2.weights, &params.fc2.bias)?;
    record(&[h2.cols()]);
    let (f, _) = l2normalize(&h2);
    record(&[f.cols()]);
    Ok(f)
}

/// Maps every patch to its 160-d unit-norm representation (eval mode).
pub fn forward_features(params: &NetParams, patches: &PatchSet) -> Result<Matrix<f32>, NetError> {
    check_patch_size(patches)?;
    let idx: Vec<usize> = (0..patches.len()).collect();
    let chunks: Vec<Matrix<f32>> = idx
        .par_chunks(EVAL_CHUNK)
        .map_init(Vec::new, |scratch, chunk| forward_eval(params, &gather(patches, chunk), None, scratch))
        .collect::<Result<_, _>>()?;
    let mut data = Vec::with_capacity(patches.len() * FEATURE_DIM);
    for c in chunks {
        data.extend(c.into_vec());
    }
    Matrix::from_vec(patches.len(), FEATURE_DIM, data)
}

/// Stage output shapes (without the batch axis) for a single patch, ending
/// with the feature width.
pub fn shape_chain(params: &NetParams, patch: &[f32]) -> Result<(Vec<Vec<usize>>, Vec<f32>), NetError> {
    if patch.len() != PATCH * PATCH * PATCH {
        return Err(NetError::ShapeMismatch(format!("patch has {} values", patch.len())));
    }
    let input = Tensor5::from_vec([1, 1, PATCH, PATCH, PATCH], patch.to_vec())?;
    let mut shapes = vec![input.shape()[1..].to_vec()];
    let f = forward_eval(params, &input, Some(&mut shapes), &mut Vec::new())?;
    Ok((shapes, f.into_vec()))
}

/// Training-mode batch-norm followed by ReLU, keeping what backward needs.
struct BnStage {
    pre: Tensor5<f32>,
    cache: BnCache<f32>,
}

fn train_bn_relu(pre: Tensor5<f32>, block: &mut ConvBlock) -> Result<(BnStage, Tensor5<f32>), NetError> {
    let cache = batchnorm_train_stats(&pre, &mut block.running_mean, &mut block.running_var)?;
    let mut act = pre.clone();
    apply_batchnorm(&mut act, &cache, &block.gamma, &block.beta);
    relu_in_place(&mut act);
    Ok((BnStage { pre, cache }, act))
}

struct BatchResult {
    loss: f32,
    grads: NetGrads,
    head_w: Vec<f32>,
    head_b: Vec<f32>,
}

/// First-stage buffers kept between batches; they dominate memory traffic.
#[derive(Default)]
struct Scratch {
    y1: Vec<f32>,
    dy1: Vec<f32>,
}

/// Full training-mode forward and backward pass over one mini-batch.
/// Updates the batch-norm running statistics as a side effect.
fn batch_gradients(
    params: &mut NetParams,
    head: &SoftmaxHead<f32>,
    input: &Tensor5<f32>,
    labels: &[usize],
    scratch: &mut Scratch,
) -> Result<BatchResult, NetError> {
    let n = input.batch();
    let [c1, c2, c3] = &mut params.conv;

    let y1 = conv3d_reusing(input, &c1.kernels, &c1.bias, std::mem::take(&mut scratch.y1))?;
    check_poolable(&y1)?;
    let cache1 = batchnorm_train_stats(&y1, &mut c1.running_mean, &mut c1.running_var)?;
    let (scale, shift) = bn_affine(&cache1, c1);
    let (p1, arg1) = bn_relu_pool(&y1, &scale, &shift);
    let y2 = conv3d(&p1, &c2.kernels, &c2.bias)?;
    let (s2, a2) = train_bn_relu(y2, c2)?;
    let y3 = conv3d(&a2, &c3.kernels, &c3.bias)?;
    let (s3, a3) = train_bn_relu(y3, c3)?;
    let flat = Matrix::from_vec(n, FLAT_WIDTH, a3.into_vec())?;
    let h1 = fc_affine(&flat, &params.fc1.weights, &params.fc1.bias)?;
    let r1 = Matrix::from_vec(n, h1.cols(), relu(h1.data()))?;
    let h2 = fc_affine(&r1, &params.fc2.weights, &params.fc2.bias)?;
    let (f, norms) = l2normalize(&h2);
    let out = head.loss(&f, labels)?;

    let dh2 = l2normalize_backward(&f, &norms, &out.features);
    let g_fc2 = fc_backward(&r1, &params.fc2.weights, &dh2);
    let dh1 = Matrix::from_vec(n, h1.cols(), relu_backward(h1.data(), g_fc2.input.data()))?;
    let g_fc1 = fc_backward(&flat, &params.fc1.weights, &dh1);

    // a3 > 0 exactly where its pre-activation is positive
    let dz3 = Tensor5::from_vec(s3.pre.shape(), relu_backward(flat.data(), g_fc1.input.data()))?;
    let g_bn3 = batchnorm3d_backward(&s3.pre, &s3.cache, &c3.gamma, &dz3);
    let g_c3 = conv3d_backward(&a2, &c3.kernels, &g_bn3.input, true)?;
    let dz2 = Tensor5::from_vec(a2.shape(), relu_backward(a2.data(), g_c3.input.as_ref().unwrap().data()))?;
    let g_bn2 = batchnorm3d_backward(&s2.pre, &s2.cache, &c2.gamma, &dz2);
    let g_c2 = conv3d_backward(&p1, &c2.kernels, &g_bn2.input, true)?;
    let dp1 = g_c2.input.as_ref().unwrap().data();
    let buf = std::mem::take(&mut scratch.dy1);
    let (dy1, dgamma1, dbeta1) = bn_relu_pool_backward(&y1, &cache1, &c1.gamma, &p1, &arg1, dp1, buf);
    scratch.y1 = y1.into_vec();
    let g_c1 = conv3d_backward(input, &c1.kernels, &dy1, false)?;
    scratch.dy1 = dy1.into_vec();

    let tensors = vec![
        g_c1.kernels.into_vec(),
        g_c1.bias,
        dgamma1,
        dbeta1,
        g_c2.kernels.into_vec(),
        g_c2.bias,
        g_bn2.gamma,
        g_bn2.beta,
        g_c3.kernels.into_vec(),
        g_c3.bias,
        g_bn3.gamma,
        g_bn3.beta,
        g_fc1.weights.into_vec(),
        g_fc1.bias,
        g_fc2.weights.into_vec(),
        g_fc2.bias,
    ];
    Ok(BatchResult {
        loss: out.loss,
        grads: NetGrads { tensors },
        head_w: out.weights.into_vec(),
        head_b: out.bias,
    })
}

/// Mini-batch SGD driver. Holds the classifier head and momentum buffers
/// between calls; the head is rebuilt when the number of classes changes.
pub struct Trainer {
    cfg: TrainConfig,
    head: Option<SoftmaxHead<f32>>,
    head_velocity: (Vec<f32>, Vec<f32>),
    velocity: Option<Vec<Vec<f32>>>,
    rng: ChaCha8Rng,
    heads_built: u64,
    scratch: Scratch,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self, NetError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            head: None,
            head_velocity: (Vec::new(), Vec::new()),
            velocity: None,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            heads_built: 0,
            scratch: Scratch::default(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn head(&self) -> Option<&SoftmaxHead<f32>> {
        self.head.as_ref()
    }

    fn ensure_head(&mut self, classes: usize) {
        if self.head.as_ref().is_some_and(|h| h.classes() == classes) {
            return;
        }
        self.heads_built += 1;
        let seed = self.cfg.seed ^ self.heads_built.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let head = SoftmaxHead::new(classes, FEATURE_DIM, seed);
        self.head_velocity = (vec![0.0; head.weights.data().len()], vec![0.0; classes]);
        self.head = Some(head);
    }

    /// Runs `cfg.epochs` shuffled passes over the patches with `labels` as
    /// targets. Returns the mean loss of each epoch.
    pub fn train_epochs(
        &mut self,
        params: &mut NetParams,
        patches: &PatchSet,
        labels: &[usize],
    ) -> Result<Vec<f32>, NetError> {
        check_patch_size(patches)?;
        if labels.len() != patches.len() {
            return Err(NetError::LengthMismatch { labels: labels.len(), patches: patches.len() });
        }
        let classes = labels.iter().max().map_or(0, |&m| m + 1);
        let mut seen = vec![false; classes];
        for &l in labels {
            seen[l] = true;
        }
        if seen.iter().filter(|&&s| s).count() < 2 {
            return Err(NetError::SingleClass);
        }
        if self.cfg.epochs == 0 {
            return Ok(Vec::new());
        }
        self.ensure_head(classes);
        let velocity = self
            .velocity
            .get_or_insert_with(|| params.trainable_lens().into_iter().map(|n| vec![0.0; n]).collect());

        params.training = true;
        let mut history = Vec::with_capacity(self.cfg.epochs);
        let mut order: Vec<usize> = (0..patches.len()).collect();
        for _ in 0..self.cfg.epochs {
            order.shuffle(&mut self.rng);
            let mut total = 0.0f64;
            for idx in order.chunks(self.cfg.batch_size) {
                let input = gather(patches, idx);
                let batch_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
                let head = self.head.as_mut().unwrap();
                let r = match batch_gradients(params, head, &input, &batch_labels, &mut self.scratch) {
                    Ok(r) => r,
                    Err(e) => {
                        params.training = false;
                        return Err(e);
                    }
                };
                total += f64::from(r.loss) * idx.len() as f64;
                for ((theta, g), v) in params.trainable_mut().into_iter().zip(&r.grads.tensors).zip(velocity.iter_mut()) {
                    sgd_step(theta, g, v, &self.cfg)?;
                }
                sgd_step(head.weights.data_mut(), &r.head_w, &mut self.head_velocity.0, &self.cfg)?;
                sgd_step(&mut head.bias, &r.head_b, &mut self.head_velocity.1, &self.cfg)?;
            }
            history.push((total / patches.len() as f64) as f32);
        }
        params.training = false;
        Ok(history)
    }
}

/// One-shot training with a fresh [`Trainer`].
pub fn train_epochs(
    params: &mut NetParams,
    patches: &PatchSet,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<f32>, NetError> {
    Trainer::new(*cfg)?.train_epochs(params, patches, labels)
}
