//! Layer kernels with their exact backward passes.
//!
//! Convolutions are lowered to matrix products (im2col). Everything is
//! generic over [`Real`] so the same code is gradient-checked in `f64`.

use super::tensor::{Matrix, Real, Tensor5};
use super::NetError;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const L2_FLOOR: f64 = 1e-12;

fn shape_err(msg: String) -> NetError {
    NetError::ShapeMismatch(msg)
}

const LANES: usize = 8;

/// `sum f(x)` with independent partial sums so the loop vectorizes.
#[inline]
pub(crate) fn lane_sum<T: Real>(xs: &[T], f: impl Fn(T) -> T) -> T {
    let mut acc = [T::zero(); LANES];
    let mut chunks = xs.chunks_exact(LANES);
    for c in &mut chunks {
        for j in 0..LANES {
            acc[j] = acc[j] + f(c[j]);
        }
    }
    let tail = chunks.remainder().iter().fold(T::zero(), |a, &x| a + f(x));
    acc.iter().fold(tail, |a, &x| a + x)
}

/// Two-slice variant of [`lane_sum`].
#[inline]
pub(crate) fn lane_sum2<T: Real>(xs: &[T], ys: &[T], f: impl Fn(T, T) -> T) -> T {
    let mut acc = [T::zero(); LANES];
    let n = xs.len().min(ys.len());
    let full = n - n % LANES;
    for (a, b) in xs[..full].chunks_exact(LANES).zip(ys[..full].chunks_exact(LANES)) {
        for j in 0..LANES {
            acc[j] = acc[j] + f(a[j], b[j]);
        }
    }
    let tail = xs[full..n].iter().zip(&ys[full..n]).fold(T::zero(), |a, (&x, &y)| a + f(x, y));
    acc.iter().fold(tail, |a, &x| a + x)
}

/// Spatial extents of a kernel tensor `(out, in, kx, ky, kz)`.
fn kernel_dims<T: Real>(k: &Tensor5<T>) -> [usize; 3] {
    k.spatial()
}

fn conv_out_dims<T: Real>(input: &Tensor5<T>, kernels: &Tensor5<T>) -> Result<[usize; 3], NetError> {
    let d = input.spatial();
    let k = kernel_dims(kernels);
    if kernels.shape()[1] != input.channels() {
        return Err(shape_err(format!(
            "kernel expects {} input channels, input has {}",
            kernels.shape()[1],
            input.channels()
        )));
    }
    if (0..3).any(|a| d[a] < k[a]) {
        return Err(shape_err(format!("input spatial {d:?} smaller than kernel {k:?}")));
    }
    Ok([d[0] - k[0] + 1, d[1] - k[1] + 1, d[2] - k[2] + 1])
}

/// Scatters a `(channels * k^3) x out_spatial` column matrix back into an
/// input-shaped item, accumulating overlaps.
fn col2im<T: Real>(cols: &[T], channels: usize, d: [usize; 3], k: [usize; 3], o: [usize; 3], item: &mut [T]) {
    let p = o[0] * o[1] * o[2];
    let chan_len = d[0] * d[1] * d[2];
    let mut r = 0;
    for c in 0..channels {
        let dst = &mut item[c * chan_len..(c + 1) * chan_len];
        for kz in 0..k[2] {
            for ky in 0..k[1] {
                for kx in 0..k[0] {
                    let row = &cols[r * p..(r + 1) * p];
                    for oz in 0..o[2] {
                        for oy in 0..o[1] {
                            let s = ((oz + kz) * d[1] + oy + ky) * d[0] + kx;
                            let t = (oz * o[1] + oy) * o[0];
                            for (a, &b) in dst[s..s + o[0]].iter_mut().zip(&row[t..t + o[0]]) {
                                *a = *a + b;
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
    }
}

/// Inputs with at least this many channels are unfolded channel-last, which
/// turns the copies into long contiguous runs.
const CHANNEL_LAST_MIN: usize = 8;

/// Row-major `rows x cols` to `cols x rows`, in cache-sized blocks.
fn transpose<T: Real>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

fn to_channel_last<T: Real>(item: &[T], channels: usize, out: &mut [T]) {
    transpose(item, channels, item.len() / channels, out);
}

fn add_from_channel_last<T: Real>(cl: &[T], channels: usize, item: &mut [T]) {
    let s = item.len() / channels;
    for (c, plane) in item.chunks_exact_mut(s).enumerate() {
        for (i, v) in plane.iter_mut().enumerate() {
            *v = *v + cl[i * channels + c];
        }
    }
}

/// Unfolds a channel-last item into a `out_spatial x (k^3 * channels)` matrix
/// whose columns are ordered (kz, ky, kx, c).
fn im2row<T: Real>(cl: &[T], channels: usize, d: [usize; 3], k: [usize; 3], o: [usize; 3], rows: &mut [T]) {
    let width = k[0] * k[1] * k[2] * channels;
    let run = k[0] * channels;
    let mut t = 0;
    for oz in 0..o[2] {
        for oy in 0..o[1] {
            for ox in 0..o[0] {
                let dst = &mut rows[t * width..(t + 1) * width];
                for kz in 0..k[2] {
                    for ky in 0..k[1] {
                        let s = (((oz + kz) * d[1] + oy + ky) * d[0] + ox) * channels;
                        let r = (kz * k[1] + ky) * run;
                        dst[r..r + run].copy_from_slice(&cl[s..s + run]);
                    }
                }
                t += 1;
            }
        }
    }
}

/// Adjoint of [`im2row`].
fn row2im<T: Real>(rows: &[T], channels: usize, d: [usize; 3], k: [usize; 3], o: [usize; 3], cl: &mut [T]) {
    let width = k[0] * k[1] * k[2] * channels;
    let run = k[0] * channels;
    let mut t = 0;
    for oz in 0..o[2] {
        for oy in 0..o[1] {
            for ox in 0..o[0] {
                let src = &rows[t * width..(t + 1) * width];
                for kz in 0..k[2] {
                    for ky in 0..k[1] {
                        let s = (((oz + kz) * d[1] + oy + ky) * d[0] + ox) * channels;
                        let r = (kz * k[1] + ky) * run;
                        for (a, &b) in cl[s..s + run].iter_mut().zip(&src[r..r + run]) {
                            *a = *a + b;
                        }
                    }
                }
                t += 1;
            }
        }
    }
}

/// Kernel weights reordered from (in, kx, ky, kz) to (kz, ky, kx, in) per output channel.
fn kernels_channel_last<T: Real>(kernels: &Tensor5<T>) -> Vec<T> {
    let [out_ch, c_in, k0, k1, k2] = kernels.shape();
    let k3 = k0 * k1 * k2;
    let mut kp = vec![T::zero(); kernels.data().len()];
    for o in 0..out_ch {
        let src = &kernels.data()[o * c_in * k3..(o + 1) * c_in * k3];
        let dst = &mut kp[o * c_in * k3..(o + 1) * c_in * k3];
        for c in 0..c_in {
            for s in 0..k3 {
                dst[s * c_in + c] = src[c * k3 + s];
            }
        }
    }
    kp
}

/// Inverse reordering of [`kernels_channel_last`], accumulated into `dst`.
fn add_kernels_channel_first<T: Real>(kp: &[T], dst: &mut Tensor5<T>) {
    let [out_ch, c_in, k0, k1, k2] = dst.shape();
    let k3 = k0 * k1 * k2;
    for o in 0..out_ch {
        let src = &kp[o * c_in * k3..(o + 1) * c_in * k3];
        let d = &mut dst.data_mut()[o * c_in * k3..(o + 1) * c_in * k3];
        for c in 0..c_in {
            for s in 0..k3 {
                d[c * k3 + s] = d[c * k3 + s] + src[s * c_in + c];
            }
        }
    }
}

/// Valid (unpadded) stride-1 3D cross-correlation.
///
/// `kernels` has shape `(out, in, kx, ky, kz)`; output spatial extent is `d - k + 1` per axis.
pub fn conv3d<T: Real>(input: &Tensor5<T>, kernels: &Tensor5<T>, bias: &[T]) -> Result<Tensor5<T>, NetError> {
    let o = conv_out_dims(input, kernels)?;
    let out_ch = kernels.shape()[0];
    if bias.len() != out_ch {
        return Err(shape_err(format!("bias length {} != {out_ch} output channels", bias.len())));
    }
    let mut out = Tensor5::zeros([input.batch(), out_ch, o[0], o[1], o[2]]);
    conv3d_into(input, kernels, bias, &mut out);
    Ok(out)
}

/// [`conv3d`] into a preallocated output of the right shape.
fn conv3d_into<T: Real>(input: &Tensor5<T>, kernels: &Tensor5<T>, bias: &[T], out: &mut Tensor5<T>) {
    let (d, k, c_in) = (input.spatial(), kernel_dims(kernels), input.channels());
    let o = out.spatial();
    let out_ch = kernels.shape()[0];
    let rows = c_in * k[0] * k[1] * k[2];
    let p = o[0] * o[1] * o[2];
    if c_in >= CHANNEL_LAST_MIN {
        let mut cols = vec![T::zero(); rows * p];
        // out^T = rows(input) * K^T, with K^T laid out (kz, ky, kx, in) x out
        let mut kt = vec![T::zero(); rows * out_ch];
        transpose(&kernels_channel_last(kernels), out_ch, rows, &mut kt);
        let mut cl = vec![T::zero(); input.channels() * input.spatial_len()];
        let mut ct = vec![T::zero(); p * out_ch];
        for b in 0..input.batch() {
            to_channel_last(input.item(b), c_in, &mut cl);
            im2row(&cl, c_in, d, k, o, &mut cols);
            T::gemm(p, rows, out_ch, T::one(), &cols, rows as isize, 1, &kt, out_ch as isize, 1, T::zero(), &mut ct, out_ch as isize, 1);
            let dst = out.item_mut(b);
            transpose(&ct, p, out_ch, dst);
            for (oc, chunk) in dst.chunks_exact_mut(p).enumerate() {
                for v in chunk {
                    *v = *v + bias[oc];
                }
            }
        }
        return;
    }
    // Each output z-slice is one product whose right operand rows are the
    // input shifted by a kernel offset, over slices `d0` wide; the extra
    // `d0 - o0` columns per output row are discarded.
    let wide = WideSlab::new(c_in, d, k, o);
    let a_rows: Vec<usize> = (0..out_ch).map(|i| i * rows).collect();
    let mut cw = vec![T::zero(); out_ch * wide.n];
    let mut b_rows = vec![0; rows];
    for b in 0..input.batch() {
        let item = input.item(b);
        let dst = out.item_mut(b);
        for oz in 0..o[2] {
            wide.rows_at(oz, &mut b_rows);
            T::gemm_rows(rows, wide.n, kernels.data(), &a_rows, item, &b_rows, &mut cw, wide.n, false);
            for oc in 0..out_ch {
                for oy in 0..o[1] {
                    let src = &cw[oc * wide.n + oy * d[0]..][..o[0]];
                    let t = oc * p + (oz * o[1] + oy) * o[0];
                    for (v, &x) in dst[t..t + o[0]].iter_mut().zip(src) {
                        *v = x + bias[oc];
                    }
                }
            }
        }
    }
}

/// Geometry of the per-slice products used for narrow inputs.
struct WideSlab {
    /// Row offsets of the kernel taps (c, kz, ky, kx) relative to an output voxel.
    taps: Vec<usize>,
    /// `(o1 - 1) * d0 + o0` columns cover every output row of a slice.
    n: usize,
    plane: usize,
}

impl WideSlab {
    fn new(channels: usize, d: [usize; 3], k: [usize; 3], o: [usize; 3]) -> Self {
        let chan_len = d[0] * d[1] * d[2];
        let mut taps = Vec::with_capacity(channels * k[0] * k[1] * k[2]);
        for c in 0..channels {
            for kz in 0..k[2] {
                for ky in 0..k[1] {
                    for kx in 0..k[0] {
                        taps.push(c * chan_len + (kz * d[1] + ky) * d[0] + kx);
                    }
                }
            }
        }
        Self { taps, n: (o[1] - 1) * d[0] + o[0], plane: d[0] * d[1] }
    }

    fn rows_at(&self, oz: usize, out: &mut [usize]) {
        for (r, &t) in out.iter_mut().zip(&self.taps) {
            *r = t + oz * self.plane;
        }
    }
}

/// Convolution into a recycled buffer; `buf` is resized as needed.
pub(crate) fn conv3d_reusing<T: Real>(
    input: &Tensor5<T>,
    kernels: &Tensor5<T>,
    bias: &[T],
    mut buf: Vec<T>,
) -> Result<Tensor5<T>, NetError> {
    let o = conv_out_dims(input, kernels)?;
    let out_ch = kernels.shape()[0];
    if bias.len() != out_ch {
        return Err(shape_err(format!("bias length {} != {out_ch} output channels", bias.len())));
    }
    let shape = [input.batch(), out_ch, o[0], o[1], o[2]];
    buf.resize(shape.iter().product(), T::zero());
    let mut out = Tensor5::from_vec(shape, buf)?;
    conv3d_into(input, kernels, bias, &mut out);
    Ok(out)
}

pub struct ConvGrads<T> {
    /// Present only when requested; the first layer never needs it.
    pub input: Option<Tensor5<T>>,
    pub kernels: Tensor5<T>,
    pub bias: Vec<T>,
}

pub fn conv3d_backward<T: Real>(
    input: &Tensor5<T>,
    kernels: &Tensor5<T>,
    dout: &Tensor5<T>,
    need_input: bool,
) -> Result<ConvGrads<T>, NetError> {
    let o = conv_out_dims(input, kernels)?;
    let out_ch = kernels.shape()[0];
    if dout.shape() != [input.batch(), out_ch, o[0], o[1], o[2]] {
        return Err(shape_err(format!("conv output gradient has shape {:?}", dout.shape())));
    }
    let (d, k, c_in) = (input.spatial(), kernel_dims(kernels), input.channels());
    let rows = c_in * k[0] * k[1] * k[2];
    let p = o[0] * o[1] * o[2];
    let mut dk = Tensor5::zeros(kernels.shape());
    let mut db = vec![T::zero(); out_ch];
    let mut dinput = need_input.then(|| Tensor5::zeros(input.shape()));
    let mut dcols = if need_input { vec![T::zero(); rows * p] } else { Vec::new() };
    if c_in >= CHANNEL_LAST_MIN {
        let mut cols = vec![T::zero(); rows * p];
        let kp = kernels_channel_last(kernels);
        let mut dkp = vec![T::zero(); kp.len()];
        let mut cl = vec![T::zero(); c_in * input.spatial_len()];
        let mut dcl = if need_input { vec![T::zero(); cl.len()] } else { Vec::new() };
        for b in 0..input.batch() {
            let g = dout.item(b);
            for (oc, chunk) in g.chunks_exact(p).enumerate() {
                db[oc] = db[oc] + lane_sum(chunk, |v| v);
            }
            to_channel_last(input.item(b), c_in, &mut cl);
            im2row(&cl, c_in, d, k, o, &mut cols);
            T::gemm(out_ch, p, rows, T::one(), g, p as isize, 1, &cols, rows as isize, 1, T::one(), &mut dkp, rows as isize, 1);
            if let Some(di) = dinput.as_mut() {
                T::gemm(p, out_ch, rows, T::one(), g, 1, p as isize, &kp, rows as isize, 1, T::zero(), &mut dcols, rows as isize, 1);
                dcl.fill(T::zero());
                row2im(&dcols, c_in, d, k, o, &mut dcl);
                add_from_channel_last(&dcl, c_in, di.item_mut(b));
            }
        }
        add_kernels_channel_first(&dkp, &mut dk);
        return Ok(ConvGrads { input: dinput, kernels: dk, bias: db });
    }
    // dK^T += (shifted input rows) * dY^T per output slice, with dY^T zero
    // on the discarded wide columns
    let wide = WideSlab::new(c_in, d, k, o);
    let mut dkt = vec![T::zero(); rows * out_ch];
    let mut gw = vec![T::zero(); wide.n * out_ch];
    let g_rows: Vec<usize> = (0..wide.n).map(|q| q * out_ch).collect();
    let mut a_rows = vec![0; rows];
    for b in 0..input.batch() {
        let g = dout.item(b);
        for (oc, chunk) in g.chunks_exact(p).enumerate() {
            db[oc] = db[oc] + lane_sum(chunk, |v| v);
        }
        let item = input.item(b);
        for oz in 0..o[2] {
            for oc in 0..out_ch {
                for oy in 0..o[1] {
                    let src = &g[oc * p + (oz * o[1] + oy) * o[0]..][..o[0]];
                    for (ox, &v) in src.iter().enumerate() {
                        gw[(oy * d[0] + ox) * out_ch + oc] = v;
                    }
                }
            }
            wide.rows_at(oz, &mut a_rows);
            T::gemm_rows(wide.n, out_ch, item, &a_rows, &gw, &g_rows, &mut dkt, out_ch, true);
        }
        if let Some(di) = dinput.as_mut() {
            // dcols = K^T * dY
            T::gemm(rows, out_ch, p, T::one(), kernels.data(), 1, rows as isize, g, p as isize, 1, T::zero(), &mut dcols, p as isize, 1);
            col2im(&dcols, c_in, d, k, o, di.item_mut(b));
        }
    }
    transpose(&dkt, rows, out_ch, dk.data_mut());
    Ok(ConvGrads { input: dinput, kernels: dk, bias: db })
}

/// 2x2x2 max pooling with stride 2; trailing odd voxels are dropped.
///
/// Returns the pooled tensor and, per output value, the flat input index of
/// the winning voxel (first maximum in x-fastest window order).
pub fn maxpool3d<T: Real>(input: &Tensor5<T>) -> Result<(Tensor5<T>, Vec<usize>), NetError> {
    let d = input.spatial();
    if d.iter().any(|&n| n < 2) {
        return Err(shape_err(format!("max pooling needs spatial dims >= 2, got {d:?}")));
    }
    let o = [d[0] / 2, d[1] / 2, d[2] / 2];
    let planes = input.batch() * input.channels();
    let (in_len, out_len) = (d[0] * d[1] * d[2], o[0] * o[1] * o[2]);
    let mut out = Tensor5::zeros([input.batch(), input.channels(), o[0], o[1], o[2]]);
    let mut arg = vec![0usize; planes * out_len];
    let src = input.data();
    for plane in 0..planes {
        let base = plane * in_len;
        let mut t = plane * out_len;
        for oz in 0..o[2] {
            for oy in 0..o[1] {
                for ox in 0..o[0] {
                    let mut best = base + (2 * oz * d[1] + 2 * oy) * d[0] + 2 * ox;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let i = base + ((2 * oz + dz) * d[1] + 2 * oy + dy) * d[0] + 2 * ox + dx;
                                if src[i] > src[best] {
                                    best = i;
                                }
                            }
                        }
                    }
                    out.data_mut()[t] = src[best];
                    arg[t] = best;
                    t += 1;
                }
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool3d_backward<T: Real>(input_shape: [usize; 5], argmax: &[usize], dout: &[T]) -> Tensor5<T> {
    let mut dinput = Tensor5::zeros(input_shape);
    let dst = dinput.data_mut();
    for (&i, &g) in argmax.iter().zip(dout) {
        dst[i] = dst[i] + g;
    }
    dinput
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics and update the running estimates.
    Train,
    /// Normalize with the running estimates.
    Eval,
}

/// Per-channel statistics used by a batch-norm forward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Per-channel mean and biased variance over batch and space.
pub fn channel_moments<T: Real>(input: &Tensor5<T>) -> (Vec<T>, Vec<T>) {
    let (ch, s) = (input.channels(), input.spatial_len());
    let count = T::from_f64((input.batch() * s) as f64);
    let mut mean = vec![T::zero(); ch];
    let mut var = vec![T::zero(); ch];
    for b in 0..input.batch() {
        for (c, plane) in input.item(b).chunks_exact(s).enumerate() {
            mean[c] = mean[c] + lane_sum(plane, |v| v);
        }
    }
    for m in &mut mean {
        *m = *m / count;
    }
    for b in 0..input.batch() {
        for (c, plane) in input.item(b).chunks_exact(s).enumerate() {
            let m = mean[c];
            var[c] = var[c] + lane_sum(plane, |x| (x - m) * (x - m));
        }
    }
    for v in &mut var {
        *v = *v / count;
    }
    (mean, var)
}

/// Computes batch statistics for training mode and folds them into the running estimates.
pub fn batchnorm_train_stats<T: Real>(
    input: &Tensor5<T>,
    running_mean: &mut [T],
    running_var: &mut [T],
) -> Result<BnCache<T>, NetError> {
    let count = input.batch() * input.spatial_len();
    if count < 2 {
        return Err(NetError::DegenerateBatch(count));
    }
    let (mean, var) = channel_moments(input);
    let mom = T::from_f64(BN_MOMENTUM);
    let unbias = T::from_f64(count as f64 / (count - 1) as f64);
    for c in 0..mean.len() {
        running_mean[c] = (T::one() - mom) * running_mean[c] + mom * mean[c];
        running_var[c] = (T::one() - mom) * running_var[c] + mom * var[c] * unbias;
    }
    let eps = T::from_f64(BN_EPS);
    let inv_std = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    Ok(BnCache { mean, inv_std })
}

pub fn batchnorm_eval_stats<T: Real>(running_mean: &[T], running_var: &[T]) -> BnCache<T> {
    let eps = T::from_f64(BN_EPS);
    BnCache {
        mean: running_mean.to_vec(),
        inv_std: running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect(),
    }
}

/// Batch normalization over (batch, space) per channel, `eps = 1e-5`, running momentum 0.1.
pub fn batchnorm3d<T: Real>(
    input: &Tensor5<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &mut [T],
    running_var: &mut [T],
    mode: BnMode,
) -> Result<(Tensor5<T>, BnCache<T>), NetError> {
    let ch = input.channels();
    if [gamma.len(), beta.len(), running_mean.len(), running_var.len()].iter().any(|&n| n != ch) {
        return Err(shape_err(format!("batch-norm parameters do not match {ch} channels")));
    }
    let cache = match mode {
        BnMode::Train => batchnorm_train_stats(input, running_mean, running_var)?,
        BnMode::Eval => batchnorm_eval_stats(running_mean, running_var),
    };
    let mut out = input.clone();
    apply_batchnorm(&mut out, &cache, gamma, beta);
    Ok((out, cache))
}

/// In-place `y = gamma * (x - mean) * inv_std + beta`.
pub fn apply_batchnorm<T: Real>(x: &mut Tensor5<T>, cache: &BnCache<T>, gamma: &[T], beta: &[T]) {
    let s = x.spatial_len();
    for b in 0..x.batch() {
        for (c, plane) in x.item_mut(b).chunks_exact_mut(s).enumerate() {
            let scale = gamma[c] * cache.inv_std[c];
            let shift = beta[c] - scale * cache.mean[c];
            for v in plane {
                *v = *v * scale + shift;
            }
        }
    }
}

pub struct BnGrads<T> {
    pub input: Tensor5<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// Training-mode batch-norm backward; `input` is the pre-normalization tensor.
pub fn batchnorm3d_backward<T: Real>(
    input: &Tensor5<T>,
    cache: &BnCache<T>,
    gamma: &[T],
    dout: &Tensor5<T>,
) -> BnGrads<T> {
    let (ch, s) = (input.channels(), input.spatial_len());
    let count = T::from_f64((input.batch() * s) as f64);
    let mut sum_dy = vec![T::zero(); ch];
    let mut sum_dy_xhat = vec![T::zero(); ch];
    for b in 0..input.batch() {
        let xs = input.item(b).chunks_exact(s);
        let gs = dout.item(b).chunks_exact(s);
        for (c, (xp, gp)) in xs.zip(gs).enumerate() {
            let (m, is) = (cache.mean[c], cache.inv_std[c]);
            sum_dy[c] = sum_dy[c] + lane_sum(gp, |g| g);
            sum_dy_xhat[c] = sum_dy_xhat[c] + lane_sum2(xp, gp, |x, g| g * (x - m)) * is;
        }
    }
    let mut dx = Tensor5::zeros(input.shape());
    for b in 0..input.batch() {
        let xs = input.item(b).chunks_exact(s);
        let gs = dout.item(b).chunks_exact(s);
        let ds = dx.item_mut(b).chunks_exact_mut(s);
        for (c, ((xp, gp), dp)) in xs.zip(gs).zip(ds).enumerate() {
            let (m, is) = (cache.mean[c], cache.inv_std[c]);
            let k = gamma[c] * is / count;
            let (a, q) = (sum_dy[c], sum_dy_xhat[c]);
            for ((&x, &g), d) in xp.iter().zip(gp).zip(dp) {
                let xhat = (x - m) * is;
                *d = k * (count * g - a - xhat * q);
            }
        }
    }
    BnGrads { input: dx, gamma: sum_dy_xhat, beta: sum_dy }
}

pub fn relu<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v.max(T::zero())).collect()
}

/// Gradient of ReLU: passes `dy` where the forward input was positive.
pub fn relu_backward<T: Real>(x: &[T], dy: &[T]) -> Vec<T> {
    x.iter()
        .zip(dy)
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect()
}

/// `y = x W^T + b` for a batch of row vectors; `weights` is `(out, in)`.
pub fn fc_affine<T: Real>(input: &Matrix<T>, weights: &Matrix<T>, bias: &[T]) -> Result<Matrix<T>, NetError> {
    let (n, fan_in, fan_out) = (input.rows(), input.cols(), weights.rows());
    if weights.cols() != fan_in || bias.len() != fan_out {
        return Err(shape_err(format!(
            "dense layer {}x{} (bias {}) cannot take width {fan_in}",
            weights.rows(),
            weights.cols(),
            bias.len()
        )));
    }
    let mut out = Matrix::zeros(n, fan_out);
    for i in 0..n {
        out.row_mut(i).copy_from_slice(bias);
    }
    T::gemm(n, fan_in, fan_out, T::one(), input.data(), fan_in as isize, 1, weights.data(), 1, fan_in as isize, T::one(), out.data_mut(), fan_out as isize, 1);
    Ok(out)
}

pub struct FcGrads<T> {
    pub input: Matrix<T>,
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

pub fn fc_backward<T: Real>(input: &Matrix<T>, weights: &Matrix<T>, dout: &Matrix<T>) -> FcGrads<T> {
    let (n, fan_in, fan_out) = (input.rows(), input.cols(), weights.rows());
    let mut dw = Matrix::zeros(fan_out, fan_in);
    T::gemm(fan_out, n, fan_in, T::one(), dout.data(), 1, fan_out as isize, input.data(), fan_in as isize, 1, T::zero(), dw.data_mut(), fan_in as isize, 1);
    let mut dx = Matrix::zeros(n, fan_in);
    T::gemm(n, fan_out, fan_in, T::one(), dout.data(), fan_out as isize, 1, weights.data(), fan_in as isize, 1, T::zero(), dx.data_mut(), fan_in as isize, 1);
    let mut db = vec![T::zero(); fan_out];
    for i in 0..n {
        for (b, &g) in db.iter_mut().zip(dout.row(i)) {
            *b = *b + g;
        }
    }
    FcGrads { input: dx, weights: dw, bias: db }
}

/// Row-wise L2 normalization. Returns the output and each row's (floored) norm.
pub fn l2normalize<T: Real>(input: &Matrix<T>) -> (Matrix<T>, Vec<T>) {
    let floor = T::from_f64(L2_FLOOR);
    let mut out = input.clone();
    let mut norms = Vec::with_capacity(input.rows());
    for i in 0..input.rows() {
        let row = out.row_mut(i);
        let n = row.iter().map(|&v| v * v).sum::<T>().sqrt().max(floor);
        for v in row.iter_mut() {
            *v = *v / n;
        }
        norms.push(n);
    }
    (out, norms)
}

/// `dx = (dy - y (y . dy)) / |x|`, the product of `dy` with `I/|x| - x x^T/|x|^3`.
pub fn l2normalize_backward<T: Real>(output: &Matrix<T>, norms: &[T], dout: &Matrix<T>) -> Matrix<T> {
    let mut dx = Matrix::zeros(output.rows(), output.cols());
    for i in 0..output.rows() {
        let (y, g) = (output.row(i), dout.row(i));
        let dot: T = y.iter().zip(g).map(|(&a, &b)| a * b).sum();
        for ((d, &yv), &gv) in dx.row_mut(i).iter_mut().zip(y).zip(g) {
            *d = (gv - yv * dot) / norms[i];
        }
    }
    dx
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_xent<T: Real>(logits: &Matrix<T>, labels: &[usize]) -> Result<(T, Matrix<T>), NetError> {
    let (n, classes) = (logits.rows(), logits.cols());
    if labels.len() != n {
        return Err(shape_err(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(NetError::LabelOutOfRange { label: bad, classes });
    }
    let inv_n = T::one() / T::from_f64(n as f64);
    let mut loss = T::zero();
    let mut grad = Matrix::zeros(n, classes);
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = row.iter().map(|&v| (v - max).exp()).sum();
        loss = loss + (z.ln() + max - row[label]) * inv_n;
        for (g, &v) in grad.row_mut(i).iter_mut().zip(row) {
            *g = (v - max).exp() / z * inv_n;
        }
        let g = &mut grad.row_mut(i)[label];
        *g = *g - inv_n;
    }
    Ok((loss, grad))
}
