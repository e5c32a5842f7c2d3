//! Feature maps and the differentiable primitives the network is built from.
//!
//! A [`FeatureMap`] is a time-major `T x C` array. Every operation here is a
//! pure function; operations with a backward pass take the upstream gradient
//! (shaped like the forward output) and return gradients shaped like the
//! forward inputs.

use crate::{Error, Result};

/// Time-major rank-2 array: `data[t * channels + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    data: Vec<f64>,
    time_len: usize,
    channels: usize,
}

impl FeatureMap {
    pub fn zeros(time_len: usize, channels: usize) -> Result<Self> {
        check_dims(time_len, channels)?;
        Ok(Self {
            data: vec![0.0; time_len * channels],
            time_len,
            channels,
        })
    }

    /// Wraps time-major data. Rejects empty maps and non-finite values.
    pub fn from_vec(time_len: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(time_len, channels)?;
        if data.len() != time_len * channels {
            return Err(Error::invalid(format!(
                "feature map data has {} values, expected {time_len}x{channels}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "feature map entry (t={}, c={}) is {}",
                pos / channels,
                pos % channels,
                data[pos]
            )));
        }
        Ok(Self {
            data,
            time_len,
            channels,
        })
    }

    /// Single-channel map from a sample slice.
    pub fn from_mono(samples: &[f64]) -> Result<Self> {
        Self::from_vec(samples.len(), 1, samples.to_vec())
    }

    /// Builds a map from per-channel sample vectors of equal length.
    pub fn from_channels(columns: &[Vec<f64>]) -> Result<Self> {
        let channels = columns.len();
        let time_len = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != time_len) {
            return Err(Error::invalid("channel columns differ in length"));
        }
        let mut data = Vec::with_capacity(time_len * channels);
        for t in 0..time_len {
            data.extend(columns.iter().map(|col| col[t]));
        }
        Self::from_vec(time_len, channels, data)
    }

    pub fn from_fn(
        time_len: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(time_len * channels);
        for t in 0..time_len {
            for c in 0..channels {
                data.push(f(t, c));
            }
        }
        Self::from_vec(time_len, channels, data)
    }

    /// Unchecked construction for kernels whose output is finite by construction.
    pub(crate) fn from_raw(time_len: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), time_len * channels);
        debug_assert!(time_len >= 1 && channels >= 1);
        Self {
            data,
            time_len,
            channels,
        }
    }

    pub fn time_len(&self) -> usize {
        self.time_len
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.time_len, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.data[t * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, t: usize, c: usize, v: f64) {
        self.data[t * self.channels + c] = v;
    }

    /// All channels at time `t`.
    #[inline]
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }

    #[inline]
    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.channels..(t + 1) * self.channels]
    }

    /// Copy of one channel as a sample vector.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        (0..self.time_len).map(|t| self.get(t, c)).collect()
    }

    /// Channels `start..start + count` as a new map.
    pub fn select_channels(&self, start: usize, count: usize) -> Result<Self> {
        if count == 0 || start + count > self.channels {
            return Err(Error::invalid(format!(
                "channel range {start}..{} out of bounds for {} channels",
                start + count,
                self.channels
            )));
        }
        let mut data = Vec::with_capacity(self.time_len * count);
        for t in 0..self.time_len {
            data.extend_from_slice(&self.frame(t)[start..start + count]);
        }
        Ok(Self::from_raw(self.time_len, count, data))
    }

    /// Time steps `start..start + len` as a new map.
    pub fn slice_time(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.time_len {
            return Err(Error::invalid(format!(
                "time range {start}..{} out of bounds for length {}",
                start + len,
                self.time_len
            )));
        }
        let c = self.channels;
        Ok(Self::from_raw(
            len,
            c,
            self.data[start * c..(start + len) * c].to_vec(),
        ))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(
            self.time_len,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        same_shape(self, other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        same_shape(self, other, "elementwise op")?;
        Ok(Self::from_raw(
            self.time_len,
            self.channels,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        same_shape(self, other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn check_dims(time_len: usize, channels: usize) -> Result<()> {
    if time_len == 0 || channels == 0 {
        return Err(Error::invalid(format!(
            "feature map must be at least 1x1, got {time_len}x{channels}"
        )));
    }
    Ok(())
}

pub(crate) fn same_shape(a: &FeatureMap, b: &FeatureMap, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "{what}: shape mismatch {}x{} vs {}x{}",
            a.time_len, a.channels, b.time_len, b.channels
        )));
    }
    Ok(())
}

/// Weights and biases of a 1-D convolution layer.
///
/// `weights` is laid out `[out][in][k]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    weights: Vec<f64>,
    bias: Vec<f64>,
    out_channels: usize,
    in_channels: usize,
    kernel_len: usize,
}

impl ConvParams {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel_len: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 || kernel_len == 0 {
            return Err(Error::config(format!(
                "conv dims must be positive, got out={out_channels} in={in_channels} k={kernel_len}"
            )));
        }
        if weights.len() != out_channels * in_channels * kernel_len {
            return Err(Error::config(format!(
                "conv weights have {} entries, expected {out_channels}x{in_channels}x{kernel_len}",
                weights.len()
            )));
        }
        if bias.len() != out_channels {
            return Err(Error::config(format!(
                "conv bias has {} entries, expected {out_channels}",
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("conv parameters".into()));
        }
        Ok(Self {
            weights,
            bias,
            out_channels,
            in_channels,
            kernel_len,
        })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, kernel_len: usize) -> Result<Self> {
        Self::new(
            out_channels,
            in_channels,
            kernel_len,
            vec![0.0; out_channels * in_channels * kernel_len],
            vec![0.0; out_channels],
        )
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel_len
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    #[inline]
    pub fn weight(&self, o: usize, i: usize, k: usize) -> f64 {
        self.weights[(o * self.in_channels + i) * self.kernel_len + k]
    }

    /// Scalar parameter count (weights + biases).
    pub fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Parameters in checkpoint order: weights, then bias.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }

    /// Weights rearranged to `[k][in][out]`, the order the inner loops want.
    fn taps_major(&self) -> Vec<f64> {
        let (co, ci, kl) = (self.out_channels, self.in_channels, self.kernel_len);
        let mut out = vec![0.0; self.weights.len()];
        for o in 0..co {
            for i in 0..ci {
                for k in 0..kl {
                    out[(k * ci + i) * co + o] = self.weights[(o * ci + i) * kl + k];
                }
            }
        }
        out
    }

    /// Weights rearranged to `[out][k][in]`.
    fn out_major(&self) -> Vec<f64> {
        let (co, ci, kl) = (self.out_channels, self.in_channels, self.kernel_len);
        let mut out = vec![0.0; self.weights.len()];
        for o in 0..co {
            for i in 0..ci {
                for k in 0..kl {
                    out[(o * kl + k) * ci + i] = self.weights[(o * ci + i) * kl + k];
                }
            }
        }
        out
    }
}

fn check_conv_input(x: &FeatureMap, p: &ConvParams) -> Result<()> {
    if x.channels != p.in_channels {
        return Err(Error::config(format!(
            "conv1d expects {} input channels, got {}",
            p.in_channels, x.channels
        )));
    }
    if x.time_len < p.kernel_len {
        return Err(Error::config(format!(
            "conv1d input length {} is shorter than kernel length {}",
            x.time_len, p.kernel_len
        )));
    }
    Ok(())
}

/// Valid (unpadded) convolution:
/// `out[t, o] = bias[o] + sum_{i,k} w[o, i, k] * x[t + k, i]`.
pub fn conv1d_forward(x: &FeatureMap, p: &ConvParams) -> Result<FeatureMap> {
    check_conv_input(x, p)?;
    let (ci, co, kl) = (p.in_channels, p.out_channels, p.kernel_len);
    let out_len = x.time_len - kl + 1;
    let taps = p.taps_major();
    let span = kl * ci;
    let mut out = Vec::with_capacity(out_len * co);
    for t in 0..out_len {
        out.extend_from_slice(&p.bias);
        let row = &mut out[t * co..(t + 1) * co];
        // frames t..t+kl are contiguous in time-major storage
        let window = &x.data[t * ci..t * ci + span];
        for (w, &xv) in taps.chunks_exact(co).zip(window) {
            for (acc, &wv) in row.iter_mut().zip(w) {
                *acc += wv * xv;
            }
        }
    }
    Ok(FeatureMap::from_raw(out_len, co, out))
}

/// Adjoint of [`conv1d_forward`]: returns `(grad_x, grad_params)`.
pub fn conv1d_backward(
    x: &FeatureMap,
    p: &ConvParams,
    grad_out: &FeatureMap,
) -> Result<(FeatureMap, ConvParams)> {
    check_conv_input(x, p)?;
    let (ci, co, kl) = (p.in_channels, p.out_channels, p.kernel_len);
    let out_len = x.time_len - kl + 1;
    if grad_out.shape() != (out_len, co) {
        return Err(Error::config(format!(
            "conv1d_backward: upstream gradient is {}x{}, forward output is {out_len}x{co}",
            grad_out.time_len, grad_out.channels
        )));
    }
    let span = kl * ci;
    let rows = p.out_major();
    let mut g_taps = vec![0.0; span * co];
    let mut g_bias = vec![0.0; co];
    let mut gx = vec![0.0; x.data.len()];
    for t in 0..out_len {
        let g = grad_out.frame(t);
        for (gb, gv) in g_bias.iter_mut().zip(g) {
            *gb += gv;
        }
        let window = &x.data[t * ci..t * ci + span];
        for (gw, &xv) in g_taps.chunks_exact_mut(co).zip(window) {
            for (acc, &gv) in gw.iter_mut().zip(g) {
                *acc += xv * gv;
            }
        }
        let gxw = &mut gx[t * ci..t * ci + span];
        for (w, &gv) in rows.chunks_exact(span).zip(g) {
            for (acc, &wv) in gxw.iter_mut().zip(w) {
                *acc += wv * gv;
            }
        }
    }
    let mut g_weights = vec![0.0; p.weights.len()];
    for o in 0..co {
        for i in 0..ci {
            for k in 0..kl {
                g_weights[(o * ci + i) * kl + k] = g_taps[(k * ci + i) * co + o];
            }
        }
    }
    let grad_p = ConvParams {
        weights: g_weights,
        bias: g_bias,
        out_channels: co,
        in_channels: ci,
        kernel_len: kl,
    };
    Ok((FeatureMap::from_raw(x.time_len, ci, gx), grad_p))
}

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu(x: &FeatureMap, slope: f64) -> FeatureMap {
    x.map(|v| v.max(slope * v))
}

/// Gradient of [`leaky_relu`] given the forward input `x`.
pub fn leaky_relu_backward(
    x: &FeatureMap,
    slope: f64,
    grad_out: &FeatureMap,
) -> Result<FeatureMap> {
    same_shape(x, grad_out, "leaky_relu_backward")?;
    x.zip_with(grad_out, |v, g| if v >= 0.0 { g } else { slope * g })
}

pub fn tanh_act(x: &FeatureMap) -> FeatureMap {
    x.map(f64::tanh)
}

/// Gradient of [`tanh_act`] given the forward *output* `y`.
pub fn tanh_backward(y: &FeatureMap, grad_out: &FeatureMap) -> Result<FeatureMap> {
    same_shape(y, grad_out, "tanh_backward")?;
    y.zip_with(grad_out, |v, g| g * (1.0 - v * v))
}

/// Samples removed from the front when cropping `len` down to `target`.
/// The back loses the remainder, so odd differences crop one more at the end.
pub fn crop_offset(len: usize, target: usize) -> usize {
    (len - target) / 2
}

pub fn center_crop(x: &FeatureMap, target_len: usize) -> Result<FeatureMap> {
    if target_len > x.time_len || target_len == 0 {
        return Err(Error::invalid(format!(
            "cannot center-crop length {} to {target_len}",
            x.time_len
        )));
    }
    x.slice_time(crop_offset(x.time_len, target_len), target_len)
}

/// Adjoint of [`center_crop`]: zero-pads the gradient back to `orig_len`.
pub fn center_crop_backward(grad_out: &FeatureMap, orig_len: usize) -> Result<FeatureMap> {
    if grad_out.time_len > orig_len {
        return Err(Error::invalid(format!(
            "crop gradient length {} exceeds original length {orig_len}",
            grad_out.time_len
        )));
    }
    let c = grad_out.channels;
    let front = crop_offset(orig_len, grad_out.time_len);
    let mut data = vec![0.0; orig_len * c];
    data[front * c..(front + grad_out.time_len) * c].copy_from_slice(&grad_out.data);
    Ok(FeatureMap::from_raw(orig_len, c, data))
}

/// Channel-axis concatenation, `a`'s channels first.
pub fn concat_channels(a: &FeatureMap, b: &FeatureMap) -> Result<FeatureMap> {
    if a.time_len != b.time_len {
        return Err(Error::invalid(format!(
            "concat_channels: time lengths differ ({} vs {}); crop first",
            a.time_len, b.time_len
        )));
    }
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    for t in 0..a.time_len {
        data.extend_from_slice(a.frame(t));
        data.extend_from_slice(b.frame(t));
    }
    Ok(FeatureMap::from_raw(
        a.time_len,
        a.channels + b.channels,
        data,
    ))
}

/// Adjoint of [`concat_channels`]: splits after `a_channels` channels.
pub fn split_channels(grad: &FeatureMap, a_channels: usize) -> Result<(FeatureMap, FeatureMap)> {
    if a_channels == 0 || a_channels >= grad.channels {
        return Err(Error::invalid(format!(
            "cannot split {} channels at {a_channels}",
            grad.channels
        )));
    }
    Ok((
        grad.select_channels(0, a_channels)?,
        grad.select_channels(a_channels, grad.channels - a_channels)?,
    ))
}

/// Appends `x[T-2]` so the map mirrors about its last sample.
pub fn reflection_pad_end(x: &FeatureMap) -> Result<FeatureMap> {
    if x.time_len < 2 {
        return Err(Error::invalid(format!(
            "reflection padding needs at least 2 samples, got {}",
            x.time_len
        )));
    }
    let mut data = x.data.clone();
    data.extend_from_slice(x.frame(x.time_len - 2));
    Ok(FeatureMap::from_raw(x.time_len + 1, x.channels, data))
}

/// Adjoint of [`reflection_pad_end`].
pub fn reflection_pad_end_backward(grad_out: &FeatureMap) -> Result<FeatureMap> {
    if grad_out.time_len < 3 {
        return Err(Error::invalid(format!(
            "padded gradient must have at least 3 samples, got {}",
            grad_out.time_len
        )));
    }
    let t = grad_out.time_len - 1;
    let c = grad_out.channels;
    let mut data = grad_out.data[..t * c].to_vec();
    let extra = grad_out.frame(t);
    for (d, e) in data[(t - 2) * c..(t - 1) * c].iter_mut().zip(extra) {
        *d += e;
    }
    Ok(FeatureMap::from_raw(t, c, data))
}

/// Mean squared error over every element of every pair, with its gradient
/// with respect to each prediction.
pub fn mse_loss(pred: &[FeatureMap], target: &[FeatureMap]) -> Result<(f64, Vec<FeatureMap>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::invalid(format!(
            "mse_loss: {} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    for (p, t) in pred.iter().zip(target) {
        same_shape(p, t, "mse_loss")?;
    }
    let count: usize = pred.iter().map(|p| p.data.len()).sum();
    let scale = 2.0 / count as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(target) {
        let mut g = Vec::with_capacity(p.data.len());
        for (&a, &b) in p.data.iter().zip(&t.data) {
            let d = a - b;
            total += d * d;
            g.push(scale * d);
        }
        grads.push(FeatureMap::from_raw(p.time_len, p.channels, g));
    }
    Ok((total / count as f64, grads))
}
