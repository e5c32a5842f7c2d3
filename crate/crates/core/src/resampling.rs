//! Down-sampling and up-sampling layers.
//!
//! The DWT layer runs the lifting scheme per channel:
//!
//! 1. split `z` into even (`0, 2, 4, ...`) and odd (`1, 3, 5, ...`) samples
//! 2. predict: `e = odd - P even`
//! 3. update: `s = even + U e`
//! 4. scale: `e~ = e / A`, `s~ = A s`
//!
//! and emits `[e~_1 .. e~_C, s~_1 .. s~_C]` along the channel axis, halving
//! the time length and doubling the channel count. The inverse DWT undoes the
//! four steps in reverse order and is exact for any `P`, `U` and `A > 0`.
//!
//! Baselines: decimation, average pooling (kernel 2, stride 2) and squeezing
//! down-samplers, and linear-interpolation up-sampling.
//!
//! All layers here require an even time length on the down-sampling side;
//! the model inserts reflection padding for odd lengths.

use std::fmt;
use std::str::FromStr;

use crate::tensor::FeatureMap;
use crate::{Error, Result};

/// Lifting-scheme wavelet with scalar predict/update operators.
///
/// `P` and `U` act as per-sample multipliers, which covers the Haar and lazy
/// wavelets. Longer lifting filters would replace [`LiftingWavelet::predict`]
/// and [`LiftingWavelet::update`] without touching the layer code.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftingWavelet {
    predict: f64,
    update: f64,
    norm: f64,
}

impl LiftingWavelet {
    pub fn new(predict: f64, update: f64, norm: f64) -> Result<Self> {
        if !(norm > 0.0 && norm.is_finite()) || !predict.is_finite() || !update.is_finite() {
            return Err(Error::invalid(format!(
                "lifting wavelet needs finite coefficients and A > 0 (P={predict}, U={update}, A={norm})"
            )));
        }
        Ok(Self {
            predict,
            update,
            norm,
        })
    }

    /// `P = I`, `U = I / 2`, `A = sqrt(2)`.
    pub fn haar() -> Self {
        Self {
            predict: 1.0,
            update: 0.5,
            norm: std::f64::consts::SQRT_2,
        }
    }

    /// `P = 0`, `U = 0`, `A = 1`: splitting only, no filtering.
    pub fn lazy() -> Self {
        Self {
            predict: 0.0,
            update: 0.0,
            norm: 1.0,
        }
    }

    pub fn predict_coeff(&self) -> f64 {
        self.predict
    }

    pub fn update_coeff(&self) -> f64 {
        self.update
    }

    pub fn norm_const(&self) -> f64 {
        self.norm
    }

    #[inline]
    fn predict(&self, even: f64) -> f64 {
        self.predict * even
    }

    #[inline]
    fn update(&self, detail: f64) -> f64 {
        self.update * detail
    }
}

/// Output of [`dwt_subbands`]: the two halves of a DWT layer output.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandPair {
    /// Scaled prediction errors `e~`.
    pub detail: FeatureMap,
    /// Scaled smoothed even samples `s~`.
    pub approx: FeatureMap,
}

fn require_even_len(z: &FeatureMap, what: &str) -> Result<()> {
    if !z.time_len().is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "{what} needs an even time length, got {} (pad first)",
            z.time_len()
        )));
    }
    Ok(())
}

fn require_even_channels(z: &FeatureMap, what: &str) -> Result<()> {
    if !z.channels().is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "{what} needs an even channel count, got {}",
            z.channels()
        )));
    }
    Ok(())
}

/// Splits into even-index and odd-index samples.
pub fn split_time(z: &FeatureMap) -> Result<(FeatureMap, FeatureMap)> {
    require_even_len(z, "split_time")?;
    let (half, c) = (z.time_len() / 2, z.channels());
    let mut even = Vec::with_capacity(half * c);
    let mut odd = Vec::with_capacity(half * c);
    for t in 0..half {
        even.extend_from_slice(z.frame(2 * t));
        odd.extend_from_slice(z.frame(2 * t + 1));
    }
    Ok((
        FeatureMap::from_raw(half, c, even),
        FeatureMap::from_raw(half, c, odd),
    ))
}

/// Interleaves even and odd samples back into one map.
pub fn merge_time(even: &FeatureMap, odd: &FeatureMap) -> Result<FeatureMap> {
    if even.shape() != odd.shape() {
        return Err(Error::invalid(format!(
            "merge_time: even is {}x{}, odd is {}x{}",
            even.time_len(),
            even.channels(),
            odd.time_len(),
            odd.channels()
        )));
    }
    let (half, c) = even.shape();
    let mut data = Vec::with_capacity(2 * half * c);
    for t in 0..half {
        data.extend_from_slice(even.frame(t));
        data.extend_from_slice(odd.frame(t));
    }
    Ok(FeatureMap::from_raw(2 * half, c, data))
}

/// Forward DWT returning the detail and approximation bands separately.
pub fn dwt_subbands(z: &FeatureMap, w: &LiftingWavelet) -> Result<SubbandPair> {
    require_even_len(z, "dwt_forward")?;
    let (half, c) = (z.time_len() / 2, z.channels());
    let mut detail = Vec::with_capacity(half * c);
    let mut approx = Vec::with_capacity(half * c);
    for t in 0..half {
        let even = z.frame(2 * t);
        let odd = z.frame(2 * t + 1);
        for (&x_even, &x_odd) in even.iter().zip(odd) {
            let e = x_odd - w.predict(x_even);
            let s = x_even + w.update(e);
            detail.push(e / w.norm);
            approx.push(w.norm * s);
        }
    }
    Ok(SubbandPair {
        detail: FeatureMap::from_raw(half, c, detail),
        approx: FeatureMap::from_raw(half, c, approx),
    })
}

/// DWT layer: `T x C` to `T/2 x 2C`, channels ordered `[detail, approx]`.
pub fn dwt_forward(z: &FeatureMap, w: &LiftingWavelet) -> Result<FeatureMap> {
    let bands = dwt_subbands(z, w)?;
    crate::tensor::concat_channels(&bands.detail, &bands.approx)
}

/// Inverse DWT layer: `T x 2C` to `2T x C`.
pub fn idwt_forward(zt: &FeatureMap, w: &LiftingWavelet) -> Result<FeatureMap> {
    require_even_channels(zt, "idwt_forward")?;
    let (half, c2) = zt.shape();
    let c = c2 / 2;
    let mut data = vec![0.0; 2 * half * c];
    for t in 0..half {
        let row = zt.frame(t);
        let (det, app) = row.split_at(c);
        let (even_out, odd_out) = data[2 * t * c..(2 * t + 2) * c].split_at_mut(c);
        for ch in 0..c {
            let e = w.norm * det[ch];
            let s = app[ch] / w.norm;
            let x_even = s - w.update(e);
            even_out[ch] = x_even;
            odd_out[ch] = e + w.predict(x_even);
        }
    }
    Ok(FeatureMap::from_raw(2 * half, c, data))
}

/// Adjoint of [`dwt_forward`]: maps a `T/2 x 2C` gradient to `T x C`.
pub fn dwt_backward(grad_out: &FeatureMap, w: &LiftingWavelet) -> Result<FeatureMap> {
    require_even_channels(grad_out, "dwt_backward")?;
    let (half, c2) = grad_out.shape();
    let c = c2 / 2;
    let mut data = vec![0.0; 2 * half * c];
    for t in 0..half {
        let row = grad_out.frame(t);
        let (g_det, g_app) = row.split_at(c);
        let (g_even, g_odd) = data[2 * t * c..(2 * t + 2) * c].split_at_mut(c);
        for ch in 0..c {
            let g_s = w.norm * g_app[ch];
            let g_e = g_det[ch] / w.norm + w.update * g_s;
            g_odd[ch] = g_e;
            g_even[ch] = g_s - w.predict * g_e;
        }
    }
    Ok(FeatureMap::from_raw(2 * half, c, data))
}

/// Adjoint of [`idwt_forward`]: maps a `2T x C` gradient to `T x 2C`.
pub fn idwt_backward(grad_out: &FeatureMap, w: &LiftingWavelet) -> Result<FeatureMap> {
    require_even_len(grad_out, "idwt_backward")?;
    let (t2, c) = grad_out.shape();
    let half = t2 / 2;
    let mut data = vec![0.0; half * 2 * c];
    for t in 0..half {
        let g_even_in = grad_out.frame(2 * t);
        let g_odd = grad_out.frame(2 * t + 1);
        let (g_det, g_app) = data[t * 2 * c..(t + 1) * 2 * c].split_at_mut(c);
        for ch in 0..c {
            let g_even = g_even_in[ch] + w.predict * g_odd[ch];
            let g_e = g_odd[ch] - w.update * g_even;
            g_det[ch] = w.norm * g_e;
            g_app[ch] = g_even / w.norm;
        }
    }
    Ok(FeatureMap::from_raw(half, 2 * c, data))
}

/// Keeps samples `0, 2, 4, ...`.
pub fn decimate(z: &FeatureMap) -> Result<FeatureMap> {
    Ok(split_time(z)?.0)
}

/// Adjoint of [`decimate`]: scatters into even indices.
pub fn decimate_backward(grad_out: &FeatureMap) -> Result<FeatureMap> {
    let (half, c) = grad_out.shape();
    let mut data = vec![0.0; 2 * half * c];
    for t in 0..half {
        data[2 * t * c..(2 * t + 1) * c].copy_from_slice(grad_out.frame(t));
    }
    Ok(FeatureMap::from_raw(2 * half, c, data))
}

/// Interior linear interpolation, `T` to `2T - 1`:
/// `y[2t] = z[t]`, `y[2t+1] = (z[t] + z[t+1]) / 2`.
pub fn linear_upsample(z: &FeatureMap) -> Result<FeatureMap> {
    let (t_in, c) = z.shape();
    if t_in < 2 {
        return Err(Error::invalid(format!(
            "linear_upsample needs at least 2 samples, got {t_in}"
        )));
    }
    let out_len = 2 * t_in - 1;
    let mut data = Vec::with_capacity(out_len * c);
    for t in 0..t_in {
        data.extend_from_slice(z.frame(t));
        if t + 1 < t_in {
            let (a, b) = (z.frame(t), z.frame(t + 1));
            data.extend(a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)));
        }
    }
    Ok(FeatureMap::from_raw(out_len, c, data))
}

/// Adjoint of [`linear_upsample`].
pub fn linear_upsample_backward(grad_out: &FeatureMap) -> Result<FeatureMap> {
    let (t_out, c) = grad_out.shape();
    if t_out < 3 || t_out % 2 == 0 {
        return Err(Error::invalid(format!(
            "linear_upsample gradient must have odd length >= 3, got {t_out}"
        )));
    }
    let t_in = t_out.div_ceil(2);
    let mut data = vec![0.0; t_in * c];
    for t in 0..t_in {
        let dst = &mut data[t * c..(t + 1) * c];
        for (d, g) in dst.iter_mut().zip(grad_out.frame(2 * t)) {
            *d += g;
        }
        if t > 0 {
            for (d, g) in dst.iter_mut().zip(grad_out.frame(2 * t - 1)) {
                *d += 0.5 * g;
            }
        }
        if t + 1 < t_in {
            for (d, g) in dst.iter_mut().zip(grad_out.frame(2 * t + 1)) {
                *d += 0.5 * g;
            }
        }
    }
    Ok(FeatureMap::from_raw(t_in, c, data))
}

/// Average pooling with kernel 2 and stride 2.
pub fn avg_pool2(z: &FeatureMap) -> Result<FeatureMap> {
    require_even_len(z, "avg_pool2")?;
    let (half, c) = (z.time_len() / 2, z.channels());
    let mut data = Vec::with_capacity(half * c);
    for t in 0..half {
        let (a, b) = (z.frame(2 * t), z.frame(2 * t + 1));
        data.extend(a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)));
    }
    Ok(FeatureMap::from_raw(half, c, data))
}

pub fn avg_pool2_backward(grad_out: &FeatureMap) -> Result<FeatureMap> {
    let (half, c) = grad_out.shape();
    let mut data = Vec::with_capacity(2 * half * c);
    for t in 0..half {
        let g = grad_out.frame(t);
        data.extend(g.iter().map(|v| 0.5 * v));
        data.extend(g.iter().map(|v| 0.5 * v));
    }
    Ok(FeatureMap::from_raw(2 * half, c, data))
}

/// Squeezing: `T x C` to `T/2 x 2C` as `[odd samples, even samples]`.
///
/// Identical to [`dwt_forward`] with [`LiftingWavelet::lazy`].
pub fn squeeze(z: &FeatureMap) -> Result<FeatureMap> {
    let (even, odd) = split_time(z)?;
    crate::tensor::concat_channels(&odd, &even)
}

/// Exact inverse of [`squeeze`]; also its adjoint.
pub fn unsqueeze(zt: &FeatureMap) -> Result<FeatureMap> {
    require_even_channels(zt, "unsqueeze")?;
    let c = zt.channels() / 2;
    let odd = zt.select_channels(0, c)?;
    let even = zt.select_channels(c, c)?;
    merge_time(&even, &odd)
}

/// Down/up-sampling pair used inside the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ResamplerKind {
    /// Haar DWT / inverse DWT.
    DwtHaar,
    /// Lazy-wavelet DWT, i.e. squeezing / unsqueezing.
    DwtLazy,
    /// Decimation / linear interpolation (the Wave-U-Net baseline).
    DecimateLinear,
    /// Average pooling / linear interpolation.
    AvgPoolLinear,
}

impl ResamplerKind {
    pub const ALL: [ResamplerKind; 4] = [
        ResamplerKind::DwtHaar,
        ResamplerKind::DwtLazy,
        ResamplerKind::DecimateLinear,
        ResamplerKind::AvgPoolLinear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ResamplerKind::DwtHaar => "dwt_haar",
            ResamplerKind::DwtLazy => "dwt_lazy",
            ResamplerKind::DecimateLinear => "decimate_linear",
            ResamplerKind::AvgPoolLinear => "avgpool_linear",
        }
    }

    /// Lifting wavelet for the DWT kinds.
    pub fn wavelet(self) -> Option<LiftingWavelet> {
        match self {
            ResamplerKind::DwtHaar => Some(LiftingWavelet::haar()),
            ResamplerKind::DwtLazy => Some(LiftingWavelet::lazy()),
            _ => None,
        }
    }

    /// Channel multiplier of the down-sampling layer.
    pub fn channel_factor(self) -> usize {
        if self.wavelet().is_some() {
            2
        } else {
            1
        }
    }

    /// Output length of the up-sampling layer for input length `t`.
    pub fn up_len(self, t: usize) -> usize {
        if self.wavelet().is_some() {
            2 * t
        } else {
            2 * t - 1
        }
    }

    /// Whether the up-sampled map drops its last sample when the matching
    /// encoder map was padded from an odd length. Linear interpolation
    /// already emits `2T - 1` samples.
    pub fn discards_after_pad(self) -> bool {
        self.wavelet().is_some()
    }

    pub fn down(self, z: &FeatureMap) -> Result<FeatureMap> {
        match self {
            ResamplerKind::DwtHaar => dwt_forward(z, &LiftingWavelet::haar()),
            ResamplerKind::DwtLazy => squeeze(z),
            ResamplerKind::DecimateLinear => decimate(z),
            ResamplerKind::AvgPoolLinear => avg_pool2(z),
        }
    }

    pub fn down_backward(self, grad_out: &FeatureMap) -> Result<FeatureMap> {
        match self {
            ResamplerKind::DwtHaar => dwt_backward(grad_out, &LiftingWavelet::haar()),
            ResamplerKind::DwtLazy => unsqueeze(grad_out),
            ResamplerKind::DecimateLinear => decimate_backward(grad_out),
            ResamplerKind::AvgPoolLinear => avg_pool2_backward(grad_out),
        }
    }

    pub fn up(self, z: &FeatureMap) -> Result<FeatureMap> {
        match self {
            ResamplerKind::DwtHaar => idwt_forward(z, &LiftingWavelet::haar()),
            ResamplerKind::DwtLazy => unsqueeze(z),
            ResamplerKind::DecimateLinear | ResamplerKind::AvgPoolLinear => linear_upsample(z),
        }
    }

    pub fn up_backward(self, grad_out: &FeatureMap) -> Result<FeatureMap> {
        match self {
            ResamplerKind::DwtHaar => idwt_backward(grad_out, &LiftingWavelet::haar()),
            ResamplerKind::DwtLazy => squeeze(grad_out),
            ResamplerKind::DecimateLinear | ResamplerKind::AvgPoolLinear => {
                linear_upsample_backward(grad_out)
            }
        }
    }
}

impl fmt::Display for ResamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ResamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dwt_haar" | "haar" => Ok(ResamplerKind::DwtHaar),
            "dwt_lazy" | "lazy" | "squeeze" => Ok(ResamplerKind::DwtLazy),
            "decimate_linear" | "decimate" => Ok(ResamplerKind::DecimateLinear),
            "avgpool_linear" | "avgpool" | "avg_pool" => Ok(ResamplerKind::AvgPoolLinear),
            other => Err(Error::config(format!(
                "unknown resampler kind `{other}` (expected dwt_haar, dwt_lazy, decimate_linear or avgpool_linear)"
            ))),
        }
    }
}
