//! The encoder-decoder separation network.
//!
//! Layout for `L` levels, `N` sources and `C_s` input channels:
//!
//! ```text
//! input
//! DS block l = 1..L      conv(C_e * l, f_e) + leaky ReLU  -> skip l
//!                        [reflection pad if odd] + down-sampling layer
//! intermediate           conv(C_m, f_e) + leaky ReLU
//! US block l = L..1      up-sampling layer [drop last sample if padded]
//!                        concat(center-cropped skip l)
//!                        conv(C_d * l, f_d) + leaky ReLU
//! output                 concat(center-cropped input)
//!                        conv(C_s * (N - 1), 1) + tanh -> sources 1..N-1
//!                        source N = cropped input - sum(sources 1..N-1)
//! ```
//!
//! All convolutions are valid (unpadded), so the output is shorter than the
//! input; [`fit_lengths`] finds admissible input lengths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kv::KvMap;
use crate::resampling::ResamplerKind;
use crate::tensor::{
    center_crop, center_crop_backward, concat_channels, conv1d_backward, conv1d_forward,
    leaky_relu, leaky_relu_backward, reflection_pad_end, reflection_pad_end_backward,
    split_channels, tanh_act, tanh_backward, ConvParams, FeatureMap, DEFAULT_LEAKY_SLOPE,
};
use crate::{Error, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub levels: usize,
    pub num_sources: usize,
    pub input_channels: usize,
    pub encoder_growth: usize,
    pub mid_channels: usize,
    pub decoder_growth: usize,
    pub encoder_kernel: usize,
    pub decoder_kernel: usize,
    pub resampler: ResamplerKind,
    pub leaky_slope: f64,
}

impl ModelConfig {
    /// Full-size stereo, four-source configuration.
    pub fn full(resampler: ResamplerKind) -> Self {
        Self {
            levels: 12,
            num_sources: 4,
            input_channels: 2,
            encoder_growth: 24,
            mid_channels: 312,
            decoder_growth: 24,
            encoder_kernel: 15,
            decoder_kernel: 5,
            resampler,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    /// Single-level mono toy network (90 parameters with a DWT resampler).
    pub fn tiny(resampler: ResamplerKind) -> Self {
        Self {
            levels: 1,
            num_sources: 2,
            input_channels: 1,
            encoder_growth: 2,
            mid_channels: 4,
            decoder_growth: 2,
            encoder_kernel: 3,
            decoder_kernel: 3,
            resampler,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    pub const KEYS: [&'static str; 10] = [
        "levels",
        "num_sources",
        "input_channels",
        "encoder_growth",
        "mid_channels",
        "decoder_growth",
        "encoder_kernel",
        "decoder_kernel",
        "resampler",
        "leaky_slope",
    ];

    pub fn validate(&self) -> Result<()> {
        let ints = [
            ("levels", self.levels),
            ("input_channels", self.input_channels),
            ("encoder_growth", self.encoder_growth),
            ("mid_channels", self.mid_channels),
            ("decoder_growth", self.decoder_growth),
            ("encoder_kernel", self.encoder_kernel),
            ("decoder_kernel", self.decoder_kernel),
        ];
        if let Some((name, _)) = ints.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be at least 1")));
        }
        if self.num_sources < 2 {
            return Err(Error::config(format!(
                "num_sources must be at least 2, got {}",
                self.num_sources
            )));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::config(format!(
                "leaky_slope must lie in (0, 1), got {}",
                self.leaky_slope
            )));
        }
        if self.resampler.channel_factor() == 2 {
            if !self.mid_channels.is_multiple_of(2) {
                return Err(Error::config(format!(
                    "{} up-sampling halves channels; mid_channels {} must be even",
                    self.resampler, self.mid_channels
                )));
            }
            for l in 2..=self.levels {
                if !(self.decoder_growth * l).is_multiple_of(2) {
                    return Err(Error::config(format!(
                        "{} up-sampling halves channels; decoder level {l} has {} channels",
                        self.resampler,
                        self.decoder_growth * l
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_kv(&self, kv: &mut KvMap) {
        kv.set("levels", self.levels);
        kv.set("num_sources", self.num_sources);
        kv.set("input_channels", self.input_channels);
        kv.set("encoder_growth", self.encoder_growth);
        kv.set("mid_channels", self.mid_channels);
        kv.set("decoder_growth", self.decoder_growth);
        kv.set("encoder_kernel", self.encoder_kernel);
        kv.set("decoder_kernel", self.decoder_kernel);
        kv.set("resampler", self.resampler);
        kv.set("leaky_slope", self.leaky_slope);
    }

    /// Reads the model keys, defaulting missing ones to [`ModelConfig::full`]
    /// with the Haar DWT.
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let d = Self::full(ResamplerKind::DwtHaar);
        let cfg = Self {
            levels: kv.get_or("levels", d.levels)?,
            num_sources: kv.get_or("num_sources", d.num_sources)?,
            input_channels: kv.get_or("input_channels", d.input_channels)?,
            encoder_growth: kv.get_or("encoder_growth", d.encoder_growth)?,
            mid_channels: kv.get_or("mid_channels", d.mid_channels)?,
            decoder_growth: kv.get_or("decoder_growth", d.decoder_growth)?,
            encoder_kernel: kv.get_or("encoder_kernel", d.encoder_kernel)?,
            decoder_kernel: kv.get_or("decoder_kernel", d.decoder_kernel)?,
            resampler: kv.get_or("resampler", d.resampler)?,
            leaky_slope: kv.get_or("leaky_slope", d.leaky_slope)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn enc_channels(&self, level: usize) -> usize {
        self.encoder_growth * level
    }

    fn dec_channels(&self, level: usize) -> usize {
        self.decoder_growth * level
    }

    /// `(out, in, kernel)` per conv layer in parameter order: encoder by
    /// level, intermediate, decoder by descending level, output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize, usize)> {
        let factor = self.resampler.channel_factor();
        let mut shapes = Vec::with_capacity(2 * self.levels + 2);
        let mut cin = self.input_channels;
        for l in 1..=self.levels {
            let out = self.enc_channels(l);
            shapes.push((out, cin, self.encoder_kernel));
            cin = out * factor;
        }
        shapes.push((self.mid_channels, cin, self.encoder_kernel));
        cin = self.mid_channels;
        for l in (1..=self.levels).rev() {
            let up = cin / factor;
            let out = self.dec_channels(l);
            shapes.push((out, up + self.enc_channels(l), self.decoder_kernel));
            cin = out;
        }
        shapes.push((
            self.input_channels * (self.num_sources - 1),
            cin + self.input_channels,
            1,
        ));
        shapes
    }
}

/// Exact scalar parameter count (weights and biases of every conv layer).
pub fn count_params(cfg: &ModelConfig) -> usize {
    cfg.layer_shapes()
        .iter()
        .map(|&(o, i, k)| o * i * k + o)
        .sum()
}

/// Per-level lengths of one forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LengthPlan {
    pub input_len: usize,
    /// Encoder skip lengths (conv outputs) by level.
    pub skip_lens: Vec<usize>,
    /// Decoder conv output lengths, levels descending.
    pub decoder_lens: Vec<usize>,
    pub output_len: usize,
}

/// Propagates an input length through the network, failing where a layer
/// would not fit.
pub fn plan_lengths(cfg: &ModelConfig, input_len: usize) -> Result<LengthPlan> {
    let too_short = |what: String| {
        Err(Error::invalid(format!(
            "input length {input_len} is too short: {what}"
        )))
    };
    let kind = cfg.resampler;
    let mut t = input_len;
    let mut skip_lens = Vec::with_capacity(cfg.levels);
    for l in 1..=cfg.levels {
        if t < cfg.encoder_kernel {
            return too_short(format!("encoder level {l} sees {t} samples"));
        }
        t = t - cfg.encoder_kernel + 1;
        if t < 2 {
            return too_short(format!("encoder level {l} skip has {t} sample(s)"));
        }
        skip_lens.push(t);
        t = t.div_ceil(2);
    }
    if t < cfg.encoder_kernel {
        return too_short(format!("intermediate block sees {t} samples"));
    }
    t = t - cfg.encoder_kernel + 1;
    let mut decoder_lens = Vec::with_capacity(cfg.levels);
    for l in (1..=cfg.levels).rev() {
        if t < 2 {
            return too_short(format!("decoder level {l} up-samples {t} sample(s)"));
        }
        let skip = skip_lens[l - 1];
        t = kind.up_len(t);
        if kind.discards_after_pad() && skip % 2 == 1 {
            t -= 1;
        }
        if t > skip {
            return too_short(format!(
                "decoder level {l} has {t} samples but skip has {skip}"
            ));
        }
        if t < cfg.decoder_kernel {
            return too_short(format!("decoder level {l} conv sees {t} samples"));
        }
        t = t - cfg.decoder_kernel + 1;
        decoder_lens.push(t);
    }
    Ok(LengthPlan {
        input_len,
        skip_lens,
        decoder_lens,
        output_len: t,
    })
}

/// Smallest admissible input length whose output has at least
/// `desired_output_len` samples, with that output length.
pub fn fit_lengths(cfg: &ModelConfig, desired_output_len: usize) -> Result<(usize, usize)> {
    cfg.validate()?;
    let desired = desired_output_len.max(1);
    // The receptive field grows by at most this factor per sample.
    let limit = (desired + cfg.encoder_kernel + cfg.decoder_kernel + 4)
        .saturating_mul(1usize << (cfg.levels + 2).min(40))
        .saturating_mul(2);
    (1..=limit)
        .find_map(|n| match plan_lengths(cfg, n) {
            Ok(plan) if plan.output_len >= desired => Some((n, plan.output_len)),
            _ => None,
        })
        .ok_or_else(|| {
            Error::config(format!(
                "no admissible input length up to {limit} yields {desired} output samples"
            ))
        })
}

/// Largest admissible input length not exceeding `max_input_len`.
pub fn largest_input_within(cfg: &ModelConfig, max_input_len: usize) -> Result<(usize, usize)> {
    (1..=max_input_len)
        .rev()
        .find_map(|n| plan_lengths(cfg, n).ok().map(|p| (n, p.output_len)))
        .ok_or_else(|| {
            Error::config(format!(
                "no admissible input length up to {max_input_len} samples"
            ))
        })
}

/// Conv parameters of every layer, in [`ModelConfig::layer_shapes`] order.
/// Also used for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    layers: Vec<ConvParams>,
}

impl ParamSet {
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        let layers = cfg
            .layer_shapes()
            .into_iter()
            .map(|(o, i, k)| ConvParams::zeros(o, i, k))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[ConvParams] {
        &self.layers
    }

    pub fn num_scalars(&self) -> usize {
        self.layers.iter().map(ConvParams::len).sum()
    }

    /// Flat view in checkpoint order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.iter().copied()).collect()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::config(format!(
                "flat parameter vector has {} entries, model has {}",
                flat.len(),
                self.num_scalars()
            )));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector".into()));
        }
        for (dst, src) in self.iter_mut().zip(flat) {
            *dst = *src;
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.iter_mut())
    }

    pub fn add_assign(&mut self, other: &ParamSet) -> Result<()> {
        if self.num_scalars() != other.num_scalars() {
            return Err(Error::config("parameter sets differ in size"));
        }
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug)]
struct ConvCache {
    input: FeatureMap,
    pre: FeatureMap,
}

#[derive(Debug)]
struct EncoderCache {
    conv: ConvCache,
    padded: bool,
}

#[derive(Debug)]
struct DecoderCache {
    level: usize,
    up_channels: usize,
    discarded: bool,
    conv: ConvCache,
}

/// Activations kept from [`Model::forward`] for [`Model::backward`].
#[derive(Debug)]
pub struct ForwardCache {
    input_len: usize,
    output_len: usize,
    encoders: Vec<EncoderCache>,
    mid: ConvCache,
    decoders: Vec<DecoderCache>,
    output_in: FeatureMap,
    output_tanh: FeatureMap,
}

impl ForwardCache {
    pub fn output_len(&self) -> usize {
        self.output_len
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    cfg: ModelConfig,
    params: ParamSet,
}

impl Model {
    /// Builds a model with weights and biases drawn uniformly from
    /// `+-sqrt(1 / (in_channels * kernel_len))`.
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::zeros(cfg)?;
        for layer in &mut params.layers {
            let bound = (1.0 / (layer.in_channels() * layer.kernel_len()) as f64).sqrt();
            for v in layer.iter_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        }
        Ok(Self {
            cfg: cfg.clone(),
            params,
        })
    }

    pub fn from_params(cfg: &ModelConfig, params: ParamSet) -> Result<Self> {
        cfg.validate()?;
        let shapes: Vec<_> = params
            .layers
            .iter()
            .map(|l| (l.out_channels(), l.in_channels(), l.kernel_len()))
            .collect();
        if shapes != cfg.layer_shapes() {
            return Err(Error::config(
                "parameter shapes do not match the model configuration",
            ));
        }
        Ok(Self {
            cfg: cfg.clone(),
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn enc_layer(&self, level: usize) -> &ConvParams {
        &self.params.layers[level - 1]
    }

    fn mid_layer(&self) -> &ConvParams {
        &self.params.layers[self.cfg.levels]
    }

    fn dec_index(&self, level: usize) -> usize {
        self.cfg.levels + 1 + (self.cfg.levels - level)
    }

    fn out_index(&self) -> usize {
        2 * self.cfg.levels + 1
    }

    fn conv_act(&self, x: FeatureMap, p: &ConvParams) -> Result<(FeatureMap, ConvCache)> {
        let pre = conv1d_forward(&x, p)?;
        let act = leaky_relu(&pre, self.cfg.leaky_slope);
        Ok((act, ConvCache { input: x, pre }))
    }

    fn conv_act_backward(
        &self,
        cache: &ConvCache,
        p: &ConvParams,
        grad: &FeatureMap,
    ) -> Result<(FeatureMap, ConvParams)> {
        let g_pre = leaky_relu_backward(&cache.pre, self.cfg.leaky_slope, grad)?;
        conv1d_backward(&cache.input, p, &g_pre)
    }

    /// Runs the network, returning the `N` source estimates and the cache
    /// needed by [`Model::backward`].
    pub fn forward(&self, x: &FeatureMap) -> Result<(Vec<FeatureMap>, ForwardCache)> {
        let cfg = &self.cfg;
        if x.channels() != cfg.input_channels {
            return Err(Error::config(format!(
                "model expects {} input channels, got {}",
                cfg.input_channels,
                x.channels()
            )));
        }
        if let Err(e) = plan_lengths(cfg, x.time_len()) {
            let (min_len, _) = fit_lengths(cfg, 1)?;
            return Err(Error::invalid(format!(
                "{e}; minimum input length is {min_len}"
            )));
        }
        let kind = cfg.resampler;

        let mut encoders = Vec::with_capacity(cfg.levels);
        let mut skips = Vec::with_capacity(cfg.levels);
        let mut h = x.clone();
        for l in 1..=cfg.levels {
            let (skip, conv) = self.conv_act(h, self.enc_layer(l))?;
            let padded = skip.time_len() % 2 == 1;
            h = if padded {
                kind.down(&reflection_pad_end(&skip)?)?
            } else {
                kind.down(&skip)?
            };
            skips.push(skip);
            encoders.push(EncoderCache { conv, padded });
        }

        let (mut h, mid) = self.conv_act(h, self.mid_layer())?;

        let mut decoders = Vec::with_capacity(cfg.levels);
        for l in (1..=cfg.levels).rev() {
            let mut up = kind.up(&h)?;
            let discarded = kind.discards_after_pad() && encoders[l - 1].padded;
            if discarded {
                up = up.slice_time(0, up.time_len() - 1)?;
            }
            let up_channels = up.channels();
            let skip = center_crop(&skips[l - 1], up.time_len())?;
            let joined = concat_channels(&up, &skip)?;
            let (out, conv) = self.conv_act(joined, &self.params.layers[self.dec_index(l)])?;
            h = out;
            decoders.push(DecoderCache {
                level: l,
                up_channels,
                discarded,
                conv,
            });
        }

        let out_len = h.time_len();
        let cropped_input = center_crop(x, out_len)?;
        let output_in = concat_channels(&h, &cropped_input)?;
        let pre = conv1d_forward(&output_in, &self.params.layers[self.out_index()])?;
        let y = tanh_act(&pre);

        let cs = cfg.input_channels;
        let mut sources = Vec::with_capacity(cfg.num_sources);
        let mut residual = cropped_input;
        for n in 0..cfg.num_sources - 1 {
            let est = y.select_channels(n * cs, cs)?;
            residual = residual.sub(&est)?;
            sources.push(est);
        }
        sources.push(residual);

        let cache = ForwardCache {
            input_len: x.time_len(),
            output_len: out_len,
            encoders,
            mid,
            decoders,
            output_in,
            output_tanh: y,
        };
        Ok((sources, cache))
    }

    /// Forward pass without keeping activations.
    pub fn separate(&self, x: &FeatureMap) -> Result<Vec<FeatureMap>> {
        Ok(self.forward(x)?.0)
    }

    /// Reverse-mode gradients of a scalar loss given its gradient with respect
    /// to each of the `N` outputs.
    pub fn backward(&self, cache: &ForwardCache, grads: &[FeatureMap]) -> Result<ParamSet> {
        let cfg = &self.cfg;
        let cs = cfg.input_channels;
        if grads.len() != cfg.num_sources {
            return Err(Error::invalid(format!(
                "backward expects {} output gradients, got {}",
                cfg.num_sources,
                grads.len()
            )));
        }
        for g in grads {
            if g.shape() != (cache.output_len, cs) {
                return Err(Error::invalid(format!(
                    "output gradient is {}x{}, expected {}x{cs}",
                    g.time_len(),
                    g.channels(),
                    cache.output_len
                )));
            }
        }
        let mut out = ParamSet::zeros(cfg)?;
        let kind = cfg.resampler;

        // The residual source is cropped_input - sum(direct), so its gradient
        // enters every direct estimate with a minus sign.
        let last = &grads[cfg.num_sources - 1];
        let mut g_y = FeatureMap::zeros(cache.output_len, cs * (cfg.num_sources - 1))?;
        for t in 0..cache.output_len {
            let row = g_y.frame_mut(t);
            for (n, g) in grads[..cfg.num_sources - 1].iter().enumerate() {
                for c in 0..cs {
                    row[n * cs + c] = g.get(t, c) - last.get(t, c);
                }
            }
        }
        let g_pre = tanh_backward(&cache.output_tanh, &g_y)?;
        let out_idx = self.out_index();
        let (g_in, g_p) = conv1d_backward(&cache.output_in, &self.params.layers[out_idx], &g_pre)?;
        out.layers[out_idx] = g_p;
        let (mut g, _g_input) = split_channels(&g_in, cfg.dec_channels(1))?;

        let mut g_skips: Vec<Option<FeatureMap>> = vec![None; cfg.levels];
        for dec in cache.decoders.iter().rev() {
            let idx = self.dec_index(dec.level);
            let (g_joined, g_p) =
                self.conv_act_backward(&dec.conv, &self.params.layers[idx], &g)?;
            out.layers[idx] = g_p;
            let (mut g_up, g_skip) = split_channels(&g_joined, dec.up_channels)?;
            let skip_len = cache.encoders[dec.level - 1].conv.pre.time_len();
            g_skips[dec.level - 1] = Some(center_crop_backward(&g_skip, skip_len)?);
            if dec.discarded {
                let (t, c) = g_up.shape();
                let mut data = g_up.into_data();
                data.extend(std::iter::repeat_n(0.0, c));
                g_up = FeatureMap::from_raw(t + 1, c, data);
            }
            g = kind.up_backward(&g_up)?;
        }

        let mid_idx = cfg.levels;
        let (g_ds, g_p) = self.conv_act_backward(&cache.mid, self.mid_layer(), &g)?;
        out.layers[mid_idx] = g_p;
        g = g_ds;

        for l in (1..=cfg.levels).rev() {
            let enc = &cache.encoders[l - 1];
            let mut g_skip = kind.down_backward(&g)?;
            if enc.padded {
                g_skip = reflection_pad_end_backward(&g_skip)?;
            }
            if let Some(from_decoder) = &g_skips[l - 1] {
                g_skip.add_assign(from_decoder)?;
            }
            let (g_x, g_p) = self.conv_act_backward(&enc.conv, self.enc_layer(l), &g_skip)?;
            out.layers[l - 1] = g_p;
            g = g_x;
        }
        debug_assert_eq!(g.time_len(), cache.input_len);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_layer_shapes_and_count() {
        let cfg = ModelConfig::tiny(ResamplerKind::DwtHaar);
        assert_eq!(
            cfg.layer_shapes(),
            vec![(2, 1, 3), (4, 4, 3), (2, 4, 3), (1, 3, 1)]
        );
        assert_eq!(count_params(&cfg), 90);
        let model = Model::build(&cfg, 7).unwrap();
        assert_eq!(model.params().num_scalars(), 90);
    }

    #[test]
    fn full_config_has_twelve_levels() {
        let cfg = ModelConfig::full(ResamplerKind::DwtHaar);
        cfg.validate().unwrap();
        assert_eq!(cfg.layer_shapes().len(), 2 * 12 + 2);
    }

    #[test]
    fn build_is_deterministic() {
        let cfg = ModelConfig::tiny(ResamplerKind::DwtHaar);
        let a = Model::build(&cfg, 3).unwrap();
        let b = Model::build(&cfg, 3).unwrap();
        let bits = |m: &Model| m.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&Model::build(&cfg, 4).unwrap()));
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let cfg = ModelConfig::tiny(ResamplerKind::DecimateLinear);
        let m = Model::build(&cfg, 1).unwrap();
        for layer in m.params().layers() {
            let bound = (1.0 / (layer.in_channels() * layer.kernel_len()) as f64).sqrt();
            assert!(layer.iter().all(|v| v.abs() <= bound));
        }
    }

    #[test]
    fn validation_rejects_odd_mid_channels_for_dwt() {
        let mut cfg = ModelConfig::tiny(ResamplerKind::DwtHaar);
        cfg.mid_channels = 3;
        assert!(cfg.validate().is_err());
        cfg.resampler = ResamplerKind::DecimateLinear;
        cfg.validate().unwrap();
        cfg.num_sources = 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn forward_rejects_short_input_with_minimum() {
        let cfg = ModelConfig::tiny(ResamplerKind::DwtHaar);
        let m = Model::build(&cfg, 0).unwrap();
        let (min_len, _) = fit_lengths(&cfg, 1).unwrap();
        let err = m
            .forward(&FeatureMap::zeros(min_len - 1, 1).unwrap())
            .unwrap_err();
        assert!(
            err.to_string()
                .contains(&format!("minimum input length is {min_len}")),
            "{err}"
        );
    }

    #[test]
    fn kv_roundtrip() {
        let cfg = ModelConfig::tiny(ResamplerKind::AvgPoolLinear);
        let mut kv = KvMap::new();
        cfg.to_kv(&mut kv);
        assert_eq!(ModelConfig::from_kv(&kv).unwrap(), cfg);
    }
}
