//! Per-level convolutional encoder/decoder pairs and the stacked hierarchy.
//!
//! Level `i` maps a `[c_in, w]` input to an `[ℓ, w/2]` bottleneck with three
//! 1-D convolutions (only the first strides) and mirrors it back with two
//! convolutions and a stride-2 transposed convolution. Level 0 consumes the
//! `[2, p]` I/Q frame; level `i > 0` consumes the level `i-1` bottleneck.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ndiff::ops::{leaky_relu, leaky_relu_backward};
use crate::ndiff::{
    Checkpoint, Conv1d, ConvTranspose1d, Param, Parameterized, Tensor, LEAKY_SLOPE,
};
use crate::sigsynth::IqFrame;
use crate::vq::{CodeIndices, Codebook};

/// Bottleneck channels; also the codeword length.
pub const LATENT_CHANNELS: usize = 64;

/// Default hidden multiplier per level; levels 5 and 6 only exist in HAE
/// analysis runs.
pub const DEFAULT_HIDDEN: [usize; 7] = [16, 16, 32, 32, 64, 64, 64];

/// `(kernel, stride, padding)` of one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerGeom {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

const fn geom(kernel: usize, stride: usize, padding: usize) -> LayerGeom {
    LayerGeom {
        kernel,
        stride,
        padding,
    }
}

pub const ENCODER_GEOMETRY: [LayerGeom; 3] = [geom(5, 2, 2), geom(3, 1, 1), geom(3, 1, 1)];
/// The last entry is the transposed convolution.
pub const DECODER_GEOMETRY: [LayerGeom; 3] = [geom(3, 1, 1), geom(3, 1, 1), geom(4, 2, 1)];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelSpec {
    pub index: usize,
    pub in_channels: usize,
    pub in_width: usize,
    pub latent_channels: usize,
    /// Hidden widths are `2h` and `4h`.
    pub hidden: usize,
}

impl LevelSpec {
    /// Specs for levels `0..hidden.len()` over frames of length `p`.
    pub fn hierarchy(p: usize, latent_channels: usize, hidden: &[usize]) -> Result<Vec<LevelSpec>> {
        let specs: Vec<LevelSpec> = hidden
            .iter()
            .enumerate()
            .map(|(i, &h)| LevelSpec {
                index: i,
                in_channels: if i == 0 { 2 } else { latent_channels },
                in_width: p >> i,
                latent_channels,
                hidden: h,
            })
            .collect();
        for s in &specs {
            s.validate()?;
            if s.in_width << s.index != p {
                return Err(Error::Config(format!(
                    "p = {p} is not divisible by 2^{} for level {}",
                    s.index + 1,
                    s.index
                )));
            }
        }
        Ok(specs)
    }

    pub fn out_width(&self) -> usize {
        self.in_width / 2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("level {}: {m}", self.index)));
        if self.hidden == 0 || self.latent_channels == 0 || self.in_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.in_width < 2 || !self.in_width.is_multiple_of(2) {
            return bad(format!(
                "input width {} must be even and >= 2",
                self.in_width
            ));
        }
        let expected_in = if self.index == 0 {
            2
        } else {
            self.latent_channels
        };
        if self.in_channels != expected_in {
            return bad(format!(
                "expected {expected_in} input channels, got {}",
                self.in_channels
            ));
        }
        Ok(())
    }
}

/// A bottleneck `[ℓ, w]` tagged with the level that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTensor {
    pub values: Tensor,
    pub level: usize,
}

/// Layer inputs kept by a training forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    inputs: [Tensor; 3],
}

/// One encoder/decoder pair with its optional quantizer.
#[derive(Clone, Debug, PartialEq)]
pub struct Level {
    pub spec: LevelSpec,
    pub encoder: [Conv1d; 3],
    pub decoder_convs: [Conv1d; 2],
    pub decoder_out: ConvTranspose1d,
    pub codebook: Option<Codebook>,
}

fn conv(c_in: usize, c_out: usize, g: LayerGeom, rng: &mut ChaCha8Rng) -> Conv1d {
    Conv1d::new(c_in, c_out, g.kernel, g.stride, g.padding, rng)
}

impl Level {
    /// Freshly initialized level; the generator is keyed by `(seed, index)`.
    pub fn build(spec: LevelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(spec.index as u64);
        let (h2, h4, l) = (2 * spec.hidden, 4 * spec.hidden, spec.latent_channels);
        let [e0, e1, e2] = ENCODER_GEOMETRY;
        let [d0, d1, d2] = DECODER_GEOMETRY;
        let encoder = [
            conv(spec.in_channels, h2, e0, &mut rng),
            conv(h2, h4, e1, &mut rng),
            conv(h4, l, e2, &mut rng),
        ];
        let decoder_convs = [conv(l, h4, d0, &mut rng), conv(h4, h2, d1, &mut rng)];
        let decoder_out = ConvTranspose1d::new(
            h2,
            spec.in_channels,
            d2.kernel,
            d2.stride,
            d2.padding,
            &mut rng,
        );
        Ok(Level {
            spec,
            encoder,
            decoder_convs,
            decoder_out,
            codebook: None,
        })
    }

    fn check_input(
        &self,
        x: &Tensor,
        op: &'static str,
        channels: usize,
        width: usize,
    ) -> Result<()> {
        if x.shape() != [channels, width] {
            return Err(Error::dim(
                op,
                format!(
                    "level {} expects [{channels}, {width}], got {:?}",
                    self.spec.index,
                    x.shape()
                ),
            ));
        }
        Ok(())
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.encode_traced(x)?.0)
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        Ok(self.decode_traced(z)?.0)
    }

    pub fn encode_traced(&self, x: &Tensor) -> Result<(Tensor, Trace)> {
        self.check_input(x, "encode", self.spec.in_channels, self.spec.in_width)?;
        let a1 = leaky_relu(&self.encoder[0].forward(x)?, LEAKY_SLOPE);
        let a2 = leaky_relu(&self.encoder[1].forward(&a1)?, LEAKY_SLOPE);
        let z = self.encoder[2].forward(&a2)?.check_finite("encode")?;
        Ok((
            z,
            Trace {
                inputs: [x.clone(), a1, a2],
            },
        ))
    }

    pub fn decode_traced(&self, z: &Tensor) -> Result<(Tensor, Trace)> {
        self.check_input(
            z,
            "decode",
            self.spec.latent_channels,
            self.spec.out_width(),
        )?;
        let a1 = leaky_relu(&self.decoder_convs[0].forward(z)?, LEAKY_SLOPE);
        let a2 = leaky_relu(&self.decoder_convs[1].forward(&a1)?, LEAKY_SLOPE);
        let out = self.decoder_out.forward(&a2)?.check_finite("decode")?;
        Ok((
            out,
            Trace {
                inputs: [z.clone(), a1, a2],
            },
        ))
    }

    /// Accumulates encoder gradients for `grad_z`; returns the input gradient.
    pub fn encoder_backward(&mut self, trace: &Trace, grad_z: &Tensor) -> Result<Tensor> {
        let [x, a1, a2] = &trace.inputs;
        // leaky-ReLU keeps sign, so the activation stands in for its input
        let g = self.encoder[2].backward(a2, grad_z)?;
        let g = leaky_relu_backward(a2, &g, LEAKY_SLOPE);
        let g = self.encoder[1].backward(a1, &g)?;
        let g = leaky_relu_backward(a1, &g, LEAKY_SLOPE);
        self.encoder[0].backward(x, &g)
    }

    /// Accumulates decoder gradients for `grad_out`; returns the latent gradient.
    pub fn decoder_backward(&mut self, trace: &Trace, grad_out: &Tensor) -> Result<Tensor> {
        let [z, a1, a2] = &trace.inputs;
        let g = self.decoder_out.backward(a2, grad_out)?;
        let g = leaky_relu_backward(a2, &g, LEAKY_SLOPE);
        let g = self.decoder_convs[1].backward(a1, &g)?;
        let g = leaky_relu_backward(a1, &g, LEAKY_SLOPE);
        self.decoder_convs[0].backward(z, &g)
    }

    /// Encoder and decoder parameters (not the codebook), in a fixed order.
    pub fn network_params_mut(&mut self) -> Vec<&mut Param> {
        network_params(
            &mut self.encoder,
            &mut self.decoder_convs,
            &mut self.decoder_out,
        )
    }

    fn named_layers(&self) -> Vec<(String, &dyn Parameterized)> {
        let mut out: Vec<(String, &dyn Parameterized)> = Vec::new();
        for (j, c) in self.encoder.iter().enumerate() {
            out.push((format!("enc{j}"), c));
        }
        for (j, c) in self.decoder_convs.iter().enumerate() {
            out.push((format!("dec{j}"), c));
        }
        out.push(("dec2".into(), &self.decoder_out));
        out
    }

    fn named_layers_mut(&mut self) -> Vec<(String, &mut dyn Parameterized)> {
        let mut out: Vec<(String, &mut dyn Parameterized)> = Vec::new();
        for (j, c) in self.encoder.iter_mut().enumerate() {
            out.push((format!("enc{j}"), c));
        }
        for (j, c) in self.decoder_convs.iter_mut().enumerate() {
            out.push((format!("dec{j}"), c));
        }
        out.push(("dec2".into(), &mut self.decoder_out));
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_layers()
            .iter()
            .map(|(_, l)| l.param_count())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        self.network_params_mut()
            .into_iter()
            .for_each(Param::zero_grad);
        if let Some(cb) = &mut self.codebook {
            cb.codewords.zero_grad();
        }
    }
}

impl Parameterized for Level {
    fn params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        for (name, layer) in self.named_layers() {
            for (p, t) in layer.params() {
                out.push((format!("{name}.{p}"), t));
            }
        }
        if let Some(cb) = &self.codebook {
            out.push(("codebook".into(), &cb.codewords));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = network_params(
            &mut self.encoder,
            &mut self.decoder_convs,
            &mut self.decoder_out,
        );
        if let Some(cb) = &mut self.codebook {
            out.push(&mut cb.codewords);
        }
        out
    }
}

fn network_params<'a>(
    encoder: &'a mut [Conv1d; 3],
    decoder_convs: &'a mut [Conv1d; 2],
    decoder_out: &'a mut ConvTranspose1d,
) -> Vec<&'a mut Param> {
    let mut out = Vec::new();
    for c in encoder {
        out.extend(c.params_mut());
    }
    for c in decoder_convs {
        out.extend(c.params_mut());
    }
    out.extend(decoder_out.params_mut());
    out
}

/// Which training stage produced a stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Hae,
    Vq,
    #[serde(rename = "kl", alias = "vq_kl")]
    VqKl,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Hae => "hae",
            Stage::Vq => "vq",
            Stage::VqKl => "kl",
        }
    }

    pub fn quantized(self) -> bool {
        self != Stage::Hae
    }

    fn code(self) -> f32 {
        self as u8 as f32
    }

    fn from_code(c: f32) -> Result<Self> {
        match c as i64 {
            0 => Ok(Stage::Hae),
            1 => Ok(Stage::Vq),
            2 => Ok(Stage::VqKl),
            _ => Err(Error::Format(format!("unknown stage code {c}"))),
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hae" => Ok(Stage::Hae),
            "vq" => Ok(Stage::Vq),
            "kl" | "vq_kl" => Ok(Stage::VqKl),
            _ => Err(Error::Config(format!("unknown stage {s:?} (hae, vq, kl)"))),
        }
    }
}

/// The hierarchy: levels in order, the stage tag and how many levels have
/// finished training in that stage.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelStack {
    pub levels: Vec<Level>,
    pub stage: Stage,
    pub trained: usize,
}

impl ModelStack {
    /// Untrained HAE stack over frames of length `p`.
    pub fn new(p: usize, latent_channels: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let levels = LevelSpec::hierarchy(p, latent_channels, hidden)?
            .into_iter()
            .map(|s| Level::build(s, seed))
            .collect::<Result<Vec<_>>>()?;
        if levels.is_empty() {
            return Err(Error::Config("a stack needs at least one level".into()));
        }
        Ok(ModelStack {
            levels,
            stage: Stage::Hae,
            trained: 0,
        })
    }

    pub fn frame_len(&self) -> usize {
        self.levels[0].spec.in_width
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, pair) in self.levels.windows(2).enumerate() {
            let (a, b) = (&pair[0].spec, &pair[1].spec);
            if b.index != i + 1 || b.in_channels != a.latent_channels || b.in_width != a.out_width()
            {
                return Err(Error::Config(format!(
                    "levels {i} and {} do not chain",
                    i + 1
                )));
            }
        }
        if self.trained > self.levels.len() {
            return Err(Error::State("more trained levels than levels".into()));
        }
        for (i, l) in self.levels.iter().enumerate() {
            match (self.stage.quantized(), &l.codebook) {
                (false, Some(_)) => {
                    return Err(Error::State(format!(
                        "HAE stack has a codebook at level {i}"
                    )))
                }
                (true, None) if i < self.trained => {
                    return Err(Error::State(format!("trained level {i} has no codebook")))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub(crate) fn require_trained(&self, level: usize) -> Result<()> {
        if level >= self.levels.len() {
            return Err(Error::State(format!(
                "level {level} does not exist (stack depth {})",
                self.levels.len()
            )));
        }
        if level >= self.trained {
            return Err(Error::State(format!(
                "level {level} is not trained ({} of {} levels trained in stage {})",
                self.trained,
                self.levels.len(),
                self.stage.name()
            )));
        }
        Ok(())
    }

    /// Input of level `level`: the frame for level 0, else the (quantized in
    /// VQ stages) bottleneck of the level below. Only levels below `level`
    /// need to be trained.
    pub fn level_input(&self, x: &Tensor, level: usize) -> Result<Tensor> {
        if level > 0 {
            self.require_trained(level - 1)?;
        }
        let mut cur = x.clone();
        for l in &self.levels[..level] {
            cur = l.encode(&cur)?;
            if self.stage.quantized() {
                cur = quantizer(l)?.quantize_frozen(&cur, l.spec.index)?.0;
            }
        }
        Ok(cur)
    }

    /// Bottleneck `z_e` of `target`, deterministic.
    pub fn encode_to_level(&self, x: &IqFrame, target: usize) -> Result<LatentTensor> {
        self.require_trained(target)?;
        let input = self.level_input(&x.to_tensor(), target)?;
        Ok(LatentTensor {
            values: self.levels[target].encode(&input)?,
            level: target,
        })
    }

    /// Argmax quantization of `target`'s bottleneck.
    pub fn quantize_at(&self, x: &IqFrame, target: usize) -> Result<(Tensor, CodeIndices)> {
        let z = self.encode_to_level(x, target)?;
        quantizer(&self.levels[target])?.quantize_frozen(&z.values, target)
    }

    /// Runs decoders `from..=0`, giving a `[2, p]` reconstruction.
    pub fn decode_from_level(&self, z: &LatentTensor, from: usize) -> Result<IqFrame> {
        self.require_trained(from)?;
        if z.level != from {
            return Err(Error::dim(
                "decode_from_level",
                format!("latent comes from level {}, decoding from {from}", z.level),
            ));
        }
        IqFrame::from_tensor(
            &self
                .decode_tensor(&z.values, from)?
                .check_finite("decode_from_level")?,
        )
    }

    /// Decoder chain `from..=0` on a raw bottleneck tensor.
    pub fn decode_tensor(&self, z: &Tensor, from: usize) -> Result<Tensor> {
        let mut cur = z.clone();
        for i in (0..=from).rev() {
            cur = self.levels[i].decode(&cur)?;
        }
        Ok(cur)
    }

    /// Full encode/decode through `level`. With `quantize == false` every
    /// codebook is bypassed (the HAE path). Quantized stages start from a
    /// fully trained HAE, so bypassing works there before any VQ training.
    pub fn reconstruct(&self, x: &IqFrame, level: usize, quantize: bool) -> Result<IqFrame> {
        if quantize || !self.stage.quantized() {
            self.require_trained(level)?;
        } else if level >= self.depth() {
            return Err(Error::State(format!(
                "level {level} does not exist (stack depth {})",
                self.depth()
            )));
        }
        let quantize = quantize && self.stage.quantized();
        let mut cur = x.to_tensor();
        for l in &self.levels[..=level] {
            cur = l.encode(&cur)?;
            if quantize {
                cur = quantizer(l)?.quantize_frozen(&cur, l.spec.index)?.0;
            }
        }
        cur = self.decode_tensor(&cur, level)?;
        IqFrame::from_tensor(&cur.check_finite("reconstruct")?)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        let scalar = |v: f32| Tensor::from_vec(&[1], vec![v]).unwrap();
        ck.insert("meta.stage", scalar(self.stage.code()));
        ck.insert("meta.trained", scalar(self.trained as f32));
        let specs: Vec<f32> = self
            .levels
            .iter()
            .flat_map(|l| {
                let s = l.spec;
                [
                    s.index,
                    s.in_channels,
                    s.in_width,
                    s.latent_channels,
                    s.hidden,
                ]
                .map(|v| v as f32)
            })
            .collect();
        ck.insert(
            "meta.levels",
            Tensor::from_vec(&[self.levels.len(), 5], specs).unwrap(),
        );
        for (i, l) in self.levels.iter().enumerate() {
            for (name, layer) in l.named_layers() {
                for (p, t) in layer.params() {
                    ck.insert(format!("level{i}.{name}.{p}"), t.value.clone());
                }
            }
            if let Some(cb) = &l.codebook {
                ck.insert(format!("level{i}.codebook"), cb.codewords.value.clone());
                ck.insert(
                    format!("level{i}.reset_count"),
                    scalar(cb.reset_count as f32),
                );
                ck.insert(
                    format!("level{i}.codebook_meta"),
                    Tensor::from_vec(&[2], vec![cb.temperature, cb.init_rms]).unwrap(),
                );
            }
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let stage = Stage::from_code(ck.require("meta.stage")?.data()[0])?;
        let trained = ck.require("meta.trained")?.data()[0] as usize;
        let meta = ck.require("meta.levels")?;
        if meta.rank() != 2 || meta.dim(1) != 5 {
            return Err(Error::Format("meta.levels must be [n, 5]".into()));
        }
        let mut levels = Vec::new();
        for (i, row) in meta.data().chunks(5).enumerate() {
            let spec = LevelSpec {
                index: row[0] as usize,
                in_channels: row[1] as usize,
                in_width: row[2] as usize,
                latent_channels: row[3] as usize,
                hidden: row[4] as usize,
            };
            if spec.index != i {
                return Err(Error::Format(format!(
                    "level spec {i} has index {}",
                    spec.index
                )));
            }
            let mut level = Level::build(spec, 0).map_err(|e| Error::Format(e.to_string()))?;
            for (name, layer) in level.named_layers_mut() {
                let names: Vec<String> = layer.params().into_iter().map(|(n, _)| n).collect();
                for (p, param) in names.iter().zip(layer.params_mut()) {
                    let key = format!("level{i}.{name}.{p}");
                    let t = ck.require(&key)?;
                    if t.shape() != param.value.shape() {
                        return Err(Error::Format(format!(
                            "{key}: stored shape {:?}, architecture needs {:?}",
                            t.shape(),
                            param.value.shape()
                        )));
                    }
                    *param = Param::new(t.clone());
                }
            }
            if let Some(cw) = ck.get(&format!("level{i}.codebook")) {
                if cw.rank() != 2 || cw.dim(1) != spec.latent_channels || cw.dim(0) == 0 {
                    return Err(Error::Format(format!(
                        "level{i}.codebook has shape {:?}",
                        cw.shape()
                    )));
                }
                let reset_count = ck.require(&format!("level{i}.reset_count"))?.data()[0] as u32;
                let m = ck.require(&format!("level{i}.codebook_meta"))?;
                if m.len() != 2 {
                    return Err(Error::Format(format!(
                        "level{i}.codebook_meta must hold 2 values"
                    )));
                }
                level.codebook = Some(Codebook {
                    codewords: Param::new(cw.clone()),
                    usage: vec![0; cw.dim(0)],
                    reset_count,
                    temperature: m.data()[0],
                    init_rms: m.data()[1],
                });
            }
            levels.push(level);
        }
        if levels.is_empty() {
            return Err(Error::Format("checkpoint holds no levels".into()));
        }
        let stack = ModelStack {
            levels,
            stage,
            trained,
        };
        stack.validate().map_err(|e| Error::Format(e.to_string()))?;
        Ok(stack)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_checkpoint().to_bytes()
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read_from(bytes)?)
    }

    /// Model id: the first 16 bytes of SHA-256 over the checkpoint bytes.
    pub fn digest(&self) -> [u8; 16] {
        digest_bytes(&self.to_bytes())
    }
}

pub fn digest_bytes(bytes: &[u8]) -> [u8; 16] {
    let full = Sha256::digest(bytes);
    let mut id = [0u8; 16];
    id.copy_from_slice(&full[..16]);
    id
}

fn quantizer(level: &Level) -> Result<&Codebook> {
    level
        .codebook
        .as_ref()
        .ok_or_else(|| Error::State(format!("level {} has no codebook", level.spec.index)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sigsynth::{synth_frame, ModClass, SynthConfig};

    fn trained_hae(hidden: &[usize]) -> ModelStack {
        let mut s = ModelStack::new(1024, LATENT_CHANNELS, hidden, 1).unwrap();
        s.trained = s.depth();
        s
    }

    fn frame() -> IqFrame {
        synth_frame(&SynthConfig::default(), ModClass::Psk16, 0).unwrap()
    }

    #[test]
    fn bottleneck_shapes_halve_per_level() {
        let stack = trained_hae(&[2, 2, 2, 2, 2]);
        let x = frame();
        let z0 = stack.encode_to_level(&x, 0).unwrap();
        assert_eq!(z0.values.shape(), &[64, 512]);
        let z4 = stack.encode_to_level(&x, 4).unwrap();
        assert_eq!(z4.values.shape(), &[64, 32]);
        for level in 0..5 {
            let z = stack.encode_to_level(&x, level).unwrap();
            assert_eq!(z.values.shape(), &[64, 1024 >> (level + 1)]);
            let out = stack.decode_from_level(&z, level).unwrap();
            assert_eq!(out.shape(), [2, 1024]);
        }
    }

    #[test]
    fn each_decoder_inverts_its_encoder_shape() {
        for spec in LevelSpec::hierarchy(1024, 64, &DEFAULT_HIDDEN).unwrap() {
            let level = Level::build(spec, 3).unwrap();
            let x = Tensor::zeros(&[spec.in_channels, spec.in_width]);
            let z = level.encode(&x).unwrap();
            assert_eq!(z.shape(), &[64, spec.in_width / 2]);
            assert_eq!(level.decode(&z).unwrap().shape(), x.shape());
        }
    }

    #[test]
    fn untrained_levels_are_refused() {
        let mut stack = trained_hae(&[2, 2]);
        stack.trained = 1;
        assert!(stack.encode_to_level(&frame(), 0).is_ok());
        assert!(matches!(
            stack.encode_to_level(&frame(), 1),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn inconsistent_specs_are_configuration_errors() {
        assert!(matches!(
            LevelSpec::hierarchy(1000, 64, &[4; 5]),
            Err(Error::Config(_))
        ));
        let spec = LevelSpec {
            index: 1,
            in_channels: 2,
            in_width: 512,
            latent_channels: 64,
            hidden: 4,
        };
        assert!(matches!(Level::build(spec, 0), Err(Error::Config(_))));
    }

    #[test]
    fn encoding_is_deterministic() {
        let stack = trained_hae(&[2, 2, 2]);
        let a = stack.encode_to_level(&frame(), 2).unwrap();
        let b = stack.encode_to_level(&frame(), 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_round_trip_preserves_everything() {
        let mut stack = trained_hae(&[2, 3]);
        stack.stage = Stage::Vq;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for l in &mut stack.levels {
            let mut cb = Codebook::gaussian(64, &[0.0; 64], &[1.0; 64], &mut rng).unwrap();
            cb.reset_count = 3;
            l.codebook = Some(cb);
        }
        let bytes = stack.to_bytes();
        let back =
            ModelStack::from_checkpoint(&Checkpoint::read_from(&bytes[..]).unwrap()).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.digest(), stack.digest());
        assert_eq!(back.levels[1].codebook.as_ref().unwrap().reset_count, 3);
    }

    #[test]
    fn stage_and_codebooks_must_agree() {
        let mut stack = trained_hae(&[2]);
        stack.stage = Stage::Vq;
        assert!(stack.validate().is_err());
        assert!(matches!(
            stack.quantize_at(&frame(), 0),
            Err(Error::State(_))
        ));
    }
}
