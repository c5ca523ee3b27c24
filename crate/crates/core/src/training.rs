//! Greedy, level-by-level training in three stages: plain autoencoders,
//! then vector quantization on the transferred weights, then the KL term.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hae::{Level, ModelStack, Stage, DEFAULT_HIDDEN, LATENT_CHANNELS};
use crate::ndiff::ops::mse;
use crate::ndiff::{AdamConfig, OptimState, Param, Real, Tensor};
use crate::sigsynth::LabeledDataset;
use crate::vq::{gumbel_noise, vq_backward, vq_forward, Codebook, ResetPolicy, SampleMode};

/// Slices with a norm below this are left out of the phase loss.
pub const PHASE_NORM_FLOOR: f64 = 1e-8;

/// How stage 2 seeds each codebook.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodebookInit {
    /// Independent Gaussians with the per-channel mean and spread of `z_e`.
    Gaussian,
    /// Randomly drawn `z_e` slices with small Gaussian jitter.
    LatentSamples,
}

/// Assignment used while training quantized stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainSampling {
    /// Gumbel-softmax with one-hot forward and relaxed backward.
    Hard,
    /// Gumbel-softmax mixture in the forward pass.
    Soft,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub seed: u64,
    /// Levels `0..levels` are trained.
    pub levels: usize,
    pub hidden: Vec<usize>,
    pub latent_channels: usize,
    pub codebook_size: usize,
    pub epochs_hae: usize,
    pub epochs_vq: usize,
    pub epochs_kl: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub lambda_mse: f32,
    pub lambda_phase: f32,
    pub lambda_commit: f32,
    pub lambda_kl: f32,
    pub temperature: f32,
    pub gumbel_tau_start: f64,
    pub gumbel_tau_end: f64,
    pub sampling: TrainSampling,
    pub codebook_init: CodebookInit,
    pub reset_sigma0_fraction: f64,
    pub reset_gamma: f64,
    pub reset_base_period: u64,
    /// Quantized stages train only the codebooks when set.
    pub freeze_transferred: bool,
    /// Epochs without a relative improvement of 1e-4 before a level stops.
    pub patience: usize,
    pub dataset: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: Stage::Hae,
            seed: 0,
            levels: 5,
            hidden: DEFAULT_HIDDEN[..5].to_vec(),
            latent_channels: LATENT_CHANNELS,
            codebook_size: 64,
            epochs_hae: 20,
            epochs_vq: 20,
            epochs_kl: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            lambda_mse: 1.0,
            lambda_phase: 0.5,
            lambda_commit: 0.01,
            lambda_kl: 0.1,
            temperature: 0.1,
            gumbel_tau_start: 1.0,
            gumbel_tau_end: 0.3,
            sampling: TrainSampling::Hard,
            codebook_init: CodebookInit::LatentSamples,
            reset_sigma0_fraction: 0.1,
            reset_gamma: 0.7,
            reset_base_period: 500,
            freeze_transferred: false,
            patience: 10,
            dataset: None,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(s).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.levels == 0 || self.levels > self.hidden.len() {
            return bad("levels must be between 1 and the length of hidden");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        let weights = [
            self.lambda_mse,
            self.lambda_phase,
            self.lambda_commit,
            self.lambda_kl,
        ];
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return bad("loss weights must be finite and nonnegative");
        }
        if self.codebook_size < 2 {
            return bad("codebook_size must be at least 2");
        }
        if !(self.temperature > 0.0)
            || !(self.gumbel_tau_start > 0.0)
            || !(self.gumbel_tau_end > 0.0)
        {
            return bad("temperatures must be positive");
        }
        if !(self.reset_gamma > 0.0 && self.reset_gamma < 1.0) || self.reset_base_period == 0 {
            return bad("reset_gamma must lie in (0, 1) and reset_base_period be positive");
        }
        Ok(())
    }

    pub fn reset_policy(&self) -> ResetPolicy {
        ResetPolicy {
            sigma0_fraction: self.reset_sigma0_fraction,
            gamma: self.reset_gamma,
            base_period: self.reset_base_period,
        }
    }

    fn epochs(&self, stage: Stage) -> usize {
        match stage {
            Stage::Hae => self.epochs_hae,
            Stage::Vq => self.epochs_vq,
            Stage::VqKl => self.epochs_kl,
        }
    }

    /// Gumbel temperature for `epoch` of `epochs`, linear from start to end.
    pub fn gumbel_tau(&self, epoch: usize, epochs: usize) -> f64 {
        if epochs <= 1 {
            return self.gumbel_tau_start;
        }
        let t = epoch as f64 / (epochs - 1) as f64;
        self.gumbel_tau_start + (self.gumbel_tau_end - self.gumbel_tau_start) * t
    }

    fn sample_mode(&self, tau: f64) -> SampleMode {
        match self.sampling {
            TrainSampling::Hard => SampleMode::GumbelHard { tau },
            TrainSampling::Soft => SampleMode::GumbelSoft { tau },
        }
    }
}

/// `1 - (1/p) Σ_i cos(target[:, i], prediction[:, i])` over `[2, p]` tensors,
/// with the gradient with respect to `prediction`. Slices where either
/// vector is shorter than [`PHASE_NORM_FLOOR`] contribute nothing.
pub fn phase_loss<T: Real>(target: &Tensor<T>, prediction: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if target.shape() != prediction.shape() || target.rank() != 2 || target.dim(0) != 2 {
        return Err(Error::dim(
            "phase_loss",
            format!("{:?} vs {:?}", target.shape(), prediction.shape()),
        ));
    }
    let p = target.dim(1);
    let (a, b) = (target.data(), prediction.data());
    let mut grad = vec![T::zero(); 2 * p];
    let mut cos_sum = T::zero();
    let floor = T::lit(PHASE_NORM_FLOOR);
    let inv_p = T::one() / T::from_usize(p).unwrap();
    for i in 0..p {
        let (ar, ai, br, bi) = (a[i], a[p + i], b[i], b[p + i]);
        let na = (ar * ar + ai * ai).sqrt();
        let nb = (br * br + bi * bi).sqrt();
        if na < floor || nb < floor {
            continue;
        }
        let cos = (ar * br + ai * bi) / (na * nb);
        cos_sum += cos;
        // d cos / d b = a / (|a||b|) - cos · b / |b|²
        grad[i] = -inv_p * (ar / (na * nb) - cos * br / (nb * nb));
        grad[p + i] = -inv_p * (ai / (na * nb) - cos * bi / (nb * nb));
    }
    Ok((
        T::one() - cos_sum * inv_p,
        Tensor::from_vec(target.shape(), grad)?,
    ))
}

/// Reconstruction loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ReconLoss {
    pub mse: f64,
    /// Zero above level 0.
    pub phase: f64,
    pub total: f64,
}

/// `λ_mse·MSE + λ_φ·L_φ`, the phase term only at level 0. Returns the loss and
/// its gradient with respect to `prediction`.
pub fn reconstruction_loss(
    target: &Tensor,
    prediction: &Tensor,
    level: usize,
    lambda_mse: f32,
    lambda_phase: f32,
) -> Result<(ReconLoss, Tensor)> {
    let (m, mut grad) = mse(target, prediction)?;
    grad.scale(lambda_mse);
    let mut parts = ReconLoss {
        mse: m as f64,
        phase: 0.0,
        total: lambda_mse as f64 * m as f64,
    };
    if level == 0 {
        let (ph, mut g) = phase_loss(target, prediction)?;
        g.scale(lambda_phase);
        grad.add_assign(&g);
        parts.phase = ph as f64;
        parts.total += lambda_phase as f64 * ph as f64;
    }
    Ok((parts, grad))
}

/// Mean loss components of one epoch at one level.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub stage: Stage,
    pub level: usize,
    pub epoch: usize,
    pub total: f64,
    pub mse: f64,
    pub phase: f64,
    pub commit: f64,
    pub kl: f64,
    /// Fraction of codewords selected during the epoch.
    pub usage_coverage: f64,
    pub resets: u32,
    pub gumbel_tau: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    /// Per-level codeword selection counts of the last epoch.
    pub usage_histograms: Vec<(usize, Vec<u64>)>,
    pub wall_clock_secs: f64,
    pub checkpoint: Option<String>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "stage,level,epoch,total,mse,phase,commit,kl,usage_coverage,resets,gumbel_tau\n",
        );
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.6},{},{:.6}",
                r.stage.name(),
                r.level,
                r.epoch,
                r.total,
                r.mse,
                r.phase,
                r.commit,
                r.kl,
                r.usage_coverage,
                r.resets,
                r.gumbel_tau
            );
        }
        out
    }

    pub fn usage_csv(&self) -> String {
        let mut out = String::from("level,codeword,count\n");
        for (level, hist) in &self.usage_histograms {
            for (k, c) in hist.iter().enumerate() {
                let _ = writeln!(out, "{level},{k},{c}");
            }
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let mut levels: Vec<(Stage, usize)> =
            self.records.iter().map(|r| (r.stage, r.level)).collect();
        levels.dedup();
        for (stage, level) in levels {
            let rs: Vec<&EpochRecord> = self
                .records
                .iter()
                .filter(|r| r.stage == stage && r.level == level)
                .collect();
            let (first, last) = (rs[0], rs[rs.len() - 1]);
            let _ = writeln!(
                out,
                "stage {} level {}: {} epochs, total {:.6} -> {:.6}, mse {:.6}, usage {:.2}, resets {}",
                stage.name(),
                level,
                rs.len(),
                first.total,
                last.total,
                last.mse,
                last.usage_coverage,
                last.resets
            );
        }
        let _ = writeln!(out, "wall clock {:.1} s", self.wall_clock_secs);
        if let Some(ck) = &self.checkpoint {
            let _ = writeln!(out, "checkpoint {ck}");
        }
        out
    }

    pub fn series(&self, stage: Stage, level: usize) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.stage == stage && r.level == level)
            .map(|r| r.total)
            .collect()
    }
}

fn level_rng(seed: u64, level: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // streams below 2^32 key weight initialization
    rng.set_stream((1u64 << 32) | level as u64);
    rng
}

fn divergence(stage: Stage, level: usize, epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::Divergence {
            stage: stage.name().into(),
            level,
            epoch,
            detail: format!("non-finite values in {op}"),
        },
        other => other,
    }
}

fn frames(data: &LabeledDataset) -> Result<Vec<Tensor>> {
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    Ok(data.frames.iter().map(|(f, _)| f.to_tensor()).collect())
}

/// Stage 1: trains every level as a plain autoencoder.
pub fn train_stage1_hae(
    cfg: &TrainConfig,
    data: &LabeledDataset,
) -> Result<(ModelStack, TrainReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let xs = frames(data)?;
    let mut stack = ModelStack::new(
        data.frame_len(),
        cfg.latent_channels,
        &cfg.hidden[..cfg.levels],
        cfg.seed,
    )?;
    let mut report = TrainReport::default();
    for level in 0..cfg.levels {
        let inputs = xs
            .iter()
            .map(|x| stack.level_input(x, level))
            .collect::<Result<Vec<_>>>()?;
        let mut rng = level_rng(cfg.seed, level);
        let mut trainer = LevelTrainer::new(cfg, Stage::Hae, &mut stack.levels[level], 0.0);
        trainer.run(&inputs, &mut rng, &mut report)?;
        stack.trained = level + 1;
    }
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok((stack, report))
}

/// Copies an HAE stack into a quantized stage: same weights, no codebooks.
pub fn transfer_from_hae(hae: &ModelStack) -> Result<ModelStack> {
    if hae.stage != Stage::Hae {
        return Err(Error::State(format!(
            "weight transfer needs an HAE stack, got stage {}",
            hae.stage.name()
        )));
    }
    let mut stack = hae.clone();
    stack.stage = Stage::Vq;
    stack.trained = 0;
    Ok(stack)
}

/// Stage 2: quantizer plus commitment loss on top of the HAE weights.
pub fn train_stage2_vq(
    cfg: &TrainConfig,
    data: &LabeledDataset,
    hae: &ModelStack,
) -> Result<(ModelStack, TrainReport)> {
    if hae.trained < cfg.levels {
        return Err(Error::State(format!(
            "HAE stack has {} trained levels, {} requested",
            hae.trained, cfg.levels
        )));
    }
    let stack = transfer_from_hae(hae)?;
    train_quantized(cfg, data, stack, Stage::Vq, 0.0)
}

/// Stage 3: stage-2 regime plus `λ_kl · KL(posterior ‖ uniform)`.
pub fn train_stage3_kl(
    cfg: &TrainConfig,
    data: &LabeledDataset,
    vq: &ModelStack,
) -> Result<(ModelStack, TrainReport)> {
    if vq.stage != Stage::Vq {
        return Err(Error::State(format!(
            "KL stage needs a VQ stack, got stage {}",
            vq.stage.name()
        )));
    }
    if vq.trained < cfg.levels {
        return Err(Error::State(format!(
            "VQ stack has {} trained levels, {} requested",
            vq.trained, cfg.levels
        )));
    }
    let mut stack = vq.clone();
    stack.stage = Stage::VqKl;
    stack.trained = 0;
    train_quantized(cfg, data, stack, Stage::VqKl, cfg.lambda_kl)
}

/// Another pass of the stage-2 regime over an already quantized stack.
pub fn continue_stage2(
    cfg: &TrainConfig,
    data: &LabeledDataset,
    vq: &ModelStack,
) -> Result<(ModelStack, TrainReport)> {
    if vq.stage != Stage::Vq {
        return Err(Error::State("continuation needs a VQ stack".into()));
    }
    let mut stack = vq.clone();
    stack.trained = 0;
    train_quantized(cfg, data, stack, Stage::Vq, 0.0)
}

fn train_quantized(
    cfg: &TrainConfig,
    data: &LabeledDataset,
    mut stack: ModelStack,
    stage: Stage,
    lambda_kl: f32,
) -> Result<(ModelStack, TrainReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let xs = frames(data)?;
    let mut report = TrainReport::default();
    for level in 0..cfg.levels {
        let inputs = xs
            .iter()
            .map(|x| stack.level_input(x, level))
            .collect::<Result<Vec<_>>>()?;
        let mut rng = level_rng(cfg.seed, level);
        let lvl = &mut stack.levels[level];
        if lvl.codebook.is_none() {
            let latents = inputs
                .iter()
                .map(|x| lvl.encode(x))
                .collect::<Result<Vec<_>>>()?;
            let mut cb = match cfg.codebook_init {
                CodebookInit::Gaussian => {
                    Codebook::from_latent_stats(cfg.codebook_size, &latents, &mut rng)?
                }
                CodebookInit::LatentSamples => {
                    Codebook::from_latent_samples(cfg.codebook_size, &latents, 0.05, &mut rng)?
                }
            };
            cb.temperature = cfg.temperature;
            lvl.codebook = Some(cb);
        }
        let mut trainer = LevelTrainer::new(cfg, stage, lvl, lambda_kl);
        trainer.run(&inputs, &mut rng, &mut report)?;
        report.usage_histograms.push((level, trainer.last_usage));
        stack.trained = level + 1;
    }
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok((stack, report))
}

struct LevelTrainer<'a> {
    cfg: &'a TrainConfig,
    stage: Stage,
    level: &'a mut Level,
    lambda_kl: f32,
    optim: OptimState,
    steps_since_reset: u64,
    last_usage: Vec<u64>,
}

#[derive(Default)]
struct Sums {
    total: f64,
    mse: f64,
    phase: f64,
    commit: f64,
    kl: f64,
}

impl<'a> LevelTrainer<'a> {
    fn new(cfg: &'a TrainConfig, stage: Stage, level: &'a mut Level, lambda_kl: f32) -> Self {
        let adam = AdamConfig {
            lr: cfg.learning_rate,
            ..AdamConfig::default()
        };
        let optim = OptimState::new(adam, trainable(cfg, stage, level).into_iter().map(|p| &*p));
        LevelTrainer {
            cfg,
            stage,
            level,
            lambda_kl,
            optim,
            steps_since_reset: 0,
            last_usage: Vec::new(),
        }
    }

    fn run(
        &mut self,
        inputs: &[Tensor],
        rng: &mut ChaCha8Rng,
        report: &mut TrainReport,
    ) -> Result<()> {
        let epochs = self.cfg.epochs(self.stage);
        let index = self.level.spec.index;
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        let (mut best, mut stale) = (f64::INFINITY, 0usize);
        for epoch in 0..epochs {
            let tau_g = self.cfg.gumbel_tau(epoch, epochs);
            order.shuffle(rng);
            let mut sums = Sums::default();
            let n_c = self.level.codebook.as_ref().map_or(0, Codebook::len);
            let mut usage = vec![0u64; n_c];
            let mut resets = 0;
            for batch in order.chunks(self.cfg.batch_size) {
                self.level.zero_grad();
                for &i in batch {
                    self.sample_step(&inputs[i], tau_g, rng, &mut sums, &mut usage)
                        .map_err(|e| divergence(self.stage, index, epoch, e))?;
                }
                let scale = 1.0 / batch.len() as f32;
                let mut params = trainable(self.cfg, self.stage, self.level);
                for p in params.iter_mut() {
                    p.grad.scale(scale);
                }
                self.optim.step(&mut params);
                resets += self.maybe_reset(rng);
            }
            let n = inputs.len() as f64;
            let rec = EpochRecord {
                stage: self.stage,
                level: index,
                epoch,
                total: sums.total / n,
                mse: sums.mse / n,
                phase: sums.phase / n,
                commit: sums.commit / n,
                kl: sums.kl / n,
                usage_coverage: if n_c == 0 {
                    0.0
                } else {
                    usage.iter().filter(|&&u| u > 0).count() as f64 / n_c as f64
                },
                resets,
                gumbel_tau: if self.stage == Stage::Hae { 0.0 } else { tau_g },
            };
            if !rec.total.is_finite() {
                return Err(Error::Divergence {
                    stage: self.stage.name().into(),
                    level: index,
                    epoch,
                    detail: format!("epoch loss {}", rec.total),
                });
            }
            let total = rec.total;
            report.records.push(rec);
            self.last_usage = usage;
            if total < best * (1.0 - 1e-4) {
                best = total;
                stale = 0;
            } else {
                stale += 1;
                if stale >= self.cfg.patience {
                    break;
                }
            }
        }
        Ok(())
    }

    fn sample_step(
        &mut self,
        x: &Tensor,
        tau_g: f64,
        rng: &mut ChaCha8Rng,
        sums: &mut Sums,
        usage: &mut [u64],
    ) -> Result<()> {
        let cfg = self.cfg;
        let index = self.level.spec.index;
        let (z, enc_trace) = self.level.encode_traced(x)?;
        let Some(cb) = self.level.codebook.as_ref() else {
            let (y, dec_trace) = self.level.decode_traced(&z)?;
            let (loss, g) = reconstruction_loss(x, &y, index, cfg.lambda_mse, cfg.lambda_phase)?;
            accumulate(sums, loss, 0.0, 0.0, 0.0, 0.0);
            let gz = self.level.decoder_backward(&dec_trace, &g)?;
            self.level.encoder_backward(&enc_trace, &gz)?;
            return Ok(());
        };
        let mode = cfg.sample_mode(tau_g);
        let noise = gumbel_noise(&[z.dim(1), cb.len()], rng);
        let tau = cb.temperature;
        let pass = vq_forward(&z, &cb.codewords.value, tau, mode, Some(&noise))?;
        let (y, dec_trace) = self.level.decode_traced(&pass.z_q)?;
        let (loss, g) = reconstruction_loss(x, &y, index, cfg.lambda_mse, cfg.lambda_phase)?;
        let gzq = self.level.decoder_backward(&dec_trace, &g)?;
        let cb = self.level.codebook.as_mut().expect("checked above");
        let (gz, gcb) = vq_backward(
            &z,
            &cb.codewords.value,
            &pass,
            &gzq,
            tau,
            cfg.lambda_commit,
            self.lambda_kl,
        )?;
        cb.codewords.grad.add_assign(&gcb);
        cb.record_usage(&pass.indices);
        for &k in &pass.indices {
            usage[k] += 1;
        }
        let (commit, kl) = (pass.commitment as f64, pass.kl as f64);
        accumulate(
            sums,
            loss,
            cfg.lambda_commit as f64,
            commit,
            self.lambda_kl as f64,
            kl,
        );
        self.level.encoder_backward(&enc_trace, &gz)?;
        Ok(())
    }

    fn maybe_reset(&mut self, rng: &mut ChaCha8Rng) -> u32 {
        let Some(cb) = self.level.codebook.as_mut() else {
            return 0;
        };
        self.steps_since_reset += 1;
        let policy = self.cfg.reset_policy();
        let due = self.steps_since_reset >= policy.period(cb.reset_count);
        if cb.reset_codewords(due, &policy, rng).is_some() {
            self.steps_since_reset = 0;
            1
        } else {
            0
        }
    }
}

fn accumulate(sums: &mut Sums, loss: ReconLoss, lc: f64, commit: f64, lk: f64, kl: f64) {
    sums.total += loss.total + lc * commit + lk * kl;
    sums.mse += loss.mse;
    sums.phase += loss.phase;
    sums.commit += commit;
    sums.kl += kl;
}

fn trainable<'l>(cfg: &TrainConfig, stage: Stage, level: &'l mut Level) -> Vec<&'l mut Param> {
    if stage.quantized() && cfg.freeze_transferred {
        level
            .codebook
            .as_mut()
            .map(|c| vec![&mut c.codewords])
            .unwrap_or_default()
    } else {
        use crate::ndiff::Parameterized;
        level.params_mut()
    }
}

/// Mean MSE between each level's input and its reconstruction over `data`,
/// bypassing or applying the quantizers.
pub fn level_reconstruction_mse(
    stack: &ModelStack,
    data: &LabeledDataset,
    level: usize,
    quantize: bool,
) -> Result<f64> {
    let mut total = 0.0;
    for (x, _) in &data.frames {
        let y = stack.reconstruct(x, level, quantize)?;
        total += mse(&x.to_tensor(), &y.to_tensor())?.0 as f64;
    }
    Ok(total / data.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iq(re: &[f32], im: &[f32]) -> Tensor {
        let mut v = re.to_vec();
        v.extend_from_slice(im);
        Tensor::from_vec(&[2, re.len()], v).unwrap()
    }

    #[test]
    fn phase_loss_identity_rotation_and_scale() {
        let x = iq(&[1.0, 0.5, -0.3, 0.0], &[0.0, 0.5, 0.8, -1.0]);
        assert!(phase_loss(&x, &x).unwrap().0.abs() < 1e-6);
        // multiplying by j maps (re, im) to (-im, re)
        let rot = iq(&[-0.0, -0.5, -0.8, 1.0], &[1.0, 0.5, -0.3, 0.0]);
        assert!((phase_loss(&x, &rot).unwrap().0 - 1.0).abs() < 1e-6);
        let (l, _) = reconstruction_loss(&x, &rot, 0, 1.0, 0.5).unwrap();
        assert!(l.mse > 0.0);
        let twice = x.map(|v| 2.0 * v);
        assert!(phase_loss(&x, &twice).unwrap().0.abs() < 1e-6);
        let (l, _) = reconstruction_loss(&x, &twice, 0, 1.0, 0.5).unwrap();
        let mean_sq = x.data().iter().map(|v| (v * v) as f64).sum::<f64>() / 8.0;
        assert!((l.mse - mean_sq).abs() < 1e-6);
    }

    #[test]
    fn phase_term_only_at_level_zero() {
        let x = iq(&[1.0, 0.0], &[0.0, 1.0]);
        let y = iq(&[0.0, 1.0], &[1.0, 0.0]);
        let (l0, _) = reconstruction_loss(&x, &y, 0, 1.0, 0.5).unwrap();
        let (l1, _) = reconstruction_loss(&x, &y, 1, 1.0, 0.5).unwrap();
        assert!(l0.phase > 0.0);
        assert_eq!(l1.phase, 0.0);
        assert_eq!(l1.total, l1.mse);
        assert!((l0.total - (l0.mse + 0.5 * l0.phase)).abs() < 1e-12);
    }

    #[test]
    fn tiny_slices_are_skipped() {
        let x = iq(&[1.0, 0.0], &[0.0, 0.0]);
        let y = iq(&[2.0, 5.0], &[0.0, 5.0]);
        let (l, g) = phase_loss(&x, &y).unwrap();
        assert!((l - 0.5).abs() < 1e-7);
        assert_eq!(g.data()[1], 0.0);
        assert_eq!(g.data()[3], 0.0);
    }

    #[test]
    fn config_parses_flat_toml_and_rejects_bad_values() {
        let cfg =
            TrainConfig::from_toml_str("stage = \"vq\"\nepochs_vq = 3\nlambda_kl = 0.0\n").unwrap();
        assert_eq!(cfg.stage, Stage::Vq);
        assert_eq!(cfg.epochs_vq, 3);
        assert!(TrainConfig::from_toml_str("lambda_mse = -1.0").is_err());
        assert!(TrainConfig::from_toml_str("unknown_key = 1").is_err());
        let round = TrainConfig::from_toml_str(&TrainConfig::default().to_toml()).unwrap();
        assert_eq!(round, TrainConfig::default());
    }

    #[test]
    fn gumbel_temperature_anneals_linearly() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.gumbel_tau(0, 8), 1.0);
        assert!((cfg.gumbel_tau(7, 8) - 0.3).abs() < 1e-12);
        assert!((cfg.gumbel_tau(1, 3) - 0.65).abs() < 1e-12);
    }

    #[test]
    fn stage_order_is_enforced() {
        let hae = ModelStack::new(64, 8, &[2], 0).unwrap();
        let mut not_hae = hae.clone();
        not_hae.stage = Stage::Vq;
        assert!(matches!(transfer_from_hae(&not_hae), Err(Error::State(_))));
        let ds = crate::sigsynth::synth_dataset(&crate::sigsynth::SynthConfig {
            per_class: 1,
            frame_len: 64,
            ..Default::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            levels: 1,
            hidden: vec![2],
            ..Default::default()
        };
        assert!(matches!(
            train_stage2_vq(&cfg, &ds, &hae),
            Err(Error::State(_))
        ));
        assert!(matches!(
            train_stage3_kl(&cfg, &ds, &hae),
            Err(Error::State(_))
        ));
    }
}
