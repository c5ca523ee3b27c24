//! Trainable vector quantizer.
//!
//! Each latent slice `z[:, s]` (one column of an `[ℓ, w]` bottleneck) gets a
//! posterior over the `n_c` codewords, `softmax_k(-‖z_s - e_k‖² / τ)`. During
//! training an assignment is drawn with the Gumbel-softmax relaxation (soft,
//! or hard with straight-through gradients); compression uses the nearest
//! codeword. The commitment term is the posterior expectation of the squared
//! distance and the KL term compares the posterior with a uniform prior.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndiff::ops::{exp_ftz, log_softmax};
use crate::ndiff::{Param, Real, Tensor};

/// How a slice is assigned to codewords.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SampleMode {
    /// Convex combination `softmax((log q + g)/τ_g)`.
    GumbelSoft { tau: f64 },
    /// One-hot forward, relaxed-sample gradient backward.
    GumbelHard { tau: f64 },
    /// Nearest codeword; deterministic, no gradient to the assignment.
    Argmax,
}

impl SampleMode {
    pub fn needs_noise(self) -> bool {
        !matches!(self, SampleMode::Argmax)
    }

    fn tau(self) -> Option<f64> {
        match self {
            SampleMode::GumbelSoft { tau } | SampleMode::GumbelHard { tau } => Some(tau),
            SampleMode::Argmax => None,
        }
    }
}

/// Codeword indices of one quantized bottleneck.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodeIndices {
    pub indices: Vec<u32>,
    pub level: usize,
}

/// `[w, n_c]` matrix of squared distances between slices of `z` (`[ℓ, w]`)
/// and rows of `codebook` (`[n_c, ℓ]`).
pub fn squared_distances<T: Real>(z: &Tensor<T>, codebook: &Tensor<T>) -> Result<Tensor<T>> {
    if z.rank() != 2 || codebook.rank() != 2 || z.dim(0) != codebook.dim(1) {
        return Err(Error::dim(
            "posterior",
            format!("latent {:?} vs codebook {:?}", z.shape(), codebook.shape()),
        ));
    }
    let (ell, w, n_c) = (z.dim(0), z.dim(1), codebook.dim(0));
    let zt = z.transpose()?;
    let mut d = vec![T::zero(); w * n_c];
    for (s, row) in d.chunks_mut(n_c).enumerate() {
        let zs = &zt.data()[s * ell..(s + 1) * ell];
        for (k, out) in row.iter_mut().enumerate() {
            let ek = &codebook.data()[k * ell..(k + 1) * ell];
            *out = zs.iter().zip(ek).map(|(&a, &b)| (a - b) * (a - b)).sum();
        }
    }
    Tensor::from_vec(&[w, n_c], d)
}

/// Row-normalized posterior `q(k | z_s)` at temperature `tau`, `[w, n_c]`.
pub fn posterior<T: Real>(z: &Tensor<T>, codebook: &Tensor<T>, tau: T) -> Result<Tensor<T>> {
    let d = squared_distances(z, codebook)?;
    Ok(log_softmax(&d.map(|v| -v / tau), 1)?.map(exp_ftz))
}

fn argmin_row<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v < row[best] {
            best = k;
        }
    }
    best
}

fn argmax_row<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Standard Gumbel noise `-ln(-ln u)` of the given shape.
pub fn gumbel_noise<T: Real>(shape: &[usize], rng: &mut impl Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            T::lit(-(-u.ln()).ln())
        })
        .collect();
    Tensor::from_vec(shape, data).expect("shape")
}

/// `softmax((log_probs + noise) / tau)` row by row.
pub fn relaxed_sample<T: Real>(
    log_probs: &Tensor<T>,
    noise: &Tensor<T>,
    tau: T,
) -> Result<Tensor<T>> {
    if log_probs.shape() != noise.shape() {
        return Err(Error::dim("relaxed_sample", "noise shape mismatch"));
    }
    let a = Tensor::from_vec(
        log_probs.shape(),
        log_probs
            .data()
            .iter()
            .zip(noise.data())
            .map(|(&l, &g)| (l + g) / tau)
            .collect(),
    )?;
    Ok(log_softmax(&a, 1)?.map(exp_ftz))
}

/// Assignment drawn from a probability matrix.
#[derive(Clone, Debug)]
pub struct Assignment<T> {
    /// `[w, n_c]` forward weights: a soft row or a one-hot row.
    pub weights: Tensor<T>,
    pub indices: Vec<usize>,
}

/// Draws an assignment per row of `probs` (`[w, n_c]`).
pub fn sample_assignment<T: Real>(
    probs: &Tensor<T>,
    mode: SampleMode,
    rng: &mut impl Rng,
) -> Result<Assignment<T>> {
    if probs.rank() != 2 {
        return Err(Error::dim(
            "sample_assignment",
            "probabilities must be [w, n_c]",
        ));
    }
    let (w, n_c) = (probs.dim(0), probs.dim(1));
    let floor = T::min_positive_value();
    let log_p = probs.map(|p| p.max(floor).ln());
    let soft = match mode.tau() {
        Some(tau) => Some(relaxed_sample(
            &log_p,
            &gumbel_noise(&[w, n_c], rng),
            T::lit(tau),
        )?),
        None => None,
    };
    let basis = soft.as_ref().unwrap_or(probs);
    let indices: Vec<usize> = basis.data().chunks(n_c).map(argmax_row).collect();
    let weights = match (mode, soft) {
        (SampleMode::GumbelSoft { .. }, Some(s)) => s,
        _ => one_hot(&indices, n_c),
    };
    Ok(Assignment { weights, indices })
}

fn one_hot<T: Real>(indices: &[usize], n_c: usize) -> Tensor<T> {
    let mut t = Tensor::zeros(&[indices.len(), n_c]);
    for (s, &k) in indices.iter().enumerate() {
        t.data_mut()[s * n_c + k] = T::one();
    }
    t
}

/// `z_q[:, s] = Σ_k weights[s, k] e_k`, giving `[ℓ, w]`.
pub fn mix_codewords<T: Real>(weights: &Tensor<T>, codebook: &Tensor<T>) -> Tensor<T> {
    let (w, n_c, ell) = (weights.dim(0), weights.dim(1), codebook.dim(1));
    let mut out = vec![T::zero(); ell * w];
    // (W·E)ᵀ = Eᵀ·Wᵀ
    T::gemm(
        ell,
        n_c,
        w,
        codebook.data(),
        true,
        weights.data(),
        true,
        &mut out,
        false,
    );
    Tensor::from_vec(&[ell, w], out).expect("shape")
}

/// Expected squared distance under the posterior, averaged over slices.
pub fn commitment_from<T: Real>(dist: &Tensor<T>, probs: &Tensor<T>) -> T {
    let w = T::from_usize(dist.dim(0).max(1)).unwrap();
    dist.data()
        .iter()
        .zip(probs.data())
        .map(|(&d, &p)| d * p)
        .sum::<T>()
        / w
}

/// `mean_s Σ_k q(k|z_s) ‖z_s - e_k‖²` with `probs` from [`posterior`].
pub fn commitment_loss<T: Real>(
    z: &Tensor<T>,
    codebook: &Tensor<T>,
    probs: &Tensor<T>,
) -> Result<T> {
    let d = squared_distances(z, codebook)?;
    if d.shape() != probs.shape() {
        return Err(Error::dim(
            "commitment_loss",
            "probabilities do not match latent",
        ));
    }
    Ok(commitment_from(&d, probs))
}

/// Mean over rows of `KL(probs[s] ‖ uniform) = log n_c - H(probs[s])`, in nats.
pub fn kl_loss<T: Real>(probs: &Tensor<T>) -> T {
    let (w, n_c) = (probs.dim(0), probs.dim(1));
    let log_nc = T::from_usize(n_c).unwrap().ln();
    let total: T = probs
        .data()
        .chunks(n_c)
        .map(|row| {
            log_nc
                + row
                    .iter()
                    .filter(|&&p| p > T::zero())
                    .map(|&p| p * p.ln())
                    .sum::<T>()
        })
        .sum();
    total / T::from_usize(w.max(1)).unwrap()
}

fn kl_from_log<T: Real>(log_probs: &Tensor<T>) -> T {
    let (w, n_c) = (log_probs.dim(0), log_probs.dim(1));
    let log_nc = T::from_usize(n_c).unwrap().ln();
    let total: T = log_probs
        .data()
        .chunks(n_c)
        .map(|row| log_nc + row.iter().map(|&l| exp_ftz(l) * l).sum::<T>())
        .sum();
    total / T::from_usize(w.max(1)).unwrap()
}

/// Everything the backward pass needs from one quantizer forward pass.
#[derive(Clone, Debug)]
pub struct VqPass<T> {
    pub dist: Tensor<T>,
    pub log_probs: Tensor<T>,
    pub probs: Tensor<T>,
    /// Relaxed sample; present for the Gumbel modes.
    pub soft: Option<Tensor<T>>,
    pub weights: Tensor<T>,
    pub indices: Vec<usize>,
    pub z_q: Tensor<T>,
    pub mode: SampleMode,
    pub commitment: T,
    pub kl: T,
}

/// Quantizes `z` (`[ℓ, w]`) against `codebook` (`[n_c, ℓ]`). `noise` is the
/// Gumbel noise for the sampling modes and is ignored for argmax.
pub fn vq_forward<T: Real>(
    z: &Tensor<T>,
    codebook: &Tensor<T>,
    tau: T,
    mode: SampleMode,
    noise: Option<&Tensor<T>>,
) -> Result<VqPass<T>> {
    let dist = squared_distances(z, codebook)?;
    let n_c = codebook.dim(0);
    let log_probs = log_softmax(&dist.map(|v| -v / tau), 1)?;
    let probs = log_probs.map(exp_ftz);
    let (soft, indices) = match mode.tau() {
        Some(tau_g) => {
            let noise = noise.ok_or_else(|| Error::State("Gumbel mode needs noise".into()))?;
            let s = relaxed_sample(&log_probs, noise, T::lit(tau_g))?;
            let idx = s.data().chunks(n_c).map(argmax_row).collect();
            (Some(s), idx)
        }
        None => (
            None,
            dist.data().chunks(n_c).map(argmin_row).collect::<Vec<_>>(),
        ),
    };
    let weights = match (mode, &soft) {
        (SampleMode::GumbelSoft { .. }, Some(s)) => s.clone(),
        _ => one_hot(&indices, n_c),
    };
    let z_q = match mode {
        // exact copies of the selected codewords
        SampleMode::Argmax | SampleMode::GumbelHard { .. } => gather_codewords(&indices, codebook),
        SampleMode::GumbelSoft { .. } => mix_codewords(&weights, codebook),
    };
    let commitment = commitment_from(&dist, &probs);
    let kl = kl_from_log(&log_probs);
    Ok(VqPass {
        dist,
        log_probs,
        probs,
        soft,
        weights,
        indices,
        z_q: z_q.check_finite("vq_forward")?,
        mode,
        commitment,
        kl,
    })
}

/// `[ℓ, w]` tensor whose column `s` is codeword `indices[s]`.
pub fn gather_codewords<T: Real>(indices: &[usize], codebook: &Tensor<T>) -> Tensor<T> {
    let (ell, w) = (codebook.dim(1), indices.len());
    let mut out = vec![T::zero(); ell * w];
    for (s, &k) in indices.iter().enumerate() {
        for j in 0..ell {
            out[j * w + s] = codebook.data()[k * ell + j];
        }
    }
    Tensor::from_vec(&[ell, w], out).expect("shape")
}

/// Gradients of `L(z_q) + λ_commit·commitment + λ_kl·KL` with respect to the
/// latent and the codebook, given `grad_zq = dL/dz_q`.
pub fn vq_backward<T: Real>(
    z: &Tensor<T>,
    codebook: &Tensor<T>,
    pass: &VqPass<T>,
    grad_zq: &Tensor<T>,
    tau: T,
    lambda_commit: T,
    lambda_kl: T,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (ell, w) = (z.dim(0), z.dim(1));
    let n_c = codebook.dim(0);
    if grad_zq.shape() != [ell, w] {
        return Err(Error::dim(
            "vq_backward",
            "gradient shape does not match latent",
        ));
    }
    let wf = T::from_usize(w).unwrap();
    let mut g_code = vec![T::zero(); n_c * ell];
    // Straight-through: hard mode differentiates as the relaxed sample.
    let mix = pass.soft.as_ref().unwrap_or(&pass.weights);
    T::gemm(
        n_c,
        w,
        ell,
        mix.data(),
        true,
        grad_zq.data(),
        true,
        &mut g_code,
        false,
    );

    let mut g_logp = vec![T::zero(); w * n_c];
    if let (Some(soft), Some(tau_g)) = (&pass.soft, pass.mode.tau()) {
        let mut g_w = vec![T::zero(); w * n_c];
        T::gemm(
            w,
            ell,
            n_c,
            grad_zq.data(),
            true,
            codebook.data(),
            true,
            &mut g_w,
            false,
        );
        let inv_tau_g = T::one() / T::lit(tau_g);
        for ((y, gw), gl) in soft
            .data()
            .chunks(n_c)
            .zip(g_w.chunks(n_c))
            .zip(g_logp.chunks_mut(n_c))
        {
            let dot: T = y.iter().zip(gw).map(|(&a, &b)| a * b).sum();
            for k in 0..n_c {
                gl[k] += y[k] * (gw[k] - dot) * inv_tau_g;
            }
        }
    }

    let mut g_dist = vec![T::zero(); w * n_c];
    let (p, lp, d) = (pass.probs.data(), pass.log_probs.data(), pass.dist.data());
    if lambda_commit != T::zero() || lambda_kl != T::zero() {
        for i in 0..w * n_c {
            // dP from the commitment term enters through dlogP = dP * P
            let d_p = lambda_commit * d[i] / wf;
            g_logp[i] += d_p * p[i] + lambda_kl * p[i] * (lp[i] + T::one()) / wf;
            g_dist[i] += lambda_commit * p[i] / wf;
        }
    }
    // through log_softmax(-D/τ)
    for ((gl, pr), gd) in g_logp
        .chunks(n_c)
        .zip(p.chunks(n_c))
        .zip(g_dist.chunks_mut(n_c))
    {
        let total: T = gl.iter().copied().sum();
        for k in 0..n_c {
            gd[k] -= (gl[k] - pr[k] * total) / tau;
        }
    }

    // D[s,k] = ‖z_s - e_k‖²
    let two = T::lit(2.0);
    let mut g_z = vec![T::zero(); ell * w];
    T::gemm(
        ell,
        n_c,
        w,
        codebook.data(),
        true,
        &g_dist,
        true,
        &mut g_z,
        false,
    );
    let row_sums: Vec<T> = g_dist
        .chunks(n_c)
        .map(|r| r.iter().copied().sum())
        .collect();
    for j in 0..ell {
        for s in 0..w {
            let i = j * w + s;
            g_z[i] = two * (z.data()[i] * row_sums[s] - g_z[i]);
        }
    }
    let mut dt_z = vec![T::zero(); n_c * ell];
    T::gemm(n_c, w, ell, &g_dist, true, z.data(), true, &mut dt_z, false);
    let mut col_sums = vec![T::zero(); n_c];
    for r in g_dist.chunks(n_c) {
        for k in 0..n_c {
            col_sums[k] += r[k];
        }
    }
    for k in 0..n_c {
        for j in 0..ell {
            let i = k * ell + j;
            g_code[i] += two * (codebook.data()[i] * col_sums[k] - dt_z[i]);
        }
    }
    Ok((
        Tensor::from_vec(&[ell, w], g_z)?.check_finite("vq_backward")?,
        Tensor::from_vec(&[n_c, ell], g_code)?.check_finite("vq_backward")?,
    ))
}

/// Parameters of the least-used-codeword reset schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResetPolicy {
    /// Vicinity radius at the first reset, as a fraction of the codebook RMS
    /// at initialization.
    pub sigma0_fraction: f64,
    /// Geometric shrink factor of the vicinity per reset.
    pub gamma: f64,
    /// Optimizer steps before the first reset; doubles after every reset.
    pub base_period: u64,
}

impl Default for ResetPolicy {
    fn default() -> Self {
        ResetPolicy {
            sigma0_fraction: 0.1,
            gamma: 0.7,
            base_period: 500,
        }
    }
}

impl ResetPolicy {
    /// Vicinity radius `σ₀·γ^r` after `r` resets.
    pub fn sigma(&self, sigma0: f64, resets: u32) -> f64 {
        sigma0 * self.gamma.powi(resets as i32)
    }

    pub fn period(&self, resets: u32) -> u64 {
        self.base_period.saturating_mul(1u64 << resets.min(40))
    }
}

/// What a reset did.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResetEvent {
    pub replaced: usize,
    pub source: usize,
    pub sigma: f64,
}

/// `n_c × ℓ` learnable codebook with usage counters.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    pub codewords: Param,
    pub usage: Vec<u64>,
    pub reset_count: u32,
    /// Posterior temperature τ.
    pub temperature: f32,
    /// Codebook RMS at initialization; scales the reset vicinity.
    pub init_rms: f32,
}

impl Codebook {
    /// Gaussian codewords with per-dimension `mean` and `std`.
    pub fn gaussian(n_c: usize, mean: &[f32], std: &[f32], rng: &mut impl Rng) -> Result<Self> {
        let ell = mean.len();
        if n_c == 0 || ell == 0 || std.len() != ell {
            return Err(Error::Config("codebook needs n_c, ℓ > 0".into()));
        }
        let mut data = Vec::with_capacity(n_c * ell);
        for _ in 0..n_c {
            for j in 0..ell {
                let g: f32 = StandardNormal.sample(rng);
                data.push(mean[j] + std[j] * g);
            }
        }
        let rms = (data.iter().map(|v| v * v).sum::<f32>() / data.len() as f32).sqrt();
        Ok(Codebook {
            codewords: Param::new(Tensor::from_vec(&[n_c, ell], data)?),
            usage: vec![0; n_c],
            reset_count: 0,
            temperature: 1.0,
            init_rms: rms,
        })
    }

    /// Gaussian codewords matched to the per-channel mean and spread of a set
    /// of `[ℓ, w]` latents.
    pub fn from_latent_stats(n_c: usize, latents: &[Tensor], rng: &mut impl Rng) -> Result<Self> {
        let ell = latents
            .first()
            .map(|t| t.dim(0))
            .ok_or_else(|| Error::Config("no latents to initialize the codebook from".into()))?;
        let mut mean = vec![0f64; ell];
        let mut n = 0usize;
        for t in latents {
            for (j, row) in t.data().chunks(t.dim(1)).enumerate() {
                mean[j] += row.iter().map(|&v| v as f64).sum::<f64>();
            }
            n += t.dim(1);
        }
        let mean: Vec<f32> = mean.iter().map(|s| (s / n as f64) as f32).collect();
        let std: Vec<f32> = latent_std(latents, ell)
            .into_iter()
            .map(|s| s.max(1e-6))
            .collect();
        Self::gaussian(n_c, &mean, &std, rng)
    }

    /// Codewords copied from `n_c` latent slices drawn without replacement
    /// (with replacement when there are fewer slices than codewords), plus
    /// Gaussian jitter of `jitter` times the per-channel spread.
    pub fn from_latent_samples(
        n_c: usize,
        latents: &[Tensor],
        jitter: f32,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let stats = Self::from_latent_stats(n_c, latents, rng)?;
        let ell = stats.dim();
        let std = latent_std(latents, ell);
        let slices: Vec<(usize, usize)> = latents
            .iter()
            .enumerate()
            .flat_map(|(i, t)| (0..t.dim(1)).map(move |s| (i, s)))
            .collect();
        let picks: Vec<(usize, usize)> = if slices.len() >= n_c {
            rand::seq::index::sample(rng, slices.len(), n_c)
                .into_iter()
                .map(|j| slices[j])
                .collect()
        } else {
            (0..n_c)
                .map(|_| slices[rng.random_range(0..slices.len())])
                .collect()
        };
        let mut data = Vec::with_capacity(n_c * ell);
        for (i, s) in picks {
            let t = &latents[i];
            for j in 0..ell {
                let g: f32 = StandardNormal.sample(rng);
                data.push(t.data()[j * t.dim(1) + s] + jitter * std[j] * g);
            }
        }
        let rms = (data.iter().map(|v| v * v).sum::<f32>() / data.len() as f32).sqrt();
        Ok(Codebook {
            codewords: Param::new(Tensor::from_vec(&[n_c, ell], data)?),
            init_rms: rms,
            ..stats
        })
    }

    pub fn len(&self) -> usize {
        self.codewords.value.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.codewords.value.dim(1)
    }

    /// Bits needed per index, `ceil(log2 n_c)`.
    pub fn index_bits(&self) -> u32 {
        index_bits(self.len())
    }

    pub fn posterior(&self, z: &Tensor) -> Result<Tensor> {
        posterior(z, &self.codewords.value, self.temperature)
    }

    /// Nearest-codeword quantization without touching the usage counters.
    pub fn quantize_frozen(&self, z: &Tensor, level: usize) -> Result<(Tensor, CodeIndices)> {
        let pass = vq_forward(
            z,
            &self.codewords.value,
            self.temperature,
            SampleMode::Argmax,
            None,
        )?;
        Ok((
            pass.z_q,
            CodeIndices {
                indices: pass.indices.iter().map(|&k| k as u32).collect(),
                level,
            },
        ))
    }

    /// Quantizes in `mode` and counts each selected index.
    pub fn quantize(
        &mut self,
        z: &Tensor,
        mode: SampleMode,
        level: usize,
        rng: &mut impl Rng,
    ) -> Result<(Tensor, CodeIndices)> {
        let noise = mode
            .needs_noise()
            .then(|| gumbel_noise(&[z.dim(1), self.len()], rng));
        let pass = vq_forward(
            z,
            &self.codewords.value,
            self.temperature,
            mode,
            noise.as_ref(),
        )?;
        self.record_usage(&pass.indices);
        Ok((
            pass.z_q,
            CodeIndices {
                indices: pass.indices.iter().map(|&k| k as u32).collect(),
                level,
            },
        ))
    }

    pub fn record_usage(&mut self, indices: &[usize]) {
        for &k in indices {
            self.usage[k] += 1;
        }
    }

    /// Codewords for the given indices, `[ℓ, w]`.
    pub fn lookup(&self, indices: &[u32]) -> Result<Tensor> {
        let n_c = self.len() as u32;
        if let Some((position, &index)) = indices.iter().enumerate().find(|(_, &k)| k >= n_c) {
            return Err(Error::Corruption {
                index,
                position,
                limit: n_c,
            });
        }
        let idx: Vec<usize> = indices.iter().map(|&k| k as usize).collect();
        Ok(gather_codewords(&idx, &self.codewords.value))
    }

    /// Fraction of codewords selected at least once since the last reset.
    pub fn usage_coverage(&self) -> f64 {
        self.usage.iter().filter(|&&u| u > 0).count() as f64 / self.len() as f64
    }

    /// Moves the least-used codeword to a Gaussian vicinity of the most-used
    /// one when `period_elapsed`, then zeroes the counters.
    pub fn reset_codewords(
        &mut self,
        period_elapsed: bool,
        policy: &ResetPolicy,
        rng: &mut impl Rng,
    ) -> Option<ResetEvent> {
        if !period_elapsed {
            return None;
        }
        let least = argmin_row(&self.usage);
        let most = argmax_row(&self.usage);
        let sigma = policy.sigma(
            policy.sigma0_fraction * self.init_rms as f64,
            self.reset_count,
        );
        let ell = self.dim();
        let data = self.codewords.value.data_mut();
        for j in 0..ell {
            let g: f64 = StandardNormal.sample(rng);
            data[least * ell + j] = data[most * ell + j] + (sigma * g) as f32;
        }
        self.usage.iter_mut().for_each(|u| *u = 0);
        self.reset_count += 1;
        Some(ResetEvent {
            replaced: least,
            source: most,
            sigma,
        })
    }
}

fn latent_std(latents: &[Tensor], ell: usize) -> Vec<f32> {
    let (mut sum, mut sq, mut n) = (vec![0f64; ell], vec![0f64; ell], 0usize);
    for t in latents {
        let w = t.dim(1);
        for (j, row) in t.data().chunks(w).enumerate() {
            for &v in row {
                sum[j] += v as f64;
                sq[j] += (v as f64) * (v as f64);
            }
        }
        n += w;
    }
    sum.iter()
        .zip(&sq)
        .map(|(s, q)| {
            let m = s / n as f64;
            (q / n as f64 - m * m).max(0.0).sqrt() as f32
        })
        .collect()
}

pub fn index_bits(n_c: usize) -> u32 {
    usize::BITS - (n_c.max(2) - 1).leading_zeros()
}
