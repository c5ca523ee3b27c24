use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::SynthConfig;
use crate::error::{Error, Result};

/// The six modulation classes of the dataset, in label order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModClass {
    Ask4 = 0,
    Pam8 = 1,
    Psk16 = 2,
    Qam32Cross = 3,
    Fsk2 = 4,
    Ofdm256 = 5,
}

impl ModClass {
    pub const ALL: [ModClass; 6] = [
        ModClass::Ask4,
        ModClass::Pam8,
        ModClass::Psk16,
        ModClass::Qam32Cross,
        ModClass::Fsk2,
        ModClass::Ofdm256,
    ];
    pub const COUNT: usize = 6;

    pub fn label(self) -> u8 {
        self as u8
    }

    pub fn from_label(label: u8) -> Result<Self> {
        Self::ALL
            .get(label as usize)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown modulation label {label}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            ModClass::Ask4 => "4ask",
            ModClass::Pam8 => "8pam",
            ModClass::Psk16 => "16psk",
            ModClass::Qam32Cross => "32qam_cross",
            ModClass::Fsk2 => "2fsk",
            ModClass::Ofdm256 => "ofdm256",
        }
    }

    /// Information bits carried by one symbol (one OFDM symbol for OFDM).
    pub fn bits_per_symbol(self, cfg: &SynthConfig) -> usize {
        match self {
            ModClass::Ask4 => 2,
            ModClass::Pam8 => 3,
            ModClass::Psk16 => 4,
            ModClass::Qam32Cross => 5,
            ModClass::Fsk2 => 1,
            ModClass::Ofdm256 => 2 * cfg.ofdm_subcarriers,
        }
    }

    /// Samples spanned by one symbol in the modulated stream.
    pub fn samples_per_symbol(self, cfg: &SynthConfig) -> usize {
        match self {
            ModClass::Ofdm256 => cfg.ofdm_subcarriers + cfg.ofdm_cyclic_prefix,
            _ => cfg.samples_per_symbol,
        }
    }

    fn guard_symbols(self, cfg: &SynthConfig) -> usize {
        match self {
            ModClass::Fsk2 | ModClass::Ofdm256 => 0,
            _ => 2 * (cfg.pulse_span / 2),
        }
    }

    /// Minimum number of symbols whose modulated stream covers `p` samples.
    pub fn min_symbols(self, cfg: &SynthConfig) -> usize {
        cfg.frame_len.div_ceil(self.samples_per_symbol(cfg)) + self.guard_symbols(cfg)
    }

    /// Minimum bit count `modulate` accepts for one frame.
    pub fn required_bits(self, cfg: &SynthConfig) -> usize {
        self.bits_per_symbol(cfg) * self.min_symbols(cfg)
    }

    /// Unit-mean-power constellation of a linear scheme, indexed by the
    /// symbol's bits read MSB first.
    pub fn constellation(self) -> Option<Vec<Complex64>> {
        match self {
            ModClass::Ask4 => Some(pam_levels(4)),
            ModClass::Pam8 => Some(pam_levels(8)),
            ModClass::Psk16 => Some(
                (0..16)
                    .map(|k| Complex64::from_polar(1.0, 2.0 * PI * k as f64 / 16.0))
                    .collect(),
            ),
            ModClass::Qam32Cross => Some(cross_qam32()),
            ModClass::Fsk2 | ModClass::Ofdm256 => None,
        }
    }
}

impl fmt::Display for ModClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown modulation scheme {s:?}")))
    }
}

/// Real-valued bipolar levels `(2i - (m-1))`, scaled to unit mean power.
fn pam_levels(m: usize) -> Vec<Complex64> {
    let raw: Vec<f64> = (0..m).map(|i| (2 * i) as f64 - (m - 1) as f64).collect();
    let power = raw.iter().map(|a| a * a).sum::<f64>() / m as f64;
    raw.iter()
        .map(|a| Complex64::new(a / power.sqrt(), 0.0))
        .collect()
}

/// 6×6 grid on odd coordinates with the four corners removed (mean power 20
/// before scaling), enumerated row by row.
fn cross_qam32() -> Vec<Complex64> {
    let coords: [f64; 6] = [-5.0, -3.0, -1.0, 1.0, 3.0, 5.0];
    let scale = 20f64.sqrt();
    let mut pts = Vec::with_capacity(32);
    for &im in coords.iter().rev() {
        for &re in &coords {
            if re.abs() == 5.0 && im.abs() == 5.0 {
                continue;
            }
            pts.push(Complex64::new(re / scale, im / scale));
        }
    }
    pts
}

/// Raised-cosine taps at `sps` samples per symbol over `span` symbols, with
/// the centre tap equal to 1 and exact zeros at every other symbol instant.
pub fn raised_cosine_taps(sps: usize, rolloff: f64, span: usize) -> Vec<f64> {
    let half = (span / 2 * sps) as isize;
    (-half..=half)
        .map(|n| {
            let t = n as f64 / sps as f64;
            if n % sps as isize == 0 {
                return if n == 0 { 1.0 } else { 0.0 };
            }
            let denom = 1.0 - (2.0 * rolloff * t).powi(2);
            if denom.abs() < 1e-12 {
                PI / 4.0 * sinc(1.0 / (2.0 * rolloff))
            } else {
                sinc(t) * (PI * rolloff * t).cos() / denom
            }
        })
        .collect()
}

fn sinc(t: f64) -> f64 {
    if t == 0.0 {
        1.0
    } else {
        (PI * t).sin() / (PI * t)
    }
}

/// Complex baseband sequence produced by a modulator.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSeq {
    pub samples: Vec<Complex64>,
    /// Samples per symbol; symbol `j` sits at sample `j * samples_per_symbol`
    /// for the linear schemes.
    pub samples_per_symbol: usize,
}

impl ComplexSeq {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean_power(&self) -> f64 {
        self.samples.iter().map(|c| c.norm_sqr()).sum::<f64>() / self.samples.len().max(1) as f64
    }
}

fn bits_to_index(bits: &[bool]) -> usize {
    bits.iter().fold(0, |acc, &b| (acc << 1) | b as usize)
}

/// Maps information bits through `scheme` to complex baseband samples.
pub fn modulate(scheme: ModClass, bits: &[bool], cfg: &SynthConfig) -> Result<ComplexSeq> {
    cfg.validate()?;
    let needed = scheme.required_bits(cfg);
    if bits.len() < needed {
        return Err(Error::InputLength {
            needed,
            got: bits.len(),
        });
    }
    let k = scheme.bits_per_symbol(cfg);
    let samples = match scheme {
        ModClass::Fsk2 => fsk(bits, cfg),
        ModClass::Ofdm256 => ofdm(bits, cfg),
        _ => {
            let table = scheme.constellation().expect("linear scheme");
            let symbols: Vec<Complex64> = bits
                .chunks_exact(k)
                .map(|c| table[bits_to_index(c)])
                .collect();
            pulse_shape(&symbols, cfg)
        }
    };
    Ok(ComplexSeq {
        samples,
        samples_per_symbol: scheme.samples_per_symbol(cfg),
    })
}

// Drops `span/2` symbols at each end so every output sample sees the full
// filter; output sample `j * sps` equals symbol `j + span/2`.
fn pulse_shape(symbols: &[Complex64], cfg: &SynthConfig) -> Vec<Complex64> {
    let sps = cfg.samples_per_symbol;
    let half_sym = cfg.pulse_span / 2;
    let taps = raised_cosine_taps(sps, cfg.rolloff, cfg.pulse_span);
    let half = (taps.len() / 2) as isize;
    let n_out = (symbols.len() - 2 * half_sym) * sps;
    let offset = (half_sym * sps) as isize;
    (0..n_out as isize)
        .map(|n| {
            let t = n + offset;
            // contributing symbols m satisfy |t - m*sps| <= half
            let lo = ((t - half).max(0) as usize).div_ceil(sps);
            let hi = (((t + half) as usize) / sps).min(symbols.len() - 1);
            (lo..=hi)
                .map(|m| symbols[m] * taps[(t - (m * sps) as isize + half) as usize])
                .sum()
        })
        .collect()
}

fn fsk(bits: &[bool], cfg: &SynthConfig) -> Vec<Complex64> {
    let sps = cfg.samples_per_symbol;
    let step = 2.0 * PI * cfg.fsk_deviation / sps as f64;
    let mut phase = 0.0f64;
    let mut out = Vec::with_capacity(bits.len() * sps);
    for &b in bits {
        let dphi = if b { step } else { -step };
        for _ in 0..sps {
            out.push(Complex64::from_polar(1.0, phase));
            phase = (phase + dphi).rem_euclid(2.0 * PI);
        }
    }
    out
}

fn ofdm(bits: &[bool], cfg: &SynthConfig) -> Vec<Complex64> {
    let n = cfg.ofdm_subcarriers;
    let cp = cfg.ofdm_cyclic_prefix;
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let scale = 1.0 / (n as f64).sqrt();
    let amp = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = Vec::new();
    for sym_bits in bits.chunks_exact(2 * n) {
        let mut buf: Vec<Complex64> = sym_bits
            .chunks_exact(2)
            .map(|b| Complex64::new(if b[0] { -amp } else { amp }, if b[1] { -amp } else { amp }))
            .collect();
        ifft.process(&mut buf);
        buf.iter_mut().for_each(|c| *c *= scale);
        out.extend_from_slice(&buf[n - cp..]);
        out.extend_from_slice(&buf);
    }
    out
}
