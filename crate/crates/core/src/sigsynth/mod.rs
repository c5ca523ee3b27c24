//! Clear-channel synthesis of the six-class modulation dataset.

mod dataset;
mod modulation;

pub use dataset::{synth_dataset, synth_frame, LabeledDataset, MAGIC as DATASET_MAGIC};
pub use modulation::{modulate, raised_cosine_taps, ComplexSeq, ModClass};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndiff::Tensor;

/// Default frame length `p`.
pub const FRAME_LEN: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub per_class: usize,
    pub seed: u64,
    pub frame_len: usize,
    pub samples_per_symbol: usize,
    /// Raised-cosine excess bandwidth.
    pub rolloff: f64,
    /// Pulse span in symbols.
    pub pulse_span: usize,
    /// FSK tone offset as a fraction of the symbol rate.
    pub fsk_deviation: f64,
    pub ofdm_subcarriers: usize,
    pub ofdm_cyclic_prefix: usize,
    /// Optional AWGN; `None` keeps the channel clean.
    pub snr_db: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            per_class: 100,
            seed: 0,
            frame_len: FRAME_LEN,
            samples_per_symbol: 2,
            rolloff: 0.35,
            pulse_span: 8,
            fsk_deviation: 0.25,
            ofdm_subcarriers: 256,
            ofdm_cyclic_prefix: 64,
            snr_db: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.frame_len == 0 {
            return bad("frame_len must be positive");
        }
        if self.samples_per_symbol == 0 {
            return bad("samples_per_symbol must be positive");
        }
        if !(0.0..=1.0).contains(&self.rolloff) || self.rolloff == 0.0 {
            return bad("rolloff must lie in (0, 1]");
        }
        if self.pulse_span < 2 {
            return bad("pulse_span must be at least 2 symbols");
        }
        if self.ofdm_subcarriers == 0 || self.ofdm_cyclic_prefix > self.ofdm_subcarriers {
            return bad("ofdm cyclic prefix must not exceed the subcarrier count");
        }
        if !(self.fsk_deviation > 0.0 && self.fsk_deviation < 0.5 * self.samples_per_symbol as f64)
        {
            return bad("fsk_deviation must be positive and below Nyquist");
        }
        Ok(())
    }
}

/// One datapoint: `[2, p]` with channel 0 the in-phase and channel 1 the
/// quadrature component.
#[derive(Clone, Debug, PartialEq)]
pub struct IqFrame {
    data: Vec<f32>,
    len: usize,
}

impl IqFrame {
    /// Wraps channel-major samples (`2 * p` values) without renormalizing.
    pub fn from_channels(data: Vec<f32>) -> Result<Self> {
        if data.is_empty() || !data.len().is_multiple_of(2) {
            return Err(Error::dim(
                "iq_frame",
                format!("need an even, nonzero sample count, got {}", data.len()),
            ));
        }
        Ok(IqFrame {
            len: data.len() / 2,
            data,
        })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.rank() != 2 || t.dim(0) != 2 {
            return Err(Error::dim(
                "iq_frame",
                format!("expected [2, p], got {:?}", t.shape()),
            ));
        }
        Self::from_channels(t.data().to_vec())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn shape(&self) -> [usize; 2] {
        [2, self.len]
    }

    pub fn i(&self) -> &[f32] {
        &self.data[..self.len]
    }

    pub fn q(&self) -> &[f32] {
        &self.data[self.len..]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[2, self.len], self.data.clone()).expect("frame shape")
    }

    pub fn samples(&self) -> impl Iterator<Item = (f32, f32)> + '_ {
        self.i().iter().copied().zip(self.q().iter().copied())
    }

    pub fn mean_power(&self) -> f64 {
        self.data
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            / self.len as f64
    }
}

/// Cuts `u[offset .. offset + p)` into a unit-power two-channel frame.
pub fn make_frame(u: &ComplexSeq, offset: usize, p: usize) -> Result<IqFrame> {
    if p == 0 || offset.checked_add(p).is_none_or(|end| end > u.len()) {
        return Err(Error::Bounds {
            offset,
            len: p,
            available: u.len(),
        });
    }
    let slice = &u.samples[offset..offset + p];
    let power = slice.iter().map(|c| c.norm_sqr()).sum::<f64>() / p as f64;
    if !(power > 0.0 && power.is_finite()) {
        return Err(Error::Config(format!(
            "cannot normalize a frame with power {power}"
        )));
    }
    let scale = power.sqrt().recip();
    let mut data = Vec::with_capacity(2 * p);
    data.extend(slice.iter().map(|c| (c.re * scale) as f32));
    data.extend(slice.iter().map(|c| (c.im * scale) as f32));
    Ok(IqFrame { data, len: p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn constant_input_gives_constant_in_phase_channel() {
        let u = ComplexSeq {
            samples: vec![Complex64::new(1.0, 0.0); 2000],
            samples_per_symbol: 1,
        };
        let f = make_frame(&u, 37, 1024).unwrap();
        assert!(f.i().iter().all(|&v| v == 1.0));
        assert!(f.q().iter().all(|&v| v == 0.0));
        assert!((f.mean_power() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unit_power_input_is_left_alone() {
        let samples: Vec<Complex64> = (0..1024)
            .map(|k| Complex64::from_polar(1.0, 0.37 * k as f64))
            .collect();
        let u = ComplexSeq {
            samples: samples.clone(),
            samples_per_symbol: 1,
        };
        let f = make_frame(&u, 0, 1024).unwrap();
        for (k, (i, q)) in f.samples().enumerate() {
            assert!((i as f64 - samples[k].re).abs() < 1e-6);
            assert!((q as f64 - samples[k].im).abs() < 1e-6);
        }
    }

    #[test]
    fn out_of_range_offset_is_a_bounds_error() {
        let u = ComplexSeq {
            samples: vec![Complex64::new(1.0, 1.0); 1500],
            samples_per_symbol: 1,
        };
        assert!(matches!(
            make_frame(&u, 477, 1024),
            Err(Error::Bounds { .. })
        ));
        assert!(make_frame(&u, 476, 1024).is_ok());
        assert!(matches!(
            make_frame(&u, usize::MAX, 1024),
            Err(Error::Bounds { .. })
        ));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let c = SynthConfig {
            rolloff: 0.0,
            ..SynthConfig::default()
        };
        assert!(c.validate().is_err());
        let c = SynthConfig {
            ofdm_cyclic_prefix: 300,
            ..SynthConfig::default()
        };
        assert!(c.validate().is_err());
        assert!(SynthConfig::default().validate().is_ok());
    }
}
