//! Labeled dataset container and its on-disk layout.
//!
//! File layout (little-endian):
//!
//! ```text
//! magic            "RFDS"
//! version          u16 (= 1)
//! class_count      u16
//! frames_per_class u32
//! p                u32
//! seed             u64
//! frames, class-major: u8 label, then 2·p f32 (channel 0, then channel 1)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{make_frame, modulate, IqFrame, ModClass, SynthConfig};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RFDS";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub frames: Vec<(IqFrame, ModClass)>,
    pub seed: u64,
    pub config: SynthConfig,
}

/// Per-frame generator: a ChaCha stream keyed by `(seed, class, index)`, so
/// any frame can be regenerated on its own and in any order.
fn frame_rng(seed: u64, class: ModClass, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((class.label() as u64) << 32) | index as u64);
    rng
}

/// Synthesizes frame `index` of `class` from an independent random bit stream.
pub fn synth_frame(cfg: &SynthConfig, class: ModClass, index: usize) -> Result<IqFrame> {
    cfg.validate()?;
    let mut rng = frame_rng(cfg.seed, class, index);
    let sps = class.samples_per_symbol(cfg);
    // Extra symbols give the random frame offset room to move.
    let extra = cfg.frame_len.div_ceil(sps).max(1);
    let n_bits = class.bits_per_symbol(cfg) * (class.min_symbols(cfg) + extra);
    let bits: Vec<bool> = (0..n_bits).map(|_| rng.random()).collect();
    let mut u = modulate(class, &bits, cfg)?;
    if let Some(snr_db) = cfg.snr_db {
        let sigma = (10f64.powf(-snr_db / 10.0) / 2.0).sqrt();
        for c in &mut u.samples {
            let (re, im): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            *c += Complex64::new(re, im) * sigma;
        }
    }
    let offset = rng.random_range(0..=u.len() - cfg.frame_len);
    make_frame(&u, offset, cfg.frame_len)
}

/// Balanced, class-major dataset of `cfg.per_class` frames per class.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<LabeledDataset> {
    cfg.validate()?;
    let mut frames = Vec::with_capacity(cfg.per_class * ModClass::COUNT);
    for class in ModClass::ALL {
        for i in 0..cfg.per_class {
            frames.push((synth_frame(cfg, class, i)?, class));
        }
    }
    Ok(LabeledDataset {
        frames,
        seed: cfg.seed,
        config: cfg.clone(),
    })
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_len(&self) -> usize {
        self.frames
            .first()
            .map_or(self.config.frame_len, |(f, _)| f.len())
    }

    pub fn class_counts(&self) -> [usize; ModClass::COUNT] {
        let mut counts = [0; ModClass::COUNT];
        for (_, c) in &self.frames {
            counts[c.label() as usize] += 1;
        }
        counts
    }

    pub fn classes_present(&self) -> usize {
        self.class_counts().iter().filter(|&&n| n > 0).count()
    }

    pub fn is_balanced(&self) -> bool {
        let counts = self.class_counts();
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        hi - lo <= 1
    }

    pub fn frames_of(&self, class: ModClass) -> impl Iterator<Item = &IqFrame> {
        self.frames
            .iter()
            .filter(move |(_, c)| *c == class)
            .map(|(f, _)| f)
    }

    /// Stratified split: each class is shuffled with `seed` and the first
    /// `round(n * train_fraction)` frames go to the training side. Both halves
    /// stay class-major.
    pub fn split_stratified(&self, train_fraction: f64, seed: u64) -> (Self, Self) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut train, mut eval) = (Vec::new(), Vec::new());
        for class in ModClass::ALL {
            let mut idx: Vec<usize> = self
                .frames
                .iter()
                .enumerate()
                .filter(|(_, (_, c))| *c == class)
                .map(|(i, _)| i)
                .collect();
            idx.shuffle(&mut rng);
            let cut = (idx.len() as f64 * train_fraction).round() as usize;
            let (a, b) = idx.split_at(cut.min(idx.len()));
            let mut a = a.to_vec();
            let mut b = b.to_vec();
            a.sort_unstable();
            b.sort_unstable();
            train.extend(a.iter().map(|&i| self.frames[i].clone()));
            eval.extend(b.iter().map(|&i| self.frames[i].clone()));
        }
        let with = |frames| LabeledDataset {
            frames,
            seed: self.seed,
            config: self.config.clone(),
        };
        (with(train), with(eval))
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let counts = self.class_counts();
        let per_class = counts[0];
        if counts.iter().any(|&n| n != per_class) {
            return Err(Error::Format(format!(
                "dataset file requires equal class counts, got {counts:?}"
            )));
        }
        let p = self.frame_len();
        let mut buf = Vec::with_capacity(24 + self.frames.len() * (1 + 8 * p));
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(ModClass::COUNT as u16).to_le_bytes());
        buf.extend_from_slice(&(per_class as u32).to_le_bytes());
        buf.extend_from_slice(&(p as u32).to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        for class in ModClass::ALL {
            for frame in self.frames_of(class) {
                if frame.len() != p {
                    return Err(Error::Format("frames differ in length".into()));
                }
                buf.push(class.label());
                for v in frame.as_slice() {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const HEADER: usize = 24;
        if bytes.len() < HEADER {
            return Err(Error::Format("truncated dataset header".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format("not an RFDS dataset file".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported dataset version {version}"
            )));
        }
        let class_count = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
        if class_count != ModClass::COUNT {
            return Err(Error::Format(format!(
                "expected 6 classes, file has {class_count}"
            )));
        }
        let per_class = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let p = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let seed = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        if p == 0 {
            return Err(Error::Format("frame length 0".into()));
        }
        let record = 1 + 8 * p;
        let expected = HEADER + class_count * per_class * record;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "dataset body is {} bytes, header implies {}",
                bytes.len(),
                expected
            )));
        }
        let mut frames = Vec::with_capacity(class_count * per_class);
        for (n, rec) in bytes[HEADER..].chunks_exact(record).enumerate() {
            let class = ModClass::from_label(rec[0])
                .map_err(|_| Error::Format(format!("bad label {} in record {n}", rec[0])))?;
            if class.label() as usize != n / per_class {
                return Err(Error::Format(format!(
                    "record {n} is out of class-major order"
                )));
            }
            let data = rec[1..]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            frames.push((IqFrame::from_channels(data)?, class));
        }
        Ok(LabeledDataset {
            frames,
            seed,
            config: SynthConfig {
                per_class,
                seed,
                frame_len: p,
                ..SynthConfig::default()
            },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
