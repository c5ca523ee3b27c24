//! Compressed-frame container, fixed-width index packing and rate accounting.
//!
//! Blob layout (little-endian header, 35 bytes, then the payload):
//!
//! ```text
//! magic      "RFCZ"
//! version    u16 (= 1)
//! model_id   16 bytes, leading half of SHA-256 over the checkpoint bytes
//! level      u8
//! n_c        u16
//! ell        u16   codeword length
//! w          u32   number of indices
//! p          u32   frame length
//! payload    w indices of ceil(log2 n_c) bits, MSB-first, zero-padded
//! ```

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::hae::{LatentTensor, ModelStack};
use crate::sigsynth::IqFrame;
use crate::vq::index_bits;

pub const MAGIC: &[u8; 4] = b"RFCZ";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 35;

/// Differential entropy of a unit Gaussian in bits, `½·log2(2πe)`, at the
/// two-decimal value used for the rate figures.
pub const GAUSSIAN_ENTROPY_BITS: f64 = 2.05;

/// `½·log2(2πe)` without rounding.
pub fn gaussian_entropy_bits_exact() -> f64 {
    0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).log2()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlobHeader {
    pub model_id: [u8; 16],
    pub level: u8,
    pub n_c: u16,
    pub latent_channels: u16,
    pub width: u32,
    pub frame_len: u32,
}

impl BlobHeader {
    pub fn index_bits(&self) -> u32 {
        index_bits(self.n_c as usize)
    }

    pub fn payload_bits(&self) -> u64 {
        self.width as u64 * self.index_bits() as u64
    }

    pub fn payload_len(&self) -> usize {
        self.payload_bits().div_ceil(8) as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompressedBlob {
    pub header: BlobHeader,
    pub indices: Vec<u32>,
}

/// Packs each index into `bits` bits, most significant bit first, padding the
/// last byte with zeros.
pub fn pack_indices(indices: &[u32], bits: u32) -> Result<Vec<u8>> {
    if !(1..=32).contains(&bits) {
        return Err(Error::Config(format!(
            "index width {bits} bits is out of range"
        )));
    }
    let limit = if bits == 32 { u64::MAX } else { 1u64 << bits };
    let mut out = vec![0u8; (indices.len() as u64 * bits as u64).div_ceil(8) as usize];
    let mut pos = 0usize;
    for (i, &v) in indices.iter().enumerate() {
        if v as u64 >= limit {
            return Err(Error::Corruption {
                index: v,
                position: i,
                limit: limit.min(u32::MAX as u64) as u32,
            });
        }
        for b in (0..bits).rev() {
            if (v >> b) & 1 == 1 {
                out[pos / 8] |= 0x80 >> (pos % 8);
            }
            pos += 1;
        }
    }
    Ok(out)
}

/// Inverse of [`pack_indices`]; `bytes` must hold exactly `count` indices.
pub fn unpack_indices(bytes: &[u8], count: usize, bits: u32) -> Result<Vec<u32>> {
    if !(1..=32).contains(&bits) {
        return Err(Error::Config(format!(
            "index width {bits} bits is out of range"
        )));
    }
    let needed = (count as u64 * bits as u64).div_ceil(8) as usize;
    if bytes.len() != needed {
        return Err(Error::Format(format!(
            "payload holds {} bytes, {count} indices of {bits} bits need {needed}",
            bytes.len()
        )));
    }
    let mut out = Vec::with_capacity(count);
    let mut pos = 0usize;
    for _ in 0..count {
        let mut v = 0u32;
        for _ in 0..bits {
            v = (v << 1) | ((bytes[pos / 8] >> (7 - pos % 8)) & 1) as u32;
            pos += 1;
        }
        out.push(v);
    }
    let tail = needed * 8 - pos;
    if tail > 0 && bytes[needed - 1] & ((1u8 << tail) - 1) != 0 {
        return Err(Error::Format(
            "nonzero padding bits after the last index".into(),
        ));
    }
    Ok(out)
}

impl CompressedBlob {
    pub fn payload_bits(&self) -> u64 {
        self.header.payload_bits()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let h = &self.header;
        if self.indices.len() != h.width as usize {
            return Err(Error::Format(format!(
                "header says {} indices, blob holds {}",
                h.width,
                self.indices.len()
            )));
        }
        let mut out = Vec::with_capacity(HEADER_LEN + h.payload_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&h.model_id);
        out.push(h.level);
        out.extend_from_slice(&h.n_c.to_le_bytes());
        out.extend_from_slice(&h.latent_channels.to_le_bytes());
        out.extend_from_slice(&h.width.to_le_bytes());
        out.extend_from_slice(&h.frame_len.to_le_bytes());
        out.extend(pack_indices(&self.indices, h.index_bits())?);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "blob is {} bytes, shorter than the {HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format("not an RFCZ blob".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported blob version {version}")));
        }
        let mut model_id = [0u8; 16];
        model_id.copy_from_slice(&bytes[6..22]);
        let header = BlobHeader {
            model_id,
            level: bytes[22],
            n_c: u16::from_le_bytes([bytes[23], bytes[24]]),
            latent_channels: u16::from_le_bytes([bytes[25], bytes[26]]),
            width: u32::from_le_bytes(bytes[27..31].try_into().unwrap()),
            frame_len: u32::from_le_bytes(bytes[31..35].try_into().unwrap()),
        };
        if header.n_c < 2
            || header.latent_channels == 0
            || header.width == 0
            || header.frame_len == 0
        {
            return Err(Error::Format("blob header has zero-sized fields".into()));
        }
        let indices = unpack_indices(
            &bytes[HEADER_LEN..],
            header.width as usize,
            header.index_bits(),
        )?;
        Ok(CompressedBlob { header, indices })
    }
}

/// Nearest-codeword indices of `x` at `level`, wrapped in a blob.
pub fn compress(x: &IqFrame, stack: &ModelStack, level: usize) -> Result<CompressedBlob> {
    compress_with_id(x, stack, level, stack.digest())
}

/// [`compress`] with a precomputed model id, for batches of frames.
pub fn compress_with_id(
    x: &IqFrame,
    stack: &ModelStack,
    level: usize,
    model_id: [u8; 16],
) -> Result<CompressedBlob> {
    if !stack.stage.quantized() {
        return Err(Error::State(
            "an HAE stack has no codebooks to compress with".into(),
        ));
    }
    if x.len() != stack.frame_len() {
        return Err(Error::dim(
            "compress",
            format!(
                "frame length {} but the model expects {}",
                x.len(),
                stack.frame_len()
            ),
        ));
    }
    let (_, idx) = stack.quantize_at(x, level)?;
    let cb = stack.levels[level]
        .codebook
        .as_ref()
        .expect("quantize_at checked");
    Ok(CompressedBlob {
        header: BlobHeader {
            model_id,
            level: level as u8,
            n_c: cb.len() as u16,
            latent_channels: cb.dim() as u16,
            width: idx.indices.len() as u32,
            frame_len: x.len() as u32,
        },
        indices: idx.indices,
    })
}

/// Decodes a blob with the model it was made with.
pub fn decompress(blob: &CompressedBlob, stack: &ModelStack) -> Result<IqFrame> {
    decompress_with_id(blob, stack, stack.digest())
}

pub fn decompress_with_id(
    blob: &CompressedBlob,
    stack: &ModelStack,
    model_id: [u8; 16],
) -> Result<IqFrame> {
    let h = &blob.header;
    if h.model_id != model_id {
        return Err(Error::Integrity(format!(
            "blob was made by model {} but the loaded model is {}",
            hex(&h.model_id),
            hex(&model_id)
        )));
    }
    let level = h.level as usize;
    let lvl = stack.levels.get(level).ok_or_else(|| {
        Error::Format(format!(
            "blob level {level} exceeds model depth {}",
            stack.depth()
        ))
    })?;
    let cb = lvl
        .codebook
        .as_ref()
        .ok_or_else(|| Error::State(format!("level {level} has no codebook")))?;
    if h.n_c as usize != cb.len()
        || h.latent_channels as usize != cb.dim()
        || h.width as usize != lvl.spec.out_width()
        || h.frame_len as usize != stack.frame_len()
    {
        return Err(Error::Format(format!(
            "blob geometry (n_c {}, ell {}, w {}, p {}) does not match level {level}",
            h.n_c, h.latent_channels, h.width, h.frame_len
        )));
    }
    let z = cb.lookup(&blob.indices)?;
    stack.decode_from_level(&LatentTensor { values: z, level }, level)
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Rate figures for one level.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct RateReport {
    pub level: usize,
    /// Indices per frame, `p / 2^(level+1)`.
    pub width: usize,
    pub payload_bits: u64,
    /// Source information `2p · H_N` in bits.
    pub source_bits: f64,
    /// `ξ · 2^level` with `ξ` rounded to two decimals.
    pub cr: f64,
    /// `source_bits / payload_bits` before rounding.
    pub cr_exact: f64,
    /// `1 / cr`.
    pub r: f64,
}

/// Per-level rate constant `ξ = 4·H_N/d`, rounded to two decimals.
pub fn xi(n_c: usize) -> f64 {
    (xi_exact(n_c) * 100.0).round() / 100.0
}

pub fn xi_exact(n_c: usize) -> f64 {
    4.0 * GAUSSIAN_ENTROPY_BITS / index_bits(n_c) as f64
}

pub fn compression_ratio(level: usize, p: usize, n_c: usize) -> Result<RateReport> {
    if level >= usize::BITS as usize - 1 || !p.is_multiple_of(1usize << (level + 1)) || p == 0 {
        return Err(Error::Config(format!(
            "p = {p} cannot be halved {} times",
            level + 1
        )));
    }
    if n_c < 2 {
        return Err(Error::Config("n_c must be at least 2".into()));
    }
    let width = p >> (level + 1);
    let payload_bits = width as u64 * index_bits(n_c) as u64;
    let source_bits = 2.0 * p as f64 * GAUSSIAN_ENTROPY_BITS;
    let cr = xi(n_c) * (1u64 << level) as f64;
    Ok(RateReport {
        level,
        width,
        payload_bits,
        source_bits,
        cr,
        cr_exact: source_bits / payload_bits as f64,
        r: 1.0 / cr,
    })
}

/// Rate rows for levels `0..levels` as CSV.
pub fn rates_csv(reports: &[RateReport]) -> String {
    let mut out =
        String::from("level,width,payload_bits,payload_bytes,source_bits,cr,cr_exact,r\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.2},{:.2},{:.4},{:.4}",
            r.level,
            r.width,
            r.payload_bits,
            r.payload_bits.div_ceil(8),
            r.source_bits,
            r.cr,
            r.cr_exact,
            r.r
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packing_is_msb_first() {
        assert_eq!(
            pack_indices(&[0, 1, 2, 3], 6).unwrap(),
            vec![0x00, 0x10, 0x83]
        );
        assert_eq!(pack_indices(&[63], 6).unwrap(), vec![0xFC]);
        assert_eq!(
            unpack_indices(&[0x00, 0x10, 0x83], 4, 6).unwrap(),
            vec![0, 1, 2, 3]
        );
        assert!(pack_indices(&[64], 6).is_err());
        assert!(matches!(
            unpack_indices(&[0xFD], 1, 6),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn payload_sizes_per_level() {
        let r0 = compression_ratio(0, 1024, 64).unwrap();
        assert_eq!(
            (r0.width, r0.payload_bits, r0.payload_bits / 8),
            (512, 3072, 384)
        );
        let r4 = compression_ratio(4, 1024, 64).unwrap();
        assert_eq!(
            (r4.width, r4.payload_bits, r4.payload_bits / 8),
            (32, 192, 24)
        );
    }

    #[test]
    fn rates_double_per_level() {
        let expected = [1.37, 2.74, 5.48, 10.96, 21.92];
        for (i, &e) in expected.iter().enumerate() {
            let r = compression_ratio(i, 1024, 64).unwrap();
            assert!((r.cr - e).abs() < 1e-9, "level {i}: {}", r.cr);
            assert!((r.cr * r.r - 1.0).abs() < 1e-9);
            if i > 0 {
                let prev = compression_ratio(i - 1, 1024, 64).unwrap();
                assert!((r.cr - 2.0 * prev.cr).abs() < 1e-9);
                assert!((r.cr_exact - 2.0 * prev.cr_exact).abs() < 1e-9);
            }
        }
        assert!((compression_ratio(0, 1024, 64).unwrap().r - 0.73).abs() < 0.005);
        assert!((compression_ratio(4, 1024, 64).unwrap().r - 0.045).abs() < 0.001);
        assert!((gaussian_entropy_bits_exact() - 2.0471).abs() < 1e-4);
    }

    #[test]
    fn header_round_trip_and_rejections() {
        let blob = CompressedBlob {
            header: BlobHeader {
                model_id: [7; 16],
                level: 4,
                n_c: 64,
                latent_channels: 64,
                width: 32,
                frame_len: 1024,
            },
            indices: (0..32).map(|i| (i * 5) % 64).collect(),
        };
        let bytes = blob.to_bytes().unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 24);
        assert_eq!(CompressedBlob::from_bytes(&bytes).unwrap(), blob);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            CompressedBlob::from_bytes(&bad),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            CompressedBlob::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Format(_))
        ));
    }
}
