//! Packed model files and the training metrics CSV.
//!
//! Packed layout (all integers little-endian):
//!
//! ```text
//! "BTQ1"              4 bytes
//! version             u32 (= 1)
//! arch_len            u32
//! arch                arch_len bytes, UTF-8 architecture text
//! layers              u32
//! per layer:
//!   alpha             f64
//!   bits B            u8
//!   count             u64
//!   delta             f64
//!   indices           ceil(count * (B + 1) / 8) bytes
//! ```
//!
//! Each bin index takes `ceil(log2(2^B + 1)) = B + 1` bits, since the grid has
//! `2^B + 1` levels. Indices are packed back to back, least significant bit
//! first, filling each byte from its least significant bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::net::{Network, NetworkConfig};
use crate::quantize::QuantizedTensor;
use crate::tensor::Scalar;

pub const MAGIC: &[u8; 4] = b"BTQ1";
pub const VERSION: u32 = 1;

/// Bits needed per bin index at bit-width `bits`.
pub fn bits_per_index(bits: u32) -> u32 {
    u64::BITS - (1u64 << bits).leading_zeros()
}

/// Bytes of packed indices for `count` entries at bit-width `bits`.
pub fn payload_len(count: usize, bits: u32) -> usize {
    (count * bits_per_index(bits) as usize).div_ceil(8)
}

struct BitWriter {
    out: Vec<u8>,
    acc: u128,
    filled: u32,
}

impl BitWriter {
    fn new(out: Vec<u8>) -> Self {
        BitWriter { out, acc: 0, filled: 0 }
    }

    fn push(&mut self, value: u64, width: u32) {
        self.acc |= (value as u128) << self.filled;
        self.filled += width;
        while self.filled >= 8 {
            self.out.push(self.acc as u8);
            self.acc >>= 8;
            self.filled -= 8;
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.filled > 0 {
            self.out.push(self.acc as u8);
        }
        self.out
    }
}

fn unpack(bytes: &[u8], count: usize, width: u32) -> Vec<u64> {
    let mask = (1u128 << width) - 1;
    let mut out = Vec::with_capacity(count);
    let mut acc: u128 = 0;
    let mut filled = 0u32;
    let mut src = bytes.iter();
    for _ in 0..count {
        while filled < width {
            acc |= (*src.next().expect("payload length checked") as u128) << filled;
            filled += 8;
        }
        out.push((acc & mask) as u64);
        acc >>= width;
        filled -= width;
    }
    out
}

/// A quantized network: its architecture and one grid per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedModel {
    pub arch: NetworkConfig,
    pub layers: Vec<QuantizedTensor>,
}

impl PackedModel {
    pub fn from_network<T: Scalar>(network: &Network<T>) -> Self {
        PackedModel {
            arch: network.config().clone(),
            layers: network.layers().iter().map(|l| l.q.clone()).collect(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let arch = self.arch.to_string();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(arch.len() as u32).to_le_bytes());
        out.extend_from_slice(arch.as_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for q in &self.layers {
            out.extend_from_slice(&q.alpha.to_le_bytes());
            out.push(q.bits as u8);
            out.extend_from_slice(&(q.indices.len() as u64).to_le_bytes());
            out.extend_from_slice(&q.delta.to_le_bytes());
            let width = bits_per_index(q.bits);
            let mut w = BitWriter::new(std::mem::take(&mut out));
            for &z in &q.indices {
                w.push(z, width);
            }
            out = w.finish();
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if &magic != MAGIC {
            return Err(FormatError::Magic(magic));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(FormatError::Version(version));
        }
        let arch_len = r.u32()? as usize;
        let arch_text = std::str::from_utf8(r.take(arch_len)?)
            .map_err(|e| FormatError::Architecture(e.to_string()))?;
        let arch: NetworkConfig = arch_text
            .parse()
            .map_err(|e: Error| FormatError::Architecture(e.to_string()))?;
        let expected = arch
            .layer_param_counts()
            .map_err(|e| FormatError::Architecture(e.to_string()))?;
        let n_layers = r.u32()? as usize;
        if n_layers != expected.len() {
            return Err(FormatError::Architecture(format!(
                "{n_layers} layers stored, architecture has {}",
                expected.len()
            )));
        }

        let mut layers = Vec::with_capacity(n_layers);
        for (layer, &want) in expected.iter().enumerate() {
            let alpha = r.f64()?;
            let bits = r.take(1)?[0];
            if !(1..=32).contains(&bits) {
                return Err(FormatError::Bits { layer, bits });
            }
            let count = r.u64()? as usize;
            if count != want {
                return Err(FormatError::ParamCount {
                    layer,
                    expected: want,
                    found: count,
                });
            }
            let delta = r.f64()?;
            let payload = r.take(payload_len(count, bits as u32))?;
            let indices = unpack(payload, count, bits_per_index(bits as u32));
            let top = 1u64 << bits;
            if let Some(&index) = indices.iter().find(|&&z| z > top) {
                return Err(FormatError::IndexOutOfRange { layer, index, bits });
            }
            layers.push(QuantizedTensor {
                alpha,
                delta,
                bits: bits as u32,
                indices,
                shape: vec![count],
            });
        }
        if r.pos != bytes.len() {
            return Err(FormatError::Trailing(bytes.len() - r.pos));
        }
        Ok(PackedModel { arch, layers })
    }

    pub fn into_network<T: Scalar>(self) -> Result<Network<T>> {
        Network::from_quantized(&self.arch, self.layers)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Encodes the network's current grids.
pub fn save_packed<T: Scalar>(network: &Network<T>) -> Vec<u8> {
    PackedModel::from_network(network).encode()
}

/// Decodes a packed model into a network whose parameters are the grid
/// reconstructions.
pub fn load_packed<T: Scalar>(bytes: &[u8]) -> Result<Network<T>> {
    PackedModel::decode(bytes)?.into_network()
}

pub fn save_packed_file<T: Scalar>(network: &Network<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, save_packed(network)).map_err(Error::file(path))?;
    Ok(())
}

pub fn load_packed_file<T: Scalar>(path: impl AsRef<Path>) -> Result<Network<T>> {
    let path = path.as_ref();
    load_packed(&fs::read(path).map_err(Error::file(path))?)
}

/// 32 over the unweighted mean bit-width.
pub fn compression_ratio(bits: &[u32]) -> f64 {
    if bits.is_empty() {
        return 1.0;
    }
    let mean = bits.iter().map(|&b| b as f64).sum::<f64>() / bits.len() as f64;
    32.0 / mean
}

pub fn network_compression<T: Scalar>(network: &Network<T>) -> f64 {
    compression_ratio(&network.bits())
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub epoch: usize,
    pub iteration: usize,
    pub mu: f64,
    /// Batch NLL with high-precision parameters.
    pub train_nll: f64,
    /// Test error (%) with quantized parameters; only on evaluation rows.
    pub test_error: Option<f64>,
    pub bits: Vec<u32>,
    pub quant_errors: Vec<f64>,
    pub compression: f64,
}

const BASE_COLUMNS: [&str; 6] = ["epoch", "iteration", "mu", "train_nll", "test_error", "compression"];

fn sig9(v: f64) -> String {
    format!("{v:.8e}")
}

/// Renders records as CSV: fixed leading columns, then `bits_<n>` and
/// `qerr_<n>` per layer (1-based). Reals use 9 significant digits.
pub fn metrics_csv(records: &[TrainRecord]) -> Result<String> {
    let layers = records.first().map_or(0, |r| r.bits.len());
    let mut out = BASE_COLUMNS.join(",");
    for i in 1..=layers {
        write!(out, ",bits_{i}").unwrap();
    }
    for i in 1..=layers {
        write!(out, ",qerr_{i}").unwrap();
    }
    out.push('\n');
    for r in records {
        if r.bits.len() != layers || r.quant_errors.len() != layers {
            return Err(Error::Config(format!(
                "record at iteration {} has {} layers, expected {layers}",
                r.iteration,
                r.bits.len()
            )));
        }
        write!(
            out,
            "{},{},{},{},{},{}",
            r.epoch,
            r.iteration,
            sig9(r.mu),
            sig9(r.train_nll),
            r.test_error.map(sig9).unwrap_or_default(),
            sig9(r.compression)
        )
        .unwrap();
        for b in &r.bits {
            write!(out, ",{b}").unwrap();
        }
        for e in &r.quant_errors {
            write!(out, ",{}", sig9(*e)).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_metrics(records: &[TrainRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, metrics_csv(records)?).map_err(Error::file(path))?;
    Ok(())
}

/// Parses the output of [`metrics_csv`].
pub fn parse_metrics(text: &str) -> Result<Vec<TrainRecord>> {
    let bad = |line: usize, what: &str| Error::Config(format!("metrics line {line}: {what}"));
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| bad(1, "missing header"))?.split(',').collect();
    if header.len() < BASE_COLUMNS.len() || header[..BASE_COLUMNS.len()] != BASE_COLUMNS {
        return Err(bad(1, "unexpected header"));
    }
    let layers = (header.len() - BASE_COLUMNS.len()) / 2;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(bad(n, "wrong number of cells"));
        }
        let real = |s: &str| s.parse::<f64>().map_err(|_| bad(n, "bad number"));
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad(n, "bad integer"));
        let base = BASE_COLUMNS.len();
        records.push(TrainRecord {
            epoch: int(cells[0])?,
            iteration: int(cells[1])?,
            mu: real(cells[2])?,
            train_nll: real(cells[3])?,
            test_error: if cells[4].is_empty() { None } else { Some(real(cells[4])?) },
            compression: real(cells[5])?,
            bits: cells[base..base + layers]
                .iter()
                .map(|c| c.parse::<u32>().map_err(|_| bad(n, "bad bit-width")))
                .collect::<Result<_>>()?,
            quant_errors: cells[base + layers..].iter().map(|c| real(c)).collect::<Result<_>>()?,
        });
    }
    Ok(records)
}
