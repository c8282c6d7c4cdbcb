//! Block quantization formats, round-to-nearest quantization and dequantization.
//!
//! A tensor is flattened row-major, zero-padded to a multiple of the block size
//! and split into blocks of `B` elements. Each block carries a scale `s` and a
//! zero-point `z`; element `i` dequantizes to `s * (q_i - z)`.
//!
//! Scales are stored in one of two forms:
//!
//! * `S == 0`: one `f32` per block.
//! * `S > 0`: every `S` consecutive blocks form a super-block holding an `f32`
//!   `(step, min)` pair; each block stores an 8-bit code and its scale is
//!   `min + step * code`.
//!
//! Zero-points are integers inside the code range and stored as one byte per
//! block (asymmetric codebooks only). Codes are always assigned against the
//! *stored* scale, so what is written to disk is exactly what was evaluated.

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::scalar::Real;

/// Bit widths accepted by [`QuantType`].
pub const BIT_MENU: [u8; 6] = [2, 3, 4, 5, 6, 8];

pub const DEFAULT_BLOCK_SIZE: usize = 32;
pub const DEFAULT_SUPERBLOCK_SIZE: usize = 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QuantError {
    #[error("bit width {0} is not one of {BIT_MENU:?}")]
    InvalidBitWidth(u8),
    #[error("block size {0} must be at least 2")]
    InvalidBlockSize(usize),
    #[error("non-finite weight at flat index {index}")]
    NonFinite { index: usize },
    #[error("shape mismatch: expected {expected} elements, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("code {code} at element {index} of block {block} is outside the codebook")]
    CodeOutOfRange { block: usize, index: usize, code: i32 },
    #[error("zero-point {zero} of block {block} is outside the codebook")]
    ZeroOutOfRange { block: usize, zero: u8 },
    #[error("inconsistent quantized tensor: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Codebook {
    /// `{-2^(b-1), ..., 2^(b-1)-1}`, zero-point fixed at 0.
    UniformSymmetric,
    /// `{0, ..., 2^b - 1}` with a per-block zero-point.
    UniformAsymmetric,
}

/// A quantization format: bit width, codebook and block geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantType {
    bit_width: u8,
    codebook: Codebook,
    block_size: usize,
    superblock_size: usize,
}

impl QuantType {
    pub fn new(
        bit_width: u8,
        codebook: Codebook,
        block_size: usize,
        superblock_size: usize,
    ) -> Result<Self, QuantError> {
        if !BIT_MENU.contains(&bit_width) {
            return Err(QuantError::InvalidBitWidth(bit_width));
        }
        if block_size < 2 {
            return Err(QuantError::InvalidBlockSize(block_size));
        }
        Ok(Self { bit_width, codebook, block_size, superblock_size })
    }

    /// Symmetric type with the default block geometry.
    pub fn symmetric(bit_width: u8) -> Result<Self, QuantError> {
        Self::new(bit_width, Codebook::UniformSymmetric, DEFAULT_BLOCK_SIZE, DEFAULT_SUPERBLOCK_SIZE)
    }

    pub fn bit_width(&self) -> u8 {
        self.bit_width
    }

    pub fn codebook(&self) -> Codebook {
        self.codebook
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn superblock_size(&self) -> usize {
        self.superblock_size
    }

    pub fn is_symmetric(&self) -> bool {
        self.codebook == Codebook::UniformSymmetric
    }

    /// Same codebook and geometry, different bit width.
    pub fn with_bit_width(&self, bit_width: u8) -> Result<Self, QuantError> {
        Self::new(bit_width, self.codebook, self.block_size, self.superblock_size)
    }

    pub fn levels(&self) -> u32 {
        1u32 << self.bit_width
    }

    pub fn code_min(&self) -> i32 {
        match self.codebook {
            Codebook::UniformSymmetric => -(1i32 << (self.bit_width - 1)),
            Codebook::UniformAsymmetric => 0,
        }
    }

    pub fn code_max(&self) -> i32 {
        match self.codebook {
            Codebook::UniformSymmetric => (1i32 << (self.bit_width - 1)) - 1,
            Codebook::UniformAsymmetric => (1i32 << self.bit_width) - 1,
        }
    }

    pub fn contains_code(&self, q: i32) -> bool {
        (self.code_min()..=self.code_max()).contains(&q)
    }

    /// Predicted per-element squared error factor `2^(-2b)`.
    pub fn error_factor(&self) -> f64 {
        (-2.0 * f64::from(self.bit_width)).exp2()
    }

    /// Nearest codebook entry to `w / s + z` (ties away from zero).
    /// A zero scale maps everything to the zero code.
    #[inline]
    pub fn nearest_code<T: Real>(&self, w: T, scale: T, zero: T) -> i32 {
        if scale == T::zero() {
            return zero.to_i32().unwrap_or(0);
        }
        let x = (w / scale + zero).round_half_away();
        let lo = T::lit(f64::from(self.code_min()));
        let hi = T::lit(f64::from(self.code_max()));
        // NaN-free because inputs are validated finite and scale != 0.
        x.max(lo).min(hi).to_i32().unwrap_or(0)
    }
}

impl std::fmt::Display for QuantType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = if self.is_symmetric() { "sym" } else { "asym" };
        write!(f, "q{}-{}-b{}-s{}", self.bit_width, kind, self.block_size, self.superblock_size)
    }
}

/// Stored per-block scales.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockScales {
    Full(Vec<f32>),
    SuperBlock { steps: Vec<f32>, mins: Vec<f32>, codes: Vec<u8> },
}

impl BlockScales {
    /// Compresses full-precision block scales into the storage form of `qtype`.
    pub fn encode(raw: &[f64], superblock_size: usize) -> Self {
        if superblock_size == 0 {
            return BlockScales::Full(raw.iter().map(|&s| s as f32).collect());
        }
        let groups = raw.len().div_ceil(superblock_size);
        let mut steps = Vec::with_capacity(groups);
        let mut mins = Vec::with_capacity(groups);
        let mut codes = Vec::with_capacity(raw.len());
        for chunk in raw.chunks(superblock_size) {
            let lo = chunk.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = chunk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min32 = lo as f32;
            let step32 = ((hi - f64::from(min32)) / 255.0) as f32;
            mins.push(min32);
            steps.push(step32);
            for &s in chunk {
                let code = if step32 > 0.0 {
                    ((s - f64::from(min32)) / f64::from(step32)).round().clamp(0.0, 255.0) as u8
                } else {
                    0
                };
                codes.push(code);
            }
        }
        BlockScales::SuperBlock { steps, mins, codes }
    }

    pub fn len(&self) -> usize {
        match self {
            BlockScales::Full(s) => s.len(),
            BlockScales::SuperBlock { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Effective scale of `block`.
    pub fn scale(&self, block: usize, superblock_size: usize) -> f64 {
        match self {
            BlockScales::Full(s) => f64::from(s[block]),
            BlockScales::SuperBlock { steps, mins, codes } => {
                let g = block / superblock_size;
                f64::from(mins[g]) + f64::from(steps[g]) * f64::from(codes[block])
            }
        }
    }
}

/// View of one block of a [`QuantizedTensor`].
#[derive(Debug, Clone, Copy)]
pub struct Block<'a> {
    pub scale: f64,
    pub zero: f64,
    pub codes: &'a [i16],
}

impl Block<'_> {
    pub fn dequantize_into<T: Real>(&self, out: &mut Vec<T>) {
        let s = T::lit(self.scale);
        let z = T::lit(self.zero);
        out.extend(self.codes.iter().map(|&q| s * (T::lit(f64::from(q)) - z)));
    }
}

/// Packed representation of one weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub qtype: QuantType,
    pub pad_count: usize,
    /// One code per (padded) element, row-major.
    pub codes: Vec<i16>,
    pub scales: BlockScales,
    /// One zero-point per block for asymmetric codebooks, empty otherwise.
    pub zeros: Vec<u8>,
}

impl QuantizedTensor {
    pub fn numel(&self) -> usize {
        self.rows * self.cols
    }

    pub fn padded_len(&self) -> usize {
        self.numel() + self.pad_count
    }

    pub fn block_count(&self) -> usize {
        self.padded_len() / self.qtype.block_size
    }

    pub fn block_scale(&self, block: usize) -> f64 {
        self.scales.scale(block, self.qtype.superblock_size)
    }

    pub fn block_zero(&self, block: usize) -> f64 {
        self.zeros.get(block).map_or(0.0, |&z| f64::from(z))
    }

    pub fn block(&self, b: usize) -> Block<'_> {
        let bs = self.qtype.block_size;
        Block { scale: self.block_scale(b), zero: self.block_zero(b), codes: &self.codes[b * bs..(b + 1) * bs] }
    }

    /// All block scales at full precision.
    pub fn effective_scales(&self) -> Vec<f64> {
        (0..self.block_count()).map(|b| self.block_scale(b)).collect()
    }

    /// Checks geometry, scale-section sizes and code ranges.
    pub fn validate(&self) -> Result<(), QuantError> {
        let bs = self.qtype.block_size;
        if self.padded_len() % bs != 0 || self.pad_count >= bs {
            return Err(QuantError::Inconsistent(format!(
                "{} elements + {} padding is not a whole number of {}-element blocks",
                self.numel(),
                self.pad_count,
                bs
            )));
        }
        if self.codes.len() != self.padded_len() {
            return Err(QuantError::Inconsistent(format!(
                "{} codes for {} padded elements",
                self.codes.len(),
                self.padded_len()
            )));
        }
        let nblocks = self.block_count();
        if self.scales.len() != nblocks {
            return Err(QuantError::Inconsistent(format!("{} scales for {nblocks} blocks", self.scales.len())));
        }
        match (&self.scales, self.qtype.superblock_size) {
            (BlockScales::Full(_), 0) => {}
            (BlockScales::SuperBlock { steps, mins, .. }, s) if s > 0 => {
                let groups = nblocks.div_ceil(s);
                if steps.len() != groups || mins.len() != groups {
                    return Err(QuantError::Inconsistent(format!("expected {groups} super-block parameter pairs")));
                }
            }
            _ => return Err(QuantError::Inconsistent("scale storage does not match super-block size".into())),
        }
        let finite = match &self.scales {
            BlockScales::Full(s) => s.iter().all(|v| v.is_finite()),
            BlockScales::SuperBlock { steps, mins, .. } => steps.iter().chain(mins).all(|v| v.is_finite()),
        };
        if !finite {
            return Err(QuantError::Inconsistent("non-finite scale parameter".into()));
        }
        let want_zeros = if self.qtype.is_symmetric() { 0 } else { nblocks };
        if self.zeros.len() != want_zeros {
            return Err(QuantError::Inconsistent(format!(
                "{} zero-points for {want_zeros} expected",
                self.zeros.len()
            )));
        }
        for (b, &z) in self.zeros.iter().enumerate() {
            if !self.qtype.contains_code(i32::from(z)) {
                return Err(QuantError::ZeroOutOfRange { block: b, zero: z });
            }
        }
        for (i, &q) in self.codes.iter().enumerate() {
            if !self.qtype.contains_code(i32::from(q)) {
                return Err(QuantError::CodeOutOfRange { block: i / bs, index: i % bs, code: i32::from(q) });
            }
        }
        Ok(())
    }

    /// Builds a tensor from full-precision block parameters: the scales are
    /// compressed to their storage form first, then every code is assigned
    /// against the stored scale.
    pub fn from_block_params<T: Real>(
        name: impl Into<String>,
        weights: &Matrix<T>,
        qtype: QuantType,
        raw_scales: &[f64],
        zeros: &[i32],
    ) -> Result<Self, QuantError> {
        let padded = padded_weights(weights, qtype.block_size)?;
        let nblocks = padded.len() / qtype.block_size;
        if raw_scales.len() != nblocks {
            return Err(QuantError::ShapeMismatch { expected: nblocks, got: raw_scales.len() });
        }
        let zeros: Vec<u8> = if qtype.is_symmetric() {
            Vec::new()
        } else {
            if zeros.len() != nblocks {
                return Err(QuantError::ShapeMismatch { expected: nblocks, got: zeros.len() });
            }
            zeros
                .iter()
                .enumerate()
                .map(|(b, &z)| {
                    u8::try_from(z)
                        .ok()
                        .filter(|&z| qtype.contains_code(i32::from(z)))
                        .ok_or(QuantError::ZeroOutOfRange { block: b, zero: z.clamp(0, 255) as u8 })
                })
                .collect::<Result<_, _>>()?
        };
        let scales = BlockScales::encode(raw_scales, qtype.superblock_size);
        let mut qt = Self {
            name: name.into(),
            rows: weights.rows(),
            cols: weights.cols(),
            qtype,
            pad_count: padded.len() - weights.len(),
            codes: Vec::with_capacity(padded.len()),
            scales,
            zeros,
        };
        for (b, block) in padded.chunks(qtype.block_size).enumerate() {
            let s = T::lit(qt.block_scale(b));
            let z = T::lit(qt.block_zero(b));
            qt.codes.extend(block.iter().map(|&w| qtype.nearest_code(w, s, z) as i16));
        }
        Ok(qt)
    }
}

/// Row-major weights zero-padded to a whole number of blocks.
pub fn padded_weights<T: Real>(weights: &Matrix<T>, block_size: usize) -> Result<Vec<T>, QuantError> {
    if let Some(index) = weights.first_non_finite() {
        return Err(QuantError::NonFinite { index });
    }
    let n = weights.len();
    let padded = n.div_ceil(block_size) * block_size;
    let mut out = Vec::with_capacity(padded);
    out.extend_from_slice(weights.as_slice());
    out.resize(padded, T::zero());
    Ok(out)
}

/// Absmax block parameters: `(scale, zero)`.
///
/// Symmetric: the element of largest magnitude is mapped exactly onto the
/// most negative code, so the scale carries that element's sign.
/// Asymmetric: `[min(w, 0), max(w, 0)]` is spread over the full code range.
pub fn rtn_block_params<T: Real>(block: &[T], qtype: &QuantType) -> (T, i32) {
    match qtype.codebook {
        Codebook::UniformSymmetric => {
            let mut extreme = T::zero();
            for &w in block {
                if w.abs() > extreme.abs() {
                    extreme = w;
                }
            }
            let scale = extreme / T::lit(f64::from(qtype.code_min()));
            (scale, 0)
        }
        Codebook::UniformAsymmetric => {
            let lo = block.iter().copied().fold(T::zero(), T::min);
            let hi = block.iter().copied().fold(T::zero(), T::max);
            if hi == lo {
                return (T::zero(), 0);
            }
            // A constant nonzero block sits exactly one step from the zero
            // point, which makes its reconstruction exact.
            let first = block[0];
            if block.iter().all(|&w| w == first) {
                return if first > T::zero() { (first, 0) } else { (-first, 1) };
            }
            let scale = (hi - lo) / T::lit(f64::from(qtype.code_max()));
            let zero = (-lo / scale).round_half_away().to_i32().unwrap_or(0).clamp(0, qtype.code_max());
            (scale, zero)
        }
    }
}

/// Round-to-nearest block quantization with absmax scales.
pub fn quantize_rtn<T: Real>(
    name: impl Into<String>,
    weights: &Matrix<T>,
    qtype: QuantType,
) -> Result<QuantizedTensor, QuantError> {
    let padded = padded_weights(weights, qtype.block_size)?;
    let (scales, zeros): (Vec<f64>, Vec<i32>) = padded
        .chunks(qtype.block_size)
        .map(|b| {
            let (s, z) = rtn_block_params(b, &qtype);
            (s.to_f64_lossy(), z)
        })
        .unzip();
    QuantizedTensor::from_block_params(name, weights, qtype, &scales, &zeros)
}

/// Reconstructs the weight matrix, padding removed.
pub fn dequantize<T: Real>(qt: &QuantizedTensor) -> Result<Matrix<T>, QuantError> {
    qt.validate()?;
    let mut out = Vec::with_capacity(qt.padded_len());
    for b in 0..qt.block_count() {
        qt.block(b).dequantize_into(&mut out);
    }
    out.truncate(qt.numel());
    Matrix::from_vec(qt.rows, qt.cols, out).map_err(|e| QuantError::Inconsistent(e.to_string()))
}

/// Importance-weighted mean squared reconstruction error
/// `sum w_i (x_i - x̂_i)^2 / sum w_i` (plain MSE when `importance` is `None`).
pub fn quant_mse<T: Real>(
    original: &Matrix<T>,
    qt: &QuantizedTensor,
    importance: Option<&[T]>,
) -> Result<T, QuantError> {
    if original.shape() != (qt.rows, qt.cols) {
        return Err(QuantError::ShapeMismatch { expected: qt.numel(), got: original.len() });
    }
    if let Some(w) = importance {
        if w.len() != original.len() {
            return Err(QuantError::ShapeMismatch { expected: original.len(), got: w.len() });
        }
    }
    let recon = dequantize::<T>(qt)?;
    let mut num = T::zero();
    let mut den = T::zero();
    for (i, (&x, &y)) in original.as_slice().iter().zip(recon.as_slice()).enumerate() {
        let w = importance.map_or(T::one(), |v| v[i]);
        num += w * (x - y) * (x - y);
        den += w;
    }
    Ok(if den > T::zero() { num / den } else { T::zero() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym(b: u8, bs: usize, s: usize) -> QuantType {
        QuantType::new(b, Codebook::UniformSymmetric, bs, s).unwrap()
    }

    #[test]
    fn codebook_ranges() {
        let t = sym(2, 4, 0);
        assert_eq!((t.code_min(), t.code_max()), (-2, 1));
        let t = sym(8, 4, 0);
        assert_eq!((t.code_min(), t.code_max()), (-128, 127));
        let a = QuantType::new(3, Codebook::UniformAsymmetric, 4, 0).unwrap();
        assert_eq!((a.code_min(), a.code_max()), (0, 7));
        assert_eq!(sym(4, 4, 0).error_factor(), 1.0 / 256.0);
        assert_eq!(sym(2, 4, 0).levels(), 4);
    }

    #[test]
    fn rejects_bad_types_and_weights() {
        assert_eq!(QuantType::symmetric(7), Err(QuantError::InvalidBitWidth(7)));
        assert_eq!(QuantType::new(4, Codebook::UniformSymmetric, 1, 0), Err(QuantError::InvalidBlockSize(1)));
        let m = Matrix::from_vec(1, 3, vec![1.0, f64::NAN, 0.0]).unwrap();
        assert_eq!(quantize_rtn("t", &m, sym(4, 4, 0)).unwrap_err(), QuantError::NonFinite { index: 1 });
    }

    #[test]
    fn zero_block() {
        for qt in [sym(3, 4, 0), QuantType::new(3, Codebook::UniformAsymmetric, 4, 2).unwrap()] {
            let m = Matrix::<f64>::zeros(1, 4);
            let q = quantize_rtn("z", &m, qt).unwrap();
            assert_eq!(q.block_scale(0), 0.0);
            assert!(q.codes.iter().all(|&c| c == 0));
            assert_eq!(dequantize::<f64>(&q).unwrap(), m);
            assert_eq!(quant_mse(&m, &q, None).unwrap(), 0.0);
        }
    }

    #[test]
    fn block_on_scaled_codebook_is_exact() {
        let m = Matrix::from_vec(1, 4, vec![-1.0, -0.5, 0.0, 0.5]).unwrap();
        let q = quantize_rtn("t", &m, sym(2, 4, 0)).unwrap();
        assert_eq!(q.block_scale(0), 0.5);
        assert_eq!(q.codes, vec![-2, -1, 0, 1]);
        assert_eq!(quant_mse(&m, &q, None).unwrap(), 0.0);
    }

    #[test]
    fn identity_scale_dequantizes_codes() {
        let qt = QuantizedTensor {
            name: "t".into(),
            rows: 1,
            cols: 4,
            qtype: sym(2, 4, 0),
            pad_count: 0,
            codes: vec![-2, -1, 0, 1],
            scales: BlockScales::Full(vec![1.0]),
            zeros: vec![],
        };
        assert_eq!(dequantize::<f64>(&qt).unwrap().as_slice(), &[-2.0, -1.0, 0.0, 1.0]);
    }

    #[test]
    fn corrupted_code_is_rejected() {
        let mut qt =
            quantize_rtn("t", &Matrix::from_vec(1, 4, vec![0.1, 0.2, 0.3, 0.4]).unwrap(), sym(2, 4, 0)).unwrap();
        qt.codes[2] = 5;
        assert!(matches!(dequantize::<f64>(&qt), Err(QuantError::CodeOutOfRange { block: 0, index: 2, code: 5 })));
    }

    #[test]
    fn padding_is_excluded() {
        let m = Matrix::from_fn(3, 5, |r, c| (r * 5 + c) as f64 * 0.1 - 0.7);
        let q = quantize_rtn("p", &m, sym(4, 4, 0)).unwrap();
        assert_eq!(q.pad_count, 1);
        assert_eq!(q.block_count(), 4);
        let d = dequantize::<f64>(&q).unwrap();
        assert_eq!(d.shape(), (3, 5));
    }

    #[test]
    fn weighted_mse_hand_expanded() {
        let m = Matrix::from_vec(1, 4, vec![0.31, -0.77, 0.12, 0.58]).unwrap();
        let q = quantize_rtn("t", &m, sym(2, 4, 0)).unwrap();
        let d = dequantize::<f64>(&q).unwrap();
        let w = [1.0, 2.0, 3.0, 4.0];
        let e: Vec<f64> = (0..4).map(|i| m.as_slice()[i] - d.as_slice()[i]).collect();
        let expect = (1.0 * e[0] * e[0] + 2.0 * e[1] * e[1] + 3.0 * e[2] * e[2] + 4.0 * e[3] * e[3]) / 10.0;
        let got = quant_mse(&m, &q, Some(&w)).unwrap();
        assert!((got - expect).abs() <= 1e-15 * expect.max(1.0));
        let uniform = quant_mse(&m, &q, Some(&[2.5; 4])).unwrap();
        assert!((uniform - quant_mse(&m, &q, None).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let m = Matrix::from_vec(1, 4, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let q = quantize_rtn("t", &m, sym(2, 4, 0)).unwrap();
        let other = Matrix::from_vec(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!(matches!(quant_mse(&other, &q, None), Err(QuantError::ShapeMismatch { .. })));
        assert!(matches!(quant_mse(&m, &q, Some(&[1.0; 3])), Err(QuantError::ShapeMismatch { .. })));
    }

    #[test]
    fn asymmetric_positive_block() {
        let m = Matrix::from_vec(1, 4, vec![0.0f64, 1.0, 2.0, 3.0]).unwrap();
        let a = QuantType::new(2, Codebook::UniformAsymmetric, 4, 0).unwrap();
        let q = quantize_rtn("a", &m, a).unwrap();
        assert_eq!(q.block_zero(0), 0.0);
        assert_eq!(q.codes, vec![0, 1, 2, 3]);
        assert_eq!(dequantize::<f64>(&q).unwrap(), m);
    }

    #[test]
    fn super_block_scales_round_trip_their_own_encoding() {
        let raw = [0.5, -0.25, 0.125, 0.0, 1.0, 0.75];
        let enc = BlockScales::encode(&raw, 4);
        let eff: Vec<f64> = (0..raw.len()).map(|b| enc.scale(b, 4)).collect();
        assert_eq!(BlockScales::encode(&eff, 4), enc);
        for (r, e) in raw.iter().zip(&eff) {
            assert!((r - e).abs() <= 0.76 / 255.0);
        }
    }
}
