//! The AQPK pack file: a directory of quantized tensors with bit-packed codes,
//! per-block scale sections and string metadata. Little-endian throughout.
//! The byte layout is documented in FORMATS.md.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::quantcore::{BlockScales, Codebook, QuantError, QuantType, QuantizedTensor};

pub const PACK_MAGIC: &[u8; 4] = b"AQPK";
pub const PACK_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PackError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported pack version {0}")]
    UnsupportedVersion(u16),
    #[error("truncation while reading {0}")]
    Truncated(String),
    #[error("truncation: payload of tensor {0} extends past end of file")]
    TensorTruncated(String),
    #[error("header says {header} bytes, file has {actual}")]
    FileLength { header: u64, actual: u64 },
    #[error("sections overlap: {0} and {1}")]
    Overlap(String, String),
    #[error(
        "tensor {name}: unknown type tag (bits {bits}, codebook {codebook}, block {block}, super-block {superblock})"
    )]
    UnknownTypeTag { name: String, bits: u8, codebook: u8, block: u32, superblock: u32 },
    #[error("tensor {name}: payload is {got} bytes, geometry implies {expected}")]
    PayloadLength { name: String, expected: u64, got: u64 },
    #[error("directory is not sorted by name at {0}")]
    UnsortedDirectory(String),
    #[error("duplicate tensor name {0}")]
    DuplicateName(String),
    #[error("duplicate metadata key {0}")]
    DuplicateKey(String),
    #[error("invalid UTF-8 in {0}")]
    BadUtf8(String),
    #[error("{0} does not fit the on-disk field width")]
    Overflow(String),
    #[error("tensor {name}: {source}")]
    InvalidTensor { name: String, source: QuantError },
}

/// A decoded pack file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PackFile {
    pub tensors: Vec<QuantizedTensor>,
    pub metadata: BTreeMap<String, String>,
}

impl PackFile {
    pub fn tensor(&self, name: &str) -> Option<&QuantizedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Bytes of the packed code stream for `n` codes of `bits` each.
pub fn code_bytes(n: usize, bits: u8) -> Option<usize> {
    n.checked_mul(usize::from(bits)).map(|b| b.div_ceil(32) * 4)
}

/// Payload length implied by a tensor's geometry and type.
pub fn payload_len(padded_len: usize, qtype: &QuantType) -> Option<usize> {
    let nblocks = padded_len / qtype.block_size();
    let codes = code_bytes(padded_len, qtype.bit_width())?;
    let scales = if qtype.superblock_size() == 0 {
        nblocks.checked_mul(4)?
    } else {
        nblocks.div_ceil(qtype.superblock_size()).checked_mul(8)?.checked_add(nblocks)?
    };
    let zeros = if qtype.is_symmetric() { 0 } else { nblocks };
    codes.checked_add(scales)?.checked_add(zeros)
}

fn code_offset(qtype: &QuantType) -> i32 {
    -qtype.code_min()
}

fn pack_codes(codes: &[i16], qtype: &QuantType, out: &mut Vec<u8>) {
    let bits = u32::from(qtype.bit_width());
    let off = code_offset(qtype);
    let mut words = vec![0u32; code_bytes(codes.len(), qtype.bit_width()).expect("sized") / 4];
    for (i, &q) in codes.iter().enumerate() {
        let v = (i32::from(q) + off) as u64;
        let bit = i as u64 * u64::from(bits);
        let (w, s) = ((bit / 32) as usize, (bit % 32) as u32);
        let wide = v << s;
        words[w] |= wide as u32;
        if s + bits > 32 {
            words[w + 1] |= (wide >> 32) as u32;
        }
    }
    for w in words {
        out.extend_from_slice(&w.to_le_bytes());
    }
}

fn unpack_codes(bytes: &[u8], n: usize, qtype: &QuantType) -> Vec<i16> {
    let bits = u32::from(qtype.bit_width());
    let off = code_offset(qtype);
    let mask = (1u64 << bits) - 1;
    let words: Vec<u32> = bytes.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    (0..n)
        .map(|i| {
            let bit = i as u64 * u64::from(bits);
            let (w, s) = ((bit / 32) as usize, (bit % 32) as u32);
            let mut v = u64::from(words[w]) >> s;
            if s + bits > 32 {
                v |= u64::from(words[w + 1]) << (32 - s);
            }
            ((v & mask) as i32 - off) as i16
        })
        .collect()
}

fn type_tag(t: &QuantType) -> (u8, u8, u32, u32) {
    let cb = match t.codebook() {
        Codebook::UniformSymmetric => 0,
        Codebook::UniformAsymmetric => 1,
    };
    (t.bit_width(), cb, t.block_size() as u32, t.superblock_size() as u32)
}

fn u32_field(v: usize, what: &str) -> Result<u32, PackError> {
    u32::try_from(v).map_err(|_| PackError::Overflow(what.to_string()))
}

fn tensor_payload(t: &QuantizedTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload_len(t.padded_len(), &t.qtype).unwrap_or(0));
    pack_codes(&t.codes, &t.qtype, &mut out);
    match &t.scales {
        BlockScales::Full(s) => s.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        BlockScales::SuperBlock { steps, mins, codes } => {
            for (st, mn) in steps.iter().zip(mins) {
                out.extend_from_slice(&st.to_le_bytes());
                out.extend_from_slice(&mn.to_le_bytes());
            }
            out.extend_from_slice(codes);
        }
    }
    out.extend_from_slice(&t.zeros);
    out
}

fn dir_entry_len(name: &str) -> usize {
    2 + name.len() + 4 + 4 + 1 + 1 + 4 + 4 + 4 + 8 + 8
}

/// Serializes tensors (directory sorted by name) and metadata (sorted by key).
pub fn write_pack(tensors: &[QuantizedTensor], metadata: &BTreeMap<String, String>) -> Result<Vec<u8>, PackError> {
    let mut sorted: Vec<&QuantizedTensor> = tensors.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    for w in sorted.windows(2) {
        if w[0].name == w[1].name {
            return Err(PackError::DuplicateName(w[0].name.clone()));
        }
    }
    for t in &sorted {
        t.validate().map_err(|source| PackError::InvalidTensor { name: t.name.clone(), source })?;
        if t.name.len() > usize::from(u16::MAX) {
            return Err(PackError::Overflow(format!("name of {}", t.name)));
        }
    }
    let payloads: Vec<Vec<u8>> = sorted.iter().map(|t| tensor_payload(t)).collect();
    let dir_len: usize = sorted.iter().map(|t| dir_entry_len(&t.name)).sum();
    let meta_len: usize = metadata.iter().map(|(k, v)| 8 + k.len() + v.len()).sum();
    let payload_offset = HEADER_LEN + dir_len + meta_len;
    let file_len = payload_offset + payloads.iter().map(Vec::len).sum::<usize>();

    let mut out = Vec::with_capacity(file_len);
    out.extend_from_slice(PACK_MAGIC);
    out.extend_from_slice(&PACK_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&u32_field(sorted.len(), "tensor count")?.to_le_bytes());
    out.extend_from_slice(&u32_field(metadata.len(), "metadata count")?.to_le_bytes());
    out.extend_from_slice(&(payload_offset as u64).to_le_bytes());
    out.extend_from_slice(&(file_len as u64).to_le_bytes());

    let mut offset = payload_offset as u64;
    for (t, p) in sorted.iter().zip(&payloads) {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&u32_field(t.rows, "rows")?.to_le_bytes());
        out.extend_from_slice(&u32_field(t.cols, "cols")?.to_le_bytes());
        let (bits, cb, bs, ss) = type_tag(&t.qtype);
        out.push(bits);
        out.push(cb);
        out.extend_from_slice(&bs.to_le_bytes());
        out.extend_from_slice(&ss.to_le_bytes());
        out.extend_from_slice(&u32_field(t.pad_count, "pad count")?.to_le_bytes());
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&(p.len() as u64).to_le_bytes());
        offset += p.len() as u64;
    }
    for (k, v) in metadata {
        out.extend_from_slice(&u32_field(k.len(), "metadata key")?.to_le_bytes());
        out.extend_from_slice(k.as_bytes());
        out.extend_from_slice(&u32_field(v.len(), "metadata value")?.to_le_bytes());
        out.extend_from_slice(v.as_bytes());
    }
    for p in payloads {
        out.extend_from_slice(&p);
    }
    debug_assert_eq!(out.len(), file_len);
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], PackError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| PackError::Truncated(what.to_string()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, PackError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, PackError> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32, PackError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64, PackError> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn string(&mut self, len: usize, what: &str) -> Result<String, PackError> {
        let b = self.take(len, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| PackError::BadUtf8(what.to_string()))
    }
}

struct DirEntry {
    name: String,
    rows: usize,
    cols: usize,
    qtype: QuantType,
    pad_count: usize,
    offset: u64,
    length: u64,
}

/// Parses and validates a pack file. Never panics on malformed input.
pub fn read_pack(bytes: &[u8]) -> Result<PackFile, PackError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4, "header")? != PACK_MAGIC {
        return Err(PackError::BadMagic);
    }
    let version = c.u16("header")?;
    if version != PACK_VERSION {
        return Err(PackError::UnsupportedVersion(version));
    }
    c.u16("header")?;
    let tensor_count = c.u32("header")? as usize;
    let meta_count = c.u32("header")? as usize;
    let payload_offset = c.u64("header")?;
    let file_len = c.u64("header")?;
    if file_len != bytes.len() as u64 {
        return Err(PackError::FileLength { header: file_len, actual: bytes.len() as u64 });
    }

    let mut dir: Vec<DirEntry> = Vec::new();
    for i in 0..tensor_count {
        let what = format!("directory entry {i}");
        let name_len = usize::from(c.u16(&what)?);
        let name = c.string(name_len, &what)?;
        let rows = c.u32(&what)? as usize;
        let cols = c.u32(&what)? as usize;
        let bits = c.u8(&what)?;
        let codebook = c.u8(&what)?;
        let block = c.u32(&what)?;
        let superblock = c.u32(&what)?;
        let pad_count = c.u32(&what)? as usize;
        let offset = c.u64(&what)?;
        let length = c.u64(&what)?;
        let unknown = || PackError::UnknownTypeTag { name: name.clone(), bits, codebook, block, superblock };
        let cb = match codebook {
            0 => Codebook::UniformSymmetric,
            1 => Codebook::UniformAsymmetric,
            _ => return Err(unknown()),
        };
        let qtype = QuantType::new(bits, cb, block as usize, superblock as usize).map_err(|_| unknown())?;
        if let Some(prev) = dir.last() {
            if prev.name == name {
                return Err(PackError::DuplicateName(name));
            }
            if prev.name > name {
                return Err(PackError::UnsortedDirectory(name));
            }
        }
        dir.push(DirEntry { name, rows, cols, qtype, pad_count, offset, length });
    }
    let mut metadata = BTreeMap::new();
    for i in 0..meta_count {
        let what = format!("metadata entry {i}");
        let klen = c.u32(&what)? as usize;
        let key = c.string(klen, &what)?;
        let vlen = c.u32(&what)? as usize;
        let value = c.string(vlen, &what)?;
        if metadata.insert(key.clone(), value).is_some() {
            return Err(PackError::DuplicateKey(key));
        }
    }
    if c.pos as u64 != payload_offset {
        return Err(PackError::Overlap("header sections".into(), "payload".into()));
    }

    // Payload regions must be in bounds and pairwise disjoint.
    let mut spans: Vec<(u64, u64, &str)> = Vec::with_capacity(dir.len());
    for e in &dir {
        let end = e.offset.checked_add(e.length).ok_or_else(|| PackError::TensorTruncated(e.name.clone()))?;
        if e.offset < payload_offset {
            return Err(PackError::Overlap("directory".into(), e.name.clone()));
        }
        if end > file_len {
            return Err(PackError::TensorTruncated(e.name.clone()));
        }
        spans.push((e.offset, end, &e.name));
    }
    spans.sort();
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(PackError::Overlap(w[0].2.to_string(), w[1].2.to_string()));
        }
    }

    let mut tensors = Vec::with_capacity(dir.len());
    for e in dir {
        let bad_geometry = || PackError::PayloadLength { name: e.name.clone(), expected: 0, got: e.length };
        let padded = e.rows.checked_mul(e.cols).and_then(|n| n.checked_add(e.pad_count)).ok_or_else(bad_geometry)?;
        if padded % e.qtype.block_size() != 0 || e.pad_count >= e.qtype.block_size() {
            return Err(PackError::InvalidTensor {
                name: e.name.clone(),
                source: QuantError::Inconsistent(format!(
                    "{padded} padded elements in {}-element blocks",
                    e.qtype.block_size()
                )),
            });
        }
        let expected = payload_len(padded, &e.qtype).ok_or_else(bad_geometry)? as u64;
        if expected != e.length {
            return Err(PackError::PayloadLength { name: e.name.clone(), expected, got: e.length });
        }
        let body = &bytes[e.offset as usize..(e.offset + e.length) as usize];
        let nblocks = padded / e.qtype.block_size();
        let cb = code_bytes(padded, e.qtype.bit_width()).expect("checked by payload_len");
        let codes = unpack_codes(&body[..cb], padded, &e.qtype);
        let mut rest = &body[cb..];
        let f32_at = |b: &[u8], i: usize| f32::from_le_bytes(b[4 * i..4 * i + 4].try_into().expect("4 bytes"));
        let scales = if e.qtype.superblock_size() == 0 {
            let s = (0..nblocks).map(|i| f32_at(rest, i)).collect();
            rest = &rest[4 * nblocks..];
            BlockScales::Full(s)
        } else {
            let groups = nblocks.div_ceil(e.qtype.superblock_size());
            let steps = (0..groups).map(|g| f32_at(rest, 2 * g)).collect();
            let mins = (0..groups).map(|g| f32_at(rest, 2 * g + 1)).collect();
            let codes = rest[8 * groups..8 * groups + nblocks].to_vec();
            rest = &rest[8 * groups + nblocks..];
            BlockScales::SuperBlock { steps, mins, codes }
        };
        let zeros = rest.to_vec();
        let t = QuantizedTensor {
            name: e.name.clone(),
            rows: e.rows,
            cols: e.cols,
            qtype: e.qtype,
            pad_count: e.pad_count,
            codes,
            scales,
            zeros,
        };
        t.validate().map_err(|source| PackError::InvalidTensor { name: e.name.clone(), source })?;
        tensors.push(t);
    }
    Ok(PackFile { tensors, metadata })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorMemory {
    pub name: String,
    pub numel: usize,
    pub bit_width: u8,
    pub payload_bytes: u64,
    /// Payload bits per real (non-padding) element.
    pub effective_bpw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub file_bytes: u64,
    pub payload_bytes: u64,
    pub tensors: Vec<TensorMemory>,
    /// Size-weighted mean code width.
    pub code_bpw: f64,
    /// Payload bits (codes, scales, zero-points) per element.
    pub effective_bpw: f64,
    /// Bytes the same shapes take at 16 bits per weight.
    pub baseline_bytes: u64,
    /// 16 / code_bpw.
    pub code_ratio: f64,
    /// baseline_bytes / payload_bytes.
    pub effective_ratio: f64,
}

/// `baseline / compressed`.
pub fn compression_ratio(baseline: f64, compressed: f64) -> f64 {
    baseline / compressed
}

pub fn model_memory_report(pack: &PackFile, file_bytes: u64) -> MemoryReport {
    let tensors: Vec<TensorMemory> = pack
        .tensors
        .iter()
        .map(|t| {
            let bytes = payload_len(t.padded_len(), &t.qtype).unwrap_or(0) as u64;
            TensorMemory {
                name: t.name.clone(),
                numel: t.numel(),
                bit_width: t.qtype.bit_width(),
                payload_bytes: bytes,
                effective_bpw: if t.numel() == 0 { 0.0 } else { bytes as f64 * 8.0 / t.numel() as f64 },
            }
        })
        .collect();
    let numel: u64 = tensors.iter().map(|t| t.numel as u64).sum();
    let payload_bytes: u64 = tensors.iter().map(|t| t.payload_bytes).sum();
    let code_bits: f64 = tensors.iter().map(|t| f64::from(t.bit_width) * t.numel as f64).sum();
    let n = numel as f64;
    let code_bpw = if numel == 0 { 0.0 } else { code_bits / n };
    MemoryReport {
        file_bytes,
        payload_bytes,
        code_bpw,
        effective_bpw: if numel == 0 { 0.0 } else { payload_bytes as f64 * 8.0 / n },
        baseline_bytes: 2 * numel,
        code_ratio: compression_ratio(16.0, code_bpw),
        effective_ratio: compression_ratio(2.0 * n, payload_bytes as f64),
        tensors,
    }
}
