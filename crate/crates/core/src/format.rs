//! Raw weight files (`BTCW`) and compressed layer containers (`BTCQ`).
//!
//! All integers are little-endian. Bit fields are packed LSB-first with
//! bit 1 meaning `+1`, and zero-padded to a byte boundary.

use std::io::{Read, Write};

use crate::binarize::SalientOverlay;
use crate::codebook::{BinaryCodebook, MAX_VECTOR_LEN};
use crate::error::{Error, Result};
use crate::matrix::{BoolMatrix, DenseMatrix, PackedBinaryMatrix};
use crate::pipeline::{ceil_log2, index_count, QuantizedLayer};
use crate::transform::TransformPair;

pub const WEIGHT_MAGIC: [u8; 4] = *b"BTCW";
pub const LAYER_MAGIC: [u8; 4] = *b"BTCQ";
pub const VERSION: u8 = 1;

pub const FLAG_OVERLAY: u8 = 1 << 0;
pub const FLAG_TRANSFORM: u8 = 1 << 1;
pub const FLAG_GROUPING: u8 = 1 << 2;
const KNOWN_FLAGS: u8 = FLAG_OVERLAY | FLAG_TRANSFORM | FLAG_GROUPING;

struct BitWriter {
    bytes: Vec<u8>,
    used: usize,
}

impl BitWriter {
    fn new() -> Self {
        Self { bytes: Vec::new(), used: 0 }
    }

    fn push(&mut self, value: u64, width: u32) {
        for b in 0..width {
            if self.used % 8 == 0 {
                self.bytes.push(0);
            }
            if value >> b & 1 == 1 {
                *self.bytes.last_mut().expect("byte pushed above") |= 1 << (self.used % 8);
            }
            self.used += 1;
        }
    }

    fn finish(self) -> Vec<u8> {
        self.bytes
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, width: u32) -> u64 {
        let mut value = 0u64;
        for b in 0..width {
            let bit = self.bytes[self.pos / 8] >> (self.pos % 8) & 1;
            value |= u64::from(bit) << b;
            self.pos += 1;
        }
        value
    }

    /// Errors unless every bit after the read position is zero.
    fn check_padding(&self, section: &str) -> Result<()> {
        for p in self.pos..self.bytes.len() * 8 {
            if self.bytes[p / 8] >> (p % 8) & 1 == 1 {
                return Err(Error::Malformed(format!("nonzero padding bits in {section}")));
            }
        }
        Ok(())
    }
}

fn packed_bytes(bits: impl Iterator<Item = bool>) -> Vec<u8> {
    let mut w = BitWriter::new();
    for b in bits {
        w.push(u64::from(b), 1);
    }
    w.finish()
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, section: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).ok_or(Error::Truncated(section))?;
        if end > self.bytes.len() {
            return Err(Error::Truncated(section));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, section: &'static str) -> Result<u8> {
        Ok(self.take(1, section)?[0])
    }

    fn u32(&mut self, section: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().expect("4 bytes")))
    }

    fn usize(&mut self, section: &'static str) -> Result<usize> {
        Ok(self.u32(section)? as usize)
    }

    fn f32s(&mut self, count: usize, section: &'static str) -> Result<Vec<f64>> {
        let raw = self.take(count.checked_mul(4).ok_or(Error::Truncated(section))?, section)?;
        raw.chunks_exact(4)
            .map(|b| {
                let x = f32::from_le_bytes(b.try_into().expect("4 bytes"));
                if x.is_finite() {
                    Ok(f64::from(x))
                } else {
                    Err(Error::Malformed(format!("non-finite value in {section}")))
                }
            })
            .collect()
    }

    fn f64s(&mut self, count: usize, section: &'static str) -> Result<Vec<f64>> {
        let raw = self.take(count.checked_mul(8).ok_or(Error::Truncated(section))?, section)?;
        raw.chunks_exact(8)
            .map(|b| {
                let x = f64::from_le_bytes(b.try_into().expect("8 bytes"));
                if x.is_finite() {
                    Ok(x)
                } else {
                    Err(Error::Malformed(format!("non-finite value in {section}")))
                }
            })
            .collect()
    }

    fn bits(&mut self, count: usize, section: &'static str) -> Result<Vec<bool>> {
        let raw = self.take(count.div_ceil(8), section)?;
        let mut r = BitReader::new(raw);
        let out = (0..count).map(|_| r.take(1) == 1).collect();
        r.check_padding(section)?;
        Ok(out)
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let found = &self.bytes[..self.bytes.len().min(4)];
        if found != expected {
            return Err(Error::BadMagic {
                expected,
                found: found.to_vec(),
            });
        }
        self.pos = 4;
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Malformed(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn dim(x: usize, what: &str) -> Result<u32> {
    u32::try_from(x).map_err(|_| Error::Argument(format!("{what} {x} does not fit in 32 bits")))
}

/// Writes `w` as `BTCW`: magic, version, rows, cols, row-major `f32` values.
pub fn write_weights(w: &DenseMatrix, out: &mut impl Write) -> Result<()> {
    let mut buf = Vec::with_capacity(13 + 4 * w.data().len());
    buf.extend_from_slice(&WEIGHT_MAGIC);
    buf.push(VERSION);
    buf.extend_from_slice(&dim(w.rows(), "rows")?.to_le_bytes());
    buf.extend_from_slice(&dim(w.cols(), "cols")?.to_le_bytes());
    for &x in w.data() {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn decode_weights(bytes: &[u8]) -> Result<DenseMatrix> {
    let mut c = Cursor { bytes, pos: 0 };
    c.magic(WEIGHT_MAGIC)?;
    let version = c.u8("header")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let rows = c.usize("header")?;
    let cols = c.usize("header")?;
    let count = rows.checked_mul(cols).ok_or(Error::Truncated("weights"))?;
    let data = c.f32s(count, "weights")?;
    c.finish()?;
    DenseMatrix::new(rows, cols, data)
}

pub fn read_weights(input: &mut impl Read) -> Result<DenseMatrix> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    decode_weights(&bytes)
}

/// Encodes a layer as a `BTCQ` container.
pub fn serialize(layer: &QuantizedLayer) -> Result<Vec<u8>> {
    layer.validate()?;
    let (n, m, v, c) = (layer.n, layer.m, layer.v, layer.c());
    let mut flags = 0u8;
    if layer.overlay.is_some() {
        flags |= FLAG_OVERLAY;
    }
    if layer.transform.is_some() {
        flags |= FLAG_TRANSFORM;
    }
    if layer.split_thresholds.is_some() {
        flags |= FLAG_GROUPING;
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(&LAYER_MAGIC);
    buf.push(VERSION);
    buf.push(flags);
    for (x, what) in [(n, "n"), (m, "m"), (v, "v"), (c, "c"), (layer.indices.len(), "index_count")] {
        buf.extend_from_slice(&dim(x, what)?.to_le_bytes());
    }
    for &a in layer.alpha.iter().chain(&layer.mu) {
        buf.extend_from_slice(&(a as f32).to_le_bytes());
    }
    let row_bytes = v.div_ceil(8);
    for k in 0..c {
        buf.extend_from_slice(&layer.codebook.word(k).to_le_bytes()[..row_bytes]);
    }
    let width = ceil_log2(c as u64);
    let mut idx = BitWriter::new();
    for &k in &layer.indices {
        idx.push(u64::from(k), width);
    }
    buf.extend(idx.finish());

    if let Some(o) = &layer.overlay {
        buf.extend_from_slice(&dim(o.count(), "overlay count")?.to_le_bytes());
        for (pos, _) in o.mask.data().iter().enumerate().filter(|(_, &b)| b) {
            buf.extend_from_slice(&((pos / m) as u32).to_le_bytes());
            buf.extend_from_slice(&((pos % m) as u32).to_le_bytes());
        }
        buf.extend(packed_bytes((0..o.count()).map(|k| o.signs.bit(0, k))));
        for &a in &o.alpha2 {
            buf.extend_from_slice(&(a as f32).to_le_bytes());
        }
    }
    if let Some(t) = &layer.transform {
        buf.extend_from_slice(&dim(t.d1(), "d1")?.to_le_bytes());
        buf.extend_from_slice(&dim(t.d2(), "d2")?.to_le_bytes());
        buf.extend(packed_bytes(t.sigma().iter().map(|&s| s > 0)));
        for &x in t.p1().data().iter().chain(t.p2().data()) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    if let Some(th) = &layer.split_thresholds {
        buf.extend_from_slice(&dim(th.len(), "threshold count")?.to_le_bytes());
        for &x in th {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(buf)
}

/// Decodes a `BTCQ` container, validating every section.
pub fn deserialize(bytes: &[u8]) -> Result<QuantizedLayer> {
    let mut cur = Cursor { bytes, pos: 0 };
    cur.magic(LAYER_MAGIC)?;
    let version = cur.u8("header")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let flags = cur.u8("header")?;
    if flags & !KNOWN_FLAGS != 0 {
        return Err(Error::Malformed(format!("unknown flag bits {:#04x}", flags & !KNOWN_FLAGS)));
    }
    let n = cur.usize("header")?;
    let m = cur.usize("header")?;
    let v = cur.usize("header")?;
    let c = cur.usize("header")?;
    let count = cur.usize("header")?;
    if v == 0 || v > MAX_VECTOR_LEN {
        return Err(Error::Malformed(format!("vector length {v} not in 1..={MAX_VECTOR_LEN}")));
    }
    if c == 0 || (v < 64 && c as u128 > 1u128 << v) {
        return Err(Error::Malformed(format!("codebook size {c} invalid for v={v}")));
    }
    let weights = n.checked_mul(m).ok_or_else(|| Error::Malformed("dimensions overflow".into()))?;
    if count != index_count(n, m, v) {
        return Err(Error::Malformed(format!("index_count {count} != ⌈{n}·{m}/{v}⌉")));
    }

    let alpha = cur.f32s(n, "alpha")?;
    let mu = cur.f32s(n, "mu")?;

    let row_bytes = v.div_ceil(8);
    let raw = cur.take(c.checked_mul(row_bytes).ok_or(Error::Truncated("codebook"))?, "codebook")?;
    let vmask = if v == 64 { u64::MAX } else { (1u64 << v) - 1 };
    let mut words = Vec::with_capacity(c);
    for row in raw.chunks_exact(row_bytes) {
        let mut le = [0u8; 8];
        le[..row_bytes].copy_from_slice(row);
        let w = u64::from_le_bytes(le);
        if w & !vmask != 0 {
            return Err(Error::Malformed("nonzero padding bits in codebook".into()));
        }
        words.push(w);
    }
    let codebook = BinaryCodebook::from_words(v, &words)?;

    let width = ceil_log2(c as u64);
    let idx_len = (count as u128 * u128::from(width)).div_ceil(8);
    let raw = cur.take(usize::try_from(idx_len).map_err(|_| Error::Truncated("indices"))?, "indices")?;
    let mut r = BitReader::new(raw);
    let mut indices = Vec::with_capacity(count);
    for position in 0..count {
        let k = r.take(width);
        if k >= c as u64 {
            return Err(Error::IndexOutOfRange { position, index: k, c });
        }
        indices.push(k as u32);
    }
    r.check_padding("indices")?;

    let overlay = if flags & FLAG_OVERLAY != 0 {
        let k = cur.usize("overlay")?;
        let mut mask = vec![false; weights];
        let mut last: Option<usize> = None;
        for _ in 0..k {
            let i = cur.usize("overlay")?;
            let j = cur.usize("overlay")?;
            if i >= n || j >= m {
                return Err(Error::Malformed(format!("overlay position ({i}, {j}) outside {n}x{m}")));
            }
            let pos = i * m + j;
            if last.is_some_and(|p| p >= pos) {
                return Err(Error::Malformed("overlay positions not strictly row-major".into()));
            }
            last = Some(pos);
            mask[pos] = true;
        }
        let bits = cur.bits(k, "overlay")?;
        let alpha2 = cur.f32s(n, "overlay")?;
        Some(SalientOverlay {
            mask: BoolMatrix::new(n, m, mask)?,
            signs: PackedBinaryMatrix::from_fn(1, k, |_, t| bits[t]),
            alpha2,
        })
    } else {
        None
    };

    let transform = if flags & FLAG_TRANSFORM != 0 {
        let d1 = cur.usize("transform")?;
        let d2 = cur.usize("transform")?;
        if d1.checked_mul(d2) != Some(m) {
            return Err(Error::Malformed(format!("transform {d1}x{d2} does not cover width {m}")));
        }
        let sigma = cur.bits(m, "transform")?.into_iter().map(|b| if b { 1 } else { -1 }).collect();
        let p1 = cur.f64s(d1 * d1, "transform")?;
        let p2 = cur.f64s(d2 * d2, "transform")?;
        Some(TransformPair::new(sigma, DenseMatrix::new(d1, d1, p1)?, DenseMatrix::new(d2, d2, p2)?)?)
    } else {
        None
    };

    let split_thresholds = if flags & FLAG_GROUPING != 0 {
        let k = cur.usize("grouping")?;
        Some(cur.f64s(k, "grouping")?)
    } else {
        None
    };
    cur.finish()?;

    let layer = QuantizedLayer {
        n,
        m,
        v,
        codebook,
        indices,
        alpha,
        mu,
        overlay,
        transform,
        split_thresholds,
    };
    layer.validate()?;
    Ok(layer)
}
