//! 32-bit range coder with byte-wise renormalisation and carry propagation.
//!
//! The encoder keeps a 64-bit `low` so carries out of the 32-bit window can
//! ripple into bytes that were held back (`cache` plus a run of `0xFF`s).
//! The last symbol of every table absorbs the rounding slack of `range >> 16`.
//! Streams are canonical: the leading always-zero byte is dropped, the final
//! value is the one in the last interval with the most trailing zero bits,
//! and trailing zero bytes are trimmed (the decoder reads them back as zero).
//!
//! Checked payloads end with two uniformly coded check bytes (a SHA-256
//! prefix of the symbols and a caller-supplied context). Range-coded payloads
//! are close to bijective, so without them nearly every corrupted stream
//! would decode to some other valid symbol sequence.

use std::sync::OnceLock;

use sha2::{Digest, Sha256};

use crate::coding::cdf::{CdfTable, PRECISION, TOTAL};
use crate::error::{CoreError, Result};

const TOP: u32 = 1 << 24;
pub const CHECK_BYTES: usize = 2;

fn byte_table() -> &'static CdfTable {
    static TABLE: OnceLock<CdfTable> = OnceLock::new();
    TABLE.get_or_init(|| CdfTable::from_cdf((0..=256).map(|i| i * 256).collect(), 0).expect("uniform table"))
}

fn check_value(context: &[i32], symbols: &[i32]) -> [u8; CHECK_BYTES] {
    let mut h = Sha256::new();
    h.update(b"rdp-payload-check");
    for s in context.iter().chain(symbols) {
        h.update(s.to_le_bytes());
    }
    h.finalize()[..CHECK_BYTES].try_into().unwrap()
}

struct Encoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Encoder {
    fn new() -> Self {
        Encoder {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    fn encode(&mut self, start: u32, size: u32) {
        let r = self.range >> PRECISION;
        self.low += u64::from(r) * u64::from(start);
        if start + size == TOTAL {
            self.range -= r * start;
        } else {
            self.range = r * size;
        }
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn finish(mut self) -> Vec<u8> {
        let end = self.low + u64::from(self.range);
        for k in (0..=32).rev() {
            let mask = (1u64 << k) - 1;
            let v = (self.low + mask) & !mask;
            if v < end {
                self.low = v;
                break;
            }
        }
        for _ in 0..5 {
            self.shift_low();
        }
        let mut out = self.out;
        debug_assert_eq!(out.first(), Some(&0));
        out.remove(0);
        while out.last() == Some(&0) {
            out.pop();
        }
        out
    }
}

/// Range-codes `symbols[i]` under `tables[i]`; symbols are clamped to their
/// table's support first.
pub fn encode_symbols(symbols: &[i32], tables: &[CdfTable]) -> Result<Vec<u8>> {
    encode_inner(symbols, tables, None)
}

/// Like [`encode_symbols`], followed by check bytes over `context` and the
/// coded symbols.
pub fn encode_checked(symbols: &[i32], tables: &[CdfTable], context: &[i32]) -> Result<Vec<u8>> {
    encode_inner(symbols, tables, Some(context))
}

/// The value actually coded for `symbol` after clamping.
fn coded_value(symbol: i32, table: &CdfTable) -> i32 {
    let idx = table.index(symbol);
    match table.escape_table(idx) {
        Some(t) => t.offset() + t.index(symbol) as i32,
        None => table.offset() + idx as i32,
    }
}

fn encode_inner(symbols: &[i32], tables: &[CdfTable], check: Option<&[i32]>) -> Result<Vec<u8>> {
    if symbols.len() != tables.len() {
        return Err(CoreError::InvalidArgument(format!("{} symbols but {} tables", symbols.len(), tables.len())));
    }
    let mut enc = Encoder::new();
    let mut coded = Vec::with_capacity(symbols.len());
    for (&symbol, table) in symbols.iter().zip(tables) {
        coded.push(coded_value(symbol, table));
        let idx = table.index(symbol);
        let cdf = table.cdf();
        enc.encode(cdf[idx], cdf[idx + 1] - cdf[idx]);
        if let Some(t) = table.escape_table(idx) {
            let j = t.index(symbol);
            let cdf = t.cdf();
            enc.encode(cdf[j], cdf[j + 1] - cdf[j]);
        }
    }
    if let Some(context) = check {
        for b in check_value(context, &coded) {
            enc.encode(u32::from(b) * 256, 256);
        }
    }
    Ok(enc.finish())
}

struct Decoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> Decoder<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        let mut d = Decoder {
            bytes,
            pos: 0,
            code: 0,
            range: u32::MAX,
        };
        for _ in 0..4 {
            d.code = (d.code << 8) | u32::from(d.next_byte());
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.bytes.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    fn decode(&mut self, table: &CdfTable) -> Result<usize> {
        let r = self.range >> PRECISION;
        let value = (self.code / r).min(TOTAL - 1);
        let idx = table.lookup(value);
        let cdf = table.cdf();
        let (start, end) = (cdf[idx], cdf[idx + 1]);
        self.code -= r * start;
        self.range = if end == TOTAL { self.range - r * start } else { r * (end - start) };
        if self.code >= self.range {
            return Err(CoreError::CorruptStream("code register left the coding interval".into()));
        }
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | u32::from(self.next_byte());
        }
        Ok(idx)
    }
}

/// Decodes `tables.len()` symbols. The stream must be exactly the canonical
/// encoding of the decoded symbols; anything else is reported as corrupt.
pub fn decode_symbols(bytes: &[u8], tables: &[CdfTable]) -> Result<Vec<i32>> {
    decode_inner(bytes, tables, None)
}

/// Inverse of [`encode_checked`]; a check mismatch is reported as corrupt.
pub fn decode_checked(bytes: &[u8], tables: &[CdfTable], context: &[i32]) -> Result<Vec<i32>> {
    decode_inner(bytes, tables, Some(context))
}

fn decode_inner(bytes: &[u8], tables: &[CdfTable], check: Option<&[i32]>) -> Result<Vec<i32>> {
    if bytes.last() == Some(&0) {
        return Err(CoreError::CorruptStream("trailing zero byte".into()));
    }
    let mut dec = Decoder::new(bytes);
    let mut symbols = Vec::with_capacity(tables.len());
    for table in tables {
        let idx = dec.decode(table)?;
        let symbol = match table.escape_table(idx) {
            Some(t) => t.offset() + dec.decode(&t)? as i32,
            None => table.offset() + idx as i32,
        };
        symbols.push(symbol);
    }
    if let Some(context) = check {
        let mut found = [0u8; CHECK_BYTES];
        for b in found.iter_mut() {
            *b = dec.decode(byte_table())? as u8;
        }
        if found != check_value(context, &symbols) {
            return Err(CoreError::CorruptStream("payload check mismatch".into()));
        }
    }
    if dec.pos < bytes.len() {
        return Err(CoreError::CorruptStream(format!(
            "{} unread payload bytes",
            bytes.len() - dec.pos
        )));
    }
    if encode_inner(&symbols, tables, check)? != bytes {
        return Err(CoreError::CorruptStream("payload is not the canonical encoding".into()));
    }
    Ok(symbols)
}

/// Ideal code length in bits of `symbols` under the quantised tables,
/// excluding any check bytes.
pub fn ideal_bits(symbols: &[i32], tables: &[CdfTable]) -> f64 {
    symbols.iter().zip(tables).map(|(&s, t)| t.bits(s)).sum()
}
