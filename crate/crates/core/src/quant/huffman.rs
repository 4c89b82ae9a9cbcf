//! Canonical Huffman coding of quantized integers, used to measure the
//! average storage cost per value.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::intmat::IntMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Code {
    /// Code bits, right-aligned, most significant bit emitted first.
    pub bits: u64,
    pub len: u8,
}

/// Prefix-free canonical code over integer symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeTable {
    codes: BTreeMap<i64, Code>,
    /// Symbols ordered by `(length, symbol)`, i.e. by canonical code.
    ordered: Vec<i64>,
    /// Per length: number of codes, first code value, index into `ordered`.
    count: Vec<u64>,
    first_code: Vec<u64>,
    first_index: Vec<usize>,
}

/// Code lengths from symbol frequencies; a lone symbol gets length 1.
fn code_lengths(freqs: &BTreeMap<i64, u64>) -> Vec<(i64, u32)> {
    let symbols: Vec<i64> = freqs.keys().copied().collect();
    if symbols.len() == 1 {
        return vec![(symbols[0], 1)];
    }
    // Leaves are nodes 0..n, internal nodes follow; ids break weight ties.
    let n = symbols.len();
    let mut parent = vec![usize::MAX; 2 * n - 1];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = symbols
        .iter()
        .enumerate()
        .map(|(i, s)| Reverse((freqs[s], i)))
        .collect();
    let mut next = n;
    while heap.len() > 1 {
        let Reverse((w1, x)) = heap.pop().unwrap();
        let Reverse((w2, y)) = heap.pop().unwrap();
        parent[x] = next;
        parent[y] = next;
        heap.push(Reverse((w1 + w2, next)));
        next += 1;
    }
    (0..n)
        .map(|leaf| {
            let mut depth = 0;
            let mut node = leaf;
            while parent[node] != usize::MAX {
                node = parent[node];
                depth += 1;
            }
            (symbols[leaf], depth)
        })
        .collect()
}

impl CodeTable {
    /// Builds the canonical code for the given symbol frequencies.
    pub fn from_frequencies(freqs: &BTreeMap<i64, u64>) -> Result<Self> {
        if freqs.is_empty() {
            return Err(Error::EmptyMatrix);
        }
        let mut lengths = code_lengths(freqs);
        let max_len = lengths.iter().map(|&(_, l)| l).max().unwrap_or(1);
        if max_len > 64 {
            return Err(Error::Overflow("huffman code length"));
        }
        lengths.sort_by_key(|&(sym, len)| (len, sym));

        let mut codes = BTreeMap::new();
        let mut count = vec![0u64; max_len as usize + 1];
        let mut first_code = vec![0u64; max_len as usize + 1];
        let mut first_index = vec![0usize; max_len as usize + 1];
        let mut code = 0u64;
        let mut prev_len = 0u32;
        for (idx, &(sym, len)) in lengths.iter().enumerate() {
            if len != prev_len {
                code <<= len - prev_len;
                first_code[len as usize] = code;
                first_index[len as usize] = idx;
                prev_len = len;
            }
            codes.insert(
                sym,
                Code {
                    bits: code,
                    len: len as u8,
                },
            );
            count[len as usize] += 1;
            code = code.wrapping_add(1);
        }
        Ok(Self {
            codes,
            ordered: lengths.into_iter().map(|(s, _)| s).collect(),
            count,
            first_code,
            first_index,
        })
    }

    pub fn code(&self, symbol: i64) -> Option<Code> {
        self.codes.get(&symbol).copied()
    }

    pub fn codes(&self) -> &BTreeMap<i64, Code> {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn encode(&self, values: &[i64]) -> Result<EncodedStream> {
        let mut out = EncodedStream::default();
        for &v in values {
            let code = self.code(v).ok_or(Error::UnknownSymbol(v))?;
            for k in (0..code.len).rev() {
                out.push_bit((code.bits >> k) & 1 == 1);
            }
            out.symbols += 1;
        }
        Ok(out)
    }

    pub fn decode(&self, stream: &EncodedStream) -> Result<Vec<i64>> {
        let mut out = Vec::with_capacity(stream.symbols);
        let mut pos = 0u64;
        while out.len() < stream.symbols {
            let mut code = 0u64;
            let mut len = 0usize;
            loop {
                if pos >= stream.bit_len || len + 1 >= self.count.len() {
                    return Err(Error::CorruptStream(pos));
                }
                code = (code << 1) | stream.bit(pos) as u64;
                pos += 1;
                len += 1;
                let offset = code.wrapping_sub(self.first_code[len]);
                if self.count[len] > 0 && code >= self.first_code[len] && offset < self.count[len] {
                    out.push(self.ordered[self.first_index[len] + offset as usize]);
                    break;
                }
            }
        }
        Ok(out)
    }
}

/// MSB-first packed bit stream.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EncodedStream {
    pub bytes: Vec<u8>,
    pub bit_len: u64,
    pub symbols: usize,
}

impl EncodedStream {
    fn push_bit(&mut self, bit: bool) {
        if self.bit_len.is_multiple_of(8) {
            self.bytes.push(0);
        }
        if bit {
            let last = self.bytes.last_mut().unwrap();
            *last |= 0x80 >> (self.bit_len % 8);
        }
        self.bit_len += 1;
    }

    fn bit(&self, pos: u64) -> bool {
        self.bytes[(pos / 8) as usize] & (0x80 >> (pos % 8)) != 0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HuffmanStats {
    #[serde(skip)]
    pub table: CodeTable,
    pub total: usize,
    pub distinct: usize,
    /// `Σ freq(sym)·len(code(sym)) / N`.
    pub average_bits: f64,
    /// `ceil(log2(distinct))`, the cost of a plain fixed-width code.
    pub fixed_width_bits: u32,
    pub encoded_bits: u64,
}

/// Builds a canonical Huffman code over the entries of `q` and reports the
/// average number of bits per value.
pub fn huffman_stats(q: &IntMatrix) -> Result<HuffmanStats> {
    if q.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let mut freqs: BTreeMap<i64, u64> = BTreeMap::new();
    for &v in q.data() {
        *freqs.entry(v).or_default() += 1;
    }
    let table = CodeTable::from_frequencies(&freqs)?;
    let encoded_bits: u64 = freqs
        .iter()
        .map(|(s, &f)| f * table.codes[s].len as u64)
        .sum();
    let distinct = freqs.len();
    let fixed_width_bits = (usize::BITS - (distinct - 1).leading_zeros()).max(1);
    Ok(HuffmanStats {
        total: q.data().len(),
        distinct,
        average_bits: encoded_bits as f64 / q.data().len() as f64,
        fixed_width_bits,
        encoded_bits,
        table,
    })
}
