use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};

/// Magic bytes opening a packed sample file.
pub const PACKED_MAGIC: [u8; 4] = *b"NOSB";

/// `N × m` binary observations, bit-packed 64 symptoms per word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleBatch {
    m: usize,
    words: usize,
    n_rows: usize,
    bits: Vec<u64>,
}

impl SampleBatch {
    pub fn new(m: usize) -> Self {
        Self::with_capacity(m, 0)
    }

    pub fn with_capacity(m: usize, rows: usize) -> Self {
        let words = m.div_ceil(64);
        SampleBatch { m, words, n_rows: 0, bits: Vec::with_capacity(words * rows) }
    }

    /// Builds a batch from dense 0/1 rows.
    pub fn from_rows<R: AsRef<[u8]>>(m: usize, rows: impl IntoIterator<Item = R>) -> Result<Self> {
        let mut batch = Self::new(m);
        for row in rows {
            batch.push_row(row.as_ref())?;
        }
        Ok(batch)
    }

    pub fn n_symptoms(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.n_rows
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows == 0
    }

    /// Packed words of row `r`; bit `j % 64` of word `j / 64` is symptom `j`.
    pub fn row(&self, r: usize) -> &[u64] {
        &self.bits[r * self.words..(r + 1) * self.words]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> + '_ {
        (0..self.n_rows).map(|r| self.row(r))
    }

    pub fn get(&self, r: usize, j: usize) -> bool {
        self.row(r)[j / 64] >> (j % 64) & 1 == 1
    }

    pub(crate) fn push_zero_row(&mut self) -> &mut [u64] {
        let start = self.bits.len();
        self.bits.resize(start + self.words, 0);
        self.n_rows += 1;
        &mut self.bits[start..]
    }

    /// Appends a dense row of 0/1 values.
    pub fn push_row(&mut self, row: &[u8]) -> Result<()> {
        if row.len() != self.m {
            return Err(Error::RowWidth { expected: self.m, got: row.len() });
        }
        if let Some(bad) = row.iter().find(|&&x| x > 1) {
            return Err(Error::Format(format!("sample value {bad} is not 0/1")));
        }
        let words = self.push_zero_row();
        for (j, &x) in row.iter().enumerate() {
            words[j / 64] |= (x as u64) << (j % 64);
        }
        Ok(())
    }

    /// Appends an already packed row.
    pub fn push_packed(&mut self, words: &[u64]) -> Result<()> {
        if words.len() != self.words {
            return Err(Error::RowWidth { expected: self.m, got: words.len() * 64 });
        }
        self.bits.extend_from_slice(words);
        self.n_rows += 1;
        Ok(())
    }

    /// Copy of rows `range`.
    pub fn slice(&self, range: Range<usize>) -> SampleBatch {
        SampleBatch {
            m: self.m,
            words: self.words,
            n_rows: range.len(),
            bits: self.bits[range.start * self.words..range.end * self.words].to_vec(),
        }
    }

    /// Concatenates batches in order.
    pub fn concat(m: usize, parts: impl IntoIterator<Item = SampleBatch>) -> SampleBatch {
        let mut out = SampleBatch::new(m);
        for part in parts {
            assert_eq!(part.m, m, "symptom count mismatch");
            out.n_rows += part.n_rows;
            out.bits.extend_from_slice(&part.bits);
        }
        out
    }

    /// CSV with header `s0,...,s{m-1}` and one 0/1 row per sample.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut w = BufWriter::new(w);
        let header: Vec<String> = (0..self.m).map(|j| format!("s{j}")).collect();
        writeln!(w, "{}", header.join(","))?;
        let mut line = String::with_capacity(2 * self.m);
        for r in 0..self.n_rows {
            line.clear();
            for j in 0..self.m {
                if j > 0 {
                    line.push(',');
                }
                line.push(if self.get(r, j) { '1' } else { '0' });
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(r: impl Read) -> Result<SampleBatch> {
        let mut lines = BufReader::new(r).lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty samples file".into()))??;
        let header = header.trim_end();
        let m = if header.is_empty() { 0 } else { header.split(',').count() };
        for (j, name) in header.split(',').enumerate().take(m) {
            if name != format!("s{j}") {
                return Err(Error::Format(format!("unexpected header column {name:?}")));
            }
        }
        let mut batch = SampleBatch::new(m);
        let mut dense = Vec::with_capacity(m);
        for line in lines {
            let line = line?;
            let line = line.trim_end();
            if line.is_empty() && m > 0 {
                continue;
            }
            dense.clear();
            for field in line.split(',').filter(|_| m > 0) {
                dense.push(match field {
                    "0" => 0,
                    "1" => 1,
                    other => return Err(Error::Format(format!("sample value {other:?} is not 0/1"))),
                });
            }
            batch.push_row(&dense)?;
        }
        Ok(batch)
    }

    /// Packed binary: 16-byte header (magic, `m` as u32 LE, `N` as u64 LE),
    /// then `ceil(m / 8)` bytes per row with symptom `8b + k` at bit `k` of
    /// byte `b`.
    pub fn write_packed(&self, w: impl Write) -> Result<()> {
        let mut w = BufWriter::new(w);
        w.write_all(&PACKED_MAGIC)?;
        w.write_all(&(self.m as u32).to_le_bytes())?;
        w.write_all(&(self.n_rows as u64).to_le_bytes())?;
        let row_bytes = self.m.div_ceil(8);
        let mut buf = vec![0u8; row_bytes];
        for row in self.rows() {
            for (b, byte) in buf.iter_mut().enumerate() {
                *byte = (row[b / 8] >> (8 * (b % 8))) as u8;
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_packed(r: impl Read) -> Result<SampleBatch> {
        let mut r = BufReader::new(r);
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if header[..4] != PACKED_MAGIC {
            return Err(Error::Format("bad packed sample magic".into()));
        }
        let m = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let n = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
        let row_bytes = m.div_ceil(8);
        let mut batch = SampleBatch::with_capacity(m, n);
        let mut buf = vec![0u8; row_bytes];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            let words = batch.push_zero_row();
            for (b, &byte) in buf.iter().enumerate() {
                words[b / 8] |= (byte as u64) << (8 * (b % 8));
            }
            if m % 64 != 0 {
                let last = words.len() - 1;
                if words[last] >> (m % 64) != 0 {
                    return Err(Error::Format("padding bits set in packed row".into()));
                }
            }
        }
        Ok(batch)
    }
}

/// Reads a samples file, detecting packed binary by its magic bytes.
pub fn read_samples(path: impl AsRef<Path>) -> Result<SampleBatch> {
    let mut file = File::open(path.as_ref())?;
    let mut magic = [0u8; 4];
    let got = file.read(&mut magic)?;
    let file = File::open(path.as_ref())?;
    if got == 4 && magic == PACKED_MAGIC {
        SampleBatch::read_packed(file)
    } else {
        SampleBatch::read_csv(file)
    }
}
