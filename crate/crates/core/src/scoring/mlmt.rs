//! `MLMT` logit-table files.
//!
//! Little-endian layout: the magic bytes `MLMT`, `u32` version (1), `u32`
//! vocabulary size, `u32` entity width, then records of a `u64` query id
//! followed by `l_max * vocab_size` `f32` values, row-major by position.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LogitTable;
use crate::error::{Error, Result};
use crate::kg::Triple;
use crate::prompt::{Direction, Query};

pub const MAGIC: [u8; 4] = *b"MLMT";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 16;

pub struct MlmtWriter<W: Write> {
    inner: W,
    l_max: usize,
    vocab_size: usize,
    buf: Vec<u8>,
}

impl<W: Write> MlmtWriter<W> {
    pub fn new(mut inner: W, l_max: usize, vocab_size: usize) -> std::io::Result<Self> {
        let dim = |x: usize| {
            u32::try_from(x)
                .map_err(|_| std::io::Error::new(ErrorKind::InvalidInput, "dimension exceeds u32"))
        };
        let mut header = Vec::with_capacity(HEADER_LEN as usize);
        header.extend_from_slice(&MAGIC);
        header.extend_from_slice(&VERSION.to_le_bytes());
        header.extend_from_slice(&dim(vocab_size)?.to_le_bytes());
        header.extend_from_slice(&dim(l_max)?.to_le_bytes());
        inner.write_all(&header)?;
        Ok(MlmtWriter {
            inner,
            l_max,
            vocab_size,
            buf: Vec::new(),
        })
    }

    pub fn write_table(&mut self, table: &LogitTable) -> Result<()> {
        if table.l_max() != self.l_max || table.vocab_size() != self.vocab_size {
            return Err(Error::DimensionMismatch {
                expected_l_max: self.l_max,
                expected_vocab: self.vocab_size,
                found_l_max: table.l_max(),
                found_vocab: table.vocab_size(),
            });
        }
        self.buf.clear();
        self.buf.extend_from_slice(&table.query_id.to_le_bytes());
        for v in table.values() {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
        self.inner
            .write_all(&self.buf)
            .map_err(|e| Error::io("<mlmt writer>", e))
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Streams tables from an `MLMT` source in file order.
pub struct MlmtReader<R: Read> {
    inner: R,
    l_max: usize,
    vocab_size: usize,
    offset: u64,
    expected: Option<(usize, usize)>,
    done: bool,
    buf: Vec<u8>,
}

/// Reads until `buf` is full or EOF; returns the byte count read.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

fn format_err(offset: u64, msg: impl Into<String>) -> Error {
    Error::Format {
        offset,
        msg: msg.into(),
    }
}

impl<R: Read> MlmtReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN as usize];
        let n = read_full(&mut inner, &mut header).map_err(|e| format_err(0, e.to_string()))?;
        if n >= 4 && header[..4] != MAGIC {
            return Err(format_err(0, format!("bad magic {:?}", &header[..4])));
        }
        if n < header.len() {
            return Err(format_err(n as u64, "truncated header"));
        }
        let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().expect("4 bytes"));
        let version = word(4);
        if version != VERSION {
            return Err(format_err(4, format!("unsupported version {version}")));
        }
        let vocab_size = word(8) as usize;
        let l_max = word(12) as usize;
        if vocab_size == 0 || l_max == 0 {
            return Err(format_err(
                8,
                format!("empty table shape {l_max} x {vocab_size}"),
            ));
        }
        Ok(MlmtReader {
            inner,
            l_max,
            vocab_size,
            offset: HEADER_LEN,
            expected: None,
            done: false,
            buf: Vec::new(),
        })
    }

    /// Makes the first record fail with a dimension error unless the header
    /// matches these dimensions.
    pub fn expect_dims(mut self, l_max: usize, vocab_size: usize) -> Self {
        self.expected = Some((l_max, vocab_size));
        self
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_table(&mut self) -> Result<Option<LogitTable>> {
        if let Some((l_max, vocab)) = self.expected {
            if (l_max, vocab) != (self.l_max, self.vocab_size) {
                return Err(Error::DimensionMismatch {
                    expected_l_max: l_max,
                    expected_vocab: vocab,
                    found_l_max: self.l_max,
                    found_vocab: self.vocab_size,
                });
            }
        }
        let start = self.offset;
        let mut id = [0u8; 8];
        let n =
            read_full(&mut self.inner, &mut id).map_err(|e| format_err(start, e.to_string()))?;
        if n == 0 {
            return Ok(None);
        }
        if n < 8 {
            return Err(format_err(start + n as u64, "truncated record header"));
        }
        let query_id = u64::from_le_bytes(id);
        let count = self.l_max * self.vocab_size;
        self.buf.resize(count * 4, 0);
        let body = start + 8;
        let n = read_full(&mut self.inner, &mut self.buf)
            .map_err(|e| format_err(body, e.to_string()))?;
        if n < self.buf.len() {
            return Err(format_err(
                body + n as u64,
                format!(
                    "truncated record for query {query_id}: {n} of {} bytes",
                    self.buf.len()
                ),
            ));
        }
        let mut values = Vec::with_capacity(count);
        for (i, c) in self.buf.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(format_err(
                    body + 4 * i as u64,
                    format!("non-finite logit for query {query_id}"),
                ));
            }
            values.push(v);
        }
        self.offset = body + self.buf.len() as u64;
        Ok(Some(LogitTable {
            query_id,
            l_max: self.l_max,
            vocab_size: self.vocab_size,
            values,
        }))
    }
}

impl<R: Read> Iterator for MlmtReader<R> {
    type Item = Result<LogitTable>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_table() {
            Ok(Some(t)) => Some(Ok(t)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// Opens an `MLMT` file; with `expected` set, dimensions are checked before
/// the first record is returned.
pub fn load_logit_tables(
    path: &Path,
    expected: Option<(usize, usize)>,
) -> Result<MlmtReader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = MlmtReader::new(BufReader::new(file))?;
    Ok(match expected {
        Some((l, v)) => reader.expect_dims(l, v),
        None => reader,
    })
}

pub fn save_logit_tables(
    path: &Path,
    l_max: usize,
    vocab_size: usize,
    tables: &[LogitTable],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w =
        MlmtWriter::new(BufWriter::new(file), l_max, vocab_size).map_err(|e| Error::io(path, e))?;
    for t in tables {
        w.write_table(t)?;
    }
    w.finish().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub triple: Triple,
    pub direction: Direction,
}

/// Sidecar describing what each table in an `MLMT` file answers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogitManifest {
    pub vocab_size: usize,
    pub l_max: usize,
    /// Keyed by the decimal query id.
    pub queries: BTreeMap<String, ManifestEntry>,
}

impl LogitManifest {
    pub fn new(l_max: usize, vocab_size: usize, queries: &[Query]) -> Self {
        LogitManifest {
            vocab_size,
            l_max,
            queries: queries
                .iter()
                .map(|q| {
                    (
                        q.query_id.to_string(),
                        ManifestEntry {
                            triple: q.triple,
                            direction: q.direction,
                        },
                    )
                })
                .collect(),
        }
    }
}
