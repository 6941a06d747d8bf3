//! Append-only binary run records with resume support.
//!
//! Layout (little endian): header `LRPR`, format version `u32`, config hash
//! (32 bytes), seed `u64`, `n_max u64`, `n_k u32`, `n_r u32`; then one record
//! per run: `run_index u64`, status `u8`, `extinct_at u64` (`u64::MAX` for
//! none), `len u32`, `len` counts `u64`, `n_k * len` cosine sums and
//! `n_r * len` moments as `f64`.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::percolation::{RunSeries, RunStatus};

pub const MAGIC: &[u8; 4] = b"LRPR";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: u64 = 4 + 4 + 32 + 8 + 8 + 4 + 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoreHeader {
    pub config_hash: [u8; 32],
    pub seed: u64,
    pub n_max: u64,
    pub n_k: u32,
    pub n_r: u32,
}

impl StoreHeader {
    /// `hash_hex` is the 64-character config hash.
    pub fn new(hash_hex: &str, seed: u64, n_max: u64, n_k: usize, n_r: usize) -> Result<Self> {
        let mut config_hash = [0u8; 32];
        if hash_hex.len() != 64 {
            return Err(Error::Config(format!("bad config hash {hash_hex:?}")));
        }
        for (i, b) in config_hash.iter_mut().enumerate() {
            *b = u8::from_str_radix(&hash_hex[2 * i..2 * i + 2], 16)
                .map_err(|_| Error::Config(format!("bad config hash {hash_hex:?}")))?;
        }
        Ok(StoreHeader { config_hash, seed, n_max, n_k: n_k as u32, n_r: n_r as u32 })
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.n_max.to_le_bytes());
        out.extend_from_slice(&self.n_k.to_le_bytes());
        out.extend_from_slice(&self.n_r.to_le_bytes());
        out
    }

    fn decode(buf: &[u8]) -> Result<Self> {
        if buf.len() < HEADER_LEN as usize || &buf[..4] != MAGIC {
            return Err(Error::Config("run file has no LRPR header".into()));
        }
        let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Config(format!("run file format version {version}, expected {FORMAT_VERSION}")));
        }
        let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
        let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
        Ok(StoreHeader {
            config_hash: buf[8..40].try_into().unwrap(),
            seed: u64_at(40),
            n_max: u64_at(48),
            n_k: u32_at(56),
            n_r: u32_at(60),
        })
    }
}

fn encode_run(run: &RunSeries, out: &mut Vec<u8>) {
    out.extend_from_slice(&run.run_index.to_le_bytes());
    out.push(match run.status {
        RunStatus::Complete => 0,
        RunStatus::Capped => 1,
        RunStatus::Overflow => 2,
    });
    out.extend_from_slice(&run.extinct_at.unwrap_or(u64::MAX).to_le_bytes());
    out.extend_from_slice(&(run.counts.len() as u32).to_le_bytes());
    for c in &run.counts {
        out.extend_from_slice(&c.to_le_bytes());
    }
    for row in run.cos_sums.iter().chain(&run.moments) {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

/// Decodes one record from the front of `buf`; `None` if it is incomplete.
fn decode_run(buf: &[u8], h: &StoreHeader) -> Result<Option<(RunSeries, usize)>> {
    const FIXED: usize = 8 + 1 + 8 + 4;
    if buf.len() < FIXED {
        return Ok(None);
    }
    let run_index = u64::from_le_bytes(buf[0..8].try_into().unwrap());
    let status = match buf[8] {
        0 => RunStatus::Complete,
        1 => RunStatus::Capped,
        2 => RunStatus::Overflow,
        s => return Err(Error::Config(format!("corrupt run record: status byte {s}"))),
    };
    let ext = u64::from_le_bytes(buf[9..17].try_into().unwrap());
    let len = u32::from_le_bytes(buf[17..21].try_into().unwrap()) as usize;
    if len as u64 > h.n_max + 1 {
        return Err(Error::Config(format!("corrupt run record: length {len}")));
    }
    let rows = (h.n_k + h.n_r) as usize;
    let total = FIXED + 8 * len * (1 + rows);
    if buf.len() < total {
        return Ok(None);
    }
    let mut off = FIXED;
    let mut next = || {
        let b: [u8; 8] = buf[off..off + 8].try_into().unwrap();
        off += 8;
        b
    };
    let counts: Vec<u64> = (0..len).map(|_| u64::from_le_bytes(next())).collect();
    let mut row = || (0..len).map(|_| f64::from_le_bytes(next())).collect::<Vec<f64>>();
    let cos_sums: Vec<Vec<f64>> = (0..h.n_k).map(|_| row()).collect();
    let moments: Vec<Vec<f64>> = (0..h.n_r).map(|_| row()).collect();
    let run = RunSeries {
        run_index,
        status,
        extinct_at: (ext != u64::MAX).then_some(ext),
        counts,
        cos_sums,
        moments,
    };
    Ok(Some((run, total)))
}

pub struct RunStore {
    writer: BufWriter<File>,
    buf: Vec<u8>,
}

impl RunStore {
    /// Creates `path` afresh, or with `resume` reopens it and returns the
    /// records already present. A torn trailing record is cut off. A header
    /// that does not match `header` is a config error.
    pub fn open(path: &Path, header: &StoreHeader, resume: bool) -> Result<(RunStore, Vec<RunSeries>)> {
        let mut runs = Vec::new();
        let exists = path.exists();
        let file = if resume && exists {
            let mut f = OpenOptions::new().read(true).write(true).open(path)?;
            let mut data = Vec::new();
            BufReader::new(&mut f).read_to_end(&mut data)?;
            let found = StoreHeader::decode(&data)?;
            if &found != header {
                return Err(Error::Config(format!(
                    "{} was written for a different configuration or seed",
                    path.display()
                )));
            }
            let mut off = HEADER_LEN as usize;
            while let Some((run, used)) = decode_run(&data[off..], header)? {
                runs.push(run);
                off += used;
            }
            f.set_len(off as u64)?;
            f.seek(SeekFrom::End(0))?;
            f
        } else {
            let mut f = File::create(path)?;
            f.write_all(&header.encode())?;
            f
        };
        Ok((RunStore { writer: BufWriter::new(file), buf: Vec::new() }, runs))
    }

    pub fn append(&mut self, run: &RunSeries) -> Result<()> {
        self.buf.clear();
        encode_run(run, &mut self.buf);
        self.writer.write_all(&self.buf)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.writer.flush()?;
        self.writer.get_ref().sync_data()?;
        Ok(())
    }
}

/// Reads every record of a run file.
pub fn read_runs(path: &Path) -> Result<(StoreHeader, Vec<RunSeries>)> {
    let data = std::fs::read(path)?;
    let header = StoreHeader::decode(&data)?;
    let mut off = HEADER_LEN as usize;
    let mut runs = Vec::new();
    while let Some((run, used)) = decode_run(&data[off..], &header)? {
        runs.push(run);
        off += used;
    }
    Ok((header, runs))
}
