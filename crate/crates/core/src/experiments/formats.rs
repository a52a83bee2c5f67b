//! Binary file formats. All integers and floats are little-endian; arrays are
//! row-major 32-bit floats.
//!
//! Checkpoint:
//! ```text
//! "SAEL0" | version u32 | input_dim u64 | n_latents u64 | k f64 | step u64
//! | w_enc (h×d) | w_dec (d×h) | b_enc (h) | b_dec (d) | inference_threshold (1)
//! ```
//!
//! Dictionary:
//! ```text
//! "L0DICT" | version u32 | input_dim u64 | n_features u64 | seed u64
//! | magnitude_mean f64 | magnitude_std f64
//! | features (n×d) | probs (n) | correlation (n×n)
//! ```
//!
//! Activation dump:
//! ```text
//! "L0ACTS" | version u32 | rows u64 | cols u64 | data (rows×cols)
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::sae::SaeParams;
use crate::toy_data::FeatureDictionary;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"SAEL0";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const DICTIONARY_MAGIC: &[u8; 6] = b"L0DICT";
pub const DICTIONARY_VERSION: u32 = 1;
pub const ACTIVATIONS_MAGIC: &[u8; 6] = b"L0ACTS";
pub const ACTIVATIONS_VERSION: u32 = 1;

/// Parameters plus the step they were saved at.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: SaeParams<f32>,
    pub step: u64,
}

struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    fn new(magic: &[u8], version: u32) -> Self {
        let mut e = Self { buf: magic.to_vec() };
        e.u32(version);
        e
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f32s<'a>(&mut self, values: impl IntoIterator<Item = &'a f32>) {
        for v in values {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn write(self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&self.buf)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

struct Decoder<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    fn open(path: &'a Path, bytes: &'a [u8], magic: &[u8], version: u32) -> Result<Self> {
        let mut d = Self { path, bytes, pos: 0 };
        if d.take(magic.len())? != magic {
            return Err(Error::format(path, "bad magic string"));
        }
        let found = d.u32()?;
        if found != version {
            return Err(Error::format(
                path,
                format!("unsupported version {found}, expected {version}"),
            ));
        }
        Ok(d)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
            .ok_or_else(|| Error::format(self.path, "truncated file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::format(self.path, format!("dimension {v} too large")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.path, "size overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f32>> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::format(self.path, "size overflow"))?;
        let data = self.f32s(n)?;
        Ok(Array2::from_shape_vec((rows, cols), data).expect("length matches"))
    }

    fn finish(self) -> Result<()> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(Error::format(
                self.path,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ))
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn save_checkpoint(params: &SaeParams<f32>, step: u64, path: &Path) -> Result<()> {
    let mut e = Encoder::new(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
    e.u64(params.input_dim() as u64);
    e.u64(params.n_latents() as u64);
    e.f64(params.k);
    e.u64(step);
    e.f32s(params.w_enc.iter());
    e.f32s(params.w_dec.iter());
    e.f32s(params.b_enc.iter());
    e.f32s(params.b_dec.iter());
    e.f32s([params.inference_threshold].iter());
    e.write(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = read(path)?;
    let mut d = Decoder::open(path, &bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let input_dim = d.usize()?;
    let n_latents = d.usize()?;
    let k = d.f64()?;
    let step = d.u64()?;
    let w_enc = d.matrix(n_latents, input_dim)?;
    let w_dec = d.matrix(input_dim, n_latents)?;
    let b_enc = Array1::from(d.f32s(n_latents)?);
    let b_dec = Array1::from(d.f32s(input_dim)?);
    let inference_threshold = d.f32s(1)?[0];
    d.finish()?;
    Ok(Checkpoint {
        params: SaeParams {
            w_enc,
            w_dec,
            b_enc,
            b_dec,
            k,
            inference_threshold,
        },
        step,
    })
}

pub fn save_dictionary(dict: &FeatureDictionary, path: &Path) -> Result<()> {
    let mut e = Encoder::new(DICTIONARY_MAGIC, DICTIONARY_VERSION);
    e.u64(dict.input_dim() as u64);
    e.u64(dict.n_features() as u64);
    e.u64(dict.seed);
    e.f64(dict.magnitude_mean);
    e.f64(dict.magnitude_std);
    e.f32s(dict.features.iter());
    let probs: Vec<f32> = dict.probs.iter().map(|&p| p as f32).collect();
    e.f32s(probs.iter());
    let corr: Vec<f32> = dict.correlation.iter().map(|&c| c as f32).collect();
    e.f32s(corr.iter());
    e.write(path)
}

pub fn load_dictionary(path: &Path) -> Result<FeatureDictionary> {
    let bytes = read(path)?;
    let mut d = Decoder::open(path, &bytes, DICTIONARY_MAGIC, DICTIONARY_VERSION)?;
    let input_dim = d.usize()?;
    let n = d.usize()?;
    let seed = d.u64()?;
    let magnitude_mean = d.f64()?;
    let magnitude_std = d.f64()?;
    let features = d.matrix(n, input_dim)?;
    let probs = Array1::from_iter(d.f32s(n)?.into_iter().map(f64::from));
    let correlation = d.matrix(n, n)?.mapv(f64::from);
    d.finish()?;
    FeatureDictionary::from_parts(features, probs, correlation, magnitude_mean, magnitude_std, seed)
}

pub fn save_activations(data: &Array2<f32>, path: &Path) -> Result<()> {
    let mut e = Encoder::new(ACTIVATIONS_MAGIC, ACTIVATIONS_VERSION);
    e.u64(data.nrows() as u64);
    e.u64(data.ncols() as u64);
    e.f32s(data.iter());
    e.write(path)
}

pub fn load_activations(path: &Path) -> Result<Array2<f32>> {
    let bytes = read(path)?;
    let mut d = Decoder::open(path, &bytes, ACTIVATIONS_MAGIC, ACTIVATIONS_VERSION)?;
    let rows = d.usize()?;
    let cols = d.usize()?;
    let data = d.matrix(rows, cols)?;
    d.finish()?;
    Ok(data)
}
