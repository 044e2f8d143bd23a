//! Checkpoint files: a named table of `f32` tensors.
//!
//! Layout (little-endian): magic `PSCN-CKP`, `u32` version, `u32` entry
//! count, then per entry `u32` name length, UTF-8 name, `u32` rank, `u32`
//! extents, `f32` payload. `f64` scalars are stored bit-exactly as two
//! `f32` words holding the high and low halves of the bit pattern.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use pscan_tensor::Tensor;

use super::params::ParamSet;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PSCN-CKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Tensor<f32>)>,
}

fn split_f64(x: f64) -> [f32; 2] {
    let bits = x.to_bits();
    [f32::from_bits((bits >> 32) as u32), f32::from_bits(bits as u32)]
}

fn join_f64(w: &[f32]) -> f64 {
    f64::from_bits(((w[0].to_bits() as u64) << 32) | w[1].to_bits() as u64)
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[(String, Tensor<f32>)] {
        &self.entries
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<f32>) {
        let name = name.into();
        match self.entries.iter_mut().find(|e| e.0 == name) {
            Some(e) => e.1 = value,
            None => self.entries.push((name, value)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.iter().find(|e| e.0 == name).map(|e| &e.1)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<f32>> {
        self.get(name).ok_or_else(|| Error::Data(format!("checkpoint entry `{name}` missing")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    /// Stores `f64` values bit-exactly.
    pub fn put_f64s(&mut self, name: impl Into<String>, values: &[f64]) {
        let data: Vec<f32> = values.iter().flat_map(|&v| split_f64(v)).collect();
        let n = data.len();
        self.insert(name, Tensor::new(vec![n], data).expect("flat"));
    }

    pub fn f64s(&self, name: &str) -> Result<Vec<f64>> {
        let t = self.require(name)?;
        if t.numel() % 2 != 0 {
            return Err(Error::Data(format!("checkpoint entry `{name}` is not an f64 array")));
        }
        Ok(t.data().chunks(2).map(join_f64).collect())
    }

    pub fn put_f64(&mut self, name: impl Into<String>, value: f64) {
        self.put_f64s(name, &[value]);
    }

    pub fn f64(&self, name: &str) -> Result<f64> {
        self.f64s(name)?.first().copied().ok_or_else(|| Error::Data(format!("checkpoint entry `{name}` is empty")))
    }

    pub fn put_params(&mut self, prefix: &str, params: &ParamSet<f32>) {
        for (name, value) in params.names().iter().zip(params.values()) {
            self.insert(format!("{prefix}/{name}"), value.clone());
        }
    }

    /// Fills `params` from entries under `prefix`, checking names and shapes.
    pub fn load_params(&self, prefix: &str, params: &mut ParamSet<f32>) -> Result<()> {
        let mut src = ParamSet::new();
        for name in params.names() {
            src.push(name.clone(), self.require(&format!("{prefix}/{name}"))?.clone());
        }
        params.load_from(&src)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, t) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &e in t.shape() {
                w.write_all(&(e as u32).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bad = |detail: &str| Error::Format { path: path.to_path_buf(), detail: detail.to_string() };
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let word = |r: &mut BufReader<File>| -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| bad("truncated file"))?;
            Ok(u32::from_le_bytes(b))
        };
        let version = word(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let count = word(&mut r)?;
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = word(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(|_| bad("truncated name"))?;
            let name = String::from_utf8(name).map_err(|_| bad("entry name is not UTF-8"))?;
            let rank = word(&mut r)? as usize;
            let shape = (0..rank).map(|_| word(&mut r).map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut bytes = vec![0u8; n * 4];
            r.read_exact(&mut bytes).map_err(|_| bad("truncated payload"))?;
            let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            entries.push((name, Tensor::new(shape, data).map_err(|_| bad("inconsistent extents"))?));
        }
        Ok(Self { entries })
    }
}
