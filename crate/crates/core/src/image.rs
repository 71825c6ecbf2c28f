//! Off-chip memory: element-addressed storage with named tensor regions,
//! and its on-disk form (packed little-endian bytes plus a JSON manifest).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::refmodel::Tensor;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("no tensor named `{0}`")]
    UnknownTensor(String),
    #[error("tensor `{0}` already allocated")]
    Duplicate(String),
    #[error("address {addr} outside memory of {len} elements")]
    OutOfRange { addr: u64, len: u64 },
    #[error("tensor `{name}`: {msg}")]
    Mismatch { name: String, msg: String },
    #[error("image is {found} bytes, manifest needs {needed}")]
    Truncated { needed: usize, found: usize },
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    /// First element address.
    pub addr: u64,
    pub shape: Vec<usize>,
    pub bits: u32,
    pub signed: bool,
}

impl Region {
    pub fn len(&self) -> u64 {
        self.shape.iter().product::<usize>() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, addr: u64) -> bool {
        (self.addr..self.addr + self.len()).contains(&addr)
    }

    fn packed_bytes(&self) -> usize {
        (self.len() * self.bits as u64).div_ceil(8) as usize
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Memory {
    data: Vec<i64>,
    regions: Vec<Region>,
}

impl Memory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> u64 {
        self.data.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    /// Appends a zero-filled region and returns its address.
    pub fn allocate(&mut self, name: &str, shape: Vec<usize>, bits: u32, signed: bool) -> Result<u64, ImageError> {
        if self.region(name).is_some() {
            return Err(ImageError::Duplicate(name.to_string()));
        }
        let addr = self.len();
        let region = Region {
            name: name.to_string(),
            addr,
            shape,
            bits,
            signed,
        };
        self.data.resize((addr + region.len()) as usize, 0);
        self.regions.push(region);
        Ok(addr)
    }

    pub fn region(&self, name: &str) -> Option<&Region> {
        self.regions.iter().find(|r| r.name == name)
    }

    pub fn region_at(&self, addr: u64) -> Option<&Region> {
        self.regions.iter().find(|r| r.contains(addr))
    }

    pub fn load(&self, addr: u64) -> Result<i64, ImageError> {
        self.data.get(addr as usize).copied().ok_or(ImageError::OutOfRange { addr, len: self.len() })
    }

    pub fn store(&mut self, addr: u64, value: i64) -> Result<(), ImageError> {
        let len = self.len();
        let slot = self.data.get_mut(addr as usize).ok_or(ImageError::OutOfRange { addr, len })?;
        *slot = value;
        Ok(())
    }

    pub fn read_tensor(&self, name: &str) -> Result<Tensor, ImageError> {
        let r = self.region(name).ok_or_else(|| ImageError::UnknownTensor(name.to_string()))?;
        let data = self.data[r.addr as usize..(r.addr + r.len()) as usize].to_vec();
        Ok(Tensor {
            shape: r.shape.clone(),
            bits: r.bits,
            signed: r.signed,
            data,
        })
    }

    pub fn write_tensor(&mut self, name: &str, t: &Tensor) -> Result<(), ImageError> {
        let r = self.region(name).ok_or_else(|| ImageError::UnknownTensor(name.to_string()))?;
        if r.shape != t.shape {
            return Err(ImageError::Mismatch {
                name: name.to_string(),
                msg: format!("shape {:?} written to region of shape {:?}", t.shape, r.shape),
            });
        }
        let at = r.addr as usize;
        self.data[at..at + t.data.len()].copy_from_slice(&t.data);
        Ok(())
    }

    /// Packs every region at its own bitwidth, byte-aligned, in allocation
    /// order.
    pub fn to_image(&self) -> (Vec<u8>, Manifest) {
        let mut bytes = Vec::new();
        let mut entries = Vec::new();
        for r in &self.regions {
            entries.push(ManifestEntry {
                offset: bytes.len(),
                region: r.clone(),
            });
            let vals = &self.data[r.addr as usize..(r.addr + r.len()) as usize];
            bytes.extend(pack(vals, r.bits));
        }
        (bytes, Manifest { tensors: entries })
    }

    pub fn from_image(bytes: &[u8], manifest: &Manifest) -> Result<Self, ImageError> {
        let mut mem = Memory::new();
        for e in &manifest.tensors {
            let r = &e.region;
            let needed = e.offset + r.packed_bytes();
            if bytes.len() < needed {
                return Err(ImageError::Truncated {
                    needed,
                    found: bytes.len(),
                });
            }
            let end = r.addr + r.len();
            if end > mem.len() {
                mem.data.resize(end as usize, 0);
            }
            let vals = unpack(&bytes[e.offset..needed], r.bits, r.signed, r.len() as usize);
            mem.data[r.addr as usize..end as usize].copy_from_slice(&vals);
            mem.regions.push(r.clone());
        }
        Ok(mem)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Byte offset of the packed data in the image file.
    pub offset: usize,
    #[serde(flatten)]
    pub region: Region,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tensors: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ImageError> {
        Ok(serde_json::from_str(text)?)
    }
}

fn pack(vals: &[i64], bits: u32) -> Vec<u8> {
    let mut out = vec![0u8; (vals.len() as u64 * bits as u64).div_ceil(8) as usize];
    let mask = if bits >= 64 { u64::MAX } else { (1u64 << bits) - 1 };
    for (i, &v) in vals.iter().enumerate() {
        let v = v as u64 & mask;
        let start = i as u64 * bits as u64;
        for b in 0..bits as u64 {
            if v >> b & 1 == 1 {
                let at = start + b;
                out[(at / 8) as usize] |= 1 << (at % 8);
            }
        }
    }
    out
}

fn unpack(bytes: &[u8], bits: u32, signed: bool, count: usize) -> Vec<i64> {
    (0..count)
        .map(|i| {
            let start = i as u64 * bits as u64;
            let mut v = 0u64;
            for b in 0..bits as u64 {
                let at = start + b;
                v |= ((bytes[(at / 8) as usize] >> (at % 8)) as u64 & 1) << b;
            }
            if signed && bits < 64 && v >> (bits - 1) & 1 == 1 {
                (v | !((1u64 << bits) - 1)) as i64
            } else {
                v as i64
            }
        })
        .collect()
}
