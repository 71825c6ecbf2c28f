//! Accelerator configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::array::{ArrayGeometry, ScratchpadKind};

/// Environment variable naming the configuration used when none is given.
pub const ARCH_ENV: &str = "BITFUSION_ARCH";

#[derive(Debug, Error)]
pub enum ArchError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub rows: u32,
    pub cols: u32,
    pub buffer_access_bits: u32,
    /// Capacities in bits. The weight buffer figure is the sum over all
    /// units. Each is the size of one tile slot.
    pub ibuf_bits: u64,
    pub obuf_bits: u64,
    pub wbuf_bits: u64,
    /// Off-chip bits per cycle.
    pub bandwidth: u64,
    /// Cycles before each transfer starts moving data.
    pub latency: u64,
    pub frequency_mhz: f64,
    pub double_buffering: bool,
    pub energy_table: Option<PathBuf>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            rows: 32,
            cols: 16,
            buffer_access_bits: 32,
            ibuf_bits: 32 * 1024 * 8,
            obuf_bits: 16 * 1024 * 8,
            wbuf_bits: 64 * 1024 * 8,
            bandwidth: 128,
            latency: 0,
            frequency_mhz: 500.0,
            double_buffering: true,
            energy_table: None,
        }
    }
}

impl ArchConfig {
    pub fn geometry(&self) -> ArrayGeometry {
        ArrayGeometry {
            buffer_access_bits: self.buffer_access_bits,
            ..ArrayGeometry::new(self.rows, self.cols)
        }
    }

    pub fn capacity_bits(&self, kind: ScratchpadKind) -> u64 {
        match kind {
            ScratchpadKind::Ibuf => self.ibuf_bits,
            ScratchpadKind::Obuf => self.obuf_bits,
            ScratchpadKind::Wbuf => self.wbuf_bits,
        }
    }

    pub fn with_bandwidth(&self, bandwidth: u64) -> Self {
        Self {
            bandwidth,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        self.geometry()
            .validate()
            .map_err(|e| ArchError::Invalid(e.to_string()))?;
        for kind in ScratchpadKind::ALL {
            if self.capacity_bits(kind) == 0 {
                return Err(ArchError::Invalid(format!("{} capacity must be positive", kind.name())));
            }
        }
        if self.bandwidth == 0 {
            return Err(ArchError::Invalid("bandwidth must be positive".into()));
        }
        if !(self.frequency_mhz > 0.0 && self.frequency_mhz.is_finite()) {
            return Err(ArchError::Invalid("frequency must be positive".into()));
        }
        Ok(())
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, ArchError> {
        let cfg: ArchConfig = toml::from_str(text).map_err(|source| ArchError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a configuration file. A relative `energy_table` path is taken
    /// relative to the file's directory.
    pub fn from_file(path: &Path) -> Result<Self, ArchError> {
        let text = std::fs::read_to_string(path).map_err(|source| ArchError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text, path)?;
        if let (Some(table), Some(dir)) = (&cfg.energy_table, path.parent()) {
            if table.is_relative() {
                cfg.energy_table = Some(dir.join(table));
            }
        }
        Ok(cfg)
    }

    /// The file named by `path`, else by `$BITFUSION_ARCH`, else defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, ArchError> {
        match path {
            Some(p) => Self::from_file(p),
            None => match std::env::var_os(ARCH_ENV) {
                Some(p) if !p.is_empty() => Self::from_file(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let a = ArchConfig::default();
        assert_eq!(a.geometry().units(), 512);
        assert_eq!((a.bandwidth, a.frequency_mhz), (128, 500.0));
        a.validate().unwrap();
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let a = ArchConfig::parse("rows = 4\ncols = 2\nbandwidth = 64\n", Path::new("x")).unwrap();
        assert_eq!((a.rows, a.cols, a.bandwidth, a.wbuf_bits), (4, 2, 64, 64 * 1024 * 8));
        assert!(ArchConfig::parse("rows = 0\n", Path::new("x")).is_err());
        assert!(ArchConfig::parse("colour = 1\n", Path::new("x")).is_err());
    }
}
