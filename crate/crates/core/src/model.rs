//! Parameter layout of the whole network and its loaded form.

use serde::{Deserialize, Serialize};

use crate::csdp::{CsdpConfig, CsdpParams};
use crate::error::{Error, Result};
use crate::fspe::{FspeParams, DEFAULT_KERNEL};
use crate::pde::{PeConfig, PeParams};
use crate::weights::{seeded_init, LayerSpec, WeightSet};

/// Everything that determines parameter shapes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub levels: usize,
    pub channels: usize,
    pub kernel_size: usize,
    pub csdp: CsdpConfig,
}

impl ModelSpec {
    pub fn new(levels: usize, channels: usize, csdp: CsdpConfig) -> Self {
        Self { levels, channels, kernel_size: DEFAULT_KERNEL, csdp }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::InvalidParam(format!("a pyramid needs at least 2 levels, got {}", self.levels)));
        }
        if self.channels == 0 {
            return Err(Error::InvalidParam("channel count must be positive".into()));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::InvalidParam(format!("filter kernel must be odd, got {}", self.kernel_size)));
        }
        self.csdp.validate()
    }

    /// The embedding mixer is only part of the model when the channel count
    /// admits a sine embedding.
    pub fn has_pe(&self) -> bool {
        self.channels % 6 == 0
    }

    pub fn geometry(&self) -> Vec<LayerSpec> {
        let mut g = FspeParams::geometry(self.levels, self.channels, self.kernel_size);
        g.extend(CsdpParams::geometry(self.levels, self.channels, &self.csdp));
        if self.has_pe() {
            g.extend(PeParams::geometry(self.channels));
        }
        g
    }

    /// Seeded Xavier init, or all zeros when `zeros` is set.
    pub fn init(&self, seed: u64, zeros: bool) -> Result<WeightSet> {
        self.validate()?;
        if zeros {
            WeightSet::zeros(&self.geometry())
        } else {
            seeded_init(seed, &self.geometry())
        }
    }
}

/// Parameters bound to a [`ModelSpec`].
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub fspe: FspeParams,
    pub csdp: CsdpParams,
    pub pe: Option<PeParams>,
}

impl Model {
    pub fn from_weights(spec: ModelSpec, ws: &WeightSet) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            fspe: FspeParams::from_weights(ws, spec.levels, spec.channels, spec.kernel_size)?,
            csdp: CsdpParams::from_weights(ws, spec.levels, spec.channels, &spec.csdp)?,
            pe: if spec.has_pe() { Some(PeParams::from_weights(ws, spec.channels)?) } else { None },
        })
    }

    pub fn pe_params(&self, cfg: &PeConfig) -> Result<&PeParams> {
        self.pe.as_ref().filter(|_| cfg.channels == self.spec.channels).ok_or_else(|| {
            Error::InvalidParam(format!(
                "embedding channels must equal feature channels ({}) and be a multiple of 6",
                self.spec.channels
            ))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_names_unique_and_loadable() {
        let spec = ModelSpec::new(3, 12, CsdpConfig { num_bins: 16, ..Default::default() });
        let g = spec.geometry();
        let mut names: Vec<&str> = g.iter().map(|l| l.name.as_str()).collect();
        names.sort();
        let n = names.len();
        names.dedup();
        assert_eq!(names.len(), n);
        let ws = spec.init(5, false).unwrap();
        ws.validate(&g).unwrap();
        let m = Model::from_weights(spec, &ws).unwrap();
        assert_eq!(m.csdp.levels.len(), 3);
        assert!(m.pe.is_some());
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(ModelSpec::new(1, 12, CsdpConfig::default()).validate().is_err());
        let mut s = ModelSpec::new(2, 12, CsdpConfig::default());
        s.kernel_size = 4;
        assert!(s.validate().is_err());
        assert!(!ModelSpec::new(2, 10, CsdpConfig::default()).has_pe());
    }
}
