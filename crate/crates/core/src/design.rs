//! Design bundles: an accelerator plus one mapping per layer, stored as TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::ArchConfig;
use crate::error::{Error, Result};
use crate::mapping::{Factors, LayerMapping, NUM_LEVELS};
use crate::workload::{LayerShape, Network, NUM_DIMS};

pub const DESIGN_SCHEMA: &str = "oneloop-design/v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignLayer {
    pub shape: LayerShape,
    /// Per-level orderings for levels 1..=3, e.g. `"WS-IS-OS"`.
    pub ordering: String,
    /// `[level][dim]`, levels from registers (0) to DRAM (3), dims in
    /// R S P Q C K N order.
    pub spatial: [[u64; NUM_DIMS]; NUM_LEVELS],
    pub temporal: [[u64; NUM_DIMS]; NUM_LEVELS],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Design {
    pub schema: String,
    /// Model EDP when the bundle was written; informational only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edp: Option<f64>,
    pub arch: ArchConfig,
    pub layers: Vec<DesignLayer>,
}

fn to_u64(grid: &[[f64; NUM_DIMS]; NUM_LEVELS]) -> [[u64; NUM_DIMS]; NUM_LEVELS] {
    grid.map(|row| row.map(|v| v as u64))
}

fn to_f64(grid: &[[u64; NUM_DIMS]; NUM_LEVELS]) -> [[f64; NUM_DIMS]; NUM_LEVELS] {
    grid.map(|row| row.map(|v| v as f64))
}

impl Design {
    pub fn new(arch: ArchConfig, mappings: &[LayerMapping], edp: Option<f64>) -> Self {
        Design {
            schema: DESIGN_SCHEMA.to_string(),
            edp,
            arch,
            layers: mappings
                .iter()
                .map(|m| DesignLayer {
                    shape: m.layer,
                    ordering: m.ordering.to_string(),
                    spatial: to_u64(&m.factors.spatial),
                    temporal: to_u64(&m.factors.temporal),
                })
                .collect(),
        }
    }

    /// Mappings after checking each one is valid for its layer.
    pub fn mappings(&self) -> Result<Vec<LayerMapping>> {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let m = LayerMapping::new(
                    l.shape,
                    Factors {
                        spatial: to_f64(&l.spatial),
                        temporal: to_f64(&l.temporal),
                    },
                    l.ordering.parse()?,
                );
                m.validate()
                    .into_result()
                    .map_err(|e| Error::InvalidMapping(format!("layer {i}: {e}")))?;
                Ok(m)
            })
            .collect()
    }

    /// Valid mappings that match `network` layer for layer and fit the
    /// design's hardware.
    pub fn checked_mappings(&self, network: &Network) -> Result<Vec<LayerMapping>> {
        let mappings = self.mappings()?;
        if mappings.len() != network.len() {
            return Err(Error::Validation(format!(
                "design has {} layers, workload has {}",
                mappings.len(),
                network.len()
            )));
        }
        for (i, (m, nl)) in mappings.iter().zip(network.layers()).enumerate() {
            if m.layer != nl.shape {
                return Err(Error::Validation(format!(
                    "design layer {i} is {}, workload layer is {}",
                    m.layer, nl.shape
                )));
            }
            self.arch.check_fits(m)?;
        }
        Ok(mappings)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let d: Design = toml::from_str(text)?;
        if d.schema != DESIGN_SCHEMA {
            return Err(Error::Config(format!("unsupported design schema `{}`", d.schema)));
        }
        d.arch.template.validate()?;
        Ok(d)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{infer_min_hw, ArchTemplate, KIB};
    use crate::mapping::random_mapping;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> (Network, Vec<LayerMapping>) {
        let net = Network::from_layers(
            "d",
            &[(LayerShape::new([3, 3, 8, 8, 4, 8, 1]), 1), (LayerShape::matmul(16, 8, 8), 2)],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ms = net.layers().iter().map(|l| random_mapping(&l.shape, 128, &mut rng)).collect();
        (net, ms)
    }

    #[test]
    fn toml_round_trip() {
        let (net, ms) = sample();
        let arch = infer_min_hw(&ArchTemplate::default(), &ms).unwrap();
        let d = Design::new(arch, &ms, Some(1.5e9));
        let back = Design::from_toml(&d.to_toml().unwrap()).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.checked_mappings(&net).unwrap(), ms);
    }

    #[test]
    fn capacity_violation_is_reported() {
        let (net, ms) = sample();
        let mut arch = infer_min_hw(&ArchTemplate::default(), &ms).unwrap();
        arch.sp_bytes = KIB;
        arch.acc_bytes = KIB;
        arch.pe_side = 1;
        let d = Design::new(arch, &ms, None);
        let err = d.checked_mappings(&net).unwrap_err();
        assert!(matches!(err, Error::Capacity(_)), "{err}");
    }

    #[test]
    fn invalid_factors_are_reported() {
        let (net, ms) = sample();
        let arch = infer_min_hw(&ArchTemplate::default(), &ms).unwrap();
        let mut d = Design::new(arch, &ms, None);
        d.layers[0].temporal[3][0] += 1;
        let err = d.checked_mappings(&net).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
    }
}
