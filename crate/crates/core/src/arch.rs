//! Accelerator template and minimal-hardware inference.
//!
//! The template is a square weight-stationary PE array with per-PE registers
//! (level 0), an accumulator (level 1), a scratchpad (level 2) and DRAM
//! (level 3). Hardware is never searched directly: it is the parameter-wise
//! maximum of what a set of mappings needs.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradient::Scalar;
use crate::mapping::{Factors, LayerMapping, DRAM, NUM_LEVELS};
use crate::workload::{Dim, LayerShape, Tensor, NUM_TENSORS};

pub const LEVEL_NAMES: [&str; NUM_LEVELS] = ["registers", "accumulator", "scratchpad", "dram"];

pub const KIB: u64 = 1024;

/// Which tensors each memory level stores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BypassRepr", into = "BypassRepr")]
pub struct BypassMatrix {
    stored: [[bool; NUM_TENSORS]; NUM_LEVELS],
}

#[derive(Serialize, Deserialize)]
struct BypassRepr {
    registers: Vec<Tensor>,
    accumulator: Vec<Tensor>,
    scratchpad: Vec<Tensor>,
    dram: Vec<Tensor>,
}

impl From<BypassMatrix> for BypassRepr {
    fn from(b: BypassMatrix) -> Self {
        let level = |i: usize| Tensor::ALL.into_iter().filter(|t| b.holds(i, *t)).collect();
        BypassRepr {
            registers: level(0),
            accumulator: level(1),
            scratchpad: level(2),
            dram: level(3),
        }
    }
}

impl TryFrom<BypassRepr> for BypassMatrix {
    type Error = Error;
    fn try_from(r: BypassRepr) -> Result<Self> {
        let mut stored = [[false; NUM_TENSORS]; NUM_LEVELS];
        for (i, level) in [r.registers, r.accumulator, r.scratchpad, r.dram].iter().enumerate() {
            for t in level {
                stored[i][t.index()] = true;
            }
        }
        BypassMatrix::new(stored)
    }
}

impl Default for BypassMatrix {
    fn default() -> Self {
        BypassMatrix {
            stored: [
                [true, false, false],
                [false, false, true],
                [true, true, false],
                [true, true, true],
            ],
        }
    }
}

impl BypassMatrix {
    /// Rejects matrices where some tensor is missing from DRAM.
    pub fn new(stored: [[bool; NUM_TENSORS]; NUM_LEVELS]) -> Result<Self> {
        if stored[DRAM].iter().any(|s| !s) {
            return Err(Error::Config("every tensor must be stored in DRAM".into()));
        }
        Ok(BypassMatrix { stored })
    }

    pub fn holds(&self, level: usize, t: Tensor) -> bool {
        self.stored[level][t.index()]
    }

    pub fn innermost(&self, t: Tensor) -> usize {
        (0..NUM_LEVELS)
            .find(|&i| self.holds(i, t))
            .expect("DRAM holds every tensor")
    }

    /// Closest level below `level` that stores `t`.
    pub fn next_inner(&self, level: usize, t: Tensor) -> Option<usize> {
        (0..level).rev().find(|&i| self.holds(i, t))
    }
}

/// Unit in which capacities enter the capacity-dependent EPA formulas.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CapacityUnit {
    #[default]
    Words,
    Kib,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpaParams {
    pub pe: f64,
    pub registers: f64,
    pub accumulator_base: f64,
    pub accumulator_slope: f64,
    pub scratchpad_base: f64,
    pub scratchpad_slope: f64,
    pub dram: f64,
}

impl Default for EpaParams {
    fn default() -> Self {
        EpaParams {
            pe: 0.561,
            registers: 0.487,
            accumulator_base: 1.94,
            accumulator_slope: 0.1005,
            scratchpad_base: 0.49,
            scratchpad_slope: 0.025,
            dram: 100.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WordBytes {
    pub registers: u64,
    pub accumulator: u64,
    pub scratchpad: u64,
    pub dram: u64,
}

impl Default for WordBytes {
    fn default() -> Self {
        WordBytes {
            registers: 1,
            accumulator: 4,
            scratchpad: 1,
            dram: 1,
        }
    }
}

impl WordBytes {
    pub fn at(&self, level: usize) -> u64 {
        [self.registers, self.accumulator, self.scratchpad, self.dram][level]
    }
}

/// Fixed parameters of the accelerator family, loaded from a TOML file.
///
/// ```toml
/// pe_side_cap = 128
/// dram_bandwidth = 8.0
/// capacity_unit = "words"
///
/// [word_bytes]
/// accumulator = 4
///
/// [epa]
/// dram = 100.0
///
/// [bypass]
/// registers = ["W"]
/// accumulator = ["O"]
/// scratchpad = ["W", "I"]
/// dram = ["W", "I", "O"]
/// ```
///
/// Missing keys take their defaults.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchTemplate {
    pub pe_side_cap: u64,
    pub dram_bandwidth: f64,
    pub capacity_unit: CapacityUnit,
    pub word_bytes: WordBytes,
    pub epa: EpaParams,
    pub bypass: BypassMatrix,
}

impl Default for ArchTemplate {
    fn default() -> Self {
        ArchTemplate {
            pe_side_cap: 128,
            dram_bandwidth: 8.0,
            capacity_unit: CapacityUnit::Words,
            word_bytes: WordBytes::default(),
            epa: EpaParams::default(),
            bypass: BypassMatrix::default(),
        }
    }
}

impl ArchTemplate {
    pub fn from_toml(text: &str) -> Result<Self> {
        let t: ArchTemplate = toml::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pe_side_cap == 0 {
            return Err(Error::Config("pe_side_cap must be >= 1".into()));
        }
        if !(self.dram_bandwidth > 0.0) {
            return Err(Error::Config("dram_bandwidth must be positive".into()));
        }
        if (0..NUM_LEVELS).any(|i| self.word_bytes.at(i) == 0) {
            return Err(Error::Config("word sizes must be >= 1 byte".into()));
        }
        Ok(())
    }

    fn unit_scale(&self, level: usize) -> f64 {
        match self.capacity_unit {
            CapacityUnit::Words => 1.0,
            CapacityUnit::Kib => self.word_bytes.at(level) as f64 / KIB as f64,
        }
    }

    /// Energy per access at `level` given (possibly continuous) hardware.
    pub fn epa<S: Scalar>(&self, hw: &HardwareParams<S>, level: usize) -> S {
        let e = &self.epa;
        match level {
            0 => S::constant(e.registers),
            1 => hw.acc_words * (e.accumulator_slope * self.unit_scale(1)) / hw.pe_side + e.accumulator_base,
            2 => hw.sp_words * (e.scratchpad_slope * self.unit_scale(2)) + e.scratchpad_base,
            3 => S::constant(e.dram),
            _ => panic!("no memory level {level}"),
        }
    }

    /// Words per cycle at `level`.
    pub fn bandwidth<S: Scalar>(&self, hw: &HardwareParams<S>, level: usize) -> S {
        match level {
            0 => hw.pe_side * hw.pe_side * 2.0,
            1 | 2 => hw.pe_side * 2.0,
            3 => S::constant(self.dram_bandwidth),
            _ => panic!("no memory level {level}"),
        }
    }
}

/// The hardware quantities the model depends on. Continuous during descent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HardwareParams<S> {
    /// Side of the square PE array; `C_PE = pe_side^2`.
    pub pe_side: S,
    /// Accumulator capacity in words.
    pub acc_words: S,
    /// Scratchpad capacity in words.
    pub sp_words: S,
}

impl<S: Scalar> HardwareParams<S> {
    pub fn c_pe(&self) -> S {
        self.pe_side * self.pe_side
    }

    pub fn value(&self) -> HardwareParams<f64> {
        HardwareParams {
            pe_side: self.pe_side.value(),
            acc_words: self.acc_words.value(),
            sp_words: self.sp_words.value(),
        }
    }
}

/// Words of tensor `t` resident at each level, plus per-level totals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CapacityReport<S> {
    pub tile: [[S; NUM_TENSORS]; NUM_LEVELS],
    pub total: [S; NUM_LEVELS],
}

/// Tile size of `t` at `level`: the data touched by all loops at levels up
/// to and including `level`. Inputs use the sliding-window bounding box.
pub fn tile_words<S: Scalar>(factors: &Factors<S>, layer: &LayerShape, level: usize, t: Tensor) -> S {
    let inner = |d| factors.inner(level, d);
    match t {
        Tensor::W => inner(Dim::R) * inner(Dim::S) * inner(Dim::C) * inner(Dim::K),
        Tensor::O => inner(Dim::P) * inner(Dim::Q) * inner(Dim::K) * inner(Dim::N),
        Tensor::I => {
            let h = (inner(Dim::P) - 1.0) * layer.p_stride as f64 + inner(Dim::R);
            let w = (inner(Dim::Q) - 1.0) * layer.q_stride as f64 + inner(Dim::S);
            inner(Dim::C) * inner(Dim::N) * h * w
        }
    }
}

pub fn capacity_requirements<S: Scalar>(
    factors: &Factors<S>,
    layer: &LayerShape,
    bypass: &BypassMatrix,
) -> CapacityReport<S> {
    let zero = S::constant(0.0);
    let mut tile = [[zero; NUM_TENSORS]; NUM_LEVELS];
    let mut total = [zero; NUM_LEVELS];
    for (i, row) in tile.iter_mut().enumerate() {
        for t in Tensor::ALL {
            row[t.index()] = tile_words(factors, layer, i, t);
            if bypass.holds(i, t) {
                total[i] = total[i] + row[t.index()];
            }
        }
    }
    CapacityReport { tile, total }
}

/// PEs needed by one mapping: a square array covering both spatial factors.
pub fn pe_requirement<S: Scalar>(factors: &Factors<S>) -> S {
    let side = factors.spatial(1, Dim::C).max(factors.spatial(2, Dim::K));
    side * side
}

/// Array side needed by one mapping.
pub fn pe_side_requirement<S: Scalar>(factors: &Factors<S>) -> S {
    factors.spatial(1, Dim::C).max(factors.spatial(2, Dim::K))
}

/// Parameter-wise maximum of the requirements of several mappings.
pub fn hardware_requirements<S: Scalar>(
    mappings: &[(Factors<S>, LayerShape)],
    bypass: &BypassMatrix,
) -> HardwareParams<S> {
    assert!(!mappings.is_empty(), "need at least one mapping");
    let mut hw: Option<HardwareParams<S>> = None;
    for (f, layer) in mappings {
        let cap = capacity_requirements(f, layer, bypass);
        let side = pe_side_requirement(f);
        hw = Some(match hw {
            None => HardwareParams {
                pe_side: side,
                acc_words: cap.total[1],
                sp_words: cap.total[2],
            },
            Some(h) => HardwareParams {
                pe_side: h.pe_side.max(side),
                acc_words: h.acc_words.max(cap.total[1]),
                sp_words: h.sp_words.max(cap.total[2]),
            },
        });
    }
    hw.unwrap()
}

fn round_up_kib(bytes: f64) -> u64 {
    let kib = (bytes / KIB as f64).ceil().max(1.0) as u64;
    kib * KIB
}

/// A concrete accelerator instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub template: ArchTemplate,
    pub pe_side: u64,
    /// Required accumulator words before rounding to whole KiB.
    pub acc_words: f64,
    /// Required scratchpad words before rounding to whole KiB.
    pub sp_words: f64,
    pub acc_bytes: u64,
    pub sp_bytes: u64,
    /// Some mapping asked for more PEs than the template allows.
    pub pe_capped: bool,
}

impl ArchConfig {
    /// Hardware sized exactly for `req`, with byte capacities rounded up to
    /// whole KiB.
    pub fn finalize(template: &ArchTemplate, req: &HardwareParams<f64>) -> Self {
        let side = req.pe_side.ceil().max(1.0) as u64;
        let wb = &template.word_bytes;
        ArchConfig {
            template: *template,
            pe_side: side.min(template.pe_side_cap),
            acc_words: req.acc_words,
            sp_words: req.sp_words,
            acc_bytes: round_up_kib(req.acc_words * wb.accumulator as f64),
            sp_bytes: round_up_kib(req.sp_words * wb.scratchpad as f64),
            pe_capped: side > template.pe_side_cap,
        }
    }

    /// Hardware given directly by array side and buffer sizes in bytes.
    pub fn with_capacities(template: &ArchTemplate, pe_side: u64, acc_bytes: u64, sp_bytes: u64) -> Self {
        let wb = &template.word_bytes;
        ArchConfig {
            template: *template,
            pe_side,
            acc_words: (acc_bytes / wb.accumulator) as f64,
            sp_words: (sp_bytes / wb.scratchpad) as f64,
            acc_bytes,
            sp_bytes,
            pe_capped: false,
        }
    }

    pub fn c_pe(&self) -> u64 {
        self.pe_side * self.pe_side
    }

    /// Whole words available at `level` (registers hold one per PE).
    pub fn capacity_words(&self, level: usize) -> f64 {
        let wb = &self.template.word_bytes;
        match level {
            0 => 1.0,
            1 => (self.acc_bytes / wb.accumulator) as f64,
            2 => (self.sp_bytes / wb.scratchpad) as f64,
            _ => f64::INFINITY,
        }
    }

    /// Finalized hardware as model inputs.
    pub fn params(&self) -> HardwareParams<f64> {
        HardwareParams {
            pe_side: self.pe_side as f64,
            acc_words: self.capacity_words(1),
            sp_words: self.capacity_words(2),
        }
    }

    pub fn epa(&self, level: usize) -> f64 {
        self.template.epa(&self.params(), level)
    }

    pub fn bandwidth(&self, level: usize) -> f64 {
        self.template.bandwidth(&self.params(), level)
    }

    /// Reasons `mapping` does not fit, if any.
    pub fn check_fits(&self, mapping: &LayerMapping) -> Result<()> {
        let mut problems = Vec::new();
        let side = pe_side_requirement(&mapping.factors);
        if side > self.pe_side as f64 {
            problems.push(format!("needs a {side}x{side} PE array, have {0}x{0}", self.pe_side));
        }
        let cap = capacity_requirements(&mapping.factors, &mapping.layer, &self.template.bypass);
        for level in 0..DRAM {
            let have = self.capacity_words(level);
            if cap.total[level] > have {
                problems.push(format!(
                    "{} needs {} words, has {}",
                    LEVEL_NAMES[level], cap.total[level], have
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Capacity(format!("layer {}: {}", mapping.layer, problems.join(", "))))
        }
    }

    pub fn fits(&self, mapping: &LayerMapping) -> bool {
        self.check_fits(mapping).is_ok()
    }
}

impl fmt::Display for ArchConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{0}x{0} PEs, accumulator {1} B, scratchpad {2} B",
            self.pe_side, self.acc_bytes, self.sp_bytes
        )
    }
}

/// Smallest hardware that supports every mapping in `mappings`.
pub fn infer_min_hw(template: &ArchTemplate, mappings: &[LayerMapping]) -> Result<ArchConfig> {
    if mappings.is_empty() {
        return Err(Error::Validation("cannot infer hardware for zero mappings".into()));
    }
    let pairs: Vec<_> = mappings.iter().map(|m| (m.factors, m.layer)).collect();
    let req = hardware_requirements(&pairs, &template.bypass);
    Ok(ArchConfig::finalize(template, &req))
}
