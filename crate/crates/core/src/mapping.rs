//! Per-layer mappings: spatial/temporal tiling factors for each memory level
//! and a canonical loop ordering for levels 1-3.
//!
//! Levels are 0 (per-PE registers), 1 (accumulator), 2 (scratchpad) and
//! 3 (DRAM). The dataflow is fixed weight-stationary with `C` spread over the
//! array rows below the accumulator (`f[S,1,C]`) and `K` over the columns
//! below the scratchpad (`f[S,2,K]`). Every other spatial factor and every
//! level-0 temporal factor is pinned to 1. DRAM temporal factors are never
//! free: they are whatever is left of each extent.
//!
//! Loop nest order, outermost first: `T3, S3, T2, S2, T1, S1, T0, S0`,
//! with the temporal loops of a level permuted by that level's [`Order`].

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradient::Scalar;
use crate::workload::{Dim, LayerShape, Tensor, NUM_DIMS};

pub const NUM_LEVELS: usize = 4;
pub const DRAM: usize = 3;

/// Lower clamp applied to continuous factors during descent.
pub const EPSILON: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FactorKind {
    Spatial,
    Temporal,
}

impl FactorKind {
    pub fn letter(self) -> char {
        match self {
            FactorKind::Spatial => 'S',
            FactorKind::Temporal => 'T',
        }
    }
}

/// One entry `(k, i, d)` of the factor tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Slot {
    pub kind: FactorKind,
    pub level: usize,
    pub dim: Dim,
}

impl Slot {
    pub const fn new(kind: FactorKind, level: usize, dim: Dim) -> Self {
        Slot { kind, level, dim }
    }

    /// Whether the slot is a descent variable (as opposed to pinned or derived).
    pub fn is_free(&self) -> bool {
        match self.kind {
            FactorKind::Spatial => is_spatial_slot(self.level, self.dim),
            FactorKind::Temporal => self.level == 1 || self.level == 2,
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f[{},{},{}]", self.kind.letter(), self.level, self.dim)
    }
}

/// The two spatial slots of the weight-stationary C-K array.
pub fn is_spatial_slot(level: usize, dim: Dim) -> bool {
    matches!((level, dim), (1, Dim::C) | (2, Dim::K))
}

/// Number of free variables per layer.
pub const FREE_PER_LAYER: usize = 2 + 2 * NUM_DIMS;

/// Free slots ordered innermost to outermost (the rounding order).
pub fn free_slots() -> [Slot; FREE_PER_LAYER] {
    use FactorKind::*;
    let mut out = [Slot::new(Spatial, 1, Dim::C); FREE_PER_LAYER];
    let mut n = 1;
    for d in Dim::ALL {
        out[n] = Slot::new(Temporal, 1, d);
        n += 1;
    }
    out[n] = Slot::new(Spatial, 2, Dim::K);
    n += 1;
    for d in Dim::ALL {
        out[n] = Slot::new(Temporal, 2, d);
        n += 1;
    }
    out
}

/// Factor tensor `f[k][i][d]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Factors<S> {
    pub spatial: [[S; NUM_DIMS]; NUM_LEVELS],
    pub temporal: [[S; NUM_DIMS]; NUM_LEVELS],
}

/// Real-valued factor tensor.
pub type MappingTensor = Factors<f64>;

impl<S: Scalar> Factors<S> {
    pub fn ones() -> Self {
        let one = S::constant(1.0);
        Factors {
            spatial: [[one; NUM_DIMS]; NUM_LEVELS],
            temporal: [[one; NUM_DIMS]; NUM_LEVELS],
        }
    }

    pub fn get(&self, slot: Slot) -> S {
        match slot.kind {
            FactorKind::Spatial => self.spatial[slot.level][slot.dim.index()],
            FactorKind::Temporal => self.temporal[slot.level][slot.dim.index()],
        }
    }

    pub fn set(&mut self, slot: Slot, value: S) {
        match slot.kind {
            FactorKind::Spatial => self.spatial[slot.level][slot.dim.index()] = value,
            FactorKind::Temporal => self.temporal[slot.level][slot.dim.index()] = value,
        }
    }

    pub fn spatial(&self, level: usize, d: Dim) -> S {
        self.spatial[level][d.index()]
    }

    pub fn temporal(&self, level: usize, d: Dim) -> S {
        self.temporal[level][d.index()]
    }

    /// Product of both kinds of factor for `d` over levels `0..=level`.
    pub fn inner(&self, level: usize, d: Dim) -> S {
        let mut acc = S::constant(1.0);
        for i in 0..=level {
            acc = acc * self.spatial[i][d.index()] * self.temporal[i][d.index()];
        }
        acc
    }

    /// Product over every slot of dimension `d`.
    pub fn total(&self, d: Dim) -> S {
        self.inner(DRAM, d)
    }

    /// Product over all spatial factors (PEs in use).
    pub fn spatial_product(&self) -> S {
        let mut acc = S::constant(1.0);
        for level in &self.spatial {
            for &f in level {
                acc = acc * f;
            }
        }
        acc
    }

    pub fn map<T>(&self, f: impl Fn(S) -> T) -> Factors<T> {
        Factors {
            spatial: self.spatial.map(|l| l.map(&f)),
            temporal: self.temporal.map(|l| l.map(&f)),
        }
    }

    /// Every slot in `(kind, level, dim)` order.
    pub fn slots() -> impl Iterator<Item = Slot> {
        [FactorKind::Spatial, FactorKind::Temporal]
            .into_iter()
            .flat_map(|k| {
                (0..NUM_LEVELS).flat_map(move |i| Dim::ALL.map(move |d| Slot::new(k, i, d)))
            })
    }

    pub fn values(&self) -> impl Iterator<Item = (Slot, S)> + '_ {
        Self::slots().map(|s| (s, self.get(s)))
    }

    /// Free-variable vector in [`free_slots`] order.
    pub fn free_values(&self) -> Vec<S> {
        free_slots().iter().map(|&s| self.get(s)).collect()
    }

    /// Builds a tensor from free variables, pinning the rest to 1 and
    /// deriving DRAM factors from the layer extents.
    pub fn from_free(free: &[S], layer: &LayerShape) -> Self {
        assert_eq!(free.len(), FREE_PER_LAYER, "wrong number of free factors");
        let mut f = Factors::ones();
        for (slot, &v) in free_slots().iter().zip(free) {
            f.set(*slot, v);
        }
        derive_dram_factors(&f, layer)
    }
}

/// Sets `f[T,3,d] = extent(d) / prod of every other factor of d`.
///
/// The result satisfies the per-dimension product constraint exactly in real
/// arithmetic. A derived factor below 1 signals over-tiling; it is left in
/// place for the validity penalty to act on.
pub fn derive_dram_factors<S: Scalar>(factors: &Factors<S>, layer: &LayerShape) -> Factors<S> {
    let mut out = *factors;
    for d in Dim::ALL {
        let mut others = S::constant(1.0);
        for i in 0..NUM_LEVELS {
            others = others * factors.spatial[i][d.index()];
            if i != DRAM {
                others = others * factors.temporal[i][d.index()];
            }
        }
        out.temporal[DRAM][d.index()] = S::constant(layer.extent(d) as f64) / others;
    }
    out
}

/// Dimensions whose derived DRAM factor fell below 1.
pub fn dram_pressure(factors: &MappingTensor) -> Vec<Dim> {
    Dim::ALL
        .into_iter()
        .filter(|d| factors.temporal(DRAM, *d) < 1.0)
        .collect()
}

/// Canonical loop orderings: the relevant dimensions of W, I or O are placed
/// innermost at a level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Order {
    #[serde(rename = "WS")]
    WeightStationary,
    #[serde(rename = "IS")]
    InputStationary,
    #[serde(rename = "OS")]
    OutputStationary,
}

impl Order {
    pub const ALL: [Order; 3] = [
        Order::WeightStationary,
        Order::InputStationary,
        Order::OutputStationary,
    ];

    /// Temporal loop order at a level, outermost first.
    pub fn permutation(self) -> [Dim; NUM_DIMS] {
        use Dim::*;
        match self {
            Order::WeightStationary => [N, P, Q, K, C, R, S],
            Order::InputStationary => [K, N, C, P, Q, R, S],
            Order::OutputStationary => [R, S, C, N, K, P, Q],
        }
    }

    /// Tensor whose relevant dimensions this order keeps innermost.
    pub fn stationary(self) -> Tensor {
        match self {
            Order::WeightStationary => Tensor::W,
            Order::InputStationary => Tensor::I,
            Order::OutputStationary => Tensor::O,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Order::WeightStationary => "WS",
            Order::InputStationary => "IS",
            Order::OutputStationary => "OS",
        }
    }
}

impl fmt::Display for Order {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Order {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "WS" => Ok(Order::WeightStationary),
            "IS" => Ok(Order::InputStationary),
            "OS" => Ok(Order::OutputStationary),
            other => Err(Error::Validation(format!("unknown loop ordering `{other}`"))),
        }
    }
}

/// One [`Order`] per memory level 1..=3 (level 0 has no temporal loops).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LoopOrdering(pub [Order; 3]);

impl LoopOrdering {
    pub fn uniform(order: Order) -> Self {
        LoopOrdering([order; 3])
    }

    /// Ordering at memory level `level` (1..=3).
    pub fn at(&self, level: usize) -> Order {
        assert!((1..=3).contains(&level), "level {level} has no ordering");
        self.0[level - 1]
    }

    /// All 27 per-level combinations.
    pub fn all() -> Vec<LoopOrdering> {
        let mut out = Vec::with_capacity(27);
        for a in Order::ALL {
            for b in Order::ALL {
                for c in Order::ALL {
                    out.push(LoopOrdering([a, b, c]));
                }
            }
        }
        out
    }
}

impl Default for LoopOrdering {
    fn default() -> Self {
        LoopOrdering::uniform(Order::WeightStationary)
    }
}

impl fmt::Display for LoopOrdering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", self.0[0], self.0[1], self.0[2])
    }
}

impl FromStr for LoopOrdering {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(['-', ' ', ',']).filter(|p| !p.is_empty()).collect();
        if parts.len() != 3 {
            return Err(Error::Validation(format!(
                "loop ordering `{s}` needs three entries"
            )));
        }
        Ok(LoopOrdering([
            parts[0].parse()?,
            parts[1].parse()?,
            parts[2].parse()?,
        ]))
    }
}

/// A layer together with its factors and loop ordering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerMapping {
    pub layer: LayerShape,
    pub factors: MappingTensor,
    pub ordering: LoopOrdering,
}

impl LayerMapping {
    pub fn new(layer: LayerShape, factors: MappingTensor, ordering: LoopOrdering) -> Self {
        LayerMapping {
            layer,
            factors,
            ordering,
        }
    }

    pub fn validate(&self) -> Validation {
        validate(&self.factors, &self.layer)
    }

    pub fn free_values(&self) -> Vec<f64> {
        self.factors.free_values()
    }
}

/// Every free factor 1, DRAM factors equal to the extents, WS everywhere.
pub fn uniform_mapping(layer: &LayerShape) -> LayerMapping {
    let free = vec![1.0; FREE_PER_LAYER];
    LayerMapping::new(
        *layer,
        Factors::from_free(&free, layer),
        LoopOrdering::default(),
    )
}

fn divisors(n: u64) -> Vec<u64> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut i = 1;
    while i * i <= n {
        if n % i == 0 {
            small.push(i);
            if i != n / i {
                large.push(n / i);
            }
        }
        i += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

/// Divisor of `n` (not above `cap`) nearest to `x`; ties go to the smaller.
pub fn nearest_divisor(x: f64, n: u64, cap: u64) -> u64 {
    let mut best = 1;
    let mut best_dist = f64::INFINITY;
    for d in divisors(n) {
        if d > cap {
            break;
        }
        let dist = (x - d as f64).abs();
        if dist < best_dist {
            best = d;
            best_dist = dist;
        }
    }
    best
}

/// Projects real factors onto the nearest valid integer mapping.
///
/// For each dimension (in `R,S,P,Q,C,K,N` order) the free factors are visited
/// innermost level first. Each is replaced by the nearest divisor of what is
/// left of the extent after the already-rounded inner factors, so the running
/// product always divides the extent. Spatial factors are also capped at
/// `pe_side_cap`. The DRAM factor takes the exact remaining quotient.
pub fn round_mapping(factors: &MappingTensor, layer: &LayerShape, pe_side_cap: u64) -> MappingTensor {
    let mut out = Factors::<f64>::ones();
    let slots = free_slots();
    for d in Dim::ALL {
        let mut remaining = layer.extent(d);
        for slot in slots.iter().filter(|s| s.dim == d) {
            let cap = match slot.kind {
                FactorKind::Spatial => pe_side_cap,
                FactorKind::Temporal => u64::MAX,
            };
            let v = nearest_divisor(factors.get(*slot), remaining, cap);
            out.set(*slot, v as f64);
            remaining /= v;
        }
        out.temporal[DRAM][d.index()] = remaining as f64;
    }
    out
}

fn prime_factors(mut n: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut p = 2;
    while p * p <= n {
        while n % p == 0 {
            out.push(p);
            n /= p;
        }
        p += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}

/// A random valid mapping: each prime factor of every extent goes to a
/// uniformly chosen slot (free slots of its dimension or DRAM). Spatial
/// slots never exceed `pe_side_cap`. The ordering is uniform over all 27.
pub fn random_mapping<R: Rng + ?Sized>(layer: &LayerShape, pe_side_cap: u64, rng: &mut R) -> LayerMapping {
    let mut f = Factors::<f64>::ones();
    let slots = free_slots();
    for d in Dim::ALL {
        let mut targets: Vec<Slot> = slots.iter().copied().filter(|s| s.dim == d).collect();
        targets.push(Slot::new(FactorKind::Temporal, DRAM, d));
        for p in prime_factors(layer.extent(d)) {
            let slot = *targets.choose(rng).expect("DRAM slot always present");
            let grown = f.get(slot) * p as f64;
            if slot.kind == FactorKind::Spatial && grown > pe_side_cap as f64 {
                let dram = Slot::new(FactorKind::Temporal, DRAM, d);
                f.set(dram, f.get(dram) * p as f64);
            } else {
                f.set(slot, grown);
            }
        }
    }
    let all = LoopOrdering::all();
    let ordering = *all.choose(rng).expect("27 orderings");
    LayerMapping::new(*layer, f, ordering)
}

/// Why a mapping is not valid.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub slot: Option<Slot>,
    pub dim: Dim,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.slot {
            Some(slot) => write!(f, "{slot}: {}", self.message),
            None => write!(f, "dimension {}: {}", self.dim, self.message),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Validation {
    pub violations: Vec<Violation>,
}

impl Validation {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
            Err(Error::InvalidMapping(msgs.join("; ")))
        }
    }
}

fn is_positive_integer(x: f64) -> bool {
    x >= 1.0 && x.fract() == 0.0 && x.is_finite()
}

/// A mapping is valid when every factor is a positive integer, pinned slots
/// are 1, and per dimension the factors multiply to the extent.
pub fn validate(factors: &MappingTensor, layer: &LayerShape) -> Validation {
    let mut violations = Vec::new();
    for (slot, v) in factors.values() {
        if !is_positive_integer(v) {
            violations.push(Violation {
                slot: Some(slot),
                dim: slot.dim,
                message: format!("{v} is not a positive integer"),
            });
        } else if v != 1.0 && !slot.is_free() && !(slot.kind == FactorKind::Temporal && slot.level == DRAM) {
            violations.push(Violation {
                slot: Some(slot),
                dim: slot.dim,
                message: format!("{v} in a slot pinned to 1"),
            });
        }
    }
    for d in Dim::ALL {
        let total = factors.total(d);
        if total != layer.extent(d) as f64 {
            violations.push(Violation {
                slot: None,
                dim: d,
                message: format!("factors multiply to {total}, extent is {}", layer.extent(d)),
            });
        }
    }
    Validation { violations }
}
