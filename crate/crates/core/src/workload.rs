//! Conv/matmul layers and networks, plus the line-oriented workload format.
//!
//! ```text
//! # comment
//! name = toy_cnn
//! layer R=3 S=3 P=16 Q=16 C=4 K=16 N=1 Pstride=1 Qstride=1
//! layer R=1 S=1 P=8 Q=8 C=32 K=64 N=1 repeat=2
//! ```
//!
//! Strides default to 1 and `repeat` to 1. Identical layers are merged into
//! one entry whose repeat count is the sum.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Problem dimensions, in the canonical order used throughout the crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dim {
    R,
    S,
    P,
    Q,
    C,
    K,
    N,
}

pub const NUM_DIMS: usize = 7;

impl Dim {
    pub const ALL: [Dim; NUM_DIMS] = [Dim::R, Dim::S, Dim::P, Dim::Q, Dim::C, Dim::K, Dim::N];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Dim::R => "R",
            Dim::S => "S",
            Dim::P => "P",
            Dim::Q => "Q",
            Dim::C => "C",
            Dim::K => "K",
            Dim::N => "N",
        }
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Data tensors of a conv/matmul layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tensor {
    W,
    I,
    O,
}

pub const NUM_TENSORS: usize = 3;

impl Tensor {
    pub const ALL: [Tensor; NUM_TENSORS] = [Tensor::W, Tensor::I, Tensor::O];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Whether `d` indexes this tensor.
    pub fn relevant(self, d: Dim) -> bool {
        use Dim::*;
        match self {
            Tensor::W => matches!(d, R | S | C | K),
            Tensor::I => matches!(d, R | S | P | Q | C | N),
            Tensor::O => matches!(d, P | Q | K | N),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Tensor::W => "W",
            Tensor::I => "I",
            Tensor::O => "O",
        }
    }
}

/// Extents of one conv or matmul layer. A matmul uses `R = S = 1` and unit
/// strides.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerShape {
    pub r: u64,
    pub s: u64,
    pub p: u64,
    pub q: u64,
    pub c: u64,
    pub k: u64,
    pub n: u64,
    pub p_stride: u64,
    pub q_stride: u64,
}

impl LayerShape {
    /// Unit-stride layer from the seven extents in canonical order.
    pub fn new(extents: [u64; NUM_DIMS]) -> Self {
        let [r, s, p, q, c, k, n] = extents;
        LayerShape {
            r,
            s,
            p,
            q,
            c,
            k,
            n,
            p_stride: 1,
            q_stride: 1,
        }
    }

    pub fn with_strides(mut self, p_stride: u64, q_stride: u64) -> Self {
        self.p_stride = p_stride;
        self.q_stride = q_stride;
        self
    }

    /// `(M x Kin) * (Kin x Nout)` as a layer with `P = M`, `C = Kin`, `K = Nout`.
    pub fn matmul(m: u64, k_in: u64, n_out: u64) -> Self {
        LayerShape::new([1, 1, m, 1, k_in, n_out, 1])
    }

    pub fn extent(&self, d: Dim) -> u64 {
        match d {
            Dim::R => self.r,
            Dim::S => self.s,
            Dim::P => self.p,
            Dim::Q => self.q,
            Dim::C => self.c,
            Dim::K => self.k,
            Dim::N => self.n,
        }
    }

    pub fn extents(&self) -> [u64; NUM_DIMS] {
        Dim::ALL.map(|d| self.extent(d))
    }

    pub fn validate(&self) -> Result<()> {
        for d in Dim::ALL {
            if self.extent(d) == 0 {
                return Err(Error::Validation(format!("extent {d} must be >= 1")));
            }
        }
        if self.p_stride == 0 || self.q_stride == 0 {
            return Err(Error::Validation("strides must be >= 1".into()));
        }
        Ok(())
    }

    pub fn is_matmul(&self) -> bool {
        self.r == 1 && self.s == 1 && self.p_stride == 1 && self.q_stride == 1
    }

    /// `R * S * P * Q * C * K * N`.
    pub fn macs(&self) -> u64 {
        self.extents().iter().product()
    }
}

impl fmt::Display for LayerShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in Dim::ALL {
            write!(f, "{}={} ", d, self.extent(d))?;
        }
        write!(f, "Pstride={} Qstride={}", self.p_stride, self.q_stride)
    }
}

/// MAC count of a layer.
pub fn layer_macs(layer: &LayerShape) -> u64 {
    layer.macs()
}

/// A unique layer and the number of times it occurs in the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkLayer {
    pub shape: LayerShape,
    pub repeat: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Network {
    pub name: String,
    layers: Vec<NetworkLayer>,
}

impl Network {
    pub fn new(name: impl Into<String>) -> Self {
        Network {
            name: name.into(),
            layers: Vec::new(),
        }
    }

    /// Appends `repeat` occurrences of `shape`, merging into an existing
    /// identical entry.
    pub fn push(&mut self, shape: LayerShape, repeat: u64) -> Result<()> {
        shape.validate()?;
        if repeat == 0 {
            return Err(Error::Validation("repeat must be >= 1".into()));
        }
        match self.layers.iter_mut().find(|l| l.shape == shape) {
            Some(existing) => existing.repeat += repeat,
            None => self.layers.push(NetworkLayer { shape, repeat }),
        }
        Ok(())
    }

    pub fn from_layers(name: impl Into<String>, layers: &[(LayerShape, u64)]) -> Result<Self> {
        let mut net = Network::new(name);
        for &(shape, repeat) in layers {
            net.push(shape, repeat)?;
        }
        Ok(net)
    }

    pub fn layers(&self) -> &[NetworkLayer] {
        &self.layers
    }

    pub fn shapes(&self) -> Vec<LayerShape> {
        self.layers.iter().map(|l| l.shape).collect()
    }

    pub fn repeats(&self) -> Vec<u64> {
        self.layers.iter().map(|l| l.repeat).collect()
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn total_macs(&self) -> u64 {
        self.layers.iter().map(|l| l.repeat * l.shape.macs()).sum()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("name = {}\n", self.name);
        for l in &self.layers {
            out.push_str(&format!("layer {}", l.shape));
            if l.repeat != 1 {
                out.push_str(&format!(" repeat={}", l.repeat));
            }
            out.push('\n');
        }
        out
    }
}

impl FromStr for Network {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        parse_workload(text)
    }
}

fn parse_err(line: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn parse_layer(line_no: usize, rest: &str) -> Result<(LayerShape, u64)> {
    let mut extents: [Option<u64>; NUM_DIMS] = [None; NUM_DIMS];
    let (mut p_stride, mut q_stride, mut repeat) = (1, 1, 1);
    for token in rest.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| parse_err(line_no, token, "expected KEY=VALUE"))?;
        let value: i64 = value
            .parse()
            .map_err(|_| parse_err(line_no, key, format!("`{value}` is not an integer")))?;
        if value <= 0 {
            return Err(Error::Validation(format!(
                "line {line_no}: field {key} must be positive, got {value}"
            )));
        }
        let value = value as u64;
        match key {
            "Pstride" => p_stride = value,
            "Qstride" => q_stride = value,
            "repeat" => repeat = value,
            _ => {
                let d = Dim::ALL
                    .into_iter()
                    .find(|d| d.name() == key)
                    .ok_or_else(|| parse_err(line_no, key, "unknown field"))?;
                if extents[d.index()].replace(value).is_some() {
                    return Err(parse_err(line_no, key, "duplicate field"));
                }
            }
        }
    }
    let mut dims = [0; NUM_DIMS];
    for d in Dim::ALL {
        dims[d.index()] =
            extents[d.index()].ok_or_else(|| parse_err(line_no, d.name(), "missing field"))?;
    }
    Ok((LayerShape::new(dims).with_strides(p_stride, q_stride), repeat))
}

/// Parses a workload document. Layer order follows first occurrence.
pub fn parse_workload(text: &str) -> Result<Network> {
    let mut name: Option<String> = None;
    let mut layers = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("layer") {
            if !rest.is_empty() && !rest.starts_with(char::is_whitespace) {
                return Err(parse_err(line_no, "layer", "expected `layer KEY=VALUE ...`"));
            }
            layers.push(parse_layer(line_no, rest)?);
        } else if let Some((key, value)) = line.split_once('=') {
            match key.trim() {
                "name" => name = Some(value.trim().to_string()),
                other => return Err(parse_err(line_no, other, "unknown key")),
            }
        } else {
            return Err(parse_err(line_no, line, "unrecognised record"));
        }
    }
    let mut net = Network::new(name.unwrap_or_else(|| "workload".to_string()));
    for (shape, repeat) in layers {
        net.push(shape, repeat)?;
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_entries_merge() {
        let net = parse_workload(
            "layer R=1 S=1 P=2 Q=2 C=2 K=2 N=1\nlayer R=1 S=1 P=2 Q=2 C=2 K=2 N=1\n",
        )
        .unwrap();
        assert_eq!(net.len(), 1);
        assert_eq!(net.layers()[0].repeat, 2);
    }

    #[test]
    fn zero_extent_is_rejected() {
        let err = parse_workload("layer R=1 S=1 P=2 Q=2 C=2 K=0 N=1").unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn single_conv_layer() {
        let net =
            parse_workload("name = one\nlayer R=3 S=3 P=56 Q=56 C=64 K=64 N=1 Pstride=1 Qstride=1")
                .unwrap();
        assert_eq!(net.name, "one");
        assert_eq!(net.layers(), &[NetworkLayer {
            shape: LayerShape::new([3, 3, 56, 56, 64, 64, 1]),
            repeat: 1
        }]);
    }

    #[test]
    fn errors_name_field_and_line() {
        let err = parse_workload("name = x\nlayer R=1 S=1 P=2 Q=2 C=2 N=1\n").unwrap_err();
        assert_eq!(err.to_string(), "line 2: field `K`: missing field");
        let err = parse_workload("layer R=1 S=x").unwrap_err();
        assert!(err.to_string().contains("field `S`"));
        let err = parse_workload("\n\nbogus").unwrap_err();
        assert!(err.to_string().starts_with("line 3"));
    }

    #[test]
    fn order_is_first_occurrence() {
        let text = "layer R=1 S=1 P=4 Q=1 C=2 K=2 N=1\nlayer R=1 S=1 P=2 Q=1 C=2 K=2 N=1\nlayer R=1 S=1 P=4 Q=1 C=2 K=2 N=1";
        let net = parse_workload(text).unwrap();
        assert_eq!(net.shapes()[0].p, 4);
        assert_eq!(net.repeats(), vec![2, 1]);
    }

    #[test]
    fn mac_counts() {
        assert_eq!(layer_macs(&LayerShape::new([1, 1, 2, 2, 2, 2, 1])), 16);
        assert_eq!(layer_macs(&LayerShape::new([1; 7])), 1);
        assert_eq!(layer_macs(&LayerShape::new([3, 3, 4, 4, 2, 2, 1])), 576);
    }

    fn arb_shape() -> impl Strategy<Value = LayerShape> {
        (proptest::array::uniform7(1u64..20), 1u64..4, 1u64..4)
            .prop_map(|(e, ps, qs)| LayerShape::new(e).with_strides(ps, qs))
    }

    proptest! {
        #[test]
        fn parse_serialize_parse_is_fixed_point(
            layers in proptest::collection::vec((arb_shape(), 1u64..4), 1..6)
        ) {
            let net = Network::from_layers("net", &layers).unwrap();
            let once = parse_workload(&net.to_text()).unwrap();
            prop_assert_eq!(&once, &net);
            prop_assert_eq!(once.to_text(), net.to_text());
        }
    }
}
