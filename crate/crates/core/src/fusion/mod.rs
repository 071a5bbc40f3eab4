//! Dimension-aligning projections and the embedding fusion operators.
//!
//! [`ops`] holds the stateless operators, [`MoeParams`] the gated expert
//! mixture, and [`FusionHead`] composes projections, one operator and the
//! optional residual path into the learnable front half of a classifier.

mod head;
mod moe;
pub mod ops;

pub use head::{FusionHead, HeadCache};
pub use moe::{gate_weights, MoeCache, MoeParams};
pub use ops::{
    aggregate_layers, apply_residual, fuse_all, fuse_concat, fuse_hadamard, fuse_multiply, fuse_quaternion,
    fuse_sum, hamilton, project, square_side, AggregateMode,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Projection width used by multiply, quaternion and all when no explicit
/// target is given (a 32 × 32 reshape).
pub const PAIRWISE_TARGET_DIM: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMethod {
    /// Single input fed straight to the classifier.
    None,
    Concat,
    Sum,
    Multiply,
    Hadamard,
    Quaternion,
    Moe,
    All,
}

impl FusionMethod {
    pub const ALL: [FusionMethod; 8] = [
        FusionMethod::None,
        FusionMethod::Concat,
        FusionMethod::Sum,
        FusionMethod::Multiply,
        FusionMethod::Hadamard,
        FusionMethod::Quaternion,
        FusionMethod::Moe,
        FusionMethod::All,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMethod::None => "none",
            FusionMethod::Concat => "concat",
            FusionMethod::Sum => "sum",
            FusionMethod::Multiply => "multiply",
            FusionMethod::Hadamard => "hadamard",
            FusionMethod::Quaternion => "quaternion",
            FusionMethod::Moe => "moe",
            FusionMethod::All => "all",
        }
    }

    pub fn valid_names() -> String {
        Self::ALL.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(", ")
    }

    /// Methods that take exactly two inputs.
    pub fn is_pairwise(self) -> bool {
        matches!(self, FusionMethod::Multiply | FusionMethod::Quaternion | FusionMethod::All)
    }

    /// Methods that project every input to a shared width first.
    pub fn projects(self) -> bool {
        !matches!(self, FusionMethod::None | FusionMethod::Concat)
    }

    pub fn supports_residual(self) -> bool {
        self.projects() && self != FusionMethod::All
    }
}

impl fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let m = match s.trim().to_ascii_lowercase().as_str() {
            "none" | "single" => FusionMethod::None,
            "concat" | "concatenation" => FusionMethod::Concat,
            "sum" => FusionMethod::Sum,
            "multiply" | "multiplication" | "matmul" => FusionMethod::Multiply,
            "hadamard" => FusionMethod::Hadamard,
            "quaternion" => FusionMethod::Quaternion,
            "moe" | "mixture-of-experts" => FusionMethod::Moe,
            "all" | "all-methods" => FusionMethod::All,
            other => {
                return Err(Error::InvalidSpec(format!(
                    "unknown fusion method '{other}'; valid methods: {}",
                    Self::valid_names()
                )))
            }
        };
        Ok(m)
    }
}

/// A layer index or the symbolic "last" layer of a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerRef {
    Index(u32),
    Last,
}

impl LayerRef {
    pub fn index(self) -> Option<u32> {
        match self {
            LayerRef::Index(i) => Some(i),
            LayerRef::Last => None,
        }
    }
}

impl fmt::Display for LayerRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerRef::Index(i) => write!(f, "{i}"),
            LayerRef::Last => f.write_str("last"),
        }
    }
}

impl FromStr for LayerRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("last") {
            return Ok(LayerRef::Last);
        }
        s.parse()
            .map(LayerRef::Index)
            .map_err(|_| Error::InvalidSpec(format!("layer must be an integer or 'last', got '{s}'")))
    }
}

impl Serialize for LayerRef {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LayerRef::Index(i) => s.serialize_u32(*i),
            LayerRef::Last => s.serialize_str("last"),
        }
    }
}

impl<'de> Deserialize<'de> for LayerRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Index(u32),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Index(i) => Ok(LayerRef::Index(i)),
            Raw::Name(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// One fused input: a model and which of its layers to read.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InputRef {
    pub model: String,
    pub layer: LayerRef,
}

impl InputRef {
    pub fn new(model: impl Into<String>, layer: LayerRef) -> Self {
        Self {
            model: model.into(),
            layer,
        }
    }

    pub fn at(model: impl Into<String>, layer: u32) -> Self {
        Self::new(model, LayerRef::Index(layer))
    }
}

impl fmt::Display for InputRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.model, self.layer)
    }
}

impl FromStr for InputRef {
    type Err = Error;

    /// `model:layer`, `model:last`, or bare `model` (last layer).
    fn from_str(s: &str) -> Result<Self> {
        let (model, layer) = match s.rsplit_once(':') {
            Some((m, l)) => (m, l.parse()?),
            None => (s, LayerRef::Last),
        };
        if model.is_empty() {
            return Err(Error::InvalidSpec(format!("input '{s}' has no model name")));
        }
        Ok(Self::new(model, layer))
    }
}

/// Declarative description of one fusion run.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FusionSpec {
    pub method: FusionMethod,
    #[serde(default)]
    pub residual: bool,
    pub inputs: Vec<InputRef>,
    /// Projection width; `None` picks the method's default.
    #[serde(default)]
    pub target_dim: Option<usize>,
}

/// Dimensions a spec resolves to for concrete input dims.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FusionShape {
    /// Shared projection width, for methods that project.
    pub target_dim: Option<usize>,
    /// Width of the vector handed to the classifier.
    pub fused_dim: usize,
}

impl FusionSpec {
    pub fn new(method: FusionMethod, inputs: Vec<InputRef>) -> Self {
        Self {
            method,
            residual: false,
            inputs,
            target_dim: None,
        }
    }

    pub fn single(input: InputRef) -> Self {
        Self::new(FusionMethod::None, vec![input])
    }

    pub fn with_residual(mut self, residual: bool) -> Self {
        self.residual = residual;
        self
    }

    pub fn with_target_dim(mut self, target_dim: Option<usize>) -> Self {
        self.target_dim = target_dim;
        self
    }

    /// Input-count and residual rules that don't depend on dims.
    pub fn check_arity(&self) -> Result<()> {
        let n = self.inputs.len();
        let m = self.method;
        if n == 0 {
            return Err(Error::InvalidSpec("at least one input is required".into()));
        }
        if m == FusionMethod::None && n != 1 {
            return Err(Error::InvalidSpec(format!(
                "method none takes exactly 1 input, got {n}"
            )));
        }
        if m.is_pairwise() && n != 2 {
            return Err(Error::InvalidSpec(format!(
                "method {m} fuses exactly 2 inputs, got {n}"
            )));
        }
        if self.residual && !m.supports_residual() {
            return Err(Error::InvalidSpec(format!(
                "residual is unavailable for method {m}; use the non-residual variant"
            )));
        }
        Ok(())
    }

    pub fn resolve(&self, input_dims: &[usize]) -> Result<FusionShape> {
        self.check_arity()?;
        if input_dims.len() != self.inputs.len() {
            return Err(Error::Shape(format!(
                "{} inputs declared but {} dims given",
                self.inputs.len(),
                input_dims.len()
            )));
        }
        if input_dims.contains(&0) {
            return Err(Error::Shape("input dims must be positive".into()));
        }
        let m = self.method;
        if !m.projects() {
            return Ok(FusionShape {
                target_dim: None,
                fused_dim: input_dims.iter().sum(),
            });
        }
        let target = match self.target_dim {
            Some(t) => t,
            None if m.is_pairwise() => PAIRWISE_TARGET_DIM,
            None => *input_dims.iter().min().unwrap(),
        };
        if target == 0 {
            return Err(Error::InvalidSpec("target_dim must be at least 1".into()));
        }
        if matches!(m, FusionMethod::Multiply | FusionMethod::All) && square_side(target).is_none() {
            return Err(Error::InvalidSpec(format!(
                "method {m} needs a perfect-square target_dim, got {target}"
            )));
        }
        if matches!(m, FusionMethod::Quaternion | FusionMethod::All) && target % 4 != 0 {
            return Err(Error::InvalidSpec(format!(
                "method {m} needs a target_dim divisible by 4, got {target}"
            )));
        }
        let fused_dim = if m == FusionMethod::All { 4 * target } else { target };
        Ok(FusionShape {
            target_dim: Some(target),
            fused_dim,
        })
    }

    /// Table-style method label, e.g. `quaternion(R)`.
    pub fn method_label(&self) -> String {
        if self.residual {
            format!("{}(R)", self.method)
        } else {
            self.method.to_string()
        }
    }

    /// `model:layer+model:layer`.
    pub fn inputs_label(&self) -> String {
        self.inputs.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("+")
    }
}
