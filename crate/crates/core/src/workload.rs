//! Convolutional layer description, loop-dimension algebra and the
//! relevance classification of loop dimensions per operand.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the seven loop dimensions of a 2D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LoopDim {
    B,
    K,
    C,
    OY,
    OX,
    FY,
    FX,
}

impl LoopDim {
    pub const ALL: [LoopDim; 7] =
        [LoopDim::B, LoopDim::K, LoopDim::C, LoopDim::OY, LoopDim::OX, LoopDim::FY, LoopDim::FX];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            LoopDim::B => "B",
            LoopDim::K => "K",
            LoopDim::C => "C",
            LoopDim::OY => "OY",
            LoopDim::OX => "OX",
            LoopDim::FY => "FY",
            LoopDim::FX => "FX",
        }
    }

    /// The partner of a partially relevant dimension, if any.
    pub fn pr_partner(self) -> Option<LoopDim> {
        match self {
            LoopDim::OX => Some(LoopDim::FX),
            LoopDim::FX => Some(LoopDim::OX),
            LoopDim::OY => Some(LoopDim::FY),
            LoopDim::FY => Some(LoopDim::OY),
            _ => None,
        }
    }
}

impl fmt::Display for LoopDim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LoopDim {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LoopDim::ALL
            .iter()
            .copied()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown loop dimension `{s}`")))
    }
}

/// Weight, Input and Output tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Operand {
    W,
    I,
    O,
}

impl Operand {
    pub const ALL: [Operand; 3] = [Operand::W, Operand::I, Operand::O];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Operand::W => "W",
            Operand::I => "I",
            Operand::O => "O",
        }
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Operand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "W" => Ok(Operand::W),
            "I" => Ok(Operand::I),
            "O" => Ok(Operand::O),
            _ => Err(Error::Parse(format!("unknown operand `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relevance {
    /// Relevant: iterating fetches or produces new data.
    R,
    /// Irrelevant: iterating reuses the same data.
    Ir,
    /// Partially relevant: one half of an (OX,FX) or (OY,FY) pair for Input.
    Pr,
}

/// Fixed relevance table of a 2D convolution.
pub fn classify(dim: LoopDim, op: Operand) -> Relevance {
    use LoopDim::*;
    match op {
        Operand::W => match dim {
            K | C | FY | FX => Relevance::R,
            B | OY | OX => Relevance::Ir,
        },
        Operand::O => match dim {
            B | K | OY | OX => Relevance::R,
            C | FY | FX => Relevance::Ir,
        },
        Operand::I => match dim {
            B | C => Relevance::R,
            K => Relevance::Ir,
            OY | OX | FY | FX => Relevance::Pr,
        },
    }
}

/// Shorthand for "iterating this dim changes the operand's data".
pub fn is_relevant(dim: LoopDim, op: Operand) -> bool {
    classify(dim, op) != Relevance::Ir
}

/// Precision of each operand in bits. Partial outputs are usually wider
/// than final outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Precision {
    pub w: u32,
    pub i: u32,
    pub o_partial: u32,
    pub o_final: u32,
}

impl Default for Precision {
    fn default() -> Self {
        Precision { w: 8, i: 8, o_partial: 24, o_final: 8 }
    }
}

/// A single convolutional layer: seven loop bounds, stride and precisions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(default)]
    pub name: String,
    bounds: [u64; 7],
    pub stride: (u64, u64),
    pub precision: Precision,
}

impl LayerSpec {
    /// `stride` is `(SX, SY)`.
    pub fn new(bounds: [u64; 7], stride: (u64, u64), precision: Precision) -> Result<Self> {
        let spec = LayerSpec { name: String::new(), bounds, stride, precision };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_dims(dims: &[(LoopDim, u64)], precision: Precision) -> Result<Self> {
        let mut bounds = [1u64; 7];
        for &(d, v) in dims {
            bounds[d.index()] = v;
        }
        LayerSpec::new(bounds, (1, 1), precision)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_stride(mut self, sx: u64, sy: u64) -> Result<Self> {
        self.stride = (sx, sy);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(d) = LoopDim::ALL.iter().find(|d| self.bounds[d.index()] == 0) {
            return Err(Error::InvalidWorkload(format!("loop bound of {d} must be >= 1")));
        }
        if self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(Error::InvalidWorkload("stride must be >= 1".into()));
        }
        let p = self.precision;
        if p.w == 0 || p.i == 0 || p.o_partial == 0 || p.o_final == 0 {
            return Err(Error::InvalidWorkload("precisions must be >= 1 bit".into()));
        }
        if p.o_partial < p.o_final {
            return Err(Error::InvalidWorkload(
                "partial-output precision must not be below final-output precision".into(),
            ));
        }
        Ok(())
    }

    pub fn bound(&self, d: LoopDim) -> u64 {
        self.bounds[d.index()]
    }

    pub fn bounds(&self) -> [u64; 7] {
        self.bounds
    }

    pub fn ix(&self) -> u64 {
        self.stride.0 * (self.bound(LoopDim::OX) - 1) + self.bound(LoopDim::FX)
    }

    pub fn iy(&self) -> u64 {
        self.stride.1 * (self.bound(LoopDim::OY) - 1) + self.bound(LoopDim::FY)
    }

    pub fn total_macs(&self) -> u64 {
        self.bounds.iter().product()
    }

    /// Element count of an operand tensor.
    pub fn operand_size(&self, op: Operand) -> u64 {
        use LoopDim::*;
        let b = |d| self.bound(d);
        match op {
            Operand::W => b(K) * b(C) * b(FY) * b(FX),
            Operand::O => b(B) * b(K) * b(OY) * b(OX),
            Operand::I => b(B) * b(C) * self.ix() * self.iy(),
        }
    }

    /// Precision of `op` in bits; `partial` selects partial-sum width for O.
    pub fn bits(&self, op: Operand, partial: bool) -> u32 {
        match op {
            Operand::W => self.precision.w,
            Operand::I => self.precision.i,
            Operand::O if partial => self.precision.o_partial,
            Operand::O => self.precision.o_final,
        }
    }
}

/// Prime factorization by trial division, ascending.
pub fn prime_factors(mut n: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut p = 2;
    while p * p <= n {
        while n % p == 0 {
            out.push(p);
            n /= p;
        }
        p += if p == 2 { 1 } else { 2 };
    }
    if n > 1 {
        out.push(n);
    }
    out
}

/// Loop prime factors of every dimension, dimension-major, ascending primes.
pub fn lpf_factorize(spec: &LayerSpec) -> Vec<(LoopDim, u64)> {
    lpf_factorize_bounds(&spec.bounds())
}

pub fn lpf_factorize_bounds(bounds: &[u64; 7]) -> Vec<(LoopDim, u64)> {
    LoopDim::ALL.iter().flat_map(|&d| prime_factors(bounds[d.index()]).into_iter().map(move |p| (d, p))).collect()
}

/// Multiset of LPFs as counts keyed by (dim, prime).
pub fn lpf_counts(lpfs: &[(LoopDim, u64)]) -> BTreeMap<(LoopDim, u64), u32> {
    let mut m = BTreeMap::new();
    for &l in lpfs {
        *m.entry(l).or_insert(0) += 1;
    }
    m
}
