//! Floating point abstraction used throughout the crate.
//!
//! Models train in `f32`; gradient checking and the graph builders work in
//! `f64`. Everything numeric is generic over [`Scalar`] so both widths share
//! one implementation.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps};

/// Element type tags used in the checkpoint container.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
    U64,
}

impl Dtype {
    pub fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
            Dtype::U64 => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Dtype> {
        match tag {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::F64),
            3 => Some(Dtype::U64),
            _ => None,
        }
    }

    pub fn byte_width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 | Dtype::U64 => 8,
        }
    }
}

impl Display for Dtype {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
            Dtype::U64 => "u64",
        };
        f.write_str(name)
    }
}

/// Floating point scalar a model can be instantiated with.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumAssignOps
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const DTYPE: Dtype;

    /// Lossy conversion from `f64`, used for constants and config values.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any scalar")
    }

    fn into_f64(self) -> f64;

    fn write_le(self, out: &mut Vec<u8>);

    /// Reads one value from `bytes`; callers guarantee the slice holds
    /// exactly `Self::DTYPE.byte_width()` bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;

    fn into_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 byte slice"))
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;

    fn into_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 byte slice"))
    }
}
