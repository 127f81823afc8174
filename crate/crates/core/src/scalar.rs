//! Scalar abstraction shared by weights, LUT estimates and throughput figures.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar type the pipeline is generic over (`f32` or `f64`).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + Serialize + DeserializeOwned + 'static
{
    /// Lossless-as-possible conversion from a count.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable as scalar")
    }

    /// Conversion from a literal constant.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable as scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar representable as f64")
    }

    /// Round half to even.
    fn round_half_even(self) -> Self {
        let floor = self.floor();
        let diff = self - floor;
        let half = Self::lit(0.5);
        if diff < half {
            floor
        } else if diff > half {
            floor + Self::one()
        } else {
            let two = Self::lit(2.0);
            if (floor / two).fract() == Self::zero() {
                floor
            } else {
                floor + Self::one()
            }
        }
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
