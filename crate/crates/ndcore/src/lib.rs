//! Minimal dense-tensor machinery for training coordinate/point MLPs on the CPU.
//!
//! The crate covers exactly what the assimilation model needs:
//!
//! - [`Mlp`]: fully connected networks with a fixed smooth rectifier and
//!   residual skips every two layers, with an exact hand-written backward pass.
//! - [`Adam`]: bias-corrected Adam over a list of flat parameter slices.
//! - [`LrSchedule`]: multi-step learning-rate decay.
//! - [`masked_mse`]: mean squared error over rows selected by a mask.
//! - [`checkpoint`]: a versioned, checksummed binary tensor container.
//!
//! Everything is generic over [`Real`] so gradient checks can run in `f64`
//! while training stores `f32`.

pub mod adam;
pub mod checkpoint;
mod error;
pub mod loss;
pub mod mlp;
pub mod schedule;

pub use adam::{Adam, AdamConfig};
pub use error::{Error, Result};
pub use loss::{masked_mse, masked_mse_grad};
pub use mlp::{Activation, CoordInit, Layer, Mlp, MlpGrads, MlpInit, Trace};
pub use schedule::LrSchedule;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits_shim::FloatLike;

/// Floating-point element type usable by the networks.
pub trait Real:
    LinalgScalar
    + ScalarOperand
    + FloatLike
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::ops::Neg<Output = Self>
    + Default
    + Send
    + Sync
    + std::fmt::Debug
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// The handful of float operations the crate needs, without pulling in a
/// numeric-traits dependency for two impls.
pub mod num_traits_shim {
    pub trait FloatLike: Copy + PartialOrd {
        fn from_f64(v: f64) -> Self;
        fn to_f64(self) -> f64;
        fn exp(self) -> Self;
        fn sqrt(self) -> Self;
        fn is_finite(self) -> bool;
        fn powi(self, n: i32) -> Self;
    }

    macro_rules! impl_float_like {
        ($t:ty) => {
            impl FloatLike for $t {
                #[inline]
                fn from_f64(v: f64) -> Self {
                    v as $t
                }
                #[inline]
                fn to_f64(self) -> f64 {
                    self as f64
                }
                #[inline]
                fn exp(self) -> Self {
                    <$t>::exp(self)
                }
                #[inline]
                fn sqrt(self) -> Self {
                    <$t>::sqrt(self)
                }
                #[inline]
                fn is_finite(self) -> bool {
                    <$t>::is_finite(self)
                }
                #[inline]
                fn powi(self, n: i32) -> Self {
                    <$t>::powi(self, n)
                }
            }
        };
    }

    impl_float_like!(f32);
    impl_float_like!(f64);
}
