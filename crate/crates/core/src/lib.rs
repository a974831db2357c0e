//! Bermudan derivative pricing with valuation adjustments under local Lévy
//! dynamics.
//!
//! The transition law of the state process is not available in closed form
//! when volatility, jump intensity and default intensity depend on the
//! state, so the crate builds a second-order adjoint expansion of its
//! characteristic function ([`charfunc`]) and feeds it to Fourier-cosine
//! machinery ([`cos`]). On top of that sit
//!
//! * a theta-scheme for the pricing BSDE with a nonlinear XVA driver
//!   ([`bsde`], [`bermudan`]),
//! * a fast unilateral CVA pricer with FFT Hankel/Toeplitz products and
//!   closed-form sensitivities ([`cva`]),
//! * a Monte Carlo / least-squares oracle used for validation ([`mc`]).
//!
//! The numerical kernels in [`model`], [`charfunc`] and [`cos`] are generic
//! over the floating point type through [`Real`]; the solvers built on top of
//! them run in `f64`. Concrete aliases for both precisions are exported at
//! the crate root.

pub mod bermudan;
pub mod bsde;
pub mod charfunc;
pub mod cos;
pub mod cva;
pub mod error;
pub mod mc;
pub mod model;

use std::fmt::{Debug, Display};

pub use error::{Error, Result};

/// Floating point scalar accepted by the generic kernels.
pub trait Real:
    num_traits::Float
    + num_traits::FloatConst
    + num_traits::NumAssign
    + rustdct::DctNum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal into the working scalar type.
#[inline]
pub(crate) fn lit<T: Real>(v: f64) -> T {
    T::from(v).expect("literal representable in the scalar type")
}

pub type Complex<T> = num_complex::Complex<T>;

pub type ModelSpecF64 = model::ModelSpec<f64>;
pub type ModelSpecF32 = model::ModelSpec<f32>;
pub type TaylorDataF64 = model::TaylorData<f64>;
pub type TaylorDataF32 = model::TaylorData<f32>;
pub type CharFuncApproxF64 = charfunc::CharFuncApprox<f64>;
pub type CharFuncApproxF32 = charfunc::CharFuncApprox<f32>;
pub type CosGridF64 = cos::CosGrid<f64>;
pub type CosGridF32 = cos::CosGrid<f32>;
pub type CoeffVectorF64 = cos::CoeffVector<f64>;
pub type CoeffVectorF32 = cos::CoeffVector<f32>;
pub type JumpLawF64 = model::JumpLaw<f64>;
pub type CoefficientFamilyF64 = model::CoefficientFamily<f64>;
