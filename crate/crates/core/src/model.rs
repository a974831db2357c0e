//! Defaultable local Lévy model.
//!
//! The log-state follows
//!
//! ```text
//! dX = mu(t,X) dt + sigma(t,X) dW + \int q dÑ(t, X-, dq),   Ñ compensated by a(t,X) nu(dq) dt
//! ```
//!
//! with a Gaussian jump law `nu`, and defaults arrive with local intensity
//! `gamma(t,X)`. The drift is not a free parameter: it is pinned by requiring
//! the discounted defaultable asset `1{t < zeta} e^X` to be a martingale.
//!
//! All coefficient functions are time-homogeneous; `t` is carried through the
//! signatures so that time-dependent families can be added without touching
//! callers.

use crate::{lit, Complex, Error, Real, Result};

/// Closed family of state-dependent coefficient functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoefficientFamily<T> {
    /// Identically zero.
    Zero,
    /// `g(x) = c`.
    Constant(T),
    /// `g(x) = scale * exp(beta * x)`; the CEV-like parameterization.
    Exponential { scale: T, beta: T },
}

impl<T: Real> CoefficientFamily<T> {
    pub fn value(&self, x: T) -> T {
        match *self {
            CoefficientFamily::Zero => T::zero(),
            CoefficientFamily::Constant(c) => c,
            CoefficientFamily::Exponential { scale, beta } => scale * (beta * x).exp(),
        }
    }

    /// k-th derivative at `x` divided by `k!`.
    pub fn taylor_coefficient(&self, x: T, k: usize) -> T {
        match *self {
            CoefficientFamily::Zero => T::zero(),
            CoefficientFamily::Constant(c) => {
                if k == 0 {
                    c
                } else {
                    T::zero()
                }
            }
            CoefficientFamily::Exponential { scale, beta } => {
                let mut coef = scale * (beta * x).exp();
                for i in 1..=k {
                    coef = coef * beta / T::from(i).unwrap();
                }
                coef
            }
        }
    }

    /// True when every derivative of order >= 1 vanishes.
    pub fn is_constant(&self) -> bool {
        match *self {
            CoefficientFamily::Zero | CoefficientFamily::Constant(_) => true,
            CoefficientFamily::Exponential { beta, .. } => beta == T::zero(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            CoefficientFamily::Zero => true,
            CoefficientFamily::Constant(c) => c == T::zero(),
            CoefficientFamily::Exponential { scale, .. } => scale == T::zero(),
        }
    }

    fn scale(&self) -> T {
        match *self {
            CoefficientFamily::Zero => T::zero(),
            CoefficientFamily::Constant(c) => c,
            CoefficientFamily::Exponential { scale, .. } => scale,
        }
    }

    /// `g^2 / 2`, which stays inside the family.
    fn half_square(&self) -> Self {
        let half = lit::<T>(0.5);
        match *self {
            CoefficientFamily::Zero => CoefficientFamily::Zero,
            CoefficientFamily::Constant(c) => CoefficientFamily::Constant(half * c * c),
            CoefficientFamily::Exponential { scale, beta } => CoefficientFamily::Exponential {
                scale: half * scale * scale,
                beta: beta + beta,
            },
        }
    }
}

/// Gaussian jump-size law `N(mean, std^2)`, normalized to unit mass. The
/// jump intensity lives entirely in the local scaling `a(t,x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpLaw<T> {
    pub mean: T,
    pub std: T,
}

impl<T: Real> JumpLaw<T> {
    pub fn new(mean: T, std: T) -> Result<Self> {
        if !(std >= T::zero()) || !mean.is_finite() || !std.is_finite() {
            return Err(Error::InvalidModel(format!(
                "jump law needs finite mean and std >= 0, got mean={mean}, std={std}"
            )));
        }
        Ok(Self { mean, std })
    }

    /// No jumps of nonzero size.
    pub fn degenerate() -> Self {
        Self {
            mean: T::zero(),
            std: T::zero(),
        }
    }

    /// `\int (e^q - 1 - q) nu(dq) = exp(m + d^2/2) - 1 - m`.
    pub fn kappa(&self) -> T {
        (self.mean + lit::<T>(0.5) * self.std * self.std).exp() - T::one() - self.mean
    }

    /// Jump part of the Lévy symbol, `\int (e^{i xi q} - 1 - i xi q) nu(dq)`.
    pub fn transform(&self, xi: T) -> Complex<T> {
        self.transform_derivatives(xi)[0]
    }

    /// The jump transform and its first two derivatives in `xi`.
    pub fn transform_derivatives(&self, xi: T) -> [Complex<T>; 3] {
        let (m, d2) = (self.mean, self.std * self.std);
        let i = Complex::new(T::zero(), T::one());
        let e = Complex::new(-lit::<T>(0.5) * d2 * xi * xi, m * xi).exp();
        let slope = Complex::new(-d2 * xi, m);
        [
            e - T::one() - i * (m * xi),
            slope * e - i * m,
            (slope * slope - d2) * e,
        ]
    }

    /// Raw moments `E[q^2]` and `E[q^4]`.
    pub fn moments_2_4(&self) -> (T, T) {
        let (m, d2) = (self.mean, self.std * self.std);
        let m2 = m * m;
        (m2 + d2, m2 * m2 + lit::<T>(6.0) * m2 * d2 + lit::<T>(3.0) * d2 * d2)
    }
}

/// The dynamics of the defaultable local Lévy model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec<T> {
    pub vol: CoefficientFamily<T>,
    pub jump_intensity: CoefficientFamily<T>,
    pub jump: JumpLaw<T>,
    pub default_intensity: CoefficientFamily<T>,
    pub rate: T,
    /// Log-spot `X_0`.
    pub spot: T,
}

impl<T: Real> ModelSpec<T> {
    pub fn new(
        vol: CoefficientFamily<T>,
        jump_intensity: CoefficientFamily<T>,
        jump: JumpLaw<T>,
        default_intensity: CoefficientFamily<T>,
        rate: T,
        spot: T,
    ) -> Result<Self> {
        let model = Self {
            vol,
            jump_intensity,
            jump,
            default_intensity,
            rate,
            spot,
        };
        model.validate()?;
        Ok(model)
    }

    /// The CEV-like parameterization `sigma = b e^{beta x}`, `a = lambda e^{beta x}`,
    /// `gamma = c e^{beta x}`.
    #[allow(clippy::too_many_arguments)]
    pub fn cev_like(
        b: T,
        beta: T,
        lambda: T,
        jump_mean: T,
        jump_std: T,
        default_scale: T,
        rate: T,
        spot: T,
    ) -> Result<Self> {
        let default_intensity = if default_scale == T::zero() {
            CoefficientFamily::Zero
        } else {
            CoefficientFamily::Exponential {
                scale: default_scale,
                beta,
            }
        };
        Self::new(
            CoefficientFamily::Exponential { scale: b, beta },
            CoefficientFamily::Exponential {
                scale: lambda,
                beta,
            },
            JumpLaw::new(jump_mean, jump_std)?,
            default_intensity,
            rate,
            spot,
        )
    }

    fn validate(&self) -> Result<()> {
        if matches!(self.vol, CoefficientFamily::Zero) || !(self.vol.scale() > T::zero()) {
            return Err(Error::InvalidModel(
                "volatility must be strictly positive".into(),
            ));
        }
        if !(self.jump_intensity.scale() >= T::zero()) {
            return Err(Error::InvalidModel(
                "jump intensity scale must be >= 0".into(),
            ));
        }
        if !(self.default_intensity.scale() >= T::zero()) {
            return Err(Error::InvalidModel(
                "default intensity scale must be >= 0".into(),
            ));
        }
        if !(self.jump.std >= T::zero()) {
            return Err(Error::InvalidModel("jump std must be >= 0".into()));
        }
        if !self.rate.is_finite() || !self.spot.is_finite() {
            return Err(Error::InvalidModel("rate and spot must be finite".into()));
        }
        Ok(())
    }

    /// Checks the pointwise invariants on a working grid.
    pub fn validate_on(&self, t: T, points: &[T]) -> Result<()> {
        for &x in points {
            let (sig, a, g) = (
                self.sigma(t, x),
                self.jump_intensity_at(t, x),
                self.default_intensity_at(t, x),
            );
            if !(sig > T::zero()) || !sig.is_finite() {
                return Err(Error::InvalidModel(format!("sigma({x}) = {sig} is not > 0")));
            }
            if !(a >= T::zero()) || !a.is_finite() {
                return Err(Error::InvalidModel(format!("a({x}) = {a} is not >= 0")));
            }
            if !(g >= T::zero()) || !g.is_finite() {
                return Err(Error::InvalidModel(format!("gamma({x}) = {g} is not >= 0")));
            }
        }
        Ok(())
    }

    pub fn sigma(&self, _t: T, x: T) -> T {
        self.vol.value(x)
    }

    /// `sigma^2 / 2`.
    pub fn half_variance(&self, _t: T, x: T) -> T {
        self.vol.half_square().value(x)
    }

    pub fn jump_intensity_at(&self, _t: T, x: T) -> T {
        self.jump_intensity.value(x)
    }

    pub fn default_intensity_at(&self, _t: T, x: T) -> T {
        self.default_intensity.value(x)
    }

    pub fn kappa(&self) -> T {
        self.jump.kappa()
    }

    /// Risk-neutral drift `gamma + r - sigma^2/2 - a kappa`.
    pub fn drift(&self, t: T, x: T) -> T {
        self.default_intensity_at(t, x) + self.rate
            - self.half_variance(t, x)
            - self.jump_intensity_at(t, x) * self.kappa()
    }

    pub fn has_default(&self) -> bool {
        !self.default_intensity.is_zero()
    }

    pub fn is_constant_coefficient(&self) -> bool {
        self.vol.is_constant() && self.jump_intensity.is_constant() && self.default_intensity.is_constant()
    }

    /// The same dynamics with the default intensity switched off; the drift
    /// loses its `gamma` term accordingly.
    pub fn default_free(&self) -> Self {
        Self {
            default_intensity: CoefficientFamily::Zero,
            ..self.clone()
        }
    }

    pub fn with_default(&self, default_intensity: CoefficientFamily<T>) -> Self {
        Self {
            default_intensity,
            ..self.clone()
        }
    }

    pub fn with_spot(&self, spot: T) -> Self {
        Self {
            spot,
            ..self.clone()
        }
    }

    /// Taylor data of `sigma^2/2`, `mu`, `gamma` and `a` around `basepoint`.
    pub fn taylor_expand(&self, t: T, basepoint: T, order: usize) -> Result<TaylorData<T>> {
        taylor_expand(self, t, basepoint, order)
    }
}

/// `\int (e^q - 1 - q) nu(dq)` for the Gaussian law.
pub fn jump_compensator_kappa<T: Real>(jump: &JumpLaw<T>) -> T {
    jump.kappa()
}

pub fn martingale_drift<T: Real>(model: &ModelSpec<T>, t: T, x: T) -> T {
    model.drift(t, x)
}

/// Coefficient sequences `k = 0..=order` (k-th derivative over k!) of the
/// model's state-dependent coefficients around `basepoint`.
pub fn taylor_expand<T: Real>(
    model: &ModelSpec<T>,
    _t: T,
    basepoint: T,
    order: usize,
) -> Result<TaylorData<T>> {
    if order > TaylorData::<T>::MAX_ORDER {
        return Err(Error::UnsupportedOrder(order));
    }
    let half_var = model.vol.half_square();
    let kappa = model.kappa();
    let mut s = Vec::with_capacity(order + 1);
    let mut mu = Vec::with_capacity(order + 1);
    let mut gamma = Vec::with_capacity(order + 1);
    let mut a = Vec::with_capacity(order + 1);
    for k in 0..=order {
        let sk = half_var.taylor_coefficient(basepoint, k);
        let gk = model.default_intensity.taylor_coefficient(basepoint, k);
        let ak = model.jump_intensity.taylor_coefficient(basepoint, k);
        let rk = if k == 0 { model.rate } else { T::zero() };
        s.push(sk);
        gamma.push(gk);
        a.push(ak);
        mu.push(gk + rk - sk - ak * kappa);
    }
    Ok(TaylorData {
        basepoint,
        order,
        s,
        mu,
        gamma,
        a,
        jump: model.jump,
    })
}

/// Local polynomial description of the generator around a basepoint.
///
/// Any set of Taylor coefficients is accepted through [`TaylorData::from_tabulated`];
/// the model families produce them through [`ModelSpec::taylor_expand`].
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorData<T> {
    pub basepoint: T,
    pub order: usize,
    /// Coefficients of `sigma^2 / 2`.
    pub s: Vec<T>,
    pub mu: Vec<T>,
    pub gamma: Vec<T>,
    pub a: Vec<T>,
    pub jump: JumpLaw<T>,
}

impl<T: Real> TaylorData<T> {
    pub const MAX_ORDER: usize = 2;

    pub fn from_tabulated(
        basepoint: T,
        jump: JumpLaw<T>,
        s: Vec<T>,
        mu: Vec<T>,
        gamma: Vec<T>,
        a: Vec<T>,
    ) -> Result<Self> {
        let len = s.len();
        if len == 0 || mu.len() != len || gamma.len() != len || a.len() != len {
            return Err(Error::InvalidArgument(
                "tabulated Taylor data needs four sequences of equal, nonzero length".into(),
            ));
        }
        if len - 1 > Self::MAX_ORDER {
            return Err(Error::UnsupportedOrder(len - 1));
        }
        Ok(Self {
            basepoint,
            order: len - 1,
            s,
            mu,
            gamma,
            a,
            jump,
        })
    }

    pub fn is_default_free(&self) -> bool {
        self.gamma.iter().all(|g| *g == T::zero())
    }

    /// Keeps only the first `order + 1` coefficients.
    pub fn truncated(&self, order: usize) -> Result<Self> {
        if order > self.order {
            return Err(Error::UnsupportedOrder(order));
        }
        let cut = |v: &Vec<T>| v[..=order].to_vec();
        Ok(Self {
            basepoint: self.basepoint,
            order,
            s: cut(&self.s),
            mu: cut(&self.mu),
            gamma: cut(&self.gamma),
            a: cut(&self.a),
            jump: self.jump,
        })
    }
}
