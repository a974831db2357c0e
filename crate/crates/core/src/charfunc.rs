//! Adjoint-expansion approximation of the characteristic function.
//!
//! Freezing the Taylor data of the generator at a basepoint `xbar` gives a
//! constant-coefficient (Merton-with-killing) operator with Lévy symbol
//! `psi`. The higher-order terms solve the Duhamel recursion
//!
//! ```text
//! (d_t + A_0) G^k = - sum_{h=1..k} (x - xbar)^h A_h G^{k-h},   G^k(T) = 0
//! ```
//!
//! in Fourier space. Writing `G^k = e^{i xi x} e^{tau psi} w_k(tau, x - xbar)`
//! with `tau = T - t` turns every step into a triangular system of linear
//! ODEs for the polynomial `w_k`, whose solutions are polynomials in `tau`.
//! For time-homogeneous coefficients they are integrated in closed form
//! below, so that
//!
//! ```text
//! Gamma^(n)(t, x; T, xi) = e^{i xi x} sum_{k=0..n} (x - xbar)^k g_{n,k}(t, T, xi).
//! ```

use crate::model::TaylorData;
use crate::{lit, Complex, Error, Real, Result};

/// Frequencies together with the jump transform and its first two
/// derivatives, which do not depend on the basepoint.
#[derive(Debug, Clone)]
pub struct FrequencyLadder<T> {
    pub xi: Vec<T>,
    jump: Vec<[Complex<T>; 3]>,
    jump_mean: T,
    jump_std: T,
}

impl<T: Real> FrequencyLadder<T> {
    pub fn new(xi: Vec<T>, jump: &crate::model::JumpLaw<T>) -> Self {
        let table = xi.iter().map(|&x| jump.transform_derivatives(x)).collect();
        Self {
            xi,
            jump: table,
            jump_mean: jump.mean,
            jump_std: jump.std,
        }
    }

    /// `xi_j = j pi / (b - a)` for `j < n`.
    pub fn cosine(a: T, b: T, n: usize, jump: &crate::model::JumpLaw<T>) -> Self {
        let w = T::PI() / (b - a);
        Self::new((0..n).map(|j| T::from(j).unwrap() * w).collect(), jump)
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    fn matches(&self, taylor: &TaylorData<T>) -> bool {
        self.jump_mean == taylor.jump.mean && self.jump_std == taylor.jump.std
    }
}

/// Whether the killing rate was part of the expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    DefaultFree,
    Defaultable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharFuncApprox<T> {
    pub order: usize,
    pub basepoint: T,
    pub t: T,
    pub t_end: T,
    pub freqs: Vec<T>,
    /// `coeffs[k][j] = g_{n,k}(t, T, xi_j)`.
    pub coeffs: Vec<Vec<Complex<T>>>,
    pub variant: Variant,
}

/// `psi_h^{(m)}(xi)` for m = 0, 1, 2, the symbol of the h-th Taylor
/// correction of the generator and its derivatives.
#[inline]
fn symbol_derivatives<T: Real>(td: &TaylorData<T>, h: usize, xi: T, jump: &[Complex<T>; 3]) -> [Complex<T>; 3] {
    let (s, mu, g, a) = (td.s[h], td.mu[h], td.gamma[h], td.a[h]);
    let two = lit::<T>(2.0);
    [
        Complex::new(-s * xi * xi - g, mu * xi) + jump[0] * a,
        Complex::new(-two * s * xi, mu) + jump[1] * a,
        Complex::new(-two * s, T::zero()) + jump[2] * a,
    ]
}

/// Lévy symbol of the frozen generator,
/// `psi(xi) = i xi mu_0 - s_0 xi^2 - gamma_0 + a_0 (e^{i m xi - d^2 xi^2 / 2} - 1 - i m xi)`.
pub fn levy_symbol_psi<T: Real>(taylor: &TaylorData<T>, xi: T) -> Complex<T> {
    symbol_derivatives(taylor, 0, xi, &taylor.jump.transform_derivatives(xi))[0]
}

/// The operator coefficients `c_{h,m} = psi_h^{(m)} (-i)^m / m!`.
#[inline]
fn operator_coefficients<T: Real>(td: &TaylorData<T>, xi: T, jump: &[Complex<T>; 3]) -> [[Complex<T>; 3]; 3] {
    let mut c = [[Complex::new(T::zero(), T::zero()); 3]; 3];
    let minus_i = Complex::new(T::zero(), -T::one());
    let minus_half = lit::<T>(-0.5);
    for (h, row) in c.iter_mut().enumerate().take(td.order + 1) {
        let d = symbol_derivatives(td, h, xi, jump);
        *row = [d[0], d[1] * minus_i, d[2] * minus_half];
    }
    c
}

/// `g_{n,k}(tau, xi)` for k = 0..=n at one frequency; entries above n are zero.
#[inline]
fn coefficients_at<T: Real>(td: &TaylorData<T>, order: usize, tau: T, xi: T, jump: &[Complex<T>; 3]) -> [Complex<T>; 3] {
    let c = operator_coefficients(td, xi, jump);
    let e = (c[0][0] * tau).exp();
    let zero = Complex::new(T::zero(), T::zero());
    if order == 0 {
        return [e, zero, zero];
    }
    let (c01, c02) = (c[0][1], c[0][2]);
    let (c10, c11) = (c[1][0], c[1][1]);
    let tau2 = tau * tau;
    let half = lit::<T>(0.5);

    // first correction: w_1 = alpha1 + beta1 y
    let beta1 = c10 * tau;
    let alpha1 = c01 * c10 * (half * tau2);
    if order == 1 {
        return [e * (alpha1 + T::one()), e * beta1, zero];
    }

    // second correction: w_2 = A + B y + C y^2
    let c20 = c[2][0];
    let tau3 = tau2 * tau;
    let c10sq = c10 * c10;
    let mixed = c11 * c10 + c01 * c20 * lit::<T>(2.0);
    let cc = c10sq * (half * tau2) + c20 * tau;
    let bb = c01 * c10sq * (half * tau3) + mixed * (half * tau2);
    let aa = c01 * c01 * c10sq * (tau2 * tau2 / lit::<T>(8.0))
        + c01 * mixed * (tau3 / lit::<T>(6.0))
        + c02 * c10sq * (tau3 / lit::<T>(3.0))
        + c02 * c20 * tau2;
    [e * (alpha1 + aa + T::one()), e * (beta1 + bb), e * cc]
}

impl<T: Real> CharFuncApprox<T> {
    /// Builds the order-`order` approximation over `[t, t_end]` on the given ladder.
    pub fn build(taylor: &TaylorData<T>, t: T, t_end: T, ladder: &FrequencyLadder<T>, order: usize) -> Result<Self> {
        if order > TaylorData::<T>::MAX_ORDER {
            return Err(Error::UnsupportedOrder(order));
        }
        if order > taylor.order {
            return Err(Error::InvalidArgument(format!(
                "expansion of order {order} needs Taylor data of order >= {order}, got {}",
                taylor.order
            )));
        }
        if !(t_end >= t) {
            return Err(Error::InvalidArgument(format!("time window [{t}, {t_end}] is reversed")));
        }
        if !ladder.matches(taylor) {
            return Err(Error::InvalidArgument("frequency ladder was built for another jump law".into()));
        }
        let tau = t_end - t;
        let mut coeffs = vec![Vec::with_capacity(ladder.len()); order + 1];
        for (xi, jump) in ladder.xi.iter().zip(&ladder.jump) {
            let g = coefficients_at(taylor, order, tau, *xi, jump);
            for (k, col) in coeffs.iter_mut().enumerate() {
                col.push(g[k]);
            }
        }
        Ok(Self {
            order,
            basepoint: taylor.basepoint,
            t,
            t_end,
            freqs: ladder.xi.clone(),
            coeffs,
            variant: if taylor.is_default_free() {
                Variant::DefaultFree
            } else {
                Variant::Defaultable
            },
        })
    }

    /// Order 0: `g_{0,0} = e^{(T - t) psi}`.
    pub fn build_order0(taylor: &TaylorData<T>, t: T, t_end: T, ladder: &FrequencyLadder<T>) -> Result<Self> {
        Self::build(taylor, t, t_end, ladder, 0)
    }

    pub fn build_order_n(taylor: &TaylorData<T>, t: T, t_end: T, ladder: &FrequencyLadder<T>, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("use build_order0 for n = 0".into()));
        }
        Self::build(taylor, t, t_end, ladder, n)
    }

    /// `e^{i xi x} sum_k (x - xbar)^k g_{n,k}(xi)` on the frequency grid.
    pub fn eval(&self, x: T) -> Vec<Complex<T>> {
        let dy = x - self.basepoint;
        self.freqs
            .iter()
            .enumerate()
            .map(|(j, &xi)| {
                let mut acc = self.coeffs[self.order][j];
                for k in (0..self.order).rev() {
                    acc = acc * dy + self.coeffs[k][j];
                }
                Complex::from_polar(T::one(), xi * x) * acc
            })
            .collect()
    }

    /// Same as [`eval`](Self::eval) but with the phase shifted to `x - a`,
    /// the form consumed by the cosine expansions.
    pub fn eval_shifted(&self, x: T, a: T) -> Vec<Complex<T>> {
        let dy = x - self.basepoint;
        self.freqs
            .iter()
            .enumerate()
            .map(|(j, &xi)| {
                let mut acc = self.coeffs[self.order][j];
                for k in (0..self.order).rev() {
                    acc = acc * dy + self.coeffs[k][j];
                }
                Complex::from_polar(T::one(), xi * (x - a)) * acc
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }
}

/// `g_{n,0}` only, written into `out`; used when the basepoint coincides
/// with the evaluation point so that the corrections in `x - xbar` vanish.
pub fn diagonal_coefficients<T: Real>(
    taylor: &TaylorData<T>,
    tau: T,
    ladder: &FrequencyLadder<T>,
    order: usize,
    out: &mut Vec<Complex<T>>,
) {
    out.clear();
    out.extend(
        ladder
            .xi
            .iter()
            .zip(&ladder.jump)
            .map(|(xi, jump)| coefficients_at(taylor, order, tau, *xi, jump)[0]),
    );
}

/// Cumulants `(c1, c2, c4)` of `X_T - X_t` under the frozen (order-0) law.
pub fn cumulants<T: Real>(taylor: &TaylorData<T>, t: T, t_end: T) -> (T, T, T) {
    let tau = t_end - t;
    let (q2, q4) = taylor.jump.moments_2_4();
    let a0 = taylor.a[0];
    (
        tau * taylor.mu[0],
        tau * (lit::<T>(2.0) * taylor.s[0] + a0 * q2),
        tau * a0 * q4,
    )
}
