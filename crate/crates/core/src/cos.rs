//! Fourier-cosine machinery on a truncated interval `[a, b]`.
//!
//! Grid nodes are midpoints `x_i = a + (i + 1/2)(b - a)/J` and frequencies
//! are `xi_j = j pi / (b - a)`. Cosine coefficients are stored unhalved; the
//! primed sums that weight the first term by one half go through
//! [`sum_prime`] / [`prime_weight`].

use std::sync::Arc;

use rustdct::{DctPlanner, TransformType2And3};
use rustfft::{Fft, FftPlanner};

use crate::charfunc::{CharFuncApprox, FrequencyLadder};
use crate::model::JumpLaw;
use crate::{lit, Complex, Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosGrid<T> {
    pub a: T,
    pub b: T,
    pub n: usize,
}

impl<T: Real> CosGrid<T> {
    pub fn new(a: T, b: T, n: usize) -> Result<Self> {
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidGrid(format!("need finite a < b, got [{a}, {b}]")));
        }
        if n < 2 {
            return Err(Error::InvalidGrid(format!("need J >= 2 nodes, got {n}")));
        }
        Ok(Self { a, b, n })
    }

    /// Grid on the cumulant-based truncation range.
    pub fn from_cumulants(c1: T, c2: T, c4: T, l: T, n: usize) -> Result<Self> {
        let (a, b) = truncation_range(c1, c2, c4, l)?;
        Self::new(a, b, n)
    }

    pub fn width(&self) -> T {
        self.b - self.a
    }

    pub fn dx(&self) -> T {
        self.width() / T::from(self.n).unwrap()
    }

    /// `pi / (b - a)`.
    pub fn omega(&self) -> T {
        T::PI() / self.width()
    }

    pub fn node(&self, i: usize) -> T {
        self.a + (T::from(i).unwrap() + lit(0.5)) * self.dx()
    }

    pub fn nodes(&self) -> Vec<T> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    pub fn freq(&self, j: usize) -> T {
        T::from(j).unwrap() * self.omega()
    }

    pub fn freqs(&self) -> Vec<T> {
        (0..self.n).map(|j| self.freq(j)).collect()
    }

    pub fn ladder(&self, jump: &JumpLaw<T>) -> FrequencyLadder<T> {
        FrequencyLadder::cosine(self.a, self.b, self.n, jump)
    }

    pub fn contains(&self, x: T) -> bool {
        x >= self.a && x <= self.b
    }
}

/// Cosine coefficients `H_j`, tagged with the time level they represent.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffVector<T> {
    pub values: Vec<T>,
    pub time: T,
}

impl<T: Real> CoeffVector<T> {
    pub fn zeros(n: usize, time: T) -> Self {
        Self {
            values: vec![T::zero(); n],
            time,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Weight of term `j` in a primed sum.
#[inline]
pub fn prime_weight<T: Real>(j: usize) -> T {
    if j == 0 {
        lit(0.5)
    } else {
        T::one()
    }
}

/// Sum with the first term weighted by one half.
pub fn sum_prime<T: Real>(terms: impl IntoIterator<Item = T>) -> T {
    let mut it = terms.into_iter();
    let first = it.next().map_or(T::zero(), |v| v * lit(0.5));
    it.fold(first, |acc, v| acc + v)
}

/// `[c1 - L sqrt(c2 + sqrt(c4)), c1 + L sqrt(c2 + sqrt(c4))]`.
pub fn truncation_range<T: Real>(c1: T, c2: T, c4: T, l: T) -> Result<(T, T)> {
    if !(c2 >= T::zero()) || !(c4 >= T::zero()) || !(l > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "truncation range needs c2 >= 0, c4 >= 0, L > 0; got c2={c2}, c4={c4}, L={l}"
        )));
    }
    let spread = c2 + c4.sqrt();
    if spread == T::zero() {
        return Err(Error::DegenerateDistribution);
    }
    let half = l * spread.sqrt();
    Ok((c1 - half, c1 + half))
}

/// Reusable DCT-II plan producing `H_j = (2/J) sum_i h(x_i) cos(j pi (2i+1) / (2J))`.
pub struct DctEngine<T: Real> {
    plan: Arc<dyn TransformType2And3<T>>,
    scratch: Vec<T>,
}

impl<T: Real> DctEngine<T> {
    pub fn new(n: usize) -> Self {
        let plan = DctPlanner::new().plan_dct2(n);
        let scratch = vec![T::zero(); plan.get_scratch_len()];
        Self { plan, scratch }
    }

    pub fn len(&self) -> usize {
        self.plan.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Transforms `values` into `out` (resized to J).
    pub fn transform_into(&mut self, values: &[T], out: &mut Vec<T>) {
        let n = self.plan.len();
        assert_eq!(values.len(), n, "DCT input length must equal the plan length");
        out.clear();
        out.extend_from_slice(values);
        self.plan.process_dct2_with_scratch(out, &mut self.scratch);
        let scale = lit::<T>(2.0) / T::from(n).unwrap();
        for v in out.iter_mut() {
            *v *= scale;
        }
    }

    pub fn transform(&mut self, values: &[T]) -> Vec<T> {
        let mut out = Vec::with_capacity(values.len());
        self.transform_into(values, &mut out);
        out
    }
}

/// Cosine coefficients of grid values by the midpoint rule, in O(J log J).
pub fn dct_coeffs<T: Real>(values: &[T], grid: &CosGrid<T>, time: T) -> Result<CoeffVector<T>> {
    if values.len() != grid.n {
        return Err(Error::InvalidArgument(format!(
            "expected {} grid values, got {}",
            grid.n,
            values.len()
        )));
    }
    Ok(CoeffVector {
        values: DctEngine::new(grid.n).transform(values),
        time,
    })
}

/// `sum'_j H_j cos(j pi (x - a) / (b - a))`.
pub fn cosine_series<T: Real>(h: &CoeffVector<T>, grid: &CosGrid<T>, x: T) -> T {
    let w = grid.omega() * (x - grid.a);
    sum_prime(h.values.iter().enumerate().map(|(j, &v)| v * (T::from(j).unwrap() * w).cos()))
}

fn check_shared<T: Real>(h: &CoeffVector<T>, cf: &CharFuncApprox<T>, grid: &CosGrid<T>) -> Result<()> {
    if h.len() != cf.len() || h.len() != grid.n {
        return Err(Error::InvalidArgument(format!(
            "coefficient vector ({}), characteristic function ({}) and grid ({}) sizes differ",
            h.len(),
            cf.len(),
            grid.n
        )));
    }
    Ok(())
}

/// `sum'_j H_j Re(Gamma(x, xi_j) e^{-i xi_j a})`: the COS estimate of `E[h(X') | X = x]`.
pub fn cos_expectation<T: Real>(h: &CoeffVector<T>, cf: &CharFuncApprox<T>, grid: &CosGrid<T>, x: T) -> Result<T> {
    check_shared(h, cf, grid)?;
    let gamma = cf.eval_shifted(x, grid.a);
    Ok(sum_prime(h.values.iter().zip(&gamma).map(|(&v, g)| v * g.re)))
}

/// `dt sigma sum'_j H_j Re(i xi_j Gamma(x, xi_j) e^{-i xi_j a})`: the COS
/// estimate of `E[h(X') dW | X = x]`.
pub fn cos_expectation_dw<T: Real>(
    h: &CoeffVector<T>,
    cf: &CharFuncApprox<T>,
    grid: &CosGrid<T>,
    x: T,
    sigma: T,
    dt: T,
) -> Result<T> {
    check_shared(h, cf, grid)?;
    if !(dt > T::zero()) {
        return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
    }
    let gamma = cf.eval_shifted(x, grid.a);
    let s = sum_prime(
        h.values
            .iter()
            .zip(&gamma)
            .zip(&cf.freqs)
            // Re(i xi g) = -xi Im(g)
            .map(|((&v, g), &xi)| -v * xi * g.im),
    );
    Ok(dt * sigma * s)
}

/// `\int_c^d e^x cos(k pi (x - a) / (b - a)) dx`.
pub fn chi<T: Real>(grid: &CosGrid<T>, k: usize, c: T, d: T) -> T {
    let w = grid.freq(k);
    let (ud, uc) = (w * (d - grid.a), w * (c - grid.a));
    let (ed, ec) = (d.exp(), c.exp());
    (ud.cos() * ed - uc.cos() * ec + w * (ud.sin() * ed - uc.sin() * ec)) / (T::one() + w * w)
}

/// `\int_c^d cos(k pi (x - a) / (b - a)) dx`.
pub fn psi<T: Real>(grid: &CosGrid<T>, k: usize, c: T, d: T) -> T {
    if k == 0 {
        return d - c;
    }
    let w = grid.freq(k);
    ((w * (d - grid.a)).sin() - (w * (c - grid.a)).sin()) / w
}

/// Exact cosine coefficients of `(K - e^x)^+` restricted to `[a, x_upper]`.
pub fn put_payoff_coeffs<T: Real>(k: T, grid: &CosGrid<T>, x_upper: T, time: T) -> Result<CoeffVector<T>> {
    if !(k > T::zero()) {
        return Err(Error::InvalidPayoff(format!("strike must be > 0, got {k}")));
    }
    if x_upper > k.ln() {
        return Err(Error::InvalidArgument(format!(
            "upper limit {x_upper} exceeds log K = {}",
            k.ln()
        )));
    }
    if x_upper <= grid.a {
        return Ok(CoeffVector::zeros(grid.n, time));
    }
    let hi = x_upper.min(grid.b);
    let scale = lit::<T>(2.0) / grid.width();
    Ok(CoeffVector {
        values: (0..grid.n)
            .map(|j| scale * (k * psi(grid, j, grid.a, hi) - chi(grid, j, grid.a, hi)))
            .collect(),
        time,
    })
}

/// Exact rotations `e^{i n w d}` are re-anchored this often so the
/// multiplicative recurrence cannot drift.
pub(crate) const ROTATION_ANCHOR: usize = 64;

/// `e^{i n theta}` for n = 0, 1, ... by repeated rotation.
pub(crate) fn rotation_iter<T: Real>(theta: T) -> impl Iterator<Item = Complex<T>> {
    let step = Complex::from_polar(T::one(), theta);
    let mut z = Complex::new(T::one(), T::zero());
    (0..).map(move |n: usize| {
        if n % ROTATION_ANCHOR == 0 {
            z = Complex::from_polar(T::one(), T::from(n).unwrap() * theta);
        }
        let out = z;
        z = z * step;
        out
    })
}

/// `e^{i n theta}` for n = 0..count.
pub(crate) fn rotations<T: Real>(theta: T, count: usize) -> Vec<Complex<T>> {
    rotation_iter(theta).take(count).collect()
}

/// `Phi_h(n) = \int_{x1}^{x2} e^{i n w (x - a)} (x - xbar)^h dx` for n = 0..count.
pub fn phi_moments<T: Real>(grid: &CosGrid<T>, x1: T, x2: T, xbar: T, h: usize, count: usize) -> Vec<Complex<T>> {
    let w = grid.omega();
    let (y1, y2) = (x1 - xbar, x2 - xbar);
    // (-1)^l h!/(h-l)! y^{h-l} for l = 0..=h
    let weights = |y: T| -> Vec<T> {
        let mut c = Vec::with_capacity(h + 1);
        let mut falling = T::one();
        for l in 0..=h {
            let sign = if l % 2 == 0 { T::one() } else { -T::one() };
            c.push(sign * falling * y.powi((h - l) as i32));
            falling = falling * T::from(h - l).unwrap();
        }
        c
    };
    let (c1, c2) = (weights(y1), weights(y2));
    let (r1, r2) = (rotations(w * (x1 - grid.a), count), rotations(w * (x2 - grid.a), count));
    let mut out = Vec::with_capacity(count);
    for n in 0..count {
        if n == 0 {
            let p = T::from(h + 1).unwrap();
            out.push(Complex::new((y2.powi(h as i32 + 1) - y1.powi(h as i32 + 1)) / p, T::zero()));
            continue;
        }
        // antiderivative e^{alpha (x - a)} sum_l (-1)^l h!/(h-l)! (x - xbar)^{h-l} / alpha^{l+1}, alpha = i n w
        let inv = Complex::new(T::zero(), -T::one() / (T::from(n).unwrap() * w));
        let (mut s1, mut s2) = (Complex::new(T::zero(), T::zero()), Complex::new(T::zero(), T::zero()));
        let mut pow = inv;
        for l in 0..=h {
            s1 += pow * c1[l];
            s2 += pow * c2[l];
            pow *= inv;
        }
        out.push(r2[n] * s2 - r1[n] * s1);
    }
    out
}

fn check_product_inputs<T: Real>(grid: &CosGrid<T>, v: &[T], lambdas: &[Vec<Complex<T>>], x1: T, x2: T) -> Result<()> {
    if lambdas.len() > 3 {
        return Err(Error::UnsupportedOrder(lambdas.len() - 1));
    }
    if v.len() != grid.n || lambdas.iter().any(|l| l.len() != grid.n) {
        return Err(Error::InvalidArgument("coefficient vector and diagonal sizes must equal J".into()));
    }
    check_window(grid, x1, x2)
}

fn check_window<T: Real>(grid: &CosGrid<T>, x1: T, x2: T) -> Result<()> {
    let tol = grid.width() * lit(1e-12);
    if x1 < grid.a - tol || x2 > grid.b + tol {
        return Err(Error::InvalidArgument(format!(
            "integration window [{x1}, {x2}] is not inside [{}, {}]",
            grid.a, grid.b
        )));
    }
    Ok(())
}

/// Computes `out_j = sum_h Re sum'_k V_k lambda_h(xi_k) (2/(b-a)) \int_{x1}^{x2}
/// e^{i xi_k (x - a)} (x - xbar)^h cos(xi_j (x - a)) dx` with FFT-based
/// Hankel and Toeplitz products.
pub struct HankelToeplitz<T: Real> {
    n: usize,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
    scratch: Vec<Complex<T>>,
    u: Vec<Complex<T>>,
    u_rev: Vec<Complex<T>>,
    acc: Vec<Complex<T>>,
}

impl<T: Real> HankelToeplitz<T> {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(2 * n);
        let inverse = planner.plan_fft_inverse(2 * n);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        let zero = Complex::new(T::zero(), T::zero());
        Self {
            n,
            forward,
            inverse,
            scratch: vec![zero; scratch_len],
            u: vec![zero; 2 * n],
            u_rev: vec![zero; 2 * n],
            acc: vec![zero; 2 * n],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Sum over `h = 0..lambdas.len()` of the order-h products.
    pub fn continuation(
        &mut self,
        grid: &CosGrid<T>,
        v: &[T],
        lambdas: &[Vec<Complex<T>>],
        x1: T,
        x2: T,
        xbar: T,
    ) -> Result<Vec<T>> {
        self.check_grid(grid)?;
        check_product_inputs(grid, v, lambdas, x1, x2)?;
        let spectra = self.window_spectra(grid, lambdas.len(), x1, x2, xbar)?;
        self.reset();
        self.accumulate(v, lambdas, &spectra)?;
        Ok(self.finish(grid))
    }

    fn check_grid(&self, grid: &CosGrid<T>) -> Result<()> {
        if grid.n != self.n {
            return Err(Error::InvalidArgument(format!(
                "engine built for J={}, grid has J={}",
                self.n, grid.n
            )));
        }
        Ok(())
    }

    /// Transformed Toeplitz and Hankel kernels of orders `0..orders` on the
    /// window `[x1, x2]`; valid for as long as the window and basepoint stay.
    pub fn window_spectra(&mut self, grid: &CosGrid<T>, orders: usize, x1: T, x2: T, xbar: T) -> Result<WindowSpectra<T>> {
        self.check_grid(grid)?;
        check_window(grid, x1, x2)?;
        if orders > 3 {
            return Err(Error::UnsupportedOrder(orders - 1));
        }
        let n = self.n;
        if x2 <= x1 {
            return Ok(WindowSpectra { kernels: Vec::new() });
        }
        let zero = Complex::new(T::zero(), T::zero());
        let mut kernels = Vec::with_capacity(orders);
        for h in 0..orders {
            let phi = phi_moments(grid, x1, x2, xbar, h, 2 * n - 1);
            let mut toeplitz = vec![zero; 2 * n];
            let mut hankel = vec![zero; 2 * n];
            // Toeplitz kernel c[m] = Phi(-m), Hankel kernel d[m] = Phi(J - 1 + m), m in (-J, J)
            toeplitz[0] = phi[0].conj();
            hankel[0] = phi[n - 1];
            for m in 1..n {
                toeplitz[m] = phi[m].conj();
                toeplitz[2 * n - m] = phi[m];
                hankel[m] = phi[n - 1 + m];
                hankel[2 * n - m] = phi[n - 1 - m];
            }
            self.forward.process_with_scratch(&mut toeplitz, &mut self.scratch);
            self.forward.process_with_scratch(&mut hankel, &mut self.scratch);
            kernels.push((toeplitz, hankel));
        }
        Ok(WindowSpectra { kernels })
    }

    /// Clears the spectral accumulator.
    pub fn reset(&mut self) {
        let zero = Complex::new(T::zero(), T::zero());
        self.acc.iter_mut().for_each(|c| *c = zero);
    }

    /// Adds the products of `V` against one window to the accumulator.
    pub fn accumulate(&mut self, v: &[T], lambdas: &[Vec<Complex<T>>], spectra: &WindowSpectra<T>) -> Result<()> {
        let n = self.n;
        if v.len() != n || lambdas.iter().any(|l| l.len() != n) {
            return Err(Error::InvalidArgument("coefficient vector and diagonal sizes must equal J".into()));
        }
        if spectra.kernels.is_empty() {
            return Ok(());
        }
        if lambdas.len() > spectra.kernels.len() {
            return Err(Error::InvalidArgument(format!(
                "window spectra cover {} orders, {} requested",
                spectra.kernels.len(),
                lambdas.len()
            )));
        }
        let zero = Complex::new(T::zero(), T::zero());
        for (lambda, (toeplitz, hankel)) in lambdas.iter().zip(&spectra.kernels) {
            self.u.iter_mut().for_each(|c| *c = zero);
            self.u_rev.iter_mut().for_each(|c| *c = zero);
            for k in 0..n {
                let u = lambda[k] * (v[k] * prime_weight::<T>(k));
                self.u[k] = u;
                self.u_rev[n - 1 - k] = u;
            }
            self.forward.process_with_scratch(&mut self.u, &mut self.scratch);
            self.forward.process_with_scratch(&mut self.u_rev, &mut self.scratch);
            for i in 0..2 * n {
                self.acc[i] += self.u[i] * toeplitz[i] + self.u_rev[i] * hankel[i];
            }
        }
        Ok(())
    }

    /// Inverse transform of the accumulator: the summed continuation
    /// coefficients. Leaves the accumulator cleared.
    pub fn finish(&mut self, grid: &CosGrid<T>) -> Vec<T> {
        let n = self.n;
        self.inverse.process_with_scratch(&mut self.acc, &mut self.scratch);
        let scale = T::one() / (T::from(2 * n).unwrap() * grid.width());
        let out = self.acc[..n].iter().map(|c| c.re * scale).collect();
        self.reset();
        out
    }
}

/// Kernel spectra of one integration window, see [`HankelToeplitz::window_spectra`].
#[derive(Debug, Clone)]
pub struct WindowSpectra<T> {
    /// `(FFT Toeplitz, FFT Hankel)` per order; empty for an empty window.
    kernels: Vec<(Vec<Complex<T>>, Vec<Complex<T>>)>,
}

/// The same sum as [`HankelToeplitz::continuation`] by explicit O(J^2) matrix products.
pub fn dense_continuation<T: Real>(
    grid: &CosGrid<T>,
    v: &[T],
    lambdas: &[Vec<Complex<T>>],
    x1: T,
    x2: T,
    xbar: T,
) -> Result<Vec<T>> {
    check_product_inputs(grid, v, lambdas, x1, x2)?;
    let n = grid.n;
    let mut out = vec![T::zero(); n];
    if x2 <= x1 {
        return Ok(out);
    }
    let inv_width = T::one() / grid.width();
    for (h, lambda) in lambdas.iter().enumerate() {
        let phi = phi_moments(grid, x1, x2, xbar, h, 2 * n - 1);
        let at = |m: isize| -> Complex<T> {
            if m >= 0 {
                phi[m as usize]
            } else {
                phi[(-m) as usize].conj()
            }
        };
        for (j, o) in out.iter_mut().enumerate() {
            let mut s = Complex::new(T::zero(), T::zero());
            for k in 0..n {
                let entry = at((k + j) as isize) + at(k as isize - j as isize);
                s += lambda[k] * entry * (v[k] * prime_weight::<T>(k));
            }
            *o += s.re * inv_width;
        }
    }
    Ok(out)
}

/// `Re(V M^h Lambda^h)` over `[x_lo, x_hi]` for a single order `h`.
pub fn m_matrix_product<T: Real>(
    v: &CoeffVector<T>,
    grid: &CosGrid<T>,
    x_lo: T,
    x_hi: T,
    xbar: T,
    h: usize,
    lambda: &[Complex<T>],
) -> Result<CoeffVector<T>> {
    if h > 2 {
        return Err(Error::UnsupportedOrder(h));
    }
    let zero = Complex::new(T::zero(), T::zero());
    let mut lambdas = vec![vec![zero; grid.n]; h + 1];
    lambdas[h] = lambda.to_vec();
    let values = HankelToeplitz::new(grid.n).continuation(grid, &v.values, &lambdas, x_lo, x_hi, xbar)?;
    Ok(CoeffVector { values, time: v.time })
}
