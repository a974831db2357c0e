//! Theta-scheme for the pricing BSDE
//!
//! ```text
//! Y_t = phi(X_T) + \int_t^T f(s, X_s, Y_s, Z_s) ds - \int_t^T Z dW - \int_t^T \int V dÑ
//! ```
//!
//! with conditional expectations computed by the COS method. `f` here is the
//! BSDE generator; the XVA driver of the pricing PIDE `L u = f_pide` enters with
//! the opposite sign (see [`DriverSpec::pide_rhs`]).
//!
//! On a uniform step the expectations at all grid nodes are matrix-vector
//! products with two fixed `J x J` kernels (one plain, one weighted by the
//! Brownian increment), so they are built once per step size and reused.

use rayon::prelude::*;

use crate::charfunc::{diagonal_coefficients, FrequencyLadder};
use crate::cos::{prime_weight, CosGrid, DctEngine};
use crate::model::ModelSpec;
use crate::{Complex, Error, Result};

/// Rates of the XVA setting, per annum. Spreads are derived, never stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    /// Risk-free (collateralized) rate.
    pub r: f64,
    /// Yield on the bank's zero-recovery bond.
    pub r_b: f64,
    /// Yield on the counterparty's zero-recovery bond.
    pub r_c: f64,
    /// Funding rate.
    pub r_f: f64,
    /// Rate on the hedge position in the underlying (no effect on the driver).
    pub r_d: f64,
    /// Rate paid/received on variation margin.
    pub r_i: f64,
    /// Cost of capital.
    pub r_k: f64,
    /// Rate on initial margin posted by the bank.
    pub r_tc: f64,
    /// Rate on initial margin posted by the counterparty.
    pub r_fc: f64,
}

impl Rates {
    /// Every rate equal to `r`: all spreads vanish.
    pub fn flat(r: f64) -> Self {
        Self {
            r,
            r_b: r,
            r_c: r,
            r_f: r,
            r_d: r,
            r_i: 0.0,
            r_k: 0.0,
            r_tc: 0.0,
            r_fc: 0.0,
        }
    }

    pub fn lambda_b(&self) -> f64 {
        self.r_b - self.r
    }

    pub fn lambda_c(&self) -> f64 {
        self.r_c - self.r
    }

    pub fn lambda_f(&self) -> f64 {
        self.r_f - self.r
    }
}

/// Mark-to-market value used at default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Closeout {
    /// The adjusted value prior to default, `M = y`.
    Risky,
    /// The risk-free value of the same contract, supplied externally.
    RiskFree,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriverMode {
    /// Linear pricing without discounting: `f = 0`.
    Zero,
    /// `f = -r_u max(y, 0)`.
    Simplified { rate: f64 },
    /// The full XVA driver.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriverSpec {
    pub mode: DriverMode,
    pub rates: Rates,
    pub recovery_b: f64,
    pub recovery_c: f64,
    /// Initial margin posted by the bank.
    pub i_tc: f64,
    /// Initial margin posted by the counterparty.
    pub i_fc: f64,
    /// Capital proportion, `K = c1 y`.
    pub c1: f64,
    /// Variation-margin proportion, `I_V = c2 y`.
    pub c2: f64,
    pub closeout: Closeout,
}

impl DriverSpec {
    pub fn zero() -> Self {
        Self {
            mode: DriverMode::Zero,
            ..Self::linear(0.0)
        }
    }

    pub fn simplified(rate: f64) -> Self {
        Self {
            mode: DriverMode::Simplified { rate },
            ..Self::linear(rate)
        }
    }

    /// Full driver with every adjustment switched off: plain discounting at `r`.
    pub fn linear(r: f64) -> Self {
        Self {
            mode: DriverMode::Full,
            rates: Rates::flat(r),
            recovery_b: 1.0,
            recovery_c: 1.0,
            i_tc: 0.0,
            i_fc: 0.0,
            c1: 0.0,
            c2: 0.0,
            closeout: Closeout::Risky,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("R_B", self.recovery_b), ("R_C", self.recovery_c)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidDriver(format!("recovery {name} = {r} is outside [0, 1]")));
            }
        }
        let rates = &self.rates;
        let all = [
            rates.r, rates.r_b, rates.r_c, rates.r_f, rates.r_d, rates.r_i, rates.r_k, rates.r_tc, rates.r_fc,
            self.i_tc, self.i_fc, self.c1, self.c2,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDriver("rates, margins and proportions must be finite".into()));
        }
        if let DriverMode::Simplified { rate } = self.mode {
            if !rate.is_finite() {
                return Err(Error::InvalidDriver("simplified-driver rate must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn needs_risk_free_mark(&self) -> bool {
        self.mode == DriverMode::Full && self.closeout == Closeout::RiskFree
    }

    /// Close-out values `(theta_B, theta_C)` for portfolio value `y` and mark `m`.
    pub fn boundary_values(&self, y: f64, mark: f64) -> (f64, f64) {
        let iv = self.c2 * y;
        let pos = |v: f64| v.max(0.0);
        let neg = |v: f64| v.min(0.0);
        let theta_b = iv - self.i_tc + pos(mark - iv + self.i_tc) + self.recovery_b * neg(mark - iv + self.i_tc);
        let theta_c = iv + self.i_fc + self.recovery_c * pos(mark - iv - self.i_fc) + neg(mark - iv - self.i_fc);
        (theta_b, theta_c)
    }

    /// Right-hand side of the pricing PIDE, `L u = f_pide(u)`.
    pub fn pide_rhs(&self, _t: f64, _x: f64, y: f64, mark: f64) -> f64 {
        let rt = &self.rates;
        let (theta_b, theta_c) = self.boundary_values(y, mark);
        let iv = self.c2 * y;
        let capital = self.c1 * y;
        -(theta_b - y) * rt.lambda_b() - (theta_c - y) * rt.lambda_c() + (rt.r_tc + rt.r) * self.i_tc
            - rt.r_fc * self.i_fc
            - (rt.r_i + rt.r) * iv
            - rt.r_k * capital
            + rt.r * y
            + rt.lambda_f() * (theta_b - iv + self.i_tc).min(0.0)
    }

    /// BSDE generator with an explicit close-out mark.
    pub fn generator(&self, t: f64, x: f64, y: f64, _z: f64, mark: f64) -> f64 {
        match self.mode {
            DriverMode::Zero => 0.0,
            DriverMode::Simplified { rate } => -rate * y.max(0.0),
            DriverMode::Full => -self.pide_rhs(t, x, y, mark),
        }
    }

    /// BSDE generator; the close-out mark defaults to `y`.
    pub fn driver_eval(&self, t: f64, x: f64, y: f64, z: f64) -> f64 {
        self.generator(t, x, y, z, y)
    }

    /// Lipschitz constant of the generator in `y`.
    pub fn lipschitz(&self) -> f64 {
        match self.mode {
            DriverMode::Zero => 0.0,
            DriverMode::Simplified { rate } => rate.abs(),
            DriverMode::Full => {
                let rt = &self.rates;
                let c2 = self.c2.abs();
                // the mark moves with y under the risky rule only
                let mark_slope = if self.closeout == Closeout::Risky { 1.0 } else { 0.0 };
                let inner = (mark_slope - self.c2).abs();
                let theta_b = c2 + inner * self.recovery_b.max(1.0);
                let theta_c = c2 + inner * self.recovery_c.max(1.0);
                rt.lambda_b().abs() * (theta_b + 1.0)
                    + rt.lambda_c().abs() * (theta_c + 1.0)
                    + (rt.r_i + rt.r).abs() * c2
                    + rt.r_k.abs() * self.c1.abs()
                    + rt.r.abs()
                    + rt.lambda_f().abs() * (theta_b + c2)
            }
        }
    }
}

/// Time stepping of one backward sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsdeGrid {
    pub steps: usize,
    pub dt: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub picard: usize,
}

impl BsdeGrid {
    pub const DEFAULT_PICARD: usize = 5;

    pub fn new(steps: usize, dt: f64, theta1: f64, theta2: f64, picard: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("need at least one time step".into()));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!("time step must be > 0, got {dt}")));
        }
        if !(0.0..=1.0).contains(&theta1) {
            return Err(Error::InvalidArgument(format!("theta1 = {theta1} is outside [0, 1]")));
        }
        if !(theta2 > 0.0 && theta2 <= 1.0) {
            return Err(Error::InvalidArgument(format!("theta2 = {theta2} is outside (0, 1]")));
        }
        Ok(Self {
            steps,
            dt,
            theta1,
            theta2,
            picard,
        })
    }

    /// `N` uniform steps over `[0, horizon]`.
    pub fn uniform(horizon: f64, steps: usize, theta1: f64, theta2: f64, picard: usize) -> Result<Self> {
        Self::new(steps, horizon / steps.max(1) as f64, theta1, theta2, picard)
    }

    /// `dt theta1 L`, which must stay below one for the Picard iteration.
    pub fn contraction(&self, driver: &DriverSpec) -> f64 {
        self.dt * self.theta1 * driver.lipschitz()
    }

    pub fn check_contraction(&self, driver: &DriverSpec) -> Result<()> {
        let product = self.contraction(driver);
        if product >= 1.0 {
            return Err(Error::PicardNonContraction { product });
        }
        Ok(())
    }
}

/// Real parts of `w_j e^{i xi_j (x - a)} g(xi_j)` and of `w_j i xi_j e^{...} g(xi_j)`,
/// with the primed-sum weights `w_j` folded in.
fn kernel_row(grid: &CosGrid<f64>, ladder: &FrequencyLadder<f64>, g: &[Complex<f64>], x: f64, plain: &mut [f64], dw: &mut [f64]) {
    let shift = x - grid.a;
    for (j, (&xi, gj)) in ladder.xi.iter().zip(g).enumerate() {
        let v = Complex::from_polar(1.0, xi * shift) * gj * prime_weight::<f64>(j);
        plain[j] = v.re;
        dw[j] = -xi * v.im;
    }
}

/// Slack allowed above the bound `|E[e^{i xi X'}]| <= 1` before an expansion
/// order is rejected.
pub const CF_BOUND_SLACK: f64 = 1e-3;

/// `g_{n,0}` at basepoint `x` for the highest order `<= order` that respects
/// the characteristic-function bound. Far out in the tails of models with
/// steep coefficients the correction terms can dominate the leading term.
pub fn node_coefficients(
    model: &ModelSpec<f64>,
    ladder: &FrequencyLadder<f64>,
    dt: f64,
    order: usize,
    x: f64,
) -> Result<(Vec<Complex<f64>>, usize)> {
    let mut g = Vec::with_capacity(ladder.len());
    for k in (0..=order).rev() {
        let td = model.taylor_expand(0.0, x, k)?;
        diagonal_coefficients(&td, dt, ladder, k, &mut g);
        if k == 0 || g.iter().all(|v| v.norm() <= 1.0 + CF_BOUND_SLACK) {
            return Ok((g, k));
        }
    }
    unreachable!()
}

/// COS expectation weights for one step size on the whole grid, each node
/// expanded around itself.
#[derive(Debug, Clone)]
pub struct StepKernel {
    pub n: usize,
    pub dt: f64,
    /// Row-major `J x J`: `E[h(X') | X = x_i] = sum_j plain[i][j] H_j`.
    plain: Vec<f64>,
    /// Row-major `J x J`: `E[h(X') dW | X = x_i] = sum_j dw[i][j] H_j`, `dt sigma(x_i)` folded in.
    dw: Vec<f64>,
    /// Nodes where the expansion had to be truncated below the requested order.
    pub reduced_nodes: usize,
}

impl StepKernel {
    pub fn build(model: &ModelSpec<f64>, grid: &CosGrid<f64>, dt: f64, order: usize) -> Result<Self> {
        let n = grid.n;
        let ladder = grid.ladder(&model.jump);
        let nodes = grid.nodes();
        let mut plain = vec![0.0; n * n];
        let mut dw = vec![0.0; n * n];
        let used = plain
            .par_chunks_mut(n)
            .zip(dw.par_chunks_mut(n))
            .zip(nodes.par_iter())
            .map(|((prow, wrow), &x)| -> Result<usize> {
                let (g, used) = node_coefficients(model, &ladder, dt, order, x)?;
                kernel_row(grid, &ladder, &g, x, prow, wrow);
                let scale = dt * model.sigma(0.0, x);
                wrow.iter_mut().for_each(|v| *v *= scale);
                Ok(used)
            })
            .collect::<Result<Vec<usize>>>()?;
        let reduced_nodes = used.iter().filter(|&&u| u < order).count();
        Ok(Self {
            n,
            dt,
            plain,
            dw,
            reduced_nodes,
        })
    }

    /// The five expectations `(E y, E f, E z, E[y dW], E[f dW])` at node `i`.
    #[inline]
    fn expectations(&self, i: usize, c: &StepCoeffs) -> [f64; 5] {
        let p = &self.plain[i * self.n..(i + 1) * self.n];
        let w = &self.dw[i * self.n..(i + 1) * self.n];
        let mut acc = [0.0; 5];
        for j in 0..self.n {
            acc[0] += p[j] * c.y[j];
            acc[1] += p[j] * c.f[j];
            acc[2] += p[j] * c.z[j];
            acc[3] += w[j] * c.y[j];
            acc[4] += w[j] * c.f[j];
        }
        acc
    }
}

/// The same weights for a single evaluation point expanded around itself.
#[derive(Debug, Clone)]
pub struct PointKernel {
    pub x: f64,
    pub dt: f64,
    /// Expansion order actually used.
    pub order: usize,
    plain: Vec<f64>,
    dw: Vec<f64>,
}

impl PointKernel {
    pub fn build(model: &ModelSpec<f64>, grid: &CosGrid<f64>, dt: f64, order: usize, x: f64) -> Result<Self> {
        let n = grid.n;
        let ladder = grid.ladder(&model.jump);
        let (g, used) = node_coefficients(model, &ladder, dt, order, x)?;
        let mut plain = vec![0.0; n];
        let mut dw = vec![0.0; n];
        kernel_row(grid, &ladder, &g, x, &mut plain, &mut dw);
        let scale = dt * model.sigma(0.0, x);
        dw.iter_mut().for_each(|v| *v *= scale);
        Ok(Self {
            x,
            dt,
            order: used,
            plain,
            dw,
        })
    }

    fn expectations(&self, c: &StepCoeffs) -> [f64; 5] {
        let mut acc = [0.0; 5];
        for j in 0..self.plain.len() {
            let (p, w) = (self.plain[j], self.dw[j]);
            acc[0] += p * c.y[j];
            acc[1] += p * c.f[j];
            acc[2] += p * c.z[j];
            acc[3] += w * c.y[j];
            acc[4] += w * c.f[j];
        }
        acc
    }
}

/// `y`, `z`, `f` on the grid nodes at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    pub t: f64,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub f: Vec<f64>,
}

/// Cosine coefficients of a [`GridState`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepCoeffs {
    pub t: f64,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub f: Vec<f64>,
}

impl StepCoeffs {
    pub fn from_state(state: &GridState, dct: &mut DctEngine<f64>) -> Self {
        Self {
            t: state.t,
            y: dct.transform(&state.y),
            z: dct.transform(&state.z),
            f: dct.transform(&state.f),
        }
    }
}

/// Diagnostics of the Picard iterations of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PicardStats {
    /// Largest observed ratio of successive sup-norm increments.
    pub max_ratio: f64,
    /// Sup-norm of the last increment.
    pub last_increment: f64,
}

fn z_update(e: &[f64; 5], bsde: &BsdeGrid) -> f64 {
    let (t2, dt) = (bsde.theta2, bsde.dt);
    let k = (1.0 - t2) / t2;
    -k * e[2] + e[3] / (dt * t2) + k * e[4]
}

struct Picard<'a> {
    bsde: &'a BsdeGrid,
    driver: &'a DriverSpec,
    t: f64,
    step: usize,
}

impl Picard<'_> {
    /// Solves `y = h + dt theta1 f(t, x, y, z)` starting from `y0`.
    fn solve(&self, x: &[f64], h: &[f64], y: &mut [f64], z: &[f64], marks: Option<&[f64]>) -> Result<PicardStats> {
        let mut stats = PicardStats::default();
        let c = self.bsde.dt * self.bsde.theta1;
        if c == 0.0 || self.driver.mode == DriverMode::Zero {
            y.copy_from_slice(h);
            return Ok(stats);
        }
        let mut prev_inc = f64::NAN;
        let mut growth = 0;
        for _ in 0..self.bsde.picard {
            let mut inc: f64 = 0.0;
            for i in 0..y.len() {
                let mark = marks.map_or(y[i], |m| m[i]);
                let next = h[i] + c * self.driver.generator(self.t, x[i], y[i], z[i], mark);
                inc = inc.max((next - y[i]).abs());
                y[i] = next;
            }
            if prev_inc > 0.0 {
                let ratio = inc / prev_inc;
                stats.max_ratio = stats.max_ratio.max(ratio);
                let scale = y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                if ratio > 1.0 && inc > 1e-12 * scale {
                    growth += 1;
                    if growth >= 2 {
                        return Err(Error::PicardDivergence {
                            step: self.step,
                            product: self.bsde.contraction(self.driver),
                        });
                    }
                } else {
                    growth = 0;
                }
            }
            if !inc.is_finite() {
                return Err(Error::PicardDivergence {
                    step: self.step,
                    product: self.bsde.contraction(self.driver),
                });
            }
            prev_inc = inc;
            stats.last_increment = inc;
        }
        Ok(stats)
    }
}

/// The theta-scheme on one step: from the coefficients at `t_{n+1}` to the
/// grid state at `t_n = coeffs.t - dt`.
#[allow(clippy::too_many_arguments)]
pub fn theta_step(
    kernel: &StepKernel,
    coeffs: &StepCoeffs,
    nodes: &[f64],
    bsde: &BsdeGrid,
    driver: &DriverSpec,
    marks: Option<&[f64]>,
    step: usize,
) -> Result<(GridState, PicardStats)> {
    let n = kernel.n;
    if coeffs.y.len() != n || nodes.len() != n {
        return Err(Error::InvalidArgument("grid sizes of kernel, coefficients and nodes differ".into()));
    }
    let t = coeffs.t - bsde.dt;
    let expectations: Vec<[f64; 5]> = (0..n).into_par_iter().map(|i| kernel.expectations(i, coeffs)).collect();
    let z: Vec<f64> = expectations.iter().map(|e| z_update(e, bsde)).collect();
    let h: Vec<f64> = expectations
        .iter()
        .map(|e| e[0] + bsde.dt * (1.0 - bsde.theta1) * e[1])
        .collect();
    let mut y: Vec<f64> = expectations.iter().map(|e| e[0]).collect();
    let picard = Picard { bsde, driver, t, step };
    let stats = picard.solve(nodes, &h, &mut y, &z, marks)?;
    let f = (0..n)
        .map(|i| driver.generator(t, nodes[i], y[i], z[i], marks.map_or(y[i], |m| m[i])))
        .collect();
    Ok((GridState { t, y, z, f }, stats))
}

/// The theta-scheme on one step evaluated at a single point.
pub fn theta_step_point(
    kernel: &PointKernel,
    coeffs: &StepCoeffs,
    bsde: &BsdeGrid,
    driver: &DriverSpec,
    mark: Option<f64>,
    step: usize,
) -> Result<(f64, f64)> {
    let e = kernel.expectations(coeffs);
    let t = coeffs.t - bsde.dt;
    let z = z_update(&e, bsde);
    let h = e[0] + bsde.dt * (1.0 - bsde.theta1) * e[1];
    let mut y = [e[0]];
    let marks = mark.map(|m| [m]);
    Picard { bsde, driver, t, step }.solve(&[kernel.x], &[h], &mut y, &[z], marks.as_ref().map(|m| &m[..]))?;
    Ok((y[0], z))
}

/// Result of a European backward sweep.
#[derive(Debug, Clone)]
pub struct BsdeSolution {
    /// `y(t_0, x_0)`.
    pub value: f64,
    /// `z(t_0, x_0)`.
    pub z0: f64,
    /// Grid states from `t_N` down to `t_1`.
    pub history: Vec<GridState>,
    pub picard: Vec<PicardStats>,
}

/// Everything a sweep needs that does not change from step to step.
pub struct BsdeSetup<'a> {
    pub model: &'a ModelSpec<f64>,
    pub grid: CosGrid<f64>,
    pub bsde: BsdeGrid,
    pub driver: &'a DriverSpec,
    pub order: usize,
    pub x0: f64,
}

impl BsdeSetup<'_> {
    pub fn kernels(&self) -> Result<(StepKernel, PointKernel)> {
        self.bsde.check_contraction(self.driver)?;
        self.driver.validate()?;
        self.model.validate_on(0.0, &self.grid.nodes())?;
        Ok((
            StepKernel::build(self.model, &self.grid, self.bsde.dt, self.order)?,
            PointKernel::build(self.model, &self.grid, self.bsde.dt, self.order, self.x0)?,
        ))
    }
}

/// Backward sweep from terminal data on the grid nodes to `(t_0, x_0)`.
///
/// `terminal_z` is `phi'(x) sigma(t_N, x)`. With a risk-free close-out the
/// marks are computed by a preliminary linear sweep.
pub fn solve_bsde(setup: &BsdeSetup, horizon: f64, terminal_y: &[f64], terminal_z: &[f64]) -> Result<BsdeSolution> {
    let (kernel, point) = setup.kernels()?;
    let marks = if setup.driver.needs_risk_free_mark() {
        let linear = DriverSpec::linear(setup.driver.rates.r);
        let inner = BsdeSetup { driver: &linear, ..*setup };
        let sol = sweep(&inner, &kernel, &point, horizon, terminal_y, terminal_z, None)?;
        Some(sol)
    } else {
        None
    };
    sweep(setup, &kernel, &point, horizon, terminal_y, terminal_z, marks.as_ref())
}

fn sweep(
    setup: &BsdeSetup,
    kernel: &StepKernel,
    point: &PointKernel,
    horizon: f64,
    terminal_y: &[f64],
    terminal_z: &[f64],
    marks: Option<&BsdeSolution>,
) -> Result<BsdeSolution> {
    let n = setup.grid.n;
    if terminal_y.len() != n || terminal_z.len() != n {
        return Err(Error::InvalidArgument(format!("terminal data must have J = {n} entries")));
    }
    let nodes = setup.grid.nodes();
    let mut dct = DctEngine::new(n);
    let terminal_marks = marks.map(|m| m.history[0].y.clone());
    let f = (0..n)
        .map(|i| {
            let mark = terminal_marks.as_ref().map_or(terminal_y[i], |m| m[i]);
            setup.driver.generator(horizon, nodes[i], terminal_y[i], terminal_z[i], mark)
        })
        .collect();
    let mut state = GridState {
        t: horizon,
        y: terminal_y.to_vec(),
        z: terminal_z.to_vec(),
        f,
    };
    let steps = setup.bsde.steps;
    let mut history = Vec::with_capacity(steps);
    let mut stats = Vec::with_capacity(steps);
    for k in (1..steps).rev() {
        let coeffs = StepCoeffs::from_state(&state, &mut dct);
        let step_marks = marks.map(|m| m.history[steps - k].y.as_slice());
        let (next, st) = theta_step(kernel, &coeffs, &nodes, &setup.bsde, setup.driver, step_marks, k)?;
        history.push(std::mem::replace(&mut state, next));
        stats.push(st);
    }
    let coeffs = StepCoeffs::from_state(&state, &mut dct);
    history.push(state);
    let (value, z0) = theta_step_point(point, &coeffs, &setup.bsde, setup.driver, marks.map(|m| m.value), 0)?;
    Ok(BsdeSolution {
        value,
        z0,
        history,
        picard: stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charfunc::cumulants;
    use crate::cos::{cos_expectation, dct_coeffs, put_payoff_coeffs};
    use crate::model::{CoefficientFamily, JumpLaw};
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn gbm(sigma: f64, r: f64) -> ModelSpec<f64> {
        ModelSpec::new(
            CoefficientFamily::Constant(sigma),
            CoefficientFamily::Zero,
            JumpLaw::degenerate(),
            CoefficientFamily::Zero,
            r,
            0.0,
        )
        .unwrap()
    }

    fn cev() -> ModelSpec<f64> {
        ModelSpec::cev_like(0.15, -2.0, 0.2, -0.2, 0.2, 0.0, 0.1, 0.0).unwrap()
    }

    fn grid_for(model: &ModelSpec<f64>, x0: f64, horizon: f64, n: usize) -> CosGrid<f64> {
        let td = model.taylor_expand(0.0, x0, 0).unwrap();
        let (c1, c2, c4) = cumulants(&td, 0.0, horizon);
        CosGrid::from_cumulants(x0 + c1, c2, c4, 10.0, n).unwrap()
    }

    fn bs_call(s: f64, k: f64, r: f64, sigma: f64, t: f64) -> f64 {
        let n = Normal::new(0.0, 1.0).unwrap();
        let d1 = ((s / k).ln() + (r + 0.5 * sigma * sigma) * t) / (sigma * t.sqrt());
        s * n.cdf(d1) - k * (-r * t).exp() * n.cdf(d1 - sigma * t.sqrt())
    }

    #[test]
    fn driver_examples() {
        let zero = DriverSpec::zero();
        assert_eq!(zero.driver_eval(0.0, 0.3, 1.5, 0.2), 0.0);
        let s = DriverSpec::simplified(0.1);
        assert!((s.driver_eval(0.0, 0.0, 0.5, 0.0) + 0.05).abs() < 1e-16);
        assert_eq!(s.driver_eval(0.0, 0.0, -0.5, 0.0), 0.0);
        let lin = DriverSpec::linear(0.1);
        assert!((lin.pide_rhs(0.0, 0.0, 0.7, 0.7) - 0.07).abs() < 1e-16);
        assert!((lin.driver_eval(0.0, 0.0, 0.7, 0.0) + 0.07).abs() < 1e-16);
        assert_eq!(lin.lipschitz(), 0.1);
    }

    #[test]
    fn boundary_values_follow_closeout_rules() {
        let mut d = DriverSpec::linear(0.02);
        d.recovery_b = 0.4;
        d.recovery_c = 0.3;
        d.i_tc = 0.1;
        d.i_fc = 0.05;
        d.c2 = 0.5;
        let y = 1.0;
        let (tb, tc) = d.boundary_values(y, y);
        // I_V = 0.5; M - I_V + I_TC = 0.6 > 0; M - I_V - I_FC = 0.45 > 0
        assert!((tb - (0.5 - 0.1 + 0.6)).abs() < 1e-15);
        assert!((tc - (0.5 + 0.05 + 0.3 * 0.45)).abs() < 1e-15);
        let (tb, tc) = d.boundary_values(-1.0, -1.0);
        // I_V = -0.5; M - I_V + I_TC = -0.4; M - I_V - I_FC = -0.55
        assert!((tb - (-0.5 - 0.1 + 0.4 * -0.4)).abs() < 1e-15);
        assert!((tc - (-0.5 + 0.05 - 0.55)).abs() < 1e-15);
    }

    fn random_driver() -> impl Strategy<Value = DriverSpec> {
        (
            prop::collection::vec(-0.1f64..0.2, 9),
            0.0f64..1.0,
            0.0f64..1.0,
            prop::collection::vec(-1.0f64..1.0, 4),
            prop::bool::ANY,
        )
            .prop_map(|(r, rb, rc, m, risky)| DriverSpec {
                mode: DriverMode::Full,
                rates: Rates {
                    r: r[0],
                    r_b: r[1],
                    r_c: r[2],
                    r_f: r[3],
                    r_d: r[4],
                    r_i: r[5],
                    r_k: r[6],
                    r_tc: r[7],
                    r_fc: r[8],
                },
                recovery_b: rb,
                recovery_c: rc,
                i_tc: m[0].abs(),
                i_fc: m[1].abs(),
                c1: m[2],
                c2: m[3],
                closeout: if risky { Closeout::Risky } else { Closeout::RiskFree },
            })
    }

    proptest! {
        #[test]
        fn generator_is_lipschitz(d in random_driver(), y1 in -3.0f64..3.0, y2 in -3.0f64..3.0, mark in -2.0f64..2.0) {
            let l = d.lipschitz();
            let (m1, m2) = if d.closeout == Closeout::Risky { (y1, y2) } else { (mark, mark) };
            let diff = (d.generator(0.0, 0.0, y1, 0.0, m1) - d.generator(0.0, 0.0, y2, 0.0, m2)).abs();
            prop_assert!(diff <= l * (y1 - y2).abs() * (1.0 + 1e-12) + 1e-14);
        }

        #[test]
        fn simplified_is_lipschitz(r in 0.0f64..0.5, y1 in -3.0f64..3.0, y2 in -3.0f64..3.0) {
            let d = DriverSpec::simplified(r);
            let diff = (d.driver_eval(0.0, 0.0, y1, 0.0) - d.driver_eval(0.0, 0.0, y2, 0.0)).abs();
            prop_assert!(diff <= r * (y1 - y2).abs() + 1e-15);
        }
    }

    #[test]
    fn rejects_invalid_setup() {
        assert!(BsdeGrid::new(0, 0.1, 0.5, 0.5, 5).is_err());
        assert!(BsdeGrid::new(10, 0.1, 1.5, 0.5, 5).is_err());
        assert!(BsdeGrid::new(10, 0.1, 0.5, 0.0, 5).is_err());
        let g = BsdeGrid::new(1, 2.0, 1.0, 0.5, 5).unwrap();
        assert!(matches!(
            g.check_contraction(&DriverSpec::simplified(0.6)),
            Err(Error::PicardNonContraction { .. })
        ));
        let mut d = DriverSpec::linear(0.0);
        d.recovery_b = 1.5;
        assert!(d.validate().is_err());
    }

    #[test]
    fn constant_is_a_martingale() {
        let model = cev();
        let grid = grid_for(&model, 0.0, 1.0, 128);
        let bsde = BsdeGrid::uniform(1.0, 4, 0.5, 0.5, 5).unwrap();
        let driver = DriverSpec::zero();
        let setup = BsdeSetup { model: &model, grid, bsde, driver: &driver, order: 2, x0: 0.0 };
        let sol = solve_bsde(&setup, 1.0, &vec![1.0; 128], &vec![0.0; 128]).unwrap();
        assert!((sol.value - 1.0).abs() < 1e-8);
        for state in &sol.history[1..] {
            // nodes far out in the tails see truncation; the bulk is exact
            for (i, (y, z)) in state.y.iter().zip(&state.z).enumerate().skip(16).take(96) {
                assert!((y - 1.0).abs() < 1e-8, "node {i}: {y}");
                assert!(z.abs() < 1e-8, "node {i}: {z}");
            }
        }
    }

    #[test]
    fn black_scholes_call() {
        let (sigma, r, k, t) = (0.25, 0.05, 1.0, 1.0);
        let model = gbm(sigma, r);
        let n = 512;
        let grid = grid_for(&model, 0.0, t, n);
        let nodes = grid.nodes();
        let y: Vec<f64> = nodes.iter().map(|x| (x.exp() - k).max(0.0)).collect();
        let z: Vec<f64> = nodes.iter().map(|&x| if x >= k.ln() { x.exp() * sigma } else { 0.0 }).collect();
        let bsde = BsdeGrid::uniform(t, 64, 0.5, 0.5, 5).unwrap();
        let driver = DriverSpec::linear(r);
        let setup = BsdeSetup { model: &model, grid, bsde, driver: &driver, order: 2, x0: 0.0 };
        let sol = solve_bsde(&setup, t, &y, &z).unwrap();
        let reference = bs_call(1.0, k, r, sigma, t);
        assert!((sol.value - reference).abs() < 1e-4, "{} vs {reference}", sol.value);
        // z = dC/dS S sigma
        let delta = Normal::new(0.0, 1.0).unwrap().cdf(((1.0 / k).ln() + (r + 0.5 * sigma * sigma) * t) / (sigma * t.sqrt()));
        assert!((sol.z0 - delta * sigma).abs() < 1e-3, "{} vs {}", sol.z0, delta * sigma);
    }

    #[test]
    fn zero_driver_matches_single_shot_cos() {
        let model = cev();
        let t = 0.5;
        let n = 1024;
        let grid = grid_for(&model, 0.0, t, n);
        let nodes = grid.nodes();
        let k = 1.0;
        let y: Vec<f64> = nodes.iter().map(|x| (k - x.exp()).max(0.0)).collect();
        let z: Vec<f64> = nodes.iter().map(|&x| if x <= 0.0 { -x.exp() * model.sigma(0.0, x) } else { 0.0 }).collect();
        let driver = DriverSpec::zero();
        // single step: the sweep is one COS expectation with the point kernel
        let bsde = BsdeGrid::uniform(t, 1, 0.5, 0.5, 5).unwrap();
        let setup = BsdeSetup { model: &model, grid, bsde, driver: &driver, order: 2, x0: 0.0 };
        let sol = solve_bsde(&setup, t, &y, &z).unwrap();
        let td = model.taylor_expand(0.0, 0.0, 2).unwrap();
        let cf = crate::charfunc::CharFuncApprox::build(&td, 0.0, t, &grid.ladder(&model.jump), 2).unwrap();
        let direct = cos_expectation(&dct_coeffs(&y, &grid, t).unwrap(), &cf, &grid, 0.0).unwrap();
        assert!((sol.value - direct).abs() < 1e-12);
        let exact = cos_expectation(&put_payoff_coeffs(k, &grid, 0.0, t).unwrap(), &cf, &grid, 0.0).unwrap();
        assert!((sol.value - exact).abs() < 1e-5, "{} vs {exact}", sol.value);
    }

    #[test]
    fn z_identity_for_linear_terminal() {
        let sigma = 0.2;
        let model = gbm(sigma, 0.03);
        let n = 256;
        let grid = grid_for(&model, 0.0, 0.5, n);
        let nodes = grid.nodes();
        let coeffs = StepCoeffs {
            t: 0.5,
            y: dct_coeffs(&nodes, &grid, 0.5).unwrap().values,
            z: dct_coeffs(&vec![sigma; n], &grid, 0.5).unwrap().values,
            f: vec![0.0; n],
        };
        let bsde = BsdeGrid::uniform(0.5, 10, 0.5, 0.5, 5).unwrap();
        let kernel = StepKernel::build(&model, &grid, bsde.dt, 2).unwrap();
        let (state, _) = theta_step(&kernel, &coeffs, &nodes, &bsde, &DriverSpec::zero(), None, 9).unwrap();
        for i in 64..192 {
            assert!((state.z[i] - sigma).abs() < 1e-6, "node {i}: {}", state.z[i]);
        }
    }

    fn put_sweep(theta1: f64, steps: usize, driver: &DriverSpec) -> f64 {
        let model = cev();
        let t = 0.5;
        let grid = grid_for(&model, 0.4, t, 128);
        let nodes = grid.nodes();
        let y: Vec<f64> = nodes.iter().map(|x| (1.6 - x.exp()).max(0.0)).collect();
        let z: Vec<f64> = nodes.iter().map(|&x| if x <= 1.6f64.ln() { -x.exp() * model.sigma(0.0, x) } else { 0.0 }).collect();
        let bsde = BsdeGrid::uniform(t, steps, theta1, 0.5, 8).unwrap();
        let setup = BsdeSetup { model: &model, grid, bsde, driver, order: 2, x0: 0.4 };
        solve_bsde(&setup, t, &y, &z).unwrap().value
    }

    #[test]
    fn theta_variants_bracket_crank_nicolson() {
        let d = DriverSpec::linear(0.3);
        let explicit = put_sweep(0.0, 4, &d);
        let cn = put_sweep(0.5, 4, &d);
        let implicit = put_sweep(1.0, 4, &d);
        assert!(explicit.min(implicit) <= cn && cn <= explicit.max(implicit), "{explicit} {cn} {implicit}");
    }

    #[test]
    fn time_discretization_orders() {
        let d = DriverSpec::linear(0.3);
        let reference = put_sweep(0.5, 256, &d);
        let err = |theta: f64, n: usize| (put_sweep(theta, n, &d) - reference).abs();
        let implicit_ratio = err(1.0, 4) / err(1.0, 8);
        assert!((implicit_ratio - 2.0).abs() < 0.25, "implicit ratio {implicit_ratio}");
        // second order: already near the spatial error floor at N = 4
        assert!(err(0.5, 4) < 0.05 * err(1.0, 4));
    }

    #[test]
    fn nonnegative_under_zero_driver() {
        let model = cev();
        let grid = grid_for(&model, 0.4, 0.5, 128);
        let nodes = grid.nodes();
        let y: Vec<f64> = nodes.iter().map(|x| (1.5 - x.exp()).max(0.0)).collect();
        let bsde = BsdeGrid::uniform(0.5, 10, 0.5, 0.5, 5).unwrap();
        let driver = DriverSpec::zero();
        let setup = BsdeSetup { model: &model, grid, bsde, driver: &driver, order: 2, x0: 0.4 };
        let sol = solve_bsde(&setup, 0.5, &y, &vec![0.0; 128]).unwrap();
        for state in &sol.history {
            let (i, m) = state.y.iter().enumerate().fold((0, f64::MAX), |acc, (i, v)| if *v < acc.1 { (i, *v) } else { acc });
                        // ringing of the truncated series near the edges only
            assert!(m > -1e-3, "t={} node {i} x={} min {m}", state.t, nodes[i]);
        }
    }

    #[test]
    fn picard_contracts_within_bound() {
        let model = cev();
        let grid = grid_for(&model, 0.0, 1.0, 64);
        let nodes = grid.nodes();
        let y: Vec<f64> = nodes.iter().map(|x| x * 3.0).collect();
        let bsde = BsdeGrid::uniform(1.0, 2, 1.0, 0.5, 10).unwrap();
        let driver = DriverSpec::simplified(1.2);
        let setup = BsdeSetup { model: &model, grid, bsde, driver: &driver, order: 2, x0: 0.0 };
        let sol = solve_bsde(&setup, 1.0, &y, &vec![0.0; 64]).unwrap();
        let bound = bsde.contraction(&driver);
        for st in &sol.picard {
            assert!(st.max_ratio <= bound + 1e-12, "{} > {bound}", st.max_ratio);
        }
    }

    #[test]
    fn risk_free_closeout_uses_linear_marks() {
        let model = cev();
        let t = 0.5;
        let grid = grid_for(&model, 0.0, t, 64);
        let nodes = grid.nodes();
        let y: Vec<f64> = nodes.iter().map(|x| (1.0 - x.exp()).max(0.0)).collect();
        let z = vec![0.0; 64];
        let bsde = BsdeGrid::uniform(t, 5, 0.5, 0.5, 5).unwrap();
        let mut driver = DriverSpec::linear(0.05);
        driver.rates.r_c = 0.6;
        driver.recovery_c = 0.5;
        let risky = {
            let setup = BsdeSetup { model: &model, grid, bsde, driver: &driver, order: 2, x0: 0.0 };
            solve_bsde(&setup, t, &y, &z).unwrap().value
        };
        driver.closeout = Closeout::RiskFree;
        let free = {
            let setup = BsdeSetup { model: &model, grid, bsde, driver: &driver, order: 2, x0: 0.0 };
            solve_bsde(&setup, t, &y, &z).unwrap().value
        };
        let linear = {
            let d = DriverSpec::linear(0.05);
            let setup = BsdeSetup { model: &model, grid, bsde, driver: &d, order: 2, x0: 0.0 };
            solve_bsde(&setup, t, &y, &z).unwrap().value
        };
        // counterparty risk lowers the value of a receivable under both rules
        assert!(risky < linear && free < linear);
        // the linear mark exceeds y, so more is recovered at default
        assert!(free > risky + 1e-4, "{risky} {free} {linear}");
    }
}

