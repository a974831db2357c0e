//! Bermudan contracts with valuation adjustments
//!
//! Between two exercise dates the continuation value solves the nonlinear
//! pricing BSDE; it is stepped backwards with the theta-scheme of [`crate::bsde`]
//! on the full x-grid, and at each exercise date the terminal condition of the
//! next interval is `max(phi, c)` sampled on the grid and re-projected by DCT.

use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::bsde::{theta_step, theta_step_point, BsdeGrid, DriverSpec, GridState, PointKernel, StepCoeffs, StepKernel};
use crate::charfunc::cumulants;
use crate::cos::{CosGrid, DctEngine};
use crate::model::ModelSpec;
use crate::{Error, Result};

/// Exercise dates `t_1 < ... < t_M` with `N` uniform theta-steps per interval;
/// valuation is at `t_0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExerciseSchedule {
    dates: Vec<f64>,
    steps: usize,
}

impl ExerciseSchedule {
    pub fn new(dates: Vec<f64>, steps: usize) -> Result<Self> {
        if dates.is_empty() {
            return Err(Error::InvalidSchedule("need at least one exercise date".into()));
        }
        if steps == 0 {
            return Err(Error::InvalidSchedule("need at least one step per interval".into()));
        }
        let mut prev = 0.0;
        for &t in &dates {
            if !t.is_finite() || t <= prev {
                return Err(Error::InvalidSchedule(format!(
                    "exercise dates must be finite and strictly increasing from 0, got {t} after {prev}"
                )));
            }
            prev = t;
        }
        Ok(Self { dates, steps })
    }

    /// `t_m = m T / M`.
    pub fn uniform(maturity: f64, dates: usize, steps: usize) -> Result<Self> {
        if !(maturity > 0.0) || dates == 0 {
            return Err(Error::InvalidSchedule(format!(
                "need maturity > 0 and M >= 1, got T = {maturity}, M = {dates}"
            )));
        }
        Self::new((1..=dates).map(|m| maturity * m as f64 / dates as f64).collect(), steps)
    }

    pub fn dates(&self) -> &[f64] {
        &self.dates
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn maturity(&self) -> f64 {
        *self.dates.last().unwrap()
    }

    /// `t_{m-1}` for `m` in `1..=M`.
    pub fn start(&self, m: usize) -> f64 {
        if m <= 1 {
            0.0
        } else {
            self.dates[m - 2]
        }
    }

    /// Inner step size on `[t_{m-1}, t_m]`.
    pub fn dt(&self, m: usize) -> f64 {
        (self.dates[m - 1] - self.start(m)) / self.steps as f64
    }
}

/// Zero-coupon bond price `P(t, T, x)` conditional on `X_t = x`.
pub type BondCurve = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct SwaptionSpec {
    pub notional: f64,
    pub strike: f64,
    /// `c_p = +1` for a payer, `-1` for a receiver.
    pub payer: bool,
    /// Reset and payment dates `t_1 < ... < t_M < t_{M+1}`.
    pub tenor: Vec<f64>,
    pub curve: Option<BondCurve>,
}

impl fmt::Debug for SwaptionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SwaptionSpec")
            .field("notional", &self.notional)
            .field("strike", &self.strike)
            .field("payer", &self.payer)
            .field("tenor", &self.tenor)
            .field("curve", &self.curve.as_ref().map(|_| "<fn>"))
            .finish()
    }
}

impl SwaptionSpec {
    /// Swaption exercisable on the schedule dates into a swap ending one
    /// period after the last date.
    pub fn on_schedule(schedule: &ExerciseSchedule, notional: f64, strike: f64, payer: bool, curve: BondCurve) -> Self {
        let d = schedule.dates();
        let last_period = if d.len() > 1 { d[d.len() - 1] - d[d.len() - 2] } else { d[0] };
        let mut tenor = d.to_vec();
        tenor.push(schedule.maturity() + last_period);
        Self {
            notional,
            strike,
            payer,
            tenor,
            curve: Some(curve),
        }
    }

    fn curve(&self) -> Result<&BondCurve> {
        self.curve
            .as_ref()
            .ok_or_else(|| Error::InvalidPayoff("swaption payoff needs a bond curve".into()))
    }

    fn bond(&self, t: f64, maturity: f64, x: f64) -> Result<f64> {
        let p = self.curve()?(t, maturity, x);
        if !(p > 0.0) || !p.is_finite() {
            return Err(Error::InvalidPayoff(format!("bond price P({t}, {maturity}) = {p} must be positive")));
        }
        Ok(p)
    }

    /// `(annuity, swap rate)` at exercise date `t`: the annuity is expressed in
    /// units of the bond maturing at the last reset date.
    pub fn annuity_and_rate(&self, t: f64, x: f64) -> Result<(f64, f64)> {
        let eps = 1e-12 * t.abs().max(1.0);
        let first = self.tenor.iter().position(|&d| d > t + eps).ok_or_else(|| {
            Error::InvalidPayoff(format!("no swap payment dates after t = {t}"))
        })?;
        let mut prev = t;
        let mut annuity = 0.0;
        for &d in &self.tenor[first..] {
            annuity += (d - prev) * self.bond(t, d, x)?;
            prev = d;
        }
        let end = *self.tenor.last().unwrap();
        let rate = (1.0 - self.bond(t, end, x)?) / annuity;
        let reset = self.tenor[self.tenor.len() - 2].max(t);
        let numeraire = if reset > t + eps { self.bond(t, reset, x)? } else { 1.0 };
        Ok((annuity / numeraire, rate))
    }

    pub fn payoff(&self, t: f64, x: f64) -> Result<f64> {
        let (annuity, rate) = self.annuity_and_rate(t, x)?;
        let cp = if self.payer { 1.0 } else { -1.0 };
        Ok(self.notional * annuity * (cp * (rate - self.strike)).max(0.0))
    }
}

#[derive(Debug, Clone)]
pub enum PayoffSpec {
    /// `phi = x`.
    PortfolioLinear,
    /// `phi = e^x`.
    PortfolioExp,
    Put { strike: f64 },
    Call { strike: f64 },
    Swaption(SwaptionSpec),
}

impl PayoffSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Put { strike } | Self::Call { strike } if !(*strike > 0.0 && strike.is_finite()) => {
                Err(Error::InvalidPayoff(format!("strike must be positive, got {strike}")))
            }
            Self::Swaption(s) => {
                s.curve()?;
                if !s.notional.is_finite() || !s.strike.is_finite() {
                    return Err(Error::InvalidPayoff("swaption notional and strike must be finite".into()));
                }
                if s.tenor.len() < 2 || s.tenor.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidPayoff("swaption tenor must be strictly increasing with >= 2 dates".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, t: f64, x: f64) -> Result<f64> {
        Ok(match self {
            Self::PortfolioLinear => x,
            Self::PortfolioExp => x.exp(),
            Self::Put { strike } => (strike - x.exp()).max(0.0),
            Self::Call { strike } => (x.exp() - strike).max(0.0),
            Self::Swaption(s) => s.payoff(t, x)?,
        })
    }

    /// `d phi / dx`; one-sided at the kink, central differences for swaptions.
    pub fn derivative(&self, t: f64, x: f64) -> Result<f64> {
        Ok(match self {
            Self::PortfolioLinear => 1.0,
            Self::PortfolioExp => x.exp(),
            Self::Put { strike } => {
                if x < strike.ln() {
                    -x.exp()
                } else {
                    0.0
                }
            }
            Self::Call { strike } => {
                if x > strike.ln() {
                    x.exp()
                } else {
                    0.0
                }
            }
            Self::Swaption(s) => {
                let h = 1e-5;
                (s.payoff(t, x + h)? - s.payoff(t, x - h)?) / (2.0 * h)
            }
        })
    }

    pub fn on_grid(&self, t: f64, nodes: &[f64]) -> Result<Vec<f64>> {
        nodes.iter().map(|&x| self.eval(t, x)).collect()
    }
}

/// `phi(t_m, x)` for the given payoff.
pub fn payoff_eval(spec: &PayoffSpec, t: f64, x: f64) -> Result<f64> {
    spec.eval(t, x)
}

/// Discretization parameters shared by the COS-based pricers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosParams {
    /// Grid points and cosine terms `J`.
    pub n: usize,
    /// Truncation-range multiplier `L`.
    pub l: f64,
    pub theta1: f64,
    pub theta2: f64,
    /// Picard iterations per step.
    pub picard: usize,
    /// Order of the characteristic-function expansion.
    pub order: usize,
}

impl Default for CosParams {
    fn default() -> Self {
        Self {
            n: 256,
            l: 10.0,
            theta1: 0.5,
            theta2: 0.5,
            picard: BsdeGrid::DEFAULT_PICARD,
            order: 2,
        }
    }
}

impl CosParams {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidGrid(format!("need J >= 2, got {}", self.n)));
        }
        if !(self.l > 0.0) || !self.l.is_finite() {
            return Err(Error::InvalidGrid(format!("need L > 0, got {}", self.l)));
        }
        if self.order > 2 {
            return Err(Error::UnsupportedOrder(self.order));
        }
        Ok(())
    }

    /// Truncation range from the frozen law of `X_T - X_0` around `x0`.
    pub fn grid(&self, model: &ModelSpec<f64>, x0: f64, horizon: f64) -> Result<CosGrid<f64>> {
        let td = model.taylor_expand(0.0, x0, 0)?;
        let (c1, c2, c4) = cumulants(&td, 0.0, horizon);
        CosGrid::from_cumulants(x0 + c1, c2, c4, self.l, self.n)
    }
}

/// Sign changes of `c - phi` on the grid at one exercise date.
#[derive(Debug, Clone, PartialEq)]
pub struct ExerciseBoundary {
    pub t: f64,
    /// Linearly interpolated roots, ascending.
    pub crossings: Vec<f64>,
    /// Share of grid nodes where exercising is optimal.
    pub exercise_fraction: f64,
}

impl ExerciseBoundary {
    fn locate(t: f64, nodes: &[f64], continuation: &[f64], payoff: &[f64]) -> Self {
        let d: Vec<f64> = continuation.iter().zip(payoff).map(|(c, p)| c - p).collect();
        let mut crossings = Vec::new();
        for i in 1..d.len() {
            if (d[i - 1] > 0.0) != (d[i] > 0.0) {
                let w = d[i - 1] / (d[i - 1] - d[i]);
                crossings.push(nodes[i - 1] + w * (nodes[i] - nodes[i - 1]));
            }
        }
        let exercised = d.iter().filter(|v| **v <= 0.0).count();
        Self {
            t,
            crossings,
            exercise_fraction: exercised as f64 / d.len() as f64,
        }
    }

    /// The first crossing, if any.
    pub fn x_star(&self) -> Option<f64> {
        self.crossings.first().copied()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Timings {
    pub setup: Duration,
    pub backward: Duration,
}

impl Timings {
    pub fn total(&self) -> Duration {
        self.setup + self.backward
    }
}

#[derive(Debug, Clone)]
pub struct PricingResult {
    /// Value at `(t_0, X_0)`.
    pub value: f64,
    /// Exercise boundaries at `t_1, ..., t_{M-1}`; the final date exercises
    /// on the payoff itself.
    pub boundary: Vec<ExerciseBoundary>,
    pub warnings: Vec<String>,
    pub timings: Timings,
    pub grid: CosGrid<f64>,
}

struct IntervalKernels {
    bsde: BsdeGrid,
    grid: StepKernel,
    point: Option<PointKernel>,
}

struct Recursion<'a> {
    order: usize,
    payoff: &'a PayoffSpec,
    schedule: &'a ExerciseSchedule,
    grid: CosGrid<f64>,
    nodes: Vec<f64>,
    sigma: Vec<f64>,
    kernels: Vec<IntervalKernels>,
}

/// Grid states (one per backward step, terminal first) and the final value.
struct Trace {
    states: Vec<Vec<f64>>,
    value: f64,
}

impl<'a> Recursion<'a> {
    fn new(
        model: &'a ModelSpec<f64>,
        payoff: &'a PayoffSpec,
        schedule: &'a ExerciseSchedule,
        driver: &DriverSpec,
        params: &CosParams,
    ) -> Result<Self> {
        params.validate()?;
        payoff.validate()?;
        driver.validate()?;
        let x0 = model.spot;
        let grid = params.grid(model, x0, schedule.maturity())?;
        let nodes = grid.nodes();
        model.validate_on(0.0, &nodes)?;
        let sigma = nodes.iter().map(|&x| model.sigma(0.0, x)).collect();
        let mut kernels: Vec<IntervalKernels> = Vec::with_capacity(schedule.len());
        for m in 1..=schedule.len() {
            let dt = schedule.dt(m);
            let bsde = BsdeGrid::new(schedule.steps(), dt, params.theta1, params.theta2, params.picard)?;
            bsde.check_contraction(driver)?;
            let point = if m == 1 {
                Some(PointKernel::build(model, &grid, dt, params.order, x0)?)
            } else {
                None
            };
            // uniform schedules share one kernel
            let reuse = kernels.iter().find(|k| (k.bsde.dt - dt).abs() <= 1e-14 * dt).map(|k| k.grid.clone());
            let grid_kernel = match reuse {
                Some(k) => k,
                None => StepKernel::build(model, &grid, dt, params.order)?,
            };
            kernels.push(IntervalKernels {
                bsde,
                grid: grid_kernel,
                point,
            });
        }
        Ok(Self {
            order: params.order,
            payoff,
            schedule,
            grid,
            nodes,
            sigma,
            kernels,
        })
    }

    fn exercise_state(&self, t: f64, y: Vec<f64>, driver: &DriverSpec, marks: Option<&[f64]>) -> Result<GridState> {
        let z = self
            .nodes
            .iter()
            .zip(&self.sigma)
            .map(|(&x, s)| Ok(self.payoff.derivative(t, x)? * s))
            .collect::<Result<Vec<f64>>>()?;
        let f = self.driver_values(t, &y, &z, driver, marks);
        Ok(GridState { t, y, z, f })
    }

    fn driver_values(&self, t: f64, y: &[f64], z: &[f64], driver: &DriverSpec, marks: Option<&[f64]>) -> Vec<f64> {
        (0..y.len())
            .map(|i| driver.generator(t, self.nodes[i], y[i], z[i], marks.map_or(y[i], |m| m[i])))
            .collect()
    }

    fn run(&self, driver: &DriverSpec, marks: Option<&Trace>) -> Result<(Trace, Vec<ExerciseBoundary>)> {
        let n = self.grid.n;
        let mut dct = DctEngine::new(n);
        let mut trace = Trace {
            states: Vec::new(),
            value: 0.0,
        };
        let mark_at = |g: usize| marks.map(|m| m.states[g].as_slice());
        let maturity = self.schedule.maturity();
        let terminal = self.payoff.on_grid(maturity, &self.nodes)?;
        let mut state = self.exercise_state(maturity, terminal, driver, mark_at(0))?;
        trace.states.push(state.y.clone());
        let mut boundary = Vec::with_capacity(self.schedule.len().saturating_sub(1));
        for m in (1..=self.schedule.len()).rev() {
            let k = &self.kernels[m - 1];
            let steps = self.schedule.steps();
            for n_step in (0..steps).rev() {
                let coeffs = StepCoeffs::from_state(&state, &mut dct);
                if m == 1 && n_step == 0 {
                    let point = k.point.as_ref().expect("first interval carries the point kernel");
                    let (value, _) = theta_step_point(point, &coeffs, &k.bsde, driver, marks.map(|t| t.value), 0)?;
                    trace.value = value;
                    break;
                }
                let g = trace.states.len();
                let (mut next, _) = theta_step(&k.grid, &coeffs, &self.nodes, &k.bsde, driver, mark_at(g), n_step)?;
                if n_step == 0 {
                    // exercise date t_{m-1}
                    let t = self.schedule.start(m);
                    next.t = t;
                    let phi = self.payoff.on_grid(t, &self.nodes)?;
                    boundary.push(ExerciseBoundary::locate(t, &self.nodes, &next.y, &phi));
                    let exercised: Vec<bool> = next.y.iter().zip(&phi).map(|(c, p)| p > c).collect();
                    let y: Vec<f64> = next.y.iter().zip(&phi).map(|(c, p)| c.max(*p)).collect();
                    let ex = self.exercise_state(t, y, driver, mark_at(g))?;
                    for i in 0..n {
                        if exercised[i] {
                            next.z[i] = ex.z[i];
                        }
                    }
                    next.y = ex.y;
                    next.f = self.driver_values(t, &next.y, &next.z, driver, mark_at(g));
                }
                trace.states.push(next.y.clone());
                state = next;
            }
        }
        boundary.reverse();
        Ok((trace, boundary))
    }

    fn warnings(&self, boundary: &[ExerciseBoundary]) -> Vec<String> {
        let (lo, hi) = (self.nodes[0], self.nodes[self.nodes.len() - 1]);
        let dx = self.grid.dx();
        let mut out = Vec::new();
        for b in boundary {
            let touches = b.crossings.iter().any(|&x| x - lo < dx || hi - x < dx);
            if touches || (b.crossings.is_empty() && b.exercise_fraction == 1.0) {
                out.push(format!(
                    "exercise boundary at t = {} reaches the truncation range [{}, {}]",
                    b.t, self.grid.a, self.grid.b
                ));
            }
        }
        for (m, k) in self.kernels.iter().enumerate() {
            if k.grid.reduced_nodes > 0 {
                out.push(format!(
                    "interval {}: expansion order reduced at {} of {} nodes to keep |characteristic function| <= 1",
                    m + 1,
                    k.grid.reduced_nodes,
                    self.grid.n
                ));
            }
            if let Some(p) = &k.point {
                if p.order < self.order {
                    out.push(format!("expansion order at X_0 reduced to {}", p.order));
                }
            }
        }
        out
    }
}

/// Bermudan value with valuation adjustments: backward over the exercise
/// dates, `N` theta-steps per interval, `max(phi, c)` at each date.
pub fn price_bermudan_xva(
    model: &ModelSpec<f64>,
    payoff: &PayoffSpec,
    schedule: &ExerciseSchedule,
    driver: &DriverSpec,
    params: &CosParams,
) -> Result<PricingResult> {
    let start = Instant::now();
    let rec = Recursion::new(model, payoff, schedule, driver, params)?;
    let setup = start.elapsed();
    let start = Instant::now();
    let marks = if driver.needs_risk_free_mark() {
        Some(rec.run(&DriverSpec::linear(driver.rates.r), None)?.0)
    } else {
        None
    };
    let (trace, boundary) = rec.run(driver, marks.as_ref())?;
    let backward = start.elapsed();
    let warnings = rec.warnings(&boundary);
    Ok(PricingResult {
        value: trace.value,
        boundary,
        warnings,
        timings: Timings { setup, backward },
        grid: rec.grid,
    })
}

/// Measured cost of one pricing run against the operation count
/// `M N (J + J^2 + P J + J log2 J)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexityReport {
    pub j: usize,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    /// Best wall time over the repeats, in seconds.
    pub seconds: f64,
    pub operations: f64,
}

impl ComplexityReport {
    pub fn ns_per_operation(&self) -> f64 {
        1e9 * self.seconds / self.operations
    }
}

pub fn operation_count(j: usize, n: usize, m: usize, p: usize) -> f64 {
    let jf = j as f64;
    (m * n) as f64 * (jf + jf * jf + (p as f64) * jf + jf * jf.log2())
}

/// Times the XVA pricer on the CEV-like test case (portfolio payoff, simplified
/// driver, `T = 0.5`, `X_0 = 0.4`).
pub fn complexity_probe(j: usize, n: usize, m: usize, p: usize, repeats: usize) -> Result<ComplexityReport> {
    let model = ModelSpec::cev_like(0.15, -2.0, 0.2, -0.2, 0.2, 0.0, 0.1, 0.4)?;
    let schedule = ExerciseSchedule::uniform(0.5, m, n)?;
    let params = CosParams {
        n: j,
        picard: p,
        ..CosParams::default()
    };
    let driver = DriverSpec::simplified(0.1);
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let r = price_bermudan_xva(&model, &PayoffSpec::PortfolioLinear, &schedule, &driver, &params)?;
        best = best.min(r.timings.total().as_secs_f64());
    }
    Ok(ComplexityReport {
        j,
        n,
        m,
        p,
        seconds: best,
        operations: operation_count(j, n, m, p),
    })
}
