//! Unilateral CVA of Bermudan puts on `S = e^X`.
//!
//! Without a funding nonlinearity the risky value is a plain optimal-stopping
//! problem for the process killed at rate `gamma(x)`, so no BSDE is needed.
//! Each leg runs the COS backward recursion on the cosine coefficients
//! `V_j(t_m)`: the exercise point `x*_m` splits `[a, b]` into a payoff part,
//! integrated in closed form, and a continuation part whose coefficients are
//! Hankel plus Toeplitz products evaluated with the FFT. The defaultable leg
//! carries `gamma` inside the expanded characteristic function, the
//! default-free leg uses the same dynamics with `gamma = 0`.
//!
//! Both legs share one [`Frame`]: the truncation range and the single
//! expansion basepoint `xbar`. Keeping the frame fixed while moving `X_0` is
//! what the closed-form sensitivities differentiate.

use std::time::{Duration, Instant};

use crate::bermudan::ExerciseSchedule;
use crate::charfunc::{cumulants, CharFuncApprox};
use crate::cos::{dense_continuation, prime_weight, put_payoff_coeffs, rotation_iter, CosGrid, ROTATION_ANCHOR, HankelToeplitz, WindowSpectra};
use crate::model::{CoefficientFamily, ModelSpec};
use crate::bsde::CF_BOUND_SLACK;
use crate::{Complex, Error, Result};

/// Counterparty default intensity with zero recovery: the option pays
/// nothing once the counterparty has defaulted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefaultSpec {
    pub intensity: CoefficientFamily<f64>,
}

impl DefaultSpec {
    pub fn none() -> Self {
        Self { intensity: CoefficientFamily::Zero }
    }

    pub fn constant(c: f64) -> Self {
        Self { intensity: CoefficientFamily::Constant(c) }
    }

    /// `gamma(x) = c e^{beta x}`.
    pub fn exponential(c: f64, beta: f64) -> Self {
        Self { intensity: CoefficientFamily::Exponential { scale: c, beta } }
    }

    pub fn validate(&self) -> Result<()> {
        let c = match self.intensity {
            CoefficientFamily::Zero => 0.0,
            CoefficientFamily::Constant(c) => c,
            CoefficientFamily::Exponential { scale, beta } => {
                if !beta.is_finite() {
                    return Err(Error::InvalidModel(format!("default exponent beta = {beta} is not finite")));
                }
                scale
            }
        };
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::InvalidModel(format!("default scale c = {c} must be finite and >= 0")));
        }
        Ok(())
    }

    pub fn is_none(&self) -> bool {
        self.intensity.is_zero()
    }

    /// `model` with this default intensity in place of its own.
    pub fn apply(&self, model: &ModelSpec<f64>) -> ModelSpec<f64> {
        if self.is_none() {
            model.default_free()
        } else {
            model.with_default(self.intensity)
        }
    }
}

/// How the continuation coefficients are multiplied out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Products {
    /// Hankel plus Toeplitz products through FFTs of length `2J`.
    Fft,
    /// Explicit `J x J` matrices.
    Dense,
}

/// Expansion basepoints of the backward steps. The final step from `t_1` to
/// `t_0` always expands around `X_0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basepoints {
    /// One basepoint `xbar = X_0` for the whole range, no safeguards.
    Single,
    /// `[a, b]` cut into this many equal panels, each expanded around its
    /// midpoint; a panel still violating the bound below falls back to a
    /// lower order.
    Panels(usize),
    /// `Single` when the expanded characteristic function stays within
    /// `|Gamma| <= 1 + CF_BOUND_SLACK` on every grid node, otherwise the
    /// smallest power-of-two panel count that does, up to `min(64, J/4)`.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvaParams {
    pub n: usize,
    pub l: f64,
    pub order: usize,
    pub products: Products,
    pub basepoints: Basepoints,
}

impl Default for CvaParams {
    fn default() -> Self {
        Self {
            n: 100,
            l: 10.0,
            order: 2,
            products: Products::Fft,
            basepoints: Basepoints::Auto,
        }
    }
}

impl CvaParams {
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
        if let Basepoints::Panels(p) = self.basepoints {
            if p == 0 || p > self.n {
                return Err(Error::InvalidArgument(format!("panel count must lie in 1..=J, got {p}")));
            }
        }
        Ok(())
    }
}

/// Truncation range and expansion basepoint shared by both legs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub grid: CosGrid<f64>,
    pub basepoint: f64,
}

impl Frame {
    /// Range from the default-free frozen law of `X_T - X_0` at `model.spot`,
    /// basepoint `X_0`.
    pub fn for_model(model: &ModelSpec<f64>, horizon: f64, params: &CvaParams) -> Result<Self> {
        params.validate()?;
        let x0 = model.spot;
        let td = model.default_free().taylor_expand(0.0, x0, 0)?;
        let (c1, c2, c4) = cumulants(&td, 0.0, horizon);
        Ok(Self {
            grid: CosGrid::from_cumulants(x0 + c1, c2, c4, params.l, params.n)?,
            basepoint: x0,
        })
    }

    /// `(lo, hi, xbar)` of each panel.
    pub fn partition(&self, panels: usize) -> Vec<(f64, f64, f64)> {
        let g = &self.grid;
        if panels <= 1 {
            return vec![(g.a, g.b, self.basepoint)];
        }
        let w = g.width() / panels as f64;
        (0..panels)
            .map(|p| {
                let lo = g.a + p as f64 * w;
                let hi = if p + 1 == panels { g.b } else { lo + w };
                (lo, hi, 0.5 * (lo + hi))
            })
            .collect()
    }
}

struct Panel {
    lo: f64,
    hi: f64,
    cf: CharFuncApprox<f64>,
}

/// Expanded transition law over one interval, piecewise in the basepoint.
struct IntervalLaw {
    panels: Vec<Panel>,
    /// Panels that had to drop below the requested order.
    reduced: usize,
}

const BOUND_SQ: f64 = (1.0 + CF_BOUND_SLACK) * (1.0 + CF_BOUND_SLACK);

fn cf_bounded(cf: &CharFuncApprox<f64>, points: impl Iterator<Item = f64>) -> bool {
    points.into_iter().all(|x| {
        let y = x - cf.basepoint;
        (0..cf.len()).all(|k| {
            let mut acc = cf.coeffs[cf.order][k];
            for h in (0..cf.order).rev() {
                acc = acc * y + cf.coeffs[h][k];
            }
            acc.norm_sqr() <= BOUND_SQ
        })
    })
}

fn panel_points<'a>(nodes: &'a [f64], lo: f64, hi: f64) -> impl Iterator<Item = f64> + 'a {
    std::iter::once(lo)
        .chain(nodes.iter().copied().filter(move |x| *x > lo && *x < hi))
        .chain(std::iter::once(hi))
}

impl IntervalLaw {
    /// With `reduce`, a panel violating the bound falls back to the highest
    /// order that respects it.
    fn build(model: &ModelSpec<f64>, frame: &Frame, dt: f64, order: usize, panels: usize, reduce: bool) -> Result<(Self, bool)> {
        let ladder = frame.grid.ladder(&model.jump);
        let nodes = frame.grid.nodes();
        let mut out = Vec::with_capacity(panels);
        let mut reduced = 0;
        let mut bounded = true;
        for (lo, hi, xbar) in frame.partition(panels) {
            let mut k = order;
            loop {
                let taylor = model.taylor_expand(0.0, xbar, k)?;
                // time-homogeneous coefficients: the law depends on dt only
                let cf = CharFuncApprox::build(&taylor, 0.0, dt, &ladder, k)?;
                let ok = cf_bounded(&cf, panel_points(&nodes, lo, hi));
                if ok || !reduce || k == 0 {
                    bounded &= ok;
                    if k < order {
                        reduced += 1;
                    }
                    out.push(Panel { lo, hi, cf });
                    break;
                }
                k -= 1;
            }
        }
        Ok((Self { panels: out, reduced }, bounded))
    }

    /// Whether every panel respects the bound at full order; stops at the
    /// first one that does not.
    fn bounded(model: &ModelSpec<f64>, frame: &Frame, dt: f64, order: usize, panels: usize) -> Result<bool> {
        let ladder = frame.grid.ladder(&model.jump);
        let nodes = frame.grid.nodes();
        for (lo, hi, xbar) in frame.partition(panels) {
            let cf = CharFuncApprox::build(&model.taylor_expand(0.0, xbar, order)?, 0.0, dt, &ladder, order)?;
            if !cf_bounded(&cf, panel_points(&nodes, lo, hi)) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn panel_at(&self, x: f64) -> &Panel {
        self.panels.iter().find(|p| x < p.hi).unwrap_or_else(|| self.panels.last().unwrap())
    }

    fn value(&self, a: f64, v: &[f64], x: f64) -> f64 {
        series(&self.panel_at(x).cf, a, v, x)
    }
}

const MAX_AUTO_PANELS: usize = 64;

/// Step lengths closer than this (relative) share one interval law; uniform
/// schedules differ by rounding only.
const STEP_MATCH: f64 = 1e-12;

fn same_step(a: f64, b: f64) -> bool {
    (a - b).abs() <= STEP_MATCH * a.abs().max(b.abs())
}

fn distinct_steps(schedule: &ExerciseSchedule) -> Vec<f64> {
    let mut steps: Vec<f64> = Vec::new();
    for w in schedule.dates().windows(2) {
        let dt = w[1] - w[0];
        if !steps.iter().any(|&s| same_step(s, dt)) {
            steps.push(dt);
        }
    }
    steps
}

fn step_slot(steps: &[f64], dt: f64) -> usize {
    steps.iter().position(|&s| same_step(s, dt)).expect("every interval has a step slot")
}

/// Panel count `Basepoints::Auto` settles on for `model` on `frame`.
pub fn auto_panels(model: &ModelSpec<f64>, schedule: &ExerciseSchedule, params: &CvaParams, frame: &Frame) -> Result<usize> {
    let steps = distinct_steps(schedule);
    let cap = MAX_AUTO_PANELS.min(params.n / 4).max(1);
    let mut needed = 1;
    for dt in steps {
        let mut p = needed;
        while p < cap && !IntervalLaw::bounded(model, frame, dt, params.order, p)? {
            p = (2 * p).min(cap);
        }
        needed = needed.max(p);
    }
    Ok(needed)
}

fn resolve_panels(model: &ModelSpec<f64>, schedule: &ExerciseSchedule, params: &CvaParams, frame: &Frame) -> Result<usize> {
    match params.basepoints {
        Basepoints::Single => Ok(1),
        Basepoints::Panels(p) => Ok(p),
        Basepoints::Auto => auto_panels(model, schedule, params, frame),
    }
}

/// How the exercise split at one date came about.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    /// `c - phi` changes sign at `x`.
    Crossing,
    /// `c > phi` on the whole bracket; `x` is its lower end.
    NeverExercise,
    /// `c < phi` on the whole bracket; `x` is its upper end.
    AlwaysExercise,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExercisePoint {
    pub x: f64,
    pub kind: SplitKind,
    /// The scan met another sign change above the split.
    pub multiple: bool,
    pub iterations: usize,
}

const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 100;
const SCAN_POINTS: usize = 64;

/// Root of `c - phi` on `bracket`, with exercise (`c < phi`) to the left of it.
///
/// A coarse scan walks down from the top of the bracket and stops at the
/// first change from exercise to continuation, the one nearest the
/// continuation region: far-tail sign changes come from the expansion losing
/// accuracy there. That cell is refined by Newton with a central-difference
/// slope, started from `guess` and kept inside the cell by bisection. Without
/// any such change the topmost sign change is refined, and without any change
/// at all the split degenerates to an end of the bracket according to the
/// sign.
pub fn newton_exercise_point<C, P>(continuation: C, payoff: P, bracket: (f64, f64), guess: Option<f64>) -> ExercisePoint
where
    C: Fn(f64) -> f64,
    P: Fn(f64) -> f64,
{
    let d = |x: f64| continuation(x) - payoff(x);
    let (lo, hi) = bracket;
    let (dlo, dhi) = (d(lo), d(hi));
    let mut changes = 0;
    let mut topmost = None;
    let mut chosen = None;
    let mut upper = (hi, dhi);
    for i in (0..SCAN_POINTS).rev() {
        let x = lo + (hi - lo) * i as f64 / SCAN_POINTS as f64;
        let v = if i == 0 { dlo } else { d(x) };
        if (v > 0.0) != (upper.1 > 0.0) {
            changes += 1;
            topmost.get_or_insert((x, upper.0));
            if v <= 0.0 {
                chosen = Some((x, upper.0));
                break;
            }
        }
        upper = (x, v);
    }
    let multiple = changes > 1;
    let Some((mut l, mut r)) = chosen.or(topmost) else {
        let (x, kind) = if dlo > 0.0 { (lo, SplitKind::NeverExercise) } else { (hi, SplitKind::AlwaysExercise) };
        return ExercisePoint { x, kind, multiple, iterations: 0 };
    };
    let dl = d(l);
    if dl == 0.0 {
        return ExercisePoint { x: l, kind: SplitKind::Crossing, multiple, iterations: 0 };
    }
    let mut x = guess.filter(|g| *g > l && *g < r).unwrap_or(0.5 * (l + r));
    let mut iterations = 0;
    while iterations < NEWTON_MAX_ITER {
        iterations += 1;
        let fx = d(x);
        if fx.abs() < NEWTON_TOL {
            break;
        }
        if (fx > 0.0) == (dl > 0.0) {
            l = x;
        } else {
            r = x;
        }
        if r - l <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
            break;
        }
        let h = 1e-6 * (r - l).min(1.0);
        let slope = (d(x + h) - d(x - h)) / (2.0 * h);
        let step = x - fx / slope;
        x = if step.is_finite() && step >= l && step <= r { step } else { 0.5 * (l + r) };
    }
    ExercisePoint {
        x,
        kind: SplitKind::Crossing,
        multiple,
        iterations,
    }
}

/// Early-exercise points at `t_1, ..., t_M`; the put is exercised below them.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrace {
    pub dates: Vec<f64>,
    pub points: Vec<ExercisePoint>,
}

impl BoundaryTrace {
    pub fn x_star(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.x).collect()
    }
}

/// One leg of the recursion, with the state needed to revalue or
/// differentiate the final step at another spot on the same frame.
#[derive(Debug, Clone)]
pub struct CosLeg {
    /// Value at `(t_0, X_0)`.
    pub value: f64,
    pub boundary: BoundaryTrace,
    pub warnings: Vec<String>,
    pub frame: Frame,
    /// Basepoint panels of the backward steps.
    pub panels: usize,
    pub elapsed: Duration,
    first: CharFuncApprox<f64>,
    first_discount: f64,
    /// `V_j(t_1)`.
    coeffs: Vec<f64>,
}

/// `sum'_k V_k Re(e^{i xi_k (x - a)} P_k(x))` and its first two
/// x-derivatives with `P_k(x) = sum_h (x - xbar)^h g_{n,h}(xi_k)`.
fn series_with_derivatives(cf: &CharFuncApprox<f64>, a: f64, v: &[f64], x: f64) -> [f64; 3] {
    let y = x - cf.basepoint;
    let rot = rotation_iter(cf.freqs.get(1).copied().unwrap_or(0.0) * (x - a));
    let mut out = [0.0; 3];
    for (k, ((&xi, &vk), e)) in cf.freqs.iter().zip(v).zip(rot).enumerate() {
        let g = |h: usize| cf.coeffs.get(h).map_or(Complex::new(0.0, 0.0), |c| c[k]);
        let p = g(0) + g(1) * y + g(2) * (y * y);
        let dp = g(1) + g(2) * (2.0 * y);
        let ddp = g(2) * 2.0;
        let iw = Complex::new(0.0, xi);
        let w = vk * prime_weight::<f64>(k);
        out[0] += w * (e * p).re;
        out[1] += w * (e * (iw * p + dp)).re;
        out[2] += w * (e * (iw * iw * p + iw * dp * 2.0 + ddp)).re;
    }
    out
}

fn series(cf: &CharFuncApprox<f64>, a: f64, v: &[f64], x: f64) -> f64 {
    let y = x - cf.basepoint;
    let theta = cf.freqs.get(1).copied().unwrap_or(0.0) * (x - a);
    let step = Complex::from_polar(1.0, theta);
    let mut e = Complex::new(1.0, 0.0);
    let mut s = 0.0;
    for (k, &vk) in v.iter().enumerate().take(cf.freqs.len()) {
        if k % ROTATION_ANCHOR == 0 {
            e = Complex::from_polar(1.0, k as f64 * theta);
        }
        let mut acc = cf.coeffs[cf.order][k];
        for h in (0..cf.order).rev() {
            acc = acc * y + cf.coeffs[h][k];
        }
        s += vk * prime_weight::<f64>(k) * (e * acc).re;
        e *= step;
    }
    s
}

impl CosLeg {
    /// Value at `(t_0, x)` on the same frame.
    pub fn value_at(&self, x: f64) -> f64 {
        self.first_discount * series(&self.first, self.frame.grid.a, &self.coeffs, x)
    }

    /// `(u, du/dx, d2u/dx2)` at `(t_0, x)` on the same frame.
    pub fn derivatives_at(&self, x: f64) -> [f64; 3] {
        series_with_derivatives(&self.first, self.frame.grid.a, &self.coeffs, x).map(|v| self.first_discount * v)
    }

    /// `V_j(t_1)`.
    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }
}

fn put_payoff(strike: f64, x: f64) -> f64 {
    (strike - x.exp()).max(0.0)
}

/// Bermudan put with strike `strike` under `model` on a given frame.
pub fn price_leg(
    model: &ModelSpec<f64>,
    strike: f64,
    schedule: &ExerciseSchedule,
    params: &CvaParams,
    frame: &Frame,
) -> Result<CosLeg> {
    let start = Instant::now();
    params.validate()?;
    if !(strike > 0.0) || !strike.is_finite() {
        return Err(Error::InvalidPayoff(format!("strike must be finite and > 0, got {strike}")));
    }
    let grid = frame.grid;
    if grid.n != params.n {
        return Err(Error::InvalidGrid(format!("frame has J = {}, parameters ask for {}", grid.n, params.n)));
    }
    let dates = schedule.dates();
    let m_count = dates.len();
    let panels = resolve_panels(model, schedule, params, frame)?;
    let mut warnings = Vec::new();
    let reduce = params.basepoints != Basepoints::Single;
    let steps = distinct_steps(schedule);
    let mut laws = Vec::with_capacity(steps.len());
    for &dt in &steps {
        let (law, _) = IntervalLaw::build(model, frame, dt, params.order, panels, reduce)?;
        if law.reduced > 0 {
            warnings.push(format!("dt = {dt}: {} of {panels} panels expanded below order {}", law.reduced, params.order));
        }
        laws.push(law);
    }

    let log_k = strike.ln();
    let hi = log_k.min(grid.b);
    let mut points = Vec::with_capacity(m_count);
    let maturity = schedule.maturity();
    let mut v = if hi > grid.a {
        put_payoff_coeffs(strike, &grid, hi, maturity)?.values
    } else {
        warnings.push(format!("log K = {log_k} is below the truncation range [{}, {}]", grid.a, grid.b));
        vec![0.0; grid.n]
    };
    points.push(ExercisePoint {
        x: hi.max(grid.a),
        kind: SplitKind::Crossing,
        multiple: false,
        iterations: 0,
    });

    let mut engine = HankelToeplitz::new(grid.n);
    let mut spectra: Vec<Vec<Option<WindowSpectra<f64>>>> = laws.iter().map(|l| vec![None; l.panels.len()]).collect();
    let mut guess = Some(log_k);
    for m in (1..m_count).rev() {
        let (t_m, t_next) = (dates[m - 1], dates[m]);
        let slot = step_slot(&steps, t_next - t_m);
        let law = &laws[slot];
        let disc = (-model.rate * (t_next - t_m)).exp();
        let point = if hi > grid.a {
            let cont = |x: f64| disc * law.value(grid.a, &v, x);
            newton_exercise_point(cont, |x| put_payoff(strike, x), (grid.a, hi), guess)
        } else {
            ExercisePoint { x: grid.a, kind: SplitKind::NeverExercise, multiple: false, iterations: 0 }
        };
        if point.multiple {
            warnings.push(format!("t = {t_m}: several exercise crossings, splitting at {}", point.x));
        }
        if point.kind != SplitKind::Crossing && hi > grid.a {
            warnings.push(format!("t = {t_m}: no exercise crossing ({:?}), x* = {}", point.kind, point.x));
        }
        let edge = 1e-3 * grid.width();
        if point.kind == SplitKind::Crossing && (point.x - grid.a < edge || grid.b - point.x < edge) {
            warnings.push(format!("t = {t_m}: exercise point {} is at the truncation bounds", point.x));
        }
        let payoff_part = if point.x > grid.a {
            put_payoff_coeffs(strike, &grid, point.x, t_m)?.values
        } else {
            vec![0.0; grid.n]
        };
        let mut next = payoff_part;
        let cont = match params.products {
            Products::Fft => {
                let cache = &mut spectra[slot];
                for (panel, cached) in law.panels.iter().zip(cache.iter_mut()).filter(|(p, _)| p.hi > point.x) {
                    let orders = panel.cf.coeffs.len();
                    let xbar = panel.cf.basepoint;
                    if panel.lo >= point.x {
                        // the window is the whole panel: its kernels do not change between dates
                        if cached.is_none() {
                            *cached = Some(engine.window_spectra(&grid, orders, panel.lo, panel.hi, xbar)?);
                        }
                        engine.accumulate(&v, &panel.cf.coeffs, cached.as_ref().unwrap())?;
                    } else {
                        let cut = engine.window_spectra(&grid, orders, point.x, panel.hi, xbar)?;
                        engine.accumulate(&v, &panel.cf.coeffs, &cut)?;
                    }
                }
                engine.finish(&grid)
            }
            Products::Dense => {
                let mut sum = vec![0.0; grid.n];
                for panel in law.panels.iter().filter(|p| p.hi > point.x) {
                    let part = dense_continuation(&grid, &v, &panel.cf.coeffs, panel.lo.max(point.x), panel.hi, panel.cf.basepoint)?;
                    sum.iter_mut().zip(&part).for_each(|(s, c)| *s += c);
                }
                sum
            }
        };
        next.iter_mut().zip(&cont).for_each(|(n, c)| *n += disc * c);
        v = next;
        guess = Some(point.x);
        points.push(point);
    }
    points.reverse();

    let taylor = model.taylor_expand(0.0, frame.basepoint, params.order)?;
    let first = CharFuncApprox::build(&taylor, 0.0, dates[0], &grid.ladder(&model.jump), params.order)?;
    let first_discount = (-model.rate * dates[0]).exp();
    let value = first_discount * series(&first, grid.a, &v, model.spot);
    if !value.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite leg value {value}")));
    }
    Ok(CosLeg {
        value,
        boundary: BoundaryTrace {
            dates: dates.to_vec(),
            points,
        },
        warnings,
        frame: *frame,
        panels,
        elapsed: start.elapsed(),
        first,
        first_discount,
        coeffs: v,
    })
}

/// Bermudan put under `model` as it stands (its own default intensity), on
/// the frame of its default-free law at `model.spot`.
pub fn price_bermudan_cos(model: &ModelSpec<f64>, strike: f64, schedule: &ExerciseSchedule, params: &CvaParams) -> Result<CosLeg> {
    let frame = Frame::for_model(model, schedule.maturity(), params)?;
    price_leg(model, strike, schedule, params, &frame)
}

#[derive(Debug, Clone)]
pub struct CvaResult {
    /// `u - u_hat` at `(t_0, X_0)`.
    pub cva: f64,
    pub risky: CosLeg,
    pub risk_free: CosLeg,
    pub elapsed: Duration,
}

impl CvaResult {
    pub fn frame(&self) -> Frame {
        self.risk_free.frame
    }

    pub fn warnings(&self) -> Vec<String> {
        let tag = |leg: &str, w: &String| format!("{leg}: {w}");
        self.risky
            .warnings
            .iter()
            .map(|w| tag("defaultable", w))
            .chain(self.risk_free.warnings.iter().map(|w| tag("default-free", w)))
            .collect()
    }
}

/// CVA of the Bermudan put on an explicit frame. The default intensity of
/// `model` itself is ignored: `default` sets the defaultable leg and the
/// default-free leg has none.
pub fn cva_on_frame(
    model: &ModelSpec<f64>,
    default: &DefaultSpec,
    strike: f64,
    schedule: &ExerciseSchedule,
    params: &CvaParams,
    frame: &Frame,
) -> Result<CvaResult> {
    let start = Instant::now();
    default.validate()?;
    let risk_free_model = model.default_free();
    let risky_model = default.apply(model);
    let params = if params.basepoints == Basepoints::Auto {
        params.validate()?;
        let (a, b) = rayon::join(
            || auto_panels(&risky_model, schedule, params, frame),
            || auto_panels(&risk_free_model, schedule, params, frame),
        );
        let p = a?.max(b?);
        // the order fallback stays per leg; the partition is shared
        &CvaParams { basepoints: Basepoints::Panels(p), ..*params }
    } else {
        params
    };
    let (risky, risk_free) = rayon::join(
        || price_leg(&risky_model, strike, schedule, params, frame),
        || price_leg(&risk_free_model, strike, schedule, params, frame),
    );
    let (risky, risk_free) = (risky?, risk_free?);
    if risky.frame != risk_free.frame {
        return Err(Error::InvalidGrid("legs were priced on different frames".into()));
    }
    Ok(CvaResult {
        cva: risk_free.value - risky.value,
        risky,
        risk_free,
        elapsed: start.elapsed(),
    })
}

/// CVA of the Bermudan put struck at `strike`, reported as `u - u_hat`.
pub fn cva(
    model: &ModelSpec<f64>,
    default: &DefaultSpec,
    strike: f64,
    schedule: &ExerciseSchedule,
    params: &CvaParams,
) -> Result<CvaResult> {
    let frame = Frame::for_model(model, schedule.maturity(), params)?;
    cva_on_frame(model, default, strike, schedule, params, &frame)
}

/// Sensitivities of the CVA to the log-spot `X_0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvaGreeks {
    /// `d CVA / dX_0`.
    pub delta: f64,
    /// `d^2 CVA / dX_0^2`.
    pub gamma: f64,
}

impl CvaGreeks {
    /// `d CVA / dS_0` with `S_0 = e^{X_0}`.
    pub fn spot_delta(&self, x0: f64) -> f64 {
        self.delta * (-x0).exp()
    }

    /// `d^2 CVA / dS_0^2`.
    pub fn spot_gamma(&self, x0: f64) -> f64 {
        (self.gamma - self.delta) * (-2.0 * x0).exp()
    }
}

/// Closed-form Greeks from the final backward step of both legs:
/// differentiating `e^{i xi (x - a)} sum_h (x - xbar)^h g_{n,h}` in `x` with
/// the coefficients `V_j(t_1)` held fixed.
pub fn greeks(result: &CvaResult, x0: f64) -> CvaGreeks {
    let [_, df, ddf] = result.risk_free.derivatives_at(x0);
    let [_, dr, ddr] = result.risky.derivatives_at(x0);
    CvaGreeks {
        delta: df - dr,
        gamma: ddf - ddr,
    }
}
