//! Monte Carlo reference: Euler paths of the local Lévy model with default,
//! and least-squares Monte Carlo for Bermudan values, XVA and CVA.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;

use crate::bermudan::{ExerciseSchedule, PayoffSpec};
use crate::bsde::{DriverMode, DriverSpec};
use crate::model::ModelSpec;
use crate::{Complex, Error, Result};

/// Paths per independent RNG stream.
pub const BLOCK: usize = 1024;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;

/// Simulated paths. `x` is row-major, one row of `steps + 1` values per path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    pub seed: u64,
    pub steps: usize,
    pub n_paths: usize,
    pub dt: f64,
    pub x: Vec<f64>,
    /// Cumulative default intensity `int_0^{t_k} gamma(X_s) ds`, same layout as `x`.
    pub hazard: Option<Vec<f64>>,
    /// First step index at which the path is in default, `u32::MAX` if never.
    pub default_step: Option<Vec<u32>>,
}

impl PathBatch {
    pub fn path(&self, i: usize) -> &[f64] {
        let w = self.steps + 1;
        &self.x[i * w..(i + 1) * w]
    }

    #[inline]
    pub fn at(&self, i: usize, k: usize) -> f64 {
        self.x[i * (self.steps + 1) + k]
    }

    /// `e^{-int_{t_j}^{t_k} gamma}`.
    #[inline]
    pub fn survival_factor(&self, i: usize, j: usize, k: usize) -> f64 {
        match &self.hazard {
            Some(h) => {
                let w = self.steps + 1;
                (h[i * w + j] - h[i * w + k]).exp()
            }
            None => 1.0,
        }
    }

    /// Whether path `i` is still alive at step `k`.
    #[inline]
    pub fn alive(&self, i: usize, k: usize) -> bool {
        self.default_step.as_ref().is_none_or(|d| (d[i] as usize) > k)
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.n_paths).map(|i| self.at(i, k)).collect()
    }

    /// Header `seed, steps, n_paths` as little-endian `u64`, then the path
    /// values as little-endian `f64`, row-major.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Io(e.to_string());
        for v in [self.seed, self.steps as u64, self.n_paths as u64] {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        for v in &self.x {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Reads the layout of [`PathBatch::write_to`]; default data is not stored.
    pub fn read_from<R: Read>(mut r: R, dt: f64) -> Result<Self> {
        let io = |e: std::io::Error| Error::Io(e.to_string());
        let mut word = [0u8; 8];
        let mut header = [0u64; 3];
        for h in header.iter_mut() {
            r.read_exact(&mut word).map_err(io)?;
            *h = u64::from_le_bytes(word);
        }
        let [seed, steps, n_paths] = header;
        let len = (steps as usize + 1)
            .checked_mul(n_paths as usize)
            .ok_or_else(|| Error::Io("path dump header overflows".into()))?;
        let mut x = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut word).map_err(io)?;
            x.push(f64::from_le_bytes(word));
        }
        Ok(Self {
            seed,
            steps: steps as usize,
            n_paths: n_paths as usize,
            dt,
            x,
            hazard: None,
            default_step: None,
        })
    }
}

fn poisson_inverse(lambda: f64, u: f64) -> u32 {
    let mut p = (-lambda).exp();
    let mut cum = p;
    let mut n = 0u32;
    while u > cum && n < 10_000 {
        n += 1;
        p *= lambda / n as f64;
        cum += p;
    }
    n
}

/// Depth below the spot at which [`simulate`] absorbs paths. Coefficients
/// such as `b e^{beta x}` with `beta < 0` let Euler paths run off to `-inf`.
pub const DEFAULT_FLOOR_DEPTH: f64 = 50.0;

/// Euler paths of `X` under `model` on `[0, horizon]`, starting at `model.spot`,
/// absorbed at `spot - DEFAULT_FLOOR_DEPTH`.
///
/// Each block of [`BLOCK`] paths draws from its own ChaCha8 stream of `seed`,
/// so results do not depend on the thread count.
pub fn simulate(model: &ModelSpec<f64>, horizon: f64, steps: usize, n_paths: usize, seed: u64) -> Result<PathBatch> {
    simulate_with_floor(model, horizon, steps, n_paths, seed, model.spot - DEFAULT_FLOOR_DEPTH)
}

/// [`simulate`] with paths absorbed once they reach `floor`; the random
/// numbers consumed per step do not depend on the floor.
pub fn simulate_with_floor(
    model: &ModelSpec<f64>,
    horizon: f64,
    steps: usize,
    n_paths: usize,
    seed: u64,
    floor: f64,
) -> Result<PathBatch> {
    if steps == 0 || n_paths == 0 {
        return Err(Error::InvalidArgument("need steps >= 1 and n_paths >= 1".into()));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon must be > 0, got {horizon}")));
    }
    let dt = horizon / steps as f64;
    let sqdt = dt.sqrt();
    let w = steps + 1;
    let with_default = model.has_default();
    let (mean, std) = (model.jump.mean, model.jump.std);
    let mut x = vec![0.0; n_paths * w];
    let mut hazard = if with_default { vec![0.0; n_paths * w] } else { Vec::new() };
    let mut default_step = if with_default { vec![u32::MAX; n_paths] } else { Vec::new() };
    let block_rows = BLOCK * w;
    let mut hazard_blocks: Vec<&mut [f64]> = if with_default { hazard.chunks_mut(block_rows).collect() } else { Vec::new() };
    let mut default_blocks: Vec<&mut [u32]> = if with_default { default_step.chunks_mut(BLOCK).collect() } else { Vec::new() };
    let mut jobs: Vec<(usize, &mut [f64], Option<&mut [f64]>, Option<&mut [u32]>)> = Vec::new();
    for (b, xs) in x.chunks_mut(block_rows).enumerate() {
        let h = if with_default { Some(std::mem::take(&mut hazard_blocks[b])) } else { None };
        let d = if with_default { Some(std::mem::take(&mut default_blocks[b])) } else { None };
        jobs.push((b, xs, h, d));
    }
    jobs.into_par_iter().for_each(|(b, xs, mut hs, mut ds)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64);
        for (p, row) in xs.chunks_mut(w).enumerate() {
            let threshold: f64 = rng.sample(Exp1);
            row[0] = model.spot;
            let mut lambda_cum = 0.0;
            for k in 0..steps {
                let xk = row[k];
                let t = k as f64 * dt;
                let z: f64 = rng.sample(StandardNormal);
                let u: f64 = rng.random();
                let zj: f64 = rng.sample(StandardNormal);
                if xk <= floor {
                    row[k + 1] = xk;
                    if let Some(h) = hs.as_deref_mut() {
                        h[p * w + k + 1] = lambda_cum;
                    }
                    continue;
                }
                let a = model.jump_intensity_at(t, xk);
                let count = if a > 0.0 { poisson_inverse(a * dt, u) } else { 0 };
                let jumps = if count > 0 {
                    let nf = count as f64;
                    nf * mean + std * nf.sqrt() * zj
                } else {
                    0.0
                };
                row[k + 1] = (xk + model.drift(t, xk) * dt + model.sigma(t, xk) * sqdt * z + jumps - a * mean * dt).max(floor);
                if let Some(h) = hs.as_deref_mut() {
                    lambda_cum += model.default_intensity_at(t, xk) * dt;
                    h[p * w + k + 1] = lambda_cum;
                    let d = ds.as_deref_mut().unwrap();
                    if d[p] == u32::MAX && lambda_cum >= threshold {
                        d[p] = (k + 1) as u32;
                    }
                }
            }
        }
    });
    Ok(PathBatch {
        seed,
        steps,
        n_paths,
        dt,
        x,
        hazard: with_default.then_some(hazard),
        default_step: with_default.then_some(default_step),
    })
}

/// How default enters the LSM backward induction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefaultMode {
    /// Weight by the survival probability `e^{-int gamma}` along the path.
    Survival,
    /// Set the value to zero on the sampled default time.
    Indicator,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsmOptions {
    pub degree: usize,
    pub default_mode: DefaultMode,
}

impl Default for LsmOptions {
    fn default() -> Self {
        Self {
            degree: 3,
            default_mode: DefaultMode::Survival,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsmResult {
    pub estimate: f64,
    pub std_error: f64,
    pub ci: (f64, f64),
    pub warnings: Vec<String>,
    /// Per-path values at `t_0`; their mean is the estimate.
    pub path_values: Vec<f64>,
}

impl LsmResult {
    fn from_values(values: Vec<f64>, warnings: Vec<String>) -> Self {
        let (mean, se) = mean_and_se(&values);
        Self {
            estimate: mean,
            std_error: se,
            ci: (mean - Z95 * se, mean + Z95 * se),
            warnings,
            path_values: values,
        }
    }
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Least-squares fit of `y` on monomials of the standardized `x` over the
/// selected samples; returns fitted values at every sample.
struct Regression {
    degree: usize,
    warnings: Vec<String>,
}

impl Regression {
    fn fit(&mut self, x: &[f64], y: &[f64], select: &[bool], label: &str) -> Result<Vec<f64>> {
        let idx: Vec<usize> = (0..x.len()).filter(|&i| select[i]).collect();
        if idx.is_empty() {
            return Ok(vec![0.0; x.len()]);
        }
        let n = idx.len() as f64;
        let mean = idx.iter().map(|&i| x[i]).sum::<f64>() / n;
        let var = idx.iter().map(|&i| (x[i] - mean).powi(2)).sum::<f64>() / n;
        let ymean = idx.iter().map(|&i| y[i]).sum::<f64>() / n;
        let scale = var.sqrt();
        if !(scale > 1e-12 * mean.abs().max(1.0)) {
            return Ok(vec![ymean; x.len()]);
        }
        let mut degree = self.degree.min(idx.len().saturating_sub(1));
        loop {
            let p = degree + 1;
            let mut ata = DMatrix::<f64>::zeros(p, p);
            let mut aty = DVector::<f64>::zeros(p);
            let mut row = vec![0.0; p];
            for &i in &idx {
                let z = (x[i] - mean) / scale;
                row[0] = 1.0;
                for d in 1..p {
                    row[d] = row[d - 1] * z;
                }
                for r in 0..p {
                    aty[r] += row[r] * y[i];
                    for c in 0..=r {
                        ata[(r, c)] += row[r] * row[c];
                    }
                }
            }
            for r in 0..p {
                for c in 0..r {
                    ata[(c, r)] = ata[(r, c)];
                }
            }
            if let Some(chol) = ata.cholesky() {
                let beta = chol.solve(&aty);
                if beta.iter().all(|b| b.is_finite()) {
                    return Ok(x
                        .iter()
                        .map(|&xi| {
                            let z = (xi - mean) / scale;
                            beta.iter().rev().fold(0.0, |acc, b| acc * z + b)
                        })
                        .collect());
                }
            }
            if degree == 0 {
                return Err(Error::Regression(format!("{label}: normal equations are singular")));
            }
            degree -= 1;
            self.warnings
                .push(format!("{label}: rank-deficient regression, basis degree reduced to {degree}"));
        }
    }
}

fn exercise_steps(batch: &PathBatch, schedule: &ExerciseSchedule) -> Result<Vec<usize>> {
    let horizon = batch.dt * batch.steps as f64;
    if (schedule.maturity() - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::InvalidSchedule(format!(
            "batch horizon {horizon} differs from the last exercise date {}",
            schedule.maturity()
        )));
    }
    schedule
        .dates()
        .iter()
        .map(|&t| {
            let k = (t / batch.dt).round();
            if (k * batch.dt - t).abs() > 1e-9 * t.max(1.0) {
                return Err(Error::InvalidSchedule(format!("exercise date {t} is not on the simulation grid")));
            }
            Ok(k as usize)
        })
        .collect()
}

/// Bermudan value under `driver` by backward regression along `batch`.
///
/// Between steps `V_k = w_k (V_{k+1} + dt f(t_{k+1}, X_{k+1}, Y_{k+1}))`, with
/// `Y_{k+1}` the regression of `V_{k+1}` on `X_{k+1}` and `w_k` the survival
/// weight or default indicator. At exercise dates the continuation value is
/// regressed (in-the-money paths only for puts and calls) and replaced by
/// the payoff where that is larger.
pub fn lsm_price(
    batch: &PathBatch,
    payoff: &PayoffSpec,
    schedule: &ExerciseSchedule,
    driver: &DriverSpec,
    options: &LsmOptions,
) -> Result<LsmResult> {
    payoff.validate()?;
    driver.validate()?;
    let ex_steps = exercise_steps(batch, schedule)?;
    let n = batch.n_paths;
    let steps = batch.steps;
    let dt = batch.dt;
    let indicator = options.default_mode == DefaultMode::Indicator && batch.default_step.is_some();
    let mut reg = Regression {
        degree: options.degree,
        warnings: Vec::new(),
    };
    if driver.needs_risk_free_mark() {
        reg.warnings
            .push("risk-free close-out is approximated by the regressed value itself".into());
    }
    let itm_only = matches!(payoff, PayoffSpec::Put { .. } | PayoffSpec::Call { .. });
    let t_end = steps as f64 * dt;
    let mut v: Vec<f64> = (0..n)
        .map(|i| {
            if indicator && !batch.alive(i, steps) {
                Ok(0.0)
            } else {
                payoff.eval(t_end, batch.at(i, steps))
            }
        })
        .collect::<Result<_>>()?;
    let all = vec![true; n];
    let mut next_ex = ex_steps.len() as isize - 2;
    for k in (0..steps).rev() {
        let t1 = (k + 1) as f64 * dt;
        let x1 = batch.column(k + 1);
        if driver.mode != DriverMode::Zero {
            let alive: Vec<bool> = if indicator { (0..n).map(|i| batch.alive(i, k + 1)).collect() } else { all.clone() };
            // at maturity V is the payoff itself
            let yhat = if k + 1 == steps { v.clone() } else { reg.fit(&x1, &v, &alive, "driver")? };
            for i in 0..n {
                v[i] += dt * driver.generator(t1, x1[i], yhat[i], 0.0, yhat[i]);
            }
        }
        for (i, vi) in v.iter_mut().enumerate() {
            if indicator {
                if !batch.alive(i, k + 1) {
                    *vi = 0.0;
                }
            } else {
                *vi *= batch.survival_factor(i, k, k + 1);
            }
        }
        if next_ex >= 0 && ex_steps[next_ex as usize] == k {
            next_ex -= 1;
            if k == 0 {
                continue;
            }
            let t = k as f64 * dt;
            let xk = batch.column(k);
            let phi: Vec<f64> = xk.iter().map(|&x| payoff.eval(t, x)).collect::<Result<_>>()?;
            let select: Vec<bool> = (0..n)
                .map(|i| (!itm_only || phi[i] > 0.0) && (!indicator || batch.alive(i, k)))
                .collect();
            let cont = reg.fit(&xk, &v, &select, "continuation")?;
            for i in 0..n {
                if select[i] && phi[i] > cont[i] {
                    v[i] = phi[i];
                }
            }
        }
    }
    Ok(LsmResult::from_values(v, reg.warnings))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvaEstimate {
    /// `u - û` from paired path differences.
    pub cva: f64,
    pub std_error: f64,
    pub ci: (f64, f64),
    pub risky: LsmResult,
    pub risk_free: LsmResult,
}

/// Unilateral CVA from a defaultable batch and a default-free batch sharing
/// the same seed, so that path `i` of both uses the same random numbers.
pub fn lsm_cva(
    defaultable: &PathBatch,
    default_free: &PathBatch,
    payoff: &PayoffSpec,
    schedule: &ExerciseSchedule,
    rate: f64,
    options: &LsmOptions,
) -> Result<CvaEstimate> {
    if defaultable.seed != default_free.seed
        || defaultable.n_paths != default_free.n_paths
        || defaultable.steps != default_free.steps
    {
        return Err(Error::InvalidArgument("CVA legs need common random numbers (same seed, paths, steps)".into()));
    }
    let driver = DriverSpec::linear(rate);
    let risky = lsm_price(defaultable, payoff, schedule, &driver, options)?;
    let risk_free = lsm_price(default_free, payoff, schedule, &driver, options)?;
    let diff: Vec<f64> = risk_free
        .path_values
        .iter()
        .zip(&risky.path_values)
        .map(|(u, d)| u - d)
        .collect();
    let (cva, se) = mean_and_se(&diff);
    Ok(CvaEstimate {
        cva,
        std_error: se,
        ci: (cva - Z95 * se, cva + Z95 * se),
        risky,
        risk_free,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfEstimate {
    pub value: Complex<f64>,
    pub std_error: f64,
}

/// Sample mean of `e^{i xi X_T}` (times the survival weight when the batch
/// carries default data) with standard errors.
pub fn estimate_charfunc(batch: &PathBatch, xi: &[f64]) -> Vec<CfEstimate> {
    let k = batch.steps;
    let weights: Vec<f64> = (0..batch.n_paths).map(|i| batch.survival_factor(i, 0, k)).collect();
    let xt = batch.column(k);
    let n = batch.n_paths as f64;
    xi.iter()
        .map(|&w| {
            let (mut sr, mut si, mut sr2, mut si2) = (0.0, 0.0, 0.0, 0.0);
            for (x, q) in xt.iter().zip(&weights) {
                let (s, c) = (w * x).sin_cos();
                let (re, im) = (q * c, q * s);
                sr += re;
                si += im;
                sr2 += re * re;
                si2 += im * im;
            }
            let (mr, mi) = (sr / n, si / n);
            let var = (sr2 / n - mr * mr).max(0.0) + (si2 / n - mi * mi).max(0.0);
            CfEstimate {
                value: Complex::new(mr, mi),
                std_error: (var / n).sqrt(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CoefficientFamily, JumpLaw};
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

    fn bs_put(s: f64, k: f64, r: f64, sigma: f64, t: f64) -> f64 {
        let n = Normal::new(0.0, 1.0).unwrap();
        let d1 = ((s / k).ln() + (r + 0.5 * sigma * sigma) * t) / (sigma * t.sqrt());
        let d2 = d1 - sigma * t.sqrt();
        k * (-r * t).exp() * n.cdf(-d2) - s * n.cdf(-d1)
    }

    #[test]
    fn gbm_terminal_moments() {
        let (sigma, r, t) = (0.3, 0.05, 1.0);
        let b = simulate(&gbm(sigma, r), t, 50, 40_000, 7).unwrap();
        let xt = b.column(50);
        let (m, se) = mean_and_se(&xt);
        let mean = (r - 0.5 * sigma * sigma) * t;
        assert!((m - mean).abs() < 3.0 * se, "{m} vs {mean} (se {se})");
        let var = xt.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xt.len() - 1) as f64;
        // se of the sample variance for normal data: var sqrt(2/n)
        let se_var = sigma * sigma * t * (2.0 / xt.len() as f64).sqrt();
        assert!((var - sigma * sigma * t).abs() < 3.0 * se_var);
    }

    #[test]
    fn discounted_defaultable_asset_is_a_martingale() {
        let model = ModelSpec::cev_like(0.15, -2.0, 0.2, -0.2, 0.2, 0.1, 0.05, 0.0).unwrap();
        let t = 1.0;
        let b = simulate(&model, t, 200, 40_000, 11).unwrap();
        let v: Vec<f64> = (0..b.n_paths)
            .map(|i| (-model.rate * t).exp() * b.at(i, 200).exp() * b.survival_factor(i, 0, 200))
            .collect();
        let (m, se) = mean_and_se(&v);
        // Euler bias is far below the statistical error at this step count
        assert!((m - 1.0).abs() < 3.0 * se + 2e-3, "{m} (se {se})");
    }

    #[test]
    fn seeded_batches_are_reproducible() {
        let model = ModelSpec::cev_like(0.15, -2.0, 0.2, -0.2, 0.2, 0.1, 0.05, 0.0).unwrap();
        let a = simulate(&model, 0.5, 10, 3000, 42).unwrap();
        let b = simulate(&model, 0.5, 10, 3000, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate(&model, 0.5, 10, 3000, 43).unwrap();
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn survival_matches_indicator_frequency() {
        let model = ModelSpec::cev_like(0.15, -2.0, 0.2, -0.2, 0.2, 0.3, 0.05, 0.0).unwrap();
        let b = simulate(&model, 1.0, 100, 40_000, 5).unwrap();
        let alive: Vec<f64> = (0..b.n_paths).map(|i| if b.alive(i, 100) { 1.0 } else { 0.0 }).collect();
        let weights: Vec<f64> = (0..b.n_paths).map(|i| b.survival_factor(i, 0, 100)).collect();
        let (pa, se) = mean_and_se(&alive);
        let (pw, _) = mean_and_se(&weights);
        assert!((pa - pw).abs() < 3.0 * se, "{pa} vs {pw}");
        assert!(pw < 1.0 && pw > 0.5);
    }

    #[test]
    fn european_put_matches_black_scholes() {
        let (sigma, r, t, k) = (0.25, 0.05, 1.0, 1.0);
        let b = simulate(&gbm(sigma, r), t, 50, 50_000, 3).unwrap();
        let schedule = ExerciseSchedule::uniform(t, 1, 50).unwrap();
        let res = lsm_price(&b, &PayoffSpec::Put { strike: k }, &schedule, &DriverSpec::linear(r), &LsmOptions::default()).unwrap();
        let exact = bs_put(1.0, k, r, sigma, t);
        assert!(res.ci.0 - 1e-3 <= exact && exact <= res.ci.1 + 1e-3, "{:?} vs {exact}", res.ci);
    }

    #[test]
    fn adjusted_value_is_below_unadjusted() {
        let model = ModelSpec::cev_like(0.15, -2.0, 0.2, -0.2, 0.2, 0.0, 0.1, 0.4).unwrap();
        let b = simulate(&model, 0.5, 100, 20_000, 9).unwrap();
        let schedule = ExerciseSchedule::uniform(0.5, 10, 10).unwrap();
        let payoff = PayoffSpec::PortfolioLinear;
        let opts = LsmOptions::default();
        let plain = lsm_price(&b, &payoff, &schedule, &DriverSpec::zero(), &opts).unwrap();
        let adjusted = lsm_price(&b, &payoff, &schedule, &DriverSpec::simplified(0.1), &opts).unwrap();
        assert!(adjusted.estimate <= plain.estimate);
    }

    #[test]
    fn zero_intensity_gives_zero_cva() {
        let model = ModelSpec::cev_like(0.15, -2.0, 0.2, -0.2, 0.2, 0.0, 0.05, 0.0).unwrap();
        let b = simulate(&model, 0.5, 20, 5000, 1).unwrap();
        let schedule = ExerciseSchedule::uniform(0.5, 10, 2).unwrap();
        let c = lsm_cva(&b, &b.clone(), &PayoffSpec::Put { strike: 1.0 }, &schedule, 0.05, &LsmOptions::default()).unwrap();
        assert_eq!(c.cva, 0.0);
        assert_eq!(c.std_error, 0.0);
    }

    #[test]
    fn common_random_numbers_reduce_variance() {
        let risky = ModelSpec::cev_like(0.15, -2.0, 0.2, -0.2, 0.2, 0.1, 0.05, 0.0).unwrap();
        let free = risky.default_free();
        let schedule = ExerciseSchedule::uniform(1.0, 10, 5).unwrap();
        let payoff = PayoffSpec::Put { strike: 1.0 };
        let opts = LsmOptions::default();
        let d = simulate(&risky, 1.0, 50, 10_000, 21).unwrap();
        let f = simulate(&free, 1.0, 50, 10_000, 21).unwrap();
        let paired = lsm_cva(&d, &f, &payoff, &schedule, 0.05, &opts).unwrap();
        let f_indep = simulate(&free, 1.0, 50, 10_000, 22).unwrap();
        let rd = lsm_price(&d, &payoff, &schedule, &DriverSpec::linear(0.05), &opts).unwrap();
        let rf = lsm_price(&f_indep, &payoff, &schedule, &DriverSpec::linear(0.05), &opts).unwrap();
        let independent_se = (rd.std_error.powi(2) + rf.std_error.powi(2)).sqrt();
        assert!(paired.std_error < independent_se);
        assert!(paired.cva > 0.0);
    }

    #[test]
    fn ci_width_scales_with_sample_size() {
        let model = gbm(0.25, 0.05);
        let schedule = ExerciseSchedule::uniform(1.0, 4, 5).unwrap();
        let opts = LsmOptions::default();
        let payoff = PayoffSpec::Put { strike: 1.0 };
        let width = |n: usize| {
            let b = simulate(&model, 1.0, 20, n, 8).unwrap();
            let r = lsm_price(&b, &payoff, &schedule, &DriverSpec::linear(0.05), &opts).unwrap();
            r.ci.1 - r.ci.0
        };
        let ratio = width(10_000) / width(40_000);
        assert!((ratio - 2.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn charfunc_estimates() {
        let (sigma, r, t) = (0.2, 0.03, 0.5);
        let b = simulate(&gbm(sigma, r), t, 1, 40_000, 2).unwrap();
        let xi = [0.0, 0.5, 1.0, 3.0];
        let est = estimate_charfunc(&b, &xi);
        assert_eq!(est[0].value, Complex::new(1.0, 0.0));
        for (w, e) in xi.iter().zip(&est).skip(1) {
            let mu = (r - 0.5 * sigma * sigma) * t;
            let exact = Complex::new(-0.5 * sigma * sigma * t * w * w, w * mu).exp();
            assert!((e.value - exact).norm() < 3.0 * e.std_error + 1e-12, "xi {w}");
        }
    }

    #[test]
    fn euler_weak_error_halves() {
        // bounded smooth functional of X_T under sigma(x) = b e^{beta x}; the ratio creeps up to 2 as steps grow
        let model = ModelSpec::cev_like(0.5, 0.5, 0.0, 0.0, 0.1, 0.0, 0.05, 0.0).unwrap();
        let f = |steps: usize| {
            let b = simulate(&model, 1.0, steps, 200_000, 4).unwrap();
            let v: Vec<f64> = b.column(steps).iter().map(|x| 1.0 / (1.0 + x * x)).collect();
            mean_and_se(&v).0
        };
        let (f1, f2, f4, fine) = (f(1), f(2), f(4), f(128));
        let ratio = (f1 - fine) / (f2 - fine);
        let ratio2 = (f2 - fine) / (f4 - fine);
        assert!(ratio > 1.2 && ratio < 2.5, "{ratio} {f1} {f2} {fine}");
        assert!((ratio2 - 2.0).abs() < 0.4, "{ratio2} {f2} {f4} {fine}");
    }

    #[test]
    fn dump_round_trip() {
        let model = gbm(0.2, 0.0);
        let b = simulate(&model, 1.0, 3, 5, 99).unwrap();
        let mut buf = Vec::new();
        b.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 24 + 8 * 4 * 5);
        assert_eq!(u64::from_le_bytes(buf[0..8].try_into().unwrap()), 99);
        let back = PathBatch::read_from(&buf[..], b.dt).unwrap();
        assert_eq!(back.x, b.x);
        assert_eq!((back.steps, back.n_paths), (3, 5));
    }

    #[test]
    fn poisson_inverse_cdf() {
        assert_eq!(poisson_inverse(0.1, 0.0), 0);
        assert_eq!(poisson_inverse(0.1, 0.95), 1);
        assert_eq!(poisson_inverse(2.0, 0.5), 2);
    }
}
