//! One function per job. Each returns the finished table; numerical errors
//! from the engine pass through unchanged.

use std::time::Instant;

use levy_xva::bermudan::{operation_count, price_bermudan_xva, CosParams, ExerciseSchedule, PayoffSpec, PricingResult};
use levy_xva::cva::{cva, greeks, CvaResult, DefaultSpec, Frame};
use levy_xva::mc::{lsm_cva, lsm_price, simulate_with_floor, LsmResult};
use levy_xva::Result;

use crate::config::{BenchRun, BoundaryRows, ConvergenceRun, CvaRows, CvaSetup, McSetup, Target, Task, XvaRows, XvaSetup};
use crate::table::{Cell, Table};

pub struct JobOutput {
    pub table: Table,
    /// Rows whose COS value falls outside the widened MC interval.
    pub rejected: usize,
}

impl From<Table> for JobOutput {
    fn from(table: Table) -> Self {
        Self { table, rejected: 0 }
    }
}

pub fn run(task: &Task, seed: u64) -> Result<JobOutput> {
    Ok(match task {
        Task::PriceXva(rows, mc) => price_xva(rows, mc.as_ref(), seed, None)?,
        Task::PriceCva(rows, mc) => price_cva(rows, mc.as_ref(), seed, None)?,
        Task::Greeks(rows) => sensitivities(rows)?.into(),
        Task::Boundary(rows) => boundary(rows)?.into(),
        Task::Validate { target, mc, widen_abs, widen_rel } => {
            let widen = Widening { abs: *widen_abs, rel: *widen_rel };
            match target {
                Target::Xva(rows) => price_xva(rows, Some(mc), seed, Some(widen))?,
                Target::Cva(rows) => price_cva(rows, Some(mc), seed, Some(widen))?,
            }
        }
        Task::Convergence(run) => convergence(run, seed)?.into(),
        Task::Bench(run) => bench(run)?.into(),
    })
}

#[derive(Debug, Clone, Copy)]
struct Widening {
    abs: f64,
    rel: f64,
}

impl Widening {
    fn apply(&self, (lo, hi): (f64, f64)) -> (f64, f64) {
        (lo - self.abs - self.rel * lo.abs(), hi + self.abs + self.rel * hi.abs())
    }
}

fn columns(first: [&str; 2], widen: Option<Widening>) -> Table {
    let mut cols = vec![first[0], first[1], "MC_lo", "MC_hi", "COS"];
    if widen.is_some() {
        cols.extend(["lo_widened", "hi_widened", "verdict"]);
    }
    Table::new(cols)
}

/// Appends the verdict cells when validating; returns whether the row fails.
fn judge(row: &mut Vec<Cell>, value: f64, ci: Option<(f64, f64)>, widen: Option<Widening>) -> bool {
    let (Some(w), Some(ci)) = (widen, ci) else { return false };
    let (lo, hi) = w.apply(ci);
    let inside = value >= lo && value <= hi;
    row.extend([Cell::Num(lo), Cell::Num(hi), Cell::from(if inside { "PASS" } else { "FAIL" })]);
    !inside
}

fn warn(context: &str, warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {context}: {w}");
    }
}

fn xva_value(setup: &XvaSetup, maturity: f64, x0: f64, j: usize, n: usize) -> Result<PricingResult> {
    let schedule = ExerciseSchedule::uniform(maturity, setup.m, n)?;
    let params = CosParams { n: j, ..setup.params };
    let r = price_bermudan_xva(&setup.model.with_spot(x0), &setup.payoff, &schedule, &setup.driver, &params)?;
    warn(&format!("T = {maturity}, X0 = {x0}, J = {j}, N = {n}"), &r.warnings);
    Ok(r)
}

/// LSM value on paths floored at the lower end of the COS range.
fn xva_lsm(setup: &XvaSetup, mc: &McSetup, maturity: f64, x0: f64, floor: f64, seed: u64) -> Result<LsmResult> {
    let paths = simulate_with_floor(&setup.model.with_spot(x0), maturity, mc.steps, mc.paths, seed, floor)?;
    let schedule = ExerciseSchedule::uniform(maturity, setup.m, 1)?;
    let r = lsm_price(&paths, &setup.payoff, &schedule, &setup.driver, &mc.options)?;
    warn(&format!("LSM T = {maturity}, X0 = {x0}"), &r.warnings);
    Ok(r)
}

fn price_xva(rows: &XvaRows, mc: Option<&McSetup>, seed: u64, widen: Option<Widening>) -> Result<JobOutput> {
    let setup = &rows.setup;
    let mut table = columns(["T", "S0"], widen);
    let mut rejected = 0;
    for &t in &rows.maturities {
        for &x0 in &rows.spots {
            let r = xva_value(setup, t, x0, setup.params.n, setup.n)?;
            let ci = mc.map(|mc| xva_lsm(setup, mc, t, x0, r.grid.a, seed)).transpose()?.map(|l| l.ci);
            let mut row = vec![Cell::Num(t), Cell::Num(x0), ci.map(|c| c.0).into(), ci.map(|c| c.1).into(), Cell::Num(r.value)];
            rejected += judge(&mut row, r.value, ci, widen) as usize;
            table.push(row);
        }
    }
    Ok(JobOutput { table, rejected })
}

fn cva_value(setup: &CvaSetup, default: &DefaultSpec, strike: f64, schedule: &ExerciseSchedule) -> Result<CvaResult> {
    let r = cva(&setup.model, default, strike, schedule, &setup.params)?;
    warn(&format!("T = {}, K = {strike}", schedule.maturity()), &r.warnings());
    Ok(r)
}

fn price_cva(rows: &CvaRows, mc: Option<&McSetup>, seed: u64, widen: Option<Widening>) -> Result<JobOutput> {
    let setup = &rows.setup;
    let mut table = columns(["T", "K"], widen);
    let mut rejected = 0;
    for &t in &rows.maturities {
        let schedule = ExerciseSchedule::uniform(t, setup.m, 1)?;
        // one pair of path batches per maturity, shared by the strikes
        let batches = match mc {
            Some(mc) => {
                let floor = Frame::for_model(&setup.model, t, &setup.params)?.grid.a;
                let risky = simulate_with_floor(&setup.default.apply(&setup.model), t, mc.steps, mc.paths, seed, floor)?;
                let free = simulate_with_floor(&setup.model.default_free(), t, mc.steps, mc.paths, seed, floor)?;
                Some((risky, free, mc))
            }
            None => None,
        };
        for &k in &rows.strikes {
            let value = cva_value(setup, &setup.default, k, &schedule)?.cva;
            let ci = match &batches {
                Some((risky, free, mc)) => {
                    let e = lsm_cva(risky, free, &PayoffSpec::Put { strike: k }, &schedule, setup.model.rate, &mc.options)?;
                    Some(e.ci)
                }
                None => None,
            };
            let mut row = vec![Cell::Num(t), Cell::Num(k), ci.map(|c| c.0).into(), ci.map(|c| c.1).into(), Cell::Num(value)];
            rejected += judge(&mut row, value, ci, widen) as usize;
            table.push(row);
        }
    }
    Ok(JobOutput { table, rejected })
}

fn sensitivities(rows: &CvaRows) -> Result<Table> {
    let setup = &rows.setup;
    let x0 = setup.model.spot;
    let mut table = Table::new(["T", "K", "CVA", "delta_x", "gamma_x", "delta_S", "gamma_S"]);
    for &t in &rows.maturities {
        let schedule = ExerciseSchedule::uniform(t, setup.m, 1)?;
        for &k in &rows.strikes {
            let r = cva_value(setup, &setup.default, k, &schedule)?;
            let g = greeks(&r, x0);
            table.push(vec![
                t.into(),
                k.into(),
                r.cva.into(),
                g.delta.into(),
                g.gamma.into(),
                g.spot_delta(x0).into(),
                g.spot_gamma(x0).into(),
            ]);
        }
    }
    Ok(table)
}

fn boundary(rows: &BoundaryRows) -> Result<Table> {
    let setup = &rows.setup;
    let mut cols = vec!["T".to_string(), "K".to_string(), "t_m".to_string()];
    cols.extend(rows.scales.iter().map(|c| format!("x_star_c{c}")));
    let mut table = Table::new(cols);
    for &t in &rows.maturities {
        let schedule = ExerciseSchedule::uniform(t, setup.m, 1)?;
        for &k in &rows.strikes {
            let mut traces = Vec::with_capacity(rows.scales.len());
            for &c in &rows.scales {
                let default = if c == 0.0 { DefaultSpec::none() } else { DefaultSpec::exponential(c, rows.beta) };
                traces.push(cva_value(setup, &default, k, &schedule)?.risky.boundary);
            }
            let Some(first) = traces.first() else { continue };
            for (m, &date) in first.dates.iter().enumerate() {
                let mut row = vec![Cell::Num(t), Cell::Num(k), Cell::Num(date)];
                row.extend(traces.iter().map(|tr| Cell::Num(tr.points[m].x)));
                table.push(row);
            }
        }
    }
    Ok(table)
}

fn convergence(run: &ConvergenceRun, seed: u64) -> Result<Table> {
    let setup = &run.setup;
    let floor = setup.params.grid(&setup.model, run.spot, run.maturity)?.a;
    let mc = xva_lsm(setup, &run.mc, run.maturity, run.spot, floor, seed)?;
    let mut table = Table::new(["J", "N", "COS", "MC", "abs_error", "error_lo", "error_hi"]);
    for &j in &run.js {
        for &n in &run.ns {
            let v = xva_value(setup, run.maturity, run.spot, j, n)?.value;
            let (lo, hi) = (v - mc.ci.1, v - mc.ci.0);
            // range of |COS - u| over u in the MC interval
            let near = if lo <= 0.0 && hi >= 0.0 { 0.0 } else { lo.abs().min(hi.abs()) };
            let far = lo.abs().max(hi.abs());
            table.push(vec![j.into(), n.into(), v.into(), mc.estimate.into(), (v - mc.estimate).abs().into(), near.into(), far.into()]);
        }
    }
    Ok(table)
}

fn bench(run: &BenchRun) -> Result<Table> {
    let mut table = Table::new(["pricer", "J", "N", "M", "P", "ms", "ms_per_step", "ns_per_op"]);
    let xva = &run.xva;
    let x0 = xva.model.spot;
    for &j in &run.js {
        for &n in &run.ns {
            for &m in &run.ms {
                let setup = XvaSetup { m, ..xva.clone() };
                let mut best = f64::INFINITY;
                for _ in 0..run.repeats {
                    best = best.min(xva_value(&setup, run.maturity, x0, j, n)?.timings.total().as_secs_f64());
                }
                let p = xva.params.picard;
                table.push(vec![
                    "xva".into(),
                    j.into(),
                    n.into(),
                    m.into(),
                    p.into(),
                    (1e3 * best).into(),
                    (1e3 * best / (n * m) as f64).into(),
                    (1e9 * best / operation_count(j, n, m, p)).into(),
                ]);
            }
        }
    }
    if let Some(setup) = &run.cva {
        // at-the-money put
        let strike = setup.model.spot.exp();
        let schedule = ExerciseSchedule::uniform(run.maturity, setup.m, 1)?;
        let mut best = f64::INFINITY;
        for _ in 0..run.repeats {
            let start = Instant::now();
            cva_value(setup, &setup.default, strike, &schedule)?;
            best = best.min(start.elapsed().as_secs_f64());
        }
        table.push(vec![
            "cva".into(),
            setup.params.n.into(),
            Cell::Empty,
            setup.m.into(),
            Cell::Empty,
            (1e3 * best).into(),
            (1e3 * best / setup.m as f64).into(),
            Cell::Empty,
        ]);
    }
    Ok(table)
}
