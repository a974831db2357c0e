//! Run configuration. A TOML file with one section per block; every block
//! the chosen job reads is checked before any computation starts, and
//! errors carry the line of the offending key (or of its section).

use std::fmt;
use std::path::PathBuf;

use clap::ValueEnum;
use levy_xva::bermudan::{CosParams, PayoffSpec};
use levy_xva::bsde::{Closeout, DriverSpec};
use levy_xva::cva::{Basepoints, CvaParams, DefaultSpec, Products};
use levy_xva::mc::{DefaultMode, LsmOptions};
use levy_xva::model::ModelSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Job {
    PriceXva,
    PriceCva,
    Greeks,
    Boundary,
    Validate,
    Convergence,
    Bench,
}

impl Job {
    pub fn name(self) -> &'static str {
        match self {
            Job::PriceXva => "price-xva",
            Job::PriceCva => "price-cva",
            Job::Greeks => "greeks",
            Job::Boundary => "boundary",
            Job::Validate => "validate",
            Job::Convergence => "convergence",
            Job::Bench => "bench",
        }
    }
}

impl fmt::Display for Job {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

// ---------------------------------------------------------------------------
// File schema

fn ten() -> f64 {
    10.0
}
fn half() -> f64 {
    0.5
}
fn picard() -> usize {
    levy_xva::bsde::BsdeGrid::DEFAULT_PICARD
}
fn two() -> usize {
    2
}
fn three() -> usize {
    3
}
fn hundred() -> usize {
    100
}
fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub job: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<DefaultBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cos: Option<CosBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cva: Option<CvaBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub driver: Option<DriverBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payoff: Option<PayoffBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<TableBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validate: Option<ValidateBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchBlock>,
}

/// `sigma = b e^{beta x}`, jump intensity `lambda e^{beta x}`, Gaussian
/// jumps, default intensity `default_scale e^{beta x}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub b: f64,
    pub beta: f64,
    pub lambda: f64,
    pub jump_mean: f64,
    pub jump_std: f64,
    pub rate: f64,
    #[serde(default)]
    pub spot: f64,
    #[serde(default)]
    pub default_scale: f64,
}

/// Counterparty default intensity `c e^{beta x}` of the CVA jobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefaultBlock {
    pub c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosBlock {
    #[serde(rename = "J")]
    pub j: usize,
    #[serde(rename = "L", default = "ten")]
    pub l: f64,
    #[serde(default = "half")]
    pub theta1: f64,
    #[serde(default = "half")]
    pub theta2: f64,
    #[serde(default = "picard")]
    pub picard: usize,
    #[serde(default = "two")]
    pub order: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProductsName {
    Fft,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasepointsName {
    Auto,
    Single,
    Panels,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvaBlock {
    #[serde(rename = "J", default = "hundred")]
    pub j: usize,
    #[serde(rename = "L", default = "ten")]
    pub l: f64,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(default = "two")]
    pub order: usize,
    #[serde(default = "fft")]
    pub products: ProductsName,
    #[serde(default = "auto")]
    pub basepoints: BasepointsName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub panels: Option<usize>,
}

fn fft() -> ProductsName {
    ProductsName::Fft
}
fn auto() -> BasepointsName {
    BasepointsName::Auto
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriverModeName {
    Zero,
    Simplified,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CloseoutName {
    Risky,
    RiskFree,
}

/// Every rate of the full driver defaults to `r`, which defaults to the
/// model rate; recoveries default to 1 and margins and proportions to 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverBlock {
    pub mode: DriverModeName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_i: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_tc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_fc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovery_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovery_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_tc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_fc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closeout: Option<CloseoutName>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PayoffKind {
    PortfolioLinear,
    PortfolioExp,
    Put,
    Call,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffBlock {
    pub kind: PayoffKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strike: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableBlock {
    pub maturities: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spots: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strikes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_scales: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DefaultModeName {
    Survival,
    Indicator,
}

fn survival() -> DefaultModeName {
    DefaultModeName::Survival
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McBlock {
    pub paths: usize,
    pub steps: usize,
    #[serde(default = "three")]
    pub degree: usize,
    #[serde(default = "survival")]
    pub default_mode: DefaultModeName,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceBlock {
    #[serde(rename = "J")]
    pub j: Vec<usize>,
    #[serde(rename = "N")]
    pub n: Vec<usize>,
    pub spot: f64,
    pub maturity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetName {
    Xva,
    Cva,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateBlock {
    pub target: TargetName,
    #[serde(default)]
    pub widen_abs: f64,
    #[serde(default)]
    pub widen_rel: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchBlock {
    #[serde(rename = "J")]
    pub j: Vec<usize>,
    #[serde(rename = "N")]
    pub n: Vec<usize>,
    #[serde(rename = "M")]
    pub m: Vec<usize>,
    #[serde(default = "one")]
    pub maturity: f64,
    #[serde(default = "three")]
    pub repeats: usize,
}

// ---------------------------------------------------------------------------
// Resolved jobs

#[derive(Debug, Clone)]
pub struct McSetup {
    pub paths: usize,
    pub steps: usize,
    pub options: LsmOptions,
}

#[derive(Debug, Clone)]
pub struct XvaSetup {
    pub model: ModelSpec<f64>,
    pub params: CosParams,
    pub n: usize,
    pub m: usize,
    pub driver: DriverSpec,
    pub payoff: PayoffSpec,
}

#[derive(Debug, Clone)]
pub struct CvaSetup {
    pub model: ModelSpec<f64>,
    pub default: DefaultSpec,
    pub params: CvaParams,
    pub m: usize,
}

#[derive(Debug, Clone)]
pub struct XvaRows {
    pub setup: XvaSetup,
    pub maturities: Vec<f64>,
    pub spots: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CvaRows {
    pub setup: CvaSetup,
    pub maturities: Vec<f64>,
    pub strikes: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BoundaryRows {
    pub setup: CvaSetup,
    /// Exponent of the default intensity; the scales come from the table.
    pub beta: f64,
    pub maturities: Vec<f64>,
    pub strikes: Vec<f64>,
    pub scales: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum Target {
    Xva(XvaRows),
    Cva(CvaRows),
}

#[derive(Debug, Clone)]
pub struct ConvergenceRun {
    pub setup: XvaSetup,
    pub js: Vec<usize>,
    pub ns: Vec<usize>,
    pub spot: f64,
    pub maturity: f64,
    pub mc: McSetup,
}

#[derive(Debug, Clone)]
pub struct BenchRun {
    pub xva: XvaSetup,
    pub js: Vec<usize>,
    pub ns: Vec<usize>,
    pub ms: Vec<usize>,
    pub maturity: f64,
    pub repeats: usize,
    pub cva: Option<CvaSetup>,
}

#[derive(Debug, Clone)]
pub enum Task {
    PriceXva(XvaRows, Option<McSetup>),
    PriceCva(CvaRows, Option<McSetup>),
    Greeks(CvaRows),
    Boundary(BoundaryRows),
    Validate { target: Target, mc: McSetup, widen_abs: f64, widen_rel: f64 },
    Convergence(ConvergenceRun),
    Bench(BenchRun),
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub job: Option<Job>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Resolved {
    pub job: Job,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// The configuration with every default filled in, as TOML. The output
    /// path is left out so that the bytes do not depend on it.
    pub echo: String,
    /// Hex SHA-256 of `echo`.
    pub hash: String,
    pub task: Task,
}

// ---------------------------------------------------------------------------
// Line lookup

struct Source<'a> {
    text: &'a str,
}

impl Source<'_> {
    fn line_at(&self, offset: usize) -> usize {
        let end = offset.min(self.text.len());
        self.text.as_bytes()[..end].iter().filter(|&&c| c == b'\n').count() + 1
    }

    /// Line of `key` inside `[section]`; `section = ""` is the top level.
    fn key_line(&self, section: &str, key: &str) -> Option<usize> {
        let mut current = "";
        for (i, raw) in self.text.lines().enumerate() {
            let line = raw.trim();
            if let Some(rest) = line.strip_prefix('[') {
                current = rest.split(']').next().unwrap_or("").trim();
                continue;
            }
            if current == section {
                if let Some((k, _)) = line.split_once('=') {
                    if k.trim().trim_matches('"') == key {
                        return Some(i + 1);
                    }
                }
            }
        }
        None
    }

    fn section_line(&self, section: &str) -> Option<usize> {
        self.text.lines().position(|l| l.trim().strip_prefix('[').and_then(|r| r.split(']').next()).map(str::trim) == Some(section)).map(|i| i + 1)
    }

    fn at_key(&self, section: &str, key: &str, message: impl fmt::Display) -> ConfigError {
        let line = self.key_line(section, key).or_else(|| self.section_line(section));
        let place = if section.is_empty() { key.to_string() } else { format!("[{section}] {key}") };
        ConfigError { line, message: format!("{place}: {message}") }
    }

    fn at_section(&self, section: &str, message: impl fmt::Display) -> ConfigError {
        ConfigError {
            line: self.section_line(section),
            message: format!("[{section}]: {message}"),
        }
    }
}

fn missing(job: Job, section: &str) -> ConfigError {
    ConfigError {
        line: None,
        message: format!("job {job} needs a [{section}] section"),
    }
}

// ---------------------------------------------------------------------------
// Checks

struct Checker<'a> {
    src: Source<'a>,
    job: Job,
}

impl Checker<'_> {
    fn finite(&self, section: &str, key: &str, v: f64) -> Result<f64, ConfigError> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.src.at_key(section, key, format!("must be finite, got {v}")))
        }
    }

    fn positive(&self, section: &str, key: &str, v: f64) -> Result<f64, ConfigError> {
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(self.src.at_key(section, key, format!("must be positive, got {v}")))
        }
    }

    fn non_negative(&self, section: &str, key: &str, v: f64) -> Result<f64, ConfigError> {
        if v >= 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(self.src.at_key(section, key, format!("must be >= 0, got {v}")))
        }
    }

    fn at_least(&self, section: &str, key: &str, v: usize, min: usize) -> Result<usize, ConfigError> {
        if v >= min {
            Ok(v)
        } else {
            Err(self.src.at_key(section, key, format!("must be >= {min}, got {v}")))
        }
    }

    fn list(&self, section: &str, key: &str, values: Option<&Vec<f64>>, check: fn(&Self, &str, &str, f64) -> Result<f64, ConfigError>) -> Result<Vec<f64>, ConfigError> {
        let values = values.ok_or_else(|| self.src.at_section(section, format!("job {} needs `{key}`", self.job)))?;
        values.iter().map(|&v| check(self, section, key, v)).collect()
    }

    fn model(&self, cfg: &RunConfig) -> Result<ModelSpec<f64>, ConfigError> {
        let m = cfg.model.as_ref().ok_or_else(|| missing(self.job, "model"))?;
        let s = "model";
        self.positive(s, "b", m.b)?;
        self.finite(s, "beta", m.beta)?;
        self.non_negative(s, "lambda", m.lambda)?;
        self.finite(s, "jump_mean", m.jump_mean)?;
        self.non_negative(s, "jump_std", m.jump_std)?;
        self.finite(s, "rate", m.rate)?;
        self.finite(s, "spot", m.spot)?;
        self.non_negative(s, "default_scale", m.default_scale)?;
        ModelSpec::cev_like(m.b, m.beta, m.lambda, m.jump_mean, m.jump_std, m.default_scale, m.rate, m.spot).map_err(|e| self.src.at_section(s, e))
    }

    fn cos(&self, cfg: &RunConfig) -> Result<(CosParams, usize, usize), ConfigError> {
        let c = cfg.cos.as_ref().ok_or_else(|| missing(self.job, "cos"))?;
        let s = "cos";
        self.at_least(s, "J", c.j, 2)?;
        self.positive(s, "L", c.l)?;
        for (key, v) in [("theta1", c.theta1), ("theta2", c.theta2)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(self.src.at_key(s, key, format!("must lie in [0, 1], got {v}")));
            }
        }
        self.at_least(s, "picard", c.picard, 1)?;
        if c.order > 2 {
            return Err(self.src.at_key(s, "order", format!("must be 0, 1 or 2, got {}", c.order)));
        }
        self.at_least(s, "N", c.n, 1)?;
        self.at_least(s, "M", c.m, 1)?;
        let params = CosParams {
            n: c.j,
            l: c.l,
            theta1: c.theta1,
            theta2: c.theta2,
            picard: c.picard,
            order: c.order,
        };
        params.validate().map_err(|e| self.src.at_section(s, e))?;
        Ok((params, c.n, c.m))
    }

    fn driver(&self, cfg: &mut RunConfig, model_rate: f64) -> Result<DriverSpec, ConfigError> {
        let job = self.job;
        let d = cfg.driver.as_mut().ok_or_else(|| missing(job, "driver"))?;
        let s = "driver";
        let spec = match d.mode {
            DriverModeName::Zero => DriverSpec::zero(),
            DriverModeName::Simplified => {
                let rate = self.finite(s, "rate", d.rate.unwrap_or(model_rate))?;
                d.rate = Some(rate);
                DriverSpec::simplified(rate)
            }
            DriverModeName::Full => {
                let r = self.finite(s, "r", d.r.or(d.rate).unwrap_or(model_rate))?;
                d.r = Some(r);
                let mut spec = DriverSpec::linear(r);
                let set = |key: &str, slot: &mut Option<f64>, target: &mut f64| -> Result<(), ConfigError> {
                    let v = self.finite(s, key, slot.unwrap_or(*target))?;
                    *slot = Some(v);
                    *target = v;
                    Ok(())
                };
                set("r_b", &mut d.r_b, &mut spec.rates.r_b)?;
                set("r_c", &mut d.r_c, &mut spec.rates.r_c)?;
                set("r_f", &mut d.r_f, &mut spec.rates.r_f)?;
                set("r_d", &mut d.r_d, &mut spec.rates.r_d)?;
                set("r_i", &mut d.r_i, &mut spec.rates.r_i)?;
                set("r_k", &mut d.r_k, &mut spec.rates.r_k)?;
                set("r_tc", &mut d.r_tc, &mut spec.rates.r_tc)?;
                set("r_fc", &mut d.r_fc, &mut spec.rates.r_fc)?;
                set("recovery_b", &mut d.recovery_b, &mut spec.recovery_b)?;
                set("recovery_c", &mut d.recovery_c, &mut spec.recovery_c)?;
                set("i_tc", &mut d.i_tc, &mut spec.i_tc)?;
                set("i_fc", &mut d.i_fc, &mut spec.i_fc)?;
                set("c1", &mut d.c1, &mut spec.c1)?;
                set("c2", &mut d.c2, &mut spec.c2)?;
                let closeout = d.closeout.unwrap_or(CloseoutName::Risky);
                d.closeout = Some(closeout);
                spec.closeout = match closeout {
                    CloseoutName::Risky => Closeout::Risky,
                    CloseoutName::RiskFree => Closeout::RiskFree,
                };
                spec
            }
        };
        spec.validate().map_err(|e| self.src.at_section(s, e))?;
        Ok(spec)
    }

    fn payoff(&self, cfg: &RunConfig) -> Result<PayoffSpec, ConfigError> {
        let p = cfg.payoff.as_ref().ok_or_else(|| missing(self.job, "payoff"))?;
        let s = "payoff";
        let strike = || -> Result<f64, ConfigError> {
            let k = p.strike.ok_or_else(|| self.src.at_key(s, "kind", "put and call payoffs need a strike"))?;
            self.positive(s, "strike", k)
        };
        let spec = match p.kind {
            PayoffKind::PortfolioLinear => PayoffSpec::PortfolioLinear,
            PayoffKind::PortfolioExp => PayoffSpec::PortfolioExp,
            PayoffKind::Put => PayoffSpec::Put { strike: strike()? },
            PayoffKind::Call => PayoffSpec::Call { strike: strike()? },
        };
        spec.validate().map_err(|e| self.src.at_section(s, e))?;
        Ok(spec)
    }

    fn xva(&self, cfg: &mut RunConfig) -> Result<XvaSetup, ConfigError> {
        let model = self.model(cfg)?;
        let (params, n, m) = self.cos(cfg)?;
        let driver = self.driver(cfg, model.rate)?;
        let payoff = self.payoff(cfg)?;
        Ok(XvaSetup { model, params, n, m, driver, payoff })
    }

    fn cva_params(&self, cfg: &RunConfig) -> Result<(CvaParams, usize), ConfigError> {
        let c = cfg.cva.as_ref().ok_or_else(|| missing(self.job, "cva"))?;
        let s = "cva";
        self.at_least(s, "J", c.j, 2)?;
        self.positive(s, "L", c.l)?;
        self.at_least(s, "M", c.m, 1)?;
        if c.order > 2 {
            return Err(self.src.at_key(s, "order", format!("must be 0, 1 or 2, got {}", c.order)));
        }
        let basepoints = match (c.basepoints, c.panels) {
            (BasepointsName::Auto, None) => Basepoints::Auto,
            (BasepointsName::Single, None) => Basepoints::Single,
            (BasepointsName::Panels, Some(p)) => {
                if p == 0 || p > c.j {
                    return Err(self.src.at_key(s, "panels", format!("must lie in 1..=J ({}), got {p}", c.j)));
                }
                Basepoints::Panels(p)
            }
            (BasepointsName::Panels, None) => return Err(self.src.at_key(s, "basepoints", "\"panels\" needs a `panels` count")),
            (_, Some(_)) => return Err(self.src.at_key(s, "panels", "only allowed with basepoints = \"panels\"")),
        };
        let params = CvaParams {
            n: c.j,
            l: c.l,
            order: c.order,
            products: match c.products {
                ProductsName::Fft => Products::Fft,
                ProductsName::Dense => Products::Dense,
            },
            basepoints,
        };
        params.validate().map_err(|e| self.src.at_section(s, e))?;
        Ok((params, c.m))
    }

    fn default_spec(&self, cfg: &mut RunConfig, model_beta: f64) -> Result<DefaultSpec, ConfigError> {
        let job = self.job;
        let d = cfg.default.as_mut().ok_or_else(|| missing(job, "default"))?;
        let c = self.non_negative("default", "c", d.c)?;
        let beta = self.finite("default", "beta", d.beta.unwrap_or(model_beta))?;
        d.beta = Some(beta);
        Ok(if c == 0.0 { DefaultSpec::none() } else { DefaultSpec::exponential(c, beta) })
    }

    fn cva(&self, cfg: &mut RunConfig) -> Result<CvaSetup, ConfigError> {
        let model = self.model(cfg)?;
        let default = self.default_spec(cfg, model_beta(cfg))?;
        let (params, m) = self.cva_params(cfg)?;
        Ok(CvaSetup { model, default, params, m })
    }

    fn table<'c>(&self, cfg: &'c RunConfig) -> Result<&'c TableBlock, ConfigError> {
        cfg.table.as_ref().ok_or_else(|| missing(self.job, "table"))
    }

    fn maturities(&self, cfg: &RunConfig) -> Result<Vec<f64>, ConfigError> {
        self.list("table", "maturities", Some(&self.table(cfg)?.maturities), Self::positive)
    }

    fn xva_rows(&self, cfg: &mut RunConfig) -> Result<XvaRows, ConfigError> {
        let setup = self.xva(cfg)?;
        let maturities = self.maturities(cfg)?;
        let spots = self.list("table", "spots", self.table(cfg)?.spots.as_ref(), Self::finite)?;
        Ok(XvaRows { setup, maturities, spots })
    }

    fn cva_rows(&self, cfg: &mut RunConfig) -> Result<CvaRows, ConfigError> {
        let setup = self.cva(cfg)?;
        let maturities = self.maturities(cfg)?;
        let strikes = self.list("table", "strikes", self.table(cfg)?.strikes.as_ref(), Self::positive)?;
        Ok(CvaRows { setup, maturities, strikes })
    }

    fn mc(&self, cfg: &RunConfig) -> Result<McSetup, ConfigError> {
        let m = cfg.mc.as_ref().ok_or_else(|| missing(self.job, "mc"))?;
        self.at_least("mc", "paths", m.paths, 2)?;
        self.at_least("mc", "steps", m.steps, 1)?;
        self.at_least("mc", "degree", m.degree, 1)?;
        Ok(McSetup {
            paths: m.paths,
            steps: m.steps,
            options: LsmOptions {
                degree: m.degree,
                default_mode: match m.default_mode {
                    DefaultModeName::Survival => DefaultMode::Survival,
                    DefaultModeName::Indicator => DefaultMode::Indicator,
                },
            },
        })
    }

    fn sizes(&self, section: &str, key: &str, values: &[usize], min: usize) -> Result<Vec<usize>, ConfigError> {
        values.iter().map(|&v| self.at_least(section, key, v, min)).collect()
    }

    fn task(&self, cfg: &mut RunConfig) -> Result<Task, ConfigError> {
        Ok(match self.job {
            Job::PriceXva => {
                let rows = self.xva_rows(cfg)?;
                let mc = if cfg.mc.is_some() { Some(self.mc(cfg)?) } else { None };
                Task::PriceXva(rows, mc)
            }
            Job::PriceCva => {
                let rows = self.cva_rows(cfg)?;
                let mc = if cfg.mc.is_some() { Some(self.mc(cfg)?) } else { None };
                Task::PriceCva(rows, mc)
            }
            Job::Greeks => Task::Greeks(self.cva_rows(cfg)?),
            Job::Boundary => {
                let model = self.model(cfg)?;
                let fallback = model_beta(cfg);
                let beta = match cfg.default.as_mut() {
                    Some(d) => {
                        let beta = self.finite("default", "beta", d.beta.unwrap_or(fallback))?;
                        d.beta = Some(beta);
                        beta
                    }
                    None => fallback,
                };
                let (params, m) = self.cva_params(cfg)?;
                let maturities = self.maturities(cfg)?;
                let strikes = self.list("table", "strikes", self.table(cfg)?.strikes.as_ref(), Self::positive)?;
                let scales = self.list("table", "default_scales", self.table(cfg)?.default_scales.as_ref(), Self::non_negative)?;
                Task::Boundary(BoundaryRows {
                    setup: CvaSetup { model, default: DefaultSpec::none(), params, m },
                    beta,
                    maturities,
                    strikes,
                    scales,
                })
            }
            Job::Validate => {
                let job = self.job;
                let v = cfg.validate.clone().ok_or_else(|| missing(job, "validate"))?;
                self.non_negative("validate", "widen_abs", v.widen_abs)?;
                self.non_negative("validate", "widen_rel", v.widen_rel)?;
                let target = match v.target {
                    TargetName::Xva => Target::Xva(self.xva_rows(cfg)?),
                    TargetName::Cva => Target::Cva(self.cva_rows(cfg)?),
                };
                Task::Validate {
                    target,
                    mc: self.mc(cfg)?,
                    widen_abs: v.widen_abs,
                    widen_rel: v.widen_rel,
                }
            }
            Job::Convergence => {
                let setup = self.xva(cfg)?;
                let job = self.job;
                let c = cfg.convergence.clone().ok_or_else(|| missing(job, "convergence"))?;
                let s = "convergence";
                Task::Convergence(ConvergenceRun {
                    setup,
                    js: self.sizes(s, "J", &c.j, 2)?,
                    ns: self.sizes(s, "N", &c.n, 1)?,
                    spot: self.finite(s, "spot", c.spot)?,
                    maturity: self.positive(s, "maturity", c.maturity)?,
                    mc: self.mc(cfg)?,
                })
            }
            Job::Bench => {
                let xva = self.xva(cfg)?;
                let job = self.job;
                let b = cfg.bench.clone().ok_or_else(|| missing(job, "bench"))?;
                let s = "bench";
                let cva = if cfg.cva.is_some() { Some(self.cva(cfg)?) } else { None };
                Task::Bench(BenchRun {
                    xva,
                    js: self.sizes(s, "J", &b.j, 2)?,
                    ns: self.sizes(s, "N", &b.n, 1)?,
                    ms: self.sizes(s, "M", &b.m, 1)?,
                    maturity: self.positive(s, "maturity", b.maturity)?,
                    repeats: self.at_least(s, "repeats", b.repeats, 1)?,
                    cva,
                })
            }
        })
    }
}

/// Exponent of the CEV-like coefficients, the default for `[default] beta`.
fn model_beta(cfg: &RunConfig) -> f64 {
    cfg.model.as_ref().map_or(0.0, |m| m.beta)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses and checks `text`; nothing is computed here.
pub fn resolve(text: &str, overrides: &Overrides) -> Result<Resolved, ConfigError> {
    let src = Source { text };
    let mut cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError {
        line: e.span().map(|s| src.line_at(s.start)),
        message: e.message().trim().to_string(),
    })?;
    let job = match (overrides.job, cfg.job.as_deref()) {
        (Some(job), _) => job,
        (None, Some(name)) => Job::from_str(name, false).map_err(|_| {
            let names: Vec<_> = Job::value_variants().iter().map(|j| j.name()).collect();
            src.at_key("", "job", format!("unknown job \"{name}\" (expected one of {})", names.join(", ")))
        })?,
        (None, None) => {
            return Err(ConfigError {
                line: None,
                message: "no job given: set `job` in the file or pass --job".into(),
            })
        }
    };
    let seed = overrides.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    if seed > i64::MAX as u64 {
        return Err(src.at_key("", "seed", format!("must be <= {}, got {seed}", i64::MAX)));
    }
    let out = overrides.out.clone().or_else(|| cfg.out.as_ref().map(PathBuf::from));
    let task = Checker { src, job }.task(&mut cfg)?;
    cfg.job = Some(job.name().to_string());
    cfg.seed = Some(seed);
    cfg.out = None;
    let echo = toml::to_string(&cfg).map_err(|e| ConfigError {
        line: None,
        message: format!("cannot echo the configuration: {e}"),
    })?;
    let hash = sha256_hex(echo.as_bytes());
    Ok(Resolved { job, seed, out, echo, hash, task })
}
