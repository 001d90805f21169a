//! Parameter sweeps, oracle checks and CSV emission for the `spi` binary.
//!
//! Every command takes a flat `key=value` parameter map (config file merged
//! with command-line overrides) and returns a [`SweepResult`] or an
//! [`OracleReport`]. Sweep points run on the rayon pool; rows come back in
//! grid order.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use spi_core::amplitudes::{quarter_period, Wavepacket};
use spi_core::averaging::{
    gaussian_average, merkulov_sz, radial_average, sz_single, AverageMode, AverageSpec,
};
use spi_core::kraus::UP_G;
use spi_core::oracle::{
    convergence_study, evolve, simulate_emission, simulate_lr, simulate_scattering, ConvergenceReport,
    LatticeState,
};
use spi_core::protocols::{cz_fidelity_averaged, lr_fidelity_averaged, pns_fidelity_averaged};
use spi_core::{MagneticSample, OverhauserDistribution, PhysicalConfig, Spin, C64};

pub const EXIT_OK: i32 = 0;
pub const EXIT_THRESHOLD: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Environment variable holding the worker-pool size.
pub const WORKERS_ENV: &str = "SPI_WORKERS";

/// Seed of the frozen field used by oracle checks when none is given.
pub const DEFAULT_SEED: u64 = 42;

/// Largest acceptable final discrepancy in an oracle check.
pub const ORACLE_THRESHOLD: f64 = 5e-3;
/// Smallest acceptable fitted convergence order in an oracle check.
pub const ORACLE_MIN_ORDER: f64 = 0.9;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] spi_core::Error),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(spi_core::Error::InvalidParameter { .. }) => EXIT_USAGE,
            _ => EXIT_THRESHOLD,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

// ---------------------------------------------------------------------------
// Parameters

/// Flat parameter map. Later insertions override earlier ones.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Params(BTreeMap<String, String>);

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key = value` lines; blank lines and `#` comments are skipped.
    pub fn parse_config(text: &str) -> CliResult<Self> {
        let mut p = Params::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("config line {}: expected key=value", lineno + 1)))?;
            p.set(k.trim(), v.trim());
        }
        Ok(p)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse_config(&text)
    }

    /// Keys are normalized so `omega_e` and `omega-e` coincide.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.0.insert(key.replace('_', "-"), value.into());
    }

    pub fn merge(&mut self, other: &Params) {
        for (k, v) in &other.0 {
            self.0.insert(k.clone(), v.clone());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn f64_or(&self, key: &str, default: f64) -> CliResult<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| usage(format!("{key}: not a number: {s:?}"))),
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> CliResult<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| usage(format!("{key}: not a non-negative integer: {s:?}"))),
        }
    }

    pub fn grid_or(&self, key: &str, default: &str) -> CliResult<Vec<f64>> {
        parse_grid(self.get(key).unwrap_or(default)).map_err(|e| match e {
            CliError::Usage(m) => usage(format!("{key}: {m}")),
            other => other,
        })
    }

    /// Monte Carlo modes refuse to run without an explicit seed.
    pub fn avg_or(&self, default: AverageMode) -> CliResult<AverageMode> {
        match self.get("avg") {
            None => Ok(default),
            Some(s) if s.starts_with("mc:") => parse_avg(s, self.required_seed()?),
            Some(s) => parse_avg(s, 0),
        }
    }

    pub fn required_seed(&self) -> CliResult<u64> {
        if self.get("seed").is_none() {
            return Err(usage("Monte Carlo sampling needs --seed"));
        }
        self.u64_or("seed", 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

/// Grid syntax: `a,b,c`, `lin:start:stop:n` or `log:start:stop:n`.
/// Output is sorted ascending with duplicates removed.
pub fn parse_grid(s: &str) -> CliResult<Vec<f64>> {
    let num = |t: &str| -> CliResult<f64> {
        let x: f64 = t.trim().parse().map_err(|_| usage(format!("bad number {t:?}")))?;
        if x.is_finite() {
            Ok(x)
        } else {
            Err(usage(format!("non-finite grid value {t:?}")))
        }
    };
    let mut v = if let Some(rest) = s.strip_prefix("lin:").or_else(|| s.strip_prefix("log:")) {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(usage(format!("range grid needs start:stop:n, got {s:?}")));
        }
        let (a, b) = (num(parts[0])?, num(parts[1])?);
        let n: usize = parts[2].trim().parse().map_err(|_| usage(format!("bad count in {s:?}")))?;
        if n < 2 {
            return Err(usage("range grid needs at least two points"));
        }
        let log = s.starts_with("log:");
        if log && !(a > 0.0 && b > 0.0) {
            return Err(usage("log grid needs positive endpoints"));
        }
        (0..n)
            .map(|i| {
                let u = i as f64 / (n - 1) as f64;
                if log {
                    a * (b / a).powf(u)
                } else {
                    a + (b - a) * u
                }
            })
            .collect()
    } else {
        s.split(',').map(num).collect::<CliResult<Vec<f64>>>()?
    };
    if v.is_empty() {
        return Err(usage("empty grid"));
    }
    v.sort_by(f64::total_cmp);
    v.dedup();
    Ok(v)
}

/// `gh:<nodes>` or `mc:<samples>`; Monte Carlo draws use `seed`.
pub fn parse_avg(s: &str, seed: u64) -> CliResult<AverageMode> {
    let (kind, n) = s
        .split_once(':')
        .ok_or_else(|| usage(format!("--avg expects gh:<nodes> or mc:<n>, got {s:?}")))?;
    let n: usize = n.parse().map_err(|_| usage(format!("--avg count not an integer: {n:?}")))?;
    let mode = match kind {
        "gh" => AverageMode::GaussHermite { nodes: n },
        "mc" => AverageMode::MonteCarlo { samples: n, seed },
        _ => return Err(usage(format!("unknown averaging scheme {kind:?}"))),
    };
    mode.validate().map_err(|e| usage(e.to_string()))?;
    Ok(mode)
}

/// Deterministic quadrature records seed 0.
fn mode_seed(mode: &AverageMode) -> u64 {
    match mode {
        AverageMode::MonteCarlo { seed, .. } => *seed,
        AverageMode::GaussHermite { .. } => 0,
    }
}

fn avg_label(mode: &AverageMode) -> String {
    match mode {
        AverageMode::GaussHermite { nodes } => format!("gh:{nodes}"),
        AverageMode::MonteCarlo { samples, .. } => format!("mc:{samples}"),
    }
}

// ---------------------------------------------------------------------------
// Output

/// Floats are written with 17 significant digits so they round-trip.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub command: String,
    /// Every parameter that determines the rows, in canonical order.
    pub params: Vec<(String, String)>,
    pub seed: u64,
    pub timestamp: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Row indices whose evaluation failed; their values are NaN.
    pub failed: Vec<(usize, String)>,
}

impl SweepResult {
    fn new(command: &str, params: Vec<(String, String)>, seed: u64, columns: &[&str]) -> Self {
        SweepResult {
            command: command.into(),
            params,
            seed,
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            failed: Vec::new(),
        }
    }

    /// SHA-256 of the command, parameters and seed.
    pub fn config_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.command.as_bytes());
        for (k, v) in &self.params {
            h.update(b"\n");
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
        }
        h.update(format!("\nseed={}", self.seed).as_bytes());
        h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Everything except the timestamp line; deterministic in (config, seed).
    pub fn body(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# command: {}", self.command);
        let _ = writeln!(s, "# config_hash: {}", self.config_hash());
        let _ = writeln!(s, "# seed: {}", self.seed);
        for (k, v) in &self.params {
            let _ = writeln!(s, "# param {k}={v}");
        }
        for (i, why) in &self.failed {
            let _ = writeln!(s, "# failed row {i}: {}", why.replace('\n', " "));
        }
        let _ = writeln!(s, "{}", self.columns.join(","));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|&x| fmt_f64(x)).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }

    pub fn to_csv(&self) -> String {
        format!("# timestamp: {}\n{}", self.timestamp, self.body())
    }

    pub fn exit_code(&self) -> i32 {
        if self.failed.is_empty() {
            EXIT_OK
        } else {
            EXIT_THRESHOLD
        }
    }
}

/// Strips the timestamp line so two CSV files can be compared.
pub fn csv_body(csv: &str) -> String {
    csv.lines()
        .filter(|l| !l.starts_with("# timestamp:"))
        .fold(String::new(), |mut s, l| {
            s.push_str(l);
            s.push('\n');
            s
        })
}

fn kv(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn grid_param(grid: &[f64]) -> String {
    grid.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(";")
}

/// Evaluates `f` on each grid point in parallel, preserving order.
fn fill_rows<F>(result: &mut SweepResult, grid: &[f64], f: F)
where
    F: Fn(f64) -> spi_core::Result<Vec<f64>> + Sync,
{
    let width = result.columns.len();
    let outcomes: Vec<_> = grid.par_iter().map(|&x| f(x)).collect();
    for (i, (x, out)) in grid.iter().zip(outcomes).enumerate() {
        match out {
            Ok(mut vals) => {
                let mut row = vec![*x];
                row.append(&mut vals);
                result.rows.push(row);
            }
            Err(e) => {
                let mut row = vec![*x];
                row.resize(width, f64::NAN);
                result.rows.push(row);
                result.failed.push((i, e.to_string()));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Commands

pub const PNS_GRID_DEFAULT: &str = "log:0.001:1000:61";

pub fn cmd_pns_sweep(p: &Params) -> CliResult<SweepResult> {
    let grid = p.grid_or("grid", PNS_GRID_DEFAULT)?;
    if grid.iter().any(|&x| !(1e-3..=1e3).contains(&x)) {
        return Err(usage("grid: w/gamma must lie in [1e-3, 1e3]"));
    }
    let mut r = SweepResult::new("pns-sweep", vec![kv("grid", grid_param(&grid))], 0, &["w_over_gamma", "fidelity"]);
    fill_rows(&mut r, &grid, |x| Ok(vec![pns_fidelity_averaged(x)?]));
    Ok(r)
}

pub const CZ_GRID_DEFAULT: &str = "log:0.005:1:41";

pub fn cmd_cz_sweep(p: &Params) -> CliResult<SweepResult> {
    let grid = p.grid_or("gamma-grid", CZ_GRID_DEFAULT)?;
    let omega = p.f64_or("omega-e", 1e-3)?;
    let w = p.f64_or("w", 0.0)?;
    let mode = p.avg_or(AverageMode::default())?;
    let seed = mode_seed(&mode);
    if grid.iter().any(|&g| !(g > 0.0)) {
        return Err(usage("gamma-grid: bandwidths must be positive"));
    }
    PhysicalConfig::new(omega, omega, w, grid[0]).map_err(|e| usage(e.to_string()))?;
    let params = vec![
        kv("gamma-grid", grid_param(&grid)),
        kv("omega-e", fmt_f64(omega)),
        kv("omega-g-bar", fmt_f64(omega)),
        kv("w", fmt_f64(w)),
        kv("avg", avg_label(&mode)),
    ];
    let mut r = SweepResult::new("cz-sweep", params, seed, &["big_gamma", "fidelity", "error"]);
    fill_rows(&mut r, &grid, |g| {
        let c = PhysicalConfig::new(omega, omega, w, g)?;
        let a = cz_fidelity_averaged(&c, mode)?;
        Ok(vec![a.mean, a.error])
    });
    Ok(r)
}

pub const LR_GRID_DEFAULT: &str = "log:0.01:0.5:25";

pub fn cmd_lr_sweep(p: &Params) -> CliResult<SweepResult> {
    let grid = p.grid_or("omega-e-grid", LR_GRID_DEFAULT)?;
    let k = p.f64_or("k", 2.0)?;
    let w = p.f64_or("w", 0.1)?;
    let n_steps = p.u64_or("n-steps", 1)? as usize;
    let mode = p.avg_or(AverageMode::default())?;
    let seed = mode_seed(&mode);
    if !(1..=2).contains(&n_steps) {
        return Err(usage("n-steps must be 1 or 2"));
    }
    if grid.iter().any(|&x| !(x > 0.0)) {
        return Err(usage("omega-e-grid: frequencies must be positive"));
    }
    PhysicalConfig::with_k_ratio(k, grid[0], w, 1.0).map_err(|e| usage(e.to_string()))?;
    let params = vec![
        kv("omega-e-grid", grid_param(&grid)),
        kv("k", fmt_f64(k)),
        kv("w", fmt_f64(w)),
        kv("n-steps", n_steps),
        kv("avg", avg_label(&mode)),
    ];
    let mut r = SweepResult::new("lr-sweep", params, seed, &["omega_e", "fidelity", "error"]);
    fill_rows(&mut r, &grid, |om| {
        let c = PhysicalConfig::with_k_ratio(k, om, w, 1.0)?;
        let a = lr_fidelity_averaged(&c, n_steps, mode)?;
        Ok(vec![a.mean, a.error])
    });
    Ok(r)
}

pub const MERKULOV_GRID_DEFAULT: &str = "lin:0:50:21";

pub fn cmd_merkulov(p: &Params) -> CliResult<SweepResult> {
    let grid = p.grid_or("t-grid", MERKULOV_GRID_DEFAULT)?;
    let w = p.f64_or("w", 0.1)?;
    let samples = p.u64_or("mc-samples", 20_000)? as usize;
    let seed = p.required_seed()?;
    if !(w > 0.0) {
        return Err(usage("w must be positive"));
    }
    if grid.iter().any(|&t| t < 0.0) {
        return Err(usage("t-grid: times must be >= 0"));
    }
    let mc = AverageMode::MonteCarlo { samples, seed };
    mc.validate().map_err(|e| usage(e.to_string()))?;
    let dist = OverhauserDistribution::new(w, [0.0; 3].into())?;
    let params = vec![
        kv("t-grid", grid_param(&grid)),
        kv("w", fmt_f64(w)),
        kv("mc-samples", samples),
    ];
    let mut r = SweepResult::new("merkulov", params, seed, &["t", "closed_form", "quadrature", "monte_carlo"]);
    fill_rows(&mut r, &grid, |t| {
        let closed = merkulov_sz(t, w)?;
        let quad = merkulov_quadrature(t, w)?;
        let spec = AverageSpec {
            mode: mc,
            distribution: dist,
            omega_e: 0.0,
        };
        let mc_val = gaussian_average(|s| sz_single(t, s), &spec)?.mean;
        Ok(vec![closed, quad, mc_val])
    });
    Ok(r)
}

/// Radial-coordinate quadrature of the frozen-field spin polarization.
pub fn merkulov_quadrature(t: f64, w: f64) -> spi_core::Result<f64> {
    radial_average(
        |omega, theta, _phi| {
            let (s, c) = (0.5 * omega * t).sin_cos();
            c * c + s * s * (2.0 * theta).cos()
        },
        w,
        1e-10,
    )
}

// ---------------------------------------------------------------------------
// Oracle checks

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Vacuum,
    Emission,
    Scattering,
    Lr1,
    Lr2,
}

impl std::str::FromStr for Scenario {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        Ok(match s {
            "vacuum" => Scenario::Vacuum,
            "emission" => Scenario::Emission,
            "scattering" => Scenario::Scattering,
            "lr1" => Scenario::Lr1,
            "lr2" => Scenario::Lr2,
            _ => return Err(usage(format!("unknown scenario {s:?}"))),
        })
    }
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Vacuum,
        Scenario::Emission,
        Scenario::Scattering,
        Scenario::Lr1,
        Scenario::Lr2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Vacuum => "vacuum",
            Scenario::Emission => "emission",
            Scenario::Scattering => "scattering",
            Scenario::Lr1 => "lr1",
            Scenario::Lr2 => "lr2",
        }
    }
}

/// Fixed physical setting for the oracle comparison: one seeded noisy field.
#[derive(Debug, Clone)]
pub struct OracleSetup {
    pub sample: MagneticSample,
    pub input: Wavepacket,
    pub emission_time: f64,
    pub scattering_time: f64,
    pub t1: f64,
}

impl OracleSetup {
    pub fn from_params(p: &Params) -> CliResult<Self> {
        let omega_e = p.f64_or("omega-e", 0.2)?;
        let omega_g_bar = p.f64_or("omega-g-bar", 2.0 * omega_e)?;
        let w = p.f64_or("w", 0.1)?;
        let big_gamma = p.f64_or("big-gamma", 1.0)?;
        let seed = p.u64_or("seed", DEFAULT_SEED)?;
        let config = PhysicalConfig::new(omega_e, omega_g_bar, w, big_gamma).map_err(|e| usage(e.to_string()))?;
        Ok(OracleSetup {
            sample: config.overhauser().sample_seeded(omega_e, seed, 0),
            input: Wavepacket::exponential(big_gamma)?,
            emission_time: p.f64_or("emission-time", 10.0)?,
            scattering_time: p.f64_or("scattering-time", 25.0)?,
            t1: quarter_period(omega_g_bar)?,
        })
    }

    /// Max bin-wise discrepancy between lattice and closed-form amplitudes.
    pub fn discrepancy(&self, scenario: Scenario, delta_t: f64) -> spi_core::Result<f64> {
        let s = &self.sample;
        match scenario {
            Scenario::Vacuum => {
                let (n, dt) = spi_core::oracle::discretize(self.emission_time, delta_t)?;
                let state = evolve(LatticeState::vacuum(dt, UP_G_STATE)?, s, n)?;
                Ok(state
                    .entries()
                    .iter()
                    .filter(|(k, _)| !k.is_empty())
                    .flat_map(|(_, a)| a.iter().map(|z| z.norm()))
                    .fold(0.0, f64::max))
            }
            Scenario::Emission => Ok([Spin::Up, Spin::Down]
                .iter()
                .map(|&z| simulate_emission(s, z, self.emission_time, delta_t).map(|r| r.max_error(s, z)))
                .collect::<spi_core::Result<Vec<f64>>>()?
                .into_iter()
                .fold(0.0, f64::max)),
            Scenario::Scattering => {
                let mut worst = 0.0f64;
                for z in [Spin::Up, Spin::Down] {
                    let run = simulate_scattering(s, z, &self.input, self.scattering_time, delta_t)?;
                    worst = worst.max(run.max_error(s, z, &self.input)?);
                }
                Ok(worst)
            }
            Scenario::Lr1 => Ok(simulate_lr(s, 1, self.t1, delta_t)?.max_error(s)),
            Scenario::Lr2 => Ok(simulate_lr(s, 2, self.t1, delta_t)?.max_error(s)),
        }
    }
}

const UP_G_STATE: [C64; 4] = {
    let mut v = [C64::new(0.0, 0.0); 4];
    v[UP_G] = C64::new(1.0, 0.0);
    v
};

pub const DT_LADDER_DEFAULT: &str = "0.004,0.002,0.001,0.0005";

#[derive(Debug, Clone)]
pub struct OracleReport {
    pub scenario: Scenario,
    pub study: ConvergenceReport,
    pub passed: bool,
}

impl OracleReport {
    pub fn final_error(&self) -> f64 {
        *self.study.errors.last().expect("ladder has at least three steps")
    }

    pub fn render(&self) -> String {
        let mut s = format!("# oracle-check scenario={}\ndelta_t,max_discrepancy\n", self.scenario.name());
        for (dt, e) in self.study.delta_t.iter().zip(&self.study.errors) {
            let _ = writeln!(s, "{},{}", fmt_f64(*dt), fmt_f64(*e));
        }
        let order = self.study.order.map_or("undefined".to_string(), fmt_f64);
        let _ = writeln!(s, "# order: {order}");
        let _ = writeln!(s, "# status: {}", if self.passed { "PASS" } else { "FAIL" });
        s
    }
}

pub fn cmd_oracle_check(p: &Params) -> CliResult<OracleReport> {
    let scenario: Scenario = p.get("scenario").unwrap_or("emission").parse()?;
    // Largest step first so the ladder is decreasing.
    let mut ladder = p.grid_or("dt-ladder", DT_LADDER_DEFAULT)?;
    ladder.reverse();
    let setup = OracleSetup::from_params(p)?;
    let study = convergence_study(|dt| setup.discrepancy(scenario, dt), &ladder).map_err(|e| match e {
        spi_core::Error::InvalidParameter { .. } | spi_core::Error::TruncationValidity { .. } => usage(e.to_string()),
        other => other.into(),
    })?;
    let passed = match scenario {
        Scenario::Vacuum => study.errors.iter().all(|&e| e == 0.0),
        _ => {
            study.order.is_some_and(|o| o >= ORACLE_MIN_ORDER)
                && study.errors.last().is_some_and(|&e| e < ORACLE_THRESHOLD)
        }
    };
    Ok(OracleReport { scenario, study, passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_forms() {
        assert_eq!(parse_grid("0.1, 0.01,0.1").unwrap(), vec![0.01, 0.1]);
        let g = parse_grid("log:0.01:1:3").unwrap();
        assert!((g[1] - 0.1).abs() < 1e-15);
        assert_eq!(parse_grid("lin:0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(parse_grid("log:0:1:3").is_err());
        assert!(parse_grid("").is_err());
    }

    #[test]
    fn avg_forms() {
        assert_eq!(parse_avg("gh:7", 1).unwrap(), AverageMode::GaussHermite { nodes: 7 });
        assert_eq!(
            parse_avg("mc:500", 9).unwrap(),
            AverageMode::MonteCarlo { samples: 500, seed: 9 }
        );
        assert!(parse_avg("gh:6", 1).is_err());
        assert!(parse_avg("mc:10", 1).is_err());
        assert!(parse_avg("xx:10", 1).is_err());
    }

    #[test]
    fn config_then_override() {
        let mut p = Params::parse_config("# comment\nomega_e = 0.1\nw=0.5 # trailing\n").unwrap();
        let mut flags = Params::new();
        flags.set("w", "0.01");
        p.merge(&flags);
        assert_eq!(p.f64_or("omega-e", 0.0).unwrap(), 0.1);
        assert_eq!(p.f64_or("w", 0.0).unwrap(), 0.01);
        assert!(Params::parse_config("novalue").is_err());
    }

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 1e-300, -2.5e17] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn pns_rows_sorted_and_checked() {
        let mut p = Params::new();
        p.set("grid", "0.1,0.01");
        let r = cmd_pns_sweep(&p).unwrap();
        assert_eq!(r.rows[0][0], 0.01);
        assert!(r.rows.iter().all(|row| row[1] > 0.99));
        p.set("grid", "1e-4");
        assert_eq!(cmd_pns_sweep(&p).unwrap_err().exit_code(), EXIT_USAGE);
    }

    #[test]
    fn pns_limits() {
        let mut p = Params::new();
        p.set("grid", "0.001,1000");
        let r = cmd_pns_sweep(&p).unwrap();
        assert!((r.rows[0][1] - 1.0).abs() < 1e-5);
        assert!((r.rows[1][1] - 1.0 / 3.0).abs() < 1e-3);
    }

    #[test]
    fn hash_ignores_timestamp() {
        let mut p = Params::new();
        p.set("grid", "0.1");
        let mut a = cmd_pns_sweep(&p).unwrap();
        let b = cmd_pns_sweep(&p).unwrap();
        a.timestamp = "1970-01-01T00:00:00Z".into();
        assert_eq!(a.body(), b.body());
        assert_eq!(csv_body(&a.to_csv()), a.body());
    }

    #[test]
    fn vacuum_scenario_is_exact() {
        let mut p = Params::new();
        p.set("scenario", "vacuum");
        p.set("dt-ladder", "0.008,0.004,0.002");
        p.set("emission-time", "2");
        let r = cmd_oracle_check(&p).unwrap();
        assert!(r.passed, "{}", r.render());
    }

    #[test]
    fn monte_carlo_requires_seed() {
        let mut p = Params::new();
        p.set("avg", "mc:200");
        assert_eq!(p.avg_or(AverageMode::default()).unwrap_err().exit_code(), EXIT_USAGE);
        assert_eq!(cmd_merkulov(&p).unwrap_err().exit_code(), EXIT_USAGE);
        p.set("seed", "3");
        assert_eq!(
            p.avg_or(AverageMode::default()).unwrap(),
            AverageMode::MonteCarlo { samples: 200, seed: 3 }
        );
    }

    #[test]
    fn unknown_scenario_is_usage_error() {
        let mut p = Params::new();
        p.set("scenario", "teleport");
        assert_eq!(cmd_oracle_check(&p).unwrap_err().exit_code(), EXIT_USAGE);
    }
}
