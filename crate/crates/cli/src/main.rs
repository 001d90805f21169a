use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spi_cli::{
    cmd_cz_sweep, cmd_lr_sweep, cmd_merkulov, cmd_oracle_check, cmd_pns_sweep, CliError, CliResult, Params,
    EXIT_OK, EXIT_THRESHOLD, EXIT_USAGE, WORKERS_ENV,
};

#[derive(Parser, Debug)]
#[command(name = "spi", version, about = "Spin-photon interface protocol sweeps")]
struct Cli {
    /// `key = value` file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path (stdout when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overhauser averaging: `gh:<nodes>` or `mc:<samples>`.
    #[arg(long, global = true)]
    avg: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Averaged photon-number-superposition fidelity against w/gamma.
    PnsSweep(PnsArgs),
    /// Averaged CZ fidelity against photon bandwidth.
    CzSweep(CzArgs),
    /// Averaged LR fidelity against trion precession.
    LrSweep(LrArgs),
    /// Frozen-field spin dephasing: closed form, quadrature and Monte Carlo.
    Merkulov(MerkulovArgs),
    /// Lattice oracle against closed-form amplitudes over a step ladder.
    OracleCheck(OracleArgs),
}

#[derive(Args, Debug)]
struct PnsArgs {
    /// `a,b,c`, `lin:start:stop:n` or `log:start:stop:n`.
    #[arg(long)]
    grid: Option<String>,
}

#[derive(Args, Debug)]
struct CzArgs {
    #[arg(long)]
    gamma_grid: Option<String>,
    /// Trion and nominal ground precession (set equal).
    #[arg(long)]
    omega_e: Option<String>,
    #[arg(long)]
    w: Option<String>,
}

#[derive(Args, Debug)]
struct LrArgs {
    #[arg(long)]
    omega_e_grid: Option<String>,
    /// Ratio omega_g_bar / omega_e.
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    w: Option<String>,
    #[arg(long)]
    n_steps: Option<String>,
}

#[derive(Args, Debug)]
struct MerkulovArgs {
    #[arg(long)]
    t_grid: Option<String>,
    #[arg(long)]
    w: Option<String>,
    #[arg(long)]
    mc_samples: Option<String>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    /// vacuum, emission, scattering, lr1 or lr2.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    dt_ladder: Option<String>,
    #[arg(long)]
    omega_e: Option<String>,
    #[arg(long)]
    omega_g_bar: Option<String>,
    #[arg(long)]
    w: Option<String>,
    #[arg(long)]
    big_gamma: Option<String>,
}

fn overrides(cli: &Cli) -> Params {
    let mut p = Params::new();
    let mut put = |k: &str, v: &Option<String>| {
        if let Some(v) = v {
            p.set(k, v.clone());
        }
    };
    put("seed", &cli.seed.map(|s| s.to_string()));
    put("avg", &cli.avg);
    match &cli.command {
        Command::PnsSweep(a) => put("grid", &a.grid),
        Command::CzSweep(a) => {
            put("gamma-grid", &a.gamma_grid);
            put("omega-e", &a.omega_e);
            put("w", &a.w);
        }
        Command::LrSweep(a) => {
            put("omega-e-grid", &a.omega_e_grid);
            put("k", &a.k);
            put("w", &a.w);
            put("n-steps", &a.n_steps);
        }
        Command::Merkulov(a) => {
            put("t-grid", &a.t_grid);
            put("w", &a.w);
            put("mc-samples", &a.mc_samples);
        }
        Command::OracleCheck(a) => {
            put("scenario", &a.scenario);
            put("dt-ladder", &a.dt_ladder);
            put("omega-e", &a.omega_e);
            put("omega-g-bar", &a.omega_g_bar);
            put("w", &a.w);
            put("big-gamma", &a.big_gamma);
        }
    }
    p
}

fn configure_workers() -> CliResult<()> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{WORKERS_ENV} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn emit(out: &Option<PathBuf>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run(cli: &Cli) -> CliResult<i32> {
    configure_workers()?;
    let mut params = match &cli.config {
        Some(path) => Params::load(path)?,
        None => Params::new(),
    };
    params.merge(&overrides(cli));
    let sweep = match &cli.command {
        Command::PnsSweep(_) => cmd_pns_sweep(&params)?,
        Command::CzSweep(_) => cmd_cz_sweep(&params)?,
        Command::LrSweep(_) => cmd_lr_sweep(&params)?,
        Command::Merkulov(_) => cmd_merkulov(&params)?,
        Command::OracleCheck(_) => {
            let report = cmd_oracle_check(&params)?;
            emit(&cli.out, &report.render())?;
            return Ok(if report.passed { EXIT_OK } else { EXIT_THRESHOLD });
        }
    };
    for (i, why) in &sweep.failed {
        eprintln!("spi: row {i} failed: {why}");
    }
    emit(&cli.out, &sweep.to_csv())?;
    Ok(sweep.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { EXIT_OK as u8 });
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("spi: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
