//! Batch driver: strict configuration, deterministic experiments, CSV, JSON
//! and SVG outputs, and a manifest with hashes of everything written.

pub mod config;
pub mod output;
pub mod sections;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;

pub use config::{parse_config, Config, ConfigError};
use output::sha256_hex;
pub use sections::{Check, RunContext, Section};

/// Environment variable read when `--threads` is absent.
pub const THREADS_ENV: &str = "FBM_CURRENTS_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

const CSV_DOCS: &str = "\
Every CSV starts with `# schema=<name>/<version>` followed by a header row.
Floats use the shortest round-trip scientific notation.

kernel_closed_forms.csv  d, alpha, r, k (computed), closed_form, rel_error
kernel_profiles.csv      d, alpha, r, k
cov_table.csv            scheme, H, eps, tau, c = Cov(DX_t, DX_s), b_t = Cov(DX_t, X_t - X_s),
                         b_s = Cov(DX_s, X_t - X_s), c_reference (Phi form), b_reference (textbook form)
cov_mc.csv               scheme, H, eps, t, s, atom (c | b_t | b_s), exact, mc, stderr, z
fbm_covariance.csv       H, s, t, empirical, stderr, exact, z
fbm_paths.csv            H, path, t, x
sweep.csv                H, d, alpha, epsilon, scheme, mode (exact | mc), value = E Z, stderr
sweep_fits.csv           H, d, scheme, mode, alpha, alpha_h, slope, extrapolated_slope, ratio, class, expected
oracle.csv               H, d, alpha, epsilon, scheme, exact, mc, stderr, z
ordering.csv             seed, alpha, z (per-path Z)
wick.csv                 case, lhs, lhs_stderr, rhs, rhs_stderr, difference, difference_stderr, z
wick_decompose.csv       replica, A, B1, B2, Q, Z
eta.csv                  seed, eta_norm_sq (grid), eta_tail, z, rel_gap, flagged_nodes
vortex.csv               H, eps, mode (exact | mc), measure, energy, stderr, condition_flags
brownian_moments.csv     theta, q, distance, n_paths, term, mean, stderr, tail_index, reliable
brownian_exceedance.csv  dim, distance, frequency, bound, pass
occupation.csv           d, alpha, p_prime, n_paths, mean, stderr, tail_index, condition_holds

Exit status: 0 all checks pass, 1 a check failed, 2 configuration or usage error, 3 numerical error.";

#[derive(Debug, Parser)]
#[command(name = "fbm-currents", version, about = "Regularized fBm currents: kernels, sweeps, Wick checks and vortex energy", after_long_help = CSV_DOCS)]
pub struct Cli {
    /// TOML configuration; unknown keys are rejected
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// base seed, overrides the configuration
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// worker threads (default: hardware parallelism)
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    /// output directory
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// skip the optional extended checks
    #[arg(long, global = true)]
    pub quick: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// kernel closed forms, unit mass, semigroup and Laplacian identities
    KernelCheck,
    /// covariance atoms of the discrete derivatives, exact and by Monte Carlo
    CovTable,
    /// fBm sampler covariance check and sample paths
    FbmSample,
    /// E Z sweeps in eps, exact-vs-MC oracle and ordering in alpha
    CurrentSweep,
    /// Gaussian integration-by-parts suite and characteristic function
    WickCheck,
    /// per-path split Z = A + B1 - B2 + Q
    WickDecompose,
    /// grid norm of the mollified current against Z
    EtaField,
    /// vortex filament energy, finiteness conditions and Monte Carlo
    VortexEnergy,
    /// Brownian moment, occupation and maximal-inequality checks
    BrownianCheck,
    /// every section above
    FullSuite,
}

impl Command {
    fn sections(self) -> Vec<Command> {
        use Command::*;
        match self {
            FullSuite => vec![
                KernelCheck,
                CovTable,
                FbmSample,
                CurrentSweep,
                WickCheck,
                WickDecompose,
                EtaField,
                VortexEnergy,
                BrownianCheck,
            ],
            c => vec![c],
        }
    }

    fn name(self) -> &'static str {
        use Command::*;
        match self {
            KernelCheck => "kernel-check",
            CovTable => "cov-table",
            FbmSample => "fbm-sample",
            CurrentSweep => "current-sweep",
            WickCheck => "wick-check",
            WickDecompose => "wick-decompose",
            EtaField => "eta-field",
            VortexEnergy => "vortex-energy",
            BrownianCheck => "brownian-check",
            FullSuite => "full-suite",
        }
    }
}

pub fn run_section(cmd: Command, cfg: &Config, ctx: &RunContext) -> crate::Result<Section> {
    use Command::*;
    match cmd {
        KernelCheck => sections::kernel_check(&cfg.kernel_check, ctx),
        CovTable => sections::cov_table(&cfg.cov_table, ctx),
        FbmSample => sections::fbm_sample(&cfg.fbm_sample, ctx),
        CurrentSweep => sections::current_sweep(&cfg.current_sweep, ctx),
        WickCheck => sections::wick_check(&cfg.wick_check, ctx),
        WickDecompose => sections::wick_decompose_section(&cfg.wick_decompose, ctx),
        EtaField => sections::eta_section(&cfg.eta_field, ctx),
        VortexEnergy => sections::vortex_section(&cfg.vortex_energy, ctx),
        BrownianCheck => sections::brownian_section(&cfg.brownian_check, ctx),
        FullSuite => unreachable!("expanded by the caller"),
    }
}

fn write_file(dir: &Path, name: &str, contents: &[u8], inventory: &mut Vec<serde_json::Value>) -> std::io::Result<()> {
    fs::write(dir.join(name), contents)?;
    inventory.push(json!({"file": name, "bytes": contents.len(), "sha256": sha256_hex(contents)}));
    Ok(())
}

/// Run with parsed arguments; returns the exit status.
pub fn run(cli: Cli) -> i32 {
    let (cfg, config_text) = match &cli.config {
        Some(p) => {
            let text = match fs::read_to_string(p) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("cannot read config {}: {e}", p.display());
                    return EXIT_CONFIG;
                }
            };
            match parse_config(&text) {
                Ok(c) => (c, text),
                Err(e) => {
                    eprintln!("{e}");
                    return EXIT_CONFIG;
                }
            }
        }
        None => (Config::default(), String::new()),
    };
    let seed = cli.seed.unwrap_or(cfg.seed);
    let threads = cli
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    if threads == 0 {
        eprintln!("--threads must be positive");
        return EXIT_CONFIG;
    }
    if let Err(e) = fs::create_dir_all(&cli.out_dir) {
        eprintln!("cannot create {}: {e}", cli.out_dir.display());
        return EXIT_RUNTIME;
    }
    let ctx = RunContext {
        seed,
        quick: cli.quick,
        plots: cfg.plots,
    };
    let effective = serde_json::to_value(&cfg).expect("config serializes");
    let config_hash = sha256_hex(serde_json::to_string(&effective).expect("json").as_bytes());
    let started = Instant::now();
    let mut inventory = Vec::new();
    let mut sections_json = Vec::new();
    let mut all_pass = true;
    let mut timing = Vec::new();
    for cmd in cli.command.sections() {
        let t0 = Instant::now();
        let result = crate::mc::with_threads(threads, || run_section(cmd, &cfg, &ctx));
        let sec = match result {
            Ok(s) => s,
            Err(e) => {
                eprintln!("{}: {e}", cmd.name());
                return EXIT_RUNTIME;
            }
        };
        let mut write = || -> std::io::Result<()> {
            for (name, table) in &sec.tables {
                write_file(&cli.out_dir, name, table.render().as_bytes(), &mut inventory)?;
            }
            for (name, svg) in &sec.plots {
                write_file(&cli.out_dir, name, svg.as_bytes(), &mut inventory)?;
            }
            let report = json!({"section": sec.name, "passed": sec.passed(), "checks": sec.checks, "report": sec.report});
            let text = serde_json::to_string_pretty(&report).expect("json") + "\n";
            write_file(&cli.out_dir, &format!("{}.json", sec.name), text.as_bytes(), &mut inventory)
        };
        if let Err(e) = write() {
            eprintln!("writing {}: {e}", cmd.name());
            return EXIT_RUNTIME;
        }
        for c in &sec.checks {
            println!("{} {} {}: {}", if c.pass { "PASS" } else { "FAIL" }, sec.name, c.name, c.detail);
        }
        all_pass &= sec.passed();
        sections_json.push(json!({"section": sec.name, "passed": sec.passed(), "n_checks": sec.checks.len()}));
        timing.push(json!({"section": sec.name, "seconds": t0.elapsed().as_secs_f64()}));
        // rewritten after every section so an interrupted run keeps a valid manifest
        let manifest = json!({
            "package": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": cli.command.name(),
            "config_hash": config_hash,
            "config_file_sha256": if config_text.is_empty() { serde_json::Value::Null } else { json!(sha256_hex(config_text.as_bytes())) },
            "base_seed": seed,
            "quick": cli.quick,
            "parameters": effective,
            "sections": sections_json,
            "outputs": inventory,
            "timing": {"threads": threads, "wall_seconds": started.elapsed().as_secs_f64(), "sections": timing},
        });
        let text = serde_json::to_string_pretty(&manifest).expect("json") + "\n";
        if let Err(e) = fs::write(cli.out_dir.join("manifest.json"), text) {
            eprintln!("writing manifest: {e}");
            return EXIT_RUNTIME;
        }
    }
    if all_pass {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    }
}

/// Parse `args` (program name first) and run.
pub fn cli_main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            code
        }
    }
}

pub fn cli_main() -> i32 {
    cli_main_from(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_reports_its_path() {
        let e = parse_config("[current_sweep]\nalphaz = [1.0]\n").unwrap_err();
        assert_eq!(e.key_path, "current_sweep.alphaz");
        let e = parse_config("sed = 3\n").unwrap_err();
        assert_eq!(e.key_path, "sed");
    }

    #[test]
    fn wrong_type_reports_its_path() {
        let e = parse_config("[eta_field]\nseeds = \"x\"\n").unwrap_err();
        assert_eq!(e.key_path, "eta_field.seeds");
    }

    #[test]
    fn empty_config_is_the_default() {
        assert_eq!(parse_config("").unwrap(), Config::default());
    }
}
