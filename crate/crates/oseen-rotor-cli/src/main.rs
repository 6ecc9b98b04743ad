//! `oseen-rotor` — command-line front end for the rotating-Oseen kernel
//! toolkit: point evaluation of the kernels, decay scans with slope fits,
//! the lemma verification suites, convolution-exponent queries, and the
//! far-field expansion driver.
//!
//! Exit codes: `0` success, `1` a verification verdict failed (the report
//! is still written), `2` usage errors, `3` runtime evaluation errors.
//!
//! Reports are deterministic: the same configuration and seed produce
//! byte-identical output for any `--jobs` value, because all parallel work
//! writes into index-addressed slots and all sampling is counter-based.

mod config;
mod evalcmd;
mod expandcmd;
mod failure;
mod output;
mod suites;

use clap::Parser;

use config::CommonOpts;
use failure::Failure;
use suites::{report_verdicts, run_suite, Suite};

#[derive(Parser, Debug)]
#[command(
    name = "oseen-rotor",
    version,
    about = "Kernel evaluation, decay scans, and verification suites for the rotating Oseen system"
)]
struct Cli {
    #[command(flatten)]
    common: CommonOpts,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Subcommand, Debug)]
enum Cmd {
    /// Evaluate a kernel quantity at one or more points.
    Eval(evalcmd::EvalArgs),

    /// Run a verification suite and report one verdict per lemma check.
    Verify(VerifyArgs),

    /// Compute far-field expansion coefficients and remainder decay scans.
    Expand(expandcmd::ExpandArgs),

    /// Predict the envelope exponents of a weighted convolution.
    ConvExponents(evalcmd::ConvArgs),

    /// Monte-Carlo check of one convolution envelope.
    ConvVerify(evalcmd::ConvVerifyArgs),

    /// Scan a kernel derivative along rays and fit the decay slope.
    ScanDecay(evalcmd::ScanArgs),
}

#[derive(clap::Args, Debug)]
struct VerifyArgs {
    /// Which suite to run.
    #[arg(long, value_enum)]
    suite: Suite,

    /// Sphere-suite weight exponent (must exceed 1); the default sweep is
    /// {1.5, 2, 3}.
    #[arg(long)]
    beta: Option<f64>,
}

fn dispatch(cli: &Cli) -> Result<i32, Failure> {
    match &cli.cmd {
        Cmd::Eval(args) => evalcmd::cmd_eval(&cli.common, args),
        Cmd::Verify(args) => {
            let cfg = cli.common.resolve()?;
            let records = run_suite(args.suite, &cfg, args.beta)?;
            report_verdicts(&cfg, args.suite.name(), records)
        }
        Cmd::Expand(args) => expandcmd::cmd_expand(&cli.common, args),
        Cmd::ConvExponents(args) => evalcmd::cmd_conv_exponents(&cli.common, args),
        Cmd::ConvVerify(args) => evalcmd::cmd_conv_verify(&cli.common, args),
        Cmd::ScanDecay(args) => evalcmd::cmd_scan_decay(&cli.common, args),
    }
}

fn main() {
    // clap exits with code 2 on usage errors and 0 for --help/--version.
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => std::process::exit(code),
        Err(failure) => {
            eprintln!("error: {failure}");
            std::process::exit(failure.code);
        }
    }
}
