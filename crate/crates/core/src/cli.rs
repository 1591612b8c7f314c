//! The `icm` command-line front end.
//!
//! Every subcommand reads a modulation definition file (see
//! [`parse_definition`]) and writes results to stdout or a CSV file.
//! Library errors map onto fixed exit codes, see [`exit_code`].

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bicm::Labeling;
use crate::capacity::{
    self, estimate_mi, gaussian_threshold_db, min_snr_for_rate, MiRow, RateTuple,
    DEFAULT_MI_SAMPLES, DEFAULT_TOL_DB,
};
use crate::error::{Error, Result};
use crate::fec::TrellisCode;
use crate::modulation::{parse_definition, Constellation, Definition, SideInfoSet};
use crate::sim::{
    ber_crossing_estimate, render_csv, run_bicm_ber, run_uncoded_ber, BerPoint, BicmConfig,
    Crossing, CrossingMethod, Scheme, SimPlan, StoppingRule, BICM_INFO_BITS, DEFAULT_MAX_BITS,
    DEFAULT_MIN_ERRORS,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PARSE: i32 = 3;
pub const EXIT_INFEASIBLE: i32 = 4;
pub const EXIT_IO: i32 = 5;

/// BER level at which curves are compared.
pub const TARGET_BER: f64 = 1e-5;

#[derive(Debug, Parser)]
#[command(
    name = "icm",
    version,
    about = "Index-coded modulation over Gaussian broadcast channels"
)]
pub struct Cli {
    /// Worker threads; affects wall-clock time only, never results.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Distances, side-information rates and gain of a modulation.
    Analyze(ModArg),
    /// Monte-Carlo mutual information sweep, written as CSV.
    Mi(MiArgs),
    /// Minimum SNR supporting a rate tuple at each receiver.
    MinSnr(MinSnrArgs),
    /// BER simulation of the uncoded or BICM scheme, written as CSV.
    Ber(BerArgs),
}

#[derive(Debug, Args)]
pub struct ModArg {
    /// Modulation definition file.
    #[arg(long = "mod", value_name = "FILE")]
    pub modfile: PathBuf,
}

#[derive(Debug, Args)]
pub struct MiArgs {
    #[command(flatten)]
    pub modulation: ModArg,
    /// SNR grid in dB: `a:b:step` (inclusive) or a comma list.
    #[arg(long)]
    pub snr: String,
    /// Side-information sets, e.g. `0,1,2,1+2`; `0` is the empty set.
    /// Defaults to every proper subset.
    #[arg(long, value_delimiter = ',')]
    pub sets: Vec<SideInfoSet>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_MI_SAMPLES)]
    pub samples: usize,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MinSnrArgs {
    #[command(flatten)]
    pub modulation: ModArg,
    /// Per-message rates in b/dim, e.g. `1,1`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub targets: Vec<f64>,
    /// Receivers to evaluate; defaults to every proper subset.
    #[arg(long, value_delimiter = ',')]
    pub sets: Vec<SideInfoSet>,
    /// Bisection tolerance in dB.
    #[arg(long = "tol-db", default_value_t = DEFAULT_TOL_DB)]
    pub tol_db: f64,
    #[arg(long)]
    pub seed: u64,
    /// Monte-Carlo samples per MI evaluation.
    #[arg(long, default_value_t = DEFAULT_MI_SAMPLES)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct BerArgs {
    #[command(flatten)]
    pub modulation: ModArg,
    /// `uncoded` or `bicm`.
    #[arg(long)]
    pub scheme: Scheme,
    /// SNR grid in dB: `a:b:step` (inclusive) or a comma list.
    #[arg(long)]
    pub snr: String,
    /// Side-information sets; defaults to every proper subset.
    #[arg(long, value_delimiter = ',')]
    pub sets: Vec<SideInfoSet>,
    #[arg(long)]
    pub seed: u64,
    /// Demapper/decoder iterations of the BICM receiver.
    #[arg(long, default_value_t = crate::bicm::DEFAULT_ITERATIONS)]
    pub iters: usize,
    /// Information bits per stream and BICM frame.
    #[arg(long = "info-bits", default_value_t = BICM_INFO_BITS)]
    pub info_bits: usize,
    /// Bit-to-symbol labeling of the BICM mapper: `natural` or `gray`.
    #[arg(long, default_value_t = Labeling::Natural)]
    pub labeling: Labeling,
    /// Stop a point once this many bit errors are counted.
    #[arg(long = "min-errors", default_value_t = DEFAULT_MIN_ERRORS)]
    pub min_errors: u64,
    /// Bit budget per point.
    #[arg(long = "max-bits", default_value_t = DEFAULT_MAX_BITS)]
    pub max_bits: u64,
    /// Output CSV; stdout when absent, with the summary on stderr.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Domain(_) | Error::LengthMismatch { .. } => EXIT_USAGE,
        Error::Parse(_) | Error::Construction(_) => EXIT_PARSE,
        Error::Infeasible(_) => EXIT_INFEASIBLE,
        Error::Io { .. } => EXIT_IO,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Normal output goes to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return EXIT_USAGE;
            }
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
    };
    match execute(&cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "icm: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match cli.workers {
        None => dispatch(&cli.command, out, err),
        Some(0) => Err(Error::Domain("--workers must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Domain(format!("cannot start {n} workers: {e}")))?;
            // the pool needs Send sinks, so buffer and forward afterwards
            let (mut o, mut e) = (Vec::new(), Vec::new());
            let result = pool.install(|| dispatch(&cli.command, &mut o, &mut e));
            let _ = err.write_all(&e);
            emit(out, &String::from_utf8_lossy(&o))?;
            result
        }
    }
}

fn dispatch(command: &Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Analyze(a) => emit(out, &cmd_analyze(&load(&a.modfile)?)?),
        Command::Mi(a) => cmd_mi(a, out),
        Command::MinSnr(a) => cmd_min_snr(a, out),
        Command::Ber(a) => cmd_ber(a, out, err),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<i32> {
    out.write_all(text.as_bytes()).map_err(|source| Error::Io {
        path: PathBuf::from("<stdout>"),
        source,
    })?;
    Ok(EXIT_OK)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads and parses a modulation definition file.
pub fn load(path: &Path) -> Result<Definition> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_definition(&text)
}

/// Parses `a:b:step` (inclusive of `b` up to rounding) or a comma list.
pub fn parse_snr_grid(spec: &str) -> Result<Vec<f64>> {
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Domain(format!("bad SNR value '{s}'")))
    };
    let grid: Vec<f64> = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [a, b, step] = parts[..] else {
            return Err(Error::Domain(format!(
                "SNR range '{spec}' must be a:b:step"
            )));
        };
        let (a, b, step) = (num(a)?, num(b)?, num(step)?);
        if !(step > 0.0) || b < a {
            return Err(Error::Domain(format!("SNR range '{spec}' is empty")));
        }
        let count = ((b - a) / step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| a + i as f64 * step).collect()
    } else {
        spec.split(',').map(num).collect::<Result<_>>()?
    };
    if grid.is_empty() {
        return Err(Error::Domain("SNR grid is empty".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain(format!(
            "SNR grid '{spec}' must be strictly increasing"
        )));
    }
    Ok(grid)
}

fn sets_or_all(sets: &[SideInfoSet], k: usize) -> Result<Vec<SideInfoSet>> {
    if sets.is_empty() {
        let mut all = vec![SideInfoSet::EMPTY];
        all.extend(SideInfoSet::nonempty_proper_subsets(k));
        return Ok(all);
    }
    for s in sets {
        s.check_proper(k)?;
    }
    Ok(sets.to_vec())
}

fn label_text(c: &Constellation, i: usize) -> String {
    let parts: Vec<String> = c.label(i).iter().map(u32::to_string).collect();
    format!("({})", parts.join(","))
}

/// The `analyze` report.
pub fn cmd_analyze(def: &Definition) -> Result<String> {
    let m = &def.modulation;
    let c = m.constellation();
    let report = c.side_information_gain()?;
    let mut s = String::new();
    let _ = writeln!(s, "modulation: {}", m.to_string().replace('\n', " "));
    let _ = writeln!(s, "bijective: yes ({} labels)", m.label_count());
    let _ = writeln!(s, "rate per message: {:.6} b/dim", m.rate_per_message());
    let (a, b) = report.d0.pair;
    let _ = writeln!(
        s,
        "d0 = {:.6} (squared {}) between {} and {}",
        report.d0.distance(),
        report.d0.grid_sq,
        label_text(&c, a),
        label_text(&c, b)
    );
    for sub in &report.subsets {
        let (a, b) = sub.witness.pair;
        let _ = writeln!(
            s,
            "S={}: R_S = {:.6} b/dim, d_S = {:.6} (squared {}) between {} and {}, gain = {:.6} dB/b/dim",
            sub.set,
            sub.side_rate,
            sub.witness.distance(),
            sub.witness.grid_sq,
            label_text(&c, a),
            label_text(&c, b),
            sub.gain_db_per_bit
        );
    }
    let _ = writeln!(
        s,
        "Gamma = {:.6} dB/b/dim at S={}",
        report.gamma_db, report.argmin
    );
    Ok(s)
}

fn cmd_mi(a: &MiArgs, out: &mut dyn Write) -> Result<i32> {
    let def = load(&a.modulation.modfile)?;
    let grid = parse_snr_grid(&a.snr)?;
    let c = def.modulation.constellation();
    let sets = sets_or_all(&a.sets, c.messages())?;
    let mut rows = Vec::with_capacity(sets.len() * grid.len());
    for &s in &sets {
        for &snr in &grid {
            rows.push(MiRow {
                snr_db: snr,
                set: s,
                estimate: estimate_mi(&c, s, snr, a.samples, a.seed)?,
            });
        }
    }
    let csv = capacity::render_mi_csv(&rows);
    match &a.out {
        Some(path) => {
            write_file(path, &csv)?;
            Ok(EXIT_OK)
        }
        None => emit(out, &csv),
    }
}

fn cmd_min_snr(a: &MinSnrArgs, out: &mut dyn Write) -> Result<i32> {
    let def = load(&a.modulation.modfile)?;
    let c = def.modulation.constellation();
    if a.targets.len() != c.messages() {
        return Err(Error::Domain(format!(
            "--targets needs {} rates, got {}",
            c.messages(),
            a.targets.len()
        )));
    }
    let rates = RateTuple::new(a.targets.clone())?;
    let sets = sets_or_all(&a.sets, c.messages())?;
    let mut table = String::from("s_set,demanded_bpdim,min_snr_db,gaussian_db\n");
    let mut infeasible = false;
    for &s in &sets {
        let demanded = rates.demanded_rate(s);
        let gauss = gaussian_threshold_db(demanded);
        match min_snr_for_rate(&c, s, demanded, a.tol_db, a.samples, a.seed) {
            Ok(snr) => {
                let _ = writeln!(table, "{s},{demanded:.6},{snr:.3},{gauss:.3}");
            }
            Err(Error::Infeasible(msg)) => {
                infeasible = true;
                let _ = writeln!(table, "{s},{demanded:.6},infeasible,{gauss:.3}");
                let _ = writeln!(table, "# infeasible: {msg}");
            }
            Err(e) => return Err(e),
        }
    }
    emit(out, &table)?;
    Ok(if infeasible { EXIT_INFEASIBLE } else { EXIT_OK })
}

/// Crossing and gap summary of a BER table. Crossings outside the
/// measured range are extrapolated and marked as such.
pub fn ber_summary(points: &[BerPoint], scheme: Scheme, sets: &[SideInfoSet]) -> String {
    let mut s = String::new();
    let crossings: Vec<(SideInfoSet, Option<Crossing>)> = sets
        .iter()
        .map(|&set| (set, ber_crossing_estimate(points, scheme, set, TARGET_BER)))
        .collect();
    let tag = |c: &Crossing| match c.method {
        CrossingMethod::Interpolated => "",
        CrossingMethod::Extrapolated => " (extrapolated)",
    };
    for (set, x) in &crossings {
        let _ = match x {
            Some(c) => writeln!(
                s,
                "crossing {scheme} S={set} at BER {TARGET_BER:e}: {:.3} dB{}",
                c.snr_db,
                tag(c)
            ),
            None => writeln!(
                s,
                "crossing {scheme} S={set} at BER {TARGET_BER:e}: not reached"
            ),
        };
    }
    if let Some((_, Some(base))) = crossings.iter().find(|(set, _)| set.is_empty()) {
        for (set, x) in crossings.iter().filter(|(set, _)| !set.is_empty()) {
            if let Some(c) = x {
                let marked = if base.method == CrossingMethod::Interpolated {
                    tag(c)
                } else {
                    tag(base)
                };
                let _ = writeln!(
                    s,
                    "side-information gap S={set} vs S=0: {:.3} dB{marked}",
                    base.snr_db - c.snr_db
                );
            }
        }
    }
    s
}

fn cmd_ber(a: &BerArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let def = load(&a.modulation.modfile)?;
    let c = def.modulation.constellation();
    let plan = SimPlan {
        snr_db: parse_snr_grid(&a.snr)?,
        receivers: sets_or_all(&a.sets, c.messages())?,
        stopping: StoppingRule {
            min_errors: a.min_errors,
            max_bits: a.max_bits,
        },
        seed: a.seed,
        scheme: a.scheme,
    };
    let points = match a.scheme {
        Scheme::Uncoded => run_uncoded_ber(&c, &plan)?,
        Scheme::Bicm => {
            let code = match &def.code_generators {
                Some(g) => TrellisCode::feedforward(g)?,
                None => TrellisCode::rate_two_thirds(),
            };
            let cfg = BicmConfig {
                code,
                info_bits: a.info_bits,
                iterations: a.iters,
                labeling: a.labeling,
            };
            run_bicm_ber(&c, &cfg, &plan)?
        }
    };
    let csv = render_csv(&points);
    let summary = ber_summary(&points, a.scheme, &plan.receivers);
    match &a.out {
        Some(path) => {
            write_file(path, &csv)?;
            emit(out, &summary)
        }
        None => {
            emit(out, &csv)?;
            let _ = err.write_all(summary.as_bytes());
            Ok(EXIT_OK)
        }
    }
}
