//! Reproducible BER simulation.
//!
//! Trials are cut into chunks; chunk `j` of SNR point `p` draws from stream
//! `(seed, p, j)`. Chunks are evaluated a wave at a time and folded in chunk
//! order, and the stopping rule is checked after every chunk, so the
//! counts do not depend on how many threads evaluated the wave. All
//! receivers at one SNR see the same messages and noise.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::bicm::{
    bicm_receive, bits_per_symbol, BicmFrame, Interleaver, Labeling, DEFAULT_ITERATIONS,
};
use crate::channel::{nearest, AwgnChannel};
use crate::error::{domain, Error, Result};
use crate::fec::TrellisCode;
use crate::modulation::{Constellation, SideInfoSet};
use crate::rng::{stream, Domain};

pub const DEFAULT_MIN_ERRORS: u64 = 200;
pub const DEFAULT_MAX_BITS: u64 = 200_000_000;
/// Channel uses per chunk of the uncoded simulation.
pub const UNCODED_CHUNK: u64 = 1 << 16;
/// Information bits per stream per BICM frame.
pub const BICM_INFO_BITS: usize = 3996;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Uncoded,
    Bicm,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Uncoded => "uncoded",
            Scheme::Bicm => "bicm",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uncoded" => Ok(Scheme::Uncoded),
            "bicm" => Ok(Scheme::Bicm),
            other => Err(Error::Parse(format!(
                "unknown scheme '{other}' (expected uncoded or bicm)"
            ))),
        }
    }
}

/// Stop a point once `min_errors` bit errors are seen or `max_bits` bits
/// are simulated, whichever comes first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StoppingRule {
    pub min_errors: u64,
    pub max_bits: u64,
}

impl Default for StoppingRule {
    fn default() -> Self {
        Self {
            min_errors: DEFAULT_MIN_ERRORS,
            max_bits: DEFAULT_MAX_BITS,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimPlan {
    pub snr_db: Vec<f64>,
    pub receivers: Vec<SideInfoSet>,
    pub stopping: StoppingRule,
    pub seed: u64,
    pub scheme: Scheme,
}

impl SimPlan {
    pub fn validate(&self, k: usize) -> Result<()> {
        if self.snr_db.is_empty() {
            return domain("SNR grid is empty");
        }
        if self.snr_db.iter().any(|s| !s.is_finite()) {
            return domain("SNR grid has a non-finite value");
        }
        if self.snr_db.windows(2).any(|w| w[1] <= w[0]) {
            return domain("SNR grid must be strictly increasing");
        }
        if self.receivers.is_empty() {
            return domain("no receivers given");
        }
        for s in &self.receivers {
            s.check_proper(k)?;
        }
        if self.stopping.min_errors < 1 {
            return domain("min_errors must be at least 1");
        }
        if self.stopping.max_bits < 1 {
            return domain("max_bits must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BerPoint {
    pub scheme: Scheme,
    pub snr_db: f64,
    pub side_info: SideInfoSet,
    pub bit_errors: u64,
    pub bits_simulated: u64,
}

impl BerPoint {
    pub fn ber(&self) -> f64 {
        self.bit_errors as f64 / self.bits_simulated as f64
    }
}

/// Accumulates chunk results in order until the stopping rule fires.
/// `unit_bits` is the number of counted bits per trial unit, `units_per_chunk`
/// the trial units per chunk; `chunk(j, units)` returns the bit errors of
/// chunk `j` holding `units` units.
fn run_chunks<F>(rule: StoppingRule, unit_bits: u64, units_per_chunk: u64, chunk: F) -> (u64, u64)
where
    F: Fn(u64, u64) -> u64 + Sync,
{
    let max_units = rule.max_bits.div_ceil(unit_bits);
    let max_chunks = max_units.div_ceil(units_per_chunk);
    let size = |j: u64| units_per_chunk.min(max_units - j * units_per_chunk);
    let wave = rayon::current_num_threads().max(1) as u64;
    let (mut errors, mut bits) = (0u64, 0u64);
    let mut next = 0u64;
    while next < max_chunks {
        let end = (next + wave).min(max_chunks);
        let results: Vec<u64> = (next..end)
            .into_par_iter()
            .map(|j| chunk(j, size(j)))
            .collect();
        for (j, e) in (next..end).zip(results) {
            errors += e;
            bits += size(j) * unit_bits;
            if errors >= rule.min_errors {
                return (errors, bits);
            }
        }
        next = end;
    }
    (errors, bits)
}

/// Uncoded transmission with ML detection on the expurgated subcode.
/// Bit errors are counted on the natural-binary labels of the streams the
/// receiver does not know.
pub fn run_uncoded_ber(c: &Constellation, plan: &SimPlan) -> Result<Vec<BerPoint>> {
    plan.validate(c.messages())?;
    let m = bits_per_symbol(c.modulus())? as u64;
    let mut points = Vec::new();
    for (p, &snr) in plan.snr_db.iter().enumerate() {
        let chan = AwgnChannel::for_snr(c, snr)?;
        for &s in &plan.receivers {
            let partition = c.subcode_partition(s);
            let unknown: Vec<usize> = s.unknown_streams(c.messages()).collect();
            let unit_bits = unknown.len() as u64 * m;
            let (errors, bits) = run_chunks(plan.stopping, unit_bits, UNCODED_CHUNK, |j, units| {
                let mut rng = stream(plan.seed, Domain::UncodedBer, p as u64, j);
                let mut y = vec![0.0; c.dims()];
                let mut errors = 0u64;
                for _ in 0..units {
                    let i = rng.random_range(0..c.len());
                    chan.transmit_index(c, i, &mut rng, &mut y);
                    let decided = nearest(c, &y, &partition[c.assignment_rank(i, s)]);
                    errors += unknown
                        .iter()
                        .map(|&st| (c.symbol(i, st) ^ c.symbol(decided, st)).count_ones() as u64)
                        .sum::<u64>();
                }
                errors
            });
            points.push(BerPoint {
                scheme: Scheme::Uncoded,
                snr_db: snr,
                side_info: s,
                bit_errors: errors,
                bits_simulated: bits,
            });
        }
    }
    Ok(points)
}

/// Outer code and receiver settings for the BICM scheme.
#[derive(Clone, Debug)]
pub struct BicmConfig {
    pub code: TrellisCode,
    pub info_bits: usize,
    pub iterations: usize,
    pub labeling: Labeling,
}

impl Default for BicmConfig {
    fn default() -> Self {
        Self {
            code: TrellisCode::rate_two_thirds(),
            info_bits: BICM_INFO_BITS,
            iterations: DEFAULT_ITERATIONS,
            labeling: Labeling::Natural,
        }
    }
}

/// BICM frames of `cfg.info_bits` per stream with iterative reception.
/// One chunk is one frame; bit errors are counted on the information bits
/// of the streams the receiver does not know.
pub fn run_bicm_ber(c: &Constellation, cfg: &BicmConfig, plan: &SimPlan) -> Result<Vec<BerPoint>> {
    plan.validate(c.messages())?;
    let k = c.messages();
    let coded_len = cfg.code.coded_len(cfg.info_bits)?;
    let m = bits_per_symbol(c.modulus())?;
    if coded_len % m != 0 {
        return domain(format!(
            "{coded_len} coded bits do not fill {m}-bit symbols"
        ));
    }
    let interleavers: Vec<Interleaver> = (0..k)
        .map(|st| Interleaver::for_stream(coded_len, plan.seed, st))
        .collect();

    let mut points = Vec::new();
    for (p, &snr) in plan.snr_db.iter().enumerate() {
        let chan = AwgnChannel::for_snr(c, snr)?;
        for &s in &plan.receivers {
            let unit_bits = ((k - s.len()) * cfg.info_bits) as u64;
            let frame_errors = |j: u64| -> Result<u64> {
                let mut rng = stream(plan.seed, Domain::BicmBer, p as u64, j);
                let info: Vec<Vec<u8>> = (0..k)
                    .map(|_| {
                        (0..cfg.info_bits)
                            .map(|_| rng.random_range(0..2u8))
                            .collect()
                    })
                    .collect();
                let frame =
                    BicmFrame::encode(c.modulus(), &cfg.code, cfg.labeling, &interleavers, info)?;
                let mut ys = vec![0.0; frame.symbol_count() * c.dims()];
                for (t, i) in frame.point_indices(c)?.into_iter().enumerate() {
                    chan.transmit_index(c, i, &mut rng, &mut ys[t * c.dims()..(t + 1) * c.dims()]);
                }
                let known: Vec<Vec<u8>> = s.streams().map(|st| frame.info[st].clone()).collect();
                let decoded = bicm_receive(
                    c,
                    &cfg.code,
                    cfg.labeling,
                    &interleavers,
                    &ys,
                    s,
                    &known,
                    &chan,
                    cfg.iterations,
                )?;
                Ok(s.unknown_streams(k)
                    .zip(&decoded)
                    .map(|(st, d)| {
                        frame.info[st].iter().zip(d).filter(|(a, b)| a != b).count() as u64
                    })
                    .sum())
            };
            // shapes are validated above, so a frame cannot fail
            let (errors, bits) = run_chunks(plan.stopping, unit_bits, 1, |j, _| {
                frame_errors(j).expect("frame shapes are consistent")
            });
            points.push(BerPoint {
                scheme: Scheme::Bicm,
                snr_db: snr,
                side_info: s,
                bit_errors: errors,
                bits_simulated: bits,
            });
        }
    }
    Ok(points)
}

/// Symbol error count of ML detection with side information `s` over
/// `trials` uniform channel uses.
pub fn run_symbol_errors(
    c: &Constellation,
    s: SideInfoSet,
    snr_db: f64,
    trials: u64,
    seed: u64,
) -> Result<u64> {
    s.check_proper(c.messages())?;
    let chan = AwgnChannel::for_snr(c, snr_db)?;
    let partition = c.subcode_partition(s);
    let rule = StoppingRule {
        min_errors: u64::MAX,
        max_bits: trials,
    };
    Ok(run_chunks(rule, 1, UNCODED_CHUNK, |j, units| {
        let mut rng = stream(seed, Domain::SymbolErrors, 0, j);
        let mut y = vec![0.0; c.dims()];
        let mut errors = 0;
        for _ in 0..units {
            let i = rng.random_range(0..c.len());
            chan.transmit_index(c, i, &mut rng, &mut y);
            if nearest(c, &y, &partition[c.assignment_rank(i, s)]) != i {
                errors += 1;
            }
        }
        errors
    })
    .0)
}

/// Nonzero-error points of one curve, ascending in SNR, as `(snr, ber)`.
fn measured_curve(points: &[BerPoint], scheme: Scheme, s: SideInfoSet) -> Vec<(f64, f64)> {
    let mut curve: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.scheme == scheme && p.side_info == s && p.bit_errors > 0)
        .map(|p| (p.snr_db, p.ber()))
        .collect();
    curve.sort_by(|a, b| a.0.total_cmp(&b.0));
    curve
}

fn log_linear(a: (f64, f64), b: (f64, f64), target: f64) -> f64 {
    let (l0, l1) = (a.1.log10(), b.1.log10());
    a.0 + (target.log10() - l0) * (b.0 - a.0) / (l1 - l0)
}

/// SNR at which the BER curve of receiver `s` crosses `target`, by linear
/// interpolation of `log10(BER)` between the adjacent points bracketing it.
/// Points with zero errors are skipped.
pub fn ber_crossing(
    points: &[BerPoint],
    scheme: Scheme,
    s: SideInfoSet,
    target: f64,
) -> Option<f64> {
    measured_curve(points, scheme, s)
        .windows(2)
        .find_map(|w| (w[0].1 >= target && w[1].1 < target).then(|| log_linear(w[0], w[1], target)))
}

/// How a [`Crossing`] was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrossingMethod {
    /// Between two measured points on either side of the target.
    Interpolated,
    /// Beyond the last two measured points, all above the target.
    Extrapolated,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Crossing {
    pub snr_db: f64,
    pub method: CrossingMethod,
}

/// [`ber_crossing`], falling back to log-linear extrapolation through the
/// last two measured points when every measured BER is still above
/// `target` and those points are decreasing. Steep waterfalls whose errors
/// arrive in whole-frame bursts cannot be measured below the target in
/// practical run times, which is when the fallback applies.
pub fn ber_crossing_estimate(
    points: &[BerPoint],
    scheme: Scheme,
    s: SideInfoSet,
    target: f64,
) -> Option<Crossing> {
    if let Some(snr_db) = ber_crossing(points, scheme, s, target) {
        return Some(Crossing {
            snr_db,
            method: CrossingMethod::Interpolated,
        });
    }
    let curve = measured_curve(points, scheme, s);
    let [.., a, b] = curve[..] else {
        return None;
    };
    (curve.iter().all(|p| p.1 >= target) && b.1 < a.1).then(|| Crossing {
        snr_db: log_linear(a, b, target),
        method: CrossingMethod::Extrapolated,
    })
}

pub const BER_CSV_HEADER: &str = "scheme,snr_db,s_set,bit_errors,bits,ber";

pub fn render_csv(points: &[BerPoint]) -> String {
    let mut out = String::with_capacity(48 * (points.len() + 1));
    out.push_str(BER_CSV_HEADER);
    out.push('\n');
    for p in points {
        let _ = writeln!(
            out,
            "{},{:.6},{},{},{},{:.6e}",
            p.scheme,
            p.snr_db,
            p.side_info,
            p.bit_errors,
            p.bits_simulated,
            p.ber()
        );
    }
    out
}

/// Writes the BER table to `path`.
pub fn emit_csv(points: &[BerPoint], path: &Path) -> Result<()> {
    if points.is_empty() {
        return domain("no BER points to write");
    }
    std::fs::write(path, render_csv(points)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modulation::IndexModulation;

    fn qam16() -> Constellation {
        IndexModulation::new(4, &[vec![1, 2], vec![2, 1]])
            .unwrap()
            .constellation()
    }

    fn set(m: &[usize]) -> SideInfoSet {
        SideInfoSet::of(m).unwrap()
    }

    fn plan(snr: Vec<f64>, receivers: Vec<SideInfoSet>, min_errors: u64, max_bits: u64) -> SimPlan {
        SimPlan {
            snr_db: snr,
            receivers,
            stopping: StoppingRule {
                min_errors,
                max_bits,
            },
            seed: 42,
            scheme: Scheme::Uncoded,
        }
    }

    #[test]
    fn csv_row_format() {
        let p = BerPoint {
            scheme: Scheme::Uncoded,
            snr_db: 10.0,
            side_info: SideInfoSet::EMPTY,
            bit_errors: 123,
            bits_simulated: 1_000_000,
        };
        let csv = render_csv(&[
            p.clone(),
            BerPoint {
                side_info: set(&[1, 2]),
                ..p
            },
        ]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], BER_CSV_HEADER);
        assert_eq!(lines[1], "uncoded,10.000000,0,123,1000000,1.230000e-4");
        assert!(lines[2].starts_with("uncoded,10.000000,1+2,"));
        assert!(emit_csv(&[], Path::new("/nonexistent/x.csv")).is_err());
    }

    #[test]
    fn plan_validation() {
        let k = 2;
        assert!(plan(vec![1.0, 2.0], vec![SideInfoSet::EMPTY], 1, 10)
            .validate(k)
            .is_ok());
        assert!(plan(vec![2.0, 1.0], vec![SideInfoSet::EMPTY], 1, 10)
            .validate(k)
            .is_err());
        assert!(plan(vec![], vec![SideInfoSet::EMPTY], 1, 10)
            .validate(k)
            .is_err());
        assert!(plan(vec![1.0], vec![SideInfoSet::EMPTY], 0, 10)
            .validate(k)
            .is_err());
        assert!(plan(vec![1.0], vec![set(&[1, 2])], 1, 10)
            .validate(k)
            .is_err());
        assert!(plan(vec![1.0], vec![], 1, 10).validate(k).is_err());
    }

    #[test]
    fn stopping_rule_holds() {
        let pts = run_uncoded_ber(
            &qam16(),
            &plan(
                vec![6.0, 14.0],
                vec![SideInfoSet::EMPTY, set(&[1])],
                500,
                400_000,
            ),
        )
        .unwrap();
        for p in &pts {
            assert!(p.bit_errors >= 500 || p.bits_simulated >= 400_000, "{p:?}");
            assert!(p.bits_simulated > 0);
        }
        // 400_000 is a multiple of 2 and 4 bits per channel use
        let capped = pts
            .iter()
            .find(|p| p.bit_errors < 500)
            .expect("14 dB with S={1} runs to the cap");
        assert_eq!(capped.bits_simulated, 400_000);
    }

    #[test]
    fn very_high_snr_is_error_free() {
        let pts = run_uncoded_ber(
            &qam16(),
            &plan(vec![60.0], vec![SideInfoSet::EMPTY], 1, 1_000_000),
        )
        .unwrap();
        assert_eq!(pts[0].bit_errors, 0);
        assert_eq!(pts[0].bits_simulated, 1_000_000);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let p = plan(
            vec![8.0, 10.0],
            vec![SideInfoSet::EMPTY, set(&[2])],
            300,
            2_000_000,
        );
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_uncoded_ber(&qam16(), &p).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn crossing_interpolates_in_log_domain() {
        let mk = |snr: f64, errors: u64| BerPoint {
            scheme: Scheme::Uncoded,
            snr_db: snr,
            side_info: SideInfoSet::EMPTY,
            bit_errors: errors,
            bits_simulated: 1_000_000,
        };
        // 1e-3 at 10 dB, 1e-5 at 12 dB: 1e-4 sits at 11 dB
        let pts = [mk(10.0, 1000), mk(12.0, 10), mk(14.0, 0)];
        let x = ber_crossing(&pts, Scheme::Uncoded, SideInfoSet::EMPTY, 1e-4).unwrap();
        assert!((x - 11.0).abs() < 1e-12);
        assert!(ber_crossing(&pts, Scheme::Uncoded, SideInfoSet::EMPTY, 1e-7).is_none());
        assert!(ber_crossing(&pts, Scheme::Bicm, SideInfoSet::EMPTY, 1e-4).is_none());

        let interp =
            ber_crossing_estimate(&pts, Scheme::Uncoded, SideInfoSet::EMPTY, 1e-4).unwrap();
        assert_eq!(
            interp,
            Crossing {
                snr_db: x,
                method: CrossingMethod::Interpolated
            }
        );
        let extra = ber_crossing_estimate(&pts, Scheme::Uncoded, SideInfoSet::EMPTY, 1e-7).unwrap();
        assert_eq!(extra.method, CrossingMethod::Extrapolated);
        // the same two decades per 2 dB continue to 1e-7 at 14 dB
        assert!((extra.snr_db - 14.0).abs() < 1e-12);
        assert!(
            ber_crossing_estimate(&pts[..1], Scheme::Uncoded, SideInfoSet::EMPTY, 1e-7).is_none()
        );
    }

    #[test]
    fn scheme_names() {
        assert_eq!("bicm".parse::<Scheme>().unwrap(), Scheme::Bicm);
        assert_eq!(Scheme::Uncoded.to_string(), "uncoded");
        assert!("turbo".parse::<Scheme>().is_err());
    }
}
