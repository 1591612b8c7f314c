//! Achievable rates of coded index modulation.
//!
//! Two views of the same region live here. The Gaussian-input limit is a
//! closed form in the side-information rate of each receiver. The rates
//! actually available from a given constellation with uniform inputs are
//! conditional mutual informations `(1/n)·I(X_{S^c}; Y | X_S)`, which are
//! estimated by Monte Carlo.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::channel::{db, noise_var_for, ReceiverSpec};
use crate::error::{domain, Error, Result};
use crate::modulation::{Constellation, SideInfoSet};
use crate::rng::{stream, Domain};

/// Samples per Monte-Carlo chunk; each chunk owns one random stream.
pub const MI_CHUNK: usize = 1 << 14;
pub const MIN_MI_SAMPLES: usize = 10_000;
pub const DEFAULT_MI_SAMPLES: usize = 2_000_000;
pub const DEFAULT_TOL_DB: f64 = 0.05;
pub const SNR_BRACKET_DB: (f64, f64) = (-10.0, 50.0);
/// Constraints pass when the required rate is within this many standard
/// errors of the estimate.
pub const MC_SIGMAS: f64 = 3.0;

/// Monte-Carlo estimate in b/dim.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MiEstimate {
    pub value: f64,
    pub std_err: f64,
    pub samples: usize,
}

/// Per-message rates in b/dim.
#[derive(Clone, Debug, PartialEq)]
pub struct RateTuple(Vec<f64>);

impl RateTuple {
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        if rates.is_empty() {
            return domain("rate tuple is empty");
        }
        if let Some(r) = rates.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
            return domain(format!("rate {r} is not a finite non-negative number"));
        }
        Ok(Self(rates))
    }

    pub fn rates(&self) -> &[f64] {
        &self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    /// `R_S`.
    pub fn side_rate(&self, s: SideInfoSet) -> f64 {
        s.streams().filter_map(|i| self.0.get(i)).sum()
    }

    /// Rate the receiver with side information `s` must decode, `R − R_S`.
    pub fn demanded_rate(&self, s: SideInfoSet) -> f64 {
        self.sum() - self.side_rate(s)
    }
}

/// `½·log2(1 + SNR)` in b/dim.
pub fn gaussian_rate(snr_db: f64) -> f64 {
    0.5 * (1.0 + 10f64.powf(snr_db / 10.0)).log2()
}

/// Smallest per-dimension SNR (dB) at which a Gaussian-input receiver can
/// decode `rate` b/dim of new information; `-inf` for non-positive rates.
pub fn gaussian_threshold_db(rate: f64) -> f64 {
    if rate <= 0.0 {
        f64::NEG_INFINITY
    } else {
        db((2.0 * rate).exp2() - 1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Feasibility {
    pub feasible: bool,
    /// `snr_db − threshold` per receiver; `+inf` when nothing new is demanded.
    pub margins_db: Vec<f64>,
}

/// Checks the Gaussian-input broadcast condition `½·log2(1+SNR) > R − R_S`
/// at every receiver.
pub fn tuncel_feasible(rates: &RateTuple, receivers: &[ReceiverSpec]) -> Result<Feasibility> {
    if receivers.is_empty() {
        return domain("no receivers given");
    }
    let k = rates.rates().len();
    let mut margins = Vec::with_capacity(receivers.len());
    for rx in receivers {
        rx.side_info.check_proper(k)?;
        margins.push(rx.snr_db - gaussian_threshold_db(rates.demanded_rate(rx.side_info)));
    }
    Ok(Feasibility {
        feasible: margins.iter().all(|&m| m > 0.0),
        margins_db: margins,
    })
}

#[derive(Clone, Copy, Default)]
struct Moments {
    sum: f64,
    sum_sq: f64,
    count: usize,
}

/// `(1/n)·I(X_{S^c}; Y | X_S)` for uniform inputs at `snr_db`.
///
/// Samples are drawn in chunks of [`MI_CHUNK`], chunk `j` from stream
/// `(seed, j)`, and chunk sums are combined in chunk order, so the result
/// does not depend on the thread count. The noise is drawn at unit variance
/// and scaled, so for a fixed seed the estimate is a smooth function of SNR.
pub fn estimate_mi(
    c: &Constellation,
    s: SideInfoSet,
    snr_db: f64,
    samples: usize,
    seed: u64,
) -> Result<MiEstimate> {
    if samples < MIN_MI_SAMPLES {
        return domain(format!(
            "{samples} samples is below the minimum of {MIN_MI_SAMPLES}"
        ));
    }
    s.check_proper(c.messages())?;
    let sigma2 = noise_var_for(snr_db, c.avg_energy_per_dim())?;
    let kernel = MiKernel::new(c, s, sigma2);

    let chunks = samples.div_ceil(MI_CHUNK);
    let partials: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|j| {
            let len = MI_CHUNK.min(samples - j * MI_CHUNK);
            kernel.run(
                len,
                &mut stream(seed, Domain::MutualInformation, 0, j as u64),
            )
        })
        .collect();

    let total = partials.iter().fold(Moments::default(), |acc, m| Moments {
        sum: acc.sum + m.sum,
        sum_sq: acc.sum_sq + m.sum_sq,
        count: acc.count + m.count,
    });
    let nf = total.count as f64;
    let mean = total.sum / nf;
    let var = ((total.sum_sq / nf - mean * mean) * nf / (nf - 1.0)).max(0.0);
    Ok(MiEstimate {
        value: mean,
        std_err: (var / nf).sqrt(),
        samples: total.count,
    })
}

/// Precomputed subcode layout for one `(constellation, S, σ²)`.
struct MiKernel<'a> {
    c: &'a Constellation,
    dims: usize,
    /// For each point, the subcode it belongs to.
    group_of: Vec<usize>,
    /// Flat coordinates of each subcode's points.
    group_points: Vec<Vec<f64>>,
    inv_two_sigma2: f64,
    sigma: f64,
    /// `ln |subcode|`, identical across subcodes.
    ln_group: f64,
    /// Converts nats per channel use into bits per dimension.
    to_bits_per_dim: f64,
}

impl<'a> MiKernel<'a> {
    fn new(c: &'a Constellation, s: SideInfoSet, sigma2: f64) -> Self {
        let partition = c.subcode_partition(s);
        let mut group_of = vec![0; c.len()];
        let group_points = partition
            .iter()
            .enumerate()
            .map(|(g, members)| {
                members
                    .iter()
                    .flat_map(|&i| {
                        group_of[i] = g;
                        c.point(i).iter().copied()
                    })
                    .collect()
            })
            .collect();
        Self {
            c,
            dims: c.dims(),
            group_of,
            group_points,
            inv_two_sigma2: 0.5 / sigma2,
            sigma: sigma2.sqrt(),
            ln_group: (partition[0].len() as f64).ln(),
            to_bits_per_dim: 1.0 / (std::f64::consts::LN_2 * c.dims() as f64),
        }
    }

    fn run<R: Rng>(&self, len: usize, rng: &mut R) -> Moments {
        let n = self.dims;
        let mut y = vec![0.0; n];
        let mut exps = Vec::new();
        let mut m = Moments::default();
        for _ in 0..len {
            let i = rng.random_range(0..self.c.len());
            let mut noise_sq = 0.0;
            for (yd, &x) in y.iter_mut().zip(self.c.point(i)) {
                let w: f64 = rng.sample(StandardNormal);
                noise_sq += w * w;
                *yd = x + self.sigma * w;
            }
            let pts = &self.group_points[self.group_of[i]];
            exps.clear();
            let mut max = f64::NEG_INFINITY;
            for p in pts.chunks_exact(n) {
                let d: f64 = y.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
                let e = -d * self.inv_two_sigma2;
                max = max.max(e);
                exps.push(e);
            }
            // terms below e^-50 of the maximum cannot move a 256-term sum
            let lse = max
                + exps
                    .iter()
                    .map(|&e| e - max)
                    .filter(|&t| t > -50.0)
                    .map(f64::exp)
                    .sum::<f64>()
                    .ln();
            let info = (-0.5 * noise_sq - lse + self.ln_group) * self.to_bits_per_dim;
            m.sum += info;
            m.sum_sq += info * info;
            m.count += 1;
        }
        m
    }
}

/// Entropy cap `(K − |S|)·log2(q)/n` on what a receiver can learn.
pub fn entropy_cap(c: &Constellation, s: SideInfoSet) -> f64 {
    (c.messages() - s.len()) as f64 * c.rate_per_message()
}

/// Smallest SNR (dB) at which the estimated `(1/n)·I(X_{S^c}; Y | X_S)`
/// reaches `target`, found by bisection to within `tol_db`.
///
/// Every evaluation uses the same seed, so bisection sees one fixed,
/// monotone curve.
pub fn min_snr_for_rate(
    c: &Constellation,
    s: SideInfoSet,
    target: f64,
    tol_db: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if !(tol_db > 0.0) {
        return domain(format!("tolerance {tol_db} dB must be positive"));
    }
    s.check_proper(c.messages())?;
    let cap = entropy_cap(c, s);
    if !(target < cap) {
        return Err(Error::Infeasible(format!(
            "target {target} b/dim is not below the entropy bound {cap} b/dim for S={s}"
        )));
    }
    let mi = |snr: f64| estimate_mi(c, s, snr, samples, seed).map(|e| e.value);

    let (mut lo, mut hi) = SNR_BRACKET_DB;
    if mi(hi)? < target {
        return Err(Error::Infeasible(format!(
            "target {target} b/dim is not reached for S={s} even at {hi} dB"
        )));
    }
    if mi(lo)? >= target {
        return Ok(lo);
    }
    while hi - lo > tol_db {
        let mid = 0.5 * (lo + hi);
        if mi(mid)? >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// One receiver's constraint in a region check.
#[derive(Clone, Debug)]
pub struct RegionConstraint {
    pub receiver: ReceiverSpec,
    /// `Σ_{k∈S^c} R_k`.
    pub required: f64,
    pub estimate: MiEstimate,
    pub satisfied: bool,
}

impl RegionConstraint {
    pub fn slack(&self) -> f64 {
        self.estimate.value - self.required
    }
}

#[derive(Clone, Debug)]
pub struct RegionReport {
    pub feasible: bool,
    pub constraints: Vec<RegionConstraint>,
    /// Index of the constraint with the least slack.
    pub binding: usize,
}

/// Checks `Σ_{k∈S^c} R_k ≤ (1/n)·I(X_{S^c}; Y_S | X_S)` for every listed
/// receiver. A constraint passes when the required rate does not exceed the
/// estimate by more than [`MC_SIGMAS`] standard errors.
pub fn region_feasible(
    rates: &RateTuple,
    c: &Constellation,
    receivers: &[ReceiverSpec],
    samples: usize,
    seed: u64,
) -> Result<RegionReport> {
    if receivers.is_empty() {
        return domain("no receivers given");
    }
    if rates.rates().len() != c.messages() {
        return domain(format!(
            "{} rates given for {} messages",
            rates.rates().len(),
            c.messages()
        ));
    }
    for (i, a) in receivers.iter().enumerate() {
        if receivers[..i].iter().any(|b| b.side_info == a.side_info) {
            return domain(format!("side-information set {} listed twice", a.side_info));
        }
    }
    let mut constraints = Vec::with_capacity(receivers.len());
    for rx in receivers {
        let required = rates.demanded_rate(rx.side_info);
        let estimate = estimate_mi(c, rx.side_info, rx.snr_db, samples, seed)?;
        let satisfied = required <= entropy_cap(c, rx.side_info)
            && required <= estimate.value + MC_SIGMAS * estimate.std_err;
        constraints.push(RegionConstraint {
            receiver: *rx,
            required,
            estimate,
            satisfied,
        });
    }
    let binding = constraints
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.slack().total_cmp(&b.1.slack()))
        .map(|(i, _)| i)
        .expect("non-empty");
    Ok(RegionReport {
        feasible: constraints.iter().all(|c| c.satisfied),
        constraints,
        binding,
    })
}

/// Fano lower bound on `I(X_{S^c}; Y_S | X_S)` in bits per `n` dimensions:
/// `(1 − pe)·alphabet_bits − 1`, where `alphabet_bits = log2 Π_{k∈S^c}|X_k|`
/// and `pe` is the error probability of the optimal decoder.
pub fn fano_lower_bound(pe: f64, alphabet_bits: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&pe) {
        return domain(format!("error probability {pe} is outside [0, 1]"));
    }
    Ok((1.0 - pe) * alphabet_bits - 1.0)
}

/// One row of an MI sweep.
#[derive(Clone, Debug)]
pub struct MiRow {
    pub snr_db: f64,
    pub set: SideInfoSet,
    pub estimate: MiEstimate,
}

pub const MI_CSV_HEADER: &str = "snr_db,s_set,mi_bpdim,std_err,samples,gaussian_bpdim";

/// Renders an MI sweep. The trailing column is `½·log2(1+SNR)`.
pub fn render_mi_csv(rows: &[MiRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(MI_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{:.6},{},{:.6},{:.6e},{},{:.6}",
            r.snr_db,
            r.set,
            r.estimate.value,
            r.estimate.std_err,
            r.estimate.samples,
            gaussian_rate(r.snr_db)
        );
    }
    out
}

pub fn write_mi_csv(rows: &[MiRow], path: &Path) -> Result<()> {
    std::fs::write(path, render_mi_csv(rows)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modulation::IndexModulation;

    fn qam64() -> Constellation {
        IndexModulation::new(8, &[vec![1, 2], vec![2, 1]])
            .unwrap()
            .constellation()
    }

    fn set(m: &[usize]) -> SideInfoSet {
        SideInfoSet::of(m).unwrap()
    }

    fn rx(snr: f64, s: SideInfoSet) -> ReceiverSpec {
        ReceiverSpec::new(snr, s).unwrap()
    }

    #[test]
    fn gaussian_thresholds() {
        let rates = RateTuple::new(vec![1.0, 1.0]).unwrap();
        assert!(
            (gaussian_threshold_db(rates.demanded_rate(SideInfoSet::EMPTY)) - 11.7609).abs() < 1e-4
        );
        assert!((gaussian_threshold_db(rates.demanded_rate(set(&[1]))) - 4.7712).abs() < 1e-4);
        assert_eq!(gaussian_threshold_db(0.0), f64::NEG_INFINITY);
        assert!((gaussian_rate(gaussian_threshold_db(1.3)) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn tuncel_boundary() {
        let rates = RateTuple::new(vec![1.0, 1.0]).unwrap();
        let at = |d: f64| {
            vec![
                rx(11.77 + d, SideInfoSet::EMPTY),
                rx(4.77 + d, set(&[1])),
                rx(4.77 + d, set(&[2])),
            ]
        };
        let f = tuncel_feasible(&rates, &at(0.0)).unwrap();
        assert!(!f.feasible);
        assert!(f.margins_db[1] < 0.0 && f.margins_db[2] < 0.0);
        assert!(tuncel_feasible(&rates, &at(0.05)).unwrap().feasible);

        let zero = RateTuple::new(vec![0.0, 0.0]).unwrap();
        let f = tuncel_feasible(&zero, &[rx(-40.0, SideInfoSet::EMPTY)]).unwrap();
        assert!(f.feasible);
        assert_eq!(f.margins_db[0], f64::INFINITY);

        let lopsided = RateTuple::new(vec![2.0, 0.0]).unwrap();
        assert!(
            tuncel_feasible(&lopsided, &[rx(-40.0, set(&[1]))])
                .unwrap()
                .feasible
        );
        assert!(tuncel_feasible(&rates, &[]).is_err());
        assert!(tuncel_feasible(&rates, &[rx(3.0, set(&[1, 2]))]).is_err());
    }

    #[test]
    fn rate_tuple_validation() {
        assert!(RateTuple::new(vec![]).is_err());
        assert!(RateTuple::new(vec![1.0, -0.1]).is_err());
        assert!(RateTuple::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn mi_saturates_at_high_snr() {
        let e = estimate_mi(&qam64(), SideInfoSet::EMPTY, 40.0, 20_000, 1).unwrap();
        assert!((e.value - 3.0).abs() < 0.01, "{e:?}");
        let e = estimate_mi(&qam64(), set(&[1]), 40.0, 20_000, 1).unwrap();
        assert!((e.value - 1.5).abs() < 0.01, "{e:?}");
    }

    #[test]
    fn mi_rejects_bad_inputs() {
        let c = qam64();
        assert!(estimate_mi(&c, SideInfoSet::EMPTY, 10.0, 9_999, 1).is_err());
        assert!(estimate_mi(&c, set(&[1, 2]), 10.0, 20_000, 1).is_err());
        assert!(estimate_mi(&c, set(&[3]), 10.0, 20_000, 1).is_err());
    }

    #[test]
    fn mi_is_deterministic_and_bounded() {
        let c = qam64();
        let a = estimate_mi(&c, SideInfoSet::EMPTY, 8.0, 50_000, 3).unwrap();
        let b = estimate_mi(&c, SideInfoSet::EMPTY, 8.0, 50_000, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples, 50_000);
        assert!(a.value >= 0.0);
        assert!(a.value <= gaussian_rate(8.0) + 3.0 * a.std_err);
    }

    #[test]
    fn min_snr_errors() {
        let c = qam64();
        assert!(matches!(
            min_snr_for_rate(&c, set(&[1]), 1.5, 0.05, 20_000, 1),
            Err(Error::Infeasible(_))
        ));
        assert!(min_snr_for_rate(&c, set(&[1]), 1.0, 0.0, 20_000, 1).is_err());
    }

    #[test]
    fn region_checks() {
        let c = qam64();
        let zero = RateTuple::new(vec![0.0, 0.0]).unwrap();
        let r = region_feasible(&zero, &c, &[rx(0.0, SideInfoSet::EMPTY)], 20_000, 1).unwrap();
        assert!(r.feasible);

        let big = RateTuple::new(vec![2.0, 2.0]).unwrap();
        let r = region_feasible(&big, &c, &[rx(60.0, SideInfoSet::EMPTY)], 20_000, 1).unwrap();
        assert!(!r.feasible);

        let rates = RateTuple::new(vec![1.0, 1.0]).unwrap();
        let dup = [rx(5.0, set(&[1])), rx(6.0, set(&[1]))];
        assert!(region_feasible(&rates, &c, &dup, 20_000, 1).is_err());
    }

    #[test]
    fn fano_examples() {
        assert_eq!(fano_lower_bound(0.0, 6.0).unwrap() / 2.0, 2.5);
        assert_eq!(fano_lower_bound(1.0, 6.0).unwrap(), -1.0);
        assert!(fano_lower_bound(1.5, 6.0).is_err());
    }

    #[test]
    fn mi_csv_format() {
        let rows = [MiRow {
            snr_db: 12.62,
            set: set(&[2]),
            estimate: MiEstimate {
                value: 2.0,
                std_err: 0.0015,
                samples: 2_000_000,
            },
        }];
        let csv = render_mi_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(MI_CSV_HEADER));
        let row = lines.next().unwrap();
        assert!(
            row.starts_with("12.620000,2,2.000000,1.500000e-3,2000000,"),
            "{row}"
        );
    }
}
