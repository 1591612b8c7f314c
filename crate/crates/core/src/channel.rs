//! AWGN broadcast channel and side-information-aware ML detection.
//!
//! SNR is measured per real dimension: the constellation's average energy
//! per dimension over the noise variance per dimension.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{domain, Result};
use crate::modulation::{Constellation, SideInfoSet};

/// One broadcast receiver: its SNR and the messages it already knows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReceiverSpec {
    pub snr_db: f64,
    pub side_info: SideInfoSet,
}

impl ReceiverSpec {
    pub fn new(snr_db: f64, side_info: SideInfoSet) -> Result<Self> {
        if !snr_db.is_finite() {
            return domain(format!("receiver SNR {snr_db} dB is not finite"));
        }
        Ok(Self { snr_db, side_info })
    }
}

/// Noise variance per dimension giving `snr_db` for a constellation with
/// the given average energy per dimension.
pub fn noise_var_for(snr_db: f64, avg_energy_per_dim: f64) -> Result<f64> {
    if !(avg_energy_per_dim > 0.0) || !avg_energy_per_dim.is_finite() {
        return domain(format!(
            "average energy per dimension must be positive, got {avg_energy_per_dim}"
        ));
    }
    if !snr_db.is_finite() {
        return domain(format!("SNR {snr_db} dB is not finite"));
    }
    Ok(avg_energy_per_dim * 10f64.powf(-snr_db / 10.0))
}

/// Per-dimension SNR in dB from a linear ratio.
pub fn db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

/// Linear ratio from dB.
pub fn undb(value_db: f64) -> f64 {
    10f64.powf(value_db / 10.0)
}

/// Real AWGN channel with i.i.d. noise of variance `σ²` per dimension.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AwgnChannel {
    noise_var: f64,
    std_dev: f64,
}

impl AwgnChannel {
    pub fn new(noise_var: f64) -> Result<Self> {
        if !(noise_var > 0.0) || !noise_var.is_finite() {
            return domain(format!("noise variance must be positive, got {noise_var}"));
        }
        Ok(Self {
            noise_var,
            std_dev: noise_var.sqrt(),
        })
    }

    /// Channel at `snr_db` relative to the energy of `c`.
    pub fn for_snr(c: &Constellation, snr_db: f64) -> Result<Self> {
        Self::new(noise_var_for(snr_db, c.avg_energy_per_dim())?)
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn std_dev(&self) -> f64 {
        self.std_dev
    }

    /// `point(u) + z`.
    pub fn transmit<R: Rng + ?Sized>(
        &self,
        c: &Constellation,
        u: &[u32],
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let index = c.index_of(u)?;
        let mut y = vec![0.0; c.dims()];
        self.transmit_index(c, index, rng, &mut y);
        Ok(y)
    }

    /// Writes `point(index) + z` into `out`.
    pub fn transmit_index<R: Rng + ?Sized>(
        &self,
        c: &Constellation,
        index: usize,
        rng: &mut R,
        out: &mut [f64],
    ) {
        for (o, &x) in out.iter_mut().zip(c.point(index)) {
            let z: f64 = rng.sample(StandardNormal);
            *o = x + self.std_dev * z;
        }
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the candidate nearest to `y`. Candidates must be ascending;
/// ties go to the earliest, which is the lexicographically smallest label.
pub fn nearest(c: &Constellation, y: &[f64], candidates: &[usize]) -> usize {
    let mut best = candidates[0];
    let mut best_d = f64::INFINITY;
    for &i in candidates {
        let d = sq_dist(y, c.point(i));
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// ML decision restricted to the subcode consistent with side information
/// `known` on `s`. Returns the decoded label.
pub fn ml_decode(c: &Constellation, y: &[f64], s: SideInfoSet, known: &[u32]) -> Result<Vec<u32>> {
    if y.len() != c.dims() {
        return domain(format!(
            "received vector has {} dims, expected {}",
            y.len(),
            c.dims()
        ));
    }
    let candidates = c.subcode_indices(s, known)?;
    if candidates.is_empty() {
        return domain(format!(
            "side information {s} = {known:?} selects no points"
        ));
    }
    Ok(c.label(nearest(c, y, &candidates)).to_vec())
}
