//! Bit-interleaved coded modulation over an index modulation.
//!
//! Every message stream is convolutionally encoded, interleaved, and cut
//! into `log2(q)`-bit groups that select its symbol of `Z_q` through a
//! [`Labeling`] (natural binary unless configured otherwise). The streams
//! are then jointly modulated by the index map. A receiver iterates
//! between one soft demapper, shared by all streams it does not know, and
//! one BCJR decoder per such stream. Streams it already knows are
//! re-encoded into exact symbol knowledge, which restricts the demapper to
//! the matching subcode.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::channel::AwgnChannel;
use crate::error::{domain, Error, Result};
use crate::fec::{bcjr_decode, clamp_llr, conv_encode, LlrFrame, LlrRole, TrellisCode};
use crate::modulation::{Constellation, SideInfoSet};
use crate::rng::{stream, Domain};

pub const DEFAULT_ITERATIONS: usize = 8;

/// Random spread permutation regenerable from `(seed, len)`: outputs
/// within [`Interleaver::spread`] positions of each other take inputs more
/// than that many positions apart, so the bits of one symbol, and of
/// neighbouring symbols, never come from nearby trellis steps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Interleaver {
    perm: Vec<usize>,
    seed: u64,
}

impl Interleaver {
    pub fn new(len: usize, seed: u64) -> Self {
        Self::for_stream(len, seed, 0)
    }

    /// Independent permutation for message stream `stream_index` under one
    /// seed.
    pub fn for_stream(len: usize, seed: u64, stream_index: usize) -> Self {
        let mut rng = stream(seed, Domain::Interleaver, len as u64, stream_index as u64);
        let mut spread = Self::target_spread(len);
        loop {
            for _ in 0..SPREAD_ATTEMPTS {
                if let Some(perm) = spread_permutation(len, spread, &mut rng) {
                    return Self { perm, seed };
                }
            }
            // the greedy draw keeps failing: relax the constraint
            spread -= 1;
        }
    }

    /// Spread targeted for a block of `len`: a third of the `sqrt(len/2)`
    /// limit of greedy construction, which a few draws reliably reach.
    pub fn target_spread(len: usize) -> usize {
        ((len as f64 / 2.0).sqrt() / 3.0) as usize
    }

    /// Largest `s` such that outputs at most `s` apart take inputs more than
    /// `s` apart.
    pub fn spread(&self) -> usize {
        let n = self.perm.len();
        (0..n)
            .take_while(|&s| {
                (0..n).all(|i| {
                    (i + 1..n.min(i + s + 1)).all(|j| self.perm[i].abs_diff(self.perm[j]) > s)
                })
            })
            .last()
            .unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Position `i` of the output takes input position `permutation()[i]`.
    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.perm.len() {
            return Err(Error::LengthMismatch {
                what: "interleaver input",
                expected: self.perm.len(),
                actual: len,
            });
        }
        Ok(())
    }

    pub fn interleave<T: Copy>(&self, x: &[T]) -> Result<Vec<T>> {
        self.check(x.len())?;
        Ok(self.perm.iter().map(|&p| x[p]).collect())
    }

    pub fn deinterleave<T: Copy + Default>(&self, x: &[T]) -> Result<Vec<T>> {
        self.check(x.len())?;
        let mut out = vec![T::default(); x.len()];
        for (&p, &v) in self.perm.iter().zip(x) {
            out[p] = v;
        }
        Ok(out)
    }
}

/// Fresh shuffles tried per spread value before relaxing it.
const SPREAD_ATTEMPTS: usize = 16;

/// Greedy spread construction: repeatedly take the first input, in a random
/// order, that is more than `s` away from the last `s` inputs taken.
fn spread_permutation(len: usize, s: usize, rng: &mut impl rand::Rng) -> Option<Vec<usize>> {
    let mut pool: Vec<usize> = (0..len).collect();
    pool.shuffle(rng);
    let mut perm: Vec<usize> = Vec::with_capacity(len);
    while !pool.is_empty() {
        let recent = &perm[perm.len().saturating_sub(s)..];
        let pos = pool
            .iter()
            .position(|&c| recent.iter().all(|&p| c.abs_diff(p) > s))?;
        perm.push(pool.remove(pos));
    }
    Some(perm)
}

/// `log2(q)`, which must be integral.
pub fn bits_per_symbol(q: u32) -> Result<usize> {
    if q < 2 || !q.is_power_of_two() {
        return domain(format!(
            "q={q} is not a power of two; bits do not map onto Z_q"
        ));
    }
    Ok(q.trailing_zeros() as usize)
}

/// Correspondence between `log2(q)`-bit labels (MSB first) and symbols of
/// `Z_q`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Labeling {
    /// Symbol `v` carries the binary expansion of `v`.
    #[default]
    Natural,
    /// Symbol `v` carries the reflected Gray code `v ^ (v >> 1)`, so
    /// consecutive symbols differ in one bit.
    Gray,
}

impl Labeling {
    /// Bit label carried by symbol `v`.
    pub fn label(self, v: u32) -> u32 {
        match self {
            Labeling::Natural => v,
            Labeling::Gray => v ^ (v >> 1),
        }
    }

    /// Symbol carrying bit label `l`.
    pub fn symbol(self, l: u32) -> u32 {
        match self {
            Labeling::Natural => l,
            Labeling::Gray => {
                let mut v = l;
                let mut shift = l >> 1;
                while shift != 0 {
                    v ^= shift;
                    shift >>= 1;
                }
                v
            }
        }
    }
}

impl fmt::Display for Labeling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Labeling::Natural => "natural",
            Labeling::Gray => "gray",
        })
    }
}

impl FromStr for Labeling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "natural" => Ok(Labeling::Natural),
            "gray" => Ok(Labeling::Gray),
            other => domain(format!(
                "unknown labeling '{other}' (expected natural or gray)"
            )),
        }
    }
}

/// MSB-first grouping of bits into labels, each mapped to its symbol of `Z_q`.
pub fn map_bits_to_symbols(bits: &[u8], q: u32, labeling: Labeling) -> Result<Vec<u32>> {
    let m = bits_per_symbol(q)?;
    if !bits.len().is_multiple_of(m) {
        return domain(format!(
            "{} bits do not split into {m}-bit symbols",
            bits.len()
        ));
    }
    Ok(bits
        .chunks_exact(m)
        .map(|g| labeling.symbol(g.iter().fold(0u32, |acc, &b| (acc << 1) | (b & 1) as u32)))
        .collect())
}

/// Inverse of [`map_bits_to_symbols`].
pub fn symbols_to_bits(symbols: &[u32], q: u32, labeling: Labeling) -> Result<Vec<u8>> {
    let m = bits_per_symbol(q)?;
    if let Some(&bad) = symbols.iter().find(|&&v| v >= q) {
        return domain(format!("symbol {bad} is outside Z_{q}"));
    }
    Ok(symbols
        .iter()
        .flat_map(|&v| {
            let l = labeling.label(v);
            (0..m).rev().map(move |j| ((l >> j) & 1) as u8)
        })
        .collect())
}

/// Streams a receiver decodes and the subcode layout it decodes within.
struct DemapLayout {
    unknown: Vec<usize>,
    bits: usize,
    q: usize,
    /// Bit label of every symbol value.
    labels: Vec<usize>,
}

impl DemapLayout {
    fn new(c: &Constellation, s: SideInfoSet, labeling: Labeling) -> Result<Self> {
        s.check_proper(c.messages())?;
        Ok(Self {
            unknown: s.unknown_streams(c.messages()).collect(),
            bits: bits_per_symbol(c.modulus())?,
            q: c.modulus() as usize,
            labels: (0..c.modulus())
                .map(|v| labeling.label(v) as usize)
                .collect(),
        })
    }

    /// Extrinsic LLRs for one channel use.
    ///
    /// `channel[l]` is the channel log-likelihood of `candidates[l]`, and
    /// `priors[u]` holds the `bits` prior LLRs of the `u`-th unknown stream.
    /// Results go to `out[u][b]`.
    fn demap(
        &self,
        c: &Constellation,
        candidates: &[usize],
        channel: &[f64],
        priors: &[&[f64]],
        scratch: &mut DemapScratch,
        out: &mut [&mut [f64]],
    ) {
        let (q, m) = (self.q, self.bits);
        // prior log-weight of every symbol value, per unknown stream
        scratch.symbol_prior.resize(self.unknown.len() * q, 0.0);
        for (u, p) in priors.iter().enumerate() {
            for v in 0..q {
                let l = self.labels[v];
                scratch.symbol_prior[u * q + v] = (0..m)
                    .map(|b| {
                        if (l >> (m - 1 - b)) & 1 == 0 {
                            0.5 * p[b]
                        } else {
                            -0.5 * p[b]
                        }
                    })
                    .sum();
            }
        }
        scratch.total.clear();
        let mut max = f64::NEG_INFINITY;
        for (&i, &ch) in candidates.iter().zip(channel) {
            let t = ch
                + self
                    .unknown
                    .iter()
                    .enumerate()
                    .map(|(u, &st)| scratch.symbol_prior[u * q + c.symbol(i, st) as usize])
                    .sum::<f64>();
            max = max.max(t);
            scratch.total.push(t);
        }
        // mass per symbol value of each unknown stream
        scratch.mass.clear();
        scratch.mass.resize(self.unknown.len() * q, 0.0);
        for (&i, &t) in candidates.iter().zip(&scratch.total) {
            let d = t - max;
            if d < NEGLIGIBLE_LOG_WEIGHT {
                continue;
            }
            let w = d.exp();
            for (u, &st) in self.unknown.iter().enumerate() {
                scratch.mass[u * q + c.symbol(i, st) as usize] += w;
            }
        }
        for (u, o) in out.iter_mut().enumerate() {
            let mass = &scratch.mass[u * q..(u + 1) * q];
            for b in 0..m {
                let shift = m - 1 - b;
                let (mut m0, mut m1) = (0.0, 0.0);
                for (&l, &w) in self.labels.iter().zip(mass) {
                    if (l >> shift) & 1 == 0 {
                        m0 += w;
                    } else {
                        m1 += w;
                    }
                }
                let post = match (m0 > 0.0, m1 > 0.0) {
                    (true, true) => (m0 / m1).ln(),
                    (true, false) => f64::INFINITY,
                    (false, true) => f64::NEG_INFINITY,
                    (false, false) => 0.0,
                };
                o[b] = clamp_llr(post - priors[u][b]);
            }
        }
    }
}

/// Candidates whose log-weight trails the best by more than this carry a
/// relative mass below `e^-60` and are skipped.
const NEGLIGIBLE_LOG_WEIGHT: f64 = -60.0;

#[derive(Default)]
struct DemapScratch {
    symbol_prior: Vec<f64>,
    total: Vec<f64>,
    mass: Vec<f64>,
}

fn channel_metrics(
    c: &Constellation,
    y: &[f64],
    candidates: &[usize],
    noise_var: f64,
    out: &mut Vec<f64>,
) {
    let scale = -0.5 / noise_var;
    out.extend(candidates.iter().map(|&i| {
        let d: f64 = y
            .iter()
            .zip(c.point(i))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        d * scale
    }));
}

/// Extrinsic bit LLRs for one received vector.
///
/// `priors` holds one slice of `log2(q)` a-priori LLRs per stream not in
/// `s` (ascending stream order); `known` gives the symbols of the streams in
/// `s`. The returned vectors follow the same stream order as `priors`.
pub fn soft_demap(
    c: &Constellation,
    labeling: Labeling,
    y: &[f64],
    priors: &[Vec<f64>],
    s: SideInfoSet,
    known: &[u32],
    noise_var: f64,
) -> Result<Vec<Vec<f64>>> {
    let layout = DemapLayout::new(c, s, labeling)?;
    if y.len() != c.dims() {
        return domain(format!(
            "received vector has {} dims, expected {}",
            y.len(),
            c.dims()
        ));
    }
    if !(noise_var > 0.0) {
        return domain(format!("noise variance must be positive, got {noise_var}"));
    }
    if priors.len() != layout.unknown.len() || priors.iter().any(|p| p.len() != layout.bits) {
        return domain(format!(
            "priors must be {} streams of {} bits",
            layout.unknown.len(),
            layout.bits
        ));
    }
    let candidates = c.subcode_indices(s, known)?;
    let mut channel = Vec::with_capacity(candidates.len());
    channel_metrics(c, y, &candidates, noise_var, &mut channel);
    let prior_refs: Vec<&[f64]> = priors.iter().map(Vec::as_slice).collect();
    let mut out = vec![vec![0.0; layout.bits]; layout.unknown.len()];
    let mut out_refs: Vec<&mut [f64]> = out.iter_mut().map(Vec::as_mut_slice).collect();
    layout.demap(
        c,
        &candidates,
        &channel,
        &prior_refs,
        &mut DemapScratch::default(),
        &mut out_refs,
    );
    Ok(out)
}

/// Transmit-side view of one BICM frame.
#[derive(Clone, Debug)]
pub struct BicmFrame {
    pub info: Vec<Vec<u8>>,
    pub coded: Vec<Vec<u8>>,
    pub interleaved: Vec<Vec<u8>>,
    /// Symbols of `Z_q`, one sequence per stream.
    pub symbols: Vec<Vec<u32>>,
}

impl BicmFrame {
    /// Encodes, interleaves and maps one block of information bits per
    /// stream. `interleavers[k]` belongs to stream `k`.
    pub fn encode(
        q: u32,
        code: &TrellisCode,
        labeling: Labeling,
        interleavers: &[Interleaver],
        info: Vec<Vec<u8>>,
    ) -> Result<Self> {
        if interleavers.len() != info.len() {
            return Err(Error::LengthMismatch {
                what: "interleavers per stream",
                expected: info.len(),
                actual: interleavers.len(),
            });
        }
        let coded = info
            .iter()
            .map(|bits| conv_encode(code, bits))
            .collect::<Result<Vec<_>>>()?;
        let interleaved = coded
            .iter()
            .zip(interleavers)
            .map(|(bits, il)| il.interleave(bits))
            .collect::<Result<Vec<_>>>()?;
        let symbols = interleaved
            .iter()
            .map(|bits| map_bits_to_symbols(bits, q, labeling))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            info,
            coded,
            interleaved,
            symbols,
        })
    }

    pub fn symbol_count(&self) -> usize {
        self.symbols.first().map_or(0, Vec::len)
    }

    /// Constellation index transmitted at each time.
    pub fn point_indices(&self, c: &Constellation) -> Result<Vec<usize>> {
        let mut label = vec![0u32; self.symbols.len()];
        (0..self.symbol_count())
            .map(|t| {
                for (l, s) in label.iter_mut().zip(&self.symbols) {
                    *l = s[t];
                }
                c.index_of(&label)
            })
            .collect()
    }
}

/// Iterative BICM reception at a receiver knowing the messages in `s`.
///
/// `ys` holds `n` samples per channel use; `known_info` gives, in ascending
/// stream order, the information bits of every stream in `s`. Returns hard
/// decisions for the remaining streams, ascending.
#[allow(clippy::too_many_arguments)]
pub fn bicm_receive(
    c: &Constellation,
    code: &TrellisCode,
    labeling: Labeling,
    interleavers: &[Interleaver],
    ys: &[f64],
    s: SideInfoSet,
    known_info: &[Vec<u8>],
    channel: &AwgnChannel,
    iterations: usize,
) -> Result<Vec<Vec<u8>>> {
    let k = c.messages();
    let layout = DemapLayout::new(c, s, labeling)?;
    if interleavers.len() != k {
        return Err(Error::LengthMismatch {
            what: "interleavers per stream",
            expected: k,
            actual: interleavers.len(),
        });
    }
    if !ys.len().is_multiple_of(c.dims()) {
        return domain(format!(
            "{} samples do not fill {}-dim channel uses",
            ys.len(),
            c.dims()
        ));
    }
    let symbols = ys.len() / c.dims();
    let coded_len = symbols * layout.bits;
    if let Some(il) = interleavers.iter().find(|il| il.len() != coded_len) {
        return Err(Error::LengthMismatch {
            what: "interleaver length vs received coded bits",
            expected: coded_len,
            actual: il.len(),
        });
    }
    if !coded_len.is_multiple_of(code.n0()) || coded_len / code.n0() <= code.tail_steps() {
        return domain(format!(
            "{coded_len} coded bits do not form a terminated block"
        ));
    }
    let info_len = (coded_len / code.n0() - code.tail_steps()) * code.k0();
    if known_info.len() != s.len() {
        return Err(Error::LengthMismatch {
            what: "known streams",
            expected: s.len(),
            actual: known_info.len(),
        });
    }

    // exact symbol knowledge for the known streams
    let mut known_symbols: Vec<Vec<u32>> = Vec::with_capacity(s.len());
    for (bits, st) in known_info.iter().zip(s.streams()) {
        if bits.len() != info_len {
            return Err(Error::LengthMismatch {
                what: "known information bits",
                expected: info_len,
                actual: bits.len(),
            });
        }
        let coded = conv_encode(code, bits)?;
        known_symbols.push(map_bits_to_symbols(
            &interleavers[st].interleave(&coded)?,
            c.modulus(),
            labeling,
        )?);
    }

    let partition = c.subcode_partition(s);
    let qn = c.modulus() as usize;
    let mut candidate_sets: Vec<&[usize]> = Vec::with_capacity(symbols);
    let mut metrics_offsets = Vec::with_capacity(symbols + 1);
    let mut metrics = Vec::new();
    metrics_offsets.push(0);
    for t in 0..symbols {
        let rank = known_symbols
            .iter()
            .fold(0usize, |acc, ks| acc * qn + ks[t] as usize);
        let cands = partition[rank].as_slice();
        channel_metrics(
            c,
            &ys[t * c.dims()..(t + 1) * c.dims()],
            cands,
            channel.noise_var(),
            &mut metrics,
        );
        metrics_offsets.push(metrics.len());
        candidate_sets.push(cands);
    }

    let m = layout.bits;
    let streams = layout.unknown.len();
    let mut priors = vec![vec![0.0f64; coded_len]; streams];
    let mut extrinsic = vec![vec![0.0f64; coded_len]; streams];
    let mut posteriors: Vec<LlrFrame> = Vec::new();
    let zero_info = LlrFrame::zeros(info_len, LlrRole::APriori);
    let mut scratch = DemapScratch::default();
    for _ in 0..iterations.max(1) {
        for t in 0..symbols {
            let prior_refs: Vec<&[f64]> = priors.iter().map(|p| &p[t * m..(t + 1) * m]).collect();
            let mut out_refs: Vec<&mut [f64]> = extrinsic
                .iter_mut()
                .map(|e| &mut e[t * m..(t + 1) * m])
                .collect();
            layout.demap(
                c,
                candidate_sets[t],
                &metrics[metrics_offsets[t]..metrics_offsets[t + 1]],
                &prior_refs,
                &mut scratch,
                &mut out_refs,
            );
        }
        posteriors.clear();
        for (u, &st) in layout.unknown.iter().enumerate() {
            let il = &interleavers[st];
            let coded_llr = LlrFrame::new(il.deinterleave(&extrinsic[u])?, LlrRole::APriori);
            let out = bcjr_decode(code, &coded_llr, &zero_info)?;
            priors[u] = il.interleave(out.coded_extrinsic.values())?;
            posteriors.push(out.info_posterior);
        }
    }
    Ok(posteriors.iter().map(LlrFrame::hard_decisions).collect())
}
