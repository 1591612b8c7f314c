//! Lattice index modulations over `Z_q` and their side-information geometry.
//!
//! An [`IndexModulation`] maps `K` messages, each a symbol of `Z_q`, onto an
//! `n`-dimensional integer grid point `(M·u) mod q`. The resulting
//! [`Constellation`] is that grid translated to zero mean. Receivers that
//! already know some messages decode within a subcode of the constellation,
//! and the minimum distance of the worst such subcode determines how much
//! the side information is worth.
//!
//! All distances are computed exactly on the integer grid: squared distances
//! are integers before the (optional) scale factor is applied.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{domain, Error, Result};

/// Largest `q^K` for which the encoder is enumerated and checked.
pub const MAX_ENUMERATED_LABELS: usize = 1 << 20;

/// `K` messages over `Z_q` mapped to `n` real dimensions by a generator
/// matrix taken mod `q`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexModulation {
    k: usize,
    n: usize,
    q: u32,
    /// Row-major, `n` rows of `K` entries.
    matrix: Vec<u32>,
}

impl IndexModulation {
    /// Builds a modulation from an `n × K` generator matrix with entries in
    /// `[0, q)`, rejecting maps that are not injective on `Z_q^K`.
    pub fn new(q: u32, rows: &[Vec<u32>]) -> Result<Self> {
        if q < 2 {
            return Err(Error::Construction(format!(
                "modulus q={q} must be at least 2"
            )));
        }
        let n = rows.len();
        if n == 0 {
            return Err(Error::Construction("generator matrix has no rows".into()));
        }
        let k = rows[0].len();
        if k == 0 {
            return Err(Error::Construction(
                "generator matrix has no columns".into(),
            ));
        }
        if k > 32 {
            return Err(Error::Construction(format!(
                "K={k} exceeds the supported 32 messages"
            )));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != k) {
            return Err(Error::Construction(format!(
                "row {} has {} entries, expected {k}",
                bad + 1,
                rows[bad].len()
            )));
        }
        if let Some(&e) = rows.iter().flatten().find(|&&e| e >= q) {
            return Err(Error::Construction(format!(
                "entry {e} is outside [0, {q})"
            )));
        }
        let size = (q as usize)
            .checked_pow(k as u32)
            .filter(|&s| s <= MAX_ENUMERATED_LABELS)
            .ok_or_else(|| {
                Error::Construction(format!(
                    "q^K = {q}^{k} exceeds {MAX_ENUMERATED_LABELS} labels; bijectivity cannot be enumerated"
                ))
            })?;

        let modulation = Self {
            k,
            n,
            q,
            matrix: rows.iter().flatten().copied().collect(),
        };

        let mut seen = HashSet::with_capacity(size);
        let mut u = vec![0u32; k];
        for index in 0..size {
            modulation.digits_into(index, &mut u);
            let x = modulation.encode_unchecked(&u);
            if !seen.insert(x) {
                return Err(Error::Construction(format!(
                    "encoder is not injective: label {u:?} collides with an earlier label"
                )));
            }
        }
        Ok(modulation)
    }

    /// Message count `K`.
    pub fn messages(&self) -> usize {
        self.k
    }

    /// Real dimensions per channel use `n`.
    pub fn dims(&self) -> usize {
        self.n
    }

    /// Alphabet modulus `q`.
    pub fn modulus(&self) -> u32 {
        self.q
    }

    /// Entry `(row, col)` of the generator matrix.
    pub fn entry(&self, row: usize, col: usize) -> u32 {
        self.matrix[row * self.k + col]
    }

    /// Number of labels, `q^K`.
    pub fn label_count(&self) -> usize {
        (self.q as usize).pow(self.k as u32)
    }

    /// Rate of each message in bits per real dimension, `log2(q)/n`.
    pub fn rate_per_message(&self) -> f64 {
        (self.q as f64).log2() / self.n as f64
    }

    /// Side-information rate `R_S = |S|·log2(q)/n`.
    pub fn side_info_rate(&self, s: SideInfoSet) -> f64 {
        s.len() as f64 * self.rate_per_message()
    }

    /// Computes `(M·u) mod q`.
    pub fn encode(&self, u: &[u32]) -> Result<Vec<u32>> {
        if u.len() != self.k {
            return domain(format!(
                "expected {} message symbols, got {}",
                self.k,
                u.len()
            ));
        }
        if let Some(&bad) = u.iter().find(|&&v| v >= self.q) {
            return domain(format!("message symbol {bad} is outside Z_{}", self.q));
        }
        Ok(self.encode_unchecked(u))
    }

    fn encode_unchecked(&self, u: &[u32]) -> Vec<u32> {
        let q = self.q as u64;
        self.matrix
            .chunks_exact(self.k)
            .map(|row| {
                let acc: u64 = row.iter().zip(u).map(|(&m, &x)| m as u64 * x as u64).sum();
                (acc % q) as u32
            })
            .collect()
    }

    /// Writes the label with lexicographic rank `index` into `out`.
    fn digits_into(&self, mut index: usize, out: &mut [u32]) {
        let q = self.q as usize;
        for d in out.iter_mut().rev() {
            *d = (index % q) as u32;
            index /= q;
        }
    }

    /// Builds the zero-mean transmit constellation.
    pub fn constellation(&self) -> Constellation {
        Constellation::build(self)
    }
}

impl fmt::Display for IndexModulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "K={}", self.k)?;
        writeln!(f, "n={}", self.n)?;
        writeln!(f, "q={}", self.q)?;
        let rows: Vec<String> = self
            .matrix
            .chunks_exact(self.k)
            .map(|r| r.iter().map(u32::to_string).collect::<Vec<_>>().join(","))
            .collect();
        write!(f, "M={}", rows.join(";"))
    }
}

/// Subset of message indices known at a receiver.
///
/// Messages are numbered from 1 in text and from 0 (as "streams") in code;
/// internally the set is a bit mask with bit `i` standing for message `i+1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SideInfoSet(u32);

impl SideInfoSet {
    pub const EMPTY: SideInfoSet = SideInfoSet(0);

    /// Builds a set from 1-based message indices.
    pub fn of(messages: &[usize]) -> Result<Self> {
        let mut mask = 0u32;
        for &m in messages {
            if m == 0 || m > 32 {
                return domain(format!("message index {m} is outside 1..=32"));
            }
            mask |= 1 << (m - 1);
        }
        Ok(Self(mask))
    }

    pub fn from_mask(mask: u32) -> Self {
        Self(mask)
    }

    pub fn mask(self) -> u32 {
        self.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Whether the 0-based stream is known.
    pub fn contains_stream(self, stream: usize) -> bool {
        stream < 32 && self.0 & (1 << stream) != 0
    }

    /// Known streams, 0-based, ascending.
    pub fn streams(self) -> impl Iterator<Item = usize> {
        (0..32).filter(move |&i| self.0 & (1 << i) != 0)
    }

    /// Streams of `0..k` not in the set, ascending.
    pub fn unknown_streams(self, k: usize) -> impl Iterator<Item = usize> {
        (0..k).filter(move |&i| self.0 & (1 << i) == 0)
    }

    pub fn is_subset_of(self, other: SideInfoSet) -> bool {
        self.0 & !other.0 == 0
    }

    /// Checks that every member is one of `k` messages and the set is not
    /// the full set.
    pub fn check_proper(self, k: usize) -> Result<()> {
        let full = full_mask(k);
        if self.0 & !full != 0 {
            return domain(format!(
                "side-information set {self} names a message beyond K={k}"
            ));
        }
        if self.0 == full {
            return domain(format!(
                "side-information set {self} is the full message set; nothing is left to decode"
            ));
        }
        Ok(())
    }

    /// All nonempty proper subsets of `{1,…,k}`, ordered by size then mask.
    pub fn nonempty_proper_subsets(k: usize) -> Vec<SideInfoSet> {
        let full = full_mask(k);
        let mut sets: Vec<SideInfoSet> = (1..full).map(SideInfoSet).collect();
        sets.sort_by_key(|s| (s.len(), s.0));
        sets
    }
}

fn full_mask(k: usize) -> u32 {
    if k >= 32 {
        u32::MAX
    } else {
        (1u32 << k) - 1
    }
}

impl fmt::Display for SideInfoSet {
    /// Sorted 1-based indices joined by `+`; the empty set renders as `0`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("0");
        }
        let parts: Vec<String> = self.streams().map(|i| (i + 1).to_string()).collect();
        f.write_str(&parts.join("+"))
    }
}

impl FromStr for SideInfoSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "0" {
            return Ok(Self::EMPTY);
        }
        let messages = s
            .split('+')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Parse(format!("bad side-information set '{s}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        if messages.contains(&0) {
            return Err(Error::Parse(format!(
                "bad side-information set '{s}': 0 only denotes the empty set"
            )));
        }
        Self::of(&messages)
    }
}

/// Zero-mean transmit constellation with index-aligned labels.
///
/// Point `i` carries the label whose lexicographic rank is `i`, so label
/// order and point order coincide.
#[derive(Clone, Debug)]
pub struct Constellation {
    k: usize,
    n: usize,
    q: u32,
    /// Encoder outputs in `[0, q)^n`, flat.
    grid: Vec<u32>,
    /// Centered and scaled points, flat.
    points: Vec<f64>,
    /// Labels, `K` symbols per point, flat.
    labels: Vec<u32>,
    scale: f64,
    avg_energy_per_dim: f64,
}

impl Constellation {
    fn build(m: &IndexModulation) -> Self {
        let size = m.label_count();
        let mut grid = Vec::with_capacity(size * m.n);
        let mut labels = vec![0u32; size * m.k];
        for (index, label) in labels.chunks_exact_mut(m.k).enumerate() {
            m.digits_into(index, label);
            grid.extend(m.encode_unchecked(label));
        }
        let offset = (m.q as f64 - 1.0) / 2.0;
        let points: Vec<f64> = grid.iter().map(|&g| g as f64 - offset).collect();
        let energy = points.iter().map(|p| p * p).sum::<f64>() / (m.n * size) as f64;
        Self {
            k: m.k,
            n: m.n,
            q: m.q,
            grid,
            points,
            labels,
            scale: 1.0,
            avg_energy_per_dim: energy,
        }
    }

    /// Copy with every point multiplied by `alpha > 0`.
    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return domain(format!("scale factor {alpha} must be positive and finite"));
        }
        let mut c = self.clone();
        c.points.iter_mut().for_each(|p| *p *= alpha);
        c.scale *= alpha;
        c.avg_energy_per_dim *= alpha * alpha;
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.labels.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn messages(&self) -> usize {
        self.k
    }

    pub fn dims(&self) -> usize {
        self.n
    }

    pub fn modulus(&self) -> u32 {
        self.q
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn avg_energy_per_dim(&self) -> f64 {
        self.avg_energy_per_dim
    }

    /// Rate of each message in bits per real dimension.
    pub fn rate_per_message(&self) -> f64 {
        (self.q as f64).log2() / self.n as f64
    }

    /// Centered point `i`.
    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.n..(i + 1) * self.n]
    }

    /// All points, flat (`n` coordinates per point).
    pub fn points_flat(&self) -> &[f64] {
        &self.points
    }

    /// Uncentered encoder output at point `i`.
    pub fn grid_point(&self, i: usize) -> &[u32] {
        &self.grid[i * self.n..(i + 1) * self.n]
    }

    /// Label of point `i`.
    pub fn label(&self, i: usize) -> &[u32] {
        &self.labels[i * self.k..(i + 1) * self.k]
    }

    /// Index of the point carrying label `u`.
    pub fn index_of(&self, u: &[u32]) -> Result<usize> {
        if u.len() != self.k {
            return domain(format!(
                "expected {} message symbols, got {}",
                self.k,
                u.len()
            ));
        }
        let q = self.q as usize;
        let mut index = 0usize;
        for &d in u {
            if d >= self.q {
                return domain(format!("message symbol {d} is outside Z_{}", self.q));
            }
            index = index * q + d as usize;
        }
        Ok(index)
    }

    /// Symbol of `stream` in the label of point `i`.
    pub fn symbol(&self, i: usize, stream: usize) -> u32 {
        self.labels[i * self.k + stream]
    }

    /// Rank of the assignment that point `i` makes to the streams of `s`,
    /// read as a base-`q` number over the known streams in ascending order.
    pub fn assignment_rank(&self, i: usize, s: SideInfoSet) -> usize {
        s.streams().fold(0usize, |acc, st| {
            acc * self.q as usize + self.symbol(i, st) as usize
        })
    }

    /// Point indices whose labels agree with `known` (one value per stream
    /// of `s`, ascending) on the streams in `s`. Ascending, hence in label
    /// order.
    pub fn subcode_indices(&self, s: SideInfoSet, known: &[u32]) -> Result<Vec<usize>> {
        if s.streams().any(|st| st >= self.k) {
            return domain(format!(
                "side-information set {s} names a message beyond K={}",
                self.k
            ));
        }
        if known.len() != s.len() {
            return domain(format!(
                "side information {s} needs {} values, got {}",
                s.len(),
                known.len()
            ));
        }
        if let Some(&bad) = known.iter().find(|&&v| v >= self.q) {
            return domain(format!(
                "side-information value {bad} is outside Z_{}",
                self.q
            ));
        }
        Ok((0..self.len())
            .filter(|&i| {
                s.streams()
                    .zip(known)
                    .all(|(st, &v)| self.symbol(i, st) == v)
            })
            .collect())
    }

    /// The subcode consistent with side information `known` on `s`.
    pub fn subcode(&self, s: SideInfoSet, known: &[u32]) -> Result<Subcode<'_>> {
        let members = self.subcode_indices(s, known)?;
        Ok(Subcode {
            parent: self,
            members,
        })
    }

    /// Partition of all points by their assignment on `s`; entry `r` holds
    /// the subcode whose assignment has rank `r`.
    pub fn subcode_partition(&self, s: SideInfoSet) -> Vec<Vec<usize>> {
        let groups = (self.q as usize).pow(s.len() as u32);
        let mut parts = vec![Vec::with_capacity(self.len() / groups); groups];
        for i in 0..self.len() {
            parts[self.assignment_rank(i, s)].push(i);
        }
        parts
    }

    fn grid_sq_distance(&self, a: usize, b: usize) -> u64 {
        self.grid_point(a)
            .iter()
            .zip(self.grid_point(b))
            .map(|(&x, &y)| {
                let d = x as i64 - y as i64;
                (d * d) as u64
            })
            .sum()
    }

    /// Exact minimum distance among `members`, with a witness pair.
    pub fn min_distance(&self, members: &[usize]) -> Result<DistanceWitness> {
        if members.len() < 2 {
            return domain(format!(
                "minimum distance needs at least 2 points, got {}",
                members.len()
            ));
        }
        let mut best: Option<(u64, usize, usize)> = None;
        for (pos, &a) in members.iter().enumerate() {
            for &b in &members[pos + 1..] {
                let d = self.grid_sq_distance(a, b);
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, a, b));
                }
            }
        }
        let (sq, a, b) = best.expect("at least one pair");
        Ok(DistanceWitness {
            grid_sq: sq,
            scale: self.scale,
            pair: (a, b),
        })
    }

    /// Minimum distance `d₀` of the whole constellation.
    pub fn full_min_distance(&self) -> Result<DistanceWitness> {
        let all: Vec<usize> = (0..self.len()).collect();
        self.min_distance(&all)
    }

    /// `d_S`: the smallest subcode minimum distance over every assignment
    /// of the messages in `s`. The empty set gives `d₀`.
    pub fn side_info_min_distance(&self, s: SideInfoSet) -> Result<DistanceWitness> {
        s.check_proper(self.k)?;
        let mut best: Option<DistanceWitness> = None;
        for part in self.subcode_partition(s) {
            let w = self.min_distance(&part)?;
            if best.as_ref().is_none_or(|b| w.grid_sq < b.grid_sq) {
                best = Some(w);
            }
        }
        Ok(best.expect("at least one assignment"))
    }

    /// Side-information gain over all nonempty proper subsets.
    pub fn side_information_gain(&self) -> Result<GainReport> {
        if self.k < 2 {
            return domain(format!(
                "side-information gain needs K >= 2 messages, got K={}",
                self.k
            ));
        }
        let d0 = self.full_min_distance()?;
        let per_message = self.rate_per_message();
        let mut subsets = Vec::new();
        for s in SideInfoSet::nonempty_proper_subsets(self.k) {
            let witness = self.side_info_min_distance(s)?;
            let side_rate = s.len() as f64 * per_message;
            let gain = 10.0 * (witness.grid_sq as f64 / d0.grid_sq as f64).log10() / side_rate;
            subsets.push(SubsetDistance {
                set: s,
                witness,
                side_rate,
                gain_db_per_bit: gain,
            });
        }
        let arg = subsets
            .iter()
            .min_by(|a, b| a.gain_db_per_bit.total_cmp(&b.gain_db_per_bit))
            .expect("K >= 2 has a nonempty proper subset");
        Ok(GainReport {
            gamma_db: arg.gain_db_per_bit,
            argmin: arg.set,
            d0,
            subsets,
        })
    }
}

/// Points of a constellation consistent with one side-information
/// assignment.
#[derive(Clone, Debug)]
pub struct Subcode<'a> {
    parent: &'a Constellation,
    members: Vec<usize>,
}

impl Subcode<'_> {
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.members.iter().map(|&i| self.parent.point(i))
    }

    pub fn grid_points(&self) -> impl Iterator<Item = &[u32]> {
        self.members.iter().map(|&i| self.parent.grid_point(i))
    }

    pub fn min_distance(&self) -> Result<DistanceWitness> {
        self.parent.min_distance(&self.members)
    }
}

/// A minimum distance together with the pair of point indices attaining it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistanceWitness {
    /// Squared distance on the unscaled integer grid.
    pub grid_sq: u64,
    pub scale: f64,
    pub pair: (usize, usize),
}

impl DistanceWitness {
    pub fn distance(&self) -> f64 {
        self.scale * (self.grid_sq as f64).sqrt()
    }
}

/// Minimum subcode distance for one side-information set.
#[derive(Clone, Debug)]
pub struct SubsetDistance {
    pub set: SideInfoSet,
    pub witness: DistanceWitness,
    /// `R_S` in b/dim.
    pub side_rate: f64,
    /// `10·log10(d_S²/d₀²)/R_S`.
    pub gain_db_per_bit: f64,
}

#[derive(Clone, Debug)]
pub struct GainReport {
    /// Side-information gain in dB/b/dim.
    pub gamma_db: f64,
    pub argmin: SideInfoSet,
    pub d0: DistanceWitness,
    pub subsets: Vec<SubsetDistance>,
}

/// Contents of a modulation definition file.
#[derive(Clone, Debug)]
pub struct Definition {
    pub modulation: IndexModulation,
    /// Optional outer-code generators, `k0` rows of `n0` octal polynomials.
    pub code_generators: Option<Vec<Vec<u32>>>,
}

/// Parses the `key=value` definition format:
///
/// ```text
/// K=2
/// n=2
/// q=4
/// M=1,2;2,1
/// ```
///
/// plus an optional `G=` line with octal code generators in the same
/// row/column syntax. Blank lines and `#` comments are ignored; unknown or
/// repeated keys are rejected.
pub fn parse_definition(text: &str) -> Result<Definition> {
    let mut k = None;
    let mut n = None;
    let mut q = None;
    let mut matrix = None;
    let mut gens = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {}: expected key=value", lineno + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        let slot_taken = match key {
            "K" => k.replace(parse_int(value, key)?).is_some(),
            "n" => n.replace(parse_int(value, key)?).is_some(),
            "q" => q.replace(parse_int(value, key)?).is_some(),
            "M" => matrix.replace(parse_rows(value, 10)?).is_some(),
            "G" => gens.replace(parse_rows(value, 8)?).is_some(),
            other => {
                return Err(Error::Parse(format!(
                    "line {}: unknown key '{other}'",
                    lineno + 1
                )));
            }
        };
        if slot_taken {
            return Err(Error::Parse(format!(
                "line {}: key '{key}' given twice",
                lineno + 1
            )));
        }
    }
    let missing = |key: &str| Error::Parse(format!("missing key '{key}'"));
    let k = k.ok_or_else(|| missing("K"))?;
    let n = n.ok_or_else(|| missing("n"))?;
    let q = q.ok_or_else(|| missing("q"))?;
    let rows = matrix.ok_or_else(|| missing("M"))?;
    if rows.len() != n as usize || rows.iter().any(|r| r.len() != k as usize) {
        return Err(Error::Parse(format!("M must be {n} rows of {k} entries")));
    }
    let modulation = IndexModulation::new(q, &rows)?;
    Ok(Definition {
        modulation,
        code_generators: gens,
    })
}

fn parse_int(value: &str, key: &str) -> Result<u32> {
    value
        .parse()
        .map_err(|_| Error::Parse(format!("{key}: '{value}' is not a non-negative integer")))
}

fn parse_rows(value: &str, radix: u32) -> Result<Vec<Vec<u32>>> {
    value
        .split(';')
        .map(|row| {
            row.split(',')
                .map(|e| {
                    u32::from_str_radix(e.trim(), radix)
                        .map_err(|_| Error::Parse(format!("bad matrix entry '{}'", e.trim())))
                })
                .collect()
        })
        .collect()
}
