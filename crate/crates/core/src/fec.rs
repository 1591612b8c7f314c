//! Terminated feedforward convolutional codes and BCJR decoding.
//!
//! LLRs follow the `ln P(bit = 0) / P(bit = 1)` convention throughout and
//! are clamped to ±[`LLR_MAX`].

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{domain, Error, Result};

pub const LLR_MAX: f64 = 50.0;

/// Generators of the default outer code: rate 2/3, 16 states, two
/// memory-2 shift registers, free distance 5. Octal, one row per input,
/// most significant bit on the current input.
pub const RATE_2_3_GENERATORS: [[u32; 3]; 2] = [[0o2, 0o7, 0o7], [0o7, 0o1, 0o6]];
pub const RATE_2_3_FREE_DISTANCE: u32 = 5;

/// Rate `k0/n0` feedforward convolutional code as state-transition tables.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrellisCode {
    k0: usize,
    n0: usize,
    generators: Vec<Vec<u32>>,
    memory: Vec<usize>,
    num_states: usize,
    /// `[state * 2^k0 + input]`.
    next_state: Vec<usize>,
    /// Output bits packed MSB-first, `[state * 2^k0 + input]`.
    output: Vec<u32>,
    tail_steps: usize,
}

impl TrellisCode {
    /// Builds the trellis of a feedforward encoder from `k0` rows of `n0`
    /// generator polynomials. The memory of input `i` is the degree of the
    /// widest polynomial in row `i`, and that polynomial's top bit taps the
    /// current input.
    pub fn feedforward(generators: &[Vec<u32>]) -> Result<Self> {
        let k0 = generators.len();
        if k0 == 0 || k0 > 8 {
            return Err(Error::Construction(format!(
                "{k0} inputs per step is unsupported"
            )));
        }
        let n0 = generators[0].len();
        if n0 == 0 || n0 > 16 || generators.iter().any(|row| row.len() != n0) {
            return Err(Error::Construction(
                "generator rows must share 1..=16 outputs".into(),
            ));
        }
        let memory: Vec<usize> = generators
            .iter()
            .map(|row| {
                let width = row
                    .iter()
                    .map(|&g| 32 - g.leading_zeros())
                    .max()
                    .unwrap_or(0);
                (width as usize).saturating_sub(1)
            })
            .collect();
        if let Some(i) = generators
            .iter()
            .position(|row| row.iter().all(|&g| g == 0))
        {
            return Err(Error::Construction(format!(
                "input {i} has only zero generators"
            )));
        }
        let total_memory: usize = memory.iter().sum();
        if total_memory > 16 {
            return Err(Error::Construction(format!(
                "total memory {total_memory} is too large"
            )));
        }
        let num_states = 1usize << total_memory;
        let inputs = 1usize << k0;
        // bit offset of each input's register within the state word; input 0 highest
        let mut offsets = vec![0usize; k0];
        let mut acc = 0;
        for i in (0..k0).rev() {
            offsets[i] = acc;
            acc += memory[i];
        }

        let mut next_state = vec![0; num_states * inputs];
        let mut output = vec![0; num_states * inputs];
        for state in 0..num_states {
            for v in 0..inputs {
                let mut ns = 0usize;
                let mut regs = Vec::with_capacity(k0);
                for i in 0..k0 {
                    let bit = (v >> (k0 - 1 - i)) & 1;
                    let reg_state = (state >> offsets[i]) & ((1 << memory[i]) - 1);
                    let reg = (bit << memory[i]) | reg_state;
                    ns |= (reg >> 1) << offsets[i];
                    regs.push(reg as u32);
                }
                let mut out = 0u32;
                for j in 0..n0 {
                    let parity = regs
                        .iter()
                        .zip(generators)
                        .map(|(&reg, row)| (reg & row[j]).count_ones())
                        .sum::<u32>()
                        & 1;
                    out = (out << 1) | parity;
                }
                next_state[state * inputs + v] = ns;
                output[state * inputs + v] = out;
            }
        }
        let code = Self {
            k0,
            n0,
            generators: generators.to_vec(),
            tail_steps: memory.iter().copied().max().unwrap_or(0),
            memory,
            num_states,
            next_state,
            output,
        };
        code.check_terminable()?;
        if code.is_catastrophic() {
            return Err(Error::Construction(format!(
                "generators {} give a catastrophic encoder",
                code.generator_spec()
            )));
        }
        Ok(code)
    }

    /// The 16-state rate-2/3 outer code with [`RATE_2_3_GENERATORS`].
    pub fn rate_two_thirds() -> Self {
        let gens: Vec<Vec<u32>> = RATE_2_3_GENERATORS.iter().map(|r| r.to_vec()).collect();
        Self::feedforward(&gens).expect("built-in generators are valid")
    }

    /// True when some nonzero state cycle emits only zeros, so a finite
    /// number of channel errors can cause unbounded decoding errors.
    pub fn is_catastrophic(&self) -> bool {
        let inputs = 1usize << self.k0;
        // depth-first search for a cycle over zero-output branches, leaving
        // out the zero state's self loop
        let mut color = vec![0u8; self.num_states];
        let mut stack: Vec<(usize, usize)> = Vec::new();
        for root in 0..self.num_states {
            if color[root] != 0 {
                continue;
            }
            color[root] = 1;
            stack.push((root, 0));
            while let Some(&mut (s, ref mut v)) = stack.last_mut() {
                if *v == inputs {
                    color[s] = 2;
                    stack.pop();
                    continue;
                }
                let input = *v;
                *v += 1;
                if self.output(s, input) != 0 || (s == 0 && input == 0) {
                    continue;
                }
                let ns = self.next_state(s, input);
                match color[ns] {
                    1 => return true,
                    0 => {
                        color[ns] = 1;
                        stack.push((ns, 0));
                    }
                    _ => {}
                }
            }
        }
        false
    }

    fn check_terminable(&self) -> Result<()> {
        for start in 0..self.num_states {
            let mut s = start;
            for _ in 0..self.tail_steps {
                s = self.next_state(s, 0);
            }
            if s != 0 {
                return Err(Error::Construction(format!(
                    "state {start} does not return to 0 within {} zero-input steps",
                    self.tail_steps
                )));
            }
        }
        Ok(())
    }

    pub fn k0(&self) -> usize {
        self.k0
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn memory(&self) -> &[usize] {
        &self.memory
    }

    pub fn generators(&self) -> &[Vec<u32>] {
        &self.generators
    }

    /// Trellis steps of the zero tail appended by [`conv_encode`].
    pub fn tail_steps(&self) -> usize {
        self.tail_steps
    }

    pub fn rate(&self) -> f64 {
        self.k0 as f64 / self.n0 as f64
    }

    pub fn next_state(&self, state: usize, input: usize) -> usize {
        self.next_state[(state << self.k0) | input]
    }

    /// Output bits of a branch, packed MSB-first.
    pub fn output(&self, state: usize, input: usize) -> u32 {
        self.output[(state << self.k0) | input]
    }

    /// Coded length of a terminated block carrying `info_len` bits.
    pub fn coded_len(&self, info_len: usize) -> Result<usize> {
        if !info_len.is_multiple_of(self.k0) {
            return domain(format!(
                "{info_len} information bits is not a multiple of k0={}",
                self.k0
            ));
        }
        Ok((info_len / self.k0 + self.tail_steps) * self.n0)
    }

    /// Generators rendered as `G=` text (octal, rows `;`, entries `,`).
    pub fn generator_spec(&self) -> String {
        self.generators
            .iter()
            .map(|r| {
                r.iter()
                    .map(|g| format!("{g:o}"))
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect::<Vec<_>>()
            .join(";")
    }

    /// Minimum Hamming weight of a path leaving state 0 and first returning
    /// to it, by Dijkstra over the trellis.
    pub fn free_distance(&self) -> u32 {
        let inputs = 1usize << self.k0;
        let mut best = vec![u32::MAX; self.num_states];
        let mut heap = BinaryHeap::new();
        for v in 1..inputs {
            let w = self.output(0, v).count_ones();
            heap.push(Reverse((w, self.next_state(0, v))));
        }
        while let Some(Reverse((w, s))) = heap.pop() {
            if s == 0 {
                return w;
            }
            if w >= best[s] {
                continue;
            }
            best[s] = w;
            for v in 0..inputs {
                let ns = self.next_state(s, v);
                let nw = w + self.output(s, v).count_ones();
                if ns == 0 || nw < best[ns] {
                    heap.push(Reverse((nw, ns)));
                }
            }
        }
        u32::MAX
    }
}

fn input_value(bits: &[u8]) -> usize {
    bits.iter().fold(0, |acc, &b| (acc << 1) | (b & 1) as usize)
}

/// Encodes from state 0 and appends the zero tail that returns the encoder
/// to state 0.
pub fn conv_encode(code: &TrellisCode, info_bits: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(code.coded_len(info_bits.len())?);
    let mut state = 0;
    let tail = vec![0u8; code.tail_steps * code.k0];
    for step in info_bits
        .chunks_exact(code.k0)
        .chain(tail.chunks_exact(code.k0))
    {
        let v = input_value(step);
        let o = code.output(state, v);
        out.extend((0..code.n0).rev().map(|j| ((o >> j) & 1) as u8));
        state = code.next_state(state, v);
    }
    debug_assert_eq!(state, 0);
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LlrRole {
    APriori,
    Extrinsic,
    Posterior,
}

/// LLR values with a role tag; construction clamps to ±[`LLR_MAX`].
#[derive(Clone, Debug, PartialEq)]
pub struct LlrFrame {
    values: Vec<f64>,
    role: LlrRole,
}

pub fn clamp_llr(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(-LLR_MAX, LLR_MAX)
    }
}

impl LlrFrame {
    pub fn new(mut values: Vec<f64>, role: LlrRole) -> Self {
        values.iter_mut().for_each(|v| *v = clamp_llr(*v));
        Self { values, role }
    }

    pub fn zeros(len: usize, role: LlrRole) -> Self {
        Self {
            values: vec![0.0; len],
            role,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn role(&self) -> LlrRole {
        self.role
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Bit decisions; non-negative LLRs decide 0.
    pub fn hard_decisions(&self) -> Vec<u8> {
        self.values.iter().map(|&l| u8::from(l < 0.0)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct BcjrOutput {
    /// One posterior per information bit (tail excluded).
    pub info_posterior: LlrFrame,
    /// Posterior minus a-priori for every coded bit.
    pub coded_extrinsic: LlrFrame,
}

/// `ln(num0 / num1)` for two non-negative masses, unclamped.
fn log_ratio(num0: f64, num1: f64) -> f64 {
    match (num0 > 0.0, num1 > 0.0) {
        (true, true) => (num0 / num1).ln(),
        (true, false) => f64::INFINITY,
        (false, true) => f64::NEG_INFINITY,
        (false, false) => 0.0,
    }
}

/// Symmetric weights `(e^{L/2}, e^{-L/2})` proportional to `(P(0), P(1))`.
fn bit_weights(llr: f64) -> (f64, f64) {
    let w = (0.5 * llr).exp();
    (w, 1.0 / w)
}

/// Fills `out[p]` with `Π_j w_j(bit_j(p))` for every MSB-first pattern `p`
/// over the given LLRs.
fn pattern_weights(llrs: &[f64], out: &mut [f64]) {
    let width = llrs.len();
    out.iter_mut().for_each(|w| *w = 1.0);
    for (j, &l) in llrs.iter().enumerate() {
        let (w0, w1) = bit_weights(l);
        let shift = width - 1 - j;
        for (p, w) in out.iter_mut().enumerate() {
            *w *= if (p >> shift) & 1 == 0 { w0 } else { w1 };
        }
    }
}

/// Exact MAP forward/backward decoding of a terminated block.
///
/// Both trellis ends are pinned to state 0 and tail inputs are forced to
/// zero. The recursion runs on probabilities normalised at every step,
/// which yields the exact log-MAP quantities without per-branch Jacobian
/// evaluations.
pub fn bcjr_decode(
    code: &TrellisCode,
    coded_llr: &LlrFrame,
    info_prior: &LlrFrame,
) -> Result<BcjrOutput> {
    let (k0, n0) = (code.k0, code.n0);
    if !coded_llr.len().is_multiple_of(n0) {
        return Err(Error::LengthMismatch {
            what: "coded LLRs must fill whole trellis steps",
            expected: coded_llr.len().div_ceil(n0) * n0,
            actual: coded_llr.len(),
        });
    }
    let steps = coded_llr.len() / n0;
    if steps <= code.tail_steps {
        return domain(format!(
            "{steps} trellis steps leave no room for data after a {}-step tail",
            code.tail_steps
        ));
    }
    let data_steps = steps - code.tail_steps;
    if info_prior.len() != data_steps * k0 {
        return Err(Error::LengthMismatch {
            what: "information priors",
            expected: data_steps * k0,
            actual: info_prior.len(),
        });
    }

    let ns_count = code.num_states;
    let inputs = 1usize << k0;
    let outputs = 1usize << n0;
    let branches = ns_count * inputs;

    // gamma[t][b] for branch b = (state << k0) | input; tail steps keep
    // only the zero input.
    let mut gamma = vec![0.0; steps * branches];
    let mut gin = vec![0.0; inputs];
    let mut gout = vec![0.0; outputs];
    for t in 0..steps {
        if t < data_steps {
            pattern_weights(&info_prior.values[t * k0..(t + 1) * k0], &mut gin);
        } else {
            gin.iter_mut().for_each(|w| *w = 0.0);
            gin[0] = 1.0;
        }
        pattern_weights(&coded_llr.values[t * n0..(t + 1) * n0], &mut gout);
        let g = &mut gamma[t * branches..(t + 1) * branches];
        for (b, w) in g.iter_mut().enumerate() {
            *w = gin[b & (inputs - 1)] * gout[code.output[b] as usize];
        }
    }

    let mut alpha = vec![0.0; (steps + 1) * ns_count];
    alpha[0] = 1.0;
    for t in 0..steps {
        let (head, tail) = alpha.split_at_mut((t + 1) * ns_count);
        let cur = &head[t * ns_count..];
        let next = &mut tail[..ns_count];
        let g = &gamma[t * branches..(t + 1) * branches];
        for (b, (&w, &ns)) in g.iter().zip(&code.next_state).enumerate() {
            next[ns] += cur[b >> k0] * w;
        }
        normalize(next);
    }

    let mut beta = vec![0.0; (steps + 1) * ns_count];
    beta[steps * ns_count] = 1.0;
    for t in (0..steps).rev() {
        let (head, tail) = beta.split_at_mut((t + 1) * ns_count);
        let cur = &mut head[t * ns_count..];
        let next = &tail[..ns_count];
        let g = &gamma[t * branches..(t + 1) * branches];
        for (s, c) in cur.iter_mut().enumerate() {
            let range = s * inputs..(s + 1) * inputs;
            *c = g[range.clone()]
                .iter()
                .zip(&code.next_state[range])
                .map(|(&w, &ns)| w * next[ns])
                .sum();
        }
        normalize(cur);
    }

    let mut info_post = Vec::with_capacity(data_steps * k0);
    let mut coded_ext = Vec::with_capacity(steps * n0);
    let mut input_mass = vec![0.0f64; inputs];
    let mut output_mass = vec![0.0f64; outputs];
    for t in 0..steps {
        input_mass.iter_mut().for_each(|m| *m = 0.0);
        output_mass.iter_mut().for_each(|m| *m = 0.0);
        let a_t = &alpha[t * ns_count..(t + 1) * ns_count];
        let b_next = &beta[(t + 1) * ns_count..(t + 2) * ns_count];
        let g = &gamma[t * branches..(t + 1) * branches];
        for (b, (&w, &ns)) in g.iter().zip(&code.next_state).enumerate() {
            let p = a_t[b >> k0] * w * b_next[ns];
            input_mass[b & (inputs - 1)] += p;
            output_mass[code.output[b] as usize] += p;
        }
        if t < data_steps {
            info_post.extend((0..k0).map(|i| {
                let (m0, m1) = bit_masses(&input_mass, k0 - 1 - i);
                clamp_llr(log_ratio(m0, m1))
            }));
        }
        for j in 0..n0 {
            let (m0, m1) = bit_masses(&output_mass, n0 - 1 - j);
            let prior = coded_llr.values[t * n0 + j];
            coded_ext.push(clamp_llr(log_ratio(m0, m1) - prior));
        }
    }

    Ok(BcjrOutput {
        info_posterior: LlrFrame {
            values: info_post,
            role: LlrRole::Posterior,
        },
        coded_extrinsic: LlrFrame {
            values: coded_ext,
            role: LlrRole::Extrinsic,
        },
    })
}

/// Total mass of the patterns whose bit at `shift` is 0 and 1.
fn bit_masses(mass: &[f64], shift: usize) -> (f64, f64) {
    mass.iter()
        .enumerate()
        .fold((0.0, 0.0), |(m0, m1), (p, &m)| {
            if (p >> shift) & 1 == 0 {
                (m0 + m, m1)
            } else {
                (m0, m1 + m)
            }
        })
}

fn normalize(v: &mut [f64]) {
    let sum: f64 = v.iter().sum();
    if sum > 0.0 {
        let inv = 1.0 / sum;
        v.iter_mut().for_each(|x| *x *= inv);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_code_shape() {
        let code = TrellisCode::rate_two_thirds();
        assert_eq!((code.k0(), code.n0(), code.num_states()), (2, 3, 16));
        assert_eq!(code.tail_steps(), 2);
        assert_eq!(code.coded_len(3996).unwrap(), 6000);
        assert!(code.coded_len(3995).is_err());
        assert_eq!(code.generator_spec(), "2,7,7;7,1,6");
    }

    #[test]
    fn encode_block_sizes() {
        let code = TrellisCode::rate_two_thirds();
        let zeros = conv_encode(&code, &[0; 3996]).unwrap();
        assert_eq!(zeros.len(), 6000);
        assert!(zeros.iter().all(|&b| b == 0));
        assert!(conv_encode(&code, &[1; 3]).is_err());
    }

    #[test]
    fn random_inputs_terminate() {
        let code = TrellisCode::rate_two_thirds();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let bits: Vec<u8> = (0..40).map(|_| rng.random_range(0..2)).collect();
            let mut state = 0;
            let padded: Vec<u8> = bits.iter().copied().chain([0; 4]).collect();
            for step in padded.chunks(2) {
                state = code.next_state(state, input_value(step));
            }
            assert_eq!(state, 0);
        }
    }

    #[test]
    fn rejects_bad_generators() {
        assert!(TrellisCode::feedforward(&[]).is_err());
        assert!(TrellisCode::feedforward(&[vec![0o7, 0o5], vec![0o3]]).is_err());
        assert!(TrellisCode::feedforward(&[vec![0, 0]]).is_err());
    }

    #[test]
    fn catastrophic_encoders_are_rejected() {
        // 1+D^2 = (1+D)^2 shares the factor 1+D with 1+D
        assert!(matches!(
            TrellisCode::feedforward(&[vec![0o6, 0o5]]),
            Err(Error::Construction(_))
        ));
        assert!(TrellisCode::feedforward(&[vec![0o4, 0o7, 0o1], vec![0o1, 0o4, 0o7]]).is_err());
        assert!(!TrellisCode::rate_two_thirds().is_catastrophic());
        assert!(!TrellisCode::feedforward(&[vec![0o7, 0o5]])
            .unwrap()
            .is_catastrophic());
    }

    #[test]
    fn free_distances() {
        assert_eq!(
            TrellisCode::rate_two_thirds().free_distance(),
            RATE_2_3_FREE_DISTANCE
        );
        // the textbook rate-1/2 (7,5) code
        assert_eq!(
            TrellisCode::feedforward(&[vec![0o7, 0o5]])
                .unwrap()
                .free_distance(),
            5
        );
        // rate-1/2 with generators (171, 133)
        assert_eq!(
            TrellisCode::feedforward(&[vec![0o171, 0o133]])
                .unwrap()
                .free_distance(),
            10
        );
    }

    #[test]
    fn zero_evidence_gives_zero_posteriors() {
        let code = TrellisCode::rate_two_thirds();
        let out = bcjr_decode(
            &code,
            &LlrFrame::zeros(30, LlrRole::APriori),
            &LlrFrame::zeros(16, LlrRole::APriori),
        )
        .unwrap();
        assert!(out.info_posterior.values().iter().all(|v| v.abs() < 1e-12));
        assert!(out.coded_extrinsic.values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn saturated_evidence_recovers_input() {
        let code = TrellisCode::rate_two_thirds();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let bits: Vec<u8> = (0..200).map(|_| rng.random_range(0..2)).collect();
        let coded = conv_encode(&code, &bits).unwrap();
        let llr: Vec<f64> = coded
            .iter()
            .map(|&b| if b == 0 { LLR_MAX } else { -LLR_MAX })
            .collect();
        let out = bcjr_decode(
            &code,
            &LlrFrame::new(llr, LlrRole::APriori),
            &LlrFrame::zeros(200, LlrRole::APriori),
        )
        .unwrap();
        assert_eq!(out.info_posterior.hard_decisions(), bits);
    }

    #[test]
    fn length_checks() {
        let code = TrellisCode::rate_two_thirds();
        let z = |n| LlrFrame::zeros(n, LlrRole::APriori);
        assert!(matches!(
            bcjr_decode(&code, &z(31), &z(16)),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            bcjr_decode(&code, &z(30), &z(14)),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(bcjr_decode(&code, &z(6), &z(0)).is_err());
    }

    #[test]
    fn extrinsic_plus_prior_is_posterior() {
        let code = TrellisCode::rate_two_thirds();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let coded: Vec<f64> = (0..60).map(|_| rng.random_range(-4.0..4.0)).collect();
        let out = bcjr_decode(
            &code,
            &LlrFrame::new(coded.clone(), LlrRole::APriori),
            &LlrFrame::zeros(36, LlrRole::APriori),
        )
        .unwrap();
        // shifting bit j's prior must leave its own extrinsic unchanged
        for j in [0, 7, 31, 59] {
            let mut shifted = coded.clone();
            shifted[j] += 1.7;
            let again = bcjr_decode(
                &code,
                &LlrFrame::new(shifted, LlrRole::APriori),
                &LlrFrame::zeros(36, LlrRole::APriori),
            )
            .unwrap();
            assert!(
                (again.coded_extrinsic.values()[j] - out.coded_extrinsic.values()[j]).abs() < 1e-9
            );
        }
    }

    proptest! {
        #[test]
        fn encoder_is_linear(a in proptest::collection::vec(0u8..2, 40), b in proptest::collection::vec(0u8..2, 40)) {
            let code = TrellisCode::rate_two_thirds();
            let sum: Vec<u8> = a.iter().zip(&b).map(|(x, y)| x ^ y).collect();
            let ea = conv_encode(&code, &a).unwrap();
            let eb = conv_encode(&code, &b).unwrap();
            let es = conv_encode(&code, &sum).unwrap();
            let xor: Vec<u8> = ea.iter().zip(&eb).map(|(x, y)| x ^ y).collect();
            prop_assert_eq!(es, xor);
        }
    }
}
