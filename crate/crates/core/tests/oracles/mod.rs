//! Independent references for the soft-in soft-out components: a
//! shift-register encoder with exhaustive MAP decoding, and a demapper that
//! enumerates labels built directly from `x = (M·u mod q) - (q-1)/2`.

#![allow(dead_code)]

use icm::bicm::{soft_demap, Labeling};
use icm::fec::{bcjr_decode, clamp_llr, LlrFrame, LlrRole, TrellisCode};
use icm::modulation::{IndexModulation, SideInfoSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest absolute deviation over a batch of random cases.
#[derive(Debug, Clone)]
pub struct Deviation {
    pub cases: usize,
    pub max_abs: f64,
    pub worst: String,
}

impl Deviation {
    fn new() -> Self {
        Self {
            cases: 0,
            max_abs: 0.0,
            worst: String::new(),
        }
    }

    fn record(&mut self, got: f64, want: f64, what: impl FnOnce() -> String) {
        let e = (got - want).abs();
        if e > self.max_abs || e.is_nan() {
            self.max_abs = if e.is_nan() { f64::INFINITY } else { e };
            self.worst = format!("{}: {got} vs {want}", what());
        }
    }
}

/// Direct feedforward encoder: output `j` at time `t` is the XOR over
/// inputs `i` and delays `d` of `u_i[t-d]` where generator `g[i][j]` has a
/// one at bit `m_i - d` (the MSB taps the current input).
pub struct ShiftRegisterEncoder {
    gens: Vec<Vec<u32>>,
    memory: Vec<usize>,
}

impl ShiftRegisterEncoder {
    pub fn new(gens: &[Vec<u32>]) -> Self {
        let memory = gens
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&g| 31 - g.max(1).leading_zeros() as usize)
                    .max()
                    .unwrap()
            })
            .collect();
        Self {
            gens: gens.to_vec(),
            memory,
        }
    }

    pub fn tail(&self) -> usize {
        *self.memory.iter().max().unwrap()
    }

    /// Encodes `info` (k0 bits per step) plus an all-zero tail.
    pub fn encode(&self, info: &[u8]) -> Vec<u8> {
        let k0 = self.gens.len();
        let n0 = self.gens[0].len();
        let mut streams: Vec<Vec<u8>> = (0..k0)
            .map(|i| info.iter().skip(i).step_by(k0).copied().collect())
            .collect();
        for s in &mut streams {
            s.extend(std::iter::repeat_n(0, self.tail()));
        }
        let steps = streams[0].len();
        let mut out = Vec::with_capacity(steps * n0);
        for t in 0..steps {
            for j in 0..n0 {
                let mut bit = 0;
                for (i, s) in streams.iter().enumerate() {
                    let m = self.memory[i];
                    for d in 0..=m.min(t) {
                        if (self.gens[i][j] >> (m - d)) & 1 == 1 {
                            bit ^= s[t - d];
                        }
                    }
                }
                out.push(bit);
            }
        }
        out
    }
}

fn ln_weight(bits: &[u8], llrs: &[f64]) -> f64 {
    bits.iter()
        .zip(llrs)
        .map(|(&b, &l)| if b == 0 { 0.5 * l } else { -0.5 * l })
        .sum()
}

/// Exact posteriors by enumeration: (info posterior LLRs, coded extrinsic LLRs).
fn brute_force(
    enc: &ShiftRegisterEncoder,
    info_len: usize,
    coded: &[f64],
    prior: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let words: Vec<(Vec<u8>, Vec<u8>, f64)> = (0..1u32 << info_len)
        .map(|w| {
            let info: Vec<u8> = (0..info_len).map(|b| ((w >> b) & 1) as u8).collect();
            let cw = enc.encode(&info);
            let lw = ln_weight(&info, prior) + ln_weight(&cw, coded);
            (info, cw, lw)
        })
        .collect();
    let max = words.iter().map(|w| w.2).fold(f64::NEG_INFINITY, f64::max);
    let mut info_mass = vec![[0.0; 2]; info_len];
    let mut coded_mass = vec![[0.0; 2]; coded.len()];
    for (info, cw, lw) in &words {
        let p = (lw - max).exp();
        for (m, &b) in info_mass.iter_mut().zip(info) {
            m[b as usize] += p;
        }
        for (m, &b) in coded_mass.iter_mut().zip(cw) {
            m[b as usize] += p;
        }
    }
    // the decoder reports LLRs clamped to a finite range
    let post = info_mass
        .iter()
        .map(|m| clamp_llr((m[0] / m[1]).ln()))
        .collect();
    let ext = coded_mass
        .iter()
        .zip(coded)
        .map(|(m, &l)| clamp_llr((m[0] / m[1]).ln() - l))
        .collect();
    (post, ext)
}

pub fn codes() -> Vec<Vec<Vec<u32>>> {
    vec![
        vec![vec![0o2, 0o7, 0o7], vec![0o7, 0o1, 0o6]],
        vec![vec![0o7, 0o5]],
        vec![vec![0o15, 0o17]],
        vec![vec![0o3, 0o1, 0o2], vec![0o2, 0o3, 0o3]],
    ]
}

/// BCJR against exhaustive MAP on random terminated trellises of at most
/// 10 steps and 12 information bits.
pub fn bcjr_vs_exhaustive(cases: usize, seed: u64) -> Deviation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes = codes();
    let mut dev = Deviation::new();
    for case in 0..cases {
        let gens = &codes[case % codes.len()];
        let code = TrellisCode::feedforward(gens).unwrap();
        let enc = ShiftRegisterEncoder::new(gens);
        let k0 = code.k0();
        let max_data = (10 - code.tail_steps()).min(12 / k0);
        let data_steps = rng.random_range(1..=max_data);
        let info_len = data_steps * k0;
        let info: Vec<u8> = (0..info_len).map(|_| rng.random_range(0..2)).collect();
        let cw = enc.encode(&info);
        assert_eq!(cw.len(), code.coded_len(info_len).unwrap());
        let coded: Vec<f64> = cw
            .iter()
            .map(|&b| {
                let mean = if b == 0 { 1.5 } else { -1.5 };
                mean + rng.random_range(-3.0..3.0)
            })
            .collect();
        let prior: Vec<f64> = if case % 2 == 0 {
            vec![0.0; info_len]
        } else {
            (0..info_len).map(|_| rng.random_range(-2.0..2.0)).collect()
        };
        let out = bcjr_decode(
            &code,
            &LlrFrame::new(coded.clone(), LlrRole::APriori),
            &LlrFrame::new(prior.clone(), LlrRole::APriori),
        )
        .unwrap();
        let (post, ext) = brute_force(&enc, info_len, &coded, &prior);
        for (i, (a, b)) in out.info_posterior.values().iter().zip(&post).enumerate() {
            dev.record(*a, *b, || format!("case {case} info posterior {i}"));
        }
        for (i, (a, b)) in out.coded_extrinsic.values().iter().zip(&ext).enumerate() {
            dev.record(*a, *b, || format!("case {case} coded extrinsic {i}"));
        }
        dev.cases += 1;
    }
    dev
}

pub struct MapOracle {
    pub q: u32,
    pub rows: Vec<Vec<u32>>,
}

impl MapOracle {
    pub fn point(&self, u: &[u32]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| {
                let v: u32 = row.iter().zip(u).map(|(m, x)| m * x).sum::<u32>() % self.q;
                v as f64 - (self.q as f64 - 1.0) / 2.0
            })
            .collect()
    }

    pub fn bits(&self) -> usize {
        self.q.trailing_zeros() as usize
    }

    /// Extrinsic LLRs for two-message maps: enumerate every label that agrees
    /// with the known symbols and weight it by channel and bit priors.
    pub fn demap(
        &self,
        y: &[f64],
        priors: &[Vec<f64>],
        s: SideInfoSet,
        known: &[u32],
        nv: f64,
    ) -> Vec<Vec<f64>> {
        let m = self.bits();
        let unknown: Vec<usize> = (0..2).filter(|&i| !s.contains_stream(i)).collect();
        let mut mass = vec![vec![[0.0f64; 2]; m]; unknown.len()];
        let mut terms = Vec::new();
        for u0 in 0..self.q {
            for u1 in 0..self.q {
                let u = [u0, u1];
                if s.streams().zip(known).any(|(st, &k)| u[st] != k) {
                    continue;
                }
                let x = self.point(&u);
                let d: f64 = y.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
                let mut lw = -d / (2.0 * nv);
                for (&st, p) in unknown.iter().zip(priors) {
                    for (b, &l) in p.iter().enumerate() {
                        let bit = (u[st] >> (m - 1 - b)) & 1;
                        lw += if bit == 0 { 0.5 * l } else { -0.5 * l };
                    }
                }
                terms.push((u, lw));
            }
        }
        let max = terms.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
        for (u, lw) in &terms {
            let w = (lw - max).exp();
            for (k, &st) in unknown.iter().enumerate() {
                for b in 0..m {
                    mass[k][b][((u[st] >> (m - 1 - b)) & 1) as usize] += w;
                }
            }
        }
        mass.iter()
            .zip(priors)
            .map(|(mk, pk)| {
                mk.iter()
                    .zip(pk)
                    .map(|(mb, p)| clamp_llr((mb[0] / mb[1]).ln() - p))
                    .collect()
            })
            .collect()
    }
}

/// Library demapper against enumeration on 60 random cases per map,
/// cycling through every receiver type.
pub fn demapper_vs_enumeration(seed: u64) -> Deviation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let maps = [
        (4u32, vec![vec![1, 2], vec![2, 1]]),
        (8, vec![vec![1, 2], vec![2, 1]]),
        (16, vec![vec![1, 12], vec![12, 1]]),
    ];
    let sets = [
        SideInfoSet::EMPTY,
        SideInfoSet::of(&[1]).unwrap(),
        SideInfoSet::of(&[2]).unwrap(),
    ];
    let mut dev = Deviation::new();
    for (q, rows) in &maps {
        let c = IndexModulation::new(*q, rows).unwrap().constellation();
        let oracle = MapOracle {
            q: *q,
            rows: rows.clone(),
        };
        let m = oracle.bits();
        for case in 0..60 {
            let s = sets[case % 3];
            let u = [rng.random_range(0..*q), rng.random_range(0..*q)];
            let nv = rng.random_range(0.05..2.0);
            let y: Vec<f64> = oracle
                .point(&u)
                .iter()
                .map(|x| x + rng.random_range(-1.5..1.5))
                .collect();
            let known: Vec<u32> = s.streams().map(|st| u[st]).collect();
            let unknown = 2 - s.len();
            let priors: Vec<Vec<f64>> = (0..unknown)
                .map(|_| {
                    (0..m)
                        .map(|_| {
                            if case % 4 == 0 {
                                0.0
                            } else {
                                rng.random_range(-4.0..4.0)
                            }
                        })
                        .collect()
                })
                .collect();
            let got = soft_demap(&c, Labeling::Natural, &y, &priors, s, &known, nv).unwrap();
            let want = oracle.demap(&y, &priors, s, &known, nv);
            assert_eq!(got.len(), want.len());
            for (g, w) in got.iter().flatten().zip(want.iter().flatten()) {
                dev.record(*g, *w, || format!("q={q} S={s} case {case}"));
            }
            dev.cases += 1;
        }
    }
    dev
}
