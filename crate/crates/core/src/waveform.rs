//! Golay complementary pairs and the single-carrier preamble.
//!
//! The preamble is 3328 samples: a short training field of sixteen `a`
//! blocks closed by `-a`, then a nine-block channel estimation field. The
//! 512-sample matched segment starts at sample 2048 and reads
//! `[-a, -b, -a, +b]`, spanning the last STF block and the first three CEF
//! blocks.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

pub const PREAMBLE_LEN: usize = 3328;
pub const FRAME_LEN: usize = 13632;
pub const SEGMENT_OFFSET: usize = 2048;
pub const SEGMENT_LEN: usize = 512;
pub const BLOCK_LEN: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GolayPair {
    pub a: Vec<i8>,
    pub b: Vec<i8>,
}

impl GolayPair {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

/// Recursive doubling `a' = [a, b]`, `b' = [a, -b]` from `([1], [1])`.
pub fn generate_golay_pair(n: usize) -> Result<GolayPair> {
    if !(2..=1024).contains(&n) || !n.is_power_of_two() {
        return Err(Error::NonPowerOfTwo(n));
    }
    let mut a = vec![1i8];
    let mut b = vec![1i8];
    while a.len() < n {
        let mut a2 = a.clone();
        a2.extend_from_slice(&b);
        let mut b2 = a.clone();
        b2.extend(b.iter().map(|&x| -x));
        a = a2;
        b = b2;
    }
    Ok(GolayPair { a, b })
}

/// `R[k] = sum_i x[i] x[i+k]` for `k` in `0..len`.
pub fn aperiodic_autocorrelation(x: &[i8]) -> Vec<i64> {
    (0..x.len())
        .map(|k| {
            x.iter()
                .zip(&x[k..])
                .map(|(&p, &q)| i64::from(p) * i64::from(q))
                .sum()
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GolayPreamble {
    pub samples: Vec<i8>,
    pub segment_offset: usize,
    pub segment: Vec<i8>,
}

pub fn build_preamble() -> GolayPreamble {
    let pair = generate_golay_pair(BLOCK_LEN).expect("128 is a valid Golay length");
    // (a, -b) is also complementary. With the sign of b flipped, the CEF block
    // that precedes the last `-a` repeat cancels the lag -64 cross term and
    // the guard opens to 64 samples on the early side.
    let a: Vec<i8> = pair.a;
    let b: Vec<i8> = pair.b.iter().map(|&x| -x).collect();
    let neg = |v: &[i8]| v.iter().map(|&x| -x).collect::<Vec<_>>();
    let (na, nb) = (neg(&a), neg(&b));

    let mut samples = Vec::with_capacity(PREAMBLE_LEN);
    for _ in 0..16 {
        samples.extend_from_slice(&a);
    }
    samples.extend_from_slice(&na);
    for block in [&nb, &na, &b, &na, &nb, &a, &nb, &na, &nb] {
        samples.extend_from_slice(block);
    }
    debug_assert_eq!(samples.len(), PREAMBLE_LEN);

    let segment = samples[SEGMENT_OFFSET..SEGMENT_OFFSET + SEGMENT_LEN].to_vec();
    GolayPreamble {
        samples,
        segment_offset: SEGMENT_OFFSET,
        segment,
    }
}

impl GolayPreamble {
    /// `sum_k segment[k] * samples[offset + shift + k]`, with samples outside
    /// the preamble taken as zero.
    pub fn segment_correlation(&self, shift: i64) -> i64 {
        let base = self.segment_offset as i64 + shift;
        self.segment
            .iter()
            .enumerate()
            .filter_map(|(k, &s)| {
                let idx = base + k as i64;
                (0..self.samples.len() as i64)
                    .contains(&idx)
                    .then(|| i64::from(s) * i64::from(self.samples[idx as usize]))
            })
            .sum()
    }

    /// Widest window `[lo, hi]` around shift 0 on which the segment
    /// correlation is zero everywhere except at 0.
    pub fn guard_window(&self) -> (i64, i64) {
        let mut lo = 0;
        while self.segment_correlation(lo - 1) == 0 {
            lo -= 1;
        }
        let mut hi = 0;
        while self.segment_correlation(hi + 1) == 0 {
            hi += 1;
        }
        (lo, hi)
    }
}

#[derive(Debug, Clone)]
pub struct FrameSignal {
    pub symbols: Vec<Complex64>,
    pub preamble_len: usize,
}

impl FrameSignal {
    /// Symbol at index `i`, zero outside the frame.
    #[inline]
    pub fn symbol(&self, i: i64) -> Complex64 {
        if i < 0 {
            return Complex64::new(0.0, 0.0);
        }
        self.symbols
            .get(i as usize)
            .copied()
            .unwrap_or(Complex64::new(0.0, 0.0))
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// Preamble followed by seeded unit-magnitude QPSK placeholders.
pub fn build_frame(seed: u64) -> FrameSignal {
    build_frame_with(&build_preamble(), FRAME_LEN, seed)
}

pub fn build_frame_with(preamble: &GolayPreamble, frame_len: usize, seed: u64) -> FrameSignal {
    let mut rng = rng::stream(seed, rng::streams::DATA_SYMBOLS);
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut symbols: Vec<Complex64> = preamble
        .samples
        .iter()
        .take(frame_len)
        .map(|&x| Complex64::new(f64::from(x), 0.0))
        .collect();
    while symbols.len() < frame_len {
        let bits: u8 = rng.random_range(0..4);
        let re = if bits & 1 == 0 { h } else { -h };
        let im = if bits & 2 == 0 { h } else { -h };
        symbols.push(Complex64::new(re, im));
    }
    FrameSignal {
        symbols,
        preamble_len: preamble.samples.len().min(frame_len),
    }
}
