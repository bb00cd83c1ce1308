//! Delay, backscatter, Doppler and velocity estimation from preamble echoes.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::channel::EchoFrame;
use crate::config::{DopplerStatistic, SceneConfig, WrapCorrector};
use crate::error::{Error, Result};
use crate::waveform::{GolayPreamble, SEGMENT_LEN, SEGMENT_OFFSET};

/// Reciprocal condition number of the Gram matrix below which LSE refuses.
pub const RCOND_TOL: f64 = 1e-10;

/// `|h0|` below this is treated as a missing reference.
pub const ZERO_REFERENCE_TOL: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationProfile {
    pub first_lag: i64,
    pub values: Vec<Complex64>,
}

impl CorrelationProfile {
    pub fn get(&self, lag: i64) -> Option<Complex64> {
        let j = lag - self.first_lag;
        (j >= 0)
            .then(|| self.values.get(j as usize).copied())
            .flatten()
    }

    pub fn last_lag(&self) -> i64 {
        self.first_lag + self.values.len() as i64 - 1
    }

    pub fn lags(&self) -> impl Iterator<Item = (i64, Complex64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(move |(j, v)| (self.first_lag + j as i64, *v))
    }
}

/// Admissible lags for a window starting at `start` with `n` samples.
pub fn lag_range(start: i64, n: usize) -> Option<(i64, i64)> {
    let lo = (start - SEGMENT_OFFSET as i64).max(0);
    let hi = start + n as i64 - (SEGMENT_OFFSET + SEGMENT_LEN) as i64;
    (hi >= lo).then_some((lo, hi))
}

/// `R[l] = sum_k s512[k] conj(y[l + 2048 + k])`, evaluated directly.
pub fn correlate_direct(frame: &EchoFrame, segment: &[i8]) -> Result<CorrelationProfile> {
    let (lo, hi) = lag_range(frame.start, frame.samples.len()).ok_or(Error::WindowTooShort {
        samples: frame.samples.len(),
        segment: SEGMENT_LEN,
    })?;
    let values = (lo..=hi)
        .map(|l| {
            segment
                .iter()
                .enumerate()
                .map(|(k, &s)| {
                    let y = frame
                        .at(l + SEGMENT_OFFSET as i64 + k as i64)
                        .unwrap_or_default();
                    y.conj() * f64::from(s)
                })
                .sum()
        })
        .collect();
    Ok(CorrelationProfile {
        first_lag: lo,
        values,
    })
}

/// FFT matched filter for a fixed window length.
pub struct Correlator {
    size: usize,
    window: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// Conjugated segment spectrum.
    segment_spectrum: Vec<Complex64>,
}

impl Correlator {
    pub fn new(segment: &[i8], window: usize) -> Self {
        let size = window.max(segment.len()).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(size);
        let inverse = planner.plan_fft_inverse(size);
        let mut spec: Vec<Complex64> = segment
            .iter()
            .map(|&s| Complex64::new(f64::from(s), 0.0))
            .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
            .take(size)
            .collect();
        forward.process(&mut spec);
        let segment_spectrum = spec.into_iter().map(|c| c.conj()).collect();
        Correlator {
            size,
            window,
            forward,
            inverse,
            segment_spectrum,
        }
    }

    pub fn for_preamble(preamble: &GolayPreamble, window: usize) -> Self {
        Self::new(&preamble.segment, window)
    }

    pub fn correlate(&self, frame: &EchoFrame) -> Result<CorrelationProfile> {
        let n = frame.samples.len();
        if n != self.window {
            return Err(Error::DimensionMismatch {
                expected: self.window,
                found: n,
            });
        }
        let (lo, hi) = lag_range(frame.start, n).ok_or(Error::WindowTooShort {
            samples: n,
            segment: SEGMENT_LEN,
        })?;
        let mut buf = Vec::with_capacity(self.size);
        buf.extend_from_slice(&frame.samples);
        buf.resize(self.size, Complex64::new(0.0, 0.0));
        self.forward.process(&mut buf);
        for (b, s) in buf.iter_mut().zip(&self.segment_spectrum) {
            *b *= s;
        }
        self.inverse.process(&mut buf);
        // buf[j] = size * sum_k y[j + k] s[k]; no circular wrap because the
        // segment never extends past the window for admissible lags.
        let scale = 1.0 / self.size as f64;
        let base = SEGMENT_OFFSET as i64 - frame.start;
        let values = (lo..=hi)
            .map(|l| buf[(l + base) as usize].conj() * scale)
            .collect();
        Ok(CorrelationProfile {
            first_lag: lo,
            values,
        })
    }
}

pub fn correlate(frame: &EchoFrame, preamble: &GolayPreamble) -> Result<CorrelationProfile> {
    Correlator::for_preamble(preamble, frame.samples.len()).correlate(frame)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelaySet {
    /// Strictly increasing sampled delays.
    pub delays: Vec<i64>,
    pub peak: i64,
    pub peak_magnitude: f64,
    pub threshold: f64,
}

impl DelaySet {
    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }

    pub fn first(&self) -> i64 {
        self.delays[0]
    }
}

/// Peak search plus a threshold scan of `search_span` lags on each side.
pub fn extract_delays(
    profile: &CorrelationProfile,
    sigma_nc: f64,
    search_span: usize,
) -> Result<DelaySet> {
    let threshold = SEGMENT_LEN as f64 * sigma_nc;
    let (peak, peak_val) = profile.lags().map(|(l, v)| (l, v.norm())).fold(
        (profile.first_lag, f64::NEG_INFINITY),
        |best, cur| {
            if cur.1 > best.1 {
                cur
            } else {
                best
            }
        },
    );
    if !(peak_val > threshold) {
        return Err(Error::NoTarget {
            peak: peak_val.max(0.0),
            threshold,
        });
    }
    let span = search_span as i64;
    let delays = (peak - span..=peak + span)
        .filter(|&l| profile.get(l).is_some_and(|v| v.norm() > threshold))
        .collect();
    Ok(DelaySet {
        delays,
        peak,
        peak_magnitude: peak_val,
        threshold,
    })
}

/// `k_c = (2 l_0 + K_pre - l_D) / 2`, the centre of the observation window.
pub fn window_centre(first_delay: i64, config: &SceneConfig) -> f64 {
    (2 * first_delay + config.preamble_samples as i64 - config.data_guard_samples as i64) as f64
        / 2.0
}

/// `D_m = 1 / (2π (k_c + mK) T_s)`, Hz per radian of accumulated phase.
pub fn phase_scale(first_delay: i64, m: usize, config: &SceneConfig) -> f64 {
    let t = (window_centre(first_delay, config) + (m * config.frame_samples) as f64)
        * config.sample_period();
    1.0 / (2.0 * PI * t)
}

/// Least-squares solver for one set of relative delays, factored once.
#[derive(Debug)]
pub struct LsePlan {
    q: DMatrix<Complex64>,
    r: DMatrix<Complex64>,
    pub rcond: f64,
}

impl LsePlan {
    /// Regressor columns `s[j - rel_p]` for rows `j` in `rows`.
    pub fn new(
        symbols: &[Complex64],
        relative: &[i64],
        rows: std::ops::Range<i64>,
    ) -> Result<Self> {
        let n = (rows.end - rows.start).max(0) as usize;
        let p = relative.len();
        if p == 0 || n < p {
            return Err(Error::DimensionMismatch {
                expected: p.max(1),
                found: n,
            });
        }
        let sym = |i: i64| -> Complex64 {
            if i < 0 {
                Complex64::new(0.0, 0.0)
            } else {
                symbols.get(i as usize).copied().unwrap_or_default()
            }
        };
        let s = DMatrix::from_fn(
            n,
            p,
            |row, col| sym(rows.start + row as i64 - relative[col]),
        );
        let qr = s.qr();
        let r = qr.r();
        let sv = r.singular_values();
        let (smax, smin) = sv.iter().fold((0.0f64, f64::INFINITY), |(hi, lo), &x| {
            (hi.max(x), lo.min(x))
        });
        let rcond = if smax > 0.0 {
            (smin / smax).powi(2)
        } else {
            0.0
        };
        if !(rcond >= RCOND_TOL) {
            return Err(Error::SingularGram { rcond });
        }
        Ok(LsePlan {
            q: qr.q(),
            r,
            rcond,
        })
    }

    pub fn solve(&self, y: &[Complex64]) -> Result<Vec<Complex64>> {
        if y.len() != self.q.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.q.nrows(),
                found: y.len(),
            });
        }
        let qhy = self.q.ad_mul(&DVector::from_column_slice(y));
        let x = self
            .r
            .solve_upper_triangular(&qhy)
            .ok_or(Error::SingularGram { rcond: 0.0 })?;
        Ok(x.iter().copied().collect())
    }
}

/// Relative delays plus the first and last observed row.
type PlanKey = (Vec<i64>, i64, i64);

/// Preamble symbols and cached LSE factorizations shared across frames.
///
/// LSE rows stop at `K_pre - l_D` past the first delay, so they never reach
/// the data blocks and only the preamble matters.
pub struct LseContext {
    symbols: Vec<Complex64>,
    rows: usize,
    cache: Mutex<HashMap<PlanKey, Arc<LsePlan>>>,
}

impl LseContext {
    pub fn new(preamble: &GolayPreamble, config: &SceneConfig) -> Self {
        LseContext {
            symbols: preamble
                .samples
                .iter()
                .map(|&s| Complex64::new(f64::from(s), 0.0))
                .collect(),
            rows: config.window_len(),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn from_symbols(symbols: &[Complex64], config: &SceneConfig) -> Self {
        let n = config.preamble_samples.min(symbols.len());
        LseContext {
            symbols: symbols[..n].to_vec(),
            rows: config.window_len(),
            cache: Mutex::new(HashMap::new()),
        }
    }

    /// `h` such that `y[k] ≈ sum_p h_p s[k - l_p]` over the observation window
    /// starting at the first estimated delay. Not yet scaled by `sqrt(Es)`.
    pub fn solve(&self, frame: &EchoFrame, delays: &[i64]) -> Result<Vec<Complex64>> {
        let l0 = *delays.first().ok_or(Error::DimensionMismatch {
            expected: 1,
            found: 0,
        })?;
        let relative: Vec<i64> = delays.iter().map(|d| d - l0).collect();
        // Rows relative to l0 that the frame actually observed.
        let lo = (frame.start - l0).max(0);
        let hi = (frame.start + frame.samples.len() as i64 - l0).min(self.rows as i64);
        let key = (relative, lo, hi);
        let cached = self.cache.lock().expect("cache lock").get(&key).cloned();
        let plan = match cached {
            Some(p) => p,
            None => {
                let p = Arc::new(LsePlan::new(&self.symbols, &key.0, lo..hi)?);
                self.cache
                    .lock()
                    .expect("cache lock")
                    .insert(key, p.clone());
                p
            }
        };
        let y: Vec<Complex64> = (lo..hi)
            .map(|j| frame.at(l0 + j).unwrap_or_default())
            .collect();
        plan.solve(&y)
    }
}

fn scale(h: Vec<Complex64>, symbol_energy: f64) -> Vec<Complex64> {
    let g = 1.0 / symbol_energy.sqrt();
    h.into_iter().map(|c| c * g).collect()
}

/// Backscatter estimate from frame 0.
pub fn lse_h0(
    ctx: &LseContext,
    frame0: &EchoFrame,
    delays: &DelaySet,
    symbol_energy: f64,
) -> Result<Vec<Complex64>> {
    Ok(scale(ctx.solve(frame0, &delays.delays)?, symbol_energy))
}

/// Effective channel `h_p exp(j2π ν_p (k_c + mK) T_s)` of frame `m`.
pub fn lse_hm(
    ctx: &LseContext,
    frame: &EchoFrame,
    delays: &DelaySet,
    symbol_energy: f64,
) -> Result<Vec<Complex64>> {
    Ok(scale(ctx.solve(frame, &delays.delays)?, symbol_energy))
}

/// Per-scatterer phase ratio to the frame-0 reference, times `D_m`.
pub fn doppler_raw(h0: &[Complex64], hm: &[Complex64], d_m: f64) -> Result<Vec<f64>> {
    if h0.len() != hm.len() {
        return Err(Error::DimensionMismatch {
            expected: h0.len(),
            found: hm.len(),
        });
    }
    h0.iter()
        .zip(hm)
        .enumerate()
        .map(|(p, (a, b))| {
            if a.norm() < ZERO_REFERENCE_TOL {
                return Err(Error::ZeroReference { index: p });
            }
            Ok(principal_arg(b / a) * d_m)
        })
        .collect()
}

/// Argument in `(-π, π]`.
pub fn principal_arg(z: Complex64) -> f64 {
    let a = z.arg();
    if a <= -PI {
        a + 2.0 * PI
    } else {
        a
    }
}

/// Aligns the wrap counts of the two frames when they differ by one.
///
/// `later` belongs to frame `m̌`, `earlier` to frame `m̌ - i`.
pub fn preprocess_wrap(later: &mut [f64], earlier: &mut [f64], d_later: f64, d_earlier: f64) {
    let sigma = PI * (d_later + d_earlier) / 2.0;
    for (a, b) in later.iter_mut().zip(earlier.iter_mut()) {
        let diff = *a - *b;
        if diff > sigma {
            *b += 2.0 * PI * d_earlier;
        } else if diff < -sigma {
            *a += 2.0 * PI * d_later;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Compensated {
    pub later: Vec<f64>,
    pub earlier: Vec<f64>,
    /// Signed number of whole turns restored to each scatterer's phase.
    pub wraps: Vec<i64>,
}

/// Restores the whole turns lost to the principal-value phase.
///
/// The corrector `|a| - |b|` grows by `2π (D_{m̌-i} - D_m̌)` per turn; the
/// sign of the residual phase, read from `a`, decides its direction.
pub fn compensate_wrap(
    later: &[f64],
    earlier: &[f64],
    d_later: f64,
    d_earlier: f64,
) -> Compensated {
    compensate_wrap_with(later, earlier, d_later, d_earlier, WrapCorrector::Absolute)
}

pub fn compensate_wrap_with(
    later: &[f64],
    earlier: &[f64],
    d_later: f64,
    d_earlier: f64,
    corrector: WrapCorrector,
) -> Compensated {
    let step = 2.0 * PI * (d_earlier - d_later);
    let mut out = Compensated {
        later: Vec::with_capacity(later.len()),
        earlier: Vec::with_capacity(later.len()),
        wraps: Vec::with_capacity(later.len()),
    };
    for (&a, &b) in later.iter().zip(earlier) {
        let turns = match corrector {
            WrapCorrector::Absolute => {
                let c = a.abs() - b.abs();
                if a >= 0.0 {
                    c / step
                } else {
                    -c / step
                }
            }
            WrapCorrector::Signed => (a - b) / step,
        };
        let w = turns.round() as i64;
        out.later.push(a + 2.0 * PI * w as f64 * d_later);
        out.earlier.push(b + 2.0 * PI * w as f64 * d_earlier);
        out.wraps.push(w);
    }
    out
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn aggregate(values: &[f64], stat: DopplerStatistic) -> f64 {
    match stat {
        DopplerStatistic::Median => median(values),
        DopplerStatistic::Mean => mean(values),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DopplerTrack {
    /// `rows[m][p]`, Hz.
    pub rows: Vec<Vec<f64>>,
    /// Aggregated per-frame Doppler change, Hz per frame.
    pub delta: f64,
}

/// Linear extrapolation from frame `m̌` using the aggregated frame-to-frame
/// Doppler change.
pub fn doppler_all_frames(
    later: &[f64],
    earlier: &[f64],
    gap: usize,
    check_frame: usize,
    frames: usize,
    stat: DopplerStatistic,
) -> DopplerTrack {
    let diffs: Vec<f64> = later
        .iter()
        .zip(earlier)
        .map(|(a, b)| (a - b) / gap as f64)
        .collect();
    let delta = aggregate(&diffs, stat);
    let rows = (0..frames)
        .map(|m| {
            let off = (m as f64 - check_frame as f64) * delta;
            later.iter().map(|v| v + off).collect()
        })
        .collect();
    DopplerTrack { rows, delta }
}

/// Velocity from the Doppler decrease over the CPI, median over scatterers.
pub fn estimate_velocity(
    first: &[f64],
    last: &[f64],
    wavelength: f64,
    r0: f64,
    cpi: f64,
) -> Result<f64> {
    let radicands: Vec<f64> = first
        .iter()
        .zip(last)
        .map(|(a, b)| wavelength * r0 * (a - b) / (2.0 * cpi))
        .collect();
    let mid = median(&radicands);
    if !(mid > 0.0) {
        return Err(Error::NegativeRadicand { value: mid });
    }
    Ok(mid.sqrt())
}

/// For each delay in `reference`, the index of the nearest delay in `other`.
pub fn associate(reference: &[i64], other: &[i64]) -> Vec<usize> {
    if reference.len() == other.len() {
        return (0..reference.len()).collect();
    }
    reference
        .iter()
        .map(|&d| {
            (0..other.len())
                .min_by_key(|&j| ((other[j] - d).abs(), j))
                .unwrap_or(0)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DopplerEstimate {
    pub check_frame: usize,
    pub gap: usize,
    /// Raw estimates at `m̌` and `m̌ - i`, reordered to the frame-0 scatterers.
    pub raw_later: Vec<f64>,
    pub raw_earlier: Vec<f64>,
    pub d_later: f64,
    pub d_earlier: f64,
    pub compensated: Compensated,
    pub track: DopplerTrack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationReport {
    pub delays: DelaySet,
    pub h0: Vec<Complex64>,
    pub doppler: DopplerEstimate,
    pub velocity_mps: f64,
}

impl EstimationReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join_i = |v: &[i64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let join_f = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:.9e}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let d = &self.delays;
        let _ = writeln!(s, "[delays]");
        let _ = writeln!(s, "count = {}", d.len());
        let _ = writeln!(s, "peak = {}", d.peak);
        let _ = writeln!(s, "threshold = {:.9e}", d.threshold);
        let _ = writeln!(s, "frame0 = {}", join_i(&d.delays));
        let _ = writeln!(s, "\n[h0]");
        for (p, h) in self.h0.iter().enumerate() {
            let _ = writeln!(s, "{p} = {:.9e} {:.9e}", h.re, h.im);
        }
        let dp = &self.doppler;
        let _ = writeln!(s, "\n[doppler]");
        let _ = writeln!(s, "check_frame = {}", dp.check_frame);
        let _ = writeln!(s, "frame_gap = {}", dp.gap);
        let _ = writeln!(s, "scale_check_hz_per_rad = {:.9e}", dp.d_later);
        let _ = writeln!(s, "scale_gap_hz_per_rad = {:.9e}", dp.d_earlier);
        let _ = writeln!(s, "raw_check_hz = {}", join_f(&dp.raw_later));
        let _ = writeln!(s, "raw_gap_hz = {}", join_f(&dp.raw_earlier));
        let _ = writeln!(s, "wraps = {}", join_i(&dp.compensated.wraps));
        let _ = writeln!(s, "check_hz = {}", join_f(&dp.compensated.later));
        let _ = writeln!(s, "delta_hz_per_frame = {:.9e}", dp.track.delta);
        if let (Some(first), Some(last)) = (dp.track.rows.first(), dp.track.rows.last()) {
            let _ = writeln!(s, "first_frame_hz = {}", join_f(first));
            let _ = writeln!(s, "last_frame_hz = {}", join_f(last));
        }
        let _ = writeln!(s, "\n[velocity]");
        let _ = writeln!(s, "estimate_mps = {:.9e}", self.velocity_mps);
        s
    }
}
