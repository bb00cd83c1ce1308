//! Beamforming, backscatter coefficients, noise-plus-clutter power and echo
//! synthesis.

use std::f64::consts::PI;
use std::io::{Read, Write};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::config::{Fading, SceneConfig, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::scene::{self, FrameTruth, Scatterer};
use crate::waveform::{self, FrameSignal};

/// UPA response, Kronecker-ordered: entry `ix * ny + iy` has phase
/// `ix * φx + iy * φy` with `φx = π cosθ sinφ` and `φy = π sinθ`.
pub fn steering(azimuth: f64, elevation: f64, nx: usize, ny: usize) -> Vec<Complex64> {
    let fx = PI * elevation.cos() * azimuth.sin();
    let fy = PI * elevation.sin();
    let mut v = Vec::with_capacity(nx * ny);
    for ix in 0..nx {
        for iy in 0..ny {
            v.push(Complex64::from_polar(1.0, ix as f64 * fx + iy as f64 * fy));
        }
    }
    v
}

/// Unit-norm 2-D DFT beams; beam `kx * ny + ky` is the steering vector for
/// spatial frequencies `(2π kx / nx, 2π ky / ny)`.
pub fn dft_codebook(nx: usize, ny: usize) -> Vec<Vec<Complex64>> {
    let scale = 1.0 / ((nx * ny) as f64).sqrt();
    let mut book = Vec::with_capacity(nx * ny);
    for kx in 0..nx {
        for ky in 0..ny {
            let mut v = Vec::with_capacity(nx * ny);
            for ix in 0..nx {
                for iy in 0..ny {
                    let ph =
                        2.0 * PI * ((kx * ix) as f64 / nx as f64 + (ky * iy) as f64 / ny as f64);
                    v.push(Complex64::from_polar(scale, ph));
                }
            }
            book.push(v);
        }
    }
    book
}

/// `x^H y`.
pub fn inner(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamPair {
    pub f_tx: Vec<Complex64>,
    pub f_rx_rad: Vec<Complex64>,
    pub f_rx_vehicle: Vec<Complex64>,
    pub tx_index: usize,
    pub vehicle_index: usize,
}

impl BeamPair {
    fn from_indices(config: &SceneConfig, tx_index: usize, vehicle_index: usize) -> Self {
        let f_tx = dft_codebook(config.tx_array[0], config.tx_array[1]).swap_remove(tx_index);
        let f_rx_vehicle = dft_codebook(config.vehicle_array[0], config.vehicle_array[1])
            .swap_remove(vehicle_index);
        let f_rx_rad = f_tx.iter().map(|c| c.conj()).collect();
        BeamPair {
            f_tx,
            f_rx_rad,
            f_rx_vehicle,
            tx_index,
            vehicle_index,
        }
    }

    /// Two-way array gain `(f_rad^H a_RX^*)(a_TX^H f_TX)` toward a direction.
    pub fn radar_gain(&self, config: &SceneConfig, azimuth: f64, elevation: f64) -> Complex64 {
        let a_tx = steering(azimuth, elevation, config.tx_array[0], config.tx_array[1]);
        let a_rx: Vec<Complex64> =
            steering(azimuth, elevation, config.rx_array[0], config.rx_array[1])
                .into_iter()
                .map(|c| c.conj())
                .collect();
        inner(&self.f_rx_rad, &a_rx) * inner(&a_tx, &self.f_tx)
    }
}

/// Rank-one terms `gain * a_vRX a_TX^H` of the downlink channel at frame 0.
struct RankOne {
    gain: Complex64,
    a_rx: Vec<Complex64>,
    a_tx: Vec<Complex64>,
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * s, im * s)
}

fn downlink_paths(config: &SceneConfig, scatterers: &[Scatterer], seed: u64) -> Vec<RankOne> {
    let mut rng = rng::stream(seed, streams::BEAM_ALIGNMENT);
    let kc = 10f64.powf(config.rician_k_db / 10.0);
    let [vx, vy] = config.vehicle_array;
    let [tx, ty] = config.tx_array;

    // The LOS path points at the vehicle centroid. Elevation seen from the
    // vehicle is the opposite of elevation seen from the RSU.
    let n = scatterers.len().max(1) as f64;
    let centroid = if scatterers.is_empty() {
        [config.x0_m, config.y0_m, config.z0_m]
    } else {
        let mut c = [0.0; 3];
        for s in scatterers {
            for (ci, pi) in c.iter_mut().zip(s.position) {
                *ci += pi / n;
            }
        }
        c
    };
    let (_, az, el_rsu) = scene::polar(centroid);
    let el_vehicle = -el_rsu;

    let los_weight = if kc.is_infinite() {
        1.0
    } else {
        (kc / (kc + 1.0)).sqrt()
    };
    let mut paths = Vec::with_capacity(config.nlos_paths + 1);
    paths.push(RankOne {
        gain: complex_gaussian(&mut rng, 1.0) * los_weight,
        a_rx: steering(az, el_vehicle, vx, vy),
        a_tx: steering(az, -el_vehicle, tx, ty),
    });
    if config.nlos_paths > 0 && kc.is_finite() {
        let scale = (1.0 / ((kc + 1.0) * config.nlos_paths as f64)).sqrt();
        for _ in 0..config.nlos_paths {
            let gain = complex_gaussian(&mut rng, 1.0) * scale;
            let az_r = rng.random_range(-PI / 2.0..PI / 2.0);
            let el_r = rng.random_range(-PI / 4.0..PI / 4.0);
            let az_t = rng.random_range(-PI / 2.0..PI / 2.0);
            let el_t = rng.random_range(-PI / 4.0..PI / 4.0);
            paths.push(RankOne {
                gain,
                a_rx: steering(az_r, el_r, vx, vy),
                a_tx: steering(az_t, el_t, tx, ty),
            });
        }
    }
    paths
}

/// Exhaustive search of `|f_RX^H H f_TX|^2` over both DFT codebooks.
pub fn align_beams(config: &SceneConfig, scatterers: &[Scatterer], seed: u64) -> BeamPair {
    let paths = downlink_paths(config, scatterers, seed);
    let tx_book = dft_codebook(config.tx_array[0], config.tx_array[1]);
    let rx_book = dft_codebook(config.vehicle_array[0], config.vehicle_array[1]);

    // a_TX^H f for every path and TX beam, then f_RX^H a_vRX per RX beam.
    let rx_resp: Vec<Vec<Complex64>> = rx_book
        .iter()
        .map(|f| paths.iter().map(|p| inner(f, &p.a_rx)).collect())
        .collect();
    let mut best = (f64::NEG_INFINITY, 0, 0);
    for (ti, f_tx) in tx_book.iter().enumerate() {
        let tx_resp: Vec<Complex64> = paths
            .iter()
            .map(|p| p.gain * inner(&p.a_tx, f_tx))
            .collect();
        for (ri, rr) in rx_resp.iter().enumerate() {
            let g: Complex64 = rr.iter().zip(&tx_resp).map(|(a, b)| a * b).sum();
            if g.norm_sqr() > best.0 {
                best = (g.norm_sqr(), ti, ri);
            }
        }
    }
    BeamPair::from_indices(config, best.1, best.2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackscatterSet {
    pub h: Vec<Complex64>,
}

/// Draws the small-scale gains once and folds in path loss and both beams.
pub fn backscatter(
    config: &SceneConfig,
    truth0: &FrameTruth,
    beams: &BeamPair,
    seed: u64,
) -> BackscatterSet {
    let mut rng = rng::stream(seed, streams::BACKSCATTER);
    let h = (0..truth0.len())
        .map(|p| {
            let beta = match config.fading {
                Fading::ConstantModulus => Complex64::from_polar(1.0, rng.random_range(-PI..PI)),
                Fading::Rayleigh => complex_gaussian(&mut rng, 1.0),
            };
            let array = beams.radar_gain(config, truth0.azimuth[p], truth0.elevation[p]);
            truth0.gain[p].sqrt() * beta * array
        })
        .collect();
    BackscatterSet { h }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseBudget {
    pub clutter_w: f64,
    pub noise_w: f64,
    pub sigma_nc2: f64,
}

/// Road clutter from a beam-limited ground patch plus thermal noise.
pub fn clutter_power(config: &SceneConfig) -> NoiseBudget {
    let noise_w = config.noise_power();
    let phi_b = 2.0 / config.tx_array[0] as f64;
    let theta_b = 2.0 / config.tx_array[1] as f64;
    let ga = PI / (theta_b * phi_b);
    let r0 = config.r0();
    let lambda = config.wavelength();
    let sigma0 = 0.15 * (config.z0_m.abs() / config.y0_m).atan().sin();
    let sigma_s = sigma0 * theta_b * r0 * SPEED_OF_LIGHT * config.sample_period() / 2.0;
    let clutter_w = config.symbol_energy() * ga * ga * lambda * lambda * sigma_s
        / ((4.0 * PI).powi(3) * r0.powi(4) * (config.z0_m / config.y0_m).atan().cos());
    NoiseBudget {
        clutter_w,
        noise_w,
        sigma_nc2: noise_w + clutter_w,
    }
}

/// One frame of observed echo samples, `k = start .. start + samples.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoFrame {
    pub start: i64,
    pub samples: Vec<Complex64>,
}

impl EchoFrame {
    /// Sample at absolute in-frame index `k`, if observed.
    pub fn at(&self, k: i64) -> Option<Complex64> {
        let j = k - self.start;
        (j >= 0)
            .then(|| self.samples.get(j as usize).copied())
            .flatten()
    }
}

/// Everything needed to synthesize any frame of a CPI on demand.
pub struct EchoSynthesizer {
    pub config: SceneConfig,
    pub scatterers: Vec<Scatterer>,
    pub beams: BeamPair,
    pub backscatter: BackscatterSet,
    pub budget: NoiseBudget,
    pub signal: FrameSignal,
    pub seed: u64,
}

impl EchoSynthesizer {
    pub fn new(
        config: &SceneConfig,
        scatterers: &[Scatterer],
        beams: BeamPair,
        seed: u64,
    ) -> Result<Self> {
        let truth0 = scene::frame_truth(config, scatterers, 0)?;
        let backscatter = backscatter(config, &truth0, &beams, seed);
        let preamble = waveform::build_preamble();
        let signal = waveform::build_frame_with(&preamble, config.frame_samples, seed);
        let mut budget = clutter_power(config);
        if !config.clutter {
            budget.clutter_w = 0.0;
            budget.sigma_nc2 = budget.noise_w;
        }
        Ok(EchoSynthesizer {
            config: config.clone(),
            scatterers: scatterers.to_vec(),
            beams,
            backscatter,
            budget,
            signal,
            seed,
        })
    }

    pub fn truth(&self, m: usize) -> Result<FrameTruth> {
        scene::frame_truth(&self.config, &self.scatterers, m)
    }

    /// Echo window of frame `m` starting at the first true delay.
    pub fn frame(&self, m: usize) -> Result<(EchoFrame, FrameTruth)> {
        let truth = self.truth(m)?;
        let start = truth.first_delay().unwrap_or(0);
        let n = self.config.window_len();
        let ts = self.config.sample_period();
        let k_frame = self.config.frame_samples as f64;
        let amp = self.config.symbol_energy().sqrt();
        let mut y = vec![Complex64::new(0.0, 0.0); n];

        for p in 0..truth.len() {
            let nu = truth.doppler_hz[p];
            let w = 2.0 * PI * nu * ts;
            let t0 = start as f64 + m as f64 * k_frame;
            let mut rot = Complex64::from_polar(amp, w * t0) * self.backscatter.h[p];
            let step = Complex64::from_polar(1.0, w);
            let shift = start - truth.delay[p];
            for (j, yj) in y.iter_mut().enumerate() {
                *yj += rot * self.signal.symbol(j as i64 + shift);
                rot *= step;
            }
        }
        if self.config.noise {
            let mut rng = rng::stream(self.seed, streams::NOISE_BASE + m as u64);
            for yj in &mut y {
                *yj += complex_gaussian(&mut rng, self.budget.sigma_nc2);
            }
        }
        Ok((EchoFrame { start, samples: y }, truth))
    }
}

#[derive(Debug, Clone)]
pub struct EchoFrameSet {
    pub frames: Vec<EchoFrame>,
    pub truth: Vec<FrameTruth>,
    pub sigma_nc2: f64,
    pub symbol_energy: f64,
    pub backscatter: BackscatterSet,
}

impl EchoFrameSet {
    pub fn samples_per_frame(&self) -> usize {
        self.frames.first().map_or(0, |f| f.samples.len())
    }
}

/// All `M` frames. Each frame draws noise from its own substream, so the
/// result does not depend on how the work is scheduled.
pub fn synthesize_echoes(
    config: &SceneConfig,
    scatterers: &[Scatterer],
    beams: BeamPair,
    seed: u64,
) -> Result<EchoFrameSet> {
    let synth = EchoSynthesizer::new(config, scatterers, beams, seed)?;
    let frames: Vec<(EchoFrame, FrameTruth)> = (0..config.frames())
        .into_par_iter()
        .map(|m| synth.frame(m))
        .collect::<Result<_>>()?;
    let (frames, truth) = frames.into_iter().unzip();
    Ok(EchoFrameSet {
        frames,
        truth,
        sigma_nc2: synth.budget.sigma_nc2,
        symbol_energy: config.symbol_energy(),
        backscatter: synth.backscatter,
    })
}

const DUMP_HEADER: usize = 64;

/// Writes the raw echo matrix: a 64-byte ASCII header, then little-endian
/// `f64` `(re, im)` pairs, frame by frame.
pub fn write_echo_dump<W: Write>(out: &mut W, set: &EchoFrameSet, seed: u64) -> Result<()> {
    let mut header = format!(
        "ISARECHO1 M={} N={} seed={}",
        set.frames.len(),
        set.samples_per_frame(),
        seed
    )
    .into_bytes();
    if header.len() >= DUMP_HEADER {
        return Err(Error::DimensionMismatch {
            expected: DUMP_HEADER - 1,
            found: header.len(),
        });
    }
    header.resize(DUMP_HEADER - 1, b' ');
    header.push(b'\n');
    out.write_all(&header)?;
    let mut buf = Vec::with_capacity(set.samples_per_frame() * 16);
    for f in &set.frames {
        buf.clear();
        for c in &f.samples {
            buf.extend_from_slice(&c.re.to_le_bytes());
            buf.extend_from_slice(&c.im.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EchoDump {
    pub frames: usize,
    pub samples_per_frame: usize,
    pub seed: u64,
    pub data: Vec<Complex64>,
}

pub fn read_echo_dump<R: Read>(input: &mut R) -> Result<EchoDump> {
    let bad = |msg: &str| {
        Error::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            msg.to_string(),
        ))
    };
    let mut header = [0u8; DUMP_HEADER];
    input.read_exact(&mut header)?;
    let text = std::str::from_utf8(&header).map_err(|_| bad("header is not ASCII"))?;
    let mut fields = text.split_whitespace();
    if fields.next() != Some("ISARECHO1") {
        return Err(bad("missing ISARECHO1 magic"));
    }
    let mut get = |key: &str| -> Result<u64> {
        fields
            .next()
            .and_then(|f| f.strip_prefix(key))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("malformed header field"))
    };
    let frames = get("M=")? as usize;
    let samples_per_frame = get("N=")? as usize;
    let seed = get("seed=")?;
    let mut raw = Vec::new();
    input.read_to_end(&mut raw)?;
    if raw.len() != frames * samples_per_frame * 16 {
        return Err(Error::DimensionMismatch {
            expected: frames * samples_per_frame * 16,
            found: raw.len(),
        });
    }
    let f = |b: &[u8]| f64::from_le_bytes(b.try_into().expect("8-byte chunk"));
    let data = raw
        .chunks_exact(16)
        .map(|c| Complex64::new(f(&c[..8]), f(&c[8..])))
        .collect();
    Ok(EchoDump {
        frames,
        samples_per_frame,
        seed,
        data,
    })
}
