//! Range profile, pre-image matrix, cross-range FFT and image export.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::Write;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::config::{BackgroundFill, SceneConfig, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::estimator::{CorrelationProfile, DelaySet};

/// Tolerance for floors of quantities that are integers algebraically.
const FLOOR_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagingGeometry {
    pub r0: f64,
    /// Rotational velocity, rad/s.
    pub omega: f64,
    pub delta_r: f64,
    pub doppler_bandwidth: f64,
    pub delta_cr: f64,
    pub delta_doppler: f64,
    pub delta_velocity: f64,
    pub n_r: usize,
    pub n_cr: usize,
    /// Range at the near edge of bin 0, `R0 - X_size / 2`.
    pub range_origin: f64,
    pub sample_period: f64,
    pub carrier_hz: f64,
}

pub fn geometry(config: &SceneConfig, velocity: f64) -> Result<ImagingGeometry> {
    if !(velocity > 0.0) || !velocity.is_finite() {
        return Err(Error::ZeroVelocity(velocity));
    }
    let r0 = config.r0();
    let lambda = config.wavelength();
    let m = config.frames() as f64;
    let [x_size, y_size] = config.image_size_m;
    let omega = velocity * (config.x0_m / config.y0_m).atan().cos() / r0;
    let delta_r = SPEED_OF_LIGHT / (2.0 * config.bandwidth_hz);
    let doppler_bandwidth = 2.0 * omega * y_size * config.carrier_hz / SPEED_OF_LIGHT;
    let delta_cr = lambda * doppler_bandwidth / (2.0 * m * omega);
    let delta_doppler = doppler_bandwidth / m;
    Ok(ImagingGeometry {
        r0,
        omega,
        delta_r,
        doppler_bandwidth,
        delta_cr,
        delta_doppler,
        delta_velocity: lambda * delta_doppler / 2.0,
        n_r: (x_size / delta_r + FLOOR_EPS).floor() as usize,
        n_cr: (y_size / delta_cr + FLOOR_EPS).floor() as usize,
        range_origin: r0 - x_size / 2.0,
        sample_period: config.sample_period(),
        carrier_hz: config.carrier_hz,
    })
}

impl ImagingGeometry {
    /// Correlation lag sampled for range bin `r`, rounded up.
    pub fn bin_lag(&self, r: usize) -> i64 {
        let x = 2.0 / (SPEED_OF_LIGHT * self.sample_period)
            * (r as f64 * self.delta_r + self.range_origin);
        (x - FLOOR_EPS).ceil() as i64
    }

    /// Range bin holding a scatterer at sampled delay `lag`, if on the plane.
    pub fn lag_bin(&self, lag: i64) -> Option<usize> {
        let x = lag as f64 * SPEED_OF_LIGHT * self.sample_period / 2.0 - self.range_origin;
        let r = (x / self.delta_r - FLOOR_EPS).ceil() as i64 - 1;
        (0..self.n_r as i64).contains(&r).then_some(r as usize)
    }

    /// Range bin holding a point at distance `range_m`.
    pub fn range_bin(&self, range_m: f64) -> Option<usize> {
        let r = ((range_m - self.range_origin) / self.delta_r).floor() as i64;
        (0..self.n_r as i64).contains(&r).then_some(r as usize)
    }

    /// Cross-range bins per Hz of Doppler, `c / (2 f_c ω Δ_cr)`.
    pub fn bins_per_hz(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.carrier_hz * self.omega * self.delta_cr)
    }

    pub fn range_axis(&self) -> Vec<f64> {
        (0..self.n_r)
            .map(|r| self.range_origin + (r as f64 + 0.5) * self.delta_r)
            .collect()
    }
}

pub fn range_profile(profile: &CorrelationProfile, geom: &ImagingGeometry) -> Vec<f64> {
    (0..geom.n_r)
        .map(|r| profile.get(geom.bin_lag(r)).map_or(0.0, |v| v.norm()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreImage {
    /// `data[m][r]`.
    pub data: Vec<Vec<Complex64>>,
    pub occupied: BTreeSet<usize>,
}

/// `CR_p[m] = exp(j 2π m ν_p^m κ / N_cr)` with `κ` cross-range bins per Hz.
pub fn cross_range_profile(track: &[f64], geom: &ImagingGeometry) -> Vec<Complex64> {
    let k = geom.bins_per_hz();
    let n = geom.n_cr as f64;
    track
        .iter()
        .enumerate()
        .map(|(m, nu)| Complex64::from_polar(1.0, 2.0 * PI / n * m as f64 * nu * k))
        .collect()
}

/// `doppler[m][p]` holds the per-frame Doppler of the frame-0 scatterers.
pub fn build_pre_image(
    delays: &DelaySet,
    doppler: &[Vec<f64>],
    profile: &CorrelationProfile,
    geom: &ImagingGeometry,
    background: BackgroundFill,
) -> Result<PreImage> {
    if doppler.len() != geom.n_cr {
        return Err(Error::DimensionMismatch {
            expected: geom.n_cr,
            found: doppler.len(),
        });
    }
    if let Some(row) = doppler.iter().find(|row| row.len() != delays.len()) {
        return Err(Error::DimensionMismatch {
            expected: delays.len(),
            found: row.len(),
        });
    }
    let background_row: Vec<Complex64> = match background {
        BackgroundFill::RangeProfile => range_profile(profile, geom)
            .into_iter()
            .map(|v| Complex64::new(v, 0.0))
            .collect(),
        BackgroundFill::Zero => vec![Complex64::new(0.0, 0.0); geom.n_r],
    };
    let mut data = vec![background_row; geom.n_cr];
    let mut occupied = BTreeSet::new();
    for (p, &lag) in delays.delays.iter().enumerate() {
        let Some(r) = geom.lag_bin(lag) else { continue };
        let amp = profile.get(lag).map_or(0.0, |v| v.norm());
        let track: Vec<f64> = doppler.iter().map(|row| row[p]).collect();
        let cr = cross_range_profile(&track, geom);
        if occupied.insert(r) {
            for row in data.iter_mut() {
                row[r] = Complex64::new(0.0, 0.0);
            }
        }
        for (row, c) in data.iter_mut().zip(&cr) {
            row[r] += c * amp;
        }
    }
    Ok(PreImage { data, occupied })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsarImage {
    /// `magnitude[q][r]`, rows in DFT order: row `q` holds cross-range
    /// frequency `q` for `q < N_cr / 2` and `q - N_cr` above.
    pub magnitude: Vec<Vec<f64>>,
    pub range_origin: f64,
    pub delta_r: f64,
    pub delta_cr: f64,
    /// Range axis reversed for display.
    pub flipped: bool,
}

/// Column-wise forward DFT of length `N_cr`, unnormalized, magnitudes kept.
pub fn form_image(pre: &PreImage, geom: &ImagingGeometry) -> IsarImage {
    let n_cr = pre.data.len();
    let n_r = pre.data.first().map_or(0, |r| r.len());
    let fft = FftPlanner::new().plan_fft_forward(n_cr);
    let mut magnitude = vec![vec![0.0; n_r]; n_cr];
    let mut col = vec![Complex64::new(0.0, 0.0); n_cr];
    for r in 0..n_r {
        for (c, row) in col.iter_mut().zip(&pre.data) {
            *c = row[r];
        }
        fft.process(&mut col);
        for (out, c) in magnitude.iter_mut().zip(&col) {
            out[r] = c.norm();
        }
    }
    IsarImage {
        magnitude,
        range_origin: geom.range_origin,
        delta_r: geom.delta_r,
        delta_cr: geom.delta_cr,
        flipped: false,
    }
}

/// Reverses the range axis so the roofline, which is nearest to an elevated
/// RSU, ends up on the far side like in a conventional side view.
pub fn flip_image(image: &IsarImage) -> IsarImage {
    let mut out = image.clone();
    for row in &mut out.magnitude {
        row.reverse();
    }
    out.flipped = !image.flipped;
    out
}

impl IsarImage {
    pub fn rows(&self) -> usize {
        self.magnitude.len()
    }

    pub fn cols(&self) -> usize {
        self.magnitude.first().map_or(0, |r| r.len())
    }

    /// Signed cross-range bin of DFT row `q`.
    pub fn signed_bin(&self, q: usize) -> i64 {
        let n = self.rows() as i64;
        let q = q as i64;
        if q < (n + 1) / 2 {
            q
        } else {
            q - n
        }
    }

    pub fn cross_range_m(&self, q: usize) -> f64 {
        self.signed_bin(q) as f64 * self.delta_cr
    }

    /// Range at the centre of column `c`, honouring the flip.
    pub fn range_m(&self, c: usize) -> f64 {
        let bin = if self.flipped { self.cols() - 1 - c } else { c };
        self.range_origin + (bin as f64 + 0.5) * self.delta_r
    }

    /// Rows ordered from the most negative to the most positive cross-range.
    pub fn display_rows(&self) -> Vec<usize> {
        let n = self.rows();
        let half = n / 2;
        (0..n).map(|i| (i + n - half) % n).collect()
    }

    pub fn write_pgm<W: Write>(&self, out: &mut W) -> Result<()> {
        let (lo, hi) = self.min_max();
        let span = if hi > lo { hi - lo } else { 1.0 };
        write!(out, "P5\n{} {}\n65535\n", self.cols(), self.rows())?;
        let mut buf = Vec::with_capacity(self.rows() * self.cols() * 2);
        for q in self.display_rows() {
            for &v in &self.magnitude[q] {
                let s = ((v - lo) / span * 65535.0).round().clamp(0.0, 65535.0) as u16;
                buf.extend_from_slice(&s.to_be_bytes());
            }
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn sidecar(&self) -> String {
        let (lo, hi) = self.min_max();
        let rows = self.display_rows();
        let mut s = String::new();
        let _ = writeln!(s, "columns = {}", self.cols());
        let _ = writeln!(s, "rows = {}", self.rows());
        let _ = writeln!(s, "column_axis = range_m");
        let _ = writeln!(s, "row_axis = cross_range_m");
        let _ = writeln!(s, "flipped = {}", self.flipped);
        let _ = writeln!(s, "range_first_column_m = {:.9e}", self.range_m(0));
        let step = if self.flipped {
            -self.delta_r
        } else {
            self.delta_r
        };
        let _ = writeln!(s, "range_step_m = {step:.9e}");
        let _ = writeln!(
            s,
            "cross_range_first_row_m = {:.9e}",
            self.cross_range_m(rows[0])
        );
        let _ = writeln!(s, "cross_range_step_m = {:.9e}", self.delta_cr);
        let _ = writeln!(s, "magnitude_min = {lo:.9e}");
        let _ = writeln!(s, "magnitude_max = {hi:.9e}");
        s
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let mut s = String::from("cross_range_m,range_m,magnitude\n");
        for q in self.display_rows() {
            let y = self.cross_range_m(q);
            for (c, v) in self.magnitude[q].iter().enumerate() {
                let _ = writeln!(s, "{:.6},{:.6},{:.9e}", y, self.range_m(c), v);
            }
        }
        out.write_all(s.as_bytes())?;
        Ok(())
    }

    fn min_max(&self) -> (f64, f64) {
        self.magnitude
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}
