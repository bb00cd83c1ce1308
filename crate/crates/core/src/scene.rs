//! V2I geometry, point-scatterer vehicle models and per-frame ground truth.
//!
//! The RSU sits at the origin with its array boresight along +y. The vehicle
//! drives along +x, so it approaches while `x < 0`. Azimuth is measured from
//! boresight in the x-y plane and is positive upstream; elevation is measured
//! from the x-y plane and is negative for a vehicle below the RSU.

use std::f64::consts::PI;
use std::path::Path;

use crate::config::{Config, ScatterSource, SceneConfig, SPEED_OF_LIGHT};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Scatterer {
    /// World position at the start of the CPI, meters.
    pub position: [f64; 3],
    /// Linear RCS, m².
    pub rcs: f64,
    /// Free-form part name from the scene file (`roof`, `wheel`, ...).
    pub label: String,
}

const BUILTIN: &[(&str, &str)] = &[
    ("sedan-side", include_str!("../scenes/sedan-side.scene")),
    (
        "sedan-front-quarter",
        include_str!("../scenes/sedan-front-quarter.scene"),
    ),
    (
        "sedan-rear-quarter",
        include_str!("../scenes/sedan-rear-quarter.scene"),
    ),
];

pub fn builtin_models() -> impl Iterator<Item = &'static str> {
    BUILTIN.iter().map(|(name, _)| *name)
}

/// Paper-parameter scene with a shipped vehicle model placed at `x0_m`.
pub fn builtin_scene(model: &str, x0_m: f64) -> Result<(SceneConfig, Vec<Scatterer>)> {
    let config = SceneConfig::paper(x0_m);
    let scatterers = builtin_scatterers(model, &config)?;
    Ok((config, scatterers))
}

fn builtin_scatterers(model: &str, config: &SceneConfig) -> Result<Vec<Scatterer>> {
    let text = BUILTIN
        .iter()
        .find(|(name, _)| *name == model)
        .map(|(_, text)| *text)
        .ok_or_else(|| Error::UnknownModel(model.to_string()))?;
    parse_scene(text, Path::new(model), config)
}

/// Resolves the scatterer list a config points at.
pub fn load_scatterers(config: &Config) -> Result<Vec<Scatterer>> {
    match &config.scatterers {
        ScatterSource::Builtin(model) => builtin_scatterers(model, &config.scene),
        ScatterSource::File(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::config(path, None, format!("cannot read scene file: {e}")))?;
            parse_scene(&text, path, &config.scene)
        }
    }
}

/// Parses `x y z weight [# label]` lines in the vehicle body frame.
///
/// Weights are relative; they are rescaled so the RCS sums to the configured
/// vehicle total, and positions are translated to `(x0, y0, z0)`.
pub fn parse_scene(text: &str, origin: &Path, config: &SceneConfig) -> Result<Vec<Scatterer>> {
    let mut body = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let (data, comment) = match raw.split_once('#') {
            Some((d, c)) => (d, c.trim()),
            None => (raw, ""),
        };
        if data.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::config(origin, Some(idx + 1), msg);
        let fields: Vec<&str> = data.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(err(format!(
                "expected `x y z rcs_share`, found {} fields",
                fields.len()
            )));
        }
        let mut v = [0.0; 4];
        for (slot, field) in v.iter_mut().zip(&fields) {
            *slot = field
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| err(format!("`{field}` is not a finite number")))?;
        }
        if v[3] <= 0.0 {
            return Err(err(format!("rcs_share must be positive, got {}", v[3])));
        }
        body.push(([v[0], v[1], v[2]], v[3], comment.to_string()));
    }
    let total: f64 = body.iter().map(|(_, w, _)| w).sum();
    let scale = config.rcs_total() / total.max(f64::MIN_POSITIVE);
    let offset = [config.x0_m, config.y0_m, config.z0_m];
    Ok(body
        .into_iter()
        .map(|(p, w, label)| Scatterer {
            position: [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]],
            rcs: w * scale,
            label,
        })
        .collect())
}

/// Range, azimuth and elevation of a point seen from the RSU.
pub fn polar(p: [f64; 3]) -> (f64, f64, f64) {
    let [x, y, z] = p;
    let rho = x.hypot(y);
    let r = rho.hypot(z);
    (r, (-x).atan2(y), z.atan2(rho))
}

/// Radial Doppler of a point moving along +x at `v` m/s.
pub fn doppler(v: f64, azimuth: f64, elevation: f64, wavelength: f64) -> f64 {
    2.0 * v * elevation.cos() * azimuth.sin() / wavelength
}

/// Two-way large-scale gain `λ² σ / (64 π³ r⁴)`.
pub fn large_scale_gain(wavelength: f64, rcs: f64, range: f64) -> f64 {
    wavelength.powi(2) * rcs / (64.0 * PI.powi(3) * range.powi(4))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameTruth {
    pub frame: usize,
    pub range_m: Vec<f64>,
    pub azimuth: Vec<f64>,
    pub elevation: Vec<f64>,
    pub delay: Vec<i64>,
    pub doppler_hz: Vec<f64>,
    /// Large-scale gain, frozen at the start of the CPI.
    pub gain: Vec<f64>,
}

impl FrameTruth {
    pub fn len(&self) -> usize {
        self.delay.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delay.is_empty()
    }

    pub fn first_delay(&self) -> Option<i64> {
        self.delay.iter().copied().min()
    }
}

pub fn frame_truth(config: &SceneConfig, scatterers: &[Scatterer], m: usize) -> Result<FrameTruth> {
    let ts = config.sample_period();
    let lambda = config.wavelength();
    let shift = config.velocity_mps * m as f64 * config.frame_period();
    let limit = (config.preamble_samples - config.data_guard_samples) as i64;
    let n = scatterers.len();
    let mut t = FrameTruth {
        frame: m,
        range_m: Vec::with_capacity(n),
        azimuth: Vec::with_capacity(n),
        elevation: Vec::with_capacity(n),
        delay: Vec::with_capacity(n),
        doppler_hz: Vec::with_capacity(n),
        gain: Vec::with_capacity(n),
    };
    for (p, s) in scatterers.iter().enumerate() {
        let pos = [s.position[0] + shift, s.position[1], s.position[2]];
        let (r, az, el) = polar(pos);
        let delay = (2.0 * r / SPEED_OF_LIGHT / ts).round() as i64;
        if delay < 1 || delay >= limit {
            return Err(Error::DelayOutOfFrame {
                scatterer: p,
                frame: m,
                delay,
                limit,
            });
        }
        let (r0, _, _) = polar(s.position);
        t.range_m.push(r);
        t.azimuth.push(az);
        t.elevation.push(el);
        t.delay.push(delay);
        t.doppler_hz
            .push(doppler(config.velocity_mps, az, el, lambda));
        t.gain.push(large_scale_gain(lambda, s.rcs, r0));
    }
    Ok(t)
}

/// Ground truth for every frame of the CPI.
pub fn cpi_truth(config: &SceneConfig, scatterers: &[Scatterer]) -> Result<Vec<FrameTruth>> {
    (0..config.frames())
        .map(|m| frame_truth(config, scatterers, m))
        .collect()
}
