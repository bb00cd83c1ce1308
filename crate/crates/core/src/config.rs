//! Run configuration.
//!
//! Configs are TOML files with one table per concern and SI units spelled
//! out in every key name. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Small-scale fading applied to every scatterer's backscatter coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fading {
    /// Unit-magnitude coefficient with a uniformly random phase.
    ConstantModulus,
    /// Unit-variance circular complex Gaussian coefficient.
    Rayleigh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DopplerStatistic {
    Median,
    Mean,
}

/// What the pre-image holds in range bins without a detected scatterer.
/// How the wrap count is read from the two wrapped Doppler estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WrapCorrector {
    /// `|a| - |b|`, direction from the sign of `a`.
    #[default]
    Absolute,
    /// `a - b`. Agrees with `Absolute` whenever `a` and `b` share a sign and
    /// also handles residuals on opposite sides of zero.
    Signed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackgroundFill {
    RangeProfile,
    Zero,
}

/// Physical scenario: waveform, geometry, radio front end.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub bandwidth_hz: f64,
    pub carrier_hz: f64,
    pub frame_samples: usize,
    pub preamble_samples: usize,
    pub data_guard_samples: usize,
    pub cpi_s: f64,
    pub x0_m: f64,
    pub y0_m: f64,
    pub z0_m: f64,
    pub velocity_mps: f64,
    pub vehicle_size_m: [f64; 3],
    pub rcs_dbsm: f64,
    pub tx_power_dbm: f64,
    pub noise_psd_dbm_per_hz: f64,
    pub rician_k_db: f64,
    pub nlos_paths: usize,
    pub tx_array: [usize; 2],
    pub rx_array: [usize; 2],
    pub vehicle_array: [usize; 2],
    pub image_size_m: [f64; 2],
    pub fading: Fading,
    pub clutter: bool,
    pub noise: bool,
}

impl SceneConfig {
    /// Paper parameters with the vehicle reference point at `(x0, 20, -7)`.
    pub fn paper(x0_m: f64) -> Self {
        SceneConfig {
            bandwidth_hz: 1.76e9,
            carrier_hz: 60e9,
            frame_samples: 13632,
            preamble_samples: 3328,
            data_guard_samples: 1,
            cpi_s: 2e-3,
            x0_m,
            y0_m: 20.0,
            z0_m: -7.0,
            velocity_mps: 40.0,
            vehicle_size_m: [4.8, 2.1, 1.5],
            rcs_dbsm: 20.0,
            tx_power_dbm: 30.0,
            noise_psd_dbm_per_hz: -174.0,
            rician_k_db: 12.347,
            nlos_paths: 5,
            tx_array: [8, 8],
            rx_array: [8, 8],
            vehicle_array: [8, 2],
            image_size_m: [15.0, 25.0],
            fading: Fading::ConstantModulus,
            clutter: true,
            noise: true,
        }
    }

    pub fn sample_period(&self) -> f64 {
        1.0 / self.bandwidth_hz
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn frame_period(&self) -> f64 {
        self.frame_samples as f64 * self.sample_period()
    }

    /// Frames per CPI, `floor(CPI / T_f)`.
    pub fn frames(&self) -> usize {
        // Guard against CPI values that are an exact multiple of T_f in
        // decimal but land a hair below it in binary.
        (self.cpi_s / self.frame_period() * (1.0 + 1e-12)).floor() as usize
    }

    /// Distance from the RSU to the vehicle reference point.
    pub fn r0(&self) -> f64 {
        (self.x0_m.powi(2) + self.y0_m.powi(2) + self.z0_m.powi(2)).sqrt()
    }

    /// Symbol energy scale applied to the transmitted samples, in watts.
    pub fn symbol_energy(&self) -> f64 {
        dbm_to_watts(self.tx_power_dbm)
    }

    pub fn noise_power(&self) -> f64 {
        dbm_to_watts(self.noise_psd_dbm_per_hz) * self.bandwidth_hz
    }

    pub fn rcs_total(&self) -> f64 {
        10f64.powf(self.rcs_dbsm / 10.0)
    }

    /// Number of echo samples observed per frame, `K_pre - l_D + 1`.
    pub fn window_len(&self) -> usize {
        self.preamble_samples + 1 - self.data_guard_samples
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let positive = [
            ("bandwidth_hz", self.bandwidth_hz),
            ("carrier_hz", self.carrier_hz),
            ("cpi_s", self.cpi_s),
            ("y0_m", self.y0_m),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.z0_m == 0.0 || !self.z0_m.is_finite() {
            return Err("z0_m must be nonzero (RSU above or below the lane)".into());
        }
        if self.data_guard_samples < 1 || self.data_guard_samples >= self.preamble_samples {
            return Err(format!(
                "data_guard_samples must lie in [1, {}), got {}",
                self.preamble_samples, self.data_guard_samples
            ));
        }
        if self.preamble_samples > self.frame_samples {
            return Err("preamble_samples exceeds frame_samples".into());
        }
        if self.frames() < 2 {
            return Err(format!(
                "cpi_s = {} holds fewer than two frames",
                self.cpi_s
            ));
        }
        for (name, a) in [
            ("tx_array", self.tx_array),
            ("rx_array", self.rx_array),
            ("vehicle_array", self.vehicle_array),
        ] {
            if a[0] == 0 || a[1] == 0 {
                return Err(format!("{name} dimensions must be nonzero"));
            }
        }
        if self.image_size_m.iter().any(|&v| !(v > 0.0)) {
            return Err("image plane size must be positive".into());
        }
        Ok(())
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessingConfig {
    pub search_span: usize,
    pub frame_gap: usize,
    /// `None` selects `floor(M / 2)`.
    pub check_frame: Option<usize>,
    pub statistic: DopplerStatistic,
    pub preprocess: bool,
    pub corrector: WrapCorrector,
    pub background: BackgroundFill,
    pub flip: bool,
}

impl Default for ProcessingConfig {
    fn default() -> Self {
        ProcessingConfig {
            search_span: 48,
            frame_gap: 6,
            check_frame: None,
            statistic: DopplerStatistic::Median,
            preprocess: true,
            corrector: WrapCorrector::Absolute,
            background: BackgroundFill::RangeProfile,
            flip: true,
        }
    }
}

impl ProcessingConfig {
    pub fn check_frame_for(&self, frames: usize) -> usize {
        self.check_frame.unwrap_or(frames / 2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScatterSource {
    Builtin(String),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub trials: usize,
    pub cpi_list_s: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            trials: 100,
            cpi_list_s: vec![2e-3],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub scene: SceneConfig,
    pub scatterers: ScatterSource,
    pub processing: ProcessingConfig,
    pub run: RunConfig,
}

impl Config {
    pub fn paper(model: &str, x0_m: f64) -> Self {
        Config {
            scene: SceneConfig::paper(x0_m),
            scatterers: ScatterSource::Builtin(model.to_string()),
            processing: ProcessingConfig::default(),
            run: RunConfig::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path, None, format!("cannot read config: {e}")))?;
        let mut cfg = Self::parse(&text, path)?;
        if let ScatterSource::File(p) = &mut cfg.scatterers {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Parses config text. `origin` only labels error messages.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1);
            Error::config(origin, line, e.message().to_string())
        })?;
        raw.into_config()
            .map_err(|m| Error::config(origin, None, m))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    waveform: RawWaveform,
    vehicle: RawVehicle,
    radio: RawRadio,
    #[serde(default)]
    processing: RawProcessing,
    #[serde(default)]
    run: RawRun,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWaveform {
    bandwidth_hz: f64,
    carrier_hz: f64,
    frame_samples: usize,
    preamble_samples: usize,
    data_guard_samples: usize,
    cpi_s: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVehicle {
    model: Option<String>,
    scene_file: Option<PathBuf>,
    x0_m: f64,
    y0_m: f64,
    z0_m: f64,
    velocity_mps: f64,
    length_m: f64,
    width_m: f64,
    height_m: f64,
    rcs_dbsm: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRadio {
    tx_power_dbm: f64,
    noise_psd_dbm_per_hz: f64,
    rician_k_db: f64,
    nlos_paths: usize,
    tx_array: [usize; 2],
    rx_array: [usize; 2],
    vehicle_array: [usize; 2],
    #[serde(default = "default_fading")]
    fading: Fading,
    #[serde(default = "yes")]
    clutter: bool,
    #[serde(default = "yes")]
    noise: bool,
}

fn default_fading() -> Fading {
    Fading::ConstantModulus
}

fn yes() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProcessing {
    search_span_samples: usize,
    frame_gap: usize,
    check_frame: Option<usize>,
    doppler_statistic: DopplerStatistic,
    wrap_preprocessing: bool,
    #[serde(default)]
    wrap_corrector: WrapCorrector,
    image_x_size_m: f64,
    image_y_size_m: f64,
    background: BackgroundFill,
    flip: bool,
}

impl Default for RawProcessing {
    fn default() -> Self {
        let p = ProcessingConfig::default();
        let s = SceneConfig::paper(0.0);
        RawProcessing {
            search_span_samples: p.search_span,
            frame_gap: p.frame_gap,
            check_frame: p.check_frame,
            doppler_statistic: p.statistic,
            wrap_preprocessing: p.preprocess,
            wrap_corrector: p.corrector,
            image_x_size_m: s.image_size_m[0],
            image_y_size_m: s.image_size_m[1],
            background: p.background,
            flip: p.flip,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    seed: u64,
    trials: usize,
    cpi_list_s: Vec<f64>,
}

impl Default for RawRun {
    fn default() -> Self {
        let r = RunConfig::default();
        RawRun {
            seed: r.seed,
            trials: r.trials,
            cpi_list_s: r.cpi_list_s,
        }
    }
}

impl RawConfig {
    fn into_config(self) -> std::result::Result<Config, String> {
        let RawConfig {
            waveform: w,
            vehicle: v,
            radio: r,
            processing: p,
            run,
        } = self;
        let scatterers = match (v.model, v.scene_file) {
            (Some(m), None) => ScatterSource::Builtin(m),
            (None, Some(f)) => ScatterSource::File(f),
            _ => return Err("[vehicle] needs exactly one of `model` or `scene_file`".into()),
        };
        let scene = SceneConfig {
            bandwidth_hz: w.bandwidth_hz,
            carrier_hz: w.carrier_hz,
            frame_samples: w.frame_samples,
            preamble_samples: w.preamble_samples,
            data_guard_samples: w.data_guard_samples,
            cpi_s: w.cpi_s,
            x0_m: v.x0_m,
            y0_m: v.y0_m,
            z0_m: v.z0_m,
            velocity_mps: v.velocity_mps,
            vehicle_size_m: [v.length_m, v.width_m, v.height_m],
            rcs_dbsm: v.rcs_dbsm,
            tx_power_dbm: r.tx_power_dbm,
            noise_psd_dbm_per_hz: r.noise_psd_dbm_per_hz,
            rician_k_db: r.rician_k_db,
            nlos_paths: r.nlos_paths,
            tx_array: r.tx_array,
            rx_array: r.rx_array,
            vehicle_array: r.vehicle_array,
            image_size_m: [p.image_x_size_m, p.image_y_size_m],
            fading: r.fading,
            clutter: r.clutter,
            noise: r.noise,
        };
        scene.validate()?;
        if p.frame_gap == 0 {
            return Err("frame_gap must be at least 1".into());
        }
        if run.trials == 0 {
            return Err("trials must be at least 1".into());
        }
        Ok(Config {
            scene,
            scatterers,
            processing: ProcessingConfig {
                search_span: p.search_span_samples,
                frame_gap: p.frame_gap,
                check_frame: p.check_frame,
                statistic: p.doppler_statistic,
                preprocess: p.wrap_preprocessing,
                corrector: p.wrap_corrector,
                background: p.background,
                flip: p.flip,
            },
            run: RunConfig {
                seed: run.seed,
                trials: run.trials,
                cpi_list_s: run.cpi_list_s,
            },
        })
    }
}
