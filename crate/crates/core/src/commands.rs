//! End-to-end runs and the Monte-Carlo experiments behind the CLI.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::channel::{self, BeamPair, EchoFrame, EchoSynthesizer};
use crate::config::{Config, DopplerStatistic, SceneConfig};
use crate::error::{Error, Result};
use crate::estimator::{
    aggregate, associate, compensate_wrap_with, doppler_all_frames, doppler_raw, estimate_velocity,
    extract_delays, lse_h0, phase_scale, preprocess_wrap, CorrelationProfile, Correlator, DelaySet,
    DopplerEstimate, EstimationReport, LseContext,
};
use crate::imaging::{self, ImagingGeometry, IsarImage, PreImage};
use crate::rng::split_seed;
use crate::scene::{self, FrameTruth, Scatterer};
use crate::waveform::{self, GolayPreamble};

/// Shared, seed-independent processing state for one scene config.
pub struct Receiver {
    pub config: Config,
    pub preamble: GolayPreamble,
    pub correlator: Correlator,
    pub lse: LseContext,
    pub sigma_nc: f64,
}

impl Receiver {
    pub fn new(config: &Config) -> Self {
        let preamble = waveform::build_preamble();
        let scene = &config.scene;
        Receiver {
            correlator: Correlator::for_preamble(&preamble, scene.window_len()),
            lse: LseContext::new(&preamble, scene),
            // The threshold assumes the receiver knows the configured
            // noise-plus-clutter level, even when noise is switched off.
            sigma_nc: channel::clutter_power(scene).sigma_nc2.sqrt(),
            preamble,
            config: config.clone(),
        }
    }

    pub fn scene(&self) -> &SceneConfig {
        &self.config.scene
    }

    pub fn estimate_frame(&self, m: usize, frame: &EchoFrame) -> Result<FrameEstimate> {
        let profile = self.correlator.correlate(frame)?;
        let delays = extract_delays(&profile, self.sigma_nc, self.config.processing.search_span)?;
        let h = lse_h0(&self.lse, frame, &delays, self.scene().symbol_energy())?;
        let scale = phase_scale(delays.first(), m, self.scene());
        Ok(FrameEstimate {
            m,
            profile,
            delays,
            h,
            scale,
        })
    }

    /// Doppler chain for one `(m̌, i)` pair, with or without preprocessing.
    pub fn doppler(
        &self,
        reference: &FrameEstimate,
        later: &FrameEstimate,
        earlier: &FrameEstimate,
        preprocess: bool,
        statistic: DopplerStatistic,
    ) -> Result<DopplerEstimate> {
        let gap = later.m - earlier.m;
        let pick = |f: &FrameEstimate| -> Vec<num_complex::Complex64> {
            associate(&reference.delays.delays, &f.delays.delays)
                .into_iter()
                .map(|j| f.h[j])
                .collect()
        };
        let mut raw_later = doppler_raw(&reference.h, &pick(later), later.scale)?;
        let mut raw_earlier = doppler_raw(&reference.h, &pick(earlier), earlier.scale)?;
        let (mut a, mut b) = (raw_later.clone(), raw_earlier.clone());
        if preprocess {
            preprocess_wrap(&mut a, &mut b, later.scale, earlier.scale);
            // Report the preprocessed pair; the raw values stay recoverable
            // from the phase scales.
            raw_later.clone_from(&a);
            raw_earlier.clone_from(&b);
        }
        let compensated = compensate_wrap_with(
            &a,
            &b,
            later.scale,
            earlier.scale,
            self.config.processing.corrector,
        );
        let track = doppler_all_frames(
            &compensated.later,
            &compensated.earlier,
            gap,
            later.m,
            self.scene().frames(),
            statistic,
        );
        Ok(DopplerEstimate {
            check_frame: later.m,
            gap,
            raw_later,
            raw_earlier,
            d_later: later.scale,
            d_earlier: earlier.scale,
            compensated,
            track,
        })
    }
}

#[derive(Debug, Clone)]
pub struct FrameEstimate {
    pub m: usize,
    pub profile: CorrelationProfile,
    pub delays: DelaySet,
    pub h: Vec<num_complex::Complex64>,
    /// `D_m`, Hz per radian.
    pub scale: f64,
}

pub struct PipelineRun {
    pub report: EstimationReport,
    pub profile0: CorrelationProfile,
    pub geometry: ImagingGeometry,
    pub range_profile: Vec<f64>,
    pub pre_image: PreImage,
    pub image: IsarImage,
    pub truth0: FrameTruth,
    pub beams: BeamPair,
}

fn check_frames(config: &Config) -> Result<(usize, usize)> {
    let frames = config.scene.frames();
    let m_check = config.processing.check_frame_for(frames);
    let gap = config.processing.frame_gap;
    if gap == 0 || m_check < gap || m_check >= frames {
        return Err(Error::config(
            "processing",
            None,
            format!("need 0 < frame_gap ({gap}) <= check_frame ({m_check}) < M ({frames})"),
        ));
    }
    Ok((m_check, gap))
}

/// Beam alignment, synthesis of the three frames the estimator touches,
/// delay/LSE/Doppler/velocity estimation and image formation.
pub fn run_pipeline(config: &Config, scatterers: &[Scatterer], seed: u64) -> Result<PipelineRun> {
    let scene = &config.scene;
    let (m_check, gap) = check_frames(config)?;
    let rx = Receiver::new(config);
    let beams = channel::align_beams(scene, scatterers, seed);
    let synth = EchoSynthesizer::new(scene, scatterers, beams.clone(), seed)?;

    let frames = [0, m_check, m_check - gap];
    let estimates = frames
        .par_iter()
        .map(|&m| {
            let (frame, truth) = synth.frame(m)?;
            Ok((rx.estimate_frame(m, &frame)?, truth))
        })
        .collect::<Result<Vec<_>>>()?;
    let [(e0, truth0), (later, _), (earlier, _)]: [(FrameEstimate, FrameTruth); 3] =
        estimates.try_into().expect("three frames");

    let processing = &config.processing;
    let doppler = rx.doppler(
        &e0,
        &later,
        &earlier,
        processing.preprocess,
        processing.statistic,
    )?;
    let rows = &doppler.track.rows;
    let velocity = estimate_velocity(
        &rows[0],
        &rows[rows.len() - 1],
        scene.wavelength(),
        scene.r0(),
        scene.cpi_s,
    )?;
    let geometry = imaging::geometry(scene, velocity)?;
    let pre_image = imaging::build_pre_image(
        &e0.delays,
        rows,
        &e0.profile,
        &geometry,
        processing.background,
    )?;
    let mut image = imaging::form_image(&pre_image, &geometry);
    if processing.flip {
        image = imaging::flip_image(&image);
    }
    Ok(PipelineRun {
        range_profile: imaging::range_profile(&e0.profile, &geometry),
        report: EstimationReport {
            delays: e0.delays.clone(),
            h0: e0.h.clone(),
            doppler,
            velocity_mps: velocity,
        },
        profile0: e0.profile,
        geometry,
        pre_image,
        image,
        truth0,
        beams,
    })
}

/// Index of the true scatterer nearest to each estimated frame-0 delay.
pub fn match_truth(estimated: &[i64], truth0: &FrameTruth) -> Vec<usize> {
    estimated
        .iter()
        .map(|&d| {
            (0..truth0.len())
                .min_by_key(|&p| ((truth0.delay[p] - d).abs(), p))
                .unwrap_or(0)
        })
        .collect()
}

/// Thread pool sized by `ISAR_THREADS`, or rayon's default when unset.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("ISAR_THREADS") {
        let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            Error::config(
                "ISAR_THREADS",
                None,
                format!("expected a positive integer, got `{v}`"),
            )
        })?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub config_text: String,
    pub artifacts: Vec<(String, String)>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

impl RunManifest {
    fn new(command: &str, seed: u64, config_text: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            seed,
            config_text: config_text.to_string(),
            artifacts: Vec::new(),
        }
    }

    /// Writes `bytes` under `dir` and records its checksum.
    fn emit(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(dir.join(name), bytes)?;
        self.artifacts.push((name.to_string(), sha256_hex(bytes)));
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "tool = isar {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(
            s,
            "config_sha256 = {}",
            sha256_hex(self.config_text.as_bytes())
        );
        let _ = writeln!(s, "\n[artifacts]");
        for (name, sum) in &self.artifacts {
            let _ = writeln!(s, "{name} = {sum}");
        }
        let _ = writeln!(s, "\n[config]");
        s.push_str(&self.config_text);
        if !s.ends_with('\n') {
            s.push('\n');
        }
        s
    }

    fn finish(self, dir: &Path) -> Result<RunManifest> {
        fs::write(dir.join("manifest.txt"), self.to_text())?;
        Ok(self)
    }
}

struct Loaded {
    config: Config,
    text: String,
    scatterers: Vec<Scatterer>,
}

fn load(path: &Path) -> Result<Loaded> {
    let config = Config::load(path)?;
    let text = fs::read_to_string(path)?;
    let scatterers = scene::load_scatterers(&config)?;
    Ok(Loaded {
        config,
        text,
        scatterers,
    })
}

fn prepare_out(out: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out)?;
    Ok(out.to_path_buf())
}

/// Synthesizes every frame of the CPI and dumps the echoes and ground truth.
pub fn cmd_simulate(config_path: &Path, seed: Option<u64>, out: &Path) -> Result<RunManifest> {
    let l = load(config_path)?;
    let seed = seed.unwrap_or(l.config.run.seed);
    let dir = prepare_out(out)?;
    let scene = &l.config.scene;
    let pool = thread_pool()?;
    let set = pool.install(|| {
        let beams = channel::align_beams(scene, &l.scatterers, seed);
        channel::synthesize_echoes(scene, &l.scatterers, beams, seed)
    })?;

    let mut manifest = RunManifest::new("simulate", seed, &l.text);
    let mut dump = Vec::new();
    channel::write_echo_dump(&mut dump, &set, seed)?;
    manifest.emit(&dir, "echoes.bin", &dump)?;

    let mut csv = String::from(
        "frame,scatterer,label,range_m,azimuth_rad,elevation_rad,delay_samples,doppler_hz,gain,window_start\n",
    );
    for (t, f) in set.truth.iter().zip(&set.frames) {
        for p in 0..t.len() {
            let _ = writeln!(
                csv,
                "{},{},{},{:.9},{:.9e},{:.9e},{},{:.9e},{:.9e},{}",
                t.frame,
                p,
                l.scatterers[p].label,
                t.range_m[p],
                t.azimuth[p],
                t.elevation[p],
                t.delay[p],
                t.doppler_hz[p],
                t.gain[p],
                f.start
            );
        }
    }
    manifest.emit(&dir, "truth.csv", csv.as_bytes())?;
    manifest.finish(&dir)
}

/// Full estimation and imaging run. `flip` overrides the config when set.
pub fn cmd_pipeline(
    config_path: &Path,
    seed: Option<u64>,
    out: &Path,
    flip: Option<bool>,
) -> Result<RunManifest> {
    let mut l = load(config_path)?;
    if let Some(f) = flip {
        l.config.processing.flip = f;
    }
    let seed = seed.unwrap_or(l.config.run.seed);
    let dir = prepare_out(out)?;
    let run = thread_pool()?.install(|| run_pipeline(&l.config, &l.scatterers, seed))?;

    let mut manifest = RunManifest::new("pipeline", seed, &l.text);
    manifest.emit(&dir, "report.txt", run.report.to_text().as_bytes())?;

    let mut csv = String::from("range_m,magnitude\n");
    for (r, v) in run.geometry.range_axis().iter().zip(&run.range_profile) {
        let _ = writeln!(csv, "{r:.6},{v:.9e}");
    }
    manifest.emit(&dir, "range_profile.csv", csv.as_bytes())?;

    let mut pgm = Vec::new();
    run.image.write_pgm(&mut pgm)?;
    manifest.emit(&dir, "image.pgm", &pgm)?;
    manifest.emit(&dir, "image.txt", run.image.sidecar().as_bytes())?;
    let mut img_csv = Vec::new();
    run.image.write_csv(&mut img_csv)?;
    manifest.emit(&dir, "image.csv", &img_csv)?;
    manifest.finish(&dir)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffRow {
    pub gap: usize,
    pub median_with: f64,
    pub median_without: f64,
    pub mean_with: f64,
    pub mean_without: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep<T> {
    pub rows: Vec<T>,
    pub trials_used: usize,
    pub trials_failed: usize,
}

/// Relative squared error of one aggregated Doppler difference.
fn diff_error(est: &DopplerEstimate, reference: &[f64], stat: DopplerStatistic) -> f64 {
    let truth = aggregate(reference, stat);
    (est.track.delta - truth).powi(2) / truth.powi(2)
}

/// Per-trial squared errors for gaps `1..=max_gap` at `m̌ = M - 1`.
fn diff_trial(
    rx: &Receiver,
    scatterers: &[Scatterer],
    seed: u64,
    max_gap: usize,
) -> Result<Vec<[f64; 4]>> {
    let scene = rx.scene();
    let last = scene.frames() - 1;
    let beams = channel::align_beams(scene, scatterers, seed);
    let synth = EchoSynthesizer::new(scene, scatterers, beams, seed)?;
    let est = |m: usize| -> Result<(FrameEstimate, FrameTruth)> {
        let (frame, truth) = synth.frame(m)?;
        Ok((rx.estimate_frame(m, &frame)?, truth))
    };
    let (e0, t0) = est(0)?;
    let (el, tl) = est(last)?;
    let matched = match_truth(&e0.delays.delays, &t0);
    (1..=max_gap)
        .map(|gap| {
            let (ee, te) = est(last - gap)?;
            let reference: Vec<f64> = matched
                .iter()
                .map(|&p| (tl.doppler_hz[p] - te.doppler_hz[p]) / gap as f64)
                .collect();
            let mut out = [0.0; 4];
            let variants = [
                (DopplerStatistic::Median, true),
                (DopplerStatistic::Median, false),
                (DopplerStatistic::Mean, true),
                (DopplerStatistic::Mean, false),
            ];
            for (slot, (stat, pre)) in out.iter_mut().zip(variants) {
                let d = rx.doppler(&e0, &el, &ee, pre, stat)?;
                *slot = diff_error(&d, &reference, stat);
            }
            Ok(out)
        })
        .collect()
}

/// NMSE of the aggregated Doppler difference versus frame gap.
pub fn experiment_nmse_diff(
    config: &Config,
    scatterers: &[Scatterer],
    root_seed: u64,
    trials: usize,
    max_gap: usize,
) -> Result<Sweep<DiffRow>> {
    let frames = config.scene.frames();
    if max_gap == 0 || max_gap >= frames {
        return Err(Error::config(
            "nmse-diff",
            None,
            format!("gap range 1..={max_gap} does not fit M = {frames}"),
        ));
    }
    let rx = Receiver::new(config);
    let results: Vec<Result<Vec<[f64; 4]>>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| diff_trial(&rx, scatterers, split_seed(root_seed, t), max_gap))
        .collect();
    let ok: Vec<&Vec<[f64; 4]>> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    let failed = results.len() - ok.len();
    if ok.is_empty() {
        return Err(results
            .into_iter()
            .find_map(|r| r.err())
            .expect("at least one failure"));
    }
    let n = ok.len() as f64;
    let rows = (0..max_gap)
        .map(|g| {
            let mut acc = [0.0; 4];
            for trial in &ok {
                for (a, v) in acc.iter_mut().zip(trial[g]) {
                    *a += v / n;
                }
            }
            DiffRow {
                gap: g + 1,
                median_with: acc[0],
                median_without: acc[1],
                mean_with: acc[2],
                mean_without: acc[3],
            }
        })
        .collect();
    Ok(Sweep {
        rows,
        trials_used: ok.len(),
        trials_failed: failed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DopplerRow {
    pub cpi_s: f64,
    pub check_frame: usize,
    pub nmse: f64,
}

/// Per-trial `(1/N̂p) Σ_p ((ν̂̂_p - ν_p) / ν_p)^2` for every `m̌` in `checks`.
fn doppler_trial(
    rx: &Receiver,
    scatterers: &[Scatterer],
    seed: u64,
    gap: usize,
    checks: &[usize],
) -> Result<Vec<f64>> {
    let scene = rx.scene();
    let beams = channel::align_beams(scene, scatterers, seed);
    let synth = EchoSynthesizer::new(scene, scatterers, beams, seed)?;
    let mut needed: Vec<usize> = std::iter::once(0)
        .chain(checks.iter().flat_map(|&m| [m, m - gap]))
        .collect();
    needed.sort_unstable();
    needed.dedup();
    let mut est: Vec<Option<(FrameEstimate, FrameTruth)>> = vec![None; scene.frames()];
    for m in needed {
        let (frame, truth) = synth.frame(m)?;
        est[m] = Some((rx.estimate_frame(m, &frame)?, truth));
    }
    let get = |m: usize| est[m].as_ref().expect("frame estimated");
    let (e0, t0) = get(0);
    let matched = match_truth(&e0.delays.delays, t0);
    checks
        .iter()
        .map(|&m| {
            let (el, tl) = get(m);
            let (ee, _) = get(m - gap);
            let d = rx.doppler(e0, el, ee, true, DopplerStatistic::Median)?;
            let err: f64 = d
                .compensated
                .later
                .iter()
                .zip(&matched)
                .map(|(v, &p)| ((v - tl.doppler_hz[p]) / tl.doppler_hz[p]).powi(2))
                .sum();
            Ok(err / matched.len() as f64)
        })
        .collect()
}

/// NMSE of the compensated Doppler at `m̌`, swept over `m̌` for each CPI.
pub fn experiment_nmse_doppler(
    config: &Config,
    scatterers: &[Scatterer],
    root_seed: u64,
    trials: usize,
    gap: usize,
    check: Option<usize>,
) -> Result<Sweep<DopplerRow>> {
    let cpis = if config.run.cpi_list_s.is_empty() {
        vec![config.scene.cpi_s]
    } else {
        config.run.cpi_list_s.clone()
    };
    let mut rows = Vec::new();
    let (mut used, mut failed) = (usize::MAX, 0);
    for cpi in cpis {
        let mut cfg = config.clone();
        cfg.scene.cpi_s = cpi;
        let frames = cfg.scene.frames();
        let checks: Vec<usize> = match check {
            Some(m) => vec![m],
            None => (gap + 1..frames).collect(),
        };
        if gap == 0 || checks.iter().any(|&m| m <= gap || m >= frames) {
            return Err(Error::config(
                "nmse-doppler",
                None,
                format!(
                    "check frames must lie in [{}, {}] for CPI {cpi} s",
                    gap + 1,
                    frames - 1
                ),
            ));
        }
        let rx = Receiver::new(&cfg);
        let results: Vec<Result<Vec<f64>>> = (0..trials as u64)
            .into_par_iter()
            .map(|t| doppler_trial(&rx, scatterers, split_seed(root_seed, t), gap, &checks))
            .collect();
        let ok: Vec<&Vec<f64>> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
        if ok.is_empty() {
            return Err(results
                .into_iter()
                .find_map(|r| r.err())
                .expect("at least one failure"));
        }
        used = used.min(ok.len());
        failed = failed.max(results.len() - ok.len());
        for (j, &m) in checks.iter().enumerate() {
            let nmse = ok.iter().map(|t| t[j]).sum::<f64>() / ok.len() as f64;
            rows.push(DopplerRow {
                cpi_s: cpi,
                check_frame: m,
                nmse,
            });
        }
    }
    Ok(Sweep {
        rows,
        trials_used: used,
        trials_failed: failed,
    })
}

pub fn cmd_experiment_nmse_diff(
    config_path: &Path,
    seed: Option<u64>,
    out: &Path,
    trials: Option<usize>,
    max_gap: Option<usize>,
) -> Result<RunManifest> {
    let l = load(config_path)?;
    let seed = seed.unwrap_or(l.config.run.seed);
    let trials = trials.unwrap_or(l.config.run.trials);
    let max_gap = max_gap.unwrap_or(20);
    let dir = prepare_out(out)?;
    let sweep = thread_pool()?
        .install(|| experiment_nmse_diff(&l.config, &l.scatterers, seed, trials, max_gap))?;
    let mut csv = String::from("frame_gap,median_with_preprocessing,median_without_preprocessing,mean_with_preprocessing,mean_without_preprocessing,trials_used\n");
    for r in &sweep.rows {
        let _ = writeln!(
            csv,
            "{},{:.9e},{:.9e},{:.9e},{:.9e},{}",
            r.gap, r.median_with, r.median_without, r.mean_with, r.mean_without, sweep.trials_used
        );
    }
    let mut manifest = RunManifest::new("nmse-diff", seed, &l.text);
    manifest.emit(&dir, "nmse_diff.csv", csv.as_bytes())?;
    manifest.finish(&dir)
}

pub fn cmd_experiment_nmse_doppler(
    config_path: &Path,
    seed: Option<u64>,
    out: &Path,
    trials: Option<usize>,
    gap: Option<usize>,
    check: Option<usize>,
) -> Result<RunManifest> {
    let l = load(config_path)?;
    let seed = seed.unwrap_or(l.config.run.seed);
    let trials = trials.unwrap_or(l.config.run.trials);
    let gap = gap.unwrap_or(l.config.processing.frame_gap);
    let dir = prepare_out(out)?;
    let sweep = thread_pool()?
        .install(|| experiment_nmse_doppler(&l.config, &l.scatterers, seed, trials, gap, check))?;
    let mut csv = String::from("cpi_s,check_frame,nmse,trials_used\n");
    for r in &sweep.rows {
        let _ = writeln!(
            csv,
            "{},{},{:.9e},{}",
            r.cpi_s, r.check_frame, r.nmse, sweep.trials_used
        );
    }
    let mut manifest = RunManifest::new("nmse-doppler", seed, &l.text);
    manifest.emit(&dir, "nmse_doppler.csv", csv.as_bytes())?;
    manifest.finish(&dir)
}
