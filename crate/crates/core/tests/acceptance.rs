//! Acceptance criteria 1-10. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::BTreeSet;
use std::fs;
use std::time::Instant;

use isar_core::channel::{self, EchoSynthesizer};
use isar_core::commands::{self, Receiver};
use isar_core::config::{Config, WrapCorrector};
use isar_core::estimator::extract_delays;
use isar_core::imaging;
use isar_core::rng::split_seed;
use isar_core::scene;
use isar_core::waveform::{build_preamble, generate_golay_pair};
use rayon::prelude::*;

const TRIALS: usize = 100;
const ROOT_SEED: u64 = 1;

type Check = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn paper(x0: f64) -> Config {
    let model = match x0 {
        x if x < 0.0 => "sedan-front-quarter",
        x if x > 0.0 => "sedan-rear-quarter",
        _ => "sedan-side",
    };
    Config::paper(model, x0)
}

fn correlate_i64(x: &[i8], y: &[i8], shift: i64) -> i64 {
    // sum_i x[i] y[i + shift]
    x.iter()
        .enumerate()
        .filter_map(|(i, &v)| {
            let j = i as i64 + shift;
            (0..y.len() as i64)
                .contains(&j)
                .then(|| v as i64 * y[j as usize] as i64)
        })
        .sum()
}

fn c1_golay() -> Outcome {
    let t = Instant::now();
    let mut bad = Vec::new();
    for e in 1..=10 {
        let n = 1usize << e;
        let pair = generate_golay_pair(n).expect("power of two");
        for k in -(n as i64 - 1)..n as i64 {
            let s = correlate_i64(&pair.a, &pair.a, k) + correlate_i64(&pair.b, &pair.b, k);
            let want = if k == 0 { 2 * n as i64 } else { 0 };
            if s != want {
                bad.push((n, k, s));
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        bad.is_empty() && secs < 1.0,
        format!("N=2..1024, {} violations, {secs:.3} s", bad.len()),
    )
}

fn c2_guard() -> Outcome {
    let pre = build_preamble();
    let seg = &pre.samples[pre.segment_offset..pre.segment_offset + pre.segment.len()];
    // Correlate the segment against the full preamble at the segment's own
    // position plus a shift.
    let corr = |shift: i64| -> i64 {
        seg.iter()
            .enumerate()
            .filter_map(|(i, &s)| {
                let j = (pre.segment_offset + i) as i64 + shift;
                (0..pre.samples.len() as i64)
                    .contains(&j)
                    .then(|| s as i64 * pre.samples[j as usize] as i64)
            })
            .sum()
    };
    let peak = corr(0);
    let nonzero: Vec<(i64, i64)> = (-128..=-1)
        .chain(1..=64)
        .map(|k| (k, corr(k)))
        .filter(|&(_, v)| v != 0)
        .collect();
    let clean_neg = (1..=128).take_while(|&k| corr(-k) == 0).count();
    let clean_pos = (1..=128).take_while(|&k| corr(k) == 0).count();
    let detail = format!(
        "peak {peak}, {} nonzero shifts in [-128,-1]U[1,64] (first {:?}); zero run is [-{clean_neg}, {clean_pos}]",
        nonzero.len(),
        nonzero.first()
    );
    outcome(peak == 512 && nonzero.is_empty(), detail)
}

fn c3_delays() -> Outcome {
    let t = Instant::now();
    let cfg = paper(0.0);
    let sc = scene::load_scatterers(&cfg).unwrap();
    let rx = Receiver::new(&cfg);
    let hits: Vec<Result<bool, String>> = (0..TRIALS as u64)
        .into_par_iter()
        .map(|t| {
            let seed = split_seed(ROOT_SEED, t);
            let beams = channel::align_beams(&cfg.scene, &sc, seed);
            let synth =
                EchoSynthesizer::new(&cfg.scene, &sc, beams, seed).map_err(|e| e.to_string())?;
            let (frame, truth) = synth.frame(0).map_err(|e| e.to_string())?;
            let profile = rx.correlator.correlate(&frame).map_err(|e| e.to_string())?;
            let got = extract_delays(&profile, rx.sigma_nc, cfg.processing.search_span)
                .map_err(|e| e.name().to_string())?;
            let want: BTreeSet<i64> = truth.delay.iter().copied().collect();
            let got: BTreeSet<i64> = got.delays.iter().copied().collect();
            Ok(got == want)
        })
        .collect();
    let exact = hits.iter().filter(|h| matches!(h, Ok(true))).count();
    let errors: Vec<&String> = hits.iter().filter_map(|h| h.as_ref().err()).collect();
    let secs = t.elapsed().as_secs_f64();
    outcome(
        exact >= 99 && secs < 30.0,
        format!(
            "{exact}/{TRIALS} exact, {} errored {:?}, {secs:.1} s",
            errors.len(),
            errors
        ),
    )
}

fn c4_range_resolution() -> Outcome {
    let g = imaging::geometry(&paper(0.0).scene, 40.0).unwrap();
    outcome(
        (g.delta_r - 0.0852).abs() <= 1e-4,
        format!("delta_r = {:.6} m", g.delta_r),
    )
}

fn c5_doppler_nmse() -> Outcome {
    let t = Instant::now();
    let mut cfg = paper(0.0);
    cfg.run.cpi_list_s = vec![2e-3];
    let sc = scene::load_scatterers(&cfg).unwrap();
    let gap = cfg.processing.frame_gap;
    let sweep = commands::experiment_nmse_doppler(&cfg, &sc, ROOT_SEED, TRIALS, gap, None).unwrap();
    let m = cfg.scene.frames();
    let nmse: Vec<(usize, f64)> = sweep.rows.iter().map(|r| (r.check_frame, r.nmse)).collect();
    let (mut best, mut run, mut best_range) = (0, 0, (0, 0));
    for (j, &(mc, v)) in nmse.iter().enumerate() {
        run = if v <= 1e-3 { run + 1 } else { 0 };
        if run > best {
            best = run;
            best_range = (nmse[j + 1 - run].0, mc);
        }
    }
    let band_min = nmse
        .iter()
        .filter(|(mc, _)| (best_range.0..=best_range.1).contains(mc))
        .map(|&(_, v)| v)
        .fold(f64::INFINITY, f64::min);
    let at = |mc: usize| nmse.iter().find(|r| r.0 == mc).map(|r| r.1).unwrap();
    let (lo, hi) = (at(gap + 1), at(m - 1));
    let secs = t.elapsed().as_secs_f64();
    let pass = best >= 50 && lo >= 10.0 * band_min && hi >= 10.0 * band_min && secs < 600.0;
    outcome(
        pass,
        format!(
            "band <=1e-3 spans m={}..{} ({best} values), min {band_min:.3e}; NMSE(m={})={lo:.3e} ({:.1}x), NMSE(m={})={hi:.3e} ({:.1}x); {} trials used, {secs:.0} s",
            best_range.0,
            best_range.1,
            gap + 1,
            lo / band_min,
            m - 1,
            hi / band_min,
            sweep.trials_used
        ),
    )
}

fn c6_preprocessing() -> Outcome {
    let cfg = paper(0.0);
    let sc = scene::load_scatterers(&cfg).unwrap();
    let sweep = commands::experiment_nmse_diff(&cfg, &sc, ROOT_SEED, TRIALS, 20).unwrap();
    let rows: Vec<_> = sweep.rows.iter().filter(|r| r.gap >= 6).collect();
    let violations: Vec<usize> = rows
        .iter()
        .filter(|r| r.median_with > r.mean_without)
        .map(|r| r.gap)
        .collect();
    let best = rows
        .iter()
        .map(|r| (r.mean_without / r.median_with, r.gap))
        .fold((0.0, 0), |a, b| if b.0 > a.0 { b } else { a });
    let table: Vec<String> = rows
        .iter()
        .map(|r| format!("i={}:{:.1e}/{:.1e}", r.gap, r.median_with, r.mean_without))
        .collect();
    outcome(
        violations.is_empty() && best.0 > 10.0,
        format!(
            "median-with > mean-without at i={violations:?}; max ratio {:.1}x at i={}; [{}]",
            best.0,
            best.1,
            table.join(" ")
        ),
    )
}

fn c7_velocity() -> Outcome {
    let cfg = paper(0.0);
    let sc = scene::load_scatterers(&cfg).unwrap();
    let runs: Vec<_> = (0..TRIALS as u64)
        .into_par_iter()
        .map(|t| {
            commands::run_pipeline(&cfg, &sc, split_seed(ROOT_SEED, t))
                .map(|r| r.report.velocity_mps)
        })
        .collect();
    let mut v: Vec<f64> = runs
        .iter()
        .filter_map(|r| r.as_ref().ok().copied())
        .collect();
    let failed = runs.len() - v.len();
    v.sort_by(f64::total_cmp);
    let med = isar_core::estimator::median(&v);
    let err = (med - 40.0).abs() / 40.0;
    outcome(
        err <= 0.02,
        format!(
            "median {med:.3} m/s ({:.2}%), IQR {:.2}..{:.2}, {} ok / {failed} failed",
            err * 100.0,
            v[v.len() / 4],
            v[3 * v.len() / 4],
            v.len()
        ),
    )
}

struct Placement {
    off: Vec<String>,
    roof_col: f64,
    wheel_col: f64,
    velocity: f64,
}

/// Each scatterer's column is the one its true frame-0 delay lands in; the
/// column must sit within one bin of the geometric range and its peak row
/// within two bins of the Doppler projected with the true velocity.
fn placement(x0: f64, corrector: WrapCorrector) -> Result<Placement, String> {
    let mut cfg = paper(x0);
    cfg.scene.noise = false;
    cfg.scene.clutter = false;
    cfg.processing.corrector = corrector;
    let sc = scene::load_scatterers(&cfg).unwrap();
    let run = commands::run_pipeline(&cfg, &sc, ROOT_SEED).map_err(|e| e.name().to_string())?;
    let geom = imaging::geometry(&cfg.scene, cfg.scene.velocity_mps).unwrap();
    let truth = scene::cpi_truth(&cfg.scene, &sc).unwrap();
    let img = &run.image;
    let (rows, cols) = (img.rows() as i64, img.cols());
    let display_col = |bin: usize| if img.flipped { cols - 1 - bin } else { bin };
    let mut off = Vec::new();
    let (mut roof, mut wheel) = (Vec::new(), Vec::new());
    for (p, s) in sc.iter().enumerate() {
        let (Some(geo), Some(bin)) = (
            geom.range_bin(truth[0].range_m[p]),
            run.geometry.lag_bin(truth[0].delay[p]),
        ) else {
            off.push(format!("p{p} off-plane"));
            continue;
        };
        let dr = bin as i64 - geo as i64;
        let col = display_col(bin);
        let mean_nu = truth.iter().map(|t| t.doppler_hz[p]).sum::<f64>() / truth.len() as f64;
        let expected = (mean_nu * geom.bins_per_hz()).round() as i64;
        let peak = (0..img.rows())
            .max_by(|&a, &b| img.magnitude[a][col].total_cmp(&img.magnitude[b][col]))
            .unwrap() as i64;
        let mut dq = (peak - expected).rem_euclid(rows);
        if dq > rows / 2 {
            dq -= rows;
        }
        if !run.pre_image.occupied.contains(&bin) || dr.abs() > 1 || dq.abs() > 2 {
            off.push(format!("p{p}({dr:+},{dq:+})"));
        }
        match s.label.as_str() {
            "roof" => roof.push(col as f64),
            "wheel" => wheel.push(col as f64),
            _ => {}
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    Ok(Placement {
        off,
        roof_col: mean(&roof),
        wheel_col: mean(&wheel),
        velocity: run.report.velocity_mps,
    })
}

fn c8_placement() -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    for x0 in [-5.0, 0.0, 5.0] {
        match placement(x0, WrapCorrector::Absolute) {
            Ok(pl) => {
                let oriented = pl.roof_col > pl.wheel_col;
                pass &= pl.off.is_empty() && oriented;
                let signed = placement(x0, WrapCorrector::Signed)
                    .map(|s| s.off.len().to_string())
                    .unwrap_or_else(|e| e);
                notes.push(format!(
                    "X0={x0}: V={:.2}, off {:?}, roof/wheel column {:.1}/{:.1} (signed corrector: {signed} off)",
                    pl.velocity, pl.off, pl.roof_col, pl.wheel_col
                ));
            }
            Err(e) => {
                pass = false;
                notes.push(format!("X0={x0}: {e}"));
            }
        }
    }
    outcome(pass, notes.join("; "))
}

fn c9_scaling() -> Outcome {
    let cfg = paper(0.0);
    let g = imaging::geometry(&cfg.scene, 40.0).unwrap();
    let y = cfg.scene.image_size_m[1];
    let product = g.delta_cr * g.n_cr as f64;
    let ulps = (product.to_bits() as i64 - y.to_bits() as i64).abs();
    outcome(
        g.n_cr == cfg.scene.frames() && ulps <= 4,
        format!(
            "delta_cr*N_cr = {product:.15} vs {y} ({ulps} ulp), N_cr = {} vs M = {}",
            g.n_cr,
            cfg.scene.frames()
        ),
    )
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("paper.toml");
    fs::write(&config, include_str!("../../../configs/paper.toml")).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ma = commands::cmd_pipeline(&config, Some(7), &a, None).unwrap();
    let mb = commands::cmd_pipeline(&config, Some(7), &b, None).unwrap();
    let mut names: Vec<String> = ma.artifacts.iter().map(|(n, _)| n.clone()).collect();
    names.push("manifest.txt".into());
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| fs::read(a.join(n)).unwrap() != fs::read(b.join(n)).unwrap())
        .collect();
    outcome(
        differing.is_empty() && ma == mb,
        format!(
            "{} artifacts compared, differing: {differing:?}",
            names.len()
        ),
    )
}

fn main() {
    let criteria: [Check; 10] = [
        ("golay complementarity", c1_golay),
        ("segment guard window", c2_guard),
        ("perfect delay recovery", c3_delays),
        ("range resolution", c4_range_resolution),
        ("doppler nmse band", c5_doppler_nmse),
        ("preprocessing benefit", c6_preprocessing),
        ("velocity", c7_velocity),
        ("image placement", c8_placement),
        ("scaling identities", c9_scaling),
        ("determinism", c10_determinism),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = format!("{}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| f == &id || name.contains(f.as_str())) {
            continue;
        }
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "[{}] criterion {id:>2} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
