//! End-to-end acceptance checks. Runs as a plain binary (no libtest harness)
//! and prints one PASS/FAIL line per criterion.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use melsubband::beamformer::{
    apply_weights, estimate_weights, separate, Mode, SeparateConfig, SeparationInput,
};
use melsubband::cost::{count_macs, PipelineShapes, ProcessingMode};
use melsubband::estimator::{
    apply_crf_stacked, compute_scm, fit_crf, ground_truth_target, ComplexRatioFilter, Target,
};
use melsubband::metrics::{sdr, si_snr};
use melsubband::scene::{
    estimate_rt60, render_scene, simulate_rir, synth_speech, CabinSpec, Distortion, RenderOptions,
    SceneRender, SPEED_OF_SOUND,
};
use melsubband::subband::{
    analyze, make_band_plan, round_trip, synthesize, AnalysisFilters, SynthesisFilters,
};
use melsubband::{istft, stft, Spectrogram, StftConfig, Waveform};
use nalgebra::{Complex, DMatrix};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FS: u32 = 16_000;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

fn db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

fn talker(seed: u64, secs: f64) -> Waveform {
    let n = (secs * FS as f64) as usize;
    Waveform::mono(synth_speech(seed, n, FS), FS).unwrap()
}

fn two_talkers(rt60: f64, snr_db: Option<f64>) -> SceneRender {
    let spec = CabinSpec {
        rt60,
        ..Default::default()
    };
    let sources = [Some(talker(1, 3.0)), Some(talker(2, 3.0)), None, None];
    let opts = RenderOptions {
        snr_db,
        ..Default::default()
    };
    render_scene(&spec, &sources, None, &opts).unwrap()
}

fn power_of(x: &Waveform) -> f64 {
    x.channel(0).iter().map(|v| v * v).sum()
}

// ---------------------------------------------------------------------------

fn c01_stft_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 3 * FS as usize;
    let x = Waveform::new(
        (0..2)
            .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect(),
        FS,
    )
    .unwrap();
    let cfg = StftConfig::default();
    let start = Instant::now();
    let y = istft(&stft(&x, &cfg).unwrap()).unwrap();
    let took = start.elapsed();
    let edge = cfg.window_len;
    let mut worst: f64 = 0.0;
    for c in 0..2 {
        let a = &y.channel(c)[edge..n - edge];
        let b = &x.channel(c)[edge..n - edge];
        worst = worst.max(rel_l2(a, b));
    }
    check(
        worst <= 1e-6 && took < Duration::from_secs(1),
        format!("interior rel. L2 {worst:.2e} (<= 1e-6), {took:.2?} (< 1 s)"),
    )
}

/// Brute-force mel edges: walk every bin and assign it to the band whose mel
/// interval holds the rounded boundary, then repair collisions.
fn brute_force_edges(bins: usize, bands: usize, fs: f64) -> Vec<usize> {
    let mel = |hz: f64| 2595.0 * (1.0 + hz / 700.0).log10();
    let inv = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let nyq = fs / 2.0;
    let top = mel(nyq);
    let mut e = vec![0usize; bands + 1];
    for (k, slot) in e.iter_mut().enumerate() {
        let hz = inv(top * k as f64 / bands as f64);
        let pos = hz * (bins - 1) as f64 / nyq;
        // nearest integer by exhaustive search rather than round()
        let mut best = 0usize;
        for cand in 0..=bins {
            if (cand as f64 - pos).abs() < (best as f64 - pos).abs() - 1e-12 {
                best = cand;
            }
        }
        *slot = best;
    }
    e[0] = 0;
    e[bands] = bins;
    for k in 1..bands {
        if e[k] <= e[k - 1] {
            e[k] = e[k - 1] + 1;
        }
    }
    for k in (1..bands).rev() {
        if e[k] >= e[k + 1] {
            e[k] = e[k + 1] - 1;
        }
    }
    e
}

fn c02_band_plan() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for k in [8, 16, 32, 64] {
        let plan = make_band_plan(257, k, FS).unwrap();
        let oracle = brute_force_edges(257, k, FS as f64);
        let same = plan.edges == oracle;
        let widths = plan.widths();
        let nonempty = widths.iter().all(|&w| w >= 1);
        // non-decreasing up to one bin of rounding slack
        let monotone = widths.windows(2).all(|p| p[1] + 1 >= p[0]);
        ok &= same && nonempty && monotone;
        notes.push(format!(
            "K={k}: edges {} widths {}..{}",
            if same { "match" } else { "DIFFER" },
            widths[0],
            widths[k - 1]
        ));
    }
    check(ok, notes.join("; "))
}

fn c03_subband_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (frames, depth) = (12, 20);
    let x: Vec<f64> = (0..frames * 257 * depth)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let mut worst: f64 = 0.0;
    let mut embeddings = Vec::new();
    for k in [8, 16, 32, 64] {
        let plan = make_band_plan(257, k, FS).unwrap();
        // a lossless projection needs at least as many dims as the widest band
        let e = plan.max_width().max(32);
        embeddings.push(e);
        let a = AnalysisFilters::orthonormal(&plan, e, 5).unwrap();
        let s = SynthesisFilters::pseudo_inverse(&a).unwrap();
        let y = synthesize(&analyze(&x, frames, depth, &plan, &a).unwrap(), &plan, &s).unwrap();
        let y2 = round_trip(&x, frames, depth, &plan, &a, &s).unwrap();
        worst = worst.max(rel_l2(&y, &x)).max(rel_l2(&y2, &x));
    }
    check(
        worst <= 1e-6,
        format!("max rel. error {worst:.2e} (<= 1e-6) for K = 8/16/32/64 with E = {embeddings:?}"),
    )
}

fn c04_degenerate_bands() -> Outcome {
    let r = two_talkers(0.3, Some(10.0));
    let mut input = SeparationInput::new(&r.mixture);
    input.targets = Some(&r.targets);
    let run = |mode, bands| {
        let cfg = SeparateConfig {
            mode,
            bands,
            ..Default::default()
        };
        separate(&input, &cfg).unwrap().outputs
    };
    let sub = run(Mode::OracleMvdrSubband, 257);
    let full = run(Mode::OracleMvdrFullband, 257);
    let mut worst: f64 = 0.0;
    for (a, b) in sub.iter().zip(&full) {
        if power_of(b) > 0.0 {
            worst = worst.max(rel_l2(a.channel(0), b.channel(0)));
        } else {
            worst = worst.max(power_of(a).sqrt());
        }
    }
    check(
        worst <= 1e-6,
        format!("K=257 vs full-band rel. L2 {worst:.2e} (<= 1e-6)"),
    )
}

fn c05_scm_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = StftConfig {
        fft_size: 8,
        window_len: 8,
        hop: 4,
        ..Default::default()
    };
    let (channels, frames) = (3, 1000);
    let bins = cfg.num_bins();
    let data: Vec<Complex64> = (0..channels * frames * bins)
        .map(|_| {
            let scale = 10f64.powf(rng.random_range(-3.0..3.0));
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * scale
        })
        .collect();
    let spec = Spectrogram::from_data(data, channels, frames, cfg, (frames - 1) * 4, FS).unwrap();
    let scm = compute_scm(&spec, Target::Speech, 0);
    let mut herm: f64 = 0.0;
    let mut psd: f64 = f64::INFINITY;
    let mut count = 0;
    for t in 0..frames {
        for f in 0..bins {
            let phi = scm.get(t, f);
            let n = channels;
            let m = DMatrix::from_fn(n, n, |i, j| {
                Complex::new(phi[i * n + j].re, phi[i * n + j].im)
            });
            let norm = m.norm();
            let diff = (&m - m.adjoint()).norm();
            herm = herm.max(diff / norm.max(f64::MIN_POSITIVE));
            let trace: f64 = (0..n).map(|i| m[(i, i)].re).sum();
            let eig = m.clone().symmetric_eigenvalues().min();
            psd = psd.min(eig / trace);
            count += 1;
        }
    }
    check(
        count >= 5000 && herm <= 1e-10 && psd >= -1e-9,
        format!(
            "{count} SCMs: Hermitian err {herm:.1e} (<= 1e-10), min eig/trace {psd:.1e} (>= -1e-9)"
        ),
    )
}

fn c06_crf_degeneracy() -> Outcome {
    let cfg = StftConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let w = Waveform::new(
        (0..3)
            .map(|_| (0..8000).map(|_| rng.random_range(-0.5..0.5)).collect())
            .collect(),
        FS,
    )
    .unwrap();
    let s = stft(&w, &cfg).unwrap();
    let id = ComplexRatioFilter::identity(s.num_frames(), s.num_bins(), 1, 3).unwrap();
    let exact = apply_crf_stacked(&s, &id).unwrap() == s;

    let echo_scene = {
        let spec = CabinSpec::default();
        let opts = RenderOptions {
            snr_db: Some(5.0),
            ser_db: Some(-5.0),
            distortion: Distortion::Clip { threshold: 0.5 },
            ..Default::default()
        };
        render_scene(
            &spec,
            &[None, Some(talker(4, 2.0)), None, None],
            Some(&talker(8, 2.0)),
            &opts,
        )
        .unwrap()
    };
    let scenes = [
        two_talkers(0.3, Some(10.0)),
        two_talkers(0.0, Some(0.0)),
        echo_scene,
    ];
    let mut all_ok = exact;
    let mut worst_ratio: f64 = 0.0;
    let mut fits = 0;
    for r in &scenes {
        let mix = stft(&r.mixture, &cfg).unwrap();
        let echo = stft(&r.echo_ref, &cfg).unwrap();
        let stacked = Spectrogram::stack(&[&mix, &echo]).unwrap();
        for z in 0..r.num_zones() {
            if !r.active[z] {
                continue;
            }
            let image = stft(&r.targets[z], &cfg).unwrap();
            for target in [Target::Speech, Target::Noise] {
                let truth = ground_truth_target(&mix, &echo, &image, target).unwrap();
                let residual = |taps| {
                    let crf = fit_crf(&stacked, &truth, taps, target, z).unwrap();
                    let est = apply_crf_stacked(&stacked, &crf).unwrap();
                    est.data()
                        .iter()
                        .zip(truth.data())
                        .map(|(a, b)| (a - b).norm_sqr())
                        .sum::<f64>()
                };
                let (r1, r3) = (residual(1), residual(3));
                worst_ratio = worst_ratio.max(r3 / r1);
                all_ok &= r3 <= r1 * (1.0 + 1e-12);
                fits += 1;
            }
        }
    }
    check(
        all_ok,
        format!(
            "identity exact: {exact}; {fits} fits, worst 3-tap/1-tap residual {worst_ratio:.3}"
        ),
    )
}

/// Interferer power after the zone's weights, relative to before, in dB.
fn interferer_reduction(r: &SceneRender, cfg: &SeparateConfig) -> f64 {
    let mut input = SeparationInput::new(&r.mixture);
    input.targets = Some(&r.targets);
    let w = estimate_weights(&input, cfg).unwrap();
    let n = r.mixture.len();
    let silence = stft(&Waveform::zeros(1, n, FS).unwrap(), &cfg.stft).unwrap();
    let mut worst = f64::INFINITY;
    for (zone, other) in [(0, 1), (1, 0)] {
        let spec = stft(&r.targets[other], &cfg.stft).unwrap();
        let out = apply_weights(&spec, &silence, &w).unwrap();
        let y = istft(&out[zone]).unwrap();
        let before = power_of(&r.targets[other]);
        worst = worst.min(db(before / power_of(&y)));
    }
    worst
}

fn c07_oracle_separation() -> Outcome {
    let start = Instant::now();
    let r = two_talkers(0.3, Some(10.0));
    let cfg = SeparateConfig {
        mode: Mode::OracleMvdrSubband,
        bands: 64,
        ..Default::default()
    };
    let mut input = SeparationInput::new(&r.mixture);
    input.targets = Some(&r.targets);
    let out = separate(&input, &cfg).unwrap();
    let mix = r.mixture.select(0).unwrap();
    let mut gains = Vec::new();
    for z in 0..2 {
        let target = r.targets[z].select(0).unwrap();
        let before = si_snr(&mix, &target).unwrap();
        let after = si_snr(&out.outputs[z], &target).unwrap();
        gains.push(after - before);
    }
    let took = start.elapsed();
    let anechoic = interferer_reduction(&two_talkers(0.0, None), &cfg);
    let noisy = interferer_reduction(&two_talkers(0.0, Some(10.0)), &cfg);
    let min_gain = gains.iter().cloned().fold(f64::INFINITY, f64::min);
    check(
        min_gain >= 8.0 && anechoic >= 15.0 && took < Duration::from_secs(30),
        format!(
            "Si-SNR gain {:.2} / {:.2} dB (>= 8), anechoic interferer reduction {anechoic:.1} dB (>= 15; {noisy:.1} dB with 10 dB noise), scene {took:.2?} (< 30 s)",
            gains[0], gains[1]
        ),
    )
}

fn c08_echo_suppression() -> Outcome {
    let spec = CabinSpec {
        rt60: 0.1,
        ..Default::default()
    };
    let opts = RenderOptions {
        snr_db: None,
        ser_db: Some(-10.0),
        distortion: Distortion::Clip { threshold: 0.5 },
        ..Default::default()
    };
    let r = render_scene(
        &spec,
        &[Some(talker(1, 3.0)), None, None, None],
        Some(&talker(9, 3.0)),
        &opts,
    )
    .unwrap();
    let cfg = SeparateConfig::default();
    let mut input = SeparationInput::new(&r.mixture);
    input.targets = Some(&r.targets);
    input.echo_ref = Some(&r.echo_ref);
    let w = estimate_weights(&input, &cfg).unwrap();
    let e_img = stft(&r.echo_image, &cfg.stft).unwrap();
    let e_ref = stft(&r.echo_ref, &cfg.stft).unwrap();
    let before = power_of(&r.echo_image);
    let suppression = |w| {
        let out = apply_weights(&e_img, &e_ref, w).unwrap();
        db(before / power_of(&istft(&out[0]).unwrap()))
    };
    let with_echo = suppression(&w);
    let mut blind = w.clone();
    let c = blind.channels;
    for coeffs in blind.w.chunks_mut(c) {
        coeffs[c - 1] = Complex64::new(0.0, 0.0);
    }
    let without = suppression(&blind);
    check(
        with_echo >= 10.0 && without <= 3.0,
        format!(
            "echo suppressed {with_echo:.1} dB (>= 10), {without:.2} dB with echo weights zeroed (<= 3)"
        ),
    )
}

/// Published GMACs for the narrow-band, 64-subband and full-band systems.
const REFERENCE_GMACS: [(&str, f64); 3] = [("NB", 22.46), ("SB(64)", 4.57), ("FB", 1.32)];

fn c09_cost_scaling() -> Outcome {
    let shapes = PipelineShapes::default();
    let nb = count_macs(ProcessingMode::Nb, &shapes).unwrap();
    let sb: Vec<_> = [64, 32, 16, 8]
        .iter()
        .map(|&k| count_macs(ProcessingMode::Sb(k), &shapes).unwrap())
        .collect();
    let fb = count_macs(ProcessingMode::Fb, &shapes).unwrap();
    let ratio = nb.breakdown.estimator as f64 / sb[0].breakdown.estimator as f64;
    let mut chain = vec![&nb];
    chain.extend(sb.iter());
    chain.push(&fb);
    let ordered = chain
        .windows(2)
        .all(|p| p[0].macs_per_second > p[1].macs_per_second);
    let table: Vec<String> = chain
        .iter()
        .map(|r| format!("{} {:.2}", r.mode, r.gmacs()))
        .collect();
    let ours = [nb.gmacs(), sb[0].gmacs(), fb.gmacs()];
    let same_order = REFERENCE_GMACS
        .windows(2)
        .zip(ours.windows(2))
        .all(|(r, o)| (r[0].1 > r[1].1) == (o[0] > o[1]));
    let reference: Vec<String> = REFERENCE_GMACS
        .iter()
        .map(|(m, g)| format!("{m} {g}"))
        .collect();
    check(
        (3.6..=4.4).contains(&ratio) && ordered && same_order,
        format!(
            "estimator NB/SB(64) {ratio:.3} (in [3.6, 4.4]); GMACs/s {}; reference order {}",
            table.join(" > "),
            reference.join(" > ")
        ),
    )
}

fn c10_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let s: Vec<f64> = (0..16000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let e: Vec<f64> = s.iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
    let sw = Waveform::mono(s.clone(), FS).unwrap();
    let ew = Waveform::mono(e, FS).unwrap();
    let base = si_snr(&ew, &sw).unwrap();
    let mut drift: f64 = 0.0;
    for _ in 0..50 {
        let g = 10f64.powf(rng.random_range(-3.0..3.0));
        drift = drift.max((si_snr(&ew.scaled(g), &sw).unwrap() - base).abs());
    }

    // equal-power noise orthogonal to the zero-mean reference
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let ms = mean(&s);
    let sc: Vec<f64> = s.iter().map(|v| v - ms).collect();
    let raw: Vec<f64> = (0..sc.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mr = mean(&raw);
    let mut n: Vec<f64> = raw.iter().map(|v| v - mr).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let proj = dot(&n, &sc) / dot(&sc, &sc);
    n.iter_mut().zip(&sc).for_each(|(v, r)| *v -= proj * r);
    let g = (dot(&sc, &sc) / dot(&n, &n)).sqrt();
    let mixed: Vec<f64> = sc.iter().zip(&n).map(|(a, b)| a + g * b).collect();
    let zero_db = si_snr(
        &Waveform::mono(mixed, FS).unwrap(),
        &Waveform::mono(sc, FS).unwrap(),
    )
    .unwrap();

    let spec = CabinSpec::default();
    let opts = RenderOptions {
        snr_db: Some(-4.5),
        ..Default::default()
    };
    let r = render_scene(
        &spec,
        &[Some(talker(3, 4.0)), None, None, None],
        None,
        &opts,
    )
    .unwrap();
    let unprocessed = sdr(
        &r.mixture.select(0).unwrap(),
        &r.targets[0].select(0).unwrap(),
    )
    .unwrap();
    check(
        drift <= 1e-9 && zero_db.abs() <= 0.1 && (unprocessed + 4.374).abs() <= 1.0,
        format!(
            "scale drift {drift:.1e} dB (<= 1e-9), orthogonal case {zero_db:+.4} dB (0 +- 0.1), unprocessed SDR {unprocessed:.3} dB (-4.374 +- 1)"
        ),
    )
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            (name, std::fs::read(&p).unwrap())
        })
        .collect()
}

/// Run one `melsub` invocation in-process on a pool of `threads` workers.
fn cli(threads: usize, args: &[&str]) -> i32 {
    use clap::Parser;
    let mut full = vec!["melsub"];
    full.extend_from_slice(args);
    let parsed = melsubband::cli::Cli::try_parse_from(full).unwrap();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap();
    match pool.install(|| melsubband::cli::execute(&parsed)) {
        Ok(_) => 0,
        Err(e) => e.exit_code(),
    }
}

fn c11_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let mut runs = Vec::new();
    for (run, threads) in [(0, 1), (1, 1), (2, 8)] {
        let scene = root.join(format!("scene{run}"));
        let out = root.join(format!("sep{run}"));
        let stub = root.join(format!("stub{run}"));
        let s = scene.to_str().unwrap();
        let codes = [
            cli(
                threads,
                &[
                    "simulate", "--seed", "7", "--echo", "--snr", "5", "--out", s,
                ],
            ),
            cli(
                threads,
                &[
                    "separate",
                    "--input",
                    s,
                    "--png",
                    "--out",
                    out.to_str().unwrap(),
                ],
            ),
            cli(
                threads,
                &[
                    "separate",
                    "--input",
                    s,
                    "--mode",
                    "stub-srnn",
                    "--bands",
                    "8",
                    "--out",
                    stub.to_str().unwrap(),
                ],
            ),
        ];
        if codes.iter().any(|&c| c != 0) {
            return Err(format!("run {run} exit codes {codes:?}"));
        }
        runs.push((dir_bytes(&scene), dir_bytes(&out), dir_bytes(&stub)));
    }
    let files: usize = runs[0].0.len() + runs[0].1.len() + runs[0].2.len();
    let same = runs.windows(2).all(|p| p[0] == p[1]);
    check(
        same,
        format!("{files} files byte-identical across 2 runs and 1 vs 8 threads: {same}"),
    )
}

/// T30 slope fit on a backward-integrated energy decay curve.
fn schroeder_rt60(h: &[f64], fs: f64) -> f64 {
    let mut edc: Vec<f64> = h.iter().map(|v| v * v).collect();
    for i in (0..edc.len() - 1).rev() {
        edc[i] += edc[i + 1];
    }
    let total = edc[0];
    let pts: Vec<(f64, f64)> = edc
        .iter()
        .enumerate()
        .map(|(i, e)| (i as f64 / fs, db(e / total)))
        .filter(|(_, l)| (-35.0..=-5.0).contains(l))
        .collect();
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / n, sy / n);
    let cov: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let var: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    -60.0 / (cov / var)
}

fn c12_rir_geometry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let base = CabinSpec::default();
    let inside = |rng: &mut ChaCha8Rng| {
        let d = base.dims;
        [
            rng.random_range(0.1..d[0] - 0.1),
            rng.random_range(0.1..d[1] - 0.1),
            rng.random_range(0.1..d[2] - 0.1),
        ]
    };
    let mut worst: f64 = 0.0;
    let mut placed = 0;
    while placed < 50 {
        let mic = inside(&mut rng);
        let src = inside(&mut rng);
        let d = ((mic[0] - src[0]).powi(2) + (mic[1] - src[1]).powi(2) + (mic[2] - src[2]).powi(2))
            .sqrt();
        if d < 0.05 {
            continue;
        }
        placed += 1;
        let spec = CabinSpec {
            rt60: 0.0,
            mics: vec![mic],
            ..base.clone()
        };
        let h = &simulate_rir(&spec, &src).unwrap().taps[0];
        let peak = (0..h.len())
            .max_by(|&a, &b| h[a].abs().total_cmp(&h[b].abs()))
            .unwrap();
        let expected = d / SPEED_OF_SOUND * FS as f64;
        worst = worst.max((peak as f64 - expected).abs());
    }
    let spec = CabinSpec {
        rt60: 0.6,
        ..Default::default()
    };
    let h = &simulate_rir(&spec, &spec.zones[2]).unwrap().taps[0];
    let ours = estimate_rt60(h, FS).unwrap();
    let oracle = schroeder_rt60(h, FS as f64);
    let err = (oracle - 0.6).abs() / 0.6;
    check(
        worst <= 1.0 && err <= 0.1 && (ours - oracle).abs() < 1e-6,
        format!(
            "direct-path peak within {worst:.2} samples of d/c*fs over {placed} placements (<= 1); rt60 0.6 Schroeder fit {oracle:.3} s ({:.1}%, <= 10%)",
            err * 100.0
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("stft round trip", c01_stft_round_trip),
        ("mel band plan", c02_band_plan),
        ("subband round trip", c03_subband_round_trip),
        ("subband/full-band degeneracy", c04_degenerate_bands),
        ("scm properties", c05_scm_properties),
        ("crf degeneracy", c06_crf_degeneracy),
        ("oracle separation gain", c07_oracle_separation),
        ("echo suppression", c08_echo_suppression),
        ("cost scaling", c09_cost_scaling),
        ("metric correctness", c10_metrics),
        ("determinism", c11_determinism),
        ("rir geometry", c12_rir_geometry),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result =
            catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".to_string()));
        let took = start.elapsed();
        match result {
            Ok(detail) => println!("PASS [{:>2}] {name}: {detail} ({took:.2?})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{:>2}] {name}: {detail} ({took:.2?})", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
