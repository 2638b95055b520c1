//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Run with `cargo test --release -p depthpose --test acceptance`; pass
//! criterion names as arguments to run a subset (e.g. `-- schedule overfit`).
//! Failures are reported but only change the exit status under `--strict`.

mod common;

use std::time::Instant;

use common::{check_model_gradients, op_gradient_suite, Lcg};
use depthpose::codec::{
    decode, find_peaks, greedy_match, limb_candidates, render_gt, Candidate, DecodeParams, GtMaps, HeatmapSet,
    JointTopology, Keypoint, PafSet, Peak, RenderParams, Skeleton,
};
use depthpose::datapipe::{
    decode_pgm16, encode_pgm16, filter_detections, synth_dataset, synth_scene, DepthImage, DetectionBox,
    DetectionRecord, FilterParams, SceneSpec,
};
use depthpose::tensor::mse_loss;
use depthpose::eval::{evaluate_model, match_poses};
use depthpose::model::{LossWeights, Model, ModelConfig};
use depthpose::tensor::{pixel_shuffle, pixel_unshuffle, Tape, Tensor};
use depthpose::trainer::{load_checkpoint, lr_at, save_checkpoint, Checkpoint, LogEntry, TrainConfig, Trainer};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- gradients

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut checked = 0;
    let mut failures = Vec::new();
    for (name, r) in op_gradient_suite(20) {
        checked += r.checked;
        failures.extend(r.failures.iter().take(3).map(|f| format!("{name}: {f}")));
    }
    let mut rng = Lcg(2024);
    let mut model: Model<f64> = Model::build(&ModelConfig::desk(), 5).unwrap().cast();
    let x = rng.tensor(&[1, 12, 16], 0.0, 255.0);
    let gt = GtMaps {
        c_star: HeatmapSet(rng.tensor(&[10, 12, 16], 0.0, 1.0).cast()),
        b_star: PafSet(rng.tensor(&[18, 12, 16], -1.0, 1.0).cast()),
    };
    let hr = rng.tensor(&[1, 96, 128], 0.0, 255.0);
    let m = check_model_gradients(&mut model, &x, &gt, &hr, 3, &mut rng);
    failures.extend(m.failures.iter().take(3).map(|f| format!("model: {f}")));
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && m.checked >= 60 && secs < 120.0;
    outcome(
        pass,
        format!(
            "{checked} op entries over 20 seeds, {} model entries ({} kink-skipped), {} mismatches, {secs:.1}s{}",
            m.checked,
            m.skipped_kinks,
            failures.len(),
            failures.first().map(|f| format!("; first: {f}")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------- pixel shuffle

fn pixel_shuffle_invariants() -> Outcome {
    let mut rng = Lcg(7);
    let mut cases = 0;
    for r in [2usize, 4] {
        for _ in 0..20 {
            let (c, h, w) = (1 + rng.below(3), 1 + rng.below(5), 1 + rng.below(5));
            let x: Tensor<f32> = rng.tensor(&[c * r * r, h, w], -10.0, 10.0).cast();
            let y = pixel_shuffle(&x, r).unwrap();
            if y.shape() != [c, r * h, r * w] {
                return outcome(false, format!("shape {:?} for r={r}", y.shape()));
            }
            let back = pixel_unshuffle(&y, r).unwrap();
            if back.data().iter().map(|v| v.to_bits()).ne(x.data().iter().map(|v| v.to_bits())) {
                return outcome(false, format!("round trip differs for r={r}"));
            }
            let again = pixel_shuffle(&back, r).unwrap();
            if again.data().iter().map(|v| v.to_bits()).ne(y.data().iter().map(|v| v.to_bits())) {
                return outcome(false, format!("inverse round trip differs for r={r}"));
            }
            let mut a: Vec<u32> = x.data().iter().map(|v| v.to_bits()).collect();
            let mut b: Vec<u32> = y.data().iter().map(|v| v.to_bits()).collect();
            a.sort_unstable();
            b.sort_unstable();
            if a != b {
                return outcome(false, format!("value multiset changed for r={r}"));
            }
            cases += 1;
        }
    }
    outcome(true, format!("{cases} random tensors, r in {{2, 4}}"))
}

// ---------------------------------------------------------------- shapes

fn shape_contract() -> Outcome {
    let model = Model::build(&ModelConfig::desk(), 1).unwrap();
    let mut details = Vec::new();
    for ((w, h), want) in [((80, 60), (640, 480)), ((64, 48), (512, 384))] {
        let out = model.forward(&Tensor::full(&[1, h, w], 100.0)).unwrap();
        let sr = out.sr_img.unwrap();
        if sr.shape() != [1, want.1, want.0] {
            return outcome(false, format!("{w}x{h} gave sr_img {:?}", sr.shape()));
        }
        for (b, c) in out.stages.b.iter().zip(&out.stages.c) {
            if b.shape() != [18, h, w] || c.shape() != [10, h, w] {
                return outcome(false, format!("{w}x{h} gave maps {:?} / {:?}", b.shape(), c.shape()));
            }
        }
        details.push(format!("{w}x{h} -> {}x{}", want.0, want.1));
    }
    outcome(true, details.join(", "))
}

// ---------------------------------------------------------------- codec

fn codec_round_trip() -> Outcome {
    let topo = JointTopology::upper_body();
    let factor = 10;
    let data = synth_dataset(50, 5000, 3, factor, &topo);
    let params = DecodeParams::default();
    let inv = 1.0 / factor as f32;
    let (mut count_ok, mut worst, mut joints) = (0, 0.0f32, 0);
    let mut far = 0;
    for s in &data {
        let grid: Vec<Skeleton> = s.skeletons.iter().map(|k| k.scaled(inv, inv)).collect();
        let dec = decode(&s.gt.c_star, &s.gt.b_star, &topo, &params);
        if dec.len() == grid.len() {
            count_ok += 1;
        }
        let matches = match_poses(&dec, &grid);
        // joints of decoded persons left unmatched count as mislocalized
        far += (0..dec.len()).filter(|p| !matches.contains(&Some(*p))).map(|p| dec[p].num_present()).sum::<usize>();
        for (g, m) in matches.into_iter().enumerate() {
            let Some(p) = m else { continue };
            for k in dec[p].present() {
                let Some(t) = grid[g].get(k.joint) else {
                    far += 1;
                    continue;
                };
                let d = ((k.x - t.x).powi(2) + (k.y - t.y).powi(2)).sqrt();
                worst = worst.max(d);
                joints += 1;
                if d > 1.0 {
                    far += 1;
                }
            }
        }
    }
    let pct = 100.0 * count_ok as f64 / data.len() as f64;
    outcome(
        pct >= 95.0 && far == 0 && joints > 0,
        format!("person count correct in {pct:.0}% of 50 scenes; {joints} joints, worst error {worst:.3} px, {far} beyond 1 px"),
    )
}

/// Maximum total score over all one-to-one subsets of `cands`.
fn exhaustive_best(cands: &[Candidate]) -> f64 {
    let mut best = 0.0f64;
    for mask in 0u32..(1 << cands.len()) {
        let chosen: Vec<Candidate> = (0..cands.len()).filter(|i| mask >> i & 1 == 1).map(|i| cands[i]).collect();
        let one_to_one = chosen.iter().enumerate().all(|(i, x)| chosen[i + 1..].iter().all(|y| x.a != y.a && x.b != y.b));
        if one_to_one {
            best = best.max(total(&chosen));
        }
    }
    best
}

/// Order-independent sum of candidate scores.
fn total(c: &[Candidate]) -> f64 {
    let mut v: Vec<f64> = c.iter().map(|c| c.score as f64).collect();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

/// Limb matchings from rendered scenes, clean and noise-perturbed, restricted
/// to the first five joints. Returns (instances, limbs, greedy != exhaustive).
fn scene_instances() -> (usize, usize, Vec<String>) {
    let keep = [0, 1, 2, 3, 4];
    let topo = JointTopology::upper_body().subset(&keep);
    let params = DecodeParams::default();
    let factor = 10.0;
    let (mut instances, mut limbs, mut bad) = (0, 0, Vec::new());
    for seed in 0..60u64 {
        let (_, skels) = synth_scene(&SceneSpec::random_up_to(9000 + seed, 3));
        let grid: Vec<Skeleton> = skels.iter().map(|s| restrict(&s.scaled(1.0 / factor, 1.0 / factor), &keep)).collect();
        for noisy in [false, true] {
            let (mut gt, _) = render_gt(&grid, &topo, (48, 64), RenderParams::for_scale(factor));
            if noisy {
                let mut rng = Lcg(seed);
                for v in gt.b_star.0.data_mut() {
                    *v += rng.uniform(-0.15, 0.15) as f32;
                }
                for v in gt.c_star.0.data_mut() {
                    *v = (*v + rng.uniform(-0.05, 0.05) as f32).clamp(0.0, 1.0);
                }
            }
            let peaks: Vec<Vec<Peak>> = (0..topo.num_joints())
                .map(|j| find_peaks(gt.c_star.0.channel(j), (48, 64), params.peak_thresh))
                .collect();
            if peaks.iter().any(|p| p.len() > 3) {
                continue;
            }
            instances += 1;
            for (l, &(a, b)) in topo.limbs.iter().enumerate() {
                let c = limb_candidates(&gt.b_star, l, &peaks[a], &peaks[b], &params);
                let (g, best) = (total(&greedy_match(&c)), exhaustive_best(&c));
                limbs += 1;
                if g != best {
                    bad.push(format!("scene {seed} noisy={noisy} limb {l}: greedy {g} vs {best}"));
                }
            }
        }
    }
    (instances, limbs, bad)
}

/// Every candidate set over up to 3x3 endpoints with scores drawn at random.
fn random_instances() -> (usize, Vec<String>) {
    let mut rng = Lcg(99);
    let (mut n, mut bad) = (0, Vec::new());
    for na in 1..=3 {
        for nb in 1..=3 {
            for _ in 0..300 {
                let mut cands = Vec::new();
                for k in 0..na * nb {
                    let score = rng.uniform(0.05, 1.0) as f32;
                    if rng.below(4) != 0 {
                        cands.push(Candidate { a: k / nb, b: k % nb, score });
                    }
                }
                let (g, best) = (total(&greedy_match(&cands)), exhaustive_best(&cands));
                n += 1;
                if g != best {
                    bad.push(format!("{cands:?}: greedy {g} vs {best}"));
                }
            }
        }
    }
    (n, bad)
}

fn decoder_oracle() -> Outcome {
    let (instances, limbs, scene_bad) = scene_instances();
    let (random, random_bad) = random_instances();
    let pass = scene_bad.is_empty() && random_bad.is_empty() && instances >= 100;
    let first = scene_bad.first().or(random_bad.first()).map(|f| format!("; e.g. {f}")).unwrap_or_default();
    outcome(
        pass,
        format!(
            "rendered scenes: {instances} instances, {limbs} limbs, {} mismatches; random score sets: {random} instances, {} mismatches (greedy is not optimal on arbitrary scores){first}",
            scene_bad.len(),
            random_bad.len()
        ),
    )
}

fn restrict(s: &Skeleton, keep: &[usize]) -> Skeleton {
    let mut out = s.clone();
    out.keypoints = s
        .keypoints
        .iter()
        .filter_map(|k| keep.iter().position(|&j| j == k.joint).map(|j| Keypoint { joint: j, ..*k }))
        .collect();
    out
}

// ---------------------------------------------------------------- pseudo GT

fn pseudo_gt_boundaries() -> Outcome {
    let topo = JointTopology::upper_body();
    let run = |box_score: f32, kp: &[f32]| {
        let rec = DetectionRecord {
            image_id: "im".into(),
            boxes: vec![DetectionBox {
                score: box_score,
                bbox: [0.0, 0.0, 100.0, 100.0],
                keypoints: kp.iter().enumerate().map(|(j, &s)| (j, 10.0 * j as f32, 5.0, s)).collect(),
            }],
        };
        let (set, errs) = filter_detections(&[rec], &FilterParams::default(), &topo, (640, 480));
        assert!(errs.is_empty());
        set.images["im"].skeletons.len() == 1
    };
    let cases = [
        ("box 0.69", run(0.69, &[0.9; 5]), false),
        ("box 0.70", run(0.70, &[0.9; 5]), true),
        ("keypoint 0.35", run(0.9, &[0.9, 0.9, 0.9, 0.35]), false),
        ("keypoint 0.36", run(0.9, &[0.9, 0.9, 0.9, 0.36]), true),
        ("count 3", run(0.9, &[0.9, 0.9, 0.9]), false),
        ("count 4", run(0.9, &[0.9, 0.9, 0.9, 0.9]), true),
    ];
    let wrong: Vec<&str> = cases.iter().filter(|(_, got, want)| got != want).map(|(n, ..)| *n).collect();
    outcome(
        wrong.is_empty(),
        if wrong.is_empty() { "0.69/0.70, 0.35/0.36, 3/4 all as specified".to_string() } else { format!("wrong: {wrong:?}") },
    )
}

// ---------------------------------------------------------------- overfit

fn overfit() -> Outcome {
    let iters = 500;
    let cfg = TrainConfig {
        total_iters: iters,
        // the 12k-of-32k decay point, scaled to the run length
        decay_every: (iters * 12_000).div_ceil(32_000),
        batch_size: 2,
        seed: 11,
        ..TrainConfig::default()
    };
    let data = synth_dataset(2, 1000, 2, cfg.factor, &cfg.model.topology);
    let start = Instant::now();
    let mut t = Trainer::new(cfg, &data).unwrap();
    let log = t.run(iters, None, |_, _| Ok(())).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let ratio = log.last().unwrap().l_p / log[0].l_p;
    let report = evaluate_model(t.model(), &data, false, 0.2, &DecodeParams::default()).unwrap();
    let pck = report.average;
    outcome(
        ratio < 0.1 && pck == 100.0 && secs < 600.0,
        format!("L_P {:.5} -> {:.5} (ratio {ratio:.4}), training PCK@0.2 {pck:.1}, {secs:.0}s", log[0].l_p, log.last().unwrap().l_p),
    )
}

// ---------------------------------------------------------------- schedule and loss

fn schedule() -> Outcome {
    let cfg = TrainConfig::default();
    let pts = [(0, 0.001), (11_999, 0.001), (12_000, 0.0001), (23_999, 0.0001), (24_000, 0.00001)];
    let bad: Vec<String> = pts
        .iter()
        .filter(|&&(i, want)| lr_at(i, &cfg) != want)
        .map(|&(i, want)| format!("lr_at({i}) = {} != {want}", lr_at(i, &cfg)))
        .collect();
    outcome(bad.is_empty(), if bad.is_empty() { "0.001 before 12000, 0.0001 from 12000, exact".into() } else { bad.join("; ") })
}

fn loss_identity() -> Outcome {
    let topo = JointTopology::upper_body();
    let data = synth_dataset(3, 77, 3, 10, &topo);
    let model = Model::build(&ModelConfig::desk(), 3).unwrap();
    let weights = LossWeights::default();
    for s in &data {
        let mut tape = Tape::new();
        let f = model.forward_tape(&mut tape, &s.lr).unwrap();
        let lv = model.compute_loss(&mut tape, &f, &s.gt, &s.hr, weights).unwrap();
        let br = lv.breakdown(&tape);
        if br.l_b.len() != 3 || br.l_c.len() != 3 || !br.identities_hold(weights) {
            return outcome(false, format!("{}: {br:?}", s.id));
        }
        // each term recomputed outside the tape from the plain forward pass
        let out = model.forward(&s.lr).unwrap();
        for t in 0..3 {
            let lb = mse_loss(&out.stages.b[t], &s.gt.b_star.0).unwrap();
            let lc = mse_loss(&out.stages.c[t], &s.gt.c_star.0).unwrap();
            if lb != br.l_b[t] || lc != br.l_c[t] {
                return outcome(false, format!("{} stage {t}: tape ({}, {}) vs recomputed ({lb}, {lc})", s.id, br.l_b[t], br.l_c[t]));
            }
        }
        let hr = mse_loss(out.sr_img.as_ref().unwrap(), &model.config().normalize_input(&s.hr)).unwrap();
        if hr != br.l_hr {
            return outcome(false, format!("{}: L_HR tape {} vs recomputed {hr}", s.id, br.l_hr));
        }
    }
    outcome(true, "total = L_HR + L_P and L_P = sum of L_B + L_C over 3 stages, bitwise, on 3 scenes; every term matches an off-tape recomputation")
}

// ---------------------------------------------------------------- comparative

/// Training budget for each of the two models in the comparative run.
fn trend_config() -> TrainConfig {
    let iters = 1500;
    TrainConfig {
        total_iters: iters,
        decay_every: (iters * 12_000).div_ceil(32_000),
        batch_size: 4,
        seed: 21,
        ..TrainConfig::default()
    }
}

fn comparative_trend() -> Outcome {
    let topo = JointTopology::upper_body();
    let train = synth_dataset(TREND_TRAIN_SCENES, 20_000, 3, 10, &topo);
    let bench = synth_dataset(200, 40_000, 3, 10, &topo);
    let start = Instant::now();
    let mut scores = Vec::new();
    for use_sr in [true, false] {
        let mut cfg = trend_config();
        if !use_sr {
            cfg.model = cfg.model.baseline();
        }
        let mut t = Trainer::new(cfg.clone(), &train).unwrap();
        t.run(cfg.total_iters, None, |_, _| Ok(())).unwrap();
        let r = evaluate_model(t.model(), &bench, true, 0.2, &DecodeParams::default()).unwrap();
        scores.push(r.average);
    }
    let secs = start.elapsed().as_secs_f64();
    let (sr, base) = (scores[0], scores[1]);
    let degenerate = if sr == 0.0 && base == 0.0 { " (both zero: the check is vacuous)" } else { "" };
    outcome(
        sr >= base && secs < 3600.0,
        format!("average PCK@0.2 on 200 scenes: SR {sr:.1} vs baseline {base:.1}{degenerate}, {secs:.0}s"),
    )
}

const TREND_TRAIN_SCENES: usize = 48;

// ---------------------------------------------------------------- formats

fn format_round_trips() -> Outcome {
    let mut rng = Lcg(3);
    for n in 0..10 {
        let (w, h) = (1 + rng.below(40), 1 + rng.below(30));
        let mut raw: Vec<u16> = (0..w * h).map(|_| rng.below(65536) as u16).collect();
        raw[0] = 0;
        raw[w * h - 1] = 65535;
        let img = DepthImage::new(w, h, raw).unwrap();
        let bytes = encode_pgm16(&img);
        let back = decode_pgm16(&bytes).unwrap();
        if back != img || encode_pgm16(&back) != bytes {
            return outcome(false, format!("PGM case {n} differs"));
        }
    }
    let model = Model::build(&ModelConfig::desk(), 8).unwrap();
    let ck = Checkpoint::from_model(&model, 5, 8, None);
    let bytes = ck.encode();
    if Checkpoint::decode(&bytes).unwrap().encode() != bytes {
        return outcome(false, "checkpoint re-encode differs");
    }

    let topo = JointTopology::upper_body();
    let data = synth_dataset(4, 123, 2, 10, &topo);
    let cfg = TrainConfig {
        total_iters: 8,
        decay_every: 4,
        batch_size: 2,
        seed: 5,
        ..TrainConfig::default()
    };
    let bits = |log: &[LogEntry]| log.iter().map(LogEntry::to_json).collect::<Vec<_>>();
    let mut full = Trainer::new(cfg.clone(), &data).unwrap();
    let uninterrupted = bits(&full.run(8, None, |_, _| Ok(())).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.dpck");
    let mut first = Trainer::new(cfg.clone(), &data).unwrap();
    let mut resumed_log = bits(&first.run(3, None, |_, _| Ok(())).unwrap());
    save_checkpoint(&path, &first.checkpoint()).unwrap();
    drop(first);
    let ck = load_checkpoint(&path).unwrap();
    let mut second = Trainer::resume(cfg, &data, &ck).unwrap();
    resumed_log.extend(bits(&second.run(8, None, |_, _| Ok(())).unwrap()));
    let same_weights = second.checkpoint().encode() == full.checkpoint().encode();
    outcome(
        resumed_log == uninterrupted && same_weights,
        format!(
            "10 PGM images and a checkpoint re-encode bitwise; resume at 3 of 8 iterations: log {}, final weights {}",
            if resumed_log == uninterrupted { "identical" } else { "differs" },
            if same_weights { "identical" } else { "differ" }
        ),
    )
}

// ---------------------------------------------------------------- runner

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("gradient-suite", gradient_suite),
        ("pixel-shuffle", pixel_shuffle_invariants),
        ("shape-contract", shape_contract),
        ("codec-round-trip", codec_round_trip),
        ("decoder-oracle", decoder_oracle),
        ("pseudo-gt-thresholds", pseudo_gt_boundaries),
        ("overfit", overfit),
        ("schedule", schedule),
        ("loss-identity", loss_identity),
        ("comparative-trend", comparative_trend),
        ("format-round-trips", format_round_trips),
    ];
    let args: Vec<String> = std::env::args().skip(1).collect();
    let strict = args.iter().any(|a| a == "--strict");
    let filters: Vec<String> = args.into_iter().filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    for (name, f) in criteria {
        if !filters.is_empty() && !filters.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("{verdict} {name}: {} [{:.1}s]", o.detail, start.elapsed().as_secs_f64());
        if !o.pass {
            failed.push(name);
        }
    }
    if failed.is_empty() {
        println!("all criteria passed");
    } else {
        println!("failed criteria: {}", failed.join(", "));
        if strict {
            std::process::exit(1);
        }
    }
}
