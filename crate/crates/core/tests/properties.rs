use proptest::prelude::*;

use depthpose::codec::{
    decode, flip_average, greedy_match, render_gt, Candidate, DecodeParams, HeatmapSet, JointTopology, PafSet,
    RenderParams, Skeleton,
};
use depthpose::datapipe::{decode_pgm16, encode_pgm16, normalize, synth_scene, DepthImage, SceneSpec};
use depthpose::eval::pck;
use depthpose::tensor::{mse_loss, pixel_shuffle, pixel_unshuffle, Tensor};
use depthpose::trainer::{lr_at, TrainConfig};

fn small_tensor(len: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-1.0e3f32..1.0e3, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pixel_shuffle_is_a_bijection(
        (c, h, w, r, data) in (1usize..3, 1usize..5, 1usize..5, prop::sample::select(vec![2usize, 4]))
            .prop_flat_map(|(c, h, w, r)| (Just(c), Just(h), Just(w), Just(r), small_tensor(c * r * r * h * w)))
    ) {
        let x = Tensor::new(&[c * r * r, h, w], data).unwrap();
        let y = pixel_shuffle(&x, r).unwrap();
        prop_assert_eq!(y.shape(), &[c, r * h, r * w]);
        let back = pixel_unshuffle(&y, r).unwrap();
        prop_assert!(back.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let mut a: Vec<u32> = x.data().iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u32> = y.data().iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn mse_is_nonnegative_and_zero_only_on_equality(a in small_tensor(12), b in small_tensor(12)) {
        let (ta, tb) = (Tensor::new(&[3, 2, 2], a.clone()).unwrap(), Tensor::new(&[3, 2, 2], b.clone()).unwrap());
        let l = mse_loss(&ta, &tb).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert_eq!(l == 0.0, a == b);
        prop_assert_eq!(mse_loss(&ta, &ta).unwrap(), 0.0);
    }

    #[test]
    fn pgm_round_trip_is_lossless(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
        let mut s = seed;
        let raw: Vec<u16> = (0..w * h)
            .map(|i| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                if i == 0 { 0 } else if i == 1 { u16::MAX } else { (s >> 48) as u16 }
            })
            .collect();
        let img = DepthImage::new(w, h, raw).unwrap();
        let bytes = encode_pgm16(&img);
        prop_assert_eq!(decode_pgm16(&bytes).unwrap(), img);
    }

    #[test]
    fn normalization_is_monotone(mut raw in prop::collection::vec(any::<u16>(), 2..40), d_max in 100.0f32..20000.0) {
        raw.sort_unstable();
        let n = raw.len();
        let t = normalize(&DepthImage::new(n, 1, raw).unwrap(), d_max);
        prop_assert!(t.data().windows(2).all(|p| p[0] <= p[1]));
        prop_assert!(t.data().iter().all(|v| (0.0..=255.0).contains(v)));
    }

    #[test]
    fn schedule_is_stepwise(decay_every in 1u64..5000, iter in 0u64..100_000) {
        let cfg = TrainConfig { decay_every, total_iters: decay_every * 40, ..TrainConfig::default() };
        prop_assert!(lr_at(iter + 1, &cfg) <= lr_at(iter, &cfg));
        let breaks = (iter + 1) % decay_every == 0;
        prop_assert_eq!(lr_at(iter + 1, &cfg) != lr_at(iter, &cfg), breaks);
    }

    #[test]
    fn greedy_match_is_one_to_one_and_maximal(scores in prop::collection::vec(prop::option::of(0.0f32..1.0), 9)) {
        let cands: Vec<Candidate> = scores
            .iter()
            .enumerate()
            .filter_map(|(k, s)| s.map(|score| Candidate { a: k / 3, b: k % 3, score }))
            .collect();
        let m = greedy_match(&cands);
        for (i, x) in m.iter().enumerate() {
            prop_assert!(m[i + 1..].iter().all(|y| x.a != y.a && x.b != y.b));
        }
        // every unselected candidate conflicts with a selected one of at least its score
        for c in &cands {
            if !m.contains(c) {
                prop_assert!(m.iter().any(|s| (s.a == c.a || s.b == c.b) && s.score >= c.score));
            }
        }
    }

    #[test]
    fn pck_is_translation_invariant(seed in 0u64..500, dx in -50.0f32..50.0, dy in -50.0f32..50.0, jitter in 0.0f32..30.0) {
        let topo = JointTopology::upper_body();
        let (_, gts) = synth_scene(&SceneSpec::random_up_to(seed, 3));
        let preds: Vec<Skeleton> = gts.iter().enumerate().map(|(i, s)| s.translated(jitter * (i as f32 - 1.0), jitter)).collect();
        let a = pck(&preds, &gts, 0.2, &topo).unwrap();
        let moved = |v: &[Skeleton]| v.iter().map(|s| s.translated(dx, dy)).collect::<Vec<_>>();
        let b = pck(&moved(&preds), &moved(&gts), 0.2, &topo).unwrap();
        let counts = |r: &depthpose::eval::PckReport| r.groups.iter().map(|g| (g.correct, g.total)).collect::<Vec<_>>();
        prop_assert_eq!(counts(&a), counts(&b));
    }

    #[test]
    fn pck_is_monotone(seed in 0u64..500, jitter in 0.0f32..40.0, frac in 0.0f32..1.0) {
        let topo = JointTopology::upper_body();
        let (_, gts) = synth_scene(&SceneSpec::random_up_to(seed, 1));
        let far: Vec<Skeleton> = gts.iter().map(|s| s.translated(jitter, -jitter)).collect();
        let near: Vec<Skeleton> = gts.iter().map(|s| s.translated(jitter * frac, -jitter * frac)).collect();
        let (a, b) = (pck(&far, &gts, 0.2, &topo).unwrap(), pck(&near, &gts, 0.2, &topo).unwrap());
        for (x, y) in a.groups.iter().zip(&b.groups) {
            prop_assert!(y.correct >= x.correct, "{} {:?} {:?}", x.name, x, y);
        }
    }

    #[test]
    fn flip_average_keeps_heatmaps_in_unit_range(a in prop::collection::vec(0.0f32..=1.0, 10 * 4 * 5), b in prop::collection::vec(0.0f32..=1.0, 10 * 4 * 5)) {
        let topo = JointTopology::upper_body();
        let hm = |v: Vec<f32>| HeatmapSet(Tensor::new(&[10, 4, 5], v).unwrap());
        let paf = PafSet(Tensor::zeros(&[18, 4, 5]));
        let (h, _) = flip_average((&hm(a), &paf), (&hm(b), &paf), &topo).unwrap();
        prop_assert!(h.0.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn decode_ignores_render_order(seed in 0u64..1000) {
        let topo = JointTopology::upper_body();
        let (_, skels) = synth_scene(&SceneSpec::random_up_to(seed, 3));
        let grid: Vec<Skeleton> = skels.iter().map(|s| s.scaled(0.1, 0.1)).collect();
        let mut rev = grid.clone();
        rev.reverse();
        let params = RenderParams::for_scale(10.0);
        let (a, _) = render_gt(&grid, &topo, (48, 64), params);
        let (b, _) = render_gt(&rev, &topo, (48, 64), params);
        let dp = DecodeParams::default();
        let mut da = decode(&a.c_star, &a.b_star, &topo, &dp);
        let mut db = decode(&b.c_star, &b.b_star, &topo, &dp);
        let key = |s: &Skeleton| s.present().map(|k| (k.joint, k.x.to_bits(), k.y.to_bits())).collect::<Vec<_>>();
        da.sort_by_key(key);
        db.sort_by_key(key);
        prop_assert_eq!(da.iter().map(key).collect::<Vec<_>>(), db.iter().map(key).collect::<Vec<_>>());
    }
}
