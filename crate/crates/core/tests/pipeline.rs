use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rgtn::discovery::{compare, success_rate, NamedSpec, TrialSetup};
use rgtn::metrics::{mpsnr, psnr, relative_error};
use rgtn::scale::{coarse_grain, ScaleLevel};
use rgtn::search::{percentile, ProposalKind, Target};
use rgtn::synth::{gen_mask, gen_structure, realize, TruthSpec};
use rgtn::trals::{tr_als, RingSpec};
use rgtn::{rg_search, DenseTensor, Init, Problem, RGConfig, StructureSignature, TopologyPreset};

fn small_problem(seed: u64) -> Problem {
    let spec = TruthSpec { dims: vec![4, 5, 4, 5], edges: TopologyPreset::Ring.edges(4), bond_range: (2, 2), seed };
    Problem::full(realize(&gen_structure(&spec).unwrap()).unwrap())
}

fn quick_config(seed: u64) -> RGConfig {
    RGConfig {
        scales: 0,
        expand_steps: 2,
        compress_steps: 3,
        epochs_expand: 10,
        epochs_compress: 10,
        epochs_refine: 10,
        seed,
        ..RGConfig::default()
    }
}

fn random_tensor(shape: &[usize], seed: u64) -> DenseTensor {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseTensor::from_fn(shape, |_| rng.random_range(-3.0..3.0))
}

#[test]
fn search_is_deterministic_and_keeps_its_contract() {
    let p = small_problem(2);
    let a = rg_search(&p, &quick_config(7), Init::Preset).unwrap();
    let b = rg_search(&p, &quick_config(7), Init::Preset).unwrap();
    assert_eq!(a.report.proposals, b.report.proposals);
    assert_eq!(a.best, b.best);
    a.report.check_contract().unwrap();
    a.best.validate().unwrap();
}

#[test]
fn proposals_target_valid_parts() {
    let p = small_problem(3);
    let out = rg_search(&p, &quick_config(1), Init::Preset).unwrap();
    assert!(!out.report.proposals.is_empty());
    for r in &out.report.proposals {
        match (r.kind, r.target) {
            (ProposalKind::Expand, Target::Node(_)) | (ProposalKind::Compress, Target::Edge(_)) => {}
            other => panic!("mismatched proposal {other:?}"),
        }
    }
}

#[test]
fn compression_only_search_never_grows() {
    let p = small_problem(4);
    let cfg = RGConfig { expand_steps: 0, init: rgtn::search::InitConfig { topology: TopologyPreset::Ring, bond_dim: 3 }, ..quick_config(2) };
    let out = rg_search(&p, &cfg, Init::Preset).unwrap();
    let params: Vec<usize> = out.report.snapshots.iter().map(|s| s.params).collect();
    assert!(params.windows(2).all(|w| w[1] <= w[0]), "{params:?}");
}

#[test]
fn ring_baseline_output_is_a_valid_network() {
    let p = small_problem(5);
    let out = tr_als(&p, &RingSpec::uniform(4, 2, 30, 0.0), 3).unwrap();
    out.graph.validate().unwrap();
    let re = p.masked_relative_error(&out.graph.reconstruct(rgtn::search::TAU_FLOOR).unwrap());
    assert!((re - out.report.re).abs() <= 1e-12);
    for w in out.trace.windows(2) {
        assert!(w[1] * w[1] <= w[0] * w[0] + 1e-10);
    }
}

#[test]
fn success_rate_is_reproducible() {
    let specs = vec![NamedSpec {
        id: "pair".into(),
        spec: TruthSpec { dims: vec![4, 5], edges: vec![(0, 1)], bond_range: (2, 3), seed: 9 },
    }];
    let setup = TrialSetup { trials: 3, rank_tol: 1, noise_rel: 0.0 };
    let cfg = rgtn::presets::reveal();
    let a = success_rate(&specs, &setup, &cfg);
    let b = success_rate(&specs, &setup, &cfg);
    assert_eq!(a, b);
    assert_eq!(a[0].matches, 3);
}

#[test]
fn identical_frames_give_the_single_frame_psnr() {
    let frame = random_tensor(&[1, 6, 5], 1);
    let shifted = frame.map(|v| v + 0.5);
    let stack = |t: &DenseTensor| DenseTensor::from_fn(&[4, 6, 5], |i| t.get(&[0, i[1], i[2]]));
    let m = mpsnr(&stack(&frame), &stack(&shifted), 0, 255.0).unwrap();
    let single = psnr(frame.data(), shifted.data(), 255.0).unwrap();
    assert!(m.per_frame.iter().all(|&v| (v - single).abs() <= 1e-12));
    assert!((m.mean_db.unwrap() - single).abs() <= 1e-12);
}

fn signature(edges: &[((usize, usize), usize)]) -> StructureSignature {
    StructureSignature {
        node_count: 3,
        physical: (0..3).map(|n| (n, vec![n])).collect(),
        ranks: edges.iter().copied().collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn percentile_lies_between_extremes(v in prop::collection::vec(-100.0..100.0f64, 1..20), p in 0.0..100.0f64) {
        let q = percentile(&v, p).unwrap();
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= q && q <= hi);
        prop_assert!(percentile(&v, (p + 10.0).min(100.0)).unwrap() >= q);
    }

    #[test]
    fn coarse_grain_is_linear(seed in any::<u64>(), a in -3.0..3.0f64, b in -3.0..3.0f64, s in 1u32..3) {
        let x = random_tensor(&[8, 3, 8], seed);
        let y = random_tensor(&[8, 3, 8], seed ^ 1);
        let level = ScaleLevel::new(s, [0, 2]);
        let lhs = coarse_grain(&x.scale(a).add(&y.scale(b)).unwrap(), &level).unwrap();
        let rhs = coarse_grain(&x, &level).unwrap().scale(a).add(&coarse_grain(&y, &level).unwrap().scale(b)).unwrap();
        prop_assert!(lhs.data().iter().zip(rhs.data()).all(|(l, r)| (l - r).abs() <= 1e-12));
    }

    #[test]
    fn coarse_grain_keeps_the_mean(seed in any::<u64>(), s in 1u32..3) {
        let x = random_tensor(&[8, 2, 4], seed);
        let pooled = coarse_grain(&x, &ScaleLevel::new(s, [0, 2])).unwrap();
        prop_assert!((pooled.mean() - x.mean()).abs() <= 1e-12);
    }

    #[test]
    fn mask_count_is_exact_and_pure(shape in prop::collection::vec(1usize..6, 1..4), missing in 0.0..0.99f64, seed in any::<u64>()) {
        let m = gen_mask(&shape, missing, seed).unwrap();
        let numel: usize = shape.iter().product();
        let expected = ((1.0 - missing) * numel as f64).round() as usize;
        prop_assert_eq!(m.data().iter().filter(|&&v| v == 1.0).count(), expected);
        prop_assert_eq!(gen_mask(&shape, missing, seed).unwrap(), m);
    }

    #[test]
    fn relative_error_ignores_common_scale(seed in any::<u64>(), c in prop::sample::select(vec![-7.5, -1.0, 0.01, 3.0, 1e4])) {
        let x = random_tensor(&[3, 4], seed);
        let y = random_tensor(&[3, 4], seed ^ 2);
        let a = relative_error(&x, &y).unwrap();
        let b = relative_error(&x.scale(c), &y.scale(c)).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn psnr_falls_as_error_grows(seed in any::<u64>(), e1 in 0.01..10.0f64, k in 1.01..10.0f64) {
        let x = random_tensor(&[20], seed);
        let small = x.map(|v| v + e1);
        let large = x.map(|v| v + e1 * k);
        prop_assert!(psnr(x.data(), large.data(), 255.0).unwrap() < psnr(x.data(), small.data(), 255.0).unwrap());
    }

    #[test]
    fn compare_is_reflexive_and_symmetric(r in prop::collection::vec(2usize..6, 3), d in 0usize..3, tol in 0usize..3) {
        let truth = signature(&[((0, 1), r[0]), ((1, 2), r[1]), ((0, 2), r[2])]);
        prop_assert!(compare(&truth, &truth, 0));
        let up = signature(&[((0, 1), r[0] + d), ((1, 2), r[1]), ((0, 2), r[2])]);
        let down = signature(&[((0, 1), r[0]), ((1, 2), r[1]), ((0, 2), r[2])]);
        // deviations in either direction are judged alike
        prop_assert_eq!(compare(&up, &down, tol), compare(&down, &up, tol));
        prop_assert_eq!(compare(&up, &down, tol), d <= tol);
    }
}

#[test]
fn masked_problem_validates_shape() {
    let p = Problem::masked(random_tensor(&[3, 4], 1), DenseTensor::filled(&[4, 3], 1.0));
    assert!(p.validate().is_err());
}
