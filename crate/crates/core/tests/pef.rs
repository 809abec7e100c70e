#![allow(clippy::needless_range_loop)]

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spotcheck::model::{
    input_distribution, tsirelson_vertices, ConditionalDistribution, InputDistribution,
    PolytopeVertexSet,
};
use spotcheck::pef::{
    block_gain, block_gain_detailed, build_pef_table, entropy_certificate, interpolate,
    is_valid_pef, lift_to_uniform, optimal_position_gain, optimize_trial_pef,
    optimize_trial_pef_certified, optimize_trial_pef_with, protocol_sigma_in, PefTable, TrialPef,
};
use spotcheck::protocol::{BlockSimulator, PreparedTable};
use spotcheck::reference;

fn vertices() -> &'static [ConditionalDistribution] {
    tsirelson_vertices().unwrap().vertices()
}

fn nonlocal_vertex() -> &'static ConditionalDistribution {
    vertices().iter().find(|v| !v.is_local(1e-9)).unwrap()
}

/// A strongly nonlocal honest distribution: a Tsirelson vertex mixed with
/// white noise.
fn noisy_tsirelson(visibility: f64) -> ConditionalDistribution {
    ConditionalDistribution::mixture(&[
        (visibility, nonlocal_vertex()),
        (1.0 - visibility, &ConditionalDistribution::uniform()),
    ])
    .unwrap()
}

fn random_member(rng: &mut ChaCha8Rng) -> ConditionalDistribution {
    let vs = vertices();
    let picks: Vec<(f64, &ConditionalDistribution)> = (0..5)
        .map(|_| {
            (
                rng.random::<f64>() + 1e-3,
                &vs[rng.random_range(0..vs.len())],
            )
        })
        .collect();
    let total: f64 = picks.iter().map(|p| p.0).sum();
    let parts: Vec<_> = picks.iter().map(|&(w, d)| (w / total, d)).collect();
    ConditionalDistribution::mixture(&parts).unwrap()
}

fn pow_1b(m: f64, beta: f64) -> f64 {
    if m > 0.0 {
        m * (beta * m.ln()).exp()
    } else {
        0.0
    }
}

#[test]
fn constant_one_is_a_pef_everywhere() {
    let model = tsirelson_vertices().unwrap();
    for &beta in &[1e-9, 1e-4, 0.3] {
        for &q in &[1e-6, 0.5, 1.0, 1.3] {
            let qd = InputDistribution::from_q(q).unwrap();
            assert!(is_valid_pef(&TrialPef::one(beta, q).unwrap(), qd, model));
        }
    }
}

#[test]
fn local_deterministic_truth_certifies_nothing() {
    let d = ConditionalDistribution::deterministic([0, 1], [1, 0]);
    let q = input_distribution(5, 4).unwrap();
    let (f, g) = optimize_trial_pef(&d, q, 1e-3).unwrap();
    assert!(g.abs() < 1e-7, "gain {g}");
    assert!(is_valid_pef(&f, q, tsirelson_vertices().unwrap()));
}

#[test]
fn optimizer_reports_a_small_duality_gap() {
    let nu = reference::commissioning_distribution();
    for &j in &[1u64, 53_478, 1 << 17] {
        let q = input_distribution(j, 17).unwrap();
        let opt =
            optimize_trial_pef_certified(tsirelson_vertices().unwrap(), &nu, q, 4.7614e-8).unwrap();
        assert!(
            opt.gap_bound <= 1e-6 * opt.gain.abs(),
            "{} vs {}",
            opt.gap_bound,
            opt.gain
        );
        assert!(is_valid_pef(&opt.pef, q, tsirelson_vertices().unwrap()));
    }
}

/// For a model with two extreme points the optimal expected log is
/// `min over lambda in [0, 1]` of `sum_i w_i ln(w_i / (lambda a_1i + (1 - lambda) a_2i))`,
/// a one-dimensional convex problem.
fn two_vertex_oracle(
    nu: &ConditionalDistribution,
    q: InputDistribution,
    beta: f64,
    v1: &ConditionalDistribution,
    v2: &ConditionalDistribution,
) -> f64 {
    let z = q.table();
    let (f1, f2, h) = (v1.flat(), v2.flat(), nu.flat());
    let dual = |lam: f64| -> f64 {
        (0..16)
            .filter(|&i| h[i] > 0.0)
            .map(|i| {
                let w = z[i / 4] * h[i];
                let a = z[i / 4] * (lam * pow_1b(f1[i], beta) + (1.0 - lam) * pow_1b(f2[i], beta));
                w * (w / a).ln()
            })
            .sum()
    };
    let grid = 2000;
    let (mut best, mut arg) = (f64::INFINITY, 0.0);
    for i in 0..=grid {
        let lam = i as f64 / grid as f64;
        let v = dual(lam);
        if v < best {
            best = v;
            arg = lam;
        }
    }
    // Golden-section refinement around the best grid point.
    let (mut lo, mut hi) = (
        (arg - 1.0 / grid as f64).max(0.0),
        (arg + 1.0 / grid as f64).min(1.0),
    );
    let r = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let (a, b) = (hi - r * (hi - lo), lo + r * (hi - lo));
        if dual(a) < dual(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    best.min(dual(0.5 * (lo + hi))) / std::f64::consts::LN_2 / beta
}

#[test]
fn two_vertex_model_matches_dual_grid_oracle() {
    let v1 = *nonlocal_vertex();
    let v2 = ConditionalDistribution::uniform();
    let v2 = ConditionalDistribution::mixture(&[
        (0.5, &v2),
        (0.5, &ConditionalDistribution::deterministic([0, 0], [0, 0])),
    ])
    .unwrap();
    let model = PolytopeVertexSet::from_points(vec![v1, v2]);
    let nu = ConditionalDistribution::mixture(&[(0.35, &v1), (0.65, &v2)]).unwrap();
    for &(beta, q) in &[(0.05, 1.0), (0.01, 0.2), (0.2, 0.7)] {
        let qd = InputDistribution::from_q(q).unwrap();
        let (f, g) = optimize_trial_pef_with(&model, &nu, qd, beta).unwrap();
        let oracle = two_vertex_oracle(&nu, qd, beta, &v1, &v2);
        assert!(
            (g - oracle).abs() <= 1e-6 * oracle.abs().max(1e-9),
            "beta {beta} q {q}: {g} vs {oracle}"
        );
        assert!(is_valid_pef(&f, qd, &model));
    }
}

/// Exact `E[X]` and `E[X^2]` for `X = sum_j log2(F_j) / beta` over every
/// block length and outcome sequence.
fn enumerate_block(table: &PefTable, nu: &ConditionalDistribution) -> (f64, f64) {
    let n = table.capacity();
    let x: Vec<[f64; 16]> = (1..=n)
        .map(|j| {
            let f = table.f_at(j).unwrap();
            std::array::from_fn(|i| f.log2_over_beta(i))
        })
        .collect();
    let h = nu.flat();
    let (mut m1, mut m2) = (0.0, 0.0);
    // Recursion over the settings-00 prefix, carrying (probability, sum).
    fn walk(
        j: usize,
        l: usize,
        p: f64,
        s: f64,
        x: &[[f64; 16]],
        h: &[f64; 16],
        acc: &mut (f64, f64),
    ) {
        if j + 1 == l {
            for i in 0..16 {
                let pp = p * 0.25 * h[i];
                if pp == 0.0 {
                    continue;
                }
                let t = s + x[j][i];
                acc.0 += pp * t;
                acc.1 += pp * t * t;
            }
            return;
        }
        for c in 0..4 {
            if h[c] > 0.0 {
                walk(j + 1, l, p * h[c], s + x[j][c], x, h, acc);
            }
        }
    }
    for l in 1..=n as usize {
        let mut acc = (0.0, 0.0);
        walk(0, l, 1.0 / n as f64, 0.0, &x, &h, &mut acc);
        m1 += acc.0;
        m2 += acc.1;
    }
    (m1, m2 - m1 * m1)
}

#[test]
fn block_gain_matches_exact_enumeration_at_k3() {
    for (nu, beta, j_mid) in [
        (noisy_tsirelson(0.8), 0.05, 3u64),
        (reference::commissioning_distribution(), 1e-3, 5),
        (noisy_tsirelson(0.95), 1e-6, 1),
    ] {
        let table = build_pef_table(&nu, beta, 3, j_mid).unwrap();
        let g = block_gain(&table, &nu).unwrap();
        let (mean, var) = enumerate_block(&table, &nu);
        assert!(
            (g.g_block - mean).abs() <= 1e-9 * mean.abs().max(1e-12),
            "{} vs {mean}",
            g.g_block
        );
        assert!(
            (g.var_block - var).abs() <= 1e-8 * var.abs().max(1e-12),
            "{} vs {var}",
            g.var_block
        );
    }
}

#[test]
fn block_gain_is_weighted_sum_of_position_gains() {
    let nu = noisy_tsirelson(0.7);
    let table = build_pef_table(&nu, 0.01, 6, 20).unwrap();
    let r = block_gain_detailed(&table, &nu, true).unwrap();
    let per = r.per_position_gain.unwrap();
    let n = 64.0;
    let sum: f64 = per
        .iter()
        .enumerate()
        .map(|(i, g)| (n - i as f64) / n * g)
        .sum();
    assert!((sum - r.g_block).abs() < 1e-12 * r.g_block.abs().max(1.0));
    assert!(r.var_block >= 0.0);
}

#[test]
fn constant_one_table_has_zero_gain() {
    let t = PefTable::constant_one(5, 1e-3, 9).unwrap();
    let g = block_gain(&t, &reference::design_distribution()).unwrap();
    assert_eq!((g.g_block, g.var_block), (0.0, 0.0));
}

#[test]
fn chained_pefs_satisfy_block_inequality() {
    // Block-level E[prod_j F_j mu^beta] <= 1 for adversarial i.i.d. trials
    // drawn from random members of the model, estimated by Monte Carlo.
    let (k, beta) = (4u32, 0.05);
    let nu = noisy_tsirelson(0.9);
    let table = build_pef_table(&nu, beta, k, 6).unwrap();
    let n = 1u64 << k;
    let fs: Vec<TrialPef> = (1..=n).map(|j| table.f_at(j).unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for case in 0..6 {
        let mu = if case == 0 {
            *nonlocal_vertex()
        } else {
            random_member(&mut rng)
        };
        let flat = mu.flat();
        let samples = 200_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..samples {
            let mut prod = 1.0;
            for j in 1..=n {
                // Position j is the spot check with probability q_j.
                let spot = rng.random::<f64>() < input_distribution(j, k).unwrap().q();
                let z = if spot { rng.random_range(0..4usize) } else { 0 };
                let u: f64 = rng.random();
                let mut c = 0;
                let mut acc = flat[4 * z];
                while u > acc && c < 3 {
                    c += 1;
                    acc += flat[4 * z + c];
                }
                let i = 4 * z + c;
                if flat[i] == 0.0 {
                    continue;
                }
                prod *= fs[(j - 1) as usize].value(i) * pow_1b(flat[i], beta) / flat[i];
                if spot {
                    break;
                }
            }
            s1 += prod;
            s2 += prod * prod;
        }
        let mean = s1 / samples as f64;
        let se = ((s2 / samples as f64 - mean * mean) / samples as f64).sqrt();
        assert!(mean <= 1.0 + 5.0 * se, "case {case}: {mean} +- {se}");
    }
}

#[test]
fn monte_carlo_agrees_with_analytic_gain() {
    let (k, beta) = (5u32, 0.02);
    let nu = noisy_tsirelson(0.85);
    let table = build_pef_table(&nu, beta, k, 12).unwrap();
    let g = block_gain(&table, &nu).unwrap();
    let prepared = PreparedTable::new(table).unwrap();
    let sim = BlockSimulator::new(&nu, k, 5).unwrap();
    let n = 1_000_000u64;
    let (mut s1, mut s2) = (0.0, 0.0);
    for i in 0..n {
        let x = prepared.block_sparse(&sim.block(i)).unwrap().to_f64();
        s1 += x;
        s2 += x * x;
    }
    let mean = s1 / n as f64;
    let var = s2 / n as f64 - mean * mean;
    let se = (var / n as f64).sqrt();
    assert!(
        (mean - g.g_block).abs() <= 4.0 * se,
        "{mean} vs {} (se {se})",
        g.g_block
    );
    assert!(
        (var - g.var_block).abs() <= 0.05 * g.var_block,
        "{var} vs {}",
        g.var_block
    );
}

#[test]
fn lifting_examples() {
    let model = tsirelson_vertices().unwrap();
    let uniform = InputDistribution::uniform();
    let nu = reference::commissioning_distribution();
    let (f, _) = optimize_trial_pef(&nu, uniform, 1e-4).unwrap();
    let lifted = lift_to_uniform(&f, uniform).as_uniform_pef().unwrap();
    for i in 0..16 {
        assert!((lifted.value(i) - f.value(i)).abs() < 1e-15);
    }
    for &q in &[1e-5, 0.3, 0.9] {
        let qd = InputDistribution::from_q(q).unwrap();
        let one = TrialPef::one(1e-3, q).unwrap();
        let l = lift_to_uniform(&one, qd).as_uniform_pef().unwrap();
        let nu_q = qd.table();
        for i in 0..16 {
            assert!((l.value(i) - 4.0 * nu_q[i / 4]).abs() < 1e-12);
        }
        assert!(is_valid_pef(&l, uniform, model));
    }
}

#[test]
fn anchors_are_reproduced_exactly() {
    let nu = reference::commissioning_distribution();
    let table = build_pef_table(&nu, 4.7614e-8, 17, 53_478).unwrap();
    for (a, j) in table.anchors().iter().zip([1u64, 53_478, 1 << 17]) {
        assert_eq!(table.f_at(j).unwrap().excess(), a.excess());
    }
    assert!(table.f_at(0).is_err());
    assert!(table.f_at((1 << 17) + 1).is_err());
    let back: PefTable = serde_json::from_str(&serde_json::to_string(&table).unwrap()).unwrap();
    assert_eq!(back, table);
}

#[test]
fn entropy_certificate_examples() {
    let (beta, eps_s) = (1e-3, 1e-4);
    let b = entropy_certificate(0.0, beta, eps_s, 1.0).unwrap();
    assert!((b - eps_s.log2() / beta).abs() < 1e-9);
    assert!(b <= 0.0);
    let once = entropy_certificate(5.0, beta, eps_s, 0.25).unwrap();
    let twice = entropy_certificate(5.0, beta, eps_s, 0.5).unwrap();
    assert!((twice - once - (1.0 + beta) / beta).abs() < 1e-6);
    assert!(entropy_certificate(1.0, beta, 0.0, 1.0).is_err());
    assert!(entropy_certificate(1.0, beta, 0.5, 1.5).is_err());

    // The published run: threshold, power and error split.
    let s = protocol_sigma_in(1_616_998_677.0, 4.7614e-8, 5.6822e-7, 5.7e-7);
    assert!((s - 1_181_264_480.0).abs() < 1.0, "{s}");
    let via_cert = entropy_certificate(
        4.7614e-8 * 1_616_998_677.0,
        4.7614e-8,
        5.6822e-7 / 5.7e-7,
        5.7e-7,
    )
    .unwrap();
    assert!((via_cert - s).abs() < 1e-3 * s.abs());
}

#[test]
fn optimal_gain_is_continuous_in_beta() {
    let nu = reference::commissioning_distribution();
    for &beta in &[1e-7, 1e-5, 1e-3] {
        let g = optimal_position_gain(&nu, beta, 40_000, 17).unwrap();
        for &r in &[1.0 - 1e-4, 1.0 + 1e-4] {
            let h = optimal_position_gain(&nu, beta * r, 40_000, 17).unwrap();
            assert!((g - h).abs() <= 1e-3 * g.abs(), "beta {beta}: {g} vs {h}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn optimizer_and_interpolator_outputs_are_valid(
        seed in any::<u64>(),
        log_beta in -8.0f64..-1.0,
        k in 1u32..=17,
        jf in 0.0f64..1.0,
        mf in 0.0f64..1.0,
    ) {
        let model = tsirelson_vertices().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nu = random_member(&mut rng);
        let beta = 10f64.powf(log_beta);
        let n = 1u64 << k;
        let j = 1 + ((n - 1) as f64 * jf) as u64;
        let q = input_distribution(j, k).unwrap();
        let (f, _) = optimize_trial_pef(&nu, q, beta).unwrap();
        prop_assert!(is_valid_pef(&f, q, model));
        if seed % 8 == 0 {
            let j_mid = 1 + ((n - 1) as f64 * mf) as u64;
            let table = build_pef_table(&nu, beta, k, j_mid).unwrap();
            prop_assert!(is_valid_pef(&table.f_at(j).unwrap(), q, model));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lift_then_unlift_is_identity(
        excess in prop::array::uniform16(-5.0f64..5.0),
        log_q in -12.0f64..0.1,
    ) {
        let q = 10f64.powf(log_q).min(4.0 / 3.0 - 1e-9);
        let f = TrialPef::from_excess(excess, 1e-3, q).unwrap();
        let back = lift_to_uniform(&f, InputDistribution::from_q(q).unwrap()).unlift().unwrap();
        for i in 0..16 {
            prop_assert!((back.excess()[i] - f.excess()[i]).abs() <= 1e-12 * f.excess()[i].abs().max(1e-300));
        }
    }

    #[test]
    fn interpolation_is_coordinatewise_between_anchors(
        seed in any::<u64>(),
        jf in 0.0f64..1.0,
    ) {
        let (k, j_mid) = (10u32, 300u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nu = random_member(&mut rng);
        let table = build_pef_table(&nu, 1e-4, k, j_mid).unwrap();
        let anchors = table.anchors();
        let qs = [1u64, j_mid, 1 << k].map(|j| input_distribution(j, k).unwrap());
        let lifted: Vec<_> = anchors.iter().zip(qs).map(|(a, q)| lift_to_uniform(a, q)).collect();
        let j = 1 + (((1u64 << k) - 1) as f64 * jf) as u64;
        let qj = input_distribution(j, k).unwrap();
        let f = table.f_at(j).unwrap();
        let direct = interpolate(&[lifted[0], lifted[1], lifted[2]], j, k).unwrap();
        prop_assert_eq!(direct.excess(), f.excess());
        let mine = lift_to_uniform(&f, qj);
        let (lo, hi) = if j <= j_mid { (&lifted[0], &lifted[1]) } else { (&lifted[1], &lifted[2]) };
        for i in 0..16 {
            let (a, b) = (lo.lifted_excess()[i], hi.lifted_excess()[i]);
            let v = mine.lifted_excess()[i];
            let slack = 1e-9 * a.abs().max(b.abs()).max(1.0);
            prop_assert!(v >= a.min(b) - slack && v <= a.max(b) + slack, "{v} not in [{a}, {b}]");
        }
    }
}
