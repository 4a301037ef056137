//! Independent oracles for the evaluation metrics: a set-count Dice oracle,
//! an exhaustive pairwise-distance Hausdorff oracle and a quadrature t-CDF
//! oracle, plus randomized property checks.

mod common;

use candle_core::Device;
use dcda_core::metrics::{dice_score, hd95, paired_ttest, percentile};
use dcda_core::types::Mask;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn mask_from_grid(grid: &[bool], side: usize) -> Mask {
    Mask::from_grid(grid, side, side, &Device::Cpu).unwrap()
}

/// Independent Dice oracle: plain set counting.
fn dice_oracle(p: &[bool], g: &[bool]) -> f64 {
    let inter = p.iter().zip(g).filter(|(&a, &b)| a && b).count() as f64;
    let np = p.iter().filter(|&&v| v).count() as f64;
    let ng = g.iter().filter(|&&v| v).count() as f64;
    if np + ng == 0.0 {
        100.0
    } else {
        100.0 * 2.0 * inter / (np + ng)
    }
}

fn points(grid: &[bool], side: usize) -> Vec<(f64, f64)> {
    (0..side * side)
        .filter(|&i| grid[i])
        .map(|i| ((i / side) as f64, (i % side) as f64))
        .collect()
}

/// Exhaustive O(|P||G|) directed-distance pool and its 95th percentile.
fn hd95_oracle(p: &[bool], g: &[bool], side: usize) -> Option<f64> {
    let ps = points(p, side);
    let gs = points(g, side);
    if ps.is_empty() || gs.is_empty() {
        return None;
    }
    let min_dist = |from: &(f64, f64), to: &[(f64, f64)]| {
        to.iter()
            .map(|q| ((from.0 - q.0).powi(2) + (from.1 - q.1).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min)
    };
    let mut pooled: Vec<f64> = ps.iter().map(|pt| min_dist(pt, &gs)).collect();
    pooled.extend(gs.iter().map(|pt| min_dist(pt, &ps)));
    pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // Same percentile convention, implemented independently.
    let pos = 0.95 * (pooled.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(pooled[lo] + (pos - lo as f64) * (pooled[hi] - pooled[lo]))
}

fn max_hausdorff_oracle(p: &[bool], g: &[bool], side: usize) -> Option<f64> {
    let ps = points(p, side);
    let gs = points(g, side);
    if ps.is_empty() || gs.is_empty() {
        return None;
    }
    let directed = |from: &[(f64, f64)], to: &[(f64, f64)]| {
        from.iter()
            .map(|pt| {
                to.iter()
                    .map(|q| ((pt.0 - q.0).powi(2) + (pt.1 - q.1).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    Some(directed(&ps, &gs).max(directed(&gs, &ps)))
}

fn random_grid(rng: &mut ChaCha8Rng, side: usize, fill: f64) -> Vec<bool> {
    (0..side * side).map(|_| rng.gen_bool(fill)).collect()
}

#[test]
fn dice_and_hd95_match_oracles_on_100_seeded_pairs() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let side = 16;
    for case in 0..100 {
        let p = random_grid(&mut rng, side, 0.3);
        let g = random_grid(&mut rng, side, 0.3);
        let pm = mask_from_grid(&p, side);
        let gm = mask_from_grid(&g, side);

        let dice = dice_score(&pm, &gm).unwrap();
        assert_eq!(dice, dice_oracle(&p, &g), "dice mismatch on case {case}");

        let fast = hd95(&pm, &gm).unwrap();
        let slow = hd95_oracle(&p, &g, side);
        match (fast, slow) {
            (Some(a), Some(b)) => {
                assert!((a - b).abs() <= 1e-9, "hd95 case {case}: {a} vs {b}");
                let max_h = max_hausdorff_oracle(&p, &g, side).unwrap();
                assert!(
                    a <= max_h + 1e-9,
                    "case {case}: hd95 {a} exceeds max Hausdorff {max_h}"
                );
            }
            (None, None) => {}
            other => panic!("case {case}: definedness mismatch {other:?}"),
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() <= 10.0, "oracle sweep took {elapsed:?}");
}

/// Student-t density for the quadrature oracle.
fn t_pdf(x: f64, df: f64) -> f64 {
    // Gamma((df+1)/2) / (sqrt(df*pi) * Gamma(df/2)) * (1 + x^2/df)^-((df+1)/2)
    fn ln_gamma(z: f64) -> f64 {
        // Lanczos approximation, plenty for the oracle.
        const G: f64 = 7.0;
        const COEF: [f64; 9] = [
            0.999_999_999_999_809_93,
            676.520_368_121_885_1,
            -1259.139_216_722_402_8,
            771.323_428_777_653_13,
            -176.615_029_162_140_6,
            12.507_343_278_686_905,
            -0.138_571_095_265_720_12,
            9.984_369_578_019_572e-6,
            1.505_632_735_149_311_6e-7,
        ];
        if z < 0.5 {
            return (std::f64::consts::PI / (std::f64::consts::PI * z).sin()).ln()
                - ln_gamma(1.0 - z);
        }
        let z = z - 1.0;
        let mut x = COEF[0];
        for (i, &c) in COEF.iter().enumerate().skip(1) {
            x += c / (z + i as f64);
        }
        let t = z + G + 0.5;
        0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + x.ln()
    }
    let norm = (ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0)).exp()
        / (df * std::f64::consts::PI).sqrt();
    norm * (1.0 + x * x / df).powf(-(df + 1.0) / 2.0)
}

/// Two-tailed p-value by Simpson quadrature of the t density. The tail is
/// integrated under the substitution `x = a / u`, which maps `[a, inf)` to
/// `(0, 1]` and so captures the heavy tail exactly.
fn p_value_oracle(t: f64, df: f64) -> f64 {
    let a = t.abs();
    let integrand = |u: f64| {
        if u <= 0.0 {
            0.0
        } else {
            t_pdf(a / u, df) * a / (u * u)
        }
    };
    let n = 200_000;
    let h = 1.0 / n as f64;
    let mut acc = integrand(0.0) + integrand(1.0);
    for i in 1..n {
        let u = i as f64 * h;
        acc += integrand(u) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    2.0 * (acc * h / 3.0)
}

#[test]
fn ttest_matches_quadrature_oracle() {
    // diffs (1, 2, 3): t = 2 / (1/sqrt(3)) = 2*sqrt(3), df = 2.
    let t = 2.0 * 3f64.sqrt();
    let oracle = p_value_oracle(t, 2.0);
    assert!((oracle - 0.0742).abs() < 5e-4, "oracle sanity: {oracle}");

    let p = paired_ttest(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).unwrap();
    assert!((p - 0.0742).abs() < 5e-4, "got {p}");
    assert!((p - oracle).abs() < 1e-6, "impl {p} vs oracle {oracle}");

    // A second configuration, checked purely against quadrature.
    let a = [3.0, 5.0, 4.0, 6.0, 2.0];
    let b = [2.5, 4.0, 4.5, 5.0, 1.0];
    let diffs: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() as f64 - 1.0);
    let t2 = mean / (var / diffs.len() as f64).sqrt();
    let p2 = paired_ttest(&a, &b).unwrap();
    let oracle2 = p_value_oracle(t2, (diffs.len() - 1) as f64);
    assert!((p2 - oracle2).abs() < 1e-6, "impl {p2} vs oracle {oracle2}");
}

#[test]
fn zero_t_statistic_is_exactly_one() {
    let p = paired_ttest(&[1.0, 2.0, 3.0, 4.0], &[1.5, 1.5, 3.5, 3.5]).unwrap();
    assert_eq!(p, 1.0);
}

#[test]
fn percentile_interpolates_linearly() {
    let vals = [0.0, 1.0, 2.0, 3.0];
    assert_eq!(percentile(&vals, 0.0), 0.0);
    assert_eq!(percentile(&vals, 1.0), 3.0);
    assert!((percentile(&vals, 0.95) - 2.85).abs() < 1e-12);
    assert_eq!(percentile(&[5.0], 0.95), 5.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dice_is_symmetric_and_bounded(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let side = 12;
        let p = random_grid(&mut rng, side, 0.25);
        let g = random_grid(&mut rng, side, 0.25);
        let pm = mask_from_grid(&p, side);
        let gm = mask_from_grid(&g, side);
        let ab = dice_score(&pm, &gm).unwrap();
        let ba = dice_score(&gm, &pm).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=100.0).contains(&ab));
    }

    #[test]
    fn removing_a_false_positive_never_lowers_dice(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let side = 12;
        let mut p = random_grid(&mut rng, side, 0.3);
        let g = random_grid(&mut rng, side, 0.3);
        let fps: Vec<usize> = (0..side * side).filter(|&i| p[i] && !g[i]).collect();
        prop_assume!(!fps.is_empty());
        let before = dice_score(&mask_from_grid(&p, side), &mask_from_grid(&g, side)).unwrap();
        let drop = fps[rng.gen_range(0..fps.len())];
        p[drop] = false;
        let after = dice_score(&mask_from_grid(&p, side), &mask_from_grid(&g, side)).unwrap();
        prop_assert!(after >= before, "removing fp {} lowered dice {} -> {}", drop, before, after);
    }

    #[test]
    fn hd95_never_exceeds_max_hausdorff(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let side = 16;
        let p = random_grid(&mut rng, side, 0.15);
        let g = random_grid(&mut rng, side, 0.15);
        let fast = hd95(&mask_from_grid(&p, side), &mask_from_grid(&g, side)).unwrap();
        let max_h = max_hausdorff_oracle(&p, &g, side);
        match (fast, max_h) {
            (Some(a), Some(b)) => prop_assert!(a <= b + 1e-9, "{} > {}", a, b),
            (None, None) => {}
            other => prop_assert!(false, "definedness mismatch {:?}", other),
        }
    }
}
