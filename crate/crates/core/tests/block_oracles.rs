mod common;

use pamlab::diagnostics::{
    classify_block, classify_sufficient, count_bad_blocks, mixing_event_frequency, regularity_statistic, sup_xi_psi,
    tail_condition_check, xi_psi_for_path, BlockId, BlockSpec, JumpFamily, RegularityFamily, SearchMode, Sufficiency,
    SufficiencyParams, Verdict,
};
use pamlab::environments::{sample_centered, EnvModel, EnvModelSpec, EnvTrace};
use pamlab::Lattice;
use proptest::prelude::*;

fn spec_of(p: common::Params) -> BlockSpec {
    BlockSpec::new(p.a as f64, p.r, p.big_c, p.b as u32, p.c as u32).unwrap()
}

#[test]
fn small_instances_match_brute_force() {
    for seed in 0..40u64 {
        let side = if seed % 2 == 0 { 8 } else { 4 };
        let trace = common::random_trace(seed, side, 8.0);
        let p = common::random_params(seed, side);
        let spec = spec_of(p);
        for ((x, k), bad) in common::verdict_table(&trace, p) {
            let v = classify_block(&trace, &spec, &BlockId::new(vec![x], k as u64)).unwrap();
            assert_eq!(v == Verdict::Bad, bad, "seed {seed} block ({x},{k})");
        }
        assert_eq!(count_bad_blocks(&trace, &spec, 1.0, 6.0).unwrap(), common::count_bad(&trace, p, 1.0, 6.0));
        let path = common::random_path(seed, trace.lattice(), 7.5);
        let tabs = common::tables(&trace, p);
        let r = xi_psi_for_path(&trace, &spec, &path).unwrap();
        assert_eq!((r.xi, r.psi), common::xi_psi(&trace, p, &tabs, &path), "seed {seed}");
    }
}

#[test]
fn exhaustive_sup_matches_second_enumerator() {
    for seed in 0..6u64 {
        let trace = common::random_trace(100 + seed, 8, 8.0);
        let p = common::random_params(100 + seed, 8);
        for j in 0..=2 {
            let fam = JumpFamily { jumps: j, t: 6.0, c1: None };
            let sup = sup_xi_psi(&trace, &spec_of(p), &fam, SearchMode::Exhaustive).unwrap();
            assert!(sup.exact);
            assert_eq!((sup.xi, sup.psi), common::sup_xi_psi(&trace, p, j, 6.0), "seed {seed} j {j}");
        }
    }
}

#[test]
fn regularity_matches_direct_enumeration() {
    let lat = Lattice::new(1, 5).unwrap();
    for seed in 0..5 {
        let trace = sample_centered(&EnvModelSpec::two_state(), &lat, 20.0, seed).unwrap();
        let fam = RegularityFamily { n: 4, t: 5.0, kappa: 0.1, b: 0.5 };
        let r = regularity_statistic(&trace, &fam, SearchMode::Exhaustive).unwrap();
        assert_eq!(r.value, common::regularity(&trace, 4, 5.0, 0.1, 0.5));
        let sampled = regularity_statistic(&trace, &fam, SearchMode::Sampled { n: 20, seed }).unwrap();
        assert!(sampled.value <= r.value && !sampled.exact);
    }
}

/// `E_y[exp(∫_0^s ξ(X_u, t0+u) du); N(X, s) <= cap]` by RK4 on the
/// backward equation in (site, remaining jumps).
fn capped_expectation(trace: &EnvTrace, kappa: f64, y: usize, t0: f64, s: f64, cap: usize) -> f64 {
    let lat = trace.lattice();
    let n = lat.n_sites();
    let rate = lat.degree() as f64 * kappa;
    let deriv = |f: &[f64], xi: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        for z in 0..n {
            for m in 0..=cap {
                let mut v = (xi[z] - rate) * f[z * (cap + 1) + m];
                if m > 0 {
                    v += kappa * lat.neighbors(z).iter().map(|&w| f[w * (cap + 1) + m - 1]).sum::<f64>();
                }
                out[z * (cap + 1) + m] = v;
            }
        }
        out
    };
    let mut cuts: Vec<f64> = trace
        .events()
        .iter()
        .map(|e| e.time)
        .filter(|&t| t > t0 && t < t0 + s)
        .collect();
    cuts.push(t0);
    cuts.push(t0 + s);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut f = vec![1.0; n * (cap + 1)];
    // integrate from t0+s back to t0, one constancy interval at a time
    for w in cuts.windows(2).rev() {
        let xi: Vec<f64> = (0..n).map(|z| trace.query(z, w[0]).unwrap()).collect();
        let steps = ((w[1] - w[0]) / 1e-3).ceil() as usize;
        let h = (w[1] - w[0]) / steps as f64;
        for _ in 0..steps {
            let k1 = deriv(&f, &xi);
            let k2 = deriv(&f.iter().zip(&k1).map(|(a, b)| a + 0.5 * h * b).collect::<Vec<_>>(), &xi);
            let k3 = deriv(&f.iter().zip(&k2).map(|(a, b)| a + 0.5 * h * b).collect::<Vec<_>>(), &xi);
            let k4 = deriv(&f.iter().zip(&k3).map(|(a, b)| a + h * b).collect::<Vec<_>>(), &xi);
            for i in 0..f.len() {
                f[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
    }
    f[y * (cap + 1) + cap]
}

#[test]
fn sufficiency_matches_ode_oracle() {
    let lat = Lattice::new(1, 16).unwrap();
    let trace = sample_centered(&EnvModelSpec::two_state(), &lat, 6.0, 9).unwrap();
    let spec = BlockSpec::new(2.0, 1, 1.0, 0, 0).unwrap().with_width(4.0).unwrap();
    let id = BlockId::new(vec![1], 1);
    let base = SufficiencyParams {
        kappa: 0.5,
        n_trunc: 0.5,
        lambda_ref: 0.0,
        eps: 0.0,
        m: 1.0,
        n_samples: 20_000,
        seed: 4,
    };
    let truncated = trace.map_values(|v| v.clamp(-0.5, 0.5));
    let rep = classify_sufficient(&trace, &spec, &id, &base).unwrap();
    let mut worst: f64 = 0.0;
    for site in &rep.sites {
        let exact = capped_expectation(&truncated, 0.5, site.site, 2.0, 2.0, 2);
        assert!((site.estimate - exact).abs() <= 4.0 * site.std_error, "site {}: {} vs {exact}", site.site, site.estimate);
        worst = worst.max(exact);
    }
    // thresholds well above and well below the largest exact value
    let high = SufficiencyParams { lambda_ref: (1.2 * worst).ln() / 2.0, ..base };
    let low = SufficiencyParams { lambda_ref: (0.8 * worst).ln() / 2.0, ..base };
    assert_eq!(classify_sufficient(&trace, &spec, &id, &high).unwrap().verdict, Sufficiency::Sufficient);
    assert_eq!(classify_sufficient(&trace, &spec, &id, &low).unwrap().verdict, Sufficiency::Insufficient);
}

#[test]
fn sufficiency_degenerate_when_all_paths_exceed_cap() {
    let lat = Lattice::new(1, 16).unwrap();
    let trace = sample_centered(&EnvModelSpec::two_state(), &lat, 6.0, 9).unwrap();
    // M = 1/4 on s = 2 caps at zero jumps; κ = 50 makes a jump-free path essentially impossible
    let spec = BlockSpec::new(2.0, 1, 1.0, 0, 0).unwrap().with_width(1.0).unwrap();
    let p = SufficiencyParams {
        kappa: 50.0,
        n_trunc: 1.0,
        lambda_ref: 0.0,
        eps: 0.1,
        m: 0.25,
        n_samples: 200,
        seed: 1,
    };
    let err = classify_sufficient(&trace, &spec, &BlockId::new(vec![4], 1), &p).unwrap_err();
    assert!(matches!(err, pamlab::Error::Degenerate { .. }), "{err}");
}

#[test]
fn tail_probability_decreases_with_box_size() {
    let lat = Lattice::new(1, 32).unwrap();
    let env = EnvModelSpec::new(EnvModel::IndependentWalks { nu: 1.0 }, Default::default());
    let rows = tail_condition_check(&env, &lat, &[2, 4, 8], &[2.0], 7.0, 10_000, 5).unwrap();
    for w in rows.windows(2) {
        eprintln!("R={} p={} [{}, {}]", w[0].r, w[0].probability, w[0].ci_low, w[0].ci_high);
        assert!(w[1].probability <= w[0].ci_high, "R={} -> R={}", w[0].r, w[1].r);
    }
}

#[test]
fn mixing_frequency_report_by_level() {
    let lat = Lattice::new(1, 16).unwrap();
    let env = EnvModelSpec::two_state();
    let mut reports = Vec::new();
    for r in [1, 2] {
        let spec = BlockSpec::new(2.0, r, 0.5, 0, 0).unwrap();
        let rep = mixing_event_frequency(&spec, &env, &lat, 200, 2, 11).unwrap();
        eprintln!("R={r}: {} [{}, {}] ref {}", rep.frequency, rep.ci_low, rep.ci_high, rep.reference_bound);
        assert!(rep.ci_low <= rep.frequency && rep.frequency <= rep.ci_high);
        reports.push(rep);
    }
    if reports[1].ci_high < reports[0].ci_low || reports[0].ci_high < reports[1].ci_low {
        assert!(reports[1].frequency <= reports[0].frequency);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn raising_threshold_never_makes_a_block_bad(seed in 0u64..10_000, x in 0i64..8, k in 1u64..3) {
        let trace = common::random_trace(seed, 8, 8.0);
        let lo = BlockSpec::new(2.0, 1, 0.5, 0, 1).unwrap();
        let hi = BlockSpec { big_c: 1.5, ..lo.clone() };
        let id = BlockId::new(vec![x], k);
        if classify_block(&trace, &lo, &id).unwrap() == Verdict::Good {
            prop_assert_eq!(classify_block(&trace, &hi, &id).unwrap(), Verdict::Good);
        }
    }

    #[test]
    fn path_counts_obey_crossing_bounds(seed in 0u64..10_000) {
        let trace = common::random_trace(seed, 8, 8.0);
        let spec = BlockSpec::new(2.0, 1, [0.0, 0.5, 1.0][(seed % 3) as usize], (seed % 2) as u32, 0).unwrap();
        let path = common::random_path(seed, trace.lattice(), 8.0);
        let r = xi_psi_for_path(&trace, &spec, &path).unwrap();
        prop_assert!(r.xi <= r.r_blocks_crossed);
        prop_assert!(r.psi <= r.coarse_good_crossed);
        // each crossed R-block sits in a crossed (R+1)-block, which holds at most 2^d A^{1+d} R-blocks
        let bound = 2 * 2usize.pow(2);
        prop_assert!(r.xi <= bound * (r.coarse_bad_crossed + r.psi));
    }
}
