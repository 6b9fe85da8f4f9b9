use std::collections::{HashMap, HashSet};

use ctcssl::confidence::NUM_BINS;
use ctcssl::selection::{
    allocate_quotas, apply_common_filters, partition_by_bin, sample_by_domain, sample_combined, Budget,
    SelectionConfig, Strategy, UtteranceMeta,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pool(seed: u64) -> Vec<UtteranceMeta> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(0..700);
    let devices = rng.random_range(1..25);
    let phrases = rng.random_range(1..20);
    let wake_p = rng.random_range(0.0..0.3);
    // Skewed bins so some are empty or scarce.
    let bin_skew: f64 = rng.random_range(0.0..3.0);
    (0..n)
        .map(|i| {
            let u: f64 = rng.random();
            UtteranceMeta {
                id: format!("u{i}"),
                device: format!("dev{}", rng.random_range(0..devices)),
                speaker: format!("spk{}", rng.random_range(0..10)),
                domain: format!("D{}", rng.random_range(1..=3)),
                hypothesis: format!("h{}", rng.random_range(0..phrases)),
                bin: ((u.powf(1.0 + bin_skew) * NUM_BINS as f64) as usize).min(NUM_BINS - 1),
                duration: rng.random_range(1..60),
                wakeword_only: rng.random_bool(wake_p),
            }
        })
        .collect()
}

fn counts<'a>(xs: impl Iterator<Item = &'a str>) -> HashMap<&'a str, usize> {
    let mut m = HashMap::new();
    for x in xs {
        *m.entry(x).or_insert(0) += 1;
    }
    m
}

/// Largest-remainder apportionment written out directly.
fn lr_oracle(amount: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| amount as f64 * w / total).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = amount - out.iter().sum::<usize>();
    let mut taken = vec![false; weights.len()];
    while left > 0 {
        let mut best: Option<usize> = None;
        for i in 0..weights.len() {
            if taken[i] || weights[i] <= 0.0 {
                continue;
            }
            let fi = exact[i] - exact[i].floor();
            match best {
                Some(b) if exact[b] - exact[b].floor() >= fi => {}
                _ => best = Some(i),
            }
        }
        let b = best.expect("some positive weight");
        taken[b] = true;
        out[b] += 1;
        left -= 1;
    }
    out
}

fn cfg_for(seed: u64, caps: usize, strategy: Strategy, budget: usize) -> SelectionConfig {
    SelectionConfig {
        max_per_content: caps,
        max_per_device: caps,
        strategy,
        budget: Budget::Utterances(budget),
        seed,
        ..SelectionConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn selection_contracts_hold_on_random_pools(
        pool_seed in any::<u64>(),
        sel_seed in any::<u64>(),
        caps in prop_oneof![Just(50usize), 1usize..80],
        budget in 1usize..900,
        raw_weights in prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..5.0], NUM_BINS),
    ) {
        let pool = random_pool(pool_seed);
        let base = cfg_for(sel_seed, caps, Strategy::Uniform, budget);

        // Filters.
        let f = apply_common_filters(&pool, &base);
        prop_assert!(f.kept.iter().all(|m| !m.wakeword_only));
        prop_assert!(counts(f.kept.iter().map(|m| m.hypothesis.as_str())).values().all(|&c| c <= caps));
        prop_assert!(counts(f.kept.iter().map(|m| m.device.as_str())).values().all(|&c| c <= caps));
        let r = &f.removed;
        prop_assert_eq!(r.wakeword_only, pool.iter().filter(|m| m.wakeword_only).count());
        prop_assert_eq!(r.wakeword_only + r.content_cap + r.device_cap + f.kept.len(), pool.len());
        let order: HashMap<&str, usize> = pool.iter().enumerate().map(|(i, m)| (m.id.as_str(), i)).collect();
        prop_assert!(f.kept.windows(2).all(|w| order[w[0].id.as_str()] < order[w[1].id.as_str()]));
        prop_assert_eq!(&apply_common_filters(&pool, &base), &f);

        let bins = partition_by_bin(&f.kept);
        let capacity: Vec<usize> = bins.iter().map(Vec::len).collect();
        let available: usize = capacity.iter().sum();
        let target = budget.min(available);
        if available == 0 {
            let s = sample_combined(&bins, &base).unwrap();
            prop_assert!(s.selected.is_empty());
            return Ok(());
        }

        // UD: equal shares, the remainder to the lowest bins, then capped.
        let ud = sample_combined(&bins, &base).unwrap();
        let (q, rem) = (target / NUM_BINS, target % NUM_BINS);
        for b in 0..NUM_BINS {
            prop_assert_eq!(ud.plan.rounded[b], q + usize::from(b < rem));
            prop_assert!(ud.plan.quotas[b] <= capacity[b]);
            if capacity[b] >= ud.plan.rounded[b] {
                prop_assert!(ud.plan.quotas[b] >= ud.plan.rounded[b]);
            }
        }
        prop_assert_eq!(ud.plan.quotas.iter().sum::<usize>(), target);
        if capacity.iter().all(|&c| c >= target.div_ceil(NUM_BINS)) {
            let (lo, hi) = (ud.plan.quotas.iter().min().unwrap(), ud.plan.quotas.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
            if target % NUM_BINS == 0 {
                prop_assert_eq!(lo, hi);
            }
        }
        prop_assert_eq!(&ud.realized, &ud.plan.quotas);

        // Selected items are unique members of their bins, matching realized counts.
        let ids: HashSet<&str> = ud.selected.iter().map(|m| m.id.as_str()).collect();
        prop_assert_eq!(ids.len(), ud.selected.len());
        let kept: HashSet<&str> = f.kept.iter().map(|m| m.id.as_str()).collect();
        prop_assert!(ids.is_subset(&kept));
        let mut per_bin = [0usize; NUM_BINS];
        for m in &ud.selected {
            per_bin[m.bin] += 1;
        }
        prop_assert_eq!(per_bin.to_vec(), ud.realized.clone());

        // WS: largest-remainder apportionment of the weights.
        let weights = if raw_weights.iter().sum::<f64>() > 0.0 { raw_weights.clone() } else { vec![1.0; NUM_BINS] };
        let ws_cfg = SelectionConfig { strategy: Strategy::Weighted, ws_weights: weights.clone(), ..base.clone() };
        let ws = sample_combined(&bins, &ws_cfg).unwrap();
        prop_assert_eq!(&ws.plan.rounded, &lr_oracle(target, &weights));
        let total_w: f64 = weights.iter().sum();
        for b in 0..NUM_BINS {
            let ideal = target as f64 * weights[b] / total_w;
            prop_assert!((ws.plan.ideal[b] - ideal).abs() <= 1e-9 * ideal.max(1.0));
            let r = ws.plan.rounded[b];
            prop_assert!(r == ideal.floor() as usize || r == ideal.floor() as usize + 1);
            if weights[b] == 0.0 {
                prop_assert_eq!(r, 0);
            }
        }
        for i in 0..NUM_BINS {
            for j in 0..NUM_BINS {
                let up_i = ws.plan.rounded[i] > ws.plan.ideal[i].floor() as usize;
                let up_j = ws.plan.rounded[j] > ws.plan.ideal[j].floor() as usize;
                if up_i && !up_j && weights[j] > 0.0 {
                    let fi = ws.plan.ideal[i] - ws.plan.ideal[i].floor();
                    let fj = ws.plan.ideal[j] - ws.plan.ideal[j].floor();
                    prop_assert!(fi >= fj);
                }
            }
        }
        prop_assert!(ws.plan.quotas.iter().zip(&capacity).all(|(q, c)| q <= c));
        let reachable: usize = (0..NUM_BINS).filter(|&b| weights[b] > 0.0).map(|b| capacity[b]).sum();
        prop_assert_eq!(ws.plan.quotas.iter().sum::<usize>(), target.min(reachable));

        // Determinism.
        prop_assert_eq!(&sample_combined(&bins, &base).unwrap(), &ud);
        prop_assert_eq!(&sample_combined(&bins, &ws_cfg).unwrap(), &ws);
        let nd_cfg = SelectionConfig { strategy: Strategy::Natural, ..base.clone() };
        let nd = sample_combined(&bins, &nd_cfg).unwrap();
        prop_assert_eq!(nd.plan.quotas.iter().sum::<usize>(), target);
        prop_assert_eq!(&sample_combined(&bins, &nd_cfg).unwrap(), &nd);
    }

    #[test]
    fn domain_sampling_stays_in_requested_domains(pool_seed in any::<u64>(), seed in any::<u64>(), budget in 1usize..500) {
        let pool = random_pool(pool_seed);
        let cfg = cfg_for(seed, 50, Strategy::Uniform, budget);
        let domains: HashSet<&str> = pool.iter().map(|m| m.domain.as_str()).collect();
        if !domains.contains("D2") {
            prop_assert!(sample_by_domain(&pool, &["D2".into()], Budget::Utterances(budget), &cfg).is_err());
            return Ok(());
        }
        let s = sample_by_domain(&pool, &["D2".into()], Budget::Utterances(budget), &cfg).unwrap();
        prop_assert!(s.selected.iter().all(|m| m.domain == "D2" && !m.wakeword_only));
        prop_assert_eq!(&sample_by_domain(&pool, &["D2".into()], Budget::Utterances(budget), &cfg).unwrap(), &s);
        prop_assert!(sample_by_domain(&pool, &["D9".into()], Budget::Utterances(budget), &cfg).is_err());
    }

    #[test]
    fn frame_budgets_are_never_exceeded(pool_seed in any::<u64>(), seed in any::<u64>(), frames in 1usize..5000) {
        let pool = random_pool(pool_seed);
        let cfg = SelectionConfig { budget: Budget::Frames(frames), seed, ..SelectionConfig::default() };
        let bins = partition_by_bin(&apply_common_filters(&pool, &cfg).kept);
        let s = sample_combined(&bins, &cfg).unwrap();
        let used: usize = s.selected.iter().map(|m| m.duration).sum();
        prop_assert!(used <= frames);
        prop_assert!(s.realized.iter().zip(&s.plan.quotas).all(|(r, q)| r <= q));
        prop_assert_eq!(used, s.realized.iter().sum::<usize>());
    }

    #[test]
    fn quotas_respect_capacity_and_budget(
        budget in 0usize..2000,
        weights in prop::collection::vec(0.0f64..4.0, 1..12),
        capacity in prop::collection::vec(0usize..300, 12),
    ) {
        prop_assume!(weights.iter().sum::<f64>() > 0.0);
        let capacity = &capacity[..weights.len()];
        let plan = allocate_quotas(budget, &weights, capacity);
        prop_assert_eq!(plan.rounded.iter().sum::<usize>(), budget);
        prop_assert!(plan.quotas.iter().zip(capacity).all(|(q, c)| q <= c));
        let reachable: usize = weights.iter().zip(capacity).filter(|(w, _)| **w > 0.0).map(|(_, c)| c).sum();
        prop_assert_eq!(plan.quotas.iter().sum::<usize>(), budget.min(reachable));
    }
}
