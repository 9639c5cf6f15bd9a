use chromatic_bench::{
    draw_op, emit_report, prefill, run_trial, run_trials, thread_rng, Map, Mix, OpKind, TrialLength, WorkloadConfig,
};
use std::collections::BTreeMap;

fn budget(mix: Mix, key_range: u64, threads: usize, ops: u64) -> WorkloadConfig {
    WorkloadConfig {
        mix,
        key_range,
        threads,
        length: TrialLength::OpsBudget(ops),
        trials: 1,
        ..WorkloadConfig::default()
    }
}

#[test]
fn generated_mix_is_within_one_percent() {
    for mix in [Mix { insert: 50, delete: 50 }, Mix { insert: 20, delete: 10 }, Mix { insert: 0, delete: 0 }] {
        let mut rng = thread_rng(9, 3);
        let n = 200_000;
        let mut counts = [0u32; 3];
        for _ in 0..n {
            let i = match draw_op(mix, 1000, &mut rng).0 {
                OpKind::Insert => 0,
                OpKind::Delete => 1,
                OpKind::Get => 2,
            };
            counts[i] += 1;
        }
        for (c, want) in counts.iter().zip([mix.insert, mix.delete, mix.get()]) {
            let got = 100.0 * f64::from(*c) / f64::from(n);
            assert!((got - f64::from(want)).abs() <= 1.0, "{mix}: {counts:?}");
        }
    }
}

#[test]
fn keys_pass_chi_squared_uniformity() {
    // Upper 0.001 quantile of chi-squared with 99 degrees of freedom.
    const CRITICAL: f64 = 148.23;
    let bins = 100u64;
    let n = 100_000;
    let mut rng = thread_rng(4, 0);
    let mut counts = vec![0u64; bins as usize];
    for _ in 0..n {
        counts[draw_op(Mix { insert: 50, delete: 50 }, bins, &mut rng).1 as usize] += 1;
    }
    let e = n as f64 / bins as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    assert!(chi2 < CRITICAL, "chi2 = {chi2}");
}

#[test]
fn prefill_lands_in_the_band() {
    for (mix, key_range, expected) in [
        (Mix { insert: 50, delete: 50 }, 10_000, 5000.0),
        (Mix { insert: 20, delete: 10 }, 300, 200.0),
        (Mix { insert: 0, delete: 0 }, 100, 50.0),
    ] {
        let map = Map::new();
        let size = prefill(&map, &budget(mix, key_range, 1, 1), 5).unwrap();
        assert_eq!(size, map.len());
        assert!((size as f64 - expected).abs() <= 0.05 * expected, "{mix}: {size}");
    }
}

#[test]
fn budget_mode_is_deterministic_single_threaded() {
    let cfg = budget(Mix { insert: 20, delete: 10 }, 500, 1, 20_000);
    let a = run_trial(&cfg, 0).unwrap();
    let b = run_trial(&cfg, 0).unwrap();
    assert_eq!(a.total_ops, 20_000);
    assert!(a.ops_per_second > 0.0);
    assert_eq!((a.per_op, a.prefill_size, a.final_size), (b.per_op, b.prefill_size, b.final_size));
    let other = run_trial(&cfg, 1).unwrap();
    assert_ne!(a.per_op, other.per_op, "trials use distinct seeds");
}

#[test]
fn budget_mode_loses_no_updates() {
    let cfg = WorkloadConfig {
        audit: true,
        ..budget(Mix { insert: 50, delete: 50 }, 200, 4, 40_001)
    };
    let r = run_trial(&cfg, 0).unwrap();
    assert_eq!(r.total_ops, 40_001);
    assert_eq!(r.final_size as i64, r.prefill_size as i64 + r.per_op.net_size_change());
    let audit = r.audit.unwrap();
    assert!(audit.passed && audit.violations == 0, "{audit:?}");
}

#[test]
fn csv_has_a_row_per_trial() {
    let cfg = budget(Mix { insert: 50, delete: 50 }, 100, 1, 1000);
    let one = emit_report(&run_trials(&cfg).unwrap());
    assert_eq!(one.lines().count(), 2);
    assert!(one.ends_with('\n') && !one.contains('\r'));

    let mut rows = Vec::new();
    for k in [0, 6] {
        rows.extend(run_trials(&WorkloadConfig { trials: 5, warmup: 1, k, ..cfg.clone() }).unwrap());
    }
    let csv = emit_report(&rows);
    assert_eq!(csv.lines().count(), 11);
    assert!(csv.lines().skip(1).all(|l| l.starts_with("Chromatic,") || l.starts_with("Chromatic6,")));
}

#[test]
fn stddev_column_matches_recomputation() {
    let mut rows = Vec::new();
    for threads in [1, 2] {
        let cfg = WorkloadConfig {
            trials: 4,
            ..budget(Mix { insert: 20, delete: 10 }, 1000, threads, 5000)
        };
        rows.extend(run_trials(&cfg).unwrap());
    }
    let csv = emit_report(&rows);
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let (threads, ops, sd) = (col("threads"), col("ops_per_sec"), col("stddev_ops_per_sec"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in &rows {
        groups.entry(r[threads]).or_default().push(r[ops].parse().unwrap());
    }
    for r in &rows {
        let xs = &groups[r[threads]];
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (xs.len() - 1) as f64;
        let reported: f64 = r[sd].parse().unwrap();
        // Both sides are rounded to 0.1 in the CSV.
        assert!((reported - var.sqrt()).abs() <= 0.1 + 1e-9 * var.sqrt(), "{reported} vs {}", var.sqrt());
    }
}
