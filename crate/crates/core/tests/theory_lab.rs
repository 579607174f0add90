use submodcur::bandit::{ExplorationSchedule, PolicyState};
use submodcur::simlab::*;

fn sched(eps: f64, pi: f64) -> ExplorationSchedule {
    ExplorationSchedule::constant(eps, pi).unwrap()
}

#[test]
fn expected_uniform_pulls_match_threshold_sum_when_unclamped() {
    let r = uniform_pull_report(4, &sched(0.5, 1.5), 0.5, 1.5, &[50, 500, 2000], 200, 3).unwrap();
    for cp in &r.checkpoints {
        assert!(!cp.clamp_active);
        assert!(cp.expectation_matches, "{cp:?}");
    }
}

#[test]
fn expected_uniform_pulls_meet_lower_bound() {
    // constant λ = ε, π ∈ (0, 1): E[τ^R_a(t)] ≥ (t−2)(1+(1−π)ε)/(K(2−π)) / 2 for t ≥ 10
    for (eps, pi) in [(0.5, 0.5), (0.2, 0.8), (0.9, 0.3)] {
        let k = 4;
        let r = check_counting_lemma(k, &sched(eps, pi), &[10, 100, 1000], 200, 17).unwrap();
        for cp in &r.checkpoints {
            assert!(cp.mean_uniform_pulls >= uniform_pull_bound(k, eps, pi, cp.t), "{cp:?}");
        }
    }
}

#[test]
fn counting_lemma_floor_met_in_assumed_regime() {
    let r = check_counting_lemma(5, &sched(0.5, 0.5), &[100, 1000], 300, 5).unwrap();
    assert!(r.pass, "{r:?}");
}

#[test]
fn uniform_counter_snapshots_are_prefix_counts() {
    // τ^R(t) must equal the uniform pulls after exactly t − 1 steps of the same seed
    let s = sched(0.5, 1.5);
    let r = uniform_pull_report(3, &s, 0.5, 1.5, &[20], 1, 77).unwrap();
    let mut p = PolicyState::new(3, 77).unwrap();
    for _ in 0..19 {
        p.step(&s, &[0.0; 3]).unwrap();
    }
    let direct = p.uniform_pulls().iter().sum::<u64>() as f64 / 3.0;
    assert_eq!(r.checkpoints[0].mean_uniform_pulls, direct);
}

#[test]
fn regret_decays_in_annealing_regime() {
    let arms = arms_from_gaps(1.0, &spread_gaps(5, 0.2), 0.1).unwrap();
    let c = simulate_regret(&arms, 0.2, &sched(0.5, 1.5), 3000, 100, 1, SimFeedback::Bandit).unwrap();
    let slope = c.log_log_slope(100, 3000).unwrap();
    assert!(slope < -0.2, "slope {slope}");
    assert!(c.mean.iter().all(|&v| v >= 0.0));
    assert_eq!(c.mean.len(), 3000);
}

#[test]
fn larger_gap_floor_means_larger_early_regret() {
    let s = sched(0.5, 1.5);
    let early = |floor: f64| {
        let arms = arms_from_gaps(1.0, &spread_gaps(5, floor), 0.1).unwrap();
        let c = simulate_regret(&arms, floor, &s, 200, 200, 2, SimFeedback::Bandit).unwrap();
        c.mean[..50].iter().sum::<f64>()
    };
    let (a, b, c) = (early(0.1), early(0.2), early(0.4));
    assert!(a < b && b < c, "{a} {b} {c}");
}

#[test]
fn regret_csv_layout() {
    let arms = arms_from_gaps(1.0, &spread_gaps(3, 0.2), 0.1).unwrap();
    let c = simulate_regret(&arms, 0.2, &sched(0.5, 1.5), 5, 3, 1, SimFeedback::Bandit).unwrap();
    let mut out = Vec::new();
    c.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,mean_regret,stderr");
    assert_eq!(lines.len(), 6);
    assert!(lines[1].starts_with("1,"));
}

#[test]
fn growing_bound_holds_on_default_grid() {
    let r = check_integral_bounds(&IntegralGrid::default()).unwrap();
    assert_eq!(r.points, 2000);
    assert!(r.min_slack_growing >= -SLACK_TOL);
    assert!(r.violations.iter().all(|v| v.case == LambdaCase::Constant));
}
