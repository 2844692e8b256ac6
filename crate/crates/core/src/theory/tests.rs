use super::*;
use rand::Rng;

/// The one-step distributed hand case used across tests:
/// Delta = 0, L = 1, eta = 0.1, b = 1, beta = 0, m = 1.
fn hand_case() -> TheoryParams {
    TheoryParams::new(ArchMode::Distributed, 1.0, 0.1, 0.0, 1, 1, 1, 10, 0.0).unwrap()
}

fn random_feasible(mode: ArchMode, rng: &mut impl Rng) -> TheoryParams {
    loop {
        let l = rng.gen_range(0.1..4.0);
        let d = rng.gen_range(1..100usize);
        let delta = rng.gen_range(0.0..5.0f64);
        let b = rng.gen_range(1..32usize);
        let m = rng.gen_range(1..200usize);
        let n = rng.gen_range(1..5000usize);
        let beta = rng.gen_range(0.0..2.0 * l);
        // Keep the staleness denominator comfortably positive.
        let lead: f64 = match mode {
            ArchMode::Shared => d as f64,
            ArchMode::Distributed => 1.0,
        };
        let eta_cap = (lead / (2.0 * l * l * (delta * delta).max(1e-9))).sqrt();
        let eta = rng.gen_range(0.0..1.0) * 0.5 * eta_cap.min(1.0);
        if eta <= 0.0 {
            continue;
        }
        if let Ok(p) = TheoryParams::new(mode, l, eta, beta, b, m, d, n, delta) {
            return p;
        }
    }
}

#[test]
fn c_sequence_starts_at_zero_and_is_nonincreasing() {
    let mut rng = crate::rng::model_stream(1);
    for mode in [ArchMode::Shared, ArchMode::Distributed] {
        for _ in 0..50 {
            let p = random_feasible(mode, &mut rng);
            let c = c_sequence(&p);
            assert_eq!(c[p.m], 0.0);
            for t in 0..p.m {
                assert!(c[t] >= c[t + 1], "c must be nonincreasing in t");
            }
        }
    }
}

#[test]
fn c0_hand_case() {
    let p = hand_case();
    let c = c_sequence(&p);
    // (4 L^2 / b) (eta^2 L / 2) = 4 * 0.005
    assert!((c[0] - 0.02).abs() < 1e-12, "c0 {}", c[0]);
    assert!((c0_closed_form(&p) - 0.02).abs() < 1e-12);
}

#[test]
fn closed_form_matches_recurrence() {
    let mut rng = crate::rng::model_stream(2);
    for mode in [ArchMode::Shared, ArchMode::Distributed] {
        for _ in 0..100 {
            let p = random_feasible(mode, &mut rng);
            let rec = c_sequence(&p)[0];
            let closed = c0_closed_form(&p);
            let rel = (rec - closed).abs() / rec.abs().max(1e-300);
            assert!(
                rel <= 1e-10,
                "mode {mode:?}: rec {rec} closed {closed} rel {rel}"
            );
        }
    }
}

#[test]
fn gamma_hand_case() {
    let p = hand_case();
    let (g, feasible) = gamma(&p);
    assert!(feasible);
    // eta/2 - 4 (eta^2 L / 2) = 0.05 - 0.02
    assert!((g - 0.03).abs() < 1e-12, "gamma {g}");
}

#[test]
fn gamma_shrinks_to_zero_with_eta_but_stays_feasible() {
    let p = TheoryParams::new(ArchMode::Distributed, 1.0, 1e-8, 0.0, 1, 1, 1, 10, 0.0).unwrap();
    let (g, feasible) = gamma(&p);
    assert!(feasible);
    assert!(g > 0.0 && g < 1e-7, "gamma {g}");
}

#[test]
fn gamma_is_first_step_minimum() {
    let mut rng = crate::rng::model_stream(3);
    for mode in [ArchMode::Shared, ArchMode::Distributed] {
        for _ in 0..50 {
            let p = random_feasible(mode, &mut rng);
            let seq = gamma_sequence(&p);
            for w in seq.windows(2) {
                assert!(w[1] >= w[0], "Gamma_t must be nondecreasing");
            }
            let (g, _) = gamma(&p);
            assert_eq!(g, seq[0]);
        }
    }
}

#[test]
fn gamma_nonincreasing_in_delta() {
    for mode in [ArchMode::Shared, ArchMode::Distributed] {
        let mut last = f64::INFINITY;
        for delta10 in 0..20 {
            let delta = delta10 as f64 / 10.0;
            let p = match TheoryParams::new(mode, 1.5, 0.01, 1.0, 4, 50, 20, 1000, delta) {
                Ok(p) => p,
                Err(_) => break,
            };
            let (g, _) = gamma(&p);
            assert!(g <= last + 1e-15, "gamma increased with delta at {delta}");
            last = g;
        }
    }
}

#[test]
fn delay_bound_hand_cases() {
    let shared = delay_bound(ArchMode::Shared, 0.01, 10, 100);
    assert!((shared - 20.0 / 0.28).abs() < 1e-12, "shared {shared}");

    let dist = delay_bound(ArchMode::Distributed, 0.001, 10, 1);
    assert!((dist - 50.0).abs() < 1e-12, "dist {dist}");

    // u0 b >= 3/28 leaves no admissible delay.
    let none = delay_bound(ArchMode::Distributed, 0.2, 1, 1);
    assert!(none <= 0.0, "expected infeasible, got {none}");
}

#[test]
fn recommended_settings_hand_cases() {
    let r = recommended_settings(ArchMode::Shared, 1000, 1.0, 0.1, 10, 50, 2.0).unwrap();
    assert!((r.eta - 5e-4).abs() < 1e-15);
    assert_eq!(r.beta, 4.0);
    assert_eq!(r.m, 8333);

    let r = recommended_settings(ArchMode::Distributed, 1000, 1.0, 0.1, 10, 50, 2.0).unwrap();
    assert_eq!(r.m, 166);

    assert!(recommended_settings(ArchMode::Shared, 1000, 0.0, 0.1, 10, 50, 2.0).is_err());
    // m = 0: u0 b too large relative to n^alpha.
    assert!(recommended_settings(ArchMode::Distributed, 2, 1.0, 0.9, 10, 1, 1.0).is_err());
}

#[test]
fn recommended_settings_are_feasible_under_side_conditions() {
    // Parameter sets satisfying Delta^2 <= half the delay bound and the
    // "n large" side condition; gamma must come out positive.
    let cases = [
        (
            ArchMode::Shared,
            1000usize,
            1.0,
            0.01,
            10usize,
            50usize,
            1.5,
        ),
        (ArchMode::Shared, 4000, 0.8, 0.02, 4, 20, 2.0),
        (ArchMode::Distributed, 1000, 1.0, 0.005, 2, 50, 1.5),
        (ArchMode::Distributed, 5000, 1.0, 0.01, 4, 10, 0.7),
    ];
    for (mode, n, alpha, u0, b, d, l) in cases {
        let bound = delay_bound(mode, u0, b, d);
        assert!(bound > 0.0, "bound must admit a delay for {mode:?}");
        let delta = (bound / 2.0).sqrt().floor();
        let rec = recommended_settings(mode, n, alpha, u0, b, d, l).unwrap();
        // Side condition from the rate theorem (shared form; distributed is
        // the d = 1 case).
        let n_alpha = (n as f64).powf(alpha);
        let dd = match mode {
            ArchMode::Shared => d as f64,
            ArchMode::Distributed => 1.0,
        };
        assert!(
            dd * n_alpha <= dd * n_alpha * n_alpha - 2.0 * delta * delta * u0 * u0 * (b * b) as f64,
            "side condition violated for {mode:?}"
        );
        let p = TheoryParams::new(mode, l, rec.eta, rec.beta, b, rec.m, d, n, delta).unwrap();
        let (g, feasible) = gamma(&p);
        assert!(feasible && g > 0.0, "{mode:?}: gamma {g} not positive");
    }
}

#[test]
fn ergodic_bound_cases() {
    let p = hand_case();
    let bound = ergodic_bound(&p, 1.0, 0.0, 100).unwrap();
    assert!((bound - 1.0 / 3.0).abs() < 1e-12, "bound {bound}");

    assert_eq!(ergodic_bound(&p, 0.5, 0.5, 10).unwrap(), 0.0);

    let b1 = ergodic_bound(&p, 1.0, 0.0, 100).unwrap();
    let b2 = ergodic_bound(&p, 1.0, 0.0, 200).unwrap();
    assert!((b1 / b2 - 2.0).abs() < 1e-12);

    assert!(ergodic_bound(&p, 0.0, 1.0, 10).is_err());
    assert!(ergodic_bound(&p, 1.0, 0.0, 0).is_err());
}

#[test]
fn infeasible_denominator_is_rejected() {
    // 2 L^2 Delta^2 eta^2 = 2 * 4 * 4 * 1 > 1
    assert!(TheoryParams::new(ArchMode::Distributed, 2.0, 1.0, 0.0, 1, 1, 1, 10, 2.0).is_err());
    // Shared mode admits more staleness through the d factor.
    assert!(TheoryParams::new(ArchMode::Shared, 2.0, 1.0, 0.0, 1, 1, 64, 10, 2.0).is_ok());
}

#[test]
fn speedup_table() {
    let mut times = BTreeMap::new();
    times.insert(1usize, 100.0);
    times.insert(2, 60.0);
    times.insert(4, 25.0);
    let table = speedup(&times).unwrap();
    assert_eq!(table[&1], 1.0);
    assert!((table[&2] - 100.0 / 60.0).abs() < 1e-12);
    assert_eq!(table[&4], 4.0);

    let missing: BTreeMap<usize, f64> = [(2usize, 5.0)].into_iter().collect();
    assert!(speedup(&missing).is_err());
}

#[test]
fn report_serializes_with_flags() {
    let p = hand_case();
    let report = theory_report(&p, Some((1.0, 0.0, 100)));
    assert!(report.feasible);
    assert_eq!(report.c.len(), 2);
    assert_eq!(report.gamma_seq.len(), 1);
    assert!(report.bound_value.is_some());
    // beta = 0 here, so the half condition cannot hold.
    assert!(!report.half_condition_ok);
    let json = serde_json::to_string(&report).unwrap();
    assert!(json.contains("\"gamma\""));
    assert!(json.contains("\"distributed\""));

    let with_beta =
        TheoryParams::new(ArchMode::Distributed, 1.0, 0.1, 2.0, 1, 1, 1, 10, 0.0).unwrap();
    let report = theory_report(&with_beta, None);
    // c_1 = 0 <= beta/2 = 1.
    assert!(report.half_condition_ok);
}
