use riskctl_core::adversary::{
    adversarial_calibration_risk, inject_flags, select_reports, Collective, ReportSet, StrategySpec,
};
use riskctl_core::calibration::{
    calibrate_global, calibrate_user, empirical_risk_curve, slate_profiles, RiskCurve,
    ThresholdGrid,
};
use riskctl_core::dataset::{generate_synthetic, SynthConfig};
use riskctl_core::dataset::{Dataset, Interaction, Item, User};
use riskctl_core::metrics::{evaluate_population, expected_test_risk};
use riskctl_core::recsys::{Recommender, SafePool, SafePools};
use riskctl_core::{GroupId, ItemId, UserId};

fn item(id: u32) -> Item {
    Item {
        id: ItemId(id),
        group: GroupId(0),
        likes: 1,
    }
}

fn user(id: u32) -> User {
    User {
        id: UserId(id),
        true_flag_rate: 0.0,
    }
}

fn row(u: u32, i: u32, slate: u32, risk: f64, flagged: bool) -> Interaction {
    Interaction {
        user: UserId(u),
        item: ItemId(i),
        slate,
        relevance: 1.0 - i as f64 / 100.0,
        risk,
        flagged,
    }
}

#[test]
fn two_item_curve_on_a_dataset() {
    let d = Dataset::new(
        vec![item(0), item(1)],
        vec![user(0)],
        vec![row(0, 0, 0, 0.9, true), row(0, 1, 0, 0.1, false)],
    )
    .unwrap();
    let grid = ThresholdGrid::default();
    let empty = {
        let mut p = SafePools::default();
        p.insert(SafePool::from_history(UserId(0), []));
        p
    };
    let curve = empirical_risk_curve(&d, d.slates(), &grid, 20, &d, &empty).unwrap();
    assert_eq!(curve.at(0.0), 0.5);
    assert_eq!(curve.at(0.2), 0.0);
    assert_eq!(curve.samples(), 1);
}

#[test]
fn unflagged_data_gives_a_flat_zero_curve() {
    let cfg = SynthConfig {
        users: 30,
        items: 200,
        flag_rate: 0.0,
        ..SynthConfig::default()
    };
    let d = generate_synthetic(&cfg, 4).unwrap();
    let users: Vec<UserId> = d.users().iter().map(|u| u.id).collect();
    let pools = SafePools::build(&d, &users, &d).unwrap();
    let curve =
        empirical_risk_curve(&d, d.slates(), &ThresholdGrid::default(), 20, &d, &pools).unwrap();
    assert!(curve.values().iter().all(|&v| v == 0.0));
}

#[test]
fn member_mean_of_half_and_full() {
    // User 0: one slate of two items, one flagged. User 1: two items, both reported.
    let d = Dataset::new(
        (0..4).map(item).collect(),
        vec![user(0), user(1)],
        vec![
            row(0, 0, 0, 0.2, true),
            row(0, 1, 0, 0.2, false),
            row(1, 2, 0, 0.2, false),
            row(1, 3, 0, 0.2, false),
        ],
    )
    .unwrap();
    let c = Collective {
        members: vec![UserId(0), UserId(1)],
        beta: 0.5,
        spec: StrategySpec::LowRisk { gamma: 1.0 },
        seed: 0,
    };
    let mut reports = ReportSet::new(None);
    reports.insert(UserId(1), [ItemId(2), ItemId(3)]);
    let view = inject_flags(&d, &reports).unwrap();
    let pools = SafePools::build(&d, &c.members, &view).unwrap();
    let r = adversarial_calibration_risk(&c, 0.0, &d, &view, 20, &pools).unwrap();
    assert_eq!(r, 0.75);
}

fn small_world(seed: u64) -> Dataset {
    let cfg = SynthConfig {
        users: 120,
        items: 400,
        flag_rate: 0.05,
        ..SynthConfig::default()
    };
    generate_synthetic(&cfg, seed).unwrap().split(0.5, seed).unwrap()
}

#[test]
fn pseudo_user_reproduces_global_calibration() {
    let d = small_world(11);
    let grid = ThresholdGrid::default();
    let users = d.calibration_users();
    let pools = SafePools::build(&d, &users, &d).unwrap();
    let slates = d.slates_of_users(&users).unwrap();
    let curve = empirical_risk_curve(&d, &slates, &grid, 20, &d, &pools).unwrap();

    let rec = Recommender::new(&d, 20).unwrap();
    let profiles = slate_profiles(&rec, &slates, &d, &pools).unwrap();
    for alpha in [0.03, 0.05, 0.1, 0.5, 1.0] {
        let global = calibrate_global(&curve, alpha).unwrap();
        let pseudo = riskctl_core::calibration::calibrate_user_profiles(
            UserId(u32::MAX),
            &profiles,
            &grid,
            alpha,
        )
        .unwrap();
        assert_eq!(global, pseudo.threshold, "alpha {alpha}");
    }
}

#[test]
fn user_calibration_on_own_slates() {
    let d = small_world(12);
    let grid = ThresholdGrid::default();
    let u = d.calibration_users()[0];
    let safe = SafePool::for_user(&d, u, &d).unwrap();
    let t = calibrate_user(&d, u, d.slates_of(u).unwrap(), &grid, 0.5, 20, &d, &safe).unwrap();
    assert_eq!(t.threshold.samples, 5);
    let other = d.calibration_users()[1];
    assert!(calibrate_user(&d, other, d.slates_of(u).unwrap(), &grid, 0.5, 20, &d, &safe).is_err());
}

#[test]
fn test_risk_falls_with_the_threshold() {
    let d = small_world(13);
    let users = d.test_users();
    let pools = SafePools::build(&d, &users, &d).unwrap();
    let slates = d.slates_of_users(&users).unwrap();
    let mut last = f64::INFINITY;
    for l in [0.0, 0.3, 0.6, 0.8, 0.9, 0.95, 1.001] {
        let r = expected_test_risk(&d, &slates, l, 20, &pools).unwrap();
        assert!(r <= last, "lambda {l}: {r} > {last}");
        last = r;
    }
    assert_eq!(last, 0.0);
    assert!(expected_test_risk(&d, &[], 0.0, 20, &pools).is_err());
}

#[test]
fn no_filtering_means_no_repeats_and_full_recall() {
    let d = small_world(14);
    let users = d.test_users();
    let pools = SafePools::build(&d, &users, &d).unwrap();
    let slates = d.slates_of_users(&users).unwrap();
    let e = evaluate_population(&d, &slates, 20, &pools, |_| 0.0).unwrap();
    assert_eq!(e.repeated_fraction(), 0.0);
    let with_pos = e.outcomes.iter().filter(|o| o.positives > 0);
    assert!(with_pos.clone().all(|o| o.recall == 1.0));
    let g = d.items()[0].group;
    assert_eq!(e.exposure.group_exposure(&d, g, Default::default()), Some(1.0));

    let closed = evaluate_population(&d, &slates, 20, &pools, |_| 1.001).unwrap();
    assert_eq!(closed.exposure.group_exposure(&d, g, Default::default()), Some(0.0));
    assert_eq!(closed.risk(), 0.0);
}

#[test]
fn flag_everything_collective_reports_whole_logs() {
    let d = small_world(15);
    let cal = d.calibration_users();
    let c = Collective {
        members: cal[..3].to_vec(),
        beta: 0.05,
        spec: StrategySpec::LowRisk { gamma: 1.0 },
        seed: 1,
    };
    let reports = select_reports(&c, &d).unwrap();
    for &m in &c.members {
        assert_eq!(reports.of(m), d.exposure_log(m).unwrap().as_slice());
    }
    let view = inject_flags(&d, &reports).unwrap();
    let pools = SafePools::build(&d, &cal, &view).unwrap();
    for m in &c.members {
        assert!(pools.get(*m).unwrap().is_empty());
    }
    assert_eq!(
        adversarial_calibration_risk(&c, 0.0, &d, &view, 20, &pools).unwrap(),
        1.0
    );
    let curve = RiskCurve::from_profiles(
        &ThresholdGrid::default(),
        &slate_profiles(
            &Recommender::new(&d, 20).unwrap(),
            &d.slates_of_users(&c.members).unwrap(),
            &view,
            &pools,
        )
        .unwrap(),
    )
    .unwrap();
    assert_eq!(*curve.values().last().unwrap(), 0.0);
}

#[test]
fn depleted_safe_pool_is_diagnosed() {
    // Dropping the unflagged item with nothing to refill raises the risk.
    let d = Dataset::new(
        vec![item(0), item(1)],
        vec![user(0)],
        vec![row(0, 0, 0, 0.1, true), row(0, 1, 0, 0.9, false)],
    )
    .unwrap();
    let pools = SafePools::build(&d, &[UserId(0)], &d).unwrap();
    let err = empirical_risk_curve(&d, d.slates(), &ThresholdGrid::default(), 20, &d, &pools)
        .unwrap_err();
    assert!(matches!(err, riskctl_core::Error::NonMonotone { before, after, .. } if before == 0.5 && after == 1.0));
}

#[test]
fn prepared_events_serve_like_the_recommender() {
    let d = small_world(16);
    let users = d.test_users();
    let pools = SafePools::build(&d, &users, &d).unwrap();
    let slates = d.slates_of_users(&users).unwrap();
    let rec = Recommender::new(&d, 10).unwrap();
    let prepared = riskctl_core::metrics::PreparedPopulation::prepare(&d, &slates, 10, &pools).unwrap();
    for (log, ev) in slates.iter().zip(prepared.events()) {
        for l in [0.0, 0.4, 0.8, 0.93, 1.001] {
            let direct = rec.recommend_slate(log, l, pools.get(log.user).unwrap()).unwrap();
            let served = ev.serve(l);
            assert_eq!(direct, served);
        }
    }
    let e = prepared.evaluate(|_| 0.85);
    for (o, log) in e.outcomes.iter().zip(&slates) {
        let s = rec.recommend_slate(log, 0.85, pools.get(log.user).unwrap()).unwrap();
        assert_eq!(o.risk, riskctl_core::calibration::set_risk(&s, &d));
    }
}
