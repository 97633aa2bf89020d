use l1mppi::baseline::ReferenceSample;
use l1mppi::course::Course;
use l1mppi::harness::*;
use l1mppi::math::{Quat, Vec3};
use l1mppi::mppi::ReferenceTrajectory;
use l1mppi::plant::{case_params, UncertaintyCase, VehicleState};

fn straight_line() -> ReferenceTrajectory {
    ReferenceTrajectory {
        dt: 0.02,
        positions: vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)],
        velocities: vec![Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0), Vec3::new(4.0, 0.0, 0.0)],
        attitudes: vec![
            Quat::IDENTITY,
            Quat::from_yaw(std::f64::consts::FRAC_PI_2),
            Quat::from_yaw(std::f64::consts::FRAC_PI_2),
        ],
        rates: vec![Vec3::zeros(); 3],
        accelerations: vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(3.0, 0.0, 0.0)],
    }
}

#[test]
fn interpolation_midpoint() {
    let r = reference_interpolate(&straight_line(), 0.01);
    assert!((r.position - Vec3::new(0.5, 0.0, 0.0)).norm() < 1e-12);
    assert!((r.velocity - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
    assert!((r.acceleration - Vec3::new(2.0, 0.0, 0.0)).norm() < 1e-12);
    assert!((r.attitude.yaw() - std::f64::consts::FRAC_PI_4).abs() < 1e-9);
}

#[test]
fn interpolation_hits_nodes_and_holds_past_horizon() {
    let traj = straight_line();
    assert_eq!(reference_interpolate(&traj, 0.0).position, traj.positions[0]);
    assert!((reference_interpolate(&traj, 0.02).position - traj.positions[1]).norm() < 1e-12);
    let late = reference_interpolate(&traj, 1.0);
    assert_eq!(late.position, traj.positions[2]);
    assert_eq!(late.acceleration, traj.accelerations[1]);
}

#[test]
fn failure_detection_examples() {
    let limits = FailureLimits::default();
    let course = Course::default_circuit();
    let (start, yaw) = course.start();
    let ok = VehicleState::hover_at(start, yaw);
    assert_eq!(detect_failure(&ok, Some(&course), &limits), None);

    let below = VehicleState::hover_at(Vec3::new(start.x, start.y, -0.01), yaw);
    assert_eq!(
        detect_failure(&below, Some(&course), &limits),
        Some(FailureReason::Crash)
    );

    let mut nan = ok;
    nan.velocity.x = f64::NAN;
    assert_eq!(
        detect_failure(&nan, Some(&course), &limits),
        Some(FailureReason::NumericalFault)
    );

    let far = VehicleState::hover_at(start + Vec3::new(0.0, -100.0, 0.0), yaw);
    assert_eq!(
        detect_failure(&far, Some(&course), &limits),
        Some(FailureReason::CorridorDivergence)
    );
    assert_eq!(detect_failure(&far, None, &limits), None);

    let mut fast = ok;
    fast.velocity = Vec3::new(limits.max_speed + 1.0, 0.0, 0.0);
    assert_eq!(
        detect_failure(&fast, Some(&course), &limits),
        Some(FailureReason::CorridorDivergence)
    );
}

#[test]
fn controller_schedule() {
    let fires = |rate| (0..2000u64).filter(|&k| controller_due(k, rate, 2000.0)).count();
    assert_eq!(fires(500.0), 500);
    assert_eq!(fires(400.0), 400);
    assert_eq!(fires(50.0), 50);
    assert!(controller_due(0, 400.0, 2000.0) && controller_due(5, 400.0, 2000.0) && !controller_due(4, 400.0, 2000.0));
}

fn hold(l1: bool, case: UncertaintyCase, seconds: f64) -> HoldRun {
    let cfg = Config::default();
    let nom = cfg.nominal.params().unwrap();
    let p = Vec3::new(0.0, 0.0, 5.0);
    run_hold(
        &cfg,
        case_params(case, &nom),
        VehicleState::hover_at(p, 0.0),
        ReferenceSample::hover(p, 0.0),
        l1,
        seconds,
    )
    .unwrap()
}

#[test]
fn telemetry_row_count() {
    let run = hold(true, UncertaintyCase::Nominal, 0.5);
    assert_eq!(run.rows.len(), 1001);
    assert_eq!(run.failure, None);
    assert!((run.rows.last().unwrap().t - 0.5).abs() < 1e-12);
}

#[test]
fn controls_are_zero_order_held() {
    let run = hold(true, UncertaintyCase::MassIncrease, 0.2);
    let rows = &run.rows[..run.rows.len() - 1];
    for k in 1..rows.len() {
        if k % 4 != 0 {
            assert_eq!(rows[k].baseline, rows[k - 1].baseline, "baseline changed at tick {k}");
        }
        if k % 5 != 0 {
            assert_eq!(rows[k].u_l1, rows[k - 1].u_l1, "L1 changed at tick {k}");
            assert_eq!(rows[k].sigma_m, rows[k - 1].sigma_m);
        }
    }
    assert!(rows.windows(2).any(|w| w[0].u_l1 != w[1].u_l1));
}

#[test]
fn l1_off_applies_baseline_exactly() {
    let cfg = Config::default();
    let nom = cfg.nominal.params().unwrap();
    let p = Vec3::new(0.0, 0.0, 5.0);
    let r = ReferenceSample::hover(p, 0.0);
    let mut sim = ClosedLoop::new(
        &cfg,
        &nom,
        case_params(UncertaintyCase::MassIncrease, &nom),
        VehicleState::hover_at(p, 0.0),
        false,
    )
    .unwrap();
    let mut observed = false;
    for _ in 0..2000 {
        sim.update_controllers(&r).unwrap();
        let u = sim.control_input();
        let bl = sim.baseline_output().control();
        assert_eq!(u.thrust.to_bits(), bl.thrust.to_bits());
        assert_eq!(u.moment.map(f64::to_bits), bl.moment.map(f64::to_bits));
        observed |= sim.l1_output().u_l1.amax() > 0.0;
        sim.advance().unwrap();
    }
    // the estimator still runs; only its output is withheld
    assert!(observed);
}

fn quick_config() -> Config {
    let mut cfg = Config::default();
    cfg.mppi.samples = 128;
    cfg.scheduler.duration_cap = 1.5;
    cfg
}

#[test]
fn same_seed_same_race_and_bytes() {
    let course = Course::default_circuit();
    let cfg = quick_config();
    let (a, rows_a) = run_race_logged(&course, &cfg, UncertaintyCase::PitchMoment, true, 11, true).unwrap();
    let (b, rows_b) = run_race_logged(&course, &cfg, UncertaintyCase::PitchMoment, true, 11, true).unwrap();
    assert_eq!(a, b);
    let dir = tempfile::tempdir().unwrap();
    let (pa, pb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_telemetry_csv(&pa, &rows_a).unwrap();
    write_telemetry_csv(&pb, &rows_b).unwrap();
    assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
    assert_eq!(rows_a.len() as f64, a.duration * cfg.scheduler.plant_hz + 1.0);
}

#[test]
fn timeout_is_reported() {
    let course = Course::default_circuit();
    let r = run_race(&course, &quick_config(), UncertaintyCase::Nominal, true, 1).unwrap();
    assert!(!r.success);
    assert_eq!(r.failure, Some(FailureReason::Timeout));
    assert_eq!(r.lap_time, None);
    assert!((r.duration - 1.5).abs() < 1e-9);
}

#[test]
fn full_lap_splits_increase() {
    let course = Course::default_circuit();
    let r = run_race(&course, &Config::default(), UncertaintyCase::Nominal, true, 0).unwrap();
    assert!(r.success, "{r:?}");
    assert_eq!(r.splits.len(), course.gates.len());
    assert!(r.splits.windows(2).all(|w| w[0] < w[1]), "{:?}", r.splits);
    assert_eq!(r.lap_time, r.splits.last().copied());
}

#[test]
fn campaign_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = ExperimentSpec::new(UncertaintyCase::Nominal, false, 2, 5);
    spec.out = Some(dir.path().join("out"));
    spec.telemetry = true;
    let out = run_campaign(&spec, &quick_config()).unwrap();
    assert_eq!(out.results.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![5, 6]);
    let files = out.files.unwrap();
    assert_eq!(files.telemetry.len(), 2);
    let runs = std::fs::read_to_string(&files.runs_csv).unwrap();
    assert_eq!(runs.lines().count(), 3);
    let cell = out.summary.cell(1, false).unwrap();
    assert_eq!((cell.runs, cell.completed), (2, 0));
}

#[test]
fn campaign_rejects_bad_inputs() {
    let cfg = quick_config();
    assert!(run_campaign(&ExperimentSpec::new(UncertaintyCase::Nominal, false, 0, 0), &cfg).is_err());
    let mut spec = ExperimentSpec::new(UncertaintyCase::Nominal, false, 1, 0);
    spec.course = Some("/nonexistent/course.json".into());
    let e = run_campaign(&spec, &cfg).unwrap_err();
    assert!(e.to_string().contains("/nonexistent/course.json"), "{e}");
}
