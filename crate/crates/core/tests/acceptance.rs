//! Acceptance suite. Built without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line, whatever the outcome.

// Reference values are quoted at the precision they were generated with.
#![allow(clippy::excessive_precision)]

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use dronetrain::clutch::{
    encode_command, encode_reply, parse_command, parse_reply, ClutchModel, ClutchSide, Command, Reply, MAX_VOLTAGE,
};
use dronetrain::feedback::{ActiveSide, FeedbackMode};
use dronetrain::inputmap::calibrate;
use dronetrain::metrics::{Phase, SummaryRow};
use dronetrain::realtime::{LoopHooks, Pacing};
use dronetrain::session::plan::{session_layout, CourseRef};
use dronetrain::session::{
    build_plan, replay_trial, run_session, HoldAltitude, InputSource, PerfectTracker, ProportionalPilot, RunOptions,
    StudyStore, TrialRecord,
};
use dronetrain::stats::analysis::analyze_study;
use dronetrain::stats::dist::{f_survival, reg_inc_beta, t_two_sided_p};
use dronetrain::stats::hypothesis::{holm_sidak, independent_t, one_way_anova, paired_t, rm_anova, Df};
use dronetrain::trace::trace_bytes;
use dronetrain::trajectory::{
    gen_ring_course, gen_spline_tube, training_schedule, CourseSpec, Trajectory, DEFAULT_KNOT_SPACING,
};
use dronetrain::StudyConfig;
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || format!("{name}: got {got:e}, want {want:e} (tol {tol:e})"))
}

fn main() -> ExitCode {
    let checks: [Criterion; 9] = [
        ("trajectory suite", trajectory_suite),
        ("training schedule", training_schedule_partitions),
        ("analytic oracle: hold z=10 on sine tube gives 2/pi", hold_altitude_two_over_pi),
        ("analytic oracle: perfect tracking on every course", perfect_tracking),
        ("behavioral surrogate: haptic restraint vs fpv", behavioral_surrogate),
        ("clutch model", clutch_model),
        ("stats oracle equivalence", stats_oracles),
        ("replay determinism", replay_determinism),
        ("real-time budget", realtime_budget),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------- trajectories

const TRAJ_SEEDS: u64 = 1000;

// One-sided difference quotients on both sides of `x`; the larger magnitude.
fn fd_slope(traj: &Trajectory, x: f64) -> f64 {
    const H: f64 = 1e-7;
    let c = |x: f64| traj.centerline(x).expect("inside course");
    let z = c(x);
    let mut s: f64 = 0.0;
    if x - H >= 0.0 {
        s = s.max(((z - c(x - H)) / H).abs());
    }
    if x + H <= traj.length() {
        s = s.max(((c(x + H) - z) / H).abs());
    }
    s
}

fn knot_checks(traj: &Trajectory, knots: &[(f64, f64)]) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for &(x, z) in knots {
        ensure((9.0..=11.0).contains(&z), || format!("knot z {z} at x {x} outside [9, 11]"))?;
        let analytic = traj.slope(x).map_err(|e| e.to_string())?.abs();
        worst = worst.max(analytic).max(fd_slope(traj, x));
    }
    ensure(worst < 1e-6, || format!("knot slope {worst:e} >= 1e-6"))?;
    let mut x = 0.0;
    while x <= traj.length() {
        let z = traj.centerline(x).map_err(|e| e.to_string())?;
        ensure((9.0 - 1e-12..=11.0 + 1e-12).contains(&z), || format!("centreline {z} at x {x} outside [9, 11]"))?;
        x += 0.05;
    }
    Ok(worst)
}

fn trajectory_suite() -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..TRAJ_SEEDS {
        let tube = gen_spline_tube(seed, DEFAULT_KNOT_SPACING).map_err(|e| e.to_string())?;
        let CourseSpec::SplineTube(spec) = tube.spec() else { return Err("spline generator returned another kind".into()) };
        let knots: Vec<(f64, f64)> = spec.knots.iter().map(|k| (k.x, k.z)).collect();
        worst = worst.max(knot_checks(&tube, &knots).map_err(|e| format!("tube seed {seed}: {e}"))?);
        ensure(knots.iter().any(|k| k.1 == 9.0), || format!("tube seed {seed}: trough 9 not attained"))?;
        ensure(knots.iter().any(|k| k.1 == 11.0), || format!("tube seed {seed}: peak 11 not attained"))?;
        let again = gen_spline_tube(seed, DEFAULT_KNOT_SPACING).map_err(|e| e.to_string())?;
        ensure(again.to_json().as_bytes() == tube.to_json().as_bytes(), || format!("tube seed {seed} not byte-deterministic"))?;

        let rings = gen_ring_course(seed);
        let centres: Vec<(f64, f64)> = rings.rings().expect("ring course").iter().map(|r| (r.x, r.center_z)).collect();
        worst = worst.max(knot_checks(&rings, &centres).map_err(|e| format!("ring seed {seed}: {e}"))?);
        ensure(gen_ring_course(seed).to_json() == rings.to_json(), || format!("ring seed {seed} not byte-deterministic"))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("runtime {elapsed:?} >= 10 s"))?;
    Ok(format!("{TRAJ_SEEDS} tubes + {TRAJ_SEEDS} ring courses, max knot slope {worst:.1e}, {elapsed:.2?}"))
}

fn training_schedule_partitions() -> Check {
    // (sessions, level) as quoted for the amplitude and wavelength sets.
    let amplitude_sets: [([usize; 3], f64); 3] = [([1, 3, 9], 0.5), ([2, 4, 7], 1.0), ([5, 6, 8], 1.5)];
    let wavelength_sets: [([usize; 3], f64); 3] = [([2, 5, 9], 8.0), ([3, 4, 6], 10.0), ([1, 7, 8], 12.0)];
    let level = |sets: &[([usize; 3], f64); 3], s: usize| sets.iter().find(|(m, _)| m.contains(&s)).expect("partition").1;

    let schedule = training_schedule();
    ensure(schedule.len() == 9, || format!("{} training sessions", schedule.len()))?;
    let plan = build_plan("acceptance", FeedbackMode::Haptic, 1);
    let planned: Vec<(f64, f64)> = plan
        .entries
        .iter()
        .filter(|e| e.phase == Phase::Training)
        .map(|e| match e.course {
            CourseRef::SineTube { amplitude, wavelength } => Ok((amplitude, wavelength)),
            other => Err(format!("training session {} uses {other:?}", e.number)),
        })
        .collect::<Result<_, _>>()?;
    let mut cells = BTreeSet::new();
    for (i, spec) in schedule.iter().enumerate() {
        let s = i + 1;
        let want = (level(&amplitude_sets, s), level(&wavelength_sets, s));
        ensure((spec.amplitude, spec.wavelength) == want, || format!("session {s}: {spec:?}, want {want:?}"))?;
        ensure(planned[i] == want, || format!("plan session {s}: {:?}, want {want:?}", planned[i]))?;
        cells.insert((spec.amplitude.to_bits(), spec.wavelength.to_bits()));
    }
    ensure(cells.len() == 9, || format!("{} distinct grid cells", cells.len()))?;
    let order: Vec<String> = schedule.iter().map(|s| format!("({},{})", s.amplitude, s.wavelength)).collect();
    Ok(order.join(" "))
}

// -------------------------------------------------------------------- sessions

fn trial(group: FeedbackMode, subject: &str, number: usize, source: &mut dyn InputSource) -> TrialRecord {
    let cfg = StudyConfig::default();
    let plan = build_plan(subject, group, 7);
    let cal = calibrate(30.0, 150.0, cfg.sim.altitude_range).expect("calibration");
    let opts = RunOptions { allow_out_of_order: true, ..Default::default() };
    run_session(&plan, number, source, &cfg, cal, opts, LoopHooks::default()).expect("session runs")
}

fn sine_session(amplitude: f64, wavelength: f64) -> usize {
    build_plan("acceptance", FeedbackMode::Fpv, 7)
        .entries
        .iter()
        .find(|e| e.course == CourseRef::SineTube { amplitude, wavelength })
        .expect("grid cell scheduled")
        .number
}

// Mean of min(|a sin(2 pi x / l)|, wall) over [0, len] by composite Simpson.
fn clamped_sine_mean(a: f64, l: f64, wall: f64, len: f64) -> f64 {
    let n = 2_000_000;
    let h = len / n as f64;
    let f = |x: f64| (a * (2.0 * PI * x / l).sin()).abs().min(wall);
    let mut s = f(0.0) + f(len);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0 / len
}

fn hold_altitude_two_over_pi() -> Check {
    let number = sine_session(1.0, 10.0);
    let rec = trial(FeedbackMode::Fpv, "hold", number, &mut HoldAltitude(10.0));
    let err = rec.meta.error.as_ref().ok_or("no error recorded")?.error;
    let radius = 0.5;
    let oracle = clamped_sine_mean(1.0, 10.0, radius, 76.0);
    let unclamped = clamped_sine_mean(1.0, 10.0, f64::INFINITY, 76.0);
    let two_over_pi = 2.0 / PI;
    let info = format!(
        "pf_error {err:.6}; 2/pi {two_over_pi:.6}; unwalled mean over 76 m {unclamped:.6}; walled quadrature {oracle:.6}"
    );
    // The measured value must agree with an independent oracle of the same
    // geometry; the 2/pi target itself is checked as stated.
    close("walled quadrature", err, oracle, 1e-3).map_err(|e| format!("{e}; {info}"))?;
    close("2/pi", err, two_over_pi, 1e-3).map_err(|e| format!("{e}; {info}"))?;
    Ok(info)
}

fn perfect_tracking() -> Check {
    let mut worst: f64 = 0.0;
    let mut seen = 0;
    for group in [FeedbackMode::Fpv, FeedbackMode::Arrows, FeedbackMode::Haptic] {
        for number in 1..=session_layout().len() {
            let rec = trial(group, "perfect", number, &mut PerfectTracker);
            let e = rec.meta.error.as_ref().ok_or("no error recorded")?;
            ensure(e.error < 1e-6, || format!("{group:?} session {number}: error {:e}", e.error))?;
            ensure(e.collisions == 0, || format!("{group:?} session {number}: {} collisions", e.collisions))?;
            worst = worst.max(e.error);
            seen += 1;
        }
    }
    Ok(format!("{seen} sessions, max error {worst:.1e} m"))
}

const SURROGATE_SEEDS: u64 = 20;
const CLAMP_LIMIT: f64 = 0.45;

// Largest excursion of the applied command beyond the engagement-tick
// centreline on the restrained side, over ticks where a clutch is held.
fn applied_excursion(rec: &TrialRecord) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    let mut engaged: Option<(ActiveSide, f64)> = None;
    let mut prev = ActiveSide::None;
    for row in &rec.trace {
        if let Some((side, c_eng)) = engaged {
            if side == row.feedback_state {
                let over = match side {
                    ActiveSide::HighSide => row.applied_z - c_eng,
                    ActiveSide::LowSide => c_eng - row.applied_z,
                    ActiveSide::None => unreachable!(),
                };
                worst = worst.max(over);
            }
        }
        if row.feedback_state != prev {
            engaged = match (row.feedback_state, row.centerline_z) {
                (ActiveSide::None, _) => None,
                (side, Some(c)) => Some((side, c)),
                (_, None) => None,
            };
        }
        prev = row.feedback_state;
    }
    worst
}

// Largest drone excursion from the moving centreline while a clutch is held.
fn drone_excursion(rec: &TrialRecord) -> f64 {
    rec.trace
        .iter()
        .filter(|r| r.feedback_state != ActiveSide::None)
        .filter_map(|r| r.centerline_z.map(|c| (r.z - c).abs()))
        .fold(0.0, f64::max)
}

fn behavioral_surrogate() -> Check {
    let start = Instant::now();
    let cfg = StudyConfig::default();
    let training: Vec<usize> =
        build_plan("x", FeedbackMode::Fpv, 7).entries.iter().filter(|e| e.phase == Phase::Training).map(|e| e.number).collect();
    let (mut fpv, mut haptic) = (Vec::new(), Vec::new());
    let (mut worst_applied, mut worst_drone, mut engagements) = (f64::NEG_INFINITY, 0.0f64, 0usize);
    let mut wins = 0;
    for seed in 0..SURROGATE_SEEDS {
        let mut mean = |group: FeedbackMode| {
            let mut total = 0.0;
            for &number in &training {
                let mut pilot = ProportionalPilot::new(cfg.pilot, seed * 100 + number as u64);
                let rec = trial(group, &format!("p{seed}"), number, &mut pilot);
                total += rec.meta.error.as_ref().expect("error recorded").error;
                if group == FeedbackMode::Haptic {
                    worst_applied = worst_applied.max(applied_excursion(&rec));
                    worst_drone = worst_drone.max(drone_excursion(&rec));
                    engagements += rec.meta.events.len();
                }
            }
            total / training.len() as f64
        };
        let (f, h) = (mean(FeedbackMode::Fpv), mean(FeedbackMode::Haptic));
        if h < f {
            wins += 1;
        }
        fpv.push(f);
        haptic.push(h);
    }
    let elapsed = start.elapsed();
    let (mf, mh) = (fpv.iter().sum::<f64>() / fpv.len() as f64, haptic.iter().sum::<f64>() / haptic.len() as f64);
    let info = format!(
        "{SURROGATE_SEEDS} seeds x {} sessions: fpv {mf:.4} haptic {mh:.4} (haptic lower on {wins}/{SURROGATE_SEEDS}); \
         max applied excursion {worst_applied:.4} m over {engagements} events; drone-to-centreline max while engaged {worst_drone:.4} m; {elapsed:.1?}",
        training.len()
    );
    ensure(mh < mf, || format!("haptic mean not lower; {info}"))?;
    ensure(worst_applied <= CLAMP_LIMIT + 1e-9, || format!("clamp limit exceeded; {info}"))?;
    ensure(engagements > 0, || format!("restraint never engaged; {info}"))?;
    ensure(elapsed < Duration::from_secs(60), || format!("runtime >= 60 s; {info}"))?;
    Ok(info)
}

// ----------------------------------------------------------------------- clutch

fn command_strategy() -> impl Strategy<Value = Command> {
    let side = prop_oneof![Just(ClutchSide::Ventral), Just(ClutchSide::Dorsal)];
    prop_oneof![
        (side.clone(), 0u16..=MAX_VOLTAGE as u16).prop_map(|(side, volts)| Command::Engage { side, volts }),
        side.prop_map(|side| Command::Disengage { side }),
        Just(Command::Ping),
    ]
}

fn clutch_model() -> Check {
    let m = ClutchModel::default();
    for volts in [100.0, 250.0, 300.0, 400.0] {
        let f0 = m.holding_force(volts).map_err(|e| e.to_string())?;
        let at = m.disengage_force_at(volts, 0.040).map_err(|e| e.to_string())?;
        ensure(at == 0.1 * f0, || format!("{volts} V: residual {at} != 10 % of {f0}"))?;
    }
    let ratio = m.holding_force(400.0).unwrap() / m.holding_force(100.0).unwrap();
    ensure(ratio == 4.0, || format!("F(400)/F(100) = {ratio}"))?;

    let mut runner = TestRunner::new(PropConfig { cases: 2048, failure_persistence: None, ..PropConfig::default() });
    runner
        .run(&command_strategy(), |cmd| {
            prop_assert_eq!(parse_command(&encode_command(&cmd)).unwrap(), cmd);
            Ok(())
        })
        .map_err(|e| format!("command round trip: {e}"))?;
    runner
        .run(&prop_oneof![Just(Reply::Ok), any::<u16>().prop_map(Reply::Err)], |r| {
            prop_assert_eq!(parse_reply(&encode_reply(&r)).unwrap(), r);
            Ok(())
        })
        .map_err(|e| format!("reply round trip: {e}"))?;
    ensure(parse_command(b"ENG D 401\n").is_err(), || "401 V accepted".into())?;
    Ok(format!("residual at 40 ms = 10.0 % exactly, F(400)/F(100) = {ratio}, 2048 command + 2048 reply round trips"))
}

// ------------------------------------------------------------------------ stats

// Reference values computed with mpmath at 50 significant digits.
const IBETA: [(f64, f64, f64, f64); 8] = [
    (0.5, 0.5, 0.3, 0.369_010_119_565_545_375_04),
    (2.0, 3.0, 0.4, 0.524_800_000_000_000_038_37),
    (1.0, 6.0, 0.9, 0.999_999),
    (13.5, 1.0, 0.8, 0.049_171_654_835_171_675_085),
    (50.0, 40.0, 0.55, 0.454_795_210_863_869_406_43),
    (0.5, 9.0, 0.02, 0.447_978_636_011_291_500_62),
    (5.0, 0.5, 0.999, 0.922_281_992_100_966_761_3),
    (100.0, 150.0, 0.4, 0.503_435_610_298_540_328_24),
];
const T_TWO_SIDED: [(f64, f64, f64); 8] = [
    (-0.5, 2.0, 0.666_666_666_666_666_666_67),
    (2.0, 9.0, 0.076_552_823_770_701_041_203),
    (23.76, 9.0, 1.977_649_143_287_490_986_6e-9),
    (10.041, 9.0, 3.458_389_207_396_147_514_6e-6),
    (1.0, 1.0, 0.5),
    (3.5, 27.0, 0.001_633_488_813_738_061_647_1),
    (1.3, 18.0, 0.210_002_419_071_310_072_09),
    (0.25, 58.0, 0.803_470_730_703_484_932_93),
];
const F_SURVIVAL: [(f64, f64, f64, f64); 7] = [
    (3.0, 2.0, 6.0, 0.125),
    (3.0, 2.0, 18.0, 0.075_084_686_279_296_875),
    (4.2, 2.0, 27.0, 0.025_814_681_956_580_337_663),
    (0.7, 3.0, 40.0, 0.557_609_632_862_715_320_97),
    (12.5, 1.0, 9.0, 0.006_358_491_853_323_609_546_4),
    (2.1, 8.0, 64.0, 0.048_557_409_534_885_336_116),
    (100.0, 2.0, 18.0, 1.783_791_554_893_895_984_7e-10),
];

const STAT_TOL: f64 = 1e-9;
const CDF_TOL: f64 = 1e-10;
const MC_REPLICATIONS: u64 = 1000;

fn stats_oracles() -> Check {
    let start = Instant::now();

    // Paired t by hand: d = [-1, -1, 1], mean -1/3, sd sqrt(4/3), t = -0.5.
    let r = paired_t(&[1.0, 2.0, 4.0], &[2.0, 3.0, 3.0]).map_err(|e| e.to_string())?;
    close("paired t", r.statistic, -0.5, STAT_TOL)?;
    ensure(r.df == Df::Scalar(2.0), || format!("paired df {:?}", r.df))?;
    close("paired p", r.p_value, 2.0 / 3.0, STAT_TOL)?;

    // Group means 2, 3, 4; SSB = 6 on 2 df, SSW = 6 on 6 df.
    let r = one_way_anova(&[&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0], &[3.0, 4.0, 5.0]]).map_err(|e| e.to_string())?;
    close("anova F", r.statistic, 3.0, STAT_TOL)?;
    ensure(r.df == Df::Pair(2.0, 6.0), || format!("anova df {:?}", r.df))?;
    close("anova p", r.p_value, 0.125, STAT_TOL)?;

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let matrix: Vec<Vec<f64>> = (0..10).map(|_| (0..3).map(|_| normal.sample(&mut rng)).collect()).collect();
    let r = rm_anova(&matrix).map_err(|e| e.to_string())?;
    ensure(r.df == Df::Pair(2.0, 18.0), || format!("rm-anova df {:?}", r.df))?;
    let oracle = rm_anova_oracle(&matrix);
    close("rm-anova F", r.statistic, oracle, STAT_TOL * oracle.max(1.0))?;
    close("rm-anova p", r.p_value, f_survival(oracle, 2.0, 18.0), STAT_TOL)?;

    // Sorted 0.01, 0.03, 0.04 -> 1-0.99^3, 1-0.97^2, max(1-0.96, previous).
    let adj = holm_sidak(&[0.01, 0.04, 0.03]).map_err(|e| e.to_string())?;
    for (got, want) in adj.iter().zip([0.029_701, 0.0591, 0.0591]) {
        close("holm-sidak", *got, want, STAT_TOL)?;
    }

    for _ in 0..200 {
        let na = 2 + (normal.sample(&mut rng).abs() * 5.0) as usize;
        let a: Vec<f64> = (0..na).map(|_| normal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..na + 3).map(|_| normal.sample(&mut rng) + 0.4).collect();
        let f = one_way_anova(&[&a, &b]).map_err(|e| e.to_string())?;
        let t = independent_t(&a, &b).map_err(|e| e.to_string())?;
        close("F = t^2", f.statistic, t.statistic * t.statistic, STAT_TOL * f.statistic.max(1.0))?;
        close("F/t p", f.p_value, t.p_value, STAT_TOL)?;
    }

    let mut worst: f64 = 0.0;
    for (a, b, x, want) in IBETA {
        let got = reg_inc_beta(a, b, x);
        close(&format!("I_{x}({a},{b})"), got, want, CDF_TOL)?;
        worst = worst.max((got - want).abs());
    }
    for (t, df, want) in T_TWO_SIDED {
        let got = t_two_sided_p(t, df);
        close(&format!("t p({t}, {df})"), got, want, CDF_TOL)?;
        worst = worst.max((got - want).abs());
    }
    for (f, d1, d2, want) in F_SURVIVAL {
        let got = f_survival(f, d1, d2);
        close(&format!("F sf({f}, {d1}, {d2})"), got, want, CDF_TOL)?;
        worst = worst.max((got - want).abs());
    }

    let rate = null_rejection_rate(MC_REPLICATIONS)?;
    ensure((rate - 0.05).abs() <= 0.015, || format!("null baseline ANOVA rejects at {rate:.3}"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(120), || format!("runtime {elapsed:?} >= 2 min"))?;
    Ok(format!(
        "hand examples within {STAT_TOL:e}, max CDF deviation {worst:.1e}, null rejection rate {rate:.3} over {MC_REPLICATIONS} replications, {elapsed:.2?}"
    ))
}

// Textbook two-way decomposition without interaction.
fn rm_anova_oracle(m: &[Vec<f64>]) -> f64 {
    let (n, k) = (m.len() as f64, m[0].len() as f64);
    let grand = m.iter().flatten().sum::<f64>() / (n * k);
    let ss_total: f64 = m.iter().flatten().map(|v| (v - grand).powi(2)).sum();
    let ss_subj: f64 = m.iter().map(|r| k * (r.iter().sum::<f64>() / k - grand).powi(2)).sum();
    let ss_cond: f64 =
        (0..m[0].len()).map(|j| n * (m.iter().map(|r| r[j]).sum::<f64>() / n - grand).powi(2)).sum();
    let ss_err = ss_total - ss_subj - ss_cond;
    (ss_cond / (k - 1.0)) / (ss_err / ((n - 1.0) * (k - 1.0)))
}

// Three groups of ten subjects whose session errors come from one
// distribution; fraction of replications where the baseline path-following
// ANOVA rejects.
fn null_rejection_rate(replications: u64) -> Result<f64, String> {
    let groups = [FeedbackMode::Fpv, FeedbackMode::Arrows, FeedbackMode::Haptic];
    let layout = session_layout();
    let subject_effect = Normal::new(0.30, 0.05).expect("normal");
    let session_noise = Normal::new(0.0, 0.03).expect("normal");
    let mut rejections = 0;
    for rep in 0..replications {
        let mut rng = ChaCha8Rng::seed_from_u64(rep);
        let mut rows = Vec::with_capacity(30 * layout.len());
        for s in 0..30 {
            let base: f64 = subject_effect.sample(&mut rng);
            for &(task, phase, index) in &layout {
                rows.push(SummaryRow {
                    subject: format!("s{s:02}"),
                    group: groups[s % 3],
                    task,
                    phase,
                    session: index,
                    error: (base + session_noise.sample(&mut rng)).abs(),
                    collisions: 0,
                });
            }
        }
        let report = analyze_study(&rows).map_err(|e| e.to_string())?;
        let baseline = report
            .between_group
            .iter()
            .find(|b| b.label == "path_following baseline")
            .and_then(|b| b.anova)
            .ok_or("baseline ANOVA missing")?;
        if baseline.significant {
            rejections += 1;
        }
    }
    Ok(rejections as f64 / replications as f64)
}

// ----------------------------------------------------------------- persistence

fn replay_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = StudyConfig::default();
    let groups = [FeedbackMode::Fpv, FeedbackMode::Arrows, FeedbackMode::Haptic];
    let store = StudyStore::create(dir.path(), &groups, 3, 2024, cfg).map_err(|e| e.to_string())?;
    let mut checked = 0;
    let mut bytes = 0;
    for subject in store.manifest().subjects.clone() {
        let cal = calibrate(25.0, 145.0, cfg.sim.altitude_range).map_err(|e| e.to_string())?;
        store.set_calibration(&subject.id, &cal).map_err(|e| e.to_string())?;
        let plan = store.plan(&subject.id).map_err(|e| e.to_string())?;
        for number in 1..=plan.entries.len() {
            let mut pilot = ProportionalPilot::new(cfg.pilot, number as u64 * 31 + checked as u64);
            let opts = RunOptions { completed: number - 1, ..Default::default() };
            let rec = run_session(&plan, number, &mut pilot, &cfg, cal, opts, LoopHooks::default())
                .map_err(|e| e.to_string())?;
            let path = store.save_trial(&rec).map_err(|e| e.to_string())?;
            let stored = StudyStore::load_trial(&path).map_err(|e| e.to_string())?;
            let original = stored.trace_bytes();
            let replayed = trace_bytes(&replay_trial(&stored).map_err(|e| e.to_string())?);
            ensure(replayed == original, || format!("{} session {number}: replay differs", subject.id))?;
            bytes += original.len();
            checked += 1;
        }
    }
    Ok(format!("{checked} stored trials replayed byte-for-byte ({bytes} trace bytes)"))
}

// ---------------------------------------------------------------------- timing

fn realtime_budget() -> Check {
    let cfg = StudyConfig::default();
    let number = sine_session(1.0, 10.0);
    let plan = build_plan("rt", FeedbackMode::Haptic, 7);
    let cal = calibrate(30.0, 150.0, cfg.sim.altitude_range).map_err(|e| e.to_string())?;
    let opts = RunOptions { pacing: Pacing::RealTime, allow_out_of_order: true, ..Default::default() };
    let mut pilot = ProportionalPilot::new(cfg.pilot, 99);
    let frames = std::sync::atomic::AtomicU64::new(0);
    let sink = |_f: dronetrain::realtime::TelemetryFrame| {
        frames.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    };
    let hooks = LoopHooks { telemetry: Some(&sink), ..Default::default() };
    let rec = run_session(&plan, number, &mut pilot, &cfg, cal, opts, hooks).map_err(|e| e.to_string())?;
    let r = &rec.meta.loop_report;
    let info = format!(
        "{} Hz, {} ticks, course {:.1} s, p99 {:.3} ms, max {:.3} ms, overruns {}, late wake-ups {} (worst {:.2} ms), telemetry {} frames",
        cfg.tick_hz(),
        r.ticks,
        r.course_duration,
        r.p99_tick_ms,
        r.max_tick_ms,
        r.overruns,
        r.late_ticks,
        r.max_lateness_ms,
        frames.into_inner()
    );
    ensure(cfg.tick_hz() == 100, || format!("tick rate {}; {info}", cfg.tick_hz()))?;
    ensure((r.course_duration - 15.2).abs() < 1e-9, || format!("course duration; {info}"))?;
    ensure(r.p99_tick_ms < 10.0, || format!("p99 over budget; {info}"))?;
    ensure(r.overruns == 0, || format!("overruns; {info}"))?;
    Ok(info)
}
