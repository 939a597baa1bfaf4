//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p amplify-core --test acceptance`. Exits nonzero
//! when any criterion fails.

use std::time::{Duration, Instant};

use amplify_core::accountant::{
    calibrate_sigma, compare_bis_poisson, compose, default_orders, rdp_curve, to_delta, to_dp,
    CompositionPlan, MechanismSpec, Mode, RdpCurve,
};
use amplify_core::oracle::{
    verify_dim_reduction, verify_offset_identity, verify_sandwich, OracleConfig, QuadratureSpec,
};
use amplify_core::rdp::{
    binary_vectors, forward_bound, forward_exact_enum, forward_exact_k1, MixtureFamily, RenyiOrder,
};
use amplify_core::sim::{
    assign_bis_schedule, run_training, DropoutSpec, Schedule, SimConfig, SplitPlan, SyntheticTask,
    TrainingMode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<(bool, String), String>;

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn run(id: u32, name: &'static str, limit: Duration, f: impl FnOnce() -> Verdict) -> Outcome {
    let start = Instant::now();
    let verdict = f();
    let elapsed = start.elapsed();
    let (mut pass, mut detail) = match verdict {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    if elapsed > limit {
        pass = false;
        detail.push_str(&format!("; runtime {:.1}s exceeds {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64()));
    }
    let o = Outcome {
        id,
        name,
        pass,
        detail,
        elapsed,
    };
    println!(
        "{} [{:>2}] {} ({:.2}s): {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.id,
        o.name,
        o.elapsed.as_secs_f64(),
        o.detail
    );
    o
}

fn ord(a: u32) -> RenyiOrder {
    RenyiOrder::new(a).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        a.abs()
    } else {
        (a - b).abs() / b.abs()
    }
}

fn s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

const DELTA: f64 = 1e-5;

fn c1_calibration() -> Verdict {
    let grid = default_orders();
    let bis = calibrate_sigma(
        &MechanismSpec::Bis {
            t: 2000,
            k: 655,
            c: 1.0,
            sigma: 1.0,
        },
        1,
        8.0,
        DELTA,
        &grid,
        Mode::Tight,
    )
    .map_err(s)?;
    let poisson = calibrate_sigma(
        &MechanismSpec::PoissonGaussian {
            c: 1.0,
            sigma: 1.0,
            gamma: 0.3275,
        },
        2000,
        8.0,
        DELTA,
        &grid,
        Mode::Tight,
    )
    .map_err(s)?;
    let gap = rel(bis.sigma, poisson.sigma);
    let pass = (9.97..=10.37).contains(&bis.sigma) && (10.00..=10.40).contains(&poisson.sigma) && gap < 0.01;
    Ok((
        pass,
        format!(
            "sigma_BIS={:.4} (want [9.97,10.37]), sigma_Poisson={:.4} (want [10.00,10.40]), relative gap {:.3}% (want < 1%)",
            bis.sigma,
            poisson.sigma,
            100.0 * gap
        ),
    ))
}

fn c2_table_baseline() -> Verdict {
    let cal = calibrate_sigma(
        &MechanismSpec::PoissonGaussian {
            c: 1.0,
            sigma: 1.0,
            gamma: 0.1,
        },
        1000,
        8.0,
        DELTA,
        &default_orders(),
        Mode::Tight,
    )
    .map_err(s)?;
    let scaled = cal.sigma / 2500.0;
    let pass = (6.42e-4..=6.82e-4).contains(&scaled);
    Ok((
        pass,
        format!(
            "sigma={:.4}, sigma/2500={:.4e} (want [6.42e-4, 6.82e-4]); sigma/(2500*sqrt 2)={:.4e}",
            cal.sigma,
            scaled,
            scaled / std::f64::consts::SQRT_2
        ),
    ))
}

fn c3_large_t() -> Verdict {
    let cmp = compare_bis_poisson(1000, 100, 1.0, 2.0, &default_orders()).map_err(s)?;
    let worst = cmp
        .rows
        .iter()
        .max_by(|a, b| rel(a.bis_tight, a.poisson).total_cmp(&rel(b.bis_tight, b.poisson)))
        .unwrap();
    let last_close = cmp
        .rows
        .iter()
        .take_while(|r| rel(r.bis_tight, r.poisson) < 0.05)
        .last()
        .map(|r| r.alpha.get());
    let at10 = &cmp.rows[8];
    Ok((
        cmp.max_rel_gap_tight < 0.05,
        format!(
            "max relative gap {:.1}% at alpha={} (BIS {:.2} vs Poisson {:.2}; want < 5%); \
             gap at alpha=10: {:.1}%; gap stays below 5% up to alpha={}",
            100.0 * cmp.max_rel_gap_tight,
            worst.alpha,
            worst.bis_tight,
            worst.poisson,
            100.0 * rel(at10.bis_tight, at10.poisson),
            last_close.map_or("none".to_string(), |a| a.to_string())
        ),
    ))
}

fn c4_small_t() -> Verdict {
    let cmp = compare_bis_poisson(10, 4, 1.0, 2.0, &default_orders()).map_err(s)?;
    let strictly_below = cmp.rows.iter().all(|r| r.bis_tight < r.poisson);
    let ratio = |a: u32| {
        let r = &cmp.rows[(a - 2) as usize];
        r.poisson / r.bis_tight
    };
    let (r10, r100) = (ratio(10), ratio(100));
    Ok((
        strictly_below && r100 > r10,
        format!(
            "BIS below Poisson at every order: {strictly_below}; ratio Poisson/BIS at alpha=10 {r10:.3}, at alpha=100 {r100:.3}"
        ),
    ))
}

fn within_budget(curve: &RdpCurve) -> Result<bool, String> {
    Ok(to_delta(curve, 10.0).map_err(s)? <= DELTA)
}

fn c5_iteration_budget() -> Verdict {
    let grid = default_orders();
    let mut best_bis = 0;
    let mut best_poisson = 0;
    for t in (5..=150u64).step_by(5) {
        let k = 2 * t / 5;
        let bis = rdp_curve(
            &MechanismSpec::Bis {
                t,
                k,
                c: 1.0,
                sigma: 2.0,
            },
            &grid,
            Mode::Tight,
        )
        .map_err(s)?;
        if within_budget(&bis)? {
            best_bis = t;
        }
    }
    let step = rdp_curve(
        &MechanismSpec::PoissonGaussian {
            c: 1.0,
            sigma: 2.0,
            gamma: 0.4,
        },
        &grid,
        Mode::Tight,
    )
    .map_err(s)?;
    let mut best_poisson_any = 0;
    for t in 1..=150u64 {
        if within_budget(&step.scaled(t))? {
            best_poisson_any = t;
            if t % 5 == 0 {
                best_poisson = t;
            }
        }
    }
    let near_60 = (50..=70).contains(&best_poisson);
    let diff = best_bis as i64 - best_poisson as i64;
    Ok((
        diff >= 7 && near_60,
        format!(
            "largest T within (10, 1e-5) on the T = 5j grid: BIS {best_bis}, Poisson {best_poisson} \
             (difference {diff}, want >= 7; Poisson at any integer T: {best_poisson_any})"
        ),
    ))
}

fn c6_sandwich() -> Verdict {
    let cfg = OracleConfig::default();
    let mut total = 0;
    let mut failures = Vec::new();
    let mut uncovered = 0;
    for d in 2..=4u64 {
        for k in 1..=2u64 {
            if k > d {
                continue;
            }
            for ratio in [0.5, 1.0, 2.0] {
                for a in [2, 3, 5] {
                    let f = MixtureFamily::new(d, k, ratio, 1.0).map_err(s)?;
                    let r = verify_sandwich(&f, ord(a), &cfg).map_err(s)?;
                    total += 1;
                    if !r.epsilon_covers_oracles {
                        uncovered += 1;
                    }
                    if !r.ok {
                        let failed: Vec<String> = r
                            .checks
                            .iter()
                            .filter(|c| !c.ok)
                            .map(|c| format!("{} ({:.5} vs {:.5})", c.name, c.lhs, c.rhs))
                            .collect();
                        failures.push(format!("d={d},k={k},c/s={ratio},a={a}: {}", failed.join(", ")));
                    }
                }
            }
        }
    }
    let mut detail = format!(
        "{} of {total} reports failed; tight epsilon fails to cover an oracle in {uncovered}",
        failures.len()
    );
    for f in &failures {
        detail.push_str("\n       ");
        detail.push_str(f);
    }
    Ok((failures.is_empty(), detail))
}

fn c7_identities() -> Verdict {
    let cfg = OracleConfig::default();
    let mut notes = Vec::new();
    let mut pass = true;
    for (d, k, c) in [(2, 1, 1.0), (2, 1, 0.0), (2, 2, 1.0)] {
        let f = MixtureFamily::new(d, k, c, 1.0).map_err(s)?;
        let r = verify_offset_identity(&f, ord(2), &cfg).map_err(s)?;
        pass &= r.ok;
        notes.push(format!(
            "offset(d={d},k={k},c={c}): {:.6} vs {:.6}+{:.6} {}",
            r.lhs.value,
            r.shift,
            r.remainder.value,
            if r.ok { "ok" } else { "MISMATCH" }
        ));
    }
    let coarse = QuadratureSpec {
        points_per_sigma: 10,
        max_dim_grid: 3,
        ..Default::default()
    };
    let s21: Vec<Vec<f64>> = binary_vectors(2, 1);
    for (centers, a, spec) in [
        (vec![vec![1.0], vec![-1.0]], 2, QuadratureSpec::default()),
        (vec![vec![0.0]], 2, QuadratureSpec::default()),
        (s21, 3, coarse),
    ] {
        let low = centers[0].len();
        let r = verify_dim_reduction(&centers, 1.0, ord(a), &spec).map_err(s)?;
        pass &= r.ok;
        notes.push(format!(
            "dim {}->{} a={a}: fwd {:.2e}, rev {:.2e} {}",
            low,
            low + 1,
            (r.forward_low - r.forward_embedded).abs(),
            (r.reverse_low - r.reverse_embedded).abs(),
            if r.ok { "ok" } else { "MISMATCH" }
        ));
    }
    Ok((pass, notes.join("; ")))
}

fn c8_exact_paths() -> Verdict {
    let mut worst_k1 = 0.0f64;
    let mut worst_a2 = 0.0f64;
    let mut cases = 0;
    for ratio in [0.5, 1.0, 2.0] {
        for d in 1..=6u64 {
            let m = MixtureFamily::new(d, 1, ratio, 1.0).map_err(s)?.to_mixture().map_err(s)?;
            for a in 2..=6 {
                let k1 = forward_exact_k1(d, ratio, 1.0, ord(a)).map_err(s)?;
                let en = forward_exact_enum(&m, ord(a)).map_err(s)?;
                worst_k1 = worst_k1.max(rel(k1, en));
                cases += 1;
            }
            for k in 1..=d {
                let f = MixtureFamily::new(d, k, ratio, 1.0).map_err(s)?;
                let en = forward_exact_enum(&f.to_mixture().map_err(s)?, ord(2)).map_err(s)?;
                worst_a2 = worst_a2.max(rel(forward_bound(&f, ord(2)), en));
            }
        }
    }
    Ok((
        worst_k1 <= 1e-9 && worst_a2 <= 1e-9,
        format!(
            "k=1 fast path vs enumeration over {cases} cases: max rel diff {worst_k1:.1e}; \
             forward bound vs exact at alpha=2: max rel diff {worst_a2:.1e} (want <= 1e-9)"
        ),
    ))
}

fn max_rel(a: &RdpCurve, b: &RdpCurve) -> f64 {
    a.epsilons()
        .iter()
        .zip(b.epsilons())
        .map(|(x, y)| rel(*x, *y))
        .fold(0.0, f64::max)
}

fn c9_reductions() -> Verdict {
    let grid = default_orders();
    let mut worst = [0.0f64; 3];
    for (c, sigma) in [(1.0, 1.0), (0.5, 2.0), (2.0, 0.7), (1.0, 10.0)] {
        let gauss = rdp_curve(&MechanismSpec::Gaussian { c, sigma }, &grid, Mode::Tight).map_err(s)?;
        for mode in [Mode::Tight, Mode::Loose] {
            let split = rdp_curve(&MechanismSpec::ModelSplit { d: 1, c, sigma }, &grid, mode).map_err(s)?;
            worst[0] = worst[0].max(max_rel(&split, &gauss));
            for t in [1u64, 2, 5, 12, 50] {
                let bis = rdp_curve(&MechanismSpec::Bis { t, k: t, c, sigma }, &grid, mode).map_err(s)?;
                worst[1] = worst[1].max(max_rel(&bis, &gauss.scaled(t)));
            }
        }
        let full = rdp_curve(
            &MechanismSpec::PoissonGaussian {
                c,
                sigma,
                gamma: 1.0,
            },
            &grid,
            Mode::Tight,
        )
        .map_err(s)?;
        worst[2] = worst[2].max(max_rel(&full, &gauss));
    }
    Ok((
        worst.iter().all(|w| *w <= 1e-9),
        format!(
            "max rel diff: ModelSplit(d=1) vs Gaussian {:.1e}, BIS(k=T) vs T-fold Gaussian {:.1e}, \
             Poisson(gamma=1) vs Gaussian {:.1e} (want <= 1e-9)",
            worst[0], worst[1], worst[2]
        ),
    ))
}

fn within_3sd(count: f64, trials: f64, p: f64) -> bool {
    (count - trials * p).abs() <= 3.0 * (trials * p * (1.0 - p)).sqrt()
}

fn c10_simulator() -> Verdict {
    let mut violations = 0u64;
    let mut max_norm = 0.0f64;
    let (mut block0, mut blocks_total) = (0u64, 0u64);
    let (mut kept, mut units) = (0u64, 0u64);
    let mut bad_rows = 0usize;
    let mut column_hits = 0u64;
    let mut column_cells = 0u64;
    let mut bis_runs_ok = true;

    let linear = SyntheticTask::linear(64, 10, 0.1, 7).map_err(s)?;
    let hidden = SyntheticTask::hidden(64, 4, 6, 0.1, 7).map_err(s)?;
    for seed in 0..20u64 {
        let base = SimConfig {
            iterations: 30,
            c: 1.0,
            sigma: 1.0,
            learning_rate: 0.05,
            mode: TrainingMode::Plain,
            schedule: Schedule::All,
            seed,
            delta: DELTA,
        };
        let mut plan = SplitPlan::contiguous(8, 2).map_err(s)?;
        plan.nonsplit = vec![8, 9];
        let split = SimConfig {
            mode: TrainingMode::ModelSplit { plan },
            ..base.clone()
        };
        let dropout = SimConfig {
            mode: TrainingMode::Dropout {
                dropout: DropoutSpec::default(),
            },
            ..base.clone()
        };
        let bis = SimConfig {
            schedule: Schedule::Bis { k: 7 },
            ..base.clone()
        };
        for (task, cfg) in [(&linear, &base), (&linear, &split), (&hidden, &dropout), (&linear, &bis)] {
            let t = run_training(task, cfg).map_err(s)?;
            violations += t.diagnostics.violations();
            max_norm = max_norm.max(t.diagnostics.max_clipped_norm);
            if let Some(&b0) = t.diagnostics.block_counts.first() {
                block0 += b0;
                blocks_total += t.diagnostics.block_counts.iter().sum::<u64>();
            }
            kept += t.diagnostics.units_kept;
            units += t.diagnostics.units_total;
            if matches!(cfg.schedule, Schedule::Bis { .. }) {
                bis_runs_ok &= t.diagnostics.participations.iter().all(|&p| p == 7);
            }
        }
        let schedule = assign_bis_schedule(200, 10, 4, seed).map_err(s)?;
        bad_rows += schedule.row_sums().iter().filter(|&&r| r != 4).count();
        column_hits += schedule.column_sums()[0] as u64;
        column_cells += 200;
    }
    let freq_ok = within_3sd(block0 as f64, blocks_total as f64, 0.5)
        && within_3sd(kept as f64, units as f64, 0.5)
        && within_3sd(column_hits as f64, column_cells as f64, 0.4);
    Ok((
        violations == 0 && bad_rows == 0 && bis_runs_ok && freq_ok,
        format!(
            "80 runs: {violations} violations, max clipped norm {max_norm:.6}; BIS rows off k: {bad_rows}; \
             block-0 share {:.4}, unit keep share {:.4}, column-0 share {:.4} (3-sd tests {})",
            block0 as f64 / blocks_total as f64,
            kept as f64 / units as f64,
            column_hits as f64 / column_cells as f64,
            if freq_ok { "pass" } else { "fail" }
        ),
    ))
}

fn random_spec(rng: &mut ChaCha8Rng) -> MechanismSpec {
    let c = rng.random_range(0.1..3.0);
    let sigma = rng.random_range(0.3..5.0);
    match rng.random_range(0..6) {
        0 => MechanismSpec::Gaussian { c, sigma },
        1 => MechanismSpec::PoissonGaussian {
            c,
            sigma,
            gamma: rng.random_range(0.01..=1.0),
        },
        2 => MechanismSpec::ModelSplit {
            d: rng.random_range(1..=40),
            c,
            sigma,
        },
        3 => MechanismSpec::DropoutSplit { c, sigma },
        4 => MechanismSpec::PartialSplit {
            c_split: c,
            c_nonsplit: rng.random_range(0.0..2.0),
            d: rng.random_range(1..=10),
            sigma,
        },
        _ => {
            let t = rng.random_range(1..=40);
            MechanismSpec::Bis {
                t,
                k: rng.random_range(1..=t),
                c,
                sigma,
            }
        }
    }
}

fn scale(spec: &MechanismSpec, f: f64) -> MechanismSpec {
    match *spec {
        MechanismSpec::Gaussian { c, sigma } => MechanismSpec::Gaussian { c: c * f, sigma: sigma * f },
        MechanismSpec::PoissonGaussian { c, sigma, gamma } => MechanismSpec::PoissonGaussian {
            c: c * f,
            sigma: sigma * f,
            gamma,
        },
        MechanismSpec::ModelSplit { d, c, sigma } => MechanismSpec::ModelSplit { d, c: c * f, sigma: sigma * f },
        MechanismSpec::MixtureSplit { d, c, sigma } => MechanismSpec::MixtureSplit { d, c: c * f, sigma: sigma * f },
        MechanismSpec::DropoutSplit { c, sigma } => MechanismSpec::DropoutSplit { c: c * f, sigma: sigma * f },
        MechanismSpec::PartialSplit {
            c_split,
            c_nonsplit,
            d,
            sigma,
        } => MechanismSpec::PartialSplit {
            c_split: c_split * f,
            c_nonsplit: c_nonsplit * f,
            d,
            sigma: sigma * f,
        },
        MechanismSpec::Bis { t, k, c, sigma } => MechanismSpec::Bis {
            t,
            k,
            c: c * f,
            sigma: sigma * f,
        },
    }
}

fn with_c(spec: &MechanismSpec, factor: f64) -> MechanismSpec {
    let sigma = spec.sigma();
    let mut out = scale(spec, factor);
    out = out.with_sigma(sigma);
    out
}

fn c11_properties() -> Verdict {
    const CASES: usize = 500;
    let grid = default_orders();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut fails: Vec<String> = Vec::new();
    let note = |name: &str, spec: &MechanismSpec, fails: &mut Vec<String>| {
        if fails.len() < 8 {
            fails.push(format!("{name}: {spec:?}"));
        } else {
            fails.push(String::new());
        }
    };
    for _ in 0..CASES {
        let spec = random_spec(&mut rng);
        let mode = if rng.random::<bool>() { Mode::Tight } else { Mode::Loose };
        let curve = rdp_curve(&spec, &grid, mode).map_err(s)?;

        let e = curve.epsilons();
        if e.windows(2).any(|w| w[1] < w[0] * (1.0 - 1e-12) - 1e-15) {
            note("monotone in alpha", &spec, &mut fails);
        }

        let bigger_c = rdp_curve(&with_c(&spec, 1.0 + rng.random_range(0.01..1.0)), &grid, mode).map_err(s)?;
        if bigger_c.epsilons().iter().zip(e).any(|(b, a)| *b < a * (1.0 - 1e-12)) {
            note("monotone in c", &spec, &mut fails);
        }
        let bigger_sigma = spec.with_sigma(spec.sigma() * (1.0 + rng.random_range(0.01..1.0)));
        let quieter = rdp_curve(&bigger_sigma, &grid, mode).map_err(s)?;
        if quieter.epsilons().iter().zip(e).any(|(b, a)| *b > a * (1.0 + 1e-12)) {
            note("monotone in sigma", &spec, &mut fails);
        }

        let t = rng.random_range(0.1..10.0);
        let scaled = rdp_curve(&scale(&spec, t), &grid, mode).map_err(s)?;
        if max_rel(&scaled, &curve) > 1e-9 {
            note("scale invariance", &spec, &mut fails);
        }

        let other = random_spec(&mut rng);
        let (n1, n2) = (rng.random_range(1..=1000u64), rng.random_range(1..=1000u64));
        let composed =
            compose(&CompositionPlan::new(vec![(spec, n1), (other, n2)]).map_err(s)?, &grid, mode).map_err(s)?;
        let other_curve = rdp_curve(&other, &grid, mode).map_err(s)?;
        let linear = composed
            .epsilons()
            .iter()
            .zip(e.iter().zip(other_curve.epsilons()))
            .all(|(x, (a, b))| *x == n1 as f64 * a + n2 as f64 * b);
        if !linear {
            note("composition linearity", &spec, &mut fails);
        }

        let delta = 10f64.powf(-rng.random_range(1.0..12.0));
        let g = to_dp(&composed, delta).map_err(s)?;
        if to_delta(&composed, g.epsilon).map_err(s)? > delta * (1.0 + 1e-9) {
            note("to_dp/to_delta consistency", &spec, &mut fails);
        }
    }
    Ok((
        fails.is_empty(),
        format!(
            "{CASES} random mechanisms x 6 properties: {} failures{}",
            fails.len(),
            fails
                .iter()
                .filter(|f| !f.is_empty())
                .map(|f| format!("\n       {f}"))
                .collect::<String>()
        ),
    ))
}

fn main() {
    let min = |m: u64| Duration::from_secs(60 * m);
    let sec = Duration::from_secs;
    println!("acceptance criteria");
    let outcomes = [
        run(1, "calibration: BIS{2000,655} vs Poisson(0.3275) at (8, 1e-5)", min(2), c1_calibration),
        run(2, "baseline noise: Poisson(0.1) x 1000 at (8, 1e-5), sigma/2500", sec(30), c2_table_baseline),
        run(3, "BIS{1000,100} vs Poisson within 5% at sigma=2", min(1), c3_large_t),
        run(4, "BIS{10,4} below Poisson, gap growing with alpha", min(1), c4_small_t),
        run(5, "extra iterations within (10, 1e-5) at gamma=0.4, sigma=2", min(2), c5_iteration_budget),
        run(6, "oracle sandwich sweep", min(10), c6_sandwich),
        run(7, "offset and dimension-reduction identities", min(5), c7_identities),
        run(8, "exact forward paths agree", min(2), c8_exact_paths),
        run(9, "mechanism reductions", min(2), c9_reductions),
        run(10, "simulator invariants", min(5), c10_simulator),
        run(11, "randomized property sweeps", min(10), c11_properties),
    ];
    let failed: Vec<u32> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    println!(
        "summary: {} passed, {} failed{}",
        outcomes.len() - failed.len(),
        failed.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(" ({failed:?})")
        }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
