use std::fmt::Write as _;
use std::path::Path;

use amplify_core::accountant::{
    calibrate_sigma, compose, to_dp, CompositionPlan, MechanismSpec, Mode, RdpCurve,
};
use amplify_core::oracle::{
    verify_dim_reduction, verify_offset_identity, verify_sandwich, McSpec, OracleConfig,
    QuadratureSpec,
};
use amplify_core::rdp::{binary_vectors, forward_bound, forward_exact_enum, MixtureFamily, RenyiOrder};
use amplify_core::sim::{
    accounting_plan, run_training, DropoutSpec, Schedule, SimConfig, SplitPlan, SyntheticTask,
    TrainingMode,
};
use amplify_core::Error as CoreError;
use anyhow::{anyhow, bail, Context, Result};
use serde_json::{json, Value};

use crate::args::{
    parse_pairs, BoundMode, CalibrateArgs, CurveArgs, EpsilonArgs, MechKind, SimMode, SimSchedule,
    SimulateArgs, VerifyArgs,
};
use crate::output::{csv_preamble, emit, fmt_g, json_envelope, Format, TOOL, VERSION};

pub const UNSUPPORTED_POINTER: &str =
    "see the README section \"Unsupported combinations\"";

/// A failed numerical check; exits with status 1.
#[derive(Debug)]
pub struct VerificationFailed(pub usize);

impl std::fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} verification check(s) failed", self.0)
    }
}

impl std::error::Error for VerificationFailed {}

#[derive(Debug, Default, Clone, Copy)]
struct MechParams {
    c: Option<f64>,
    sigma: Option<f64>,
    gamma: Option<f64>,
    d: Option<u64>,
    t: Option<u64>,
    k: Option<u64>,
    c_nonsplit: Option<f64>,
    poisson: Option<f64>,
}

fn refuse(what: &str) -> anyhow::Error {
    anyhow!(CoreError::Unsupported(format!("{what} has no accounting rule; {UNSUPPORTED_POINTER}")))
}

fn build_spec(kind: MechKind, p: MechParams) -> Result<MechanismSpec> {
    let c = p.c.unwrap_or(1.0);
    let sigma = p.sigma.context("sigma is required")?;
    let need = |name: &str, v: Option<u64>| v.with_context(|| format!("{name} is required for this mechanism"));
    let reject = |name: &str, set: bool| -> Result<()> {
        if set {
            bail!("{name} does not apply to this mechanism");
        }
        Ok(())
    };
    let splits = matches!(
        kind,
        MechKind::ModelSplit | MechKind::MixtureSplit | MechKind::Dropout | MechKind::PartialSplit
    );
    if p.poisson.is_some() && (splits || kind == MechKind::Bis) {
        return Err(refuse("data subsampling combined with model splitting or BIS"));
    }
    reject("gamma", p.gamma.is_some() && kind != MechKind::Poisson)?;
    reject("d", p.d.is_some() && !matches!(kind, MechKind::ModelSplit | MechKind::MixtureSplit | MechKind::PartialSplit))?;
    reject("T/k", (p.t.is_some() || p.k.is_some()) && kind != MechKind::Bis)?;
    reject("c_nonsplit", p.c_nonsplit.is_some() && kind != MechKind::PartialSplit)?;
    let spec = match kind {
        MechKind::Gaussian => match p.poisson {
            Some(gamma) => MechanismSpec::PoissonGaussian { c, sigma, gamma },
            None => MechanismSpec::Gaussian { c, sigma },
        },
        MechKind::Poisson => {
            reject("poisson", p.poisson.is_some())?;
            MechanismSpec::PoissonGaussian {
                c,
                sigma,
                gamma: p.gamma.context("gamma is required for the poisson mechanism")?,
            }
        }
        MechKind::ModelSplit => MechanismSpec::ModelSplit { d: need("d", p.d)?, c, sigma },
        MechKind::MixtureSplit => MechanismSpec::MixtureSplit { d: need("d", p.d)?, c, sigma },
        MechKind::Dropout => MechanismSpec::DropoutSplit { c, sigma },
        MechKind::PartialSplit => MechanismSpec::PartialSplit {
            c_split: c,
            c_nonsplit: p.c_nonsplit.context("c_nonsplit is required for partial-split")?,
            d: need("d", p.d)?,
            sigma,
        },
        MechKind::Bis => MechanismSpec::Bis {
            t: need("T", p.t)?,
            k: need("k", p.k)?,
            c,
            sigma,
        },
    };
    spec.validate()?;
    Ok(spec)
}

fn mode_of(m: Option<BoundMode>) -> Mode {
    match m.unwrap_or(BoundMode::Tight) {
        BoundMode::Tight => Mode::Tight,
        BoundMode::Loose => Mode::Loose,
    }
}

fn orders(max_order: Option<u32>) -> Result<Vec<RenyiOrder>> {
    Ok(RenyiOrder::range(max_order.unwrap_or(100))?)
}

fn label(spec: &MechanismSpec, count: u64) -> String {
    if count == 1 {
        spec.label()
    } else {
        format!("{}x{count}", spec.label())
    }
}

fn provenance_at(curve: &RdpCurve, alpha: RenyiOrder) -> String {
    curve
        .iter()
        .find(|(a, _, _)| *a == alpha)
        .map(|(_, _, p)| p.to_string())
        .unwrap_or_default()
}

/// Text summary to stdout, formatted output to `--output` or, when only
/// `--format` is given, to stdout instead of the summary.
fn deliver(output: Option<&Path>, format: Option<Format>, summary: &str, render: impl Fn(Format) -> Result<String>) -> Result<()> {
    match (output, format) {
        (Some(path), f) => {
            emit(Some(path), &render(f.unwrap_or(Format::Json))?)?;
            println!("{summary}");
            Ok(())
        }
        (None, Some(f)) => emit(None, &render(f)?),
        (None, None) => {
            println!("{summary}");
            Ok(())
        }
    }
}

pub fn epsilon(args: &EpsilonArgs) -> Result<()> {
    let config = serde_json::to_value(args)?;
    let kind = args.mech.context("--mech is required")?;
    let spec = build_spec(
        kind,
        MechParams {
            c: args.c,
            sigma: args.sigma,
            gamma: args.gamma,
            d: args.d,
            t: args.t,
            k: args.k,
            c_nonsplit: args.c_nonsplit,
            poisson: args.poisson,
        },
    )?;
    let count = args.count.unwrap_or(1);
    let delta = args.delta.unwrap_or(1e-5);
    let mode = mode_of(args.mode);
    let curve = compose(&CompositionPlan::single(spec, count)?, &orders(args.max_order)?, mode)?;
    let g = to_dp(&curve, delta)?;
    let provenance = provenance_at(&curve, g.achieving_order);
    let mechanism = label(&spec, count);
    let summary = format!(
        "epsilon = {} at alpha = {} (delta = {}, mechanism = {mechanism}, mode = {mode}, provenance = {provenance})",
        fmt_g(g.epsilon),
        g.achieving_order,
        fmt_g(delta)
    );
    deliver(args.output.as_deref(), args.format, &summary, |f| {
        Ok(match f {
            Format::Csv => format!(
                "{}epsilon,delta,alpha,mechanism,mode,provenance\n{},{},{},{mechanism},{mode},{provenance}\n",
                csv_preamble(&config),
                fmt_g(g.epsilon),
                fmt_g(delta),
                g.achieving_order
            ),
            Format::Json => {
                let body = json!({
                    "epsilon": g.epsilon,
                    "delta": delta,
                    "alpha": g.achieving_order.get(),
                    "mechanism": mechanism,
                    "spec": spec,
                    "count": count,
                    "mode": mode,
                    "provenance": provenance,
                });
                format!("{}\n", serde_json::to_string_pretty(&json_envelope(&config, "result", body))?)
            }
        })
    })
}

const CURVE_KEYS_SHARED: [&str; 3] = ["c", "sigma", "count"];

fn curve_items(args: &CurveArgs) -> Result<Vec<(MechanismSpec, u64)>> {
    let groups: [(MechKind, &Vec<String>); 7] = [
        (MechKind::Gaussian, &args.gaussian),
        (MechKind::Poisson, &args.poisson),
        (MechKind::ModelSplit, &args.model_split),
        (MechKind::MixtureSplit, &args.mixture_split),
        (MechKind::Dropout, &args.dropout),
        (MechKind::PartialSplit, &args.partial_split),
        (MechKind::Bis, &args.bis),
    ];
    let mut items = Vec::new();
    for (kind, specs) in groups {
        for text in specs {
            let mut p = MechParams {
                c: args.c,
                sigma: args.sigma,
                ..Default::default()
            };
            let mut count = args.count.unwrap_or(1);
            for (key, value) in parse_pairs(text)? {
                let f = || value.parse::<f64>().with_context(|| format!("bad number `{value}` for {key}"));
                let u = || value.parse::<u64>().with_context(|| format!("bad integer `{value}` for {key}"));
                match key.as_str() {
                    "c" => p.c = Some(f()?),
                    "sigma" => p.sigma = Some(f()?),
                    "count" => count = u()?,
                    "gamma" => p.gamma = Some(f()?),
                    "d" => p.d = Some(u()?),
                    "T" => p.t = Some(u()?),
                    "k" => p.k = Some(u()?),
                    "c_nonsplit" => p.c_nonsplit = Some(f()?),
                    "poisson" => p.poisson = Some(f()?),
                    other => bail!(
                        "unknown key `{other}` in `{text}` (shared keys: {})",
                        CURVE_KEYS_SHARED.join(", ")
                    ),
                }
            }
            items.push((build_spec(kind, p).with_context(|| format!("in `{text}`"))?, count));
        }
    }
    if items.is_empty() {
        bail!("no mechanisms given; use e.g. --gaussian count=1 or --bis T=10,k=4");
    }
    Ok(items)
}

pub fn curve(args: &CurveArgs) -> Result<()> {
    let config = serde_json::to_value(args)?;
    let items = curve_items(args)?;
    let mode = mode_of(args.mode);
    let grid = orders(args.max_order)?;
    let mut rows = Vec::new();
    for (spec, count) in &items {
        let curve = compose(&CompositionPlan::single(*spec, *count)?, &grid, mode)?;
        let name = label(spec, *count);
        for (a, e, p) in curve.iter() {
            rows.push((a, e, name.clone(), p));
        }
    }
    let summary = match &args.output {
        Some(p) => format!("wrote {} rows for {} mechanism(s) to {}", rows.len(), items.len(), p.display()),
        None => String::new(),
    };
    let format = args.format.or(Some(Format::Csv));
    deliver(args.output.as_deref(), format, &summary, |f| {
        Ok(match f {
            Format::Csv => {
                let mut out = csv_preamble(&config);
                out.push_str("alpha,epsilon,mechanism,mode,provenance\n");
                for (a, e, name, p) in &rows {
                    writeln!(out, "{a},{},{name},{mode},{p}", fmt_g(*e))?;
                }
                out
            }
            Format::Json => {
                let body: Vec<Value> = rows
                    .iter()
                    .map(|(a, e, name, p)| {
                        json!({"alpha": a.get(), "epsilon": e, "mechanism": name, "mode": mode, "provenance": p})
                    })
                    .collect();
                format!("{}\n", serde_json::to_string_pretty(&json_envelope(&config, "rows", Value::Array(body)))?)
            }
        })
    })
}

pub fn calibrate(args: &CalibrateArgs) -> Result<()> {
    let config = serde_json::to_value(args)?;
    let kind = args.mech.context("--mech is required")?;
    let template = build_spec(
        kind,
        MechParams {
            c: args.c,
            sigma: Some(1.0),
            gamma: args.gamma,
            d: args.d,
            t: args.t,
            k: args.k,
            c_nonsplit: args.c_nonsplit,
            poisson: args.poisson,
        },
    )?;
    let count = args.count.unwrap_or(1);
    let target = args.epsilon.context("--epsilon (the target) is required")?;
    let delta = args.delta.unwrap_or(1e-5);
    let mode = mode_of(args.mode);
    let cal = calibrate_sigma(&template, count, target, delta, &orders(args.max_order)?, mode)?;
    let mechanism = label(&template, count);
    let record = json!({
        "sigma": cal.sigma,
        "achieved_epsilon": cal.achieved.epsilon,
        "alpha": cal.achieved.achieving_order.get(),
        "target_epsilon": target,
        "delta": delta,
        "iterations": cal.iterations,
        "bracket": [cal.bracket.0, cal.bracket.1],
        "epsilon_at_bracket": [cal.epsilon_at_bracket.0, cal.epsilon_at_bracket.1],
        "mechanism": mechanism,
        "count": count,
        "mode": mode,
    });
    let summary = format!(
        "sigma = {} (achieved epsilon = {} at alpha = {}, {} bisection steps)\n{}",
        fmt_g(cal.sigma),
        fmt_g(cal.achieved.epsilon),
        cal.achieved.achieving_order,
        cal.iterations,
        serde_json::to_string(&record)?
    );
    deliver(args.output.as_deref(), args.format, &summary, |f| {
        Ok(match f {
            Format::Csv => format!(
                "{}sigma,achieved_epsilon,alpha,target_epsilon,delta,iterations,sigma_lo,sigma_hi,mechanism,mode\n{},{},{},{},{},{},{},{},{mechanism},{mode}\n",
                csv_preamble(&config),
                fmt_g(cal.sigma),
                fmt_g(cal.achieved.epsilon),
                cal.achieved.achieving_order,
                fmt_g(target),
                fmt_g(delta),
                cal.iterations,
                fmt_g(cal.bracket.0),
                fmt_g(cal.bracket.1)
            ),
            Format::Json => format!(
                "{}\n",
                serde_json::to_string_pretty(&json_envelope(&config, "result", record.clone()))?
            ),
        })
    })
}

fn parse_family(text: &str, c_override: Option<f64>) -> Result<MixtureFamily> {
    let (mut d, mut k, mut c, mut sigma) = (None, None, None, None);
    for (key, value) in parse_pairs(text)? {
        match key.as_str() {
            "d" => d = Some(value.parse::<u64>()?),
            "k" => k = Some(value.parse::<u64>()?),
            "c" => c = Some(value.parse::<f64>()?),
            "sigma" => sigma = Some(value.parse::<f64>()?),
            other => bail!("unknown family key `{other}` in `{text}`"),
        }
    }
    Ok(MixtureFamily::new(
        d.context("family needs d")?,
        k.unwrap_or(1),
        c_override.or(c).unwrap_or(1.0),
        sigma.unwrap_or(1.0),
    )?)
}

fn record(check: &str, ok: bool, report: Value) -> Value {
    json!({"check": check, "ok": ok, "report": report})
}

pub fn verify(args: &VerifyArgs) -> Result<()> {
    let config = serde_json::to_value(args)?;
    if args.format == Some(Format::Csv) {
        bail!("verify writes JSON lines only");
    }
    let mut oracle = OracleConfig::default();
    if let Some(n) = args.samples {
        oracle.monte_carlo = McSpec {
            n_samples: n,
            ..oracle.monte_carlo
        };
    }
    if let Some(seed) = args.seed {
        oracle.monte_carlo.seed = seed;
    }
    oracle.monte_carlo.validate()?;
    let alphas: Vec<RenyiOrder> = if args.alpha.is_empty() {
        vec![2, 3, 5]
    } else {
        args.alpha.clone()
    }
    .into_iter()
    .map(RenyiOrder::new)
    .collect::<Result<_, _>>()?;

    let default_sweep = args.family.is_empty();
    let families: Vec<MixtureFamily> = if default_sweep {
        let mut out = Vec::new();
        for d in 2..=4u64 {
            for k in 1..=2u64.min(d) {
                for c in [0.5, 1.0, 2.0] {
                    out.push(MixtureFamily::new(d, k, args.c.unwrap_or(c), 1.0)?);
                }
            }
        }
        out
    } else {
        args.family
            .iter()
            .map(|f| parse_family(f, args.c))
            .collect::<Result<_>>()?
    };

    let mut records = Vec::new();
    for f in &families {
        for &a in &alphas {
            let r = verify_sandwich(f, a, &oracle)?;
            records.push(record("sandwich", r.ok, serde_json::to_value(&r)?));
        }
        let a2 = RenyiOrder::new(2)?;
        let exact = forward_exact_enum(&f.to_mixture()?, a2)?;
        let bound = forward_bound(f, a2);
        let ok = (exact - bound).abs() <= 1e-9 * bound.max(1e-300);
        records.push(record(
            "alpha2_tightness",
            ok,
            json!({"family": f, "forward_bound": bound, "exact_forward": exact}),
        ));
        let offset_orders: &[RenyiOrder] = if default_sweep { &alphas[..1] } else { &alphas };
        for &a in offset_orders {
            let r = verify_offset_identity(f, a, &oracle)?;
            records.push(record("offset_identity", r.ok, serde_json::to_value(&r)?));
        }
    }
    if default_sweep {
        let c = args.c.unwrap_or(1.0);
        let coarse = QuadratureSpec {
            points_per_sigma: 10,
            max_dim_grid: 3,
            ..Default::default()
        };
        let s21: Vec<Vec<f64>> = binary_vectors(2, 1)
            .into_iter()
            .map(|v| v.into_iter().map(|x| x * c).collect())
            .collect();
        for (centers, a, spec) in [
            (vec![vec![c], vec![-c]], 2, QuadratureSpec::default()),
            (vec![vec![0.0]], 2, QuadratureSpec::default()),
            (s21, 3, coarse),
        ] {
            let r = verify_dim_reduction(&centers, 1.0, RenyiOrder::new(a)?, &spec)?;
            records.push(record("dim_reduction", r.ok, serde_json::to_value(&r)?));
        }
    }

    let failed: Vec<&Value> = records.iter().filter(|r| r["ok"] == Value::Bool(false)).collect();
    let mut out = String::new();
    writeln!(
        out,
        "{}",
        json!({"tool": TOOL, "version": VERSION, "config": crate::output::strip_nulls(&config)})
    )?;
    for r in &records {
        writeln!(out, "{r}")?;
    }
    writeln!(out, "{}", json!({"summary": {"checks": records.len(), "failed": failed.len()}}))?;
    emit(args.output.as_deref(), &out)?;
    if args.output.is_some() {
        println!("{} checks, {} failed", records.len(), failed.len());
    }
    if !failed.is_empty() {
        for r in &failed {
            eprintln!("FAILED {r}");
        }
        return Err(VerificationFailed(failed.len()).into());
    }
    Ok(())
}

fn sim_config(args: &SimulateArgs) -> Result<(SimConfig, SyntheticTask)> {
    let mode = args.mode.unwrap_or(SimMode::Plain);
    let seed = args.seed.unwrap_or(0);
    let n = args.n.unwrap_or(64);
    if mode != SimMode::ModelSplit && (args.d.is_some() || args.nonsplit.is_some() || args.per_iteration.is_some()) {
        bail!("--d, --nonsplit and --per-iteration apply to model-split only");
    }
    if mode != SimMode::Dropout && args.rate.is_some() {
        bail!("--rate applies to dropout only");
    }
    let schedule = match args.schedule.unwrap_or(SimSchedule::All) {
        SimSchedule::All => Schedule::All,
        SimSchedule::Bis => Schedule::Bis {
            k: args.k.context("--k is required for the bis schedule")?,
        },
        SimSchedule::Poisson => Schedule::Poisson {
            gamma: args.gamma.context("--gamma is required for the poisson schedule")?,
        },
    };
    let (training, task) = match mode {
        SimMode::Plain => (TrainingMode::Plain, SyntheticTask::linear(n, args.m.unwrap_or(12), 0.1, seed)?),
        SimMode::ModelSplit => {
            let m = args.m.unwrap_or(12);
            let shared = args.nonsplit.unwrap_or(0);
            if shared >= m {
                bail!("--nonsplit must be smaller than --m");
            }
            let mut plan = SplitPlan::contiguous(m - shared, args.d.context("--d is required for model-split")?)?;
            plan.nonsplit = (m - shared..m).collect();
            plan.per_iteration = args.per_iteration.unwrap_or(false);
            (TrainingMode::ModelSplit { plan }, SyntheticTask::linear(n, m, 0.1, seed)?)
        }
        SimMode::Dropout => (
            TrainingMode::Dropout {
                dropout: DropoutSpec {
                    rate: args.rate.unwrap_or(0.5),
                    forced_keep: None,
                },
            },
            SyntheticTask::hidden(n, args.input_dim.unwrap_or(4), args.hidden.unwrap_or(8), 0.1, seed)?,
        ),
    };
    let config = SimConfig {
        iterations: args.t.unwrap_or(50),
        c: args.c.unwrap_or(1.0),
        sigma: args.sigma.unwrap_or(1.0),
        learning_rate: args.lr.unwrap_or(0.05),
        mode: training,
        schedule,
        seed,
        delta: args.delta.unwrap_or(1e-5),
    };
    config.validate()?;
    Ok((config, task))
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let resolved = serde_json::to_value(args)?;
    if args.format == Some(Format::Csv) {
        bail!("simulate writes JSON lines only");
    }
    let (config, task) = sim_config(args)?;
    if config.sigma > 0.0 {
        if let Err(e @ CoreError::Unsupported(_)) = accounting_plan(&config) {
            return Err(e.into());
        }
    }
    let trace = run_training(&task, &config)?;
    let d = &trace.diagnostics;
    let final_loss = trace.records.last().map(|r| r.loss).unwrap_or(f64::NAN);
    let summary = json!({
        "iterations": trace.records.len(),
        "final_loss": final_loss,
        "diagnostics": d,
        "privacy": trace.privacy,
        "privacy_note": trace.privacy_note,
    });

    if let Some(path) = &args.output {
        let mut out = String::new();
        writeln!(
            out,
            "{}",
            json!({"tool": TOOL, "version": VERSION, "config": crate::output::strip_nulls(&resolved), "sim_config": config})
        )?;
        for r in &trace.records {
            writeln!(out, "{}", serde_json::to_string(r)?)?;
        }
        writeln!(out, "{}", json!({ "summary": summary }))?;
        emit(Some(path), &out)?;
    }

    println!("iterations: {}, final loss: {}", trace.records.len(), fmt_g(final_loss));
    println!(
        "violations: clip {}, support {}, disjointness {}, zeroing {} (max clipped norm {})",
        d.clip_violations,
        d.support_violations,
        d.disjointness_violations,
        d.zeroing_violations,
        fmt_g(d.max_clipped_norm)
    );
    if let Schedule::Bis { k } = config.schedule {
        let all_k = d.participations.iter().all(|&p| p == k);
        println!("participation: every sample in exactly {k} iterations: {all_k}");
    }
    match (&trace.privacy, &trace.privacy_note) {
        (Some(g), _) => println!(
            "privacy: epsilon = {} at alpha = {} (delta = {})",
            fmt_g(g.epsilon),
            g.achieving_order,
            fmt_g(g.delta)
        ),
        (None, Some(note)) => println!("privacy: not reported ({note})"),
        (None, None) => {}
    }
    if d.violations() > 0 {
        return Err(VerificationFailed(d.violations() as usize).into());
    }
    Ok(())
}
