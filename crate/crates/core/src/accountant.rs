//! Mechanism-level RDP accounting.
//!
//! A [`MechanismSpec`] describes one step of a training procedure. Its RDP
//! curve over integer orders is produced by [`rdp_curve`], curves compose by
//! pointwise addition ([`compose`]) and convert to `(ε, δ)` with
//! [`to_dp`] / [`to_delta`]. [`calibrate_sigma`] inverts the whole pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::{log_binomial, log_sum_exp, xlog1m, xlogy};
use crate::rdp::{
    epsilon_loose, epsilon_tight_curve, gaussian_rdp, ForwardPath, MixtureFamily, RenyiOrder,
};

/// Largest order of the default grid.
pub const DEFAULT_MAX_ORDER: u32 = 100;

/// Orders `2..=100`.
pub fn default_orders() -> Vec<RenyiOrder> {
    RenyiOrder::range(DEFAULT_MAX_ORDER).expect("constant grid is valid")
}

/// An accountable mechanism, applied once.
///
/// Model splitting variants describe one iteration in which every sample
/// updates one of `d` submodels chosen uniformly at random. `Bis` describes
/// a whole balanced-iteration-subsampling run of `t` iterations in which
/// every sample participates in exactly `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MechanismSpec {
    Gaussian {
        c: f64,
        sigma: f64,
    },
    PoissonGaussian {
        c: f64,
        sigma: f64,
        gamma: f64,
    },
    ModelSplit {
        d: u64,
        c: f64,
        sigma: f64,
    },
    /// A probabilistic mixture of disjoint `d`-way partitions.
    MixtureSplit {
        d: u64,
        c: f64,
        sigma: f64,
    },
    /// Dropout at rate 0.5 on hidden units; accounted as a 2-way split.
    DropoutSplit {
        c: f64,
        sigma: f64,
    },
    /// A `d`-way split part and a shared part with separate clipping norms.
    PartialSplit {
        c_split: f64,
        c_nonsplit: f64,
        d: u64,
        sigma: f64,
    },
    Bis {
        t: u64,
        k: u64,
        c: f64,
        sigma: f64,
    },
}

impl MechanismSpec {
    pub fn validate(&self) -> Result<()> {
        let check_c = |name: &str, c: f64| {
            if !(c >= 0.0) || !c.is_finite() {
                Err(invalid(format!("{name} must be nonnegative and finite, got {c}")))
            } else {
                Ok(())
            }
        };
        let sigma = self.sigma();
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(invalid(format!("sigma must be positive and finite, got {sigma}")));
        }
        match *self {
            MechanismSpec::Gaussian { c, .. } | MechanismSpec::DropoutSplit { c, .. } => {
                check_c("c", c)
            }
            MechanismSpec::PoissonGaussian { c, gamma, .. } => {
                check_c("c", c)?;
                if !(gamma > 0.0 && gamma <= 1.0) {
                    return Err(invalid(format!("gamma must lie in (0, 1], got {gamma}")));
                }
                Ok(())
            }
            MechanismSpec::ModelSplit { d, c, .. } | MechanismSpec::MixtureSplit { d, c, .. } => {
                check_c("c", c)?;
                if d == 0 {
                    return Err(invalid("number of submodels d must be >= 1"));
                }
                Ok(())
            }
            MechanismSpec::PartialSplit {
                c_split,
                c_nonsplit,
                d,
                ..
            } => {
                check_c("c_split", c_split)?;
                check_c("c_nonsplit", c_nonsplit)?;
                if d == 0 {
                    return Err(invalid("number of submodels d must be >= 1"));
                }
                Ok(())
            }
            MechanismSpec::Bis { t, k, c, .. } => {
                check_c("c", c)?;
                if k == 0 || k > t {
                    return Err(invalid(format!("need 1 <= k <= T, got k={k}, T={t}")));
                }
                Ok(())
            }
        }
    }

    pub fn sigma(&self) -> f64 {
        match *self {
            MechanismSpec::Gaussian { sigma, .. }
            | MechanismSpec::PoissonGaussian { sigma, .. }
            | MechanismSpec::ModelSplit { sigma, .. }
            | MechanismSpec::MixtureSplit { sigma, .. }
            | MechanismSpec::DropoutSplit { sigma, .. }
            | MechanismSpec::PartialSplit { sigma, .. }
            | MechanismSpec::Bis { sigma, .. } => sigma,
        }
    }

    /// Copy with the noise standard deviation replaced.
    pub fn with_sigma(&self, new_sigma: f64) -> Self {
        let mut out = *self;
        match &mut out {
            MechanismSpec::Gaussian { sigma, .. }
            | MechanismSpec::PoissonGaussian { sigma, .. }
            | MechanismSpec::ModelSplit { sigma, .. }
            | MechanismSpec::MixtureSplit { sigma, .. }
            | MechanismSpec::DropoutSplit { sigma, .. }
            | MechanismSpec::PartialSplit { sigma, .. }
            | MechanismSpec::Bis { sigma, .. } => *sigma = new_sigma,
        }
        out
    }

    /// Largest clipping norm involved; sets the calibration bracket.
    pub fn clip_scale(&self) -> f64 {
        match *self {
            MechanismSpec::Gaussian { c, .. }
            | MechanismSpec::PoissonGaussian { c, .. }
            | MechanismSpec::ModelSplit { c, .. }
            | MechanismSpec::MixtureSplit { c, .. }
            | MechanismSpec::DropoutSplit { c, .. }
            | MechanismSpec::Bis { c, .. } => c,
            MechanismSpec::PartialSplit {
                c_split,
                c_nonsplit,
                ..
            } => c_split.max(c_nonsplit),
        }
    }

    /// Short stable label without commas, e.g. `bis(T=10;k=4)`; noise and clipping are
    /// reported separately.
    pub fn label(&self) -> String {
        match *self {
            MechanismSpec::Gaussian { .. } => "gaussian".to_string(),
            MechanismSpec::PoissonGaussian { gamma, .. } => format!("poisson(gamma={gamma})"),
            MechanismSpec::ModelSplit { d, .. } => format!("model_split(d={d})"),
            MechanismSpec::MixtureSplit { d, .. } => format!("mixture_split(d={d})"),
            MechanismSpec::DropoutSplit { .. } => "dropout_split".to_string(),
            MechanismSpec::PartialSplit {
                c_split,
                c_nonsplit,
                d,
                ..
            } => format!("partial_split(d={d};c_split={c_split};c_nonsplit={c_nonsplit})"),
            MechanismSpec::Bis { t, k, .. } => format!("bis(T={t};k={k})"),
        }
    }
}

/// Which forward term the mixture bounds use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Exact forward divergence wherever affordable.
    #[default]
    Tight,
    /// The O(k) forward bound everywhere.
    Loose,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Tight => "tight",
            Mode::Loose => "loose",
        })
    }
}

/// How a curve value was obtained, from most to least precise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Closed-form RDP of the mechanism.
    Exact,
    /// Mixture bound with the exact forward divergence.
    Tight,
    /// Mixture bound with the forward bound (requested or as a fallback).
    Loose,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Provenance::Exact => "exact",
            Provenance::Tight => "tight",
            Provenance::Loose => "loose",
        })
    }
}

/// RDP ε as a function of the order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpCurve {
    orders: Vec<RenyiOrder>,
    epsilons: Vec<f64>,
    provenance: Vec<Provenance>,
}

impl RdpCurve {
    pub fn new(
        orders: Vec<RenyiOrder>,
        epsilons: Vec<f64>,
        provenance: Vec<Provenance>,
    ) -> Result<Self> {
        if orders.is_empty() {
            return Err(invalid("curve needs at least one order"));
        }
        if orders.len() != epsilons.len() || orders.len() != provenance.len() {
            return Err(invalid("curve orders, epsilons and provenance differ in length"));
        }
        if epsilons.iter().any(|e| !(*e >= 0.0)) {
            return Err(invalid("curve epsilons must be nonnegative"));
        }
        Ok(Self {
            orders,
            epsilons,
            provenance,
        })
    }

    pub fn orders(&self) -> &[RenyiOrder] {
        &self.orders
    }

    pub fn epsilons(&self) -> &[f64] {
        &self.epsilons
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.orders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orders.is_empty()
    }

    pub fn epsilon_at(&self, alpha: RenyiOrder) -> Option<f64> {
        self.orders
            .iter()
            .position(|&a| a == alpha)
            .map(|i| self.epsilons[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (RenyiOrder, f64, Provenance)> + '_ {
        self.orders
            .iter()
            .zip(&self.epsilons)
            .zip(&self.provenance)
            .map(|((&a, &e), &p)| (a, e, p))
    }

    /// `count`-fold composition.
    pub fn scaled(&self, count: u64) -> Self {
        Self {
            orders: self.orders.clone(),
            epsilons: self.epsilons.iter().map(|e| e * count as f64).collect(),
            provenance: self.provenance.clone(),
        }
    }

    fn accumulate(&mut self, other: &RdpCurve, count: u64) {
        debug_assert_eq!(self.orders, other.orders);
        for i in 0..self.orders.len() {
            self.epsilons[i] += count as f64 * other.epsilons[i];
            self.provenance[i] = self.provenance[i].max(other.provenance[i]);
        }
    }
}

/// An `(ε, δ)`-DP guarantee and the order that achieved it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpGuarantee {
    pub epsilon: f64,
    pub delta: f64,
    pub achieving_order: RenyiOrder,
}

/// A sequence of mechanisms with repetition counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionPlan {
    items: Vec<(MechanismSpec, u64)>,
}

impl CompositionPlan {
    pub fn new(items: Vec<(MechanismSpec, u64)>) -> Result<Self> {
        if items.is_empty() {
            return Err(invalid("composition plan is empty"));
        }
        if let Some((spec, _)) = items.iter().find(|(_, n)| *n == 0) {
            return Err(invalid(format!("count for {} must be >= 1", spec.label())));
        }
        for (spec, _) in &items {
            spec.validate()?;
        }
        Ok(Self { items })
    }

    pub fn single(spec: MechanismSpec, count: u64) -> Result<Self> {
        Self::new(vec![(spec, count)])
    }

    pub fn items(&self) -> &[(MechanismSpec, u64)] {
        &self.items
    }
}

/// RDP of the Poisson-subsampled Gaussian mechanism at integer order `α`:
/// `(1/(α-1)) log[(1-γ)^{α-1}(αγ-γ+1) + Σ_{l=2}^{α} C(α,l)(1-γ)^{α-l}γ^l e^{l(l-1)c²/(2σ²)}]`.
pub fn poisson_gaussian_rdp(c: f64, sigma: f64, gamma: f64, alpha: RenyiOrder) -> Result<f64> {
    MechanismSpec::PoissonGaussian { c, sigma, gamma }.validate()?;
    let a = alpha.get() as u64;
    let af = a as f64;
    let half_snr = 0.5 * (c / sigma).powi(2);
    let mut terms = Vec::with_capacity(a as usize);
    // l = 0 and l = 1 folded together
    terms.push(xlog1m(af - 1.0, gamma) + ((af - 1.0) * gamma).ln_1p());
    for l in 2..=a {
        let lf = l as f64;
        terms.push(
            log_binomial(a, l)
                + xlog1m(af - lf, gamma)
                + xlogy(lf, gamma)
                + lf * (lf - 1.0) * half_snr,
        );
    }
    Ok((log_sum_exp(&terms) / (af - 1.0)).max(0.0))
}

fn check_orders(orders: &[RenyiOrder]) -> Result<()> {
    if orders.is_empty() {
        return Err(invalid("order grid is empty"));
    }
    Ok(())
}

fn mixture_curve(family: &MixtureFamily, orders: &[RenyiOrder], mode: Mode) -> (Vec<f64>, Vec<Provenance>) {
    match mode {
        Mode::Loose => (
            orders.iter().map(|&a| epsilon_loose(family, a)).collect(),
            vec![Provenance::Loose; orders.len()],
        ),
        Mode::Tight => epsilon_tight_curve(family, orders)
            .into_iter()
            .map(|t| {
                let p = match t.path {
                    ForwardPath::BoundFallback => Provenance::Loose,
                    ForwardPath::ExactK1 | ForwardPath::Enumeration => Provenance::Tight,
                };
                (t.value, p)
            })
            .unzip(),
    }
}

/// RDP curve of a single application of `spec`.
pub fn rdp_curve(spec: &MechanismSpec, orders: &[RenyiOrder], mode: Mode) -> Result<RdpCurve> {
    spec.validate()?;
    check_orders(orders)?;
    let n = orders.len();
    let (epsilons, provenance) = match *spec {
        MechanismSpec::Gaussian { c, sigma } => (
            orders
                .iter()
                .map(|&a| gaussian_rdp(c, sigma, a))
                .collect::<Result<Vec<_>>>()?,
            vec![Provenance::Exact; n],
        ),
        MechanismSpec::PoissonGaussian { c, sigma, gamma } => (
            orders
                .iter()
                .map(|&a| poisson_gaussian_rdp(c, sigma, gamma, a))
                .collect::<Result<Vec<_>>>()?,
            vec![Provenance::Exact; n],
        ),
        MechanismSpec::ModelSplit { d, c, sigma } | MechanismSpec::MixtureSplit { d, c, sigma } => {
            mixture_curve(&MixtureFamily::new(d, 1, c, sigma)?, orders, mode)
        }
        MechanismSpec::DropoutSplit { c, sigma } => {
            mixture_curve(&MixtureFamily::new(2, 1, c, sigma)?, orders, mode)
        }
        MechanismSpec::PartialSplit {
            c_split,
            c_nonsplit,
            d,
            sigma,
        } => {
            let mut split = rdp_curve(
                &MechanismSpec::ModelSplit {
                    d,
                    c: c_split,
                    sigma,
                },
                orders,
                mode,
            )?;
            let shared = rdp_curve(
                &MechanismSpec::Gaussian {
                    c: c_nonsplit,
                    sigma,
                },
                orders,
                mode,
            )?;
            split.accumulate(&shared, 1);
            return Ok(split);
        }
        MechanismSpec::Bis { t, k, c, sigma } => {
            mixture_curve(&MixtureFamily::new(t, k, c, sigma)?, orders, mode)
        }
    };
    RdpCurve::new(orders.to_vec(), epsilons, provenance)
}

/// Pointwise `Σ count_i · ε_i(α)`.
pub fn compose(plan: &CompositionPlan, orders: &[RenyiOrder], mode: Mode) -> Result<RdpCurve> {
    check_orders(orders)?;
    let mut total = RdpCurve::new(
        orders.to_vec(),
        vec![0.0; orders.len()],
        vec![Provenance::Exact; orders.len()],
    )?;
    for (spec, count) in plan.items() {
        let curve = rdp_curve(spec, orders, mode)?;
        total.accumulate(&curve, *count);
    }
    Ok(total)
}

/// Best `(ε, δ)` guarantee over the curve's orders:
/// `min_α ε(α) + log(1/δ)/(α-1)`, ties going to the smaller order.
pub fn to_dp(curve: &RdpCurve, delta: f64) -> Result<DpGuarantee> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    let log_inv_delta = -delta.ln();
    let mut best: Option<(f64, RenyiOrder)> = None;
    for (alpha, eps, _) in curve.iter() {
        let candidate = eps + log_inv_delta / (alpha.as_f64() - 1.0);
        if best.is_none_or(|(b, _)| candidate < b) {
            best = Some((candidate, alpha));
        }
    }
    let (epsilon, achieving_order) = best.expect("curves are nonempty");
    Ok(DpGuarantee {
        epsilon,
        delta,
        achieving_order,
    })
}

/// Smallest δ achievable on the grid at a given ε:
/// `min_α exp((α-1)(ε(α) - ε))`, clamped to `(0, 1]`.
pub fn to_delta(curve: &RdpCurve, epsilon: f64) -> Result<f64> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(invalid(format!("epsilon must be nonnegative and finite, got {epsilon}")));
    }
    let log_delta = curve
        .iter()
        .map(|(alpha, eps, _)| (alpha.as_f64() - 1.0) * (eps - epsilon))
        .fold(f64::INFINITY, f64::min);
    Ok(log_delta.min(0.0).exp().max(f64::MIN_POSITIVE))
}

/// Outcome of a noise calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub sigma: f64,
    pub achieved: DpGuarantee,
    pub target_epsilon: f64,
    pub iterations: u32,
    pub bracket: (f64, f64),
    pub epsilon_at_bracket: (f64, f64),
}

const CALIBRATION_MAX_ITERATIONS: u32 = 200;
const CALIBRATION_REL_TOL: f64 = 1e-4;

/// Smallest noise σ (to relative tolerance `1e-4` in ε) for which
/// `count` applications of `template` meet `(target_epsilon, delta)`.
///
/// Bisects on `log σ` over `[1e-3·c, 1e3·c]`; the returned σ always
/// satisfies the target.
pub fn calibrate_sigma(
    template: &MechanismSpec,
    count: u64,
    target_epsilon: f64,
    delta: f64,
    orders: &[RenyiOrder],
    mode: Mode,
) -> Result<Calibration> {
    if !(target_epsilon > 0.0) || !target_epsilon.is_finite() {
        return Err(invalid(format!("target epsilon must be positive, got {target_epsilon}")));
    }
    if count == 0 {
        return Err(invalid("count must be >= 1"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    let scale = template.clip_scale();
    if !(scale > 0.0) {
        return Err(invalid("calibration needs a positive clipping norm"));
    }
    let guarantee = |sigma: f64| -> Result<DpGuarantee> {
        let plan = CompositionPlan::single(template.with_sigma(sigma), count)?;
        to_dp(&compose(&plan, orders, mode)?, delta)
    };

    let bracket = (1e-3 * scale, 1e3 * scale);
    let at_lo = guarantee(bracket.0)?;
    let at_hi = guarantee(bracket.1)?;
    if at_hi.epsilon > target_epsilon || at_lo.epsilon <= target_epsilon {
        return Err(Error::Unachievable {
            target: target_epsilon,
            sigma_lo: bracket.0,
            sigma_hi: bracket.1,
            eps_at_lo: at_lo.epsilon,
            eps_at_hi: at_hi.epsilon,
        });
    }

    let (mut lo, mut hi) = bracket;
    let mut best = at_hi;
    let mut iterations = 0;
    while iterations < CALIBRATION_MAX_ITERATIONS {
        iterations += 1;
        let mid = (lo * hi).sqrt();
        let g = guarantee(mid)?;
        if g.epsilon > target_epsilon {
            lo = mid;
        } else {
            hi = mid;
            best = g;
            if target_epsilon - g.epsilon <= CALIBRATION_REL_TOL * target_epsilon {
                break;
            }
        }
    }
    Ok(Calibration {
        sigma: hi,
        achieved: best,
        target_epsilon,
        iterations,
        bracket,
        epsilon_at_bracket: (at_lo.epsilon, at_hi.epsilon),
    })
}

/// `n_epochs`-fold composition of one balanced-iteration-subsampling epoch.
pub fn bis_epoch_composition(
    t_epoch: u64,
    k_epoch: u64,
    n_epochs: u64,
    c: f64,
    sigma: f64,
    orders: &[RenyiOrder],
    mode: Mode,
) -> Result<RdpCurve> {
    let spec = MechanismSpec::Bis {
        t: t_epoch,
        k: k_epoch,
        c,
        sigma,
    };
    compose(&CompositionPlan::single(spec, n_epochs)?, orders, mode)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub alpha: RenyiOrder,
    pub bis_tight: f64,
    pub bis_loose: f64,
    /// `T`-fold composition of Poisson subsampling at `γ = k/T`.
    pub poisson: f64,
    pub tight_provenance: Provenance,
}

/// Balanced iteration subsampling against Poisson subsampling with the
/// same expected participation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BisPoissonComparison {
    pub t: u64,
    pub k: u64,
    pub c: f64,
    pub sigma: f64,
    pub rows: Vec<ComparisonRow>,
    pub tight_never_worse: bool,
    pub loose_never_worse: bool,
    /// `max_α |ε_BIS - ε_Poisson| / ε_Poisson`
    pub max_rel_gap_tight: f64,
    pub max_rel_gap_loose: f64,
}

pub fn compare_bis_poisson(
    t: u64,
    k: u64,
    c: f64,
    sigma: f64,
    orders: &[RenyiOrder],
) -> Result<BisPoissonComparison> {
    let bis = MechanismSpec::Bis { t, k, c, sigma };
    bis.validate()?;
    let tight = rdp_curve(&bis, orders, Mode::Tight)?;
    let loose = rdp_curve(&bis, orders, Mode::Loose)?;
    let gamma = k as f64 / t as f64;
    let poisson = rdp_curve(&MechanismSpec::PoissonGaussian { c, sigma, gamma }, orders, Mode::Tight)?
        .scaled(t);

    let rows: Vec<ComparisonRow> = orders
        .iter()
        .enumerate()
        .map(|(i, &alpha)| ComparisonRow {
            alpha,
            bis_tight: tight.epsilons()[i],
            bis_loose: loose.epsilons()[i],
            poisson: poisson.epsilons()[i],
            tight_provenance: tight.provenance()[i],
        })
        .collect();
    let rel_gap = |x: f64, p: f64| if p > 0.0 { (x - p).abs() / p } else { (x - p).abs() };
    Ok(BisPoissonComparison {
        t,
        k,
        c,
        sigma,
        tight_never_worse: rows.iter().all(|r| r.bis_tight <= r.poisson),
        loose_never_worse: rows.iter().all(|r| r.bis_loose <= r.poisson),
        max_rel_gap_tight: rows
            .iter()
            .map(|r| rel_gap(r.bis_tight, r.poisson))
            .fold(0.0, f64::max),
        max_rel_gap_loose: rows
            .iter()
            .map(|r| rel_gap(r.bis_loose, r.poisson))
            .fold(0.0, f64::max),
        rows,
    })
}
