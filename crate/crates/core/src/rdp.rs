//! Rényi divergences between a uniform Gaussian mixture over scaled binary
//! vectors and a centered Gaussian.
//!
//! The mixture `P` places equal weight on `N(c·μ, σ²I)` for every
//! `μ ∈ {0,1}^d` with exactly `k` ones, and `Q = N(0, σ²I)`. The privacy
//! cost of model splitting (k = 1, d submodels) and of balanced iteration
//! subsampling (d = T iterations, k participations) is
//! `max(D_α(P‖Q), D_α(Q‖P))`, which this module bounds in two ways:
//!
//! * the *tight* bound uses the exact forward divergence (tuple enumeration,
//!   or a multinomial regrouping when k = 1) together with the reverse bound;
//! * the *loose* bound replaces the forward term with a hypergeometric
//!   moment generating function that costs O(k) per order.
//!
//! Every sum of exponentials is evaluated in log domain.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::{log_binomial, log_factorial, log_sum_exp, LogSumExp};

/// Largest number of `α`-tuples the exact enumeration will visit.
pub const ENUMERATION_LIMIT: f64 = 1e7;

/// Integral Rényi order, at least 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct RenyiOrder(u32);

impl RenyiOrder {
    pub fn new(alpha: u32) -> Result<Self> {
        if alpha < 2 {
            return Err(invalid(format!("Renyi order must be >= 2, got {alpha}")));
        }
        Ok(Self(alpha))
    }

    /// Accepts a real order only if it is an integer >= 2. Non-integral
    /// orders are rejected, never interpolated.
    pub fn from_f64(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha.fract() != 0.0 || alpha > u32::MAX as f64 {
            return Err(invalid(format!("Renyi order must be an integer, got {alpha}")));
        }
        Self::new(alpha as u32)
    }

    pub fn get(self) -> u32 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }

    /// The orders `2..=max`.
    pub fn range(max: u32) -> Result<Vec<RenyiOrder>> {
        if max < 2 {
            return Err(invalid(format!("maximum order must be >= 2, got {max}")));
        }
        Ok((2..=max).map(RenyiOrder).collect())
    }
}

impl TryFrom<u32> for RenyiOrder {
    type Error = Error;

    fn try_from(value: u32) -> Result<Self> {
        Self::new(value)
    }
}

impl From<RenyiOrder> for u32 {
    fn from(value: RenyiOrder) -> u32 {
        value.0
    }
}

impl std::fmt::Display for RenyiOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// The `(d, k, c, σ)` family: `P` uniform over `c·S_{d,k}`, `Q = N(0, σ²I_d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureFamily {
    d: u64,
    k: u64,
    c: f64,
    sigma: f64,
}

impl MixtureFamily {
    pub fn new(d: u64, k: u64, c: f64, sigma: f64) -> Result<Self> {
        if d == 0 {
            return Err(invalid("dimension d must be >= 1"));
        }
        if k == 0 || k > d {
            return Err(invalid(format!("need 1 <= k <= d, got k={k}, d={d}")));
        }
        check_scale(c, sigma)?;
        Ok(Self { d, k, c, sigma })
    }

    pub fn d(&self) -> u64 {
        self.d
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `log C(d, k)`, the log of the number of mixture components.
    pub fn log_components(&self) -> f64 {
        log_binomial(self.d, self.k)
    }

    /// `c²/(2σ²)`.
    fn half_snr(&self) -> f64 {
        half_snr(self.c, self.sigma)
    }

    /// The explicit mixture. Only sensible for small `C(d, k)`.
    pub fn to_mixture(&self) -> Result<GenericMixture> {
        let n = self.log_components().exp();
        if n > ENUMERATION_LIMIT {
            return Err(invalid(format!(
                "C({}, {}) = {n:.3e} components is too many to materialize",
                self.d, self.k
            )));
        }
        let centers = binary_vectors(self.d as usize, self.k as usize)
            .into_iter()
            .map(|v| v.into_iter().map(|b| b * self.c).collect())
            .collect();
        GenericMixture::uniform(centers, self.sigma)
    }
}

fn check_scale(c: f64, sigma: f64) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(invalid(format!("sigma must be positive and finite, got {sigma}")));
    }
    if !(c >= 0.0) || !c.is_finite() {
        return Err(invalid(format!("c must be nonnegative and finite, got {c}")));
    }
    Ok(())
}

fn half_snr(c: f64, sigma: f64) -> f64 {
    let r = c / sigma;
    0.5 * r * r
}

/// All length-`d` 0/1 vectors with exactly `k` ones, in lexicographic order
/// of the positions of the ones.
pub fn binary_vectors(d: usize, k: usize) -> Vec<Vec<f64>> {
    fn go(start: usize, d: usize, left: usize, cur: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for i in start..=(d - left) {
            cur[i] = 1.0;
            go(i + 1, d, left - 1, cur, out);
            cur[i] = 0.0;
        }
    }
    let mut out = Vec::new();
    let mut cur = vec![0.0; d];
    if k <= d {
        go(0, d, k, &mut cur, &mut out);
    }
    out
}

/// A Gaussian mixture with arbitrary centers and weights and a shared
/// isotropic standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenericMixture {
    centers: Vec<Vec<f64>>,
    weights: Vec<f64>,
    sigma: f64,
}

impl GenericMixture {
    pub fn new(centers: Vec<Vec<f64>>, weights: Vec<f64>, sigma: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(invalid("mixture needs at least one center"));
        }
        if centers.len() != weights.len() {
            return Err(invalid(format!(
                "{} centers but {} weights",
                centers.len(),
                weights.len()
            )));
        }
        let dim = centers[0].len();
        if dim == 0 || centers.iter().any(|c| c.len() != dim) {
            return Err(invalid("all centers must share one positive dimension"));
        }
        if centers.iter().flatten().any(|x| !x.is_finite()) {
            return Err(invalid("centers must be finite"));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(invalid("weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("weights sum to {total}, not 1")));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(invalid(format!("sigma must be positive and finite, got {sigma}")));
        }
        Ok(Self {
            centers,
            weights,
            sigma,
        })
    }

    pub fn uniform(centers: Vec<Vec<f64>>, sigma: f64) -> Result<Self> {
        let n = centers.len().max(1);
        let weights = vec![1.0 / n as f64; centers.len()];
        Self::new(centers, weights, sigma)
    }

    /// A single Gaussian `N(center, σ²I)`.
    pub fn gaussian(center: Vec<f64>, sigma: f64) -> Result<Self> {
        Self::new(vec![center], vec![1.0], sigma)
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Weighted mean of the centers.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for (c, &w) in self.centers.iter().zip(&self.weights) {
            for (mi, ci) in m.iter_mut().zip(c) {
                *mi += w * ci;
            }
        }
        m
    }

    /// Same mixture with every center padded by `extra` trailing zeros.
    pub fn embed(&self, extra: usize) -> Self {
        let centers = self
            .centers
            .iter()
            .map(|c| {
                let mut v = c.clone();
                v.extend(std::iter::repeat_n(0.0, extra));
                v
            })
            .collect();
        Self {
            centers,
            weights: self.weights.clone(),
            sigma: self.sigma,
        }
    }

    /// Log density at `x`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let inv = 1.0 / (2.0 * self.sigma * self.sigma);
        let norm = -0.5 * self.dim() as f64 * (2.0 * std::f64::consts::PI * self.sigma * self.sigma).ln();
        let mut acc = LogSumExp::new();
        for (c, &w) in self.centers.iter().zip(&self.weights) {
            if w == 0.0 {
                continue;
            }
            let sq: f64 = c.iter().zip(x).map(|(ci, xi)| (xi - ci) * (xi - ci)).sum();
            acc.push(w.ln() - sq * inv);
        }
        acc.value() + norm
    }
}

/// RDP of the Gaussian mechanism with sensitivity `c`: `αc²/(2σ²)`.
pub fn gaussian_rdp(c: f64, sigma: f64, alpha: RenyiOrder) -> Result<f64> {
    check_scale(c, sigma)?;
    Ok(alpha.as_f64() * c * c / (2.0 * sigma * sigma))
}

/// `log P(L = l)` for the overlap `L = μᵀμ'` of two independent uniform
/// members of `S_{d,k}` (hypergeometric), as `(l, log-pmf)` pairs.
fn overlap_log_pmf(d: u64, k: u64) -> Vec<(u64, f64)> {
    let lo = (2 * k).saturating_sub(d);
    let norm = log_binomial(d, k);
    (lo..=k)
        .map(|l| (l, log_binomial(k, l) + log_binomial(d - k, k - l) - norm))
        .collect()
}

fn forward_bound_from_pmf(pmf: &[(u64, f64)], half_snr: f64, alpha: RenyiOrder) -> f64 {
    let slope = alpha.as_f64() * half_snr;
    let terms: Vec<f64> = pmf.iter().map(|&(l, lp)| lp + slope * l as f64).collect();
    log_sum_exp(&terms).max(0.0)
}

/// Efficient upper bound on the forward divergence `D_α(P‖Q)`:
/// `log E[exp(αc²L/(2σ²))]` with `L` the hypergeometric overlap of two
/// random members of `S_{d,k}`.
pub fn forward_bound(f: &MixtureFamily, alpha: RenyiOrder) -> f64 {
    if f.k == 1 {
        // log((exp(αc²/(2σ²)) + d - 1) / d)
        let x = alpha.as_f64() * f.half_snr();
        let d = f.d as f64;
        return (log_sum_exp(&[x, (d - 1.0).ln()]) - d.ln()).max(0.0);
    }
    forward_bound_from_pmf(&overlap_log_pmf(f.d, f.k), f.half_snr(), alpha)
}

/// [`forward_bound`] for many orders, sharing the overlap distribution.
pub fn forward_bound_curve(f: &MixtureFamily, orders: &[RenyiOrder]) -> Vec<f64> {
    if f.k == 1 {
        return orders.iter().map(|&a| forward_bound(f, a)).collect();
    }
    let pmf = overlap_log_pmf(f.d, f.k);
    orders
        .iter()
        .map(|&a| forward_bound_from_pmf(&pmf, f.half_snr(), a))
        .collect()
}

/// Upper bound on the reverse divergence `D_α(Q‖P)`:
/// the shift from `Q` to the mixture mean plus a same-mean Gaussian bound
/// on the remaining mixture spread.
pub fn reverse_bound(f: &MixtureFamily, alpha: RenyiOrder) -> f64 {
    let a = alpha.as_f64();
    let (d, k) = (f.d as f64, f.k as f64);
    let r2 = (f.c / f.sigma).powi(2);
    let shift = a * r2 * k * k / (2.0 * d);
    // x = c²k(d-k)/(σ²d²); the inner base α·eˣ + 1 - α is 1 + α·(eˣ - 1).
    let x = r2 * k * (d - k) / (d * d);
    let base_minus_one = a * x.exp_m1();
    assert!(
        base_minus_one >= 0.0,
        "reverse bound base below 1 (alpha={a}, x={x})"
    );
    let spread = (a * d * x - d * base_minus_one.ln_1p()) / (2.0 * (a - 1.0));
    (shift + spread.max(0.0)).max(0.0)
}

/// Exact forward divergence `D_α(m‖N(0, σ²I))` by summing over all
/// `n^α` index tuples:
/// `(1/(α-1)) log Σ_I (Π ν_{I_i}) exp((1/(2σ²)) Σ_{i≠j} μ_{I_i}ᵀμ_{I_j})`.
pub fn forward_exact_enum(m: &GenericMixture, alpha: RenyiOrder) -> Result<f64> {
    let n = m.len();
    let order = alpha.get();
    let tuples = (n as f64).powi(order as i32);
    if tuples > ENUMERATION_LIMIT {
        return Err(Error::CostLimit {
            centers: n,
            order,
            tuples,
            limit: ENUMERATION_LIMIT,
        });
    }
    let s2 = m.sigma * m.sigma;
    // Each unordered pair appears twice in the ordered sum.
    let gram: Vec<Vec<f64>> = m
        .centers
        .iter()
        .map(|u| {
            m.centers
                .iter()
                .map(|v| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / s2)
                .collect()
        })
        .collect();
    let log_w: Vec<f64> = m.weights.iter().map(|w| w.ln()).collect();
    let active: Vec<usize> = (0..n).filter(|&i| m.weights[i] > 0.0).collect();

    // acc[p][j] = Σ_{q<p} gram[I_q][j]
    let depth = order as usize;
    let mut acc = vec![vec![0.0; n]; depth];
    let mut lse = LogSumExp::new();

    #[allow(clippy::too_many_arguments)]
    fn visit(
        p: usize,
        depth: usize,
        exponent: f64,
        log_weight: f64,
        gram: &[Vec<f64>],
        log_w: &[f64],
        active: &[usize],
        acc: &mut [Vec<f64>],
        lse: &mut LogSumExp,
    ) {
        for &i in active {
            let e = exponent + acc[p][i];
            let w = log_weight + log_w[i];
            if p + 1 == depth {
                lse.push(e + w);
            } else {
                let (head, tail) = acc.split_at_mut(p + 1);
                for ((next, cur), g) in tail[0].iter_mut().zip(&head[p]).zip(&gram[i]) {
                    *next = cur + g;
                }
                visit(p + 1, depth, e, w, gram, log_w, active, acc, lse);
            }
        }
    }

    visit(0, depth, 0.0, 0.0, &gram, &log_w, &active, &mut acc, &mut lse);
    Ok((lse.value() / (alpha.as_f64() - 1.0)).max(0.0))
}

/// Log-domain product of two power series truncated at degree `max`.
fn log_series_mul(p: &[f64], q: &[f64], max: usize) -> Vec<f64> {
    let mut out = vec![f64::NEG_INFINITY; max + 1];
    let mut terms = Vec::with_capacity(max + 1);
    for (n, slot) in out.iter_mut().enumerate() {
        terms.clear();
        for j in 0..=n {
            let (a, b) = (p[j], q[n - j]);
            if a > f64::NEG_INFINITY && b > f64::NEG_INFINITY {
                terms.push(a + b);
            }
        }
        *slot = log_sum_exp(&terms);
    }
    out
}

/// Exact forward divergence for `k = 1` at every order `2..=max_order`.
///
/// Element `i` of the result is the divergence at order `i + 2`.
///
/// The tuple sum depends only on the multiplicity profile of the tuple, so
/// it equals `α! [z^α] f(z)^d / d^α` with
/// `f(z) = Σ_m z^m exp((c²/(2σ²)) m(m-1)) / m!`. The power is taken by
/// repeated squaring on log-domain coefficients.
pub fn forward_exact_k1_curve(d: u64, c: f64, sigma: f64, max_order: u32) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(invalid("dimension d must be >= 1"));
    }
    check_scale(c, sigma)?;
    if max_order < 2 {
        return Err(invalid(format!("maximum order must be >= 2, got {max_order}")));
    }
    let max = max_order as usize;
    let a = half_snr(c, sigma);
    let base: Vec<f64> = (0..=max)
        .map(|m| {
            let m = m as f64;
            a * m * (m - 1.0) - log_factorial(m as u64)
        })
        .collect();

    let mut result: Option<Vec<f64>> = None;
    let mut power = base;
    let mut e = d;
    loop {
        if e & 1 == 1 {
            result = Some(match result {
                None => power.clone(),
                Some(r) => log_series_mul(&r, &power, max),
            });
        }
        e >>= 1;
        if e == 0 {
            break;
        }
        power = log_series_mul(&power, &power, max);
    }
    let coeffs = result.expect("d >= 1");
    let log_d = (d as f64).ln();
    Ok((2..=max)
        .map(|alpha| {
            let af = alpha as f64;
            ((log_factorial(alpha as u64) + coeffs[alpha] - af * log_d) / (af - 1.0)).max(0.0)
        })
        .collect())
}

/// Exact forward divergence of the `S_{d,1}` family at a single order.
pub fn forward_exact_k1(d: u64, c: f64, sigma: f64, alpha: RenyiOrder) -> Result<f64> {
    let curve = forward_exact_k1_curve(d, c, sigma, alpha.get())?;
    Ok(*curve.last().expect("nonempty curve"))
}

/// `max(forward_bound, reverse_bound)`.
pub fn epsilon_loose(f: &MixtureFamily, alpha: RenyiOrder) -> f64 {
    forward_bound(f, alpha).max(reverse_bound(f, alpha))
}

/// Which computation supplied the forward term of a tight bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardPath {
    /// Multinomial regrouping, k = 1.
    ExactK1,
    /// Tuple enumeration over the explicit mixture.
    Enumeration,
    /// Enumeration too expensive; the loose forward bound was used.
    BoundFallback,
}

impl ForwardPath {
    pub fn is_degraded(self) -> bool {
        self == ForwardPath::BoundFallback
    }
}

/// Tight bound at one order together with its components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TightEpsilon {
    pub value: f64,
    pub forward: f64,
    pub reverse: f64,
    pub path: ForwardPath,
}

fn enumeration_feasible(f: &MixtureFamily, alpha: RenyiOrder) -> bool {
    alpha.as_f64() * f.log_components() <= ENUMERATION_LIMIT.ln() + 1e-9
        && f.log_components().exp().powi(alpha.get() as i32) <= ENUMERATION_LIMIT
}

fn assemble(forward: f64, bound: f64, reverse: f64, path: ForwardPath) -> TightEpsilon {
    // The exact forward term can exceed the bound only by rounding.
    TightEpsilon {
        value: forward.min(bound).max(reverse),
        forward,
        reverse,
        path,
    }
}

/// Tight bound at one order. Never fails: when no exact forward path is
/// affordable it falls back to the loose forward bound and says so.
pub fn epsilon_tight(f: &MixtureFamily, alpha: RenyiOrder) -> TightEpsilon {
    epsilon_tight_curve(f, &[alpha])
        .pop()
        .expect("one order in, one value out")
}

/// [`epsilon_tight`] for many orders, sharing work across them.
pub fn epsilon_tight_curve(f: &MixtureFamily, orders: &[RenyiOrder]) -> Vec<TightEpsilon> {
    let bounds = forward_bound_curve(f, orders);
    let reverse: Vec<f64> = orders.iter().map(|&a| reverse_bound(f, a)).collect();

    if f.k == 1 {
        let max = orders.iter().map(|a| a.get()).max().unwrap_or(2);
        let exact = forward_exact_k1_curve(f.d, f.c, f.sigma, max)
            .expect("family parameters already validated");
        return orders
            .iter()
            .zip(bounds.iter().zip(&reverse))
            .map(|(a, (&b, &r))| assemble(exact[a.get() as usize - 2], b, r, ForwardPath::ExactK1))
            .collect();
    }

    let mut mixture: Option<GenericMixture> = None;
    orders
        .iter()
        .zip(bounds.iter().zip(&reverse))
        .map(|(&a, (&b, &r))| {
            if enumeration_feasible(f, a) {
                let m = mixture.get_or_insert_with(|| {
                    f.to_mixture().expect("feasible enumeration implies small mixture")
                });
                match forward_exact_enum(m, a) {
                    Ok(exact) => return assemble(exact, b, r, ForwardPath::Enumeration),
                    Err(Error::CostLimit { .. }) => {}
                    Err(e) => panic!("unexpected enumeration failure: {e}"),
                }
            }
            assemble(b, b, r, ForwardPath::BoundFallback)
        })
        .collect()
}

/// `D_α(N(0, σ_num²I_dim) ‖ N(0, σ_den²I_dim))`.
///
/// Defined only while `α σ_den² + (1 - α) σ_num² > 0`; beyond that the
/// integral diverges.
pub fn gaussian_rdp_same_mean(
    sigma_num: f64,
    sigma_den: f64,
    dim: u64,
    alpha: RenyiOrder,
) -> Result<f64> {
    for (name, s) in [("sigma_num", sigma_num), ("sigma_den", sigma_den)] {
        if !(s > 0.0) || !s.is_finite() {
            return Err(invalid(format!("{name} must be positive and finite, got {s}")));
        }
    }
    if dim == 0 {
        return Err(invalid("dimension must be >= 1"));
    }
    let a = alpha.as_f64();
    let (vn, vd) = (sigma_num * sigma_num, sigma_den * sigma_den);
    let mixed = a * vd + (1.0 - a) * vn;
    if !(mixed > 0.0) {
        return Err(Error::DivergenceUndefined {
            order: alpha.get(),
            reason: format!(
                "alpha*sigma_den^2 + (1-alpha)*sigma_num^2 = {mixed} is not positive"
            ),
        });
    }
    let per_dim = (1.0 - a) * vn.ln() + a * vd.ln() - mixed.ln();
    Ok((dim as f64 * per_dim / (2.0 * (a - 1.0))).max(0.0))
}
