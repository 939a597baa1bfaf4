//! Brute-force Rényi divergences between explicit Gaussian mixtures.
//!
//! Two independent estimators of
//! `D_α(num‖den) = (1/(α-1)) log ∫ num^α den^{1-α}`:
//! a trapezoid rule on a regular grid for dimension ≤ 2 (or 3 on request)
//! and importance-sampled Monte-Carlo up to dimension 6. Both accumulate
//! the integrand in the log domain. On top of them sit the sandwich check
//! for the mixture bounds and two identity checks.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::LogSumExp;
use crate::rdp::{
    epsilon_loose, epsilon_tight, forward_bound, reverse_bound, GenericMixture, MixtureFamily,
    RenyiOrder,
};
use crate::rng::{self, Domain};

/// Largest dimension accepted by [`mc_renyi`].
pub const MC_MAX_DIM: usize = 6;
/// Samples per parallel Monte-Carlo chunk; each chunk owns one RNG stream.
pub const MC_CHUNK: usize = 65_536;
/// Relative standard error of the mean weight above which an estimate is
/// flagged low-confidence.
pub const LOW_CONFIDENCE_REL_STDERR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureSpec {
    /// Box half-width past the farthest relevant point, in units of σ.
    pub truncation_radius_sigmas: f64,
    pub points_per_sigma: u32,
    pub max_dim_grid: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            truncation_radius_sigmas: 12.0,
            points_per_sigma: 20,
            max_dim_grid: 2,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.truncation_radius_sigmas >= 8.0) || !self.truncation_radius_sigmas.is_finite() {
            return Err(invalid(format!(
                "truncation radius must be >= 8 sigma, got {}",
                self.truncation_radius_sigmas
            )));
        }
        if self.points_per_sigma < 10 {
            return Err(invalid(format!(
                "points_per_sigma must be >= 10, got {}",
                self.points_per_sigma
            )));
        }
        if self.max_dim_grid == 0 {
            return Err(invalid("max_dim_grid must be >= 1"));
        }
        Ok(())
    }
}

/// Importance-sampling proposal for [`mc_renyi`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Proposal {
    /// Sample from the denominator distribution.
    Denominator,
    /// Sample from the numerator distribution.
    Numerator,
    /// Equal-weight mixture of widened Gaussians placed on the points
    /// `b + t(a - b)`, `t = 0..=α`, for numerator centers `a` and
    /// denominator centers (and mean) `b`: the modes of `num^α den^{1-α}`.
    #[default]
    Tilted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSpec {
    pub n_samples: u64,
    pub seed: u64,
    pub proposal: Proposal,
}

impl Default for McSpec {
    fn default() -> Self {
        Self {
            n_samples: 10_000_000,
            seed: 0,
            proposal: Proposal::Tilted,
        }
    }
}

impl McSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 100_000 {
            return Err(invalid(format!(
                "n_samples must be >= 1e5, got {}",
                self.n_samples
            )));
        }
        Ok(())
    }
}

/// Estimator settings used by the verification routines.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub quadrature: QuadratureSpec,
    pub monte_carlo: McSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Quadrature,
    MonteCarlo,
}

/// A numerical divergence value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    /// Zero for quadrature.
    pub stderr: f64,
    /// Relative standard error of the mean importance weight.
    pub relative_stderr: f64,
    pub low_confidence: bool,
    pub method: Method,
}

impl Estimate {
    /// `max(floor, 3·stderr)`.
    pub fn tolerance(&self, floor: f64) -> f64 {
        floor.max(3.0 * self.stderr)
    }
}

fn check_pair(num: &GenericMixture, den: &GenericMixture) -> Result<()> {
    if num.dim() != den.dim() {
        return Err(invalid(format!(
            "dimension mismatch: numerator {} vs denominator {}",
            num.dim(),
            den.dim()
        )));
    }
    Ok(())
}

/// Width of the Gaussian `N(·,σn²)^α N(·,σd²)^{1-α}`, or an error when the
/// integral diverges.
fn integrand_sigma(num: &GenericMixture, den: &GenericMixture, alpha: RenyiOrder) -> Result<f64> {
    let a = alpha.as_f64();
    let precision = a / num.sigma().powi(2) + (1.0 - a) / den.sigma().powi(2);
    if !(precision > 0.0) {
        return Err(Error::DivergenceUndefined {
            order: alpha.get(),
            reason: "numerator is too wide relative to the denominator".to_string(),
        });
    }
    Ok(precision.sqrt().recip())
}

/// Modes of `num^α den^{1-α}` when both are sums of equal-width Gaussians.
fn tilt_points(num: &GenericMixture, den: &GenericMixture, alpha: RenyiOrder) -> Vec<Vec<f64>> {
    let mut bases: Vec<Vec<f64>> = den.centers().to_vec();
    bases.push(den.mean());
    let mut out: Vec<Vec<f64>> = Vec::new();
    for a in num.centers() {
        for b in &bases {
            for t in 0..=alpha.get() {
                let t = t as f64;
                let p: Vec<f64> = b.iter().zip(a).map(|(bi, ai)| bi + t * (ai - bi)).collect();
                if !out.contains(&p) {
                    out.push(p);
                }
            }
        }
    }
    out
}

fn log_integrand(num: &GenericMixture, den: &GenericMixture, a: f64, x: &[f64]) -> f64 {
    a * num.log_density(x) + (1.0 - a) * den.log_density(x)
}

/// Trapezoid-rule `D_α(num‖den)` on a regular grid.
///
/// The box spans every center and every mode of the integrand, padded by
/// `truncation_radius_sigmas` widths. Rows along the first axis are
/// summed in parallel and merged in a fixed order.
pub fn quad_renyi(
    num: &GenericMixture,
    den: &GenericMixture,
    alpha: RenyiOrder,
    spec: &QuadratureSpec,
) -> Result<Estimate> {
    spec.validate()?;
    check_pair(num, den)?;
    let dim = num.dim();
    if dim > spec.max_dim_grid {
        return Err(Error::DimensionTooLarge {
            dim,
            limit: spec.max_dim_grid,
        });
    }
    let width = num
        .sigma()
        .max(den.sigma())
        .max(integrand_sigma(num, den, alpha)?);
    let h = width / spec.points_per_sigma as f64;
    let pad = spec.truncation_radius_sigmas * width;

    let points = tilt_points(num, den, alpha);
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for p in points.iter().chain(num.centers()).chain(den.centers()) {
        for i in 0..dim {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    let counts: Vec<usize> = (0..dim)
        .map(|i| ((hi[i] - lo[i] + 2.0 * pad) / h).ceil() as usize + 1)
        .collect();
    let starts: Vec<f64> = lo.iter().map(|l| l - pad).collect();
    let a = alpha.as_f64();
    let log_edge = 0.5f64.ln();

    let rows: Vec<LogSumExp> = (0..counts[0])
        .into_par_iter()
        .map(|i0| {
            let mut acc = LogSumExp::new();
            let mut idx = vec![0usize; dim];
            idx[0] = i0;
            let mut x = vec![0.0; dim];
            loop {
                let mut log_w = 0.0;
                for j in 0..dim {
                    x[j] = starts[j] + idx[j] as f64 * h;
                    if idx[j] == 0 || idx[j] + 1 == counts[j] {
                        log_w += log_edge;
                    }
                }
                acc.push(log_w + log_integrand(num, den, a, &x));
                // odometer over axes 1..dim
                let mut j = 1;
                while j < dim {
                    idx[j] += 1;
                    if idx[j] < counts[j] {
                        break;
                    }
                    idx[j] = 0;
                    j += 1;
                }
                if j == dim {
                    break;
                }
            }
            acc
        })
        .collect();
    let mut total = LogSumExp::new();
    for r in &rows {
        total.merge(r);
    }
    let log_integral = total.value() + dim as f64 * h.ln();
    Ok(Estimate {
        value: (log_integral / (a - 1.0)).max(0.0),
        stderr: 0.0,
        relative_stderr: 0.0,
        low_confidence: false,
        method: Method::Quadrature,
    })
}

/// Mixture log density with log weights and the normalizer precomputed.
struct Kernel {
    dim: usize,
    centers: Vec<f64>,
    log_weights: Vec<f64>,
    inv_two_var: f64,
    log_norm: f64,
}

impl Kernel {
    fn new(m: &GenericMixture) -> Self {
        let (centers, log_weights): (Vec<&Vec<f64>>, Vec<f64>) = m
            .centers()
            .iter()
            .zip(m.weights())
            .filter(|(_, &w)| w > 0.0)
            .map(|(c, &w)| (c, w.ln()))
            .unzip();
        let var = m.sigma() * m.sigma();
        Self {
            dim: m.dim(),
            centers: centers.into_iter().flatten().copied().collect(),
            log_weights,
            inv_two_var: 0.5 / var,
            log_norm: -0.5 * m.dim() as f64 * (2.0 * std::f64::consts::PI * var).ln(),
        }
    }

    /// Two passes, max then sum, so each component costs one `exp`.
    fn log_density(&self, x: &[f64], scratch: &mut Vec<f64>) -> f64 {
        scratch.clear();
        let mut max = f64::NEG_INFINITY;
        for (c, lw) in self.centers.chunks_exact(self.dim).zip(&self.log_weights) {
            let sq: f64 = c.iter().zip(x).map(|(ci, xi)| (xi - ci) * (xi - ci)).sum();
            let e = lw - sq * self.inv_two_var;
            max = max.max(e);
            scratch.push(e);
        }
        let sum: f64 = scratch.iter().map(|e| (e - max).exp()).sum();
        max + sum.ln() + self.log_norm
    }
}

/// A sampler for a Gaussian mixture with a common width.
struct Sampler {
    means: Vec<Vec<f64>>,
    cumulative: Vec<f64>,
    sigma: f64,
    kernel: Kernel,
}

impl Sampler {
    fn from_mixture(m: &GenericMixture) -> Self {
        let mut acc = 0.0;
        let cumulative = m
            .weights()
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Self {
            means: m.centers().to_vec(),
            cumulative,
            sigma: m.sigma(),
            kernel: Kernel::new(m),
        }
    }

    fn tilted(num: &GenericMixture, den: &GenericMixture, alpha: RenyiOrder) -> Result<Self> {
        // widened by √2 so the weight num^α den^{1-α}/q stays bounded
        let sigma = std::f64::consts::SQRT_2
            * num
                .sigma()
                .max(den.sigma())
                .max(integrand_sigma(num, den, alpha)?);
        let mixture = GenericMixture::uniform(tilt_points(num, den, alpha), sigma)?;
        Ok(Self::from_mixture(&mixture))
    }

    fn sample(&self, rng: &mut impl Rng, x: &mut [f64]) {
        let u: f64 = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
        let c = self
            .cumulative
            .partition_point(|&p| p <= u)
            .min(self.means.len() - 1);
        for (xi, m) in x.iter_mut().zip(&self.means[c]) {
            let z: f64 = rng.sample(StandardNormal);
            *xi = m + self.sigma * z;
        }
    }

}

/// Importance-sampled `D_α(num‖den)` with a delta-method standard error.
///
/// With proposal `q`, the estimate is `(1/(α-1)) log mean(w)` for weights
/// `w = num^α den^{1-α} / q`. Samples are drawn in chunks of [`MC_CHUNK`],
/// chunk `i` from its own stream, and merged in chunk order, so results do
/// not depend on the thread count.
pub fn mc_renyi(
    num: &GenericMixture,
    den: &GenericMixture,
    alpha: RenyiOrder,
    spec: &McSpec,
) -> Result<Estimate> {
    spec.validate()?;
    check_pair(num, den)?;
    let dim = num.dim();
    if dim > MC_MAX_DIM {
        return Err(invalid(format!(
            "Monte-Carlo estimation is limited to dimension {MC_MAX_DIM}, got {dim}"
        )));
    }
    integrand_sigma(num, den, alpha)?;
    let sampler = match spec.proposal {
        Proposal::Denominator => Sampler::from_mixture(den),
        Proposal::Numerator => Sampler::from_mixture(num),
        Proposal::Tilted => Sampler::tilted(num, den, alpha)?,
    };
    let a = alpha.as_f64();
    let n = spec.n_samples as usize;
    let n_chunks = n.div_ceil(MC_CHUNK);
    let (num_k, den_k) = (Kernel::new(num), Kernel::new(den));

    let chunks: Vec<(LogSumExp, LogSumExp)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::stream(spec.seed, Domain::MonteCarlo, c as u32, 0);
            let len = MC_CHUNK.min(n - c * MC_CHUNK);
            let mut x = vec![0.0; dim];
            let mut scratch = Vec::new();
            let (mut s1, mut s2) = (LogSumExp::new(), LogSumExp::new());
            for _ in 0..len {
                sampler.sample(&mut rng, &mut x);
                let lw = a * num_k.log_density(&x, &mut scratch)
                    + (1.0 - a) * den_k.log_density(&x, &mut scratch)
                    - sampler.kernel.log_density(&x, &mut scratch);
                s1.push(lw);
                s2.push(2.0 * lw);
            }
            (s1, s2)
        })
        .collect();
    let (mut s1, mut s2) = (LogSumExp::new(), LogSumExp::new());
    for (c1, c2) in &chunks {
        s1.merge(c1);
        s2.merge(c2);
    }

    let nf = n as f64;
    let log_mean = s1.value() - nf.ln();
    // E[w²]/E[w]² - 1, the squared coefficient of variation of w
    let cv2 = ((s2.value() - nf.ln()) - 2.0 * log_mean).exp() - 1.0;
    let relative_stderr = (cv2.max(0.0) / (nf - 1.0)).sqrt();
    Ok(Estimate {
        value: log_mean / (a - 1.0),
        stderr: relative_stderr / (a - 1.0),
        relative_stderr,
        low_confidence: !(relative_stderr <= LOW_CONFIDENCE_REL_STDERR),
        method: Method::MonteCarlo,
    })
}

/// Quadrature when the grid allows it, Monte-Carlo otherwise.
pub fn renyi_auto(
    num: &GenericMixture,
    den: &GenericMixture,
    alpha: RenyiOrder,
    config: &OracleConfig,
) -> Result<Estimate> {
    if num.dim() <= config.quadrature.max_dim_grid {
        quad_renyi(num, den, alpha, &config.quadrature)
    } else {
        mc_renyi(num, den, alpha, &config.monte_carlo)
    }
}

/// One inequality or equality checked by a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub tolerance: f64,
    pub ok: bool,
}

impl Check {
    fn at_most(name: &str, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            lhs,
            rhs,
            tolerance,
            ok: lhs <= rhs + tolerance,
        }
    }

    fn close(name: &str, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            lhs,
            rhs,
            tolerance,
            ok: (lhs - rhs).abs() <= tolerance,
        }
    }
}

pub const SANDWICH_MAX_D: u64 = 4;
pub const SANDWICH_MAX_COMPONENTS: u64 = 6;
const QUAD_TOLERANCE: f64 = 1e-4;

/// Numerical divergences for a family set against its bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub family: MixtureFamily,
    pub alpha: RenyiOrder,
    pub oracle_forward: Estimate,
    pub oracle_reverse: Estimate,
    /// Forward term of the tight bound (exact when not degraded).
    pub tight_forward: f64,
    pub forward_bound: f64,
    pub reverse_bound: f64,
    pub tight: f64,
    pub loose: f64,
    pub checks: Vec<Check>,
    pub ok: bool,
    /// Whether the tight ε itself covers both oracle values; informational,
    /// since ε can stay valid while one of its terms does not.
    pub epsilon_covers_oracles: bool,
}

/// Checks `oracle forward ≈ exact forward ≤ forward bound`,
/// `oracle reverse ≤ reverse bound` and `tight ≤ loose`.
///
/// Failures are recorded in the report; so are low-confidence Monte-Carlo
/// estimates, which make the report fail.
pub fn verify_sandwich(
    f: &MixtureFamily,
    alpha: RenyiOrder,
    config: &OracleConfig,
) -> Result<SandwichReport> {
    if f.d() > SANDWICH_MAX_D || f.log_components() > (SANDWICH_MAX_COMPONENTS as f64).ln() + 1e-9
    {
        return Err(invalid(format!(
            "sandwich verification needs d <= {SANDWICH_MAX_D} and C(d,k) <= {SANDWICH_MAX_COMPONENTS}"
        )));
    }
    let p = f.to_mixture()?;
    let q = GenericMixture::gaussian(vec![0.0; f.d() as usize], f.sigma())?;
    let fwd = renyi_auto(&p, &q, alpha, config)?;
    let rev = renyi_auto(&q, &p, alpha, config)?;

    let tight = epsilon_tight(f, alpha);
    let fb = forward_bound(f, alpha);
    let rb = reverse_bound(f, alpha);
    let loose = epsilon_loose(f, alpha);

    let mut checks = Vec::new();
    let fwd_tol = fwd.tolerance(QUAD_TOLERANCE);
    if tight.path.is_degraded() {
        checks.push(Check::at_most("oracle_forward <= forward_bound", fwd.value, fb, fwd_tol));
    } else {
        checks.push(Check::close("oracle_forward ~ exact_forward", fwd.value, tight.forward, fwd_tol));
        checks.push(Check::at_most(
            "exact_forward <= forward_bound",
            tight.forward,
            fb,
            1e-12 * fb.max(1.0),
        ));
    }
    checks.push(Check::at_most(
        "oracle_reverse <= reverse_bound",
        rev.value,
        rb,
        rev.tolerance(QUAD_TOLERANCE),
    ));
    checks.push(Check::at_most("tight <= loose", tight.value, loose, 1e-12 * loose.max(1.0)));
    for (name, e) in [("oracle_forward confident", fwd), ("oracle_reverse confident", rev)] {
        if e.low_confidence {
            checks.push(Check::at_most(name, e.relative_stderr, LOW_CONFIDENCE_REL_STDERR, 0.0));
        }
    }
    let ok = checks.iter().all(|c| c.ok);
    let epsilon_covers_oracles = fwd.value <= tight.value + fwd_tol
        && rev.value <= tight.value + rev.tolerance(QUAD_TOLERANCE);
    Ok(SandwichReport {
        family: *f,
        alpha,
        oracle_forward: fwd,
        oracle_reverse: rev,
        tight_forward: tight.forward,
        forward_bound: fb,
        reverse_bound: rb,
        tight: tight.value,
        loose,
        checks,
        ok,
        epsilon_covers_oracles,
    })
}

/// `D_α(Q‖P) = D_α(Q‖Q') + D_α(Q'‖P)` with `Q' = N((ck/d)·1, σ²I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetIdentityReport {
    pub family: MixtureFamily,
    pub alpha: RenyiOrder,
    /// `D_α(Q‖P)`
    pub lhs: Estimate,
    /// `D_α(Q‖Q') = αc²k²/(2σ²d)`
    pub shift: f64,
    /// `D_α(Q'‖P)`
    pub remainder: Estimate,
    pub tolerance: f64,
    pub ok: bool,
}

pub fn verify_offset_identity(
    f: &MixtureFamily,
    alpha: RenyiOrder,
    config: &OracleConfig,
) -> Result<OffsetIdentityReport> {
    let d = f.d() as usize;
    if d > 4 {
        return Err(invalid("offset identity check needs d <= 4"));
    }
    let p = f.to_mixture()?;
    let q = GenericMixture::gaussian(vec![0.0; d], f.sigma())?;
    let offset = f.c() * f.k() as f64 / f.d() as f64;
    let q_prime = GenericMixture::gaussian(vec![offset; d], f.sigma())?;

    let mut second = *config;
    second.monte_carlo.seed = config.monte_carlo.seed.wrapping_add(1);
    let lhs = renyi_auto(&q, &p, alpha, config)?;
    let remainder = renyi_auto(&q_prime, &p, alpha, &second)?;
    let a = alpha.as_f64();
    let shift = a * (f.c() * f.k() as f64).powi(2) / (2.0 * f.sigma().powi(2) * f.d() as f64);

    let tolerance = 1e-3f64.max(3.0 * lhs.stderr.hypot(remainder.stderr));
    let ok = (lhs.value - (shift + remainder.value)).abs() <= tolerance
        && !lhs.low_confidence
        && !remainder.low_confidence;
    Ok(OffsetIdentityReport {
        family: *f,
        alpha,
        lhs,
        shift,
        remainder,
        tolerance,
        ok,
    })
}

pub const DIM_REDUCTION_TOLERANCE: f64 = 2e-4;

/// Divergences against `N(0, σ²I)` before and after appending a zero
/// coordinate to every center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimReductionReport {
    pub low_dim: usize,
    pub alpha: RenyiOrder,
    pub forward_low: f64,
    pub forward_embedded: f64,
    pub reverse_low: f64,
    pub reverse_embedded: f64,
    pub tolerance: f64,
    pub ok: bool,
}

/// Both directions are checked by quadrature; `spec.max_dim_grid` must
/// admit the embedded dimension.
pub fn verify_dim_reduction(
    centers_lowdim: &[Vec<f64>],
    sigma: f64,
    alpha: RenyiOrder,
    spec: &QuadratureSpec,
) -> Result<DimReductionReport> {
    let low = GenericMixture::uniform(centers_lowdim.to_vec(), sigma)?;
    let high = low.embed(1);
    if high.dim() > 3 {
        return Err(invalid("dimension reduction check needs embedded dimension <= 3"));
    }
    let q_low = GenericMixture::gaussian(vec![0.0; low.dim()], sigma)?;
    let q_high = GenericMixture::gaussian(vec![0.0; high.dim()], sigma)?;
    let forward_low = quad_renyi(&low, &q_low, alpha, spec)?.value;
    let forward_embedded = quad_renyi(&high, &q_high, alpha, spec)?.value;
    let reverse_low = quad_renyi(&q_low, &low, alpha, spec)?.value;
    let reverse_embedded = quad_renyi(&q_high, &high, alpha, spec)?.value;
    let ok = (forward_low - forward_embedded).abs() <= DIM_REDUCTION_TOLERANCE
        && (reverse_low - reverse_embedded).abs() <= DIM_REDUCTION_TOLERANCE;
    Ok(DimReductionReport {
        low_dim: low.dim(),
        alpha,
        forward_low,
        forward_embedded,
        reverse_low,
        reverse_embedded,
        tolerance: DIM_REDUCTION_TOLERANCE,
        ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rdp::forward_exact_enum;

    fn ord(a: u32) -> RenyiOrder {
        RenyiOrder::new(a).unwrap()
    }

    fn g(center: Vec<f64>, sigma: f64) -> GenericMixture {
        GenericMixture::gaussian(center, sigma).unwrap()
    }

    fn mc(n: u64, seed: u64) -> McSpec {
        McSpec {
            n_samples: n,
            seed,
            proposal: Proposal::Tilted,
        }
    }

    #[test]
    fn spec_validation() {
        assert!(QuadratureSpec {
            truncation_radius_sigmas: 6.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(QuadratureSpec {
            points_per_sigma: 5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(mc(1000, 0).validate().is_err());
    }

    #[test]
    fn quadrature_examples() {
        let qs = QuadratureSpec::default();
        let same = quad_renyi(&g(vec![0.3], 1.0), &g(vec![0.3], 1.0), ord(5), &qs).unwrap();
        assert!(same.value.abs() < 1e-6);

        let shifted = quad_renyi(&g(vec![1.0], 1.0), &g(vec![0.0], 1.0), ord(3), &qs).unwrap();
        assert!((shifted.value - 1.5).abs() < 1e-4, "{}", shifted.value);

        let pm = GenericMixture::uniform(vec![vec![1.0], vec![-1.0]], 1.0).unwrap();
        let v = quad_renyi(&pm, &g(vec![0.0], 1.0), ord(2), &qs).unwrap();
        let exact = forward_exact_enum(&pm, ord(2)).unwrap();
        assert!((v.value - exact).abs() < 1e-4, "{} vs {exact}", v.value);
    }

    #[test]
    fn quadrature_refuses_large_dimensions() {
        let err = quad_renyi(
            &g(vec![0.0; 3], 1.0),
            &g(vec![0.0; 3], 1.0),
            ord(2),
            &QuadratureSpec::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DimensionTooLarge { dim: 3, limit: 2 }));
        assert!(err.to_string().contains("Monte-Carlo"));
    }

    #[test]
    fn quadrature_matches_unequal_width_closed_form() {
        let v = quad_renyi(&g(vec![0.0], 1.0), &g(vec![0.0], 2.0), ord(2), &QuadratureSpec::default())
            .unwrap();
        let exact = crate::rdp::gaussian_rdp_same_mean(1.0, 2.0, 1, ord(2)).unwrap();
        assert!((v.value - exact).abs() < 1e-4);
        assert!(quad_renyi(&g(vec![0.0], 2.0), &g(vec![0.0], 1.0), ord(2), &QuadratureSpec::default()).is_err());
    }

    #[test]
    fn monte_carlo_identical_is_zero() {
        let m = GenericMixture::uniform(vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]], 1.0).unwrap();
        let e = mc_renyi(&m, &m, ord(3), &mc(200_000, 1)).unwrap();
        assert!(e.value.abs() <= (3.0 * e.stderr).max(1e-12), "{e:?}");
    }

    #[test]
    fn monte_carlo_forward_matches_enumeration() {
        let f = MixtureFamily::new(3, 1, 1.0, 1.0).unwrap();
        let p = f.to_mixture().unwrap();
        let e = mc_renyi(&p, &g(vec![0.0; 3], 1.0), ord(2), &mc(400_000, 2)).unwrap();
        let exact = forward_exact_enum(&p, ord(2)).unwrap();
        assert!((e.value - exact).abs() <= 3.0 * e.stderr, "{e:?} vs {exact}");
        assert!(!e.low_confidence);
    }

    #[test]
    fn monte_carlo_reverse_respects_bound() {
        let f = MixtureFamily::new(3, 2, 1.0, 2.0).unwrap();
        let p = f.to_mixture().unwrap();
        let e = mc_renyi(&g(vec![0.0; 3], 2.0), &p, ord(3), &mc(400_000, 3)).unwrap();
        assert!(e.value <= reverse_bound(&f, ord(3)) + 3.0 * e.stderr);
    }

    #[test]
    fn monte_carlo_is_deterministic() {
        let f = MixtureFamily::new(3, 1, 1.0, 1.0).unwrap();
        let p = f.to_mixture().unwrap();
        let q = g(vec![0.0; 3], 1.0);
        let a = mc_renyi(&p, &q, ord(3), &mc(150_000, 9)).unwrap();
        let b = mc_renyi(&p, &q, ord(3), &mc(150_000, 9)).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
        let c = mc_renyi(&p, &q, ord(3), &mc(150_000, 10)).unwrap();
        assert_ne!(a.value.to_bits(), c.value.to_bits());
    }

    #[test]
    fn naive_proposal_is_flagged_when_it_cannot_cope() {
        let f = MixtureFamily::new(3, 1, 4.0, 1.0).unwrap();
        let p = f.to_mixture().unwrap();
        let spec = McSpec {
            n_samples: 100_000,
            seed: 4,
            proposal: Proposal::Denominator,
        };
        let e = mc_renyi(&p, &g(vec![0.0; 3], 1.0), ord(5), &spec).unwrap();
        let exact = forward_exact_enum(&p, ord(5)).unwrap();
        assert!(e.low_confidence || (e.value - exact).abs() <= 3.0 * e.stderr, "{e:?}");
    }

    #[test]
    fn sandwich_examples() {
        let cfg = OracleConfig::default();
        let r = verify_sandwich(&MixtureFamily::new(2, 1, 1.0, 1.0).unwrap(), ord(2), &cfg).unwrap();
        assert!((r.oracle_forward.value - 0.620_114_506_958_277_5).abs() < 1e-4);
        // D_2(Q‖P) by 2-D adaptive mpmath quadrature; the closed-form
        // reverse term sits below it, while ε = max(...) still covers it
        assert!((r.oracle_reverse.value - 0.569_042_599_955_135_7).abs() < 1e-4);
        assert!(r.oracle_reverse.value > r.reverse_bound);
        assert!(!r.ok);
        assert!(r.epsilon_covers_oracles);
        let failed: Vec<_> = r.checks.iter().filter(|c| !c.ok).map(|c| c.name.as_str()).collect();
        assert_eq!(failed, ["oracle_reverse <= reverse_bound"]);

        let zero = verify_sandwich(&MixtureFamily::new(2, 1, 0.0, 1.0).unwrap(), ord(3), &cfg).unwrap();
        assert!(zero.ok);
        assert!(zero.oracle_forward.value.abs() < 1e-9 && zero.oracle_reverse.value.abs() < 1e-9);
        assert_eq!((zero.tight, zero.loose), (0.0, 0.0));

        assert!(verify_sandwich(&MixtureFamily::new(5, 1, 1.0, 1.0).unwrap(), ord(2), &cfg).is_err());
    }

    #[test]
    fn offset_identity_examples() {
        let cfg = OracleConfig::default();
        let r = verify_offset_identity(&MixtureFamily::new(2, 1, 1.0, 1.0).unwrap(), ord(2), &cfg).unwrap();
        assert!(r.ok, "{r:?}");
        assert!((r.shift - 0.5).abs() < 1e-15);

        let zero = verify_offset_identity(&MixtureFamily::new(2, 1, 0.0, 1.0).unwrap(), ord(2), &cfg).unwrap();
        assert!(zero.ok && zero.shift == 0.0 && zero.lhs.value.abs() < 1e-9);

        let full = verify_offset_identity(&MixtureFamily::new(2, 2, 1.0, 1.0).unwrap(), ord(2), &cfg).unwrap();
        assert!(full.ok);
        assert!((full.shift - 2.0).abs() < 1e-15);
        assert!(full.remainder.value.abs() < 1e-6);
    }

    #[test]
    fn dim_reduction_one_to_two() {
        let r = verify_dim_reduction(&[vec![1.0], vec![-1.0]], 1.0, ord(2), &QuadratureSpec::default()).unwrap();
        assert!(r.ok, "{r:?}");
        let zero = verify_dim_reduction(&[vec![0.0]], 1.0, ord(4), &QuadratureSpec::default()).unwrap();
        assert!(zero.ok && zero.forward_embedded.abs() < 1e-9);
    }
}
