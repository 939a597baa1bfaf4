//! Deterministic desk-scale training simulator.
//!
//! Runs noisy clipped gradient descent on small synthetic regression
//! tasks with closed-form per-sample gradients, under model splitting,
//! dropout or no amplification, and records the structural facts the
//! accounting relies on: clipped norms, gradient supports and zeroed
//! dropout units.
//!
//! All randomness comes from [`crate::rng::stream`] keyed by
//! `(iteration, sample)`, so a trace is a pure function of the task and
//! the config.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::accountant::{compose, default_orders, to_dp, CompositionPlan, DpGuarantee, MechanismSpec, Mode};
use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Tolerance on post-clip norms.
pub const CLIP_SLACK: f64 = 1e-9;
/// The only dropout rate the split accounting covers.
pub const DROPOUT_RATE: f64 = 0.5;

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    /// `ŷ = w·x`.
    Linear { dim: usize },
    /// `ŷ = Σ_j v_j m_j tanh(W_j·x) + s·x + b` with dropout masks `m_j`.
    ///
    /// Parameters are laid out as `[W (hidden × input) | v | s | b]`;
    /// `W` and `v` form the split part, `s` and `b` the shared part.
    Hidden { input_dim: usize, hidden: usize },
}

/// Seeded regression data with squared-error loss `½(ŷ - y)²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    kind: TaskKind,
    features: Vec<Vec<f64>>,
    targets: Vec<f64>,
    seed: u64,
}

fn normals(rng: &mut impl Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

impl SyntheticTask {
    /// Targets from a random linear teacher plus Gaussian noise.
    pub fn linear(n: usize, dim: usize, noise_std: f64, seed: u64) -> Result<Self> {
        if n == 0 || dim == 0 {
            return Err(config_err("linear task needs n >= 1 and dim >= 1"));
        }
        let teacher = normals(&mut rng::stream(seed, Domain::Data, u32::MAX, 0), dim, 1.0);
        let mut features = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for i in 0..n {
            let mut r = rng::stream(seed, Domain::Data, 0, i as u32);
            let x = normals(&mut r, dim, 1.0);
            let y = dot(&teacher, &x) + noise_std * r.sample::<f64, _>(StandardNormal);
            features.push(x);
            targets.push(y);
        }
        Ok(Self {
            kind: TaskKind::Linear { dim },
            features,
            targets,
            seed,
        })
    }

    /// Targets from a random teacher of the same one-hidden-layer shape.
    pub fn hidden(n: usize, input_dim: usize, hidden: usize, noise_std: f64, seed: u64) -> Result<Self> {
        if n == 0 || input_dim == 0 || hidden == 0 {
            return Err(config_err("hidden-layer task needs n, input_dim, hidden >= 1"));
        }
        let shape = TaskKind::Hidden { input_dim, hidden };
        let mut teacher_rng = rng::stream(seed, Domain::Data, u32::MAX, 0);
        let teacher = Self {
            kind: shape,
            features: Vec::new(),
            targets: Vec::new(),
            seed,
        };
        let teacher_params = normals(&mut teacher_rng, teacher.param_dim(), 1.0 / (input_dim as f64).sqrt());
        let mut features = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for i in 0..n {
            let mut r = rng::stream(seed, Domain::Data, 0, i as u32);
            let x = normals(&mut r, input_dim, 1.0);
            let (y, _) = teacher.forward(&teacher_params, &x, None);
            features.push(x);
            targets.push(y + noise_std * r.sample::<f64, _>(StandardNormal));
        }
        Ok(Self {
            kind: shape,
            features,
            targets,
            seed,
        })
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn n_samples(&self) -> usize {
        self.targets.len()
    }

    pub fn param_dim(&self) -> usize {
        match self.kind {
            TaskKind::Linear { dim } => dim,
            TaskKind::Hidden { input_dim, hidden } => hidden * input_dim + hidden + input_dim + 1,
        }
    }

    pub fn hidden_units(&self) -> Option<usize> {
        match self.kind {
            TaskKind::Linear { .. } => None,
            TaskKind::Hidden { hidden, .. } => Some(hidden),
        }
    }

    /// Indices of the split part (`W` and `v`) and the shared part
    /// (`s` and `b`) of a hidden-layer model.
    pub fn dropout_parts(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match self.kind {
            TaskKind::Linear { .. } => None,
            TaskKind::Hidden { input_dim, hidden } => {
                let split_end = hidden * input_dim + hidden;
                Some(((0..split_end).collect(), (split_end..self.param_dim()).collect()))
            }
        }
    }

    /// Parameter indices incident to hidden unit `j`: its incoming row of
    /// `W` and its outgoing weight in `v`.
    pub fn unit_params(&self, j: usize) -> Vec<usize> {
        match self.kind {
            TaskKind::Linear { .. } => Vec::new(),
            TaskKind::Hidden { input_dim, hidden } => {
                let mut out: Vec<usize> = (j * input_dim..(j + 1) * input_dim).collect();
                out.push(hidden * input_dim + j);
                out
            }
        }
    }

    pub fn initial_params(&self) -> Vec<f64> {
        match self.kind {
            TaskKind::Linear { dim } => vec![0.0; dim],
            TaskKind::Hidden { input_dim, .. } => {
                let mut r = rng::stream(self.seed, Domain::Init, 0, 0);
                normals(&mut r, self.param_dim(), 0.5 / (input_dim as f64).sqrt())
            }
        }
    }

    /// Prediction and hidden activations; `keep[j] == false` drops unit `j`.
    fn forward(&self, params: &[f64], x: &[f64], keep: Option<&[bool]>) -> (f64, Vec<f64>) {
        match self.kind {
            TaskKind::Linear { .. } => (dot(params, x), Vec::new()),
            TaskKind::Hidden { input_dim, hidden } => {
                let v0 = hidden * input_dim;
                let s0 = v0 + hidden;
                let b = params[s0 + input_dim];
                let acts: Vec<f64> = (0..hidden)
                    .map(|j| dot(&params[j * input_dim..(j + 1) * input_dim], x).tanh())
                    .collect();
                let mut y = dot(&params[s0..s0 + input_dim], x) + b;
                for j in 0..hidden {
                    if keep.is_none_or(|k| k[j]) {
                        y += params[v0 + j] * acts[j];
                    }
                }
                (y, acts)
            }
        }
    }

    /// Writes the gradient of sample `i`'s loss into `out`; returns the loss.
    pub fn sample_gradient(&self, params: &[f64], i: usize, keep: Option<&[bool]>, out: &mut [f64]) -> f64 {
        let x = &self.features[i];
        let (y, acts) = self.forward(params, x, keep);
        let r = y - self.targets[i];
        match self.kind {
            TaskKind::Linear { .. } => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = r * xi;
                }
            }
            TaskKind::Hidden { input_dim, hidden } => {
                let v0 = hidden * input_dim;
                let s0 = v0 + hidden;
                for j in 0..hidden {
                    let row = &mut out[j * input_dim..(j + 1) * input_dim];
                    if keep.is_none_or(|k| k[j]) {
                        let back = r * params[v0 + j] * (1.0 - acts[j] * acts[j]);
                        for (o, xi) in row.iter_mut().zip(x) {
                            *o = back * xi;
                        }
                        out[v0 + j] = r * acts[j];
                    } else {
                        row.fill(0.0);
                        out[v0 + j] = 0.0;
                    }
                }
                for (o, xi) in out[s0..s0 + input_dim].iter_mut().zip(x) {
                    *o = r * xi;
                }
                out[s0 + input_dim] = r;
            }
        }
        0.5 * r * r
    }

    /// Mean loss over all samples with every unit kept.
    pub fn mean_loss(&self, params: &[f64]) -> f64 {
        let total: f64 = (0..self.n_samples())
            .map(|i| {
                let (y, _) = self.forward(params, &self.features[i], None);
                0.5 * (y - self.targets[i]).powi(2)
            })
            .sum();
        total / self.n_samples() as f64
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Disjoint parameter blocks, one per submodel, plus a shared set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitPlan {
    pub blocks: Vec<Vec<usize>>,
    #[serde(default)]
    pub nonsplit: Vec<usize>,
    /// Re-partition the block indices at random every iteration.
    #[serde(default)]
    pub per_iteration: bool,
}

impl SplitPlan {
    /// `d` contiguous near-equal blocks covering `0..m`.
    pub fn contiguous(m: usize, d: usize) -> Result<Self> {
        if d == 0 || d > m {
            return Err(config_err(format!("need 1 <= d <= m, got d={d}, m={m}")));
        }
        let blocks = (0..d)
            .map(|b| (b * m / d..(b + 1) * m / d).collect())
            .collect();
        Ok(Self {
            blocks,
            nonsplit: Vec::new(),
            per_iteration: false,
        })
    }

    pub fn d(&self) -> usize {
        self.blocks.len()
    }

    pub fn validate(&self, param_dim: usize) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(config_err("split plan needs at least one block"));
        }
        let mut owner = vec![false; param_dim];
        for set in self.blocks.iter().chain(std::iter::once(&self.nonsplit)) {
            for &i in set {
                if i >= param_dim {
                    return Err(config_err(format!("parameter index {i} out of range for dimension {param_dim}")));
                }
                if owner[i] {
                    return Err(config_err(format!("parameter index {i} appears in more than one set")));
                }
                owner[i] = true;
            }
        }
        Ok(())
    }

    fn repartitioned(&self, rng: &mut impl Rng) -> Self {
        let mut pool: Vec<usize> = self.blocks.iter().flatten().copied().collect();
        pool.sort_unstable();
        let perm = index::sample(rng, pool.len(), pool.len());
        let shuffled: Vec<usize> = perm.iter().map(|p| pool[p]).collect();
        let mut start = 0;
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let mut nb = shuffled[start..start + b.len()].to_vec();
                nb.sort_unstable();
                start += b.len();
                nb
            })
            .collect();
        Self {
            blocks,
            nonsplit: self.nonsplit.clone(),
            per_iteration: self.per_iteration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropoutSpec {
    pub rate: f64,
    /// Fixed keep-mask used for every sample instead of random draws.
    #[serde(default)]
    pub forced_keep: Option<Vec<bool>>,
}

impl Default for DropoutSpec {
    fn default() -> Self {
        Self {
            rate: DROPOUT_RATE,
            forced_keep: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainingMode {
    Plain,
    ModelSplit { plan: SplitPlan },
    Dropout { dropout: DropoutSpec },
}

/// Which samples take part in each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    All,
    Bis { k: u32 },
    Poisson { gamma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub iterations: u32,
    pub c: f64,
    pub sigma: f64,
    pub learning_rate: f64,
    pub mode: TrainingMode,
    pub schedule: Schedule,
    pub seed: u64,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_delta() -> f64 {
    1e-5
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(config_err("iterations must be >= 1"));
        }
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(config_err(format!("clip norm c must be positive, got {}", self.c)));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(config_err(format!("sigma must be nonnegative, got {}", self.sigma)));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(config_err("learning rate must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(config_err("delta must lie in (0, 1)"));
        }
        match self.schedule {
            Schedule::All => {}
            Schedule::Bis { k } => {
                if k == 0 || k > self.iterations {
                    return Err(config_err(format!("need 1 <= k <= T, got k={k}, T={}", self.iterations)));
                }
            }
            Schedule::Poisson { gamma } => {
                if !(gamma > 0.0 && gamma <= 1.0) {
                    return Err(config_err(format!("gamma must lie in (0, 1], got {gamma}")));
                }
            }
        }
        if let TrainingMode::Dropout { dropout } = &self.mode {
            if dropout.rate != DROPOUT_RATE {
                return Err(Error::Unsupported(format!(
                    "dropout rate {} is not covered by the split accounting; only 0.5 is",
                    dropout.rate
                )));
            }
        }
        Ok(())
    }
}

/// Binary `n × T` participation matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participation {
    n: usize,
    t: usize,
    cells: Vec<bool>,
}

impl Participation {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn participates(&self, sample: usize, iteration: usize) -> bool {
        self.cells[sample * self.t + iteration]
    }

    pub fn row(&self, sample: usize) -> &[bool] {
        &self.cells[sample * self.t..(sample + 1) * self.t]
    }

    pub fn row_sums(&self) -> Vec<usize> {
        (0..self.n)
            .map(|i| self.row(i).iter().filter(|&&b| b).count())
            .collect()
    }

    pub fn column_sums(&self) -> Vec<usize> {
        (0..self.t)
            .map(|j| (0..self.n).filter(|&i| self.participates(i, j)).count())
            .collect()
    }
}

/// Each sample independently picks a uniform `k`-subset of the `T`
/// iterations.
pub fn assign_bis_schedule(n: usize, t: usize, k: usize, seed: u64) -> Result<Participation> {
    if k == 0 || k > t {
        return Err(config_err(format!("need 1 <= k <= T, got k={k}, T={t}")));
    }
    let mut cells = vec![false; n * t];
    for i in 0..n {
        let mut r = rng::stream(seed, Domain::Schedule, i as u32, u32::MAX);
        for j in index::sample(&mut r, t, k) {
            cells[i * t + j] = true;
        }
    }
    Ok(Participation { n, t, cells })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSummary {
    pub l2_norm: f64,
    pub max_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub participants: Vec<u32>,
    /// Block index per participant (model splitting only).
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub assignments: Vec<u32>,
    /// Kept hidden units per participant (dropout only).
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub kept_units: Vec<u32>,
    /// Largest post-clip norm over the separately clipped parts, per participant.
    pub clipped_norms: Vec<f64>,
    pub noise: NoiseSummary,
    /// Mean full-data loss after the update.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub max_clipped_norm: f64,
    pub clip_violations: u64,
    /// Nonzero gradient entries outside the assigned block and shared set.
    pub support_violations: u64,
    /// Split-part entries touched by samples on different blocks in one iteration.
    pub disjointness_violations: u64,
    /// Nonzero gradient entries incident to a dropped unit.
    pub zeroing_violations: u64,
    /// Assignments per block, summed over iterations.
    pub block_counts: Vec<u64>,
    pub units_kept: u64,
    pub units_total: u64,
    /// Iterations each sample took part in.
    pub participations: Vec<u32>,
}

impl Diagnostics {
    pub fn violations(&self) -> u64 {
        self.clip_violations + self.support_violations + self.disjointness_violations + self.zeroing_violations
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub config: SimConfig,
    pub records: Vec<IterationRecord>,
    pub diagnostics: Diagnostics,
    pub final_params: Vec<f64>,
    pub privacy: Option<DpGuarantee>,
    /// Why no guarantee is attached, when none is.
    pub privacy_note: Option<String>,
}

/// Scales `g` restricted to `part` to norm at most `c`; returns the
/// post-clip norm.
fn clip_part(g: &mut [f64], part: &[usize], c: f64) -> f64 {
    let norm = part.iter().map(|&i| g[i] * g[i]).sum::<f64>().sqrt();
    if norm > c {
        let s = c / norm;
        for &i in part {
            g[i] *= s;
        }
    }
    part.iter().map(|&i| g[i] * g[i]).sum::<f64>().sqrt()
}

fn participants(config: &SimConfig, n: usize, schedule: Option<&Participation>, iteration: u32) -> Vec<u32> {
    match config.schedule {
        Schedule::All => (0..n as u32).collect(),
        Schedule::Bis { .. } => {
            let p = schedule.expect("bis schedule precomputed");
            (0..n)
                .filter(|&i| p.participates(i, iteration as usize))
                .map(|i| i as u32)
                .collect()
        }
        Schedule::Poisson { gamma } => {
            let mut r = rng::stream(config.seed, Domain::Schedule, iteration, 0);
            (0..n as u32).filter(|_| r.random::<f64>() < gamma).collect()
        }
    }
}

/// Expected number of participants per iteration.
fn batch_normalizer(config: &SimConfig, n: usize) -> f64 {
    let n = n as f64;
    match config.schedule {
        Schedule::All => n,
        Schedule::Bis { k } => n * k as f64 / config.iterations as f64,
        Schedule::Poisson { gamma } => n * gamma,
    }
}

enum Amplifier<'a> {
    None,
    Split(&'a SplitPlan),
    Dropout(&'a DropoutSpec),
}

fn run(task: &SyntheticTask, config: &SimConfig, amp: Amplifier<'_>) -> Result<SimTrace> {
    config.validate()?;
    let m = task.param_dim();
    let n = task.n_samples();
    let all: Vec<usize> = (0..m).collect();
    let dropout_parts = match amp {
        Amplifier::Split(plan) => {
            plan.validate(m)?;
            None
        }
        Amplifier::Dropout(spec) => {
            let parts = task
                .dropout_parts()
                .ok_or_else(|| config_err("dropout training needs a hidden-layer task"))?;
            if let Some(keep) = &spec.forced_keep {
                if keep.len() != task.hidden_units().unwrap_or(0) {
                    return Err(config_err("forced dropout mask length differs from the hidden width"));
                }
            }
            Some(parts)
        }
        Amplifier::None => None,
    };
    let schedule = match config.schedule {
        Schedule::Bis { k } => Some(assign_bis_schedule(
            n,
            config.iterations as usize,
            k as usize,
            config.seed,
        )?),
        _ => None,
    };
    let (privacy, privacy_note) = match report_privacy(config) {
        Ok(g) => (Some(g), None),
        Err(e) => (None, Some(e.to_string())),
    };

    let mut params = task.initial_params();
    let mut diag = Diagnostics {
        participations: vec![0; n],
        block_counts: match amp {
            Amplifier::Split(plan) => vec![0; plan.d()],
            _ => Vec::new(),
        },
        ..Default::default()
    };
    let normalizer = batch_normalizer(config, n);
    let mut records = Vec::with_capacity(config.iterations as usize);
    let mut g = vec![0.0; m];
    let mut sum = vec![0.0; m];

    for it in 0..config.iterations {
        let plan_now = match amp {
            Amplifier::Split(plan) if plan.per_iteration => {
                let mut r = rng::stream(config.seed, Domain::Assignment, it, u32::MAX);
                Some(plan.repartitioned(&mut r))
            }
            Amplifier::Split(plan) => Some(plan.clone()),
            _ => None,
        };
        // shared set membership and current block owner per index
        let (in_shared, block_of) = match &plan_now {
            Some(plan) => {
                let mut shared = vec![false; m];
                for &i in &plan.nonsplit {
                    shared[i] = true;
                }
                let mut owner = vec![u32::MAX; m];
                for (b, block) in plan.blocks.iter().enumerate() {
                    for &i in block {
                        owner[i] = b as u32;
                    }
                }
                (shared, owner)
            }
            None => (Vec::new(), Vec::new()),
        };
        let mut touched_by = vec![u32::MAX; m];

        let who = participants(config, n, schedule.as_ref(), it);
        sum.fill(0.0);
        let mut record = IterationRecord {
            iteration: it,
            participants: who.clone(),
            assignments: Vec::new(),
            kept_units: Vec::new(),
            clipped_norms: Vec::with_capacity(who.len()),
            noise: NoiseSummary {
                l2_norm: 0.0,
                max_abs: 0.0,
            },
            loss: 0.0,
        };

        for &i in &who {
            let i = i as usize;
            diag.participations[i] += 1;
            let mut sample_rng = rng::stream(config.seed, Domain::Assignment, it, i as u32);
            let norm = match (&amp, &plan_now) {
                (Amplifier::None, _) => {
                    task.sample_gradient(&params, i, None, &mut g);
                    clip_part(&mut g, &all, config.c)
                }
                (Amplifier::Split(_), Some(plan)) => {
                    let b = sample_rng.random_range(0..plan.d());
                    record.assignments.push(b as u32);
                    diag.block_counts[b] += 1;
                    task.sample_gradient(&params, i, None, &mut g);
                    for j in 0..m {
                        if block_of[j] != b as u32 && !in_shared[j] {
                            g[j] = 0.0;
                        }
                    }
                    let mut norm = clip_part(&mut g, &plan.blocks[b], config.c);
                    if !plan.nonsplit.is_empty() {
                        norm = norm.max(clip_part(&mut g, &plan.nonsplit, config.c));
                    }
                    for j in 0..m {
                        if g[j] == 0.0 {
                            continue;
                        }
                        if in_shared[j] {
                            continue;
                        }
                        if block_of[j] != b as u32 {
                            diag.support_violations += 1;
                        }
                        if touched_by[j] == u32::MAX {
                            touched_by[j] = b as u32;
                        } else if touched_by[j] != b as u32 {
                            diag.disjointness_violations += 1;
                        }
                    }
                    norm
                }
                (Amplifier::Dropout(spec), _) => {
                    let hidden = task.hidden_units().expect("checked above");
                    let keep: Vec<bool> = match &spec.forced_keep {
                        Some(k) => k.clone(),
                        None => (0..hidden).map(|_| sample_rng.random::<bool>()).collect(),
                    };
                    let kept = keep.iter().filter(|&&k| k).count();
                    record.kept_units.push(kept as u32);
                    diag.units_kept += kept as u64;
                    diag.units_total += hidden as u64;
                    task.sample_gradient(&params, i, Some(&keep), &mut g);
                    let (split, shared) = dropout_parts.as_ref().expect("checked above");
                    let norm = clip_part(&mut g, split, config.c).max(clip_part(&mut g, shared, config.c));
                    for (j, &k) in keep.iter().enumerate() {
                        if !k {
                            diag.zeroing_violations +=
                                task.unit_params(j).iter().filter(|&&p| g[p] != 0.0).count() as u64;
                        }
                    }
                    norm
                }
                (Amplifier::Split(_), None) => unreachable!("split plan resolved above"),
            };
            if norm > config.c + CLIP_SLACK {
                diag.clip_violations += 1;
            }
            diag.max_clipped_norm = diag.max_clipped_norm.max(norm);
            record.clipped_norms.push(norm);
            for (s, gj) in sum.iter_mut().zip(&g) {
                *s += gj;
            }
        }

        let mut noise_rng = rng::stream(config.seed, Domain::Noise, it, 0);
        let mut sq = 0.0;
        for (j, s) in sum.iter_mut().enumerate() {
            let z = config.sigma * noise_rng.sample::<f64, _>(StandardNormal);
            sq += z * z;
            record.noise.max_abs = record.noise.max_abs.max(z.abs());
            *s += z;
            params[j] -= config.learning_rate * *s / normalizer;
        }
        record.noise.l2_norm = sq.sqrt();
        record.loss = task.mean_loss(&params);
        records.push(record);
    }

    Ok(SimTrace {
        config: config.clone(),
        records,
        diagnostics: diag,
        final_params: params,
        privacy,
        privacy_note,
    })
}

/// Noisy clipped gradient descent with no amplification.
pub fn run_plain_training(task: &SyntheticTask, config: &SimConfig) -> Result<SimTrace> {
    match config.mode {
        TrainingMode::Plain => run(task, config, Amplifier::None),
        _ => Err(config_err("run_plain_training needs mode = plain")),
    }
}

/// Every sample updates one uniformly drawn block plus the shared set.
///
/// The block part and the shared part are clipped to `c` separately.
pub fn run_model_split_training(task: &SyntheticTask, config: &SimConfig) -> Result<SimTrace> {
    match &config.mode {
        TrainingMode::ModelSplit { plan } => run(task, config, Amplifier::Split(plan)),
        _ => Err(config_err("run_model_split_training needs mode = model_split")),
    }
}

/// Every sample drops each hidden unit with probability 0.5; the hidden
/// weights and the shared skip/bias part are clipped to `c` separately.
pub fn run_dropout_training(task: &SyntheticTask, config: &SimConfig) -> Result<SimTrace> {
    match &config.mode {
        TrainingMode::Dropout { dropout } => run(task, config, Amplifier::Dropout(dropout)),
        _ => Err(config_err("run_dropout_training needs mode = dropout")),
    }
}

/// Dispatches on `config.mode`.
pub fn run_training(task: &SyntheticTask, config: &SimConfig) -> Result<SimTrace> {
    match config.mode {
        TrainingMode::Plain => run_plain_training(task, config),
        TrainingMode::ModelSplit { .. } => run_model_split_training(task, config),
        TrainingMode::Dropout { .. } => run_dropout_training(task, config),
    }
}

/// Mechanism and repetition count that account for a whole run.
pub fn accounting_plan(config: &SimConfig) -> Result<CompositionPlan> {
    config.validate()?;
    if !(config.sigma > 0.0) {
        return Err(config_err("privacy accounting needs sigma > 0"));
    }
    let (c, sigma, t) = (config.c, config.sigma, config.iterations as u64);
    let (spec, count) = match (&config.mode, config.schedule) {
        (TrainingMode::Plain, Schedule::All) => (MechanismSpec::Gaussian { c, sigma }, t),
        (TrainingMode::Plain, Schedule::Bis { k }) => (MechanismSpec::Bis { t, k: k as u64, c, sigma }, 1),
        (TrainingMode::Plain, Schedule::Poisson { gamma }) => {
            (MechanismSpec::PoissonGaussian { c, sigma, gamma }, t)
        }
        (TrainingMode::ModelSplit { plan }, Schedule::All) => {
            let d = plan.d() as u64;
            if plan.nonsplit.is_empty() {
                (MechanismSpec::ModelSplit { d, c, sigma }, t)
            } else {
                (
                    MechanismSpec::PartialSplit {
                        c_split: c,
                        c_nonsplit: c,
                        d,
                        sigma,
                    },
                    t,
                )
            }
        }
        // the hidden-layer model always carries a shared skip/bias part
        (TrainingMode::Dropout { .. }, Schedule::All) => (
            MechanismSpec::PartialSplit {
                c_split: c,
                c_nonsplit: c,
                d: 2,
                sigma,
            },
            t,
        ),
        (TrainingMode::ModelSplit { .. } | TrainingMode::Dropout { .. }, _) => {
            return Err(Error::Unsupported(
                "model splitting or dropout combined with data subsampling has no accounting rule; \
                 see the README section \"Unsupported combinations\""
                    .to_string(),
            ))
        }
    };
    CompositionPlan::single(spec, count)
}

/// `(ε, δ)` guarantee for the run described by `config`, or a refusal.
pub fn report_privacy(config: &SimConfig) -> Result<DpGuarantee> {
    let plan = accounting_plan(config)?;
    to_dp(&compose(&plan, &default_orders(), Mode::Tight)?, config.delta)
}
