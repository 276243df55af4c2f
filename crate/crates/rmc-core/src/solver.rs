//! Stagewise projected gradient descent with hard thresholding.
//!
//! Both solver variants alternate three moves on the observed entries:
//! threshold the residual into a sparse estimate, form the implicit
//! gradient-corrected iterate, and project back onto fixed-rank matrices
//! with a randomized truncated SVD. The stagewise variant grows the iterate
//! rank by a spectral halving rule each stage; the rank-increment variant
//! adds one to the rank per stage. Matrix completion is the zero-corruption
//! special case and robust PCA is solved by subsampling a fully observed
//! matrix and optionally recovering the sparse part in a second pass.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{
    eval_lowrank_entries, frob_error, hard_threshold, project_observed, LowRankFactors,
    ObservationSet, SparseCoo, StructuredMatrix,
};
use crate::sampling::{bernoulli_sample, split_samples, IndexSet, SplitMode, SplitPlan};
use crate::spectral::{
    select_stage_rank, spectral_norm_estimate, truncated_svd, SvdOptions,
};

/// Relative progress-stall factor: the inner loop exits early once
/// ‖L⁽ᵗ⁺¹⁾ − L⁽ᵗ⁾‖_F drops below this multiple of ε.
const STALL_FACTOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverVariant {
    /// Stagewise rank selection by spectral halving.
    PgRmc,
    /// Rank grows by exactly one per stage.
    RRmc,
}

/// Hard-threshold schedule. `Schedule` follows the singular-value recursion;
/// the adaptive modes scale the threshold by an estimate of ‖M − S⁽ᵗ⁾‖₂,
/// divided by √(max(m,n)) or max(m,n). Off by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdMode {
    Schedule,
    AdaptiveSqrt,
    AdaptiveLinear,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Target Frobenius error against the ground-truth low-rank matrix.
    pub epsilon: f64,
    pub target_rank: usize,
    /// Incoherence estimate; feeds the default η and the iteration count.
    pub mu: f64,
    /// Thresholding parameter η. `None` selects the default 4μ²r/m.
    pub eta: Option<f64>,
    /// Estimate of the leading singular value. `None` auto-estimates
    /// 1.05·‖(1/p)·P_Ω(M)‖₂ by power iteration.
    pub sigma: Option<f64>,
    pub variant: SolverVariant,
    pub split_mode: SplitMode,
    pub inner_iters_override: Option<usize>,
    pub max_stages_override: Option<usize>,
    pub threshold_mode: ThresholdMode,
    /// Wall-clock safety net in seconds; trips a diagnostic error carrying
    /// partial results. Deterministic runs should rely on stage caps instead.
    pub time_limit_s: Option<f64>,
    pub seed: u64,
}

impl SolverConfig {
    pub fn new(epsilon: f64, target_rank: usize, mu: f64, variant: SolverVariant) -> Self {
        Self {
            epsilon,
            target_rank,
            mu,
            eta: None,
            sigma: None,
            variant,
            split_mode: SplitMode::NoSplit,
            inner_iters_override: None,
            max_stages_override: None,
            threshold_mode: ThresholdMode::Schedule,
            time_limit_s: None,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument("epsilon must be positive".into()));
        }
        if self.target_rank < 1 {
            return Err(Error::InvalidArgument("target_rank must be at least 1".into()));
        }
        if !(self.mu > 0.0) {
            return Err(Error::InvalidArgument("mu must be positive".into()));
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0) {
                return Err(Error::InvalidArgument("eta must be positive".into()));
            }
        }
        if let Some(sigma) = self.sigma {
            if !(sigma > 0.0) {
                return Err(Error::InvalidArgument("sigma must be positive".into()));
            }
        }
        Ok(())
    }
}

/// T = ceil(10·ln(10·μ²·r·σ/ε)), clamped below at 1.
pub fn default_inner_iters(mu: f64, target_rank: usize, sigma: f64, epsilon: f64) -> usize {
    let arg = 10.0 * mu * mu * target_rank as f64 * sigma / epsilon;
    let t = (10.0 * arg.ln()).ceil();
    if t.is_finite() && t >= 1.0 {
        t as usize
    } else {
        1
    }
}

/// Working variables carried across iterations and stages.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub l: LowRankFactors,
    pub s: SparseCoo,
    pub m_struct: StructuredMatrix,
    pub zeta: f64,
    pub stage: usize,
    pub stage_rank: usize,
    pub inner_t: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminationReason {
    /// The stopping rule fired before any stage ran; the zero matrix
    /// already meets the tolerance.
    ToleranceMetAtInit,
    StoppingRule,
    StageCapReached,
    Stagnation,
    TimeLimit,
}

impl TerminationReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            TerminationReason::ToleranceMetAtInit => "tolerance met at init",
            TerminationReason::StoppingRule => "stopping rule",
            TerminationReason::StageCapReached => "stage cap reached",
            TerminationReason::Stagnation => "stagnation",
            TerminationReason::TimeLimit => "time limit",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub stage: usize,
    pub inner_t: usize,
    pub stage_rank: usize,
    /// Threshold used for this iteration's sparse estimate.
    pub zeta: f64,
    /// σ_{k_q}(M⁽ᵗ⁾) measured after the gradient update.
    pub sigma_k: f64,
    /// σ_{k_q+1}(M⁽ᵗ⁾) measured after the gradient update.
    pub sigma_k1: f64,
    pub s_nnz: usize,
    /// ‖L⁽ᵗ⁺¹⁾ − L⁽ᵗ⁾‖_F for the stall rule.
    pub delta_l: f64,
    /// Wall time since solve start, seconds. Excluded from deterministic
    /// serializations.
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverReport {
    pub records: Vec<IterationRecord>,
    pub termination: TerminationReason,
    pub total_stages: usize,
    pub total_inner_iters: usize,
    /// Indices into `records` where each stage starts.
    pub stage_starts: Vec<usize>,
    /// Resolved parameters actually used.
    pub eta: f64,
    pub sigma_estimate: f64,
    pub inner_iters_t: usize,
    pub epsilon: f64,
    /// Threshold value after the final iteration (drives the second pass
    /// of robust PCA).
    pub final_zeta: f64,
}

impl SolverReport {
    fn new(eta: f64, sigma: f64, t: usize, epsilon: f64, zeta0: f64) -> Self {
        Self {
            records: Vec::new(),
            termination: TerminationReason::ToleranceMetAtInit,
            total_stages: 0,
            total_inner_iters: 0,
            stage_starts: Vec::new(),
            eta,
            sigma_estimate: sigma,
            inner_iters_t: t,
            epsilon,
            final_zeta: zeta0,
        }
    }
}

/// Per-iteration observer; receives the state after each inner step.
pub type Probe<'a> = dyn FnMut(&SolverState, &IterationRecord) + 'a;

/// Everything `inner_step` needs besides the mutable state.
pub struct StepParams<'a> {
    /// P_{Ω_{q,t}}(M): observed values restricted to this iteration's set.
    pub m_on_omega: &'a SparseCoo,
    pub eta: f64,
    pub mu: f64,
    /// Exponent offset in the threshold schedule: ζ uses (1/2)^(t−offset).
    pub exponent_offset: i32,
    pub threshold_mode: ThresholdMode,
    pub svd_opts: SvdOptions,
}

/// Keeps the entries of `a` with |value| strictly below `zeta`
/// (the complement of the hard-thresholded part).
fn filter_below(a: &SparseCoo, zeta: f64) -> SparseCoo {
    let kept: Vec<_> = a.iter().filter(|(_, _, v)| v.abs() < zeta).collect();
    SparseCoo::new(a.nrows(), a.ncols(), kept).expect("subset of valid entries")
}

/// Restriction of sorted samples to a sorted index subset (merge walk).
fn restrict(samples: &SparseCoo, subset: &[(usize, usize)]) -> SparseCoo {
    let entries: Vec<_> = subset
        .iter()
        .map(|&(i, j)| (i, j, samples.get(i, j)))
        .collect();
    SparseCoo::new(samples.nrows(), samples.ncols(), entries).expect("subset of valid indices")
}

/// One inner iteration: sparse estimate by hard thresholding, implicit
/// gradient update, rank-k_q projection, and the threshold refresh.
pub fn inner_step(state: &mut SolverState, params: &StepParams) -> Result<(f64, f64, f64)> {
    let m_on = params.m_on_omega;
    if m_on.is_empty() {
        return Err(Error::InvalidArgument(
            "per-iteration sample set is empty".into(),
        ));
    }
    let (m, n) = (state.l.nrows(), state.l.ncols());
    let mn = (m * n) as f64;
    let count = m_on.nnz() as f64;

    // S⁽ᵗ⁾ = HT_ζ(P_Ω(M − L⁽ᵗ⁾))
    let indices = m_on.indices();
    let l_on = eval_lowrank_entries(&state.l, &indices)?;
    let residual_entries: Vec<_> = m_on
        .iter()
        .zip(l_on.values().iter())
        .map(|((i, j, mv), &lv)| (i, j, mv - lv))
        .collect();
    let residual = SparseCoo::new(m, n, residual_entries)?;
    let s_new = hard_threshold(&residual, state.zeta)?;

    // M⁽ᵗ⁾ = L⁽ᵗ⁾ − (mn/|Ω|)·P_Ω(L⁽ᵗ⁾ + S⁽ᵗ⁾ − M)
    //       = L⁽ᵗ⁾ + (mn/|Ω|)·(residual entries below ζ)
    let below = filter_below(&residual, state.zeta);
    let m_new = StructuredMatrix::new(
        m,
        n,
        Some((1.0, state.l.clone())),
        Some((mn / count, below)),
    )?;

    // L⁽ᵗ⁺¹⁾ = P_{k_q}(M⁽ᵗ⁾), measuring σ_{k_q} and σ_{k_q+1} on the way
    let k = state.stage_rank;
    let want = (k + 1).min(m.min(n));
    let factors = truncated_svd(&m_new, want, &params.svd_opts).map_err(|e| match e {
        Error::SvdConvergence {
            residual,
            tol,
            restarts,
            best,
            ..
        } => Error::SvdConvergence {
            residual,
            tol,
            restarts,
            best,
            context: format!(
                "inner step stage {} t {} rank {}",
                state.stage, state.inner_t, k
            ),
        },
        other => other,
    })?;
    let sigma_k = if factors.rank() >= k {
        factors.sigma()[k - 1]
    } else {
        0.0
    };
    let sigma_k1 = if factors.rank() >= k + 1 {
        factors.sigma()[k]
    } else {
        0.0
    };
    let l_new = factors.truncated(k);
    let delta_l = frob_error(&l_new, &state.l)?;

    // threshold refresh
    let t = state.inner_t as i32;
    let zeta_new = match params.threshold_mode {
        ThresholdMode::Schedule => {
            params.eta * (sigma_k1 + 0.5f64.powi(t - params.exponent_offset) * sigma_k)
        }
        ThresholdMode::AdaptiveSqrt | ThresholdMode::AdaptiveLinear => {
            let divisor = match params.threshold_mode {
                ThresholdMode::AdaptiveSqrt => (m.max(n) as f64).sqrt(),
                _ => m.max(n) as f64,
            };
            // ‖M − S⁽ᵗ⁾‖₂ proxied by the rescaled observed residual
            let merged: Vec<_> = m_on
                .iter()
                .map(|(i, j, v)| (i, j, (mn / count) * v - s_new.get(i, j)))
                .collect();
            let proxy = StructuredMatrix::from_sparse(SparseCoo::new(m, n, merged)?);
            let est = spectral_norm_estimate(&proxy, &params.svd_opts)?;
            params.mu * est / divisor
        }
    };

    state.l = l_new;
    state.s = s_new;
    state.m_struct = m_new;
    state.zeta = zeta_new;
    state.inner_t += 1;
    Ok((sigma_k, sigma_k1, delta_l))
}

const SPLIT_TAG: u64 = 0x7370_6c69_74;
const RPCA_SAMPLE_TAG: u64 = 0x7375_6273;

fn mix_seed(seed: u64, tag: u64) -> u64 {
    // splitmix-style stream derivation
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn solver_svd_opts(seed: u64, strict_pairs: usize) -> SvdOptions {
    SvdOptions {
        oversampling: 10,
        power_iters: 4,
        tol: 1e-6,
        max_restarts: 4,
        seed,
        strict_pairs: Some(strict_pairs),
    }
}

struct Resolved {
    eta: f64,
    sigma: f64,
    t_inner: usize,
    stage_cap: usize,
    exponent_offset: i32,
    stop_dim: f64,
}

fn resolve(obs: &ObservationSet, config: &SolverConfig) -> Result<Resolved> {
    let (m, n) = (obs.nrows, obs.ncols);
    let r = config.target_rank;
    if r > m.min(n) {
        return Err(Error::InvalidArgument(format!(
            "target rank {r} exceeds min dimension {}",
            m.min(n)
        )));
    }
    let eta = config
        .eta
        .unwrap_or_else(|| 4.0 * config.mu * config.mu * r as f64 / m as f64);
    let sigma = match config.sigma {
        Some(s) => s,
        None => {
            let scaled = StructuredMatrix::from_scaled_sparse(1.0 / obs.p, obs.samples.clone());
            let opts = SvdOptions {
                seed: mix_seed(config.seed, 0x51),
                ..SvdOptions::default()
            };
            1.05 * spectral_norm_estimate(&scaled, &opts)?
        }
    };
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(
            "singular value estimate is zero; observed matrix is empty".into(),
        ));
    }
    let t_inner = config
        .inner_iters_override
        .unwrap_or_else(|| default_inner_iters(config.mu, r, sigma, config.epsilon));
    let (default_cap, exponent_offset, stop_dim) = match config.variant {
        SolverVariant::PgRmc => (t_inner, 2, n as f64),
        SolverVariant::RRmc => (r, 0, m as f64),
    };
    let stage_cap = match config.variant {
        SolverVariant::PgRmc => config.max_stages_override.unwrap_or(default_cap),
        // the rank-increment variant cannot exceed r stages
        SolverVariant::RRmc => config.max_stages_override.unwrap_or(r).min(r),
    };
    Ok(Resolved {
        eta,
        sigma,
        t_inner,
        stage_cap,
        exponent_offset,
        stop_dim,
    })
}

/// Stagewise solver with spectral-halving rank selection.
pub fn pg_rmc(
    obs: &ObservationSet,
    config: &SolverConfig,
) -> Result<(LowRankFactors, SolverReport)> {
    let mut cfg = config.clone();
    cfg.variant = SolverVariant::PgRmc;
    solve_with_probe(obs, &cfg, None)
}

/// Rank-increment solver: stage q runs at rank q, at most r stages.
pub fn r_rmc(
    obs: &ObservationSet,
    config: &SolverConfig,
) -> Result<(LowRankFactors, SolverReport)> {
    let mut cfg = config.clone();
    cfg.variant = SolverVariant::RRmc;
    solve_with_probe(obs, &cfg, None)
}

/// Dispatches on `config.variant`.
pub fn solve(obs: &ObservationSet, config: &SolverConfig) -> Result<(LowRankFactors, SolverReport)> {
    solve_with_probe(obs, config, None)
}

/// Matrix completion is the zero-corruption special case; the solver runs
/// unchanged and the thresholding simply finds nothing to remove.
pub fn matrix_completion(
    obs: &ObservationSet,
    config: &SolverConfig,
) -> Result<(LowRankFactors, SolverReport)> {
    pg_rmc(obs, config)
}

/// Full solver loop with an optional per-iteration probe.
pub fn solve_with_probe(
    obs: &ObservationSet,
    config: &SolverConfig,
    mut probe: Option<&mut Probe>,
) -> Result<(LowRankFactors, SolverReport)> {
    config.validate()?;
    let started = Instant::now();
    let (m, n) = (obs.nrows, obs.ncols);
    let mn = (m * n) as f64;
    let r = config.target_rank;
    if obs.samples.is_empty() {
        return Err(Error::InvalidArgument("no observed entries".into()));
    }
    let rp = resolve(obs, config)?;
    let t_inner = rp.t_inner;

    let omega_all: IndexSet = obs.samples.indices();
    let sets: Option<Vec<IndexSet>> = match config.split_mode {
        SplitMode::NoSplit => None,
        mode => {
            let num_sets = match config.variant {
                SolverVariant::PgRmc => rp.stage_cap * t_inner + 1,
                SolverVariant::RRmc => r * t_inner + 1,
            };
            let per_set = (obs.p / num_sets as f64).min(1.0);
            let plan = SplitPlan::new(num_sets, per_set, mode)?;
            Some(split_samples(
                &omega_all,
                obs.p,
                &plan,
                mix_seed(config.seed, SPLIT_TAG),
            )?)
        }
    };

    // init: threshold the raw observations and rescale
    let zeta = rp.eta * rp.sigma;
    let (omega0_vals, omega0_count) = match &sets {
        None => (obs.samples.clone(), obs.samples.nnz()),
        Some(sets) => {
            if sets[0].is_empty() {
                return Err(Error::InvalidArgument(
                    "initialization sample set is empty".into(),
                ));
            }
            (restrict(&obs.samples, &sets[0]), sets[0].len())
        }
    };
    let m0_small = filter_below(&omega0_vals, zeta);
    let mut state = SolverState {
        l: LowRankFactors::zero(m, n),
        s: SparseCoo::empty(m, n),
        m_struct: StructuredMatrix::from_scaled_sparse(mn / omega0_count as f64, m0_small),
        zeta,
        stage: 0,
        stage_rank: 0,
        inner_t: 0,
    };

    let mut report = SolverReport::new(rp.eta, rp.sigma, t_inner, config.epsilon, zeta);
    let stop_threshold = config.epsilon / (2.0 * rp.eta * rp.stop_dim);
    let want_vals = (r + 1).min(m.min(n));
    let mut k_prev = 0usize;
    let mut prev_tail: Option<f64> = None;
    let mut stagnant_stages = 0usize;

    let termination = loop {
        // spectrum of the carried M⁽⁰⁾ drives the stopping rule and the
        // stage rank
        let val_opts = solver_svd_opts(mix_seed(config.seed, 0x100 + state.stage as u64), 0);
        let boundary = truncated_svd(&state.m_struct, want_vals, &val_opts)?;
        let mut singvals: Vec<f64> = boundary.sigma().iter().copied().collect();
        singvals.resize(want_vals, 0.0);
        let sigma_next = if k_prev < singvals.len() {
            singvals[k_prev]
        } else {
            0.0
        };
        if sigma_next <= stop_threshold {
            break if state.stage == 0 {
                TerminationReason::ToleranceMetAtInit
            } else {
                TerminationReason::StoppingRule
            };
        }
        // stagnation: rank pinned at r and the residual spectrum has
        // stopped shrinking across stages
        if k_prev == r {
            if let Some(prev) = prev_tail {
                if sigma_next > 0.9 * prev {
                    stagnant_stages += 1;
                } else {
                    stagnant_stages = 0;
                }
            }
            prev_tail = Some(sigma_next);
            if stagnant_stages >= 2 {
                report.termination = TerminationReason::Stagnation;
                return Err(stalled(
                    format!(
                        "residual spectrum stalled at {:.3e} (threshold {:.3e}) for 3 stages at rank {r}",
                        sigma_next, stop_threshold
                    ),
                    state.l,
                    report,
                ));
            }
        }
        if state.stage >= rp.stage_cap {
            report.termination = TerminationReason::StageCapReached;
            return Err(stalled(
                format!(
                    "stage cap {} reached with σ_{{k+1}} = {:.3e} above threshold {:.3e}",
                    rp.stage_cap, sigma_next, stop_threshold
                ),
                state.l,
                report,
            ));
        }

        state.stage += 1;
        state.stage_rank = match config.variant {
            SolverVariant::PgRmc => select_stage_rank(&singvals, k_prev)?.min(r),
            SolverVariant::RRmc => state.stage,
        };
        report.stage_starts.push(report.records.len());

        for t in 0..=t_inner {
            state.inner_t = t;
            let (m_on, storage);
            match &sets {
                None => m_on = &obs.samples,
                Some(sets) => {
                    let idx = 1 + (state.stage - 1) * t_inner + (t % t_inner.max(1));
                    if sets[idx].is_empty() {
                        return Err(Error::InvalidArgument(format!(
                            "per-iteration sample set {idx} is empty; use no-split mode or raise p"
                        )));
                    }
                    storage = restrict(&obs.samples, &sets[idx]);
                    m_on = &storage;
                }
            }
            let params = StepParams {
                m_on_omega: m_on,
                eta: rp.eta,
                mu: config.mu,
                exponent_offset: rp.exponent_offset,
                threshold_mode: config.threshold_mode,
                svd_opts: solver_svd_opts(
                    mix_seed(config.seed, ((state.stage as u64) << 32) | t as u64),
                    state.stage_rank,
                ),
            };
            let zeta_used = state.zeta;
            let (sigma_k, sigma_k1, delta_l) = inner_step(&mut state, &params)?;
            let record = IterationRecord {
                stage: state.stage,
                inner_t: t,
                stage_rank: state.stage_rank,
                zeta: zeta_used,
                sigma_k,
                sigma_k1,
                s_nnz: state.s.nnz(),
                delta_l,
                wall_time_s: started.elapsed().as_secs_f64(),
            };
            if let Some(p) = probe.as_deref_mut() {
                p(&state, &record);
            }
            report.records.push(record);
            report.total_inner_iters += 1;
            if delta_l <= STALL_FACTOR * config.epsilon {
                break;
            }
            if let Some(limit) = config.time_limit_s {
                if started.elapsed().as_secs_f64() > limit {
                    report.termination = TerminationReason::TimeLimit;
                    report.total_stages = state.stage;
                    report.final_zeta = state.zeta;
                    return Err(stalled(
                        format!("time limit {limit}s exceeded"),
                        state.l,
                        report,
                    ));
                }
            }
        }
        report.total_stages = state.stage;
        k_prev = state.stage_rank;
    };

    report.termination = termination;
    report.total_stages = state.stage;
    report.final_zeta = state.zeta;
    Ok((state.l, report))
}

fn stalled(reason: String, factors: LowRankFactors, report: SolverReport) -> Error {
    Error::SolverStalled {
        reason,
        factors: Box::new(factors),
        report: Box::new(report),
    }
}

/// Robust PCA on a fully observed matrix: subsample at rate p, solve the
/// completion problem, and optionally recover the sparse part with a second
/// pass over all entries at the final threshold.
pub fn rpca(
    mat: &DMatrix<f64>,
    p: f64,
    config: &SolverConfig,
    two_pass: bool,
) -> Result<(LowRankFactors, Option<SparseCoo>, SolverReport)> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "sampling rate must be in (0, 1], got {p}"
        )));
    }
    let (m, n) = (mat.nrows(), mat.ncols());
    let omega = bernoulli_sample(m, n, p, mix_seed(config.seed, RPCA_SAMPLE_TAG))?;
    if omega.is_empty() {
        return Err(Error::InvalidArgument(
            "subsampling produced no observations; raise p".into(),
        ));
    }
    let samples = project_observed(&omega, m, n, |i, j| mat[(i, j)])?;
    let obs = ObservationSet::new(samples, p)?;
    let (l, report) = pg_rmc(&obs, config)?;
    let sparse = if two_pass {
        Some(second_pass(mat, &l, report.final_zeta)?)
    } else {
        None
    };
    Ok((l, sparse, report))
}

/// HT_ζ(M − L̂) over all entries: the second pass of robust PCA.
pub fn second_pass(mat: &DMatrix<f64>, l: &LowRankFactors, zeta: f64) -> Result<SparseCoo> {
    if mat.nrows() != l.nrows() || mat.ncols() != l.ncols() {
        return Err(Error::Dimension(format!(
            "second pass on {}x{} matrix with {}x{} factors",
            mat.nrows(),
            mat.ncols(),
            l.nrows(),
            l.ncols()
        )));
    }
    let mut entries = Vec::new();
    for i in 0..mat.nrows() {
        for j in 0..mat.ncols() {
            let v = mat[(i, j)] - l.entry(i, j);
            if v.abs() >= zeta {
                entries.push((i, j, v));
            }
        }
    }
    SparseCoo::new(mat.nrows(), mat.ncols(), entries)
}
