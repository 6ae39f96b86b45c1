//! Mean-square stability analysis of Markov jump linear systems.
//!
//! For modes `A_1 … A_N` switching along a chain with transition matrix `P`,
//! the augmented operator
//!
//! ```text
//! S = (Pᵀ ⊗ I) · blkdiag(A_1⊗A_1, …, A_N⊗A_N)
//! ```
//!
//! decides mean-square stability: the system is mean-square stable iff
//! `ρ(S) < 1`. `S` is the matrix form of the positive map
//! `T(X)_i = Σ_j P_{ji} A_j X_j A_jᵀ` on tuples of matrices; its spectral
//! radius is attained on the cone of positive-semidefinite tuples, which is
//! what the matrix-free power iteration exploits.
//!
//! The i.i.d. (Bernoulli) reduction `R₂(π) = ρ(Σ_i π_i A_i⊗A_i)` replaces
//! the chain by independent draws from its stationary distribution; the two
//! radii coincide exactly when every row of `P` equals `π`. When only the
//! Bernoulli system is stable, subsampling every `n₀`-th step yields a
//! stable process for a large enough drop period `n₀`, found here by
//! scanning `ρ` of the subsampled chain `P^n`.

use ndarray::linalg::kron;
use ndarray::{Array1, Array2};
use ndarray_linalg::EigVals;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::markov::{task_seed, MarkovError, TransitionMatrix};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("model has no modes")]
    EmptyModel,
    #[error("mode {index} is {rows}x{cols}, expected square of dimension {expected}")]
    ModeShape {
        index: usize,
        rows: usize,
        cols: usize,
        expected: usize,
    },
    #[error("chain has {chain} states for {modes} modes")]
    ChainSizeMismatch { chain: usize, modes: usize },
    #[error("operator dimension {dim} exceeds the implicit-operator bound {cap}")]
    DimensionOverflow { dim: usize, cap: usize },
    #[error("power iteration did not converge after {iterations} iterations (estimate {estimate}, residual {residual:.3e})")]
    NonConvergence {
        estimate: f64,
        residual: f64,
        iterations: usize,
    },
    #[error("eigenvalue solve failed: {0}")]
    Eig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Markov(#[from] MarkovError),
}

/// A Markov jump linear system: mode matrices plus the mode chain.
#[derive(Debug, Clone, PartialEq)]
pub struct MjlsModel {
    modes: Vec<Array2<f64>>,
    tpm: TransitionMatrix,
}

impl MjlsModel {
    pub fn new(modes: Vec<Array2<f64>>, tpm: TransitionMatrix) -> Result<Self, AnalysisError> {
        if modes.is_empty() {
            return Err(AnalysisError::EmptyModel);
        }
        let n = modes[0].nrows();
        for (index, mode) in modes.iter().enumerate() {
            if mode.nrows() != n || mode.ncols() != n {
                return Err(AnalysisError::ModeShape {
                    index,
                    rows: mode.nrows(),
                    cols: mode.ncols(),
                    expected: n,
                });
            }
        }
        if tpm.n_states() != modes.len() {
            return Err(AnalysisError::ChainSizeMismatch {
                chain: tpm.n_states(),
                modes: modes.len(),
            });
        }
        Ok(Self { modes, tpm })
    }

    pub fn modes(&self) -> &[Array2<f64>] {
        &self.modes
    }

    pub fn tpm(&self) -> &TransitionMatrix {
        &self.tpm
    }

    /// Mode dimension `n`.
    pub fn mode_dim(&self) -> usize {
        self.modes[0].nrows()
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    /// Dimension of the stability operator, `N·n²`.
    pub fn operator_dim(&self) -> usize {
        self.n_modes() * self.mode_dim() * self.mode_dim()
    }

    /// Replaces the mode chain, keeping the mode matrices.
    pub fn with_tpm(&self, tpm: TransitionMatrix) -> Result<Self, AnalysisError> {
        Self::new(self.modes.clone(), tpm)
    }
}

/// Construction options for [`build_operator`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorOptions {
    /// `S` is materialized as a dense matrix when its dimension is at most
    /// this cap; above it only the matrix-free action is available.
    pub dense_cap: usize,
    /// Hard bound on the operator dimension for the matrix-free path.
    pub implicit_cap: usize,
}

impl Default for OperatorOptions {
    fn default() -> Self {
        Self {
            dense_cap: 8192,
            implicit_cap: 1 << 24,
        }
    }
}

/// The augmented stability operator `S = (Pᵀ⊗I)·blkdiag(A_i⊗A_i)`.
///
/// Always supports the matrix-free action [`StabilityOperator::apply`]; the
/// dense matrix is materialized only below the configured cap.
#[derive(Debug, Clone)]
pub struct StabilityOperator {
    modes: Vec<Array2<f64>>,
    tpm: TransitionMatrix,
    mode_dim: usize,
    dense: Option<Array2<f64>>,
}

pub fn build_operator(
    model: &MjlsModel,
    opts: &OperatorOptions,
) -> Result<StabilityOperator, AnalysisError> {
    let dim = model.operator_dim();
    if dim > opts.implicit_cap {
        return Err(AnalysisError::DimensionOverflow {
            dim,
            cap: opts.implicit_cap,
        });
    }
    let mut op = StabilityOperator {
        modes: model.modes.clone(),
        tpm: model.tpm.clone(),
        mode_dim: model.mode_dim(),
        dense: None,
    };
    if dim <= opts.dense_cap {
        op.dense = Some(op.materialize());
    }
    Ok(op)
}

impl StabilityOperator {
    pub fn dim(&self) -> usize {
        self.modes.len() * self.mode_dim * self.mode_dim
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn mode_dim(&self) -> usize {
        self.mode_dim
    }

    pub fn is_dense(&self) -> bool {
        self.dense.is_some()
    }

    pub fn dense(&self) -> Option<&Array2<f64>> {
        self.dense.as_ref()
    }

    /// Applies `S` to a stacked tuple vector (block `j` is mode `j`'s
    /// matrix flattened row-major): `out_i = Σ_j P_{ji} · A_j X_j A_jᵀ`.
    pub fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        let n = self.mode_dim;
        let nn = n * n;
        let count = self.modes.len();
        debug_assert_eq!(x.len(), count * nn);
        let p = self.tpm.probs();

        let mut images = Vec::with_capacity(count);
        for (j, mode) in self.modes.iter().enumerate() {
            let block = x.slice(ndarray::s![j * nn..(j + 1) * nn]);
            let matrix = block
                .to_shape((n, n))
                .expect("block reshapes to mode dimension");
            images.push(mode.dot(&matrix).dot(&mode.t()));
        }

        let mut out = Array1::<f64>::zeros(count * nn);
        for i in 0..count {
            let mut acc = Array2::<f64>::zeros((n, n));
            for (j, image) in images.iter().enumerate() {
                let weight = p[[j, i]];
                if weight != 0.0 {
                    acc.scaled_add(weight, image);
                }
            }
            out.slice_mut(ndarray::s![i * nn..(i + 1) * nn])
                .assign(&acc.to_shape(nn).expect("flatten"));
        }
        out
    }

    fn materialize(&self) -> Array2<f64> {
        let n = self.mode_dim;
        let nn = n * n;
        let count = self.modes.len();
        let p = self.tpm.probs();
        let mut s = Array2::<f64>::zeros((count * nn, count * nn));
        for (j, mode) in self.modes.iter().enumerate() {
            let kron_block = kron(mode, mode);
            for i in 0..count {
                let weight = p[[j, i]];
                if weight != 0.0 {
                    let mut target =
                        s.slice_mut(ndarray::s![i * nn..(i + 1) * nn, j * nn..(j + 1) * nn]);
                    target.assign(&kron_block);
                    target.mapv_inplace(|v| v * weight);
                }
            }
        }
        s
    }

    /// The block-diagonal factor `D = blkdiag(A_1⊗A_1, …, A_N⊗A_N)`.
    pub fn block_diagonal_factor(&self) -> Array2<f64> {
        let n = self.mode_dim;
        let nn = n * n;
        let count = self.modes.len();
        let mut d = Array2::<f64>::zeros((count * nn, count * nn));
        for (j, mode) in self.modes.iter().enumerate() {
            d.slice_mut(ndarray::s![j * nn..(j + 1) * nn, j * nn..(j + 1) * nn])
                .assign(&kron(mode, mode));
        }
        d
    }

    /// The chain factor `Pᵀ ⊗ I`.
    pub fn chain_factor(&self) -> Array2<f64> {
        let nn = self.mode_dim * self.mode_dim;
        kron(&self.tpm.probs().t().to_owned(), &Array2::eye(nn))
    }
}

/// Which spectral-radius route to take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpectralMethod {
    /// Dense eigensolver below `dense_eig_limit`, power iteration above.
    #[default]
    Auto,
    Dense,
    Power,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralOptions {
    pub method: SpectralMethod,
    /// Relative tolerance on the spectral-radius estimate.
    pub tol: f64,
    pub max_iter: usize,
    /// Largest dimension routed to the dense eigensolver under `Auto`.
    pub dense_eig_limit: usize,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            method: SpectralMethod::Auto,
            tol: 1e-10,
            max_iter: 500_000,
            dense_eig_limit: 1024,
        }
    }
}

/// Spectral-radius result with solver metadata.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralResult {
    pub rho: f64,
    pub method: &'static str,
    pub iterations: usize,
    pub tolerance: f64,
}

/// Spectral radius of a dense matrix: largest eigenvalue magnitude from a
/// general (nonsymmetric) eigensolver.
pub fn spectral_radius_dense(matrix: &Array2<f64>) -> Result<f64, AnalysisError> {
    let eigenvalues = matrix
        .eigvals()
        .map_err(|e| AnalysisError::Eig(e.to_string()))?;
    Ok(eigenvalues.iter().map(|c| c.norm()).fold(0.0, f64::max))
}

/// Spectral radius of a stability operator.
///
/// Dense operators within the eigensolver limit go through the general
/// eigensolver; everything else runs the matrix-free power iteration on
/// tuples of symmetric matrices. Positivity of the underlying map makes the
/// dominant eigenvalue on that cone real and equal to `ρ(S)`, so the
/// iteration starts from the identity tuple (an interior point of the cone)
/// and converges without complex-pair ambiguity; a windowed growth estimate
/// still guards against oscillating peripheral spectrum.
pub fn spectral_radius(
    op: &StabilityOperator,
    opts: &SpectralOptions,
) -> Result<SpectralResult, AnalysisError> {
    let use_dense = match opts.method {
        SpectralMethod::Dense => true,
        SpectralMethod::Power => false,
        SpectralMethod::Auto => op.is_dense() && op.dim() <= opts.dense_eig_limit,
    };
    if use_dense {
        let owned;
        let dense = match op.dense() {
            Some(d) => d,
            None => {
                owned = op.materialize();
                &owned
            }
        };
        let rho = spectral_radius_dense(dense)?;
        return Ok(SpectralResult {
            rho,
            method: "dense",
            iterations: 0,
            tolerance: opts.tol,
        });
    }
    power_iteration(op, opts)
}

/// Window length of the cyclic growth estimate. Highly composite, so the
/// oscillation of any peripheral spectrum with small imprimitivity period
/// cancels exactly in the window mean.
const GROWTH_WINDOW: usize = 720;

fn power_iteration(
    op: &StabilityOperator,
    opts: &SpectralOptions,
) -> Result<SpectralResult, AnalysisError> {
    let dim = op.dim();
    let n = op.mode_dim();
    // Identity tuple: strictly positive interior point of the PSD cone.
    let mut x = Array1::<f64>::zeros(dim);
    for j in 0..op.n_modes() {
        for r in 0..n {
            x[j * n * n + r * n + r] = 1.0;
        }
    }
    let norm = x.dot(&x).sqrt();
    x.mapv_inplace(|v| v / norm);

    // Residual exit for the primitive (non-oscillating) case.
    let residual_tol = (opts.tol * 10.0).max(1e-12);
    // Drift exit on the windowed estimate: if the mean growth over the last
    // window moved less than this against the window before it, either the
    // iteration converged or the oscillation is exactly periodic; both ways
    // the windowed mean is the spectral radius to within the drift.
    let drift_tol = opts.tol;

    let mut log_growths: Vec<f64> = Vec::with_capacity(opts.max_iter.min(1 << 20));
    let mut log_prefix: Vec<f64> = Vec::with_capacity(opts.max_iter.min(1 << 20) + 1);
    log_prefix.push(0.0);
    let mut last_residual = f64::INFINITY;
    let mut last_estimate = f64::NAN;

    for iteration in 1..=opts.max_iter {
        let image = op.apply(&x);
        let growth = image.dot(&image).sqrt();
        if growth == 0.0 {
            // The cone was annihilated: the operator is nilpotent on the
            // positive cone, hence ρ = 0.
            return Ok(SpectralResult {
                rho: 0.0,
                method: "power",
                iterations: iteration,
                tolerance: opts.tol,
            });
        }
        if !growth.is_finite() {
            return Err(AnalysisError::NonConvergence {
                estimate: last_estimate,
                residual: last_residual,
                iterations: iteration,
            });
        }

        // Rayleigh estimate (x is unit length) and eigen-residual.
        let rayleigh = x.dot(&image);
        let residual = {
            let mut r = image.clone();
            r.scaled_add(-rayleigh, &x);
            r.dot(&r).sqrt()
        };
        last_residual = residual;
        if residual <= residual_tol * rayleigh.abs().max(1.0) {
            return Ok(SpectralResult {
                rho: rayleigh.abs(),
                method: "power",
                iterations: iteration,
                tolerance: opts.tol,
            });
        }

        log_growths.push(growth.ln());
        log_prefix.push(log_prefix[log_growths.len() - 1] + growth.ln());
        let k = log_growths.len();
        if k >= 2 * GROWTH_WINDOW {
            let recent = (log_prefix[k] - log_prefix[k - GROWTH_WINDOW]) / GROWTH_WINDOW as f64;
            let earlier = (log_prefix[k - GROWTH_WINDOW] - log_prefix[k - 2 * GROWTH_WINDOW])
                / GROWTH_WINDOW as f64;
            let estimate = recent.exp();
            last_estimate = estimate;
            if (estimate - earlier.exp()).abs() <= drift_tol * estimate.max(1.0) {
                return Ok(SpectralResult {
                    rho: estimate,
                    method: "power",
                    iterations: iteration,
                    tolerance: opts.tol,
                });
            }
        }
        x = image;
        x.mapv_inplace(|v| v / growth);
    }
    Err(AnalysisError::NonConvergence {
        estimate: last_estimate,
        residual: last_residual,
        iterations: opts.max_iter,
    })
}

/// The i.i.d. reduction `R₂(π) = ρ(E[A⊗A]) = ρ(Σ_i π_i A_i⊗A_i)` under the
/// chain's stationary distribution.
pub fn bernoulli_radius(model: &MjlsModel) -> Result<f64, AnalysisError> {
    let pi = model.tpm.stationary_distribution()?;
    let n = model.mode_dim();
    let nn = n * n;
    if nn <= SpectralOptions::default().dense_eig_limit {
        let mut expectation = Array2::<f64>::zeros((nn, nn));
        for (i, mode) in model.modes.iter().enumerate() {
            expectation.scaled_add(pi.pmf()[i], &kron(mode, mode));
        }
        spectral_radius_dense(&expectation)
    } else {
        // Large modes: evaluate as ρ(S) of the chain with identical rows π,
        // which equals R₂(π) exactly.
        let q_rows = vec![pi.pmf().to_vec(); model.n_modes()];
        let q = TransitionMatrix::from_rows(q_rows)?;
        let op = build_operator(&model.with_tpm(q)?, &OperatorOptions::default())?;
        Ok(spectral_radius(
            &op,
            &SpectralOptions {
                method: SpectralMethod::Power,
                ..Default::default()
            },
        )?
        .rho)
    }
}

/// Result of the drop-period search.
#[derive(Debug, Clone, PartialEq)]
pub struct DropPeriodSearch {
    /// Smallest `n ≤ max_n` with `ρ` of the subsampled chain below one, if
    /// any.
    pub n0: Option<u32>,
    /// `(n, ρ)` for every evaluated drop period, in order.
    pub evaluations: Vec<(u32, f64)>,
}

/// Scans drop periods `n = 1, 2, …, max_n` and returns the first for which
/// the process subsampled every `n` steps (mode chain `Pⁿ`) is mean-square
/// stable.
pub fn find_drop_period(model: &MjlsModel, max_n: u32) -> Result<DropPeriodSearch, AnalysisError> {
    if max_n == 0 {
        return Err(AnalysisError::InvalidArgument(
            "max_n must be positive".into(),
        ));
    }
    let opts = OperatorOptions::default();
    let spectral = SpectralOptions::default();
    let mut evaluations = Vec::new();
    let mut power = model.tpm.clone();
    for n in 1..=max_n {
        if n > 1 {
            power = TransitionMatrix::from_parts_unchecked(
                power.states().to_vec(),
                power.probs().dot(model.tpm.probs()),
            );
        }
        let variant = model.with_tpm(power.clone())?;
        let op = build_operator(&variant, &opts)?;
        let rho = spectral_radius(&op, &spectral)?.rho;
        evaluations.push((n, rho));
        if rho < 1.0 {
            return Ok(DropPeriodSearch {
                n0: Some(n),
                evaluations,
            });
        }
    }
    Ok(DropPeriodSearch {
        n0: None,
        evaluations,
    })
}

/// The subsampled system that keeps every `n₀`-th update: mode matrices
/// unchanged, mode chain `P^{n₀}`.
pub fn dropped_message_variant(model: &MjlsModel, n0: u32) -> MjlsModel {
    MjlsModel {
        modes: model.modes.clone(),
        tpm: model.tpm.n_step(n0),
    }
}

/// Options for the Monte Carlo mean-square check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalOptions {
    pub trajectories: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Fraction of the horizon skipped before fitting the decay rate.
    pub fit_skip_fraction: f64,
}

impl Default for EmpiricalOptions {
    fn default() -> Self {
        Self {
            trajectories: 1000,
            horizon: 200,
            seed: 0,
            fit_skip_fraction: 0.025,
        }
    }
}

/// Monte Carlo evidence for or against mean-square stability.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalReport {
    /// Geometric decay rate of `E‖z_k‖²` fitted by least squares on the log
    /// of the tail.
    pub fitted_rate: f64,
    /// Analytical `ρ(S)` of the model.
    pub rho_s: f64,
    pub diverged: bool,
    /// True when the empirical behaviour matches the analytical verdict:
    /// fitted rate within 0.05 of `ρ(S)` for stable models, detected
    /// divergence for clearly unstable ones.
    pub consistent: bool,
    /// Trajectory-averaged `E‖z_k‖²`, normalized to `E‖z_0‖² = 1`.
    pub mean_square: Vec<f64>,
}

/// Averages the per-step second moment over seeded mode paths, then fits a
/// geometric rate to the usable stretch of the curve.
///
/// The initial mode is drawn from the stationary distribution. For a fixed
/// mode path the expectation of `‖z_k‖²` over `z₀` uniform on the unit
/// sphere is exactly `‖A_{θ_{k−1}}⋯A_{θ_0}‖_F²/n`, so each trajectory
/// tracks the running mode product and contributes that conditional
/// expectation; only the mode path itself is sampled. The decay rate is a
/// weighted least-squares slope of the log mean, with per-step weights from
/// the Monte Carlo standard error; steps where the relative standard error
/// of the mean exceeds 1/2 carry no usable information and end the fit
/// window (for heavy-tailed mode products the deep tail of the empirical
/// mean is systematically biased toward the typical-path growth rate).
pub fn empirical_ms_check(
    model: &MjlsModel,
    opts: &EmpiricalOptions,
) -> Result<EmpiricalReport, AnalysisError> {
    if opts.trajectories < 100 {
        return Err(AnalysisError::InvalidArgument(format!(
            "need at least 100 trajectories, got {}",
            opts.trajectories
        )));
    }
    let rho_s = spectral_radius(
        &build_operator(model, &OperatorOptions::default())?,
        &SpectralOptions::default(),
    )?
    .rho;
    let pi = model.tpm.stationary_distribution()?;
    let n = model.mode_dim();
    let horizon = opts.horizon;

    let mut sum = vec![0.0_f64; horizon + 1];
    let mut sum_sq = vec![0.0_f64; horizon + 1];
    for trajectory in 0..opts.trajectories {
        let path = model.tpm.sample_path(
            horizon.max(1),
            crate::markov::PathInit::Pmf(pi.as_slice()),
            task_seed(opts.seed, trajectory as u64),
        )?;
        let mut product = Array2::<f64>::eye(n);
        sum[0] += 1.0;
        sum_sq[0] += 1.0;
        for k in 1..=horizon {
            product = model.modes[path.indices[k - 1]].dot(&product);
            let moment = product.iter().map(|v| v * v).sum::<f64>() / n as f64;
            sum[k] += moment;
            sum_sq[k] += moment * moment;
        }
    }
    let count = opts.trajectories as f64;
    let mean_square: Vec<f64> = sum.iter().map(|s| s / count).collect();

    let skip = (((horizon as f64) * opts.fit_skip_fraction).ceil() as usize).max(1);
    let mut points: Vec<(f64, f64, f64)> = Vec::new();
    for k in skip..=horizon {
        let mean = mean_square[k];
        if !(mean.is_finite() && mean > 1e-280 && mean < 1e280) {
            break;
        }
        let variance = (sum_sq[k] / count - mean * mean).max(0.0);
        let relative_err = (variance / count).sqrt() / mean;
        if relative_err > 0.5 {
            break;
        }
        points.push((
            k as f64,
            mean.ln(),
            1.0 / (relative_err * relative_err + 1e-6),
        ));
    }
    let fitted_rate = weighted_slope_exp(&points);

    let last_valid = mean_square
        .iter()
        .rposition(|&v| v.is_finite() && v > 0.0)
        .unwrap_or(0);
    let diverged = (fitted_rate > 1.0 && mean_square[last_valid] > mean_square[skip.min(last_valid)])
        || mean_square.iter().any(|v| !v.is_finite());

    let consistent = if rho_s < 1.0 {
        (fitted_rate - rho_s).abs() <= 0.05
    } else if rho_s > 1.05 {
        diverged
    } else {
        (fitted_rate - rho_s).abs() <= 0.05 || diverged
    };
    Ok(EmpiricalReport {
        fitted_rate,
        rho_s,
        diverged,
        consistent,
        mean_square,
    })
}

/// Exponential of the weighted least-squares slope over `(k, ln m, w)`.
fn weighted_slope_exp(points: &[(f64, f64, f64)]) -> f64 {
    if points.len() < 2 {
        return f64::NAN;
    }
    let weight_total: f64 = points.iter().map(|p| p.2).sum();
    let mean_k = points.iter().map(|p| p.0 * p.2).sum::<f64>() / weight_total;
    let mean_y = points.iter().map(|p| p.1 * p.2).sum::<f64>() / weight_total;
    let mut num = 0.0;
    let mut den = 0.0;
    for &(k, y, w) in points {
        num += w * (k - mean_k) * (y - mean_y);
        den += w * (k - mean_k) * (k - mean_k);
    }
    (num / den).exp()
}

/// One point of the first-order-consensus sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsilonPoint {
    pub epsilon: f64,
    pub rho_markov: f64,
    pub rho_bernoulli: f64,
}

/// Sweeps the first-order consensus family `A_k = (I − (1/n)𝟙𝟙ᵀ)(I − εL_k)`
/// over `epsilons`, reporting the Markov spectral radius and the Bernoulli
/// reduction at every point.
pub fn epsilon_sweep(
    laplacians: &[Array2<f64>],
    tpm: &TransitionMatrix,
    epsilons: &[f64],
) -> Result<Vec<EpsilonPoint>, AnalysisError> {
    if laplacians.is_empty() {
        return Err(AnalysisError::EmptyModel);
    }
    let n = laplacians[0].nrows();
    for (index, l) in laplacians.iter().enumerate() {
        if l.nrows() != n || l.ncols() != n {
            return Err(AnalysisError::ModeShape {
                index,
                rows: l.nrows(),
                cols: l.ncols(),
                expected: n,
            });
        }
    }
    let centering = Array2::<f64>::eye(n) - Array2::<f64>::from_elem((n, n), 1.0 / n as f64);
    let operator_opts = OperatorOptions::default();
    let spectral_opts = SpectralOptions::default();
    let mut points = Vec::with_capacity(epsilons.len());
    for &epsilon in epsilons {
        let modes: Vec<Array2<f64>> = laplacians
            .iter()
            .map(|l| centering.dot(&(Array2::<f64>::eye(n) - epsilon * l)))
            .collect();
        let model = MjlsModel::new(modes, tpm.clone())?;
        let op = build_operator(&model, &operator_opts)?;
        let rho_markov = spectral_radius(&op, &spectral_opts)?.rho;
        let rho_bernoulli = bernoulli_radius(&model)?;
        points.push(EpsilonPoint {
            epsilon,
            rho_markov,
            rho_bernoulli,
        });
    }
    Ok(points)
}

/// Options for [`analyze`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyzeOptions {
    pub operator: OperatorOptions,
    pub spectral: SpectralOptions,
    /// Upper bound of the drop-period scan when the full chain is unstable.
    pub drop_period_max: u32,
    /// Trajectories/horizon of the decay-bound fit for stable systems.
    pub empirical: EmpiricalOptions,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self {
            operator: OperatorOptions::default(),
            spectral: SpectralOptions::default(),
            drop_period_max: 64,
            empirical: EmpiricalOptions {
                trajectories: 200,
                horizon: 100,
                seed: 0,
                fit_skip_fraction: 0.25,
            },
        }
    }
}

/// Full stability verdict of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    #[serde(rename = "rho_S")]
    pub rho_s: f64,
    pub stable: bool,
    pub rho_bernoulli: f64,
    /// Smallest verified drop period, or `null` when none was found within
    /// the scan bound.
    pub n0: Option<u32>,
    /// Decay-bound scale `α ≥ 1` (stable systems only).
    pub alpha: Option<f64>,
    /// Decay-bound rate `ζ ∈ (ρ(S), 1)` (stable systems only).
    pub zeta: Option<f64>,
    pub method: String,
    pub tolerance: f64,
}

/// Computes `ρ(S)`, the Bernoulli reduction, the drop period and (for
/// stable systems) an explicit mean-square decay bound
/// `E‖z_k‖² ≤ α ζᵏ E‖z₀‖²` with `ζ = ρ(S) + 10⁻³` and `α` fitted from a
/// Monte Carlo run.
pub fn analyze(model: &MjlsModel, opts: &AnalyzeOptions) -> Result<StabilityReport, AnalysisError> {
    let op = build_operator(model, &opts.operator)?;
    let spectral = spectral_radius(&op, &opts.spectral)?;
    let rho_s = spectral.rho;
    let stable = rho_s < 1.0;
    let rho_bernoulli = bernoulli_radius(model)?;
    let n0 = if stable {
        Some(1)
    } else {
        find_drop_period(model, opts.drop_period_max)?.n0
    };
    let (alpha, zeta) = if stable {
        let mut zeta = rho_s + 1e-3;
        if zeta >= 1.0 {
            zeta = 0.5 * (rho_s + 1.0);
        }
        let report = empirical_ms_check(model, &opts.empirical)?;
        let mut alpha = 1.0_f64;
        for (k, &msq) in report.mean_square.iter().enumerate() {
            let bound = zeta.powi(k as i32);
            if bound > 0.0 && msq.is_finite() {
                alpha = alpha.max(msq / bound);
            }
        }
        (Some(alpha), Some(zeta))
    } else {
        (None, None)
    };
    Ok(StabilityReport {
        rho_s,
        stable,
        rho_bernoulli,
        n0,
        alpha,
        zeta,
        method: spectral.method.to_string(),
        tolerance: spectral.tolerance,
    })
}
