//! Generic finite-state Markov chain machinery: validation, stationary
//! distributions, n-step transition matrices, seeded path sampling, and
//! empirical transition-matrix estimation from observed state sequences.

use std::fmt;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use ndarray_linalg::LeastSquaresSvd;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack allowed on individual probability entries (`[0 - slack, 1 + slack]`).
pub const ENTRY_TOL: f64 = 1e-12;
/// Tolerance on row sums of a transition matrix.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Tolerance on the stationarity residual `‖πP − π‖∞`.
pub const STATIONARY_TOL: f64 = 1e-8;

/// Derives a per-task seed from a root seed. Parallel Monte Carlo work items
/// (links, trajectories, sweep cells) use `task_seed(root, index)` so results
/// do not depend on scheduling.
pub fn task_seed(root: u64, index: u64) -> u64 {
    root.wrapping_add(index)
}

#[derive(Debug, Error)]
pub enum MarkovError {
    #[error("invalid transition matrix: {}", format_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("chain is reducible; states outside the strongly connected component of '{root}': {states:?}")]
    Reducible { root: String, states: Vec<String> },
    #[error("state index {index} out of range for {count} states")]
    StateOutOfRange { index: usize, count: usize },
    #[error("state sequence too short: need at least 2 states, got {len}")]
    SequenceTooShort { len: usize },
    #[error("no transitions observed")]
    NoTransitions,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// A single invariant violation found by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NotSquare { rows: usize, cols: usize },
    StateCountMismatch { states: usize, rows: usize },
    EntryOutOfRange { row: usize, col: usize, value: f64 },
    RowSumMismatch { row: usize, sum: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NotSquare { rows, cols } => {
                write!(f, "matrix is {rows}x{cols}, not square")
            }
            Violation::StateCountMismatch { states, rows } => {
                write!(f, "{states} state labels for {rows} rows")
            }
            Violation::EntryOutOfRange { row, col, value } => {
                write!(f, "entry ({row}, {col}) = {value} outside [0, 1]")
            }
            Violation::RowSumMismatch { row, sum } => write!(f, "row {row} sums to {sum}"),
        }
    }
}

/// Checks the row-stochastic invariants of a candidate probability matrix.
///
/// Returns an empty vector iff the matrix is square, every entry lies in
/// `[0, 1]` within [`ENTRY_TOL`] and every row sums to 1 within
/// [`ROW_SUM_TOL`].
pub fn validate(probs: &ArrayView2<f64>) -> Vec<Violation> {
    let mut violations = Vec::new();
    let (rows, cols) = probs.dim();
    if rows != cols {
        violations.push(Violation::NotSquare { rows, cols });
    }
    for ((i, j), &v) in probs.indexed_iter() {
        // NaN must fail the range check, hence the negated form.
        if !(v >= -ENTRY_TOL && v <= 1.0 + ENTRY_TOL) {
            violations.push(Violation::EntryOutOfRange {
                row: i,
                col: j,
                value: v,
            });
        }
    }
    for (i, row) in probs.rows().into_iter().enumerate() {
        let sum: f64 = row.sum();
        if !((sum - 1.0).abs() <= ROW_SUM_TOL) {
            violations.push(Violation::RowSumMismatch { row: i, sum });
        }
    }
    violations
}

#[derive(Serialize, Deserialize)]
struct TpmJson {
    states: Vec<String>,
    probs: Vec<Vec<f64>>,
}

/// A row-stochastic transition probability matrix over labeled states.
///
/// Entry `(i, j)` is the probability of moving from state `i` to state `j`
/// in one step. Instances are validated on construction and immutable
/// afterwards, so they are safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    states: Vec<String>,
    probs: Array2<f64>,
}

impl TransitionMatrix {
    pub fn new(states: Vec<String>, probs: Array2<f64>) -> Result<Self, MarkovError> {
        let mut violations = validate(&probs.view());
        if states.len() != probs.nrows() {
            violations.push(Violation::StateCountMismatch {
                states: states.len(),
                rows: probs.nrows(),
            });
        }
        if violations.is_empty() {
            Ok(Self { states, probs })
        } else {
            Err(MarkovError::Invalid(violations))
        }
    }

    /// Builds a matrix from row vectors with default labels `"0"…"N-1"`.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, MarkovError> {
        let n = rows.len();
        for row in &rows {
            if row.len() != n {
                return Err(MarkovError::Invalid(vec![Violation::NotSquare {
                    rows: n,
                    cols: row.len(),
                }]));
            }
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let probs = Array2::from_shape_vec((n, n), flat)
            .map_err(|e| MarkovError::InvalidArgument(e.to_string()))?;
        let states = (0..n).map(|i| i.to_string()).collect();
        Self::new(states, probs)
    }

    /// Replaces the state labels, keeping the probabilities.
    pub fn with_states(self, states: Vec<String>) -> Result<Self, MarkovError> {
        Self::new(states, self.probs)
    }

    pub(crate) fn from_parts_unchecked(states: Vec<String>, probs: Array2<f64>) -> Self {
        Self { states, probs }
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn label(&self, index: usize) -> &str {
        &self.states[index]
    }

    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|s| s == label)
    }

    /// Re-runs the invariant checks on this instance.
    pub fn check(&self) -> Vec<Violation> {
        let mut violations = validate(&self.probs.view());
        if self.states.len() != self.probs.nrows() {
            violations.push(Violation::StateCountMismatch {
                states: self.states.len(),
                rows: self.probs.nrows(),
            });
        }
        violations
    }

    /// States outside the strongly connected component of state 0 in the
    /// support graph (edges where `p > 0`). Empty iff the chain is
    /// irreducible.
    pub fn non_communicating_states(&self) -> Vec<usize> {
        let n = self.n_states();
        let forward = self.reachable(0, false);
        let backward = self.reachable(0, true);
        (0..n).filter(|&i| !(forward[i] && backward[i])).collect()
    }

    pub fn is_irreducible(&self) -> bool {
        self.non_communicating_states().is_empty()
    }

    fn reachable(&self, start: usize, transpose: bool) -> Vec<bool> {
        let n = self.n_states();
        let mut seen = vec![false; n];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let p = if transpose {
                    self.probs[[j, i]]
                } else {
                    self.probs[[i, j]]
                };
                if p > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    }

    /// Solves `πP = π`, `Σπ = 1` for an irreducible chain.
    ///
    /// The linear system `(Pᵀ − I)π = 0` with an appended normalization row
    /// is solved by least squares; this also handles periodic irreducible
    /// chains, which have a unique invariant distribution even though powers
    /// of `P` do not converge.
    pub fn stationary_distribution(&self) -> Result<StationaryDistribution, MarkovError> {
        let missing = self.non_communicating_states();
        if !missing.is_empty() {
            return Err(MarkovError::Reducible {
                root: self.states[0].clone(),
                states: missing.iter().map(|&i| self.states[i].clone()).collect(),
            });
        }
        let pmf = self.solve_invariant()?;
        Ok(StationaryDistribution { pmf })
    }

    fn solve_invariant(&self) -> Result<Array1<f64>, MarkovError> {
        let n = self.n_states();
        let mut a = Array2::<f64>::zeros((n + 1, n));
        for i in 0..n {
            for j in 0..n {
                a[[j, i]] = self.probs[[i, j]];
            }
            a[[i, i]] -= 1.0;
        }
        for j in 0..n {
            a[[n, j]] = 1.0;
        }
        let mut b = Array1::<f64>::zeros(n + 1);
        b[n] = 1.0;
        let solution = a
            .least_squares(&b)
            .map_err(|e| MarkovError::Numerical(format!("stationary solve failed: {e}")))?
            .solution;
        let mut pmf = solution;
        for v in pmf.iter_mut() {
            if *v < 0.0 {
                if *v < -1e-7 {
                    return Err(MarkovError::Numerical(format!(
                        "stationary solve produced negative probability {v}"
                    )));
                }
                *v = 0.0;
            }
        }
        let total: f64 = pmf.sum();
        if !(total > 0.0) {
            return Err(MarkovError::Numerical(
                "stationary solve produced a zero vector".into(),
            ));
        }
        pmf.mapv_inplace(|v| v / total);
        let residual = self.invariance_residual(&pmf);
        if residual > STATIONARY_TOL {
            return Err(MarkovError::Numerical(format!(
                "stationary residual {residual:.3e} exceeds {STATIONARY_TOL:.1e}"
            )));
        }
        Ok(pmf)
    }

    fn invariance_residual(&self, pmf: &Array1<f64>) -> f64 {
        let image = pmf.dot(&self.probs);
        image
            .iter()
            .zip(pmf.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Best-effort invariant distribution that also works for reducible
    /// chains (e.g. chains with an absorbing state): first the linear solve,
    /// then a Cesàro-averaged power iteration from the uniform distribution
    /// as fallback.
    pub fn limiting_distribution(&self) -> Array1<f64> {
        if let Ok(pmf) = self.solve_invariant() {
            return pmf;
        }
        let n = self.n_states();
        let mut mu = Array1::<f64>::from_elem(n, 1.0 / n as f64);
        for _ in 0..1024 {
            mu = mu.dot(&self.probs);
        }
        let mut acc = Array1::<f64>::zeros(n);
        for _ in 0..1024 {
            mu = mu.dot(&self.probs);
            acc += &mu;
        }
        let total = acc.sum();
        acc.mapv_inplace(|v| v / total);
        acc
    }

    /// The `n`-step transition matrix `Pⁿ`, computed by binary
    /// exponentiation.
    ///
    /// # Panics
    ///
    /// Panics if `n == 0`.
    pub fn n_step(&self, n: u32) -> TransitionMatrix {
        assert!(n >= 1, "n_step requires n >= 1");
        let mut result: Option<Array2<f64>> = None;
        let mut base = self.probs.clone();
        let mut e = n;
        while e > 0 {
            if e & 1 == 1 {
                result = Some(match result {
                    None => base.clone(),
                    Some(r) => r.dot(&base),
                });
            }
            e >>= 1;
            if e > 0 {
                base = base.dot(&base);
            }
        }
        Self {
            states: self.states.clone(),
            probs: result.expect("n >= 1"),
        }
    }

    /// Samples a state path of `length` steps (the initial state included).
    /// Reproducible: the same seed always yields the same path.
    pub fn sample_path(
        &self,
        length: usize,
        init: PathInit<'_>,
        seed: u64,
    ) -> Result<StatePath, MarkovError> {
        if length == 0 {
            return Err(MarkovError::InvalidArgument(
                "path length must be positive".into(),
            ));
        }
        let n = self.n_states();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut current = match init {
            PathInit::State(i) => {
                if i >= n {
                    return Err(MarkovError::StateOutOfRange { index: i, count: n });
                }
                i
            }
            PathInit::Pmf(pmf) => {
                if pmf.len() != n {
                    return Err(MarkovError::InvalidArgument(format!(
                        "initial pmf has {} entries for {} states",
                        pmf.len(),
                        n
                    )));
                }
                let sum: f64 = pmf.iter().sum();
                if !(pmf.iter().all(|&p| p >= -ENTRY_TOL) && (sum - 1.0).abs() <= 1e-6) {
                    return Err(MarkovError::InvalidArgument(
                        "initial pmf is not a probability distribution".into(),
                    ));
                }
                draw_index(pmf.iter().copied(), rng.random::<f64>())
            }
        };
        let mut indices = Vec::with_capacity(length);
        indices.push(current);
        for _ in 1..length {
            let u = rng.random::<f64>();
            current = draw_index(self.probs.row(current).iter().copied(), u);
            indices.push(current);
        }
        Ok(StatePath { indices, seed })
    }

    pub fn to_json_string(&self) -> String {
        let doc = TpmJson {
            states: self.states.clone(),
            probs: self
                .probs
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("tpm serialization cannot fail")
    }

    pub fn from_json_str(text: &str) -> Result<Self, MarkovError> {
        let doc: TpmJson = serde_json::from_str(text).map_err(|e| MarkovError::Format {
            path: "<json>".into(),
            message: e.to_string(),
        })?;
        Self::from_rows(doc.probs)?.with_states(doc.states)
    }

    pub fn write_json(&self, path: &Path) -> Result<(), MarkovError> {
        std::fs::write(path, self.to_json_string()).map_err(|e| MarkovError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn read_json(path: &Path) -> Result<Self, MarkovError> {
        let text = std::fs::read_to_string(path).map_err(|e| MarkovError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_json_str(&text).map_err(|e| match e {
            MarkovError::Format { message, .. } => MarkovError::Format {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }
}

/// Draws an index from a probability row via inverse-CDF lookup.
pub(crate) fn draw_index(pmf: impl Iterator<Item = f64>, u: f64) -> usize {
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    let mut count = 0;
    for (j, p) in pmf.enumerate() {
        count = j + 1;
        if p > 0.0 {
            last_positive = j;
        }
        cumulative += p;
        if u < cumulative {
            return j;
        }
    }
    // Rounding left us past the cumulative sum; return the last state with
    // positive mass.
    debug_assert!(count > 0);
    last_positive
}

/// Initial condition for [`TransitionMatrix::sample_path`].
#[derive(Debug, Clone, Copy)]
pub enum PathInit<'a> {
    /// Start in a fixed state.
    State(usize),
    /// Draw the initial state from a probability mass function.
    Pmf(&'a [f64]),
}

impl<'a> From<&'a StationaryDistribution> for PathInit<'a> {
    fn from(sd: &'a StationaryDistribution) -> Self {
        PathInit::Pmf(sd.as_slice())
    }
}

/// Stationary distribution π of an irreducible chain: `πP = π`, `Σπ = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    pmf: Array1<f64>,
}

impl StationaryDistribution {
    pub fn pmf(&self) -> &Array1<f64> {
        &self.pmf
    }

    pub fn as_slice(&self) -> &[f64] {
        self.pmf.as_slice().expect("contiguous")
    }
}

/// A sampled realization of a chain, along with the seed that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatePath {
    pub indices: Vec<usize>,
    pub seed: u64,
}

impl StatePath {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Accumulates transition counts from one or more state sequences.
/// Sequences observed separately never contribute a transition that spans
/// two sequences.
#[derive(Debug, Clone)]
pub struct TransitionCounts {
    counts: Array2<f64>,
    transitions: usize,
}

impl TransitionCounts {
    pub fn new(state_count: usize) -> Self {
        Self {
            counts: Array2::zeros((state_count, state_count)),
            transitions: 0,
        }
    }

    pub fn state_count(&self) -> usize {
        self.counts.nrows()
    }

    pub fn transition_count(&self) -> usize {
        self.transitions
    }

    pub fn observe(&mut self, seq: &[usize]) -> Result<(), MarkovError> {
        let n = self.state_count();
        for &s in seq {
            if s >= n {
                return Err(MarkovError::StateOutOfRange { index: s, count: n });
            }
        }
        for w in seq.windows(2) {
            self.counts[[w[0], w[1]]] += 1.0;
            self.transitions += 1;
        }
        Ok(())
    }

    /// Normalizes the counts into a transition matrix.
    ///
    /// Entry `(i, j)` becomes `(count(i→j) + smoothing) / (count(i→·) +
    /// smoothing·K)`. Rows with zero visits are set to the uniform row and
    /// reported in [`EstimatedTpm::unvisited_rows`].
    pub fn into_estimate(self, smoothing: f64) -> Result<EstimatedTpm, MarkovError> {
        if smoothing < 0.0 {
            return Err(MarkovError::InvalidArgument(
                "smoothing must be nonnegative".into(),
            ));
        }
        if self.transitions == 0 {
            return Err(MarkovError::NoTransitions);
        }
        let n = self.state_count();
        let mut probs = Array2::<f64>::zeros((n, n));
        let mut unvisited = Vec::new();
        for i in 0..n {
            let row_total: f64 = self.counts.row(i).sum();
            if row_total == 0.0 {
                unvisited.push(i);
            }
            let denom = row_total + smoothing * n as f64;
            if denom > 0.0 {
                for j in 0..n {
                    probs[[i, j]] = (self.counts[[i, j]] + smoothing) / denom;
                }
            } else {
                for j in 0..n {
                    probs[[i, j]] = 1.0 / n as f64;
                }
            }
        }
        let states = (0..n).map(|i| i.to_string()).collect();
        Ok(EstimatedTpm {
            tpm: TransitionMatrix::from_parts_unchecked(states, probs),
            unvisited_rows: unvisited,
            transitions: self.transitions,
        })
    }
}

/// Result of empirical transition-matrix estimation.
#[derive(Debug, Clone)]
pub struct EstimatedTpm {
    pub tpm: TransitionMatrix,
    /// Rows that received no observations; these were set to the uniform row
    /// (smoothing 0) or to the all-smoothing row, and callers should surface
    /// them in reports.
    pub unvisited_rows: Vec<usize>,
    /// Total number of observed transitions.
    pub transitions: usize,
}

/// Estimates a transition matrix from a single state sequence.
pub fn estimate_tpm(
    seq: &[usize],
    state_count: usize,
    smoothing: f64,
) -> Result<EstimatedTpm, MarkovError> {
    if seq.len() < 2 {
        return Err(MarkovError::SequenceTooShort { len: seq.len() });
    }
    let mut counts = TransitionCounts::new(state_count);
    counts.observe(seq)?;
    counts.into_estimate(smoothing)
}

/// Reads a state-index sequence from CSV (single `state` column).
pub fn read_state_sequence_csv(path: &Path) -> Result<Vec<usize>, MarkovError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| MarkovError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    {
        let headers = reader.headers().map_err(|e| MarkovError::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if headers.get(0) != Some("state") {
            return Err(MarkovError::Format {
                path: path.display().to_string(),
                message: format!("expected header 'state', got {:?}", headers.get(0)),
            });
        }
    }
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| MarkovError::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let field = record.get(0).unwrap_or("");
        let value: usize = field.parse().map_err(|_| MarkovError::Format {
            path: path.display().to_string(),
            message: format!("line {}: invalid state index '{field}'", line + 2),
        })?;
        out.push(value);
    }
    Ok(out)
}

/// Writes a state-index sequence as CSV with a `state` header.
pub fn write_state_sequence_csv(path: &Path, seq: &[usize]) -> Result<(), MarkovError> {
    let mut text = String::from("state\n");
    for s in seq {
        text.push_str(&s.to_string());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| MarkovError::Io {
        path: path.display().to_string(),
        source: e,
    })
}
