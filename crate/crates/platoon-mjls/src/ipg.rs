//! Inter-packet-gap (IPG) link model.
//!
//! Reception logs are quantized to the ten-state gap alphabet
//! {100 ms, 200 ms, …, 1000 ms}, a gap chain is fitted from the quantized
//! sequences, and a sampled gap process is reduced to a per-control-step
//! binary link up/down process: a link counts as up at a control step iff
//! the age of the most recent reception is strictly below the staleness
//! threshold.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::markov::{
    estimate_tpm, EstimatedTpm, MarkovError, TransitionCounts, TransitionMatrix,
};

/// Number of gap states.
pub const IPG_STATE_COUNT: usize = 10;
/// Gap quantum in milliseconds; all gap states are multiples of this.
pub const IPG_QUANTUM_MS: u32 = 100;
/// Largest representable gap; anything rounding above this is obsolete.
pub const IPG_MAX_MS: u32 = 1000;
/// Default staleness threshold: one control step.
pub const DEFAULT_STALENESS_MS: u32 = 100;

#[derive(Debug, Error)]
pub enum IpgError {
    #[error("reception log needs at least 2 timestamps, got {0}")]
    TooFewTimestamps(usize),
    #[error("timestamps must be strictly increasing (violation at position {0})")]
    NonIncreasingTimestamps(usize),
    #[error("gap {0} ms is not a positive multiple of 100 ms at most 1000 ms")]
    InvalidGap(u32),
    #[error("transition matrix is not over the 10-state gap alphabet: {0}")]
    NotIpgAlphabet(String),
    #[error("control step of {0} ms must be positive and divide 100 ms")]
    InvalidStep(u32),
    #[error("horizon must be positive")]
    ZeroHorizon,
    #[error("no usable transitions after quantization")]
    NoUsableTransitions,
    #[error("expected a 2-state link chain, got {0} states")]
    NotTwoState(usize),
    #[error(transparent)]
    Markov(#[from] MarkovError),
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One of the ten quantized gap values: 100 ms, 200 ms, …, 1000 ms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct IpgState(u32);

impl IpgState {
    pub fn new(gap_ms: u32) -> Result<Self, IpgError> {
        if gap_ms == 0 || gap_ms % IPG_QUANTUM_MS != 0 || gap_ms > IPG_MAX_MS {
            return Err(IpgError::InvalidGap(gap_ms));
        }
        Ok(Self(gap_ms))
    }

    pub fn from_index(index: usize) -> Result<Self, IpgError> {
        if index >= IPG_STATE_COUNT {
            return Err(IpgError::InvalidGap((index as u32 + 1) * IPG_QUANTUM_MS));
        }
        Ok(Self((index as u32 + 1) * IPG_QUANTUM_MS))
    }

    pub fn gap_ms(&self) -> u32 {
        self.0
    }

    /// Index into the canonical alphabet: 100 ms ↦ 0, …, 1000 ms ↦ 9.
    pub fn index(&self) -> usize {
        (self.0 / IPG_QUANTUM_MS) as usize - 1
    }

    /// Canonical state labels `"100"…"1000"`.
    pub fn canonical_labels() -> Vec<String> {
        (1..=IPG_STATE_COUNT as u32)
            .map(|i| (i * IPG_QUANTUM_MS).to_string())
            .collect()
    }
}

/// Scenario metadata attached to a reception log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LogMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_m: Option<f64>,
    /// Vehicle density label ("low" / "moderate" / "high"); opaque.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<String>,
    /// Communication mode label ("base" / "cc"); opaque.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
}

/// Reception times of packets from one transmitter at one receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceptionLog {
    timestamps_ms: Vec<f64>,
    pub source_id: String,
    pub receiver_id: String,
    pub metadata: LogMetadata,
}

impl ReceptionLog {
    pub fn new(
        timestamps_ms: Vec<f64>,
        source_id: impl Into<String>,
        receiver_id: impl Into<String>,
    ) -> Result<Self, IpgError> {
        for (i, pair) in timestamps_ms.windows(2).enumerate() {
            if !(pair[1] > pair[0]) {
                return Err(IpgError::NonIncreasingTimestamps(i + 1));
            }
        }
        Ok(Self {
            timestamps_ms,
            source_id: source_id.into(),
            receiver_id: receiver_id.into(),
            metadata: LogMetadata::default(),
        })
    }

    pub fn with_metadata(mut self, metadata: LogMetadata) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn timestamps_ms(&self) -> &[f64] {
        &self.timestamps_ms
    }
}

/// Quantized gap sequence of one log, plus the number of gaps dropped as
/// obsolete.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedIpg {
    pub states: Vec<IpgState>,
    pub dropped: usize,
}

impl QuantizedIpg {
    pub fn indices(&self) -> Vec<usize> {
        self.states.iter().map(|s| s.index()).collect()
    }
}

/// Quantizes consecutive reception gaps to the nearest 100 ms multiple.
///
/// Gaps are clamped below at 100 ms; gaps that would round above 1000 ms
/// (i.e. raw gaps beyond 1050 ms) are dropped and counted instead of being
/// emitted.
pub fn quantize(log: &ReceptionLog) -> Result<QuantizedIpg, IpgError> {
    if log.timestamps_ms.len() < 2 {
        return Err(IpgError::TooFewTimestamps(log.timestamps_ms.len()));
    }
    let mut states = Vec::with_capacity(log.timestamps_ms.len() - 1);
    let mut dropped = 0;
    for pair in log.timestamps_ms.windows(2) {
        let gap = pair[1] - pair[0];
        if gap > 1050.0 {
            dropped += 1;
            continue;
        }
        let quantum = (gap / IPG_QUANTUM_MS as f64).round().clamp(1.0, 10.0) as u32;
        states.push(IpgState(quantum * IPG_QUANTUM_MS));
    }
    Ok(QuantizedIpg { states, dropped })
}

/// Result of fitting the gap chain from a set of reception logs.
#[derive(Debug, Clone)]
pub struct IpgChainFit {
    /// 10-state estimate with canonical labels; unvisited rows flagged.
    pub estimate: EstimatedTpm,
    /// Total number of gaps dropped as obsolete across all logs.
    pub dropped: usize,
}

/// Fits the 10-state gap chain from quantized reception logs.
///
/// Each log is counted independently, so no transition spans two logs.
/// Logs with fewer than two timestamps contribute nothing.
pub fn fit_ipg_chain(logs: &[ReceptionLog], smoothing: f64) -> Result<IpgChainFit, IpgError> {
    let mut counts = TransitionCounts::new(IPG_STATE_COUNT);
    let mut dropped = 0;
    for log in logs {
        if log.timestamps_ms.len() < 2 {
            continue;
        }
        let q = quantize(log)?;
        dropped += q.dropped;
        counts.observe(&q.indices())?;
    }
    let estimate = match counts.into_estimate(smoothing) {
        Ok(est) => est,
        Err(MarkovError::NoTransitions) => return Err(IpgError::NoUsableTransitions),
        Err(e) => return Err(e.into()),
    };
    let tpm = estimate.tpm.with_states(IpgState::canonical_labels())?;
    Ok(IpgChainFit {
        estimate: EstimatedTpm { tpm, ..estimate },
        dropped,
    })
}

/// Builds a 10-state gap chain from raw rows, applying canonical labels.
pub fn ipg_chain_from_rows(rows: Vec<Vec<f64>>) -> Result<TransitionMatrix, IpgError> {
    if rows.len() != IPG_STATE_COUNT {
        return Err(IpgError::NotIpgAlphabet(format!(
            "{} rows instead of {}",
            rows.len(),
            IPG_STATE_COUNT
        )));
    }
    Ok(TransitionMatrix::from_rows(rows)?.with_states(IpgState::canonical_labels())?)
}

fn ensure_ipg_chain(chain: &TransitionMatrix) -> Result<(), IpgError> {
    if chain.n_states() != IPG_STATE_COUNT {
        return Err(IpgError::NotIpgAlphabet(format!(
            "{} states",
            chain.n_states()
        )));
    }
    let labels = IpgState::canonical_labels();
    for (i, expected) in labels.iter().enumerate() {
        if chain.label(i) != expected {
            return Err(IpgError::NotIpgAlphabet(format!(
                "state {} labeled '{}', expected '{}'",
                i,
                chain.label(i),
                expected
            )));
        }
    }
    Ok(())
}

/// Per-control-step link availability derived from a gap process.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkProcess {
    pub up: Vec<bool>,
    pub staleness_threshold_ms: u32,
}

impl LinkProcess {
    pub fn up_fraction(&self) -> f64 {
        if self.up.is_empty() {
            return 0.0;
        }
        self.up.iter().filter(|&&b| b).count() as f64 / self.up.len() as f64
    }
}

/// Simulates the binary link process induced by a gap chain.
///
/// Reception instants accumulate sampled gaps starting from a reception at
/// time zero, with the initial gap state drawn from the chain's invariant
/// distribution. At control step `k` (time `k·step_ms`) the link is up iff
/// the age of the most recent reception is strictly below
/// `staleness_threshold_ms`. Deterministic per seed.
pub fn link_process(
    ipg_chain: &TransitionMatrix,
    horizon_steps: usize,
    step_ms: u32,
    staleness_threshold_ms: u32,
    seed: u64,
) -> Result<LinkProcess, IpgError> {
    ensure_ipg_chain(ipg_chain)?;
    if horizon_steps == 0 {
        return Err(IpgError::ZeroHorizon);
    }
    if step_ms == 0 || IPG_QUANTUM_MS % step_ms != 0 {
        return Err(IpgError::InvalidStep(step_ms));
    }
    let init = ipg_chain.limiting_distribution();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = crate::markov::draw_index(init.iter().copied(), rng.random::<f64>());

    let end_ms = horizon_steps as u64 * step_ms as u64;
    let mut receptions: Vec<u64> = vec![0];
    let mut t: u64 = 0;
    while t < end_ms {
        t += (state as u64 + 1) * IPG_QUANTUM_MS as u64;
        receptions.push(t);
        let u = rng.random::<f64>();
        state = crate::markov::draw_index(ipg_chain.probs().row(state).iter().copied(), u);
    }

    let mut up = vec![false; horizon_steps];
    let mut latest = 0usize;
    for (k, flag) in up.iter_mut().enumerate() {
        let tk = k as u64 * step_ms as u64;
        while latest + 1 < receptions.len() && receptions[latest + 1] <= tk {
            latest += 1;
        }
        let age = tk - receptions[latest];
        *flag = age < staleness_threshold_ms as u64;
    }
    Ok(LinkProcess {
        up,
        staleness_threshold_ms,
    })
}

/// A 2-state link connectivity chain with a known up-state index.
///
/// Chains labeled `"up"`/`"down"` are resolved by label; unlabeled 2-state
/// chains follow the bit convention state 0 = down, state 1 = up.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkChain {
    pub tpm: TransitionMatrix,
    pub up_index: usize,
    /// Rows of the estimate that were never visited (propagated flag).
    pub unvisited: Vec<usize>,
}

impl LinkChain {
    pub fn from_tpm(tpm: TransitionMatrix) -> Result<Self, IpgError> {
        if tpm.n_states() != 2 {
            return Err(IpgError::NotTwoState(tpm.n_states()));
        }
        let up_index = match (tpm.state_index("up"), tpm.state_index("down")) {
            (Some(u), Some(_)) => u,
            _ => 1,
        };
        Ok(Self {
            tpm,
            up_index,
            unvisited: Vec::new(),
        })
    }

    pub fn down_index(&self) -> usize {
        1 - self.up_index
    }

    /// Stationary probability of the up state.
    pub fn up_stationary(&self) -> Result<f64, MarkovError> {
        Ok(self.tpm.stationary_distribution()?.pmf()[self.up_index])
    }
}

/// Estimates the 2-state up/down chain of a link by sampling its binary
/// process for `sample_steps` control steps and counting transitions.
pub fn link_tpm(
    ipg_chain: &TransitionMatrix,
    step_ms: u32,
    staleness_threshold_ms: u32,
    sample_steps: usize,
    seed: u64,
) -> Result<LinkChain, IpgError> {
    if sample_steps < 2 {
        return Err(IpgError::ZeroHorizon);
    }
    let process = link_process(ipg_chain, sample_steps, step_ms, staleness_threshold_ms, seed)?;
    let seq: Vec<usize> = process.up.iter().map(|&b| if b { 0 } else { 1 }).collect();
    let estimate = estimate_tpm(&seq, 2, 0.0)?;
    let tpm = estimate
        .tpm
        .with_states(vec!["up".into(), "down".into()])?;
    Ok(LinkChain {
        tpm,
        up_index: 0,
        unvisited: estimate.unvisited_rows,
    })
}

/// Reads reception logs from CSV with header `timestamp_ms,source_id,receiver_id`.
///
/// Rows are grouped into one log per (source, receiver) pair in order of
/// first appearance; timestamps within a pair must be strictly increasing.
/// If a sidecar file named `<path>.meta.json` exists, its metadata is
/// attached to every log from the file.
pub fn read_reception_logs_csv(path: &Path) -> Result<Vec<ReceptionLog>, IpgError> {
    let format_err = |message: String| IpgError::Format {
        path: path.display().to_string(),
        message,
    };
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| format_err(e.to_string()))?;
    {
        let headers = reader.headers().map_err(|e| format_err(e.to_string()))?;
        let expected = ["timestamp_ms", "source_id", "receiver_id"];
        for (i, name) in expected.iter().enumerate() {
            if headers.get(i) != Some(name) {
                return Err(format_err(format!(
                    "expected header '{}', got {:?}",
                    expected.join(","),
                    headers
                )));
            }
        }
    }
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: std::collections::HashMap<(String, String), Vec<f64>> =
        std::collections::HashMap::new();
    for (line, record) in reader.records().enumerate() {
        let line_no = line + 2; // header is line 1
        let record = record.map_err(|e| format_err(format!("line {line_no}: {e}")))?;
        let ts: f64 = record
            .get(0)
            .unwrap_or("")
            .parse()
            .map_err(|_| format_err(format!(
                "line {line_no}: invalid timestamp '{}'",
                record.get(0).unwrap_or("")
            )))?;
        let source = record.get(1).unwrap_or("").to_string();
        let receiver = record.get(2).unwrap_or("").to_string();
        let key = (source, receiver);
        let entry = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key.clone());
            Vec::new()
        });
        if let Some(&last) = entry.last() {
            if !(ts > last) {
                return Err(format_err(format!(
                    "line {line_no}: timestamp {ts} not strictly increasing for pair {}->{}",
                    key.0, key.1
                )));
            }
        }
        entry.push(ts);
    }
    let metadata = read_sidecar_metadata(path)?;
    let mut logs = Vec::with_capacity(order.len());
    for key in order {
        let timestamps = groups.remove(&key).expect("grouped");
        let mut log = ReceptionLog::new(timestamps, key.0, key.1)?;
        if let Some(meta) = &metadata {
            log = log.with_metadata(meta.clone());
        }
        logs.push(log);
    }
    Ok(logs)
}

fn read_sidecar_metadata(csv_path: &Path) -> Result<Option<LogMetadata>, IpgError> {
    let mut sidecar = csv_path.as_os_str().to_owned();
    sidecar.push(".meta.json");
    let sidecar = Path::new(&sidecar);
    if !sidecar.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(sidecar).map_err(|e| IpgError::Io {
        path: sidecar.display().to_string(),
        source: e,
    })?;
    let meta = serde_json::from_str(&text).map_err(|e| IpgError::Format {
        path: sidecar.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(Some(meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::PathInit;

    fn degenerate_chain(state: usize) -> TransitionMatrix {
        let mut rows = vec![vec![0.0; 10]; 10];
        for row in rows.iter_mut() {
            row[state] = 1.0;
        }
        ipg_chain_from_rows(rows).unwrap()
    }

    #[test]
    fn quantize_exact_multiples() {
        let log = ReceptionLog::new(vec![0.0, 100.0, 200.0], "a", "b").unwrap();
        let q = quantize(&log).unwrap();
        assert_eq!(q.states, vec![IpgState(100), IpgState(100)]);
        assert_eq!(q.dropped, 0);
    }

    #[test]
    fn quantize_rounds_to_nearest() {
        let log = ReceptionLog::new(vec![0.0, 270.0], "a", "b").unwrap();
        let q = quantize(&log).unwrap();
        assert_eq!(q.states, vec![IpgState(300)]);
    }

    #[test]
    fn quantize_drops_obsolete() {
        let log = ReceptionLog::new(vec![0.0, 1400.0, 1500.0], "a", "b").unwrap();
        let q = quantize(&log).unwrap();
        assert_eq!(q.states, vec![IpgState(100)]);
        assert_eq!(q.dropped, 1);
    }

    #[test]
    fn quantize_clamps_small_gaps() {
        let log = ReceptionLog::new(vec![0.0, 30.0], "a", "b").unwrap();
        let q = quantize(&log).unwrap();
        assert_eq!(q.states, vec![IpgState(100)]);
    }

    #[test]
    fn quantize_boundary_1050_kept() {
        let log = ReceptionLog::new(vec![0.0, 1050.0], "a", "b").unwrap();
        let q = quantize(&log).unwrap();
        assert_eq!(q.states, vec![IpgState(1000)]);
        assert_eq!(q.dropped, 0);
        let log = ReceptionLog::new(vec![0.0, 1050.1], "a", "b").unwrap();
        assert_eq!(quantize(&log).unwrap().dropped, 1);
    }

    #[test]
    fn quantize_needs_two_timestamps() {
        let log = ReceptionLog::new(vec![0.0], "a", "b").unwrap();
        assert!(matches!(quantize(&log), Err(IpgError::TooFewTimestamps(1))));
    }

    #[test]
    fn reception_log_rejects_non_increasing() {
        assert!(matches!(
            ReceptionLog::new(vec![0.0, 100.0, 100.0], "a", "b"),
            Err(IpgError::NonIncreasingTimestamps(2))
        ));
    }

    #[test]
    fn fit_single_state_occupancy() {
        let ts: Vec<f64> = (0..50).map(|i| i as f64 * 100.0).collect();
        let log = ReceptionLog::new(ts, "a", "b").unwrap();
        let fit = fit_ipg_chain(&[log], 0.0).unwrap();
        let tpm = &fit.estimate.tpm;
        assert_eq!(tpm.probs()[[0, 0]], 1.0);
        assert_eq!(fit.estimate.unvisited_rows, (1..10).collect::<Vec<_>>());
        for i in 1..10 {
            assert!((tpm.probs()[[i, 0]] - 0.1).abs() < 1e-15);
        }
        assert_eq!(tpm.label(0), "100");
        assert_eq!(tpm.label(9), "1000");
    }

    #[test]
    fn fit_counts_logs_independently() {
        // Two logs: transitions 100→200 in one, 300→400 in the other. The
        // boundary between logs must not create a 200→300 transition.
        let log1 = ReceptionLog::new(vec![0.0, 100.0, 300.0], "a", "b").unwrap();
        let log2 = ReceptionLog::new(vec![0.0, 300.0, 700.0], "c", "b").unwrap();
        let fit = fit_ipg_chain(&[log1, log2], 0.0).unwrap();
        let probs = fit.estimate.tpm.probs();
        assert_eq!(probs[[0, 1]], 1.0); // 100 → 200
        assert_eq!(probs[[2, 3]], 1.0); // 300 → 400
        assert_eq!(fit.estimate.transitions, 2);
    }

    #[test]
    fn fit_requires_usable_transitions() {
        let log = ReceptionLog::new(vec![0.0, 5000.0], "a", "b").unwrap();
        assert!(matches!(
            fit_ipg_chain(&[log], 0.0),
            Err(IpgError::NoUsableTransitions)
        ));
    }

    #[test]
    fn link_process_always_fresh() {
        let chain = degenerate_chain(0);
        let p = link_process(&chain, 50, 100, 100, 1).unwrap();
        assert!(p.up.iter().all(|&b| b));
    }

    #[test]
    fn link_process_one_up_in_ten() {
        let chain = degenerate_chain(9);
        let p = link_process(&chain, 100, 100, 100, 1).unwrap();
        // Receptions at 0, 1000, 2000, …: fresh only at steps 0, 10, 20, …
        for (k, &up) in p.up.iter().enumerate() {
            assert_eq!(up, k % 10 == 0, "step {k}");
        }
        assert_eq!(p.up.iter().filter(|&&b| b).count(), 10);
    }

    #[test]
    fn link_process_threshold_at_obsolescence_is_all_up() {
        let mut rows = vec![vec![0.1; 10]; 10];
        for row in rows.iter_mut() {
            let sum: f64 = row.iter().sum();
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let chain = ipg_chain_from_rows(rows).unwrap();
        let p = link_process(&chain, 500, 100, 1000, 3).unwrap();
        assert!(p.up.iter().all(|&b| b));
    }

    #[test]
    fn link_process_rejects_bad_step() {
        let chain = degenerate_chain(0);
        assert!(matches!(
            link_process(&chain, 10, 30, 100, 1),
            Err(IpgError::InvalidStep(30))
        ));
        assert!(matches!(
            link_process(&chain, 0, 100, 100, 1),
            Err(IpgError::ZeroHorizon)
        ));
    }

    #[test]
    fn link_process_deterministic_per_seed() {
        let mut rows = vec![vec![0.0; 10]; 10];
        for row in rows.iter_mut() {
            row[0] = 0.5;
            row[4] = 0.5;
        }
        let chain = ipg_chain_from_rows(rows).unwrap();
        let a = link_process(&chain, 1000, 100, 100, 11).unwrap();
        let b = link_process(&chain, 1000, 100, 100, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn up_fraction_monotone_in_threshold() {
        let mut rows = vec![vec![0.01; 10]; 10];
        for (i, row) in rows.iter_mut().enumerate() {
            row[i] += 1.0 - 0.1;
            let sum: f64 = row.iter().sum();
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let chain = ipg_chain_from_rows(rows).unwrap();
        let mut previous = -1.0;
        for threshold in [0, 100, 200, 500, 1000] {
            let p = link_process(&chain, 2000, 100, threshold, 5).unwrap();
            let fraction = p.up_fraction();
            assert!(
                fraction >= previous,
                "threshold {threshold}: {fraction} < {previous}"
            );
            previous = fraction;
        }
    }

    #[test]
    fn link_tpm_absorbing_up() {
        let chain = degenerate_chain(0);
        let link = link_tpm(&chain, 100, 100, 1000, 1).unwrap();
        assert_eq!(link.up_index, 0);
        assert_eq!(link.tpm.probs()[[0, 0]], 1.0);
        assert_eq!(link.tpm.probs()[[0, 1]], 0.0);
        assert_eq!(link.tpm.probs()[[1, 0]], 0.5);
        assert_eq!(link.unvisited, vec![1]);
    }

    #[test]
    fn link_tpm_all_up_when_threshold_large() {
        let chain = degenerate_chain(4); // every gap 500 ms ≤ threshold
        let link = link_tpm(&chain, 100, 1000, 1000, 1).unwrap();
        assert_eq!(link.tpm.probs()[[0, 0]], 1.0);
    }

    #[test]
    fn link_chain_label_resolution() {
        let tpm = TransitionMatrix::from_rows(vec![vec![0.9, 0.1], vec![0.5, 0.5]])
            .unwrap()
            .with_states(vec!["down".into(), "up".into()])
            .unwrap();
        let link = LinkChain::from_tpm(tpm).unwrap();
        assert_eq!(link.up_index, 1);
    }

    #[test]
    fn link_chain_default_convention() {
        let tpm = TransitionMatrix::from_rows(vec![vec![0.9, 0.1], vec![0.5, 0.5]]).unwrap();
        let link = LinkChain::from_tpm(tpm).unwrap();
        assert_eq!(link.up_index, 1);
        assert_eq!(link.down_index(), 0);
    }

    #[test]
    fn reception_csv_round_trip_with_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("logs.csv");
        std::fs::write(
            &path,
            "timestamp_ms,source_id,receiver_id\n0,v0,v2\n100,v0,v2\n0,v1,v2\n250,v1,v2\n",
        )
        .unwrap();
        std::fs::write(
            dir.path().join("logs.csv.meta.json"),
            r#"{"distance_m": 100.0, "density": "moderate", "mode": "cc"}"#,
        )
        .unwrap();
        let logs = read_reception_logs_csv(&path).unwrap();
        assert_eq!(logs.len(), 2);
        assert_eq!(logs[0].source_id, "v0");
        assert_eq!(logs[0].timestamps_ms(), &[0.0, 100.0]);
        assert_eq!(logs[1].timestamps_ms(), &[0.0, 250.0]);
        assert_eq!(logs[0].metadata.distance_m, Some(100.0));
        assert_eq!(logs[0].metadata.mode.as_deref(), Some("cc"));
    }

    #[test]
    fn reception_csv_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "timestamp_ms,source_id,receiver_id\n0,v0,v2\nnope,v0,v2\n",
        )
        .unwrap();
        let err = read_reception_logs_csv(&path).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn sampled_ipg_chain_recovers_tpm() {
        // Round trip at moderate scale; the full-scale version lives in the
        // acceptance suite.
        let mut rows = vec![vec![0.05; 10]; 10];
        for (i, row) in rows.iter_mut().enumerate() {
            row[i] += 0.5;
            let sum: f64 = row.iter().sum();
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let chain = ipg_chain_from_rows(rows).unwrap();
        let pi = chain.stationary_distribution().unwrap();
        let path = chain
            .sample_path(200_000, PathInit::Pmf(pi.as_slice()), 77)
            .unwrap();
        let est = estimate_tpm(&path.indices, 10, 0.0).unwrap();
        let max_err = est
            .tpm
            .probs()
            .iter()
            .zip(chain.probs().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 0.02, "max error {max_err}");
    }
}
