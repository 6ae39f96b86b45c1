//! Platoon information-flow topologies.
//!
//! The platoon follows the all-predecessor-leader-following pattern: every
//! vehicle always hears its immediate predecessor (radar), and every link to
//! a farther predecessor is an erasure-prone communication link. With `N`
//! vehicles that gives `m = (N−1)(N−2)/2` random links and `2^m` joint
//! connectivity states, ordered by bitmask: state index 0 has all random
//! links down, state `2^m − 1` is fully connected.

use ndarray::Array2;
use thiserror::Error;

use crate::ipg::{link_process, IpgError, LinkChain};
use crate::markov::{task_seed, MarkovError, TransitionCounts, TransitionMatrix};

/// Largest number of random links for which the joint chain (a `2^m × 2^m`
/// matrix) may be built.
pub const MAX_CHAIN_LINKS: usize = 12;
/// Largest number of random links for which topologies may be enumerated.
pub const MAX_ENUM_LINKS: usize = 20;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("platoon needs at least 2 vehicles, got {0}")]
    InvalidVehicleCount(usize),
    #[error("{m} random links exceed the supported maximum of {max}")]
    TooManyLinks { m: usize, max: usize },
    #[error("got {got} link chains, expected 1 or {expected}")]
    ChainCountMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Ipg(#[from] IpgError),
    #[error(transparent)]
    Markov(#[from] MarkovError),
}

/// Link structure of the platoon graph.
///
/// `deterministic_links` are the radar links `(i, i−1)`;
/// `random_links` are all `(i, j)` with `j ≤ i−2` in lexicographic order,
/// and random link `k` corresponds to bit `k` of a topology bitmask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlatoonGraphSpec {
    n_vehicles: usize,
    deterministic_links: Vec<(usize, usize)>,
    random_links: Vec<(usize, usize)>,
}

impl PlatoonGraphSpec {
    pub fn new(n_vehicles: usize) -> Result<Self, TopologyError> {
        if n_vehicles < 2 {
            return Err(TopologyError::InvalidVehicleCount(n_vehicles));
        }
        let deterministic_links = (1..n_vehicles).map(|i| (i, i - 1)).collect();
        let mut random_links = Vec::new();
        for receiver in 2..n_vehicles {
            for source in 0..=receiver - 2 {
                random_links.push((receiver, source));
            }
        }
        Ok(Self {
            n_vehicles,
            deterministic_links,
            random_links,
        })
    }

    pub fn n_vehicles(&self) -> usize {
        self.n_vehicles
    }

    /// Number of erasure-prone links, `m = (N−1)(N−2)/2`.
    pub fn random_link_count(&self) -> usize {
        self.random_links.len()
    }

    pub fn deterministic_links(&self) -> &[(usize, usize)] {
        &self.deterministic_links
    }

    pub fn random_links(&self) -> &[(usize, usize)] {
        &self.random_links
    }

    pub fn topology_count(&self) -> usize {
        1usize << self.random_link_count()
    }

    /// Bitmask with every random link up.
    pub fn full_mask(&self) -> u64 {
        if self.random_link_count() == 0 {
            0
        } else {
            (1u64 << self.random_link_count()) - 1
        }
    }
}

/// One joint connectivity state: a bitmask over the random links plus the
/// induced information-access matrix.
///
/// `access[(i, j)]` is true iff vehicle `i` (receiver row) has information
/// about vehicle `j` (source column); sources always precede receivers, so
/// only entries below the diagonal can be set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopologyState {
    bitmask: u64,
    access: Array2<bool>,
}

impl TopologyState {
    pub fn from_bitmask(bitmask: u64, spec: &PlatoonGraphSpec) -> Self {
        let n = spec.n_vehicles();
        let mut access = Array2::from_elem((n, n), false);
        for &(i, j) in spec.deterministic_links() {
            access[[i, j]] = true;
        }
        for (k, &(i, j)) in spec.random_links().iter().enumerate() {
            if bitmask >> k & 1 == 1 {
                access[[i, j]] = true;
            }
        }
        Self { bitmask, access }
    }

    pub fn bitmask(&self) -> u64 {
        self.bitmask
    }

    pub fn access(&self) -> &Array2<bool> {
        &self.access
    }

    pub fn is_link_up(&self, link_index: usize) -> bool {
        self.bitmask >> link_index & 1 == 1
    }

    /// Bitmask label, e.g. `"0b101001"` for six links.
    pub fn label(&self, link_count: usize) -> String {
        format!("0b{:0width$b}", self.bitmask, width = link_count.max(1))
    }
}

/// Enumerates all `2^m` topology states in bitmask order.
pub fn enumerate_topologies(spec: &PlatoonGraphSpec) -> Result<Vec<TopologyState>, TopologyError> {
    let m = spec.random_link_count();
    if m > MAX_ENUM_LINKS {
        return Err(TopologyError::TooManyLinks {
            m,
            max: MAX_ENUM_LINKS,
        });
    }
    Ok((0..1u64 << m)
        .map(|mask| TopologyState::from_bitmask(mask, spec))
        .collect())
}

/// Directed in-degree Laplacian over the follower vehicles `1…N−1`.
///
/// `L = D − A` where `D` is the total in-degree (leader links included) and
/// `A` the follower-to-follower adjacency; the leader's influence enters the
/// closed loop through the reference channel, so each row sums to the number
/// of leader links of that follower.
pub fn laplacian(state: &TopologyState, spec: &PlatoonGraphSpec) -> Array2<f64> {
    let n = spec.n_vehicles();
    let dim = n - 1;
    let mut l = Array2::<f64>::zeros((dim, dim));
    for receiver in 1..n {
        let row = receiver - 1;
        for source in 0..receiver {
            if state.access[[receiver, source]] {
                l[[row, row]] += 1.0;
                if source >= 1 {
                    l[[row, source - 1]] -= 1.0;
                }
            }
        }
    }
    l
}

/// The joint connectivity chain over all `2^m` topology states, with states
/// labeled by bitmask.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologyChain {
    pub tpm: TransitionMatrix,
    /// Topology states whose rows received no observations (Monte Carlo
    /// construction only).
    pub unvisited: Vec<usize>,
}

fn bitmask_labels(m: usize) -> Vec<String> {
    (0..1u64 << m)
        .map(|mask| format!("0b{:0width$b}", mask, width = m.max(1)))
        .collect()
}

/// Exact joint chain of independent links: the transition probability
/// between bitmask states is the product of the per-link transition
/// probabilities (a Kronecker product reordered to bitmask indexing).
pub fn connectivity_chain_product(links: &[LinkChain]) -> Result<TopologyChain, TopologyError> {
    let m = links.len();
    if m > MAX_CHAIN_LINKS {
        return Err(TopologyError::TooManyLinks {
            m,
            max: MAX_CHAIN_LINKS,
        });
    }
    let size = 1usize << m;
    let mut probs = Array2::<f64>::zeros((size, size));
    for from in 0..size {
        for to in 0..size {
            let mut p = 1.0;
            for (k, link) in links.iter().enumerate() {
                let row = if from >> k & 1 == 1 {
                    link.up_index
                } else {
                    link.down_index()
                };
                let col = if to >> k & 1 == 1 {
                    link.up_index
                } else {
                    link.down_index()
                };
                p *= link.tpm.probs()[[row, col]];
            }
            probs[[from, to]] = p;
        }
    }
    let tpm = TransitionMatrix::new(bitmask_labels(m), probs)?;
    Ok(TopologyChain {
        tpm,
        unvisited: Vec::new(),
    })
}

/// Parameters of the per-link reduction from gap chain to binary link chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkModelParams {
    pub step_ms: u32,
    pub staleness_threshold_ms: u32,
    /// Laplace smoothing for the joint-chain estimate.
    pub smoothing: f64,
}

impl Default for LinkModelParams {
    fn default() -> Self {
        Self {
            step_ms: 100,
            staleness_threshold_ms: crate::ipg::DEFAULT_STALENESS_MS,
            smoothing: 0.0,
        }
    }
}

/// Estimates the joint connectivity chain by Monte Carlo: one independent
/// binary link process per random link (link `k` seeded with
/// `task_seed(seed, k)`), combined into a bitmask sequence and re-estimated
/// as a `2^m`-state chain.
///
/// `ipg_chains` holds either one gap chain shared by all links or one chain
/// per link (for distance-dependent links).
pub fn connectivity_chain_monte_carlo(
    ipg_chains: &[TransitionMatrix],
    spec: &PlatoonGraphSpec,
    params: &LinkModelParams,
    sample_steps: usize,
    seed: u64,
) -> Result<TopologyChain, TopologyError> {
    let m = spec.random_link_count();
    if m > MAX_CHAIN_LINKS {
        return Err(TopologyError::TooManyLinks {
            m,
            max: MAX_CHAIN_LINKS,
        });
    }
    if !(ipg_chains.len() == 1 || ipg_chains.len() == m) {
        return Err(TopologyError::ChainCountMismatch {
            got: ipg_chains.len(),
            expected: m,
        });
    }
    let mut masks = vec![0u64; sample_steps];
    for k in 0..m {
        let chain = if ipg_chains.len() == 1 {
            &ipg_chains[0]
        } else {
            &ipg_chains[k]
        };
        let process = link_process(
            chain,
            sample_steps,
            params.step_ms,
            params.staleness_threshold_ms,
            task_seed(seed, k as u64),
        )?;
        for (t, &up) in process.up.iter().enumerate() {
            if up {
                masks[t] |= 1 << k;
            }
        }
    }
    let seq: Vec<usize> = masks.iter().map(|&mask| mask as usize).collect();
    let mut counts = TransitionCounts::new(1 << m);
    counts.observe(&seq).map_err(MarkovError::from)?;
    let estimate = counts.into_estimate(params.smoothing)?;
    let tpm = estimate.tpm.with_states(bitmask_labels(m))?;
    Ok(TopologyChain {
        tpm,
        unvisited: estimate.unvisited_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::linalg::kron;
    use ndarray::array;

    fn link(rows: Vec<Vec<f64>>) -> LinkChain {
        LinkChain::from_tpm(TransitionMatrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn five_vehicles_have_six_random_links() {
        let spec = PlatoonGraphSpec::new(5).unwrap();
        assert_eq!(spec.random_link_count(), 6);
        assert_eq!(
            spec.random_links(),
            &[(2, 0), (3, 0), (3, 1), (4, 0), (4, 1), (4, 2)]
        );
        assert_eq!(enumerate_topologies(&spec).unwrap().len(), 64);
    }

    #[test]
    fn two_vehicles_single_topology() {
        let spec = PlatoonGraphSpec::new(2).unwrap();
        assert_eq!(spec.random_link_count(), 0);
        let states = enumerate_topologies(&spec).unwrap();
        assert_eq!(states.len(), 1);
        assert!(states[0].access()[[1, 0]]);
    }

    #[test]
    fn three_vehicles_two_topologies() {
        let spec = PlatoonGraphSpec::new(3).unwrap();
        assert_eq!(spec.random_link_count(), 1);
        assert_eq!(spec.random_links(), &[(2, 0)]);
        assert_eq!(enumerate_topologies(&spec).unwrap().len(), 2);
    }

    #[test]
    fn rejects_single_vehicle() {
        assert!(matches!(
            PlatoonGraphSpec::new(1),
            Err(TopologyError::InvalidVehicleCount(1))
        ));
    }

    #[test]
    fn bitmask_access_bijection() {
        let spec = PlatoonGraphSpec::new(4).unwrap();
        let states = enumerate_topologies(&spec).unwrap();
        for (mask, state) in states.iter().enumerate() {
            assert_eq!(state.bitmask(), mask as u64);
            // Radar links always present.
            for i in 1..4 {
                assert!(state.access()[[i, i - 1]]);
            }
            // No access to self or to later vehicles.
            for i in 0..4 {
                for j in i..4 {
                    assert!(!state.access()[[i, j]]);
                }
            }
        }
    }

    #[test]
    fn laplacian_three_vehicle_fully_connected() {
        let spec = PlatoonGraphSpec::new(3).unwrap();
        let full = TopologyState::from_bitmask(spec.full_mask(), &spec);
        let l = laplacian(&full, &spec);
        assert_eq!(l, array![[1.0, 0.0], [-1.0, 2.0]]);
    }

    #[test]
    fn laplacian_two_vehicle() {
        let spec = PlatoonGraphSpec::new(2).unwrap();
        let state = TopologyState::from_bitmask(0, &spec);
        assert_eq!(laplacian(&state, &spec), array![[1.0]]);
    }

    #[test]
    fn laplacian_diagonal_is_in_degree_and_row_sums_count_leader_links() {
        let spec = PlatoonGraphSpec::new(5).unwrap();
        for state in enumerate_topologies(&spec).unwrap() {
            let l = laplacian(&state, &spec);
            for receiver in 1..5 {
                let row = receiver - 1;
                let in_degree: usize = (0..receiver)
                    .filter(|&j| state.access()[[receiver, j]])
                    .count();
                assert_eq!(l[[row, row]], in_degree as f64);
                let leader_links = state.access()[[receiver, 0]] as usize;
                let row_sum: f64 = l.row(row).sum();
                assert_abs_diff_eq!(row_sum, leader_links as f64, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn laplacian_fully_connected_diagonal_counts_predecessors() {
        let spec = PlatoonGraphSpec::new(5).unwrap();
        let full = TopologyState::from_bitmask(spec.full_mask(), &spec);
        let l = laplacian(&full, &spec);
        for i in 0..4 {
            assert_eq!(l[[i, i]], (i + 1) as f64);
        }
    }

    #[test]
    fn product_single_link_matches_chain() {
        let chain = link(vec![vec![0.9, 0.1], vec![0.5, 0.5]]);
        let joint = connectivity_chain_product(std::slice::from_ref(&chain)).unwrap();
        assert_eq!(joint.tpm.probs(), chain.tpm.probs());
        assert_eq!(joint.tpm.label(0), "0b0");
        assert_eq!(joint.tpm.label(1), "0b1");
    }

    #[test]
    fn product_two_links_matches_kronecker_oracle() {
        let chain = link(vec![vec![0.9, 0.1], vec![0.5, 0.5]]);
        let joint = connectivity_chain_product(&[chain.clone(), chain.clone()]).unwrap();
        assert_abs_diff_eq!(joint.tpm.probs()[[0, 0]], 0.81, epsilon = 1e-15);
        // Oracle: bitmask indexing (bit 0 least significant) is
        // kron(link_1, link_0) with each link in (down, up) order.
        let expected = kron(chain.tpm.probs(), chain.tpm.probs());
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(joint.tpm.probs()[[i, j]], expected[[i, j]], epsilon = 1e-15);
            }
        }
        assert!(joint.tpm.check().is_empty());
    }

    #[test]
    fn product_respects_up_index_labels() {
        // Same chain expressed with up at index 0: probabilities must land
        // on the same bitmask entries.
        let default_order = link(vec![vec![0.9, 0.1], vec![0.5, 0.5]]);
        let labeled = LinkChain::from_tpm(
            TransitionMatrix::from_rows(vec![vec![0.5, 0.5], vec![0.1, 0.9]])
                .unwrap()
                .with_states(vec!["up".into(), "down".into()])
                .unwrap(),
        )
        .unwrap();
        let a = connectivity_chain_product(std::slice::from_ref(&default_order)).unwrap();
        let b = connectivity_chain_product(std::slice::from_ref(&labeled)).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(a.tpm.probs()[[i, j]], b.tpm.probs()[[i, j]], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn product_deterministic_up_links_absorb_fully_connected() {
        let chain = link(vec![vec![0.0, 1.0], vec![0.0, 1.0]]);
        let joint = connectivity_chain_product(&[chain.clone(), chain.clone()]).unwrap();
        let full = 3;
        for from in 0..4 {
            assert_abs_diff_eq!(joint.tpm.probs()[[from, full]], 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn product_stationary_factorizes() {
        let l0 = link(vec![vec![0.9, 0.1], vec![0.5, 0.5]]);
        let l1 = link(vec![vec![0.7, 0.3], vec![0.2, 0.8]]);
        let joint = connectivity_chain_product(&[l0.clone(), l1.clone()]).unwrap();
        let joint_pi = joint.tpm.stationary_distribution().unwrap();
        let pi0 = l0.tpm.stationary_distribution().unwrap();
        let pi1 = l1.tpm.stationary_distribution().unwrap();
        for mask in 0..4usize {
            let expected = pi0.pmf()[mask & 1] * pi1.pmf()[(mask >> 1) & 1];
            assert_abs_diff_eq!(joint_pi.pmf()[mask], expected, epsilon = 1e-8);
        }
    }

    #[test]
    fn monte_carlo_matches_product_two_links() {
        // Gap chain alternating 100/200 ms gives a genuinely mixing link
        // process at threshold 100 ms.
        let mut rows = vec![vec![0.0; 10]; 10];
        for row in rows.iter_mut() {
            row[0] = 0.6;
            row[1] = 0.4;
        }
        let chain = crate::ipg::ipg_chain_from_rows(rows).unwrap();
        let spec = PlatoonGraphSpec::new(3).unwrap(); // m = 1
        let params = LinkModelParams::default();
        let mc = connectivity_chain_monte_carlo(
            std::slice::from_ref(&chain),
            &spec,
            &params,
            400_000,
            99,
        )
        .unwrap();
        let link_estimate =
            crate::ipg::link_tpm(&chain, params.step_ms, params.staleness_threshold_ms, 400_000, task_seed(99, 0))
                .unwrap();
        let product = connectivity_chain_product(&[link_estimate]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (mc.tpm.probs()[[i, j]] - product.tpm.probs()[[i, j]]).abs() < 0.02,
                    "({i},{j})"
                );
            }
        }
    }

    #[test]
    fn monte_carlo_all_up_concentrates_on_full_state() {
        let mut rows = vec![vec![0.0; 10]; 10];
        for row in rows.iter_mut() {
            row[0] = 1.0;
        }
        let chain = crate::ipg::ipg_chain_from_rows(rows).unwrap();
        let spec = PlatoonGraphSpec::new(4).unwrap(); // m = 3
        let mc = connectivity_chain_monte_carlo(
            std::slice::from_ref(&chain),
            &spec,
            &LinkModelParams::default(),
            5_000,
            7,
        )
        .unwrap();
        let full = spec.full_mask() as usize;
        assert_abs_diff_eq!(mc.tpm.probs()[[full, full]], 1.0, epsilon = 1e-15);
        // All other rows unvisited.
        assert_eq!(mc.unvisited.len(), 7);
    }

    #[test]
    fn five_vehicle_chain_is_64_by_64() {
        let chain = link(vec![vec![0.9, 0.1], vec![0.4, 0.6]]);
        let links = vec![chain; 6];
        let joint = connectivity_chain_product(&links).unwrap();
        assert_eq!(joint.tpm.n_states(), 64);
        assert_eq!(joint.tpm.label(63), "0b111111");
    }
}
