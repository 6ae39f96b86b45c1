//! Finite-state Markov modeling of packet-erasure links and mean-square
//! stability analysis of vehicle platoons under switching information-flow
//! topologies.
//!
//! The crate is organized along the analysis pipeline:
//!
//! * [`markov`] — generic finite-state chain machinery (validation,
//!   stationary distributions, n-step matrices, seeded sampling, empirical
//!   estimation),
//! * [`ipg`] — inter-packet-gap link model: quantizing reception logs to the
//!   ten 100 ms…1000 ms gap states, fitting the gap chain, and reducing it to
//!   a per-control-step binary link process,
//! * [`topology`] — enumeration of platoon information-flow topologies,
//!   graph Laplacians, and the joint connectivity chain over all links,
//! * [`dynamics`] — discretized double-integrator platoon under the
//!   second-order consensus protocol, closed-loop mode matrices, trajectory
//!   simulation and performance metrics,
//! * [`analysis`] — mean-square stability of the resulting Markov jump
//!   linear system: the augmented operator, spectral radii, the i.i.d.
//!   (Bernoulli) reduction, drop-period search, and empirical validation.

pub mod analysis;
pub mod dynamics;
pub mod ipg;
pub mod markov;
pub mod topology;
