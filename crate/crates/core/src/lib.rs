//! Simulation laboratory for online mechanism learning in generalized
//! principal-agent games.
//!
//! A principal repeatedly commits to a coordination mechanism (a
//! row-stochastic matrix mapping reported agent types to action
//! distributions) against a strategic, privately-typed agent. The library
//! provides the ground-truth game model, slack-bounded agent simulators,
//! the interaction protocol with delayed-feedback bookkeeping, the linear
//! programs defining the truthful benchmark, reward-angle estimation from
//! strategic reports, and the pessimistic-optimistic LinUCB learner, plus
//! an experiment harness with oracle-style verification suites.

pub mod agent;
pub mod bandit;
pub mod env;
pub mod estimator;
pub mod geometry;
pub mod harness;
pub mod lp;
pub mod model;
