//! Simulation and static analysis of data-injection attacks on
//! observer-based consensus networks.
//!
//! A network of identical linear agents runs an observer-based consensus
//! protocol over a directed communication graph. Adversaries rewrite the
//! `(observer state, output)` pairs in flight on selected links; this crate
//! reproduces, at desk scale, the resulting behaviors and the conditions
//! under which they are detectable:
//!
//! * attacks on a spanning-tree root steer the whole network to the
//!   adversary's set point without any residual evidence;
//! * attacks on non-root agents are exposed by the uncompromised agents
//!   that listen to the attacked region;
//! * a concealment process run by the adversary erases that evidence from
//!   the continuous residuals;
//! * an event-triggered detector, whose parameters the adversary does not
//!   know, re-exposes concealed attacks.
//!
//! The [`analysis`] module verifies the eigenvalue conditions behind each of
//! these claims before any integration; [`dynamics`] integrates the closed
//! loop; [`runner`] glues scenario files to simulation artifacts.

pub mod analysis;
pub mod attacks;
pub mod detection;
pub mod dynamics;
pub mod graph;
pub mod numerics;
pub mod presets;
pub mod runner;
pub mod scenario;
