//! Residual generation and the event-triggered detector.
//!
//! Two detection layers coexist. The continuous residuals compare what an
//! agent receives against its own output/estimate and expose ordinary
//! data-injection attacks. The event-triggered detector runs an auxiliary
//! state z_i per agent, exchanged only at trigger instants, whose dynamics
//! include a B_z·x̂_i drive the adversary cannot replicate without knowing
//! the detector parameters — this layer exposes concealment attacks that
//! erase the continuous residuals.

use nalgebra::DVector;
use thiserror::Error;

use crate::dynamics::{LinkMessage, NetworkState};
use crate::graph::DiGraph;
use crate::numerics::RMat;

#[derive(Debug, Error, PartialEq)]
pub enum DetectionError {
    #[error("A_z must be diagonal (nonzero at ({0},{1}))")]
    NotDiagonal(usize, usize),
    #[error("A_z diagonal entry {0} is not strictly negative")]
    NotHurwitzDiagonal(usize),
    #[error("{name} must be positive, got {value}")]
    NotPositive { name: &'static str, value: f64 },
    #[error("{name} must be {expected}x{expected}, got {rows}x{cols}")]
    BadShape {
        name: &'static str,
        expected: usize,
        rows: usize,
        cols: usize,
    },
    #[error("calibration run has not settled: tail envelope still growing")]
    UnsettledRun,
}

/// Event-triggered detector parameters shared by all agents.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorParams {
    /// Diagonal Hurwitz state matrix.
    pub a_z: RMat,
    /// Observer-state drive.
    pub b_z: RMat,
    /// Neighbor coupling gain.
    pub f_z: RMat,
    /// Trigger threshold scale.
    pub c_z: f64,
    /// Trigger threshold decay rate.
    pub alpha: f64,
    /// Alarm threshold on the detector residual.
    pub eta_z: f64,
}

impl DetectorParams {
    pub fn validate(&self, n: usize) -> Result<(), DetectionError> {
        for (name, m) in [("A_z", &self.a_z), ("B_z", &self.b_z), ("F_z", &self.f_z)] {
            if m.shape() != (n, n) {
                return Err(DetectionError::BadShape {
                    name,
                    expected: n,
                    rows: m.nrows(),
                    cols: m.ncols(),
                });
            }
        }
        for i in 0..n {
            for j in 0..n {
                if i != j && self.a_z[(i, j)] != 0.0 {
                    return Err(DetectionError::NotDiagonal(i, j));
                }
            }
            if !(self.a_z[(i, i)] < 0.0) {
                return Err(DetectionError::NotHurwitzDiagonal(i));
            }
        }
        for (name, value) in [("c_z", self.c_z), ("alpha", self.alpha), ("eta_z", self.eta_z)] {
            if !(value > 0.0) {
                return Err(DetectionError::NotPositive { name, value });
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.a_z.nrows()
    }
}

/// Elementwise decay factors exp(A_z[i][i]·dt) used to propagate a broadcast
/// snapshot to the current time.
pub fn prediction_decay(params: &DetectorParams, dt: f64) -> Vec<f64> {
    (0..params.n())
        .map(|k| (params.a_z[(k, k)] * dt).exp())
        .collect()
}

/// Continuous residuals per agent, evaluated on the post-interceptor
/// messages (the residual sees exactly what the agent sees):
///   res_y^i  = Σ_j ‖ŷ_j − y_i‖,   res_x̂^i = Σ_j ‖x̂_i − x̂_j‖.
pub fn continuous_residuals(
    state: &NetworkState,
    msgs: &[LinkMessage],
    model: &crate::dynamics::PlantModel,
    graph: &DiGraph,
) -> (Vec<f64>, Vec<f64>) {
    let n = model.n();
    let n_agents = graph.n_agents();
    let mut res_y = vec![0.0; n_agents];
    let mut res_xhat = vec![0.0; n_agents];
    for m in msgs {
        let i = m.to;
        let y_i = &model.c_out * state.agent_x(i, n);
        let xhat_i = state.agent_x_hat(i, n);
        res_y[i] += (&m.y_part - y_i).norm();
        res_xhat[i] += (xhat_i - &m.xhat_part).norm();
    }
    (res_y, res_xhat)
}

/// Detector residual per agent: the sum over in-neighbors of the distance
/// between the received broadcast snapshot and the agent's own latest
/// broadcast. Alarm when it exceeds eta_z.
pub fn detector_residual(state: &NetworkState, msgs: &[LinkMessage], graph: &DiGraph) -> Vec<f64> {
    let mut res = vec![0.0; graph.n_agents()];
    for m in msgs {
        if m.z_snap.len() == 0 {
            continue;
        }
        res[m.to] += (&m.z_snap - &state.broadcasts[m.to].z_k).norm();
    }
    res
}

/// Outcome of the trigger evaluation for one agent at a step boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TriggerOutcome {
    /// An event fired: the broadcast record was updated and the state error
    /// reset to zero.
    Fired,
    /// No event; carries ‖e_i^z(t)‖ for trace assertions.
    Quiet(f64),
}

/// Evaluate the triggering rule ‖e_i^z(t)‖ ≥ c_z·e^{−αt} for every agent,
/// with e_i^z(t) = e^{A_z(t−t_k)} z_i(t_k) − z_i(t). Firing agents broadcast
/// their current state: t_k ← t, z_i(t_k) ← z_i(t).
pub fn evaluate_trigger(
    state: &mut NetworkState,
    params: &DetectorParams,
    t: f64,
) -> Vec<TriggerOutcome> {
    let n = params.n();
    let n_agents = state.broadcasts.len();
    let threshold = params.c_z * (-params.alpha * t).exp();
    let mut out = Vec::with_capacity(n_agents);
    for i in 0..n_agents {
        let b = &state.broadcasts[i];
        let decay = prediction_decay(params, t - b.t_k);
        let z_i = state.agent_z(i, n);
        let err = (0..n)
            .map(|k| {
                let e = decay[k] * b.z_k[k] - z_i[k];
                e * e
            })
            .sum::<f64>()
            .sqrt();
        if err >= threshold {
            let b = &mut state.broadcasts[i];
            b.t_k = t;
            b.z_k = z_i;
            b.count += 1;
            out.push(TriggerOutcome::Fired);
        } else {
            out.push(TriggerOutcome::Quiet(err));
        }
    }
    out
}

/// Per-channel alarm thresholds for the continuous residuals, calibrated
/// from an attack-free run.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Thresholds {
    pub res_y: f64,
    pub res_xhat: f64,
}

/// Threshold floor: a perfectly settled run still yields a usable threshold.
pub const THRESHOLD_FLOOR: f64 = 1e-6;

/// Calibrate per-channel thresholds as `safety × max residual over the tail
/// window [0.8·t_end, t_end]`, floored at [`THRESHOLD_FLOOR`]. Rejects runs
/// whose residual envelope is still growing across the tail.
pub fn calibrate_threshold(
    times: &[f64],
    res_y: &[Vec<f64>],
    res_xhat: &[Vec<f64>],
    safety: f64,
) -> Result<Thresholds, DetectionError> {
    let t_end = *times.last().ok_or(DetectionError::UnsettledRun)?;
    let tail_start = 0.8 * t_end;
    let mid = 0.9 * t_end;
    let max_in = |series: &[Vec<f64>], lo: f64, hi: f64| -> f64 {
        times
            .iter()
            .zip(series.iter())
            .filter(|(t, _)| **t >= lo && **t <= hi)
            .flat_map(|(_, row)| row.iter().copied())
            .fold(0.0_f64, f64::max)
    };
    for series in [res_y, res_xhat] {
        let early = max_in(series, tail_start, mid);
        let late = max_in(series, mid, t_end);
        if late > early.max(THRESHOLD_FLOOR) {
            return Err(DetectionError::UnsettledRun);
        }
    }
    Ok(Thresholds {
        res_y: (safety * max_in(res_y, tail_start, t_end)).max(THRESHOLD_FLOOR),
        res_xhat: (safety * max_in(res_xhat, tail_start, t_end)).max(THRESHOLD_FLOOR),
    })
}

/// First time a series starts an exceedance of `threshold` sustained for at
/// least `dwell` seconds. Replacement attacks produce large transients at
/// onset in the very agents that end up seeing nothing, so a raw crossing is
/// not a sound alarm.
pub fn first_sustained_alarm(
    times: &[f64],
    series: &[f64],
    threshold: f64,
    dwell: f64,
) -> Option<f64> {
    let mut run_start: Option<f64> = None;
    for (&t, &v) in times.iter().zip(series.iter()) {
        if v > threshold {
            let start = *run_start.get_or_insert(t);
            if t - start >= dwell {
                return Some(start);
            }
        } else {
            run_start = None;
        }
    }
    None
}

/// True when the series exceeds `threshold` at every sample in the window
/// [t_hi − window, t_hi]: the settled verdict used for the static/dynamic
/// agreement checks.
pub fn settled_above(times: &[f64], series: &[f64], threshold: f64, window: f64, t_hi: f64) -> bool {
    let lo = t_hi - window;
    let mut any = false;
    for (&t, &v) in times.iter().zip(series.iter()) {
        if t >= lo && t <= t_hi {
            any = true;
            if v <= threshold {
                return false;
            }
        }
    }
    any
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Broadcast;
    use crate::presets;

    fn params() -> DetectorParams {
        presets::six_agent().3.unwrap()
    }

    fn state_with_z(n_agents: usize, n: usize, z: &[f64]) -> NetworkState {
        NetworkState {
            t: 0.0,
            x: DVector::zeros(n_agents * n),
            x_hat: DVector::zeros(n_agents * n),
            z: DVector::from_column_slice(z),
            covert: None,
            broadcasts: (0..n_agents)
                .map(|i| Broadcast {
                    t_k: 0.0,
                    z_k: DVector::from_column_slice(&z[i * n..(i + 1) * n]),
                    count: 0,
                })
                .collect(),
        }
    }

    #[test]
    fn params_validation() {
        let p = params();
        p.validate(2).unwrap();

        let mut bad = p.clone();
        bad.a_z[(0, 1)] = 0.5;
        assert_eq!(bad.validate(2).unwrap_err(), DetectionError::NotDiagonal(0, 1));

        let mut bad = p.clone();
        bad.a_z[(1, 1)] = 0.0;
        assert_eq!(
            bad.validate(2).unwrap_err(),
            DetectionError::NotHurwitzDiagonal(1)
        );

        let mut bad = p.clone();
        bad.c_z = 0.0;
        assert!(matches!(
            bad.validate(2).unwrap_err(),
            DetectionError::NotPositive { name: "c_z", .. }
        ));
    }

    #[test]
    fn no_retrigger_immediately_after_event() {
        let p = params();
        let mut st = state_with_z(2, 2, &[0.4, 0.2, 0.1, 0.0]);
        // force an event by moving z away from the broadcast
        st.z[0] += 1.0;
        let outcomes = evaluate_trigger(&mut st, &p, 1.0);
        assert_eq!(outcomes[0], TriggerOutcome::Fired);
        assert_eq!(st.broadcasts[0].t_k, 1.0);
        // same instant again: error is exactly zero, below any threshold
        let outcomes = evaluate_trigger(&mut st, &p, 1.0);
        assert!(matches!(outcomes[0], TriggerOutcome::Quiet(e) if e == 0.0));
    }

    #[test]
    fn frozen_prediction_never_triggers() {
        // if z evolves exactly as ż = A_z z, the prediction error stays zero
        let p = params();
        let z0 = [0.5, -0.3];
        let mut st = state_with_z(1, 2, &z0);
        for step in 1..=100 {
            let t = step as f64 * 0.01;
            let decay = prediction_decay(&p, t);
            st.z[0] = decay[0] * z0[0];
            st.z[1] = decay[1] * z0[1];
            let outcomes = evaluate_trigger(&mut st, &p, t);
            assert!(matches!(outcomes[0], TriggerOutcome::Quiet(e) if e < 1e-12));
        }
    }

    #[test]
    fn detector_residual_zero_at_consensus_and_empty_without_neighbors() {
        let p = params();
        let graph = crate::presets::six_agent().2;
        let st = state_with_z(6, 2, &[0.3, 0.1].repeat(6));
        let msgs: Vec<LinkMessage> = graph
            .edges()
            .iter()
            .map(|&(from, to)| LinkMessage {
                from,
                to,
                y_part: DVector::zeros(2),
                xhat_part: DVector::zeros(2),
                z_pred: DVector::zeros(2),
                z_snap: st.broadcasts[from].z_k.clone(),
            })
            .collect();
        let res = detector_residual(&st, &msgs, &graph);
        assert!(res.iter().all(|&r| r == 0.0));

        let lone = DiGraph::from_adjacency(1, &[0]).unwrap();
        let st1 = state_with_z(1, 2, &[0.3, 0.1]);
        assert_eq!(detector_residual(&st1, &[], &lone), vec![0.0]);
        let _ = p;
    }

    #[test]
    fn calibration_floor_and_safety() {
        let times: Vec<f64> = (0..=100).map(|k| k as f64 * 0.1).collect();
        let zeros = vec![vec![0.0; 3]; times.len()];
        let thr = calibrate_threshold(&times, &zeros, &zeros, 5.0).unwrap();
        assert_eq!(thr.res_y, THRESHOLD_FLOOR);
        assert_eq!(thr.res_xhat, THRESHOLD_FLOOR);

        // decaying envelope: safety = 1 reproduces the tail max exactly
        let decaying: Vec<Vec<f64>> = times.iter().map(|t| vec![(-0.5 * t).exp()]).collect();
        let thr = calibrate_threshold(&times, &decaying, &decaying, 1.0).unwrap();
        let tail_max = (-0.5 * 8.0_f64).exp();
        assert!((thr.res_y - tail_max).abs() < 1e-12);

        // growing tail is rejected
        let growing: Vec<Vec<f64>> = times.iter().map(|t| vec![0.01 * t]).collect();
        assert_eq!(
            calibrate_threshold(&times, &growing, &growing, 5.0).unwrap_err(),
            DetectionError::UnsettledRun
        );
    }

    #[test]
    fn sustained_alarm_ignores_short_transients() {
        let times: Vec<f64> = (0..1000).map(|k| k as f64 * 0.01).collect();
        let series: Vec<f64> = times
            .iter()
            .map(|&t| {
                if (1.0..2.0).contains(&t) {
                    5.0 // short transient
                } else if t >= 4.0 {
                    3.0 // sustained
                } else {
                    0.0
                }
            })
            .collect();
        assert_eq!(first_sustained_alarm(&times, &series, 1.0, 2.0), Some(4.0));
        assert_eq!(first_sustained_alarm(&times, &series, 1.0, 0.5), Some(1.0));
        assert_eq!(first_sustained_alarm(&times, &series, 10.0, 0.5), None);
        assert!(settled_above(&times, &series, 1.0, 2.0, 9.9));
        assert!(!settled_above(&times, &series, 1.0, 2.0, 3.0));
    }
}
