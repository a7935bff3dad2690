//! Closed-loop assembly and fixed-step integration.
//!
//! Each agent runs a plant `ẋ = Ax + Bu`, `y = Cx` and an observer-based
//! consensus protocol driven entirely by what it *receives* on its incoming
//! links. Attacks enter by rewriting those messages in flight, so the same
//! derivative assembly covers the healthy network, the attacked network,
//! the adversary's concealment replica, and the event-triggered detector
//! states.
//!
//! The integrator is classical RK4 with a fixed step: attack activations
//! snap to step boundaries, trigger evaluation runs at step boundaries, and
//! broadcast data is held constant within a step. Runs are single-threaded
//! and deterministic: identical setup and seed give bit-identical traces.

use nalgebra::DVector;
use thiserror::Error;

use crate::attacks::{self, ResolvedAttack};
use crate::detection::{self, DetectorParams};
use crate::graph::DiGraph;
use crate::numerics::{self, RMat};

/// State-norm guard: a step that pushes any state past this magnitude is
/// reported as divergence.
pub const NORM_GUARD: f64 = 1e12;

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("plant model is not controllable (controllability rank {rank} < {n})")]
    NotControllable { rank: usize, n: usize },
    #[error("plant model is not observable (observability rank {rank} < {n})")]
    NotObservable { rank: usize, n: usize },
    #[error("step size must be positive, got {0}")]
    BadStep(f64),
    #[error("state norm exceeded {NORM_GUARD:.0e} at t = {0}")]
    NonFinite(f64),
    #[error("concealment process state requested before activation")]
    CovertProcessNotRunning,
}

/// The (A, B, C) triple shared by every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub a: RMat,
    pub b: RMat,
    pub c_out: RMat,
}

impl PlantModel {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    pub fn p(&self) -> usize {
        self.c_out.nrows()
    }

    /// Dimension consistency plus controllability/observability of (A,B,C),
    /// checked via the rank of the block matrices [B AB … Aⁿ⁻¹B] and its
    /// dual.
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let n = self.n();
        if self.a.ncols() != n {
            return Err(DynamicsError::Dimension {
                what: "A (square)",
                expected: n,
                got: self.a.ncols(),
            });
        }
        if self.b.nrows() != n {
            return Err(DynamicsError::Dimension {
                what: "B rows",
                expected: n,
                got: self.b.nrows(),
            });
        }
        if self.c_out.ncols() != n {
            return Err(DynamicsError::Dimension {
                what: "C cols",
                expected: n,
                got: self.c_out.ncols(),
            });
        }
        let ctrb = krylov_blocks(&self.a, &self.b);
        let r = numerics::rank(&ctrb, numerics::RANK_TOL);
        if r < n {
            return Err(DynamicsError::NotControllable { rank: r, n });
        }
        let obsv = krylov_blocks(&self.a.transpose(), &self.c_out.transpose());
        let r = numerics::rank(&obsv, numerics::RANK_TOL);
        if r < n {
            return Err(DynamicsError::NotObservable { rank: r, n });
        }
        Ok(())
    }
}

fn krylov_blocks(a: &RMat, b: &RMat) -> RMat {
    let n = a.nrows();
    let m = b.ncols();
    let mut out = RMat::zeros(n, n * m);
    let mut block = b.clone();
    for k in 0..n {
        out.view_mut((0, k * m), (n, m)).copy_from(&block);
        block = a * &block;
    }
    out
}

/// The consensus-protocol gains: scalar coupling c, observer gain F (n×p),
/// control gain K (m×n).
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolGains {
    pub coupling: f64,
    pub observer_gain: RMat,
    pub control_gain: RMat,
}

impl ProtocolGains {
    pub fn validate(&self, model: &PlantModel) -> Result<(), DynamicsError> {
        if self.observer_gain.shape() != (model.n(), model.p()) {
            return Err(DynamicsError::Dimension {
                what: "F shape (n x p)",
                expected: model.n() * model.p(),
                got: self.observer_gain.nrows() * self.observer_gain.ncols(),
            });
        }
        if self.control_gain.shape() != (model.m(), model.n()) {
            return Err(DynamicsError::Dimension {
                what: "K shape (m x n)",
                expected: model.m() * model.n(),
                got: self.control_gain.nrows() * self.control_gain.ncols(),
            });
        }
        Ok(())
    }
}

/// One agent's latest broadcast of its detector state.
#[derive(Debug, Clone, PartialEq)]
pub struct Broadcast {
    pub t_k: f64,
    pub z_k: DVector<f64>,
    pub count: usize,
}

/// States of the adversary's concealment replica, one block per attacked
/// agent (ordered as the partition's `v_a`).
#[derive(Debug, Clone, PartialEq)]
pub struct CovertState {
    pub x_c: DVector<f64>,
    pub x_hat_c: DVector<f64>,
}

/// Full network state at one instant: plant states, observer states,
/// detector states, concealment-replica states, and per-agent broadcast
/// records.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub t: f64,
    pub x: DVector<f64>,
    pub x_hat: DVector<f64>,
    pub z: DVector<f64>,
    pub covert: Option<CovertState>,
    pub broadcasts: Vec<Broadcast>,
}

impl NetworkState {
    pub fn agent_x(&self, i: usize, n: usize) -> DVector<f64> {
        self.x.rows(i * n, n).into()
    }
    pub fn agent_x_hat(&self, i: usize, n: usize) -> DVector<f64> {
        self.x_hat.rows(i * n, n).into()
    }
    pub fn agent_z(&self, i: usize, n: usize) -> DVector<f64> {
        self.z.rows(i * n, n).into()
    }

    fn max_abs(&self) -> f64 {
        let m = |v: &DVector<f64>| v.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        let mut out = m(&self.x).max(m(&self.x_hat)).max(m(&self.z));
        if let Some(c) = &self.covert {
            out = out.max(m(&c.x_c)).max(m(&c.x_hat_c));
        }
        out
    }
}

/// What flows on one directed link during a derivative evaluation: the
/// sender's output and observer state, plus the detector-channel view of the
/// sender (the propagated prediction used by the detector dynamics and the
/// raw broadcast snapshot used by the detector residual).
#[derive(Debug, Clone, PartialEq)]
pub struct LinkMessage {
    pub from: usize,
    pub to: usize,
    pub y_part: DVector<f64>,
    pub xhat_part: DVector<f64>,
    pub z_pred: DVector<f64>,
    pub z_snap: DVector<f64>,
}

/// Which interceptors are active during the current step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ActiveSet {
    pub fdi: bool,
    pub covert: bool,
    pub detector: bool,
}

/// Everything a derivative evaluation needs besides the state itself.
pub struct SimSetup<'a> {
    pub model: &'a PlantModel,
    pub gains: &'a ProtocolGains,
    pub graph: &'a DiGraph,
    pub detector: Option<&'a DetectorParams>,
    pub attack: Option<&'a ResolvedAttack>,
}

impl<'a> SimSetup<'a> {
    fn n(&self) -> usize {
        self.model.n()
    }
}

/// Assemble the post-interceptor message set for every directed edge:
/// exactly one message per edge, built from the sender's current state and
/// rewritten by whichever attack interceptors are active.
pub fn build_messages(
    setup: &SimSetup,
    state: &NetworkState,
    t: f64,
    active: ActiveSet,
) -> Result<Vec<LinkMessage>, DynamicsError> {
    let n = setup.n();
    let mut msgs = Vec::with_capacity(setup.graph.edges().len());
    for (from, to) in setup.graph.edges() {
        let x_j = state.agent_x(from, n);
        let xhat_j = state.agent_x_hat(from, n);
        let (z_pred, z_snap) = if setup.detector.is_some() {
            let b = &state.broadcasts[from];
            let decay = detection::prediction_decay(setup.detector.unwrap(), t - b.t_k);
            let pred = DVector::from_fn(n, |k, _| decay[k] * b.z_k[k]);
            (pred, b.z_k.clone())
        } else {
            (DVector::zeros(0), DVector::zeros(0))
        };
        let mut msg = LinkMessage {
            from,
            to,
            y_part: &setup.model.c_out * &x_j,
            xhat_part: xhat_j,
            z_pred,
            z_snap,
        };
        if let Some(attack) = setup.attack {
            msg = attacks::apply_interceptors(msg, state, setup.model, attack, active)?;
        }
        msgs.push(msg);
    }
    Ok(msgs)
}

/// Time derivative of the full network state given the resolved messages.
///
/// Per agent `i` with received pairs (ŷ_j, x̂_j):
///   ε_i = Σ (x̂_i − x̂_j),  u_i = cK ε_i,
///   ζ_i = Σ ((y_i − ŷ_j) + C(x̂_j − x̂_i)),
///   ẋ_i = A x_i + B u_i,
///   ẋ̂_i = A x̂_i + B u_i − cF ζ_i.
///
/// The detector state integrates ż_i = A_z z_i + B_z x̂_i + F_z Σ (ẑ_j − ẑ_i)
/// over the received prediction channel; the concealment replica mirrors the
/// agent equations with replica states for attacked neighbors and true
/// tapped signals for uncompromised neighbors.
pub struct Derivative {
    pub x: DVector<f64>,
    pub x_hat: DVector<f64>,
    pub z: DVector<f64>,
    pub covert: Option<CovertState>,
}

pub fn derivatives(
    setup: &SimSetup,
    state: &NetworkState,
    msgs: &[LinkMessage],
    t: f64,
) -> Result<Derivative, DynamicsError> {
    let n = setup.n();
    let n_agents = setup.graph.n_agents();
    let model = setup.model;
    let gains = setup.gains;
    let c = gains.coupling;

    let mut dx = DVector::zeros(n_agents * n);
    let mut dx_hat = DVector::zeros(n_agents * n);

    // group messages by receiver
    let mut inbox: Vec<Vec<&LinkMessage>> = vec![Vec::new(); n_agents];
    for m in msgs {
        if m.y_part.len() != model.p() || m.xhat_part.len() != n {
            return Err(DynamicsError::Dimension {
                what: "message payload",
                expected: n,
                got: m.xhat_part.len(),
            });
        }
        inbox[m.to].push(m);
    }

    for i in 0..n_agents {
        let x_i = state.agent_x(i, n);
        let xhat_i = state.agent_x_hat(i, n);
        let y_i = &model.c_out * &x_i;

        let mut eps = DVector::zeros(n);
        let mut zeta = DVector::zeros(model.p());
        for m in &inbox[i] {
            eps += &xhat_i - &m.xhat_part;
            zeta += (&y_i - &m.y_part) + &model.c_out * (&m.xhat_part - &xhat_i);
        }
        let u = &gains.control_gain * &eps * c;
        let bu = &model.b * &u;
        dx.rows_mut(i * n, n)
            .copy_from(&(&model.a * &x_i + &bu));
        dx_hat.rows_mut(i * n, n).copy_from(
            &(&model.a * &xhat_i + &bu - &gains.observer_gain * &zeta * c),
        );
    }

    // detector states
    let mut dz = DVector::zeros(state.z.len());
    if let Some(params) = setup.detector {
        for i in 0..n_agents {
            let z_i = state.agent_z(i, n);
            let xhat_i = state.agent_x_hat(i, n);
            let b = &state.broadcasts[i];
            let decay = detection::prediction_decay(params, t - b.t_k);
            let pred_i = DVector::from_fn(n, |k, _| decay[k] * b.z_k[k]);
            let mut coupling = DVector::zeros(n);
            for m in &inbox[i] {
                coupling += &m.z_pred - &pred_i;
            }
            let dzi =
                &params.a_z * &z_i + &params.b_z * &xhat_i + &params.f_z * &coupling;
            dz.rows_mut(i * n, n).copy_from(&dzi);
        }
    }

    // concealment replica, one block per attacked agent
    let covert = match (&state.covert, setup.attack) {
        (Some(cov), Some(attack)) => {
            let part = attack
                .partition
                .as_ref()
                .ok_or(DynamicsError::CovertProcessNotRunning)?;
            let v_a = &part.v_a;
            let pos_in_va = |agent: usize| v_a.iter().position(|&a| a == agent);
            let mut dx_c = DVector::zeros(cov.x_c.len());
            let mut dx_hat_c = DVector::zeros(cov.x_hat_c.len());
            for (k, &i) in v_a.iter().enumerate() {
                let xc_i: DVector<f64> = cov.x_c.rows(k * n, n).into();
                let xhatc_i: DVector<f64> = cov.x_hat_c.rows(k * n, n).into();
                let yc_i = &model.c_out * &xc_i;
                let mut eps = DVector::zeros(n);
                let mut zeta = DVector::zeros(model.p());
                for j in setup.graph.in_neighbors(i) {
                    if let Some(kj) = pos_in_va(j) {
                        // attacked neighbor: replica state
                        let xhatc_j: DVector<f64> = cov.x_hat_c.rows(kj * n, n).into();
                        let xc_j: DVector<f64> = cov.x_c.rows(kj * n, n).into();
                        let yc_j = &model.c_out * &xc_j;
                        eps += &xhatc_i - &xhatc_j;
                        zeta += (&yc_i - &yc_j) + &model.c_out * (&xhatc_j - &xhatc_i);
                    } else {
                        // uncompromised neighbor: true tapped signals
                        let xhat_j = state.agent_x_hat(j, n);
                        let y_j = &model.c_out * &state.agent_x(j, n);
                        eps += &xhatc_i - &xhat_j;
                        zeta += (&yc_i - &y_j) + &model.c_out * (&xhat_j - &xhatc_i);
                    }
                }
                let u = &gains.control_gain * &eps * c;
                let bu = &model.b * &u;
                dx_c.rows_mut(k * n, n).copy_from(&(&model.a * &xc_i + &bu));
                dx_hat_c.rows_mut(k * n, n).copy_from(
                    &(&model.a * &xhatc_i + &bu - &gains.observer_gain * &zeta * c),
                );
            }
            Some(CovertState {
                x_c: dx_c,
                x_hat_c: dx_hat_c,
            })
        }
        _ => None,
    };

    Ok(Derivative {
        x: dx,
        x_hat: dx_hat,
        z: dz,
        covert,
    })
}

fn add_scaled(state: &NetworkState, d: &Derivative, w: f64, t: f64) -> NetworkState {
    NetworkState {
        t,
        x: &state.x + &d.x * w,
        x_hat: &state.x_hat + &d.x_hat * w,
        z: &state.z + &d.z * w,
        covert: match (&state.covert, &d.covert) {
            (Some(s), Some(dc)) => Some(CovertState {
                x_c: &s.x_c + &dc.x_c * w,
                x_hat_c: &s.x_hat_c + &dc.x_hat_c * w,
            }),
            (Some(s), None) => Some(s.clone()),
            _ => None,
        },
        broadcasts: state.broadcasts.clone(),
    }
}

fn accumulate(acc: &mut Derivative, d: &Derivative, w: f64) {
    acc.x += &d.x * w;
    acc.x_hat += &d.x_hat * w;
    acc.z += &d.z * w;
    if let (Some(a), Some(dc)) = (&mut acc.covert, &d.covert) {
        a.x_c += &dc.x_c * w;
        a.x_hat_c += &dc.x_hat_c * w;
    }
}

/// One classical RK4 step. Interceptor activation and broadcast data are
/// frozen for the duration of the step; only the stage time varies inside.
pub fn step(
    setup: &SimSetup,
    state: &NetworkState,
    h: f64,
    active: ActiveSet,
) -> Result<NetworkState, DynamicsError> {
    if h <= 0.0 {
        return Err(DynamicsError::BadStep(h));
    }
    let t = state.t;
    let eval = |s: &NetworkState, ts: f64| -> Result<Derivative, DynamicsError> {
        let msgs = build_messages(setup, s, ts, active)?;
        derivatives(setup, s, &msgs, ts)
    };
    let k1 = eval(state, t)?;
    let s2 = add_scaled(state, &k1, h / 2.0, t + h / 2.0);
    let k2 = eval(&s2, t + h / 2.0)?;
    let s3 = add_scaled(state, &k2, h / 2.0, t + h / 2.0);
    let k3 = eval(&s3, t + h / 2.0)?;
    let s4 = add_scaled(state, &k3, h, t + h);
    let k4 = eval(&s4, t + h)?;

    let mut total = k1;
    let mut out = {
        accumulate(&mut total, &k2, 2.0);
        accumulate(&mut total, &k3, 2.0);
        accumulate(&mut total, &k4, 1.0);
        add_scaled(state, &total, h / 6.0, t + h)
    };
    out.t = t + h;
    if !out.max_abs().is_finite() || out.max_abs() > NORM_GUARD {
        return Err(DynamicsError::NonFinite(out.t));
    }
    Ok(out)
}

/// One nonzero rewrite observed on a link at a record step.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRow {
    pub t: f64,
    pub from: usize,
    pub to: usize,
    pub channel: &'static str,
    pub increment_norm: f64,
}

/// Time-indexed record of a full run.
#[derive(Debug, Clone)]
pub struct SimTrace {
    pub n_agents: usize,
    pub n: usize,
    pub times: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub x_hat: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
    pub covert: Vec<Option<CovertState>>,
    pub res_y: Vec<Vec<f64>>,
    pub res_xhat: Vec<Vec<f64>>,
    pub res_z: Vec<Vec<f64>>,
    /// Per-agent event log: (t_k, broadcast state). Entry 0 is the initial
    /// broadcast at t = 0.
    pub events: Vec<Vec<(f64, DVector<f64>)>>,
    /// Per-agent, per-recorded-step trigger-state: Some(err) when the state
    /// error was below threshold (no event), None at event steps.
    pub trigger_margins: Vec<Vec<Option<f64>>>,
    pub attack_audit: Vec<AuditRow>,
    /// First step time at which the state norm guard tripped, if any.
    pub divergence: Option<f64>,
    /// Final state reached (at t_end, or at the divergence point).
    pub final_state: Option<NetworkState>,
}

/// Full simulation controls.
pub struct SimOptions {
    pub t_end: f64,
    pub h: f64,
    pub record_stride: usize,
}

/// Integrate the closed loop from `initial`, recording residual time series
/// and the trigger event log every `record_stride` steps.
pub fn simulate(
    setup: &SimSetup,
    initial: NetworkState,
    opts: &SimOptions,
) -> Result<SimTrace, DynamicsError> {
    if opts.h <= 0.0 {
        return Err(DynamicsError::BadStep(opts.h));
    }
    let n = setup.n();
    let n_agents = setup.graph.n_agents();
    let n_steps = (opts.t_end / opts.h).round() as usize;
    let stride = opts.record_stride.max(1);

    let snap = |t: f64| (t / opts.h).round() as usize;
    let (step_attack, step_covert, step_detattack) = match setup.attack {
        Some(a) => (
            snap(a.scenario.t_attack),
            a.scenario.quasi_covert.as_ref().map(|q| snap(q.t_active)),
            a.scenario.detector_attack.as_ref().map(|d| snap(d.t_active)),
        ),
        None => (usize::MAX, None, None),
    };

    let mut state = initial;
    state.t = 0.0;
    // initial broadcast at t = 0 so the detector residual is well defined
    // from the start
    state.broadcasts = (0..n_agents)
        .map(|i| Broadcast {
            t_k: 0.0,
            z_k: if setup.detector.is_some() {
                state.agent_z(i, n)
            } else {
                DVector::zeros(0)
            },
            count: 0,
        })
        .collect();

    let mut trace = SimTrace {
        n_agents,
        n,
        times: Vec::new(),
        x: Vec::new(),
        x_hat: Vec::new(),
        z: Vec::new(),
        covert: Vec::new(),
        res_y: Vec::new(),
        res_xhat: Vec::new(),
        res_z: Vec::new(),
        events: (0..n_agents)
            .map(|i| vec![(0.0, state.broadcasts[i].z_k.clone())])
            .collect(),
        trigger_margins: vec![Vec::new(); n_agents],
        attack_audit: Vec::new(),
        divergence: None,
        final_state: None,
    };

    let active_at = |k: usize| ActiveSet {
        fdi: setup.attack.is_some() && k >= step_attack,
        covert: step_covert.is_some_and(|s| k >= s),
        detector: step_detattack.is_some_and(|s| k >= s),
    };

    let record =
        |trace: &mut SimTrace, state: &NetworkState, setup: &SimSetup, active: ActiveSet| -> Result<(), DynamicsError> {
            let msgs = build_messages(setup, state, state.t, active)?;
            let (ry, rx) = detection::continuous_residuals(state, &msgs, setup.model, setup.graph);
            let rz = match setup.detector {
                Some(_) => detection::detector_residual(state, &msgs, setup.graph),
                None => vec![0.0; setup.graph.n_agents()],
            };
            if active.fdi || active.covert || active.detector {
                let raw = build_messages(setup, state, state.t, ActiveSet::default())?;
                for (m, r) in msgs.iter().zip(raw.iter()) {
                    for (channel, a, b) in [
                        ("xhat", &m.xhat_part, &r.xhat_part),
                        ("y", &m.y_part, &r.y_part),
                        ("z", &m.z_pred, &r.z_pred),
                    ] {
                        let d = (a - b).norm();
                        if d > 0.0 {
                            trace.attack_audit.push(AuditRow {
                                t: state.t,
                                from: m.from,
                                to: m.to,
                                channel,
                                increment_norm: d,
                            });
                        }
                    }
                }
            }
            trace.times.push(state.t);
            trace.x.push(state.x.clone());
            trace.x_hat.push(state.x_hat.clone());
            trace.z.push(state.z.clone());
            trace.covert.push(state.covert.clone());
            trace.res_y.push(ry);
            trace.res_xhat.push(rx);
            trace.res_z.push(rz);
            Ok(())
        };

    record(&mut trace, &state, setup, active_at(0))?;

    for k in 0..n_steps {
        let active = active_at(k);

        // concealment replica comes alive at its activation boundary,
        // seeded from the attacked agents' true states unless overridden
        if active.covert && state.covert.is_none() {
            let attack = setup.attack.unwrap();
            let part = attack.partition.as_ref().expect("covert requires partition");
            let qc = attack.scenario.quasi_covert.as_ref().unwrap();
            state.covert = Some(match &qc.init_override {
                Some((xc, xhatc)) => CovertState {
                    x_c: xc.clone(),
                    x_hat_c: xhatc.clone(),
                },
                None => {
                    let mut x_c = DVector::zeros(part.n_a() * n);
                    let mut x_hat_c = DVector::zeros(part.n_a() * n);
                    for (idx, &agent) in part.v_a.iter().enumerate() {
                        x_c.rows_mut(idx * n, n).copy_from(&state.agent_x(agent, n));
                        x_hat_c
                            .rows_mut(idx * n, n)
                            .copy_from(&state.agent_x_hat(agent, n));
                    }
                    CovertState { x_c, x_hat_c }
                }
            });
        }

        match step(setup, &state, opts.h, active) {
            Ok(next) => state = next,
            Err(DynamicsError::NonFinite(t)) => {
                trace.divergence = Some(t);
                trace.final_state = Some(state);
                return Ok(trace);
            }
            Err(e) => return Err(e),
        }
        state.t = (k + 1) as f64 * opts.h;

        let recording = (k + 1) % stride == 0 || k + 1 == n_steps;
        if let Some(params) = setup.detector {
            let outcomes = detection::evaluate_trigger(&mut state, params, state.t);
            for (i, outcome) in outcomes.into_iter().enumerate() {
                match outcome {
                    detection::TriggerOutcome::Fired => {
                        trace.events[i].push((state.t, state.broadcasts[i].z_k.clone()));
                        if recording {
                            trace.trigger_margins[i].push(None);
                        }
                    }
                    detection::TriggerOutcome::Quiet(err) => {
                        if recording {
                            trace.trigger_margins[i].push(Some(err));
                        }
                    }
                }
            }
        }

        if recording {
            record(&mut trace, &state, setup, active_at(k + 1))?;
        }
    }
    trace.final_state = Some(state);
    Ok(trace)
}

/// Max pairwise Euclidean distance between per-agent blocks of a stacked
/// vector; the consensus metric.
pub fn max_pairwise_distance(stacked: &DVector<f64>, n_agents: usize, n: usize) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..n_agents {
        for j in (i + 1)..n_agents {
            let d = (stacked.rows(i * n, n) - stacked.rows(j * n, n)).norm();
            worst = worst.max(d);
        }
    }
    worst
}

/// The healthy stacked closed-loop operator I_N⊗Ǎ + L⊗(B̌Ǩ − F̌Č) acting on
/// per-agent blocks [x_i; x̂_i]; the independent route used to cross-check
/// the per-agent derivative assembly.
pub fn stacked_healthy_operator(model: &PlantModel, gains: &ProtocolGains, g: &DiGraph) -> RMat {
    let (n, m, p) = (model.n(), model.m(), model.p());
    let c = gains.coupling;
    let i2 = RMat::identity(2, 2);
    let a_chk = numerics::kron(&i2, &model.a);
    let k_chk = numerics::kron(&i2, &(&gains.control_gain * c));
    let c_chk = numerics::kron(&i2, &model.c_out);
    let mut b_chk = RMat::zeros(2 * n, 2 * m);
    b_chk.view_mut((0, m), (n, m)).copy_from(&model.b);
    b_chk.view_mut((n, m), (n, m)).copy_from(&model.b);
    let mut f_chk = RMat::zeros(2 * n, 2 * p);
    let cf = &gains.observer_gain * c;
    f_chk.view_mut((n, 0), (n, p)).copy_from(&cf);
    f_chk.view_mut((n, p), (n, p)).copy_from(&(-&cf));
    let h = &b_chk * &k_chk - &f_chk * &c_chk;
    let l = g.laplacian();
    let n_agents = g.n_agents();
    numerics::kron(&RMat::identity(n_agents, n_agents), &a_chk) + numerics::kron(&l, &h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn setup_no_attack<'a>(
        model: &'a PlantModel,
        gains: &'a ProtocolGains,
        graph: &'a DiGraph,
        detector: Option<&'a DetectorParams>,
    ) -> SimSetup<'a> {
        SimSetup {
            model,
            gains,
            graph,
            detector,
            attack: None,
        }
    }

    fn zero_state(n_agents: usize, n: usize, with_z: bool) -> NetworkState {
        NetworkState {
            t: 0.0,
            x: DVector::zeros(n_agents * n),
            x_hat: DVector::zeros(n_agents * n),
            z: if with_z {
                DVector::zeros(n_agents * n)
            } else {
                DVector::zeros(0)
            },
            covert: None,
            broadcasts: (0..n_agents)
                .map(|_| Broadcast {
                    t_k: 0.0,
                    z_k: if with_z {
                        DVector::zeros(n)
                    } else {
                        DVector::zeros(0)
                    },
                    count: 0,
                })
                .collect(),
        }
    }

    #[test]
    fn model_validation() {
        let (model, gains, _, _) = presets::six_agent();
        model.validate().unwrap();
        gains.validate(&model).unwrap();

        let bad = PlantModel {
            a: RMat::zeros(2, 2),
            b: RMat::zeros(2, 1),
            c_out: RMat::identity(2, 2),
        };
        assert!(matches!(
            bad.validate(),
            Err(DynamicsError::NotControllable { .. })
        ));
    }

    #[test]
    fn consensus_trajectory_continues_when_agreed() {
        // identical (x, x̂) across agents: all couplings vanish, ẋ_i = A x_i
        let (model, gains, graph, _) = presets::six_agent();
        let setup = setup_no_attack(&model, &gains, &graph, None);
        let mut state = zero_state(6, 2, false);
        for i in 0..6 {
            state.x.rows_mut(i * 2, 2).copy_from_slice(&[0.7, -0.3]);
            state.x_hat.rows_mut(i * 2, 2).copy_from_slice(&[0.7, -0.3]);
        }
        let msgs = build_messages(&setup, &state, 0.0, ActiveSet::default()).unwrap();
        let d = derivatives(&setup, &state, &msgs, 0.0).unwrap();
        let expected = &model.a * DVector::from_column_slice(&[0.7, -0.3]);
        for i in 0..6 {
            assert!((DVector::from(d.x.rows(i * 2, 2)) - &expected).norm() < 1e-14);
            assert!((DVector::from(d.x_hat.rows(i * 2, 2)) - &expected).norm() < 1e-14);
        }
    }

    #[test]
    fn isolated_agent_decouples() {
        let (model, gains, _, _) = presets::six_agent();
        let graph = DiGraph::from_adjacency(1, &[0]).unwrap();
        let setup = setup_no_attack(&model, &gains, &graph, None);
        let mut state = zero_state(1, 2, false);
        state.x.copy_from_slice(&[1.0, 2.0]);
        state.x_hat.copy_from_slice(&[-1.0, 0.5]);
        let msgs = build_messages(&setup, &state, 0.0, ActiveSet::default()).unwrap();
        assert!(msgs.is_empty());
        let d = derivatives(&setup, &state, &msgs, 0.0).unwrap();
        assert!((DVector::from(d.x.clone()) - &model.a * &state.x).norm() < 1e-14);
        assert!((DVector::from(d.x_hat.clone()) - &model.a * &state.x_hat).norm() < 1e-14);
    }

    #[test]
    fn per_agent_assembly_matches_stacked_operator() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let (model, gains, graph, _) = presets::six_agent();
        let setup = setup_no_attack(&model, &gains, &graph, None);
        let op = stacked_healthy_operator(&model, &gains, &graph);
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..100 {
            let mut state = zero_state(6, 2, false);
            for k in 0..12 {
                state.x[k] = rng.gen_range(-2.0..2.0);
                state.x_hat[k] = rng.gen_range(-2.0..2.0);
            }
            let msgs = build_messages(&setup, &state, 0.0, ActiveSet::default()).unwrap();
            let d = derivatives(&setup, &state, &msgs, 0.0).unwrap();
            // interleave into per-agent [x_i; x̂_i] blocks
            let mut stacked = DVector::zeros(24);
            for i in 0..6 {
                stacked.rows_mut(4 * i, 2).copy_from(&state.x.rows(2 * i, 2));
                stacked
                    .rows_mut(4 * i + 2, 2)
                    .copy_from(&state.x_hat.rows(2 * i, 2));
            }
            let via_op = &op * &stacked;
            for i in 0..6 {
                assert!((via_op.rows(4 * i, 2) - d.x.rows(2 * i, 2)).norm() < 1e-12);
                assert!((via_op.rows(4 * i + 2, 2) - d.x_hat.rows(2 * i, 2)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn rk4_scalar_exponential() {
        // ẋ = −x from 1.0, one step h = 0.01
        let model = PlantModel {
            a: RMat::from_row_slice(1, 1, &[-1.0]),
            b: RMat::from_row_slice(1, 1, &[1.0]),
            c_out: RMat::from_row_slice(1, 1, &[1.0]),
        };
        let gains = ProtocolGains {
            coupling: 0.0,
            observer_gain: RMat::zeros(1, 1),
            control_gain: RMat::zeros(1, 1),
        };
        let graph = DiGraph::from_adjacency(1, &[0]).unwrap();
        let setup = setup_no_attack(&model, &gains, &graph, None);
        let mut state = zero_state(1, 1, false);
        state.x[0] = 1.0;
        let next = step(&setup, &state, 0.01, ActiveSet::default()).unwrap();
        assert!((next.x[0] - 0.990_049_834_0).abs() < 1e-10);
    }

    #[test]
    fn fixed_point_stays_exact() {
        let (model, gains, graph, _) = presets::six_agent();
        let setup = setup_no_attack(&model, &gains, &graph, None);
        let state = zero_state(6, 2, false);
        let next = step(&setup, &state, 0.01, ActiveSet::default()).unwrap();
        assert_eq!(next.x, state.x);
        assert_eq!(next.x_hat, state.x_hat);
    }

    #[test]
    fn bad_step_rejected() {
        let (model, gains, graph, _) = presets::six_agent();
        let setup = setup_no_attack(&model, &gains, &graph, None);
        let state = zero_state(6, 2, false);
        assert!(matches!(
            step(&setup, &state, 0.0, ActiveSet::default()),
            Err(DynamicsError::BadStep(_))
        ));
    }

    #[test]
    fn attack_free_consensus_from_random_initial_conditions() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let (model, gains, graph, _) = presets::six_agent();
        let setup = setup_no_attack(&model, &gains, &graph, None);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut state = zero_state(6, 2, false);
        for k in 0..12 {
            state.x[k] = rng.gen_range(-1.0..1.0);
            state.x_hat[k] = rng.gen_range(-1.0..1.0);
        }
        let trace = simulate(
            &setup,
            state,
            &SimOptions {
                t_end: 10.0,
                h: 1e-3,
                record_stride: 100,
            },
        )
        .unwrap();
        assert!(trace.divergence.is_none());
        let last = trace.x_hat.last().unwrap();
        assert!(max_pairwise_distance(last, 6, 2) < 1e-2);
    }
}
