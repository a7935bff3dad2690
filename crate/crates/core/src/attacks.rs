//! Composable link-level interceptors: each active attack rewrites the
//! messages in flight on its own set of links and channels.
//!
//! The three interceptors have pairwise disjoint (link, channel) domains —
//! data injection rewrites the (x̂, y) channel on links into the directly
//! attacked agents, concealment rewrites the (x̂, y) channel on links from
//! the attacked region into the uncompromised agents listening to it, and
//! the detector-channel attack rewrites only the z channel — so their
//! composition is order independent. Messages are rewritten, not
//! incremented; the additive attack signals are recovered as
//! (rewritten − original) by the audit log.

use nalgebra::DVector;
use thiserror::Error;

use crate::dynamics::{ActiveSet, DynamicsError, LinkMessage, NetworkState, PlantModel};
use crate::graph::{self, DiGraph, GraphError, Partition};

#[derive(Debug, Error, PartialEq)]
pub enum AttackError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("attack set-point a0 must have dimension {expected}, got {got}")]
    BadA0 { expected: usize, got: usize },
    #[error("detector attack vector a_z0 must have dimension {expected}, got {got}")]
    BadAz0 { expected: usize, got: usize },
    #[error("activation time must be nonnegative, got {0}")]
    NegativeTime(f64),
    #[error("concealment activation {t_qc} precedes the attack activation {t_attack}")]
    CovertBeforeAttack { t_qc: f64, t_attack: f64 },
    #[error("a root attack admits no concealment or detector-channel stage")]
    RootAttackExtras,
    #[error("a root attack targets exactly one agent, got {0}")]
    RootAttackMultiple(usize),
    #[error("concealment replica override must have dimension {expected}, got {got}")]
    BadCovertOverride { expected: usize, got: usize },
    #[error("interceptor domains overlap on link {from}->{to}")]
    OverlappingDomains { from: usize, to: usize },
}

/// Who is attacked: a single spanning-tree root (every incoming link
/// rewritten) or a set of non-root agents (only links from uncompromised
/// senders rewritten).
#[derive(Debug, Clone, PartialEq)]
pub enum AttackKind {
    Root { agent: usize },
    NonRoot { v_da: Vec<usize> },
}

/// Concealment stage: the adversary runs a replica of the attacked
/// subnetwork's healthy dynamics and substitutes its outputs on the
/// attacked-to-uncompromised links.
#[derive(Debug, Clone, PartialEq)]
pub struct QuasiCovert {
    pub t_active: f64,
    /// Optional explicit replica seed (x_c, x̂_c), each of length N_a·n;
    /// the default copies the attacked agents' true states at activation.
    pub init_override: Option<(DVector<f64>, DVector<f64>)>,
}

/// Detector-channel stage: the predicted detector info received by the
/// directly attacked agents is replaced with the constant a_z0.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorAttack {
    pub a_z0: DVector<f64>,
    pub t_active: f64,
}

/// Declarative description of who is attacked, with what signal, when.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackScenario {
    pub kind: AttackKind,
    pub a0: DVector<f64>,
    pub t_attack: f64,
    pub quasi_covert: Option<QuasiCovert>,
    pub detector_attack: Option<DetectorAttack>,
}

/// An attack scenario bound to a concrete graph: partition computed, link
/// domains enumerated, preconditions checked.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedAttack {
    pub scenario: AttackScenario,
    /// Present for non-root attacks.
    pub partition: Option<Partition>,
    /// Links whose (x̂, y) channel carries the injected set point.
    pub fdi_links: Vec<(usize, usize)>,
    /// Links whose (x̂, y) channel carries the concealment replica outputs.
    pub covert_links: Vec<(usize, usize)>,
    /// Links whose z channel carries the constant a_z0.
    pub detector_links: Vec<(usize, usize)>,
}

/// Validate a scenario against a graph and enumerate the interceptor
/// domains.
pub fn resolve(
    scenario: AttackScenario,
    g: &DiGraph,
    n: usize,
) -> Result<ResolvedAttack, AttackError> {
    if scenario.a0.len() != n {
        return Err(AttackError::BadA0 {
            expected: n,
            got: scenario.a0.len(),
        });
    }
    if scenario.t_attack < 0.0 {
        return Err(AttackError::NegativeTime(scenario.t_attack));
    }
    if let Some(q) = &scenario.quasi_covert {
        if q.t_active < scenario.t_attack {
            return Err(AttackError::CovertBeforeAttack {
                t_qc: q.t_active,
                t_attack: scenario.t_attack,
            });
        }
    }
    if let Some(d) = &scenario.detector_attack {
        if d.t_active < 0.0 {
            return Err(AttackError::NegativeTime(d.t_active));
        }
        if d.a_z0.len() != n {
            return Err(AttackError::BadAz0 {
                expected: n,
                got: d.a_z0.len(),
            });
        }
    }

    let resolved = match &scenario.kind {
        AttackKind::Root { agent } => {
            if scenario.quasi_covert.is_some() || scenario.detector_attack.is_some() {
                return Err(AttackError::RootAttackExtras);
            }
            let roots = g.spanning_tree_roots();
            if roots.is_empty() {
                return Err(GraphError::NoSpanningTree.into());
            }
            if !roots.contains(agent) {
                return Err(GraphError::NotARoot(*agent).into());
            }
            let fdi_links = g
                .in_neighbors(*agent)
                .into_iter()
                .map(|j| (j, *agent))
                .collect();
            ResolvedAttack {
                scenario,
                partition: None,
                fdi_links,
                covert_links: Vec::new(),
                detector_links: Vec::new(),
            }
        }
        AttackKind::NonRoot { v_da } => {
            let partition = graph::partition_under_attack(g, v_da)?;
            if let Some(q) = &scenario.quasi_covert {
                if let Some((xc, xhatc)) = &q.init_override {
                    let expected = partition.n_a() * n;
                    if xc.len() != expected || xhatc.len() != expected {
                        return Err(AttackError::BadCovertOverride {
                            expected,
                            got: xc.len(),
                        });
                    }
                }
            }
            let mut fdi_links = Vec::new();
            for &i in &partition.v_da {
                for j in g.in_neighbors(i) {
                    if partition.v_nc.contains(&j) {
                        fdi_links.push((j, i));
                    }
                }
            }
            let mut covert_links = Vec::new();
            if scenario.quasi_covert.is_some() {
                for &j in &partition.v_nca {
                    for i in g.in_neighbors(j) {
                        if partition.v_a.contains(&i) {
                            covert_links.push((i, j));
                        }
                    }
                }
            }
            let detector_links = if scenario.detector_attack.is_some() {
                fdi_links.clone()
            } else {
                Vec::new()
            };
            // same-channel domains must be disjoint (guaranteed by the
            // partition: a sender cannot be both compromised and not)
            for link in &fdi_links {
                if covert_links.contains(link) {
                    return Err(AttackError::OverlappingDomains {
                        from: link.0,
                        to: link.1,
                    });
                }
            }
            ResolvedAttack {
                scenario,
                partition: Some(partition),
                fdi_links,
                covert_links,
                detector_links,
            }
        }
    };
    Ok(resolved)
}

/// Data-injection rewrite: the receiver sees the constant set point
/// (a_0, C·a_0) instead of the sender's true pair. Links outside the attack
/// domain pass through unchanged.
pub fn fdi_intercept(
    mut msg: LinkMessage,
    model: &PlantModel,
    attack: &ResolvedAttack,
) -> LinkMessage {
    if attack.fdi_links.contains(&(msg.from, msg.to)) {
        msg.xhat_part = attack.scenario.a0.clone();
        msg.y_part = &model.c_out * &attack.scenario.a0;
    }
    msg
}

/// Concealment rewrite: on attacked-to-listening links the replica's
/// (x̂_i^c, C·x_i^c) masquerades as the sender's true pair.
pub fn quasi_covert_intercept(
    mut msg: LinkMessage,
    state: &NetworkState,
    model: &PlantModel,
    attack: &ResolvedAttack,
) -> Result<LinkMessage, DynamicsError> {
    if attack.covert_links.contains(&(msg.from, msg.to)) {
        let covert = state
            .covert
            .as_ref()
            .ok_or(DynamicsError::CovertProcessNotRunning)?;
        let part = attack
            .partition
            .as_ref()
            .ok_or(DynamicsError::CovertProcessNotRunning)?;
        let n = model.n();
        let k = part
            .v_a
            .iter()
            .position(|&a| a == msg.from)
            .ok_or(DynamicsError::CovertProcessNotRunning)?;
        let xc: DVector<f64> = covert.x_c.rows(k * n, n).into();
        msg.xhat_part = covert.x_hat_c.rows(k * n, n).into();
        msg.y_part = &model.c_out * &xc;
    }
    Ok(msg)
}

/// Detector-channel rewrite: the predicted detector info is replaced by the
/// constant a_z0 on compromised links.
pub fn detector_intercept(mut msg: LinkMessage, attack: &ResolvedAttack) -> LinkMessage {
    if attack.detector_links.contains(&(msg.from, msg.to)) {
        let a_z0 = &attack.scenario.detector_attack.as_ref().unwrap().a_z0;
        msg.z_pred = a_z0.clone();
        msg.z_snap = a_z0.clone();
    }
    msg
}

/// Run every active interceptor over one message.
pub fn apply_interceptors(
    mut msg: LinkMessage,
    state: &NetworkState,
    model: &PlantModel,
    attack: &ResolvedAttack,
    active: ActiveSet,
) -> Result<LinkMessage, DynamicsError> {
    if active.fdi {
        msg = fdi_intercept(msg, model, attack);
    }
    if active.covert {
        msg = quasi_covert_intercept(msg, state, model, attack)?;
    }
    if active.detector {
        msg = detector_intercept(msg, attack);
    }
    Ok(msg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Broadcast;
    use crate::presets;

    fn benchmark_attack(covert: bool, detector: bool) -> (DiGraph, ResolvedAttack) {
        let g = presets::six_agent().2;
        let scenario = AttackScenario {
            kind: AttackKind::NonRoot { v_da: vec![3, 4] },
            a0: DVector::from_column_slice(&[1.0, 1.0]),
            t_attack: 10.0,
            quasi_covert: covert.then(|| QuasiCovert {
                t_active: 30.0,
                init_override: None,
            }),
            detector_attack: detector.then(|| DetectorAttack {
                a_z0: DVector::from_column_slice(&[40.0, 40.0]),
                t_active: 30.0,
            }),
        };
        let resolved = resolve(scenario, &g, 2).unwrap();
        (g, resolved)
    }

    fn message(from: usize, to: usize) -> LinkMessage {
        LinkMessage {
            from,
            to,
            y_part: DVector::from_column_slice(&[0.2, -0.1]),
            xhat_part: DVector::from_column_slice(&[0.3, 0.4]),
            z_pred: DVector::from_column_slice(&[0.5, 0.6]),
            z_snap: DVector::from_column_slice(&[0.5, 0.6]),
        }
    }

    fn empty_state(n_agents: usize, n: usize) -> NetworkState {
        NetworkState {
            t: 0.0,
            x: DVector::zeros(n_agents * n),
            x_hat: DVector::zeros(n_agents * n),
            z: DVector::zeros(n_agents * n),
            covert: None,
            broadcasts: (0..n_agents)
                .map(|_| Broadcast {
                    t_k: 0.0,
                    z_k: DVector::zeros(n),
                    count: 0,
                })
                .collect(),
        }
    }

    #[test]
    fn benchmark_link_domains() {
        let (_, resolved) = benchmark_attack(true, true);
        // 0-indexed: 2→4 and 3→5 become 1→3 and 2→4
        let mut fdi = resolved.fdi_links.clone();
        fdi.sort_unstable();
        assert_eq!(fdi, vec![(1, 3), (2, 4)]);
        // the only attacked-to-listening link is 4→3, i.e. 3→2
        assert_eq!(resolved.covert_links, vec![(3, 2)]);
        assert_eq!(resolved.detector_links.len(), 2);
    }

    #[test]
    fn inactive_pipeline_is_identity() {
        let (_, resolved) = benchmark_attack(true, true);
        let (model, _, _, _) = presets::six_agent();
        let state = empty_state(6, 2);
        let msg = message(1, 3);
        let out = apply_interceptors(
            msg.clone(),
            &state,
            &model,
            &resolved,
            ActiveSet::default(),
        )
        .unwrap();
        assert_eq!(out, msg);
    }

    #[test]
    fn fdi_rewrites_only_its_links() {
        let (_, resolved) = benchmark_attack(false, false);
        let (model, _, _, _) = presets::six_agent();
        let out = fdi_intercept(message(1, 3), &model, &resolved);
        assert_eq!(out.xhat_part.as_slice(), &[1.0, 1.0]);
        assert_eq!(out.y_part.as_slice(), &[1.0, 1.0]); // C = I here
        // link 5→3 (0-indexed 4→2) is not in the domain
        let out = fdi_intercept(message(4, 2), &model, &resolved);
        assert_eq!(out, message(4, 2));
    }

    #[test]
    fn fdi_fixed_point_when_sender_already_at_set_point() {
        let (_, resolved) = benchmark_attack(false, false);
        let (model, _, _, _) = presets::six_agent();
        let mut msg = message(1, 3);
        msg.xhat_part = DVector::from_column_slice(&[1.0, 1.0]);
        msg.y_part = DVector::from_column_slice(&[1.0, 1.0]);
        let out = fdi_intercept(msg.clone(), &model, &resolved);
        assert_eq!(out, msg);
    }

    #[test]
    fn covert_requires_running_replica_and_rewrites_scope() {
        let (_, resolved) = benchmark_attack(true, false);
        let (model, _, _, _) = presets::six_agent();
        let mut state = empty_state(6, 2);
        // not yet initialized: interceptor on an in-domain link must fail
        let err =
            quasi_covert_intercept(message(3, 2), &state, &model, &resolved).unwrap_err();
        assert_eq!(err, DynamicsError::CovertProcessNotRunning);

        // replica equal to the true states: message content unchanged
        state.covert = Some(crate::dynamics::CovertState {
            x_c: DVector::zeros(6), // v_a = {3,4,5} → 3 agents × n=2
            x_hat_c: DVector::from_column_slice(&[0.3, 0.4, 0.0, 0.0, 0.0, 0.0]),
        });
        let mut msg = message(3, 2);
        msg.y_part = DVector::zeros(2);
        let out = quasi_covert_intercept(msg.clone(), &state, &model, &resolved).unwrap();
        assert_eq!(out, msg);

        // links from uncompromised senders always pass through
        let out = quasi_covert_intercept(message(0, 2), &state, &model, &resolved).unwrap();
        assert_eq!(out, message(0, 2));
    }

    #[test]
    fn detector_intercept_rewrites_z_channels() {
        let (_, resolved) = benchmark_attack(true, true);
        let out = detector_intercept(message(1, 3), &resolved);
        assert_eq!(out.z_pred.as_slice(), &[40.0, 40.0]);
        assert_eq!(out.z_snap.as_slice(), &[40.0, 40.0]);
        assert_eq!(out.xhat_part, message(1, 3).xhat_part);
        let out = detector_intercept(message(3, 2), &resolved);
        assert_eq!(out, message(3, 2));
    }

    #[test]
    fn root_attack_resolution() {
        let g = presets::six_agent().2;
        let scenario = AttackScenario {
            kind: AttackKind::Root { agent: 0 },
            a0: DVector::from_column_slice(&[1.0, 1.0]),
            t_attack: 10.0,
            quasi_covert: None,
            detector_attack: None,
        };
        let resolved = resolve(scenario, &g, 2).unwrap();
        assert_eq!(resolved.fdi_links, vec![(1, 0)]); // agent 1's only in-neighbor is 2
        assert!(resolved.partition.is_none());

        let bad = AttackScenario {
            kind: AttackKind::Root { agent: 4 },
            a0: DVector::from_column_slice(&[1.0, 1.0]),
            t_attack: 10.0,
            quasi_covert: None,
            detector_attack: None,
        };
        assert_eq!(
            resolve(bad, &g, 2).unwrap_err(),
            AttackError::Graph(GraphError::NotARoot(4))
        );
    }

    #[test]
    fn resolution_rejections() {
        let g = presets::six_agent().2;
        let base = AttackScenario {
            kind: AttackKind::NonRoot { v_da: vec![3, 4] },
            a0: DVector::from_column_slice(&[1.0, 1.0]),
            t_attack: 10.0,
            quasi_covert: None,
            detector_attack: None,
        };

        let mut with_root = base.clone();
        with_root.kind = AttackKind::NonRoot { v_da: vec![0, 3] };
        assert_eq!(
            resolve(with_root, &g, 2).unwrap_err(),
            AttackError::Graph(GraphError::RootAttacked(0))
        );

        let mut early_covert = base.clone();
        early_covert.quasi_covert = Some(QuasiCovert {
            t_active: 5.0,
            init_override: None,
        });
        assert!(matches!(
            resolve(early_covert, &g, 2).unwrap_err(),
            AttackError::CovertBeforeAttack { .. }
        ));

        let mut bad_a0 = base.clone();
        bad_a0.a0 = DVector::from_column_slice(&[1.0]);
        assert!(matches!(
            resolve(bad_a0, &g, 2).unwrap_err(),
            AttackError::BadA0 { .. }
        ));

        let root_with_covert = AttackScenario {
            kind: AttackKind::Root { agent: 0 },
            quasi_covert: Some(QuasiCovert {
                t_active: 30.0,
                init_override: None,
            }),
            ..base
        };
        assert_eq!(
            resolve(root_with_covert, &g, 2).unwrap_err(),
            AttackError::RootAttackExtras
        );
    }
}
