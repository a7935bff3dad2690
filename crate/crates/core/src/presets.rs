//! The six-agent benchmark network used by the bundled scenarios and the
//! test suite: a two-state plant with both states measured, two
//! spanning-tree roots (agents 1 and 2), and in the canonical attack an
//! attacked region {4,5,6} downstream of the directly attacked pair {4,5}.

use crate::detection::DetectorParams;
use crate::dynamics::{PlantModel, ProtocolGains};
use crate::graph::DiGraph;
use crate::numerics::RMat;

/// Plant, protocol gains, communication graph, and detector parameters of
/// the six-agent benchmark.
pub fn six_agent() -> (PlantModel, ProtocolGains, DiGraph, Option<DetectorParams>) {
    let model = PlantModel {
        a: RMat::from_row_slice(2, 2, &[-2.0, 2.0, -1.0, 1.0]),
        b: RMat::from_row_slice(2, 1, &[1.0, 0.0]),
        c_out: RMat::identity(2, 2),
    };
    let gains = ProtocolGains {
        coupling: -2.0,
        observer_gain: RMat::from_row_slice(2, 2, &[15.0, 0.0, 15.0, 15.0]),
        control_gain: RMat::from_row_slice(1, 2, &[2.0, -10.0]),
    };
    // in-neighbor lists (1-indexed): 1←{2}, 2←{1}, 3←{1,4}, 4←{2,6},
    // 5←{3}, 6←{5}
    #[rustfmt::skip]
    let adj = [
        0, 1, 0, 0, 0, 0,
        1, 0, 0, 0, 0, 0,
        1, 0, 0, 1, 0, 0,
        0, 1, 0, 0, 0, 1,
        0, 0, 1, 0, 0, 0,
        0, 0, 0, 0, 1, 0,
    ];
    let graph = DiGraph::from_adjacency(6, &adj).unwrap();
    let detector = DetectorParams {
        a_z: RMat::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]),
        b_z: RMat::identity(2, 2) * 5.0,
        f_z: RMat::identity(2, 2) * 10.0,
        c_z: 0.002,
        alpha: 0.2,
        eta_z: 3.0,
    };
    (model, gains, graph, Some(detector))
}
