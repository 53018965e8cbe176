//! Shared fixtures for the benchmarks.

use mtclf_core::{BoxRegion, SystemModel, TaskSpec};
use nalgebra::{dvector, DVector};

pub fn plane() -> SystemModel {
    SystemModel::single_integrator(2)
}

pub fn square() -> BoxRegion {
    BoxRegion::cube(2, -2.0, 2.0).expect("valid box")
}

pub fn corners() -> Vec<DVector<f64>> {
    vec![
        dvector![-1.5, 1.5],
        dvector![1.5, 1.5],
        dvector![-1.5, -1.5],
        dvector![1.5, -1.5],
    ]
}

/// Two tasks pulling towards opposite corners.
pub fn opposing_goals() -> Vec<TaskSpec> {
    vec![
        TaskSpec::analytic_goal("J1", dvector![-1.5, 1.5], 5.0).expect("valid task"),
        TaskSpec::analytic_goal("J2", dvector![1.5, -1.5], 5.0).expect("valid task"),
    ]
}

/// One corner task plus the nearest-of-four-corners task.
pub fn shared_goal() -> Vec<TaskSpec> {
    vec![
        TaskSpec::analytic_goal("J2", dvector![1.5, -1.5], 5.0).expect("valid task"),
        TaskSpec::min_goal("J3", corners(), 5.0).expect("valid task"),
    ]
}

/// `n` goal tasks spread on a circle, for scaling runs.
pub fn ring_of_goals(n: usize) -> Vec<TaskSpec> {
    (0..n)
        .map(|k| {
            let th = std::f64::consts::TAU * k as f64 / n as f64;
            TaskSpec::analytic_goal(format!("J{k}"), dvector![1.5 * th.cos(), 1.5 * th.sin()], 5.0)
                .expect("valid task")
        })
        .collect()
}
