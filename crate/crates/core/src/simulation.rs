//! Closed-loop integration of `ẋ = f(x) + g(x)u(x)` under the min-norm controller.

use std::fmt;
use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{control_step, ControlError, ControllerConfig, WarmStart};
use crate::dynamics::{BoxRegion, DynamicsError, SystemModel};
use crate::value_functions::{TaskSpec, ValueError};

/// Slacks below this count as zero for the Lyapunov-sum check.
pub const ZERO_SLACK: f64 = 1e-9;
/// Allowed step-to-step growth of `Σᵢ J̃ᵢ` when every slack is zero.
pub const LYAPUNOV_SLACK: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("controller failed at step {step}: {source}")]
    Control {
        step: usize,
        #[source]
        source: ControlError,
    },
    #[error("initial state lies outside the analysis region")]
    StartOutsideRegion,
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Value(#[from] ValueError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub dt: f64,
    pub max_steps: usize,
    /// Distance to the nearest common goal that counts as arrival.
    pub goal_tol: f64,
    /// `max_i J̃ᵢ` at or below this counts as every task being done.
    pub value_threshold: f64,
    pub stall_u_tol: f64,
    pub stall_window: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            max_steps: 5000,
            goal_tol: 0.05,
            value_threshold: 0.05,
            stall_u_tol: 1e-3,
            stall_window: 50,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), SimulationError> {
        let positive = [
            ("dt", self.dt),
            ("goal_tol", self.goal_tol),
            ("value_threshold", self.value_threshold),
            ("stall_u_tol", self.stall_u_tol),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(SimulationError::InvalidConfig(format!("{name} must be positive, got {v}")));
        }
        if self.stall_window == 0 {
            return Err(SimulationError::InvalidConfig("stall_window must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    Stalled,
    MaxSteps,
    LeftRegion,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::Converged => "converged",
            Termination::Stalled => "stalled",
            Termination::MaxSteps => "max_steps",
            Termination::LeftRegion => "left_region",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SublevelMonitor {
    pub task: usize,
    pub level: f64,
    pub breached: bool,
    pub breach_step: Option<usize>,
    pub breach_time: Option<f64>,
    /// Largest `J̃ᵢ − level` seen; negative when never breached.
    pub max_excess: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// One per step; `inputs.len() == states.len() − 1`.
    pub inputs: Vec<DVector<f64>>,
    /// `J̃ᵢ` at every state.
    pub task_values: Vec<Vec<f64>>,
    /// Slack per task at every step; zero for inactive tasks.
    pub slacks: Vec<Vec<f64>>,
    pub termination: Termination,
    pub sublevel_monitors: Vec<SublevelMonitor>,
    /// Steps with every slack below [`ZERO_SLACK`] where `Σᵢ J̃ᵢ` still grew by more than [`LYAPUNOV_SLACK`].
    pub lyapunov_violations: Vec<usize>,
    /// Negative `σ̄` radicands clamped along the run.
    pub clamped_radicands: usize,
}

impl Trajectory {
    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has at least the initial state")
    }

    pub fn final_values(&self) -> &[f64] {
        self.task_values.last().expect("trajectory has at least the initial state")
    }

    pub fn max_final_value(&self) -> f64 {
        self.final_values().iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Whether any step carried a slack above [`ZERO_SLACK`].
    pub fn used_slack(&self) -> bool {
        self.slacks.iter().flatten().any(|&d| d > ZERO_SLACK)
    }

    /// CSV with header `t,x1..xn,u1..um,J1..JN,delta1..deltaN,term`.
    ///
    /// The last state has no input, so its `u` and `delta` fields are `nan`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let n = self.states.first().map_or(0, |s| s.len());
        let m = self.inputs.first().map_or(0, |u| u.len());
        let tasks = self.task_values.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        header.extend((1..=tasks).map(|i| format!("J{i}")));
        header.extend((1..=tasks).map(|i| format!("delta{i}")));
        header.push("term".into());
        writeln!(out, "{}", header.join(","))?;
        for (k, x) in self.states.iter().enumerate() {
            let mut fields = vec![self.times[k].to_string()];
            fields.extend(x.iter().map(f64::to_string));
            match self.inputs.get(k) {
                Some(u) => fields.extend(u.iter().map(f64::to_string)),
                None => fields.extend(std::iter::repeat_n("nan".to_string(), m)),
            }
            fields.extend(self.task_values[k].iter().map(f64::to_string));
            match self.slacks.get(k) {
                Some(d) => fields.extend(d.iter().map(f64::to_string)),
                None => fields.extend(std::iter::repeat_n("nan".to_string(), tasks)),
            }
            fields.push(self.termination.to_string());
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// Goal points listed by every task.
pub fn common_goal_points(tasks: &[TaskSpec]) -> Vec<DVector<f64>> {
    let Some((first, rest)) = tasks.split_first() else {
        return Vec::new();
    };
    first
        .goal_points
        .iter()
        .filter(|g| {
            rest.iter()
                .all(|t| t.goal_points.iter().any(|h| h.len() == g.len() && (*g - h).norm() <= 1e-9))
        })
        .cloned()
        .collect()
}

fn task_values(tasks: &[TaskSpec], x: &DVector<f64>) -> Result<Vec<f64>, ValueError> {
    tasks.iter().map(|t| t.value(x)).collect()
}

fn rk4_hold(model: &SystemModel, x: &DVector<f64>, u: &DVector<f64>, dt: f64) -> Result<DVector<f64>, DynamicsError> {
    let k1 = model.velocity(x, u)?;
    let k2 = model.velocity(&(x + &k1 * (0.5 * dt)), u)?;
    let k3 = model.velocity(&(x + &k2 * (0.5 * dt)), u)?;
    let k4 = model.velocity(&(x + &k3 * dt), u)?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// Integrates the closed loop from `x0` with a zero-order hold on the input.
///
/// `region`, when given, must contain `x0`; leaving it ends the run.
pub fn simulate(
    tasks: &[TaskSpec],
    model: &SystemModel,
    x0: &DVector<f64>,
    controller: &ControllerConfig,
    config: &SimulationConfig,
    region: Option<&BoxRegion>,
) -> Result<Trajectory, SimulationError> {
    config.validate()?;
    if x0.len() != model.state_dim() {
        return Err(DynamicsError::StateShape {
            expected: model.state_dim(),
            got: x0.len(),
        }
        .into());
    }
    if let Some(r) = region {
        if !r.contains(x0, 1e-12) {
            return Err(SimulationError::StartOutsideRegion);
        }
    }
    let goals = common_goal_points(tasks);
    let done = |x: &DVector<f64>, values: &[f64]| {
        let max_value = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let near_goal = goals.is_empty() || goals.iter().any(|g| (x - g).norm() <= config.goal_tol);
        max_value <= config.value_threshold && near_goal
    };

    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![x0.clone()],
        inputs: Vec::new(),
        task_values: vec![task_values(tasks, x0)?],
        slacks: Vec::new(),
        termination: Termination::MaxSteps,
        sublevel_monitors: Vec::new(),
        lyapunov_violations: Vec::new(),
        clamped_radicands: 0,
    };
    let mut warm: Option<WarmStart> = None;
    let mut quiet_steps = 0usize;
    let mut x = x0.clone();
    if done(&x, &traj.task_values[0]) {
        traj.termination = Termination::Converged;
    } else {
        for step in 0..config.max_steps {
            let ctl = control_step(tasks, model, &x, controller, warm.as_ref())
                .map_err(|source| SimulationError::Control { step, source })?;
            warm = Some(ctl.warm_start());
            traj.clamped_radicands += ctl.diagnostics.clamped_radicands;
            let u = ctl.solution.input.clone();
            let mut slack = vec![0.0; tasks.len()];
            for (k, &task) in ctl.active_tasks.iter().enumerate() {
                slack[task] = ctl.solution.slacks[k];
            }

            x = rk4_hold(model, &x, &u, config.dt)?;
            let values = task_values(tasks, &x)?;
            let prev_sum: f64 = traj.task_values[step].iter().sum();
            if slack.iter().all(|&d| d < ZERO_SLACK) && values.iter().sum::<f64>() > prev_sum + LYAPUNOV_SLACK {
                traj.lyapunov_violations.push(step);
            }
            quiet_steps = if u.norm() <= config.stall_u_tol { quiet_steps + 1 } else { 0 };

            traj.times.push((step + 1) as f64 * config.dt);
            traj.states.push(x.clone());
            traj.inputs.push(u);
            traj.slacks.push(slack);
            traj.task_values.push(values);
            let values = &traj.task_values[step + 1];

            if done(&x, values) {
                traj.termination = Termination::Converged;
                break;
            }
            if region.is_some_and(|r| !r.contains(&x, 1e-9)) {
                traj.termination = Termination::LeftRegion;
                break;
            }
            if quiet_steps >= config.stall_window {
                traj.termination = Termination::Stalled;
                break;
            }
        }
    }
    traj.sublevel_monitors = monitor_sublevels(&traj, None);
    Ok(traj)
}

/// Flags the first step where `J̃ᵢ` exceeds its level; levels default to `J̃ᵢ(x0)`.
pub fn monitor_sublevels(traj: &Trajectory, levels: Option<&[f64]>) -> Vec<SublevelMonitor> {
    let Some(initial) = traj.task_values.first() else {
        return Vec::new();
    };
    (0..initial.len())
        .map(|i| {
            let level = levels.and_then(|l| l.get(i).copied()).unwrap_or(initial[i]);
            let mut monitor = SublevelMonitor {
                task: i,
                level,
                breached: false,
                breach_step: None,
                breach_time: None,
                max_excess: f64::NEG_INFINITY,
            };
            for (k, values) in traj.task_values.iter().enumerate() {
                let excess = values[i] - level;
                monitor.max_excess = monitor.max_excess.max(excess);
                if excess > 0.0 && !monitor.breached {
                    monitor.breached = true;
                    monitor.breach_step = Some(k);
                    monitor.breach_time = Some(traj.times[k]);
                }
            }
            monitor
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn corners() -> Vec<DVector<f64>> {
        vec![dvector![-1.5, 1.5], dvector![1.5, 1.5], dvector![-1.5, -1.5], dvector![1.5, -1.5]]
    }

    fn example_one() -> Vec<TaskSpec> {
        vec![
            TaskSpec::analytic_goal("j1", dvector![-1.5, 1.5], 5.0).unwrap(),
            TaskSpec::analytic_goal("j2", dvector![1.5, -1.5], 5.0).unwrap(),
        ]
    }

    fn example_two() -> Vec<TaskSpec> {
        vec![
            TaskSpec::analytic_goal("j2", dvector![1.5, -1.5], 5.0).unwrap(),
            TaskSpec::min_goal("j3", corners(), 5.0).unwrap(),
        ]
    }

    fn region() -> BoxRegion {
        BoxRegion::cube(2, -2.0, 2.0).unwrap()
    }

    /// Slack weight of the shipped example scenarios.
    fn run(tasks: &[TaskSpec], x0: DVector<f64>) -> Trajectory {
        run_with(tasks, x0, 1.0)
    }

    fn run_with(tasks: &[TaskSpec], x0: DVector<f64>, slack_weight: f64) -> Trajectory {
        let model = SystemModel::single_integrator(2);
        let controller = ControllerConfig {
            slack_weight,
            ..Default::default()
        };
        simulate(tasks, &model, &x0, &controller, &SimulationConfig::default(), Some(&region())).unwrap()
    }

    #[test]
    fn example_one_stalls_on_the_segment() {
        let t = run(&example_one(), dvector![0.5, 0.5]);
        assert_eq!(t.termination, Termination::Stalled);
        let x = t.final_state();
        assert!((x[0] + x[1]).abs() < 1e-3, "{x:?}");
        assert!(x[0].abs() < 1.5);
        assert!(t.final_values().iter().all(|&v| v > 0.05));
        assert_eq!(t.inputs.len() + 1, t.states.len());
    }

    #[test]
    fn example_two_converges_near_shared_goal() {
        let t = run(&example_two(), dvector![1.0, -1.0]);
        assert_eq!(t.termination, Termination::Converged);
        assert!((t.final_state() - dvector![1.5, -1.5]).norm() <= 0.05);
        assert!(t.max_final_value() <= 0.05);

        let stiff = run_with(&example_two(), dvector![1.0, -1.0], 1e10);
        assert_eq!(stiff.termination, Termination::Converged);
        assert!(!stiff.used_slack());
        assert!(stiff.lyapunov_violations.is_empty());
    }

    #[test]
    fn example_two_stalls_between_goals() {
        let t = run(&example_two(), dvector![-1.2, 1.2]);
        assert_eq!(t.termination, Termination::Stalled);
        assert!(t.used_slack() || t.sublevel_monitors.iter().any(|m| m.breached));
        assert!(t.max_final_value() > 0.05);
    }

    #[test]
    fn single_task_decreases_monotonically() {
        let task = vec![TaskSpec::analytic_goal("j", dvector![-1.5, 1.5], 5.0).unwrap()];
        for x0 in [dvector![1.9, -1.9], dvector![0.0, 0.0], dvector![-1.0, -1.8]] {
            let t = run_with(&task, x0, 1e10);
            assert!(!t.used_slack());
            assert_eq!(t.termination, Termination::Converged);
            assert!(t.task_values.windows(2).all(|w| w[1][0] <= w[0][0] + 1e-12));
            assert!(!t.sublevel_monitors[0].breached);
            assert!(t.lyapunov_violations.is_empty());
        }
    }

    #[test]
    fn already_at_goal() {
        let task = vec![TaskSpec::analytic_goal("j", dvector![0.5, 0.5], 5.0).unwrap()];
        let t = run(&task, dvector![0.5, 0.5]);
        assert_eq!(t.termination, Termination::Converged);
        assert!(t.inputs.is_empty());
        assert!(!t.sublevel_monitors[0].breached);
    }

    #[test]
    fn runs_are_deterministic() {
        let a = run(&example_two(), dvector![-1.2, 1.2]);
        let b = run(&example_two(), dvector![-1.2, 1.2]);
        assert_eq!(a.states, b.states);
        assert_eq!(a.inputs, b.inputs);
    }

    #[test]
    fn leaving_region_and_bad_start() {
        // A task whose goal lies outside the region pulls the state across the boundary.
        let task = vec![TaskSpec::analytic_goal("out", dvector![3.0, 0.0], 5.0).unwrap()];
        let t = run(&task, dvector![1.5, 0.0]);
        assert_eq!(t.termination, Termination::LeftRegion);
        let model = SystemModel::single_integrator(2);
        let err = simulate(&task, &model, &dvector![2.5, 0.0], &ControllerConfig::default(), &SimulationConfig::default(), Some(&region()));
        assert!(matches!(err, Err(SimulationError::StartOutsideRegion)));
    }

    #[test]
    fn box_face_blocks_outward_motion() {
        let task = vec![TaskSpec::analytic_goal("out", dvector![3.0, 0.0], 5.0).unwrap()];
        let model = SystemModel::single_integrator(2);
        let controller = ControllerConfig {
            slack_weight: 1.0,
            box_region: Some(region()),
            ..Default::default()
        };
        let t = simulate(&task, &model, &dvector![2.0, 0.0], &controller, &SimulationConfig::default(), Some(&region())).unwrap();
        assert_eq!(t.termination, Termination::Stalled);
        assert!(t.states.iter().all(|x| region().contains(x, 1e-9)));
        assert!(t.used_slack());
    }

    #[test]
    fn monitors() {
        let t = run(&example_one(), dvector![0.5, 0.5]);
        let tight = monitor_sublevels(&t, Some(&[0.0, 0.0]));
        assert!(tight.iter().all(|m| m.breached && m.breach_step == Some(0)));
        let empty = Trajectory {
            times: vec![],
            states: vec![],
            inputs: vec![],
            task_values: vec![],
            slacks: vec![],
            termination: Termination::MaxSteps,
            sublevel_monitors: vec![],
            lyapunov_violations: vec![],
            clamped_radicands: 0,
        };
        assert!(monitor_sublevels(&empty, None).is_empty());
    }

    #[test]
    fn csv_layout() {
        let task = vec![TaskSpec::analytic_goal("j", dvector![0.5, 0.5], 5.0).unwrap()];
        let t = run(&task, dvector![0.0, 0.5]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,x1,x2,u1,u2,J1,delta1,term"));
        assert_eq!(text.lines().count(), t.states.len() + 1);
        assert!(text.lines().last().unwrap().ends_with(",nan,converged"));
    }
}
