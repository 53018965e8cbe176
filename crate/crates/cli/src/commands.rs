use std::io::Write;
use std::path::Path;

use mtclf_core::controller::SigmaMode;
use mtclf_core::executability::{
    common_goal_scan, grid_analysis, near_goal_controllable_radius, write_angle_ppm, write_grid_csv,
    write_placeholder_ppm, AnalysisError, GridAnalysis, Tolerances,
};
use mtclf_core::hjb_oracle::{value_iteration, HjbError};
use mtclf_core::simulation::{simulate as run_simulation, SimulationError};
use nalgebra::DVector;

use crate::{write_file, CliError, Scenario};

const NEAR_GOAL_BISECTIONS: usize = 20;

pub(crate) fn emit(out: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    writeln!(out, "{line}").map_err(CliError::io("<stdout>"))
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        $crate::commands::emit($out, format_args!($($arg)*))
    };
}
pub(crate) use say;

pub(crate) fn fmt_point(x: &DVector<f64>) -> String {
    let parts: Vec<String> = x.iter().map(|v| format!("{v:.6}")).collect();
    format!("({})", parts.join(","))
}

fn analysis_error(e: AnalysisError) -> CliError {
    match e {
        AnalysisError::Io(source) => CliError::Io {
            path: "<analysis output>".into(),
            source,
        },
        AnalysisError::Solver(status) => CliError::Qp {
            step: 0,
            reason: format!("executability LP stopped with status {status:?}"),
        },
        other => CliError::Config(other.to_string()),
    }
}

fn fraction(grid: &GridAnalysis, flag: impl Fn(&mtclf_core::ExecutabilityReport) -> bool) -> f64 {
    grid.reports.iter().filter(|r| flag(r)).count() as f64 / grid.reports.len() as f64
}

pub fn analyze(s: &Scenario, out: &mut dyn Write) -> Result<(), CliError> {
    let tol = Tolerances::for_tasks(&s.tasks);
    let grid = grid_analysis(&s.tasks, &s.model, &s.region, s.grid_resolution, &tol).map_err(analysis_error)?;

    let mut csv = Vec::new();
    write_grid_csv(&grid, &mut csv).map_err(CliError::io("grid.csv"))?;
    let grid_path = s.output_dir.join("grid.csv");
    write_file(&grid_path, &csv)?;

    say!(out, "cells={}", grid.reports.len())?;
    say!(out, "independent_fraction={:.6}", fraction(&grid, |r| r.independent))?;
    say!(out, "orthogonal_fraction={:.6}", fraction(&grid, |r| r.orthogonal))?;
    say!(out, "controllable_fraction={:.6}", fraction(&grid, |r| r.concurrently_controllable))?;
    say!(out, "executable_fraction={:.6}", grid.executable_fraction())?;
    let components = grid.non_executable_components();
    say!(out, "non_executable_components={}", components.len())?;
    say!(out, "largest_non_executable_component={}", components.first().map_or(0, Vec::len))?;
    say!(out, "grid_csv={}", grid_path.display())?;

    if grid.angles.is_empty() {
        let mut ppm = Vec::new();
        write_placeholder_ppm(grid.xs.len(), grid.ys.len(), &mut ppm).map_err(CliError::io("placeholder.ppm"))?;
        let path = s.output_dir.join("angle_none.ppm");
        write_file(&path, &ppm)?;
        say!(out, "heatmap={}", path.display())?;
    }
    for (k, pair) in grid.angles.iter().enumerate() {
        let stem = format!("angle_{}_{}", pair.i, pair.j);
        let mut ppm = Vec::new();
        write_angle_ppm(&grid, k, &mut ppm).map_err(CliError::io(format!("{stem}.ppm")))?;
        let ppm_path = s.output_dir.join(format!("{stem}.ppm"));
        write_file(&ppm_path, &ppm)?;

        let mut csv = String::from("x1,x2,angle\n");
        for (idx, v) in pair.values.iter().enumerate() {
            let (x, y) = grid.point(idx);
            csv.push_str(&format!("{x},{y},{v}\n"));
        }
        write_file(&s.output_dir.join(format!("{stem}.csv")), csv.as_bytes())?;
        say!(out, "heatmap={}", ppm_path.display())?;
    }

    let goals = common_goal_scan(&s.tasks, &s.model, &s.region, s.grid_resolution, &tol).map_err(analysis_error)?;
    say!(out, "common_goals={}", goals.points.len())?;
    for (k, g) in goals.points.iter().enumerate() {
        // Balls stay inside the region.
        let max_radius = (g - s.region.lower()).min().min((s.region.upper() - g).min());
        let radius = near_goal_controllable_radius(&s.tasks, &s.model, g, max_radius, NEAR_GOAL_BISECTIONS, &tol)
            .map_err(analysis_error)?;
        say!(out, "common_goal_{k}={} controllable_radius={radius:.6}", fmt_point(g))?;
    }
    Ok(())
}

pub fn simulate(s: &Scenario, x0: &[f64], sigma: Option<SigmaMode>, out: &mut dyn Write) -> Result<(), CliError> {
    if x0.len() != s.model.state_dim() {
        return Err(CliError::Config(format!(
            "--x0 has {} entries, the model state has {}",
            x0.len(),
            s.model.state_dim()
        )));
    }
    let mut controller = s.controller.clone();
    if let Some(mode) = sigma {
        controller.sigma_mode = mode;
    }
    let x0 = DVector::from_column_slice(x0);
    let traj = run_simulation(&s.tasks, &s.model, &x0, &controller, &s.simulation, Some(&s.region)).map_err(|e| match e {
        SimulationError::Control { step, source } => CliError::Qp {
            step,
            reason: source.to_string(),
        },
        other => CliError::Config(other.to_string()),
    })?;

    let mut csv = Vec::new();
    traj.write_csv(&mut csv).map_err(CliError::io("trajectory.csv"))?;
    let path = s.output_dir.join("trajectory.csv");
    write_file(&path, &csv)?;

    say!(
        out,
        "term={} final={} Jmax={:.6}",
        traj.termination,
        fmt_point(traj.final_state()),
        traj.max_final_value()
    )?;
    say!(out, "steps={}", traj.inputs.len())?;
    say!(out, "slack_used={}", traj.used_slack())?;
    let breaches = traj.sublevel_monitors.iter().filter(|m| m.breached).count();
    say!(out, "sublevel_breaches={breaches}")?;
    say!(out, "lyapunov_violations={}", traj.lyapunov_violations.len())?;
    say!(out, "trajectory={}", path.display())
}

pub fn solve_hjb(
    s: &Scenario,
    task: usize,
    discount: Option<f64>,
    path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let spec_task = s
        .tasks
        .get(task)
        .ok_or_else(|| CliError::Config(format!("task {task} out of range for {} tasks", s.tasks.len())))?;
    let mut spec = s.grid_spec(task);
    if let Some(beta) = discount {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(CliError::Config(format!("--discount must be finite and nonnegative, got {beta}")));
        }
        spec.discount = beta;
    }
    let result = value_iteration(&spec_task.state_cost, &s.model, &spec).map_err(|e| match e {
        e @ (HjbError::NotConverged { .. } | HjbError::Unreached { .. }) => CliError::NotConverged(e.to_string()),
        other => CliError::Config(other.to_string()),
    })?;
    let target = path.map_or_else(|| s.output_dir.join(format!("task{task}.vfgrid")), Path::to_path_buf);
    write_file(&target, result.table.to_vfgrid_string().as_bytes())?;
    say!(out, "sweeps={}", result.sweeps())?;
    say!(out, "residual={:.3e}", result.residuals.last().copied().unwrap_or(0.0))?;
    say!(out, "discount={}", spec.discount)?;
    say!(out, "grid={}", target.display())
}
