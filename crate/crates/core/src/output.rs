//! Run report and the plain-text output files of a reconstruction.
//!
//! Every number is written with 17 significant digits in `{:e}` notation,
//! which does not depend on the locale. Wall-clock times are kept out of
//! `report.txt` so that the report is byte-identical across runs; they go
//! to `timing.txt`.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{flux_contour, BoundaryKind};
use crate::profiles::profile_table;
use crate::reconstruction::{ConvergenceHistory, FamilyMisfit, Problem, Reconstruction, Status};
use crate::twin::ProfileErrors;

/// ψ̄ levels of the written contours.
pub const CONTOUR_LEVELS: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

/// Summary of one sensor family.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MisfitSummary {
    pub family: &'static str,
    pub count: usize,
    /// `‖predicted − measured‖ / ‖measured‖`.
    pub relative: f64,
    /// Largest per-sensor relative error.
    pub max_sensor: f64,
    pub chi_squared: f64,
}

impl MisfitSummary {
    fn new(family: &'static str, m: &FamilyMisfit) -> Self {
        MisfitSummary {
            family,
            count: m.len(),
            relative: if m.is_empty() { 0.0 } else { m.relative() },
            max_sensor: m.per_sensor().into_iter().fold(0.0, f64::max),
            chi_squared: m.chi_squared(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub history: ConvergenceHistory,
    pub lambda: f64,
    pub psi_axis: f64,
    pub psi_boundary: f64,
    pub boundary_kind: BoundaryKind,
    pub axis: [f64; 2],
    /// `∫_{Ω_p} j_φ dΩ` of the final state. Fluxes and current are in the
    /// sign convention of the input data.
    pub plasma_current: f64,
    pub misfits: Vec<MisfitSummary>,
    /// Recovered against true profiles (twin runs only).
    pub profile_errors: Option<ProfileErrors>,
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

impl RunReport {
    pub fn new(problem: &Problem, run: &Reconstruction, profile_errors: Option<ProfileErrors>) -> Result<Self> {
        let st = &run.state;
        let m = problem.misfits(st)?;
        Ok(RunReport {
            history: run.history.clone(),
            lambda: st.lambda,
            psi_axis: problem.sign * st.domain.psi_axis,
            psi_boundary: problem.sign * st.domain.psi_b,
            boundary_kind: st.domain.boundary_kind,
            axis: [st.domain.axis_point.r, st.domain.axis_point.z],
            plasma_current: problem.sign * problem.total_current(st),
            misfits: vec![
                MisfitSummary::new("flux_loops", &m.flux_loops),
                MisfitSummary::new("probes", &m.probes),
                MisfitSummary::new("polarimetry", &m.polarimetry),
                MisfitSummary::new("interferometry", &m.interferometry),
            ],
            profile_errors,
        })
    }

    pub fn misfit(&self, family: &str) -> Option<&MisfitSummary> {
        self.misfits.iter().find(|m| m.family == family)
    }

    /// Deterministic text form (no wall times).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let status = match self.history.status {
            Status::Converged => "converged",
            Status::MaxIterReached => "max_iter_reached",
        };
        let kind = match self.boundary_kind {
            BoundaryKind::Limiter => "limiter",
            BoundaryKind::XPoint => "x_point",
        };
        let _ = writeln!(s, "status {status}");
        let _ = writeln!(s, "iterations {}", self.history.iterations());
        let _ = writeln!(s, "lambda {}", num(self.lambda));
        let _ = writeln!(s, "psi_axis {}", num(self.psi_axis));
        let _ = writeln!(s, "psi_boundary {}", num(self.psi_boundary));
        let _ = writeln!(s, "boundary {kind}");
        let _ = writeln!(s, "axis {} {}", num(self.axis[0]), num(self.axis[1]));
        let _ = writeln!(s, "plasma_current {}", num(self.plasma_current));
        let _ = writeln!(s, "# iteration psi_residual a_residual b_residual lambda");
        for r in &self.history.records {
            let _ = writeln!(
                s,
                "iteration {} {} {} {} {}",
                r.iteration,
                num(r.psi_residual),
                num(r.a_residual),
                num(r.b_residual),
                num(r.lambda)
            );
        }
        let _ = writeln!(s, "# family count relative max_sensor chi_squared");
        for m in &self.misfits {
            let _ = writeln!(
                s,
                "misfit {} {} {} {} {}",
                m.family,
                m.count,
                num(m.relative),
                num(m.max_sensor),
                num(m.chi_squared)
            );
        }
        if let Some(e) = &self.profile_errors {
            let _ = writeln!(s, "# relative L2 errors against the truth");
            let _ = writeln!(s, "error_a {}", num(e.a));
            let _ = writeln!(s, "error_b {}", num(e.b));
            let _ = writeln!(s, "error_ne {}", num(e.ne));
            let _ = writeln!(s, "error_psi {}", num(e.psi));
        }
        s
    }

    /// Per-iteration wall times in seconds.
    pub fn timing_text(&self) -> String {
        let mut s = String::from("# iteration wall_time_s\n");
        for r in &self.history.records {
            let _ = writeln!(s, "{} {}", r.iteration, num(r.wall_time));
        }
        let _ = writeln!(s, "# mean {}", num(self.history.mean_wall_time()));
        s
    }
}

/// `node r z ψ ψ̄` for every node, ψ in the sign convention of the input.
pub fn psi_table(problem: &Problem, run: &Reconstruction) -> String {
    let st = &run.state;
    let mut s = String::from("# node r z psi psibar\n");
    for (i, (p, &v)) in problem.mesh.nodes().iter().zip(st.psi.values()).enumerate() {
        let psi = problem.sign * v;
        let _ = writeln!(s, "{i} {} {} {} {}", num(p.r), num(p.z), num(psi), num(st.domain.psibar(v)));
    }
    s
}

/// Polylines at [`CONTOUR_LEVELS`]: a `contour <ψ̄> <count>` line followed by
/// `count` lines `r z`. A level without a closed contour has count 0.
pub fn contour_table(problem: &Problem, run: &Reconstruction) -> String {
    let st = &run.state;
    let mut s = String::from("# contour psibar count, then count lines: r z\n");
    for &level in &CONTOUR_LEVELS {
        let points = flux_contour(&problem.mesh, &st.psi, &st.domain, level)
            .map(|c| c.points)
            .unwrap_or_default();
        let _ = writeln!(s, "contour {} {}", num(level), points.len());
        for p in points {
            let _ = writeln!(s, "{} {}", num(p.r), num(p.z));
        }
    }
    s
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Writes `psi.txt`, `profiles.txt`, `contours.txt`, `report.txt` and
/// `timing.txt` into `dir`, creating it if needed.
pub fn write_outputs(dir: &Path, problem: &Problem, run: &Reconstruction, report: &RunReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(dir, "psi.txt", &psi_table(problem, run))?;
    write(dir, "profiles.txt", &profile_table(&run.derived))?;
    write(dir, "contours.txt", &contour_table(problem, run))?;
    write(dir, "report.txt", &report.to_text())?;
    write(dir, "timing.txt", &report.timing_text())
}
