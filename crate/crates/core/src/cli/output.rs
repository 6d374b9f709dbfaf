//! Run directory layout and the energy audit.
//!
//! ```text
//! load_disp.csv    step, applied displacement, reaction
//! energy.csv       step, E, cumulative D, ΔE + D, LB, UB, passed, acceptance
//! run.json         config echo, backtracking events, counters, warnings
//! mesh.msh         the mesh the run used
//! snapshots/       step_NNNNNN.vtk
//! intermediates/   solve_NNNNNN.vtk (only with save_intermediates)
//! ```

use super::config::RunConfig;
use super::vtk::{read_snapshot, write_snapshot, VtkError};
use crate::driver::{Acceptance, BacktrackEvent, Counters, Intermediate, Observer, RunHistory, Simulation, CLAMP_ABORT};
use crate::energetics::{check_two_sided, TwoSidedInputs};
use crate::mesh::{read_gmsh, write_gmsh, Mesh, MeshError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const LOAD_HEADER: &str = "step,displacement,reaction";
pub const ENERGY_HEADER: &str = "step,E,sum_D,dE_plus_D,LB,UB,passed,acceptance";
pub const INTERMEDIATE_HEADER: &str = "solve,step,displacement,reaction,E,sum_D,passed";

/// Write through a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn append_line(path: &Path, line: &str) -> io::Result<()> {
    let mut f = fs::OpenOptions::new().append(true).open(path)?;
    f.write_all(line.as_bytes())?;
    f.write_all(b"\n")?;
    f.flush()
}

/// Shortest round-trip representation; `-0` prints as `0`.
pub fn fmt(x: f64) -> String {
    format!("{:e}", x + 0.0)
}

pub fn snapshot_path(dir: &Path, step: usize) -> PathBuf {
    dir.join("snapshots").join(format!("step_{step:06}.vtk"))
}

fn acceptance_name(a: Acceptance) -> String {
    serde_json::to_value(a).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

/// Total displacement `U + U_D`.
fn total_disp(u: &[f64], ud: &[f64]) -> Vec<f64> {
    u.iter().zip(ud).map(|(a, b)| a + b).collect()
}

/// Observer that keeps the run directory in sync with the accepted history.
pub struct RunWriter<'a> {
    dir: PathBuf,
    sim: &'a Simulation,
    every: usize,
    load_rows: Vec<String>,
    energy_rows: Vec<String>,
    cum_d: Vec<f64>,
    snapshots: BTreeSet<usize>,
    intermediates: bool,
    pub error: Option<io::Error>,
}

impl<'a> RunWriter<'a> {
    /// Prepare `dir`: write the mesh, empty CSVs, and remove snapshots left
    /// over from an earlier run.
    pub fn create(dir: &Path, sim: &'a Simulation, cfg: &RunConfig) -> io::Result<Self> {
        fs::create_dir_all(dir.join("snapshots"))?;
        for sub in ["snapshots", "intermediates"] {
            let d = dir.join(sub);
            if d.is_dir() {
                for entry in fs::read_dir(&d)? {
                    let p = entry?.path();
                    if p.extension().map_or(false, |e| e == "vtk") {
                        fs::remove_file(p)?;
                    }
                }
            }
        }
        write_atomic(&dir.join("mesh.msh"), write_gmsh(&sim.disc.mesh).as_bytes())?;
        write_atomic(&dir.join("load_disp.csv"), format!("{LOAD_HEADER}\n").as_bytes())?;
        write_atomic(&dir.join("energy.csv"), format!("{ENERGY_HEADER}\n").as_bytes())?;
        let intermediates = cfg.run.save_intermediates;
        if intermediates {
            fs::create_dir_all(dir.join("intermediates"))?;
            write_atomic(&dir.join("intermediates.csv"), format!("{INTERMEDIATE_HEADER}\n").as_bytes())?;
        } else {
            let _ = fs::remove_file(dir.join("intermediates.csv"));
        }
        Ok(RunWriter {
            dir: dir.to_path_buf(),
            sim,
            every: cfg.run.snapshot_every.max(1),
            load_rows: vec![],
            energy_rows: vec![],
            cum_d: vec![],
            snapshots: BTreeSet::new(),
            intermediates,
            error: None,
        })
    }

    fn rewrite(&self, name: &str, header: &str, rows: &[String]) -> io::Result<()> {
        let mut s = String::with_capacity(64 * (rows.len() + 1));
        s.push_str(header);
        s.push('\n');
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        write_atomic(&self.dir.join(name), s.as_bytes())
    }

    fn on_accepted(&mut self, h: &RunHistory, n: usize) -> io::Result<()> {
        let rec = &h.steps[n];
        let replaced = n < self.load_rows.len();
        self.load_rows.truncate(n);
        self.energy_rows.truncate(n);
        self.cum_d.truncate(n);
        let cum = match (&rec.report, n) {
            (Some(r), n) if n > 0 => self.cum_d[n - 1] + r.d_inc,
            _ => 0.0,
        };
        self.cum_d.push(cum);
        self.load_rows.push(format!("{n},{},{}", fmt(rec.load), fmt(rec.reaction)));
        self.energy_rows.push(match &rec.report {
            Some(r) => format!(
                "{n},{},{},{},{},{},{},{}",
                fmt(r.e_next),
                fmt(cum),
                fmt(r.delta),
                fmt(r.lb),
                fmt(r.ub),
                r.passed,
                acceptance_name(rec.acceptance)
            ),
            None => format!("{n},{},{},,,,,{}", fmt(rec.energy), fmt(0.0), acceptance_name(rec.acceptance)),
        });
        if replaced {
            self.rewrite("load_disp.csv", LOAD_HEADER, &self.load_rows)?;
            self.rewrite("energy.csv", ENERGY_HEADER, &self.energy_rows)?;
            let stale: Vec<usize> = self.snapshots.range(n + 1..).copied().collect();
            for s in stale {
                fs::remove_file(snapshot_path(&self.dir, s))?;
                self.snapshots.remove(&s);
            }
        } else {
            append_line(&self.dir.join("load_disp.csv"), &self.load_rows[n])?;
            append_line(&self.dir.join("energy.csv"), &self.energy_rows[n])?;
        }
        if n % self.every == 0 || n == self.sim.program.steps {
            let title = format!("step {n} displacement {}", fmt(rec.load));
            write_snapshot(&snapshot_path(&self.dir, n), &self.sim.disc.mesh, &title, &total_disp(&rec.u, &rec.ud), &rec.a)?;
            self.snapshots.insert(n);
        }
        log::info!(
            "step {n:5} w {:.4e} F {:.6e} E {:.6e} {}",
            rec.load,
            rec.reaction,
            rec.energy,
            acceptance_name(rec.acceptance)
        );
        Ok(())
    }

    fn on_intermediate(&mut self, rec: &Intermediate) -> io::Result<()> {
        if !self.intermediates {
            return Ok(());
        }
        append_line(
            &self.dir.join("intermediates.csv"),
            &format!(
                "{},{},{},{},{},{},{}",
                rec.solve,
                rec.step,
                fmt(rec.load),
                fmt(rec.reaction),
                fmt(rec.energy),
                fmt(rec.dissipated),
                rec.passed
            ),
        )?;
        if let Some((u, a)) = &rec.state {
            let ud = self.sim.program.lifting(&self.sim.disc.mesh, rec.step).map_err(io::Error::other)?;
            let path = self.dir.join("intermediates").join(format!("solve_{:06}.vtk", rec.solve));
            let title = format!("solve {} step {}", rec.solve, rec.step);
            write_snapshot(&path, &self.sim.disc.mesh, &title, &total_disp(u, &ud), a)?;
        }
        Ok(())
    }
}

impl Observer for RunWriter<'_> {
    fn accepted(&mut self, h: &RunHistory, step: usize) {
        if self.error.is_none() {
            if let Err(e) = self.on_accepted(h, step) {
                log::error!("writing step {step}: {e}");
                self.error = Some(e);
            }
        }
    }

    fn intermediate(&mut self, _h: &RunHistory, rec: &Intermediate) {
        if self.error.is_none() {
            if let Err(e) = self.on_intermediate(rec) {
                log::error!("writing intermediate solve {}: {e}", rec.solve);
                self.error = Some(e);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub step: usize,
    pub displacement: f64,
    pub acceptance: Acceptance,
    pub passed: bool,
    pub alternations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClampInfo {
    pub enabled: bool,
    pub max_correction: f64,
    pub abort_threshold: f64,
}

/// Contents of `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub status: String,
    pub config: RunConfig,
    pub nodes: usize,
    pub elements: usize,
    pub eta: f64,
    pub counters: Counters,
    pub clamp: ClampInfo,
    pub events: Vec<BacktrackEvent>,
    pub warnings: Vec<String>,
    pub abort: Option<String>,
    pub steps: Vec<StepSummary>,
    pub intermediates: Vec<Intermediate>,
}

impl RunLog {
    pub fn new(status: &str, cfg: &RunConfig, sim: &Simulation, h: &RunHistory) -> Self {
        RunLog {
            status: status.into(),
            config: cfg.clone(),
            nodes: sim.disc.mesh.num_nodes(),
            elements: sim.disc.mesh.num_elements(),
            eta: sim.eta(),
            counters: h.counters,
            clamp: ClampInfo {
                enabled: sim.solver.clamp_damage,
                max_correction: h.counters.max_clamp,
                abort_threshold: CLAMP_ABORT,
            },
            events: h.events.clone(),
            warnings: h.warnings.clone(),
            abort: h.abort.clone(),
            steps: h
                .steps
                .iter()
                .map(|s| StepSummary {
                    step: s.step,
                    displacement: s.load,
                    acceptance: s.acceptance,
                    passed: s.passed(),
                    alternations: s.alt_iters,
                })
                .collect(),
            intermediates: h.intermediates.clone(),
        }
    }

    pub fn write(&self, dir: &Path) -> io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        write_atomic(&dir.join("run.json"), text.as_bytes())
    }

    pub fn read(dir: &Path) -> Result<Self, CheckError> {
        let path = dir.join("run.json");
        let text = fs::read_to_string(&path).map_err(|e| CheckError::Missing(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CheckError::Corrupt(format!("run.json: {e}")))
    }
}

#[derive(Debug, Error)]
pub enum CheckError {
    #[error("missing input: {0}")]
    Missing(String),
    #[error("unreadable input: {0}")]
    Corrupt(String),
}

impl From<VtkError> for CheckError {
    fn from(e: VtkError) -> Self {
        CheckError::Corrupt(e.to_string())
    }
}

impl From<MeshError> for CheckError {
    fn from(e: MeshError) -> Self {
        CheckError::Corrupt(format!("mesh.msh: {e}"))
    }
}

/// One parsed row of `energy.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyRow {
    pub step: usize,
    pub e: f64,
    pub sum_d: f64,
    /// `(ΔE + D, LB, UB, passed)`, absent for step 0.
    pub check: Option<(f64, f64, f64, bool)>,
}

pub fn parse_energy_csv(text: &str) -> Result<Vec<EnergyRow>, CheckError> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(ENERGY_HEADER) {
        return Err(CheckError::Corrupt("energy.csv header".into()));
    }
    let bad = |i: usize| CheckError::Corrupt(format!("energy.csv line {}", i + 2));
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(bad(i));
        }
        let x = |k: usize| f[k].parse::<f64>().map_err(|_| bad(i));
        let step = f[0].parse::<usize>().map_err(|_| bad(i))?;
        let check = if f[3].is_empty() {
            None
        } else {
            let passed = f[6].parse::<bool>().map_err(|_| bad(i))?;
            Some((x(3)?, x(4)?, x(5)?, passed))
        };
        rows.push(EnergyRow { step, e: x(1)?, sum_d: x(2)?, check });
    }
    Ok(rows)
}

/// Result of auditing a run directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Audit {
    pub rows: usize,
    pub mismatches: Vec<String>,
    /// Steps whose recomputed report fails the inequality.
    pub failing: Vec<usize>,
}

impl Audit {
    pub fn ok(&self) -> bool {
        self.mismatches.is_empty() && self.failing.is_empty()
    }
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-10 * a.abs().max(b.abs())
}

/// Recompute every energy row from the stored snapshots and compare.
pub fn audit_run(dir: &Path) -> Result<Audit, CheckError> {
    let log = RunLog::read(dir)?;
    let mesh_path = dir.join("mesh.msh");
    if !mesh_path.is_file() {
        return Err(CheckError::Missing(mesh_path.display().to_string()));
    }
    let mesh: Mesh = read_gmsh(&mesh_path)?;
    let sim = log.config.simulation(mesh).map_err(|e| CheckError::Corrupt(e.to_string()))?;
    let energy_path = dir.join("energy.csv");
    let text = fs::read_to_string(&energy_path).map_err(|e| CheckError::Missing(format!("{}: {e}", energy_path.display())))?;
    let rows = parse_energy_csv(&text)?;
    if rows.is_empty() {
        return Err(CheckError::Missing("energy.csv has no rows".into()));
    }
    let mut missing = Vec::new();
    for r in &rows {
        if !snapshot_path(dir, r.step).is_file() {
            missing.push(r.step);
        }
    }
    if !missing.is_empty() {
        return Err(CheckError::Missing(format!("snapshots for steps {missing:?} (rerun with snapshot_every = 1)")));
    }

    let dim = sim.disc.mesh.dim();
    let load = |step: usize| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), CheckError> {
        let snap = read_snapshot(&snapshot_path(dir, step))?;
        if snap.damage.len() != sim.disc.mesh.num_nodes() {
            return Err(CheckError::Corrupt(format!("snapshot {step} does not match the mesh")));
        }
        let ud = sim.program.lifting(&sim.disc.mesh, step).map_err(|e| CheckError::Corrupt(e.to_string()))?;
        let mut u = vec![0.0; ud.len()];
        for (i, d) in snap.displacement.iter().enumerate() {
            for k in 0..dim {
                u[i * dim + k] = d[k] - ud[i * dim + k];
            }
        }
        Ok((u, ud, snap.damage))
    };

    let mut audit = Audit { rows: rows.len(), ..Default::default() };
    let mut prev: Option<(usize, (Vec<f64>, Vec<f64>, Vec<f64>))> = None;
    let mut cum = 0.0;
    for (i, row) in rows.iter().enumerate() {
        if row.step != i {
            audit.mismatches.push(format!("row {i} carries step {}", row.step));
            break;
        }
        let cur = load(row.step)?;
        match (&prev, row.check) {
            (None, None) => {
                let e = crate::energetics::total_energy(&sim.disc, &cur.0, &cur.1, &cur.2, &sim.params);
                if !close(e, row.e) || row.sum_d != 0.0 {
                    audit.mismatches.push(format!("step 0: E {} vs recomputed {}", fmt(row.e), fmt(e)));
                }
            }
            (Some((_, p)), Some((delta, lb, ub, passed))) => {
                let inputs = TwoSidedInputs {
                    step: row.step,
                    u_n: &p.0,
                    ud_n: &p.1,
                    a_n: &p.2,
                    u_next: &cur.0,
                    ud_next: &cur.1,
                    a_next: &cur.2,
                };
                let r = check_two_sided(&sim.disc, &inputs, &sim.params, sim.eta(), sim.backtrack.compat_box1_lb);
                cum += r.d_inc;
                let pairs = [("E", row.e, r.e_next), ("sum_D", row.sum_d, cum), ("dE_plus_D", delta, r.delta), ("LB", lb, r.lb), ("UB", ub, r.ub)];
                for (name, stored, fresh) in pairs {
                    if !close(stored, fresh) {
                        audit.mismatches.push(format!("step {}: {name} stored {} recomputed {}", row.step, fmt(stored), fmt(fresh)));
                    }
                }
                if passed != r.passed {
                    audit.mismatches.push(format!("step {}: passed stored {passed} recomputed {}", row.step, r.passed));
                }
                if !r.passed {
                    audit.failing.push(row.step);
                }
            }
            _ => audit.mismatches.push(format!("step {}: unexpected row layout", row.step)),
        }
        prev = Some((row.step, cur));
    }
    Ok(audit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for x in [0.0, -0.0, 1.0, 1e-300, -2.5e17, 0.1 + 0.2, f64::MIN_POSITIVE] {
            let s = fmt(x);
            assert_eq!(s.parse::<f64>().unwrap(), x + 0.0, "{s}");
        }
        assert_eq!(fmt(-0.0), "0e0");
    }

    #[test]
    fn energy_csv_parse() {
        let text = format!("{ENERGY_HEADER}\n0,0e0,0e0,,,,,initial\n1,2e0,1e-3,5e-1,4e-1,6e-1,true,passed\n");
        let rows = parse_energy_csv(&text).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].check, None);
        assert_eq!(rows[1].check, Some((0.5, 0.4, 0.6, true)));
        assert!(parse_energy_csv("nope\n").is_err());
        assert!(parse_energy_csv(&format!("{ENERGY_HEADER}\n1,2\n")).is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("x.csv");
        write_atomic(&p, b"a").unwrap();
        write_atomic(&p, b"b").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "b");
        assert_eq!(fs::read_dir(d.path()).unwrap().count(), 1);
    }
}
