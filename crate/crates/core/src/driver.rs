//! Quasi-static load stepping with energy-based backtracking.
//!
//! Each step is checked against the two-sided energy inequality. On failure
//! the driver walks back up to `K` steps, re-solving each earlier step with the
//! most recent later state as initial guess, until the inequality holds again.

use crate::energetics::{check_two_sided, dis, total_energy, EnergyReport, TwoSidedInputs};
use crate::fem::{Discretization, FemError};
use crate::material::MaterialParams;
use crate::mesh::Mesh;
use crate::solver::{alternate_minimize, SolverConfig, SolverError, Workspace};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Largest damage correction by clamping a run tolerates.
pub const CLAMP_ABORT: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum DriverError {
    #[error("unknown node set `{0}`")]
    UnknownSet(String),
    #[error("component {0} out of range")]
    BadComponent(usize),
    #[error("step {0} is outside the load program")]
    StepOutOfRange(usize),
    #[error("solver failure at step {step}: {source}")]
    Solver { step: usize, source: SolverError },
    #[error("damage clamp of {0:e} exceeds the allowed {CLAMP_ABORT:e}")]
    ClampExceeded(f64),
    #[error(transparent)]
    Fem(#[from] FemError),
}

/// Prescribed displacement: component `component` of every node in `set`
/// equals `factor · n · Δw` at step `n`. `factor = 0` fixes the dof.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletBc {
    pub set: String,
    pub component: usize,
    #[serde(default)]
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactionSpec {
    pub set: String,
    pub direction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProgram {
    pub steps: usize,
    pub increment: f64,
    pub bcs: Vec<DirichletBc>,
    pub reaction: ReactionSpec,
}

impl LoadProgram {
    fn check(&self, mesh: &Mesh) -> Result<(), DriverError> {
        for bc in &self.bcs {
            if !mesh.node_sets.contains_key(&bc.set) {
                return Err(DriverError::UnknownSet(bc.set.clone()));
            }
            if bc.component >= mesh.dim() {
                return Err(DriverError::BadComponent(bc.component));
            }
        }
        if !mesh.node_sets.contains_key(&self.reaction.set) {
            return Err(DriverError::UnknownSet(self.reaction.set.clone()));
        }
        Ok(())
    }

    pub fn constrained_mask(&self, mesh: &Mesh) -> Result<Vec<bool>, DriverError> {
        self.check(mesh)?;
        let dim = mesh.dim();
        let mut m = vec![false; dim * mesh.num_nodes()];
        for bc in &self.bcs {
            for &n in &mesh.node_sets[&bc.set] {
                m[n * dim + bc.component] = true;
            }
        }
        Ok(m)
    }

    /// Boundary lifting `U_D` at step `n`; zero on free dofs. When several
    /// conditions hit the same dof the last one wins.
    pub fn lifting(&self, mesh: &Mesh, n: usize) -> Result<Vec<f64>, DriverError> {
        if n > self.steps {
            return Err(DriverError::StepOutOfRange(n));
        }
        self.check(mesh)?;
        let dim = mesh.dim();
        let mut v = vec![0.0; dim * mesh.num_nodes()];
        let w = self.load(n);
        for bc in &self.bcs {
            for &node in &mesh.node_sets[&bc.set] {
                v[node * dim + bc.component] = bc.factor * w;
            }
        }
        Ok(v)
    }

    pub fn load(&self, n: usize) -> f64 {
        n as f64 * self.increment
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktrackConfig {
    /// Maximum number of steps to walk back; 0 disables backtracking.
    pub max_back: usize,
    pub eta: f64,
    /// Scale `eta` by the domain measure.
    pub eta_per_measure: bool,
    /// Evaluate the lower bound with the lifting as first argument.
    pub compat_box1_lb: bool,
}

impl Default for BacktrackConfig {
    fn default() -> Self {
        BacktrackConfig { max_back: 50, eta: 1e-5, eta_per_measure: false, compat_box1_lb: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunOptions {
    /// Keep the initial guess of every accepted step so it can be replayed.
    pub record_guesses: bool,
    /// Keep the fields of every solve made while backtracking.
    pub save_intermediate_states: bool,
}

/// How a step came to be accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Acceptance {
    Initial,
    Passed,
    /// Backtracking disabled.
    Unchecked,
    /// `K` backtracks did not restore the inequality.
    Exhausted,
    /// No earlier step to return to.
    AtOrigin,
    /// The same step kept failing after repeated backtracking episodes.
    Repeated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub load: f64,
    pub u: Vec<f64>,
    pub ud: Vec<f64>,
    pub a: Vec<f64>,
    pub reaction: f64,
    /// `E + GRAD` at this state.
    pub energy: f64,
    /// `dis(A_n) - dis(A_0)`.
    pub dissipated: f64,
    pub report: Option<EnergyReport>,
    pub acceptance: Acceptance,
    pub alt_iters: usize,
    pub guess: Option<(Vec<f64>, Vec<f64>)>,
}

impl StepRecord {
    pub fn passed(&self) -> bool {
        self.report.map_or(true, |r| r.passed)
    }
}

/// A solve made while backtracking or re-traversing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intermediate {
    pub solve: usize,
    pub step: usize,
    pub load: f64,
    pub reaction: f64,
    pub energy: f64,
    pub dissipated: f64,
    pub passed: bool,
    #[serde(skip)]
    pub state: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BacktrackEvent {
    /// Step whose check failed.
    pub trigger: usize,
    /// Earliest step re-solved.
    pub reached: usize,
    pub backtracks: usize,
    pub restored: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Counters {
    pub solves: usize,
    pub alternations: usize,
    pub newton_u: usize,
    pub newton_beta: usize,
    pub descent_violations: usize,
    pub max_clamp: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunHistory {
    pub steps: Vec<StepRecord>,
    pub events: Vec<BacktrackEvent>,
    pub intermediates: Vec<Intermediate>,
    pub counters: Counters,
    pub warnings: Vec<String>,
    pub abort: Option<String>,
}

impl RunHistory {
    pub fn reports(&self) -> impl Iterator<Item = &EnergyReport> {
        self.steps.iter().filter_map(|s| s.report.as_ref())
    }

    pub fn all_passed(&self) -> bool {
        self.reports().all(|r| r.passed)
    }
}

/// Progress hooks for incremental output.
pub trait Observer {
    /// Called whenever `history.steps[step]` becomes the accepted state of
    /// that step; entries beyond `step` are gone.
    fn accepted(&mut self, _history: &RunHistory, _step: usize) {}
    fn intermediate(&mut self, _history: &RunHistory, _rec: &Intermediate) {}
}

impl Observer for () {}

/// A fully specified simulation.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub disc: Discretization,
    pub params: MaterialParams,
    pub program: LoadProgram,
    pub solver: SolverConfig,
    pub backtrack: BacktrackConfig,
    pub options: RunOptions,
}

impl Simulation {
    pub fn new(
        mesh: Mesh,
        params: MaterialParams,
        program: LoadProgram,
        solver: SolverConfig,
        backtrack: BacktrackConfig,
    ) -> Result<Self, DriverError> {
        let mask = program.constrained_mask(&mesh)?;
        let disc = Discretization::new(mesh, &mask)?;
        Ok(Simulation { disc, params, program, solver, backtrack, options: RunOptions::default() })
    }

    pub fn eta(&self) -> f64 {
        if self.backtrack.eta_per_measure {
            self.backtrack.eta * self.disc.mesh.total_measure()
        } else {
            self.backtrack.eta
        }
    }

    /// Accepted state at step 0.
    pub fn initial_state(&self) -> Result<StepRecord, DriverError> {
        let ud = self.program.lifting(&self.disc.mesh, 0)?;
        let u = vec![0.0; ud.len()];
        let a = vec![0.0; self.disc.n_nodes()];
        let reaction = self.reaction(&u, &ud, &a)?;
        Ok(StepRecord {
            step: 0,
            load: 0.0,
            energy: total_energy(&self.disc, &u, &ud, &a, &self.params),
            u,
            ud,
            a,
            reaction,
            dissipated: 0.0,
            report: None,
            acceptance: Acceptance::Initial,
            alt_iters: 0,
            guess: None,
        })
    }

    fn reaction(&self, u: &[f64], ud: &[f64], a: &[f64]) -> Result<f64, DriverError> {
        let r = &self.program.reaction;
        Ok(self.disc.reaction_force(u, ud, a, &self.params, &r.set, &r.direction)?)
    }

    /// Solve step `prev.step + 1` from the given guess and check it against
    /// `prev`.
    pub fn solve_step(
        &self,
        ws: &mut Workspace,
        prev: &StepRecord,
        a0_dis: f64,
        guess_u: &[f64],
        guess_a: &[f64],
        counters: &mut Counters,
    ) -> Result<StepRecord, DriverError> {
        let n = prev.step + 1;
        let ud = self.program.lifting(&self.disc.mesh, n)?;
        let p = &self.params;
        let alt = alternate_minimize(&self.disc, ws, &ud, &prev.a, guess_u, guess_a, p, &self.solver)
            .map_err(|source| DriverError::Solver { step: n, source })?;
        counters.solves += 1;
        counters.alternations += alt.alt_iters;
        counters.newton_u += alt.newton_u;
        counters.newton_beta += alt.newton_beta;
        counters.descent_violations += alt.descent_violations;
        counters.max_clamp = counters.max_clamp.max(alt.clamp_max);
        if alt.clamp_max > CLAMP_ABORT {
            return Err(DriverError::ClampExceeded(alt.clamp_max));
        }
        let inputs = TwoSidedInputs {
            step: n,
            u_n: &prev.u,
            ud_n: &prev.ud,
            a_n: &prev.a,
            u_next: &alt.u,
            ud_next: &ud,
            a_next: &alt.a,
        };
        let report = check_two_sided(&self.disc, &inputs, p, self.eta(), self.backtrack.compat_box1_lb);
        let reaction = self.reaction(&alt.u, &ud, &alt.a)?;
        Ok(StepRecord {
            step: n,
            load: self.program.load(n),
            energy: report.e_next,
            dissipated: dis(&self.disc, &alt.a, p) - a0_dis,
            u: alt.u,
            ud,
            a: alt.a,
            reaction,
            report: Some(report),
            acceptance: if report.passed { Acceptance::Passed } else { Acceptance::Unchecked },
            alt_iters: alt.alt_iters,
            guess: self.options.record_guesses.then(|| (guess_u.to_vec(), guess_a.to_vec())),
        })
    }

    /// Run the whole load program.
    pub fn run(&self, obs: &mut dyn Observer) -> RunHistory {
        let mut h = RunHistory::default();
        match self.run_inner(&mut h, obs) {
            Ok(()) => {}
            Err(e) => {
                log::error!("run aborted: {e}");
                h.abort = Some(e.to_string());
            }
        }
        h
    }

    fn run_inner(&self, h: &mut RunHistory, obs: &mut dyn Observer) -> Result<(), DriverError> {
        let mut ws = Workspace::new();
        let init = self.initial_state()?;
        let a0_dis = dis(&self.disc, &init.a, &self.params);
        let mut guess = (init.u.clone(), init.a.clone());
        h.steps.push(init);
        obs.accepted(h, 0);
        let k = self.backtrack.max_back;
        let total = self.program.steps;
        let mut episodes: BTreeMap<usize, usize> = BTreeMap::new();
        let mut n = 0usize;
        let mut max_solved = 0usize;

        let mut solve = |h: &mut RunHistory, n: usize, guess: &mut (Vec<f64>, Vec<f64>), obs: &mut dyn Observer, retrace: bool| -> Result<bool, DriverError> {
            let rec = self.solve_step(&mut ws, &h.steps[n], a0_dis, &guess.0, &guess.1, &mut h.counters)?;
            let passed = rec.passed();
            *guess = (rec.u.clone(), rec.a.clone());
            if retrace {
                let im = Intermediate {
                    solve: h.counters.solves,
                    step: rec.step,
                    load: rec.load,
                    reaction: rec.reaction,
                    energy: rec.energy,
                    dissipated: rec.dissipated,
                    passed,
                    state: self.options.save_intermediate_states.then(|| (rec.u.clone(), rec.a.clone())),
                };
                obs.intermediate(h, &im);
                h.intermediates.push(im);
            }
            h.steps.truncate(n + 1);
            h.steps.push(rec);
            Ok(passed)
        };

        while n < total {
            let mut passed = solve(h, n, &mut guess, obs, n + 1 <= max_solved)?;
            max_solved = max_solved.max(n + 1);
            if passed || k == 0 {
                n += 1;
                obs.accepted(h, n);
                continue;
            }
            let trigger = n + 1;
            let seen = episodes.entry(trigger).or_insert(0);
            *seen += 1;
            if *seen > k.max(1) {
                h.steps[trigger].acceptance = Acceptance::Repeated;
                h.warnings.push(format!("step {trigger} accepted after {} backtracking episodes", *seen - 1));
                n += 1;
                obs.accepted(h, n);
                continue;
            }
            let mut b = 0;
            let mut at_origin = false;
            while !passed && b < k {
                if n == 0 {
                    at_origin = true;
                    break;
                }
                n -= 1;
                b += 1;
                passed = solve(h, n, &mut guess, obs, true)?;
            }
            h.events.push(BacktrackEvent { trigger, reached: n + 1, backtracks: b, restored: passed });
            if !passed {
                let kind = if at_origin { Acceptance::AtOrigin } else { Acceptance::Exhausted };
                h.steps[n + 1].acceptance = kind;
                h.warnings.push(format!("step {} accepted without satisfying the energy bounds ({kind:?})", n + 1));
            }
            n += 1;
            obs.accepted(h, n);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_structured;

    fn bc(set: &str, component: usize, factor: f64) -> DirichletBc {
        DirichletBc { set: set.into(), component, factor }
    }

    fn patch(steps: usize, increment: f64, backtrack: BacktrackConfig) -> Simulation {
        let mut m = generate_structured(2, &[1.0, 1.0], &[3, 3]).unwrap();
        for (name, lo, hi) in [
            ("bottom", [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]),
            ("left", [0.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
            ("top", [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]),
        ] {
            let s = m.select_box(lo, hi, 1e-9);
            m.add_node_set(name, s);
        }
        let program = LoadProgram {
            steps,
            increment,
            bcs: vec![bc("bottom", 1, 0.0), bc("left", 0, 0.0), bc("top", 1, 1.0)],
            reaction: ReactionSpec { set: "top".into(), direction: vec![0.0, 1.0] },
        };
        let mut p = MaterialParams::from_lame_kn(121.1538, 80.7692, 2.7, 0.0175);
        p.eps_pen = 1e-6;
        Simulation::new(m, p, program, SolverConfig::default(), backtrack).unwrap()
    }

    #[test]
    fn lifting_and_mask() {
        let sim = patch(4, 1e-4, BacktrackConfig::default());
        let m = &sim.disc.mesh;
        let ud = sim.program.lifting(m, 2).unwrap();
        let mask = sim.program.constrained_mask(m).unwrap();
        for &n in &m.node_sets["top"] {
            assert_eq!(ud[2 * n + 1], 2e-4);
            assert!(mask[2 * n + 1]);
        }
        for &n in &m.node_sets["bottom"] {
            assert_eq!(ud[2 * n + 1], 0.0);
        }
        assert_eq!(mask.iter().filter(|x| **x).count(), 4 + 4 + 4);
        assert_eq!(sim.program.lifting(m, 5), Err(DriverError::StepOutOfRange(5)));
    }

    #[test]
    fn unknown_sets_are_rejected() {
        let sim = patch(1, 1e-4, BacktrackConfig::default());
        let mut prog = sim.program.clone();
        prog.bcs.push(bc("nowhere", 0, 0.0));
        assert_eq!(prog.constrained_mask(&sim.disc.mesh), Err(DriverError::UnknownSet("nowhere".into())));
        let mut prog = sim.program.clone();
        prog.bcs[0].component = 2;
        assert_eq!(prog.constrained_mask(&sim.disc.mesh), Err(DriverError::BadComponent(2)));
    }

    #[test]
    fn elastic_run_passes_without_events() {
        let sim = patch(5, 1e-4, BacktrackConfig::default());
        let h = sim.run(&mut ());
        assert!(h.abort.is_none());
        assert_eq!(h.steps.len(), 6);
        assert_eq!(h.steps[0].reaction, 0.0);
        assert!(h.events.is_empty() && h.intermediates.is_empty());
        assert!(h.steps[1..].iter().all(|s| s.acceptance == Acceptance::Passed));
        // reactions grow linearly in the elastic range
        let s1 = h.steps[1].reaction / h.steps[1].load;
        assert!(h.steps[1..].iter().all(|s| (s.reaction / s.load / s1 - 1.0).abs() < 1e-3));
        assert_eq!(h.counters.descent_violations, 0);
    }

    #[test]
    fn unsatisfiable_bounds_still_terminate() {
        // a negative tolerance makes every step fail the check
        let bt = BacktrackConfig { max_back: 2, eta: -1.0, ..BacktrackConfig::default() };
        let mut sim = patch(4, 1e-4, bt);
        sim.options.save_intermediate_states = true;
        let h = sim.run(&mut ());
        assert!(h.abort.is_none());
        assert_eq!(h.steps.len(), 5);
        assert!(!h.events.is_empty());
        assert!(h.steps[1..].iter().all(|s| matches!(
            s.acceptance,
            Acceptance::AtOrigin | Acceptance::Exhausted | Acceptance::Repeated
        )));
        assert!(!h.warnings.is_empty());
        assert!(h.intermediates.iter().all(|i| i.state.is_some()));
    }

    #[test]
    fn k_zero_accepts_unchecked() {
        let bt = BacktrackConfig { max_back: 0, eta: -1.0, ..BacktrackConfig::default() };
        let h = patch(3, 1e-4, bt).run(&mut ());
        assert!(h.events.is_empty());
        assert!(h.steps[1..].iter().all(|s| s.acceptance == Acceptance::Unchecked));
    }

    #[test]
    fn recorded_guesses_replay_bitwise() {
        let bt = BacktrackConfig { max_back: 2, eta: -1.0, ..BacktrackConfig::default() };
        let mut sim = patch(4, 2e-3, bt);
        sim.options.record_guesses = true;
        let h = sim.run(&mut ());
        let a0 = dis(&sim.disc, &h.steps[0].a, &sim.params);
        for n in 1..h.steps.len() {
            let (gu, ga) = h.steps[n].guess.clone().unwrap();
            let again = sim
                .solve_step(&mut Workspace::new(), &h.steps[n - 1], a0, &gu, &ga, &mut Counters::default())
                .unwrap();
            assert_eq!(again.u, h.steps[n].u);
            assert_eq!(again.a, h.steps[n].a);
        }
    }

    #[test]
    fn observer_sees_every_accepted_step() {
        struct Log(Vec<usize>);
        impl Observer for Log {
            fn accepted(&mut self, _h: &RunHistory, s: usize) {
                self.0.push(s);
            }
        }
        let mut log = Log(Vec::new());
        patch(3, 1e-4, BacktrackConfig::default()).run(&mut log);
        assert_eq!(log.0, vec![0, 1, 2, 3]);
    }
}
