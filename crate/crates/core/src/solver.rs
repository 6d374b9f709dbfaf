//! Alternating minimization within one load step: Newton for the
//! displacement, semi-smooth Newton for the damage.

use crate::energetics::{erg, step_functional};
use crate::fem::{total, Discretization};
use crate::linsolve::{LinsolveError, SpdSolver};
use crate::material::MaterialParams;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("{stage} did not converge in {iterations} iterations")]
    NoConvergence { stage: &'static str, iterations: usize },
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Linsolve(#[from] LinsolveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub tol_u: f64,
    pub tol_a: f64,
    pub max_newton: usize,
    pub max_alt: usize,
    pub clamp_damage: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { tol_u: 1e-5, tol_a: 1e-5, max_newton: 50, max_alt: 20_000, clamp_damage: true }
    }
}

/// Linear solver caches for the two fields.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    u: SpdSolver,
    b: SpdSolver,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Armijo backtracking along `x - t·dx` for a convex merit `f`; `slope` is
/// `∇f·dx`. Full steps are taken whenever they decrease `f` enough, so near
/// the solution this is plain Newton.
fn damped_step<F: Fn(f64) -> f64>(f0: f64, slope: f64, f: F) -> (f64, f64) {
    let mut t = 1.0;
    let mut ft = f(t);
    if !(slope > 0.0) {
        return (t, ft);
    }
    for _ in 0..30 {
        if ft <= f0 - 1e-4 * t * slope {
            break;
        }
        t *= 0.5;
        ft = f(t);
    }
    (t, ft)
}

/// Minimizer on `[0, 1]` of a convex function of `t` given its derivative
/// `g` with `g(0) = g0 < 0`. The derivative is piecewise linear for the
/// damage functional, so Illinois regula falsi converges in a few steps.
fn exact_step<G: Fn(f64) -> f64>(g0: f64, g: G) -> f64 {
    if !(g0 < 0.0) {
        return 1.0;
    }
    let g1 = g(1.0);
    if g1 <= 0.0 {
        return 1.0;
    }
    let (mut lo, mut glo, mut hi, mut ghi) = (0.0, g0, 1.0, g1);
    let mut side = 0;
    let mut t = lo;
    for _ in 0..60 {
        t = lo - glo * (hi - lo) / (ghi - glo);
        let gt = g(t);
        if gt.abs() <= 1e-12 * g0.abs() || hi - lo <= 1e-15 {
            break;
        }
        if gt < 0.0 {
            lo = t;
            glo = gt;
            if side == -1 {
                ghi *= 0.5;
            }
            side = -1;
        } else {
            hi = t;
            ghi = gt;
            if side == 1 {
                glo *= 0.5;
            }
            side = 1;
        }
    }
    t
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimize over `U` with `A` fixed. Returns the new `U` and the number of
/// linear solves.
pub fn newton_u(
    d: &Discretization,
    ws: &mut Workspace,
    u0: &[f64],
    ud: &[f64],
    a: &[f64],
    p: &MaterialParams,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, usize), SolverError> {
    let mut u = u0.to_vec();
    if d.dofs.n_free() == 0 {
        return Ok((u, 0));
    }
    for it in 1..=cfg.max_newton {
        let r = d.residual_u(&u, ud, a, p);
        let k = d.tangent_u(&u, ud, a, p);
        let mut du = ws.u.solve(&k, &r)?;
        if du.iter().any(|x| !x.is_finite()) {
            return Err(SolverError::NonFinite("displacement update"));
        }
        let mut full = true;
        if max_abs(&du) > cfg.tol_u {
            let trial = |t: f64| {
                let mut v = u.clone();
                for (f, &g) in d.dofs.free_dofs.iter().enumerate() {
                    v[g] -= t * du[f];
                }
                erg(d, &v, ud, a, p)
            };
            let (t, _) = damped_step(erg(d, &u, ud, a, p), dot(&r, &du), trial);
            if t < 1.0 {
                log::trace!("displacement newton {it}: damped step {t:e}");
                du.iter_mut().for_each(|x| *x *= t);
                full = false;
            }
        }
        for (f, &g) in d.dofs.free_dofs.iter().enumerate() {
            u[g] -= du[f];
        }
        if full && max_abs(&du) <= cfg.tol_u {
            return Ok((u, it));
        }
    }
    Err(SolverError::NoConvergence { stage: "displacement Newton", iterations: cfg.max_newton })
}

/// Minimize over `A` with `U` fixed. Returns the new `A` and the number of
/// linear solves.
///
/// For fixed `U` the functional is piecewise quadratic in `A`, so a Newton step
/// that keeps the penalty's active set is exact. Iterates never raise the
/// functional; when the Newton step is below tolerance but keeps moving the
/// active set, the third such iterate in a row is accepted. Settling the
/// active set can take many short steps, so the cap is `10 · max_newton`.
pub fn newton_beta(
    d: &Discretization,
    ws: &mut Workspace,
    a0: &[f64],
    u: &[f64],
    ud: &[f64],
    a_n: &[f64],
    p: &MaterialParams,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, usize), SolverError> {
    let psi = d.psi_plus(&total(u, ud), p);
    let mut a = a0.to_vec();
    let mut active = d.active_points(&a, a_n);
    let mut small = 0;
    let cap = 10 * cfg.max_newton;
    for it in 1..=cap {
        let r = d.residual_beta(&psi, &a, a_n, p);
        let k = d.tangent_beta(&psi, &a, a_n, p, false);
        let mut da = match ws.b.solve(&k, &r) {
            Ok(x) => x,
            // points on the bound: take the other element of the generalized
            // derivative, which makes the penalty active there
            Err(LinsolveError::NotPositiveDefinite { .. }) => {
                let k = d.tangent_beta(&psi, &a, a_n, p, true);
                ws.b.solve(&k, &r)?
            }
            Err(e) => return Err(e.into()),
        };
        if da.iter().any(|x| !x.is_finite()) {
            return Err(SolverError::NonFinite("damage update"));
        }
        // the functional is convex in A: minimize exactly along the step
        let newton = max_abs(&da);
        let slope = |t: f64| {
            let v: Vec<f64> = a.iter().zip(&da).map(|(x, y)| x - t * y).collect();
            -dot(&d.residual_beta(&psi, &v, a_n, p), &da)
        };
        let t = exact_step(-dot(&r, &da), slope);
        let full = t == 1.0;
        if !full {
            log::trace!("damage newton {it}: step length {t:e}");
            da.iter_mut().for_each(|x| *x *= t);
        }
        a.iter_mut().zip(&da).for_each(|(a, d)| *a -= d);
        let next = d.active_points(&a, a_n);
        let step = max_abs(&da);
        log::trace!(
            "damage newton {it}: |dA| {step:.3e}, {} active points changed",
            next.iter().zip(&active).filter(|(x, y)| x != y).count()
        );
        small = if newton <= cfg.tol_a { small + 1 } else { 0 };
        let settled = (full && next == active) || small >= 3 || step <= 1e-3 * cfg.tol_a;
        if newton <= cfg.tol_a && settled {
            return Ok((a, it));
        }
        active = next;
    }
    Err(SolverError::NoConvergence { stage: "damage Newton", iterations: cap })
}

/// Result of one load step.
#[derive(Debug, Clone, PartialEq)]
pub struct AltResult {
    pub u: Vec<f64>,
    pub a: Vec<f64>,
    pub alt_iters: usize,
    pub newton_u: usize,
    pub newton_beta: usize,
    /// Functional value at the start and after every half step.
    pub trace: Vec<f64>,
    /// Half steps where the functional rose by more than `1e-10 (1 + |F|)`.
    pub descent_violations: usize,
    pub clamp_max: f64,
}

/// Alternate displacement and damage minimization from `(u0, a0)` until both
/// updates fall below tolerance.
pub fn alternate_minimize(
    d: &Discretization,
    ws: &mut Workspace,
    ud: &[f64],
    a_n: &[f64],
    u0: &[f64],
    a0: &[f64],
    p: &MaterialParams,
    cfg: &SolverConfig,
) -> Result<AltResult, SolverError> {
    let mut u = u0.to_vec();
    // constrained entries of U are zero by construction
    for g in 0..u.len() {
        if d.dofs.is_constrained(g) {
            u[g] = 0.0;
        }
    }
    let mut a = a0.to_vec();
    let mut res = AltResult {
        u: Vec::new(),
        a: Vec::new(),
        alt_iters: 0,
        newton_u: 0,
        newton_beta: 0,
        trace: vec![step_functional(d, &u, ud, &a, a_n, p)],
        descent_violations: 0,
        clamp_max: 0.0,
    };
    let push = |res: &mut AltResult, f: f64| {
        let prev = *res.trace.last().expect("trace starts non-empty");
        if f > prev + 1e-10 * (1.0 + prev.abs()) {
            log::debug!("functional rose from {prev:e} to {f:e} at half step {}", res.trace.len());
            res.descent_violations += 1;
        }
        res.trace.push(f);
    };
    for it in 1..=cfg.max_alt {
        let (u1, nu) = newton_u(d, ws, &u, ud, &a, p, cfg)?;
        push(&mut res, step_functional(d, &u1, ud, &a, a_n, p));
        let (a1, nb) = newton_beta(d, ws, &a, &u1, ud, a_n, p, cfg)?;
        push(&mut res, step_functional(d, &u1, ud, &a1, a_n, p));
        res.newton_u += nu;
        res.newton_beta += nb;
        let du = u1.iter().zip(&u).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        let da = a1.iter().zip(&a).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        log::trace!("alternation {it}: |dU| {du:.3e} |dA| {da:.3e} newton {nu}/{nb}");
        u = u1;
        a = a1;
        if du <= cfg.tol_u && da <= cfg.tol_a {
            // projecting inside the damage solve makes the alternation cycle,
            // so the bound is enforced once on the converged state
            if cfg.clamp_damage {
                for v in a.iter_mut() {
                    let c = v.clamp(0.0, 1.0);
                    res.clamp_max = res.clamp_max.max((c - *v).abs());
                    *v = c;
                }
            }
            res.alt_iters = it;
            res.u = u;
            res.a = a;
            return Ok(res);
        }
    }
    Err(SolverError::NoConvergence { stage: "alternating minimization", iterations: cfg.max_alt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_structured;
    use proptest::prelude::*;

    fn params() -> MaterialParams {
        let mut p = MaterialParams::from_lame_kn(121.1538, 80.7692, 2.7, 0.0175);
        p.eps_pen = 1e-6;
        p
    }

    /// Unit square, bottom fixed, top pulled by `w`.
    fn pulled_square(n: usize, w: f64) -> (Discretization, Vec<f64>) {
        let m = generate_structured(2, &[1.0, 1.0], &[n, n]).unwrap();
        let nn = m.num_nodes();
        let mut mask = vec![false; 2 * nn];
        let mut ud = vec![0.0; 2 * nn];
        for i in 0..nn {
            let y = m.coords(i)[1];
            if y == 0.0 || y == 1.0 {
                mask[2 * i] = true;
                mask[2 * i + 1] = true;
                ud[2 * i + 1] = w * y;
            }
        }
        (Discretization::new(m, &mask).unwrap(), ud)
    }

    #[test]
    fn exact_step_finds_kinked_root() {
        // derivative of a convex piecewise quadratic with a kink at 0.5
        let g = |t: f64| if t < 0.5 { t - 0.7 } else { 0.5 - 0.7 + 20.0 * (t - 0.5) };
        let t = exact_step(g(0.0), g);
        assert!((t - 0.51).abs() < 1e-12, "{t}");
        assert_eq!(exact_step(-1.0, |t| t - 2.0), 1.0);
        assert_eq!(exact_step(0.0, |t| t), 1.0);
    }

    #[test]
    fn armijo_accepts_full_step_on_quadratic() {
        // f(x) = x², Newton step from x = 1 is dx = 1
        let f = |t: f64| (1.0 - t).powi(2);
        assert_eq!(damped_step(1.0, 2.0, f), (1.0, 0.0));
        // a step twice too long is halved once
        let f = |t: f64| (1.0 - 2.0 * t).powi(2);
        assert_eq!(damped_step(1.0, 4.0, f).0, 0.5);
    }

    #[test]
    fn damage_solve_matches_homogeneous_value() {
        let (d, mut ud) = pulled_square(2, 0.01);
        // prescribe the homogeneous field everywhere
        let mask = vec![true; ud.len()];
        for i in 0..d.n_nodes() {
            ud[2 * i + 1] = 0.01 * d.mesh.coords(i)[1];
        }
        let d = Discretization::new(d.mesh.clone(), &mask).unwrap();
        let p = params();
        let mut ws = Workspace::new();
        let u = newton_u(&d, &mut ws, &vec![0.0; ud.len()], &ud, &vec![0.0; d.n_nodes()], &p, &SolverConfig::default())
            .unwrap()
            .0;
        let psi = d.psi_plus(&total(&u, &ud), &p);
        let zero = vec![0.0; d.n_nodes()];
        let (a, it) = newton_beta(&d, &mut ws, &zero, &u, &ud, &zero, &p, &SolverConfig::default()).unwrap();
        assert!(it <= 3);
        // ψ is uniform here, so is the damage
        let expect = 2.0 * psi[0] / (2.0 * psi[0] + p.gc_over_ell());
        assert!(psi.iter().all(|s| (s - psi[0]).abs() < 1e-9 * psi[0]));
        assert!(a.iter().all(|x| (x - expect).abs() < 1e-10), "{a:?} vs {expect}");
    }

    #[test]
    fn damage_cannot_heal() {
        let (d, ud) = pulled_square(2, 0.0);
        let p = params();
        let u = vec![0.0; ud.len()];
        let a_n = vec![0.4; d.n_nodes()];
        let (a, _) = newton_beta(&d, &mut Workspace::new(), &a_n, &u, &ud, &a_n, &p, &SolverConfig::default()).unwrap();
        // without load the unconstrained minimizer is 0; the penalty holds A
        // within O(ε g_c/ℓ) of the previous step
        let slack = 2.0 * p.eps_pen * p.gc_over_ell() * 0.4;
        assert!(a.iter().all(|x| *x < 0.4 && *x > 0.4 - slack), "{a:?}");
    }

    #[test]
    fn no_free_dofs_is_a_no_op() {
        let m = generate_structured(2, &[1.0, 1.0], &[1, 1]).unwrap();
        let d = Discretization::new(m, &vec![true; 8]).unwrap();
        let u0 = vec![0.0; 8];
        let r = newton_u(&d, &mut Workspace::new(), &u0, &u0, &[0.0; 4], &params(), &SolverConfig::default()).unwrap();
        assert_eq!(r, (u0, 0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn alternation_decreases_the_functional(w in 0.0f64..0.02, a0 in 0.0f64..0.3) {
            let (d, ud) = pulled_square(3, w);
            let p = params();
            let a_n = vec![a0; d.n_nodes()];
            let u0 = vec![0.0; ud.len()];
            let cfg = SolverConfig { clamp_damage: false, ..SolverConfig::default() };
            let r = alternate_minimize(&d, &mut Workspace::new(), &ud, &a_n, &u0, &a_n, &p, &cfg).unwrap();
            prop_assert_eq!(r.descent_violations, 0);
            for s in r.trace.windows(2) {
                prop_assert!(s[1] <= s[0] + 1e-10 * (1.0 + s[0].abs()));
            }
            // irreversibility is imposed at quadrature points, nodal values may dip
            let nq = d.quad.points.len();
            let qp: Vec<f64> = (0..d.kernels.len()).flat_map(|e| d.beta_at_qp(e, &r.a)[..nq].to_vec()).collect();
            let amin = qp.iter().cloned().fold(f64::MAX, f64::min);
            let amax = qp.iter().cloned().fold(f64::MIN, f64::max);
            prop_assert!(amin >= a0 - 1e-4, "min {} below {}", amin, a0);
            prop_assert!(amax < 1.0, "max damage {}", amax);
        }
    }
}
