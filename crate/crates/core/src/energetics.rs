//! Discrete energies and the two-sided energy inequality used to accept or
//! reject a load step.
//!
//! All sums run in element order with compensated summation.

use crate::fem::{total, Discretization};
use crate::material::{Constitutive, Dissipation, MaterialParams};
use crate::par::{self, compensated_sum};
use serde::{Deserialize, Serialize};

/// Stored elastic energy `Σ w j [R ψ₀⁺ + ψ₀⁻]` at displacement `u1 + u2`.
pub fn erg(d: &Discretization, u1: &[f64], u2: &[f64], a: &[f64], p: &MaterialParams) -> f64 {
    let z = total(u1, u2);
    let per = par::map_indexed(d.kernels.len(), |e| {
        let c = Constitutive::new(&d.strain(e, &z), p);
        let r = d.mean_degradation(e, a, p);
        d.kernels[e].vol * (r * c.psi_plus + c.psi_minus)
    });
    compensated_sum(per)
}

/// `Σ w j R(β) ψ₀⁺` for per-element tensile energies `psi`: the part of `erg`
/// that depends on the damage when the displacement is frozen.
pub fn degraded_tension(d: &Discretization, psi: &[f64], a: &[f64], p: &MaterialParams) -> f64 {
    let per = par::map_indexed(d.kernels.len(), |e| d.kernels[e].vol * d.mean_degradation(e, a, p) * psi[e]);
    compensated_sum(per)
}

/// Damage functional at frozen displacement, up to a constant.
pub fn damage_functional(d: &Discretization, psi: &[f64], a: &[f64], a_n: &[f64], p: &MaterialParams) -> f64 {
    degraded_tension(d, psi, a, p) + grad_term(d, a, p) + dis(d, a, p) + penalty(d, a, a_n, p)
}

/// Gradient part of the surface energy, `(g_c ℓ/2) Σ w j |∇β|²`.
pub fn grad_term(d: &Discretization, a: &[f64], p: &MaterialParams) -> f64 {
    let per = par::map_indexed(d.kernels.len(), |e| {
        let g = d.grad_beta(e, a);
        d.kernels[e].vol * (g[0] * g[0] + g[1] * g[1] + g[2] * g[2])
    });
    0.5 * p.gc * p.ell * compensated_sum(per)
}

/// Local dissipation term: `(g_c/2ℓ) Σ (Nβ A)²` or `(κ g_c/ℓ) Σ Nβ A`.
pub fn dis(d: &Discretization, a: &[f64], p: &MaterialParams) -> f64 {
    let per = par::map_indexed(d.kernels.len(), |e| {
        let bq = d.beta_at_qp(e, a);
        let v = d.kernels[e].vol;
        match p.dissipation {
            Dissipation::At2 => v * d.frac.iter().enumerate().map(|(q, w)| w * bq[q] * bq[q]).sum::<f64>(),
            Dissipation::At1 { .. } => v * d.frac.iter().enumerate().map(|(q, w)| w * bq[q]).sum::<f64>(),
        }
    });
    let s = compensated_sum(per);
    match p.dissipation {
        Dissipation::At2 => 0.5 * p.gc_over_ell() * s,
        Dissipation::At1 { kappa } => kappa * p.gc_over_ell() * s,
    }
}

/// `D(A_n, A_{n+1}) = dis(A_{n+1}) - dis(A_n)`.
pub fn dissipation_increment(d: &Discretization, a_n: &[f64], a_next: &[f64], p: &MaterialParams) -> f64 {
    dis(d, a_next, p) - dis(d, a_n, p)
}

/// Irreversibility penalty `(1/2ε) Σ w j [Nβ(A - A_n)]₋²`.
pub fn penalty(d: &Discretization, a: &[f64], a_n: &[f64], p: &MaterialParams) -> f64 {
    let per = par::map_indexed(d.kernels.len(), |e| {
        let bq = d.beta_at_qp(e, a);
        let bn = d.beta_at_qp(e, a_n);
        d.kernels[e].vol
            * d.frac
                .iter()
                .enumerate()
                .map(|(q, w)| {
                    let x = (bq[q] - bn[q]).min(0.0);
                    w * x * x
                })
                .sum::<f64>()
    });
    0.5 / p.eps_pen * compensated_sum(per)
}

/// The functional minimized within one load step (penalty included).
pub fn step_functional(d: &Discretization, u: &[f64], ud: &[f64], a: &[f64], a_n: &[f64], p: &MaterialParams) -> f64 {
    erg(d, u, ud, a, p) + grad_term(d, a, p) + dissipation_increment(d, a_n, a, p) + penalty(d, a, a_n, p)
}

/// `E = ERG + GRAD` at `(U, U_D, A)`.
pub fn total_energy(d: &Discretization, u: &[f64], ud: &[f64], a: &[f64], p: &MaterialParams) -> f64 {
    erg(d, u, ud, a, p) + grad_term(d, a, p)
}

/// Two consecutive accepted states and their liftings.
#[derive(Debug, Clone, Copy)]
pub struct TwoSidedInputs<'a> {
    pub step: usize,
    pub u_n: &'a [f64],
    pub ud_n: &'a [f64],
    pub a_n: &'a [f64],
    pub u_next: &'a [f64],
    pub ud_next: &'a [f64],
    pub a_next: &'a [f64],
}

/// Outcome of the two-sided inequality for step `n → n+1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    /// Index `n+1` of the later state.
    pub step: usize,
    pub e_next: f64,
    pub e_curr: f64,
    pub d_inc: f64,
    /// `ΔE + D`.
    pub delta: f64,
    pub lb: f64,
    pub ub: f64,
    pub eta: f64,
    pub passed: bool,
}

/// `ERG(U_n, U_D,n+1, A_n) - ERG(U_n, U_D,n, A_n)`.
pub fn upper_bound(d: &Discretization, s: &TwoSidedInputs, p: &MaterialParams) -> f64 {
    erg(d, s.u_n, s.ud_next, s.a_n, p) - erg(d, s.u_n, s.ud_n, s.a_n, p)
}

/// `ERG(U_{n+1}, U_D,n+1, A_{n+1}) - ERG(U_{n+1}, U_D,n, A_{n+1})`.
///
/// With `box1_literal` the first argument of both terms is the lifting
/// `U_D,n+1` instead of `U_{n+1}`.
pub fn lower_bound(d: &Discretization, s: &TwoSidedInputs, p: &MaterialParams, box1_literal: bool) -> f64 {
    let u1 = if box1_literal { s.ud_next } else { s.u_next };
    erg(d, u1, s.ud_next, s.a_next, p) - erg(d, u1, s.ud_n, s.a_next, p)
}

/// Evaluate `LB - η ≤ ΔE + D ≤ UB + η`.
pub fn check_two_sided(d: &Discretization, s: &TwoSidedInputs, p: &MaterialParams, eta: f64, box1_literal: bool) -> EnergyReport {
    let e1 = erg(d, s.u_next, s.ud_next, s.a_next, p);
    let g1 = grad_term(d, s.a_next, p);
    let d1 = dis(d, s.a_next, p);
    let e2 = erg(d, s.u_n, s.ud_n, s.a_n, p);
    let g2 = grad_term(d, s.a_n, p);
    let d2 = dis(d, s.a_n, p);
    let delta = (e1 + g1 + d1) - (e2 + g2 + d2);
    let ub = upper_bound(d, s, p);
    let lb = lower_bound(d, s, p, box1_literal);
    EnergyReport {
        step: s.step,
        e_next: e1 + g1,
        e_curr: e2 + g2,
        d_inc: d1 - d2,
        delta,
        lb,
        ub,
        eta,
        passed: lb - eta <= delta && delta <= ub + eta,
    }
}
