//! Constitutive model: spectral tension/compression split, degradation and
//! consistent tangents.
//!
//! Moduli are stored in N/mm² and fracture toughness in N/mm, so every energy
//! comes out in N·mm. Config files use kN/mm² for moduli; the conversion happens
//! once in [`MaterialParams::from_lame_kn`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MaterialError {
    #[error("material parameter `{0}` must be positive (got {1})")]
    NonPositive(&'static str, f64),
    #[error("material parameter `{0}` must be finite")]
    NonFinite(&'static str),
    #[error("{0}")]
    Invalid(String),
}

/// Dissipation model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Dissipation {
    /// Quadratic dissipation `(g_c/2ℓ) ∫ β²`.
    #[serde(rename = "AT2")]
    At2,
    /// Linear dissipation `(κ g_c/ℓ) ∫ β`.
    #[serde(rename = "AT1")]
    At1 { kappa: f64 },
}

/// How the volumetric part enters the split energies.
///
/// `Bracket` uses `⟨tr ε⟩±`, which keeps the energy continuously
/// differentiable. `Spectral` uses `tr(ε±)`, whose gradient jumps whenever a
/// principal strain changes sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TraceSplit {
    #[default]
    Bracket,
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    /// First Lamé constant, N/mm².
    pub lambda: f64,
    /// Shear modulus, N/mm².
    pub mu: f64,
    /// Fracture toughness, N/mm.
    pub gc: f64,
    /// Length scale, mm.
    pub ell: f64,
    /// Residual stiffness.
    pub k: f64,
    pub dissipation: Dissipation,
    /// Irreversibility penalty parameter.
    pub eps_pen: f64,
    pub split: TraceSplit,
}

/// Lamé constants from Young's modulus and Poisson ratio.
pub fn lame_from_young(e: f64, nu: f64) -> (f64, f64) {
    let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let mu = e / (2.0 * (1.0 + nu));
    (lambda, mu)
}

impl MaterialParams {
    /// Build from Lamé constants given in kN/mm².
    pub fn from_lame_kn(lambda_kn: f64, mu_kn: f64, gc: f64, ell: f64) -> Self {
        MaterialParams {
            lambda: lambda_kn * 1000.0,
            mu: mu_kn * 1000.0,
            gc,
            ell,
            k: 1e-4,
            dissipation: Dissipation::At2,
            eps_pen: 1e-6,
            split: TraceSplit::Bracket,
        }
    }

    /// Build from Young's modulus (kN/mm²) and Poisson ratio.
    pub fn from_young_kn(e_kn: f64, nu: f64, gc: f64, ell: f64) -> Self {
        let (l, m) = lame_from_young(e_kn, nu);
        Self::from_lame_kn(l, m, gc, ell)
    }

    pub fn validate(&self) -> Result<(), MaterialError> {
        let checks = [
            ("lambda", self.lambda),
            ("mu", self.mu),
            ("gc", self.gc),
            ("ell", self.ell),
            ("k", self.k),
            ("eps_pen", self.eps_pen),
        ];
        for (name, v) in checks {
            if !v.is_finite() {
                return Err(MaterialError::NonFinite(name));
            }
            if v <= 0.0 {
                return Err(MaterialError::NonPositive(name, v));
            }
        }
        if let Dissipation::At1 { kappa } = self.dissipation {
            if !(kappa > 0.0) {
                return Err(MaterialError::NonPositive("kappa", kappa));
            }
        }
        Ok(())
    }

    /// Coefficient of the local dissipation term in the damage residual.
    pub fn gc_over_ell(&self) -> f64 {
        self.gc / self.ell
    }
}

/// Material block as written in config files: moduli in kN/mm², either
/// Lamé constants or Young's modulus and Poisson ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialInput {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub young: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poisson: Option<f64>,
    pub gc: f64,
    pub ell: f64,
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default = "default_eps_pen")]
    pub eps_pen: f64,
    /// `AT2` or `AT1`.
    #[serde(default = "default_model")]
    pub dissipation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub split: TraceSplit,
}

fn default_k() -> f64 {
    1e-4
}

fn default_eps_pen() -> f64 {
    1e-6
}

fn default_model() -> String {
    "AT2".into()
}

impl MaterialInput {
    pub fn lame(lambda: f64, mu: f64, gc: f64, ell: f64) -> Self {
        MaterialInput {
            lambda: Some(lambda),
            mu: Some(mu),
            young: None,
            poisson: None,
            gc,
            ell,
            k: default_k(),
            eps_pen: default_eps_pen(),
            dissipation: default_model(),
            kappa: None,
            split: TraceSplit::default(),
        }
    }

    pub fn young(young: f64, poisson: f64, gc: f64, ell: f64) -> Self {
        MaterialInput { lambda: None, mu: None, young: Some(young), poisson: Some(poisson), ..Self::lame(0.0, 0.0, gc, ell) }
    }

    pub fn to_params(&self) -> Result<MaterialParams, MaterialError> {
        let mut p = match (self.lambda, self.mu, self.young, self.poisson) {
            (Some(l), Some(m), None, None) => MaterialParams::from_lame_kn(l, m, self.gc, self.ell),
            (None, None, Some(e), Some(nu)) => {
                if !(nu > -1.0 && nu < 0.5) {
                    return Err(MaterialError::Invalid(format!("poisson ratio {nu} outside (-1, 0.5)")));
                }
                MaterialParams::from_young_kn(e, nu, self.gc, self.ell)
            }
            _ => return Err(MaterialError::Invalid("give either lambda and mu or young and poisson".into())),
        };
        p.k = self.k;
        p.eps_pen = self.eps_pen;
        p.split = self.split;
        p.dissipation = match (self.dissipation.to_ascii_uppercase().as_str(), self.kappa) {
            ("AT2", None) => Dissipation::At2,
            ("AT1", Some(kappa)) => Dissipation::At1 { kappa },
            ("AT2", Some(_)) => return Err(MaterialError::Invalid("kappa only applies to AT1".into())),
            ("AT1", None) => return Err(MaterialError::Invalid("AT1 needs kappa".into())),
            (other, _) => return Err(MaterialError::Invalid(format!("unknown dissipation `{other}`"))),
        };
        p.validate()?;
        Ok(p)
    }
}

/// Symmetric strain or stress tensor. In 2-D only the upper-left 2×2 block is
/// used (plane strain, `ε_zz = 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymTensor {
    pub dim: usize,
    pub m: [[f64; 3]; 3],
}

impl SymTensor {
    pub fn zero(dim: usize) -> Self {
        SymTensor { dim, m: [[0.0; 3]; 3] }
    }

    /// Build from a row-major `dim×dim` slice; the result is symmetrized.
    pub fn from_rows(dim: usize, rows: &[&[f64]]) -> Self {
        let mut t = Self::zero(dim);
        for i in 0..dim {
            for j in 0..dim {
                t.m[i][j] = 0.5 * (rows[i][j] + rows[j][i]);
            }
        }
        t
    }

    pub fn diag(dim: usize, d: &[f64]) -> Self {
        let mut t = Self::zero(dim);
        for i in 0..dim {
            t.m[i][i] = d[i];
        }
        t
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.m[i][i]).sum()
    }

    pub fn dot(&self, o: &SymTensor) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += self.m[i][j] * o.m[i][j];
            }
        }
        s
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scaled(&self, a: f64) -> SymTensor {
        let mut t = *self;
        for row in t.m.iter_mut() {
            for v in row.iter_mut() {
                *v *= a;
            }
        }
        t
    }

    pub fn add(&self, o: &SymTensor) -> SymTensor {
        let mut t = *self;
        for i in 0..3 {
            for j in 0..3 {
                t.m[i][j] += o.m[i][j];
            }
        }
        t
    }

    fn add_outer(&mut self, a: f64, v: &[f64; 3]) {
        for i in 0..self.dim {
            for j in 0..self.dim {
                self.m[i][j] += a * v[i] * v[j];
            }
        }
    }

    fn add_identity(&mut self, a: f64) {
        for i in 0..self.dim {
            self.m[i][i] += a;
        }
    }
}

/// Fourth-order tangent `C_ijkl` with minor and major symmetry in the used block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tangent {
    pub dim: usize,
    pub c: [[[[f64; 3]; 3]; 3]; 3],
}

impl Tangent {
    pub fn zero(dim: usize) -> Self {
        Tangent { dim, c: [[[[0.0; 3]; 3]; 3]; 3] }
    }

    /// `C : dε`.
    pub fn apply(&self, d: &SymTensor) -> SymTensor {
        let mut out = SymTensor::zero(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                let mut s = 0.0;
                for k in 0..self.dim {
                    for l in 0..self.dim {
                        s += self.c[i][j][k][l] * d.m[k][l];
                    }
                }
                out.m[i][j] = s;
            }
        }
        out
    }

    /// `a·self + other`.
    pub fn axpy(&self, a: f64, other: &Tangent) -> Tangent {
        let mut t = *other;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        t.c[i][j][k][l] += a * self.c[i][j][k][l];
                    }
                }
            }
        }
        t
    }
}

/// Principal decomposition of a strain. In 2-D the out-of-plane eigenpair
/// `(0, e_z)` is stored in slot 2 and never contributes to the split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitState {
    pub eigvals: [f64; 3],
    /// `eigvecs[a]` is the unit eigenvector for `eigvals[a]`.
    pub eigvecs: [[f64; 3]; 3],
    pub eps_plus: SymTensor,
    pub eps_minus: SymTensor,
}

#[inline]
fn pos(x: f64) -> f64 {
    0.5 * (x + x.abs())
}

#[inline]
fn neg(x: f64) -> f64 {
    0.5 * (x - x.abs())
}

/// Heaviside with the plus branch taking derivative 0 at the origin.
#[inline]
fn heav(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

fn eigen(eps: &SymTensor) -> ([f64; 3], [[f64; 3]; 3]) {
    if eps.dim == 2 {
        let a = eps.m[0][0];
        let d = eps.m[1][1];
        let b = 0.5 * (eps.m[0][1] + eps.m[1][0]);
        let mean = 0.5 * (a + d);
        let r = (0.5 * (a - d)).hypot(b);
        let th = 0.5 * (2.0 * b).atan2(a - d);
        let (s, c) = th.sin_cos();
        (
            [mean + r, mean - r, 0.0],
            [[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]],
        )
    } else {
        jacobi3(&eps.m)
    }
}

/// Cyclic Jacobi iteration for a symmetric 3×3 matrix. Converges to machine
/// precision in a handful of sweeps.
fn jacobi3(m: &[[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut a = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            a[i][j] = 0.5 * (m[i][j] + m[j][i]);
        }
    }
    // v[i][a]: component i of eigenvector a
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _ in 0..50 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        let diag = a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2];
        if off <= 1e-36 * diag || off == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let apq = a[p][q];
            if apq == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let vp = row[p];
                let vq = row[q];
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let mut vals = [a[0][0], a[1][1], a[2][2]];
    let mut vecs = [[0.0; 3]; 3];
    for k in 0..3 {
        for i in 0..3 {
            vecs[k][i] = v[i][k];
        }
    }
    // descending order, as in the 2-D branch
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&x, &y| vals[y].partial_cmp(&vals[x]).unwrap_or(std::cmp::Ordering::Equal));
    let (v0, e0) = (vals, vecs);
    for (k, &i) in idx.iter().enumerate() {
        vals[k] = v0[i];
        vecs[k] = e0[i];
    }
    (vals, vecs)
}


/// Spectral split `ε = ε⁺ + ε⁻`.
pub fn spectral_split(eps: &SymTensor) -> SplitState {
    let (vals, vecs) = eigen(eps);
    let mut ep = SymTensor::zero(eps.dim);
    let mut em = SymTensor::zero(eps.dim);
    for a in 0..eps.dim {
        ep.add_outer(pos(vals[a]), &vecs[a]);
        em.add_outer(neg(vals[a]), &vecs[a]);
    }
    SplitState { eigvals: vals, eigvecs: vecs, eps_plus: ep, eps_minus: em }
}

/// Split energies, stresses and (on request) tangents at one strain.
#[derive(Debug, Clone, Copy)]
pub struct Constitutive {
    pub split: SplitState,
    pub psi_plus: f64,
    pub psi_minus: f64,
    pub sig_plus: SymTensor,
    pub sig_minus: SymTensor,
    tr: f64,
    lambda: f64,
    mu: f64,
    kind: TraceSplit,
    gap_tol: f64,
}

impl Constitutive {
    pub fn new(eps: &SymTensor, p: &MaterialParams) -> Self {
        let dim = eps.dim;
        let split = spectral_split(eps);
        let (lam, mu) = (p.lambda, p.mu);
        let tr = eps.trace();
        let (trp, trm) = match p.split {
            TraceSplit::Bracket => (pos(tr), neg(tr)),
            TraceSplit::Spectral => (split.eps_plus.trace(), split.eps_minus.trace()),
        };
        let psi_plus = 0.5 * lam * trp * trp + mu * split.eps_plus.dot(&split.eps_plus);
        let psi_minus = 0.5 * lam * trm * trm + mu * split.eps_minus.dot(&split.eps_minus);
        let mut sp = split.eps_plus.scaled(2.0 * mu);
        let mut sm = split.eps_minus.scaled(2.0 * mu);
        match p.split {
            TraceSplit::Bracket => {
                sp.add_identity(lam * trp);
                sm.add_identity(lam * trm);
            }
            TraceSplit::Spectral => {
                for a in 0..dim {
                    if heav(split.eigvals[a]) > 0.0 {
                        sp.add_outer(lam * trp, &split.eigvecs[a]);
                    } else {
                        sm.add_outer(lam * trm, &split.eigvecs[a]);
                    }
                }
            }
        }
        Constitutive {
            split,
            psi_plus,
            psi_minus,
            sig_plus: sp,
            sig_minus: sm,
            tr,
            lambda: lam,
            mu,
            kind: p.split,
            gap_tol: 1e-9 * (1.0 + eps.norm()),
        }
    }

    /// Derivatives `(dσ⁺, dσ⁻)` along a strain direction.
    pub fn directional(&self, d: &SymTensor) -> (SymTensor, SymTensor) {
        let dim = d.dim;
        let v = &self.split.eigvecs;
        let l = &self.split.eigvals;
        // components of d in the eigenbasis
        let mut dt = [[0.0; 3]; 3];
        for a in 0..dim {
            for b in 0..dim {
                let mut s = 0.0;
                for i in 0..dim {
                    for j in 0..dim {
                        s += v[a][i] * d.m[i][j] * v[b][j];
                    }
                }
                dt[a][b] = s;
            }
        }
        // d(ε⁺) and d(P⁺) in the eigenbasis
        let mut xp = [[0.0; 3]; 3];
        let mut xpp = [[0.0; 3]; 3];
        for a in 0..dim {
            for b in 0..dim {
                if a == b {
                    xp[a][a] = heav(l[a]) * dt[a][a];
                } else {
                    let gap = l[a] - l[b];
                    let (theta, phi) = if gap.abs() > self.gap_tol {
                        ((pos(l[a]) - pos(l[b])) / gap, (heav(l[a]) - heav(l[b])) / gap)
                    } else {
                        (0.5 * (heav(l[a]) + heav(l[b])), 0.0)
                    };
                    xp[a][b] = theta * dt[a][b];
                    xpp[a][b] = phi * dt[a][b];
                }
            }
        }
        let back = |x: &[[f64; 3]; 3]| {
            let mut t = SymTensor::zero(dim);
            for i in 0..dim {
                for j in 0..dim {
                    let mut s = 0.0;
                    for a in 0..dim {
                        for b in 0..dim {
                            s += v[a][i] * x[a][b] * v[b][j];
                        }
                    }
                    t.m[i][j] = s;
                }
            }
            t
        };
        let dep = back(&xp);
        let dem = d.add(&dep.scaled(-1.0));
        let mut dsp = dep.scaled(2.0 * self.mu);
        let mut dsm = dem.scaled(2.0 * self.mu);
        let lam = self.lambda;
        match self.kind {
            TraceSplit::Bracket => {
                let h = heav(self.tr);
                let dtr = d.trace();
                dsp.add_identity(lam * h * dtr);
                dsm.add_identity(lam * (1.0 - h) * dtr);
            }
            TraceSplit::Spectral => {
                let dpp = back(&xpp);
                let trp = self.split.eps_plus.trace();
                let trm = self.split.eps_minus.trace();
                let mut pp = SymTensor::zero(dim);
                let mut pm = SymTensor::zero(dim);
                for a in 0..dim {
                    if heav(l[a]) > 0.0 {
                        pp.add_outer(1.0, &v[a]);
                    } else {
                        pm.add_outer(1.0, &v[a]);
                    }
                }
                dsp = dsp.add(&pp.scaled(lam * pp.dot(d))).add(&dpp.scaled(lam * trp));
                dsm = dsm.add(&pm.scaled(lam * pm.dot(d))).add(&dpp.scaled(-lam * trm));
            }
        }
        (dsp, dsm)
    }

    /// Fourth-order tangents `(∂σ⁺/∂ε, ∂σ⁻/∂ε)`.
    pub fn tangents(&self) -> (Tangent, Tangent) {
        let dim = self.split.eps_plus.dim;
        let mut cp = Tangent::zero(dim);
        let mut cm = Tangent::zero(dim);
        for k in 0..dim {
            for l in k..dim {
                let mut e = SymTensor::zero(dim);
                e.m[k][l] += 0.5;
                e.m[l][k] += 0.5;
                let (dp, dm) = self.directional(&e);
                for i in 0..dim {
                    for j in 0..dim {
                        cp.c[i][j][k][l] = dp.m[i][j];
                        cp.c[i][j][l][k] = dp.m[i][j];
                        cm.c[i][j][k][l] = dm.m[i][j];
                        cm.c[i][j][l][k] = dm.m[i][j];
                    }
                }
            }
        }
        (cp, cm)
    }
}

/// `(ψ₀⁺, ψ₀⁻)`.
pub fn psi_split(eps: &SymTensor, p: &MaterialParams) -> (f64, f64) {
    let c = Constitutive::new(eps, p);
    (c.psi_plus, c.psi_minus)
}

/// `(σ₀⁺, σ₀⁻)`, the gradients of the split energies.
pub fn sigma_split(eps: &SymTensor, p: &MaterialParams) -> (SymTensor, SymTensor) {
    let c = Constitutive::new(eps, p);
    (c.sig_plus, c.sig_minus)
}

/// `(R(β), R'(β))` with `R = (1-β)² + k`.
#[inline]
pub fn degradation(beta: f64, p: &MaterialParams) -> (f64, f64) {
    let om = 1.0 - beta;
    (om * om + p.k, -2.0 * om)
}

/// Degraded stress `R σ₀⁺ + σ₀⁻`.
pub fn stress(eps: &SymTensor, beta: f64, p: &MaterialParams) -> SymTensor {
    let c = Constitutive::new(eps, p);
    let (r, _) = degradation(beta, p);
    c.sig_plus.scaled(r).add(&c.sig_minus)
}

/// Consistent tangent `R C⁺ + C⁻`.
pub fn tangent(eps: &SymTensor, beta: f64, p: &MaterialParams) -> Tangent {
    let c = Constitutive::new(eps, p);
    let (r, _) = degradation(beta, p);
    let (cp, cm) = c.tangents();
    cp.axpy(r, &cm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sent() -> MaterialParams {
        MaterialParams::from_lame_kn(121.1538, 80.7692, 2.7, 0.0175)
    }

    fn sym(dim: usize, v: &[f64]) -> SymTensor {
        let mut t = SymTensor::zero(dim);
        let mut it = v.iter();
        for i in 0..dim {
            for j in i..dim {
                let x = *it.next().unwrap();
                t.m[i][j] = x;
                t.m[j][i] = x;
            }
        }
        t
    }

    fn unit(dim: usize, i: usize, j: usize) -> SymTensor {
        let mut e = SymTensor::zero(dim);
        e.m[i][j] += 0.5;
        e.m[j][i] += 0.5;
        e
    }

    #[test]
    fn uniaxial_psi_values() {
        let p = sent();
        let e = 1e-3;
        let (pp, pm) = psi_split(&SymTensor::diag(3, &[e, 0.0, 0.0]), &p);
        // (λ/2 + μ) e² in N/mm²
        assert!((pp - 0.141346e0).abs() < 1e-6);
        assert_eq!(pm, 0.0);
        let (pp, pm) = psi_split(&SymTensor::diag(3, &[-e, 0.0, 0.0]), &p);
        assert_eq!(pp, 0.0);
        assert!((pm - 0.141346e0).abs() < 1e-6);
    }

    #[test]
    fn uniaxial_stress_values() {
        let p = sent();
        let e = 1e-3;
        let (sp, sm) = sigma_split(&SymTensor::diag(3, &[e, 0.0, 0.0]), &p);
        let l = p.lambda;
        let m = p.mu;
        assert!((sp.m[0][0] - (l + 2.0 * m) * e).abs() < 1e-12);
        assert!((sp.m[1][1] - l * e).abs() < 1e-12);
        assert!((sp.m[2][2] - l * e).abs() < 1e-12);
        assert_eq!(sm.norm(), 0.0);
    }

    #[test]
    fn degradation_values() {
        let p = sent();
        assert_eq!(degradation(0.0, &p), (1.0 + 1e-4, -2.0));
        assert_eq!(degradation(1.0, &p), (1e-4, 0.0));
    }

    #[test]
    fn zero_strain_uses_compression_branch() {
        let p = sent();
        let c = Constitutive::new(&SymTensor::zero(2), &p);
        let (cp, cm) = c.tangents();
        let d = sym(2, &[1.0, 0.3, -0.5]);
        assert_eq!(cp.apply(&d).norm(), 0.0);
        let iso = d.scaled(2.0 * p.mu).add(&SymTensor::diag(2, &[p.lambda * d.trace(); 2]));
        assert!(cm.apply(&d).add(&iso.scaled(-1.0)).norm() < 1e-9 * iso.norm());
    }

    #[test]
    fn definite_strain_gives_isotropic_tangent() {
        let p = sent();
        let eps = sym(3, &[2e-3, 1e-4, 0.0, 1e-3, 2e-4, 3e-3]);
        let t = tangent(&eps, 0.0, &p);
        let d = sym(3, &[0.1, -0.2, 0.3, 0.4, 0.5, -0.6]);
        let mut iso = d.scaled(2.0 * p.mu);
        iso.add_identity(p.lambda * d.trace());
        let got = t.apply(&d);
        assert!(got.add(&iso.scaled(-(1.0 + p.k))).norm() < 1e-8 * iso.norm());
    }

    fn fd_stress_check(dim: usize, v: &[f64], kind: TraceSplit, rel: f64) {
        let mut p = sent();
        p.split = kind;
        let eps = sym(dim, v);
        let (sp, sm) = sigma_split(&eps, &p);
        let h = 1e-7 * (1.0 + eps.norm());
        for i in 0..dim {
            for j in i..dim {
                let e = unit(dim, i, j);
                let (pp1, pm1) = psi_split(&eps.add(&e.scaled(h)), &p);
                let (pp0, pm0) = psi_split(&eps.add(&e.scaled(-h)), &p);
                let fp = (pp1 - pp0) / (2.0 * h);
                let fm = (pm1 - pm0) / (2.0 * h);
                let scale = 1.0 + sp.norm() + sm.norm();
                assert!((fp - sp.m[i][j]).abs() <= rel * scale, "plus {i}{j}: {fp} vs {}", sp.m[i][j]);
                assert!((fm - sm.m[i][j]).abs() <= rel * scale, "minus {i}{j}: {fm} vs {}", sm.m[i][j]);
            }
        }
    }

    fn fd_tangent_check(dim: usize, v: &[f64], kind: TraceSplit, rel: f64) {
        let mut p = sent();
        p.split = kind;
        let eps = sym(dim, v);
        let c = Constitutive::new(&eps, &p);
        let (cp, cm) = c.tangents();
        let h = 1e-6 * eps.norm().max(1e-12);
        for k in 0..dim {
            for l in k..dim {
                let e = unit(dim, k, l);
                let (sp1, sm1) = sigma_split(&eps.add(&e.scaled(h)), &p);
                let (sp0, sm0) = sigma_split(&eps.add(&e.scaled(-h)), &p);
                let fdp = sp1.add(&sp0.scaled(-1.0)).scaled(0.5 / h);
                let fdm = sm1.add(&sm0.scaled(-1.0)).scaled(0.5 / h);
                let ap = cp.apply(&e);
                let am = cm.apply(&e);
                let scale = p.lambda + 2.0 * p.mu;
                assert!(fdp.add(&ap.scaled(-1.0)).norm() <= rel * scale, "C+ col {k}{l}");
                assert!(fdm.add(&am.scaled(-1.0)).norm() <= rel * scale, "C- col {k}{l}");
            }
        }
    }

    #[test]
    fn stress_matches_fd_mixed_signs() {
        fd_stress_check(2, &[1e-3, 4e-4, -2e-3], TraceSplit::Bracket, 1e-6);
        fd_stress_check(3, &[1e-3, 4e-4, -1e-4, -2e-3, 3e-4, 5e-4], TraceSplit::Bracket, 1e-6);
        fd_stress_check(2, &[1e-3, 4e-4, -2e-3], TraceSplit::Spectral, 1e-6);
        fd_stress_check(3, &[1e-3, 4e-4, -1e-4, -2e-3, 3e-4, 5e-4], TraceSplit::Spectral, 1e-6);
    }

    #[test]
    fn tangent_matches_fd_mixed_signs() {
        fd_tangent_check(2, &[1e-3, 4e-4, -2e-3], TraceSplit::Bracket, 1e-4);
        fd_tangent_check(3, &[1e-3, 4e-4, -1e-4, -2e-3, 3e-4, 5e-4], TraceSplit::Bracket, 1e-4);
        fd_tangent_check(2, &[1e-3, 4e-4, -2e-3], TraceSplit::Spectral, 1e-4);
        fd_tangent_check(3, &[1e-3, 4e-4, -1e-4, -2e-3, 3e-4, 5e-4], TraceSplit::Spectral, 1e-4);
    }

    #[test]
    fn repeated_eigenvalues_are_handled() {
        let p = sent();
        let eps = SymTensor::diag(3, &[1e-3, 1e-3, -5e-4]);
        let t = tangent(&eps, 0.3, &p);
        assert!(t.c.iter().flatten().flatten().flatten().all(|x| x.is_finite()));
        fd_tangent_check(3, &[1e-3, 0.0, 0.0, 1e-3, 0.0, -5e-4], TraceSplit::Bracket, 1e-4);
    }

    proptest! {
        #[test]
        fn split_reconstructs(v in proptest::collection::vec(-1.0f64..1.0, 6)) {
            let eps = sym(3, &v);
            let s = spectral_split(&eps);
            let r = s.eps_plus.add(&s.eps_minus).add(&eps.scaled(-1.0));
            prop_assert!(r.norm() <= 1e-12 * (1.0 + eps.norm()));
            prop_assert!(s.eps_plus.dot(&s.eps_minus).abs() <= 1e-14 * (1.0 + eps.norm() * eps.norm()));
            let (pp, pm) = psi_split(&eps, &sent());
            prop_assert!(pp >= 0.0 && pm >= 0.0);
        }

        #[test]
        fn split_reconstructs_2d(v in proptest::collection::vec(-1.0f64..1.0, 3)) {
            let eps = sym(2, &v);
            let s = spectral_split(&eps);
            let r = s.eps_plus.add(&s.eps_minus).add(&eps.scaled(-1.0));
            prop_assert!(r.norm() <= 1e-12 * (1.0 + eps.norm()));
            prop_assert_eq!(s.eigvals[2], 0.0);
        }

        #[test]
        fn stress_is_gradient(v in proptest::collection::vec(-1e-2f64..1e-2, 6)) {
            let eps = sym(3, &v);
            let s = spectral_split(&eps);
            let tr = eps.trace();
            let mut gaps = vec![tr.abs()];
            gaps.extend(s.eigvals.iter().map(|x| x.abs()));
            prop_assume!(gaps.iter().all(|g| *g > 1e-5));
            fd_stress_check(3, &v, TraceSplit::Bracket, 1e-6);
        }

        #[test]
        fn definite_sum_is_isotropic(v in proptest::collection::vec(0.1f64..1.0, 3), r in 0.0f64..1.0) {
            let p = sent();
            let eps = SymTensor::diag(3, &v).scaled(1e-3);
            let (sp, sm) = sigma_split(&eps, &p);
            let mut iso = eps.scaled(2.0 * p.mu);
            iso.add_identity(p.lambda * eps.trace());
            prop_assert!(sp.add(&sm).add(&iso.scaled(-1.0)).norm() <= 1e-9 * iso.norm());
            let st = stress(&eps, r, &p);
            let (rr, _) = degradation(r, &p);
            prop_assert!(st.add(&iso.scaled(-rr)).norm() <= 1e-9 * iso.norm());
        }
    }
}
