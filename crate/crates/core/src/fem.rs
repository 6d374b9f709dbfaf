//! P1/P1 finite element discretization: quadrature, element kernels, dof
//! bookkeeping and assembly of residuals and tangents.
//!
//! Element contributions are computed in parallel and scattered in element
//! order, so results do not depend on the thread count.

use crate::linsolve::CsrMatrix;
use crate::material::{degradation, Constitutive, Dissipation, MaterialParams, SymTensor};
use crate::mesh::Mesh;
use crate::par;
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FemError {
    #[error("element {0} is degenerate")]
    Degenerate(usize),
    #[error("unknown node set `{0}`")]
    UnknownSet(String),
    #[error("vector length {got} does not match expected {expected}")]
    Length { expected: usize, got: usize },
}

/// Degree-2 quadrature on the reference simplex, in barycentric coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 4]>,
    /// Weights summing to the reference measure (1/2 or 1/6).
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn for_dim(dim: usize) -> Self {
        if dim == 2 {
            let (a, b) = (2.0 / 3.0, 1.0 / 6.0);
            QuadratureRule {
                points: vec![[a, b, b, 0.0], [b, a, b, 0.0], [b, b, a, 0.0]],
                weights: vec![1.0 / 6.0; 3],
            }
        } else {
            let a = 0.585_410_196_624_968_5;
            let b = 0.138_196_601_125_010_5;
            QuadratureRule {
                points: vec![[a, b, b, b], [b, a, b, b], [b, b, a, b], [b, b, b, a]],
                weights: vec![1.0 / 24.0; 4],
            }
        }
    }

    pub fn reference_measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Weights normalized to sum to one.
    pub fn fractions(&self) -> Vec<f64> {
        let m = self.reference_measure();
        self.weights.iter().map(|w| w / m).collect()
    }
}

/// Geometric data of one element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementKernel {
    pub nodes: [usize; 4],
    pub npe: usize,
    /// Physical gradients of the shape functions.
    pub grads: [[f64; 3]; 4],
    /// Jacobian determinant `j`.
    pub jac: f64,
    /// Element measure.
    pub vol: f64,
}

fn invert(dim: usize, j: &[[f64; 3]; 3]) -> Option<([[f64; 3]; 3], f64)> {
    let mut inv = [[0.0; 3]; 3];
    let det;
    if dim == 2 {
        det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det == 0.0 {
            return None;
        }
        inv[0][0] = j[1][1] / det;
        inv[0][1] = -j[0][1] / det;
        inv[1][0] = -j[1][0] / det;
        inv[1][1] = j[0][0] / det;
    } else {
        let c = |r: usize, s: usize| {
            let (r1, r2) = ((r + 1) % 3, (r + 2) % 3);
            let (s1, s2) = ((s + 1) % 3, (s + 2) % 3);
            j[r1][s1] * j[r2][s2] - j[r1][s2] * j[r2][s1]
        };
        det = j[0][0] * c(0, 0) + j[0][1] * c(0, 1) + j[0][2] * c(0, 2);
        if det == 0.0 {
            return None;
        }
        for r in 0..3 {
            for s in 0..3 {
                inv[s][r] = c(r, s) / det;
            }
        }
    }
    Some((inv, det))
}

/// Precompute shape gradients and measures for every element.
pub fn build_kernels(mesh: &Mesh) -> Result<Vec<ElementKernel>, FemError> {
    let dim = mesh.dim();
    let fact = if dim == 2 { 0.5 } else { 1.0 / 6.0 };
    (0..mesh.num_elements())
        .map(|e| {
            let conn = mesh.element(e);
            let x0 = mesh.coords(conn[0]);
            // J[i][a] = ∂x_i/∂ξ_a
            let mut jm = [[0.0; 3]; 3];
            for a in 0..dim {
                let xa = mesh.coords(conn[a + 1]);
                for i in 0..dim {
                    jm[i][a] = xa[i] - x0[i];
                }
            }
            let (inv, det) = invert(dim, &jm).ok_or(FemError::Degenerate(e))?;
            let vol = fact * det;
            if !(det > 0.0) || vol <= 1e-14 * mesh.max_edge().powi(dim as i32) {
                return Err(FemError::Degenerate(e));
            }
            // ∇N_a = J⁻ᵀ ∇̂N_a with ∇̂N_0 = -1, ∇̂N_a = e_a
            let mut grads = [[0.0; 3]; 4];
            for a in 1..=dim {
                for i in 0..dim {
                    grads[a][i] = inv[a - 1][i];
                }
            }
            for i in 0..dim {
                grads[0][i] = -(1..=dim).map(|a| grads[a][i]).sum::<f64>();
            }
            let mut nodes = [0; 4];
            nodes[..=dim].copy_from_slice(conn);
            Ok(ElementKernel { nodes, npe: dim + 1, grads, jac: det, vol })
        })
        .collect()
}

/// Displacement dof numbering with a constrained/free partition.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    pub dim: usize,
    pub n_nodes: usize,
    /// Free index per global dof, `usize::MAX` if constrained.
    pub free_index: Vec<usize>,
    pub free_dofs: Vec<usize>,
}

pub const CONSTRAINED: usize = usize::MAX;

impl DofMap {
    pub fn new(dim: usize, n_nodes: usize, constrained: &[bool]) -> Self {
        let mut free_index = vec![CONSTRAINED; dim * n_nodes];
        let mut free_dofs = Vec::new();
        for g in 0..dim * n_nodes {
            if !constrained[g] {
                free_index[g] = free_dofs.len();
                free_dofs.push(g);
            }
        }
        DofMap { dim, n_nodes, free_index, free_dofs }
    }

    pub fn n_dofs(&self) -> usize {
        self.dim * self.n_nodes
    }

    pub fn n_free(&self) -> usize {
        self.free_dofs.len()
    }

    pub fn is_constrained(&self, g: usize) -> bool {
        self.free_index[g] == CONSTRAINED
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free_dofs.iter().map(|&g| full[g]).collect()
    }

    /// Add a free-dof vector into a full vector.
    pub fn add_free(&self, full: &mut [f64], free: &[f64]) {
        for (k, &g) in self.free_dofs.iter().enumerate() {
            full[g] += free[k];
        }
    }
}

/// Everything that stays fixed over a run: mesh, kernels, dofs, patterns.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub mesh: Mesh,
    pub quad: QuadratureRule,
    pub frac: Vec<f64>,
    pub kernels: Vec<ElementKernel>,
    pub dofs: DofMap,
    u_pattern: CsrMatrix,
    u_scatter: Vec<Vec<usize>>,
    b_pattern: CsrMatrix,
    b_scatter: Vec<Vec<usize>>,
}

impl Discretization {
    pub fn new(mesh: Mesh, constrained: &[bool]) -> Result<Self, FemError> {
        let dim = mesh.dim();
        let nn = mesh.num_nodes();
        if constrained.len() != dim * nn {
            return Err(FemError::Length { expected: dim * nn, got: constrained.len() });
        }
        let kernels = build_kernels(&mesh)?;
        let quad = QuadratureRule::for_dim(dim);
        let frac = quad.fractions();
        let dofs = DofMap::new(dim, nn, constrained);

        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); nn];
        for k in &kernels {
            for &a in &k.nodes[..k.npe] {
                for &b in &k.nodes[..k.npe] {
                    adj[a].insert(b);
                }
            }
        }
        let b_rows: Vec<Vec<usize>> = adj.iter().map(|s| s.iter().copied().collect()).collect();
        let b_pattern = CsrMatrix::from_rows(&b_rows);
        let mut u_rows = Vec::with_capacity(dofs.n_free());
        for &g in &dofs.free_dofs {
            let node = g / dim;
            let mut r = Vec::new();
            for &m in &adj[node] {
                for c in 0..dim {
                    let f = dofs.free_index[m * dim + c];
                    if f != CONSTRAINED {
                        r.push(f);
                    }
                }
            }
            r.sort_unstable();
            u_rows.push(r);
        }
        let u_pattern = CsrMatrix::from_rows(&u_rows);

        let u_scatter = kernels
            .iter()
            .map(|k| {
                let nl = k.npe * dim;
                let mut s = vec![CONSTRAINED; nl * nl];
                for r in 0..nl {
                    let fr = dofs.free_index[k.nodes[r / dim] * dim + r % dim];
                    if fr == CONSTRAINED {
                        continue;
                    }
                    for c in 0..nl {
                        let fc = dofs.free_index[k.nodes[c / dim] * dim + c % dim];
                        if fc != CONSTRAINED {
                            s[r * nl + c] = u_pattern.position(fr, fc).expect("pattern");
                        }
                    }
                }
                s
            })
            .collect();
        let b_scatter = kernels
            .iter()
            .map(|k| {
                let mut s = Vec::with_capacity(k.npe * k.npe);
                for a in 0..k.npe {
                    for b in 0..k.npe {
                        s.push(b_pattern.position(k.nodes[a], k.nodes[b]).expect("pattern"));
                    }
                }
                s
            })
            .collect();
        Ok(Discretization { mesh, quad, frac, kernels, dofs, u_pattern, u_scatter, b_pattern, b_scatter })
    }

    pub fn dim(&self) -> usize {
        self.mesh.dim()
    }

    pub fn n_nodes(&self) -> usize {
        self.mesh.num_nodes()
    }

    /// Strain of element `e` under the total displacement `z`.
    pub fn strain(&self, e: usize, z: &[f64]) -> SymTensor {
        let k = &self.kernels[e];
        let dim = self.dim();
        let mut g = [[0.0; 3]; 3];
        for a in 0..k.npe {
            let n = k.nodes[a];
            for i in 0..dim {
                for j in 0..dim {
                    g[i][j] += z[n * dim + i] * k.grads[a][j];
                }
            }
        }
        let mut t = SymTensor::zero(dim);
        for i in 0..dim {
            for j in 0..dim {
                t.m[i][j] = 0.5 * (g[i][j] + g[j][i]);
            }
        }
        t
    }

    /// Damage values at the quadrature points of element `e`.
    pub fn beta_at_qp(&self, e: usize, a: &[f64]) -> [f64; 4] {
        let k = &self.kernels[e];
        let mut out = [0.0; 4];
        for (q, pt) in self.quad.points.iter().enumerate() {
            out[q] = (0..k.npe).map(|i| pt[i] * a[k.nodes[i]]).sum();
        }
        out
    }

    /// Mean of `R(β)` over the quadrature points of element `e`.
    pub fn mean_degradation(&self, e: usize, a: &[f64], p: &MaterialParams) -> f64 {
        let bq = self.beta_at_qp(e, a);
        self.frac.iter().enumerate().map(|(q, w)| w * degradation(bq[q], p).0).sum()
    }

    /// Gradient of the damage field on element `e`.
    pub fn grad_beta(&self, e: usize, a: &[f64]) -> [f64; 3] {
        let k = &self.kernels[e];
        let mut g = [0.0; 3];
        for i in 0..k.npe {
            for d in 0..3 {
                g[d] += k.grads[i][d] * a[k.nodes[i]];
            }
        }
        g
    }

    /// Internal force vector over all dofs for total displacement `z`.
    pub fn internal_force(&self, z: &[f64], a: &[f64], p: &MaterialParams) -> Vec<f64> {
        let dim = self.dim();
        let local = par::map_indexed(self.kernels.len(), |e| {
            let k = &self.kernels[e];
            let c = Constitutive::new(&self.strain(e, z), p);
            let r = self.mean_degradation(e, a, p);
            let sig = c.sig_plus.scaled(r).add(&c.sig_minus);
            let mut f = [0.0; 12];
            for n in 0..k.npe {
                for i in 0..dim {
                    f[n * dim + i] = k.vol * (0..dim).map(|j| sig.m[i][j] * k.grads[n][j]).sum::<f64>();
                }
            }
            f
        });
        let mut out = vec![0.0; self.dofs.n_dofs()];
        for (e, f) in local.iter().enumerate() {
            let k = &self.kernels[e];
            for n in 0..k.npe {
                for i in 0..dim {
                    out[k.nodes[n] * dim + i] += f[n * dim + i];
                }
            }
        }
        out
    }

    /// Displacement residual on the free dofs.
    pub fn residual_u(&self, u: &[f64], ud: &[f64], a: &[f64], p: &MaterialParams) -> Vec<f64> {
        let z = total(u, ud);
        self.dofs.restrict(&self.internal_force(&z, a, p))
    }

    /// Displacement tangent on the free dofs.
    pub fn tangent_u(&self, u: &[f64], ud: &[f64], a: &[f64], p: &MaterialParams) -> CsrMatrix {
        let dim = self.dim();
        let z = total(u, ud);
        let local = par::map_indexed(self.kernels.len(), |e| {
            let k = &self.kernels[e];
            let c = Constitutive::new(&self.strain(e, &z), p);
            let r = self.mean_degradation(e, a, p);
            let (cp, cm) = c.tangents();
            let ct = cp.axpy(r, &cm);
            let nl = k.npe * dim;
            let mut km = vec![0.0; nl * nl];
            for an in 0..k.npe {
                for i in 0..dim {
                    for bn in 0..k.npe {
                        for kk in 0..dim {
                            let mut s = 0.0;
                            for j in 0..dim {
                                for l in 0..dim {
                                    s += ct.c[i][j][kk][l] * k.grads[an][j] * k.grads[bn][l];
                                }
                            }
                            km[(an * dim + i) * nl + bn * dim + kk] = k.vol * s;
                        }
                    }
                }
            }
            km
        });
        let mut m = self.u_pattern.clone();
        for (e, km) in local.iter().enumerate() {
            for (s, v) in self.u_scatter[e].iter().zip(km) {
                if *s != CONSTRAINED {
                    m.values[*s] += v;
                }
            }
        }
        m
    }

    /// `ψ₀⁺` per element for total displacement `z`.
    pub fn psi_plus(&self, z: &[f64], p: &MaterialParams) -> Vec<f64> {
        par::map_indexed(self.kernels.len(), |e| Constitutive::new(&self.strain(e, z), p).psi_plus)
    }

    /// Damage residual over all nodes, given per-element `ψ₀⁺`.
    pub fn residual_beta(&self, psi: &[f64], a: &[f64], a_n: &[f64], p: &MaterialParams) -> Vec<f64> {
        let local_c = match p.dissipation {
            Dissipation::At2 => None,
            Dissipation::At1 { kappa } => Some(kappa * p.gc_over_ell()),
        };
        let gl = p.gc * p.ell;
        let local = par::map_indexed(self.kernels.len(), |e| {
            let k = &self.kernels[e];
            let bq = self.beta_at_qp(e, a);
            let bn = self.beta_at_qp(e, a_n);
            let gb = self.grad_beta(e, a);
            let mut f = [0.0; 4];
            for (q, pt) in self.quad.points.iter().enumerate() {
                let (_, dr) = degradation(bq[q], p);
                let local = match local_c {
                    None => p.gc_over_ell() * bq[q],
                    Some(c) => c,
                };
                let x = bq[q] - bn[q];
                let pen = 0.5 * (x - x.abs()) / p.eps_pen;
                let s = dr * psi[e] + local + pen;
                for i in 0..k.npe {
                    f[i] += k.vol * self.frac[q] * pt[i] * s;
                }
            }
            for i in 0..k.npe {
                f[i] += k.vol * gl * (0..3).map(|d| k.grads[i][d] * gb[d]).sum::<f64>();
            }
            f
        });
        let mut out = vec![0.0; self.n_nodes()];
        for (e, f) in local.iter().enumerate() {
            let k = &self.kernels[e];
            for i in 0..k.npe {
                out[k.nodes[i]] += f[i];
            }
        }
        out
    }

    /// Quadrature points where the irreversibility penalty is active,
    /// flattened element by element.
    pub fn active_points(&self, a: &[f64], a_n: &[f64]) -> Vec<bool> {
        let per = par::map_indexed(self.kernels.len(), |e| {
            let bq = self.beta_at_qp(e, a);
            let bn = self.beta_at_qp(e, a_n);
            (0..self.quad.points.len()).map(|q| bq[q] - bn[q] < 0.0).collect::<Vec<_>>()
        });
        per.concat()
    }

    /// Generalized Jacobian of the damage residual. `zero_active` also counts
    /// quadrature points sitting exactly on the irreversibility bound.
    pub fn tangent_beta(&self, psi: &[f64], a: &[f64], a_n: &[f64], p: &MaterialParams, zero_active: bool) -> CsrMatrix {
        let local_c = match p.dissipation {
            Dissipation::At2 => p.gc_over_ell(),
            Dissipation::At1 { .. } => 0.0,
        };
        let gl = p.gc * p.ell;
        let local = par::map_indexed(self.kernels.len(), |e| {
            let k = &self.kernels[e];
            let bq = self.beta_at_qp(e, a);
            let bn = self.beta_at_qp(e, a_n);
            let mut km = [0.0; 16];
            for (q, pt) in self.quad.points.iter().enumerate() {
                let x = bq[q] - bn[q];
                let active = x < 0.0 || (zero_active && x == 0.0);
                let s = 2.0 * psi[e] + local_c + if active { 1.0 / p.eps_pen } else { 0.0 };
                for i in 0..k.npe {
                    for j in 0..k.npe {
                        km[i * k.npe + j] += k.vol * self.frac[q] * pt[i] * pt[j] * s;
                    }
                }
            }
            for i in 0..k.npe {
                for j in 0..k.npe {
                    km[i * k.npe + j] += k.vol * gl * (0..3).map(|d| k.grads[i][d] * k.grads[j][d]).sum::<f64>();
                }
            }
            km
        });
        let mut m = self.b_pattern.clone();
        for (e, km) in local.iter().enumerate() {
            for (idx, s) in self.b_scatter[e].iter().enumerate() {
                m.values[*s] += km[idx];
            }
        }
        m
    }

    /// Reaction on a node set: sum of the internal force over its constrained
    /// dofs, projected on `dir`.
    pub fn reaction_force(&self, u: &[f64], ud: &[f64], a: &[f64], p: &MaterialParams, set: &str, dir: &[f64]) -> Result<f64, FemError> {
        let nodes = self.mesh.node_sets.get(set).ok_or_else(|| FemError::UnknownSet(set.to_string()))?;
        let dim = self.dim();
        let f = self.internal_force(&total(u, ud), a, p);
        let mut s = 0.0;
        for &n in nodes {
            for c in 0..dim {
                let g = n * dim + c;
                if self.dofs.is_constrained(g) {
                    s += f[g] * dir[c];
                }
            }
        }
        Ok(s)
    }
}

/// `U + U_D`.
pub fn total(u: &[f64], ud: &[f64]) -> Vec<f64> {
    u.iter().zip(ud).map(|(a, b)| a + b).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_structured;

    #[test]
    fn quadrature_weights() {
        let q2 = QuadratureRule::for_dim(2);
        assert!((q2.reference_measure() - 0.5).abs() < 1e-15);
        let q3 = QuadratureRule::for_dim(3);
        assert!((q3.reference_measure() - 1.0 / 6.0).abs() < 1e-15);
        for q in [&q2, &q3] {
            for pt in &q.points {
                assert!((pt.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn quadrature_integrates_quadratics_exactly() {
        // ∫ λ0 λ1 over the reference triangle is 1/24; over the tet 1/120
        let q2 = QuadratureRule::for_dim(2);
        let s: f64 = q2.points.iter().zip(&q2.weights).map(|(p, w)| w * p[0] * p[1]).sum();
        assert!((s - 1.0 / 24.0).abs() < 1e-15);
        let s: f64 = q2.points.iter().zip(&q2.weights).map(|(p, w)| w * p[0] * p[0]).sum();
        assert!((s - 1.0 / 12.0).abs() < 1e-15);
        let q3 = QuadratureRule::for_dim(3);
        let s: f64 = q3.points.iter().zip(&q3.weights).map(|(p, w)| w * p[0] * p[1]).sum();
        assert!((s - 1.0 / 120.0).abs() < 1e-15);
        let s: f64 = q3.points.iter().zip(&q3.weights).map(|(p, w)| w * p[0] * p[0]).sum();
        assert!((s - 1.0 / 60.0).abs() < 1e-15);
    }

    #[test]
    fn gradients_sum_to_zero_and_volumes_add_up() {
        for dim in [2, 3] {
            let ext = vec![1.0; dim];
            let div = vec![3; dim];
            let m = generate_structured(dim, &ext, &div).unwrap();
            let ks = build_kernels(&m).unwrap();
            let vol: f64 = ks.iter().map(|k| k.vol).sum();
            assert!((vol - 1.0).abs() < 1e-13);
            for k in &ks {
                for d in 0..3 {
                    let s: f64 = (0..k.npe).map(|a| k.grads[a][d]).sum();
                    assert!(s.abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rigid_motion_has_no_force() {
        let m = generate_structured(2, &[1.0, 1.0], &[3, 3]).unwrap();
        let nn = m.num_nodes();
        let d = Discretization::new(m.clone(), &vec![false; 2 * nn]).unwrap();
        let p = MaterialParams::from_lame_kn(121.1538, 80.7692, 2.7, 0.0175);
        let mut z = vec![0.0; 2 * nn];
        for n in 0..nn {
            let x = m.coords(n);
            z[2 * n] = 0.1 - 1e-3 * x[1];
            z[2 * n + 1] = -0.2 + 1e-3 * x[0];
        }
        let f = d.internal_force(&z, &vec![0.3; nn], &p);
        assert!(f.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn degenerate_element_is_reported() {
        let m = Mesh::new(2, vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]], vec![[0, 1, 2, 0]]).unwrap();
        assert_eq!(build_kernels(&m), Err(FemError::Degenerate(0)));
    }
}
