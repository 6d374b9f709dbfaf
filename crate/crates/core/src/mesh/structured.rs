//! Tensor-product grid generator with optional slit and removed cells.

use super::{Mesh, MeshError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// A slit: grid nodes on the plane `x[axis] = position` whose other
/// coordinates lie in `[lo, hi]` are duplicated, and cells on the upper side
/// use the copies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slit {
    pub axis: usize,
    pub position: f64,
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GridSpec {
    /// Sorted node coordinates along each axis.
    pub axes: Vec<Vec<f64>>,
    /// Boxes of cells to drop (a cell goes if its centroid is inside).
    #[serde(default)]
    pub removed: Vec<([f64; 3], [f64; 3])>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slit: Option<Slit>,
}

/// Uniform grid on `[0, extents]` with `divisions` cells per axis; 2 triangles
/// per cell in 2-D, 6 tetrahedra per cell in 3-D.
pub fn generate_structured(dim: usize, extents: &[f64], divisions: &[usize]) -> Result<Mesh, MeshError> {
    if extents.len() != dim || divisions.len() != dim || !(dim == 2 || dim == 3) {
        return Err(MeshError::BadGrid("extents and divisions must match dimension".into()));
    }
    if divisions.iter().any(|&d| d == 0) || extents.iter().any(|&x| !(x > 0.0)) {
        return Err(MeshError::BadGrid("divisions and extents must be positive".into()));
    }
    let axes = (0..dim)
        .map(|a| (0..=divisions[a]).map(|i| extents[a] * i as f64 / divisions[a] as f64).collect())
        .collect();
    generate_grid(&GridSpec { axes, ..Default::default() })
}

/// Axis coordinates from `lo` to `hi` using spacing `h_fine` inside
/// `[fine.0, fine.1]` and `h_coarse` elsewhere. Every breakpoint inside the
/// range appears exactly.
pub fn graded_axis(lo: f64, hi: f64, breaks: &[f64], fine: (f64, f64), h_fine: f64, h_coarse: f64) -> Vec<f64> {
    let mut pts = vec![lo, hi];
    for &b in breaks.iter().chain([fine.0, fine.1].iter()) {
        if b > lo && b < hi {
            pts.push(b);
        }
    }
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (hi - lo));
    let mut out = vec![lo];
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = 0.5 * (a + b);
        let h = if mid >= fine.0 && mid <= fine.1 { h_fine } else { h_coarse };
        let n = (((b - a) / h) - 1e-9).ceil().max(1.0) as usize;
        for i in 1..n {
            out.push(a + (b - a) * i as f64 / n as f64);
        }
        out.push(b);
    }
    out
}

fn find_index(axis: &[f64], x: f64) -> Option<usize> {
    let span = axis[axis.len() - 1] - axis[0];
    axis.iter().position(|&v| (v - x).abs() <= 1e-9 * span)
}

pub fn generate_grid(spec: &GridSpec) -> Result<Mesh, MeshError> {
    let dim = spec.axes.len();
    if !(dim == 2 || dim == 3) {
        return Err(MeshError::BadGrid("grid must have 2 or 3 axes".into()));
    }
    for a in &spec.axes {
        if a.len() < 2 || a.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(MeshError::BadGrid("axis coordinates must be strictly increasing".into()));
        }
    }
    let n: Vec<usize> = spec.axes.iter().map(|a| a.len()).collect();
    let nz = if dim == 3 { n[2] } else { 1 };
    let gid = |i: usize, j: usize, k: usize| i + n[0] * (j + n[1] * k);
    let mut coords = Vec::with_capacity(n[0] * n[1] * nz);
    for k in 0..nz {
        for j in 0..n[1] {
            for i in 0..n[0] {
                let z = if dim == 3 { spec.axes[2][k] } else { 0.0 };
                coords.push([spec.axes[0][i], spec.axes[1][j], z]);
            }
        }
    }

    // slit duplicates
    let mut dup: Vec<Option<usize>> = vec![None; coords.len()];
    let mut slit_index = None;
    if let Some(s) = &spec.slit {
        if s.axis >= dim {
            return Err(MeshError::BadGrid("slit axis out of range".into()));
        }
        let ks = find_index(&spec.axes[s.axis], s.position)
            .ok_or_else(|| MeshError::BadGrid("slit position is not a grid line".into()))?;
        slit_index = Some((s.axis, ks));
        let tol = 1e-9;
        for g in 0..coords.len() {
            let x = coords[g];
            let on = (x[s.axis] - s.position).abs() <= tol * (1.0 + s.position.abs())
                && (0..dim).filter(|&a| a != s.axis).all(|a| x[a] >= s.lo[a] - tol && x[a] <= s.hi[a] + tol);
            if on {
                dup[g] = Some(coords.len());
                coords.push(x);
            }
        }
    }

    let removed = |c: [f64; 3]| {
        spec.removed.iter().any(|(lo, hi)| (0..dim).all(|a| c[a] > lo[a] && c[a] < hi[a]))
    };
    let mut elements: Vec<[usize; 4]> = Vec::new();
    let nck = if dim == 3 { n[2] - 1 } else { 1 };
    for k in 0..nck {
        for j in 0..n[1] - 1 {
            for i in 0..n[0] - 1 {
                let idx = [i, j, k];
                let mut cen = [0.0; 3];
                for a in 0..dim {
                    cen[a] = 0.5 * (spec.axes[a][idx[a]] + spec.axes[a][idx[a] + 1]);
                }
                if removed(cen) {
                    continue;
                }
                let upper = matches!(slit_index, Some((ax, ks)) if idx[ax] >= ks);
                let node = |di: usize, dj: usize, dk: usize| {
                    let g = gid(i + di, j + dj, k + dk);
                    match (upper, dup[g]) {
                        (true, Some(d)) => d,
                        _ => g,
                    }
                };
                if dim == 2 {
                    let (n00, n10, n01, n11) = (node(0, 0, 0), node(1, 0, 0), node(0, 1, 0), node(1, 1, 0));
                    if (i + j) % 2 == 0 {
                        elements.push([n00, n10, n11, 0]);
                        elements.push([n00, n11, n01, 0]);
                    } else {
                        elements.push([n00, n10, n01, 0]);
                        elements.push([n10, n11, n01, 0]);
                    }
                } else {
                    let v0 = node(0, 0, 0);
                    let v7 = node(1, 1, 1);
                    let e = [[1, 0, 0], [0, 1, 0], [0, 0, 1]];
                    for p in [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
                        let a = e[p[0]];
                        let b = [a[0] + e[p[1]][0], a[1] + e[p[1]][1], a[2] + e[p[1]][2]];
                        elements.push([v0, node(a[0], a[1], a[2]), node(b[0], b[1], b[2]), v7]);
                    }
                }
            }
        }
    }

    // drop unused nodes, keeping order
    let mut used = vec![false; coords.len()];
    for c in &elements {
        for &v in &c[..=dim] {
            used[v] = true;
        }
    }
    let mut remap = vec![usize::MAX; coords.len()];
    let mut kept = Vec::new();
    for (g, x) in coords.iter().enumerate() {
        if used[g] {
            remap[g] = kept.len();
            kept.push(*x);
        }
    }
    for c in elements.iter_mut() {
        for v in c[..=dim].iter_mut() {
            *v = remap[*v];
        }
    }
    let mut mesh = Mesh::new(dim, kept, elements)?;
    for e in 0..mesh.num_elements() {
        if mesh.signed_measure(e) <= 0.0 {
            return Err(MeshError::Degenerate(e));
        }
    }
    let names = [("xmin", "xmax"), ("ymin", "ymax"), ("zmin", "zmax")];
    for a in 0..dim {
        let (lo, hi) = (spec.axes[a][0], spec.axes[a][n[a] - 1]);
        let tol = 1e-12 * (hi - lo);
        let smin: BTreeSet<usize> = mesh.select_nodes(|x| x[a] - lo, tol);
        let smax: BTreeSet<usize> = mesh.select_nodes(|x| x[a] - hi, tol);
        mesh.add_node_set(names[a].0, smin);
        mesh.add_node_set(names[a].1, smax);
    }
    Ok(mesh)
}
