//! Simplicial meshes: linear triangles in 2-D, linear tetrahedra in 3-D.
//!
//! Notches are represented as slits of duplicated nodes, so two coincident
//! nodes are never merged.

mod gmsh;
mod structured;

pub use gmsh::{parse_gmsh, read_gmsh, write_gmsh};
pub use structured::{generate_grid, generate_structured, graded_axis, GridSpec, Slit};

use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("malformed mesh file at line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("unsupported mesh format: {0}")]
    Unsupported(String),
    #[error("mesh has mixed or missing element dimensions")]
    MixedDimension,
    #[error("element {0} references unknown node")]
    UnknownNode(usize),
    #[error("element {0} is degenerate")]
    Degenerate(usize),
    #[error("invalid generator input: {0}")]
    BadGrid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    dim: usize,
    coords: Vec<[f64; 3]>,
    elements: Vec<[usize; 4]>,
    /// Named node sets; ordered for deterministic iteration.
    pub node_sets: BTreeMap<String, BTreeSet<usize>>,
    /// Named boundary facets, each given by its `dim` node indices.
    pub side_sets: BTreeMap<String, Vec<Vec<usize>>>,
}

fn signed_measure_of(dim: usize, x: &[[f64; 3]], nodes: &[usize]) -> f64 {
    let p0 = x[nodes[0]];
    let d = |k: usize, i: usize| x[nodes[k]][i] - p0[i];
    if dim == 2 {
        0.5 * (d(1, 0) * d(2, 1) - d(2, 0) * d(1, 1))
    } else {
        let det = d(1, 0) * (d(2, 1) * d(3, 2) - d(2, 2) * d(3, 1))
            - d(1, 1) * (d(2, 0) * d(3, 2) - d(2, 2) * d(3, 0))
            + d(1, 2) * (d(2, 0) * d(3, 1) - d(2, 1) * d(3, 0));
        det / 6.0
    }
}

impl Mesh {
    /// Build a mesh, reorienting negatively oriented elements.
    pub fn new(dim: usize, coords: Vec<[f64; 3]>, mut elements: Vec<[usize; 4]>) -> Result<Self, MeshError> {
        if dim != 2 && dim != 3 {
            return Err(MeshError::MixedDimension);
        }
        for (e, conn) in elements.iter_mut().enumerate() {
            if conn[..=dim].iter().any(|&n| n >= coords.len()) {
                return Err(MeshError::UnknownNode(e));
            }
            let v = signed_measure_of(dim, &coords, &conn[..=dim]);
            if v < 0.0 {
                conn.swap(1, 2);
            }
        }
        Ok(Mesh { dim, coords, elements, node_sets: BTreeMap::new(), side_sets: BTreeMap::new() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn nodes_per_element(&self) -> usize {
        self.dim + 1
    }

    pub fn coords(&self, n: usize) -> &[f64; 3] {
        &self.coords[n]
    }

    pub fn all_coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    pub fn element(&self, e: usize) -> &[usize] {
        &self.elements[e][..=self.dim]
    }

    pub fn signed_measure(&self, e: usize) -> f64 {
        signed_measure_of(self.dim, &self.coords, self.element(e))
    }

    /// Total area (2-D) or volume (3-D).
    pub fn total_measure(&self) -> f64 {
        crate::par::compensated_sum((0..self.num_elements()).map(|e| self.signed_measure(e)))
    }

    /// Facets that belong to exactly one element, with sorted node lists.
    pub fn boundary_facets(&self) -> Vec<Vec<usize>> {
        let mut count: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        for e in 0..self.num_elements() {
            let conn = self.element(e);
            for skip in 0..conn.len() {
                let mut f: Vec<usize> =
                    conn.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, &n)| n).collect();
                f.sort_unstable();
                *count.entry(f).or_insert(0) += 1;
            }
        }
        count.into_iter().filter(|(_, c)| *c == 1).map(|(f, _)| f).collect()
    }

    /// Nodes whose level value `f(x)` is within `tol` of zero.
    ///
    /// `select_nodes(|x| x[1] - 1.0, 1e-9)` picks the line `y = 1`.
    pub fn select_nodes<F: Fn(&[f64; 3]) -> f64>(&self, f: F, tol: f64) -> BTreeSet<usize> {
        assert!(tol > 0.0, "selection tolerance must be positive");
        (0..self.num_nodes()).filter(|&n| f(&self.coords[n]).abs() <= tol).collect()
    }

    /// Nodes inside an axis-aligned box (inclusive, with tolerance).
    pub fn select_box(&self, lo: [f64; 3], hi: [f64; 3], tol: f64) -> BTreeSet<usize> {
        (0..self.num_nodes())
            .filter(|&n| {
                let x = &self.coords[n];
                (0..self.dim).all(|i| x[i] >= lo[i] - tol && x[i] <= hi[i] + tol)
            })
            .collect()
    }

    /// Axis-aligned bounding box.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for x in &self.coords {
            for i in 0..3 {
                lo[i] = lo[i].min(x[i]);
                hi[i] = hi[i].max(x[i]);
            }
        }
        (lo, hi)
    }

    /// Longest element edge in the mesh.
    pub fn max_edge(&self) -> f64 {
        let mut h: f64 = 0.0;
        for e in 0..self.num_elements() {
            let c = self.element(e);
            for a in 0..c.len() {
                for b in a + 1..c.len() {
                    let (p, q) = (self.coords[c[a]], self.coords[c[b]]);
                    let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
                    h = h.max(d);
                }
            }
        }
        h
    }

    /// Longest edge among elements whose centroid lies in the box.
    pub fn max_edge_in_box(&self, lo: [f64; 3], hi: [f64; 3]) -> f64 {
        let mut h: f64 = 0.0;
        for e in 0..self.num_elements() {
            let c = self.element(e);
            let mut cen = [0.0; 3];
            for &n in c {
                for i in 0..3 {
                    cen[i] += self.coords[n][i] / c.len() as f64;
                }
            }
            if !(0..self.dim).all(|i| cen[i] >= lo[i] && cen[i] <= hi[i]) {
                continue;
            }
            for a in 0..c.len() {
                for b in a + 1..c.len() {
                    let (p, q) = (self.coords[c[a]], self.coords[c[b]]);
                    let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
                    h = h.max(d);
                }
            }
        }
        h
    }

    /// Register a node set, replacing any set of the same name.
    pub fn add_node_set(&mut self, name: &str, nodes: BTreeSet<usize>) {
        self.node_sets.insert(name.to_string(), nodes);
    }
}
