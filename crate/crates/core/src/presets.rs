//! Benchmark problems: single-edge notched tension (`sent`) and shear
//! (`sens`) on a 1 mm square, the 3-D L-shaped panel (`lshape`) and the 3-D
//! notched three-point bending beam (`bend3d`).
//!
//! `scale` coarsens the mesh: the element size in the refinement band is the
//! full-scale size divided by `scale`.

use crate::driver::{DirichletBc, LoadProgram, ReactionSpec};
use crate::material::{MaterialError, MaterialInput, MaterialParams};
use serde::{Deserialize, Serialize};
use crate::mesh::{generate_grid, graded_axis, GridSpec, Mesh, MeshError, Slit};
use thiserror::Error;

pub const PRESET_NAMES: [&str; 4] = ["sent", "sens", "lshape", "bend3d"];

#[derive(Debug, Error)]
pub enum PresetError {
    #[error("unknown preset `{0}` (expected one of sent, sens, lshape, bend3d)")]
    Unknown(String),
    #[error("scale must lie in (0, 1], got {0}")]
    BadScale(f64),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Material(#[from] MaterialError),
}

/// A named node set defined by an axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub name: String,
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

/// Everything needed to build a preset problem.
#[derive(Debug, Clone, PartialEq)]
pub struct PresetSpec {
    pub name: String,
    pub scale: f64,
    pub grid: GridSpec,
    pub sets: Vec<BoxSet>,
    pub material: MaterialInput,
    pub params: MaterialParams,
    pub program: LoadProgram,
    /// Element size inside the refinement band.
    pub h_band: f64,
    /// Bounding box of the refinement band.
    pub band: ([f64; 3], [f64; 3]),
}

#[derive(Debug, Clone)]
pub struct Preset {
    pub spec: PresetSpec,
    pub mesh: Mesh,
}

fn bc(set: &str, component: usize, factor: f64) -> DirichletBc {
    DirichletBc { set: set.to_string(), component, factor }
}

fn boxset(name: &str, lo: [f64; 3], hi: [f64; 3]) -> BoxSet {
    BoxSet { name: name.into(), lo, hi }
}

fn square_grid(h: f64, fine_x: (f64, f64), fine_y: (f64, f64)) -> GridSpec {
    let hc = h.max(0.04);
    GridSpec {
        axes: vec![
            graded_axis(0.0, 1.0, &[0.5], fine_x, h, hc),
            graded_axis(0.0, 1.0, &[0.5], fine_y, h, hc),
        ],
        removed: vec![],
        slit: Some(Slit { axis: 1, position: 0.5, lo: [0.0; 3], hi: [0.5 - 0.25 * h, 0.0, 0.0] }),
    }
}

fn square_sets() -> Vec<BoxSet> {
    vec![
        boxset("top", [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]),
        boxset("bottom", [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]),
        boxset("left", [0.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
        boxset("right", [1.0, 0.0, 0.0], [1.0, 1.0, 0.0]),
        boxset("origin", [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]),
    ]
}

/// Preset description without building the mesh.
pub fn preset_spec(name: &str, scale: f64) -> Result<PresetSpec, PresetError> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(PresetError::BadScale(scale));
    }
    match name {
        "sent" => {
            let material = MaterialInput { eps_pen: 1e-6, ..MaterialInput::lame(121.1538, 80.7692, 2.7, 0.0175) };
            let params = material.to_params()?;
            let h = 0.005f64.min(params.ell / 2.0) / scale;
            Ok(PresetSpec {
                name: name.into(),
                scale,
                grid: square_grid(h, (0.45, 1.0), (0.4, 0.6)),
                sets: square_sets(),
                material,
                params,
                program: LoadProgram {
                    steps: 100,
                    increment: 1e-4,
                    bcs: vec![bc("bottom", 1, 0.0), bc("origin", 0, 0.0), bc("top", 0, 0.0), bc("top", 1, 1.0)],
                    reaction: ReactionSpec { set: "top".into(), direction: vec![0.0, 1.0] },
                },
                h_band: h,
                band: ([0.45, 0.4, 0.0], [1.0, 0.6, 0.0]),
            })
        }
        "sens" => {
            let material = MaterialInput { eps_pen: 1e-5, ..MaterialInput::lame(121.1538, 80.7692, 2.7, 0.001) };
            let params = material.to_params()?;
            let h = 0.005f64.min(params.ell / 2.0) / scale;
            Ok(PresetSpec {
                name: name.into(),
                scale,
                grid: square_grid(h, (0.45, 1.0), (0.0, 0.55)),
                sets: square_sets(),
                material,
                params,
                program: LoadProgram {
                    steps: 200,
                    increment: 1e-4,
                    bcs: vec![
                        bc("left", 1, 0.0),
                        bc("right", 1, 0.0),
                        bc("top", 1, 0.0),
                        bc("bottom", 1, 0.0),
                        bc("bottom", 0, 0.0),
                        bc("top", 0, 1.0),
                    ],
                    reaction: ReactionSpec { set: "top".into(), direction: vec![1.0, 0.0] },
                },
                h_band: h,
                band: ([0.45, 0.0, 0.0], [1.0, 0.55, 0.0]),
            })
        }
        "lshape" => {
            let material = MaterialInput { eps_pen: 1e-4, ..MaterialInput::young(25.85, 0.18, 0.095, 20.0) };
            let params = material.to_params()?;
            let h = 6.25f64.min(params.ell / 2.0) / scale;
            let hc = h.max(25.0);
            let hz = h.clamp(12.5, 50.0);
            Ok(PresetSpec {
                name: name.into(),
                scale,
                grid: GridSpec {
                    axes: vec![
                        graded_axis(0.0, 500.0, &[250.0, 470.0], (0.0, 300.0), h, hc),
                        graded_axis(0.0, 500.0, &[250.0], (200.0, 350.0), h, hc),
                        graded_axis(0.0, 100.0, &[], (0.0, 100.0), hz, hz),
                    ],
                    removed: vec![([250.0, 0.0, -1.0], [500.0, 250.0, 101.0])],
                    slit: None,
                },
                sets: vec![
                    boxset("fixed", [0.0, 0.0, 0.0], [250.0, 0.0, 100.0]),
                    boxset("load", [470.0, 250.0, 0.0], [470.0, 250.0, 100.0]),
                ],
                material,
                params,
                program: LoadProgram {
                    steps: 1000,
                    increment: 1e-3,
                    bcs: vec![bc("fixed", 0, 0.0), bc("fixed", 1, 0.0), bc("fixed", 2, 0.0), bc("load", 1, 1.0)],
                    reaction: ReactionSpec { set: "load".into(), direction: vec![0.0, 1.0, 0.0] },
                },
                h_band: h,
                band: ([0.0, 200.0, 0.0], [300.0, 350.0, 100.0]),
            })
        }
        "bend3d" => {
            let material = MaterialInput { eps_pen: 1e-4, ..MaterialInput::young(39.0, 0.15, 0.04, 15.0) };
            let params = material.to_params()?;
            let h = 1.0f64.min(params.ell / 2.0) / scale;
            let hc = h.max(20.0);
            let hx = h.clamp(5.0, 25.0);
            Ok(PresetSpec {
                name: name.into(),
                scale,
                grid: GridSpec {
                    axes: vec![
                        graded_axis(0.0, 100.0, &[], (0.0, 100.0), hx, hx),
                        graded_axis(0.0, 840.0, &[20.0, 420.0, 820.0], (380.0, 460.0), h, hc),
                        graded_axis(-200.0, -100.0, &[-150.0], (-200.0, -100.0), h, h),
                    ],
                    removed: vec![],
                    slit: Some(Slit {
                        axis: 1,
                        position: 420.0,
                        lo: [0.0, 0.0, -200.0],
                        hi: [100.0, 0.0, -150.0 - 0.25 * h],
                    }),
                },
                sets: vec![
                    boxset("support_left", [0.0, 20.0, -200.0], [100.0, 20.0, -200.0]),
                    boxset("support_right", [0.0, 820.0, -200.0], [100.0, 820.0, -200.0]),
                    boxset("pin", [0.0, 20.0, -200.0], [0.0, 20.0, -200.0]),
                    boxset("load", [0.0, 420.0, -100.0], [100.0, 420.0, -100.0]),
                ],
                material,
                params,
                program: LoadProgram {
                    steps: 800,
                    increment: 1e-3,
                    bcs: vec![
                        bc("support_left", 1, 0.0),
                        bc("support_left", 2, 0.0),
                        bc("support_right", 2, 0.0),
                        bc("pin", 0, 0.0),
                        bc("load", 2, -1.0),
                    ],
                    reaction: ReactionSpec { set: "load".into(), direction: vec![0.0, 0.0, -1.0] },
                },
                h_band: h,
                band: ([0.0, 380.0, -200.0], [100.0, 460.0, -100.0]),
            })
        }
        other => Err(PresetError::Unknown(other.to_string())),
    }
}

impl PresetSpec {
    pub fn build_mesh(&self) -> Result<Mesh, PresetError> {
        let mut mesh = generate_grid(&self.grid)?;
        add_box_sets(&mut mesh, &self.sets);
        Ok(mesh)
    }
}

/// Add box-defined node sets, matching coordinates up to a tolerance relative
/// to the mesh size.
pub fn add_box_sets(mesh: &mut Mesh, sets: &[BoxSet]) {
    let (lo, hi) = mesh.bounds();
    let tol = 1e-9 * (0..3).map(|i| hi[i] - lo[i]).fold(0.0, f64::max);
    for s in sets {
        let nodes = mesh.select_box(s.lo, s.hi, tol);
        mesh.add_node_set(&s.name, nodes);
    }
}

pub fn build_preset(name: &str, scale: f64) -> Result<Preset, PresetError> {
    let spec = preset_spec(name, scale)?;
    let mesh = spec.build_mesh()?;
    Ok(Preset { spec, mesh })
}
