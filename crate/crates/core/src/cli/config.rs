//! Run configuration: TOML files with one table per concern, optionally seeded
//! from a preset, plus dotted `key=value` overrides.
//!
//! ```toml
//! [run]
//! preset = "sent"
//! scale = 0.1
//!
//! [backtrack]
//! max_back = 50
//! ```
//!
//! A file either names a preset or carries its own `[mesh]` table, never both.
//! With a preset the preset's full configuration is the base and every table
//! in the file is merged on top of it.

use crate::driver::{BacktrackConfig, DriverError, LoadProgram, Simulation};
use crate::material::{MaterialError, MaterialInput};
use crate::mesh::{generate_grid, read_gmsh, GridSpec, Mesh, MeshError};
use crate::presets::{add_box_sets, preset_spec, BoxSet, PresetError};
use crate::solver::SolverConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;
use toml::Value;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("bad override `{0}` (expected key=value)")]
    Override(String),
    #[error("a config names either a preset or a [mesh] table, not both")]
    PresetAndMesh,
    #[error("config needs a preset or a [mesh] table")]
    NoProblem,
    #[error("[mesh] needs exactly one of `path` and `grid`")]
    MeshSource,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Preset(#[from] PresetError),
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Driver(#[from] DriverError),
}

fn one() -> f64 {
    1.0
}

fn every() -> usize {
    1
}

fn default_out() -> String {
    "out".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default = "default_out")]
    pub out: String,
    /// Write a field snapshot every this many steps (the last step always).
    #[serde(default = "every")]
    pub snapshot_every: usize,
    #[serde(default)]
    pub save_intermediates: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { preset: None, scale: 1.0, out: default_out(), snapshot_every: 1, save_intermediates: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MeshInput {
    /// Gmsh 2.2 ASCII file; relative paths resolve against the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    /// Extra node sets selected by boxes.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sets: Vec<BoxSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    pub mesh: MeshInput,
    pub material: MaterialInput,
    pub program: LoadProgram,
    #[serde(default)]
    pub backtrack: BacktrackConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Directory relative mesh paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Full configuration of a preset as a TOML value.
pub fn preset_value(name: &str, scale: f64) -> Result<Value, ConfigError> {
    let spec = preset_spec(name, scale)?;
    let cfg = RunConfig {
        run: RunSection { preset: Some(name.to_string()), scale, ..Default::default() },
        mesh: MeshInput { path: None, grid: Some(spec.grid), sets: spec.sets },
        material: spec.material,
        program: spec.program,
        backtrack: BacktrackConfig::default(),
        solver: SolverConfig::default(),
        base_dir: PathBuf::new(),
    };
    Value::try_from(&cfg).map_err(|e| ConfigError::Parse(e.to_string()))
}

/// Parse the value half of an override: any TOML literal, else a bare string.
pub fn parse_scalar(text: &str) -> Value {
    match format!("v = {text}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(text.into())),
        Err(_) => Value::String(text.into()),
    }
}

/// Split `a.b.c=value`.
pub fn parse_override(s: &str) -> Result<(String, Value), ConfigError> {
    let (k, v) = s.split_once('=').ok_or_else(|| ConfigError::Override(s.into()))?;
    let k = k.trim();
    if k.is_empty() || k.split('.').any(str::is_empty) {
        return Err(ConfigError::Override(s.into()));
    }
    Ok((k.to_string(), parse_scalar(v.trim())))
}

/// Set a dotted key, creating intermediate tables.
pub fn set_path(root: &mut Value, key: &str, v: Value) -> Result<(), ConfigError> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| ConfigError::Invalid(format!("`{}` is not a table", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), v);
            return Ok(());
        }
        cur = table.entry(part.to_string()).or_insert_with(|| Value::Table(Default::default()));
    }
    Ok(())
}

/// Recursive merge; tables merge key by key, everything else is replaced.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Table(b), Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Build the effective configuration from an optional file and overrides
/// applied in order.
pub fn resolve(file: Option<&Path>, overrides: &[(String, Value)]) -> Result<RunConfig, ConfigError> {
    let mut user = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.into(), source })?;
            Value::Table(text.parse::<toml::Table>().map_err(|e| ConfigError::Parse(e.to_string()))?)
        }
        None => Value::Table(Default::default()),
    };
    for (k, v) in overrides {
        set_path(&mut user, k, v.clone())?;
    }
    let preset = user.get("run").and_then(|r| r.get("preset")).cloned();
    let merged = match preset {
        Some(Value::String(name)) => {
            if user.get("mesh").is_some() {
                return Err(ConfigError::PresetAndMesh);
            }
            let scale = match user.get("run").and_then(|r| r.get("scale")) {
                None => 1.0,
                Some(Value::Float(x)) => *x,
                Some(Value::Integer(i)) => *i as f64,
                Some(other) => return Err(ConfigError::Invalid(format!("run.scale must be a number, got {other}"))),
            };
            let mut base = preset_value(&name, scale)?;
            merge(&mut base, user);
            base
        }
        Some(other) => return Err(ConfigError::Invalid(format!("run.preset must be a string, got {other}"))),
        None => {
            if user.get("mesh").is_none() {
                return Err(ConfigError::NoProblem);
            }
            user
        }
    };
    let mut cfg: RunConfig = merged.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    cfg.base_dir = file.and_then(Path::parent).map(Path::to_path_buf).unwrap_or_default();
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.material.to_params()?;
        if self.mesh.path.is_some() == self.mesh.grid.is_some() {
            return Err(ConfigError::MeshSource);
        }
        if self.program.steps == 0 {
            return Err(ConfigError::Invalid("program.steps must be at least 1".into()));
        }
        if !(self.program.increment.is_finite()) {
            return Err(ConfigError::Invalid("program.increment must be finite".into()));
        }
        if !(self.backtrack.eta > 0.0) {
            return Err(ConfigError::Invalid("backtrack.eta must be positive".into()));
        }
        if self.run.snapshot_every == 0 {
            return Err(ConfigError::Invalid("run.snapshot_every must be at least 1".into()));
        }
        let s = &self.solver;
        if !(s.tol_u > 0.0 && s.tol_a > 0.0) || s.max_newton == 0 || s.max_alt == 0 {
            return Err(ConfigError::Invalid("solver tolerances and iteration limits must be positive".into()));
        }
        Ok(())
    }

    pub fn build_mesh(&self) -> Result<Mesh, ConfigError> {
        let mut mesh = match (&self.mesh.path, &self.mesh.grid) {
            (Some(p), None) => read_gmsh(&self.base_dir.join(p))?,
            (None, Some(g)) => generate_grid(g)?,
            _ => return Err(ConfigError::MeshSource),
        };
        add_box_sets(&mut mesh, &self.mesh.sets);
        Ok(mesh)
    }

    /// Simulation on a given mesh (the one built from this config, or a copy
    /// read back from a run directory).
    pub fn simulation(&self, mesh: Mesh) -> Result<Simulation, ConfigError> {
        let params = self.material.to_params()?;
        let mut sim = Simulation::new(mesh, params, self.program.clone(), self.solver, self.backtrack)?;
        sim.options.save_intermediate_states = self.run.save_intermediates;
        Ok(sim)
    }

    /// TOML text that reproduces this configuration without the preset.
    pub fn to_toml(&self) -> Result<String, ConfigError> {
        let mut c = self.clone();
        c.run.preset = None;
        if let Some(p) = &c.mesh.path {
            c.mesh.path = Some(self.base_dir.join(p).to_string_lossy().into_owned());
        }
        toml::to_string(&c).map_err(|e| ConfigError::Parse(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(list: &[&str]) -> Vec<(String, Value)> {
        list.iter().map(|s| parse_override(s).unwrap()).collect()
    }

    #[test]
    fn scalar_parsing() {
        assert_eq!(parse_scalar("0.02"), Value::Float(0.02));
        assert_eq!(parse_scalar("7"), Value::Integer(7));
        assert_eq!(parse_scalar("true"), Value::Boolean(true));
        assert_eq!(parse_scalar("sent"), Value::String("sent".into()));
        assert_eq!(parse_scalar("\"a b\""), Value::String("a b".into()));
        assert!(parse_override("novalue").is_err());
        assert!(parse_override("a..b=1").is_err());
    }

    #[test]
    fn preset_with_overrides() {
        let c = resolve(None, &ov(&["run.preset=sent", "run.scale=0.1", "material.ell=0.02", "backtrack.max_back=0"])).unwrap();
        assert_eq!(c.material.ell, 0.02);
        assert_eq!(c.material.lambda, Some(121.1538));
        assert_eq!(c.backtrack.max_back, 0);
        assert_eq!(c.program.steps, 100);
        assert_eq!(c.run.scale, 0.1);
        let spec = preset_spec("sent", 0.1).unwrap();
        assert_eq!(c.mesh.grid.as_ref(), Some(&spec.grid));
    }

    #[test]
    fn preset_and_mesh_conflict() {
        let r = resolve(None, &ov(&["run.preset=sent", "mesh.path=x.msh"]));
        assert!(matches!(r, Err(ConfigError::PresetAndMesh)));
        assert!(matches!(resolve(None, &[]), Err(ConfigError::NoProblem)));
        assert!(matches!(resolve(None, &ov(&["run.preset=nope"])), Err(ConfigError::Preset(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        let r = resolve(None, &ov(&["run.preset=sent", "material.colour=1"]));
        assert!(matches!(r, Err(ConfigError::Parse(_))), "{r:?}");
        let r = resolve(None, &ov(&["run.preset=sent", "material.young=30"]));
        assert!(matches!(r, Err(ConfigError::Material(_))), "{r:?}");
    }

    #[test]
    fn exported_config_round_trips() {
        let c = resolve(None, &ov(&["run.preset=sens", "run.scale=0.1"])).unwrap();
        let text = c.to_toml().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fork.toml");
        std::fs::write(&path, &text).unwrap();
        let back = resolve(Some(&path), &[]).unwrap();
        assert_eq!(back.material, c.material);
        assert_eq!(back.program, c.program);
        assert_eq!(back.mesh, c.mesh);
        assert_eq!(back.build_mesh().unwrap().all_coords(), c.build_mesh().unwrap().all_coords());
        assert_eq!(
            back.material.to_params().unwrap(),
            preset_spec("sens", 0.1).unwrap().params
        );
    }

    #[test]
    fn explicit_gmsh_config() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = crate::mesh::generate_structured(2, &[1.0, 1.0], &[2, 2]).unwrap();
        std::fs::write(dir.path().join("m.msh"), crate::mesh::write_gmsh(&mesh)).unwrap();
        let text = r#"
[mesh]
path = "m.msh"
sets = [
  { name = "bottom", lo = [0.0, 0.0, 0.0], hi = [1.0, 0.0, 0.0] },
  { name = "top", lo = [0.0, 1.0, 0.0], hi = [1.0, 1.0, 0.0] },
]

[material]
young = 210.0
poisson = 0.3
gc = 2.7
ell = 0.1

[program]
steps = 3
increment = 1e-4
bcs = [
  { set = "bottom", component = 0 },
  { set = "bottom", component = 1 },
  { set = "top", component = 1, factor = 1.0 },
]
reaction = { set = "top", direction = [0.0, 1.0] }
"#;
        let path = dir.path().join("c.toml");
        std::fs::write(&path, text).unwrap();
        let c = resolve(Some(&path), &[]).unwrap();
        let mesh = c.build_mesh().unwrap();
        assert_eq!(mesh.node_sets["top"].len(), 3);
        let sim = c.simulation(mesh).unwrap();
        assert_eq!(sim.backtrack.max_back, 50);
    }
}
