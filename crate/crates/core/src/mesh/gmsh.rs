//! Gmsh ASCII 2.2 reader and writer.

use super::{Mesh, MeshError};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

struct Lines<'a> {
    it: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Option<&'a str> {
        for (i, l) in self.it.by_ref() {
            let t = l.trim();
            if !t.is_empty() {
                self.line = i + 1;
                return Some(t);
            }
        }
        None
    }

    fn need(&mut self) -> Result<&'a str, MeshError> {
        let line = self.line;
        self.next().ok_or(MeshError::Malformed { line, msg: "unexpected end of file".into() })
    }

    fn err(&self, msg: impl Into<String>) -> MeshError {
        MeshError::Malformed { line: self.line, msg: msg.into() }
    }
}

fn num<T: std::str::FromStr>(l: &Lines, s: &str) -> Result<T, MeshError> {
    s.parse::<T>().map_err(|_| l.err(format!("cannot parse `{s}`")))
}

/// Parse Gmsh 2.2 ASCII text. Triangles (type 2) and tetrahedra (type 4) form
/// the domain; lower-dimensional physical entities become node and side sets.
pub fn parse_gmsh(text: &str) -> Result<Mesh, MeshError> {
    let mut l = Lines { it: text.lines().enumerate(), line: 0 };
    let mut names: HashMap<(usize, i64), String> = HashMap::new();
    let mut node_ids: HashMap<i64, usize> = HashMap::new();
    let mut coords: Vec<[f64; 3]> = Vec::new();
    // (type, physical tag, node ids)
    let mut raw: Vec<(u32, i64, Vec<i64>)> = Vec::new();
    let mut saw_format = false;
    let mut saw_nodes = false;

    while let Some(tok) = l.next() {
        match tok {
            "$MeshFormat" => {
                let f = l.need()?;
                let parts: Vec<&str> = f.split_whitespace().collect();
                if parts.len() < 2 {
                    return Err(l.err("bad $MeshFormat line"));
                }
                if !parts[0].starts_with('2') {
                    return Err(MeshError::Unsupported(format!("version {}", parts[0])));
                }
                if parts[1] != "0" {
                    return Err(MeshError::Unsupported("binary file".into()));
                }
                saw_format = true;
                expect_end(&mut l, "$EndMeshFormat")?;
            }
            "$PhysicalNames" => {
                let t = l.need()?;
                let n: usize = num(&l, t)?;
                for _ in 0..n {
                    let s = l.need()?;
                    let mut p = s.splitn(3, char::is_whitespace);
                    let d: usize = num(&l, p.next().unwrap_or(""))?;
                    let t: i64 = num(&l, p.next().unwrap_or("").trim())?;
                    let name = p.next().unwrap_or("").trim().trim_matches('"').to_string();
                    names.insert((d, t), name);
                }
                expect_end(&mut l, "$EndPhysicalNames")?;
            }
            "$Nodes" => {
                let t = l.need()?;
                let n: usize = num(&l, t)?;
                coords.reserve(n);
                for _ in 0..n {
                    let s = l.need()?;
                    let p: Vec<&str> = s.split_whitespace().collect();
                    if p.len() < 4 {
                        return Err(l.err("node line needs id x y z"));
                    }
                    let id: i64 = num(&l, p[0])?;
                    let x = [num(&l, p[1])?, num(&l, p[2])?, num(&l, p[3])?];
                    if node_ids.insert(id, coords.len()).is_some() {
                        return Err(l.err(format!("duplicate node id {id}")));
                    }
                    coords.push(x);
                }
                saw_nodes = true;
                expect_end(&mut l, "$EndNodes")?;
            }
            "$Elements" => {
                let t = l.need()?;
                let n: usize = num(&l, t)?;
                for _ in 0..n {
                    let s = l.need()?;
                    let p: Vec<i64> =
                        s.split_whitespace().map(|t| num(&l, t)).collect::<Result<_, _>>()?;
                    if p.len() < 3 {
                        return Err(l.err("short element line"));
                    }
                    let ty = p[1] as u32;
                    let ntags = p[2] as usize;
                    if p.len() < 3 + ntags {
                        return Err(l.err("element tags truncated"));
                    }
                    let phys = if ntags > 0 { p[3] } else { 0 };
                    raw.push((ty, phys, p[3 + ntags..].to_vec()));
                }
                expect_end(&mut l, "$EndElements")?;
            }
            s if s.starts_with('$') && !s.starts_with("$End") => {
                let end = format!("$End{}", &s[1..]);
                while let Some(t) = l.next() {
                    if t == end {
                        break;
                    }
                }
            }
            _ => return Err(l.err(format!("unexpected `{tok}`"))),
        }
    }
    if !saw_format {
        return Err(MeshError::Unsupported("missing $MeshFormat".into()));
    }
    if !saw_nodes {
        return Err(MeshError::Malformed { line: l.line, msg: "missing $Nodes".into() });
    }

    let dim = if raw.iter().any(|r| r.0 == 4) {
        3
    } else if raw.iter().any(|r| r.0 == 2) {
        2
    } else {
        return Err(MeshError::MixedDimension);
    };
    let cell_type = if dim == 3 { 4 } else { 2 };
    let facet_type = if dim == 3 { 2 } else { 1 };

    let map = |ids: &[i64], e: usize| -> Result<Vec<usize>, MeshError> {
        ids.iter().map(|i| node_ids.get(i).copied().ok_or(MeshError::UnknownNode(e))).collect()
    };
    let mut elements = Vec::new();
    let mut node_sets: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    let mut side_sets: BTreeMap<String, Vec<Vec<usize>>> = BTreeMap::new();
    for (ty, phys, ids) in &raw {
        if *ty == cell_type {
            if ids.len() != dim + 1 {
                return Err(MeshError::Malformed { line: 0, msg: "wrong node count".into() });
            }
            let v = map(ids, elements.len())?;
            let mut c = [0usize; 4];
            c[..=dim].copy_from_slice(&v);
            elements.push(c);
        } else if (*ty == facet_type || *ty == 15) && *phys != 0 {
            let pd = if *ty == 15 { 0 } else { dim - 1 };
            let name = names.get(&(pd, *phys)).cloned().unwrap_or_else(|| phys.to_string());
            let v = map(ids, elements.len())?;
            node_sets.entry(name.clone()).or_default().extend(v.iter().copied());
            if *ty == facet_type {
                side_sets.entry(name).or_default().push(v);
            }
        }
    }
    if dim == 2 {
        for x in coords.iter_mut() {
            x[2] = 0.0;
        }
    }
    let mut mesh = Mesh::new(dim, coords, elements)?;
    mesh.node_sets = node_sets;
    mesh.side_sets = side_sets;
    Ok(mesh)
}

fn expect_end(l: &mut Lines, end: &str) -> Result<(), MeshError> {
    let t = l.need()?;
    if t == end {
        Ok(())
    } else {
        Err(l.err(format!("expected {end}")))
    }
}

pub fn read_gmsh(path: &Path) -> Result<Mesh, MeshError> {
    let text = std::fs::read_to_string(path)?;
    parse_gmsh(&text)
}

/// Serialize to Gmsh 2.2 ASCII. Side sets are written as facets and any node
/// set members not covered by a facet as point elements, so a parse of the
/// output restores the same sets.
pub fn write_gmsh(mesh: &Mesh) -> String {
    let dim = mesh.dim();
    let mut s = String::new();
    s.push_str("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n");
    let names: Vec<&String> = mesh.node_sets.keys().chain(mesh.side_sets.keys()).collect::<BTreeSet<_>>().into_iter().collect();
    let mut phys = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let tag = i + 1;
        if mesh.side_sets.contains_key(*name) {
            phys.push((dim - 1, tag, (*name).clone()));
        }
        phys.push((0, tag, (*name).clone()));
    }
    let _ = writeln!(s, "$PhysicalNames\n{}", phys.len());
    for (d, t, n) in &phys {
        let _ = writeln!(s, "{d} {t} \"{n}\"");
    }
    s.push_str("$EndPhysicalNames\n");
    let _ = writeln!(s, "$Nodes\n{}", mesh.num_nodes());
    for (i, x) in mesh.all_coords().iter().enumerate() {
        let _ = writeln!(s, "{} {} {} {}", i + 1, x[0], x[1], x[2]);
    }
    s.push_str("$EndNodes\n");

    let mut lines = Vec::new();
    let cell_type = if dim == 3 { 4 } else { 2 };
    let facet_type = if dim == 3 { 2 } else { 1 };
    for e in 0..mesh.num_elements() {
        let nodes: Vec<String> = mesh.element(e).iter().map(|n| (n + 1).to_string()).collect();
        lines.push(format!("{cell_type} 2 0 0 {}", nodes.join(" ")));
    }
    for (i, name) in names.iter().enumerate() {
        let tag = i + 1;
        let mut covered = BTreeSet::new();
        if let Some(fs) = mesh.side_sets.get(*name) {
            for f in fs {
                covered.extend(f.iter().copied());
                let nodes: Vec<String> = f.iter().map(|n| (n + 1).to_string()).collect();
                lines.push(format!("{facet_type} 2 {tag} {tag} {}", nodes.join(" ")));
            }
        }
        if let Some(ns) = mesh.node_sets.get(*name) {
            for n in ns.difference(&covered) {
                lines.push(format!("15 2 {tag} {tag} {}", n + 1));
            }
        }
    }
    let _ = writeln!(s, "$Elements\n{}", lines.len());
    for (i, l) in lines.iter().enumerate() {
        let _ = writeln!(s, "{} {l}", i + 1);
    }
    s.push_str("$EndElements\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQUARE: &str = "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$PhysicalNames\n2\n1 1 \"bottom\"\n1 2 \"top\"\n$EndPhysicalNames\n$Nodes\n4\n1 0 0 0\n2 1 0 0\n3 1 1 0\n4 0 1 0\n$EndNodes\n$Elements\n4\n1 1 2 1 1 1 2\n2 1 2 2 2 3 4\n3 2 2 0 1 1 2 3\n4 2 2 0 1 1 4 3\n$EndElements\n";

    #[test]
    fn parses_square_with_sets() {
        let m = parse_gmsh(SQUARE).unwrap();
        assert_eq!(m.dim(), 2);
        assert_eq!(m.num_nodes(), 4);
        assert_eq!(m.num_elements(), 2);
        assert!((0..2).all(|e| m.signed_measure(e) > 0.0));
        let top = &m.node_sets["top"];
        assert!(top.iter().all(|&n| m.coords(n)[1] == 1.0));
        let bot = &m.node_sets["bottom"];
        assert!(bot.iter().all(|&n| m.coords(n)[1] == 0.0));
    }

    #[test]
    fn rejects_binary() {
        let t = "$MeshFormat\n2.2 1 8\n$EndMeshFormat\n";
        assert!(matches!(parse_gmsh(t), Err(MeshError::Unsupported(_))));
    }

    #[test]
    fn rejects_truncated() {
        let t = &SQUARE[..SQUARE.len() - 40];
        assert!(parse_gmsh(t).is_err());
    }

    #[test]
    fn round_trip_is_exact() {
        let m = parse_gmsh(SQUARE).unwrap();
        let m2 = parse_gmsh(&write_gmsh(&m)).unwrap();
        assert_eq!(m, m2);
    }
}
