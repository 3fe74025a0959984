//! Hexahedral meshes: text format, structured box generator, named sets.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mesh {
    pub node_ids: Vec<u64>,
    pub coords: Vec<Vector3<f64>>,
    pub elem_ids: Vec<u64>,
    /// Node indices (not ids) of every hex8, standard corner ordering.
    pub elems: Vec<[usize; 8]>,
    /// Named node sets as node indices.
    pub node_sets: BTreeMap<String, Vec<usize>>,
    /// Named element sets as element indices.
    pub elem_sets: BTreeMap<String, Vec<usize>>,
}

impl Mesh {
    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn n_elems(&self) -> usize {
        self.elems.len()
    }

    pub fn node_set(&self, name: &str) -> Result<&[usize]> {
        self.node_sets
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Mesh(format!("unknown node set '{name}'")))
    }

    pub fn elem_index(&self, id: u64) -> Option<usize> {
        self.elem_ids.iter().position(|&e| e == id)
    }

    /// Corner coordinates of element `e`.
    pub fn elem_coords(&self, e: usize) -> [Vector3<f64>; 8] {
        self.elems[e].map(|n| self.coords[n])
    }

    /// Parses the text format:
    ///
    /// ```text
    /// node <id> <x> <y> <z>
    /// hex <id> <n1> ... <n8>
    /// nset <name> <node id>...
    /// eset <name> <elem id>...
    /// ```
    ///
    /// `#` starts a comment; set lines with the same name accumulate.
    pub fn parse(text: &str, path: &str) -> Result<Mesh> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_string(),
            line,
            msg,
        };
        let mut mesh = Mesh::default();
        let mut node_index: HashMap<u64, usize> = HashMap::new();
        let mut raw_elems: Vec<(usize, [u64; 8])> = Vec::new();
        let mut raw_nsets: Vec<(usize, String, Vec<u64>)> = Vec::new();
        let mut raw_esets: Vec<(usize, String, Vec<u64>)> = Vec::new();

        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut tok = line.split_whitespace();
            let kind = tok.next().unwrap_or("");
            let rest: Vec<&str> = tok.collect();
            let ids = |v: &[&str]| -> Result<Vec<u64>> {
                v.iter()
                    .map(|s| s.parse::<u64>().map_err(|_| err(lineno, format!("invalid id '{s}'"))))
                    .collect()
            };
            match kind {
                "node" => {
                    if rest.len() != 4 {
                        return Err(err(lineno, format!("node needs id and 3 coordinates, got {} fields", rest.len())));
                    }
                    let id = ids(&rest[..1])?[0];
                    let x: Vec<f64> = rest[1..]
                        .iter()
                        .map(|s| s.parse::<f64>().map_err(|_| err(lineno, format!("invalid coordinate '{s}'"))))
                        .collect::<Result<_>>()?;
                    if node_index.insert(id, mesh.coords.len()).is_some() {
                        return Err(err(lineno, format!("duplicate node id {id}")));
                    }
                    mesh.node_ids.push(id);
                    mesh.coords.push(Vector3::new(x[0], x[1], x[2]));
                }
                "hex" => {
                    if rest.len() != 9 {
                        return Err(err(lineno, format!("hex needs id and 8 nodes, got {} fields", rest.len())));
                    }
                    let v = ids(&rest)?;
                    if mesh.elem_ids.contains(&v[0]) {
                        return Err(err(lineno, format!("duplicate element id {}", v[0])));
                    }
                    mesh.elem_ids.push(v[0]);
                    raw_elems.push((lineno, std::array::from_fn(|k| v[k + 1])));
                }
                "nset" | "eset" => {
                    let Some((name, members)) = rest.split_first() else {
                        return Err(err(lineno, "set needs a name".into()));
                    };
                    let v = ids(members)?;
                    let target = if kind == "nset" { &mut raw_nsets } else { &mut raw_esets };
                    target.push((lineno, name.to_string(), v));
                }
                other => return Err(err(lineno, format!("unknown record '{other}'"))),
            }
        }

        for (lineno, nodes) in raw_elems {
            let mut idx = [0; 8];
            for (k, id) in nodes.iter().enumerate() {
                idx[k] = *node_index
                    .get(id)
                    .ok_or_else(|| err(lineno, format!("element refers to unknown node {id}")))?;
            }
            mesh.elems.push(idx);
        }
        for (lineno, name, members) in raw_nsets {
            let set = mesh.node_sets.entry(name).or_default();
            for id in members {
                set.push(*node_index.get(&id).ok_or_else(|| err(lineno, format!("unknown node {id}")))?);
            }
        }
        for (lineno, name, members) in raw_esets {
            let mut idx = Vec::with_capacity(members.len());
            for id in members {
                idx.push(
                    mesh.elem_ids
                        .iter()
                        .position(|&e| e == id)
                        .ok_or_else(|| err(lineno, format!("unknown element {id}")))?,
                );
            }
            mesh.elem_sets.entry(name).or_default().extend(idx);
        }
        if mesh.elems.is_empty() {
            return Err(Error::Mesh(format!("{path}: mesh has no elements")));
        }
        Ok(mesh)
    }

    pub fn load(path: &Path) -> Result<Mesh> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (id, x) in self.node_ids.iter().zip(&self.coords) {
            let _ = writeln!(s, "node {id} {:?} {:?} {:?}", x.x, x.y, x.z);
        }
        for (id, e) in self.elem_ids.iter().zip(&self.elems) {
            let _ = write!(s, "hex {id}");
            for n in e {
                let _ = write!(s, " {}", self.node_ids[*n]);
            }
            s.push('\n');
        }
        for (name, set) in &self.node_sets {
            let _ = write!(s, "nset {name}");
            for n in set {
                let _ = write!(s, " {}", self.node_ids[*n]);
            }
            s.push('\n');
        }
        for (name, set) in &self.elem_sets {
            let _ = write!(s, "eset {name}");
            for e in set {
                let _ = write!(s, " {}", self.elem_ids[*e]);
            }
            s.push('\n');
        }
        s
    }

    /// Regular `nx × ny × nz` grid over `[0, lx] × [0, ly] × [0, lz]` with
    /// node sets `xmin, xmax, ymin, ymax, zmin, zmax, all` and element set `all`.
    pub fn structured_box(n: [usize; 3], l: [f64; 3]) -> Result<Mesh> {
        if n.contains(&0) || l.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::Mesh("box needs positive divisions and lengths".into()));
        }
        let [nx, ny, nz] = n;
        let id = |i: usize, j: usize, k: usize| (k * (ny + 1) + j) * (nx + 1) + i;
        let mut mesh = Mesh::default();
        for k in 0..=nz {
            for j in 0..=ny {
                for i in 0..=nx {
                    mesh.node_ids.push(id(i, j, k) as u64 + 1);
                    mesh.coords.push(Vector3::new(
                        l[0] * i as f64 / nx as f64,
                        l[1] * j as f64 / ny as f64,
                        l[2] * k as f64 / nz as f64,
                    ));
                }
            }
        }
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    mesh.elem_ids.push(mesh.elems.len() as u64 + 1);
                    mesh.elems.push([
                        id(i, j, k),
                        id(i + 1, j, k),
                        id(i + 1, j + 1, k),
                        id(i, j + 1, k),
                        id(i, j, k + 1),
                        id(i + 1, j, k + 1),
                        id(i + 1, j + 1, k + 1),
                        id(i, j + 1, k + 1),
                    ]);
                }
            }
        }
        let face = |axis: usize, at_max: bool| -> Vec<usize> {
            (0..mesh.coords.len())
                .filter(|&p| {
                    let target = if at_max { l[axis] } else { 0.0 };
                    (mesh.coords[p][axis] - target).abs() <= 1e-12 * l[axis]
                })
                .collect()
        };
        let sets = [
            ("xmin", face(0, false)),
            ("xmax", face(0, true)),
            ("ymin", face(1, false)),
            ("ymax", face(1, true)),
            ("zmin", face(2, false)),
            ("zmax", face(2, true)),
        ];
        for (name, set) in sets {
            mesh.node_sets.insert(name.into(), set);
        }
        mesh.node_sets.insert("all".into(), (0..mesh.coords.len()).collect());
        mesh.elem_sets.insert("all".into(), (0..mesh.elems.len()).collect());
        Ok(mesh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_round_trips_through_text() {
        let m = Mesh::structured_box([2, 1, 3], [2.0, 1.0, 1.5]).unwrap();
        assert_eq!(m.n_nodes(), 3 * 2 * 4);
        assert_eq!(m.n_elems(), 6);
        assert_eq!(m.node_set("xmin").unwrap().len(), 8);
        let back = Mesh::parse(&m.to_text(), "box").unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let text = "node 1 0 0 0\nnode 2 1 0\n";
        match Mesh::parse(text, "m.txt") {
            Err(Error::Parse { line, path, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(path, "m.txt");
            }
            other => panic!("unexpected {other:?}"),
        }
        let text = "node 1 0 0 0\nhex 1 1 2 3 4 5 6 7 8\n";
        assert!(matches!(Mesh::parse(text, "m"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(Mesh::parse("quad 1 2\n", "m"), Err(Error::Parse { line: 1, .. })));
    }
}
