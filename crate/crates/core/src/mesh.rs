//! Triangle mesh container and plain-text import/export.
//!
//! Only the ASCII OBJ subset needed by the pipeline is supported: `v x y z`
//! and triangular `f` records (`f i j k`, optionally `f i/t/n` — texture and
//! normal indices are ignored). Everything else in the file is skipped.
//! Labelled meshes are exported as ASCII PLY with one colour per face.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("non-triangular face at line {line}: {count} vertices")]
    NonTriangularFace { line: usize, count: usize },
    #[error("vertex index {index} out of range at line {line} ({count} vertices declared)")]
    IndexOutOfRange {
        line: usize,
        index: i64,
        count: usize,
    },
    #[error("face {face} repeats a vertex index")]
    RepeatedVertex { face: usize },
    #[error("faces {first} and {second} reference the same vertex triple")]
    DuplicateFace { first: usize, second: usize },
}

/// Indexed triangle mesh. Faces store counter-clockwise vertex loops as seen
/// from the outside; everything downstream relies on that orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub positions: Vec<[f64; 3]>,
    pub faces: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn new(positions: Vec<[f64; 3]>, faces: Vec<[u32; 3]>) -> Self {
        Mesh { positions, faces }
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Returns a copy with every vertex position mapped through `f`;
    /// connectivity is untouched.
    pub fn transformed(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> Mesh {
        Mesh {
            positions: self.positions.iter().map(|&p| f(p)).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Checks the structural invariants every consumer of a `Mesh` assumes:
    /// indices in range, three distinct corners per face, no repeated face.
    pub fn validate(&self) -> Result<(), MeshError> {
        let n = self.positions.len();
        let mut seen = std::collections::HashMap::new();
        for (fi, f) in self.faces.iter().enumerate() {
            for &v in f {
                if v as usize >= n {
                    return Err(MeshError::IndexOutOfRange {
                        line: 0,
                        index: v as i64,
                        count: n,
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(MeshError::RepeatedVertex { face: fi });
            }
            let mut key = *f;
            key.sort_unstable();
            if let Some(&first) = seen.get(&key) {
                return Err(MeshError::DuplicateFace { first, second: fi });
            }
            seen.insert(key, fi);
        }
        Ok(())
    }
}

/// Result of an OBJ import. Vertices referenced by no face are removed so
/// that vertex ids stay dense; the count is reported rather than silently
/// swallowed because it usually points at a broken export upstream.
#[derive(Debug, Clone)]
pub struct ObjLoad {
    pub mesh: Mesh,
    pub dropped_isolated_vertices: usize,
}

pub fn load_obj(path: &Path) -> Result<ObjLoad, MeshError> {
    let text = std::fs::read_to_string(path).map_err(|source| MeshError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_obj(&text)
}

pub fn parse_obj(text: &str) -> Result<ObjLoad, MeshError> {
    let mut positions: Vec<[f64; 3]> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let mut p = [0.0f64; 3];
                for slot in &mut p {
                    let tok = parts.next().ok_or_else(|| MeshError::Parse {
                        line: line_no,
                        msg: "vertex record needs 3 coordinates".into(),
                    })?;
                    *slot = tok.parse().map_err(|_| MeshError::Parse {
                        line: line_no,
                        msg: format!("bad coordinate {tok:?}"),
                    })?;
                }
                // Trailing tokens (w component, vertex colours) are ignored.
                positions.push(p);
            }
            Some("f") => {
                let idxs: Vec<&str> = parts.collect();
                if idxs.len() != 3 {
                    return Err(MeshError::NonTriangularFace {
                        line: line_no,
                        count: idxs.len(),
                    });
                }
                let mut f = [0u32; 3];
                for (slot, tok) in f.iter_mut().zip(&idxs) {
                    // `f i`, `f i/t`, `f i//n`, `f i/t/n` — the vertex index
                    // is always the first field.
                    let vtok = tok.split('/').next().unwrap_or("");
                    let v: i64 = vtok.parse().map_err(|_| MeshError::Parse {
                        line: line_no,
                        msg: format!("bad face index {tok:?}"),
                    })?;
                    if v < 1 || v as usize > positions.len() {
                        return Err(MeshError::IndexOutOfRange {
                            line: line_no,
                            index: v,
                            count: positions.len(),
                        });
                    }
                    *slot = (v - 1) as u32;
                }
                faces.push(f);
            }
            // Normals, texcoords, groups, materials, smoothing: skipped.
            _ => {}
        }
    }

    // Drop isolated vertices, keeping the relative order of the survivors so
    // downstream ids stay deterministic with respect to the file.
    let mut used = vec![false; positions.len()];
    for f in &faces {
        for &v in f {
            used[v as usize] = true;
        }
    }
    let dropped = used.iter().filter(|&&u| !u).count();
    if dropped > 0 {
        let mut remap = vec![u32::MAX; positions.len()];
        let mut kept = Vec::with_capacity(positions.len() - dropped);
        for (i, pos) in positions.iter().enumerate() {
            if used[i] {
                remap[i] = kept.len() as u32;
                kept.push(*pos);
            }
        }
        for f in &mut faces {
            for v in f.iter_mut() {
                *v = remap[*v as usize];
            }
        }
        positions = kept;
    }

    let mesh = Mesh::new(positions, faces);
    mesh.validate()?;
    Ok(ObjLoad {
        mesh,
        dropped_isolated_vertices: dropped,
    })
}

/// Serialises the mesh back to OBJ text. Coordinates use Rust's shortest
/// round-trip float formatting, so load → export → load is exact.
pub fn write_obj(mesh: &Mesh) -> String {
    let mut out = String::new();
    for p in &mesh.positions {
        let _ = writeln!(out, "v {} {} {}", p[0], p[1], p[2]);
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

/// Fixed colour palette used for label visualisation; label ids cycle
/// through it so any label count renders.
pub const LABEL_PALETTE: [[u8; 3]; 16] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 190],
    [0, 128, 128],
    [170, 110, 40],
    [128, 0, 0],
    [128, 128, 0],
    [0, 0, 128],
    [128, 128, 128],
];

pub fn label_color(label: u32) -> [u8; 3] {
    LABEL_PALETTE[(label as usize) % LABEL_PALETTE.len()]
}

/// Serialises the mesh as ASCII PLY with one colour per face. `face_labels`
/// must hold one label per face; use [`face_labels_from_edge_labels`] to go
/// from per-edge labels to per-face ones.
pub fn write_ply_colored(mesh: &Mesh, face_labels: &[u32]) -> String {
    assert_eq!(face_labels.len(), mesh.faces.len());
    let mut out = String::new();
    let _ = writeln!(out, "ply");
    let _ = writeln!(out, "format ascii 1.0");
    let _ = writeln!(out, "element vertex {}", mesh.positions.len());
    let _ = writeln!(out, "property float x");
    let _ = writeln!(out, "property float y");
    let _ = writeln!(out, "property float z");
    let _ = writeln!(out, "element face {}", mesh.faces.len());
    let _ = writeln!(out, "property list uchar int vertex_indices");
    let _ = writeln!(out, "property uchar red");
    let _ = writeln!(out, "property uchar green");
    let _ = writeln!(out, "property uchar blue");
    let _ = writeln!(out, "end_header");
    for p in &mesh.positions {
        let _ = writeln!(out, "{} {} {}", p[0], p[1], p[2]);
    }
    for (f, &label) in mesh.faces.iter().zip(face_labels) {
        let c = label_color(label);
        let _ = writeln!(
            out,
            "3 {} {} {} {} {} {}",
            f[0], f[1], f[2], c[0], c[1], c[2]
        );
    }
    out
}

/// Reduces per-edge labels to per-face ones by majority vote over the three
/// edges of each face; ties go to the numerically lowest label.
pub fn face_labels_from_edge_labels(
    face_edges: &[[u32; 3]],
    edge_labels: &[u32],
) -> Vec<u32> {
    face_edges
        .iter()
        .map(|es| {
            let mut ls = [
                edge_labels[es[0] as usize],
                edge_labels[es[1] as usize],
                edge_labels[es[2] as usize],
            ];
            ls.sort_unstable();
            // A label with 2+ votes occupies the middle slot after sorting;
            // three distinct labels tie, and the tie goes to the lowest.
            if ls[0] == ls[1] || ls[1] == ls[2] {
                ls[1]
            } else {
                ls[0]
            }
        })
        .collect()
}
