//! Edge-level connectivity for manifold triangle meshes.
//!
//! Edges are the primary element of every operator in this crate, so the
//! topology is stored edge-major: endpoints, incident faces, a fixed-width
//! table with the four edges sharing a face with each edge, and boundary
//! flags. Edge ids are canonical: walk the faces in file order, visit each
//! face's half edges as (v0→v1, v1→v2, v2→v0), and number edges by first
//! appearance. That makes ids — and everything derived from them —
//! reproducible from the input file alone.

use thiserror::Error;

use crate::mesh::Mesh;

/// Marks the absent second face of a boundary edge.
pub const NO_FACE: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("edge ({u}, {v}) is shared by more than two faces (face {face})")]
    NonManifoldEdge { u: u32, v: u32, face: usize },
    #[error("inconsistent winding: faces {first} and {second} traverse edge ({u}, {v}) in the same direction")]
    InconsistentWinding {
        u: u32,
        v: u32,
        first: usize,
        second: usize,
    },
    #[error("face {face} repeats a vertex index")]
    DegenerateFace { face: usize },
    #[error("topology invariant violated: {0}")]
    Invalid(String),
}

/// Per-edge connectivity of a manifold triangle mesh.
///
/// For an edge `e` whose first incident face is `f1` and second is `f2`,
/// `neighbors[e]` holds `[a, b, c, d]` where `a, b` are the other two edges
/// of `f1` in counter-clockwise traversal order starting from `e`, and
/// `c, d` are the same for `f2`. Boundary edges have `c = d = sentinel`,
/// where the sentinel id equals `edge_count()`; consumers keep a zero row at
/// that index so lookups stay branch-free.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeTopology {
    /// Endpoints in the orientation of first appearance.
    pub edges: Vec<[u32; 2]>,
    /// One or two incident faces; second slot is [`NO_FACE`] on the boundary.
    pub edge_faces: Vec<[u32; 2]>,
    /// The four face-sharing edges of each edge (see type docs).
    pub neighbors: Vec<[u32; 4]>,
    /// True for edges with a single incident face.
    pub boundary: Vec<bool>,
    /// Incident edge ids per vertex, ascending.
    pub vertex_ring: Vec<Vec<u32>>,
    /// Edge ids per face, aligned with the face's half edges.
    pub face_edges: Vec<[u32; 3]>,
}

impl EdgeTopology {
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// The reserved "no neighbour" id: one past the last edge.
    pub fn sentinel(&self) -> u32 {
        self.edges.len() as u32
    }

    pub fn is_boundary_vertex(&self, v: u32) -> bool {
        self.vertex_ring[v as usize]
            .iter()
            .any(|&e| self.boundary[e as usize])
    }

    pub fn boundary_edge_count(&self) -> usize {
        self.boundary.iter().filter(|&&b| b).count()
    }

    /// Vertices adjacent to `v` through an edge, ascending.
    pub fn one_ring(&self, v: u32) -> Vec<u32> {
        let mut ring: Vec<u32> = self.vertex_ring[v as usize]
            .iter()
            .map(|&e| {
                let [a, b] = self.edges[e as usize];
                if a == v {
                    b
                } else {
                    a
                }
            })
            .collect();
        ring.sort_unstable();
        ring.dedup();
        ring
    }

    /// Full structural self-check; used by tests and after pooling passes.
    pub fn validate(&self, mesh: &Mesh) -> Result<(), TopologyError> {
        let ne = self.edges.len();
        let err = |msg: String| Err(TopologyError::Invalid(msg));
        if self.edge_faces.len() != ne
            || self.neighbors.len() != ne
            || self.boundary.len() != ne
        {
            return err("edge array lengths disagree".into());
        }
        if self.face_edges.len() != mesh.faces.len() {
            return err("face_edges length != face count".into());
        }
        if self.vertex_ring.len() != mesh.positions.len() {
            return err("vertex_ring length != vertex count".into());
        }

        // Faces and their edge records agree.
        for (fi, (f, fe)) in mesh.faces.iter().zip(&self.face_edges).enumerate() {
            for k in 0..3 {
                let e = fe[k] as usize;
                if e >= ne {
                    return err(format!("face {fi} references edge {e} out of range"));
                }
                let want = sorted2(f[k], f[(k + 1) % 3]);
                if sorted2(self.edges[e][0], self.edges[e][1]) != want {
                    return err(format!("face {fi} half edge {k} mismatches edge {e}"));
                }
                if !self.edge_faces[e].contains(&(fi as u32)) {
                    return err(format!("edge {e} missing incident face {fi}"));
                }
            }
        }

        for e in 0..ne {
            let [f1, f2] = self.edge_faces[e];
            if f1 == NO_FACE {
                return err(format!("edge {e} has no incident face"));
            }
            if self.boundary[e] != (f2 == NO_FACE) {
                return err(format!("edge {e} boundary flag disagrees with faces"));
            }
            let nb = self.neighbors[e];
            if self.boundary[e] {
                if nb[2] != self.sentinel() || nb[3] != self.sentinel() {
                    return err(format!("boundary edge {e} must pad slots 2..4"));
                }
            } else {
                let mut distinct = [nb[0], nb[1], nb[2], nb[3]];
                distinct.sort_unstable();
                if distinct.windows(2).any(|w| w[0] == w[1]) {
                    return err(format!("interior edge {e} has repeated neighbours"));
                }
            }
            for (slot, &n) in nb.iter().enumerate() {
                let pad = self.boundary[e] && slot >= 2;
                if pad {
                    continue;
                }
                if n as usize >= ne {
                    return err(format!("edge {e} neighbour slot {slot} out of range"));
                }
                // Each real neighbour shares a face with e.
                let shares = self.edge_faces[n as usize]
                    .iter()
                    .any(|f| *f != NO_FACE && self.edge_faces[e].contains(f));
                if !shares {
                    return err(format!("edge {e} and neighbour {n} share no face"));
                }
            }
            // Winding: the two incident faces traverse e in opposite
            // directions.
            if !self.boundary[e] {
                let d1 = half_edge_direction(&mesh.faces[f1 as usize], self.edges[e]);
                let d2 = half_edge_direction(&mesh.faces[f2 as usize], self.edges[e]);
                match (d1, d2) {
                    (Some(a), Some(b)) if a != b => {}
                    _ => {
                        return err(format!("edge {e} winding inconsistent"));
                    }
                }
            }
        }

        // Vertex rings match edge endpoints exactly.
        let mut rings: Vec<Vec<u32>> = vec![Vec::new(); mesh.positions.len()];
        for (e, &[u, v]) in self.edges.iter().enumerate() {
            rings[u as usize].push(e as u32);
            rings[v as usize].push(e as u32);
        }
        for r in &mut rings {
            r.sort_unstable();
        }
        if rings != self.vertex_ring {
            return err("vertex_ring disagrees with edge endpoints".into());
        }
        Ok(())
    }
}

fn sorted2(a: u32, b: u32) -> [u32; 2] {
    if a <= b {
        [a, b]
    } else {
        [b, a]
    }
}

/// Returns `Some(true)` if the face traverses the edge u→v, `Some(false)`
/// for v→u, `None` if the face does not contain the edge.
fn half_edge_direction(face: &[u32; 3], edge: [u32; 2]) -> Option<bool> {
    for k in 0..3 {
        let (s, t) = (face[k], face[(k + 1) % 3]);
        if (s, t) == (edge[0], edge[1]) {
            return Some(true);
        }
        if (s, t) == (edge[1], edge[0]) {
            return Some(false);
        }
    }
    None
}

/// Builds the edge table for a manifold triangle mesh, rejecting meshes
/// where an edge is shared by three or more faces or where two faces
/// traverse a shared edge in the same direction (inconsistent winding).
pub fn build_edge_topology(mesh: &Mesh) -> Result<EdgeTopology, TopologyError> {
    let mut ids: std::collections::HashMap<[u32; 2], u32> = std::collections::HashMap::new();
    let mut edges: Vec<[u32; 2]> = Vec::new();
    let mut edge_faces: Vec<[u32; 2]> = Vec::new();
    // Direction of each face's traversal per edge, for the winding check.
    let mut first_dir: Vec<(bool, usize)> = Vec::new();
    let mut face_edges: Vec<[u32; 3]> = Vec::with_capacity(mesh.faces.len());

    for (fi, f) in mesh.faces.iter().enumerate() {
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            return Err(TopologyError::DegenerateFace { face: fi });
        }
        let mut fe = [0u32; 3];
        for k in 0..3 {
            let (u, v) = (f[k], f[(k + 1) % 3]);
            let key = sorted2(u, v);
            let forward = u == key[0];
            match ids.get(&key) {
                None => {
                    let id = edges.len() as u32;
                    ids.insert(key, id);
                    edges.push([u, v]);
                    edge_faces.push([fi as u32, NO_FACE]);
                    first_dir.push((forward, fi));
                    fe[k] = id;
                }
                Some(&id) => {
                    let faces = &mut edge_faces[id as usize];
                    if faces[1] != NO_FACE {
                        return Err(TopologyError::NonManifoldEdge {
                            u: key[0],
                            v: key[1],
                            face: fi,
                        });
                    }
                    let (dir0, f0) = first_dir[id as usize];
                    if dir0 == forward {
                        return Err(TopologyError::InconsistentWinding {
                            u: key[0],
                            v: key[1],
                            first: f0,
                            second: fi,
                        });
                    }
                    faces[1] = fi as u32;
                    fe[k] = id;
                }
            }
        }
        face_edges.push(fe);
    }

    let ne = edges.len();
    let sentinel = ne as u32;
    let mut neighbors = vec![[sentinel; 4]; ne];
    let boundary: Vec<bool> = edge_faces.iter().map(|ef| ef[1] == NO_FACE).collect();

    for (e, ef) in edge_faces.iter().enumerate() {
        for (side, &f) in ef.iter().enumerate() {
            if f == NO_FACE {
                continue;
            }
            let fe = face_edges[f as usize];
            let k = fe.iter().position(|&x| x == e as u32).unwrap();
            neighbors[e][side * 2] = fe[(k + 1) % 3];
            neighbors[e][side * 2 + 1] = fe[(k + 2) % 3];
        }
    }

    let mut vertex_ring: Vec<Vec<u32>> = vec![Vec::new(); mesh.positions.len()];
    for (e, &[u, v]) in edges.iter().enumerate() {
        vertex_ring[u as usize].push(e as u32);
        vertex_ring[v as usize].push(e as u32);
    }
    for r in &mut vertex_ring {
        r.sort_unstable();
    }

    Ok(EdgeTopology {
        edges,
        edge_faces,
        neighbors,
        boundary,
        vertex_ring,
        face_edges,
    })
}

/// V − E + F. Closed genus-0 surfaces give 2, a disk gives 1.
pub fn euler_characteristic(mesh: &Mesh, topo: &EdgeTopology) -> i64 {
    mesh.positions.len() as i64 - topo.edges.len() as i64 + mesh.faces.len() as i64
}
