//! Resolution reduction by scored edge collapse.
//!
//! Edges are collapsed lowest score first until the requested edge count is
//! reached. One collapse removes the centre edge `e = (u, v)`, its two side
//! faces, and one edge of each side face (the collapse merges each side
//! face's remaining pair into a single edge), so every collapse removes
//! exactly three edges, two faces and one vertex. The kept vertex is `u`
//! (the first stored endpoint) and moves to the segment midpoint.
//!
//! Ids stay fixed while collapsing — elements are only marked dead — and a
//! final compaction renumbers survivors in ascending id order. The whole
//! run is summarised in a [`PoolHistory`]: the input snapshot, the ordered
//! collapse records, and a [`RowMergePlan`] that lets the tape pool and
//! unpool feature rows exactly the way the topology was pooled.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::rc::Rc;

use thiserror::Error;

use crate::autodiff::{RowMergePlan, Scalar};
use crate::mesh::Mesh;
use crate::topology::{EdgeTopology, NO_FACE};
use crate::vec3;

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("{got} scores supplied for {want} edges")]
    ScoreLength { got: usize, want: usize },
    #[error("cannot pool below {achieved} edges (target {target}): no valid collapse remains")]
    TargetUnreachable { target: usize, achieved: usize },
    #[error("pooling invariant violated: {0}")]
    Internal(String),
}

/// One executed collapse, all ids in the pre-pool id space.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapseRecord {
    /// The collapsed centre edge.
    pub edge: u32,
    /// Surviving edge of each side face; absorbs the matching `absorbed`
    /// entry and a third of the centre edge.
    pub survivors: [u32; 2],
    /// The edge of each side face that merged into its survivor.
    pub absorbed: [u32; 2],
    pub kept_vertex: u32,
    pub removed_vertex: u32,
}

/// Everything needed to undo or re-run one pooling pass.
#[derive(Debug, Clone)]
pub struct PoolHistory {
    /// The mesh as it entered the pass.
    pub source_mesh: Mesh,
    pub source_topology: EdgeTopology,
    /// Collapses in execution order.
    pub records: Vec<CollapseRecord>,
    /// Row arithmetic mirror of `records`, consumed by the tape ops.
    pub plan: Rc<RowMergePlan>,
    /// Pre-pool edge id → compacted id, `None` for collapsed edges.
    pub edge_map: Vec<Option<u32>>,
    /// Pre-pool vertex id → compacted id.
    pub vertex_map: Vec<Option<u32>>,
    /// Pre-pool face id → compacted id.
    pub face_map: Vec<Option<u32>>,
    /// Per pre-pool edge, the compacted edges its features merged into
    /// (one for plain survivors and absorbed edges, more for centre edges
    /// whose merge groups were themselves merged later).
    pub parents: Vec<Vec<u32>>,
}

/// A pooled mesh with its topology and the history that produced it.
#[derive(Debug, Clone)]
pub struct PoolResult {
    pub mesh: Mesh,
    pub topology: EdgeTopology,
    pub history: PoolHistory,
}

/// Per-edge priority from a feature matrix: the L2 norm of each row.
/// Smaller norms collapse first.
pub fn feature_norm_scores<S: Scalar>(features: &ndarray::Array2<S>) -> Vec<f64> {
    features
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.to_f64() * v.to_f64()).sum::<f64>().sqrt())
        .collect()
}

/// Uniform random priorities, for the ablation where collapse order
/// ignores the learned features.
pub fn random_scores(edge_count: usize, rng: &mut impl rand::Rng) -> Vec<f64> {
    (0..edge_count).map(|_| rng.gen::<f64>()).collect()
}

/// Edges that could legally collapse right now. Diagnostic view of the
/// same rule the pooling loop applies.
pub fn valid_collapse_edges(mesh: &Mesh, topo: &EdgeTopology) -> Vec<u32> {
    let st = PoolState::new(mesh, topo);
    (0..topo.edge_count() as u32)
        .filter(|&e| st.is_valid_collapse(e))
        .collect()
}

/// Collapses lowest-score edges until at most `target_edges` remain.
///
/// Each collapse removes three edges, so the result lands in
/// `[target_edges - 2, target_edges]`. Fails without touching anything if
/// `scores` is the wrong length; fails with the achieved count if the
/// queue runs out of valid collapses first.
pub fn mesh_pool(
    mesh: &Mesh,
    topo: &EdgeTopology,
    scores: &[f64],
    target_edges: usize,
) -> Result<PoolResult, PoolError> {
    if scores.len() != topo.edge_count() {
        return Err(PoolError::ScoreLength {
            got: scores.len(),
            want: topo.edge_count(),
        });
    }
    let mut st = PoolState::new(mesh, topo);
    st.scores = scores.to_vec();
    let mut heap: BinaryHeap<QueueEntry> = BinaryHeap::new();
    for e in 0..st.edges.len() as u32 {
        if !st.edge_boundary(e) {
            heap.push(QueueEntry {
                score: st.scores[e as usize],
                edge: e,
                version: 0,
            });
        }
    }
    let mut records: Vec<CollapseRecord> = Vec::new();
    while st.alive_edge_count > target_edges {
        let Some(entry) = heap.pop() else {
            return Err(PoolError::TargetUnreachable {
                target: target_edges,
                achieved: st.alive_edge_count,
            });
        };
        let e = entry.edge;
        if !st.edge_alive[e as usize] || entry.version != st.version[e as usize] {
            continue;
        }
        if !st.is_valid_collapse(e) {
            // Dropped for now; a later collapse that reshapes this edge's
            // surroundings re-enqueues it.
            continue;
        }
        let record = st.collapse(e, &mut heap);
        records.push(record);
    }
    st.finish(mesh, topo, records)
}

impl PoolHistory {
    /// Re-applies the recorded collapses on the stored snapshot. Produces
    /// the identical pooled mesh, topology and plan; used to verify that a
    /// history is a faithful description of the pass that created it.
    pub fn replay(&self) -> Result<PoolResult, PoolError> {
        let mut st = PoolState::new(&self.source_mesh, &self.source_topology);
        let mut heap = BinaryHeap::new(); // collapse() pushes; replay ignores
        let mut records = Vec::with_capacity(self.records.len());
        for rec in &self.records {
            if !st.is_valid_collapse(rec.edge) {
                return Err(PoolError::Internal(format!(
                    "recorded collapse of edge {} is not valid on replay",
                    rec.edge
                )));
            }
            records.push(st.collapse(rec.edge, &mut heap));
        }
        st.finish(&self.source_mesh, &self.source_topology, records)
    }
}

/// Min-heap entry; stale versions are discarded at pop time.
#[derive(Debug, PartialEq)]
struct QueueEntry {
    score: f64,
    edge: u32,
    version: u32,
}

impl Eq for QueueEntry {}

impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap: invert the score so the smallest score
        // pops first, then prefer the lower edge id on ties.
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| other.edge.cmp(&self.edge))
    }
}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Mutable mid-pass topology. Mirrors [`EdgeTopology`] plus liveness flags;
/// `vertex_edges` lists may retain dead ids, readers filter by liveness.
struct PoolState {
    positions: Vec<[f64; 3]>,
    edges: Vec<[u32; 2]>,
    edge_faces: Vec<[u32; 2]>,
    neighbors: Vec<[u32; 4]>,
    face_vertices: Vec<[u32; 3]>,
    face_edges: Vec<[u32; 3]>,
    vertex_edges: Vec<Vec<u32>>,
    edge_alive: Vec<bool>,
    face_alive: Vec<bool>,
    vertex_alive: Vec<bool>,
    vertex_boundary: Vec<bool>,
    scores: Vec<f64>,
    version: Vec<u32>,
    alive_edge_count: usize,
    steps: Vec<[u32; 5]>,
    sentinel: u32,
}

impl PoolState {
    fn new(mesh: &Mesh, topo: &EdgeTopology) -> Self {
        let nv = mesh.positions.len();
        let vertex_boundary = (0..nv as u32)
            .map(|v| topo.is_boundary_vertex(v))
            .collect();
        PoolState {
            positions: mesh.positions.clone(),
            edges: topo.edges.clone(),
            edge_faces: topo.edge_faces.clone(),
            neighbors: topo.neighbors.clone(),
            face_vertices: mesh.faces.clone(),
            face_edges: topo.face_edges.clone(),
            vertex_edges: topo.vertex_ring.clone(),
            edge_alive: vec![true; topo.edge_count()],
            face_alive: vec![true; mesh.faces.len()],
            vertex_alive: vec![true; nv],
            vertex_boundary,
            scores: vec![0.0; topo.edge_count()],
            version: vec![0; topo.edge_count()],
            alive_edge_count: topo.edge_count(),
            steps: Vec::new(),
            sentinel: topo.sentinel(),
        }
    }

    fn edge_boundary(&self, e: u32) -> bool {
        self.edge_faces[e as usize][1] == NO_FACE
    }

    fn other_face(&self, e: u32, not: u32) -> u32 {
        let [f1, f2] = self.edge_faces[e as usize];
        if f1 == not {
            f2
        } else {
            f1
        }
    }

    fn alive_incident_edges(&self, v: u32) -> impl Iterator<Item = u32> + '_ {
        self.vertex_edges[v as usize]
            .iter()
            .copied()
            .filter(|&e| self.edge_alive[e as usize])
    }

    fn ring(&self, v: u32) -> Vec<u32> {
        let mut out: Vec<u32> = self
            .alive_incident_edges(v)
            .map(|e| {
                let [a, b] = self.edges[e as usize];
                if a == v {
                    b
                } else {
                    a
                }
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// The collapse legality rule.
    ///
    /// An edge may collapse when (i) it is interior and at least one
    /// endpoint is interior, (ii) its endpoints share exactly their two
    /// side-face apexes (three or more shared ring vertices would weld the
    /// surface to itself), and (iii) simulating the collapse locally yields
    /// no degenerate face, no duplicated face, and leaves no edge faceless.
    fn is_valid_collapse(&self, e: u32) -> bool {
        if !self.edge_alive[e as usize] || self.edge_boundary(e) {
            return false;
        }
        let [u, v] = self.edges[e as usize];
        if self.vertex_boundary[u as usize] && self.vertex_boundary[v as usize] {
            return false;
        }
        let [f1, f2] = self.edge_faces[e as usize];
        let [a, b, c, d] = self.neighbors[e as usize];
        let mut ids = [e, a, b, c, d];
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return false;
        }

        // (ii) shared one-ring beyond the endpoints themselves.
        let ring_u = self.ring(u);
        let ring_v = self.ring(v);
        let shared = ring_u
            .iter()
            .filter(|x| ring_v.binary_search(x).is_ok() && **x != u && **x != v)
            .count();
        if shared >= 3 {
            return false;
        }

        // (iii.a) each surviving edge must keep at least one face.
        if self.other_face(a, f1) == NO_FACE && self.other_face(b, f1) == NO_FACE {
            return false;
        }
        if self.other_face(c, f2) == NO_FACE && self.other_face(d, f2) == NO_FACE {
            return false;
        }

        // (iii.b) simulate the surviving faces around the merged vertex:
        // reject a repeated vertex inside a face and two distinct faces
        // ending up on the same vertex triple (a two-face "pillow", which
        // is how a tetrahedron resists its last collapses). The same face
        // can be reached through several incident edges, so dedup by id.
        let mut seen: Vec<(u32, [u32; 3])> = Vec::new();
        for w in [u, v] {
            for x in self.alive_incident_edges(w) {
                for &f in &self.edge_faces[x as usize] {
                    if f == NO_FACE || f == f1 || f == f2 || !self.face_alive[f as usize] {
                        continue;
                    }
                    if seen.iter().any(|(fi, _)| *fi == f) {
                        continue;
                    }
                    let mut fv = self.face_vertices[f as usize];
                    for p in fv.iter_mut() {
                        if *p == v {
                            *p = u;
                        }
                    }
                    if fv[0] == fv[1] || fv[1] == fv[2] || fv[0] == fv[2] {
                        return false;
                    }
                    fv.sort_unstable();
                    if seen.iter().any(|(_, other)| *other == fv) {
                        return false;
                    }
                    seen.push((f, fv));
                }
            }
        }
        true
    }

    /// Executes one collapse. The edge must be valid. Returns the record
    /// and pushes refreshed queue entries for every edge whose
    /// surroundings changed.
    fn collapse(&mut self, e: u32, heap: &mut BinaryHeap<QueueEntry>) -> CollapseRecord {
        let [u, v] = self.edges[e as usize];
        let [f1, f2] = self.edge_faces[e as usize];
        let [a, b, c, d] = self.neighbors[e as usize];
        let fb2 = self.other_face(b, f1);
        let fd2 = self.other_face(d, f2);

        // Scores: each merge group keeps its minimum so a weak merged edge
        // stays early in the queue.
        let se = self.scores[e as usize];
        self.scores[a as usize] = self.scores[a as usize]
            .min(self.scores[b as usize])
            .min(se);
        self.scores[c as usize] = self.scores[c as usize]
            .min(self.scores[d as usize])
            .min(se);
        self.steps.push([a, b, c, d, e]);

        // Geometry: the kept endpoint moves to the midpoint.
        self.positions[u as usize] =
            vec3::midpoint(self.positions[u as usize], self.positions[v as usize]);

        // Kill the centre edge, the two absorbed edges and the side faces.
        for x in [e, b, d] {
            self.edge_alive[x as usize] = false;
        }
        self.alive_edge_count -= 3;
        self.face_alive[f1 as usize] = false;
        self.face_alive[f2 as usize] = false;
        self.vertex_alive[v as usize] = false;

        // Rewire every surviving element that referenced the dead ones.
        // Faces keep their vertex order, so winding stays consistent.
        for x in self.vertex_edges[v as usize].clone() {
            if !self.edge_alive[x as usize] {
                continue;
            }
            let ends = &mut self.edges[x as usize];
            if ends[0] == v {
                ends[0] = u;
            }
            if ends[1] == v {
                ends[1] = u;
            }
            for &f in &self.edge_faces[x as usize] {
                if f != NO_FACE && self.face_alive[f as usize] {
                    for p in self.face_vertices[f as usize].iter_mut() {
                        if *p == v {
                            *p = u;
                        }
                    }
                }
            }
            self.vertex_edges[u as usize].push(x);
        }
        self.vertex_edges[v as usize].clear();

        // The absorbed edges' far faces adopt the survivors.
        if fb2 != NO_FACE {
            for slot in self.face_edges[fb2 as usize].iter_mut() {
                if *slot == b {
                    *slot = a;
                }
            }
        }
        if fd2 != NO_FACE {
            for slot in self.face_edges[fd2 as usize].iter_mut() {
                if *slot == d {
                    *slot = c;
                }
            }
        }
        self.replace_face(a, f1, fb2);
        self.replace_face(c, f2, fd2);

        // Neighbour rows are derived from face edge lists; recompute every
        // row those lists can influence.
        let mut dirty: Vec<u32> = vec![a, c];
        for f in [fb2, fd2] {
            if f != NO_FACE {
                dirty.extend(self.face_edges[f as usize]);
            }
        }
        dirty.sort_unstable();
        dirty.dedup();
        for &x in &dirty {
            self.recompute_neighbors(x);
        }

        // Boundary status can only change where edges were absorbed.
        for w in [u, self.far_vertex(a, u), self.far_vertex(c, u)] {
            let on_boundary = self
                .alive_incident_edges(w)
                .any(|x| self.edge_faces[x as usize][1] == NO_FACE);
            self.vertex_boundary[w as usize] = on_boundary;
        }

        // Refresh the queue over the region whose validity may have
        // flipped: every edge touching the merged vertex or its ring.
        let mut region: Vec<u32> = Vec::new();
        let mut ring_and_u = self.ring(u);
        ring_and_u.push(u);
        for w in ring_and_u {
            region.extend(self.alive_incident_edges(w));
        }
        region.sort_unstable();
        region.dedup();
        for x in region {
            if self.edge_boundary(x) {
                continue;
            }
            self.version[x as usize] += 1;
            heap.push(QueueEntry {
                score: self.scores[x as usize],
                edge: x,
                version: self.version[x as usize],
            });
        }

        CollapseRecord {
            edge: e,
            survivors: [a, c],
            absorbed: [b, d],
            kept_vertex: u,
            removed_vertex: v,
        }
    }

    fn far_vertex(&self, e: u32, not: u32) -> u32 {
        let [x, y] = self.edges[e as usize];
        if x == not {
            y
        } else {
            x
        }
    }

    /// Replaces `from` with `to` in an edge's face pair, keeping the real
    /// face in the first slot so the boundary convention holds.
    fn replace_face(&mut self, e: u32, from: u32, to: u32) {
        let ef = &mut self.edge_faces[e as usize];
        for slot in ef.iter_mut() {
            if *slot == from {
                *slot = to;
            }
        }
        if ef[0] == NO_FACE {
            ef.swap(0, 1);
        }
    }

    fn recompute_neighbors(&mut self, e: u32) {
        if !self.edge_alive[e as usize] {
            return;
        }
        let mut row = [self.sentinel; 4];
        for (side, &f) in self.edge_faces[e as usize].iter().enumerate() {
            if f == NO_FACE {
                continue;
            }
            let fe = self.face_edges[f as usize];
            let k = fe
                .iter()
                .position(|&x| x == e)
                .expect("edge missing from its own face");
            row[side * 2] = fe[(k + 1) % 3];
            row[side * 2 + 1] = fe[(k + 2) % 3];
        }
        self.neighbors[e as usize] = row;
    }

    /// Compacts survivors into dense ids and assembles the outputs.
    fn finish(
        self,
        source_mesh: &Mesh,
        source_topo: &EdgeTopology,
        records: Vec<CollapseRecord>,
    ) -> Result<PoolResult, PoolError> {
        let vertex_map = compaction_map(&self.vertex_alive);
        let edge_map = compaction_map(&self.edge_alive);
        let face_map = compaction_map(&self.face_alive);
        let remap_vertex = |v: u32| vertex_map[v as usize].expect("dead vertex referenced");
        let new_edge_count = self.edge_alive.iter().filter(|&&x| x).count() as u32;
        let remap_edge = |e: u32| -> Result<u32, PoolError> {
            if e == self.sentinel {
                return Ok(new_edge_count);
            }
            edge_map[e as usize]
                .ok_or_else(|| PoolError::Internal(format!("dead edge {e} referenced")))
        };

        let mut positions = Vec::new();
        for (v, &alive) in self.vertex_alive.iter().enumerate() {
            if alive {
                positions.push(self.positions[v]);
            }
        }
        let mut faces = Vec::new();
        let mut face_edges = Vec::new();
        for (f, &alive) in self.face_alive.iter().enumerate() {
            if !alive {
                continue;
            }
            let fv = self.face_vertices[f];
            faces.push([
                remap_vertex(fv[0]),
                remap_vertex(fv[1]),
                remap_vertex(fv[2]),
            ]);
            let fe = self.face_edges[f];
            face_edges.push([
                remap_edge(fe[0])?,
                remap_edge(fe[1])?,
                remap_edge(fe[2])?,
            ]);
        }

        let mut edges = Vec::new();
        let mut edge_faces = Vec::new();
        let mut neighbors = Vec::new();
        let mut alive_ids = Vec::new();
        for (e, &alive) in self.edge_alive.iter().enumerate() {
            if !alive {
                continue;
            }
            alive_ids.push(e as u32);
            let [p, q] = self.edges[e];
            edges.push([remap_vertex(p), remap_vertex(q)]);
            let [g1, g2] = self.edge_faces[e];
            let mf = |g: u32| {
                if g == NO_FACE {
                    Ok(NO_FACE)
                } else {
                    face_map[g as usize]
                        .ok_or_else(|| PoolError::Internal(format!("dead face {g} referenced")))
                }
            };
            edge_faces.push([mf(g1)?, mf(g2)?]);
            let nb = self.neighbors[e];
            neighbors.push([
                remap_edge(nb[0])?,
                remap_edge(nb[1])?,
                remap_edge(nb[2])?,
                remap_edge(nb[3])?,
            ]);
        }
        let boundary: Vec<bool> = edge_faces.iter().map(|ef| ef[1] == NO_FACE).collect();
        let mut vertex_ring: Vec<Vec<u32>> = vec![Vec::new(); positions.len()];
        for (e, &[p, q]) in edges.iter().enumerate() {
            vertex_ring[p as usize].push(e as u32);
            vertex_ring[q as usize].push(e as u32);
        }
        for r in &mut vertex_ring {
            r.sort_unstable();
        }

        let mesh = Mesh::new(positions, faces);
        let topology = EdgeTopology {
            edges,
            edge_faces,
            neighbors,
            boundary,
            vertex_ring,
            face_edges,
        };

        let plan = Rc::new(RowMergePlan {
            rows_before: source_topo.edge_count(),
            steps: self.steps,
            alive: alive_ids,
        });
        plan.validate()
            .map_err(|e| PoolError::Internal(format!("merge plan invalid: {e}")))?;

        let parents = resolve_parents(source_topo.edge_count(), &records, &edge_map);
        Ok(PoolResult {
            mesh,
            topology,
            history: PoolHistory {
                source_mesh: source_mesh.clone(),
                source_topology: source_topo.clone(),
                records,
                plan,
                edge_map,
                vertex_map,
                face_map,
                parents,
            },
        })
    }
}

fn compaction_map(alive: &[bool]) -> Vec<Option<u32>> {
    let mut next = 0u32;
    alive
        .iter()
        .map(|&a| {
            if a {
                let id = next;
                next += 1;
                Some(id)
            } else {
                None
            }
        })
        .collect()
}

/// Final compacted destination(s) of every pre-pool edge, found by walking
/// the records backwards so later merges are already resolved.
fn resolve_parents(
    edge_count: usize,
    records: &[CollapseRecord],
    edge_map: &[Option<u32>],
) -> Vec<Vec<u32>> {
    let mut parents: Vec<Vec<u32>> = vec![Vec::new(); edge_count];
    for (e, m) in edge_map.iter().enumerate() {
        if let Some(id) = m {
            parents[e] = vec![*id];
        }
    }
    for rec in records.iter().rev() {
        let pa = parents[rec.survivors[0] as usize].clone();
        let pc = parents[rec.survivors[1] as usize].clone();
        parents[rec.absorbed[0] as usize] = pa.clone();
        parents[rec.absorbed[1] as usize] = pc.clone();
        let mut pe = pa;
        pe.extend(pc);
        pe.sort_unstable();
        pe.dedup();
        parents[rec.edge as usize] = pe;
    }
    parents
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    use super::*;
    use crate::data::synth::{jitter, primitives};
    use crate::topology::{build_edge_topology, euler_characteristic};

    fn pool_fixture(mesh: &Mesh, seed: u64, target: usize) -> PoolResult {
        let topo = build_edge_topology(mesh).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let scores = random_scores(topo.edge_count(), &mut rng);
        mesh_pool(mesh, &topo, &scores, target).unwrap()
    }

    #[test]
    fn counts_shrink_by_three_two_one() {
        let mesh = jitter(&primitives::icosphere(1.0, 1), 0.01, 1);
        let topo = build_edge_topology(&mesh).unwrap();
        let (v0, e0, f0) = (mesh.vertex_count(), topo.edge_count(), mesh.face_count());
        let result = pool_fixture(&mesh, 5, 60);
        let e1 = result.topology.edge_count();
        assert!(e1 <= 60 && e1 >= 58, "got {e1}");
        let k = (e0 - e1) / 3;
        assert_eq!(e0 - e1, 3 * k);
        assert_eq!(result.mesh.face_count(), f0 - 2 * k);
        assert_eq!(result.mesh.vertex_count(), v0 - k);
        assert_eq!(result.history.records.len(), k);
        assert_eq!(
            euler_characteristic(&result.mesh, &result.topology),
            euler_characteristic(&mesh, &topo)
        );
    }

    #[test]
    fn pooled_meshes_stay_manifold() {
        let meshes = [
            jitter(&primitives::icosphere(1.0, 1), 0.02, 2),
            jitter(&primitives::cylinder(0.8, 2.0, 10, 4), 0.01, 3),
            jitter(&primitives::grid_strip(6, 5), 0.02, 4),
            primitives::uv_sphere(1.0, 6, 9),
        ];
        for (i, mesh) in meshes.iter().enumerate() {
            let topo = build_edge_topology(mesh).unwrap();
            let target = topo.edge_count() / 2;
            for seed in 0..6 {
                let mut rng = ChaCha12Rng::seed_from_u64(seed);
                let scores = random_scores(topo.edge_count(), &mut rng);
                let result = mesh_pool(mesh, &topo, &scores, target).unwrap();
                result
                    .mesh
                    .validate()
                    .unwrap_or_else(|e| panic!("mesh {i} seed {seed}: {e}"));
                result
                    .topology
                    .validate(&result.mesh)
                    .unwrap_or_else(|e| panic!("mesh {i} seed {seed}: {e}"));
            }
        }
    }

    #[test]
    fn boundary_is_preserved() {
        let mesh = jitter(&primitives::grid_strip(6, 5), 0.02, 7);
        let topo = build_edge_topology(&mesh).unwrap();
        let before = topo.boundary_edge_count();
        let result = pool_fixture(&mesh, 11, topo.edge_count() * 2 / 3);
        assert_eq!(result.topology.boundary_edge_count(), before);
        // A boundary edge is never the collapsed centre, but it may be
        // absorbed into a neighbour — which then becomes boundary itself.
        // Either way it ends in exactly one boundary edge.
        for e in 0..topo.edge_count() {
            if topo.boundary[e] {
                let p = &result.history.parents[e];
                assert_eq!(p.len(), 1);
                assert!(result.topology.boundary[p[0] as usize]);
            }
        }
    }

    #[test]
    fn first_collapse_is_cheapest_valid_edge() {
        let mesh = jitter(&primitives::icosphere(1.0, 1), 0.02, 9);
        let topo = build_edge_topology(&mesh).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let scores = random_scores(topo.edge_count(), &mut rng);
        let valid = valid_collapse_edges(&mesh, &topo);
        let best = valid
            .iter()
            .copied()
            .min_by(|&a, &b| scores[a as usize].total_cmp(&scores[b as usize]))
            .unwrap();
        let result = mesh_pool(&mesh, &topo, &scores, topo.edge_count() - 3).unwrap();
        assert_eq!(result.history.records[0].edge, best);
    }

    #[test]
    fn ties_break_toward_lower_id() {
        let mesh = primitives::icosphere(1.0, 1);
        let topo = build_edge_topology(&mesh).unwrap();
        let scores = vec![1.0; topo.edge_count()];
        let valid = valid_collapse_edges(&mesh, &topo);
        let result = mesh_pool(&mesh, &topo, &scores, topo.edge_count() - 3).unwrap();
        assert_eq!(result.history.records[0].edge, valid[0]);
    }

    #[test]
    fn tetrahedron_has_no_valid_collapse() {
        let mesh = primitives::tetrahedron();
        let topo = build_edge_topology(&mesh).unwrap();
        assert!(valid_collapse_edges(&mesh, &topo).is_empty());
        let scores = vec![1.0; 6];
        match mesh_pool(&mesh, &topo, &scores, 3) {
            Err(PoolError::TargetUnreachable { achieved: 6, target: 3 }) => {}
            other => panic!("expected exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn wrong_score_length_is_rejected() {
        let mesh = primitives::tetrahedron();
        let topo = build_edge_topology(&mesh).unwrap();
        assert!(matches!(
            mesh_pool(&mesh, &topo, &[1.0; 5], 3),
            Err(PoolError::ScoreLength { got: 5, want: 6 })
        ));
    }

    #[test]
    fn kept_vertex_moves_to_midpoint() {
        let mesh = jitter(&primitives::icosphere(1.0, 1), 0.02, 21);
        let topo = build_edge_topology(&mesh).unwrap();
        let result = pool_fixture(&mesh, 22, topo.edge_count() - 3);
        let rec = &result.history.records[0];
        let mid = vec3::midpoint(
            mesh.positions[rec.kept_vertex as usize],
            mesh.positions[rec.removed_vertex as usize],
        );
        let new_id = result.history.vertex_map[rec.kept_vertex as usize].unwrap();
        assert_eq!(result.mesh.positions[new_id as usize], mid);
        assert!(result.history.vertex_map[rec.removed_vertex as usize].is_none());
    }

    #[test]
    fn plan_mirrors_records_and_survivor_map() {
        let mesh = jitter(&primitives::icosphere(1.0, 2), 0.01, 30);
        let topo = build_edge_topology(&mesh).unwrap();
        let result = pool_fixture(&mesh, 31, 240);
        let hist = &result.history;
        hist.plan.validate().unwrap();
        assert_eq!(hist.plan.rows_before, topo.edge_count());
        assert_eq!(hist.plan.steps.len(), hist.records.len());
        for (step, rec) in hist.plan.steps.iter().zip(&hist.records) {
            assert_eq!(
                *step,
                [
                    rec.survivors[0],
                    rec.absorbed[0],
                    rec.survivors[1],
                    rec.absorbed[1],
                    rec.edge
                ]
            );
        }
        // plan.alive is exactly the survivor side of edge_map.
        for (e, m) in hist.edge_map.iter().enumerate() {
            match m {
                Some(new_id) => assert_eq!(hist.plan.alive[*new_id as usize], e as u32),
                None => assert!(hist.plan.alive.binary_search(&(e as u32)).is_err()),
            }
        }
        // Every pre-pool edge lands somewhere.
        for p in &hist.parents {
            assert!(!p.is_empty());
            for &c in p {
                assert!((c as usize) < result.topology.edge_count());
            }
        }
    }

    #[test]
    fn replay_reproduces_pooled_outputs_exactly() {
        for (mesh, seed, target) in [
            (jitter(&primitives::icosphere(1.0, 1), 0.02, 40), 41, 66),
            (jitter(&primitives::grid_strip(6, 5), 0.02, 42), 43, 80),
        ] {
            let result = pool_fixture(&mesh, seed, target);
            let again = result.history.replay().unwrap();
            assert_eq!(again.mesh, result.mesh);
            assert_eq!(again.topology, result.topology);
            assert_eq!(*again.history.plan, *result.history.plan);
        }
    }

    #[test]
    fn pooling_to_current_size_is_a_no_op() {
        let mesh = primitives::icosphere(1.0, 1);
        let topo = build_edge_topology(&mesh).unwrap();
        let scores = vec![1.0; topo.edge_count()];
        let result = mesh_pool(&mesh, &topo, &scores, topo.edge_count()).unwrap();
        assert_eq!(result.topology, topo);
        assert_eq!(result.mesh, mesh);
        assert!(result.history.records.is_empty());
    }

    #[test]
    fn deep_pooling_matches_feature_norm_mode() {
        // Feature-norm scores run through the same machinery.
        let mesh = jitter(&primitives::icosphere(1.0, 2), 0.01, 50);
        let topo = build_edge_topology(&mesh).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(51);
        let feats = ndarray::Array2::from_shape_fn((topo.edge_count(), 8), |_| {
            rand::Rng::gen_range(&mut rng, -1.0f32..1.0)
        });
        let scores = feature_norm_scores(&feats);
        assert_eq!(scores.len(), topo.edge_count());
        let result = mesh_pool(&mesh, &topo, &scores, 150).unwrap();
        assert!(result.topology.edge_count() <= 150);
        result.topology.validate(&result.mesh).unwrap();
        assert_eq!(euler_characteristic(&result.mesh, &result.topology), 2);
    }
}
