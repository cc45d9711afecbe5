//! Dataset layout and loading.
//!
//! Two on-disk layouts are supported, both built from Wavefront OBJ files:
//!
//! * classification — `<root>/<class>/<train|test>/*.obj`; the class
//!   directory names, sorted, define the integer label ids;
//! * segmentation — `<root>/<train|test>/*.obj`, each mesh accompanied by a
//!   sibling `<name>.eseg` holding one 0-based integer per line, where line
//!   `i` labels edge `i` in canonical edge order.
//!
//! Within a directory, entries are taken in lexicographic file-name order so
//! a dataset enumerates identically on every platform. Meshes are loaded
//! eagerly and their edge topology is built once for validation, so malformed
//! inputs fail at load time with the offending path in the error.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::mesh::{self, Mesh, MeshError};
use crate::topology::{build_edge_topology, TopologyError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    BadMesh {
        path: PathBuf,
        #[source]
        source: MeshError,
    },
    #[error("{path}: {source}")]
    BadTopology {
        path: PathBuf,
        #[source]
        source: TopologyError,
    },
    #[error("no class directories under {root}")]
    NoClasses { root: PathBuf },
    #[error("no meshes found under {root}")]
    Empty { root: PathBuf },
    #[error("missing label file {path}")]
    MissingLabels { path: PathBuf },
    #[error("{path} line {line}: cannot parse label {text:?}")]
    BadLabel {
        path: PathBuf,
        line: usize,
        text: String,
    },
    #[error("{path}: {labels} labels for {edges} edges")]
    LabelCount {
        path: PathBuf,
        labels: usize,
        edges: usize,
    },
}

/// One labelled mesh of a classification dataset.
#[derive(Debug, Clone)]
pub struct ClassSample {
    pub path: PathBuf,
    pub mesh: Mesh,
    pub label: u32,
}

/// Eagerly loaded classification dataset.
#[derive(Debug, Clone)]
pub struct ClassificationData {
    /// Sorted class directory names; index = label id.
    pub classes: Vec<String>,
    pub train: Vec<ClassSample>,
    pub test: Vec<ClassSample>,
}

/// One mesh of a segmentation dataset with a label per canonical edge.
#[derive(Debug, Clone)]
pub struct SegSample {
    pub path: PathBuf,
    pub mesh: Mesh,
    pub labels: Vec<u32>,
}

/// Eagerly loaded segmentation dataset.
#[derive(Debug, Clone)]
pub struct SegmentationData {
    pub train: Vec<SegSample>,
    pub test: Vec<SegSample>,
    /// `max label + 1` over every loaded sample.
    pub num_classes: u32,
}

/// Directory entries with the given extension, sorted by file name.
fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, DataError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let rd = fs::read_dir(dir).map_err(|source| DataError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|source| DataError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = entry.path();
        if path.is_file() && path.extension().and_then(|e| e.to_str()) == Some(ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Loads and validates one mesh: OBJ parse plus a full edge-topology build,
/// so non-manifold or inconsistently wound inputs are rejected here. Returns
/// the mesh and its edge count.
fn load_mesh(path: &Path) -> Result<(Mesh, usize), DataError> {
    let loaded = mesh::load_obj(path).map_err(|source| DataError::BadMesh {
        path: path.to_path_buf(),
        source,
    })?;
    let topo = build_edge_topology(&loaded.mesh).map_err(|source| DataError::BadTopology {
        path: path.to_path_buf(),
        source,
    })?;
    Ok((loaded.mesh, topo.edge_count()))
}

/// Loads a `<root>/<class>/<train|test>/*.obj` tree. A missing split
/// directory is treated as an empty split; a dataset with no meshes at all
/// is an error.
pub fn load_classification(root: &Path) -> Result<ClassificationData, DataError> {
    let rd = fs::read_dir(root).map_err(|source| DataError::Io {
        path: root.to_path_buf(),
        source,
    })?;
    let mut classes = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|source| DataError::Io {
            path: root.to_path_buf(),
            source,
        })?;
        if entry.path().is_dir() {
            classes.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    classes.sort();
    if classes.is_empty() {
        return Err(DataError::NoClasses {
            root: root.to_path_buf(),
        });
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, class) in classes.iter().enumerate() {
        for (split, bucket) in [("train", &mut train), ("test", &mut test)] {
            for path in sorted_files(&root.join(class).join(split), "obj")? {
                let (mesh, _) = load_mesh(&path)?;
                bucket.push(ClassSample {
                    path,
                    mesh,
                    label: label as u32,
                });
            }
        }
    }
    if train.is_empty() && test.is_empty() {
        return Err(DataError::Empty {
            root: root.to_path_buf(),
        });
    }
    Ok(ClassificationData {
        classes,
        train,
        test,
    })
}

/// Parses an `.eseg` label file: one integer per non-empty line, line `i`
/// labelling canonical edge `i`. The label count must match the mesh's edge
/// count exactly.
fn load_eseg(path: &Path, edges: usize) -> Result<Vec<u32>, DataError> {
    if !path.is_file() {
        return Err(DataError::MissingLabels {
            path: path.to_path_buf(),
        });
    }
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let label: u32 = line.parse().map_err(|_| DataError::BadLabel {
            path: path.to_path_buf(),
            line: i + 1,
            text: line.to_string(),
        })?;
        labels.push(label);
    }
    if labels.len() != edges {
        return Err(DataError::LabelCount {
            path: path.to_path_buf(),
            labels: labels.len(),
            edges,
        });
    }
    Ok(labels)
}

/// Loads a `<root>/<train|test>/*.obj` tree with sibling `.eseg` files.
pub fn load_segmentation(root: &Path) -> Result<SegmentationData, DataError> {
    let mut splits = [Vec::new(), Vec::new()];
    for (si, split) in ["train", "test"].iter().enumerate() {
        for path in sorted_files(&root.join(split), "obj")? {
            let (mesh, edges) = load_mesh(&path)?;
            let labels = load_eseg(&path.with_extension("eseg"), edges)?;
            splits[si].push(SegSample { path, mesh, labels });
        }
    }
    let [train, test] = splits;
    if train.is_empty() && test.is_empty() {
        return Err(DataError::Empty {
            root: root.to_path_buf(),
        });
    }
    let num_classes = train
        .iter()
        .chain(test.iter())
        .flat_map(|s| s.labels.iter().copied())
        .max()
        .map_or(0, |m| m + 1);
    Ok(SegmentationData {
        train,
        test,
        num_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::primitives;
    use crate::mesh::write_obj;
    use std::fs;

    fn write_mesh(path: &Path, mesh: &Mesh) {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, write_obj(mesh)).unwrap();
    }

    fn write_labels(path: &Path, labels: &[u32]) {
        let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
        fs::write(path, text).unwrap();
    }

    #[test]
    fn classification_tree_loads_in_sorted_order() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let tetra = primitives::tetrahedron();
        // Created out of order on purpose; ids must follow sorted names.
        write_mesh(&root.join("zebra/train/b.obj"), &tetra);
        write_mesh(&root.join("zebra/train/a.obj"), &tetra);
        write_mesh(&root.join("apple/train/only.obj"), &tetra);
        write_mesh(&root.join("apple/test/t.obj"), &tetra);

        let data = load_classification(root).unwrap();
        assert_eq!(data.classes, ["apple", "zebra"]);
        let names: Vec<_> = data
            .train
            .iter()
            .map(|s| {
                (
                    s.label,
                    s.path.file_name().unwrap().to_str().unwrap().to_string(),
                )
            })
            .collect();
        assert_eq!(
            names,
            [
                (0, "only.obj".to_string()),
                (1, "a.obj".to_string()),
                (1, "b.obj".to_string())
            ]
        );
        assert_eq!(data.test.len(), 1);
        assert_eq!(data.test[0].label, 0);
        assert_eq!(data.train[0].mesh, tetra);
    }

    #[test]
    fn empty_roots_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_classification(dir.path()),
            Err(DataError::NoClasses { .. })
        ));
        fs::create_dir_all(dir.path().join("cat/train")).unwrap();
        assert!(matches!(
            load_classification(dir.path()),
            Err(DataError::Empty { .. })
        ));
    }

    #[test]
    fn segmentation_tree_pairs_meshes_with_labels() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let tetra = primitives::tetrahedron();
        write_mesh(&root.join("train/m0.obj"), &tetra);
        write_labels(&root.join("train/m0.eseg"), &[0, 1, 1, 0, 2, 1]);
        write_mesh(&root.join("test/m1.obj"), &tetra);
        write_labels(&root.join("test/m1.eseg"), &[0; 6]);

        let data = load_segmentation(root).unwrap();
        assert_eq!(data.train.len(), 1);
        assert_eq!(data.test.len(), 1);
        assert_eq!(data.train[0].labels, [0, 1, 1, 0, 2, 1]);
        assert_eq!(data.num_classes, 3);
    }

    #[test]
    fn missing_label_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_mesh(&dir.path().join("train/m0.obj"), &primitives::tetrahedron());
        match load_segmentation(dir.path()) {
            Err(DataError::MissingLabels { path }) => {
                assert!(path.ends_with("m0.eseg"));
            }
            other => panic!("expected MissingLabels, got {other:?}"),
        }
    }

    #[test]
    fn label_count_mismatch_reports_both_counts() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        write_mesh(&root.join("train/m0.obj"), &primitives::tetrahedron());
        write_labels(&root.join("train/m0.eseg"), &[0, 1, 2]);
        match load_segmentation(root) {
            Err(DataError::LabelCount {
                labels, edges, ..
            }) => {
                assert_eq!((labels, edges), (3, 6));
            }
            other => panic!("expected LabelCount, got {other:?}"),
        }
    }

    #[test]
    fn junk_labels_are_rejected_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        write_mesh(&root.join("train/m0.obj"), &primitives::tetrahedron());
        fs::write(root.join("train/m0.eseg"), "0\n1\nnope\n0\n0\n0\n").unwrap();
        match load_segmentation(root) {
            Err(DataError::BadLabel { line, text, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(text, "nope");
            }
            other => panic!("expected BadLabel, got {other:?}"),
        }
    }

    #[test]
    fn broken_meshes_fail_at_load_time_with_their_path() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        fs::create_dir_all(root.join("cat/train")).unwrap();
        fs::write(root.join("cat/train/bad.obj"), "v 0 0 0\nf 1 1 1\n").unwrap();
        match load_classification(root) {
            Err(DataError::BadMesh { path, .. }) | Err(DataError::BadTopology { path, .. }) => {
                assert!(path.ends_with("bad.obj"));
            }
            other => panic!("expected a mesh error, got {other:?}"),
        }
    }
}
