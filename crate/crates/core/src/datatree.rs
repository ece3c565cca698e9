//! Nested-list "datatree" container exchanged between flow-graph nodes.
//!
//! A tree maps integer branch paths to lists of scalars. Branches are always
//! visited in lexicographic path order, which fixes the column order of every
//! CSV row and feature vector derived from a tree.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataTreeError {
    #[error("tree has no branches")]
    EmptyTree,
    #[error("row {0} is empty")]
    EmptyRow(usize),
    #[error("shape mismatch: expected {expected} values, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("branch {0} not found")]
    BranchNotFound(Path),
    #[error("path must have at least one index")]
    EmptyPath,
    #[error("non-finite value {value} in branch {path}")]
    NonFinite { path: Path, value: f64 },
}

/// Branch address, e.g. `{0;3}`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct Path(Vec<u32>);

impl Path {
    pub fn new(indices: Vec<u32>) -> Result<Self, DataTreeError> {
        if indices.is_empty() {
            return Err(DataTreeError::EmptyPath);
        }
        Ok(Path(indices))
    }

    /// Depth-1 path `{index}`.
    pub fn single(index: u32) -> Self {
        Path(vec![index])
    }

    pub fn indices(&self) -> &[u32] {
        &self.0
    }
}

impl TryFrom<Vec<u32>> for Path {
    type Error = DataTreeError;
    fn try_from(v: Vec<u32>) -> Result<Self, Self::Error> {
        Path::new(v)
    }
}

impl From<Path> for Vec<u32> {
    fn from(p: Path) -> Self {
        p.0
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, idx) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{idx}")?;
        }
        f.write_str("}")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DataTree {
    branches: BTreeMap<Path, Vec<f64>>,
    /// Set when the tree may hold NaN/inf sentinels for missing samples.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    gaps: bool,
}

impl DataTree {
    pub fn new() -> Self {
        Self::default()
    }

    /// Empty tree that accepts non-finite sentinel values.
    pub fn with_gaps() -> Self {
        DataTree {
            branches: BTreeMap::new(),
            gaps: true,
        }
    }

    /// Canonical channels × columns layout: row `i` becomes branch `{i}`.
    pub fn from_matrix(rows: &[Vec<f64>]) -> Result<Self, DataTreeError> {
        if rows.is_empty() {
            return Err(DataTreeError::EmptyTree);
        }
        let mut tree = DataTree::new();
        for (i, row) in rows.iter().enumerate() {
            if row.is_empty() {
                return Err(DataTreeError::EmptyRow(i));
            }
            tree.insert(Path::single(i as u32), row.clone())?;
        }
        Ok(tree)
    }

    /// Replaces the branch at `path`.
    pub fn insert(&mut self, path: Path, values: Vec<f64>) -> Result<(), DataTreeError> {
        if !self.gaps {
            if let Some(&value) = values.iter().find(|v| !v.is_finite()) {
                return Err(DataTreeError::NonFinite { path, value });
            }
        }
        self.branches.insert(path, values);
        Ok(())
    }

    pub fn has_gaps(&self) -> bool {
        self.gaps
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.branches.is_empty()
    }

    /// Total number of scalars over all branches.
    pub fn len(&self) -> usize {
        self.branches.values().map(Vec::len).sum()
    }

    pub fn get_branch(&self, path: &Path) -> Result<&[f64], DataTreeError> {
        self.branches
            .get(path)
            .map(Vec::as_slice)
            .ok_or_else(|| DataTreeError::BranchNotFound(path.clone()))
    }

    /// Branches in lexicographic path order.
    pub fn branches(&self) -> impl Iterator<Item = (&Path, &[f64])> {
        self.branches.iter().map(|(p, v)| (p, v.as_slice()))
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for values in self.branches.values() {
            out.extend_from_slice(values);
        }
        out
    }

    /// `(path, length)` pairs in iteration order; the input to [`DataTree::unflatten`].
    pub fn shape(&self) -> Vec<(Path, usize)> {
        self.branches
            .iter()
            .map(|(p, v)| (p.clone(), v.len()))
            .collect()
    }

    pub fn unflatten(values: &[f64], shape: &[(Path, usize)]) -> Result<Self, DataTreeError> {
        let expected: usize = shape.iter().map(|(_, n)| n).sum();
        if expected != values.len() {
            return Err(DataTreeError::ShapeMismatch {
                expected,
                actual: values.len(),
            });
        }
        let mut tree = DataTree::new();
        let mut offset = 0;
        for (path, n) in shape {
            tree.insert(path.clone(), values[offset..offset + n].to_vec())?;
            offset += n;
        }
        Ok(tree)
    }

    /// Rows in path order, for depth-1 channel trees.
    pub fn to_matrix(&self) -> Vec<Vec<f64>> {
        self.branches.values().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tree_of(branches: &[(Vec<u32>, Vec<f64>)]) -> DataTree {
        let mut t = DataTree::new();
        for (p, v) in branches {
            t.insert(Path::new(p.clone()).unwrap(), v.clone()).unwrap();
        }
        t
    }

    #[test]
    fn from_matrix_builds_one_branch_per_row() {
        let t = DataTree::from_matrix(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(t.branch_count(), 2);
        assert_eq!(t.get_branch(&Path::single(0)).unwrap(), &[1.0, 2.0]);
        assert_eq!(t.get_branch(&Path::single(1)).unwrap(), &[3.0, 4.0]);
    }

    #[test]
    fn from_matrix_rejects_empty() {
        assert_eq!(DataTree::from_matrix(&[]), Err(DataTreeError::EmptyTree));
        assert_eq!(
            DataTree::from_matrix(&[vec![1.0], vec![]]),
            Err(DataTreeError::EmptyRow(1))
        );
    }

    #[test]
    fn sixteen_by_five() {
        let rows: Vec<Vec<f64>> = (0..16)
            .map(|i| (0..5).map(|j| (i * 5 + j) as f64).collect())
            .collect();
        let t = DataTree::from_matrix(&rows).unwrap();
        assert_eq!(t.branch_count(), 16);
        assert!(t.branches().all(|(_, v)| v.len() == 5));
        let flat = t.flatten();
        assert_eq!(flat.len(), 80);
        assert_eq!(flat, (0..80).map(|x| x as f64).collect::<Vec<_>>());
        assert_eq!(t.to_matrix(), rows);
    }

    #[test]
    fn flatten_orders_by_path() {
        let t = tree_of(&[(vec![1], vec![3.0]), (vec![0], vec![1.0, 2.0])]);
        assert_eq!(t.flatten(), vec![1.0, 2.0, 3.0]);
        assert!(DataTree::new().flatten().is_empty());
    }

    #[test]
    fn lexicographic_order_is_by_index_not_string() {
        // {2} < {10} numerically; {0;5} sorts between {0} and {1}
        let t = tree_of(&[
            (vec![10], vec![4.0]),
            (vec![2], vec![2.0]),
            (vec![0, 5], vec![1.0]),
            (vec![0], vec![0.0]),
        ]);
        assert_eq!(t.flatten(), vec![0.0, 1.0, 2.0, 4.0]);
    }

    #[test]
    fn unflatten_inverts_flatten() {
        let shape = vec![(Path::single(0), 2), (Path::single(1), 1)];
        let t = DataTree::unflatten(&[1.0, 2.0, 3.0], &shape).unwrap();
        assert_eq!(t.get_branch(&Path::single(0)).unwrap(), &[1.0, 2.0]);
        assert_eq!(t.get_branch(&Path::single(1)).unwrap(), &[3.0]);
        assert_eq!(
            DataTree::unflatten(&[1.0], &shape),
            Err(DataTreeError::ShapeMismatch {
                expected: 3,
                actual: 1
            })
        );
    }

    #[test]
    fn get_branch_missing() {
        let t = tree_of(&[(vec![0], vec![5.0])]);
        assert_eq!(t.get_branch(&Path::single(0)).unwrap(), &[5.0]);
        assert_eq!(
            t.get_branch(&Path::single(1)),
            Err(DataTreeError::BranchNotFound(Path::single(1)))
        );
    }

    #[test]
    fn finite_unless_marked() {
        let mut t = DataTree::new();
        assert!(t.insert(Path::single(0), vec![f64::NAN]).is_err());
        let mut g = DataTree::with_gaps();
        g.insert(Path::single(0), vec![f64::NAN]).unwrap();
        assert!(g.has_gaps());
        assert_eq!(Path::new(vec![]), Err(DataTreeError::EmptyPath));
    }

    #[test]
    fn path_display() {
        assert_eq!(Path::new(vec![0, 3]).unwrap().to_string(), "{0;3}");
    }

    fn arb_tree() -> impl Strategy<Value = DataTree> {
        prop::collection::btree_map(
            prop::collection::vec(0u32..6, 1..4),
            prop::collection::vec(-1e6f64..1e6, 0..6),
            0..8,
        )
        .prop_map(|m| {
            let mut t = DataTree::new();
            for (p, v) in m {
                t.insert(Path::new(p).unwrap(), v).unwrap();
            }
            t
        })
    }

    proptest! {
        #[test]
        fn flatten_is_manual_concatenation(t in arb_tree()) {
            let mut manual = Vec::new();
            let mut paths: Vec<_> = t.branches().map(|(p, _)| p.indices().to_vec()).collect();
            paths.sort();
            for p in paths {
                manual.extend_from_slice(t.get_branch(&Path::new(p).unwrap()).unwrap());
            }
            prop_assert_eq!(t.flatten(), manual);
        }

        #[test]
        fn round_trip(t in arb_tree()) {
            let shape = t.shape();
            let flat = t.flatten();
            let back = DataTree::unflatten(&flat, &shape).unwrap();
            prop_assert_eq!(&back, &t);
            prop_assert_eq!(back.flatten(), flat);
        }
    }
}
