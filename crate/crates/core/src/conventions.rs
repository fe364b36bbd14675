//! Skeleton conventions and the zero-padded unified pose layout.
//!
//! A convention is plain data: joint names, an undirected edge list, a center
//! joint and a left/right swap map. Conventions are loaded from small TOML
//! topology files; the four shipped ones live in `conventions/` next to this
//! crate and are compiled in.

use std::collections::{HashSet, VecDeque};
use std::path::Path;

use ndarray::{s, Array1, Array4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConventionError {
    #[error("convention `{0}` is already registered")]
    DuplicateName(String),
    #[error("invalid topology for `{name}`: {reason}")]
    InvalidTopology { name: String, reason: String },
    #[error("unknown convention `{0}`")]
    Unknown(String),
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("pose data contains non-finite values")]
    NonFinite,
    #[error("failed to read topology file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse topology: {0}")]
    Parse(String),
}

type Result<T> = std::result::Result<T, ConventionError>;

const BUILTIN_FILES: [&str; 4] = [
    include_str!("../conventions/smpl.toml"),
    include_str!("../conventions/smplx.toml"),
    include_str!("../conventions/berkeley_mhad.toml"),
    include_str!("../conventions/kinectv2.toml"),
];

/// A named joint layout with its intra-skeleton edge set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonConvention {
    pub name: String,
    pub joint_count: usize,
    pub center_joint: usize,
    pub joint_names: Vec<String>,
    pub edges: Vec<[usize; 2]>,
    pub swap_map: Vec<usize>,
    /// Optional landmark expressions used by the synthetic renderer, one per
    /// joint: either a landmark name or `a|b|alpha` for a blend of two.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub anchors: Vec<String>,
}

impl SkeletonConvention {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let conv: SkeletonConvention =
            toml::from_str(text).map_err(|e| ConventionError::Parse(e.to_string()))?;
        conv.validate()?;
        Ok(conv)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConventionError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("convention serializes to TOML")
    }

    fn invalid(&self, reason: impl Into<String>) -> ConventionError {
        ConventionError::InvalidTopology {
            name: self.name.clone(),
            reason: reason.into(),
        }
    }

    /// Checks every structural invariant: index ranges, no self-loops or
    /// duplicate edges, connectivity, and an involutive swap map.
    pub fn validate(&self) -> Result<()> {
        let v = self.joint_count;
        if self.name.is_empty() {
            return Err(self.invalid("empty name"));
        }
        if v == 0 {
            return Err(self.invalid("joint_count must be positive"));
        }
        if self.joint_names.len() != v {
            return Err(self.invalid(format!(
                "{} joint names for {} joints",
                self.joint_names.len(),
                v
            )));
        }
        if self.center_joint >= v {
            return Err(self.invalid(format!("center joint {} out of range", self.center_joint)));
        }
        let mut seen = HashSet::new();
        for &[a, b] in &self.edges {
            if a >= v || b >= v {
                return Err(self.invalid(format!("edge ({a}, {b}) out of range for {v} joints")));
            }
            if a == b {
                return Err(self.invalid(format!("self-loop at joint {a}")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(self.invalid(format!("duplicate edge ({a}, {b})")));
            }
        }
        if self.swap_map.len() != v {
            return Err(self.invalid("swap_map length differs from joint_count"));
        }
        for (i, &j) in self.swap_map.iter().enumerate() {
            if j >= v || self.swap_map[j] != i {
                return Err(self.invalid(format!("swap_map is not an involution at joint {i}")));
            }
        }
        if !self.anchors.is_empty() && self.anchors.len() != v {
            return Err(self.invalid("anchors length differs from joint_count"));
        }
        if self.bfs_order().len() != v {
            return Err(self.invalid("edge graph is disconnected"));
        }
        Ok(())
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.joint_count];
        for &[a, b] in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    fn bfs_order(&self) -> Vec<usize> {
        let adj = self.neighbors();
        let mut visited = vec![false; self.joint_count];
        let mut order = Vec::with_capacity(self.joint_count);
        let mut queue = VecDeque::from([self.center_joint.min(self.joint_count.saturating_sub(1))]);
        visited[queue[0]] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &w in &adj[u] {
                if !visited[w] {
                    visited[w] = true;
                    queue.push_back(w);
                }
            }
        }
        order
    }

    /// Parent of every joint in the breadth-first spanning tree rooted at the
    /// center joint. The root has no parent.
    pub fn parents(&self) -> Vec<Option<usize>> {
        let adj = self.neighbors();
        let mut parent = vec![None; self.joint_count];
        let mut visited = vec![false; self.joint_count];
        let root = self.center_joint;
        visited[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &w in &adj[u] {
                if !visited[w] {
                    visited[w] = true;
                    parent[w] = Some(u);
                    queue.push_back(w);
                }
            }
        }
        parent
    }

    pub fn joint_index(&self, joint_name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == joint_name)
    }
}

/// Ordered set of conventions sharing one padded joint axis of length `v_max`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConventionRegistry {
    conventions: Vec<SkeletonConvention>,
}

impl ConventionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The four shipped conventions: SMPL (24), SMPL-X subset (42),
    /// Berkeley MHAD (43) and Kinect v2 (25).
    pub fn builtin() -> Self {
        let mut registry = Self::new();
        for text in BUILTIN_FILES {
            let conv = SkeletonConvention::from_toml_str(text).expect("shipped topology is valid");
            registry.insert(conv).expect("shipped names are unique");
        }
        registry
    }

    /// Loads every `*.toml` topology file in `dir`, sorted by file name.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let entries = std::fs::read_dir(dir).map_err(|source| ConventionError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        paths.sort();
        let mut registry = Self::new();
        for p in paths {
            registry.insert(SkeletonConvention::load(&p)?)?;
        }
        Ok(registry)
    }

    pub fn register(mut self, conv: SkeletonConvention) -> Result<Self> {
        self.insert(conv)?;
        Ok(self)
    }

    pub fn insert(&mut self, conv: SkeletonConvention) -> Result<()> {
        conv.validate()?;
        if self.get(&conv.name).is_some() {
            return Err(ConventionError::DuplicateName(conv.name));
        }
        self.conventions.push(conv);
        Ok(())
    }

    pub fn v_max(&self) -> usize {
        self.conventions.iter().map(|c| c.joint_count).max().unwrap_or(0)
    }

    pub fn get(&self, name: &str) -> Option<&SkeletonConvention> {
        self.conventions.iter().find(|c| c.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&SkeletonConvention> {
        self.get(name).ok_or_else(|| ConventionError::Unknown(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.conventions.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &SkeletonConvention> {
        self.conventions.iter()
    }

    pub fn len(&self) -> usize {
        self.conventions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conventions.is_empty()
    }
}

/// Pose tensor in the unified layout `C x V_max x T x P`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    pub data: Array4<f64>,
    pub convention: String,
    pub valid_mask: Array1<bool>,
    pub label: Option<usize>,
}

impl PoseSequence {
    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn v_max(&self) -> usize {
        self.data.dim().1
    }

    pub fn frames(&self) -> usize {
        self.data.dim().2
    }

    pub fn persons(&self) -> usize {
        self.data.dim().3
    }

    pub fn valid_count(&self) -> usize {
        self.valid_mask.iter().filter(|&&m| m).count()
    }

    /// First `V_s` joint slots, i.e. the native-layout array.
    pub fn unpadded(&self) -> Array4<f64> {
        self.data.slice(s![.., ..self.valid_count(), .., ..]).to_owned()
    }

    /// True when every padded slot is exactly zero and all values are finite.
    pub fn check_invariants(&self) -> bool {
        if self.data.iter().any(|x| !x.is_finite()) {
            return false;
        }
        self.valid_mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| !m)
            .all(|(v, _)| self.data.slice(s![.., v, .., ..]).iter().all(|&x| x == 0.0))
    }
}

/// Embeds a native `C x V_s x T x P` array into the zero-padded layout.
pub fn pad_to_unified(
    raw: &Array4<f64>,
    convention: &str,
    registry: &ConventionRegistry,
) -> Result<PoseSequence> {
    let conv = registry.require(convention)?;
    let (c, v, t, p) = raw.dim();
    if v != conv.joint_count {
        return Err(ConventionError::ShapeMismatch {
            expected: format!("{} joints for `{}`", conv.joint_count, conv.name),
            found: format!("{v} joints"),
        });
    }
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(ConventionError::NonFinite);
    }
    let v_max = registry.v_max();
    let mut data = Array4::zeros((c, v_max, t, p));
    data.slice_mut(s![.., ..v, .., ..]).assign(raw);
    let valid_mask = Array1::from_shape_fn(v_max, |i| i < v);
    Ok(PoseSequence {
        data,
        convention: conv.name.clone(),
        valid_mask,
        label: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(name: &str, n: usize) -> SkeletonConvention {
        SkeletonConvention {
            name: name.into(),
            joint_count: n,
            center_joint: 0,
            joint_names: (0..n).map(|i| format!("j{i}")).collect(),
            edges: (1..n).map(|i| [i - 1, i]).collect(),
            swap_map: (0..n).collect(),
            anchors: vec![],
        }
    }

    #[test]
    fn builtin_counts() {
        let reg = ConventionRegistry::builtin();
        assert_eq!(reg.v_max(), 43);
        assert_eq!(reg.require("kinectv2").unwrap().joint_count, 25);
        assert_eq!(reg.require("smpl").unwrap().joint_count, 24);
        assert_eq!(reg.require("smplx").unwrap().joint_count, 42);
        assert_eq!(reg.require("berkeley_mhad").unwrap().joint_count, 43);
    }

    #[test]
    fn single_small_convention() {
        let reg = ConventionRegistry::new().register(chain("pair", 2)).unwrap();
        assert_eq!(reg.v_max(), 2);
    }

    #[test]
    fn register_updates_v_max() {
        let reg = ConventionRegistry::builtin().register(chain("big", 50)).unwrap();
        assert_eq!(reg.v_max(), 50);
        let reg = ConventionRegistry::builtin().register(chain("small", 10)).unwrap();
        assert_eq!(reg.v_max(), 43);
    }

    #[test]
    fn rejects_bad_topologies() {
        let mut bad = chain("bad", 24);
        bad.edges.push([0, 99]);
        assert!(matches!(
            ConventionRegistry::builtin().register(bad),
            Err(ConventionError::InvalidTopology { .. })
        ));

        let mut split = chain("split", 4);
        split.edges = vec![[0, 1], [2, 3]];
        assert!(split.validate().is_err());

        let mut loops = chain("loop", 3);
        loops.edges.push([1, 1]);
        assert!(loops.validate().is_err());

        let mut dup = chain("dup", 3);
        dup.edges.push([1, 0]);
        assert!(dup.validate().is_err());

        let mut swap = chain("swap", 3);
        swap.swap_map = vec![1, 2, 0];
        assert!(swap.validate().is_err());
    }

    #[test]
    fn duplicate_name_rejected() {
        let err = ConventionRegistry::builtin().register(chain("smpl", 3)).unwrap_err();
        assert!(matches!(err, ConventionError::DuplicateName(_)));
    }

    #[test]
    fn padding_kinect() {
        let reg = ConventionRegistry::builtin();
        let raw = Array4::from_shape_fn((3, 25, 4, 2), |(c, v, t, p)| (c + v + t + p) as f64 + 1.0);
        let seq = pad_to_unified(&raw, "kinectv2", &reg).unwrap();
        assert_eq!(seq.data.dim(), (3, 43, 4, 2));
        assert_eq!(seq.valid_count(), 25);
        assert!(seq.data.slice(s![.., 25.., .., ..]).iter().all(|&x| x == 0.0));
        assert_eq!(seq.unpadded(), raw);
        assert!(seq.check_invariants());
    }

    #[test]
    fn padding_full_size_is_identity() {
        let reg = ConventionRegistry::builtin();
        let raw = Array4::from_elem((3, 43, 2, 2), 0.5);
        let seq = pad_to_unified(&raw, "berkeley_mhad", &reg).unwrap();
        assert_eq!(seq.data, raw);
        assert!(seq.valid_mask.iter().all(|&m| m));
    }

    #[test]
    fn padding_errors() {
        let reg = ConventionRegistry::builtin();
        let raw = Array4::zeros((3, 24, 2, 2));
        assert!(matches!(
            pad_to_unified(&raw, "kinectv2", &reg),
            Err(ConventionError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            pad_to_unified(&raw, "nope", &reg),
            Err(ConventionError::Unknown(_))
        ));
    }

    #[test]
    fn toml_round_trip() {
        let reg = ConventionRegistry::builtin();
        for conv in reg.iter() {
            let back = SkeletonConvention::from_toml_str(&conv.to_toml_string()).unwrap();
            assert_eq!(&back, conv);
        }
    }

    #[test]
    fn parents_form_tree_rooted_at_center() {
        let reg = ConventionRegistry::builtin();
        for conv in reg.iter() {
            let parents = conv.parents();
            assert_eq!(parents[conv.center_joint], None);
            assert_eq!(parents.iter().filter(|p| p.is_none()).count(), 1);
        }
    }
}
