//! Skeleton sequences, graph construction, preprocessing, and the on-disk
//! dataset format.
//!
//! A dataset is a directory holding `manifest.json` plus `data.bin`:
//!
//! ```text
//! manifest.json  UTF-8 JSON: format_version (=1), class_names, V, T_target,
//!                edges (array of [i, j]), count
//! data.bin       little-endian: magic "SKL1"; per sample u32 label, u32 T,
//!                u32 V, u32 C (=3), then C*T*V f32 values in [c][t][v] order
//! ```
//!
//! Any deviation is a hard load error.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Element, Tensor};

pub const DATA_MAGIC: &[u8; 4] = b"SKL1";
pub const COORD_CHANNELS: usize = 3;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest error: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("unsupported manifest format_version {0}")]
    FormatVersion(u32),
    #[error("class names are not unique")]
    DuplicateClassNames,
    #[error("T_target must be >= 8, got {0}")]
    TTargetTooSmall(usize),
    #[error("bad magic in data.bin")]
    BadMagic,
    #[error("truncated payload in data.bin (sample {0})")]
    Truncated(usize),
    #[error("sample {sample}: label {label} out of range for {classes} classes")]
    LabelOutOfRange { sample: usize, label: u32, classes: usize },
    #[error("sample {sample}: non-finite coordinate value")]
    NonFinite { sample: usize },
    #[error("sample {sample}: joint count {v} does not match manifest V={expected}")]
    JointCountMismatch { sample: usize, v: usize, expected: usize },
    #[error("sample {sample}: channel count {c} is not {expected}")]
    ChannelCountMismatch { sample: usize, c: usize, expected: usize },
    #[error("sample count {found} does not match manifest count {expected}")]
    CountMismatch { found: usize, expected: usize },
    #[error("edge ({0}, {1}) endpoint out of range for V={2}")]
    EdgeOutOfRange(usize, usize, usize),
    #[error("edge list contains self-loop ({0}, {0}); self-loops are added internally")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("empty sequence (T = 0)")]
    EmptySequence,
    #[error("root joint {0} out of range for V={1}")]
    RootOutOfRange(usize, usize),
}

/// One action sample: coordinates of shape (3, T, V) plus a class label.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    /// Row-major (3, T, V) coordinate buffer in meters.
    pub coords: Vec<f32>,
    pub frames: usize,
    pub joints: usize,
    pub label: u32,
    pub source_id: String,
}

impl SkeletonSequence {
    pub fn new(coords: Vec<f32>, frames: usize, joints: usize, label: u32, source_id: String) -> Self {
        assert!(frames >= 1 && joints >= 2, "sequence needs T >= 1 and V >= 2");
        assert_eq!(coords.len(), COORD_CHANNELS * frames * joints, "coordinate buffer size mismatch");
        SkeletonSequence { coords, frames, joints, label, source_id }
    }

    pub fn at(&self, c: usize, t: usize, v: usize) -> f32 {
        self.coords[(c * self.frames + t) * self.joints + v]
    }

    /// Coordinates as an untracked tensor at the requested precision.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        let data: Vec<T> = self.coords.iter().map(|&v| T::from_f64_lossy(v as f64)).collect();
        Tensor::new(&[COORD_CHANNELS, self.frames, self.joints], data)
    }
}

/// Joint graph with the symmetric-normalized adjacency D^{-1/2}(A+I)D^{-1/2}.
#[derive(Debug, Clone)]
pub struct SkeletonGraph {
    pub joints: usize,
    pub edges: Vec<(usize, usize)>,
    /// Row-major (V, V) normalized adjacency.
    pub a_norm: Vec<f64>,
    /// Connectivity is a warning condition, not an error.
    pub connected: bool,
}

impl SkeletonGraph {
    pub fn new(edges: &[(usize, usize)], joints: usize) -> Result<Self, DataError> {
        let a_norm = adjacency_normalize(edges, joints)?;
        let connected = is_connected(edges, joints);
        Ok(SkeletonGraph { joints, edges: edges.to_vec(), a_norm, connected })
    }

    pub fn a_norm_tensor<T: Element>(&self) -> Tensor<T> {
        let data: Vec<T> = self.a_norm.iter().map(|&v| T::from_f64_lossy(v)).collect();
        Tensor::new(&[self.joints, self.joints], data)
    }
}

/// D^{-1/2}(A+I)D^{-1/2} for an undirected edge list. Self-loops are added
/// internally; explicit self-loops or duplicate edges are rejected.
pub fn adjacency_normalize(edges: &[(usize, usize)], joints: usize) -> Result<Vec<f64>, DataError> {
    let mut adj = vec![0.0f64; joints * joints];
    for i in 0..joints {
        adj[i * joints + i] = 1.0;
    }
    let mut seen = std::collections::HashSet::new();
    for &(i, j) in edges {
        if i >= joints || j >= joints {
            return Err(DataError::EdgeOutOfRange(i, j, joints));
        }
        if i == j {
            return Err(DataError::SelfLoop(i));
        }
        let key = (i.min(j), i.max(j));
        if !seen.insert(key) {
            return Err(DataError::DuplicateEdge(i, j));
        }
        adj[i * joints + j] = 1.0;
        adj[j * joints + i] = 1.0;
    }
    let degree: Vec<f64> = (0..joints)
        .map(|i| adj[i * joints..(i + 1) * joints].iter().sum())
        .collect();
    let dinv: Vec<f64> = degree.iter().map(|&d| 1.0 / d.sqrt()).collect();
    for i in 0..joints {
        for j in 0..joints {
            adj[i * joints + j] *= dinv[i] * dinv[j];
        }
    }
    Ok(adj)
}

fn is_connected(edges: &[(usize, usize)], joints: usize) -> bool {
    if joints == 0 {
        return true;
    }
    let mut seen = vec![false; joints];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &(a, b) in edges {
            let next = if a == u { b } else if b == u { a } else { continue };
            if next < joints && !seen[next] {
                seen[next] = true;
                stack.push(next);
            }
        }
    }
    seen.iter().all(|&s| s)
}

/// Root-center every frame and resample to `t_target` frames by linear
/// interpolation over the frame axis. Idempotent at fixed `t_target`.
pub fn normalize_sequence(
    s: &SkeletonSequence,
    root_joint: usize,
    t_target: usize,
) -> Result<SkeletonSequence, DataError> {
    if s.frames == 0 {
        return Err(DataError::EmptySequence);
    }
    if root_joint >= s.joints {
        return Err(DataError::RootOutOfRange(root_joint, s.joints));
    }
    let (t_in, v) = (s.frames, s.joints);
    // Root-center first, then resample.
    let mut centered = vec![0.0f32; s.coords.len()];
    for c in 0..COORD_CHANNELS {
        for t in 0..t_in {
            let root = s.at(c, t, root_joint);
            for j in 0..v {
                centered[(c * t_in + t) * v + j] = s.at(c, t, j) - root;
            }
        }
    }
    let mut out = vec![0.0f32; COORD_CHANNELS * t_target * v];
    for ti in 0..t_target {
        let pos = if t_target == 1 {
            0.0
        } else {
            ti as f64 * (t_in - 1) as f64 / (t_target - 1) as f64
        };
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(t_in - 1);
        let frac = (pos - lo as f64) as f32;
        for c in 0..COORD_CHANNELS {
            for j in 0..v {
                let a = centered[(c * t_in + lo) * v + j];
                let b = centered[(c * t_in + hi) * v + j];
                out[(c * t_target + ti) * v + j] = a + (b - a) * frac;
            }
        }
    }
    Ok(SkeletonSequence::new(out, t_target, v, s.label, s.source_id.clone()))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub class_names: Vec<String>,
    #[serde(rename = "V")]
    pub joints: usize,
    #[serde(rename = "T_target")]
    pub t_target: usize,
    pub edges: Vec<[usize; 2]>,
    pub count: usize,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn edge_pairs(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|e| (e[0], e[1])).collect()
    }

    fn validate(&self) -> Result<(), DataError> {
        if self.format_version != 1 {
            return Err(DataError::FormatVersion(self.format_version));
        }
        let mut names = std::collections::HashSet::new();
        for n in &self.class_names {
            if !names.insert(n) {
                return Err(DataError::DuplicateClassNames);
            }
        }
        if self.t_target < 8 {
            return Err(DataError::TTargetTooSmall(self.t_target));
        }
        Ok(())
    }
}

pub fn save_dataset(
    dir: &Path,
    manifest: &DatasetManifest,
    sequences: &[SkeletonSequence],
) -> Result<(), DataError> {
    manifest.validate()?;
    assert_eq!(sequences.len(), manifest.count, "manifest count mismatch on save");
    fs::create_dir_all(dir)?;
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(manifest)?)?;

    let mut buf: Vec<u8> = Vec::with_capacity(16 + sequences.len() * 64);
    buf.extend_from_slice(DATA_MAGIC);
    for s in sequences {
        buf.extend_from_slice(&s.label.to_le_bytes());
        buf.extend_from_slice(&(s.frames as u32).to_le_bytes());
        buf.extend_from_slice(&(s.joints as u32).to_le_bytes());
        buf.extend_from_slice(&(COORD_CHANNELS as u32).to_le_bytes());
        for v in &s.coords {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(dir.join("data.bin"))?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<SkeletonSequence>), DataError> {
    let manifest: DatasetManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    manifest.validate()?;

    let mut bytes = Vec::new();
    fs::File::open(dir.join("data.bin"))?.read_to_end(&mut bytes)?;
    if bytes.len() < 4 || &bytes[..4] != DATA_MAGIC {
        return Err(DataError::BadMagic);
    }
    let mut pos = 4usize;
    let classes = manifest.num_classes();
    let mut sequences = Vec::with_capacity(manifest.count);
    for sample in 0..manifest.count {
        let header = 16usize;
        if pos + header > bytes.len() {
            return Err(DataError::Truncated(sample));
        }
        let rd_u32 = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let label = rd_u32(pos);
        let t = rd_u32(pos + 4) as usize;
        let v = rd_u32(pos + 8) as usize;
        let c = rd_u32(pos + 12) as usize;
        pos += header;
        if c != COORD_CHANNELS {
            return Err(DataError::ChannelCountMismatch { sample, c, expected: COORD_CHANNELS });
        }
        if v != manifest.joints {
            return Err(DataError::JointCountMismatch { sample, v, expected: manifest.joints });
        }
        if label as usize >= classes {
            return Err(DataError::LabelOutOfRange { sample, label, classes });
        }
        let n = COORD_CHANNELS * t * v;
        if pos + n * 4 > bytes.len() {
            return Err(DataError::Truncated(sample));
        }
        let mut coords = Vec::with_capacity(n);
        for k in 0..n {
            let at = pos + k * 4;
            let val = f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
            if !val.is_finite() {
                return Err(DataError::NonFinite { sample });
            }
            coords.push(val);
        }
        pos += n * 4;
        sequences.push(SkeletonSequence::new(coords, t, v, label, format!("sample-{sample}")));
    }
    if pos != bytes.len() {
        return Err(DataError::CountMismatch {
            found: manifest.count + 1, // trailing bytes imply more samples than declared
            expected: manifest.count,
        });
    }
    Ok((manifest, sequences))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_node_adjacency_is_all_half() {
        let a = adjacency_normalize(&[(0, 1)], 2).unwrap();
        for v in a {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn single_node_is_unit() {
        let a = adjacency_normalize(&[], 1).unwrap();
        assert_eq!(a, vec![1.0]);
    }

    #[test]
    fn path_graph_symmetric_spectral_radius_at_most_one() {
        let v = 3;
        let a = adjacency_normalize(&[(0, 1), (1, 2)], v).unwrap();
        for i in 0..v {
            for j in 0..v {
                assert!((a[i * v + j] - a[j * v + i]).abs() < 1e-12);
                assert!(a[i * v + j] >= 0.0);
            }
        }
        // Power-iteration oracle for the dominant eigenvalue.
        let mut x = vec![1.0f64; v];
        for _ in 0..200 {
            let mut y = vec![0.0f64; v];
            for i in 0..v {
                for j in 0..v {
                    y[i] += a[i * v + j] * x[j];
                }
            }
            let norm = y.iter().map(|t| t * t).sum::<f64>().sqrt();
            x = y.iter().map(|t| t / norm).collect();
        }
        let mut ax = vec![0.0f64; v];
        for i in 0..v {
            for j in 0..v {
                ax[i] += a[i * v + j] * x[j];
            }
        }
        let lambda: f64 = ax.iter().zip(&x).map(|(p, q)| p * q).sum();
        assert!(lambda.abs() <= 1.0 + 1e-6, "spectral radius {lambda}");
    }

    #[test]
    fn self_loop_rejected() {
        assert!(matches!(adjacency_normalize(&[(1, 1)], 3), Err(DataError::SelfLoop(1))));
    }

    #[test]
    fn out_of_range_edge_rejected() {
        assert!(matches!(adjacency_normalize(&[(0, 5)], 3), Err(DataError::EdgeOutOfRange(0, 5, 3))));
    }

    fn ramp_sequence() -> SkeletonSequence {
        // T=2, V=2; joint 1 moves 0 -> 1 on channel 0, root drifts.
        let mut coords = vec![0.0f32; 3 * 2 * 2];
        coords[0 * 4 + 0 * 2 + 1] = 0.0;
        coords[0 * 4 + 1 * 2 + 1] = 1.0;
        SkeletonSequence::new(coords, 2, 2, 0, "t".into())
    }

    #[test]
    fn resample_linear_interpolation() {
        let s = ramp_sequence();
        let out = normalize_sequence(&s, 0, 3).unwrap();
        assert_eq!(out.at(0, 0, 1), 0.0);
        assert_eq!(out.at(0, 1, 1), 0.5);
        assert_eq!(out.at(0, 2, 1), 1.0);
    }

    #[test]
    fn normalize_zeroes_root_and_is_idempotent() {
        let mut coords = Vec::new();
        for k in 0..3 * 5 * 4 {
            coords.push(((k * 37 % 11) as f32) * 0.1 - 0.3);
        }
        let s = SkeletonSequence::new(coords, 5, 4, 1, "x".into());
        let a = normalize_sequence(&s, 0, 8).unwrap();
        for c in 0..3 {
            for t in 0..8 {
                assert!(a.at(c, t, 0).abs() < 1e-7, "root not centered");
            }
        }
        let b = normalize_sequence(&a, 0, 8).unwrap();
        for (x, y) in a.coords.iter().zip(&b.coords) {
            assert!((x - y).abs() < 1e-7);
        }
    }

    #[test]
    fn centered_fixed_point() {
        let s = ramp_sequence();
        let a = normalize_sequence(&s, 0, 2).unwrap();
        let b = normalize_sequence(&a, 0, 2).unwrap();
        for (x, y) in a.coords.iter().zip(&b.coords) {
            assert!((x - y).abs() < 1e-7);
        }
    }

    fn tiny_manifest(count: usize) -> DatasetManifest {
        DatasetManifest {
            format_version: 1,
            class_names: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            joints: 3,
            t_target: 8,
            edges: vec![[0, 1], [1, 2]],
            count,
        }
    }

    fn random_sequences(n: usize) -> Vec<SkeletonSequence> {
        (0..n)
            .map(|i| {
                let coords: Vec<f32> =
                    (0..3 * 8 * 3).map(|k| ((k + i * 7) as f32 * 0.173).sin()).collect();
                SkeletonSequence::new(coords, 8, 3, (i % 4) as u32, format!("s{i}"))
            })
            .collect()
    }

    #[test]
    fn save_load_roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let seqs = random_sequences(10);
        let manifest = tiny_manifest(10);
        save_dataset(dir.path(), &manifest, &seqs).unwrap();
        let (m2, s2) = load_dataset(dir.path()).unwrap();
        assert_eq!(m2, manifest);
        assert_eq!(s2.len(), 10);
        for (a, b) in seqs.iter().zip(&s2) {
            assert_eq!(a.label, b.label);
            for (x, y) in a.coords.iter().zip(&b.coords) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn corrupted_magic_is_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &tiny_manifest(2), &random_sequences(2)).unwrap();
        let path = dir.path().join("data.bin");
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(DataError::BadMagic)));
    }

    #[test]
    fn out_of_range_label_names_sample() {
        let dir = tempfile::tempdir().unwrap();
        let mut seqs = random_sequences(3);
        seqs[1].label = 7;
        save_dataset(dir.path(), &tiny_manifest(3), &seqs).unwrap();
        match load_dataset(dir.path()) {
            Err(DataError::LabelOutOfRange { sample, label, classes }) => {
                assert_eq!((sample, label, classes), (1, 7, 4));
            }
            other => panic!("expected label error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_detected() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &tiny_manifest(2), &random_sequences(2)).unwrap();
        let path = dir.path().join("data.bin");
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(DataError::Truncated(1))));
    }
}
