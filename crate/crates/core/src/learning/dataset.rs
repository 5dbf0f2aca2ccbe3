//! Datasets and client partitions.
//!
//! MNIST is read from the standard big-endian IDX files (magic 2051
//! for images, 2049 for labels) with pixels scaled to [0, 1]. A
//! synthetic Gaussian-cluster dataset stands in for MNIST in fast
//! tests. Partitions are either iid (uniform random disjoint split)
//! or non-iid in the label-shard style: samples grouped by label, cut
//! into `2 N` single-label shards, two shards dealt to each client, so
//! every client holds at most two distinct labels.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// A labeled dataset with dense `f32` features (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f32>,
    pub labels: Vec<u8>,
    pub n_samples: usize,
    pub n_features: usize,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f32>, labels: Vec<u8>, n_features: usize, n_classes: usize) -> Result<Dataset> {
        if n_features == 0 {
            return Err(Error::Dataset("feature dimension must be positive".into()));
        }
        if features.len() != labels.len() * n_features {
            return Err(Error::Dimension(format!(
                "feature buffer {} does not match {} samples x {} features",
                features.len(),
                labels.len(),
                n_features
            )));
        }
        if labels.iter().any(|&y| (y as usize) >= n_classes) {
            return Err(Error::Dataset("label out of class range".into()));
        }
        Ok(Dataset { n_samples: labels.len(), features, labels, n_features, n_classes })
    }

    #[inline]
    pub fn feature_row(&self, sample: usize) -> &[f32] {
        let d = self.n_features;
        &self.features[sample * d..(sample + 1) * d]
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Dataset(format!("{}: truncated header", path.display())))
}

/// Parse the standard MNIST IDX pair. Pixels are scaled to [0, 1];
/// the class count is the largest label plus one.
pub fn load_mnist(image_path: &Path, label_path: &Path) -> Result<Dataset> {
    let images = read_file(image_path)?;
    let labels = read_file(label_path)?;

    let image_magic = be_u32(&images, 0, image_path)?;
    if image_magic != 2051 {
        return Err(Error::Dataset(format!(
            "{}: expected image magic 2051, got {image_magic}",
            image_path.display()
        )));
    }
    let label_magic = be_u32(&labels, 0, label_path)?;
    if label_magic != 2049 {
        return Err(Error::Dataset(format!(
            "{}: expected label magic 2049, got {label_magic}",
            label_path.display()
        )));
    }

    let n_images = be_u32(&images, 4, image_path)? as usize;
    let rows = be_u32(&images, 8, image_path)? as usize;
    let cols = be_u32(&images, 12, image_path)? as usize;
    let n_labels = be_u32(&labels, 4, label_path)? as usize;
    if n_images != n_labels {
        return Err(Error::Dataset(format!(
            "image count {n_images} does not match label count {n_labels}"
        )));
    }
    let n_features = rows * cols;
    let pixel_bytes = images
        .get(16..16 + n_images * n_features)
        .ok_or_else(|| Error::Dataset(format!("{}: truncated pixel data", image_path.display())))?;
    let label_bytes = labels
        .get(8..8 + n_labels)
        .ok_or_else(|| Error::Dataset(format!("{}: truncated label data", label_path.display())))?;

    let features: Vec<f32> = pixel_bytes.iter().map(|&p| p as f32 / 255.0).collect();
    let label_vec = label_bytes.to_vec();
    let n_classes = label_vec.iter().copied().max().unwrap_or(0) as usize + 1;
    Dataset::new(features, label_vec, n_features, n_classes)
}

/// Deterministic synthetic dataset: Gaussian clusters with
/// well-separated axis-aligned means, labels dealt round-robin.
pub fn synth_dataset(
    rng: &mut impl Rng,
    n_samples: usize,
    dim: usize,
    n_classes: usize,
) -> Result<Dataset> {
    if n_classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "synthetic dataset needs at least 2 classes, got {n_classes}"
        )));
    }
    if dim == 0 {
        return Err(Error::InvalidArgument("feature dimension must be positive".into()));
    }
    let mut features = Vec::with_capacity(n_samples * dim);
    let mut labels = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let class = i % n_classes;
        // mean: +-4 (scaled by reuse depth) on the axis class % dim
        let axis = class % dim;
        let sign = if (class / dim) % 2 == 0 { 1.0 } else { -1.0 };
        let magnitude = 4.0 * (1.0 + (class / (2 * dim)) as f32);
        for j in 0..dim {
            let mean = if j == axis { sign * magnitude } else { 0.0 };
            features.push(mean + gaussian(rng) as f32);
        }
        labels.push(class as u8);
    }
    Dataset::new(features, labels, dim, n_classes)
}

/// Standard-normal draw by Box-Muller.
fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Disjoint assignment of samples to clients.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    /// Per-client sample indices into the dataset.
    pub client_indices: Vec<Vec<u32>>,
    /// Per-client sample counts (beta_n).
    pub sample_counts: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionMode {
    Iid,
    NonIid,
}

/// Split a dataset across clients.
pub fn partition(
    dataset: &Dataset,
    n_clients: usize,
    mode: PartitionMode,
    rng: &mut impl Rng,
) -> Result<Partition> {
    if n_clients == 0 {
        return Err(Error::InvalidArgument("need at least one client".into()));
    }
    if dataset.n_samples < n_clients {
        return Err(Error::Dataset(format!(
            "{} samples cannot cover {} clients",
            dataset.n_samples, n_clients
        )));
    }
    let indices = match mode {
        PartitionMode::Iid => {
            let mut all: Vec<u32> = (0..dataset.n_samples as u32).collect();
            all.shuffle(rng);
            chunk_evenly(&all, n_clients)
        }
        PartitionMode::NonIid => {
            if dataset.n_samples < 2 * n_clients {
                return Err(Error::Dataset(format!(
                    "{} samples cannot form {} label shards",
                    dataset.n_samples,
                    2 * n_clients
                )));
            }
            let mut shards = label_shards(dataset, 2 * n_clients);
            shards.shuffle(rng);
            shards
                .chunks_exact(2)
                .map(|pair| {
                    let mut both = pair[0].clone();
                    both.extend_from_slice(&pair[1]);
                    both
                })
                .collect()
        }
    };
    let sample_counts = indices.iter().map(Vec::len).collect();
    Ok(Partition { client_indices: indices, sample_counts })
}

fn chunk_evenly(all: &[u32], parts: usize) -> Vec<Vec<u32>> {
    let n = all.len();
    let base = n / parts;
    let extra = n % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        out.push(all[start..start + len].to_vec());
        start += len;
    }
    out
}

/// Cut the dataset into `total` single-label shards: samples are
/// grouped by label and each group is split into a number of shards
/// proportional to its size (largest-remainder rounding). Keeping
/// shards within label boundaries guarantees each client's two shards
/// span at most two distinct labels.
fn label_shards(dataset: &Dataset, total: usize) -> Vec<Vec<u32>> {
    let mut by_label: Vec<Vec<u32>> = vec![Vec::new(); dataset.n_classes];
    for (i, &y) in dataset.labels.iter().enumerate() {
        by_label[y as usize].push(i as u32);
    }
    by_label.retain(|group| !group.is_empty());

    let n = dataset.n_samples as f64;
    // integer shares with largest-remainder correction, at least 1 per label
    let mut shares: Vec<usize> = Vec::with_capacity(by_label.len());
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(by_label.len());
    for (g, group) in by_label.iter().enumerate() {
        let exact = total as f64 * group.len() as f64 / n;
        let floor = (exact.floor() as usize).clamp(1, group.len());
        shares.push(floor);
        remainders.push((g, exact - floor as f64));
    }
    let mut assigned: usize = shares.iter().sum();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    let mut cursor = 0;
    while assigned < total {
        let (g, _) = remainders[cursor % remainders.len()];
        if shares[g] < by_label[g].len() {
            shares[g] += 1;
            assigned += 1;
        }
        cursor += 1;
    }
    while assigned > total {
        let (g, _) = remainders[cursor % remainders.len()];
        if shares[g] > 1 {
            shares[g] -= 1;
            assigned -= 1;
        }
        cursor += 1;
    }

    let mut shards = Vec::with_capacity(total);
    for (group, &share) in by_label.iter().zip(&shares) {
        shards.extend(chunk_evenly(group, share));
    }
    shards
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use std::collections::BTreeSet;

    fn tiny_idx_pair() -> (Vec<u8>, Vec<u8>) {
        // 3 images of 2x2 pixels, labels 0, 1, 2
        let mut images = Vec::new();
        images.extend_from_slice(&2051u32.to_be_bytes());
        images.extend_from_slice(&3u32.to_be_bytes());
        images.extend_from_slice(&2u32.to_be_bytes());
        images.extend_from_slice(&2u32.to_be_bytes());
        images.extend_from_slice(&[0, 51, 102, 153, 204, 255, 0, 255, 10, 20, 30, 40]);
        let mut labels = Vec::new();
        labels.extend_from_slice(&2049u32.to_be_bytes());
        labels.extend_from_slice(&3u32.to_be_bytes());
        labels.extend_from_slice(&[0, 1, 2]);
        (images, labels)
    }

    fn write_pair(dir: &Path, images: &[u8], labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
        let img = dir.join("img-idx3-ubyte");
        let lbl = dir.join("lbl-idx1-ubyte");
        std::fs::write(&img, images).unwrap();
        std::fs::write(&lbl, labels).unwrap();
        (img, lbl)
    }

    #[test]
    fn idx_parser_matches_raw_bytes() {
        let dir = std::env::temp_dir().join("nomafl-idx-ok");
        std::fs::create_dir_all(&dir).unwrap();
        let (images, labels) = tiny_idx_pair();
        let (img, lbl) = write_pair(&dir, &images, &labels);
        let ds = load_mnist(&img, &lbl).unwrap();
        assert_eq!(ds.n_samples, 3);
        assert_eq!(ds.n_features, 4);
        assert_eq!(ds.n_classes, 3);
        assert_eq!(ds.labels, vec![0, 1, 2]);
        // oracle: recompute the scaling straight from the raw buffer
        for (i, &byte) in images[16..].iter().enumerate() {
            let (row, col) = (i / 4, i % 4);
            assert_eq!(ds.feature_row(row)[col], byte as f32 / 255.0);
        }
    }

    #[test]
    fn idx_parser_rejects_swapped_magic() {
        let dir = std::env::temp_dir().join("nomafl-idx-swap");
        std::fs::create_dir_all(&dir).unwrap();
        let (images, labels) = tiny_idx_pair();
        let (img, lbl) = write_pair(&dir, &images, &labels);
        // image magic where labels are expected
        assert!(load_mnist(&img, &img).is_err());
        assert!(load_mnist(&lbl, &lbl).is_err());
    }

    #[test]
    fn idx_parser_rejects_truncation_and_count_mismatch() {
        let dir = std::env::temp_dir().join("nomafl-idx-trunc");
        std::fs::create_dir_all(&dir).unwrap();
        let (images, labels) = tiny_idx_pair();
        let (img, lbl) = write_pair(&dir, &images[..images.len() - 2], &labels);
        assert!(load_mnist(&img, &lbl).is_err());

        let mut bad_labels = labels.clone();
        bad_labels[7] = 2; // claims 2 labels instead of 3
        let (img2, lbl2) = write_pair(&dir, &images, &bad_labels);
        assert!(load_mnist(&img2, &lbl2).is_err());
    }

    #[test]
    fn synth_dataset_is_deterministic() {
        let a = synth_dataset(&mut substream(3, Stream::Partition), 64, 4, 3).unwrap();
        let b = synth_dataset(&mut substream(3, Stream::Partition), 64, 4, 3).unwrap();
        assert_eq!(a, b);
        assert!(synth_dataset(&mut substream(3, Stream::Partition), 0, 4, 3)
            .unwrap()
            .labels
            .is_empty());
        assert!(synth_dataset(&mut substream(3, Stream::Partition), 8, 4, 1).is_err());
    }

    #[test]
    fn iid_partition_sizes_are_balanced() {
        let ds = synth_dataset(&mut substream(1, Stream::Partition), 1000, 3, 4).unwrap();
        let p = partition(&ds, 64, PartitionMode::Iid, &mut substream(1, Stream::Partition))
            .unwrap();
        assert_eq!(p.client_indices.len(), 64);
        let total: usize = p.sample_counts.iter().sum();
        assert_eq!(total, 1000);
        let (lo, hi) = (1000 / 64, 1000 / 64 + 1);
        assert!(p.sample_counts.iter().all(|&c| c == lo || c == hi));
    }

    #[test]
    fn single_client_holds_everything() {
        let ds = synth_dataset(&mut substream(2, Stream::Partition), 50, 2, 2).unwrap();
        let p = partition(&ds, 1, PartitionMode::Iid, &mut substream(2, Stream::Partition))
            .unwrap();
        assert_eq!(p.sample_counts, vec![50]);
    }

    #[test]
    fn noniid_partition_caps_labels_at_two() {
        let ds = synth_dataset(&mut substream(5, Stream::Partition), 4000, 4, 10).unwrap();
        let p = partition(&ds, 16, PartitionMode::NonIid, &mut substream(5, Stream::Partition))
            .unwrap();
        let mut seen = BTreeSet::new();
        for indices in &p.client_indices {
            let labels: BTreeSet<u8> = indices.iter().map(|&i| ds.labels[i as usize]).collect();
            assert!(labels.len() <= 2, "client spans {labels:?}");
            for &i in indices {
                assert!(seen.insert(i), "sample {i} assigned twice");
            }
        }
        assert_eq!(seen.len(), 4000); // exhaustive
    }

    #[test]
    fn partition_rejects_too_few_samples() {
        let ds = synth_dataset(&mut substream(6, Stream::Partition), 10, 2, 2).unwrap();
        assert!(partition(&ds, 11, PartitionMode::Iid, &mut substream(6, Stream::Partition))
            .is_err());
        assert!(partition(&ds, 6, PartitionMode::NonIid, &mut substream(6, Stream::Partition))
            .is_err());
    }
}
