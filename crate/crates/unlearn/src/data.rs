//! Dataset ingestion, retain/forget partitioning, and seeded batching.
//!
//! Images load from the classic IDX container pair (big-endian magic and
//! dimension fields, u8 pixels) into `[0,1]`-scaled `f64` rows. A
//! [`Partition`] splits sample indices by a label predicate;
//! [`BatchStream`]s cycle through shuffled epochs deterministically.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Pixel rows in `[0,1]` with integer class labels.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub images: Array2<f64>,
    pub labels: Vec<u8>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.images.ncols()
    }

    /// Copies the given rows into a dense batch.
    pub fn gather(&self, indices: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((indices.len(), self.input_dim()));
        for (r, &i) in indices.iter().enumerate() {
            out.row_mut(r).assign(&self.images.row(i));
        }
        out
    }

    /// First `n` samples after a seeded shuffle (desk-scale subsetting).
    pub fn seeded_subset(&self, n: usize, seed: u64) -> LabeledDataset {
        let n = n.min(self.len());
        let mut order: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        order.truncate(n);
        LabeledDataset {
            images: self.gather(&order),
            labels: order.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

fn read_u32_be(bytes: &[u8], pos: usize, needed_for: usize) -> Result<u32> {
    if pos + 4 > bytes.len() {
        return Err(Error::TruncatedFile {
            needed: needed_for,
            got: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes(bytes[pos..pos + 4].try_into().unwrap()))
}

/// Loads an IDX image/label file pair, scaling pixels by 1/255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let img_bytes = fs::read(images_path)?;
    let lbl_bytes = fs::read(labels_path)?;

    let magic = read_u32_be(&img_bytes, 0, 16)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: IMAGE_MAGIC,
        });
    }
    let n = read_u32_be(&img_bytes, 4, 16)? as usize;
    let rows = read_u32_be(&img_bytes, 8, 16)? as usize;
    let cols = read_u32_be(&img_bytes, 12, 16)? as usize;
    let pixel_count = n * rows * cols;
    if img_bytes.len() < 16 + pixel_count {
        return Err(Error::TruncatedFile {
            needed: 16 + pixel_count,
            got: img_bytes.len(),
        });
    }

    let lmagic = read_u32_be(&lbl_bytes, 0, 8)?;
    if lmagic != LABEL_MAGIC {
        return Err(Error::BadMagic {
            found: lmagic,
            expected: LABEL_MAGIC,
        });
    }
    let ln = read_u32_be(&lbl_bytes, 4, 8)? as usize;
    if ln != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: ln,
        });
    }
    if lbl_bytes.len() < 8 + ln {
        return Err(Error::TruncatedFile {
            needed: 8 + ln,
            got: lbl_bytes.len(),
        });
    }

    let dim = rows * cols;
    let mut images = Array2::zeros((n, dim));
    for i in 0..n {
        for j in 0..dim {
            images[(i, j)] = img_bytes[16 + i * dim + j] as f64 / 255.0;
        }
    }
    let labels = lbl_bytes[8..8 + ln].to_vec();
    Ok(LabeledDataset { images, labels })
}

/// Disjoint retain/forget index lists covering a dataset.
#[derive(Debug, Clone)]
pub struct Partition {
    pub retain_indices: Vec<usize>,
    pub forget_indices: Vec<usize>,
}

/// Splits indices by membership of the label in `forget_labels`.
pub fn partition_by_label(dataset: &LabeledDataset, forget_labels: &[u8]) -> Result<Partition> {
    let mut retain = Vec::new();
    let mut forget = Vec::new();
    for (i, l) in dataset.labels.iter().enumerate() {
        if forget_labels.contains(l) {
            forget.push(i);
        } else {
            retain.push(i);
        }
    }
    if forget.is_empty() {
        return Err(Error::EmptyForgetSet);
    }
    if retain.is_empty() {
        return Err(Error::EmptyRetainSet);
    }
    Ok(Partition {
        retain_indices: retain,
        forget_indices: forget,
    })
}

/// Deterministic epoch cycler over a fixed index set.
///
/// Each epoch is a fresh seeded permutation visited exactly once; the
/// final partial batch is emitted truncated rather than dropped.
#[derive(Debug, Clone)]
pub struct BatchStream {
    indices: Vec<usize>,
    perm: Vec<usize>,
    cursor: usize,
    rng: ChaCha12Rng,
}

impl BatchStream {
    pub fn new(indices: Vec<usize>, seed: u64) -> Self {
        assert!(!indices.is_empty(), "cannot stream over an empty index set");
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut perm = indices.clone();
        perm.shuffle(&mut rng);
        BatchStream {
            indices,
            perm,
            cursor: 0,
            rng,
        }
    }

    /// Next batch of at most `b` dataset indices.
    pub fn next_batch(&mut self, b: usize) -> Vec<usize> {
        debug_assert!(b >= 1);
        if self.cursor >= self.perm.len() {
            self.perm = self.indices.clone();
            self.perm.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + b).min(self.perm.len());
        let out = self.perm[self.cursor..end].to_vec();
        self.cursor = end;
        out
    }

    /// Gathers the next batch's rows from `dataset`.
    pub fn next_images(&mut self, dataset: &LabeledDataset, b: usize) -> Array2<f64> {
        let idx = self.next_batch(b);
        dataset.gather(&idx)
    }

    pub fn epoch_len(&self, b: usize) -> usize {
        self.indices.len().div_ceil(b)
    }
}

/// Draws a standard-normal matrix from a dedicated RNG stream.
pub fn sample_normal(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        rng.sample::<f64, _>(rand_distr::StandardNormal)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_bytes(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend(IMAGE_MAGIC.to_be_bytes());
        v.extend(n.to_be_bytes());
        v.extend(rows.to_be_bytes());
        v.extend(cols.to_be_bytes());
        v.extend(pixels);
        v
    }

    fn label_bytes(labels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend(LABEL_MAGIC.to_be_bytes());
        v.extend((labels.len() as u32).to_be_bytes());
        v.extend(labels);
        v
    }

    fn write_pair(dir: &Path, img: &[u8], lbl: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
        let ip = dir.join("images");
        let lp = dir.join("labels");
        fs::write(&ip, img).unwrap();
        fs::write(&lp, lbl).unwrap();
        (ip, lp)
    }

    #[test]
    fn loads_a_two_sample_file() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..2 * 28 * 28).map(|i| (i % 256) as u8).collect();
        let (ip, lp) = write_pair(
            dir.path(),
            &idx_bytes(2, 28, 28, &pixels),
            &label_bytes(&[3, 7]),
        );
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.input_dim(), 784);
        assert_eq!(ds.labels, vec![3, 7]);
        // byte 255 → exactly 1.0
        assert_eq!(ds.images[(0, 255)], 1.0);
        assert!(ds.images.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = idx_bytes(1, 2, 2, &[0, 0, 0, 0]);
        img[0] = 0xFF;
        let (ip, lp) = write_pair(dir.path(), &img, &label_bytes(&[1]));
        assert!(matches!(load_idx(&ip, &lp), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_pair(
            dir.path(),
            &idx_bytes(2, 2, 2, &[0; 8]),
            &label_bytes(&[1, 2, 3]),
        );
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(Error::CountMismatch {
                images: 2,
                labels: 3
            })
        ));
    }

    #[test]
    fn truncated_pixels_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_pair(
            dir.path(),
            &idx_bytes(2, 2, 2, &[0; 5]),
            &label_bytes(&[1, 2]),
        );
        assert!(matches!(load_idx(&ip, &lp), Err(Error::TruncatedFile { .. })));
    }

    #[test]
    fn partition_splits_by_membership() {
        let ds = LabeledDataset {
            images: Array2::zeros((4, 2)),
            labels: vec![0, 1, 1, 2],
        };
        let p = partition_by_label(&ds, &[1]).unwrap();
        assert_eq!(p.retain_indices, vec![0, 3]);
        assert_eq!(p.forget_indices, vec![1, 2]);
    }

    #[test]
    fn degenerate_partitions_error() {
        let ds = LabeledDataset {
            images: Array2::zeros((3, 2)),
            labels: vec![1, 1, 1],
        };
        // forgetting every label present leaves no retain set
        assert!(matches!(
            partition_by_label(&ds, &[1]),
            Err(Error::EmptyRetainSet)
        ));
        // forgetting an absent label leaves no forget set
        assert!(matches!(
            partition_by_label(&ds, &[5]),
            Err(Error::EmptyForgetSet)
        ));
    }

    #[test]
    fn stream_covers_each_epoch_exactly_once() {
        let mut s = BatchStream::new(vec![0, 1, 2, 3], 9);
        let b1 = s.next_batch(2);
        let b2 = s.next_batch(2);
        let mut seen: Vec<usize> = b1.iter().chain(b2.iter()).copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3]);
        // next call starts a fresh epoch
        let b3 = s.next_batch(4);
        let mut seen2 = b3.clone();
        seen2.sort_unstable();
        assert_eq!(seen2, vec![0, 1, 2, 3]);
    }

    #[test]
    fn final_partial_batch_is_truncated_not_dropped() {
        let mut s = BatchStream::new((0..10).collect(), 3);
        assert_eq!(s.epoch_len(4), 3);
        let sizes: Vec<usize> = (0..3).map(|_| s.next_batch(4).len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn equal_seeds_give_equal_streams() {
        let mut a = BatchStream::new((0..50).collect(), 123);
        let mut b = BatchStream::new((0..50).collect(), 123);
        for _ in 0..20 {
            assert_eq!(a.next_batch(7), b.next_batch(7));
        }
        let mut c = BatchStream::new((0..50).collect(), 124);
        let differs = (0..20).any(|_| a.next_batch(7) != c.next_batch(7));
        assert!(differs, "different seeds should diverge");
    }

    #[test]
    fn seeded_subset_is_reproducible() {
        let ds = LabeledDataset {
            images: Array2::from_shape_fn((20, 3), |(i, j)| (i * 3 + j) as f64),
            labels: (0..20).map(|i| (i % 10) as u8).collect(),
        };
        let a = ds.seeded_subset(8, 4);
        let b = ds.seeded_subset(8, 4);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.images, b.images);
        assert_eq!(a.len(), 8);
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn partition_is_disjoint_and_covering(labels in proptest::collection::vec(0u8..10, 2..200)) {
            let ds = LabeledDataset {
                images: Array2::zeros((labels.len(), 1)),
                labels: labels.clone(),
            };
            match partition_by_label(&ds, &[1]) {
                Ok(p) => {
                    let mut all: Vec<usize> = p.retain_indices.iter().chain(p.forget_indices.iter()).copied().collect();
                    all.sort_unstable();
                    prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
                    for i in &p.forget_indices {
                        prop_assert_eq!(labels[*i], 1);
                    }
                    for i in &p.retain_indices {
                        prop_assert_ne!(labels[*i], 1);
                    }
                }
                Err(Error::EmptyForgetSet) => prop_assert!(!labels.contains(&1)),
                Err(Error::EmptyRetainSet) => prop_assert!(labels.iter().all(|&l| l == 1)),
                Err(e) => prop_assert!(false, "unexpected error {}", e),
            }
        }

        #[test]
        fn epochs_visit_every_index(n in 1usize..40, b in 1usize..50, seed in 0u64..1000) {
            let mut s = BatchStream::new((0..n).collect(), seed);
            let mut seen = Vec::new();
            let batches = n.div_ceil(b);
            for _ in 0..batches {
                seen.extend(s.next_batch(b));
            }
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }
    }
}
