//! Datasets: the CIFAR-100 binary format and a synthetic quadrant task small
//! enough to train on in seconds. Images are dense (N, C, H, W) tensors with
//! values in [0, 1]; labels are class indices.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Read;
use std::path::{Path, PathBuf};

/// One CIFAR-100 record: coarse label, fine label, then 32x32 pixels for
/// each of the three channels.
const CIFAR_RECORD_BYTES: usize = 2 + 3 * 32 * 32;

#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Image dimensions (C, H, W).
    pub fn image_dims(&self) -> (usize, usize, usize) {
        let d = self.images.dims();
        (d[1], d[2], d[3])
    }

    /// Copy the rows at `indices` into a batch tensor plus its labels.
    pub fn select(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let d = self.images.dims();
        let row = d[1] * d[2] * d[3];
        let mut data = Vec::with_capacity(indices.len() * row);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Config(format!(
                    "index {i} out of range for {} samples",
                    self.len()
                )));
            }
            data.extend_from_slice(&self.images.data()[i * row..(i + 1) * row]);
            labels.push(self.labels[i]);
        }
        let batch = Tensor::from_vec(&[indices.len(), d[1], d[2], d[3]], data)?;
        Ok((batch, labels))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.bin",
            Split::Test => "test.bin",
        }
    }
}

/// Resolve a dataset path: a file is taken as-is, a directory is searched
/// for the split's conventional file name (directly or under
/// `cifar-100-binary/`).
fn resolve_cifar_path(path: &Path, split: Split) -> Result<PathBuf> {
    if path.is_file() {
        return Ok(path.to_path_buf());
    }
    if path.is_dir() {
        for candidate in [
            path.join(split.file_name()),
            path.join("cifar-100-binary").join(split.file_name()),
        ] {
            if candidate.is_file() {
                return Ok(candidate);
            }
        }
        return Err(Error::Config(format!(
            "no {} under {}",
            split.file_name(),
            path.display()
        )));
    }
    Err(Error::Config(format!("dataset path {} does not exist", path.display())))
}

/// Number of records in a CIFAR-100 binary file, from its size alone. A size
/// that is not a whole number of records is a corruption signal and errors.
pub fn count_cifar100_records(path: impl AsRef<Path>) -> Result<usize> {
    let len = std::fs::metadata(path.as_ref())?.len() as usize;
    if len % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::Format(format!(
            "{} bytes is not a whole number of {CIFAR_RECORD_BYTES}-byte records",
            len
        )));
    }
    Ok(len / CIFAR_RECORD_BYTES)
}

/// Load CIFAR-100 fine-label records, scaling pixels to [0, 1]. `limit`
/// caps the number of records read from the front of the file.
pub fn load_cifar100(
    path: impl AsRef<Path>,
    split: Split,
    limit: Option<usize>,
) -> Result<Dataset> {
    let file_path = resolve_cifar_path(path.as_ref(), split)?;
    let total = count_cifar100_records(&file_path)?;
    if total == 0 {
        return Err(Error::Format(format!("{} holds no records", file_path.display())));
    }
    let take = limit.map_or(total, |l| l.min(total));
    let mut reader = std::io::BufReader::new(std::fs::File::open(&file_path)?);
    let mut images = Vec::with_capacity(take * 3 * 32 * 32);
    let mut labels = Vec::with_capacity(take);
    let mut record = [0u8; CIFAR_RECORD_BYTES];
    for _ in 0..take {
        reader.read_exact(&mut record)?;
        // record[0] is the coarse label; only the fine label is kept.
        let fine = record[1] as usize;
        if fine >= 100 {
            return Err(Error::Format(format!("fine label {fine} out of range")));
        }
        labels.push(fine);
        images.extend(record[2..].iter().map(|&b| b as f64 / 255.0));
    }
    Ok(Dataset {
        images: Tensor::from_vec(&[take, 3, 32, 32], images)?,
        labels,
        classes: 100,
    })
}

/// Synthetic four-class task: one Gaussian blob per image, centered inside a
/// uniformly chosen quadrant with at least one standard deviation of margin,
/// over low uniform noise. The label is the quadrant. Construction asserts
/// that the labeled quadrant holds the most energy, so the task is exactly
/// learnable from spatial statistics.
pub fn synth_quadrant(n: usize, h: usize, w: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Config("need at least one sample".into()));
    }
    if h < 4 || w < 4 || h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Config(format!(
            "quadrant task needs even extents of at least 4, got {h}x{w}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = (h.min(w) as f64) / 8.0;
    let (hh, hw) = (h / 2, w / 2);
    let mut images = Vec::with_capacity(n * 3 * h * w);
    let mut labels = Vec::with_capacity(n);
    for sample in 0..n {
        let quadrant: usize = rng.gen_range(0..4);
        let (row0, col0) = (hh * (quadrant / 2), hw * (quadrant % 2));
        // Keep the center at least sigma away from every quadrant edge.
        let cy = rng.gen_range(row0 as f64 + sigma..(row0 + hh) as f64 - sigma);
        let cx = rng.gen_range(col0 as f64 + sigma..(col0 + hw) as f64 - sigma);
        let mut plane = vec![0.0f64; h * w];
        let mut energy = [0.0f64; 4];
        for row in 0..h {
            for col in 0..w {
                let dy = row as f64 - cy;
                let dx = col as f64 - cx;
                let blob = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
                let noise: f64 = rng.gen_range(0.0..0.1);
                let v = (blob + noise).min(1.0);
                plane[row * w + col] = v;
                let q = 2 * usize::from(row >= hh) + usize::from(col >= hw);
                energy[q] += v;
            }
        }
        let argmax = (0..4).max_by(|&a, &b| energy[a].total_cmp(&energy[b])).unwrap();
        if argmax != quadrant {
            return Err(Error::Numeric(format!(
                "sample {sample}: quadrant {quadrant} labeled but {argmax} has most energy"
            )));
        }
        for _ in 0..3 {
            images.extend_from_slice(&plane);
        }
        labels.push(quadrant);
    }
    Ok(Dataset {
        images: Tensor::from_vec(&[n, 3, h, w], images)?,
        labels,
        classes: 4,
    })
}
