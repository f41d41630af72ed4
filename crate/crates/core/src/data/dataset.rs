use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Error, Result};
use crate::seed::rng_for;
use crate::tensor::Tensor;

/// Extra height of each class mean along its own axis in [`generate_blobs`].
pub const BLOB_RADIUS: f64 = 3.0;
/// Shared shift of every class mean, so inputs start above the firing threshold.
pub const BLOB_OFFSET: f64 = 2.0;

/// Labelled feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(shape_err("Dataset::new", "features must be [N x d]"));
        }
        if labels.is_empty() || labels.len() != features.rows() {
            return Err(shape_err(
                "Dataset::new",
                format!("{} feature rows vs {} labels", features.rows(), labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        features.ensure_finite("Dataset::new")?;
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Gathers the given rows into a feature batch and label list.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
            labels.push(self.labels[i]);
        }
        (Tensor::from_parts(vec![indices.len(), d], data), labels)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::EmptyShard);
        }
        if indices.iter().any(|&i| i >= self.len()) {
            return Err(Error::InvalidArgument("subset index out of range".into()));
        }
        let (features, labels) = self.gather(indices);
        Ok(Dataset {
            features,
            labels,
            num_classes: self.num_classes,
        })
    }
}

/// Class mean for [`generate_blobs`]: a scaled basis vector plus
/// [`BLOB_OFFSET`] on every axis. Classes beyond `d` reuse an axis at a
/// larger radius, so any class count is supported.
pub fn blob_mean(class: usize, d: usize) -> Vec<f64> {
    let mut mean = vec![BLOB_OFFSET; d];
    let ring = (class / d) as f64;
    mean[class % d] += BLOB_RADIUS * (1.0 + ring);
    mean
}

/// Isotropic Gaussian clusters, one per class, `per_class` samples each,
/// stored class-major. The class means are fixed (see [`blob_mean`]); only
/// the noise depends on `seed`.
pub fn generate_blobs(
    num_classes: usize,
    per_class: usize,
    d: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes == 0 || per_class == 0 || d == 0 {
        return Err(Error::InvalidArgument("blob dimensions must be positive".into()));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::InvalidArgument(format!("spread must be >= 0, got {spread}")));
    }
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = rng_for(seed, &[]);
    let n = num_classes * per_class;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for class in 0..num_classes {
        let mean = blob_mean(class, d);
        for _ in 0..per_class {
            for &m in &mean {
                data.push(m + spread * noise.sample(&mut rng));
            }
            labels.push(class);
        }
    }
    Dataset::new(Tensor::new(vec![n, d], data)?, labels, num_classes)
}
