//! Synthetic datasets, vector-space augmentations and CSV loading.

use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub items: Matrix,
    pub labels: Option<Vec<usize>>,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(items: Matrix, labels: Option<Vec<usize>>) -> Result<Self> {
        let class_count = match &labels {
            Some(l) => {
                if l.len() != items.rows() {
                    return Err(Error::shape("dataset labels", items.rows(), l.len()));
                }
                l.iter().max().map_or(0, |m| m + 1)
            }
            None => 0,
        };
        Ok(Self {
            items,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.items.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.items.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.items.cols()
    }

    pub fn item(&self, i: usize) -> &[f64] {
        self.items.row(i)
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels.as_ref().map(|l| l[i])
    }

    /// Per-class means of the raw items.
    pub fn class_centroids(&self) -> Option<Vec<Vec<f64>>> {
        let labels = self.labels.as_ref()?;
        let mut sums = vec![vec![0.0; self.dim()]; self.class_count];
        let mut counts = vec![0usize; self.class_count];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(self.item(i)) {
                *s += v;
            }
        }
        for (s, &c) in sums.iter_mut().zip(&counts) {
            if c > 0 {
                s.iter_mut().for_each(|v| *v /= c as f64);
            }
        }
        Some(sums)
    }
}

/// Gaussian blobs: class centers `~ N(0, separation²·I)`, points
/// `~ N(center, spread²·I)`. Item `k` belongs to class `k mod classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub spread: f64,
    pub separation: f64,
    pub seed: u64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            classes: 8,
            per_class: 512,
            dim: 64,
            spread: 1.0,
            separation: 0.3,
            seed: 0,
        }
    }
}

impl BlobSpec {
    fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.per_class == 0 || self.dim == 0 {
            return Err(Error::config("blobs", "classes, per_class and dim must be positive"));
        }
        if !(self.spread > 0.0) || !(self.separation > 0.0) {
            return Err(Error::config("blobs", "spread and separation must be positive"));
        }
        Ok(())
    }

    fn centers(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let normal = Normal::new(0.0, self.separation).expect("positive separation");
        (0..self.classes)
            .map(|_| (0..self.dim).map(|_| normal.sample(&mut rng)).collect())
            .collect()
    }

    fn draw(&self, centers: &[Vec<f64>], per_class: usize, stream: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let normal = Normal::new(0.0, self.spread).expect("positive spread");
        let n = per_class * self.classes;
        let mut items = Matrix::zeros(n, self.dim);
        let mut labels = Vec::with_capacity(n);
        for k in 0..n {
            let c = k % self.classes;
            for (x, m) in items.row_mut(k).iter_mut().zip(&centers[c]) {
                *x = m + normal.sample(&mut rng);
            }
            labels.push(c);
        }
        Dataset {
            items,
            labels: Some(labels),
            class_count: self.classes,
        }
    }
}

pub fn make_blobs(spec: &BlobSpec) -> Result<Dataset> {
    spec.validate()?;
    Ok(spec.draw(&spec.centers(), spec.per_class, 1))
}

/// Training blobs plus an independent held-out draw around the same centers.
pub fn make_blobs_with_holdout(spec: &BlobSpec, holdout_per_class: usize) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    if holdout_per_class == 0 {
        return Err(Error::config("holdout_per_class", "must be positive"));
    }
    let centers = spec.centers();
    Ok((spec.draw(&centers, spec.per_class, 1), spec.draw(&centers, holdout_per_class, 2)))
}

/// Vector analogs of image augmentations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub noise_sigma: f64,
    /// Fraction of coordinates zeroed (the analog of cropping).
    pub mask_fraction: f64,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            noise_sigma: 0.5,
            mask_fraction: 0.25,
            scale_min: 0.8,
            scale_max: 1.2,
        }
    }
}

impl AugmentationSpec {
    pub const IDENTITY: Self = Self {
        noise_sigma: 0.0,
        mask_fraction: 0.0,
        scale_min: 1.0,
        scale_max: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::config("noise_sigma", "must be ≥ 0"));
        }
        if !(0.0..1.0).contains(&self.mask_fraction) {
            return Err(Error::config("mask_fraction", "must lie in [0, 1)"));
        }
        if !(self.scale_min > 0.0) || !(self.scale_min <= self.scale_max) {
            return Err(Error::config("scale_jitter", "need 0 < min ≤ max"));
        }
        Ok(())
    }

    /// Draws one concrete transform for `dim`-dimensional inputs.
    pub fn sample<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Transform {
        let scale = if self.scale_min == self.scale_max {
            self.scale_min
        } else {
            rng.gen_range(self.scale_min..=self.scale_max)
        };
        let masked = (self.mask_fraction * dim as f64).floor() as usize;
        let mut mask = if masked > 0 {
            sample_indices(rng, dim, masked).into_vec()
        } else {
            Vec::new()
        };
        mask.sort_unstable();
        let noise = if self.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, self.noise_sigma).expect("validated sigma");
            (0..dim).map(|_| normal.sample(rng)).collect()
        } else {
            Vec::new()
        };
        Transform { scale, mask, noise }
    }
}

/// A sampled augmentation `x ↦ scale·(mask ⊙ x) + ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transform {
    pub scale: f64,
    /// Zeroed coordinates, ascending.
    pub mask: Vec<usize>,
    /// Additive noise; empty means none.
    pub noise: Vec<f64>,
}

impl Transform {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = x.iter().map(|v| self.scale * v).collect();
        for &m in &self.mask {
            y[m] = 0.0;
        }
        for (yi, e) in y.iter_mut().zip(&self.noise) {
            *yi += e;
        }
        y
    }
}

pub fn augment<R: Rng + ?Sized>(x: &[f64], spec: &AugmentationSpec, rng: &mut R) -> Vec<f64> {
    spec.sample(x.len(), rng).apply(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvOptions {
    /// Skip the first line.
    pub has_header: bool,
    /// Last column holds a non-negative integer class id.
    pub labeled: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            has_header: false,
            labeled: true,
        }
    }
}

pub fn load_csv_dataset(path: &Path, options: CsvOptions) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(options.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let n_features = record.len() - usize::from(options.labeled);
        if n_features == 0 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: "row has no feature columns".into(),
            });
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Schema {
                    path: path.to_path_buf(),
                    message: format!("line {line}: expected {w} columns, found {}", record.len()),
                })
            }
            _ => {}
        }
        let mut row = Vec::with_capacity(n_features);
        for (c, field) in record.iter().take(n_features).enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("column {}: {field:?} is not a number", c + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("column {}: non-finite value", c + 1),
                });
            }
            row.push(v);
        }
        if options.labeled {
            let field = &record[n_features];
            let l: usize = field.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("label {field:?} is not a non-negative integer"),
            })?;
            labels.push(l);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            message: "no data rows".into(),
        });
    }
    Dataset::new(Matrix::from_rows(&rows)?, options.labeled.then_some(labels))
}

pub fn write_csv_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    for i in 0..dataset.len() {
        let mut fields: Vec<String> = dataset.item(i).iter().map(|v| v.to_string()).collect();
        if let Some(l) = dataset.label(i) {
            fields.push(l.to_string());
        }
        writer.write_record(&fields).map_err(|e| csv_error(path, e))?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}

#[cfg(test)]
mod tests {
    use std::fs;

    use super::*;
    use crate::numcore::squared_distance;

    fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (c, m) in centroids.iter().enumerate() {
            let d = squared_distance(m, x);
            if d < best.1 {
                best = (c, d);
            }
        }
        best.0
    }

    #[test]
    fn single_class_blobs() {
        let spec = BlobSpec {
            classes: 1,
            per_class: 10,
            dim: 3,
            ..Default::default()
        };
        let d = make_blobs(&spec).unwrap();
        assert!(d.labels.unwrap().iter().all(|&l| l == 0));
    }

    #[test]
    fn blobs_are_deterministic_and_validated() {
        let spec = BlobSpec {
            per_class: 20,
            dim: 5,
            ..Default::default()
        };
        assert_eq!(make_blobs(&spec).unwrap(), make_blobs(&spec).unwrap());
        let bad = BlobSpec { spread: 0.0, ..spec.clone() };
        assert!(make_blobs(&bad).is_err());
        let (train, test) = make_blobs_with_holdout(&spec, 4).unwrap();
        assert_eq!(train, make_blobs(&spec).unwrap());
        assert_eq!(test.len(), 32);
    }

    #[test]
    fn well_separated_blobs_are_centroid_separable() {
        let spec = BlobSpec {
            classes: 8,
            per_class: 50,
            dim: 16,
            spread: 0.1,
            separation: 5.0,
            seed: 3,
        };
        let d = make_blobs(&spec).unwrap();
        let centroids = d.class_centroids().unwrap();
        let labels = d.labels.as_ref().unwrap();
        let correct = (0..d.len()).filter(|&i| nearest(&centroids, d.item(i)) == labels[i]).count();
        assert_eq!(correct, d.len());
    }

    #[test]
    fn null_augmentation_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = [1.0, -2.0, 3.5];
        assert_eq!(augment(&x, &AugmentationSpec::IDENTITY, &mut rng), x.to_vec());
    }

    #[test]
    fn masking_zeroes_exact_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = AugmentationSpec {
            mask_fraction: 0.5,
            ..AugmentationSpec::IDENTITY
        };
        for _ in 0..50 {
            let y = augment(&[1.0, 2.0, 3.0, 4.0], &spec, &mut rng);
            assert_eq!(y.iter().filter(|&&v| v == 0.0).count(), 2);
        }
    }

    #[test]
    fn noise_mean_is_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = AugmentationSpec {
            noise_sigma: 0.7,
            ..AugmentationSpec::IDENTITY
        };
        let x = [0.5, -1.0, 2.0];
        let n = 100_000;
        let mut mean = [0.0; 3];
        for _ in 0..n {
            for (m, v) in mean.iter_mut().zip(augment(&x, &spec, &mut rng)) {
                *m += v / n as f64;
            }
        }
        let bound = 3.0 * 0.7 / (n as f64).sqrt();
        for (m, xi) in mean.iter().zip(x) {
            assert!((m - xi).abs() < bound, "{m} vs {xi}");
        }
    }

    #[test]
    fn independent_views_differ() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = AugmentationSpec::default();
        let x = vec![1.0; 16];
        assert_ne!(augment(&x, &spec, &mut rng), augment(&x, &spec, &mut rng));
    }

    #[test]
    fn augmentation_preserves_labels_on_separated_blobs() {
        let spec = BlobSpec {
            classes: 8,
            per_class: 64,
            dim: 64,
            spread: 0.5,
            separation: 5.0,
            seed: 4,
        };
        let d = make_blobs(&spec).unwrap();
        let centroids = d.class_centroids().unwrap();
        let labels = d.labels.as_ref().unwrap();
        let aug = AugmentationSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trials = 10_000;
        let mut hits = 0;
        for t in 0..trials {
            let i = t % d.len();
            if nearest(&centroids, &augment(d.item(i), &aug, &mut rng)) == labels[i] {
                hits += 1;
            }
        }
        assert!(hits as f64 >= 0.99 * trials as f64, "{hits}");
    }

    #[test]
    fn csv_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        fs::write(&path, "1.0,2.0,0\n-3.5,4.25,1\n").unwrap();
        let d = load_csv_dataset(&path, CsvOptions::default()).unwrap();
        assert_eq!(d.items.as_slice(), &[1.0, 2.0, -3.5, 4.25]);
        assert_eq!(d.labels, Some(vec![0, 1]));
        assert_eq!(d.class_count, 2);

        fs::write(&path, "a,b,label\n1.0,2.0,0\n").unwrap();
        let opts = CsvOptions {
            has_header: true,
            labeled: true,
        };
        assert_eq!(load_csv_dataset(&path, opts).unwrap().len(), 1);

        fs::write(&path, "1.0,2.0,0\n1.0,x,1\n").unwrap();
        match load_csv_dataset(&path, CsvOptions::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }

        fs::write(&path, "1.0,2.0,0\n1.0,1\n").unwrap();
        assert!(matches!(load_csv_dataset(&path, CsvOptions::default()), Err(Error::Schema { .. })));
    }

    #[test]
    fn csv_round_trip() {
        let spec = BlobSpec {
            classes: 3,
            per_class: 5,
            dim: 4,
            ..Default::default()
        };
        let d = make_blobs(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.csv");
        write_csv_dataset(&d, &path).unwrap();
        assert_eq!(load_csv_dataset(&path, CsvOptions::default()).unwrap(), d);
    }
}
