//! Synthetic regression and classification datasets, split across clients in
//! two heterogeneous blocks.

use std::fmt::Write as _;
use std::io::BufRead;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::seeded;

/// Records held by one client. Features are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    features: Vec<f64>,
    targets: Vec<f64>,
    dim: usize,
}

impl ClientDataset {
    pub fn new(client_id: usize, features: Vec<f64>, targets: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || targets.is_empty() {
            return Err(Error::Shape("client dataset needs n >= 1 and d >= 1".into()));
        }
        if features.len() != targets.len() * dim {
            return Err(Error::Shape(format!(
                "{} feature entries for {} records of dimension {dim}",
                features.len(),
                targets.len()
            )));
        }
        if features.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::Parameter("dataset contains non-finite entries".into()));
        }
        Ok(Self {
            client_id,
            features,
            targets,
            dim,
        })
    }

    pub fn from_matrix(client_id: usize, features: &DMatrix<f64>, targets: &DVector<f64>) -> Result<Self> {
        if features.nrows() != targets.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} targets",
                features.nrows(),
                targets.len()
            )));
        }
        let rows: Vec<f64> = features.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
        Self::new(client_id, rows, targets.iter().copied().collect(), features.ncols())
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn features_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.dim, &self.features)
    }

    /// Multiplies feature column j by `scales[j]`.
    pub fn scale_columns(&mut self, scales: &[f64]) {
        assert_eq!(scales.len(), self.dim);
        for row in self.features.chunks_exact_mut(self.dim) {
            for (v, s) in row.iter_mut().zip(scales) {
                *v *= s;
            }
        }
    }

    pub fn is_classification(&self) -> bool {
        self.targets.iter().all(|&y| y == 1.0 || y == -1.0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for j in 0..self.dim {
            let _ = write!(out, "f{j},");
        }
        out.push_str("y\n");
        for i in 0..self.len() {
            for v in self.row(i) {
                let _ = write!(out, "{},", fmt_f64(*v));
            }
            let _ = writeln!(out, "{}", fmt_f64(self.targets[i]));
        }
        out
    }

    pub fn from_csv(client_id: usize, reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parameter("empty dataset csv".into()))??;
        let columns = header.split(',').count();
        if columns < 2 || !header.ends_with(",y") && header != "y" {
            return Err(Error::Parameter(format!("bad dataset header `{header}`")));
        }
        let dim = columns - 1;
        let mut features = Vec::new();
        let mut targets = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let values: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parameter(format!("line {}: {e}", lineno + 2)))?;
            if values.len() != columns {
                return Err(Error::Shape(format!("line {}: expected {columns} fields", lineno + 2)));
            }
            features.extend_from_slice(&values[..dim]);
            targets.push(values[dim]);
        }
        Self::new(client_id, features, targets, dim)
    }
}

/// 17 significant digits, enough to round-trip an f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// A pooled dataset before it is split across clients.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub targets: DVector<f64>,
}

fn check_counts(n_samples: usize, n_features: usize, n_informative: usize) -> Result<()> {
    if n_samples == 0 || n_features == 0 {
        return Err(Error::Parameter("n_samples and n_features must be >= 1".into()));
    }
    if n_informative == 0 || n_informative > n_features {
        return Err(Error::Parameter(format!(
            "n_informative must be in [1, {n_features}], got {n_informative}"
        )));
    }
    Ok(())
}

fn informative_coordinates(rng: &mut impl Rng, n_features: usize, n_informative: usize) -> Vec<usize> {
    let mut coords: Vec<usize> = (0..n_features).collect();
    coords.shuffle(rng);
    coords.truncate(n_informative);
    coords.sort_unstable();
    coords
}

/// Linear-model regression data. Returns the dataset and the true coefficients.
pub fn make_regression(
    n_samples: usize,
    n_features: usize,
    n_informative: usize,
    noise_std: f64,
    seed: u64,
) -> Result<(Dataset, DVector<f64>)> {
    check_counts(n_samples, n_features, n_informative)?;
    if !(noise_std >= 0.0) {
        return Err(Error::Parameter(format!("noise_std must be >= 0, got {noise_std}")));
    }
    let mut rng = seeded(seed);
    // Coefficients first, so the model does not depend on n_samples.
    let mut coef = DVector::zeros(n_features);
    for j in informative_coordinates(&mut rng, n_features, n_informative) {
        coef[j] = 100.0 * rng.random::<f64>();
    }
    let features = DMatrix::from_fn(n_samples, n_features, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut targets = &features * &coef;
    if noise_std > 0.0 {
        for y in targets.iter_mut() {
            *y += noise_std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok((Dataset { features, targets }, coef))
}

/// Two balanced Gaussian classes with labels ±1, centred at ±`class_sep` on
/// `n_informative` randomly chosen coordinates. Rows are shuffled.
pub fn make_classification(
    n_samples: usize,
    n_features: usize,
    n_informative: usize,
    class_sep: f64,
    seed: u64,
) -> Result<Dataset> {
    check_counts(n_samples, n_features, n_informative)?;
    if !class_sep.is_finite() {
        return Err(Error::Parameter("class_sep must be finite".into()));
    }
    let mut rng = seeded(seed);
    let coords = informative_coordinates(&mut rng, n_features, n_informative);
    let mut labels: Vec<f64> = (0..n_samples).map(|i| if i < n_samples / 2 { 1.0 } else { -1.0 }).collect();
    labels.shuffle(&mut rng);
    let mut features = DMatrix::from_fn(n_samples, n_features, |_, _| rng.sample::<f64, _>(StandardNormal));
    for (i, &y) in labels.iter().enumerate() {
        for &j in &coords {
            features[(i, j)] += y * class_sep;
        }
    }
    Ok(Dataset {
        features,
        targets: DVector::from_vec(labels),
    })
}

/// First N/2 clients get contiguous equal shards of `a`, the rest shards of `b`.
pub fn split_two_blocks(a: &Dataset, b: &Dataset, n_clients: usize) -> Result<Vec<ClientDataset>> {
    if n_clients == 0 || !n_clients.is_multiple_of(2) {
        return Err(Error::Parameter(format!("n_clients must be even and positive, got {n_clients}")));
    }
    if a.features.ncols() != b.features.ncols() {
        return Err(Error::Shape("datasets have different feature counts".into()));
    }
    let half = n_clients / 2;
    let mut clients = Vec::with_capacity(n_clients);
    for (block, data) in [a, b].into_iter().enumerate() {
        let n = data.targets.len();
        if n % half != 0 {
            return Err(Error::Parameter(format!(
                "dataset of {n} records is not divisible into {half} shards"
            )));
        }
        let shard = n / half;
        for k in 0..half {
            let rows = data.features.rows(k * shard, shard).into_owned();
            let targets = data.targets.rows(k * shard, shard).into_owned();
            clients.push(ClientDataset::from_matrix(block * half + k, &rows, &targets)?);
        }
    }
    Ok(clients)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_regression_is_exactly_linear() {
        let (data, coef) = make_regression(50, 6, 3, 0.0, 11).unwrap();
        assert_eq!(data.targets, &data.features * &coef);
    }

    #[test]
    fn regression_informative_count() {
        let (_, coef) = make_regression(10, 20, 2, 10.0, 3).unwrap();
        assert_eq!(coef.iter().filter(|&&c| c == 0.0).count(), 18);
        assert!(coef.iter().all(|&c| (0.0..=100.0).contains(&c)));
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(make_regression(30, 5, 2, 1.0, 9).unwrap(), make_regression(30, 5, 2, 1.0, 9).unwrap());
        assert_eq!(
            make_classification(30, 5, 2, 1.0, 9).unwrap(),
            make_classification(30, 5, 2, 1.0, 9).unwrap()
        );
        assert_ne!(make_regression(30, 5, 2, 1.0, 9).unwrap(), make_regression(30, 5, 2, 1.0, 10).unwrap());
    }

    #[test]
    fn invalid_counts() {
        assert!(matches!(make_regression(10, 3, 4, 1.0, 0), Err(Error::Parameter(_))));
        assert!(matches!(make_classification(10, 3, 0, 1.0, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn classification_is_balanced() {
        let data = make_classification(1000, 4, 2, 1.0, 5).unwrap();
        assert_eq!(data.targets.iter().filter(|&&y| y == 1.0).count(), 500);
        assert_eq!(data.targets.iter().filter(|&&y| y == -1.0).count(), 500);
    }

    #[test]
    fn zero_separation_gives_label_symmetric_features() {
        // With class_sep = 0 the features carry no label information: the
        // class-conditional means agree up to sampling error.
        let data = make_classification(20_000, 3, 2, 0.0, 8).unwrap();
        for j in 0..3 {
            let (mut pos, mut neg, mut np, mut nn) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..data.targets.len() {
                if data.targets[i] > 0.0 {
                    pos += data.features[(i, j)];
                    np += 1.0;
                } else {
                    neg += data.features[(i, j)];
                    nn += 1.0;
                }
            }
            assert!((pos / np - neg / nn).abs() < 0.06);
        }
    }

    #[test]
    fn split_smallest_case() {
        let (a, _) = make_regression(7, 3, 1, 0.0, 1).unwrap();
        let (b, _) = make_regression(5, 3, 1, 0.0, 2).unwrap();
        let clients = split_two_blocks(&a, &b, 2).unwrap();
        assert_eq!(clients[0].features_matrix(), a.features);
        assert_eq!(clients[1].features_matrix(), b.features);
        assert_eq!(clients[1].client_id, 1);
    }

    #[test]
    fn split_sizes_and_partition() {
        let (a, _) = make_regression(1000, 4, 2, 1.0, 1).unwrap();
        let (b, _) = make_regression(1000, 4, 3, 1.0, 2).unwrap();
        let clients = split_two_blocks(&a, &b, 10).unwrap();
        assert!(clients.iter().all(|c| c.len() == 200));
        let mut shards: Vec<f64> = clients.iter().flat_map(|c| c.targets().to_vec()).collect();
        let mut inputs: Vec<f64> = a.targets.iter().chain(b.targets.iter()).copied().collect();
        shards.sort_by(f64::total_cmp);
        inputs.sort_by(f64::total_cmp);
        assert_eq!(shards, inputs);
    }

    #[test]
    fn split_rejects_bad_divisibility() {
        let (a, _) = make_regression(10, 2, 1, 0.0, 1).unwrap();
        assert!(split_two_blocks(&a, &a, 3).is_err());
        assert!(split_two_blocks(&a, &a, 6).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let (a, _) = make_regression(4, 3, 1, 1.0, 1).unwrap();
        let c = ClientDataset::from_matrix(0, &a.features, &a.targets).unwrap();
        let csv = c.to_csv();
        assert!(csv.starts_with("f0,f1,f2,y\n"));
        let back = ClientDataset::from_csv(0, csv.as_bytes()).unwrap();
        assert_eq!(back, c);
    }
}
