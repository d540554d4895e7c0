//! Sample streams and the splitter.
//!
//! Synthetic sample `t'` is a pure function of `(seed, t')`: its random
//! state is a ChaCha stream keyed by the seed and selected by `t'`, so any
//! consumer that asks for the same index sees the same sample.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{logistic, SpectrumSpec};
use crate::quadrature;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    /// `±1` for supervised streams.
    pub label: Option<i8>,
}

impl Sample {
    pub fn labeled(features: Vec<f64>, label: i8) -> Self {
        Self {
            features,
            label: Some(label),
        }
    }

    pub fn unlabeled(features: Vec<f64>) -> Self {
        Self { features, label: None }
    }
}

/// Independent random streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Samples,
    GroundTruth,
    Init,
    Holdout,
}

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for trial `trial` of an experiment with master seed `master`.
pub fn trial_seed(master: u64, trial: u64) -> u64 {
    mix64(mix64(master) ^ trial.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Generator for index `index` of `domain` under `seed`.
pub fn indexed_rng(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let tag = match domain {
        Domain::Samples => 0x5A,
        Domain::GroundTruth => 0x67,
        Domain::Init => 0x1D,
        Domain::Holdout => 0x40,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(tag)));
    rng.set_stream(index);
    rng
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Start point drawn uniformly on the unit sphere.
pub fn unit_sphere_start(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = indexed_rng(seed, Domain::Init, 0);
    loop {
        let g = gaussian_vec(&mut rng, dim);
        let n = crate::norm2(&g).sqrt();
        if n > 0.0 {
            return g.into_iter().map(|v| v / n).collect();
        }
    }
}

/// Distribution parameters behind a synthetic stream.
#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruth {
    /// `P(y = 1 | x) = σ(w̃*ᵀx + w₀*)`, `x ~ N(0, I)`.
    Logistic { w_star: Vec<f64> },
    /// `x | y ~ N(μ_y, σ_x² I)`, `y` uniform on `±1`.
    ConditionalGaussian {
        mean_neg: Vec<f64>,
        mean_pos: Vec<f64>,
        sigma_x2: f64,
    },
    /// `z ~ N(0, Σ)` with `Σ = basis·diag(λ)·basisᵀ`.
    Covariance { spectrum: SpectrumSpec, basis: DMatrix<f64> },
}

impl GroundTruth {
    /// Risk minimiser in model coordinates, when it has a closed form.
    pub fn optimum(&self) -> Option<Vec<f64>> {
        match self {
            GroundTruth::Logistic { w_star } => Some(w_star.clone()),
            GroundTruth::ConditionalGaussian {
                mean_neg,
                mean_pos,
                sigma_x2,
            } => Some(quadrature::conditional_gaussian_optimum(mean_neg, mean_pos, *sigma_x2)),
            GroundTruth::Covariance { basis, .. } => Some(basis.column(0).iter().copied().collect()),
        }
    }

    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        match self {
            GroundTruth::Covariance { spectrum, basis } => {
                let diag = DMatrix::from_diagonal(&DVector::from_column_slice(spectrum.eigenvalues()));
                Some(basis * diag * basis.transpose())
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStream {
    dim: usize,
    seed: u64,
    truth: GroundTruth,
    /// `basis·diag(√λ)` for covariance streams.
    factor: Option<DMatrix<f64>>,
}

impl SyntheticStream {
    /// Logistic stream with `w* ~ N(0, I_{d+1})` drawn from `seed`.
    pub fn logistic_gaussian(dim: usize, seed: u64) -> Result<Self> {
        check_dim(dim)?;
        let w_star = gaussian_vec(&mut indexed_rng(seed, Domain::GroundTruth, 0), dim + 1);
        Self::logistic_with_truth(w_star, seed)
    }

    pub fn logistic_with_truth(w_star: Vec<f64>, seed: u64) -> Result<Self> {
        check_dim(w_star.len().saturating_sub(1))?;
        Ok(Self {
            dim: w_star.len() - 1,
            seed,
            truth: GroundTruth::Logistic { w_star },
            factor: None,
        })
    }

    /// Class means drawn entrywise from `N(0, 1)`.
    pub fn conditional_gaussian(dim: usize, sigma_x2: f64, seed: u64) -> Result<Self> {
        check_dim(dim)?;
        if !(sigma_x2.is_finite() && sigma_x2 > 0.0) {
            return Err(Error::invalid(format!("sigma_x2 must be positive, got {sigma_x2}")));
        }
        let mut rng = indexed_rng(seed, Domain::GroundTruth, 0);
        let mean_neg = gaussian_vec(&mut rng, dim);
        let mean_pos = gaussian_vec(&mut rng, dim);
        Ok(Self {
            dim,
            seed,
            truth: GroundTruth::ConditionalGaussian {
                mean_neg,
                mean_pos,
                sigma_x2,
            },
            factor: None,
        })
    }

    /// Covariance stream with an orthonormal basis from the QR factor of a
    /// seeded Gaussian matrix.
    pub fn gaussian_covariance(spectrum: SpectrumSpec, seed: u64) -> Result<Self> {
        let dim = spectrum.dim();
        let mut rng = indexed_rng(seed, Domain::GroundTruth, 0);
        let raw = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let basis = raw.qr().q();
        Self::covariance_with_basis(spectrum, basis, seed)
    }

    pub fn covariance_with_basis(spectrum: SpectrumSpec, basis: DMatrix<f64>, seed: u64) -> Result<Self> {
        let dim = spectrum.dim();
        if basis.nrows() != dim || basis.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: basis.nrows(),
            });
        }
        let roots = DVector::from_iterator(dim, spectrum.eigenvalues().iter().map(|l| l.sqrt()));
        let factor = &basis * DMatrix::from_diagonal(&roots);
        Ok(Self {
            dim,
            seed,
            truth: GroundTruth::Covariance { spectrum, basis },
            factor: Some(factor),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }

    /// Sample `t_prime` (1-based) of the training stream.
    pub fn generate(&self, t_prime: u64) -> Result<Sample> {
        if t_prime == 0 {
            return Err(Error::invalid("sample indices start at 1"));
        }
        Ok(self.draw(Domain::Samples, t_prime))
    }

    /// Held-out samples from an independent domain.
    pub fn holdout(&self, size: usize) -> Vec<Sample> {
        (1..=size as u64).map(|i| self.draw(Domain::Holdout, i)).collect()
    }

    fn draw(&self, domain: Domain, index: u64) -> Sample {
        let mut rng = indexed_rng(self.seed, domain, index);
        match &self.truth {
            GroundTruth::Logistic { w_star } => {
                let x = gaussian_vec(&mut rng, self.dim);
                let p = logistic(crate::losses::margin(w_star, &x));
                let y = if rng.random::<f64>() < p { 1 } else { -1 };
                Sample::labeled(x, y)
            }
            GroundTruth::ConditionalGaussian {
                mean_neg,
                mean_pos,
                sigma_x2,
            } => {
                let y: i8 = if rng.random::<bool>() { 1 } else { -1 };
                let mean = if y == 1 { mean_pos } else { mean_neg };
                let s = sigma_x2.sqrt();
                let x = mean
                    .iter()
                    .map(|m| m + s * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                Sample::labeled(x, y)
            }
            GroundTruth::Covariance { .. } => {
                let g = DVector::from_vec(gaussian_vec(&mut rng, self.dim));
                let factor = self.factor.as_ref().expect("covariance stream has a factor");
                Sample::unlabeled((factor * g).iter().copied().collect())
            }
        }
    }

    /// Largest feature norm over the first `count` training samples.
    pub fn empirical_max_norm(&self, count: u64) -> f64 {
        (1..=count)
            .map(|i| crate::norm2(&self.draw(Domain::Samples, i).features).sqrt())
            .fold(0.0, f64::max)
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        Err(Error::invalid("dimension must be positive"))
    } else {
        Ok(())
    }
}

/// CSV layout: one sample per row, optional header, optional final label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FileFormat {
    #[serde(default)]
    pub has_header: bool,
    #[serde(default)]
    pub label_column: bool,
}

/// Single-pass reader over a CSV sample file.
pub struct FileStream {
    path: PathBuf,
    format: FileFormat,
    records: csv::StringRecordsIntoIter<File>,
    dim: Option<usize>,
    /// Index the next record would carry.
    next_index: u64,
}

impl std::fmt::Debug for FileStream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FileStream")
            .field("path", &self.path)
            .field("next_index", &self.next_index)
            .finish()
    }
}

pub fn open_file_stream(path: impl AsRef<Path>, format: FileFormat) -> Result<FileStream> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = csv::ReaderBuilder::new()
        .has_headers(format.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    Ok(FileStream {
        path: path.to_path_buf(),
        format,
        records: reader.into_records(),
        dim: None,
        next_index: 1,
    })
}

impl FileStream {
    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    fn read_next(&mut self) -> Result<Sample> {
        let index = self.next_index;
        let line = index + u64::from(self.format.has_header);
        let record = match self.records.next() {
            None => return Err(Error::EndOfStream(index)),
            Some(r) => r.map_err(|e| Error::MalformedRecord {
                line,
                reason: e.to_string(),
            })?,
        };
        self.next_index += 1;
        let values = record
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::MalformedRecord {
                    line,
                    reason: format!("non-numeric field {f:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (features, label) = if self.format.label_column {
            let (y, x) = values.split_last().ok_or_else(|| Error::MalformedRecord {
                line,
                reason: "empty row".into(),
            })?;
            let y = match *y {
                v if v == 1.0 => 1,
                v if v == -1.0 => -1,
                v => {
                    return Err(Error::MalformedRecord {
                        line,
                        reason: format!("label {v} is not ±1"),
                    })
                }
            };
            (x.to_vec(), Some(y))
        } else {
            (values, None)
        };
        match self.dim {
            None if features.is_empty() => {
                return Err(Error::MalformedRecord {
                    line,
                    reason: "row has no features".into(),
                })
            }
            None => self.dim = Some(features.len()),
            Some(d) if d != features.len() => {
                return Err(Error::MalformedRecord {
                    line,
                    reason: format!("expected {d} features, found {}", features.len()),
                })
            }
            Some(_) => {}
        }
        Ok(Sample { features, label })
    }

    /// Record `t_prime`; indices must be requested in increasing order and
    /// skipped records are dropped.
    pub fn fetch(&mut self, t_prime: u64) -> Result<Sample> {
        if t_prime < self.next_index {
            return Err(Error::invalid(format!(
                "file streams are single-pass: sample {t_prime} was already consumed"
            )));
        }
        while self.next_index < t_prime {
            self.read_next()?;
        }
        self.read_next()
    }
}

/// Anything the simulation driver can pull indexed samples from.
pub trait SampleSource {
    fn fetch(&mut self, t_prime: u64) -> Result<Sample>;
}

impl SampleSource for SyntheticStream {
    fn fetch(&mut self, t_prime: u64) -> Result<Sample> {
        self.generate(t_prime)
    }
}

impl SampleSource for FileStream {
    fn fetch(&mut self, t_prime: u64) -> Result<Sample> {
        FileStream::fetch(self, t_prime)
    }
}

/// Write samples in the file-stream layout with 17 significant digits.
pub fn write_samples_csv(path: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for s in samples {
        let mut fields: Vec<String> = s.features.iter().map(|v| crate::fmt_sig17(*v)).collect();
        if let Some(y) = s.label {
            fields.push(y.to_string());
        }
        writeln!(out, "{}", fields.join(",")).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// How the global stream is dealt to nodes: `B` samples per iteration in
/// node-contiguous blocks of `B/N`, followed by `μ` discarded samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitPlan {
    pub minibatch: usize,
    pub nodes: usize,
    pub discarded: usize,
}

impl SplitPlan {
    pub fn new(minibatch: usize, nodes: usize, discarded: usize) -> Result<Self> {
        if nodes == 0 || minibatch == 0 || minibatch % nodes != 0 {
            return Err(Error::invalid(format!(
                "mini-batch {minibatch} is not a positive multiple of N = {nodes}"
            )));
        }
        Ok(Self {
            minibatch,
            nodes,
            discarded,
        })
    }

    pub fn local_batch(&self) -> usize {
        self.minibatch / self.nodes
    }

    /// Samples arriving per iteration, `B + μ`.
    pub fn block(&self) -> u64 {
        (self.minibatch + self.discarded) as u64
    }

    /// Global index `b + (n−1)·B/N + (t−1)·(B+μ)`; all arguments 1-based.
    pub fn index(&self, t: u64, n: usize, b: usize) -> Result<u64> {
        let local = self.local_batch();
        if t == 0 || n == 0 || n > self.nodes || b == 0 || b > local {
            return Err(Error::invalid(format!(
                "split arguments out of range: t = {t}, n = {n}, b = {b} (N = {}, B/N = {local})",
                self.nodes
            )));
        }
        Ok(b as u64 + ((n - 1) * local) as u64 + (t - 1) * self.block())
    }
}

pub fn split(plan: &SplitPlan, t: u64, n: usize, b: usize) -> Result<u64> {
    plan.index(t, n, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_examples() {
        let p = SplitPlan::new(4, 2, 0).unwrap();
        assert_eq!(p.index(1, 1, 1).unwrap(), 1);
        assert_eq!(p.index(1, 2, 2).unwrap(), 4);
        assert_eq!(p.index(2, 1, 1).unwrap(), 5);
        let p = SplitPlan::new(4, 2, 2).unwrap();
        assert_eq!(p.index(2, 1, 1).unwrap(), 7);
        assert!(p.index(1, 3, 1).is_err());
        assert!(p.index(1, 1, 3).is_err());
        assert!(p.index(0, 1, 1).is_err());
        assert!(SplitPlan::new(5, 2, 0).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let s = SyntheticStream::logistic_gaussian(5, 42).unwrap();
        assert_eq!(s.generate(17).unwrap(), s.generate(17).unwrap());
        assert_ne!(s.generate(17).unwrap(), s.generate(18).unwrap());
        let other = SyntheticStream::logistic_gaussian(5, 43).unwrap();
        assert_ne!(s.generate(17).unwrap(), other.generate(17).unwrap());
        assert!(s.generate(0).is_err());
    }

    #[test]
    fn holdout_differs_from_training() {
        let s = SyntheticStream::conditional_gaussian(3, 2.0, 1).unwrap();
        assert_ne!(s.holdout(1)[0], s.generate(1).unwrap());
    }

    #[test]
    fn basis_is_orthonormal() {
        let spec = SpectrumSpec::linear_decay(10, 1.0, 0.1, 0.1).unwrap();
        let s = SyntheticStream::gaussian_covariance(spec, 9).unwrap();
        let GroundTruth::Covariance { basis, .. } = s.truth() else { unreachable!() };
        let gram = basis.transpose() * basis;
        assert!((gram - DMatrix::identity(10, 10)).amax() < 1e-10);
    }

    #[test]
    fn sphere_start_has_unit_norm() {
        let w = unit_sphere_start(3, 10);
        assert!((crate::norm2(&w) - 1.0).abs() < 1e-12);
        assert_eq!(w, unit_sphere_start(3, 10));
    }

    #[test]
    fn file_stream_parses_and_ends() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        std::fs::write(&path, "1.0,2.0,-1\n3,4,1\n5,6,1\n").unwrap();
        let mut f = open_file_stream(
            &path,
            FileFormat {
                has_header: false,
                label_column: true,
            },
        )
        .unwrap();
        assert_eq!(f.fetch(1).unwrap(), Sample::labeled(vec![1.0, 2.0], -1));
        assert_eq!(f.fetch(3).unwrap(), Sample::labeled(vec![5.0, 6.0], 1));
        assert!(f.fetch(2).is_err());
        assert!(matches!(f.fetch(4), Err(Error::EndOfStream(4))));
    }

    #[test]
    fn file_stream_rejects_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let fmt = FileFormat::default();
        let ragged = dir.path().join("r.csv");
        std::fs::write(&ragged, "1,2\n3\n").unwrap();
        let mut f = open_file_stream(&ragged, fmt).unwrap();
        f.fetch(1).unwrap();
        assert!(matches!(f.fetch(2), Err(Error::MalformedRecord { line: 2, .. })));

        let text = dir.path().join("t.csv");
        std::fs::write(&text, "1,abc\n").unwrap();
        let mut f = open_file_stream(&text, fmt).unwrap();
        assert!(matches!(f.fetch(1), Err(Error::MalformedRecord { line: 1, .. })));
    }
}
