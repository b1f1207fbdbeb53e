//! Datasets, label-skewed federation, cohort sampling and batching.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Batch;
use crate::rng::{self, Purpose};

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub input_dim: usize,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, input_dim: usize, num_classes: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Dataset("input_dim must be > 0".into()));
        }
        if features.len() != labels.len() * input_dim {
            return Err(Error::Dataset(format!(
                "{} feature values for {} rows of width {}",
                features.len(),
                labels.len(),
                input_dim
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Dataset(format!("label {bad} >= num_classes {num_classes}")));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::Dataset("non-finite feature value".into()));
        }
        Ok(Dataset {
            features,
            labels,
            input_dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.features[r * self.input_dim..(r + 1) * self.input_dim]
    }

    /// New dataset holding `rows` in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let b = Batch::gather(self, rows);
        Dataset {
            features: b.features,
            labels: b.labels,
            input_dim: self.input_dim,
            num_classes: self.num_classes,
        }
    }

    pub fn class_histogram(&self, rows: impl IntoIterator<Item = usize>) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for r in rows {
            h[self.labels[r]] += 1;
        }
        h
    }

    /// Reads a CSV with a header row, float feature columns and an integer
    /// label in the last column. `num_classes` is `max(label) + 1`, at least 2.
    pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let width = rdr.headers()?.len();
        if width < 2 {
            return Err(Error::Dataset("csv needs at least one feature and a label column".into()));
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != width {
                return Err(Error::Dataset(format!("row {} has {} columns, expected {width}", line + 1, rec.len())));
            }
            for field in rec.iter().take(width - 1) {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Dataset(format!("row {}: bad feature `{field}`", line + 1)))?;
                features.push(v);
            }
            let lab = rec[width - 1].trim();
            let y: usize = lab
                .parse()
                .map_err(|_| Error::Dataset(format!("row {}: bad label `{lab}`", line + 1)))?;
            labels.push(y);
        }
        let num_classes = labels.iter().copied().max().map_or(2, |m| (m + 1).max(2));
        Dataset::new(features, labels, width - 1, num_classes)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Dataset> {
        let f = std::fs::File::open(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Dataset::read_csv(std::io::BufReader::new(f))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.input_dim).map(|i| format!("x{i}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for r in 0..self.len() {
            let mut rec: Vec<String> = self.row(r).iter().map(|v| format!("{v:?}")).collect();
            rec.push(self.labels[r].to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("csv writer", e))?;
        Ok(())
    }
}

/// Gaussian class clusters with unit covariance.
///
/// With `num_classes <= input_dim` the class means sit at `(s / sqrt 2) e_c`,
/// so every pair of means is exactly `separation` apart. Otherwise means are
/// seeded random directions at radius `separation / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub input_dim: usize,
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub separation: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    fn class_means(&self) -> Vec<Vec<f64>> {
        let (dim, c) = (self.input_dim, self.num_classes);
        if c <= dim {
            let r = self.separation / std::f64::consts::SQRT_2;
            (0..c)
                .map(|k| {
                    let mut m = vec![0.0; dim];
                    m[k] = r;
                    m
                })
                .collect()
        } else {
            let mut rng = rng::stream(self.seed, Purpose::Synthetic, 0, 0);
            (0..c)
                .map(|_| {
                    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                    v.iter().map(|x| x / n * self.separation / 2.0).collect()
                })
                .collect()
        }
    }

    fn sample(&self, per_class: usize, stream: u64) -> Result<Dataset> {
        if self.input_dim == 0 || self.num_classes == 0 || per_class == 0 {
            return Err(Error::Dataset("synthetic counts must be > 0".into()));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::invalid("data.separation", "must be finite and >= 0"));
        }
        let means = self.class_means();
        let mut rng = rng::stream(self.seed, Purpose::Synthetic, stream, 0);
        let mut features = Vec::with_capacity(per_class * self.num_classes * self.input_dim);
        let mut labels = Vec::with_capacity(per_class * self.num_classes);
        for (c, mean) in means.iter().enumerate() {
            for _ in 0..per_class {
                for m in mean {
                    let z: f64 = rng.sample(StandardNormal);
                    features.push(m + z);
                }
                labels.push(c);
            }
        }
        Dataset::new(features, labels, self.input_dim, self.num_classes.max(2))
    }
}

/// Training set: `samples_per_class` rows per class, grouped by class.
pub fn synth_generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.sample(spec.samples_per_class, 1)
}

/// Held-out rows from the same class distribution as [`synth_generate`].
pub fn synth_holdout(spec: &SyntheticSpec, per_class: usize) -> Result<Dataset> {
    spec.sample(per_class, 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub num_clients: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients < 2 {
            return Err(Error::invalid("partition.num_clients", "must be >= 2"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("partition.alpha", format!("{} must be > 0", self.alpha)));
        }
        Ok(())
    }
}

/// A dataset split into per-client shards of row indices.
#[derive(Debug, Clone, PartialEq)]
pub struct FederatedDataset {
    pub data: Dataset,
    pub shards: Vec<Vec<usize>>,
}

impl FederatedDataset {
    pub fn num_clients(&self) -> usize {
        self.shards.len()
    }

    pub fn shard_sizes(&self) -> Vec<usize> {
        self.shards.iter().map(Vec::len).collect()
    }

    pub fn summary(&self) -> PartitionSummary {
        PartitionSummary {
            num_clients: self.num_clients(),
            num_classes: self.data.num_classes,
            total_rows: self.data.len(),
            clients: self
                .shards
                .iter()
                .enumerate()
                .map(|(client, rows)| ClientSummary {
                    client,
                    size: rows.len(),
                    class_histogram: self.data.class_histogram(rows.iter().copied()),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientSummary {
    pub client: usize,
    pub size: usize,
    pub class_histogram: Vec<usize>,
}

/// Per-client class histograms, exported as JSON for inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub num_clients: usize,
    pub num_classes: usize,
    pub total_rows: usize,
    pub clients: Vec<ClientSummary>,
}

impl PartitionSummary {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn dirichlet(rng: &mut impl Rng, alpha: f64, k: usize) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated > 0");
    let mut p: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = p.iter().sum();
    if total > 0.0 && total.is_finite() {
        p.iter_mut().for_each(|x| *x /= total);
    } else {
        // every draw underflowed: put all mass on one client
        p.iter_mut().for_each(|x| *x = 0.0);
        p[rng.random_range(0..k)] = 1.0;
    }
    p
}

/// Dirichlet label-skew partition.
///
/// For every class, client proportions are drawn from `Dirichlet(alpha)` and
/// the (shuffled) rows of that class are cut into consecutive runs of
/// `floor(cumsum(p) * n_c)`. Afterwards each empty shard receives one random
/// row taken from the currently largest shard.
pub fn dirichlet_partition(data: &Dataset, spec: &PartitionSpec) -> Result<FederatedDataset> {
    spec.validate()?;
    let k = spec.num_clients;
    if data.len() < k {
        return Err(Error::Dataset(format!("{} rows cannot fill {k} client shards", data.len())));
    }
    let mut rng = rng::stream(spec.seed, Purpose::Partition, 0, 0);
    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); k];
    for class in 0..data.num_classes {
        let mut rows: Vec<usize> = (0..data.len()).filter(|&r| data.labels[r] == class).collect();
        let p = dirichlet(&mut rng, spec.alpha, k);
        if rows.is_empty() {
            continue;
        }
        rows.shuffle(&mut rng);
        let n = rows.len();
        let mut start = 0usize;
        let mut cum = 0.0;
        for (client, share) in p.iter().enumerate() {
            cum += share;
            let end = if client + 1 == k {
                n
            } else {
                ((cum * n as f64).floor() as usize).clamp(start, n)
            };
            shards[client].extend_from_slice(&rows[start..end]);
            start = end;
        }
    }
    for empty in 0..k {
        if !shards[empty].is_empty() {
            continue;
        }
        let donor = (0..k)
            .max_by(|&a, &b| shards[a].len().cmp(&shards[b].len()).then(b.cmp(&a)))
            .expect("k >= 2");
        let pick = rng.random_range(0..shards[donor].len());
        let row = shards[donor].swap_remove(pick);
        shards[empty].push(row);
    }
    Ok(FederatedDataset {
        data: data.clone(),
        shards,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub cohort_size: usize,
    pub seed: u64,
}

/// Uniform sample of `cohort_size` distinct clients for round `round`,
/// sorted ascending. A full cohort returns every client.
pub fn sample_cohort(num_clients: usize, spec: &CohortSpec, round: u64) -> Result<Vec<usize>> {
    if spec.cohort_size == 0 || spec.cohort_size > num_clients {
        return Err(Error::invalid(
            "cohort.size",
            format!("{} not in [1, {num_clients}]", spec.cohort_size),
        ));
    }
    if spec.cohort_size == num_clients {
        return Ok((0..num_clients).collect());
    }
    let mut rng = rng::stream(spec.seed, Purpose::Cohort, round, 0);
    let mut ids = rand::seq::index::sample(&mut rng, num_clients, spec.cohort_size).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

fn epoch_permutation(shard: &[usize], epoch_seed: u64, epoch: u64) -> Vec<usize> {
    let mut perm = shard.to_vec();
    let mut rng = rng::stream(epoch_seed, Purpose::Batch, epoch, 0);
    perm.shuffle(&mut rng);
    perm
}

/// Row indices of batch `step_index` of an epoch-shuffled, cycled walk over
/// `shard`. The last batch of each epoch may be short.
pub fn next_batch(shard: &[usize], epoch_seed: u64, step_index: usize, batch_size: usize) -> Vec<usize> {
    assert!(!shard.is_empty(), "shard must be nonempty");
    assert!(batch_size > 0, "batch_size must be > 0");
    let per_epoch = shard.len().div_ceil(batch_size);
    let epoch = step_index / per_epoch;
    let pos = step_index % per_epoch;
    let perm = epoch_permutation(shard, epoch_seed, epoch as u64);
    let end = ((pos + 1) * batch_size).min(perm.len());
    perm[pos * batch_size..end].to_vec()
}

/// Stateful equivalent of [`next_batch`] that reshuffles once per epoch.
#[derive(Debug, Clone)]
pub struct ShardBatcher {
    shard: Vec<usize>,
    epoch_seed: u64,
    batch_size: usize,
    epoch: u64,
    pos: usize,
    perm: Vec<usize>,
}

impl ShardBatcher {
    pub fn new(shard: &[usize], epoch_seed: u64, batch_size: usize) -> Self {
        assert!(!shard.is_empty(), "shard must be nonempty");
        assert!(batch_size > 0, "batch_size must be > 0");
        ShardBatcher {
            perm: epoch_permutation(shard, epoch_seed, 0),
            shard: shard.to_vec(),
            epoch_seed,
            batch_size,
            epoch: 0,
            pos: 0,
        }
    }

    pub fn next_rows(&mut self) -> &[usize] {
        if self.pos * self.batch_size >= self.perm.len() {
            self.epoch += 1;
            self.pos = 0;
            self.perm = epoch_permutation(&self.shard, self.epoch_seed, self.epoch);
        }
        let start = self.pos * self.batch_size;
        let end = (start + self.batch_size).min(self.perm.len());
        self.pos += 1;
        &self.perm[start..end]
    }
}

/// Mean client epoch length in optimizer steps: `mean_k ceil(|D_k| / batch_size)`.
pub fn mean_shard_size(fd: &FederatedDataset, batch_size: usize) -> f64 {
    let total: usize = fd.shards.iter().map(|s| s.len().div_ceil(batch_size)).sum();
    total as f64 / fd.num_clients() as f64
}
