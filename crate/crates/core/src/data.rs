//! Labeled feature-vector datasets, the synthetic Gaussian benchmark,
//! per-class undersampling and the two-shards-per-client split.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::model::Batch;
use crate::rng::{self, tag};
use crate::{Error, Result};

/// Row-major feature matrix with integer labels.
///
/// `row_ids` records where each row came from in the original source, so
/// derived datasets can be checked for overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    row_ids: Vec<usize>,
    input_dim: usize,
    num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientDataset {
    pub client_id: usize,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub classes_present: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    pub per_class_count: usize,
    /// Distance of every class mean from the origin along its direction.
    pub class_separation: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl LabeledDataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        input_dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Dimension("input_dim must be at least 1".into()));
        }
        if features.len() != labels.len() * input_dim {
            return Err(Error::Dimension(format!(
                "{} feature values for {} rows of width {input_dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Dimension(format!(
                "label {y} out of range for {num_classes} classes"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features"));
        }
        let row_ids = (0..labels.len()).collect();
        Ok(Self {
            features,
            labels,
            row_ids,
            input_dim,
            num_classes,
            class_names: None,
        })
    }

    pub fn empty(input_dim: usize, num_classes: usize) -> Self {
        Self {
            features: Vec::new(),
            labels: Vec::new(),
            row_ids: Vec::new(),
            input_dim,
            num_classes,
            class_names: None,
        }
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Self {
        self.class_names = Some(names);
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn as_batch(&self) -> Batch<'_> {
        Batch::new_unchecked(&self.features, &self.labels, self.input_dim)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Rows at `indices`, in the given order, keeping their source ids.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.input_dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Self {
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            row_ids: indices.iter().map(|&i| self.row_ids[i]).collect(),
            input_dim: self.input_dim,
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
        }
    }

    /// Stacks datasets with the same shape.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a LabeledDataset>) -> Result<Self> {
        let mut iter = parts.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::EmptyData("nothing to concatenate".into()))?;
        let mut out = first.clone();
        for part in iter {
            if part.input_dim != out.input_dim || part.num_classes != out.num_classes {
                return Err(Error::Dimension("concatenated datasets differ in shape".into()));
            }
            out.features.extend_from_slice(&part.features);
            out.labels.extend_from_slice(&part.labels);
            out.row_ids.extend_from_slice(&part.row_ids);
        }
        Ok(out)
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if self.input_dim == 0 || self.per_class_count == 0 {
            return Err(Error::Config(
                "input_dim and per_class_count must be at least 1".into(),
            ));
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return Err(Error::Config("class_separation must be positive".into()));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Unit directions for the class means.
///
/// With at least as many dimensions as classes the directions are a random
/// orthonormal set. Otherwise random unit vectors are spread apart by
/// projected gradient descent on the sphere with a `1/r` repulsion energy,
/// for a fixed number of iterations.
pub fn class_directions(num_classes: usize, input_dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng::stream(seed, &[tag::SYNTHETIC, 0]);
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
    let orthogonal = num_classes <= input_dim;
    while dirs.len() < num_classes {
        let mut v: Vec<f64> = (0..input_dim).map(|_| rng.sample(StandardNormal)).collect();
        if orthogonal {
            for u in &dirs {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= dot * ui;
                }
            }
        }
        if normalize(&mut v) {
            dirs.push(v);
        }
    }
    if !orthogonal {
        spread_on_sphere(&mut dirs);
    }
    dirs
}

fn normalize(v: &mut [f64]) -> bool {
    let norm = libm::sqrt(v.iter().map(|x| x * x).sum());
    if norm <= 1e-8 {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

fn spread_on_sphere(dirs: &mut [Vec<f64>]) {
    const ITERATIONS: usize = 2000;
    const STEP: f64 = 0.01;
    let n = dirs.len();
    let d = dirs[0].len();
    let mut force = alloc::vec![0.0; n * d];
    for _ in 0..ITERATIONS {
        force.fill(0.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let diff: Vec<f64> = dirs[i].iter().zip(&dirs[j]).map(|(a, b)| a - b).collect();
                let r2: f64 = diff.iter().map(|x| x * x).sum::<f64>().max(1e-12);
                let scale = 1.0 / (r2 * libm::sqrt(r2));
                for (k, x) in diff.iter().enumerate() {
                    force[i * d + k] += scale * x;
                }
            }
        }
        for (i, dir) in dirs.iter_mut().enumerate() {
            for (k, x) in dir.iter_mut().enumerate() {
                *x += STEP * force[i * d + k];
            }
            normalize(dir);
        }
    }
}

/// Isotropic Gaussian blobs, one per class, rows grouped by class.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let dirs = class_directions(spec.num_classes, spec.input_dim, spec.seed);
    let mut rng = rng::stream(spec.seed, &[tag::SYNTHETIC, 1]);
    let n = spec.num_classes * spec.per_class_count;
    let mut features = Vec::with_capacity(n * spec.input_dim);
    let mut labels = Vec::with_capacity(n);
    for (c, dir) in dirs.iter().enumerate() {
        for _ in 0..spec.per_class_count {
            for &u in dir {
                let z: f64 = rng.sample(StandardNormal);
                features.push(spec.class_separation * u + spec.noise_sigma * z);
            }
            labels.push(c);
        }
    }
    LabeledDataset::new(features, labels, spec.input_dim, spec.num_classes)
}

/// Keeps at most `cap` rows of every class, chosen uniformly without
/// replacement. Surviving rows keep their original relative order.
pub fn undersample(data: &LabeledDataset, cap: usize, seed: u64) -> Result<LabeledDataset> {
    if cap == 0 {
        return Err(Error::Config("undersampling cap must be at least 1".into()));
    }
    let mut rng = rng::stream(seed, &[tag::UNDERSAMPLE]);
    let mut keep = alloc::vec![false; data.len()];
    for c in 0..data.num_classes() {
        let rows: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == c).collect();
        if rows.len() <= cap {
            rows.iter().for_each(|&i| keep[i] = true);
        } else {
            for j in index::sample(&mut rng, rows.len(), cap) {
                keep[rows[j]] = true;
            }
        }
    }
    let kept: Vec<usize> = (0..data.len()).filter(|&i| keep[i]).collect();
    Ok(data.subset(&kept))
}

/// Test rows taken from each shard.
pub fn test_rows_per_shard(shard_size: usize, train_fraction: f64) -> usize {
    libm::floor(shard_size as f64 * (1.0 - train_fraction) + 1e-9) as usize
}

/// Deals every class into shards of `shard_size` rows and hands each client
/// two shards of different classes until no cross-class pair is left.
///
/// Each class is shuffled and cut into `count / shard_size` shards (the
/// remainder is dropped). Pairs are drawn uniformly among the remaining
/// cross-class shard pairs that do not lower the number of clients the
/// rest can still form, so no shard is stranded that could have been paired. Each shard contributes its last
/// `test_rows_per_shard` rows to the client's test set.
pub fn shard_split(
    data: &LabeledDataset,
    shard_size: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<Vec<ClientDataset>> {
    if shard_size == 0 {
        return Err(Error::Config("shard_size must be at least 1".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let test_rows = test_rows_per_shard(shard_size, train_fraction);
    if test_rows == 0 || test_rows >= shard_size {
        return Err(Error::Config(format!(
            "shard_size {shard_size} with train_fraction {train_fraction} leaves an empty train or test part"
        )));
    }
    let counts = data.class_counts();
    if let Some((class, &count)) = counts.iter().enumerate().find(|(_, &n)| n < shard_size) {
        return Err(Error::Shard {
            class,
            count,
            shard_size,
        });
    }

    let mut rng = rng::stream(seed, &[tag::SPLIT]);
    let mut pools: Vec<Vec<Vec<usize>>> = Vec::with_capacity(counts.len());
    for c in 0..counts.len() {
        let mut rows: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == c).collect();
        rows.shuffle(&mut rng);
        pools.push(
            rows.chunks_exact(shard_size)
                .map(<[usize]>::to_vec)
                .collect(),
        );
    }

    let mut clients = Vec::new();
    loop {
        let sizes: Vec<u64> = pools.iter().map(|p| p.len() as u64).collect();
        let weights = pair_weights(&sizes);
        let cross_pairs: u64 = weights.iter().map(|w| w.2).sum();
        if cross_pairs == 0 {
            break;
        }
        let mut r = rng.random_range(0..cross_pairs);
        let (mut a, mut b) = (0, 0);
        for &(i, j, w) in &weights {
            if r < w {
                (a, b) = (i, j);
                break;
            }
            r -= w;
        }
        let shard_a = pools[a].swap_remove((r / sizes[b]) as usize);
        let shard_b = pools[b].swap_remove((r % sizes[b]) as usize);

        let cut = shard_size - test_rows;
        let train: Vec<usize> = shard_a[..cut].iter().chain(&shard_b[..cut]).copied().collect();
        let test: Vec<usize> = shard_a[cut..].iter().chain(&shard_b[cut..]).copied().collect();
        clients.push(ClientDataset {
            client_id: clients.len(),
            train: data.subset(&train),
            test: data.subset(&test),
            classes_present: alloc::vec![a, b],
        });
    }
    Ok(clients)
}

/// Most clients a pairing of shards with these per-class counts can form.
fn attainable_pairs(sizes: &[u64]) -> u64 {
    let total: u64 = sizes.iter().sum();
    let largest = sizes.iter().copied().max().unwrap_or(0);
    (total / 2).min(total - largest)
}

/// Draw weights `(a, b, n_a * n_b)` over class pairs, restricted to pairs
/// after which the remaining shards can still form the most clients.
fn pair_weights(sizes: &[u64]) -> Vec<(usize, usize, u64)> {
    let best = attainable_pairs(sizes);
    let mut after = sizes.to_vec();
    let mut out = Vec::new();
    for i in 0..sizes.len() {
        for j in i + 1..sizes.len() {
            let w = sizes[i] * sizes[j];
            if w == 0 {
                continue;
            }
            after[i] -= 1;
            after[j] -= 1;
            if attainable_pairs(&after) + 1 == best {
                out.push((i, j, w));
            }
            after[i] += 1;
            after[j] += 1;
        }
    }
    out
}

/// Pools every client's train and test parts.
pub fn pool(clients: &[ClientDataset]) -> Result<(LabeledDataset, LabeledDataset)> {
    let train = LabeledDataset::concat(clients.iter().map(|c| &c.train))?;
    let test = LabeledDataset::concat(clients.iter().map(|c| &c.test))?;
    Ok((train, test))
}

impl ClientDataset {
    /// Distinct labels seen in this client's train and test rows.
    pub fn observed_classes(&self) -> BTreeSet<usize> {
        self.train
            .labels()
            .iter()
            .chain(self.test.labels())
            .copied()
            .collect()
    }
}
