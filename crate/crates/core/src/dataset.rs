//! Datasets: topology, features, labels, split masks and optional planted factors.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergraph::Hypergraph;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// One label per node.
    NodeClassification,
    /// One label per sample; samples share the topology and differ in features.
    HypergraphClassification,
}

/// Train/validation/test membership over the labeled population.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Splits {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
    All,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "all" => Ok(Split::All),
            other => Err(Error::InvalidConfig(format!("unknown split {other:?}"))),
        }
    }
}

impl Splits {
    pub fn unassigned(n: usize) -> Self {
        Self {
            train: vec![false; n],
            val: vec![false; n],
            test: vec![false; n],
        }
    }

    pub fn mask(&self, split: Split) -> Vec<bool> {
        match split {
            Split::Train => self.train.clone(),
            Split::Val => self.val.clone(),
            Split::Test => self.test.clone(),
            Split::All => vec![true; self.train.len()],
        }
    }

    /// Indices selected by `split`, ascending.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.mask(split)
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }
}

/// Ground-truth hyperedge factor assignment of a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlantedFactors {
    pub num_factors: usize,
    /// The factor whose hyperedges determine labels.
    pub label_factor: usize,
    /// Factor id of every hyperedge.
    pub edge_factor: Vec<usize>,
}

impl PlantedFactors {
    /// Incidence pairs of the sub-hypergraph formed by factor `k`'s hyperedges.
    pub fn sub_incidence(&self, hg: &Hypergraph, k: usize) -> Vec<(usize, usize)> {
        hg.pairs()
            .iter()
            .copied()
            .filter(|&(_, e)| self.edge_factor[e] == k)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub hypergraph: Hypergraph,
    /// `N×d0` for node tasks, `(S·N)×d0` (sample-major) for hypergraph tasks.
    pub features: Tensor<f32>,
    /// Sample count `S`; zero for node tasks.
    pub num_samples: usize,
    pub num_classes: usize,
    pub labels: Vec<usize>,
    pub splits: Splits,
    pub planted: Option<PlantedFactors>,
}

impl Dataset {
    /// Assembles a dataset and checks every structural invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        task: Task,
        hypergraph: Hypergraph,
        features: Tensor<f32>,
        num_samples: usize,
        num_classes: usize,
        labels: Vec<usize>,
        splits: Splits,
        planted: Option<PlantedFactors>,
    ) -> Result<Self> {
        let ds = Self {
            task,
            hypergraph,
            features,
            num_samples,
            num_classes,
            labels,
            splits,
            planted,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.hypergraph.num_nodes();
        let (rows, items) = match self.task {
            Task::NodeClassification => (n, n),
            Task::HypergraphClassification => (self.num_samples * n, self.num_samples),
        };
        if self.features.rank() != 2 || self.features.rows() != rows {
            return Err(Error::shape(
                "Dataset",
                format!("features {:?} but expected {rows} rows", self.features.shape()),
            ));
        }
        if self.labels.len() != items {
            return Err(Error::shape(
                "Dataset",
                format!("{} labels for {items} items", self.labels.len()),
            ));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::OutOfRangeIndex {
                what: "label",
                index: bad,
                bound: self.num_classes,
            });
        }
        let s = &self.splits;
        if s.train.len() != items || s.val.len() != items || s.test.len() != items {
            return Err(Error::shape("Dataset", "split masks must cover every labeled item"));
        }
        if (0..items).any(|i| (s.train[i] as u8 + s.val[i] as u8 + s.test[i] as u8) > 1) {
            return Err(Error::InvalidConfig("split masks overlap".into()));
        }
        if let Some(p) = &self.planted {
            if p.edge_factor.len() != self.hypergraph.num_edges() {
                return Err(Error::shape("Dataset", "one planted factor id per hyperedge"));
            }
            if let Some(&bad) = p.edge_factor.iter().find(|&&k| k >= p.num_factors) {
                return Err(Error::OutOfRangeIndex {
                    what: "planted factor",
                    index: bad,
                    bound: p.num_factors,
                });
            }
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Size of the labeled population (nodes or samples).
    pub fn num_items(&self) -> usize {
        self.labels.len()
    }

    /// Stacked feature rows of the given samples (hypergraph task only).
    pub fn sample_features(&self, samples: &[usize]) -> Tensor<f32> {
        let n = self.hypergraph.num_nodes();
        let d = self.feature_dim();
        let mut data = Vec::with_capacity(samples.len() * n * d);
        for &s in samples {
            data.extend_from_slice(&self.features.data()[s * n * d..(s + 1) * n * d]);
        }
        Tensor::matrix(samples.len() * n, d, data).expect("sample_features shape")
    }
}

/// Non-fatal findings of [`split_dataset`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SplitWarning {
    /// A class present in the data has no member in the named split.
    EmptyClassAfterSplit { class: usize, split: &'static str },
}

/// Assigns seeded train/val/test masks with the given ratios.
///
/// Split sizes are `round(ratio · n)`. When every class has at least three
/// members the draw is stratified: items are ordered so that each class is
/// spread evenly through the sequence, then cut into consecutive blocks.
pub fn split_dataset(
    ds: &Dataset,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Vec<SplitWarning>)> {
    let (rt, rv, rs) = ratios;
    if rt <= 0.0 || rv < 0.0 || rs < 0.0 || rt + rv + rs > 1.0 + 1e-9 {
        return Err(Error::InvalidConfig(format!("bad split ratios {ratios:?}")));
    }
    let n = ds.num_items();
    let n_train = (rt * n as f64).round() as usize;
    let n_val = (rv * n as f64).round() as usize;
    let n_test = ((rs * n as f64).round() as usize).min(n - (n_train + n_val).min(n));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let present: Vec<&Vec<usize>> = by_class.iter().filter(|c| !c.is_empty()).collect();
    let stratify = present.iter().all(|c| c.len() >= 3);

    let order: Vec<usize> = if stratify {
        // Key (rank + u) / size places every class uniformly over [0, 1).
        let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(n);
        for class in &mut by_class {
            class.shuffle(&mut rng);
            let size = class.len() as f64;
            for (rank, &i) in class.iter().enumerate() {
                let jitter: f64 = rand::Rng::gen(&mut rng);
                keyed.push(((rank as f64 + jitter) / size, i));
            }
        }
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        keyed.into_iter().map(|(_, i)| i).collect()
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        all
    };

    let mut splits = Splits::unassigned(n);
    for (pos, &i) in order.iter().enumerate() {
        if pos < n_train {
            splits.train[i] = true;
        } else if pos < n_train + n_val {
            splits.val[i] = true;
        } else if pos < n_train + n_val + n_test {
            splits.test[i] = true;
        }
    }

    let mut warnings = Vec::new();
    for (class, members) in by_class.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        for (name, mask, size) in [
            ("train", &splits.train, n_train),
            ("val", &splits.val, n_val),
            ("test", &splits.test, n_test),
        ] {
            if size > 0 && !members.iter().any(|&i| mask[i]) {
                warnings.push(SplitWarning::EmptyClassAfterSplit { class, split: name });
            }
        }
    }

    let mut out = ds.clone();
    out.splits = splits;
    Ok((out, warnings))
}
