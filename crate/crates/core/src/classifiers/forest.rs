use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow, DecisionTree, TreeParams};
use super::{ClassifierError, Dataset, Prediction};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    /// `floor(sqrt(d))`, at least 1.
    Sqrt,
    All,
    Fixed(usize),
}

impl MaxFeatures {
    pub fn resolve(self, d: usize) -> usize {
        match self {
            MaxFeatures::Sqrt => ((d as f64).sqrt().floor() as usize).max(1),
            MaxFeatures::All => d,
            MaxFeatures::Fixed(k) => k.clamp(1, d.max(1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfConfig {
    pub n_trees: usize,
    pub max_features: MaxFeatures,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    /// Draw `n` rows with replacement per tree.
    pub bootstrap: bool,
}

impl Default for RfConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_features: MaxFeatures::Sqrt,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_depth: None,
            bootstrap: true,
        }
    }
}

impl RfConfig {
    fn validate(&self) -> Result<(), ClassifierError> {
        if self.n_trees == 0 {
            return Err(ClassifierError::InvalidConfig("n_trees must be at least 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(ClassifierError::InvalidConfig("min_samples_leaf must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub trees: Vec<DecisionTree>,
    pub config: RfConfig,
    pub train_seed: u64,
    pub n_features: usize,
}

impl RandomForestModel {
    pub fn violent_votes(&self, x: &[f64]) -> usize {
        self.trees.iter().map(|t| t.vote(x) as usize).sum()
    }
}

pub(crate) fn bootstrap_indices<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// Trains a forest. Tree `t` draws all of its randomness from the stream
/// `(seed, t)`, so the result does not depend on how trees are scheduled
/// across threads.
pub fn rf_train(data: &Dataset, cfg: &RfConfig, seed: u64) -> Result<RandomForestModel, ClassifierError> {
    cfg.validate()?;
    data.require_both_classes()?;
    let n = data.len();
    let params = TreeParams {
        max_features: cfg.max_features.resolve(data.dim()),
        min_samples_split: cfg.min_samples_split,
        min_samples_leaf: cfg.min_samples_leaf,
        max_depth: cfg.max_depth,
    };
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(seed, t as u64);
            let samples = if cfg.bootstrap {
                bootstrap_indices(n, &mut rng)
            } else {
                (0..n).collect()
            };
            grow(data, samples, &params, &mut rng)
        })
        .collect();
    Ok(RandomForestModel {
        trees,
        config: cfg.clone(),
        train_seed: seed,
        n_features: data.dim(),
    })
}

/// Majority vote; an exact split vote resolves to class 0.
pub fn rf_predict(model: &RandomForestModel, x: &[f64]) -> Result<Prediction, ClassifierError> {
    if x.len() != model.n_features {
        return Err(ClassifierError::DimMismatch {
            expected: model.n_features,
            got: x.len(),
        });
    }
    let votes = model.violent_votes(x);
    let n = model.trees.len();
    Ok(Prediction {
        label: u8::from(2 * votes > n),
        score: votes as f64 / n as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::Node;

    fn separable_1d() -> Dataset {
        let base = [(-1.0, 0u8), (-0.5, 0), (0.5, 1), (1.0, 1)];
        let (x, y) = (0..100).map(|i| (vec![base[i % 4].0], base[i % 4].1)).unzip();
        Dataset::new(x, y).unwrap()
    }

    fn leaf_forest(votes: &[u8]) -> RandomForestModel {
        RandomForestModel {
            trees: votes
                .iter()
                .map(|&v| DecisionTree {
                    nodes: vec![Node::Leaf {
                        counts: if v == 1 { [0, 3] } else { [3, 0] },
                    }],
                })
                .collect(),
            config: RfConfig::default(),
            train_seed: 0,
            n_features: 1,
        }
    }

    #[test]
    fn max_features_resolution() {
        assert_eq!(MaxFeatures::Sqrt.resolve(512), 22);
        assert_eq!(MaxFeatures::Sqrt.resolve(26), 5);
        assert_eq!(MaxFeatures::Sqrt.resolve(1), 1);
        assert_eq!(MaxFeatures::Fixed(40).resolve(26), 26);
        assert_eq!(MaxFeatures::All.resolve(7), 7);
    }

    #[test]
    fn separable_line_is_learned_per_tree() {
        let data = separable_1d();
        let model = rf_train(&data, &RfConfig::default(), 3).unwrap();
        assert_eq!(model.trees.len(), 100);
        // Every tree that saw both classes places its single threshold strictly
        // between the class extremes.
        for tree in &model.trees {
            if let Node::Split { threshold, .. } = tree.nodes[0] {
                assert!(-0.5 < threshold && threshold < 0.5);
            }
        }
        for i in 0..data.len() {
            assert_eq!(rf_predict(&model, data.row(i)).unwrap().label, data.labels()[i]);
        }
        let p = rf_predict(&model, &[-0.9]).unwrap();
        assert_eq!(p.label, 0);
    }

    #[test]
    fn vote_aggregation_and_ties() {
        let all = leaf_forest(&[1; 100]);
        assert_eq!(rf_predict(&all, &[0.0]).unwrap(), Prediction { label: 1, score: 1.0 });
        let half: Vec<u8> = (0..100).map(|i| (i % 2) as u8).collect();
        assert_eq!(rf_predict(&leaf_forest(&half), &[0.0]).unwrap(), Prediction { label: 0, score: 0.5 });
        assert!(matches!(
            rf_predict(&all, &[0.0, 1.0]),
            Err(ClassifierError::DimMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn leaf_tie_votes_zero() {
        let tree = DecisionTree {
            nodes: vec![Node::Leaf { counts: [2, 2] }],
        };
        assert_eq!(tree.vote(&[0.0]), 0);
    }

    #[test]
    fn reproducible_across_thread_pools() {
        let data = separable_1d();
        let cfg = RfConfig {
            n_trees: 20,
            ..Default::default()
        };
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let a = single.install(|| rf_train(&data, &cfg, 99).unwrap());
        let many = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let b = many.install(|| rf_train(&data, &cfg, 99).unwrap());
        assert_eq!(a, b);
        assert_ne!(a, rf_train(&data, &cfg, 100).unwrap());
    }

    #[test]
    fn bootstrap_covers_about_one_minus_inv_e() {
        let n = 100;
        let mean: f64 = (0..100u64)
            .map(|t| {
                let mut rng = rng::stream(2024, t);
                let mut idx = bootstrap_indices(n, &mut rng);
                idx.sort_unstable();
                idx.dedup();
                idx.len() as f64 / n as f64
            })
            .sum::<f64>()
            / 100.0;
        assert!((0.58..=0.68).contains(&mean), "mean distinct fraction {mean}");
    }

    #[test]
    fn no_bootstrap_single_tree_memorizes() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![(i * 7 % 13) as f64, (i * 3 % 5) as f64]).collect();
        let y: Vec<u8> = (0..40).map(|i| ((i * 7 % 13 + i * 3 % 5) % 2) as u8).collect();
        let data = Dataset::new(x, y).unwrap();
        let cfg = RfConfig {
            n_trees: 1,
            bootstrap: false,
            max_features: MaxFeatures::All,
            ..Default::default()
        };
        let m = rf_train(&data, &cfg, 0).unwrap();
        for i in 0..data.len() {
            assert_eq!(rf_predict(&m, data.row(i)).unwrap().label, data.labels()[i]);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = RfConfig {
            n_trees: 0,
            ..Default::default()
        };
        assert!(matches!(rf_train(&separable_1d(), &cfg, 0), Err(ClassifierError::InvalidConfig(_))));
    }
}
