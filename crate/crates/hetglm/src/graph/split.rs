//! Few-shot splits over the labeled node type.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::HeteroGraph;
use crate::error::{Error, Result};
use crate::util::derive_rng;

/// Stratified few-shot split: exactly `shots` training nodes per class (or
/// all available if a class is smaller), disjoint validation and test sets
/// drawn uniformly from the remainder.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FewShotSplit {
    pub shots: usize,
    pub seed: u64,
    pub train_ids: Vec<usize>,
    pub val_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

pub fn split_few_shot(
    g: &HeteroGraph,
    shots: usize,
    val_size: usize,
    test_size: usize,
    seed: u64,
) -> Result<FewShotSplit> {
    assert!(shots >= 1, "shots must be >= 1");
    let labels = g
        .labels
        .as_ref()
        .ok_or_else(|| Error::Invalid("graph has no labeled node type".into()))?;

    let mut train_ids = Vec::new();
    for c in 0..labels.classes.len() {
        let mut members = g.class_members(c);
        let mut rng = derive_rng(seed, &["split", "class", &labels.classes[c]]);
        members.shuffle(&mut rng);
        members.truncate(shots);
        members.sort_unstable();
        train_ids.extend(members);
    }

    let mut rest: Vec<usize> = (0..labels.values.len())
        .filter(|i| !train_ids.contains(i))
        .collect();
    if rest.len() < val_size + test_size {
        return Err(Error::NotEnoughLabeled {
            needed: train_ids.len() + val_size + test_size,
            available: labels.values.len(),
        });
    }
    let mut rng = derive_rng(seed, &["split", "rest"]);
    rest.shuffle(&mut rng);
    let val_ids = rest[..val_size].to_vec();
    let test_ids = rest[val_size..val_size + test_size].to_vec();

    Ok(FewShotSplit {
        shots,
        seed,
        train_ids,
        val_ids,
        test_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Labels, MetaRelation};
    use std::collections::BTreeMap;
    use std::collections::BTreeSet;

    fn labeled_graph(n: usize, classes: usize) -> HeteroGraph {
        let mut counts = BTreeMap::new();
        counts.insert("m".to_string(), n);
        counts.insert("x".to_string(), 1);
        let mut g = HeteroGraph::new(
            "lab",
            "test",
            vec!["m".into(), "x".into()],
            vec![MetaRelation::new("m", "to", "x")],
            counts,
        );
        g.labels = Some(Labels {
            node_type: "m".into(),
            classes: (0..classes).map(|c| format!("class{c}")).collect(),
            values: (0..n).map(|i| i % classes).collect(),
        });
        g.finalize().unwrap()
    }

    #[test]
    fn one_shot_three_classes_gives_three_train_nodes() {
        let g = labeled_graph(90, 3);
        let s = split_few_shot(&g, 1, 20, 20, 0).unwrap();
        assert_eq!(s.train_ids.len(), 3);
        let labels = g.labels.as_ref().unwrap();
        let classes: BTreeSet<_> = s.train_ids.iter().map(|&i| labels.values[i]).collect();
        assert_eq!(classes.len(), 3, "one node per class");
    }

    #[test]
    fn train_counts_are_min_of_shots_and_class_size() {
        let g = labeled_graph(10, 3); // class sizes 4, 3, 3
        let s = split_few_shot(&g, 60, 0, 0, 0).unwrap();
        let labels = g.labels.as_ref().unwrap();
        for c in 0..3 {
            let class_size = g.class_members(c).len();
            let got = s
                .train_ids
                .iter()
                .filter(|&&i| labels.values[i] == c)
                .count();
            assert_eq!(got, class_size.min(60));
        }
    }

    #[test]
    fn partitions_are_disjoint() {
        let g = labeled_graph(200, 4);
        for seed in 0..4 {
            let s = split_few_shot(&g, 5, 40, 40, seed).unwrap();
            let train: BTreeSet<_> = s.train_ids.iter().collect();
            let val: BTreeSet<_> = s.val_ids.iter().collect();
            let test: BTreeSet<_> = s.test_ids.iter().collect();
            assert!(train.intersection(&val).next().is_none());
            assert!(train.intersection(&test).next().is_none());
            assert!(val.intersection(&test).next().is_none());
            assert_eq!(s.val_ids.len(), 40);
            assert_eq!(s.test_ids.len(), 40);
        }
    }

    #[test]
    fn insufficient_nodes_is_an_error() {
        let g = labeled_graph(30, 3);
        assert!(matches!(
            split_few_shot(&g, 5, 20, 20, 0),
            Err(Error::NotEnoughLabeled { .. })
        ));
    }

    #[test]
    fn deterministic_per_seed() {
        let g = labeled_graph(100, 2);
        let a = split_few_shot(&g, 3, 10, 10, 9).unwrap();
        let b = split_few_shot(&g, 3, 10, 10, 9).unwrap();
        assert_eq!(a.train_ids, b.train_ids);
        assert_eq!(a.val_ids, b.val_ids);
        assert_eq!(a.test_ids, b.test_ids);
    }
}
