use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{CommonsenseType, Sample};

/// Corpus-level counts and means. Means are `None` for an empty corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub samples: usize,
    pub images: usize,
    /// Distinct (sample, person) pairs referenced by some label.
    pub grounded_persons: usize,
    pub total_links: usize,
    pub mean_tokens_per_description: Option<f64>,
    pub mean_persons_per_image: Option<f64>,
    pub mean_links_per_description: Option<f64>,
    pub commonsense_types: BTreeMap<CommonsenseType, usize>,
}

pub fn dataset_stats(samples: &[Sample]) -> DatasetStats {
    let mut images: BTreeMap<&str, usize> = BTreeMap::new();
    let mut types = BTreeMap::new();
    let mut grounded = 0usize;
    let mut tokens = 0usize;
    let mut links = 0usize;
    for s in samples {
        images.insert(&s.image.image_id, s.image.persons.len());
        *types.entry(s.commonsense_type).or_insert(0) += 1;
        grounded += s.labels.pairs.values().collect::<BTreeSet<_>>().len();
        tokens += s.description.len();
        links += s.description.n_links();
    }
    let mean = |total: usize, count: usize| (count > 0).then(|| total as f64 / count as f64);
    let person_total: usize = images.values().sum();
    DatasetStats {
        samples: samples.len(),
        images: images.len(),
        grounded_persons: grounded,
        total_links: links,
        mean_tokens_per_description: mean(tokens, samples.len()),
        mean_persons_per_image: mean(person_total, images.len()),
        mean_links_per_description: mean(links, samples.len()),
        commonsense_types: types,
    }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures;
    use super::*;

    #[test]
    fn empty_corpus() {
        let s = dataset_stats(&[]);
        assert_eq!(s.samples, 0);
        assert_eq!(s.images, 0);
        assert_eq!(s.mean_persons_per_image, None);
        assert_eq!(s.mean_tokens_per_description, None);
    }

    #[test]
    fn mean_persons_per_image() {
        let s = dataset_stats(&[fixtures::sample("a", 3, 2), fixtures::sample("b", 5, 2)]);
        assert_eq!(s.mean_persons_per_image, Some(4.0));
        assert_eq!(s.images, 2);
        assert_eq!(s.grounded_persons, 2);
        assert_eq!(s.mean_tokens_per_description, Some(4.0));
        assert_eq!(s.commonsense_types[&CommonsenseType::Activity], 2);
    }

    #[test]
    fn permutation_invariant() {
        let a = fixtures::sample("a", 3, 2);
        let mut b = fixtures::sample("b", 6, 2);
        b.commonsense_type = CommonsenseType::Causal;
        let c = fixtures::sample("c", 2, 2);
        let one = dataset_stats(&[a.clone(), b.clone(), c.clone()]);
        let two = dataset_stats(&[c, a, b]);
        assert_eq!(one, two);
    }
}
