//! Cluster-partitioned approximate search.
//!
//! Entities are grouped by seeded k-means over their unit embeddings
//! (k-means++ initialization, 25 assignment/update rounds, empty clusters
//! re-seeded from the globally farthest point). A query scans only the
//! members of its `probes` nearest centroids, under the same ordering
//! contract as [`search_exact`](super::search_exact) — which remains the
//! correctness oracle: with `probes == n_clusters` the two are identical
//! element for element.

use rand::Rng;

use crate::encoder::{dot_f32, UnitEmbedding};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

use super::{rank_top_k, EntityIndex, RankedEntity};

const KMEANS_ROUNDS: usize = 25;

#[derive(Debug, Clone)]
pub struct PartitionedIndex {
    base: EntityIndex,
    n_clusters: usize,
    probes: usize,
    /// Unit (or re-seeded) centroids, one flat vector per cluster.
    centroids: Vec<Vec<f32>>,
    /// Entity positions per cluster, ascending.
    members: Vec<Vec<usize>>,
    /// Cluster of each entity position.
    assignments: Vec<usize>,
}

fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    // on unit vectors |a-b|^2 = 2 - 2 cos, monotone in cosine distance
    2.0 - 2.0 * dot_f32(a, b)
}

fn nearest_centroid(point: &[f32], centroids: &[Vec<f32>]) -> usize {
    let mut best = 0usize;
    let mut best_dot = f64::NEG_INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = dot_f32(point, centroid);
        if d > best_dot {
            best_dot = d;
            best = c;
        }
    }
    best
}

fn normalize_or_none(v: &[f64]) -> Option<Vec<f32>> {
    let norm = v.iter().map(|&x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return None;
    }
    Some(v.iter().map(|&x| (x / norm) as f32).collect())
}

impl PartitionedIndex {
    pub fn build(base: EntityIndex, n_clusters: usize, probes: usize, seed: u64) -> Result<Self> {
        if n_clusters == 0 || n_clusters > base.len() {
            return Err(Error::Validation(format!(
                "n_clusters must be in 1..={}, got {n_clusters}",
                base.len()
            )));
        }
        if probes == 0 || probes > n_clusters {
            return Err(Error::Validation(format!(
                "probes must be in 1..={n_clusters}, got {probes}"
            )));
        }
        let points: Vec<&[f32]> = base.embeddings().iter().map(|e| e.as_slice()).collect();
        let dim = points[0].len();
        let n = points.len();
        let mut rng = rng_from_seed(seed);

        // k-means++ seeding
        let mut centroids: Vec<Vec<f32>> = Vec::with_capacity(n_clusters);
        centroids.push(points[rng.gen_range(0..n)].to_vec());
        let mut min_dist: Vec<f64> = points
            .iter()
            .map(|p| squared_distance(p, &centroids[0]))
            .collect();
        while centroids.len() < n_clusters {
            let total: f64 = min_dist.iter().sum();
            let next = if total > 0.0 {
                let mut u = rng.gen::<f64>() * total;
                let mut chosen = n - 1;
                for (i, &d) in min_dist.iter().enumerate() {
                    if u < d {
                        chosen = i;
                        break;
                    }
                    u -= d;
                }
                chosen
            } else {
                rng.gen_range(0..n)
            };
            centroids.push(points[next].to_vec());
            for (i, p) in points.iter().enumerate() {
                let d = squared_distance(p, centroids.last().unwrap());
                if d < min_dist[i] {
                    min_dist[i] = d;
                }
            }
        }

        // assignment / update rounds
        let mut assignments = vec![0usize; n];
        for _ in 0..KMEANS_ROUNDS {
            let mut changed = false;
            for (i, p) in points.iter().enumerate() {
                let c = nearest_centroid(p, &centroids);
                if assignments[i] != c {
                    assignments[i] = c;
                    changed = true;
                }
            }

            // empty clusters steal the globally farthest point
            let mut counts = vec![0usize; n_clusters];
            for &a in &assignments {
                counts[a] += 1;
            }
            for c in 0..n_clusters {
                if counts[c] > 0 {
                    continue;
                }
                let mut farthest = None;
                let mut worst = f64::NEG_INFINITY;
                for (i, p) in points.iter().enumerate() {
                    if counts[assignments[i]] <= 1 {
                        continue;
                    }
                    let d = squared_distance(p, &centroids[assignments[i]]);
                    if d > worst {
                        worst = d;
                        farthest = Some(i);
                    }
                }
                if let Some(i) = farthest {
                    counts[assignments[i]] -= 1;
                    assignments[i] = c;
                    counts[c] = 1;
                    centroids[c] = points[i].to_vec();
                    changed = true;
                }
            }

            let mut sums = vec![vec![0.0f64; dim]; n_clusters];
            for (i, p) in points.iter().enumerate() {
                for (s, &v) in sums[assignments[i]].iter_mut().zip(p.iter()) {
                    *s += f64::from(v);
                }
            }
            for c in 0..n_clusters {
                if counts[c] == 0 {
                    continue;
                }
                if let Some(unit) = normalize_or_none(&sums[c]) {
                    centroids[c] = unit;
                }
                // a zero mean keeps the previous centroid
            }

            if !changed {
                break;
            }
        }

        // final assignment against the final centroids
        for (i, p) in points.iter().enumerate() {
            assignments[i] = nearest_centroid(p, &centroids);
        }
        let mut members = vec![Vec::new(); n_clusters];
        for (i, &a) in assignments.iter().enumerate() {
            members[a].push(i);
        }

        Ok(PartitionedIndex {
            base,
            n_clusters,
            probes,
            centroids,
            members,
            assignments,
        })
    }

    pub fn base(&self) -> &EntityIndex {
        &self.base
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn probes(&self) -> usize {
        self.probes
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    /// Scans the members of the `probes` nearest centroids.
    pub fn search(&self, query: &UnitEmbedding, k: usize) -> Vec<RankedEntity> {
        let mut centroid_scores: Vec<(usize, f64)> = self
            .centroids
            .iter()
            .enumerate()
            .map(|(c, centroid)| (c, dot_f32(query.as_slice(), centroid)))
            .collect();
        centroid_scores.sort_unstable_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("centroid scores are finite")
                .then_with(|| a.0.cmp(&b.0))
        });

        let entities = self.base.pool().entities();
        let embeddings = self.base.embeddings();
        let mut scored = Vec::new();
        for &(c, _) in centroid_scores.iter().take(self.probes) {
            for &pos in &self.members[c] {
                scored.push((
                    entities[pos].id,
                    crate::encoder::cosine_score(query, &embeddings[pos]),
                ));
            }
        }
        rank_top_k(scored, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderDims, EncoderParams};
    use crate::retriever::search_exact;
    use crate::synth::{generate_entity_pool, SynthConfig};

    fn index(n: usize) -> EntityIndex {
        let pool = generate_entity_pool(&SynthConfig {
            seed: 42,
            n_entities: n,
            ..SynthConfig::default()
        })
        .unwrap();
        let params = EncoderParams::init(EncoderDims::default(), 3);
        EntityIndex::build(&params, &pool).unwrap()
    }

    #[test]
    fn single_cluster_matches_exact_search() {
        let base = index(60);
        let pindex = PartitionedIndex::build(base.clone(), 1, 1, 7).unwrap();
        for q in 0..10 {
            let query = base.embeddings()[q * 5].clone();
            assert_eq!(pindex.search(&query, 10), search_exact(&base, &query, 10));
        }
    }

    #[test]
    fn probing_all_clusters_matches_exact_search() {
        let base = index(80);
        let pindex = PartitionedIndex::build(base.clone(), 8, 8, 7).unwrap();
        for q in 0..16 {
            let query = base.embeddings()[q * 3].clone();
            assert_eq!(pindex.search(&query, 12), search_exact(&base, &query, 12));
        }
    }

    #[test]
    fn every_entity_is_assigned_exactly_once() {
        let base = index(50);
        let pindex = PartitionedIndex::build(base, 6, 2, 1).unwrap();
        let mut seen = vec![false; 50];
        for c in 0..pindex.n_clusters() {
            for &pos in &pindex.members[c] {
                assert!(!seen[pos], "entity position {pos} assigned twice");
                seen[pos] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn build_is_deterministic_in_the_seed() {
        let base = index(50);
        let a = PartitionedIndex::build(base.clone(), 6, 2, 9).unwrap();
        let b = PartitionedIndex::build(base, 6, 2, 9).unwrap();
        assert_eq!(a.assignments(), b.assignments());
        assert_eq!(a.centroids, b.centroids);
    }

    #[test]
    fn invalid_cluster_and_probe_counts_are_rejected() {
        let base = index(10);
        assert!(PartitionedIndex::build(base.clone(), 0, 1, 0).is_err());
        assert!(PartitionedIndex::build(base.clone(), 11, 1, 0).is_err());
        assert!(PartitionedIndex::build(base.clone(), 4, 5, 0).is_err());
        assert!(PartitionedIndex::build(base, 4, 0, 0).is_err());
    }
}
