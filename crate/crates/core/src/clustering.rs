//! FG-Clustering: agglomerative grouping of feature columns under the
//! features-group distance, stopped by a distance threshold.

use rayon::prelude::*;

use crate::dataset::FeatureSet;
use crate::error::{Error, Result};
use crate::info::{group_distance_with, pairwise_distance, DistanceKind, InfoContext};

/// Number of threshold halvings tried before falling back to singletons when
/// a feature space collapses into one group.
const MAX_HALVINGS: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterSet {
    /// Disjoint, sorted column-index lists covering `0..N`, ordered by their
    /// smallest member.
    pub groups: Vec<Vec<usize>>,
    pub generation: usize,
}

impl ClusterSet {
    pub fn singletons(n: usize, generation: usize) -> Self {
        ClusterSet {
            groups: (0..n).map(|i| vec![i]).collect(),
            generation,
        }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// True when the groups exactly partition `0..n` and each is sorted.
    pub fn is_partition_of(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for g in &self.groups {
            if g.is_empty() || g.windows(2).any(|w| w[0] >= w[1]) {
                return false;
            }
            for &i in g {
                if i >= n || seen[i] {
                    return false;
                }
                seen[i] = true;
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Pairwise column distances and target relevances for one feature set.
/// Group distances are always recomputed from these member-level values.
pub struct GroupDistances {
    n: usize,
    dist: Vec<f64>,
    relevance: Vec<f64>,
}

impl GroupDistances {
    pub fn new(fs: &FeatureSet, ctx: &InfoContext, kind: DistanceKind) -> Self {
        let n = fs.n_cols();
        let relevance = ctx.relevances(fs);
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if j > i {
                            pairwise_distance(fs.values(i), fs.values(j), kind)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                dist[i * n + j] = rows[i][j];
                dist[j * n + i] = rows[i][j];
            }
        }
        GroupDistances { n, dist, relevance }
    }

    pub fn group_distance(&self, ci: &[usize], cj: &[usize]) -> f64 {
        group_distance_with(ci, cj, &self.relevance, |a, b| self.dist[a * self.n + b])
    }

    /// Mean group distance over all singleton pairs; 0 when `N < 2`.
    pub fn mean_singleton_distance(&self) -> f64 {
        let n = self.n;
        if n < 2 {
            return 0.0;
        }
        let mut sum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                sum += self.group_distance(&[i], &[j]);
            }
        }
        sum / (n * (n - 1) / 2) as f64
    }

    /// Merge the closest pair while its distance is strictly below
    /// `threshold`. Ties go to the lexicographically smallest pair of group
    /// positions.
    pub fn agglomerate(&self, threshold: f64, generation: usize) -> ClusterSet {
        let mut groups: Vec<Vec<usize>> = (0..self.n).map(|i| vec![i]).collect();
        // Upper-triangular cache of group distances, refreshed for the merged
        // group after every merge.
        let mut cache: Vec<Vec<f64>> = (0..self.n)
            .map(|i| (0..self.n).map(|j| if j > i { self.group_distance(&[i], &[j]) } else { 0.0 }).collect())
            .collect();

        while groups.len() > 1 {
            let mut best = (f64::INFINITY, 0, 0);
            for i in 0..groups.len() {
                for j in i + 1..groups.len() {
                    let d = cache[i][j];
                    if d < best.0 {
                        best = (d, i, j);
                    }
                }
            }
            let (d, i, j) = best;
            if !(d < threshold) {
                break;
            }
            let absorbed = groups.remove(j);
            cache.remove(j);
            for row in cache.iter_mut() {
                row.remove(j);
            }
            groups[i].extend(absorbed);
            groups[i].sort_unstable();
            for k in 0..groups.len() {
                if k == i {
                    continue;
                }
                let (lo, hi) = if k < i { (k, i) } else { (i, k) };
                cache[lo][hi] = self.group_distance(&groups[lo], &groups[hi]);
            }
        }
        ClusterSet { groups, generation }
    }
}

/// FG-Clustering with an explicit threshold.
pub fn fg_cluster(fs: &FeatureSet, ctx: &InfoContext, kind: DistanceKind, threshold: f64) -> Result<ClusterSet> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidConfig(format!("clustering threshold must be positive, got {threshold}")));
    }
    Ok(GroupDistances::new(fs, ctx, kind).agglomerate(threshold, 0))
}

/// Default threshold: `delta` times the mean singleton-pair distance. When
/// every distance is zero the smallest positive number is used, so identical
/// columns still merge.
pub fn default_threshold(distances: &GroupDistances, delta: f64) -> f64 {
    let t = delta * distances.mean_singleton_distance();
    if t > 0.0 {
        t
    } else {
        f64::MIN_POSITIVE
    }
}

/// Clustering for one cascade step. If the default threshold leaves a single
/// group over two or more columns, the threshold is halved until at least two
/// groups appear; if halving never separates them the step falls back to
/// singleton groups.
pub fn cluster_for_step(
    fs: &FeatureSet,
    ctx: &InfoContext,
    kind: DistanceKind,
    delta: f64,
    generation: usize,
) -> ClusterSet {
    let distances = GroupDistances::new(fs, ctx, kind);
    let mut threshold = default_threshold(&distances, delta);
    let mut clusters = distances.agglomerate(threshold, generation);
    if fs.n_cols() < 2 {
        return clusters;
    }
    let mut halvings = 0;
    while clusters.len() == 1 && halvings < MAX_HALVINGS {
        threshold /= 2.0;
        halvings += 1;
        clusters = distances.agglomerate(threshold, generation);
    }
    if clusters.len() == 1 {
        log::debug!("feature space does not separate; using singleton groups");
        clusters = ClusterSet::singletons(fs.n_cols(), generation);
    }
    clusters
}

/// Restrict `fs` to one group's columns. Indices must be sorted and valid.
pub fn cluster_columns(fs: &FeatureSet, cluster: &[usize]) -> Result<FeatureSet> {
    if cluster.is_empty() {
        return Err(Error::EmptyCluster);
    }
    if cluster.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("cluster indices must be strictly ascending".into()));
    }
    fs.select_columns(cluster)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Target;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_fs(n: usize, m: usize, seed: u64) -> FeatureSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let y: Vec<f64> = (0..m).map(|r| cols[0][r] + rng.gen_range(-0.5..0.5)).collect();
        let names: Vec<String> = (0..n).map(|i| format!("f{i}")).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        FeatureSet::from_columns(&names, cols, Target::regression("y", y)).unwrap()
    }

    #[test]
    fn identical_columns_form_one_group() {
        let col: Vec<f64> = (0..20).map(|i| (i as f64).sqrt()).collect();
        let t = Target::regression("y", (0..20).map(|i| i as f64).collect());
        let fs = FeatureSet::from_columns(&["a", "b", "c"], vec![col.clone(), col.clone(), col], t).unwrap();
        let ctx = InfoContext::new(fs.target(), 4);
        let c = fg_cluster(&fs, &ctx, DistanceKind::Euclidean, 1e-9).unwrap();
        assert_eq!(c.groups, vec![vec![0, 1, 2]]);
    }

    #[test]
    fn tiny_threshold_keeps_singletons() {
        // first seed whose singleton distances are all positive
        let (fs, ctx, min) = (0..)
            .find_map(|seed| {
                let fs = random_fs(5, 40, seed);
                let ctx = InfoContext::new(fs.target(), 6);
                let gd = GroupDistances::new(&fs, &ctx, DistanceKind::Euclidean);
                let min = (0..5)
                    .flat_map(|i| (i + 1..5).map(move |j| (i, j)))
                    .map(|(i, j)| gd.group_distance(&[i], &[j]))
                    .fold(f64::INFINITY, f64::min);
                (min > 0.0).then_some((fs, ctx, min))
            })
            .unwrap();
        let c = fg_cluster(&fs, &ctx, DistanceKind::Euclidean, min).unwrap();
        assert_eq!(c.len(), 5);
        assert!(fg_cluster(&fs, &ctx, DistanceKind::Euclidean, 0.0).is_err());
    }

    #[test]
    fn cluster_views() {
        let fs = random_fs(3, 10, 2);
        let v = cluster_columns(&fs, &[0]).unwrap();
        assert_eq!(v.n_cols(), 1);
        assert_eq!(v.column(0).meta, fs.column(0).meta);
        let v = cluster_columns(&fs, &[0, 2]).unwrap();
        assert_eq!(v.names(), vec!["f0", "f2"]);
        assert!(matches!(cluster_columns(&fs, &[]), Err(Error::EmptyCluster)));
        assert!(matches!(cluster_columns(&fs, &[0, 5]), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn step_clustering_always_offers_two_groups() {
        let col: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let t = Target::regression("y", col.clone());
        let fs = FeatureSet::from_columns(&["a", "b"], vec![col.clone(), col], t).unwrap();
        let ctx = InfoContext::new(fs.target(), 4);
        let c = cluster_for_step(&fs, &ctx, DistanceKind::Euclidean, 1.0, 3);
        assert_eq!(c.len(), 2);
        assert_eq!(c.generation, 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn threshold_monotonicity(seed in 0u64..1000, n in 2usize..9) {
            let fs = random_fs(n, 30, seed);
            let ctx = InfoContext::new(fs.target(), 6);
            let gd = GroupDistances::new(&fs, &ctx, DistanceKind::Euclidean);
            let base = gd.mean_singleton_distance().max(1e-9);
            let mut last = usize::MAX;
            for f in [0.1, 0.5, 1.0, 2.0, 4.0] {
                let c = gd.agglomerate(base * f, 0);
                prop_assert!(c.is_partition_of(n));
                prop_assert!(c.len() <= last);
                last = c.len();
            }
        }

        #[test]
        fn permutation_relabels_partition(seed in 0u64..1000, n in 2usize..8) {
            let fs = random_fs(n, 30, seed);
            let ctx = InfoContext::new(fs.target(), 6);
            let gd = GroupDistances::new(&fs, &ctx, DistanceKind::Euclidean);
            let mut singles: Vec<u64> = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .map(|(i, j)| gd.group_distance(&[i], &[j]).to_bits())
                .collect();
            let total = singles.len();
            singles.sort_unstable();
            singles.dedup();
            prop_assume!(singles.len() == total);
            let threshold = gd.mean_singleton_distance().max(1e-9);
            let c = gd.agglomerate(threshold, 0);

            let mut perm: Vec<usize> = (0..n).collect();
            perm.reverse();
            let pfs = fs.select_columns(&perm).unwrap();
            let pgd = GroupDistances::new(&pfs, &ctx, DistanceKind::Euclidean);
            let pc = pgd.agglomerate(threshold, 0);

            let mut a: Vec<Vec<usize>> = c.groups.clone();
            let mut b: Vec<Vec<usize>> = pc.groups.iter()
                .map(|g| { let mut v: Vec<usize> = g.iter().map(|&i| perm[i]).collect(); v.sort_unstable(); v })
                .collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }
    }
}
