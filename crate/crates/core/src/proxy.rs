//! Proxy-guided cluster labeling and weighted aggregation.
//!
//! Each cluster is summarized by its mean row (its proxy); the prior
//! knowledge instances are summarized the same way. The cluster whose proxy
//! is closest to the prior proxy is labeled tumor (TI), the farthest
//! background (BGI), the rest non-tumor (NTI). Aggregation weights are
//! `1 − minmax(d)`, so TI rows keep full weight and BGI rows are zeroed.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clustering::{ClusterResult, Dissimilarity};
use crate::error::{Error, Result};
use crate::grassmann::column_mean;
use crate::numerics::{Matrix, Vector};

/// Below this spread of the raw distances the labeling is degenerate.
pub const DEGENERATE_SPREAD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "TI")]
    Tumor,
    #[serde(rename = "NTI")]
    NonTumor,
    #[serde(rename = "BGI")]
    Background,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Tumor => "TI",
            Role::NonTumor => "NTI",
            Role::Background => "BGI",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "TI" => Ok(Role::Tumor),
            "NTI" => Ok(Role::NonTumor),
            "BGI" => Ok(Role::Background),
            other => Err(Error::contract(format!("unknown role '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyLabeling {
    /// Role of each cluster id.
    pub role_of: Vec<Role>,
    pub raw_distances: Vec<f64>,
    pub norm_weights: Vec<f64>,
    pub d_min: f64,
    pub d_max: f64,
    pub d_med: f64,
    /// Cluster labeled TI.
    pub tumor: usize,
    /// Cluster labeled BGI.
    pub background: usize,
    /// True when the distances were (numerically) all equal.
    pub degenerate: bool,
}

impl ProxyLabeling {
    pub fn weight_of(&self, role: Role) -> f64 {
        let k = self.role_of.iter().position(|&r| r == role).expect("role present");
        self.norm_weights[k]
    }
}

/// Mean row of every cluster.
pub fn cluster_proxies(z: &Matrix, cr: &ClusterResult) -> Result<Vec<Vector>> {
    if cr.assignments.len() != z.nrows() {
        return Err(Error::contract("cluster result does not match the feature rows"));
    }
    let k = cr.k();
    let mut sums = vec![Vector::zeros(z.ncols()); k];
    let mut counts = vec![0usize; k];
    for (i, &a) in cr.assignments.iter().enumerate() {
        if a >= k {
            return Err(Error::contract(format!("cluster id {a} outside 0..{k}")));
        }
        sums[a] += z.row(i).transpose();
        counts[a] += 1;
    }
    sums.into_iter()
        .zip(counts)
        .enumerate()
        .map(|(c, (s, n))| if n == 0 { Err(Error::EmptyCluster(c)) } else { Ok(s / n as f64) })
        .collect()
}

/// Mean of the re-embedded prior knowledge rows.
pub fn prior_proxy(prior: &Matrix) -> Result<Vector> {
    if prior.nrows() == 0 {
        return Err(Error::MissingPrior);
    }
    Ok(column_mean(prior))
}

/// `1 − (d_k − d_TI)/(d_BGI − d_TI)` with the TI/BGI clusters held fixed.
pub fn pinned_weights(distances: &[f64], tumor: usize, background: usize, degenerate: bool) -> Vec<f64> {
    if degenerate {
        return vec![1.0; distances.len()];
    }
    let lo = distances[tumor];
    let spread = distances[background] - lo;
    distances
        .iter()
        .enumerate()
        .map(|(k, &d)| {
            if k == tumor {
                1.0
            } else if k == background {
                0.0
            } else {
                1.0 - (d - lo) / spread
            }
        })
        .collect()
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Labels clusters from their proxy-to-prior distances.
pub fn label_from_distances(distances: &[f64]) -> Result<ProxyLabeling> {
    let k = distances.len();
    if k < 2 {
        return Err(Error::contract(format!("labeling needs at least 2 clusters, got {k}")));
    }
    if distances.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::NonFinite("proxy distances".into()));
    }
    let mut tumor = 0;
    let mut background = 0;
    for (i, &d) in distances.iter().enumerate() {
        if d < distances[tumor] {
            tumor = i;
        }
        if d > distances[background] {
            background = i;
        }
    }
    let degenerate = distances[background] - distances[tumor] < DEGENERATE_SPREAD;
    if degenerate {
        tumor = 0;
        background = k - 1;
    }
    Ok(label_pinned(distances, tumor, background, degenerate))
}

/// Labeling with the TI/BGI clusters given rather than selected.
pub fn label_pinned(distances: &[f64], tumor: usize, background: usize, degenerate: bool) -> ProxyLabeling {
    let role_of = (0..distances.len())
        .map(|c| {
            if c == tumor {
                Role::Tumor
            } else if c == background {
                Role::Background
            } else {
                Role::NonTumor
            }
        })
        .collect();
    ProxyLabeling {
        role_of,
        raw_distances: distances.to_vec(),
        norm_weights: pinned_weights(distances, tumor, background, degenerate),
        d_min: distances[tumor],
        d_max: distances[background],
        d_med: median(distances),
        tumor,
        background,
        degenerate,
    }
}

/// Labels clusters by the distance of each proxy to the prior proxy.
pub fn label_clusters(proxies: &[Vector], prior: &Vector, diss: &impl Dissimilarity) -> Result<ProxyLabeling> {
    if proxies.iter().any(|p| p.len() != prior.len()) {
        return Err(Error::contract("proxy dimensions differ from the prior proxy"));
    }
    let distances: Vec<f64> = proxies
        .iter()
        .map(|p| diss.distance(p.as_slice(), prior.as_slice()))
        .collect();
    label_from_distances(&distances)
}

/// Weighted instance rows followed by the unweighted prior rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedBag {
    pub z_final: Matrix,
    pub instance_weights: Vec<f64>,
}

impl AggregatedBag {
    pub fn mean_pool(&self) -> Vector {
        column_mean(&self.z_final)
    }
}

/// Scales row `i` by `cluster_weights[assignments[i]]` and appends `prior` unscaled.
pub fn aggregate_weighted(z: &Matrix, assignments: &[usize], cluster_weights: &[f64], prior: &Matrix) -> Result<AggregatedBag> {
    if assignments.len() != z.nrows() || z.ncols() != prior.ncols() {
        return Err(Error::contract(format!(
            "aggregate shape mismatch: {} rows / {} assignments, {} vs {} columns",
            z.nrows(),
            assignments.len(),
            z.ncols(),
            prior.ncols()
        )));
    }
    let n = z.nrows();
    let total = n + prior.nrows();
    let mut z_final = Matrix::zeros(total, z.ncols());
    let mut weights = Vec::with_capacity(total);
    for (i, &a) in assignments.iter().enumerate() {
        let w = *cluster_weights
            .get(a)
            .ok_or_else(|| Error::contract(format!("cluster id {a} has no weight")))?;
        z_final.set_row(i, &(z.row(i) * w));
        weights.push(w);
    }
    for i in 0..prior.nrows() {
        z_final.set_row(n + i, &prior.row(i));
        weights.push(1.0);
    }
    Ok(AggregatedBag {
        z_final,
        instance_weights: weights,
    })
}

pub fn aggregate(z: &Matrix, cr: &ClusterResult, labeling: &ProxyLabeling, prior: &Matrix) -> Result<AggregatedBag> {
    if labeling.norm_weights.len() != cr.k() {
        return Err(Error::contract("labeling and clustering disagree on the cluster count"));
    }
    aggregate_weighted(z, &cr.assignments, &labeling.norm_weights, prior)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::{Euclidean, MetricWeights, Adaptive};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn fake_clusters(assignments: Vec<usize>, k: usize, n: usize) -> ClusterResult {
        ClusterResult {
            assignments,
            centroids: Matrix::zeros(k, n),
            inertia: 0.0,
            iterations: 1,
            converged: true,
            inertia_history: vec![0.0],
        }
    }

    #[test]
    fn proxies_of_simple_clusters() {
        let z = Matrix::from_row_slice(5, 2, &[1.0, 2.0, -1.0, 3.0, 1.0, -3.0, 7.0, 7.0, 0.0, 0.0]);
        let cr = fake_clusters(vec![1, 1, 1, 0, 2], 3, 2);
        let p = cluster_proxies(&z, &cr).unwrap();
        assert_eq!(p[0].as_slice(), &[7.0, 7.0]);
        assert_eq!(p[2].as_slice(), &[0.0, 0.0]);
        assert!((p[1][0] - 1.0 / 3.0).abs() < 1e-15 && (p[1][1] - 2.0 / 3.0).abs() < 1e-15);

        let sym = Matrix::from_row_slice(2, 2, &[1.5, -2.0, -1.5, 2.0]);
        let cr = fake_clusters(vec![0, 0], 1, 2);
        assert_eq!(cluster_proxies(&sym, &cr).unwrap()[0], Vector::zeros(2));

        let cr = fake_clusters(vec![0, 0], 2, 2);
        assert!(matches!(cluster_proxies(&sym, &cr), Err(Error::EmptyCluster(1))));
    }

    #[test]
    fn proxies_track_blob_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let centers = [[0.0, 0.0, 0.0], [5.0, -5.0, 0.0], [-4.0, 4.0, 9.0]];
        let sigma = 1.0;
        let z = Matrix::from_fn(300, 3, |i, j| {
            let e: f64 = StandardNormal.sample(&mut rng);
            centers[i % 3][j] + sigma * e
        });
        let cr = fake_clusters((0..300).map(|i| i % 3).collect(), 3, 3);
        let p = cluster_proxies(&z, &cr).unwrap();
        let bound = 3.0 * sigma / (100.0f64).sqrt();
        for c in 0..3 {
            for j in 0..3 {
                assert!((p[c][j] - centers[c][j]).abs() < bound);
            }
        }
    }

    #[test]
    fn prior_proxy_cases() {
        let one = Matrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        assert_eq!(prior_proxy(&one).unwrap().as_slice(), &[1.0, 2.0, 3.0]);
        let opposite = Matrix::from_row_slice(2, 2, &[1.0, -4.0, -1.0, 4.0]);
        assert_eq!(prior_proxy(&opposite).unwrap(), Vector::zeros(2));
        let many = Matrix::from_fn(81, 16, |i, j| (i * j) as f64);
        assert_eq!(prior_proxy(&many).unwrap().len(), 16);
        assert!(matches!(prior_proxy(&Matrix::zeros(0, 4)), Err(Error::MissingPrior)));
    }

    #[test]
    fn labeling_minmax_arithmetic() {
        let l = label_from_distances(&[0.1, 0.5, 0.9]).unwrap();
        assert_eq!(l.role_of, vec![Role::Tumor, Role::NonTumor, Role::Background]);
        assert_eq!(l.norm_weights[0], 1.0);
        assert!((l.norm_weights[1] - 0.5).abs() < 1e-15);
        assert_eq!(l.norm_weights[2], 0.0);
        assert_eq!((l.d_min, l.d_med, l.d_max), (0.1, 0.5, 0.9));

        let shuffled = label_from_distances(&[0.9, 0.1, 0.5]).unwrap();
        assert_eq!(shuffled.role_of, vec![Role::Background, Role::Tumor, Role::NonTumor]);
    }

    #[test]
    fn equal_distances_take_the_tie_path() {
        let l = label_from_distances(&[0.4, 0.4, 0.4]).unwrap();
        assert!(l.degenerate);
        assert_eq!(l.norm_weights, vec![1.0, 1.0, 1.0]);
        assert_eq!(l.role_of, vec![Role::Tumor, Role::NonTumor, Role::Background]);
    }

    #[test]
    fn label_clusters_uses_the_metric() {
        let proxies = vec![Vector::from_vec(vec![0.0, 3.0]), Vector::from_vec(vec![2.0, 0.0]), Vector::from_vec(vec![5.0, 5.0])];
        let prior = Vector::zeros(2);
        let plain = label_clusters(&proxies, &prior, &Euclidean).unwrap();
        assert_eq!(plain.tumor, 1);
        // suppress dimension 0: the first proxy becomes nearest
        let w = MetricWeights::new(vec![100.0, 0.01]).unwrap();
        let tuned = label_clusters(&proxies, &prior, &Adaptive(&w)).unwrap();
        assert_eq!(tuned.tumor, 0);
        assert_eq!(tuned.background, 2);
    }

    #[test]
    fn aggregate_cases() {
        let z = Matrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let prior = Matrix::from_row_slice(1, 2, &[9.0, 9.0]);
        let cr = fake_clusters(vec![0, 1, 2], 3, 2);

        let flat = label_from_distances(&[0.3, 0.3, 0.3]).unwrap();
        let agg = aggregate(&z, &cr, &flat, &prior).unwrap();
        assert_eq!(agg.z_final.rows(0, 3), z.rows(0, 3));
        assert_eq!(agg.z_final.row(3), prior.row(0));

        let l = label_from_distances(&[0.1, 0.5, 0.9]).unwrap();
        let agg = aggregate(&z, &cr, &l, &prior).unwrap();
        assert_eq!(agg.z_final.row(2).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
        assert_eq!(agg.instance_weights, vec![1.0, 0.5, 0.0, 1.0]);

        // independent re-summation of the pooled vector
        let mut expect = [0.0; 2];
        for (i, w) in [1.0, 0.5, 0.0].iter().enumerate() {
            for j in 0..2 {
                expect[j] += w * z[(i, j)];
            }
        }
        for j in 0..2 {
            expect[j] = (expect[j] + prior[(0, j)]) / 4.0;
        }
        let pooled = agg.mean_pool();
        assert!((pooled[0] - expect[0]).abs() < 1e-15 && (pooled[1] - expect[1]).abs() < 1e-15);

        assert!(aggregate(&z, &cr, &l, &Matrix::zeros(1, 3)).is_err());
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn labeling_invariants(d in prop::collection::vec(0.0f64..100.0, 3), c in 0.01f64..100.0) {
            let l = label_from_distances(&d).unwrap();
            let mut roles = l.role_of.clone();
            roles.sort();
            prop_assert_eq!(roles, vec![Role::Tumor, Role::NonTumor, Role::Background]);
            let w = |r| l.weight_of(r);
            prop_assert!(w(Role::Tumor) >= w(Role::NonTumor) && w(Role::NonTumor) >= w(Role::Background));
            prop_assert!(l.norm_weights.iter().all(|&v| (0.0..=1.0).contains(&v)));
            if !l.degenerate {
                prop_assert!(d.iter().all(|&x| x >= l.d_min && x <= l.d_max));

                let scaled: Vec<f64> = d.iter().map(|x| x * c).collect();
                let s = label_from_distances(&scaled).unwrap();
                if !s.degenerate {
                    prop_assert_eq!(&s.role_of, &l.role_of);
                    for (a, b) in s.norm_weights.iter().zip(&l.norm_weights) {
                        prop_assert!((a - b).abs() < 1e-12);
                    }
                    prop_assert!((s.d_min - c * l.d_min).abs() <= 1e-12 * (1.0 + s.d_min));
                    prop_assert!((s.d_max - c * l.d_max).abs() <= 1e-12 * (1.0 + s.d_max));
                    prop_assert!((s.d_med - c * l.d_med).abs() <= 1e-12 * (1.0 + s.d_med));
                }
            }
        }
    }
}
