use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use super::GenotypeMatrix;
use crate::{seed, stats, Error, Result};

/// Partition of variant indices into LD clusters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub clusters: Vec<Vec<usize>>,
    /// Largest |r| between members of different clusters.
    pub max_cross_r: f64,
}

impl ClusterSet {
    pub fn singletons(p: usize) -> Self {
        Self {
            clusters: (0..p).map(|j| vec![j]).collect(),
            max_cross_r: f64::NAN,
        }
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Cluster label for each variant.
    pub fn labels(&self, p: usize) -> Vec<usize> {
        let mut out = vec![usize::MAX; p];
        for (c, members) in self.clusters.iter().enumerate() {
            for &j in members {
                out[j] = c;
            }
        }
        out
    }
}

/// |r| for all pairs, row-major p × p. Constant columns correlate 0.
pub(crate) fn abs_correlations(g: &GenotypeMatrix) -> Vec<f64> {
    let p = g.p();
    let n = g.n() as f64;
    let cols: Vec<Vec<f64>> = (0..p)
        .map(|j| {
            let c = g.column_f64(j);
            let m = stats::mean(&c);
            let centered: Vec<f64> = c.iter().map(|v| v - m).collect();
            let ss = centered.iter().map(|v| v * v).sum::<f64>();
            if ss <= 1e-12 * n {
                vec![]
            } else {
                let s = ss.sqrt();
                centered.into_iter().map(|v| v / s).collect()
            }
        })
        .collect();
    let mut r = vec![0.0; p * p];
    for a in 0..p {
        r[a * p + a] = 1.0;
        if cols[a].is_empty() {
            continue;
        }
        for b in a + 1..p {
            if cols[b].is_empty() {
                continue;
            }
            let v = cols[a].iter().zip(&cols[b]).map(|(x, y)| x * y).sum::<f64>().abs();
            r[a * p + b] = v;
            r[b * p + a] = v;
        }
    }
    r
}

/// Average-linkage clustering that keeps merging while any cross-cluster pair
/// exceeds `r_max`. Merging only ever happens between clusters joined by a
/// violating pair and never stops while one remains, so the result is exactly
/// the connected components of the graph with edges |r| > r_max; those are
/// computed directly.
pub fn ld_cluster(g: &GenotypeMatrix, r_max: f64) -> Result<ClusterSet> {
    let p = g.p();
    if p < 2 {
        return Err(Error::InvalidConfig("LD clustering needs at least 2 variants".into()));
    }
    let r = abs_correlations(g);
    let mut parent: Vec<usize> = (0..p).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for a in 0..p {
        for b in a + 1..p {
            if r[a * p + b] > r_max {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut by_root: Vec<Vec<usize>> = vec![Vec::new(); p];
    for j in 0..p {
        let root = find(&mut parent, j);
        by_root[root].push(j);
    }
    let clusters: Vec<Vec<usize>> = by_root.into_iter().filter(|c| !c.is_empty()).collect();
    let labels = ClusterSet { clusters: clusters.clone(), max_cross_r: 0.0 }.labels(p);
    let mut max_cross_r: f64 = 0.0;
    for a in 0..p {
        for b in a + 1..p {
            if labels[a] != labels[b] {
                max_cross_r = max_cross_r.max(r[a * p + b]);
            }
        }
    }
    Ok(ClusterSet { clusters, max_cross_r })
}

/// One uniformly random member per cluster, in cluster order.
pub fn representatives(clusters: &ClusterSet, seed_value: u64) -> Vec<usize> {
    let mut rng = seed::rng(seed_value);
    clusters
        .clusters
        .iter()
        .map(|c| *c.choose(&mut rng).expect("clusters are non-empty"))
        .collect()
}

/// `s` distinct clusters uniformly at random, one random member from each.
pub fn choose_causal(clusters: &ClusterSet, s: usize, seed_value: u64) -> Result<Vec<usize>> {
    if s == 0 {
        return Err(Error::InvalidConfig("need at least one causal variant".into()));
    }
    if clusters.len() < s {
        return Err(Error::InvalidConfig(format!(
            "{} clusters cannot host {s} causal variants",
            clusters.len()
        )));
    }
    let mut rng = seed::rng(seed_value);
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.shuffle(&mut rng);
    Ok(order[..s]
        .iter()
        .map(|&c| *clusters.clusters[c].choose(&mut rng).expect("clusters are non-empty"))
        .collect())
}
