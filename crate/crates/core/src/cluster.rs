//! Agglomerative clustering of clients by their latest model updates.
//!
//! Updates are compared by Euclidean distance, merged bottom-up with Ward
//! linkage (Lance–Williams recurrence), and the dendrogram is cut at a
//! maximum linkage distance.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::ParamVector;
use crate::{Error, Result};

/// One update vector `θ_i − θ_global` per client.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateMatrix {
    rows: Vec<Vec<f64>>,
    client_ids: Vec<usize>,
}

/// Dense symmetric distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    /// Node ids: leaves are `0..leaf_count`, the node created by merge `k`
    /// is `leaf_count + k`.
    pub node_a: usize,
    pub node_b: usize,
    pub linkage_distance: f64,
    pub merged_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub merges: Vec<Merge>,
    pub leaf_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// Cluster label per client row, numbered by first appearance.
    pub labels: Vec<usize>,
    pub num_clusters: usize,
    pub threshold_used: f64,
}

impl UpdateMatrix {
    pub fn new(rows: Vec<Vec<f64>>, client_ids: Vec<usize>) -> Result<Self> {
        if rows.len() != client_ids.len() {
            return Err(Error::Dimension(format!(
                "{} update rows but {} client ids",
                rows.len(),
                client_ids.len()
            )));
        }
        if let Some(first) = rows.first() {
            if rows.iter().any(|r| r.len() != first.len()) {
                return Err(Error::Dimension("update rows differ in length".into()));
            }
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("update matrix"));
        }
        let mut seen = client_ids.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Cluster("duplicate client id in update matrix".into()));
        }
        Ok(Self { rows, client_ids })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn client_ids(&self) -> &[usize] {
        &self.client_ids
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Row `i` is `client_params[i] − global`; client ids are the positions.
pub fn compute_updates(client_params: &[ParamVector], global: &ParamVector) -> Result<UpdateMatrix> {
    let rows = client_params
        .iter()
        .map(|p| p.sub(global).map(ParamVector::into_values))
        .collect::<Result<Vec<_>>>()?;
    UpdateMatrix::new(rows, (0..client_params.len()).collect())
}

impl DistanceMatrix {
    pub fn from_full(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::Dimension(format!(
                "{} entries for a {n}x{n} matrix",
                values.len()
            )));
        }
        Ok(Self { n, values })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    fn validate(&self) -> Result<()> {
        for i in 0..self.n {
            if self.get(i, i) != 0.0 {
                return Err(Error::Cluster(format!("non-zero diagonal at {i}")));
            }
            for j in i + 1..self.n {
                let d = self.get(i, j);
                if d.is_nan() {
                    return Err(Error::Cluster(format!("NaN distance between {i} and {j}")));
                }
                if !(d >= 0.0 && d.is_finite()) || d != self.get(j, i) {
                    return Err(Error::Cluster(format!(
                        "invalid or asymmetric distance between {i} and {j}"
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn pairwise_euclidean(updates: &UpdateMatrix) -> Result<DistanceMatrix> {
    let n = updates.len();
    if n < 2 {
        return Err(Error::Cluster(format!(
            "need at least 2 update rows, got {n}"
        )));
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let sq: f64 = updates.rows[i]
                .iter()
                .zip(&updates.rows[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let d = libm::sqrt(sq);
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    Ok(DistanceMatrix { n, values })
}

/// Ward agglomeration on a Euclidean distance matrix.
///
/// Each step merges the closest pair of active clusters; equal distances go
/// to the pair whose smallest member leaves compare lowest. After merging
/// `s` and `t` into `u`, distances to every other cluster `v` follow
///
/// ```text
/// d(u,v)² = ((|v|+|s|) d(v,s)² + (|v|+|t|) d(v,t)² − |v| d(s,t)²) / (|v|+|s|+|t|)
/// ```
pub fn ward_dendrogram(dist: &DistanceMatrix) -> Result<Dendrogram> {
    dist.validate()?;
    let n = dist.n;
    // Slot i holds the cluster whose smallest leaf is i.
    let mut d = dist.values.clone();
    let mut active: Vec<bool> = vec![true; n];
    let mut size: Vec<usize> = vec![1; n];
    let mut node: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));

    for step in 0..n.saturating_sub(1) {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in (0..n).filter(|&i| active[i]) {
            for j in (i + 1..n).filter(|&j| active[j]) {
                let dij = d[i * n + j];
                if best.is_none_or(|(_, _, b)| dij < b) {
                    best = Some((i, j, dij));
                }
            }
        }
        let (s, t, dst) = best.expect("at least two active clusters");
        let (ns, nt) = (size[s] as f64, size[t] as f64);
        for v in (0..n).filter(|&v| active[v] && v != s && v != t) {
            let nv = size[v] as f64;
            let (dvs, dvt) = (d[v * n + s], d[v * n + t]);
            let num = (nv + ns) * dvs * dvs + (nv + nt) * dvt * dvt - nv * dst * dst;
            let duv = libm::sqrt((num / (nv + ns + nt)).max(0.0));
            d[s * n + v] = duv;
            d[v * n + s] = duv;
        }
        merges.push(Merge {
            node_a: node[s],
            node_b: node[t],
            linkage_distance: dst,
            merged_size: size[s] + size[t],
        });
        active[t] = false;
        size[s] += size[t];
        node[s] = n + step;
    }
    Ok(Dendrogram {
        merges,
        leaf_count: n,
    })
}

impl Dendrogram {
    /// Sorted leaf members of the node created by each merge.
    pub fn merge_members(&self) -> Vec<Vec<usize>> {
        let n = self.leaf_count;
        let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        let mut out = Vec::with_capacity(self.merges.len());
        for m in &self.merges {
            let mut joined = members[m.node_a].clone();
            joined.extend_from_slice(&members[m.node_b]);
            joined.sort_unstable();
            members.push(joined.clone());
            out.push(joined);
        }
        out
    }

    pub fn heights(&self) -> Vec<f64> {
        self.merges.iter().map(|m| m.linkage_distance).collect()
    }
}

/// Applies every merge at or below `max_distance`; the resulting forest
/// components are the clusters.
pub fn cut_threshold(dend: &Dendrogram, max_distance: f64) -> ClusterAssignment {
    let n = dend.leaf_count;
    let total = n + dend.merges.len();
    let mut parent: Vec<usize> = (0..total).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (k, m) in dend.merges.iter().enumerate() {
        if m.linkage_distance <= max_distance {
            let new = n + k;
            let a = find(&mut parent, m.node_a);
            let b = find(&mut parent, m.node_b);
            parent[a] = new;
            parent[b] = new;
        }
    }
    let mut label_of_root: Vec<Option<usize>> = vec![None; total];
    let mut labels = Vec::with_capacity(n);
    let mut num_clusters = 0;
    for leaf in 0..n {
        let root = find(&mut parent, leaf);
        let label = *label_of_root[root].get_or_insert_with(|| {
            num_clusters += 1;
            num_clusters - 1
        });
        labels.push(label);
    }
    ClusterAssignment {
        labels,
        num_clusters,
        threshold_used: max_distance,
    }
}

impl ClusterAssignment {
    /// Row positions belonging to each cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clusters];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members().iter().map(Vec::len).collect()
    }

    /// Relabels an arbitrary labeling by first appearance.
    pub fn canonical(labels: &[usize], threshold_used: f64) -> Self {
        let mut map: Vec<(usize, usize)> = Vec::new();
        let mut out = Vec::with_capacity(labels.len());
        for &l in labels {
            let next = map.len();
            let c = match map.iter().find(|(from, _)| *from == l) {
                Some(&(_, to)) => to,
                None => {
                    map.push((l, next));
                    next
                }
            };
            out.push(c);
        }
        Self {
            labels: out,
            num_clusters: map.len(),
            threshold_used,
        }
    }
}
