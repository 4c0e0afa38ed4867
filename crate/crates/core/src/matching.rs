//! Block matching and one-cluster-per-patch assignment.
//!
//! Each reference patch collects its `k_total` nearest patches (squared
//! Euclidean distance, reference included) among the patch positions whose
//! top-left corner lies in a `window x window` square centred on the
//! reference and clipped at the image border. Patches claimed by several
//! clusters are then given to one of them uniformly at random.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imgcore::{PatchMatrix, PatchSystem};

/// A reference patch and its nearest neighbours, sorted by `(distance, index)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    pub reference_index: usize,
    pub member_indices: Vec<usize>,
}

/// Inclusive range of positions covered by a window centred on `center`.
fn window_range(center: usize, window: usize, last: usize) -> (usize, usize) {
    let lo = center.saturating_sub(window / 2);
    let hi = (center + window - window / 2 - 1).min(last);
    (lo, hi)
}

#[inline]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One cluster per reference position of `sys`, in reference-grid order.
pub fn build_clusters(
    patches: &PatchMatrix,
    sys: &PatchSystem,
    k_total: usize,
    window: usize,
) -> Result<Vec<Cluster>> {
    if k_total == 0 {
        return Err(Error::InvalidArgument("cluster size must be at least 1".into()));
    }
    if window < sys.patch_size() {
        return Err(Error::InvalidArgument(format!(
            "search window {window} is smaller than the patch size {}",
            sys.patch_size()
        )));
    }
    if patches.rows() != sys.num_patches() || patches.dim() != sys.dim() {
        return Err(Error::InvalidArgument(format!(
            "patch matrix is {}x{}, patch system needs {}x{}",
            patches.rows(),
            patches.dim(),
            sys.num_patches(),
            sys.dim()
        )));
    }
    let clusters = sys
        .reference_positions()
        .into_par_iter()
        .map(|reference| cluster_for(patches, sys, reference, k_total, window))
        .collect();
    Ok(clusters)
}

fn cluster_for(
    patches: &PatchMatrix,
    sys: &PatchSystem,
    reference: usize,
    k_total: usize,
    window: usize,
) -> Cluster {
    let (r, c) = sys.position(reference);
    let (r0, r1) = window_range(r, window, sys.position_rows() - 1);
    let (c0, c1) = window_range(c, window, sys.position_cols() - 1);
    let target = patches.row(reference);
    let mut candidates: Vec<(f64, usize)> = Vec::with_capacity((r1 - r0 + 1) * (c1 - c0 + 1));
    for pr in r0..=r1 {
        for pc in c0..=c1 {
            let idx = sys.index_of(pr, pc);
            if idx != reference {
                candidates.push((squared_distance(target, patches.row(idx)), idx));
            }
        }
    }
    let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    // the reference always leads, even when tied with lower indices
    let k = (k_total - 1).min(candidates.len());
    if k == 0 {
        candidates.clear();
    } else if k < candidates.len() {
        candidates.select_nth_unstable_by(k - 1, order);
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(order);
    candidates.insert(0, (0.0, reference));
    Cluster {
        reference_index: reference,
        member_indices: candidates.into_iter().map(|(_, i)| i).collect(),
    }
}

/// Cluster id for each patch index, `None` when no cluster claimed the patch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub cluster_of: Vec<Option<usize>>,
}

impl Assignment {
    pub fn unassigned(&self) -> impl Iterator<Item = usize> + '_ {
        self.cluster_of
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_none())
            .map(|(i, _)| i)
    }

    /// Patch indices assigned to each cluster, ascending.
    pub fn members_by_cluster(&self, num_clusters: usize) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); num_clusters];
        for (i, c) in self.cluster_of.iter().enumerate() {
            if let Some(c) = c {
                groups[*c].push(i);
            }
        }
        groups
    }

    /// Gives every unclaimed patch to the cluster whose reference patch is
    /// nearest to it in Euclidean distance, among references whose search
    /// window contains the patch (ties to the lower cluster id). Falls back
    /// to the spatially nearest reference if no window contains it.
    pub fn assign_uncovered(
        &mut self,
        clusters: &[Cluster],
        patches: &PatchMatrix,
        sys: &PatchSystem,
        window: usize,
    ) {
        let rows = sys.reference_rows();
        let cols = sys.reference_cols();
        debug_assert_eq!(clusters.len(), rows.len() * cols.len());
        let containing = |refs: &[usize], p: usize, last: usize| -> Vec<usize> {
            (0..refs.len())
                .filter(|&k| {
                    let (lo, hi) = window_range(refs[k], window, last);
                    lo <= p && p <= hi
                })
                .collect()
        };
        let nearest = |refs: &[usize], p: usize| -> usize {
            (0..refs.len()).min_by_key(|&k| refs[k].abs_diff(p)).unwrap()
        };
        let missing: Vec<usize> = self.unassigned().collect();
        let picks: Vec<(usize, usize)> = missing
            .into_par_iter()
            .map(|i| {
                let (pr, pc) = sys.position(i);
                let rs = containing(rows, pr, sys.position_rows() - 1);
                let cs = containing(cols, pc, sys.position_cols() - 1);
                let best = rs
                    .iter()
                    .flat_map(|&a| cs.iter().map(move |&b| a * cols.len() + b))
                    .map(|cid| {
                        let d = squared_distance(patches.row(i), patches.row(clusters[cid].reference_index));
                        (d, cid)
                    })
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                    .map(|(_, cid)| cid)
                    .unwrap_or_else(|| nearest(rows, pr) * cols.len() + nearest(cols, pc));
                (i, best)
            })
            .collect();
        for (i, cid) in picks {
            self.cluster_of[i] = Some(cid);
        }
    }
}

/// Assigns every patch that occurs in some cluster to exactly one of the
/// clusters containing it, uniformly at random. Patches are visited in
/// ascending index order with a single ChaCha20 stream, so the result
/// depends only on `clusters` and `seed`.
pub fn assign_unique(clusters: &[Cluster], num_patches: usize, seed: u64) -> Result<Assignment> {
    if clusters.is_empty() {
        return Err(Error::InvalidArgument("no clusters to assign".into()));
    }
    let mut containing: Vec<Vec<usize>> = vec![Vec::new(); num_patches];
    for (cid, cluster) in clusters.iter().enumerate() {
        for &m in &cluster.member_indices {
            let slot = containing.get_mut(m).ok_or(Error::PatchIndex {
                index: m,
                count: num_patches,
            })?;
            if slot.last() != Some(&cid) {
                slot.push(cid);
            }
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let cluster_of = containing
        .iter()
        .map(|owners| match owners.len() {
            0 => None,
            1 => Some(owners[0]),
            n => Some(owners[rng.random_range(0..n)]),
        })
        .collect();
    Ok(Assignment { cluster_of })
}
