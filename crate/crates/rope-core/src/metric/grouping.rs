//! Zero-distance grouping via union-find with transitive closure.

use serde::{Deserialize, Serialize};

use super::DistanceTable;
use crate::error::{Error, Result};
use crate::mdp::QTable;

pub const GROUPING_SCHEMA_VERSION: u32 = 1;

/// Partition of the non-terminal state-action pairs. Group ids are
/// contiguous from 0 and ordered by each group's smallest member index;
/// excluded (terminal) pairs carry no id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub group_ids: Vec<Option<usize>>,
    pub n_groups: usize,
    pub tolerance: f64,
}

impl GroupAssignment {
    /// Members of each group, in group-id order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.n_groups];
        for (x, id) in self.group_ids.iter().enumerate() {
            if let Some(g) = id {
                groups[*g].push(x);
            }
        }
        groups
    }

    /// True when the two assignments induce the same partition of the same
    /// index set. Canonical id numbering makes this plain equality on the
    /// id vectors.
    pub fn same_partition(&self, other: &GroupAssignment) -> bool {
        self.group_ids == other.group_ids
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            schema_version: u32,
            tolerance: f64,
            n_groups: usize,
            group_ids: &'a Vec<Option<usize>>,
        }
        Ok(serde_json::to_string_pretty(&Doc {
            schema_version: GROUPING_SCHEMA_VERSION,
            tolerance: self.tolerance,
            n_groups: self.n_groups,
            group_ids: &self.group_ids,
        })?)
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let ra = self.find(a);
        let rb = self.find(b);
        // Keep the smaller index as root so ids come out deterministic.
        if ra < rb {
            self.parent[rb] = ra;
        } else if rb < ra {
            self.parent[ra] = rb;
        }
    }
}

/// Group indices `0..n` whose pairwise closeness is at most `tol`, excluding
/// indices where `excluded` is true. Closeness is transitively closed.
pub fn group_by_closeness(
    n: usize,
    closeness: impl Fn(usize, usize) -> f64,
    tol: f64,
    excluded: &[bool],
) -> GroupAssignment {
    assert_eq!(excluded.len(), n, "exclusion mask length");
    let mut uf = UnionFind::new(n);
    for x1 in 0..n {
        if excluded[x1] {
            continue;
        }
        for (x2, skip) in excluded.iter().enumerate().skip(x1 + 1) {
            if *skip {
                continue;
            }
            if closeness(x1, x2) <= tol {
                uf.union(x1, x2);
            }
        }
    }
    let mut next_id = 0;
    let mut id_of_root = std::collections::HashMap::new();
    let mut group_ids = vec![None; n];
    for x in 0..n {
        if excluded[x] {
            continue;
        }
        let root = uf.find(x);
        let id = *id_of_root.entry(root).or_insert_with(|| {
            let id = next_id;
            next_id += 1;
            id
        });
        group_ids[x] = Some(id);
    }
    GroupAssignment {
        group_ids,
        n_groups: next_id,
        tolerance: tol,
    }
}

/// Partition the non-terminal pairs of a converged table into groups of
/// (transitively) zero distance, up to `tol`.
pub fn group_zero_distance(
    d: &DistanceTable,
    tol: f64,
    pair_terminal_mask: &[bool],
) -> Result<GroupAssignment> {
    if pair_terminal_mask.len() != d.n_pairs() {
        return Err(Error::dimension(format!(
            "terminal mask has {} entries, table has {} pairs",
            pair_terminal_mask.len(),
            d.n_pairs()
        )));
    }
    Ok(group_by_closeness(
        d.n_pairs(),
        |x1, x2| d.values[[x1, x2]],
        tol,
        pair_terminal_mask,
    ))
}

/// Partition the non-terminal pairs by action-value level sets: two pairs
/// share a group iff their q-values differ by at most `tol` (transitively).
pub fn q_level_groups(q: &QTable, tol: f64, pair_terminal_mask: &[bool]) -> GroupAssignment {
    let flat = q.flat();
    group_by_closeness(
        flat.len(),
        |x1, x2| (flat[x1] - flat[x2]).abs(),
        tol,
        pair_terminal_mask,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::MetricKind;
    use ndarray::Array2;

    fn table_from(values: Array2<f64>) -> DistanceTable {
        DistanceTable {
            values,
            metric_kind: MetricKind::Rope,
            converged: true,
            residual: 0.0,
        }
    }

    #[test]
    fn negative_tolerance_gives_singletons() {
        let d = table_from(Array2::zeros((4, 4)));
        let g = group_zero_distance(&d, -1.0, &[false; 4]).unwrap();
        assert_eq!(g.n_groups, 4);
        assert_eq!(g.group_ids, vec![Some(0), Some(1), Some(2), Some(3)]);
    }

    #[test]
    fn zero_matrix_is_one_group() {
        let d = table_from(Array2::zeros((4, 4)));
        let g = group_zero_distance(&d, 1e-8, &[false; 4]).unwrap();
        assert_eq!(g.n_groups, 1);
    }

    #[test]
    fn terminal_pairs_are_excluded() {
        let d = table_from(Array2::zeros((3, 3)));
        let g = group_zero_distance(&d, 1e-8, &[false, true, false]).unwrap();
        assert_eq!(g.group_ids, vec![Some(0), None, Some(0)]);
        assert_eq!(g.n_groups, 1);
    }

    #[test]
    fn ids_are_ordered_by_smallest_member() {
        let mut values = Array2::from_elem((4, 4), 1.0);
        for i in 0..4 {
            values[[i, i]] = 0.0;
        }
        // join 1 and 3; leave 0 and 2 alone
        values[[1, 3]] = 0.0;
        values[[3, 1]] = 0.0;
        let g = group_zero_distance(&table_from(values), 1e-8, &[false; 4]).unwrap();
        assert_eq!(g.group_ids, vec![Some(0), Some(1), Some(2), Some(1)]);
    }

    #[test]
    fn transitive_closure_merges_chains() {
        // 0~1 and 1~2 close, 0~2 far: still one group by transitivity.
        let mut values = Array2::from_elem((3, 3), 1.0);
        for i in 0..3 {
            values[[i, i]] = 0.0;
        }
        values[[0, 1]] = 0.0;
        values[[1, 0]] = 0.0;
        values[[1, 2]] = 0.0;
        values[[2, 1]] = 0.0;
        let g = group_zero_distance(&table_from(values), 1e-8, &[false; 3]).unwrap();
        assert_eq!(g.n_groups, 1);
    }

    #[test]
    fn permuting_indices_permutes_the_partition() {
        let mut values = Array2::from_elem((5, 5), 1.0);
        for i in 0..5 {
            values[[i, i]] = 0.0;
        }
        values[[0, 4]] = 0.0;
        values[[4, 0]] = 0.0;
        values[[1, 2]] = 0.0;
        values[[2, 1]] = 0.0;
        let base = group_zero_distance(&table_from(values.clone()), 1e-8, &[false; 5]).unwrap();

        let perm = [3usize, 0, 4, 1, 2]; // new index of each old index
        let mut permuted = Array2::zeros((5, 5));
        for i in 0..5 {
            for j in 0..5 {
                permuted[[perm[i], perm[j]]] = values[[i, j]];
            }
        }
        let shuffled = group_zero_distance(&table_from(permuted), 1e-8, &[false; 5]).unwrap();
        // Same partition after mapping indices back through the permutation.
        for i in 0..5 {
            for j in 0..5 {
                let together_base = base.group_ids[i] == base.group_ids[j];
                let together_perm = shuffled.group_ids[perm[i]] == shuffled.group_ids[perm[j]];
                assert_eq!(together_base, together_perm);
            }
        }
    }
}
