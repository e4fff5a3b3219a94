//! Fill-reducing orderings for symmetric sparse matrices.
//!
//! Permutations are returned as `perm[new] = old`.
//!
//! Nested dissection works on a compressed graph: vertices with identical
//! closed neighbourhoods (the vector components of one mesh node, for example)
//! are merged into one weighted supervertex before dissection and expanded
//! afterwards. Separators come from breadth-first level structures rooted at
//! a pseudo-peripheral vertex, and each separator is thinned by moving level
//! vertices that do not touch the far side back to the near side.

use std::collections::HashMap;

use crate::csr::SparseSymOp;

/// Ordering strategy for the sparse factorization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Ordering {
    Natural,
    ReverseCuthillMcKee,
    #[default]
    NestedDissection,
}

/// Undirected graph in adjacency-list form without self loops.
#[derive(Clone, Debug)]
pub struct Graph {
    ptr: Vec<usize>,
    adj: Vec<usize>,
    weight: Vec<usize>,
}

impl Graph {
    /// Graph of the off-diagonal pattern of `a`.
    pub fn from_matrix(a: &SparseSymOp) -> Self {
        let n = a.dim();
        let mut ptr = Vec::with_capacity(n + 1);
        ptr.push(0);
        let mut adj = Vec::with_capacity(a.nnz());
        for i in 0..n {
            adj.extend(a.row(i).0.iter().copied().filter(|&j| j != i));
            ptr.push(adj.len());
        }
        Self {
            ptr,
            adj,
            weight: vec![1; n],
        }
    }

    pub fn len(&self) -> usize {
        self.weight.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weight.is_empty()
    }

    fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[self.ptr[v]..self.ptr[v + 1]]
    }

    /// Merges vertices with identical closed neighbourhoods.
    ///
    /// Returns the quotient graph and, for each supervertex, its members.
    fn compress(&self) -> (Graph, Vec<Vec<usize>>) {
        let n = self.len();
        let mut groups: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut rep = vec![0usize; n];
        for v in 0..n {
            let mut key: Vec<usize> = self.neighbors(v).to_vec();
            key.push(v);
            key.sort_unstable();
            key.dedup();
            let next = members.len();
            let id = *groups.entry(key).or_insert(next);
            if id == next {
                members.push(Vec::new());
            }
            members[id].push(v);
            rep[v] = id;
        }
        let nc = members.len();
        let mut ptr = Vec::with_capacity(nc + 1);
        ptr.push(0);
        let mut adj = Vec::new();
        let mut seen = vec![usize::MAX; nc];
        for (id, group) in members.iter().enumerate() {
            seen[id] = id;
            for &u in self.neighbors(group[0]) {
                let w = rep[u];
                if seen[w] != id {
                    seen[w] = id;
                    adj.push(w);
                }
            }
            ptr.push(adj.len());
        }
        let weight = members.iter().map(Vec::len).collect();
        (Graph { ptr, adj, weight }, members)
    }
}

/// Computes an ordering of the rows of `a`.
pub fn compute_ordering(a: &SparseSymOp, kind: Ordering) -> Vec<usize> {
    let n = a.dim();
    match kind {
        Ordering::Natural => (0..n).collect(),
        Ordering::ReverseCuthillMcKee => {
            let g = Graph::from_matrix(a);
            let all: Vec<usize> = (0..n).collect();
            let mut stamp = vec![0u32; n];
            rcm_subset(&g, &all, &mut stamp, 1)
        }
        Ordering::NestedDissection => {
            let g = Graph::from_matrix(a);
            let (q, members) = g.compress();
            let coarse = nested_dissection(&q, 96);
            coarse
                .into_iter()
                .flat_map(|s| members[s].iter().copied())
                .collect()
        }
    }
}

/// Inverse of a permutation.
pub fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    inv
}

/// Breadth-first level structure restricted to vertices with
/// `stamp[v] == tag`. Returns the levels.
fn level_structure(
    g: &Graph,
    root: usize,
    stamp: &[u32],
    tag: u32,
    level_of: &mut [u32],
    visit_tag: u32,
    visited: &mut [u32],
) -> Vec<Vec<usize>> {
    let mut levels: Vec<Vec<usize>> = vec![vec![root]];
    visited[root] = visit_tag;
    level_of[root] = 0;
    loop {
        let mut next = Vec::new();
        let depth = levels.len() as u32;
        for &v in levels.last().expect("at least one level") {
            for &u in g.neighbors(v) {
                if stamp[u] == tag && visited[u] != visit_tag {
                    visited[u] = visit_tag;
                    level_of[u] = depth;
                    next.push(u);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        levels.push(next);
    }
    levels
}

/// Reverse Cuthill-McKee on the vertices of `subset` (all sharing
/// `stamp == tag`; this function sets the stamp itself).
fn rcm_subset(g: &Graph, subset: &[usize], stamp: &mut [u32], tag: u32) -> Vec<usize> {
    for &v in subset {
        stamp[v] = tag;
    }
    let mut order = Vec::with_capacity(subset.len());
    let mut placed = std::collections::HashSet::with_capacity(subset.len());
    let mut by_degree: Vec<usize> = subset.to_vec();
    by_degree.sort_by_key(|&v| (g.neighbors(v).len(), v));
    for &start in &by_degree {
        if placed.contains(&start) {
            continue;
        }
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(start);
        placed.insert(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = g
                .neighbors(v)
                .iter()
                .copied()
                .filter(|&u| stamp[u] == tag && !placed.contains(&u))
                .collect();
            nbrs.sort_by_key(|&u| (g.neighbors(u).len(), u));
            for u in nbrs {
                placed.insert(u);
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

struct Task {
    vertices: Vec<usize>,
    start: usize,
}

/// Nested dissection of a weighted graph. `leaf` is the vertex count below
/// which a part is ordered by reverse Cuthill-McKee instead of being split.
fn nested_dissection(g: &Graph, leaf: usize) -> Vec<usize> {
    let n = g.len();
    let mut out = vec![usize::MAX; n];
    let mut stamp = vec![0u32; n];
    let mut visited = vec![0u32; n];
    let mut level_of = vec![0u32; n];
    let mut tag: u32 = 0;
    let mut visit_tag: u32 = 0;
    let mut stack = vec![Task {
        vertices: (0..n).collect(),
        start: 0,
    }];
    while let Some(Task { vertices, start }) = stack.pop() {
        if vertices.is_empty() {
            continue;
        }
        tag += 1;
        for &v in &vertices {
            stamp[v] = tag;
        }
        if vertices.len() <= leaf {
            let local = rcm_subset(g, &vertices, &mut stamp, tag);
            out[start..start + local.len()].copy_from_slice(&local);
            continue;
        }
        // Split off connected components first.
        visit_tag += 1;
        let first = level_structure(g, vertices[0], &stamp, tag, &mut level_of, visit_tag, &mut visited);
        let reached: usize = first.iter().map(Vec::len).sum();
        if reached < vertices.len() {
            let comp: Vec<usize> = first.into_iter().flatten().collect();
            let rest: Vec<usize> = vertices
                .iter()
                .copied()
                .filter(|&v| visited[v] != visit_tag)
                .collect();
            let comp_len = comp.len();
            stack.push(Task {
                vertices: comp,
                start,
            });
            stack.push(Task {
                vertices: rest,
                start: start + comp_len,
            });
            continue;
        }
        // Pseudo-peripheral root.
        let mut root = *vertices
            .iter()
            .min_by_key(|&&v| (g.neighbors(v).len(), v))
            .expect("nonempty");
        visit_tag += 1;
        let mut levels = level_structure(g, root, &stamp, tag, &mut level_of, visit_tag, &mut visited);
        for _ in 0..6 {
            let last = levels.last().expect("nonempty");
            let candidate = *last
                .iter()
                .min_by_key(|&&v| (g.neighbors(v).len(), v))
                .expect("nonempty");
            visit_tag += 1;
            let trial = level_structure(g, candidate, &stamp, tag, &mut level_of, visit_tag, &mut visited);
            if trial.len() > levels.len() {
                root = candidate;
                levels = trial;
            } else {
                visit_tag += 1;
                levels = level_structure(g, root, &stamp, tag, &mut level_of, visit_tag, &mut visited);
                break;
            }
        }
        if levels.len() < 3 {
            let local = rcm_subset(g, &vertices, &mut stamp, tag);
            out[start..start + local.len()].copy_from_slice(&local);
            continue;
        }
        let weight_of = |set: &Vec<usize>| set.iter().map(|&v| g.weight[v]).sum::<usize>();
        let level_w: Vec<usize> = levels.iter().map(weight_of).collect();
        let total: usize = level_w.iter().sum();
        let mut best: Option<(usize, usize)> = None;
        let mut below = 0usize;
        let mut half_level = 1;
        for (i, &w) in level_w.iter().enumerate() {
            if i > 0 && i + 1 < levels.len() {
                let above = total - below - w;
                if below.min(above) * 5 >= total {
                    if best.is_none_or(|(_, bw)| w < bw) {
                        best = Some((i, w));
                    }
                }
                if below * 2 <= total {
                    half_level = i;
                }
            }
            below += w;
        }
        let sep_level = best.map_or(half_level, |(i, _)| i);
        let depth = sep_level as u32;
        let mut part_a: Vec<usize> = Vec::new();
        let mut part_b: Vec<usize> = Vec::new();
        let mut sep: Vec<usize> = Vec::new();
        for (i, level) in levels.iter().enumerate() {
            match i.cmp(&sep_level) {
                std::cmp::Ordering::Less => part_a.extend_from_slice(level),
                std::cmp::Ordering::Greater => part_b.extend_from_slice(level),
                std::cmp::Ordering::Equal => {
                    for &v in level {
                        let touches_far = g
                            .neighbors(v)
                            .iter()
                            .any(|&u| stamp[u] == tag && level_of[u] > depth);
                        if touches_far {
                            sep.push(v);
                        } else {
                            part_a.push(v);
                        }
                    }
                }
            }
        }
        let sep_start = start + part_a.len() + part_b.len();
        sep.sort_unstable();
        out[sep_start..sep_start + sep.len()].copy_from_slice(&sep);
        let b_start = start + part_a.len();
        stack.push(Task {
            vertices: part_a,
            start,
        });
        stack.push(Task {
            vertices: part_b,
            start: b_start,
        });
    }
    debug_assert!(out.iter().all(|&v| v != usize::MAX));
    out
}
