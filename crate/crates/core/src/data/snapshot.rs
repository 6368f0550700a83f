/// A directed labelled edge `subject --relation--> object`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub subject: usize,
    pub relation: usize,
    pub object: usize,
}

/// All edges of one timestamp plus an incoming-neighbor index.
///
/// The index stores, for every entity `e`, the sorted list of
/// `(neighbor, relation)` pairs of edges `neighbor --relation--> e`, i.e. the
/// messages `e` aggregates. It is kept in compressed form: the pairs for `e`
/// are `pairs[offsets[e]..offsets[e + 1]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub timestamp: usize,
    pub edges: Vec<Edge>,
    offsets: Vec<usize>,
    pairs: Vec<(usize, usize)>,
}

impl Snapshot {
    pub fn new(timestamp: usize, edges: Vec<Edge>, num_entities: usize) -> Self {
        let mut incoming: Vec<(usize, usize, usize)> = edges
            .iter()
            .map(|e| (e.object, e.subject, e.relation))
            .collect();
        incoming.sort_unstable();
        let mut offsets = vec![0usize; num_entities + 1];
        for &(target, _, _) in &incoming {
            offsets[target + 1] += 1;
        }
        for i in 0..num_entities {
            offsets[i + 1] += offsets[i];
        }
        let pairs = incoming.into_iter().map(|(_, n, r)| (n, r)).collect();
        Self {
            timestamp,
            edges,
            offsets,
            pairs,
        }
    }

    pub fn num_entities(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Incoming `(neighbor, relation)` pairs of `entity`, sorted.
    pub fn neighbors(&self, entity: usize) -> &[(usize, usize)] {
        &self.pairs[self.offsets[entity]..self.offsets[entity + 1]]
    }

    /// All index pairs, grouped by target entity in ascending order.
    pub fn neighbor_pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Group boundaries into [`Snapshot::neighbor_pairs`]; length `|E| + 1`.
    pub fn neighbor_offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Rebuilds the edge multiset from the neighbor index, sorted.
    pub fn edges_from_index(&self) -> Vec<Edge> {
        let mut out: Vec<Edge> = (0..self.num_entities())
            .flat_map(|target| {
                self.neighbors(target).iter().map(move |&(n, r)| Edge {
                    subject: n,
                    relation: r,
                    object: target,
                })
            })
            .collect();
        out.sort_unstable();
        out
    }
}
