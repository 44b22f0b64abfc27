//! Canonical indexing of the directed inter-cell interference pairs `(b, u)`:
//! BS `b` interfering at user `u` served by another BS.

use crate::network::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IciPair {
    /// Interfering BS.
    pub from: usize,
    pub user: usize,
    /// BS serving `user`.
    pub serving: usize,
}

/// Pairs ordered by interfering BS, then user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IciIndex {
    pairs: Vec<IciPair>,
    lookup: Vec<Vec<Option<usize>>>,
}

impl IciIndex {
    pub fn new(topology: &Topology) -> Self {
        let mut pairs = Vec::new();
        let mut lookup = vec![vec![None; topology.num_users()]; topology.num_bs()];
        for b in 0..topology.num_bs() {
            for u in topology.out_of_cell_users(b) {
                lookup[b][u] = Some(pairs.len());
                pairs.push(IciPair {
                    from: b,
                    user: u,
                    serving: topology.bs_of_user(u),
                });
            }
        }
        Self { pairs, lookup }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[IciPair] {
        &self.pairs
    }

    pub fn pair(&self, k: usize) -> IciPair {
        self.pairs[k]
    }

    pub fn index(&self, from: usize, user: usize) -> Option<usize> {
        self.lookup.get(from)?.get(user).copied().flatten()
    }

    /// Pairs where `b` is the interferer (caps in subproblem `b`).
    pub fn outgoing(&self, b: usize) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.pairs[k].from == b).collect()
    }

    /// Pairs where `b` serves the victim (noise-like terms in subproblem `b`).
    pub fn incoming(&self, b: usize) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.pairs[k].serving == b).collect()
    }

    /// Every pair coupling `b` to another BS: outgoing first, then incoming.
    pub fn touching(&self, b: usize) -> Vec<usize> {
        let mut v = self.outgoing(b);
        v.extend(self.incoming(b));
        v
    }

    /// Incoming pairs that end at user `u`.
    pub fn into_user(&self, u: usize) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.pairs[k].user == u).collect()
    }
}
