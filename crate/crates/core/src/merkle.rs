//! Salted Merkle commitments over credential metadata and count-threshold
//! disclosure proofs.
//!
//! A credential leaf binds its category in the clear to a salted digest of
//! every other field:
//!
//! ```text
//! detail = SHA-256(salt || canonical_json(fields))
//! leaf   = SHA-256(0x00 || len(category) || category || detail)
//! node   = SHA-256(0x01 || left || right)
//! empty  = SHA-256(0x02 || "empty")
//! ```
//!
//! Leaves are ordered by credential id and the level below the root is
//! padded to a power of two by repeating the last leaf. A disclosure proof
//! reveals, per credential, only `detail` and its authentication path, so a
//! verifier learns the category and nothing about the remaining fields.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::canonical::{self, hex_serde, Digest};
use crate::reputation::Category;

pub fn empty_root() -> Digest {
    canonical::sha256(&[&[0x02], b"empty"])
}

pub fn detail_digest(salt: &[u8; 32], fields: &BTreeMap<String, String>) -> Digest {
    canonical::sha256(&[salt, &canonical::to_bytes(fields)])
}

pub fn leaf_hash(category: Category, detail: &Digest) -> Digest {
    let name = category.as_str().as_bytes();
    canonical::sha256(&[&[0x00], &[name.len() as u8], name, detail])
}

pub fn node_hash(left: &Digest, right: &Digest) -> Digest {
    canonical::sha256(&[&[0x01], left, right])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// One sibling on the way from a leaf to the root. `side` is the position of
/// the sibling.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathStep {
    pub side: Side,
    #[serde(with = "hex_serde")]
    pub digest: Digest,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    /// The salted detail digest of the disclosed credential.
    #[serde(with = "hex_serde")]
    pub leaf_digest: Digest,
    pub path: Vec<PathStep>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisclosureProof {
    #[serde(with = "hex_serde")]
    pub root: Digest,
    pub category: Category,
    pub k: usize,
    pub branches: Vec<Branch>,
}

impl DisclosureProof {
    pub fn to_json(&self) -> String {
        canonical::to_string(self)
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// A committed tree, kept level by level so that paths are cheap to read.
#[derive(Clone, Debug)]
pub struct MerkleTree {
    /// `levels[0]` holds the padded leaves; the last level holds the root.
    levels: Vec<Vec<Digest>>,
    leaf_count: usize,
}

impl MerkleTree {
    pub fn new(leaves: Vec<Digest>) -> Self {
        let leaf_count = leaves.len();
        if leaves.is_empty() {
            return MerkleTree {
                levels: vec![vec![empty_root()]],
                leaf_count,
            };
        }
        let mut level = leaves;
        let width = level.len().next_power_of_two();
        let last = *level.last().expect("non-empty");
        level.resize(width, last);
        let mut levels = vec![level];
        while levels.last().expect("non-empty").len() > 1 {
            let next = levels
                .last()
                .expect("non-empty")
                .chunks(2)
                .map(|pair| node_hash(&pair[0], &pair[1]))
                .collect();
            levels.push(next);
        }
        MerkleTree { levels, leaf_count }
    }

    pub fn root(&self) -> Digest {
        self.levels.last().expect("at least one level")[0]
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    /// Authentication path for the leaf at `index`, bottom up.
    pub fn path(&self, index: usize) -> Vec<PathStep> {
        assert!(index < self.leaf_count, "leaf index out of range");
        let mut steps = Vec::with_capacity(self.levels.len() - 1);
        let mut i = index;
        for level in &self.levels[..self.levels.len() - 1] {
            let (side, sib) = if i.is_multiple_of(2) {
                (Side::Right, i + 1)
            } else {
                (Side::Left, i - 1)
            };
            steps.push(PathStep {
                side,
                digest: level[sib],
            });
            i /= 2;
        }
        steps
    }
}

pub fn root_from_path(leaf: Digest, path: &[PathStep]) -> Digest {
    path.iter().fold(leaf, |acc, step| match step.side {
        Side::Left => node_hash(&step.digest, &acc),
        Side::Right => node_hash(&acc, &step.digest),
    })
}

/// Accepts iff the proof is bound to `root`, carries at least `k` branches,
/// every branch authenticates a leaf of the claimed category, and no
/// credential is disclosed twice.
pub fn verify_proof(root: &Digest, proof: &DisclosureProof) -> bool {
    if proof.root != *root || proof.branches.len() < proof.k {
        return false;
    }
    let mut seen = std::collections::BTreeSet::new();
    for b in &proof.branches {
        if !seen.insert(b.leaf_digest) {
            return false;
        }
        let leaf = leaf_hash(proof.category, &b.leaf_digest);
        if root_from_path(leaf, &b.path) != *root {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn digest(i: u8) -> Digest {
        canonical::sha256(&[&[i]])
    }

    #[test]
    fn single_leaf_root_is_the_leaf() {
        let leaf = leaf_hash(Category::Publication, &digest(1));
        let t = MerkleTree::new(vec![leaf]);
        assert_eq!(t.root(), leaf);
        assert!(t.path(0).is_empty());
    }

    #[test]
    fn empty_tree_has_marker_root() {
        assert_eq!(MerkleTree::new(vec![]).root(), empty_root());
    }

    #[test]
    fn every_path_authenticates_for_odd_sizes() {
        for n in 1..=9u8 {
            let leaves: Vec<_> = (0..n).map(digest).collect();
            let t = MerkleTree::new(leaves.clone());
            for (i, l) in leaves.iter().enumerate() {
                assert_eq!(root_from_path(*l, &t.path(i)), t.root(), "n={n} i={i}");
            }
        }
    }

    #[test]
    fn padding_matches_hand_built_tree() {
        // three leaves a b c -> pad to a b c c
        let (a, b, c) = (digest(1), digest(2), digest(3));
        let expected = node_hash(&node_hash(&a, &b), &node_hash(&c, &c));
        assert_eq!(MerkleTree::new(vec![a, b, c]).root(), expected);
    }

    #[test]
    fn detail_digest_depends_on_salt_and_fields() {
        let mut f = BTreeMap::new();
        f.insert("venue".to_string(), "J. Econ".to_string());
        let d1 = detail_digest(&[0u8; 32], &f);
        let d2 = detail_digest(&[1u8; 32], &f);
        assert_ne!(d1, d2);
        f.insert("venue".to_string(), "J. Fin".to_string());
        assert_ne!(detail_digest(&[0u8; 32], &f), d1);
    }
}
