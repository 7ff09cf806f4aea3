//! Binary Merkle tree over batch leaves.
//!
//! Internal nodes are `keccak256(0x01 || left || right)`. A level with an odd
//! number of nodes pairs its last node with itself. A single-leaf tree has
//! the leaf as its root.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evidence::{keccak256_parts, Digest, NODE_PREFIX};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MerkleError {
    #[error("cannot build a tree over an empty batch")]
    EmptyBatch,
    #[error("leaf index {index} out of range for {count} leaves")]
    IndexOutOfRange { index: usize, count: usize },
}

pub fn hash_node(left: &Digest, right: &Digest) -> Digest {
    keccak256_parts(&[&[NODE_PREFIX], left.as_bytes(), right.as_bytes()])
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MerkleTree {
    /// `levels[0]` holds the leaves, the last level holds the root alone.
    levels: Vec<Vec<Digest>>,
}

impl MerkleTree {
    pub fn build(leaves: Vec<Digest>) -> Result<Self, MerkleError> {
        build_tree(leaves)
    }

    pub fn leaves(&self) -> &[Digest] {
        &self.levels[0]
    }

    pub fn levels(&self) -> &[Vec<Digest>] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn root(&self) -> Digest {
        self.levels.last().expect("tree has at least one level")[0]
    }

    pub fn prove(&self, index: usize) -> Result<InclusionProof, MerkleError> {
        prove_inclusion(self, index)
    }
}

pub fn build_tree(leaves: Vec<Digest>) -> Result<MerkleTree, MerkleError> {
    if leaves.is_empty() {
        return Err(MerkleError::EmptyBatch);
    }
    let mut levels = vec![leaves];
    while levels.last().unwrap().len() > 1 {
        let level = levels.last().unwrap();
        let next = level
            .chunks(2)
            .map(|pair| hash_node(&pair[0], pair.get(1).unwrap_or(&pair[0])))
            .collect();
        levels.push(next);
    }
    Ok(MerkleTree { levels })
}

/// Root over `leaves` without keeping intermediate levels.
pub fn compute_root(leaves: &[Digest]) -> Result<Digest, MerkleError> {
    if leaves.is_empty() {
        return Err(MerkleError::EmptyBatch);
    }
    let mut level: Vec<Digest> = leaves.to_vec();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| hash_node(&pair[0], pair.get(1).unwrap_or(&pair[0])))
            .collect();
    }
    Ok(level[0])
}

/// Which side of the running hash a sibling sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofStep {
    #[serde(rename = "hex")]
    pub digest: Digest,
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InclusionProof {
    pub leaf_index: u64,
    pub siblings: Vec<ProofStep>,
    #[serde(rename = "root_hex")]
    pub root: Digest,
}

impl InclusionProof {
    pub fn verify(&self, leaf: &Digest) -> bool {
        verify_inclusion(self, leaf)
    }

    /// Whether the sibling sides are the ones a tree would produce for
    /// `leaf_index`. Sides alone decide verification; this additionally pins
    /// the claimed position.
    pub fn sides_match_index(&self) -> bool {
        let mut idx = self.leaf_index;
        for step in &self.siblings {
            let expected = if idx.is_multiple_of(2) { Side::Right } else { Side::Left };
            if step.side != expected {
                return false;
            }
            idx /= 2;
        }
        idx == 0
    }
}

pub fn prove_inclusion(tree: &MerkleTree, index: usize) -> Result<InclusionProof, MerkleError> {
    if index >= tree.len() {
        return Err(MerkleError::IndexOutOfRange {
            index,
            count: tree.len(),
        });
    }
    let mut siblings = Vec::with_capacity(tree.levels.len() - 1);
    let mut idx = index;
    for level in &tree.levels[..tree.levels.len() - 1] {
        let step = if idx.is_multiple_of(2) {
            // Last node of an odd level pairs with itself.
            let sibling = level.get(idx + 1).unwrap_or(&level[idx]);
            ProofStep {
                digest: *sibling,
                side: Side::Right,
            }
        } else {
            ProofStep {
                digest: level[idx - 1],
                side: Side::Left,
            }
        };
        siblings.push(step);
        idx /= 2;
    }
    Ok(InclusionProof {
        leaf_index: index as u64,
        siblings,
        root: tree.root(),
    })
}

pub fn verify_inclusion(proof: &InclusionProof, leaf: &Digest) -> bool {
    let folded = proof.siblings.iter().fold(*leaf, |acc, step| match step.side {
        Side::Left => hash_node(&step.digest, &acc),
        Side::Right => hash_node(&acc, &step.digest),
    });
    folded == proof.root
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::keccak256;
    use proptest::prelude::*;

    fn leaves(n: usize) -> Vec<Digest> {
        (0..n as u32).map(|i| keccak256(&i.to_le_bytes())).collect()
    }

    #[test]
    fn empty_batch_is_rejected() {
        assert_eq!(build_tree(vec![]), Err(MerkleError::EmptyBatch));
        assert_eq!(compute_root(&[]), Err(MerkleError::EmptyBatch));
    }

    #[test]
    fn single_leaf_is_root() {
        let l = leaves(1);
        let tree = build_tree(l.clone()).unwrap();
        assert_eq!(tree.root(), l[0]);
        let proof = tree.prove(0).unwrap();
        assert!(proof.siblings.is_empty());
        assert!(proof.verify(&l[0]));
    }

    #[test]
    fn root_depends_on_order() {
        let mut l = leaves(4);
        let a = build_tree(l.clone()).unwrap().root();
        l.swap(0, 1);
        assert_ne!(a, build_tree(l).unwrap().root());
    }

    #[test]
    fn out_of_range_index() {
        let tree = build_tree(leaves(3)).unwrap();
        assert_eq!(
            tree.prove(3),
            Err(MerkleError::IndexOutOfRange { index: 3, count: 3 })
        );
    }

    #[test]
    fn eight_leaves_give_three_siblings() {
        let tree = build_tree(leaves(8)).unwrap();
        for i in 0..8 {
            assert_eq!(tree.prove(i).unwrap().siblings.len(), 3);
        }
    }

    #[test]
    fn flipped_sibling_fails() {
        let l = leaves(8);
        let tree = build_tree(l.clone()).unwrap();
        let mut proof = tree.prove(5).unwrap();
        let mut bytes = *proof.siblings[1].digest.as_bytes();
        bytes[0] ^= 1;
        proof.siblings[1].digest = Digest::from_bytes(bytes);
        assert!(!proof.verify(&l[5]));
    }

    #[test]
    fn proof_for_one_leaf_rejects_every_other_leaf() {
        let l = leaves(8);
        let tree = build_tree(l.clone()).unwrap();
        for i in 0..8 {
            let proof = tree.prove(i).unwrap();
            for (j, leaf) in l.iter().enumerate() {
                assert_eq!(proof.verify(leaf), i == j, "proof {i} vs leaf {j}");
            }
        }
    }

    #[test]
    fn sides_follow_index() {
        let tree = build_tree(leaves(5)).unwrap();
        for i in 0..5 {
            assert!(tree.prove(i).unwrap().sides_match_index());
        }
        let mut p = tree.prove(2).unwrap();
        p.leaf_index = 3;
        assert!(!p.sides_match_index());
    }

    #[test]
    fn proof_json_shape() {
        let tree = build_tree(leaves(2)).unwrap();
        let v = serde_json::to_value(tree.prove(0).unwrap()).unwrap();
        assert_eq!(v["leaf_index"], 0);
        assert_eq!(v["siblings"][0]["side"], "right");
        assert!(v["siblings"][0]["hex"].is_string());
        assert_eq!(v["root_hex"], tree.root().to_hex());
    }

    proptest! {
        #[test]
        fn every_leaf_proves(n in 1usize..=64, salt in any::<u64>()) {
            let l: Vec<Digest> = (0..n as u64).map(|i| keccak256(&(i ^ salt).to_le_bytes())).collect();
            let tree = build_tree(l.clone()).unwrap();
            prop_assert_eq!(tree.root(), compute_root(&l).unwrap());
            for (i, leaf) in l.iter().enumerate() {
                let proof = tree.prove(i).unwrap();
                prop_assert!(proof.verify(leaf));
                prop_assert!(proof.sides_match_index());
            }
        }

        #[test]
        fn any_leaf_bit_flip_changes_root(n in 1usize..=64, pick in any::<prop::sample::Index>(), bit in 0usize..256) {
            let l = leaves(n);
            let root = compute_root(&l).unwrap();
            let mut tampered = l.clone();
            let i = pick.index(n);
            let mut bytes = *tampered[i].as_bytes();
            bytes[bit / 8] ^= 1 << (bit % 8);
            tampered[i] = Digest::from_bytes(bytes);
            prop_assert_ne!(compute_root(&tampered).unwrap(), root);
        }
    }
}
