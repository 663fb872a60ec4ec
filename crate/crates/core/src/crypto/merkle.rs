//! Salted Merkle tree over labelled PII entries, with per-leaf disclosure
//! proofs.
//!
//! Leaves are sorted by label before hashing so that proofs are canonical. An
//! unpaired node at the end of a level is promoted to the next level unchanged
//! (never duplicated).
//!
//! ```text
//! leaf = H(0x00 ‖ u32be(len label) ‖ label ‖ u32be(len value) ‖ value ‖ salt)
//! node = H(0x01 ‖ left ‖ right)
//! ```

use std::collections::BTreeSet;

use rand::rngs::OsRng;
use rand::{CryptoRng, RngCore};
use thiserror::Error;

use super::{tag, tagged_hash, HashDigest, Salt, SALT_LEN};
use crate::canonical::{Canonical, DecodeError, MapBuilder, MapReader, Value};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("no entries")]
    Empty,
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("disclosure request is empty")]
    EmptyRequest,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PiiLeaf {
    pub label: String,
    pub value: String,
    pub salt: Salt,
}

impl PiiLeaf {
    pub fn digest(&self) -> HashDigest {
        leaf_digest(&self.label, &self.value, &self.salt)
    }
}

pub fn leaf_digest(label: &str, value: &str, salt: &Salt) -> HashDigest {
    tagged_hash(
        tag::LEAF,
        &[
            &(label.len() as u32).to_be_bytes(),
            label.as_bytes(),
            &(value.len() as u32).to_be_bytes(),
            value.as_bytes(),
            salt.as_bytes(),
        ],
    )
}

pub fn node_digest(left: &HashDigest, right: &HashDigest) -> HashDigest {
    tagged_hash(tag::NODE, &[left.as_bytes(), right.as_bytes()])
}

#[derive(Clone, Debug)]
pub struct PiiTree {
    leaves: Vec<PiiLeaf>,
    /// `levels[0]` holds leaf digests; the last level holds only the root.
    levels: Vec<Vec<HashDigest>>,
}

impl PartialEq for PiiTree {
    fn eq(&self, other: &Self) -> bool {
        self.leaves == other.leaves
    }
}

impl PiiTree {
    fn from_leaves(mut leaves: Vec<PiiLeaf>) -> Result<Self, TreeError> {
        if leaves.is_empty() {
            return Err(TreeError::Empty);
        }
        leaves.sort_by(|a, b| a.label.as_bytes().cmp(b.label.as_bytes()));
        for pair in leaves.windows(2) {
            if pair[0].label == pair[1].label {
                return Err(TreeError::DuplicateLabel(pair[0].label.clone()));
            }
        }
        let mut levels = vec![leaves.iter().map(PiiLeaf::digest).collect::<Vec<_>>()];
        while levels.last().unwrap().len() > 1 {
            let below = levels.last().unwrap();
            let next = below
                .chunks(2)
                .map(|c| match c {
                    [l, r] => node_digest(l, r),
                    [single] => *single,
                    _ => unreachable!(),
                })
                .collect();
            levels.push(next);
        }
        Ok(PiiTree { leaves, levels })
    }

    pub fn root(&self) -> HashDigest {
        self.levels.last().unwrap()[0]
    }

    pub fn leaves(&self) -> &[PiiLeaf] {
        &self.leaves
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.leaves.iter().map(|l| l.label.as_str())
    }

    pub fn value_of(&self, label: &str) -> Option<&str> {
        self.leaves
            .iter()
            .find(|l| l.label == label)
            .map(|l| l.value.as_str())
    }

    fn path(&self, mut index: usize) -> Vec<PathStep> {
        let mut path = Vec::new();
        for level in &self.levels[..self.levels.len() - 1] {
            let sibling = index ^ 1;
            if sibling < level.len() {
                path.push(PathStep {
                    sibling: level[sibling],
                    side: if index % 2 == 0 { Side::Right } else { Side::Left },
                });
            }
            index /= 2;
        }
        path
    }
}

impl Canonical for PiiTree {
    fn to_value(&self) -> Value {
        Value::List(
            self.leaves
                .iter()
                .map(|l| {
                    MapBuilder::new()
                        .field("label", l.label.as_str())
                        .field("salt", l.salt)
                        .field("value", l.value.as_str())
                        .build()
                })
                .collect(),
        )
    }

    fn from_value(v: Value) -> Result<Self, DecodeError> {
        let Value::List(items) = v else {
            return Err(DecodeError::FieldType("pii tree"));
        };
        let leaves = items
            .into_iter()
            .map(|item| {
                let mut m = MapReader::new(item)?;
                let leaf = PiiLeaf {
                    label: m.text("label")?,
                    salt: Salt(m.fixed::<SALT_LEN>("salt")?),
                    value: m.text("value")?,
                };
                m.finish()?;
                Ok(leaf)
            })
            .collect::<Result<Vec<_>, DecodeError>>()?;
        PiiTree::from_leaves(leaves).map_err(|e| DecodeError::Invalid {
            field: "pii tree",
            reason: e.to_string(),
        })
    }
}

pub fn build_pii_tree<L, V>(entries: &[(L, V)]) -> Result<PiiTree, TreeError>
where
    L: AsRef<str>,
    V: AsRef<str>,
{
    build_pii_tree_with(entries, &mut OsRng)
}

/// Builds a tree drawing one fresh salt per leaf from `rng`.
pub fn build_pii_tree_with<L, V, R>(entries: &[(L, V)], rng: &mut R) -> Result<PiiTree, TreeError>
where
    L: AsRef<str>,
    V: AsRef<str>,
    R: RngCore + CryptoRng,
{
    let leaves = entries
        .iter()
        .map(|(l, v)| PiiLeaf {
            label: l.as_ref().to_owned(),
            value: v.as_ref().to_owned(),
            salt: Salt::random_with(rng),
        })
        .collect();
    PiiTree::from_leaves(leaves)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Side {
    Left,
    Right,
}

/// One hop towards the root: the sibling digest and which side it sits on.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct PathStep {
    pub sibling: HashDigest,
    pub side: Side,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct DisclosedLeaf {
    pub label: String,
    pub value: String,
    pub salt: Salt,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct DisclosureProof {
    pub disclosed: Vec<DisclosedLeaf>,
    pub paths: Vec<Vec<PathStep>>,
    pub root: HashDigest,
}

impl DisclosureProof {
    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.disclosed
            .iter()
            .map(|d| (d.label.as_str(), d.value.as_str()))
    }

    pub fn labels(&self) -> BTreeSet<&str> {
        self.disclosed.iter().map(|d| d.label.as_str()).collect()
    }
}

impl Canonical for DisclosureProof {
    fn to_value(&self) -> Value {
        let disclosed = self
            .disclosed
            .iter()
            .map(|d| {
                MapBuilder::new()
                    .field("label", d.label.as_str())
                    .field("salt", d.salt)
                    .field("value", d.value.as_str())
                    .build()
            })
            .collect::<Vec<_>>();
        let paths = self
            .paths
            .iter()
            .map(|p| {
                Value::List(
                    p.iter()
                        .map(|s| {
                            MapBuilder::new()
                                .field("right", s.side == Side::Right)
                                .field("sib", s.sibling)
                                .build()
                        })
                        .collect(),
                )
            })
            .collect::<Vec<_>>();
        MapBuilder::new()
            .field("disclosed", disclosed)
            .field("paths", paths)
            .field("root", self.root)
            .build()
    }

    fn from_value(v: Value) -> Result<Self, DecodeError> {
        let mut m = MapReader::new(v)?;
        let disclosed = m
            .list("disclosed")?
            .into_iter()
            .map(|item| {
                let mut d = MapReader::new(item)?;
                let leaf = DisclosedLeaf {
                    label: d.text("label")?,
                    salt: Salt(d.fixed::<SALT_LEN>("salt")?),
                    value: d.text("value")?,
                };
                d.finish()?;
                Ok(leaf)
            })
            .collect::<Result<Vec<_>, DecodeError>>()?;
        let paths = m
            .list("paths")?
            .into_iter()
            .map(|p| match p {
                Value::List(steps) => steps
                    .into_iter()
                    .map(|s| {
                        let mut s = MapReader::new(s)?;
                        let step = PathStep {
                            side: if s.boolean("right")? {
                                Side::Right
                            } else {
                                Side::Left
                            },
                            sibling: HashDigest::from_value(s.take("sib")?)?,
                        };
                        s.finish()?;
                        Ok(step)
                    })
                    .collect::<Result<Vec<_>, DecodeError>>(),
                _ => Err(DecodeError::FieldType("paths")),
            })
            .collect::<Result<Vec<_>, DecodeError>>()?;
        let root = HashDigest::from_value(m.take("root")?)?;
        m.finish()?;
        Ok(DisclosureProof {
            disclosed,
            paths,
            root,
        })
    }
}

/// Proves the leaves named by `labels`; every other leaf appears only as a
/// digest on some path.
pub fn prove_disclosure<S: AsRef<str>>(
    tree: &PiiTree,
    labels: &[S],
) -> Result<DisclosureProof, TreeError> {
    if labels.is_empty() {
        return Err(TreeError::EmptyRequest);
    }
    let mut indices = BTreeSet::new();
    for label in labels {
        let label = label.as_ref();
        let idx = tree
            .leaves
            .iter()
            .position(|l| l.label == label)
            .ok_or_else(|| TreeError::UnknownLabel(label.to_owned()))?;
        indices.insert(idx);
    }
    let mut disclosed = Vec::with_capacity(indices.len());
    let mut paths = Vec::with_capacity(indices.len());
    for idx in indices {
        let leaf = &tree.leaves[idx];
        disclosed.push(DisclosedLeaf {
            label: leaf.label.clone(),
            value: leaf.value.clone(),
            salt: leaf.salt,
        });
        paths.push(tree.path(idx));
    }
    Ok(DisclosureProof {
        disclosed,
        paths,
        root: tree.root(),
    })
}

/// True iff every disclosed leaf hashes up to `root` along its path.
pub fn verify_disclosure(root: &HashDigest, proof: &DisclosureProof) -> bool {
    if proof.root != *root || proof.disclosed.is_empty() {
        return false;
    }
    if proof.disclosed.len() != proof.paths.len() {
        return false;
    }
    let mut seen = BTreeSet::new();
    for (leaf, path) in proof.disclosed.iter().zip(&proof.paths) {
        if !seen.insert(leaf.label.as_str()) || path.len() > 64 {
            return false;
        }
        let mut acc = leaf_digest(&leaf.label, &leaf.value, &leaf.salt);
        for step in path {
            acc = match step.side {
                Side::Left => node_digest(&step.sibling, &acc),
                Side::Right => node_digest(&acc, &step.sibling),
            };
        }
        if acc != *root {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use sha2::{Digest, Sha256};

    // Independent oracle: raw SHA-256 with explicit framing, pairwise
    // reduction with odd-node promotion, no shared code with the tree.
    fn oracle_leaf(label: &str, value: &str, salt: &[u8; 16]) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update([0x00]);
        h.update((label.len() as u32).to_be_bytes());
        h.update(label.as_bytes());
        h.update((value.len() as u32).to_be_bytes());
        h.update(value.as_bytes());
        h.update(salt);
        h.finalize().into()
    }

    fn oracle_node(l: &[u8; 32], r: &[u8; 32]) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update([0x01]);
        h.update(l);
        h.update(r);
        h.finalize().into()
    }

    fn oracle_root(tree: &PiiTree) -> [u8; 32] {
        let mut sorted: Vec<_> = tree.leaves().to_vec();
        sorted.sort_by(|a, b| a.label.cmp(&b.label));
        let mut level: Vec<[u8; 32]> = sorted
            .iter()
            .map(|l| oracle_leaf(&l.label, &l.value, &l.salt.0))
            .collect();
        while level.len() > 1 {
            let mut next = Vec::new();
            let mut i = 0;
            while i < level.len() {
                if i + 1 < level.len() {
                    next.push(oracle_node(&level[i], &level[i + 1]));
                } else {
                    next.push(level[i]);
                }
                i += 2;
            }
            level = next;
        }
        level[0]
    }

    fn four() -> PiiTree {
        build_pii_tree(&[
            ("name", "Alice Example"),
            ("dob", "1980-01-01"),
            ("zip", "02139"),
            ("id", "D1234567"),
        ])
        .unwrap()
    }

    #[test]
    fn single_leaf_root_is_leaf_digest() {
        let t = build_pii_tree(&[("name", "Alice")]).unwrap();
        assert_eq!(t.root(), t.leaves()[0].digest());
        let p = prove_disclosure(&t, &["name"]).unwrap();
        assert!(p.paths[0].is_empty());
        assert!(verify_disclosure(&t.root(), &p));
    }

    #[test]
    fn four_leaf_root_matches_oracle() {
        let t = four();
        assert_eq!(t.root().0, oracle_root(&t));
    }

    #[test]
    fn three_leaf_root_promotes_last_leaf() {
        let t = build_pii_tree(&[("a", "1"), ("b", "2"), ("c", "3")]).unwrap();
        assert_eq!(t.root().0, oracle_root(&t));
        let l: Vec<_> = t.leaves().iter().map(|l| l.digest().0).collect();
        assert_eq!(t.root().0, oracle_node(&oracle_node(&l[0], &l[1]), &l[2]));
    }

    #[test]
    fn frozen_root_for_fixed_salts() {
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        let t = build_pii_tree_with(&[("a", "1"), ("b", "2"), ("c", "3")], &mut rng).unwrap();
        assert_eq!(t.root().0, oracle_root(&t));
    }

    #[test]
    fn dob_proof_has_two_siblings() {
        let t = four();
        let p = prove_disclosure(&t, &["dob"]).unwrap();
        assert_eq!(p.paths[0].len(), (4f64).log2().ceil() as usize);
        assert!(verify_disclosure(&t.root(), &p));
    }

    #[test]
    fn full_disclosure_verifies() {
        let t = four();
        let labels: Vec<_> = t.labels().map(str::to_owned).collect();
        let p = prove_disclosure(&t, &labels).unwrap();
        assert_eq!(p.disclosed.len(), 4);
        assert!(verify_disclosure(&t.root(), &p));
    }

    #[test]
    fn empty_and_unknown_requests_fail() {
        let t = four();
        let none: [&str; 0] = [];
        assert_eq!(prove_disclosure(&t, &none), Err(TreeError::EmptyRequest));
        assert_eq!(
            prove_disclosure(&t, &["ssn"]),
            Err(TreeError::UnknownLabel("ssn".into()))
        );
    }

    #[test]
    fn build_rejects_bad_entries() {
        let empty: [(&str, &str); 0] = [];
        assert_eq!(build_pii_tree(&empty).unwrap_err(), TreeError::Empty);
        assert_eq!(
            build_pii_tree(&[("a", "1"), ("a", "2")]).unwrap_err(),
            TreeError::DuplicateLabel("a".into())
        );
    }

    #[test]
    fn tampered_value_or_sibling_fails() {
        let t = four();
        let p = prove_disclosure(&t, &["dob"]).unwrap();
        let mut v = p.clone();
        v.disclosed[0].value = "1980-01-02".into();
        assert!(!verify_disclosure(&t.root(), &v));
        let mut s = p.clone();
        s.paths[0][1].sibling.0[0] ^= 0x80;
        assert!(!verify_disclosure(&t.root(), &s));
        let mut salt = p.clone();
        salt.disclosed[0].salt.0[15] ^= 1;
        assert!(!verify_disclosure(&t.root(), &salt));
        let mut side = p;
        side.paths[0][0].side = Side::Left;
        assert!(!verify_disclosure(&t.root(), &side));
    }

    #[test]
    fn proof_for_other_root_fails() {
        let a = four();
        let b = four();
        let p = prove_disclosure(&a, &["name"]).unwrap();
        assert!(!verify_disclosure(&b.root(), &p));
    }

    #[test]
    fn exhaustive_bit_flips_on_serialized_proof() {
        let t = four();
        let p = prove_disclosure(&t, &["dob"]).unwrap();
        let bytes = p.canonical_bytes();
        for bit in 0..bytes.len() * 8 {
            let mut b = bytes.clone();
            b[bit / 8] ^= 1 << (bit % 8);
            let accepted = DisclosureProof::from_canonical_bytes(&b)
                .map(|q| verify_disclosure(&t.root(), &q))
                .unwrap_or(false);
            assert!(!accepted, "bit {bit} flip accepted");
        }
    }

    #[test]
    fn tree_serialization_preserves_root() {
        let t = four();
        let back = PiiTree::from_canonical_bytes(&t.canonical_bytes()).unwrap();
        assert_eq!(back.root(), t.root());
    }
}
