//! Tree-based group Diffie-Hellman.
//!
//! Each leaf holds a member's secret share `s` and the public blinded key
//! `g^s`. An internal node's secret is derived from the two-party DH of its
//! children, so a member reaches the root from its own share plus the blinded
//! keys along its copath. The group key of an epoch is a hash of the root
//! secret and the epoch counter.
//!
//! Balancing: joiners split the shallowest leaf (rightmost on ties), whose
//! owner sponsors the rekey. A leaver at maximal depth is removed and its
//! sibling subtree promoted, the sibling subtree's rightmost leaf sponsoring.
//! A shallower leaver is replaced by the rightmost deepest leaf, which moves
//! into the vacated slot with a fresh share. Leaf depths therefore never
//! differ by more than one.
//!
//! Every node whose secret a departed member knew and that survives the
//! change gets a freshly shared leaf underneath it, so nothing the leaver
//! retained derives the new root.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigUint;
use rand::RngCore;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::group::SchnorrGroup;

pub type MemberId = u32;
pub type NodeIndex = u32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GroupKeyError {
    #[error("group must have at least one member")]
    Empty,
    #[error("duplicate member id {0}")]
    Duplicate(MemberId),
    #[error("member {0} is already in the group")]
    AlreadyMember(MemberId),
    #[error("unknown member {0}")]
    UnknownMember(MemberId),
    #[error("leave would empty the group")]
    WouldEmpty,
    #[error("view is inconsistent with the tree: {0}")]
    Inconsistent(&'static str),
}

/// Per-epoch group key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupKey([u8; 32]);

impl GroupKey {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl std::fmt::Debug for GroupKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "GroupKey({:02x}{:02x}..)", self.0[0], self.0[1])
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum NodeKind {
    Leaf(MemberId),
    Internal { left: NodeIndex, right: NodeIndex },
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Node {
    parent: Option<NodeIndex>,
    kind: NodeKind,
    blinded: BigUint,
}

/// Broadcast part of the tree: structure and blinded keys.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublicTree {
    group: SchnorrGroup,
    nodes: BTreeMap<NodeIndex, Node>,
    root: NodeIndex,
    epoch: u64,
    next_index: NodeIndex,
}

/// One blinded-key broadcast: `(epoch, node index, g^secret)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlindedKeyUpdate {
    pub epoch: u64,
    pub node: NodeIndex,
    pub blinded: BigUint,
}

impl BlindedKeyUpdate {
    /// `epoch (8, BE) || node (4, BE) || element (ceil(|p|/8), BE)`.
    pub fn encode(&self, group: &SchnorrGroup) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + group.element_len());
        out.extend_from_slice(&self.epoch.to_be_bytes());
        out.extend_from_slice(&self.node.to_be_bytes());
        out.extend_from_slice(&group.encode_element(&self.blinded));
        out
    }

    pub fn decode(group: &SchnorrGroup, bytes: &[u8]) -> Option<Self> {
        if bytes.len() != 12 + group.element_len() {
            return None;
        }
        Some(BlindedKeyUpdate {
            epoch: u64::from_be_bytes(bytes[..8].try_into().ok()?),
            node: u32::from_be_bytes(bytes[8..12].try_into().ok()?),
            blinded: group.decode_element(&bytes[12..])?,
        })
    }
}

fn node_secret(group: &SchnorrGroup, own: &BigUint, sibling_blinded: &BigUint) -> BigUint {
    let shared = group.pow(sibling_blinded, own);
    let digest = Sha256::new()
        .chain_update(b"lpos/tgdh-node")
        .chain_update(group.encode_element(&shared))
        .finalize();
    group.scalar_from_bytes(&digest)
}

fn kdf(group: &SchnorrGroup, root_secret: &BigUint, epoch: u64) -> GroupKey {
    let width = group.q_bits().div_ceil(8) as usize;
    let raw = root_secret.to_bytes_be();
    let mut fixed = vec![0u8; width.saturating_sub(raw.len())];
    fixed.extend_from_slice(&raw);
    let digest = Sha256::new()
        .chain_update(b"lpos/group-key")
        .chain_update(&fixed)
        .chain_update(epoch.to_be_bytes())
        .finalize();
    GroupKey(digest.into())
}

impl PublicTree {
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn group(&self) -> &SchnorrGroup {
        &self.group
    }

    fn node(&self, idx: NodeIndex) -> &Node {
        &self.nodes[&idx]
    }

    pub fn contains_node(&self, idx: NodeIndex) -> bool {
        self.nodes.contains_key(&idx)
    }

    pub fn blinded_key(&self, idx: NodeIndex) -> Option<&BigUint> {
        self.nodes.get(&idx).map(|n| &n.blinded)
    }

    fn sibling(&self, idx: NodeIndex) -> Option<NodeIndex> {
        let parent = self.node(idx).parent?;
        match self.node(parent).kind {
            NodeKind::Internal { left, right } => Some(if left == idx { right } else { left }),
            NodeKind::Leaf(_) => unreachable!("parent is internal"),
        }
    }

    fn depth(&self, mut idx: NodeIndex) -> usize {
        let mut d = 0;
        while let Some(p) = self.node(idx).parent {
            idx = p;
            d += 1;
        }
        d
    }

    /// Leaves left to right with their depths.
    fn leaves(&self) -> Vec<(NodeIndex, MemberId, usize)> {
        let mut out = Vec::new();
        let mut stack = vec![(self.root, 0usize)];
        while let Some((idx, depth)) = stack.pop() {
            match self.node(idx).kind {
                NodeKind::Leaf(m) => out.push((idx, m, depth)),
                NodeKind::Internal { left, right } => {
                    stack.push((right, depth + 1));
                    stack.push((left, depth + 1));
                }
            }
        }
        out
    }

    pub fn members(&self) -> Vec<MemberId> {
        let mut m: Vec<_> = self.leaves().into_iter().map(|(_, m, _)| m).collect();
        m.sort_unstable();
        m
    }

    pub fn len(&self) -> usize {
        self.leaves().len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Length of the longest root-to-leaf path, in edges.
    pub fn height(&self) -> usize {
        self.leaves()
            .into_iter()
            .map(|(_, _, d)| d)
            .max()
            .unwrap_or(0)
    }

    pub fn leaf_of(&self, member: MemberId) -> Option<NodeIndex> {
        self.nodes.iter().find_map(|(&i, n)| match n.kind {
            NodeKind::Leaf(m) if m == member => Some(i),
            _ => None,
        })
    }

    fn rightmost_leaf(&self, mut idx: NodeIndex) -> (NodeIndex, MemberId) {
        loop {
            match self.node(idx).kind {
                NodeKind::Leaf(m) => return (idx, m),
                NodeKind::Internal { right, .. } => idx = right,
            }
        }
    }

    fn ancestors(&self, mut idx: NodeIndex) -> Vec<NodeIndex> {
        let mut out = Vec::new();
        while let Some(p) = self.node(idx).parent {
            out.push(p);
            idx = p;
        }
        out
    }

    /// Secrets from `start` (whose secret is `secret`) up to and including
    /// `stop`, using only public blinded keys.
    fn climb(
        &self,
        start: NodeIndex,
        secret: BigUint,
        stop: Option<NodeIndex>,
    ) -> Vec<(NodeIndex, BigUint)> {
        let mut out = vec![(start, secret)];
        let mut idx = start;
        while Some(idx) != stop {
            let Some(parent) = self.node(idx).parent else {
                break;
            };
            let sib = self.sibling(idx).expect("non-root has a sibling");
            let own = &out.last().expect("non-empty").1;
            let next = node_secret(&self.group, own, &self.node(sib).blinded);
            out.push((parent, next));
            idx = parent;
        }
        out
    }

    /// Group key reachable from knowing `secret` at node `idx`.
    pub fn key_from_node(&self, idx: NodeIndex, secret: &BigUint) -> Option<GroupKey> {
        if !self.contains_node(idx) {
            return None;
        }
        let path = self.climb(idx, secret.clone(), None);
        let (top, root_secret) = path.last().expect("non-empty");
        (*top == self.root).then(|| kdf(&self.group, root_secret, self.epoch))
    }

    fn replace_child(&mut self, parent: Option<NodeIndex>, old: NodeIndex, new: NodeIndex) {
        match parent {
            None => self.root = new,
            Some(p) => {
                if let NodeKind::Internal { left, right } =
                    &mut self.nodes.get_mut(&p).unwrap().kind
                {
                    if *left == old {
                        *left = new;
                    } else {
                        debug_assert_eq!(*right, old);
                        *right = new;
                    }
                }
            }
        }
        self.nodes.get_mut(&new).unwrap().parent = parent;
    }

    fn alloc(&mut self, node: Node) -> NodeIndex {
        let idx = self.next_index;
        self.next_index += 1;
        self.nodes.insert(idx, node);
        idx
    }
}

/// A member's knowledge: its own share plus the public tree.
#[derive(Clone, Debug)]
pub struct MemberView {
    member: MemberId,
    leaf_secret: BigUint,
    tree: PublicTree,
}

impl MemberView {
    pub fn member(&self) -> MemberId {
        self.member
    }

    pub fn epoch(&self) -> u64 {
        self.tree.epoch
    }

    pub fn tree(&self) -> &PublicTree {
        &self.tree
    }

    /// Every `(node, secret)` this member can compute, leaf first.
    pub fn path_secrets(&self) -> Result<Vec<(NodeIndex, BigUint)>, GroupKeyError> {
        let leaf = self
            .tree
            .leaf_of(self.member)
            .ok_or(GroupKeyError::Inconsistent("member not in tree"))?;
        let leaf_node = self.tree.node(leaf);
        if self.tree.group.exp_g(&self.leaf_secret) != leaf_node.blinded {
            return Err(GroupKeyError::Inconsistent(
                "share does not match blinded key",
            ));
        }
        Ok(self.tree.climb(leaf, self.leaf_secret.clone(), None))
    }

    pub fn derive_group_key(&self) -> Result<GroupKey, GroupKeyError> {
        let path = self.path_secrets()?;
        let (_, root_secret) = path.last().expect("non-empty");
        Ok(kdf(&self.tree.group, root_secret, self.tree.epoch))
    }
}

/// Outcome of one epoch change.
#[derive(Clone, Debug)]
pub struct RekeyReport {
    pub epoch: u64,
    pub broadcasts: Vec<BlindedKeyUpdate>,
    /// Nodes whose secret changed (refreshed leaves plus recomputed internal nodes).
    pub touched: usize,
    pub sponsors: Vec<MemberId>,
}

/// The whole key tree as driven by a simulation: public tree plus every
/// member's share, each handed out only through [`KeyTree::view`].
#[derive(Clone, Debug)]
pub struct KeyTree {
    public: PublicTree,
    shares: BTreeMap<MemberId, BigUint>,
}

impl KeyTree {
    /// Builds the initial tree (epoch 1) for distinct `members`.
    pub fn init<R: RngCore + ?Sized>(
        group: SchnorrGroup,
        members: &[MemberId],
        rng: &mut R,
    ) -> Result<(KeyTree, RekeyReport), GroupKeyError> {
        let (&first, rest) = members.split_first().ok_or(GroupKeyError::Empty)?;
        let mut seen = BTreeSet::new();
        for &m in members {
            if !seen.insert(m) {
                return Err(GroupKeyError::Duplicate(m));
            }
        }
        let share = group.random_scalar(rng);
        let blinded = group.exp_g(&share);
        let mut nodes = BTreeMap::new();
        nodes.insert(
            0,
            Node {
                parent: None,
                kind: NodeKind::Leaf(first),
                blinded,
            },
        );
        let mut tree = KeyTree {
            public: PublicTree {
                group,
                nodes,
                root: 0,
                epoch: 0,
                next_index: 1,
            },
            shares: BTreeMap::from([(first, share)]),
        };
        let mut fresh = BTreeSet::from([first]);
        for &m in rest {
            tree.insert_leaf(m, rng);
            fresh.insert(m);
        }
        let report = tree.finish_epoch(fresh, BTreeSet::new(), rng);
        Ok((tree, report))
    }

    pub fn public(&self) -> &PublicTree {
        &self.public
    }

    pub fn epoch(&self) -> u64 {
        self.public.epoch
    }

    pub fn members(&self) -> Vec<MemberId> {
        self.shares.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.shares.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shares.is_empty()
    }

    pub fn height(&self) -> usize {
        self.public.height()
    }

    pub fn view(&self, member: MemberId) -> Option<MemberView> {
        Some(MemberView {
            member,
            leaf_secret: self.shares.get(&member)?.clone(),
            tree: self.public.clone(),
        })
    }

    /// Current group key as derived by the lowest-id member.
    pub fn group_key(&self) -> GroupKey {
        let first = *self.shares.keys().next().expect("tree is never empty");
        self.view(first)
            .expect("member exists")
            .derive_group_key()
            .expect("tree is consistent")
    }

    fn insert_leaf<R: RngCore + ?Sized>(&mut self, member: MemberId, rng: &mut R) -> MemberId {
        let leaves = self.public.leaves();
        let min_depth = leaves.iter().map(|l| l.2).min().expect("non-empty");
        let (split_idx, sponsor, _) = *leaves
            .iter()
            .rev()
            .find(|l| l.2 == min_depth)
            .expect("a shallowest leaf exists");
        let g = self.public.group.clone();
        let share = g.random_scalar(rng);
        let new_leaf = self.public.alloc(Node {
            parent: None,
            kind: NodeKind::Leaf(member),
            blinded: g.exp_g(&share),
        });
        let parent = self.public.node(split_idx).parent;
        let internal = self.public.alloc(Node {
            parent,
            kind: NodeKind::Internal {
                left: split_idx,
                right: new_leaf,
            },
            blinded: BigUint::default(),
        });
        self.public.replace_child(parent, split_idx, internal);
        self.public.nodes.get_mut(&split_idx).unwrap().parent = Some(internal);
        self.public.nodes.get_mut(&new_leaf).unwrap().parent = Some(internal);
        self.shares.insert(member, share);
        sponsor
    }

    /// Adds members in one batch; one new epoch.
    pub fn join<R: RngCore + ?Sized>(
        &mut self,
        joiners: &[MemberId],
        rng: &mut R,
    ) -> Result<RekeyReport, GroupKeyError> {
        self.update(joiners, &[], rng)
    }

    /// Removes members in one batch; one new epoch.
    pub fn leave<R: RngCore + ?Sized>(
        &mut self,
        leavers: &[MemberId],
        rng: &mut R,
    ) -> Result<RekeyReport, GroupKeyError> {
        self.update(&[], leavers, rng)
    }

    /// Applies leaves, then joins, as a single epoch change.
    pub fn update<R: RngCore + ?Sized>(
        &mut self,
        joiners: &[MemberId],
        leavers: &[MemberId],
        rng: &mut R,
    ) -> Result<RekeyReport, GroupKeyError> {
        let mut seen = BTreeSet::new();
        for &m in leavers {
            if !self.shares.contains_key(&m) {
                return Err(GroupKeyError::UnknownMember(m));
            }
            if !seen.insert(m) {
                return Err(GroupKeyError::Duplicate(m));
            }
        }
        if seen.len() >= self.shares.len() {
            return Err(GroupKeyError::WouldEmpty);
        }
        for &m in joiners {
            if self.shares.contains_key(&m) {
                return Err(GroupKeyError::AlreadyMember(m));
            }
            if !seen.insert(m) {
                return Err(GroupKeyError::Duplicate(m));
            }
        }

        let mut known_by_leavers = BTreeSet::new();
        let mut refresh = BTreeSet::new();
        let mut recompute = BTreeSet::new();
        for &m in leavers {
            let leaf = self.public.leaf_of(m).expect("validated");
            known_by_leavers.extend(self.public.ancestors(leaf));
            self.remove_leaf(m, &mut refresh, &mut recompute);
        }
        refresh.retain(|m| self.shares.contains_key(m));
        recompute.retain(|m| self.shares.contains_key(m));
        for &m in joiners {
            refresh.insert(self.insert_leaf(m, rng));
            refresh.insert(m);
        }
        // Any surviving node a leaver knew needs a fresh share beneath it.
        for idx in known_by_leavers {
            if !self.public.contains_node(idx) {
                continue;
            }
            let covered = refresh.iter().any(|&m| {
                let leaf = self.public.leaf_of(m).expect("member present");
                self.public.ancestors(leaf).contains(&idx)
            });
            if !covered {
                refresh.insert(self.public.rightmost_leaf(idx).1);
            }
        }
        Ok(self.finish_epoch(refresh, recompute, rng))
    }

    fn remove_leaf(
        &mut self,
        member: MemberId,
        refresh: &mut BTreeSet<MemberId>,
        recompute: &mut BTreeSet<MemberId>,
    ) {
        let leaf = self.public.leaf_of(member).expect("member present");
        let leaves = self.public.leaves();
        let max_depth = leaves.iter().map(|l| l.2).max().expect("non-empty");
        let depth = self.public.depth(leaf);
        self.shares.remove(&member);
        if depth == max_depth {
            let sibling = self.promote_sibling(leaf);
            refresh.insert(self.public.rightmost_leaf(sibling).1);
        } else {
            let (deep_leaf, mover, _) = *leaves
                .iter()
                .rev()
                .find(|l| l.2 == max_depth)
                .expect("a deepest leaf exists");
            let stayed = self.promote_sibling(deep_leaf);
            recompute.insert(self.public.rightmost_leaf(stayed).1);
            // The mover takes over the vacated slot; its share is refreshed later.
            self.public.nodes.get_mut(&leaf).unwrap().kind = NodeKind::Leaf(mover);
            refresh.insert(mover);
        }
    }

    /// Deletes `leaf` and its parent, moving the sibling into the parent's slot.
    fn promote_sibling(&mut self, leaf: NodeIndex) -> NodeIndex {
        let parent = self
            .public
            .node(leaf)
            .parent
            .expect("group has >= 2 members");
        let sibling = self.public.sibling(leaf).expect("has sibling");
        let grand = self.public.node(parent).parent;
        self.public.replace_child(grand, parent, sibling);
        self.public.nodes.remove(&parent);
        self.public.nodes.remove(&leaf);
        sibling
    }

    /// Refreshes shares of `refresh`, recomputes every internal node on the
    /// paths of `refresh` and `recompute`, and bumps the epoch.
    fn finish_epoch<R: RngCore + ?Sized>(
        &mut self,
        refresh: BTreeSet<MemberId>,
        recompute: BTreeSet<MemberId>,
        rng: &mut R,
    ) -> RekeyReport {
        let g = self.public.group.clone();
        self.public.epoch += 1;
        let epoch = self.public.epoch;
        let mut broadcasts = Vec::new();
        let mut dirty: BTreeSet<NodeIndex> = BTreeSet::new();
        for &m in &refresh {
            let share = g.random_scalar(rng);
            let leaf = self.public.leaf_of(m).expect("sponsor present");
            let node = self.public.nodes.get_mut(&leaf).unwrap();
            node.blinded = g.exp_g(&share);
            broadcasts.push(BlindedKeyUpdate {
                epoch,
                node: leaf,
                blinded: node.blinded.clone(),
            });
            self.shares.insert(m, share);
            dirty.extend(self.public.ancestors(leaf));
        }
        for &m in &recompute {
            let leaf = self.public.leaf_of(m).expect("member present");
            dirty.extend(self.public.ancestors(leaf));
        }
        let touched = refresh.len() + dirty.len();
        let mut order: Vec<_> = dirty
            .into_iter()
            .map(|i| (self.public.depth(i), i))
            .collect();
        order.sort_unstable_by(|a, b| b.cmp(a));
        for (_, idx) in order {
            // The node's sponsor climbs from its own share.
            let (leaf, sponsor) = self.public.rightmost_leaf(idx);
            let share = self.shares[&sponsor].clone();
            let path = self.public.climb(leaf, share, Some(idx));
            let secret = &path.last().expect("non-empty").1;
            let blinded = g.exp_g(secret);
            self.public.nodes.get_mut(&idx).unwrap().blinded = blinded.clone();
            broadcasts.push(BlindedKeyUpdate {
                epoch,
                node: idx,
                blinded,
            });
        }
        RekeyReport {
            epoch,
            broadcasts,
            touched,
            sponsors: refresh.into_iter().collect(),
        }
    }
}
