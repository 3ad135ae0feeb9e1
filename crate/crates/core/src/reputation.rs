//! Soulbound credentials: issuance, revocation and appeal, reputation
//! scoring, metadata commitments, disclosure proofs and reputation stakes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::canonical::Digest;
use crate::error::{CommonsError, Result};
use crate::governance::{ProposalKind, ProposalState};
use crate::ids::{ArcId, Epoch, ProposalId, SbtId, Score, SoulId, StakeId};
use crate::merkle::{self, Branch, DisclosureProof, MerkleTree};
use crate::state::{Command, Commons};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    Publication,
    PeerReview,
    Replication,
    DataSharing,
    Mentoring,
    Credential,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Publication,
        Category::PeerReview,
        Category::Replication,
        Category::DataSharing,
        Category::Mentoring,
        Category::Credential,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Publication => "Publication",
            Category::PeerReview => "PeerReview",
            Category::Replication => "Replication",
            Category::DataSharing => "DataSharing",
            Category::Mentoring => "Mentoring",
            Category::Credential => "Credential",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = CommonsError;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| CommonsError::UnknownCategory(s.to_owned()))
    }
}

/// Per-category reputation weights. Missing categories weigh zero.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReputationWeights(#[serde(with = "weight_map")] pub BTreeMap<Category, Score>);

impl Default for ReputationWeights {
    fn default() -> Self {
        use Category::*;
        let w = [
            (Publication, 2),
            (PeerReview, 1),
            (Replication, 3),
            (DataSharing, 1),
            (Mentoring, 1),
            (Credential, 1),
        ];
        ReputationWeights(w.into_iter().map(|(c, v)| (c, Ratio::from_integer(v))).collect())
    }
}

impl ReputationWeights {
    /// Weight 1 on `category`, 0 elsewhere: the score becomes a count.
    pub fn counting(category: Category) -> Self {
        ReputationWeights([(category, Ratio::from_integer(1))].into_iter().collect())
    }

    pub fn weight(&self, category: Category) -> Score {
        self.0.get(&category).copied().unwrap_or_else(|| Ratio::from_integer(0))
    }

    /// Replication has to stay the most valuable credential.
    pub fn validate(&self) -> Result<()> {
        let repl = self.weight(Category::Replication);
        if let Some(c) = Category::ALL.into_iter().find(|c| self.weight(*c) > repl) {
            return Err(CommonsError::BadConfig(format!(
                "Replication weight must be at least the {c} weight"
            )));
        }
        Ok(())
    }
}

/// Weights read as plain numbers (`2`, `0.5`) and are written as
/// `[numerator, denominator]` only when they are not integers.
mod weight_map {
    use super::*;
    use serde::de::Error as _;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Int(u64),
        Float(f64),
        Pair(u64, u64),
    }

    pub fn serialize<S: Serializer>(m: &BTreeMap<Category, Score>, s: S) -> Result<S::Ok, S::Error> {
        let out: BTreeMap<Category, Repr> = m
            .iter()
            .map(|(c, w)| {
                let r = if w.is_integer() {
                    Repr::Int(w.to_integer())
                } else {
                    Repr::Pair(*w.numer(), *w.denom())
                };
                (*c, r)
            })
            .collect();
        out.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<Category, Score>, D::Error> {
        let raw = BTreeMap::<Category, Repr>::deserialize(d)?;
        raw.into_iter()
            .map(|(c, r)| {
                let w = match r {
                    Repr::Int(v) => Ratio::from_integer(v),
                    Repr::Pair(_, 0) => return Err(D::Error::custom("zero denominator")),
                    Repr::Pair(n, den) => Ratio::new(n, den),
                    Repr::Float(f) if f.is_finite() && f >= 0.0 => Ratio::new((f * 10_000.0).round() as u64, 10_000),
                    Repr::Float(f) => return Err(D::Error::custom(format!("bad weight {f}"))),
                };
                Ok((c, w))
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SbtStatus {
    Active,
    Revoked,
    Reinstated,
}

impl SbtStatus {
    pub fn counts(self) -> bool {
        !matches!(self, SbtStatus::Revoked)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Sbt {
    pub id: SbtId,
    pub subject: SoulId,
    pub issuer: ArcId,
    pub category: Category,
    pub issued_epoch: Epoch,
    pub status: SbtStatus,
    #[serde(with = "crate::canonical::hex_serde")]
    pub commitment: Digest,
}

/// Salt and plaintext fields; never leave the holder's side.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub(crate) struct SbtSecret {
    #[serde(with = "hex::serde")]
    pub salt: [u8; 32],
    pub fields: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ReputationStake {
    pub id: StakeId,
    pub soul: SoulId,
    pub sbt: SbtId,
    pub until_epoch: Epoch,
    pub released: bool,
}

impl Commons {
    pub fn sbt(&self, id: SbtId) -> Result<&Sbt> {
        self.sbts.get(&id).ok_or(CommonsError::UnknownSbt(id))
    }

    pub fn sbts_of(&self, soul: SoulId) -> impl Iterator<Item = &Sbt> {
        self.sbts.values().filter(move |s| s.subject == soul)
    }

    pub fn issue_sbt(
        &mut self,
        issuer: ArcId,
        subject: SoulId,
        category: Category,
        metadata: BTreeMap<String, String>,
    ) -> Result<SbtId> {
        self.arc(issuer)?;
        self.soul(subject)?;
        let salt: [u8; 32] = self.rng.gen();
        let commitment = merkle::detail_digest(&salt, &metadata);
        let id = SbtId(self.ids.next_sbt());
        self.sbts.insert(
            id,
            Sbt {
                id,
                subject,
                issuer,
                category,
                issued_epoch: self.clock,
                status: SbtStatus::Active,
                commitment,
            },
        );
        self.sbt_secrets.insert(
            id,
            SbtSecret {
                salt,
                fields: metadata.clone(),
            },
        );
        self.bump_score(subject, category, true);
        self.record(Command::IssueSbt {
            issuer,
            subject,
            category,
            metadata,
        });
        Ok(id)
    }

    /// Credentials are bound to their subject; this always fails and never
    /// touches state.
    pub fn attempt_transfer_sbt(&self, sbt: SbtId, _to: SoulId) -> Result<()> {
        Err(CommonsError::NonTransferable(sbt))
    }

    /// Weighted sum over the soul's counting credentials, recomputed from
    /// scratch.
    pub fn reputation(&self, soul: SoulId, weights: &ReputationWeights) -> Result<Score> {
        self.soul(soul)?;
        Ok(self
            .sbts_of(soul)
            .filter(|s| s.status.counts())
            .map(|s| weights.weight(s.category))
            .sum())
    }

    /// Reputation under the protocol weights, read from the incremental cache.
    pub fn reputation_score(&self, soul: SoulId) -> Result<Score> {
        self.soul(soul)?;
        Ok(self
            .scores
            .get(&soul)
            .copied()
            .unwrap_or_else(|| Ratio::from_integer(0)))
    }

    pub(crate) fn bump_score(&mut self, soul: SoulId, category: Category, up: bool) {
        let w = self.config.reputation_weights.weight(category);
        let entry = self.scores.entry(soul).or_insert_with(|| Ratio::from_integer(0));
        *entry = if up { *entry + w } else { *entry - w };
    }

    /// Revokes on the authority of an executed revocation proposal. The issue
    /// event stays in the log; revocation is a new event.
    pub fn revoke_sbt(&mut self, sbt: SbtId, authorizing_proposal: ProposalId) -> Result<()> {
        let p = self
            .proposals
            .get(&authorizing_proposal)
            .ok_or_else(|| CommonsError::NotAuthorized(format!("{authorizing_proposal} does not exist")))?;
        if p.state != ProposalState::Executed {
            return Err(CommonsError::NotAuthorized(format!(
                "{authorizing_proposal} has not been executed"
            )));
        }
        if p.kind != (ProposalKind::SbtRevocation { sbt }) {
            return Err(CommonsError::NotAuthorized(format!(
                "{authorizing_proposal} does not revoke {sbt}"
            )));
        }
        self.revoke_inner(sbt)?;
        self.record(Command::RevokeSbt {
            sbt,
            proposal: authorizing_proposal,
        });
        Ok(())
    }

    pub(crate) fn revoke_inner(&mut self, sbt: SbtId) -> Result<()> {
        let s = self.sbt(sbt)?;
        if s.status == SbtStatus::Revoked {
            return Err(CommonsError::AlreadyRevoked(sbt));
        }
        let (subject, category) = (s.subject, s.category);
        self.sbts.get_mut(&sbt).expect("checked").status = SbtStatus::Revoked;
        self.bump_score(subject, category, false);
        Ok(())
    }

    pub(crate) fn reinstate_inner(&mut self, sbt: SbtId) -> Result<()> {
        let s = self.sbt(sbt)?;
        if s.status != SbtStatus::Revoked {
            return Err(CommonsError::NotRevoked(sbt));
        }
        let (subject, category) = (s.subject, s.category);
        self.sbts.get_mut(&sbt).expect("checked").status = SbtStatus::Reinstated;
        self.bump_score(subject, category, true);
        Ok(())
    }

    /// Opens the single allowed appeal: a constitutional-class proposal in
    /// the issuing ARC whose execution reinstates the credential.
    pub fn appeal_sbt(&mut self, sbt: SbtId) -> Result<ProposalId> {
        let s = self.sbt(sbt)?;
        if s.status != SbtStatus::Revoked {
            return Err(CommonsError::NotRevoked(sbt));
        }
        if self.appeals.contains_key(&sbt) {
            return Err(CommonsError::AppealExhausted(sbt));
        }
        let (arc, subject) = (s.issuer, s.subject);
        let id = self.open_proposal(arc, subject, ProposalKind::SbtReinstate { sbt })?;
        self.appeals.insert(sbt, id);
        self.record(Command::AppealSbt { sbt });
        Ok(id)
    }

    fn active_leaves(&self, soul: SoulId) -> Vec<&Sbt> {
        // BTreeMap iteration is already in ascending id order.
        self.sbts_of(soul).filter(|s| s.status.counts()).collect()
    }

    fn tree_for(&self, soul: SoulId) -> (MerkleTree, Vec<&Sbt>) {
        let leaves = self.active_leaves(soul);
        let hashes = leaves
            .iter()
            .map(|s| merkle::leaf_hash(s.category, &s.commitment))
            .collect();
        (MerkleTree::new(hashes), leaves)
    }

    /// Merkle root over the soul's counting credentials.
    pub fn commit_metadata(&self, soul: SoulId) -> Result<Digest> {
        self.soul(soul)?;
        Ok(self.tree_for(soul).0.root())
    }

    pub fn prove_count_at_least(&self, soul: SoulId, category: Category, k: usize) -> Result<DisclosureProof> {
        self.soul(soul)?;
        let (tree, leaves) = self.tree_for(soul);
        let matching: Vec<usize> = leaves
            .iter()
            .enumerate()
            .filter(|(_, s)| s.category == category)
            .map(|(i, _)| i)
            .collect();
        if matching.len() < k {
            return Err(CommonsError::InsufficientCredentials {
                have: matching.len(),
                need: k,
            });
        }
        let branches = matching[..k]
            .iter()
            .map(|&i| Branch {
                leaf_digest: leaves[i].commitment,
                path: tree.path(i),
            })
            .collect();
        Ok(DisclosureProof {
            root: tree.root(),
            category,
            k,
            branches,
        })
    }

    pub fn stake(&self, id: StakeId) -> Result<&ReputationStake> {
        self.stakes.get(&id).ok_or(CommonsError::UnknownStake(id))
    }

    pub fn stake_sbt(&mut self, soul: SoulId, sbt: SbtId, until_epoch: Epoch) -> Result<StakeId> {
        self.soul(soul)?;
        let s = self.sbt(sbt)?;
        if s.subject != soul {
            return Err(CommonsError::NotOwner { soul, sbt });
        }
        if !s.status.counts() {
            return Err(CommonsError::SbtInactive(sbt));
        }
        if self.stakes.values().any(|st| st.sbt == sbt && !st.released) {
            return Err(CommonsError::AlreadyStaked(sbt));
        }
        if until_epoch <= self.clock {
            return Err(CommonsError::BadStakeTerm {
                until: until_epoch,
                now: self.clock,
            });
        }
        let id = StakeId(self.ids.next_stake());
        self.stakes.insert(
            id,
            ReputationStake {
                id,
                soul,
                sbt,
                until_epoch,
                released: false,
            },
        );
        self.record(Command::StakeSbt { soul, sbt, until_epoch });
        Ok(id)
    }

    pub fn unstake(&mut self, id: StakeId) -> Result<()> {
        let st = self.stake(id)?;
        if st.released {
            return Err(CommonsError::UnknownStake(id));
        }
        if self.clock < st.until_epoch {
            return Err(CommonsError::NotMature {
                until: st.until_epoch,
                now: self.clock,
            });
        }
        self.stakes.get_mut(&id).expect("checked").released = true;
        self.record(Command::Unstake { stake: id });
        Ok(())
    }

    /// An unreleased, unexpired stake on a counting credential of `category`.
    pub fn has_active_stake(&self, soul: SoulId, category: Category) -> bool {
        self.stakes.values().any(|st| {
            st.soul == soul
                && !st.released
                && st.until_epoch > self.clock
                && self
                    .sbts
                    .get(&st.sbt)
                    .is_some_and(|s| s.category == category && s.status.counts())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::governance::GovernanceConfig;
    use crate::merkle::verify_proof;
    use crate::state::CommonsConfig;

    fn setup() -> (Commons, ArcId, SoulId) {
        let mut c = Commons::new(CommonsConfig::default());
        let s = c.create_soul();
        let arc = c.create_arc(vec![s], vec![], GovernanceConfig::default()).unwrap();
        (c, arc, s)
    }

    fn meta(v: &str) -> BTreeMap<String, String> {
        [("venue".to_string(), v.to_string())].into_iter().collect()
    }

    #[test]
    fn issuing_changes_root_and_counts() {
        let (mut c, arc, s) = setup();
        let r0 = c.commit_metadata(s).unwrap();
        assert_eq!(r0, merkle::empty_root());
        c.issue_sbt(arc, s, Category::PeerReview, meta("x")).unwrap();
        let r1 = c.commit_metadata(s).unwrap();
        assert_ne!(r0, r1);
        let only = c.sbts_of(s).next().unwrap();
        assert_eq!(r1, merkle::leaf_hash(only.category, &only.commitment));
        for _ in 0..6 {
            c.issue_sbt(arc, s, Category::PeerReview, meta("x")).unwrap();
        }
        let count = c
            .reputation(s, &ReputationWeights::counting(Category::PeerReview))
            .unwrap();
        assert_eq!(count, Ratio::from_integer(7));
    }

    #[test]
    fn identical_metadata_gets_distinct_salts() {
        let (mut c, arc, s) = setup();
        let a = c.issue_sbt(arc, s, Category::Publication, meta("same")).unwrap();
        let b = c.issue_sbt(arc, s, Category::Publication, meta("same")).unwrap();
        assert_ne!(a, b);
        assert_ne!(c.sbt(a).unwrap().commitment, c.sbt(b).unwrap().commitment);
    }

    #[test]
    fn issue_errors() {
        let (mut c, arc, s) = setup();
        assert_eq!(
            c.issue_sbt(ArcId(9), s, Category::Mentoring, meta("")),
            Err(CommonsError::UnknownArc(ArcId(9)))
        );
        assert_eq!(
            c.issue_sbt(arc, SoulId(9), Category::Mentoring, meta("")),
            Err(CommonsError::UnknownSoul(SoulId(9)))
        );
        assert_eq!(
            "Sculpture".parse::<Category>(),
            Err(CommonsError::UnknownCategory("Sculpture".into()))
        );
    }

    #[test]
    fn transfers_always_fail() {
        let (mut c, arc, s) = setup();
        let t = c.issue_sbt(arc, s, Category::Credential, meta("phd")).unwrap();
        let h = c.state_hash();
        assert_eq!(c.attempt_transfer_sbt(t, s), Err(CommonsError::NonTransferable(t)));
        assert_eq!(
            c.attempt_transfer_sbt(SbtId(404), SoulId(2)),
            Err(CommonsError::NonTransferable(SbtId(404)))
        );
        assert_eq!(c.state_hash(), h);
    }

    #[test]
    fn default_weights_score() {
        let (mut c, arc, s) = setup();
        let w = ReputationWeights::default();
        assert_eq!(c.reputation(s, &w).unwrap(), Ratio::from_integer(0));
        c.issue_sbt(arc, s, Category::Publication, meta("a")).unwrap();
        c.issue_sbt(arc, s, Category::Publication, meta("b")).unwrap();
        let repl = c.issue_sbt(arc, s, Category::Replication, meta("c")).unwrap();
        assert_eq!(c.reputation(s, &w).unwrap(), Ratio::from_integer(7));
        c.revoke_inner(repl).unwrap();
        assert_eq!(c.reputation(s, &w).unwrap(), Ratio::from_integer(4));
        assert_eq!(c.reputation_score(s).unwrap(), Ratio::from_integer(4));
        assert_eq!(c.revoke_inner(repl), Err(CommonsError::AlreadyRevoked(repl)));
    }

    #[test]
    fn revoke_needs_executed_proposal() {
        let (mut c, arc, s) = setup();
        let t = c.issue_sbt(arc, s, Category::Publication, meta("a")).unwrap();
        assert!(matches!(
            c.revoke_sbt(t, ProposalId(1)),
            Err(CommonsError::NotAuthorized(_))
        ));
        let p = c
            .submit_proposal(arc, s, ProposalKind::SbtRevocation { sbt: t })
            .unwrap();
        assert!(matches!(c.revoke_sbt(t, p), Err(CommonsError::NotAuthorized(_))));
    }

    #[test]
    fn weights_validation() {
        assert!(ReputationWeights::default().validate().is_ok());
        let mut w = ReputationWeights::default();
        w.0.insert(Category::Publication, Ratio::from_integer(4));
        assert!(matches!(w.validate(), Err(CommonsError::BadConfig(_))));
        let parsed: ReputationWeights =
            serde_json::from_str(r#"{"Replication":3,"Publication":0.5,"PeerReview":[1,3]}"#).unwrap();
        assert_eq!(parsed.weight(Category::Publication), Ratio::new(1, 2));
        assert_eq!(parsed.weight(Category::PeerReview), Ratio::new(1, 3));
    }

    #[test]
    fn proofs_for_twenty_three_reviews() {
        let (mut c, arc, s) = setup();
        for i in 0..23 {
            c.issue_sbt(arc, s, Category::PeerReview, meta(&format!("rev{i}")))
                .unwrap();
        }
        c.issue_sbt(arc, s, Category::Publication, meta("p")).unwrap();
        let root = c.commit_metadata(s).unwrap();
        let proof = c.prove_count_at_least(s, Category::PeerReview, 23).unwrap();
        assert_eq!(proof.branches.len(), 23);
        assert!(verify_proof(&root, &proof));
        let empty = c.prove_count_at_least(s, Category::PeerReview, 0).unwrap();
        assert!(verify_proof(&root, &empty));
        assert_eq!(
            c.prove_count_at_least(s, Category::Publication, 7),
            Err(CommonsError::InsufficientCredentials { have: 1, need: 7 })
        );
        // disclosure never carries the plaintext venue
        assert!(!proof.to_json().contains("rev1"));
    }

    #[test]
    fn proofs_reject_foreign_roots_and_duplicates() {
        let (mut c, arc, s) = setup();
        let other = c.create_soul();
        for i in 0..5 {
            c.issue_sbt(arc, s, Category::PeerReview, meta(&i.to_string())).unwrap();
            c.issue_sbt(arc, other, Category::PeerReview, meta(&i.to_string()))
                .unwrap();
        }
        let root = c.commit_metadata(s).unwrap();
        let proof = c.prove_count_at_least(s, Category::PeerReview, 3).unwrap();
        assert!(!verify_proof(&c.commit_metadata(other).unwrap(), &proof));

        let mut forged = c.prove_count_at_least(s, Category::PeerReview, 2).unwrap();
        forged.branches.push(forged.branches[0].clone());
        forged.k = 3;
        assert!(!verify_proof(&root, &forged));

        let mut wrong_cat = proof.clone();
        wrong_cat.category = Category::Publication;
        assert!(!verify_proof(&root, &wrong_cat));
    }

    #[test]
    fn padded_duplicate_leaf_cannot_double_count() {
        let (mut c, arc, s) = setup();
        for i in 0..3 {
            c.issue_sbt(arc, s, Category::PeerReview, meta(&i.to_string())).unwrap();
        }
        // tree is a b c c; try to present the padding copy as a fourth review
        let root = c.commit_metadata(s).unwrap();
        let mut proof = c.prove_count_at_least(s, Category::PeerReview, 3).unwrap();
        let mut extra = proof.branches[2].clone();
        extra.path[0].side = merkle::Side::Left;
        proof.branches.push(extra);
        proof.k = 4;
        assert!(!verify_proof(&root, &proof));
    }

    #[test]
    fn stake_lifecycle() {
        let (mut c, arc, s) = setup();
        let other = c.create_soul();
        let t = c.issue_sbt(arc, s, Category::PeerReview, meta("r")).unwrap();
        let before = c.reputation_score(s).unwrap();
        assert_eq!(
            c.stake_sbt(other, t, 10),
            Err(CommonsError::NotOwner { soul: other, sbt: t })
        );
        assert!(matches!(c.stake_sbt(s, t, 0), Err(CommonsError::BadStakeTerm { .. })));
        let st = c.stake_sbt(s, t, 10).unwrap();
        assert_eq!(c.reputation_score(s).unwrap(), before);
        assert!(c.has_active_stake(s, Category::PeerReview));
        assert_eq!(c.stake_sbt(s, t, 20), Err(CommonsError::AlreadyStaked(t)));
        c.advance_epoch(5).unwrap();
        assert_eq!(c.unstake(st), Err(CommonsError::NotMature { until: 10, now: 5 }));
        c.advance_epoch(5).unwrap();
        c.unstake(st).unwrap();
        assert!(!c.has_active_stake(s, Category::PeerReview));
        c.stake_sbt(s, t, 20).unwrap();
    }
}
