//! Souls, balances, vesting lockups, the epoch clock and the hash-chained
//! event log.

use serde::{Deserialize, Serialize};

use crate::canonical::{self, Digest};
use crate::error::{CommonsError, Result};
use crate::ids::{Account, Amount, Epoch, ScheduleId, SoulId};
use crate::state::{Command, Commons};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Soul {
    pub id: SoulId,
    pub balance: Amount,
    /// Portion of `balance` held by vesting schedules.
    pub locked: Amount,
    pub created_epoch: Epoch,
    /// `(epoch, balance after the last change in that epoch)`, ascending.
    pub(crate) checkpoints: Vec<(Epoch, Amount)>,
}

impl Soul {
    pub fn free(&self) -> Amount {
        self.balance - self.locked
    }

    /// Balance as it stood when `epoch` began, before any of its changes.
    pub fn balance_at_start_of(&self, epoch: Epoch) -> Amount {
        self.checkpoints
            .iter()
            .rev()
            .find(|(e, _)| *e < epoch)
            .map_or(0, |(_, b)| *b)
    }

    fn set_balance(&mut self, now: Epoch, balance: Amount) {
        self.balance = balance;
        match self.checkpoints.last_mut() {
            Some((e, b)) if *e == now => *b = balance,
            _ => self.checkpoints.push((now, balance)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VestingSchedule {
    pub id: ScheduleId,
    pub owner: SoulId,
    pub total: Amount,
    pub cliff_epochs: Epoch,
    pub duration_epochs: Epoch,
    pub start_epoch: Epoch,
    pub claimed: Amount,
}

impl VestingSchedule {
    /// Amount released by `at` under linear release after the cliff.
    pub fn vested_at(&self, at: Epoch) -> Amount {
        let elapsed = at.saturating_sub(self.start_epoch);
        if elapsed < self.cliff_epochs {
            0
        } else if elapsed >= self.duration_epochs {
            self.total
        } else {
            (u128::from(self.total) * u128::from(elapsed) / u128::from(self.duration_epochs)) as Amount
        }
    }

    pub fn claimable_at(&self, at: Epoch) -> Amount {
        self.vested_at(at).saturating_sub(self.claimed)
    }

    pub fn outstanding(&self) -> Amount {
        self.total - self.claimed
    }
}

pub(crate) fn validate_schedule(total: Amount, cliff: Epoch, duration: Epoch) -> Result<()> {
    if total == 0 {
        return Err(CommonsError::ZeroAmount);
    }
    if duration == 0 {
        return Err(CommonsError::BadSchedule("duration must be positive".into()));
    }
    if cliff == 0 {
        return Err(CommonsError::BadSchedule("cliff must be positive".into()));
    }
    if cliff > duration {
        return Err(CommonsError::BadSchedule(format!(
            "cliff {cliff} exceeds duration {duration}"
        )));
    }
    Ok(())
}

/// One line of the event log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    pub seq: u64,
    pub epoch: Epoch,
    pub kind: String,
    pub payload: serde_json::Value,
    pub hash: String,
}

impl EventRecord {
    pub fn to_line(&self) -> String {
        canonical::to_string(self)
    }
}

pub const GENESIS_PREV: Digest = [0u8; 32];

/// `SHA-256(prev_hash || canonical payload)`.
pub fn chain_hash(prev: &Digest, payload: &serde_json::Value) -> Digest {
    canonical::sha256(&[prev, &canonical::to_bytes(payload)])
}

/// Append-only, hash-chained record of every state change.
#[derive(Clone, Debug, Default)]
pub struct EventLog {
    records: Vec<EventRecord>,
    head: Option<Digest>,
}

impl EventLog {
    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn head(&self) -> Digest {
        self.head.unwrap_or(GENESIS_PREV)
    }

    pub(crate) fn append(&mut self, epoch: Epoch, kind: &str, payload: serde_json::Value) {
        let hash = chain_hash(&self.head(), &payload);
        self.records.push(EventRecord {
            seq: self.records.len() as u64,
            epoch,
            kind: kind.to_owned(),
            payload,
            hash: canonical::hex_digest(&hash),
        });
        self.head = Some(hash);
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        out
    }

    /// Parses JSON-lines and checks that every line is canonical and that the
    /// sequence numbers and hash chain are intact. Errors name the first bad
    /// seq (the zero-based line index when the line itself is unreadable).
    pub fn parse_jsonl(bytes: &[u8]) -> Result<Vec<EventRecord>> {
        let mut records = Vec::new();
        let mut prev = GENESIS_PREV;
        let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
        if body.is_empty() {
            return Ok(records);
        }
        for (idx, line) in body.split(|b| *b == b'\n').enumerate() {
            let seq = idx as u64;
            let corrupt = |reason: String| CommonsError::CorruptLog { seq, reason };
            let text = std::str::from_utf8(line).map_err(|_| corrupt("invalid UTF-8".into()))?;
            let rec: EventRecord = serde_json::from_str(text).map_err(|e| corrupt(format!("unparseable: {e}")))?;
            if rec.to_line() != text {
                return Err(corrupt("line is not in canonical form".into()));
            }
            if rec.seq != seq {
                return Err(corrupt(format!("expected seq {seq}, found {}", rec.seq)));
            }
            let kind_in_payload = rec.payload.get("op").and_then(|v| v.as_str());
            if kind_in_payload != Some(rec.kind.as_str()) {
                return Err(corrupt("kind does not match payload".into()));
            }
            let expected = chain_hash(&prev, &rec.payload);
            let stored = canonical::parse_hex_digest(&rec.hash).ok_or_else(|| corrupt("malformed hash".into()))?;
            if stored != expected {
                return Err(corrupt("hash chain broken".into()));
            }
            prev = expected;
            records.push(rec);
        }
        Ok(records)
    }
}

/// Recomputes the chain over `records` and returns the head.
pub fn verify_chain(records: &[EventRecord]) -> Result<Digest> {
    let mut prev = GENESIS_PREV;
    for (i, r) in records.iter().enumerate() {
        let seq = i as u64;
        if r.seq != seq {
            return Err(CommonsError::CorruptLog {
                seq,
                reason: "sequence gap".into(),
            });
        }
        let h = chain_hash(&prev, &r.payload);
        if canonical::hex_digest(&h) != r.hash {
            return Err(CommonsError::CorruptLog {
                seq,
                reason: "hash chain broken".into(),
            });
        }
        prev = h;
    }
    Ok(prev)
}

impl Commons {
    pub fn now(&self) -> Epoch {
        self.clock
    }

    pub fn soul(&self, id: SoulId) -> Result<&Soul> {
        self.souls.get(&id).ok_or(CommonsError::UnknownSoul(id))
    }

    pub fn souls(&self) -> impl Iterator<Item = &Soul> {
        self.souls.values()
    }

    pub fn balance(&self, id: SoulId) -> Result<Amount> {
        Ok(self.soul(id)?.balance)
    }

    pub fn free_balance(&self, id: SoulId) -> Result<Amount> {
        Ok(self.soul(id)?.free())
    }

    pub fn commons_treasury(&self) -> Amount {
        self.commons_treasury
    }

    pub fn minted(&self) -> Amount {
        self.minted
    }

    pub fn burned(&self) -> Amount {
        self.burned
    }

    pub fn create_soul(&mut self) -> SoulId {
        let id = SoulId(self.ids.next_soul());
        self.souls.insert(
            id,
            Soul {
                id,
                balance: 0,
                locked: 0,
                created_epoch: self.clock,
                checkpoints: Vec::new(),
            },
        );
        self.record(Command::CreateSoul);
        id
    }

    pub fn mint(&mut self, soul: SoulId, amount: Amount) -> Result<Amount> {
        if amount == 0 {
            return Err(CommonsError::ZeroAmount);
        }
        self.soul(soul)?;
        let new_supply = self.minted.checked_add(amount).ok_or(CommonsError::Overflow)?;
        self.credit(Account::Soul(soul), amount)?;
        self.minted = new_supply;
        self.record(Command::Mint { soul, amount });
        self.balance(soul)
    }

    /// Destroys free tokens (flash-loan repayment and similar).
    pub fn burn(&mut self, soul: SoulId, amount: Amount) -> Result<Amount> {
        if amount == 0 {
            return Err(CommonsError::ZeroAmount);
        }
        self.debit(Account::Soul(soul), amount)?;
        self.burned += amount;
        self.record(Command::Burn { soul, amount });
        self.balance(soul)
    }

    pub fn transfer(&mut self, from: SoulId, to: SoulId, amount: Amount) -> Result<()> {
        self.move_funds(Account::Soul(from), Account::Soul(to), amount)?;
        self.record(Command::Transfer { from, to, amount });
        Ok(())
    }

    /// Moves tokens between any two accounts. Not logged on its own; used by
    /// logged commands.
    pub(crate) fn move_funds(&mut self, from: Account, to: Account, amount: Amount) -> Result<()> {
        if amount == 0 {
            return Err(CommonsError::ZeroAmount);
        }
        if from == to {
            return Err(CommonsError::SelfTransfer);
        }
        self.check_account(to)?;
        self.debit(from, amount)?;
        self.credit(to, amount)
    }

    /// Funds an ARC treasury (or the commons treasury) with freshly minted
    /// tokens. Scenario setup only.
    pub fn mint_treasury(&mut self, account: Account, amount: Amount) -> Result<Amount> {
        if amount == 0 {
            return Err(CommonsError::ZeroAmount);
        }
        if let Account::Soul(_) = account {
            return Err(CommonsError::NotAuthorized("use mint for souls".into()));
        }
        self.check_account(account)?;
        let new_supply = self.minted.checked_add(amount).ok_or(CommonsError::Overflow)?;
        self.credit(account, amount)?;
        self.minted = new_supply;
        self.record(Command::MintTreasury { account, amount });
        self.account_balance(account)
    }

    pub fn account_balance(&self, account: Account) -> Result<Amount> {
        match account {
            Account::Soul(id) => self.balance(id),
            Account::Arc(id) => Ok(self.arc(id)?.treasury),
            Account::Commons => Ok(self.commons_treasury),
        }
    }

    pub(crate) fn check_account(&self, account: Account) -> Result<()> {
        self.account_balance(account).map(|_| ())
    }

    pub(crate) fn credit(&mut self, account: Account, amount: Amount) -> Result<()> {
        let now = self.clock;
        match account {
            Account::Soul(id) => {
                let soul = self.souls.get_mut(&id).ok_or(CommonsError::UnknownSoul(id))?;
                let b = soul.balance.checked_add(amount).ok_or(CommonsError::Overflow)?;
                soul.set_balance(now, b);
            }
            Account::Arc(id) => {
                let arc = self.arcs.get_mut(&id).ok_or(CommonsError::UnknownArc(id))?;
                arc.treasury = arc.treasury.checked_add(amount).ok_or(CommonsError::Overflow)?;
            }
            Account::Commons => {
                self.commons_treasury = self
                    .commons_treasury
                    .checked_add(amount)
                    .ok_or(CommonsError::Overflow)?;
            }
        }
        Ok(())
    }

    /// Debits free funds. Fails without touching state.
    pub(crate) fn debit(&mut self, account: Account, amount: Amount) -> Result<()> {
        let now = self.clock;
        let short = |available| CommonsError::InsufficientFree {
            account,
            needed: amount,
            available,
        };
        match account {
            Account::Soul(id) => {
                let soul = self.souls.get_mut(&id).ok_or(CommonsError::UnknownSoul(id))?;
                if soul.free() < amount {
                    return Err(short(soul.free()));
                }
                let b = soul.balance - amount;
                soul.set_balance(now, b);
            }
            Account::Arc(id) => {
                let arc = self.arcs.get_mut(&id).ok_or(CommonsError::UnknownArc(id))?;
                if arc.treasury < amount {
                    return Err(short(arc.treasury));
                }
                arc.treasury -= amount;
            }
            Account::Commons => {
                if self.commons_treasury < amount {
                    return Err(short(self.commons_treasury));
                }
                self.commons_treasury -= amount;
            }
        }
        Ok(())
    }

    pub fn create_vesting(
        &mut self,
        owner: SoulId,
        total: Amount,
        cliff_epochs: Epoch,
        duration_epochs: Epoch,
    ) -> Result<ScheduleId> {
        validate_schedule(total, cliff_epochs, duration_epochs)?;
        let soul = self.soul(owner)?;
        if soul.free() < total {
            return Err(CommonsError::InsufficientFree {
                account: Account::Soul(owner),
                needed: total,
                available: soul.free(),
            });
        }
        let id = ScheduleId(self.ids.next_schedule());
        self.souls.get_mut(&owner).expect("checked").locked += total;
        self.schedules.insert(
            id,
            VestingSchedule {
                id,
                owner,
                total,
                cliff_epochs,
                duration_epochs,
                start_epoch: self.clock,
                claimed: 0,
            },
        );
        self.record(Command::CreateVesting {
            owner,
            total,
            cliff_epochs,
            duration_epochs,
        });
        Ok(id)
    }

    pub fn schedule(&self, id: ScheduleId) -> Result<&VestingSchedule> {
        self.schedules.get(&id).ok_or(CommonsError::UnknownSchedule(id))
    }

    pub fn claimable(&self, id: ScheduleId, at_epoch: Epoch) -> Result<Amount> {
        Ok(self.schedule(id)?.claimable_at(at_epoch))
    }

    /// Unlocks everything currently claimable. Returns the amount released.
    pub fn claim_vested(&mut self, id: ScheduleId) -> Result<Amount> {
        let amount = self.claimable(id, self.clock)?;
        let sched = self.schedules.get_mut(&id).expect("checked");
        sched.claimed += amount;
        let owner = sched.owner;
        self.souls.get_mut(&owner).expect("owner exists").locked -= amount;
        self.record(Command::ClaimVested { schedule: id });
        Ok(amount)
    }

    pub fn advance_epoch(&mut self, n: Epoch) -> Result<Epoch> {
        if n == 0 {
            return Err(CommonsError::ZeroAdvance);
        }
        self.clock = self.clock.checked_add(n).ok_or(CommonsError::Overflow)?;
        self.record(Command::AdvanceEpoch { n });
        Ok(self.clock)
    }

    /// Sum of every token held anywhere: souls, treasuries, escrows, program
    /// budgets and curve reserves.
    pub fn total_supply(&self) -> u128 {
        let souls: u128 = self.souls.values().map(|s| u128::from(s.balance)).sum();
        let arcs: u128 = self.arcs.values().map(|a| u128::from(a.treasury)).sum();
        let rounds: u128 = self.rounds.values().map(|r| u128::from(r.held())).sum();
        let programs: u128 = self.programs.values().map(|p| u128::from(p.remaining())).sum();
        let pools: u128 = self.pools.values().map(|p| u128::from(p.reserve)).sum();
        souls + arcs + rounds + programs + pools + u128::from(self.commons_treasury)
    }
}
