//! IP-NFTs: license clauses, royalty distribution, and fractional IPTs on a
//! linear bonding curve with a time-decaying sell penalty.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::alloc;
use crate::error::{CommonsError, Result};
use crate::ids::{Account, Amount, ArcId, AssetId, Bps, Epoch, PoolId, SoulId};
use crate::state::{Command, Commons};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoyaltyShare {
    pub recipient: Account,
    pub bps: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommercialLicense {
    pub licensee: SoulId,
    pub price: Amount,
    pub exclusive: bool,
    pub granted_epoch: Epoch,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct IpAsset {
    pub id: AssetId,
    pub owner: Account,
    pub content_commitment: String,
    pub open_access: bool,
    /// Universal non-commercial license. Once set it stays set.
    pub noncommercial_license: bool,
    pub royalty_split: Vec<RoyaltyShare>,
    pub commercial_licenses: Vec<CommercialLicense>,
    pub pool: Option<PoolId>,
}

impl IpAsset {
    pub fn has_exclusive(&self) -> bool {
        self.commercial_licenses.iter().any(|l| l.exclusive)
    }
}

/// Linear price `p(s) = base_price + slope · s` per IPT.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BondingCurve {
    pub base_price: Amount,
    pub slope: Amount,
}

impl BondingCurve {
    pub fn spot_price(&self, supply: u64) -> u128 {
        u128::from(self.base_price) + u128::from(self.slope) * u128::from(supply)
    }

    /// Twice the area under the curve on `[from, to]`, which is always an
    /// integer.
    pub fn double_integral(&self, from: u64, to: u64) -> u128 {
        debug_assert!(from <= to);
        let (a, b) = (u128::from(from), u128::from(to));
        2 * u128::from(self.base_price) * (b - a) + u128::from(self.slope) * (b * b - a * a)
    }

    /// Cost of buying `units` at `supply`, rounded up.
    pub fn buy_cost(&self, supply: u64, units: u64) -> u128 {
        self.double_integral(supply, supply + units).div_ceil(2)
    }

    /// Gross proceeds of selling `units` down from `supply`, rounded down.
    pub fn sell_gross(&self, supply: u64, units: u64) -> u128 {
        self.double_integral(supply - units, supply) / 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SellPenalty {
    /// Penalty fraction for a sale at holding age zero.
    pub max_fraction: Bps,
    /// Holding age at which the penalty reaches zero.
    pub horizon_epochs: Epoch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Lot {
    pub units: u64,
    pub acquired: Epoch,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct IptPool {
    pub id: PoolId,
    pub asset: AssetId,
    pub supply_cap: u64,
    pub supply: u64,
    pub reserve: Amount,
    pub curve: BondingCurve,
    pub penalty: SellPenalty,
    /// Receives sell penalties.
    pub beneficiary: ArcId,
    /// FIFO lots per holder.
    pub holdings: BTreeMap<SoulId, Vec<Lot>>,
    pub trades: u64,
}

impl IptPool {
    pub fn units_of(&self, soul: SoulId) -> u64 {
        self.holdings.get(&soul).map_or(0, |l| l.iter().map(|x| x.units).sum())
    }

    /// `|reserve − ∫₀^supply p|`, doubled to stay integral.
    pub fn reserve_drift_x2(&self) -> u128 {
        let exact = self.curve.double_integral(0, self.supply);
        (2 * u128::from(self.reserve)).abs_diff(exact)
    }
}

/// Penalty on `gross` for selling the FIFO-ordered `lots` (units, age):
/// `ceil(gross · φ · Σ uᵢ·max(0, H − hᵢ) / (U·H))`.
pub fn sell_penalty(gross: Amount, penalty: SellPenalty, lots: &[(u64, Epoch)]) -> Amount {
    let h = u128::from(penalty.horizon_epochs);
    let units: u128 = lots.iter().map(|(u, _)| u128::from(*u)).sum();
    if h == 0 || units == 0 || penalty.max_fraction == Bps::ZERO {
        return 0;
    }
    let decay: u128 = lots
        .iter()
        .map(|(u, age)| u128::from(*u) * h.saturating_sub(u128::from(*age)))
        .sum();
    let num = u128::from(gross) * u128::from(penalty.max_fraction.0) * decay;
    let den = 10_000 * units * h;
    num.div_ceil(den) as Amount
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoyaltyReceipt {
    pub asset: AssetId,
    pub revenue: Amount,
    pub payouts: Vec<(Account, Amount)>,
    pub protocol_fee: Amount,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaleReceipt {
    pub gross: Amount,
    pub penalty: Amount,
    pub net: Amount,
}

/// Splits `revenue` into the protocol fee and per-recipient payouts.
pub fn split_royalties(revenue: Amount, fee_bps: u32, split: &[RoyaltyShare]) -> (Amount, Vec<Amount>) {
    let fee = (u128::from(revenue) * u128::from(fee_bps) / 10_000) as Amount;
    let weights: Vec<u64> = split.iter().map(|s| u64::from(s.bps)).collect();
    (fee, alloc::by_weights(revenue - fee, &weights))
}

impl Commons {
    pub fn asset(&self, id: AssetId) -> Result<&IpAsset> {
        self.assets.get(&id).ok_or(CommonsError::UnknownAsset(id))
    }

    pub fn pool(&self, id: PoolId) -> Result<&IptPool> {
        self.pools.get(&id).ok_or(CommonsError::UnknownPool(id))
    }

    pub fn pools(&self) -> impl Iterator<Item = &IptPool> {
        self.pools.values()
    }

    pub fn receipts(&self) -> &[RoyaltyReceipt] {
        &self.receipts
    }

    pub fn mint_ipnft(
        &mut self,
        owner: Account,
        content_commitment: String,
        open_access: bool,
        royalty_split: Vec<RoyaltyShare>,
    ) -> Result<AssetId> {
        self.check_account(owner)?;
        let total: u64 = royalty_split.iter().map(|s| u64::from(s.bps)).sum();
        if total != 10_000 {
            return Err(CommonsError::BadSplit(total));
        }
        for s in &royalty_split {
            self.check_account(s.recipient)?;
        }
        let id = AssetId(self.ids.next_asset());
        self.assets.insert(
            id,
            IpAsset {
                id,
                owner,
                content_commitment: content_commitment.clone(),
                open_access,
                noncommercial_license: open_access,
                royalty_split: royalty_split.clone(),
                commercial_licenses: Vec::new(),
                pool: None,
            },
        );
        self.record(Command::MintIpNft {
            owner,
            content_commitment,
            open_access,
            royalty_split,
        });
        Ok(id)
    }

    /// Opening an asset is one-way; clearing the flag always fails.
    pub fn set_open_access(&mut self, asset: AssetId, open: bool) -> Result<()> {
        let a = self.asset(asset)?;
        if a.noncommercial_license && !open {
            return Err(CommonsError::OpenAccessPermanent(asset));
        }
        if a.open_access == open {
            return Ok(());
        }
        let a = self.assets.get_mut(&asset).expect("checked");
        a.open_access = true;
        a.noncommercial_license = true;
        self.record(Command::SetOpenAccess { asset, open });
        Ok(())
    }

    fn owner_check(&self, asset: &IpAsset, caller: Account) -> Result<()> {
        if asset.owner == caller {
            Ok(())
        } else {
            Err(CommonsError::NotAuthorized(format!(
                "{caller} does not own {}",
                asset.id
            )))
        }
    }

    fn distribute_inner(&mut self, asset: AssetId, payer: Account, revenue: Amount) -> Result<RoyaltyReceipt> {
        if revenue == 0 {
            return Err(CommonsError::ZeroRevenue);
        }
        let a = self.asset(asset)?;
        let (fee, amounts) = split_royalties(revenue, self.config.protocol_fee_bps, &a.royalty_split);
        let payouts: Vec<(Account, Amount)> = a.royalty_split.iter().map(|s| s.recipient).zip(amounts).collect();
        self.debit(payer, revenue)?;
        self.credit(Account::Commons, fee)?;
        for (to, amt) in &payouts {
            self.credit(*to, *amt)?;
        }
        let receipt = RoyaltyReceipt {
            asset,
            revenue,
            payouts,
            protocol_fee: fee,
        };
        self.receipts.push(receipt.clone());
        Ok(receipt)
    }

    /// Routes licensing revenue paid by `payer` through the royalty split.
    pub fn distribute_royalties(&mut self, asset: AssetId, payer: SoulId, revenue: Amount) -> Result<RoyaltyReceipt> {
        let r = self.distribute_inner(asset, Account::Soul(payer), revenue)?;
        self.record(Command::DistributeRoyalties { asset, payer, revenue });
        Ok(r)
    }

    pub fn grant_commercial_license(
        &mut self,
        asset: AssetId,
        caller: Account,
        licensee: SoulId,
        price: Amount,
        exclusive: bool,
    ) -> Result<RoyaltyReceipt> {
        let a = self.asset(asset)?;
        self.owner_check(a, caller)?;
        if exclusive && a.has_exclusive() {
            return Err(CommonsError::ExclusiveConflict(asset));
        }
        let receipt = self.distribute_inner(asset, Account::Soul(licensee), price)?;
        let now = self.clock;
        self.assets
            .get_mut(&asset)
            .expect("checked")
            .commercial_licenses
            .push(CommercialLicense {
                licensee,
                price,
                exclusive,
                granted_epoch: now,
            });
        self.record(Command::GrantLicense {
            asset,
            caller,
            licensee,
            price,
            exclusive,
        });
        Ok(receipt)
    }

    pub fn fractionalize(
        &mut self,
        asset: AssetId,
        caller: Account,
        supply_cap: u64,
        curve: BondingCurve,
        penalty: SellPenalty,
        beneficiary: ArcId,
    ) -> Result<PoolId> {
        let a = self.asset(asset)?;
        self.owner_check(a, caller)?;
        if a.pool.is_some() {
            return Err(CommonsError::AlreadyFractionalized(asset));
        }
        self.arc(beneficiary)?;
        if penalty.max_fraction > Bps::ONE {
            return Err(CommonsError::BadCurve("penalty fraction above 1".into()));
        }
        if supply_cap == 0 {
            return Err(CommonsError::BadCurve("supply cap must be positive".into()));
        }
        if curve.buy_cost(0, supply_cap) > u128::from(Amount::MAX) {
            return Err(CommonsError::BadCurve("curve overflows at the supply cap".into()));
        }
        let id = PoolId(self.ids.next_pool());
        self.pools.insert(
            id,
            IptPool {
                id,
                asset,
                supply_cap,
                supply: 0,
                reserve: 0,
                curve,
                penalty,
                beneficiary,
                holdings: BTreeMap::new(),
                trades: 0,
            },
        );
        self.assets.get_mut(&asset).expect("checked").pool = Some(id);
        self.record(Command::Fractionalize {
            asset,
            caller,
            supply_cap,
            curve,
            penalty,
            beneficiary,
        });
        Ok(id)
    }

    pub fn curve_buy(&mut self, pool: PoolId, buyer: SoulId, units: u64) -> Result<Amount> {
        if units == 0 {
            return Err(CommonsError::ZeroAmount);
        }
        let p = self.pool(pool)?;
        if p.supply.checked_add(units).is_none_or(|s| s > p.supply_cap) {
            return Err(CommonsError::SupplyCap { cap: p.supply_cap });
        }
        // bounded by the cap check at fractionalization
        let cost = p.curve.buy_cost(p.supply, units) as Amount;
        if cost > 0 {
            self.debit(Account::Soul(buyer), cost)?;
        } else {
            self.soul(buyer)?;
        }
        let now = self.clock;
        let p = self.pools.get_mut(&pool).expect("checked");
        p.reserve += cost;
        p.supply += units;
        p.trades += 1;
        let lots = p.holdings.entry(buyer).or_default();
        match lots.last_mut() {
            Some(l) if l.acquired == now => l.units += units,
            _ => lots.push(Lot { units, acquired: now }),
        }
        self.record(Command::CurveBuy { pool, buyer, units });
        Ok(cost)
    }

    pub fn curve_sell(&mut self, pool: PoolId, seller: SoulId, units: u64) -> Result<SaleReceipt> {
        if units == 0 {
            return Err(CommonsError::ZeroAmount);
        }
        let now = self.clock;
        let p = self.pool(pool)?;
        let have = p.units_of(seller);
        if have < units {
            return Err(CommonsError::InsufficientUnits { have, need: units });
        }
        let gross = p.curve.sell_gross(p.supply, units) as Amount;
        if gross > p.reserve {
            return Err(CommonsError::ReserveUnderflow);
        }
        let mut consumed = Vec::new();
        let mut left = units;
        for lot in &p.holdings[&seller] {
            if left == 0 {
                break;
            }
            let take = lot.units.min(left);
            consumed.push((take, now - lot.acquired));
            left -= take;
        }
        let penalty = sell_penalty(gross, p.penalty, &consumed);
        let net = gross - penalty;
        let beneficiary = Account::Arc(p.beneficiary);

        let p = self.pools.get_mut(&pool).expect("checked");
        p.reserve -= gross;
        p.supply -= units;
        p.trades += 1;
        let lots = p.holdings.get_mut(&seller).expect("checked");
        let mut left = units;
        while left > 0 {
            let front = &mut lots[0];
            let take = front.units.min(left);
            front.units -= take;
            left -= take;
            if front.units == 0 {
                lots.remove(0);
            }
        }
        if lots.is_empty() {
            p.holdings.remove(&seller);
        }
        if net > 0 {
            self.credit(Account::Soul(seller), net)?;
        }
        if penalty > 0 {
            self.credit(beneficiary, penalty)?;
        }
        self.record(Command::CurveSell { pool, seller, units });
        Ok(SaleReceipt { gross, penalty, net })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::governance::GovernanceConfig;
    use crate::state::CommonsConfig;

    struct World {
        c: Commons,
        arc: ArcId,
        researcher: SoulId,
        university: SoulId,
        dao: SoulId,
        buyer: SoulId,
    }

    fn world() -> World {
        let mut c = Commons::new(CommonsConfig::default());
        let researcher = c.create_soul();
        let university = c.create_soul();
        let dao = c.create_soul();
        let buyer = c.create_soul();
        c.mint(buyer, 1_000_000).unwrap();
        let arc = c
            .create_arc(vec![researcher], vec![], GovernanceConfig::default())
            .unwrap();
        World {
            c,
            arc,
            researcher,
            university,
            dao,
            buyer,
        }
    }

    fn split(w: &World) -> Vec<RoyaltyShare> {
        vec![
            RoyaltyShare {
                recipient: Account::Soul(w.researcher),
                bps: 6000,
            },
            RoyaltyShare {
                recipient: Account::Soul(w.university),
                bps: 3000,
            },
            RoyaltyShare {
                recipient: Account::Soul(w.dao),
                bps: 1000,
            },
        ]
    }

    fn mint(w: &mut World, open: bool) -> AssetId {
        let s = split(w);
        w.c.mint_ipnft(Account::Soul(w.researcher), "ab".repeat(32), open, s)
            .unwrap()
    }

    #[test]
    fn curve_integrals() {
        let flat = BondingCurve {
            base_price: 1,
            slope: 0,
        };
        assert_eq!(flat.buy_cost(0, 10), 10);
        assert_eq!(flat.buy_cost(500, 10), 10);
        let lin = BondingCurve {
            base_price: 0,
            slope: 1,
        };
        assert_eq!(lin.buy_cost(0, 2), 2);
        assert_eq!(lin.buy_cost(2, 2), 6);
        assert_eq!(lin.buy_cost(0, 1), 1); // 0.5 rounds up
        assert_eq!(lin.sell_gross(1, 1), 0); // 0.5 rounds down
    }

    #[test]
    fn penalty_decays_linearly() {
        let pen = SellPenalty {
            max_fraction: Bps(2000),
            horizon_epochs: 90,
        };
        assert_eq!(sell_penalty(1000, pen, &[(10, 0)]), 200);
        assert_eq!(sell_penalty(1000, pen, &[(10, 45)]), 100);
        assert_eq!(sell_penalty(1000, pen, &[(10, 90)]), 0);
        assert_eq!(sell_penalty(1000, pen, &[(10, 500)]), 0);
        // half the units fresh, half matured
        assert_eq!(sell_penalty(1000, pen, &[(5, 0), (5, 90)]), 100);
    }

    #[test]
    fn split_must_total_10000() {
        let mut w = world();
        mint(&mut w, false);
        let mut bad = split(&w);
        bad[2].bps = 999;
        assert_eq!(
            w.c.mint_ipnft(Account::Soul(w.researcher), String::new(), false, bad),
            Err(CommonsError::BadSplit(9999))
        );
        assert!(matches!(
            w.c.mint_ipnft(Account::Soul(SoulId(77)), String::new(), false, split(&w)),
            Err(CommonsError::UnknownSoul(_))
        ));
    }

    #[test]
    fn royalty_example_numbers() {
        let mut w = world();
        let a = mint(&mut w, false);
        let r = w.c.distribute_royalties(a, w.buyer, 10_000).unwrap();
        assert_eq!(r.protocol_fee, 50);
        let amounts: Vec<_> = r.payouts.iter().map(|p| p.1).collect();
        assert_eq!(amounts, [5970, 2985, 995]);
        assert_eq!(w.c.commons_treasury(), 50);

        let r = w.c.distribute_royalties(a, w.buyer, 1).unwrap();
        assert_eq!(r.protocol_fee, 0);
        assert_eq!(r.payouts.iter().map(|p| p.1).collect::<Vec<_>>(), [1, 0, 0]);
        assert_eq!(w.c.distribute_royalties(a, w.buyer, 0), Err(CommonsError::ZeroRevenue));
    }

    #[test]
    fn licenses_and_open_access_coexist() {
        let mut w = world();
        let a = mint(&mut w, true);
        let owner = Account::Soul(w.researcher);
        let r = w.c.grant_commercial_license(a, owner, w.buyer, 1000, true).unwrap();
        assert_eq!(r.payouts.iter().map(|p| p.1).sum::<Amount>() + r.protocol_fee, 1000);
        assert_eq!(
            w.c.grant_commercial_license(a, owner, w.buyer, 1000, true),
            Err(CommonsError::ExclusiveConflict(a))
        );
        assert!(matches!(
            w.c.grant_commercial_license(a, Account::Soul(w.buyer), w.buyer, 10, false),
            Err(CommonsError::NotAuthorized(_))
        ));
        let asset = w.c.asset(a).unwrap();
        assert!(asset.noncommercial_license && asset.has_exclusive());
        assert_eq!(w.c.set_open_access(a, false), Err(CommonsError::OpenAccessPermanent(a)));
        assert!(w.c.asset(a).unwrap().open_access);
    }

    #[test]
    fn closed_assets_can_open_but_never_close() {
        let mut w = world();
        let a = mint(&mut w, false);
        w.c.set_open_access(a, false).unwrap();
        w.c.set_open_access(a, true).unwrap();
        assert_eq!(w.c.set_open_access(a, false), Err(CommonsError::OpenAccessPermanent(a)));
    }

    fn pool(w: &mut World, curve: BondingCurve, pen: SellPenalty) -> PoolId {
        let a = mint(w, false);
        w.c.fractionalize(a, Account::Soul(w.researcher), 1_000, curve, pen, w.arc)
            .unwrap()
    }

    #[test]
    fn fractionalize_once() {
        let mut w = world();
        let a = mint(&mut w, false);
        let owner = Account::Soul(w.researcher);
        let curve = BondingCurve {
            base_price: 1,
            slope: 0,
        };
        let pen = SellPenalty {
            max_fraction: Bps(2000),
            horizon_epochs: 90,
        };
        let p = w.c.fractionalize(a, owner, 100, curve, pen, w.arc).unwrap();
        assert_eq!(w.c.pool(p).unwrap().reserve, 0);
        assert_eq!(
            w.c.fractionalize(a, owner, 100, curve, pen, w.arc),
            Err(CommonsError::AlreadyFractionalized(a))
        );
    }

    #[test]
    fn round_trip_loses_the_penalty() {
        let mut w = world();
        let pen = SellPenalty {
            max_fraction: Bps(2000),
            horizon_epochs: 90,
        };
        let p = pool(
            &mut w,
            BondingCurve {
                base_price: 10,
                slope: 2,
            },
            pen,
        );
        let cost = w.c.curve_buy(p, w.buyer, 10).unwrap();
        assert_eq!(cost, 200);
        let sale = w.c.curve_sell(p, w.buyer, 10).unwrap();
        assert_eq!(
            sale,
            SaleReceipt {
                gross: 200,
                penalty: 40,
                net: 160
            }
        );
        assert_eq!(w.c.arc(w.arc).unwrap().treasury, 40);
        assert_eq!(w.c.pool(p).unwrap().reserve, 0);
        assert_eq!(
            w.c.curve_sell(p, w.buyer, 1),
            Err(CommonsError::InsufficientUnits { have: 0, need: 1 })
        );
    }

    #[test]
    fn matured_holdings_sell_without_penalty() {
        let mut w = world();
        let pen = SellPenalty {
            max_fraction: Bps(2000),
            horizon_epochs: 90,
        };
        let p = pool(
            &mut w,
            BondingCurve {
                base_price: 0,
                slope: 1,
            },
            pen,
        );
        w.c.curve_buy(p, w.buyer, 2).unwrap();
        w.c.advance_epoch(90).unwrap();
        let sale = w.c.curve_sell(p, w.buyer, 2).unwrap();
        assert_eq!(sale.penalty, 0);
        assert_eq!(sale.net, 2);
    }

    #[test]
    fn supply_cap_and_zero_units() {
        let mut w = world();
        let pen = SellPenalty {
            max_fraction: Bps(0),
            horizon_epochs: 0,
        };
        let p = pool(
            &mut w,
            BondingCurve {
                base_price: 1,
                slope: 0,
            },
            pen,
        );
        assert_eq!(w.c.curve_buy(p, w.buyer, 0), Err(CommonsError::ZeroAmount));
        assert_eq!(
            w.c.curve_buy(p, w.buyer, 1_001),
            Err(CommonsError::SupplyCap { cap: 1_000 })
        );
        w.c.curve_buy(p, w.buyer, 1_000).unwrap();
    }
}
