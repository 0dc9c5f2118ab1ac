//! Candidate measurements, their costs and error covariance, and the item
//! indexing shared by every downstream module.
//!
//! A static-cost measurement (SCM) is one binary decision that buys its whole
//! time series. A dynamic-cost measurement (DCM) is decided per time point and
//! carries an installation cost paid once if any of its samples is taken.
//! Groups bundle several records of the same kind into one decision: a grouped
//! DCM sample measures all member channels at once.

use crate::error::{Error, Result};
use crate::sensmodel::SensitivityMatrix;
use crate::symmat::{Cholesky, SymMatrix};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};

/// Money is held in integer cents.
pub type Cents = i64;

pub fn dollars_to_cents(v: f64) -> Result<Cents> {
    if !v.is_finite() || v < 0.0 {
        return Err(Error::invalid(format!("cost {v} must be finite and non-negative")));
    }
    let c = (v * 100.0).round();
    if (v * 100.0 - c).abs() > 1e-6 || c > 1e15 {
        return Err(Error::invalid(format!("cost {v} is not a whole number of cents")));
    }
    Ok(c as Cents)
}

pub fn cents_to_dollars(c: Cents) -> f64 {
    c as f64 / 100.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub name: String,
    pub channel: String,
    pub install: f64,
    pub per_sample: f64,
    pub times: Vec<f64>,
}

fn unit_scale() -> f64 {
    1.0
}

/// Channel-level covariance, repeated independently at every time point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorCovariance {
    pub channels: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
    #[serde(default = "unit_scale")]
    pub scm_dcm_scale: f64,
}

impl ErrorCovariance {
    pub fn channel_matrix(&self) -> Result<SymMatrix> {
        let n = self.channels.len();
        if self.matrix.len() != n || self.matrix.iter().any(|r| r.len() != n) {
            return Err(Error::shape(format!(
                "covariance matrix must be {n}x{n} to match its channel list"
            )));
        }
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (self.matrix[i][j], self.matrix[j][i]);
                if a != b {
                    return Err(Error::invalid(format!(
                        "covariance matrix is not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
            }
        }
        if self.matrix.iter().flatten().any(|v| !v.is_finite()) || !self.scm_dcm_scale.is_finite() {
            return Err(Error::invalid("covariance entries must be finite"));
        }
        SymMatrix::from_rows(&self.matrix)
    }

    fn channel_position(&self) -> HashMap<&str, usize> {
        self.channels.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementCatalog {
    #[serde(default)]
    pub scm: Vec<MeasurementRecord>,
    #[serde(default)]
    pub dcm: Vec<MeasurementRecord>,
    #[serde(default)]
    pub groups: Vec<Vec<String>>,
    pub covariance: ErrorCovariance,
}

impl MeasurementCatalog {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    fn records(&self) -> impl Iterator<Item = (bool, &MeasurementRecord)> {
        self.scm.iter().map(|r| (true, r)).chain(self.dcm.iter().map(|r| (false, r)))
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        let cov_channels = self.covariance.channel_position();
        if cov_channels.len() != self.covariance.channels.len() {
            return Err(Error::invalid("covariance channel list has duplicates"));
        }
        self.covariance.channel_matrix()?;
        for (_, r) in self.records() {
            if !names.insert(r.name.as_str()) {
                return Err(Error::DuplicateItem(r.name.clone()));
            }
            dollars_to_cents(r.install)?;
            dollars_to_cents(r.per_sample)?;
            if r.times.is_empty()
                || r.times.iter().any(|t| !t.is_finite())
                || r.times.windows(2).any(|w| w[1] <= w[0])
            {
                return Err(Error::invalid(format!(
                    "`{}`: time grid must be non-empty, finite and strictly increasing",
                    r.name
                )));
            }
            if !cov_channels.contains_key(r.channel.as_str()) {
                return Err(Error::invalid(format!(
                    "`{}`: channel `{}` missing from the covariance channel list",
                    r.name, r.channel
                )));
            }
        }
        let mut grouped = HashSet::new();
        for g in &self.groups {
            if g.is_empty() {
                return Err(Error::invalid("empty measurement group"));
            }
            let mut kind = None;
            let mut first: Option<&MeasurementRecord> = None;
            for name in g {
                let (is_scm, rec) = self
                    .records()
                    .find(|(_, r)| &r.name == name)
                    .ok_or_else(|| Error::invalid(format!("group member `{name}` is not in the catalog")))?;
                if !grouped.insert(name.as_str()) {
                    return Err(Error::invalid(format!("`{name}` belongs to more than one group")));
                }
                if kind.is_some_and(|k| k != is_scm) {
                    return Err(Error::invalid("a group must not mix SCMs and DCMs"));
                }
                kind = Some(is_scm);
                if let Some(f) = first {
                    if f.times != rec.times {
                        return Err(Error::invalid(format!(
                            "group members `{}` and `{name}` have different time grids",
                            f.name
                        )));
                    }
                    if f.install != rec.install || f.per_sample != rec.per_sample {
                        return Err(Error::invalid(format!(
                            "group members `{}` and `{name}` have different costs",
                            f.name
                        )));
                    }
                } else {
                    first = Some(rec);
                }
            }
        }
        Ok(())
    }

    /// Checks that every referenced channel and time exists in `q`.
    pub fn validate_against(&self, q: &SensitivityMatrix) -> Result<()> {
        for (_, r) in self.records() {
            if q.channel_index(&r.channel).is_none() {
                return Err(Error::invalid(format!(
                    "`{}`: channel `{}` is not in the sensitivity manifest",
                    r.name, r.channel
                )));
            }
            if let Some(t) = r.times.iter().find(|&&t| q.time_index(t).is_none()) {
                return Err(Error::invalid(format!(
                    "`{}`: time {t} is not in the sensitivity manifest",
                    r.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ItemKind {
    /// Index into [`ItemIndex::scm_units`].
    Scm { unit: usize },
    /// Index into [`ItemIndex::dcm_units`] and into that unit's time grid.
    Dcm { unit: usize, time: usize },
}

/// One selectable binary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub name: String,
    pub kind: ItemKind,
    /// Stacked measurement rows covered by this item.
    pub rows: Vec<usize>,
}

/// A decision unit: a single catalog record or a group of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub name: String,
    /// Indices into the catalog's `scm` or `dcm` list.
    pub members: Vec<usize>,
    pub times: Vec<f64>,
    pub install: Cents,
    pub per_sample: Cents,
    /// Item indices owned by this unit (one for an SCM, one per time for a DCM).
    pub items: Vec<usize>,
}

/// One stacked measurement entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackedRow {
    pub record: String,
    pub channel: String,
    pub time: f64,
    pub is_scm: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemIndex {
    pub items: Vec<Item>,
    pub scm_units: Vec<Unit>,
    pub dcm_units: Vec<Unit>,
    pub rows: Vec<StackedRow>,
}

impl ItemIndex {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn n_scm(&self) -> usize {
        self.scm_units.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.items.iter().position(|it| it.name == name)
    }

    /// Time of a DCM item.
    pub fn item_time(&self, item: usize) -> Option<f64> {
        match self.items[item].kind {
            ItemKind::Dcm { unit, time } => Some(self.dcm_units[unit].times[time]),
            ItemKind::Scm { .. } => None,
        }
    }
}

/// Formats a time for item names: `7.5`, `60`.
pub fn format_time(t: f64) -> String {
    format!("{t}")
}

fn build_units(records: &[MeasurementRecord], groups: &[Vec<String>]) -> Result<Vec<Unit>> {
    let pos: HashMap<&str, usize> = records.iter().enumerate().map(|(i, r)| (r.name.as_str(), i)).collect();
    let mut group_of: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut seen = HashSet::new();
    for g in groups {
        let members: Vec<usize> = g.iter().filter_map(|n| pos.get(n.as_str()).copied()).collect();
        if members.is_empty() {
            continue;
        }
        let lead = *members.iter().min().unwrap();
        seen.extend(members.iter().copied());
        group_of.insert(lead, members);
    }
    let mut units = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let members = match group_of.get(&i) {
            Some(m) => {
                let mut m = m.clone();
                m.sort_unstable();
                m
            }
            None if seen.contains(&i) => continue,
            None => vec![i],
        };
        let name = members.iter().map(|&m| records[m].name.as_str()).collect::<Vec<_>>().join("+");
        units.push(Unit {
            name,
            members,
            times: r.times.clone(),
            install: dollars_to_cents(r.install)?,
            per_sample: dollars_to_cents(r.per_sample)?,
            items: Vec::new(),
        });
    }
    Ok(units)
}

/// Deterministic item indexing: SCM units in catalog order, then DCM units in
/// catalog order with their time points in increasing order.
pub fn build_item_index(cat: &MeasurementCatalog) -> Result<ItemIndex> {
    cat.validate()?;
    let mut scm_units = build_units(&cat.scm, &cat.groups)?;
    let mut dcm_units = build_units(&cat.dcm, &cat.groups)?;
    let mut items = Vec::new();
    let mut rows = Vec::new();
    let push_row = |rec: &MeasurementRecord, time: f64, is_scm: bool, rows: &mut Vec<StackedRow>| {
        rows.push(StackedRow {
            record: rec.name.clone(),
            channel: rec.channel.clone(),
            time,
            is_scm,
        });
        rows.len() - 1
    };
    for (u, unit) in scm_units.iter_mut().enumerate() {
        let mut covered = Vec::new();
        for &t in &unit.times {
            for &m in &unit.members {
                covered.push(push_row(&cat.scm[m], t, true, &mut rows));
            }
        }
        unit.items.push(items.len());
        items.push(Item {
            name: unit.name.clone(),
            kind: ItemKind::Scm { unit: u },
            rows: covered,
        });
    }
    for (u, unit) in dcm_units.iter_mut().enumerate() {
        for (ti, &t) in unit.times.iter().enumerate() {
            let covered = unit
                .members
                .iter()
                .map(|&m| push_row(&cat.dcm[m], t, false, &mut rows))
                .collect();
            unit.items.push(items.len());
            items.push(Item {
                name: format!("{}@{}", unit.name, format_time(t)),
                kind: ItemKind::Dcm { unit: u, time: ti },
                rows: covered,
            });
        }
    }
    Ok(ItemIndex {
        items,
        scm_units,
        dcm_units,
        rows,
    })
}

/// Item costs and per-DCM-unit installation costs, in cents.
///
/// An SCM item pays installation plus one sample per grid point; a DCM item
/// pays one sample, its installation is charged through the unit's install
/// binary.
pub fn item_cost_vector(idx: &ItemIndex) -> (Vec<Cents>, Vec<Cents>) {
    let mut cost = vec![0; idx.len()];
    for u in &idx.scm_units {
        cost[u.items[0]] = u.install + u.per_sample * u.times.len() as Cents;
    }
    for u in &idx.dcm_units {
        for &it in &u.items {
            cost[it] = u.per_sample;
        }
    }
    (cost, idx.dcm_units.iter().map(|u| u.install).collect())
}

/// Diagonal block of the stacked covariance at one time point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovBlock {
    pub time: f64,
    /// Stacked rows in ascending order.
    pub rows: Vec<usize>,
    pub matrix: SymMatrix,
}

/// Stacked covariance, block-diagonal by time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockCovariance {
    pub n_rows: usize,
    pub blocks: Vec<CovBlock>,
}

impl BlockCovariance {
    pub fn to_full(&self) -> SymMatrix {
        let mut m = SymMatrix::zeros(self.n_rows);
        for b in &self.blocks {
            for (i, &ri) in b.rows.iter().enumerate() {
                for (j, &rj) in b.rows.iter().enumerate().take(i + 1) {
                    m.set(ri, rj, b.matrix.get(i, j));
                }
            }
        }
        m
    }

    /// `(block, position within block)` of every stacked row.
    pub fn locate(&self) -> Vec<(usize, usize)> {
        let mut loc = vec![(usize::MAX, 0); self.n_rows];
        for (b, blk) in self.blocks.iter().enumerate() {
            for (k, &r) in blk.rows.iter().enumerate() {
                loc[r] = (b, k);
            }
        }
        loc
    }
}

/// Builds the stacked error covariance. Rows at the same time are correlated
/// through the channel covariance, with SCM-DCM entries multiplied by
/// `scm_dcm_scale`; rows at different times are independent.
pub fn assemble_covariance(cat: &MeasurementCatalog, idx: &ItemIndex) -> Result<BlockCovariance> {
    let chan = cat.covariance.channel_matrix()?;
    let pos = cat.covariance.channel_position();
    let mut by_time: BTreeMap<u64, (f64, Vec<usize>)> = BTreeMap::new();
    for (r, row) in idx.rows.iter().enumerate() {
        // Ordered key for finite times.
        let key = ordered_key(row.time);
        by_time.entry(key).or_insert((row.time, Vec::new())).1.push(r);
    }
    let mut blocks = Vec::with_capacity(by_time.len());
    for (_, (time, rows)) in by_time {
        let ch: Vec<usize> = rows
            .iter()
            .map(|&r| {
                pos.get(idx.rows[r].channel.as_str())
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("channel `{}` has no covariance", idx.rows[r].channel)))
            })
            .collect::<Result<_>>()?;
        let matrix = SymMatrix::from_fn(rows.len(), |i, j| {
            let v = chan.get(ch[i], ch[j]);
            if idx.rows[rows[i]].is_scm != idx.rows[rows[j]].is_scm {
                v * cat.covariance.scm_dcm_scale
            } else {
                v
            }
        });
        Cholesky::factor(&matrix).map_err(|e| match e {
            Error::NotPositiveDefinite { pivot, .. } => Error::NotPositiveDefinite {
                pivot,
                context: format!(" in the covariance block at time {time}"),
            },
            other => other,
        })?;
        blocks.push(CovBlock { time, rows, matrix });
    }
    Ok(BlockCovariance {
        n_rows: idx.n_rows(),
        blocks,
    })
}

fn ordered_key(t: f64) -> u64 {
    let bits = t.to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | (1 << 63)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases::kinetics_catalog;

    fn record(name: &str, channel: &str, install: f64, per_sample: f64, times: &[f64]) -> MeasurementRecord {
        MeasurementRecord {
            name: name.into(),
            channel: channel.into(),
            install,
            per_sample,
            times: times.to_vec(),
        }
    }

    fn unit_cov(channels: &[&str]) -> ErrorCovariance {
        let n = channels.len();
        ErrorCovariance {
            channels: channels.iter().map(|s| s.to_string()).collect(),
            matrix: (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect(),
            scm_dcm_scale: 1.0,
        }
    }

    #[test]
    fn kinetics_has_thirty_items() {
        let idx = build_item_index(&kinetics_catalog(&[])).unwrap();
        assert_eq!(idx.len(), 30);
        assert_eq!(idx.n_scm(), 3);
        assert_eq!(idx.n_rows(), 54);
    }

    #[test]
    fn empty_catalog() {
        let cat = MeasurementCatalog {
            scm: vec![],
            dcm: vec![],
            groups: vec![],
            covariance: unit_cov(&[]),
        };
        assert_eq!(build_item_index(&cat).unwrap().len(), 0);
    }

    #[test]
    fn scm_then_dcm_time_major() {
        let cat = MeasurementCatalog {
            scm: vec![record("s", "y", 10.0, 0.0, &[1.0, 2.0, 3.0, 4.0])],
            dcm: vec![record("d", "y", 1.0, 2.0, &[1.0, 2.0, 3.0, 4.0])],
            groups: vec![],
            covariance: unit_cov(&["y"]),
        };
        let idx = build_item_index(&cat).unwrap();
        let names: Vec<_> = idx.items.iter().map(|i| i.name.as_str()).collect();
        assert_eq!(names, ["s", "d@1", "d@2", "d@3", "d@4"]);
    }

    #[test]
    fn duplicate_names_rejected() {
        let cat = MeasurementCatalog {
            scm: vec![record("a", "y", 0.0, 0.0, &[1.0])],
            dcm: vec![record("a", "y", 0.0, 0.0, &[1.0])],
            groups: vec![],
            covariance: unit_cov(&["y"]),
        };
        assert!(matches!(build_item_index(&cat), Err(Error::DuplicateItem(n)) if n == "a"));
    }

    #[test]
    fn kinetics_costs() {
        let idx = build_item_index(&kinetics_catalog(&[])).unwrap();
        let (cost, install) = item_cost_vector(&idx);
        assert_eq!(&cost[..3], &[200_000; 3]);
        assert!(cost[3..].iter().all(|&c| c == 40_000));
        assert_eq!(install, vec![20_000; 3]);

        let mut cat = kinetics_catalog(&[]);
        for r in &mut cat.scm {
            r.per_sample = 2.5;
        }
        let (cost, _) = item_cost_vector(&build_item_index(&cat).unwrap());
        assert_eq!(cost[0], 202_250);
    }

    #[test]
    fn zero_costs() {
        let mut cat = kinetics_catalog(&[]);
        for r in cat.scm.iter_mut().chain(cat.dcm.iter_mut()) {
            r.install = 0.0;
            r.per_sample = 0.0;
        }
        let (cost, install) = item_cost_vector(&build_item_index(&cat).unwrap());
        assert!(cost.iter().chain(&install).all(|&c| c == 0));
    }

    #[test]
    fn kinetics_covariance_entries() {
        let cat = kinetics_catalog(&[]);
        let idx = build_item_index(&cat).unwrap();
        let full = assemble_covariance(&cat, &idx).unwrap().to_full();
        let row = |rec: &str, t: f64| {
            idx.rows.iter().position(|r| r.record == rec && r.time == t).unwrap()
        };
        let t = 15.0;
        assert_eq!(full.get(row("CA_SCM", t), row("CA_SCM", t)), 1.0);
        assert_eq!(full.get(row("CB_SCM", t), row("CB_SCM", t)), 4.0);
        assert_eq!(full.get(row("CC_DCM", t), row("CC_DCM", t)), 8.0);
        assert_eq!(full.get(row("CA_SCM", t), row("CB_SCM", t)), 0.1);
        assert_eq!(full.get(row("CA_DCM", t), row("CC_DCM", t)), 0.1);
        assert_eq!(full.get(row("CB_SCM", t), row("CC_SCM", t)), 0.5);
        assert_eq!(full.get(row("CB_SCM", t), row("CB_DCM", t)), 2.0);
        assert_eq!(full.get(row("CB_SCM", t), row("CB_SCM", 22.5)), 0.0);
    }

    #[test]
    fn single_channel_unit_variance_is_identity() {
        let cat = MeasurementCatalog {
            scm: vec![record("s", "y", 0.0, 0.0, &[0.0, 1.0, 2.0])],
            dcm: vec![],
            groups: vec![],
            covariance: unit_cov(&["y"]),
        };
        let idx = build_item_index(&cat).unwrap();
        assert_eq!(assemble_covariance(&cat, &idx).unwrap().to_full(), SymMatrix::identity(3));
    }

    #[test]
    fn channel_declaration_order_is_irrelevant() {
        let cat = kinetics_catalog(&[]);
        let idx = build_item_index(&cat).unwrap();
        let base = assemble_covariance(&cat, &idx).unwrap().to_full();
        let perm = [2usize, 0, 1];
        let mut permuted = cat.clone();
        permuted.covariance.channels = perm.iter().map(|&p| cat.covariance.channels[p].clone()).collect();
        permuted.covariance.matrix = perm
            .iter()
            .map(|&i| perm.iter().map(|&j| cat.covariance.matrix[i][j]).collect())
            .collect();
        let other = assemble_covariance(&permuted, &build_item_index(&permuted).unwrap()).unwrap();
        assert_eq!(base, other.to_full());
    }

    #[test]
    fn non_spd_block_names_time() {
        let mut cat = kinetics_catalog(&[]);
        cat.covariance.scm_dcm_scale = 1.0;
        let idx = build_item_index(&cat).unwrap();
        match assemble_covariance(&cat, &idx) {
            Err(Error::NotPositiveDefinite { context, .. }) => assert!(context.contains("time 0")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn grouped_dcm_is_one_item_per_time() {
        let groups = vec![vec!["CA_DCM".to_string(), "CB_DCM".into(), "CC_DCM".into()]];
        let idx = build_item_index(&kinetics_catalog(&groups)).unwrap();
        assert_eq!(idx.len(), 3 + 9);
        assert_eq!(idx.items[3].rows.len(), 3);
        assert_eq!(idx.items[3].name, "CA_DCM+CB_DCM+CC_DCM@0");
    }

    #[test]
    fn group_members_must_share_grid() {
        let mut cat = kinetics_catalog(&[vec!["CA_DCM".into(), "CB_DCM".into()]]);
        cat.dcm[1].times.pop();
        assert!(cat.validate().is_err());
    }
}
