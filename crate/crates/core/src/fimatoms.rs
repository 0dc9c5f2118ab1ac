//! Per-item Fisher-information contributions.
//!
//! With stacked sensitivities `Q` and inverse error covariance `W = Σ⁻¹`, the
//! information of a selection is `Σ_a Σ_b x_a x_b Q_aᵀ W_ab Q_b`, where `Q_a`
//! holds the rows covered by item `a` and `W_ab` is the matching block of the
//! full inverse. Diagonal atoms multiply `x_a`; each off-diagonal pair
//! `a < b` contributes `Q_aᵀ W_ab Q_b + Q_bᵀ W_ba Q_a` times the pair variable.

use crate::catalog::{BlockCovariance, CovBlock, ItemIndex, MeasurementCatalog};
use crate::error::{Error, Result};
use crate::sensmodel::SensitivityMatrix;
use crate::symmat::{Cholesky, LowerTriVector, SymMatrix};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FimAtoms {
    pub n_params: usize,
    /// Diagonal atom of every item.
    pub diag: Vec<SymMatrix>,
    /// Retained off-diagonal pairs `(a, b)`, `a < b`, sorted.
    pub pairs: Vec<(usize, usize)>,
    pub off: Vec<SymMatrix>,
    pub prior: SymMatrix,
    /// Off-diagonal pairs dropped because their inverse-covariance block is zero.
    pub pruned: usize,
}

/// An information matrix with its lower-triangle vectorization.
#[derive(Clone, Debug, PartialEq)]
pub struct FimValue {
    pub matrix: SymMatrix,
    pub lower: LowerTriVector,
}

impl FimValue {
    pub fn new(matrix: SymMatrix) -> Self {
        let lower = matrix.lower();
        Self { matrix, lower }
    }
}

impl FimAtoms {
    pub fn n_items(&self) -> usize {
        self.diag.len()
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn pair_index(&self, a: usize, b: usize) -> Option<usize> {
        let key = if a < b { (a, b) } else { (b, a) };
        self.pairs.binary_search(&key).ok()
    }

    /// Atom of variable `v` in the layout `[items..., pairs...]`.
    pub fn atom(&self, v: usize) -> &SymMatrix {
        if v < self.diag.len() {
            &self.diag[v]
        } else {
            &self.off[v - self.diag.len()]
        }
    }

    /// `M0 + Σ diag_a x_a + Σ off_ab x_ab`.
    pub fn eval(&self, x_items: &[f64], x_pairs: &[f64]) -> Result<FimValue> {
        if x_items.len() != self.n_items() || x_pairs.len() != self.n_pairs() {
            return Err(Error::shape(format!(
                "selection has {} items and {} pairs, atoms have {} and {}",
                x_items.len(),
                x_pairs.len(),
                self.n_items(),
                self.n_pairs()
            )));
        }
        if let Some(v) = x_items.iter().chain(x_pairs).find(|v| !(**v >= -1e-9 && **v <= 1.0 + 1e-9)) {
            return Err(Error::Domain(format!("selection value {v} outside [0, 1]")));
        }
        Ok(FimValue::new(self.eval_unchecked(x_items, x_pairs)))
    }

    pub(crate) fn eval_unchecked(&self, x_items: &[f64], x_pairs: &[f64]) -> SymMatrix {
        let mut m = self.prior.clone();
        for (atom, &x) in self.diag.iter().zip(x_items) {
            if x != 0.0 {
                m.axpy(x, atom);
            }
        }
        for (atom, &x) in self.off.iter().zip(x_pairs) {
            if x != 0.0 {
                m.axpy(x, atom);
            }
        }
        m
    }

    /// Information of a binary selection, pair values implied by the items.
    pub fn eval_selection(&self, selected: &[bool]) -> SymMatrix {
        let x: Vec<f64> = selected.iter().map(|&s| f64::from(u8::from(s))).collect();
        let pairs: Vec<f64> = self.pairs.iter().map(|&(a, b)| x[a] * x[b]).collect();
        self.eval_unchecked(&x, &pairs)
    }

    pub fn full_information(&self) -> SymMatrix {
        self.eval_selection(&vec![true; self.n_items()])
    }
}

/// Inverts each time block independently.
pub fn invert_covariance(sigma: &BlockCovariance) -> Result<BlockCovariance> {
    let blocks = sigma
        .blocks
        .iter()
        .map(|b| {
            let inv = Cholesky::factor(&b.matrix)
                .map_err(|e| match e {
                    Error::NotPositiveDefinite { pivot, .. } => Error::NotPositiveDefinite {
                        pivot,
                        context: format!(" in the covariance block at time {}", b.time),
                    },
                    other => other,
                })?
                .inverse();
            Ok(CovBlock {
                time: b.time,
                rows: b.rows.clone(),
                matrix: inv,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BlockCovariance {
        n_rows: sigma.n_rows,
        blocks,
    })
}

/// Sensitivity row of every stacked measurement entry.
pub fn stacked_sensitivities(q: &SensitivityMatrix, idx: &ItemIndex) -> Result<Vec<Vec<f64>>> {
    idx.rows
        .iter()
        .map(|row| {
            let c = q
                .channel_index(&row.channel)
                .ok_or_else(|| Error::shape(format!("channel `{}` not in sensitivities", row.channel)))?;
            let t = q
                .time_index(row.time)
                .ok_or_else(|| Error::shape(format!("time {} not in sensitivities", row.time)))?;
            Ok(q.row(q.row_index(c, t)).to_vec())
        })
        .collect()
}

/// Adds `w * (u vᵀ + v uᵀ)` (or `w * u uᵀ` when `sym_once`) to `m`.
fn add_outer(m: &mut SymMatrix, w: f64, u: &[f64], v: &[f64], sym_once: bool) {
    let p = u.len();
    for i in 0..p {
        for j in 0..=i {
            let val = if sym_once {
                0.5 * (u[i] * v[j] + v[i] * u[j])
            } else {
                u[i] * v[j] + v[i] * u[j]
            };
            if val != 0.0 {
                m.add_at(i, j, w * val);
            }
        }
    }
}

/// Builds diagonal and pair atoms. With `prune`, pairs whose inverse-covariance
/// block is identically zero are dropped; otherwise every pair `a < b` is kept.
pub fn build_atoms(
    q: &SensitivityMatrix,
    sigma_inv: &BlockCovariance,
    idx: &ItemIndex,
    prior: SymMatrix,
    prune: bool,
) -> Result<FimAtoms> {
    let p = q.n_params();
    if prior.dim() != p {
        return Err(Error::shape(format!("prior is {}x{}, expected {p}x{p}", prior.dim(), prior.dim())));
    }
    if sigma_inv.n_rows != idx.n_rows() {
        return Err(Error::shape(format!(
            "inverse covariance has {} rows, the catalog stacks {}",
            sigma_inv.n_rows,
            idx.n_rows()
        )));
    }
    let qs = stacked_sensitivities(q, idx)?;
    let n = idx.len();
    let mut item_of = vec![usize::MAX; idx.n_rows()];
    for (a, it) in idx.items.iter().enumerate() {
        for &r in &it.rows {
            item_of[r] = a;
        }
    }
    let mut diag = vec![SymMatrix::zeros(p); n];
    let mut off: BTreeMap<(usize, usize), SymMatrix> = BTreeMap::new();
    for blk in &sigma_inv.blocks {
        for (i, &ri) in blk.rows.iter().enumerate() {
            for (j, &rj) in blk.rows.iter().enumerate().take(i + 1) {
                let w = blk.matrix.get(i, j);
                let (a, b) = (item_of[ri], item_of[rj]);
                if a == b {
                    // Within one item: W_ij q_i q_jᵀ + W_ji q_j q_iᵀ (once if i == j).
                    if i == j {
                        add_outer(&mut diag[a], w, &qs[ri], &qs[ri], true);
                    } else if w != 0.0 {
                        add_outer(&mut diag[a], w, &qs[ri], &qs[rj], false);
                    }
                } else if w != 0.0 || !prune {
                    let key = if a < b { (a, b) } else { (b, a) };
                    let atom = off.entry(key).or_insert_with(|| SymMatrix::zeros(p));
                    add_outer(atom, w, &qs[ri], &qs[rj], false);
                }
            }
        }
    }
    if !prune {
        for a in 0..n {
            for b in (a + 1)..n {
                off.entry((a, b)).or_insert_with(|| SymMatrix::zeros(p));
            }
        }
    }
    let total_pairs = n * n.saturating_sub(1) / 2;
    let (pairs, off): (Vec<_>, Vec<_>) = off.into_iter().unzip();
    Ok(FimAtoms {
        n_params: p,
        pruned: total_pairs - pairs.len(),
        diag,
        pairs,
        off,
        prior,
    })
}

/// Content hash of everything that determines the atoms.
pub fn atoms_content_hash(
    q: &SensitivityMatrix,
    cat: &MeasurementCatalog,
    prior: &SymMatrix,
    prune: bool,
) -> Result<String> {
    let mut h = Sha256::new();
    h.update(b"fisheropt-atoms-v1\0");
    h.update(serde_json::to_vec(q)?);
    h.update(serde_json::to_vec(cat)?);
    h.update(serde_json::to_vec(prior)?);
    h.update([u8::from(prune)]);
    Ok(hex::encode(h.finalize()))
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    hash: String,
    atoms: FimAtoms,
}

/// Loads cached atoms if the file exists and carries the expected hash.
pub fn load_cached_atoms(path: &Path, hash: &str) -> Result<Option<FimAtoms>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path)?;
    match serde_json::from_str::<CacheFile>(&text) {
        Ok(c) if c.hash == hash => Ok(Some(c.atoms)),
        _ => Ok(None),
    }
}

pub fn store_cached_atoms(path: &Path, hash: &str, atoms: &FimAtoms) -> Result<()> {
    let file = CacheFile {
        hash: hash.to_string(),
        atoms: atoms.clone(),
    };
    std::fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases::{kinetics_catalog, kinetics_model_config};
    use crate::catalog::{assemble_covariance, build_item_index, ErrorCovariance, MeasurementRecord};
    use crate::sensmodel::kinetics_sensitivities;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Fixture {
        q: SensitivityMatrix,
        cat: MeasurementCatalog,
        idx: ItemIndex,
        sigma: BlockCovariance,
    }

    fn kinetics() -> Fixture {
        let q = kinetics_sensitivities(&kinetics_model_config()).unwrap();
        let cat = kinetics_catalog(&[]);
        let idx = build_item_index(&cat).unwrap();
        let sigma = assemble_covariance(&cat, &idx).unwrap();
        Fixture { q, cat, idx, sigma }
    }

    /// Dense `Qᵀ W Q` over a subset of stacked rows, `W` from the full inverse.
    fn dense_fim(qs: &[Vec<f64>], w_full: &SymMatrix, rows: &[usize], p: usize) -> SymMatrix {
        SymMatrix::from_fn(p, |i, j| {
            let mut s = 0.0;
            for &r in rows {
                for &c in rows {
                    s += qs[r][i] * w_full.get(r, c) * qs[c][j];
                }
            }
            s
        })
    }

    fn rel_diff(a: &SymMatrix, b: &SymMatrix) -> f64 {
        let mut d = a.clone();
        d.axpy(-1.0, b);
        d.frobenius_norm() / b.frobenius_norm().max(1e-300)
    }

    #[test]
    fn block_inverse_matches_dense_residual() {
        let f = kinetics();
        let inv = invert_covariance(&f.sigma).unwrap();
        for (b, bi) in f.sigma.blocks.iter().zip(&inv.blocks) {
            let n = b.matrix.dim();
            let prod = crate::symmat::matmul(&b.matrix.to_dense(), &bi.matrix.to_dense(), n, n, n);
            for i in 0..n {
                for j in 0..n {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((prod[i * n + j] - e).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn trivial_inverses() {
        let one = BlockCovariance {
            n_rows: 2,
            blocks: vec![CovBlock {
                time: 0.0,
                rows: vec![0, 1],
                matrix: SymMatrix::identity(2),
            }],
        };
        assert_eq!(invert_covariance(&one).unwrap(), one);
        let four = BlockCovariance {
            n_rows: 1,
            blocks: vec![CovBlock {
                time: 0.0,
                rows: vec![0],
                matrix: SymMatrix::from_diag(&[4.0]),
            }],
        };
        assert_eq!(invert_covariance(&four).unwrap().blocks[0].matrix.get(0, 0), 0.25);
    }

    #[test]
    fn kinetics_pair_count_and_completeness() {
        let f = kinetics();
        let inv = invert_covariance(&f.sigma).unwrap();
        let atoms = build_atoms(&f.q, &inv, &f.idx, SymMatrix::zeros(4), true).unwrap();
        assert_eq!(atoms.n_pairs(), 3 + 81 + 27);
        assert_eq!(atoms.pruned, 435 - 111);
        let qs = stacked_sensitivities(&f.q, &f.idx).unwrap();
        let all: Vec<usize> = (0..f.idx.n_rows()).collect();
        let dense = dense_fim(&qs, &inv.to_full(), &all, 4);
        assert!(rel_diff(&atoms.full_information(), &dense) < 1e-9);
    }

    #[test]
    fn unpruned_atoms_add_only_zero_pairs() {
        let f = kinetics();
        let inv = invert_covariance(&f.sigma).unwrap();
        let pruned = build_atoms(&f.q, &inv, &f.idx, SymMatrix::zeros(4), true).unwrap();
        let full = build_atoms(&f.q, &inv, &f.idx, SymMatrix::zeros(4), false).unwrap();
        assert_eq!(full.n_pairs(), 435);
        for (k, &(a, b)) in full.pairs.iter().enumerate() {
            match pruned.pair_index(a, b) {
                Some(j) => assert_eq!(full.off[k], pruned.off[j]),
                None => assert!(full.off[k].is_zero()),
            }
        }
    }

    #[test]
    fn single_scm_identity_covariance() {
        let cat = MeasurementCatalog {
            scm: vec![MeasurementRecord {
                name: "s".into(),
                channel: "y".into(),
                install: 1.0,
                per_sample: 0.0,
                times: vec![0.0, 1.0, 2.0],
            }],
            dcm: vec![],
            groups: vec![],
            covariance: ErrorCovariance {
                channels: vec!["y".into()],
                matrix: vec![vec![1.0]],
                scm_dcm_scale: 1.0,
            },
        };
        let q = SensitivityMatrix {
            channels: vec!["y".into()],
            times: vec![0.0, 1.0, 2.0],
            parameters: vec!["a".into(), "b".into()],
            time_unit: "min".into(),
            values: vec![1.0, 2.0, 0.5, -1.0, 3.0, 0.0],
        };
        let idx = build_item_index(&cat).unwrap();
        let inv = invert_covariance(&assemble_covariance(&cat, &idx).unwrap()).unwrap();
        let atoms = build_atoms(&q, &inv, &idx, SymMatrix::zeros(2), true).unwrap();
        let expected = SymMatrix::from_rows(&[vec![1.0 + 0.25 + 9.0, 2.0 - 0.5], vec![2.0 - 0.5, 4.0 + 1.0]]).unwrap();
        assert_eq!(atoms.diag[0], expected);
    }

    #[test]
    fn dcm_items_at_different_times_are_not_paired() {
        let f = kinetics();
        let inv = invert_covariance(&f.sigma).unwrap();
        let atoms = build_atoms(&f.q, &inv, &f.idx, SymMatrix::zeros(4), true).unwrap();
        let a = f.idx.position("CA_DCM@7.5").unwrap();
        let b = f.idx.position("CB_DCM@15").unwrap();
        let c = f.idx.position("CB_DCM@7.5").unwrap();
        assert!(atoms.pair_index(a, b).is_none());
        assert!(atoms.pair_index(a, c).is_some());
    }

    #[test]
    fn eval_bounds_and_prior() {
        let f = kinetics();
        let inv = invert_covariance(&f.sigma).unwrap();
        let prior = SymMatrix::scaled_identity(4, 1e-8);
        let atoms = build_atoms(&f.q, &inv, &f.idx, prior.clone(), true).unwrap();
        let zero = atoms.eval(&vec![0.0; 30], &vec![0.0; atoms.n_pairs()]).unwrap();
        assert_eq!(zero.matrix, prior);
        let mut bad = vec![0.0; 30];
        bad[2] = 1.5;
        assert!(matches!(atoms.eval(&bad, &vec![0.0; atoms.n_pairs()]), Err(Error::Domain(_))));
    }

    #[test]
    fn random_selections_match_row_selection_formula() {
        let f = kinetics();
        let inv = invert_covariance(&f.sigma).unwrap();
        let w_full = inv.to_full();
        let qs = stacked_sensitivities(&f.q, &f.idx).unwrap();
        let atoms = build_atoms(&f.q, &inv, &f.idx, SymMatrix::zeros(4), true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let sel: Vec<bool> = (0..30).map(|_| rng.gen_bool(0.4)).collect();
            let rows: Vec<usize> = (0..30)
                .filter(|&a| sel[a])
                .flat_map(|a| f.idx.items[a].rows.clone())
                .collect();
            let dense = dense_fim(&qs, &w_full, &rows, 4);
            let m = atoms.eval_selection(&sel);
            let mut d = m.clone();
            d.axpy(-1.0, &dense);
            assert!(d.frobenius_norm() <= 1e-9 * atoms.full_information().frobenius_norm());
        }
    }

    #[test]
    fn eval_is_affine() {
        let f = kinetics();
        let inv = invert_covariance(&f.sigma).unwrap();
        let atoms = build_atoms(&f.q, &inv, &f.idx, SymMatrix::identity(4), true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = atoms.n_pairs();
        for _ in 0..20 {
            let xa: Vec<f64> = (0..30).map(|_| rng.gen()).collect();
            let pa: Vec<f64> = (0..k).map(|_| rng.gen()).collect();
            let xb: Vec<f64> = (0..30).map(|_| rng.gen()).collect();
            let pb: Vec<f64> = (0..k).map(|_| rng.gen()).collect();
            let t: f64 = rng.gen();
            let mix = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| t * u + (1.0 - t) * v).collect::<Vec<_>>();
            let lhs = atoms.eval(&mix(&xa, &xb), &mix(&pa, &pb)).unwrap().matrix;
            let mut rhs = atoms.eval(&xa, &pa).unwrap().matrix;
            rhs.scale(t);
            rhs.axpy(1.0 - t, &atoms.eval(&xb, &pb).unwrap().matrix);
            assert!(rel_diff(&lhs, &rhs) < 1e-12);
        }
    }

    #[test]
    fn cache_round_trip() {
        let f = kinetics();
        let inv = invert_covariance(&f.sigma).unwrap();
        let prior = SymMatrix::scaled_identity(4, 1e-8);
        let atoms = build_atoms(&f.q, &inv, &f.idx, prior.clone(), true).unwrap();
        let hash = atoms_content_hash(&f.q, &f.cat, &prior, true).unwrap();
        assert_eq!(hash, atoms_content_hash(&f.q, &f.cat, &prior, true).unwrap());
        assert_ne!(hash, atoms_content_hash(&f.q, &f.cat, &prior, false).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("atoms.json");
        store_cached_atoms(&path, &hash, &atoms).unwrap();
        assert_eq!(load_cached_atoms(&path, &hash).unwrap(), Some(atoms));
        assert_eq!(load_cached_atoms(&path, "other").unwrap(), None);
    }
}
