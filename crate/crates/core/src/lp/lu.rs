//! Sparse LU factorization of a simplex basis with product-form updates.
//!
//! Elimination applies row operations `E_m ... E_1 B = U`, where `U` is upper
//! triangular up to the pivot permutation: the pivot of step `k` sits at
//! `(row r_k, basis position c_k)` and row `r_k` of `U` only holds positions
//! pivoted at steps `>= k`. Pivots are chosen by singletons first, then by
//! Markowitz cost with threshold partial pivoting.

const DROP_TOL: f64 = 1e-14;
const SINGULAR_TOL: f64 = 1e-11;
const THRESHOLD: f64 = 0.1;
const MARKOWITZ_CANDIDATES: usize = 4;

/// Sparse column: `(row, value)` entries.
pub(crate) type SparseCol = Vec<(usize, f64)>;

struct URow {
    row: usize,
    pos: usize,
    pivot: f64,
    rest: Vec<(usize, f64)>,
}

struct LEta {
    row: usize,
    mult: Vec<(usize, f64)>,
}

/// Basis update `B_new = B (I + (alpha - e_p) e_pᵀ)`.
struct UpdateEta {
    pos: usize,
    pivot: f64,
    rest: Vec<(usize, f64)>,
}

pub(crate) struct LuFactor {
    m: usize,
    l: Vec<LEta>,
    u: Vec<URow>,
    updates: Vec<UpdateEta>,
}

/// Basis positions that could not be pivoted, each paired with a row whose
/// logical variable should replace it.
pub(crate) struct Singular {
    pub replacements: Vec<(usize, usize)>,
}

impl LuFactor {
    pub fn n_updates(&self) -> usize {
        self.updates.len()
    }

    /// Factors the `m x m` matrix whose column `c` is `cols[c]`.
    pub fn factor(m: usize, cols: &[SparseCol]) -> Result<Self, Singular> {
        assert_eq!(cols.len(), m);
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
        let mut col_rows: Vec<Vec<usize>> = vec![Vec::new(); m];
        for (c, col) in cols.iter().enumerate() {
            for &(r, v) in col {
                if v.abs() > DROP_TOL {
                    rows[r].push((c, v));
                    col_rows[c].push(r);
                }
            }
        }
        let mut row_count: Vec<usize> = rows.iter().map(Vec::len).collect();
        let mut col_count: Vec<usize> = col_rows.iter().map(Vec::len).collect();
        let mut row_done = vec![false; m];
        let mut col_done = vec![false; m];
        let mut col_dead = vec![false; m];
        let mut col_queue: Vec<usize> = (0..m).rev().filter(|&c| col_count[c] == 1).collect();
        let mut row_queue: Vec<usize> = (0..m).rev().filter(|&r| row_count[r] == 1).collect();
        let mut work = vec![0.0; m];
        let mut mark = vec![false; m];
        let mut l = Vec::new();
        let mut u = Vec::with_capacity(m);

        let mut seen = vec![false; m];

        let mut pivots_done = 0;
        while pivots_done < m {
            let mut choice: Option<(usize, usize)> = None;
            while let Some(c) = col_queue.pop() {
                if col_done[c] || col_dead[c] || col_count[c] != 1 {
                    continue;
                }
                let ents = column_entries(c, &rows, &col_rows, &row_done, &mut seen);
                if let [(r, v)] = ents[..] {
                    if v.abs() > SINGULAR_TOL {
                        choice = Some((r, c));
                        break;
                    }
                }
            }
            if choice.is_none() {
                while let Some(r) = row_queue.pop() {
                    if row_done[r] || row_count[r] != 1 {
                        continue;
                    }
                    let (c, v) = rows[r][0];
                    if col_dead[c] {
                        continue;
                    }
                    let ents = column_entries(c, &rows, &col_rows, &row_done, &mut seen);
                    let cmax = ents.iter().fold(0.0f64, |a, e| a.max(e.1.abs()));
                    if v.abs() > SINGULAR_TOL && v.abs() >= THRESHOLD * cmax {
                        choice = Some((r, c));
                        break;
                    }
                }
            }
            if choice.is_none() {
                choice = markowitz(&rows, &col_rows, &row_done, &col_done, &mut col_dead, &row_count, &col_count, &mut seen);
            }
            let Some((pr, pc)) = choice else { break };

            let prow = std::mem::take(&mut rows[pr]);
            let pivot = prow.iter().find(|e| e.0 == pc).unwrap().1;
            let rest: Vec<(usize, f64)> = prow.iter().copied().filter(|e| e.0 != pc).collect();
            let targets: Vec<(usize, f64)> = column_entries(pc, &rows, &col_rows, &row_done, &mut seen)
                .into_iter()
                .filter(|e| e.0 != pr)
                .collect();
            row_done[pr] = true;
            col_done[pc] = true;
            for &(c, _) in &rest {
                col_count[c] -= 1;
                if col_count[c] == 1 {
                    col_queue.push(c);
                }
            }
            let mut mult = Vec::with_capacity(targets.len());
            for (i, a_ic) in targets {
                let f = a_ic / pivot;
                mult.push((i, f));
                let row_i = std::mem::take(&mut rows[i]);
                for &(c, v) in &row_i {
                    if c != pc {
                        work[c] = v;
                        mark[c] = true;
                    }
                }
                let mut order: Vec<usize> = row_i.iter().map(|e| e.0).filter(|&c| c != pc).collect();
                for &(c, v) in &rest {
                    if mark[c] {
                        work[c] -= f * v;
                    } else {
                        work[c] = -f * v;
                        mark[c] = true;
                        order.push(c);
                        col_rows[c].push(i);
                        col_count[c] += 1;
                    }
                }
                let mut new_row = Vec::with_capacity(order.len());
                for c in order {
                    mark[c] = false;
                    if work[c].abs() > DROP_TOL {
                        new_row.push((c, work[c]));
                    } else {
                        col_count[c] -= 1;
                        if col_count[c] == 1 {
                            col_queue.push(c);
                        }
                    }
                    work[c] = 0.0;
                }
                row_count[i] = new_row.len();
                if row_count[i] == 1 {
                    row_queue.push(i);
                }
                rows[i] = new_row;
            }
            if !mult.is_empty() {
                l.push(LEta { row: pr, mult });
            }
            u.push(URow {
                row: pr,
                pos: pc,
                pivot,
                rest,
            });
            pivots_done += 1;
        }
        if pivots_done < m {
            let free_rows: Vec<usize> = (0..m).filter(|&r| !row_done[r]).collect();
            let free_cols: Vec<usize> = (0..m).filter(|&c| !col_done[c]).collect();
            return Err(Singular {
                replacements: free_cols.into_iter().zip(free_rows).collect(),
            });
        }
        Ok(Self {
            m,
            l,
            u,
            updates: Vec::new(),
        })
    }

    /// Solves `B z = a` in place; `a` is indexed by row on entry and by basis
    /// position on exit.
    pub fn ftran(&self, a: &mut Vec<f64>) {
        for eta in &self.l {
            let v = a[eta.row];
            if v != 0.0 {
                for &(i, f) in &eta.mult {
                    a[i] -= f * v;
                }
            }
        }
        let mut z = vec![0.0; self.m];
        for ur in self.u.iter().rev() {
            let mut s = a[ur.row];
            for &(c, v) in &ur.rest {
                s -= v * z[c];
            }
            z[ur.pos] = s / ur.pivot;
        }
        for up in &self.updates {
            let zp = z[up.pos] / up.pivot;
            if zp != 0.0 {
                for &(i, v) in &up.rest {
                    z[i] -= v * zp;
                }
            }
            z[up.pos] = zp;
        }
        *a = z;
    }

    /// Solves `Bᵀ y = c` in place; `c` is indexed by basis position on entry and
    /// by row on exit.
    pub fn btran(&self, c: &mut Vec<f64>) {
        for up in self.updates.iter().rev() {
            let mut s = c[up.pos];
            for &(i, v) in &up.rest {
                s -= v * c[i];
            }
            c[up.pos] = s / up.pivot;
        }
        let mut w = vec![0.0; self.m];
        for ur in &self.u {
            let wr = c[ur.pos] / ur.pivot;
            w[ur.row] = wr;
            if wr != 0.0 {
                for &(p, v) in &ur.rest {
                    c[p] -= v * wr;
                }
            }
        }
        for eta in self.l.iter().rev() {
            let mut s = 0.0;
            for &(i, f) in &eta.mult {
                s += f * w[i];
            }
            w[eta.row] -= s;
        }
        *c = w;
    }

    /// Records the replacement of basis position `pos` by a column whose FTRAN
    /// image is `alpha`.
    pub fn update(&mut self, pos: usize, alpha: &[f64]) {
        let rest = alpha
            .iter()
            .enumerate()
            .filter(|&(i, v)| i != pos && v.abs() > DROP_TOL)
            .map(|(i, &v)| (i, v))
            .collect();
        self.updates.push(UpdateEta {
            pos,
            pivot: alpha[pos],
            rest,
        });
    }
}

/// Active entries of column `c`; `col_rows` may hold stale or repeated rows.
fn column_entries(
    c: usize,
    rows: &[Vec<(usize, f64)>],
    col_rows: &[Vec<usize>],
    row_done: &[bool],
    seen: &mut [bool],
) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = Vec::new();
    for &r in &col_rows[c] {
        if row_done[r] || seen[r] {
            continue;
        }
        seen[r] = true;
        if let Some(&(_, v)) = rows[r].iter().find(|e| e.0 == c) {
            out.push((r, v));
        }
    }
    for &r in &col_rows[c] {
        seen[r] = false;
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn markowitz(
    rows: &[Vec<(usize, f64)>],
    col_rows: &[Vec<usize>],
    row_done: &[bool],
    col_done: &[bool],
    col_dead: &mut [bool],
    row_count: &[usize],
    col_count: &[usize],
    seen: &mut [bool],
) -> Option<(usize, usize)> {
    let mut cands: Vec<usize> = (0..col_done.len()).filter(|&c| !col_done[c] && !col_dead[c]).collect();
    cands.sort_by_key(|&c| (col_count[c], c));
    let mut best: Option<(usize, f64, usize, usize)> = None;
    let mut examined = 0;
    for c in cands {
        let ents = column_entries(c, rows, col_rows, row_done, seen);
        let cmax = ents.iter().fold(0.0f64, |a, e| a.max(e.1.abs()));
        if cmax <= SINGULAR_TOL {
            col_dead[c] = true;
            continue;
        }
        let cc = ents.len() - 1;
        for &(r, v) in &ents {
            if v.abs() < THRESHOLD * cmax {
                continue;
            }
            let cost = (row_count[r] - 1) * cc;
            let better = match best {
                None => true,
                Some((bc, bv, br, _)) => cost < bc || (cost == bc && (v.abs() > bv || (v.abs() == bv && r < br))),
            };
            if better {
                best = Some((cost, v.abs(), r, c));
            }
        }
        examined += 1;
        if examined >= MARKOWITZ_CANDIDATES || best.is_some_and(|b| b.0 == 0) {
            break;
        }
    }
    best.map(|(_, _, r, c)| (r, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sparse(m: usize, density: f64, rng: &mut ChaCha8Rng) -> Vec<SparseCol> {
        (0..m)
            .map(|c| {
                let mut col = SparseCol::new();
                for r in 0..m {
                    if r == c || rng.gen_bool(density) {
                        col.push((r, rng.gen_range(-2.0..2.0) + if r == c { 3.0 } else { 0.0 }));
                    }
                }
                col
            })
            .collect()
    }

    fn matvec(cols: &[SparseCol], z: &[f64], m: usize) -> Vec<f64> {
        let mut out = vec![0.0; m];
        for (c, col) in cols.iter().enumerate() {
            for &(r, v) in col {
                out[r] += v * z[c];
            }
        }
        out
    }

    fn mat_t_vec(cols: &[SparseCol], y: &[f64]) -> Vec<f64> {
        cols.iter().map(|col| col.iter().map(|&(r, v)| v * y[r]).sum()).collect()
    }

    #[test]
    fn solves_match_products_with_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..30 {
            let m = 3 + trial % 25;
            let mut cols = random_sparse(m, 0.2, &mut rng);
            let mut lu = LuFactor::factor(m, &cols).ok().unwrap();
            for _ in 0..5 {
                let b: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let mut z = b.clone();
                lu.ftran(&mut z);
                let back = matvec(&cols, &z, m);
                for i in 0..m {
                    assert!((back[i] - b[i]).abs() < 1e-9, "ftran trial {trial}");
                }
                let mut y = b.clone();
                lu.btran(&mut y);
                let back = mat_t_vec(&cols, &y);
                for i in 0..m {
                    assert!((back[i] - b[i]).abs() < 1e-9, "btran trial {trial}");
                }
                // Replace a random column.
                let p = rng.gen_range(0..m);
                let mut new_col = SparseCol::new();
                for r in 0..m {
                    if r == p || rng.gen_bool(0.3) {
                        new_col.push((r, rng.gen_range(-2.0..2.0) + if r == p { 4.0 } else { 0.0 }));
                    }
                }
                let mut alpha = vec![0.0; m];
                for &(r, v) in &new_col {
                    alpha[r] = v;
                }
                lu.ftran(&mut alpha);
                if alpha[p].abs() < 1e-3 {
                    continue;
                }
                lu.update(p, &alpha);
                cols[p] = new_col;
            }
        }
    }

    #[test]
    fn singular_basis_reports_replacements() {
        let cols = vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 2.0), (1, 2.0)], vec![(2, 1.0)]];
        match LuFactor::factor(3, &cols) {
            Err(s) => assert_eq!(s.replacements.len(), 1),
            Ok(_) => panic!("expected a singular basis"),
        }
    }
}
