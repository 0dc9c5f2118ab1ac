use super::*;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn q(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

/// Random LP with small integer data so that exact arithmetic stays cheap.
fn random_int_lp(n: usize, m: usize, rng: &mut ChaCha8Rng) -> LpInstance {
    let mut lp = LpInstance::new(n);
    for j in 0..n {
        lp.objective[j] = rng.gen_range(-5i64..=9) as f64;
        lp.lower[j] = rng.gen_range(-2i64..=0) as f64;
        lp.upper[j] = lp.lower[j] + rng.gen_range(1i64..=4) as f64;
    }
    for _ in 0..m {
        let mut coeffs = Vec::new();
        for j in 0..n {
            if rng.gen_bool(0.7) {
                coeffs.push((j, rng.gen_range(-4i64..=6) as f64));
            }
        }
        let sense = match rng.gen_range(0..10) {
            0 => Sense::Eq,
            1 | 2 => Sense::Ge,
            _ => Sense::Le,
        };
        let rhs = match sense {
            Sense::Ge => rng.gen_range(-8i64..=2) as f64,
            _ => rng.gen_range(-2i64..=12) as f64,
        };
        lp.add_row(coeffs, sense, rhs);
    }
    lp
}

/// Solves the square rational system `a z = b`; `None` when singular.
fn rational_solve(mut a: Vec<Vec<BigRational>>, mut b: Vec<BigRational>) -> Option<Vec<BigRational>> {
    let k = b.len();
    for col in 0..k {
        let piv = (col..k).find(|&r| !a[r][col].is_zero())?;
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..k {
            if r != col && !a[r][col].is_zero() {
                let f = &a[r][col] / &a[col][col];
                for c in col..k {
                    let t = &f * &a[col][c];
                    a[r][c] -= t;
                }
                let t = &f * &b[col];
                b[r] -= t;
            }
        }
    }
    Some((0..k).map(|i| &b[i] / &a[i][i]).collect())
}

/// Exact LP optimum by enumerating every vertex (tiny instances only).
/// Returns `None` if the feasible set is empty.
fn vertex_enumeration(lp: &LpInstance) -> Option<f64> {
    let n = lp.n_cols();
    // Constraints as (coefficients, rhs, is_equality, is_ge).
    let mut cons: Vec<(Vec<BigRational>, BigRational, bool, bool)> = Vec::new();
    for r in &lp.rows {
        let mut a = vec![q(0); n];
        for &(j, v) in &r.coeffs {
            a[j] += q(v as i64);
        }
        cons.push((a, q(r.rhs as i64), r.sense == Sense::Eq, r.sense == Sense::Ge));
    }
    for j in 0..n {
        let mut e = vec![q(0); n];
        e[j] = q(1);
        cons.push((e.clone(), q(lp.lower[j] as i64), false, true));
        cons.push((e, q(lp.upper[j] as i64), false, false));
    }
    let eqs: Vec<usize> = (0..cons.len()).filter(|&i| cons[i].2).collect();
    let ineqs: Vec<usize> = (0..cons.len()).filter(|&i| !cons[i].2).collect();
    let need = n.saturating_sub(eqs.len());
    let feasible = |x: &[BigRational]| {
        cons.iter().all(|(a, b, eq, ge)| {
            let act: BigRational = a.iter().zip(x).map(|(u, v)| u * v).sum();
            if *eq {
                &act == b
            } else if *ge {
                &act >= b
            } else {
                &act <= b
            }
        })
    };
    let mut best: Option<BigRational> = None;
    let mut choose = vec![0usize; need];
    fn next_comb(c: &mut [usize], n: usize) -> bool {
        let k = c.len();
        for i in (0..k).rev() {
            if c[i] < n - k + i {
                c[i] += 1;
                for j in i + 1..k {
                    c[j] = c[j - 1] + 1;
                }
                return true;
            }
        }
        false
    }
    if need > ineqs.len() {
        return None;
    }
    for (i, c) in choose.iter_mut().enumerate() {
        *c = i;
    }
    loop {
        let active: Vec<usize> = eqs.iter().copied().chain(choose.iter().map(|&i| ineqs[i])).collect();
        if active.len() == n {
            let a: Vec<Vec<BigRational>> = active.iter().map(|&i| cons[i].0.clone()).collect();
            let b: Vec<BigRational> = active.iter().map(|&i| cons[i].1.clone()).collect();
            if let Some(x) = rational_solve(a, b) {
                if feasible(&x) {
                    let obj: BigRational = lp.objective.iter().zip(&x).map(|(c, v)| q(*c as i64) * v).sum();
                    if best.as_ref().is_none_or(|b| &obj > b) {
                        best = Some(obj);
                    }
                }
            }
        }
        if need == 0 || !next_comb(&mut choose, ineqs.len()) {
            break;
        }
    }
    best.map(|b| b.to_f64().unwrap())
}

/// Exact certificate for a returned basis: recomputes the basic solution and
/// the row prices in rational arithmetic and returns `(primal value, largest
/// bound violation, Lagrangian upper bound)`.
fn rational_certificate(lp: &LpInstance, basis: &Basis) -> (f64, f64, f64) {
    let (n, m) = (lp.n_cols(), lp.n_rows());
    let mut a = vec![vec![q(0); n + m]; m];
    for (i, r) in lp.rows.iter().enumerate() {
        for &(j, v) in &r.coeffs {
            a[i][j] += q(v as i64);
        }
        a[i][n + i] = q(-1);
    }
    let mut lb: Vec<Option<BigRational>> = lp.lower.iter().map(|&v| Some(q(v as i64))).collect();
    let mut ub: Vec<Option<BigRational>> = lp.upper.iter().map(|&v| Some(q(v as i64))).collect();
    for r in &lp.rows {
        let b = q(r.rhs as i64);
        match r.sense {
            Sense::Le => {
                lb.push(None);
                ub.push(Some(b));
            }
            Sense::Ge => {
                lb.push(Some(b));
                ub.push(None);
            }
            Sense::Eq => {
                lb.push(Some(b.clone()));
                ub.push(Some(b));
            }
        }
    }
    let mut x = vec![q(0); n + m];
    let is_basic: Vec<bool> = (0..n + m).map(|j| basis.head.contains(&j)).collect();
    for j in 0..n + m {
        if !is_basic[j] {
            x[j] = if basis.at_upper[j] {
                ub[j].clone().or(lb[j].clone()).unwrap()
            } else {
                lb[j].clone().or(ub[j].clone()).unwrap()
            };
        }
    }
    let rhs: Vec<BigRational> = (0..m)
        .map(|i| {
            let mut s = q(0);
            for j in 0..n + m {
                if !is_basic[j] {
                    s -= &a[i][j] * &x[j];
                }
            }
            s
        })
        .collect();
    let bmat: Vec<Vec<BigRational>> = (0..m)
        .map(|i| basis.head.iter().map(|&j| a[i][j].clone()).collect())
        .collect();
    let xb = rational_solve(bmat.clone(), rhs).expect("returned basis must be nonsingular");
    for (p, &j) in basis.head.iter().enumerate() {
        x[j] = xb[p].clone();
    }
    let mut viol = q(0);
    for j in 0..n + m {
        if let Some(l) = &lb[j] {
            if &x[j] < l {
                viol = viol.max(l - &x[j]);
            }
        }
        if let Some(u) = &ub[j] {
            if &x[j] > u {
                viol = viol.max(&x[j] - u);
            }
        }
    }
    let primal: BigRational = (0..n).map(|j| q(lp.objective[j] as i64) * &x[j]).sum();
    // Prices from Bᵀ y = c_B.
    let bt: Vec<Vec<BigRational>> = (0..m).map(|p| (0..m).map(|i| bmat[i][p].clone()).collect()).collect();
    let cb: Vec<BigRational> = basis
        .head
        .iter()
        .map(|&j| if j < n { q(lp.objective[j] as i64) } else { q(0) })
        .collect();
    let y = rational_solve(bt, cb).unwrap();
    // Lagrangian bound with sign-infeasible prices clamped to zero.
    let y: Vec<BigRational> = lp
        .rows
        .iter()
        .zip(y)
        .map(|(r, yi)| match r.sense {
            Sense::Le if yi.is_negative() => q(0),
            Sense::Ge if yi.is_positive() => q(0),
            _ => yi,
        })
        .collect();
    let mut bound = q(0);
    for (i, r) in lp.rows.iter().enumerate() {
        bound += &y[i] * q(r.rhs as i64);
    }
    for j in 0..n {
        let mut d = q(lp.objective[j] as i64);
        for i in 0..m {
            d -= &y[i] * &a[i][j];
        }
        let lo = &d * lb[j].as_ref().unwrap();
        let hi = &d * ub[j].as_ref().unwrap();
        bound += if lo > hi { lo } else { hi };
    }
    (primal.to_f64().unwrap(), viol.to_f64().unwrap(), bound.to_f64().unwrap())
}

#[test]
fn single_variable_cap() {
    let mut lp = LpInstance::new(1);
    lp.objective[0] = 1.0;
    lp.add_row(vec![(0, 1.0)], Sense::Le, 0.5);
    let r = solve_lp(&lp, None).unwrap();
    assert_eq!(r.status, LpStatus::Optimal);
    assert!((r.x[0] - 0.5).abs() < 1e-12);
    assert!((r.objective - 0.5).abs() < 1e-12);
}

#[test]
fn degenerate_face() {
    let mut lp = LpInstance::new(2);
    lp.objective = vec![1.0, 1.0];
    lp.add_row(vec![(0, 1.0), (1, 1.0)], Sense::Le, 1.0);
    let r = solve_lp(&lp, None).unwrap();
    assert_eq!(r.status, LpStatus::Optimal);
    assert!((r.objective - 1.0).abs() < 1e-12);
}

#[test]
fn detects_infeasibility() {
    let mut lp = LpInstance::new(2);
    lp.add_row(vec![(0, 1.0), (1, 1.0)], Sense::Ge, 3.0);
    assert_eq!(solve_lp(&lp, None).unwrap().status, LpStatus::Infeasible);
}

#[test]
fn matches_vertex_enumeration_on_tiny_lps() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut optimal = 0;
    for t in 0..50 {
        let n = 1 + t % 5;
        let m = 1 + (t / 5) % 5;
        let lp = random_int_lp(n, m, &mut rng);
        let r = solve_lp(&lp, None).unwrap();
        match vertex_enumeration(&lp) {
            Some(v) => {
                assert_eq!(r.status, LpStatus::Optimal, "instance {t}");
                assert!((r.objective - v).abs() <= 1e-7, "instance {t}: {} vs {v}", r.objective);
                optimal += 1;
            }
            None => assert_eq!(r.status, LpStatus::Infeasible, "instance {t}"),
        }
    }
    assert!(optimal >= 25);
}

#[test]
fn exact_certificate_on_dense_lps_up_to_forty() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut certified = 0;
    for t in 0..50 {
        let n = rng.gen_range(5..=40);
        let m = rng.gen_range(5..=40);
        let lp = random_int_lp(n, m, &mut rng);
        let r = solve_lp(&lp, None).unwrap();
        if r.status != LpStatus::Optimal {
            assert_eq!(r.status, LpStatus::Infeasible);
            continue;
        }
        let (primal, viol, bound) = rational_certificate(&lp, r.basis.as_ref().unwrap());
        assert!(viol <= 1e-9, "instance {t}: basis infeasible by {viol}");
        assert!(bound - primal <= 1e-7, "instance {t}: duality gap {}", bound - primal);
        assert!((r.objective - primal).abs() <= 1e-7, "instance {t}");
        certified += 1;
    }
    assert!(certified >= 25, "only {certified} feasible instances");
}

fn check_optimality_conditions(lp: &LpInstance, r: &LpResult) {
    assert!(lp.max_violation(&r.x) <= 1e-9);
    assert!(r.objective <= lp.dual_bound(&r.duals) + 1e-7);
    let act = lp.row_activity(&r.x);
    for (i, row) in lp.rows.iter().enumerate() {
        assert!((r.duals[i] * (row.rhs - act[i])).abs() <= 1e-7, "row {i}");
    }
    for j in 0..lp.n_cols() {
        let gap = (r.x[j] - lp.lower[j]).min(lp.upper[j] - r.x[j]);
        assert!((r.reduced_costs[j] * gap).abs() <= 1e-7, "column {j}");
    }
}

#[test]
fn weak_duality_and_complementary_slackness() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..40 {
        let lp = random_int_lp(rng.gen_range(2..30), rng.gen_range(2..30), &mut rng);
        let r = solve_lp(&lp, None).unwrap();
        if r.status == LpStatus::Optimal {
            check_optimality_conditions(&lp, &r);
        }
    }
}

#[test]
fn deterministic_and_scale_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..20 {
        let lp = random_int_lp(12, 10, &mut rng);
        let a = solve_lp(&lp, None).unwrap();
        let b = solve_lp(&lp, None).unwrap();
        assert_eq!(a.iterations, b.iterations);
        assert!(a.x.iter().zip(&b.x).all(|(u, v)| u.to_bits() == v.to_bits()));
        if a.status != LpStatus::Optimal {
            continue;
        }
        let mut scaled = lp.clone();
        scaled.objective.iter_mut().for_each(|c| *c *= 8.0);
        let s = solve_lp(&scaled, None).unwrap();
        assert_eq!(s.basis.as_ref().unwrap().head, a.basis.as_ref().unwrap().head);
        assert!((s.objective - 8.0 * a.objective).abs() <= 1e-9 * s.objective.abs().max(1.0));
    }
}

#[test]
fn warm_start_after_adding_rows_and_changing_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..30 {
        let mut lp = random_int_lp(10, 8, &mut rng);
        let first = solve_lp(&lp, None).unwrap();
        let coeffs: Vec<(usize, f64)> = (0..10).map(|j| (j, rng.gen_range(-3i64..=3) as f64)).collect();
        lp.add_row(coeffs, Sense::Le, 2.0);
        lp.upper[0] = lp.lower[0];
        let cold = solve_lp(&lp, None).unwrap();
        let warm = solve_lp(&lp, first.basis.as_ref()).unwrap();
        assert_eq!(cold.status, warm.status);
        if cold.status == LpStatus::Optimal {
            assert!((cold.objective - warm.objective).abs() < 1e-7);
        }
    }
}

#[test]
fn incompatible_warm_basis_is_ignored() {
    let mut lp = LpInstance::new(2);
    lp.objective = vec![1.0, 2.0];
    lp.add_row(vec![(0, 1.0), (1, 1.0)], Sense::Le, 1.5);
    let bogus = Basis {
        n_cols: 7,
        n_rows: 1,
        head: vec![0],
        at_upper: vec![false; 8],
    };
    let r = solve_lp(&lp, Some(&bogus)).unwrap();
    assert!((r.objective - 2.5).abs() < 1e-12);
}

#[test]
fn lp_text_lists_rows_and_bounds() {
    let mut lp = LpInstance::new(2);
    lp.objective = vec![1.0, -2.0];
    lp.add_row(vec![(0, 1.0), (1, -1.0)], Sense::Ge, 0.0);
    let text = lp.to_lp_text();
    assert!(text.contains("obj: 1.0 x0 - 2.0 x1"));
    assert!(text.contains("r0: 1.0 x0 - 1.0 x1 >= 0.0"));
    assert!(text.contains("0.0 <= x1 <= 1.0"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn optimal_points_are_feasible_and_dual_bounded(seed in any::<u64>(), n in 1usize..15, m in 0usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lp = random_int_lp(n, m, &mut rng);
        let r = solve_lp(&lp, None).unwrap();
        prop_assert_ne!(r.status, LpStatus::Unbounded);
        if r.status == LpStatus::Optimal {
            prop_assert!(lp.max_violation(&r.x) <= 1e-9);
            prop_assert!(r.objective <= lp.dual_bound(&r.duals) + 1e-7);
        }
    }
}
