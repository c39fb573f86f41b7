use elwqr_core::quantile::{solve_weighted_qr, weighted_objective, weighted_quantile, QrStatus};
use elwqr_core::{DesignRow, QuantileLevel};
use proptest::prelude::*;

fn check(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c].abs() < 1e-12 {
            return None;
        }
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    (k - 1..n)
        .flat_map(|last| {
            subsets(last, k - 1).into_iter().map(move |mut s| {
                s.push(last);
                s
            })
        })
        .collect()
}

/// Minimum of the objective over all fits that interpolate `p` of the rows.
fn exact_fit_oracle(w: &[Vec<f64>], y: &[f64], weights: &[f64], tau: f64) -> f64 {
    let p = w[0].len();
    let objective =
        |beta: &[f64]| -> f64 { (0..y.len()).map(|i| weights[i] * check(y[i] - dot(&w[i], beta), tau)).sum() };
    subsets(y.len(), p)
        .into_iter()
        .filter_map(|s| {
            let a = s.iter().map(|&i| w[i].clone()).collect();
            let b = s.iter().map(|&i| y[i]).collect();
            solve_small(a, b)
        })
        .map(|beta| objective(&beta))
        .fold(f64::INFINITY, f64::min)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn instance() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, Vec<f64>, f64)> {
    (1usize..=2, 2usize..=8).prop_flat_map(|(p, n)| {
        let n = n.max(p);
        (
            prop::collection::vec(prop::collection::vec(-3.0f64..3.0, p - 1), n),
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(0.1f64..2.0, n),
            0.05f64..0.95,
        )
            .prop_map(|(xs, y, wt, tau)| {
                let w = xs
                    .into_iter()
                    .map(|x| std::iter::once(1.0).chain(x).collect())
                    .collect();
                (w, y, wt, tau)
            })
    })
}

fn rows_of(w: &[Vec<f64>], y: &[f64]) -> Vec<DesignRow> {
    w.iter().zip(y).map(|(w, y)| DesignRow::new(w.clone(), *y).unwrap()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn matches_exact_fit_enumeration((w, y, wt, tau) in instance()) {
        let level = QuantileLevel::new(tau).unwrap();
        let sol = solve_weighted_qr(&rows_of(&w, &y), &wt, level).unwrap();
        let oracle = exact_fit_oracle(&w, &y, &wt, tau);
        if sol.status == QrStatus::Converged {
            prop_assert!((sol.objective - oracle).abs() <= 1e-9 * (1.0 + oracle.abs()),
                "solver {} oracle {}", sol.objective, oracle);
        } else {
            prop_assert_eq!(sol.status, QrStatus::Degenerate);
            prop_assert!(!oracle.is_finite());
        }
    }

    #[test]
    fn invariant_to_row_order_and_weight_scale((w, y, wt, tau) in instance(), c in 0.01f64..100.0) {
        let level = QuantileLevel::new(tau).unwrap();
        let base = solve_weighted_qr(&rows_of(&w, &y), &wt, level).unwrap();
        prop_assume!(base.status == QrStatus::Converged);
        let (mut w2, mut y2, mut wt2) = (w.clone(), y.clone(), wt.clone());
        w2.reverse();
        y2.reverse();
        wt2.reverse();
        let rev = solve_weighted_qr(&rows_of(&w2, &y2), &wt2, level).unwrap();
        prop_assert!((rev.objective - base.objective).abs() <= 1e-9 * (1.0 + base.objective));
        let scaled: Vec<f64> = wt.iter().map(|v| v * c).collect();
        let sc = solve_weighted_qr(&rows_of(&w, &y), &scaled, level).unwrap();
        prop_assert!((sc.objective - c * base.objective).abs() <= 1e-9 * (1.0 + c * base.objective));
    }

    #[test]
    fn no_perturbation_improves((w, y, wt, tau) in instance(), dir in prop::collection::vec(-1.0f64..1.0, 2), t in 1e-4f64..1.0) {
        let level = QuantileLevel::new(tau).unwrap();
        let rows = rows_of(&w, &y);
        let sol = solve_weighted_qr(&rows, &wt, level).unwrap();
        prop_assume!(sol.status == QrStatus::Converged);
        let moved: Vec<f64> = sol.beta.iter().zip(&dir).map(|(b, d)| b + t * d).collect();
        prop_assert!(weighted_objective(&rows, &wt, &moved, level) >= sol.objective - 1e-9);
    }

    #[test]
    fn intercept_only_is_weighted_quantile(y in prop::collection::vec(-5.0f64..5.0, 1..20), tau in 0.05f64..0.95) {
        let level = QuantileLevel::new(tau).unwrap();
        let wt = vec![1.0; y.len()];
        let w = vec![vec![1.0]; y.len()];
        let sol = solve_weighted_qr(&rows_of(&w, &y), &wt, level).unwrap();
        let q = weighted_quantile(&y, &wt, level).unwrap();
        let at_q = weighted_objective(&rows_of(&w, &y), &wt, &[q], level);
        prop_assert!((sol.objective - at_q).abs() < 1e-9);
    }
}

fn tied_instance() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, Vec<f64>, f64)> {
    (3usize..=11).prop_flat_map(|n| {
        (
            prop::collection::vec((-2i32..=2, -2i32..=2), n),
            prop::collection::vec(-3i32..=3, n),
            prop::collection::vec(prop::sample::select(vec![0.5, 1.0, 2.0]), n),
            prop::sample::select(vec![0.25, 0.5, 0.75]),
        )
            .prop_map(|(xs, y, wt, tau)| {
                let w = xs.into_iter().map(|(a, b)| vec![1.0, f64::from(a), f64::from(b)]).collect();
                (w, y.into_iter().map(f64::from).collect(), wt, tau)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn ties_and_degenerate_vertices((w, y, wt, tau) in tied_instance()) {
        let level = QuantileLevel::new(tau).unwrap();
        let sol = solve_weighted_qr(&rows_of(&w, &y), &wt, level).unwrap();
        let oracle = exact_fit_oracle(&w, &y, &wt, tau);
        if sol.status == QrStatus::Converged {
            prop_assert!((sol.objective - oracle).abs() <= 1e-9 * (1.0 + oracle.abs()),
                "solver {} oracle {}", sol.objective, oracle);
        } else {
            prop_assert_eq!(sol.status, QrStatus::Degenerate);
            prop_assert!(!oracle.is_finite());
        }
    }
}
