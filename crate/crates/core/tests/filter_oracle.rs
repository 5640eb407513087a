use hidemk::filter::*;
use hidemk::nn::Tensor;
use proptest::prelude::*;

/// Direct count of the multiple-knockoff FDP estimate at threshold t.
fn ratio_brute(kappa: &[usize], tau: &[f64], m: usize, t: f64) -> f64 {
    let null = (0..tau.len()).filter(|&j| kappa[j] >= 1 && tau[j] >= t).count();
    let pos = (0..tau.len()).filter(|&j| kappa[j] == 0 && tau[j] >= t).count();
    (1.0 / m as f64 + null as f64 / m as f64) / pos.max(1) as f64
}

fn threshold_brute(kappa: &[usize], tau: &[f64], alpha: f64, m: usize) -> Option<f64> {
    tau.iter()
        .copied()
        .filter(|&t| t > 0.0 && ratio_brute(kappa, tau, m, t) <= alpha)
        .fold(None, |best: Option<f64>, t| Some(best.map_or(t, |b| b.min(t))))
}

fn q_brute(kappa: &[usize], tau: &[f64], m: usize) -> Vec<f64> {
    (0..tau.len())
        .map(|j| {
            if kappa[j] != 0 {
                return 1.0;
            }
            tau.iter()
                .copied()
                .filter(|&t| t > 0.0 && t <= tau[j])
                .map(|t| ratio_brute(kappa, tau, m, t))
                .fold(1.0, f64::min)
        })
        .collect()
}

fn stats_strategy() -> impl Strategy<Value = (Vec<usize>, Vec<f64>, usize)> {
    (prop_oneof![Just(3usize), Just(5usize)], 1usize..=12).prop_flat_map(|(m, p)| {
        (
            prop::collection::vec(0..=m, p),
            // small integer grid so ties are common
            prop::collection::vec((0u8..8).prop_map(|v| v as f64 * 0.25), p),
            Just(m),
        )
    })
}

fn matrix_strategy() -> impl Strategy<Value = ImportanceMatrix> {
    (2usize..=5, 1usize..=10).prop_flat_map(|(m, p)| {
        prop::collection::vec((0u8..10).prop_map(|v| v as f64 / 8.0), p * (m + 1))
            .prop_map(move |v| ImportanceMatrix::with_default_ids(p, m, v).unwrap())
    })
}

#[test]
fn importance_matches_two_loop_summation() {
    let (n, p, k) = (13, 7, 4);
    let data: Vec<f64> = (0..n * p * k).map(|i| ((i * 37 % 101) as f64 - 50.0) / 17.0).collect();
    let g = Tensor::new(vec![n, p, k], data.clone()).unwrap();
    let t = importance_matrix(&g, None).unwrap();
    for j in 0..p {
        for m in 0..k {
            let mut s = 0.0;
            for i in 0..n {
                s += data[(i * p + j) * k + m];
            }
            assert!((t.get(j, m) - (s / n as f64).abs()).abs() < 1e-12);
        }
    }
}

#[test]
fn constant_gradient_gives_its_magnitude() {
    let g = Tensor::new(vec![5, 2, 3], vec![-0.7; 30]).unwrap();
    let t = importance_matrix(&g, None).unwrap();
    assert!(t.values().iter().all(|&v| (v - 0.7).abs() < 1e-15));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn threshold_and_q_match_enumeration((kappa, tau, m) in stats_strategy()) {
        let q = q_values(&kappa, &tau, m).unwrap();
        let qb = q_brute(&kappa, &tau, m);
        for (a, b) in q.iter().zip(&qb) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        for alpha in [0.05, 0.1, 0.2] {
            let t = threshold_multiple(&kappa, &tau, alpha, m).unwrap();
            prop_assert_eq!(t, threshold_brute(&kappa, &tau, alpha, m));
            let by_t = select_multiple(&kappa, &tau, alpha, m).unwrap().selected;
            let by_q: Vec<usize> = (0..q.len()).filter(|&j| q[j] <= alpha).collect();
            prop_assert_eq!(by_t, by_q);
        }
    }

    #[test]
    fn multiple_filter_minimum_rejections((kappa, tau, m) in stats_strategy(), alpha in 0.02f64..0.5) {
        let sel = select_multiple(&kappa, &tau, alpha, m).unwrap().selected;
        let min = (1.0 / (m as f64 * alpha)).ceil() as usize;
        prop_assert!(sel.is_empty() || sel.len() >= min);
    }

    #[test]
    fn single_filter_minimum_rejections(w in prop::collection::vec(-8i8..8, 1..40), alpha in 0.05f64..0.5) {
        let w: Vec<f64> = w.into_iter().map(f64::from).collect();
        let sel = select_single(&w, alpha).unwrap().selected;
        prop_assert!(sel.is_empty() || sel.len() >= (1.0 / alpha).ceil() as usize);
        let q = q_values_single(&w).unwrap();
        let by_q: Vec<usize> = (0..w.len()).filter(|&j| q[j] <= alpha).collect();
        prop_assert_eq!(sel, by_q);
    }

    #[test]
    fn enlarging_alpha_never_shrinks_selection((kappa, tau, m) in stats_strategy(), a in 0.01f64..0.5, b in 0.01f64..0.5) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let small = select_multiple(&kappa, &tau, lo, m).unwrap().selected;
        let large = select_multiple(&kappa, &tau, hi, m).unwrap().selected;
        prop_assert!(small.iter().all(|j| large.contains(j)));
    }

    #[test]
    fn scaling_scores_preserves_selection(t in matrix_strategy(), e in -6i32..6) {
        let c = 2f64.powi(e);
        let scaled = ImportanceMatrix::new(
            t.ids().to_vec(), t.knockoffs(), t.values().iter().map(|v| v * c).collect()).unwrap();
        let a = KnockoffStats::compute(&t).unwrap();
        let b = KnockoffStats::compute(&scaled).unwrap();
        prop_assert_eq!(&a.kappa, &b.kappa);
        prop_assert_eq!(&a.q, &b.q);
        for (x, y) in a.tau.iter().zip(&b.tau) {
            prop_assert_eq!(x * c, *y);
        }
    }

    #[test]
    fn positive_w_implies_original_won(t in matrix_strategy()) {
        let s = KnockoffStats::compute(&t).unwrap();
        for j in 0..t.p() {
            if s.w[j] > 0.0 {
                prop_assert_eq!(s.kappa[j], 0);
            }
            if s.kappa[j] != 0 {
                prop_assert_eq!(s.q[j], 1.0);
            }
            prop_assert!(s.tau[j] >= 0.0);
            prop_assert!((0.0..=1.0).contains(&s.q[j]));
        }
    }
}
