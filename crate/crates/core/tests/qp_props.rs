use ndarray::{Array1, Array2};
use qpcert::graphdata::{csbm_sample, split, CsbmParams};
use qpcert::ntk::{ntk, Architecture};
use qpcert::qp::{
    kkt_tolerance, solve_dual, solve_dual_from, train, train_binary, train_one_vs_all, DualOptions, QpError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_psd(rng: &mut ChaCha8Rng, m: usize, rank: usize) -> Array2<f64> {
    let f = Array2::from_shape_fn((m, rank), |_| rng.random_range(-1.0..1.0));
    f.dot(&f.t())
}

fn signs(rng: &mut ChaCha8Rng, m: usize) -> Array1<f64> {
    (0..m).map(|i| if i % 2 == 0 || rng.random_bool(0.3) { 1.0 } else { -1.0 }).collect()
}

/// Largest violation of stationarity with `u, v >= 0` and complementary
/// slackness reconstructed from the gradient.
fn kkt_violation(q: &Array2<f64>, y: &Array1<f64>, alpha: &Array1<f64>, c: f64) -> f64 {
    let ya = alpha * y;
    let g = (q.dot(&ya) * y) - 1.0;
    let mut worst = 0.0f64;
    for i in 0..y.len() {
        let tol = 1e-12 * c;
        let v = if alpha[i] <= tol {
            (-g[i]).max(0.0) // need u_i = g_i >= 0
        } else if alpha[i] >= c - tol {
            g[i].max(0.0) // need v_i = -g_i >= 0
        } else {
            g[i].abs()
        };
        worst = worst.max(v);
    }
    worst
}

#[test]
fn kkt_conditions_hold_at_the_returned_dual() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tol = 1e-8;
    for _ in 0..60 {
        let m = rng.random_range(1..15);
        let rank = rng.random_range(1..=m);
        let q = random_psd(&mut rng, m, rank);
        let y = signs(&mut rng, m);
        let c = [0.01, 0.3, 1.0, 20.0][rng.random_range(0..4)];
        let sol = solve_dual(&q, &y, c, DualOptions::with_tol(tol)).unwrap();
        assert!(sol.alpha.iter().all(|&a| (0.0..=c).contains(&a)));
        let tol = kkt_tolerance(tol, c, &q);
        assert!(sol.kkt_residual <= tol);
        assert!(kkt_violation(&q, &y, &sol.alpha, c) <= 10.0 * tol);
        assert!(sol.objective <= 0.0);
    }
}

#[test]
fn duplicate_points_give_start_independent_margins() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let base = Array2::from_shape_fn((3, 2), |_| rng.random_range(-1.0..1.0));
    // rows 3..6 duplicate rows 0..3, so any split of alpha mass between copies is optimal
    let x = ndarray::concatenate![ndarray::Axis(0), base, base];
    let q = x.dot(&x.t()) + 1.0;
    let y = Array1::from(vec![1.0, -1.0, 1.0, 1.0, -1.0, 1.0]);
    let test = Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));
    let q_test = test.dot(&x.t()) + 1.0;
    let margins = |alpha: &Array1<f64>| q_test.dot(&(alpha * &y));
    let reference = margins(&solve_dual(&q, &y, 5.0, DualOptions::default()).unwrap().alpha);
    for _ in 0..10 {
        let start: Array1<f64> = (0..6).map(|_| rng.random_range(0.0..5.0)).collect();
        let sol = solve_dual_from(&q, &y, 5.0, DualOptions::default(), Some(&start)).unwrap();
        let got = margins(&sol.alpha);
        for (a, b) in got.iter().zip(reference.iter()) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }
}

#[test]
fn three_clusters_match_nearest_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let centers = [[4.0, 0.0], [-2.0, 3.5], [-2.0, -3.5]];
    let sample = |rng: &mut ChaCha8Rng, k: usize| -> [f64; 2] {
        [centers[k][0] + rng.random_range(-0.5..0.5), centers[k][1] + rng.random_range(-0.5..0.5)]
    };
    let mut train_x = Vec::new();
    let mut labels = Vec::new();
    for k in 0..3 {
        for _ in 0..6 {
            train_x.extend_from_slice(&sample(&mut rng, k));
            labels.push(k as i64);
        }
    }
    let mut test_x = Vec::new();
    for k in 0..3 {
        for _ in 0..10 {
            test_x.extend_from_slice(&sample(&mut rng, k));
        }
    }
    let xa = Array2::from_shape_vec((18, 2), train_x).unwrap();
    let xt = Array2::from_shape_vec((30, 2), test_x).unwrap();
    let q = xa.dot(&xa.t()) + 1.0;
    let q_test = xt.dot(&xa.t()) + 1.0;
    let model = train_one_vs_all(&q, &labels, 3, 1.0, DualOptions::default()).unwrap();
    let means: Vec<[f64; 2]> = (0..3)
        .map(|k| {
            let rows: Vec<usize> = (0..18).filter(|&i| labels[i] == k).collect();
            let n = rows.len() as f64;
            [
                rows.iter().map(|&i| xa[[i, 0]]).sum::<f64>() / n,
                rows.iter().map(|&i| xa[[i, 1]]).sum::<f64>() / n,
            ]
        })
        .collect();
    for (t, p) in model.predict_rows(q_test.view()).unwrap().iter().enumerate() {
        let nearest = (0..3)
            .min_by(|&a, &b| {
                let da = (xt[[t, 0]] - means[a][0]).powi(2) + (xt[[t, 1]] - means[a][1]).powi(2);
                let db = (xt[[t, 0]] - means[b][0]).powi(2) + (xt[[t, 1]] - means[b][1]).powi(2);
                da.total_cmp(&db)
            })
            .unwrap();
        assert_eq!(p.class, nearest, "test point {t}");
        assert!(!p.tie);
    }
}

#[test]
fn two_class_one_vs_all_scores_are_negated() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let q = random_psd(&mut rng, 10, 4);
    let labels: Vec<i64> = (0..10).map(|i| (i % 2) as i64).collect();
    let model = train_one_vs_all(&q, &labels, 2, 0.5, DualOptions::default()).unwrap();
    let rows = random_psd(&mut rng, 10, 3);
    for r in rows.rows() {
        let p = model.predict(r).unwrap();
        assert!((p.scores[0] + p.scores[1]).abs() <= 1e-9);
    }
}

#[test]
fn binary_and_two_class_one_vs_all_agree_on_csbm() {
    let g = csbm_sample::<f64>(&CsbmParams { n: 80, seed: 7, ..CsbmParams::default() }).unwrap();
    let (g, _) = split(&g, 20, 7).unwrap();
    let arch = Architecture::mlp(1);
    let s = arch.propagation::<f64>(g.adjacency()).unwrap();
    let q = ntk(&arch, &s, g.features()).unwrap().q;
    let train_idx = g.labeled_indices();
    let labels: Vec<i64> = train_idx.iter().map(|&i| g.labels()[i]).collect();
    let block = q.select(ndarray::Axis(0), &train_idx).select(ndarray::Axis(1), &train_idx);
    let binary = train(&block, &labels, 2, 0.01, DualOptions::default()).unwrap();
    let ova = train_one_vs_all(&block, &labels, 2, 0.01, DualOptions::default()).unwrap();
    assert!(binary.binary && !ova.binary);
    let rows = q.select(ndarray::Axis(1), &train_idx);
    let a = binary.predict_rows(rows.view()).unwrap();
    let b = ova.predict_rows(rows.view()).unwrap();
    for (pa, pb) in a.iter().zip(&b) {
        assert_eq!(pa.class, pb.class);
    }
}

#[test]
fn missing_class_is_degenerate() {
    let q = Array2::<f64>::eye(3);
    assert!(matches!(
        train_binary(&q, &[1, 1, 1], 1.0, DualOptions::default()),
        Err(QpError::DegenerateClass { class: 0 })
    ));
    assert!(matches!(
        train_one_vs_all(&q, &[0, 2, 0], 3, 1.0, DualOptions::default()),
        Err(QpError::DegenerateClass { class: 1 })
    ));
}

#[test]
fn single_precision_solve() {
    let q = ndarray::array![[2.0f32, 0.5], [0.5, 1.0]];
    let y = ndarray::array![1.0f32, -1.0];
    let sol = solve_dual(&q, &y, 10.0, DualOptions::default()).unwrap();
    let d = solve_dual(&q.mapv(f64::from), &y.mapv(f64::from), 10.0, DualOptions::default()).unwrap();
    for (a, b) in sol.alpha.iter().zip(d.alpha.iter()) {
        assert!((f64::from(*a) - b).abs() < 1e-4);
    }
}
