use fedsim_core::cluster::{
    cut_threshold, pairwise_euclidean, ward_dendrogram, ClusterAssignment, DistanceMatrix, UpdateMatrix,
};
use fedsim_core::engine::{meta_lr, weighted_average, FedConfig};
use fedsim_core::model::{Batch, ModelSpec};
use proptest::prelude::*;

fn spec_strategy() -> impl Strategy<Value = ModelSpec> {
    prop_oneof![
        (1usize..5, 2usize..5).prop_map(|(d, c)| ModelSpec::logistic_regression(d, c).unwrap()),
        (1usize..5, 1usize..5, 2usize..5).prop_map(|(d, h, c)| ModelSpec::mlp1(d, h, c).unwrap()),
    ]
}

fn dist_matrix(points: &[Vec<f64>]) -> DistanceMatrix {
    let updates = UpdateMatrix::new(points.to_vec(), (0..points.len()).collect()).unwrap();
    pairwise_euclidean(&updates).unwrap()
}

/// Labels as a set partition, independent of label numbering.
fn partition(labels: &[usize]) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    for c in 0..k {
        groups.push((0..labels.len()).filter(|&i| labels[i] == c).collect());
    }
    groups.sort();
    groups
}

fn points_strategy(max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..=max, 1usize..4).prop_flat_map(|(n, d)| {
        prop::collection::vec(prop::collection::vec(-10.0f64..10.0, d), n)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gradient_matches_central_differences(
        spec in spec_strategy(),
        seed in any::<u64>(),
        rows in 1usize..6,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let features: Vec<f64> = (0..rows * spec.input_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..spec.num_classes)).collect();
        let batch = Batch::new(&features, &labels, spec.input_dim).unwrap();
        let values: Vec<f64> = (0..spec.parameter_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = spec.gradient(&spec.params_from(values.clone()).unwrap(), batch).unwrap();
        let h = 1e-5;
        for (i, &a) in g.values().iter().enumerate() {
            let mut p = values.clone();
            p[i] += h;
            let fp = spec.loss(&spec.params_from(p.clone()).unwrap(), batch).unwrap();
            p[i] -= 2.0 * h;
            let fm = spec.loss(&spec.params_from(p).unwrap(), batch).unwrap();
            let n = (fp - fm) / (2.0 * h);
            prop_assert!((a - n).abs() / a.abs().max(n.abs()).max(1e-6) < 1e-4, "param {i}: {a} vs {n}");
        }
    }

    #[test]
    fn weighted_average_is_bounded_and_scale_invariant(
        rows in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 4), 1..6),
        weights in prop::collection::vec(0.1f64..10.0, 6),
        scale in 0.01f64..100.0,
    ) {
        let spec = ModelSpec::logistic_regression(1, 2).unwrap();
        let params: Vec<_> = rows.iter().map(|r| spec.params_from(r.clone()).unwrap()).collect();
        let w = &weights[..params.len()];
        let avg = weighted_average(&params, w).unwrap();
        for k in 0..4 {
            let lo = rows.iter().map(|r| r[k]).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(avg.values()[k] >= lo - 1e-9 && avg.values()[k] <= hi + 1e-9);
        }
        let scaled: Vec<f64> = w.iter().map(|x| x * scale).collect();
        let again = weighted_average(&params, &scaled).unwrap();
        for (a, b) in avg.values().iter().zip(again.values()) {
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn meta_lr_is_affine(k in 3usize..400, t1 in 0usize..400, t3 in 0usize..400, eta0 in 0.5f64..2.0, frac in 0.01f64..1.0) {
        prop_assume!(t1 < k && t3 < k && (t1 + t3) % 2 == 0);
        let cfg = FedConfig { total_rounds: k, eta0, etak: eta0 * frac, ..FedConfig::default() };
        let t2 = (t1 + t3) / 2;
        let lhs = meta_lr(t1, &cfg).unwrap() + meta_lr(t3, &cfg).unwrap();
        let rhs = 2.0 * meta_lr(t2, &cfg).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn ward_heights_are_monotone(points in points_strategy(12)) {
        let dend = ward_dendrogram(&dist_matrix(&points)).unwrap();
        let h = dend.heights();
        prop_assert_eq!(h.len(), points.len() - 1);
        for pair in h.windows(2) {
            prop_assert!(pair[1] >= pair[0] - 1e-9 * pair[0].abs().max(1.0), "{:?}", h);
        }
    }

    #[test]
    fn clustering_is_permutation_equivariant(
        points in points_strategy(10),
        threshold in 0.5f64..20.0,
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let n = points.len();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| points[i].clone()).collect();
        let a = cut_threshold(&ward_dendrogram(&dist_matrix(&points)).unwrap(), threshold);
        let b = cut_threshold(&ward_dendrogram(&dist_matrix(&permuted)).unwrap(), threshold);
        // position p of the permuted run is point perm[p]
        let mut back = vec![0; n];
        for (p, &i) in perm.iter().enumerate() {
            back[i] = b.labels[p];
        }
        let back = ClusterAssignment::canonical(&back, threshold);
        prop_assert_eq!(partition(&a.labels), partition(&back.labels));
    }
}

/// Greedy merges by minimum increase of the within-cluster sum of squares.
fn sse_merges(points: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
    let sse = |c: &[usize]| -> f64 {
        let d = points[0].len();
        let mean: Vec<f64> = (0..d)
            .map(|k| c.iter().map(|&i| points[i][k]).sum::<f64>() / c.len() as f64)
            .collect();
        c.iter()
            .map(|&i| points[i].iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)).sum::<f64>())
            .sum()
    };
    let mut out = Vec::new();
    while clusters.len() > 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut joined = clusters[a].clone();
                joined.extend(&clusters[b]);
                let inc = sse(&joined) - sse(&clusters[a]) - sse(&clusters[b]);
                if inc < best.0 {
                    best = (inc, a, b);
                }
            }
        }
        let moved = clusters.remove(best.2);
        clusters[best.1].extend(moved);
        clusters[best.1].sort_unstable();
        out.push(clusters[best.1].clone());
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ward_matches_exhaustive_sse_oracle(points in points_strategy(6)) {
        let dend = ward_dendrogram(&dist_matrix(&points)).unwrap();
        prop_assert_eq!(dend.merge_members(), sse_merges(&points));
    }
}

#[test]
fn two_separated_blobs_are_recovered() {
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for trial in 0..100 {
        let n_a = rng.random_range(2..8);
        let n_b = rng.random_range(2..8);
        let d = rng.random_range(1..5);
        let mut points = Vec::new();
        let mut truth = Vec::new();
        for (blob, n) in [(0usize, n_a), (1, n_b)] {
            for _ in 0..n {
                let p: Vec<f64> = (0..d)
                    .map(|k| {
                        let center = if blob == 1 && k == 0 { 100.0 } else { 0.0 };
                        center + rng.sample::<f64, _>(StandardNormal)
                    })
                    .collect();
                points.push(p);
                truth.push(blob);
            }
        }
        // shuffle so the blobs interleave
        let mut order: Vec<usize> = (0..points.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let points: Vec<Vec<f64>> = order.iter().map(|&i| points[i].clone()).collect();
        let truth: Vec<usize> = order.iter().map(|&i| truth[i]).collect();

        let dend = ward_dendrogram(&dist_matrix(&points)).unwrap();
        let h = dend.heights();
        let (intra, cross) = (h[h.len() - 2], h[h.len() - 1]);
        assert!(cross > intra, "trial {trial}");
        let a = cut_threshold(&dend, (intra + cross) / 2.0);
        assert_eq!(a.num_clusters, 2, "trial {trial}");
        assert_eq!(partition(&a.labels), partition(&truth), "trial {trial}");
    }
}
