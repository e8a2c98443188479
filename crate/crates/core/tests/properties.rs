use dgm::aggregation::{fit_codebook, vlad_encode};
use dgm::descriptors::{DescriptorMatrix, Family};
use dgm::diagnostics::{persistence0d, soft_voronoi_stats, spectral_compressibility};
use dgm::evaluation::{average_precision, cosine, rank_by_scores, retrieve_vectors};
use dgm::fields::{field_stack, heat_response, proxy_transform, FieldParams};
use dgm::fixtures::{icosphere, make_fixture, FixtureKind, FixtureSpec};
use dgm::mesh::{preprocess, EdgeGraph, Mesh};
use dgm::operators::{assemble, partial_eigs};
use dgm::pipeline::{extract, DescriptorConfig};
use dgm::seeding::{align_descriptors_after_permutation, SeedMode, SeedSet};
use proptest::prelude::*;
use proptest::sample::subsequence;

fn sphere() -> Mesh {
    preprocess(&icosphere(2)).unwrap()
}

fn bumpy(seed: u64) -> Mesh {
    let mut spec = FixtureSpec::new(FixtureKind::BumpySphere, 2);
    spec.deformation_seed = seed;
    make_fixture(&spec).unwrap().mesh
}

fn shuffled(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

fn matrix(rows: &[Vec<f64>]) -> DescriptorMatrix {
    let names = (0..rows[0].len()).map(|i| format!("c{i}")).collect();
    DescriptorMatrix::from_rows(rows, names, Family::Dgm, serde_json::Value::Null).unwrap()
}

fn brute_map(ids: &[String], labels: &[String], scores: &[Vec<f64>]) -> Option<f64> {
    let n = ids.len();
    let mut aps = Vec::new();
    for q in 0..n {
        let before = |k: usize, j: usize| scores[q][k] > scores[q][j] || (scores[q][k] == scores[q][j] && ids[k] < ids[j]);
        let mut ranks: Vec<usize> = (0..n)
            .filter(|&j| j != q && labels[j] == labels[q])
            .map(|j| 1 + (0..n).filter(|&k| k != q && k != j && before(k, j)).count())
            .collect();
        if ranks.is_empty() {
            continue;
        }
        ranks.sort_unstable();
        aps.push(ranks.iter().enumerate().map(|(i, &r)| (i + 1) as f64 / r as f64).sum::<f64>() / ranks.len() as f64);
    }
    (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn heat_response_commutes_with_relabeling(perm in shuffled(162), seed in 0usize..162, t in 0.005f64..0.2) {
        let mesh = sphere();
        let copy = mesh.permuted(&perm);
        let a = heat_response(&assemble(&mesh).unwrap(), seed, t, 1).unwrap();
        let b = heat_response(&assemble(&copy).unwrap(), perm[seed], t, 1).unwrap();
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (i, &p) in perm.iter().enumerate() {
            prop_assert!((a[i] - b[p]).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn dgm_is_permutation_equivariant(perm in shuffled(162), deform in 0u64..50, geodesic in any::<bool>()) {
        let mesh = bumpy(deform);
        let copy = mesh.permuted(&perm);
        let mut cfg = DescriptorConfig::default();
        cfg.dgm.k = 8;
        cfg.dgm.seed_mode = if geodesic { SeedMode::GeodesicDeterministic } else { SeedMode::EuclideanDeterministic };
        let a = extract(&mesh, Family::Dgm, &cfg).unwrap();
        let b = extract(&copy, Family::Dgm, &cfg).unwrap();
        let r = align_descriptors_after_permutation(&a, &b, &perm).unwrap();
        prop_assert!(r.relative_error <= 1e-8, "{:?}", r);
        prop_assert!(r.global_cosine >= 1.0 - 1e-9);
    }

    #[test]
    fn random_seed_moments_are_seed_order_free(picks in subsequence((0..162).collect::<Vec<_>>(), 4..12), rot in 0usize..12) {
        let mesh = sphere();
        let ops = assemble(&mesh).unwrap();
        let graph = EdgeGraph::from_mesh(&mesh);
        let params = FieldParams { scales: vec![0.03], ..Default::default() };
        let set = |idx: Vec<usize>| SeedSet { indices: idx, mode: SeedMode::EuclideanRandom, rng_seed: Some(1) };
        let mut rotated = picks.clone();
        rotated.rotate_left(rot % picks.len());
        let a = dgm::descriptors::dgm_local(&field_stack(&ops, &graph, &set(picks), &params).unwrap(), dgm::descriptors::Normalization::Raw).unwrap();
        let b = dgm::descriptors::dgm_local(&field_stack(&ops, &graph, &set(rotated), &params).unwrap(), dgm::descriptors::Normalization::Raw).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn proxy_ignores_positive_scale(u in prop::collection::vec(-0.1f64..1.0, 5..60), c in 1e-3f64..1e3) {
        prop_assume!(u.iter().any(|v| *v > 1e-3));
        let (a, _) = proxy_transform(&u, 95.0).unwrap();
        let scaled: Vec<f64> = u.iter().map(|v| v * c).collect();
        let (b, _) = proxy_transform(&scaled, 95.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0), "{} vs {}", x, y);
        }
        prop_assert!(a.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn map_matches_definitional_ranking(
        coords in prop::collection::vec((-2i32..3, -2i32..3), 3..14),
        classes in prop::collection::vec(0u8..3, 14),
        order in shuffled(14),
    ) {
        let n = coords.len();
        let ids: Vec<String> = order[..n].iter().map(|i| format!("s{i:02}")).collect();
        let labels: Vec<String> = classes[..n].iter().map(|c| c.to_string()).collect();
        let vecs: Vec<Vec<f64>> = coords.iter().map(|&(a, b)| if (a, b) == (0, 0) { vec![1.0, 0.0] } else { vec![a as f64, b as f64] }).collect();
        let scores: Vec<Vec<f64>> = vecs.iter().map(|a| vecs.iter().map(|b| cosine(a, b)).collect()).collect();
        match (retrieve_vectors(&ids, &labels, &vecs), brute_map(&ids, &labels, &scores)) {
            (Ok(r), Some(m)) => {
                prop_assert_eq!(r.map, m);
                prop_assert!((0.0..=1.0).contains(&r.map));
            }
            (Err(_), None) => {}
            (r, m) => prop_assert!(false, "{:?} vs {:?}", r.map(|r| r.map), m),
        }
        let same = rank_by_scores(&ids, &labels, &scores);
        prop_assert_eq!(same.ok().map(|r| r.map), retrieve_vectors(&ids, &labels, &vecs).ok().map(|r| r.map));
    }

    #[test]
    fn average_precision_is_a_fraction(rel in prop::collection::vec(any::<bool>(), 1..40)) {
        prop_assume!(rel.iter().any(|r| *r));
        let ap = average_precision(&rel);
        prop_assert!(ap > 0.0 && ap <= 1.0);
        if rel.iter().take_while(|r| **r).count() == rel.iter().filter(|r| **r).count() {
            prop_assert_eq!(ap, 1.0);
        }
    }

    #[test]
    fn vlad_ignores_row_order(
        train in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 24..60),
        test in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 5..40),
        order in shuffled(40),
    ) {
        let cb = fit_codebook(&train, 4, 7, "prop", "all").unwrap();
        let a = vlad_encode(&matrix(&test), &cb).unwrap().vector;
        let permuted: Vec<Vec<f64>> = order.iter().filter(|&&i| i < test.len()).map(|&i| test[i].clone()).collect();
        let b = vlad_encode(&matrix(&permuted), &cb).unwrap().vector;
        // Signed sqrt magnifies rounding in near-zero residual sums.
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-6, "{} vs {}", x, y);
        }
        let trace = &cb.fit_meta.objective_trace;
        prop_assert!(trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }

    #[test]
    fn persistence_matches_filtration_sum(
        parents in prop::collection::vec(any::<prop::sample::Index>(), 1..30),
        extra in prop::collection::vec((any::<prop::sample::Index>(), any::<prop::sample::Index>()), 0..20),
        levels in prop::collection::vec(0u8..6, 31),
    ) {
        let n = parents.len() + 1;
        let mut edges: Vec<(usize, usize, f64)> = parents.iter().enumerate().map(|(i, p)| (p.index(i + 1), i + 1, 1.0)).collect();
        edges.extend(extra.iter().map(|(a, b)| (a.index(n), b.index(n), 1.0)).filter(|e| e.0 != e.1));
        let field: Vec<f64> = levels[..n].iter().map(|&l| l as f64 * 0.5).collect();
        let got = persistence0d(&field, &EdgeGraph::from_edges(n, &edges)).unwrap();
        let mut vals = field.clone();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        let mut want = 0.0;
        for w in vals.windows(2) {
            let below: Vec<(usize, usize, f64)> = edges.iter().copied().filter(|e| field[e.0] <= w[0] && field[e.1] <= w[0]).collect();
            let above = field.iter().filter(|v| **v > w[0]).count();
            let comps = EdgeGraph::from_edges(n, &below).component_count() - above;
            want += (comps as f64 - 1.0) * (w[1] - w[0]);
        }
        prop_assert!((got - want).abs() <= 1e-12, "{} vs {}", got, want);
    }

    #[test]
    fn soft_voronoi_is_shift_invariant(shift in -5.0f64..5.0, tau in 0.005f64..0.5) {
        let mesh = preprocess(&icosphere(1)).unwrap();
        let ops = assemble(&mesh).unwrap();
        let graph = EdgeGraph::from_mesh(&mesh);
        let seeds = SeedSet { indices: vec![0, 5, 9, 30], mode: SeedMode::EuclideanRandom, rng_seed: Some(0) };
        let stack = field_stack(&ops, &graph, &seeds, &FieldParams::default()).unwrap();
        let mut moved = stack.clone();
        moved.phi.iter_mut().flatten().flatten().for_each(|v| *v += shift);
        let a = soft_voronoi_stats(&stack, tau).unwrap();
        let b = soft_voronoi_stats(&moved, tau).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.entropy - y.entropy).abs() <= 1e-9 && (x.margin - y.margin).abs() <= 1e-9);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&x.entropy));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn compressibility_is_monotone_and_bounded(cols in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 162), 1..4)) {
        let mesh = sphere();
        let ops = assemble(&mesh).unwrap();
        let basis = partial_eigs(&ops, 40).unwrap();
        let rows: Vec<Vec<f64>> = (0..162).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
        let ks: Vec<usize> = (1..=40).step_by(3).collect();
        let r = spectral_compressibility(&matrix(&rows), &basis, &ops.mass, &ks).unwrap();
        prop_assert!(r.windows(2).all(|w| w[1].1 >= w[0].1 - 1e-12));
        prop_assert!(r.iter().all(|(_, v)| *v >= -1e-12 && *v <= 1.0 + 1e-9));
    }
}
