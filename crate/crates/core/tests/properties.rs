use nalgebra::DMatrix;
use proptest::prelude::*;

use sgdmc::forecast::propagate;
use sgdmc::kernel::{assemble, barycenter_on_grid, GibbsKernel, PartialTransitionMatrix, SinkhornConfig};
use sgdmc::provider::{hierarchy_pdf, query_bound, OracleProvider};
use sgdmc::quantizer::{decode, encode, parse, serialize};
use sgdmc::scaling::{stationary, tv_distance, TwoStateChain};
use sgdmc::{AffineMap, Band, Precision, StateDistribution, StateId};

fn precision() -> impl Strategy<Value = Precision> {
    (1u8..=3).prop_map(|k| Precision::new(k).unwrap())
}

fn normalize(w: Vec<f64>) -> Vec<f64> {
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..1.0, n).prop_map(normalize)
}

/// Sparse-ish random rows, so some digit prefixes carry no mass.
fn sparse_row(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![3 => Just(0.0), 1 => 0.01f64..1.0], n).prop_map(move |mut w| {
        if w.iter().all(|&x| x == 0.0) {
            w[n / 2] = 1.0;
        }
        normalize(w)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decode_then_encode_is_identity(k in precision(), frac in 0.0f64..1.0) {
        let band = Band::reachable(k, 1.5, 8.5).unwrap();
        let idx = *band.indices().start() + ((band.len() - 1) as f64 * frac).round() as u32;
        let s = StateId::new(idx, k).unwrap();
        prop_assert_eq!(encode(decode(s), k).unwrap(), s);
    }

    #[test]
    fn encode_error_is_half_a_bin(k in precision(), x in 1.5f64..8.5) {
        let s = encode(x, k).unwrap();
        prop_assert!(band_contains(k, s.index()));
        prop_assert!((decode(s) - x).abs() <= 0.5 * k.bin_width() + 1e-12);
    }

    #[test]
    fn encode_is_monotone(k in precision(), a in 1.5f64..8.5, b in 1.5f64..8.5) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(encode(lo, k).unwrap().index() <= encode(hi, k).unwrap().index());
    }

    #[test]
    fn affine_map_inverts(lo in -50.0f64..50.0, width in 1e-3f64..100.0, t in 0.0f64..1.0) {
        let map = AffineMap::fit_default(&[lo, lo + width]).unwrap();
        let x = lo + t * width;
        let y = map.apply(x);
        prop_assert!((1.5 - 1e-9..=8.5 + 1e-9).contains(&y));
        prop_assert!((map.invert(y) - x).abs() <= 1e-9 * (1.0 + x.abs()));
    }

    #[test]
    fn serialize_parse_round_trip(k in precision(), raw in prop::collection::vec(0u32..1000, 1..50)) {
        let states: Vec<StateId> = raw
            .iter()
            .map(|&i| StateId::new(i % k.num_states() as u32, k).unwrap())
            .collect();
        let text = serialize(&states);
        prop_assert_eq!(text.len(), states.len() * (k.digits() + 1) - 1);
        prop_assert_eq!(parse(&text, k).unwrap(), states);
    }
}

fn band_contains(k: Precision, index: u32) -> bool {
    Band::reachable(k, 1.5, 8.5).unwrap().contains(index)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hierarchy_conserves_mass_and_improves_with_budget(
        row in sparse_row(100),
        from in 15u32..=85,
    ) {
        let k = Precision::new(2).unwrap();
        let mut rows = vec![vec![0.0; 100]; 100];
        rows[from as usize] = row.clone();
        let oracle = OracleProvider::new(rows, k).unwrap();
        let context = serialize(&[StateId::new(from, k).unwrap()]) + ",";
        let mut last_tv = f64::INFINITY;
        for budget in 1..=10 {
            let pdf = hierarchy_pdf(&oracle, &context, k, budget).unwrap();
            let total: f64 = pdf.dist.probs().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(pdf.dist.probs().iter().all(|&p| p >= 0.0));
            prop_assert!(pdf.query_count <= query_bound(k, budget));
            let tv = tv_distance(pdf.dist.probs(), &row).unwrap();
            prop_assert!(tv <= last_tv + 1e-12, "budget {budget}: {tv} > {last_tv}");
            last_tv = tv;
        }
        prop_assert!(last_tv < 1e-12);
    }

    #[test]
    fn barycenter_is_symmetric_and_normalized(a in simplex(24), b in simplex(24), w in 0.05f64..0.95) {
        let points: Vec<f64> = (0..24).map(|i| i as f64 / 23.0).collect();
        let kernel = GibbsKernel::new(&points, 0.01);
        let cfg = SinkhornConfig { epsilon: 0.01, max_iters: 500, tol: 1e-9 };
        let ab = barycenter_on_grid(&kernel, &[&a, &b], &[w, 1.0 - w], &cfg).unwrap();
        let ba = barycenter_on_grid(&kernel, &[&b, &a], &[1.0 - w, w], &cfg).unwrap();
        prop_assert!((ab.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(ab.probs.iter().all(|&p| p >= 0.0));
        for (x, y) in ab.probs.iter().zip(&ba.probs) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn propagation_stays_on_the_simplex(
        rows_a in prop::collection::vec(simplex(71), 71),
        rows_b in prop::collection::vec(simplex(71), 71),
        start_a in simplex(71),
        start_b in simplex(71),
    ) {
        let k = Precision::new(2).unwrap();
        let band = Band::reachable(k, 1.5, 8.5).unwrap();
        let blocks = vec![
            PartialTransitionMatrix::from_rows(k, band, &rows_a).unwrap(),
            PartialTransitionMatrix::from_rows(k, band, &rows_b).unwrap(),
        ];
        let q = assemble(blocks, None).unwrap();
        let on_grid = |band_probs: Vec<f64>| {
            let mut full = vec![0.0; 100];
            full[15..=85].copy_from_slice(&band_probs);
            StateDistribution::new(full, k).unwrap()
        };
        let mut dists = vec![on_grid(start_a), on_grid(start_b)];
        for _ in 0..5 {
            dists = propagate(&q, &dists).unwrap();
            for d in &dists {
                prop_assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(d.probs().iter().all(|&p| p >= 0.0));
            }
        }
    }
}

proptest! {
    #[test]
    fn stationary_law_matches_eigenvector(p in 0.01f64..0.99, q in 0.01f64..0.99) {
        let chain = TwoStateChain::new(p, q).unwrap();
        let pi = stationary(&chain).unwrap();
        let m = chain.matrix();
        let stepped = chain.step(pi);
        prop_assert!((stepped[0] - pi[0]).abs() < 1e-12 && (stepped[1] - pi[1]).abs() < 1e-12);

        // spectrum of P from a general eigensolver
        let pt = DMatrix::from_row_slice(2, 2, &[m[0][0], m[1][0], m[0][1], m[1][1]]);
        let mut lambdas: Vec<f64> = pt.complex_eigenvalues().iter().map(|c| c.re).collect();
        lambdas.sort_by(|a, b| a.partial_cmp(b).unwrap());
        prop_assert!((lambdas[1] - 1.0).abs() < 1e-9);
        prop_assert!((lambdas[0] - chain.second_eigenvalue()).abs() < 1e-9);
        // (Pᵀ − I)π = 0 together with π₀ + π₁ = 1, solved by least squares
        let a = DMatrix::from_row_slice(3, 2, &[m[0][0] - 1.0, m[1][0], m[0][1], m[1][1] - 1.0, 1.0, 1.0]);
        let rhs = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
        let solved = a.svd(true, true).solve(&rhs, 1e-14).unwrap();
        prop_assert!((solved[0] - pi[0]).abs() < 1e-9 && (solved[1] - pi[1]).abs() < 1e-9);

        // power iteration from a point mass
        let mut dist = [1.0, 0.0];
        for _ in 0..20_000 {
            dist = chain.step(dist);
        }
        prop_assert!((dist[0] - pi[0]).abs() < 1e-9);
    }
}
