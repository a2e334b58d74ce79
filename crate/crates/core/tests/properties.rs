mod common;

use std::collections::BTreeSet;

use mnemonics::diffcore::{hessian_vector_product, DenseTensor, FlatParams, UnrollSpec};
use mnemonics::exemplar::{exemplar_hypergradient, partition_exemplars, select_herding, ExemplarSet, Origin};
use mnemonics::model::{
    apply_transfer, classification_loss_from_logits, combined_loss, distillation_loss_from_logits, mean_entropy,
    tempered_softmax, LossWeights, ModelObjective, TransferParams,
};
use mnemonics::protocol::{enforce_memory_budget, MemoryBudget};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{herding_oracle, random_labels, random_matrix, random_model};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hvp_is_linear_in_direction(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(&mut rng, &[3, 5, 3]);
        let x = random_matrix(&mut rng, 7, 3, 2.0);
        let y = random_labels(&mut rng, 7, 3);
        let objective = ModelObjective::classification(model.activation(), &x, &y);
        let theta = model.to_flat();
        let dir = |rng: &mut ChaCha8Rng| {
            FlatParams::with_layout_of(&theta, (0..theta.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let (v1, v2) = (dir(&mut rng), dir(&mut rng));
        let mut combo = v1.scaled(a);
        combo.axpy(b, &v2);
        let h1 = hessian_vector_product(&objective, &theta, &v1).unwrap();
        let h2 = hessian_vector_product(&objective, &theta, &v2).unwrap();
        let hc = hessian_vector_product(&objective, &theta, &combo).unwrap();
        for i in 0..theta.len() {
            let expect = a * h1.values()[i] + b * h2.values()[i];
            prop_assert!((hc.values()[i] - expect).abs() <= 1e-10, "coordinate {i}: {} vs {expect}", hc.values()[i]);
        }
    }

    #[test]
    fn softmax_normalised_and_shift_invariant(
        logits in prop::collection::vec(-20.0f64..20.0, 1..8),
        shift in -50.0f64..50.0,
        temperature in 1.0f64..5.0,
    ) {
        let p = tempered_softmax(&logits, temperature);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let shifted: Vec<f64> = logits.iter().map(|z| z + shift).collect();
        let q = tempered_softmax(&shifted, temperature);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn classification_loss_non_negative(seed in any::<u64>(), k in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = random_matrix(&mut rng, 5, k, 10.0);
        let y = random_labels(&mut rng, 5, k);
        prop_assert!(classification_loss_from_logits(&z, &y).unwrap() >= 0.0);
    }

    #[test]
    fn uniform_logits_cost_ln_k(k in 2usize..20, c in -5.0f64..5.0) {
        let z = DenseTensor::filled(&[3, k], c);
        let loss = classification_loss_from_logits(&z, &[0, k - 1, k / 2]).unwrap();
        prop_assert!((loss - (k as f64).ln()).abs() <= 1e-12);
    }

    #[test]
    fn self_distillation_exceeds_entropy_by_nothing(seed in any::<u64>(), k in 1usize..5, temperature in 1.0f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = random_matrix(&mut rng, 6, k + 2, 4.0);
        let ld = distillation_loss_from_logits(&z, &z, temperature, k).unwrap();
        let h = mean_entropy(&z, k, temperature).unwrap();
        let gap = ld - h;
        prop_assert!((-1e-12..=1e-12).contains(&gap), "gap {gap}");
    }

    #[test]
    fn combined_loss_affine_in_lambda(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let previous = random_model(&mut rng, &[2, 4, 2]);
        let current = random_model(&mut rng, &[2, 4, 3]);
        let x = random_matrix(&mut rng, 6, 2, 2.0);
        let y = random_labels(&mut rng, 6, 3);
        let at = |lambda| combined_loss(&current, &previous, &x, &y, LossWeights::new(lambda, 2.0).unwrap(), 2).unwrap();
        let (lc, ld) = (at(1.0), at(0.0));
        for lambda in [0.0, 0.25, 0.5, 1.0] {
            prop_assert!((at(lambda) - (lambda * lc + (1.0 - lambda) * ld)).abs() <= 1e-12);
        }
    }

    #[test]
    fn transfer_forward_matches_materialised(seed in any::<u64>(), hidden in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = random_model(&mut rng, &[3, hidden, 4]);
        let mut t = TransferParams::identity(&base);
        for (scale, shift) in &mut t.layers {
            scale.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
            shift.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
        }
        let x = random_matrix(&mut rng, 5, 3, 3.0);
        let direct = base.forward(Some(&t), &x).unwrap();
        let merged = apply_transfer(&base, &t).unwrap().forward(None, &x).unwrap();
        for (a, b) in direct.data().iter().zip(merged.data()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        let ident = base.forward(Some(&TransferParams::identity(&base)), &x).unwrap();
        prop_assert_eq!(ident, base.forward(None, &x).unwrap());
    }

    #[test]
    fn growing_head_keeps_old_logits(seed in any::<u64>(), extra in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(&mut rng, &[2, 5, 3]);
        let grown = model.grow_head(extra, 0.1, &mut rng);
        let x = random_matrix(&mut rng, 4, 2, 3.0);
        let old = model.forward(None, &x).unwrap();
        let new = grown.forward(None, &x).unwrap();
        prop_assert_eq!(new.cols(), 3 + extra);
        prop_assert_eq!(new.take_cols(3).unwrap(), old);
    }

    #[test]
    fn herding_matches_exhaustive_greedy(seed in any::<u64>(), n in 1usize..=12, d in 1usize..4, m_frac in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let m = 1 + ((n - 1) as f64 * m_frac) as usize;
        let features = DenseTensor::from_rows(&rows).unwrap();
        prop_assert_eq!(select_herding(&features, m).unwrap(), herding_oracle(&rows, m));
    }

    #[test]
    fn partition_is_a_true_partition(seed in any::<u64>(), counts in prop::collection::vec(0usize..9, 1..5), splits in 2usize..4) {
        let mut set = ExemplarSet::new(1);
        for (c, &n) in counts.iter().enumerate() {
            if n > 0 {
                set.insert(c, DenseTensor::matrix(n, 1, vec![0.0; n]).unwrap(), Origin::Mnemonics).unwrap();
            }
        }
        let parts = partition_exemplars(&set, splits, seed);
        prop_assert_eq!(parts.len(), splits);
        for (c, e) in set.iter() {
            let n = e.current.rows();
            if n < splits {
                prop_assert!(parts.iter().all(|p| !p.contains_key(&c)));
                continue;
            }
            let mut seen = BTreeSet::new();
            let mut total = 0;
            for p in &parts {
                let rows = &p[&c];
                prop_assert!(!rows.is_empty());
                total += rows.len();
                seen.extend(rows.iter().copied());
            }
            prop_assert_eq!(total, n, "subsets overlap");
            prop_assert_eq!(seen, (0..n).collect::<BTreeSet<_>>());
        }
    }

    #[test]
    fn budget_is_exact(seed in any::<u64>(), counts in prop::collection::vec(1usize..30, 1..8), m in 1usize..10, capacity in 8usize..60) {
        let mut set = ExemplarSet::new(1);
        for (c, &n) in counts.iter().enumerate() {
            set.insert(c, DenseTensor::matrix(n, 1, (0..n).map(|v| v as f64).collect()).unwrap(), Origin::Herding).unwrap();
        }
        let per = enforce_memory_budget(&set, MemoryBudget::PerClass { m }, seed).unwrap();
        for (c, &n) in counts.iter().enumerate() {
            prop_assert_eq!(per.count(c), n.min(m));
        }
        // Balanced input, as the runner produces: every class holds at least the quota.
        let mut even = ExemplarSet::new(1);
        for c in 0..counts.len() {
            even.insert(c, DenseTensor::matrix(30, 1, vec![c as f64; 30]).unwrap(), Origin::Random).unwrap();
        }
        if capacity >= counts.len() {
            let tot = enforce_memory_budget(&even, MemoryBudget::Total { capacity }, seed).unwrap();
            prop_assert!(tot.total() <= capacity);
            let sizes: BTreeSet<usize> = tot.classes().map(|c| tot.count(c)).collect();
            prop_assert_eq!(sizes.len(), 1);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn hypergradient_is_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(&mut rng, &[2, 4, 2]);
        let ex = random_matrix(&mut rng, 4, 2, 2.0);
        let val = random_matrix(&mut rng, 6, 2, 2.0);
        let unroll = UnrollSpec::new(3, 0.1).unwrap();
        let a = exemplar_hypergradient(&model, &ex, &[0, 0, 1, 1], &val, &[0, 1, 0, 1, 0, 1], unroll).unwrap();
        let b = exemplar_hypergradient(&model, &ex, &[0, 0, 1, 1], &val, &[0, 1, 0, 1, 0, 1], unroll).unwrap();
        prop_assert_eq!(a.0.to_bits(), b.0.to_bits());
        prop_assert!(a.1.data().iter().zip(b.1.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
