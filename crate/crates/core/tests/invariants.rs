use dimnmt::eval::bleu;
use dimnmt::nn::{AdditiveAttention, Ctx, DimGates, DimMemory, Model, ModelConfig};
use dimnmt::text::{make_batches, BpeModel, SentencePair, Vocabulary, RESERVED};
use dimnmt::train::{lr_at, smoothed_nll, Adam, Checkpoint, TrainConfig};
use dimnmt_tensor::{Graph, ParamStore, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn word() -> impl Strategy<Value = String> {
    "[a-e]{1,6}"
}

fn sentence() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(word(), 1..6)
}

fn tensor(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::matrix(rows, cols, data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bpe_segmentation_round_trips(corpus in prop::collection::vec(sentence(), 1..8), merges in 0usize..40) {
        let lines: Vec<String> = corpus.iter().map(|s| s.join(" ")).collect();
        let bpe = BpeModel::train(&lines, merges).unwrap();
        prop_assert!(bpe.num_merges() <= merges);
        for line in &lines {
            let pieces = bpe.encode(line);
            prop_assert!(pieces.len() >= line.split_whitespace().count());
            prop_assert_eq!(&BpeModel::decode(&pieces), line);
        }
    }

    #[test]
    fn vocabulary_round_trips_and_keeps_reserved_ids(corpus in prop::collection::vec(sentence(), 1..8), cap in prop::option::of(0usize..10)) {
        let lines: Vec<String> = corpus.iter().map(|s| s.join(" ")).collect();
        let v = Vocabulary::build(&lines, cap);
        for (i, r) in RESERVED.iter().enumerate() {
            prop_assert_eq!(v.id(r), i);
        }
        if let Some(c) = cap {
            prop_assert!(v.len() <= RESERVED.len() + c);
        }
        prop_assert_eq!(&Vocabulary::from_text(&v.to_text()).unwrap(), &v);
        for line in &lines {
            prop_assert!(v.encode_line(line).iter().all(|&id| id < v.len()));
        }
    }

    #[test]
    fn batches_cover_every_pair_once_within_budget(
        lens in prop::collection::vec((1usize..12, 1usize..12), 1..40),
        budget in 4usize..60,
        reverse in any::<bool>(),
    ) {
        let pairs: Vec<SentencePair> = lens
            .iter()
            .enumerate()
            .map(|(i, &(s, t))| SentencePair {
                source: (0..s).map(|k| 5 + (i + k) % 7).collect(),
                target: (0..t).map(|k| 5 + (i * 3 + k) % 7).collect(),
            })
            .collect();
        let out = make_batches(&pairs, budget, reverse);
        let mut seen: Vec<usize> = out.batches.iter().flat_map(|b| b.indices.clone()).collect();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len() + out.skipped, pairs.len());
        for b in &out.batches {
            prop_assert!(b.source.rows() * b.source.width() <= budget);
            prop_assert!(b.target.rows() * b.target.width() <= budget);
            for (row, &i) in b.indices.iter().enumerate() {
                let mut want = pairs[i].target.clone();
                if reverse {
                    want.reverse();
                }
                prop_assert_eq!(b.gold(row), &want[..]);
            }
        }
    }

    #[test]
    fn bleu_is_a_percentage_and_identity_is_perfect(corpus in prop::collection::vec(sentence(), 1..6), other in prop::collection::vec(sentence(), 1..6)) {
        let refs: Vec<String> = corpus.iter().map(|s| s.join(" ")).collect();
        let hyps: Vec<String> = other.iter().cycle().take(refs.len()).map(|s| s.join(" ")).collect();
        let r = bleu(&hyps, std::slice::from_ref(&refs), false).unwrap();
        prop_assert!((0.0..=100.0).contains(&r.bleu));
        prop_assert!(r.brevity_penalty <= 1.0);
        if refs.iter().all(|l| l.split_whitespace().count() >= 4) {
            prop_assert!((bleu(&refs, std::slice::from_ref(&refs), false).unwrap().bleu - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn schedule_stays_between_zero_and_peak(t in 0u64..200_000, n in 1u32..9) {
        let cfg = TrainConfig { replicas: n, ..TrainConfig::default() };
        let lr = lr_at(t, &cfg);
        prop_assert!(lr > 0.0);
        prop_assert!(lr <= cfg.lr0 * f64::from(n) * (1.0 + 1e-12));
    }

    #[test]
    fn attention_weights_are_distributions_over_unmasked_keys(seed in any::<u64>(), n in 1usize..7, masked in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let att = AdditiveAttention::new(&mut store, &mut rng, "a", 3, 4, 6, 4, 2, 2.0).unwrap();
        let mut ctx = Ctx::inference(&store);
        let data: Vec<f64> = (0..n * 4).map(|i| ((seed as f64) * 0.37 + i as f64).sin() * 3.0).collect();
        let keys = ctx.graph.constant(tensor(n, 4, data));
        let mask: Vec<bool> = (0..n).map(|i| i == 0 || i + masked < n).collect();
        let prepared = att.prepare(&mut ctx, keys, Some(&mask)).unwrap();
        let q = ctx.graph.constant(tensor(1, 3, vec![0.3, -1.2, 0.8]));
        let (a, _) = att.attend(&mut ctx, q, &prepared).unwrap();
        let w = ctx.graph.value(a.per_head).clone();
        for h in 0..2 {
            let col: Vec<f64> = (0..n).map(|i| w.get(i, h)).collect();
            prop_assert!((col.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (i, &m) in mask.iter().enumerate() {
                prop_assert!(col[i] >= 0.0);
                if !m {
                    prop_assert_eq!(col[i], 0.0);
                }
            }
        }
        let mean = ctx.graph.value(a.mean);
        for i in 0..n {
            prop_assert!((mean.get(i, 0) - (w.get(i, 0) + w.get(i, 1)) / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn memory_update_is_a_convex_step_toward_the_add_vector(seed in any::<u64>(), m in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let gates = DimGates::new(&mut store, &mut rng, "g", 4, 4, true, 1.5).unwrap();
        let mut ctx = Ctx::inference(&store);
        let rows: Vec<f64> = (0..m * 4).map(|i| ((seed >> 3) as f64 + i as f64).cos() * 2.0).collect();
        let states = ctx.graph.constant(tensor(m, 4, rows.clone()));
        let raw: Vec<f64> = (0..m).map(|i| 1.0 + i as f64).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let w = ctx.graph.constant(Tensor::column(weights.clone()).unwrap());
        let s = ctx.graph.constant(tensor(1, 4, vec![0.5, -0.5, 1.0, -1.0]));
        let mut mem = DimMemory::new(&ctx, states).unwrap();
        mem.update(&mut ctx, &gates, w, s).unwrap();
        let out = ctx.graph.value(mem.current());
        for i in 0..m {
            for j in 0..4 {
                let (old, new) = (rows[i * 4 + j], out.get(i, j));
                // forget and add gates lie in (0, 1), so each entry moves by
                // at most the row weight times (|old| + 1).
                prop_assert!((new - old).abs() <= weights[i] * (old.abs() + 1.0) + 1e-12);
                prop_assert!(new.abs() <= old.abs() + weights[i] + 1e-12);
            }
        }
    }

    #[test]
    fn smoothed_nll_is_nonnegative(seed in any::<u64>(), steps in 1usize..5, smoothing in 0.0f64..0.5) {
        let vocab = 7;
        let logits: Vec<f64> = (0..steps * vocab).map(|i| ((seed % 1000) as f64 * 0.01 + i as f64 * 1.3).sin() * 4.0).collect();
        let gold: Vec<usize> = (0..steps).map(|i| 2 + (seed as usize + i) % 5).collect();
        let mut g = Graph::new();
        let l = g.constant(tensor(steps, vocab, logits));
        let loss = smoothed_nll(&mut g, l, &gold, smoothing, None).unwrap();
        prop_assert!(g.value(loss).item() >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn checkpoint_bytes_round_trip(seed in any::<u64>(), dim in any::<bool>(), step in 0u64..1000) {
        let cfg = ModelConfig {
            src_vocab_size: 9,
            tgt_vocab_size: 11,
            embed: 4,
            hidden: 4,
            dec_hidden: 4,
            attention: 4,
            heads: 2,
            dim,
            ..ModelConfig::default()
        };
        let model = Model::new(cfg.clone(), seed).unwrap();
        let mut run = dimnmt::RunConfig { seed, ..Default::default() };
        run.model = cfg;
        let adam = Adam::new(&model.params);
        let ck = Checkpoint::capture(&run, &model, &adam, step);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &ck);
        prop_assert_eq!(back.to_bytes(), bytes);
        let (run2, model2, _) = back.restore().unwrap();
        prop_assert_eq!(run2, run);
        prop_assert_eq!(model2.num_parameters(), model.num_parameters());
    }
}
