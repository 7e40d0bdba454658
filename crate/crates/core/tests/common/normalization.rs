use kbdialog::autodiff::{Graph, ParamStore};
use kbdialog::corpus::{Domain, KbTable, Vocabulary, SPECIALS};
use kbdialog::model::{encode_turn, teacher_forced, values, Model, ModelConfig};
use rand::seq::SliceRandom;
use rand::Rng;

use super::{navigation_columns, rng};

/// Largest `|sum - 1|` over every distribution of `trials` random models,
/// with the place it occurred.
pub fn worst_deviation(trials: u64) -> (f64, String) {
    let mut worst = (0.0, String::new());
    let mut sums_to_one = |label: String, v: &[f64]| {
        assert!(v.iter().all(|p| *p >= 0.0), "{label} has a negative entry");
        let dev = (v.iter().sum::<f64>() - 1.0).abs();
        if dev >= worst.0 {
            worst = (dev, label);
        }
    };
    let words: Vec<String> = "a b c d e f g h valero shell 1_main_st 2_miles no_traffic gas_station"
        .split(' ')
        .map(str::to_string)
        .collect();
    let pool: Vec<String> = words.iter().cloned().chain(["oov1", "oov2", "oov3"].map(String::from)).collect();
    let mut r = rng(2024);
    for trial in 0..trials {
        let dim = r.gen_range(1..=6);
        let copy = r.gen_bool(0.7);
        let vocab = Vocabulary::from_parts(
            SPECIALS.iter().map(|s| s.to_string()).chain(words.iter().cloned()).collect(),
            navigation_columns(),
        )
        .unwrap();
        let config = ModelConfig {
            dim,
            columns: navigation_columns(),
            copy,
            dropout: 0.0,
            max_decode_len: 4,
        };
        let mut model = Model::new(config, vocab, trial).unwrap();
        let scale = r.gen_range(0.05..3.0);
        let names: Vec<String> = model.params.names().map(str::to_string).collect();
        for n in names {
            let t = model.params.get(&n).unwrap();
            model.params.insert(n, ParamStore::uniform(t.rows(), t.cols(), scale, &mut r));
        }
        let n_rows = r.gen_range(1..=6);
        let rows = (0..n_rows)
            .map(|_| (0..5).map(|_| pool.choose(&mut r).unwrap().clone()).collect())
            .collect();
        let kb = KbTable::for_domain(Domain::Navigate, rows).unwrap();
        let input: Vec<String> = (0..r.gen_range(1..=8)).map(|_| pool.choose(&mut r).unwrap().clone()).collect();
        let table = model.table_ids(&kb).unwrap();
        let mut g = Graph::inference();
        let ctx = encode_turn(&mut g, &model, &input, &table).unwrap();

        for (j, row) in g.value(ctx.state.attention).to_rows().iter().enumerate() {
            sums_to_one(format!("trial {trial} a_in row {j}"), row);
        }
        sums_to_one(format!("trial {trial} entry_probs"), &values(&g, ctx.kb.entry_probs));
        let target = vec![model.vocab.id("a"), model.vocab.eos()];
        for (t, step) in teacher_forced(&mut g, &model, &ctx, &table, &target).unwrap().iter().enumerate() {
            sums_to_one(format!("trial {trial} a_out {t}"), &values(&g, step.input.weights));
            sums_to_one(format!("trial {trial} a_mem {t}"), &values(&g, step.memory.weights));
            sums_to_one(format!("trial {trial} extended {t}"), &values(&g, step.extended));
            let fin = values(&g, step.final_probs);
            sums_to_one(format!("trial {trial} final {t}"), &fin);
            let expected = if copy { table.output_len() } else { model.vocab.len() };
            assert_eq!(fin.len(), expected);
        }
    }
    worst
}
