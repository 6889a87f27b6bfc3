use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

use super::*;
use crate::autodiff::grad_check_many;
use crate::time2vec::{init_frequencies, rescale_frequencies, t2v, FrequencyInit};

// σ(0.5), σ(1) and the hand-set LSTM values below come from an external calculator.
const SIGMOID_HALF: f64 = 0.6224593312018546;

fn config(kind: CellKind, input: usize, hidden: usize, time_width: usize, peephole: bool) -> CellConfig {
    CellConfig {
        kind,
        input,
        hidden,
        time_width,
        peephole,
    }
}

fn set(t: &mut Tensor, v: f64) {
    for x in t.data_mut() {
        *x = v;
    }
}

#[test]
fn zero_lstm_is_a_fixed_point() {
    let w = CellWeights::zeros(&config(CellKind::Lstm, 2, 3, 0, false)).unwrap();
    let s0 = CellState::zeros(3);
    let (s1, g) = step_values(&w, &[0.7, -1.1], &[], &s0).unwrap();
    assert_eq!(g.input, vec![0.5; 3]);
    assert_eq!(g.forget, Some(vec![0.5; 3]));
    assert_eq!(g.output, vec![0.5; 3]);
    assert_eq!(g.candidate, vec![0.0; 3]);
    assert_eq!(s1.c, vec![0.0; 3]);
    assert_eq!(s1.h, vec![0.0; 3]);
    assert_eq!(lstm_step(&[0.7, -1.1], &s0, &w.lstm, false).unwrap(), s1);
}

#[test]
fn zero_candidate_blocks_writes() {
    let mut w = CellWeights::zeros(&config(CellKind::Lstm, 1, 1, 0, false)).unwrap();
    set(&mut w.lstm.input.b, 10.0);
    let s = lstm_step(&[1.0], &CellState::zeros(1), &w.lstm, false).unwrap();
    assert_eq!(s.c, vec![0.0]);
}

#[test]
fn hand_set_single_unit_lstm() {
    let mut w = CellWeights::zeros(&config(CellKind::Lstm, 1, 1, 0, false)).unwrap();
    set(&mut w.lstm.candidate.w, 1.0);
    let s = lstm_step(&[1.0], &CellState::zeros(1), &w.lstm, false).unwrap();
    assert!((s.c[0] - 0.3807970779778824).abs() < 1e-15);
    assert!((s.h[0] - 0.18169974219452625).abs() < 1e-15);
}

#[test]
fn peephole_mode_must_match_weights() {
    let w = CellWeights::zeros(&config(CellKind::Lstm, 1, 2, 0, true)).unwrap();
    assert!(matches!(
        lstm_step(&[0.0], &CellState::zeros(2), &w.lstm, false),
        Err(Error::Contract(_))
    ));
    assert!(lstm_step(&[0.0], &CellState::zeros(2), &w.lstm, true).is_ok());
}

#[test]
fn lstm_t_concatenates_time_features() {
    let mut rng = Rng::seed_from(3);
    let w = CellWeights::init(&config(CellKind::Lstm, 2, 3, 0, false), &mut rng).unwrap();
    let s0 = CellState::zeros(3);
    assert_eq!(
        lstm_t_step(&[0.2, 0.4], &[], &s0, &w.lstm, false).unwrap(),
        lstm_step(&[0.2, 0.4], &s0, &w.lstm, false).unwrap()
    );
    // input is 1 + 1 = 2 rows; adding a third feature must fail
    assert!(lstm_t_step(&[0.2], &[1.5], &s0, &w.lstm, false).is_ok());
    assert!(matches!(
        lstm_t_step(&[0.2, 0.4], &[1.5], &s0, &w.lstm, false),
        Err(Error::Dimension { op: "matmul", .. })
    ));
    let z = CellWeights::zeros(&config(CellKind::Lstm, 2, 3, 0, false)).unwrap();
    let s = lstm_t_step(&[0.3], &[9.0], &s0, &z.lstm, false).unwrap();
    assert_eq!(s.h, vec![0.0; 3]);
}

#[test]
fn zero_tlstm1_time_gate_is_sigmoid_of_half() {
    let w = CellWeights::zeros(&config(CellKind::Tlstm1, 2, 2, 1, true)).unwrap();
    let (s, g) = step_values(&w, &[0.5, 0.5], &[3.0], &CellState::zeros(2)).unwrap();
    assert_eq!(g.time.len(), 1);
    for v in &g.time[0] {
        assert!((v - SIGMOID_HALF).abs() < 1e-15);
    }
    assert_eq!(s.c, vec![0.0; 2]);
    assert_eq!(s.h, vec![0.0; 2]);
}

#[test]
fn tlstm1_embedded_time_shape_contract() {
    let mut rng = Rng::seed_from(5);
    let emb = CellWeights::init(&config(CellKind::Tlstm1, 2, 3, 5, true), &mut rng).unwrap();
    let scalar = CellWeights::init(&config(CellKind::Tlstm1, 2, 3, 1, true), &mut rng).unwrap();
    let t2v_out = [0.1, 0.2, -0.3, 0.9, 0.0];
    let s0 = CellState::zeros(3);
    assert!(tlstm1_step(&[1.0, 2.0], &t2v_out, &s0, &emb).is_ok());
    assert!(matches!(
        tlstm1_step(&[1.0, 2.0], &t2v_out, &s0, &scalar),
        Err(Error::Dimension { op: "matmul", .. })
    ));
    assert!(matches!(
        tlstm1_step(&[1.0, 2.0], &[0.5], &s0, &emb),
        Err(Error::Dimension { .. })
    ));
    assert!(matches!(
        tlstm3_step(&[1.0, 2.0], &[0.5], &s0, &scalar),
        Err(Error::Contract(_))
    ));
}

fn saturate_tlstm1(w: &mut CellWeights<Tensor>) {
    if let Some(TimeGateWeights::Tlstm1 { gate, out }) = &mut w.time {
        set(&mut gate.b, 60.0);
        set(out, 0.0);
    }
}

#[test]
fn zero_tlstm3_fixed_point() {
    let w = CellWeights::zeros(&config(CellKind::Tlstm3, 1, 2, 1, true)).unwrap();
    let (s, g) = step_values(&w, &[1.0], &[2.0], &CellState::zeros(2)).unwrap();
    assert_eq!(g.time.len(), 2);
    for gate in &g.time {
        for v in gate {
            assert!((v - SIGMOID_HALF).abs() < 1e-15);
        }
    }
    assert_eq!(g.input, vec![0.5; 2]);
    assert!(g.forget.is_none());
    assert_eq!(s.c, vec![0.0; 2]);
    assert_eq!(s.c_tilde, Some(vec![0.0; 2]));
    assert_eq!(s.h, vec![0.0; 2]);
}

fn tlstm3_gates(w: &mut CellWeights<Tensor>) -> (&mut TimeGate<Tensor>, &mut TimeGate<Tensor>) {
    match &mut w.time {
        Some(TimeGateWeights::Tlstm3 { gate1, gate2, .. }) => (gate1, gate2),
        _ => unreachable!(),
    }
}

#[test]
fn tlstm3_full_overwrite_limit() {
    let mut w = CellWeights::zeros(&config(CellKind::Tlstm3, 1, 1, 1, true)).unwrap();
    set(&mut w.lstm.input.b, 60.0);
    set(&mut w.lstm.candidate.b, 0.3);
    set(&mut tlstm3_gates(&mut w).0.b, 60.0);
    let state = CellState {
        h: vec![0.0],
        c: vec![0.7],
        c_tilde: None,
    };
    let s = tlstm3_step(&[0.0], &[1.0], &state, &w).unwrap();
    assert!((s.c_tilde.unwrap()[0] - 0.3f64.tanh()).abs() < 1e-12);
}

#[test]
fn tlstm3_hand_set_coupled_update() {
    let mut w = CellWeights::zeros(&config(CellKind::Tlstm3, 1, 1, 1, true)).unwrap();
    // i = σ(0) = 0.5; t1 = σ(σ(0) + b) = 0.4; c̄ = tanh(atanh 0.8) = 0.8
    set(&mut tlstm3_gates(&mut w).0.b, -0.9054651081081643);
    set(&mut w.lstm.candidate.b, 1.0986122886681098);
    let state = CellState {
        h: vec![0.0],
        c: vec![1.0],
        c_tilde: None,
    };
    let (s, g) = step_values(&w, &[0.0], &[0.0], &state).unwrap();
    assert!((g.time[0][0] - 0.4).abs() < 1e-12);
    assert!((s.c_tilde.as_ref().unwrap()[0] - 0.96).abs() < 1e-12);
    // c = (1 − 0.5)·1 + 0.5·σ(0.5)·0.8
    assert!((s.c[0] - 0.7489837324807418).abs() < 1e-12);
}

#[test]
fn tlstm3_rejects_positive_input_time_weights() {
    let mut w = CellWeights::zeros(&config(CellKind::Tlstm3, 2, 2, 1, true)).unwrap();
    tlstm3_gates(&mut w).0.w.set(1, 0, 1e-3);
    assert!(matches!(
        tlstm3_step(&[1.0, 1.0], &[1.0], &CellState::zeros(2), &w),
        Err(Error::Constraint(_))
    ));
    assert!(w.check_constraints().is_err());
    w.apply_constraints();
    assert!(w.check_constraints().is_ok());
    assert!(tlstm3_step(&[1.0, 1.0], &[1.0], &CellState::zeros(2), &w).is_ok());
}

#[test]
fn init_respects_time_gate_constraint_and_forget_bias() {
    let mut rng = Rng::seed_from(11);
    let w = CellWeights::init(&config(CellKind::Tlstm3, 4, 6, 3, true), &mut rng).unwrap();
    assert!(w.check_constraints().is_ok());
    assert!(w.lstm.forget.is_none());
    let w = CellWeights::init(&config(CellKind::Tlstm1, 4, 6, 3, true), &mut rng).unwrap();
    assert!(w.lstm.forget.as_ref().unwrap().b.data().iter().all(|&b| b == 1.0));
    let limit = (6.0f64 / 10.0).sqrt();
    assert!(w.lstm.input.w.data().iter().all(|v| v.abs() <= limit));
}

#[test]
fn names_are_unique_and_ordered_identically() {
    for kind in [CellKind::Lstm, CellKind::Tlstm1, CellKind::Tlstm3] {
        let mut w = CellWeights::init(&config(kind, 2, 3, 4, true), &mut Rng::seed_from(1)).unwrap();
        let mut names = Vec::new();
        w.for_each(|n, _| names.push(n));
        let mut names_mut = Vec::new();
        w.for_each_mut(|n, _| names_mut.push(n));
        assert_eq!(names, names_mut);
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
    }
}

#[test]
fn lstm_param_count_formula() {
    let (n, h) = (5, 7);
    let w = CellWeights::init(&config(CellKind::Lstm, n, h, 0, false), &mut Rng::seed_from(0)).unwrap();
    assert_eq!(w.param_count(), 4 * (h * n + h * h + h));
}

#[test]
fn unroll_contracts() {
    let mut rng = Rng::seed_from(8);
    let w = CellWeights::init(&config(CellKind::Tlstm1, 2, 3, 1, true), &mut rng).unwrap();
    assert!(matches!(unroll(&w, &[]), Err(Error::Contract(_))));
    let item = StepItem {
        x: vec![0.1, -0.4],
        time: vec![2.0],
    };
    let u = unroll(&w, std::slice::from_ref(&item)).unwrap();
    let single = tlstm1_step(&item.x, &item.time, &CellState::zeros(3), &w).unwrap();
    assert_eq!(u.last, single);
    assert_eq!(u.hidden, vec![single.h]);

    let z = CellWeights::zeros(&config(CellKind::Lstm, 1, 4, 0, false)).unwrap();
    let seq: Vec<StepItem> = (0..7)
        .map(|j| StepItem {
            x: vec![j as f64],
            time: vec![],
        })
        .collect();
    let u = unroll(&z, &seq).unwrap();
    assert!(u.hidden.iter().all(|h| h.iter().all(|&v| v == 0.0)));
}

fn random_sequence(rng: &mut Rng, len: usize, input: usize, time_width: usize) -> Vec<StepItem> {
    (0..len)
        .map(|_| StepItem {
            x: (0..input).map(|_| rng.range(-1.0, 1.0)).collect(),
            time: (0..time_width).map(|_| rng.range(0.0, 2.0)).collect(),
        })
        .collect()
}

/// Central-difference check of a squared-norm loss on the final hidden state
/// against every weight tensor of the cell.
fn sequence_grad_errors(cell: &CellWeights<Tensor>, seq: &[StepItem]) -> Vec<(&'static str, f64)> {
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    cell.for_each(|n, t| {
        names.push(n);
        tensors.push(t.clone());
    });
    let reports = grad_check_many(
        |tape, ids| {
            let mut it = ids.iter().copied();
            let bound = cell.map(|_| it.next().unwrap());
            let steps: Vec<(NodeId, Option<NodeId>)> = seq
                .iter()
                .map(|s| {
                    let x = tape.constant(Tensor::column(&s.x).unwrap());
                    let t = (cell.kind != CellKind::Lstm).then(|| tape.constant(Tensor::column(&s.time).unwrap()));
                    (x, t)
                })
                .collect();
            let states = unroll_on_tape(tape, &bound, &steps)?;
            let h = states.last().unwrap().h;
            let sq = tape.hadamard(h, h)?;
            Ok(tape.sum(sq))
        },
        &tensors,
        1e-5,
    )
    .unwrap();
    names
        .into_iter()
        .zip(reports)
        .map(|(n, r)| (n, r.max_rel_error))
        .collect()
}

#[test]
fn length_five_gradient_wrt_candidate_weights() {
    let mut rng = Rng::seed_from(21);
    let cell = CellWeights::init(&config(CellKind::Lstm, 2, 3, 0, false), &mut rng).unwrap();
    let seq = random_sequence(&mut rng, 5, 2, 0);
    let errs = sequence_grad_errors(&cell, &seq);
    let (_, e) = errs.iter().find(|(n, _)| *n == "W_c").unwrap();
    assert!(*e < 1e-5, "{errs:?}");
}

#[test]
fn full_sequence_gradients_for_every_cell_kind() {
    for (kind, tw, peephole) in [
        (CellKind::Lstm, 0, false),
        (CellKind::Lstm, 0, true),
        (CellKind::Tlstm1, 1, true),
        (CellKind::Tlstm1, 4, true),
        (CellKind::Tlstm3, 1, true),
        (CellKind::Tlstm3, 4, true),
    ] {
        for seed in 0..3 {
            let mut rng = Rng::seed_from(seed);
            let cell = CellWeights::init(&config(kind, 2, 3, tw, peephole), &mut rng).unwrap();
            let seq = random_sequence(&mut rng, 6, 2, tw);
            for (name, e) in sequence_grad_errors(&cell, &seq) {
                assert!(e < 1e-4, "{kind:?} tw={tw} seed={seed} {name}: {e}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gates_stay_in_range(seed in 0u64..1000, kind_idx in 0usize..3) {
        let kind = [CellKind::Lstm, CellKind::Tlstm1, CellKind::Tlstm3][kind_idx];
        let tw = if kind == CellKind::Lstm { 0 } else { 3 };
        let mut rng = Rng::seed_from(seed);
        let cell = CellWeights::init(&config(kind, 2, 4, tw, true), &mut rng).unwrap();
        let mut state = CellState::zeros(4);
        for item in random_sequence(&mut rng, 8, 2, tw) {
            let (next, g) = step_values(&cell, &item.x, &item.time, &state).unwrap();
            let unit = |v: &f64| *v > 0.0 && *v < 1.0;
            prop_assert!(g.input.iter().all(unit));
            prop_assert!(g.output.iter().all(unit));
            prop_assert!(g.forget.iter().flatten().all(unit));
            prop_assert!(g.time.iter().flatten().all(unit));
            prop_assert!(g.candidate.iter().all(|v| v.abs() < 1.0));
            state = next;
        }
    }

    #[test]
    fn saturated_tlstm1_reduces_to_peephole_lstm(seed in 0u64..1000) {
        let mut rng = Rng::seed_from(seed);
        let mut cell = CellWeights::init(&config(CellKind::Tlstm1, 2, 3, 1, true), &mut rng).unwrap();
        saturate_tlstm1(&mut cell);
        let plain = CellWeights { kind: CellKind::Lstm, lstm: cell.lstm.clone(), time: None };
        let seq = random_sequence(&mut rng, 6, 2, 1);
        let a = unroll(&cell, &seq).unwrap();
        let stripped: Vec<StepItem> = seq.iter().map(|s| StepItem { x: s.x.clone(), time: vec![] }).collect();
        let b = unroll(&plain, &stripped).unwrap();
        for (ha, hb) in a.hidden.iter().zip(&b.hidden) {
            for (x, y) in ha.iter().zip(hb) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rescaled_embedding_gives_identical_hidden_states(
        seed in 0u64..1000,
        alpha in 0.05f64..20.0,
        tlstm3 in any::<bool>(),
    ) {
        let kind = if tlstm3 { CellKind::Tlstm3 } else { CellKind::Tlstm1 };
        let k = 4;
        let mut rng = Rng::seed_from(seed);
        let emb = init_frequencies(k, FrequencyInit::UniformRandom { seed }, true).unwrap();
        let emb2 = rescale_frequencies(&emb, alpha).unwrap();
        let cell = CellWeights::init(&config(kind, 2, 3, k + 1, true), &mut rng).unwrap();
        let xs: Vec<Vec<f64>> = (0..6).map(|_| vec![rng.range(-1.0, 1.0), rng.range(-1.0, 1.0)]).collect();
        let taus: Vec<f64> = (0..6).map(|_| rng.range(0.0, 10.0)).collect();
        let seq = |p: &crate::time2vec::Time2VecParams, scale: f64| -> Vec<StepItem> {
            xs.iter().zip(&taus).map(|(x, &t)| StepItem { x: x.clone(), time: t2v(scale * t, p).unwrap() }).collect()
        };
        let a = unroll(&cell, &seq(&emb, 1.0)).unwrap();
        let b = unroll(&cell, &seq(&emb2, alpha)).unwrap();
        for (ha, hb) in a.hidden.iter().zip(&b.hidden) {
            for (x, y) in ha.iter().zip(hb) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
