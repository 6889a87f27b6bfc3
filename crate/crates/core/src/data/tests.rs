use proptest::prelude::{prop_assert_eq, proptest, ProptestConfig};

use super::*;

#[test]
fn synthetic_split_sizes_and_positives() {
    let s = gen_synthetic(0.0, 1.0, 0).unwrap();
    assert_eq!(s.train.len(), 273);
    assert_eq!(s.test.len(), 92);
    let positives = s.train.iter().chain(&s.test).filter(|p| p.label == 1).count();
    assert_eq!(positives, 52);
    assert_eq!(s.test.iter().filter(|p| p.label == 1).count(), 13);
    assert_eq!(s.train.last().unwrap().day, 273);
    assert_eq!(s.test.first().unwrap().day, 274);
    assert!(s
        .train
        .iter()
        .chain(&s.test)
        .all(|p| p.label == u8::from(p.day % 7 == 0)));
}

#[test]
fn synthetic_scale_keeps_labels() {
    let a = gen_synthetic(0.0, 1.0, 3).unwrap();
    let b = gen_synthetic(0.0, 2.0, 3).unwrap();
    let taus: Vec<f64> = b.train.iter().chain(&b.test).map(|p| p.tau).collect();
    assert_eq!(taus[..3], [2.0, 4.0, 6.0]);
    assert_eq!(*taus.last().unwrap(), 730.0);
    for (p, q) in a.train.iter().zip(&b.train) {
        assert_eq!(p.label, q.label);
    }
}

#[test]
fn synthetic_noise_touches_only_training_labels() {
    let s = gen_synthetic(0.5, 1.0, 9).unwrap();
    let flipped = s.train.iter().filter(|p| p.label != u8::from(p.day % 7 == 0)).count();
    assert!(flipped > 90 && flipped < 180, "{flipped}");
    assert!(s.test.iter().all(|p| p.label == u8::from(p.day % 7 == 0)));
    assert_eq!(s, gen_synthetic(0.5, 1.0, 9).unwrap());
    assert_ne!(s, gen_synthetic(0.5, 1.0, 10).unwrap());
    let all = gen_synthetic(1.0, 1.0, 9).unwrap();
    assert!(all.train.iter().all(|p| p.label != u8::from(p.day % 7 == 0)));
}

#[test]
fn synthetic_rejects_bad_parameters() {
    assert!(matches!(gen_synthetic(1.5, 1.0, 0), Err(Error::Config(_))));
    assert!(matches!(gen_synthetic(0.0, 0.0, 0), Err(Error::Config(_))));
}

fn toy_images(images: &[&[u8]], rows: usize, cols: usize) -> IdxImages {
    IdxImages {
        count: images.len(),
        rows,
        cols,
        pixels: images.concat(),
    }
}

#[test]
fn event_mnist_toy_image() {
    let img = [0, 0, 240, 0, 0, 250, 0, 255, 200];
    let out = gen_event_mnist(&toy_images(&[&img], 3, 3), &[4], 0.9).unwrap();
    assert_eq!(out.sequences.len(), 1);
    assert_eq!(out.sequences[0].times, vec![0.0, 3.0, 5.0]);
    assert_eq!(out.sequences[0].label, Some(4));
    assert_eq!(out.dropped, 0);
}

#[test]
fn event_mnist_threshold_is_strict_and_empty_images_are_dropped() {
    // 229.5/255 = 0.9 exactly is impossible with bytes; 230/255 > 0.9 > 229/255
    let img = [229, 230, 0, 0];
    let dark = [0, 0, 0, 229];
    let out = gen_event_mnist(&toy_images(&[&img, &dark], 2, 2), &[1, 2], 0.9).unwrap();
    assert_eq!(out.sequences.len(), 1);
    assert_eq!(out.sequences[0].times, vec![0.0]);
    assert_eq!(out.dropped, 1);

    let binary = [255, 0, 255, 255];
    let out = gen_event_mnist(&toy_images(&[&binary], 2, 2), &[0], 1.0 - 1e-12).unwrap();
    assert_eq!(out.sequences[0].times, vec![0.0, 2.0, 3.0]);
}

#[test]
fn event_mnist_contract_errors() {
    let img = toy_images(&[&[255]], 1, 1);
    assert!(matches!(gen_event_mnist(&img, &[1, 2], 0.9), Err(Error::Format(_))));
    assert!(matches!(gen_event_mnist(&img, &[1], 1.0), Err(Error::Config(_))));
}

fn idx_bytes(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for d in dims {
        out.extend(d.to_be_bytes());
    }
    out.extend_from_slice(payload);
    out
}

#[test]
fn idx_round_trip_and_errors() {
    let bytes = idx_bytes(0x803, &[2, 1, 3], &[1, 2, 3, 4, 5, 6]);
    let img = parse_idx_images(&bytes).unwrap();
    assert_eq!((img.count, img.rows, img.cols), (2, 1, 3));
    assert_eq!(img.image(1), &[4, 5, 6]);
    assert_eq!(
        parse_idx_labels(&idx_bytes(0x801, &[3], &[7, 8, 9])).unwrap(),
        vec![7, 8, 9]
    );

    assert!(matches!(
        parse_idx_images(&idx_bytes(0x801, &[1], &[0])),
        Err(Error::Format(_))
    ));
    assert!(matches!(parse_idx_labels(&bytes), Err(Error::Format(_))));
    assert!(matches!(
        parse_idx_images(&idx_bytes(0x803, &[2, 1, 3], &[1, 2])),
        Err(Error::Format(_))
    ));
    assert!(matches!(parse_idx_images(&[0, 0]), Err(Error::Format(_))));
}

fn with_events(events: Vec<usize>) -> EventSequence {
    EventSequence {
        times: (0..events.len()).map(|t| t as f64).collect(),
        events: Some(events),
        label: None,
    }
}

#[test]
fn binning() {
    let frames = bin_events(&with_events((0..250).map(|i| i % 7).collect()), 100).unwrap();
    assert_eq!(frames.len(), 3);
    assert_eq!(frames[2].len(), 7);
    let singles = bin_events(&with_events(vec![4, 2, 4]), 1).unwrap();
    assert_eq!(singles.len(), 3);
    assert!(singles.iter().all(|f| f.len() == 1));
    let merged = bin_events(&with_events(vec![1, 1, 2]), 3).unwrap();
    assert_eq!(merged, vec![BTreeSet::from([1, 2])]);
    assert!(matches!(
        bin_events(&EventSequence::from_times(vec![1.0]), 2),
        Err(Error::Contract(_))
    ));
}

#[test]
fn next_event_prefixes() {
    assert_eq!(next_event_examples(&with_events(vec![3, 5]), 200).unwrap().len(), 1);
    let ex = next_event_examples(&with_events(vec![1, 2, 3, 4, 5]), 2).unwrap();
    assert_eq!(ex.len(), 4);
    assert!(ex.iter().all(|e| e.prefix.len() <= 2));
    assert_eq!(ex[3].prefix.events, Some(vec![3, 4]));
    assert_eq!(ex[3].prefix.times, vec![2.0, 3.0]);
    assert_eq!(ex[3].target, 5);
    assert!(next_event_examples(&with_events(vec![3]), 5).unwrap().is_empty());
}

#[test]
fn jsonl_edge_cases() {
    assert!(parse_event_jsonl("".as_bytes()).unwrap().is_empty());
    let err = parse_event_jsonl("{\"times\":[1,2]}\n{\"times\":[3,1]}\n".as_bytes()).unwrap_err();
    assert!(matches!(&err, Error::Data(m) if m.starts_with("line 2:")), "{err}");
    let err = parse_event_jsonl("{\"times\":[1]}\n\n{\"times\":\n".as_bytes()).unwrap_err();
    assert!(matches!(err, Error::Parse { line: 3, .. }));
    let ties = parse_event_jsonl("{\"times\":[1,1,2],\"events\":[0,4,4],\"label\":2}".as_bytes()).unwrap();
    assert_eq!(ties[0].label, Some(2));
    assert!(matches!(
        parse_event_jsonl("{\"times\":[1,2],\"events\":[0]}".as_bytes()),
        Err(Error::Data(_))
    ));
}

#[test]
fn jsonl_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested").join("seqs.jsonl");
    let mut rng = Rng::seed_from(77);
    let seqs: Vec<EventSequence> = (0..100)
        .map(|_| {
            let n = rng.below(12) as usize;
            let mut t = rng.range(-1e3, 1e3);
            let times = (0..n)
                .map(|_| {
                    t += rng.uniform() * 10.0;
                    t
                })
                .collect();
            EventSequence {
                times,
                events: rng
                    .bernoulli(0.5)
                    .then(|| (0..n).map(|_| rng.below(50) as usize).collect()),
                label: rng.bernoulli(0.5).then(|| rng.below(10) as usize),
            }
        })
        .collect();
    save_event_jsonl(&seqs, &path).unwrap();
    assert_eq!(load_event_jsonl(&path).unwrap(), seqs);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jsonl_round_trips_arbitrary_floats(raw in proptest::collection::vec(proptest::num::f64::NORMAL, 0..20)) {
        let mut times = raw;
        times.sort_by(f64::total_cmp);
        let seq = vec![EventSequence::from_times(times)];
        prop_assert_eq!(parse_event_jsonl(to_jsonl(&seq).as_bytes()).unwrap(), seq);
    }
}
