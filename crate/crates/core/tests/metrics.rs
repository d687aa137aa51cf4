use timbre_core::dataset::{
    generate_synthetic, AnnotationTuple, DescriptorVocab, EmbeddingStore, Gender, Label, SyntheticSpec,
};
use timbre_core::editor::edit_once;
use timbre_core::metrics::{
    build_reference_table, default_alpha_grid, embedding_dump, export_report, parse_report_csv, speaker_sources,
    tvas_report, EditSource, IdentityVerifier, SweepContext,
};
use timbre_core::par::Executor;
use timbre_core::rng;
use timbre_core::trainer::{AblationMode, Dims, ModelParams};

/// Four speakers, two descriptors. Speaker `f2` is named twice for
/// descriptor 0 so the reference weights are uneven.
fn fixture() -> (EmbeddingStore, Vec<AnnotationTuple>, DescriptorVocab, ModelParams) {
    let mut store = EmbeddingStore::new(4);
    store.insert("f1", Gender::F, "a", vec![1.0, 0.2, 0.0, 0.1]).unwrap();
    store.insert("f1", Gender::F, "b", vec![0.8, 0.4, 0.1, 0.1]).unwrap();
    store.insert("f2", Gender::F, "a", vec![0.1, 1.0, 0.3, 0.0]).unwrap();
    store.insert("f3", Gender::F, "a", vec![0.0, 0.2, 1.0, 0.5]).unwrap();
    store.insert("m1", Gender::M, "a", vec![0.3, 0.3, 0.3, 1.0]).unwrap();
    let vocab = DescriptorVocab::new(&["Low", "Bright"]).unwrap();
    let tuples = vec![
        AnnotationTuple::new("f1", "f2", Label::Descriptors(vec![0])),
        AnnotationTuple::new("f3", "f2", Label::Descriptors(vec![0, 1])),
        AnnotationTuple::new("f2", "f3", Label::Descriptors(vec![0])),
        AnnotationTuple::new("f2", "f1", Label::Similar),
    ];
    let dims = Dims {
        main: 3,
        residual: 2,
        dim: 4,
        hidden: 4,
        vocab: 2,
    };
    let mut p = ModelParams::init(dims, 2.0, &mut rng::seeded(17)).unwrap();
    p.encoder.bias.data.fill(0.3);
    (store, tuples, vocab, p)
}

fn brute_cos(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    d / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
}

fn mean(store: &EmbeddingStore, id: &str) -> Vec<f64> {
    let u = &store.speaker(id).unwrap().utterances;
    (0..4)
        .map(|i| u.iter().map(|x| x.vec[i]).sum::<f64>() / u.len() as f64)
        .collect()
}

/// ATVAS from first principles: count how often each same-gender speaker is
/// the B side of a tuple naming `x`, weight cosines by those counts.
fn brute_atvas(e: &[f64], g: Gender, x: usize, store: &EmbeddingStore, tuples: &[AnnotationTuple]) -> f64 {
    let mut counts: Vec<(String, f64)> = Vec::new();
    for t in tuples {
        if store.speaker(&t.speaker_b).unwrap().gender != g || !t.label.contains(x) {
            continue;
        }
        match counts.iter_mut().find(|(s, _)| *s == t.speaker_b) {
            Some(c) => c.1 += 1.0,
            None => counts.push((t.speaker_b.clone(), 1.0)),
        }
    }
    let total: f64 = counts.iter().map(|c| c.1).sum();
    counts
        .iter()
        .map(|(s, n)| n / total * brute_cos(e, &mean(store, s)))
        .sum()
}

#[test]
fn reference_weights_are_occurrence_shares() {
    let (store, tuples, vocab, _) = fixture();
    let refs = build_reference_table(&tuples, &store, &vocab).unwrap();
    let low = refs.get(Gender::F, 0).unwrap();
    let w: Vec<(&str, usize, f64)> = low
        .iter()
        .map(|r| (r.speaker.as_str(), r.occurrences, r.weight))
        .collect();
    assert_eq!(w, [("f2", 2, 2.0 / 3.0), ("f3", 1, 1.0 / 3.0)]);
    assert_eq!(refs.get(Gender::F, 1).unwrap().len(), 1);
    assert!(refs.get(Gender::M, 0).is_none());
    assert_eq!(low[0].mean, mean(&store, "f2"));
}

#[test]
fn tvas_matches_brute_force() {
    let (store, tuples, vocab, p) = fixture();
    let refs = build_reference_table(&tuples, &store, &vocab).unwrap();
    let exec = Executor::sequential();
    let ctx = SweepContext {
        params: &p,
        vocab: &vocab,
        refs: &refs,
        verifier: &IdentityVerifier,
        mode: AblationMode::Full,
        exec: &exec,
    };
    let sources = speaker_sources(&store);
    let grid = default_alpha_grid();
    let report = tvas_report(&ctx, &sources, &grid).unwrap();
    assert_eq!(report.rows.len(), 2);
    for (x, row) in report.rows.iter().enumerate() {
        // Only female sources have references.
        assert_eq!(row.sources, ["f1", "f2", "f3"]);
        assert_eq!(row.tvas[0], 0.0);
        let fem: Vec<&EditSource> = sources.iter().filter(|s| s.gender == Gender::F).collect();
        let per_alpha: Vec<f64> = grid
            .iter()
            .map(|&a| {
                fem.iter()
                    .map(|s| {
                        let e = edit_once(&p, &s.vec, x, a, AblationMode::Full).unwrap();
                        brute_atvas(&e, Gender::F, x, &store, &tuples)
                    })
                    .sum::<f64>()
                    / fem.len() as f64
            })
            .collect();
        for i in 0..grid.len() {
            assert!((row.atvas[i] - per_alpha[i]).abs() <= 1e-12);
            assert!((row.tvas[i] - (per_alpha[i] - per_alpha[0])).abs() <= 1e-12);
        }
        let score = row.tvas.iter().sum::<f64>() / 11.0;
        assert!((row.score - score).abs() <= 1e-12);
    }
}

#[test]
fn sweep_is_thread_count_independent() {
    let (store, tuples, vocab, p) = fixture();
    let refs = build_reference_table(&tuples, &store, &vocab).unwrap();
    let sources = speaker_sources(&store);
    let grid = default_alpha_grid();
    let run = |exec: &Executor| {
        let ctx = SweepContext {
            params: &p,
            vocab: &vocab,
            refs: &refs,
            verifier: &IdentityVerifier,
            mode: AblationMode::Full,
            exec,
        };
        (
            tvas_report(&ctx, &sources, &grid).unwrap(),
            embedding_dump(&ctx, &sources, &grid).unwrap(),
        )
    };
    assert_eq!(run(&Executor::sequential()), run(&Executor::new(4)));
}

#[test]
fn six_descriptor_sweep_has_66_csv_rows_and_round_trips() {
    let c = generate_synthetic(&SyntheticSpec {
        num_speakers_per_gender: 20,
        dim: 12,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    let dims = Dims {
        main: 4,
        residual: 2,
        dim: 12,
        hidden: 12,
        vocab: 6,
    };
    let mut p = ModelParams::init(dims, 5.0, &mut rng::seeded(3)).unwrap();
    p.encoder.bias.data.fill(0.3);
    let refs = build_reference_table(&c.tuples, &c.store, &c.vocab).unwrap();
    let exec = Executor::new(2);
    let ctx = SweepContext {
        params: &p,
        vocab: &c.vocab,
        refs: &refs,
        verifier: &IdentityVerifier,
        mode: AblationMode::Full,
        exec: &exec,
    };
    let report = tvas_report(&ctx, &speaker_sources(&c.store), &default_alpha_grid()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tvas.csv");
    export_report(&report, &path).unwrap();
    let rows = parse_report_csv(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(rows.len(), 66);
    for (i, r) in rows.iter().enumerate() {
        let row = &report.rows[i / 11];
        assert_eq!(r.descriptor, row.descriptor);
        assert_eq!(r.alpha, row.alphas[i % 11]);
        assert_eq!(r.atvas, row.atvas[i % 11]);
        assert_eq!(r.tvas, row.tvas[i % 11]);
    }
}

#[test]
fn grid_without_zero_is_rejected() {
    let (store, tuples, vocab, p) = fixture();
    let refs = build_reference_table(&tuples, &store, &vocab).unwrap();
    let exec = Executor::sequential();
    let ctx = SweepContext {
        params: &p,
        vocab: &vocab,
        refs: &refs,
        verifier: &IdentityVerifier,
        mode: AblationMode::Full,
        exec: &exec,
    };
    assert!(tvas_report(&ctx, &speaker_sources(&store), &[0.5, 1.0]).is_err());
}
