use featuremark_core::attacks::{apply_attack, word_count};
use featuremark_core::calibration::{fit_texts, normality_screen};
use featuremark_core::embed::{embed, generate_candidates};
use featuremark_core::keying::{message_to_key, targets_from_key};
use featuremark_core::sim::{simulated_corpus, simulated_document, synthetic_lexicon, SimulatedGenerator};
use featuremark_core::units::{segment_text, segment_with, SegmentOptions};
use featuremark_core::{
    AttackKind, AttackSpec, BuiltinConfig, BuiltinExtractor, CalibrationModel, DomainKind,
    EmbedParams, Lexicon, Message, Pipeline, Secret,
};
use proptest::prelude::*;
use std::sync::OnceLock;

fn extractor() -> &'static BuiltinExtractor {
    static EX: OnceLock<BuiltinExtractor> = OnceLock::new();
    EX.get_or_init(|| BuiltinExtractor::new(BuiltinConfig::default()).unwrap())
}

fn model() -> &'static CalibrationModel {
    static M: OnceLock<CalibrationModel> = OnceLock::new();
    M.get_or_init(|| {
        let corpus = simulated_corpus(2000, 0);
        let refs: Vec<&str> = corpus.iter().map(String::as_str).collect();
        fit_texts(&refs, extractor(), 0.5).unwrap()
    })
}

#[test]
fn calibration_on_simulated_corpus_is_pinned() {
    let m = model();
    assert_eq!(m.len(), 2000);
    assert!(m.sigma > 0.0);
    assert_eq!(m.mask.excluded().iter().copied().collect::<Vec<_>>(), (0..8).collect::<Vec<_>>());
    assert!((m.mu - 0.21288470989475833).abs() < 1e-12, "{}", m.mu);
    assert!((m.sigma - 0.01303961857857492).abs() < 1e-12, "{}", m.sigma);
}

#[test]
fn statistic_is_approximately_normal() {
    let screen = normality_screen(&model().sorted_samples, 50, 0);
    assert_eq!(screen.p_values.len(), 40);
    assert!(screen.pass_rate(0.01) >= 0.75, "{:?}", screen.p_values);
    assert!(screen.median_p() > 0.05);
}

proptest! {
    #[test]
    fn normalize_is_monotone_and_interior(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let m = model();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (zl, zh) = (m.normalize(lo), m.normalize(hi));
        prop_assert!(zl <= zh);
        prop_assert!(zl > 0.0 && zh < 1.0);
    }
}

fn fixture(i: u64) -> String {
    // Simulated sentences with some words the lexicon does not know.
    let doc = simulated_document(3 + (i % 6) as usize, 1000 + i);
    doc.split(' ')
        .enumerate()
        .map(|(j, w)| if (j as u64 + i) % 7 == 3 { format!("x{w}") } else { w.to_string() })
        .collect::<Vec<_>>()
        .join(" ")
}

fn unit_count(text: &str) -> usize {
    segment_text(text, DomainKind::NaturalLanguage).map_or(0, |u| u.len())
}

fn deletion(intensity: f64, keep_structure: bool, seed: u64) -> AttackSpec {
    AttackSpec {
        kind: AttackKind::WordDeletion,
        intensity,
        keep_structure,
        rng_seed: seed,
    }
}

#[test]
fn keep_structure_deletion_preserves_units() {
    let lex = Lexicon::new();
    let mut reduced = 0;
    for i in 0..100 {
        let text = fixture(i);
        let kept = apply_attack(&text, &deletion(0.1, true, i), &lex).unwrap();
        assert_eq!(unit_count(&kept), unit_count(&text), "{text}");
        let pipeline = SegmentOptions::PIPELINE;
        let n = |t: &str| segment_with(t, DomainKind::NaturalLanguage, pipeline).unwrap().len();
        assert_eq!(n(&kept), n(&text));

        let free = apply_attack(&text, &deletion(0.1, false, i), &lex).unwrap();
        if unit_count(&free) < unit_count(&text) {
            reduced += 1;
        }
    }
    assert!(reduced >= 10, "not-keep deletion merged units in only {reduced} of 100 fixtures");
}

#[test]
fn substitution_replaces_the_budgeted_number_of_covered_words() {
    let lex = synthetic_lexicon();
    for i in 0..100 {
        let text = fixture(i);
        let covered = text
            .split_whitespace()
            .filter(|w| {
                let core = w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
                lex.synonyms(&core).is_some()
            })
            .count();
        for eps in [0.05, 0.1, 0.3, 0.5] {
            let spec = AttackSpec {
                kind: AttackKind::SynonymSubstitution,
                intensity: eps,
                keep_structure: false,
                rng_seed: i,
            };
            let out = apply_attack(&text, &spec, &lex).unwrap();
            assert_eq!(word_count(&out), word_count(&text));
            let changed = text
                .split_whitespace()
                .zip(out.split_whitespace())
                .filter(|(a, b)| a != b)
                .count();
            let budget = (eps * word_count(&text) as f64).floor() as usize;
            assert_eq!(changed, budget.min(covered), "eps={eps} {text}");
            assert_eq!(apply_attack(&text, &spec, &lex).unwrap(), out);
        }
    }
}

fn secret() -> Secret {
    Secret::new(*b"pipeline-props!!")
}

#[test]
fn embedded_units_are_verbatim_candidates_under_fixed_targets() {
    let pipeline = Pipeline::new(extractor(), model()).unwrap();
    let gen = SimulatedGenerator::default();
    for trial in 0..20u64 {
        let key = message_to_key(&Message::from_value(trial % 16, 4).unwrap(), &secret());
        let params = EmbedParams {
            seed: trial,
            ..EmbedParams::default()
        };
        let r = embed("Write something.", &key, &gen, &pipeline, &params).unwrap();
        assert_eq!(r.targets(), targets_from_key(&key, params.units).into_inner());
        assert_eq!(r.text, r.units.join(" "));
        let mut context = String::from("Write something.");
        for (unit, rec) in r.units.iter().zip(&r.per_unit) {
            assert_eq!(rec.context_len, context.len());
            let candidates = generate_candidates(
                &gen,
                &context,
                params.n_candidates,
                &params.generation,
                rec.trial_seed,
                params.domain,
            )
            .unwrap();
            assert_eq!(&candidates[rec.candidate_index], unit);
            context.push(' ');
            context.push_str(unit);
        }
    }
}

#[test]
fn embedding_with_default_budget_usually_aligns() {
    let pipeline = Pipeline::new(extractor(), model()).unwrap();
    let gen = SimulatedGenerator::new(5);
    let aligned = (0..200u64)
        .filter(|&t| {
            let key = message_to_key(&Message::from_value(t % 1024, 10).unwrap(), &secret());
            let params = EmbedParams {
                seed: 77 + t,
                ..EmbedParams::default()
            };
            embed("Begin.", &key, &gen, &pipeline, &params).unwrap().aligned
        })
        .count();
    assert!(aligned >= 190, "aligned {aligned}/200");
}
