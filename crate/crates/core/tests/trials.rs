use proptest::prelude::*;

use metasdt::trials::{load_trials, write_trials_jsonl, FieldMapping, TrialFormat, TrialRecord, TrialStore};

fn record() -> impl Strategy<Value = TrialRecord> {
    (
        "[a-z][a-z0-9-]{0,8}",
        "[a-z]{1,6}",
        "[a-z]{1,6}",
        prop::sample::select(vec![0.0, 0.3, 0.7, 1.0, 1.3]),
        "q[0-9]{1,4}",
        prop::option::of("[ -~]{0,20}"),
        -50.0f64..0.0,
        any::<bool>(),
    )
        .prop_map(|(model_id, dataset_id, domain, temperature, question_id, answer_text, nlp, correct)| TrialRecord {
            model_id,
            dataset_id,
            domain,
            temperature,
            question_id,
            answer_text,
            nlp,
            correct,
        })
}

proptest! {
    #[test]
    fn jsonl_round_trip_is_lossless(records in prop::collection::vec(record(), 0..40)) {
        let mut buf = Vec::new();
        write_trials_jsonl(&mut buf, &records).unwrap();
        let back = load_trials(buf.as_slice(), TrialFormat::JsonLines, &FieldMapping::default()).unwrap();
        prop_assert!(back.skipped.is_empty());
        prop_assert_eq!(back.records, records);
    }

    #[test]
    fn store_filter_partitions_by_model(records in prop::collection::vec(record(), 1..40)) {
        let mut seen = std::collections::HashSet::new();
        let unique: Vec<TrialRecord> = records.into_iter().filter(|r| seen.insert(r.key())).collect();
        let store = TrialStore::new(unique).unwrap();
        let total: usize = store
            .distinct(|r| &r.model_id)
            .iter()
            .map(|m| store.filter(&metasdt::trials::TrialFilter::default().model(m)).len())
            .sum();
        prop_assert_eq!(total, store.len());
    }
}
