use std::collections::BTreeMap;

use longmix::evalgen::{fit_kv, gen_icl, gen_kv, KvConfig, Labeled};
use longmix::tokenizer::{Tokenizer, WhitespaceTokenizer};
use proptest::prelude::*;

proptest! {
    #[test]
    fn kv_context_parses_back(n in 1usize..200, seed in any::<u64>()) {
        let task = gen_kv(&KvConfig::hex(n, seed)).unwrap();
        let obj: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&task.context_json()).unwrap();
        prop_assert_eq!(obj.len(), n);
        prop_assert_eq!(obj[&task.query_key].as_str().unwrap(), task.gold_value.as_str());
        let line: serde_json::Value = serde_json::from_str(&task.to_json_line()).unwrap();
        prop_assert_eq!(line["gold_value"].as_str().unwrap(), task.gold_value.as_str());
        prop_assert!(!task.context_json().contains('\n'));
    }

    #[test]
    fn icl_is_balanced(classes in 2usize..8, per_class in 3usize..10, k in 1usize..3, seed in any::<u64>()) {
        let data: Vec<Labeled> = (0..classes)
            .flat_map(|c| (0..per_class).map(move |i| Labeled { input: format!("x{c}.{i}"), label: format!("c{c}") }))
            .collect();
        let task = gen_icl(&data, k, seed).unwrap();
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for d in &task.demos {
            *counts.entry(d.label).or_default() += 1;
        }
        prop_assert_eq!(counts.len(), classes);
        prop_assert!(counts.values().all(|&c| c == k));
        let mut labels: Vec<u32> = task.classes.iter().map(|c| task.label_of(c).unwrap()).collect();
        labels.sort();
        prop_assert_eq!(labels, (1..=classes as u32).collect::<Vec<_>>());
        for d in &task.demos {
            let src = data.iter().find(|x| x.input == d.input).unwrap();
            prop_assert_eq!(task.label_of(&src.label), Some(d.label));
            prop_assert_ne!(&d.input, &task.query);
        }
    }
}

#[test]
fn fit_kv_stays_under_target() {
    let tok = WhitespaceTokenizer::new();
    for target in [50u64, 500, 5000] {
        let task = fit_kv(target, &KvConfig::hex(1, 9), &tok).unwrap();
        let n = tok.count(&task.context_json()) as u64;
        assert!(n <= target || task.pairs.len() == 1);
        let bigger = gen_kv(&KvConfig::hex(task.pairs.len() + 1, 9)).unwrap();
        assert!(tok.count(&bigger.context_json()) as u64 > target);
    }
}
