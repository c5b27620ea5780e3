use plimit::config::ExperimentConfig;
use plimit::output::{read_node_csv, write_node_csv};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn node_csv_round_trips_exactly(values in prop::collection::vec(prop::option::of(-1e6f64..1e6), 1..40)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.csv");
        write_node_csv(&path, "value", values.iter().copied()).unwrap();
        let back = read_node_csv(&path, values.len()).unwrap();
        for (v, b) in values.iter().zip(&back) {
            prop_assert_eq!(v.unwrap_or(0.0), *b);
        }
    }

    #[test]
    fn config_hash_survives_serialization(n in 3usize..500, seed in any::<u64>(), ps in prop::collection::btree_set(2u32..200, 1..6)) {
        let p_list: Vec<f64> = ps.into_iter().map(f64::from).collect();
        let json = serde_json::json!({
            "name": "h",
            "domain": {"kind": "interval", "a": -1.0, "b": 1.0, "n": n},
            "measure": {"kind": "sign"},
            "p_list": p_list,
            "seed": seed,
        });
        let cfg: ExperimentConfig = serde_json::from_value(json).unwrap();
        cfg.validate().unwrap();
        let again: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        prop_assert_eq!(cfg.hash().unwrap(), again.hash().unwrap());
    }
}
