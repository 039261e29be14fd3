use fragility::ingest::{parse_table, serialize_table};
use fragility_core::{Dataset, SchemaSpec, UnitRecord};
use proptest::prelude::*;

fn lalonde_rows() -> impl Strategy<Value = Vec<UnitRecord>> {
    proptest::collection::vec(
        (any::<bool>(), proptest::collection::vec(-1e6f64..1e6, 8), -1e5f64..1e5),
        1..60,
    )
    .prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (t, x, y))| UnitRecord {
                unit_id: i,
                treated: t,
                outcome: y,
                covariates: x,
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn serialize_then_parse_is_identity(records in lalonde_rows()) {
        let schema = SchemaSpec::lalonde();
        let d = Dataset::new(records, schema.clone(), "rt").unwrap();
        let back = parse_table(&serialize_table(&d), &schema).unwrap();
        prop_assert_eq!(back.records(), d.records());
    }

    #[test]
    fn comma_layout_round_trips(records in lalonde_rows()) {
        let schema = SchemaSpec::simulated();
        let records: Vec<UnitRecord> = records
            .into_iter()
            .map(|u| UnitRecord { covariates: vec![u.covariates[0]], ..u })
            .collect();
        let d = Dataset::new(records, schema.clone(), "rt").unwrap();
        let back = parse_table(&serialize_table(&d), &schema).unwrap();
        prop_assert_eq!(back.records(), d.records());
    }
}
