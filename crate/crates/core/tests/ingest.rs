use std::collections::HashSet;

use holdgraph::ingest::{clean, CleanOptions, RawHolding};
use proptest::prelude::*;

fn holding() -> impl Strategy<Value = RawHolding> {
    (
        0u8..6,
        prop_oneof![
            (0u32..8).prop_map(|i| format!("US{i:09}0")),
            Just("BADISIN".to_string()),
            Just("us0000000001".to_string()),
        ],
        prop_oneof![-5.0f64..60.0, Just(0.0)],
    )
        .prop_map(|(f, asset_isin, weight_pct)| RawHolding {
            fund_id: format!("F{f}"),
            asset_isin,
            weight_pct,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn clean_is_idempotent(raw in prop::collection::vec(holding(), 0..60)) {
        let opts = CleanOptions::default();
        let Ok((once, _)) = clean(&raw, opts) else { return Ok(()); };
        let (twice, summary) = clean(&once.to_holdings(), opts).unwrap();
        prop_assert_eq!(&twice, &once);
        prop_assert!(summary.dropped_funds.is_empty());
        prop_assert_eq!(summary.merged_duplicates, 0);

        let sources: HashSet<(String, String)> =
            raw.iter().map(|h| (h.fund_id.clone(), h.asset_isin.clone())).collect();
        for e in &once.edges {
            prop_assert!(e.weight_pct > 0.0);
            prop_assert!(sources.contains(&(e.fund.clone(), e.asset.clone())));
        }
        for (_, cov) in &once.coverage {
            prop_assert!(*cov >= opts.coverage_threshold);
        }
    }
}
