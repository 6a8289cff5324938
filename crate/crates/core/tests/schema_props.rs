use std::collections::BTreeSet;

use ardm::ingest::{parse_dataset, AnalysisDataset, Domain};
use ardm::schema::{build_subject_level, init_schema, register_dataset, subject_level_rows};
use ardm::store::open_store;
use proptest::prelude::*;

fn adsl(arms: &[u8]) -> AnalysisDataset {
    let mut src = String::from("USUBJID,TRT01P,AGE\n");
    for (i, a) in arms.iter().enumerate() {
        let arm = ["Placebo", "Low", ""][usize::from(*a)];
        src.push_str(&format!("S{i},{arm},{}\n", 60 + i));
    }
    parse_dataset("adsl.csv", src.as_bytes(), Domain::Adsl, None).unwrap()
}

fn adae(subjects: &[u8]) -> AnalysisDataset {
    let mut src = String::from("USUBJID,AEDECOD,AEBODSYS,TRTA\n");
    for (i, s) in subjects.iter().enumerate() {
        src.push_str(&format!("S{s},TERM{},SOC,Placebo\n", i % 3));
    }
    parse_dataset("adae.csv", src.as_bytes(), Domain::Adae, None).unwrap()
}

#[derive(Debug, Clone)]
enum Op {
    RegisterAdsl(usize),
    RegisterAdae(usize),
    Build { adsl: usize, adae: Option<usize> },
}

fn ops() -> impl Strategy<Value = Vec<Op>> {
    prop::collection::vec(
        prop_oneof![
            (0usize..3).prop_map(Op::RegisterAdsl),
            (0usize..3).prop_map(Op::RegisterAdae),
            ((0usize..3), prop::option::of(0usize..3)).prop_map(|(adsl, adae)| Op::Build { adsl, adae }),
        ],
        1..12,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn registry_and_subject_level_stay_consistent(
        ops in ops(),
        pools in (
            prop::collection::vec(prop::collection::vec(0u8..3, 1..12), 3),
            prop::collection::vec(prop::collection::vec(0u8..14, 1..20), 3),
        ),
    ) {
        let (adsl_pool, adae_pool) = pools;
        let adsls: Vec<AnalysisDataset> = adsl_pool.iter().map(|a| adsl(a)).collect();
        let adaes: Vec<AnalysisDataset> = adae_pool.iter().map(|a| adae(a)).collect();
        let dir = tempfile::tempdir().unwrap();
        let mut store = open_store(dir.path().join("ardm.db"), true).unwrap();
        init_schema(&mut store).unwrap();

        let mut ids = std::collections::BTreeMap::new();
        for op in &ops {
            match op {
                Op::RegisterAdsl(i) => {
                    let reg = register_dataset(&mut store, &adsls[*i]).unwrap();
                    ids.insert(("adsl", *i), reg.dataset_id);
                }
                Op::RegisterAdae(i) => {
                    let reg = register_dataset(&mut store, &adaes[*i]).unwrap();
                    ids.insert(("adae", *i), reg.dataset_id);
                }
                Op::Build { adsl, adae } => {
                    let Some(&sid) = ids.get(&("adsl", *adsl)) else { continue };
                    let aid = adae.and_then(|a| ids.get(&("adae", a)).copied());
                    let built = build_subject_level(&mut store, sid, aid).unwrap();
                    let distinct: BTreeSet<String> =
                        adsls[*adsl].rows.iter().map(|r| r[0].canonical_text()).collect();
                    prop_assert_eq!(built.rows_written, distinct.len());
                    prop_assert_eq!(subject_level_rows(&store, sid).unwrap().len(), distinct.len());
                }
            }
        }
        drop(store);
        let conn = rusqlite::Connection::open(dir.path().join("ardm.db")).unwrap();
        let shared: i64 = conn
            .query_row(
                "SELECT COUNT(*) FROM (SELECT checksum FROM dataset_meta GROUP BY checksum HAVING COUNT(*) > 1)",
                [],
                |r| r.get(0),
            )
            .unwrap();
        prop_assert_eq!(shared, 0);
        for ((_, _), id) in &ids {
            let n: i64 = conn.query_row("SELECT COUNT(*) FROM dataset_meta WHERE dataset_id = ?1", [id], |r| r.get(0)).unwrap();
            prop_assert_eq!(n, 1);
        }
    }
}
