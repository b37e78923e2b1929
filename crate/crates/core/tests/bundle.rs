use mrt_joint::bundle::{self, parse_bundle, parse_observations, parse_subjects, parse_times, read_bundle, write_bundle};
use mrt_joint::data::{Dataset, Observation, SubjectData};
use mrt_joint::error::Error;
use proptest::prelude::*;

fn location(e: Error) -> String {
    match e {
        Error::Schema { location, .. } => location,
        other => panic!("expected a schema error, got {other}"),
    }
}

fn small() -> Dataset {
    Dataset {
        k: 2,
        subjects: vec![
            SubjectData {
                id: "a".into(),
                observations: vec![
                    Observation { time: 0.1, y: vec![Some(1.5), None] },
                    Observation { time: 2.0 / 3.0, y: vec![Some(-0.25), Some(1e-12)] },
                ],
                treatments: vec![0.2, 0.7],
                events: vec![0.3],
                censor_time: 1.0,
                at_risk_from: 0.0,
                covariates: vec![1.0, 0.0],
            },
            SubjectData {
                id: "b,c".into(),
                observations: vec![],
                treatments: vec![],
                events: vec![],
                censor_time: 3.0,
                at_risk_from: 0.5,
                covariates: vec![-2.0, 1.0],
            },
        ],
    }
}

fn texts(d: &Dataset) -> [String; 4] {
    [
        bundle::observations_csv(d).unwrap(),
        bundle::events_csv(d).unwrap(),
        bundle::treatments_csv(d).unwrap(),
        bundle::subjects_csv(d).unwrap(),
    ]
}

#[test]
fn writer_output_is_exact() {
    let [obs, ev, trt, sub] = texts(&small());
    assert_eq!(obs, "subject_id,time,y1,y2\na,0.1,1.5,\na,0.6666666666666666,-0.25,0.000000000001\n");
    assert_eq!(ev, "subject_id,time\na,0.3\n");
    assert_eq!(trt, "subject_id,time\na,0.2\na,0.7\n");
    assert_eq!(sub, "subject_id,at_risk_from,censor_time,x1,x2\na,0,1,1,0\n\"b,c\",0.5,3,-2,1\n");
}

#[test]
fn directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = small();
    let manifest = serde_json::json!({ "seed": 3 });
    write_bundle(dir.path(), &d, &manifest).unwrap();
    assert_eq!(read_bundle(dir.path()).unwrap(), d);
    assert_eq!(bundle::read_manifest(dir.path()).unwrap(), Some(manifest));
    let empty = tempfile::tempdir().unwrap();
    assert_eq!(bundle::read_manifest(empty.path()).unwrap(), None);
    assert!(matches!(read_bundle(empty.path()), Err(Error::Io(_))));
}

#[test]
fn rows_may_arrive_in_any_order() {
    let obs = "subject_id,time,y1\nb,0.5,1\na,0.9,2\na,0.1,3\n";
    let ev = "subject_id,time\na,0.8\nb,0.2\na,0.4\n";
    let trt = "subject_id,time\n";
    let sub = "subject_id,at_risk_from,censor_time\na,0,1\nb,0,1\n";
    let d = parse_bundle(obs, ev, trt, sub).unwrap();
    assert_eq!(d.subjects[0].events, vec![0.4, 0.8]);
    assert_eq!(d.subjects[0].observations[0].time, 0.1);
    assert_eq!(d.subjects[1].observations[0].y, vec![Some(1.0)]);
}

#[test]
fn parse_errors_point_at_lines() {
    let sub = "subject_id,at_risk_from,censor_time\na,0,1\n";
    let ok_obs = "subject_id,time,y1\na,0.5,1\n";
    let ok_t = "subject_id,time\n";
    assert_eq!(location(parse_subjects("id,at_risk_from,censor_time\n").unwrap_err()), "subjects.csv:1");
    assert_eq!(location(parse_subjects("subject_id,at_risk_from,censor_time,z1\n").unwrap_err()), "subjects.csv:1");
    assert_eq!(location(parse_subjects("subject_id,at_risk_from,censor_time\na,0,1\na,0,2\n").unwrap_err()), "subjects.csv:3");
    assert_eq!(location(parse_subjects("subject_id,at_risk_from,censor_time\na,0,inf\n").unwrap_err()), "subjects.csv:2");
    assert_eq!(location(parse_observations("subject_id,time,y1\na,0.5,x\n").unwrap_err()), "observations.csv:2");
    assert_eq!(location(parse_observations("subject_id,time,y2\n").unwrap_err()), "observations.csv:1");
    assert_eq!(location(parse_times("subject_id,time,extra\n", "events.csv").unwrap_err()), "events.csv:1");
    assert_eq!(location(parse_times("subject_id,time\na,0.1\na,NaN\n", "events.csv").unwrap_err()), "events.csv:3");
    assert_eq!(location(parse_bundle(ok_obs, "subject_id,time\nzz,0.2\n", ok_t, sub).unwrap_err()), "events.csv:2");
    assert_eq!(location(parse_bundle("subject_id,time,y1\na,0.5,1\nq,0.1,1\n", ok_t, ok_t, sub).unwrap_err()), "observations.csv:3");
    // Ragged rows are rejected by the CSV layer or the field check.
    assert!(parse_observations("subject_id,time,y1\na,0.5\n").is_err());
    // Well-formed tables that break the data invariants.
    let after = parse_bundle(ok_obs, "subject_id,time\na,1.5\n", ok_t, sub).unwrap_err();
    assert!(matches!(after, Error::DataInconsistency(_)), "{after}");
    let dup_trt = parse_bundle(ok_obs, ok_t, "subject_id,time\na,0.2\na,0.2\n", sub).unwrap_err();
    assert!(matches!(dup_trt, Error::DataInconsistency(_)), "{dup_trt}");
}

fn arb_subject(k: usize, n_cov: usize) -> impl Strategy<Value = SubjectData> {
    (
        0.0f64..2.0,
        0.5f64..30.0,
        prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), n_cov),
        prop::collection::btree_set(1u32..10_000, 0..12),
        prop::collection::btree_set(1u32..10_000, 0..6),
        prop::collection::vec((0u32..10_000, prop::collection::vec(prop::option::of(-1e6f64..1e6), k)), 0..8),
    )
        .prop_map(move |(from, span, covariates, ev, trt, obs)| {
            let censor = from + span;
            let frac = |u: u32| u as f64 / 10_000.0;
            let mut observations: Vec<Observation> =
                obs.into_iter().map(|(u, y)| Observation { time: censor * frac(u), y }).collect();
            observations.sort_by(|a, b| a.time.total_cmp(&b.time));
            SubjectData {
                id: String::new(),
                observations,
                treatments: trt.into_iter().map(|u| censor * frac(u)).collect(),
                events: ev.into_iter().map(|u| from + span * frac(u)).collect(),
                censor_time: censor,
                at_risk_from: from,
                covariates,
            }
        })
}

fn arb_dataset() -> impl Strategy<Value = Dataset> {
    (1usize..4, 0usize..3).prop_flat_map(|(k, n_cov)| {
        prop::collection::vec(arb_subject(k, n_cov), 0..5).prop_map(move |mut subjects| {
            for (i, s) in subjects.iter_mut().enumerate() {
                s.id = format!("s{i}");
            }
            Dataset { k, subjects }
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn text_round_trip_is_lossless(d in arb_dataset()) {
        prop_assume!(d.validate().is_ok());
        let [obs, ev, trt, sub] = texts(&d);
        let back = parse_bundle(&obs, &ev, &trt, &sub).unwrap();
        prop_assert_eq!(back, d);
    }
}
