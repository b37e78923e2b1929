use std::fs;
use std::path::PathBuf;

use mrt_joint::bundle;
use mrt_joint::error::Error;
use mrt_joint::ingest::censor::{apply_censoring, Censoring, Exclusion};
use mrt_joint::ingest::rules::{cigarettes_to_events, puff_events, puffs_to_events, spread, CigaretteCount, ReportTimes};
use mrt_joint::ingest::{ema_header, exclusions_csv, flags_csv, ingest, parse_ema, parse_timestamp, parse_treatments};
use proptest::prelude::*;

const H: f64 = 3600.0;

fn fixture(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/ingest").join(name);
    fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn interval(a: f64, b: f64) -> ReportTimes {
    ReportTimes { single: None, first: Some(a), last: Some(b) }
}

fn at(t: f64) -> ReportTimes {
    ReportTimes { single: Some(t), first: None, last: None }
}

#[test]
fn cigarette_counts_place_events_by_hand() {
    let t0 = 10.0 * H;
    // Two cigarettes: the two reported ends.
    assert_eq!(cigarettes_to_events(CigaretteCount::Count(2), &interval(t0, t0 + 3.0 * H)).unwrap(), vec![t0, t0 + 3.0 * H]);
    // Three: ends plus the midpoint.
    assert_eq!(
        cigarettes_to_events(CigaretteCount::Count(3), &interval(t0, t0 + 4.0 * H)).unwrap(),
        vec![t0, t0 + 2.0 * H, t0 + 4.0 * H]
    );
    // Two within 30 minutes collapse to the midpoint.
    assert_eq!(cigarettes_to_events(CigaretteCount::Count(2), &interval(t0, t0 + 1800.0)).unwrap(), vec![t0 + 900.0]);
    // A single cigarette uses its own time.
    assert_eq!(cigarettes_to_events(CigaretteCount::Count(1), &at(t0)).unwrap(), vec![t0]);
    assert!(cigarettes_to_events(CigaretteCount::None, &ReportTimes::default()).unwrap().is_empty());
    // More than ten: hourly from the first report.
    assert_eq!(
        cigarettes_to_events(CigaretteCount::MoreThanTen, &interval(t0, t0 + 3.5 * H)).unwrap(),
        vec![t0, t0 + H, t0 + 2.0 * H, t0 + 3.0 * H]
    );
    assert_eq!(cigarettes_to_events(CigaretteCount::MoreThanTen, &interval(t0, t0 + 1200.0)).unwrap(), vec![t0 + 600.0]);
}

#[test]
fn cigarette_reports_missing_times_are_rejected() {
    assert!(matches!(cigarettes_to_events(CigaretteCount::Count(1), &ReportTimes::default()), Err(Error::InvalidInput(_))));
    assert!(matches!(cigarettes_to_events(CigaretteCount::Count(4), &at(0.0)), Err(Error::InvalidInput(_))));
    assert!(matches!(cigarettes_to_events(CigaretteCount::Count(2), &interval(5.0 * H, H)), Err(Error::Ordering(_))));
}

#[test]
fn puff_counts_map_to_events() {
    let table = [(0, 0), (1, 1), (5, 1), (15, 1), (16, 2), (20, 2), (25, 2), (26, 3), (35, 3), (36, 4)];
    for (puffs, n) in table {
        assert_eq!(puff_events(puffs), n, "{puffs} puffs");
    }
    let (a, b) = (H, 5.0 * H);
    assert_eq!(puffs_to_events(5, &interval(a, b)).unwrap(), vec![3.0 * H]);
    assert_eq!(puffs_to_events(20, &interval(a, b)).unwrap(), vec![a, b]);
    assert!(puffs_to_events(0, &ReportTimes::default()).unwrap().is_empty());
    assert_eq!(puffs_to_events(1, &at(a)).unwrap(), vec![a]);
    assert!(puffs_to_events(3, &at(a)).is_err());
}

#[test]
fn spread_is_even_and_inclusive() {
    assert!(spread(0, 0.0, 10.0 * H).is_empty());
    assert_eq!(spread(1, 0.0, 10.0 * H), vec![5.0 * H]);
    assert_eq!(spread(5, 0.0, 8.0 * H), vec![0.0, 2.0 * H, 4.0 * H, 6.0 * H, 8.0 * H]);
    assert_eq!(spread(4, 0.0, 0.5 * H), vec![0.25 * H]);
}

#[test]
fn censoring_follows_the_two_day_gap_rule() {
    assert_eq!(apply_censoring(&[0.5, 1.0, 1.5, 4.0]).unwrap(), Censoring::Included { censor_time: 1.5 });
    assert_eq!(apply_censoring(&[2.5, 3.0]).unwrap(), Censoring::Excluded(Exclusion::NoResponseFirst48h));
    assert_eq!(apply_censoring(&[]).unwrap(), Censoring::Excluded(Exclusion::NoCompletedEma));
    let daily: Vec<f64> = (0..10).map(|d| d as f64 + 0.5).collect();
    assert_eq!(apply_censoring(&daily).unwrap(), Censoring::Included { censor_time: 9.5 });
    // Exactly two days is not a gap.
    assert_eq!(apply_censoring(&[1.0, 3.0]).unwrap(), Censoring::Included { censor_time: 3.0 });
    assert_eq!(apply_censoring(&[2.0]).unwrap(), Censoring::Included { censor_time: 2.0 });
    assert!(matches!(apply_censoring(&[1.0, 0.5]), Err(Error::Ordering(_))));
}

#[test]
fn timestamps_parse_in_several_forms() {
    let z = parse_timestamp("2024-03-01T00:00:00Z").unwrap();
    assert_eq!(z, 1_709_251_200.0);
    assert_eq!(parse_timestamp("2024-03-01T02:00:00+02:00").unwrap(), z);
    assert_eq!(parse_timestamp("2024-03-01 00:00:00").unwrap(), z);
    assert_eq!(parse_timestamp("2024-03-01T00:00").unwrap(), z);
    assert_eq!(parse_timestamp("2024-03-01T00:00:00.5Z").unwrap(), z + 0.5);
    assert!(parse_timestamp("yesterday").is_none());
    assert!(parse_timestamp("").is_none());
}

#[test]
fn golden_fixture_matches_byte_for_byte() {
    let out = ingest(&fixture("ema.csv"), &fixture("treatments_raw.csv"), Some(&fixture("starts.csv"))).unwrap();
    let d = &out.dataset;
    let got = [
        ("observations.csv", bundle::observations_csv(d).unwrap()),
        ("events.csv", bundle::events_csv(d).unwrap()),
        ("treatments.csv", bundle::treatments_csv(d).unwrap()),
        ("subjects.csv", bundle::subjects_csv(d).unwrap()),
        ("exclusions.csv", exclusions_csv(&out)),
        ("flags.csv", flags_csv(&out)),
    ];
    for (name, text) in got {
        assert_eq!(text, fixture(&format!("expected/{name}")), "{name}");
    }
}

#[test]
fn golden_bundle_reads_back() {
    let out = ingest(&fixture("ema.csv"), &fixture("treatments_raw.csv"), Some(&fixture("starts.csv"))).unwrap();
    let back = bundle::parse_bundle(
        &fixture("expected/observations.csv"),
        &fixture("expected/events.csv"),
        &fixture("expected/treatments.csv"),
        &fixture("expected/subjects.csv"),
    )
    .unwrap();
    assert_eq!(back, out.dataset);
}

fn ema_csv(rows: &[Vec<(&str, &str)>]) -> String {
    let header = ema_header();
    let mut s = header.join(",") + "\n";
    for r in rows {
        let line: Vec<String> = header
            .iter()
            .map(|h| {
                if let Some((_, v)) = r.iter().find(|(k, _)| k == h) {
                    v.to_string()
                } else if h.starts_with("emo_") {
                    "2".to_string()
                } else {
                    String::new()
                }
            })
            .collect();
        s += &(line.join(",") + "\n");
    }
    s
}

const TRT_HEADER: &str = "subject_id,timestamp,treated\n";

#[test]
fn overlapping_substances_are_pooled() {
    let ema = ema_csv(&[
        vec![("subject_id", "a"), ("timestamp", "2024-01-01T00:00:00Z"), ("completed", "1")],
        vec![
            ("subject_id", "a"),
            ("timestamp", "2024-01-01T12:00:00Z"),
            ("completed", "1"),
            ("cig_count", "2"),
            ("cig_first", "2024-01-01T02:00:00Z"),
            ("cig_last", "2024-01-01T08:00:00Z"),
            ("puffs", "30"),
            ("vape_first", "2024-01-01T03:00:00Z"),
            ("vape_last", "2024-01-01T07:00:00Z"),
            ("marijuana_time", "2024-01-01T05:30:00Z"),
        ],
    ]);
    let out = ingest(&ema, TRT_HEADER, None).unwrap();
    let s = &out.dataset.subjects[0];
    // 2 cigarettes, 3 vaping events and 1 marijuana use.
    let hours = [2.0, 3.0, 5.0, 5.5, 7.0, 8.0];
    assert_eq!(s.events.len(), hours.len());
    for (t, h) in s.events.iter().zip(hours) {
        assert!((t * 24.0 - h).abs() < 1e-9, "{t}");
    }
    assert!(out.flags.is_empty());
}

#[test]
fn marijuana_only_and_empty_blocks() {
    let ema = ema_csv(&[
        vec![("subject_id", "m"), ("timestamp", "2024-01-01T06:00:00Z"), ("completed", "1")],
        vec![
            ("subject_id", "m"),
            ("timestamp", "2024-01-01T18:00:00Z"),
            ("completed", "1"),
            ("marijuana_time", "2024-01-01T12:00:00Z"),
            ("cig_count", "0"),
        ],
        vec![("subject_id", "m"), ("timestamp", "2024-01-02T06:00:00Z"), ("completed", "1")],
    ]);
    let out = ingest(&ema, TRT_HEADER, None).unwrap();
    let s = &out.dataset.subjects[0];
    assert_eq!(s.events, vec![0.25]);
    assert_eq!(s.censor_time, 1.0);
    assert_eq!(s.observations.len(), 3);
    assert!(s.treatments.is_empty());
}

#[test]
fn empty_inputs_give_empty_tables() {
    let out = ingest("", "", None).unwrap();
    assert!(out.dataset.subjects.is_empty());
    assert_eq!(out.dataset.k, 15);
    assert_eq!(exclusions_csv(&out), "subject_id,reason\n");
    assert_eq!(flags_csv(&out), "subject_id,ema_time,field,reported,used,reason\n");
    assert_eq!(bundle::events_csv(&out.dataset).unwrap(), "subject_id,time\n");
    let header_only = ema_csv(&[]);
    assert!(ingest(&header_only, TRT_HEADER, None).unwrap().dataset.subjects.is_empty());
}

fn schema_location(e: Error) -> String {
    match e {
        Error::Schema { location, .. } => location,
        other => panic!("expected a schema error, got {other}"),
    }
}

#[test]
fn schema_errors_carry_file_and_line() {
    let good = vec![("subject_id", "a"), ("timestamp", "2024-01-01T00:00:00Z"), ("completed", "1")];
    let bad_cases: Vec<(Vec<(&str, &str)>, &str)> = vec![
        (vec![("subject_id", "a"), ("timestamp", "soon"), ("completed", "1")], "timestamp"),
        (vec![("subject_id", "a"), ("timestamp", "2024-01-02T00:00:00Z"), ("completed", "2")], "completed"),
        (vec![("subject_id", "a"), ("timestamp", "2024-01-02T00:00:00Z"), ("completed", "1"), ("emo_3", "6")], "emo_3"),
        (vec![("subject_id", "a"), ("timestamp", "2024-01-02T00:00:00Z"), ("completed", "1"), ("cig_count", "11")], "cig"),
        (vec![("subject_id", "a"), ("timestamp", "2024-01-02T00:00:00Z"), ("completed", "1"), ("puffs", "-1")], "puffs"),
        (vec![("subject_id", ""), ("timestamp", "2024-01-02T00:00:00Z"), ("completed", "1")], "subject"),
    ];
    for (row, what) in bad_cases {
        let text = ema_csv(&[good.clone(), good.clone(), row]);
        let text = text.replacen("2024-01-01T00:00:00Z", "2023-12-31T00:00:00Z", 1);
        assert_eq!(schema_location(parse_ema(&text).unwrap_err()), "ema.csv:4", "{what}");
    }
    let dup = ema_csv(&[good.clone(), good.clone()]);
    assert_eq!(schema_location(ingest(&dup, "", None).unwrap_err()), "ema.csv:3");
    let mut header = ema_header();
    header.push("extra".into());
    assert_eq!(schema_location(parse_ema(&(header.join(",") + "\n")).unwrap_err()), "ema.csv:1");
    let missing = ema_header()[1..].join(",") + "\n";
    assert_eq!(schema_location(parse_ema(&missing).unwrap_err()), "ema.csv:1");
    let trt = "subject_id,timestamp,treated\na,2024-01-01T00:00:00Z,1\na,2024-01-01T00:00:00Z,x\n";
    assert_eq!(schema_location(parse_treatments(trt).unwrap_err()), "treatments_raw.csv:3");
    let starts = "subject_id,study_start\na,2024-01-01T00:00:00Z\na,2024-01-01T00:00:00Z\n";
    let ema = ema_csv(std::slice::from_ref(&good));
    assert_eq!(schema_location(ingest(&ema, "", Some(starts)).unwrap_err()), "starts.csv:3");
    let late_start = "subject_id,study_start\na,2024-01-02T00:00:00Z\n";
    assert_eq!(schema_location(ingest(&ema, "", Some(late_start)).unwrap_err()), "ema.csv:2");
    // A reversed cigarette interval points at its EMA row.
    let reversed = ema_csv(&[
        good.clone(),
        vec![
            ("subject_id", "a"),
            ("timestamp", "2024-01-01T12:00:00Z"),
            ("completed", "1"),
            ("cig_count", "3"),
            ("cig_first", "2024-01-01T09:00:00Z"),
            ("cig_last", "2024-01-01T03:00:00Z"),
        ],
    ]);
    assert_eq!(schema_location(ingest(&reversed, "", None).unwrap_err()), "ema.csv:3");
}

#[test]
fn reports_outside_the_recall_window_are_clamped_and_flagged() {
    let ema = ema_csv(&[
        vec![("subject_id", "c"), ("timestamp", "2024-01-01T00:00:00Z"), ("completed", "1")],
        vec![
            ("subject_id", "c"),
            ("timestamp", "2024-01-01T12:00:00Z"),
            ("completed", "1"),
            ("cig_count", "1"),
            ("cig_time", "2023-12-31T20:00:00Z"),
        ],
    ]);
    let out = ingest(&ema, "", None).unwrap();
    // Clamped to the previous EMA, which is the study start, then shifted off it.
    assert_eq!(out.dataset.subjects[0].events, vec![1.0 / 86400.0]);
    let reasons: Vec<(&str, &str)> = out.flags.iter().map(|f| (f.field.as_str(), f.reason)).collect();
    assert_eq!(reasons, vec![("cig_time", "outside_report_interval"), ("event", "tied_event_shifted")]);
    assert_eq!(out.flags[0].reported, -1.0 / 6.0);
    assert_eq!(out.flags[0].used, 0.0);
}

#[test]
fn report_tables_quote_awkward_ids() {
    let ema = ema_csv(&[vec![("subject_id", "\"x, \"\"y\"\"\""), ("timestamp", "2024-01-01T00:00:00Z"), ("completed", "0")]]);
    let out = ingest(&ema, "", None).unwrap();
    assert_eq!(out.exclusions[0].0, "x, \"y\"");
    assert_eq!(exclusions_csv(&out), "subject_id,reason\n\"x, \"\"y\"\"\",no_completed_ema\n");
}

#[test]
fn ingest_is_deterministic_under_row_order() {
    let ema = fixture("ema.csv");
    let trt = fixture("treatments_raw.csv");
    let starts = fixture("starts.csv");
    let mut lines: Vec<&str> = ema.lines().collect();
    let header = lines.remove(0);
    lines.reverse();
    let reversed = format!("{header}\n{}\n", lines.join("\n"));
    let a = ingest(&ema, &trt, Some(&starts)).unwrap();
    let b = ingest(&reversed, &trt, Some(&starts)).unwrap();
    assert_eq!(a.dataset, b.dataset);
    assert_eq!(a.exclusions, b.exclusions);
    assert_eq!(flags_csv(&a), flags_csv(&b));
}

fn vape_subject(puffs: u32, first_h: u32, span_h: u32) -> String {
    let hh = |h: u32| format!("2024-01-01T{h:02}:00:00Z");
    let p = puffs.to_string();
    let (f, l) = (hh(first_h), hh(first_h + span_h));
    ema_csv(&[
        vec![("subject_id", "v"), ("timestamp", "2024-01-01T00:00:00Z"), ("completed", "1")],
        vec![
            ("subject_id", "v"),
            ("timestamp", "2024-01-01T23:00:00Z"),
            ("completed", "1"),
            ("puffs", &p),
            ("vape_time", &f),
            ("vape_first", &f),
            ("vape_last", &l),
        ],
    ])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn more_puffs_never_fewer_events(p in 0u32..200, extra in 0u32..50, first in 1u32..10, span in 0u32..12) {
        let a = ingest(&vape_subject(p, first, span), "", None).unwrap();
        let b = ingest(&vape_subject(p + extra, first, span), "", None).unwrap();
        prop_assert!(a.dataset.subjects[0].events.len() <= b.dataset.subjects[0].events.len());
        prop_assert!(puff_events(p) <= puff_events(p + extra));
    }

    #[test]
    fn events_stay_inside_the_at_risk_interval(n in 2u32..11, first in 1u32..10, span in 0u32..12, heavy: bool) {
        let hh = |h: u32| format!("2024-01-01T{h:02}:00:00Z");
        let count = if heavy { ">10".to_string() } else { n.to_string() };
        let (f, l) = (hh(first), hh(first + span));
        let ema = ema_csv(&[
            vec![("subject_id", "e"), ("timestamp", "2024-01-01T00:00:00Z"), ("completed", "1")],
            vec![("subject_id", "e"), ("timestamp", "2024-01-01T23:00:00Z"), ("completed", "1"),
                 ("cig_count", &count), ("cig_first", &f), ("cig_last", &l)],
        ]);
        let out = ingest(&ema, "", None).unwrap();
        let s = &out.dataset.subjects[0];
        prop_assert!(!s.events.is_empty());
        for w in s.events.windows(2) {
            prop_assert!(w[0] < w[1]);
        }
        prop_assert!(s.events.iter().all(|&t| t > s.at_risk_from && t <= s.censor_time));
    }
}
