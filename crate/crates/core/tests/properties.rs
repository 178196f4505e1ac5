use proptest::prelude::*;
use stopfinder::geo::{from_local_frame, GeoPoint, LocalVec};
use stopfinder::gtfs::{audit_mapping, parse_stops, GroundTruthRecord};
use stopfinder::simulator::{FailureReason, Site, TrialOutcome, TrialRow, TrialTable, VisionClass};
use stopfinder::stats::{joint_table, success_rate_ci, summarize, wilson_interval, BootstrapSpec, TrialFilter, Z_95};
use stopfinder::Policy;

fn origin() -> GeoPoint {
    GeoPoint::new(42.35, -71.06).unwrap()
}

/// Writes `rows` as a stops.txt with columns in `order` plus an extra column.
fn stops_csv(rows: &[(String, f64, f64)], order: &[usize]) -> String {
    let names = ["stop_id", "stop_name", "stop_lat", "stop_lon", "wheelchair_boarding"];
    let mut out = order.iter().map(|&i| names[i]).collect::<Vec<_>>().join(",");
    out.push('\n');
    for (id, lat, lon) in rows {
        let fields = [
            id.clone(),
            format!("Stop {id}"),
            lat.to_string(),
            lon.to_string(),
            "1".into(),
        ];
        out.push_str(&order.iter().map(|&i| fields[i].as_str()).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

fn stop_rows() -> impl Strategy<Value = Vec<(String, f64, f64)>> {
    prop::collection::btree_map("[A-Z][0-9]{1,4}", (-500.0..500.0f64, -500.0..500.0f64), 1..25).prop_map(|m| {
        m.into_iter()
            .map(|(id, (e, n))| {
                let p = from_local_frame(origin(), LocalVec::new(e, n)).unwrap();
                (id, p.lat_deg(), p.lon_deg())
            })
            .collect()
    })
}

fn table() -> impl Strategy<Value = TrialTable> {
    let row = (
        any::<bool>(),
        any::<bool>(),
        any::<bool>(),
        -10.0..10.0f64,
        -10.0..10.0f64,
        any::<bool>(),
    );
    prop::collection::vec(row, 1..80).prop_map(|rows| TrialTable {
        rows: rows
            .into_iter()
            .enumerate()
            .map(|(i, (city, v_ok, g_ok, vg, gg, residual))| TrialRow {
                trial_id: i as u64,
                stop_id: format!("X{i}"),
                site: if city { Site::City } else { Site::Suburb },
                vision_class: if residual {
                    VisionClass::Residual
                } else {
                    VisionClass::NoResidual
                },
                seed: i as u64,
                vision: if v_ok {
                    TrialOutcome::success(Policy::VisionGuided, vg)
                } else {
                    TrialOutcome::failure(Policy::VisionGuided, FailureReason::NeverConfirmed)
                },
                gps: if g_ok {
                    TrialOutcome::success(Policy::GpsFollow, gg)
                } else {
                    TrialOutcome::failure(Policy::GpsFollow, FailureReason::Reroute)
                },
            })
            .collect(),
    })
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn stops_parse_the_same_under_column_permutation(rows in stop_rows(), order in Just(vec![0usize, 1, 2, 3, 4]).prop_shuffle()) {
        let canonical = parse_stops(stops_csv(&rows, &[0, 1, 2, 3, 4]).as_bytes()).unwrap();
        let permuted = parse_stops(stops_csv(&rows, &order).as_bytes()).unwrap();
        prop_assert_eq!(canonical.len(), rows.len());
        prop_assert_eq!(canonical, permuted);
    }

    #[test]
    fn exceedance_is_monotone_in_threshold(rows in stop_rows(), shift in 0.0..80.0f64, t1 in 0.5..60.0f64, dt in 0.0..60.0f64) {
        let registry = parse_stops(stops_csv(&rows, &[0, 1, 2, 3, 4]).as_bytes()).unwrap();
        let truth: Vec<_> = rows.iter().enumerate().map(|(i, (id, lat, lon))| {
            let mapped = GeoPoint::new(*lat, *lon).unwrap();
            let local = stopfinder::geo::to_local_frame(origin(), mapped).unwrap();
            let moved = local + LocalVec::from_heading(37.0 * i as f64) * (shift * (i % 3) as f64 / 2.0);
            GroundTruthRecord {
                stop_id: id.clone(),
                surveyed: from_local_frame(origin(), moved).unwrap(),
                travel_heading_deg: 0.0,
            }
        }).collect();
        let rep = audit_mapping(&registry, &truth, &[t1, t1 + dt]).unwrap();
        let (f1, f2) = (rep.fraction_exceeding[0].1, rep.fraction_exceeding[1].1);
        prop_assert!(f2 <= f1);
        // Haversine and the local frame agree to well under 0.1% at this scale.
        prop_assert!(rep.max_m <= shift * 1.001 + 1e-6);
        prop_assert!(rep.mean_m <= rep.max_m + 1e-9);
        let over = rep.per_stop_error_m.values().filter(|&&e| e > t1).count();
        prop_assert!((f1 - over as f64 / rows.len() as f64).abs() < 1e-15);
    }

    #[test]
    fn joint_table_margins_match_success_counts(t in table()) {
        let j = joint_table(&t, TrialFilter::ALL);
        prop_assert_eq!(j.total() as usize, t.rows.len());
        let v = success_rate_ci(&t, Policy::VisionGuided, TrialFilter::ALL).unwrap();
        let g = success_rate_ci(&t, Policy::GpsFollow, TrialFilter::ALL).unwrap();
        prop_assert_eq!(j.both_success + j.a_only, v.successes);
        prop_assert_eq!(j.both_success + j.g_only, g.successes);
        let by_site: u64 = [Site::City, Site::Suburb].into_iter().map(|s| joint_table(&t, TrialFilter::site(s)).total()).sum();
        prop_assert_eq!(by_site as usize, t.rows.len());
    }

    #[test]
    fn wilson_brackets_the_estimate(n in 1u64..2000, k_frac in 0.0..=1.0f64) {
        let k = ((n as f64) * k_frac).floor() as u64;
        let w = wilson_interval(k, n, Z_95);
        prop_assert!(0.0 <= w.lo && w.lo <= w.p_hat && w.p_hat <= w.hi && w.hi <= 1.0);
    }

    #[test]
    fn bootstrap_interval_brackets_the_mean(xs in prop::collection::vec(-50.0..50.0f64, 1..40), seed in any::<u64>()) {
        let s = summarize(&xs, BootstrapSpec { n_resamples: 200, seed }).unwrap();
        prop_assert!(s.ci_lo_m <= s.mean_m && s.mean_m <= s.ci_hi_m);
        prop_assert!(s.sd_m >= 0.0);
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo - 1e-9 <= s.ci_lo_m && s.ci_hi_m <= hi + 1e-9);
    }
}
