//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed.
//!
//! Regenerate the golden protocol files with `UPDATE_GOLDEN=1`.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use doorbell_core::backends::{simulate_detect, BackendCategory, ProfileRegistry, SimulatedDetector};
use doorbell_core::cloud::{CloudConfig, CloudService, SubscriptionFilter};
use doorbell_core::device::{run_motion_script, Dataset, ManifestEntry, MotionScript};
use doorbell_core::edge::{run_pipeline, EdgeConfig, FlakyIngest, Forwarder, RetryPolicy};
use doorbell_core::eval::{
    compare_backends, compute_metrics, f1_score, generate_dataset, run_experiment, ConfusionCounts, DatasetSpec,
    Experiment, ExperimentConfig, ExperimentReport,
};
use doorbell_core::model::{apply_confidence_threshold, DeviceId, EventIdIssuer, ScenarioKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{golden_cloud, golden_dir, run_script, Exchange};

type Outcome = Result<String, String>;

/// (number, name, time budget in seconds, check)
type Criterion = (u32, &'static str, Option<u64>, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if let false = $cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Scenario rows of the published per-scenario results: counts per 100
/// frames, then accuracy / precision / recall in percent.
const PUBLISHED_COUNTS: [(ScenarioKind, [u64; 4], [i64; 3]); 5] = [
    (ScenarioKind::FaceRecognition, [45, 5, 0, 50], [95, 100, 90]),
    (ScenarioKind::UnsafeContent, [44, 6, 0, 50], [94, 100, 88]),
    (ScenarioKind::AnimalDetection, [40, 10, 0, 50], [90, 100, 80]),
    (ScenarioKind::NoteworthyVehicle, [43, 7, 0, 50], [93, 100, 86]),
    (ScenarioKind::MultiObject, [15, 2, 0, 83], [98, 100, 88]),
];

fn pct(x: f64) -> i64 {
    (x * 100.0).round() as i64
}

fn criterion_1() -> Outcome {
    for (kind, [tp, fn_, fp, tn], expected) in PUBLISHED_COUNTS {
        let m = compute_metrics(&ConfusionCounts::new(tp, fn_, fp, tn)).map_err(|e| e.to_string())?;
        let got = [
            pct(m.accuracy),
            pct(m.precision.ok_or("precision undefined")?),
            pct(m.recall.ok_or("recall undefined")?),
        ];
        ensure!(got == expected, "{kind}: got {got:?}, expected {expected:?}");
    }
    Ok("5 rows exact after rounding".into())
}

fn criterion_2() -> Outcome {
    // harmonic mean through reciprocals, a different route from 2PR/(P+R)
    let oracle = |p: f64, r: f64| 1.0 / ((1.0 / p + 1.0 / r) / 2.0);
    let published = [
        (ScenarioKind::FaceRecognition, 0.9474),
        (ScenarioKind::UnsafeContent, 0.9362),
        (ScenarioKind::NoteworthyVehicle, 0.9247),
        (ScenarioKind::AnimalDetection, 0.8889),
        (ScenarioKind::MultiObject, 0.9375),
    ];
    for (kind, want) in published {
        let (_, [tp, fn_, fp, _], _) = PUBLISHED_COUNTS.iter().find(|row| row.0 == kind).unwrap();
        let p = *tp as f64 / (tp + fp) as f64;
        let r = *tp as f64 / (tp + fn_) as f64;
        let f = f1_score(p, r).ok_or("f1 undefined")?;
        ensure!(
            (f - oracle(p, r)).abs() < 1e-9,
            "{kind}: f1 {f}, oracle {}",
            oracle(p, r)
        );
        ensure!((f - want).abs() < 5e-5, "{kind}: f1 {f} does not round to {want}");
    }
    Ok("5 pairs within 1e-9 of the oracle".into())
}

fn criterion_3() -> Outcome {
    let dataset =
        generate_dataset(&DatasetSpec::positives_only(1000, &ScenarioKind::ALL), 7).map_err(|e| e.to_string())?;
    let report = run_experiment(&Experiment::new(dataset, "aws-saas").with_seed(7)).map_err(|e| e.to_string())?;
    let mut detail = Vec::new();
    for (kind, _, [_, _, recall_pct]) in PUBLISHED_COUNTS {
        let m = report.scenario(kind).ok_or(format!("no {kind} row"))?;
        let recall = m.metrics.recall.ok_or("recall undefined")?;
        ensure!(
            (recall - recall_pct as f64 / 100.0).abs() <= 0.03,
            "{kind}: recall {recall:.3} vs {recall_pct}%"
        );
        ensure!(
            m.counts.fp == 0 && m.metrics.precision == Some(1.0),
            "{kind}: precision {:?}",
            m.metrics.precision
        );
        detail.push(format!("{}={:.3}", kind.short_name(), recall));
    }
    Ok(format!("recall {}; precision 1.0", detail.join(" ")))
}

fn criterion_4() -> Outcome {
    let dataset = generate_dataset(&DatasetSpec::default(), 11).map_err(|e| e.to_string())?;
    let run = |t: f64| {
        run_experiment(
            &Experiment::new(dataset.clone(), "aws-saas")
                .with_seed(11)
                .with_threshold(t),
        )
    };
    let strict = run(90.0).map_err(|e| e.to_string())?;
    let relaxed = run(70.0).map_err(|e| e.to_string())?;
    ensure!(
        strict.overall.counts.fn_ > 0,
        "threshold 90 produced no false negatives"
    );
    for m in &relaxed.scenarios {
        ensure!(
            m.counts.fn_ == 0,
            "{}: {} false negatives at threshold 70",
            m.scenario,
            m.counts.fn_
        );
    }
    Ok(format!(
        "fn at 90 = {}, fn at 70 = {}",
        strict.overall.counts.fn_, relaxed.overall.counts.fn_
    ))
}

fn default_reports() -> &'static Vec<ExperimentReport> {
    static REPORTS: OnceLock<Vec<ExperimentReport>> = OnceLock::new();
    REPORTS.get_or_init(|| {
        let dataset = generate_dataset(&DatasetSpec::default(), 5).unwrap();
        ProfileRegistry::defaults()
            .ids()
            .iter()
            .map(|id| run_experiment(&Experiment::new(dataset.clone(), id.as_str()).with_seed(5)).unwrap())
            .collect()
    })
}

fn criterion_5() -> Outcome {
    let reports = default_reports();
    let registry = ProfileRegistry::defaults();
    let exp_network = Experiment::new(Dataset::new(vec![]).unwrap(), "aws-saas").network;
    let remote = reports
        .iter()
        .find(|r| r.category == BackendCategory::CloudSaas)
        .ok_or("no remote report")?;
    let service = registry.get(&remote.backend_id).unwrap().service_time_ms;
    let (base, jitter) = (exp_network.base_delay_ms, exp_network.jitter_ms);
    let (lo, hi) = (2 * (base - jitter) + service, 2 * (base + jitter) + service);
    for f in &remote.results {
        ensure!(
            (lo..=hi).contains(&f.latency_ms),
            "remote sample {} outside [{lo}, {hi}]",
            f.latency_ms
        );
    }
    let nominal = (2 * base + service) as f64;
    ensure!(
        (remote.latency.mean_ms - nominal).abs() <= 2.0,
        "remote mean {} far from {nominal}",
        remote.latency.mean_ms
    );
    for r in reports.iter().filter(|r| r.category != BackendCategory::CloudSaas) {
        let service = registry.get(&r.backend_id).unwrap().service_time_ms;
        ensure!(
            r.results.iter().all(|f| f.latency_ms == service),
            "{} latency differs from its service time",
            r.backend_id
        );
        ensure!(
            remote.latency.mean_ms > r.latency.mean_ms,
            "remote mean {} not above {} ({})",
            remote.latency.mean_ms,
            r.backend_id,
            r.latency.mean_ms
        );
    }
    Ok(format!(
        "remote mean {:.2} ms in [{lo}, {hi}], nominal {nominal}",
        remote.latency.mean_ms
    ))
}

fn criterion_6() -> Outcome {
    let reports = default_reports();
    let started = Instant::now();
    let table = compare_backends(reports).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let expected = [
        ("aws-saas", 1.99, 28.0),
        ("mobilenet-ssd", 473.96, 33.30),
        ("hog-svm", 30.09, 30.0),
        ("haar", 22.86, 30.20),
    ];
    for (id, mem, cpu) in expected {
        let row = table
            .rows
            .iter()
            .find(|r| r.backend_id == id)
            .ok_or(format!("no row for {id}"))?;
        ensure!(
            row.memory_mb == mem && row.cpu_pct == cpu,
            "{id}: {} MB / {} %",
            row.memory_mb,
            row.cpu_pct
        );
    }
    let mem = |id: &str| table.rows.iter().find(|r| r.backend_id == id).unwrap().memory_mb;
    let ratio = mem("mobilenet-ssd") / mem("aws-saas");
    ensure!(ratio > 15.0, "memory ratio {ratio}");
    ensure!(elapsed < Duration::from_secs(1), "comparison took {elapsed:?}");
    Ok(format!("4 rows exact; DL/SaaS memory ratio {ratio:.1}"))
}

fn criterion_7() -> Outcome {
    let registry = ProfileRegistry::defaults();
    let dataset = generate_dataset(
        &DatasetSpec {
            frames_per_scenario: 100,
            devices: 5,
            ..Default::default()
        },
        1,
    )
    .map_err(|e| e.to_string())?;
    let devices: Vec<DeviceId> = dataset.devices().into_iter().collect();
    let (mut lost_acks, mut lost_requests) = (0, 0);
    for trial in 0..100u64 {
        let cloud = Arc::new(
            CloudService::new(CloudConfig {
                seed: trial,
                ..CloudConfig::default()
            })
            .unwrap(),
        );
        cloud.subscribe("phone", SubscriptionFilter::default()).unwrap();
        let mut sessions = BTreeMap::new();
        let mut streams = Vec::new();
        let mut issuer = EventIdIssuer::new();
        for d in &devices {
            let (_, cred) = cloud.register_device(d, BTreeMap::new()).unwrap();
            sessions.insert(d.clone(), cloud.authenticate(d, &cred.secret).unwrap());
            let script = MotionScript::evenly_spaced(&dataset, d, 2000, 1000);
            streams.push(run_motion_script(&script, &dataset, &mut issuer).unwrap());
        }
        let expected: BTreeSet<String> = streams.iter().flatten().map(|(e, _)| e.event_id.to_string()).collect();
        ensure!(expected.len() == 500, "trial {trial}: {} events", expected.len());

        let flaky = FlakyIngest::new(cloud.clone(), 0.3, trial).unwrap();
        let mut edge = EdgeConfig::new("hog-svm", 90.0);
        edge.retry = RetryPolicy {
            max_attempts: 3,
            backoff_ms: 10,
        };
        edge.queue_capacity = 8;
        let detector = SimulatedDetector::new(registry.get("hog-svm").unwrap().clone(), trial);
        let out = run_pipeline(streams, &edge, &detector, &flaky, &sessions).map_err(|e| e.to_string())?;
        // dead letters are sent again in order until the queue is empty
        let mut forwarder = Forwarder::new(edge.retry).unwrap();
        for letter in &out.dead_letters {
            let _ = forwarder.forward(&letter.record, &sessions[&letter.record.device_id], &flaky);
        }
        let mut rounds = 0;
        while !forwarder.dead_letters().is_empty() {
            rounds += 1;
            ensure!(rounds < 100, "trial {trial}: dead letters never drained");
            forwarder.redrive(|d| sessions.get(d).cloned(), &flaky);
        }
        cloud.drain();
        lost_acks += flaky.lost_acks();
        lost_requests += flaky.lost_requests();

        let stored: Vec<String> = cloud.store().all().iter().map(|r| r.event_id.to_string()).collect();
        ensure!(stored.len() == 500, "trial {trial}: {} stored records", stored.len());
        ensure!(
            stored.iter().cloned().collect::<BTreeSet<_>>() == expected,
            "trial {trial}: stored set differs"
        );

        for d in &devices {
            let seqs: Vec<u64> = cloud
                .stream()
                .snapshot()
                .iter()
                .filter(|r| &r.payload.device_id == d && !r.duplicate)
                .map(|r| r.payload.event_id.sequence())
                .collect();
            ensure!(
                seqs.windows(2).all(|w| w[0] < w[1]),
                "trial {trial}: {d} ingested out of order"
            );
        }

        let log = cloud.notifier().subscription("phone").unwrap().delivery_log;
        let notified: BTreeSet<String> = log.iter().map(|n| n.event_id.to_string()).collect();
        ensure!(
            log.len() == 500 && notified == expected,
            "trial {trial}: {} notifications",
            log.len()
        );
    }
    ensure!(lost_acks > 0 && lost_requests > 0, "fault injection never fired");
    Ok(format!(
        "100 trials, 0 violations ({lost_requests} lost requests, {lost_acks} lost acks injected)"
    ))
}

/// Recount by enumerating every vocabulary label of the frame's scenario.
fn brute_force(pairs: &[(ScenarioKind, BTreeSet<String>, BTreeSet<String>)]) -> BTreeMap<ScenarioKind, [u64; 4]> {
    let mut out: BTreeMap<ScenarioKind, [u64; 4]> = BTreeMap::new();
    for (kind, truth, pred) in pairs {
        let c = out.entry(*kind).or_default();
        let mut any = false;
        for label in kind.vocabulary() {
            let (t, p) = (truth.contains(*label), pred.contains(*label));
            match (t, p) {
                (true, true) => c[0] += 1,
                (true, false) => c[1] += 1,
                (false, true) => c[2] += 1,
                (false, false) => continue,
            }
            any = true;
        }
        if !any {
            c[3] += 1;
        }
    }
    out
}

fn criterion_8() -> Outcome {
    let registry = ProfileRegistry::defaults();
    let ids = registry.ids().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mismatches = 0;
    for trial in 0..200 {
        let n = rng.random_range(1..=50);
        let n_devices = rng.random_range(1..=3);
        let entries: Vec<ManifestEntry> = (0..n)
            .map(|i| {
                let kind = ScenarioKind::ALL[rng.random_range(0..5)];
                let vocab = kind.vocabulary();
                let labels: BTreeSet<String> = (0..rng.random_range(0..=2))
                    .map(|_| vocab[rng.random_range(0..vocab.len())].to_string())
                    .collect();
                ManifestEntry {
                    frame_id: format!("t{trial}-f{i}"),
                    scenario: kind,
                    truth_identity: (kind == ScenarioKind::FaceRecognition && !labels.is_empty())
                        .then(|| "alice".to_string()),
                    truth_labels: labels.into_iter().collect(),
                    device_id: DeviceId::new(format!("door-{}", rng.random_range(0..n_devices))).unwrap(),
                }
            })
            .collect();
        let dataset = Dataset::new(entries).map_err(|e| e.to_string())?;
        let backend = &ids[rng.random_range(0..ids.len())];
        let threshold = if rng.random_bool(0.5) { 90.0 } else { 70.0 };
        let seed = rng.random::<u64>();
        let exp = Experiment::new(dataset.clone(), backend.as_str())
            .with_seed(seed)
            .with_threshold(threshold);
        let report = run_experiment(&exp).map_err(|e| format!("trial {trial}: {e}"))?;

        // raw pairs: truth from the manifest, prediction replayed from the
        // backend draw with the threshold applied
        let profile = registry.get(backend).unwrap();
        let pairs: Vec<_> = dataset
            .entries()
            .iter()
            .map(|e| {
                let frame = dataset.resolve(&e.frame_id, 0).unwrap();
                let raw = simulate_detect(&frame, frame.scenario, profile, seed).unwrap();
                let kept = apply_confidence_threshold(&raw, threshold).unwrap();
                let pred: BTreeSet<String> = kept.iter().map(|d| d.label.name.clone()).collect();
                let truth: BTreeSet<String> = e.truth_labels.iter().cloned().collect();
                (e.scenario, truth, pred)
            })
            .collect();
        let oracle = brute_force(&pairs);
        let harness: BTreeMap<ScenarioKind, [u64; 4]> = report
            .scenarios
            .iter()
            .map(|m| (m.scenario, [m.counts.tp, m.counts.fn_, m.counts.fp, m.counts.tn]))
            .collect();
        if oracle != harness {
            mismatches += 1;
            eprintln!("trial {trial}: harness {harness:?} oracle {oracle:?}");
        }
    }
    ensure!(mismatches == 0, "{mismatches} of 200 datasets disagree");
    Ok("200 datasets, 0 mismatches".into())
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dataset = generate_dataset(
        &DatasetSpec {
            devices: 3,
            ..Default::default()
        },
        9,
    )
    .map_err(|e| e.to_string())?;
    dataset
        .save(&dir.path().join("frames.ndjson"))
        .map_err(|e| e.to_string())?;
    let mut cfg = ExperimentConfig::new("frames.ndjson", "aws-saas");
    cfg.seed = 9;
    cfg.ingest_failure_rate = 0.2;
    cfg.subscribers = vec!["phone".into()];
    let path = dir.path().join("experiment.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).map_err(|e| e.to_string())?;
    let run = || -> Result<String, String> {
        let exp = ExperimentConfig::load(&path)
            .and_then(ExperimentConfig::into_experiment)
            .map_err(|e| e.to_string())?;
        run_experiment(&exp)
            .and_then(|r| r.to_json())
            .map_err(|e| e.to_string())
    };
    let (a, b) = (run()?, run()?);
    ensure!(a.as_bytes() == b.as_bytes(), "reports differ");
    Ok(format!("two runs, {} identical bytes", a.len()))
}

fn criterion_10() -> Outcome {
    let dir = golden_dir();
    let live = run_script(&golden_cloud());
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        for (name, ex) in &live {
            std::fs::write(dir.join(format!("{name}.json")), ex.to_file_text()).map_err(|e| e.to_string())?;
        }
    }
    let mut endpoints = BTreeSet::new();
    let replay = golden_cloud();
    for (name, ex) in &live {
        let path = dir.join(format!("{name}.json"));
        let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        ensure!(
            ex.to_file_text() == text,
            "{name}: live exchange differs from golden file"
        );
        let parsed: Exchange = serde_json::from_str(&text).map_err(|e| format!("{name}: {e}"))?;
        ensure!(parsed.to_file_text() == text, "{name}: golden file does not round-trip");
        let again = doorbell_core::protocol::Transport::call(&replay, &parsed.request).map_err(|e| e.to_string())?;
        ensure!(again == parsed.response, "{name}: replayed response differs");
        let route = if parsed.request.path.starts_with("/blobs/") {
            "/blobs/{ref}".to_string()
        } else {
            parsed.request.path.clone()
        };
        endpoints.insert((format!("{:?}", parsed.request.method), route));
    }
    let inventory: BTreeSet<_> = doorbell_core::cloud::ENDPOINTS
        .iter()
        .map(|(m, p)| (format!("{m:?}"), p.to_string()))
        .collect();
    ensure!(
        inventory.is_subset(&endpoints),
        "endpoints without golden coverage: {:?}",
        inventory.difference(&endpoints).collect::<Vec<_>>()
    );

    let known = &live
        .iter()
        .find(|(n, _)| n == "06-detect-faces-known")
        .unwrap()
        .1
        .response;
    let unknown = &live
        .iter()
        .find(|(n, _)| n == "07-detect-faces-unknown")
        .unwrap()
        .1
        .response;
    let category = |r: &doorbell_core::protocol::ApiResponse| {
        r.body.data.as_ref().unwrap()["face_matches"][0]["identity"]["category"].clone()
    };
    ensure!(
        category(known) == "family",
        "enrolled face came back as {}",
        category(known)
    );
    ensure!(
        category(unknown) == "unknown",
        "stranger came back as {}",
        category(unknown)
    );
    Ok(format!(
        "{} exchanges, {} endpoints, bit-exact",
        live.len(),
        inventory.len()
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "metric reproduction", Some(1), criterion_1),
        (2, "F1 reproduction", Some(1), criterion_2),
        (3, "end-to-end calibration", Some(30), criterion_3),
        (4, "threshold study", Some(30), criterion_4),
        (5, "latency ordering", Some(30), criterion_5),
        (6, "resource table", None, criterion_6),
        (7, "pipeline properties", Some(60), criterion_7),
        (8, "oracle equivalence", Some(60), criterion_8),
        (9, "determinism", None, criterion_9),
        (10, "protocol conformance", None, criterion_10),
    ];
    let mut failed = 0;
    for (n, name, budget, check) in criteria {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = started.elapsed();
        let result = match (result, budget) {
            (Ok(_), Some(secs)) if elapsed > Duration::from_secs(secs) => {
                Err(format!("took {elapsed:.2?}, budget {secs} s"))
            }
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("PASS criterion {n:>2} {name} ({elapsed:.2?}): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {n:>2} {name} ({elapsed:.2?}): {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
