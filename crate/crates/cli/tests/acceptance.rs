//! Release gate. Prints one PASS/FAIL line per criterion and exits nonzero
//! if any criterion fails that is not listed in `KNOWN_FAILURES`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde_json::Value;
use streetpattern_core::cluster::{choose_k, fit, select_k, silhouette};
use streetpattern_core::datastore::{
    generate_synthetic_region, load_dataset, save_dataset, RegionDataset, SampleRecord, StoredModel, SynthSpec,
};
use streetpattern_core::features::{category_histogram, reduce_to_major, select_features, MAJOR_CLASSES, NUM_CLASSES};
use streetpattern_core::geo::{bearing, haversine_distance};
use streetpattern_core::routeviz::{segment_route, TrajectorySample};
use streetpattern_core::service::ROUTE_SET_SCHEMA;
use streetpattern_core::vapattern::build_patterns;
use streetpattern_core::{
    ClusteringConfig, FeatureKind, FeatureMatrix, GeoPoint, KStrategy, LabelMask, Method, Polyline, RouteTrajectory,
    Side,
};

/// Criteria expected to fail; see the README.
const KNOWN_FAILURES: &[&str] = &["planted-recovery"];

type Check = Result<String, String>;
type Criterion = fn() -> Check;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || format!("took {:.2} s, limit {limit_s} s", elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------- oracles

/// Initial bearing from unit vectors: the chord projected onto the local
/// north and east axes at the start point.
fn bearing_oracle(p1: GeoPoint, p2: GeoPoint) -> f64 {
    let v = |p: GeoPoint| {
        let (phi, lam) = (p.lat.to_radians(), p.lon.to_radians());
        [phi.cos() * lam.cos(), phi.cos() * lam.sin(), phi.sin()]
    };
    let (a, b) = (v(p1), v(p2));
    let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let (phi, lam) = (p1.lat.to_radians(), p1.lon.to_radians());
    let north = [-phi.sin() * lam.cos(), -phi.sin() * lam.sin(), phi.cos()];
    let east = [-lam.sin(), lam.cos(), 0.0];
    let dot = |x: [f64; 3], y: [f64; 3]| x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
    dot(d, east).atan2(dot(d, north)).to_degrees().rem_euclid(360.0)
}

/// Mean silhouette straight from the definition; singletons score 0.
fn silhouette_oracle(rows: &[Vec<f64>], labels: &[u32]) -> f64 {
    let n = rows.len();
    let dist = |i: usize, j: usize| rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let clusters: Vec<u32> = {
        let mut c = labels.to_vec();
        c.sort_unstable();
        c.dedup();
        c
    };
    let mut total = 0.0;
    for i in 0..n {
        let mean_to = |c: u32| {
            let others: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == c).collect();
            others.iter().map(|&j| dist(i, j)).sum::<f64>() / others.len() as f64
        };
        if labels.iter().filter(|&&l| l == labels[i]).count() == 1 {
            continue;
        }
        let a = mean_to(labels[i]);
        let b = clusters.iter().filter(|&&c| c != labels[i]).map(|&c| mean_to(c)).fold(f64::INFINITY, f64::min);
        if a.max(b) > 0.0 {
            total += (b - a) / a.max(b);
        }
    }
    total / n as f64
}

/// Adjusted Rand index via the pair-counting contingency table.
fn adjusted_rand(a: &[u32], b: &[u32]) -> f64 {
    let mut table: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    let mut ra: BTreeMap<u32, u64> = BTreeMap::new();
    let mut rb: BTreeMap<u32, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let c2 = |n: u64| (n * n.saturating_sub(1) / 2) as f64;
    let index: f64 = table.values().map(|&n| c2(n)).sum();
    let sa: f64 = ra.values().map(|&n| c2(n)).sum();
    let sb: f64 = rb.values().map(|&n| c2(n)).sum();
    let expected = sa * sb / c2(a.len() as u64);
    (index - expected) / ((sa + sb) / 2.0 - expected)
}

// --------------------------------------------------------------- criteria

fn geometry_oracle() -> Check {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut pairs = 0;
    while pairs < 1000 {
        let lat = rng.random_range(-80.0..80.0);
        let lon = rng.random_range(-179.0..179.0);
        let span = 0.009 / f64::cos(f64::to_radians(lat));
        let p1 = GeoPoint::new(lat, lon).unwrap();
        let p2 = GeoPoint::new(lat + rng.random_range(-0.009..0.009), lon + rng.random_range(-span..span)).unwrap();
        let d = haversine_distance(p1, p2);
        if !(0.5..1000.0).contains(&d) {
            continue;
        }
        let got = bearing(p1, p2).map_err(|e| e.to_string())?;
        let diff = (got - bearing_oracle(p1, p2)).abs();
        worst = worst.max(diff.min(360.0 - diff));
        pairs += 1;
    }
    ensure(worst <= 1e-6, || format!("max deviation {worst:e} deg"))?;

    let o = GeoPoint::new(41.15, -81.36).unwrap();
    let cardinals = [
        (GeoPoint::new(41.151, -81.36).unwrap(), 0.0),
        (GeoPoint::new(0.0, 0.001).unwrap(), 90.0),
        (GeoPoint::new(41.149, -81.36).unwrap(), 180.0),
        (GeoPoint::new(0.0, -0.001).unwrap(), 270.0),
    ];
    for (i, (p, want)) in cardinals.into_iter().enumerate() {
        let from = if i % 2 == 0 { o } else { GeoPoint::new(0.0, 0.0).unwrap() };
        let got = bearing(from, p).map_err(|e| e.to_string())?;
        ensure(got == want, || format!("cardinal {want}: got {got}"))?;
    }
    within(start.elapsed(), 1.0)?;
    Ok(format!("1000 pairs, max deviation {worst:.1e} deg, cardinals exact"))
}

fn silhouette_equivalence() -> Check {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let k = rng.random_range(2..=5);
        let n = rng.random_range(k..=200);
        let dims = rng.random_range(1..=8);
        let rows: Vec<Vec<f64>> =
            (0..n).map(|_| (0..dims).map(|_| rng.random_range(-5.0..5.0f32) as f64).collect()).collect();
        let mut labels: Vec<u32> =
            (0..n).map(|i| if i < k { i as u32 } else { rng.random_range(0..k as u32) }).collect();
        labels.shuffle(&mut rng);
        let m = FeatureMatrix::from_rows(FeatureKind::Latent, &rows);
        let got = silhouette(&m, &labels).map_err(|e| e.to_string())?;
        worst = worst.max((got - silhouette_oracle(&rows, &labels)).abs());
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    within(start.elapsed(), 10.0)?;
    Ok(format!("50 instances, max deviation {worst:.1e}"))
}

fn planted_recovery() -> Check {
    let start = Instant::now();
    let ds = generate_synthetic_region(&SynthSpec::new(4, 500, 16, 10.0, 7)).map_err(|e| e.to_string())?;
    let latent = ds.latent.as_ref().unwrap();
    let base = ClusteringConfig::new(Method::KMeans, 2).with_seed(7);
    let report = select_k(latent, &base, 2, 8, KStrategy::MaxScore).map_err(|e| e.to_string())?;
    let max_score = report.chosen_k;
    let pre_drop = choose_k(&report.per_k, KStrategy::PreDrop).unwrap_or(0);
    let model = fit(latent, &ClusteringConfig::new(Method::KMeans, 4).with_seed(7)).map_err(|e| e.to_string())?;
    let ari = adjusted_rand(&model.assignments, ds.planted_labels.as_ref().unwrap());
    let elapsed = start.elapsed();
    let detail = format!("MaxScore k={max_score}, PreDrop k={pre_drop}, ARI {ari:.4}, {:.2} s", elapsed.as_secs_f64());
    ensure(max_score == 4 && pre_drop == 4 && ari >= 0.99, || detail.clone())?;
    within(elapsed, 10.0)?;
    Ok(detail)
}

fn reference_vector() -> Check {
    let mut labels = vec![8u8; 100 * 100];
    labels[..3100].fill(0);
    labels[3100..3400].fill(1);
    labels[3400..5200].fill(2);
    labels.shuffle(&mut StdRng::seed_from_u64(4));
    let mask = LabelMask::new(100, 100, labels).map_err(|e| e.to_string())?;
    let v = category_histogram(&mask).map_err(|e| e.to_string())?;
    let want = [(0, 0.31), (1, 0.03), (2, 0.18), (18, 0.0)];
    for (i, x) in want {
        ensure(v.0[i] == x, || format!("class {i}: {} != {x}", v.0[i]))?;
    }
    let major = reduce_to_major(&v);
    ensure(major.0[..3] == [0.31, 0.03, 0.18], || format!("reduced {:?}", major.0))?;
    ensure(major.0[3] == v.0[8], || "vegetation not copied".into())?;
    Ok("Road 0.31, Sidewalk 0.03, Building 0.18 before and after reduction".into())
}

fn feature_selection() -> Check {
    let mut rng = StdRng::seed_from_u64(5);
    let rows: Vec<Vec<f64>> = (0..500)
        .map(|_| {
            let mut r = vec![0.02; NUM_CLASSES];
            for &j in &MAJOR_CLASSES {
                r[j] = rng.random_range(0.01..0.3);
            }
            r
        })
        .collect();
    let synth = generate_synthetic_region(&SynthSpec::new(4, 100, 8, 10.0, 5)).map_err(|e| e.to_string())?;
    let corpora = [FeatureMatrix::from_rows(FeatureKind::Category19, &rows), synth.cat19.unwrap()];
    for (name, m) in ["uniform", "synthetic"].iter().zip(&corpora) {
        let sel = select_features(m, 1.0).map_err(|e| e.to_string())?;
        let mut got = sel.selected.clone();
        got.sort_unstable();
        ensure(got == MAJOR_CLASSES, || format!("{name} corpus selected {got:?}"))?;
    }
    Ok(format!("selected {MAJOR_CLASSES:?} on both corpora"))
}

fn majority_segments() -> Check {
    let mut rng = StdRng::seed_from_u64(6);
    let origin = GeoPoint::new(41.15, -81.36).unwrap();
    for t in 0..1000 {
        let mut pts = vec![origin];
        for _ in 0..rng.random_range(1..6) {
            let last = *pts.last().unwrap();
            let p =
                GeoPoint::new(last.lat + rng.random_range(-0.004..0.004), last.lon + rng.random_range(-0.004..0.004));
            pts.push(p.unwrap());
        }
        let Ok(line) = Polyline::from_points_dedup(pts) else { continue };
        let len = line.length_m();
        let n = rng.random_range(0..300);
        let patterns = rng.random_range(1..6u32);
        let mut dist: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=len)).collect();
        dist.sort_by(f64::total_cmp);
        dist.dedup();
        let samples: Vec<TrajectorySample> = dist
            .iter()
            .enumerate()
            .map(|(i, &d)| TrajectorySample {
                sample_id: i as u32,
                distance_m: d,
                pattern: rng.random_range(0..patterns),
            })
            .collect();
        let traj = RouteTrajectory::new("1", Side::Left, "c", line, samples.clone()).map_err(|e| e.to_string())?;
        let seg_len = rng.random_range(40.0..500.0);
        let segs = segment_route(&traj, seg_len).map_err(|e| e.to_string())?;

        ensure(segs[0].start_m == 0.0, || format!("trajectory {t}: starts at {}", segs[0].start_m))?;
        ensure((segs.last().unwrap().end_m - len).abs() <= 1.0, || format!("trajectory {t}: does not reach the end"))?;
        for w in segs.windows(2) {
            ensure(w[0].end_m == w[1].start_m, || format!("trajectory {t}: gap at {}", w[0].end_m))?;
        }
        let last = segs.len() - 1;
        for (i, s) in segs.iter().enumerate() {
            let mut counts = vec![0usize; patterns as usize];
            for x in &samples {
                if x.distance_m >= s.start_m && (x.distance_m < s.end_m || i == last) {
                    counts[x.pattern as usize] += 1;
                }
            }
            let top = *counts.iter().max().unwrap();
            let mode = (top > 0).then(|| counts.iter().position(|&c| c == top).unwrap() as u32);
            ensure(s.dominant_pattern == mode, || {
                format!("trajectory {t} segment {i}: {:?} vs mode {mode:?}", s.dominant_pattern)
            })?;
        }
    }
    Ok("1000 trajectories, every segment matches the exhaustive mode".into())
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn dataset_identity() -> Check {
    let one = {
        let mut ds = RegionDataset::empty("single");
        ds.samples.push(SampleRecord {
            id: 0,
            lat: 41.15,
            lon: -81.36,
            side: Side::Right,
            view_angle_deg: 90.0,
            segment_ref: "main".into(),
            image_path: Some("images/000000.jpg".into()),
            capture_date: Some("2019-07".into()),
        });
        let mut row = vec![0.0; NUM_CLASSES];
        row[0] = 0.31;
        row[10] = 0.69;
        ds.cat19 = Some(FeatureMatrix::from_rows(FeatureKind::Category19, &[row]));
        ds
    };
    let full = {
        let mut ds = generate_synthetic_region(&SynthSpec::new(4, 500, 16, 10.0, 7)).map_err(|e| e.to_string())?;
        let model = fit(ds.latent.as_ref().unwrap(), &ClusteringConfig::new(Method::KMeans, 4).with_seed(7))
            .map_err(|e| e.to_string())?;
        ds.catalog = Some(build_patterns(&model, ds.cat6.as_ref().unwrap(), ds.region()).map_err(|e| e.to_string())?);
        ds.model = Some(StoredModel { model, features: FeatureKind::Latent });
        ds
    };
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    for (name, ds) in [("0", RegionDataset::empty("empty")), ("1", one), ("2000", full)] {
        let (a, b) = (tmp.path().join(format!("{name}-a")), tmp.path().join(format!("{name}-b")));
        save_dataset(&ds, &a).map_err(|e| e.to_string())?;
        let loaded = load_dataset(&a).map_err(|e| e.to_string())?;
        ensure(loaded.len() == ds.len(), || format!("{name}: {} samples reloaded", loaded.len()))?;
        save_dataset(&loaded, &b).map_err(|e| e.to_string())?;
        let (fa, fb) = (dir_bytes(&a), dir_bytes(&b));
        ensure(fa.keys().eq(fb.keys()), || format!("{name}: file sets differ"))?;
        for (file, bytes) in &fa {
            ensure(fb[file] == *bytes, || format!("{name}: {file} differs"))?;
        }
    }
    Ok("0, 1 and 2000 samples round-trip byte-identical".into())
}

fn end_to_end() -> Check {
    let bin = env!("CARGO_BIN_EXE_streetpattern");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let region = tmp.path().join("region");
    let region = region.to_str().unwrap();
    let run = |args: &[&str]| -> Result<String, String> {
        let out = Command::new(bin).args(args).output().map_err(|e| e.to_string())?;
        ensure(out.status.success(), || format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))?;
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    };
    let report = run(&["synth", "--out", region])?;
    run(&["cluster", "--region", region, "--k", "4", "--seed", "7"])?;
    let words: Vec<&str> =
        report.lines().find(|l| l.starts_with("fixture route:")).unwrap().split_whitespace().collect();
    let after = |flag: &str| words[words.iter().position(|w| *w == flag).unwrap() + 1];
    let (origin, dest) = (after("--origin"), after("--dest"));

    let mut outputs = Vec::new();
    let mut slowest = Duration::ZERO;
    for tag in ["a", "b"] {
        let geo = tmp.path().join(format!("{tag}.geojson"));
        let json = tmp.path().join(format!("{tag}.json"));
        let start = Instant::now();
        run(&[
            "analyze",
            "--region",
            region,
            "--origin",
            origin,
            "--dest",
            dest,
            "--out",
            geo.to_str().unwrap(),
            "--json",
            json.to_str().unwrap(),
        ])?;
        slowest = slowest.max(start.elapsed());
        outputs.push((fs::read(geo).unwrap(), fs::read(json).unwrap()));
    }
    ensure(outputs[0] == outputs[1], || "repeated runs differ".into())?;

    let set: Value = serde_json::from_slice(&outputs[0].1).map_err(|e| e.to_string())?;
    let schema: Value = serde_json::from_str(ROUTE_SET_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).map_err(|e| e.to_string())?;
    let errors: Vec<String> = validator.iter_errors(&set).map(|e| e.to_string()).collect();
    ensure(errors.is_empty(), || format!("schema: {errors:?}"))?;
    let routes = set["routes"].as_array().unwrap();
    ensure(routes.len() == 3, || format!("{} routes", routes.len()))?;
    for r in routes {
        let sides: Vec<&str> =
            r["trajectories"].as_array().unwrap().iter().map(|t| t["side"].as_str().unwrap()).collect();
        ensure(sides == ["left", "right"], || format!("sides {sides:?}"))?;
    }
    within(slowest, 5.0)?;
    Ok(format!("3 routes x 2 sides, schema-valid, byte-identical, {:.2} s per run", slowest.as_secs_f64()))
}

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 8] = [
        ("geometry-oracle", geometry_oracle),
        ("silhouette-oracle", silhouette_equivalence),
        ("planted-recovery", planted_recovery),
        ("reference-vector", reference_vector),
        ("feature-selection", feature_selection),
        ("majority-segments", majority_segments),
        ("dataset-identity", dataset_identity),
        ("end-to-end-fixture", end_to_end),
    ];
    let mut unexpected = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                let known = KNOWN_FAILURES.contains(&name);
                println!("FAIL {name}: {detail}{}", if known { " (known)" } else { "" });
                if !known {
                    unexpected += 1;
                }
            }
        }
    }
    if unexpected > 0 {
        println!("{unexpected} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
