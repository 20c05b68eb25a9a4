//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs without the libtest harness so the lines are always
//! shown, and sequentially so the timing criterion has the machine to itself.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use smkc::benchgen::{build_dataset, generate_window, IdPool, Protocol, Split};
use smkc::detector::ReferenceIndex;
use smkc::evalkit::report::format_cost;
use smkc::evalkit::{
    aggregate, auprc, auroc, cosine_collapse_diagnostic, mean_collisions, run_protocol,
    scaling_benchmark, sweep_m, tpr_at_fpr, AggregateRow, BenchConfig, DiagnosticConfig,
    ExperimentConfig, Method,
};
use smkc::kernelrep::{
    anchor_features, anchor_indices, band_features, build_representation, complexity_proxy,
    cos_kernel, BandwidthScope, ChannelSet, RepVariant,
};
use smkc::rng::gaussian_matrix;
use smkc::sketch::{build_hashed_sequence, HashConfig, Window};

const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn variant(s: &str) -> RepVariant {
    s.parse().unwrap()
}

fn feature_dims() -> Outcome {
    let expected = [
        ("full6", 24576),
        ("log3", 12288),
        ("base2", 8192),
        ("log3+band8", 1536),
        ("log3+band4", 768),
        ("log3+anchor16", 3072),
        ("log3+anchor8", 1536),
        ("full6+down16", 1536),
        ("seq", 16384),
    ];
    let w = generate_window(
        &Default::default(),
        &IdPool::new("tst", 1000),
        Split::Test,
        6,
        0.0,
        0,
        None,
    )
    .unwrap();
    let hs = build_hashed_sequence(&w, &HashConfig::with_buckets(128));
    let mut bad = Vec::new();
    for (name, dim) in expected {
        let v = variant(name);
        let built = build_representation(&hs, v).unwrap().feature_dim();
        if v.feature_dim(64, 256) != dim || built != dim {
            bad.push(format!("{name}={built}"));
        }
    }
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            "9 variants exact".into()
        } else {
            bad.join(" ")
        },
    )
}

fn complexity_proxies() -> Outcome {
    let expected = [
        ("full6", "1.0000"),
        ("log3", "0.5000"),
        ("log3+band8", "0.0625"),
        ("log3+band4", "0.0312"),
        ("log3+anchor16", "0.1250"),
        ("log3+anchor8", "0.0625"),
        ("full6+down16", "0.0625"),
        ("base2", "0.3333"),
    ];
    let bad: Vec<String> = expected
        .iter()
        .filter_map(|(name, want)| {
            let got = format_cost(complexity_proxy(&variant(name), 64, 256));
            (got != *want).then(|| format!("{name}={got}"))
        })
        .collect();
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            "8 proxies exact".into()
        } else {
            bad.join(" ")
        },
    )
}

fn collision_sweep() -> Outcome {
    let widths = [32, 64, 128, 256, 512];
    let table = [0.0406, 0.0208, 0.0114, 0.0051, 0.0026];
    let mut got = [0.0; 5];
    for &seed in &SEEDS {
        let gen = smkc::benchgen::GenConfig {
            seed,
            ..Default::default()
        };
        let ds = build_dataset(Protocol::HoldoutC, &gen).unwrap();
        for (k, &m) in widths.iter().enumerate() {
            got[k] += mean_collisions(ds.train.iter().map(|r| &r.window), m).0 / SEEDS.len() as f64;
        }
    }
    let close = got.iter().zip(&table).all(|(g, t)| (g - t).abs() <= 0.01);
    let monotone = got.windows(2).all(|p| p[1] < p[0]);
    let shown: Vec<String> = got.iter().map(|g| format!("{g:.4}")).collect();
    outcome(
        close && monotone,
        format!("value collisions {}", shown.join(" ")),
    )
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn diagnostic() -> Outcome {
    let d = cosine_collapse_diagnostic(
        &Default::default(),
        &HashConfig::default(),
        &DiagnosticConfig::default(),
    )
    .unwrap();
    let tasks_ok = d
        .rows
        .iter()
        .all(|r| (r.logdist_auroc - 1.0).abs() <= 0.02 && (0.25..=0.60).contains(&r.cosine_auroc));

    let w = generate_window(
        &Default::default(),
        &IdPool::new("tst", 1000),
        Split::Test,
        6,
        0.0,
        11,
        None,
    )
    .unwrap();
    let g = build_hashed_sequence(&w, &HashConfig::default()).g;
    let mut h = g.clone();
    for t in 0..h.rows() {
        let s = 0.25 + 0.1 * t as f64;
        h.row_mut(t).iter_mut().for_each(|v| *v *= s);
    }
    let rescale_cos = max_abs_diff(cos_kernel(&g).as_slice(), cos_kernel(&h).as_slice());
    let fig = d.figure;
    let mech_ok =
        rescale_cos <= 1e-6 && fig.max_cos_change <= 1e-6 && fig.max_logdist_change >= 0.5;
    let rows: Vec<String> = d
        .rows
        .iter()
        .map(|r| {
            format!(
                "{} cos {:.3} log {:.3}",
                r.task, r.cosine_auroc, r.logdist_auroc
            )
        })
        .collect();
    outcome(
        tasks_ok && mech_ok,
        format!(
            "{}; per-row rescale dCos {:.1e}; 2x segment dCos {:.1e} dLogDist {:.3}",
            rows.join(", "),
            rescale_cos,
            fig.max_cos_change,
            fig.max_logdist_change
        ),
    )
}

fn averaged(methods: &[Method], rates: &[f64]) -> Vec<AggregateRow> {
    let mut cfg = ExperimentConfig::default();
    cfg.gen.anomaly_rates = rates.to_vec();
    let run = run_protocol(Protocol::HoldoutC, methods, &cfg, &SEEDS).unwrap();
    aggregate(&run.rows, false)
}

fn find<'a>(rows: &'a [AggregateRow], name: &str, rate: f64) -> &'a AggregateRow {
    rows.iter()
        .find(|r| r.variant == name && (r.anomaly_rate - rate).abs() < 1e-12)
        .unwrap()
}

fn collapse_gap(full6_at_10: f64) -> Outcome {
    let rows = averaged(
        &[
            Method::RandProj(RepVariant::LOG3),
            Method::RandProj(RepVariant::COS3),
        ],
        &[0.10],
    );
    let log3 = find(&rows, "log3", 0.10).auprc_mean;
    let cos3 = find(&rows, "cos3", 0.10).auprc_mean;
    outcome(
        log3 - cos3 >= 0.3 && log3 >= full6_at_10 - 0.02,
        format!(
            "AUPRC log3 {log3:.4} cos3 {cos3:.4} full6 {full6_at_10:.4}; gap {:.4}",
            log3 - cos3
        ),
    )
}

fn detection_quality(rows: &[AggregateRow]) -> Outcome {
    let rates = [0.01, 0.05, 0.10, 0.20];
    let curve: Vec<f64> = rates
        .iter()
        .map(|&r| find(rows, "full6", r).auprc_mean)
        .collect();
    let at10 = find(rows, "full6", 0.10);
    let monotone = curve.windows(2).all(|p| p[1] > p[0]);
    let shown: Vec<String> = curve.iter().map(|a| format!("{a:.4}")).collect();
    outcome(
        at10.auprc_mean >= 0.35 && at10.auroc_mean >= 0.65 && monotone,
        format!(
            "full6 @0.10 AUPRC {:.4} AUROC {:.4}; AUPRC by rate {}",
            at10.auprc_mean,
            at10.auroc_mean,
            shown.join(" < ")
        ),
    )
}

fn m_insensitivity() -> Outcome {
    let out = sweep_m(
        &[32, 64, 128, 256, 512],
        Method::RandProj(RepVariant::FULL6),
        &ExperimentConfig::default(),
        &SEEDS,
        0.10,
    )
    .unwrap();
    let a: Vec<f64> = out.table.iter().map(|r| r.auprc_mean).collect();
    let range =
        a.iter().copied().fold(f64::MIN, f64::max) - a.iter().copied().fold(f64::MAX, f64::min);
    let shown: Vec<String> = a.iter().map(|x| format!("{x:.4}")).collect();
    outcome(
        range <= 0.03,
        format!("AUPRC {} (range {range:.4})", shown.join(" ")),
    )
}

fn scaling() -> Outcome {
    let bench = BenchConfig {
        lens: vec![64, 128],
        repetitions: 7,
        ..BenchConfig::default()
    };
    let rows = scaling_benchmark(
        &[RepVariant::FULL6, variant("log3+band8")],
        &ExperimentConfig::default(),
        &bench,
    )
    .unwrap();
    let get = |name: &str, len: usize| {
        rows.iter()
            .find(|r| r.variant == name && r.len == len)
            .unwrap()
    };
    let (f64_, f128) = (get("full6", 64), get("full6", 128));
    let (b64, b128) = (get("log3+band8", 64), get("log3+band8", 128));
    let full_growth = f128.build_seconds / f64_.build_seconds;
    let band_growth = b128.build_seconds / b64.build_seconds;
    let faster = b64.total_seconds < f64_.total_seconds && b128.total_seconds < f128.total_seconds;
    outcome(
        faster && full_growth >= 3.0 && band_growth <= 2.5,
        format!(
            "total @64 band8 {:.4}s vs full6 {:.4}s; build growth 64->128 full6 {full_growth:.2}x band8 {band_growth:.2}x",
            b64.total_seconds, f64_.total_seconds
        ),
    )
}

fn auroc_pairs(s: &[f64], l: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if l[i] && !l[j] {
                den += 1.0;
                num += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

fn threshold_sweep(s: &[f64], l: &[bool]) -> (f64, f64) {
    let pos = l.iter().filter(|&&x| x).count() as f64;
    let neg = l.len() as f64 - pos;
    let mut thr = s.to_vec();
    thr.sort_by(|a, b| b.total_cmp(a));
    thr.dedup();
    let (mut ap, mut prev, mut tpr) = (0.0, 0.0, 0.0f64);
    for t in thr {
        let tp = s.iter().zip(l).filter(|(x, y)| **x >= t && **y).count() as f64;
        let fp = s.iter().zip(l).filter(|(x, y)| **x >= t && !**y).count() as f64;
        ap += (tp / pos - prev) * tp / (tp + fp);
        prev = tp / pos;
        if fp / neg <= 0.2 {
            tpr = tpr.max(tp / pos);
        }
    }
    (ap, tpr)
}

fn metric_oracle() -> Result<usize, String> {
    let mut cases = 0;
    for n in 2..=8usize {
        for lab in 1..(1u32 << n) - 1 {
            let l: Vec<bool> = (0..n).map(|i| lab >> i & 1 == 1).collect();
            for code in 0..3usize.pow(n as u32) {
                let s: Vec<f64> = (0..n)
                    .map(|i| (code / 3usize.pow(i as u32) % 3) as f64)
                    .collect();
                let (ap, tpr) = threshold_sweep(&s, &l);
                let ok = (auroc(&s, &l).unwrap() - auroc_pairs(&s, &l)).abs() < 1e-12
                    && (auprc(&s, &l).unwrap() - ap).abs() < 1e-12
                    && tpr_at_fpr(&s, &l, 0.2).unwrap() == tpr;
                if !ok {
                    return Err(format!("metrics disagree on {s:?} {l:?}"));
                }
                cases += 1;
            }
        }
    }
    Ok(cases)
}

fn slice_oracle() -> f64 {
    let mut worst = 0.0f64;
    for i in 0..10 {
        let w = generate_window(
            &Default::default(),
            &IdPool::new("tst", 1000),
            Split::Test,
            1 + i,
            0.0,
            i,
            None,
        )
        .unwrap();
        let hs = build_hashed_sequence(&w, &HashConfig::default());
        let len = hs.len();
        let image = build_representation(&hs, RepVariant::FULL6).unwrap();
        let band = band_features(&hs, 8, ChannelSet::FULL6, BandwidthScope::AllPairs).unwrap();
        let anchor = anchor_features(&hs, 16, ChannelSet::FULL6, BandwidthScope::AllPairs).unwrap();
        let anchors = anchor_indices(len, 16);
        for k in 0..6 {
            let full = image.channel(k);
            for lag in 1..=8 {
                for t in 0..len - lag {
                    worst = worst.max(
                        (band.channel(k)[(lag - 1) * len + t] - full[t * len + t + lag]).abs(),
                    );
                }
            }
            for t in 0..len {
                for (j, &a) in anchors.iter().enumerate() {
                    worst = worst.max((anchor.channel(k)[t * 16 + j] - full[t * len + a]).abs());
                }
            }
        }
    }
    worst
}

fn knn_oracle() -> f64 {
    let refs = gaussian_matrix(300, 32, 1.0, 7, 1);
    let queries = gaussian_matrix(50, 32, 1.0, 7, 2);
    let rows: Vec<Vec<f64>> = (0..refs.rows()).map(|i| refs.row(i).to_vec()).collect();
    let index = ReferenceIndex::from_projected(rows.clone(), 20).unwrap();
    let unit = |v: &[f64]| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let mut worst = 0.0f64;
    for q in 0..queries.rows() {
        let uq = unit(queries.row(q));
        let mut d: Vec<f64> = rows
            .iter()
            .map(|r| 1.0 - unit(r).iter().zip(&uq).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        d.sort_by(f64::total_cmp);
        let want = d[..20].iter().sum::<f64>() / 20.0;
        worst = worst.max((index.score_projected(queries.row(q).to_vec()).unwrap() - want).abs());
    }
    worst
}

/// Expected `g` computed with an independent scalar implementation.
fn golden_oracle() -> f64 {
    let ids = ["alpha", "beta", "gamma"].map(String::from).to_vec();
    let x = vec![
        1.0, -2.0, 0.5, 0.0, 3.0, 0.0, 2.5, 0.0, -1.0, 0.25, 0.75, 1.5,
    ];
    let m = [
        true, true, true, false, true, false, true, false, true, true, true, true,
    ]
    .to_vec();
    let hs = build_hashed_sequence(
        &Window::new(ids, x, m, 4).unwrap(),
        &HashConfig::with_buckets(8),
    );
    let expected: [[f64; 16]; 4] = [
        [
            1.1547005383792517,
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
            -0.5773502691896258,
            0.2886751345948129,
            0.3464101615137755,
            -0.3464101615137755,
            -0.3464101615137755,
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
        ],
        [
            -3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -0.2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        ],
        [
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
            -1.7677669529663687,
            -0.7071067811865475,
            0.282842712474619,
            0.0,
            -0.282842712474619,
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
        ],
        [
            -0.43301270189221935,
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
            -0.14433756729740646,
            0.8660254037844387,
            0.3464101615137755,
            -0.3464101615137755,
            -0.3464101615137755,
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
        ],
    ];
    let flat: Vec<f64> = expected.iter().flatten().copied().collect();
    max_abs_diff(hs.g.as_slice(), &flat)
}

fn oracle_suites() -> Outcome {
    let metrics = metric_oracle();
    let slices = slice_oracle();
    let knn = knn_oracle();
    let golden = golden_oracle();
    let pass = metrics.is_ok() && slices <= 1e-9 && knn <= 1e-12 && golden <= 1e-12;
    let m = match metrics {
        Ok(n) => format!("metrics {n} cases exact"),
        Err(e) => e,
    };
    outcome(
        pass,
        format!(
            "{m}; band/anchor slice err {slices:.1e}; kNN err {knn:.1e}; golden g err {golden:.1e}"
        ),
    )
}

/// CSV files under `dir` with every timing column removed.
fn csv_without_timings(dir: &Path) -> BTreeMap<String, Vec<Vec<String>>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_none_or(|e| e != "csv") {
            continue;
        }
        let text = std::fs::read_to_string(&path).unwrap();
        let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
        let keep: Vec<bool> = rows[0]
            .iter()
            .map(|h| !h.ends_with("seconds") && !h.ends_with("seconds_mean"))
            .collect();
        let filtered = rows
            .iter()
            .map(|r| {
                r.iter()
                    .zip(&keep)
                    .filter(|(_, k)| **k)
                    .map(|(v, _)| v.to_string())
                    .collect()
            })
            .collect();
        out.insert(
            path.file_name().unwrap().to_string_lossy().into_owned(),
            filtered,
        );
    }
    out
}

fn determinism() -> Outcome {
    let dir = std::env::temp_dir().join(format!("smkc-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("config.json");
    std::fs::write(
        &cfg,
        r#"{"gen": {"train_per_c": 60, "val_per_c": 10, "test_per_c": 100}}"#,
    )
    .unwrap();
    let mut tables = Vec::new();
    for threads in ["1", "2"] {
        let out = dir.join(format!("threads{threads}"));
        let status = Command::new(env!("CARGO_BIN_EXE_smkc"))
            .args(["run", "--seeds", "0,1", "--threads", threads, "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        if !status.status.success() {
            return outcome(
                false,
                format!("run failed: {}", String::from_utf8_lossy(&status.stderr)),
            );
        }
        tables.push(csv_without_timings(&out));
    }
    let _ = std::fs::remove_dir_all(&dir);
    let same = tables[0] == tables[1];
    outcome(
        same && tables[0].len() == 5,
        format!(
            "{} CSV files identical across 1 and 2 threads: {same}",
            tables[0].len()
        ),
    )
}

fn main() -> ExitCode {
    let full6 = |rows: &[AggregateRow]| find(rows, "full6", 0.10).auprc_mean;
    let mut failed = 0;
    let mut report = |n: usize, name: &str, f: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {n:>2} {verdict} {name} [{:.1}s] {}",
            start.elapsed().as_secs_f64(),
            o.detail
        );
        failed += usize::from(!o.pass);
    };
    report(1, "feature-dimension exactness", &feature_dims);
    report(2, "complexity proxies", &complexity_proxies);
    report(3, "collision sweep", &collision_sweep);
    report(4, "cosine-collapse diagnostic", &diagnostic);
    let start = Instant::now();
    let rates = averaged(
        &[Method::RandProj(RepVariant::FULL6)],
        &[0.01, 0.05, 0.10, 0.20],
    );
    println!(
        "(full6 rate sweep over 3 seeds took {:.1}s)",
        start.elapsed().as_secs_f64()
    );
    report(5, "representation-collapse gap", &|| {
        collapse_gap(full6(&rates))
    });
    report(6, "directional detection quality", &|| {
        detection_quality(&rates)
    });
    report(7, "m-insensitivity", &m_insensitivity);
    report(8, "scaling behavior", &scaling);
    report(9, "oracle equivalence suites", &oracle_suites);
    report(10, "determinism across thread counts", &determinism);
    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
