//! Acceptance suite. Each criterion prints one `PASS`/`FAIL` line; the process
//! exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use urbanform_core::metrics::{accuracy, confusion, iou, miou, percent, precision, recall, ConfusionMatrix, MetricsReport};
use urbanform_core::raster::{class_histogram, class_weights, decode_labels, ClassHistogram, LabelRaster, Weighting};
use urbanform_core::tilemath::{ground_resolution, quadkey_to_tile, tile_to_quadkey, TileCoord};
use urbanform_core::typology::{parse_code, ClassLabel, TypologyCode};
use urbanform_core::windowing::{extract_tiles, grid_windows, stitch, MergePolicy, Role, SplitSpec, WindowSpec};
use urbanform_core::{Exact, Scalar};
use urbanform_pipeline::backend::{run_inference, InferenceBackend};
use urbanform_pipeline::evaluate::evaluate_run;

use common::{blocky_labels, noisy_image, prepare, temp_dir};

type Outcome = Result<String, String>;

// Pinned tolerances and budgets.
const METRIC_ORACLE_BUDGET: Duration = Duration::from_secs(10);
const EQUATOR_RESOLUTION_M: f64 = 156_543.034;
const EQUATOR_RESOLUTION_TOL: f64 = 1e-3;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn random_pair(rng: &mut StdRng, max_side: usize) -> (LabelRaster, LabelRaster) {
    let (w, h) = (rng.random_range(1..=max_side), rng.random_range(1..=max_side));
    let mut gen = || (0..w * h).map(|_| rng.random_range(0u8..5)).collect::<Vec<_>>();
    let (g, p) = (gen(), gen());
    (LabelRaster::from_indices(w, h, &g).unwrap(), LabelRaster::from_indices(w, h, &p).unwrap())
}

fn typology_partition() -> Outcome {
    let expected: [(ClassLabel, &[&str]); 4] = [
        (ClassLabel::HighlyInformal, &["1/A", "2/A", "2/B"]),
        (ClassLabel::ModeratelyInformal, &["1/B", "1/C", "1/D", "2/C", "2/D", "3/A"]),
        (ClassLabel::ModeratelyFormal, &["3/B", "3/C", "3/D", "4/A", "4/B", "4/C"]),
        (ClassLabel::HighlyFormal, &["4/D"]),
    ];
    let mut sizes = Vec::new();
    for (class, codes) in expected {
        let want: BTreeSet<String> = codes.iter().map(|c| c.to_string()).collect();
        let got: BTreeSet<String> = TypologyCode::all().filter(|c| c.classify() == class).map(|c| c.to_string()).collect();
        ensure!(got == want, "{class}: got {got:?}, want {want:?}");
        for c in codes {
            ensure!(parse_code(c).map_err(|e| e.to_string())?.classify() == class, "{c} parsed to another class");
        }
        sizes.push(got.len());
    }
    ensure!(TypologyCode::all().count() == 16, "expected 16 codes");
    ensure!(sizes == [3, 6, 6, 1], "split {sizes:?}");
    Ok("16 codes, 3/6/6/1".into())
}

/// Per-class counts by a direct pixel scan, ignoring unrecognized ground truth.
fn scan(gt: &LabelRaster, pred: &LabelRaster, c: ClassLabel) -> (u64, u64, u64) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&g, &p) in gt.classes().iter().zip(pred.classes()) {
        if g == ClassLabel::Unrecognized {
            continue;
        }
        match (g == c, p == c) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => {}
        }
    }
    (tp, fp, fn_)
}

fn ratio(n: u64, d: u64) -> Option<Exact> {
    (d > 0).then(|| Exact::ratio(n, d))
}

fn metric_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5eed_0001);
    let start = Instant::now();
    let mut compared = 0;
    for case in 0..1000 {
        let (gt, pred) = random_pair(&mut rng, 64);
        let m = confusion(&gt, &pred, Some(ClassLabel::Unrecognized)).map_err(|e| e.to_string())?;
        let real: Vec<usize> = (0..gt.classes().len()).filter(|&i| gt.classes()[i].is_real()).collect();
        let correct = real.iter().filter(|&&i| gt.classes()[i] == pred.classes()[i]).count() as u64;
        let acc = accuracy::<Exact>(&m).ok();
        ensure!(acc == ratio(correct, real.len() as u64), "case {case}: accuracy {acc:?}");
        for c in ClassLabel::REAL {
            let (tp, fp, fn_) = scan(&gt, &pred, c);
            let k = usize::from(c.index());
            ensure!(iou::<Exact>(&m, k) == ratio(tp, tp + fp + fn_), "case {case}: IoU {c}");
            ensure!(precision::<Exact>(&m, k) == ratio(tp, tp + fp), "case {case}: precision {c}");
            ensure!(recall::<Exact>(&m, k) == ratio(tp, tp + fn_), "case {case}: recall {c}");
            compared += 3;
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < METRIC_ORACLE_BUDGET, "took {elapsed:?}, budget {METRIC_ORACLE_BUDGET:?}");
    Ok(format!("1000 pairs, {compared} per-class values exact, {elapsed:.2?}"))
}

fn worked_example() -> Outcome {
    let gt = LabelRaster::from_indices(4, 1, &[1, 1, 2, 2]).unwrap();
    let pred = LabelRaster::from_indices(4, 1, &[1, 2, 2, 2]).unwrap();
    let m = confusion(&gt, &pred, Some(ClassLabel::Unrecognized)).map_err(|e| e.to_string())?;
    let r = MetricsReport::<Exact>::from_confusion(&m).map_err(|e| e.to_string())?;
    ensure!(r.overall_accuracy == Exact::ratio(3, 4), "accuracy {}", r.overall_accuracy);
    ensure!(iou::<Exact>(&m, 1) == Some(Exact::ratio(1, 2)), "IoU 1");
    ensure!(iou::<Exact>(&m, 2) == Some(Exact::ratio(2, 3)), "IoU 2");
    ensure!(r.miou == Exact::ratio(7, 12), "mIoU {}", r.miou);
    Ok("accuracy 3/4, IoU 1/2 and 2/3, mIoU 7/12".into())
}

/// Every offset that is a multiple of the stride, plus the clamped final one.
fn enumerate_origins(dim: usize, size: usize, overlap: f64) -> Vec<usize> {
    let stride = ((size as f64) * (1.0 - overlap)).round().max(1.0) as usize;
    let last = dim - size;
    (0..=last).filter(|o| o % stride == 0 || *o == last).collect()
}

fn grid_round_trip() -> Outcome {
    let ex = |dim, overlap| grid_windows(dim, 513, &WindowSpec::new(513, overlap).unwrap()).map(|g| g.origins_x);
    ensure!(WindowSpec::new(513, 0.7).unwrap().stride() == 154, "stride");
    ensure!(ex(1026, 0.7).ok() == Some(vec![0, 154, 308, 462, 513]), "1026 @ 0.7: {:?}", ex(1026, 0.7));
    ensure!(ex(1000, 0.0).ok() == Some(vec![0, 487]), "1000 @ 0: {:?}", ex(1000, 0.0));

    let mut rng = StdRng::seed_from_u64(0x5eed_0004);
    let mut tiles = 0;
    for case in 0..200 {
        let (w, h) = (rng.random_range(513..=2052), rng.random_range(513..=2052));
        let overlap = if case % 2 == 0 { 0.0 } else { 0.7 };
        let spec = WindowSpec::new(513, overlap).unwrap();
        let grid = grid_windows(w, h, &spec).map_err(|e| e.to_string())?;
        ensure!(grid.origins_x == enumerate_origins(w, 513, overlap), "case {case}: x origins for {w}");
        ensure!(grid.origins_y == enumerate_origins(h, 513, overlap), "case {case}: y origins for {h}");

        let idx: Vec<u8> = (0..w * h).map(|_| rng.random_range(0u8..5)).collect();
        let labels = LabelRaster::from_indices(w, h, &idx).unwrap();
        let records = extract_tiles(&decode_labels(&labels), Some(&labels), &grid, Role::Test).map_err(|e| e.to_string())?;
        let placed: Vec<_> = records.iter().map(|r| (r.origin, r.label.as_ref().unwrap())).collect();
        let policy = if overlap == 0.0 { MergePolicy::LastWins } else { MergePolicy::MajorityVote };
        let back = stitch(&placed, w, h, policy).map_err(|e| e.to_string())?;
        ensure!(back.classes() == labels.classes(), "case {case}: {w}×{h} @ {overlap} not reproduced");
        tiles += records.len();
    }
    Ok(format!("200 rasters, {tiles} tiles, clamp examples match"))
}

fn ignore_semantics() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5eed_0005);
    for case in 0..500 {
        let (gt, pred) = random_pair(&mut rng, 48);
        let base = confusion(&gt, &pred, Some(ClassLabel::Unrecognized)).map_err(|e| e.to_string())?;
        let ignored: Vec<usize> = (0..gt.classes().len()).filter(|&i| !gt.classes()[i].is_real()).collect();
        let strategies: [&dyn Fn(&mut StdRng, usize) -> u8; 4] = [
            &|r, _| r.random_range(0..5),
            &|_, _| 0,
            &|_, i| gt.classes()[i].index() + 1,
            &|_, _| 4,
        ];
        for (s, adversary) in strategies.iter().enumerate() {
            let mut idx = pred.indices();
            for &i in &ignored {
                idx[i] = adversary(&mut rng, i);
            }
            let attacked = LabelRaster::from_indices(gt.width(), gt.height(), &idx).unwrap();
            let m = confusion(&gt, &attacked, Some(ClassLabel::Unrecognized)).map_err(|e| e.to_string())?;
            ensure!(m == base, "case {case}, strategy {s}: matrix changed");
            ensure!(m.ignored() == ignored.len() as u64, "case {case}: ignored count");
        }
        // a row of zeros for the ignore class, whatever the prediction
        ensure!((0..5).all(|p| base.get(0, p) == 0), "case {case}: ignore row populated");
    }
    Ok("500 rasters × 4 adversaries, matrix unchanged".into())
}

fn quadkey_and_resolution() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5eed_0006);
    for _ in 0..10_000 {
        let zoom = rng.random_range(1u8..=23);
        let n = 1u32 << zoom;
        let t = TileCoord::new(rng.random_range(0..n), rng.random_range(0..n), zoom).map_err(|e| e.to_string())?;
        let q = tile_to_quadkey(t);
        ensure!(q.len() == usize::from(zoom), "{t:?} → {q}");
        ensure!(quadkey_to_tile(&q).ok() == Some(t), "{t:?} → {q} → {:?}", quadkey_to_tile(&q));
    }
    let r0 = ground_resolution(0.0f64, 0).map_err(|e| e.to_string())?;
    ensure!((r0 - EQUATOR_RESOLUTION_M).abs() <= EQUATOR_RESOLUTION_TOL, "equator z0 {r0}");
    for lat in [0.0, 23.8, -45.0, 60.0, 85.0] {
        for z in 0..23 {
            let (a, b) = (ground_resolution(lat, z).unwrap(), ground_resolution(lat, z + 1).unwrap());
            ensure!(a == 2.0 * b, "lat {lat} zoom {z}: {a} vs 2 × {b}");
        }
    }
    Ok(format!("10000 quadkeys, z0 equator {r0:.6} m/px, exact halving"))
}

fn end_to_end() -> Outcome {
    let dir = temp_dir("acceptance-e2e");
    let labels = blocky_labels(2052, 2052, 57, 11);
    let image = noisy_image(&labels, 6, 3);
    let opts = urbanform_pipeline::dataset::GridOptions {
        train: WindowSpec::new(513, 0.7).unwrap(),
        test: WindowSpec::tiled(513).unwrap(),
        split: SplitSpec::new(0.7).unwrap(),
    };
    let manifest = prepare(&dir, &image, &labels, &opts);
    let run = |backend: &str, name: &str| -> Result<_, String> {
        let backend: InferenceBackend = backend.parse().map_err(|e| format!("{e}"))?;
        let preds = dir.join(name);
        run_inference(&backend, &manifest, &preds, Role::Test).map_err(|e| e.to_string())?;
        evaluate_run(&manifest, &preds, Some(&dir.join(format!("{name}-eval")))).map_err(|e| e.to_string())
    };

    let a = run("color-heuristic", "heuristic-a")?;
    let b = run("color-heuristic", "heuristic-b")?;
    ensure!(a.confusion == b.confusion && a.stitched == b.stitched, "heuristic runs differ");
    let ra = std::fs::read(dir.join("heuristic-a-eval/report.json")).unwrap();
    let rb = std::fs::read(dir.join("heuristic-b-eval/report.json")).unwrap();
    ensure!(ra == rb, "heuristic reports differ byte-wise");

    let identity = run("labels", "identity")?;
    ensure!(accuracy::<Exact>(&identity.confusion).ok() == Some(Exact::from_count(1)), "identity accuracy");
    ensure!(miou::<Exact>(&identity.confusion).ok() == Some(Exact::from_count(1)), "identity mIoU");

    let (train_rows, _) = SplitSpec::new(0.7).unwrap().rows(2052).unwrap();
    let region = urbanform_core::raster::PixelRect::new(0, train_rows, 2052, 2052 - train_rows);
    let hist = class_histogram(&labels, Some(region)).map_err(|e| e.to_string())?;
    let mut shares = Vec::new();
    for class in ClassLabel::REAL {
        let r = run(&format!("constant:{}", class.index()), &format!("constant-{}", class.index()))?;
        let got = accuracy::<Exact>(&r.confusion).map_err(|e| e.to_string())?;
        let want = Exact::ratio(hist.count(class), hist.real_total());
        ensure!(got == want, "constant {class}: {got} vs share {want}");
        shares.push(format!("{:.4}", want.as_f64()));
    }
    let _ = std::fs::remove_dir_all(&dir);
    Ok(format!(
        "{} test tiles, heuristic accuracy {}, identity 100%, constant shares {}",
        a.report.tiles.unwrap_or(0),
        percent(Some(a.report.metrics.overall_accuracy)),
        shares.join("/")
    ))
}

fn weights() -> Outcome {
    let w = |counts: [u64; 4]| class_weights::<Exact>(&ClassHistogram::from_real_counts(counts), Weighting::InverseFreq).map(|w| w.weights);
    ensure!(w([250; 4]).ok() == Some([0; 4].map(|_| Exact::from_count(1))), "equal histogram");
    let want = [Exact::ratio(1, 4), Exact::ratio(3, 4), Exact::ratio(3, 2), Exact::ratio(3, 2)];
    ensure!(w([300, 100, 50, 50]).ok() == Some(want), "{:?}", w([300, 100, 50, 50]));
    let mut rng = StdRng::seed_from_u64(0x5eed_0008);
    for _ in 0..200 {
        let counts = [0; 4].map(|_| rng.random_range(1u64..100_000));
        let k = rng.random_range(2u64..1000);
        ensure!(w(counts).ok() == w(counts.map(|c| c * k)).ok(), "{counts:?} × {k}");
    }
    let f = class_weights::<f64>(&ClassHistogram::from_real_counts([300, 100, 50, 50]), Weighting::InverseFreq).unwrap();
    ensure!(f.weights == [0.25, 0.75, 1.5, 1.5], "f64 weights {:?}", f.weights);
    Ok("equal → 1, {300,100,50,50} → {1/4,3/4,3/2,3/2}, scale invariant".into())
}

fn report_format() -> Outcome {
    let golden = [(0.75, "75.00%"), (0.60, "60.00%"), (0.86, "86.00%"), (0.99, "99.00%"), (0.94, "94.00%"), (0.905, "90.50%")];
    for (v, s) in golden {
        ensure!(percent(Some(v)) == s, "{v} → {}", percent(Some(v)));
    }
    let report = MetricsReport::<f64> {
        overall_accuracy: 0.75,
        miou: 0.60,
        per_class: Vec::new(),
        confusion: ConfusionMatrix::for_labels(Some(ClassLabel::Unrecognized)),
    };
    let lines = report.summary_lines();
    ensure!(lines[..2] == ["Accuracy: 75.00%", "mIoU: 60.00%"], "{lines:?}");
    Ok("75.00% 60.00% 86.00% 99.00% 94.00% 90.50%".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("typology partition", typology_partition),
        ("metric oracle equivalence", metric_oracle),
        ("worked metric example", worked_example),
        ("grid/stitch round trip", grid_round_trip),
        ("masking/ignore semantics", ignore_semantics),
        ("quadkey and resolution", quadkey_and_resolution),
        ("end-to-end synthetic pipeline", end_to_end),
        ("class weights", weights),
        ("report-format golden strings", report_format),
    ];
    // Reproducing the published field numbers would need the original
    // annotated ground truth, which is not available; the suites above stand in.
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let t = start.elapsed();
        match outcome {
            Ok(detail) => println!("PASS  {name} ({detail}) [{t:.2?}]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} [{t:.2?}]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
