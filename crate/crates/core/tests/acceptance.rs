//! Acceptance checks. Runs without the libtest harness and prints one
//! PASS/FAIL line per criterion; exits non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::SymmetricEigen;
use rand::Rng;

use common::{brute_idtp, brute_min, dense_layer, memory, random_costs, random_instance, seeded, small_config, two_tracks};
use refmot::assignment::hungarian;
use refmot::evalio::{evaluate, synthesize, Dataset, MotRecord, SynthConfig};
use refmot::geometry::{BBox, ImageSize};
use refmot::gradsuite::{run_suite, SuiteConfig, TOLERANCE};
use refmot::kalman::{predict_with, update_with, KalmanFilter, KalmanState, Mat4, Mat8, Vec8};
use refmot::refsearch::{rs_layer, Query, Reference, RsConfig, RsLayerParams, RsPrediction};
use refmot::session::{track_dataset, Association};
use refmot::tracker::{rs_cost, Detection, FnPredictor, StatePredictor, TrackStatus, Tracker, TrackerConfig};
use refmot::train::{build_pairs, center_error, init_classifier, train, Model, TrainConfig};

type Check = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn assignment_oracle() -> Check {
    let mut rng = seeded(1);
    let mut elapsed = Duration::ZERO;
    for k in 0..1000 {
        let c = random_costs(&mut rng);
        let t = Instant::now();
        let a = hungarian(&c);
        elapsed += t.elapsed();
        ensure!(a.len() == c.rows().min(c.cols()), "matrix {k}: {} pairs", a.len());
        let (got, want) = (a.cost(&c), brute_min(&c));
        ensure!(got == want, "matrix {k} ({}x{}): {got} vs brute force {want}", c.rows(), c.cols());
    }
    ensure!(elapsed < Duration::from_secs(1), "took {:.3}s", secs(elapsed));
    Ok(format!("1000 matrices up to 6x6 equal brute force, {:.4}s", secs(elapsed)))
}

fn attention_oracle() -> Check {
    let mut rng = seeded(2);
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let cfg = RsConfig {
            points: [3, 6, 12][trial % 3],
            ..small_config()
        };
        let mut params = RsLayerParams::init(&cfg, &mut rng);
        for t in params.tensors_mut() {
            for v in t.values_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        let sizes = [(rng.random_range(1..=4), rng.random_range(1..=4)), (2, 2), (1, 1)];
        let mem = memory(&mut rng, cfg.d_model, &sizes);
        let queries: Vec<Query> = (0..3)
            .map(|_| Query {
                point: [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
                embedding: (0..cfg.d_model).map(|_| rng.random_range(-1.0..1.0)).collect(),
            })
            .collect();
        let out = rs_layer(&params, &cfg, &queries, &mem).map_err(|e| e.to_string())?;
        for (q, o) in queries.iter().zip(&out) {
            for (a, b) in o.aggregated.iter().zip(dense_layer(&params, &cfg, q, &mem)) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    ensure!(worst <= 1e-10, "max abs difference {worst:e}");
    Ok(format!("100 instances, max abs difference {worst:.1e}"))
}

fn gradient_suite() -> Check {
    let t = Instant::now();
    let checks = run_suite(&SuiteConfig::default()).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let worst = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    for c in &checks {
        ensure!(c.passed(), "{} max relative error {:.3e}", c.name, c.max_rel_error);
    }
    ensure!(elapsed < Duration::from_secs(60), "took {:.1}s", secs(elapsed));
    Ok(format!(
        "{} ops x 100 draws, worst {worst:.2e} < {TOLERANCE:e}, {:.1}s",
        checks.len(),
        secs(elapsed)
    ))
}

fn is_psd(p: &Mat8) -> bool {
    let scale = p.abs().max().max(1.0);
    SymmetricEigen::new(*p).eigenvalues.iter().all(|&l| l >= -1e-9 * scale)
}

fn kalman_closed_form() -> Check {
    // (cx, vcx) block: P = [[p, c], [c, v]], Q = diag(q0, q1)
    let (p, c, v, q0, q1) = (2.0, 0.5, 3.0, 0.25, 0.125);
    let mut cov = Mat8::identity();
    cov[(0, 0)] = p;
    cov[(0, 4)] = c;
    cov[(4, 0)] = c;
    cov[(4, 4)] = v;
    let mut q = Mat8::zeros();
    q[(0, 0)] = q0;
    q[(4, 4)] = q1;
    let mut mean = Vec8::zeros();
    mean[0] = 1.0;
    mean[4] = 2.0;
    let s = predict_with(&KalmanState { mean, covariance: cov }, &q);
    let err = [
        s.mean[0] - 3.0,
        s.covariance[(0, 0)] - (p + 2.0 * c + v + q0),
        s.covariance[(0, 4)] - (c + v),
        s.covariance[(4, 4)] - (v + q1),
    ];
    ensure!(err.iter().all(|e| e.abs() <= 1e-12), "predict residuals {err:?}");

    // scalar update: prior var 1, noise var r → gain 1/(1+r)
    for (r, z) in [(1.0, 2.0), (3.0, -4.0), (0.25, 1.0)] {
        let prior = KalmanState {
            mean: Vec8::zeros(),
            covariance: Mat8::identity(),
        };
        let post = update_with(&prior, [z, 0.0, 0.0, 0.0], &(Mat4::identity() * r)).map_err(|e| e.to_string())?;
        let k = 1.0 / (1.0 + r);
        ensure!((post.mean[0] - k * z).abs() <= 1e-12, "update mean r={r}");
        ensure!((post.covariance[(0, 0)] - (1.0 - k)).abs() <= 1e-12, "update variance r={r}");
    }

    let kf = KalmanFilter::default();
    let mut rng = seeded(4);
    let mut s = kf.init([100.0, 100.0, 30.0, 60.0]);
    for cycle in 0..10_000 {
        s = kf.predict(&s);
        ensure!(is_psd(&s.covariance), "predicted covariance not PSD at cycle {cycle}");
        if rng.random_bool(0.8) {
            let h = rng.random_range(20.0..200.0);
            let z = [
                rng.random_range(0.0..1000.0),
                rng.random_range(0.0..1000.0),
                rng.random_range(5.0..100.0),
                h,
            ];
            s = kf.update(&s, z).map_err(|e| e.to_string())?;
            ensure!(is_psd(&s.covariance), "updated covariance not PSD at cycle {cycle}");
        }
        if rng.random_bool(0.01) {
            s = kf.init([50.0, 50.0, 10.0, rng.random_range(1.0..300.0)]);
        }
    }
    Ok("hand cases within 1e-12, PSD over 10000 predict/update cycles".into())
}

fn metrics_fixtures() -> Check {
    let gt = two_tracks(10);
    let r = evaluate(&gt, &gt, 0.5).map_err(|e| e.to_string())?;
    ensure!(
        (r.mota, r.idf1, r.ids, r.mt, r.ml) == (1.0, 1.0, 0, 1.0, 0.0),
        "perfect: {r:?}"
    );

    let swapped: Vec<MotRecord> = gt
        .iter()
        .map(|g| {
            let mut h = *g;
            if g.frame >= 6 {
                h.id = 3 - g.id;
            }
            h
        })
        .collect();
    let r = evaluate(&gt, &swapped, 0.5).map_err(|e| e.to_string())?;
    ensure!(
        (r.ids, r.mota, r.idf1) == (2, 0.9, 0.5),
        "swap: IDS {} MOTA {} IDF1 {}",
        r.ids,
        r.mota,
        r.idf1
    );

    let r = evaluate(&gt, &[], 0.5).map_err(|e| e.to_string())?;
    ensure!(
        (r.mota, r.idf1, r.fn_, r.fp, r.ids) == (0.0, 0.0, gt.len(), 0, 0),
        "all missed: {r:?}"
    );

    let mut rng = seeded(5);
    let mut instances = 0;
    for _ in 0..60 {
        let ids = rng.random_range(1..=5);
        let (gt, hyp) = random_instance(&mut rng, ids, 6);
        if gt.is_empty() {
            continue;
        }
        let r = evaluate(&gt, &hyp, 0.5).map_err(|e| e.to_string())?;
        let idtp = brute_idtp(&gt, &hyp);
        let want = 2.0 * idtp as f64 / (gt.len() + hyp.len()) as f64;
        ensure!(r.idtp == idtp && r.idf1 == want, "IDF1 {} vs brute force {want}", r.idf1);
        instances += 1;
    }
    Ok(format!("perfect, swap and all-missed exact; IDF1 equals brute force on {instances} instances"))
}

fn cost_properties() -> Check {
    let image = ImageSize::new(400, 300).unwrap();
    let mut rng = seeded(6);
    let at = |c: f64| vec![c, (1.0 - c * c).sqrt()];
    let pred = RsPrediction {
        track_id: 1,
        center: [0.5, 0.5],
        appearance: vec![1.0, 0.0],
        aux_centers: Vec::new(),
    };
    let cost = |lambda: f64, c1: f64, c2: f64, dx: f64, dy: f64| {
        let b = BBox::from_cxcywh(200.0 + dx, 150.0 + dy, 40.0, 80.0).unwrap();
        let d = Detection::new(b, 0.9, at(c2), 1).unwrap();
        rs_cost(&at(c1), &pred, [40.0, 80.0], &d, image, lambda, 1.0).unwrap()
    };
    for k in 0..1000 {
        let lambda = rng.random_range(0.05..0.95);
        let c1 = rng.random_range(0.05..0.9);
        let c2 = rng.random_range(0.05..0.9);
        let (dx, dy) = (rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0));
        let base = cost(lambda, c1, c2, dx, dy);
        let step = rng.random_range(0.01..0.05);
        ensure!(cost(lambda, c1, c2, dx * 1.1 + dx.signum(), dy * 1.1) > base, "config {k}: distance");
        ensure!(cost(lambda, c1 + step, c2, dx, dy) < base, "config {k}: consistency cosine");
        ensure!(cost(lambda, c1, c2 + step, dx, dy) < base, "config {k}: detection cosine");
        ensure!(cost(lambda, 1.0, 1.0, 0.0, 0.0) == 0.0, "perfect match is not 0");
    }
    Ok("monotone in distance and both cosines over 1000 configurations; perfect match costs 0".into())
}

fn det(frame: u32, cx: f64, cy: f64) -> Detection {
    det_with(frame, cx, cy, [1.0, 0.0])
}

fn det_with(frame: u32, cx: f64, cy: f64, emb: [f64; 2]) -> Detection {
    Detection::new(BBox::from_cxcywh(cx, cy, 40.0, 80.0).unwrap(), 0.9, emb.to_vec(), frame).unwrap()
}

fn lifecycle() -> Check {
    let image = ImageSize::new(400, 300).unwrap();
    let status = |t: &Tracker, id: u64| t.tracks().iter().find(|x| x.id == id).map(|x| x.status);
    let step = |t: &mut Tracker, f: u32, d: &[Detection], p: &mut dyn StatePredictor| {
        t.step(f, d, Some(p)).map_err(|e| e.to_string())
    };
    // the predictor sends track 1 to (120, 100) at frame 3 and far away at frame 4
    let mut pred = FnPredictor(|f: u32, r: &Reference| RsPrediction {
        track_id: r.track_id,
        center: match f {
            3 => [120.0 / 400.0, 100.0 / 300.0],
            4 => [0.95, 0.95],
            _ => r.point,
        },
        appearance: r.appearance.clone(),
        aux_centers: Vec::new(),
    });
    let cfg = TrackerConfig {
        max_lost: 2,
        ..TrackerConfig::default()
    };
    let mut t = Tracker::new(cfg, image).map_err(|e| e.to_string())?;

    let r = step(&mut t, 1, &[det(1, 100.0, 100.0), det(1, 300.0, 200.0)], &mut pred)?;
    ensure!(r.births == 2 && r.tracks.is_empty(), "frame 1: births {} outputs {}", r.births, r.tracks.len());
    ensure!(status(&t, 1) == Some(TrackStatus::Unconfirmed), "frame 1: track 1 not unconfirmed");

    // track 1 confirmed by IoU at the next frame; track 2 missed and removed
    let r = step(&mut t, 2, &[det(2, 102.0, 100.0)], &mut pred)?;
    let ids: Vec<u64> = r.tracks.iter().map(|o| o.id).collect();
    ensure!(ids == [1] && r.iou_matches == 1, "frame 2: outputs {ids:?}, IoU matches {}", r.iou_matches);
    ensure!(status(&t, 2).is_none() && r.removals == 1, "frame 2: unconfirmed track 2 survived");

    // a 20 px jump has IoU below θ but the reference search puts the track
    // there, so the first stage takes it
    let r = step(&mut t, 3, &[det(3, 122.0, 100.0)], &mut pred)?;
    ensure!(r.rs_matches == 1 && r.tracks.len() == 1, "frame 3: RS matches {}", r.rs_matches);

    // prediction far from a detection that also looks different: cost above
    // τ, no overlap for the IoU stage, so the track is lost and the
    // detection starts a new track
    let far = det_with(4, 180.0, 100.0, [0.0, 1.0]);
    let r = step(&mut t, 4, &[far], &mut pred)?;
    ensure!(r.rs_matches == 0 && r.iou_matches == 0, "frame 4: unexpected match");
    ensure!(status(&t, 1) == Some(TrackStatus::Lost) && r.births == 1, "frame 4: track 1 not lost");
    ensure!(r.tracks.is_empty(), "frame 4: lost or newborn track reported");

    let r = step(&mut t, 5, &[], &mut pred)?;
    ensure!(status(&t, 1).is_none() && r.removals == 2, "frame 5: expiry after max_lost frames");

    // the same lifecycle through the command line, from a 3-frame file
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let det_txt = "1,-1,80,60,40,80,0.9,-1,-1,-1\n2,-1,82,60,40,80,0.9,-1,-1,-1\n3,-1,84,61,40,80,0.9,-1,-1,-1\n";
    let emb_txt = "1 0 1 0\n2 0 1 0\n3 0 1 0\n";
    std::fs::write(dir.path().join("det.txt"), det_txt).map_err(|e| e.to_string())?;
    std::fs::write(dir.path().join("emb.txt"), emb_txt).map_err(|e| e.to_string())?;
    let path = |name: &str| dir.path().join(name).display().to_string();
    let argv = [
        "refmot".into(),
        "--out".into(),
        path("out"),
        "track".into(),
        "--det".into(),
        path("det.txt"),
        "--emb".into(),
        path("emb.txt"),
        "--image".into(),
        "400x300".into(),
    ];
    let code = refmot::cli::run(argv);
    ensure!(code == 0, "cli track exit {code}");
    let out = std::fs::read_to_string(dir.path().join("out/results.txt")).map_err(|e| e.to_string())?;
    let rows: Vec<(u32, i64)> = out
        .lines()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap())
        })
        .collect();
    ensure!(rows == [(2, 1), (3, 1)], "cli results {rows:?}");
    Ok("birth, confirm, τ and θ gates, loss, expiry and 3-frame file traced exactly".into())
}

fn toy_training() -> Check {
    let sc = SynthConfig {
        num_objects: 4,
        width: 128,
        height: 128,
        frames: 60,
        segment_frames: 0,
        speed_min: 4.0,
        speed_max: 8.0,
        box_width: (12.0, 20.0),
        box_height: (20.0, 32.0),
        det_noise_std: 0.0,
        fp_rate: 0.0,
        miss_rate: 0.0,
        emb_noise: 0.0,
        jitter_std: 0.0,
        occlusion_rate: 0.0,
        raster_scale: 2,
        seed: 7,
        ..SynthConfig::default()
    };
    let t = Instant::now();
    let data = vec![synthesize(&sc).map_err(|e| e.to_string())?];
    let tc = TrainConfig {
        steps: 2000,
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let pairs = build_pairs(&data, sc.emb_dim, &tc).map_err(|e| e.to_string())?;
    let cfg = RsConfig {
        d_model: 32,
        emb_dim: sc.emb_dim,
        layers: 2,
        heads: 4,
        points: 12,
        levels: 3,
        reach: 4.0,
        head_hidden: 32,
        use_appearance: true,
        num_identities: pairs.prototypes.len(),
    };
    let mut model = Model::init(cfg, sc.emb_dim, &[1, 2, 4], 0).map_err(|e| e.to_string())?;
    init_classifier(&mut model.module, &pairs.prototypes, tc.prototype_scale).map_err(|e| e.to_string())?;
    train(&mut model, &data, &pairs.train, &tc, |_| {}).map_err(|e| e.to_string())?;
    let err = center_error(&model, &data, &pairs.holdout).map_err(|e| e.to_string())?;
    let gain = 1.0 - err.model / err.stationary;
    let elapsed = t.elapsed();
    let line = format!(
        "held-out center L1 {:.5} vs stationary {:.5} ({:.1}% better, {} refs), {:.0}s",
        err.model,
        err.stationary,
        100.0 * gain,
        err.references,
        secs(elapsed)
    );
    ensure!(gain >= 0.30, "{line}");
    ensure!(elapsed < Duration::from_secs(600), "{line}");
    Ok(line)
}

fn ablation() -> Check {
    let sc = SynthConfig {
        num_objects: 6,
        width: 320,
        height: 256,
        frames: 200,
        segment_frames: 20,
        speed_min: 1.0,
        speed_max: 4.0,
        box_width: (20.0, 36.0),
        box_height: (40.0, 72.0),
        jitter_std: 2.0,
        occlusion_rate: 0.3,
        det_noise_std: 1.0,
        raster_scale: 4,
        ..SynthConfig::default()
    };
    let synth = |seed: u64| synthesize(&SynthConfig { seed, ..sc.clone() }).map_err(|e| e.to_string());
    let train_sets = (100..103).map(synth).collect::<Result<Vec<Dataset>, _>>()?;
    let test_sets = (200..205).map(synth).collect::<Result<Vec<Dataset>, _>>()?;
    let tc = TrainConfig {
        steps: 2000,
        lr: 1e-3,
        holdout: 0.0,
        ..TrainConfig::default()
    };
    let pairs = build_pairs(&train_sets, sc.emb_dim, &tc).map_err(|e| e.to_string())?;
    let cfg = RsConfig {
        d_model: 32,
        emb_dim: sc.emb_dim,
        layers: 2,
        heads: 4,
        points: 12,
        levels: 3,
        reach: 4.0,
        head_hidden: 32,
        use_appearance: true,
        num_identities: pairs.prototypes.len(),
    };
    let mut model = Model::init(cfg, sc.emb_dim, &[1, 2, 4], 0).map_err(|e| e.to_string())?;
    init_classifier(&mut model.module, &pairs.prototypes, tc.prototype_scale).map_err(|e| e.to_string())?;
    train(&mut model, &train_sets, &pairs.train, &tc, |_| {}).map_err(|e| e.to_string())?;

    let score = |tracker: TrackerConfig, association: Association| -> Result<(f64, f64), String> {
        let (mut idf1, mut mota) = (0.0, 0.0);
        for ds in &test_sets {
            let (res, _) = track_dataset(&tracker, ds, association).map_err(|e| e.to_string())?;
            let r = evaluate(&ds.gt, &res, 0.5).map_err(|e| e.to_string())?;
            idf1 += 100.0 * r.idf1 / test_sets.len() as f64;
            mota += 100.0 * r.mota / test_sets.len() as f64;
        }
        Ok((idf1, mota))
    };
    let base = TrackerConfig::default();
    let (full_idf1, full_mota) = score(base.clone(), Association::Model(&model))?;
    let (iou_idf1, _) = score(
        TrackerConfig {
            use_rs: false,
            ..base.clone()
        },
        Association::None,
    )?;
    let (_, open_mota) = score(
        TrackerConfig {
            confirm: false,
            ..base
        },
        Association::Model(&model),
    )?;
    let line = format!(
        "IDF1 full {full_idf1:.2} vs IoU-only {iou_idf1:.2}; MOTA with confirm {full_mota:.2} vs without {open_mota:.2}"
    );
    ensure!(full_idf1 >= iou_idf1 + 5.0, "{line}");
    ensure!(full_mota >= open_mota - 1.0, "{line}");
    Ok(line)
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let small = [
        "--set", "synth.frames=30", "--set", "rs.d_model=16", "--set", "rs.head_hidden=16",
        "--set", "rs.layers=2", "--set", "rs.patch_sizes=1,2,4", "--set", "train.steps=30",
    ];
    let run = |extra: &[&str], out: &str| {
        let mut argv: Vec<String> = vec!["refmot".into(), "--seed".into(), "3".into()];
        argv.extend(small.iter().map(|s| s.to_string()));
        argv.extend(["--out".into(), d.join(out).display().to_string()]);
        argv.extend(extra.iter().map(|s| s.to_string()));
        refmot::cli::run(argv)
    };
    let seq = d.join("seq").display().to_string();
    let ckpt = d.join("model/model.ckpt").display().to_string();
    ensure!(run(&["synth"], "seq") == 0, "synth failed");
    ensure!(run(&["train", "--dataset", &seq, "--log-every", "0"], "model") == 0, "train failed");
    for out in ["a", "b"] {
        ensure!(run(&["track", "--dataset", &seq, "--checkpoint", &ckpt], out) == 0, "track failed");
    }
    let a = std::fs::read(d.join("a/results.txt")).map_err(|e| e.to_string())?;
    let b = std::fs::read(d.join("b/results.txt")).map_err(|e| e.to_string())?;
    ensure!(!a.is_empty(), "empty results");
    ensure!(a == b, "result files differ");
    Ok(format!("two runs wrote identical {}-byte result files", a.len()))
}

fn guarded(f: fn() -> Check) -> Check {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("assignment oracle", assignment_oracle),
        ("deformable attention oracle", attention_oracle),
        ("gradient suite", gradient_suite),
        ("kalman closed form", kalman_closed_form),
        ("metrics fixtures", metrics_fixtures),
        ("matching cost properties", cost_properties),
        ("lifecycle fixtures", lifecycle),
        ("toy training", toy_training),
        ("ablation direction", ablation),
        ("determinism", determinism),
    ];
    // commands under test print progress; the verdicts go last, together
    let verdicts: Vec<Check> = criteria.iter().map(|(_, f)| guarded(*f)).collect();
    let mut failed = 0;
    println!();
    for (k, ((name, _), r)) in criteria.iter().zip(&verdicts).enumerate() {
        match r {
            Ok(msg) => println!("PASS  #{:<2} {name}: {msg}", k + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL  #{:<2} {name}: {msg}", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
