//! Acceptance suite. Runs as a plain binary so that every criterion reports a
//! single PASS/FAIL line; exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use masklift_core::camera::{project_point, unproject_frame, unproject_projection};
use masklift_core::eval::{hungarian_match_iou, write_synthetic_scene, PerturbOptions};
use masklift_core::gridpool::DEFAULT_VOXEL_SIZE;
use masklift_core::io::read_ply;
use masklift_core::lift::CloudPoint;
use masklift_core::merge::bidirectional_merge;
use masklift_core::overseg::{
    ensemble, felzenszwalb_segment, oversegment, Edge, OversegConfig, Oversegmentation, SegGraph,
};
use masklift_core::pipeline::{run, with_thread_pool};
use masklift_core::{
    bottom_up_merge, grid_pool, CameraIntrinsics, CameraPose, DepthFrame, LabeledCloud,
    MergeConfig, PipelineConfig, PoolConfig, SceneSpec, VoxelKey,
};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_pose(rng: &mut ChaCha8Rng) -> CameraPose {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let rot = UnitQuaternion::from_scaled_axis(axis.normalize() * angle);
    let t = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
    CameraPose::new(*rot.to_rotation_matrix().matrix(), t).unwrap()
}

fn random_intrinsics(rng: &mut ChaCha8Rng) -> CameraIntrinsics {
    CameraIntrinsics::new(
        rng.random_range(200.0..800.0),
        rng.random_range(200.0..800.0),
        rng.random_range(100.0..540.0),
        rng.random_range(100.0..380.0),
    )
    .unwrap()
}

// 1. Projection oracle.
fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (w, h) = (640u32, 480u32);
    let depth: Vec<u16> = (0..w * h)
        .map(|_| if rng.random_bool(0.1) { 0 } else { rng.random_range(1..9000) })
        .collect();
    let frame = DepthFrame::new(w, h, depth.clone()).unwrap();
    let intr = random_intrinsics(&mut rng);
    let pose = random_pose(&mut rng);

    let start = Instant::now();
    let fast = unproject_frame(&frame, &intr, &pose, 1).unwrap();
    let elapsed = start.elapsed();

    // Per-pixel loop: X = Rᵀ(K⁻¹·d·[u, v, 1]ᵀ − T).
    let k_inv = intr.matrix().try_inverse().unwrap();
    let r_t: Matrix3<f64> = pose.rotation().transpose();
    let mut reference = Vec::new();
    for v in 0..h {
        for u in 0..w {
            let raw = depth[(v * w + u) as usize];
            let d = raw as f64 / 1000.0;
            if raw == 0 || d > 10.0 {
                continue;
            }
            let x = r_t * (k_inv * Vector3::new(u as f64, v as f64, 1.0) * d - pose.translation());
            reference.push((u, v, x));
        }
    }
    if fast.len() != reference.len() {
        return Err(format!("{} points vs {} in the per-pixel loop", fast.len(), reference.len()));
    }
    let mut max_err: f64 = 0.0;
    for ((pix, p), (u, v, x)) in fast.iter().zip(&reference) {
        if (pix.u, pix.v) != (*u, *v) {
            return Err(format!("pixel order differs at ({u}, {v})"));
        }
        max_err = max_err.max((p.coords - x).abs().max());
    }
    check(
        max_err < 1e-9 && elapsed < Duration::from_secs(1),
        format!("max abs error {max_err:.3e} m over {} pixels, {:.1} ms", fast.len(), elapsed.as_secs_f64() * 1e3),
    )
}

// 2. Project/unproject round trip.
fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut max_err: f64 = 0.0;
    for _ in 0..10_000 {
        let pose = random_pose(&mut rng);
        let intr = random_intrinsics(&mut rng);
        let cam = Vector3::new(
            rng.random_range(-4.0..4.0),
            rng.random_range(-4.0..4.0),
            rng.random_range(0.05..12.0),
        );
        let world = masklift_core::Point3::from(pose.rotation().transpose() * (cam - pose.translation()));
        let proj = project_point(&world, &intr, &pose).ok_or("positive-depth point did not project")?;
        let back = unproject_projection(&proj, &intr, &pose).map_err(|e| e.to_string())?;
        max_err = max_err.max((back - world).norm());
    }
    check(max_err < 1e-6, format!("10000 triples, max error {max_err:.3e} m"))
}

/// Brute-force nearest neighbor within `r`, ties to the smaller index.
fn oracle_correspondences(x1: &LabeledCloud, x2: &LabeledCloud, r: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, p) in x1.points.iter().enumerate() {
        let p = p.coords.cast::<f64>();
        let mut best: Option<(f64, usize)> = None;
        for (j, q) in x2.points.iter().enumerate() {
            let d2 = (q.coords.cast::<f64>() - p).norm_squared();
            if d2 <= r * r && best.is_none_or(|(bd, _)| d2 < bd) {
                best = Some((d2, j));
            }
        }
        if let Some((_, j)) = best {
            out.push((i, j));
        }
    }
    out
}

fn oracle_pairs(x1: &LabeledCloud, x2: &LabeledCloud, r: f64, delta: f64) -> Vec<(u32, u32)> {
    let hist = |c: &LabeledCloud| {
        let mut h: BTreeMap<u32, usize> = BTreeMap::new();
        for &l in c.labels.iter().filter(|&&l| l != 0) {
            *h.entry(l).or_default() += 1;
        }
        h
    };
    let (h1, h2) = (hist(x1), hist(x2));
    let mut cross: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for (i, j) in oracle_correspondences(x1, x2, r) {
        let (m, n) = (x1.labels[i], x2.labels[j]);
        if m != 0 && n != 0 {
            *cross.entry((m, n)).or_default() += 1;
        }
    }
    cross
        .into_iter()
        .filter(|&((m, n), c)| c as f64 > delta * h1[&m].min(h2[&n]) as f64)
        .map(|(p, _)| p)
        .collect()
}

/// Labels after unifying `pairs`, each class named by its smallest id.
fn oracle_labels(labels: &[u32], pairs: &[(u32, u32)]) -> Vec<u32> {
    let mut class: BTreeMap<u32, u32> = labels.iter().filter(|&&l| l != 0).map(|&l| (l, l)).collect();
    // Relaxation until no pair straddles two classes.
    loop {
        let mut changed = false;
        for &(a, b) in pairs {
            let (ca, cb) = (class[&a], class[&b]);
            if ca != cb {
                let (keep, drop) = (ca.min(cb), ca.max(cb));
                for v in class.values_mut() {
                    if *v == drop {
                        *v = keep;
                    }
                }
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    labels.iter().map(|l| if *l == 0 { 0 } else { class[l] }).collect()
}

fn random_frame_pair(rng: &mut ChaCha8Rng) -> (LabeledCloud, LabeledCloud) {
    let n1 = rng.random_range(1..=100);
    let n2 = rng.random_range(1..=100);
    let m1 = rng.random_range(1..=5u32);
    let m2 = rng.random_range(1..=5u32);
    let region = |p: &CloudPoint, m: u32| ((p.x.max(0.0) / 0.3 * m as f32) as u32).min(m - 1) + 1;
    let mut x1 = LabeledCloud::default();
    for _ in 0..n1 {
        let p = CloudPoint::new(rng.random_range(0.0..0.3), rng.random_range(0.0..0.1), rng.random_range(0.0..0.1));
        let l = if rng.random_bool(0.1) { 0 } else if rng.random_bool(0.2) { rng.random_range(1..=m1) } else { region(&p, m1) };
        x1.points.push(p);
        x1.labels.push(l);
    }
    let mut x2 = LabeledCloud::default();
    for _ in 0..n2 {
        let p = if rng.random_bool(0.7) {
            let base = x1.points[rng.random_range(0..n1)];
            base + nalgebra::Vector3::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02))
        } else {
            CloudPoint::new(rng.random_range(0.0..0.4), rng.random_range(0.0..0.1), rng.random_range(0.0..0.1))
        };
        let l = if rng.random_bool(0.1) { 0 } else if rng.random_bool(0.2) { rng.random_range(1..=m2) } else { region(&p, m2) };
        x2.points.push(p);
        x2.labels.push(if l == 0 { 0 } else { 10 + l });
    }
    (x1, x2)
}

// 3. Two-frame merge against an independent oracle.
fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let radius = 0.02;
    let mut with_merges = 0;
    let mut without = 0;
    for trial in 0..1000 {
        let (x1, x2) = random_frame_pair(&mut rng);
        let delta = [0.3, 0.5, 0.7][rng.random_range(0..3)];
        let cfg = MergeConfig {
            delta,
            match_radius: radius,
            pool_after_merge: false,
            pool: PoolConfig::default(),
        };
        let got = bidirectional_merge(&x1, &x2, &cfg).map_err(|e| format!("trial {trial}: {e}"))?;
        let mut pairs = oracle_pairs(&x1, &x2, radius, delta);
        pairs.extend(oracle_pairs(&x2, &x1, radius, delta).into_iter().map(|(n, m)| (m, n)));
        let joined = x1.concat(&x2);
        let expected = oracle_labels(&joined.labels, &pairs);
        if got.labels != expected || got.points != joined.points {
            return Err(format!("trial {trial} disagrees with the oracle"));
        }
        if pairs.is_empty() {
            without += 1;
        } else {
            with_merges += 1;
        }
    }

    // Boundary: 4 of 8 points overlap, δ = 0.5 ⇒ 4 > 4 is false.
    let pts = |n: usize, off: usize| -> Vec<CloudPoint> { (0..n).map(|i| CloudPoint::new((i + off) as f32, 0.0, 0.0)).collect() };
    let a = LabeledCloud::new(pts(8, 0), vec![1; 8]).unwrap();
    let b = LabeledCloud::new(pts(8, 4), vec![2; 8]).unwrap();
    let cfg = MergeConfig {
        delta: 0.5,
        match_radius: 0.1,
        pool_after_merge: false,
        pool: PoolConfig::default(),
    };
    let boundary = bidirectional_merge(&a, &b, &cfg).map_err(|e| e.to_string())?;
    let boundary_ok = boundary.label_set() == BTreeSet::from([1, 2]);
    check(
        boundary_ok,
        format!("1000/1000 trials match ({with_merges} with merges, {without} without); boundary case kept apart: {boundary_ok}"),
    )
}

// 4. Tree shape.
fn criterion_4() -> Outcome {
    let cfg = MergeConfig {
        pool_after_merge: false,
        ..MergeConfig::default()
    };
    for k in 1..=64usize {
        let clouds: Vec<LabeledCloud> = (0..k)
            .map(|i| LabeledCloud::new(vec![CloudPoint::new(i as f32 * 10.0, 0.0, 0.0)], vec![i as u32 + 1]).unwrap())
            .collect();
        let (_, trace) = bottom_up_merge(clouds, &cfg).map_err(|e| e.to_string())?;
        let levels = (k as f64).log2().ceil() as usize;
        if trace.merge_count() != k - 1 || trace.level_count() != levels {
            return Err(format!(
                "K={k}: {} merges over {} levels, expected {} over {levels}",
                trace.merge_count(),
                trace.level_count(),
                k - 1
            ));
        }
    }
    Ok("K = 1..=64 all give K-1 merges over ceil(log2 K) levels".into())
}

struct SceneRun {
    mean_iou: f64,
    pred_count: usize,
    /// Scores of the merged scene before ensembling.
    merge_only: (f64, usize),
    elapsed: Duration,
    scene: LabeledCloud,
    overseg: Option<Oversegmentation>,
}

fn synthetic_run(perturb: PerturbOptions, threads: usize, dir: &Path) -> Result<SceneRun, String> {
    let mut spec = SceneSpec::eight_boxes(16);
    spec.perturb = perturb;
    let scene_dir = dir.join("scene");
    write_synthetic_scene(&spec, &scene_dir).map_err(|e| e.to_string())?;
    let cfg = PipelineConfig {
        voxel_size: DEFAULT_VOXEL_SIZE,
        delta: 0.5,
        threads: Some(threads),
        ..PipelineConfig::default()
    };
    let out = dir.join("out");
    let start = Instant::now();
    let bundle = with_thread_pool(cfg.threads, || run(&scene_dir, &cfg, &out))
        .and_then(|r| r)
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let pred = read_ply(&out.join("scene.ply")).map_err(|e| e.to_string())?;
    let gt = read_ply(&scene_dir.join("gt.ply")).map_err(|e| e.to_string())?;
    if pred.points != gt.points {
        return Err("prediction and ground truth are not point-aligned".into());
    }
    let report = hungarian_match_iou(&pred.labels, &gt.labels).map_err(|e| e.to_string())?;
    let sam = read_ply(&out.join("scene_sam.ply")).map_err(|e| e.to_string())?;
    let sam_report = hungarian_match_iou(&sam.labels, &gt.labels).map_err(|e| e.to_string())?;
    Ok(SceneRun {
        mean_iou: report.mean_iou,
        pred_count: report.pred_count,
        merge_only: (sam_report.mean_iou, sam_report.pred_count),
        elapsed,
        scene: pred,
        overseg: bundle.overseg,
    })
}

// 5. Clean masks end to end.
fn criterion_5() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let r = synthetic_run(PerturbOptions::default(), 1, dir.path())?;
    check(
        r.mean_iou >= 0.99 && r.pred_count == 8 && r.elapsed < Duration::from_secs(30),
        format!(
            "mean IoU {:.4}, {} instances, {:.2} s single-threaded (before ensembling: {:.4}, {})",
            r.mean_iou,
            r.pred_count,
            r.elapsed.as_secs_f64(),
            r.merge_only.0,
            r.merge_only.1
        ),
    )
}

// 6. Split and permuted masks end to end.
fn criterion_6() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let perturb = PerturbOptions {
        split_prob: 0.5,
        permute_ids: true,
    };
    let r = synthetic_run(perturb, 1, dir.path())?;
    check(
        r.mean_iou >= 0.90 && (8..=12).contains(&r.pred_count),
        format!(
            "mean IoU {:.4}, {} instances (before ensembling: {:.4}, {})",
            r.mean_iou, r.pred_count, r.merge_only.0, r.merge_only.1
        ),
    )
}

/// Segmentation with explicit member sets, recomputing component sizes and
/// internal differences from scratch at every edge.
fn reference_segmentation(nodes: usize, edges: &[Edge], k: f64, min_size: usize) -> Vec<u32> {
    let mut order: Vec<Edge> = edges.to_vec();
    order.sort_by(|x, y| x.weight.total_cmp(&y.weight).then(x.a.cmp(&y.a)).then(x.b.cmp(&y.b)));
    let mut comp: Vec<usize> = (0..nodes).collect();
    let mut accepted: Vec<Edge> = Vec::new();
    let size = |comp: &[usize], c: usize| comp.iter().filter(|&&x| x == c).count();
    let internal = |comp: &[usize], accepted: &[Edge], c: usize| {
        accepted
            .iter()
            .filter(|e| comp[e.a] == c && comp[e.b] == c)
            .map(|e| e.weight)
            .fold(0.0, f64::max)
    };
    let relabel = |comp: &mut Vec<usize>, from: usize, to: usize| {
        for x in comp.iter_mut() {
            if *x == from {
                *x = to;
            }
        }
    };
    for e in &order {
        let (ca, cb) = (comp[e.a], comp[e.b]);
        if ca == cb {
            continue;
        }
        let ta = internal(&comp, &accepted, ca) + k / size(&comp, ca) as f64;
        let tb = internal(&comp, &accepted, cb) + k / size(&comp, cb) as f64;
        if e.weight <= ta.min(tb) {
            relabel(&mut comp, cb, ca);
            accepted.push(*e);
        }
    }
    for e in &order {
        let (ca, cb) = (comp[e.a], comp[e.b]);
        if ca != cb && (size(&comp, ca) < min_size || size(&comp, cb) < min_size) {
            relabel(&mut comp, cb, ca);
            accepted.push(*e);
        }
    }
    let mut ids: HashMap<usize, u32> = HashMap::new();
    comp.iter()
        .map(|c| {
            let next = ids.len() as u32 + 1;
            *ids.entry(*c).or_insert(next)
        })
        .collect()
}

// 7. Over-segmentation on a dihedral and exhaustive small-graph agreement.
fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut pts = Vec::with_capacity(10_000);
    for _ in 0..5000 {
        pts.push(masklift_core::Point3::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), 0.0));
    }
    for _ in 0..5000 {
        pts.push(masklift_core::Point3::new(0.0, rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)));
    }
    let seg = oversegment(&pts, &OversegConfig::default()).map_err(|e| e.to_string())?;
    let mut votes: BTreeMap<u32, [usize; 2]> = BTreeMap::new();
    for (i, &s) in seg.segment_id.iter().enumerate() {
        votes.entry(s).or_default()[i / 5000] += 1;
    }
    let pure: usize = votes.values().map(|v| v[0].max(v[1])).sum();
    let purity = pure as f64 / pts.len() as f64;

    let mut small_trials = 0;
    for trial in 0..2000 {
        let nodes = rng.random_range(1..=12usize);
        let mut edges = Vec::new();
        for a in 0..nodes {
            for b in a + 1..nodes {
                if rng.random_bool(0.4) {
                    // Coarse weights so ties occur.
                    edges.push(Edge { a, b, weight: rng.random_range(0..8) as f64 / 8.0 });
                }
            }
        }
        let cfg = OversegConfig {
            knn: 3,
            fz_k: [0.05, 0.3, 1.0, 3.0][rng.random_range(0..4)],
            min_segment: rng.random_range(1..=4),
        };
        let g = SegGraph { nodes, edges: edges.clone() };
        let got = felzenszwalb_segment(&g, &cfg).map_err(|e| e.to_string())?;
        let expected = reference_segmentation(nodes, &edges, cfg.fz_k, cfg.min_segment);
        if got.segment_id != expected {
            return Err(format!("small graph trial {trial} ({nodes} nodes) differs from the reference"));
        }
        small_trials += 1;
    }
    check(
        seg.segment_count() >= 2 && purity >= 0.99,
        format!(
            "dihedral: {} segments, purity {purity:.4}; {small_trials} small graphs match the reference",
            seg.segment_count()
        ),
    )
}

fn ensemble_violations(scene: &LabeledCloud, seg: &Oversegmentation, out: &LabeledCloud) -> usize {
    let mut label_of: HashMap<u32, BTreeSet<u32>> = HashMap::new();
    for (s, l) in seg.segment_id.iter().zip(&out.labels) {
        label_of.entry(*s).or_default().insert(*l);
    }
    let split = label_of.values().filter(|v| v.len() > 1).count();
    let zeros = out.labels.iter().filter(|&&l| l == 0).count();
    split + zeros + usize::from(out.points != scene.points)
}

// 8. Ensemble regions are unions of whole segments, with full coverage.
fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..200 {
        let n = rng.random_range(1..300);
        let masks = rng.random_range(1..8u32);
        let segs = rng.random_range(1..20u32);
        let points = (0..n).map(|i| CloudPoint::new(i as f32, 0.0, 0.0)).collect();
        let labels = (0..n).map(|_| if rng.random_bool(0.3) { 0 } else { rng.random_range(1..=masks) * 3 }).collect();
        let scene = LabeledCloud::new(points, labels).unwrap();
        let mut segment_id: Vec<u32> = (0..n).map(|_| rng.random_range(1..=segs)).collect();
        // Keep ids contiguous as the segmenter does.
        let mut remap = BTreeMap::new();
        for s in segment_id.iter_mut() {
            let next = remap.len() as u32 + 1;
            *s = *remap.entry(*s).or_insert(next);
        }
        let seg = Oversegmentation { segment_id };
        let delta = rng.random_range(0.05..1.0);
        let out = ensemble(&scene, &seg, delta).map_err(|e| e.to_string())?;
        if ensemble_violations(&scene, &seg, &out) != 0 {
            return Err(format!("random trial {trial} violates segment closure or coverage"));
        }
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let perturb = PerturbOptions {
        split_prob: 0.5,
        permute_ids: true,
    };
    let r = synthetic_run(perturb, 1, dir.path())?;
    let seg = r.overseg.ok_or("pipeline produced no over-segmentation")?;
    let sam = read_ply(&dir.path().join("out/scene_sam.ply")).map_err(|e| e.to_string())?;
    let bad = ensemble_violations(&sam, &seg, &r.scene);
    check(
        bad == 0,
        format!("200 random scenes and the synthetic scene ({} segments): {bad} violations", seg.segment_count()),
    )
}

// 9. Pooling idempotence, voxel uniqueness and majority labels.
fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..100 {
        let n = rng.random_range(1..2000);
        let vs = [0.05, 0.1, 0.2][rng.random_range(0..3)];
        let cloud = LabeledCloud::new(
            (0..n)
                .map(|_| CloudPoint::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5)))
                .collect(),
            (0..n).map(|_| rng.random_range(0..4u32)).collect(),
        )
        .unwrap();
        let cfg = PoolConfig { voxel_size: vs };
        let once = grid_pool(&cloud, &cfg).map_err(|e| e.to_string())?;
        let twice = grid_pool(&once, &cfg).map_err(|e| e.to_string())?;
        if once != twice {
            return Err(format!("trial {trial}: pooling is not idempotent"));
        }
        let key = |p: &CloudPoint| {
            let f = |c: f32| (c as f64 / vs).floor() as i64;
            (f(p.x), f(p.y), f(p.z))
        };
        let mut members: BTreeMap<(i64, i64, i64), Vec<u32>> = BTreeMap::new();
        for (p, l) in cloud.points.iter().zip(&cloud.labels) {
            members.entry(key(p)).or_default().push(*l);
        }
        if once.len() != members.len() {
            return Err(format!("trial {trial}: {} outputs for {} voxels", once.len(), members.len()));
        }
        let mut seen = BTreeSet::new();
        for (p, &l) in once.points.iter().zip(&once.labels) {
            let k = key(p);
            if !seen.insert(k) || VoxelKey::of(p, vs) != (VoxelKey { ix: k.0, iy: k.1, iz: k.2 }) {
                return Err(format!("trial {trial}: duplicate or misplaced voxel {k:?}"));
            }
            let labels = members.get(&k).ok_or(format!("trial {trial}: output outside input voxels"))?;
            let mut votes: BTreeMap<u32, usize> = BTreeMap::new();
            for &x in labels.iter().filter(|&&x| x != 0) {
                *votes.entry(x).or_default() += 1;
            }
            // Highest count wins; BTreeMap order makes the smaller id win ties.
            let expected = votes
                .iter()
                .fold((0u32, 0usize), |best, (&id, &c)| if c > best.1 { (id, c) } else { best })
                .0;
            if l != expected {
                return Err(format!("trial {trial}: voxel {k:?} labeled {l}, vote says {expected}"));
            }
        }
    }
    Ok("100 random clouds: idempotent, one point per voxel, majority labels match".into())
}

fn dir_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

// 10. Byte-identical outputs at 1 and 8 threads.
fn criterion_10() -> Outcome {
    let perturb = PerturbOptions {
        split_prob: 0.5,
        permute_ids: true,
    };
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    synthetic_run(perturb, 1, a.path())?;
    synthetic_run(perturb, 8, b.path())?;
    let (x, y) = (dir_bytes(&a.path().join("out")), dir_bytes(&b.path().join("out")));
    let (sx, sy) = (dir_bytes(&a.path().join("scene")), dir_bytes(&b.path().join("scene")));
    let differing: Vec<&String> = x.keys().filter(|k| x.get(*k) != y.get(*k)).collect();
    check(
        x.keys().eq(y.keys()) && differing.is_empty() && sx == sy,
        format!("{} output files and {} scene files compared, {} differ", x.len(), sx.len(), differing.len()),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("projection oracle", criterion_1),
        ("project/unproject round trip", criterion_2),
        ("two-frame merge oracle", criterion_3),
        ("merge tree shape", criterion_4),
        ("synthetic scene, clean masks", criterion_5),
        ("synthetic scene, perturbed masks", criterion_6),
        ("over-segmentation", criterion_7),
        ("ensemble closure and coverage", criterion_8),
        ("grid pooling", criterion_9),
        ("thread-count determinism", criterion_10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|a| a == &n.to_string()) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
