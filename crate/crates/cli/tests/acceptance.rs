//! Acceptance suite. Each criterion runs under its time budget and prints one
//! `PASS`/`FAIL` line; the process exits non-zero when any criterion fails.
//! Pass criterion numbers as arguments to run a subset.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use clap::Parser;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use salsa_cli::commands::{MetricsReport, METRICS_JSON};
use salsa_cli::config::{RunConfig, ABLATION_DIMS};
use salsa_cli::{run, Cli};
use salsa_core::backbone::{attention_layout, window_attention, BackboneConfig, LocalDescriptorSet};
use salsa_core::dataset::{generate_synthetic, ScanRole};
use salsa_core::descriptor::{record_head, record_mixer, record_pool, record_token_fuser, AggregatorParams, HeadConfig};
use salsa_core::geometry::{
    cubic_window_index, distance, pose_error, radial_window_index, voxelize, Point3, PointCloud, RigidTransform,
    WindowKind,
};
use salsa_core::localization::{
    compatibility_matrix, ransac_register, rerank, spectral_fitness, localization_success, Match, MatchSet,
    RansacConfig, RerankConfig,
};
use salsa_core::model::{ModelConfig, SalsaModel};
use salsa_core::numeric::{
    fit_pca_whitener, finite_diff_check, sample_covariance, GradCheckConfig, Matrix, ParamSet, Tape, Var,
    WHITEN_EPS,
};
use salsa_core::retrieval::{mrr, DescriptorDatabase};
use salsa_core::training::{
    find_correspondences, local_consistency_loss, record_local_consistency_loss, record_triplet_loss,
    scan_descriptors, train_epoch, triplet_loss, LossConfig, NegativeCandidates, Sgd,
};

const SYNTHETIC_CONFIG: &str = include_str!("../../../configs/synthetic.toml");

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, extent: f64) -> PointCloud {
    let pts = (0..n)
        .map(|_| {
            [
                rng.random_range(-extent..extent),
                rng.random_range(-extent..extent),
                rng.random_range(-2.0..4.0),
            ]
        })
        .collect();
    let intensity = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    PointCloud::new(pts, Some(intensity)).unwrap()
}

fn dot_with(t: &mut Tape, y: Var, target: &Matrix) -> salsa_core::Result<Var> {
    let c = t.constant(target.clone());
    let p = t.mul(y, c)?;
    Ok(t.sum(p))
}

fn small_head_config() -> HeadConfig {
    HeadConfig {
        tokens: 6,
        k_bar: 3,
        d_bar: 2,
        fuser_blocks: 4,
        fuser_expansion: 4,
    }
}

fn grad_cfg() -> GradCheckConfig {
    GradCheckConfig {
        samples: 300,
        ..Default::default()
    }
}

fn criterion_1() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = BTreeMap::new();

    let mut ps = ParamSet::new();
    let k = ps.add("k", rand_matrix(&mut rng, 12, 4)).unwrap();
    let q = ps.add("q", rand_matrix(&mut rng, 6, 4)).unwrap();
    let target = rand_matrix(&mut rng, 6, 4);
    let r = finite_diff_check(
        &mut ps,
        |t, ps| {
            let (kv, qv) = (t.param(ps, k), t.param(ps, q));
            let y = record_pool(t, kv, qv)?;
            dot_with(t, y, &target)
        },
        grad_cfg(),
        &mut rng,
    )
    .map_err(|e| e.to_string())?;
    worst.insert("pooling", r.max_rel_error);

    let cfg = small_head_config();
    let mut ps = ParamSet::new();
    let head = AggregatorParams::init(&mut ps, 4, &cfg, &mut rng).unwrap();
    let x = ps.add("x", rand_matrix(&mut rng, 6, 4)).unwrap();
    let target = rand_matrix(&mut rng, 6, 4);
    let r = finite_diff_check(
        &mut ps,
        |t, ps| {
            let xv = t.param(ps, x);
            let y = record_token_fuser(t, ps, &head.fuser, xv)?;
            dot_with(t, y, &target)
        },
        grad_cfg(),
        &mut rng,
    )
    .map_err(|e| e.to_string())?;
    worst.insert("fuser", r.max_rel_error);

    let target = rand_matrix(&mut rng, 1, 6);
    let r = finite_diff_check(
        &mut ps,
        |t, ps| {
            let xv = t.param(ps, x);
            let y = record_mixer(t, ps, &head, xv)?;
            dot_with(t, y, &target)
        },
        grad_cfg(),
        &mut rng,
    )
    .map_err(|e| e.to_string())?;
    worst.insert("mixer", r.max_rel_error);

    let feats = ps.add("feats", rand_matrix(&mut rng, 15, 4)).unwrap();
    let r = finite_diff_check(
        &mut ps,
        |t, ps| {
            let f = t.param(ps, feats);
            let y = record_head(t, ps, &head, f)?;
            dot_with(t, y, &target)
        },
        grad_cfg(),
        &mut rng,
    )
    .map_err(|e| e.to_string())?;
    worst.insert("head", r.max_rel_error);

    // triplet: an instance well inside the active hinge region
    let mut ps = ParamSet::new();
    let qv = rand_matrix(&mut rng, 1, 8);
    let nv = Matrix::from_fn(1, 8, |_, j| qv.get(0, j) + 0.05 * rng.random_range(-1.0..1.0));
    let pv = rand_matrix(&mut rng, 1, 8);
    let ids: Vec<_> = [("q", qv), ("p", pv), ("n", nv)]
        .into_iter()
        .map(|(name, v)| ps.add(name, v).unwrap())
        .collect();
    let r = finite_diff_check(
        &mut ps,
        |t, ps| {
            let v: Vec<Var> = ids.iter().map(|&id| t.param(ps, id)).collect();
            record_triplet_loss(t, v[0], v[1], v[2], 0.1)
        },
        grad_cfg(),
        &mut rng,
    )
    .map_err(|e| e.to_string())?;
    worst.insert("triplet loss", r.max_rel_error);

    let a: Vec<Point3> = (0..30)
        .map(|_| [rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0), rng.random_range(0.0..2.0)])
        .collect();
    let tf = RigidTransform::from_yaw(0.4, [0.5, -1.0, 0.0]);
    let b: Vec<Point3> = a.iter().map(|p| tf.apply(p)).collect();
    let gamma = find_correspondences(&a, &b, &tf, 0.5);
    let cands = NegativeCandidates::all(30, 30);
    let lcfg = LossConfig::default();
    let mut ps = ParamSet::new();
    let g1 = ps.add("g1", rand_matrix(&mut rng, 30, 4)).unwrap();
    let g2 = ps.add("g2", rand_matrix(&mut rng, 30, 4)).unwrap();
    let r = finite_diff_check(
        &mut ps,
        |t, ps| {
            let (x, y) = (t.param(ps, g1), t.param(ps, g2));
            record_local_consistency_loss(t, x, y, &gamma, &lcfg, &cands)
        },
        grad_cfg(),
        &mut rng,
    )
    .map_err(|e| e.to_string())?;
    worst.insert("local consistency loss", r.max_rel_error);

    let report = worst
        .iter()
        .map(|(k, v)| format!("{k} {v:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(worst.values().all(|&v| v <= 1e-4), format!("relative error above 1e-4: {report}"))?;
    Ok(report)
}

fn criterion_2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = SalsaModel::new(ModelConfig::default(), &mut rng).map_err(|e| e.to_string())?;
    let mut drift: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(50..300);
        let cloud = random_cloud(&mut rng, n, 25.0);
        let base = model.scene_descriptor(&cloud, None).map_err(|e| e.to_string())?;
        for _ in 0..5 {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let shuffled = cloud.select(&perm).map_err(|e| e.to_string())?;
            let d = model.scene_descriptor(&shuffled, None).map_err(|e| e.to_string())?;
            for (x, y) in base.values.iter().zip(&d.values) {
                drift = drift.max((x - y).abs());
            }
        }
    }
    ensure(drift < 1e-6, format!("drift {drift:e}"))?;
    Ok(format!("max drift {drift:.1e} over 250 permutations"))
}

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (da, db) = (std::f64::consts::PI / 60.0, std::f64::consts::PI / 60.0);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let p = [
            rng.random_range(-100.0..100.0),
            rng.random_range(-100.0..100.0),
            rng.random_range(-20.0..20.0),
        ];
        let s = 10f64.powf(rng.random_range(-3.0..3.0));
        let q = [s * p[0], s * p[1], s * p[2]];
        if radial_window_index(&p, da, db) != radial_window_index(&q, da, db) {
            mismatches += 1;
        }
    }
    ensure(mismatches == 0, format!("{mismatches} radial indices changed under scaling"))?;
    let near = [3.1, 1.7, 0.4];
    let far = [10.0 * near[0], 10.0 * near[1], 10.0 * near[2]];
    ensure(
        radial_window_index(&near, da, db) == radial_window_index(&far, da, db),
        "ray pair split by the radial partition",
    )?;
    ensure(
        cubic_window_index(&near, 0.4) != cubic_window_index(&far, 0.4),
        "ray pair shares a cubic window",
    )?;
    Ok("10000 scalings exact; near/far pair on one ray shares a radial window only".into())
}

/// Dense attention with an explicit window-membership mask per head.
fn masked_dense_attention(
    x: &Matrix,
    wq: &Matrix,
    wk: &Matrix,
    wv: &Matrix,
    wo: &Matrix,
    centroids: &[Point3],
    cfg: &BackboneConfig,
) -> Matrix {
    let n = x.rows();
    let d = x.cols();
    let kinds = cfg.head_kinds();
    let dh = d / kinds.len();
    let scale = 1.0 / (dh as f64).sqrt();
    let q = x.matmul(wq).unwrap();
    let k = x.matmul(wk).unwrap();
    let v = x.matmul(wv).unwrap();
    let mut heads = Matrix::zeros(n, d);
    for (h, kind) in kinds.iter().enumerate() {
        let win: Vec<_> = centroids
            .iter()
            .map(|c| match kind {
                WindowKind::Radial => radial_window_index(c, cfg.windows.dalpha, cfg.windows.dbeta),
                WindowKind::Cubic => cubic_window_index(c, cfg.windows.cubic),
            })
            .collect();
        for i in 0..n {
            let mut logits = vec![f64::NEG_INFINITY; n];
            for (j, l) in logits.iter_mut().enumerate() {
                if win[i] == win[j] {
                    *l = (0..dh).map(|c| q.get(i, h * dh + c) * k.get(j, h * dh + c)).sum::<f64>() * scale;
                }
            }
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = w.iter().sum();
            for c in 0..dh {
                let val: f64 = (0..n).map(|j| w[j] / z * v.get(j, h * dh + c)).sum();
                heads.set(i, h * dh + c, val);
            }
        }
    }
    let o = heads.matmul(wo).unwrap();
    Matrix::from_fn(n, d, |i, j| x.get(i, j) + o.get(i, j))
}

fn criterion_4() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = BackboneConfig::default();
    let d = cfg.d;
    let mut worst: f64 = 0.0;
    let mut attended = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..=64usize);
        let center = [rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0), 0.5];
        let pts: Vec<Point3> = (0..n)
            .map(|_| {
                [
                    center[0] + rng.random_range(-1.5..1.5),
                    center[1] + rng.random_range(-1.5..1.5),
                    center[2] + rng.random_range(-1.0..1.0),
                ]
            })
            .collect();
        let cloud = PointCloud::from_points(pts).unwrap();
        let grid = voxelize(&cloud, cfg.voxel_size).unwrap();
        let layout = attention_layout(&grid, &cfg).ok_or("no layout")?;
        let nv = grid.len();
        let x = rand_matrix(&mut rng, nv, d);
        let w: Vec<Matrix> = (0..4).map(|_| rand_matrix(&mut rng, d, d)).collect();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv: Vec<Var> = w.iter().map(|m| tape.constant(m.clone())).collect();
        let out = window_attention(&mut tape, xv, &layout, wv[0], wv[1], wv[2], wv[3]).map_err(|e| e.to_string())?;
        let centroids: Vec<Point3> = grid.cells().iter().map(|c| c.centroid).collect();
        let oracle = masked_dense_attention(&x, &w[0], &w[1], &w[2], &w[3], &centroids, &cfg);
        let got = tape.value(out);
        for i in 0..nv {
            for j in 0..d {
                worst = worst.max((got.get(i, j) - oracle.get(i, j)).abs());
            }
        }
        attended += layout.head_groups.iter().flatten().filter(|g| g.len() > 1).count();
    }
    ensure(attended > 0, "no window held more than one voxel")?;
    ensure(worst <= 1e-10, format!("max deviation {worst:e}"))?;
    Ok(format!("max deviation {worst:.1e} over 100 clouds ({attended} multi-voxel windows)"))
}

fn oracle_triplet(q: &[f64], p: &[f64], n: &[f64], m: f64) -> f64 {
    let mut dp = 0.0;
    let mut dn = 0.0;
    for i in 0..q.len() {
        dp += (q[i] - p[i]) * (q[i] - p[i]);
        dn += (q[i] - n[i]) * (q[i] - n[i]);
    }
    (dp - dn + m).max(0.0)
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Direct evaluation of the local consistency loss from its definition.
fn oracle_local(
    g1: &Matrix,
    g2: &Matrix,
    pairs: &[(usize, usize)],
    pa: &[Point3],
    pb: &[Point3],
    cands: &NegativeCandidates,
    c: &LossConfig,
) -> f64 {
    let pos: f64 = pairs
        .iter()
        .map(|&(i, j)| (sq(g1.row(i), g2.row(j)) - c.m_p).max(0.0))
        .sum::<f64>()
        / pairs.len() as f64;
    let side = |anchors: &Matrix, pool: &Matrix, ids: Vec<usize>, apos: &[Point3], ppos: &[Point3], cand: &[usize]| {
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in ids {
            let mut best = (f64::INFINITY, usize::MAX);
            for &k in cand {
                let dk = sq(anchors.row(i), pool.row(k));
                if dk < best.0 {
                    best = (dk, k);
                }
            }
            if distance(&apos[i], &ppos[best.1]) > c.r_neg {
                sum += (c.m_n - best.0).max(0.0);
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            c.mu_n * sum / count as f64
        }
    };
    let n1 = side(g1, g2, pairs.iter().map(|p| p.0).collect(), pa, pb, &cands.in_b);
    let n2 = side(g2, g1, pairs.iter().map(|p| p.1).collect(), pb, pa, &cands.in_a);
    pos + n1 + n2
}

fn criterion_5() -> Check {
    let run = RunConfig::from_toml(&salsa_cli::config::default_config_text()).map_err(|e| e.to_string())?;
    let c = run.loss_config();
    ensure(
        c.margin == 0.1 && c.m_p == 0.1 && c.m_n == 2.0 && c.mu_n == 1.0,
        format!("loss constants from config: {c:?}"),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_t: f64 = 0.0;
    for _ in 0..10_000 {
        let dim = rng.random_range(1..32);
        let v: Vec<Vec<f64>> = (0..3).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let want = oracle_triplet(&v[0], &v[1], &v[2], c.margin);
        let plain = triplet_loss(&v[0], &v[1], &v[2], c.margin).map_err(|e| e.to_string())?;
        let mut t = Tape::new();
        let vars: Vec<Var> = v.iter().map(|x| t.constant(Matrix::row_vector(x))).collect();
        let l = record_triplet_loss(&mut t, vars[0], vars[1], vars[2], c.margin).map_err(|e| e.to_string())?;
        let taped = t.scalar(l).map_err(|e| e.to_string())?;
        worst_t = worst_t.max((plain - want).abs()).max((taped - want).abs());
    }
    let mut worst_l: f64 = 0.0;
    for _ in 0..100 {
        let (n1, n2, dim) = (rng.random_range(5..60), rng.random_range(5..60), rng.random_range(2..16));
        let a: Vec<Point3> = (0..n1)
            .map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(0.0..2.0)])
            .collect();
        let tf = RigidTransform::from_yaw(rng.random_range(-1.0..1.0), [1.0, 0.5, 0.0]);
        let b: Vec<Point3> = (0..n2)
            .map(|i| {
                if i < n1 && rng.random_bool(0.7) {
                    let p = tf.apply(&a[i]);
                    [p[0] + rng.random_range(-0.1..0.1), p[1], p[2]]
                } else {
                    [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(0.0..2.0)]
                }
            })
            .collect();
        let gamma = find_correspondences(&a, &b, &tf, c.r_corr);
        if gamma.is_empty() {
            continue;
        }
        let g1 = Matrix::from_fn(n1, dim, |_, _| rng.random_range(-0.8..0.8));
        let g2 = Matrix::from_fn(n2, dim, |_, _| rng.random_range(-0.8..0.8));
        let cands = NegativeCandidates::sample(n1, n2, rng.random_range(1..40), &mut rng);
        let got = local_consistency_loss(&g1, &g2, &gamma, &c, &cands).map_err(|e| e.to_string())?;
        let want = oracle_local(&g1, &g2, &gamma.pairs, &gamma.positions_a, &gamma.positions_b, &cands, &c);
        worst_l = worst_l.max((got - want).abs());
    }
    ensure(worst_t <= 1e-12, format!("triplet deviation {worst_t:e}"))?;
    ensure(worst_l <= 1e-9, format!("local deviation {worst_l:e}"))?;
    Ok(format!("triplet {worst_t:.1e} (1e4 cases), local {worst_l:.1e} (1e2 cases); m=0.1 m_p=0.1 m_n=2 mu_n=1"))
}

fn synthetic_run_config() -> RunConfig {
    RunConfig::from_toml(SYNTHETIC_CONFIG).expect("bundled config parses")
}

fn criterion_6() -> Check {
    let run = synthetic_run_config();
    let ds = generate_synthetic(&run.synthetic_config()).map_err(|e| e.to_string())?;
    let scans = ds.training_scans();
    let cfg = run.train_config();
    let mut rng = ChaCha8Rng::seed_from_u64(run.run.seed);
    let mut model = SalsaModel::new(run.model_config().map_err(|e| e.to_string())?, &mut rng).map_err(|e| e.to_string())?;
    let mut opt = Sgd::new(&model.params, cfg.lr, cfg.momentum);
    let budget = run.train.steps.min(500);
    let (mut steps, mut idle) = (0, 0);
    while steps < budget && idle < run.train.patience {
        let s = train_epoch(&scans, &mut model, &cfg, &mut opt, &mut rng, steps, budget - steps, &mut |_| {})
            .map_err(|e| e.to_string())?;
        steps += s.steps;
        idle = if s.steps == 0 { idle + 1 } else { 0 };
    }
    let desc = scan_descriptors(&model, &scans).map_err(|e| e.to_string())?;

    // hardest-negative triplet loss for every (query, positive) pair
    let (mut total, mut pairs) = (0.0, 0);
    for q in 0..scans.len() {
        for p in 0..scans.len() {
            if p == q || scans[q].pose.distance_to(&scans[p].pose) > run.mining.positive_radius {
                continue;
            }
            let worst = (0..scans.len())
                .filter(|&n| scans[q].pose.distance_to(&scans[n].pose) > run.mining.negative_radius)
                .map(|n| triplet_loss(&desc[q], &desc[p], &desc[n], cfg.loss.margin).unwrap())
                .fold(0.0, f64::max);
            total += worst;
            pairs += 1;
        }
    }
    let mean_loss = total / pairs as f64;

    let db_idx = ds.indices(ScanRole::Database);
    let mut db = DescriptorDatabase::new(desc[0].len());
    for &i in &db_idx {
        db.add(scans[i].id.clone(), desc[i].clone(), scans[i].pose, None).unwrap();
    }
    let queries = ds.indices(ScanRole::Query);
    let hits = queries
        .iter()
        .filter(|&&q| {
            let top = &db.knn(&desc[q], 1).unwrap().neighbors[0];
            db.entry(top.index).pose.distance_to(&scans[q].pose) <= 5.0
        })
        .count();
    let recall = 100.0 * hits as f64 / queries.len() as f64;
    let detail = format!("{steps} steps, mean triplet loss {mean_loss:.2e} over {pairs} pairs, R@1(5 m) {recall:.1}%");
    ensure(steps <= 500 && mean_loss < 0.01 && hits == queries.len(), detail.clone())?;
    Ok(detail)
}

fn criterion_7() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    for dbi in 0..3 {
        let dim = [4, 16, 64][dbi];
        let mut db = DescriptorDatabase::new(dim);
        let descs: Vec<Vec<f64>> = (0..10_000)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        for (i, d) in descs.iter().enumerate() {
            db.add(format!("e{i:05}"), d.clone(), RigidTransform::identity(), None).unwrap();
        }
        for _ in 0..20 {
            let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let k = rng.random_range(1..200);
            let mut all: Vec<(f64, usize)> = descs
                .iter()
                .enumerate()
                .map(|(i, d)| (d.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(), i))
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let got = db.knn(&q, k).map_err(|e| e.to_string())?;
            let want: Vec<usize> = all[..k].iter().map(|x| x.1).collect();
            ensure(got.indices() == want, format!("knn order differs (dim {dim}, k {k})"))?;
            for (n, w) in got.neighbors.iter().zip(&all) {
                ensure((n.distance - w.0).abs() <= 1e-12, "distance differs")?;
            }
            checked += 1;
        }
    }
    // first correct retrieval at ranks 1, 2 and 4
    let db_pos: Vec<Point3> = (0..6).map(|i| [100.0 * i as f64, 0.0, 0.0]).collect();
    let q_pos: Vec<Point3> = vec![[0.0; 3], [100.0, 0.0, 0.0], [200.0, 0.0, 0.0]];
    let rankings = vec![vec![0, 3, 4], vec![3, 1, 4], vec![3, 4, 5, 2]];
    let m = mrr(&rankings, &q_pos, &db_pos, 5.0, 25).map_err(|e| e.to_string())?;
    ensure((m.value - 175.0 / 3.0).abs() <= 1e-9, format!("MRR {}", m.value))?;
    Ok(format!("{checked} queries on 1e4-entry databases exact; MRR hand case {:.3}%", m.value))
}

fn consistent_set(
    rng: &mut ChaCha8Rng,
    query: &LocalDescriptorSet,
    consistent: f64,
) -> (LocalDescriptorSet, usize) {
    let tf = RigidTransform::from_yaw(rng.random_range(-3.0..3.0), [rng.random_range(-5.0..5.0), 3.0, 0.0]);
    let mut n_ok = 0;
    let positions = query
        .positions
        .iter()
        .map(|p| {
            if rng.random_bool(consistent) {
                n_ok += 1;
                tf.apply(p)
            } else {
                [rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0), rng.random_range(-2.0..6.0)]
            }
        })
        .collect();
    let desc = Matrix::from_fn(query.len(), query.dim(), |i, j| {
        query.descriptors.get(i, j) + 0.01 * rng.random_range(-1.0..1.0)
    });
    (LocalDescriptorSet::new(desc, positions).unwrap(), n_ok)
}

/// Redraws a candidate until its count of consistent correspondences satisfies `accept`.
fn draw_until(
    rng: &mut ChaCha8Rng,
    query: &LocalDescriptorSet,
    p: f64,
    accept: impl Fn(usize) -> bool,
) -> LocalDescriptorSet {
    loop {
        let (set, k) = consistent_set(rng, query, p);
        if accept(k) {
            return set;
        }
    }
}

fn criterion_8() -> Check {
    let mut promoted = 0;
    let mut untouched = true;
    let cfg = RerankConfig::default();
    ensure(cfg.depth == 20, "re-rank depth is not 20")?;
    for trial in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + trial);
        let n = 120;
        let positions: Vec<Point3> = (0..n)
            .map(|_| [rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0), rng.random_range(-2.0..6.0)])
            .collect();
        let query = LocalDescriptorSet::new(rand_matrix(&mut rng, n, 16), positions).unwrap();
        let truth = draw_until(&mut rng, &query, 0.85, |k| k as f64 >= 0.8 * n as f64);
        let distractors: Vec<LocalDescriptorSet> =
            (0..24).map(|_| draw_until(&mut rng, &query, 0.15, |k| k as f64 <= 0.2 * n as f64)).collect();
        let start = rng.random_range(2..=20usize);
        let mut sets: Vec<(String, &LocalDescriptorSet)> =
            distractors.iter().enumerate().map(|(i, d)| (format!("d{i:02}"), d)).collect();
        sets.insert(start - 1, ("truth".into(), &truth));
        let out = rerank(&query, &sets, &cfg).map_err(|e| e.to_string())?;
        if out[0].id == "truth" {
            promoted += 1;
        }
        for (pos, c) in out.iter().enumerate().skip(20) {
            untouched &= c.original_rank == pos && c.id == sets[pos].0;
        }
    }
    ensure(untouched, "candidates beyond depth 20 were reordered")?;
    ensure(promoted >= 90, format!("promoted in {promoted}/100 trials"))?;
    Ok(format!("true match promoted to rank 1 in {promoted}/100 trials; ranks past 20 untouched"))
}

fn criterion_9() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let n = rng.random_range(2..=32usize);
        let noise = rng.random_range(0.0..1.0);
        let p: Vec<Point3> = (0..n)
            .map(|_| [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(0.0..3.0)])
            .collect();
        let q: Vec<Point3> = p
            .iter()
            .map(|x| [x[0] + noise * rng.random_range(-1.0..1.0), x[1] + noise * rng.random_range(-1.0..1.0), x[2]])
            .collect();
        let m = MatchSet {
            pairs: (0..n).map(|i| Match { query: i, candidate: i, distance: 0.0 }).collect(),
            query_positions: p,
            candidate_positions: q,
            mutual: false,
        };
        let g = compatibility_matrix(&m, 0.6).map_err(|e| e.to_string())?;
        let f = spectral_fitness(&g).map_err(|e| e.to_string())?;
        let dense = DMatrix::from_fn(n, n, |i, j| g.matrix.get(i, j));
        let lmax = dense.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max((f.score - lmax.max(0.0) / n as f64).abs());
    }
    ensure(worst <= 1e-5, format!("max deviation {worst:e}"))?;
    Ok(format!("max fitness deviation {worst:.1e} over 500 matrices"))
}

fn criterion_10() -> Check {
    let cfg = RansacConfig::default();
    ensure(
        cfg.inlier_thresh == 0.5 && cfg.confidence == 0.999 && cfg.max_iter == 10_000,
        "RANSAC constants",
    )?;
    let scene = |rng: &mut ChaCha8Rng, n: usize, t: &RigidTransform, outliers: f64, sigma: f64| {
        let p: Vec<Point3> = (0..n)
            .map(|_| [rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0), rng.random_range(-2.0..5.0)])
            .collect();
        let normal = rand_distr::Normal::new(0.0, sigma.max(1e-300)).unwrap();
        let q = p
            .iter()
            .map(|x| {
                if rng.random_bool(outliers) {
                    [rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0), rng.random_range(-2.0..5.0)]
                } else {
                    let y = t.apply(x);
                    if sigma > 0.0 {
                        use rand_distr::Distribution;
                        [y[0] + normal.sample(rng), y[1] + normal.sample(rng), y[2] + normal.sample(rng)]
                    } else {
                        y
                    }
                }
            })
            .collect();
        MatchSet {
            pairs: (0..n).map(|i| Match { query: i, candidate: i, distance: 0.0 }).collect(),
            query_positions: p,
            candidate_positions: q,
            mutual: false,
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let gt = RigidTransform::from_axis_angle([0.1, -0.2, 1.0], 1.3, [12.0, -4.0, 0.7]);
    let exact = ransac_register(&scene(&mut rng, 100, &gt, 0.0, 0.0), &cfg, &mut rng);
    let e = pose_error(&exact.transform, &gt);
    ensure(exact.converged && e.rte < 1e-9 && e.rre < 1e-7, format!("zero-noise error {e:?}"))?;
    let mut ok = 0;
    let mut max_iter = 0;
    for trial in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let gt = RigidTransform::from_axis_angle(
            [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), 1.0],
            rng.random_range(-3.1..3.1),
            [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-1.0..1.0)],
        );
        let m = scene(&mut rng, 200, &gt, 0.3, 0.05);
        let est = ransac_register(&m, &cfg, &mut rng);
        max_iter = max_iter.max(est.iterations);
        if localization_success(&est, &gt) {
            ok += 1;
        }
    }
    ensure(max_iter <= 10_000, format!("{max_iter} iterations"))?;
    ensure(ok >= 99, format!("{ok}/100 successes"))?;
    Ok(format!(
        "zero noise rte {:.1e} m rre {:.1e}°; noisy {ok}/100 successes, at most {max_iter} iterations",
        e.rte, e.rre
    ))
}

fn criterion_11() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model = SalsaModel::new(ModelConfig::default(), &mut rng).map_err(|e| e.to_string())?;
    let ds = generate_synthetic(&salsa_core::dataset::SyntheticConfig {
        num_scenes: 40,
        points_per_scan: 256,
        revisits: 0,
        seed: 11,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let clouds: Vec<PointCloud> = ds.scans.iter().map(|s| s.cloud.clone()).collect();
    let desc = model.scene_descriptors(&clouds, None).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<f64>> = desc.into_iter().map(|d| d.values).collect();
    let x = Matrix::from_rows(&rows).map_err(|e| e.to_string())?;
    let w = fit_pca_whitener(&x, 24, WHITEN_EPS).map_err(|e| e.to_string())?;
    let white: Vec<Vec<f64>> = rows.iter().map(|r| w.apply(r).unwrap()).collect();
    let cov = sample_covariance(&Matrix::from_rows(&white).unwrap());
    let mut dev: f64 = 0.0;
    for i in 0..cov.rows() {
        for j in 0..cov.cols() {
            dev = dev.max((cov.get(i, j) - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    ensure(dev <= 1e-6, format!("covariance deviation {dev:e}"))?;
    let cloud = random_cloud(&mut rng, 64, 10.0);
    for v in ABLATION_DIMS {
        for text in [format!("[head]\ntokens = {v}\n"), format!("[head]\ndescriptor_dim = {v}\n")] {
            let cfg = RunConfig::from_toml(&text).map_err(|e| format!("{text:?}: {e}"))?;
            let mc = cfg.model_config().map_err(|e| e.to_string())?;
            let m = SalsaModel::new(mc.clone(), &mut rng).map_err(|e| e.to_string())?;
            let d = m.scene_descriptor(&cloud, None).map_err(|e| e.to_string())?;
            ensure(d.dim() == mc.descriptor_dim(), format!("{text:?} produced length {}", d.dim()))?;
        }
    }
    Ok(format!("whitened covariance within {dev:.1e} of I (40 scans, 512→24); ablation values {ABLATION_DIMS:?} accepted"))
}

fn run_pipeline(config: &Path, out: &Path) -> Result<(), String> {
    for cmd in ["synth", "train", "extract", "build-db", "query", "rerank", "register", "evaluate"] {
        let cli = Cli::try_parse_from([
            "salsa",
            cmd,
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .map_err(|e| e.to_string())?;
        run(&cli).map_err(|e| format!("{cmd}: {e}"))?;
    }
    Ok(())
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_12() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = tmp.path().join("synthetic.toml");
    fs::write(&config, SYNTHETIC_CONFIG).map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_pipeline(&config, &a)?;
    run_pipeline(&config, &b)?;
    let (ta, tb) = (read_tree(&a), read_tree(&b));
    ensure(ta.len() > 10, "pipeline wrote too few files")?;
    let differing: Vec<&String> = ta.keys().filter(|k| tb.get(*k) != ta.get(*k)).collect();
    ensure(differing.is_empty() && ta.len() == tb.len(), format!("outputs differ: {differing:?}"))?;
    let report: MetricsReport =
        serde_json::from_slice(&ta[METRICS_JSON]).map_err(|e| e.to_string())?;
    let r1 = |rows: &[salsa_cli::commands::MetricJson], radius: f64| {
        rows.iter()
            .find(|r| r.metric == "recall" && r.k == Some(1) && r.radius == radius)
            .map(|r| r.value)
    };
    let rerank = report.rerank.as_ref().ok_or("no re-rank metrics")?;
    let mut parts = Vec::new();
    for radius in [5.0, 20.0] {
        let before = r1(&report.retrieval, radius).ok_or("missing retrieval R@1")?;
        let after = r1(rerank, radius).ok_or("missing re-rank R@1")?;
        ensure(after >= before, format!("re-rank R@1 {after} < retrieval R@1 {before} at {radius} m"))?;
        parts.push(format!("R@1 {radius} m {before:.1} → {after:.1}"));
    }
    let success = report.registration.as_ref().map_or(0.0, |r| r.success_rate);
    Ok(format!("{} files identical across runs; {}; localization {success:.1}%", ta.len(), parts.join(", ")))
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    check: fn() -> Check,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "gradient suite", budget: Duration::from_secs(120), check: criterion_1 },
        Criterion { id: 2, name: "permutation invariance", budget: Duration::from_secs(60), check: criterion_2 },
        Criterion { id: 3, name: "radial window scaling", budget: Duration::from_secs(10), check: criterion_3 },
        Criterion { id: 4, name: "windowed attention oracle", budget: Duration::from_secs(30), check: criterion_4 },
        Criterion { id: 5, name: "loss oracles and constants", budget: Duration::from_secs(60), check: criterion_5 },
        Criterion { id: 6, name: "overfit on 20 scenes", budget: Duration::from_secs(600), check: criterion_6 },
        Criterion { id: 7, name: "retrieval oracle and MRR", budget: Duration::from_secs(30), check: criterion_7 },
        Criterion { id: 8, name: "re-ranking promotion", budget: Duration::from_secs(120), check: criterion_8 },
        Criterion { id: 9, name: "spectral fitness oracle", budget: Duration::from_secs(30), check: criterion_9 },
        Criterion { id: 10, name: "registration", budget: Duration::from_secs(120), check: criterion_10 },
        Criterion { id: 11, name: "PCA whitening and ablation knobs", budget: Duration::from_secs(30), check: criterion_11 },
        Criterion { id: 12, name: "end-to-end pipeline", budget: Duration::from_secs(900), check: criterion_12 },
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| selected.is_empty() || selected.contains(&c.id)) {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let (ok, detail) = match result {
            Ok(d) if elapsed <= c.budget => (true, d),
            Ok(d) => (false, format!("{d}; over the {:?} budget", c.budget)),
            Err(d) => (false, d),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<34} {} ({:.1} s) {detail}",
            c.id,
            c.name,
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
