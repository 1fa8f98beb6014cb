//! One function per subcommand. Each reads its inputs from the artifact
//! directory, writes its outputs there and fails with a validation error
//! naming the first missing input.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use salsa_core::dataset::generate_synthetic;
use salsa_core::descriptor::finish_descriptor;
use salsa_core::geometry::{pose_error, Point3, RigidTransform};
use salsa_core::localization::{match_local, ransac_register, ratio_prune, rerank};
use salsa_core::model::SalsaModel;
use salsa_core::numeric::{fit_pca_whitener, sample_covariance, Matrix, PcaWhitener, WHITEN_EPS};
use salsa_core::retrieval::{load_database, save_database, DescriptorDatabase, RetrievalMetrics};
use salsa_core::training::{train_epoch, Sgd, TrainingScan};

use crate::config::RunConfig;
use crate::dataset::{load_clouds, load_manifest, write_synthetic, Role, ScanRecord};
use crate::error::{CliError, CliResult};

pub const MODEL: &str = "model.salsa";
pub const WHITENED_MODEL: &str = "model_whitened.salsa";
pub const CHECKPOINTS: &str = "checkpoints";
pub const TRAIN_LOG: &str = "train_log.txt";
pub const TRAIN_SUMMARY: &str = "train_summary.json";
pub const DESCRIPTORS: &str = "descriptors.sdb";
pub const DATABASE: &str = "database.sdb";
pub const QUERIES: &str = "queries.sdb";
pub const WHITENING_REPORT: &str = "whitening.json";
pub const QUERY_RESULTS: &str = "query.json";
pub const RERANK_RESULTS: &str = "rerank.json";
pub const REGISTER_RESULTS: &str = "register.json";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_RERANK_CSV: &str = "metrics_rerank.csv";
pub const REGISTRATION_CSV: &str = "registration.csv";
pub const RECALL_CURVE_CSV: &str = "recall_curve.csv";
pub const FITNESS_CSV: &str = "fitness.csv";

/// Resolved configuration and paths for one invocation.
#[derive(Clone, Debug)]
pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
    pub data: PathBuf,
    pub model: PathBuf,
}

impl Context {
    pub fn new(config: RunConfig, out: Option<PathBuf>, data: Option<PathBuf>, model: Option<PathBuf>) -> Self {
        let out = out.unwrap_or_else(|| config.run.out_dir.clone());
        let data = data.or_else(|| config.data.dir.clone()).unwrap_or_else(|| out.join("data"));
        let model = model.unwrap_or_else(|| out.join(MODEL));
        Self {
            config,
            out,
            data,
            model,
        }
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn input(&self, name: &str, what: &str) -> CliResult<PathBuf> {
        let p = self.artifact(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(CliError::missing(what, &p))
        }
    }

    fn seed(&self) -> u64 {
        self.config.run.seed
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn load_db(path: &Path) -> CliResult<DescriptorDatabase> {
    load_database(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn position(t: &RigidTransform) -> Point3 {
    let v = t.translation();
    [v[0], v[1], v[2]]
}

pub fn cmd_synth(ctx: &Context) -> CliResult<String> {
    let ds = generate_synthetic(&ctx.config.synthetic_config())?;
    write_synthetic(&ctx.data, &ds)?;
    Ok(format!("wrote {} scans to {}", ds.scans.len(), ctx.data.display()))
}

pub fn cmd_init_config(path: Option<&Path>) -> CliResult<String> {
    let text = crate::config::default_config_text();
    match path {
        Some(p) => {
            fs::write(p, &text)?;
            Ok(format!("wrote default configuration to {}", p.display()))
        }
        None => Ok(text),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub epochs: usize,
    pub last_mean_total: f64,
    pub last_mean_global: f64,
    pub last_mean_local: f64,
    pub stopped_early: bool,
}

pub fn cmd_train(ctx: &Context) -> CliResult<String> {
    let records = load_manifest(&ctx.data)?;
    let clouds = load_clouds(&records)?;
    let scans: Vec<TrainingScan> = records
        .iter()
        .zip(clouds)
        .map(|(r, cloud)| TrainingScan {
            id: r.id.clone(),
            cloud,
            pose: r.pose,
        })
        .collect();
    let cfg = ctx.config.train_config();
    let t = &ctx.config.train;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed());
    let mut model = SalsaModel::new(ctx.config.model_config()?, &mut rng)?;
    let mut opt = Sgd::new(&model.params, cfg.lr, cfg.momentum);
    fs::create_dir_all(&ctx.out)?;
    if t.checkpoint_every > 0 {
        fs::create_dir_all(ctx.artifact(CHECKPOINTS))?;
    }
    let mut log = String::new();
    let mut summary = TrainSummary {
        steps: 0,
        epochs: 0,
        last_mean_total: 0.0,
        last_mean_global: 0.0,
        last_mean_local: 0.0,
        stopped_early: false,
    };
    let mut idle = 0;
    let mut next_checkpoint = t.checkpoint_every;
    while summary.epochs < t.max_epochs && summary.steps < t.steps {
        let stats = train_epoch(
            &scans,
            &mut model,
            &cfg,
            &mut opt,
            &mut rng,
            summary.steps,
            t.steps - summary.steps,
            &mut |s| {
                writeln!(log, "{s}").expect("write to string");
            },
        )?;
        summary.epochs += 1;
        summary.steps += stats.steps;
        let line = format!(
            "epoch={} steps={} mean_L_G={:.6} mean_L_l={:.6} mean_total={:.6} no_positive={} no_hard_negative={}",
            summary.epochs,
            stats.steps,
            stats.mean_global,
            stats.mean_local,
            stats.mean_total,
            stats.skipped_no_positive,
            stats.skipped_no_hard_negative
        );
        log::info!("{line}");
        log.push_str(&line);
        log.push('\n');
        if stats.steps == 0 {
            idle += 1;
            if idle >= t.patience {
                summary.stopped_early = true;
                break;
            }
            continue;
        }
        idle = 0;
        summary.last_mean_total = stats.mean_total;
        summary.last_mean_global = stats.mean_global;
        summary.last_mean_local = stats.mean_local;
        if t.checkpoint_every > 0 && summary.steps >= next_checkpoint {
            model.save(&ctx.artifact(CHECKPOINTS).join(format!("step_{:06}.salsa", summary.steps)), None)?;
            while next_checkpoint <= summary.steps {
                next_checkpoint += t.checkpoint_every;
            }
        }
    }
    model.save(&ctx.model, None)?;
    fs::write(ctx.artifact(TRAIN_LOG), log)?;
    write_json(&ctx.artifact(TRAIN_SUMMARY), &summary)?;
    Ok(format!(
        "trained {} steps over {} epochs; model at {}",
        summary.steps,
        summary.epochs,
        ctx.model.display()
    ))
}

fn load_model(ctx: &Context, path: &Path) -> CliResult<(SalsaModel, Option<PcaWhitener>)> {
    if !path.is_file() {
        return Err(CliError::missing("model weights", path));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = SalsaModel::new(ctx.config.model_config()?, &mut rng)?;
    let w = model
        .load_weights(path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Ok((model, w))
}

pub fn cmd_extract(ctx: &Context) -> CliResult<String> {
    let records = load_manifest(&ctx.data)?;
    let (model, _) = load_model(ctx, &ctx.model)?;
    let clouds = load_clouds(&records)?;
    let described: Vec<_> = clouds
        .par_iter()
        .map(|c| model.describe(c, None))
        .collect::<Result<_, _>>()?;
    let mut db = DescriptorDatabase::new(model.config.descriptor_dim());
    for (r, (scene, local)) in records.iter().zip(described) {
        db.add(r.id.clone(), scene.values, r.pose, Some(local))?;
    }
    fs::create_dir_all(&ctx.out)?;
    save_database(&ctx.artifact(DESCRIPTORS), &db)?;
    Ok(format!("extracted descriptors for {} scans", db.len()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WhiteningReport {
    pub input_dim: usize,
    pub output_dim: usize,
    pub fitted_on: usize,
    /// Largest `|C − I|` entry of the whitened database covariance.
    pub max_covariance_deviation: f64,
}

fn split_roles(records: &[ScanRecord], all: &DescriptorDatabase, role: Role) -> CliResult<Vec<usize>> {
    records
        .iter()
        .filter(|r| r.role == role)
        .map(|r| {
            all.index_of(&r.id)
                .ok_or_else(|| CliError::Validation(format!("scan {} has no extracted descriptor; rerun extract", r.id)))
        })
        .collect()
}

pub fn cmd_build_db(ctx: &Context) -> CliResult<String> {
    let records = load_manifest(&ctx.data)?;
    let all = load_db(&ctx.input(DESCRIPTORS, "extracted descriptors")?)?;
    let db_idx = split_roles(&records, &all, Role::Database)?;
    let q_idx = split_roles(&records, &all, Role::Query)?;
    if db_idx.is_empty() {
        return Err(CliError::Validation("dataset has no database scans".into()));
    }
    let w = &ctx.config.whitening;
    let whitener = if w.enabled {
        let rows: Vec<Vec<f64>> = db_idx.iter().map(|&i| all.entry(i).descriptor.clone()).collect();
        let x = Matrix::from_rows(&rows)?;
        let fit = fit_pca_whitener(&x, w.output_dim, WHITEN_EPS)?;
        let whitened: Vec<Vec<f64>> = rows.iter().map(|r| fit.apply(r)).collect::<Result<_, _>>()?;
        let cov = sample_covariance(&Matrix::from_rows(&whitened)?);
        let mut dev: f64 = 0.0;
        for i in 0..cov.rows() {
            for j in 0..cov.cols() {
                let target = if i == j { 1.0 } else { 0.0 };
                dev = dev.max((cov.get(i, j) - target).abs());
            }
        }
        write_json(
            &ctx.artifact(WHITENING_REPORT),
            &WhiteningReport {
                input_dim: fit.input_dim(),
                output_dim: fit.output_dim(),
                fitted_on: rows.len(),
                max_covariance_deviation: dev,
            },
        )?;
        let (model, _) = load_model(ctx, &ctx.model)?;
        model.save(&ctx.artifact(WHITENED_MODEL), Some(&fit))?;
        Some(fit)
    } else {
        None
    };
    let dim = whitener.as_ref().map_or(all.dim(), |w| w.output_dim());
    let build = |idx: &[usize]| -> CliResult<DescriptorDatabase> {
        let mut db = DescriptorDatabase::new(dim);
        for &i in idx {
            let e = all.entry(i);
            let values = match &whitener {
                Some(w) => finish_descriptor(e.descriptor.clone(), Some(w))?.values,
                None => e.descriptor.clone(),
            };
            db.add(e.id.clone(), values, e.pose, e.local.clone())?;
        }
        Ok(db)
    };
    let database = build(&db_idx)?;
    let queries = build(&q_idx)?;
    save_database(&ctx.artifact(DATABASE), &database)?;
    save_database(&ctx.artifact(QUERIES), &queries)?;
    Ok(format!(
        "database of {} scans, {} queries, dimension {dim}{}",
        database.len(),
        queries.len(),
        if whitener.is_some() { " (whitened)" } else { "" }
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborRecord {
    pub id: String,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub neighbors: Vec<NeighborRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResults {
    pub k: usize,
    pub queries: Vec<QueryRecord>,
}

pub fn cmd_query(ctx: &Context) -> CliResult<String> {
    let db = load_db(&ctx.input(DATABASE, "descriptor database")?)?;
    let queries = load_db(&ctx.input(QUERIES, "query descriptors")?)?;
    if db.dim() != queries.dim() {
        return Err(CliError::Validation("database and query descriptors differ in length".into()));
    }
    let k = ctx.config.retrieval.top_k;
    let records = queries
        .entries()
        .iter()
        .map(|q| {
            let res = db.knn(&q.descriptor, k)?;
            Ok(QueryRecord {
                id: q.id.clone(),
                neighbors: res
                    .neighbors
                    .into_iter()
                    .map(|n| NeighborRecord {
                        id: n.id,
                        distance: n.distance,
                    })
                    .collect(),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let n = records.len();
    write_json(&ctx.artifact(QUERY_RESULTS), &QueryResults { k, queries: records })?;
    Ok(format!("retrieved top {k} for {n} queries"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub id: String,
    pub original_rank: usize,
    pub fitness: f64,
    pub matches: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RerankRecord {
    pub id: String,
    pub candidates: Vec<CandidateRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RerankResults {
    pub depth: usize,
    pub queries: Vec<RerankRecord>,
}

fn local_of<'a>(db: &'a DescriptorDatabase, id: &str) -> CliResult<&'a salsa_core::backbone::LocalDescriptorSet> {
    db.get(id)
        .ok_or_else(|| CliError::Validation(format!("{id} is not in the database")))?
        .local
        .as_ref()
        .ok_or_else(|| CliError::Validation(format!("{id} has no local descriptors")))
}

pub fn cmd_rerank(ctx: &Context) -> CliResult<String> {
    let results: QueryResults = read_json(&ctx.input(QUERY_RESULTS, "query results")?)?;
    let db = load_db(&ctx.input(DATABASE, "descriptor database")?)?;
    let queries = load_db(&ctx.input(QUERIES, "query descriptors")?)?;
    let cfg = ctx.config.rerank_config();
    let records = results
        .queries
        .iter()
        .map(|q| {
            let q_local = local_of(&queries, &q.id)?;
            let cands = q
                .neighbors
                .iter()
                .map(|n| Ok((n.id.clone(), local_of(&db, &n.id)?)))
                .collect::<CliResult<Vec<_>>>()?;
            let ranked = rerank(q_local, &cands, &cfg)?;
            Ok(RerankRecord {
                id: q.id.clone(),
                candidates: ranked
                    .into_iter()
                    .map(|c| CandidateRecord {
                        id: c.id,
                        original_rank: c.original_rank,
                        fitness: c.fitness,
                        matches: c.matches,
                    })
                    .collect(),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let n = records.len();
    write_json(
        &ctx.artifact(RERANK_RESULTS),
        &RerankResults {
            depth: cfg.depth,
            queries: records,
        },
    )?;
    Ok(format!("re-ranked the top {} candidates of {n} queries", cfg.depth))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationRecord {
    pub query: String,
    pub candidate: String,
    pub matches: usize,
    pub kept_matches: usize,
    /// Query frame to candidate frame, row-major 3×4.
    pub transform: Vec<f64>,
    pub inliers: usize,
    pub inlier_ratio: f64,
    pub iterations: usize,
    pub converged: bool,
    pub rte: f64,
    pub rre: f64,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResults {
    pub queries: Vec<RegistrationRecord>,
}

pub fn cmd_register(ctx: &Context) -> CliResult<String> {
    let results: RerankResults = read_json(&ctx.input(RERANK_RESULTS, "re-ranked results")?)?;
    let db = load_db(&ctx.input(DATABASE, "descriptor database")?)?;
    let queries = load_db(&ctx.input(QUERIES, "query descriptors")?)?;
    let reg = &ctx.config.registration;
    let ransac = ctx.config.ransac_config();
    let seed = ctx.seed();
    let records = results
        .queries
        .par_iter()
        .enumerate()
        .filter_map(|(i, q)| q.candidates.first().map(|c| (i, q, c)))
        .map(|(i, q, c)| {
            let q_entry = queries
                .get(&q.id)
                .ok_or_else(|| CliError::Validation(format!("{} is not among the queries", q.id)))?;
            let c_entry = db
                .get(&c.id)
                .ok_or_else(|| CliError::Validation(format!("{} is not in the database", c.id)))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let m = match_local(local_of(&queries, &q.id)?, local_of(&db, &c.id)?, reg.max_matches)?;
            let kept = ratio_prune(&m, reg.ratio_tau, reg.ratio_samples, &mut rng);
            let est = ransac_register(&kept, &ransac, &mut rng);
            let gt = c_entry.pose.inverse().compose(&q_entry.pose);
            let err = pose_error(&est.transform, &gt);
            Ok(RegistrationRecord {
                query: q.id.clone(),
                candidate: c.id.clone(),
                matches: m.len(),
                kept_matches: kept.len(),
                transform: est.transform.to_row_major_3x4().to_vec(),
                inliers: est.inliers,
                inlier_ratio: est.inlier_ratio,
                iterations: est.iterations,
                converged: est.converged,
                rte: err.rte,
                rre: err.rre,
                success: err.rte <= reg.success_rte && err.rre <= reg.success_rre_deg,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let ok = records.iter().filter(|r| r.success).count();
    let n = records.len();
    write_json(&ctx.artifact(REGISTER_RESULTS), &RegistrationResults { queries: records })?;
    Ok(format!("registered {n} queries, {ok} within the success thresholds"))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricJson {
    pub metric: String,
    pub k: Option<usize>,
    pub radius: f64,
    pub value: f64,
    pub evaluated: usize,
    pub excluded: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RegistrationSummary {
    pub registered: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_rte: f64,
    pub mean_rre: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub retrieval: Vec<MetricJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rerank: Option<Vec<MetricJson>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub registration: Option<RegistrationSummary>,
}

fn metric_rows(m: &RetrievalMetrics) -> Vec<MetricJson> {
    m.rows
        .iter()
        .map(|r| MetricJson {
            metric: r.metric.clone(),
            k: r.k,
            radius: r.radius,
            value: r.value.value,
            evaluated: r.value.evaluated,
            excluded: r.value.excluded,
        })
        .collect()
}

fn rankings<'a>(db: &DescriptorDatabase, lists: impl Iterator<Item = Vec<&'a str>>) -> CliResult<Vec<Vec<usize>>> {
    lists
        .map(|ids| {
            ids.into_iter()
                .map(|id| db.index_of(id).ok_or_else(|| CliError::Validation(format!("{id} is not in the database"))))
                .collect()
        })
        .collect()
}

fn query_positions(queries: &DescriptorDatabase, ids: impl Iterator<Item = String>) -> CliResult<Vec<Point3>> {
    ids.map(|id| {
        queries
            .get(&id)
            .map(|e| position(&e.pose))
            .ok_or_else(|| CliError::Validation(format!("{id} is not among the queries")))
    })
    .collect()
}

pub fn cmd_evaluate(ctx: &Context) -> CliResult<String> {
    let results: QueryResults = read_json(&ctx.input(QUERY_RESULTS, "query results")?)?;
    let db = load_db(&ctx.input(DATABASE, "descriptor database")?)?;
    let queries = load_db(&ctx.input(QUERIES, "query descriptors")?)?;
    let r = &ctx.config.retrieval;
    let db_pos: Vec<Point3> = db.entries().iter().map(|e| position(&e.pose)).collect();

    let ranks = rankings(&db, results.queries.iter().map(|q| q.neighbors.iter().map(|n| n.id.as_str()).collect()))?;
    let qpos = query_positions(&queries, results.queries.iter().map(|q| q.id.clone()))?;
    let retrieval = RetrievalMetrics::evaluate(&ranks, &qpos, &db_pos, &r.recall_ks, &r.radii, r.mrr_depth)?;
    fs::write(ctx.artifact(METRICS_CSV), retrieval.to_csv())?;
    let mut curve = String::from("stage,radius,k,recall\n");
    let curve_ks: Vec<usize> = (1..=r.top_k).collect();
    let mut add_curve = |stage: &str, ranks: &[Vec<usize>], qpos: &[Point3]| -> CliResult<()> {
        let m = RetrievalMetrics::evaluate(ranks, qpos, &db_pos, &curve_ks, &r.radii, r.mrr_depth)?;
        for row in m.rows.iter().filter(|x| x.metric == "recall") {
            writeln!(curve, "{stage},{},{},{}", row.radius, row.k.unwrap_or(0), row.value.value).expect("write to string");
        }
        Ok(())
    };
    add_curve("retrieval", &ranks, &qpos)?;

    let mut summary = format!(
        "retrieval R@1 {}",
        r.radii
            .iter()
            .map(|&rad| format!("{rad} m: {:.2}", retrieval.recall(1, rad).unwrap_or(f64::NAN)))
            .collect::<Vec<_>>()
            .join(", ")
    );

    let rerank_path = ctx.artifact(RERANK_RESULTS);
    let rerank = if rerank_path.is_file() {
        let rr: RerankResults = read_json(&rerank_path)?;
        let ranks = rankings(&db, rr.queries.iter().map(|q| q.candidates.iter().map(|c| c.id.as_str()).collect()))?;
        let qpos = query_positions(&queries, rr.queries.iter().map(|q| q.id.clone()))?;
        let m = RetrievalMetrics::evaluate(&ranks, &qpos, &db_pos, &r.recall_ks, &r.radii, r.mrr_depth)?;
        fs::write(ctx.artifact(METRICS_RERANK_CSV), m.to_csv())?;
        add_curve("rerank", &ranks, &qpos)?;
        let radius = r.radii[0];
        let mut fit = String::from("query,candidate,original_rank,fitness,true_match\n");
        for (q, p) in rr.queries.iter().zip(&qpos) {
            for c in q.candidates.iter().filter(|c| c.original_rank < rr.depth) {
                let d = db.get(&c.id).map(|e| salsa_core::geometry::distance(&position(&e.pose), p));
                let truth = d.is_some_and(|d| d <= radius);
                writeln!(fit, "{},{},{},{},{}", q.id, c.id, c.original_rank, c.fitness, truth).expect("write to string");
            }
        }
        fs::write(ctx.artifact(FITNESS_CSV), fit)?;
        write!(
            summary,
            "; re-ranked R@1 {}",
            r.radii
                .iter()
                .map(|&rad| format!("{rad} m: {:.2}", m.recall(1, rad).unwrap_or(f64::NAN)))
                .collect::<Vec<_>>()
                .join(", ")
        )
        .expect("write to string");
        Some(metric_rows(&m))
    } else {
        None
    };
    fs::write(ctx.artifact(RECALL_CURVE_CSV), curve)?;

    let reg_path = ctx.artifact(REGISTER_RESULTS);
    let registration = if reg_path.is_file() {
        let reg: RegistrationResults = read_json(&reg_path)?;
        let mut table = String::from("query,candidate,rte,rre,success\n");
        for x in &reg.queries {
            writeln!(table, "{},{},{},{},{}", x.query, x.candidate, x.rte, x.rre, x.success).expect("write to string");
        }
        fs::write(ctx.artifact(REGISTRATION_CSV), table)?;
        let n = reg.queries.len();
        let successes = reg.queries.iter().filter(|x| x.success).count();
        let mean = |f: fn(&RegistrationRecord) -> f64| {
            if n == 0 {
                0.0
            } else {
                reg.queries.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let s = RegistrationSummary {
            registered: n,
            successes,
            success_rate: if n == 0 { 0.0 } else { 100.0 * successes as f64 / n as f64 },
            mean_rte: mean(|x| x.rte),
            mean_rre: mean(|x| x.rre),
        };
        write!(summary, "; localization success {:.2}%", s.success_rate).expect("write to string");
        Some(s)
    } else {
        None
    };
    write_json(
        &ctx.artifact(METRICS_JSON),
        &MetricsReport {
            retrieval: metric_rows(&retrieval),
            rerank,
            registration,
        },
    )?;
    Ok(summary)
}
