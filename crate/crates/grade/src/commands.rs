//! Subcommand implementations. Each writes its results to `out` and to the
//! configured output directory.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use grade_core::discrepancy::{gsd, gsd_degree, gsd_label, Bandwidth, BaseDiscrepancy, Coral, DiscrepancyReport, Mmd};
use grade_core::gnn::link_logits;
use grade_core::graph::{bipartite_graph, degree_one_hot, synth_shift_pair};
use grade_core::metrics::{accuracy, mae_r2, rank_metrics};
use grade_core::ranking::{build_ranked_eval, leave_one_out, sample_candidates};
use grade_core::trainer::{embed, one_hot, predict_classes, predict_values, pseudo_labels, EpochRecord, LinkTrainer, NodeTrainer};
use grade_core::wl::{counting_gsd, counting_gsd_joint, degree_labels, kernel_report, relabel_pair, CountingBase};
use grade_core::{Graph, Labels};

use crate::checkpoint::Checkpoint;
use crate::config::{BaseName, GraphFiles, NodeTask, RunConfig, VariantName};
use crate::io::{self, LabelMode};

pub const CONFIG_FILE: &str = "config.json";
pub const LOG_FILE: &str = "log.tsv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_FILE: &str = "metrics.tsv";

fn prepare_out(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    write_file(&cfg.out.join(CONFIG_FILE), &cfg.to_json())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// `name<TAB>value` lines with six decimals.
pub fn format_metrics(metrics: &[(String, f64)]) -> String {
    metrics.iter().map(|(k, v)| format!("{k}\t{v:.6}\n")).collect()
}

fn emit_metrics(cfg: &RunConfig, metrics: &[(String, f64)], out: &mut dyn Write) -> Result<()> {
    let text = format_metrics(metrics);
    write_file(&cfg.out.join(METRICS_FILE), &text)?;
    out.write_all(text.as_bytes())?;
    Ok(())
}

fn log_header(depth: usize) -> String {
    let mut cols = vec!["epoch".to_owned(), "task_loss".to_owned()];
    cols.extend((0..=depth).map(|m| format!("gsd_{m}")));
    cols.extend(["gsd".to_owned(), "total".to_owned()]);
    cols.join("\t") + "\n"
}

fn log_line(r: &EpochRecord) -> String {
    let mut cols = vec![r.epoch.to_string(), r.task_loss.to_string()];
    cols.extend(r.gsd_per_depth.iter().map(|x| x.to_string()));
    cols.extend([r.gsd.to_string(), r.total.to_string()]);
    cols.join("\t") + "\n"
}

fn label_mode(cfg: &RunConfig) -> LabelMode {
    match cfg.train.task {
        NodeTask::Class => LabelMode::Class,
        NodeTask::Regress => LabelMode::Regress,
    }
}

fn load_files(files: &GraphFiles, mode: LabelMode, max_degree: usize) -> Result<Graph> {
    let g = io::load_graph_csv(&files.edges, files.features.as_deref(), files.labels.as_deref(), mode)?;
    if files.features.is_none() {
        // Without attributes, nodes are described by their degree.
        let f = degree_one_hot(&g, max_degree);
        return Ok(g.with_features(f)?);
    }
    Ok(g)
}

/// Source and target graphs from files, or the synthetic pair when the
/// config names neither.
pub fn node_graphs(cfg: &RunConfig) -> Result<(Graph, Graph)> {
    match (&cfg.source, &cfg.target) {
        (Some(s), Some(t)) => {
            let mode = label_mode(cfg);
            let gs = load_files(s, mode, cfg.train.max_degree).context("loading source graph")?;
            let gt = load_files(t, mode, cfg.train.max_degree).context("loading target graph")?;
            Ok((gs, gt))
        }
        (None, None) => {
            ensure!(
                cfg.train.task == NodeTask::Class,
                "the synthetic pair carries class labels; regression needs source and target files"
            );
            Ok(synth_shift_pair(&cfg.synth_config())?)
        }
        _ => bail!("give both \"source\" and \"target\" graph files, or neither for the synthetic pair"),
    }
}

fn node_metrics(params: &grade_core::gnn::ModelParams, g: &Graph, labels: Option<&Labels>, side: &str) -> Result<Vec<(String, f64)>> {
    Ok(match labels {
        Some(Labels::Classes(y)) => {
            vec![(format!("{side}_accuracy"), accuracy(&predict_classes(params, g)?, y)?)]
        }
        Some(Labels::Targets(y)) => {
            let (mae, r2) = mae_r2(&predict_values(params, g)?, y)?;
            vec![(format!("{side}_mae"), mae), (format!("{side}_r2"), r2)]
        }
        None => Vec::new(),
    })
}

fn final_metrics(history: &[EpochRecord]) -> Vec<(String, f64)> {
    history
        .last()
        .map(|r| {
            vec![
                ("final_task_loss".to_owned(), r.task_loss),
                ("final_gsd".to_owned(), r.gsd),
            ]
        })
        .unwrap_or_default()
}

pub fn train_node(cfg: &mut RunConfig, out: &mut dyn Write) -> Result<()> {
    cfg.fill_defaults(false);
    let tc = cfg.train_config(false)?;
    let (source, target) = node_graphs(cfg)?;
    prepare_out(cfg)?;
    // Target labels are kept for evaluation only.
    let target_labels = target.labels().cloned();
    let target = target.with_labels(None)?;
    if tc.variant == grade_core::trainer::VariantKind::Label {
        eprintln!("note: label variant refreshes target pseudo-labels every epoch");
    }
    let mut trainer = NodeTrainer::new(&source, &target, tc.clone())?;
    let mut log = log_header(tc.depth);
    for _ in 0..tc.epochs {
        log.push_str(&log_line(trainer.step()?));
    }
    write_file(&cfg.out.join(LOG_FILE), &log)?;
    let model = trainer.finish();
    Checkpoint::from_params(&model.params, cfg.seed).save(&cfg.out.join(CHECKPOINT_FILE))?;
    let mut metrics = node_metrics(&model.params, &source, source.labels(), "source")?;
    metrics.extend(node_metrics(&model.params, &target, target_labels.as_ref(), "target")?);
    metrics.extend(final_metrics(&model.history));
    emit_metrics(cfg, &metrics, out)
}

pub fn train_rec(cfg: &mut RunConfig, out: &mut dyn Write) -> Result<()> {
    cfg.fill_defaults(true);
    let tc = cfg.train_config(true)?;
    let path = |p: &Option<std::path::PathBuf>, side: &str| {
        p.clone()
            .with_context(|| format!("recommendation needs rec.{side}, a \"user_id,item_id\" file"))
    };
    let src = io::read_interactions(&path(&cfg.rec.source, "source")?)?;
    let tgt = io::read_interactions(&path(&cfg.rec.target, "target")?)?;
    ensure!(cfg.rec.k > 0, "rec.k must be positive");
    let split = leave_one_out(&tgt.pairs, cfg.seed);
    ensure!(
        !split.held_out.is_empty(),
        "no target user has two or more interactions to hold out"
    );
    let gs = bipartite_graph(src.users.len(), src.items.len(), &src.pairs, tc.max_degree)?;
    let gt = bipartite_graph(tgt.users.len(), tgt.items.len(), &split.train, tc.max_degree)?;
    prepare_out(cfg)?;
    let mut trainer = LinkTrainer::new(&gs, &gt, tc.clone())?;
    let mut log = log_header(tc.depth);
    for _ in 0..tc.epochs {
        log.push_str(&log_line(trainer.step()?));
    }
    write_file(&cfg.out.join(LOG_FILE), &log)?;
    let model = trainer.finish();
    Checkpoint::from_params(&model.params, cfg.seed).save(&cfg.out.join(CHECKPOINT_FILE))?;

    let candidates = sample_candidates(&split.held_out, &tgt.pairs, tgt.items.len(), cfg.rec.negatives, cfg.seed);
    let emb = embed(&model.params, &gt)?;
    let nu = tgt.users.len();
    let eval = build_ranked_eval(&candidates, cfg.rec.k, |u, items| {
        let pairs: Vec<(usize, usize)> = items.iter().map(|&i| (u, nu + i)).collect();
        link_logits(emb.last(), &pairs, &model.params)
    })?;
    let m = rank_metrics(&eval)?;
    let k = cfg.rec.k;
    let mut metrics = vec![
        (format!("hr@{k}"), m.hr),
        (format!("mrr@{k}"), m.mrr),
        (format!("ndcg@{k}"), m.ndcg),
        ("users_evaluated".to_owned(), eval.users.len() as f64),
    ];
    metrics.extend(final_metrics(&model.history));
    emit_metrics(cfg, &metrics, out)
}

/// Graphs with discrete initial labels: label-file tokens when present,
/// node degrees otherwise.
/// A graph with one label token per node.
type Tokened = (Graph, Vec<String>);

fn discrete_pair(cfg: &RunConfig) -> Result<(Tokened, Tokened)> {
    let load = |files: &GraphFiles, side: &str| -> Result<Tokened> {
        let g = io::load_graph_csv(&files.edges, None, None, LabelMode::Class)
            .with_context(|| format!("loading {side} graph"))?;
        let labels = match &files.labels {
            Some(p) => {
                let t = io::read_label_tokens(p)?;
                ensure!(
                    t.len() == g.num_nodes(),
                    "{}: {} labels for a {}-node graph",
                    p.display(),
                    t.len(),
                    g.num_nodes()
                );
                t
            }
            None => degree_labels(&g).iter().map(|d| format!("deg{d}")).collect(),
        };
        Ok((g, labels))
    };
    match (&cfg.source, &cfg.target) {
        (Some(s), Some(t)) => Ok((load(s, "source")?, load(t, "target")?)),
        (None, None) => {
            let (gs, gt) = synth_shift_pair(&cfg.synth_config())?;
            let deg = |g: &Graph| degree_labels(g).iter().map(|d| format!("deg{d}")).collect();
            let (ls, lt) = (deg(&gs), deg(&gt));
            Ok(((gs, ls), (gt, lt)))
        }
        _ => bail!("give both \"source\" and \"target\" graph files, or neither for the synthetic pair"),
    }
}

pub fn kernel(cfg: &mut RunConfig, out: &mut dyn Write) -> Result<()> {
    let ((gs, ls), (gt, lt)) = discrete_pair(cfg)?;
    let (a, b) = relabel_pair(&gs, &ls, &gt, &lt, cfg.train.depth)?;
    let report = kernel_report(&a, &b)?;
    let mut text = String::from("depth\tmatches\n");
    for (m, c) in report.matches.iter().enumerate() {
        text.push_str(&format!("{m}\t{c}\n"));
    }
    text.push_str(&format!("pairs\t{}\nkernel\t{}\n", report.pair_count, report.value));
    prepare_out(cfg)?;
    write_file(&cfg.out.join("kernel.tsv"), &text)?;
    out.write_all(text.as_bytes())?;
    Ok(())
}

/// One line per depth, then the mean, in shortest round-trip form.
pub fn format_report(r: &DiscrepancyReport) -> String {
    let mut text = format!("base\t{}\n", r.base_name);
    for (m, v) in r.per_depth.iter().enumerate() {
        text.push_str(&format!("depth_{m}\t{v}\n"));
    }
    if let Some(bws) = &r.bandwidths {
        for (m, b) in bws.iter().enumerate() {
            text.push_str(&format!("bandwidth_{m}\t{b}\n"));
        }
    }
    text.push_str(&format!("gsd\t{}\n", r.gsd));
    text
}

fn counting_report(cfg: &RunConfig) -> Result<DiscrepancyReport> {
    let ((gs, ls), (gt, lt)) = discrete_pair(cfg)?;
    let (a, b) = relabel_pair(&gs, &ls, &gt, &lt, cfg.train.depth)?;
    let base = CountingBase::TotalVariation;
    Ok(match cfg.train.variant {
        VariantName::Plain => counting_gsd(&a, &b, base)?,
        VariantName::Degree => counting_gsd_joint(&a, &gs.degrees(), &b, &gt.degrees(), base)?,
        VariantName::Label => bail!("the label variant needs learned embeddings; use base mmd or coral with a checkpoint"),
    })
}

fn embedding_report(cfg: &RunConfig) -> Result<DiscrepancyReport> {
    let ckpt = cfg
        .gsd
        .checkpoint
        .as_ref()
        .context("bases mmd and coral compare learned embeddings; set gsd.checkpoint")?;
    let params = Checkpoint::load(ckpt)?.to_params()?;
    let (gs, gt) = node_graphs(cfg)?;
    let base: Box<dyn BaseDiscrepancy> = match (cfg.gsd.base, cfg.gsd.bandwidth) {
        (BaseName::Mmd, None) => Box::new(Mmd::default()),
        (BaseName::Mmd, Some(b)) => Box::new(Mmd { bandwidth: Bandwidth::Fixed(b), ..Mmd::default() }),
        (BaseName::Coral, _) => Box::new(Coral),
        (BaseName::Tv, _) => unreachable!("handled by the counting path"),
    };
    let es = embed(&params, &gs)?;
    let et = embed(&params, &gt)?;
    Ok(match cfg.train.variant {
        VariantName::Plain => gsd(&es, &et, base.as_ref())?,
        VariantName::Degree => {
            let d = cfg.train.max_degree;
            gsd_degree(&es, &et, &degree_one_hot(&gs, d), &degree_one_hot(&gt, d), base.as_ref())?
        }
        VariantName::Label => {
            let y = gs
                .labels()
                .and_then(Labels::classes)
                .context("the label variant needs source class labels")?;
            let classes = params.output_dim();
            ensure!(y.iter().all(|&c| c < classes), "source labels exceed the checkpoint's {classes} classes");
            gsd_label(&es, &et, &one_hot(y, classes), &pseudo_labels(&params, &gt)?, base.as_ref())?
        }
    })
}

pub fn gsd_cmd(cfg: &mut RunConfig, out: &mut dyn Write) -> Result<()> {
    let report = match cfg.gsd.base {
        BaseName::Tv => counting_report(cfg)?,
        _ => embedding_report(cfg)?,
    };
    let text = format_report(&report);
    prepare_out(cfg)?;
    write_file(&cfg.out.join("gsd.tsv"), &text)?;
    out.write_all(text.as_bytes())?;
    Ok(())
}

pub fn synth(cfg: &mut RunConfig, out: &mut dyn Write) -> Result<()> {
    let (gs, gt) = synth_shift_pair(&cfg.synth_config())?;
    prepare_out(cfg)?;
    let mut pair = RunConfig::default();
    for (side, g, slot) in [("source", &gs, &mut pair.source), ("target", &gt, &mut pair.target)] {
        let files = GraphFiles {
            edges: format!("{side}_edges.csv").into(),
            features: Some(format!("{side}_features.csv").into()),
            labels: Some(format!("{side}_labels.txt").into()),
        };
        let dir = &cfg.out;
        io::write_edges(&dir.join(&files.edges), g)?;
        io::write_features(&dir.join(files.features.as_ref().expect("set")), g.features())?;
        io::write_labels(&dir.join(files.labels.as_ref().expect("set")), g.labels().expect("synthetic labels"))?;
        writeln!(out, "{side}\t{} nodes\t{} edges", g.num_nodes(), g.num_edges())?;
        *slot = Some(files);
    }
    // A config fragment naming the files, relative to its own directory.
    let fragment = serde_json::json!({ "source": pair.source, "target": pair.target });
    write_file(&cfg.out.join("pair.json"), &(serde_json::to_string_pretty(&fragment)? + "\n"))?;
    Ok(())
}
