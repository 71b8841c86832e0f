use std::collections::HashSet;
use std::io::Write;

use holdgraph::evaluate::{
    benchmark_cohesion, bipartiteness_sweep, cluster_composition, group_members, kinds_of, read_benchmarks,
    write_cohesion_csv, CohesionRow,
};
use holdgraph::ingest::{
    clean, generate_synthetic, isin_checksum_ok, isin_is_well_formed, parse_holdings, HoldingsFormat,
};
use holdgraph::projection::pca_2d;
use holdgraph::similarity::{
    cross_representation_scatter, jaccard, overlap_distribution, top_m, write_ranking_csv, DenseFunds, FundSpace,
};
use holdgraph::trainer::train;
use holdgraph::walker::generate_walks;
use holdgraph::{BipartiteGraph, EmbeddingMatrix, OriginalRepresentation, WalkCorpus};

use crate::error::{CliError, CliResult};
use crate::workspace::{StageIo, Stage, Status, Workspace};
use crate::{Ctx, Representation, SimilarArgs};

pub const CLEAN_EDGES: &str = "clean_edges.csv";
pub const DIAGNOSTICS: &str = "diagnostics.tsv";
pub const COMMUNITIES: &str = "communities.csv";
pub const GRAPH_EDGES: &str = "graph_edges.csv";
pub const GRAPH_NODES: &str = "graph_nodes.csv";
pub const GRAPH_STATS: &str = "graph_stats.csv";
pub const CORPUS: &str = "corpus.txt";
pub const EMBEDDING: &str = "embedding.txt";
pub const EMBEDDING_CONTEXT: &str = "embedding_context.txt";
pub const TRAIN_LOSS: &str = "train_loss.csv";
pub const SWEEP: &str = "sweep.csv";
pub const COMPOSITION: &str = "composition.csv";
pub const MISCLASSIFIED: &str = "misclassified.csv";
pub const OVERLAP_STATS: &str = "overlap_stats.csv";
pub const OVERLAP_PER_FUND: &str = "overlap_per_fund.csv";
pub const SCATTER: &str = "scatter.csv";
pub const SIMILARITY_SUMMARY: &str = "similarity_summary.csv";
pub const COHESION: &str = "cohesion.csv";
pub const PROJECTION: &str = "projection.csv";

/// Runs `stage` unless it is fresh, then records its manifest. The old
/// manifest is removed first so a failure leaves the stage stale while
/// keeping earlier artifacts on disk.
pub(crate) fn run(ctx: &Ctx, stage: Stage) -> CliResult<()> {
    if !ctx.force && ctx.status(stage)? == Status::Fresh {
        println!("{stage}\tskipped (fresh)");
        return Ok(());
    }
    if stage == Stage::Cohesion && cohesion_source(ctx)?.is_none() {
        println!("{stage}\tskipped (no benchmarks or planted communities)");
        return Ok(());
    }
    for &up in stage.upstream() {
        if let Status::Stale(why) = ctx.status(up)? {
            log::warn!("{stage} reads from {up}, which is stale: {why}");
        }
    }
    ctx.ws.remove_manifest(stage)?;
    let mut io = StageIo::new(&ctx.ws);
    let started = std::time::Instant::now();
    match stage {
        Stage::Edges if ctx.cfg.paths.input.is_some() => ingest(ctx, &mut io)?,
        Stage::Edges => synth(ctx, &mut io)?,
        Stage::Graph => graph(&mut io)?,
        Stage::Walks => walks(ctx, &mut io)?,
        Stage::Train => train_stage(ctx, &mut io)?,
        Stage::Eval => eval(ctx, &mut io)?,
        Stage::Compare => compare(ctx, &mut io)?,
        Stage::Cohesion => cohesion(ctx, &mut io)?,
        Stage::Project => project(&mut io)?,
        Stage::Grid => unreachable!("the grid has its own runner"),
    }
    io.finish(stage, &ctx.command, ctx.config_hash(stage))?;
    println!("{stage}\tran ({:.1}s)", started.elapsed().as_secs_f64());
    Ok(())
}

fn ingest(ctx: &Ctx, io: &mut StageIo) -> CliResult<()> {
    let path = ctx.cfg.paths.input.as_ref().expect("checked by caller");
    let bytes = io.read_external(path)?;
    let parsed = parse_holdings(&bytes[..], ctx.cfg.paths.format.into())
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let opts = ctx.cfg.clean_options();
    let (edges, summary) = clean(&parsed.holdings, opts)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;

    let mut diag = Vec::new();
    for d in &parsed.diagnostics {
        writeln!(diag, "{d}").expect("write to memory");
    }
    for h in &parsed.holdings {
        let raw = format!("{},{},{}", h.fund_id, h.asset_isin, h.weight_pct);
        let isin_ok = if opts.validate_checksum {
            isin_checksum_ok(&h.asset_isin)
        } else {
            isin_is_well_formed(&h.asset_isin)
        };
        if !(h.weight_pct > 0.0) {
            writeln!(diag, "-\tnon-positive weight\t{raw}").expect("write to memory");
        } else if !isin_ok {
            writeln!(diag, "-\tinvalid ISIN\t{raw}").expect("write to memory");
        }
    }
    for f in &summary.dropped_funds {
        writeln!(diag, "-\tcoverage below {}%\t{f}", opts.coverage_threshold).expect("write to memory");
    }
    let diag_lines = diag.iter().filter(|&&b| b == b'\n').count();
    io.write_with(CLEAN_EDGES, |w| edges.write_csv(w))?;
    io.write(DIAGNOSTICS, &diag)?;
    println!(
        "ingest: {} records, {} funds, {} assets, {} edges, {} duplicates merged, {} diagnostics",
        parsed.holdings.len() + parsed.diagnostics.len(),
        edges.fund_count,
        edges.asset_count,
        edges.edges.len(),
        summary.merged_duplicates,
        diag_lines
    );
    Ok(())
}

fn synth(ctx: &Ctx, io: &mut StageIo) -> CliResult<()> {
    let s = &ctx.cfg.synth;
    let data = generate_synthetic(s.funds, s.assets, s.communities, s.overlap, ctx.cfg.run.seed)?;
    io.write_with(CLEAN_EDGES, |w| data.edges.write_csv(w))?;
    io.write(DIAGNOSTICS, b"")?;
    io.write_with(COMMUNITIES, |w| {
        writeln!(w, "fund_id,community")?;
        for (fund, c) in &data.fund_community {
            writeln!(w, "{fund},community_{}", c + 1)?;
        }
        Ok(())
    })?;
    println!(
        "synth: {} funds, {} assets, {} edges",
        data.edges.fund_count,
        data.edges.asset_count,
        data.edges.edges.len()
    );
    Ok(())
}

fn graph(io: &mut StageIo) -> CliResult<()> {
    let bytes = io.read(CLEAN_EDGES)?;
    let parsed = parse_holdings(&bytes[..], HoldingsFormat::EdgeCsv)?;
    if !parsed.diagnostics.is_empty() {
        return Err(CliError::Input(format!("{CLEAN_EDGES} has malformed rows: {}", parsed.diagnostics[0])));
    }
    let full = BipartiteGraph::from_edges(
        parsed
            .holdings
            .iter()
            .map(|h| (h.fund_id.as_str(), h.asset_isin.as_str(), h.weight_pct)),
    )?;
    let g = full.giant_component();
    io.write_with(GRAPH_EDGES, |w| g.write_edges_csv(w))?;
    io.write_with(GRAPH_NODES, |w| g.write_nodes_csv(w))?;
    let stats = g.stats();
    io.write_with(GRAPH_STATS, |w| stats.write_csv(w))?;
    println!(
        "graph: {} funds, {} assets, {} edges in the giant component ({} nodes outside it)",
        stats.fund_count,
        stats.asset_count,
        stats.edge_count,
        full.node_count() - g.node_count()
    );
    Ok(())
}

pub(crate) fn load_graph(io: &mut StageIo) -> CliResult<BipartiteGraph> {
    let edges = io.read(GRAPH_EDGES)?;
    let nodes = io.read(GRAPH_NODES)?;
    Ok(BipartiteGraph::read(&edges[..], &nodes[..])?)
}

fn load_embedding(io: &mut StageIo) -> CliResult<EmbeddingMatrix> {
    let bytes = io.read(EMBEDDING)?;
    Ok(EmbeddingMatrix::load(&bytes[..])?)
}

fn walks(ctx: &Ctx, io: &mut StageIo) -> CliResult<()> {
    let g = load_graph(io)?;
    let corpus = generate_walks(&g, &ctx.cfg.walk_params(), &ctx.cfg.walk_options())?;
    io.write_with(CORPUS, |w| corpus.save(w))?;
    println!("walks: {} walks, {} tokens", corpus.len(), corpus.token_count());
    Ok(())
}

fn train_stage(ctx: &Ctx, io: &mut StageIo) -> CliResult<()> {
    let bytes = io.read(CORPUS)?;
    let corpus = WalkCorpus::load(&bytes[..], None)?;
    let (e, report) = train(&corpus, &ctx.cfg.train_params(), &ctx.cfg.train_options())?;
    io.write_with(EMBEDDING, |w| e.save(w))?;
    io.write_with(EMBEDDING_CONTEXT, |w| e.save_output(w))?;
    io.write_with(TRAIN_LOSS, |w| {
        writeln!(w, "epoch,mean_loss,pairs")?;
        for (i, l) in report.epoch_losses.iter().enumerate() {
            writeln!(w, "{},{},{}", i + 1, l, report.pairs_per_epoch)?;
        }
        Ok(())
    })?;
    println!(
        "train: {} vectors of dimension {}, final epoch loss {:.4}",
        e.len(),
        e.dim(),
        report.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn eval(ctx: &Ctx, io: &mut StageIo) -> CliResult<()> {
    let g = load_graph(io)?;
    let e = load_embedding(io)?;
    let truth = kinds_of(&e, &g)?;
    let sweep = bipartiteness_sweep(&e, &truth, &ctx.cfg.sweep_options())?;
    let comp = cluster_composition(e.labels(), &truth, &sweep.best_assignment)?;
    io.write_with(SWEEP, |w| sweep.write_csv(w))?;
    io.write_with(COMPOSITION, |w| comp.write_csv(w))?;
    io.write_with(MISCLASSIFIED, |w| comp.write_misclassified_csv(w))?;
    let best = sweep.best_score();
    println!(
        "eval: optimal k {}, v-measure {:.4} (homogeneity {:.4}, completeness {:.4}); misclassified {} funds, {} assets",
        best.k,
        best.v_measure,
        best.homogeneity,
        best.completeness,
        comp.misclassified_funds.len(),
        comp.misclassified_assets.len()
    );
    Ok(())
}

fn representations(io: &mut StageIo) -> CliResult<(OriginalRepresentation, DenseFunds)> {
    let g = load_graph(io)?;
    let e = load_embedding(io)?;
    let emb = DenseFunds::embedded_funds(&e, &g)?;
    Ok((OriginalRepresentation::from_graph(&g), emb))
}

fn compare(ctx: &Ctx, io: &mut StageIo) -> CliResult<()> {
    let (orig, emb) = representations(io)?;
    let overlap = overlap_distribution(&orig, &emb, &ctx.cfg.similarity.m_values)?;
    let scatter = cross_representation_scatter(&orig, &emb)?;
    io.write_with(OVERLAP_STATS, |w| overlap.write_stats_csv(w))?;
    io.write_with(OVERLAP_PER_FUND, |w| overlap.write_per_fund_csv(w))?;
    io.write_with(SCATTER, |w| scatter.write_csv(w))?;
    io.write_with(SIMILARITY_SUMMARY, |w| {
        writeln!(w, "metric,value")?;
        writeln!(w, "funds,{}", orig.funds().len())?;
        writeln!(w, "pairs,{}", scatter.points.len())?;
        writeln!(w, "pearson_r,{}", scatter.pearson_r)
    })?;
    println!("compare: pearson r {:.4} over {} fund pairs", scatter.pearson_r, scatter.points.len());
    println!("  m\tmean\tmedian\tstd");
    for s in &overlap.stats {
        println!("  {}\t{:.4}\t{:.4}\t{:.4}", s.m, s.mean, s.median, s.std);
    }
    Ok(())
}

enum CohesionSource {
    File(std::path::PathBuf),
    Communities,
}

fn cohesion_source(ctx: &Ctx) -> CliResult<Option<CohesionSource>> {
    if let Some(p) = &ctx.cfg.paths.benchmarks {
        return Ok(Some(CohesionSource::File(p.clone())));
    }
    let planted = ctx
        .ws
        .manifest(Stage::Edges)?
        .is_some_and(|m| m.outputs.contains_key(COMMUNITIES));
    Ok(planted.then_some(CohesionSource::Communities))
}

fn cohesion(ctx: &Ctx, io: &mut StageIo) -> CliResult<()> {
    let groups = match cohesion_source(ctx)?.expect("checked by caller") {
        CohesionSource::File(path) => {
            let bytes = io.read_external(&path)?;
            read_benchmarks(&bytes[..]).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        }
        CohesionSource::Communities => {
            let bytes = io.read(COMMUNITIES)?;
            let text = String::from_utf8_lossy(&bytes);
            let rows: Vec<(String, String)> = text
                .lines()
                .skip(1)
                .filter_map(|l| l.split_once(','))
                .map(|(f, c)| (c.to_string(), f.to_string()))
                .collect();
            group_members(&rows)
        }
    };
    let (orig, emb) = representations(io)?;
    let mut rows = Vec::new();
    for (name, members) in groups {
        let (known, unknown): (Vec<String>, Vec<String>) =
            members.into_iter().partition(|f| orig.fund_index(f).is_some());
        if !unknown.is_empty() {
            log::warn!("{name}: {} funds are not in the graph and are ignored", unknown.len());
        }
        if known.len() < 2 {
            log::warn!("{name}: fewer than two funds in the graph, skipped");
            continue;
        }
        rows.push(CohesionRow {
            benchmark: name,
            funds: known.len(),
            embedded: benchmark_cohesion(&emb, &known)?,
            original: benchmark_cohesion(&orig, &known)?,
        });
    }
    io.write_with(COHESION, |w| write_cohesion_csv(&rows, w))?;
    println!("cohesion: benchmark\tfunds\tembedded within/outside\toriginal within/outside");
    for r in &rows {
        println!(
            "  {}\t{}\t{:.4}/{:.4}\t{:.4}/{:.4}",
            r.benchmark,
            r.funds,
            r.embedded.mean_within,
            r.embedded.mean_outside,
            r.original.mean_within,
            r.original.mean_outside
        );
    }
    Ok(())
}

fn project(io: &mut StageIo) -> CliResult<()> {
    let g = load_graph(io)?;
    let e = load_embedding(io)?;
    let proj = pca_2d(&e)?;
    let kinds = e
        .labels()
        .iter()
        .map(|l| {
            g.id_of(l)
                .map(|v| g.kind(v).to_string())
                .ok_or_else(|| CliError::Input(format!("embedding label {l} is not in the graph")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    io.write_with(PROJECTION, |w| proj.write_csv(Some(&kinds), w))?;
    println!(
        "project: {} points, explained variance {:.4} and {:.4}",
        proj.labels.len(),
        proj.explained_variance[0],
        proj.explained_variance[1]
    );
    Ok(())
}

/// The three labels closest to `query` by edit distance.
fn suggestions(funds: &[String], query: &str) -> Vec<String> {
    let q = query.to_lowercase();
    let mut scored: Vec<(f64, f64, &String)> = funds
        .iter()
        .map(|f| {
            let l = f.to_lowercase();
            (strsim::normalized_damerau_levenshtein(&q, &l), strsim::jaro_winkler(&q, &l), f)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(b.2)));
    scored.into_iter().take(3).map(|(_, _, f)| f.clone()).collect()
}

fn ranking<S: FundSpace>(space: &S, fund: &str, m: usize) -> CliResult<Vec<(String, f64)>> {
    if space.fund_index(fund).is_none() {
        return Err(CliError::Query(format!(
            "unknown fund `{fund}`; did you mean: {}",
            suggestions(space.funds(), fund).join(", ")
        )));
    }
    Ok(top_m(space, fund, m)?)
}

/// Prints the ranking CSV; with both representations, each list under a
/// `# <name>` line followed by their Jaccard index.
pub(crate) fn similar(ws: &Workspace, args: &SimilarArgs) -> CliResult<()> {
    if args.m == 0 {
        return Err(CliError::Input("m must be at least 1".into()));
    }
    let mut io = StageIo::new(ws);
    let (orig, emb) = representations(&mut io)?;
    let mut out = Vec::new();
    let emit = |out: &mut Vec<u8>, list: &[(String, f64)]| write_ranking_csv(list, out).expect("write to memory");
    match args.rep {
        Representation::Embedded => emit(&mut out, &ranking(&emb, &args.fund, args.m)?),
        Representation::Original => emit(&mut out, &ranking(&orig, &args.fund, args.m)?),
        Representation::Both => {
            let a = ranking(&orig, &args.fund, args.m)?;
            let b = ranking(&emb, &args.fund, args.m)?;
            let set = |l: &[(String, f64)]| l.iter().map(|x| x.0.clone()).collect::<HashSet<_>>();
            let j = jaccard(&set(&a), &set(&b))?;
            writeln!(out, "# original").expect("write to memory");
            emit(&mut out, &a);
            writeln!(out, "# embedded").expect("write to memory");
            emit(&mut out, &b);
            writeln!(out, "# jaccard\n{j}").expect("write to memory");
        }
    }
    std::io::stdout()
        .write_all(&out)
        .map_err(|e| CliError::internal("cannot write to standard output", e))
}
