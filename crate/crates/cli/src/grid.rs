//! Grid search with per-row checkpoints.
//!
//! Every grid point is stored under `grid/rows/<key>/`, where the key
//! hashes the point, the graph fingerprint and the evaluation settings.
//! `row.json` is written last, so a row directory without it is treated as
//! unfinished and recomputed. A rerun after an interruption reuses every
//! finished row.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use holdgraph::evaluate::{
    best_row, cartesian_grid, run_grid_point, write_grid_csv, GridOptions, GridPoint, GridRow, RowOutcome,
};
use holdgraph::BipartiteGraph;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::stages::{load_graph, CORPUS, EMBEDDING, SWEEP};
use crate::workspace::{sha256_hex, Stage, StageIo, Status, Workspace};
use crate::Ctx;

pub const GRID_CSV: &str = "grid.csv";
pub const GRID_BEST: &str = "grid_best.json";
const ROW_RECORD: &str = "row.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RowRecord {
    d: usize,
    l: usize,
    r: usize,
    p: f64,
    q: f64,
    optimal_k: Option<usize>,
    v_measure: Option<f64>,
    error: Option<String>,
}

impl RowRecord {
    fn new(point: &GridPoint, outcome: &Result<RowOutcome, String>) -> Self {
        let (w, t) = (&point.walk, &point.train);
        RowRecord {
            d: t.dim,
            l: w.walk_length,
            r: w.walks_per_node,
            p: w.p,
            q: w.q,
            optimal_k: outcome.as_ref().ok().map(|o| o.optimal_k),
            v_measure: outcome.as_ref().ok().map(|o| o.v_measure),
            error: outcome.as_ref().err().cloned(),
        }
    }

    fn outcome(&self) -> Result<RowOutcome, String> {
        match (self.optimal_k, self.v_measure) {
            (Some(optimal_k), Some(v_measure)) => Ok(RowOutcome { optimal_k, v_measure }),
            _ => Err(self.error.clone().unwrap_or_else(|| "unknown failure".into())),
        }
    }
}

fn row_dir(ctx: &Ctx, g: &BipartiteGraph, point: &GridPoint) -> String {
    let (w, t) = (&point.walk, &point.train);
    let key = json!({
        "graph": g.fingerprint(),
        "walk": [w.walks_per_node, w.walk_length, w.p, w.q, w.seed],
        "train": [t.dim, t.window, t.negatives, t.epochs, t.lr_initial, t.lr_final, t.seed],
        "workers": ctx.cfg.train_workers(),
        "eval": ctx.cfg.eval,
    });
    format!("grid/rows/{}", &sha256_hex(key.to_string().as_bytes())[..16])
}

fn load_row(ws: &Workspace, dir: &str) -> Option<RowRecord> {
    let bytes = std::fs::read(ws.path(&format!("{dir}/{ROW_RECORD}"))).ok()?;
    serde_json::from_slice(&bytes).ok()
}

fn compute_row(ctx: &Ctx, g: &BipartiteGraph, point: &GridPoint, dir: &str) -> CliResult<RowRecord> {
    let ws = &ctx.ws;
    let opts = GridOptions {
        walk: ctx.cfg.walk_options(),
        train: ctx.cfg.train_options(),
        parallel_rows: false,
    };
    let outcome = match run_grid_point(g, point, &ctx.cfg.sweep_options(), &opts) {
        Ok(a) => {
            let render = |f: &dyn Fn(&mut Vec<u8>) -> std::io::Result<()>| {
                let mut buf = Vec::new();
                f(&mut buf).map(|_| buf).map_err(|e| CliError::internal("grid row", e))
            };
            ws.write(&format!("{dir}/{CORPUS}"), &render(&|w| a.corpus.save(w))?)?;
            ws.write(&format!("{dir}/{EMBEDDING}"), &render(&|w| a.embedding.save(w))?)?;
            ws.write(&format!("{dir}/{SWEEP}"), &render(&|w| a.sweep.write_csv(w))?)?;
            Ok(a.outcome())
        }
        Err(e) => {
            log::warn!("grid point failed: {e}");
            Err(e.to_string())
        }
    };
    let record = RowRecord::new(point, &outcome);
    ws.write(
        &format!("{dir}/{ROW_RECORD}"),
        &serde_json::to_vec_pretty(&record).expect("row serializes"),
    )?;
    Ok(record)
}

/// Runs or resumes the grid. With `stop_after`, returns once that many new
/// rows have been computed, leaving the rest for a later run.
pub(crate) fn run(ctx: &Ctx, stop_after: Option<usize>) -> CliResult<()> {
    if !ctx.force && ctx.status(Stage::Grid)? == Status::Fresh {
        println!("grid\tskipped (fresh)");
        return Ok(());
    }
    ctx.ws.remove_manifest(Stage::Grid)?;
    let mut io = StageIo::new(&ctx.ws);
    let g = load_graph(&mut io)?;
    let cfg = &ctx.cfg;
    let points = cartesian_grid(
        &cfg.grid.dims,
        &cfg.grid.lengths,
        &cfg.grid.pq,
        cfg.walk_params(),
        cfg.train_params(),
    );
    for p in &points {
        p.walk.validate()?;
        p.train.validate()?;
    }
    let dirs: Vec<String> = points.iter().map(|p| row_dir(ctx, &g, p)).collect();
    let cached: Vec<Option<RowRecord>> = dirs.iter().map(|d| load_row(&ctx.ws, d)).collect();
    let reused = cached.iter().filter(|c| c.is_some()).count();
    if reused > 0 {
        log::info!("resuming grid: {reused} of {} rows already complete", points.len());
    }
    eprintln!("grid: {reused} of {} rows reused", points.len());

    let computed = AtomicUsize::new(0);
    let work = |i: usize| -> CliResult<Option<RowRecord>> {
        if let Some(r) = &cached[i] {
            return Ok(Some(r.clone()));
        }
        if stop_after.is_some_and(|n| computed.load(Ordering::SeqCst) >= n) {
            return Ok(None);
        }
        let r = compute_row(ctx, &g, &points[i], &dirs[i])?;
        computed.fetch_add(1, Ordering::SeqCst);
        log::info!("grid row {} of {} done", i + 1, points.len());
        Ok(Some(r))
    };
    let records: Vec<Option<RowRecord>> = if cfg.grid.parallel_rows && stop_after.is_none() {
        (0..points.len()).into_par_iter().map(work).collect::<CliResult<_>>()?
    } else {
        (0..points.len()).map(work).collect::<CliResult<_>>()?
    };
    let done = records.iter().filter(|r| r.is_some()).count();
    if done < points.len() {
        println!(
            "grid\tstopped after {} new rows ({done} of {} complete); rerun to resume",
            computed.load(Ordering::SeqCst),
            points.len()
        );
        return Ok(());
    }

    let rows: Vec<GridRow> = points
        .iter()
        .zip(&records)
        .map(|(point, r)| GridRow {
            point: *point,
            outcome: r.as_ref().expect("all rows complete").outcome(),
        })
        .collect();
    let best = best_row(&rows);
    io.write_with(GRID_CSV, |w| write_grid_csv(&rows, w))?;
    let best_json = match best {
        Some(b) => {
            for name in [CORPUS, EMBEDDING, SWEEP] {
                let bytes = ctx.ws.read(&format!("{}/{name}", dirs[b]))?;
                io.write(&format!("grid/best/{name}"), &bytes)?;
            }
            json!({"row": b + 1, "point": records[b]})
        }
        None => json!({"row": null, "point": null}),
    };
    io.write(GRID_BEST, &serde_json::to_vec_pretty(&best_json).expect("json serializes"))?;
    io.finish(Stage::Grid, &ctx.command, ctx.config_hash(Stage::Grid))?;

    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "   d\t   l\t   r\t    p\t    q\tk\tv_measure");
    for (i, row) in rows.iter().enumerate() {
        let (w, t) = (&row.point.walk, &row.point.train);
        let result = match &row.outcome {
            Ok(o) => format!("{}\t{:.4}", o.optimal_k, o.v_measure),
            Err(e) => format!("-\tfailed: {e}"),
        };
        let mark = if Some(i) == best { " *" } else { "" };
        let _ = writeln!(
            out,
            "{:>4}\t{:>4}\t{:>4}\t{:>5}\t{:>5}\t{result}{mark}",
            t.dim, w.walk_length, w.walks_per_node, w.p, w.q
        );
    }
    let _ = writeln!(out, "grid\tran ({} rows, {} new)", rows.len(), computed.load(Ordering::SeqCst));
    Ok(())
}
