use std::collections::{HashMap, HashSet};
use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::similarity::{describe, FundSpace};

/// Cosine cohesion of a fund group: statistics over member pairs and over
/// `(member, non-member)` pairs. Standard deviations are population ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cohesion {
    pub mean_within: f64,
    pub std_within: f64,
    pub mean_outside: f64,
    pub std_outside: f64,
    pub within_pairs: usize,
    pub outside_pairs: usize,
}

pub fn benchmark_cohesion<S: FundSpace>(space: &S, members: &[String]) -> Result<Cohesion> {
    let mut idx: Vec<usize> = members
        .iter()
        .map(|m| space.fund_index(m).ok_or_else(|| Error::UnknownNode(m.clone())))
        .collect::<Result<_>>()?;
    idx.sort_unstable();
    idx.dedup();
    if idx.len() < 2 {
        return Err(Error::param("a benchmark needs at least two member funds"));
    }
    let member: HashSet<usize> = idx.iter().copied().collect();
    let n = space.funds().len();
    let mut within = Vec::new();
    let mut outside = Vec::new();
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            within.push(space.cosine_at(i, j)?);
        }
        for j in (0..n).filter(|j| !member.contains(j)) {
            outside.push(space.cosine_at(i, j)?);
        }
    }
    let (mean_within, std_within) = mean_std(&within);
    let (mean_outside, std_outside) = mean_std(&outside);
    Ok(Cohesion {
        mean_within,
        std_within,
        mean_outside,
        std_outside,
        within_pairs: within.len(),
        outside_pairs: outside.len(),
    })
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let d = describe(0, v);
    (d.mean, d.std)
}

/// Groups `(group, fund)` rows, keeping first-seen group order.
pub fn group_members(rows: &[(String, String)]) -> Vec<(String, Vec<String>)> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<String>> = HashMap::new();
    for (g, f) in rows {
        if !groups.contains_key(g) {
            order.push(g.clone());
        }
        groups.entry(g.clone()).or_default().push(f.clone());
    }
    order
        .into_iter()
        .map(|g| {
            let members = groups.remove(&g).unwrap_or_default();
            (g, members)
        })
        .collect()
}

/// One benchmark measured in both representations.
#[derive(Debug, Clone, PartialEq)]
pub struct CohesionRow {
    pub benchmark: String,
    pub funds: usize,
    pub embedded: Cohesion,
    pub original: Cohesion,
}

pub fn write_cohesion_csv<W: Write>(rows: &[CohesionRow], mut sink: W) -> io::Result<()> {
    writeln!(
        sink,
        "benchmark,funds,embedded_within_mean,embedded_within_std,embedded_outside_mean,embedded_outside_std,\
         original_within_mean,original_within_std,original_outside_mean,original_outside_std"
    )?;
    for r in rows {
        let (e, o) = (&r.embedded, &r.original);
        writeln!(
            sink,
            "{},{},{},{},{},{},{},{},{},{}",
            r.benchmark,
            r.funds,
            e.mean_within,
            e.std_within,
            e.mean_outside,
            e.std_outside,
            o.mean_within,
            o.std_within,
            o.mean_outside,
            o.std_outside
        )?;
    }
    Ok(())
}

/// Reads `benchmark_name,fund_id` rows. A header row is recognised by its
/// first field and skipped.
pub fn read_benchmarks<R: io::Read>(source: R) -> Result<Vec<(String, Vec<String>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source);
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if record.len() == 0 || (record.len() == 1 && record[0].is_empty()) {
            continue;
        }
        if record.len() != 2 || record[0].is_empty() || record[1].is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                reason: "expected benchmark_name,fund_id".into(),
            });
        }
        if i == 0 && record[0].eq_ignore_ascii_case("benchmark_name") {
            continue;
        }
        rows.push((record[0].to_string(), record[1].to_string()));
    }
    Ok(group_members(&rows))
}
