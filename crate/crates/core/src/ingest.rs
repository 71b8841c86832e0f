//! Holdings ingestion: parsing raw filings or edge lists, applying the
//! cleaning filters, and generating synthetic datasets with planted fund
//! communities.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, Read, Write};

use quick_xml::events::Event;
use quick_xml::Reader;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const EDGE_CSV_HEADER: &str = "fund_id,asset_isin,weight_pct";
pub const DEFAULT_COVERAGE_THRESHOLD: f64 = 95.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RawHolding {
    pub fund_id: String,
    pub asset_isin: String,
    /// Percent of fund net assets.
    pub weight_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HoldingsFormat {
    /// `fund_id,asset_isin,weight_pct` rows.
    EdgeCsv,
    /// The holdings subset of an N-PORT XML filing: `seriesId`, and for
    /// every `invstOrSec` its `isin` identifier and `pctVal`.
    NportXml,
}

/// A record that could not be turned into a [`RawHolding`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub reason: String,
    pub raw: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}", self.line, self.reason, self.raw)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParsedHoldings {
    pub holdings: Vec<RawHolding>,
    pub diagnostics: Vec<Diagnostic>,
}

pub fn write_diagnostics<W: Write>(diagnostics: &[Diagnostic], mut sink: W) -> io::Result<()> {
    for d in diagnostics {
        writeln!(sink, "{d}")?;
    }
    Ok(())
}

/// Parses holdings records from `source`.
///
/// Malformed records end up in [`ParsedHoldings::diagnostics`]; an input with
/// no parsable record at all is an [`Error::EmptyInput`].
pub fn parse_holdings<R: Read>(mut source: R, format: HoldingsFormat) -> Result<ParsedHoldings> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let parsed = match format {
        HoldingsFormat::EdgeCsv => parse_edge_csv(&bytes)?,
        HoldingsFormat::NportXml => parse_nport(&bytes)?,
    };
    if parsed.holdings.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(parsed)
}

fn parse_edge_csv(bytes: &[u8]) -> Result<ParsedHoldings> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut out = ParsedHoldings::default();
    let mut record = csv::StringRecord::new();
    let mut first = true;
    loop {
        let more = reader.read_record(&mut record).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(e) => Error::Io(e),
            other => Error::Io(io::Error::new(io::ErrorKind::InvalidData, format!("{other:?}"))),
        })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line() as usize);
        let raw = record.iter().collect::<Vec<_>>().join(",");
        if std::mem::take(&mut first) && raw == EDGE_CSV_HEADER {
            continue;
        }
        if raw.is_empty() {
            continue;
        }
        match holding_from_fields(&record) {
            Ok(h) => out.holdings.push(h),
            Err(reason) => out.diagnostics.push(Diagnostic { line, reason, raw }),
        }
    }
    Ok(out)
}

fn holding_from_fields(record: &csv::StringRecord) -> Result<RawHolding, String> {
    if record.len() != 3 {
        return Err(format!("expected 3 fields, found {}", record.len()));
    }
    let fund_id = &record[0];
    let isin = &record[1];
    let weight = &record[2];
    if fund_id.is_empty() {
        return Err("empty fund_id".into());
    }
    if isin.len() != 12 {
        return Err(format!("isin length {} != 12", isin.len()));
    }
    if weight.is_empty() {
        return Err("missing weight".into());
    }
    let weight_pct: f64 = weight.parse().map_err(|_| format!("unparsable weight `{weight}`"))?;
    if !weight_pct.is_finite() {
        return Err("non-finite weight".into());
    }
    Ok(RawHolding {
        fund_id: fund_id.to_string(),
        asset_isin: isin.to_string(),
        weight_pct,
    })
}

#[derive(Default)]
struct PendingSecurity {
    line: usize,
    isin: Option<String>,
    pct: Option<String>,
}

fn parse_nport(bytes: &[u8]) -> Result<ParsedHoldings> {
    let line_of = |pos: usize| bytes[..pos.min(bytes.len())].iter().filter(|&&b| b == b'\n').count() + 1;
    let xml_err = |pos: usize, e: &dyn fmt::Display| Error::Parse {
        line: line_of(pos),
        reason: e.to_string(),
    };

    let mut reader = Reader::from_reader(bytes);
    reader.config_mut().trim_text(true);
    let mut buf = Vec::new();
    let mut out = ParsedHoldings::default();
    let mut series: Option<String> = None;
    let mut current: Option<PendingSecurity> = None;
    // Name of the element whose text we are collecting.
    let mut capture: Option<&'static str> = None;

    loop {
        let pos = reader.buffer_position() as usize;
        let event = reader
            .read_event_into(&mut buf)
            .map_err(|e| xml_err(pos, &e))?;
        match event {
            Event::Eof => break,
            Event::Start(ref e) | Event::Empty(ref e) => {
                let is_empty = matches!(event, Event::Empty(_));
                match e.local_name().as_ref() {
                    b"seriesId" if !is_empty => capture = Some("seriesId"),
                    b"invstOrSec" => {
                        current = Some(PendingSecurity {
                            line: line_of(reader.buffer_position() as usize),
                            ..Default::default()
                        })
                    }
                    b"pctVal" if !is_empty => capture = Some("pctVal"),
                    b"isin" => {
                        if let Some(sec) = current.as_mut() {
                            let attr = e.try_get_attribute("value").map_err(|err| xml_err(pos, &err))?;
                            if let Some(attr) = attr {
                                let value = attr.unescape_value().map_err(|err| xml_err(pos, &err))?;
                                sec.isin = Some(value.trim().to_string());
                            }
                        }
                    }
                    _ => {}
                }
            }
            Event::Text(t) => {
                if let Some(field) = capture {
                    let text = t.unescape().map_err(|e| xml_err(pos, &e))?.trim().to_string();
                    match field {
                        "seriesId" => series = Some(text),
                        "pctVal" => {
                            if let Some(sec) = current.as_mut() {
                                sec.pct = Some(text);
                            }
                        }
                        _ => {}
                    }
                }
            }
            Event::End(ref e) => {
                capture = None;
                if e.local_name().as_ref() == b"invstOrSec" {
                    if let Some(sec) = current.take() {
                        finish_security(sec, series.as_deref(), &mut out);
                    }
                }
            }
            _ => {}
        }
        buf.clear();
    }
    Ok(out)
}

fn finish_security(sec: PendingSecurity, series: Option<&str>, out: &mut ParsedHoldings) {
    let raw = format!(
        "isin={};pctVal={}",
        sec.isin.as_deref().unwrap_or(""),
        sec.pct.as_deref().unwrap_or("")
    );
    let diag = |reason: String| Diagnostic { line: sec.line, reason, raw: raw.clone() };
    let Some(fund_id) = series.filter(|s| !s.is_empty()) else {
        out.diagnostics.push(diag("holding outside of a series".into()));
        return;
    };
    let Some(isin) = sec.isin.as_deref() else {
        out.diagnostics.push(diag("missing isin".into()));
        return;
    };
    if isin.len() != 12 {
        out.diagnostics.push(diag(format!("isin length {} != 12", isin.len())));
        return;
    }
    let weight = match sec.pct.as_deref().map(str::parse::<f64>) {
        None => {
            out.diagnostics.push(diag("missing weight".into()));
            return;
        }
        Some(Err(_)) => {
            out.diagnostics.push(diag("unparsable weight".into()));
            return;
        }
        Some(Ok(w)) if !w.is_finite() => {
            out.diagnostics.push(diag("non-finite weight".into()));
            return;
        }
        Some(Ok(w)) => w,
    };
    out.holdings.push(RawHolding {
        fund_id: fund_id.to_string(),
        asset_isin: isin.to_string(),
        weight_pct: weight,
    });
}

/// Two letters, nine alphanumerics, one check digit.
pub fn isin_is_well_formed(isin: &str) -> bool {
    let b = isin.as_bytes();
    b.len() == 12
        && b[..2].iter().all(u8::is_ascii_uppercase)
        && b[2..11].iter().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit())
        && b[11].is_ascii_digit()
}

/// ISO 6166 check: letters expand to two digits (A = 10), then the Luhn
/// checksum over the full digit string must vanish.
pub fn isin_checksum_ok(isin: &str) -> bool {
    if !isin_is_well_formed(isin) {
        return false;
    }
    let mut digits = Vec::with_capacity(24);
    for c in isin.bytes() {
        if c.is_ascii_digit() {
            digits.push(c - b'0');
        } else {
            let v = c - b'A' + 10;
            digits.push(v / 10);
            digits.push(v % 10);
        }
    }
    luhn_sum(&digits) % 10 == 0
}

fn luhn_sum(digits: &[u8]) -> u32 {
    digits
        .iter()
        .rev()
        .enumerate()
        .map(|(i, &d)| {
            let d = u32::from(d);
            if i % 2 == 1 {
                let x = d * 2;
                if x > 9 {
                    x - 9
                } else {
                    x
                }
            } else {
                d
            }
        })
        .sum()
}

/// Appends the ISO 6166 check digit to an 11-character prefix.
pub fn isin_with_check_digit(prefix: &str) -> String {
    debug_assert_eq!(prefix.len(), 11);
    for check in 0..10u8 {
        let candidate = format!("{prefix}{check}");
        if isin_checksum_ok(&candidate) {
            return candidate;
        }
    }
    unreachable!("every prefix has exactly one check digit")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub fund: String,
    pub asset: String,
    pub weight_pct: f64,
}

/// Deduplicated, filtered fund-asset edges sorted by `(fund, asset)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CleanEdgeList {
    pub edges: Vec<Edge>,
    pub fund_count: usize,
    pub asset_count: usize,
    /// Sum of retained weights per fund.
    pub coverage: BTreeMap<String, f64>,
}

impl CleanEdgeList {
    /// Builds the list from edges that are already unique and positive.
    fn from_merged(merged: BTreeMap<(String, String), f64>) -> Self {
        let mut coverage: BTreeMap<String, f64> = BTreeMap::new();
        let mut assets = BTreeSet::new();
        let edges: Vec<Edge> = merged
            .into_iter()
            .map(|((fund, asset), weight_pct)| {
                *coverage.entry(fund.clone()).or_default() += weight_pct;
                assets.insert(asset.clone());
                Edge { fund, asset, weight_pct }
            })
            .collect();
        CleanEdgeList {
            fund_count: coverage.len(),
            asset_count: assets.len(),
            edges,
            coverage,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn to_holdings(&self) -> Vec<RawHolding> {
        self.edges
            .iter()
            .map(|e| RawHolding {
                fund_id: e.fund.clone(),
                asset_isin: e.asset.clone(),
                weight_pct: e.weight_pct,
            })
            .collect()
    }

    /// Writes the edge CSV format. Weights use the shortest round-trip
    /// decimal representation.
    pub fn write_csv<W: Write>(&self, mut sink: W) -> io::Result<()> {
        writeln!(sink, "{EDGE_CSV_HEADER}")?;
        for e in &self.edges {
            writeln!(sink, "{},{},{}", e.fund, e.asset, e.weight_pct)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CleanSummary {
    pub dropped_nonpositive: usize,
    pub dropped_bad_isin: usize,
    pub merged_duplicates: usize,
    pub dropped_funds: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CleanOptions {
    pub coverage_threshold: f64,
    pub validate_checksum: bool,
}

impl Default for CleanOptions {
    fn default() -> Self {
        CleanOptions {
            coverage_threshold: DEFAULT_COVERAGE_THRESHOLD,
            validate_checksum: false,
        }
    }
}

/// Applies the cleaning filters in order: non-positive weights, invalid
/// ISINs, duplicate merging, and finally the per-fund coverage threshold.
pub fn clean(holdings: &[RawHolding], opts: CleanOptions) -> Result<(CleanEdgeList, CleanSummary)> {
    if !(0.0..=100.0).contains(&opts.coverage_threshold) {
        return Err(Error::param(format!(
            "coverage threshold {} outside [0, 100]",
            opts.coverage_threshold
        )));
    }
    let mut summary = CleanSummary::default();
    let mut merged: BTreeMap<(String, String), f64> = BTreeMap::new();
    for h in holdings {
        if h.fund_id.is_empty() || !(h.weight_pct > 0.0) || !h.weight_pct.is_finite() {
            summary.dropped_nonpositive += 1;
            continue;
        }
        let valid = if opts.validate_checksum {
            isin_checksum_ok(&h.asset_isin)
        } else {
            isin_is_well_formed(&h.asset_isin)
        };
        if !valid {
            summary.dropped_bad_isin += 1;
            continue;
        }
        let slot = merged.entry((h.fund_id.clone(), h.asset_isin.clone()));
        match slot {
            std::collections::btree_map::Entry::Occupied(mut o) => {
                summary.merged_duplicates += 1;
                *o.get_mut() += h.weight_pct;
            }
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(h.weight_pct);
            }
        }
    }

    let mut coverage: BTreeMap<&str, f64> = BTreeMap::new();
    for ((fund, _), w) in &merged {
        *coverage.entry(fund.as_str()).or_default() += w;
    }
    let dropped: BTreeSet<String> = coverage
        .iter()
        .filter(|(_, &c)| c < opts.coverage_threshold)
        .map(|(f, _)| f.to_string())
        .collect();
    merged.retain(|(fund, _), _| !dropped.contains(fund));
    summary.dropped_funds = dropped.into_iter().collect();

    if merged.is_empty() {
        return Err(Error::EmptyGraph);
    }
    Ok((CleanEdgeList::from_merged(merged), summary))
}

/// A synthetic dataset and the community each fund was planted in.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub edges: CleanEdgeList,
    pub fund_community: BTreeMap<String, usize>,
}

impl SyntheticData {
    pub fn community_members(&self, community: usize) -> Vec<String> {
        self.fund_community
            .iter()
            .filter(|(_, &c)| c == community)
            .map(|(f, _)| f.clone())
            .collect()
    }
}

pub fn synthetic_fund_label(i: usize, n_funds: usize) -> String {
    let width = n_funds.to_string().len();
    format!("F{:0width$}", i + 1)
}

pub fn synthetic_asset_isin(j: usize) -> String {
    isin_with_check_digit(&format!("US{:09}", j + 1))
}

/// Number of assets each synthetic fund holds: a tenth of a community
/// pool, at least two, never more than the smallest pool.
pub fn synthetic_holdings_per_fund(n_assets: usize, n_communities: usize) -> usize {
    let smallest_pool = n_assets / n_communities;
    (n_assets / (10 * n_communities)).max(2).min(smallest_pool)
}

/// Generates funds partitioned into `n_communities` contiguous blocks, each
/// block owning a contiguous pool of assets. Each holding comes from the
/// fund's own pool with probability `1 - overlap` and uniformly from the
/// whole asset universe otherwise. Per-fund weights sum to 100.
pub fn generate_synthetic(
    n_funds: usize,
    n_assets: usize,
    n_communities: usize,
    overlap: f64,
    seed: u64,
) -> Result<SyntheticData> {
    if n_funds == 0 || n_assets == 0 || n_communities == 0 {
        return Err(Error::param("fund, asset and community counts must be positive"));
    }
    if n_communities > n_funds.min(n_assets) {
        return Err(Error::param(format!(
            "{n_communities} communities cannot be planted in {n_funds} funds and {n_assets} assets"
        )));
    }
    if !(0.0..=1.0).contains(&overlap) {
        return Err(Error::param(format!("overlap {overlap} outside [0, 1]")));
    }
    let pool_of = |j: usize| j * n_communities / n_assets;
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); n_communities];
    for j in 0..n_assets {
        pools[pool_of(j)].push(j);
    }
    if pools.iter().any(Vec::is_empty) {
        return Err(Error::param("a community asset pool is empty"));
    }
    let per_fund = synthetic_holdings_per_fund(n_assets, n_communities);
    let isins: Vec<String> = (0..n_assets).map(synthetic_asset_isin).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut merged = BTreeMap::new();
    let mut fund_community = BTreeMap::new();
    for i in 0..n_funds {
        let community = i * n_communities / n_funds;
        let label = synthetic_fund_label(i, n_funds);
        let pool = &pools[community];
        let mut chosen: Vec<usize> = Vec::with_capacity(per_fund);
        while chosen.len() < per_fund {
            let j = if rng.gen::<f64>() < overlap {
                rng.gen_range(0..n_assets)
            } else {
                pool[rng.gen_range(0..pool.len())]
            };
            if !chosen.contains(&j) {
                chosen.push(j);
            }
        }
        let raw: Vec<f64> = chosen.iter().map(|_| -(1.0 - rng.gen::<f64>()).ln() + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        for (&j, w) in chosen.iter().zip(&raw) {
            merged.insert((label.clone(), isins[j].clone()), w * 100.0 / total);
        }
        fund_community.insert(label, community);
    }
    Ok(SyntheticData {
        edges: CleanEdgeList::from_merged(merged),
        fund_community,
    })
}
