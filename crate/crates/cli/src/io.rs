//! CSV formats for grouped counts, classes, covariates, graphs, draws,
//! summaries and simulation truth.
//!
//! Every float is written with 17 significant digits so that values survive
//! a write/read cycle exactly and rewriting a loaded file reproduces it byte
//! for byte.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use incmix_core::gibbs::{grid_for, RhoGrid};
use incmix_core::model::{
    ComponentParams, Covariates, GroupedPanel, IncomeClasses, MixingEffects, ModelConfig, ParamState,
    PosteriorDraws, SpatialGraph, Variant,
};
use incmix_core::predict::{CellTotals, Quantity, Scope, SummaryRow, SummaryTable};
use incmix_core::simgen::{CellTruth, SyntheticTruth};

use crate::error::{CliError, Result};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Parsed CSV with its header and the source line of every record.
struct Table {
    path: PathBuf,
    headers: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    fn read(path: &Path) -> Result<Table> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| csv_error(path, e))?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != headers.len() {
                return Err(CliError::parse(
                    path,
                    line,
                    format!("ragged row: {} fields, header has {}", record.len(), headers.len()),
                ));
            }
            rows.push((line, record.iter().map(str::to_string).collect()));
        }
        Ok(Table {
            path: path.to_path_buf(),
            headers,
            rows,
        })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::format(&self.path, format!("missing column '{name}'")))
    }

    fn err(&self, line: u64, message: impl Into<String>) -> CliError {
        CliError::parse(&self.path, line, message)
    }

    fn parse<T: std::str::FromStr>(&self, line: u64, row: &[String], col: usize) -> Result<T> {
        row[col]
            .parse()
            .map_err(|_| self.err(line, format!("column '{}': cannot parse '{}'", self.headers[col], row[col])))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => CliError::parse(path, line, format!("{other:?}")),
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// One line of a counts file. `total` is the optional declared `N_it`.
#[derive(Debug, Clone, PartialEq)]
pub struct CountRow {
    pub area: u64,
    pub period: usize,
    pub bin: usize,
    pub count: u32,
    pub total: Option<u32>,
}

/// Columns `area_id, period, bin_index, count` and optionally `total`.
pub fn read_counts(path: &Path) -> Result<Vec<CountRow>> {
    let t = Table::read(path)?;
    let (ca, cp, cb, cc) = (t.column("area_id")?, t.column("period")?, t.column("bin_index")?, t.column("count")?);
    let ct = t.headers.iter().position(|h| h == "total");
    let mut rows = Vec::with_capacity(t.rows.len());
    for (line, r) in &t.rows {
        let count: i64 = t.parse(*line, r, cc)?;
        if count < 0 {
            return Err(t.err(*line, "negative count"));
        }
        let count = u32::try_from(count).map_err(|_| t.err(*line, "count too large"))?;
        let total = match ct {
            Some(c) if !r[c].is_empty() => Some(t.parse(*line, r, c)?),
            _ => None,
        };
        rows.push(CountRow {
            area: t.parse(*line, r, ca)?,
            period: t.parse(*line, r, cp)?,
            bin: t.parse(*line, r, cb)?,
            count,
            total,
        });
    }
    if rows.is_empty() {
        return Err(CliError::format(path, "no observations"));
    }
    Ok(rows)
}

pub fn write_counts(path: &Path, rows: &[CountRow]) -> Result<()> {
    let with_total = rows.iter().any(|r| r.total.is_some());
    let mut s = String::from(if with_total {
        "area_id,period,bin_index,count,total\n"
    } else {
        "area_id,period,bin_index,count\n"
    });
    for r in rows {
        let _ = write!(s, "{},{},{},{}", r.area, r.period, r.bin, r.count);
        if with_total {
            let _ = write!(s, ",{}", r.total.map(|v| v.to_string()).unwrap_or_default());
        }
        s.push('\n');
    }
    write_text(path, &s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassRow {
    pub period: usize,
    pub bin: usize,
    pub lower: f64,
    /// Infinite for an open top class, written blank.
    pub upper: f64,
}

/// Columns `period, bin_index, lower, upper`; a blank upper bound is infinite.
pub fn read_classes(path: &Path) -> Result<Vec<ClassRow>> {
    let t = Table::read(path)?;
    let (cp, cb, cl, cu) = (t.column("period")?, t.column("bin_index")?, t.column("lower")?, t.column("upper")?);
    let mut rows = Vec::with_capacity(t.rows.len());
    for (line, r) in &t.rows {
        let upper = if r[cu].is_empty() { f64::INFINITY } else { t.parse(*line, r, cu)? };
        rows.push(ClassRow {
            period: t.parse(*line, r, cp)?,
            bin: t.parse(*line, r, cb)?,
            lower: t.parse(*line, r, cl)?,
            upper,
        });
    }
    if rows.is_empty() {
        return Err(CliError::format(path, "no income classes"));
    }
    Ok(rows)
}

pub fn write_classes(path: &Path, rows: &[ClassRow]) -> Result<()> {
    let mut s = String::from("period,bin_index,lower,upper\n");
    for r in rows {
        let upper = if r.upper.is_infinite() { String::new() } else { fmt_f64(r.upper) };
        let _ = writeln!(s, "{},{},{},{}", r.period, r.bin, fmt_f64(r.lower), upper);
    }
    write_text(path, &s)
}

/// Boundaries per period from class rows, checking that each period lists
/// classes `0..G` whose bounds chain together.
pub fn classes_from_rows(path: &Path, rows: &[ClassRow]) -> Result<IncomeClasses> {
    let mut by_period: BTreeMap<usize, BTreeMap<usize, (f64, f64)>> = BTreeMap::new();
    for r in rows {
        if by_period.entry(r.period).or_default().insert(r.bin, (r.lower, r.upper)).is_some() {
            return Err(CliError::format(path, format!("period {} class {} listed twice", r.period, r.bin)));
        }
    }
    let mut bounds = Vec::new();
    for (expected, (&t, bins)) in by_period.iter().enumerate() {
        if t != expected {
            return Err(CliError::format(path, format!("periods must run 0, 1, ...; period {expected} is missing")));
        }
        let mut b = Vec::with_capacity(bins.len() + 1);
        for (expected_bin, (&g, &(lo, hi))) in bins.iter().enumerate() {
            if g != expected_bin {
                return Err(CliError::format(path, format!("period {t}: class {expected_bin} is missing")));
            }
            match b.last() {
                None => b.push(lo),
                Some(&prev) if prev != lo => {
                    return Err(CliError::format(
                        path,
                        format!("period {t} class {g}: lower bound {lo} does not match previous upper bound {prev}"),
                    ))
                }
                _ => {}
            }
            b.push(hi);
        }
        bounds.push(b);
    }
    Ok(IncomeClasses::new(bounds)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateRow {
    pub area: u64,
    pub period: usize,
    /// Covariates without the intercept.
    pub x: Vec<f64>,
}

/// Columns `area_id, period, x1, …, xp`.
pub fn read_covariates(path: &Path) -> Result<Vec<CovariateRow>> {
    let t = Table::read(path)?;
    let (ca, cp) = (t.column("area_id")?, t.column("period")?);
    let xs: Vec<usize> = (1..)
        .map_while(|j| t.headers.iter().position(|h| *h == format!("x{j}")))
        .collect();
    if xs.len() + 2 != t.headers.len() {
        return Err(CliError::format(path, "expected columns area_id, period, x1, ..., xp"));
    }
    let mut rows = Vec::with_capacity(t.rows.len());
    for (line, r) in &t.rows {
        let x = xs.iter().map(|&c| t.parse(*line, r, c)).collect::<Result<Vec<f64>>>()?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(t.err(*line, "non-finite covariate"));
        }
        rows.push(CovariateRow {
            area: t.parse(*line, r, ca)?,
            period: t.parse(*line, r, cp)?,
            x,
        });
    }
    if rows.is_empty() {
        return Err(CliError::format(path, "no covariate rows"));
    }
    Ok(rows)
}

pub fn write_covariates(path: &Path, rows: &[CovariateRow]) -> Result<()> {
    let p = rows.first().map_or(0, |r| r.x.len());
    let mut s = String::from("area_id,period");
    for j in 1..=p {
        let _ = write!(s, ",x{j}");
    }
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{},{}", r.area, r.period);
        for v in &r.x {
            let _ = write!(s, ",{}", fmt_f64(*v));
        }
        s.push('\n');
    }
    write_text(path, &s)
}

/// Directed edges `from, to`; every edge must also appear reversed.
pub fn read_edges(path: &Path) -> Result<Vec<(u64, u64)>> {
    let t = Table::read(path)?;
    let (cf, ct) = (t.column("from")?, t.column("to")?);
    t.rows
        .iter()
        .map(|(line, r)| {
            let (a, b): (u64, u64) = (t.parse(*line, r, cf)?, t.parse(*line, r, ct)?);
            if a == b {
                return Err(t.err(*line, format!("self-loop at area {a}")));
            }
            Ok((a, b))
        })
        .collect()
}

pub fn write_edges(path: &Path, edges: &[(u64, u64)]) -> Result<()> {
    let mut s = String::from("from,to\n");
    for (a, b) in edges {
        let _ = writeln!(s, "{a},{b}");
    }
    write_text(path, &s)
}

/// Column `area_id` listing the sampled areas.
pub fn read_partition(path: &Path) -> Result<Vec<u64>> {
    let t = Table::read(path)?;
    let c = t.column("area_id")?;
    let ids = t
        .rows
        .iter()
        .map(|(line, r)| t.parse(*line, r, c))
        .collect::<Result<Vec<u64>>>()?;
    if ids.is_empty() {
        return Err(CliError::format(path, "no sampled areas"));
    }
    Ok(ids)
}

pub fn write_partition(path: &Path, ids: &[u64]) -> Result<()> {
    let mut s = String::from("area_id\n");
    for id in ids {
        let _ = writeln!(s, "{id}");
    }
    write_text(path, &s)
}

/// External area ids in model order: sampled areas first, each block ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaIndex {
    ids: Vec<u64>,
    n_sampled: usize,
    lookup: HashMap<u64, usize>,
}

impl AreaIndex {
    pub fn new(sampled: &[u64], all: &BTreeSet<u64>) -> std::result::Result<Self, String> {
        let sampled_set: BTreeSet<u64> = sampled.iter().copied().collect();
        if sampled_set.len() != sampled.len() {
            return Err("sampled area listed twice".into());
        }
        if let Some(id) = sampled_set.iter().find(|id| !all.contains(id)) {
            return Err(format!("unknown area id {id}"));
        }
        let mut ids: Vec<u64> = sampled_set.iter().copied().collect();
        ids.extend(all.iter().filter(|id| !sampled_set.contains(id)));
        let lookup = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        Ok(AreaIndex {
            ids,
            n_sampled: sampled_set.len(),
            lookup,
        })
    }

    /// Ids `0..n` with the first `n_sampled` sampled.
    pub fn sequential(n: usize, n_sampled: usize) -> Self {
        let ids: Vec<u64> = (0..n as u64).collect();
        let lookup = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        AreaIndex { ids, n_sampled, lookup }
    }

    pub fn id(&self, i: usize) -> u64 {
        self.ids[i]
    }

    pub fn index(&self, id: u64) -> Option<usize> {
        self.lookup.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn n_sampled(&self) -> usize {
        self.n_sampled
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataPaths {
    pub counts: PathBuf,
    pub classes: PathBuf,
    pub covariates: PathBuf,
    pub edges: PathBuf,
    pub partition: PathBuf,
}

impl DataPaths {
    pub fn in_dir(dir: &Path) -> Self {
        DataPaths {
            counts: dir.join("counts.csv"),
            classes: dir.join("classes.csv"),
            covariates: dir.join("covariates.csv"),
            edges: dir.join("edges.csv"),
            partition: dir.join("partition.csv"),
        }
    }

    pub fn all(&self) -> [&Path; 5] {
        [&self.counts, &self.classes, &self.covariates, &self.edges, &self.partition]
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub panel: GroupedPanel,
    pub graph: SpatialGraph,
    pub areas: AreaIndex,
}

/// Load and cross-validate the five input files.
pub fn load_dataset(paths: &DataPaths) -> Result<Dataset> {
    let cov_rows = read_covariates(&paths.covariates)?;
    let all_ids: BTreeSet<u64> = cov_rows.iter().map(|r| r.area).collect();
    let sampled = read_partition(&paths.partition)?;
    let areas = AreaIndex::new(&sampled, &all_ids).map_err(|m| CliError::format(&paths.partition, m))?;

    let n_cov_periods = cov_rows.iter().map(|r| r.period).max().unwrap_or(0) + 1;
    let p = cov_rows[0].x.len();
    let mut raw: Vec<Option<Vec<f64>>> = vec![None; areas.len() * n_cov_periods];
    for r in &cov_rows {
        if r.x.len() != p {
            return Err(CliError::format(&paths.covariates, "rows have different numbers of covariates"));
        }
        let i = areas.index(r.area).expect("area ids come from the covariates");
        let slot = &mut raw[i * n_cov_periods + r.period];
        if slot.replace(r.x.clone()).is_some() {
            return Err(CliError::format(
                &paths.covariates,
                format!("area {} period {} listed twice", r.area, r.period),
            ));
        }
    }
    let raw = raw
        .into_iter()
        .enumerate()
        .map(|(idx, x)| {
            x.ok_or_else(|| {
                CliError::format(
                    &paths.covariates,
                    format!(
                        "missing covariates for area {} period {}",
                        areas.id(idx / n_cov_periods),
                        idx % n_cov_periods
                    ),
                )
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let covariates = Covariates::from_raw(areas.len(), n_cov_periods, &raw)?;

    let classes = classes_from_rows(&paths.classes, &read_classes(&paths.classes)?)?;

    let count_rows = read_counts(&paths.counts)?;
    let n_periods = count_rows.iter().map(|r| r.period).max().unwrap_or(0) + 1;
    if n_periods > n_cov_periods {
        return Err(CliError::format(
            &paths.covariates,
            format!("counts reach period {} but covariates stop at {}", n_periods - 1, n_cov_periods - 1),
        ));
    }
    let m = areas.n_sampled();
    let mut cells: Vec<Option<Vec<u32>>> = vec![None; m * n_periods];
    let mut declared: HashMap<(usize, usize), u32> = HashMap::new();
    for r in &count_rows {
        let cell_name = format!("area {} period {}", r.area, r.period);
        let i = areas
            .index(r.area)
            .ok_or_else(|| CliError::format(&paths.counts, format!("unknown area id {}", r.area)))?;
        if i >= m {
            return Err(CliError::format(&paths.counts, format!("{cell_name}: area is not in the sampled partition")));
        }
        let n_bins = classes.n_bins(r.period);
        if r.bin >= n_bins {
            return Err(CliError::format(
                &paths.counts,
                format!("{cell_name}: class {} but only {n_bins} classes", r.bin),
            ));
        }
        let cell = cells[i * n_periods + r.period].get_or_insert_with(|| vec![0; n_bins]);
        if cell[r.bin] != 0 {
            return Err(CliError::format(&paths.counts, format!("{cell_name} class {} listed twice", r.bin)));
        }
        cell[r.bin] = r.count;
        if let Some(total) = r.total {
            if let Some(prev) = declared.insert((i, r.period), total) {
                if prev != total {
                    return Err(CliError::format(&paths.counts, format!("{cell_name}: conflicting totals")));
                }
            }
        }
    }
    for (&(i, t), &total) in &declared {
        let sum: u32 = cells[i * n_periods + t].as_ref().map_or(0, |c| c.iter().sum());
        if sum != total {
            return Err(CliError::format(
                &paths.counts,
                format!("area {} period {t}: class counts sum to {sum}, declared total is {total}", areas.id(i)),
            ));
        }
    }
    let panel = GroupedPanel::new(m, n_periods, classes, covariates, cells)?;

    let edges = read_edges(&paths.edges)?;
    let mut internal = Vec::with_capacity(edges.len());
    let directed: BTreeSet<(u64, u64)> = edges.iter().copied().collect();
    for &(a, b) in &edges {
        let ia = areas
            .index(a)
            .ok_or_else(|| CliError::format(&paths.edges, format!("unknown area id {a}")))?;
        let ib = areas
            .index(b)
            .ok_or_else(|| CliError::format(&paths.edges, format!("unknown area id {b}")))?;
        if !directed.contains(&(b, a)) {
            return Err(CliError::format(&paths.edges, format!("edge ({a}, {b}) has no reverse edge")));
        }
        internal.push((ia, ib));
    }
    let graph = SpatialGraph::from_edges(areas.len(), m, &internal)?;
    Ok(Dataset { panel, graph, areas })
}

/// Household totals from a counts file, keyed by model area index.
pub fn read_totals(path: &Path, areas: &AreaIndex) -> Result<CellTotals> {
    let mut sums: BTreeMap<(usize, usize), u32> = BTreeMap::new();
    for r in read_counts(path)? {
        let i = areas
            .index(r.area)
            .ok_or_else(|| CliError::format(path, format!("unknown area id {}", r.area)))?;
        *sums.entry((i, r.period)).or_default() += r.count;
    }
    let mut totals = CellTotals::new();
    for ((i, t), n) in sums {
        totals.insert(i, t, n);
    }
    Ok(totals)
}

/// Column layout of a draws file for one variant.
#[derive(Debug, Clone, PartialEq)]
struct DrawsLayout {
    variant: Variant,
    k: usize,
    dim: usize,
    sampled: Vec<u64>,
    n_periods: usize,
}

impl DrawsLayout {
    fn headers(&self) -> Vec<String> {
        let mut h = Vec::new();
        if self.variant == Variant::SpatialOnly {
            h.push("period".to_string());
        }
        h.push("sweep".to_string());
        for k in 1..=self.k {
            for j in 0..self.dim {
                h.push(format!("beta[{k}][{j}]"));
            }
        }
        for k in 1..=self.k {
            h.push(format!("sigma2[{k}]"));
        }
        let eff = 2..=self.k;
        for k in eff.clone() {
            for id in &self.sampled {
                h.push(format!("u[{k}][{id}]"));
            }
        }
        let temporal = self.variant != Variant::SpatialOnly;
        if temporal {
            for k in eff.clone() {
                for t in 0..self.n_periods {
                    h.push(format!("eta[{k}][{t}]"));
                }
            }
        }
        for name in ["mu", "tau"] {
            for k in eff.clone() {
                h.push(format!("{name}[{k}]"));
            }
        }
        if temporal {
            for k in eff.clone() {
                h.push(format!("alpha[{k}]"));
            }
        }
        if self.variant != Variant::TwoWay {
            for k in eff.clone() {
                h.push(format!("rho[{k}]"));
            }
        }
        if self.variant == Variant::SarRw {
            for k in eff {
                h.push(format!("eta0[{k}]"));
            }
        }
        h
    }

    fn values(&self, state: &ParamState) -> Vec<f64> {
        let mut v = Vec::new();
        for c in &state.components {
            v.extend_from_slice(&c.beta);
        }
        v.extend(state.components.iter().map(|c| c.sigma2));
        for e in &state.effects {
            v.extend_from_slice(&e.u);
        }
        let temporal = self.variant != Variant::SpatialOnly;
        if temporal {
            for e in &state.effects {
                v.extend_from_slice(&e.eta);
            }
        }
        v.extend(state.effects.iter().map(|e| e.mu));
        v.extend(state.effects.iter().map(|e| e.tau));
        if temporal {
            v.extend(state.effects.iter().map(|e| e.alpha));
        }
        if self.variant != Variant::TwoWay {
            v.extend(state.effects.iter().map(|e| e.rho));
        }
        if self.variant == Variant::SarRw {
            v.extend(state.effects.iter().map(|e| e.eta0));
        }
        v
    }

    /// Rebuild a state; omitted parameters take the values the sampler holds fixed.
    fn state(&self, v: &[f64], grid: &RhoGrid, alpha_fixed: f64) -> ParamState {
        let mut it = v.iter().copied();
        let mut next = || it.next().expect("row length checked against header");
        let mut components: Vec<ComponentParams> = (0..self.k)
            .map(|_| ComponentParams {
                beta: (0..self.dim).map(|_| next()).collect(),
                sigma2: 0.0,
            })
            .collect();
        for c in &mut components {
            c.sigma2 = next();
        }
        let m = self.sampled.len();
        let n_eff = self.k - 1;
        let temporal = self.variant != Variant::SpatialOnly;
        let mut effects: Vec<MixingEffects> = (0..n_eff)
            .map(|_| MixingEffects {
                u: (0..m).map(|_| next()).collect(),
                ..MixingEffects::zeros(0, 0)
            })
            .collect();
        for e in &mut effects {
            e.eta = if temporal { (0..self.n_periods).map(|_| next()).collect() } else { vec![0.0] };
        }
        for e in &mut effects {
            e.mu = next();
        }
        for e in &mut effects {
            e.tau = next();
        }
        for e in &mut effects {
            e.alpha = if temporal { next() } else { alpha_fixed };
        }
        for e in &mut effects {
            if self.variant == Variant::TwoWay {
                e.rho = 0.0;
                e.rho_index = 0;
            } else {
                e.rho = next();
                e.rho_index = grid.nearest_index(e.rho);
            }
        }
        for e in &mut effects {
            e.eta0 = if self.variant == Variant::SarRw { next() } else { 0.0 };
        }
        ParamState { components, effects }
    }
}

fn layout_for(draws: &[PosteriorDraws], areas: &AreaIndex) -> Result<DrawsLayout> {
    let first = draws
        .iter()
        .find_map(|d| d.states.first())
        .ok_or_else(|| CliError::Usage("no draws to write".into()))?;
    let variant = draws[0].config.variant;
    Ok(DrawsLayout {
        variant,
        k: first.n_components(),
        dim: first.components[0].beta.len(),
        sampled: (0..areas.n_sampled()).map(|i| areas.id(i)).collect(),
        n_periods: if variant == Variant::SpatialOnly { 0 } else { first.n_periods() },
    })
}

/// One row per stored sweep; spatial-only chains add a leading `period` column.
pub fn write_draws(path: &Path, draws: &[PosteriorDraws], areas: &AreaIndex) -> Result<()> {
    let layout = layout_for(draws, areas)?;
    let mut s = layout.headers().join(",");
    s.push('\n');
    for chain in draws {
        for (sweep, state) in chain.states.iter().enumerate() {
            if let Some(t) = chain.period {
                let _ = write!(s, "{t},");
            }
            let _ = write!(s, "{}", sweep + 1);
            for v in layout.values(state) {
                s.push(',');
                s.push_str(&fmt_f64(v));
            }
            s.push('\n');
        }
    }
    write_text(path, &s)
}

/// Read a draws file written for `areas`, with the grid of its variant. The
/// variant and number of components come from the header; the rest of
/// `config` is taken as given.
pub fn read_draws(
    path: &Path,
    config: &ModelConfig,
    areas: &AreaIndex,
    graph: &SpatialGraph,
) -> Result<(Vec<PosteriorDraws>, RhoGrid)> {
    let t = Table::read(path)?;
    let has = |name: &str| t.headers.iter().any(|h| h == name);
    let k = (1..).take_while(|k| has(&format!("sigma2[{k}]"))).count();
    if k == 0 {
        return Err(CliError::format(path, "no sigma2[k] columns"));
    }
    let variant = if has("period") {
        Variant::SpatialOnly
    } else if k > 1 && !has("rho[2]") {
        Variant::TwoWay
    } else if k == 1 {
        config.variant
    } else {
        Variant::SarRw
    };
    let layout = DrawsLayout {
        variant,
        k,
        dim: (0..).take_while(|j| has(&format!("beta[1][{j}]"))).count(),
        sampled: (0..areas.n_sampled()).map(|i| areas.id(i)).collect(),
        n_periods: if variant == Variant::SpatialOnly {
            0
        } else {
            (0..).take_while(|s| has(&format!("eta[2][{s}]"))).count()
        },
    };
    if layout.headers() != t.headers {
        return Err(CliError::format(
            path,
            "header does not match the sampled areas and periods of the data".to_string(),
        ));
    }
    let cfg = ModelConfig {
        variant,
        n_components: k,
        ..config.clone()
    };
    let grid = grid_for(graph, &cfg)?;
    let grid = &grid;
    let offset = usize::from(variant == Variant::SpatialOnly) + 1;
    let mut chains: Vec<PosteriorDraws> = Vec::new();
    for (line, row) in &t.rows {
        let period = if variant == Variant::SpatialOnly { Some(t.parse::<usize>(*line, row, 0)?) } else { None };
        let values = (offset..row.len())
            .map(|c| t.parse::<f64>(*line, row, c))
            .collect::<Result<Vec<_>>>()?;
        let state = layout.state(&values, grid, config.priors.alpha_initial());
        state.validate().map_err(|e| t.err(*line, e.to_string()))?;
        if variant != Variant::TwoWay && state.effects.iter().any(|e| grid.point(e.rho_index) != e.rho) {
            return Err(t.err(
                *line,
                "rho is not a point of the configured grid; use the grid the draws were fitted with",
            ));
        }
        match chains.last_mut() {
            Some(c) if c.period == period => c.states.push(state),
            _ => {
                if chains.iter().any(|c| c.period == period) {
                    return Err(t.err(*line, "rows of one period must be contiguous"));
                }
                chains.push(PosteriorDraws {
                    config: cfg.clone(),
                    seed: config.mcmc.seed,
                    period,
                    states: vec![state],
                });
            }
        }
    }
    if chains.is_empty() {
        return Err(CliError::format(path, "no draws"));
    }
    Ok((chains, grid.clone()))
}

/// One row of interpolated effects: the chain's period (spatial-only fits),
/// the stored sweep and `u[k][id]` over non-sampled areas for `k = 2..K`.
pub struct InterpolatedRow {
    pub period: Option<usize>,
    pub sweep: usize,
    pub values: Vec<f64>,
}

pub fn write_interpolated(path: &Path, areas: &AreaIndex, k: usize, rows: &[InterpolatedRow]) -> Result<()> {
    let with_period = rows.iter().any(|r| r.period.is_some());
    let mut s = String::from(if with_period { "period,sweep" } else { "sweep" });
    for kk in 2..=k {
        for i in areas.n_sampled()..areas.len() {
            let _ = write!(s, ",u[{kk}][{}]", areas.id(i));
        }
    }
    s.push('\n');
    for r in rows {
        if let Some(t) = r.period {
            let _ = write!(s, "{t},");
        }
        let _ = write!(s, "{}", r.sweep);
        for v in &r.values {
            s.push(',');
            s.push_str(&fmt_f64(*v));
        }
        s.push('\n');
    }
    write_text(path, &s)
}

/// Header `sweep, eta[k][label]`, one row per draw.
pub fn write_eta_draws(path: &Path, label: &str, draws: &[Vec<f64>]) -> Result<()> {
    let k = draws.first().map_or(0, Vec::len) + 1;
    let mut s = String::from("sweep");
    for kk in 2..=k {
        let _ = write!(s, ",eta[{kk}][{label}]");
    }
    s.push('\n');
    for (sweep, row) in draws.iter().enumerate() {
        let _ = write!(s, "{}", sweep + 1);
        for v in row {
            s.push(',');
            s.push_str(&fmt_f64(*v));
        }
        s.push('\n');
    }
    write_text(path, &s)
}

const SUMMARY_HEADER: &str = "area_id,period,scope,quantity,bin_index,mean,sd,lower,upper";

/// Summary rows with external area ids.
pub fn write_summary(path: &Path, table: &SummaryTable, areas: &AreaIndex) -> Result<()> {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for r in &table.rows {
        let bin = r.quantity.bin().map(|g| g.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            areas.id(r.area),
            r.period,
            r.scope,
            r.quantity.name(),
            bin,
            fmt_f64(r.mean),
            fmt_f64(r.sd),
            fmt_f64(r.lower),
            fmt_f64(r.upper)
        );
    }
    write_text(path, &s)
}

/// Summary rows keyed by external area id.
pub fn read_summary(path: &Path) -> Result<SummaryTable> {
    let t = Table::read(path)?;
    if t.headers.join(",") != SUMMARY_HEADER {
        return Err(CliError::format(path, format!("expected header {SUMMARY_HEADER}")));
    }
    let mut rows = Vec::with_capacity(t.rows.len());
    for (line, r) in &t.rows {
        let quantity = match r[3].as_str() {
            "ai" => Quantity::AverageIncome,
            "mi" => Quantity::MedianIncome,
            "gini" => Quantity::Gini,
            "bin" => Quantity::BinCount(t.parse(*line, r, 4)?),
            other => return Err(t.err(*line, format!("unknown quantity '{other}'"))),
        };
        let scope: Scope = r[2].parse().map_err(|_| t.err(*line, format!("unknown scope '{}'", r[2])))?;
        rows.push(SummaryRow {
            area: t.parse::<u64>(*line, r, 0)? as usize,
            period: t.parse(*line, r, 1)?,
            scope,
            quantity,
            mean: t.parse(*line, r, 5)?,
            sd: t.parse(*line, r, 6)?,
            lower: t.parse(*line, r, 7)?,
            upper: t.parse(*line, r, 8)?,
        });
    }
    Ok(SummaryTable { level: f64::NAN, rows })
}

/// Write the fitting data of a synthetic truth, with area ids `0..M`.
pub fn write_truth_dataset(dir: &Path, truth: &SyntheticTruth) -> Result<DataPaths> {
    let paths = DataPaths::in_dir(dir);
    let mut counts = Vec::new();
    for i in 0..truth.n_sampled {
        for t in 0..truth.n_periods {
            for (g, &n) in truth.counts[truth.cell(i, t)].iter().enumerate() {
                counts.push(CountRow {
                    area: i as u64,
                    period: t,
                    bin: g,
                    count: n,
                    total: None,
                });
            }
        }
    }
    write_counts(&paths.counts, &counts)?;
    let mut classes = Vec::new();
    for t in 0..truth.classes.n_periods() {
        let b = truth.classes.bounds(t);
        for g in 0..b.len() - 1 {
            classes.push(ClassRow {
                period: t,
                bin: g,
                lower: b[g],
                upper: b[g + 1],
            });
        }
    }
    write_classes(&paths.classes, &classes)?;
    let covs: Vec<CovariateRow> = (0..truth.n_areas())
        .flat_map(|i| (0..truth.total_periods()).map(move |t| (i, t)))
        .map(|(i, t)| CovariateRow {
            area: i as u64,
            period: t,
            x: truth.covariates.row(i, t)[1..].to_vec(),
        })
        .collect();
    write_covariates(&paths.covariates, &covs)?;
    let edges: Vec<(u64, u64)> = truth.graph.edges().iter().map(|&(a, b)| (a as u64, b as u64)).collect();
    write_edges(&paths.edges, &edges)?;
    write_partition(&paths.partition, &(0..truth.n_sampled as u64).collect::<Vec<_>>())?;
    Ok(paths)
}

/// `truth.csv` (per-cell measures and proportions), `truth_counts.csv` (class
/// counts of every cell) and `coordinates.csv`.
pub fn write_truth_files(dir: &Path, truth: &SyntheticTruth) -> Result<()> {
    let k = truth.components.len();
    let mut s = String::from("area_id,period,sampled,fitted,total,ai,mi,gini");
    for kk in 1..=k {
        let _ = write!(s, ",pi[{kk}]");
    }
    s.push('\n');
    let mut counts = Vec::new();
    for i in 0..truth.n_areas() {
        for t in 0..truth.total_periods() {
            let c = truth.cell(i, t);
            let _ = write!(
                s,
                "{i},{t},{},{},{},{},{},{}",
                u8::from(i < truth.n_sampled),
                u8::from(t < truth.n_periods),
                truth.totals[c],
                fmt_f64(truth.average[c]),
                fmt_f64(truth.median[c]),
                fmt_f64(truth.gini[c])
            );
            for p in &truth.proportions[c] {
                s.push(',');
                s.push_str(&fmt_f64(*p));
            }
            s.push('\n');
            for (g, &n) in truth.counts[c].iter().enumerate() {
                counts.push(CountRow {
                    area: i as u64,
                    period: t,
                    bin: g,
                    count: n,
                    total: None,
                });
            }
        }
    }
    write_text(&dir.join("truth.csv"), &s)?;
    write_counts(&dir.join("truth_counts.csv"), &counts)?;
    let mut c = String::from("area_id,d1,d2\n");
    for (i, d) in truth.coords.iter().enumerate() {
        let _ = writeln!(c, "{i},{},{}", fmt_f64(d[0]), fmt_f64(d[1]));
    }
    write_text(&dir.join("coordinates.csv"), &c)
}

/// True average income from `truth.csv` joined with class counts from a counts file.
pub fn read_truth(truth_path: &Path, counts_path: &Path) -> Result<Vec<CellTruth>> {
    let t = Table::read(truth_path)?;
    let (ca, cp, cai) = (t.column("area_id")?, t.column("period")?, t.column("ai")?);
    let mut counts: BTreeMap<(u64, usize), Vec<u32>> = BTreeMap::new();
    for r in read_counts(counts_path)? {
        let cell = counts.entry((r.area, r.period)).or_default();
        if cell.len() <= r.bin {
            cell.resize(r.bin + 1, 0);
        }
        cell[r.bin] = r.count;
    }
    t.rows
        .iter()
        .map(|(line, r)| {
            let area: u64 = t.parse(*line, r, ca)?;
            let period: usize = t.parse(*line, r, cp)?;
            Ok(CellTruth {
                area: area as usize,
                period,
                average: t.parse(*line, r, cai)?,
                counts: counts.get(&(area, period)).cloned().unwrap_or_default(),
            })
        })
        .collect()
}
