//! Named experiments. Each one reads an `ExperimentConfig`, runs seeded
//! replicas (cached per replica so interrupted runs resume), and yields CSV
//! tables plus pass/fail assertions. `run` persists them with a JSON
//! manifest; `report` turns a bundle into a summary and plot-data files.

mod audit;
mod brackets;
pub mod config;
mod events;
mod malliavin;
mod qv;
mod simulate;
mod smallball;
mod spectrum;
mod variation;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use config::{
    parse_mode, parse_override, replica_seed, AdjointChoice, Expect, Experiment, ExperimentConfig,
    ModelKind,
};

use crate::error::{Error, Result};

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));
pub const MANIFEST: &str = "manifest.json";

/// Shortest round-trip text of a float; exponent form outside `[1e-4, 1e15)`.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub trait Cell {
    fn cell(&self) -> String;
}

impl Cell for f64 {
    fn cell(&self) -> String {
        fmt_f64(*self)
    }
}

macro_rules! display_cell {
    ($($t:ty),*) => {$(
        impl Cell for $t {
            fn cell(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
display_cell!(usize, u64, u32, i64, i32, bool, str, String);

impl<T: Cell + ?Sized> Cell for &T {
    fn cell(&self) -> String {
        (**self).cell()
    }
}

impl<T: Cell> Cell for Option<T> {
    fn cell(&self) -> String {
        self.as_ref().map(|v| v.cell()).unwrap_or_default()
    }
}

macro_rules! row {
    ($($x:expr),* $(,)?) => { vec![$($crate::experiments::Cell::cell(&$x)),*] };
}
pub(crate) use row;

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(
            row.len(),
            self.header.len(),
            "row width in table {}",
            self.name
        );
        self.rows.push(row);
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    /// Column by header name.
    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j].as_str()).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub experiment: Experiment,
    pub tables: Vec<Table>,
    pub assertions: Vec<Assertion>,
    /// Seeds actually used, per replica stream.
    pub seeds: BTreeMap<String, Vec<u64>>,
}

impl Outcome {
    /// All assertions pass, and there was at least one.
    pub fn passed(&self) -> bool {
        !self.assertions.is_empty() && self.assertions.iter().all(|a| a.pass)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn assertion(&self, name: &str) -> Option<&Assertion> {
        self.assertions.iter().find(|a| a.name == name)
    }
}

/// Per-run state handed to the experiment bodies.
pub struct Context<'a> {
    pub cfg: &'a ExperimentConfig,
    cache: Option<PathBuf>,
    seeds: Mutex<BTreeMap<String, Vec<u64>>>,
    tables: Vec<Table>,
    assertions: Vec<Assertion>,
}

impl<'a> Context<'a> {
    fn new(cfg: &'a ExperimentConfig, cache: Option<PathBuf>) -> Self {
        Self {
            cfg,
            cache,
            seeds: Mutex::new(BTreeMap::new()),
            tables: Vec::new(),
            assertions: Vec::new(),
        }
    }

    /// Seeds of the first `n` replicas of stream `tag`.
    pub fn seeds(&self, tag: &str, n: usize) -> Vec<u64> {
        let key = format!("{}:{tag}", self.cfg.experiment);
        let s: Vec<u64> = (0..n as u64)
            .map(|i| replica_seed(self.cfg.seed, &key, i))
            .collect();
        self.seeds.lock().expect("seed log").insert(key, s.clone());
        s
    }

    /// Runs `f(index, seed)` for `n` replicas of stream `tag`, reusing cached
    /// results of an earlier run with the same config. Replicas are spread
    /// over `cfg.threads` workers; the result order is the replica order.
    pub fn replicate<T, F>(&self, tag: &str, n: usize, f: F) -> Result<Vec<T>>
    where
        T: Serialize + DeserializeOwned + Send,
        F: Fn(usize, u64) -> Result<T> + Sync,
    {
        let seeds = self.seeds(tag, n);
        let one = |i: usize| -> Result<T> {
            let path = self
                .cache
                .as_ref()
                .map(|d| d.join(format!("{tag}-{i}.json")));
            if let Some(p) = &path {
                if let Ok(text) = std::fs::read_to_string(p) {
                    if let Ok(v) = serde_json::from_str(&text) {
                        return Ok(v);
                    }
                }
            }
            let v = f(i, seeds[i])?;
            if let Some(p) = &path {
                write_atomic(p, serde_json::to_string(&v)?.as_bytes())?;
            }
            Ok(v)
        };
        let workers = self.cfg.threads.min(n.max(1));
        if workers <= 1 {
            return (0..n).map(one).collect();
        }
        let mut slots: Vec<Option<Result<T>>> = (0..n).map(|_| None).collect();
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let one = &one;
                    s.spawn(move || {
                        (w..n)
                            .step_by(workers)
                            .map(|i| (i, one(i)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("replica worker panicked") {
                    slots[i] = Some(r);
                }
            }
        });
        slots
            .into_iter()
            .map(|s| s.expect("every replica ran"))
            .collect()
    }

    pub fn table(&mut self, t: Table) {
        self.tables.push(t);
    }

    pub fn check(&mut self, name: &str, pass: bool, detail: impl Into<String>) {
        self.assertions.push(Assertion {
            name: name.to_string(),
            pass,
            detail: detail.into(),
        });
    }

    fn finish(self) -> Outcome {
        Outcome {
            experiment: self.cfg.experiment,
            tables: self.tables,
            assertions: self.assertions,
            seeds: self.seeds.into_inner().expect("seed log"),
        }
    }
}

fn dispatch(ctx: &mut Context) -> Result<()> {
    match ctx.cfg.experiment {
        Experiment::Simulate => simulate::run(ctx),
        Experiment::Variation => variation::run(ctx),
        Experiment::Malliavin => malliavin::run(ctx),
        Experiment::Spectrum => spectrum::run(ctx),
        Experiment::Smallball => smallball::run(ctx),
        Experiment::Brackets => brackets::run(ctx),
        Experiment::Qv => qv::run(ctx),
        Experiment::Events => events::run(ctx),
        Experiment::Audit => audit::run(ctx),
    }
}

/// Runs an experiment in memory, without touching the disk.
pub fn compute(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    let mut ctx = Context::new(cfg, None);
    dispatch(&mut ctx)?;
    Ok(ctx.finish())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub rows: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub experiment: Experiment,
    pub anchor: String,
    pub version: String,
    /// Effective config (after overrides) as TOML; rerunnable as is.
    pub config: String,
    pub config_sha256: String,
    pub master_seed: u64,
    pub seed_rule: String,
    pub seeds: BTreeMap<String, Vec<u64>>,
    pub files: Vec<FileEntry>,
    pub assertions: Vec<Assertion>,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub dir: PathBuf,
    pub outcome: Outcome,
    pub manifest: Manifest,
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Runs an experiment and persists its bundle under `cfg.out_dir`: one CSV
/// per table, a manifest, and the per-replica cache under `replicas/`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let text = cfg.to_toml()?;
    let hash = config::sha256_hex(text.as_bytes());
    let dir = cfg.out_dir.clone();
    let cache = dir.join("replicas").join(&hash[..16]);
    std::fs::create_dir_all(&cache)?;
    let mut ctx = Context::new(cfg, Some(cache));
    dispatch(&mut ctx)?;
    let outcome = ctx.finish();
    let mut files = Vec::new();
    for t in &outcome.tables {
        let bytes = t.to_csv()?;
        write_atomic(&dir.join(t.file_name()), &bytes)?;
        files.push(FileEntry {
            name: t.file_name(),
            rows: t.rows.len(),
            sha256: config::sha256_hex(&bytes),
        });
    }
    let manifest = Manifest {
        schema_version: config::SCHEMA_VERSION,
        experiment: cfg.experiment,
        anchor: cfg.experiment.anchor().to_string(),
        version: VERSION.to_string(),
        config: text,
        config_sha256: hash,
        master_seed: cfg.seed,
        seed_rule: "first 8 bytes (little endian) of sha256(master_seed_le || \"<experiment>:<stream>\" || 0x00 || index_le)".into(),
        seeds: outcome.seeds.clone(),
        files,
        assertions: outcome.assertions.clone(),
        passed: outcome.passed(),
    };
    write_atomic(
        &dir.join(MANIFEST),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    Ok(RunRecord {
        dir,
        outcome,
        manifest,
    })
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.clone()),
        _ => Error::Io(e),
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn read_table(dir: &Path, name: &str) -> Result<Table> {
    let path = dir.join(format!("{name}.csv"));
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let mut r = csv::Reader::from_path(&path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut t = Table {
        name: name.to_string(),
        header,
        rows: Vec::new(),
    };
    for rec in r.records() {
        t.rows.push(rec?.iter().map(str::to_string).collect());
    }
    Ok(t)
}

fn parse_col(t: &Table, name: &str) -> Result<Vec<f64>> {
    t.column(name)
        .ok_or_else(|| Error::Config(format!("{}.csv has no column {name}", t.name)))?
        .iter()
        .map(|s| {
            s.parse::<f64>().map_err(|_| {
                Error::Config(format!("{}.csv: {s:?} in {name} is not a number", t.name))
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct Report {
    pub summary: PathBuf,
    pub plot_files: Vec<PathBuf>,
    pub text: String,
}

/// Summary text plus `(x, y)` plot-data files for the bundle in `dir`.
pub fn report(dir: &Path) -> Result<Report> {
    let m = read_manifest(dir)?;
    for f in &m.files {
        if !dir.join(&f.name).exists() {
            return Err(Error::MissingFile(dir.join(&f.name)));
        }
    }
    let mut text = String::new();
    let _ = writeln!(text, "experiment: {}", m.experiment);
    let _ = writeln!(text, "anchor: {}", m.anchor);
    let _ = writeln!(
        text,
        "version: {}  config sha256: {}",
        m.version, m.config_sha256
    );
    let _ = writeln!(
        text,
        "tables: {}",
        m.files
            .iter()
            .map(|f| format!("{} ({} rows)", f.name, f.rows))
            .collect::<Vec<_>>()
            .join(", ")
    );
    let mut plots = Vec::new();
    let mut plot = |name: &str, t: Table| -> Result<()> {
        let p = dir.join(format!("{name}.csv"));
        write_atomic(&p, &t.to_csv()?)?;
        plots.push(p);
        Ok(())
    };
    match m.experiment {
        Experiment::Smallball => {
            let t = read_table(dir, "smallball")?;
            let (eps, p) = (parse_col(&t, "eps")?, parse_col(&t, "p")?);
            let mut out = Table::new("plot_tail", &["log_eps", "log_p"]);
            for (e, p) in eps.iter().zip(&p).filter(|(_, p)| **p > 0.0) {
                out.push(row![e.ln(), p.ln()]);
            }
            let _ = writeln!(
                text,
                "tail points with positive frequency: {}",
                out.rows.len()
            );
            plot("plot_tail", out)?;
        }
        Experiment::Spectrum => {
            let t = read_table(dir, "spectrum")?;
            let (rep, ev) = (parse_col(&t, "replica")?, parse_col(&t, "eigenvalue")?);
            let mut pairs: Vec<(f64, f64)> = rep.into_iter().zip(ev).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let mut out = Table::new("plot_spectrum", &["replica", "rank", "eigenvalue"]);
            let mut last = f64::NAN;
            let mut k = 0usize;
            for (r, e) in pairs {
                if r != last {
                    (last, k) = (r, 0);
                }
                out.push(row![r as u64, k, e]);
                k += 1;
            }
            plot("plot_spectrum", out)?;
        }
        Experiment::Brackets => {
            let t = read_table(dir, "ranks")?;
            let (n, r) = (parse_col(&t, "n")?, parse_col(&t, "rank")?);
            let mut out = Table::new("plot_rank", &["n", "rank"]);
            for (a, b) in n.iter().zip(&r) {
                out.push(row![*a as u64, *b as u64]);
            }
            let _ = writeln!(text, "final rank: {}", r.last().copied().unwrap_or(0.0));
            plot("plot_rank", out)?;
        }
        Experiment::Events => {
            if let Ok(t) = read_table(dir, "status_counts") {
                let st = t.column("status").unwrap_or_default();
                let cnt = parse_col(&t, "count")?;
                let violated: f64 = st
                    .iter()
                    .zip(&cnt)
                    .filter(|(s, _)| **s == "violated")
                    .map(|(_, c)| c)
                    .sum();
                let unresolved: f64 = st
                    .iter()
                    .zip(&cnt)
                    .filter(|(s, _)| **s == "unresolved")
                    .map(|(_, c)| c)
                    .sum();
                let _ = writeln!(text, "violations: {violated}");
                let _ = writeln!(text, "unresolved (grid too coarse): {unresolved}");
            }
        }
        Experiment::Audit => {
            if let Ok(t) = read_table(dir, "alpha") {
                let (tau, norm) = (parse_col(&t, "tau")?, parse_col(&t, "mean_sup_norm")?);
                let mut out = Table::new("plot_alpha", &["log_tau", "log_norm"]);
                for (a, b) in tau.iter().zip(&norm) {
                    out.push(row![a.ln(), b.ln()]);
                }
                plot("plot_alpha", out)?;
            }
        }
        Experiment::Qv => {
            if let Ok(t) = read_table(dir, "qv") {
                let (f, d) = (parse_col(&t, "formula")?, parse_col(&t, "discrete")?);
                let mut out = Table::new("plot_qv", &["formula", "discrete"]);
                for (a, b) in f.iter().zip(&d) {
                    out.push(row![*a, *b]);
                }
                plot("plot_qv", out)?;
            }
        }
        _ => {}
    }
    let _ = writeln!(text, "assertions:");
    for a in &m.assertions {
        let _ = writeln!(
            text,
            "  {} {}: {}",
            if a.pass { "PASS" } else { "FAIL" },
            a.name,
            a.detail
        );
    }
    let failed = m.assertions.iter().filter(|a| !a.pass).count();
    let _ = writeln!(
        text,
        "result: {}",
        if failed == 0 {
            "all assertions passed".to_string()
        } else {
            format!("{failed} assertion(s) failed")
        }
    );
    let summary = dir.join("summary.txt");
    write_atomic(&summary, text.as_bytes())?;
    Ok(Report {
        summary,
        plot_files: plots,
        text,
    })
}

/// Sample median; `NaN` for an empty slice.
pub(crate) fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// `(E|x|^p)^{1/p}`.
pub(crate) fn lp_norm(v: &[f64], p: u32) -> f64 {
    let m = v.iter().map(|x| x.abs().powi(p as i32)).sum::<f64>() / v.len().max(1) as f64;
    m.powf(1.0 / p as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_cells_round_trip() {
        for x in [
            0.0,
            1.0,
            -2.5,
            1e-10,
            3.0e20,
            0.1 + 0.2,
            f64::MIN_POSITIVE,
            123456.789,
        ] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(1e-10), "1e-10");
        assert_eq!(fmt_f64(0.25), "0.25");
    }

    #[test]
    fn csv_and_atomic_write() {
        let mut t = Table::new("t", &["a", "b"]);
        t.push(row![1usize, 0.5]);
        t.push(row!["x,y", true]);
        let bytes = t.to_csv().unwrap();
        assert_eq!(
            String::from_utf8(bytes.clone()).unwrap(),
            "a,b\n1,0.5\n\"x,y\",true\n"
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("t.csv");
        write_atomic(&p, &bytes).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), bytes);
        let back = read_table(&dir.path().join("sub"), "t").unwrap();
        assert_eq!(back.rows, t.rows);
        assert!(matches!(
            read_table(dir.path(), "nope"),
            Err(Error::MissingFile(_))
        ));
        assert!(matches!(report(dir.path()), Err(Error::MissingFile(_))));
    }

    #[test]
    fn lp_norms_increase_in_p() {
        let v = [0.1, 2.0, 0.5, 3.0];
        assert!(lp_norm(&v, 2) <= lp_norm(&v, 4) && lp_norm(&v, 4) <= lp_norm(&v, 8));
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
