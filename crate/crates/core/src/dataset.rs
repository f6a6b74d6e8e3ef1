//! Scenario sampling, labelled record generation and train/validation/test splits.
//!
//! Every row draws its parameters from its own seed, derived from the master
//! seed and the row index, so any row can be replayed in isolation and the
//! output does not depend on how rows are distributed over workers.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::RawFeatures;
use crate::gn::{self, ChannelSpec, FiberParams, LinkTopology, Modulation};
use crate::seed::{derive_seed, rng_from_seed};
use crate::spectrum::{self, GridPolicy, MAX_SYMBOL_RATE_GBD, MIN_SYMBOL_RATE_GBD};

pub const CSV_HEADER: &str =
    "seed,n_spans,span_length_km,cut_gbd,modulation,center_freq_thz,p_ch_dbm,fill_fraction,snr_current_db,snr_full_db,margin_db";
pub const LEDGER_HEADER: &str = "index,seed,error";

pub const MIN_SPANS: u32 = 2;
pub const MAX_SPANS: u32 = 30;
pub const MIN_SPAN_KM: f64 = 60.0;
pub const MAX_SPAN_KM: f64 = 120.0;
pub const MIN_ANCHOR_DBM: f64 = -3.0;
pub const MAX_ANCHOR_DBM: f64 = 0.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub fiber: FiberParams,
    pub experimental_grid: bool,
}

impl DatasetConfig {
    pub fn policy(&self, psd_anchor_dbm: f64) -> GridPolicy {
        if self.experimental_grid {
            GridPolicy::experimental(psd_anchor_dbm)
        } else {
            GridPolicy::default().with_anchor(psd_anchor_dbm)
        }
    }
}

/// One drawn point of the parameter space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub n_spans: u32,
    pub span_length_km: f64,
    pub cut_gbd: f64,
    pub modulation: Modulation,
    pub psd_anchor_dbm: f64,
    pub center_freq_thz: f64,
    pub fill_target: f64,
}

impl Scenario {
    /// Draws every parameter from `seed` alone.
    pub fn sample(seed: u64, config: &DatasetConfig) -> Self {
        let policy = config.policy(0.0);
        let mut rng = rng_from_seed(seed);
        let n_spans = rng.random_range(MIN_SPANS..=MAX_SPANS);
        let span_length_km = rng.random_range(MIN_SPAN_KM..=MAX_SPAN_KM);
        let mut cut_gbd = rng.random_range(MIN_SYMBOL_RATE_GBD..=MAX_SYMBOL_RATE_GBD);
        let psd_anchor_dbm = rng.random_range(MIN_ANCHOR_DBM..=MAX_ANCHOR_DBM);
        let modulation = Modulation::FORMATS[rng.random_range(0..Modulation::FORMATS.len())];
        let center_freq_thz = match policy.slot_centers_thz() {
            Some(centers) => {
                cut_gbd = MIN_SYMBOL_RATE_GBD;
                centers[rng.random_range(0..centers.len())]
            }
            None => {
                let half = 0.5 * cut_gbd * 1e-3;
                rng.random_range(policy.band_start_thz + half..=policy.band_end_thz - half)
            }
        };
        let cut_only = cut_gbd / policy.band_width_ghz();
        // 1 − U[0, 1) lies in (0, 1], so the target lies in (cut_only, 1].
        let u: f64 = rng.random();
        let fill_target = cut_only + (1.0 - cut_only) * (1.0 - u);
        Self {
            seed,
            n_spans,
            span_length_km,
            cut_gbd,
            modulation,
            psd_anchor_dbm,
            center_freq_thz,
            fill_target,
        }
    }

    pub fn cut(&self) -> ChannelSpec {
        ChannelSpec {
            center_freq_thz: self.center_freq_thz,
            symbol_rate_gbd: self.cut_gbd,
            launch_power_dbm: self.psd_anchor_dbm,
            is_cut: true,
            modulation: self.modulation,
        }
    }

    pub fn plan_seed(&self) -> u64 {
        derive_seed(self.seed, 1)
    }

    pub fn partial_seed(&self) -> u64 {
        derive_seed(self.seed, 2)
    }
}

pub fn row_seed(master_seed: u64, index: u64) -> u64 {
    derive_seed(master_seed, index)
}

pub fn sample_parameter_space(n_rows: usize, master_seed: u64, config: &DatasetConfig) -> Vec<Scenario> {
    (0..n_rows as u64)
        .map(|i| Scenario::sample(row_seed(master_seed, i), config))
        .collect()
}

/// One dataset row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub seed: u64,
    pub n_spans: u32,
    pub span_length_km: f64,
    pub cut_gbd: f64,
    pub modulation: Modulation,
    pub center_freq_thz: f64,
    /// CUT launch power referenced to a 35 GBd channel (the PSD anchor).
    pub p_ch_dbm: f64,
    pub fill_fraction: f64,
    pub snr_current_db: f64,
    pub snr_full_db: f64,
    pub margin_db: f64,
}

impl ProbeRecord {
    pub fn features(&self) -> RawFeatures {
        [
            self.snr_current_db,
            self.p_ch_dbm,
            self.center_freq_thz,
            self.n_spans as f64,
            self.fill_fraction,
        ]
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.seed,
            self.n_spans,
            self.span_length_km,
            self.cut_gbd,
            self.modulation,
            self.center_freq_thz,
            self.p_ch_dbm,
            self.fill_fraction,
            self.snr_current_db,
            self.snr_full_db,
            self.margin_db
        )
    }
}

/// Builds the plan and partial load of `scenario` and labels it.
pub fn evaluate_scenario(scenario: &Scenario, config: &DatasetConfig) -> Result<ProbeRecord> {
    let policy = config.policy(scenario.psd_anchor_dbm);
    let full = spectrum::build_full_plan(&policy, &scenario.cut(), scenario.plan_seed())?;
    let partial = spectrum::sample_partial(&full, scenario.fill_target, scenario.partial_seed())?;
    let topology = LinkTopology::new(scenario.n_spans, scenario.span_length_km, config.fiber)?;
    let snr_current_db = gn::snr(&partial, &topology)?;
    let snr_full_db = gn::snr(&full, &topology)?;
    let cut = partial.cut();
    Ok(ProbeRecord {
        seed: scenario.seed,
        n_spans: scenario.n_spans,
        span_length_km: scenario.span_length_km,
        cut_gbd: cut.symbol_rate_gbd,
        modulation: cut.modulation,
        center_freq_thz: cut.center_freq_thz,
        p_ch_dbm: cut.reference_power_dbm(),
        fill_fraction: partial.fill_fraction(),
        snr_current_db,
        snr_full_db,
        margin_db: snr_current_db - snr_full_db,
    })
}

/// Regenerates a row from its per-row seed.
pub fn replay(seed: u64, config: &DatasetConfig) -> Result<ProbeRecord> {
    evaluate_scenario(&Scenario::sample(seed, config), config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRow {
    pub index: u64,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub rows_requested: usize,
    pub rows_written: usize,
    pub rows_skipped: usize,
    /// First row index computed by this invocation (non-zero after a resume).
    pub resumed_at: u64,
}

fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {workers} workers: {e}")))
}

/// Computes rows `range` in parallel, returned in index order.
fn compute_rows(
    pool: &rayon::ThreadPool,
    range: std::ops::Range<u64>,
    master_seed: u64,
    config: &DatasetConfig,
) -> Vec<std::result::Result<ProbeRecord, SkippedRow>> {
    pool.install(|| {
        range
            .into_par_iter()
            .map(|index| {
                let seed = row_seed(master_seed, index);
                replay(seed, config).map_err(|e| SkippedRow {
                    index,
                    seed,
                    error: e.to_string(),
                })
            })
            .collect()
    })
}

/// In-memory generation; skipped rows are returned alongside.
pub fn generate_records(
    n_rows: usize,
    master_seed: u64,
    config: &DatasetConfig,
    workers: usize,
) -> Result<(Vec<ProbeRecord>, Vec<SkippedRow>)> {
    let pool = build_pool(workers)?;
    let mut records = Vec::with_capacity(n_rows);
    let mut skipped = Vec::new();
    for row in compute_rows(&pool, 0..n_rows as u64, master_seed, config) {
        match row {
            Ok(r) => records.push(r),
            Err(s) => skipped.push(s),
        }
    }
    Ok((records, skipped))
}

pub fn ledger_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".errors.csv");
    out.with_file_name(name)
}

/// Drops a trailing partial line and returns the complete lines after the header.
fn complete_lines(path: &Path, header: &str) -> Result<Vec<String>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut text = fs::read_to_string(path)?;
    if !text.ends_with('\n') {
        let keep = text.rfind('\n').map_or(0, |i| i + 1);
        text.truncate(keep);
        fs::write(path, &text)?;
    }
    let mut lines = text.lines();
    match lines.next() {
        None => Ok(Vec::new()),
        Some(h) if h == header => Ok(lines.map(str::to_string).collect()),
        Some(_) => Err(Error::Parse {
            line: 1,
            message: format!("{} does not start with the expected header", path.display()),
        }),
    }
}

fn first_field_u64(line: &str, column: usize) -> Option<u64> {
    line.split(',').nth(column)?.parse().ok()
}

/// Writes `n_rows` rows to `out`, continuing a previous partial run if one is found.
///
/// Rows are computed in blocks and appended in index order; each block is
/// flushed before the next starts, so an interrupted run resumes at the
/// first row that is in neither the dataset nor the error ledger.
pub fn generate_to_file(
    n_rows: usize,
    master_seed: u64,
    config: &DatasetConfig,
    workers: usize,
    out: &Path,
    mut progress: impl FnMut(usize, usize),
) -> Result<GenerateSummary> {
    const BLOCK: u64 = 2048;
    let ledger = ledger_path(out);
    let data_lines = complete_lines(out, CSV_HEADER)?;
    let ledger_lines = complete_lines(&ledger, LEDGER_HEADER)?;

    let mut done = 0u64;
    if !data_lines.is_empty() || !ledger_lines.is_empty() {
        let last_data_seed = data_lines.last().and_then(|l| first_field_u64(l, 0));
        let last_skip_index = ledger_lines.last().and_then(|l| first_field_u64(l, 0));
        let mut last_index = last_skip_index;
        if let Some(seed) = last_data_seed {
            let idx = (0..n_rows as u64)
                .find(|&i| row_seed(master_seed, i) == seed)
                .ok_or_else(|| Error::InvalidArgument(format!(
                    "{} was written with a different seed or row count",
                    out.display()
                )))?;
            last_index = Some(last_index.map_or(idx, |s| s.max(idx)));
        }
        done = last_index.map_or(0, |i| i + 1);
        if data_lines.len() + ledger_lines.len() != done as usize {
            return Err(Error::InvalidArgument(format!(
                "{} and its error ledger are inconsistent; remove both to restart",
                out.display()
            )));
        }
    }

    let mut rows_written = data_lines.len();
    let mut rows_skipped = ledger_lines.len();
    let open = |path: &Path, header: &str, existing: bool| -> Result<BufWriter<File>> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut w = BufWriter::new(file);
        if !existing {
            writeln!(w, "{header}")?;
        }
        Ok(w)
    };
    let data_exists = out.exists() && fs::metadata(out)?.len() > 0;
    let mut data = open(out, CSV_HEADER, data_exists)?;
    let mut ledger_writer: Option<BufWriter<File>> = None;
    let ledger_exists = ledger.exists() && fs::metadata(&ledger)?.len() > 0;
    if ledger_exists {
        ledger_writer = Some(open(&ledger, LEDGER_HEADER, true)?);
    }

    let pool = build_pool(workers)?;
    let resumed_at = done;
    let mut start = done;
    while start < n_rows as u64 {
        let end = (start + BLOCK).min(n_rows as u64);
        for row in compute_rows(&pool, start..end, master_seed, config) {
            match row {
                Ok(r) => {
                    writeln!(data, "{}", r.csv_line())?;
                    rows_written += 1;
                }
                Err(s) => {
                    if ledger_writer.is_none() {
                        ledger_writer = Some(open(&ledger, LEDGER_HEADER, false)?);
                    }
                    if let Some(w) = ledger_writer.as_mut() {
                        writeln!(w, "{},{},\"{}\"", s.index, s.seed, s.error.replace('"', "'"))?;
                    }
                    rows_skipped += 1;
                }
            }
        }
        data.flush()?;
        if let Some(w) = ledger_writer.as_mut() {
            w.flush()?;
        }
        progress(end as usize, n_rows);
        start = end;
    }
    Ok(GenerateSummary {
        rows_requested: n_rows,
        rows_written,
        rows_skipped,
        resumed_at,
    })
}

pub fn read_csv(path: &Path) -> Result<Vec<ProbeRecord>> {
    let file = File::open(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::Reader::from_reader(std::io::BufReader::new(file));
    let header: Vec<&str> = CSV_HEADER.split(',').collect();
    let found: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if found != header {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected dataset header in {}", path.display()),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize().enumerate() {
        let rec: ProbeRecord = rec.map_err(|e| Error::Parse {
            line: i + 2,
            message: e.to_string(),
        })?;
        rows.push(rec);
    }
    Ok(rows)
}

pub fn write_csv(path: &Path, rows: &[ProbeRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
}

/// Sizes for a 70/10/20 split by largest remainder; ties favour train, then
/// validation, then test.
pub fn split_sizes(n: usize) -> [usize; 3] {
    const PCT: [usize; 3] = [70, 10, 20];
    let mut sizes = PCT.map(|p| n * p / 100);
    let rems = PCT.map(|p| n * p % 100);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| rems[b].cmp(&rems[a]).then(a.cmp(&b)));
    let missing = n - sizes.iter().sum::<usize>();
    for &k in order.iter().take(missing) {
        sizes[k] += 1;
    }
    sizes
}

/// Seeded shuffle, then 70/10/20 partition.
pub fn split<T: Clone>(rows: &[T], seed: u64) -> Result<DatasetSplit<T>> {
    if rows.is_empty() {
        return Err(Error::InsufficientData("cannot split an empty dataset".into()));
    }
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let [n_train, n_val, _] = split_sizes(rows.len());
    let pick = |r: &[usize]| r.iter().map(|&i| rows[i].clone()).collect::<Vec<T>>();
    Ok(DatasetSplit {
        train: pick(&idx[..n_train]),
        validation: pick(&idx[n_train..n_train + n_val]),
        test: pick(&idx[n_train + n_val..]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_follow_largest_remainder() {
        assert_eq!(split_sizes(100), [70, 10, 20]);
        assert_eq!(split_sizes(101), [71, 10, 20]);
        assert_eq!(split_sizes(7), [5, 1, 1]);
        for n in 1..500 {
            assert_eq!(split_sizes(n).iter().sum::<usize>(), n);
        }
    }

    #[test]
    fn split_is_a_partition_and_idempotent() {
        let rows: Vec<u32> = (0..101).collect();
        let a = split(&rows, 4).unwrap();
        let b = split(&rows, 4).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<u32> = a.train.iter().chain(&a.validation).chain(&a.test).copied().collect();
        all.sort();
        assert_eq!(all, rows);
    }

    #[test]
    fn full_fill_rows_have_zero_margin() {
        let config = DatasetConfig::default();
        let mut s = Scenario::sample(42, &config);
        s.fill_target = 1.0;
        let r = evaluate_scenario(&s, &config).unwrap();
        assert_eq!(r.margin_db, 0.0);
    }

    #[test]
    fn csv_round_trip_keeps_six_decimals() {
        let (rows, _) = generate_records(12, 4, &DatasetConfig::default(), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_csv(&path, &rows).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.seed, b.seed);
            assert_eq!(a.modulation, b.modulation);
            assert_eq!(a.csv_line(), b.csv_line());
            assert!((a.margin_db - b.margin_db).abs() <= 5e-7);
        }
    }

    #[test]
    fn ledger_path_appends_suffix() {
        assert_eq!(ledger_path(Path::new("/tmp/a.csv")), Path::new("/tmp/a.csv.errors.csv"));
    }
}
