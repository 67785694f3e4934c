//! CSV tables with fixed headers. Floats use Rust's shortest round-trip
//! formatting, so identical results give identical bytes.

use std::fmt::Display;
use std::fs;
use std::path::Path;

use valley_core::fed::{CompareRow, RoundLog};
use valley_core::nn::EpochLog;
use valley_core::probes::{Confusion, ReluSim, SoftmaxMetricsRow};
use valley_core::scan::{ScanResult, SoupReport};
use valley_core::stats::Histogram;

use crate::error::{LabError, LabResult};

pub const SCAN_HEADER: &[&str] = &["lambda", "error", "ce"];
pub const SOUP_HEADER: &[&str] = &["epoch", "ssr_ia", "ssr_ib", "ssr_ab", "gap"];
pub const SOUP_CURVES_HEADER: &[&str] = &["epoch", "lambda", "error", "ce"];
pub const SOFTMAX_HEADER: &[&str] = &["lambda", "error", "ce", "tr_p", "tr_h", "first_order", "second_order"];
pub const CONFUSION_HEADER: &[&str] = &["lambda", "aa", "ai", "ia", "ii", "diag_sum"];
pub const ROUNDS_HEADER: &[&str] = &["round", "acc", "mean_ssr", "selected_clients"];
pub const COMPARE_HEADER: &[&str] = &["method", "alpha", "gamma", "prox_mu", "seeds", "mean_acc", "std_acc", "accs"];
pub const COMPARE_SSR_HEADER: &[&str] = &["method", "alpha", "round", "mean_ssr"];
pub const TRAIN_HEADER: &[&str] = &["epoch", "lr", "loss", "error"];
pub const RELU_SUMMARY_HEADER: &[&str] = &["lambda", "mean", "std"];
pub const HIST_HEADER: &[&str] = &["bin_lo", "bin_hi", "count"];
pub const BN_INIT_HEADER: &[&str] =
    &["init", "positive_init", "positive_trained", "train_error", "gap_ns", "gap_filter_ns"];

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn cells<const N: usize>(xs: [&dyn Display; N]) -> Vec<String> {
    xs.iter().map(|x| x.to_string()).collect()
}

/// `a;b;c`, used for list-valued cells.
fn joined<T: Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }

    pub fn write(&self, path: &Path) -> LabResult<()> {
        fs::write(path, self.to_csv()).map_err(|e| LabError::io(path, e))
    }

    /// Parse a CSV with a header row.
    pub fn parse(text: &str) -> LabResult<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header = rdr.headers().map_err(|e| LabError::Format(e.to_string()))?.iter().map(String::from).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|r| r.iter().map(String::from).collect()).map_err(|e| LabError::Format(e.to_string())))
            .collect::<LabResult<_>>()?;
        Ok(Self { header, rows })
    }

    /// Numeric column by header name.
    pub fn column(&self, name: &str) -> LabResult<Vec<f64>> {
        let i = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| LabError::Format(format!("no column `{name}`")))?;
        self.rows
            .iter()
            .map(|r| r[i].parse().map_err(|_| LabError::Format(format!("bad number `{}` in `{name}`", r[i]))))
            .collect()
    }
}

pub fn scan(result: &ScanResult) -> Table {
    let mut t = Table::new(SCAN_HEADER);
    for p in &result.points {
        t.push(cells([&p.lambda, &p.error, &p.ce]));
    }
    t
}

pub fn soup(report: &SoupReport) -> Table {
    let mut t = Table::new(SOUP_HEADER);
    for r in &report.rows {
        t.push(cells([&r.epoch, &r.ssr_ia, &r.ssr_ib, &r.ssr_ab, &r.gap]));
    }
    t
}

pub fn soup_curves(report: &SoupReport) -> Table {
    let mut t = Table::new(SOUP_CURVES_HEADER);
    for (epoch, c) in &report.curves {
        for p in &c.points {
            t.push(cells([epoch, &p.lambda, &p.error, &p.ce]));
        }
    }
    t
}

pub fn softmax(rows: &[SoftmaxMetricsRow]) -> Table {
    let mut t = Table::new(SOFTMAX_HEADER);
    for r in rows {
        t.push(cells([&r.lambda, &r.error, &r.ce, &r.tr_p, &r.tr_h, &r.first_order, &r.second_order]));
    }
    t
}

pub fn confusion(rows: &[(f64, Confusion)]) -> Table {
    let mut t = Table::new(CONFUSION_HEADER);
    for (l, c) in rows {
        t.push(cells([l, &c.aa, &c.ai, &c.ia, &c.ii, &c.diag_sum()]));
    }
    t
}

pub fn rounds(logs: &[RoundLog]) -> Table {
    let mut t = Table::new(ROUNDS_HEADER);
    for r in logs {
        t.push(cells([&r.round, &r.acc, &r.mean_ssr, &joined(&r.selected)]));
    }
    t
}

pub fn compare(rows: &[CompareRow]) -> Table {
    let mut t = Table::new(COMPARE_HEADER);
    for r in rows {
        t.push(cells([&r.method, &r.alpha, &r.gamma, &r.prox_mu, &joined(&r.seeds), &r.mean, &r.std, &joined(&r.accs)]));
    }
    t
}

pub fn compare_ssr(rows: &[CompareRow]) -> Table {
    let mut t = Table::new(COMPARE_SSR_HEADER);
    for r in rows {
        for (round, s) in r.ssr_by_round.iter().enumerate() {
            t.push(cells([&r.method, &r.alpha, &round, s]));
        }
    }
    t
}

pub fn train_log(logs: &[EpochLog]) -> Table {
    let mut t = Table::new(TRAIN_HEADER);
    for l in logs {
        t.push(cells([&l.epoch, &l.lr, &l.loss, &l.error]));
    }
    t
}

pub fn relu_summary(sim: &ReluSim) -> Table {
    let mut t = Table::new(RELU_SUMMARY_HEADER);
    for r in &sim.rows {
        t.push(cells([&r.lambda, &r.mean, &r.std]));
    }
    t
}

pub fn histogram(h: &Histogram) -> Table {
    let mut t = Table::new(HIST_HEADER);
    for (i, c) in h.counts.iter().enumerate() {
        let (lo, hi) = h.bin_edges(i);
        t.push(cells([&lo, &hi, c]));
    }
    t
}
