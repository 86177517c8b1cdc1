//! Monthly closing-price tables and simple returns.
//!
//! CSV layout: header `date,LABEL1,...,LABELk`, ISO dates, strictly positive
//! prices, one row per month in increasing date order. Cash is never part of
//! the file; [`ReturnMatrix::with_cash`] prepends it.

use std::io::{Read, Write};
use std::path::Path;

use caosd_core::constraints::CASH_LABEL;
use chrono::{Datelike, Months, NaiveDate};

use crate::error::{MarketError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PriceTable {
    dates: Vec<NaiveDate>,
    labels: Vec<String>,
    prices: Vec<Vec<f64>>,
}

impl PriceTable {
    pub fn new(dates: Vec<NaiveDate>, labels: Vec<String>, prices: Vec<Vec<f64>>) -> Result<Self> {
        if labels.is_empty() {
            return Err(MarketError::InsufficientData("no asset columns".into()));
        }
        if dates.len() != prices.len() {
            return Err(MarketError::InsufficientData(format!(
                "{} dates for {} price rows",
                dates.len(),
                prices.len()
            )));
        }
        for (row, (date, p)) in dates.iter().zip(&prices).enumerate() {
            let line = row as u64 + 2;
            if p.len() != labels.len() {
                return Err(MarketError::IncompleteSeries { line });
            }
            if row > 0 && *date <= dates[row - 1] {
                return Err(MarketError::UnsortedInput { line });
            }
            if let Some((col, v)) = p
                .iter()
                .enumerate()
                .find(|(_, v)| !(v.is_finite() && **v > 0.0))
            {
                return Err(MarketError::InvalidPrice {
                    line,
                    column: labels[col].clone(),
                    value: v.to_string(),
                });
            }
        }
        Ok(Self {
            dates,
            labels,
            prices,
        })
    }

    /// Rebuilds prices from returns, starting at `initial` on `start` and stepping to successive month-ends.
    pub fn from_returns(
        labels: Vec<String>,
        start: NaiveDate,
        initial: &[f64],
        returns: &[Vec<f64>],
    ) -> Result<Self> {
        let mut dates = vec![start];
        let mut prices = vec![initial.to_vec()];
        for r in returns {
            let last = prices.last().expect("non-empty");
            prices.push(last.iter().zip(r).map(|(p, x)| p * (1.0 + x)).collect());
            let prev = *dates.last().expect("non-empty");
            dates.push(next_month_end(prev));
        }
        Self::new(dates, labels, prices)
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn prices(&self) -> &[Vec<f64>] {
        &self.prices
    }

    pub fn n_rows(&self) -> usize {
        self.prices.len()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["date".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (d, row) in self.dates.iter().zip(&self.prices) {
            let mut rec = vec![d.format("%Y-%m-%d").to_string()];
            rec.extend(row.iter().map(|p| p.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

fn next_month_end(d: NaiveDate) -> NaiveDate {
    let first = d.with_day(1).expect("day 1 exists");
    let after_next = first
        .checked_add_months(Months::new(2))
        .expect("date in range");
    after_next.pred_opt().expect("date in range")
}

pub fn ingest_prices<R: Read>(source: R) -> Result<PriceTable> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader.headers()?.clone();
    if header.len() < 2 || !header[0].eq_ignore_ascii_case("date") {
        return Err(MarketError::InsufficientData(
            "header must be `date,LABEL1,...,LABELk`".into(),
        ));
    }
    let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();

    let mut dates = Vec::new();
    let mut prices = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() || record.iter().any(str::is_empty) {
            return Err(MarketError::IncompleteSeries { line });
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d").map_err(|_| {
            MarketError::InvalidDate {
                line,
                value: record[0].to_string(),
            }
        })?;
        if dates.last().is_some_and(|prev| date <= *prev) {
            return Err(MarketError::UnsortedInput { line });
        }
        let row = record
            .iter()
            .skip(1)
            .zip(&labels)
            .map(|(cell, label)| match cell.parse::<f64>() {
                Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
                _ => Err(MarketError::InvalidPrice {
                    line,
                    column: label.clone(),
                    value: cell.to_string(),
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        dates.push(date);
        prices.push(row);
    }
    PriceTable::new(dates, labels, prices)
}

pub fn ingest_prices_path(path: impl AsRef<Path>) -> Result<PriceTable> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| MarketError::InsufficientData(format!("{}: {e}", path.as_ref().display())))?;
    ingest_prices(std::io::BufReader::new(file))
}

/// Simple period returns, one row per consecutive price pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnMatrix {
    labels: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl ReturnMatrix {
    pub fn new(labels: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(r) = rows.iter().find(|r| r.len() != labels.len()) {
            return Err(MarketError::InsufficientData(format!(
                "return row of width {} for {} labels",
                r.len(),
                labels.len()
            )));
        }
        Ok(Self { labels, rows })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_assets(&self) -> usize {
        self.labels.len()
    }

    /// Prepends a zero-return `CASH` column at index 0.
    pub fn with_cash(&self) -> Self {
        let labels = std::iter::once(CASH_LABEL.to_string())
            .chain(self.labels.iter().cloned())
            .collect();
        let rows = self
            .rows
            .iter()
            .map(|r| std::iter::once(0.0).chain(r.iter().copied()).collect())
            .collect();
        Self { labels, rows }
    }
}

pub fn to_returns(table: &PriceTable) -> Result<ReturnMatrix> {
    if table.n_rows() < 2 {
        return Err(MarketError::InsufficientData(format!(
            "need at least 2 price rows, got {}",
            table.n_rows()
        )));
    }
    let rows = table
        .prices
        .windows(2)
        .map(|w| {
            w[0].iter()
                .zip(&w[1])
                .map(|(p0, p1)| p1 / p0 - 1.0)
                .collect()
        })
        .collect();
    ReturnMatrix::new(table.labels.clone(), rows)
}
