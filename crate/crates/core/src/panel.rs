//! Daily price panels and their split into calendar-month periods.

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PricePanel {
    tickers: Vec<String>,
    dates: Vec<NaiveDate>,
    prices: Vec<Vec<f64>>,
}

/// A rebalancing period: rows `start..=end` of the panel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Period {
    pub start: usize,
    pub end: usize,
    pub first_date: NaiveDate,
    pub last_date: NaiveDate,
}

impl PricePanel {
    pub fn new(tickers: Vec<String>, dates: Vec<NaiveDate>, prices: Vec<Vec<f64>>) -> Result<Self> {
        if tickers.is_empty() {
            return Err(Error::PriceData("no assets".into()));
        }
        if dates.len() != prices.len() {
            return Err(Error::PriceData(format!("{} dates for {} price rows", dates.len(), prices.len())));
        }
        for (t, row) in prices.iter().enumerate() {
            if row.len() != tickers.len() {
                return Err(Error::PriceData(format!(
                    "row {t} has {} prices for {} assets",
                    row.len(),
                    tickers.len()
                )));
            }
            if let Some(j) = row.iter().position(|&p| !(p > 0.0 && p.is_finite())) {
                return Err(Error::PriceData(format!("row {t}: price of {} is not positive", tickers[j])));
            }
        }
        if let Some(t) = dates.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::PriceData(format!(
                "dates not strictly increasing at row {}: {} after {}",
                t + 1,
                dates[t + 1],
                dates[t]
            )));
        }
        Ok(PricePanel { tickers, dates, prices })
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn prices(&self) -> &[Vec<f64>] {
        &self.prices
    }

    pub fn m(&self) -> usize {
        self.tickers.len()
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Daily log-returns, one row per consecutive pair of dates.
    pub fn log_returns(&self) -> Vec<Vec<f64>> {
        self.prices
            .windows(2)
            .map(|w| w[1].iter().zip(&w[0]).map(|(b, a)| (b / a).ln()).collect())
            .collect()
    }

    /// Rows `range`, as a new panel.
    pub fn rows(&self, range: std::ops::Range<usize>) -> PricePanel {
        PricePanel {
            tickers: self.tickers.clone(),
            dates: self.dates[range.clone()].to_vec(),
            prices: self.prices[range].to_vec(),
        }
    }

    /// Index of the first row dated on or after `date` (`len()` if none).
    pub fn position_of(&self, date: NaiveDate) -> usize {
        self.dates.partition_point(|d| *d < date)
    }

    pub fn scaled(&self, factor: f64) -> Result<PricePanel> {
        let prices = self.prices.iter().map(|r| r.iter().map(|p| p * factor).collect()).collect();
        PricePanel::new(self.tickers.clone(), self.dates.clone(), prices)
    }

    /// Calendar-month periods covering the panel in order.
    pub fn monthly_periods(&self) -> Vec<Period> {
        let mut periods: Vec<Period> = Vec::new();
        for (t, d) in self.dates.iter().enumerate() {
            match periods.last_mut() {
                Some(p) if (p.first_date.year(), p.first_date.month()) == (d.year(), d.month()) => {
                    p.end = t;
                    p.last_date = *d;
                }
                _ => periods.push(Period { start: t, end: t, first_date: *d, last_date: *d }),
            }
        }
        periods
    }

    /// Opening prices `S_b` of a period (first trading day).
    pub fn s_begin(&self, period: &Period) -> &[f64] {
        &self.prices[period.start]
    }

    /// Closing prices `S_e` of a period (last trading day).
    pub fn s_end(&self, period: &Period) -> &[f64] {
        &self.prices[period.end]
    }
}
