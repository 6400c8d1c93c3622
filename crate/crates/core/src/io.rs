//! CSV and JSON input/output.
//!
//! Price files have a `date,<ticker>,...` header, ISO-8601 dates and one row
//! per trading day. Numbers are written with Rust's shortest round-trip
//! formatting, so every value parses back to the same `f64`.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::Serialize;

use crate::backtest::{BacktestLedger, SweepRow};
use crate::error::{Error, Result};
use crate::panel::PricePanel;

pub fn load_prices(path: impl AsRef<Path>) -> Result<PricePanel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::PriceData(format!("{}: {e}", path.display())))?;
    read_prices(file)
}

pub fn read_prices(reader: impl std::io::Read) -> Result<PricePanel> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 2 || !header[0].trim().eq_ignore_ascii_case("date") {
        return Err(Error::PriceData("line 1: header must be date,<ticker>,...".into()));
    }
    let tickers: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();

    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut prices = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let fail = |msg: String| Error::PriceData(format!("line {line}: {msg}"));
        if record.len() != header.len() {
            return Err(fail(format!("{} fields, expected {}", record.len(), header.len())));
        }
        let date = NaiveDate::parse_from_str(record[0].trim(), "%Y-%m-%d")
            .map_err(|e| fail(format!("bad date {:?}: {e}", &record[0])))?;
        if let Some(prev) = dates.last() {
            if date <= *prev {
                return Err(fail(format!("date {date} is not after {prev}")));
            }
        }
        let mut row = Vec::with_capacity(tickers.len());
        for (j, field) in record.iter().skip(1).enumerate() {
            let field = field.trim();
            if field.is_empty() {
                return Err(fail(format!("missing price for {}", tickers[j])));
            }
            let value: f64 = field.parse().map_err(|_| fail(format!("bad price {field:?} for {}", tickers[j])))?;
            if !(value > 0.0 && value.is_finite()) {
                return Err(fail(format!("price {value} for {} is not positive", tickers[j])));
            }
            row.push(value);
        }
        dates.push(date);
        prices.push(row);
    }
    PricePanel::new(tickers, dates, prices)
}

pub fn write_prices(path: impl AsRef<Path>, panel: &PricePanel) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["date".to_string()];
    header.extend(panel.tickers().iter().cloned());
    w.write_record(&header)?;
    for (d, row) in panel.dates().iter().zip(panel.prices()) {
        let mut rec = vec![d.format("%Y-%m-%d").to_string()];
        rec.extend(row.iter().map(|p| p.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `period,wealth,return_pct,x_1..x_m,q,binding`.
pub fn write_ledger_csv(writer: impl Write, ledger: &BacktestLedger) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let m = ledger.tickers.len();
    let mut header: Vec<String> = ["period", "wealth", "return_pct"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=m).map(|j| format!("x_{j}")));
    header.extend(["q".to_string(), "binding".to_string()]);
    w.write_record(&header)?;
    for row in &ledger.rows {
        let mut rec = vec![row.period.to_string(), row.wealth.to_string(), row.return_pct.to_string()];
        rec.extend(row.x.iter().map(|x| x.to_string()));
        rec.push(row.q.to_string());
        rec.push(row.binding.as_str().to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `k_star,W_1..W_tau,return_pct`; periods a failed run never reached are empty.
pub fn write_summary_csv(writer: impl Write, rows: &[SweepRow], tau: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["k_star".to_string()];
    header.extend((1..=tau).map(|l| format!("W_{l}")));
    header.push("return_pct".into());
    w.write_record(&header)?;
    for row in rows {
        let mut rec = vec![row.k_star.to_string()];
        rec.extend((0..tau).map(|l| opt(row.wealth.get(l).copied())));
        rec.push(opt(row.return_pct));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON followed by a newline.
pub fn write_json<T: Serialize + ?Sized>(mut writer: impl Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    Ok(())
}

pub fn write_json_file<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    write_json(File::create(path)?, value)
}

pub fn create_file(path: impl AsRef<Path>) -> Result<File> {
    Ok(File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(s: &str) -> Result<PricePanel> {
        read_prices(s.as_bytes())
    }

    #[test]
    fn two_rows() {
        let p = read("date,ZM,TSLA\n2020-08-03,250.5,297.0\n2020-08-04,251,300.25\n").unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.tickers(), &["ZM".to_string(), "TSLA".to_string()]);
        assert_eq!(p.prices()[1], vec![251.0, 300.25]);
    }

    #[test]
    fn shuffled_dates_name_the_line() {
        let e = read("date,A\n2020-08-03,1\n2020-08-05,2\n2020-08-04,3\n2020-08-06,4\n").unwrap_err();
        assert!(e.to_string().contains("line 4"), "{e}");
    }

    #[test]
    fn missing_and_bad_prices() {
        let e = read("date,A,B\n2020-08-03,1,2\n2020-08-04,,2\n").unwrap_err();
        assert!(e.to_string().contains("line 3") && e.to_string().contains("missing"), "{e}");
        let e = read("date,A\n2020-08-03,-1\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        let e = read("date,A\n2020-08-03,abc\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        let e = read("date,A\n2020-08-03,1,2\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        assert!(read("day,A\n2020-08-03,1\n").is_err());
        assert!(read("date,A\n03/08/2020,1\n").is_err());
    }

    #[test]
    fn prices_round_trip() {
        let src = "date,A,B\n2020-08-03,0.1,123456.789012345\n2020-08-04,3.0000000000000004,1e-7\n";
        let p = read(src).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        write_prices(&path, &p).unwrap();
        assert_eq!(load_prices(&path).unwrap(), p);
    }

    #[test]
    fn shortest_formatting_round_trips() {
        for v in [0.1 + 0.2, 1.0 / 3.0, 7.725_400_000_000_001, 1e-300, 123456789.123456789] {
            assert_eq!(v.to_string().parse::<f64>().unwrap(), v);
        }
    }
}
