//! Regenerates `data/sample_prices.csv`: a synthetic two-asset daily panel
//! (Feb 2020 to Jan 2021, weekdays) with ZM/TSLA-like levels and trends.
//!
//! cargo run -p jumpdcaa-core --example generate_sample

use chrono::{Datelike, NaiveDate, Weekday};
use jumpdcaa::io::write_prices;
use jumpdcaa::model::{JumpLaw, MarketSpec, ModelParams};
use jumpdcaa::panel::PricePanel;
use jumpdcaa::simulator::{path_rng, simulate_prices};

const SEED: u64 = 2020;

fn main() -> jumpdcaa::Result<()> {
    let mut dates = Vec::new();
    let mut d = NaiveDate::from_ymd_opt(2020, 2, 3).unwrap();
    let end = NaiveDate::from_ymd_opt(2021, 1, 29).unwrap();
    while d <= end {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            dates.push(d);
        }
        d = d.succ_opt().unwrap();
    }

    // Monthly units: 21 trading days per period.
    let up = JumpLaw::Normal { mean: 0.12, variance: 0.0025 };
    let spec = MarketSpec::without_jumps(
        0.03,
        vec![0.16, 0.2],
        vec![0.2, 0.24],
        vec![vec![1.0, 0.35], vec![0.35, 1.0]],
    )
    .with_jumps(0.0, vec![JumpLaw::ZERO; 2], vec![0.2, 0.2], vec![up, up]);
    let params = ModelParams::new(spec)?;
    let prices: Vec<Vec<f64>> = simulate_prices(&params, &[110.0, 150.0], 21, dates.len() - 1, &mut path_rng(SEED, 0))?
        .into_iter()
        .map(|row| row.into_iter().map(|p| (p * 100.0).round() / 100.0).collect())
        .collect();
    let panel = PricePanel::new(vec!["ZM".into(), "TSLA".into()], dates, prices)?;

    let out = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/sample_prices.csv");
    write_prices(&out, &panel)?;
    println!("{} rows -> {}", panel.len(), out.display());
    Ok(())
}
