//! Writes the synthetic 20-asset price fixture and ingests it into rolling
//! correlation matrices.
//!
//! cargo run --example price_fixture -- [OUT.csv]

use denise::harness::{ingest_correlations, synthetic_prices, IngestConfig, PriceFixtureConfig};

fn main() -> denise::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "prices_fixture.csv".into());
    let table = synthetic_prices(&PriceFixtureConfig::default());
    table.write_csv(&out)?;
    println!("{} days x {} assets -> {out}", table.dates.len(), table.assets.len());

    let r = ingest_correlations(&IngestConfig::new(&out))?;
    println!(
        "windows: {} train, {} test, {} rejected, {} purged at the split",
        r.train.len(),
        r.test.len(),
        r.rejected,
        r.purged
    );
    if let (Some(a), Some(b)) = (r.train_windows.last(), r.test_windows.first()) {
        println!("last train window ends {}, first test window starts {}", a.end_date, b.start_date);
    }
    Ok(())
}
