//! Monthly station records to seasonal means and baseline anomalies.

use panelclim::features::{anomaly_panel, seasonalize, Weighting, WinterConvention};
use panelclim::ingest::{StationMeta, StationRecord};
use panelclim::types::Province;

fn main() -> panelclim::Result<()> {
    let meta: Vec<StationMeta> = ["MB-1", "MB-2"]
        .iter()
        .map(|id| StationMeta {
            station_id: id.to_string(),
            province: Province::MB,
            latitude: 49.9,
            longitude: -97.1,
            subregion_id: None,
            subregion_population: None,
        })
        .collect();

    // a warming winter and a wetter summer over five years
    let mut records = Vec::new();
    for (k, m) in meta.iter().enumerate() {
        for year in 2000..=2004 {
            for month in 1..=12u32 {
                let seasonal = -20.0 * (std::f64::consts::PI * f64::from(month) / 6.0).cos();
                records.push(StationRecord {
                    station_id: m.station_id.clone(),
                    province: Province::MB,
                    latitude: m.latitude,
                    longitude: m.longitude,
                    year,
                    month,
                    mean_temp: Some(seasonal + 0.3 * f64::from(year - 2000) + k as f64),
                    total_precip: Some(50.0 + if (6..=8).contains(&month) { 5.0 * f64::from(year - 2000) } else { 0.0 }),
                });
            }
        }
    }

    let sc = seasonalize(&records, &meta, Weighting::Unweighted, WinterConvention::SameYear)?;
    let panel = anomaly_panel(&sc, 2000..=2004, Weighting::Unweighted)?;
    println!("{:<7} {:>5} {:>9} {:>10}", "season", "year", "temp (C)", "precip (%)");
    for c in &panel.cells {
        println!("{:<7} {:>5} {:>9.3} {:>10.3}", c.season.to_string(), c.year, c.temp_anomaly, c.precip_anomaly);
    }
    Ok(())
}
