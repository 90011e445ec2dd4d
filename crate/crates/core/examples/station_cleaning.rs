//! Load a raw station file, drop bad rows and screen stations by coverage.

use panelclim::ingest::{coverage_filter, load_stations, CoverageRule, Schema};

fn main() -> panelclim::Result<()> {
    let dir = std::env::temp_dir().join("panelclim_station_cleaning");
    std::fs::create_dir_all(&dir).map_err(|e| panelclim::Error::io(&dir, e))?;
    let path = dir.join("stations.csv");

    let mut csv = String::from("station_id,province,latitude,longitude,year,month,mean_temp,total_precip\n");
    for (id, months) in [("ON-A", 24), ("ON-B", 23), ("ON-C", 10)] {
        for m in 0..24 {
            let (t, p) = if m < months { ("4.5", "80.2") } else { ("NA", "") };
            csv += &format!("{id},ON,45.4,-75.7,{},{},{t},{p}\n", 2000 + m / 12, m % 12 + 1);
        }
    }
    csv += "ON-A,ON,45.4,-75.7,2000,1,4.5,80.2\n"; // repeated row
    csv += "ON-X,ON,95.0,-75.7,2000,1,1.0,10.0\n"; // impossible latitude
    std::fs::write(&path, csv).map_err(|e| panelclim::Error::io(&path, e))?;

    let load = load_stations(&path, &Schema::default())?;
    println!("rows read {}, kept {}", load.report.input_rows, load.report.retained_rows);
    for (reason, n) in &load.report.dropped {
        println!("  dropped {n:>3}  {reason}");
    }

    let screened = coverage_filter(&load.records, &load.meta, 2000..=2001, CoverageRule::default())?;
    for s in &screened.stations {
        println!("{}  temp {:>2}  precip {:>2}  {}", s.station_id, s.temp_months, s.precip_months, if s.retained { "kept" } else { "dropped" });
    }
    Ok(())
}
