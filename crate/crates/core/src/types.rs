//! Shared domain vocabulary: provinces, seasons and the eight seasonal
//! climate regressors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{data_err, Error};

/// The ten provinces, in alphabetical order of their postal codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Province {
    AB,
    BC,
    MB,
    NB,
    NL,
    NS,
    ON,
    PE,
    QC,
    SK,
}

impl Province {
    pub const ALL: [Province; 10] = [
        Province::AB,
        Province::BC,
        Province::MB,
        Province::NB,
        Province::NL,
        Province::NS,
        Province::ON,
        Province::PE,
        Province::QC,
        Province::SK,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Province::AB => "AB",
            Province::BC => "BC",
            Province::MB => "MB",
            Province::NB => "NB",
            Province::NL => "NL",
            Province::NS => "NS",
            Province::ON => "ON",
            Province::PE => "PE",
            Province::QC => "QC",
            Province::SK => "SK",
        }
    }
}

impl fmt::Display for Province {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Province {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_uppercase();
        let p = match key.as_str() {
            "AB" | "ALBERTA" => Province::AB,
            "BC" | "BRITISH COLUMBIA" => Province::BC,
            "MB" | "MANITOBA" => Province::MB,
            "NB" | "NEW BRUNSWICK" => Province::NB,
            "NL" | "NEWFOUNDLAND" | "NEWFOUNDLAND AND LABRADOR" => Province::NL,
            "NS" | "NOVA SCOTIA" => Province::NS,
            "ON" | "ONTARIO" => Province::ON,
            "PE" | "PEI" | "PRINCE EDWARD ISLAND" => Province::PE,
            "QC" | "QUEBEC" | "QUÉBEC" => Province::QC,
            "SK" | "SASKATCHEWAN" => Province::SK,
            _ => return Err(data_err(format!("unknown province code '{s}'"))),
        };
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Season {
    Spring,
    Summer,
    Fall,
    Winter,
}

impl Season {
    pub const ALL: [Season; 4] = [Season::Spring, Season::Summer, Season::Fall, Season::Winter];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Calendar months of the season. Winter lists December first.
    pub fn months(self) -> [u32; 3] {
        match self {
            Season::Spring => [3, 4, 5],
            Season::Summer => [6, 7, 8],
            Season::Fall => [9, 10, 11],
            Season::Winter => [12, 1, 2],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Season::Spring => "Spring",
            Season::Summer => "Summer",
            Season::Fall => "Fall",
            Season::Winter => "Winter",
        }
    }
}

impl fmt::Display for Season {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Season {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "spring" | "mam" => Ok(Season::Spring),
            "summer" | "jja" => Ok(Season::Summer),
            "fall" | "autumn" | "son" => Ok(Season::Fall),
            "winter" | "djf" => Ok(Season::Winter),
            _ => Err(data_err(format!("unknown season '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClimateKind {
    Temp,
    Precip,
}

/// One of the eight seasonal anomaly regressors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClimateVar {
    pub kind: ClimateKind,
    pub season: Season,
}

impl ClimateVar {
    /// Temperatures first, then precipitation, each in season order.
    pub const ALL: [ClimateVar; 8] = [
        ClimateVar::temp(Season::Spring),
        ClimateVar::temp(Season::Summer),
        ClimateVar::temp(Season::Fall),
        ClimateVar::temp(Season::Winter),
        ClimateVar::precip(Season::Spring),
        ClimateVar::precip(Season::Summer),
        ClimateVar::precip(Season::Fall),
        ClimateVar::precip(Season::Winter),
    ];

    pub const fn temp(season: Season) -> Self {
        ClimateVar { kind: ClimateKind::Temp, season }
    }

    pub const fn precip(season: Season) -> Self {
        ClimateVar { kind: ClimateKind::Precip, season }
    }

    pub fn index(self) -> usize {
        match self.kind {
            ClimateKind::Temp => self.season.index(),
            ClimateKind::Precip => 4 + self.season.index(),
        }
    }

    /// Column name used in designs and reports, e.g. `Winter Temp.`.
    pub fn label(self) -> String {
        match self.kind {
            ClimateKind::Temp => format!("{} Temp.", self.season),
            ClimateKind::Precip => format!("{} Precip.", self.season),
        }
    }

    /// Multiplier taking a design-scale coefficient to reporting units.
    /// Precipitation enters designs as a fraction and is reported per
    /// percentage point.
    pub fn report_scale(self) -> f64 {
        match self.kind {
            ClimateKind::Temp => 1.0,
            ClimateKind::Precip => 0.01,
        }
    }

    /// The other variable of the same season (temperature <-> precipitation).
    pub fn partner(self) -> ClimateVar {
        match self.kind {
            ClimateKind::Temp => ClimateVar::precip(self.season),
            ClimateKind::Precip => ClimateVar::temp(self.season),
        }
    }
}

impl fmt::Display for ClimateVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for ClimateVar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        for v in ClimateVar::ALL {
            let season = v.season.name().to_ascii_lowercase();
            let names: &[&str] = match v.kind {
                ClimateKind::Temp => &["temp", "t", "temperature"],
                ClimateKind::Precip => &["precip", "p", "prec", "precipitation"],
            };
            for n in names {
                if norm == format!("{season}{n}") || norm == format!("{n}{season}") {
                    return Ok(v);
                }
            }
        }
        Err(data_err(format!("unknown climate variable '{s}'")))
    }
}

/// Emission scenario labels of the published delta tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Scenario {
    Rcp26,
    Rcp45,
    Rcp85,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Rcp26, Scenario::Rcp45, Scenario::Rcp85];

    pub fn label(self) -> &'static str {
        match self {
            Scenario::Rcp26 => "RCP2.6",
            Scenario::Rcp45 => "RCP4.5",
            Scenario::Rcp85 => "RCP8.5",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl From<Scenario> for String {
    fn from(s: Scenario) -> String {
        s.label().to_string()
    }
}

impl TryFrom<String> for Scenario {
    type Error = Error;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        match norm.as_str() {
            "rcp26" => Ok(Scenario::Rcp26),
            "rcp45" => Ok(Scenario::Rcp45),
            "rcp85" => Ok(Scenario::Rcp85),
            _ => Err(data_err(format!("unknown scenario '{s}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn provinces_are_alphabetical() {
        let codes: Vec<_> = Province::ALL.iter().map(|p| p.code()).collect();
        let mut sorted = codes.clone();
        sorted.sort();
        assert_eq!(codes, sorted);
    }

    #[test]
    fn parse_labels() {
        assert_eq!("Quebec".parse::<Province>().unwrap(), Province::QC);
        assert!("YT".parse::<Province>().is_err());
        assert_eq!("rcp45".parse::<Scenario>().unwrap(), Scenario::Rcp45);
        assert_eq!("RCP8.5".parse::<Scenario>().unwrap(), Scenario::Rcp85);
        assert_eq!(
            "Winter Temp.".parse::<ClimateVar>().unwrap(),
            ClimateVar::temp(Season::Winter)
        );
        assert_eq!(
            "precip_summer".parse::<ClimateVar>().unwrap(),
            ClimateVar::precip(Season::Summer)
        );
        for v in ClimateVar::ALL {
            assert_eq!(v.label().parse::<ClimateVar>().unwrap(), v);
            assert_eq!(ClimateVar::ALL[v.index()], v);
        }
    }
}
