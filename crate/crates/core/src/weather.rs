//! Annual hourly weather: CSV/EPW ingestion, synthetic climates and
//! Ornstein-Uhlenbeck style perturbation of the outdoor drybulb.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Stream;

pub const HOURS_PER_YEAR: usize = 8760;
pub const SECONDS_PER_YEAR: f64 = 365.0 * 86_400.0;

const DAYS_IN_MONTH: [u8; 12] = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];

pub const CSV_HEADER: [&str; 9] = [
    "month",
    "day",
    "hour",
    "drybulb_C",
    "rh_pct",
    "wind_speed_ms",
    "wind_dir_deg",
    "dir_norm_rad_Wm2",
    "diff_horiz_rad_Wm2",
];

#[derive(Debug, Error)]
pub enum WeatherError {
    #[error("weather file not found: {0}")]
    MissingFile(PathBuf),
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("expected {expected} hourly rows, found {found}")]
    WrongRowCount { found: usize, expected: usize },
    #[error("not an EPW file: first line must begin with LOCATION")]
    NotEpw,
    #[error("simulation time {0} s is outside [0, 31536000)")]
    OutOfRange(f64),
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },
    #[error("unknown built-in climate '{0}'")]
    UnknownClimate(String),
    #[error("I/O error on weather file: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

/// Calendar position of a 0-based hour of a non-leap year.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CalendarHour {
    pub month: u8,
    pub day: u8,
    pub hour: u8,
    /// 1-based day of the year.
    pub day_of_year: u16,
}

pub fn calendar_of_hour(hour_index: usize) -> CalendarHour {
    let hour_index = hour_index % HOURS_PER_YEAR;
    let doy0 = hour_index / 24;
    let mut remaining = doy0 as u16;
    let mut month = 0;
    while remaining >= DAYS_IN_MONTH[month] as u16 {
        remaining -= DAYS_IN_MONTH[month] as u16;
        month += 1;
    }
    CalendarHour {
        month: month as u8 + 1,
        day: remaining as u8 + 1,
        hour: (hour_index % 24) as u8,
        day_of_year: doy0 as u16 + 1,
    }
}

/// 1-based day of year for a (month, day) pair, or `None` if invalid.
pub fn day_of_year(month: u8, day: u8) -> Option<u16> {
    if !(1..=12).contains(&month) || day == 0 || day > DAYS_IN_MONTH[month as usize - 1] {
        return None;
    }
    let before: u16 = DAYS_IN_MONTH[..month as usize - 1].iter().map(|&d| d as u16).sum();
    Some(before + day as u16)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherRecord {
    pub month: u8,
    pub day: u8,
    pub hour: u8,
    pub drybulb: f64,
    pub rel_humidity: f64,
    pub wind_speed: f64,
    pub wind_dir: f64,
    pub direct_normal_rad: f64,
    pub diffuse_horiz_rad: f64,
}

impl WeatherRecord {
    fn check(&self) -> Result<(), String> {
        if !(0.0..=100.0).contains(&self.rel_humidity) {
            return Err(format!("relative humidity {} outside [0, 100]", self.rel_humidity));
        }
        if !(self.wind_speed >= 0.0) {
            return Err(format!("negative wind speed {}", self.wind_speed));
        }
        if !(0.0..=360.0).contains(&self.wind_dir) {
            return Err(format!("wind direction {} outside [0, 360]", self.wind_dir));
        }
        if !(self.direct_normal_rad >= 0.0) || !(self.diffuse_horiz_rad >= 0.0) {
            return Err("negative radiation".to_string());
        }
        if !self.drybulb.is_finite() || !(-90.0..=70.0).contains(&self.drybulb) {
            return Err(format!("drybulb {} outside [-90, 70] C", self.drybulb));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherSeries {
    pub location_name: String,
    pub records: Vec<WeatherRecord>,
    pub mean_annual_temp: f64,
    pub mean_annual_humidity: f64,
}

impl WeatherSeries {
    /// Validates the 8760-record chronology and computes the annual means.
    pub fn new(location_name: impl Into<String>, records: Vec<WeatherRecord>) -> Result<Self, WeatherError> {
        if records.len() != HOURS_PER_YEAR {
            return Err(WeatherError::WrongRowCount {
                found: records.len(),
                expected: HOURS_PER_YEAR,
            });
        }
        for (i, r) in records.iter().enumerate() {
            let cal = calendar_of_hour(i);
            if (r.month, r.day, r.hour) != (cal.month, cal.day, cal.hour) {
                return Err(WeatherError::Invalid {
                    what: "chronology",
                    reason: format!(
                        "record {i} is {}/{} {}h, expected {}/{} {}h",
                        r.month, r.day, r.hour, cal.month, cal.day, cal.hour
                    ),
                });
            }
            r.check().map_err(|reason| WeatherError::Invalid { what: "record", reason })?;
        }
        let mut series = Self {
            location_name: location_name.into(),
            records,
            mean_annual_temp: 0.0,
            mean_annual_humidity: 0.0,
        };
        series.refresh_means();
        Ok(series)
    }

    fn refresh_means(&mut self) {
        let n = self.records.len() as f64;
        self.mean_annual_temp = self.records.iter().map(|r| r.drybulb).sum::<f64>() / n;
        self.mean_annual_humidity = self.records.iter().map(|r| r.rel_humidity).sum::<f64>() / n;
    }

    /// Weather at `sim_time` seconds after Jan 1 00:00.
    ///
    /// Continuous fields are interpolated linearly between the bracketing
    /// hours (the last hour brackets with Jan 1 00:00); wind direction takes
    /// the shorter arc. Calendar fields come from the earlier hour.
    pub fn sample_at(&self, sim_time: f64) -> Result<WeatherRecord, WeatherError> {
        if !(0.0..SECONDS_PER_YEAR).contains(&sim_time) {
            return Err(WeatherError::OutOfRange(sim_time));
        }
        let hours = sim_time / 3600.0;
        let idx = (hours.floor() as usize).min(HOURS_PER_YEAR - 1);
        let frac = hours - idx as f64;
        let a = &self.records[idx];
        if frac == 0.0 {
            return Ok(*a);
        }
        let b = &self.records[(idx + 1) % HOURS_PER_YEAR];
        let lerp = |x: f64, y: f64| x + frac * (y - x);
        let turn = (b.wind_dir - a.wind_dir + 540.0).rem_euclid(360.0) - 180.0;
        Ok(WeatherRecord {
            month: a.month,
            day: a.day,
            hour: a.hour,
            drybulb: lerp(a.drybulb, b.drybulb),
            rel_humidity: lerp(a.rel_humidity, b.rel_humidity),
            wind_speed: lerp(a.wind_speed, b.wind_speed),
            wind_dir: (a.wind_dir + frac * turn).rem_euclid(360.0),
            direct_normal_rad: lerp(a.direct_normal_rad, b.direct_normal_rad),
            diffuse_horiz_rad: lerp(a.diffuse_horiz_rad, b.diffuse_horiz_rad),
        })
    }
}

fn open(path: &Path) -> Result<File, WeatherError> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => WeatherError::MissingFile(path.to_path_buf()),
        _ => WeatherError::Io(e),
    })
}

fn location_from_path(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "unknown".to_string())
}

/// Reads the 9-column hourly CSV (header row, then 8760 rows).
pub fn parse_weather_csv(path: &Path) -> Result<WeatherSeries, WeatherError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let header = reader.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(WeatherError::MalformedRow {
            line: 1,
            reason: format!("header must be `{}`", CSV_HEADER.join(",")),
        });
    }
    let mut records = Vec::with_capacity(HOURS_PER_YEAR);
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| WeatherError::MalformedRow { line, reason: e.to_string() })?;
        if row.len() != 9 {
            return Err(WeatherError::MalformedRow {
                line,
                reason: format!("expected 9 fields, found {}", row.len()),
            });
        }
        let num = |k: usize| -> Result<f64, WeatherError> {
            row[k].parse::<f64>().map_err(|_| WeatherError::MalformedRow {
                line,
                reason: format!("field {} is not a number: {:?}", CSV_HEADER[k], &row[k]),
            })
        };
        let int = |k: usize| -> Result<u8, WeatherError> {
            row[k].parse::<u8>().map_err(|_| WeatherError::MalformedRow {
                line,
                reason: format!("field {} is not an integer: {:?}", CSV_HEADER[k], &row[k]),
            })
        };
        let record = WeatherRecord {
            month: int(0)?,
            day: int(1)?,
            hour: int(2)?,
            drybulb: num(3)?,
            rel_humidity: num(4)?,
            wind_speed: num(5)?,
            wind_dir: num(6)?,
            direct_normal_rad: num(7)?,
            diffuse_horiz_rad: num(8)?,
        };
        record.check().map_err(|reason| WeatherError::MalformedRow { line, reason })?;
        records.push(record);
    }
    WeatherSeries::new(location_from_path(path), records)
}

pub fn write_weather_csv(series: &WeatherSeries, path: &Path) -> Result<(), WeatherError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in &series.records {
        w.write_record([
            r.month.to_string(),
            r.day.to_string(),
            r.hour.to_string(),
            r.drybulb.to_string(),
            r.rel_humidity.to_string(),
            r.wind_speed.to_string(),
            r.wind_dir.to_string(),
            r.direct_normal_rad.to_string(),
            r.diffuse_horiz_rad.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// EPW data-row field positions (0-based).
const EPW_MONTH: usize = 1;
const EPW_DAY: usize = 2;
const EPW_HOUR: usize = 3;
const EPW_DRYBULB: usize = 6;
const EPW_RH: usize = 8;
const EPW_DIRECT_NORMAL: usize = 14;
const EPW_DIFFUSE_HORIZ: usize = 15;
const EPW_WIND_DIR: usize = 20;
const EPW_WIND_SPEED: usize = 21;
const EPW_HEADER_LINES: usize = 8;

/// Imports an EnergyPlus weather file, keeping drybulb, humidity, wind and
/// beam/diffuse radiation. EPW hours run 1..=24 and map to 0..=23.
pub fn import_epw(path: &Path) -> Result<WeatherSeries, WeatherError> {
    let reader = BufReader::new(open(path)?);
    let mut lines = reader.lines().enumerate();
    let location = match lines.next() {
        Some((_, first)) => {
            let first = first?;
            if !first.trim_start().starts_with("LOCATION") {
                return Err(WeatherError::NotEpw);
            }
            first.split(',').nth(1).map(|s| s.trim().to_string()).filter(|s| !s.is_empty())
        }
        None => return Err(WeatherError::NotEpw),
    };

    let mut records = Vec::with_capacity(HOURS_PER_YEAR);
    for (i, line) in lines {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        // Header lines (DESIGN CONDITIONS ... DATA PERIODS) start with a keyword,
        // data rows with the year.
        let keyword = line.split(',').next().is_none_or(|f| f.trim().parse::<i32>().is_err());
        if records.is_empty() && keyword && lineno <= EPW_HEADER_LINES {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() <= EPW_WIND_SPEED {
            return Err(WeatherError::MalformedRow {
                line: lineno,
                reason: format!("expected at least {} fields, found {}", EPW_WIND_SPEED + 1, fields.len()),
            });
        }
        let num = |k: usize| -> Result<f64, WeatherError> {
            fields[k].trim().parse::<f64>().map_err(|_| WeatherError::MalformedRow {
                line: lineno,
                reason: format!("field {k} is not a number: {:?}", fields[k]),
            })
        };
        let hour = num(EPW_HOUR)?;
        if !(1.0..=24.0).contains(&hour) || hour.fract() != 0.0 {
            return Err(WeatherError::MalformedRow {
                line: lineno,
                reason: format!("EPW hour {hour} outside 1..=24"),
            });
        }
        let record = WeatherRecord {
            month: num(EPW_MONTH)? as u8,
            day: num(EPW_DAY)? as u8,
            hour: hour as u8 - 1,
            drybulb: num(EPW_DRYBULB)?,
            rel_humidity: num(EPW_RH)?,
            wind_speed: num(EPW_WIND_SPEED)?,
            wind_dir: num(EPW_WIND_DIR)?,
            direct_normal_rad: num(EPW_DIRECT_NORMAL)?,
            diffuse_horiz_rad: num(EPW_DIFFUSE_HORIZ)?,
        };
        record
            .check()
            .map_err(|reason| WeatherError::MalformedRow { line: lineno, reason })?;
        records.push(record);
    }
    WeatherSeries::new(location.unwrap_or_else(|| location_from_path(path)), records)
}

/// Parameters of a synthetic sinusoidal climate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClimateSpec {
    pub name: String,
    pub annual_mean: f64,
    pub annual_amplitude: f64,
    pub diurnal_amplitude: f64,
    pub humidity_mean: f64,
    /// Day of year of the warmest day.
    pub phase_day: f64,
}

impl ClimateSpec {
    pub fn validate(&self) -> Result<(), WeatherError> {
        let bad = |reason: String| Err(WeatherError::Invalid { what: "climate spec", reason });
        if !(self.annual_amplitude >= 0.0) || !(self.diurnal_amplitude >= 0.0) {
            return bad("amplitudes must be non-negative".into());
        }
        if !(0.0..=100.0).contains(&self.humidity_mean) {
            return bad(format!("humidity_mean {} outside [0, 100]", self.humidity_mean));
        }
        if !self.annual_mean.is_finite() || !self.phase_day.is_finite() {
            return bad("non-finite mean or phase".into());
        }
        Ok(())
    }
}

const DRYBULB_JITTER_STD: f64 = 0.3;

/// Deterministic synthetic year:
/// `drybulb = mean + A_y cos(2pi (doy - phase)/365) + A_d cos(2pi (hour - 15)/24) + jitter`.
pub fn synthesize_climate(spec: &ClimateSpec, seed: u64) -> Result<WeatherSeries, WeatherError> {
    use std::f64::consts::PI;
    spec.validate()?;
    let mut rng = Stream::new(seed);
    let mut records = Vec::with_capacity(HOURS_PER_YEAR);
    let mut wind_level = 0.0_f64;
    for i in 0..HOURS_PER_YEAR {
        let cal = calendar_of_hour(i);
        let doy = cal.day_of_year as f64;
        let hour = cal.hour as f64;
        let seasonal = libm::cos(2.0 * PI * (doy - spec.phase_day) / 365.0);
        let diurnal = libm::cos(2.0 * PI * (hour - 15.0) / 24.0);
        let drybulb = spec.annual_mean
            + spec.annual_amplitude * seasonal
            + spec.diurnal_amplitude * diurnal
            + DRYBULB_JITTER_STD * rng.normal();

        // Humidity runs opposite to the daily temperature swing.
        let rh = (spec.humidity_mean - 8.0 * diurnal + 3.0 * rng.normal()).clamp(5.0, 100.0);

        wind_level = 0.95 * wind_level + 0.3 * rng.normal();
        let wind_speed = (3.5 + wind_level).max(0.0);
        let wind_dir = (225.0 + 40.0 * wind_level + 15.0 * rng.normal()).rem_euclid(360.0);

        // Day length swings 12 +/- 3 h around the June solstice.
        let day_length = 12.0 + 3.0 * libm::cos(2.0 * PI * (doy - 172.0) / 365.0);
        let sunrise = 12.0 - day_length / 2.0;
        let t = hour + 0.5 - sunrise;
        let sun = if t > 0.0 && t < day_length {
            libm::sin(PI * t / day_length)
        } else {
            0.0
        };
        let clearness = 0.55 + 0.35 * rng.uniform();
        let direct_normal_rad = 850.0 * sun * clearness;
        let diffuse_horiz_rad = 180.0 * sun * (1.2 - clearness);

        records.push(WeatherRecord {
            month: cal.month,
            day: cal.day,
            hour: cal.hour,
            drybulb,
            rel_humidity: rh,
            wind_speed,
            wind_dir,
            direct_normal_rad,
            diffuse_horiz_rad,
        });
    }
    WeatherSeries::new(spec.name.clone(), records)
}

/// Built-in climate analogues: `(key, spec, fixed seed)`.
///
/// Annual means and humidities follow the published TMY3 means for New York
/// JFK (mixed), Tucson Davis-Monthan (hot) and Port Angeles (cool);
/// amplitudes and phases are chosen for plausibility.
pub fn builtin_climates() -> Vec<(&'static str, ClimateSpec, u64)> {
    vec![
        (
            "mixed",
            ClimateSpec {
                name: "New York (synthetic mixed humid)".into(),
                annual_mean: 12.6,
                annual_amplitude: 11.5,
                diurnal_amplitude: 4.0,
                humidity_mean: 68.5,
                phase_day: 200.0,
            },
            0x4E59,
        ),
        (
            "hot",
            ClimateSpec {
                name: "Arizona (synthetic hot dry)".into(),
                annual_mean: 21.7,
                annual_amplitude: 9.5,
                diurnal_amplitude: 7.5,
                humidity_mean: 34.9,
                phase_day: 195.0,
            },
            0x415A,
        ),
        (
            "cool",
            ClimateSpec {
                name: "Washington (synthetic cool marine)".into(),
                annual_mean: 9.3,
                annual_amplitude: 6.0,
                diurnal_amplitude: 3.5,
                humidity_mean: 81.1,
                phase_day: 215.0,
            },
            0x5741,
        ),
    ]
}

/// Synthesizes the built-in climate named `key` (`mixed`, `hot`, `cool`).
pub fn builtin_weather(key: &str) -> Result<WeatherSeries, WeatherError> {
    let (_, spec, seed) = builtin_climates()
        .into_iter()
        .find(|(k, _, _)| *k == key)
        .ok_or_else(|| WeatherError::UnknownClimate(key.to_string()))?;
    synthesize_climate(&spec, seed)
}

/// Parameters of the drybulb perturbation process.
///
/// The deviation from the recorded temperature follows
/// `d(0) = 0`, `d(t+1) = (1 - mu) d(t) - tau + sigma * xi(t)` with standard
/// normal `xi`, one step per hour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    pub sigma: f64,
    pub mu: f64,
    pub tau: f64,
}

impl OuParams {
    pub fn validate(&self) -> Result<(), WeatherError> {
        if !(self.sigma >= 0.0) {
            return Err(WeatherError::Invalid {
                what: "OU params",
                reason: format!("sigma {} must be >= 0", self.sigma),
            });
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(WeatherError::Invalid {
                what: "OU params",
                reason: format!("mu {} must lie in [0, 1]", self.mu),
            });
        }
        if !self.tau.is_finite() {
            return Err(WeatherError::Invalid { what: "OU params", reason: "tau must be finite".into() });
        }
        Ok(())
    }

    /// Stationary standard deviation of the deviation process (tau = 0),
    /// `sigma / sqrt(1 - (1 - mu)^2)`; infinite for `mu = 0`.
    pub fn stationary_std(&self) -> f64 {
        let a = 1.0 - self.mu;
        self.sigma / (1.0 - a * a).sqrt()
    }
}

/// First `n` values of the deviation process.
pub fn ou_deviations(params: &OuParams, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = Stream::new(seed);
    let decay = 1.0 - params.mu;
    let mut d = 0.0;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(d);
        d = decay * d - params.tau + params.sigma * rng.normal();
    }
    out
}

/// Adds the deviation process to the drybulb column; every other field is
/// left untouched.
pub fn apply_ou_noise(base: &WeatherSeries, params: &OuParams, seed: u64) -> Result<WeatherSeries, WeatherError> {
    params.validate()?;
    let deviations = ou_deviations(params, base.records.len(), seed);
    let mut out = base.clone();
    for (r, d) in out.records.iter_mut().zip(deviations) {
        if d != 0.0 {
            r.drybulb += d;
        }
    }
    out.refresh_means();
    Ok(out)
}
