#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const ALL_POLLUTANTS: [&str; 6] = ["NO2", "O3", "CO", "SO2", "PM2.5", "PM10"];

/// Sensor CSV with a reading every 20 minutes: a daily cycle plus noise per
/// pollutant, and roughly `gap_rate` of the cells left blank.
pub fn sensor_csv(path: &Path, hours: usize, pollutants: &[&str], gap_rate: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut s = String::from("timestamp");
    for p in pollutants {
        s.push(',');
        s.push_str(p);
    }
    s.push('\n');
    let start = 1_704_067_200i64; // 2024-01-01T00:00:00Z
    for i in 0..hours * 3 {
        let ts = chrono_like(start + 1200 * i as i64);
        s.push_str(&ts);
        let hour = i as f64 / 3.0;
        for (k, _) in pollutants.iter().enumerate() {
            s.push(',');
            if rng.gen::<f64>() < gap_rate {
                continue;
            }
            let base = 20.0 + 10.0 * k as f64;
            let cycle = 6.0 * (2.0 * std::f64::consts::PI * hour / 24.0 + k as f64).sin();
            let v: f64 = base + cycle + noise.sample(&mut rng);
            let _ = write!(s, "{:.3}", v.max(0.0));
        }
        s.push('\n');
    }
    std::fs::write(path, s).unwrap();
}

/// Same layout as [`sensor_csv`] with every value equal to `value`.
pub fn constant_csv(path: &Path, hours: usize, pollutant: &str, value: f64) {
    let mut s = format!("timestamp,{pollutant}\n");
    let start = 1_704_067_200i64;
    for i in 0..hours * 3 {
        let _ = writeln!(s, "{},{value}", chrono_like(start + 1200 * i as i64));
    }
    std::fs::write(path, s).unwrap();
}

/// RFC 3339 UTC timestamp for a unix time, without pulling in a date crate.
fn chrono_like(unix: i64) -> String {
    let days = unix.div_euclid(86_400);
    let secs = unix.rem_euclid(86_400);
    // civil-from-days, valid for the proleptic Gregorian calendar
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = doy - (153 * mp + 2) / 5 + 1;
    let m = if mp < 10 { mp + 3 } else { mp - 9 };
    let y = yoe + era * 400 + i64::from(m <= 2);
    format!(
        "{y:04}-{m:02}-{d:02}T{:02}:{:02}:{:02}Z",
        secs / 3600,
        secs % 3600 / 60,
        secs % 60
    )
}

/// Small, fast settings shared by the CLI tests.
pub fn small_config(dir: &Path, raw: &Path, pollutants: &[&str], horizons: &[&str], seed: u64) -> PathBuf {
    let list = |v: &[&str]| v.iter().map(|s| format!("\"{s}\"")).collect::<Vec<_>>().join(", ");
    let body = format!(
        r#"seed = {seed}
pollutants = [{}]
horizons = [{}]

[data]
raw = "{}"
imputation = "linear"

[model]
lag = 24

[gbdt]
iterations = 20
depth = 3
learning_rate = 0.2
bins = 16

[conformal]
alpha = 0.1
window = 200
calibration_points = 48
"#,
        list(pollutants),
        list(horizons),
        raw.display()
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

pub fn wavecat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wavecat"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `root`, relative path → contents, sorted by path.
pub fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn timestamps_format_like_rfc3339() {
    assert_eq!(chrono_like(1_704_067_200), "2024-01-01T00:00:00Z");
    assert_eq!(chrono_like(1_709_210_096), "2024-02-29T12:34:56Z");
}
