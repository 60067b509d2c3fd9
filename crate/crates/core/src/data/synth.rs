//! Deterministic synthetic weather generator: a desk-scale stand-in for
//! multi-year station archives, with seasonal/diurnal structure, an
//! autoregressive storm process driving humidity and rainfall, and a
//! configurable fraction of missing cells.

use chrono::NaiveDateTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::WeatherRecord;
use crate::error::{Error, Result};

const STATIONS: [&str; 4] = ["ROC", "BUF", "SYR", "ALB"];

fn station_name(region: usize) -> String {
    STATIONS
        .get(region)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("S{region:02}"))
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn noise(rng: &mut ChaCha8Rng) -> f64 {
    rng.random::<f64>() * 2.0 - 1.0
}

/// Generate per-region observation streams.
///
/// Rainfall is zero-inflated: a shared storm process (AR with random
/// kicks) raises humidity, drops pressure, and produces positive
/// precipitation once it clears a threshold, so the next hour's rain is
/// predictable from the current features. Output is a pure function of
/// `(hours, seed, regions, missing_frac)`.
pub fn generate_synthetic(
    hours: usize,
    seed: u64,
    regions: usize,
    missing_frac: f64,
) -> Result<Vec<Vec<WeatherRecord>>> {
    if hours < 48 {
        return Err(Error::Validation(format!(
            "need at least 48 hours of synthetic data, got {hours}"
        )));
    }
    if regions == 0 {
        return Err(Error::Validation("need at least one region".into()));
    }
    if !(0.0..1.0).contains(&missing_frac) {
        return Err(Error::Validation(format!(
            "missing_frac {missing_frac} outside [0,1)"
        )));
    }

    let start = NaiveDateTime::parse_from_str("2010-01-01 00:00", "%Y-%m-%d %H:%M")
        .expect("fixed epoch parses");

    // Shared storm intensity, the common weather driver across regions.
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut storm = vec![0.0f64; hours];
    let mut level = 0.0f64;
    for slot in storm.iter_mut() {
        let kick = if master.random::<f64>() < 0.055 {
            0.55 + 0.9 * master.random::<f64>()
        } else {
            0.0
        };
        level = (0.93 * level + kick - 0.015).max(0.0);
        *slot = level;
    }

    let mut all = Vec::with_capacity(regions);
    for region in 0..regions {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (region as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let station = station_name(region);
        let temp_bias = 4.0 * noise(&mut rng);
        let storm_gain = 0.9 + 0.2 * rng.random::<f64>();

        let mut records = Vec::with_capacity(hours * 2);
        let mut temp_ar = 0.0f64;
        let mut dir = rng.random::<f64>() * 360.0;
        for t in 0..hours {
            let season = (2.0 * std::f64::consts::PI * ((t as f64 + 500.0) / 8760.0)).sin();
            let diurnal = (2.0 * std::f64::consts::PI * ((t % 24) as f64 / 24.0) - 2.5).sin();
            temp_ar = 0.8 * temp_ar + 1.2 * noise(&mut rng);
            let local_storm = (storm[t] * storm_gain + 0.05 * noise(&mut rng)).max(0.0);

            let tmpf = 48.0 + 26.0 * season + 8.0 * diurnal + temp_bias + temp_ar;
            let relh = (52.0 + 30.0 * local_storm + 6.0 * noise(&mut rng)).clamp(5.0, 100.0);
            let dwpf = tmpf - (100.0 - relh) * 0.3;
            dir = (dir + 30.0 * noise(&mut rng)).rem_euclid(360.0);
            let sknt = (6.0 + 5.0 * local_storm + 2.0 * noise(&mut rng)).max(0.0);
            let alti = 29.92 - 0.45 * local_storm + 0.06 * season + 0.02 * noise(&mut rng);
            let mslp = 1013.25 + (alti - 29.92) * 33.8639 + 0.4 * noise(&mut rng);
            let wet = (local_storm - 0.55).max(0.0);
            let p01i = round2(wet * 0.5 * (0.8 + 0.4 * rng.random::<f64>()));
            let vsby = (10.0 - 5.0 * wet.min(1.5) - 0.02 * (relh - 50.0).max(0.0)
                + 0.4 * noise(&mut rng))
            .clamp(0.25, 10.0);

            // Secondary regions occasionally miss whole hours so the
            // left join's interpolation path gets exercised.
            let drop_hour = region > 0 && rng.random::<f64>() < missing_frac * 0.25;
            let extra_obs = rng.random::<f64>() < 0.35;
            if drop_hour {
                continue;
            }

            let mut push = |minute: i64, jitter: f64, rng: &mut ChaCha8Rng| {
                let cell = |value: f64, rng: &mut ChaCha8Rng| -> Option<f64> {
                    if rng.random::<f64>() < missing_frac {
                        None
                    } else {
                        Some(value)
                    }
                };
                let rec = WeatherRecord {
                    station: station.clone(),
                    valid: start + chrono::Duration::minutes(t as i64 * 60 + minute),
                    tmpf: cell(tmpf + jitter, rng),
                    dwpf: cell(dwpf + jitter, rng),
                    relh: cell((relh + jitter).clamp(0.0, 100.0), rng),
                    drct: cell((dir + jitter).rem_euclid(360.0), rng),
                    sknt: cell((sknt + jitter.abs()).max(0.0), rng),
                    alti: cell(alti + jitter * 0.01, rng),
                    mslp: cell(mslp + jitter * 0.1, rng),
                    vsby: cell(vsby, rng),
                    p01i: cell(p01i, rng),
                };
                records.push(rec);
            };

            if extra_obs {
                let jitter = 0.4 * noise(&mut rng);
                push(15, jitter, &mut rng);
            }
            push(54, 0.0, &mut rng);
        }
        all.push(records);
    }
    Ok(all)
}
