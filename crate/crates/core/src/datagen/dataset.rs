use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::equilibrium::{ReferenceTrajectory, Region};
use crate::mlp::N_FEATURES;
use crate::sim::RunLog;
use crate::{Error, Result};

/// Emulated force observer: first-order lag plus Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObserverConfig {
    /// s
    pub lag_tau: f64,
    /// N
    pub noise_sigma: f64,
    /// keep every n-th plant step as a sample
    pub label_every: usize,
}

impl Default for ObserverConfig {
    fn default() -> Self {
        Self {
            lag_tau: 0.0,
            noise_sigma: 50.0,
            label_every: 5,
        }
    }
}

impl ObserverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lag_tau >= 0.0) || !(self.noise_sigma >= 0.0) || self.label_every == 0 {
            return Err(Error::Config(
                "observer: lag_tau and noise_sigma must be >= 0 and label_every > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetSample {
    pub t: f64,
    /// `[r, v, beta, delta, fxf, fzf]`
    pub features: [f64; N_FEATURES],
    pub fyf_observed: f64,
    pub region: Region,
}

/// Turns a run log into labelled samples. The lag filter runs at the plant
/// rate; samples are then taken every `label_every` steps and noise is added.
/// Approach records are dropped.
pub fn label_with_observer(log: &RunLog, cfg: &ObserverConfig, seed: u64) -> Result<Vec<DatasetSample>> {
    cfg.validate()?;
    let Some(first) = log.records.first() else {
        return Ok(Vec::new());
    };
    let gain = 1.0 - (-log.dt / cfg.lag_tau).exp();
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut observed = first.fyf;
    let mut out = Vec::with_capacity(log.records.len() / cfg.label_every + 1);
    for (i, rec) in log.records.iter().enumerate() {
        if cfg.lag_tau == 0.0 {
            observed = rec.fyf;
        } else if i > 0 {
            observed += gain * (rec.fyf - observed);
        }
        if i % cfg.label_every != 0 || rec.region == Region::Approach {
            continue;
        }
        let x = &rec.state;
        let label = if cfg.noise_sigma > 0.0 { observed + noise.sample(&mut rng) } else { observed };
        out.push(DatasetSample {
            t: rec.t,
            features: [x.r, x.v, x.beta, rec.input.delta, rec.input.fxf, rec.fzf],
            fyf_observed: label,
            region: if rec.region == Region::Initiation { Region::Initiation } else { Region::Steady },
        });
    }
    Ok(out)
}

/// Seeded subsample, without replacement, whose initiation share is
/// `initiation_fraction`. With `total` unset the largest feasible dataset is
/// drawn. Original sample order is preserved.
pub fn compose_dataset(
    samples: &[DatasetSample],
    initiation_fraction: f64,
    total: Option<usize>,
    seed: u64,
) -> Result<Vec<DatasetSample>> {
    if !(0.0..=1.0).contains(&initiation_fraction) {
        return Err(Error::Config(format!("initiation fraction {initiation_fraction} outside [0, 1]")));
    }
    let init: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].region == Region::Initiation).collect();
    let steady: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].region != Region::Initiation).collect();
    let f = initiation_fraction;
    let n = match total {
        Some(n) => n,
        None => {
            let by_init = if f > 0.0 { init.len() as f64 / f } else { f64::INFINITY };
            let by_steady = if f < 1.0 { steady.len() as f64 / (1.0 - f) } else { f64::INFINITY };
            by_init.min(by_steady).floor() as usize
        }
    };
    let n_init = (f * n as f64).round() as usize;
    let n_steady = n - n_init;
    if n_init > init.len() || n_steady > steady.len() {
        return Err(Error::InsufficientSamples(format!(
            "need {n_init} initiation and {n_steady} steady samples, have {} and {}",
            init.len(),
            steady.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |mut pool: Vec<usize>, k: usize| -> Vec<usize> {
        pool.shuffle(&mut rng);
        pool.truncate(k);
        pool
    };
    let mut chosen = pick(init, n_init);
    chosen.extend(pick(steady, n_steady));
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| samples[i]).collect())
}

const HEADER: [&str; 9] = ["t", "r", "v", "beta", "delta", "fxf", "fzf", "fyf_observed", "region"];

pub fn write_dataset<W: Write>(samples: &[DatasetSample], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for s in samples {
        let mut row = Vec::with_capacity(HEADER.len());
        row.push(format!("{:.17e}", s.t));
        row.extend(s.features.iter().map(|v| format!("{v:.17e}")));
        row.push(format!("{:.17e}", s.fyf_observed));
        row.push(s.region.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(input: R) -> Result<Vec<DatasetSample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 1;
        let row = row?;
        if row.len() != HEADER.len() {
            return Err(Error::MalformedRow {
                line,
                msg: format!("expected {} columns, found {}", HEADER.len(), row.len()),
            });
        }
        if i == 0 {
            if row.iter().ne(HEADER.iter().copied()) {
                return Err(Error::MalformedRow {
                    line,
                    msg: "unexpected header".into(),
                });
            }
            continue;
        }
        let mut vals = [0.0; 8];
        for (k, v) in vals.iter_mut().enumerate() {
            *v = row[k].parse::<f64>().map_err(|e| Error::MalformedRow {
                line,
                msg: format!("column {}: {e}", HEADER[k]),
            })?;
            if !v.is_finite() {
                return Err(Error::MalformedRow {
                    line,
                    msg: format!("column {} is not finite", HEADER[k]),
                });
            }
        }
        let region = match &row[8] {
            "initiation" => Region::Initiation,
            "steady" => Region::Steady,
            other => {
                return Err(Error::MalformedRow {
                    line,
                    msg: format!("region must be initiation or steady, found '{other}'"),
                })
            }
        };
        out.push(DatasetSample {
            t: vals[0],
            features: [vals[1], vals[2], vals[3], vals[4], vals[5], vals[6]],
            fyf_observed: vals[7],
            region,
        });
    }
    Ok(out)
}

/// Per-feature ranges and region counts of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub samples: usize,
    pub initiation: usize,
    pub steady: usize,
    pub feature_names: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub label_min: f64,
    pub label_max: f64,
}

impl CoverageReport {
    pub fn from_samples(samples: &[DatasetSample]) -> Self {
        let mut min = vec![f64::INFINITY; N_FEATURES];
        let mut max = vec![f64::NEG_INFINITY; N_FEATURES];
        let (mut lmin, mut lmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for s in samples {
            for k in 0..N_FEATURES {
                min[k] = min[k].min(s.features[k]);
                max[k] = max[k].max(s.features[k]);
            }
            lmin = lmin.min(s.fyf_observed);
            lmax = lmax.max(s.fyf_observed);
        }
        let initiation = samples.iter().filter(|s| s.region == Region::Initiation).count();
        Self {
            samples: samples.len(),
            initiation,
            steady: samples.len() - initiation,
            feature_names: HEADER[1..7].iter().map(|s| s.to_string()).collect(),
            min,
            max,
            label_min: lmin,
            label_max: lmax,
        }
    }

    /// Checks that yaw rate, speed, sideslip and steering extend beyond the
    /// steady part of `reference` by `margin` times the largest magnitude of
    /// each quantity there. Returns the names of features that fall short.
    pub fn uncovered(&self, reference: &ReferenceTrajectory, margin: f64) -> Vec<String> {
        let mut lo = [f64::INFINITY; 4];
        let mut hi = [f64::NEG_INFINITY; 4];
        for s in reference.samples.iter().filter(|s| s.region.is_steady()) {
            let vals = [s.kappa * s.v_ref, s.v_ref, s.beta_ref, s.delta_ref];
            for k in 0..4 {
                lo[k] = lo[k].min(vals[k]);
                hi[k] = hi[k].max(vals[k]);
            }
        }
        let mut missing = Vec::new();
        for k in 0..4 {
            let pad = margin * lo[k].abs().max(hi[k].abs());
            if self.min[k] > lo[k] - pad || self.max[k] < hi[k] + pad {
                missing.push(self.feature_names[k].clone());
            }
        }
        missing
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ControlInput, VehicleState};
    use crate::sim::{RunRecord, Termination};

    fn log_with(fyf: impl Fn(usize) -> f64, n: usize, region: impl Fn(usize) -> Region) -> RunLog {
        let records = (0..n)
            .map(|i| RunRecord {
                t: i as f64 * 0.01,
                state: VehicleState {
                    v: 10.0,
                    ..Default::default()
                },
                input: ControlInput::default(),
                fyf: fyf(i),
                fyr: 0.0,
                fzf: 7800.0,
                fzr: 8000.0,
                temperature: 25.0,
                region: region(i),
                beta_ref: 0.0,
                v_ref: 10.0,
                delta_ref: 0.0,
                solve: None,
            })
            .collect();
        RunLog {
            dt: 0.01,
            records,
            termination: Termination::Completed,
        }
    }

    fn samples(n_init: usize, n_steady: usize) -> Vec<DatasetSample> {
        (0..n_init + n_steady)
            .map(|i| DatasetSample {
                t: i as f64,
                features: [i as f64; 6],
                fyf_observed: 0.0,
                region: if i < n_init { Region::Initiation } else { Region::Steady },
            })
            .collect()
    }

    #[test]
    fn passthrough_without_lag_or_noise() {
        let log = log_with(|i| (i as f64 * 0.37).sin() * 3000.0, 200, |_| Region::Steady);
        let cfg = ObserverConfig {
            lag_tau: 0.0,
            noise_sigma: 0.0,
            label_every: 1,
        };
        let out = label_with_observer(&log, &cfg, 1).unwrap();
        assert_eq!(out.len(), 200);
        for (s, r) in out.iter().zip(&log.records) {
            assert_eq!(s.fyf_observed, r.fyf);
        }
    }

    #[test]
    fn lag_step_response() {
        let t0 = 50;
        let log = log_with(|i| if i >= t0 { 1000.0 } else { 0.0 }, 200, |_| Region::Steady);
        let cfg = ObserverConfig {
            lag_tau: 0.05,
            noise_sigma: 0.0,
            label_every: 1,
        };
        let out = label_with_observer(&log, &cfg, 1).unwrap();
        let target = 1000.0 * (1.0 - (-1f64).exp());
        let crossing = out.iter().position(|s| s.fyf_observed >= target - 1e-9).unwrap();
        let t_cross = out[crossing].t - log.records[t0].t;
        assert!((t_cross - 0.05).abs() <= 0.01 + 1e-12, "{t_cross}");
    }

    #[test]
    fn noise_statistics() {
        let log = log_with(|_| 500.0, 20000, |_| Region::Steady);
        let cfg = ObserverConfig {
            lag_tau: 0.0,
            noise_sigma: 100.0,
            label_every: 1,
        };
        let out = label_with_observer(&log, &cfg, 7).unwrap();
        let n = out.len() as f64;
        let err: Vec<f64> = out.iter().map(|s| s.fyf_observed - 500.0).collect();
        let mean = err.iter().sum::<f64>() / n;
        let std = (err.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((90.0..110.0).contains(&std), "{std}");
    }

    #[test]
    fn approach_dropped_and_subsampled() {
        let log = log_with(|_| 1.0, 100, |i| if i < 40 { Region::Approach } else { Region::Initiation });
        let out = label_with_observer(&log, &ObserverConfig::default(), 0).unwrap();
        assert_eq!(out.len(), 12);
        assert!(out.iter().all(|s| s.region == Region::Initiation));
    }

    #[test]
    fn composition_fractions() {
        let pool = samples(2000, 2000);
        for f in [0.0, 0.05, 0.5] {
            let d = compose_dataset(&pool, f, Some(2000), 3).unwrap();
            let share = d.iter().filter(|s| s.region == Region::Initiation).count() as f64 / d.len() as f64;
            assert!((share - f).abs() <= 0.005, "{f}: {share}");
            assert!(d.windows(2).all(|w| w[0].t < w[1].t));
        }
        let d = compose_dataset(&pool, 0.25, None, 3).unwrap();
        assert_eq!(d.len(), 2666);
        assert!(matches!(
            compose_dataset(&pool, 0.5, Some(5000), 3),
            Err(Error::InsufficientSamples(_))
        ));
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let pool: Vec<DatasetSample> = samples(5, 7)
            .into_iter()
            .map(|mut s| {
                s.fyf_observed = std::f64::consts::PI * s.t - 1.0 / 3.0;
                s
            })
            .collect();
        let mut buf = Vec::new();
        write_dataset(&pool, &mut buf).unwrap();
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), pool);

        assert!(read_dataset(&b""[..]).unwrap().is_empty());
        let bad = "t,r,v,beta,delta,fxf,fzf,fyf_observed,region\n0,1,2,3,4,5,6,7,steady\n0,1,2\n";
        match read_dataset(bad.as_bytes()) {
            Err(Error::MalformedRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
