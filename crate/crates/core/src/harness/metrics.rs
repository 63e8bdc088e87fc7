use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::Variant;
use crate::equilibrium::Region;
use crate::sim::{RunLog, RunRecord};
use crate::Result;

/// Fraction of non-converged solves above which a run's metrics are flagged.
pub const NON_CONVERGED_WARNING: f64 = 0.2;

/// Symmetric percent difference `|a - b| / ((a + b) / 2) * 100`; `None`
/// unless both values are positive.
pub fn percent_difference(a: f64, b: f64) -> Option<f64> {
    (a > 0.0 && b > 0.0).then(|| (a - b).abs() / (0.5 * (a + b)) * 100.0)
}

/// The four tracked error channels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Channels<T> {
    /// m/s
    pub velocity: T,
    /// degrees
    pub sideslip: T,
    /// m
    pub lateral: T,
    /// degrees
    pub steering: T,
}

pub const CHANNEL_NAMES: [&str; 4] = ["velocity", "sideslip", "lateral", "steering"];

impl<T: Copy> Channels<T> {
    pub fn to_array(&self) -> [T; 4] {
        [self.velocity, self.sideslip, self.lateral, self.steering]
    }

    fn from_array(a: [T; 4]) -> Self {
        Self {
            velocity: a[0],
            sideslip: a[1],
            lateral: a[2],
            steering: a[3],
        }
    }
}

fn abs_errors(r: &RunRecord) -> [f64; 4] {
    [
        (r.state.v - r.v_ref).abs(),
        (r.state.beta - r.beta_ref).abs().to_degrees(),
        r.state.e.abs(),
        (r.input.delta - r.delta_ref).abs().to_degrees(),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub samples: usize,
    pub mean: Channels<f64>,
    pub max: Channels<f64>,
}

impl ErrorStats {
    fn from_records<'a>(records: impl Iterator<Item = &'a RunRecord>) -> Option<Self> {
        let mut n = 0usize;
        let mut sum = [0.0; 4];
        let mut max = [0.0f64; 4];
        for r in records {
            let e = abs_errors(r);
            for k in 0..4 {
                sum[k] += e[k];
                max[k] = max[k].max(e[k]);
            }
            n += 1;
        }
        (n > 0).then(|| Self {
            samples: n,
            mean: Channels::from_array(sum.map(|s| s / n as f64)),
            max: Channels::from_array(max),
        })
    }
}

/// Region groups reported, in order: the experiment regions and two
/// aggregates of the steady laps.
pub fn region_groups() -> Vec<(&'static str, Vec<Region>)> {
    let mut groups: Vec<_> = Region::ALL.iter().map(|r| (r.as_str(), vec![*r])).collect();
    groups.push(("steady", vec![Region::SteadyLap1, Region::SteadyLap2, Region::SteadyLap3]));
    groups.push(("steady_laps23", vec![Region::SteadyLap2, Region::SteadyLap3]));
    groups
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub solves: usize,
    pub mean_iterations: f64,
    pub non_converged_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantMetrics {
    pub variant: Variant,
    pub termination: String,
    /// final arc length reached, m
    pub s_final: f64,
    pub regions: BTreeMap<String, ErrorStats>,
    pub solver: SolverStats,
    pub warnings: Vec<String>,
}

impl VariantMetrics {
    pub fn from_log(variant: Variant, log: &RunLog) -> Self {
        let mut regions = BTreeMap::new();
        for (name, members) in region_groups() {
            if let Some(stats) = ErrorStats::from_records(log.records.iter().filter(|r| members.contains(&r.region))) {
                regions.insert(name.to_string(), stats);
            }
        }
        let solves: Vec<_> = log.records.iter().filter_map(|r| r.solve).collect();
        let mean_iterations = if solves.is_empty() {
            0.0
        } else {
            solves.iter().map(|s| s.iterations as f64).sum::<f64>() / solves.len() as f64
        };
        let non_converged_fraction = log.non_converged_fraction();
        let mut warnings = Vec::new();
        if non_converged_fraction > NON_CONVERGED_WARNING {
            warnings.push(format!(
                "{:.1}% of solves did not converge; results may not be valid",
                100.0 * non_converged_fraction
            ));
        }
        if log.termination.truncated() {
            warnings.push(format!("run truncated: {}", log.termination.as_str()));
        }
        Self {
            variant,
            termination: log.termination.as_str().to_string(),
            s_final: log.records.last().map_or(0.0, |r| r.state.s),
            regions,
            solver: SolverStats {
                solves: solves.len(),
                mean_iterations,
                non_converged_fraction,
            },
            warnings,
        }
    }

    pub fn mean(&self, region: &str) -> Option<&Channels<f64>> {
        self.regions.get(region).map(|s| &s.mean)
    }
}

/// Region-decomposed tracking errors of each variant and the symmetric
/// percent differences of their means (physics relative to neural).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variants: Vec<VariantMetrics>,
    pub percent_difference: BTreeMap<String, Channels<Option<f64>>>,
}

impl MetricsReport {
    pub fn new(logs: &[(Variant, &RunLog)]) -> Self {
        let variants: Vec<_> = logs.iter().map(|(v, log)| VariantMetrics::from_log(*v, log)).collect();
        let mut pd = BTreeMap::new();
        let find = |v: Variant| variants.iter().find(|m| m.variant == v);
        if let (Some(p), Some(n)) = (find(Variant::Physics), find(Variant::Neural)) {
            for (name, _) in region_groups() {
                if let (Some(a), Some(b)) = (p.mean(name), n.mean(name)) {
                    let (a, b) = (a.to_array(), b.to_array());
                    let d = std::array::from_fn(|k| percent_difference(a[k], b[k]));
                    pd.insert(name.to_string(), Channels::from_array(d));
                }
            }
        }
        Self {
            variants,
            percent_difference: pd,
        }
    }

    pub fn variant(&self, v: Variant) -> Option<&VariantMetrics> {
        self.variants.iter().find(|m| m.variant == v)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["variant".to_string(), "region".into(), "samples".into()];
        for c in CHANNEL_NAMES {
            header.push(format!("mean_{c}"));
            header.push(format!("max_{c}"));
        }
        w.write_record(&header)?;
        let cell = |x: Option<f64>| x.map_or(String::new(), |x| format!("{x:.9e}"));
        for m in &self.variants {
            for (name, st) in &m.regions {
                let mut row = vec![m.variant.to_string(), name.clone(), st.samples.to_string()];
                for (a, b) in st.mean.to_array().into_iter().zip(st.max.to_array()) {
                    row.push(cell(Some(a)));
                    row.push(cell(Some(b)));
                }
                w.write_record(&row)?;
            }
        }
        for (name, d) in &self.percent_difference {
            let mut row = vec!["percent_difference".to_string(), name.clone(), String::new()];
            for x in d.to_array() {
                row.push(cell(x));
                row.push(String::new());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveTimeStats {
    pub solves: usize,
    /// seconds
    pub mean: f64,
    pub p50: f64,
    pub p99: f64,
    pub max: f64,
}

impl SolveTimeStats {
    pub fn from_times(times: &[f64]) -> Option<Self> {
        if times.is_empty() {
            return None;
        }
        let mut t = times.to_vec();
        t.sort_by(f64::total_cmp);
        let q = |p: f64| t[((p * (t.len() - 1) as f64).round() as usize).min(t.len() - 1)];
        Some(Self {
            solves: t.len(),
            mean: t.iter().sum::<f64>() / t.len() as f64,
            p50: q(0.5),
            p99: q(0.99),
            max: t[t.len() - 1],
        })
    }
}

/// Wall-clock solver timing. Kept out of [`MetricsReport`] because it is
/// not reproducible.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TimingReport {
    pub variants: BTreeMap<Variant, SolveTimeStats>,
    /// symmetric percent difference of the mean solve times
    pub mean_percent_difference: Option<f64>,
}

impl TimingReport {
    pub fn new(times: &[(Variant, Vec<f64>)]) -> Self {
        let variants: BTreeMap<_, _> = times
            .iter()
            .filter_map(|(v, t)| SolveTimeStats::from_times(t).map(|s| (*v, s)))
            .collect();
        let mean_percent_difference = match (variants.get(&Variant::Physics), variants.get(&Variant::Neural)) {
            (Some(p), Some(n)) => percent_difference(p.mean, n.mean),
            _ => None,
        };
        Self {
            variants,
            mean_percent_difference,
        }
    }
}

/// One row of the plot export: the four tracked quantities against arc length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub variant: Variant,
    pub s: f64,
    pub t: f64,
    pub v: f64,
    pub v_ref: f64,
    pub beta_deg: f64,
    pub beta_ref_deg: f64,
    pub e: f64,
    pub delta_deg: f64,
    pub delta_ref_deg: f64,
    pub region: Region,
}

pub fn plot_rows(variant: Variant, log: &RunLog) -> Vec<PlotRow> {
    log.records
        .iter()
        .map(|r| PlotRow {
            variant,
            s: r.state.s,
            t: r.t,
            v: r.state.v,
            v_ref: r.v_ref,
            beta_deg: r.state.beta.to_degrees(),
            beta_ref_deg: r.beta_ref.to_degrees(),
            e: r.state.e,
            delta_deg: r.input.delta.to_degrees(),
            delta_ref_deg: r.delta_ref.to_degrees(),
            region: r.region,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub variant: Variant,
    pub region: String,
    pub channel: String,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Bin widths of the absolute-error histograms, per channel.
pub const HISTOGRAM_WIDTHS: [f64; 4] = [0.1, 0.5, 0.05, 0.5];
const MAX_BINS: usize = 200;

/// Absolute-error histograms per region group and channel. Values past the
/// last bin are counted in it.
pub fn error_histograms(variant: Variant, log: &RunLog) -> Vec<HistogramBin> {
    let mut out = Vec::new();
    for (name, members) in region_groups() {
        let errs: Vec<[f64; 4]> = log.records.iter().filter(|r| members.contains(&r.region)).map(abs_errors).collect();
        if errs.is_empty() {
            continue;
        }
        for (k, channel) in CHANNEL_NAMES.iter().enumerate() {
            let w = HISTOGRAM_WIDTHS[k];
            let top = errs.iter().map(|e| e[k]).fold(0.0, f64::max);
            let n_bins = ((top / w).floor() as usize + 1).min(MAX_BINS);
            let mut counts = vec![0usize; n_bins];
            for e in &errs {
                counts[((e[k] / w) as usize).min(n_bins - 1)] += 1;
            }
            out.extend(counts.into_iter().enumerate().map(|(b, count)| HistogramBin {
                variant,
                region: name.to_string(),
                channel: channel.to_string(),
                lo: b as f64 * w,
                hi: (b + 1) as f64 * w,
                count,
            }));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ControlInput, VehicleState};
    use crate::sim::{SolveInfo, Termination};

    fn constant_error_log(e: f64) -> RunLog {
        let regions = [Region::Initiation, Region::SteadyLap1, Region::SteadyLap2, Region::SteadyLap3];
        let records = (0..40)
            .map(|i| RunRecord {
                t: i as f64 * 0.01,
                state: VehicleState {
                    v: 10.0,
                    beta: -0.5,
                    e,
                    s: i as f64,
                    ..Default::default()
                },
                input: ControlInput::default(),
                fyf: 0.0,
                fyr: 0.0,
                fzf: 0.0,
                fzr: 0.0,
                temperature: 25.0,
                region: regions[i / 10],
                beta_ref: -0.5,
                v_ref: 10.0,
                delta_ref: 0.0,
                solve: (i % 5 == 0).then_some(SolveInfo {
                    iterations: 2,
                    solve_time: 0.0,
                    converged: i % 10 != 0,
                }),
            })
            .collect();
        RunLog {
            dt: 0.01,
            records,
            termination: Termination::Completed,
        }
    }

    #[test]
    fn percent_difference_examples() {
        assert_eq!(percent_difference(10.0, 10.0), Some(0.0));
        let d = percent_difference(0.10, 0.061).unwrap();
        assert!((d - 48.447_204_968_944_1).abs() < 1e-9, "{d}");
        assert_eq!(percent_difference(0.0, 1.0), None);
    }

    #[test]
    fn constant_lateral_error() {
        let log = constant_error_log(0.3);
        let m = VariantMetrics::from_log(Variant::Physics, &log);
        assert_eq!(m.regions.len(), 6);
        for st in m.regions.values() {
            assert!((st.mean.lateral - 0.3).abs() < 1e-15);
            assert_eq!(st.max.lateral, 0.3);
            assert_eq!(st.mean.velocity, 0.0);
        }
        assert_eq!(m.regions["steady_laps23"].samples, 20);
    }

    #[test]
    fn non_convergence_warning() {
        let log = constant_error_log(0.1);
        let m = VariantMetrics::from_log(Variant::Neural, &log);
        assert_eq!(m.solver.non_converged_fraction, 0.5);
        assert_eq!(m.warnings.len(), 1);
    }

    #[test]
    fn report_compares_variants() {
        let (a, b) = (constant_error_log(0.10), constant_error_log(0.061));
        let r = MetricsReport::new(&[(Variant::Physics, &a), (Variant::Neural, &b)]);
        let d = r.percent_difference["steady"].lateral.unwrap();
        assert!((d - 48.447_204_968_944_1).abs() < 1e-9);
        assert_eq!(r.percent_difference["steady"].velocity, None);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 12 + 6);
    }

    #[test]
    fn histogram_counts_every_sample() {
        let log = constant_error_log(0.12);
        let h = error_histograms(Variant::Physics, &log);
        let lateral: Vec<_> = h.iter().filter(|b| b.region == "initiation" && b.channel == "lateral").collect();
        assert_eq!(lateral.iter().map(|b| b.count).sum::<usize>(), 10);
        assert_eq!(lateral.last().unwrap().count, 10);
        assert!((lateral.last().unwrap().lo - 0.10).abs() < 1e-12);
    }

    #[test]
    fn timing_quantiles() {
        let times: Vec<f64> = (1..=100).map(|i| i as f64 * 1e-3).collect();
        let s = SolveTimeStats::from_times(&times).unwrap();
        assert!((s.mean - 0.0505).abs() < 1e-12);
        assert_eq!(s.max, 0.1);
        assert_eq!(s.p99, 0.099);
        assert!(SolveTimeStats::from_times(&[]).is_none());
    }
}
