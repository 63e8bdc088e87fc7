use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DatasetSample;
use crate::dynamics::{slip_angles_generic, VehicleParams};
use crate::equilibrium::Region;
use crate::tire::{fiala_lateral_force, TireParams};

/// Sampling box for noise-free nominal Fiala data around the drift envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticRanges {
    pub v: (f64, f64),
    pub beta: (f64, f64),
    /// yaw rate as a multiple of `v / radius`
    pub yaw_scale: (f64, f64),
    pub radius: f64,
    pub delta: (f64, f64),
    pub fxf: (f64, f64),
    pub fzf: (f64, f64),
}

impl Default for SyntheticRanges {
    fn default() -> Self {
        Self {
            v: (8.5, 13.0),
            beta: (-0.9, -0.4),
            yaw_scale: (0.8, 1.2),
            radius: 15.0,
            delta: (-0.75, -0.35),
            fxf: (-3000.0, 0.0),
            fzf: (7000.0, 8700.0),
        }
    }
}

/// Uniformly sampled states labelled with the nominal Fiala front force.
pub fn fiala_dataset(
    n: usize,
    ranges: &SyntheticRanges,
    tire: &TireParams,
    vehicle: &VehicleParams,
    seed: u64,
) -> Vec<DatasetSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |(lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..hi) } else { lo };
    (0..n)
        .map(|i| {
            let v = draw(ranges.v);
            let beta = draw(ranges.beta);
            let r = draw(ranges.yaw_scale) * v / ranges.radius;
            let delta = draw(ranges.delta);
            let fxf = draw(ranges.fxf);
            let fzf = draw(ranges.fzf);
            let (alpha, _) = slip_angles_generic(r, v, beta, delta, vehicle);
            DatasetSample {
                t: i as f64,
                features: [r, v, beta, delta, fxf, fzf],
                fyf_observed: fiala_lateral_force(alpha, fxf, fzf, tire),
                region: Region::Steady,
            }
        })
        .collect()
}
