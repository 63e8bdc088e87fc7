//! Prints the three reference drift equilibria and the axle slip angles they imply.

use drift_forge::dynamics::{normal_loads, slip_angles, VehicleParams};
use drift_forge::equilibrium::{build_reference, AxleTires, ReferenceConfig};
use drift_forge::tire::sliding_angle;

fn main() {
    let vp = VehicleParams::default();
    let tires = AxleTires::default();
    let r = build_reference(&ReferenceConfig::default(), &vp, &tires).unwrap();
    let (fzf, fzr) = normal_loads(&vp);
    for eq in &r.equilibria {
        let (af, ar) = slip_angles(&eq.state(0.0), eq.delta, &vp).unwrap();
        println!(
            "v={:.4} r={:.4} delta={:.4} ({:.1} deg) fxr={:.1} fxf={:.1} res={:.2e} alpha_f={:.2} deg alpha_r={:.2} deg",
            eq.v, eq.r, eq.delta, eq.delta.to_degrees(), eq.fxr, eq.fxf, eq.residual_norm,
            af.to_degrees(), ar.to_degrees()
        );
    }
    println!(
        "sliding angles: front {:.2} deg rear {:.2} deg",
        sliding_angle(fzf, &tires.front).to_degrees(),
        sliding_angle(fzr, &tires.rear).to_degrees()
    );
}
