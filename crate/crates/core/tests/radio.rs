use std::f64::consts::{FRAC_PI_2, PI};

use jamrelay::radio::*;
use jamrelay::vehicle::rotation_from_euler;
use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;

fn vec3() -> impl Strategy<Value = Vector3<f64>> {
    (-10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn euler() -> impl Strategy<Value = Vector3<f64>> {
    (-1.2f64..1.2, -1.2f64..1.2, -3.0f64..3.0).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

#[test]
fn dipole_grid_audit() {
    let a = DipoleAntenna::default();
    let steps = (PI / 1e-3) as usize;
    let mut prev = a.gain(0.0).unwrap();
    let peak = a.gain(FRAC_PI_2).unwrap();
    for i in 1..=steps {
        let th = i as f64 * 1e-3;
        let g = a.gain(th).unwrap();
        assert!((g - prev).abs() < 5e-3, "jump at {th}");
        assert!((g - a.gain(PI - th).unwrap()).abs() < 1e-12);
        assert!(g <= peak + 1e-15);
        prev = g;
    }
}

proptest! {
    #[test]
    fn elevation_is_attitude_equivariant(p in vec3(), t in vec3(), e in euler(), w in euler()) {
        prop_assume!((t - p).norm() > 1e-3);
        let params = RadioParams::default();
        let node = params.node(p, e);
        let before = elevation_angle(&node, &t).unwrap();
        let world = rotation_from_euler(&w);
        let rotated = world * rotation_from_euler(&e);
        let (r, pch, y) = Rotation3::from_matrix_unchecked(rotated).euler_angles();
        let moved = params.node(world * p, Vector3::new(r, pch, y));
        let after = elevation_angle(&moved, &(world * t)).unwrap();
        prop_assert!((before - after).abs() < 1e-10, "{before} vs {after}");
    }

    #[test]
    fn elevation_and_cosine_are_complementary(p in vec3(), t in vec3(), e in euler()) {
        prop_assume!((t - p).norm() > 1e-3);
        let node = RadioParams::default().node(p, e);
        let th = elevation_angle(&node, &t).unwrap();
        let v = directional_cosine_sq(&node, &t).unwrap();
        prop_assert!((th.sin().powi(2) + v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn harmonic_mean_bound(c21 in 0.0f64..20.0, c10 in 0.0f64..20.0, b in 0.1f64..10.0) {
        let c = end_to_end_capacity(c21, c10, b);
        prop_assert!(c <= b * c21.min(c10) + 1e-12);
        prop_assert!(c >= 0.0);
    }

    #[test]
    fn sinr_is_positive_and_falls_with_jammer_power(s in vec3(), r in vec3(), e in euler(), pj in 0.0f64..5.0) {
        prop_assume!((s - r).norm() > 0.1);
        let params = RadioParams::default();
        let tx = params.node(s, Vector3::zeros());
        let rx = params.node(r, e);
        let jpos = Vector3::new(-6.95, -5.79, 1.72);
        prop_assume!((r - jpos).norm() > 0.1);
        let quiet = sinr(&tx, &rx, &JammerNode { position: jpos, power: 0.0 }).unwrap();
        let loud = sinr(&tx, &rx, &JammerNode { position: jpos, power: pj }).unwrap();
        prop_assert!(loud >= 0.0 && loud <= quiet * (1.0 + 1e-12));
    }
}
