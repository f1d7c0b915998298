//! Rolling/slipping contact model.
//!
//! Pad motion is expressed in a tangent frame shared by both pads: `u` is the
//! in-plane tangential direction (world `y`), `v` the out-of-plane direction,
//! driven by pad tilt through the fingertip radius. The marble centre moves by
//! `roll_slip_ratio` times the mean pad displacement plus slip noise; each
//! contact point moves by that amount minus its own pad's displacement.

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::kinematics::{fk, FingerPoses};
use super::{Action, Finger, JointState, MarbleState, SimConfig};
use crate::rng::Rng;

/// Tangential displacement of one pad in the shared `(u, v)` frame, mm.
pub type SurfaceDisplacement = [f64; 2];

pub fn surface_displacements(
    before: &FingerPoses,
    after: &FingerPoses,
    config: &SimConfig,
) -> [SurfaceDisplacement; 2] {
    let d = |f: Finger| {
        let (p0, p1) = (before.get(f), after.get(f));
        let dtilt = (after.tilt(f) - before.tilt(f)).sin().asin();
        [p1.y - p0.y, config.fingertip_radius * dtilt]
    };
    [d(Finger::Left), d(Finger::Right)]
}

/// Advances both contact points given each pad's displacement and a marble
/// slip term. Returns `(contact_left, contact_right)`.
pub fn advance_contacts(
    contact_left: [f64; 2],
    contact_right: [f64; 2],
    d_left: SurfaceDisplacement,
    d_right: SurfaceDisplacement,
    roll_slip_ratio: f64,
    slip: [f64; 2],
) -> ([f64; 2], [f64; 2]) {
    let mut centre = [0.0; 2];
    for k in 0..2 {
        centre[k] = roll_slip_ratio * 0.5 * (d_left[k] + d_right[k]) + slip[k];
    }
    let left = [
        contact_left[0] + centre[0] - d_left[0],
        contact_left[1] + centre[1] - d_left[1],
    ];
    let right = [
        contact_right[0] + centre[0] - d_right[0],
        contact_right[1] + centre[1] - d_right[1],
    ];
    (left, right)
}

/// Gaussian slip with its magnitude clipped at three standard deviations.
fn sample_slip(std: f64, rng: &mut Rng) -> [f64; 2] {
    let n: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
    let norm = n[0].hypot(n[1]);
    let scale = if norm > 3.0 { 3.0 / norm } else { 1.0 };
    [n[0] * scale * std, n[1] * scale * std]
}

/// One simulator step. A dropped marble stays dropped.
pub fn step(
    joints: &JointState,
    marble: &MarbleState,
    action: &Action,
    config: &SimConfig,
    rng: &mut Rng,
) -> (JointState, MarbleState) {
    let action = action.clamped(config.a_max);
    let mut next = *joints;
    for (a, d) in next.angles.iter_mut().zip(action.displacements) {
        *a += d;
    }
    let next = next.clamped(config);
    // Drawn unconditionally so the stream does not depend on the marble state.
    let slip = sample_slip(config.slip_noise_std, rng);
    if !marble.held {
        return (next, marble.dropped());
    }
    let before = fk(joints, config);
    let after = fk(&next, config);
    let [d_left, d_right] = surface_displacements(&before, &after, config);
    let (contact_left, contact_right) = advance_contacts(
        marble.contact_left,
        marble.contact_right,
        d_left,
        d_right,
        config.roll_slip_ratio,
        slip,
    );
    let depth = (config.marble_diameter - (after.right.x - after.left.x)).max(0.0);
    let state = MarbleState {
        contact_left,
        contact_right,
        depth,
        held: true,
    };
    let held = depth >= config.drop_depth_threshold
        && config.field_contains(contact_left)
        && config.field_contains(contact_right);
    if held {
        (next, state)
    } else {
        (next, state.dropped())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::sim::reset;
    use proptest::prelude::*;

    #[test]
    fn zero_action_is_a_fixed_point_without_noise() {
        let cfg = SimConfig {
            slip_noise_std: 0.0,
            ..SimConfig::default()
        };
        let mut rng = rng_from_seed(3);
        let (j, m) = reset(&cfg, &mut rng);
        let (j2, m2) = step(&j, &m, &Action::ZERO, &cfg, &mut rng);
        assert_eq!(j, j2);
        assert_eq!(m, m2);
    }

    #[test]
    fn one_moving_pad_shifts_contacts_by_half() {
        let delta = [0.8, -0.3];
        let (l, r) = advance_contacts([1.0, 2.0], [-1.0, 0.5], delta, [0.0, 0.0], 1.0, [0.0, 0.0]);
        let half = 0.5 * delta[0].hypot(delta[1]);
        let shift_l = (l[0] - 1.0).hypot(l[1] - 2.0);
        let shift_r = (r[0] + 1.0).hypot(r[1] - 0.5);
        assert!((shift_l - half).abs() < 1e-12);
        assert!((shift_r - half).abs() < 1e-12);
        // The moving pad slides under the marble, the still pad sees it roll along.
        assert!((l[0] - (1.0 - 0.4)).abs() < 1e-12);
        assert!((r[0] - (-1.0 + 0.4)).abs() < 1e-12);
    }

    #[test]
    fn opening_the_grip_drops_the_marble() {
        let cfg = SimConfig::default();
        let mut rng = rng_from_seed(11);
        let (mut j, mut m) = reset(&cfg, &mut rng);
        // Base joints rotate away from the marble on both fingers.
        let mut open = [0.0; 8];
        open[0] = -cfg.a_max;
        open[4] = cfg.a_max;
        for _ in 0..40 {
            (j, m) = step(&j, &m, &Action::new(open), &cfg, &mut rng);
            if !m.held {
                break;
            }
        }
        assert!(!m.held);
        assert_eq!(m.depth, 0.0);
        let close = Action::new([0.05, 0.0, 0.0, 0.0, -0.05, 0.0, 0.0, 0.0]);
        let (_, m2) = step(&j, &m, &close, &cfg, &mut rng);
        assert!(!m2.held, "dropped marbles stay dropped");
    }

    #[test]
    fn actions_are_clamped_and_joints_stay_in_limits() {
        let cfg = SimConfig::default();
        let mut rng = rng_from_seed(5);
        let (mut j, mut m) = reset(&cfg, &mut rng);
        for _ in 0..100 {
            (j, m) = step(&j, &m, &Action::new([1.0; 8]), &cfg, &mut rng);
            assert!(j.within_limits(&cfg));
        }
        let _ = m;
    }

    proptest! {
        #[test]
        fn contact_motion_bounded_by_pad_motion(
            seed in 0u64..1000,
            raw in proptest::array::uniform8(-1.0f64..1.0),
        ) {
            let cfg = SimConfig::default();
            let mut rng = rng_from_seed(seed);
            let (j, m) = reset(&cfg, &mut rng);
            let mut a = [0.0; 8];
            for k in 0..8 { a[k] = raw[k] * cfg.a_max; }
            let (j2, m2) = step(&j, &m, &Action::new(a), &cfg, &mut rng);
            prop_assume!(m2.held);
            let [dl, dr] = surface_displacements(&fk(&j, &cfg), &fk(&j2, &cfg), &cfg);
            let max_pad = dl[0].hypot(dl[1]).max(dr[0].hypot(dr[1]));
            let bound = max_pad + 3.0 * cfg.slip_noise_std + 1e-12;
            for f in Finger::BOTH {
                let (c0, c1) = (m.contact(f), m2.contact(f));
                prop_assert!((c1[0] - c0[0]).hypot(c1[1] - c0[1]) <= bound);
            }
        }

        #[test]
        fn held_contacts_stay_in_field(seed in 0u64..500) {
            let cfg = SimConfig::default();
            let mut rng = rng_from_seed(seed);
            let (mut j, mut m) = reset(&cfg, &mut rng);
            for _ in 0..20 {
                let a = Action::new(std::array::from_fn(|_| rng.gen_range(-cfg.a_max..=cfg.a_max)));
                (j, m) = step(&j, &m, &a, &cfg, &mut rng);
                if m.held {
                    prop_assert!(cfg.field_contains(m.contact_left));
                    prop_assert!(cfg.field_contains(m.contact_right));
                    prop_assert!(m.depth >= cfg.drop_depth_threshold);
                } else {
                    prop_assert_eq!(m.depth, 0.0);
                }
            }
        }
    }
}
