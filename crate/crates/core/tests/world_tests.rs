//! World-model tests: configuration validation, unit conversions, RNG stream
//! separation, initial formation, reflective user mobility, and obstructed
//! regions.

use approx::assert_relative_eq;
use proptest::prelude::*;
use swarmlink::world::{
    ObstructedRegion, RngStreams, ScenarioConfig, dbm_to_watts, derived_seed, init_world,
    reflect_into, stream, stream_id, watts_to_dbm,
};

#[test]
fn default_config_is_valid() {
    ScenarioConfig::default().validate().unwrap();
}

#[test]
fn validation_names_the_offending_field() {
    let cases: Vec<(&str, ScenarioConfig)> = vec![
        ("area_x", ScenarioConfig { area_x: 0.0, ..Default::default() }),
        ("num_uavs", ScenarioConfig { num_uavs: 0, ..Default::default() }),
        ("horizon", ScenarioConfig { horizon: 0, ..Default::default() }),
        ("slot_duration", ScenarioConfig { slot_duration: -1.0, ..Default::default() }),
        ("h_min", ScenarioConfig { h_min: 120.0, h_max: 100.0, ..Default::default() }),
        ("v_max", ScenarioConfig { v_max: 0.0, ..Default::default() }),
        ("d_min_uav", ScenarioConfig { d_min_uav: -1.0, ..Default::default() }),
        ("carrier_freq_ghz", ScenarioConfig { carrier_freq_ghz: f64::NAN, ..Default::default() }),
        ("uav_mass", ScenarioConfig { uav_mass: 0.0, ..Default::default() }),
    ];
    for (field, cfg) in cases {
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains(field), "error for {field} was: {err}");
    }
    // Altitude band must fit inside the volume.
    assert!(
        ScenarioConfig { h_max: 200.0, area_z: 100.0, ..Default::default() }.validate().is_err()
    );
    // Obstruction squares must fit inside the area.
    let cfg = ScenarioConfig {
        obstruction: swarmlink::world::ObstructionConfig { count: 1, half_extent: 800.0 },
        ..Default::default()
    };
    assert!(cfg.validate().is_err());
}

#[test]
fn dbm_watt_conversions() {
    assert_relative_eq!(dbm_to_watts(30.0), 1.0, max_relative = 1e-12);
    assert_relative_eq!(dbm_to_watts(0.0), 1e-3, max_relative = 1e-12);
    assert_relative_eq!(dbm_to_watts(-107.0), 10f64.powf(-13.7), max_relative = 1e-12);
    assert_relative_eq!(watts_to_dbm(dbm_to_watts(17.0)), 17.0, max_relative = 1e-12);
}

#[test]
fn power_accessors_convert_config_fields() {
    let cfg = ScenarioConfig::default();
    assert_relative_eq!(cfg.p_max(), 1.0, max_relative = 1e-12);
    assert!(cfg.noise_power() < 1e-13 && cfg.noise_power() > 1e-14);
    assert_eq!(cfg.state_dim(), 2 * 9 + 4 * 3);
}

// ---------------------------------------------------------------------------
// RNG streams
// ---------------------------------------------------------------------------

#[test]
fn streams_are_independent_and_reproducible() {
    use rand::Rng;
    let mut a = stream(42, stream_id::MOBILITY);
    let mut b = stream(42, stream_id::MOBILITY);
    let xs: Vec<f64> = (0..16).map(|_| a.random()).collect();
    let ys: Vec<f64> = (0..16).map(|_| b.random()).collect();
    assert_eq!(xs, ys, "same seed and stream id must reproduce");

    let mut c = stream(42, stream_id::FADING);
    let zs: Vec<f64> = (0..16).map(|_| c.random()).collect();
    assert_ne!(xs, zs, "different stream ids must decorrelate");

    let mut d = stream(43, stream_id::MOBILITY);
    let ws: Vec<f64> = (0..16).map(|_| d.random()).collect();
    assert_ne!(xs, ws, "different seeds must decorrelate");
}

#[test]
fn derived_seeds_spread() {
    let s = 17;
    let tags = [0xA000u64, 0xA001, 0xB000, 0xE7A1];
    let derived: Vec<u64> = tags.iter().map(|t| derived_seed(s, *t)).collect();
    for (i, a) in derived.iter().enumerate() {
        assert_ne!(*a, s, "derived seed must differ from the base");
        for b in &derived[i + 1..] {
            assert_ne!(a, b, "derived seeds must be distinct");
        }
    }
    assert_eq!(derived_seed(s, tags[0]), derived_seed(s, tags[0]));
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

#[test]
fn init_places_uavs_in_line_formation() {
    let cfg = ScenarioConfig::default();
    let mut streams = RngStreams::new(5);
    let world = init_world(&cfg, &mut streams).unwrap();
    assert_eq!(world.uavs.len(), 3);
    assert_eq!(world.users.len(), 9);
    assert_eq!(world.slot, 0);
    for (m, uav) in world.uavs.iter().enumerate() {
        assert_relative_eq!(
            uav.position.x,
            cfg.area_x * (m as f64 + 1.0) / 4.0,
            max_relative = 1e-12
        );
        assert_eq!(uav.position.y, cfg.area_y / 2.0);
        assert_eq!(uav.speed, 0.0);
        assert_eq!(uav.velocity.norm(), 0.0);
    }
    // Users land inside the area.
    for u in &world.users {
        assert!(u.x >= 0.0 && u.x <= cfg.area_x);
        assert!(u.y >= 0.0 && u.y <= cfg.area_y);
    }
    assert_eq!(world.regions.len(), cfg.obstruction.count);
    assert_eq!(world.cumulative_user_rate, vec![0.0; 9]);
    assert_eq!(world.cumulative_total_rate, 0.0);
}

#[test]
fn init_is_deterministic_per_stream_state() {
    let cfg = ScenarioConfig::default();
    let w1 = init_world(&cfg, &mut RngStreams::new(5)).unwrap();
    let w2 = init_world(&cfg, &mut RngStreams::new(5)).unwrap();
    assert_eq!(w1.users, w2.users);
    assert_eq!(w1.regions.len(), w2.regions.len());
    let w3 = init_world(&cfg, &mut RngStreams::new(6)).unwrap();
    assert_ne!(w1.users, w3.users);
}

// ---------------------------------------------------------------------------
// Mobility
// ---------------------------------------------------------------------------

#[test]
fn reflect_into_folds_at_both_walls() {
    assert_relative_eq!(reflect_into(-3.0, 10.0), 3.0, max_relative = 1e-12);
    assert_relative_eq!(reflect_into(12.0, 10.0), 8.0, max_relative = 1e-12);
    assert_eq!(reflect_into(5.0, 10.0), 5.0);
    assert_eq!(reflect_into(0.0, 10.0), 0.0);
    assert_eq!(reflect_into(10.0, 10.0), 10.0);
    // Multiple folds for large overshoots.
    let x = reflect_into(47.0, 10.0);
    assert!((0.0..=10.0).contains(&x));
}

proptest! {
    #[test]
    fn reflect_into_stays_in_range(x in -1e4f64..1e4, max in 1.0f64..2e3) {
        let r = reflect_into(x, max);
        prop_assert!((0.0..=max).contains(&r));
        // Points already inside are fixed.
        if (0.0..=max).contains(&x) {
            prop_assert_eq!(r, x);
        }
    }
}

#[test]
fn users_move_boundedly_and_deterministically() {
    let cfg = ScenarioConfig::default();
    let mut streams = RngStreams::new(11);
    let mut world = init_world(&cfg, &mut streams).unwrap();
    let before = world.users.clone();
    world.step_users(&cfg, &mut streams.mobility);
    for (b, a) in before.iter().zip(&world.users) {
        let step = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
        // Reflection can shorten but never lengthen the commanded move.
        assert!(step <= cfg.d_max_user + 1e-9, "user moved {step} m");
        assert!(a.x >= 0.0 && a.x <= cfg.area_x);
        assert!(a.y >= 0.0 && a.y <= cfg.area_y);
    }
    // Replaying from the same stream state reproduces the same walk.
    let mut streams2 = RngStreams::new(11);
    let mut world2 = init_world(&cfg, &mut streams2).unwrap();
    world2.step_users(&cfg, &mut streams2.mobility);
    assert_eq!(world.users, world2.users);
}

// ---------------------------------------------------------------------------
// Obstructed regions
// ---------------------------------------------------------------------------

#[test]
fn obstructed_region_contains_is_a_closed_box() {
    let r = ObstructedRegion::clamped(500.0, 500.0, 100.0, 1500.0, 1500.0);
    assert!(r.contains(500.0, 500.0));
    assert!(r.contains(400.0, 600.0), "edges are inside");
    assert!(!r.contains(399.999, 500.0));
    assert!(!r.contains(500.0, 600.001));
}

#[test]
fn obstructed_region_clamps_to_fit_area() {
    // A region centered at the corner is shifted so its square stays inside.
    let r = ObstructedRegion::clamped(0.0, 1500.0, 100.0, 1500.0, 1500.0);
    assert!(r.contains(100.0, 1400.0));
    assert!(!r.contains(250.0, 1400.0));
    // The full square spans [0, 200] × [1300, 1500].
    assert!(r.contains(0.0, 1500.0));
}

#[test]
fn is_obstructed_tracks_user_position() {
    let cfg = ScenarioConfig::default();
    let mut streams = RngStreams::new(13);
    let mut world = init_world(&cfg, &mut streams).unwrap();
    // Force a known region and a user inside it.
    world.regions = vec![ObstructedRegion::clamped(750.0, 750.0, 150.0, 1500.0, 1500.0)];
    world.users[0].x = 750.0;
    world.users[0].y = 750.0;
    world.users[1].x = 100.0;
    world.users[1].y = 100.0;
    assert!(world.is_obstructed(0));
    assert!(!world.is_obstructed(1));
}

#[test]
fn accumulate_rates_sums_per_user_and_total() {
    let cfg = ScenarioConfig { num_users: 3, ..Default::default() };
    let mut streams = RngStreams::new(17);
    let mut world = init_world(&cfg, &mut streams).unwrap();
    world.accumulate_rates(&[100.0, 0.0, 50.0]);
    world.accumulate_rates(&[10.0, 20.0, 0.0]);
    assert_eq!(world.cumulative_user_rate, vec![110.0, 20.0, 50.0]);
    assert_eq!(world.cumulative_total_rate, 180.0);
}
