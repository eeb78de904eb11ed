use proptest::prelude::*;

use risloc::channel::{channel, effective_channel};
use risloc::dictionary::{build_dictionary, build_grid};
use risloc::geometry::{near_field_bounds, ris_grid_index, ris_linear_index};
use risloc::refinement::{model_vector, objective};
use risloc::signaling::noiseless_observation;
use risloc::{ChannelModel, Observation, SystemConfig, UePosition};

fn model() -> impl Strategy<Value = ChannelModel> {
    prop_oneof![Just(ChannelModel::Exact), Just(ChannelModel::Fresnel)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ris_index_round_trip(n_y in 1usize..20, n_z in 1usize..20, seed in any::<u64>()) {
        let cfg = SystemConfig { n_y, n_z, ..SystemConfig::default() };
        let n = (seed as usize) % (n_y * n_z);
        let (iy, iz) = ris_grid_index(&cfg, n);
        prop_assert!(iy < n_y && iz < n_z);
        prop_assert_eq!(ris_linear_index(&cfg, iy, iz), n);
    }

    #[test]
    fn channel_entries_have_unit_modulus(frac in 0.0f64..1.0, theta in -1.5f64..1.5, m in model()) {
        let cfg = SystemConfig::default();
        let b = near_field_bounds(&cfg);
        let pos = UePosition::new(b.fresnel + frac * (b.rayleigh - b.fresnel), theta).unwrap();
        for v in channel(&cfg, &pos, m).entries.iter() {
            prop_assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gram_is_hermitian_with_n_diagonal(frac in 0.0f64..1.0, theta in -1.5f64..1.5, m in model(), k in 1usize..10) {
        let cfg = SystemConfig::default().with_ue_antennas(k);
        let b = near_field_bounds(&cfg);
        let pos = UePosition::new(b.fresnel + frac * (b.rayleigh - b.fresnel), theta).unwrap();
        let g = effective_channel(&channel(&cfg, &pos, m));
        for p in 0..k {
            prop_assert!((g[(p, p)].re - 64.0).abs() < 1e-9 && g[(p, p)].im.abs() < 1e-9);
            for q in 0..k {
                prop_assert!((g[(p, q)] - g[(q, p)].conj()).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn objective_is_nonnegative_and_zero_at_fit(r in 0.7f64..4.9, theta in -1.5f64..1.5, dr in -0.3f64..0.3) {
        let cfg = SystemConfig::default();
        let z = model_vector(&cfg, r, theta).unwrap();
        let obs = Observation::from_vector(z, f64::INFINITY, 0.0).unwrap();
        prop_assert_eq!(objective(&obs, &cfg, r, theta).unwrap(), 0.0);
        prop_assert!(objective(&obs, &cfg, r + dr, theta).unwrap() >= 0.0);
        let noisy = noiseless_observation(&cfg, &UePosition::new(r, theta).unwrap(), ChannelModel::Exact);
        prop_assert!(objective(&noisy, &cfg, r + dr, theta).unwrap() >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn dictionary_columns_are_unit_norm(eps in 0.3f64..1.5, m in model()) {
        let cfg = SystemConfig::default();
        let grid = build_grid(&cfg, eps).unwrap();
        let b = near_field_bounds(&cfg);
        for p in &grid.points {
            prop_assert!(b.contains(p.r));
        }
        let dict = build_dictionary(&cfg, &grid, m).unwrap();
        for col in dict.columns.column_iter() {
            prop_assert!((col.norm() - 1.0).abs() < 1e-12);
        }
    }
}
