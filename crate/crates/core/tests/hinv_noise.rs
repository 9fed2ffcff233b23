use hierarchy_core::hinv::{extract_modes, harmonic_inversion, HinvParams, TimeTrace};
use hierarchy_core::{rng, C64};
use proptest::prelude::*;
use rand_distr::{Distribution, Normal};

fn planted() -> [(C64, C64); 2] {
    [(C64::new(-0.2, 0.0), C64::new(1.0, 0.0)), (C64::new(-0.6, 0.9), C64::new(0.5, 0.0))]
}

fn well_separated() -> [(C64, C64); 2] {
    [(C64::new(-0.1, 0.0), C64::new(1.0, 0.0)), (C64::new(-0.15, 0.7), C64::new(0.8, 0.0))]
}

fn noisy_trace(seed: u64, sigma: f64, len: usize) -> TimeTrace {
    noisy_signal(&planted(), seed, sigma, len)
}

fn noisy_signal(modes: &[(C64, C64)], seed: u64, sigma: f64, len: usize) -> TimeTrace {
    let mut r = rng::seeded(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    let values = (0..len)
        .map(|n| {
            let clean: C64 = modes.iter().map(|(l, c)| c * (l * n as f64).exp()).sum();
            clean + C64::new(noise.sample(&mut r), noise.sample(&mut r))
        })
        .collect();
    TimeTrace::new(values, 0, 1.0).unwrap()
}

#[test]
fn one_percent_noise_keeps_exactly_planted_modes() {
    let mut exact = 0;
    let trials = 50;
    for seed in 0..trials {
        let modes = extract_modes(&noisy_trace(seed, 0.01, 64), &HinvParams::default()).unwrap();
        let hit = modes.len() == 2
            && planted().iter().all(|(l, _)| modes.iter().any(|m| (m.lambda - l).norm() < 0.15));
        if hit {
            exact += 1;
        } else {
            eprintln!("seed {seed}: {modes:?}");
        }
    }
    assert!(exact == trials, "{exact}/{trials} trials kept exactly the planted modes");
}

#[test]
fn noisy_decay_rates_within_tolerance() {
    let trials = 200;
    let mut good = 0;
    for seed in 0..trials {
        let tr = noisy_signal(&well_separated(), 1000 + seed, 0.01, 64);
        let modes = extract_modes(&tr, &HinvParams::default()).unwrap();
        let ok = well_separated().iter().all(|(l, _)| {
            modes
                .iter()
                .filter(|m| (m.lambda.im - l.im).abs() < 0.2)
                .any(|m| (m.lambda.re - l.re).abs() <= 0.02)
        });
        if ok {
            good += 1;
        }
    }
    assert!(good * 100 >= 95 * trials, "{good}/{trials}");
}

#[test]
fn shift_invariance_on_clean_signal() {
    let clean = noisy_trace(0, 0.0, 65);
    let window = (-std::f64::consts::PI, std::f64::consts::PI);
    let a = harmonic_inversion(&clean, window, 16).unwrap();
    let b = harmonic_inversion(&clean.drop_front(1), window, 16).unwrap();
    for (l, _) in planted() {
        let pick = |ms: &[hierarchy_core::hinv::Mode]| {
            ms.iter().min_by(|x, y| (x.lambda - l).norm().total_cmp(&(y.lambda - l).norm())).copied().unwrap()
        };
        assert!((pick(&a).lambda - pick(&b).lambda).norm() <= 1e-6);
        assert!((pick(&a).amplitude - pick(&b).amplitude).norm() <= 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn clean_three_mode_round_trip(
        r1 in 0.05f64..0.4, r2 in 0.5f64..0.9, r3 in 1.0f64..1.5,
        w3 in 0.3f64..1.2, a1 in 0.5f64..1.5, a2 in 0.2f64..1.0, a3 in 0.2f64..1.0,
    ) {
        let planted = [
            (C64::new(-r1, 0.0), C64::new(a1, 0.0)),
            (C64::new(-r2, 0.0), C64::new(a2, 0.0)),
            (C64::new(-r3, w3), C64::new(a3, 0.0)),
        ];
        let values = (0..64)
            .map(|n| planted.iter().map(|(l, c)| c * (l * n as f64).exp()).sum())
            .collect();
        let tr = TimeTrace::new(values, 0, 1.0).unwrap();
        let modes = extract_modes(&tr, &HinvParams::default()).unwrap();
        let back = hierarchy_core::hinv::reconstruct(&modes, 0, 1.0, 64).unwrap();
        let worst = tr.values.iter().zip(&back.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(worst < 1e-6, "max deviation {}", worst);
    }
}
