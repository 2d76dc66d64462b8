use prefopt::acquisition::{expected_improvement, integrated_ei, maximize_acquisition, AcquisitionConfig};
use prefopt::domain::{Domain, PreferenceOutcome, PreferenceRecord};
use prefopt::likelihood::PreferenceModel;
use prefopt::vinfer::{self, FitConfig};
use prefopt::{PreferenceDataset, RandomStream};
use proptest::prelude::*;

/// Chain on [0, 1] where each point is less preferred than the next one right.
fn rising_chain() -> (Domain, PreferenceDataset, PreferenceModel) {
    let domain = Domain::unit(1).unwrap();
    let pts = [0.1, 0.3, 0.5, 0.7, 0.9];
    let records: Vec<_> = pts
        .windows(2)
        .map(|w| PreferenceRecord::new(vec![w[0]], vec![w[1]], PreferenceOutcome::FirstLess))
        .collect();
    let ds = PreferenceDataset::from_records(&domain, &records).unwrap();
    let model = PreferenceModel::for_domain(&domain);
    (domain, ds, model)
}

#[test]
fn ei_matches_monte_carlo() {
    let mut rng = RandomStream::new(8);
    const N: usize = 1_000_000;
    for &(mu, s, fb) in &[(0.0, 1.0, 0.0), (0.3, 0.5, 0.1), (-0.4, 2.0, 0.2), (1.0, 0.2, 0.9)] {
        let draws: Vec<f64> = (0..N).map(|_| (mu + s * rng.normal() - fb).max(0.0)).collect();
        let mean = draws.iter().sum::<f64>() / N as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (N as f64 - 1.0);
        let se = (var / N as f64).sqrt();
        let ei = expected_improvement(mu, s, fb);
        assert!((ei - mean).abs() <= 3.0 * se, "({mu}, {s}, {fb}): {ei} vs {mean} +- {se}");
    }
}

// Strictly monotone in exact arithmetic; in floating point EI saturates (to 0
// or to mu - f_best) in the tails, so strictness is only asserted for |nu| <= 5.
proptest! {
    #[test]
    fn ei_increases_in_mean(mu in -3.0..3.0f64, d in 1e-3..1.0f64, s in 0.05..3.0f64, fb in -1.0..1.0f64) {
        let (lo, hi) = (expected_improvement(mu, s, fb), expected_improvement(mu + d, s, fb));
        prop_assert!(hi >= lo);
        if ((mu - fb) / s).abs() <= 5.0 {
            prop_assert!(hi > lo);
        }
    }

    #[test]
    fn ei_increases_in_spread(gap in 0.0..2.0f64, s in 0.05..3.0f64, d in 1e-3..1.0f64) {
        // mu above f_best
        let (lo, hi) = (expected_improvement(gap, s, 0.0), expected_improvement(gap, s + d, 0.0));
        prop_assert!(hi >= lo);
        if gap / s <= 5.0 {
            prop_assert!(hi > lo);
        }
    }

    #[test]
    fn ei_nonnegative(mu in -50.0..50.0f64, s in 0.0..10.0f64, fb in -50.0..50.0f64) {
        prop_assert!(expected_improvement(mu, s, fb) >= 0.0);
    }
}

#[test]
fn integrated_ei_nonnegative() {
    let (_, ds, model) = rising_chain();
    let fit = vinfer::fit(&ds, &model, &FitConfig { seed: 1, ..Default::default() }, None).unwrap();
    let cfg = AcquisitionConfig { seed: 3, ..Default::default() };
    let mut rng = RandomStream::new(4);
    for _ in 0..10_000 {
        let x = [rng.uniform()];
        let v = integrated_ei(&x, &ds, &model, &fit.state, 4, &cfg).unwrap();
        assert!(v >= 0.0 && v.is_finite());
    }
}

/// Every left-half point loses to every right-half point.
fn right_half_preferred() -> (Domain, PreferenceDataset, PreferenceModel, usize) {
    let domain = Domain::unit(1).unwrap();
    let mut records = Vec::new();
    for l in [0.1, 0.2, 0.3, 0.4] {
        for r in [0.6, 0.7, 0.8, 0.9] {
            records.push(PreferenceRecord::new(vec![l], vec![r], PreferenceOutcome::FirstLess));
        }
    }
    let ds = PreferenceDataset::from_records(&domain, &records).unwrap();
    let best = ds.index_of(&[0.9]).unwrap();
    let model = PreferenceModel::for_domain(&domain);
    (domain, ds, model, best)
}

#[test]
fn maximizer_follows_the_preferred_half() {
    let (domain, ds, model, best) = right_half_preferred();
    let mut right = 0;
    for seed in 1..=20 {
        let fit = vinfer::fit(&ds, &model, &FitConfig { seed, ..Default::default() }, None).unwrap();
        let x = maximize_acquisition(
            &domain,
            &ds,
            &model,
            &fit.state,
            best,
            &AcquisitionConfig::default(),
            &mut RandomStream::new(100 + seed),
        )
        .unwrap();
        assert!(domain.contains(&x));
        right += usize::from(x[0] > 0.5);
    }
    assert!(right >= 18, "right half in {right}/20 runs");
}
