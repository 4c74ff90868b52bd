use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectrum_imitation::estimation::{
    estimate_grab_prob, estimate_idle_prob, estimate_mean_rate, ChannelEstimate, ObservationLog,
};

fn idle_log(rng: &mut impl Rng, theta: f64, slots: usize) -> ObservationLog {
    let mut log = ObservationLog::with_capacity(0, slots);
    for _ in 0..slots {
        log.push(rng.random::<f64>() < theta, false, 0.0);
    }
    log
}

#[test]
fn idle_estimate_variance_scales_inversely_with_periods() {
    let theta = 4.0 / 7.0;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let horizons = [1usize, 2, 4, 8, 16, 32];
    let replicas = 2000;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &c in &horizons {
        let values: Vec<f64> = (0..replicas)
            .map(|_| {
                let mut est = ChannelEstimate::new(0);
                for _ in 0..c {
                    est = estimate_idle_prob(&idle_log(&mut rng, theta, 100), &est);
                }
                est.theta_hat
            })
            .collect();
        let mean = values.iter().sum::<f64>() / replicas as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (replicas - 1) as f64;
        xs.push(1.0 / c as f64);
        ys.push(var);
    }
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = sxy * sxy / (sxx * syy);
    assert!(r2 > 0.99, "R² = {r2}");
    // slope against the binomial variance of one period
    let slope = sxy / sxx;
    let expected = theta * (1.0 - theta) / 100.0;
    assert!(
        (slope / expected - 1.0).abs() < 0.1,
        "slope {slope} vs {expected}"
    );
}

fn arbitrary_log() -> impl Strategy<Value = ObservationLog> {
    prop::collection::vec((any::<bool>(), any::<bool>(), 0.0f64..500.0), 1..200).prop_map(|slots| {
        let mut log = ObservationLog::with_capacity(0, slots.len());
        for (idle, grab, rate) in slots {
            let grab = idle && grab;
            log.push(idle, grab, if grab { rate } else { 0.0 });
        }
        log
    })
}

proptest! {
    #[test]
    fn estimates_stay_in_range(logs in prop::collection::vec(arbitrary_log(), 1..20)) {
        let mut est = ChannelEstimate::new(0);
        for log in &logs {
            prop_assert!(log.validate().is_ok());
            if let Some(g) = estimate_grab_prob(log) {
                prop_assert!((0.0..=1.0).contains(&g));
            }
            est = estimate_mean_rate(log, &estimate_idle_prob(log, &est));
            prop_assert!((0.0..=1.0).contains(&est.theta_hat));
            prop_assert!(est.rate_hat >= 0.0);
        }
        prop_assert_eq!(est.periods_used, logs.len());
    }

    #[test]
    fn inconsistent_logs_rejected(slots in 1usize..50, at in 0usize..50) {
        let at = at % slots;
        let mut grabbed = vec![false; slots];
        grabbed[at] = true;
        let rate = vec![0.0; slots];
        // grabbed while busy
        prop_assert!(ObservationLog::new(0, vec![false; slots], grabbed, rate).is_err());
    }
}
