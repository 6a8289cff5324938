//! Reference implementations written from first principles, used to check
//! the library's kernels. Deliberately naive: clarity over speed.

use rand::Rng;

/// Survival and Greenwood standard error at `t`, from explicit risk sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OraclePoint {
    pub n_risk: usize,
    pub surv: f64,
    pub std_err: f64,
}

pub fn km_oracle(times: &[f64], events: &[u8], t: f64) -> OraclePoint {
    let mut event_times: Vec<f64> = times.iter().zip(events).filter(|(_, &e)| e == 1).map(|(&x, _)| x).collect();
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();
    let mut surv = 1.0;
    let mut greenwood = 0.0;
    for &u in event_times.iter().filter(|&&u| u <= t) {
        let n = times.iter().filter(|&&x| x >= u).count() as f64;
        let d = times.iter().zip(events).filter(|(&x, &e)| x == u && e == 1).count() as f64;
        surv *= 1.0 - d / n;
        if n > d {
            greenwood += d / (n * (n - d));
        }
    }
    OraclePoint { n_risk: times.iter().filter(|&&x| x >= t).count(), surv, std_err: (surv * surv * greenwood).sqrt() }
}

/// Survival sample of size 1..=12 with integer times in 1..=6, so ties are common.
pub fn random_sample(rng: &mut impl Rng) -> (Vec<f64>, Vec<u8>) {
    let n = rng.gen_range(1..=12);
    let times = (0..n).map(|_| f64::from(rng.gen_range(1..=6u8))).collect();
    let events = (0..n).map(|_| u8::from(rng.gen_bool(0.6))).collect();
    (times, events)
}

/// Sample standard deviation, mean first then squared deviations.
pub fn two_pass_sd(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_on_small_example() {
        let t = [1.0, 2.0, 2.0, 3.0];
        let e = [1, 1, 0, 1];
        let p = km_oracle(&t, &e, 2.0);
        assert_eq!(p.n_risk, 3);
        assert!((p.surv - 0.75 * (2.0 / 3.0)).abs() < 1e-15);
        assert_eq!(km_oracle(&t, &e, 3.0).surv, 0.0);
    }

    #[test]
    fn sd_of_known_vector() {
        assert_eq!(two_pass_sd(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]), Some((32.0f64 / 7.0).sqrt()));
        assert_eq!(two_pass_sd(&[1.0]), None);
    }
}
