use proptest::prelude::*;

use spotcheck::extractor::{
    check_set_x, is_prime, max_kout, seed_length, smallest_prime_above, ExtractorParams,
};

const M_IN: u64 = 14_698_652_631_040;
const SIGMA_IN: f64 = 1_181_264_480.0;
const EPS_EXT: f64 = 1.78e-9;
const EPS: f64 = 5.7e-7;
const BETA: f64 = 4.7614e-8;

fn sieve(limit: usize) -> Vec<bool> {
    let mut p = vec![true; limit + 1];
    p[0] = false;
    p[1] = false;
    let mut i = 2;
    while i * i <= limit {
        if p[i] {
            for m in (i * i..=limit).step_by(i) {
                p[m] = false;
            }
        }
        i += 1;
    }
    p
}

#[test]
fn primes_agree_with_sieve_below_a_million() {
    let limit = 1_000_000;
    let p = sieve(limit + 200);
    for (n, &prime) in p.iter().enumerate().take(limit + 1) {
        assert_eq!(is_prime(n as u64), prime, "{n}");
    }
    // Walk down from the top so each answer is the next sieve prime.
    let mut next = (limit + 1..).find(|&m| p[m]).unwrap();
    for n in (0..=limit).rev() {
        assert_eq!(smallest_prime_above(n as u64).unwrap(), next as u64, "{n}");
        if p[n] {
            next = n;
        }
    }
}

#[test]
fn prime_examples() {
    assert_eq!(smallest_prime_above(330).unwrap(), 331);
    assert_eq!(smallest_prime_above(1).unwrap(), 2);
    assert_eq!(smallest_prime_above(7).unwrap(), 11);
    assert!(smallest_prime_above(u64::MAX).is_err());
}

fn kout_scan(sigma_in: f64, eps_ext: f64) -> Option<u64> {
    let rhs = sigma_in - 6.0 + 4.0 * eps_ext.log2();
    let mut best = None;
    let mut k = 1u64;
    while (k as f64) <= rhs {
        if k as f64 + 4.0 * (k as f64).log2() <= rhs {
            best = Some(k);
        }
        k += 1;
    }
    best
}

#[test]
fn max_kout_matches_linear_scan() {
    // sigma = 10 at eps = 1/2 leaves nothing.
    assert!(max_kout(10.0, 0.5).is_err());
    assert_eq!(kout_scan(10.0, 0.5), None);
    for s in 11..3000 {
        for &eps in &[0.5, 0.1, 1e-3, 2f64.powi(-20)] {
            let sigma = s as f64 + 0.37;
            assert_eq!(
                max_kout(sigma, eps).ok(),
                kout_scan(sigma, eps),
                "sigma {sigma} eps {eps}"
            );
        }
    }
}

#[test]
fn seed_length_golden_value() {
    let p = ExtractorParams::budget(M_IN, SIGMA_IN, EPS_EXT, EPS).unwrap();
    assert_eq!(p.k_out, 1_181_264_237);
    assert_eq!(p.d_s, 3_725_074);
    assert!(is_prime(p.w));
    assert_eq!(p.d_s % (p.w * p.w), 0);
}

#[test]
fn seed_length_small_case_by_hand() {
    // 4 m k^2 / eps^2 = 2^2 2^20 2^20 2^40 = 2^82; the prime above 164 is 167.
    // (log2(2^10 - e) - log2(167 - e)) / (log2 e - log2(e - 1)) = 3.98..., so the factor is 5.
    let (d_s, w) = seed_length(1 << 20, 1 << 10, 2f64.powi(-20)).unwrap();
    assert_eq!(w, 167);
    assert_eq!(d_s, 167 * 167 * 5);

    // One more input bit pushes the design size past the power of two.
    let (_, w) = seed_length((1 << 20) + 1, 1 << 10, 2f64.powi(-20)).unwrap();
    assert_eq!(w, smallest_prime_above(166).unwrap());
}

#[test]
fn seed_length_floor_is_two_w_squared() {
    // k_out below w makes the log ratio nonpositive.
    for &(m, k, eps) in &[
        (1u64 << 20, 100u64, 1e-3),
        (1 << 30, 50, 1e-9),
        (1000, 10, 0.1),
    ] {
        let (d_s, w) = seed_length(m, k, eps).unwrap();
        assert!(w > k);
        assert_eq!(d_s, 2 * w * w);
    }
}

#[test]
fn seed_length_rejects_degenerate_inputs() {
    assert!(seed_length(0, 10, 0.1).is_err());
    assert!(seed_length(10, 0, 0.1).is_err());
    assert!(seed_length(10, 10, 0.0).is_err());
    assert!(seed_length(10, 2, 0.1).is_err());
}

#[test]
fn admissible_set_examples() {
    let p = ExtractorParams::budget(M_IN, SIGMA_IN, EPS_EXT, EPS).unwrap();
    assert!(check_set_x(&p, BETA));

    let too_much_entropy = ExtractorParams {
        sigma_in: M_IN as f64 + 1.0,
        ..p
    };
    assert!(!check_set_x(&too_much_entropy, BETA));

    let no_split = ExtractorParams { eps_ext: EPS, ..p };
    assert!(!check_set_x(&no_split, BETA));

    let too_long = ExtractorParams {
        k_out: p.k_out + 1,
        ..p
    };
    assert!(!check_set_x(&too_long, BETA));

    // The seed constraint is an upper bound, met with equality by the budget.
    let long_seed = ExtractorParams {
        d_s: p.d_s + 1,
        ..p
    };
    assert!(!check_set_x(&long_seed, BETA));
    let short_seed = ExtractorParams {
        d_s: p.d_s - 1,
        ..p
    };
    assert!(check_set_x(&short_seed, BETA));

    // At beta = 2^-40 the cap m_in + (1 + beta) / beta log2(eps) is negative.
    assert!(!check_set_x(&p, 2f64.powi(-40)));
}

#[test]
fn slacks_of_the_reference_budget() {
    let p = ExtractorParams::budget(M_IN, SIGMA_IN, EPS_EXT, EPS).unwrap();
    let s = p.slacks(Some(BETA));
    assert!(
        s.output_length >= 0.0 && s.output_length < 1.0 + 4.0 * (1.0 + 1.0 / p.k_out as f64).log2()
    );
    assert_eq!(s.seed_length, 0);
    assert!(s.entropy_cap.unwrap() > 0.0);
    assert!((s.error_split - (EPS - EPS_EXT)).abs() < 1e-20);
    assert!(p.slacks(None).entropy_cap.is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn budgets_are_admissible_and_maximal(
        log_m in 10.0f64..44.0,
        frac in 0.01f64..0.99,
        log_eps in -40.0f64..-2.0,
        split in 0.01f64..0.99,
    ) {
        let m_in = 2f64.powf(log_m) as u64;
        let sigma_in = (m_in as f64 * frac).max(1.0);
        let eps = 2f64.powf(log_eps);
        let eps_ext = eps * split;
        let Ok(p) = ExtractorParams::budget(m_in, sigma_in, eps_ext, eps) else {
            // Only budgets too small for the seed formula may be rejected.
            prop_assert!(sigma_in < 1e6);
            prop_assert!(kout_scan(sigma_in, eps_ext).is_none_or(|k| k <= 2));
            return Ok(());
        };
        let s = p.slacks(None);
        prop_assert!(s.output_length >= 0.0);
        prop_assert!(s.seed_length >= 0);
        prop_assert!(s.error_split > 0.0);
        let k = (p.k_out + 1) as f64;
        prop_assert!(k + 4.0 * k.log2() > sigma_in - 6.0 + 4.0 * eps_ext.log2());
        // At beta = 1 the cap is m_in + 2 log2(eps).
        if sigma_in <= m_in as f64 + 2.0 * eps.log2() {
            prop_assert!(check_set_x(&p, 1.0));
        }
    }
}
