//! Elementary arithmetic functions: gcd/lcm, factorization, Möbius, divisors.

pub use num_integer::{gcd, lcm};

/// Prime factorization by trial division, as `(prime, exponent)` pairs in increasing order.
pub fn factorize(mut n: u64) -> Vec<(u64, u32)> {
    assert!(n >= 1, "factorize expects a positive integer");
    let mut out = Vec::new();
    let mut p = 2u64;
    while p * p <= n {
        if n % p == 0 {
            let mut e = 0;
            while n % p == 0 {
                n /= p;
                e += 1;
            }
            out.push((p, e));
        }
        p += if p == 2 { 1 } else { 2 };
    }
    if n > 1 {
        out.push((n, 1));
    }
    out
}

pub fn mobius(n: u64) -> i64 {
    let f = factorize(n);
    if f.iter().any(|&(_, e)| e > 1) {
        0
    } else if f.len() % 2 == 0 {
        1
    } else {
        -1
    }
}

pub fn is_squarefree(n: u64) -> bool {
    factorize(n).iter().all(|&(_, e)| e == 1)
}

pub fn is_prime(n: u64) -> bool {
    n >= 2 && factorize(n) == [(n, 1)]
}

/// All positive divisors of `n` in increasing order.
pub fn divisors(n: u64) -> Vec<u64> {
    let mut res = vec![1u64];
    for (p, e) in factorize(n) {
        let len = res.len();
        let mut pp = 1;
        for _ in 0..e {
            pp *= p;
            for i in 0..len {
                res.push(res[i] * pp);
            }
        }
    }
    res.sort_unstable();
    res
}

/// Units of `Z_q`, with the convention `U_1 = Z_1 = {0}`.
pub fn units(q: u64) -> Vec<u64> {
    if q == 1 {
        return vec![0];
    }
    (1..q).filter(|&a| gcd(a, q) == 1).collect()
}

pub fn is_unit(a: u64, q: u64) -> bool {
    if q == 1 {
        a == 0
    } else {
        gcd(a % q, q) == 1
    }
}

/// `base^exp mod m` for `m ≥ 1`, base given as any integer.
pub fn pow_mod(base: i128, exp: u32, m: u64) -> u64 {
    let m128 = m as i128;
    let mut b = base.rem_euclid(m128) as u128;
    let mut acc = 1u128 % m as u128;
    let mut e = exp;
    while e > 0 {
        if e & 1 == 1 {
            acc = acc * b % m as u128;
        }
        b = b * b % m as u128;
        e >>= 1;
    }
    acc as u64
}

/// Table of Möbius values `μ(0..=n)` (μ(0) set to 0), by a linear sieve.
pub fn mobius_table(n: usize) -> Vec<i8> {
    let mut mu = vec![1i8; n + 1];
    let mut is_comp = vec![false; n + 1];
    let mut primes = Vec::new();
    mu[0] = 0;
    for i in 2..=n {
        if !is_comp[i] {
            primes.push(i);
            mu[i] = -1;
        }
        for &p in &primes {
            if i * p > n {
                break;
            }
            is_comp[i * p] = true;
            if i % p == 0 {
                mu[i * p] = 0;
                break;
            }
            mu[i * p] = -mu[i];
        }
    }
    mu
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mobius_small_values() {
        let expected = [1, -1, -1, 0, -1, 1, -1, 0, 0, 1, -1, 0];
        for (i, &m) in expected.iter().enumerate() {
            assert_eq!(mobius(i as u64 + 1), m, "mu({})", i + 1);
        }
    }

    #[test]
    fn sieve_agrees_with_factorization() {
        let table = mobius_table(500);
        for n in 1..=500u64 {
            assert_eq!(table[n as usize] as i64, mobius(n));
        }
    }

    #[test]
    fn divisor_sum_of_mobius_is_indicator() {
        for n in 1..200u64 {
            let s: i64 = divisors(n).into_iter().map(mobius).sum();
            assert_eq!(s, i64::from(n == 1));
        }
    }

    #[test]
    fn units_convention() {
        assert_eq!(units(1), vec![0]);
        assert_eq!(units(6), vec![1, 5]);
        assert!(is_unit(0, 1));
        assert!(!is_unit(2, 4));
    }

    #[test]
    fn pow_mod_handles_negative_base() {
        assert_eq!(pow_mod(-2, 3, 5), 2); // -8 mod 5
        assert_eq!(pow_mod(7, 0, 1), 0);
    }
}
