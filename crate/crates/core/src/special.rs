//! Special functions: smooth plateau steps, Γ at half-integers, Bessel functions of the first
//! kind for half-integer and integer orders.

use crate::scalar::Real;

/// Cross-over between the ascending series and the large-argument expansion.
pub const BESSEL_SERIES_LIMIT: f64 = 12.0;

fn exp_neg_inv<T: Real>(s: T) -> T {
    if s > T::zero() {
        (-s.recip()).exp()
    } else {
        T::zero()
    }
}

/// Smooth step: 0 for `s ≤ 0`, 1 for `s ≥ 1`, C^∞ in between.
pub fn smooth_step<T: Real>(s: T) -> T {
    if s <= T::zero() {
        return T::zero();
    }
    if s >= T::one() {
        return T::one();
    }
    let a = exp_neg_inv(s);
    let b = exp_neg_inv(T::one() - s);
    a / (a + b)
}

/// `Γ(m/2)` for a positive integer `m`.
pub fn gamma_half<T: Real>(m: u32) -> T {
    assert!(m >= 1, "gamma_half needs a positive argument");
    let half = T::of(0.5);
    let (mut value, mut x) = if m % 2 == 0 {
        (T::one(), T::one())
    } else {
        (T::PI().sqrt(), half)
    };
    // Γ(x + 1) = x Γ(x)
    let target = T::of_usize(m as usize) * half;
    while x < target - half {
        value *= x;
        x += T::one();
    }
    value
}

/// Surface area of the unit sphere `S^{n-1}` in `R^n`.
pub fn sphere_area<T: Real>(n: usize) -> T {
    let half_n = T::of_usize(n) * T::of(0.5);
    T::of(2.0) * T::PI().powf(half_n) / gamma_half::<T>(n as u32)
}

/// Volume of the unit ball in `R^n`.
pub fn ball_volume<T: Real>(n: usize) -> T {
    let half_n = T::of_usize(n) * T::of(0.5);
    T::PI().powf(half_n) / gamma_half::<T>(n as u32 + 2)
}

/// Order of a Bessel function, stored as twice its value so that half-integers are exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BesselOrder {
    twice: u32,
}

impl BesselOrder {
    pub fn half_integer(twice: u32) -> Self {
        Self { twice }
    }

    pub fn integer(nu: u32) -> Self {
        Self { twice: 2 * nu }
    }

    /// The order `(n-2)/2` that governs the Fourier transform of the sphere in `R^n`.
    pub fn sphere(n: usize) -> Self {
        assert!(n >= 2, "sphere order needs n >= 2");
        Self { twice: n as u32 - 2 }
    }

    pub fn value<T: Real>(&self) -> T {
        T::of_usize(self.twice as usize) * T::of(0.5)
    }
}

/// `J_ν(z)` for `z ≥ 0`.
pub fn bessel_j<T: Real>(order: BesselOrder, z: T) -> T {
    assert!(z >= T::zero(), "bessel_j is evaluated for non-negative arguments only");
    if z <= T::of(BESSEL_SERIES_LIMIT) {
        bessel_j_series(order, z)
    } else {
        bessel_j_asymptotic(order, z)
    }
}

/// Ascending power series.
pub fn bessel_j_series<T: Real>(order: BesselOrder, z: T) -> T {
    let nu: T = order.value();
    if z == T::zero() {
        return if order.twice == 0 { T::one() } else { T::zero() };
    }
    let half_z = z * T::of(0.5);
    let mut term = half_z.powf(nu) / gamma_half::<T>(order.twice + 2);
    let mut sum = term;
    let q = half_z * half_z;
    let eps = T::epsilon();
    let mut m = T::zero();
    for _ in 0..500 {
        m += T::one();
        term = -term * q / (m * (m + nu));
        sum += term;
        if term.abs() <= eps * sum.abs() && m > z {
            break;
        }
    }
    sum
}

/// Hankel large-argument expansion, summed until the terms stop decreasing. For half-integer
/// orders the expansion terminates and is exact.
pub fn bessel_j_asymptotic<T: Real>(order: BesselOrder, z: T) -> T {
    let nu: T = order.value();
    let mu = T::of(4.0) * nu * nu;
    let eight_z = T::of(8.0) * z;
    let mut p = T::one();
    let mut q = T::zero();
    let mut a = T::one();
    let mut prev = T::infinity();
    for k in 1..60usize {
        let odd = T::of_usize(2 * k - 1);
        a = a * (mu - odd * odd) / (T::of_usize(k) * eight_z);
        if a == T::zero() {
            break;
        }
        if a.abs() >= prev {
            break;
        }
        prev = a.abs();
        let sign = if (k / 2) % 2 == 0 { T::one() } else { -T::one() };
        if k % 2 == 0 {
            p += sign * a;
        } else {
            q += sign * a;
        }
        if a.abs() < T::epsilon() {
            break;
        }
    }
    let omega = z - (nu * T::of(0.5) + T::of(0.25)) * T::PI();
    (T::of(2.0) / (T::PI() * z)).sqrt() * (p * omega.cos() - q * omega.sin())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_half_values() {
        assert!((gamma_half::<f64>(1) - std::f64::consts::PI.sqrt()).abs() < 1e-15);
        assert!((gamma_half::<f64>(2) - 1.0).abs() < 1e-15);
        assert!((gamma_half::<f64>(7) - 15.0 / 8.0 * std::f64::consts::PI.sqrt()).abs() < 1e-14);
        assert!((gamma_half::<f64>(10) - 24.0).abs() < 1e-12);
    }

    #[test]
    fn sphere_constants() {
        let pi = std::f64::consts::PI;
        assert!((sphere_area::<f64>(3) - 4.0 * pi).abs() < 1e-12);
        assert!((sphere_area::<f64>(5) - 8.0 * pi * pi / 3.0).abs() < 1e-12);
        assert!((ball_volume::<f64>(5) - 8.0 * pi * pi / 15.0).abs() < 1e-12);
        assert!((ball_volume::<f64>(2) - pi).abs() < 1e-12);
    }

    #[test]
    fn half_integer_orders_match_elementary_forms() {
        for &z in &[0.3, 1.0, 4.5, 11.9, 12.1, 30.0, 62.8] {
            let j_half = (2.0 / (std::f64::consts::PI * z)).sqrt() * z.sin();
            let j_three_halves = (2.0 / (std::f64::consts::PI * z)).sqrt() * (z.sin() / z - z.cos());
            assert!((bessel_j(BesselOrder::half_integer(1), z) - j_half).abs() < 1e-12, "z={z}");
            assert!(
                (bessel_j(BesselOrder::half_integer(3), z) - j_three_halves).abs() < 1e-12,
                "z={z}"
            );
        }
    }

    #[test]
    fn integer_order_reference_values() {
        // Abramowitz & Stegun table values.
        let cases = [
            (0, 1.0, 0.765_197_686_557_966_6),
            (0, 10.0, -0.245_935_764_451_348_3),
            (1, 2.0, 0.576_724_807_756_873_4),
            (0, 20.0, 0.167_024_664_340_583_3),
            (1, 15.0, 0.205_104_038_613_522_5),
        ];
        for (nu, z, expected) in cases {
            let got: f64 = bessel_j(BesselOrder::integer(nu), z);
            assert!((got - expected).abs() < 1e-9, "J_{nu}({z}) = {got}, expected {expected}");
        }
    }

    #[test]
    fn series_and_expansion_agree_at_crossover() {
        for twice in 0..8 {
            let o = BesselOrder::half_integer(twice);
            let a = bessel_j_series(o, 12.0f64);
            let b = bessel_j_asymptotic(o, 12.0f64);
            assert!((a - b).abs() < 1e-9, "order {twice}/2: {a} vs {b}");
        }
    }

    #[test]
    fn smooth_step_is_monotone_and_symmetric() {
        let mut prev = 0.0;
        for i in 0..=100 {
            let s = i as f64 / 100.0;
            let v = smooth_step(s);
            assert!(v >= prev);
            assert!((v + smooth_step(1.0 - s) - 1.0).abs() < 1e-14);
            prev = v;
        }
        assert_eq!(smooth_step(-0.1f64), 0.0);
        assert_eq!(smooth_step(1.1f64), 1.0);
    }
}
