//! Exact summation of `f64` values. The rounded result depends only on the
//! multiset of summands, never on their order or grouping, so partial sums
//! from any partition reduce to the same bits.

const LIMBS: usize = 36;
/// Bit position of 2^0 above the smallest subnormal.
const BIAS: i32 = 1074;

/// Fixed-point two's complement accumulator spanning the whole `f64` range
/// with 128 bits of carry headroom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExactSum {
    limbs: [u64; LIMBS],
}

impl Default for ExactSum {
    fn default() -> Self {
        ExactSum { limbs: [0; LIMBS] }
    }
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add a finite value exactly.
    pub fn add(&mut self, x: f64) {
        assert!(x.is_finite(), "non-finite summand {x}");
        if x == 0.0 {
            return;
        }
        let bits = x.to_bits();
        let exp = ((bits >> 52) & 0x7ff) as i32;
        let frac = bits & ((1u64 << 52) - 1);
        let (mant, e) = if exp == 0 { (frac, -BIAS) } else { (frac | (1u64 << 52), exp - 1075) };
        let off = (e + BIAS) as usize;
        let wide = (mant as u128) << (off % 64);
        let (lo, hi) = (wide as u64, (wide >> 64) as u64);
        if x > 0.0 {
            self.add_at(off / 64, lo, hi);
        } else {
            self.sub_at(off / 64, lo, hi);
        }
    }

    fn add_at(&mut self, i: usize, lo: u64, hi: u64) {
        let (s, c1) = self.limbs[i].overflowing_add(lo);
        self.limbs[i] = s;
        let (s, c2) = self.limbs[i + 1].overflowing_add(hi);
        let (s, c3) = s.overflowing_add(c1 as u64);
        self.limbs[i + 1] = s;
        let mut carry = c2 || c3;
        let mut k = i + 2;
        while carry && k < LIMBS {
            let (s, c) = self.limbs[k].overflowing_add(1);
            self.limbs[k] = s;
            carry = c;
            k += 1;
        }
    }

    fn sub_at(&mut self, i: usize, lo: u64, hi: u64) {
        let (s, b1) = self.limbs[i].overflowing_sub(lo);
        self.limbs[i] = s;
        let (s, b2) = self.limbs[i + 1].overflowing_sub(hi);
        let (s, b3) = s.overflowing_sub(b1 as u64);
        self.limbs[i + 1] = s;
        let mut borrow = b2 || b3;
        let mut k = i + 2;
        while borrow && k < LIMBS {
            let (s, b) = self.limbs[k].overflowing_sub(1);
            self.limbs[k] = s;
            borrow = b;
            k += 1;
        }
    }

    /// Add another accumulator exactly.
    pub fn merge(&mut self, other: &ExactSum) {
        let mut carry = false;
        for (a, b) in self.limbs.iter_mut().zip(&other.limbs) {
            let (s, c1) = a.overflowing_add(*b);
            let (s, c2) = s.overflowing_add(carry as u64);
            *a = s;
            carry = c1 || c2;
        }
    }

    /// The exact sum rounded to nearest, ties to even.
    pub fn value(&self) -> f64 {
        let negative = self.limbs[LIMBS - 1] >> 63 == 1;
        let mut mag = self.limbs;
        if negative {
            let mut carry = true;
            for l in mag.iter_mut() {
                let (s, c) = (!*l).overflowing_add(carry as u64);
                *l = s;
                carry = c;
            }
        }
        let Some(t) = mag.iter().rposition(|&l| l != 0) else {
            return 0.0;
        };
        let lz = mag[t].leading_zeros();
        let mut top = mag[t] << lz;
        let mut sticky = mag[..t.saturating_sub(1)].iter().any(|&l| l != 0);
        if t > 0 {
            if lz > 0 {
                top |= mag[t - 1] >> (64 - lz);
                sticky |= mag[t - 1] << lz != 0;
            } else {
                sticky |= mag[t - 1] != 0;
            }
        }
        // 64 bits hold the 53-bit mantissa, the rounding bit and a sticky bit
        let f = (top | sticky as u64) as f64;
        let shift = (t * 64) as i32 + 63 - lz as i32 - 63 - BIAS;
        let v = scale_pow2(f, shift);
        if negative {
            -v
        } else {
            v
        }
    }
}

/// `x * 2^k` in exact power-of-two steps.
fn scale_pow2(mut x: f64, mut k: i32) -> f64 {
    let pow = |j: i32| f64::from_bits(((j + 1023) as u64) << 52);
    while k > 1000 {
        x *= pow(1000);
        k -= 1000;
    }
    while k < -1000 {
        x *= pow(-1000);
        k += 1000;
    }
    x * pow(k)
}

/// Exact sum of a slice.
pub fn exact_sum(values: &[f64]) -> f64 {
    let mut s = ExactSum::new();
    values.iter().for_each(|&v| s.add(v));
    s.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};

    #[test]
    fn cancellation_and_rounding() {
        assert_eq!(exact_sum(&[1e16, 1.0, -1e16]), 1.0);
        assert_eq!(exact_sum(&[]), 0.0);
        assert_eq!(exact_sum(&[3.5, -3.5]), 0.0);
        let big = 2f64.powi(53);
        // ties to even, and a sticky bit breaking the tie
        assert_eq!(exact_sum(&[big, 1.0]), big);
        assert_eq!(exact_sum(&[big, 1.0, 2f64.powi(-40)]), big + 2.0);
        assert_eq!(exact_sum(&[-big, -1.0, -(2f64.powi(-40))]), -(big + 2.0));
        assert_eq!(exact_sum(&[f64::from_bits(1), f64::from_bits(1)]), f64::from_bits(2));
        assert_eq!(exact_sum(&[f64::MAX, f64::MAX, -f64::MAX]), f64::MAX);
        assert_eq!(exact_sum(&[0.1, 0.2]), 0.1 + 0.2);
    }

    #[test]
    fn matches_integer_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let ks: Vec<i64> = (0..50).map(|_| rng.random_range(-(1i64 << 60)..(1i64 << 60))).collect();
            let scale = 2f64.powi(rng.random_range(-300..300));
            // `k as f64` is the exact integer value of each summand
            let vals: Vec<f64> = ks.iter().map(|&k| k as f64 * scale).collect();
            let exact: i128 = ks.iter().map(|&k| (k as f64) as i128).sum();
            assert_eq!(exact_sum(&vals), exact as f64 * scale);
        }
    }

    #[test]
    fn order_and_grouping_do_not_matter() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut vals: Vec<f64> = (0..500)
            .map(|_| rng.random_range(-1.0..1.0) * 10f64.powi(rng.random_range(-30..30)))
            .collect();
        let reference = exact_sum(&vals);
        for _ in 0..20 {
            vals.shuffle(&mut rng);
            assert_eq!(exact_sum(&vals).to_bits(), reference.to_bits());
            let cut = rng.random_range(0..vals.len());
            let mut a = ExactSum::new();
            let mut b = ExactSum::new();
            vals[..cut].iter().for_each(|&v| a.add(v));
            vals[cut..].iter().for_each(|&v| b.add(v));
            b.merge(&a);
            assert_eq!(b.value().to_bits(), reference.to_bits());
        }
    }
}
