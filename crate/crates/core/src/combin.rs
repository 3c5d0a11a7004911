//! Binomial coefficients and lexicographic k-subset enumeration.

use num_bigint::BigUint;

/// `C(n, k)` in exact 128-bit arithmetic, `None` on overflow.
pub fn binomial(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for j in 0..k {
        // acc * (n - j) / (j + 1) stays integral at every step
        let num = (n - j) as u128;
        let den = (j + 1) as u128;
        let g = gcd(acc, den);
        let (a, d) = (acc / g, den / g);
        acc = a.checked_mul(num / d)?;
    }
    Some(acc)
}

/// `C(n, k)` with arbitrary precision.
pub fn binomial_big(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::from(0u32);
    }
    let k = k.min(n - k);
    let mut acc = BigUint::from(1u32);
    for j in 0..k {
        acc = acc * BigUint::from(n - j) / BigUint::from(j + 1);
    }
    acc
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// The `rank`-th (0-based) k-subset of `0..n` in lexicographic order.
pub fn unrank_combination(n: usize, k: usize, mut rank: u128) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    let mut x = 0usize;
    for i in 0..k {
        loop {
            let count = binomial((n - x - 1) as u64, (k - i - 1) as u64).unwrap_or(u128::MAX);
            if rank < count {
                out.push(x);
                x += 1;
                break;
            }
            rank -= count;
            x += 1;
        }
    }
    out
}

/// Advance `c` to the next k-subset of `0..n` in lexicographic order.
/// Returns `false` (leaving `c` untouched) when `c` is the last one.
pub fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_binomials() {
        assert_eq!(binomial(16, 8), Some(12870));
        assert_eq!(binomial(5, 0), Some(1));
        assert_eq!(binomial(3, 5), Some(0));
        assert_eq!(binomial(69, 9), Some(56_672_074_888));
        assert_eq!(binomial(128, 64).map(|v| v.to_string()), Some(binomial_big(128, 64).to_string()));
        assert_eq!(binomial(200, 100), None);
        assert_eq!(
            binomial_big(200, 100).to_string(),
            "90548514656103281165404177077484163874504589675413336841320"
        );
    }

    #[test]
    fn lexicographic_four_choose_two() {
        let mut c = vec![0, 1];
        let mut all = vec![c.clone()];
        while next_combination(&mut c, 4) {
            all.push(c.clone());
        }
        assert_eq!(
            all,
            vec![
                vec![0, 1],
                vec![0, 2],
                vec![0, 3],
                vec![1, 2],
                vec![1, 3],
                vec![2, 3]
            ]
        );
        for (r, expect) in all.iter().enumerate() {
            assert_eq!(&unrank_combination(4, 2, r as u128), expect);
        }
    }

    #[test]
    fn unrank_agrees_with_successor() {
        let (n, k) = (11, 4);
        let mut c: Vec<usize> = (0..k).collect();
        let mut r = 0u128;
        loop {
            assert_eq!(unrank_combination(n, k, r), c);
            r += 1;
            if !next_combination(&mut c, n) {
                break;
            }
        }
        assert_eq!(r, binomial(11, 4).unwrap());
    }
}
