//! Log-factorials and binomial weights.

use std::sync::OnceLock;

const TABLE_LEN: usize = 1024;

fn table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = Vec::with_capacity(TABLE_LEN);
        let mut acc = 0.0;
        t.push(0.0);
        for k in 1..TABLE_LEN {
            acc += (k as f64).ln();
            t.push(acc);
        }
        t
    })
}

/// `ln(n!)`, exact summation of logarithms.
pub(crate) fn ln_factorial(n: usize) -> f64 {
    let t = table();
    if n < TABLE_LEN {
        return t[n];
    }
    let mut acc = t[TABLE_LEN - 1];
    for k in TABLE_LEN..=n {
        acc += (k as f64).ln();
    }
    acc
}

/// `ln C(n, k)` for `k <= n`.
pub(crate) fn ln_binomial(n: usize, k: usize) -> f64 {
    debug_assert!(k <= n);
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Bernoulli loss kernel `C(n, k) eta^k (1 - eta)^(n - k)`, zero for `k > n`.
pub(crate) fn bernoulli_weight(k: usize, n: usize, eta: f64) -> f64 {
    if k > n {
        return 0.0;
    }
    if eta >= 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    if eta <= 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    (ln_binomial(n, k) + k as f64 * eta.ln() + (n - k) as f64 * (1.0 - eta).ln()).exp()
}

/// `base^exp` with `0^0 = 1`.
pub(crate) fn powi0(base: f64, exp: usize) -> f64 {
    if exp == 0 {
        1.0
    } else {
        base.powi(exp as i32)
    }
}
