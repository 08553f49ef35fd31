//! Legendre polynomial evaluation by the three-term recurrence
//!
//! ```text
//!     (n+1) P_{n+1}(t) = (2n+1) t P_n(t) - n P_{n-1}(t),  P_0 = 1, P_1 = t.
//! ```
//!
//! Everything downstream (node solves, quadrature weights, Birkhoff matrix
//! assembly) evaluates Legendre polynomials through this module.

/// Value of P_n at `t`.
pub fn legendre(n: usize, t: f64) -> f64 {
    legendre_pair(n, t).0
}

/// `(P_n(t), P_{n-1}(t))`; the pair is what derivative formulas consume.
/// For n = 0 the second component is 0.
pub fn legendre_pair(n: usize, t: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut prev = 1.0; // P_0
    let mut cur = t; // P_1
    for k in 1..n {
        let next = ((2 * k + 1) as f64 * t * cur - k as f64 * prev) / (k + 1) as f64;
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// Derivative of P_n at `t`, valid for |t| < 1:
///
/// ```text
///     (1 - t^2) P'_n(t) = n (P_{n-1}(t) - t P_n(t)).
/// ```
///
/// At t = ±1 the closed form P'_n(±1) = (±1)^{n-1} n(n+1)/2 is used.
pub fn legendre_deriv(n: usize, t: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    if (1.0 - t * t).abs() < 1e-14 {
        let sign = if t > 0.0 {
            1.0
        } else if n % 2 == 1 {
            1.0
        } else {
            -1.0
        };
        return sign * nf * (nf + 1.0) / 2.0;
    }
    let (pn, pn1) = legendre_pair(n, t);
    nf * (pn1 - t * pn) / (1.0 - t * t)
}

/// Values P_0(t) .. P_n(t) in one recurrence sweep.
pub fn legendre_row(n: usize, t: f64, out: &mut [f64]) {
    debug_assert_eq!(out.len(), n + 1);
    out[0] = 1.0;
    if n == 0 {
        return;
    }
    out[1] = t;
    for k in 1..n {
        out[k + 1] = ((2 * k + 1) as f64 * t * out[k] - k as f64 * out[k - 1]) / (k + 1) as f64;
    }
}
