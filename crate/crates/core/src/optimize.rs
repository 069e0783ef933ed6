//! Scan-then-refine scalar maximisation on `[0, upper]`.
//!
//! A geometric grid brackets the global maximum; the bracket is then refined
//! by bisection on the analytic score when it changes sign across the
//! bracket, and by golden-section search otherwise.

/// Number of geometric grid points between `tol` and `upper`.
pub const SCAN_POINTS: usize = 60;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Maximum {
    pub x: f64,
    pub value: f64,
    pub iterations: usize,
    /// Maximum attained at `x = 0`.
    pub boundary: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum ScanError {
    /// Largest grid value sits at the upper bound.
    AtUpperBound,
}

/// Maximises `value` over `[0, upper]` (over `(0, upper]` when
/// `include_zero` is false, in which case `value(0)` is never called).
pub(crate) fn maximize_on_half_line<F, S>(
    value: F,
    score: S,
    include_zero: bool,
    upper: f64,
    tol: f64,
) -> Result<Maximum, ScanError>
where
    F: Fn(f64) -> f64,
    S: Fn(f64) -> f64,
{
    let f = |x: f64| {
        let v = value(x);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let mut grid = Vec::with_capacity(SCAN_POINTS + 1);
    if include_zero {
        grid.push(0.0);
    }
    let ratio = (upper / tol).ln() / (SCAN_POINTS - 1) as f64;
    grid.extend((0..SCAN_POINTS).map(|j| {
        if j == SCAN_POINTS - 1 {
            upper
        } else {
            tol * (ratio * j as f64).exp()
        }
    }));
    let vals: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    let mut best = 0;
    for (j, v) in vals.iter().enumerate() {
        if *v > vals[best] {
            best = j;
        }
    }
    let mut iterations = grid.len();
    if best == grid.len() - 1 {
        return Err(ScanError::AtUpperBound);
    }
    if include_zero && best == 0 && score(0.0) <= 0.0 {
        return Ok(Maximum {
            x: 0.0,
            value: vals[0],
            iterations: iterations + 1,
            boundary: true,
        });
    }
    let lo = if best == 0 { 0.0 } else { grid[best - 1] };
    let lo = if include_zero || lo > 0.0 { lo } else { 0.0 };
    let hi = grid[best + 1];

    let lo_score = if lo == 0.0 && !include_zero {
        f64::INFINITY
    } else {
        score(lo)
    };
    let hi_score = score(hi);
    iterations += 2;
    let (x, n) = if lo_score > 0.0 && hi_score < 0.0 {
        bisect_decreasing(&score, lo, hi, tol)
    } else {
        golden_section(&f, lo, hi, tol)
    };
    iterations += n;
    let fx = f(x);

    // ties within rounding resolve to the interior point
    if include_zero && vals[0] > fx + 4.0 * f64::EPSILON * fx.abs() {
        return Ok(Maximum {
            x: 0.0,
            value: vals[0],
            iterations,
            boundary: true,
        });
    }
    if fx < vals[best] {
        // refinement lost to the grid point (non-unimodal bracket)
        return Ok(Maximum {
            x: grid[best],
            value: vals[best],
            iterations,
            boundary: grid[best] == 0.0,
        });
    }
    Ok(Maximum {
        x,
        value: fx,
        iterations,
        boundary: false,
    })
}

/// Root of a function that is positive at `lo` and negative at `hi`.
pub(crate) fn bisect_decreasing<S: Fn(f64) -> f64>(
    score: &S,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> (f64, usize) {
    let mut n = 0;
    while hi - lo > tol && n < 400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let s = score(mid);
        n += 1;
        if s > 0.0 {
            lo = mid;
        } else if s < 0.0 {
            hi = mid;
        } else {
            return (mid, n);
        }
    }
    (0.5 * (lo + hi), n)
}

/// Golden-section maximisation of `f` on `[lo, hi]`.
pub(crate) fn golden_section<F: Fn(f64) -> f64>(f: &F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, usize) {
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut n = 2;
    while hi - lo > tol && n < 400 {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d);
        }
        n += 1;
    }
    let x = if fc >= fd { c } else { d };
    (x, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interior_quadratic() {
        let m = maximize_on_half_line(|x| -(x - 3.0).powi(2), |x| -2.0 * (x - 3.0), true, 1e3, 1e-10)
            .unwrap();
        assert!((m.x - 3.0).abs() < 1e-10);
        assert!(!m.boundary);
    }

    #[test]
    fn decreasing_objective_hits_zero() {
        let m = maximize_on_half_line(|x| -x, |_| -1.0, true, 1e3, 1e-10).unwrap();
        assert_eq!(m.x, 0.0);
        assert!(m.boundary);
    }

    #[test]
    fn tiny_positive_maximiser_is_found() {
        let peak = 3e-11;
        let m = maximize_on_half_line(
            |x| -(x - peak).powi(2),
            |x| -2.0 * (x - peak),
            true,
            1.0,
            1e-13,
        )
        .unwrap();
        assert!(!m.boundary);
        assert!((m.x - peak).abs() < 1e-13);
    }

    #[test]
    fn increasing_objective_is_an_error() {
        let r = maximize_on_half_line(|x| x, |_| 1.0, true, 10.0, 1e-6);
        assert_eq!(r, Err(ScanError::AtUpperBound));
    }

    #[test]
    fn golden_section_without_score() {
        // score gives no sign information; golden section has to do the work
        let (x, _) = golden_section(&|x: f64| -(x - 0.3).abs(), 0.0, 1.0, 1e-9);
        assert!((x - 0.3).abs() < 1e-8);
    }

    #[test]
    fn excluded_zero_never_evaluated() {
        let m = maximize_on_half_line(
            |x| {
                assert!(x > 0.0);
                x.ln() - x
            },
            |x| 1.0 / x - 1.0,
            false,
            1e4,
            1e-9,
        )
        .unwrap();
        assert!((m.x - 1.0).abs() < 1e-9);
    }
}
