//! Scalar quadrature and one-dimensional minimization.

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(&mut f, a, b, fa, fm, fb, whole, tol, 48)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol || (b - a) < 1e-14 {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for a minimizer of `f` on `[a, b]`; returns `(argmin, min)`.
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a) > tol {
        // `<=` keeps the left point on ties.
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Probe times on `[0, horizon]`: zero, a geometric ladder near zero, then a uniform grid.
pub fn probe_times(horizon: f64, count: usize) -> Vec<f64> {
    if horizon <= 0.0 {
        return vec![0.0];
    }
    let count = count.max(4);
    let n_geo = count / 4;
    let n_uni = count - n_geo - 1;
    let first_uniform = horizon / n_uni as f64;
    let smallest = first_uniform * 1e-4;
    let mut out = Vec::with_capacity(count);
    out.push(0.0);
    let ratio = (first_uniform / smallest).powf(1.0 / n_geo as f64);
    let mut t = smallest;
    for _ in 0..n_geo {
        out.push(t);
        t *= ratio;
    }
    for k in 1..=n_uni {
        out.push(horizon * k as f64 / n_uni as f64);
    }
    out.dedup_by(|a, b| (*a - *b).abs() < 1e-15 * horizon);
    out
}

/// Global minimization on `[0, horizon]`: probe grid, then golden-section refinement
/// around the best probe. Ties (within `tie_tol`) go to the smaller time.
///
/// Returns `(argmin, min)`.
pub fn minimize_on_interval<F: FnMut(f64) -> f64>(
    mut f: F,
    horizon: f64,
    probes: usize,
    t_tol: f64,
    tie_tol: f64,
) -> (f64, f64) {
    let times = probe_times(horizon, probes);
    let values: Vec<f64> = times.iter().map(|&t| f(t)).collect();
    refine_probes(&mut f, &times, &values, t_tol, tie_tol)
}

/// Refinement step of [`minimize_on_interval`] for callers that evaluated the
/// probes themselves.
pub fn refine_probes<F: FnMut(f64) -> f64>(
    f: &mut F,
    times: &[f64],
    values: &[f64],
    t_tol: f64,
    tie_tol: f64,
) -> (f64, f64) {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let k = values
        .iter()
        .position(|&v| v <= min + tie_tol)
        .expect("probe set is never empty");
    let (mut best_t, mut best_v) = (times[k], values[k]);
    if times.len() < 2 {
        return (best_t, best_v);
    }
    let lo = if k == 0 { times[0] } else { times[k - 1] };
    let hi = if k + 1 < times.len() { times[k + 1] } else { times[k] };
    if hi > lo {
        let (t, v) = golden_section(&mut *f, lo, hi, t_tol);
        if v < best_v - tie_tol {
            best_t = t;
            best_v = v;
        }
    }
    (best_t, best_v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_integrates_polynomials_and_exponentials() {
        let v = adaptive_simpson(|x| x * x * x - 2.0 * x, 0.0, 2.0, 1e-12);
        assert!((v - 0.0).abs() < 1e-12);
        let v = adaptive_simpson(|x| (-3.0 * x).exp(), 0.0, 4.0, 1e-12);
        assert!((v - (1.0 - (-12.0f64).exp()) / 3.0).abs() < 1e-11);
    }

    #[test]
    fn simpson_handles_kinks() {
        let v = adaptive_simpson(|x: f64| (x - 0.3).abs(), 0.0, 1.0, 1e-10);
        assert!((v - (0.045 + 0.245)).abs() < 1e-9);
    }

    #[test]
    fn golden_finds_parabola_minimum() {
        let (t, v) = golden_section(|x| (x - 1.3) * (x - 1.3) + 0.5, 0.0, 4.0, 1e-9);
        assert!((t - 1.3).abs() < 1e-8);
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn probe_grid_shape() {
        let p = probe_times(2.0, 64);
        assert_eq!(p[0], 0.0);
        assert_eq!(*p.last().unwrap(), 2.0);
        assert!(p.windows(2).all(|w| w[1] > w[0]));
        assert!(p.len() <= 64 && p.len() >= 60);
    }

    #[test]
    fn minimizer_prefers_smaller_time_on_ties() {
        // flat after 0.5
        let f = |t: f64| if t < 0.5 { 1.0 - t } else { 0.5 };
        let (t, v) = minimize_on_interval(f, 3.0, 64, 1e-9, 1e-12);
        assert!((v - 0.5).abs() < 1e-12);
        assert!(t <= 0.5 + 0.05, "t = {t}");
    }

    #[test]
    fn minimizer_finds_global_among_local_minima() {
        let f = |t: f64| (6.0 * t).cos() + 0.1 * t;
        let (t, _) = minimize_on_interval(f, 3.0, 64, 1e-9, 1e-12);
        assert!((t - std::f64::consts::PI / 6.0).abs() < 0.02, "t = {t}");
    }
}
