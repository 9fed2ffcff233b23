//! Harmonic inversion of uniformly sampled traces.
//!
//! Filter diagonalization: the signal `c_n = Σ_k d_k u_k^n` is projected onto
//! a small Fourier-filtered basis `Ψ_j = Σ_{n≤M} z_j^{-n} Φ_n` with `z_j` on the
//! unit circle inside the frequency window. The matrices
//! `U^(p)_{jj'} = Σ_{n,n'} z_j^{-n} z_{j'}^{-n'} c_{n+n'+p}` define the small
//! generalized eigenproblem `U^(1) B = u U^(0) B`, regularized by truncating
//! the SVD of `U^(0)`.

use std::f64::consts::PI;

use faer::Mat;

use crate::error::{Error, Result};
use crate::C64;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Relative singular-value cutoff for the overlap matrix.
pub const SVD_CUTOFF: f64 = 1e-12;

/// Descriptive tags carried alongside a trace.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceMeta {
    pub observable: String,
    pub state: String,
    /// 0 means exact expectation values.
    pub shots: u64,
    pub seed: u64,
}

/// Uniformly sampled signal `y_n = y((t0 + n)·dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeTrace {
    pub values: Vec<C64>,
    pub t0: i64,
    pub dt: f64,
    pub meta: TraceMeta,
}

impl TimeTrace {
    pub fn new(values: Vec<C64>, t0: i64, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("sample spacing must be positive, got {dt}")));
        }
        Ok(TimeTrace { values, t0, dt, meta: TraceMeta::default() })
    }

    pub fn from_real(values: &[f64], t0: i64, dt: f64) -> Result<Self> {
        Self::new(values.iter().map(|&v| C64::new(v, 0.0)).collect(), t0, dt)
    }

    pub fn with_meta(mut self, meta: TraceMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, n: usize) -> f64 {
        (self.t0 + n as i64) as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|n| self.time(n)).collect()
    }

    pub fn real_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    pub fn max_imag(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.im.abs()))
    }

    /// The trace with its first `k` samples removed and `t0` advanced.
    pub fn drop_front(&self, k: usize) -> TimeTrace {
        TimeTrace {
            values: self.values[k.min(self.len())..].to_vec(),
            t0: self.t0 + k as i64,
            dt: self.dt,
            meta: self.meta.clone(),
        }
    }

    pub fn rms_difference(&self, other: &TimeTrace) -> Result<f64> {
        crate::error::check_len(self.len(), other.len())?;
        if self.is_empty() {
            return Ok(0.0);
        }
        let ss: f64 = self.values.iter().zip(&other.values).map(|(a, b)| (a - b).norm_sqr()).sum();
        Ok((ss / self.len() as f64).sqrt())
    }
}

/// One complex exponential `c e^{λ t}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub lambda: C64,
    pub amplitude: C64,
    pub error: f64,
}

impl Mode {
    /// Inverse timescale `1/τ = −Re λ`.
    pub fn rate(&self) -> f64 {
        -self.lambda.re
    }

    pub fn value_at(&self, t: f64) -> C64 {
        self.amplitude * (self.lambda * t).exp()
    }
}

/// Default frequency window `[−π/(2dt), π/(2dt)]`.
pub fn default_window(dt: f64) -> (f64, f64) {
    (-PI / (2.0 * dt), PI / (2.0 * dt))
}

/// Largest admissible number of basis functions for `len` samples.
pub fn default_max_modes(len: usize) -> usize {
    len / 4
}

/// Inversion output together with conditioning diagnostics.
#[derive(Debug, Clone)]
pub struct InversionReport {
    pub modes: Vec<Mode>,
    pub basis_size: usize,
    /// Retained singular values of the overlap matrix.
    pub rank: usize,
    /// `σ_max / σ_min` over the retained singular values.
    pub condition: f64,
}

/// Filter diagonalization of `trace` inside `window` with `max_modes` basis functions.
pub fn harmonic_inversion(trace: &TimeTrace, window: (f64, f64), max_modes: usize) -> Result<Vec<Mode>> {
    Ok(harmonic_inversion_report(trace, window, max_modes)?.modes)
}

pub fn harmonic_inversion_report(
    trace: &TimeTrace,
    window: (f64, f64),
    max_modes: usize,
) -> Result<InversionReport> {
    let n = trace.len();
    if n < 8 {
        return Err(Error::invalid(format!("trace has {n} samples, need at least 8")));
    }
    if max_modes == 0 || max_modes > n / 4 {
        return Err(Error::invalid(format!(
            "max_modes = {max_modes} outside 1..={} for {n} samples",
            n / 4
        )));
    }
    let dt = trace.dt;
    let nyquist = PI / dt;
    let (w_lo, w_hi) = window;
    if !(w_lo < w_hi && w_lo >= -nyquist - 1e-12 && w_hi <= nyquist + 1e-12) {
        return Err(Error::invalid(format!(
            "window [{w_lo}, {w_hi}] not inside the Nyquist band ±{nyquist}"
        )));
    }
    if trace.values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::numerical("trace contains non-finite samples"));
    }
    let c = &trace.values;
    let empty = InversionReport { modes: Vec::new(), basis_size: max_modes, rank: 0, condition: 0.0 };
    if c.iter().all(|v| *v == ZERO) {
        return Ok(empty);
    }

    let m1 = (n - 3) / 2 + 1; // M + 1 basis terms, indices up to 2M + 2 ≤ n − 1
    let kk = max_modes;
    let zs: Vec<C64> = (0..kk)
        .map(|j| {
            let w = w_lo + (j as f64 + 0.5) * (w_hi - w_lo) / kk as f64;
            C64::from_polar(1.0, w * dt)
        })
        .collect();
    // Z[n][j] = z_j^{-n}
    let zmat = Mat::<C64>::from_fn(m1, kk, |row, j| zs[j].powi(-(row as i32)));
    let u_p = |p: usize| -> Mat<C64> {
        let h = Mat::<C64>::from_fn(m1, m1, |a, b| c[a + b + p]);
        zmat.transpose() * (&h * &zmat)
    };
    let u0 = u_p(0);
    let u1 = u_p(1);
    let u2 = u_p(2);
    // F_j = Σ_n c_n z_j^{-n}
    let f: Vec<C64> = (0..kk).map(|j| (0..m1).map(|row| c[row] * zmat[(row, j)]).sum()).collect();

    let svd = u0.svd().map_err(|e| Error::numerical(format!("overlap SVD failed: {e:?}")))?;
    let s = svd.S();
    let smax = s[0].re;
    if smax <= 0.0 {
        return Ok(empty);
    }
    let rank = (0..kk).take_while(|&i| s[i].re > SVD_CUTOFF * smax).count();
    if rank == 0 {
        return Ok(empty);
    }
    let w = svd.U();
    let v = svd.V();
    let inv_sqrt: Vec<f64> = (0..rank).map(|i| 1.0 / s[i].re.sqrt()).collect();
    let vr = Mat::<C64>::from_fn(kk, rank, |a, b| v[(a, b)] * inv_sqrt[b]);
    let wr = Mat::<C64>::from_fn(kk, rank, |a, b| w[(a, b)] * inv_sqrt[b]);
    let reduced = wr.adjoint() * (&u1 * &vr);
    let eig = reduced
        .eigen()
        .map_err(|e| Error::numerical(format!("reduced eigenproblem failed: {e:?}")))?;
    let ys = eig.U();
    let us = eig.S();
    let basis = &vr * ys;

    let mut modes = Vec::with_capacity(rank);
    for k in 0..rank {
        let u = us[k];
        if u.norm() == 0.0 || !u.re.is_finite() || !u.im.is_finite() {
            continue;
        }
        let b = basis.col(k);
        let u0b = &u0 * b;
        let u2b = &u2 * b;
        let mut num = 0.0;
        let mut den = 0.0;
        let mut bf = ZERO;
        let mut bu0b = ZERO;
        for j in 0..kk {
            num += (u2b[j] - u * u * u0b[j]).norm_sqr();
            den += u0b[j].norm_sqr();
            bf += b[j] * f[j];
            bu0b += b[j] * u0b[j];
        }
        if bu0b.norm() == 0.0 {
            continue;
        }
        let error = num.sqrt() / (den.sqrt() * u.norm_sqr()).max(f64::MIN_POSITIVE);
        let lambda = u.ln() / dt;
        let d = bf * bf / bu0b;
        // d is the weight at the first sample; shift back to t = 0
        let amplitude = d * (-lambda * trace.time(0)).exp();
        modes.push(Mode { lambda, amplitude, error });
    }
    modes.sort_by(|a, b| b.amplitude.norm().total_cmp(&a.amplitude.norm()));
    let condition = smax / s[rank - 1].re;
    Ok(InversionReport { modes, basis_size: kk, rank, condition })
}

/// Spurious-mode thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    /// Minimum |c| relative to the largest surviving candidate.
    pub amp_floor_rel: f64,
    /// Minimum |c| in absolute terms.
    pub amp_floor_abs: f64,
    pub err_ceiling: f64,
    /// Largest admissible Re λ.
    pub positivity_tol: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams { amp_floor_rel: 0.02, amp_floor_abs: 1e-6, err_ceiling: 0.5, positivity_tol: 1e-3 }
    }
}

/// Keep modes with `|c| ≥ amp_floor`, `error ≤ err_ceiling` and `Re λ ≤ positivity_tol`.
pub fn filter_spurious(modes: &[Mode], amp_floor: f64, err_ceiling: f64, positivity_tol: f64) -> Vec<Mode> {
    modes
        .iter()
        .filter(|m| {
            m.amplitude.norm() >= amp_floor
                && m.error <= err_ceiling
                && m.lambda.re <= positivity_tol
                && m.amplitude.norm().is_finite()
        })
        .copied()
        .collect()
}

/// [`filter_spurious`] with the relative floor taken from the largest candidate.
pub fn filter_with(modes: &[Mode], p: &FilterParams) -> Vec<Mode> {
    let admissible: Vec<Mode> = modes
        .iter()
        .filter(|m| m.error <= p.err_ceiling && m.lambda.re <= p.positivity_tol)
        .copied()
        .collect();
    let top = admissible.iter().fold(0.0f64, |a, m| a.max(m.amplitude.norm()));
    let floor = (p.amp_floor_rel * top).max(p.amp_floor_abs);
    filter_spurious(&admissible, floor, p.err_ceiling, p.positivity_tol)
}

/// `Σ_n c_n e^{λ_n t}` on the grid `(t0 + n)·dt`, `n < len`.
pub fn reconstruct(modes: &[Mode], t0: i64, dt: f64, len: usize) -> Result<TimeTrace> {
    let values =
        (0..len).map(|n| modes.iter().map(|m| m.value_at((t0 + n as i64) as f64 * dt)).sum()).collect();
    TimeTrace::new(values, t0, dt)
}

/// Minimum-norm least-squares solution of `design · x ≈ rhs`.
fn lstsq(design: &Mat<C64>, rhs: &[C64]) -> Result<Vec<C64>> {
    let (n, k) = (design.nrows(), design.ncols());
    let mut x = vec![ZERO; k];
    if k == 0 {
        return Ok(x);
    }
    let svd = design.thin_svd().map_err(|e| Error::numerical(format!("least-squares SVD failed: {e:?}")))?;
    let s = svd.S();
    let smax = s[0].re;
    let u = svd.U();
    let v = svd.V();
    for i in 0..k.min(n) {
        let si = s[i].re;
        if si <= 1e-10 * smax {
            continue;
        }
        let proj: C64 = (0..n).map(|row| u[(row, i)].conj() * rhs[row]).sum::<C64>() / si;
        for (j, xj) in x.iter_mut().enumerate() {
            *xj += v[(j, i)] * proj;
        }
    }
    Ok(x)
}

fn residual_ss(trace: &TimeTrace, modes: &[Mode]) -> f64 {
    (0..trace.len())
        .map(|n| {
            let t = trace.time(n);
            let fit: C64 = modes.iter().map(|m| m.value_at(t)).sum();
            (trace.values[n] - fit).norm_sqr()
        })
        .sum()
}

/// Least-squares amplitudes for fixed `λ`, over every sample of the trace.
pub fn refit_amplitudes(trace: &TimeTrace, modes: &[Mode]) -> Result<Vec<Mode>> {
    if modes.is_empty() || trace.is_empty() {
        return Ok(modes.to_vec());
    }
    let design = Mat::<C64>::from_fn(trace.len(), modes.len(), |row, j| {
        (modes[j].lambda * trace.time(row)).exp()
    });
    let coef = lstsq(&design, &trace.values)?;
    Ok(modes.iter().zip(coef).map(|(m, c)| Mode { amplitude: c, ..*m }).collect())
}

/// Joint Levenberg-Marquardt refinement of `(λ, c)` for all modes against the
/// whole trace. The model is holomorphic in both, so the complex Gauss-Newton
/// step is exact.
pub fn polish_modes(trace: &TimeTrace, modes: &[Mode], max_iter: usize) -> Result<Vec<Mode>> {
    let k = modes.len();
    if k == 0 || trace.len() < 2 * k {
        return Ok(modes.to_vec());
    }
    let n = trace.len();
    let mut cur = modes.to_vec();
    let mut cur_ss = residual_ss(trace, &cur);
    let mut mu = 1e-3;
    for _ in 0..max_iter {
        let jac = Mat::<C64>::from_fn(n, 2 * k, |row, col| {
            let t = trace.time(row);
            let m = &cur[col / 2];
            let e = (m.lambda * t).exp();
            if col % 2 == 0 {
                e
            } else {
                m.amplitude * t * e
            }
        });
        let resid: Vec<C64> = (0..n)
            .map(|row| {
                let t = trace.time(row);
                trace.values[row] - cur.iter().map(|m| m.value_at(t)).sum::<C64>()
            })
            .collect();
        let jh = jac.adjoint();
        let normal = jh * &jac;
        let grad: Vec<C64> = (0..2 * k).map(|i| (0..n).map(|row| jac[(row, i)].conj() * resid[row]).sum()).collect();
        let mut accepted = false;
        let mut converged = false;
        for _ in 0..12 {
            let damped = Mat::<C64>::from_fn(2 * k, 2 * k, |i, j| {
                if i == j {
                    normal[(i, j)] * (1.0 + mu) + C64::new(1e-300, 0.0)
                } else {
                    normal[(i, j)]
                }
            });
            let step = lstsq(&damped, &grad)?;
            let trial: Vec<Mode> = cur
                .iter()
                .enumerate()
                .map(|(j, m)| Mode { amplitude: m.amplitude + step[2 * j], lambda: m.lambda + step[2 * j + 1], ..*m })
                .collect();
            let ss = residual_ss(trace, &trial);
            if ss.is_finite() && ss <= cur_ss {
                let rel = (cur_ss - ss) / cur_ss.max(f64::MIN_POSITIVE);
                converged = rel < 1e-12 || ss == 0.0;
                cur = trial;
                cur_ss = ss;
                mu = (mu * 0.3).max(1e-12);
                accepted = true;
                break;
            }
            mu *= 10.0;
        }
        if !accepted || converged {
            break;
        }
    }
    Ok(cur)
}

/// Bayesian information criterion of a fit with `modes` to `trace`.
fn bic(trace: &TimeTrace, modes: &[Mode]) -> f64 {
    let real = trace.max_imag() == 0.0;
    let n_obs = if real { trace.len() } else { 2 * trace.len() } as f64;
    let per_mode = if real { 2.0 } else { 4.0 };
    let scale = trace.values.iter().fold(0.0f64, |a, v| a.max(v.norm()));
    let floor = n_obs * (1e-14 * scale.max(f64::MIN_POSITIVE)).powi(2);
    let ss = residual_ss(trace, modes).max(floor);
    n_obs * (ss / n_obs).ln() + per_mode * modes.len() as f64 * n_obs.ln()
}

/// Inversion settings used by the analysis pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HinvParams {
    /// `None` selects [`default_window`].
    pub window: Option<(f64, f64)>,
    /// `None` selects [`default_max_modes`].
    pub max_modes: Option<usize>,
    pub filter: FilterParams,
    /// Refine the survivors against the whole trace and prune by BIC.
    pub refine: bool,
}

impl Default for HinvParams {
    fn default() -> Self {
        HinvParams { window: None, max_modes: None, filter: FilterParams::default(), refine: true }
    }
}

/// Inversion, filtering and (optionally) refinement in one call.
///
/// Refinement refits amplitudes, polishes `(λ, c)` jointly, then drops modes
/// one at a time while that lowers the BIC.
pub fn extract_modes(trace: &TimeTrace, p: &HinvParams) -> Result<Vec<Mode>> {
    let window = p.window.unwrap_or_else(|| default_window(trace.dt));
    let max_modes = p.max_modes.unwrap_or_else(|| default_max_modes(trace.len())).max(1);
    let raw = harmonic_inversion(trace, window, max_modes)?;
    let kept = filter_with(&raw, &p.filter);
    if !p.refine || kept.is_empty() {
        return Ok(kept);
    }
    let mut modes = polish_modes(trace, &refit_amplitudes(trace, &kept)?, 50)?;
    let mut score = bic(trace, &modes);
    while modes.len() > 1 {
        let mut best: Option<(usize, f64)> = None;
        for drop in 0..modes.len() {
            let rest: Vec<Mode> =
                modes.iter().enumerate().filter(|&(i, _)| i != drop).map(|(_, m)| *m).collect();
            let b = bic(trace, &polish_modes(trace, &refit_amplitudes(trace, &rest)?, 10)?);
            if best.is_none_or(|(_, bb)| b < bb) {
                best = Some((drop, b));
            }
        }
        match best {
            Some((drop, b)) if b < score => {
                modes.remove(drop);
                modes = polish_modes(trace, &refit_amplitudes(trace, &modes)?, 50)?;
                score = bic(trace, &modes).min(b);
            }
            _ => break,
        }
    }
    let top = modes.iter().fold(0.0f64, |a, m| a.max(m.amplitude.norm()));
    let floor = (p.filter.amp_floor_rel * top).max(p.filter.amp_floor_abs);
    let survivors: Vec<Mode> = modes
        .into_iter()
        .filter(|m| m.lambda.re <= p.filter.positivity_tol && m.amplitude.norm() >= floor)
        .collect();
    let mut out = refit_amplitudes(trace, &survivors)?;
    out.sort_by(|a, b| b.amplitude.norm().total_cmp(&a.amplitude.norm()));
    Ok(out)
}

/// Real single-exponential least-squares fit `y ≈ c e^{λ t}` (Gauss-Newton).
pub fn fit_single_exponential(trace: &TimeTrace) -> Result<Mode> {
    let ts = trace.times();
    let ys = trace.real_values();
    let n = ys.len();
    if n < 2 {
        return Err(Error::invalid("single-exponential fit needs at least 2 samples"));
    }
    let positive = ys.iter().filter(|&&y| y > 0.0).count();
    if 2 * positive <= n {
        return Err(Error::numerical("signal is not predominantly positive"));
    }
    // log-linear initial guess over the positive samples
    let pts: Vec<(f64, f64)> =
        ts.iter().zip(&ys).filter(|(_, &y)| y > 0.0).map(|(&t, &y)| (t, y.ln())).collect();
    let (mut lam, mut c) = {
        let m = pts.len() as f64;
        let st: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let stt: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sty: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let den = m * stt - st * st;
        let slope = if den.abs() > 0.0 { (m * sty - st * sy) / den } else { 0.0 };
        (slope, ((sy - slope * st) / m).exp())
    };
    let sse = |lam: f64, c: f64| -> f64 {
        ts.iter().zip(&ys).map(|(&t, &y)| (y - c * (lam * t).exp()).powi(2)).sum()
    };
    let mut mu = 1e-3;
    let mut cur = sse(lam, c);
    for _ in 0..200 {
        // normal equations of the Jacobian [e^{λt}, c t e^{λt}]
        let (mut a11, mut a12, mut a22, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&t, &y) in ts.iter().zip(&ys) {
            let e = (lam * t).exp();
            let r = y - c * e;
            let j1 = e;
            let j2 = c * t * e;
            a11 += j1 * j1;
            a12 += j1 * j2;
            a22 += j2 * j2;
            g1 += j1 * r;
            g2 += j2 * r;
        }
        let mut improved = false;
        for _ in 0..30 {
            let b11 = a11 * (1.0 + mu);
            let b22 = a22 * (1.0 + mu);
            let det = b11 * b22 - a12 * a12;
            if det.abs() < f64::MIN_POSITIVE {
                break;
            }
            let dc = (b22 * g1 - a12 * g2) / det;
            let dl = (b11 * g2 - a12 * g1) / det;
            let next = sse(lam + dl, c + dc);
            if next <= cur {
                let done = (dl.abs() <= 1e-15 * (1.0 + lam.abs())) && (dc.abs() <= 1e-15 * (1.0 + c.abs()));
                lam += dl;
                c += dc;
                cur = next;
                mu = (mu * 0.3).max(1e-12);
                improved = !done;
                break;
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let scale = ys.iter().fold(0.0f64, |a, y| a.max(y.abs()));
    let span = ts.last().copied().unwrap_or(1.0) - ts[0];
    if lam * span > 1e-6 * (1.0 + scale) {
        return Err(Error::numerical(format!("non-decaying signal: fitted λ = {lam}")));
    }
    let resid = (cur / n as f64).sqrt();
    Ok(Mode { lambda: C64::new(lam, 0.0), amplitude: C64::new(c, 0.0), error: resid })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn synth(modes: &[(C64, C64)], len: usize, dt: f64) -> TimeTrace {
        let v = (0..len)
            .map(|n| modes.iter().map(|(l, c)| c * (l * (n as f64 * dt)).exp()).sum())
            .collect();
        TimeTrace::new(v, 0, dt).unwrap()
    }

    #[test]
    fn single_exponential_recovered() {
        let tr = synth(&[(C64::new(-0.3, 0.0), C64::new(1.0, 0.0))], 40, 1.0);
        let modes = extract_modes(&tr, &HinvParams::default()).unwrap();
        assert_eq!(modes.len(), 1);
        assert_abs_diff_eq!(modes[0].lambda.re, -0.3, epsilon = 1e-6);
        assert_abs_diff_eq!(modes[0].lambda.im, 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(modes[0].amplitude.re, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn two_modes_recovered() {
        let planted = [(C64::new(-0.2, 0.0), C64::new(1.0, 0.0)), (C64::new(-0.6, 0.9), C64::new(0.5, 0.0))];
        let tr = synth(&planted, 64, 1.0);
        let window = (-PI, PI);
        let modes = filter_with(&harmonic_inversion(&tr, window, 16).unwrap(), &FilterParams::default());
        assert_eq!(modes.len(), 2, "{modes:?}");
        for (l, c) in planted {
            let m = modes.iter().min_by(|a, b| (a.lambda - l).norm().total_cmp(&(b.lambda - l).norm())).unwrap();
            assert!((m.lambda - l).norm() < 1e-4);
            assert!((m.amplitude - c).norm() < 1e-4);
        }
    }

    #[test]
    fn constant_signal_gives_zero_rate() {
        let tr = TimeTrace::from_real(&[0.7; 32], 0, 1.0).unwrap();
        let modes = extract_modes(&tr, &HinvParams::default()).unwrap();
        assert_eq!(modes.len(), 1);
        assert!(modes[0].lambda.norm() < 1e-8);
        assert_abs_diff_eq!(modes[0].amplitude.re, 0.7, epsilon = 1e-10);
    }

    #[test]
    fn zero_signal_has_no_modes() {
        let tr = TimeTrace::from_real(&[0.0; 32], 0, 1.0).unwrap();
        assert!(harmonic_inversion(&tr, default_window(1.0), 8).unwrap().is_empty());
    }

    #[test]
    fn information_bound_enforced() {
        let tr = TimeTrace::from_real(&[1.0; 32], 0, 1.0).unwrap();
        assert!(harmonic_inversion(&tr, default_window(1.0), 9).is_err());
        assert!(harmonic_inversion(&tr, default_window(1.0), 0).is_err());
        assert!(harmonic_inversion(&tr, (-4.0, 0.0), 4).is_err());
        let short = TimeTrace::from_real(&[1.0; 7], 0, 1.0).unwrap();
        assert!(harmonic_inversion(&short, default_window(1.0), 1).is_err());
    }

    #[test]
    fn nonzero_origin_amplitudes_refer_to_t_zero() {
        let full = synth(&[(C64::new(-0.25, 0.0), C64::new(2.0, 0.0))], 41, 1.0);
        let shifted = full.drop_front(1);
        let a = extract_modes(&full, &HinvParams::default()).unwrap();
        let b = extract_modes(&shifted, &HinvParams::default()).unwrap();
        assert!((a[0].lambda - b[0].lambda).norm() < 1e-6);
        assert_abs_diff_eq!(b[0].amplitude.re, 2.0, epsilon = 1e-6);
    }

    #[test]
    fn filter_edge_cases() {
        assert!(filter_spurious(&[], 0.1, 1.0, 0.0).is_empty());
        let m = Mode { lambda: C64::new(-1.0, 0.0), amplitude: C64::new(0.01, 0.0), error: 0.0 };
        assert!(filter_spurious(&[m, m], 0.1, 1.0, 0.0).is_empty());
        let grow = Mode { lambda: C64::new(0.5, 0.0), amplitude: C64::new(1.0, 0.0), error: 0.0 };
        assert!(filter_spurious(&[grow], 0.1, 1.0, 1e-3).is_empty());
        let bad = Mode { error: 2.0, ..grow };
        assert!(filter_spurious(&[bad], 0.0, 1.0, 1.0).is_empty());
    }

    #[test]
    fn reconstruct_basics() {
        let m = Mode { lambda: C64::new(-1.0, 0.0), amplitude: C64::new(2.0, 0.0), error: 0.0 };
        let tr = reconstruct(&[m], 0, 1.0, 2).unwrap();
        assert_abs_diff_eq!(tr.values[0].re, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(tr.values[1].re, 2.0 / std::f64::consts::E, epsilon = 1e-15);
        let z = reconstruct(&[], 0, 1.0, 5).unwrap();
        assert!(z.values.iter().all(|v| *v == ZERO));
    }

    #[test]
    fn single_exponential_fit() {
        let ys: Vec<f64> = (0..30).map(|t| 3.0 * (-0.5 * t as f64).exp()).collect();
        let m = fit_single_exponential(&TimeTrace::from_real(&ys, 0, 1.0).unwrap()).unwrap();
        assert_abs_diff_eq!(m.lambda.re, -0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(m.amplitude.re, 3.0, epsilon = 1e-8);

        let ys: Vec<f64> = (0..30).map(|t| (-0.2 * t as f64).exp() + (-0.21 * t as f64).exp()).collect();
        let m = fit_single_exponential(&TimeTrace::from_real(&ys, 0, 1.0).unwrap()).unwrap();
        assert!(m.lambda.re >= -0.21 && m.lambda.re <= -0.2);

        let m = fit_single_exponential(&TimeTrace::from_real(&[1.5; 20], 0, 1.0).unwrap()).unwrap();
        assert_abs_diff_eq!(m.lambda.re, 0.0, epsilon = 1e-12);

        let grow: Vec<f64> = (0..20).map(|t| (0.1 * t as f64).exp()).collect();
        assert!(fit_single_exponential(&TimeTrace::from_real(&grow, 0, 1.0).unwrap()).is_err());
        assert!(fit_single_exponential(&TimeTrace::from_real(&[-1.0; 10], 0, 1.0).unwrap()).is_err());
    }
}
