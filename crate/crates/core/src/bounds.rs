//! Closed-form convergence bounds and the decay-recursion toolkit they are
//! built from.
//!
//! Everything here is a direct formula evaluation. Products of many factors
//! are summed in log space, and transient thresholds are carried with their
//! logarithm so they can be reported even when they overflow `f64`.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BoundError {
    #[error("parameter out of range: {0}")]
    Domain(String),
    #[error("factor 1 - q/t^(1-eps) is negative at t = {t} ({factor})")]
    NegativeFactor { t: u64, factor: f64 },
    #[error("t = {t} is below the transient threshold {transient:.6e}")]
    BelowTransient { t: f64, transient: f64 },
    #[error("time sequence invalid at index {index}: {reason}")]
    Times { index: usize, reason: String },
}

/// Values above this are reported as +∞ alongside their logarithm.
pub const OVERFLOW_LIMIT: f64 = 1e300;

fn check_q_eps(q: f64, eps: f64) -> Result<(), BoundError> {
    if !(q > 0.0 && q.is_finite()) {
        return Err(BoundError::Domain(format!("q must be > 0, got {q}")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(BoundError::Domain(format!("epsilon must lie in (0, 1), got {eps}")));
    }
    Ok(())
}

fn factor(q: f64, t: u64, eps: f64) -> Result<f64, BoundError> {
    let f = 1.0 - q / (t as f64).powf(1.0 - eps);
    if f < 0.0 {
        return Err(BoundError::NegativeFactor { t, factor: f });
    }
    Ok(f)
}

/// `ln Φ_q(a, b)`; `-∞` when some factor is exactly zero.
pub fn log_phi(q: f64, a: u64, b: u64, eps: f64) -> Result<f64, BoundError> {
    check_q_eps(q, eps)?;
    if a < 2 || b < a {
        return Err(BoundError::Domain(format!("need 2 <= a <= b, got a = {a}, b = {b}")));
    }
    let mut acc = 0.0;
    for t in a..b {
        let f = factor(q, t, eps)?;
        if f == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        acc += f.ln();
    }
    Ok(acc)
}

/// `Φ_q(a, b) = Π_{t=a}^{b-1} (1 - q/t^(1-ε))`, with `Φ_q(a, a) = 1`.
pub fn phi(q: f64, a: u64, b: u64, eps: f64) -> Result<f64, BoundError> {
    log_phi(q, a, b, eps).map(f64::exp)
}

/// Closed-form upper bound `exp(-q (b^ε - a^ε)/ε)` on `Φ_q(a, b)`.
pub fn phi_upper(q: f64, a: f64, b: f64, eps: f64) -> f64 {
    (-q * (b.powf(eps) - a.powf(eps)) / eps).exp()
}

/// `α(q, ε) = [12/(qε) · ln(4/(qε))]^(1/ε)`.
pub fn alpha(q: f64, eps: f64) -> f64 {
    let qe = q * eps;
    (12.0 / qe * (4.0 / qe).ln()).powf(1.0 / eps)
}

/// Iterates `a(t_{k+1}) = (1 - q/t_{k+1}^(1-ε)) a(t_k) + d/t_k^(2-2ε)` from
/// `a(t_1) = a1`. `times` must start at 1, increase, and have every gap at
/// most `gap_bound`.
pub fn decay_recursion(
    a1: f64,
    q: f64,
    d: f64,
    eps: f64,
    times: &[u64],
    gap_bound: u64,
) -> Result<Vec<f64>, BoundError> {
    check_q_eps(q, eps)?;
    if !(a1 >= 0.0 && d >= 0.0) {
        return Err(BoundError::Domain("a1 and d must be nonnegative".into()));
    }
    match times.first() {
        Some(1) => {}
        _ => {
            return Err(BoundError::Times {
                index: 0,
                reason: "sequence must start at t = 1".into(),
            })
        }
    }
    let mut out = Vec::with_capacity(times.len());
    out.push(a1);
    for (k, w) in times.windows(2).enumerate() {
        let (now, next) = (w[0], w[1]);
        if next <= now || next - now > gap_bound {
            return Err(BoundError::Times {
                index: k + 1,
                reason: format!("step {now} -> {next} violates increasing gaps <= {gap_bound}"),
            });
        }
        let prev = out[k];
        out.push(factor(q, next, eps)? * prev + d / (now as f64).powf(2.0 - 2.0 * eps));
    }
    Ok(out)
}

/// The two index thresholds for the general-sequence decay bound: the
/// stated `[12T/(qε) ln(4T/(qε))]^(1/ε)` and the `18/6` constants that
/// appear in its derivation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdVariant {
    Statement,
    Proof,
}

pub fn decay_threshold(q: f64, eps: f64, gap_bound: u64, variant: ThresholdVariant) -> f64 {
    let (outer, inner) = match variant {
        ThresholdVariant::Statement => (12.0, 4.0),
        ThresholdVariant::Proof => (18.0, 6.0),
    };
    let s = gap_bound as f64 / (q * eps);
    (outer * s * (inner * s).ln()).powf(1.0 / eps)
}

/// `9dT/(q k^(1-ε)) + a1 exp(-q (k^ε - 1)/(Tε))`.
pub fn decay_bound(k: u64, a1: f64, q: f64, d: f64, eps: f64, gap_bound: u64) -> f64 {
    let k = k as f64;
    let t = gap_bound as f64;
    9.0 * d * t / (q * k.powf(1.0 - eps)) + a1 * (-q * (k.powf(eps) - 1.0) / (t * eps)).exp()
}

/// Bound for the unit-step recursion (`t_k = k`), valid for `k >= α(q, ε)`:
/// `9d/q · ln k / k^(1-ε) + a1 exp(-q (k^ε - 2)/ε)`.
pub fn unit_step_decay_bound(k: u64, a1: f64, q: f64, d: f64, eps: f64) -> f64 {
    let k = k as f64;
    9.0 * d / q * k.ln() / k.powf(1.0 - eps) + a1 * (-q * (k.powf(eps) - 2.0) / eps).exp()
}

/// Parameters of the expected-variance bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    /// Number of agents.
    pub n: usize,
    /// Dimension of μ.
    pub l: usize,
    /// Largest gap between successive measurement times.
    pub t_gap: u64,
    /// Connectivity window.
    pub b_window: u64,
    /// Most agents measuring at one time.
    pub m: usize,
    pub sigma: f64,
    pub sigma_prime: f64,
    pub epsilon: f64,
    /// Largest lazy Metropolis hitting time (connected case).
    pub hitting_time: Option<f64>,
    /// Largest degree over the sequence (general case).
    pub d_max: Option<usize>,
    /// Initial variance Z(1).
    pub z1: f64,
}

impl BoundParams {
    pub fn validate(&self) -> Result<(), BoundError> {
        let err = |msg: String| Err(BoundError::Domain(msg));
        if self.n == 0 || self.l == 0 || self.t_gap == 0 || self.b_window == 0 || self.m == 0 {
            return err("n, l, T, B and M must be positive".into());
        }
        if self.m > self.n {
            return err(format!("M = {} exceeds n = {}", self.m, self.n));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return err(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if !(self.sigma >= 0.0 && self.sigma_prime >= 0.0 && self.z1 >= 0.0) {
            return err("sigma, sigma' and Z(1) must be nonnegative".into());
        }
        if let Some(h) = self.hitting_time {
            if !(h > 0.0 && h.is_finite()) {
                return err(format!("hitting time must be positive, got {h}"));
            }
        }
        if let Some(d) = self.d_max {
            if d == 0 || d + 1 > self.n {
                return err(format!("d_max = {d} must lie in 1..=n-1"));
            }
        }
        Ok(())
    }

    fn hitting(&self) -> Result<f64, BoundError> {
        self.hitting_time
            .ok_or_else(|| BoundError::Domain("connected-case bound needs the hitting time".into()))
    }

    fn degree(&self) -> Result<f64, BoundError> {
        self.d_max
            .map(|d| d as f64)
            .ok_or_else(|| BoundError::Domain("general-case bound needs d_max".into()))
    }

    fn window(&self) -> f64 {
        self.t_gap.max(self.b_window) as f64
    }
}

/// A threshold and its natural log; `value` is +∞ past [`OVERFLOW_LIMIT`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Threshold {
    pub value: f64,
    pub ln_value: f64,
}

impl Threshold {
    fn from_ln(ln_value: f64) -> Self {
        let value = if ln_value > OVERFLOW_LIMIT.ln() {
            f64::INFINITY
        } else {
            ln_value.exp()
        };
        Self { value, ln_value }
    }
}

/// `scale · [outer · ln(inner)]^(1/ε)` evaluated in log space.
fn transient(scale: f64, outer: f64, inner: f64, eps: f64) -> Threshold {
    Threshold::from_ln(scale.ln() + (outer * inner.ln()).ln() / eps)
}

/// `2T [288 T H/ε · ln(96 T H/ε)]^(1/ε)`.
pub fn transient_connected(p: &BoundParams) -> Result<Threshold, BoundError> {
    p.validate()?;
    let h = p.hitting()?;
    let t = p.t_gap as f64;
    let eps = p.epsilon;
    Ok(transient(2.0 * t, 288.0 * t * h / eps, 96.0 * t * h / eps, eps))
}

/// Connected-case bound on `E[Z(t) | v(1)]`, evaluated without the
/// transient check.
pub fn connected_bound_unchecked(t: f64, p: &BoundParams) -> Result<f64, BoundError> {
    p.validate()?;
    let h = p.hitting()?;
    let tg = p.t_gap as f64;
    let x = t / tg - 1.0;
    if x <= 0.0 {
        return Err(BoundError::Domain(format!("need t/T > 1, got t = {t}, T = {tg}")));
    }
    let eps = p.epsilon;
    let noise = p.m as f64 * p.sigma.powi(2) + p.n as f64 * tg * p.sigma_prime.powi(2);
    let decay = 15.0 * h * tg * p.l as f64 * noise / x.powf(1.0 - eps);
    let transient = p.z1 * (-(x.powf(eps) - 2.0) / (24.0 * h * tg * eps)).exp();
    Ok(decay + transient)
}

/// Connected-case bound; errors when `t` is below [`transient_connected`].
pub fn connected_bound(t: f64, p: &BoundParams) -> Result<f64, BoundError> {
    let transient = transient_connected(p)?.value;
    if t < transient {
        return Err(BoundError::BelowTransient { t, transient });
    }
    connected_bound_unchecked(t, p)
}

/// `2W [384 c/ε · ln(128 c/ε)]^(1/ε)` with `W = max(T, B)` and
/// `c = n² d_max (1 + W)`.
pub fn transient_general(p: &BoundParams) -> Result<Threshold, BoundError> {
    p.validate()?;
    let w = p.window();
    let c = (p.n as f64).powi(2) * p.degree()? * (1.0 + w);
    let eps = p.epsilon;
    Ok(transient(2.0 * w, 384.0 * c / eps, 128.0 * c / eps, eps))
}

/// B-connected-case bound on `E[Z(t) | v(1)]` without the transient check.
pub fn general_bound_unchecked(t: f64, p: &BoundParams) -> Result<f64, BoundError> {
    p.validate()?;
    let w = p.window();
    let x = t / w;
    if x <= 0.0 {
        return Err(BoundError::Domain(format!("need t > 0, got {t}")));
    }
    let n = p.n as f64;
    let dmax = p.degree()?;
    let eps = p.epsilon;
    let noise = p.m as f64 * p.sigma.powi(2) + 2.0 * n * (1.0 + w) * p.sigma_prime.powi(2);
    let decay = 2.0 * n * n * dmax * w * p.l as f64 * noise / x.powf(1.0 - eps);
    let transient = p.z1 * (-(x.powf(eps) - 2.0) / (32.0 * n * n * dmax * (1.0 + w) * eps)).exp();
    Ok(decay + transient)
}

/// B-connected-case bound; errors when `t` is below [`transient_general`].
pub fn general_bound(t: f64, p: &BoundParams) -> Result<f64, BoundError> {
    let transient = transient_general(p)?.value;
    if t < transient {
        return Err(BoundError::BelowTransient { t, transient });
    }
    general_bound_unchecked(t, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    fn connected(h: f64, eps: f64) -> BoundParams {
        BoundParams {
            n: 3,
            l: 1,
            t_gap: 1,
            b_window: 1,
            m: 1,
            sigma: 1.0,
            sigma_prime: 0.0,
            epsilon: eps,
            hitting_time: Some(h),
            d_max: Some(2),
            z1: 10.0,
        }
    }

    #[test]
    fn phi_examples() {
        assert_eq!(phi(0.5, 7, 7, 0.5).unwrap(), 1.0);
        assert!(close(phi(1.0, 2, 3, 0.5).unwrap(), 1.0 - 0.5f64.sqrt(), 1e-14));
        assert!(phi(0.5, 1, 4, 0.5).is_err());
        assert!(phi(0.5, 5, 4, 0.5).is_err());
        assert!(matches!(phi(3.0, 2, 5, 0.5), Err(BoundError::NegativeFactor { t: 2, .. })));
    }

    #[test]
    fn phi_below_closed_form_on_grid() {
        for q in [0.1, 0.5, 1.0] {
            for eps in [0.25, 0.5, 0.9] {
                for (a, b) in [(2, 10), (2, 100), (50, 200)] {
                    let direct = phi(q, a, b, eps).unwrap();
                    assert!(direct <= phi_upper(q, a as f64, b as f64, eps), "q={q} eps={eps} a={a} b={b}");
                }
            }
        }
    }

    #[test]
    fn alpha_examples() {
        // independent values from 40-digit evaluation
        assert!(close(alpha(1.0, 0.5), 2490.668424151956, 1e-12));
        assert!(close(alpha(0.5, 0.5), 17711.41990508058, 1e-12));
        assert!(alpha(0.2, 0.5) > alpha(0.4, 0.5));
    }

    #[test]
    fn recursion_examples() {
        let times: Vec<u64> = (1..=50).collect();
        let seq = decay_recursion(5.0, 0.5, 0.0, 0.5, &times, 1).unwrap();
        assert!(seq.windows(2).all(|w| w[1] < w[0]));
        let seq = decay_recursion(0.0, 0.5, 2.0, 0.5, &[1, 3], 2).unwrap();
        assert_eq!(seq, vec![0.0, 2.0]);
        assert!(decay_recursion(1.0, 0.5, 1.0, 0.5, &[1, 4], 2).is_err());
        assert!(decay_recursion(1.0, 0.5, 1.0, 0.5, &[2, 3], 2).is_err());
        assert!(decay_recursion(1.0, 0.5, 1.0, 0.5, &[1, 1], 2).is_err());
        assert!(decay_recursion(1.0, 2.0, 1.0, 0.5, &[1, 2], 2).is_err());
    }

    #[test]
    fn decay_bound_substitution() {
        assert!(close(decay_bound(10_000, 0.0, 1.0, 1.0, 0.5, 1), 0.09, 1e-14));
        assert!(close(decay_bound(1_000_000, 0.0, 1.0, 1.0, 0.5, 1), 0.009, 1e-14));
        assert!(close(decay_bound(100, 2.0, 0.5, 1.0, 0.5, 2), 3.622217993076485, 1e-13));
        assert!(decay_threshold(0.5, 0.5, 2, ThresholdVariant::Proof) > decay_threshold(0.5, 0.5, 2, ThresholdVariant::Statement));
    }

    #[test]
    fn transient_examples() {
        let t = transient_connected(&connected(4.0, 0.9)).unwrap();
        assert!(close(t.value, 41935.43662583721, 1e-12));
        let t = transient_connected(&connected(4.0, 0.5)).unwrap();
        assert!(close(t.value, 468626348.8978029, 1e-12));
        let t = transient_connected(&connected(8.0, 0.9)).unwrap();
        assert!(close(t.value, 102176.5360744197, 1e-12));
        let small_h = transient_connected(&connected(2.0, 0.7)).unwrap().value;
        assert!(small_h < transient_connected(&connected(3.0, 0.7)).unwrap().value);
        let mut wide = connected(2.0, 0.7);
        wide.t_gap = 2;
        assert!(small_h < transient_connected(&wide).unwrap().value);
    }

    #[test]
    fn transient_overflow_reported_in_log_space() {
        let t = transient_connected(&connected(1e6, 0.01)).unwrap();
        assert_eq!(t.value, f64::INFINITY);
        assert!(t.ln_value.is_finite() && t.ln_value > OVERFLOW_LIMIT.ln());
    }

    #[test]
    fn connected_bound_golden() {
        // n=3, H=8 (K3), eps=0.9, Z1=10, t=1e5 from 40-digit evaluation
        let p = connected(8.0, 0.9);
        assert!(close(connected_bound_unchecked(1e5, &p).unwrap(), 37.94736986956119, 1e-12));
        assert!(matches!(connected_bound(1e5, &p), Err(BoundError::BelowTransient { .. })));
        assert!(connected_bound(2e5, &p).unwrap() < connected_bound(1.5e5, &p).unwrap());

        let mut quiet = p.clone();
        quiet.sigma = 0.0;
        quiet.z1 = 0.0;
        assert_eq!(connected_bound(2e5, &quiet).unwrap(), 0.0);
        assert!(connected_bound_unchecked(1.0, &p).is_err());
    }

    #[test]
    fn general_bound_golden() {
        let p = BoundParams {
            n: 2,
            l: 1,
            t_gap: 1,
            b_window: 1,
            m: 1,
            sigma: 1.0,
            sigma_prime: 0.0,
            epsilon: 0.9,
            hitting_time: None,
            d_max: Some(1),
            z1: 4.0,
        };
        assert!(close(general_bound_unchecked(1e6, &p).unwrap(), 2.009509145207664, 1e-12));
        assert!(close(transient_general(&p).unwrap().value, 147337.8519227908, 1e-12));
        assert!(general_bound(1e6, &p).is_ok());

        let mut quiet = p.clone();
        quiet.sigma = 0.0;
        quiet.z1 = 0.0;
        assert_eq!(general_bound(1e6, &quiet).unwrap(), 0.0);

        let base = general_bound_unchecked(1e6, &p).unwrap();
        for tweak in [
            |q: &mut BoundParams| q.sigma = 2.0,
            |q: &mut BoundParams| q.sigma_prime = 0.5,
        ] {
            let mut q = p.clone();
            tweak(&mut q);
            assert!(general_bound_unchecked(1e6, &q).unwrap() > base);
        }
        let mut q = p.clone();
        q.z1 = 1e9;
        assert!(general_bound_unchecked(1e3, &q).unwrap() > general_bound_unchecked(1e3, &p).unwrap());
    }

    #[test]
    fn params_validation() {
        let mut p = connected(8.0, 0.9);
        p.m = 4;
        assert!(p.validate().is_err());
        let mut p = connected(8.0, 0.9);
        p.epsilon = 1.0;
        assert!(transient_connected(&p).is_err());
        let mut p = connected(8.0, 0.9);
        p.hitting_time = None;
        assert!(transient_connected(&p).is_err());
        let mut p = connected(8.0, 0.9);
        p.d_max = Some(3);
        assert!(p.validate().is_err());
    }
}
