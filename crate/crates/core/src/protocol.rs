//! The learning dynamics.
//!
//! At step t a node without a measurement moves toward its neighbors,
//!
//! ```text
//! v_i(t+1) = v_i(t) + Δ(t)/4 · Σ_{j ∈ N_i(t)} o_ij(t) / max(d_i(t), d_j(t)),
//! o_ij(t)  = v_j(t) - v_i(t) + w_ij(t),
//! ```
//!
//! and a measuring node additionally adds `Δ(t)/4 · (μ + w_i(t) - v_i(t))`.
//! The same update written as `v(t+1) = (1-Δ)v + Δ(A v + b + r + c)` is
//! available as [`step_matrix_form`]; both consume one [`NoiseDraws`] so they
//! can be compared draw-for-draw.
//!
//! Noise draw order: for each agent in index order, its neighbors in index
//! order (`l` entries per ordered pair); then the measuring agents in index
//! order (`l` entries each). A component with zero standard deviation draws
//! nothing from the generator.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::graph::{protocol_matrix, GraphSnapshot};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ProtocolError {
    #[error("target vector must have at least one entry")]
    EmptyTarget,
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("epsilon must lie in (0, 1), got {0}")]
    Epsilon(f64),
    #[error("stepsize offset must be >= 0, got {0}")]
    Offset(f64),
    #[error("stepsize {delta} at t = {t} is outside (0, 1]")]
    Stepsize { t: u64, delta: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("node {node} outside 0..{n}")]
    NodeOutOfRange { node: usize, n: usize },
    #[error("offset observation needs two distinct nodes, got ({0}, {0})")]
    SameNode(usize),
    #[error("noise standard deviation must be finite and >= 0, got {0}")]
    NoiseScale(f64),
}

/// The unknown vector μ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target(Vec<f64>);

impl Target {
    pub fn new(mu: Vec<f64>) -> Result<Self, ProtocolError> {
        if mu.is_empty() {
            return Err(ProtocolError::EmptyTarget);
        }
        if mu.iter().any(|x| !x.is_finite()) {
            return Err(ProtocolError::NonFinite("target"));
        }
        Ok(Self(mu))
    }

    pub fn zeros(dim: usize) -> Result<Self, ProtocolError> {
        Self::new(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Agent estimates `v_i(t)` stored row-major (`n` rows of length `l`) plus
/// the current time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolState {
    n: usize,
    l: usize,
    v: Vec<f64>,
    t: u64,
}

impl ProtocolState {
    /// State at time `t = 1` from row-major estimates.
    pub fn new(n: usize, l: usize, v: Vec<f64>) -> Result<Self, ProtocolError> {
        Self::at_time(n, l, v, 1)
    }

    pub fn at_time(n: usize, l: usize, v: Vec<f64>, t: u64) -> Result<Self, ProtocolError> {
        if n == 0 || l == 0 || v.len() != n * l {
            return Err(ProtocolError::Dimension(format!(
                "{} values for {n} agents of dimension {l}",
                v.len()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ProtocolError::NonFinite("state"));
        }
        Ok(Self { n, l, v, t })
    }

    /// Every agent at `target`.
    pub fn at_target(n: usize, target: &Target) -> Self {
        let v = (0..n).flat_map(|_| target.as_slice().iter().copied()).collect();
        Self {
            n,
            l: target.dim(),
            v,
            t: 1,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ProtocolError> {
        let l = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != l) {
            return Err(ProtocolError::Dimension("ragged rows".into()));
        }
        Self::new(rows.len(), l, rows.concat())
    }

    pub fn agents(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.l
    }

    pub fn time(&self) -> u64 {
        self.t
    }

    pub fn estimate(&self, i: usize) -> &[f64] {
        &self.v[i * self.l..(i + 1) * self.l]
    }

    pub fn values(&self) -> &[f64] {
        &self.v
    }

    /// Coordinate `c` of every agent, as a column.
    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.v[i * self.l + c]).collect()
    }

    fn check_target(&self, target: &Target) -> Result<(), ProtocolError> {
        if target.dim() != self.l {
            return Err(ProtocolError::Dimension(format!(
                "target has {} entries, estimates have {}",
                target.dim(),
                self.l
            )));
        }
        Ok(())
    }
}

/// `Δ(t) = 1/(t + offset)^(1 - ε)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepsizeSchedule {
    pub epsilon: f64,
    pub offset: f64,
}

impl StepsizeSchedule {
    pub fn new(epsilon: f64, offset: f64) -> Result<Self, ProtocolError> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(ProtocolError::Epsilon(epsilon));
        }
        if !(offset >= 0.0 && offset.is_finite()) {
            return Err(ProtocolError::Offset(offset));
        }
        Ok(Self { epsilon, offset })
    }

    /// Stepsize at `t`; errors when the value leaves (0, 1].
    pub fn at(&self, t: u64) -> Result<f64, ProtocolError> {
        let delta = (t as f64 + self.offset).powf(-(1.0 - self.epsilon));
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(ProtocolError::Stepsize { t, delta });
        }
        Ok(delta)
    }
}

/// Stepsize at time `t` under `sched`.
pub fn stepsize(sched: &StepsizeSchedule, t: u64) -> Result<f64, ProtocolError> {
    sched.at(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseDistribution {
    #[default]
    Gaussian,
    /// Uniform on `[-σ√3, σ√3]`.
    Uniform,
    /// `±σ` with equal probability.
    Rademacher,
}

impl NoiseDistribution {
    fn sample<R: Rng + ?Sized>(self, rng: &mut R, sd: f64) -> f64 {
        match self {
            NoiseDistribution::Gaussian => sd * rng.sample::<f64, _>(StandardNormal),
            NoiseDistribution::Uniform => sd * 3f64.sqrt() * rng.gen_range(-1.0..1.0),
            NoiseDistribution::Rademacher => {
                if rng.gen::<bool>() {
                    sd
                } else {
                    -sd
                }
            }
        }
    }
}

/// Per-entry noise levels: σ for measurements, σ′ for neighbor offsets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
    pub sigma_prime: f64,
    #[serde(default)]
    pub distribution: NoiseDistribution,
    /// Force `w_ji = -w_ij` instead of independent draws.
    #[serde(default)]
    pub symmetric_offset_noise: bool,
}

impl NoiseModel {
    pub fn new(sigma: f64, sigma_prime: f64, distribution: NoiseDistribution) -> Result<Self, ProtocolError> {
        for s in [sigma, sigma_prime] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(ProtocolError::NoiseScale(s));
            }
        }
        Ok(Self {
            sigma,
            sigma_prime,
            distribution,
            symmetric_offset_noise: false,
        })
    }

    pub fn noiseless() -> Self {
        Self {
            sigma: 0.0,
            sigma_prime: 0.0,
            distribution: NoiseDistribution::Gaussian,
            symmetric_offset_noise: false,
        }
    }
}

/// A noise model bound to its own random stream.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    model: NoiseModel,
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(model: NoiseModel, seed: u64) -> Self {
        Self {
            model,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn model(&self) -> &NoiseModel {
        &self.model
    }

    fn fill(&mut self, out: &mut [f64], sd: f64) {
        if sd == 0.0 {
            out.fill(0.0);
            return;
        }
        let dist = self.model.distribution;
        for x in out {
            *x = dist.sample(&mut self.rng, sd);
        }
    }

    /// Draws everything one step needs, in the documented order.
    pub fn draw(&mut self, g: &GraphSnapshot, measuring: &[usize], l: usize) -> NoiseDraws {
        let mut draws = NoiseDraws::default();
        self.draw_into(g, measuring, l, &mut draws);
        draws
    }

    /// As [`NoiseSource::draw`] but reusing `draws`' buffers. `measuring`
    /// must be sorted.
    pub fn draw_into(&mut self, g: &GraphSnapshot, measuring: &[usize], l: usize, draws: &mut NoiseDraws) {
        draws.reset(g, measuring.len(), l);
        let sd = self.model.sigma_prime;
        if self.model.symmetric_offset_noise && sd > 0.0 {
            for i in 0..g.node_count() {
                for (k, &j) in g.neighbors(i).iter().enumerate() {
                    let at = (draws.starts[i] + k) * l;
                    if j < i {
                        let back = g.neighbors(j).binary_search(&i).expect("undirected edge");
                        let from = (draws.starts[j] + back) * l;
                        for c in 0..l {
                            draws.offsets[at + c] = -draws.offsets[from + c];
                        }
                    } else {
                        self.fill(&mut draws.offsets[at..at + l], sd);
                    }
                }
            }
        } else {
            self.fill(&mut draws.offsets, sd);
        }
        let sigma = self.model.sigma;
        self.fill(&mut draws.measurements, sigma);
    }

    /// A fresh noisy observation `o_ij = v_j - v_i + w_ij`.
    pub fn observe_offset(&mut self, state: &ProtocolState, i: usize, j: usize) -> Result<Vec<f64>, ProtocolError> {
        observe_offset(state, i, j, self)
    }
}

/// The primitive noise values used by one step: `w_ij` for every ordered
/// neighbor pair and `w_i` for every measuring node.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NoiseDraws {
    l: usize,
    starts: Vec<usize>,
    offsets: Vec<f64>,
    measurements: Vec<f64>,
}

impl NoiseDraws {
    /// All-zero draws laid out for `g`.
    pub fn zeros(g: &GraphSnapshot, measuring_count: usize, l: usize) -> Self {
        let mut d = Self::default();
        d.reset(g, measuring_count, l);
        d
    }

    fn reset(&mut self, g: &GraphSnapshot, measuring_count: usize, l: usize) {
        self.l = l;
        self.starts.clear();
        let mut acc = 0;
        for i in 0..g.node_count() {
            self.starts.push(acc);
            acc += g.degree(i);
        }
        self.offsets.clear();
        self.offsets.resize(acc * l, 0.0);
        self.measurements.clear();
        self.measurements.resize(measuring_count * l, 0.0);
    }

    pub fn dim(&self) -> usize {
        self.l
    }

    /// `w_ij` where `j` is the `k`-th neighbor of `i`.
    pub fn offset(&self, i: usize, k: usize) -> &[f64] {
        let at = (self.starts[i] + k) * self.l;
        &self.offsets[at..at + self.l]
    }

    pub fn offset_mut(&mut self, i: usize, k: usize) -> &mut [f64] {
        let at = (self.starts[i] + k) * self.l;
        &mut self.offsets[at..at + self.l]
    }

    /// `w_i` for the `p`-th measuring node (sorted order).
    pub fn measurement(&self, p: usize) -> &[f64] {
        &self.measurements[p * self.l..(p + 1) * self.l]
    }

    pub fn measurement_mut(&mut self, p: usize) -> &mut [f64] {
        &mut self.measurements[p * self.l..(p + 1) * self.l]
    }

    /// Coordinate `c` of every draw, as an `l = 1` draw set.
    pub fn coordinate(&self, c: usize) -> NoiseDraws {
        NoiseDraws {
            l: 1,
            starts: self.starts.clone(),
            offsets: self.offsets.iter().skip(c).step_by(self.l).copied().collect(),
            measurements: self.measurements.iter().skip(c).step_by(self.l).copied().collect(),
        }
    }

    fn matches(&self, g: &GraphSnapshot, measuring_count: usize, l: usize) -> bool {
        let pairs: usize = g.degrees().iter().sum();
        self.l == l
            && self.starts.len() == g.node_count()
            && self.offsets.len() == pairs * l
            && self.measurements.len() == measuring_count * l
    }
}

/// Noisy observation `o_ij = v_j - v_i + w_ij` with a fresh draw.
pub fn observe_offset(
    state: &ProtocolState,
    i: usize,
    j: usize,
    noise: &mut NoiseSource,
) -> Result<Vec<f64>, ProtocolError> {
    let n = state.agents();
    for node in [i, j] {
        if node >= n {
            return Err(ProtocolError::NodeOutOfRange { node, n });
        }
    }
    if i == j {
        return Err(ProtocolError::SameNode(i));
    }
    let mut w = vec![0.0; state.dim()];
    let sd = noise.model.sigma_prime;
    noise.fill(&mut w, sd);
    Ok(state
        .estimate(j)
        .iter()
        .zip(state.estimate(i))
        .zip(w)
        .map(|((vj, vi), w)| vj - vi + w)
        .collect())
}

/// Sorted, deduplicated measuring set, validated against `n`.
pub fn normalize_measuring(measuring: &[usize], n: usize) -> Result<Vec<usize>, ProtocolError> {
    let mut set = measuring.to_vec();
    set.sort_unstable();
    set.dedup();
    if let Some(&node) = set.last() {
        if node >= n {
            return Err(ProtocolError::NodeOutOfRange { node, n });
        }
    }
    Ok(set)
}

fn is_sorted_set(measuring: &[usize]) -> bool {
    measuring.windows(2).all(|w| w[0] < w[1])
}

struct Checked {
    delta: f64,
}

fn check_step(
    state: &ProtocolState,
    g: &GraphSnapshot,
    measuring: &[usize],
    sched: &StepsizeSchedule,
    draws: &NoiseDraws,
    target: &Target,
) -> Result<Checked, ProtocolError> {
    if g.node_count() != state.n {
        return Err(ProtocolError::Dimension(format!(
            "graph has {} nodes, state has {} agents",
            g.node_count(),
            state.n
        )));
    }
    state.check_target(target)?;
    if !is_sorted_set(measuring) {
        return Err(ProtocolError::Dimension("measuring set must be sorted and unique".into()));
    }
    if let Some(&node) = measuring.last() {
        if node >= state.n {
            return Err(ProtocolError::NodeOutOfRange { node, n: state.n });
        }
    }
    if !draws.matches(g, measuring.len(), state.l) {
        return Err(ProtocolError::Dimension("noise draws do not match graph and measuring set".into()));
    }
    Ok(Checked {
        delta: sched.at(state.t)?,
    })
}

/// Writes the update of `state` into `out` (row-major, same shape).
fn write_update(
    state: &ProtocolState,
    g: &GraphSnapshot,
    measuring: &[usize],
    delta: f64,
    draws: &NoiseDraws,
    target: &Target,
    out: &mut [f64],
) {
    let l = state.l;
    let gain = delta / 4.0;
    let mut acc = vec![0.0; l];
    for i in 0..state.n {
        acc.fill(0.0);
        let vi = state.estimate(i);
        let di = g.degree(i);
        for (k, &j) in g.neighbors(i).iter().enumerate() {
            let vj = state.estimate(j);
            let w = draws.offset(i, k);
            let scale = 1.0 / di.max(g.degree(j)) as f64;
            for c in 0..l {
                acc[c] += (vj[c] - vi[c] + w[c]) * scale;
            }
        }
        let row = &mut out[i * l..(i + 1) * l];
        for c in 0..l {
            row[c] = vi[c] + gain * acc[c];
        }
    }
    let mu = target.as_slice();
    for (p, &i) in measuring.iter().enumerate() {
        let w = draws.measurement(p);
        for c in 0..l {
            out[i * l + c] += gain * (mu[c] + w[c] - state.v[i * l + c]);
        }
    }
}

/// One synchronous update with explicitly supplied noise draws.
pub fn step_with_draws(
    state: &ProtocolState,
    g: &GraphSnapshot,
    measuring: &[usize],
    sched: &StepsizeSchedule,
    draws: &NoiseDraws,
    target: &Target,
) -> Result<ProtocolState, ProtocolError> {
    let checked = check_step(state, g, measuring, sched, draws, target)?;
    let mut next = state.clone();
    write_update(state, g, measuring, checked.delta, draws, target, &mut next.v);
    next.t += 1;
    Ok(next)
}

/// One synchronous update drawing fresh noise from `noise`.
pub fn step(
    state: &ProtocolState,
    g: &GraphSnapshot,
    measuring: &[usize],
    sched: &StepsizeSchedule,
    noise: &mut NoiseSource,
    target: &Target,
) -> Result<ProtocolState, ProtocolError> {
    let measuring = normalize_measuring(measuring, state.n)?;
    let draws = noise.draw(g, &measuring, state.l);
    step_with_draws(state, g, &measuring, sched, &draws, target)
}

/// The same update assembled as `(1-Δ)v + Δ(A v + b + r + c)`.
pub fn step_matrix_form(
    state: &ProtocolState,
    g: &GraphSnapshot,
    measuring: &[usize],
    sched: &StepsizeSchedule,
    draws: &NoiseDraws,
    target: &Target,
) -> Result<ProtocolState, ProtocolError> {
    let Checked { delta } = check_step(state, g, measuring, sched, draws, target)?;
    let n = state.n;
    let l = state.l;
    let a = protocol_matrix(g, measuring)
        .map_err(|e| ProtocolError::Dimension(e.to_string()))?
        .into_inner();
    let mut next = state.clone();
    for coord in 0..l {
        let x = DVector::from_vec(state.column(coord));
        let mut b = DVector::zeros(n);
        let mut r = DVector::zeros(n);
        for (p, &i) in measuring.iter().enumerate() {
            b[i] = target.as_slice()[coord] / 4.0;
            r[i] = draws.measurement(p)[coord] / 4.0;
        }
        let c = DVector::from_fn(n, |i, _| {
            let di = g.degree(i);
            g.neighbors(i)
                .iter()
                .enumerate()
                .map(|(k, &j)| draws.offset(i, k)[coord] / di.max(g.degree(j)) as f64)
                .sum::<f64>()
                / 4.0
        });
        let y = &a * &x;
        let updated = &x * (1.0 - delta) + (y + b + r + c) * delta;
        for i in 0..n {
            next.v[i * l + coord] = updated[i];
        }
    }
    next.t += 1;
    Ok(next)
}

/// Reusable buffers for running many steps in place.
#[derive(Debug, Default)]
pub struct Stepper {
    draws: NoiseDraws,
    next: Vec<f64>,
}

impl Stepper {
    pub fn new() -> Self {
        Self::default()
    }

    /// Advances `state` by one step; returns the stepsize used. `measuring`
    /// must be sorted and unique.
    pub fn advance(
        &mut self,
        state: &mut ProtocolState,
        g: &GraphSnapshot,
        measuring: &[usize],
        sched: &StepsizeSchedule,
        noise: &mut NoiseSource,
        target: &Target,
    ) -> Result<f64, ProtocolError> {
        noise.draw_into(g, measuring, state.l, &mut self.draws);
        let Checked { delta } = check_step(state, g, measuring, sched, &self.draws, target)?;
        self.next.resize(state.v.len(), 0.0);
        write_update(state, g, measuring, delta, &self.draws, target, &mut self.next);
        std::mem::swap(&mut state.v, &mut self.next);
        state.t += 1;
        Ok(delta)
    }
}

/// Exact `E[Z(t+1) | v(t)] = |q(t+1) - μ1|^2 + Δ^2 (E|r|^2 + E|c|^2)`.
pub fn expected_next_variance(
    state: &ProtocolState,
    g: &GraphSnapshot,
    measuring: &[usize],
    sched: &StepsizeSchedule,
    model: &NoiseModel,
    target: &Target,
) -> Result<f64, ProtocolError> {
    let measuring = normalize_measuring(measuring, state.n)?;
    let zeros = NoiseDraws::zeros(g, measuring.len(), state.l);
    let mean_next = step_with_draws(state, g, &measuring, sched, &zeros, target)?;
    let delta = sched.at(state.t)?;
    let mut offset_weight = 0.0;
    for i in 0..g.node_count() {
        for &j in g.neighbors(i) {
            let m = g.degree(i).max(g.degree(j)) as f64;
            offset_weight += 1.0 / (m * m);
        }
    }
    let per_coord = (measuring.len() as f64 * model.sigma.powi(2) + offset_weight * model.sigma_prime.powi(2)) / 16.0;
    Ok(variance(&mean_next, target) + delta * delta * state.l as f64 * per_coord)
}

/// `Z(t) = Σ_i |v_i(t) - μ|^2`.
pub fn variance(state: &ProtocolState, target: &Target) -> f64 {
    let mu = target.as_slice();
    state
        .v
        .chunks_exact(state.l)
        .flat_map(|row| row.iter().zip(mu).map(|(v, m)| (v - m) * (v - m)))
        .sum()
}

/// `max_{i,c} |v_i(t)_c - μ_c|`.
pub fn max_error(state: &ProtocolState, target: &Target) -> f64 {
    let mu = target.as_slice();
    state
        .v
        .chunks_exact(state.l)
        .flat_map(|row| row.iter().zip(mu).map(|(v, m)| (v - m).abs()))
        .fold(0.0, f64::max)
}

/// Dense n×l copy of the estimates.
pub fn as_matrix(state: &ProtocolState) -> DMatrix<f64> {
    DMatrix::from_row_slice(state.n, state.l, &state.v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate, Family};

    fn k2() -> GraphSnapshot {
        GraphSnapshot::new(2, [(0, 1)]).unwrap()
    }

    #[test]
    fn stepsize_examples() {
        let s = StepsizeSchedule::new(0.5, 1.0).unwrap();
        assert!((stepsize(&s, 3).unwrap() - 0.5).abs() < 1e-15);
        let s = StepsizeSchedule::new(0.75, 0.0).unwrap();
        assert!((stepsize(&s, 16).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(stepsize(&s, 1).unwrap(), 1.0);
        let s = StepsizeSchedule::new(0.9, 1.0).unwrap();
        assert!((stepsize(&s, 1).unwrap() - 2f64.powf(-0.1)).abs() < 1e-15);
        assert!(matches!(stepsize(&StepsizeSchedule::new(0.5, 0.0).unwrap(), 0), Err(ProtocolError::Stepsize { .. })));
        assert!(StepsizeSchedule::new(1.0, 1.0).is_err());
        assert!(StepsizeSchedule::new(0.0, 1.0).is_err());
        assert!(StepsizeSchedule::new(0.5, -1.0).is_err());
    }

    #[test]
    fn noiseless_offset_is_exact() {
        let state = ProtocolState::from_rows(&[vec![1.0, 2.0], vec![4.0, -1.0]]).unwrap();
        let mut noise = NoiseSource::new(NoiseModel::noiseless(), 1);
        assert_eq!(observe_offset(&state, 0, 1, &mut noise).unwrap(), vec![3.0, -3.0]);
        assert_eq!(observe_offset(&state, 0, 0, &mut noise).unwrap_err(), ProtocolError::SameNode(0));
        assert!(observe_offset(&state, 0, 2, &mut noise).is_err());
    }

    #[test]
    fn offset_noise_moments() {
        let sp = 0.7;
        let draws = 100_000;
        let state = ProtocolState::new(2, 1, vec![3.0, 3.0]).unwrap();
        for dist in [NoiseDistribution::Gaussian, NoiseDistribution::Uniform, NoiseDistribution::Rademacher] {
            let mut noise = NoiseSource::new(NoiseModel::new(0.0, sp, dist).unwrap(), 5);
            let samples: Vec<f64> = (0..draws)
                .map(|_| noise.observe_offset(&state, 0, 1).unwrap()[0])
                .collect();
            let mean = samples.iter().sum::<f64>() / draws as f64;
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
            assert!(mean.abs() < 3.0 * sp / (draws as f64).sqrt(), "{dist:?} mean {mean}");
            assert!((var / (sp * sp) - 1.0).abs() < 0.05, "{dist:?} var {var}");
        }
    }

    #[test]
    fn k2_hand_example() {
        let state = ProtocolState::new(2, 1, vec![0.0, 2.0]).unwrap();
        // Δ(3) = 1/2 with ε = 1/2, offset 1
        let state = ProtocolState::at_time(2, 1, state.values().to_vec(), 3).unwrap();
        let sched = StepsizeSchedule::new(0.5, 1.0).unwrap();
        let target = Target::new(vec![5.0]).unwrap();
        let mut noise = NoiseSource::new(NoiseModel::noiseless(), 0);
        let next = step(&state, &k2(), &[], &sched, &mut noise, &target).unwrap();
        assert_eq!(next.values(), &[0.25, 1.75]);
        assert_eq!(next.time(), 4);
        let draws = NoiseDraws::zeros(&k2(), 0, 1);
        let mf = step_matrix_form(&state, &k2(), &[], &sched, &draws, &target).unwrap();
        assert!((mf.values()[0] - 0.25).abs() < 1e-15 && (mf.values()[1] - 1.75).abs() < 1e-15);
    }

    #[test]
    fn target_is_a_fixed_point() {
        let target = Target::new(vec![1.5, -2.0]).unwrap();
        let sched = StepsizeSchedule::new(0.5, 1.0).unwrap();
        for family in [Family::Complete, Family::Star, Family::Lollipop] {
            let g = generate(family, 6).unwrap();
            let state = ProtocolState::at_target(6, &target);
            let mut noise = NoiseSource::new(NoiseModel::noiseless(), 0);
            for measuring in [vec![], vec![0], vec![1, 3, 5], (0..6).collect()] {
                let next = step(&state, &g, &measuring, &sched, &mut noise, &target).unwrap();
                assert!(variance(&next, &target) < 1e-28);
                let draws = NoiseDraws::zeros(&g, measuring.len(), 2);
                let mf = step_matrix_form(&state, &g, &measuring, &sched, &draws, &target).unwrap();
                assert!(variance(&mf, &target) < 1e-28);
            }
        }
    }

    #[test]
    fn isolated_node_is_untouched() {
        let g = GraphSnapshot::new(3, [(0, 1)]).unwrap();
        let state = ProtocolState::new(3, 1, vec![0.0, 1.0, 7.0]).unwrap();
        let sched = StepsizeSchedule::new(0.5, 1.0).unwrap();
        let mut noise = NoiseSource::new(NoiseModel::new(1.0, 1.0, NoiseDistribution::Gaussian).unwrap(), 9);
        let next = step(&state, &g, &[0], &sched, &mut noise, &Target::zeros(1).unwrap()).unwrap();
        assert_eq!(next.estimate(2), &[7.0]);
    }

    #[test]
    fn step_rejects_bad_inputs() {
        let state = ProtocolState::new(2, 1, vec![0.0, 1.0]).unwrap();
        let sched = StepsizeSchedule::new(0.5, 1.0).unwrap();
        let mut noise = NoiseSource::new(NoiseModel::noiseless(), 0);
        let target = Target::zeros(1).unwrap();
        let l3 = generate(Family::Line, 3).unwrap();
        assert!(matches!(step(&state, &l3, &[], &sched, &mut noise, &target), Err(ProtocolError::Dimension(_))));
        assert!(matches!(
            step(&state, &k2(), &[2], &sched, &mut noise, &target),
            Err(ProtocolError::NodeOutOfRange { node: 2, n: 2 })
        ));
        let wide = Target::zeros(2).unwrap();
        assert!(step(&state, &k2(), &[], &sched, &mut noise, &wide).is_err());
        let early = ProtocolState::at_time(2, 1, vec![0.0, 1.0], 0).unwrap();
        let zero_offset = StepsizeSchedule::new(0.5, 0.0).unwrap();
        assert!(matches!(
            step(&early, &k2(), &[], &zero_offset, &mut noise, &target),
            Err(ProtocolError::Stepsize { .. })
        ));
    }

    #[test]
    fn variance_and_error_examples() {
        let mu = Target::new(vec![1.0]).unwrap();
        let s = ProtocolState::new(2, 1, vec![0.0, 2.0]).unwrap();
        assert_eq!(variance(&s, &mu), 2.0);
        assert_eq!(max_error(&s, &mu), 1.0);
        assert_eq!(variance(&ProtocolState::at_target(4, &mu), &mu), 0.0);
        assert_eq!(max_error(&ProtocolState::at_target(4, &mu), &mu), 0.0);
        let s = ProtocolState::new(1, 3, vec![1.0, 2.0, 2.0]).unwrap();
        assert_eq!(variance(&s, &Target::zeros(3).unwrap()), 9.0);
        let s = ProtocolState::new(2, 1, vec![5.0, -3.0]).unwrap();
        assert_eq!(max_error(&s, &Target::zeros(1).unwrap()), 5.0);
    }

    #[test]
    fn symmetric_offset_noise_is_antisymmetric() {
        let g = generate(Family::Complete, 4).unwrap();
        let mut model = NoiseModel::new(0.0, 1.0, NoiseDistribution::Gaussian).unwrap();
        model.symmetric_offset_noise = true;
        let mut noise = NoiseSource::new(model, 3);
        let d = noise.draw(&g, &[], 2);
        for i in 0..4 {
            for (k, &j) in g.neighbors(i).iter().enumerate() {
                let back = g.neighbors(j).iter().position(|&x| x == i).unwrap();
                let wij = d.offset(i, k);
                let wji = d.offset(j, back);
                assert_eq!(wij[0], -wji[0]);
                assert_eq!(wij[1], -wji[1]);
                assert_ne!(wij[0], 0.0);
            }
        }
    }

    #[test]
    fn stepper_matches_step() {
        let g = generate(Family::Lollipop, 8).unwrap();
        let model = NoiseModel::new(0.5, 0.3, NoiseDistribution::Uniform).unwrap();
        let sched = StepsizeSchedule::new(0.6, 1.0).unwrap();
        let target = Target::new(vec![1.0, 2.0]).unwrap();
        let start = ProtocolState::new(8, 2, (0..16).map(|x| x as f64).collect()).unwrap();
        let mut a = start.clone();
        let mut b = start;
        let mut na = NoiseSource::new(model, 77);
        let mut nb = NoiseSource::new(model, 77);
        let mut stepper = Stepper::new();
        for _ in 0..50 {
            stepper.advance(&mut a, &g, &[7], &sched, &mut na, &target).unwrap();
            b = step(&b, &g, &[7], &sched, &mut nb, &target).unwrap();
        }
        assert_eq!(a, b);
    }
}
