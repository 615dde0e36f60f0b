//! Graph and spectral quantities behind the convergence analysis: lazy
//! Metropolis hitting times, the sieve constant, the largest eigenvalue of
//! the update matrix, diameters, and the squared-norm decrease identity.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::graph::{GraphSnapshot, WeightKind, WeightMatrix};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AnalysisError {
    #[error("graph is disconnected")]
    Disconnected,
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),
    #[error("dimension mismatch: matrix is {matrix}, vector has {vector} entries")]
    DimensionMismatch { matrix: usize, vector: usize },
    #[error("need at least two nodes")]
    TooSmall,
    #[error("linear solve failed for target node {0}")]
    Singular(usize),
}

/// Symmetry tolerance for inputs that must be symmetric.
const SYMMETRY_TOL: f64 = 1e-12;

/// Lazy Metropolis walk: moves `i -> j` with probability
/// `1/(4 max(d_i, d_j))` when `i, j` are neighbors, stays put otherwise.
pub fn lazy_metropolis_transition(g: &GraphSnapshot) -> WeightMatrix {
    let n = g.node_count();
    let mut p = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut off = 0.0;
        for &j in g.neighbors(i) {
            let w = 0.25 / g.degree(i).max(g.degree(j)) as f64;
            p[(i, j)] = w;
            off += w;
        }
        p[(i, i)] = 1.0 - off;
    }
    WeightMatrix::new(WeightKind::LazyWalk, p)
}

/// Expected hitting times of the lazy Metropolis walk.
#[derive(Debug, Clone, Serialize)]
pub struct HittingTimes {
    /// `h[i][j]`: expected steps to reach `j` from `i`.
    pub h: Vec<Vec<f64>>,
    /// Largest entry, the constant H in the convergence bound.
    pub max_value: f64,
}

impl HittingTimes {
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.h[from][to]
    }
}

/// Solves `h_j = 0`, `h_i = 1 + sum_k P_ik h_k` (i != j) for every target j
/// with one LU solve each.
pub fn hitting_times(g: &GraphSnapshot) -> Result<HittingTimes, AnalysisError> {
    if !g.is_connected() {
        return Err(AnalysisError::Disconnected);
    }
    let n = g.node_count();
    let p = lazy_metropolis_transition(g).into_inner();
    let mut h = vec![vec![0.0; n]; n];
    let mut max_value: f64 = 0.0;
    for target in 0..n {
        if n == 1 {
            break;
        }
        let others: Vec<usize> = (0..n).filter(|&i| i != target).collect();
        let m = others.len();
        let system = DMatrix::from_fn(m, m, |r, c| {
            let delta = if r == c { 1.0 } else { 0.0 };
            delta - p[(others[r], others[c])]
        });
        let rhs = DVector::from_element(m, 1.0);
        let sol = system
            .lu()
            .solve(&rhs)
            .ok_or(AnalysisError::Singular(target))?;
        for (r, &i) in others.iter().enumerate() {
            h[i][target] = sol[r];
            max_value = max_value.max(sol[r]);
        }
    }
    Ok(HittingTimes { h, max_value })
}

/// How the pair sum in the sieve form is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SumConvention {
    /// Sum over ordered pairs k != l; each undirected edge counts twice.
    #[default]
    Ordered,
    /// Sum over unordered pairs k < l with weight (a_kl + a_lk)/2.
    Unordered,
}

#[derive(Debug, Clone, Serialize)]
pub struct SieveResult {
    pub value: f64,
    /// Node m attaining the outer minimum.
    pub argmin_index: usize,
    /// eta/(nD), when the graph of the matrix is weakly connected.
    pub lower_bound: Option<f64>,
    pub convention: SumConvention,
}

/// Laplacian of the pair form `sum w_kl (x_k - x_l)^2` over unordered pairs.
fn pair_form_laplacian(a: &DMatrix<f64>, convention: SumConvention) -> DMatrix<f64> {
    let n = a.nrows();
    let scale = match convention {
        SumConvention::Ordered => 1.0,
        SumConvention::Unordered => 0.5,
    };
    let mut lap = DMatrix::zeros(n, n);
    for k in 0..n {
        for l in (k + 1)..n {
            let w = scale * (a[(k, l)] + a[(l, k)]);
            if w != 0.0 {
                lap[(k, l)] -= w;
                lap[(l, k)] -= w;
                lap[(k, k)] += w;
                lap[(l, l)] += w;
            }
        }
    }
    lap
}

fn smallest_eigenvalue(m: DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Sieve constant under the ordered-pair reading.
pub fn sieve_constant(a: &WeightMatrix) -> Result<SieveResult, AnalysisError> {
    sieve_constant_with(a, SumConvention::Ordered)
}

/// `min_m min_{|x|=1} x_m^2 + pair form`. The inner minimum is the smallest
/// eigenvalue of `E_mm + L`.
pub fn sieve_constant_with(
    a: &WeightMatrix,
    convention: SumConvention,
) -> Result<SieveResult, AnalysisError> {
    let m = a.matrix();
    if m.nrows() != m.ncols() {
        return Err(AnalysisError::NotSquare(m.nrows(), m.ncols()));
    }
    let lap = pair_form_laplacian(m, convention);
    let mut best = (f64::INFINITY, 0);
    for node in 0..m.nrows() {
        let mut q = lap.clone();
        q[(node, node)] += 1.0;
        let value = smallest_eigenvalue(q).max(0.0);
        if value < best.0 {
            best = (value, node);
        }
    }
    Ok(SieveResult {
        value: best.0,
        argmin_index: best.1,
        lower_bound: sieve_lower_bound(a).ok(),
        convention,
    })
}

/// Undirected graph with an edge wherever `a_kl > 0` or `a_lk > 0`.
pub fn graph_of_matrix(a: &WeightMatrix) -> GraphSnapshot {
    let m = a.matrix();
    let n = m.nrows();
    let edges = (0..n)
        .flat_map(|k| ((k + 1)..n).map(move |l| (k, l)))
        .filter(|&(k, l)| m[(k, l)] > 0.0 || m[(l, k)] > 0.0);
    GraphSnapshot::new(n.max(1), edges).expect("matrix indices are in range")
}

/// `eta/(nD)` with eta the smallest positive off-diagonal entry and D the
/// weakly-connected diameter of the matrix's graph.
pub fn sieve_lower_bound(a: &WeightMatrix) -> Result<f64, AnalysisError> {
    let m = a.matrix();
    let n = m.nrows();
    if n != m.ncols() {
        return Err(AnalysisError::NotSquare(n, m.ncols()));
    }
    if n < 2 {
        return Err(AnalysisError::TooSmall);
    }
    let g = graph_of_matrix(a);
    let d = diameter(&g)?;
    let eta = (0..n)
        .flat_map(|k| (0..n).filter(move |&l| l != k).map(move |l| (k, l)))
        .map(|(k, l)| m[(k, l)])
        .filter(|&x| x > 0.0)
        .fold(f64::INFINITY, f64::min)
        .min(1.0);
    Ok(eta / (n as f64 * d as f64))
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<(), AnalysisError> {
    if m.nrows() != m.ncols() {
        return Err(AnalysisError::NotSquare(m.nrows(), m.ncols()));
    }
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL {
        return Err(AnalysisError::Asymmetric(asym));
    }
    Ok(())
}

/// Largest eigenvalue of a symmetric matrix.
pub fn lambda_max(a: &WeightMatrix) -> Result<f64, AnalysisError> {
    check_symmetric(a.matrix())?;
    Ok(SymmetricEigen::new(a.matrix().clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Both sides of `|x|^2 - |Ax|^2 = sum_j (1 - r_j) x_j^2 + sum_{k<l} [A^2]_kl (x_k - x_l)^2`
/// where `r_j` are the row sums of `A^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormDecrease {
    pub lhs: f64,
    pub rhs: f64,
}

pub fn norm_decrease_identity(a: &WeightMatrix, x: &[f64]) -> Result<NormDecrease, AnalysisError> {
    let m = a.matrix();
    check_symmetric(m)?;
    let n = m.nrows();
    if x.len() != n {
        return Err(AnalysisError::DimensionMismatch {
            matrix: n,
            vector: x.len(),
        });
    }
    let xv = DVector::from_column_slice(x);
    let ax = m * &xv;
    let lhs = xv.norm_squared() - ax.norm_squared();
    let sq = m * m;
    let mut rhs = 0.0;
    for j in 0..n {
        let r = sq.row(j).sum();
        rhs += (1.0 - r) * x[j] * x[j];
    }
    for k in 0..n {
        for l in (k + 1)..n {
            let diff = x[k] - x[l];
            rhs += sq[(k, l)] * diff * diff;
        }
    }
    Ok(NormDecrease { lhs, rhs })
}

/// Largest shortest-path length over all node pairs.
pub fn diameter(g: &GraphSnapshot) -> Result<usize, AnalysisError> {
    let mut best = 0;
    for s in 0..g.node_count() {
        for d in g.bfs_distances(s) {
            best = best.max(d.ok_or(AnalysisError::Disconnected)?);
        }
    }
    Ok(best)
}

/// All four headline quantities for a connected graph.
#[derive(Debug, Clone, Serialize)]
pub struct GraphReport {
    pub n: usize,
    pub edges: usize,
    pub diameter: usize,
    pub max_hitting_time: f64,
    pub sieve_constant: f64,
    pub sieve_constant_unordered: f64,
    pub sieve_lower_bound: f64,
    /// lambda_max of the update matrix with `measuring` as the measuring set.
    pub lambda_max: f64,
    pub measuring: Vec<usize>,
}

pub fn graph_report(g: &GraphSnapshot, measuring: &[usize]) -> Result<GraphReport, AnalysisError> {
    let metro = crate::graph::metropolis_matrix(g);
    let a = crate::graph::protocol_matrix(g, measuring).map_err(|_| AnalysisError::TooSmall)?;
    Ok(GraphReport {
        n: g.node_count(),
        edges: g.edge_count(),
        diameter: diameter(g)?,
        max_hitting_time: hitting_times(g)?.max_value,
        sieve_constant: sieve_constant(&metro)?.value,
        sieve_constant_unordered: sieve_constant_with(&metro, SumConvention::Unordered)?.value,
        sieve_lower_bound: sieve_lower_bound(&metro)?,
        lambda_max: lambda_max(&a)?,
        measuring: measuring.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate, metropolis_matrix, protocol_matrix, Family};

    fn k2() -> GraphSnapshot {
        GraphSnapshot::new(2, [(0, 1)]).unwrap()
    }

    fn l3() -> GraphSnapshot {
        generate(Family::Line, 3).unwrap()
    }

    #[test]
    fn lazy_walk_examples() {
        let p = lazy_metropolis_transition(&k2());
        assert_eq!(p.matrix().as_slice(), &[0.75, 0.25, 0.25, 0.75]);
        let p = lazy_metropolis_transition(&l3());
        assert_eq!((p.get(0, 1), p.get(1, 2)), (0.125, 0.125));
        assert_eq!((p.get(0, 0), p.get(1, 1), p.get(2, 2)), (0.875, 0.75, 0.875));
        let p = lazy_metropolis_transition(&generate(Family::Complete, 3).unwrap());
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 0.75 } else { 0.125 };
                assert_eq!(p.get(i, j), want);
            }
        }
    }

    #[test]
    fn hitting_time_examples() {
        let h = hitting_times(&k2()).unwrap();
        assert!((h.get(0, 1) - 4.0).abs() < 1e-12);
        assert!((h.max_value - 4.0).abs() < 1e-12);
        let h = hitting_times(&l3()).unwrap();
        assert!((h.get(0, 2) - 24.0).abs() < 1e-9);
        assert!((h.get(1, 2) - 16.0).abs() < 1e-9);
        assert!((h.max_value - 24.0).abs() < 1e-9);
        for i in 0..3 {
            assert_eq!(h.get(i, i), 0.0);
        }
        let two_parts = GraphSnapshot::new(4, [(0, 1), (2, 3)]).unwrap();
        assert_eq!(hitting_times(&two_parts).unwrap_err(), AnalysisError::Disconnected);
    }

    #[test]
    fn sieve_examples() {
        let s = sieve_constant(&metropolis_matrix(&k2())).unwrap();
        assert!((s.value - (5.0 - 17f64.sqrt()) / 2.0).abs() < 1e-12);
        let s = sieve_constant_with(&metropolis_matrix(&k2()), SumConvention::Unordered).unwrap();
        assert!((s.value - (3.0 - 5f64.sqrt()) / 2.0).abs() < 1e-12);

        let identity = WeightMatrix::new(WeightKind::Metropolis, DMatrix::identity(3, 3));
        assert_eq!(sieve_constant(&identity).unwrap().value, 0.0);

        let ragged = WeightMatrix::new(WeightKind::Metropolis, DMatrix::zeros(2, 3));
        assert_eq!(sieve_constant(&ragged).unwrap_err(), AnalysisError::NotSquare(2, 3));
    }

    #[test]
    fn sieve_lower_bound_examples() {
        assert!((sieve_lower_bound(&metropolis_matrix(&k2())).unwrap() - 0.5).abs() < 1e-15);
        assert!((sieve_lower_bound(&metropolis_matrix(&l3())).unwrap() - 1.0 / 12.0).abs() < 1e-15);
        let star = generate(Family::Star, 4).unwrap();
        assert!((sieve_lower_bound(&metropolis_matrix(&star)).unwrap() - 1.0 / 24.0).abs() < 1e-15);
        let split = GraphSnapshot::new(3, [(0, 1)]).unwrap();
        assert_eq!(
            sieve_lower_bound(&metropolis_matrix(&split)).unwrap_err(),
            AnalysisError::Disconnected
        );
    }

    #[test]
    fn lambda_max_examples() {
        let l = lambda_max(&protocol_matrix(&k2(), &[]).unwrap()).unwrap();
        assert!((l - 1.0).abs() < 1e-14);
        let l = lambda_max(&protocol_matrix(&k2(), &[0]).unwrap()).unwrap();
        assert!((l - (5.0 + 5f64.sqrt()) / 8.0).abs() < 1e-14);
        assert!(l <= 1.0 - 1.0 / (24.0 * 4.0));
        let skew = WeightMatrix::new(WeightKind::Protocol, DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.2, 0.5]));
        assert!(matches!(lambda_max(&skew), Err(AnalysisError::Asymmetric(_))));
    }

    #[test]
    fn norm_identity_examples() {
        let a = protocol_matrix(&k2(), &[]).unwrap();
        let nd = norm_decrease_identity(&a, &[1.0, 1.0]).unwrap();
        assert!(nd.lhs.abs() < 1e-15 && nd.rhs.abs() < 1e-15);

        // A = [[1/2,1/4],[1/4,3/4]], x = e_0: Ax = (1/2, 1/4), |Ax|^2 = 5/16
        let a = protocol_matrix(&k2(), &[0]).unwrap();
        let nd = norm_decrease_identity(&a, &[1.0, 0.0]).unwrap();
        assert!((nd.lhs - 11.0 / 16.0).abs() < 1e-15);
        assert!((nd.rhs - 11.0 / 16.0).abs() < 1e-15);

        assert_eq!(
            norm_decrease_identity(&a, &[1.0]).unwrap_err(),
            AnalysisError::DimensionMismatch { matrix: 2, vector: 1 }
        );
    }

    #[test]
    fn diameters() {
        for n in 2..8 {
            assert_eq!(diameter(&generate(Family::Complete, n).unwrap()).unwrap(), 1);
            assert_eq!(diameter(&generate(Family::Line, n).unwrap()).unwrap(), n - 1);
            if n >= 3 {
                assert_eq!(diameter(&generate(Family::Star, n).unwrap()).unwrap(), 2);
            }
        }
        let split = GraphSnapshot::new(3, [(0, 1)]).unwrap();
        assert_eq!(diameter(&split).unwrap_err(), AnalysisError::Disconnected);
    }
}
