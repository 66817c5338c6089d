//! The model problem: a lognormal random field on the unit square,
//! uniform triangulations, P1 finite element assembly with homogeneous
//! Dirichlet conditions, the integral quantity of interest, and coupled
//! two-level sample evaluation.
//!
//! Assembly always runs in binary64; only the linear solve is inexact.
//! Each square cell is split into two right triangles along a fixed
//! diagonal, and the coefficient is evaluated once per triangle at the
//! centroid (midpoint rule).

use thiserror::Error;

use crate::cholesky::{self, FactorError};
use crate::cost::CostReceipt;
use crate::fp::Format;
use crate::ir::{self, IrError, PrecisionQuad};
use crate::minres::{self, MinresError};
use crate::rng::Stream;
use crate::sparse::SparseSpd;

/// Truncated Karhunen-Loeve style field
/// `a(x, w) = exp(sum_j w_j j^-decay sin(2 pi j x1) cos(2 pi j x2))`
/// with `w_j ~ N(0, sigma^2)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RandomFieldParams {
    /// Number of expansion terms (the spec's `s`).
    pub terms: usize,
    /// Algebraic decay exponent of the term amplitudes (the spec's `q`).
    pub decay: f64,
    /// Standard deviation of each coordinate draw.
    pub sigma: f64,
}

impl RandomFieldParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.terms < 1 {
            return Err("field needs at least one term".into());
        }
        if !(self.decay > 0.0) {
            return Err("decay exponent must be positive".into());
        }
        if !(self.sigma > 0.0) {
            return Err("sigma must be positive".into());
        }
        Ok(())
    }
}

/// One draw of the field coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Omega(Vec<f64>);

impl Omega {
    pub fn new(coords: Vec<f64>) -> Omega {
        Omega(coords)
    }

    pub fn zero(terms: usize) -> Omega {
        Omega(vec![0.0; terms])
    }

    /// Draw all coordinates from the stream: `w_j = sigma * z_j`.
    pub fn draw(params: &RandomFieldParams, stream: &Stream) -> Omega {
        Omega(
            (0..params.terms)
                .map(|j| params.sigma * stream.standard_normal(j as u32))
                .collect(),
        )
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }
}

/// Point evaluation of the lognormal coefficient; strictly positive.
pub fn eval_field(x1: f64, x2: f64, omega: &Omega, params: &RandomFieldParams) -> f64 {
    debug_assert_eq!(omega.0.len(), params.terms);
    let mut exponent = 0.0;
    for (idx, w) in omega.0.iter().enumerate() {
        let j = (idx + 1) as f64;
        exponent += w * j.powf(-params.decay)
            * (2.0 * std::f64::consts::PI * j * x1).sin()
            * (2.0 * std::f64::consts::PI * j * x2).cos();
    }
    assert!(
        exponent.is_finite() && exponent.abs() < 700.0,
        "field exponent {exponent} out of safe range"
    );
    exponent.exp()
}

/// A uniform triangulation of the unit square at mesh size
/// `h = h0 * m^-level`, with the interior-node index map for homogeneous
/// Dirichlet conditions.
#[derive(Debug, Clone)]
pub struct MeshLevel {
    pub level: usize,
    pub h: f64,
    /// grid cells per side
    pub cells: usize,
    pub nodes: Vec<(f64, f64)>,
    /// triangle vertex triples, global node indices
    pub triangles: Vec<[usize; 3]>,
    /// global node index -> interior unknown index
    pub interior: Vec<Option<usize>>,
    pub n_unknowns: usize,
}

impl MeshLevel {
    /// `h0_inv` is the number of cells per side on level 0; each level
    /// refines by the factor `m`.
    pub fn new(level: usize, h0_inv: usize, m: usize) -> MeshLevel {
        assert!(h0_inv >= 2 && m >= 2);
        let cells = h0_inv * m.pow(level as u32);
        let h = 1.0 / cells as f64;
        let side = cells + 1;
        let mut nodes = Vec::with_capacity(side * side);
        for iy in 0..side {
            for ix in 0..side {
                nodes.push((ix as f64 * h, iy as f64 * h));
            }
        }
        let mut triangles = Vec::with_capacity(2 * cells * cells);
        for cy in 0..cells {
            for cx in 0..cells {
                let a = cy * side + cx;
                let b = a + 1;
                let c = a + side + 1;
                let d = a + side;
                // fixed diagonal a-c
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }
        let mut interior = vec![None; side * side];
        let mut n_unknowns = 0;
        for iy in 1..cells {
            for ix in 1..cells {
                interior[iy * side + ix] = Some(n_unknowns);
                n_unknowns += 1;
            }
        }
        MeshLevel { level, h, cells, nodes, triangles, interior, n_unknowns }
    }
}

/// Stiffness matrix, load vector and QoI weights on the interior nodes.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub a: SparseSpd,
    pub b: Vec<f64>,
    /// `G(u_h) = qoi_weights . x` for the integral functional.
    pub qoi_weights: Vec<f64>,
}

/// P1 assembly with the right-hand side f = 1 and the coefficient
/// sampled at triangle centroids.
pub fn assemble(
    mesh: &MeshLevel,
    omega: &Omega,
    params: &RandomFieldParams,
) -> AssembledSystem {
    let n = mesh.n_unknowns;
    let mut triplets = Vec::with_capacity(9 * mesh.triangles.len());
    let mut b = vec![0.0; n];
    let mut w = vec![0.0; n];
    for tri in &mesh.triangles {
        let p: Vec<(f64, f64)> = tri.iter().map(|&v| mesh.nodes[v]).collect();
        let det = (p[1].0 - p[0].0) * (p[2].1 - p[0].1)
            - (p[2].0 - p[0].0) * (p[1].1 - p[0].1);
        let area = 0.5 * det.abs();
        let centroid = (
            (p[0].0 + p[1].0 + p[2].0) / 3.0,
            (p[0].1 + p[1].1 + p[2].1) / 3.0,
        );
        let coef = eval_field(centroid.0, centroid.1, omega, params);
        // gradients of the barycentric basis functions
        let grads = [
            ((p[1].1 - p[2].1) / det, (p[2].0 - p[1].0) / det),
            ((p[2].1 - p[0].1) / det, (p[0].0 - p[2].0) / det),
            ((p[0].1 - p[1].1) / det, (p[1].0 - p[0].0) / det),
        ];
        for (li, &vi) in tri.iter().enumerate() {
            let Some(i) = mesh.interior[vi] else { continue };
            b[i] += area / 3.0;
            w[i] += area / 3.0;
            for (lj, &vj) in tri.iter().enumerate() {
                let Some(j) = mesh.interior[vj] else { continue };
                let k = coef * area * (grads[li].0 * grads[lj].0 + grads[li].1 * grads[lj].1);
                triplets.push((i, j, k));
            }
        }
    }
    let a = SparseSpd::from_triplets(n, triplets)
        .expect("P1 stiffness matrix is SPD by construction");
    AssembledSystem { a, b, qoi_weights: w }
}

/// The integral quantity of interest `G(u_h) = integral of u_h`.
pub fn eval_qoi(system: &AssembledSystem, x: &[f64]) -> f64 {
    assert_eq!(x.len(), system.qoi_weights.len(), "dimension mismatch");
    system.qoi_weights.iter().zip(x).map(|(w, v)| w * v).sum()
}

/// Default MINRES iteration budget, as a multiple of the system size.
pub const MINRES_ITER_FACTOR: usize = 10;

/// Budget used inside replicated experiments: the heavy conditioning
/// tail of the lognormal field makes a small fixed multiple of `n`
/// insufficient for a fraction ~1e-3 of draws, and one failed sample
/// aborts the whole run.
pub const MINRES_EXPERIMENT_ITER_FACTOR: usize = 100;

/// How a single linear system is solved, with its accuracy parameters
/// already resolved for the level at hand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolverSpec {
    /// MINRES in binary64 stopped at the relative residual `tol`, with
    /// an iteration budget of `iter_factor * n`.
    Minres { tol: f64, iter_factor: usize },
    /// Double precision Cholesky, no refinement (the full-precision
    /// reference solver).
    DirectDouble,
    /// Low-precision Cholesky with iterative refinement to `eps`.
    CholeskyIr { quad: PrecisionQuad, eps: f64 },
}

impl SolverSpec {
    /// MINRES with the default iteration budget.
    pub fn minres(tol: f64) -> SolverSpec {
        SolverSpec::Minres { tol, iter_factor: MINRES_ITER_FACTOR }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SampleError {
    #[error("level {level} (n = {n}): {source}")]
    Minres {
        level: usize,
        n: usize,
        source: MinresError,
    },
    #[error("level {level} (n = {n}): {source}")]
    Ir {
        level: usize,
        n: usize,
        source: IrError,
    },
    #[error("level {level} (n = {n}): {source}")]
    Factor {
        level: usize,
        n: usize,
        source: FactorError,
    },
}

/// One coupled evaluation `Y_l = Q_l(w) - Q_{l-1}(w)` plus its cost.
#[derive(Debug, Clone)]
pub struct LevelSample {
    pub y: f64,
    /// The fine-mesh value `Q_l(w)`, kept for bias studies.
    pub q_fine: f64,
    pub cost: CostReceipt,
}

/// The model handle: field parameters plus a lazily built mesh
/// hierarchy, shareable across worker threads.
pub struct Problem {
    pub params: RandomFieldParams,
    pub h0_inv: usize,
    pub m: usize,
    meshes: Vec<std::sync::OnceLock<MeshLevel>>,
}

pub const MAX_MESH_LEVELS: usize = 16;

impl Problem {
    pub fn new(params: RandomFieldParams, h0_inv: usize, m: usize) -> Problem {
        params.validate().expect("invalid field parameters");
        let meshes = (0..MAX_MESH_LEVELS).map(|_| std::sync::OnceLock::new()).collect();
        Problem { params, h0_inv, m, meshes }
    }

    pub fn mesh(&self, level: usize) -> &MeshLevel {
        self.meshes[level].get_or_init(|| MeshLevel::new(level, self.h0_inv, self.m))
    }

    pub fn h(&self, level: usize) -> f64 {
        1.0 / (self.h0_inv as f64 * (self.m as f64).powi(level as i32))
    }

    pub fn n_unknowns(&self, level: usize) -> usize {
        let cells = self.h0_inv * self.m.pow(level as u32);
        (cells - 1) * (cells - 1)
    }

    /// Draw the field coordinates for sample `k` of `level`.
    pub fn draw_omega(&self, seed: crate::engine::SeedSpec, level: usize, k: u64) -> Omega {
        let stream = Stream::new(seed.master, seed.replicate, level as u32, k);
        Omega::draw(&self.params, &stream)
    }
}

/// Solve one assembled system and return the QoI value.
pub fn solve_qoi(
    system: &AssembledSystem,
    solver: &SolverSpec,
    level: usize,
    receipt: &mut CostReceipt,
) -> Result<f64, SampleError> {
    let n = system.a.n();
    let x = match solver {
        SolverSpec::Minres { tol, iter_factor } => {
            let res = minres::minres(&system.a, &system.b, *tol, iter_factor * n, receipt)
                .map_err(|source| SampleError::Minres { level, n, source })?;
            minres::charge_minres_memory(&system.a, res.iters, receipt);
            res.x
        }
        SolverSpec::DirectDouble => {
            let f = cholesky::cholesky(&system.a, Format::Double, receipt)
                .map_err(|source| SampleError::Factor { level, n, source })?;
            let x = cholesky::solve_with_factor(&f, &system.b, Format::Double, receipt)
                .map_err(|source| SampleError::Factor { level, n, source })?;
            receipt.charge_array(n, Format::Double);
            x
        }
        SolverSpec::CholeskyIr { quad, eps } => {
            let rep = ir::ir_solve(&system.a, &system.b, *quad, *eps, ir::IR_DEFAULT_MAX_STEPS)
                .map_err(|source| SampleError::Ir { level, n, source })?;
            receipt.merge(&rep.cost);
            rep.x
        }
    };
    Ok(eval_qoi(system, &x))
}

/// Evaluate `Y_l(w)`: the fine mesh at `level` and, for `level > 0`, the
/// coarse mesh at `level - 1`, both with the same draw and the same
/// solver configuration. A failed solve aborts the sample; it is never
/// silently resampled.
pub fn coupled_sample(
    problem: &Problem,
    level: usize,
    omega: &Omega,
    solver: &SolverSpec,
) -> Result<LevelSample, SampleError> {
    let mut cost = CostReceipt::default();
    let fine = assemble(problem.mesh(level), omega, &problem.params);
    let q_fine = solve_qoi(&fine, solver, level, &mut cost)?;
    let y = if level == 0 {
        q_fine
    } else {
        let coarse = assemble(problem.mesh(level - 1), omega, &problem.params);
        let q_coarse = solve_qoi(&coarse, solver, level, &mut cost)?;
        q_fine - q_coarse
    };
    Ok(LevelSample { y, q_fine, cost })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_params() -> RandomFieldParams {
        RandomFieldParams { terms: 4, decay: 2.0, sigma: 2.0 }
    }

    #[test]
    fn field_is_one_for_zero_draw() {
        let p = unit_params();
        let w = Omega::zero(4);
        for (x, y) in [(0.1, 0.2), (0.5, 0.5), (0.9, 0.05)] {
            assert_eq!(eval_field(x, y, &w, &p), 1.0);
        }
    }

    #[test]
    fn field_closed_form_single_term() {
        let p = RandomFieldParams { terms: 1, decay: 2.0, sigma: 1.0 };
        let w = Omega::new(vec![1.0]);
        // sin(pi/2) * cos(0) = 1 -> exp(1)
        let v = eval_field(0.25, 0.0, &w, &p);
        assert_relative_eq!(v, std::f64::consts::E, epsilon = 1e-14);
    }

    #[test]
    fn field_matches_independent_summation_order() {
        let p = RandomFieldParams { terms: 100, decay: 1.5, sigma: 1.0 };
        let stream = Stream::new(99, 0, 0, 0);
        let w = Omega::draw(&p, &stream);
        let (x1, x2) = (0.37, 0.81);
        // oracle: same series summed in reverse order
        let mut exponent = 0.0;
        for idx in (0..100).rev() {
            let j = (idx + 1) as f64;
            exponent += w.coords()[idx]
                * j.powf(-1.5)
                * (2.0 * std::f64::consts::PI * j * x1).sin()
                * (2.0 * std::f64::consts::PI * j * x2).cos();
        }
        let oracle = exponent.exp();
        assert_relative_eq!(eval_field(x1, x2, &w, &p), oracle, max_relative = 1e-14);
        assert!(oracle > 0.0);
    }

    #[test]
    fn mesh_geometry_invariants() {
        for (level, h0_inv, m) in [(0, 2, 2), (1, 8, 2), (0, 4, 2), (2, 8, 2)] {
            let mesh = MeshLevel::new(level, h0_inv, m);
            let total_area: f64 = mesh
                .triangles
                .iter()
                .map(|t| {
                    let p: Vec<_> = t.iter().map(|&v| mesh.nodes[v]).collect();
                    0.5 * ((p[1].0 - p[0].0) * (p[2].1 - p[0].1)
                        - (p[2].0 - p[0].0) * (p[1].1 - p[0].1))
                        .abs()
                })
                .sum();
            assert_relative_eq!(total_area, 1.0, epsilon = 1e-12);
            assert_eq!(mesh.h * mesh.cells as f64, 1.0);
            assert_eq!(mesh.n_unknowns, (mesh.cells - 1) * (mesh.cells - 1));
        }
    }

    #[test]
    fn single_interior_node_assembly() {
        // h = 1/2: one interior node; for a = 1 the stiffness "matrix" is
        // [[4]] and the load is h^2 (hand assembly over the six incident
        // triangles: the diagonal of the P1 Laplacian on this split is 4
        // at any h, and the hat integral is h^2).
        let mesh = MeshLevel::new(0, 2, 2);
        let params = unit_params();
        let sys = assemble(&mesh, &Omega::zero(4), &params);
        assert_eq!(sys.a.n(), 1);
        assert_relative_eq!(sys.a.values()[0], 4.0, epsilon = 1e-13);
        assert_relative_eq!(sys.b[0], 0.25, epsilon = 1e-14);
        assert_eq!(sys.b, sys.qoi_weights);
    }

    #[test]
    fn constant_field_reduces_to_laplacian_stencil() {
        let mesh = MeshLevel::new(0, 8, 2);
        let params = unit_params();
        let sys = assemble(&mesh, &Omega::zero(4), &params);
        // interior nodes away from the boundary carry the 5-point stencil
        let n = sys.a.n();
        assert_eq!(n, 49);
        for i in 0..n {
            let diag: f64 = sys.a.row(i).find(|&(j, _)| j == i).unwrap().1;
            assert_relative_eq!(diag, 4.0, epsilon = 1e-12);
            // off-diagonals are -1 toward grid neighbours; diagonal
            // couplings cancel for this split
            for (j, v) in sys.a.row(i) {
                if j != i {
                    assert_relative_eq!(v, -1.0, epsilon = 1e-12);
                }
            }
        }
        // load = h^2 on every interior node
        for v in &sys.b {
            assert_relative_eq!(*v, 1.0 / 64.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn qoi_is_linear_and_zero_at_zero() {
        let mesh = MeshLevel::new(0, 4, 2);
        let sys = assemble(&mesh, &Omega::zero(4), &unit_params());
        let n = sys.a.n();
        assert_eq!(eval_qoi(&sys, &vec![0.0; n]), 0.0);
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let y: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        assert_relative_eq!(
            eval_qoi(&sys, &xy),
            eval_qoi(&sys, &x) + eval_qoi(&sys, &y),
            epsilon = 1e-12
        );
    }

    #[test]
    fn qoi_matches_fourier_series_oracle() {
        // -laplace(u) = 1 on the unit square, u = 0 on the boundary:
        // integral of u = sum over odd j,k of 64 / (pi^6 j^2 k^2 (j^2+k^2)).
        let mut series = 0.0;
        let pi6 = std::f64::consts::PI.powi(6);
        for j in (1..1000usize).step_by(2) {
            for k in (1..1000usize).step_by(2) {
                let (jf, kf) = (j as f64, k as f64);
                series += 64.0 / (pi6 * jf * jf * kf * kf * (jf * jf + kf * kf));
            }
        }
        // fine-mesh double-precision direct solve
        let mesh = MeshLevel::new(4, 8, 2); // h = 1/128
        let params = unit_params();
        let sys = assemble(&mesh, &Omega::zero(4), &params);
        let mut rc = CostReceipt::default();
        let q = solve_qoi(&sys, &SolverSpec::DirectDouble, 4, &mut rc).unwrap();
        assert!((q - series).abs() < 1e-4, "qoi {q} vs series {series}");
        // three significant digits: 0.0351
        assert!((q - 0.0351).abs() < 5e-5);
    }

    #[test]
    fn coupled_sample_deterministic_field_decay() {
        // for the deterministic field the level differences shrink by
        // about m^2 = 4 per level (alpha = 2)
        let problem = Problem::new(unit_params(), 8, 2);
        let w = Omega::zero(4);
        let solver = SolverSpec::minres(1e-10);
        let y1 = coupled_sample(&problem, 1, &w, &solver).unwrap();
        let y2 = coupled_sample(&problem, 2, &w, &solver).unwrap();
        let y3 = coupled_sample(&problem, 3, &w, &solver).unwrap();
        let r12 = (y1.y / y2.y).abs();
        let r23 = (y2.y / y3.y).abs();
        assert!((3.0..5.5).contains(&r12), "ratio {r12}");
        assert!((3.0..5.5).contains(&r23), "ratio {r23}");
        // level 0 with zero draw is deterministic
        let a = coupled_sample(&problem, 0, &w, &solver).unwrap();
        let b = coupled_sample(&problem, 0, &w, &solver).unwrap();
        assert_eq!(a.y, b.y);
        assert_eq!(a.y, a.q_fine);
    }

    #[test]
    fn solver_tolerance_perturbs_sample_within_residual_bound() {
        let problem = Problem::new(unit_params(), 8, 2);
        let seed = crate::engine::SeedSpec { master: 7, replicate: 0 };
        let omega = problem.draw_omega(seed, 1, 3);
        let loose = coupled_sample(&problem, 1, &omega, &SolverSpec::minres(1e-6))
            .unwrap();
        let tight = coupled_sample(&problem, 1, &omega, &SolverSpec::minres(1e-10))
            .unwrap();
        // |delta Q| <= ||w|| ||A^-1|| (tol1 + tol2) ||b|| summed over the
        // two meshes; ||A^-1|| from the dense oracle
        let mut bound = 0.0;
        for lvl in [1usize, 0] {
            let sys = assemble(problem.mesh(lvl), &omega, &problem.params);
            let n = sys.a.n();
            let dense = nalgebra::DMatrix::from_fn(n, n, |i, j| sys.a.to_dense()[i][j]);
            let inv_norm = 1.0
                / dense
                    .symmetric_eigen()
                    .eigenvalues
                    .iter()
                    .cloned()
                    .fold(f64::INFINITY, f64::min);
            let wn = crate::sparse::norm2(&sys.qoi_weights);
            let bn = crate::sparse::norm2(&sys.b);
            bound += wn * inv_norm * (1e-6 + 1e-10) * bn;
        }
        assert!(
            (loose.y - tight.y).abs() <= bound,
            "difference {} vs bound {bound}",
            (loose.y - tight.y).abs()
        );
    }

    #[test]
    fn failed_solve_aborts_sample() {
        let problem = Problem::new(unit_params(), 8, 2);
        let omega = Omega::zero(4);
        // absurd iteration cap forces a MINRES failure
        let sys = assemble(problem.mesh(1), &omega, &problem.params);
        let mut rc = CostReceipt::default();
        let r = minres::minres(&sys.a, &sys.b, 1e-12, 2, &mut rc);
        assert!(r.is_err());
        // and the coupled-sample path surfaces solver errors
        let ir_bad = SolverSpec::CholeskyIr {
            quad: PrecisionQuad::parse("hhss").unwrap(),
            eps: 1e-12,
        };
        assert!(matches!(
            coupled_sample(&problem, 0, &omega, &ir_bad),
            Err(SampleError::Ir { level: 0, .. })
        ));
    }
}
