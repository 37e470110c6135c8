//! Dense semidefinite programming in LMI form.
//!
//! Problems are posed as
//!
//! ```text
//! minimize    cᵀy
//! subject to  F₀⁽ᵇ⁾ + Σⱼ yⱼ Fⱼ⁽ᵇ⁾ ⪰ 0   for every block b
//! ```
//!
//! and solved with an infeasible-start primal-dual path-following method
//! (Nesterov–Todd search direction, Mehrotra predictor-corrector, separate primal and
//! dual step lengths). The associated primal is `min ⟨F₀, X⟩` subject to
//! `⟨Fⱼ, X⟩ = cⱼ`, `X ⪰ 0`, so the duality gap is `⟨F(y), X⟩`.
//!
//! Infeasibility is decided by a phase-I problem that maximizes the smallest
//! block eigenvalue.
//!
//! A problem may carry a [`Preconditioner`], an exact change of coordinates
//! that the iteration runs in. Results are always reported, and checked, in
//! the original coordinates.

use std::borrow::Cow;
use std::ops::Range;

use crate::linalg::{self, Matrix};

/// Minimum block eigenvalue accepted by [`check_point`].
pub const FEASIBILITY_SLACK: f64 = 1e-8;

const STEP_FRACTION: f64 = 0.98;

/// `F₀ + Σⱼ yⱼ Fⱼ`, required to be positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineBlock {
    pub name: String,
    pub constant: Matrix,
    /// Only variables with a nonzero coefficient matrix are listed.
    pub terms: Vec<(usize, Matrix)>,
}

impl AffineBlock {
    pub fn new(name: impl Into<String>, constant: Matrix) -> Self {
        assert!(constant.is_square(), "block constant must be square");
        Self {
            name: name.into(),
            constant,
            terms: Vec::new(),
        }
    }

    pub fn size(&self) -> usize {
        self.constant.rows()
    }

    /// Add `y[var] * coeff`; merges with an existing term for `var`.
    pub fn add_term(&mut self, var: usize, coeff: Matrix) {
        assert_eq!(coeff.shape(), self.constant.shape(), "term shape mismatch");
        if coeff.is_zero() {
            return;
        }
        match self.terms.iter_mut().find(|(v, _)| *v == var) {
            Some((_, m)) => {
                m.axpy(1.0, &coeff);
                if m.is_zero() {
                    self.terms.retain(|(v, _)| *v != var);
                }
            }
            None => self.terms.push((var, coeff)),
        }
    }

    pub fn evaluate(&self, y: &[f64]) -> Matrix {
        let mut out = self.constant.clone();
        for (j, f) in &self.terms {
            if y[*j] != 0.0 {
                out.axpy(y[*j], f);
            }
        }
        out
    }
}

/// A named contiguous range of scalar variables.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableSlice {
    pub name: String,
    pub range: Range<usize>,
    /// Dimension of the symmetric matrix parameterized by this slice, or
    /// `None` for a plain scalar.
    pub sym_dim: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VariableMap {
    pub slices: Vec<VariableSlice>,
}

impl VariableMap {
    pub fn get(&self, name: &str) -> Option<&VariableSlice> {
        self.slices.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub blocks: Vec<AffineBlock>,
    pub variable_map: VariableMap,
    pub preconditioner: Option<Preconditioner>,
}

/// Block `b` is replaced by `Tᵦᵀ F⁽ᵇ⁾(y) Tᵦ` and the variables by `y = V ỹ`.
/// With every `Tᵦ` and `V` invertible, feasibility and the optimal value are
/// unchanged; only the conditioning of the iteration differs.
#[derive(Debug, Clone, PartialEq)]
pub struct Preconditioner {
    /// One entry per block; `None` leaves the block untouched.
    pub congruences: Vec<Option<Matrix>>,
    /// `V`, `num_vars × num_vars`.
    pub variables: Matrix,
}

impl SdpProblem {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            objective: vec![0.0; num_vars],
            blocks: Vec::new(),
            variable_map: VariableMap::default(),
            preconditioner: None,
        }
    }

    /// Append a scalar variable and return its index.
    pub fn add_scalar(&mut self, name: &str) -> usize {
        let idx = self.num_vars;
        self.num_vars += 1;
        self.objective.push(0.0);
        self.variable_map.slices.push(VariableSlice {
            name: name.to_string(),
            range: idx..idx + 1,
            sym_dim: None,
        });
        idx
    }

    /// Append the `n(n+1)/2` free entries of a symmetric `n×n` matrix.
    pub fn add_symmetric(&mut self, name: &str, n: usize) -> Range<usize> {
        let start = self.num_vars;
        let count = n * (n + 1) / 2;
        self.num_vars += count;
        self.objective.resize(self.num_vars, 0.0);
        self.variable_map.slices.push(VariableSlice {
            name: name.to_string(),
            range: start..start + count,
            sym_dim: Some(n),
        });
        start..start + count
    }

    /// Value of a named symmetric matrix variable at `y`.
    pub fn symmetric_value(&self, name: &str, y: &[f64]) -> Option<Matrix> {
        let slice = self.variable_map.get(name)?;
        let n = slice.sym_dim?;
        let mut m = Matrix::zeros(n, n);
        for ((i, j), k) in sym_index_pairs(n).zip(slice.range.clone()) {
            m[(i, j)] = y[k];
            m[(j, i)] = y[k];
        }
        Some(m)
    }

    pub fn scalar_value(&self, name: &str, y: &[f64]) -> Option<f64> {
        let slice = self.variable_map.get(name)?;
        Some(y[slice.range.start])
    }

    pub fn objective_value(&self, y: &[f64]) -> f64 {
        self.objective.iter().zip(y).map(|(c, v)| c * v).sum()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.objective.len() != self.num_vars {
            return Err("objective length differs from num_vars".into());
        }
        for b in &self.blocks {
            if b.constant.max_asymmetry() > 1e-12 * (1.0 + b.constant.max_abs()) {
                return Err(format!("block {} constant is not symmetric", b.name));
            }
            for (j, f) in &b.terms {
                if *j >= self.num_vars {
                    return Err(format!("block {} references variable {j}", b.name));
                }
                if f.max_asymmetry() > 1e-12 * (1.0 + f.max_abs()) {
                    return Err(format!("block {} term {j} is not symmetric", b.name));
                }
            }
        }
        if let Some(pc) = &self.preconditioner {
            if pc.congruences.len() != self.blocks.len() {
                return Err("preconditioner has the wrong number of congruences".into());
            }
            for (b, t) in self.blocks.iter().zip(&pc.congruences) {
                if t.as_ref().is_some_and(|t| t.shape() != (b.size(), b.size())) {
                    return Err(format!("congruence for block {} has the wrong shape", b.name));
                }
            }
            if pc.variables.shape() != (self.num_vars, self.num_vars) {
                return Err("preconditioner variable map has the wrong shape".into());
            }
        }
        Ok(())
    }

    /// The problem in preconditioned coordinates `ỹ`.
    fn working(&self) -> Cow<'_, SdpProblem> {
        let Some(pc) = &self.preconditioner else {
            return Cow::Borrowed(self);
        };
        let v = &pc.variables;
        let nv = self.num_vars;
        let objective = (0..nv)
            .map(|k| (0..nv).map(|j| v[(j, k)] * self.objective[j]).sum())
            .collect();
        let blocks = self
            .blocks
            .iter()
            .zip(&pc.congruences)
            .map(|(b, t)| {
                let cong = |m: &Matrix| match t {
                    Some(t) => (&(&t.transpose() * m) * t).symmetrize(),
                    None => m.clone(),
                };
                let terms: Vec<(usize, Matrix)> = b.terms.iter().map(|(j, f)| (*j, cong(f))).collect();
                let mut out = AffineBlock::new(b.name.clone(), cong(&b.constant));
                for k in 0..nv {
                    let mut acc = Matrix::zeros(b.size(), b.size());
                    for (j, g) in &terms {
                        let w = v[(*j, k)];
                        if w != 0.0 {
                            acc.axpy(w, g);
                        }
                    }
                    out.add_term(k, acc);
                }
                out
            })
            .collect();
        Cow::Owned(SdpProblem {
            num_vars: nv,
            objective,
            blocks,
            variable_map: self.variable_map.clone(),
            preconditioner: None,
        })
    }

    /// Map a point of [`Self::working`] back to the original variables.
    fn restore(&self, y: Vec<f64>) -> Vec<f64> {
        match &self.preconditioner {
            None => y,
            Some(pc) => (0..self.num_vars)
                .map(|j| (0..self.num_vars).map(|k| pc.variables[(j, k)] * y[k]).sum())
                .collect(),
        }
    }
}

/// Upper-triangle index pairs `(i, j)`, `i ≤ j`, in the order used to
/// parameterize symmetric matrix variables.
pub fn sym_index_pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i..n).map(move |j| (i, j)))
}

/// Basis matrix `E_ij` with `X = Σ_{i≤j} x_ij E_ij`.
pub fn sym_basis(n: usize, i: usize, j: usize) -> Matrix {
    let mut e = Matrix::zeros(n, n);
    e[(i, j)] = 1.0;
    e[(j, i)] = 1.0;
    e
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIterations,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdpSettings {
    /// Relative duality-gap and residual target.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Phase-I margin at or below which a problem is declared infeasible.
    pub infeasibility_threshold: f64,
}

impl Default for SdpSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-7,
            max_iterations: 200,
            infeasibility_threshold: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub y: Vec<f64>,
    pub objective_value: f64,
    pub status: SdpStatus,
    /// Relative duality gap at the returned iterate.
    pub gap: f64,
    pub iterations: usize,
    /// Explanation attached to non-optimal outcomes.
    pub diagnostic: Option<String>,
}

/// Per-block minimum eigenvalues at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointReport {
    pub block_min_eigenvalues: Vec<(String, f64)>,
    pub feasible: bool,
}

impl PointReport {
    pub fn min_eigenvalue(&self) -> f64 {
        self.block_min_eigenvalues
            .iter()
            .map(|(_, v)| *v)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Evaluate every block at `y`; feasible iff all minimum eigenvalues are at
/// least `-1e-8`.
pub fn check_point(problem: &SdpProblem, y: &[f64]) -> PointReport {
    assert_eq!(y.len(), problem.num_vars, "variable count mismatch");
    let block_min_eigenvalues: Vec<(String, f64)> = problem
        .blocks
        .iter()
        .map(|b| {
            let m = b.evaluate(y).symmetrize();
            let ev = linalg::min_eigenvalue(&m).unwrap_or(f64::NEG_INFINITY);
            (b.name.clone(), ev)
        })
        .collect();
    let feasible = block_min_eigenvalues
        .iter()
        .all(|(_, v)| *v >= -FEASIBILITY_SLACK);
    PointReport {
        block_min_eigenvalues,
        feasible,
    }
}

/// Solve to `settings.tolerance`. Non-optimal outcomes are classified with
/// a phase-I solve.
pub fn solve(problem: &SdpProblem, settings: &SdpSettings) -> SdpSolution {
    if let Err(e) = problem.validate() {
        return failure(problem, SdpStatus::NumericalFailure, format!("malformed problem: {e}"));
    }
    let mut sol = InteriorPoint::new(&problem.working(), settings).run();
    sol.y = problem.restore(sol.y);
    if sol.objective_value.is_finite() {
        sol.objective_value = problem.objective_value(&sol.y);
    }
    if sol.status == SdpStatus::Optimal {
        let report = check_point(problem, &sol.y);
        if report.feasible {
            return sol;
        }
        sol.status = SdpStatus::NumericalFailure;
        sol.diagnostic = Some(format!(
            "converged iterate violates constraints (min eigenvalue {:e})",
            report.min_eigenvalue()
        ));
    }
    if sol.status == SdpStatus::Unbounded {
        return sol;
    }
    let phase1 = phase_one(problem, settings);
    if phase1.margin <= settings.infeasibility_threshold {
        sol.status = SdpStatus::Infeasible;
        sol.diagnostic = Some(format!(
            "phase-I margin {:e} <= {:e} ({})",
            phase1.margin,
            settings.infeasibility_threshold,
            sol.diagnostic.unwrap_or_default()
        ));
    }
    sol
}

/// True iff a strictly feasible point exists (phase-I margin above the
/// infeasibility threshold, verified at the returned point).
pub fn feasible(problem: &SdpProblem, settings: &SdpSettings) -> bool {
    if problem.validate().is_err() {
        return false;
    }
    phase_one(problem, settings).margin > settings.infeasibility_threshold
}

pub struct PhaseOne {
    /// Smallest block eigenvalue at `y`, evaluated directly.
    pub margin: f64,
    pub y: Vec<f64>,
    pub status: SdpStatus,
}

/// Maximize `t` subject to `F⁽ᵇ⁾(y) ⪰ t I` for all blocks and `t ≤ 1`.
pub fn phase_one(problem: &SdpProblem, settings: &SdpSettings) -> PhaseOne {
    let work = problem.working();
    let t = problem.num_vars;
    let mut aux = SdpProblem::new(problem.num_vars + 1);
    aux.objective[t] = -1.0;
    for b in &work.blocks {
        let mut blk = b.clone();
        blk.add_term(t, Matrix::identity(b.size()).scale(-1.0));
        aux.blocks.push(blk);
    }
    let mut cap = AffineBlock::new("phase1_cap", Matrix::identity(1));
    cap.add_term(t, Matrix::identity(1).scale(-1.0));
    aux.blocks.push(cap);

    let sol = InteriorPoint::new(&aux, settings).run();
    let y = problem.restore(sol.y[..problem.num_vars].to_vec());
    let margin = if problem.blocks.is_empty() {
        f64::INFINITY
    } else {
        check_point(problem, &y).min_eigenvalue()
    };
    PhaseOne {
        margin,
        y,
        status: sol.status,
    }
}

fn failure(problem: &SdpProblem, status: SdpStatus, msg: String) -> SdpSolution {
    SdpSolution {
        y: vec![0.0; problem.num_vars],
        objective_value: f64::NAN,
        status,
        gap: f64::INFINITY,
        iterations: 0,
        diagnostic: Some(msg),
    }
}

struct InteriorPoint<'a> {
    p: &'a SdpProblem,
    settings: &'a SdpSettings,
    /// Total dimension `Σ s_b`, the normalizer of μ.
    nu: f64,
    norm_c: f64,
    norm_f0: f64,
}

struct Direction {
    dy: Vec<f64>,
    dx: Vec<Matrix>,
    dz: Vec<Matrix>,
    /// `ΔX`, `ΔZ` in the scaled space of each block.
    dxs: Vec<Matrix>,
    dzs: Vec<Matrix>,
}

/// Primal residual accepted when the iteration stalls close to the optimum.
/// Degenerate LMIs push the NT scaling towards singularity, which caps the
/// attainable primal accuracy in double precision.
const REDUCED_PINF: f64 = 1e-5;
const REDUCED_GAP: f64 = 10.0;
const STALL_STEP: f64 = 1e-3;
const STALL_LIMIT: usize = 3;

/// Last iterate with a small gap and dual residual but only a loosely
/// satisfied primal equation.
struct Fallback {
    y: Vec<f64>,
    objective_value: f64,
    gap: f64,
    iterations: usize,
}

impl Fallback {
    fn into_solution(self) -> SdpSolution {
        SdpSolution {
            y: self.y,
            objective_value: self.objective_value,
            status: SdpStatus::Optimal,
            gap: self.gap,
            iterations: self.iterations,
            diagnostic: Some("reduced primal accuracy".into()),
        }
    }
}

impl<'a> InteriorPoint<'a> {
    fn new(p: &'a SdpProblem, settings: &'a SdpSettings) -> Self {
        let nu = p.blocks.iter().map(|b| b.size()).sum::<usize>() as f64;
        let norm_c = p.objective.iter().map(|c| c * c).sum::<f64>().sqrt();
        let norm_f0 = p
            .blocks
            .iter()
            .map(|b| b.constant.frobenius_norm().powi(2))
            .sum::<f64>()
            .sqrt();
        Self {
            p,
            settings,
            nu,
            norm_c,
            norm_f0,
        }
    }

    fn term_norms(&self) -> Vec<f64> {
        let mut sq = vec![0.0; self.p.num_vars];
        for b in &self.p.blocks {
            for (j, f) in &b.terms {
                sq[*j] += f.frobenius_norm().powi(2);
            }
        }
        sq.into_iter().map(f64::sqrt).collect()
    }

    fn run(&self) -> SdpSolution {
        let p = self.p;
        let nvar = p.num_vars;
        if p.blocks.is_empty() {
            return if self.norm_c == 0.0 {
                SdpSolution {
                    y: vec![0.0; nvar],
                    objective_value: 0.0,
                    status: SdpStatus::Optimal,
                    gap: 0.0,
                    iterations: 0,
                    diagnostic: None,
                }
            } else {
                failure(p, SdpStatus::Unbounded, "no constraints and nonzero objective".into())
            };
        }

        let fnorms = self.term_norms();
        if let Some(j) = (0..nvar).find(|&j| fnorms[j] == 0.0 && p.objective[j] != 0.0) {
            return failure(
                p,
                SdpStatus::Unbounded,
                format!("variable {j} is unconstrained but has nonzero cost"),
            );
        }
        let max_f = fnorms.iter().copied().fold(0.0, f64::max);
        let xi_x = (0..nvar)
            .map(|j| (1.0 + p.objective[j].abs()) / (1.0 + fnorms[j]))
            .fold(10.0f64, f64::max);
        let xi_z = 10.0f64.max(self.norm_f0).max(max_f);

        let mut y = vec![0.0; nvar];
        let mut x: Vec<Matrix> = p.blocks.iter().map(|b| Matrix::identity(b.size()).scale(xi_x)).collect();
        let mut z: Vec<Matrix> = p.blocks.iter().map(|b| Matrix::identity(b.size()).scale(xi_z)).collect();
        let x0_trace: f64 = x.iter().map(Matrix::trace).sum();

        let mut last_gap = f64::INFINITY;
        let mut fallback: Option<Fallback> = None;
        let mut stalled = 0usize;
        for iter in 0..self.settings.max_iterations {
            let fy: Vec<Matrix> = p.blocks.iter().map(|b| b.evaluate(&y)).collect();
            let rd: Vec<Matrix> = fy.iter().zip(&z).map(|(f, z)| f - z).collect();
            let ax = self.apply_adjoint(&x);
            let rp: Vec<f64> = (0..nvar).map(|j| p.objective[j] - ax[j]).collect();

            let gap: f64 = x.iter().zip(&z).map(|(x, z)| x.dot(z)).sum();
            let mu = gap / self.nu;
            let obj = p.objective_value(&y);
            let pobj: f64 = -p.blocks.iter().zip(&x).map(|(b, x)| b.constant.dot(x)).sum::<f64>();
            let rel_gap = gap / (1.0 + obj.abs() + pobj.abs());
            let pinf = norm(&rp) / (1.0 + self.norm_c);
            let dinf = rd.iter().map(|r| r.frobenius_norm().powi(2)).sum::<f64>().sqrt() / (1.0 + self.norm_f0);
            last_gap = rel_gap;
            log::trace!("ipm {iter}: obj {obj:.10e} gap {rel_gap:.2e} pinf {pinf:.2e} dinf {dinf:.2e}");

            let tol = self.settings.tolerance;
            let dinf_tol = tol.min(1e-9);
            if rel_gap <= REDUCED_GAP * tol && pinf <= REDUCED_PINF && dinf <= dinf_tol {
                fallback = Some(Fallback {
                    y: y.clone(),
                    objective_value: obj,
                    gap: rel_gap,
                    iterations: iter,
                });
            }
            if rel_gap <= tol && pinf <= tol && dinf <= dinf_tol {
                return SdpSolution {
                    y,
                    objective_value: obj,
                    status: SdpStatus::Optimal,
                    gap: rel_gap,
                    iterations: iter,
                    diagnostic: None,
                };
            }

            // Farkas-type evidence: X grows along a direction with
            // ⟨Fⱼ, X⟩ → 0 and ⟨F₀, X⟩ < 0, so no y makes every block PSD.
            let x_trace: f64 = x.iter().map(Matrix::trace).sum();
            let f0x = -pobj;
            if x_trace > 1e6 * x0_trace && f0x < 0.0 && norm(&ax) <= 1e-6 * (-f0x) {
                return SdpSolution {
                    y,
                    objective_value: obj,
                    status: SdpStatus::Infeasible,
                    gap: rel_gap,
                    iterations: iter,
                    diagnostic: Some("primal iterate diverges along an infeasibility ray".into()),
                };
            }
            if obj < -1e12 * (1.0 + self.norm_f0) && dinf <= tol {
                return SdpSolution {
                    y,
                    objective_value: obj,
                    status: SdpStatus::Unbounded,
                    gap: rel_gap,
                    iterations: iter,
                    diagnostic: Some("objective decreases without bound".into()),
                };
            }

            let scaling: Vec<NtScaling> = match x.iter().zip(&z).map(|(x, z)| NtScaling::new(x, z)).collect() {
                Some(s) => s,
                None => return self.breakdown(fallback, y, iter, rel_gap, "iterate lost definiteness"),
            };
            let Some(sys) = self.scaled_system(&scaling) else {
                return self.breakdown(fallback, y, iter, rel_gap, "constraint matrix is rank deficient");
            };

            // predictor
            let t_aff: Vec<Matrix> = scaling.iter().map(NtScaling::predictor_target).collect();
            let aff = self.direction(&sys, &scaling, &rd, &rp, &t_aff);
            let ap = max_step(&scaling, &aff.dxs).min(1.0);
            let ad = max_step(&scaling, &aff.dzs).min(1.0);
            let mut mu_aff = 0.0;
            for (b, sc) in scaling.iter().enumerate() {
                let v = Matrix::from_diag(&sc.v);
                let mut xb = v.clone();
                xb.axpy(ap, &aff.dxs[b]);
                let mut zb = v;
                zb.axpy(ad, &aff.dzs[b]);
                mu_aff += xb.dot(&zb);
            }
            mu_aff /= self.nu;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

            // corrector
            let target: Vec<Matrix> = (0..x.len())
                .map(|b| scaling[b].corrector_target(sigma * mu, &aff.dxs[b], &aff.dzs[b]))
                .collect();
            let dir = self.direction(&sys, &scaling, &rd, &rp, &target);
            if dir.dy.iter().any(|v| !v.is_finite()) {
                return self.breakdown(fallback, y, iter, rel_gap, "non-finite search direction");
            }
            let ap = (STEP_FRACTION * max_step(&scaling, &dir.dxs)).min(1.0);
            let ad = (STEP_FRACTION * max_step(&scaling, &dir.dzs)).min(1.0);
            log::trace!("   ap {ap:.3e} ad {ad:.3e} sigma {sigma:.2e} mu {mu:.2e}");
            if ap.min(ad) < STALL_STEP {
                stalled += 1;
                if stalled >= STALL_LIMIT {
                    return self.breakdown(fallback, y, iter, rel_gap, "no progress");
                }
            } else {
                stalled = 0;
            }
            for b in 0..x.len() {
                x[b].axpy(ap, &dir.dx[b]);
                x[b] = x[b].symmetrize();
                z[b].axpy(ad, &dir.dz[b]);
                z[b] = z[b].symmetrize();
            }
            for (yj, dyj) in y.iter_mut().zip(&dir.dy) {
                *yj += ad * dyj;
            }
        }
        if let Some(f) = fallback {
            return f.into_solution();
        }
        let obj = p.objective_value(&y);
        SdpSolution {
            y,
            objective_value: obj,
            status: SdpStatus::MaxIterations,
            gap: last_gap,
            iterations: self.settings.max_iterations,
            diagnostic: Some("iteration cap reached".into()),
        }
    }

    fn breakdown(&self, fallback: Option<Fallback>, y: Vec<f64>, iter: usize, gap: f64, msg: &str) -> SdpSolution {
        if let Some(f) = fallback {
            log::debug!("ipm stopped ({msg}); returning reduced-accuracy iterate");
            return f.into_solution();
        }
        let obj = self.p.objective_value(&y);
        SdpSolution {
            y,
            objective_value: obj,
            status: SdpStatus::NumericalFailure,
            gap,
            iterations: iter,
            diagnostic: Some(msg.to_string()),
        }
    }

    /// `(⟨Fⱼ, M⟩)ⱼ` summed over blocks.
    fn apply_adjoint(&self, m: &[Matrix]) -> Vec<f64> {
        let mut out = vec![0.0; self.p.num_vars];
        for (b, mb) in self.p.blocks.iter().zip(m) {
            for (j, f) in &b.terms {
                out[*j] += f.dot(mb);
            }
        }
        out
    }

    /// Scaled constraint matrix `Ã = [svec(Gᵀ Fⱼ G)]ⱼ` and its QR factors.
    fn scaled_system(&self, scaling: &[NtScaling]) -> Option<ScaledSystem> {
        let nvar = self.p.num_vars;
        let mut offsets = Vec::with_capacity(self.p.blocks.len());
        let mut rows = 0;
        for b in &self.p.blocks {
            offsets.push(rows);
            rows += b.size() * (b.size() + 1) / 2;
        }
        if rows < nvar {
            return None;
        }
        let mut a = Matrix::zeros(rows, nvar);
        for ((b, sc), off) in self.p.blocks.iter().zip(scaling).zip(&offsets) {
            for (j, f) in &b.terms {
                for (k, v) in svec(&sc.to_scaled_dual(f)).into_iter().enumerate() {
                    a[(off + k, *j)] = v;
                }
            }
        }
        let qr = linalg::qr_thin(&a).ok()?;
        let top = (0..nvar).map(|i| qr.r[(i, i)].abs()).fold(0.0, f64::max);
        if !(top > 0.0) || (0..nvar).any(|i| qr.r[(i, i)].abs() <= 1e-15 * top) {
            return None;
        }
        Some(ScaledSystem {
            q: qr.q,
            r: qr.r,
            offsets,
        })
    }

    /// Newton direction for residuals `(rd, rp)` whose scaled primal and dual
    /// steps sum to `target`. Solved as a least-squares problem so that the
    /// primal equations `⟨Fⱼ, ΔX⟩ = rpⱼ` hold to the accuracy of `Q`.
    fn direction(
        &self,
        sys: &ScaledSystem,
        scaling: &[NtScaling],
        rd: &[Matrix],
        rp: &[f64],
        target: &[Matrix],
    ) -> Direction {
        let nvar = self.p.num_vars;
        let mut t = Vec::with_capacity(sys.q.rows());
        for ((sc, r), tb) in scaling.iter().zip(rd).zip(target) {
            t.extend(svec(&(tb - &sc.to_scaled_dual(r))));
        }
        // Rᵀ w = rp, then R dy = Qᵀt − w and ΔX̃ = t − Q(Qᵀt − w).
        let mut w = vec![0.0; nvar];
        for i in 0..nvar {
            let s: f64 = (0..i).map(|k| sys.r[(k, i)] * w[k]).sum();
            w[i] = (rp[i] - s) / sys.r[(i, i)];
        }
        let mut u = vec![0.0; nvar];
        for (j, uj) in u.iter_mut().enumerate() {
            *uj = (0..t.len()).map(|i| sys.q[(i, j)] * t[i]).sum::<f64>() - w[j];
        }
        let mut dy = vec![0.0; nvar];
        for i in (0..nvar).rev() {
            let s: f64 = ((i + 1)..nvar).map(|k| sys.r[(i, k)] * dy[k]).sum();
            dy[i] = (u[i] - s) / sys.r[(i, i)];
        }
        let mut dxs_vec = t;
        for (i, v) in dxs_vec.iter_mut().enumerate() {
            *v -= (0..nvar).map(|j| sys.q[(i, j)] * u[j]).sum::<f64>();
        }

        let mut dx = Vec::with_capacity(scaling.len());
        let mut dxs = Vec::with_capacity(scaling.len());
        let mut dz = Vec::with_capacity(scaling.len());
        let mut dzs = Vec::with_capacity(scaling.len());
        for (b, blk) in self.p.blocks.iter().enumerate() {
            let n = blk.size();
            let off = sys.offsets[b];
            let xs = smat(&dxs_vec[off..off + n * (n + 1) / 2], n);
            let mut d = rd[b].clone();
            for (j, f) in &blk.terms {
                d.axpy(dy[*j], f);
            }
            dx.push(scaling[b].unscale_primal(&xs));
            dzs.push(scaling[b].to_scaled_dual(&d));
            dxs.push(xs);
            dz.push(d);
        }
        Direction {
            dy,
            dx,
            dz,
            dxs,
            dzs,
        }
    }
}

struct ScaledSystem {
    q: Matrix,
    r: Matrix,
    /// First row of each block in the stacked `svec` layout.
    offsets: Vec<usize>,
}

/// Upper triangle, row-wise, off-diagonal entries weighted by √2 so that
/// `svec(A)·svec(B) = ⟨A, B⟩`.
fn svec(m: &Matrix) -> Vec<f64> {
    sym_index_pairs(m.rows())
        .map(|(i, j)| if i == j { m[(i, i)] } else { std::f64::consts::SQRT_2 * m[(i, j)] })
        .collect()
}

fn smat(v: &[f64], n: usize) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for ((i, j), x) in sym_index_pairs(n).zip(v) {
        if i == j {
            m[(i, i)] = *x;
        } else {
            let y = x * std::f64::consts::FRAC_1_SQRT_2;
            m[(i, j)] = y;
            m[(j, i)] = y;
        }
    }
    m
}

/// Nesterov–Todd scaling of one block: `G` with `Gᵀ Z G = G⁻¹ X G⁻ᵀ = V`,
/// `V = diag(v)`.
struct NtScaling {
    g: Matrix,
    v: Vec<f64>,
}

impl NtScaling {
    fn new(x: &Matrix, z: &Matrix) -> Option<Self> {
        let l = linalg::cholesky(x)?;
        let ltzl = (&(&l.transpose() * z) * &l).symmetrize();
        let eig = linalg::sym_eig(&ltzl).ok()?;
        if !(eig.min_eigenvalue() > 0.0) {
            return None;
        }
        // LᵀZL = QΛQᵀ, G = L Q Λ^{-1/4}, V = Λ^{1/2}.
        let mut g = &l * &eig.eigenvectors;
        for j in 0..x.rows() {
            let s = eig.eigenvalues[j].powf(-0.25);
            for i in 0..x.rows() {
                g[(i, j)] *= s;
            }
        }
        let v = eig.eigenvalues.iter().map(|l| l.sqrt()).collect();
        Some(Self { g, v })
    }

    /// `Gᵀ M G`.
    fn to_scaled_dual(&self, m: &Matrix) -> Matrix {
        (&(&self.g.transpose() * m) * &self.g).symmetrize()
    }

    /// `G M Gᵀ`.
    fn unscale_primal(&self, m: &Matrix) -> Matrix {
        (&(&self.g * m) * &self.g.transpose()).symmetrize()
    }

    /// `−V`: the scaled target of the affine-scaling step.
    fn predictor_target(&self) -> Matrix {
        Matrix::from_diag(&self.v).scale(-1.0)
    }

    /// `D` with `V D + D V = 2σμI − 2V² − (ΔX̃ΔZ̃ + ΔZ̃ΔX̃)`.
    fn corrector_target(&self, sigma_mu: f64, dxs: &Matrix, dzs: &Matrix) -> Matrix {
        let n = self.v.len();
        let prod = dxs * dzs;
        let mut d = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut rc = -(prod[(i, j)] + prod[(j, i)]);
                if i == j {
                    rc += 2.0 * sigma_mu - 2.0 * self.v[i] * self.v[i];
                }
                d[(i, j)] = rc / (self.v[i] + self.v[j]);
            }
        }
        d.symmetrize()
    }

    /// Largest `α` with `V + α Δ ⪰ 0` (may be infinite).
    fn max_step(&self, delta: &Matrix) -> f64 {
        let n = self.v.len();
        let mut m = delta.clone();
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] /= (self.v[i] * self.v[j]).sqrt();
            }
        }
        match linalg::min_eigenvalue(&m.symmetrize()) {
            Ok(lmin) if lmin < 0.0 => -1.0 / lmin,
            Ok(_) => f64::INFINITY,
            Err(_) => 0.0,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn max_step(scaling: &[NtScaling], deltas: &[Matrix]) -> f64 {
    scaling
        .iter()
        .zip(deltas)
        .map(|(sc, d)| sc.max_step(d))
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_diag(&[v])
    }

    /// minimize x s.t. [[x,1],[1,x]] ⪰ 0
    fn toy_two_by_two() -> SdpProblem {
        let mut p = SdpProblem::new(0);
        let x = p.add_scalar("x");
        p.objective[x] = 1.0;
        let mut blk = AffineBlock::new("lmi", Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap());
        blk.add_term(x, Matrix::identity(2));
        p.blocks.push(blk);
        p
    }

    /// minimize δ s.t. δ − tr S ≥ 0, S − I ⪰ 0
    fn toy_trace() -> SdpProblem {
        let mut p = SdpProblem::new(0);
        let s = p.add_symmetric("S", 2);
        let d = p.add_scalar("delta");
        p.objective[d] = 1.0;
        let mut sblk = AffineBlock::new("S", Matrix::identity(2).scale(-1.0));
        let mut tblk = AffineBlock::new("trace", scalar(0.0));
        tblk.add_term(d, scalar(1.0));
        for ((i, j), k) in sym_index_pairs(2).zip(s) {
            sblk.add_term(k, sym_basis(2, i, j));
            if i == j {
                tblk.add_term(k, scalar(-1.0));
            }
        }
        p.blocks.push(sblk);
        p.blocks.push(tblk);
        p
    }

    #[test]
    fn solves_two_by_two_toy() {
        let sol = solve(&toy_two_by_two(), &SdpSettings::default());
        assert_eq!(sol.status, SdpStatus::Optimal, "{sol:?}");
        assert!((sol.objective_value - 1.0).abs() <= 1e-6, "{}", sol.objective_value);
    }

    #[test]
    fn solves_trace_toy() {
        let p = toy_trace();
        let sol = solve(&p, &SdpSettings::default());
        assert_eq!(sol.status, SdpStatus::Optimal, "{sol:?}");
        assert!((sol.objective_value - 2.0).abs() <= 1e-6);
        let s = p.symmetric_value("S", &sol.y).unwrap();
        assert!((&s - &Matrix::identity(2)).max_abs() < 1e-5);
    }

    #[test]
    fn solve_is_deterministic() {
        let p = toy_trace();
        let a = solve(&p, &SdpSettings::default());
        let b = solve(&p, &SdpSettings::default());
        assert_eq!(a.y.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.y.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(a.objective_value.to_bits(), b.objective_value.to_bits());
    }

    fn scalar_constraints(bounds: &[(f64, f64)]) -> SdpProblem {
        // each pair (a, b) encodes a + b x ≥ 0
        let mut p = SdpProblem::new(0);
        let x = p.add_scalar("x");
        for (k, (a, b)) in bounds.iter().enumerate() {
            let mut blk = AffineBlock::new(format!("c{k}"), scalar(*a));
            blk.add_term(x, scalar(*b));
            p.blocks.push(blk);
        }
        p
    }

    #[test]
    fn feasibility_examples() {
        let s = SdpSettings::default();
        assert!(feasible(&scalar_constraints(&[(-1.0, 1.0)]), &s));
        assert!(!feasible(&scalar_constraints(&[(-1.0, 1.0), (0.0, -1.0)]), &s));
    }

    #[test]
    fn infeasible_problem_is_reported() {
        let mut p = scalar_constraints(&[(-1.0, 1.0), (0.0, -1.0)]);
        p.objective[0] = 1.0;
        let sol = solve(&p, &SdpSettings::default());
        assert_eq!(sol.status, SdpStatus::Infeasible, "{sol:?}");
        assert!(sol.diagnostic.is_some());
    }

    #[test]
    fn unbounded_problem_is_reported() {
        // minimize x s.t. 1 - x ≥ 0
        let mut p = scalar_constraints(&[(1.0, -1.0)]);
        p.objective[0] = 1.0;
        let sol = solve(&p, &SdpSettings::default());
        assert_ne!(sol.status, SdpStatus::Optimal);
    }

    #[test]
    fn check_point_reports_per_block() {
        let p = toy_trace();
        let r = check_point(&p, &vec![0.0; p.num_vars]);
        assert!(!r.feasible);
        assert_eq!(r.block_min_eigenvalues[0].0, "S");
        assert!((r.block_min_eigenvalues[0].1 + 1.0).abs() < 1e-12);

        // S = 2I, δ = 5 is strictly interior
        let y = vec![2.0, 0.0, 2.0, 5.0];
        let r = check_point(&p, &y);
        assert!(r.feasible);
        assert!(r.min_eigenvalue() > 0.0);

        let sol = solve(&p, &SdpSettings::default());
        assert!(check_point(&p, &sol.y).feasible);
    }

    #[test]
    fn iteration_cap_is_reported() {
        let settings = SdpSettings {
            max_iterations: 2,
            ..SdpSettings::default()
        };
        let sol = solve(&toy_two_by_two(), &settings);
        assert_eq!(sol.status, SdpStatus::MaxIterations);
    }

    #[test]
    fn symmetric_parameterization_round_trips() {
        let mut p = SdpProblem::new(0);
        let r = p.add_symmetric("X", 3);
        assert_eq!(r, 0..6);
        let y = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let x = p.symmetric_value("X", &y).unwrap();
        assert_eq!(x.to_rows(), vec![vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 5.0], vec![3.0, 5.0, 6.0]]);
    }
}
