//! Mixed H2/H∞ LMI conditions for a fixed gain, as one SDP.
//!
//! For every vertex `i` of the closed loop (`Acl`, `B1`, `Cinf`, `Dinf`,
//! `C2cl`) the following are imposed with shared `X₂`, `X∞`, `S`, `δ`:
//!
//! ```text
//! (a)  [Aclᵀ X₂ + X₂ Acl   X₂ B1]
//!      [B1ᵀ X₂             −I   ]  ≺ 0
//!
//! (b)  [X₂     C2clᵀ]
//!      [C2cl   S    ]  ≻ 0
//!
//! (c)  [Aclᵀ X∞ + X∞ Acl   X∞ B1   Cinfᵀ]
//!      [B1ᵀ X∞             −γ I    Dinfᵀ]
//!      [Cinf               Dinf    −γ I ]  ≺ 0      (only with γ)
//!
//!      X₂ ≻ 0,  X∞ ≻ 0,  Tr S < δ,  δ ≤ δ_cap (optional)
//! ```
//!
//! and `δ` is minimized. Strict inequalities carry a margin `ε`.

use std::ops::Range;

use thiserror::Error;

use crate::linalg::{self, Matrix};
use crate::oracle;
use crate::plant::{ClosedLoopVertex, GainMatrix, PlantError, PolytopicPlant};
use crate::sdp::{sym_basis, sym_index_pairs, AffineBlock, Preconditioner, SdpProblem};

pub const X2: &str = "X2";
pub const XINF: &str = "Xinf";
pub const S: &str = "S";
pub const DELTA: &str = "delta";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LmiError {
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("invalid LMI settings: {0}")]
    Spec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmiSpec {
    /// H∞ level; `None` drops the H∞ block and `X∞`.
    #[serde(default)]
    pub gamma: Option<f64>,
    /// Upper bound on `δ`.
    #[serde(default)]
    pub delta_cap: Option<f64>,
    #[serde(default = "default_eps")]
    pub strictness_eps: f64,
}

fn default_eps() -> f64 {
    1e-7
}

impl Default for LmiSpec {
    fn default() -> Self {
        Self {
            gamma: None,
            delta_cap: None,
            strictness_eps: default_eps(),
        }
    }
}

impl LmiSpec {
    pub fn validate(&self) -> Result<(), LmiError> {
        if !(self.strictness_eps > 0.0) {
            return Err(LmiError::Spec(format!("strictness_eps must be positive, got {}", self.strictness_eps)));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0) || !g.is_finite() {
                return Err(LmiError::Spec(format!("gamma must be positive, got {g}")));
            }
        }
        if let Some(d) = self.delta_cap {
            if !(d > 0.0) || !d.is_finite() {
                return Err(LmiError::Spec(format!("delta_cap must be positive, got {d}")));
            }
        }
        Ok(())
    }
}

/// Build the SDP of the mixed H2/H∞ conditions at gain `k`.
pub fn assemble(plant: &PolytopicPlant, k: &GainMatrix, spec: &LmiSpec) -> Result<SdpProblem, LmiError> {
    spec.validate()?;
    let loops = plant.closed_loops(k)?;
    Ok(assemble_closed_loops(&loops, spec))
}

/// Same as [`assemble`] from precomputed closed-loop vertices.
pub fn assemble_closed_loops(loops: &[ClosedLoopVertex], spec: &LmiSpec) -> SdpProblem {
    let eps = spec.strictness_eps;
    let n = loops[0].acl.rows();
    let p2 = loops[0].c2cl.rows();

    let mut p = SdpProblem::new(0);
    let x2 = p.add_symmetric(X2, n);
    let xinf = spec.gamma.map(|_| p.add_symmetric(XINF, n));
    let s = p.add_symmetric(S, p2);
    let delta = p.add_scalar(DELTA);
    p.objective[delta] = 1.0;

    for (i, cl) in loops.iter().enumerate() {
        p.blocks.push(h2_lyapunov_block(i, cl, x2.clone(), eps));
        p.blocks.push(h2_output_block(i, cl, x2.clone(), s.clone(), eps));
        if let (Some(gamma), Some(xr)) = (spec.gamma, xinf.clone()) {
            p.blocks.push(hinf_block(i, cl, xr, gamma, eps));
        }
    }
    p.blocks.push(positivity_block(X2, n, x2, eps));
    if let Some(xr) = xinf {
        p.blocks.push(positivity_block(XINF, n, xr, eps));
    }

    let mut tr = AffineBlock::new("trace", Matrix::from_diag(&[-eps]));
    tr.add_term(delta, Matrix::identity(1));
    for ((r, c), v) in sym_index_pairs(p2).zip(s) {
        if r == c {
            tr.add_term(v, Matrix::from_diag(&[-1.0]));
        }
    }
    p.blocks.push(tr);

    if let Some(cap) = spec.delta_cap {
        let mut blk = AffineBlock::new("delta_cap", Matrix::from_diag(&[cap]));
        blk.add_term(delta, Matrix::from_diag(&[-1.0]));
        p.blocks.push(blk);
    }
    p.preconditioner = gramian_preconditioner(&p, loops);
    p
}

/// Scaling `T = P^{1/2}`, with `P` the summed controllability Gramians of
/// the vertices, and its inverse. `None` when some vertex is unstable or
/// `P` is degenerate.
fn gramian_scaling(loops: &[ClosedLoopVertex]) -> Option<(Matrix, Matrix)> {
    let n = loops[0].acl.rows();
    let mut p = Matrix::zeros(n, n);
    for cl in loops {
        let bbt = &cl.bcl * &cl.bcl.transpose();
        p = &p + &oracle::lyapunov_solve(&cl.acl.transpose(), &bbt).ok()?;
    }
    let eig = linalg::sym_eig(&p.symmetrize()).ok()?;
    let top = *eig.eigenvalues.last()?;
    if !(top > 0.0) || !top.is_finite() {
        return None;
    }
    let roots: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(1e-12 * top).sqrt()).collect();
    let q = &eig.eigenvectors;
    let t = &(q * &Matrix::from_diag(&roots)) * &q.transpose();
    let inv: Vec<f64> = roots.iter().map(|r| 1.0 / r).collect();
    let t_inv = &(q * &Matrix::from_diag(&inv)) * &q.transpose();
    Some((t.symmetrize(), t_inv.symmetrize()))
}

/// Runs the interior-point iteration on `X̃ = Tᵀ X T` for `X₂` and `X∞`,
/// which keeps the multipliers near identity when the Gramian is badly
/// scaled (e.g. a single disturbance input).
fn gramian_preconditioner(p: &SdpProblem, loops: &[ClosedLoopVertex]) -> Option<Preconditioner> {
    let (t, t_inv) = gramian_scaling(loops)?;
    let n = t.rows();
    let congruences = p
        .blocks
        .iter()
        .map(|b| {
            let lmi = b.name.starts_with("h2_") || b.name.starts_with("hinf[");
            let positivity = b.name == format!("{X2}>0") || b.name == format!("{XINF}>0");
            if lmi {
                let mut m = Matrix::identity(b.size());
                m.set_block(0, 0, &t);
                Some(m)
            } else if positivity {
                Some(t.clone())
            } else {
                None
            }
        })
        .collect();
    let mut variables = Matrix::identity(p.num_vars);
    for name in [X2, XINF] {
        let Some(slice) = p.variable_map.get(name) else {
            continue;
        };
        // Column k holds the entries of T⁻ᵀ E_k T⁻¹.
        for ((r, c), k) in sym_index_pairs(n).zip(slice.range.clone()) {
            let img = &(&t_inv.transpose() * &sym_basis(n, r, c)) * &t_inv;
            for ((i, j), row) in sym_index_pairs(n).zip(slice.range.clone()) {
                variables[(row, k)] = img[(i, j)];
            }
        }
    }
    Some(Preconditioner {
        congruences,
        variables,
    })
}

/// Feasibility problem for the H∞ condition (c) alone at level `gamma`.
pub fn assemble_hinf_feasibility(loops: &[ClosedLoopVertex], gamma: f64, eps: f64) -> SdpProblem {
    let n = loops[0].acl.rows();
    let mut p = SdpProblem::new(0);
    let xr = p.add_symmetric(XINF, n);
    for (i, cl) in loops.iter().enumerate() {
        p.blocks.push(hinf_block(i, cl, xr.clone(), gamma, eps));
    }
    p.blocks.push(positivity_block(XINF, n, xr, eps));
    p
}

fn shifted_identity(size: usize, eps: f64) -> Matrix {
    Matrix::identity(size).scale(-eps)
}

/// `Aᵀ E + E A` for the basis matrix `E = E_rc`.
fn lyapunov_term(acl: &Matrix, e: &Matrix) -> Matrix {
    let ea = e * acl;
    &ea.transpose() + &ea
}

fn h2_lyapunov_block(i: usize, cl: &ClosedLoopVertex, x2: Range<usize>, eps: f64) -> AffineBlock {
    let n = cl.acl.rows();
    let l = cl.bcl.cols();
    let mut c0 = shifted_identity(n + l, eps);
    for k in 0..l {
        c0[(n + k, n + k)] += 1.0;
    }
    let mut blk = AffineBlock::new(format!("h2_lyapunov[{i}]"), c0);
    for ((r, c), v) in sym_index_pairs(n).zip(x2) {
        let e = sym_basis(n, r, c);
        let eb = &e * &cl.bcl;
        let mut f = Matrix::zeros(n + l, n + l);
        f.set_block(0, 0, &lyapunov_term(&cl.acl, &e));
        f.set_block(0, n, &eb);
        f.set_block(n, 0, &eb.transpose());
        blk.add_term(v, f.scale(-1.0));
    }
    blk
}

fn h2_output_block(i: usize, cl: &ClosedLoopVertex, x2: Range<usize>, s: Range<usize>, eps: f64) -> AffineBlock {
    let n = cl.acl.rows();
    let p2 = cl.c2cl.rows();
    let mut c0 = shifted_identity(n + p2, eps);
    c0.set_block(0, n, &cl.c2cl.transpose());
    c0.set_block(n, 0, &cl.c2cl);
    let mut blk = AffineBlock::new(format!("h2_output[{i}]"), c0);
    for ((r, c), v) in sym_index_pairs(n).zip(x2) {
        let mut f = Matrix::zeros(n + p2, n + p2);
        f.set_block(0, 0, &sym_basis(n, r, c));
        blk.add_term(v, f);
    }
    for ((r, c), v) in sym_index_pairs(p2).zip(s) {
        let mut f = Matrix::zeros(n + p2, n + p2);
        f.set_block(n, n, &sym_basis(p2, r, c));
        blk.add_term(v, f);
    }
    blk
}

fn hinf_block(i: usize, cl: &ClosedLoopVertex, xinf: Range<usize>, gamma: f64, eps: f64) -> AffineBlock {
    let n = cl.acl.rows();
    let l = cl.bcl.cols();
    let p1 = cl.cinf.rows();
    let size = n + l + p1;
    // constant part of −[[0, 0, Cᵀ], [0, −γI, Dᵀ], [C, D, −γI]] − εI
    let mut c0 = shifted_identity(size, eps);
    for k in n..size {
        c0[(k, k)] += gamma;
    }
    let ct = cl.cinf.transpose().scale(-1.0);
    let dt = cl.dinf.transpose().scale(-1.0);
    c0.set_block(0, n + l, &ct);
    c0.set_block(n + l, 0, &ct.transpose());
    c0.set_block(n, n + l, &dt);
    c0.set_block(n + l, n, &dt.transpose());
    let mut blk = AffineBlock::new(format!("hinf[{i}]"), c0);
    for ((r, c), v) in sym_index_pairs(n).zip(xinf) {
        let e = sym_basis(n, r, c);
        let eb = &e * &cl.bcl;
        let mut f = Matrix::zeros(size, size);
        f.set_block(0, 0, &lyapunov_term(&cl.acl, &e));
        f.set_block(0, n, &eb);
        f.set_block(n, 0, &eb.transpose());
        blk.add_term(v, f.scale(-1.0));
    }
    blk
}

fn positivity_block(name: &str, n: usize, vars: Range<usize>, eps: f64) -> AffineBlock {
    let mut blk = AffineBlock::new(format!("{name}>0"), shifted_identity(n, eps));
    for ((r, c), v) in sym_index_pairs(n).zip(vars) {
        blk.add_term(v, sym_basis(n, r, c));
    }
    blk
}

/// Decision variables recovered from an SDP point.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiCertificate {
    pub x2: Matrix,
    pub xinf: Option<Matrix>,
    pub s: Matrix,
    pub delta: f64,
}

pub fn extract(problem: &SdpProblem, y: &[f64]) -> Option<LmiCertificate> {
    Some(LmiCertificate {
        x2: problem.symmetric_value(X2, y)?,
        xinf: problem.symmetric_value(XINF, y),
        s: problem.symmetric_value(S, y)?,
        delta: problem.scalar_value(DELTA, y)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks;
    use crate::sdp::{self, check_point, SdpSettings, SdpStatus};

    fn gain(v: f64) -> GainMatrix {
        GainMatrix::new(Matrix::from_diag(&[v]))
    }

    #[test]
    fn example_one_variable_count() {
        let p = assemble(&benchmarks::example1_plant(), &gain(-1.0), &LmiSpec::default()).unwrap();
        assert_eq!(p.num_vars, 3 + 3 + 1);
        assert!(p.variable_map.get(XINF).is_none());
        assert_eq!(p.variable_map.get(X2).unwrap().range, 0..3);
        assert_eq!(p.variable_map.get(S).unwrap().range, 3..6);
        assert_eq!(p.variable_map.get(DELTA).unwrap().range, 6..7);
        let names: Vec<_> = p.blocks.iter().map(|b| b.name.as_str()).collect();
        assert_eq!(names, ["h2_lyapunov[0]", "h2_output[0]", "X2>0", "trace"]);
        assert_eq!(p.blocks[0].size(), 4);
        assert_eq!(p.blocks[1].size(), 4);
    }

    #[test]
    fn vertices_replicate_blocks_with_shared_variables() {
        let spec = LmiSpec {
            gamma: Some(20.0),
            ..LmiSpec::default()
        };
        let k = GainMatrix::from_flat(1, 2, &[2.0, 2.0]).unwrap();
        let p = assemble(&benchmarks::example2_plant(), &k, &spec).unwrap();
        assert_eq!(p.num_vars, 10 + 10 + 10 + 1);
        let names: Vec<_> = p.blocks.iter().map(|b| b.name.as_str()).collect();
        assert_eq!(
            names,
            ["h2_lyapunov[0]", "h2_output[0]", "hinf[0]", "h2_lyapunov[1]", "h2_output[1]", "hinf[1]", "X2>0", "Xinf>0", "trace"]
        );
        assert_eq!(p.blocks[2].size(), 4 + 4 + 4);
        // both Lyapunov blocks are driven by the same X₂ variables
        let vars = |b: &AffineBlock| b.terms.iter().map(|(j, _)| *j).collect::<Vec<_>>();
        assert_eq!(vars(&p.blocks[0]), vars(&p.blocks[3]));
    }

    #[test]
    fn assembled_terms_are_symmetric() {
        let spec = LmiSpec {
            gamma: Some(20.0),
            delta_cap: Some(500.0),
            ..LmiSpec::default()
        };
        let k = GainMatrix::from_flat(1, 2, &[1.3, -0.4]).unwrap();
        let p = assemble(&benchmarks::example2_plant(), &k, &spec).unwrap();
        for b in &p.blocks {
            assert_eq!(b.constant.max_asymmetry(), 0.0, "{}", b.name);
            for (_, f) in &b.terms {
                assert_eq!(f.max_asymmetry(), 0.0, "{}", b.name);
            }
        }
        assert_eq!(p.blocks.last().unwrap().name, "delta_cap");
    }

    #[test]
    fn gamma_absent_means_no_hinf() {
        let k = GainMatrix::from_flat(1, 2, &[2.0, 2.0]).unwrap();
        let p = assemble(&benchmarks::example2_plant(), &k, &LmiSpec::default()).unwrap();
        assert!(p.blocks.iter().all(|b| !b.name.starts_with("hinf")));
        assert!(p.variable_map.get(XINF).is_none());
    }

    #[test]
    fn bad_spec_rejected() {
        let spec = LmiSpec {
            strictness_eps: 0.0,
            ..LmiSpec::default()
        };
        assert!(assemble(&benchmarks::example1_plant(), &gain(-1.0), &spec).is_err());
        let spec = LmiSpec {
            gamma: Some(-1.0),
            ..LmiSpec::default()
        };
        assert!(assemble(&benchmarks::example1_plant(), &gain(-1.0), &spec).is_err());
        assert!(assemble(&benchmarks::example1_plant(), &GainMatrix::zeros(1, 2), &LmiSpec::default()).is_err());
    }

    #[test]
    fn zero_point_is_infeasible() {
        let p = assemble(&benchmarks::example1_plant(), &gain(-1.0), &LmiSpec::default()).unwrap();
        let r = check_point(&p, &vec![0.0; p.num_vars]);
        assert!(!r.feasible);
        let x2 = r.block_min_eigenvalues.iter().find(|(n, _)| n == "X2>0").unwrap();
        assert!(x2.1 < 0.0);
    }

    #[test]
    fn example_one_at_unit_gain() {
        let p = assemble(&benchmarks::example1_plant(), &gain(-1.0), &LmiSpec::default()).unwrap();
        let sol = sdp::solve(&p, &SdpSettings::default());
        assert_eq!(sol.status, SdpStatus::Optimal, "{sol:?}");
        assert!((sol.objective_value - 2.5).abs() < 1e-4, "{}", sol.objective_value);
        assert!(check_point(&p, &sol.y).feasible);
        let cert = extract(&p, &sol.y).unwrap();
        assert!((cert.delta - sol.objective_value).abs() < 1e-12);
        assert!(cert.s.trace() <= cert.delta);
    }

    #[test]
    fn destabilizing_gain_is_infeasible() {
        let p = assemble(&benchmarks::example1_plant(), &gain(1.0), &LmiSpec::default()).unwrap();
        assert!(!sdp::feasible(&p, &SdpSettings::default()));
        let sol = sdp::solve(&p, &SdpSettings::default());
        assert_ne!(sol.status, SdpStatus::Optimal);
    }

    #[test]
    fn zero_disturbance_drives_delta_to_margin() {
        // With B1 = 0 the Lyapunov block no longer couples to the
        // disturbance and X₂ can grow, pushing Tr S towards p2·ε.
        let plant = benchmarks::example1_plant();
        let mut v = plant.vertices()[0].clone();
        v.b1 = Matrix::zeros(2, 2);
        let plant = PolytopicPlant::new(vec![v], plant.measurement().clone()).unwrap();
        let spec = LmiSpec {
            strictness_eps: 1e-3,
            ..LmiSpec::default()
        };
        let p = assemble(&plant, &gain(-1.0), &spec).unwrap();
        let sol = sdp::solve(&p, &SdpSettings::default());
        assert!(sol.objective_value <= 10.0 * spec.strictness_eps, "{sol:?}");
    }
}
