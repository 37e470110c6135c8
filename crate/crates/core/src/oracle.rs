//! Closed-loop H2 and H∞ norms computed directly from state-space data,
//! independently of the LMI/SDP pipeline.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Lu, Matrix};
use crate::plant::{self, ClosedLoopVertex, GainMatrix, PlantError, PolytopeWeights, PolytopicPlant};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("system matrix is not Hurwitz (spectral abscissa {0:e})")]
    NotHurwitz(f64),
    #[error("H2 norm is undefined: the w->z2 channel has direct feedthrough")]
    Feedthrough,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("right-hand side is not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Plant(#[from] PlantError),
}

/// Norms of one (possibly blended) closed-loop system. Undefined norms are
/// `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub h2_squared: Option<f64>,
    pub hinf: Option<f64>,
    pub stable: bool,
}

fn require_hurwitz(a: &Matrix) -> Result<(), OracleError> {
    let abscissa = plant::spectral_abscissa(a)?;
    if abscissa < 0.0 {
        Ok(())
    } else {
        Err(OracleError::NotHurwitz(abscissa))
    }
}

/// `aᵀX + Xa + q` for symmetric X.
fn lyapunov_residual(a: &Matrix, x: &Matrix, q: &Matrix) -> Matrix {
    let ax = &a.transpose() * x;
    &(&ax + &ax.transpose()) + q
}

/// Solve `aᵀX + Xa + q = 0` for Hurwitz `a` through the n²×n² Kronecker
/// system, followed by one step of iterative refinement.
pub fn lyapunov_solve(a: &Matrix, q: &Matrix) -> Result<Matrix, OracleError> {
    if !a.is_square() || q.shape() != a.shape() {
        return Err(OracleError::Shape(format!(
            "a is {:?}, q is {:?}",
            a.shape(),
            q.shape()
        )));
    }
    let asym = q.max_asymmetry();
    if asym > 1e-9 * (1.0 + q.max_abs()) {
        return Err(OracleError::NotSymmetric(asym));
    }
    require_hurwitz(a)?;
    let n = a.rows();
    if n == 0 || q.is_zero() {
        return Ok(Matrix::zeros(n, n));
    }

    // Row (i, j) of the system: Σₖ a_ki x_kj + Σₖ x_ik a_kj = −q_ij.
    let mut kron = Matrix::zeros(n * n, n * n);
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            for k in 0..n {
                kron[(row, k * n + j)] += a[(k, i)];
                kron[(row, i * n + k)] += a[(k, j)];
            }
        }
    }
    let lu = Lu::factor(&kron)?;
    let rhs = Matrix::new(n * n, 1, q.as_slice().iter().map(|v| -v).collect())?;
    let mut x = Matrix::new(n, n, lu.solve(&rhs).as_slice().to_vec())?.symmetrize();

    let r = lyapunov_residual(a, &x, q);
    let neg = Matrix::new(n * n, 1, r.as_slice().iter().map(|v| -v).collect())?;
    let dx = Matrix::new(n, n, lu.solve(&neg).as_slice().to_vec())?;
    x = (&x + &dx).symmetrize();
    if x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite.into());
    }
    Ok(x)
}

/// `Tr(Bclᵀ Q Bcl)` with `Q` the observability Gramian of `(Acl, C2cl)`.
pub fn h2_norm_squared(cl: &ClosedLoopVertex) -> Result<f64, OracleError> {
    if !cl.d2cl.is_zero() {
        return Err(OracleError::Feedthrough);
    }
    if cl.bcl.rows() != cl.acl.rows() || cl.c2cl.cols() != cl.acl.cols() {
        return Err(OracleError::Shape("closed-loop H2 channel".into()));
    }
    let q = &cl.c2cl.transpose() * &cl.c2cl;
    let gram = lyapunov_solve(&cl.acl, &q)?;
    let bbt = &cl.bcl * &cl.bcl.transpose();
    Ok(gram.dot(&bbt).max(0.0))
}

fn sigma_max_real(m: &Matrix) -> Result<f64, OracleError> {
    if m.rows() == 0 || m.cols() == 0 {
        return Ok(0.0);
    }
    let gram = (&m.transpose() * m).symmetrize();
    let eig = linalg::sym_eig(&gram)?;
    Ok(eig.eigenvalues.last().copied().unwrap_or(0.0).max(0.0).sqrt())
}

/// Largest singular value of `Cinf (jωI − Acl)⁻¹ B1 + Dinf`.
pub fn frequency_gain(cl: &ClosedLoopVertex, omega: f64) -> Result<f64, OracleError> {
    let (n, l, p) = (cl.acl.rows(), cl.bcl.cols(), cl.cinf.rows());
    if p == 0 || l == 0 {
        return Ok(0.0);
    }
    // Real embedding of (jω − A)(Xr + jXi) = B.
    let mut m = Matrix::zeros(2 * n, 2 * n);
    let neg_a = cl.acl.scale(-1.0);
    m.set_block(0, 0, &neg_a);
    m.set_block(n, n, &neg_a);
    let w = Matrix::identity(n).scale(omega);
    m.set_block(0, n, &w.scale(-1.0));
    m.set_block(n, 0, &w);
    let mut rhs = Matrix::zeros(2 * n, l);
    rhs.set_block(0, 0, &cl.bcl);
    let sol = Lu::factor(&m)?.solve(&rhs);
    let gr = &(&cl.cinf * &sol.block(0, 0, n, l)) + &cl.dinf;
    let gi = &cl.cinf * &sol.block(n, 0, n, l);

    // GᴴG = (GrᵀGr + GiᵀGi) + j(GrᵀGi − GiᵀGr), embedded as a real
    // symmetric matrix with every eigenvalue doubled.
    let re = &(&gr.transpose() * &gr) + &(&gi.transpose() * &gi);
    let im = &(&gr.transpose() * &gi) - &(&gi.transpose() * &gr);
    let mut h = Matrix::zeros(2 * l, 2 * l);
    h.set_block(0, 0, &re);
    h.set_block(l, l, &re);
    h.set_block(0, l, &im.scale(-1.0));
    h.set_block(l, 0, &im);
    let eig = linalg::sym_eig(&h.symmetrize())?;
    Ok(eig.eigenvalues.last().copied().unwrap_or(0.0).max(0.0).sqrt())
}

/// Frequencies `ω ≥ 0` where the Hamiltonian at level `gamma` has an
/// eigenvalue on (numerically near) the imaginary axis.
fn imaginary_crossings(cl: &ClosedLoopVertex, gamma: f64) -> Result<Vec<f64>, OracleError> {
    let n = cl.acl.rows();
    let (a, b, c, d) = (&cl.acl, &cl.bcl, &cl.cinf, &cl.dinf);
    let l = b.cols();
    let dt = d.transpose();
    let r = &Matrix::identity(l).scale(gamma * gamma) - &(&dt * d);
    let r_lu = Lu::factor(&r)?;
    let rinv_bt = r_lu.solve(&b.transpose());
    let rinv_dtc = r_lu.solve(&(&dt * c));
    let e = a + &(b * &rinv_dtc);
    let top_right = b * &rinv_bt;
    let inner = &Matrix::identity(d.rows()) + &(d * &r_lu.solve(&dt));
    let bottom_left = (&(&c.transpose() * &inner) * c).scale(-1.0);

    let mut h = Matrix::zeros(2 * n, 2 * n);
    h.set_block(0, 0, &e);
    h.set_block(0, n, &top_right);
    h.set_block(n, 0, &bottom_left);
    h.set_block(n, n, &e.transpose().scale(-1.0));
    let scale = h.norm_1().max(1.0);
    let mut out: Vec<f64> = linalg::general_eigenvalues(&h)?
        .into_iter()
        .filter(|z| z.re.abs() <= 1e-6 * scale && z.im >= 0.0)
        .map(|z| z.im)
        .collect();
    out.sort_by(f64::total_cmp);
    out.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * scale);
    Ok(out)
}

/// Outcome of the Hamiltonian test at one level.
enum LevelTest {
    /// `gamma` is an upper bound on the norm.
    Above,
    /// Norm exceeds `gamma`; carries the best gain seen at the crossings.
    Below(f64),
}

fn test_level(cl: &ClosedLoopVertex, gamma: f64) -> Result<LevelTest, OracleError> {
    let crossings = imaginary_crossings(cl, gamma)?;
    if crossings.is_empty() {
        return Ok(LevelTest::Above);
    }
    // A true crossing satisfies σ(G(jω)) = γ; near-axis eigenvalues that fail
    // this check are rounding artifacts. Midpoints between crossings are
    // where the gain exceeds γ.
    let mut probes = crossings.clone();
    probes.extend(crossings.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    let mut best = 0.0f64;
    for w in probes {
        best = best.max(frequency_gain(cl, w)?);
    }
    if best >= gamma * (1.0 - 1e-7) {
        Ok(LevelTest::Below(best))
    } else {
        Ok(LevelTest::Above)
    }
}

/// H∞ norm of `(Acl, B1, Cinf, Dinf)` to relative accuracy `tol`, by bisection
/// on the level `γ` with the Hamiltonian imaginary-axis test.
pub fn hinf_norm(cl: &ClosedLoopVertex, tol: f64) -> Result<f64, OracleError> {
    let n = cl.acl.rows();
    if cl.bcl.rows() != n || cl.cinf.cols() != n || cl.dinf.shape() != (cl.cinf.rows(), cl.bcl.cols()) {
        return Err(OracleError::Shape("closed-loop H∞ channel".into()));
    }
    require_hurwitz(&cl.acl)?;
    let sigma_d = sigma_max_real(&cl.dinf)?;
    if cl.cinf.is_zero() || cl.bcl.is_zero() {
        return Ok(sigma_d);
    }
    let tol = tol.max(1e-12);

    let mut lo = sigma_d.max(frequency_gain(cl, 0.0)?);
    for z in linalg::general_eigenvalues(&cl.acl)? {
        lo = lo.max(frequency_gain(cl, z.im.abs())?);
        lo = lo.max(frequency_gain(cl, z.abs())?);
    }
    if lo == 0.0 {
        lo = f64::MIN_POSITIVE.sqrt();
    }

    let mut hi = lo * (1.0 + tol);
    for _ in 0..200 {
        match test_level(cl, hi)? {
            LevelTest::Above => break,
            LevelTest::Below(g) => {
                lo = lo.max(g);
                hi = 2.0 * hi.max(g);
            }
        }
    }
    while hi - lo > tol * lo {
        let mid = 0.5 * (lo + hi);
        match test_level(cl, mid)? {
            LevelTest::Above => hi = mid,
            LevelTest::Below(g) => lo = g.max(mid).min(hi),
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Norm reports of the blended closed loop at every grid point.
pub fn certify(
    plant: &PolytopicPlant,
    k: &GainMatrix,
    weights_grid: &[PolytopeWeights],
) -> Result<Vec<NormReport>, OracleError> {
    weights_grid
        .iter()
        .map(|w| {
            let v = plant::blend_vertex(plant, w)?;
            let cl = plant::close_loop(&v, plant.measurement(), k)?;
            Ok(report(&cl))
        })
        .collect()
}

/// Norms of a single closed loop; numerical failures show up as undefined.
pub fn report(cl: &ClosedLoopVertex) -> NormReport {
    let stable = plant::is_stable(&cl.acl, 0.0).unwrap_or(false);
    if !stable {
        return NormReport {
            h2_squared: None,
            hinf: None,
            stable,
        };
    }
    NormReport {
        h2_squared: h2_norm_squared(cl).ok(),
        hinf: hinf_norm(cl, 1e-6).ok(),
        stable,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn siso(a: &[&[f64]], b: &[f64], c: &[f64], d: f64) -> ClosedLoopVertex {
        let acl = Matrix::from_rows(a).unwrap();
        let n = acl.rows();
        ClosedLoopVertex {
            bcl: Matrix::new(n, 1, b.to_vec()).unwrap(),
            cinf: Matrix::new(1, n, c.to_vec()).unwrap(),
            dinf: Matrix::new(1, 1, vec![d]).unwrap(),
            c2cl: Matrix::new(1, n, c.to_vec()).unwrap(),
            d2cl: Matrix::zeros(1, 1),
            acl,
        }
    }

    fn example1_loop(k: f64) -> ClosedLoopVertex {
        let plant = benchmarks::example1_plant();
        plant.closed_loops(&GainMatrix::from_flat(1, 1, &[-k]).unwrap()).unwrap().remove(0)
    }

    /// Dense frequency sweep with golden-section refinement around the peak.
    fn sweep_hinf(cl: &ClosedLoopVertex) -> f64 {
        let mut best = (0.0, frequency_gain(cl, 0.0).unwrap());
        for i in 0..4000 {
            let w = 10f64.powf(-3.0 + 6.0 * i as f64 / 3999.0);
            let g = frequency_gain(cl, w).unwrap();
            if g > best.1 {
                best = (w, g);
            }
        }
        let (mut a, mut b) = (best.0 * 0.99, best.0 * 1.01 + 1e-9);
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..100 {
            let x1 = b - phi * (b - a);
            let x2 = a + phi * (b - a);
            if frequency_gain(cl, x1).unwrap() > frequency_gain(cl, x2).unwrap() {
                b = x2;
            } else {
                a = x1;
            }
        }
        best.1.max(frequency_gain(cl, 0.5 * (a + b)).unwrap())
    }

    /// `(1/π) ∫₀^∞ ‖G(jω)‖_F² dω` for a SISO loop, by the substitution
    /// ω = tan θ and composite Simpson.
    fn h2_by_quadrature(cl: &ClosedLoopVertex) -> f64 {
        let m = 20000;
        let h = std::f64::consts::FRAC_PI_2 / m as f64;
        let f = |theta: f64| {
            if theta >= std::f64::consts::FRAC_PI_2 {
                return 0.0;
            }
            let w = theta.tan();
            let g = frequency_gain(cl, w).unwrap();
            g * g * (1.0 + w * w)
        };
        let mut s = f(0.0) + f(std::f64::consts::FRAC_PI_2);
        for i in 1..m {
            s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0 / std::f64::consts::PI
    }

    #[test]
    fn scalar_lyapunov() {
        let x = lyapunov_solve(&Matrix::from_rows(&[[-1.0]]).unwrap(), &Matrix::identity(1)).unwrap();
        assert_relative_eq!(x[(0, 0)], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn damped_oscillator_lyapunov_trace() {
        for k in [0.3, 0.8165, 1.0, 4.0] {
            let a = Matrix::from_rows(&[[0.0, 1.0], [-1.0, -k]]).unwrap();
            let q = Matrix::from_diag(&[1.0, k * k]);
            let x = lyapunov_solve(&a, &q).unwrap();
            assert_relative_eq!(x.trace(), (2.0 + 3.0 * k * k) / (2.0 * k), max_relative = 1e-12);
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = Matrix::from_rows(&[[-1.0, 3.0], [0.0, -2.0]]).unwrap();
        assert!(lyapunov_solve(&a, &Matrix::zeros(2, 2)).unwrap().is_zero());
    }

    #[test]
    fn non_hurwitz_rejected() {
        let a = Matrix::from_rows(&[[0.0, 1.0], [-1.0, 0.0]]).unwrap();
        assert!(matches!(
            lyapunov_solve(&a, &Matrix::identity(2)),
            Err(OracleError::NotHurwitz(_))
        ));
        let a = Matrix::from_rows(&[[1.0]]).unwrap();
        assert!(matches!(h2_norm_squared(&siso(&[&[1.0]], &[1.0], &[1.0], 0.0)), Err(OracleError::NotHurwitz(_))));
        assert!(matches!(lyapunov_solve(&a, &Matrix::identity(1)), Err(OracleError::NotHurwitz(_))));
    }

    #[test]
    fn h2_zero_input_matrix() {
        let cl = ClosedLoopVertex::from_parts(
            Matrix::from_rows(&[[-1.0, 0.5], [0.0, -3.0]]).unwrap(),
            Matrix::zeros(2, 2),
            Matrix::identity(2),
        );
        assert_eq!(h2_norm_squared(&cl).unwrap(), 0.0);
    }

    #[test]
    fn h2_example1_closed_form() {
        let k = (2.0f64 / 3.0).sqrt();
        assert_relative_eq!(h2_norm_squared(&example1_loop(k)).unwrap(), 6f64.sqrt(), max_relative = 1e-12);
        assert_relative_eq!(h2_norm_squared(&example1_loop(1.0)).unwrap(), 2.5, max_relative = 1e-12);
    }

    #[test]
    fn h2_rejects_feedthrough() {
        let mut cl = example1_loop(1.0);
        cl.d2cl[(0, 0)] = 1.0;
        assert_eq!(h2_norm_squared(&cl), Err(OracleError::Feedthrough));
    }

    #[test]
    fn h2_matches_frequency_integral() {
        let cl = siso(&[&[0.0, 1.0], &[-2.0, -0.7]], &[0.3, 1.0], &[1.0, -0.4], 0.0);
        assert_relative_eq!(h2_norm_squared(&cl).unwrap(), h2_by_quadrature(&cl), max_relative = 1e-6);
    }

    #[test]
    fn hinf_first_order() {
        let cl = siso(&[&[-1.0]], &[1.0], &[1.0], 0.0);
        assert_relative_eq!(hinf_norm(&cl, 1e-8).unwrap(), 1.0, max_relative = 1e-7);
    }

    #[test]
    fn hinf_zero_output() {
        let cl = siso(&[&[-1.0]], &[1.0], &[0.0], 0.0);
        assert_eq!(hinf_norm(&cl, 1e-6).unwrap(), 0.0);
    }

    #[test]
    fn hinf_resonant_peak() {
        let d = 0.1f64;
        let cl = siso(&[&[0.0, 1.0], &[-1.0, -d]], &[0.0, 1.0], &[1.0, 0.0], 0.0);
        let exact = 1.0 / (d * (1.0 - d * d / 4.0).sqrt());
        let got = hinf_norm(&cl, 1e-4).unwrap();
        assert!((got - exact).abs() <= 1e-4 * exact, "{got} vs {exact}");
        assert_relative_eq!(got, 10.0125, max_relative = 1e-4);
    }

    #[test]
    fn hinf_with_feedthrough() {
        // G(s) = 1/(s+1) + 2 peaks at ω = 0 with value 3.
        let cl = siso(&[&[-1.0]], &[1.0], &[1.0], 2.0);
        assert_relative_eq!(hinf_norm(&cl, 1e-8).unwrap(), 3.0, max_relative = 1e-7);
        // G(s) = 1/(s+1) − 2 has |G(0)| = 1 and |G(j∞)| = 2.
        let cl = siso(&[&[-1.0]], &[1.0], &[1.0], -2.0);
        assert_relative_eq!(hinf_norm(&cl, 1e-8).unwrap(), 2.0, max_relative = 1e-7);
    }

    #[test]
    fn hinf_unstable_rejected() {
        let cl = siso(&[&[0.5]], &[1.0], &[1.0], 0.0);
        assert!(matches!(hinf_norm(&cl, 1e-6), Err(OracleError::NotHurwitz(_))));
    }

    #[test]
    fn certify_single_vertex() {
        let plant = benchmarks::example1_plant();
        let k = GainMatrix::from_flat(1, 1, &[-1.0]).unwrap();
        let reports = certify(&plant, &k, &[PolytopeWeights::unit(1, 0)]).unwrap();
        assert_eq!(reports.len(), 1);
        assert!(reports[0].stable);
        assert_relative_eq!(reports[0].h2_squared.unwrap(), 2.5, max_relative = 1e-10);
    }

    #[test]
    fn certify_example2_vertices() {
        let plant = benchmarks::example2_plant();
        let k = GainMatrix::from_flat(1, 2, &[2.2422, 2.6117]).unwrap();
        let grid = [PolytopeWeights::unit(2, 0), PolytopeWeights::unit(2, 1)];
        let reports = certify(&plant, &k, &grid).unwrap();
        assert_eq!(reports.len(), 2);
        assert!(reports.iter().all(|r| r.stable && r.h2_squared.is_some() && r.hinf.is_some()));
    }

    #[test]
    fn certify_destabilizing_gain() {
        let plant = benchmarks::example1_plant();
        let k = GainMatrix::from_flat(1, 1, &[1.0]).unwrap();
        let reports = certify(&plant, &k, &[PolytopeWeights::unit(1, 0)]).unwrap();
        assert_eq!(
            reports,
            vec![NormReport {
                h2_squared: None,
                hinf: None,
                stable: false
            }]
        );
    }

    fn hurwitz_matrix(n: usize) -> impl Strategy<Value = Matrix> {
        prop::collection::vec(-2.0f64..2.0, n * n)
            .prop_map(move |v| Matrix::new(n, n, v).unwrap())
            .prop_filter("Hurwitz", |a| plant::spectral_abscissa(a).map(|s| s < -1e-3).unwrap_or(false))
    }

    fn instance() -> impl Strategy<Value = (Matrix, Matrix)> {
        (1usize..=5).prop_flat_map(|n| {
            (
                hurwitz_matrix(n),
                prop::collection::vec(-2.0f64..2.0, n * n).prop_map(move |v| {
                    let m = Matrix::new(n, n, v).unwrap();
                    &m + &m.transpose()
                }),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn lyapunov_residual_contract((a, q) in instance()) {
            let x = lyapunov_solve(&a, &q).unwrap();
            prop_assert!(x.max_asymmetry() == 0.0);
            let r = lyapunov_residual(&a, &x, &q).frobenius_norm();
            prop_assert!(r <= 1e-9 * (1.0 + q.frobenius_norm()), "residual {}", r);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn hinf_agrees_with_sweep(
            a in (1usize..=3).prop_flat_map(hurwitz_matrix),
            seed in prop::collection::vec(-2.0f64..2.0, 9),
        ) {
            let n = a.rows();
            let cl = ClosedLoopVertex {
                bcl: Matrix::new(n, 1, seed[..n].to_vec()).unwrap(),
                cinf: Matrix::new(1, n, seed[3..3 + n].to_vec()).unwrap(),
                dinf: Matrix::new(1, 1, vec![seed[6]]).unwrap(),
                c2cl: Matrix::zeros(1, n),
                d2cl: Matrix::zeros(1, 1),
                acl: a,
            };
            let exact = hinf_norm(&cl, 1e-7).unwrap();
            let swept = sweep_hinf(&cl);
            prop_assert!(swept <= exact * (1.0 + 1e-6) + 1e-12, "{} > {}", swept, exact);
            prop_assert!(swept >= exact * (1.0 - 1e-4) - 1e-12, "{} << {}", swept, exact);
        }

        #[test]
        fn h2_via_gramians_agree(a in (1usize..=4).prop_flat_map(hurwitz_matrix), bc in prop::collection::vec(-2.0f64..2.0, 8)) {
            // Tr(Bᵀ Q B) with the observability Gramian equals Tr(C P Cᵀ)
            // with the controllability Gramian.
            let n = a.rows();
            let b = Matrix::new(n, 1, bc[..n].to_vec()).unwrap();
            let c = Matrix::new(1, n, bc[4..4 + n].to_vec()).unwrap();
            let cl = ClosedLoopVertex::from_parts(a.clone(), b.clone(), c.clone());
            let via_q = h2_norm_squared(&cl).unwrap();
            let p = lyapunov_solve(&a.transpose(), &(&b * &b.transpose())).unwrap();
            let via_p = (&(&c * &p) * &c.transpose()).trace();
            prop_assert!((via_q - via_p).abs() <= 1e-8 * (1.0 + via_p.abs()));
        }
    }
}
