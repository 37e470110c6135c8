//! Polytopic plant data and static output feedback closed loops.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("plant has no vertices")]
    NoVertices,
    #[error("vertex {vertex}: field {field} is {found:?}, expected {expected:?}")]
    Dimension {
        vertex: usize,
        field: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("measurement matrix C is {found:?}, expected {expected:?}")]
    MeasurementDimension {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("gain is {found:?}, expected {expected:?}")]
    GainDimension {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("expected {expected} polytope weights, got {found}")]
    WeightCount { expected: usize, found: usize },
    #[error("invalid polytope weights: {0}")]
    InvalidWeights(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// One vertex of the uncertainty polytope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantVertex {
    #[serde(rename = "A")]
    pub a: Matrix,
    #[serde(rename = "B1")]
    pub b1: Matrix,
    #[serde(rename = "B2")]
    pub b2: Matrix,
    #[serde(rename = "C1")]
    pub c1: Matrix,
    #[serde(rename = "C2")]
    pub c2: Matrix,
    #[serde(rename = "D11")]
    pub d11: Matrix,
    #[serde(rename = "D12")]
    pub d12: Matrix,
    #[serde(rename = "D21")]
    pub d21: Matrix,
    #[serde(rename = "D22")]
    pub d22: Matrix,
}

impl PlantVertex {
    fn fields(&self) -> [(&'static str, &Matrix); 9] {
        [
            ("A", &self.a),
            ("B1", &self.b1),
            ("B2", &self.b2),
            ("C1", &self.c1),
            ("C2", &self.c2),
            ("D11", &self.d11),
            ("D12", &self.d12),
            ("D21", &self.d21),
            ("D22", &self.d22),
        ]
    }

    fn expected_shapes(d: &Dims) -> [(usize, usize); 9] {
        [
            (d.n, d.n),
            (d.n, d.l),
            (d.n, d.m),
            (d.p1, d.n),
            (d.p2, d.n),
            (d.p1, d.l),
            (d.p1, d.m),
            (d.p2, d.l),
            (d.p2, d.m),
        ]
    }

    fn map(&self, f: impl Fn(&Matrix) -> Matrix) -> Self {
        Self {
            a: f(&self.a),
            b1: f(&self.b1),
            b2: f(&self.b2),
            c1: f(&self.c1),
            c2: f(&self.c2),
            d11: f(&self.d11),
            d12: f(&self.d12),
            d21: f(&self.d21),
            d22: f(&self.d22),
        }
    }

    fn accumulate(&mut self, w: f64, other: &PlantVertex) {
        self.a.axpy(w, &other.a);
        self.b1.axpy(w, &other.b1);
        self.b2.axpy(w, &other.b2);
        self.c1.axpy(w, &other.c1);
        self.c2.axpy(w, &other.c2);
        self.d11.axpy(w, &other.d11);
        self.d12.axpy(w, &other.d12);
        self.d21.axpy(w, &other.d21);
        self.d22.axpy(w, &other.d22);
    }
}

/// Signal dimensions shared by all vertices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// states
    pub n: usize,
    /// control inputs
    pub m: usize,
    /// disturbance inputs
    pub l: usize,
    /// measured outputs
    pub p: usize,
    /// H∞ performance outputs
    pub p1: usize,
    /// H2 performance outputs
    pub p2: usize,
}

/// Raw serialized form of a plant, validated on conversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantDescription {
    pub vertices: Vec<PlantVertex>,
    #[serde(rename = "C")]
    pub c: Matrix,
}

/// Plant whose matrices range over the convex hull of `vertices`; the
/// measurement map `C` is certain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PlantDescription", into = "PlantDescription")]
pub struct PolytopicPlant {
    vertices: Vec<PlantVertex>,
    c: Matrix,
    dims: Dims,
    hinf_channel_present: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlantWarning {
    /// Nonzero w→z2 feedthrough makes the H2 norm of that channel infinite.
    NonzeroD21 { vertex: usize },
}

impl std::fmt::Display for PlantWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PlantWarning::NonzeroD21 { vertex } => write!(
                f,
                "vertex {vertex} has nonzero D21; the H2 channel w->z2 has direct feedthrough"
            ),
        }
    }
}

impl TryFrom<PlantDescription> for PolytopicPlant {
    type Error = PlantError;

    fn try_from(d: PlantDescription) -> Result<Self, PlantError> {
        PolytopicPlant::new(d.vertices, d.c)
    }
}

impl From<PolytopicPlant> for PlantDescription {
    fn from(p: PolytopicPlant) -> Self {
        PlantDescription {
            vertices: p.vertices,
            c: p.c,
        }
    }
}

impl PolytopicPlant {
    pub fn new(vertices: Vec<PlantVertex>, c: Matrix) -> Result<Self, PlantError> {
        let first = vertices.first().ok_or(PlantError::NoVertices)?;
        let dims = Dims {
            n: first.a.rows(),
            m: first.b2.cols(),
            l: first.b1.cols(),
            p: c.rows(),
            p1: first.c1.rows(),
            p2: first.c2.rows(),
        };
        let hinf_channel_present = vertices
            .iter()
            .any(|v| !v.c1.is_zero() || !v.d11.is_zero() || !v.d12.is_zero());
        let plant = Self {
            vertices,
            c,
            dims,
            hinf_channel_present,
        };
        validate_plant(&plant)?;
        Ok(plant)
    }

    pub fn vertices(&self) -> &[PlantVertex] {
        &self.vertices
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn measurement(&self) -> &Matrix {
        &self.c
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// True iff any of C1, D11, D12 is nonzero at some vertex.
    pub fn hinf_channel_present(&self) -> bool {
        self.hinf_channel_present
    }

    pub fn closed_loops(&self, k: &GainMatrix) -> Result<Vec<ClosedLoopVertex>, PlantError> {
        self.vertices
            .iter()
            .map(|v| close_loop(v, &self.c, k))
            .collect()
    }
}

/// Check every dimension invariant. Returns non-fatal warnings on success.
pub fn validate_plant(p: &PolytopicPlant) -> Result<Vec<PlantWarning>, PlantError> {
    if p.vertices.is_empty() {
        return Err(PlantError::NoVertices);
    }
    let d = p.dims;
    if p.c.shape() != (d.p, d.n) {
        return Err(PlantError::MeasurementDimension {
            expected: (d.p, d.n),
            found: p.c.shape(),
        });
    }
    let expected = PlantVertex::expected_shapes(&d);
    let mut warnings = Vec::new();
    for (i, v) in p.vertices.iter().enumerate() {
        for ((field, m), exp) in v.fields().into_iter().zip(expected) {
            if m.shape() != exp {
                return Err(PlantError::Dimension {
                    vertex: i,
                    field,
                    expected: exp,
                    found: m.shape(),
                });
            }
        }
        if !v.d21.is_zero() {
            log::warn!("vertex {i} has nonzero D21");
            warnings.push(PlantWarning::NonzeroD21 { vertex: i });
        }
    }
    Ok(warnings)
}

/// Convex weights over the polytope vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct PolytopeWeights {
    alpha: Vec<f64>,
}

impl PolytopeWeights {
    pub fn new(alpha: Vec<f64>) -> Result<Self, PlantError> {
        if alpha.is_empty() {
            return Err(PlantError::InvalidWeights("empty".into()));
        }
        if let Some(a) = alpha.iter().find(|a| !(**a >= 0.0) || !a.is_finite()) {
            return Err(PlantError::InvalidWeights(format!("negative or non-finite weight {a}")));
        }
        let sum: f64 = alpha.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(PlantError::InvalidWeights(format!("weights sum to {sum}")));
        }
        Ok(Self { alpha })
    }

    /// All weight on vertex `k`.
    pub fn unit(n: usize, k: usize) -> Self {
        let mut alpha = vec![0.0; n];
        alpha[k] = 1.0;
        Self { alpha }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.alpha
    }
}

/// Entrywise convex combination of the vertex matrices.
pub fn blend_vertex(p: &PolytopicPlant, w: &PolytopeWeights) -> Result<PlantVertex, PlantError> {
    if w.alpha.len() != p.vertices.len() {
        return Err(PlantError::WeightCount {
            expected: p.vertices.len(),
            found: w.alpha.len(),
        });
    }
    let mut out = p.vertices[0].map(|m| Matrix::zeros(m.rows(), m.cols()));
    for (a, v) in w.alpha.iter().zip(&p.vertices) {
        if *a != 0.0 {
            out.accumulate(*a, v);
        }
    }
    Ok(out)
}

/// Static output feedback gain `K` (m×p), `u = K y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GainMatrix(Matrix);

impl GainMatrix {
    pub fn new(k: Matrix) -> Self {
        Self(k)
    }

    pub fn zeros(m: usize, p: usize) -> Self {
        Self(Matrix::zeros(m, p))
    }

    /// Row-major flat vector of length `m·p` to an `m×p` gain.
    pub fn from_flat(m: usize, p: usize, flat: &[f64]) -> Result<Self, PlantError> {
        if flat.len() != m * p {
            return Err(PlantError::GainDimension {
                expected: (m, p),
                found: (flat.len(), 1),
            });
        }
        Ok(Self(Matrix::new(m, p, flat.to_vec())?))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn as_flat(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        self.0.as_mut_slice()
    }

    pub fn len(&self) -> usize {
        self.0.as_slice().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }
}

/// Closed-loop data of one vertex under `u = K C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopVertex {
    /// `A + B2 K C`
    pub acl: Matrix,
    /// `B1`
    pub bcl: Matrix,
    /// `C1 + D12 K C`
    pub cinf: Matrix,
    /// `D11`
    pub dinf: Matrix,
    /// `C2 + D22 K C`
    pub c2cl: Matrix,
    /// `D21`
    pub d2cl: Matrix,
}

impl ClosedLoopVertex {
    /// `ClosedLoopVertex` of an already-closed system, e.g. for norm checks.
    pub fn from_parts(acl: Matrix, bcl: Matrix, c2cl: Matrix) -> Self {
        let (n, l) = (acl.rows(), bcl.cols());
        Self {
            cinf: Matrix::zeros(0, n),
            dinf: Matrix::zeros(0, l),
            d2cl: Matrix::zeros(c2cl.rows(), l),
            acl,
            bcl,
            c2cl,
        }
    }
}

pub fn close_loop(v: &PlantVertex, c: &Matrix, k: &GainMatrix) -> Result<ClosedLoopVertex, PlantError> {
    let (m, p) = (v.b2.cols(), c.rows());
    if k.shape() != (m, p) {
        return Err(PlantError::GainDimension {
            expected: (m, p),
            found: k.shape(),
        });
    }
    let kc = linalg::mat_mul(k.matrix(), c)?;
    let acl = v.a.checked_add(&linalg::mat_mul(&v.b2, &kc)?)?;
    let cinf = v.c1.checked_add(&linalg::mat_mul(&v.d12, &kc)?)?;
    let c2cl = v.c2.checked_add(&linalg::mat_mul(&v.d22, &kc)?)?;
    Ok(ClosedLoopVertex {
        acl,
        bcl: v.b1.clone(),
        cinf,
        dinf: v.d11.clone(),
        c2cl,
        d2cl: v.d21.clone(),
    })
}

/// Largest real part of the spectrum of `acl`.
pub fn spectral_abscissa(acl: &Matrix) -> Result<f64, PlantError> {
    Ok(linalg::general_eigenvalues(acl)?
        .iter()
        .map(|c| c.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// True iff every eigenvalue of `acl` has real part below `-margin`.
pub fn is_stable(acl: &Matrix, margin: f64) -> Result<bool, PlantError> {
    Ok(spectral_abscissa(acl)? < -margin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn example_one_is_valid() {
        let plant = benchmarks::example1_plant();
        assert_eq!(validate_plant(&plant).unwrap(), vec![]);
        let d = plant.dims();
        assert_eq!((d.n, d.m, d.l, d.p, d.p2), (2, 1, 2, 1, 2));
        assert!(!plant.hinf_channel_present());
        assert!(benchmarks::example2_plant().hinf_channel_present());
    }

    #[test]
    fn wrong_b2_rows_is_named() {
        let mut v = benchmarks::example1_plant().vertices()[0].clone();
        v.b2 = m(&[&[0.0], &[1.0], &[0.0]]);
        let err = PolytopicPlant::new(vec![v], m(&[&[0.0, 1.0]])).unwrap_err();
        assert!(matches!(err, PlantError::Dimension { field: "B2", vertex: 0, .. }), "{err}");
        assert!(err.to_string().contains("B2"));
    }

    #[test]
    fn nonzero_d21_warns() {
        let mut v = benchmarks::example1_plant().vertices()[0].clone();
        v.d21 = m(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let plant = PolytopicPlant::new(vec![v], m(&[&[0.0, 1.0]])).unwrap();
        assert_eq!(validate_plant(&plant).unwrap(), vec![PlantWarning::NonzeroD21 { vertex: 0 }]);
    }

    #[test]
    fn measurement_shape_checked() {
        let v = benchmarks::example1_plant().vertices()[0].clone();
        assert!(matches!(
            PolytopicPlant::new(vec![v], m(&[&[0.0, 1.0, 0.0]])),
            Err(PlantError::MeasurementDimension { .. })
        ));
        assert_eq!(PolytopicPlant::new(vec![], m(&[&[0.0]])), Err(PlantError::NoVertices));
    }

    #[test]
    fn blend_examples() {
        let p1 = benchmarks::example1_plant();
        let b = blend_vertex(&p1, &PolytopeWeights::new(vec![1.0]).unwrap()).unwrap();
        assert_eq!(&b, &p1.vertices()[0]);

        let p2 = benchmarks::example2_plant();
        let b = blend_vertex(&p2, &PolytopeWeights::unit(2, 1)).unwrap();
        assert_eq!(&b, &p2.vertices()[1]);
        let mid = blend_vertex(&p2, &PolytopeWeights::new(vec![0.5, 0.5]).unwrap()).unwrap();
        assert!((mid.a[(0, 1)] - 0.93).abs() < 1e-15);

        assert!(matches!(
            blend_vertex(&p2, &PolytopeWeights::new(vec![1.0]).unwrap()),
            Err(PlantError::WeightCount { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn weights_validated() {
        assert!(PolytopeWeights::new(vec![0.5, 0.6]).is_err());
        assert!(PolytopeWeights::new(vec![-0.5, 1.5]).is_err());
        assert!(PolytopeWeights::new(vec![]).is_err());
        assert!(PolytopeWeights::new(vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn close_loop_examples() {
        let plant = benchmarks::example1_plant();
        let v = &plant.vertices()[0];
        let zero = close_loop(v, plant.measurement(), &GainMatrix::zeros(1, 1)).unwrap();
        assert_eq!(zero.acl, v.a);
        assert_eq!(zero.cinf, v.c1);
        assert_eq!(zero.c2cl, v.c2);

        let k = GainMatrix::new(m(&[&[-0.8165]]));
        let cl = close_loop(v, plant.measurement(), &k).unwrap();
        assert_eq!(cl.acl, m(&[&[0.0, 1.0], &[-1.0, -0.8165]]));

        let mut no_input = v.clone();
        no_input.b2 = Matrix::zeros(2, 1);
        let cl = close_loop(&no_input, plant.measurement(), &GainMatrix::new(m(&[&[7.0]]))).unwrap();
        assert_eq!(cl.acl, v.a);

        assert!(matches!(
            close_loop(v, plant.measurement(), &GainMatrix::zeros(1, 2)),
            Err(PlantError::GainDimension { .. })
        ));
    }

    #[test]
    fn stability_examples() {
        assert!(is_stable(&Matrix::from_diag(&[-1.0, -2.0]), 0.0).unwrap());
        assert!(!is_stable(&m(&[&[0.0, 1.0], &[-1.0, 0.0]]), 0.0).unwrap());
        assert!(is_stable(&m(&[&[0.0, 1.0], &[-1.0, -0.8165]]), 0.0).unwrap());
        assert!(!is_stable(&m(&[&[0.0, 1.0], &[-1.0, -0.8165]]), 0.5).unwrap());
    }

    fn random_plant(n: usize, nv: usize, vals: &[f64]) -> PolytopicPlant {
        let mut it = vals.iter().copied().cycle();
        let mut take = |r: usize, c: usize| {
            Matrix::new(r, c, (0..r * c).map(|_| it.next().unwrap()).collect()).unwrap()
        };
        let (m, l, p, p1, p2) = (2, 2, 2, 1, 2);
        let vertices = (0..nv)
            .map(|_| PlantVertex {
                a: take(n, n),
                b1: take(n, l),
                b2: take(n, m),
                c1: take(p1, n),
                c2: take(p2, n),
                d11: take(p1, l),
                d12: take(p1, m),
                d21: Matrix::zeros(p2, l),
                d22: take(p2, m),
            })
            .collect();
        PolytopicPlant::new(vertices, take(p, n)).unwrap()
    }

    proptest! {
        #[test]
        fn closed_loop_is_affine_in_vertex_data(
            n in 1usize..5,
            vals in proptest::collection::vec(-2.0f64..2.0, 97),
            raw_w in proptest::collection::vec(0.01f64..1.0, 3),
            kvals in proptest::collection::vec(-3.0f64..3.0, 4),
        ) {
            let plant = random_plant(n, 3, &vals);
            let total: f64 = raw_w.iter().sum();
            let mut alpha: Vec<f64> = raw_w.iter().map(|w| w / total).collect();
            let rest: f64 = alpha[..2].iter().sum();
            alpha[2] = 1.0 - rest;
            let w = PolytopeWeights::new(alpha.clone()).unwrap();
            let k = GainMatrix::from_flat(2, 2, &kvals).unwrap();

            let blended = close_loop(&blend_vertex(&plant, &w).unwrap(), plant.measurement(), &k).unwrap();
            let per_vertex = plant.closed_loops(&k).unwrap();
            let mut acl = Matrix::zeros(n, n);
            let mut cinf = Matrix::zeros(1, n);
            let mut c2cl = Matrix::zeros(2, n);
            for (a, cl) in alpha.iter().zip(&per_vertex) {
                acl.axpy(*a, &cl.acl);
                cinf.axpy(*a, &cl.cinf);
                c2cl.axpy(*a, &cl.c2cl);
            }
            prop_assert!((&acl - &blended.acl).max_abs() <= 1e-12);
            prop_assert!((&cinf - &blended.cinf).max_abs() <= 1e-12);
            prop_assert!((&c2cl - &blended.c2cl).max_abs() <= 1e-12);
        }

        #[test]
        fn zero_gain_is_open_loop(n in 1usize..5, vals in proptest::collection::vec(-2.0f64..2.0, 61)) {
            let plant = random_plant(n, 1, &vals);
            let cl = plant.closed_loops(&GainMatrix::zeros(2, 2)).unwrap().remove(0);
            let v = &plant.vertices()[0];
            prop_assert_eq!(&cl.acl, &v.a);
            prop_assert_eq!(&cl.cinf, &v.c1);
            prop_assert_eq!(&cl.c2cl, &v.c2);
            prop_assert_eq!(&cl.bcl, &v.b1);
        }
    }
}
