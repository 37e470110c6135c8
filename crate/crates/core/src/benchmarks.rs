//! The two benchmark plants.
//!
//! Example 1 is a lightly structured second-order system with a single
//! vertex. The measurement matrix is not given with the original data; it is
//! taken as `C = [0 1]` (velocity feedback), under which `A + B2 K C` is
//! Hurwitz iff `K < 0` and the H2 cost is `(2 + 3K²) / (2|K|)`, minimized at
//! `|K| = √(2/3)` with value `√6`.
//!
//! Example 2 is a fourth-order system with `a12 ∈ [−0.57, 2.43]`, i.e. two
//! vertices, and `y = [x3; x4]`.

use crate::linalg::Matrix;
use crate::plant::{PlantVertex, PolytopicPlant};

/// Interval of the uncertain `A[0][1]` entry of Example 2.
pub const EXAMPLE2_A12: [f64; 2] = [-0.57, 2.43];

fn mat<const R: usize, const C: usize>(rows: [[f64; C]; R]) -> Matrix {
    Matrix::from_rows(&rows).expect("static benchmark data")
}

pub fn example1_plant() -> PolytopicPlant {
    let v = PlantVertex {
        a: mat([[0.0, 1.0], [-1.0, 0.0]]),
        b1: Matrix::identity(2),
        b2: mat([[0.0], [1.0]]),
        c1: Matrix::zeros(1, 2),
        c2: mat([[1.0, 0.0], [0.0, 0.0]]),
        d11: Matrix::zeros(1, 2),
        d12: Matrix::zeros(1, 1),
        d21: Matrix::zeros(2, 2),
        d22: mat([[0.0], [1.0]]),
    };
    PolytopicPlant::new(vec![v], mat([[0.0, 1.0]])).expect("example 1 is consistent")
}

pub fn example2_vertex(a12: f64) -> PlantVertex {
    PlantVertex {
        a: mat([
            [-2.98, a12, 0.0, -0.034],
            [-0.99, -0.21, 0.035, -0.0011],
            [0.0, 0.0, 0.0, 1.0],
            [0.39, -5.555, 0.0, -1.89],
        ]),
        b1: Matrix::identity(4),
        b2: mat([[-0.032], [0.0], [0.0], [-1.6]]),
        c1: Matrix::identity(4),
        c2: Matrix::identity(4),
        d11: Matrix::zeros(4, 4),
        d12: Matrix::zeros(4, 1),
        d21: Matrix::zeros(4, 4),
        d22: mat([[1.0], [0.0], [0.0], [0.0]]),
    }
}

pub fn example2_plant() -> PolytopicPlant {
    let vertices = EXAMPLE2_A12.iter().map(|&a12| example2_vertex(a12)).collect();
    PolytopicPlant::new(vertices, mat([[0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]))
        .expect("example 2 is consistent")
}
