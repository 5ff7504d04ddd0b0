//! Minimal five-point relative-orientation solver.
//!
//! The essential matrix is written as `E = x·X + y·Y + z·Z + W` over the null
//! space of the five epipolar equations. The rank and trace constraints give
//! ten cubics in `(x, y, z)`; after Gauss-Jordan elimination their cubic
//! monomials are expressed in a ten-element quotient basis, which yields the
//! action matrix for multiplication by `x`. Real eigenvectors of that matrix
//! are the solutions.

use nalgebra::{DMatrix, Matrix3, SMatrix};

use crate::geom::{EssentialMatrix, NormalizedPoint};

const N_MONO: usize = 20;

/// Monomials `x^a y^b z^c` with degree ≤ 3: the ten cubics first, then the
/// quotient basis `x², xy, y², xz, yz, z², x, y, z, 1`.
const MONOMIALS: [(u8, u8, u8); N_MONO] = [
    (3, 0, 0),
    (2, 1, 0),
    (1, 2, 0),
    (0, 3, 0),
    (2, 0, 1),
    (1, 1, 1),
    (0, 2, 1),
    (1, 0, 2),
    (0, 1, 2),
    (0, 0, 3),
    (2, 0, 0),
    (1, 1, 0),
    (0, 2, 0),
    (1, 0, 1),
    (0, 1, 1),
    (0, 0, 2),
    (1, 0, 0),
    (0, 1, 0),
    (0, 0, 1),
    (0, 0, 0),
];

fn mono_index(a: u8, b: u8, c: u8) -> usize {
    MONOMIALS.iter().position(|&m| m == (a, b, c)).expect("degree at most 3")
}

#[derive(Clone, Copy)]
struct Poly([f64; N_MONO]);

impl Poly {
    fn zero() -> Self {
        Poly([0.0; N_MONO])
    }

    fn linear(x: f64, y: f64, z: f64, w: f64) -> Self {
        let mut p = Self::zero();
        p.0[mono_index(1, 0, 0)] = x;
        p.0[mono_index(0, 1, 0)] = y;
        p.0[mono_index(0, 0, 1)] = z;
        p.0[mono_index(0, 0, 0)] = w;
        p
    }

    fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (i, &a) in self.0.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in other.0.iter().enumerate() {
                if b == 0.0 {
                    continue;
                }
                let (p, q) = (MONOMIALS[i], MONOMIALS[j]);
                out.0[mono_index(p.0 + q.0, p.1 + q.1, p.2 + q.2)] += a * b;
            }
        }
        out
    }

    fn add(&self, other: &Poly) -> Poly {
        let mut out = *self;
        out.0.iter_mut().zip(other.0.iter()).for_each(|(a, b)| *a += b);
        out
    }

    fn scale(&self, s: f64) -> Poly {
        let mut out = *self;
        out.0.iter_mut().for_each(|a| *a *= s);
        out
    }
}

type PolyMat = [[Poly; 3]; 3];

fn poly_matmul(a: &PolyMat, b: &PolyMat, transpose_b: bool) -> PolyMat {
    let mut out = [[Poly::zero(); 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            for k in 0..3 {
                let rhs = if transpose_b { &b[j][k] } else { &b[k][j] };
                *cell = cell.add(&a[i][k].mul(rhs));
            }
        }
    }
    out
}

/// Ten cubic constraints as rows of a 10×20 coefficient matrix.
fn constraint_matrix(basis: &[Matrix3<f64>; 4]) -> SMatrix<f64, 10, 20> {
    let mut e = [[Poly::zero(); 3]; 3];
    for (r, row) in e.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            *cell = Poly::linear(basis[0][(r, c)], basis[1][(r, c)], basis[2][(r, c)], basis[3][(r, c)]);
        }
    }
    let det = e[0][0]
        .mul(&e[1][1].mul(&e[2][2]).add(&e[1][2].mul(&e[2][1]).scale(-1.0)))
        .add(&e[0][1].mul(&e[1][0].mul(&e[2][2]).add(&e[1][2].mul(&e[2][0]).scale(-1.0))).scale(-1.0))
        .add(&e[0][2].mul(&e[1][0].mul(&e[2][1]).add(&e[1][1].mul(&e[2][0]).scale(-1.0))));
    let eet = poly_matmul(&e, &e, true);
    let trace = eet[0][0].add(&eet[1][1]).add(&eet[2][2]);
    let eete = poly_matmul(&eet, &e, false);

    let mut m = SMatrix::<f64, 10, 20>::zeros();
    for (c, v) in det.0.iter().enumerate() {
        m[(0, c)] = *v;
    }
    for r in 0..3 {
        for c in 0..3 {
            let p = eete[r][c].scale(2.0).add(&trace.mul(&e[r][c]).scale(-1.0));
            for (k, v) in p.0.iter().enumerate() {
                m[(1 + r * 3 + c, k)] = *v;
            }
        }
    }
    m
}

/// Reduce the leading 10×10 block to the identity. `None` if singular.
fn gauss_jordan(m: &mut SMatrix<f64, 10, 20>) -> Option<()> {
    for col in 0..10 {
        let pivot = (col..10).max_by(|&a, &b| m[(a, col)].abs().total_cmp(&m[(b, col)].abs()))?;
        let scale = m.fixed_view::<10, 10>(0, 0).amax().max(1e-300);
        if m[(pivot, col)].abs() < 1e-12 * scale {
            return None;
        }
        m.swap_rows(col, pivot);
        let p = m[(col, col)];
        for c in 0..20 {
            m[(col, c)] /= p;
        }
        for r in 0..10 {
            if r != col {
                let f = m[(r, col)];
                if f != 0.0 {
                    for c in 0..20 {
                        m[(r, c)] -= f * m[(col, c)];
                    }
                }
            }
        }
    }
    Some(())
}

/// All real essential matrices consistent with five correspondences.
pub fn five_point(pairs: &[(NormalizedPoint, NormalizedPoint)]) -> Vec<EssentialMatrix> {
    if pairs.len() != 5 {
        return Vec::new();
    }
    let mut q = DMatrix::<f64>::zeros(9, 9);
    for (row, (pa, pb)) in pairs.iter().enumerate() {
        let (xa, xb) = (pa.homogeneous(), pb.homogeneous());
        for r in 0..3 {
            for c in 0..3 {
                q[(row, r * 3 + c)] = xb[r] * xa[c];
            }
        }
    }
    let svd = q.svd(false, true);
    let Some(v_t) = svd.v_t else { return Vec::new() };
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let largest = svd.singular_values[order[8]];
    if largest <= 0.0 || svd.singular_values[order[4]] < 1e-10 * largest {
        return Vec::new();
    }
    let null: Vec<Matrix3<f64>> = order[..4]
        .iter()
        .map(|&i| {
            let row = v_t.row(i);
            Matrix3::from_fn(|r, c| row[r * 3 + c])
        })
        .collect();
    let basis = [null[0], null[1], null[2], null[3]];

    let mut m = constraint_matrix(&basis);
    if gauss_jordan(&mut m).is_none() {
        return Vec::new();
    }
    let b = m.fixed_view::<10, 10>(0, 10).into_owned();

    // Action of multiplication by x on the quotient basis.
    let mut action = SMatrix::<f64, 10, 10>::zeros();
    let reduced = [(0, 0), (1, 1), (2, 2), (3, 4), (4, 5), (5, 7)];
    for (basis_row, cubic_row) in reduced {
        for c in 0..10 {
            action[(basis_row, c)] = -b[(cubic_row, c)];
        }
    }
    // x·x = x², x·y = xy, x·z = xz, x·1 = x
    action[(6, 0)] = 1.0;
    action[(7, 1)] = 1.0;
    action[(8, 3)] = 1.0;
    action[(9, 6)] = 1.0;

    let mut solutions = Vec::new();
    let mut seen: Vec<f64> = Vec::new();
    for lambda in action.complex_eigenvalues().iter() {
        if lambda.im.abs() > 1e-8 * (1.0 + lambda.re.abs()) {
            continue;
        }
        let x = lambda.re;
        if seen.iter().any(|s| (s - x).abs() < 1e-12 * (1.0 + x.abs())) {
            continue;
        }
        seen.push(x);
        let shifted = action - SMatrix::<f64, 10, 10>::identity() * x;
        let svd = shifted.svd(false, true);
        let Some(vt) = svd.v_t else { continue };
        let vec = vt.row(svd.singular_values.imin());
        if vec[9].abs() < 1e-12 {
            continue;
        }
        let (sx, sy, sz) = (vec[6] / vec[9], vec[7] / vec[9], vec[8] / vec[9]);
        let e = basis[0] * sx + basis[1] * sy + basis[2] * sz + basis[3];
        if let Ok(e) = EssentialMatrix::from_matrix(&e) {
            solutions.push(e);
        }
    }
    solutions
}
