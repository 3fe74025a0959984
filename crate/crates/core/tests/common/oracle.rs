//! Independent reference computations used by unit, integration and
//! acceptance tests. Nothing here calls the closed-form block algebra,
//! the backpropagation code or the network iteration of the library.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector, Vector3};

use super::dmn::mandel::{rotate_stiffness, EulerAngles};
use super::dmn::network::Network;

pub type M6 = SMatrix<f64, 6, 6>;
pub type V6 = SVector<f64, 6>;

const IN_PLANE: [usize; 3] = [0, 1, 3];
const NORMAL: [usize; 3] = [2, 4, 5];

/// Solves the 12-unknown two-phase interface problem for phase laws
/// `σʲ = Cʲ·εʲ + dʲ`: mixture of strains, continuity of in-plane strains and
/// of normal tractions. Returns the phase strains.
pub fn interface_solve(c1: &M6, d1: &V6, c2: &M6, d2: &V6, f: f64, eps_bar: &V6) -> (V6, V6) {
    let mut m = DMatrix::<f64>::zeros(12, 12);
    let mut rhs = DVector::<f64>::zeros(12);
    // traction rows scaled to order one
    let scale = 1.0 / (c1.norm() + c2.norm());
    for i in 0..6 {
        m[(i, i)] = 1.0 - f;
        m[(i, 6 + i)] = f;
        rhs[i] = eps_bar[i];
    }
    for (r, &c) in IN_PLANE.iter().enumerate() {
        m[(6 + r, c)] = 1.0;
        m[(6 + r, 6 + c)] = -1.0;
    }
    for (r, &row) in NORMAL.iter().enumerate() {
        for j in 0..6 {
            m[(9 + r, j)] = scale * c1[(row, j)];
            m[(9 + r, 6 + j)] = -scale * c2[(row, j)];
        }
        rhs[9 + r] = scale * (d2[row] - d1[row]);
    }
    let lu = m.clone().lu();
    let mut x = lu.solve(&rhs).expect("interface system singular");
    // iterative refinement
    for _ in 0..3 {
        let r = &rhs - &m * &x;
        x += lu.solve(&r).expect("interface system singular");
    }
    (
        V6::from_fn(|i, _| x[i]),
        V6::from_fn(|i, _| x[6 + i]),
    )
}

/// Concentration `A` and homogenized stiffness by probing the interface
/// solve with unit strains.
pub fn block_oracle(c1: &M6, c2: &M6, f: f64) -> (M6, M6) {
    let z = V6::zeros();
    let mut a = M6::zeros();
    let mut c = M6::zeros();
    for j in 0..6 {
        let mut e = V6::zeros();
        e[j] = 1.0;
        let (e1, e2) = interface_solve(c1, &z, c2, &z, f, &e);
        a.set_column(j, &e1);
        c.set_column(j, &((1.0 - f) * c1 * e1 + f * c2 * e2));
    }
    (a, c)
}

/// Affine block response `(C̄, dσ̄)` by probing with unit strains and zero.
pub fn affine_block_oracle(c1: &M6, d1: &V6, c2: &M6, d2: &V6, f: f64) -> (M6, V6) {
    let avg = |e: &V6| {
        let (e1, e2) = interface_solve(c1, d1, c2, d2, f, e);
        (1.0 - f) * (c1 * e1 + d1) + f * (c2 * e2 + d2)
    };
    let ds = avg(&V6::zeros());
    let mut c = M6::zeros();
    for j in 0..6 {
        let mut e = V6::zeros();
        e[j] = 1.0;
        c.set_column(j, &(avg(&e) - ds));
    }
    (c, ds)
}

fn node_weight(z: &[f64], n_layers: usize, layer: usize, k: usize) -> f64 {
    if layer == n_layers {
        z[k - 1].max(0.0)
    } else {
        node_weight(z, n_layers, layer + 1, 2 * k - 1) + node_weight(z, n_layers, layer + 1, 2 * k)
    }
}

fn node_stiffness(net: &Network, cf: &M6, cm: &M6, layer: usize, k: usize) -> M6 {
    let n = net.n_layers();
    let idx = (1usize << (layer - 1)) - 1 + (k - 1);
    let e = net.angles()[idx];
    let averaged = if layer == n {
        if k.is_multiple_of(2) {
            *cf
        } else {
            *cm
        }
    } else {
        let w1 = node_weight(net.z(), n, layer + 1, 2 * k - 1);
        let w2 = node_weight(net.z(), n, layer + 1, 2 * k);
        if w1 == 0.0 {
            node_stiffness(net, cf, cm, layer + 1, 2 * k)
        } else if w2 == 0.0 {
            node_stiffness(net, cf, cm, layer + 1, 2 * k - 1)
        } else {
            let c1 = node_stiffness(net, cf, cm, layer + 1, 2 * k - 1);
            let c2 = node_stiffness(net, cf, cm, layer + 1, 2 * k);
            let (a, _) = block_oracle(&c1, &c2, w2 / (w1 + w2));
            c2 - (w1 / (w1 + w2)) * (c2 - c1) * a
        }
    };
    rotate_stiffness(&averaged, &e)
}

/// Straight recursive evaluation of the network, node by node.
pub fn reference_forward(net: &Network, cf: &M6, cm: &M6) -> M6 {
    node_stiffness(net, cf, cm, 1, 1)
}

/// Cyclic Jacobi eigen-decomposition of a symmetric 3×3 matrix. Returns
/// eigenvalues in descending order with matching unit eigenvectors.
pub fn jacobi_eigen(a: &Matrix3<f64>) -> ([f64; 3], [Vector3<f64>; 3]) {
    let mut m = *a;
    let mut v = Matrix3::<f64>::identity();
    for _sweep in 0..100 {
        let off = m[(0, 1)].powi(2) + m[(0, 2)].powi(2) + m[(1, 2)].powi(2);
        if off < 1e-40 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if m[(p, q)].abs() < 1e-300 {
                continue;
            }
            let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut j = Matrix3::<f64>::identity();
            j[(p, p)] = c;
            j[(q, q)] = c;
            j[(p, q)] = s;
            j[(q, p)] = -s;
            m = j.transpose() * m * j;
            v *= j;
        }
    }
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    (
        [m[(idx[0], idx[0])], m[(idx[1], idx[1])], m[(idx[2], idx[2])]],
        [
            v.column(idx[0]).into_owned(),
            v.column(idx[1]).into_owned(),
            v.column(idx[2]).into_owned(),
        ],
    )
}

/// Central finite difference of a scalar function of a parameter vector.
pub fn central_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], i: usize, step: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += step;
    xm[i] -= step;
    (f(&xp) - f(&xm)) / (2.0 * step)
}

/// Euler angles that map e1 onto `d` (used to build aligned test states).
pub fn angles_aligning_x_with(d: &Vector3<f64>) -> EulerAngles {
    let d = d.normalize();
    let helper = if d.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
    let e2 = helper.cross(&d).normalize();
    let e3 = d.cross(&e2);
    let q = Matrix3::from_columns(&[d, e2, e3]);
    EulerAngles::from_matrix(&q)
}

/// One increment of a single rotated laminate with nonlinear phases, solved
/// directly for the two phase strains by Newton with a finite-difference
/// Jacobian. `rot` holds the 6×6 rotations of the block and of its two
/// phases (`ε_local = R·ε_parent`). Returns the macroscopic stress
/// increment and the committed phase responses.
pub fn laminate_step(
    phases: [&super::dmn::material::MaterialPoint; 2],
    rot: [&M6; 3],
    f: f64,
    deps: &V6,
) -> (V6, [super::dmn::material::MaterialResponse; 2]) {
    let eps_bar = rot[0] * deps;
    let stress = |x: &DVector<f64>| {
        let mut out = [V6::zeros(); 2];
        for j in 0..2 {
            let e = V6::from_fn(|i, _| x[6 * j + i]);
            let r = phases[j].update(&(rot[j + 1] * e)).expect("material update");
            out[j] = rot[j + 1].transpose() * r.dstress;
        }
        out
    };
    let residual = |x: &DVector<f64>| {
        let s = stress(x);
        let mut r = DVector::<f64>::zeros(12);
        for i in 0..6 {
            r[i] = (1.0 - f) * x[i] + f * x[6 + i] - eps_bar[i];
        }
        for (k, &c) in IN_PLANE.iter().enumerate() {
            r[6 + k] = x[c] - x[6 + c];
        }
        for (k, &c) in NORMAL.iter().enumerate() {
            r[9 + k] = (s[0][c] - s[1][c]) / 1000.0;
        }
        r
    };
    let mut x = DVector::<f64>::from_fn(12, |i, _| eps_bar[i % 6]);
    let scale = deps.norm().max(1e-300);
    for _ in 0..200 {
        let r = residual(&x);
        if r.norm() <= 1e-15 * scale.max(1.0) {
            break;
        }
        let h = 1e-8 * scale;
        let mut jac = DMatrix::<f64>::zeros(12, 12);
        for k in 0..12 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            jac.set_column(k, &((residual(&xp) - residual(&xm)) / (2.0 * h)));
        }
        let dx = jac.lu().solve(&r).expect("laminate Jacobian singular");
        x -= dx;
    }
    let s = stress(&x);
    let avg = (1.0 - f) * s[0] + f * s[1];
    let responses = [0, 1].map(|j| {
        let e = V6::from_fn(|i, _| x[6 * j + i]);
        phases[j].update(&(rot[j + 1] * e)).expect("material update")
    });
    (rot[0].transpose() * avg, responses)
}
