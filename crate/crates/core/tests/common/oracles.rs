use nalgebra::{DMatrix, DVector};
use rce_core::planner::{LinearStep, PlanConfig};
use rce_core::Tensor;

use super::LinearStub;

pub fn scalar_cfg(q: f64, r: f64) -> PlanConfig {
    PlanConfig {
        horizon: 0,
        ilqr_iters: 1,
        q: Tensor::matrix(1, 1, vec![q]),
        r: Tensor::matrix(1, 1, vec![r]),
        action_clip: 1e6,
        levenberg_mu0: 1e-6,
        line_search_steps: 7,
    }
}

/// Scalar problem around the zero-action reference from `z0`.
pub fn scalar_problem(a: f64, b: f64, z0: f64, h: usize) -> (Vec<LinearStep>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let steps = vec![
        LinearStep {
            a: Tensor::matrix(1, 1, vec![a]),
            b: Tensor::matrix(1, 1, vec![b]),
            offset: vec![0.0],
        };
        h
    ];
    let mut z = vec![vec![z0]];
    for t in 0..h {
        z.push(vec![a * z[t][0]]);
    }
    (steps, z, vec![vec![0.0]; h])
}

/// Exact scalar Riccati recursion with the cost on post-action states:
/// returns the feedback gains and the optimal cost-to-go coefficient.
pub fn scalar_riccati(a: f64, b: f64, q: f64, r: f64, h: usize) -> (Vec<f64>, f64) {
    let mut p = q;
    let mut gains = vec![0.0; h];
    for t in (0..h).rev() {
        let denom = r + b * b * p;
        gains[t] = -(b * p * a) / denom;
        p = a * a * p - (a * b * p) * (a * b * p) / denom;
        if t >= 1 {
            p += q;
        }
    }
    (gains, p)
}

/// Value iteration on a state grid with linear interpolation and an
/// exhaustive search over a 2001-point action grid.
pub fn dp_cost(a: f64, b: f64, q: f64, r: f64, h: usize, z0: f64) -> f64 {
    let (lo, hi, ns) = (-6.0, 6.0, 2401);
    let dz = (hi - lo) / (ns - 1) as f64;
    let actions: Vec<f64> = (0..2001).map(|i| -4.0 + 8.0 * i as f64 / 2000.0).collect();
    let interp = |v: &[f64], z: f64| -> f64 {
        let x = ((z - lo) / dz).clamp(0.0, (ns - 1) as f64 - 1e-9);
        let i = x.floor() as usize;
        let f = x - i as f64;
        v[i] * (1.0 - f) + v[i + 1] * f
    };
    let stage = |v: &[f64], z: f64| -> f64 {
        actions
            .iter()
            .map(|&u| {
                let zn = a * z + b * u;
                r * u * u + q * zn * zn + interp(v, zn)
            })
            .fold(f64::INFINITY, f64::min)
    };
    let mut v = vec![0.0; ns];
    for _ in 1..h {
        v = (0..ns).map(|i| stage(&v, lo + i as f64 * dz)).collect();
    }
    stage(&v, z0)
}

/// Minimizes the quadratic cost of a globally linear system in closed form
/// by stacking all actions into one least-squares problem.
pub fn batch_lqr_cost(stub: &LinearStub, z0: &[f64], goal: &[f64], h: usize, q: f64, r: f64) -> f64 {
    let a = DMatrix::from_row_slice(2, 2, stub.dynamics.a().data());
    let b = DMatrix::from_row_slice(2, 2, stub.dynamics.b().data());
    let c = DVector::from_column_slice(stub.dynamics.c());
    let n_u = 2;
    // z_{t+1} = F_t + G_t U
    let mut f = DVector::from_column_slice(z0);
    let mut g = DMatrix::<f64>::zeros(2, h * n_u);
    let mut hess = DMatrix::<f64>::identity(h * n_u, h * n_u) * r;
    let mut grad = DVector::<f64>::zeros(h * n_u);
    let goal = DVector::from_column_slice(goal);
    let mut fs = Vec::new();
    let mut gs = Vec::new();
    for t in 0..h {
        f = &a * &f + &c;
        g = &a * &g;
        g.view_mut((0, t * n_u), (2, n_u)).copy_from(&b);
        hess += g.transpose() * &g * q;
        grad += g.transpose() * (&f - &goal) * q;
        fs.push(f.clone());
        gs.push(g.clone());
    }
    let u = -hess.clone().lu().solve(&grad).unwrap();
    let mut cost = r * u.norm_squared();
    for t in 0..h {
        let e = &fs[t] + &gs[t] * &u - &goal;
        cost += q * e.norm_squared();
    }
    cost
}
