//! Shared test helpers: deterministic random tensors and central
//! finite-difference gradient checks against the analytic backward passes.

use ndarray::{Array2, Array4};
use rand::Rng;
use rand_distr::StandardNormal;

use super::params::{GradStore, ParamStore};
use crate::rng::stream;

pub fn random4(seed: u64, dim: (usize, usize, usize, usize)) -> Array4<f64> {
    let mut rng = stream(seed);
    Array4::from_shape_simple_fn(dim, || rng.sample(StandardNormal))
}

pub fn random2(seed: u64, dim: (usize, usize)) -> Array2<f64> {
    let mut rng = stream(seed);
    Array2::from_shape_simple_fn(dim, || rng.sample(StandardNormal))
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Relative error with an absolute floor: central differences of the
/// squared-sum loss carry ~1e-9 of cancellation noise, which would dominate
/// the ratio for near-zero gradients and flag them spuriously.
fn grad_err(fd: f64, an: f64) -> f64 {
    (fd - an).abs() / fd.abs().max(an.abs()).max(1e-2)
}

/// Largest elementwise absolute difference between two equal-shaped arrays.
pub fn max_abs_diff<S1, S2, D>(a: &ndarray::ArrayBase<S1, D>, b: &ndarray::ArrayBase<S2, D>) -> f64
where
    S1: ndarray::Data<Elem = f64>,
    S2: ndarray::Data<Elem = f64>,
    D: ndarray::Dimension,
{
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Checks ∂(Σ y²)/∂θ for every element of the named parameters against
/// central differences. `forward` maps params to the output tensor;
/// `backward` must accumulate parameter gradients for the given output
/// gradient (2y for this loss).
pub fn fd_param_check<F, B>(ps: &ParamStore, names: &[&str], tol: f64, mut forward: F, mut backward: B)
where
    F: FnMut(&ParamStore) -> Array4<f64>,
    B: FnMut(&ParamStore, &Array4<f64>, &mut GradStore),
{
    let y = forward(ps);
    let gy = y.mapv(|v| 2.0 * v);
    let mut gs = GradStore::new();
    backward(ps, &gy, &mut gs);
    let mut p2 = ps.clone();
    let h = 1e-6;
    for name in names {
        let grad = gs.get(name).unwrap_or_else(|| panic!("no gradient accumulated for {name}")).clone();
        let len = grad.len();
        // Cap per-tensor probes to keep the quadratic FD cost bounded; a
        // fixed stride still touches every region of the tensor.
        let step = (len / 24).max(1);
        for idx in (0..len).step_by(step) {
            let orig = p2.get(name).as_slice().unwrap()[idx];
            p2.get_mut(name).as_slice_mut().unwrap()[idx] = orig + h;
            let up: f64 = forward(&p2).iter().map(|v| v * v).sum();
            p2.get_mut(name).as_slice_mut().unwrap()[idx] = orig - h;
            let down: f64 = forward(&p2).iter().map(|v| v * v).sum();
            p2.get_mut(name).as_slice_mut().unwrap()[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = grad.as_slice().unwrap()[idx];
            assert!(
                grad_err(fd, an) < tol,
                "{name}[{idx}]: analytic {an} vs fd {fd} (rel {})",
                grad_err(fd, an)
            );
        }
    }
}

/// Same loss, but checks the gradient w.r.t. a 4-d input tensor.
pub fn fd_input_check4<F, B>(ps: &ParamStore, x: &Array4<f64>, tol: f64, mut forward: F, mut backward: B)
where
    F: FnMut(&ParamStore, &Array4<f64>) -> Array4<f64>,
    B: FnMut(&ParamStore, &Array4<f64>, &Array4<f64>, &mut GradStore) -> Array4<f64>,
{
    let y = forward(ps, x);
    let gy = y.mapv(|v| 2.0 * v);
    let mut gs = GradStore::new();
    let gx = backward(ps, x, &gy, &mut gs);
    assert_eq!(gx.dim(), x.dim());
    let mut x2 = x.clone();
    let h = 1e-6;
    let len = x.len();
    let step = (len / 24).max(1);
    for idx in (0..len).step_by(step) {
        let orig = x2.as_slice().unwrap()[idx];
        x2.as_slice_mut().unwrap()[idx] = orig + h;
        let up: f64 = forward(ps, &x2).iter().map(|v| v * v).sum();
        x2.as_slice_mut().unwrap()[idx] = orig - h;
        let down: f64 = forward(ps, &x2).iter().map(|v| v * v).sum();
        x2.as_slice_mut().unwrap()[idx] = orig;
        let fd = (up - down) / (2.0 * h);
        let an = gx.as_slice().unwrap()[idx];
        assert!(
            grad_err(fd, an) < tol,
            "x[{idx}]: analytic {an} vs fd {fd} (rel {})",
            grad_err(fd, an)
        );
    }
}
