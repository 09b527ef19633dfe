use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;

/// Compare analytic gradients against central finite differences on a
/// random subsample of parameter coordinates. Returns the maximum
/// relative error, with the difference measured against
/// `max(|fd| + |analytic|, 1e-4)` to keep near-zero coordinates from
/// dominating.
pub fn finite_difference_check<F>(
    value_fn: F,
    params: &[Tensor],
    analytic: &[Tensor],
    eps: f64,
    n_coords: usize,
    seed: u64,
) -> f64
where
    F: Fn(&[Tensor]) -> f64,
{
    assert_eq!(params.len(), analytic.len());
    let total: usize = params.iter().map(|p| p.numel()).sum();
    assert!(total > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel = 0.0f64;
    let n = n_coords.min(total);
    let mut work: Vec<Tensor> = params.to_vec();
    for _ in 0..n {
        let mut flat = rng.gen_range(0..total);
        let mut pi = 0;
        while flat >= work[pi].numel() {
            flat -= work[pi].numel();
            pi += 1;
        }
        let orig = work[pi].data[flat];
        work[pi].data[flat] = orig + eps;
        let up = value_fn(&work);
        work[pi].data[flat] = orig - eps;
        let down = value_fn(&work);
        work[pi].data[flat] = orig;
        let fd = (up - down) / (2.0 * eps);
        let an = analytic[pi].data[flat];
        let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-4);
        max_rel = max_rel.max(rel);
    }
    max_rel
}

/// Like [`finite_difference_check`], but skips coordinates where the
/// function is locally nonsmooth. A central difference on a smooth
/// function agrees with its half-step estimate to O(eps^2); crossing a
/// LeakyReLU kink or a max-pool tie makes the two estimates disagree by
/// an amount comparable to the gradient jump, which is what the
/// smoothness test detects. Returns (max relative error, coordinates
/// actually checked).
pub fn finite_difference_check_smooth<F>(
    value_fn: F,
    params: &[Tensor],
    analytic: &[Tensor],
    eps: f64,
    n_coords: usize,
    seed: u64,
) -> (f64, usize)
where
    F: Fn(&[Tensor]) -> f64,
{
    assert_eq!(params.len(), analytic.len());
    let total: usize = params.iter().map(|p| p.numel()).sum();
    assert!(total > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    let n = n_coords.min(total);
    let mut work: Vec<Tensor> = params.to_vec();
    for _ in 0..n {
        let mut flat = rng.gen_range(0..total);
        let mut pi = 0;
        while flat >= work[pi].numel() {
            flat -= work[pi].numel();
            pi += 1;
        }
        let orig = work[pi].data[flat];
        let mut fd_at = |e: f64| {
            work[pi].data[flat] = orig + e;
            let up = value_fn(&work);
            work[pi].data[flat] = orig - e;
            let down = value_fn(&work);
            work[pi].data[flat] = orig;
            (up - down) / (2.0 * e)
        };
        let fd = fd_at(eps);
        let fd_half = fd_at(eps / 2.0);
        let scale = (fd.abs() + fd_half.abs()).max(1e-4);
        if (fd - fd_half).abs() > 1e-3 * scale {
            continue; // straddles a kink: the difference quotient is unusable
        }
        checked += 1;
        // Richardson extrapolation cancels the O(eps^2) truncation term
        let fd = (4.0 * fd_half - fd) / 3.0;
        let an = analytic[pi].data[flat];
        let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-4);
        max_rel = max_rel.max(rel);
    }
    (max_rel, checked)
}
