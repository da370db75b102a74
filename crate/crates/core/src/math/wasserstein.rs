use super::ParticleCloud;
use crate::error::{Error, Result};

/// Largest cloud accepted by the exact assignment solver in `d > 1`.
pub const MAX_ASSIGNMENT_SIZE: usize = 512;

/// Exact `q`-Wasserstein distance between equal-weight clouds.
///
/// In one dimension the monotone coupling is optimal and the distance is the
/// `L^q` distance of the quantile functions, which handles any pair of sizes.
/// In higher dimension the clouds must have equal size and the optimum is a
/// minimum-cost assignment.
pub fn wasserstein(a: &ParticleCloud, b: &ParticleCloud, q: f64) -> Result<f64> {
    if !(q >= 1.0) {
        return Err(Error::Input(format!("order q must be >= 1, got {q}")));
    }
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    if a.dim() == 1 {
        return Ok(quantile_distance(&a.sorted_1d()?, &b.sorted_1d()?, q));
    }
    if a.len() != b.len() {
        return Err(Error::Unsupported(format!(
            "unequal cloud sizes {} and {} in d = {}",
            a.len(),
            b.len(),
            a.dim()
        )));
    }
    let m = a.len();
    if m > MAX_ASSIGNMENT_SIZE {
        return Err(Error::Unsupported(format!(
            "assignment size {m} exceeds {MAX_ASSIGNMENT_SIZE}"
        )));
    }
    let mut cost = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            let d2: f64 = a
                .point(i)
                .iter()
                .zip(b.point(j))
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            cost[i * m + j] = d2.sqrt().powf(q);
        }
    }
    let (total, _) = min_cost_assignment(&cost, m);
    Ok((total.max(0.0) / m as f64).powf(1.0 / q))
}

/// `(int_0^1 |F_a^{-1} - F_b^{-1}|^q)^{1/q}` for sorted samples.
fn quantile_distance(a: &[f64], b: &[f64], q: f64) -> f64 {
    let (ma, mb) = (a.len(), b.len());
    let mut total = 0.0;
    if ma == mb {
        for (x, y) in a.iter().zip(b) {
            total += (x - y).abs().powf(q);
        }
        return (total / ma as f64).powf(1.0 / q);
    }
    // Breakpoints i/ma and j/mb compared exactly as i*mb vs j*ma.
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = 0.0;
    while i < ma && j < mb {
        let (ni, nj) = ((i + 1) * mb, (j + 1) * ma);
        let next = if ni <= nj {
            (i + 1) as f64 / ma as f64
        } else {
            (j + 1) as f64 / mb as f64
        };
        total += (next - prev) * (a[i] - b[j]).abs().powf(q);
        prev = next;
        if ni <= nj {
            i += 1;
        }
        if nj <= ni {
            j += 1;
        }
    }
    total.powf(1.0 / q)
}

/// Hungarian algorithm with potentials, `O(m^3)`. Returns the optimal cost and
/// the column assigned to each row.
pub fn min_cost_assignment(cost: &[f64], m: usize) -> (f64, Vec<usize>) {
    // 1-based arrays with a sentinel column 0
    let mut u = vec![0.0; m + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=m {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; m];
    for j in 1..=m {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    let total = (0..m).map(|i| cost[i * m + assign[i]]).sum();
    (total, assign)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c1(v: &[f64]) -> ParticleCloud {
        ParticleCloud::from_1d(v.to_vec()).unwrap()
    }

    #[test]
    fn two_diracs() {
        for q in [1.0, 2.0, 3.5] {
            let d = wasserstein(&c1(&[1.5]), &c1(&[-2.0]), q).unwrap();
            assert!((d - 3.5).abs() < 1e-14);
        }
    }

    #[test]
    fn identical_is_zero() {
        let a = c1(&[0.3, -1.0, 2.0]);
        assert_eq!(wasserstein(&a, &a, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn two_point_shift() {
        let d = wasserstein(&c1(&[0.0, 1.0]), &c1(&[1.0, 2.0]), 1.0).unwrap();
        assert!((d - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unequal_sizes_in_1d() {
        // {0} vs {0, 1}: half the mass travels distance 1
        let d = wasserstein(&c1(&[0.0]), &c1(&[0.0, 1.0]), 1.0).unwrap();
        assert!((d - 0.5).abs() < 1e-15);
        let d2 = wasserstein(&c1(&[0.0, 1.0, 2.0]), &c1(&[0.0, 2.0]), 2.0).unwrap();
        // quantiles: [0,1/3): 0 vs 0; [1/3,1/2): 1 vs 0; [1/2,2/3): 1 vs 2; [2/3,1): 2 vs 2
        assert!((d2 - (1.0f64 / 3.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn unequal_sizes_in_2d_refused() {
        let a = ParticleCloud::new(vec![0.0, 0.0], 2).unwrap();
        let b = ParticleCloud::new(vec![0.0, 0.0, 1.0, 1.0], 2).unwrap();
        assert!(matches!(
            wasserstein(&a, &b, 2.0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn order_below_one_refused() {
        assert!(matches!(
            wasserstein(&c1(&[0.0]), &c1(&[1.0]), 0.5),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn assignment_on_known_matrix() {
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let (total, assign) = min_cost_assignment(&cost, 3);
        assert_eq!(total, 5.0);
        assert_eq!(assign, vec![1, 0, 2]);
    }
}
