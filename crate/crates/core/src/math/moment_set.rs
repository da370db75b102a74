use rand::Rng;
use serde::Serialize;

/// Closed set of attainable feature moments.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum MomentSet {
    /// `[0, inf)`.
    HalfLine,
    /// `{1} x {(z1, z2) : z2 >= z1^2 / 2}`.
    ParabolicSlice,
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl MomentSet {
    pub fn dim(&self) -> usize {
        match self {
            MomentSet::HalfLine => 1,
            MomentSet::ParabolicSlice => 3,
            MomentSet::Box { lo, .. } => lo.len(),
        }
    }

    pub fn contains(&self, z: &[f64], tol: f64) -> bool {
        if z.len() != self.dim() || z.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self {
            MomentSet::HalfLine => z[0] >= -tol,
            MomentSet::ParabolicSlice => {
                (z[0] - 1.0).abs() <= tol && z[2] - 0.5 * z[1] * z[1] >= -tol
            }
            MomentSet::Box { lo, hi } => z
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (a, b))| *v >= a - tol && *v <= b + tol),
        }
    }

    /// Distance-like gap to the boundary: exact for the half-line and box, a
    /// first-order (normalized level-set) estimate for the parabola.
    pub fn boundary_distance(&self, z: &[f64]) -> f64 {
        match self {
            MomentSet::HalfLine => z[0].abs(),
            MomentSet::ParabolicSlice => {
                let g = z[2] - 0.5 * z[1] * z[1];
                g.abs() / (1.0 + z[1] * z[1]).sqrt()
            }
            MomentSet::Box { lo, hi } => z
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (a, b))| (v - a).abs().min((b - v).abs()))
                .fold(f64::INFINITY, f64::min),
        }
    }

    pub fn on_boundary(&self, z: &[f64], tol: f64) -> bool {
        self.contains(z, tol) && self.boundary_distance(z) <= tol
    }

    /// Unit outward normal at a boundary point.
    pub fn outward_normal(&self, z: &[f64]) -> Vec<f64> {
        match self {
            MomentSet::HalfLine => vec![-1.0],
            MomentSet::ParabolicSlice => {
                let n = (1.0 + z[1] * z[1]).sqrt();
                vec![0.0, z[1] / n, -1.0 / n]
            }
            MomentSet::Box { lo, hi } => {
                let mut best = (f64::INFINITY, 0usize, 0.0);
                for (i, v) in z.iter().enumerate() {
                    let dl = (v - lo[i]).abs();
                    let dh = (hi[i] - v).abs();
                    if dl < best.0 {
                        best = (dl, i, -1.0);
                    }
                    if dh < best.0 {
                        best = (dh, i, 1.0);
                    }
                }
                let mut out = vec![0.0; z.len()];
                out[best.1] = best.2;
                out
            }
        }
    }

    /// Random member with free coordinates drawn from `[-r, r]`.
    pub fn sample<R: Rng>(&self, rng: &mut R, r: f64) -> Vec<f64> {
        match self {
            MomentSet::HalfLine => vec![rng.random_range(0.0..=r)],
            MomentSet::ParabolicSlice => {
                let z1 = rng.random_range(-r..=r);
                let gap = rng.random_range(0.0..=r);
                vec![1.0, z1, 0.5 * z1 * z1 + gap]
            }
            MomentSet::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(a, b)| rng.random_range(*a..=*b))
                .collect(),
        }
    }

    /// Random boundary point with free coordinates drawn from `[-r, r]`.
    pub fn sample_boundary<R: Rng>(&self, rng: &mut R, r: f64) -> Vec<f64> {
        match self {
            MomentSet::HalfLine => vec![0.0],
            MomentSet::ParabolicSlice => {
                let z1 = rng.random_range(-r..=r);
                vec![1.0, z1, 0.5 * z1 * z1]
            }
            MomentSet::Box { lo, hi } => {
                let mut z = self.sample(rng, r);
                let i = rng.random_range(0..lo.len());
                z[i] = if rng.random::<bool>() { lo[i] } else { hi[i] };
                z
            }
        }
    }
}
