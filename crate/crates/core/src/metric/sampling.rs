use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geodesic::{normalize_energy, pairings, Covector};
use crate::structure::Structure;

/// Pairings below this are treated as a degenerate (H = 0) direction.
const DEGENERATE_PAIRING: f64 = 1e-12;

/// Seeded source of initial covectors on the level set `{H = ½}` over a
/// fixed base point.
#[derive(Debug, Clone)]
pub struct CovectorSampler {
    rng: ChaCha8Rng,
}

impl CovectorSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn gaussian(&mut self, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| StandardNormal.sample(&mut self.rng))
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        use rand::Rng;
        self.rng.random_range(lo..hi)
    }

    /// Gaussian `ξ` rescaled so that `H = ½`; draws whose pairings with
    /// every field vanish are rejected.
    pub fn sample(&mut self, s: &Structure, x: &DVector<f64>) -> Result<Covector> {
        for _ in 0..1000 {
            let xi = self.gaussian(s.dim());
            let lam = Covector::new(x.clone(), xi)?;
            if pairings(s, &lam).iter().all(|p| p.abs() < DEGENERATE_PAIRING) {
                continue;
            }
            return normalize_energy(s, &lam);
        }
        Err(Error::InvalidParameter("distribution vanishes at the base point".into()))
    }
}

/// Deterministic covector grid on `{H = ½}`: a Fibonacci lattice of
/// directions in `ξ`-space (equally spaced angles when `n = 2`), each
/// normalised; degenerate directions are skipped.
pub fn covector_grid(s: &Structure, x: &DVector<f64>, count: usize) -> Vec<Covector> {
    let n = s.dim();
    let directions: Vec<DVector<f64>> = match n {
        1 => vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)],
        2 => (0..count)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
                DVector::from_row_slice(&[a.cos(), a.sin()])
            })
            .collect(),
        3 => fibonacci_sphere(count),
        _ => {
            let mut sampler = CovectorSampler::new(count as u64);
            (0..count).map(|_| sampler.gaussian(n).normalize()).collect()
        }
    };
    directions
        .into_iter()
        .filter_map(|xi| {
            let lam = Covector { x: x.clone(), xi };
            if pairings(s, &lam).iter().all(|p| p.abs() < DEGENERATE_PAIRING) {
                return None;
            }
            normalize_energy(s, &lam).ok()
        })
        .collect()
}

/// `count` nearly uniform unit vectors in `R³`.
pub fn fibonacci_sphere(count: usize) -> Vec<DVector<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / count as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let a = golden * i as f64;
            DVector::from_row_slice(&[r * a.cos(), r * a.sin(), z])
        })
        .collect()
}
