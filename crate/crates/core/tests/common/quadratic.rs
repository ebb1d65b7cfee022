//! Convex quadratic test problem with exact proximal agents and a
//! closed-form MAP solution.

use ndarray::Array3;
use pcct::{DataAgent, Denoiser, PathlengthSinogram};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        x[r] = (b[r] - (r + 1..n).map(|k| a[r][k] * x[k]).sum::<f64>()) / a[r][r];
    }
    x
}

pub fn matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(x).map(|(u, v)| u * v).sum())
        .collect()
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    let g: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|k| g[k][i] * g[k][j]).sum::<f64>() + if i == j { 0.5 } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Exact proximal map of `½ (x − c)ᵗ A (x − c)` with strength σ.
pub struct QuadraticProx {
    pub a: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    pub sigma: f64,
    shape: (usize, usize, usize),
}

impl QuadraticProx {
    fn prox(&self, v: &[f64]) -> Vec<f64> {
        let s2 = self.sigma * self.sigma;
        let mut m = self.a.clone();
        for (i, row) in m.iter_mut().enumerate() {
            row[i] += 1.0 / s2;
        }
        let rhs: Vec<f64> = matvec(&self.a, &self.c)
            .iter()
            .zip(v)
            .map(|(a, v)| a + v / s2)
            .collect();
        solve(m, rhs)
    }

    pub fn wrap(&self, x: Vec<f64>) -> PathlengthSinogram {
        PathlengthSinogram(Array3::from_shape_vec(self.shape, x).unwrap())
    }
}

impl DataAgent for QuadraticProx {
    fn apply_warm(&self, p: &PathlengthSinogram, _warm: &PathlengthSinogram) -> pcct::Result<PathlengthSinogram> {
        Ok(self.wrap(self.prox(p.as_slice())))
    }
}

impl Denoiser for QuadraticProx {
    fn denoise(&self, p: &PathlengthSinogram) -> pcct::Result<PathlengthSinogram> {
        Ok(self.wrap(self.prox(p.as_slice())))
    }
}

pub struct Problem {
    pub f: QuadraticProx,
    pub h: QuadraticProx,
    pub map: Vec<f64>,
}

pub fn quadratic_problem(seed: u64, sigma: f64) -> Problem {
    let shape = (2, 3, 2);
    let n = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = (random_spd(&mut rng, n), random_spd(&mut rng, n));
    let ca: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    let cb: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    // (A + B) x = A c_a + B c_b
    let sum: Vec<Vec<f64>> = a
        .iter()
        .zip(&b)
        .map(|(r, s)| r.iter().zip(s).map(|(u, v)| u + v).collect())
        .collect();
    let rhs: Vec<f64> = matvec(&a, &ca)
        .iter()
        .zip(matvec(&b, &cb))
        .map(|(u, v)| u + v)
        .collect();
    let map = solve(sum, rhs);
    Problem {
        f: QuadraticProx { a, c: ca, sigma, shape },
        h: QuadraticProx {
            a: b,
            c: cb,
            sigma,
            shape,
        },
        map,
    }
}
