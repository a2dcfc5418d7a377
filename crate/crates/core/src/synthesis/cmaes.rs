//! Minimal (mu/mu_w, lambda) covariance matrix adaptation evolution
//! strategy, specialized to the low-dimensional searches this crate runs
//! (the eigendecomposition is refreshed every generation, which is cheap
//! at dimension 3).
//!
//! The strategy is orientation-agnostic: `tell` receives the candidate
//! indices ranked best-first, so callers can maximize or minimize.

use crate::mathkit::{sym_eigen, Matrix, Vector};
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct CmaEs {
    dim: usize,
    lambda: usize,
    mu: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,
    mean: Vector,
    sigma: f64,
    cov: Matrix,
    p_sigma: Vector,
    p_c: Vector,
    generation: usize,
    // Eigen factors of `cov` from the latest `ask`: cov = B diag(d^2) B^T.
    eig_b: Matrix,
    eig_d: Vec<f64>,
    // Step offsets y_k of the pending population (x_k = mean + sigma y_k).
    pending: Vec<Vector>,
}

impl CmaEs {
    /// Standard strategy constants for the given population shape
    /// (Hansen's defaults with positive recombination weights only).
    pub fn new(mean: Vector, sigma0: f64, lambda: usize, mu: usize) -> Self {
        assert!(lambda >= 2, "population must have at least two candidates");
        assert!((1..=lambda).contains(&mu), "parent count must be in 1..=lambda");
        assert!(sigma0 > 0.0, "initial step size must be positive");
        let dim = mean.len();
        let n = dim as f64;

        let raw: Vec<f64> = (0..mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - ((i + 1) as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let c_1 = 2.0 / ((n + 1.3) * (n + 1.3) + mu_eff);
        let c_mu = (1.0 - c_1)
            .min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0) * (n + 2.0) + mu_eff));
        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));

        Self {
            dim,
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
            mean,
            sigma: sigma0,
            cov: Matrix::identity(dim),
            p_sigma: Vector::zeros(dim),
            p_c: Vector::zeros(dim),
            generation: 0,
            eig_b: Matrix::identity(dim),
            eig_d: vec![1.0; dim],
            pending: Vec::new(),
        }
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn population(&self) -> usize {
        self.lambda
    }

    /// Sample the next population. Candidate `k` is `mean + sigma * y_k`
    /// with `y_k = B diag(d) z_k`, `z_k` standard normal.
    pub fn ask<R: Rng>(&mut self, rng: &mut R) -> Vec<Vector> {
        self.refresh_eigen();
        self.pending.clear();
        let mut out = Vec::with_capacity(self.lambda);
        for _ in 0..self.lambda {
            let mut scaled = Vector::zeros(self.dim);
            for j in 0..self.dim {
                let z: f64 = rng.sample(StandardNormal);
                scaled[j] = self.eig_d[j] * z;
            }
            let y = self.eig_b.matvec(&scaled).expect("square factor");
            let mut x = self.mean.clone();
            x.axpy(self.sigma, &y);
            self.pending.push(y);
            out.push(x);
        }
        out
    }

    /// Update the strategy state from a ranking of the last `ask`:
    /// `order[0]` is the index of the best candidate. Only the first `mu`
    /// entries are used.
    pub fn tell(&mut self, order: &[usize]) {
        assert_eq!(
            order.len(),
            self.lambda,
            "ranking must cover the whole population"
        );
        assert!(
            !self.pending.is_empty(),
            "tell must follow an ask on the same strategy"
        );

        let mut y_w = Vector::zeros(self.dim);
        for (i, &idx) in order.iter().take(self.mu).enumerate() {
            y_w.axpy(self.weights[i], &self.pending[idx]);
        }
        self.mean.axpy(self.sigma, &y_w);
        self.generation += 1;

        // p_sigma update in the isotropic frame: C^{-1/2} y_w.
        let bt_y = self.eig_b.tr_matvec(&y_w).expect("square factor");
        let mut whitened = Vector::zeros(self.dim);
        for j in 0..self.dim {
            whitened[j] = bt_y[j] / self.eig_d[j];
        }
        let c_inv_sqrt_yw = self.eig_b.matvec(&whitened).expect("square factor");
        let decay = 1.0 - self.c_sigma;
        let boost = (self.c_sigma * (2.0 - self.c_sigma) * self.mu_eff).sqrt();
        self.p_sigma = {
            let mut p = self.p_sigma.scaled(decay);
            p.axpy(boost, &c_inv_sqrt_yw);
            p
        };

        let expected_len = (1.0 - (1.0 - self.c_sigma).powi(2 * self.generation as i32)).sqrt();
        let h_sigma = if self.p_sigma.norm() / expected_len
            < (1.4 + 2.0 / (self.dim as f64 + 1.0)) * self.chi_n
        {
            1.0
        } else {
            0.0
        };
        let decay_c = 1.0 - self.c_c;
        let boost_c = (self.c_c * (2.0 - self.c_c) * self.mu_eff).sqrt();
        self.p_c = {
            let mut p = self.p_c.scaled(decay_c);
            p.axpy(h_sigma * boost_c, &y_w);
            p
        };

        // Covariance: decay, rank-one from p_c (with the stall correction
        // when h_sigma gated the path update), rank-mu from the parents.
        let stall = (1.0 - h_sigma) * self.c_c * (2.0 - self.c_c);
        let mut cov = self.cov.scaled(1.0 - self.c_1 - self.c_mu + self.c_1 * stall);
        let rank_one = Matrix::outer(&self.p_c, &self.p_c);
        cov = cov.add(&rank_one.scaled(self.c_1));
        for (i, &idx) in order.iter().take(self.mu).enumerate() {
            let y = &self.pending[idx];
            cov = cov.add(&Matrix::outer(y, y).scaled(self.c_mu * self.weights[i]));
        }
        self.cov = cov;

        self.sigma *=
            ((self.c_sigma / self.d_sigma) * (self.p_sigma.norm() / self.chi_n - 1.0)).exp();
        self.pending.clear();
    }

    fn refresh_eigen(&mut self) {
        // Symmetrize against drift before factoring.
        let t = self.cov.transpose();
        self.cov = self.cov.add(&t).scaled(0.5);
        let (vals, vecs) = sym_eigen(&self.cov).expect("covariance stays symmetric");
        self.eig_b = vecs;
        self.eig_d = (0..self.dim).map(|j| vals[j].max(1e-30).sqrt()).collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sphere(x: &Vector) -> f64 {
        x.dot(x)
    }

    #[test]
    fn sphere_three_dim_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut es = CmaEs::new(Vector::new(vec![0.5, 0.5, 0.5]), 0.3, 8, 4);
        let mut best = f64::INFINITY;
        for _ in 0..200 {
            let xs = es.ask(&mut rng);
            let mut order: Vec<usize> = (0..xs.len()).collect();
            order.sort_by(|&a, &b| sphere(&xs[a]).total_cmp(&sphere(&xs[b])));
            best = best.min(sphere(&xs[order[0]]));
            if best <= 1e-6 {
                return;
            }
            es.tell(&order);
        }
        panic!("sphere optimum not reached: best {best:.3e}");
    }

    #[test]
    fn deterministic_given_seed() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut es = CmaEs::new(Vector::zeros(3), 0.3, 8, 4);
            for _ in 0..5 {
                let xs = es.ask(&mut rng);
                let mut order: Vec<usize> = (0..xs.len()).collect();
                order.sort_by(|&a, &b| sphere(&xs[a]).total_cmp(&sphere(&xs[b])));
                es.tell(&order);
            }
            (es.mean().clone(), es.sigma())
        };
        let (m1, s1) = run();
        let (m2, s2) = run();
        assert_eq!(s1, s2);
        for j in 0..3 {
            assert_eq!(m1[j], m2[j]);
        }
    }

    #[test]
    fn shifted_sphere_recenters_mean() {
        let target = Vector::new(vec![1.0, -2.0, 0.5]);
        let f = |x: &Vector| {
            let d = x.sub(&target);
            d.dot(&d)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut es = CmaEs::new(Vector::zeros(3), 0.5, 8, 4);
        for _ in 0..150 {
            let xs = es.ask(&mut rng);
            let mut order: Vec<usize> = (0..xs.len()).collect();
            order.sort_by(|&a, &b| f(&xs[a]).total_cmp(&f(&xs[b])));
            es.tell(&order);
        }
        let err = es.mean().sub(&target).norm();
        assert!(err < 1e-3, "mean {:?} missed target ({err:.3e})", es.mean());
    }
}
