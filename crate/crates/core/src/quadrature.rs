//! Gauss–Hermite rules for expectations under centered normal laws.

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights integrating against the standard normal density:
/// `E[g(Z)] ≈ Σ w_i g(x_i)`, exact for polynomials of degree `< 2·order`.
///
/// Nodes come out exactly antisymmetric (`x[order-1-i] == -x[i]`) and weights
/// symmetric, so odd integrands summed pairwise cancel exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub–Welsch on the Jacobi matrix of the probabilists' Hermite
    /// polynomials (off-diagonal `√k`).
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "Gauss–Hermite order must be positive");
        let mut jacobi = DMatrix::<f64>::zeros(order, order);
        for k in 1..order {
            let b = (k as f64).sqrt();
            jacobi[(k - 1, k)] = b;
            jacobi[(k, k - 1)] = b;
        }
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..order)
            .map(|i| {
                let v0 = eig.eigenvectors[(0, i)];
                (eig.eigenvalues[i], v0 * v0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut nodes = vec![0.0; order];
        let mut weights = vec![0.0; order];
        for i in 0..order.div_ceil(2) {
            let j = order - 1 - i;
            if i == j {
                nodes[i] = 0.0;
                weights[i] = pairs[i].1;
            } else {
                let x = 0.5 * (pairs[j].0 - pairs[i].0);
                let w = 0.5 * (pairs[i].1 + pairs[j].1);
                nodes[i] = -x;
                nodes[j] = x;
                weights[i] = w;
                weights[j] = w;
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// `E[g(σZ)]`.
    pub fn expect<F: Fn(f64) -> f64>(&self, sigma: f64, g: F) -> f64 {
        let m = self.order();
        let mut acc = 0.0;
        for i in 0..m / 2 {
            let x = sigma * self.nodes[m - 1 - i];
            acc += self.weights[i] * (g(x) + g(-x));
        }
        if m % 2 == 1 {
            acc += self.weights[m / 2] * g(0.0);
        }
        acc
    }
}
