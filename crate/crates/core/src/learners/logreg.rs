use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Logistic {
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Logistic {
    pub fn score(&self, row: &[f64]) -> f64 {
        let z: f64 = self.bias + self.weights.iter().zip(row).map(|(w, x)| w * x).sum::<f64>();
        sigmoid(z)
    }
}

/// Full-batch gradient descent on mean log-loss from zero initialisation.
pub fn fit_logistic(x: &FeatureMatrix, y: &[u8], epochs: usize, lr: f64) -> Logistic {
    let (n, d) = (x.n_rows(), x.n_cols());
    let mut model = Logistic {
        weights: vec![0.0; d],
        bias: 0.0,
    };
    let mut grad = vec![0.0; d];
    for _ in 0..epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for r in 0..n {
            let row = x.row(r);
            let err = model.score(row) - y[r] as f64;
            for (g, xi) in grad.iter_mut().zip(row) {
                *g += err * xi;
            }
            grad_b += err;
        }
        let step = lr / n as f64;
        for (w, g) in model.weights.iter_mut().zip(&grad) {
            *w -= step * g;
        }
        model.bias -= step * grad_b;
    }
    model
}
