use nalgebra::{DMatrix, DVector};

/// Condition number of an eigenvector basis of `m` assembled from the given
/// real eigenvalues, or infinity when some eigenvalue cluster lacks a full
/// set of eigenvectors.
pub fn eigenvector_condition(m: &DMatrix<f64>, eigenvalues: &DVector<f64>) -> f64 {
    let n = m.nrows();
    let scale = m.amax().max(1.0);
    let mut lambdas: Vec<f64> = eigenvalues.iter().copied().collect();
    lambdas.sort_by(f64::total_cmp);

    let mut clusters: Vec<Vec<f64>> = Vec::new();
    for l in lambdas {
        match clusters.last_mut() {
            Some(c) if (l - c[c.len() - 1]).abs() <= 1e-9 * scale => c.push(l),
            _ => clusters.push(vec![l]),
        }
    }

    let mut basis = DMatrix::zeros(n, n);
    let mut col = 0;
    for cluster in clusters {
        let mean = cluster.iter().sum::<f64>() / cluster.len() as f64;
        let shifted = m - DMatrix::<f64>::identity(n, n) * mean;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.expect("requested V^T");
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
        for &k in order.iter().take(cluster.len()) {
            if svd.singular_values[k] > 1e-6 * scale {
                return f64::INFINITY;
            }
            let v = v_t.row(k).transpose();
            basis.set_column(col, &(&v / v.norm()));
            col += 1;
        }
    }
    let s = basis.singular_values();
    s.max() / s.min()
}
