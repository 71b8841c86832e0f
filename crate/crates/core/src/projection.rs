//! Deterministic two-dimensional projection of an embedding for plotting.

use std::io::{self, Write};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::trainer::EmbeddingMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub labels: Vec<String>,
    pub coords: Vec<[f64; 2]>,
    /// Variance captured by each of the two axes.
    pub explained_variance: [f64; 2],
}

/// Principal components of the row vectors. Each axis is oriented so that
/// its largest-magnitude loading is positive.
pub fn pca_2d(e: &EmbeddingMatrix) -> Result<Projection> {
    let (n, d) = (e.len(), e.dim());
    if n < 2 {
        return Err(Error::param("projection needs at least two vectors"));
    }
    let data = DMatrix::from_row_slice(n, d, e.input());
    let mean = data.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| data[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut axes = [vec![0.0; d], vec![0.0; d]];
    let mut explained = [0.0; 2];
    for (slot, &c) in order.iter().take(2).enumerate() {
        let v = eig.eigenvectors.column(c);
        let lead = (0..d)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
            .expect("d >= 1");
        let sign = if v[lead] < 0.0 { -1.0 } else { 1.0 };
        axes[slot] = v.iter().map(|x| sign * x).collect();
        explained[slot] = eig.eigenvalues[c].max(0.0);
    }
    let coords = (0..n)
        .map(|i| {
            let row = centered.row(i);
            let project = |axis: &[f64]| row.iter().zip(axis).map(|(x, a)| x * a).sum::<f64>();
            [project(&axes[0]), project(&axes[1])]
        })
        .collect();
    Ok(Projection {
        labels: e.labels().to_vec(),
        coords,
        explained_variance: explained,
    })
}

impl Projection {
    pub fn write_csv<W: Write>(&self, kinds: Option<&[String]>, mut sink: W) -> io::Result<()> {
        match kinds {
            Some(_) => writeln!(sink, "label,kind,x,y")?,
            None => writeln!(sink, "label,x,y")?,
        }
        for (i, (l, [x, y])) in self.labels.iter().zip(&self.coords).enumerate() {
            match kinds {
                Some(k) => writeln!(sink, "{l},{},{x},{y}", k[i])?,
                None => writeln!(sink, "{l},{x},{y}")?,
            }
        }
        Ok(())
    }
}
