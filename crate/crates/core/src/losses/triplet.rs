use crate::error::{Error, Result};
use crate::numerics::DenseArray;

fn rows(e: &DenseArray) -> Result<(usize, usize)> {
    match *e.shape() {
        [n, d] => Ok((n, d)),
        _ => Err(Error::Dimension(format!("expected [N, D] embeddings, got {:?}", e.shape()))),
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Euclidean distance matrix of the rows of `e`.
pub fn pairwise_distances(e: &DenseArray) -> Result<DenseArray> {
    let (n, d) = rows(e)?;
    let x = e.data();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let dist = euclid(&x[i * d..(i + 1) * d], &x[j * d..(j + 1) * d]);
            out[i * n + j] = dist;
            out[j * n + i] = dist;
        }
    }
    DenseArray::new([n, n], out)
}

/// Every label at least twice and at least two distinct labels.
pub(crate) fn check_composition(labels: &[usize]) -> Result<()> {
    let mut seen: Vec<(usize, usize)> = Vec::new();
    for &l in labels {
        match seen.iter_mut().find(|(k, _)| *k == l) {
            Some((_, c)) => *c += 1,
            None => seen.push((l, 1)),
        }
    }
    if seen.len() < 2 {
        return Err(Error::BatchComposition(format!(
            "batch needs at least two identities, got {}",
            seen.len()
        )));
    }
    if let Some((l, _)) = seen.iter().find(|(_, c)| *c < 2) {
        return Err(Error::BatchComposition(format!("identity {l} has a single sample in the batch")));
    }
    Ok(())
}

/// Hardest positive (self excluded) and hardest negative of every anchor.
/// Ties keep the lowest index.
fn mine(dist: &[f64], labels: &[usize]) -> Vec<(usize, usize)> {
    let n = labels.len();
    (0..n)
        .map(|a| {
            let row = &dist[a * n..(a + 1) * n];
            let mut p = None::<usize>;
            let mut q = None::<usize>;
            for j in 0..n {
                if j == a {
                    continue;
                }
                if labels[j] == labels[a] {
                    if p.is_none_or(|p| row[j] > row[p]) {
                        p = Some(j);
                    }
                } else if q.is_none_or(|q| row[j] < row[q]) {
                    q = Some(j);
                }
            }
            (p.expect("composition checked"), q.expect("composition checked"))
        })
        .collect()
}

/// Mean over anchors of `max(0, margin + D(a, p*) - D(a, n*))`.
pub fn batch_hard_triplet(e: &DenseArray, labels: &[usize], margin: f64) -> Result<f64> {
    batch_hard_triplet_grad(e, labels, margin).map(|(l, _)| l)
}

/// Loss and `dL/dE`. A zero distance contributes no gradient.
pub fn batch_hard_triplet_grad(e: &DenseArray, labels: &[usize], margin: f64) -> Result<(f64, DenseArray)> {
    let (n, d) = rows(e)?;
    if labels.len() != n {
        return Err(Error::Dimension(format!("{n} embeddings but {} labels", labels.len())));
    }
    check_composition(labels)?;
    let dist = pairwise_distances(e)?;
    let dist = dist.data();
    let x = e.data();
    let mut grad = vec![0.0; n * d];
    let mut loss = 0.0;
    let scale = 1.0 / n as f64;
    for (a, (p, q)) in mine(dist, labels).into_iter().enumerate() {
        let hinge = margin + dist[a * n + p] - dist[a * n + q];
        if hinge <= 0.0 {
            continue;
        }
        loss += hinge;
        for (other, sign) in [(p, 1.0), (q, -1.0)] {
            let dd = dist[a * n + other];
            if dd == 0.0 {
                continue;
            }
            for k in 0..d {
                let g = sign * scale * (x[a * d + k] - x[other * d + k]) / dd;
                grad[a * d + k] += g;
                grad[other * d + k] -= g;
            }
        }
    }
    Ok((loss * scale, DenseArray::new([n, d], grad)?))
}
