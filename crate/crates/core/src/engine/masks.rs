use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::fisher::FisherEstimate;
use crate::tensor::{SeededRng, Tensor};
use crate::{Error, Result};

const KMEANS_RETRIES: usize = 5;
const KMEANS_ITERS: usize = 100;

/// How a Fisher chunk is used by its explanation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChunkMode {
    /// Explanation `i` leaves chunk `i` untouched and moves everything else.
    #[default]
    FreezeChunk,
    /// Explanation `i` moves only chunk `i`.
    KeepChunk,
}

/// One binary mask per explanation; `true` marks a coordinate that may move.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSet {
    pub d: usize,
    pub masks: Vec<Vec<bool>>,
}

impl MaskSet {
    pub fn all_ones(n: usize, d: usize) -> Self {
        Self {
            d,
            masks: vec![vec![true; d]; n],
        }
    }

    fn from_groups(d: usize, groups: &[Vec<usize>]) -> Self {
        let masks = groups
            .iter()
            .map(|grp| {
                let mut m = vec![false; d];
                for &j in grp {
                    m[j] = true;
                }
                m
            })
            .collect();
        Self { d, masks }
    }

    pub fn n(&self) -> usize {
        self.masks.len()
    }

    /// `[n, d]` tensor of 0/1 values.
    pub fn to_tensor(&self) -> Tensor {
        let data = self
            .masks
            .iter()
            .flat_map(|m| m.iter().map(|&b| if b { 1.0 } else { 0.0 }))
            .collect();
        Tensor::new(vec![self.n(), self.d], data).expect("non-empty mask set")
    }

    /// Kept coordinates of mask `i`.
    pub fn support(&self, i: usize) -> Vec<usize> {
        (0..self.d).filter(|&j| self.masks[i][j]).collect()
    }

    /// Every coordinate is kept by exactly one mask.
    pub fn is_partition(&self) -> bool {
        (0..self.d).all(|j| self.masks.iter().filter(|m| m[j]).count() == 1)
    }
}

fn check_n(n: usize, d: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::config("engine.n", "must be at least 1"));
    }
    if n > d {
        return Err(Error::config("engine.n", format!("{n} masks requested for {d} latent dimensions")));
    }
    Ok(())
}

/// Dimensions sorted by descending Fisher diagonal, ties by ascending index,
/// cut into `n` contiguous chunks of `d / n`; the last chunk takes the remainder.
pub fn fisher_chunks(f: &FisherEstimate, n: usize) -> Result<Vec<Vec<usize>>> {
    let d = f.d;
    check_n(n, d)?;
    let diag = f.diag();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| diag[b].total_cmp(&diag[a]).then(a.cmp(&b)));
    let k = d / n;
    Ok((0..n)
        .map(|i| {
            let end = if i + 1 == n { d } else { (i + 1) * k };
            order[i * k..end].to_vec()
        })
        .collect())
}

pub fn fisher_chunk_masks(f: &FisherEstimate, n: usize, mode: ChunkMode) -> Result<MaskSet> {
    let chunks = fisher_chunks(f, n)?;
    let keep = MaskSet::from_groups(f.d, &chunks);
    Ok(match mode {
        ChunkMode::KeepChunk => keep,
        ChunkMode::FreezeChunk => MaskSet {
            d: f.d,
            masks: keep.masks.into_iter().map(|m| m.into_iter().map(|b| !b).collect()).collect(),
        },
    })
}

/// Partition of the latent dimensions by spectral clustering of `|F|`.
pub fn spectral_masks(f: &FisherEstimate, n: usize, seed: u64) -> Result<MaskSet> {
    let d = f.d;
    check_n(n, d)?;
    let mut a = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            if i != j {
                a[(i, j)] = 0.5 * (f.get(i, j).abs() + f.get(j, i).abs());
            }
        }
    }
    let deg: Vec<f64> = (0..d).map(|i| a.row(i).sum()).collect();
    let max_deg = deg.iter().cloned().fold(0.0, f64::max);
    if max_deg <= 0.0 {
        return fisher_chunk_masks(f, n, ChunkMode::KeepChunk);
    }
    let floor = 1e-10 * max_deg;
    let inv_sqrt: Vec<f64> = deg.iter().map(|&g| 1.0 / g.max(floor).sqrt()).collect();
    let mut lap = DMatrix::<f64>::identity(d, d);
    for i in 0..d {
        for j in 0..d {
            lap[(i, j)] -= inv_sqrt[i] * a[(i, j)] * inv_sqrt[j];
        }
    }
    let eig = SymmetricEigen::new(lap);
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]).then(x.cmp(&y)));
    let mut rows = vec![vec![0.0; n]; d];
    for (c, &e) in idx[..n].iter().enumerate() {
        for (r, row) in rows.iter_mut().enumerate() {
            row[c] = eig.eigenvectors[(r, e)];
        }
    }
    for row in rows.iter_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-300 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }

    for attempt in 0..KMEANS_RETRIES {
        let mut rng = SeededRng::derive(seed, &format!("spectral-kmeans-{attempt}"));
        if let Some(labels) = kmeans(&rows, n, &mut rng) {
            let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n];
            for (j, &c) in labels.iter().enumerate() {
                groups[c].push(j);
            }
            groups.sort_by_key(|g| g[0]);
            return Ok(MaskSet::from_groups(d, &groups));
        }
    }
    Err(Error::Invalid(format!(
        "spectral clustering left an empty cluster after {KMEANS_RETRIES} attempts"
    )))
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with farthest-point initialisation. `None` when a
/// cluster ends up empty.
fn kmeans(rows: &[Vec<f64>], k: usize, rng: &mut SeededRng) -> Option<Vec<usize>> {
    let m = rows.len();
    let mut centers = vec![rows[rng.below(m)].clone()];
    while centers.len() < k {
        let mut best = (0, -1.0);
        for (j, r) in rows.iter().enumerate() {
            let dmin = centers.iter().map(|c| dist2(r, c)).fold(f64::INFINITY, f64::min);
            if dmin > best.1 {
                best = (j, dmin);
            }
        }
        centers.push(rows[best.0].clone());
    }
    let mut labels = vec![usize::MAX; m];
    for _ in 0..KMEANS_ITERS {
        let mut changed = false;
        for (j, r) in rows.iter().enumerate() {
            let mut best = (0, f64::INFINITY);
            for (c, ctr) in centers.iter().enumerate() {
                let dd = dist2(r, ctr);
                if dd < best.1 - 1e-12 {
                    best = (c, dd);
                }
            }
            if labels[j] != best.0 {
                labels[j] = best.0;
                changed = true;
            }
        }
        for (c, ctr) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = rows.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(r, _)| r).collect();
            if members.is_empty() {
                return None;
            }
            for (q, v) in ctr.iter_mut().enumerate() {
                *v = members.iter().map(|r| r[q]).sum::<f64>() / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    Some(labels)
}

/// A random permutation of the dimensions split into `n` near-equal keep-chunks.
pub fn random_masks(n: usize, d: usize, rng: &mut SeededRng) -> Result<MaskSet> {
    check_n(n, d)?;
    let mut perm: Vec<usize> = (0..d).collect();
    rng.shuffle(&mut perm);
    let (base, extra) = (d / n, d % n);
    let mut groups = Vec::with_capacity(n);
    let mut at = 0;
    for i in 0..n {
        let len = base + usize::from(i < extra);
        groups.push(perm[at..at + len].to_vec());
        at += len;
    }
    Ok(MaskSet::from_groups(d, &groups))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(v: &[f64]) -> FisherEstimate {
        let d = v.len();
        let mut m = vec![0.0; d * d];
        for (i, x) in v.iter().enumerate() {
            m[i * d + i] = *x;
        }
        FisherEstimate::from_matrix(d, m).unwrap()
    }

    #[test]
    fn chunk_example() {
        let f = diag(&[5.0, 4.0, 3.0, 2.0, 1.0, 0.0]);
        assert_eq!(fisher_chunks(&f, 3).unwrap(), vec![vec![0, 1], vec![2, 3], vec![4, 5]]);
        let m = fisher_chunk_masks(&f, 3, ChunkMode::FreezeChunk).unwrap();
        assert_eq!(m.masks[0], vec![false, false, true, true, true, true]);
        let k = fisher_chunk_masks(&f, 3, ChunkMode::KeepChunk).unwrap();
        assert!(k.is_partition());
    }

    #[test]
    fn chunk_ties_and_remainder() {
        let f = diag(&[1.0, 2.0, 2.0, 1.0, 0.5]);
        assert_eq!(fisher_chunks(&f, 2).unwrap(), vec![vec![1, 2], vec![0, 3, 4]]);
        assert!(fisher_chunks(&f, 6).is_err());
    }

    #[test]
    fn single_freeze_chunk_freezes_top_dims() {
        let f = diag(&[0.1, 3.0, 0.2, 2.0]);
        let m = fisher_chunk_masks(&f, 1, ChunkMode::FreezeChunk).unwrap();
        assert!(m.masks[0].iter().all(|&b| !b));
    }

    #[test]
    fn diagonal_fisher_falls_back_to_keep_chunks() {
        let f = diag(&[0.1, 3.0, 0.2, 2.0]);
        assert_eq!(
            spectral_masks(&f, 2, 1).unwrap(),
            fisher_chunk_masks(&f, 2, ChunkMode::KeepChunk).unwrap()
        );
    }

    #[test]
    fn random_masks_split_evenly() {
        let a = random_masks(2, 4, &mut SeededRng::new(3)).unwrap();
        assert!(a.is_partition());
        assert!(a.masks.iter().all(|m| m.iter().filter(|&&b| b).count() == 2));
        assert_eq!(a, random_masks(2, 4, &mut SeededRng::new(3)).unwrap());
        let b = random_masks(3, 16, &mut SeededRng::new(4)).unwrap();
        let sizes: Vec<usize> = (0..3).map(|i| b.support(i).len()).collect();
        assert_eq!(sizes, vec![6, 5, 5]);
    }
}
