//! Naive reference implementations used as test oracles. Written against
//! nested `Vec`s and textbook definitions, sharing no code with the crate.

#![allow(dead_code)]

pub type Grid = Vec<Vec<f64>>;
pub type Cube = Vec<Grid>;

pub fn to_cube(c: usize, h: usize, w: usize, flat: &[f32]) -> Cube {
    (0..c)
        .map(|ch| {
            (0..h)
                .map(|r| (0..w).map(|col| flat[ch * h * w + r * w + col] as f64).collect())
                .collect()
        })
        .collect()
}

pub fn flatten(cube: &Cube) -> Vec<f64> {
    cube.iter().flatten().flatten().copied().collect()
}

/// Population variance via the all-pairs identity
/// `Var = 1/(2 n^2) * sum_i sum_j (x_i - x_j)^2`.
pub fn variance(grid: &Grid) -> f64 {
    let xs: Vec<f64> = grid.iter().flatten().copied().collect();
    let n = xs.len() as f64;
    let mut acc = 0.0;
    for a in &xs {
        for b in &xs {
            acc += (a - b) * (a - b);
        }
    }
    acc / (2.0 * n * n)
}

pub fn aggregate_info(samples: &[Cube]) -> Vec<f64> {
    let c = samples[0].len();
    (0..c)
        .map(|j| samples.iter().map(|s| variance(&s[j])).sum())
        .collect()
}

/// Repeated arg-max with first-index tie-break.
pub fn top_n(psi: &[f64], n: usize) -> Vec<bool> {
    let mut bits = vec![false; psi.len()];
    for _ in 0..n {
        let mut best: Option<usize> = None;
        for (i, &v) in psi.iter().enumerate() {
            if bits[i] {
                continue;
            }
            match best {
                Some(b) if psi[b] >= v => {}
                _ => best = Some(i),
            }
        }
        bits[best.unwrap()] = true;
    }
    bits
}

pub fn indexed_pool(x: &Cube, bits: &[bool]) -> Cube {
    x.iter()
        .zip(bits)
        .filter(|(_, &b)| b)
        .map(|(g, _)| g.clone())
        .collect()
}

pub fn max_pool(x: &Cube, k: usize) -> Cube {
    x.iter()
        .map(|g| {
            let (h, w) = (g.len(), g[0].len());
            (0..h / k)
                .map(|orow| {
                    (0..w / k)
                        .map(|ocol| {
                            let mut m = f64::NEG_INFINITY;
                            for dr in 0..k {
                                for dc in 0..k {
                                    m = m.max(g[orow * k + dr][ocol * k + dc]);
                                }
                            }
                            m
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

pub fn embed(x: &Cube, bits: &[bool], k: usize) -> Vec<f64> {
    flatten(&max_pool(&indexed_pool(x, bits), k))
}

pub fn mean_vector(vs: &[Vec<f64>]) -> Vec<f64> {
    let d = vs[0].len();
    (0..d)
        .map(|i| vs.iter().map(|v| v[i]).sum::<f64>() / vs.len() as f64)
        .collect()
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Threshold by scanning every candidate value in ascending order.
pub fn smallest_covering(values: &[f64], p: f64) -> f64 {
    let mut cands = values.to_vec();
    cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len() as f64;
    for t in cands {
        let covered = values.iter().filter(|&&v| v <= t).count() as f64;
        if covered / n >= p {
            return t;
        }
    }
    unreachable!("the largest value always covers everything")
}

/// TNR at the smallest pooled threshold reaching the TPR target
/// (lower score = ID).
pub fn tnr_at_tpr_sweep(id: &[f64], ood: &[f64], target: f64) -> (f64, f64) {
    let mut pooled: Vec<f64> = id.iter().chain(ood).copied().collect();
    pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pooled.dedup();
    for t in pooled {
        let tpr = id.iter().filter(|&&v| v <= t).count() as f64 / id.len() as f64;
        if tpr >= target {
            let tnr = ood.iter().filter(|&&v| v > t).count() as f64 / ood.len() as f64;
            return (tnr, t);
        }
    }
    unreachable!()
}

/// Exhaustive pair count: ID wins when its score is lower, ties count half.
pub fn auroc_pairs(id: &[f64], ood: &[f64]) -> f64 {
    let mut wins = 0.0;
    for a in id {
        for b in ood {
            if a < b {
                wins += 1.0;
            } else if a == b {
                wins += 0.5;
            }
        }
    }
    wins / (id.len() * ood.len()) as f64
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12) || (a - b).abs() <= 1e-12
}
