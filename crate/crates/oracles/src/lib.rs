//! Slow, independent reference computations for checking the metrics.
//!
//! Nothing here shares code with the library under test.

pub mod dd;

use dd::Dd;

/// AP by counting: each positive's rank is one plus the number of items
/// scored higher, or scored equal with a lower index.
pub fn average_precision_by_counting(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n = scores.len();
    let rank = |i: usize| 1 + (0..n).filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i)).count();
    let mut positives: Vec<(usize, usize)> = (0..n).filter(|&i| labels[i]).map(|i| (rank(i), i)).collect();
    if positives.is_empty() {
        return None;
    }
    positives.sort();
    let mut sum = 0.0;
    for &(r, _) in &positives {
        let hits = positives.iter().filter(|&&(q, _)| q <= r).count();
        sum += hits as f64 / r as f64;
    }
    Some(sum / positives.len() as f64)
}

/// Mean AP over the classes of row-major `n × c` matrices that have a positive.
pub fn mean_average_precision_by_counting(scores: &[f64], labels: &[bool], c: usize) -> Option<f64> {
    let n = scores.len() / c;
    let aps: Vec<f64> = (0..c)
        .filter_map(|j| {
            let s: Vec<f64> = (0..n).map(|i| scores[i * c + j]).collect();
            let l: Vec<bool> = (0..n).map(|i| labels[i * c + j]).collect();
            average_precision_by_counting(&s, &l)
        })
        .collect();
    (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Median rank where ties are resolved by enumerating every ordering of the
/// tied block and averaging the diagonal's position.
pub fn median_rank_by_enumeration(sim: &[f64], n: usize) -> f64 {
    let mut ranks: Vec<f64> = (0..n)
        .map(|i| {
            let row = &sim[i * n..(i + 1) * n];
            let above = row.iter().filter(|&&v| v > row[i]).count();
            let tied = row.iter().filter(|&&v| v == row[i]).count();
            // the diagonal is equally likely to sit at each slot of its tie block
            let total: usize = (1..=tied).map(|slot| above + slot).sum();
            total as f64 / tied as f64
        })
        .collect();
    ranks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if n % 2 == 1 {
        ranks[n / 2]
    } else {
        (ranks[n / 2 - 1] + ranks[n / 2]) / 2.0
    }
}

type Mat = Vec<Vec<Dd>>;

fn to_dd(m: &[f64], f: usize) -> Mat {
    (0..f).map(|i| (0..f).map(|j| Dd::from(m[i * f + j])).collect()).collect()
}

fn matmul(a: &Mat, b: &Mat) -> Mat {
    let f = a.len();
    (0..f)
        .map(|i| {
            (0..f)
                .map(|j| {
                    let mut acc = Dd::ZERO;
                    for k in 0..f {
                        acc = acc + a[i][k] * b[k][j];
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

fn identity(f: usize) -> Mat {
    (0..f).map(|i| (0..f).map(|j| if i == j { Dd::ONE } else { Dd::ZERO }).collect()).collect()
}

/// Gauss-Jordan inverse with partial pivoting.
fn inverse(m: &Mat) -> Mat {
    let f = m.len();
    let mut a = m.clone();
    let mut inv = identity(f);
    for col in 0..f {
        let pivot = (col..f).max_by(|&x, &y| a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap()).unwrap();
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let p = a[col][col];
        for j in 0..f {
            a[col][j] = a[col][j] / p;
            inv[col][j] = inv[col][j] / p;
        }
        for row in 0..f {
            if row != col {
                let factor = a[row][col];
                for j in 0..f {
                    a[row][j] = a[row][j] - factor * a[col][j];
                    inv[row][j] = inv[row][j] - factor * inv[col][j];
                }
            }
        }
    }
    inv
}

/// Principal square root by the Denman–Beavers iteration.
fn sqrtm(m: &Mat) -> Mat {
    let f = m.len();
    let half = Dd::from(0.5);
    let (mut y, mut z) = (m.clone(), identity(f));
    for _ in 0..200 {
        let (yi, zi) = (inverse(&y), inverse(&z));
        let y_next: Mat = (0..f).map(|i| (0..f).map(|j| (y[i][j] + zi[i][j]) * half).collect()).collect();
        let z_next: Mat = (0..f).map(|i| (0..f).map(|j| (z[i][j] + yi[i][j]) * half).collect()).collect();
        let change = (0..f).flat_map(|i| (0..f).map(move |j| (i, j))).map(|(i, j)| (y_next[i][j] - y[i][j]).abs()).fold(0.0, f64::max);
        y = y_next;
        z = z_next;
        if change < 1e-30 {
            break;
        }
    }
    y
}

/// Fréchet distance with `tr((ΣaΣb)^{1/2})` from a double-double
/// Denman–Beavers square root of the (non-symmetric) product.
pub fn frechet_distance_dd(mean_a: &[f64], cov_a: &[f64], mean_b: &[f64], cov_b: &[f64]) -> f64 {
    let f = mean_a.len();
    let (a, b) = (to_dd(cov_a, f), to_dd(cov_b, f));
    let root = sqrtm(&matmul(&a, &b));
    let mut total = Dd::ZERO;
    for i in 0..f {
        let d = Dd::from(mean_a[i]) - Dd::from(mean_b[i]);
        total = total + d * d + a[i][i] + b[i][i] - Dd::from(2.0) * root[i][i];
    }
    total.to_f64()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counting_ap_hand_example() {
        let ap = average_precision_by_counting(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn dd_sqrt_of_diagonal_product() {
        // diag(1, 4) · diag(9, 1) has root diag(3, 2)
        let d = frechet_distance_dd(&[0.0, 0.0], &[1.0, 0.0, 0.0, 4.0], &[0.0, 0.0], &[9.0, 0.0, 0.0, 1.0]);
        assert!((d - (1.0 + 4.0 + 9.0 + 1.0 - 2.0 * 5.0)).abs() < 1e-14);
    }

    #[test]
    fn enumeration_median_rank() {
        assert_eq!(median_rank_by_enumeration(&[1.0, 1.0, 1.0, 1.0], 2), 1.5);
    }
}
