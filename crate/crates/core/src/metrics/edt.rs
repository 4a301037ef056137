//! Exact Euclidean distance transform (squared), two-pass 1-D lower
//! envelope of parabolas per axis.

const INF: f64 = f64::INFINITY;

/// 1-D squared distance transform. `f` holds per-cell source costs
/// (0 for occupied, infinity for free); writes the lower envelope into `out`.
fn dt1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut sites = vec![0usize; n];
    let mut bounds = vec![0f64; n + 1];

    let Some(first) = (0..n).find(|&i| f[i].is_finite()) else {
        out.fill(INF);
        return;
    };
    let mut k = 0usize;
    sites[0] = first;
    bounds[0] = -INF;
    bounds[1] = INF;

    for q in (first + 1)..n {
        if !f[q].is_finite() {
            continue;
        }
        let qf = q as f64;
        loop {
            let p = sites[k] as f64;
            // Intersection of the parabolas rooted at p and q.
            let s = ((f[q] + qf * qf) - (f[sites[k]] + p * p)) / (2.0 * qf - 2.0 * p);
            if s <= bounds[k] {
                if k == 0 {
                    sites[0] = q;
                    bounds[1] = INF;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                sites[k] = q;
                bounds[k] = s;
                bounds[k + 1] = INF;
                break;
            }
        }
    }

    let mut k = 0usize;
    for (q, slot) in out.iter_mut().enumerate() {
        let qf = q as f64;
        while bounds[k + 1] < qf {
            k += 1;
        }
        let p = sites[k] as f64;
        *slot = (qf - p) * (qf - p) + f[sites[k]];
    }
}

/// Squared Euclidean distance from every cell to the nearest occupied cell.
/// All-infinite output when the grid has no occupied cell.
pub fn squared_edt(occupied: &[bool], h: usize, w: usize) -> Vec<f64> {
    assert_eq!(occupied.len(), h * w);
    let mut grid: Vec<f64> =
        occupied.iter().map(|&o| if o { 0.0 } else { INF }).collect();

    // Columns first.
    let mut col_in = vec![0f64; h];
    let mut col_out = vec![0f64; h];
    for x in 0..w {
        for y in 0..h {
            col_in[y] = grid[y * w + x];
        }
        dt1d(&col_in, &mut col_out);
        for y in 0..h {
            grid[y * w + x] = col_out[y];
        }
    }
    // Then rows.
    let mut row_out = vec![0f64; w];
    for y in 0..h {
        dt1d(&grid[y * w..(y + 1) * w], &mut row_out);
        grid[y * w..(y + 1) * w].copy_from_slice(&row_out);
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(occupied: &[bool], h: usize, w: usize) -> Vec<f64> {
        let pts: Vec<(f64, f64)> = (0..h * w)
            .filter(|&i| occupied[i])
            .map(|i| ((i / w) as f64, (i % w) as f64))
            .collect();
        (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as f64, (i % w) as f64);
                pts.iter()
                    .map(|&(py, px)| (y - py) * (y - py) + (x - px) * (x - px))
                    .fold(INF, f64::min)
            })
            .collect()
    }

    #[test]
    fn matches_brute_force_on_random_grids() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let (h, w) = (rng.gen_range(1..20), rng.gen_range(1..20));
            let occ: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(0.2)).collect();
            let fast = squared_edt(&occ, h, w);
            let slow = brute_force(&occ, h, w);
            for (i, (a, b)) in fast.iter().zip(slow.iter()).enumerate() {
                if a.is_infinite() && b.is_infinite() {
                    continue;
                }
                assert!((a - b).abs() < 1e-9, "cell {i}: {a} vs {b} on {h}x{w}");
            }
        }
    }

    #[test]
    fn empty_grid_is_all_infinite() {
        let d = squared_edt(&[false; 12], 3, 4);
        assert!(d.iter().all(|v| v.is_infinite()));
    }

    #[test]
    fn occupied_cells_have_zero_distance() {
        let mut occ = vec![false; 25];
        occ[12] = true;
        let d = squared_edt(&occ, 5, 5);
        assert_eq!(d[12], 0.0);
        assert_eq!(d[0], 8.0); // (2,2) from (0,0): 4 + 4
        assert_eq!(d[2], 4.0); // (0,2) -> (2,2)
    }
}
