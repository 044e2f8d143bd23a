//! Exact Euclidean distance transform and nearest-feature lookup.

const FAR: f64 = 1e20;

/// 1-D lower envelope of parabolas (Felzenszwalb & Huttenlocher). Missing
/// features carry the large finite value `FAR`.
fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let fq = f[q] + (q * q) as f64;
        loop {
            let p = v[k];
            let s = (fq - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                v[0] = q;
                z[1] = f64::INFINITY;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
            }
            break;
        }
    }
    let mut k = 0usize;
    for (q, dq) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dx = q as f64 - v[k] as f64;
        *dq = dx * dx + f[v[k]];
    }
}

/// Squared Euclidean distance from every cell to the nearest `true` cell.
/// Cells are infinitely far when no `true` cell exists.
pub fn squared_edt(on: &[bool], height: usize, width: usize) -> Vec<f64> {
    assert_eq!(on.len(), height * width);
    let n = height.max(width);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    let mut grid: Vec<f64> = on.iter().map(|&b| if b { 0.0 } else { FAR }).collect();
    for c in 0..width {
        for r in 0..height {
            f[r] = grid[r * width + c];
        }
        edt_1d(&f[..height], &mut d[..height], &mut v, &mut z);
        for r in 0..height {
            grid[r * width + c] = d[r];
        }
    }
    for r in 0..height {
        f[..width].copy_from_slice(&grid[r * width..(r + 1) * width]);
        edt_1d(&f[..width], &mut d[..width], &mut v, &mut z);
        grid[r * width..(r + 1) * width].copy_from_slice(&d[..width]);
    }
    for g in &mut grid {
        if *g >= FAR * 0.5 {
            *g = f64::INFINITY;
        }
    }
    grid
}

fn isqrt_exact(x: i64) -> Option<i64> {
    if x < 0 {
        return None;
    }
    let mut s = (x as f64).sqrt() as i64;
    while s * s > x {
        s -= 1;
    }
    while (s + 1) * (s + 1) <= x {
        s += 1;
    }
    (s * s == x).then_some(s)
}

/// Index of the nearest `true` cell for every cell; ties go to the smaller
/// row, then the smaller column. `None` when no cell is `true`.
pub fn nearest_on(on: &[bool], height: usize, width: usize) -> Option<Vec<usize>> {
    if !on.iter().any(|&b| b) {
        return None;
    }
    let d2 = squared_edt(on, height, width);
    let mut out = vec![0usize; on.len()];
    for r in 0..height {
        for c in 0..width {
            let idx = r * width + c;
            if on[idx] {
                out[idx] = idx;
                continue;
            }
            let target = d2[idx].round() as i64;
            let reach = isqrt_floor(target);
            let mut found = None;
            'rows: for dr in -reach..=reach {
                let rr = r as i64 + dr;
                if rr < 0 || rr >= height as i64 {
                    continue;
                }
                if let Some(dc) = isqrt_exact(target - dr * dr) {
                    for cc in [c as i64 - dc, c as i64 + dc] {
                        if cc >= 0 && cc < width as i64 && on[rr as usize * width + cc as usize] {
                            found = Some(rr as usize * width + cc as usize);
                            break 'rows;
                        }
                    }
                }
            }
            out[idx] = found.expect("distance transform guarantees a feature at this radius");
        }
    }
    Some(out)
}

fn isqrt_floor(x: i64) -> i64 {
    let mut s = (x as f64).sqrt() as i64;
    while s * s > x {
        s -= 1;
    }
    while (s + 1) * (s + 1) <= x {
        s += 1;
    }
    s
}
