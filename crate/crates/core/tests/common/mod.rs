//! Reference implementations used as oracles by the integration tests.
//! Each one is written from the definition, without reusing library code.
#![allow(dead_code)]

pub mod strategies;

use image::RgbImage;

/// ln Γ(x) by the Lanczos approximation (g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

pub fn t_density(x: f64, df: f64) -> f64 {
    let ln_c = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    (ln_c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp()
}

/// Two-tailed p = 1 - 2 ∫_0^|t| f(x) dx by composite Simpson.
pub fn t_two_tailed_p_oracle(t: f64, df: f64) -> f64 {
    let b = t.abs();
    if b == 0.0 {
        return 1.0;
    }
    let n = 200_000;
    let h = b / n as f64;
    let mut s = t_density(0.0, df) + t_density(b, df);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * t_density(i as f64 * h, df);
    }
    1.0 - 2.0 * s * h / 3.0
}

/// Bilinear value at output pixel (i, j) evaluated directly from the
/// half-pixel mapping, one pixel at a time.
pub fn bilinear_at(data: &[f64], h: usize, w: usize, out_h: usize, out_w: usize, i: usize, j: usize) -> f64 {
    let src = |o: usize, n_in: usize, n_out: usize| {
        let s = (o as f64 + 0.5) * (n_in as f64 / n_out as f64) - 0.5;
        s.max(0.0).min((n_in - 1) as f64)
    };
    let sy = src(i, h, out_h);
    let sx = src(j, w, out_w);
    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (dy, dx) = (sy - y0 as f64, sx - x0 as f64);
    let v = |y: usize, x: usize| data[y * w + x];
    v(y0, x0) * (1.0 - dy) * (1.0 - dx) + v(y0, x1) * (1.0 - dy) * dx + v(y1, x0) * dy * (1.0 - dx) + v(y1, x1) * dy * dx
}

/// Epoch-by-epoch early stopping: improvement is strict, the counter
/// counts epochs since the best, training halts when it reaches
/// `patience` or the data/epoch budget runs out. Returns (stop, best),
/// both 1-indexed.
pub fn naive_early_stop(series: &[f64], patience: usize, max_epochs: usize) -> (usize, usize) {
    let mut best = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut since = 0;
    let last = series.len().min(max_epochs);
    for epoch in 1..=last {
        let v = series[epoch - 1];
        if v > best {
            best = v;
            best_epoch = epoch;
            since = 0;
        } else {
            since += 1;
        }
        if since >= patience {
            return (epoch, best_epoch);
        }
    }
    (last, best_epoch)
}

/// dHash from the definition: luma, 9x8 box downsample computed with
/// exact rational arithmetic, bit set when a cell is darker than its right
/// neighbour, row-major, most significant bit first.
pub fn dhash_oracle(img: &RgbImage) -> u64 {
    let (w, h) = (img.width() as u64, img.height() as u64);
    let (ow, oh) = (9u64, 8u64);
    // Cell (cx, cy) covers source x in [cx*w/ow, (cx+1)*w/ow); scale all
    // coordinates by ow (resp. oh) to keep them integral.
    let overlap = |a0: u64, a1: u64, b0: u64, b1: u64| a1.min(b1).saturating_sub(a0.max(b0));
    let mut cells = vec![0u128; (ow * oh) as usize];
    for cy in 0..oh {
        for cx in 0..ow {
            let mut sum = 0u128;
            for y in 0..h {
                let wy = overlap(y * oh, (y + 1) * oh, cy * h, (cy + 1) * h);
                if wy == 0 {
                    continue;
                }
                for x in 0..w {
                    let wx = overlap(x * ow, (x + 1) * ow, cx * w, (cx + 1) * w);
                    if wx == 0 {
                        continue;
                    }
                    let p = img.get_pixel(x as u32, y as u32);
                    let l = 299 * p[0] as u128 + 587 * p[1] as u128 + 114 * p[2] as u128;
                    sum += l * wx as u128 * wy as u128;
                }
            }
            cells[(cy * ow + cx) as usize] = sum;
        }
    }
    let mut hash = 0u64;
    for cy in 0..oh {
        for cx in 0..8 {
            hash <<= 1;
            if cells[(cy * ow + cx) as usize] < cells[(cy * ow + cx + 1) as usize] {
                hash |= 1;
            }
        }
    }
    hash
}

pub fn popcount_distance(a: u64, b: u64) -> u32 {
    let mut x = a ^ b;
    let mut n = 0;
    while x != 0 {
        x &= x - 1;
        n += 1;
    }
    n
}

/// Average ranks (1-based), ties share the mean of their positions.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for (i, &x) in v.iter().enumerate() {
        let less = v.iter().filter(|&&y| y < x).count() as f64;
        let equal = v.iter().filter(|&&y| y == x).count() as f64;
        out[i] = less + (equal + 1.0) / 2.0;
    }
    out
}

pub fn pearson_r(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

/// Exact two-sided permutation p for Spearman's rho: the share of all
/// orderings of y whose |rho| is at least the observed |rho|.
pub fn spearman_permutation_oracle(x: &[f64], y: &[f64]) -> (f64, f64) {
    let rx = ranks(x);
    let ry = ranks(y);
    let observed = pearson_r(&rx, &ry);
    let mut perm: Vec<usize> = (0..y.len()).collect();
    let (mut hits, mut total) = (0u64, 0u64);
    heap_permute(&mut perm, y.len(), &mut |p| {
        let ys: Vec<f64> = p.iter().map(|&i| ry[i]).collect();
        total += 1;
        if pearson_r(&rx, &ys).abs() >= observed.abs() - 1e-12 {
            hits += 1;
        }
    });
    (observed, hits as f64 / total as f64)
}

fn heap_permute(a: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
    if k <= 1 {
        f(a);
        return;
    }
    for i in 0..k {
        heap_permute(a, k - 1, f);
        let j = if k % 2 == 0 { i } else { 0 };
        a.swap(j, k - 1);
    }
}
