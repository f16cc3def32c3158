//! Depth -> HHA encoding kernel.
//!
//! Mirrors the Python reference encoder step for step: windowed least-squares
//! surface normals, coarse-to-fine gravity estimation, then the three output
//! channels (disparity, height above ground, angle to gravity). Exposed over
//! a C ABI taking plain contiguous arrays; see `encode_hha_fast`.
//!
//! Coordinate convention: x right, y up, z into the scene, so
//! `x = (u - cx) * z / fx`, `y = (cy - v) * z / fy`. Normals face the camera.

const DOWN_AXIS: [f64; 3] = [0.0, -1.0, 0.0];

/// Summed-area table with one row/column of zero padding, giving O(1)
/// zero-padded window sums (the same values a constant-border box filter
/// produces, up to floating-point association).
struct Integral {
    w: usize,
    data: Vec<f64>,
}

impl Integral {
    fn build(src: &[f64], w: usize, h: usize) -> Self {
        let stride = w + 1;
        let mut data = vec![0.0f64; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0.0f64;
            for x in 0..w {
                row += src[y * w + x];
                data[(y + 1) * stride + x + 1] = data[y * stride + x + 1] + row;
            }
        }
        Integral { w, data }
    }

    /// Sum over the window centered at (x, y), clipped to the image.
    fn window_sum(&self, x: usize, y: usize, h: usize, half: usize) -> f64 {
        let stride = self.w + 1;
        let x0 = x.saturating_sub(half);
        let y0 = y.saturating_sub(half);
        let x1 = (x + half + 1).min(self.w);
        let y1 = (y + half + 1).min(h);
        self.data[y1 * stride + x1] - self.data[y0 * stride + x1] - self.data[y1 * stride + x0]
            + self.data[y0 * stride + x0]
    }
}

/// Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in ascending order with matching eigenvector columns.
fn eigh3(m: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut a = m;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let scale = m
        .iter()
        .flatten()
        .fold(0.0f64, |acc, &x| acc + x * x)
        .max(f64::MIN_POSITIVE);
    for _ in 0..24 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        if off < 1e-28 * scale {
            break;
        }
        for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][q].abs() < 1e-300 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for k in 0..3 {
                let vkp = v[k][p];
                let vkq = v[k][q];
                v[k][p] = c * vkp - s * vkq;
                v[k][q] = s * vkp + c * vkq;
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[i][i].partial_cmp(&a[j][j]).unwrap());
    let vals = [a[order[0]][order[0]], a[order[1]][order[1]], a[order[2]][order[2]]];
    let mut vecs = [[0.0f64; 3]; 3];
    for (col, &src) in order.iter().enumerate() {
        for row in 0..3 {
            vecs[row][col] = v[row][src];
        }
    }
    (vals, vecs)
}

/// Eigenvector of the smallest (or largest) eigenvalue of a symmetric 3x3
/// matrix via the trigonometric closed form, cross-product extraction and a
/// residual check; near-degenerate inputs fall back to Jacobi.
fn sym3_extreme_eigvec(a: [[f64; 3]; 3], smallest: bool) -> [f64; 3] {
    let p1 = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    let scale = a.iter().flatten().fold(0.0f64, |acc, &x| acc.max(x.abs()));
    if scale == 0.0 {
        return [1.0, 0.0, 0.0];
    }
    let lambda;
    if p1 <= 1e-28 * scale * scale {
        // effectively diagonal
        let d = [a[0][0], a[1][1], a[2][2]];
        let mut idx = 0;
        for k in 1..3 {
            if (smallest && d[k] < d[idx]) || (!smallest && d[k] > d[idx]) {
                idx = k;
            }
        }
        let mut v = [0.0; 3];
        v[idx] = 1.0;
        return v;
    } else {
        let q = (a[0][0] + a[1][1] + a[2][2]) / 3.0;
        let p2 = (a[0][0] - q).powi(2) + (a[1][1] - q).powi(2) + (a[2][2] - q).powi(2) + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        let b = [
            [(a[0][0] - q) / p, a[0][1] / p, a[0][2] / p],
            [a[0][1] / p, (a[1][1] - q) / p, a[1][2] / p],
            [a[0][2] / p, a[1][2] / p, (a[2][2] - q) / p],
        ];
        let det = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
            - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
            + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
        let r = (det / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        lambda = if smallest {
            q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos()
        } else {
            q + 2.0 * p * phi.cos()
        };
    }
    // eigenvector = best cross product of rows of (A - lambda I)
    let m = [
        [a[0][0] - lambda, a[0][1], a[0][2]],
        [a[0][1], a[1][1] - lambda, a[1][2]],
        [a[0][2], a[1][2], a[2][2] - lambda],
    ];
    let cross = |u: &[f64; 3], w: &[f64; 3]| {
        [
            u[1] * w[2] - u[2] * w[1],
            u[2] * w[0] - u[0] * w[2],
            u[0] * w[1] - u[1] * w[0],
        ]
    };
    let cands = [cross(&m[0], &m[1]), cross(&m[0], &m[2]), cross(&m[1], &m[2])];
    let mut best = cands[0];
    let mut best_n = dot(&best, &best);
    for c in &cands[1..] {
        let n = dot(c, c);
        if n > best_n {
            best = *c;
            best_n = n;
        }
    }
    let len = best_n.sqrt();
    if len > 1e-12 * scale * scale {
        let v = [best[0] / len, best[1] / len, best[2] / len];
        // residual check: |A v - lambda v| should vanish for a true eigenpair
        let av = [
            a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
            a[0][1] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
            a[0][2] * v[0] + a[1][2] * v[1] + a[2][2] * v[2],
        ];
        let res = [av[0] - lambda * v[0], av[1] - lambda * v[1], av[2] - lambda * v[2]];
        if dot(&res, &res).sqrt() <= 1e-9 * scale {
            return v;
        }
    }
    let (_, vecs) = eigh3(a);
    let col = if smallest { 0 } else { 2 };
    [vecs[0][col], vecs[1][col], vecs[2][col]]
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: &[f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Parameters mirrored from the Python side, validated once at entry.
pub struct Params {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub depth_min: f64,
    pub depth_max: f64,
    pub baseline: f64,
    pub height_min: f64,
    pub height_max: f64,
    pub window: usize,
    pub thresholds_deg: Vec<f64>,
    pub min_valid: usize,
    pub ground_percentile: f64,
}

fn backproject(depth_mm: &[u16], w: usize, h: usize, p: &Params) -> Vec<[f64; 3]> {
    let mut pts = vec![[0.0f64; 3]; w * h];
    for y in 0..h {
        for x in 0..w {
            let z = depth_mm[y * w + x] as f64 / 1000.0;
            pts[y * w + x] = [
                (x as f64 - p.cx) * z / p.fx,
                (p.cy - y as f64) * z / p.fy,
                z,
            ];
        }
    }
    pts
}

/// Windowed least-squares plane-fit normals: smallest-eigenvalue direction of
/// the local point covariance, flipped toward the camera. Zero vector where
/// depth is missing or fewer than 3 valid neighbors exist.
pub fn compute_normals(
    depth_mm: &[u16],
    w: usize,
    h: usize,
    pts: &[[f64; 3]],
    window: usize,
) -> Vec<[f64; 3]> {
    let half = window / 2;
    let n_px = w * h;
    let mut planes = vec![vec![0.0f64; n_px]; 10];
    for i in 0..n_px {
        if depth_mm[i] == 0 {
            continue;
        }
        let [x, y, z] = pts[i];
        planes[0][i] = 1.0;
        planes[1][i] = x;
        planes[2][i] = y;
        planes[3][i] = z;
        planes[4][i] = x * x;
        planes[5][i] = x * y;
        planes[6][i] = x * z;
        planes[7][i] = y * y;
        planes[8][i] = y * z;
        planes[9][i] = z * z;
    }
    let tables: Vec<Integral> = planes.iter().map(|p| Integral::build(p, w, h)).collect();

    let mut normals = vec![[0.0f64; 3]; n_px];
    for py in 0..h {
        for px in 0..w {
            let i = py * w + px;
            if depth_mm[i] == 0 {
                continue;
            }
            let n = tables[0].window_sum(px, py, h, half);
            if n < 3.0 {
                continue;
            }
            let s = [
                tables[1].window_sum(px, py, h, half) / n,
                tables[2].window_sum(px, py, h, half) / n,
                tables[3].window_sum(px, py, h, half) / n,
            ];
            let pr = |t: usize| tables[t].window_sum(px, py, h, half) / n;
            let cov = [
                [pr(4) - s[0] * s[0], pr(5) - s[0] * s[1], pr(6) - s[0] * s[2]],
                [pr(5) - s[0] * s[1], pr(7) - s[1] * s[1], pr(8) - s[1] * s[2]],
                [pr(6) - s[0] * s[2], pr(8) - s[1] * s[2], pr(9) - s[2] * s[2]],
            ];
            let mut nrm = sym3_extreme_eigvec(cov, true);
            if nrm[2] > 0.0 {
                nrm = [-nrm[0], -nrm[1], -nrm[2]];
            }
            let len = norm(&nrm);
            if len > 0.0 {
                normals[i] = [nrm[0] / len, nrm[1] / len, nrm[2] / len];
            }
        }
    }
    normals
}

/// Coarse-to-fine gravity direction: each pass keeps floor-like and wall-like
/// normals relative to the current estimate and takes the dominant
/// eigenvector of the difference of their scatter matrices, with a tiny prior
/// toward the current estimate for tie-breaking. Unit vector, y <= 0.
pub fn estimate_gravity(normals: &[[f64; 3]], thresholds_deg: &[f64], min_valid: usize) -> [f64; 3] {
    let flat: Vec<[f64; 3]> = normals.iter().copied().filter(|n| norm(n) > 0.5).collect();
    if flat.len() < min_valid {
        return DOWN_AXIS;
    }
    let mut g = DOWN_AXIS;
    for &thr in thresholds_deg {
        let thr_rad = thr.to_radians();
        let (cos_t, sin_t) = (thr_rad.cos(), thr_rad.sin());
        let mut m = [[0.0f64; 3]; 3];
        let mut count = 0usize;
        for n in &flat {
            let d = dot(n, &g).abs();
            let sign = if d > cos_t {
                1.0
            } else if d < sin_t {
                -1.0
            } else {
                continue;
            };
            count += 1;
            for r in 0..3 {
                for c in 0..3 {
                    m[r][c] += sign * n[r] * n[c];
                }
            }
        }
        if count < min_valid {
            continue;
        }
        let prior = 1e-6 * count as f64;
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] += prior * g[r] * g[c];
            }
        }
        g = sym3_extreme_eigvec(m, false);
        if g[1] > 0.0 {
            g = [-g[0], -g[1], -g[2]];
        }
    }
    let len = norm(&g);
    [g[0] / len, g[1] / len, g[2] / len]
}

/// Linear-interpolation percentile, matching the numpy default.
fn percentile(values: &mut Vec<f64>, pct: f64) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n == 1 {
        return values[0];
    }
    let rank = pct / 100.0 * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    if lo + 1 >= n {
        values[n - 1]
    } else {
        values[lo] + frac * (values[lo + 1] - values[lo])
    }
}

/// Round half to even, as the reference's quantization does.
fn round_ties_even(x: f64) -> f64 {
    let f = x.floor();
    let diff = x - f;
    if diff > 0.5 {
        f + 1.0
    } else if diff < 0.5 {
        f
    } else if (f as i64) % 2 == 0 {
        f
    } else {
        f + 1.0
    }
}

fn quantize(x: f64) -> u8 {
    round_ties_even(x.clamp(0.0, 255.0)) as u8
}

/// Full encoding; `out` is row-major H x W x 3 (disparity, height, angle).
pub fn encode(depth_mm: &[u16], w: usize, h: usize, p: &Params, out: &mut [u8]) {
    out.fill(0);
    if depth_mm.iter().all(|&d| d == 0) {
        return;
    }
    let pts = backproject(depth_mm, w, h, p);
    let normals = compute_normals(depth_mm, w, h, &pts, p.window);
    let gravity = estimate_gravity(&normals, &p.thresholds_deg, p.min_valid);

    let disp_lo = p.fx * p.baseline / p.depth_max;
    let disp_hi = p.fx * p.baseline / p.depth_min;

    let mut heights: Vec<f64> = Vec::new();
    for i in 0..w * h {
        if depth_mm[i] > 0 {
            heights.push(-dot(&pts[i], &gravity));
        }
    }
    let ground = percentile(&mut heights, p.ground_percentile);

    for i in 0..w * h {
        if depth_mm[i] == 0 {
            continue;
        }
        let z = depth_mm[i] as f64 / 1000.0;
        let disp = p.fx * p.baseline / z;
        let disp_chan = (disp - disp_lo) / (disp_hi - disp_lo) * 255.0;

        let height = -dot(&pts[i], &gravity);
        let height_chan = (height - ground - p.height_min) / (p.height_max - p.height_min) * 255.0;

        let n = &normals[i];
        let angle = if norm(n) < 0.5 {
            90.0
        } else {
            dot(n, &gravity).clamp(-1.0, 1.0).acos().to_degrees()
        };
        let angle_chan = angle / 180.0 * 255.0;

        out[3 * i] = quantize(disp_chan);
        out[3 * i + 1] = quantize(height_chan);
        out[3 * i + 2] = quantize(angle_chan);
    }
}

/// C entry point. Returns 0 on success, or:
/// 1 null pointer, 2 bad dimensions, 3 bad intrinsics, 4 bad window,
/// 5 bad mapping ranges, 6 bad threshold list or percentile.
///
/// # Safety
/// `depth_mm` must point to `width * height` u16 values, `thresholds_deg` to
/// `n_thresholds` f64 values, and `out` to `3 * width * height` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn encode_hha_fast(
    depth_mm: *const u16,
    width: u32,
    height: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    depth_min: f64,
    depth_max: f64,
    baseline: f64,
    height_min: f64,
    height_max: f64,
    window: u32,
    thresholds_deg: *const f64,
    n_thresholds: u32,
    min_valid: u32,
    ground_percentile: f64,
    out: *mut u8,
) -> i32 {
    if depth_mm.is_null() || thresholds_deg.is_null() || out.is_null() {
        return 1;
    }
    let (w, h) = (width as usize, height as usize);
    if w == 0 || h == 0 || w.checked_mul(h).is_none() {
        return 2;
    }
    if fx <= 0.0 || fy <= 0.0 || !fx.is_finite() || !fy.is_finite() {
        return 3;
    }
    if window < 3 || window % 2 == 0 {
        return 4;
    }
    if !(depth_min > 0.0 && depth_max > depth_min && baseline > 0.0 && height_max > height_min) {
        return 5;
    }
    if n_thresholds == 0 || !(0.0..=100.0).contains(&ground_percentile) {
        return 6;
    }
    let depth = std::slice::from_raw_parts(depth_mm, w * h);
    let thresholds = std::slice::from_raw_parts(thresholds_deg, n_thresholds as usize).to_vec();
    let out = std::slice::from_raw_parts_mut(out, 3 * w * h);
    let params = Params {
        fx,
        fy,
        cx,
        cy,
        depth_min,
        depth_max,
        baseline,
        height_min,
        height_max,
        window: window as usize,
        thresholds_deg: thresholds,
        min_valid: min_valid as usize,
        ground_percentile,
    };
    encode(depth, w, h, &params, out);
    0
}
