//! Nearest-neighbour and distance-transform primitives behind the losses.

/// Static 2-d tree over a point set, nodes stored in median order.
#[derive(Debug, Clone)]
pub struct KdTree2 {
    points: Vec<[f64; 2]>,
}

impl KdTree2 {
    pub fn new(points: &[[f64; 2]]) -> Self {
        let mut points = points.to_vec();
        build(&mut points, 0);
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Squared distance to the nearest point, `None` for an empty tree.
    pub fn nearest_sq(&self, q: [f64; 2]) -> Option<f64> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = f64::INFINITY;
        search(&self.points, 0, q, &mut best);
        Some(best)
    }

    pub fn nearest_distance(&self, q: [f64; 2]) -> Option<f64> {
        self.nearest_sq(q).map(f64::sqrt)
    }
}

fn build(points: &mut [[f64; 2]], depth: usize) {
    if points.len() <= 1 {
        return;
    }
    let axis = depth % 2;
    let mid = points.len() / 2;
    points.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
    let (left, rest) = points.split_at_mut(mid);
    build(left, depth + 1);
    build(&mut rest[1..], depth + 1);
}

fn search(points: &[[f64; 2]], depth: usize, q: [f64; 2], best: &mut f64) {
    if points.is_empty() {
        return;
    }
    let mid = points.len() / 2;
    let p = points[mid];
    let dx = p[0] - q[0];
    let dy = p[1] - q[1];
    let d2 = dx * dx + dy * dy;
    if d2 < *best {
        *best = d2;
    }
    let axis = depth % 2;
    let diff = q[axis] - p[axis];
    let (near, far) = if diff < 0.0 {
        (&points[..mid], &points[mid + 1..])
    } else {
        (&points[mid + 1..], &points[..mid])
    };
    search(near, depth + 1, q, best);
    if diff * diff < *best {
        search(far, depth + 1, q, best);
    }
}

const FAR: f64 = 1e20;

/// 1-d squared distance transform of a sampled function (lower envelope of
/// parabolas). `f` is overwritten with the result.
fn edt_1d(f: &mut [f64], v: &mut [usize], z: &mut [f64], scratch: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    scratch[..n].copy_from_slice(f);
    let g = &scratch[..n];
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        let mut s;
        loop {
            let pf = v[k] as f64;
            s = ((g[q] + qf * qf) - (g[v[k]] + pf * pf)) / (2.0 * qf - 2.0 * pf);
            // z[0] is -inf, so this stops at k = 0
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in f.iter_mut().enumerate() {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let d = qf - v[k] as f64;
        *out = d * d + g[v[k]];
    }
}

/// Exact squared Euclidean distance from every pixel to the nearest `true`
/// pixel of a row-major `width × height` grid. All entries are `f64::INFINITY`
/// when the grid has no set pixel.
pub fn squared_distance_transform(set: &[bool], width: usize, height: usize) -> Vec<f64> {
    assert_eq!(set.len(), width * height);
    if !set.iter().any(|&b| b) {
        return vec![f64::INFINITY; set.len()];
    }
    let mut grid: Vec<f64> = set.iter().map(|&b| if b { 0.0 } else { FAR }).collect();
    let longest = width.max(height);
    let mut v = vec![0usize; longest];
    let mut z = vec![0.0; longest + 1];
    let mut scratch = vec![0.0; longest];
    let mut column = vec![0.0; height];
    for col in 0..width {
        for row in 0..height {
            column[row] = grid[row * width + col];
        }
        edt_1d(&mut column, &mut v, &mut z, &mut scratch);
        for row in 0..height {
            grid[row * width + col] = column[row];
        }
    }
    for row in grid.chunks_exact_mut(width) {
        edt_1d(row, &mut v, &mut z, &mut scratch);
    }
    grid
}
