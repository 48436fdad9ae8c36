//! Uses of trained sparse codes: editing and interpolation, k-means patch
//! clustering, and spectral segmentation with a boundary-connectivity
//! foreground rule.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{sparse_code_grid, ScVae};
use crate::tensor::{Scalar, Tensor};

/// Sets component `index` of a code to `value`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CodeEdit {
    pub index: usize,
    pub value: f64,
}

pub fn manipulate_code(z: &[f64], edit: CodeEdit) -> Result<Vec<f64>> {
    if edit.index >= z.len() {
        return Err(Error::Domain(format!(
            "component {} out of range for a code of length {}",
            edit.index,
            z.len()
        )));
    }
    let mut out = z.to_vec();
    out[edit.index] = edit.value;
    Ok(out)
}

/// Codes with component `index` set to `-range, -range + step, …, range`.
pub fn traverse_code(z: &[f64], index: usize, range: f64, step: f64) -> Result<Vec<Vec<f64>>> {
    if !(step > 0.0) || !(range >= 0.0) {
        return Err(Error::Domain(format!("invalid traversal range {range} step {step}")));
    }
    let n = (2.0 * range / step + 1e-9).floor() as usize + 1;
    (0..n)
        .map(|i| {
            manipulate_code(
                z,
                CodeEdit {
                    index,
                    value: -range + i as f64 * step,
                },
            )
        })
        .collect()
}

/// `(1 − t)·z_a + t·z_b`.
pub fn interpolate_codes(za: &[f64], zb: &[f64], t: f64) -> Result<Vec<f64>> {
    if za.len() != zb.len() {
        return Err(Error::dim("interpolate_codes", &[za.len()], &[zb.len()]));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("t must lie in [0, 1], got {t}")));
    }
    if t == 0.0 {
        return Ok(za.to_vec());
    }
    if t == 1.0 {
        return Ok(zb.to_vec());
    }
    Ok(za.iter().zip(zb).map(|(a, b)| (1.0 - t) * a + t * b).collect())
}

/// Output of [`kmeans`].
#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub labels: Vec<usize>,
    /// `[clusters, dim]`.
    pub centroids: Tensor<f64>,
    /// Inertia after each assignment pass.
    pub inertia: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    centroids
        .chunks_exact(dim)
        .enumerate()
        .map(|(c, ctr)| (c, sq_dist(p, ctr)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// Lloyd's algorithm from a k-means++ seeding over the rows of `points`.
/// Stops at an assignment fixpoint or after `max_iters` passes. A cluster
/// left empty is re-seeded with the point farthest from its centroid.
pub fn kmeans(points: &Tensor<f64>, clusters: usize, seed: u64, max_iters: usize) -> Result<KMeans> {
    let s = points.shape();
    if s.len() != 2 {
        return Err(Error::Shape(format!("kmeans needs [M, dim] points, got {s:?}")));
    }
    let (m, dim) = (s[0], s[1]);
    if clusters == 0 || clusters > m {
        return Err(Error::Config(format!(
            "cannot form {clusters} clusters from {m} points"
        )));
    }
    let x = points.data();
    let row = |i: usize| &x[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let first = ((rng.random::<f64>() * m as f64) as usize).min(m - 1);
    let mut centroids = row(first).to_vec();
    let mut d2: Vec<f64> = (0..m).map(|i| sq_dist(row(i), row(first))).collect();
    for _ in 1..clusters {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = m - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            ((rng.random::<f64>() * m as f64) as usize).min(m - 1)
        };
        centroids.extend_from_slice(row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), row(pick)));
        }
    }

    let mut labels = vec![usize::MAX; m];
    let mut inertia = Vec::new();
    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        let mut total = 0.0;
        for (i, label) in labels.iter_mut().enumerate() {
            let (c, d) = nearest(row(i), &centroids, dim);
            changed |= *label != c;
            *label = c;
            total += d;
        }
        inertia.push(total);
        if !changed {
            break;
        }
        let mut sums = vec![0.0; clusters * dim];
        let mut counts = vec![0usize; clusters];
        for i in 0..m {
            counts[labels[i]] += 1;
            for (s, v) in sums[labels[i] * dim..(labels[i] + 1) * dim].iter_mut().zip(row(i)) {
                *s += v;
            }
        }
        for c in 0..clusters {
            if counts[c] > 0 {
                for j in 0..dim {
                    centroids[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            }
        }
        for c in 0..clusters {
            if counts[c] == 0 {
                let far = (0..m)
                    .map(|i| (i, sq_dist(row(i), &centroids[labels[i] * dim..(labels[i] + 1) * dim])))
                    .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best })
                    .0;
                centroids[c * dim..(c + 1) * dim].copy_from_slice(row(far));
                labels[far] = c;
            }
        }
    }
    Ok(KMeans {
        labels,
        centroids: Tensor::new(&[clusters, dim], centroids)?,
        inertia,
    })
}

/// Kernel width rule for the spectral affinity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SigmaMode {
    /// Median of the nonzero distances to the k nearest neighbours.
    Median,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralOptions {
    /// Neighbours per node; [`ALL_NEIGHBOURS`] links every pair.
    pub knn: usize,
    pub sigma: SigmaMode,
    /// Weight of normalised grid coordinates appended to every code; 0
    /// clusters on codes alone.
    pub spatial_weight: f64,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions {
            knn: ALL_NEIGHBOURS,
            sigma: SigmaMode::Median,
            spatial_weight: 0.0,
            seed: 0,
            max_iters: 20_000,
            tol: 1e-10,
        }
    }
}

/// `knn` value selecting the complete graph (`k = N − 1`).
pub const ALL_NEIGHBOURS: usize = usize::MAX;

/// Output of [`spectral_cluster`].
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralResult {
    pub labels: Vec<usize>,
    /// Connected components of the affinity graph.
    pub components: usize,
    /// Set when there were more components than classes and labels were
    /// taken from the components.
    pub disconnected: bool,
    /// Smallest eigenvalues of `L_sym`, ascending.
    pub eigenvalues: Vec<f64>,
}

/// Sparse symmetric affinity graph as adjacency lists.
#[derive(Clone, Debug)]
pub struct Affinity {
    pub neighbours: Vec<Vec<(usize, f64)>>,
}

impl Affinity {
    pub fn len(&self) -> usize {
        self.neighbours.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbours.is_empty()
    }

    pub fn degrees(&self) -> Vec<f64> {
        self.neighbours.iter().map(|n| n.iter().map(|e| e.1).sum()).collect()
    }

    /// Component id per node, numbered in order of first node.
    pub fn components(&self) -> (Vec<usize>, usize) {
        let n = self.len();
        let mut comp = vec![usize::MAX; n];
        let mut count = 0;
        for start in 0..n {
            if comp[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            comp[start] = count;
            while let Some(v) = stack.pop() {
                for &(u, _) in &self.neighbours[v] {
                    if comp[u] == usize::MAX {
                        comp[u] = count;
                        stack.push(u);
                    }
                }
            }
            count += 1;
        }
        (comp, count)
    }

    /// `y = (I + D^{-1/2} A D^{-1/2}) x` for a column-major block of
    /// `cols` vectors; nodes of zero degree map to themselves.
    fn shifted_apply(&self, inv_sqrt_deg: &[f64], x: &[f64], cols: usize, y: &mut [f64]) {
        let n = self.len();
        for c in 0..cols {
            let xc = &x[c * n..(c + 1) * n];
            let yc = &mut y[c * n..(c + 1) * n];
            for i in 0..n {
                let s: f64 = self.neighbours[i]
                    .iter()
                    .map(|&(j, a)| a * inv_sqrt_deg[j] * xc[j])
                    .sum();
                yc[i] = xc[i] + inv_sqrt_deg[i] * s;
            }
        }
    }
}

/// Mutual k-nearest-neighbour graph with Gaussian weights
/// `exp(−‖c_i − c_j‖²/(2σ²))`. A node left without mutual neighbours is
/// linked to its single nearest neighbour.
pub fn knn_affinity(points: &Tensor<f64>, knn: usize, sigma: SigmaMode) -> Result<Affinity> {
    let s = points.shape();
    if s.len() != 2 {
        return Err(Error::Shape(format!("points must be [N, dim], got {s:?}")));
    }
    let (n, dim) = (s[0], s[1]);
    let knn = if knn == ALL_NEIGHBOURS {
        n.saturating_sub(1)
    } else {
        knn
    };
    if knn == 0 || knn >= n {
        return Err(Error::Config(format!("knn must lie in [1, {}), got {knn}", n)));
    }
    let x = points.data();
    let mut d2 = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = sq_dist(&x[i * dim..(i + 1) * dim], &x[j * dim..(j + 1) * dim]);
            d2[i * n + j] = d;
            d2[j * n + i] = d;
        }
    }
    let nearest: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut idx: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            idx.sort_by(|&a, &b| d2[i * n + a].total_cmp(&d2[i * n + b]).then(a.cmp(&b)));
            idx.truncate(knn);
            idx
        })
        .collect();
    let sigma = match sigma {
        SigmaMode::Fixed(s) if s > 0.0 => s,
        SigmaMode::Fixed(s) => return Err(Error::Config(format!("sigma must be > 0, got {s}"))),
        SigmaMode::Median => {
            let mut ds: Vec<f64> = nearest
                .iter()
                .enumerate()
                .flat_map(|(i, nb)| nb.iter().map(move |&j| (i, j)))
                .map(|(i, j)| d2[i * n + j].sqrt())
                .filter(|&d| d > 0.0)
                .collect();
            if ds.is_empty() {
                1.0
            } else {
                ds.sort_by(f64::total_cmp);
                ds[ds.len() / 2]
            }
        }
    };
    let weight = |i: usize, j: usize| (-d2[i * n + j] / (2.0 * sigma * sigma)).exp();
    let mut neighbours: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for i in 0..n {
        for &j in &nearest[i] {
            if j > i && nearest[j].contains(&i) {
                neighbours[i].push((j, weight(i, j)));
                neighbours[j].push((i, weight(i, j)));
            }
        }
    }
    for i in 0..n {
        if neighbours[i].is_empty() {
            let j = nearest[i][0];
            neighbours[i].push((j, weight(i, j)));
            neighbours[j].push((i, weight(i, j)));
        }
    }
    for nb in &mut neighbours {
        nb.sort_by_key(|e| e.0);
        nb.dedup_by_key(|e| e.0);
    }
    Ok(Affinity { neighbours })
}

/// Modified Gram–Schmidt on a column-major `n×cols` block.
fn orthonormalize(q: &mut [f64], n: usize, cols: usize) {
    for c in 0..cols {
        for p in 0..c {
            let dot: f64 = (0..n).map(|i| q[p * n + i] * q[c * n + i]).sum();
            for i in 0..n {
                q[c * n + i] -= dot * q[p * n + i];
            }
        }
        let norm = (0..n).map(|i| q[c * n + i].powi(2)).sum::<f64>().sqrt();
        if norm > 1e-300 {
            q[c * n..(c + 1) * n].iter_mut().for_each(|v| *v /= norm);
        }
    }
}

/// Cyclic Jacobi eigen-decomposition of a symmetric `k×k` row-major
/// matrix. Returns eigenvalues and column eigenvectors (row-major `k×k`).
pub fn jacobi_eigen(a: &[f64], k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = a.to_vec();
    let mut v = vec![0.0; k * k];
    for i in 0..k {
        v[i * k + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..k)
            .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * k + j].powi(2))
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..k {
            for q in p + 1..k {
                let apq = a[p * k + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * k + q] - a[p * k + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..k {
                    let (arp, arq) = (a[r * k + p], a[r * k + q]);
                    a[r * k + p] = c * arp - s * arq;
                    a[r * k + q] = s * arp + c * arq;
                }
                for r in 0..k {
                    let (apr, aqr) = (a[p * k + r], a[q * k + r]);
                    a[p * k + r] = c * apr - s * aqr;
                    a[q * k + r] = s * apr + c * aqr;
                }
                for r in 0..k {
                    let (vrp, vrq) = (v[r * k + p], v[r * k + q]);
                    v[r * k + p] = c * vrp - s * vrq;
                    v[r * k + q] = s * vrp + c * vrq;
                }
            }
        }
    }
    ((0..k).map(|i| a[i * k + i]).collect(), v)
}

/// The `count` eigenvectors of `L_sym = I − D^{-1/2} A D^{-1/2}` with the
/// smallest eigenvalues, by subspace iteration on `2I − L_sym` with
/// Rayleigh–Ritz extraction. Returns ascending eigenvalues and a
/// column-major `n×count` block.
pub fn smallest_laplacian_eigenvectors(
    graph: &Affinity,
    count: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = graph.len();
    if count == 0 || count > n {
        return Err(Error::Config(format!(
            "cannot extract {count} eigenvectors of a {n}-node graph"
        )));
    }
    let block = (count + 8).min(n);
    let inv_sqrt: Vec<f64> = graph
        .degrees()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<f64> = (0..n * block).map(|_| rng.random::<f64>() - 0.5).collect();
    orthonormalize(&mut q, n, block);
    let mut y = vec![0.0; n * block];
    let mut ritz = vec![0.0; block];
    for _ in 0..max_iters.max(1) {
        graph.shifted_apply(&inv_sqrt, &q, block, &mut y);
        // Rayleigh–Ritz on span(q)
        let mut h = vec![0.0; block * block];
        for a in 0..block {
            for b in a..block {
                let v: f64 = (0..n).map(|i| q[a * n + i] * y[b * n + i]).sum();
                h[a * block + b] = v;
                h[b * block + a] = v;
            }
        }
        let (vals, vecs) = jacobi_eigen(&h, block);
        let mut order: Vec<usize> = (0..block).collect();
        order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
        let mut rq = vec![0.0; n * block];
        let mut ry = vec![0.0; n * block];
        for (c, &o) in order.iter().enumerate() {
            for r in 0..block {
                let w = vecs[r * block + o];
                if w == 0.0 {
                    continue;
                }
                for i in 0..n {
                    rq[c * n + i] += w * q[r * n + i];
                    ry[c * n + i] += w * y[r * n + i];
                }
            }
            ritz[c] = vals[o];
        }
        let resid = (0..count)
            .map(|c| {
                (0..n)
                    .map(|i| (ry[c * n + i] - ritz[c] * rq[c * n + i]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        if resid < tol {
            q = rq;
            break;
        }
        q = ry;
        orthonormalize(&mut q, n, block);
    }
    let eigenvalues = ritz[..count].iter().map(|m| 2.0 - m).collect();
    q.truncate(n * count);
    Ok((eigenvalues, q))
}

/// Spectral clustering of `codes` (`[h·w, K]`) into `classes` groups:
/// mutual-kNN Gaussian affinity, normalised Laplacian embedding, row
/// normalisation and k-means.
pub fn spectral_cluster(
    codes: &Tensor<f64>,
    grid: (usize, usize),
    classes: usize,
    opts: &SpectralOptions,
) -> Result<SpectralResult> {
    let s = codes.shape();
    let (h, w) = grid;
    if s.len() != 2 || s[0] != h * w {
        return Err(Error::dim("spectral_cluster", s, &[h * w]));
    }
    if classes < 2 {
        return Err(Error::Config(format!("classes must be >= 2, got {classes}")));
    }
    let points = if opts.spatial_weight > 0.0 {
        let dim = s[1] + 2;
        let mut data = Vec::with_capacity(s[0] * dim);
        for (i, row) in codes.data().chunks_exact(s[1]).enumerate() {
            data.extend_from_slice(row);
            data.push(opts.spatial_weight * (i / w) as f64 / h as f64);
            data.push(opts.spatial_weight * (i % w) as f64 / w as f64);
        }
        Tensor::new(&[s[0], dim], data)?
    } else {
        codes.clone()
    };
    let graph = knn_affinity(&points, opts.knn, opts.sigma)?;
    let (comp, components) = graph.components();
    if components > classes {
        warn!("affinity graph has {components} components for {classes} classes; labelling by component");
        let mut sizes = vec![0usize; components];
        comp.iter().for_each(|&c| sizes[c] += 1);
        let mut order: Vec<usize> = (0..components).collect();
        order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
        let mut label_of = vec![classes - 1; components];
        for (rank, &c) in order.iter().take(classes - 1).enumerate() {
            label_of[c] = rank;
        }
        return Ok(SpectralResult {
            labels: comp.iter().map(|&c| label_of[c]).collect(),
            components,
            disconnected: true,
            eigenvalues: Vec::new(),
        });
    }
    let n = s[0];
    let (eigenvalues, vecs) = smallest_laplacian_eigenvectors(&graph, classes, opts.seed, opts.max_iters, opts.tol)?;
    let mut emb = vec![0.0; n * classes];
    for i in 0..n {
        let row: Vec<f64> = (0..classes).map(|c| vecs[c * n + i]).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        for c in 0..classes {
            emb[i * classes + c] = if norm > 0.0 { row[c] / norm } else { 0.0 };
        }
    }
    let km = kmeans(&Tensor::new(&[n, classes], emb)?, classes, opts.seed, 300)?;
    Ok(SpectralResult {
        labels: km.labels,
        components,
        disconnected: false,
        eigenvalues,
    })
}

/// `BndCon(c) = border cells of c / √(cells of c)`; 0 for empty classes.
pub fn boundary_connectivity(labels: &[usize], h: usize, w: usize, classes: usize) -> Result<Vec<f64>> {
    if labels.len() != h * w {
        return Err(Error::dim("boundary_connectivity", &[labels.len()], &[h, w]));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Domain(format!("label {bad} out of range for {classes} classes")));
    }
    let mut area = vec![0usize; classes];
    let mut border = vec![0usize; classes];
    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x];
            area[l] += 1;
            if y == 0 || x == 0 || y + 1 == h || x + 1 == w {
                border[l] += 1;
            }
        }
    }
    Ok((0..classes)
        .map(|c| {
            if area[c] == 0 {
                0.0
            } else {
                border[c] as f64 / (area[c] as f64).sqrt()
            }
        })
        .collect())
}

/// Foreground mask from label grid: classes with `BndCon < tau` are
/// foreground. When every non-empty class falls on the same side, only the
/// class with the largest BndCon is background.
pub fn boundary_connectivity_select(
    labels: &[usize],
    h: usize,
    w: usize,
    classes: usize,
    tau: f64,
) -> Result<(Vec<bool>, Vec<f64>)> {
    let bnd = boundary_connectivity(labels, h, w, classes)?;
    let present: Vec<bool> = (0..classes).map(|c| labels.contains(&c)).collect();
    let mut fg: Vec<bool> = (0..classes).map(|c| present[c] && bnd[c] < tau).collect();
    let n_fg = fg.iter().filter(|&&f| f).count();
    let n_present = present.iter().filter(|&&p| p).count();
    if n_fg == 0 || n_fg == n_present {
        let bg = (0..classes)
            .filter(|&c| present[c])
            .fold(None, |best: Option<usize>, c| match best {
                Some(b) if bnd[b] >= bnd[c] => Some(b),
                _ => Some(c),
            });
        fg = (0..classes).map(|c| present[c] && Some(c) != bg).collect();
    }
    Ok((labels.iter().map(|&l| fg[l]).collect(), bnd))
}

/// Clustering back end of [`segment_image`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SegmentMethod {
    KMeans,
    Spectral,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationResult {
    pub h: usize,
    pub w: usize,
    /// Row-major `h×w` labels in `[0, classes)`.
    pub label_grid: Vec<usize>,
    pub fg_mask: Vec<bool>,
    pub bndcon_per_class: Vec<f64>,
    /// Set when the spectral path fell back to graph components.
    pub disconnected: bool,
}

/// Options of [`segment_image`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentOptions {
    pub classes: usize,
    pub method: SegmentMethod,
    pub tau: f64,
    pub spectral: SpectralOptions,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        SegmentOptions {
            classes: 2,
            method: SegmentMethod::Spectral,
            tau: 1.0,
            spectral: SpectralOptions::default(),
        }
    }
}

/// Clusters a grid of codes and derives the foreground mask by boundary
/// connectivity.
pub fn segment_codes(codes: &Tensor<f64>, h: usize, w: usize, opts: &SegmentOptions) -> Result<SegmentationResult> {
    let (labels, disconnected) = match opts.method {
        SegmentMethod::KMeans => (kmeans(codes, opts.classes, opts.spectral.seed, 300)?.labels, false),
        SegmentMethod::Spectral => {
            let r = spectral_cluster(codes, (h, w), opts.classes, &opts.spectral)?;
            (r.labels, r.disconnected)
        }
    };
    let (fg_mask, bndcon) = boundary_connectivity_select(&labels, h, w, opts.classes, opts.tau)?;
    Ok(SegmentationResult {
        h,
        w,
        label_grid: labels,
        fg_mask,
        bndcon_per_class: bndcon,
        disconnected,
    })
}

/// Encode, sparse code and cluster the codes of one `[C, H, W]` image.
pub fn segment_image<T: Scalar>(
    model: &ScVae<T>,
    image: &Tensor<f64>,
    opts: &SegmentOptions,
) -> Result<SegmentationResult> {
    let grid = sparse_code_grid(&model.encode(&image.cast::<T>())?, &model.lista)?;
    let codes = grid.codes.expect("reconstruct populates codes");
    let s = codes.shape().to_vec();
    let flat = codes.cast::<f64>().reshape(&[s[0] * s[1], s[2]])?;
    segment_codes(&flat, s[0], s[1], opts)
}
