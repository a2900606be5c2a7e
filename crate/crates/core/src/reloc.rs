//! Appearance-based relocalization.
//!
//! Harris corners carry 256-bit intensity-comparison descriptors. A
//! Hamming-space vocabulary turns each frame into a bag-of-words histogram,
//! retrieval ranks frames by L1 histogram distance, and Lowe's ratio test on
//! raw descriptors verifies each retrieved pair.

use alloc::vec::Vec;

use rand::Rng;
use thiserror::Error;

use crate::math;
use crate::rng::{self, splitmix64};

/// Smallest accepted image side.
pub const MIN_IMAGE_SIDE: usize = 64;
/// Descriptor length in bits.
pub const DESCRIPTOR_BITS: usize = 256;
/// Half-size of the descriptor sampling patch.
pub const PATCH_RADIUS: i32 = 15;
/// Keypoints closer than this to the border are discarded.
pub const BORDER: usize = 16;
pub const HARRIS_K: f64 = 0.04;
pub const MAX_KMEDIANS_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RelocError {
    #[error("image {width}x{height} is smaller than {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}")]
    ImageTooSmall { width: usize, height: usize },
    #[error("image buffer holds {got} pixels, expected {expected}")]
    BadBuffer { expected: usize, got: usize },
    #[error("need at least {needed} distinct descriptors, got {got}")]
    InsufficientDescriptors { needed: usize, got: usize },
    #[error("vocabulary size must be at least 2")]
    VocabularyTooSmall,
    #[error("vocabulary centroids are not distinct")]
    DuplicateCentroids,
}

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, RelocError> {
        if data.len() != width * height {
            return Err(RelocError::BadBuffer {
                expected: width * height,
                got: data.len(),
            });
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage {
            width,
            height,
            data: alloc::vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BinaryDescriptor(pub [u64; 4]);

impl BinaryDescriptor {
    pub fn hamming(&self, o: &BinaryDescriptor) -> u32 {
        self.0.iter().zip(&o.0).map(|(a, b)| (a ^ b).count_ones()).sum()
    }

    pub fn bit(&self, k: usize) -> bool {
        (self.0[k / 64] >> (k % 64)) & 1 == 1
    }

    fn set_bit(&mut self, k: usize) {
        self.0[k / 64] |= 1 << (k % 64);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: usize,
    pub y: usize,
    pub response: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feature {
    pub keypoint: Keypoint,
    pub descriptor: BinaryDescriptor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    /// Absolute Harris response threshold, intensities scaled to `[0, 1]`.
    pub threshold: f64,
    pub max_features: usize,
    /// Largest fraction of descriptor tests allowed to compare intensities
    /// closer than [`FLAT_DELTA`]. Patches over flat background produce
    /// descriptors that look alike everywhere, so they are dropped.
    pub max_flat_fraction: f64,
}

/// Intensity difference (8-bit scale) below which a test is uninformative.
pub const FLAT_DELTA: f64 = 2.0;

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            threshold: 1e-8,
            max_features: 300,
            max_flat_fraction: 0.1,
        }
    }
}

/// Fixed test-point pairs `(x1, y1, x2, y2)`. Offsets are isotropic Gaussian
/// with sigma `31 / 5`, rounded and clamped to the patch.
pub fn sampling_pattern() -> [[i32; 4]; DESCRIPTOR_BITS] {
    let mut state = rng::stage::DESCRIPTOR_PATTERN;
    let mut uniform = || {
        state = splitmix64(state);
        // 53 random bits in (0, 1].
        ((state >> 11) as f64 + 1.0) / (1u64 << 53) as f64
    };
    let sigma = 31.0 / 5.0;
    let mut normal_pair = || {
        let (u1, u2) = (uniform(), uniform());
        let r = math::sqrt(-2.0 * math::log(u1));
        let a = 2.0 * core::f64::consts::PI * u2;
        (r * math::cos(a) * sigma, r * math::sin(a) * sigma)
    };
    let q = |v: f64| (math::round(v) as i32).clamp(-PATCH_RADIUS, PATCH_RADIUS);
    let mut out = [[0i32; 4]; DESCRIPTOR_BITS];
    for slot in out.iter_mut() {
        loop {
            let (a, b) = normal_pair();
            let (c, d) = normal_pair();
            let p = [q(a), q(b), q(c), q(d)];
            if (p[0], p[1]) != (p[2], p[3]) {
                *slot = p;
                break;
            }
        }
    }
    out
}

const BINOMIAL5: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Separable 5-tap binomial blur with clamped borders.
fn blur5(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut tmp = alloc::vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (k, c) in BINOMIAL5.iter().enumerate() {
                let xx = (x as isize + k as isize - 2).clamp(0, w as isize - 1) as usize;
                s += c * src[y * w + xx];
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = alloc::vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (k, c) in BINOMIAL5.iter().enumerate() {
                let yy = (y as isize + k as isize - 2).clamp(0, h as isize - 1) as usize;
                s += c * tmp[yy * w + x];
            }
            out[y * w + x] = s;
        }
    }
    out
}

/// Harris response map over the image with intensities in `[0, 1]`.
pub fn harris_response(img: &GrayImage) -> Vec<f64> {
    let (w, h) = (img.width, img.height);
    let f: Vec<f64> = img.data.iter().map(|&v| v as f64 / 255.0).collect();
    let at = |x: isize, y: isize| {
        let xx = x.clamp(0, w as isize - 1) as usize;
        let yy = y.clamp(0, h as isize - 1) as usize;
        f[yy * w + xx]
    };
    let mut ixx = alloc::vec![0.0; w * h];
    let mut iyy = alloc::vec![0.0; w * h];
    let mut ixy = alloc::vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x - 1, y)
                - at(x - 1, y + 1))
                / 8.0;
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x, y - 1)
                - at(x + 1, y - 1))
                / 8.0;
            let k = y as usize * w + x as usize;
            ixx[k] = gx * gx;
            iyy[k] = gy * gy;
            ixy[k] = gx * gy;
        }
    }
    let (sxx, syy, sxy) = (blur5(&ixx, w, h), blur5(&iyy, w, h), blur5(&ixy, w, h));
    (0..w * h)
        .map(|k| {
            let tr = sxx[k] + syy[k];
            sxx[k] * syy[k] - sxy[k] * sxy[k] - HARRIS_K * tr * tr
        })
        .collect()
}

/// Detects corners and describes them. Output is ordered by decreasing
/// response, ties by row then column.
pub fn extract_features(img: &GrayImage, cfg: &FeatureConfig) -> Result<Vec<Feature>, RelocError> {
    let (w, h) = (img.width, img.height);
    if w < MIN_IMAGE_SIDE || h < MIN_IMAGE_SIDE {
        return Err(RelocError::ImageTooSmall { width: w, height: h });
    }
    let resp = harris_response(img);
    let mut kps = Vec::new();
    for y in BORDER..h - BORDER {
        for x in BORDER..w - BORDER {
            let r = resp[y * w + x];
            if !(r > cfg.threshold) {
                continue;
            }
            // 5x5 maximum; equal neighbours earlier in raster order win.
            let mut is_max = true;
            'nms: for dy in -2isize..=2 {
                for dx in -2isize..=2 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (xx, yy) = ((x as isize + dx) as usize, (y as isize + dy) as usize);
                    let o = resp[yy * w + xx];
                    let earlier = (dy, dx) < (0, 0);
                    if o > r || (earlier && o == r) {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if is_max {
                kps.push(Keypoint { x, y, response: r });
            }
        }
    }
    kps.sort_by(|a, b| b.response.total_cmp(&a.response).then((a.y, a.x).cmp(&(b.y, b.x))));

    let smooth = blur5(&img.data.iter().map(|&v| v as f64).collect::<Vec<_>>(), w, h);
    let pattern = sampling_pattern();
    let max_flat = cfg.max_flat_fraction * DESCRIPTOR_BITS as f64;
    let mut out = Vec::new();
    for kp in kps {
        if out.len() == cfg.max_features {
            break;
        }
        let mut d = BinaryDescriptor([0; 4]);
        let mut flat = 0;
        let at = |dx: i32, dy: i32| smooth[(kp.y as i32 + dy) as usize * w + (kp.x as i32 + dx) as usize];
        for (k, p) in pattern.iter().enumerate() {
            let (a, b) = (at(p[0], p[1]), at(p[2], p[3]));
            if (a - b).abs() < FLAT_DELTA {
                flat += 1;
            }
            if a < b {
                d.set_bit(k);
            }
        }
        if flat as f64 <= max_flat {
            out.push(Feature {
                keypoint: kp,
                descriptor: d,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    centroids: Vec<BinaryDescriptor>,
}

impl Vocabulary {
    /// Wraps centroids, checking `k >= 2` and distinctness.
    pub fn from_centroids(centroids: Vec<BinaryDescriptor>) -> Result<Self, RelocError> {
        if centroids.len() < 2 {
            return Err(RelocError::VocabularyTooSmall);
        }
        let mut sorted = centroids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|p| p[0] == p[1]) {
            return Err(RelocError::DuplicateCentroids);
        }
        Ok(Vocabulary { centroids })
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn centroids(&self) -> &[BinaryDescriptor] {
        &self.centroids
    }

    /// Index of the closest centroid, lowest index on ties.
    pub fn word(&self, d: &BinaryDescriptor) -> usize {
        nearest(&self.centroids, d)
    }

    pub fn histogram(&self, frame: usize, features: &[Feature]) -> BowHistogram {
        let mut bins = alloc::vec![0.0; self.k()];
        for f in features {
            bins[self.word(&f.descriptor)] += 1.0;
        }
        let n = features.len() as f64;
        if n > 0.0 {
            for b in bins.iter_mut() {
                *b /= n;
            }
        }
        BowHistogram {
            frame,
            bins,
            empty: features.is_empty(),
        }
    }
}

fn nearest(centroids: &[BinaryDescriptor], d: &BinaryDescriptor) -> usize {
    let mut best = (u32::MAX, 0);
    for (k, c) in centroids.iter().enumerate() {
        let dist = c.hamming(d);
        if dist < best.0 {
            best = (dist, k);
        }
    }
    best.1
}

fn all_distinct(c: &[BinaryDescriptor]) -> bool {
    let mut s = c.to_vec();
    s.sort_unstable();
    s.windows(2).all(|p| p[0] != p[1])
}

/// Hamming k-medians with k-means++ seeding drawn from the vocabulary stream of `seed`.
pub fn build_vocabulary(descriptors: &[BinaryDescriptor], k: usize, seed: u64) -> Result<Vocabulary, RelocError> {
    if k < 2 {
        return Err(RelocError::VocabularyTooSmall);
    }
    if descriptors.len() < k {
        return Err(RelocError::InsufficientDescriptors {
            needed: k,
            got: descriptors.len(),
        });
    }
    let mut rng = rng::stream(seed, rng::stage::VOCABULARY, 0);
    let n = descriptors.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(descriptors[rng.random_range(0..n)]);
    let mut d2: Vec<f64> = descriptors
        .iter()
        .map(|d| {
            let h = d.hamming(&centroids[0]) as f64;
            h * h
        })
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            let distinct = {
                let mut s = descriptors.to_vec();
                s.sort_unstable();
                s.dedup();
                s.len()
            };
            return Err(RelocError::InsufficientDescriptors { needed: k, got: distinct });
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, w) in d2.iter().enumerate() {
            if *w > 0.0 {
                if target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
        }
        // Rounding can leave `pick` on a zero-weight tail entry.
        if d2[pick] == 0.0 {
            pick = d2.iter().rposition(|w| *w > 0.0).unwrap_or(pick);
        }
        let c = descriptors[pick];
        centroids.push(c);
        for (w, d) in d2.iter_mut().zip(descriptors) {
            let h = d.hamming(&c) as f64;
            *w = w.min(h * h);
        }
    }

    let mut assign = alloc::vec![0usize; n];
    for _ in 0..MAX_KMEDIANS_ITERATIONS {
        for (a, d) in assign.iter_mut().zip(descriptors) {
            *a = nearest(&centroids, d);
        }
        let mut counts = alloc::vec![[0u32; DESCRIPTOR_BITS]; k];
        let mut sizes = alloc::vec![0u32; k];
        for (a, d) in assign.iter().zip(descriptors) {
            sizes[*a] += 1;
            for (b, c) in counts[*a].iter_mut().enumerate() {
                *c += d.bit(b) as u32;
            }
        }
        let mut next = centroids.clone();
        for c in 0..k {
            if sizes[c] == 0 {
                continue;
            }
            let mut m = BinaryDescriptor([0; 4]);
            for b in 0..DESCRIPTOR_BITS {
                let ones = 2 * counts[c][b];
                if ones > sizes[c] || (ones == sizes[c] && centroids[c].bit(b)) {
                    m.set_bit(b);
                }
            }
            next[c] = m;
        }
        // Revert colliding centroids until the set is distinct again.
        while !all_distinct(&next) {
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by_key(|&i| next[i]);
            for p in order.windows(2) {
                if next[p[0]] == next[p[1]] {
                    let changed = if next[p[1]] != centroids[p[1]] { p[1] } else { p[0] };
                    next[changed] = centroids[changed];
                }
            }
        }
        if next == centroids {
            break;
        }
        centroids = next;
    }
    Vocabulary::from_centroids(centroids)
}

/// L1-normalized word frequencies of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BowHistogram {
    pub frame: usize,
    pub bins: Vec<f64>,
    /// Set when the frame had no features; `bins` is then all zero.
    pub empty: bool,
}

impl BowHistogram {
    /// L1 distance; an empty histogram is at the maximal distance 2 from everything.
    pub fn distance(&self, o: &BowHistogram) -> f64 {
        if self.empty || o.empty {
            return 2.0;
        }
        self.bins.iter().zip(&o.bins).map(|(a, b)| (a - b).abs()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Retrieved {
    pub frame: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Database {
    entries: Vec<BowHistogram>,
}

impl Database {
    pub fn new() -> Self {
        Database::default()
    }

    pub fn insert(&mut self, h: BowHistogram) {
        self.entries.push(h);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Closest `top_k` frames. With `suppress = Some(t)`, frames whose index
    /// differs from the query's by at most `t` are skipped.
    pub fn query(&self, h: &BowHistogram, top_k: usize, suppress: Option<usize>) -> Vec<Retrieved> {
        let mut hits: Vec<Retrieved> = self
            .entries
            .iter()
            .filter(|e| suppress.is_none_or(|t| e.frame.abs_diff(h.frame) > t))
            .map(|e| Retrieved {
                frame: e.frame,
                distance: e.distance(h),
            })
            .collect();
        hits.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.frame.cmp(&b.frame)));
        hits.truncate(top_k);
        hits
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoopCandidate {
    pub i: usize,
    pub j: usize,
    pub matches: usize,
    pub passed: bool,
}

/// Number of features of `a` whose nearest neighbour in `b` passes the ratio test.
pub fn ratio_matches(a: &[Feature], b: &[Feature], ratio: f64) -> usize {
    let mut count = 0;
    for fa in a {
        let (mut d1, mut d2) = (u32::MAX, u32::MAX);
        for fb in b {
            let d = fa.descriptor.hamming(&fb.descriptor);
            if d < d1 {
                d2 = d1;
                d1 = d;
            } else if d < d2 {
                d2 = d;
            }
        }
        // A lone reference feature has no second neighbour; compare against
        // one more than the largest possible distance.
        let d2 = if d2 == u32::MAX { DESCRIPTOR_BITS as f64 + 1.0 } else { d2 as f64 };
        if d1 != u32::MAX && (d1 as f64) < ratio * d2 {
            count += 1;
        }
    }
    count
}

/// Ratio-test verification of frames `i` and `j`.
pub fn verify(i: usize, a: &[Feature], j: usize, b: &[Feature], ratio: f64, n_th: usize) -> LoopCandidate {
    let (i, j, a, b) = if i <= j { (i, j, a, b) } else { (j, i, b, a) };
    let matches = ratio_matches(a, b, ratio);
    LoopCandidate {
        i,
        j,
        matches,
        passed: matches >= n_th,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopParams {
    pub t_loop: usize,
    pub n_th: usize,
    pub ratio: f64,
    pub top_k: usize,
}

impl Default for LoopParams {
    fn default() -> Self {
        LoopParams {
            t_loop: 50,
            n_th: 20,
            ratio: 0.7,
            top_k: 20,
        }
    }
}

/// Retrieval stage of [`detect_loops`]: unique pairs `(i, j)`, `i < j`, in
/// sorted order, whose index gap exceeds `t_loop`.
pub fn retrieval_pairs(histograms: &[BowHistogram], params: &LoopParams) -> Vec<(usize, usize)> {
    let mut db = Database::new();
    for h in histograms {
        db.insert(h.clone());
    }
    let mut pairs = Vec::new();
    for h in histograms {
        for r in db.query(h, params.top_k, Some(params.t_loop)) {
            pairs.push((h.frame.min(r.frame), h.frame.max(r.frame)));
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

/// Verified loop candidates over a sequence of per-frame features, sorted by `(i, j)`.
pub fn detect_loops(frames: &[Vec<Feature>], vocab: &Vocabulary, params: &LoopParams) -> Vec<LoopCandidate> {
    let hists: Vec<BowHistogram> = frames.iter().enumerate().map(|(k, f)| vocab.histogram(k, f)).collect();
    retrieval_pairs(&hists, params)
        .into_iter()
        .map(|(i, j)| verify(i, &frames[i], j, &frames[j], params.ratio, params.n_th))
        .filter(|c| c.passed)
        .collect()
}
