//! Two-point correlation structure of grayscale images.
//!
//! For a displacement `a = (dx, dy)` the correlation coefficient `rho(a)` is
//! the Pearson coefficient between `i(p + a)` and `i(p)` over every pixel
//! `p` for which both ends of the pair lie inside the image. Expanding
//! Pearson's formula leaves one cross term, `sum_p i(p + a) i(p)`, and
//! windowed first and second moments over the two overlapping windows.
//! The cross term for every displacement comes from one zero-padded
//! FFT autocorrelation. The windows are rectangles anchored at image
//! corners, so their sums are read from corner-anchored cumulative tables.
//!
//! Since `rho(a) == rho(-a)`, only the upper half-plane of the padded lag
//! grid is kept: rows `dy` in `0..h`, columns `dx` in `-(w-1)..=w`, with
//! `dx > 0` on the `dy == 0` row. That is `2wh - w` displacements (523776
//! for 512x512); the `dx == w` column has no pairs and is always excluded.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cppn::ImageRgb;
use crate::fft2::autocorrelate;

/// Number of distance bins in a correlation curve.
pub const CURVE_BINS: usize = 512;

/// Displacements whose window standard deviations multiply to at most this
/// value are excluded.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorrError {
    #[error("image is {width}x{height}; correlation needs at least 2x2")]
    TooSmall { width: usize, height: usize },
    #[error("displacement ({dx}, {dy}) has {pairs} pixel pairs; at least 2 are needed")]
    TooFewPairs { dx: i64, dy: i64, pairs: u64 },
    #[error("zero variance at displacement ({dx}, {dy})")]
    Degenerate { dx: i64, dy: i64 },
    #[error("luminance buffer holds {actual} values, expected {expected}")]
    Shape { expected: usize, actual: usize },
    #[error("invalid correlation map stream: {0}")]
    Format(String),
}

/// RGB weights for the gray conversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LumaWeights {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl LumaWeights {
    /// ITU-R BT.601 luma weights.
    pub const REC601: Self = Self {
        r: 0.299,
        g: 0.587,
        b: 0.114,
    };
}

impl Default for LumaWeights {
    fn default() -> Self {
        Self::REC601
    }
}

/// Per-pixel gray level in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Luminance {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Luminance {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, CorrError> {
        if values.len() != width * height {
            return Err(CorrError::Shape {
                expected: width * height,
                actual: values.len(),
            });
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            values,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// The image turned by 180 degrees.
    pub fn rotated_half_turn(&self) -> Self {
        let mut values = self.values.clone();
        values.reverse();
        Self {
            width: self.width,
            height: self.height,
            values,
        }
    }

    /// Gray RGB image with every channel `round(255 v)`.
    pub fn to_gray_rgb(&self) -> ImageRgb {
        let data = self
            .values
            .iter()
            .flat_map(|&v| {
                let c = crate::cppn::quantize(v);
                [c, c, c]
            })
            .collect();
        ImageRgb::new(self.width, self.height, data)
    }
}

pub fn luminance(img: &ImageRgb) -> Luminance {
    luminance_with(img, LumaWeights::REC601)
}

pub fn luminance_with(img: &ImageRgb, weights: LumaWeights) -> Luminance {
    let values = img
        .data
        .chunks_exact(3)
        .map(|px| {
            (weights.r * px[0] as f64 + weights.g * px[1] as f64 + weights.b * px[2] as f64)
                / 255.0
        })
        .collect();
    Luminance {
        width: img.width,
        height: img.height,
        values,
    }
}

/// A pixel displacement `(dx, dy)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Displacement {
    pub dx: i64,
    pub dy: i64,
}

impl Displacement {
    pub const fn new(dx: i64, dy: i64) -> Self {
        Self { dx, dy }
    }

    pub fn length(&self) -> f64 {
        ((self.dx * self.dx + self.dy * self.dy) as f64).sqrt()
    }

    /// Distance bin `floor(|a|)`.
    pub fn bin(&self) -> usize {
        // Integer square root avoids floating error at perfect squares.
        let sq = (self.dx * self.dx + self.dy * self.dy) as u64;
        let mut r = (sq as f64).sqrt() as u64;
        while r * r > sq {
            r -= 1;
        }
        while (r + 1) * (r + 1) <= sq {
            r += 1;
        }
        r as usize
    }

    /// Representative of `{a, -a}` in the upper half-plane.
    pub fn canonical(self) -> Self {
        if self.dy < 0 || (self.dy == 0 && self.dx < 0) {
            Self::new(-self.dx, -self.dy)
        } else {
            self
        }
    }

    /// Number of overlapping pixel pairs in a `width x height` image.
    pub fn pair_count(&self, width: usize, height: usize) -> u64 {
        let cols = (width as i64 - self.dx.abs()).max(0) as u64;
        let rows = (height as i64 - self.dy.abs()).max(0) as u64;
        cols * rows
    }
}

/// One displacement of a [`CorrelationMap`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapEntry {
    pub displacement: Displacement,
    pub pairs: u64,
    /// `None` when the displacement is excluded.
    pub rho: Option<f64>,
}

/// Pearson coefficients over the upper half-plane of displacements.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMap {
    width: usize,
    height: usize,
    /// `height` rows of `2 * width` columns; column `c` is `dx = c - (width - 1)`.
    /// NaN marks excluded displacements and cells outside the domain.
    rho: Vec<f64>,
}

impl CorrelationMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    fn columns(&self) -> usize {
        2 * self.width
    }

    fn in_domain(&self, d: Displacement) -> bool {
        let w = self.width as i64;
        d.dy >= 0
            && d.dy < self.height as i64
            && d.dx <= w
            && if d.dy == 0 { d.dx > 0 } else { d.dx > -w }
    }

    fn index(&self, d: Displacement) -> usize {
        d.dy as usize * self.columns() + (d.dx + self.width as i64 - 1) as usize
    }

    /// Number of displacements in the domain, `2wh - w`.
    pub fn domain_size(&self) -> usize {
        2 * self.width * self.height - self.width
    }

    /// Coefficient at `a` or `-a`. `None` for excluded or out-of-range
    /// displacements and for `(0, 0)`.
    pub fn get(&self, d: Displacement) -> Option<f64> {
        let d = d.canonical();
        if !self.in_domain(d) {
            return None;
        }
        let v = self.rho[self.index(d)];
        (!v.is_nan()).then_some(v)
    }

    /// Every displacement of the domain, row by row (`dy`, then `dx`).
    pub fn iter(&self) -> impl Iterator<Item = MapEntry> + '_ {
        let (w, h) = (self.width as i64, self.height as i64);
        (0..h).flat_map(move |dy| {
            let start = if dy == 0 { 1 } else { -(w - 1) };
            (start..=w).map(move |dx| {
                let displacement = Displacement::new(dx, dy);
                let v = self.rho[self.index(displacement)];
                MapEntry {
                    displacement,
                    pairs: displacement.pair_count(self.width, self.height),
                    rho: (!v.is_nan()).then_some(v),
                }
            })
        })
    }

    pub fn retained(&self) -> impl Iterator<Item = (Displacement, f64)> + '_ {
        self.iter().filter_map(|e| e.rho.map(|r| (e.displacement, r)))
    }

    pub fn excluded(&self) -> impl Iterator<Item = Displacement> + '_ {
        self.iter()
            .filter(|e| e.rho.is_none())
            .map(|e| e.displacement)
    }

    pub fn retained_count(&self) -> usize {
        self.retained().count()
    }

    pub fn excluded_count(&self) -> usize {
        self.domain_size() - self.retained_count()
    }

    /// True when no displacement survived, i.e. the image is constant.
    pub fn is_degenerate(&self) -> bool {
        self.retained_count() == 0
    }

    /// Writes the diagnostic binary grid.
    ///
    /// Layout (little endian): magic `PSCMAP01`, `u32` width, `u32` height,
    /// `u32` columns (`2 * width`), `u32` rows (`height`), then `rows *
    /// columns` `f64` values. Row `r` holds `dy = r`; column `c` holds
    /// `dx = c - (width - 1)`. Excluded and out-of-domain cells are NaN.
    pub fn write_binary<W: Write>(&self, mut out: W) -> io::Result<()> {
        out.write_all(MAP_MAGIC)?;
        for v in [self.width, self.height, self.columns(), self.height] {
            out.write_all(&(v as u32).to_le_bytes())?;
        }
        for v in &self.rho {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self, CorrError> {
        let io_err = |e: io::Error| CorrError::Format(e.to_string());
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(io_err)?;
        if &magic != MAP_MAGIC {
            return Err(CorrError::Format("bad magic".into()));
        }
        let mut header = [0u32; 4];
        for v in &mut header {
            let mut b = [0u8; 4];
            input.read_exact(&mut b).map_err(io_err)?;
            *v = u32::from_le_bytes(b);
        }
        let [width, height, cols, rows] = header.map(|v| v as usize);
        if cols != 2 * width || rows != height {
            return Err(CorrError::Format("inconsistent header".into()));
        }
        let mut rho = vec![0.0; cols * rows];
        let mut b = [0u8; 8];
        for v in &mut rho {
            input.read_exact(&mut b).map_err(io_err)?;
            *v = f64::from_le_bytes(b);
        }
        Ok(Self { width, height, rho })
    }
}

const MAP_MAGIC: &[u8; 8] = b"PSCMAP01";

/// Inclusive cumulative sums anchored at each image corner. A rectangle
/// touching a corner is read with a single lookup.
struct CornerSums {
    width: usize,
    height: usize,
    top_left: Vec<f64>,
    top_right: Vec<f64>,
    bottom_left: Vec<f64>,
    bottom_right: Vec<f64>,
}

#[derive(Clone, Copy)]
enum Corner {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl CornerSums {
    fn new(plane: &[f64], width: usize, height: usize) -> Self {
        let build = |flip_x: bool, flip_y: bool| {
            let mut t = vec![0.0; width * height];
            for yi in 0..height {
                let y = if flip_y { height - 1 - yi } else { yi };
                let mut row = 0.0;
                for xi in 0..width {
                    let x = if flip_x { width - 1 - xi } else { xi };
                    row += plane[y * width + x];
                    let above = if yi == 0 {
                        0.0
                    } else {
                        let py = if flip_y { y + 1 } else { y - 1 };
                        t[py * width + x]
                    };
                    t[y * width + x] = row + above;
                }
            }
            t
        };
        Self {
            width,
            height,
            top_left: build(false, false),
            top_right: build(true, false),
            bottom_left: build(false, true),
            bottom_right: build(true, true),
        }
    }

    /// Sum over the `cols x rows` rectangle anchored at `corner`.
    fn rect(&self, corner: Corner, cols: usize, rows: usize) -> f64 {
        if cols == 0 || rows == 0 {
            return 0.0;
        }
        let (w, h) = (self.width, self.height);
        match corner {
            Corner::TopLeft => self.top_left[(rows - 1) * w + cols - 1],
            Corner::TopRight => self.top_right[(rows - 1) * w + (w - cols)],
            Corner::BottomLeft => self.bottom_left[(h - rows) * w + cols - 1],
            Corner::BottomRight => self.bottom_right[(h - rows) * w + (w - cols)],
        }
    }
}

/// Pearson coefficient for every displacement of the upper half-plane.
///
/// Displacements with fewer than two pairs, with a constant window, or
/// whose window standard deviations multiply to at most [`VARIANCE_FLOOR`],
/// are excluded. A
/// constant image yields a map with every displacement excluded; see
/// [`CorrelationMap::is_degenerate`].
pub fn correlation_map(lum: &Luminance) -> Result<CorrelationMap, CorrError> {
    let (w, h) = (lum.width, lum.height);
    if w < 2 || h < 2 {
        return Err(CorrError::TooSmall {
            width: w,
            height: h,
        });
    }
    // Pearson is shift invariant; centering keeps the sums small.
    let mean = lum.values.iter().sum::<f64>() / lum.values.len() as f64;
    let centered: Vec<f64> = lum.values.iter().map(|v| v - mean).collect();
    let squared: Vec<f64> = centered.iter().map(|v| v * v).collect();

    let cross = autocorrelate(&centered, w, h);
    let sums = CornerSums::new(&centered, w, h);
    let sq_sums = CornerSums::new(&squared, w, h);
    // Counts of unequal neighbours detect exactly flat windows, whose
    // variance would otherwise be rounding residue.
    let v = &lum.values;
    let steps_x: Vec<f64> = (0..h)
        .flat_map(|y| (0..w - 1).map(move |x| (v[y * w + x] != v[y * w + x + 1]) as u8 as f64))
        .collect();
    let steps_y: Vec<f64> = (0..(h - 1) * w)
        .map(|i| (v[i] != v[i + w]) as u8 as f64)
        .collect();
    let steps_x = CornerSums::new(&steps_x, w - 1, h);
    let steps_y = CornerSums::new(&steps_y, w, h - 1);
    let flat = |corner, cols: usize, rows: usize| {
        steps_x.rect(corner, cols - 1, rows) == 0.0 && steps_y.rect(corner, cols, rows - 1) == 0.0
    };

    let cols = 2 * w;
    let mut rho = vec![f64::NAN; cols * h];
    let (wi, hi) = (w as i64, h as i64);
    for dy in 0..hi {
        let start = if dy == 0 { 1 } else { -(wi - 1) };
        for dx in start..wi {
            let rect_w = (wi - dx.abs()) as usize;
            let rect_h = (hi - dy) as usize;
            let n = (rect_w * rect_h) as f64;
            if rect_w * rect_h < 2 {
                continue;
            }
            // X = i(p + a) sits on the bottom rows; Y = i(p) on the top rows.
            let (lead, trail) = if dx >= 0 {
                (Corner::BottomRight, Corner::TopLeft)
            } else {
                (Corner::BottomLeft, Corner::TopRight)
            };
            let mean_x = sums.rect(lead, rect_w, rect_h) / n;
            let mean_y = sums.rect(trail, rect_w, rect_h) / n;
            if flat(lead, rect_w, rect_h) || flat(trail, rect_w, rect_h) {
                continue;
            }
            let var_x = (sq_sums.rect(lead, rect_w, rect_h) / n - mean_x * mean_x).max(0.0);
            let var_y = (sq_sums.rect(trail, rect_w, rect_h) / n - mean_y * mean_y).max(0.0);
            let spread = var_x.sqrt() * var_y.sqrt();
            if spread <= VARIANCE_FLOOR {
                continue;
            }
            let col = dx.rem_euclid(cols as i64) as usize;
            let raw = cross[dy as usize * cols + col];
            let cov = raw / n - mean_x * mean_y;
            let idx = dy as usize * cols + (dx + wi - 1) as usize;
            rho[idx] = (cov / spread).clamp(-1.0, 1.0);
        }
    }
    Ok(CorrelationMap {
        width: w,
        height: h,
        rho,
    })
}

/// Direct Pearson coefficient over explicitly gathered pairs
/// `(i(p + a), i(p))`. Reference implementation for [`correlation_map`].
pub fn brute_force_rho(lum: &Luminance, a: Displacement) -> Result<f64, CorrError> {
    let (w, h) = (lum.width as i64, lum.height as i64);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let (u, v) = (x + a.dx, y + a.dy);
            if (0..w).contains(&u) && (0..h).contains(&v) {
                xs.push(lum.values[(v * w + u) as usize]);
                ys.push(lum.values[(y * w + x) as usize]);
            }
        }
    }
    if xs.len() < 2 {
        return Err(CorrError::TooFewPairs {
            dx: a.dx,
            dy: a.dy,
            pairs: xs.len() as u64,
        });
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if constant(&xs) || constant(&ys) || sxx == 0.0 || syy == 0.0 {
        return Err(CorrError::Degenerate { dx: a.dx, dy: a.dy });
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// How displacement coefficients are averaged within a distance bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinWeighting {
    /// Weight each displacement by its pair count.
    #[default]
    PairCount,
    /// Every displacement counts once.
    Uniform,
}

/// One distance bin `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveBin {
    pub lo: usize,
    pub hi: usize,
    /// `None` for a bin without contributing displacements.
    pub mean_rho: Option<f64>,
    /// Total pixel pairs over contributing displacements.
    pub pair_weight: u64,
    pub n_displacements: usize,
}

impl CurveBin {
    pub fn is_empty(&self) -> bool {
        self.n_displacements == 0
    }
}

/// Angle-averaged correlation as a function of distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve {
    pub bins: Vec<CurveBin>,
}

pub fn radial_curve(map: &CorrelationMap) -> CorrelationCurve {
    radial_curve_with(map, CURVE_BINS, BinWeighting::PairCount)
}

/// Bins every retained displacement at `floor(|a|)`; displacements beyond
/// the last bin are dropped.
pub fn radial_curve_with(
    map: &CorrelationMap,
    bins: usize,
    weighting: BinWeighting,
) -> CorrelationCurve {
    let mut weighted = vec![0.0f64; bins];
    let mut norm = vec![0.0f64; bins];
    let mut pairs = vec![0u64; bins];
    let mut counts = vec![0usize; bins];
    for entry in map.iter() {
        let Some(rho) = entry.rho else { continue };
        if entry.pairs == 0 {
            continue;
        }
        let k = entry.displacement.bin();
        if k >= bins {
            continue;
        }
        let wgt = match weighting {
            BinWeighting::PairCount => entry.pairs as f64,
            BinWeighting::Uniform => 1.0,
        };
        weighted[k] += wgt * rho;
        norm[k] += wgt;
        pairs[k] += entry.pairs;
        counts[k] += 1;
    }
    CorrelationCurve {
        bins: (0..bins)
            .map(|k| CurveBin {
                lo: k,
                hi: k + 1,
                mean_rho: (counts[k] > 0).then(|| weighted[k] / norm[k]),
                pair_weight: pairs[k],
                n_displacements: counts[k],
            })
            .collect(),
    }
}

impl CorrelationCurve {
    /// Curve whose bin `k` is `[k, k+1)` with the given means; `None` marks
    /// empty bins. Weights are set to 1 for non-empty bins.
    pub fn from_means(means: &[Option<f64>]) -> Self {
        Self {
            bins: means
                .iter()
                .enumerate()
                .map(|(k, m)| CurveBin {
                    lo: k,
                    hi: k + 1,
                    mean_rho: *m,
                    pair_weight: m.is_some() as u64,
                    n_displacements: m.is_some() as usize,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn mean(&self, bin: usize) -> Option<f64> {
        self.bins.get(bin).and_then(|b| b.mean_rho)
    }

    pub fn total_pair_weight(&self) -> u64 {
        self.bins.iter().map(|b| b.pair_weight).sum()
    }

    /// CSV with columns `bin_lo,bin_hi,mean_rho,pair_weight,n_displacements`;
    /// empty bins leave `mean_rho` blank.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["bin_lo", "bin_hi", "mean_rho", "pair_weight", "n_displacements"])?;
        for b in &self.bins {
            wtr.write_record([
                b.lo.to_string(),
                b.hi.to_string(),
                b.mean_rho.map(|v| v.to_string()).unwrap_or_default(),
                b.pair_weight.to_string(),
                b.n_displacements.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> csv::Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            bin_lo: usize,
            bin_hi: usize,
            mean_rho: Option<f64>,
            pair_weight: u64,
            n_displacements: usize,
        }
        let mut rdr = csv::Reader::from_reader(input);
        let mut bins = Vec::new();
        for row in rdr.deserialize() {
            let row: Row = row?;
            bins.push(CurveBin {
                lo: row.bin_lo,
                hi: row.bin_hi,
                mean_rho: row.mean_rho,
                pair_weight: row.pair_weight,
                n_displacements: row.n_displacements,
            });
        }
        Ok(Self { bins })
    }
}

/// Settings for turning an RGB image into a correlation curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurveOptions {
    pub luma: LumaWeights,
    pub weighting: BinWeighting,
    pub bins: usize,
}

impl Default for CurveOptions {
    fn default() -> Self {
        Self {
            luma: LumaWeights::REC601,
            weighting: BinWeighting::PairCount,
            bins: CURVE_BINS,
        }
    }
}

/// Luminance, correlation map and radial curve of an RGB image. `None` when
/// the image is constant.
pub fn image_curve(
    img: &ImageRgb,
    options: &CurveOptions,
) -> Result<Option<CorrelationCurve>, CorrError> {
    let map = correlation_map(&luminance_with(img, options.luma))?;
    Ok((!map.is_degenerate()).then(|| radial_curve_with(&map, options.bins, options.weighting)))
}
