//! Acceptance checks. Runs without the libtest harness so every criterion
//! prints exactly one `PASS` or `FAIL` line; the process exits nonzero if
//! any criterion fails.

// Negated comparisons make NaN fail a check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::HashSet;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use patternscope::arch::{ArchitectureSpec, GridLists};
use patternscope::corr::{
    correlation_map, image_curve, luminance, CorrelationCurve, CurveOptions, Displacement,
    Luminance,
};
use patternscope::cppn::{ImageRgb, Network};
use patternscope::pipeline::{
    curve_set, generate_dataset, plan_dataset, render_record, Manifest, RecordFilter,
    RenderOptions, MANIFEST_FILE,
};
use patternscope::stats::{
    compare_sets, student_t_sf, welch_bin, Alternative, CompareOptions, CurveSet,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;

const GRID_SPECS: usize = 882;
const GRID_SEEDS: u64 = 40;
const GRID_RECORDS: usize = 35_280;
const MAP_SIDE: usize = 512;
const MAP_DISPLACEMENTS: usize = 523_776;
const MAP_TIME_LIMIT: Duration = Duration::from_secs(2);
const ORACLE_IMAGES: usize = 100;
const ORACLE_MAX_SIDE: usize = 16;
const ORACLE_TOL: f64 = 1e-8;
const WELCH_P_TOL: f64 = 1e-9;
const T_TAIL_TOL: f64 = 1e-10;
const THRESHOLD_ALPHA_BASE: f64 = 0.12;
const THRESHOLD_SCOPE: usize = 300;
const THRESHOLD_EXPECTED: f64 = 4.0e-4;
const THRESHOLD_TOL: f64 = 1e-15;
const DETERMINISM_IMAGES: usize = 10;
const TREND_SEEDS: u64 = 20;
const TREND_BINS: std::ops::RangeInclusive<usize> = 20..=60;
const TREND_P: f64 = 0.01;
const TREND_MIN_BINS: usize = 30;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("grid cardinality", grid_cardinality),
        ("coefficient count", coefficient_count),
        ("oracle equivalence", oracle_equivalence),
        ("welch engine", welch_engine),
        ("threshold reproduction", threshold_reproduction),
        ("determinism", determinism),
        ("trend: layers", trend_layers),
        ("trend: neurons", trend_neurons),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {name}: {reason} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}

fn grid_cardinality() -> Outcome {
    let grid = GridLists::reference();
    let specs = grid.specs().map_err(|e| e.to_string())?;
    ensure!(specs.len() == GRID_SPECS, "{} specs, expected {GRID_SPECS}", specs.len());
    let distinct: HashSet<String> = specs
        .iter()
        .map(|s| serde_json::to_string(s).unwrap())
        .collect();
    ensure!(distinct.len() == GRID_SPECS, "{} distinct specs", distinct.len());

    let seeds: Vec<u64> = (0..GRID_SEEDS).collect();
    let plan = plan_dataset(&grid, &seeds, 512, 512).map_err(|e| e.to_string())?;
    ensure!(plan.len() == GRID_RECORDS, "{} records, expected {GRID_RECORDS}", plan.len());
    let ids: HashSet<&str> = plan.records.iter().map(|r| r.id.as_str()).collect();
    ensure!(ids.len() == GRID_RECORDS, "{} distinct ids", ids.len());

    let sub = GridLists {
        layers: grid.layers[..2].to_vec(),
        neurons: grid.neurons[..2].to_vec(),
        mu: grid.mu[..2].to_vec(),
        omega: grid.omega[..1].to_vec(),
        alpha: grid.alpha[..1].to_vec(),
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let opts = RenderOptions {
        width: 64,
        height: 64,
        workers: 0,
    };
    let manifest = generate_dataset(&sub, &[7], dir.path(), opts).map_err(|e| e.to_string())?;
    ensure!(manifest.len() == 8, "sub-grid rendered {} records", manifest.len());
    let reloaded = Manifest::load(&dir.path().join(MANIFEST_FILE)).map_err(|e| e.to_string())?;
    ensure!(reloaded == manifest, "manifest does not round-trip");
    for r in &manifest.records {
        let img = ImageRgb::open(&manifest.resolve(dir.path(), r)).map_err(|e| e.to_string())?;
        ensure!(img.width == 64 && img.height == 64, "{} has wrong size", r.id);
    }
    Ok(format!(
        "{} specs, {} planned records, 8/8 sub-grid images rendered",
        specs.len(),
        plan.len()
    ))
}

fn coefficient_count() -> Outcome {
    let spec = ArchitectureSpec::new(3, 100, 0.0, 0.0, 2.0).with_seed(1);
    let img = render_record(&spec, MAP_SIDE, MAP_SIDE).map_err(|e| e.to_string())?;
    let lum = luminance(&img);
    let start = Instant::now();
    let map = correlation_map(&lum).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    ensure!(map.domain_size() == MAP_DISPLACEMENTS, "domain holds {}", map.domain_size());
    let mut seen = HashSet::new();
    let (mut retained, mut excluded) = (0, 0);
    for e in map.iter() {
        ensure!(seen.insert(e.displacement), "{:?} listed twice", e.displacement);
        ensure!(
            !seen.contains(&Displacement::new(-e.displacement.dx, -e.displacement.dy)),
            "{:?} and its negation both listed",
            e.displacement
        );
        match e.rho {
            Some(_) => retained += 1,
            None => excluded += 1,
        }
    }
    ensure!(retained + excluded == MAP_DISPLACEMENTS, "{retained} + {excluded} displacements");
    ensure!(retained == map.retained_count() && excluded == map.excluded_count(), "count mismatch");

    // A constant image has the same domain, all of it excluded.
    let flat = correlation_map(&Luminance::from_fn(MAP_SIDE, MAP_SIDE, |_, _| 0.25))
        .map_err(|e| e.to_string())?;
    ensure!(
        flat.excluded_count() == MAP_DISPLACEMENTS && flat.is_degenerate(),
        "constant image retained {}",
        flat.retained_count()
    );
    ensure!(elapsed < MAP_TIME_LIMIT, "map took {elapsed:?}");
    Ok(format!(
        "{retained} retained + {excluded} excluded = {MAP_DISPLACEMENTS}, map in {:.0} ms",
        elapsed.as_secs_f64() * 1e3
    ))
}

/// Pearson coefficient of the pairs `(i(p + a), i(p))`, two-pass.
fn direct_pearson(lum: &Luminance, dx: i64, dy: i64) -> Option<f64> {
    let (w, h) = (lum.width as i64, lum.height as i64);
    let mut pairs = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let (u, v) = (x + dx, y + dy);
            if u >= 0 && u < w && v >= 0 && v < h {
                pairs.push((lum.get(u as usize, v as usize), lum.get(x as usize, y as usize)));
            }
        }
    }
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let vx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let vy: f64 = pairs.iter().map(|p| (p.1 - my).powi(2)).sum();
    let flat_x = pairs.iter().all(|p| p.0 == pairs[0].0);
    let flat_y = pairs.iter().all(|p| p.1 == pairs[0].1);
    if flat_x || flat_y {
        return None;
    }
    Some(cov / (vx.sqrt() * vy.sqrt()))
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0a11);
    let mut worst = 0.0f64;
    let mut compared = 0usize;
    for img in 0..ORACLE_IMAGES {
        let w = rng.random_range(2..=ORACLE_MAX_SIDE);
        let h = rng.random_range(2..=ORACLE_MAX_SIDE);
        // Every third image uses three levels so flat windows occur.
        let lum = if img % 3 == 0 {
            Luminance::from_fn(w, h, |_, _| rng.random_range(0..3) as f64 / 2.0)
        } else {
            Luminance::from_fn(w, h, |_, _| rng.random::<f64>())
        };
        let map = correlation_map(&lum).map_err(|e| e.to_string())?;
        if map.is_degenerate() {
            continue;
        }
        for e in map.iter() {
            let (dx, dy) = (e.displacement.dx, e.displacement.dy);
            match (direct_pearson(&lum, dx, dy), e.rho) {
                (Some(want), Some(got)) => {
                    worst = worst.max((want - got).abs());
                    compared += 1;
                }
                (None, None) => {}
                (want, got) => {
                    return Err(format!(
                        "image {img} ({w}x{h}) at ({dx},{dy}): oracle {want:?}, map {got:?}"
                    ))
                }
            }
        }
    }
    ensure!(worst <= ORACLE_TOL, "max deviation {worst:e}");
    Ok(format!(
        "{ORACLE_IMAGES} images, {compared} coefficients, max deviation {worst:.1e}"
    ))
}

#[derive(Deserialize)]
struct WelchFixture {
    pairs: Vec<WelchCase>,
    t_tail: Vec<TailCase>,
}

#[derive(Deserialize)]
struct WelchCase {
    a: Vec<f64>,
    b: Vec<f64>,
    t: f64,
    df: f64,
    p_a_greater: f64,
    p_b_greater: f64,
}

#[derive(Deserialize)]
struct TailCase {
    t: f64,
    df: f64,
    sf: f64,
}

fn welch_engine() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/welch_oracle.json");
    let fixture: WelchFixture =
        serde_json::from_str(&fs::read_to_string(&path).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    ensure!(fixture.pairs.len() == 50, "fixture has {} pairs", fixture.pairs.len());
    let mut worst_p = 0.0f64;
    let mut max_df = 0.0f64;
    for (i, case) in fixture.pairs.iter().enumerate() {
        let ra = welch_bin(&case.a, &case.b, Alternative::AGreater).map_err(|e| e.to_string())?;
        let rb = welch_bin(&case.a, &case.b, Alternative::BGreater).map_err(|e| e.to_string())?;
        ensure!(
            (ra.t - case.t).abs() <= 1e-9 * case.t.abs().max(1.0),
            "pair {i}: t {} vs {}",
            ra.t,
            case.t
        );
        ensure!(
            (ra.df - case.df).abs() <= 1e-9 * case.df,
            "pair {i}: df {} vs {}",
            ra.df,
            case.df
        );
        worst_p = worst_p
            .max((ra.p - case.p_a_greater).abs())
            .max((rb.p - case.p_b_greater).abs());
        max_df = max_df.max(case.df);
    }
    ensure!(worst_p <= WELCH_P_TOL, "max p deviation {worst_p:e}");

    let sample = [0.1, 0.4, -0.3, 0.8];
    let zero = welch_bin(&sample, &sample, Alternative::AGreater).map_err(|e| e.to_string())?;
    ensure!(zero.t == 0.0 && zero.p == 0.5, "t = 0 gave p = {}", zero.p);
    for df in [1.0, 2.5, 30.0, 200.0] {
        ensure!(student_t_sf(0.0, df) == 0.5, "sf(0, {df}) = {}", student_t_sf(0.0, df));
    }

    let mut worst_tail = 0.0f64;
    for case in &fixture.t_tail {
        worst_tail = worst_tail.max((student_t_sf(case.t, case.df) - case.sf).abs());
    }
    ensure!(worst_tail <= T_TAIL_TOL, "max t-tail deviation {worst_tail:e}");
    Ok(format!(
        "50 pairs (df up to {max_df:.0}) max |dp| {worst_p:.1e}; t=0 -> p=0.5; {} tail points max {worst_tail:.1e}",
        fixture.t_tail.len()
    ))
}

fn threshold_reproduction() -> Outcome {
    let options = CompareOptions {
        alternative: Alternative::AGreater,
        alpha_base: THRESHOLD_ALPHA_BASE,
        scope_bins: THRESHOLD_SCOPE,
    };
    let direct = options.alpha_corrected();
    ensure!((direct - THRESHOLD_EXPECTED).abs() <= THRESHOLD_TOL, "alpha_corrected = {direct:e}");
    let curve = |shift: f64| {
        CorrelationCurve::from_means(
            &(0..THRESHOLD_SCOPE)
                .map(|k| Some(shift + (k as f64).sin() * 0.01))
                .collect::<Vec<_>>(),
        )
    };
    let a = CurveSet::new("a", vec![curve(0.0), curve(0.1), curve(0.2)]);
    let b = CurveSet::new("b", vec![curve(0.05), curve(0.15), curve(0.25)]);
    let cmp = compare_sets(&a, &b, options).map_err(|e| e.to_string())?;
    ensure!(
        (cmp.alpha_corrected - THRESHOLD_EXPECTED).abs() <= THRESHOLD_TOL,
        "comparison used {:e}",
        cmp.alpha_corrected
    );
    Ok(format!("{THRESHOLD_ALPHA_BASE} / {THRESHOLD_SCOPE} = {direct:e}"))
}

struct RunOutput {
    manifest: Vec<u8>,
    images: Vec<(String, Vec<u8>)>,
    curves: Vec<(String, Vec<u8>)>,
}

fn pipeline_run(workers: usize) -> Result<RunOutput, String> {
    let grid = GridLists {
        layers: vec![3, 5],
        neurons: vec![60],
        mu: vec![0.0],
        omega: vec![-0.5, 1.0],
        alpha: vec![2.0],
    };
    let seeds = [11, 12];
    let curve_seeds = [13];
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let opts = RenderOptions {
        width: 96,
        height: 80,
        workers,
    };
    let mut manifest = generate_dataset(&grid, &seeds, dir.path(), opts).map_err(|e| e.to_string())?;
    let extra = GridLists {
        layers: vec![10],
        neurons: vec![100],
        ..grid.clone()
    };
    let more = generate_dataset(&extra, &curve_seeds, &dir.path().join("extra"), opts)
        .map_err(|e| e.to_string())?;
    for mut r in more.records {
        r.path = format!("extra/{}", r.path);
        manifest.insert(r);
    }
    let mut images = Vec::new();
    for r in &manifest.records {
        let bytes = fs::read(manifest.resolve(dir.path(), r)).map_err(|e| e.to_string())?;
        images.push((r.id.clone(), bytes));
    }
    let report = curve_set(
        &manifest,
        dir.path(),
        &RecordFilter::all(),
        false,
        &CurveOptions::default(),
        workers,
    )
    .map_err(|e| e.to_string())?;
    let mut curves = Vec::new();
    for (id, curve) in report.ids.iter().zip(&report.set.curves) {
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).map_err(|e| e.to_string())?;
        curves.push((id.clone(), buf));
    }
    Ok(RunOutput {
        manifest: manifest.to_bytes(),
        images,
        curves,
    })
}

fn determinism() -> Outcome {
    let first = pipeline_run(1)?;
    let again = pipeline_run(1)?;
    let parallel = pipeline_run(4)?;
    ensure!(
        first.images.len() == DETERMINISM_IMAGES,
        "fixture has {} images",
        first.images.len()
    );
    ensure!(first.curves.len() == DETERMINISM_IMAGES, "{} curves", first.curves.len());
    for other in [&again, &parallel] {
        ensure!(other.manifest == first.manifest, "manifest bytes differ");
        ensure!(other.images == first.images, "PNG bytes differ");
        ensure!(other.curves == first.curves, "curve CSV bytes differ");
    }
    Ok(format!(
        "{DETERMINISM_IMAGES} images: PNG and curve CSV bytes identical across runs and 1 vs 4 workers"
    ))
}

fn trend_set(layers: usize, neurons: usize) -> Result<CurveSet, String> {
    let curves: Vec<Result<Option<CorrelationCurve>, String>> = (0..TREND_SEEDS)
        .into_par_iter()
        .map(|seed| {
            let spec = ArchitectureSpec::new(layers, neurons, 0.0, 0.0, 2.0).with_seed(seed);
            let img = Network::build(&spec).map_err(|e| e.to_string())?.render(MAP_SIDE, MAP_SIDE);
            image_curve(&img, &CurveOptions::default()).map_err(|e| e.to_string())
        })
        .collect();
    let mut set = CurveSet::new(format!("L={layers},N={neurons}"), Vec::new());
    for c in curves {
        if let Some(c) = c? {
            set.curves.push(c);
        }
    }
    Ok(set)
}

/// Counts bins in the trend window where `a` exceeds `b` at the per-bin level.
fn trend(a: (usize, usize), b: (usize, usize)) -> Outcome {
    let sa = trend_set(a.0, a.1)?;
    let sb = trend_set(b.0, b.1)?;
    let mut hits = 0;
    let mut worst = 0.0f64;
    for bin in TREND_BINS {
        let r = welch_bin(&sa.samples(bin), &sb.samples(bin), Alternative::AGreater)
            .map_err(|e| format!("bin {bin}: {e}"))?;
        worst = worst.max(r.p);
        if r.p < TREND_P {
            hits += 1;
        }
    }
    let total = TREND_BINS.count();
    ensure!(
        hits >= TREND_MIN_BINS,
        "{} > {} on only {hits}/{total} bins (need {TREND_MIN_BINS})",
        sa.label,
        sb.label
    );
    Ok(format!(
        "{} > {} with p < {TREND_P} on {hits}/{total} bins (n = {}/{}, largest p {worst:.1e})",
        sa.label,
        sb.label,
        sa.len(),
        sb.len()
    ))
}

fn trend_layers() -> Outcome {
    trend((3, 250), (10, 250))
}

fn trend_neurons() -> Outcome {
    trend((3, 100), (3, 500))
}
