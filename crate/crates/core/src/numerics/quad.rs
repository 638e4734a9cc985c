//! Adaptive 21-point Gauss–Kronrod quadrature for vector-valued integrands.
//!
//! Several integrals sharing one integration variable (a numerator and a
//! denominator, say) are refined together, so every component sees the same
//! subdivision. The interval with the largest tolerance-scaled error is
//! bisected until every component meets `max(abs_tol, rel_tol * |I|)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{FhrdError, Result};

#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

// Gauss weights for the odd-indexed Kronrod nodes.
#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadTolerance {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadTolerance {
    fn default() -> Self {
        Self { rel_tol: 1e-10, abs_tol: 0.0, max_intervals: 400 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult<const N: usize> {
    pub value: [f64; N],
    pub error: [f64; N],
    pub intervals: usize,
    pub evaluations: usize,
}

struct Segment<const N: usize> {
    a: f64,
    b: f64,
    value: [f64; N],
    error: [f64; N],
    priority: f64,
}

impl<const N: usize> PartialEq for Segment<N> {
    fn eq(&self, other: &Self) -> bool {
        self.priority == other.priority
    }
}
impl<const N: usize> Eq for Segment<N> {}
impl<const N: usize> PartialOrd for Segment<N> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<const N: usize> Ord for Segment<N> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority.total_cmp(&other.priority)
    }
}

fn gk21<const N: usize, F>(f: &F, a: f64, b: f64) -> ([f64; N], [f64; N])
where
    F: Fn(f64) -> [f64; N],
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = [0.0; N];
    let mut gauss = [0.0; N];
    for k in 0..N {
        kronrod[k] = WGK[10] * fc[k];
    }
    for j in 0..10 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        for k in 0..N {
            let s = f1[k] + f2[k];
            kronrod[k] += WGK[j] * s;
            if j % 2 == 1 {
                gauss[k] += WG[j / 2] * s;
            }
        }
    }
    let mut value = [0.0; N];
    let mut error = [0.0; N];
    for k in 0..N {
        value[k] = kronrod[k] * half;
        error[k] = ((kronrod[k] - gauss[k]) * half).abs();
    }
    (value, error)
}

/// Integrates every component of `f` over `[a, b]`.
pub fn integrate<const N: usize, F>(f: F, a: f64, b: f64, tol: QuadTolerance) -> Result<QuadResult<N>>
where
    F: Fn(f64) -> [f64; N],
{
    integrate_with_breaks(f, &[a, b], tol)
}

/// Integrates over `[breaks[0], breaks[last]]`, starting from the panels
/// between consecutive breakpoints. Breakpoints must be nondecreasing; empty
/// panels are skipped.
pub fn integrate_with_breaks<const N: usize, F>(f: F, breaks: &[f64], tol: QuadTolerance) -> Result<QuadResult<N>>
where
    F: Fn(f64) -> [f64; N],
{
    let mut heap: BinaryHeap<Segment<N>> = BinaryHeap::new();
    let mut total = [0.0; N];
    let mut total_err = [0.0; N];
    let mut evaluations = 0;
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        if !(b > a) {
            continue;
        }
        let (value, error) = gk21(&f, a, b);
        for k in 0..N {
            total[k] += value[k];
            total_err[k] += error[k];
        }
        heap.push(Segment { a, b, value, error, priority: 0.0 });
        evaluations += 21;
    }
    // Seed priorities once the totals are known.
    let scale: [f64; N] = std::array::from_fn(|k| tol.abs_tol.max(tol.rel_tol * total[k].abs()).max(f64::MIN_POSITIVE));
    heap = heap
        .into_iter()
        .map(|s| Segment { priority: (0..N).map(|k| s.error[k] / scale[k]).fold(0.0, f64::max), ..s })
        .collect();

    let excess = |total: &[f64; N], err: &[f64; N]| -> bool {
        (0..N).any(|k| err[k] > tol.abs_tol.max(tol.rel_tol * total[k].abs()))
    };

    while excess(&total, &total_err) {
        if heap.len() >= tol.max_intervals {
            let k = (0..N).max_by(|&i, &j| total_err[i].total_cmp(&total_err[j])).unwrap_or(0);
            return Err(FhrdError::Quadrature { value: total[k], error: total_err[k], intervals: heap.len() });
        }
        let Some(worst) = heap.pop() else { break };
        let mid = 0.5 * (worst.a + worst.b);
        let (lv, le) = gk21(&f, worst.a, mid);
        let (rv, re) = gk21(&f, mid, worst.b);
        evaluations += 42;
        for k in 0..N {
            total[k] += lv[k] + rv[k] - worst.value[k];
            total_err[k] += le[k] + re[k] - worst.error[k];
        }
        // Priority: the segment's error relative to each component's target.
        let scale: [f64; N] =
            std::array::from_fn(|k| tol.abs_tol.max(tol.rel_tol * total[k].abs()).max(f64::MIN_POSITIVE));
        let prio = |e: &[f64; N]| (0..N).map(|k| e[k] / scale[k]).fold(0.0, f64::max);
        heap.push(Segment { a: worst.a, b: mid, value: lv, error: le, priority: prio(&le) });
        heap.push(Segment { a: mid, b: worst.b, value: rv, error: re, priority: prio(&re) });
    }

    // Re-sum from the segments to shed the drift of the running updates.
    let mut value = [0.0; N];
    let mut error = [0.0; N];
    let mut segments: Vec<_> = heap.into_vec();
    segments.sort_by(|x, y| x.a.total_cmp(&y.a));
    let intervals = segments.len();
    for s in &segments {
        for k in 0..N {
            value[k] += s.value[k];
            error[k] += s.error[k];
        }
    }
    Ok(QuadResult { value, error, intervals, evaluations })
}
