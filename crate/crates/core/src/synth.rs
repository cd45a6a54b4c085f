//! Synthetic watersheds: storm precipitation, a per-grid linear-reservoir
//! runoff surrogate and delayed, noisy outlet discharge.

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use crate::datapipe::{GridSpec, SeriesTable};
use crate::error::{Error, Result};

// independent random streams per component, so one axis can be resampled
// while the others stay fixed
const STREAM_LAYOUT: u64 = 1;
const STREAM_RESERVOIR: u64 = 2;
const STREAM_STORMS: u64 = 3;
const STREAM_NOISE: u64 = 4;
const STREAM_SHIFT: u64 = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub grid_count: usize,
    pub days: usize,
    pub start_date: NaiveDate,
    /// Grid coordinates are uniform over `[0, extent_km]²`.
    pub extent_km: f64,
    pub dist_min_km: f64,
    pub dist_max_km: f64,
    /// Mean storm arrivals per day.
    pub storm_rate: f64,
    pub storm_mean_depth_mm: f64,
    /// Per-grid precipitation multiplier is uniform in this range.
    pub spatial_factor_min: f64,
    pub spatial_factor_max: f64,
    /// Reservoir constants (1/day) are uniform in `[k_min, k_max]`.
    pub k_min: f64,
    pub k_max: f64,
    /// Routing delay, days per km of distance to the river.
    pub delay_per_km: f64,
    pub area_scale: f64,
    /// Coefficient of variation of the mean-one lognormal discharge noise.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            grid_count: 8,
            days: 1000,
            start_date: NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date"),
            extent_km: 20.0,
            dist_min_km: 0.5,
            dist_max_km: 15.0,
            storm_rate: 0.3,
            storm_mean_depth_mm: 10.0,
            spatial_factor_min: 0.5,
            spatial_factor_max: 1.5,
            k_min: 0.15,
            k_max: 0.6,
            delay_per_km: 0.2,
            area_scale: 1.0,
            noise_std: 0.1,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synth: {m}")));
        if self.grid_count == 0 || self.days == 0 {
            return bad("grid_count and days must be positive".into());
        }
        let finite = [
            self.extent_km,
            self.dist_min_km,
            self.dist_max_km,
            self.storm_rate,
            self.storm_mean_depth_mm,
            self.spatial_factor_min,
            self.spatial_factor_max,
            self.k_min,
            self.k_max,
            self.delay_per_km,
            self.area_scale,
            self.noise_std,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("all numeric settings must be finite".into());
        }
        if self.extent_km < 0.0 || self.dist_min_km < 0.0 || self.dist_max_km < self.dist_min_km {
            return bad("need 0 <= dist_min_km <= dist_max_km and extent_km >= 0".into());
        }
        if self.storm_rate < 0.0 || self.storm_mean_depth_mm <= 0.0 {
            return bad("storm_rate must be >= 0 and storm_mean_depth_mm > 0".into());
        }
        if self.spatial_factor_min <= 0.0 || self.spatial_factor_max < self.spatial_factor_min {
            return bad("spatial factors need 0 < min <= max".into());
        }
        if !(self.k_min > 0.0 && self.k_min <= self.k_max && self.k_max < 1.0) {
            return bad(format!("reservoir constants need 0 < k_min <= k_max < 1, got [{}, {}]", self.k_min, self.k_max));
        }
        if self.delay_per_km < 0.0 || self.area_scale <= 0.0 || self.noise_std < 0.0 {
            return bad("delay_per_km and noise_std must be >= 0, area_scale > 0".into());
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo { rng.random_range(lo..hi) } else { lo }
}

/// Grid coordinates, river distances and the per-grid precipitation
/// multiplier, all drawn from the layout stream.
pub fn gen_layout(spec: &SynthSpec) -> Result<(GridSpec, Vec<f64>)> {
    spec.validate()?;
    let mut rng = spec.rng(STREAM_LAYOUT);
    let l = spec.grid_count;
    let coords = (0..l).map(|_| (uniform(&mut rng, 0.0, spec.extent_km), uniform(&mut rng, 0.0, spec.extent_km))).collect();
    let dist = (0..l).map(|_| uniform(&mut rng, spec.dist_min_km, spec.dist_max_km)).collect();
    let factor = (0..l).map(|_| uniform(&mut rng, spec.spatial_factor_min, spec.spatial_factor_max)).collect();
    let ids = (1..=l).map(|i| format!("g{i:03}")).collect();
    Ok((GridSpec::new(ids, coords, dist)?, factor))
}

pub fn gen_watershed(spec: &SynthSpec) -> Result<GridSpec> {
    Ok(gen_layout(spec)?.0)
}

pub fn gen_reservoir_constants(spec: &SynthSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut rng = spec.rng(STREAM_RESERVOIR);
    Ok((0..spec.grid_count).map(|_| uniform(&mut rng, spec.k_min, spec.k_max)).collect())
}

/// Daily storm precipitation `p[t][i]` for the given per-grid multipliers.
/// The number of storms on a day is shared watershed-wide; each grid draws
/// its own exponential depths.
pub fn gen_precip_with(spec: &SynthSpec, factor: &[f64], days: usize) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let mut rng = spec.rng(STREAM_STORMS);
    if spec.storm_rate == 0.0 {
        return Ok(vec![vec![0.0; factor.len()]; days]);
    }
    let arrivals = Poisson::new(spec.storm_rate).map_err(|e| Error::Config(format!("storm rate: {e}")))?;
    let depth = Exp::new(1.0 / spec.storm_mean_depth_mm).map_err(|e| Error::Config(format!("storm depth: {e}")))?;
    let mut out = Vec::with_capacity(days);
    for _ in 0..days {
        let n = arrivals.sample(&mut rng) as usize;
        let row = factor
            .iter()
            .map(|f| f * (0..n).map(|_| depth.sample(&mut rng)).fold(0.0, |a, b| a + b))
            .collect();
        out.push(row);
    }
    Ok(out)
}

pub fn gen_precip(spec: &SynthSpec, days: usize) -> Result<Vec<Vec<f64>>> {
    let (_, factor) = gen_layout(spec)?;
    gen_precip_with(spec, &factor, days)
}

/// Runoff of every grid plus what is still stored at the end.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateOutput {
    pub runoff: Vec<Vec<f64>>,
    pub final_storage: Vec<f64>,
}

/// Linear reservoir per grid: `a = s + p`, `r = k·a`, `s = (1-k)·a`,
/// starting empty.
pub fn pb_surrogate(precip: &[Vec<f64>], k: &[f64]) -> Result<SurrogateOutput> {
    if let Some(&bad) = k.iter().find(|&&k| !(k > 0.0 && k <= 1.0)) {
        return Err(Error::param(format!("reservoir constant {bad} outside (0, 1]")));
    }
    let mut storage = vec![0.0; k.len()];
    let mut runoff = Vec::with_capacity(precip.len());
    for (t, row) in precip.iter().enumerate() {
        if row.len() != k.len() {
            return Err(Error::dim(format!("day {t} has {} grids, expected {}", row.len(), k.len())));
        }
        if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::param(format!("day {t}: precipitation must be finite and non-negative")));
        }
        let r = row
            .iter()
            .zip(k)
            .zip(storage.iter_mut())
            .map(|((p, k), s)| {
                let a = *s + p;
                let r = k * a;
                // exact complement keeps r + s == a to the last bit
                *s = a - r;
                r
            })
            .collect();
        runoff.push(r);
    }
    Ok(SurrogateOutput { runoff, final_storage: storage })
}

/// `round(delay_per_km · d)` days per grid.
pub fn routing_delays(distances: &[f64], delay_per_km: f64) -> Vec<usize> {
    distances.iter().map(|d| (delay_per_km * d).round() as usize).collect()
}

/// Outlet discharge before noise: `area_scale · Σ_i r[t - delay_i][i]`.
pub fn route(runoff: &[Vec<f64>], delays: &[usize], area_scale: f64) -> Vec<f64> {
    (0..runoff.len())
        .map(|t| {
            area_scale
                * delays
                    .iter()
                    .enumerate()
                    .filter(|(_, &d)| d <= t)
                    .map(|(i, &d)| runoff[t - d][i])
                    .fold(0.0, |a, b| a + b)
        })
        .collect()
}

/// Routed discharge times mean-one lognormal noise with the configured
/// coefficient of variation.
pub fn gen_discharge(runoff: &[Vec<f64>], distances: &[f64], spec: &SynthSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let clean = route(runoff, &routing_delays(distances, spec.delay_per_km), spec.area_scale);
    if spec.noise_std == 0.0 {
        return Ok(clean);
    }
    let sigma2 = (1.0 + spec.noise_std * spec.noise_std).ln();
    let noise = LogNormal::new(-sigma2 / 2.0, sigma2.sqrt()).map_err(|e| Error::Config(format!("noise: {e}")))?;
    let mut rng = spec.rng(STREAM_NOISE);
    Ok(clean.into_iter().map(|d| d * noise.sample(&mut rng)).collect())
}

/// A generated watershed together with its hidden generative parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthWatershed {
    pub spec: SynthSpec,
    pub grid: GridSpec,
    pub spatial_factor: Vec<f64>,
    pub k: Vec<f64>,
    pub series: SeriesTable,
}

fn assemble(spec: &SynthSpec, grid: GridSpec, spatial_factor: Vec<f64>, k: Vec<f64>) -> Result<SynthWatershed> {
    let precip = gen_precip_with(spec, &spatial_factor, spec.days)?;
    let runoff = pb_surrogate(&precip, &k)?.runoff;
    let discharge = gen_discharge(&runoff, &grid.distances_km, spec)?;
    let dates = (0..spec.days)
        .map(|i| spec.start_date.checked_add_days(Days::new(i as u64)))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::Config("synth: date range overflows the calendar".into()))?;
    let series = SeriesTable::new(dates, precip, runoff, discharge)?;
    Ok(SynthWatershed { spec: spec.clone(), grid, spatial_factor, k, series })
}

pub fn generate(spec: &SynthSpec) -> Result<SynthWatershed> {
    let (grid, factor) = gen_layout(spec)?;
    let k = gen_reservoir_constants(spec)?;
    assemble(spec, grid, factor, k)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftMode {
    /// New coordinates, distances and precipitation field; same reservoirs.
    SpatialShift,
    /// Same layout; new reservoir constants and storm regime.
    TemporalShift,
    Both,
}

impl std::str::FromStr for ShiftMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial_shift" | "spatial" => Ok(ShiftMode::SpatialShift),
            "temporal_shift" | "temporal" => Ok(ShiftMode::TemporalShift),
            "both" => Ok(ShiftMode::Both),
            _ => Err(Error::Config(format!("unknown shift mode {s:?}"))),
        }
    }
}

/// Source watershed from `spec` and a target that departs from it along
/// `mode`, with its own randomness drawn from `target_seed`.
pub fn make_transfer_pair(spec: &SynthSpec, mode: ShiftMode, target_seed: u64) -> Result<(SynthWatershed, SynthWatershed)> {
    let source = generate(spec)?;
    let mut tspec = SynthSpec { seed: target_seed, ..spec.clone() };
    let spatial = matches!(mode, ShiftMode::SpatialShift | ShiftMode::Both);
    let temporal = matches!(mode, ShiftMode::TemporalShift | ShiftMode::Both);

    if temporal {
        // slower or faster reservoirs and a different storm climate
        let mut rng = tspec.rng(STREAM_SHIFT);
        let k_scale = rng.random_range(0.35..0.6);
        tspec.k_min = (spec.k_min * k_scale).max(1e-3);
        tspec.k_max = (spec.k_max * k_scale).max(tspec.k_min);
        tspec.storm_rate = spec.storm_rate * rng.random_range(1.3..1.8);
        tspec.storm_mean_depth_mm = spec.storm_mean_depth_mm * rng.random_range(0.5..0.8);
    }
    let (grid, factor) = if spatial { gen_layout(&tspec)? } else { (source.grid.clone(), source.spatial_factor.clone()) };
    let k = if temporal { gen_reservoir_constants(&tspec)? } else { source.k.clone() };
    let target = assemble(&tspec, grid, factor, k)?;
    Ok((source, target))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SynthSpec {
        SynthSpec { days: 400, ..SynthSpec::default() }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&spec()).unwrap();
        let b = generate(&spec()).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthSpec { seed: 7, ..spec() }).unwrap();
        assert_ne!(a.series, c.series);
    }

    #[test]
    fn watershed_honours_spec() {
        let g = gen_watershed(&SynthSpec { grid_count: 13, ..spec() }).unwrap();
        assert_eq!(g.len(), 13);
        assert!(g.distances_km.iter().all(|&d| (0.5..=15.0).contains(&d)));
    }

    #[test]
    fn zero_rate_gives_dry_weather() {
        let p = gen_precip(&SynthSpec { storm_rate: 0.0, ..spec() }, 50).unwrap();
        assert!(p.iter().flatten().all(|&v| v == 0.0 && v.is_sign_positive()));
    }

    #[test]
    fn long_run_mean_matches_storm_process() {
        let s = SynthSpec { grid_count: 3, ..spec() };
        let (_, factor) = gen_layout(&s).unwrap();
        let t = 100_000;
        let p = gen_precip_with(&s, &factor, t).unwrap();
        for (i, f) in factor.iter().enumerate() {
            let mean = p.iter().map(|r| r[i]).sum::<f64>() / t as f64;
            let expected = s.storm_rate * s.storm_mean_depth_mm * f;
            assert!((mean / expected - 1.0).abs() < 0.05, "grid {i}: {mean} vs {expected}");
        }
    }

    #[test]
    fn reservoir_examples() {
        let out = pb_surrogate(&vec![vec![0.0]; 5], &[0.3]).unwrap();
        assert!(out.runoff.iter().flatten().all(|&r| r == 0.0));

        let p = vec![vec![2.0], vec![0.0], vec![5.0]];
        let out = pb_surrogate(&p, &[1.0]).unwrap();
        assert_eq!(out.runoff, p);
        assert_eq!(out.final_storage, vec![0.0]);

        let mut impulse = vec![vec![0.0]; 6];
        impulse[0][0] = 1.0;
        let out = pb_surrogate(&impulse, &[0.5]).unwrap();
        let r: Vec<f64> = out.runoff.iter().map(|r| r[0]).collect();
        assert_eq!(r, vec![0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625]);

        assert!(pb_surrogate(&p, &[0.0]).is_err());
        assert!(pb_surrogate(&p, &[1.5]).is_err());
    }

    #[test]
    fn reservoir_balances_mass() {
        let s = spec();
        let w = generate(&s).unwrap();
        let out = pb_surrogate(&w.series.precip, &w.k).unwrap();
        for i in 0..s.grid_count {
            let rain: f64 = w.series.precip.iter().map(|r| r[i]).sum();
            let gone: f64 = out.runoff.iter().map(|r| r[i]).sum::<f64>() + out.final_storage[i];
            assert!((rain - gone).abs() <= 1e-9 * rain.max(1.0));
        }
    }

    #[test]
    fn routing_examples() {
        let r = vec![vec![1.0], vec![2.0], vec![3.0]];
        assert_eq!(route(&r, &[0], 2.0), vec![2.0, 4.0, 6.0]);
        assert_eq!(route(&r, &[1], 1.0), vec![0.0, 1.0, 2.0]);
        let zero = gen_discharge(&vec![vec![0.0; 2]; 10], &[1.0, 3.0], &spec()).unwrap();
        assert!(zero.iter().all(|&d| d == 0.0));
        assert_eq!(routing_delays(&[0.0, 2.4, 2.6], 1.0), vec![0, 2, 3]);
    }

    #[test]
    fn discharge_conserves_runoff_mass() {
        let s = SynthSpec { days: 5000, ..spec() };
        let w = generate(&s).unwrap();
        let delays = routing_delays(&w.grid.distances_km, s.delay_per_km);
        // runoff that has not reached the outlet by the last day is excluded
        let routed: f64 = (0..s.grid_count)
            .map(|i| w.series.runoff[..s.days - delays[i]].iter().map(|r| r[i]).sum::<f64>())
            .sum();
        let total: f64 = w.series.discharge.iter().sum();
        assert!((total / routed - 1.0).abs() < 0.02, "{total} vs {routed}");
    }

    #[test]
    fn transfer_pairs_shift_one_axis() {
        let s = spec();
        let (src, tgt) = make_transfer_pair(&s, ShiftMode::SpatialShift, 9).unwrap();
        assert_eq!(src.k, tgt.k);
        assert_ne!(src.grid, tgt.grid);

        let (src, tgt) = make_transfer_pair(&s, ShiftMode::TemporalShift, 9).unwrap();
        assert_eq!(src.grid, tgt.grid);
        assert_eq!(src.spatial_factor, tgt.spatial_factor);
        assert_ne!(src.k, tgt.k);

        let (src, tgt) = make_transfer_pair(&s, ShiftMode::Both, 9).unwrap();
        assert_ne!(src.grid, tgt.grid);
        assert_ne!(src.k, tgt.k);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(SynthSpec { k_max: 1.0, ..spec() }.validate().is_err());
        assert!(SynthSpec { grid_count: 0, ..spec() }.validate().is_err());
        assert!(SynthSpec { dist_min_km: 5.0, dist_max_km: 1.0, ..spec() }.validate().is_err());
    }
}
