//! Seeded synthetic corridor generator.
//!
//! Produces a west-to-east chain of intersections with minute-level
//! telemetry in the ingestion schema. Counts follow a diurnal profile with
//! morning and evening peaks, scaled down on weekends, modulated by a slowly
//! drifting latent demand (one corridor-wide and one per-node AR(1) log
//! state) and perturbed by rounded lognormal noise. Downstream thru volumes
//! receive a lagged share of the upstream thru count, and speeds fall as
//! approach volume rises.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::DayClass;
use crate::error::{Error, Result};
use crate::graph::CorridorTopology;
use crate::pipeline::{movement_index, raw_attribute_names, Measure, RawIntersectionSeries, RAW_WIDTH};
use crate::{MINUTES_PER_DAY, MOVEMENTS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakWindow {
    /// Minute of day, inclusive.
    pub start: usize,
    /// Minute of day, exclusive.
    pub end: usize,
    /// Profile multiplier at the centre of the window.
    pub multiplier: f64,
}

impl PeakWindow {
    /// Raised-cosine bump: 1 at the edges, `multiplier` at the centre.
    fn factor(&self, minute_of_day: usize) -> f64 {
        if minute_of_day < self.start || minute_of_day >= self.end {
            return 1.0;
        }
        let phase = (minute_of_day - self.start) as f64 / (self.end - self.start) as f64;
        1.0 + (self.multiplier - 1.0) * 0.5 * (1.0 - (2.0 * std::f64::consts::PI * phase).cos())
    }
}

/// AR(1) process on a log scale with stationary standard deviation `sd`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub rho: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub nodes: usize,
    pub days: usize,
    pub seed: u64,
    /// Weekday of day 0, Monday = 0.
    pub start_weekday: usize,
    pub link_miles: (f64, f64),
    /// Mean counts per minute, movement order NB_L, NB_T, ..., WB_R.
    pub base_volumes: [f64; MOVEMENTS],
    pub morning: PeakWindow,
    pub evening: PeakWindow,
    pub weekend_factor: f64,
    /// Sigma of the lognormal count noise.
    pub dispersion: f64,
    pub corridor_demand: Latent,
    pub node_demand: Latent,
    /// Share of the upstream thru count passed to the downstream thru.
    pub coupling: f64,
    pub free_flow_mph: f64,
    /// Approach volume (veh/min) at which speed halves.
    pub half_speed_volume: f64,
    /// Probability that a count entry is replaced by an extreme value.
    pub outlier_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            nodes: 10,
            days: 20,
            seed: 7,
            start_weekday: 4,
            link_miles: (0.1, 0.5),
            base_volumes: [2.0, 5.0, 2.5, 2.0, 5.0, 2.5, 3.0, 12.0, 3.0, 3.0, 12.0, 3.0],
            morning: PeakWindow {
                start: 600,
                end: 840,
                multiplier: 1.8,
            },
            evening: PeakWindow {
                start: 1020,
                end: 1260,
                multiplier: 2.2,
            },
            weekend_factor: 0.7,
            dispersion: 0.3,
            corridor_demand: Latent { rho: 0.995, sd: 0.25 },
            node_demand: Latent { rho: 0.99, sd: 0.15 },
            coupling: 0.3,
            free_flow_mph: 35.0,
            half_speed_volume: 40.0,
            outlier_rate: 0.0,
        }
    }
}

impl SynthConfig {
    /// Profile-only data: no noise, latent drift, coupling or outliers, so
    /// every count is the rounded [`ground_truth_profile`].
    pub fn noiseless(self) -> Self {
        Self {
            dispersion: 0.0,
            corridor_demand: Latent { rho: 0.0, sd: 0.0 },
            node_demand: Latent { rho: 0.0, sd: 0.0 },
            coupling: 0.0,
            outlier_rate: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.nodes < 2 {
            return bad(format!("nodes must be at least 2, got {}", self.nodes));
        }
        if self.days == 0 {
            return bad("days must be at least 1".into());
        }
        if self.start_weekday > 6 {
            return bad(format!("start_weekday must be 0..=6, got {}", self.start_weekday));
        }
        let (lo, hi) = self.link_miles;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad(format!("link_miles range {lo}..{hi} is invalid"));
        }
        for (name, w) in [("morning", self.morning), ("evening", self.evening)] {
            if w.start >= w.end || w.end > MINUTES_PER_DAY {
                return bad(format!("{name} window {}..{} must lie within a day", w.start, w.end));
            }
            if !(w.multiplier >= 1.0) {
                return bad(format!("{name} multiplier must be at least 1, got {}", w.multiplier));
            }
        }
        if self.morning.end > self.evening.start && self.evening.end > self.morning.start {
            return bad("peak windows overlap".into());
        }
        if self.base_volumes.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("base volumes must be finite and nonnegative".into());
        }
        if !(self.weekend_factor > 0.0) || !(self.dispersion >= 0.0) {
            return bad("weekend_factor must be positive and dispersion nonnegative".into());
        }
        for l in [self.corridor_demand, self.node_demand] {
            if !(0.0..1.0).contains(&l.rho) || !(l.sd >= 0.0) {
                return bad(format!("latent demand needs 0 <= rho < 1 and sd >= 0, got {l:?}"));
            }
        }
        if !(0.0..1.0).contains(&self.coupling) {
            return bad(format!("coupling must lie in [0, 1), got {}", self.coupling));
        }
        if !(self.free_flow_mph > 0.0 && self.half_speed_volume > 0.0) {
            return bad("free_flow_mph and half_speed_volume must be positive".into());
        }
        if !(0.0..=0.01).contains(&self.outlier_rate) {
            return bad(format!("outlier_rate must lie in [0, 0.01], got {}", self.outlier_rate));
        }
        Ok(())
    }

    pub fn day_class(&self, day: usize) -> DayClass {
        if (self.start_weekday + day) % 7 >= 5 {
            DayClass::Weekend
        } else {
            DayClass::Weekday
        }
    }

    pub fn node_ids(&self) -> Vec<String> {
        (1..=self.nodes).map(|i| format!("I{i:02}")).collect()
    }
}

/// Noiseless mean count per minute for a movement.
pub fn ground_truth_profile(config: &SynthConfig, minute_of_day: usize, movement: usize, class: DayClass) -> f64 {
    let m = minute_of_day % MINUTES_PER_DAY;
    let diurnal = config.morning.factor(m) * config.evening.factor(m);
    let day = match class {
        DayClass::Weekday => 1.0,
        DayClass::Weekend => config.weekend_factor,
    };
    config.base_volumes[movement] * diurnal * day
}

/// An injected extreme count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outlier {
    pub node: usize,
    pub minute: usize,
    pub movement: usize,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub config: SynthConfig,
    pub topology: CorridorTopology,
    /// One 133-attribute series per node, in topology order.
    pub series: Vec<RawIntersectionSeries>,
    pub outliers: Vec<Outlier>,
}

const YELLOW_S: f64 = 3.0;

fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

struct Ar1 {
    rho: f64,
    innovation: f64,
    state: f64,
}

impl Ar1 {
    fn new(l: Latent, rng: &mut ChaCha8Rng) -> Self {
        let z: f64 = rng.sample(StandardNormal);
        Self {
            rho: l.rho,
            innovation: l.sd * (1.0 - l.rho * l.rho).sqrt(),
            state: l.sd * z,
        }
    }

    fn step(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.state = self.rho * self.state + self.innovation * z;
        self.state
    }
}

fn binomial(n: f64, p: f64, rng: &mut ChaCha8Rng) -> f64 {
    let p = p.clamp(0.0, 1.0);
    match Binomial::new(n as u64, p) {
        Ok(b) => b.sample(rng) as f64,
        Err(_) => 0.0,
    }
}

pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.nodes;
    let t_total = config.days * MINUTES_PER_DAY;

    let (lo, hi) = config.link_miles;
    let miles: Vec<f64> = (0..n - 1).map(|_| round2(rng.random_range(lo..=hi))).collect();
    let topology = CorridorTopology::chain(config.node_ids(), &miles)?;
    let lags: Vec<usize> = miles
        .iter()
        .map(|&m| ((3600.0 * m / config.free_flow_mph) / 60.0).ceil().max(1.0) as usize)
        .collect();

    let mut corridor = Ar1::new(config.corridor_demand, &mut rng);
    let mut local: Vec<Ar1> = (0..n).map(|_| Ar1::new(config.node_demand, &mut rng)).collect();
    let var = config.corridor_demand.sd.powi(2) + config.node_demand.sd.powi(2);
    let noise = if config.dispersion > 0.0 {
        Some(LogNormal::new(-0.5 * config.dispersion * config.dispersion, config.dispersion).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };

    // counts[node][(minute, movement)]
    let mut counts: Vec<Array2<f64>> = vec![Array2::zeros((t_total, MOVEMENTS)); n];
    let eb_t = movement_index(2, 1);
    let wb_t = movement_index(3, 1);
    for t in 0..t_total {
        let class = config.day_class(t / MINUTES_PER_DAY);
        let c = corridor.step(&mut rng);
        let levels: Vec<f64> = local.iter_mut().map(|l| (c + l.step(&mut rng) - 0.5 * var).exp()).collect();
        for v in 0..n {
            for mv in 0..MOVEMENTS {
                let mut mean = ground_truth_profile(config, t % MINUTES_PER_DAY, mv, class) * levels[v];
                if config.coupling > 0.0 {
                    if mv == eb_t && v > 0 && t >= lags[v - 1] {
                        mean += config.coupling * counts[v - 1][[t - lags[v - 1], eb_t]];
                    }
                    if mv == wb_t && v + 1 < n && t >= lags[v] {
                        mean += config.coupling * counts[v + 1][[t - lags[v], wb_t]];
                    }
                }
                let draw = match &noise {
                    Some(d) => mean * d.sample(&mut rng),
                    None => mean,
                };
                counts[v][[t, mv]] = draw.round().max(0.0);
            }
        }
    }

    let mut outliers = Vec::new();
    if config.outlier_rate > 0.0 {
        for (v, series) in counts.iter_mut().enumerate() {
            for mv in 0..MOVEMENTS {
                let max_clean = series.column(mv).fold(0.0f64, |a, &b| a.max(b));
                let value = 3.0 * max_clean + 10.0;
                for t in 0..t_total {
                    if rng.random::<f64>() < config.outlier_rate {
                        series[[t, mv]] = value;
                        outliers.push(Outlier {
                            node: v,
                            minute: t,
                            movement: mv,
                            value,
                        });
                    }
                }
            }
        }
    }

    let mut series = Vec::with_capacity(n);
    let ids = config.node_ids();
    for (v, id) in ids.iter().enumerate() {
        let mut attrs = Array2::zeros((RAW_WIDTH, t_total));
        let col = |m: Measure, mv: usize| Measure::ALL.iter().position(|&x| x == m).unwrap() * MOVEMENTS + mv;
        for t in 0..t_total {
            let cnt = counts[v].row(t);
            let approach = |bound: usize| (0..3).map(|k| cnt[bound * 3 + k]).sum::<f64>();
            let ew = approach(2) + approach(3);
            let ns = approach(0) + approach(1);
            let share = if ew + ns > 0.0 { ew / (ew + ns) } else { 0.5 };
            let usable = 60.0 - 2.0 * YELLOW_S;
            let g_ew = round1((usable * share).clamp(15.0, usable - 15.0));
            let g_ns = round1(usable - g_ew);
            for mv in 0..MOVEMENTS {
                let bound = mv / 3;
                let green = if bound >= 2 { g_ew } else { g_ns };
                let red = round1(60.0 - green - YELLOW_S);
                let c = cnt[mv];
                let jitter = 1.0 - 0.05 * rng.random::<f64>();
                let mut speed = config.free_flow_mph / (1.0 + approach(bound) / config.half_speed_volume) * jitter;
                if mv % 3 != 1 {
                    speed *= 0.6;
                }
                let speed = round2(speed).clamp(0.01, config.free_flow_mph);
                let yellow_arr = binomial(c, YELLOW_S / 60.0, &mut rng);
                let green_arr = binomial(c - yellow_arr, green / (green + red), &mut rng);
                attrs[[col(Measure::Count, mv), t]] = c;
                attrs[[col(Measure::Speed, mv), t]] = speed;
                attrs[[col(Measure::ArrGreen, mv), t]] = green_arr;
                attrs[[col(Measure::ArrRed, mv), t]] = c - yellow_arr - green_arr;
                attrs[[col(Measure::ArrYellow, mv), t]] = yellow_arr;
                attrs[[col(Measure::GreenTime, mv), t]] = green;
                attrs[[col(Measure::RedTime, mv), t]] = red;
            }
            attrs[[RAW_WIDTH - 1, t]] = match config.day_class(t / MINUTES_PER_DAY) {
                DayClass::Weekday => 1.0,
                DayClass::Weekend => 0.0,
            };
        }
        series.push(RawIntersectionSeries {
            intersection_id: id.clone(),
            first_minute: 0,
            attribute_names: raw_attribute_names(),
            attributes: attrs,
        });
    }

    Ok(SynthData {
        config: config.clone(),
        topology,
        series,
        outliers,
    })
}

/// CSV text for one intersection in the ingestion schema.
pub fn to_csv(series: &RawIntersectionSeries) -> String {
    let mut out = String::with_capacity(series.len() * RAW_WIDTH * 3);
    let _ = writeln!(out, "minute,intersection_id,{}", series.attribute_names.join(","));
    for (k, col) in series.attributes.columns().into_iter().enumerate() {
        let _ = write!(out, "{},{}", series.first_minute + k, series.intersection_id);
        for v in col {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub const TOPOLOGY_FILE: &str = "topology.txt";

impl SynthData {
    /// Writes `topology.txt` and one `<id>.csv` per intersection; returns
    /// the CSV paths in topology order.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let topo = dir.join(TOPOLOGY_FILE);
        std::fs::write(&topo, self.topology.to_text()).map_err(|e| Error::io(&topo, e))?;
        let mut paths = Vec::new();
        for s in &self.series {
            let path = dir.join(format!("{}.csv", s.intersection_id));
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = std::io::BufWriter::new(file);
            w.write_all(to_csv(s).as_bytes()).map_err(|e| Error::io(&path, e))?;
            w.flush().map_err(|e| Error::io(&path, e))?;
            paths.push(path);
        }
        Ok(paths)
    }
}
