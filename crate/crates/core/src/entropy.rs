//! Symbolic-dynamics census over close-approach itineraries.
//!
//! Each propagated sample yields a word of centre indices (consecutive
//! duplicates collapsed); the census counts distinct prefixes per length and
//! fits the exponential growth rate of the counts. The fitted slope is a
//! per-symbol entropy estimate: positive growth certifies word production,
//! the structural cases n = 1, 2 give slope 0 exactly.
//!
//! Grid sampling alone undercounts long words — their parameter cylinders
//! are exponentially thin — so the census refines by bisection between
//! neighbouring samples whose words differ, preferring pairs that share long
//! prefixes (those intervals straddle the deepest boundaries).

use crate::beam::Beam;
use crate::integrator::{propagate, IntegratorSettings, StopCondition, Trajectory};
use crate::model::CentreConfig;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::{self, Write};

/// Itinerary of one trajectory: close-approach centre indices in time order,
/// consecutive duplicates collapsed.
pub fn itinerary(traj: &Trajectory) -> Vec<usize> {
    traj.close_approach_symbols()
}

/// Full-shift upper bound on distinct words of length `l` with no immediate
/// repeats: n·(n-1)^{l-1}.
pub fn full_shift_bound(n: usize, l: usize) -> f64 {
    if l == 0 {
        return 1.0;
    }
    n as f64 * ((n - 1) as f64).powi(l as i32 - 1)
}

/// One-parameter beam family scanned by the census.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeamFamily {
    pub angle: f64,
    pub b_min: f64,
    pub b_max: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CensusSpec {
    pub energy: f64,
    pub families: Vec<BeamFamily>,
    pub l_max: usize,
    /// Extra propagations granted to bisection refinement; 0 disables it.
    pub refine_budget: u64,
    /// Refinement stops once an interval is narrower than this.
    pub min_interval: f64,
}

impl CensusSpec {
    pub fn quick(energy: f64, l_max: usize) -> Self {
        CensusSpec {
            energy,
            families: vec![
                BeamFamily { angle: 0.35, b_min: -1.5, b_max: 1.5, samples: 400 },
                BeamFamily { angle: 2.1, b_min: -1.5, b_max: 1.5, samples: 400 },
            ],
            l_max,
            refine_budget: 20_000,
            min_interval: 1e-13,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GrowthFit {
    /// Slope of ln(count) against word length over the fitted window.
    pub slope: f64,
    /// RMS fit residual relative to the mean ln(count); 0 for structural
    /// (constant-count) censuses.
    pub residual: f64,
    pub window: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct WordCensus {
    /// count(L) for L = 1..=l_max at index L-1.
    pub word_length_counts: Vec<u64>,
    pub sample_size: u64,
    pub energy: f64,
    pub growth_fit: GrowthFit,
    pub l_max: usize,
    pub n_centres: usize,
    /// The realized words themselves (deterministically ordered).
    pub words: BTreeSet<Vec<usize>>,
}

impl WordCensus {
    /// Count distinct prefixes per length from the realized words.
    fn from_words(
        words: BTreeSet<Vec<usize>>,
        sample_size: u64,
        energy: f64,
        l_max: usize,
        n_centres: usize,
    ) -> Self {
        let mut counts = vec![0u64; l_max];
        for l in 1..=l_max {
            let prefixes: BTreeSet<&[usize]> = words
                .iter()
                .filter(|w| w.len() >= l)
                .map(|w| &w[..l])
                .collect();
            counts[l - 1] = prefixes.len() as u64;
        }
        let growth_fit = fit_growth(&counts);
        WordCensus {
            word_length_counts: counts,
            sample_size,
            energy,
            growth_fit,
            l_max,
            n_centres,
            words,
        }
    }

    /// Census CSV `L,count,bound`, preceded by a JSON metadata comment line.
    pub fn write_csv<W: Write>(&self, w: &mut W, meta: &serde_json::Value) -> io::Result<()> {
        writeln!(w, "# {}", serde_json::to_string(meta).unwrap_or_default())?;
        writeln!(w, "L,count,bound")?;
        for (i, c) in self.word_length_counts.iter().enumerate() {
            let bound = full_shift_bound(self.n_centres, i + 1);
            writeln!(w, "{},{},{}", i + 1, c, crate::util::fmt_f64(bound))?;
        }
        Ok(())
    }
}

/// Least-squares slope of ln(count) vs length over the window of strictly
/// realized lengths. Constant counts short-circuit to slope 0 exactly.
fn fit_growth(counts: &[u64]) -> GrowthFit {
    let usable: Vec<(usize, u64)> = counts
        .iter()
        .enumerate()
        .map(|(i, c)| (i + 1, *c))
        .take_while(|(_, c)| *c > 0)
        .collect();
    if usable.len() < 2 {
        return GrowthFit { slope: 0.0, residual: 0.0, window: (1, usable.len().max(1)) };
    }
    let window = (1, usable.len());
    if usable.iter().all(|(_, c)| *c == usable[0].1) {
        return GrowthFit { slope: 0.0, residual: 0.0, window };
    }
    let n = usable.len() as f64;
    let xs: Vec<f64> = usable.iter().map(|(l, _)| *l as f64).collect();
    let ys: Vec<f64> = usable.iter().map(|(_, c)| (*c as f64).ln()).collect();
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let residual = (ss_res / n).sqrt() / ym.abs().max(1e-12);
    GrowthFit { slope, residual, window }
}

fn word_of_beam(
    config: &CentreConfig,
    settings: &IntegratorSettings,
    energy: f64,
    angle: f64,
    b: f64,
    l_max: usize,
) -> Vec<usize> {
    let launch = settings.r_escape;
    let Ok(x) = Beam::planar(energy, angle, b, launch).state(config) else {
        return Vec::new();
    };
    match propagate(x, config, settings, StopCondition::Escape) {
        Ok(traj) => {
            let mut w = itinerary(&traj);
            w.truncate(l_max);
            w
        }
        Err(_) => Vec::new(),
    }
}

/// Propagates the sampler's beams, collects itineraries, counts distinct
/// prefixes per length, and fits the growth slope. Bisection refinement
/// between differing neighbours realizes words that uniform grids miss.
pub fn word_census(
    config: &CentreConfig,
    settings: &IntegratorSettings,
    spec: &CensusSpec,
) -> WordCensus {
    let mut words: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut sample_size = 0u64;

    // (shared prefix length, family angle, interval) work queue; longest
    // shared prefixes first so refinement digs where the deep words are.
    let mut queue: Vec<(usize, f64, (f64, Vec<usize>), (f64, Vec<usize>))> = Vec::new();

    for family in &spec.families {
        let n = family.samples.max(2);
        let bs: Vec<f64> = (0..n)
            .map(|i| family.b_min + (family.b_max - family.b_min) * i as f64 / (n - 1) as f64)
            .collect();
        let ws: Vec<Vec<usize>> = bs
            .par_iter()
            .map(|b| word_of_beam(config, settings, spec.energy, family.angle, *b, spec.l_max))
            .collect();
        sample_size += n as u64;
        for w in &ws {
            words.insert(w.clone());
        }
        for i in 0..n - 1 {
            if ws[i] != ws[i + 1] {
                let shared = shared_prefix(&ws[i], &ws[i + 1]);
                queue.push((
                    shared,
                    family.angle,
                    (bs[i], ws[i].clone()),
                    (bs[i + 1], ws[i + 1].clone()),
                ));
            }
        }
    }

    // Batched refinement: deterministic order, highest shared prefix first.
    let mut budget = spec.refine_budget;
    while budget > 0 && !queue.is_empty() {
        queue.sort_by(|a, b| {
            b.0.cmp(&a.0).then(
                a.2 .0
                    .partial_cmp(&b.2 .0)
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
        });
        let batch: Vec<_> = queue
            .drain(..queue.len().min(64).min(budget as usize))
            .collect();
        budget = budget.saturating_sub(batch.len() as u64);
        sample_size += batch.len() as u64;
        let mids: Vec<(f64, f64)> = batch
            .iter()
            .map(|(_, angle, (b0, _), (b1, _))| (*angle, 0.5 * (b0 + b1)))
            .collect();
        let mid_words: Vec<Vec<usize>> = mids
            .par_iter()
            .map(|(angle, b)| {
                word_of_beam(config, settings, spec.energy, *angle, *b, spec.l_max)
            })
            .collect();
        for ((shared, angle, (b0, w0), (b1, w1)), ((_, bm), wm)) in
            batch.into_iter().zip(mids.into_iter().zip(mid_words))
        {
            let _ = shared;
            words.insert(wm.clone());
            if (bm - b0).abs() > spec.min_interval && wm != w0 {
                queue.push((
                    shared_prefix(&w0, &wm),
                    angle,
                    (b0, w0),
                    (bm, wm.clone()),
                ));
            }
            if (b1 - bm).abs() > spec.min_interval && wm != w1 {
                queue.push((shared_prefix(&wm, &w1), angle, (bm, wm), (b1, w1)));
            }
        }
    }

    WordCensus::from_words(words, sample_size, spec.energy, spec.l_max, config.n_centres())
}

fn shared_prefix(a: &[usize], b: &[usize]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Vec3;

    fn single_centre() -> CentreConfig {
        CentreConfig::new(2, vec![Vec3::zeros()], vec![1.0]).unwrap()
    }

    fn pair() -> CentreConfig {
        CentreConfig::new(
            2,
            vec![Vec3::new(-0.5, 0.0, 0.0), Vec3::new(0.5, 0.0, 0.0)],
            vec![1.0, 1.0],
        )
        .unwrap()
    }

    fn triangle() -> CentreConfig {
        CentreConfig::new(
            2,
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.5, 0.75f64.sqrt(), 0.0),
            ],
            vec![1.0, 1.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn swing_by_and_miss_words() {
        let config = pair();
        let settings = IntegratorSettings::for_config(&config);
        // Aimed at centre 2 (index 1) with small offset: single swing-by.
        let x = Beam::planar(4.0, 0.0, 0.5 + 0.01, settings.r_escape)
            .state(&config)
            .unwrap();
        let traj = propagate(x, &config, &settings, StopCondition::Escape).unwrap();
        let w = itinerary(&traj);
        assert!(w == vec![1] || w == vec![0], "unexpected word {w:?}");

        // Wide miss: empty word.
        let x = Beam::planar(4.0, 0.0, 6.0, settings.r_escape).state(&config).unwrap();
        let traj = propagate(x, &config, &settings, StopCondition::Escape).unwrap();
        assert!(itinerary(&traj).is_empty());
    }

    #[test]
    fn full_shift_bound_values() {
        assert_eq!(full_shift_bound(3, 1), 3.0);
        assert_eq!(full_shift_bound(3, 2), 6.0);
        assert_eq!(full_shift_bound(3, 8), 3.0 * 128.0);
        assert_eq!(full_shift_bound(2, 5), 2.0);
    }

    #[test]
    fn single_centre_census_is_degenerate() {
        let config = single_centre();
        let settings = IntegratorSettings::for_config(&config);
        let spec = CensusSpec {
            energy: 2.0,
            families: vec![BeamFamily { angle: 0.0, b_min: -2.0, b_max: 2.0, samples: 60 }],
            l_max: 4,
            refine_budget: 0,
            min_interval: 1e-12,
        };
        let census = word_census(&config, &settings, &spec);
        // Only "" and "1": count(1) = 1, count(L >= 2) = 0.
        assert!(census.word_length_counts[0] <= 1);
        assert_eq!(census.word_length_counts[1], 0);
        assert_eq!(census.growth_fit.slope, 0.0);
    }

    #[test]
    fn two_centre_census_slope_is_structurally_zero() {
        let config = pair();
        let settings = IntegratorSettings::for_config(&config);
        let spec = CensusSpec {
            energy: 1.0,
            families: vec![
                BeamFamily { angle: 0.2, b_min: -1.0, b_max: 1.0, samples: 120 },
                BeamFamily { angle: 1.4, b_min: -1.0, b_max: 1.0, samples: 120 },
            ],
            l_max: 5,
            refine_budget: 500,
            min_interval: 1e-12,
        };
        let census = word_census(&config, &settings, &spec);
        // Words alternate; at most 2 per length, slope exactly 0.
        for (i, c) in census.word_length_counts.iter().enumerate() {
            assert!(*c <= 2, "count({}) = {c}", i + 1);
        }
        assert_eq!(census.growth_fit.slope, 0.0);
        for w in &census.words {
            for pair in w.windows(2) {
                assert_ne!(pair[0], pair[1], "immediate repeat survived collapse");
            }
        }
    }

    #[test]
    fn census_respects_full_shift_bound_and_monotonicity() {
        let config = triangle();
        let settings = IntegratorSettings::for_config(&config)
            .with_time_budget(&config, 10.0, 2e3);
        let small = CensusSpec {
            energy: 10.0,
            families: vec![BeamFamily { angle: 0.35, b_min: -1.2, b_max: 1.2, samples: 150 }],
            l_max: 5,
            refine_budget: 300,
            min_interval: 1e-12,
        };
        let census_small = word_census(&config, &settings, &small);
        let mut bigger = small.clone();
        bigger.refine_budget = 1200;
        let census_big = word_census(&config, &settings, &bigger);
        for l in 1..=5usize {
            let bound = full_shift_bound(3, l);
            assert!(census_small.word_length_counts[l - 1] as f64 <= bound);
            assert!(census_big.word_length_counts[l - 1] as f64 <= bound);
            // More samples can only add words.
            assert!(
                census_big.word_length_counts[l - 1] >= census_small.word_length_counts[l - 1]
            );
        }
    }

    #[test]
    fn relabeling_centres_preserves_counts() {
        let config = triangle();
        let relabeled = CentreConfig::new(
            2,
            vec![
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.5, 0.75f64.sqrt(), 0.0),
                Vec3::new(0.0, 0.0, 0.0),
            ],
            vec![1.0, 1.0, 1.0],
        )
        .unwrap();
        let settings = IntegratorSettings::for_config(&config)
            .with_time_budget(&config, 10.0, 2e3);
        let spec = CensusSpec {
            energy: 10.0,
            families: vec![BeamFamily { angle: 1.0, b_min: -1.0, b_max: 1.0, samples: 120 }],
            l_max: 4,
            refine_budget: 200,
            min_interval: 1e-12,
        };
        let a = word_census(&config, &settings, &spec);
        let b = word_census(&relabeled, &settings, &spec);
        assert_eq!(a.word_length_counts, b.word_length_counts);
    }

    #[test]
    fn triangle_census_grows() {
        // Moderate smoke version of the entropy dichotomy: by L = 4 the
        // count must exceed the two-centre ceiling and the slope be positive.
        let config = triangle();
        let settings = IntegratorSettings::for_config(&config)
            .with_time_budget(&config, 10.0, 2e3);
        let spec = CensusSpec {
            energy: 10.0,
            families: vec![
                BeamFamily { angle: 0.35, b_min: -1.2, b_max: 1.2, samples: 300 },
                BeamFamily { angle: 2.1, b_min: -1.2, b_max: 1.2, samples: 300 },
            ],
            l_max: 4,
            refine_budget: 4_000,
            min_interval: 1e-13,
        };
        let census = word_census(&config, &settings, &spec);
        assert!(census.word_length_counts[0] >= 3);
        assert!(
            census.word_length_counts[3] > 2,
            "counts {:?}",
            census.word_length_counts
        );
        assert!(census.growth_fit.slope > 0.0);
    }

    #[test]
    fn census_csv_layout() {
        let config = pair();
        let settings = IntegratorSettings::for_config(&config);
        let spec = CensusSpec {
            energy: 1.0,
            families: vec![BeamFamily { angle: 0.0, b_min: -0.5, b_max: 0.5, samples: 20 }],
            l_max: 3,
            refine_budget: 0,
            min_interval: 1e-12,
        };
        let census = word_census(&config, &settings, &spec);
        let mut buf = Vec::new();
        census
            .write_csv(&mut buf, &serde_json::json!({"E": 1.0}))
            .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# {"));
        assert_eq!(lines.next().unwrap(), "L,count,bound");
        assert_eq!(lines.count(), 3);
    }
}
