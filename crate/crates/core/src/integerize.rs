//! Truncate-replicate-sample integerization of fractional zone weights.
//!
//! Each record is first replicated `floor(weight)` times. The remaining
//! `target − Σ floor` slots are filled by a fixed-size without-replacement
//! sample whose inclusion probabilities are proportional to the fractional
//! parts, so that when the weights already sum to the target every record's
//! expected count equals its weight. The sample is drawn systematically in
//! record order from a single uniform start.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::ipf::WeightMatrix;
use crate::schema::ConstraintTable;

/// Master seed; zone `i` samples from stream `i` of the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngSpec {
    pub seed: u64,
}

impl RngSpec {
    /// Identity of the generator, recorded in run manifests.
    pub const GENERATOR: &'static str =
        "ChaCha8 (rand_chacha 0.9) seed_from_u64(seed), stream = zone index";

    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn stream(&self, zone_index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(zone_index);
        rng
    }
}

/// Uniform draw on `[0, 1)` with 53 bits of precision.
pub fn unit_uniform<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Inclusion probabilities proportional to `sizes` for a sample of `n`
/// distinct units, capped at 1 with the excess redistributed.
///
/// `n` must not exceed the number of positive sizes.
pub fn inclusion_probabilities(sizes: &[f64], n: usize) -> Vec<f64> {
    let mut probs = vec![0.0; sizes.len()];
    let mut certain = vec![false; sizes.len()];
    loop {
        let n_certain = certain.iter().filter(|c| **c).count();
        let remaining = n - n_certain;
        let mass: f64 = sizes
            .iter()
            .zip(&certain)
            .filter(|(_, c)| !**c)
            .map(|(s, _)| *s)
            .sum();
        let mut capped = false;
        for (i, &s) in sizes.iter().enumerate() {
            if certain[i] {
                probs[i] = 1.0;
                continue;
            }
            let p = if mass > 0.0 {
                remaining as f64 * s / mass
            } else {
                0.0
            };
            if p >= 1.0 {
                certain[i] = true;
                capped = true;
            }
            probs[i] = p.min(1.0);
        }
        if !capped {
            return probs;
        }
    }
}

/// Systematic πps selection: unit `i` is selected when some point `u + j`
/// (`j` integer) falls in its cumulative interval. Units with probability 1
/// are always selected; the rest must sum to an integer (rounded here).
pub fn systematic_sample(probs: &[f64], u: f64) -> Vec<bool> {
    const CERTAIN: f64 = 1.0 - 1e-12;
    let mut selected: Vec<bool> = probs.iter().map(|p| *p >= CERTAIN).collect();
    let open: Vec<usize> = (0..probs.len())
        .filter(|&i| !selected[i] && probs[i] > 0.0)
        .collect();
    let total: f64 = open.iter().map(|&i| probs[i]).sum();
    let k = libm::round(total);
    if k < 1.0 {
        return selected;
    }
    let points_below = |c: f64| libm::ceil(c - u).clamp(0.0, k);
    let mut cumulative = 0.0;
    let mut below = 0.0;
    for (pos, &i) in open.iter().enumerate() {
        cumulative = if pos + 1 == open.len() {
            k
        } else {
            cumulative + probs[i]
        };
        let next = points_below(cumulative);
        if next > below {
            selected[i] = true;
        }
        below = next;
    }
    selected
}

fn draw_proportional<R: RngCore + ?Sized>(sizes: &[f64], rng: &mut R) -> Option<usize> {
    let total: f64 = sizes.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let target = unit_uniform(rng) * total;
    let mut acc = 0.0;
    let mut last = None;
    for (i, &s) in sizes.iter().enumerate() {
        if s > 0.0 {
            acc += s;
            last = Some(i);
            if target < acc {
                return Some(i);
            }
        }
    }
    last
}

/// Integerizes one zone's weights so the counts sum to `target` exactly.
///
/// When the deficit exceeds the number of records with a fractional part, every
/// such record gains one replica and the rest are drawn with replacement in
/// proportion to the original weights. A surplus (only possible when the
/// weights overshoot the target) is removed the same way in reverse, never
/// taking a count below zero.
pub fn trs_zone<R: RngCore + ?Sized>(weights: &[f64], target: u64, rng: &mut R) -> Result<Vec<u64>> {
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::InvalidInput(format!("weight {w} is not finite and non-negative")));
    }
    if target > 0 && weights.iter().all(|w| *w == 0.0) {
        return Err(Error::NoSupport { target });
    }
    let mut counts: Vec<u64> = weights.iter().map(|w| libm::floor(*w) as u64).collect();
    let fractions: Vec<f64> = weights
        .iter()
        .zip(&counts)
        .map(|(w, c)| w - *c as f64)
        .collect();
    let assigned: u64 = counts.iter().sum();

    if assigned < target {
        let deficit = (target - assigned) as usize;
        let with_fraction = fractions.iter().filter(|f| **f > 0.0).count();
        let sampled = deficit.min(with_fraction);
        if sampled > 0 {
            let probs = inclusion_probabilities(&fractions, sampled);
            let u = unit_uniform(rng);
            for (c, hit) in counts.iter_mut().zip(systematic_sample(&probs, u)) {
                *c += hit as u64;
            }
        }
        for _ in sampled..deficit {
            let i = draw_proportional(weights, rng).ok_or(Error::NoSupport { target })?;
            counts[i] += 1;
        }
    } else if assigned > target {
        let surplus = (assigned - target) as usize;
        let removable: Vec<f64> = fractions
            .iter()
            .zip(&counts)
            .map(|(f, c)| if *c > 0 { *f } else { 0.0 })
            .collect();
        let with_fraction = removable.iter().filter(|f| **f > 0.0).count();
        let sampled = surplus.min(with_fraction);
        if sampled > 0 {
            let probs = inclusion_probabilities(&removable, sampled);
            let u = unit_uniform(rng);
            for (c, hit) in counts.iter_mut().zip(systematic_sample(&probs, u)) {
                *c -= hit as u64;
            }
        }
        for _ in sampled..surplus {
            let sizes: Vec<f64> = counts.iter().map(|c| *c as f64).collect();
            // assigned > target >= 0 leaves at least one positive count
            let i = draw_proportional(&sizes, rng).expect("positive counts remain");
            counts[i] -= 1;
        }
    }
    Ok(counts)
}

/// Per-zone integer replication counts of survey records.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPopulation {
    pub zone_ids: Vec<String>,
    pub record_ids: Vec<String>,
    /// `counts[zone][record]`
    pub counts: Vec<Vec<u64>>,
    pub totals: Vec<u64>,
}

impl SyntheticPopulation {
    pub fn new(zone_ids: Vec<String>, record_ids: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        if counts.len() != zone_ids.len() || counts.iter().any(|c| c.len() != record_ids.len()) {
            return Err(Error::Dimension("population counts do not match zones × records".into()));
        }
        let totals = counts.iter().map(|c| c.iter().sum()).collect();
        Ok(Self {
            zone_ids,
            record_ids,
            counts,
            totals,
        })
    }

    pub fn n_zones(&self) -> usize {
        self.zone_ids.len()
    }

    pub fn n_records(&self) -> usize {
        self.record_ids.len()
    }

    /// Counts pooled over all zones.
    pub fn pooled(&self) -> Vec<u64> {
        let mut out = vec![0; self.n_records()];
        for zone in &self.counts {
            for (o, c) in out.iter_mut().zip(zone) {
                *o += c;
            }
        }
        out
    }
}

/// Reference-table zone totals rounded half up.
pub fn zone_populations(reference: &ConstraintTable) -> Vec<u64> {
    (0..reference.n_zones())
        .map(|z| libm::floor(reference.zone_total(z) + 0.5).max(0.0) as u64)
        .collect()
}

/// Integerizes one zone with its own generator stream.
pub fn synthesize_zone(weights: &WeightMatrix, zone: usize, target: u64, rng: &RngSpec) -> Result<Vec<u64>> {
    let mut stream = rng.stream(zone as u64);
    trs_zone(weights.column(zone), target, &mut stream).map_err(|e| e.in_zone(&weights.zone_ids[zone]))
}

pub fn synthesize(weights: &WeightMatrix, zone_populations: &[u64], seed: u64) -> Result<SyntheticPopulation> {
    if zone_populations.len() != weights.n_zones() {
        return Err(Error::Dimension(format!(
            "{} zone populations for {} zones",
            zone_populations.len(),
            weights.n_zones()
        )));
    }
    let rng = RngSpec::new(seed);
    let counts = zone_populations
        .iter()
        .enumerate()
        .map(|(z, &target)| synthesize_zone(weights, z, target, &rng))
        .collect::<Result<Vec<_>>>()?;
    SyntheticPopulation::new(weights.zone_ids.clone(), weights.record_ids.clone(), counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn integer_weights_pass_through() {
        let mut rng = RngSpec::new(1).stream(0);
        assert_eq!(trs_zone(&[2.0, 0.0, 3.0], 5, &mut rng).unwrap(), vec![2, 0, 3]);
    }

    #[test]
    fn single_draw_outcomes() {
        let mut seen = [0usize; 2];
        for seed in 0..2000 {
            let mut rng = RngSpec::new(seed).stream(0);
            let c = trs_zone(&[1.4, 0.6, 2.0], 4, &mut rng).unwrap();
            match c.as_slice() {
                [2, 0, 2] => seen[0] += 1,
                [1, 1, 2] => seen[1] += 1,
                other => panic!("unexpected outcome {other:?}"),
            }
        }
        let p = seen[0] as f64 / 2000.0;
        assert!((p - 0.4).abs() < 0.04, "{p}");
    }

    #[test]
    fn no_support_is_an_error() {
        let mut rng = RngSpec::new(1).stream(0);
        assert_eq!(trs_zone(&[0.0, 0.0], 3, &mut rng), Err(Error::NoSupport { target: 3 }));
        assert_eq!(trs_zone(&[0.0, 0.0], 0, &mut rng).unwrap(), vec![0, 0]);
        assert!(trs_zone(&[f64::NAN], 1, &mut rng).is_err());
    }

    #[test]
    fn deficit_beyond_fractions_draws_with_replacement() {
        let mut rng = RngSpec::new(7).stream(3);
        let c = trs_zone(&[1.5, 2.0], 10, &mut rng).unwrap();
        assert_eq!(c.iter().sum::<u64>(), 10);
        assert!(c[0] >= 2 && c[1] >= 2);
    }

    #[test]
    fn surplus_is_removed_without_going_negative() {
        let mut rng = RngSpec::new(7).stream(3);
        let c = trs_zone(&[3.0, 0.2, 2.7], 2, &mut rng).unwrap();
        assert_eq!(c.iter().sum::<u64>(), 2);
    }

    #[test]
    fn inclusion_probabilities_cap_at_one() {
        let p = inclusion_probabilities(&[5.0, 1.0, 1.0, 0.0], 2);
        assert_eq!(p[0], 1.0);
        assert!((p[1] - 0.5).abs() < 1e-15 && (p[2] - 0.5).abs() < 1e-15);
        assert_eq!(p[3], 0.0);
    }

    #[test]
    fn systematic_sample_has_fixed_size() {
        let probs = [0.3, 0.9, 0.5, 0.3];
        for i in 0..100 {
            let u = i as f64 / 100.0;
            let n = systematic_sample(&probs, u).iter().filter(|s| **s).count();
            assert_eq!(n, 2);
        }
    }

    #[test]
    fn streams_are_independent_of_other_zones() {
        let w = WeightMatrix {
            zone_ids: vec!["a".to_string(), "b".to_string()],
            record_ids: vec!["r1".into(), "r2".into(), "r3".into()],
            columns: vec![vec![0.5, 0.5, 1.0], vec![1.3, 0.3, 0.4]],
        };
        let both = synthesize(&w, &[2, 2], 99).unwrap();
        let alone = synthesize_zone(&w, 1, 2, &RngSpec::new(99)).unwrap();
        assert_eq!(both.counts[1], alone);
        assert_eq!(both.totals, vec![2, 2]);
    }

    #[test]
    fn zone_errors_carry_the_zone_id() {
        let w = WeightMatrix {
            zone_ids: vec!["Z7".to_string()],
            record_ids: vec!["r1".into()],
            columns: vec![vec![0.0]],
        };
        match synthesize(&w, &[4], 1) {
            Err(Error::Zone { zone, .. }) => assert_eq!(zone, "Z7"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zone_population_rounds_half_up() {
        let t = ConstraintTable::new(
            "v",
            vec!["a".into(), "b".into()],
            vec!["x".into(), "y".into()],
            vec![vec![1.25, 1.25], vec![1.2, 1.2]],
        )
        .unwrap();
        assert_eq!(zone_populations(&t), vec![3, 2]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn exact_total_and_floor(
                weights in proptest::collection::vec(0.0f64..20.0, 1..30),
                slack in -5i64..15,
                seed in any::<u64>(),
            ) {
                let sum: f64 = weights.iter().sum();
                let target = (libm::round(sum) as i64 + slack).max(0) as u64;
                let floor_sum: u64 = weights.iter().map(|w| libm::floor(*w) as u64).sum();
                let mut rng = RngSpec::new(seed).stream(0);
                match trs_zone(&weights, target, &mut rng) {
                    Ok(c) => {
                        prop_assert_eq!(c.iter().sum::<u64>(), target);
                        if target >= floor_sum {
                            for (ci, w) in c.iter().zip(&weights) {
                                prop_assert!(*ci as f64 >= libm::floor(*w));
                            }
                        }
                    }
                    Err(e) => {
                        prop_assert_eq!(e, Error::NoSupport { target });
                        prop_assert!(weights.iter().all(|w| *w == 0.0));
                    }
                }
            }

            #[test]
            fn deterministic_per_seed(weights in proptest::collection::vec(0.0f64..5.0, 1..10), seed in any::<u64>()) {
                let target = libm::round(weights.iter().sum::<f64>()) as u64;
                let a = trs_zone(&weights, target, &mut RngSpec::new(seed).stream(4));
                let b = trs_zone(&weights, target, &mut RngSpec::new(seed).stream(4));
                prop_assert_eq!(a, b);
            }
        }
    }
}
