//! Synthetic genotypes with local LD and the quantitative / dichotomous trait
//! models used to evaluate empirical FDR and power.

mod cluster;
mod genotype;
mod traits;

pub use cluster::{choose_causal, ld_cluster, representatives, ClusterSet};
pub use genotype::{mac_filter, simulate_genotypes, GenotypeMatrix, MafSampler};
pub use traits::{
    effect_sizes, gen_dichotomous, gen_quantitative, generate_trait, EffectSizes, Phenotype, SignPattern, TraitKind,
    TraitSpec,
};

use serde::{Deserialize, Serialize};

use crate::{seed, Result};

/// Everything needed to draw one simulated replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n: usize,
    /// Variants simulated before MAC filtering.
    pub p: usize,
    pub rho: f64,
    pub maf: MafSampler,
    pub mac_min: u64,
    pub r_max: f64,
    /// Keep one random member per LD cluster as the feature set.
    pub prune_to_representatives: bool,
    pub causal: usize,
    /// Multiplies the trait's default genetic variance target.
    pub variance_scale: f64,
    pub c: f64,
    pub noise_variance: f64,
    pub covariate_effect: f64,
    pub prevalence: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            p: 210,
            rho: 0.7,
            maf: MafSampler::default(),
            mac_min: 10,
            r_max: 0.75,
            prune_to_representatives: true,
            causal: 4,
            variance_scale: 1.0,
            c: 2.0,
            noise_variance: 2.0,
            covariate_effect: 1.0,
            prevalence: 0.10,
        }
    }
}

/// One simulated replicate after filtering and pruning.
#[derive(Clone, Debug)]
pub struct SimDataset {
    pub genotypes: GenotypeMatrix,
    pub clusters: ClusterSet,
    /// Indices into `genotypes`.
    pub causal: Vec<usize>,
    pub trait_spec: TraitSpec,
    pub phenotype: Phenotype,
}

/// Genotypes → MAC filter → LD clusters → representatives → causal set →
/// effects → trait, all derived from `seed`.
pub fn simulate_dataset(cfg: &SimConfig, kind: TraitKind, seed_value: u64) -> Result<SimDataset> {
    use seed::stream;
    let raw = simulate_genotypes(
        cfg.n,
        cfg.p,
        cfg.rho,
        &cfg.maf,
        seed::derive(seed_value, &[stream::GENOTYPE]),
    )?;
    let filtered = mac_filter(&raw, cfg.mac_min)?;
    let clusters = ld_cluster(&filtered, cfg.r_max)?;
    let causal_seed = seed::derive(seed_value, &[stream::CAUSAL]);
    let (genotypes, clusters) = if cfg.prune_to_representatives {
        let reps = representatives(&clusters, seed::derive(causal_seed, &[1]));
        let pruned = filtered.subset(&reps);
        let singletons = ClusterSet::singletons(pruned.p());
        (pruned, singletons)
    } else {
        (filtered, clusters)
    };
    let causal = choose_causal(&clusters, cfg.causal, causal_seed)?;
    let mafs: Vec<f64> = causal.iter().map(|&j| genotypes.maf()[j]).collect();
    let vars: Vec<f64> = causal.iter().map(|&j| genotypes.empirical_variance(j)).collect();
    let target = kind.default_variance_target() * cfg.variance_scale;
    let effects = effect_sizes(&mafs, &vars, target, SignPattern::FirstNegative)?;
    let trait_spec = TraitSpec {
        kind,
        causal: causal.clone(),
        beta: effects.beta,
        a: effects.a,
        c: cfg.c,
        noise_variance: cfg.noise_variance,
        covariate_effect: cfg.covariate_effect,
        prevalence: cfg.prevalence,
    };
    let phenotype = generate_trait(&genotypes, &trait_spec, seed::derive(seed_value, &[stream::TRAIT]))?;
    Ok(SimDataset {
        genotypes,
        clusters,
        causal,
        trait_spec,
        phenotype,
    })
}
