use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{seed, stats, Error, Result};

/// Distribution of per-variant minor allele frequencies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MafSampler {
    LogUniform { min: f64, max: f64 },
    Uniform { min: f64, max: f64 },
    Fixed { value: f64 },
}

impl Default for MafSampler {
    fn default() -> Self {
        MafSampler::LogUniform { min: 0.005, max: 0.5 }
    }
}

impl MafSampler {
    fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v <= 0.5;
        let valid = match *self {
            MafSampler::LogUniform { min, max } | MafSampler::Uniform { min, max } => ok(min) && ok(max) && min <= max,
            MafSampler::Fixed { value } => ok(value),
        };
        if valid {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("MAF sampler {self:?} must stay within (0, 0.5]")))
        }
    }

    fn sample(&self, rng: &mut seed::Rng) -> f64 {
        match *self {
            MafSampler::LogUniform { min, max } if min < max => rng.random_range(min.ln()..max.ln()).exp(),
            MafSampler::Uniform { min, max } if min < max => rng.random_range(min..max),
            MafSampler::LogUniform { min, .. } | MafSampler::Uniform { min, .. } => min,
            MafSampler::Fixed { value } => value,
        }
    }
}

/// n × p dosages coded to the minor allele, stored column-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GenotypeMatrix {
    n: usize,
    ids: Vec<String>,
    positions: Vec<u64>,
    dosages: Vec<u8>,
    mac: Vec<u64>,
    maf: Vec<f64>,
}

impl GenotypeMatrix {
    /// Builds the matrix from column-major dosages, flipping any column whose
    /// counted allele is the major one.
    pub fn new(n: usize, ids: Vec<String>, positions: Vec<u64>, mut dosages: Vec<u8>) -> Result<Self> {
        let p = ids.len();
        if positions.len() != p || dosages.len() != n * p {
            return Err(Error::Shape(format!(
                "{p} variants x {n} samples needs {} dosages and {p} positions",
                n * p
            )));
        }
        if n == 0 {
            return Err(Error::Empty("genotype matrix has no samples".into()));
        }
        if dosages.iter().any(|&d| d > 2) {
            return Err(Error::InvalidConfig("dosages must be 0, 1 or 2".into()));
        }
        let mut mac = Vec::with_capacity(p);
        for col in dosages.chunks_mut(n) {
            let mut count: u64 = col.iter().map(|&d| u64::from(d)).sum();
            if count > n as u64 {
                col.iter_mut().for_each(|d| *d = 2 - *d);
                count = 2 * n as u64 - count;
            }
            mac.push(count);
        }
        let maf = mac.iter().map(|&c| c as f64 / (2 * n) as f64).collect();
        Ok(Self { n, ids, positions, dosages, mac, maf })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn positions(&self) -> &[u64] {
        &self.positions
    }

    pub fn mac(&self) -> &[u64] {
        &self.mac
    }

    pub fn maf(&self) -> &[f64] {
        &self.maf
    }

    pub fn column(&self, j: usize) -> &[u8] {
        &self.dosages[j * self.n..(j + 1) * self.n]
    }

    pub fn column_f64(&self, j: usize) -> Vec<f64> {
        self.column(j).iter().map(|&d| f64::from(d)).collect()
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.dosages[j * self.n + i]
    }

    /// Population variance of the dosage column.
    pub fn empirical_variance(&self, j: usize) -> f64 {
        stats::variance(&self.column_f64(j))
    }

    /// Columns `cols`, in the given order.
    pub fn subset(&self, cols: &[usize]) -> Self {
        Self {
            n: self.n,
            ids: cols.iter().map(|&j| self.ids[j].clone()).collect(),
            positions: cols.iter().map(|&j| self.positions[j]).collect(),
            dosages: cols.iter().flat_map(|&j| self.column(j).iter().copied()).collect(),
            mac: cols.iter().map(|&j| self.mac[j]).collect(),
            maf: cols.iter().map(|&j| self.maf[j]).collect(),
        }
    }

    /// n × p f64 copy.
    pub fn to_dmatrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_iterator(self.n, self.p(), self.dosages.iter().map(|&d| f64::from(d)))
    }
}

/// Two thresholded AR(1) latent Gaussian haplotypes per individual: allele
/// present at variant j when `z_j < Φ⁻¹(m_j)`; dosage is the haplotype sum.
pub fn simulate_genotypes(n: usize, p: usize, rho: f64, maf: &MafSampler, seed_value: u64) -> Result<GenotypeMatrix> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidConfig(format!("rho {rho} must lie in [0, 1)")));
    }
    if n == 0 || p == 0 {
        return Err(Error::Empty("genotype dimensions".into()));
    }
    maf.validate()?;
    let mut rng = seed::rng(seed_value);
    let mafs: Vec<f64> = (0..p).map(|_| maf.sample(&mut rng)).collect();
    let cut: Vec<f64> = mafs.iter().map(|&m| stats::normal_quantile(m)).collect();
    let innov = (1.0 - rho * rho).sqrt();
    let mut dosages = vec![0u8; n * p];
    for i in 0..n {
        for _ in 0..2 {
            let mut z: f64 = rng.sample(StandardNormal);
            for j in 0..p {
                if j > 0 {
                    let e: f64 = rng.sample(StandardNormal);
                    z = rho * z + innov * e;
                }
                if z < cut[j] {
                    dosages[j * n + i] += 1;
                }
            }
        }
    }
    let ids = (0..p).map(|j| format!("v{j}")).collect();
    let positions = (0..p as u64).map(|j| 1 + 100 * j).collect();
    GenotypeMatrix::new(n, ids, positions, dosages)
}

/// Keeps variants with MAC strictly greater than `mac_min`.
pub fn mac_filter(g: &GenotypeMatrix, mac_min: u64) -> Result<GenotypeMatrix> {
    let keep: Vec<usize> = (0..g.p()).filter(|&j| g.mac()[j] > mac_min).collect();
    if keep.is_empty() {
        return Err(Error::Empty(format!("no variant has MAC > {mac_min}")));
    }
    Ok(g.subset(&keep))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minor_allele_coding_flips_common_columns() {
        let g = GenotypeMatrix::new(4, vec!["a".into()], vec![1], vec![2, 2, 1, 2]).unwrap();
        assert_eq!(g.column(0), &[0, 0, 1, 0]);
        assert_eq!(g.mac()[0], 1);
        assert_eq!(g.maf()[0], 1.0 / 8.0);
    }

    #[test]
    fn mac_filter_is_strict() {
        let n = 20;
        let mut d = vec![0u8; n * 3];
        d[..10].fill(1); // MAC 10
        d[n..n + 11].fill(1); // MAC 11
        let g = GenotypeMatrix::new(n, vec!["a".into(), "b".into(), "c".into()], vec![1, 2, 3], d).unwrap();
        let f = mac_filter(&g, 10).unwrap();
        assert_eq!(f.ids(), &["b".to_string()]);
        assert!(mac_filter(&g, 11).is_err());
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(simulate_genotypes(10, 5, 1.0, &MafSampler::default(), 0).is_err());
        assert!(simulate_genotypes(10, 5, 0.5, &MafSampler::Fixed { value: 0.7 }, 0).is_err());
    }

    #[test]
    fn tiny_maf_gives_monomorphic_column() {
        let g = simulate_genotypes(500, 3, 0.3, &MafSampler::Fixed { value: 1e-12 }, 4).unwrap();
        assert!((0..3).all(|j| g.mac()[j] == 0));
    }
}
