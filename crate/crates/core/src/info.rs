//! Exact mutual information on finite discrete distributions, and a checker
//! showing that deterministic maps keep all information about their input
//! exactly when they are injective.

use serde::Serialize;

use crate::error::{Error, Result};

/// Tolerance for "sums to one" and for MI comparisons.
pub const PROB_TOL: f64 = 1e-12;

/// Joint distribution `P(x, z)` stored row-major as `[x][z]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    nx: usize,
    nz: usize,
    p: Vec<f64>,
}

impl DiscreteJoint {
    pub fn new(nx: usize, nz: usize, p: Vec<f64>) -> Result<Self> {
        if nx == 0 || nz == 0 || p.len() != nx * nz {
            return Err(Error::InvalidDistribution(format!(
                "{nx}x{nz} joint needs {} entries, got {}",
                nx * nz,
                p.len()
            )));
        }
        if let Some(v) = p.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidDistribution(format!("entry {v} is not a probability")));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidDistribution(format!("entries sum to {total}, not 1")));
        }
        Ok(Self { nx, nz, p })
    }

    pub fn sizes(&self) -> (usize, usize) {
        (self.nx, self.nz)
    }

    pub fn get(&self, x: usize, z: usize) -> f64 {
        self.p[x * self.nz + z]
    }

    pub fn marginal_x(&self) -> Vec<f64> {
        self.p.chunks(self.nz).map(|r| r.iter().sum()).collect()
    }

    pub fn marginal_z(&self) -> Vec<f64> {
        (0..self.nz)
            .map(|z| (0..self.nx).map(|x| self.get(x, z)).sum())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let p = (0..self.nz * self.nx)
            .map(|i| self.get(i % self.nx, i / self.nx))
            .collect();
        Self {
            nx: self.nz,
            nz: self.nx,
            p,
        }
    }
}

/// Total function `{0..domain} -> {0..codomain}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiniteMap {
    table: Vec<usize>,
    codomain: usize,
}

impl FiniteMap {
    pub fn new(table: Vec<usize>, codomain: usize) -> Result<Self> {
        if table.is_empty() {
            return Err(Error::InvalidDistribution("map has an empty domain".into()));
        }
        if let Some(&z) = table.iter().find(|&&z| z >= codomain) {
            return Err(Error::InvalidDistribution(format!(
                "image {z} outside codomain of size {codomain}"
            )));
        }
        Ok(Self { table, codomain })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            table: (0..n).collect(),
            codomain: n,
        }
    }

    pub fn domain(&self) -> usize {
        self.table.len()
    }

    pub fn codomain(&self) -> usize {
        self.codomain
    }

    pub fn apply(&self, x: usize) -> usize {
        self.table[x]
    }

    pub fn table(&self) -> &[usize] {
        &self.table
    }

    pub fn is_injective(&self) -> bool {
        self.is_injective_on(&vec![1.0; self.domain()])
    }

    /// Injectivity restricted to points with positive probability.
    pub fn is_injective_on(&self, px: &[f64]) -> bool {
        let mut seen = vec![false; self.codomain];
        for (x, &z) in self.table.iter().enumerate() {
            if px[x] > 0.0 {
                if seen[z] {
                    return false;
                }
                seen[z] = true;
            }
        }
        true
    }

    /// `g ∘ self`.
    pub fn then(&self, g: &FiniteMap) -> Result<FiniteMap> {
        if g.domain() != self.codomain {
            return Err(Error::InvalidDistribution(format!(
                "cannot compose: codomain {} vs domain {}",
                self.codomain,
                g.domain()
            )));
        }
        Ok(FiniteMap {
            table: self.table.iter().map(|&z| g.apply(z)).collect(),
            codomain: g.codomain,
        })
    }

    /// Every map from an `n`-set to an `m`-set, `m^n` of them, in
    /// lexicographic order of their tables.
    pub fn enumerate_all(n: usize, m: usize) -> impl Iterator<Item = FiniteMap> {
        let total = m.checked_pow(n as u32).expect("enumeration size overflows");
        (0..total).map(move |mut code| {
            let mut table = vec![0; n];
            for slot in table.iter_mut().rev() {
                *slot = code % m;
                code /= m;
            }
            FiniteMap { table, codomain: m }
        })
    }
}

fn check_distribution(px: &[f64]) -> Result<()> {
    if px.is_empty() || px.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidDistribution(format!("{px:?} is not a distribution")));
    }
    let total: f64 = px.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidDistribution(format!("probabilities sum to {total}, not 1")));
    }
    Ok(())
}

pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Shannon entropy in bits.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.log2()).sum::<f64>()
}

/// `sum P(x,z) log2(P(x,z) / (P(x) P(z)))` with `0 log 0 = 0`.
pub fn mutual_information(j: &DiscreteJoint) -> f64 {
    let px = j.marginal_x();
    let pz = j.marginal_z();
    let mut mi = 0.0;
    for x in 0..j.nx {
        for z in 0..j.nz {
            let p = j.get(x, z);
            if p > 0.0 {
                mi += p * (p / (px[x] * pz[z])).log2();
            }
        }
    }
    mi
}

/// Joint of `(X, f(X))`: `P(x, z) = px(x) [f(x) = z]`.
pub fn push_forward(px: &[f64], f: &FiniteMap) -> Result<DiscreteJoint> {
    check_distribution(px)?;
    if px.len() != f.domain() {
        return Err(Error::InvalidDistribution(format!(
            "distribution over {} symbols, map domain {}",
            px.len(),
            f.domain()
        )));
    }
    let nz = f.codomain();
    let mut p = vec![0.0; px.len() * nz];
    for (x, &w) in px.iter().enumerate() {
        p[x * nz + f.apply(x)] = w;
    }
    DiscreteJoint::new(px.len(), nz, p)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Proposition1Report {
    pub injective: bool,
    pub h_x: f64,
    pub mi: f64,
    /// `H(X) - I(X; f(X))`, bits.
    pub loss: f64,
    /// Whether `P(x | z) = 1` for every reachable pair.
    pub posterior_certain: bool,
}

impl Proposition1Report {
    /// The claim being checked: information is fully kept iff `f` is
    /// injective, and the posterior is certain iff `f` is injective.
    pub fn consistent(&self) -> bool {
        let preserved = self.loss.abs() <= PROB_TOL;
        self.loss >= -PROB_TOL
            && preserved == self.injective
            && self.posterior_certain == self.injective
    }
}

pub fn proposition1_check(px: &[f64], f: &FiniteMap) -> Result<Proposition1Report> {
    let joint = push_forward(px, f)?;
    let h_x = entropy(px);
    let mi = mutual_information(&joint);
    let pz = joint.marginal_z();
    let posterior_certain = (0..px.len()).all(|x| {
        let z = f.apply(x);
        px[x] == 0.0 || (joint.get(x, z) / pz[z] - 1.0).abs() <= PROB_TOL
    });
    Ok(Proposition1Report {
        injective: f.is_injective_on(px),
        h_x,
        mi,
        loss: h_x - mi,
        posterior_certain,
    })
}
