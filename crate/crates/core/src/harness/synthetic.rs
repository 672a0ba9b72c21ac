//! Planted latent-class populations with demographic features that carry a
//! tunable amount of information about the class.

use rand::Rng as _;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::{Attribute, Dataset, Member, Query, ResponseMatrix};
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_members: usize,
    pub n_classes: usize,
    /// Class mixing weights; empty means uniform.
    #[serde(default)]
    pub class_weights: Vec<f64>,
    /// `[class][query][choice]`; empty means drawn from a symmetric
    /// Dirichlet with `concentration`.
    #[serde(default)]
    pub response_tables: Vec<Vec<Vec<f64>>>,
    #[serde(default = "default_concentration")]
    pub concentration: f64,
    /// Probability that an attribute reports the class-coded bin instead of
    /// a uniformly random one.
    pub correlation: f64,
    /// Bins per informative attribute; the class is written in mixed radix
    /// over them.
    pub attribute_bins: Vec<usize>,
    /// Extra attributes independent of the class.
    #[serde(default)]
    pub noise_attribute_bins: Vec<usize>,
    pub n_queries: usize,
    pub choices_per_query: usize,
    /// Share of members tagged `south`; the rest are `west`.
    #[serde(default = "default_south")]
    pub south_fraction: f64,
    pub seed: u64,
}

fn default_concentration() -> f64 {
    0.3
}

fn default_south() -> f64 {
    0.5
}

impl SyntheticSpec {
    /// `n_classes` planted classes coded by binary attributes, plus one
    /// three-bin noise attribute.
    pub fn block_model(
        n_members: usize,
        n_classes: usize,
        n_queries: usize,
        choices_per_query: usize,
        correlation: f64,
        seed: u64,
    ) -> Self {
        let mut bits = 1;
        while (1usize << bits) < n_classes {
            bits += 1;
        }
        Self {
            n_members,
            n_classes,
            class_weights: Vec::new(),
            response_tables: Vec::new(),
            concentration: default_concentration(),
            correlation,
            attribute_bins: vec![2; bits],
            noise_attribute_bins: vec![3],
            n_queries,
            choices_per_query,
            south_fraction: default_south(),
            seed,
        }
    }

    /// Two classes answering opposite binary patterns with `noise` flip
    /// probability; one attribute identifies the class.
    pub fn two_block(n_members: usize, n_queries: usize, noise: f64, seed: u64) -> Self {
        let mut rng = rng_for(seed, "two-block-pattern", 0);
        let pattern: Vec<usize> = (0..n_queries).map(|_| rng.random_range(0..2)).collect();
        let row = |c: usize| {
            let mut r = vec![noise, noise];
            r[c] = 1.0 - noise;
            r
        };
        let tables = (0..2)
            .map(|u| {
                pattern
                    .iter()
                    .map(|&p| row(if u == 0 { p } else { 1 - p }))
                    .collect()
            })
            .collect();
        Self {
            n_members,
            n_classes: 2,
            class_weights: Vec::new(),
            response_tables: tables,
            concentration: default_concentration(),
            correlation: 1.0,
            attribute_bins: vec![2],
            noise_attribute_bins: vec![3, 2],
            n_queries,
            choices_per_query: 2,
            south_fraction: default_south(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_classes == 0 || self.n_queries == 0 || self.choices_per_query < 2 {
            return bad("need at least one class, one query and two choices per query");
        }
        if !(0.0..=1.0).contains(&self.correlation) {
            return bad("correlation must lie in [0, 1]");
        }
        if self
            .attribute_bins
            .iter()
            .chain(&self.noise_attribute_bins)
            .any(|&b| b == 0)
        {
            return bad("every attribute needs at least one bin");
        }
        if !self.class_weights.is_empty()
            && (self.class_weights.len() != self.n_classes
                || self.class_weights.iter().any(|&w| !(w >= 0.0))
                || (self.class_weights.iter().sum::<f64>() - 1.0).abs() > 1e-9)
        {
            return bad("class weights must be a probability vector over the classes");
        }
        if !self.response_tables.is_empty() {
            let shape_ok = self.response_tables.len() == self.n_classes
                && self.response_tables.iter().all(|t| {
                    t.len() == self.n_queries
                        && t.iter().all(|r| {
                            r.len() == self.choices_per_query
                                && r.iter().all(|&p| p >= 0.0)
                                && (r.iter().sum::<f64>() - 1.0).abs() <= 1e-9
                        })
                });
            if !shape_ok {
                return bad("response tables must be [class][query][choice] probability rows");
            }
        } else if !(self.concentration > 0.0) {
            return bad("concentration must be positive");
        }
        Ok(())
    }
}

/// Generated dataset with the planted class of every member.
#[derive(Debug, Clone)]
pub struct Population {
    pub dataset: Dataset,
    pub latents: Vec<usize>,
    /// `[class][query][choice]` actually used.
    pub tables: Vec<Vec<Vec<f64>>>,
}

fn sample_index(p: &[f64], x: f64) -> usize {
    let mut acc = 0.0;
    for (i, &w) in p.iter().enumerate() {
        acc += w;
        if x < acc {
            return i;
        }
    }
    p.len() - 1
}

pub fn generate_population(spec: &SyntheticSpec) -> Result<Population> {
    spec.validate()?;
    let k = spec.n_classes;
    let tables = if spec.response_tables.is_empty() {
        let mut rng = rng_for(spec.seed, "synthetic-tables", 0);
        let gamma =
            Gamma::new(spec.concentration, 1.0).map_err(|e| Error::Config(e.to_string()))?;
        (0..k)
            .map(|_| {
                (0..spec.n_queries)
                    .map(|_| {
                        let draws: Vec<f64> = (0..spec.choices_per_query)
                            .map(|_| gamma.sample(&mut rng).max(1e-300))
                            .collect();
                        let s: f64 = draws.iter().sum();
                        draws.iter().map(|x| x / s).collect()
                    })
                    .collect()
            })
            .collect()
    } else {
        spec.response_tables.clone()
    };
    let weights = if spec.class_weights.is_empty() {
        vec![1.0 / k as f64; k]
    } else {
        spec.class_weights.clone()
    };

    let mut attributes = Vec::new();
    for (i, &b) in spec.attribute_bins.iter().enumerate() {
        attributes.push(Attribute {
            name: format!("trait{i}"),
            bins: (0..b).map(|j| format!("t{i}_{j}")).collect(),
        });
    }
    for (i, &b) in spec.noise_attribute_bins.iter().enumerate() {
        attributes.push(Attribute {
            name: format!("other{i}"),
            bins: (0..b).map(|j| format!("o{i}_{j}")).collect(),
        });
    }
    let queries: Vec<Query> = (0..spec.n_queries)
        .map(|q| Query {
            id: q,
            key: format!("q{q:02}"),
            text: format!("synthetic question {q}"),
            choices: (0..spec.choices_per_query)
                .map(|c| format!("c{c}"))
                .collect(),
        })
        .collect();

    let mut rng = rng_for(spec.seed, "synthetic-members", 0);
    let mut members = Vec::with_capacity(spec.n_members);
    let mut latents = Vec::with_capacity(spec.n_members);
    let mut responses = ResponseMatrix::new(spec.n_members, spec.n_queries);
    for i in 0..spec.n_members {
        let u = sample_index(&weights, rng.random());
        let mut code = u;
        let mut features = Vec::with_capacity(attributes.len());
        for &b in &spec.attribute_bins {
            let digit = code % b;
            code /= b;
            let informative = rng.random::<f64>() < spec.correlation;
            features.push(if informative {
                digit
            } else {
                rng.random_range(0..b)
            });
        }
        for &b in &spec.noise_attribute_bins {
            features.push(rng.random_range(0..b));
        }
        let region = if rng.random::<f64>() < spec.south_fraction {
            "south"
        } else {
            "west"
        };
        for (q, row) in tables[u].iter().enumerate() {
            responses.insert(i, q, sample_index(row, rng.random()))?;
        }
        members.push(Member {
            id: i,
            key: format!("m{i:05}"),
            features,
            region: Some(region.to_string()),
        });
        latents.push(u);
    }
    let dataset = Dataset::new(attributes, members, queries, responses)?;
    Ok(Population {
        dataset,
        latents,
        tables,
    })
}
