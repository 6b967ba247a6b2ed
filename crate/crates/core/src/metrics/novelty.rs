use std::collections::HashMap;

use rayon::prelude::*;

use super::matcher::{match_prepared, MatchTolerance, Prepared};
use crate::crystal::Crystal;
use crate::real::Real;

/// Greedy equivalence classes of generated structures and, per class,
/// whether its representative matches any training structure.
#[derive(Clone, Debug, PartialEq)]
pub struct Novelty {
    /// Class index of every generated structure.
    pub class_of: Vec<usize>,
    /// Generated index representing each class (its first member).
    pub representatives: Vec<usize>,
    pub novel: Vec<bool>,
}

impl Novelty {
    pub fn n_classes(&self) -> usize {
        self.representatives.len()
    }

    pub fn uniqueness_rate(&self) -> f64 {
        self.n_classes() as f64 / self.class_of.len().max(1) as f64
    }

    /// Fraction of classes that match no training structure.
    pub fn novelty_rate(&self) -> f64 {
        self.novel.iter().filter(|&&x| x).count() as f64 / self.n_classes().max(1) as f64
    }

    pub fn is_novel(&self, i: usize) -> bool {
        self.novel[self.class_of[i]]
    }

    /// True for the first member of each class.
    pub fn is_representative(&self, i: usize) -> bool {
        self.representatives[self.class_of[i]] == i
    }
}

/// Structures that cannot be reduced form singleton classes and count as novel.
pub fn uniqueness_and_novelty<T: Real>(generated: &[Crystal<T>], training: &[Crystal<T>], tol: &MatchTolerance) -> Novelty {
    let prepared: Vec<Option<Prepared>> = generated.par_iter().map(Prepared::new).collect();
    let mut class_of = Vec::with_capacity(generated.len());
    let mut representatives: Vec<usize> = Vec::new();
    for (i, p) in prepared.iter().enumerate() {
        let found = p.as_ref().and_then(|p| {
            representatives.iter().position(|&r| {
                prepared[r].as_ref().is_some_and(|q| match_prepared(q, p, tol).is_some())
            })
        });
        match found {
            Some(k) => class_of.push(k),
            None => {
                class_of.push(representatives.len());
                representatives.push(i);
            }
        }
    }
    let mut by_key: HashMap<String, Vec<Prepared>> = HashMap::new();
    for t in training.iter().filter_map(Prepared::new) {
        by_key.entry(t.composition().key()).or_default().push(t);
    }
    let novel = representatives
        .par_iter()
        .map(|&r| match &prepared[r] {
            None => true,
            Some(p) => !by_key
                .get(&p.composition().key())
                .is_some_and(|ts| ts.iter().any(|t| match_prepared(t, p, tol).is_some())),
        })
        .collect();
    Novelty { class_of, representatives, novel }
}
