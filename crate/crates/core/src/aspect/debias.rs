//! Gender-debiasing of a word embedding table.
//!
//! Gradient descent on
//!
//! ```text
//! L = Σ_{V_m} (v·g − 1)² + Σ_{V_f} (v·g + 1)² + Σ_{V_n} (v·g)² + Σ_{V_s} (v·g)²
//!     + λ Σ_all ‖v − v_init‖²
//! ```
//!
//! where `g` is the unit gender direction `normalize(mean(V_m) − mean(V_f))`,
//! recomputed from the current table before every step and held fixed
//! within it.

use serde::{Deserialize, Serialize};

use crate::aspect::{EmbeddingTable, LexiconSet};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DebiasConfig {
    pub steps: usize,
    pub lr: f64,
    pub lambda: f64,
}

impl Default for DebiasConfig {
    fn default() -> Self {
        DebiasConfig {
            steps: 200,
            lr: 0.1,
            lambda: 0.01,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DebiasOutcome {
    pub table: EmbeddingTable,
    /// Unit gender direction of the final table.
    pub gender_direction: Vec<f64>,
    /// Loss before each step.
    pub losses: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Role {
    Masculine,
    Feminine,
    Neutral,
    Stereotype,
    Other,
}

impl Role {
    fn target(self) -> Option<f64> {
        match self {
            Role::Masculine => Some(1.0),
            Role::Feminine => Some(-1.0),
            Role::Neutral | Role::Stereotype => Some(0.0),
            Role::Other => None,
        }
    }
}

fn role(lex: &LexiconSet, w: &str) -> Role {
    if lex.masculine.contains(w) {
        Role::Masculine
    } else if lex.feminine.contains(w) {
        Role::Feminine
    } else if lex.neutral.contains(w) {
        Role::Neutral
    } else if lex.stereotype.contains(w) {
        Role::Stereotype
    } else {
        Role::Other
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `normalize(mean over V_m − mean over V_f)`, using words present in `table`.
pub fn gender_direction(table: &EmbeddingTable, lex: &LexiconSet) -> Result<Vec<f64>> {
    let d = table.dim();
    let mean = |words: &std::collections::BTreeSet<String>, name: &str| -> Result<Vec<f64>> {
        let mut acc = vec![0.0; d];
        let mut n = 0usize;
        for v in words.iter().filter_map(|w| table.get(w)) {
            for (a, x) in acc.iter_mut().zip(v) {
                *a += x;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::Input(format!("no {name} words present in the embedding table")));
        }
        Ok(acc.into_iter().map(|a| a / n as f64).collect())
    };
    let m = mean(&lex.masculine, "masculine")?;
    let f = mean(&lex.feminine, "feminine")?;
    let diff: Vec<f64> = m.iter().zip(&f).map(|(a, b)| a - b).collect();
    let norm = dot(&diff, &diff).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Input("masculine and feminine means coincide; gender direction undefined".into()));
    }
    Ok(diff.into_iter().map(|x| x / norm).collect())
}

pub fn debias_loss(
    table: &EmbeddingTable,
    init: &EmbeddingTable,
    lex: &LexiconSet,
    direction: &[f64],
    lambda: f64,
) -> f64 {
    let mut loss = 0.0;
    for (w, v) in table.iter() {
        if let Some(t) = role(lex, w).target() {
            let p = dot(v, direction) - t;
            loss += p * p;
        }
        if let Some(v0) = init.get(w) {
            loss += lambda * v.iter().zip(v0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    loss
}

pub fn train_debias(init: &EmbeddingTable, lex: &LexiconSet, config: &DebiasConfig) -> Result<DebiasOutcome> {
    if lex.masculine.is_empty() || lex.feminine.is_empty() {
        return Err(Error::Input("debiasing needs non-empty masculine and feminine sets".into()));
    }
    let mut table = init.clone();
    let mut losses = Vec::with_capacity(config.steps);
    let words: Vec<String> = table.words().map(str::to_string).collect();
    for step in 0..config.steps {
        let g = gender_direction(&table, lex)?;
        let loss = debias_loss(&table, init, lex, &g, config.lambda);
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("debias loss is {loss} at step {step}")));
        }
        losses.push(loss);
        for w in &words {
            let target = role(lex, w).target();
            let v0 = init.get(w).expect("table and init share words").to_vec();
            let v = table.get_mut(w).expect("word present");
            let proj = dot(v, &g);
            for j in 0..v.len() {
                let mut grad = 2.0 * config.lambda * (v[j] - v0[j]);
                if let Some(t) = target {
                    grad += 2.0 * (proj - t) * g[j];
                }
                v[j] -= config.lr * grad;
            }
        }
    }
    let gender_direction = gender_direction(&table, lex)?;
    Ok(DebiasOutcome {
        table,
        gender_direction,
        losses,
    })
}
