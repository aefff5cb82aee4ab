//! Cell-mean nuisances for covariates with few distinct values.

use std::collections::HashMap;

use nalgebra::DMatrix;

use super::{Dataset, NuisanceLearner, NuisancePredictor, RawNuisance};
use crate::error::{Error, Result};

/// Propensity and arm-specific empirical CDFs within each distinct covariate row.
#[derive(Debug, Clone, Copy, Default)]
pub struct StratifiedLearner;

#[derive(Debug, Clone)]
struct Cell {
    n: usize,
    treated: usize,
    // per-arm level counts, arm 0 then arm 1
    counts: [Vec<usize>; 2],
}

struct StratifiedPredictor {
    levels: usize,
    cells: HashMap<Vec<u64>, Cell>,
}

fn key(x: &DMatrix<f64>, i: usize) -> Vec<u64> {
    // +0.0 and -0.0 share a stratum
    (0..x.ncols()).map(|j| (x[(i, j)] + 0.0).to_bits()).collect()
}

impl NuisanceLearner for StratifiedLearner {
    fn fit(&self, train: &Dataset) -> Result<Box<dyn NuisancePredictor>> {
        let levels = train.levels();
        let mut cells: HashMap<Vec<u64>, Cell> = HashMap::new();
        for i in 0..train.n() {
            let cell = cells.entry(key(train.x(), i)).or_insert_with(|| Cell {
                n: 0,
                treated: 0,
                counts: [vec![0; levels], vec![0; levels]],
            });
            let a = train.a()[i] as usize;
            cell.n += 1;
            cell.treated += a;
            cell.counts[a][train.y()[i]] += 1;
        }
        if cells.len() > train.n() / 2 {
            return Err(Error::InvalidData(format!(
                "stratified nuisances need repeated covariate rows; found {} strata for {} units",
                cells.len(),
                train.n()
            )));
        }
        Ok(Box::new(StratifiedPredictor { levels, cells }))
    }

    fn name(&self) -> &'static str {
        "stratified"
    }
}

impl NuisancePredictor for StratifiedPredictor {
    fn predict(&self, data: &Dataset) -> Result<RawNuisance> {
        let m = self.levels - 1;
        let n = data.n();
        let mut out = RawNuisance { e: Vec::with_capacity(n), f1: Vec::with_capacity(n * m), f0: Vec::with_capacity(n * m) };
        for i in 0..n {
            let cell = self.cells.get(&key(data.x(), i)).ok_or_else(|| {
                Error::InvalidData(format!("row {i}: covariate pattern not seen when fitting"))
            })?;
            out.e.push(cell.treated as f64 / cell.n as f64);
            for (arm, dst) in [(1usize, &mut out.f1), (0, &mut out.f0)] {
                let counts = &cell.counts[arm];
                let total: usize = counts.iter().sum();
                if total == 0 {
                    return Err(Error::InvalidData(format!("row {i}: stratum has no units in arm {arm}")));
                }
                let mut cum = 0;
                for &c in &counts[..m] {
                    cum += c;
                    dst.push(cum as f64 / total as f64);
                }
            }
        }
        Ok(out)
    }
}
