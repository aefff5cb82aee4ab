use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Observed triples (Y, A, X).
///
/// Outcome levels that never occur are collapsed at construction so the
/// stored outcomes always cover `0..levels()` contiguously; `level_map`
/// records where each declared level went.
#[derive(Debug, Clone)]
pub struct Dataset {
    y: Vec<usize>,
    a: Vec<u8>,
    x: DMatrix<f64>,
    levels: usize,
    level_map: Vec<usize>,
}

impl Dataset {
    /// `declared_levels` is the nominal L; `y` must lie in `0..declared_levels`.
    pub fn new(y: Vec<usize>, a: Vec<u8>, x: DMatrix<f64>, declared_levels: usize) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::InvalidData("dataset is empty".into()));
        }
        if a.len() != n || x.nrows() != n {
            return Err(Error::InvalidData(format!(
                "length mismatch: {} outcomes, {} treatments, {} covariate rows",
                n,
                a.len(),
                x.nrows()
            )));
        }
        if let Some(i) = y.iter().position(|&v| v >= declared_levels) {
            return Err(Error::InvalidData(format!(
                "row {i}: outcome {} outside 0..{declared_levels}",
                y[i]
            )));
        }
        if let Some(i) = a.iter().position(|&v| v > 1) {
            return Err(Error::InvalidData(format!("row {i}: treatment {} is not 0 or 1", a[i])));
        }
        if let Some(k) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("row {}: non-finite covariate", k % n)));
        }
        let treated = a.iter().filter(|&&v| v == 1).count();
        if treated == 0 || treated == n {
            return Err(Error::InvalidData("both treatment arms must be nonempty".into()));
        }

        let mut seen = vec![false; declared_levels];
        for &v in &y {
            seen[v] = true;
        }
        let levels = seen.iter().filter(|&&s| s).count();
        let mut level_map = Vec::with_capacity(declared_levels);
        let mut below = 0;
        for &s in &seen {
            // an absent level merges with the nearest present level above it
            level_map.push(below.min(levels.saturating_sub(1)));
            below += s as usize;
        }
        if levels < 2 {
            return Err(Error::InvalidData(format!("outcome takes {levels} distinct value(s); need at least 2")));
        }
        let y = y.into_iter().map(|v| level_map[v]).collect();
        Ok(Self { y, a, x, levels, level_map })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of ordinal levels after collapsing absent ones.
    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Number of covariates.
    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &[usize] {
        &self.y
    }

    pub fn a(&self) -> &[u8] {
        &self.a
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Declared level -> stored level.
    pub fn level_map(&self) -> &[usize] {
        &self.level_map
    }

    pub fn is_collapsed(&self) -> bool {
        self.level_map.len() != self.levels
    }

    /// Rows `idx` as a new dataset with the same level coding (no recollapse).
    /// Arms may be empty here; fitting code reports that.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            y: idx.iter().map(|&i| self.y[i]).collect(),
            a: idx.iter().map(|&i| self.a[i]).collect(),
            x: self.x.select_rows(idx),
            levels: self.levels,
            level_map: (0..self.levels).collect(),
        }
    }
}
