use std::collections::HashMap;

use crate::vae::{Checkpoint, RepresentationMatrix};
use crate::worlds::{normalized_value, FactorMatrix, FactorWorld};
use crate::{Error, Result};

/// Anything that maps ground-truth factor rows to codes.
pub trait Representation: Sync {
    fn dim(&self) -> usize;
    fn represent(&self, factors: &FactorMatrix) -> Result<RepresentationMatrix>;
}

/// Renders the factors and encodes them with a checkpoint.
pub struct EncoderRepresentation<'a> {
    pub world: &'a FactorWorld,
    pub checkpoint: &'a Checkpoint,
}

impl Representation for EncoderRepresentation<'_> {
    fn dim(&self) -> usize {
        self.checkpoint.latent_dim()
    }

    fn represent(&self, factors: &FactorMatrix) -> Result<RepresentationMatrix> {
        self.checkpoint.encode(&self.world.render(factors)?)
    }
}

/// The normalized factor values themselves.
#[derive(Debug, Clone, Copy)]
pub struct ExactFactors {
    dim: usize,
}

impl ExactFactors {
    pub fn for_world(world: &FactorWorld) -> Self {
        Self { dim: world.space().len() }
    }
}

impl Representation for ExactFactors {
    fn dim(&self) -> usize {
        self.dim
    }

    fn represent(&self, factors: &FactorMatrix) -> Result<RepresentationMatrix> {
        let cards = factors.cardinalities();
        if cards.len() != self.dim {
            return Err(Error::Shape(format!("{} factors, expected {}", cards.len(), self.dim)));
        }
        let data =
            factors.data().iter().enumerate().map(|(i, &v)| normalized_value(v, cards[i % cards.len()])).collect();
        RepresentationMatrix::new(factors.rows(), cards.len(), data)
    }
}

/// Applies a function to every factor row.
pub struct FnRepresentation<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[usize]) -> Vec<f64> + Sync> FnRepresentation<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[usize]) -> Vec<f64> + Sync> Representation for FnRepresentation<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn represent(&self, factors: &FactorMatrix) -> Result<RepresentationMatrix> {
        let mut data = Vec::with_capacity(factors.rows() * self.dim);
        for i in 0..factors.rows() {
            let code = (self.f)(factors.row(i));
            if code.len() != self.dim {
                return Err(Error::Shape(format!("code has {} values, expected {}", code.len(), self.dim)));
            }
            data.extend(code);
        }
        RepresentationMatrix::new(factors.rows(), self.dim, data)
    }
}

/// Codes for every grid point of a world, computed once. Lookups are exact
/// copies of what the wrapped representation returned for that grid row.
pub struct GridCache {
    world: FactorWorld,
    /// Row `g` holds the code of the grid point with mixed-radix index `g`.
    codes: RepresentationMatrix,
}

const CACHE_CHUNK: usize = 4096;

impl GridCache {
    pub fn build(world: &FactorWorld, rep: &dyn Representation) -> Result<Self> {
        let grid = world.enumerate_grid()?;
        let mut data = Vec::new();
        let mut cols = rep.dim();
        for start in (0..grid.rows()).step_by(CACHE_CHUNK) {
            let idx: Vec<usize> = (start..(start + CACHE_CHUNK).min(grid.rows())).collect();
            let part = rep.represent(&grid.select_rows(&idx))?;
            cols = part.cols();
            data.extend_from_slice(part.data());
        }
        Ok(Self { world: world.clone(), codes: RepresentationMatrix::new(grid.rows(), cols, data)? })
    }

    pub fn codes(&self) -> &RepresentationMatrix {
        &self.codes
    }
}

impl Representation for GridCache {
    fn dim(&self) -> usize {
        self.codes.cols()
    }

    fn represent(&self, factors: &FactorMatrix) -> Result<RepresentationMatrix> {
        let space = self.world.space();
        if factors.cardinalities() != space.cardinalities().as_slice() {
            return Err(Error::Validation("factor matrix does not belong to the cached world".into()));
        }
        let rows: Vec<usize> = (0..factors.rows()).map(|i| space.grid_index(factors.row(i))).collect();
        Ok(self.codes.select_rows(&rows))
    }
}

/// Codes supplied for an explicit set of factor rows, e.g. loaded from
/// tensor files. Duplicate rows keep their first code; looking up a row that
/// is not in the table is an error.
pub struct TableRepresentation {
    cardinalities: Vec<usize>,
    index: HashMap<Vec<usize>, usize>,
    codes: RepresentationMatrix,
}

impl TableRepresentation {
    pub fn new(factors: &FactorMatrix, codes: &RepresentationMatrix) -> Result<Self> {
        if factors.rows() != codes.rows() {
            return Err(Error::Shape(format!("{} factor rows for {} code rows", factors.rows(), codes.rows())));
        }
        let mut index = HashMap::with_capacity(factors.rows());
        for i in 0..factors.rows() {
            index.entry(factors.row(i).to_vec()).or_insert(i);
        }
        Ok(Self { cardinalities: factors.cardinalities().to_vec(), index, codes: codes.clone() })
    }

    /// True when every grid point of `world` has a code.
    pub fn covers(&self, world: &FactorWorld) -> bool {
        let space = world.space();
        self.cardinalities == space.cardinalities() && self.index.len() as u128 == space.grid_size()
    }
}

impl Representation for TableRepresentation {
    fn dim(&self) -> usize {
        self.codes.cols()
    }

    fn represent(&self, factors: &FactorMatrix) -> Result<RepresentationMatrix> {
        let rows = (0..factors.rows())
            .map(|i| {
                self.index
                    .get(factors.row(i))
                    .copied()
                    .ok_or_else(|| Error::Validation(format!("no code for factor row {:?}", factors.row(i))))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.codes.select_rows(&rows))
    }
}
