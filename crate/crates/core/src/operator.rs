use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::LatticeGeometry;
use crate::linalg::{hermitian_defect, Mat};

/// Dense operator on the N sites of a torus. Site `i` sits at
/// `LatticeGeometry::coords(i)`.
#[derive(Clone, Debug)]
pub struct OperatorMatrix {
    pub matrix: Mat,
    pub hermitian: bool,
    pub magnetic_periodic: bool,
}

impl OperatorMatrix {
    pub fn new(matrix: Mat) -> Self {
        OperatorMatrix { matrix, hermitian: false, magnetic_periodic: false }
    }

    /// Tags the matrix as Hermitian after checking it to `tol`.
    pub fn hermitian(matrix: Mat, tol: f64) -> Result<Self> {
        let d = hermitian_defect(&matrix);
        if d > tol {
            return Err(Error::FlagViolation(format!("Hermitian defect {d:e} exceeds {tol:e}")));
        }
        Ok(OperatorMatrix { matrix, hermitian: true, magnetic_periodic: false })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn with_magnetic_periodic(mut self, flag: bool) -> Self {
        self.magnetic_periodic = flag;
        self
    }

    /// Writes `row,col,x1,x2,y1,y2,re,im` for entries above `cutoff`.
    pub fn write_csv(&self, g: &LatticeGeometry, path: &Path, cutoff: f64) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "row,col,x1,x2,y1,y2,re,im")?;
        for ((i, j), z) in self.matrix.indexed_iter() {
            if z.norm() <= cutoff {
                continue;
            }
            let (x1, x2) = g.coords(i);
            let (y1, y2) = g.coords(j);
            writeln!(f, "{i},{j},{x1},{x2},{y1},{y2},{:.17e},{:.17e}", z.re, z.im)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OperatorSummary {
    pub dim: usize,
    pub hermitian: bool,
    pub magnetic_periodic: bool,
    pub hermitian_defect: f64,
}

impl From<&OperatorMatrix> for OperatorSummary {
    fn from(op: &OperatorMatrix) -> Self {
        OperatorSummary {
            dim: op.dim(),
            hermitian: op.hermitian,
            magnetic_periodic: op.magnetic_periodic,
            hermitian_defect: hermitian_defect(&op.matrix),
        }
    }
}
