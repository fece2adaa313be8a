use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum IndexWidth {
    #[default]
    U16,
    U32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ColumnIndices {
    U16(Vec<u16>),
    U32(Vec<u32>),
}

impl ColumnIndices {
    pub fn len(&self) -> usize {
        match self {
            ColumnIndices::U16(v) => v.len(),
            ColumnIndices::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> usize {
        match self {
            ColumnIndices::U16(v) => v[i] as usize,
            ColumnIndices::U32(v) => v[i] as usize,
        }
    }

    pub fn width(&self) -> IndexWidth {
        match self {
            ColumnIndices::U16(_) => IndexWidth::U16,
            ColumnIndices::U32(_) => IndexWidth::U32,
        }
    }

    pub fn to_vec(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.get(i)).collect()
    }
}

/// Compressed sparse row matrix.
///
/// Row `r` owns `values[row_extents[r]..row_extents[r + 1]]`, with column
/// indices strictly increasing inside the row and no stored zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<T = f32> {
    rows: usize,
    cols: usize,
    values: Vec<T>,
    col_indices: ColumnIndices,
    row_extents: Vec<u32>,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Assembles a matrix from raw arrays, checking every invariant.
    pub fn from_parts(
        rows: usize,
        cols: usize,
        values: Vec<T>,
        col_indices: ColumnIndices,
        row_extents: Vec<u32>,
    ) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("CSR: {m}")));
        if row_extents.len() != rows + 1 {
            return bad(format!("{} row extents for {rows} rows", row_extents.len()));
        }
        if row_extents[0] != 0 || row_extents[rows] as usize != values.len() {
            return bad("extents must start at 0 and end at nnz".into());
        }
        if col_indices.len() != values.len() {
            return bad("one column index per value required".into());
        }
        if col_indices.width() == IndexWidth::U16 && cols > u16::MAX as usize {
            return Err(Error::IndexOverflow { cols });
        }
        for r in 0..rows {
            let (a, b) = (row_extents[r] as usize, row_extents[r + 1] as usize);
            if a > b {
                return bad(format!("row {r} extents decrease"));
            }
            for i in a..b {
                if col_indices.get(i) >= cols || (i > a && col_indices.get(i) <= col_indices.get(i - 1)) {
                    return bad(format!("row {r} column indices out of range or unsorted"));
                }
                if values[i].is_zero() {
                    return bad(format!("row {r} stores an explicit zero"));
                }
            }
        }
        Ok(Self {
            rows,
            cols,
            values,
            col_indices,
            row_extents,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn col_indices(&self) -> &ColumnIndices {
        &self.col_indices
    }

    pub fn row_extents(&self) -> &[u32] {
        &self.row_extents
    }

    /// Storage footprint: values, column indices and row extents.
    pub fn size_bytes(&self) -> usize {
        let idx = match self.col_indices.width() {
            IndexWidth::U16 => 2,
            IndexWidth::U32 => 4,
        };
        self.nnz() * (T::BYTES + idx) + 4 * (self.rows + 1)
    }
}

/// Compresses a 2-D tensor with 16-bit column indices.
pub fn to_csr<T: Scalar>(w: &Tensor<T>) -> Result<CsrMatrix<T>> {
    to_csr_with(w, IndexWidth::U16)
}

/// Compresses a 2-D tensor. Entries equal to zero (either sign) are dropped,
/// so a `-0.0` decompresses as `+0.0`.
pub fn to_csr_with<T: Scalar>(w: &Tensor<T>, width: IndexWidth) -> Result<CsrMatrix<T>> {
    let &[rows, cols] = w.shape() else {
        return Err(Error::shape("to_csr expects a matrix", &[0, 0], w.shape()));
    };
    if width == IndexWidth::U16 && cols > u16::MAX as usize {
        return Err(Error::IndexOverflow { cols });
    }
    let mut values = Vec::new();
    let mut cols_out: Vec<u32> = Vec::new();
    let mut extents = Vec::with_capacity(rows + 1);
    extents.push(0u32);
    for row in w.data().chunks(cols) {
        for (c, &v) in row.iter().enumerate() {
            if !v.is_zero() {
                values.push(v);
                cols_out.push(c as u32);
            }
        }
        extents.push(values.len() as u32);
    }
    let col_indices = match width {
        IndexWidth::U16 => ColumnIndices::U16(cols_out.into_iter().map(|c| c as u16).collect()),
        IndexWidth::U32 => ColumnIndices::U32(cols_out),
    };
    Ok(CsrMatrix {
        rows,
        cols,
        values,
        col_indices,
        row_extents: extents,
    })
}

pub fn from_csr<T: Scalar>(m: &CsrMatrix<T>) -> Tensor<T> {
    let mut data = vec![T::zero(); m.rows * m.cols];
    for r in 0..m.rows {
        for i in m.row_extents[r] as usize..m.row_extents[r + 1] as usize {
            data[r * m.cols + m.col_indices.get(i)] = m.values[i];
        }
    }
    Tensor::new(vec![m.rows, m.cols], data).expect("CSR dimensions are positive")
}

/// `y = M x`, touching only stored entries.
pub fn csr_matvec<T: Scalar>(m: &CsrMatrix<T>, x: &[T]) -> Result<Vec<T>> {
    if x.len() != m.cols {
        return Err(Error::shape("csr_matvec", &[m.cols], &[x.len()]));
    }
    Ok((0..m.rows)
        .map(|r| {
            let (a, b) = (m.row_extents[r] as usize, m.row_extents[r + 1] as usize);
            (a..b).fold(T::zero(), |acc, i| acc + m.values[i] * x[m.col_indices.get(i)])
        })
        .collect())
}
