//! Sparse storage and serialization.
//!
//! Weight matrices are stored in compressed sparse row form: nonzero values,
//! their 16-bit column indices, and `rows + 1` cumulative 32-bit row extents.
//! Byte accounting here is the single formula used by compression reports,
//! bundles and header emission alike.

mod bundle;
mod csr;
mod header;
mod size;

pub use bundle::{load_bundle, save_bundle, BUNDLE_VERSION};
pub use csr::{csr_matvec, from_csr, to_csr, to_csr_with, ColumnIndices, CsrMatrix, IndexWidth};
pub use header::{emit_c_headers, format_f32_literal};
pub use size::{csr_break_even_density, layer_size_bytes, size_bytes, weight_matrix_dims, StorageMode};
