//! Operation catalog, grouped by family. Each module adds methods to
//! [`crate::Graph`] via its own `impl` block.

pub(crate) mod conv;
pub(crate) mod elementwise;
pub(crate) mod linalg;
pub(crate) mod norm;
pub(crate) mod reduce;
pub(crate) mod shape;
pub(crate) mod util;
