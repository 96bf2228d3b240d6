pub(crate) mod conv;
mod elementwise;
pub(crate) mod kernels;
mod linalg;
pub(crate) mod norm;
mod pool;
mod reduce;
pub(crate) mod resize;
mod shape;
