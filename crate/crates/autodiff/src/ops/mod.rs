mod elementwise;
pub(crate) mod layout;
pub mod linalg;
mod reduce;
