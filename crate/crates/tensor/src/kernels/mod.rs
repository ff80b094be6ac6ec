//! Slice-level numeric kernels. Nothing here knows about the graph.

pub(crate) mod broadcast;
pub(crate) mod conv;
pub(crate) mod gemm;
pub(crate) mod resize;
