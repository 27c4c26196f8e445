//! Kernel SHAP, Deep SHAP, length matching, discrepancies and DualSHAP.

pub mod deep_shap;
pub mod divergence;
pub mod dualshap;
pub mod explain;
pub mod kernel_shap;
pub mod unshuffle;

pub use deep_shap::{DeepShapNet, DeepShapValues, Head, Layer};
pub use divergence::{kld, kld_var, median_bandwidth, mmd2, mmd2_var, mmd2_with_bandwidth};
pub use dualshap::{dualshap_fit, guarded, window_means, AttributionPair, DualShapConfig, DualShapResult, LossPoint};
pub use explain::{ClassChoice, ExplainConfig, Explainer, Explanation};
pub use kernel_shap::{kernel_shap, shapley_kernel, KernelShapConfig, ShapValues};
pub use unshuffle::{match_length, match_length_map, pixel_shuffle, pixel_unshuffle, reduction_stages};
