//! DSC perfusion quantification: masking, signal-to-concentration
//! conversion, automated AIF selection and truncated-SVD deconvolution.

mod aif;
mod concentration;
mod deconv;
mod maps;
mod mask;

pub use aif::{curve_score, select_aif, AifConfig, AifResult, CurveShape, SliceCandidate};
pub use concentration::{detect_baseline_end, signal_to_concentration, ConcentrationSeries};
pub use deconv::{deconvolve_tsvd, DeconvConfig, TsvdOperator};
pub use maps::{compute_maps, normalize_map, PerfusionMaps, EPS_CBF};
pub use mask::{brain_mask, otsu_threshold};
