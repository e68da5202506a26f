//! Task-specific baselines: ridge logistic regression and prefix curves.

pub mod curve;
pub mod logistic;

pub use curve::{
    prefix_cells_lr, prefix_cells_reasoner, prefix_curve_lr, prefix_curve_reasoner, PrefixCell, PrefixCurve,
    PrefixPoint, PREFIX_CURVE_HEADER,
};
pub use logistic::{fit_logistic, LogisticFit, LogisticOptions};
