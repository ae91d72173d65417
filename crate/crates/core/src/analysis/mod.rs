//! Quality metrics and compute accounting.

pub mod cost;
pub mod metrics;
pub mod report;

pub use cost::{count_costs, fusion_params, model_costs, parse_key_values, parse_table, CostReport, LayerCost};
pub use metrics::{mae, mse, psnr, psnr_y, ssim, ssim_direct};
pub use report::{evaluate, format_eval_table, mean_row, parse_eval_table, EvalRow};
