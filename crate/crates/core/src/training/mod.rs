//! Optimization protocol: AdamW with clipping and EMA, plateau scheduling,
//! early stopping and multi-seed runs.

pub mod fit;
pub mod optim;
pub mod schedule;

pub use fit::{
    argmax, check_disjoint, evaluate_loss_acc, fit, fit_seeds, mean_std, predict_logits,
    EpochRecord, FitResult, History, MeanStd, TrainConfig,
};
pub use optim::{
    adamw_step, clip_grad_norm, cross_entropy, ema_update, global_norm, warmed_decay, AdamW,
    Moments,
};
pub use schedule::{
    plateau_schedule, EarlyStopping, PlateauConfig, PlateauScheduler, Stagnation, MIN_DELTA,
};
