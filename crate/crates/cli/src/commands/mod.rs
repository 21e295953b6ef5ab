pub mod bias;
pub mod datapipe;
pub mod eval;
pub mod report;
pub mod train;
pub mod vote_curve;
