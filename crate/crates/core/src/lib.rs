pub mod error;
pub mod numerics;
pub mod scene;
pub mod degrade;
pub mod network;
pub mod loss;
pub mod descriptor;
pub mod pipeline;
