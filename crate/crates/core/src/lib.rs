pub mod autoformalize;
pub mod clock;
pub mod dataset;
pub mod evaluate;
pub mod filter;
pub mod gateway;
pub mod pipeline;
pub mod record;
pub mod search;
pub mod statement;
pub mod verifier;
