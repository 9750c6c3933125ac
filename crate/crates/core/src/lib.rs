//! Fire-sale systemic-risk metrics on bank-asset holdings networks and
//! maximum-entropy reconstruction of holdings from marginal data.

pub mod ensembles;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod model;
pub mod monitoring;
pub mod numeric;
pub mod reconstruct;
pub mod registry;
pub mod riskmetrics;
pub mod sampling;

pub use error::{Error, Result};
pub use model::{BankSheet, DegreeSequences, HoldingsMatrix, MarketParams, StrengthSequences};
pub use riskmetrics::RiskReport;
