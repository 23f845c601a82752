//! Global solver for bounded nonconvex quadratic programs.
//!
//! The solver alternates a doubly nonnegative (DNN) relaxation bound, a
//! finite local search and SDP-generated cutting planes until the relative
//! gap between the best point found and the certified lower bound closes.

pub mod bound;
pub mod conic;
pub mod cut;
pub mod cvxqp;
pub mod driver;
pub mod instance;
pub mod linalg;
pub mod localsearch;
pub mod lp;
pub mod oracle;
pub mod par;
pub mod report;
