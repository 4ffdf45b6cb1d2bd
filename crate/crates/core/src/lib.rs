pub mod calc;
pub mod corpus;
pub mod eval;
pub mod retrieve;
pub mod textproc;
