//! Library half of the `mallows` command-line tool: the verification suite
//! and report formatting, shared with the acceptance test.

pub mod cli;
pub mod report;
pub mod suite;
