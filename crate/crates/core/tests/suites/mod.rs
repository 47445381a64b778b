//! Property suites shared by the per-module tests and the acceptance target.
//! Each returns a one-line summary of what it measured, or the first violation.
#![allow(dead_code)]

pub mod codec;
pub mod exec;
pub mod metric;
pub mod store;

pub type SuiteResult = Result<String, String>;

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}
