//! Measures the practical impact of compiler miscompilation bugs on a corpus
//! of real packages: whether the faulty code is reached and triggered, whether
//! the buggy and fixed compilers produce different binaries, and whether the
//! packages' test suites notice.

pub mod asmdiff;
pub mod builder;
pub mod cli;
pub mod corpus;
pub mod dyncompare;
pub mod fsutil;
pub mod pipeline;
pub mod process;
pub mod report;
pub mod toolchain;
