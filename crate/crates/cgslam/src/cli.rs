//! Command-line entry point; the bin target is a one-line shim over this.

/// Exit code: 0 success, 1 runtime failure, 2 usage error.
pub fn main() -> i32 {
    eprintln!("cgslam: not yet wired");
    2
}
