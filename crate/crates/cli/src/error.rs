use std::fmt;
use std::path::Path;

use langevin_core::Error;

/// Everything that ends a run early, with the process exit status it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Unparseable or invalid configuration (exit 2).
    Config(String),
    /// A module refused the request (exit 3).
    Module(Error),
    /// `verify` found failing properties (exit 4).
    Verification(Vec<String>),
    /// Files and directories (exit 1).
    Io(String),
    /// Bad combination of command-line options (exit 2).
    Usage(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Module(_) => 3,
            CliError::Verification(_) => 4,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Module(other),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Module(e) => write!(f, "{e}"),
            CliError::Verification(failed) => {
                writeln!(
                    f,
                    "{} propert{} failed:",
                    failed.len(),
                    if failed.len() == 1 { "y" } else { "ies" }
                )?;
                for name in failed {
                    writeln!(f, "  {name}")?;
                }
                Ok(())
            }
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Usage(m) => write!(f, "{m}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Io("x".into()).exit_code(), 1);
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
        assert_eq!(CliError::from(Error::Argument("x".into())).exit_code(), 3);
        assert_eq!(CliError::Verification(vec!["a".into()]).exit_code(), 4);
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(CliError::from(Error::Io(io)).exit_code(), 1);
    }
}
