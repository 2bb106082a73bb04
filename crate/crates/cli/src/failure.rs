use std::fmt;

/// A command failure and the exit status it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Invalid flags, config or inputs (exit 2).
    Config(String),
    /// Unreadable or incompatible checkpoint (exit 3).
    Checkpoint(String),
    /// Corrupt or truncated container (exit 4).
    Stream(String),
    /// A result outside the domain of an evaluation (exit 5).
    Eval(String),
    /// Anything else, such as a failed training step or a write error.
    Runtime(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Checkpoint(_) => 3,
            Failure::Stream(_) => 4,
            Failure::Eval(_) => 5,
            Failure::Runtime(_) => 1,
        }
    }

    pub fn config(e: impl fmt::Display) -> Self {
        Failure::Config(e.to_string())
    }

    pub fn checkpoint(e: impl fmt::Display) -> Self {
        Failure::Checkpoint(e.to_string())
    }

    pub fn stream(e: impl fmt::Display) -> Self {
        Failure::Stream(e.to_string())
    }

    pub fn eval(e: impl fmt::Display) -> Self {
        Failure::Eval(e.to_string())
    }

    pub fn runtime(e: impl fmt::Display) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, msg) = match self {
            Failure::Config(m) => ("config", m),
            Failure::Checkpoint(m) => ("checkpoint", m),
            Failure::Stream(m) => ("stream", m),
            Failure::Eval(m) => ("evaluation", m),
            Failure::Runtime(m) => ("error", m),
        };
        write!(f, "{kind}: {msg}")
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;
