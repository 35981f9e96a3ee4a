use serde_json::json;

/// Failure reported as `{"error": {"kind", "message"}}` on stderr.
#[derive(Debug)]
pub struct CliError {
    pub kind: String,
    pub message: String,
    pub code: u8,
}

impl CliError {
    /// Bad input from the caller: exit 2.
    pub fn usage(kind: &str, message: impl Into<String>) -> Self {
        Self { kind: kind.into(), message: message.into(), code: 2 }
    }

    /// Failure while doing the work: exit 1.
    pub fn runtime(kind: &str, message: impl Into<String>) -> Self {
        Self { kind: kind.into(), message: message.into(), code: 1 }
    }

    pub fn to_json(&self) -> String {
        json!({"error": {"kind": self.kind, "message": self.message}}).to_string()
    }
}

impl From<holofield::Error> for CliError {
    fn from(e: holofield::Error) -> Self {
        let code = if matches!(e, holofield::Error::Config(_)) { 2 } else { 1 };
        Self { kind: e.kind().into(), message: e.to_string(), code }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        holofield::Error::from(e).into()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        holofield::Error::from(e).into()
    }
}
