//! Placeholder, filled in with the CLI.
