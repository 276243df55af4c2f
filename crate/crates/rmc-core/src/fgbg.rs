//! Foreground-background separation (placeholder).
