"""Cross-validation protocol, data groups, metrics and reporting."""
