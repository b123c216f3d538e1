"""Shared vocabulary: analysis families, modeling submodes, chart types."""

MODULES = ("ba", "dv", "sm")

SUBMODES = ("regression", "correlation", "forecast")

CHART_TYPES = ("line", "bar", "scatter", "pie", "area", "histogram", "box")

# The metric each modeling submode must report, with its pass threshold
# applied at evaluation time.
METRIC_FOR_SUBMODE = {
    "regression": "mape",
    "correlation": "p_value",
    "forecast": "r_squared",
}

# Result kind expected on the wire for each analysis family.
KIND_FOR_MODULE = {"ba": "table", "dv": "chart", "sm": "model"}
