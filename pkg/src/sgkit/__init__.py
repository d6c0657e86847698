"""Build, validate, measure and benchmark scene-graph-annotated image-text datasets."""

__version__ = "0.1.0"
