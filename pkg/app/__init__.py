"""Classification of intracardiac electrograms into normal / abnormal / unclassified."""

__version__ = "0.1.0"
