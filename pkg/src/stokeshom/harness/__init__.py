"""Study orchestration, reporting and the command line interface."""
from .report import RateFit, emit, fit_rate, to_csv, to_svg
from .study import StudyConfig, StudyReport, StudyRow, run_row, run_study

__all__ = ["StudyConfig", "StudyReport", "StudyRow", "RateFit", "run_study", "run_row", "fit_rate", "emit", "to_csv", "to_svg"]
