from vcmoe.estimation.data import Dataset, read_csv, rescale_index, write_csv
from vcmoe.estimation.em import (FitConfig, ThetaCurve, e_step, evaluate_curve, fit_constant, fit_vcmoe,
                                 init_responsibilities, m_step)
from vcmoe.estimation.bandwidth import CvReport, cv_score, select_bandwidth
