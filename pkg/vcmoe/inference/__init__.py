from vcmoe.inference.covariance import CovCurve, estimate_bias, sandwich_cov
from vcmoe.inference.bands import BandResult, asymptotic_band, bootstrap_band
