import hashlib
import logging
import re
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from vcmoe.base.errors import DataError, DegenerateIndex, DimensionMismatch, InsufficientData, ParseError, SchemaError
from vcmoe.base.model import check_response

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = '%.17g'


@dataclass(frozen=True)
class IndexMap:
    """Affine map raw -> (raw - lower) / (upper - lower) onto [0, 1]."""
    lower: float = 0.0
    upper: float = 1.0

    def forward(self, raw):
        return (np.asarray(raw, dtype=float) - self.lower) / (self.upper - self.lower)

    def inverse(self, u):
        return self.lower + np.asarray(u, dtype=float) * (self.upper - self.lower)

    def as_dict(self):
        return dict(lower=self.lower, upper=self.upper)


def rescale_index(raw_u):
    """
    Rescale the index variable onto [0, 1].

    Returns the rescaled vector and the IndexMap needed to report results on the raw scale.
    """
    raw_u = np.asarray(raw_u, dtype=float)
    lower, upper = float(np.min(raw_u)), float(np.max(raw_u))
    if not upper > lower:
        raise DegenerateIndex()
    index_map = IndexMap(lower, upper)
    u = index_map.forward(raw_u)
    # pin the extremes against rounding
    u[raw_u == lower] = 0.0
    u[raw_u == upper] = 1.0
    return u, index_map


@dataclass
class Dataset:
    """
    Observations (u_i, x_i, z_i, y_i) with u rescaled to [0, 1].

    X holds the gating covariates (the first column may be an intercept), Z the expert
    covariates. `labels` keeps true component memberships for simulated data; it is never
    used by estimation.
    """
    u: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    y: np.ndarray
    labels: np.ndarray = field(default=None, repr=False)
    index_map: IndexMap = field(default_factory=IndexMap)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float).ravel()
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.X = np.asarray(self.X, dtype=float)
        self.Z = np.asarray(self.Z, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        if self.Z.ndim == 1:
            self.Z = self.Z[:, None]
        n = self.u.shape[0]
        if n < 2:
            raise InsufficientData(f"a dataset needs at least 2 observations, got {n}")
        if self.X.shape[0] != n or self.Z.shape[0] != n or self.y.shape[0] != n:
            raise DimensionMismatch(f"row counts differ: u={n}, X={self.X.shape[0]}, Z={self.Z.shape[0]}, y={self.y.shape[0]}")
        for name in ('u', 'X', 'Z', 'y'):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DataError(f"{name} contains NaN or infinite values")
        if np.any(self.u < 0) or np.any(self.u > 1):
            raise DataError("index values must lie in [0, 1]; rescale them with rescale_index first")

    @property
    def n(self):
        return self.u.shape[0]

    @property
    def p_x(self):
        return self.X.shape[1]

    @property
    def p_z(self):
        return self.Z.shape[1]

    def check(self, spec):
        """Validate against a ModelSpec; warns when n is small relative to the parameter count."""
        if spec.p_x != self.p_x or spec.p_z != self.p_z:
            raise DimensionMismatch(f"data has p_x={self.p_x}, p_z={self.p_z}; model expects p_x={spec.p_x}, p_z={spec.p_z}")
        check_response(spec, self.y)
        n_free = spec.free_parameter_count()
        if self.n < 10 * n_free:
            logger.warning("Only %d observations for %d free local parameters; estimates may be unstable", self.n, n_free)
        return self

    def drop(self, i):
        labels = None if self.labels is None else np.delete(self.labels, i)
        return Dataset(np.delete(self.u, i), np.delete(self.X, i, axis=0), np.delete(self.Z, i, axis=0),
                       np.delete(self.y, i), labels, self.index_map)

    def with_response(self, y):
        return Dataset(self.u, self.X, self.Z, y, None, self.index_map)

    def to_frame(self):
        cols = {'u': self.u, 'y': self.y}
        cols.update({f"x{j}": self.X[:, j] for j in range(self.p_x)})
        cols.update({f"z{j}": self.Z[:, j] for j in range(self.p_z)})
        if self.labels is not None:
            cols['label'] = self.labels
        return pd.DataFrame(cols)

    def digest(self):
        h = hashlib.sha256()
        for arr in (self.u, self.X, self.Z, self.y):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def write_csv(data, path):
    data.to_frame().to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)


def file_digest(path):
    h = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b''):
            h.update(chunk)
    return h.hexdigest()


def read_csv(path, rescale=None):
    """
    Load a dataset from CSV with columns u, y, x0..x{p_x-1}, z0..z{p_z-1}.

    Values must be plain decimals with '.' separators and no missing cells. Extra columns are
    ignored, except `label` which is kept as hidden component labels. The index is rescaled to
    [0, 1] when `rescale` is True, or when it is None and some u falls outside [0, 1].
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    except (pd.errors.ParserError, UnicodeDecodeError) as err:
        raise ParseError(_row_from_message(str(err)), '?', str(err)) from err
    except pd.errors.EmptyDataError as err:
        raise SchemaError('u', 'empty file, missing required column') from err
    except OSError as err:
        raise DataError(f"cannot read {path}: {err}") from err
    frame.columns = [c.strip() for c in frame.columns]
    for column in ('u', 'y'):
        if column not in frame.columns:
            raise SchemaError(column)
    x_cols = _indexed_columns(frame.columns, 'x')
    z_cols = _indexed_columns(frame.columns, 'z')
    if not x_cols:
        raise SchemaError('x0')
    if not z_cols:
        raise SchemaError('z0')
    ignored = [c for c in frame.columns if c not in {'u', 'y', 'label', *x_cols, *z_cols}]
    if ignored:
        logger.info("Ignoring extra columns %s", ignored)
    values = {c: _numeric(frame[c], c) for c in ['u', 'y', *x_cols, *z_cols]}
    labels = _numeric(frame['label'], 'label').astype(int) if 'label' in frame.columns else None
    raw_u = values['u']
    if rescale or (rescale is None and (np.min(raw_u) < 0 or np.max(raw_u) > 1)):
        u, index_map = rescale_index(raw_u)
        logger.info("Rescaled index from [%g, %g] to [0, 1]", index_map.lower, index_map.upper)
    else:
        u, index_map = raw_u, IndexMap()
    X = np.column_stack([values[c] for c in x_cols])
    Z = np.column_stack([values[c] for c in z_cols])
    return Dataset(u, X, Z, values['y'], labels, index_map)


def _indexed_columns(columns, prefix):
    found = {}
    for c in columns:
        m = re.fullmatch(prefix + r'(\d+)', c)
        if m:
            found[int(m.group(1))] = c
    for j in range(len(found)):
        if j not in found:
            raise SchemaError(f"{prefix}{j}")
    return [found[j] for j in range(len(found))]


def _numeric(series, column):
    raw = series.to_numpy()
    out = np.empty(raw.shape[0])
    for i, v in enumerate(raw):
        try:
            out[i] = float(v)
        except ValueError:
            out[i] = np.nan
        if not np.isfinite(out[i]):
            # data rows are 1-based, header excluded
            raise ParseError(i + 1, column, f"value {v!r} is not a finite number")
    return out


def _row_from_message(message):
    m = re.search(r'line (\d+)', message)
    return int(m.group(1)) - 1 if m else -1
