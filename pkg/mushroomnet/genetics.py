"""
Genetic distance matrices from aligned ITS sequences.

Distances use pairwise deletion: a site counts only when both sequences carry
one of A, C, G, T there. Matrices travel as CSV with a `species` header cell
followed by the species names, one row per species.
"""

import io
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from mushroomnet.errors import DataFormatError, GeneticsError, SaturatedDistanceError

logger = logging.getLogger(__name__)

ALPHABET = 'ACGT-N'
CODES = {ch: i for i, ch in enumerate(ALPHABET)}
A, C, G, T = 0, 1, 2, 3
MODELS = ('p', 'jc69', 'tn93')
SYMMETRY_TOLERANCE = 1e-6


@dataclass(frozen=True)
class AlignedSequenceSet:
    names: tuple
    sequences: tuple

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            dupes = sorted({n for n in self.names if self.names.count(n) > 1})
            raise DataFormatError(f"duplicate sequence names: {', '.join(dupes)}")
        lengths = {len(s) for s in self.sequences}
        if len(lengths) > 1:
            raise DataFormatError(f"aligned sequences must have equal lengths, got {sorted(lengths)}")
        for name, seq in zip(self.names, self.sequences):
            bad = set(seq) - set(ALPHABET)
            if bad:
                raise DataFormatError(f"sequence {name!r} has illegal characters {''.join(sorted(bad))!r}")

    def __len__(self):
        return len(self.names)

    @property
    def length(self):
        return len(self.sequences[0]) if self.sequences else 0

    def encoded(self):
        """(n, L) uint8 array of alphabet codes"""
        table = np.full(256, 255, dtype=np.uint8)
        for ch, code in CODES.items():
            table[ord(ch)] = code
        return np.stack([table[np.frombuffer(s.encode('ascii'), dtype=np.uint8)] for s in self.sequences])


def parse_fasta(text):
    """Parse FASTA text into an AlignedSequenceSet (sequences upper-cased)"""
    names, chunks = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith('>'):
            name = line[1:].strip()
            if not name:
                raise DataFormatError(f"FASTA line {lineno}: empty record name")
            names.append(name)
            chunks.append([])
        elif not names:
            raise DataFormatError(f"FASTA line {lineno}: sequence data before the first '>' header")
        else:
            chunks[-1].append(line.upper())
    if not names:
        raise DataFormatError("FASTA input holds no records")
    return AlignedSequenceSet(tuple(names), tuple(''.join(c) for c in chunks))


def emit_fasta(seqs, width=60):
    lines = []
    for name, seq in zip(seqs.names, seqs.sequences):
        lines.append(f'>{name}')
        lines.extend(seq[i:i + width] for i in range(0, len(seq), width) or [''])
    return '\n'.join(lines) + '\n'


def _encode_pair(s1, s2):
    if isinstance(s1, str):
        pair = AlignedSequenceSet(('s1', 's2'), (s1.upper(), s2.upper()))
        return pair.encoded()
    return np.stack([s1, s2])


def _site_counts(x, y):
    """(compared sites, A<->G transitions, C<->T transitions, transversions, base counts)"""
    valid = (x < 4) & (y < 4)
    n = int(valid.sum())
    if n == 0:
        raise GeneticsError("no comparable sites after pairwise deletion")
    x, y = x[valid], y[valid]
    diff = x != y
    purine = ((x == A) & (y == G)) | ((x == G) & (y == A))
    pyrimidine = ((x == C) & (y == T)) | ((x == T) & (y == C))
    transversions = int(diff.sum()) - int(purine.sum()) - int(pyrimidine.sum())
    bases = np.bincount(np.concatenate([x, y]), minlength=4)[:4]
    return n, int(purine.sum()), int(pyrimidine.sum()), transversions, bases


def _log(value, model):
    if value <= 0.0:
        raise SaturatedDistanceError(f"saturated distance: {model} log argument {value:.6g} <= 0")
    return np.log(value)


def p_distance(s1, s2):
    """Fraction of differing sites among sites comparable in both sequences"""
    x, y = _encode_pair(s1, s2)
    n, p1, p2, q, _ = _site_counts(x, y)
    return (p1 + p2 + q) / n


def jc69_from_p(p):
    return float(-0.75 * _log(1.0 - 4.0 * p / 3.0, 'jc69'))


def jc69_distance(s1, s2):
    """Jukes-Cantor: -3/4 ln(1 - 4p/3)"""
    return jc69_from_p(p_distance(s1, s2))


def jc69_variance(p, length):
    """Large-sample variance of the JC69 estimate, p(1-p) / ((1 - 4p/3)^2 L)"""
    denominator = (1.0 - 4.0 * p / 3.0) ** 2 * length
    if denominator <= 0.0:
        raise SaturatedDistanceError(f"saturated distance: jc69 variance undefined at p={p:.6g}")
    return p * (1.0 - p) / denominator


def tn93_from_counts(n, purine, pyrimidine, transversions, bases):
    """Tamura-Nei closed form from site counts and pooled base counts (A, C, G, T)"""
    P1, P2, Q = purine / n, pyrimidine / n, transversions / n
    pi_a, pi_c, pi_g, pi_t = np.asarray(bases, dtype=np.float64) / np.sum(bases)
    g_r, g_y = pi_a + pi_g, pi_c + pi_t

    d = 0.0
    if pi_a * pi_g > 0:
        k1 = 2.0 * pi_a * pi_g / g_r
        d -= k1 * _log(1.0 - P1 / k1 - Q / (2.0 * g_r), 'tn93')
    elif P1 > 0:
        raise SaturatedDistanceError("saturated distance: purine transitions without both purines")
    if pi_c * pi_t > 0:
        k2 = 2.0 * pi_c * pi_t / g_y
        d -= k2 * _log(1.0 - P2 / k2 - Q / (2.0 * g_y), 'tn93')
    elif P2 > 0:
        raise SaturatedDistanceError("saturated distance: pyrimidine transitions without both pyrimidines")
    if g_r > 0 and g_y > 0:
        k3 = 2.0 * (g_r * g_y - pi_a * pi_g * g_y / g_r - pi_c * pi_t * g_r / g_y)
        if k3 != 0:
            d -= k3 * _log(1.0 - Q / (2.0 * g_r * g_y), 'tn93')
    return float(d)


def tn93_distance(s1, s2):
    x, y = _encode_pair(s1, s2)
    return tn93_from_counts(*_site_counts(x, y))


def _pair_distance(x, y, model):
    counts = _site_counts(x, y)
    if model == 'tn93':
        return tn93_from_counts(*counts)
    n, p1, p2, q, _ = counts
    p = (p1 + p2 + q) / n
    return p if model == 'p' else jc69_from_p(p)


def _check_model(model):
    if model not in MODELS:
        raise GeneticsError(f"unknown distance model {model!r}; choose from {', '.join(MODELS)}")


# ─── Matrices ──────────────────────────────────────────────────────────────
@dataclass(frozen=True, eq=False)
class GeneticDistanceMatrix:
    names: tuple
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        n = len(self.names)
        if values.shape != (n, n):
            raise DataFormatError(f"distance matrix shape {values.shape} does not match {n} names")
        if len(set(self.names)) != n:
            raise DataFormatError("distance matrix species names must be unique")
        if not np.all(np.isfinite(values)):
            raise DataFormatError("distance matrix holds non-finite entries")
        if np.any(values < 0):
            raise DataFormatError("distance matrix holds negative entries")
        if np.max(np.abs(values - values.T), initial=0.0) > 1e-9:
            raise DataFormatError("distance matrix is not symmetric")
        if np.any(np.diag(values) != 0):
            raise DataFormatError("distance matrix diagonal must be zero")
        object.__setattr__(self, 'names', tuple(self.names))
        object.__setattr__(self, 'values', values)

    def __len__(self):
        return len(self.names)

    def index(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise GeneticsError(f"species {name!r} not in matrix") from None

    def distance(self, a, b):
        return float(self.values[self.index(a), self.index(b)])


def subset_matrix(matrix, names):
    """Matrix restricted to `names`, in the given order"""
    idx = [matrix.index(name) for name in names]
    return GeneticDistanceMatrix(tuple(names), matrix.values[np.ix_(idx, idx)])


def drop_species(matrix, names):
    missing = [n for n in names if n not in matrix.names]
    if missing:
        raise GeneticsError(f"species not in matrix: {', '.join(missing)}")
    keep = [n for n in matrix.names if n not in set(names)]
    return subset_matrix(matrix, keep)


def distance_matrix(seqs, model='p'):
    """Pairwise distances under `model`; symmetric with a zero diagonal"""
    _check_model(model)
    codes = seqs.encoded()
    n = len(seqs)
    values = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            try:
                values[i, j] = values[j, i] = _pair_distance(codes[i], codes[j], model)
            except GeneticsError as e:
                raise type(e)(f"{seqs.names[i]} vs {seqs.names[j]}: {e}") from e
    return GeneticDistanceMatrix(seqs.names, values)


def bootstrap_uncertainty(seqs, model='p', reps=100, seed=0):
    """Per-entry standard deviation of distances over column-resampled alignments"""
    _check_model(model)
    if reps < 2:
        raise GeneticsError(f"bootstrap needs at least 2 replicates, got {reps}")
    rng = np.random.default_rng(seed)
    codes = seqs.encoded()
    n, length = codes.shape
    samples = np.zeros((reps, n, n))
    for r in range(reps):
        columns = rng.integers(0, length, size=length)
        resampled = codes[:, columns]
        for i in range(n):
            for j in range(i + 1, n):
                samples[r, i, j] = samples[r, j, i] = _pair_distance(resampled[i], resampled[j], model)
    logger.debug("bootstrap finished: %d replicates over %d sequences", reps, n)
    return samples.std(axis=0, ddof=1)


# ─── CSV ───────────────────────────────────────────────────────────────────
def matrix_to_csv(names, values, label='species'):
    """Square table (not necessarily symmetric) in the matrix CSV layout"""
    frame = pd.DataFrame(np.asarray(values, dtype=np.float64), index=list(names), columns=list(names))
    frame.index.name = label
    return frame.to_csv(lineterminator='\n')


def save_matrix_csv(matrix):
    return matrix_to_csv(matrix.names, matrix.values)


def load_matrix_csv(text, tolerance=SYMMETRY_TOLERANCE):
    """Parse matrix CSV text; near-symmetric input is averaged, the diagonal is zero-filled"""
    try:
        frame = pd.read_csv(io.StringIO(text), comment='#', index_col=0, skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, ValueError) as e:
        raise DataFormatError(f"cannot parse distance matrix CSV: {e}") from e
    names = [str(n).strip() for n in frame.columns]
    rows = [str(n).strip() for n in frame.index]
    if names != rows:
        raise DataFormatError("distance matrix row names must match the header, in the same order")
    try:
        values = frame.to_numpy(dtype=np.float64)
    except ValueError as e:
        raise DataFormatError(f"distance matrix body must be numeric: {e}") from e
    if not np.all(np.isfinite(values)):
        raise DataFormatError("distance matrix holds missing or non-finite entries")
    asymmetry = np.max(np.abs(values - values.T), initial=0.0)
    if asymmetry > tolerance:
        i, j = np.unravel_index(np.argmax(np.abs(values - values.T)), values.shape)
        raise DataFormatError(f"distance matrix asymmetric beyond {tolerance}: {names[i]} vs {names[j]} "
                              f"differ by {asymmetry:.3g}")
    values = (values + values.T) / 2.0
    np.fill_diagonal(values, 0.0)
    return GeneticDistanceMatrix(tuple(names), values)


def read_matrix(path):
    with open(path, encoding='utf-8') as fh:
        return load_matrix_csv(fh.read())


def write_matrix(matrix, path):
    with open(path, 'w', encoding='utf-8', newline='') as fh:
        fh.write(save_matrix_csv(matrix))
    logger.info("wrote distance matrix %s (%d species)", path, len(matrix))
