"""Small tables and fits shared by the test modules."""
import numpy as np

from ebayes.results import FitResult
from ebayes.tables import ContingencyTable, estimate_null_expected_count


def make_table(counts):
    """A table with AE1.. / Drug1.. names and 'Other AEs' / 'Other drugs' as the reference."""
    counts = np.asarray(counts)
    n_rows, n_cols = counts.shape
    return ContingencyTable(
        counts=counts,
        ae_names=[f"AE{i + 1}" for i in range(n_rows - 1)] + ['Other AEs'],
        drug_names=[f"Drug{j + 1}" for j in range(n_cols - 1)] + ['Other drugs'],
    )


def simulated_table(seed, n_rows=6, n_cols=4, signals=((0, 0, 4.0),), base=20.0):
    """A Poisson table with a large reference row and column and a few signal cells."""
    rng = np.random.default_rng(seed)
    row_weights = rng.uniform(0.5, 2.0, n_rows)
    col_weights = rng.uniform(0.5, 2.0, n_cols)
    row_weights[-1] = 15.0
    col_weights[-1] = 10.0
    means = base * np.outer(row_weights, col_weights)
    for i, j, strength in signals:
        means[i, j] *= strength
    counts = rng.poisson(means)
    counts[-1, :] = np.maximum(counts[-1, :], 1)
    counts[:, -1] = np.maximum(counts[:, -1], 1)
    return make_table(counts)


def table_and_expected(seed, **kwargs):
    table = simulated_table(seed, **kwargs)
    return table, estimate_null_expected_count(table, 'subtable')


def frozen_fit(prior, model='k-gamma', log_marginal_likelihood=0.0, **kwargs):
    """A FitResult around a fixed prior, for posterior tests that need no fitting."""
    return FitResult(model=model, prior=prior, log_marginal_likelihood=log_marginal_likelihood, **kwargs)


def write_csv(path, table):
    lines = ['AE,' + ','.join(table.drug_names)]
    for name, row in zip(table.ae_names, table.counts):
        lines.append(name + ',' + ','.join(str(int(value)) for value in row))
    path.write_text("\n".join(lines) + "\n", encoding='utf-8')
    return path
