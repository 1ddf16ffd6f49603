"""
Generates simulated tables from a reference table with homogeneous signals
and structural zeros, one CSV per replicate.
"""
from pathlib import Path

from ebayes.cli import SrsBayesCommand, UsageError, matrix_frame, table_frame, write_frame
from ebayes.simulation import (
    SYNTHETIC_REFERENCE, SignalMatrix, ZeroIndicator, generate_contin_table, zero_indicator_bernoulli,
    zero_indicator_from_E,
)
from ebayes.tables import EXPECTED_METHODS, expected_counts_for, load_table


class Command(SrsBayesCommand):
    help = "Write simulated multinomial tables (table_001.csv, ...) and the structural-zero matrix."

    def add_arguments(self, parser):
        parser.add_argument('reference', nargs='?', default=None,
                            help="Reference table CSV (default: the bundled synthetic table).")
        parser.add_argument('--signal-cell', dest='signal_cells', type=int, nargs=2, action='append',
                            metavar=('AE_INDEX', 'DRUG_INDEX'), default=None,
                            help="Zero-based signal cell; repeat for several.")
        parser.add_argument('--lambda', dest='strength', type=float, default=1.0)
        zeros = parser.add_mutually_exclusive_group()
        zeros.add_argument('--zi', type=float, default=None, help="Zero cells with E at or below this quantile.")
        zeros.add_argument('--omega', type=float, default=None, help="Bernoulli(omega) structural zeros.")
        parser.add_argument('--expected', choices=EXPECTED_METHODS, default='subtable')
        parser.add_argument('--n-tables', type=int, default=1)
        self.add_seed_argument(parser)
        parser.add_argument('--output-dir', required=True)

    def run(self, **options):
        reference = load_table(options['reference'] or SYNTHETIC_REFERENCE)
        cells = [tuple(cell) for cell in options['signal_cells'] or []]
        if options['strength'] != 1.0 and not cells:
            raise UsageError("--lambda needs at least one --signal-cell")
        for i, j in cells:
            if not (0 <= i < reference.shape[0] and 0 <= j < reference.shape[1]):
                raise UsageError(f"signal cell ({i}, {j}) is outside the {reference.shape[0]}x{reference.shape[1]} table")
        seed = self.seed(options)
        signal = SignalMatrix.homogeneous(reference.shape, cells, options['strength'])

        if options['zi'] is not None:
            E = expected_counts_for(reference, options['expected'], fallback_marginal=True)
            zeros = zero_indicator_from_E(E, options['zi'])
        elif options['omega'] is not None:
            zeros = zero_indicator_bernoulli(reference.shape, options['omega'], seed=seed)
        else:
            zeros = ZeroIndicator.none(reference.shape)
        zeros = zeros.excluding(cells)

        tables = generate_contin_table(reference, signal, zeros, n_tables=options['n_tables'], seed=seed)
        output_dir = Path(options['output_dir'])
        width = max(3, len(str(len(tables))))
        for index, table in enumerate(tables, start=1):
            write_frame(output_dir / f"table_{index:0{width}d}.csv", table_frame(table))
        write_frame(output_dir / 'zeros.csv', matrix_frame(zeros.z.astype(int), reference))
        self.stdout.write(f"{len(tables)} table(s) written to {output_dir}")
