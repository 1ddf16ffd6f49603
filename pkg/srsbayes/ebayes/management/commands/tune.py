"""
Tunes general-gamma over an alpha grid, or Efron over a (p, c0) grid, prints
the tuning table and writes the selected fit.
"""
from ebayes.cli import (
    SrsBayesCommand, UsageError, add_table_arguments, criteria_for, defaults, load_table_and_expected, write_frame,
    write_json,
)
from ebayes.exceptions import SelectionError
from ebayes.selection import CRITERIA, tune_efron, tune_general_gamma
from ebayes.serializers import TuneReportSerializer, fit_payload


class Command(SrsBayesCommand):
    help = "Fit every grid point, print the tuning table and write the AIC- or BIC-selected fit."

    def add_arguments(self, parser):
        add_table_arguments(parser)
        parser.add_argument('--model', choices=['general-gamma', 'efron'], default='general-gamma')
        parser.add_argument('--alpha-grid', type=float, nargs='+', default=None)
        parser.add_argument('--p-grid', type=int, nargs='+', default=None)
        parser.add_argument('--c0-grid', type=float, nargs='+', default=None)
        parser.add_argument('--criterion', choices=CRITERIA, default='AIC')
        parser.add_argument('--n-jobs', type=int, default=None, help="Worker processes (default: SRSBAYES_N_JOBS).")
        self.add_seed_argument(parser)
        parser.add_argument('-o', '--output', required=True, help="Fit JSON for the selected model.")
        parser.add_argument('--report', default=None, help="Also write the tuning report (JSON, or CSV by extension).")

    def run(self, **options):
        d = defaults()
        model = options['model']
        if model == 'general-gamma' and (options['p_grid'] or options['c0_grid']):
            raise UsageError("--p-grid and --c0-grid apply to --model efron only")
        if model == 'efron' and options['alpha_grid']:
            raise UsageError("--alpha-grid applies to --model general-gamma only")
        table, E = load_table_and_expected(options)

        try:
            if model == 'general-gamma':
                result = tune_general_gamma(
                    table, E, alpha_vec=options['alpha_grid'] or d['ALPHA_GRID'], criterion=options['criterion'],
                    n_jobs=self.n_jobs(options), seed=self.seed(options), tol=d['ECM_TOL'],
                    max_iter=d['ECM_MAX_ITER'], eps=d['INIT_EPS'],
                )
            else:
                result = tune_efron(
                    table, E, p_vec=options['p_grid'] or d['EFRON_P_GRID'],
                    c0_vec=options['c0_grid'] or d['EFRON_C0_GRID'], criterion=options['criterion'],
                    n_jobs=self.n_jobs(options), K=d['EFRON_SUPPORT_SIZE'],
                )
        except SelectionError as exc:
            if exc.report is not None:
                self.stdout.write(exc.report.to_table())
                self._write_report(options, exc.report, None)
            raise

        self.stdout.write(result.report.to_table())
        best = result.best_fit
        index = result.report.selected(options['criterion'])
        self.stdout.write(f"selected under {options['criterion']}: row {index + 1}")
        write_json(options['output'], fit_payload(best, table, E, criteria_for(best, table, E)))
        self._write_report(options, result.report, options['criterion'])

    def _write_report(self, options, report, criterion):
        path = options['report']
        if not path:
            return
        if path.endswith('.csv'):
            write_frame(path, report.to_frame(), index=False)
        else:
            payload = dict(TuneReportSerializer(report).data)
            payload['criterion'] = criterion
            write_json(path, payload)
