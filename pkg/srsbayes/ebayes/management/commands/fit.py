"""
Fits one empirical Bayes model to a contingency table and writes the fit file.

    python manage.py fit statin.csv --model general-gamma --alpha 0.5 -o fit.json
"""
from ebayes.cli import (
    NotConverged, SrsBayesCommand, add_table_arguments, check_model_options, criteria_for, fit_model, fmt,
    load_table_and_expected, write_json,
)
from ebayes.results import MODELS
from ebayes.serializers import fit_payload


class Command(SrsBayesCommand):
    help = "Fit GPS, K-gamma, general-gamma, KM or Efron to a table and write the fit JSON."

    def add_arguments(self, parser):
        add_table_arguments(parser)
        parser.add_argument('--model', choices=MODELS, default='general-gamma')
        parser.add_argument('--alpha', type=float, default=None, help="Dirichlet hyperparameter (general-gamma).")
        parser.add_argument('--K', type=int, default=None, help="Number of gamma components (k-gamma, general-gamma).")
        parser.add_argument('--p', type=int, default=None, help="Spline degrees of freedom (efron).")
        parser.add_argument('--c0', type=float, default=None, help="Penalty weight (efron).")
        parser.add_argument('--support-size', type=int, default=None, help="Support grid size (KM, efron).")
        parser.add_argument('--max-iter', type=int, default=None)
        parser.add_argument('--tol', type=float, default=None)
        self.add_seed_argument(parser)
        parser.add_argument('-o', '--output', required=True, help="Fit JSON to write.")

    def run(self, **options):
        model = options['model']
        check_model_options(model, options)
        table, E = load_table_and_expected(options)
        fit = fit_model(table, E, model, options, seed=self.seed(options))
        criteria = criteria_for(fit, table, E)
        write_json(options['output'], fit_payload(fit, table, E, criteria))

        self.stdout.write(fit.describe())
        for name in ('AIC', 'BIC'):
            if criteria.get(name) is not None:
                self.stdout.write(f"{name}: {fmt(criteria[name])}")
        if not fit.converged:
            raise NotConverged(f"{model} fit did not converge after {fit.iterations} iterations; "
                               f"the result was written to {options['output']}")
