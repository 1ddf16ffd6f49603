"""
Summaries of a fit file, one per `--return` choice:

- prior: the estimated prior (gamma components or support masses)
- likelihood: the log marginal likelihood and, where defined, AIC and BIC
- detected-signal: the detection matrix (same rule as `detect`)
- posterior-draws: S posterior draws per cell, saved as .npz
- credible: posterior medians and equi-tailed credible intervals per cell

Without `--return`, prior and likelihood are printed.
"""
import numpy as np
import pandas as pd

from ebayes.cli import (
    SrsBayesCommand, UsageError, criteria_for, defaults, fmt, load_fit, matrix_frame, npz_bytes, write_atomic,
    write_frame,
)
from ebayes.posterior import detect_signals, posterior_draws, posterior_summary

RETURN_CHOICES = ('prior', 'likelihood', 'detected-signal', 'posterior-draws', 'credible')
FILE_CHOICES = ('detected-signal', 'posterior-draws', 'credible')


class Command(SrsBayesCommand):
    help = "Print or write summaries of a fit: prior, likelihood, detected signals, posterior draws, credible intervals."

    def add_arguments(self, parser):
        parser.add_argument('fit', help="Fit JSON written by `fit` or `tune`.")
        parser.add_argument('--return', dest='what', choices=RETURN_CHOICES, default=None)
        parser.add_argument('--cutoff', type=float, default=None)
        parser.add_argument('--prob', type=float, default=None)
        parser.add_argument('--level', type=float, default=None, help="Credible level (default 0.90).")
        parser.add_argument('--draws', type=int, default=None, help="Posterior draws per cell (default 10000).")
        self.add_seed_argument(parser)
        parser.add_argument('-o', '--output', default=None, help="File for detected-signal, posterior-draws or credible.")

    def run(self, **options):
        what = options['what']
        if what in FILE_CHOICES and not options['output']:
            raise UsageError(f"--return {what} needs --output")
        fit, table, E = load_fit(options['fit'])
        if what in (None, 'prior'):
            self._print_prior(fit)
        if what in (None, 'likelihood'):
            self._print_likelihood(fit, table, E)
        if what == 'detected-signal':
            self._detected(fit, table, E, options)
        elif what == 'posterior-draws':
            self._draws(fit, table, E, options)
        elif what == 'credible':
            self._credible(fit, table, E, options)

    def _print_prior(self, fit):
        prior = fit.prior
        if fit.is_gamma_mixture:
            frame = pd.DataFrame({'weight': prior.weights, 'shape': prior.shapes, 'scale': prior.scales})
        else:
            masses = np.asarray(prior.masses)
            keep = masses > 0
            frame = pd.DataFrame({'support': np.asarray(prior.support)[keep], 'mass': masses[keep]})
        self.stdout.write(f"prior ({fit.model}, {fit.K_star} non-empty component(s)):")
        self.stdout.write(frame.to_string(index=False, float_format=fmt))

    def _print_likelihood(self, fit, table, E):
        self.stdout.write(f"log marginal likelihood: {fmt(fit.log_marginal_likelihood)}")
        for name, value in criteria_for(fit, table, E).items():
            if value is not None:
                self.stdout.write(f"{name}: {fmt(value)}")

    def _detected(self, fit, table, E, options):
        d = defaults()
        cutoff = d['DETECTION_CUTOFF'] if options['cutoff'] is None else options['cutoff']
        prob = d['DETECTION_PROB'] if options['prob'] is None else options['prob']
        detected, _ = detect_signals(fit, table, E, cutoff=cutoff, prob=prob)
        write_frame(options['output'], matrix_frame(detected.astype(int), table))
        self.stdout.write(str(int(detected.sum())))

    def _draws(self, fit, table, E, options):
        S = options['draws'] or defaults()['N_POSTERIOR_DRAWS']
        draws = posterior_draws(fit, table, E, S=S, seed=self.seed(options))
        archive = npz_bytes({
            'draws': draws.draws, 'ae_names': np.array(table.ae_names),
            'drug_names': np.array(table.drug_names), 'seed': draws.seed,
        })
        write_atomic(options['output'], archive, mode='wb')
        self.stdout.write(f"wrote {S} draw(s) per cell to {options['output']}")

    def _credible(self, fit, table, E, options):
        level = defaults()['CREDIBLE_LEVEL'] if options['level'] is None else options['level']
        summary = posterior_summary(fit, table, E, level=level)
        rows = []
        for i, ae in enumerate(table.ae_names):
            for j, drug in enumerate(table.drug_names):
                rows.append({'ae': ae, 'drug': drug, 'N': int(table.counts[i, j]), 'E': float(E.values[i, j]),
                             'median': summary['median'][i, j], 'lower': summary['lower'][i, j],
                             'upper': summary['upper'][i, j]})
        write_frame(options['output'], pd.DataFrame(rows), index=False)
        self.stdout.write(f"wrote {level:g} credible intervals for {len(rows)} cell(s) to {options['output']}")
