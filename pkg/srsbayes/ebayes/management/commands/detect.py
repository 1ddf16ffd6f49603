"""
Applies the detection rule Pr(lambda_ij >= cutoff | data) > prob to a fit file.
"""
from ebayes.cli import SrsBayesCommand, UsageError, defaults, load_fit, matrix_frame, write_frame
from ebayes.posterior import detect_signals


class Command(SrsBayesCommand):
    help = "Write the I x J detection matrix (1 = signal) and print the number of detected signals."

    def add_arguments(self, parser):
        parser.add_argument('fit', help="Fit JSON written by `fit` or `tune`.")
        parser.add_argument('--cutoff', type=float, default=None, help="Signal cutoff, > 1 (default 1.001).")
        parser.add_argument('--prob', type=float, default=None, help="Posterior probability threshold (default 0.95).")
        parser.add_argument('-o', '--output', required=True, help="Detection CSV to write.")
        parser.add_argument('--probabilities', default=None, help="Also write the tail probabilities as CSV.")

    def run(self, **options):
        d = defaults()
        cutoff = d['DETECTION_CUTOFF'] if options['cutoff'] is None else options['cutoff']
        prob = d['DETECTION_PROB'] if options['prob'] is None else options['prob']
        if cutoff <= 1:
            raise UsageError(f"--cutoff must be greater than 1, got {cutoff}")
        if not 0 < prob < 1:
            raise UsageError(f"--prob must lie strictly between 0 and 1, got {prob}")
        fit, table, E = load_fit(options['fit'])
        detected, tails = detect_signals(fit, table, E, cutoff=cutoff, prob=prob)
        write_frame(options['output'], matrix_frame(detected.astype(int), table))
        if options['probabilities']:
            write_frame(options['probabilities'], matrix_frame(tails, table))
        self.stdout.write(str(int(detected.sum())))
