"""
Writes heatmap or eyeplot PlotData JSON for a fit file, and optionally a
minimal SVG rendering of it.
"""
from ebayes.cli import SrsBayesCommand, defaults, load_fit, write_atomic, write_json
from ebayes.exceptions import DataError
from ebayes.plot_data import PLOT_TYPES, build_plot_data, render_svg
from ebayes.serializers import PlotDataSerializer


class Command(SrsBayesCommand):
    help = "Emit plot-ready JSON (heatmap or eyeplot) for a fit."

    def add_arguments(self, parser):
        parser.add_argument('fit', help="Fit JSON written by `fit` or `tune`.")
        parser.add_argument('--type', dest='plot_type', choices=PLOT_TYPES, default='heatmap')
        parser.add_argument('--num-top-AEs', dest='num_top_AEs', type=int, default=10)
        parser.add_argument('--num-top-drugs', dest='num_top_drugs', type=int, default=None)
        parser.add_argument('--N-threshold', dest='n_threshold', type=int, default=1,
                            help="Eyeplot: leave out cells with fewer reports.")
        parser.add_argument('--log-scale', action='store_true')
        parser.add_argument('--ae-names', nargs='+', default=None)
        parser.add_argument('--drug-names', nargs='+', default=None)
        parser.add_argument('--text-shift', type=float, default=None)
        parser.add_argument('--text-size', type=float, default=None)
        parser.add_argument('--x-lim-scalar', type=float, default=None)
        parser.add_argument('-o', '--output', required=True, help="PlotData JSON to write.")
        parser.add_argument('--svg', default=None, help="Also write a minimal SVG rendering.")

    def run(self, **options):
        d = defaults()
        fit, table, E = load_fit(options['fit'])
        payload = build_plot_data(
            fit, table, E, plot_type=options['plot_type'], num_top_AEs=options['num_top_AEs'],
            num_top_drugs=options['num_top_drugs'], n_threshold=options['n_threshold'],
            log_scale=options['log_scale'], ae_names=options['ae_names'], drug_names=options['drug_names'],
            cutoff=d['DETECTION_CUTOFF'], prob=d['DETECTION_PROB'], level=d['CREDIBLE_LEVEL'],
            text_shift=options['text_shift'], text_size=options['text_size'],
            x_lim_scalar=options['x_lim_scalar'],
        )
        serializer = PlotDataSerializer(data=payload)
        if not serializer.is_valid():
            raise DataError(f"plot data failed validation: {serializer.errors}")
        write_json(options['output'], payload)
        if options['svg']:
            write_atomic(options['svg'], render_svg(payload))
        self.stdout.write(f"{len(payload['cells'])} cell(s) for {len(payload['ae_order'])} AE(s) "
                          f"and {len(payload['drug_order'])} drug(s)")
