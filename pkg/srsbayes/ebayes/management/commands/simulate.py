"""
Runs a simulation study from a JSON config and writes the tidy metrics CSV
(policy, zi, lambda, metric_name, value) to the output directory.
"""
from pathlib import Path

import numpy as np

from ebayes.cli import SrsBayesCommand, UsageError, npz_bytes, read_json, write_atomic, write_frame
from ebayes.serializers import SimulationConfigSerializer
from ebayes.simulation import run_simulation


def draws_key(policy, zi, strength):
    return f"{policy}|zi={zi:g}|lambda={strength:g}"


class Command(SrsBayesCommand):
    help = "Simulate tables from a reference table, fit every policy and write the scaled-RMSE metrics."

    def add_arguments(self, parser):
        parser.add_argument('config', help="Simulation config JSON.")
        parser.add_argument('--output-dir', required=True)
        parser.add_argument('--n-jobs', type=int, default=None, help="Worker processes (default: SRSBAYES_N_JOBS).")
        parser.add_argument('--store-draws', action='store_true',
                            help="Also write every replicate's posterior draws to draws.npz.")
        self.add_seed_argument(parser)

    def run(self, **options):
        payload = read_json(options['config'], 'simulation config')
        serializer = SimulationConfigSerializer(data=payload)
        if not serializer.is_valid():
            raise UsageError(f"invalid simulation config: {serializer.errors}")
        config = serializer.save()
        if options['seed'] is not None or 'seed' not in payload:
            config.seed = self.seed(options)
        if config.reference and not Path(config.reference).is_absolute():
            config.reference = str(Path(options['config']).resolve().parent / config.reference)

        frame, stored = run_simulation(config, n_jobs=self.n_jobs(options), keep_draws=options['store_draws'])
        output_dir = Path(options['output_dir'])
        write_frame(output_dir / 'metrics.csv', frame, index=False)
        if options['store_draws']:
            arrays = {
                draws_key(*key): np.stack([draws.draws for draws in replicates])
                for key, replicates in stored.items()
            }
            write_atomic(output_dir / 'draws.npz', npz_bytes(arrays), mode='wb')
        self.stdout.write(f"{len(frame)} metric row(s) written to {output_dir / 'metrics.csv'}")
