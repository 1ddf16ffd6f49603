"""
Serializers for every JSON file the commands read or write.

The Django REST Framework serializers here validate incoming JSON (fit
files, simulation configs, plot data) and turn it back into library objects,
so a malformed file fails with a field-by-field message instead of a stack
trace. Fit files are self-contained: they embed the table, the expected
counts and the table digest, and loading one recomputes the digest.
"""
from rest_framework import serializers

from .discrete_models import DiscretePrior, EfronPrior
from .exceptions import DataError, SrsBayesError
from .gamma_mixture import GammaMixturePrior
from .results import MODELS, FitResult
from .simulation import SimulationConfig
from .tables import EXPECTED_METHODS, ContingencyTable, ExpectedCounts

PRIOR_TYPES = {
    GammaMixturePrior.kind: GammaMixturePrior,
    DiscretePrior.kind: DiscretePrior,
    EfronPrior.kind: EfronPrior,
}


class TablePayloadSerializer(serializers.Serializer):
    """The table payload {ae_names, drug_names, counts}."""
    ae_names = serializers.ListField(child=serializers.CharField(), min_length=2)
    drug_names = serializers.ListField(child=serializers.CharField(), min_length=2)
    counts = serializers.ListField(
        child=serializers.ListField(child=serializers.IntegerField(min_value=0)), min_length=2,
    )

    def validate(self, attrs):
        try:
            attrs['table'] = ContingencyTable.from_dict(attrs)
        except SrsBayesError as exc:
            raise serializers.ValidationError(str(exc))
        return attrs


class ExpectedCountsSerializer(serializers.Serializer):
    method = serializers.ChoiceField(choices=EXPECTED_METHODS)
    values = serializers.ListField(child=serializers.ListField(child=serializers.FloatField()))


class PriorSerializer(serializers.Serializer):
    """
    A prior of any kind. Only the fields of the given kind are required; the
    prior class itself checks the values.
    """
    kind = serializers.ChoiceField(choices=list(PRIOR_TYPES))
    weights = serializers.ListField(child=serializers.FloatField(), required=False)
    shapes = serializers.ListField(child=serializers.FloatField(), required=False)
    scales = serializers.ListField(child=serializers.FloatField(), required=False)
    support = serializers.ListField(child=serializers.FloatField(), required=False)
    masses = serializers.ListField(child=serializers.FloatField(), required=False)
    basis = serializers.ListField(child=serializers.ListField(child=serializers.FloatField()), required=False)
    coefficients = serializers.ListField(child=serializers.FloatField(), required=False)
    c0 = serializers.FloatField(required=False, min_value=0)

    def validate(self, attrs):
        try:
            attrs['prior'] = PRIOR_TYPES[attrs['kind']].from_dict(attrs)
        except KeyError as exc:
            raise serializers.ValidationError(f"a '{attrs['kind']}' prior needs the field {exc}")
        except SrsBayesError as exc:
            raise serializers.ValidationError(str(exc))
        return attrs


class FitSerializer(serializers.Serializer):
    """
    A fit file: the FitResult, its table, its expected counts and the table digest.

    `save()` returns the tuple (FitResult, ContingencyTable, ExpectedCounts).
    """
    model = serializers.ChoiceField(choices=MODELS)
    prior = PriorSerializer()
    log_marginal_likelihood = serializers.FloatField()
    objective_trace = serializers.ListField(child=serializers.FloatField())
    converged = serializers.BooleanField()
    iterations = serializers.IntegerField(min_value=0)
    seed = serializers.IntegerField(allow_null=True, required=False)
    alpha = serializers.FloatField(allow_null=True, required=False)
    k_trace = serializers.ListField(child=serializers.IntegerField(), required=False)
    diagnostics = serializers.DictField(required=False)
    AIC = serializers.FloatField(allow_null=True, required=False)
    BIC = serializers.FloatField(allow_null=True, required=False)
    table = TablePayloadSerializer()
    expected = ExpectedCountsSerializer()
    table_digest = serializers.CharField()

    def validate(self, attrs):
        table = attrs['table']['table']
        if table.digest() != attrs['table_digest']:
            raise DataError("the embedded table does not match its digest; the fit file was modified")
        return attrs

    def create(self, validated_data):
        table = validated_data['table']['table']
        try:
            expected = ExpectedCounts.from_dict(validated_data['expected'])
        except SrsBayesError as exc:
            raise DataError(f"invalid expected counts in fit file: {exc}")
        if expected.values.shape != table.shape:
            raise DataError(f"expected counts {expected.values.shape} do not match the table {table.shape}")
        fit = FitResult(
            model=validated_data['model'],
            prior=validated_data['prior']['prior'],
            log_marginal_likelihood=validated_data['log_marginal_likelihood'],
            objective_trace=validated_data['objective_trace'],
            converged=validated_data['converged'],
            iterations=validated_data['iterations'],
            seed=validated_data.get('seed'),
            alpha=validated_data.get('alpha'),
            k_trace=validated_data.get('k_trace', []),
            diagnostics=validated_data.get('diagnostics', {}),
        )
        return fit, table, expected


def fit_payload(fit, table, E, criteria=None):
    """The JSON-ready fit file contents; `criteria` may carry AIC and BIC."""
    criteria = criteria or {}
    return {
        'model': fit.model,
        'prior': fit.prior.to_dict(),
        'log_marginal_likelihood': fit.log_marginal_likelihood,
        'objective_trace': list(fit.objective_trace),
        'converged': fit.converged,
        'iterations': fit.iterations,
        'seed': fit.seed,
        'alpha': fit.alpha,
        'k_trace': list(fit.k_trace),
        'diagnostics': dict(fit.diagnostics),
        'AIC': criteria.get('AIC'),
        'BIC': criteria.get('BIC'),
        'table': table.to_dict(),
        'expected': E.to_dict(),
        'table_digest': table.digest(),
    }


class TuneReportSerializer(serializers.Serializer):
    """Serializes a TuneReport; rows keep grid order."""
    model = serializers.CharField()
    criterion = serializers.CharField(required=False)
    rows = serializers.ListField(child=serializers.DictField())
    selected_by_AIC = serializers.IntegerField(allow_null=True)
    selected_by_BIC = serializers.IntegerField(allow_null=True)


class HeatmapCellSerializer(serializers.Serializer):
    ae = serializers.CharField()
    drug = serializers.CharField()
    N = serializers.IntegerField(min_value=0)
    E = serializers.FloatField(min_value=0)
    prob_signal = serializers.FloatField(min_value=0, max_value=1)


class EyeplotCellSerializer(serializers.Serializer):
    ae = serializers.CharField()
    drug = serializers.CharField()
    N = serializers.IntegerField(min_value=0)
    E = serializers.FloatField(min_value=0)
    median = serializers.FloatField(min_value=0)
    lo = serializers.FloatField(min_value=0)
    hi = serializers.FloatField(min_value=0)


class PlotDataSerializer(serializers.Serializer):
    """PlotData for either plot type; cells are checked against the type's cell fields exactly."""
    type = serializers.ChoiceField(choices=['heatmap', 'eyeplot'])
    model = serializers.ChoiceField(choices=MODELS)
    ae_order = serializers.ListField(child=serializers.CharField())
    drug_order = serializers.ListField(child=serializers.CharField())
    cells = serializers.ListField(child=serializers.DictField())
    log_scale = serializers.BooleanField(required=False)
    n_threshold = serializers.IntegerField(required=False, min_value=0)
    level = serializers.FloatField(required=False)
    text_shift = serializers.FloatField(required=False, allow_null=True)
    text_size = serializers.FloatField(required=False, allow_null=True)
    x_lim_scalar = serializers.FloatField(required=False, allow_null=True)

    def validate(self, attrs):
        cell_serializer = HeatmapCellSerializer if attrs['type'] == 'heatmap' else EyeplotCellSerializer
        allowed = set(cell_serializer().fields)
        for index, cell in enumerate(attrs['cells']):
            extra = set(cell) - allowed
            if extra:
                raise serializers.ValidationError(f"cell {index} has unexpected field(s) {sorted(extra)}")
            check = cell_serializer(data=cell)
            if not check.is_valid():
                raise serializers.ValidationError({f"cells[{index}]": check.errors})
        if attrs['type'] == 'eyeplot' and 'n_threshold' not in attrs:
            raise serializers.ValidationError("an eyeplot needs n_threshold")
        return attrs


class SimulationConfigSerializer(serializers.Serializer):
    """
    A simulation config file. Omitted fields take the SimulationConfig defaults.

    `save()` returns a SimulationConfig.
    """
    reference = serializers.CharField(required=False, allow_null=True)
    signal_cells = serializers.ListField(
        child=serializers.ListField(child=serializers.IntegerField(min_value=0), min_length=2, max_length=2),
        required=False, min_length=1,
    )
    lambda_grid = serializers.ListField(child=serializers.FloatField(), required=False, min_length=1)
    zi_grid = serializers.ListField(
        child=serializers.FloatField(min_value=0, max_value=0.999999), required=False, min_length=1,
    )
    n_sim = serializers.IntegerField(min_value=1, required=False)
    seed = serializers.IntegerField(required=False)
    policies = serializers.ListField(child=serializers.CharField(), required=False, min_length=1)
    alpha_grid = serializers.ListField(
        child=serializers.FloatField(min_value=0, max_value=1), required=False, min_length=1,
    )
    n_posterior_draws = serializers.IntegerField(min_value=1, required=False)
    metrics_p = serializers.ListField(child=serializers.ChoiceField(choices=[1, 2]), required=False, min_length=1)
    expected_method = serializers.ChoiceField(choices=EXPECTED_METHODS, required=False)

    def validate_lambda_grid(self, value):
        if any(strength <= 1 for strength in value):
            raise serializers.ValidationError("every signal strength must exceed 1")
        return value

    def create(self, validated_data):
        return SimulationConfig(**validated_data)
