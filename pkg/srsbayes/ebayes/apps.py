"""
App configuration for the 'ebayes' Django app.

The app holds the empirical Bayes library (tables, models, posterior
inference, selection, simulation) and the management commands built on it.
"""
from django.apps import AppConfig


class EbayesConfig(AppConfig):
    """
    Configuration class for the 'ebayes' app.
    """
    name = "ebayes"
    verbose_name = "Empirical Bayes signal detection"
