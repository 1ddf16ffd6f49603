"""Configure Django for pytest the same way manage.py does."""
import os

import django
from dotenv import load_dotenv

load_dotenv()
os.environ.setdefault("DJANGO_SETTINGS_MODULE", "srsbayes.settings")
django.setup()
