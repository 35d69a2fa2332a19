import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'udss.settings')
django.setup()
