import os

LONG_TESTS = os.environ.get('HAMR_LONG_TESTS') == '1'
LONG_REASON = 'set HAMR_LONG_TESTS=1 for the full-size run'
