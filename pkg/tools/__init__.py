# Command implementations for app.py (run, sweeps, verify)
