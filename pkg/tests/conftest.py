from hypothesis import settings

# the simulator is deterministic end to end; keep the property tests
# deterministic as well so repeated runs agree bit for bit
settings.register_profile("deterministic", derandomize=True)
settings.load_profile("deterministic")
