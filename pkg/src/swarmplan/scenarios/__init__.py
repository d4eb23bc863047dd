"""Bundled scenario files, resolvable by bare name through load_scenario."""
