"""Gauge-equivariant intrinsic neural operators on the flat torus."""
