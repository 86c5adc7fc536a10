"""Inside the timing layer: sequences, backends, latency compensation.

Builds the standard Rabi sequence, compiles it for both pattern
generators, renders the channel timeline, and shows the two hardware
lessons: the small-buffer backend cannot hold long echoes, and the AOM
latency must be pre-compensated for the counter gate to see light.
"""

import numpy as np

from nvlab import pulses as pl

cal = pl.DelayCalibration.default()
ir = pl.realize(pl.sequence_rabi([38e-9]), 38e-9)

print("== timing diagram (500 MS/s backend) ==")
print(pl.timing_diagram(ir, pl.pulseblaster(), cal).render())

print("\n== same sequence on both backends ==")
for backend in (pl.discovery2(), pl.pulseblaster()):
    pattern = pl.compile_ir(ir, backend, cal)
    print(f"{backend.name}: {pattern.total_samples} samples at "
          f"{backend.sample_rate / 1e6:.0f} MS/s "
          f"({pattern.duration * 1e6:.2f} us)")

print("\n== AOM latency compensation ==")
pattern = pl.compile_ir(ir, pl.pulseblaster(), cal)
laser_cmd = pattern.edges(pl.LASER_GATE)[0][0] / pattern.sample_rate
gate = pattern.gates[pl.CTR_SIGNAL][0][0] / pattern.sample_rate
print(f"laser command fires {(gate - laser_cmd) * 1e9:.0f} ns before the "
      "gate so the light arrives exactly when counting starts")

print("\n== buffer limits ==")
long_echo = pl.sequence_hahn([40e-6], 19e-9, 38e-9)
try:
    pl.compile_ir(pl.realize(long_echo, 40e-6), pl.discovery2(), cal)
except pl.BufferOverflowError as err:
    print(f"discovery2: {err}")
pattern = pl.compile_ir(pl.realize(long_echo, 40e-6), pl.pulseblaster(),
                        cal)
print(f"pulseblaster: compiles into {pattern.total_samples} samples")

print("\n== serialized IR round trip ==")
blob = pl.realize(long_echo, 40e-6).to_dict()
back = pl.SequenceIR.from_dict(blob)
print("hash stable:", back.content_hash() ==
      pl.realize(long_echo, 40e-6).content_hash())
