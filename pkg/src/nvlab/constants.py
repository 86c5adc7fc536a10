"""Physical constants and default rates for the NV center model.

All frequencies are plain cycles/second (Hz), fields in tesla, times in
seconds.  Everything here can be overridden through the apparatus config;
these are just the shipped defaults.
"""

# Ground-state zero-field splitting between m_s=0 and m_s=+/-1 (Hz).
ZERO_FIELD_SPLITTING = 2.870e9

# Electron gyromagnetic ratio (Hz/T).
GAMMA_E = 28.024e9

# 13C nuclear gyromagnetic ratio (Hz/T).
GAMMA_C13 = 10.705e6

# Nearest-neighbor 13C axial hyperfine coupling (Hz).
A_PAR_C13 = 14.0e6

# 15N axial hyperfine coupling used by the implanted-sample preset (Hz).
# Chosen so that a Ramsey run with a 5.67 MHz carrier detuning beats at
# 7.12 and 4.22 MHz (the two tones sit at detuning +/- A/2).
A_PAR_N15 = 2.90e6

# Excited-triplet radiative lifetime (s).  The metastable singlet lives
# about 12x longer, which fixes this at 178 ns / 12.
RADIATIVE_LIFETIME = 14.8e-9

# Metastable singlet lifetime at room temperature (s).
SINGLET_LIFETIME = 178e-9

# Ground-state spin relaxation time (s).
T1_DEFAULT = 6.0e-3

GAUSS = 1e-4  # tesla per gauss
