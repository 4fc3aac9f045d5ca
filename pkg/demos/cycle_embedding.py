"""The solar-cycle phase feature: a single cosine scalar that tells the model
where a timestamp sits within the ~11-year activity cycle.
"""

from datetime import datetime, timedelta, timezone

from flarecast import cycle_phase
from flarecast.cycle import DEFAULT_BASE_TIME, DEFAULT_PERIOD_HOURS

print(f"anchor (cycle minimum): {DEFAULT_BASE_TIME:%Y-%m-%d}")
print(f"period: {DEFAULT_PERIOD_HOURS:,.0f} hours = {DEFAULT_PERIOD_HOURS / (24 * 365.25):.2f} years\n")

print("phase at the anchor:       ", cycle_phase(DEFAULT_BASE_TIME))
print("phase half a period later: ", cycle_phase(DEFAULT_BASE_TIME + timedelta(hours=DEFAULT_PERIOD_HOURS / 2)))
print("phase a quarter period in:  {:.2e}".format(
    cycle_phase(DEFAULT_BASE_TIME + timedelta(hours=DEFAULT_PERIOD_HOURS / 4))
))

# A text chart of the embedding over 22 years: two full cycles, peaking near
# the 2014 and 2025 activity maxima.
print("\nyear  phase")
for year in range(2009, 2031):
    t = datetime(year, 1, 1, tzinfo=timezone.utc)
    phase = cycle_phase(t)
    bar = "#" * int(round(24 * (phase + 1) / 2))
    print(f"{year}  {phase:+.3f} |{bar}")
