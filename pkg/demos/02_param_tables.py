"""
Parameter accounting across the model family
============================================

Every published table row is a named preset. Printing a table shows our
computed totals next to the published reference values; the deltas stay
inside a fraction of a percent. The headline arithmetic (how much the
partial variant saves) falls out of three totals.
"""

from freqdyn.model import build_model, count_model_params, count_parameters
from freqdyn.presets import format_table, get_preset

for table_id in ("I", "II", "IV"):
    print(format_table(table_id))
    print()

# The three totals behind the headline claims.
crnn = count_model_params(get_preset("crnn").config)
fdy = count_model_params(get_preset("fdy").config)
pfd = count_model_params(get_preset("pfd_1_8").config)
print(f"full dynamic adds   {(fdy - crnn) / 1e6:.3f}M over the baseline")
print(f"1/8 partial adds    {(pfd - crnn) / 1e6:.3f}M "
      f"({100 * (pfd - crnn) / crnn:.1f}% of the baseline)")
print(f"partial vs full     {100 * (fdy - pfd) / fdy:.1f}% fewer parameters")
print()

# Where the parameters live: itemized per layer and per category for the
# 1/8 partial model. The dynamic branches are cheap; the static remainder
# and the recurrent block carry most of the weight.
report = count_parameters(build_model(get_preset("pfd_1_8").config, seed=0))
print(report.format_text())
print("by category:", {k: v for k, v in sorted(report.by_category.items())})
