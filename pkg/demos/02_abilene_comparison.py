"""
Full mesh, route reflectors and backup visibility on Abilene
=============================================================

LA's peer withdraws 100 prefixes; KC holds the backup route. The script
compares median violation times across iBGP designs and backup visibility,
using a reduced number of prefixes and samples so it finishes in seconds.
"""

from ibgpconv.experiment import Experiment, total_propagation_delays
from ibgpconv.scenario import load_scenario


def median_ms(name, router=None):
    sc = load_scenario(name).with_overrides(prefixes={"count": 100}, samples=3)
    summaries = Experiment(sc).run()["summaries"]
    s = summaries["per_router"][router] if router else summaries["pooled"]
    return s["q50"] / 1000


#
# Route reflection adds indirection: every extra reflector hop delays the
# withdraw and the backup's update.
#
for name in ("abilene-withdraw", "abilene-withdraw-rr1", "abilene-withdraw-rr2", "abilene-withdraw-rr3"):
    print(f"{name:<32} median {median_ms(name):7.1f} ms")

#
# A visible backup lets routers switch without waiting for KC's update.
#
for name in ("abilene-withdraw-visible", "abilene-withdraw-visible-rr1"):
    print(f"{name:<32} median {median_ms(name):7.1f} ms")

#
# For update-worse the effect flips at Houston: with the backup visible,
# Houston moves to KC while LA still sends traffic back toward it.
#
for name in ("abilene-update-worse", "abilene-update-worse-visible"):
    print(f"{name:<32} Houston median {median_ms(name, 'HS'):7.1f} ms")

#
# Total propagation delay per router: router to LA, LA to KC, KC back.
#
for router, us in total_propagation_delays(load_scenario("abilene-withdraw")).items():
    print(f"{router}: {us / 1000:.2f} ms")
