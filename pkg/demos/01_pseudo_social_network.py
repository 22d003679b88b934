"""
Building a pseudo-social network from app usage
===============================================

Seven borrowers and three apps. One borrower uses all three apps, the
others use one each, so the projection links that borrower to everyone.
"""

from pseudoscore import Label, attach_labels, build_bipartite, egonet_features, project_to_unipartite
from pseudoscore.data import AppUsage

# weekly usage; anything at or above 1 use/week becomes an edge
usage = [AppUsage("hub", app, "tools", 4.0, 1.0) for app in ("chat", "maps", "wallet")]
for user, app in [("ana", "chat"), ("ben", "chat"), ("cy", "maps"),
                  ("dee", "maps"), ("eli", "wallet"), ("fay", "wallet")]:
    usage.append(AppUsage(user, app, "tools", 2.0, 3.0))

nb = build_bipartite(usage, frequency_threshold=1.0)
print("bipartite:", len(nb.users), "users,", len(nb.apps), "apps,", len(nb.edges), "edges")

# users sharing an app are linked; the weight counts shared apps
nu = project_to_unipartite(nb, weight_rule="shared_count")
for u, v, w in nu.edges():
    print(f"  {u:>4} -- {v:<4} weight {w:g}")

# one known defaulter, five good payers, the hub itself is unlabeled
labels = {u: Label.GOOD for u in ("ana", "ben", "cy", "eli", "fay")}
labels["dee"] = Label.BAD
g = attach_labels(nu, labels)

ego = egonet_features(g, "hub")
print("hub egonet:", ego)
