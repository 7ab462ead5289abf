//! Matplotlib scripts that read the emitted tables.

pub fn solve() -> String {
    r#"import sys
import pandas as pd
import matplotlib.pyplot as plt

d = pd.read_csv("trajectory.csv")
g = pd.read_csv("diagnostics.csv")
fig, ax = plt.subplots(3, 1, figsize=(8, 9))
for c in [c for c in d.columns if c.startswith("x")]:
    ax[0].plot(d["t"], d[c], label=c)
ax[0].set_ylabel("state")
ax[0].legend(ncol=4, fontsize="small")
for c in [c for c in d.columns if c.startswith("beta_")]:
    ax[1].plot(d["t"], d[c], label=c)
ax[1].set_ylabel("backoff")
ax[1].set_xlabel("t [s]")
if any(c.startswith("beta_") for c in d.columns):
    ax[1].legend(fontsize="small")
ax[2].semilogy(g["iteration"], g["kkt"], label="KKT residual")
ax[2].plot(g["iteration"], g["alpha_primal"], label="step size")
ax[2].set_xlabel("iteration")
ax[2].legend()
fig.tight_layout()
fig.savefig(sys.argv[1] if len(sys.argv) > 1 else "solve.png")
"#
    .into()
}

pub fn covcompare() -> String {
    r#"import sys
import pandas as pd
import matplotlib.pyplot as plt

s = pd.read_csv("covcompare_summary.csv")
s = s[~s["status"].str.startswith("failed")]
motions = list(dict.fromkeys(s["motion"]))
fig, axes = plt.subplots(1, max(len(motions), 1), figsize=(4 * max(len(motions), 1), 4), squeeze=False)
for ax, m in zip(axes[0], motions):
    for method, marker in [("a", "o"), ("b", "s"), ("c", "^")]:
        r = s[(s["motion"] == m) & (s["method"] == method) & s["matched_to"].isna()]
        ax.loglog(r["parameter_value"], r["trace"], marker=marker, label=f"({method}) vs {r['parameter'].iloc[0] if len(r) else ''}")
    ax.set_title(m)
    ax.set_xlabel("C_g or W_j")
    ax.set_ylabel("terminal trace")
    ax.legend(fontsize="small")
fig.tight_layout()
fig.savefig(sys.argv[1] if len(sys.argv) > 1 else "covcompare.png")
"#
    .into()
}

pub fn montecarlo() -> String {
    r#"import sys
import pandas as pd
import matplotlib.pyplot as plt

s = pd.read_csv("montecarlo.csv")
fig, ax = plt.subplots(1, 2, figsize=(9, 4))
ax[0].bar(s["variant"], s["success_rate"])
ax[0].set_ylim(0, 1)
ax[0].set_ylabel("success rate")
ax[1].bar(s["variant"], s["max_node_violation_frequency"])
ax[1].axhline(1 - s["probability"].iloc[0], color="k", ls="--")
ax[1].set_ylabel("max per-node violation frequency")
fig.tight_layout()
fig.savefig(sys.argv[1] if len(sys.argv) > 1 else "montecarlo.png")
"#
    .into()
}

pub fn bench() -> String {
    r#"import sys
import pandas as pd
import matplotlib.pyplot as plt

b = pd.read_csv("bench.csv")
fig, ax = plt.subplots(figsize=(6, 4))
ax.hist(1e3 * b["nominal_seconds"], bins=20, alpha=0.6, label="nominal")
ax.hist(1e3 * b["stochastic_seconds"], bins=20, alpha=0.6, label="stochastic")
ax.set_xlabel("time per iteration [ms]")
ax.legend()
fig.tight_layout()
fig.savefig(sys.argv[1] if len(sys.argv) > 1 else "bench.png")
"#
    .into()
}
