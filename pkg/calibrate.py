"""Throwaway calibration scan for the end-to-end detection scenarios."""
import sys
import numpy as np
from trainwatch.toytrainer import ToyModel, TrainConfig, TrainingDiverged, train, generate_synthetic
from trainwatch.injectors import apply_preprocessing, inject_label_noise, inject_class_imbalance
from trainwatch.symptoms import classify

LN_SET = {"GradientSkewness", "HigherLoss", "SlowConvergence"}
IMB_SET = {"SparseParameterUpdates", "VanishingGradients", "HigherLoss"}
PRE_SET = {"ExplodingGradients", "HighWeightVariance"}


def run_all(lr, batch, sep, seeds=range(10), verbose=False):
    def fit(ds, seed, run_id):
        model = ToyModel.initialize([2, 16, 2], seed)
        cfg = TrainConfig(epochs=20, batch_size=batch, learning_rate=lr, run_id=run_id)
        try:
            return train(model, ds, cfg)
        except TrainingDiverged as e:
            return e.partial

    clean_bad, ln_ok, imb_ok, pre_ok = [], [], [], []
    for seed in seeds:
        base = generate_synthetic("two_gaussians", 400, 2, seed, separation=sep)
        ds = apply_preprocessing(base, ["standardize"])
        clean = fit(ds, seed, f"clean-{seed}")
        cf = {f.symptom.value for f in classify(clean.trace)}
        if cf:
            clean_bad.append((seed, sorted(cf)))

        noisy = fit(inject_label_noise(ds, 0.4, seed=seed), seed, f"ln-{seed}")
        nf = {f.symptom.value for f in classify(noisy.trace, clean.trace)}
        ln_ok.append(bool(nf & LN_SET))
        if verbose:
            print("  ln", seed, sorted(nf))

        imb = fit(inject_class_imbalance(ds, 9, seed=seed), seed, f"imb-{seed}")
        imf = {f.symptom.value for f in classify(imb.trace, clean.trace)}
        imb_ok.append(bool(imf & IMB_SET))
        if verbose:
            print("  imb", seed, sorted(imf),
                  "minority_recall=%.2f" % min(v["recall"] for v in imb.per_class.values())
                  if imb.per_class else "diverged")

        raw = generate_synthetic("tabular_metrics", 400, 2, seed)
        pre = fit(raw, seed, f"pre-{seed}")
        pf = {f.symptom.value for f in classify(pre.trace)} if not pre.trace.is_empty else set()
        pre_ok.append(bool(pf & PRE_SET))
        if verbose:
            print("  pre", seed, sorted(pf), "diverged" if pre.diverged else "")

    print(f"lr={lr} batch={batch} sep={sep}: clean_bad={len(clean_bad)}{clean_bad} "
          f"ln={sum(ln_ok)}/10 imb={sum(imb_ok)}/10 pre={sum(pre_ok)}/10")


if __name__ == "__main__":
    if len(sys.argv) > 1:
        run_all(float(sys.argv[1]), int(sys.argv[2]), float(sys.argv[3]), verbose=True)
    else:
        for lr, batch, sep in [(0.1, 32, 4.0), (0.2, 32, 4.0), (0.1, 16, 4.0),
                               (0.2, 16, 4.0), (0.1, 32, 3.0), (0.2, 32, 3.0)]:
            run_all(lr, batch, sep)
