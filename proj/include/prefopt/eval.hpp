#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prefopt/data.hpp"
#include "prefopt/tinylm.hpp"
#include "prefopt/trainer.hpp"

namespace prefopt {

struct LanguageStats {
  double reward_accuracy = 0.0;
  std::vector<double> delta_r_samples;
  double kde_weighted_mean = 0.0;
  double kde_bandwidth = 0.0;
  double mean_bleu = 0.0;
  int n_pairs = 0;
};

struct EvalReport {
  std::map<std::string, LanguageStats> per_language;
  struct Overall {
    double reward_accuracy = 0.0;
    double mean_delta_r = 0.0;
    double fraction_delta_r_positive = 0.0;
  } overall;
  // Populated only when two models are compared and >= 2 non-constant
  // direction series exist; otherwise correlation_warning says why not.
  std::optional<double> correlation_bleu_vs_shift;
  std::string correlation_warning;
  std::map<std::string, double> reward_shift_per_language;  // comparison only

  std::string to_json() const;  // pretty-printed, deterministic
};

// Fraction of pairs whose raw preferred log-likelihood strictly exceeds the
// dispreferred one; ties count as incorrect. Reference-free by design.
double reward_accuracy(const TinyLMParams& params, std::span<const PreparedPair> pairs);

std::map<std::string, std::vector<double>> delta_r_distribution(
    const TinyLMParams& params, const TinyLMParams* ref_params,
    std::span<const PreparedPair> pairs, const ObjectiveConfig& cfg);

// Silverman's rule 0.9 * min(sigma, IQR/1.34) * n^(-1/5), floored at 1e-6.
double silverman_bandwidth(std::span<const double> samples);

// Mean of the equal-weight Gaussian kernel mixture over the samples. Each
// kernel is centered on its sample, so the mixture mean reduces to the
// sample mean regardless of bandwidth.
double kde_weighted_mean(std::span<const double> samples,
                         std::optional<double> bandwidth = std::nullopt);

// Sentence BLEU-4 over whitespace tokens with per-order add-1 smoothing
// when an order has zero matches, and the usual brevity penalty.
double bleu(const std::string& candidate, const std::string& reference);

double pearson_r(std::span<const double> xs, std::span<const double> ys);

struct HistogramBin {
  double left = 0.0;
  double right = 0.0;
  long count = 0;
};

std::vector<HistogramBin> histogram(std::span<const double> samples, int bins = 60);

EvalReport evaluate_model(const TinyLMParams& params, const TinyLMParams* ref_params,
                          std::span<const PreparedPair> pairs, const ObjectiveConfig& cfg);

// Per-direction reward shift (KDE-weighted mean of delta-r under B minus
// under A) correlated against the per-direction preferred/dispreferred
// BLEU. per_language stats describe model B.
EvalReport compare_models(const TinyLMParams& model_a, const TinyLMParams& model_b,
                          std::span<const PreparedPair> pairs, const ObjectiveConfig& cfg);

struct SweepRow {
  double alpha = 0.0;
  double final_loss = 0.0;  // mean loss over the train split at final params
  double val_reward_accuracy = 0.0;
};

struct SweepError {
  double alpha = 0.0;
  std::string message;
};

struct SweepResult {
  std::vector<SweepRow> rows;  // ascending alpha
  std::vector<SweepError> errors;
};

using SweepRowCallback = std::function<void(const SweepRow&, const TrainResult&)>;

// One full CAPO training run per alpha from the same initial seed; failed
// rows are recorded and the sweep continues. on_row, when given, sees each
// successful run as it completes.
SweepResult alpha_sweep(std::vector<double> alphas, const TinyLMConfig& model_cfg,
                        std::span<const PreparedPair> train_pairs,
                        std::span<const PreparedPair> val_pairs, const TrainConfig& tcfg,
                        const SweepRowCallback& on_row = {});

}  // namespace prefopt
