#include "prefopt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "prefopt/errors.hpp"

namespace prefopt {

namespace {

std::vector<std::string> whitespace_tokens(const std::string& text) {
  std::vector<std::string> tokens;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) tokens.push_back(tok);
  return tokens;
}

// Sorted-copy quantile with linear interpolation between order statistics.
double quantile(std::vector<double> sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const size_t lo = static_cast<size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (sorted[lo + 1] - sorted[lo]) * frac;
}

}  // namespace

double reward_accuracy(const TinyLMParams& params, std::span<const PreparedPair> pairs) {
  if (pairs.empty()) throw std::invalid_argument("reward_accuracy requires pairs");
  size_t correct = 0;
  for (const PreparedPair& p : pairs) {
    const double w =
        sequence_log_likelihood(params, p.tokens.context_tokens, p.tokens.resp_w_tokens).logp;
    const double l =
        sequence_log_likelihood(params, p.tokens.context_tokens, p.tokens.resp_l_tokens).logp;
    if (w > l) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

std::map<std::string, std::vector<double>> delta_r_distribution(
    const TinyLMParams& params, const TinyLMParams* ref_params,
    std::span<const PreparedPair> pairs, const ObjectiveConfig& cfg) {
  std::map<std::string, std::vector<double>> out;
  for (const PreparedPair& p : pairs) {
    const PairScores s = pair_scores(params, ref_params, p.tokens, cfg);
    out[p.pair.direction].push_back(reward_difference(s, cfg));
  }
  return out;
}

double silverman_bandwidth(std::span<const double> samples) {
  if (samples.size() < 2) throw std::invalid_argument("need at least 2 samples");
  const double n = static_cast<double>(samples.size());
  double mean = 0.0;
  for (double x : samples) mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : samples) ss += (x - mean) * (x - mean);
  const double sigma = std::sqrt(ss / (n - 1.0));

  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const double iqr = quantile(sorted, 0.75) - quantile(sorted, 0.25);

  const double spread = std::min(sigma, iqr / 1.34);
  return std::max(0.9 * spread * std::pow(n, -0.2), 1e-6);
}

double kde_weighted_mean(std::span<const double> samples, std::optional<double> bandwidth) {
  if (samples.size() < 2) throw std::invalid_argument("need at least 2 samples");
  if (bandwidth && !(*bandwidth > 0.0))
    throw std::invalid_argument("bandwidth must be positive");
  const double h = bandwidth ? *bandwidth : silverman_bandwidth(samples);
  (void)h;  // each kernel integrates to mean x_i for any h
  const double w = 1.0 / static_cast<double>(samples.size());
  double mixture_mean = 0.0;
  for (double x : samples) mixture_mean += w * x;
  return mixture_mean;
}

double bleu(const std::string& candidate, const std::string& reference) {
  const std::vector<std::string> ref = whitespace_tokens(reference);
  if (ref.empty()) throw std::invalid_argument("reference must be nonempty");
  const std::vector<std::string> cand = whitespace_tokens(candidate);
  if (cand.empty()) return 0.0;

  double log_precision_sum = 0.0;
  for (size_t order = 1; order <= 4; ++order) {
    std::unordered_map<std::string, long> ref_counts;
    if (ref.size() >= order) {
      for (size_t i = 0; i + order <= ref.size(); ++i) {
        std::string key;
        for (size_t k = 0; k < order; ++k) {
          key += ref[i + k];
          key.push_back('\x1f');
        }
        ++ref_counts[key];
      }
    }
    long total = cand.size() >= order ? static_cast<long>(cand.size() - order + 1) : 0;
    long matched = 0;
    std::unordered_map<std::string, long> cand_counts;
    for (size_t i = 0; i + order <= cand.size(); ++i) {
      std::string key;
      for (size_t k = 0; k < order; ++k) {
        key += cand[i + k];
        key.push_back('\x1f');
      }
      ++cand_counts[key];
    }
    for (const auto& [key, count] : cand_counts) {
      auto it = ref_counts.find(key);
      if (it != ref_counts.end()) matched += std::min(count, it->second);
    }
    const double p = matched > 0
                         ? static_cast<double>(matched) / static_cast<double>(total)
                         : static_cast<double>(matched + 1) / static_cast<double>(total + 1);
    log_precision_sum += std::log(p);
  }
  const double geo_mean = std::exp(log_precision_sum / 4.0);
  const double bp = cand.size() < ref.size()
                        ? std::exp(1.0 - static_cast<double>(ref.size()) /
                                             static_cast<double>(cand.size()))
                        : 1.0;
  return bp * geo_mean;
}

double pearson_r(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("series lengths differ");
  if (xs.size() < 2) throw std::invalid_argument("need at least 2 points");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0)
    throw std::domain_error("correlation undefined for a constant series");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<HistogramBin> histogram(std::span<const double> samples, int bins) {
  if (bins < 1) throw std::invalid_argument("bins must be >= 1");
  if (samples.empty()) throw std::invalid_argument("histogram requires samples");
  double lo = samples[0], hi = samples[0];
  for (double x : samples) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double width = (hi - lo) / bins;
  std::vector<HistogramBin> out(static_cast<size_t>(bins));
  for (int b = 0; b < bins; ++b) {
    out[b].left = lo + b * width;
    out[b].right = lo + (b + 1) * width;
  }
  for (double x : samples) {
    int b = static_cast<int>((x - lo) / width);
    b = std::clamp(b, 0, bins - 1);  // top edge falls into the last bin
    ++out[b].count;
  }
  return out;
}

namespace {

struct DirectionAccumulator {
  std::vector<double> delta_r;
  std::vector<double> bleu_scores;
  int correct = 0;
  int n = 0;
};

EvalReport build_report(const TinyLMParams& params, const TinyLMParams* ref_params,
                        std::span<const PreparedPair> pairs, const ObjectiveConfig& cfg,
                        const TinyLMParams* baseline /* model A when comparing */) {
  if (pairs.empty()) throw std::invalid_argument("evaluation requires pairs");
  std::map<std::string, DirectionAccumulator> acc;
  std::map<std::string, std::vector<double>> baseline_delta_r;
  size_t correct_total = 0;
  double dr_sum = 0.0;
  size_t dr_positive = 0;
  for (const PreparedPair& p : pairs) {
    const PairScores s = pair_scores(params, ref_params, p.tokens, cfg);
    DirectionAccumulator& a = acc[p.pair.direction];
    const double dr = reward_difference(s, cfg);
    a.delta_r.push_back(dr);
    a.bleu_scores.push_back(bleu(p.pair.dispreferred, p.pair.preferred));
    if (s.logp_w > s.logp_l) {
      ++a.correct;
      ++correct_total;
    }
    ++a.n;
    dr_sum += dr;
    if (dr > 0.0) ++dr_positive;
    if (baseline) {
      const PairScores sb = pair_scores(*baseline, ref_params, p.tokens, cfg);
      baseline_delta_r[p.pair.direction].push_back(reward_difference(sb, cfg));
    }
  }

  EvalReport report;
  std::vector<double> bleu_by_dir, shift_by_dir;
  for (auto& [direction, a] : acc) {
    LanguageStats stats;
    stats.n_pairs = a.n;
    stats.reward_accuracy = static_cast<double>(a.correct) / a.n;
    stats.delta_r_samples = a.delta_r;
    if (a.delta_r.size() >= 2) {
      stats.kde_bandwidth = silverman_bandwidth(a.delta_r);
      stats.kde_weighted_mean = kde_weighted_mean(a.delta_r, stats.kde_bandwidth);
    } else {
      stats.kde_bandwidth = 1e-6;
      stats.kde_weighted_mean = a.delta_r[0];
    }
    double bleu_sum = 0.0;
    for (double b : a.bleu_scores) bleu_sum += b;
    stats.mean_bleu = bleu_sum / a.n;
    if (baseline) {
      const auto& base_dr = baseline_delta_r[direction];
      const double base_mean = base_dr.size() >= 2 ? kde_weighted_mean(base_dr) : base_dr[0];
      report.reward_shift_per_language[direction] = stats.kde_weighted_mean - base_mean;
      bleu_by_dir.push_back(stats.mean_bleu);
      shift_by_dir.push_back(report.reward_shift_per_language[direction]);
    }
    report.per_language.emplace(direction, std::move(stats));
  }

  report.overall.reward_accuracy =
      static_cast<double>(correct_total) / static_cast<double>(pairs.size());
  report.overall.mean_delta_r = dr_sum / static_cast<double>(pairs.size());
  report.overall.fraction_delta_r_positive =
      static_cast<double>(dr_positive) / static_cast<double>(pairs.size());

  if (baseline) {
    if (bleu_by_dir.size() < 2) {
      report.correlation_warning = "correlation omitted: fewer than 2 directions";
    } else {
      try {
        report.correlation_bleu_vs_shift = pearson_r(bleu_by_dir, shift_by_dir);
      } catch (const std::domain_error&) {
        report.correlation_warning = "correlation omitted: constant series";
      }
    }
  }
  return report;
}

}  // namespace

EvalReport evaluate_model(const TinyLMParams& params, const TinyLMParams* ref_params,
                          std::span<const PreparedPair> pairs, const ObjectiveConfig& cfg) {
  return build_report(params, ref_params, pairs, cfg, nullptr);
}

EvalReport compare_models(const TinyLMParams& model_a, const TinyLMParams& model_b,
                          std::span<const PreparedPair> pairs, const ObjectiveConfig& cfg) {
  const TinyLMConfig& a = model_a.config;
  const TinyLMConfig& b = model_b.config;
  const bool same_arch = a.vocab_size == b.vocab_size && a.d_model == b.d_model &&
                         a.n_layers == b.n_layers && a.n_heads == b.n_heads &&
                         a.d_ff == b.d_ff && a.max_context == b.max_context;
  if (!same_arch) throw ConfigError("compared models must share the same architecture");
  return build_report(model_b, nullptr, pairs, cfg, &model_a);
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  for (const auto& [direction, stats] : per_language) {
    j["per_language"][direction] = {
        {"reward_accuracy", stats.reward_accuracy},
        {"delta_r_samples", stats.delta_r_samples},
        {"kde_weighted_mean", stats.kde_weighted_mean},
        {"kde_bandwidth", stats.kde_bandwidth},
        {"mean_bleu", stats.mean_bleu},
        {"n_pairs", stats.n_pairs},
    };
  }
  j["overall"] = {{"reward_accuracy", overall.reward_accuracy},
                  {"mean_delta_r", overall.mean_delta_r},
                  {"fraction_delta_r_positive", overall.fraction_delta_r_positive}};
  if (correlation_bleu_vs_shift) j["correlation_bleu_vs_shift"] = *correlation_bleu_vs_shift;
  if (!correlation_warning.empty()) j["correlation_warning"] = correlation_warning;
  if (!reward_shift_per_language.empty()) {
    for (const auto& [direction, shift] : reward_shift_per_language)
      j["reward_shift_per_language"][direction] = shift;
  }
  return j.dump(2) + "\n";
}

SweepResult alpha_sweep(std::vector<double> alphas, const TinyLMConfig& model_cfg,
                        std::span<const PreparedPair> train_pairs,
                        std::span<const PreparedPair> val_pairs, const TrainConfig& tcfg,
                        const SweepRowCallback& on_row) {
  if (alphas.empty()) throw std::invalid_argument("alpha_sweep requires at least one alpha");
  std::sort(alphas.begin(), alphas.end());

  std::vector<TokenizedPair> train_tokens;
  train_tokens.reserve(train_pairs.size());
  for (const PreparedPair& p : train_pairs) train_tokens.push_back(p.tokens);

  SweepResult result;
  for (double alpha : alphas) {
    TrainConfig run_cfg = tcfg;
    run_cfg.objective.kind = ObjectiveKind::CAPO;
    run_cfg.objective.alpha = alpha;
    try {
      TrainResult tr = train(model_cfg, std::nullopt, train_tokens, run_cfg);
      std::vector<PairScores> scores;
      scores.reserve(train_pairs.size());
      for (const PreparedPair& p : train_pairs)
        scores.push_back(pair_scores(tr.params, nullptr, p.tokens, run_cfg.objective));
      const double mean_loss = batch_loss(scores, run_cfg.objective).first;
      SweepRow row;
      row.alpha = alpha;
      row.final_loss = mean_loss;
      row.val_reward_accuracy = reward_accuracy(tr.params, val_pairs);
      result.rows.push_back(row);
      if (on_row) on_row(row, tr);
    } catch (const std::exception& e) {
      result.errors.push_back({alpha, e.what()});
    }
  }
  return result;
}

}  // namespace prefopt
