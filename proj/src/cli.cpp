#include "prefopt/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "prefopt/checkpoint.hpp"
#include "prefopt/data.hpp"
#include "prefopt/errors.hpp"
#include "prefopt/eval.hpp"
#include "prefopt/rng.hpp"
#include "prefopt/synthetic.hpp"
#include "prefopt/trainer.hpp"
#include "prefopt/version.hpp"

namespace prefopt {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Shortest exact decimal form; identical doubles always print identically.
std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_compact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

std::string hash_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path.string() + "' for hashing");
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();
  return to_hex(fnv1a64(bytes.data(), bytes.size()));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write '" + path.string() + "'");
  out << text;
}

void write_history_csv(const fs::path& path, const TrainHistory& history) {
  std::string csv = "step,lr,loss,mean_z,mean_delta_r\n";
  for (const StepRecord& r : history.steps) {
    csv += std::to_string(r.step) + "," + fmt17(r.lr) + "," + fmt17(r.loss) + "," +
           fmt17(r.mean_z) + "," + fmt17(r.mean_delta_r) + "\n";
  }
  write_text(path, csv);
}

void write_delta_r_csv(const fs::path& path, const std::vector<double>& samples) {
  std::string csv = "delta_r\n";
  for (double v : samples) csv += fmt17(v) + "\n";
  write_text(path, csv);
}

void write_histogram_csv(const fs::path& path, const std::vector<double>& samples, int bins) {
  std::string csv = "bin_left,bin_right,count\n";
  for (const HistogramBin& b : histogram(samples, bins))
    csv += fmt17(b.left) + "," + fmt17(b.right) + "," + std::to_string(b.count) + "\n";
  write_text(path, csv);
}

json dataset_manifest_json(const DatasetManifest& m) {
  json counts = json::object();
  for (const auto& [dir, n] : m.counts_per_direction) counts[dir] = n;
  return {{"split", m.split},
          {"counts_per_direction", counts},
          {"min_chars", m.min_chars},
          {"per_direction", m.per_direction},
          {"seed", m.seed}};
}

void write_manifest(const fs::path& out_dir, json manifest) {
  manifest["version"] = kVersion;
  write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
}

json model_options_json(const ModelOptions& m) {
  return {{"vocab_size", m.vocab_size}, {"d_model", m.d_model},   {"n_layers", m.n_layers},
          {"n_heads", m.n_heads},       {"d_ff", m.d_ff},         {"max_context", m.max_context},
          {"seed", m.seed}};
}

TinyLMConfig to_model_config(const ModelOptions& m) {
  TinyLMConfig cfg;
  cfg.vocab_size = m.vocab_size;
  cfg.d_model = m.d_model;
  cfg.n_layers = m.n_layers;
  cfg.n_heads = m.n_heads;
  cfg.d_ff = m.d_ff;
  cfg.max_context = m.max_context;
  cfg.seed = m.seed;
  return cfg;
}

bool same_architecture(const TinyLMConfig& a, const TinyLMConfig& b) {
  return a.vocab_size == b.vocab_size && a.d_model == b.d_model && a.n_layers == b.n_layers &&
         a.n_heads == b.n_heads && a.d_ff == b.d_ff && a.max_context == b.max_context;
}

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    fn();
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUserError;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUserError;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUserError;
  } catch (const LengthError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUserError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUserError;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUserError;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternalError;
  }
}

}  // namespace

std::string resolve_out_dir(const std::string& out_dir) {
  fs::path p(out_dir);
  if (p.is_absolute()) return p.string();
  const char* root = std::getenv("PREFOPT_OUTPUT_ROOT");
  if (root && *root) return (fs::path(root) / p).string();
  return p.string();
}

int cmd_prepare(const PrepareOptions& opts) {
  return guarded([&] {
    if (opts.synthetic == !opts.input.empty())
      throw ConfigError("pass exactly one of --input or --synthetic");
    if (opts.out_dir.empty()) throw ConfigError("--out is required");
    const fs::path out_dir = resolve_out_dir(opts.out_dir);
    fs::create_directories(out_dir);

    json manifest;
    manifest["command"] = "prepare";
    json config = {{"min_chars", opts.min_chars}, {"seed", opts.seed}};
    json outputs = json::object();
    json dataset = json::object();

    if (opts.synthetic) {
      const auto directions = default_synthetic_directions(opts.directions);
      const int n = opts.per_direction < 0 ? opts.pairs_per_direction : opts.per_direction;
      config["synthetic"] = true;
      config["directions"] = directions;
      config["pairs_per_direction"] = opts.pairs_per_direction;
      config["corruption_rates"] = opts.corruption_rates;
      config["per_direction"] = n;

      const char* splits[] = {"train", "validation", "evaluation"};
      for (int si = 0; si < 3; ++si) {
        SyntheticConfig scfg;
        scfg.directions = directions;
        scfg.pairs_per_direction = opts.pairs_per_direction;
        scfg.corruption_rates = opts.corruption_rates;
        scfg.seed = opts.seed + static_cast<uint64_t>(si);
        auto raw = generate_synthetic_pairs(scfg);
        auto filtered = filter_min_length(std::move(raw), opts.min_chars);
        auto [balanced, dmanifest] = balance_per_direction(filtered, n, scfg.seed, splits[si]);
        dmanifest.min_chars = opts.min_chars;
        const fs::path file = out_dir / (std::string(splits[si]) + ".jsonl");
        write_pairs(file, balanced);
        outputs[file.filename().string()] = hash_file(file);
        dataset[splits[si]] = dataset_manifest_json(dmanifest);
        std::cout << splits[si] << ": " << balanced.size() << " pairs -> " << file.string()
                  << "\n";
      }
    } else {
      const int n = opts.per_direction < 0 ? 100 : opts.per_direction;
      config["input"] = opts.input;
      config["per_direction"] = n;
      config["split"] = opts.split;
      manifest["input_hashes"][opts.input] = hash_file(opts.input);

      auto raw = load_pairs(opts.input);
      auto filtered = filter_min_length(std::move(raw), opts.min_chars);
      auto [balanced, dmanifest] = balance_per_direction(filtered, n, opts.seed, opts.split);
      dmanifest.min_chars = opts.min_chars;
      const fs::path file = out_dir / (opts.split + ".jsonl");
      write_pairs(file, balanced);
      outputs[file.filename().string()] = hash_file(file);
      dataset[opts.split] = dataset_manifest_json(dmanifest);
      std::cout << opts.split << ": " << balanced.size() << " pairs -> " << file.string()
                << "\n";
    }

    manifest["config"] = config;
    manifest["seeds"] = {{"seed", opts.seed}};
    manifest["outputs"] = outputs;
    manifest["dataset"] = dataset;
    write_manifest(out_dir, manifest);
  });
}

int cmd_train(const TrainOptions& opts) {
  return guarded([&] {
    if (opts.data_path.empty()) throw ConfigError("--data is required");
    if (opts.out_dir.empty()) throw ConfigError("--out is required");
    const fs::path out_dir = resolve_out_dir(opts.out_dir);
    fs::create_directories(out_dir);

    const TinyLMConfig model_cfg = to_model_config(opts.model);
    ObjectiveConfig obj;
    obj.kind = objective_kind_from_string(opts.objective);
    obj.beta = opts.beta;
    obj.alpha = opts.alpha;
    obj.gamma = opts.gamma;
    obj.lambda_nll = opts.lambda_nll;
    obj.epsilon = opts.epsilon;

    TrainConfig tcfg;
    tcfg.objective = obj;
    tcfg.epochs = opts.epochs;
    tcfg.batch_size = opts.batch_size;
    tcfg.base_lr = opts.base_lr;
    tcfg.adam_beta1 = opts.adam_beta1;
    tcfg.adam_beta2 = opts.adam_beta2;
    tcfg.adam_eps = opts.adam_eps;
    tcfg.shuffle_seed = opts.shuffle_seed;
    tcfg.clip_grad_norm = opts.clip_grad_norm;
    tcfg.validate();

    std::optional<TinyLMParams> ref;
    if (!opts.ref_checkpoint.empty()) {
      ref = load_checkpoint(opts.ref_checkpoint);
      if (!same_architecture(ref->config, model_cfg))
        throw ConfigError("reference checkpoint architecture does not match the model");
    } else if (opts.ref_init_from_policy) {
      ref = init_params(model_cfg);
    }
    const bool need_ref = obj.kind == ObjectiveKind::DPO || obj.kind == ObjectiveKind::DPONLL;
    if (need_ref && !ref)
      throw ConfigError("objective '" + opts.objective +
                        "' requires a reference policy; pass --ref-init-from-policy or "
                        "--ref-checkpoint");

    const auto pairs = load_pairs(opts.data_path);
    const auto prepared = prepare_pairs(pairs, default_language_names(), model_cfg.max_context);
    std::vector<TokenizedPair> tokens;
    tokens.reserve(prepared.size());
    for (const PreparedPair& p : prepared) tokens.push_back(p.tokens);

    TrainResult result = train(model_cfg, ref, tokens, tcfg);

    const fs::path ckpt = out_dir / "checkpoint.bin";
    save_checkpoint(ckpt, result.params);
    const fs::path hist = out_dir / "history.csv";
    write_history_csv(hist, result.history);
    json outputs = {{"checkpoint.bin", hash_file(ckpt)}, {"history.csv", hash_file(hist)}};
    if (ref) {
      const fs::path ref_path = out_dir / "reference.bin";
      save_checkpoint(ref_path, *ref);
      outputs["reference.bin"] = hash_file(ref_path);
    }

    json manifest;
    manifest["command"] = "train";
    manifest["config"] = {{"data", opts.data_path},
                          {"objective", opts.objective},
                          {"beta", opts.beta},
                          {"alpha", opts.alpha},
                          {"gamma", opts.gamma},
                          {"lambda_nll", opts.lambda_nll},
                          {"epsilon", opts.epsilon},
                          {"epochs", opts.epochs},
                          {"batch_size", opts.batch_size},
                          {"base_lr", opts.base_lr},
                          {"adam_beta1", opts.adam_beta1},
                          {"adam_beta2", opts.adam_beta2},
                          {"adam_eps", opts.adam_eps},
                          {"clip_grad_norm", opts.clip_grad_norm},
                          {"ref_init_from_policy", opts.ref_init_from_policy},
                          {"ref_checkpoint", opts.ref_checkpoint},
                          {"preset", opts.preset},
                          {"model", model_options_json(opts.model)}};
    manifest["seeds"] = {{"model_seed", opts.model.seed}, {"shuffle_seed", opts.shuffle_seed}};
    manifest["input_hashes"][opts.data_path] = hash_file(opts.data_path);
    manifest["outputs"] = outputs;
    manifest["steps"] = result.history.steps.size();
    manifest["final_loss"] = result.history.steps.back().loss;
    write_manifest(out_dir, manifest);

    std::cout << "trained " << result.history.steps.size() << " steps; final batch loss "
              << fmt_compact(result.history.steps.back().loss) << "\n";
  });
}

int cmd_eval(const EvalOptions& opts) {
  return guarded([&] {
    if (opts.checkpoints.empty() || opts.checkpoints.size() > 2)
      throw ConfigError("pass one checkpoint, or two to compare");
    if (opts.data_path.empty()) throw ConfigError("--data is required");
    if (opts.out_dir.empty()) throw ConfigError("--out is required");
    const fs::path out_dir = resolve_out_dir(opts.out_dir);
    fs::create_directories(out_dir);

    ObjectiveConfig obj;
    obj.kind = objective_kind_from_string(opts.objective);
    obj.beta = opts.beta;
    obj.gamma = opts.gamma;
    obj.epsilon = opts.epsilon;
    obj.validate();

    TinyLMParams model = load_checkpoint(opts.checkpoints[0]);
    const auto pairs = load_pairs(opts.data_path);
    const auto prepared =
        prepare_pairs(pairs, default_language_names(), model.config.max_context);

    std::optional<TinyLMParams> ref;
    if (!opts.ref_checkpoint.empty()) {
      ref = load_checkpoint(opts.ref_checkpoint);
      if (!same_architecture(ref->config, model.config))
        throw ConfigError("reference checkpoint architecture does not match the model");
    }
    const bool need_ref = obj.kind == ObjectiveKind::DPO || obj.kind == ObjectiveKind::DPONLL;
    if (need_ref && !ref && opts.checkpoints.size() == 1)
      throw ConfigError("objective '" + opts.objective +
                        "' needs --ref-checkpoint to compute reward differences");

    EvalReport report;
    json outputs = json::object();
    if (opts.checkpoints.size() == 1) {
      report = evaluate_model(model, ref ? &*ref : nullptr, prepared, obj);
    } else {
      TinyLMParams model_b = load_checkpoint(opts.checkpoints[1]);
      // Cross-model reward differences use the reference-free form.
      ObjectiveConfig cmp = obj;
      if (need_ref) cmp.kind = ObjectiveKind::CAPO;
      report = compare_models(model, model_b, prepared, cmp);
      const auto base_dr = delta_r_distribution(model, nullptr, prepared, cmp);
      for (const auto& [direction, samples] : base_dr) {
        const fs::path f = out_dir / ("delta_r_a_" + direction + ".csv");
        write_delta_r_csv(f, samples);
        outputs[f.filename().string()] = hash_file(f);
      }
    }

    const std::string prefix = opts.checkpoints.size() == 2 ? "delta_r_b_" : "delta_r_";
    std::vector<double> all_samples;
    for (const auto& [direction, stats] : report.per_language) {
      const fs::path f = out_dir / (prefix + direction + ".csv");
      write_delta_r_csv(f, stats.delta_r_samples);
      outputs[f.filename().string()] = hash_file(f);
      const fs::path h = out_dir / ("histogram_" + direction + ".csv");
      write_histogram_csv(h, stats.delta_r_samples, opts.bins);
      outputs[h.filename().string()] = hash_file(h);
      all_samples.insert(all_samples.end(), stats.delta_r_samples.begin(),
                         stats.delta_r_samples.end());
    }
    const fs::path overall_hist = out_dir / "histogram.csv";
    write_histogram_csv(overall_hist, all_samples, opts.bins);
    outputs[overall_hist.filename().string()] = hash_file(overall_hist);

    const fs::path report_path = out_dir / "report.json";
    write_text(report_path, report.to_json());
    outputs[report_path.filename().string()] = hash_file(report_path);

    json manifest;
    manifest["command"] = "eval";
    manifest["config"] = {{"checkpoints", opts.checkpoints},
                          {"ref_checkpoint", opts.ref_checkpoint},
                          {"data", opts.data_path},
                          {"objective", opts.objective},
                          {"beta", opts.beta},
                          {"gamma", opts.gamma},
                          {"epsilon", opts.epsilon},
                          {"bins", opts.bins}};
    for (const std::string& c : opts.checkpoints) manifest["input_hashes"][c] = hash_file(c);
    manifest["input_hashes"][opts.data_path] = hash_file(opts.data_path);
    manifest["outputs"] = outputs;
    write_manifest(out_dir, manifest);

    std::cout << "reward accuracy " << fmt_compact(report.overall.reward_accuracy)
              << ", mean delta_r " << fmt_compact(report.overall.mean_delta_r) << " -> "
              << report_path.string() << "\n";
  });
}

int cmd_sweep(const SweepOptions& opts) {
  return guarded([&] {
    if (opts.alphas.empty()) throw ConfigError("--alphas is required");
    if (opts.train_path.empty() || opts.val_path.empty())
      throw ConfigError("--train and --val are required");
    if (opts.out_dir.empty()) throw ConfigError("--out is required");
    const fs::path out_dir = resolve_out_dir(opts.out_dir);
    fs::create_directories(out_dir);

    const TinyLMConfig model_cfg = to_model_config(opts.model);
    TrainConfig tcfg;
    tcfg.objective.kind = ObjectiveKind::CAPO;
    tcfg.objective.beta = opts.beta;
    tcfg.objective.epsilon = opts.epsilon;
    tcfg.epochs = opts.epochs;
    tcfg.batch_size = opts.batch_size;
    tcfg.base_lr = opts.base_lr;
    tcfg.shuffle_seed = opts.shuffle_seed;
    tcfg.validate();

    const auto train_pairs = load_pairs(opts.train_path);
    const auto val_pairs = load_pairs(opts.val_path);
    const auto train_prepared =
        prepare_pairs(train_pairs, default_language_names(), model_cfg.max_context);
    const auto val_prepared =
        prepare_pairs(val_pairs, default_language_names(), model_cfg.max_context);

    json outputs = json::object();
    auto on_row = [&](const SweepRow& row, const TrainResult& tr) {
      const fs::path run_dir = out_dir / ("alpha_" + fmt_compact(row.alpha));
      fs::create_directories(run_dir);
      const fs::path ckpt = run_dir / "checkpoint.bin";
      save_checkpoint(ckpt, tr.params);
      const fs::path hist = run_dir / "history.csv";
      write_history_csv(hist, tr.history);
      const std::string rel = run_dir.filename().string() + "/";
      outputs[rel + "checkpoint.bin"] = hash_file(ckpt);
      outputs[rel + "history.csv"] = hash_file(hist);
    };

    SweepResult result =
        alpha_sweep(opts.alphas, model_cfg, train_prepared, val_prepared, tcfg, on_row);

    std::string csv = "alpha,final_loss,val_reward_accuracy\n";
    for (const SweepRow& row : result.rows)
      csv += fmt17(row.alpha) + "," + fmt17(row.final_loss) + "," +
             fmt17(row.val_reward_accuracy) + "\n";
    const fs::path table = out_dir / "sweep.csv";
    write_text(table, csv);
    outputs["sweep.csv"] = hash_file(table);

    json errors = json::array();
    for (const SweepError& e : result.errors)
      errors.push_back({{"alpha", e.alpha}, {"error", e.message}});

    json manifest;
    manifest["command"] = "sweep";
    manifest["config"] = {{"alphas", opts.alphas},
                          {"train", opts.train_path},
                          {"val", opts.val_path},
                          {"beta", opts.beta},
                          {"epsilon", opts.epsilon},
                          {"epochs", opts.epochs},
                          {"batch_size", opts.batch_size},
                          {"base_lr", opts.base_lr},
                          {"model", model_options_json(opts.model)}};
    manifest["seeds"] = {{"model_seed", opts.model.seed}, {"shuffle_seed", opts.shuffle_seed}};
    manifest["input_hashes"][opts.train_path] = hash_file(opts.train_path);
    manifest["input_hashes"][opts.val_path] = hash_file(opts.val_path);
    manifest["outputs"] = outputs;
    manifest["errors"] = errors;
    write_manifest(out_dir, manifest);

    for (const SweepRow& row : result.rows)
      std::cout << "alpha " << fmt_compact(row.alpha) << ": final loss "
                << fmt_compact(row.final_loss) << ", val accuracy "
                << fmt_compact(row.val_reward_accuracy) << "\n";
    for (const SweepError& e : result.errors)
      std::cerr << "alpha " << fmt_compact(e.alpha) << " failed: " << e.message << "\n";
    if (result.rows.empty()) throw ConfigError("every sweep row failed");
  });
}

}  // namespace prefopt
