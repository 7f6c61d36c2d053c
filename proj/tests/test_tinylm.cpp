#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>

#include "prefopt/checkpoint.hpp"
#include "prefopt/errors.hpp"
#include "prefopt/rng.hpp"
#include "prefopt/tinylm.hpp"

using namespace prefopt;

namespace {

TinyLMConfig small_config(uint64_t seed = 3, int n_layers = 2) {
  TinyLMConfig cfg;
  cfg.vocab_size = 48;
  cfg.d_model = 16;
  cfg.n_layers = n_layers;
  cfg.n_heads = 2;
  cfg.d_ff = 24;
  cfg.max_context = 32;
  cfg.seed = seed;
  return cfg;
}

std::vector<int> random_ids(DetRng& rng, int len, int vocab) {
  std::vector<int> ids(len);
  for (int& id : ids) id = static_cast<int>(rng.below(static_cast<uint64_t>(vocab)));
  return ids;
}

TokenizedPair random_pair(DetRng& rng, const TinyLMConfig& cfg, int ctx_len, int w_len,
                          int l_len) {
  TokenizedPair p;
  p.context_tokens = random_ids(rng, ctx_len, cfg.vocab_size);
  p.resp_w_tokens = random_ids(rng, w_len, cfg.vocab_size);
  p.resp_l_tokens = random_ids(rng, l_len, cfg.vocab_size);
  return p;
}

bool params_equal_bits(const TinyLMParams& a, const TinyLMParams& b) {
  auto la = named_tensors(a);
  auto lb = named_tensors(b);
  if (la.size() != lb.size()) return false;
  for (size_t i = 0; i < la.size(); ++i) {
    if (la[i].tensor->data.size() != lb[i].tensor->data.size()) return false;
    if (std::memcmp(la[i].tensor->data.data(), lb[i].tensor->data.data(),
                    la[i].tensor->data.size() * sizeof(double)) != 0)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("init_params is deterministic in the seed") {
  const TinyLMConfig cfg = small_config(11);
  const TinyLMParams a = init_params(cfg);
  const TinyLMParams b = init_params(cfg);
  CHECK(params_equal_bits(a, b));

  TinyLMConfig other = cfg;
  other.seed = 12;
  const TinyLMParams c = init_params(other);
  CHECK_FALSE(params_equal_bits(a, c));

  // Layer-norm gains start at 1, offsets and biases at 0.
  CHECK(a.lnf_gain.data[0] == 1.0);
  CHECK(a.lnf_offset.data[3] == 0.0);
  CHECK(a.blocks[0].mlp_b1.data[5] == 0.0);
}

TEST_CASE("init_params rejects bad configs") {
  TinyLMConfig cfg = small_config();
  cfg.n_heads = 3;  // 16 % 3 != 0
  CHECK_THROWS_AS(init_params(cfg), ConfigError);
  cfg = small_config();
  cfg.max_context = 1;
  CHECK_THROWS_AS(init_params(cfg), ConfigError);
}

TEST_CASE("fresh model is near uniform: entropy within 1% of ln(vocab)") {
  TinyLMConfig cfg;  // the default 260-token model
  cfg.seed = 5;
  const TinyLMParams params = init_params(cfg);
  DetRng rng(99);
  const auto ctx = random_ids(rng, 8, cfg.vocab_size);
  const auto resp = random_ids(rng, 16, cfg.vocab_size);
  const auto dists = response_token_distributions(params, ctx, resp);
  REQUIRE(dists.size() == 16);
  double entropy_sum = 0.0;
  for (const auto& dist : dists) {
    double h = 0.0;
    for (double p : dist)
      if (p > 0.0) h -= p * std::log(p);
    entropy_sum += h;
  }
  const double mean_entropy = entropy_sum / static_cast<double>(dists.size());
  const double ln_v = std::log(static_cast<double>(cfg.vocab_size));
  CHECK(std::abs(mean_entropy - ln_v) / ln_v < 0.01);
}

TEST_CASE("per-position distributions are normalized within 1e-10") {
  const TinyLMParams params = init_params(small_config(7));
  DetRng rng(1);
  const auto ctx = random_ids(rng, 5, 48);
  const auto resp = random_ids(rng, 9, 48);
  for (const auto& dist : response_token_distributions(params, ctx, resp)) {
    double sum = 0.0;
    for (double p : dist) sum += p;
    CHECK(std::abs(sum - 1.0) < 1e-10);
  }
}

TEST_CASE("sequence log-likelihood basics") {
  const TinyLMConfig cfg = small_config(21);
  const TinyLMParams params = init_params(cfg);
  DetRng rng(2);
  const auto ctx = random_ids(rng, 6, cfg.vocab_size);

  SUBCASE("single-token response equals its log-softmax score") {
    const std::vector<int> resp{17};
    const SequenceScore s = sequence_log_likelihood(params, ctx, resp);
    REQUIRE(s.per_token.size() == 1);
    CHECK(s.logp == s.per_token[0]);
    const auto dists = response_token_distributions(params, ctx, resp);
    CHECK(s.per_token[0] == doctest::Approx(std::log(dists[0][17])).epsilon(1e-12));
  }

  SUBCASE("log-likelihoods are nonpositive") {
    const auto resp = random_ids(rng, 12, cfg.vocab_size);
    const SequenceScore s = sequence_log_likelihood(params, ctx, resp);
    CHECK(s.logp <= 0.0);
    for (double lp : s.per_token) CHECK(lp <= 0.0);
    CHECK(s.logp ==
          doctest::Approx(std::accumulate(s.per_token.begin(), s.per_token.end(), 0.0))
              .epsilon(1e-12));
  }

  SUBCASE("prefix scores are unchanged by future tokens") {
    const auto resp = random_ids(rng, 10, cfg.vocab_size);
    const SequenceScore full = sequence_log_likelihood(params, ctx, resp);
    std::vector<int> prefix(resp.begin(), resp.begin() + 4);
    const SequenceScore head = sequence_log_likelihood(params, ctx, prefix);
    for (int i = 0; i < 4; ++i) CHECK(head.per_token[i] == full.per_token[i]);

    // Rewriting tokens after position t leaves per_token[0..t-1] alone; the
    // score at t itself changes only through its own target id.
    std::vector<int> mutated = resp;
    mutated[7] = (mutated[7] + 1) % cfg.vocab_size;
    mutated[9] = (mutated[9] + 5) % cfg.vocab_size;
    const SequenceScore changed = sequence_log_likelihood(params, ctx, mutated);
    for (int i = 0; i < 7; ++i) CHECK(changed.per_token[i] == full.per_token[i]);
  }

  SUBCASE("identical calls give identical bits") {
    const auto resp = random_ids(rng, 8, cfg.vocab_size);
    const SequenceScore a = sequence_log_likelihood(params, ctx, resp);
    const SequenceScore b = sequence_log_likelihood(params, ctx, resp);
    CHECK(std::memcmp(&a.logp, &b.logp, sizeof(double)) == 0);
  }

  SUBCASE("length and argument errors") {
    const auto resp = random_ids(rng, 27, cfg.vocab_size);  // 6 + 27 > 32
    CHECK_THROWS_AS(sequence_log_likelihood(params, ctx, resp), LengthError);
    try {
      sequence_log_likelihood(params, ctx, resp);
    } catch (const LengthError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("33") != std::string::npos);
      CHECK(msg.find("32") != std::string::npos);
    }
    CHECK_THROWS_AS(sequence_log_likelihood(params, ctx, {}), std::invalid_argument);
    CHECK_THROWS_AS(sequence_log_likelihood(params, {}, std::vector<int>{1}), LengthError);
    CHECK_THROWS_AS(sequence_log_likelihood(params, std::vector<int>{99}, std::vector<int>{1}),
                    std::invalid_argument);
  }
}

TEST_CASE("pair_scores mirrors sequence scoring") {
  const TinyLMConfig cfg = small_config(31);
  const TinyLMParams params = init_params(cfg);
  DetRng rng(3);
  ObjectiveConfig capo;
  capo.kind = ObjectiveKind::CAPO;

  SUBCASE("identical responses tie exactly") {
    TokenizedPair p = random_pair(rng, cfg, 5, 6, 6);
    p.resp_l_tokens = p.resp_w_tokens;
    const PairScores s = pair_scores(params, nullptr, p, capo);
    CHECK(s.logp_w == s.logp_l);
    CHECK(s.len_w == s.len_l);
  }

  SUBCASE("reference equal to the policy pins dpo at ln 2") {
    ObjectiveConfig dpo;
    dpo.kind = ObjectiveKind::DPO;
    const TokenizedPair p = random_pair(rng, cfg, 5, 6, 7);
    const PairScores s = pair_scores(params, &params, p, dpo);
    CHECK(*s.ref_logp_w == s.logp_w);
    CHECK(*s.ref_logp_l == s.logp_l);
    const LossResult r = dpo_loss(s, dpo);
    CHECK(r.z == 0.0);
    CHECK(r.loss == doctest::Approx(0.69314718055994531).epsilon(1e-14));
  }

  SUBCASE("swapping responses negates the reference-free reward difference") {
    const TokenizedPair p = random_pair(rng, cfg, 5, 6, 8);
    TokenizedPair swapped = p;
    std::swap(swapped.resp_w_tokens, swapped.resp_l_tokens);
    const double dr = reward_difference(pair_scores(params, nullptr, p, capo), capo);
    const double dr_swapped =
        reward_difference(pair_scores(params, nullptr, swapped, capo), capo);
    CHECK(dr_swapped == -dr);
  }

  SUBCASE("missing reference is a configuration error") {
    ObjectiveConfig dpo;
    dpo.kind = ObjectiveKind::DPO;
    const TokenizedPair p = random_pair(rng, cfg, 5, 6, 7);
    CHECK_THROWS_AS(pair_scores(params, nullptr, p, dpo), ConfigError);
  }
}

TEST_CASE("model gradients match central finite differences") {
  const TinyLMConfig cfg = small_config(51, 2);
  const TinyLMParams params = init_params(cfg);
  TinyLMConfig ref_cfg = cfg;
  ref_cfg.seed = 77;
  const TinyLMParams ref = init_params(ref_cfg);

  DetRng rng(4);
  std::vector<TokenizedPair> batch;
  batch.push_back(random_pair(rng, cfg, 5, 4, 6));
  batch.push_back(random_pair(rng, cfg, 6, 5, 3));
  batch.push_back(random_pair(rng, cfg, 4, 6, 5));

  auto run_check = [&](const ObjectiveConfig& obj, const TinyLMParams* ref_ptr, int probes,
                       uint64_t probe_seed) {
    const BatchBackward bb = backward(params, ref_ptr, batch, obj);
    auto tensors = named_tensors(const_cast<TinyLMParams&>(params));
    auto grad_tensors = named_tensors(bb.grads);
    DetRng probe_rng(probe_seed);
    const double h = 1e-4;
    int checked = 0;
    while (checked < probes) {
      const size_t ti = probe_rng.below(tensors.size());
      const size_t k = probe_rng.below(tensors[ti].tensor->data.size());
      double& slot = tensors[ti].tensor->data[k];
      const double saved = slot;
      slot = saved + h;
      const double up = backward(params, ref_ptr, batch, obj).mean_loss;
      slot = saved - h;
      const double down = backward(params, ref_ptr, batch, obj).mean_loss;
      slot = saved;
      const double fd = (up - down) / (2 * h);
      const double closed = grad_tensors[ti].tensor->data[k];
      const double diff = std::abs(closed - fd);
      const bool ok = diff <= 1e-8 || diff <= 1e-4 * std::abs(closed);
      if (!ok) {
        CAPTURE(tensors[ti].name);
        CAPTURE(k);
        CAPTURE(closed);
        CAPTURE(fd);
      }
      REQUIRE(ok);
      ++checked;
    }
  };

  ObjectiveConfig capo;
  capo.kind = ObjectiveKind::CAPO;
  capo.beta = 0.1;
  capo.alpha = 2.0;
  run_check(capo, nullptr, 60, 1001);

  ObjectiveConfig dpo;
  dpo.kind = ObjectiveKind::DPO;
  dpo.beta = 0.1;
  run_check(dpo, &ref, 40, 1002);

  ObjectiveConfig simpo;
  simpo.kind = ObjectiveKind::SimPO;
  simpo.beta = 2.0;
  simpo.gamma = 0.3;
  run_check(simpo, nullptr, 30, 1003);

  ObjectiveConfig dponll;
  dponll.kind = ObjectiveKind::DPONLL;
  dponll.beta = 0.1;
  dponll.lambda_nll = 0.7;
  run_check(dponll, &ref, 30, 1004);
}

TEST_CASE("backward batch semantics") {
  const TinyLMConfig cfg = small_config(61);
  const TinyLMParams params = init_params(cfg);
  DetRng rng(5);
  const TokenizedPair p = random_pair(rng, cfg, 5, 4, 6);
  ObjectiveConfig capo;
  capo.kind = ObjectiveKind::CAPO;

  SUBCASE("two identical pairs equal the single-pair gradients") {
    const std::vector<TokenizedPair> one{p};
    const std::vector<TokenizedPair> two{p, p};
    const BatchBackward a = backward(params, nullptr, one, capo);
    const BatchBackward b = backward(params, nullptr, two, capo);
    CHECK(b.mean_loss == doctest::Approx(a.mean_loss).epsilon(1e-15));
    auto ga = named_tensors(a.grads);
    auto gb = named_tensors(b.grads);
    for (size_t i = 0; i < ga.size(); ++i)
      for (size_t k = 0; k < ga[i].tensor->data.size(); ++k)
        CHECK(gb[i].tensor->data[k] ==
              doctest::Approx(ga[i].tensor->data[k]).epsilon(1e-12));
  }

  SUBCASE("reference parameters receive no gradient and stay untouched") {
    ObjectiveConfig dpo;
    dpo.kind = ObjectiveKind::DPO;
    const TinyLMParams ref_before = params;
    const std::vector<TokenizedPair> one{p};
    const BatchBackward bb = backward(params, &params, one, dpo);
    CHECK(params_equal_bits(params, ref_before));
    CHECK(bb.grads.config == params.config);
  }

  SUBCASE("capo alpha 0 dispatch is exactly the reference-free ratio loss") {
    ObjectiveConfig a0 = capo;
    a0.alpha = 0.0;
    a0.gamma = 123.0;     // unused by capo
    a0.lambda_nll = 9.0;  // unused by capo
    ObjectiveConfig a0_other;
    a0_other.kind = ObjectiveKind::CAPO;
    a0_other.alpha = 0.0;
    const std::vector<TokenizedPair> one{p};
    const BatchBackward x = backward(params, nullptr, one, a0);
    const BatchBackward y = backward(params, nullptr, one, a0_other);
    CHECK(std::memcmp(&x.mean_loss, &y.mean_loss, sizeof(double)) == 0);
    auto gx = named_tensors(x.grads);
    auto gy = named_tensors(y.grads);
    for (size_t i = 0; i < gx.size(); ++i)
      CHECK(std::memcmp(gx[i].tensor->data.data(), gy[i].tensor->data.data(),
                        gx[i].tensor->data.size() * sizeof(double)) == 0);
    // And the per-pair numbers match the softplus form directly.
    const PairScores s = pair_scores(params, nullptr, p, a0);
    CHECK(x.per_pair[0].loss == softplus(-a0.beta * (s.logp_w - s.logp_l)));
  }

  SUBCASE("empty batch is rejected") {
    const std::vector<TokenizedPair> none;
    CHECK_THROWS_AS(backward(params, nullptr, none, capo), std::invalid_argument);
  }

  SUBCASE("length errors carry the pair id") {
    TokenizedPair big = random_pair(rng, cfg, 10, 30, 4);
    big.id = "oversized-7";
    const std::vector<TokenizedPair> one{big};
    try {
      backward(params, nullptr, one, capo);
      FAIL("expected LengthError");
    } catch (const LengthError& e) {
      CHECK(std::string(e.what()).find("oversized-7") != std::string::npos);
    }
  }
}

TEST_CASE("checkpoint round trip preserves every bit") {
  const TinyLMConfig cfg = small_config(71);
  const TinyLMParams params = init_params(cfg);
  const auto path = std::filesystem::temp_directory_path() / "prefopt_ckpt_test.bin";
  save_checkpoint(path, params);
  const TinyLMParams loaded = load_checkpoint(path);
  CHECK(loaded.config == cfg);
  CHECK(params_equal_bits(params, loaded));
  std::filesystem::remove(path);

  CHECK_THROWS_AS(load_checkpoint(path), ParseError);
}
